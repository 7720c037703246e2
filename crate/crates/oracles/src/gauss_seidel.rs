//! Gauss-Seidel AC power flow for networks where every non-slack bus is a
//! PQ node (no generator voltage setpoints).

#[derive(Debug, Clone, Copy, PartialEq)]
struct C64 {
    re: f64,
    im: f64,
}

impl C64 {
    fn new(re: f64, im: f64) -> Self {
        Self { re, im }
    }
    fn zero() -> Self {
        Self::new(0.0, 0.0)
    }
    fn add(self, o: Self) -> Self {
        Self::new(self.re + o.re, self.im + o.im)
    }
    fn sub(self, o: Self) -> Self {
        Self::new(self.re - o.re, self.im - o.im)
    }
    fn mul(self, o: Self) -> Self {
        Self::new(
            self.re * o.re - self.im * o.im,
            self.re * o.im + self.im * o.re,
        )
    }
    fn div(self, o: Self) -> Self {
        let d = o.re * o.re + o.im * o.im;
        Self::new(
            (self.re * o.re + self.im * o.im) / d,
            (self.im * o.re - self.re * o.im) / d,
        )
    }
    fn conj(self) -> Self {
        Self::new(self.re, -self.im)
    }
    fn abs(self) -> f64 {
        self.re.hypot(self.im)
    }
}

/// Minimal network description for the oracle: series branches only.
#[derive(Debug, Clone)]
pub struct GsNetwork {
    pub n_buses: usize,
    pub slack_bus: usize,
    pub slack_voltage: f64,
    /// (from, to, r_pu, x_pu)
    pub branches: Vec<(usize, usize, f64, f64)>,
    /// Net injected power per bus (generation minus load), per-unit.
    pub p_injection: Vec<f64>,
    pub q_injection: Vec<f64>,
}

/// Iterate Gauss-Seidel until the largest apparent-power mismatch drops
/// below `tolerance`. Returns voltage magnitudes, or `None` if the limit of
/// `max_iterations` is reached first.
pub fn gauss_seidel_voltages(
    net: &GsNetwork,
    tolerance: f64,
    max_iterations: usize,
) -> Option<Vec<f64>> {
    let n = net.n_buses;
    let mut y = vec![vec![C64::zero(); n]; n];
    for &(f, t, r, x) in &net.branches {
        let denom = r * r + x * x;
        let ys = C64::new(r / denom, -x / denom);
        y[f][f] = y[f][f].add(ys);
        y[t][t] = y[t][t].add(ys);
        y[f][t] = y[f][t].sub(ys);
        y[t][f] = y[t][f].sub(ys);
    }

    let mut v = vec![C64::new(1.0, 0.0); n];
    v[net.slack_bus] = C64::new(net.slack_voltage, 0.0);
    let s: Vec<C64> = (0..n)
        .map(|i| C64::new(net.p_injection[i], net.q_injection[i]))
        .collect();

    for _ in 0..max_iterations {
        for i in 0..n {
            if i == net.slack_bus {
                continue;
            }
            let mut sigma = C64::zero();
            for (j, vj) in v.iter().enumerate() {
                if j != i {
                    sigma = sigma.add(y[i][j].mul(*vj));
                }
            }
            let current = s[i].conj().div(v[i].conj());
            v[i] = current.sub(sigma).div(y[i][i]);
        }

        // Mismatch check: S_calc = V (Y V)*
        let mut worst = 0.0_f64;
        for i in 0..n {
            if i == net.slack_bus {
                continue;
            }
            let mut yv = C64::zero();
            for (j, vj) in v.iter().enumerate() {
                yv = yv.add(y[i][j].mul(*vj));
            }
            let s_calc = v[i].mul(yv.conj());
            worst = worst.max(s_calc.sub(s[i]).abs());
        }
        if worst < tolerance {
            return Some(v.iter().map(|c| c.abs()).collect());
        }
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flat_profile_without_load() {
        let net = GsNetwork {
            n_buses: 3,
            slack_bus: 0,
            slack_voltage: 1.0,
            branches: vec![(0, 1, 0.02, 0.04), (1, 2, 0.02, 0.04)],
            p_injection: vec![0.0; 3],
            q_injection: vec![0.0; 3],
        };
        let v = gauss_seidel_voltages(&net, 1e-12, 1000).unwrap();
        for vi in v {
            assert!((vi - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn two_bus_closed_form() {
        let (p, q, r, x) = (0.1, 0.05, 0.02, 0.04);
        let net = GsNetwork {
            n_buses: 2,
            slack_bus: 0,
            slack_voltage: 1.0,
            branches: vec![(0, 1, r, x)],
            p_injection: vec![0.0, -p],
            q_injection: vec![0.0, -q],
        };
        let v = gauss_seidel_voltages(&net, 1e-12, 10_000).unwrap();
        let b = 2.0 * (p * r + q * x) - 1.0;
        let c = (p * p + q * q) * (r * r + x * x);
        let expected = ((-b + (b * b - 4.0 * c).sqrt()) / 2.0).sqrt();
        assert!((v[1] - expected).abs() < 1e-9, "{} vs {expected}", v[1]);
    }
}
