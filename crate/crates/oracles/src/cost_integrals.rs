//! Closed-form reserve/penalty cost integrals on analytic test densities.
//!
//! Reserve = c_r * E[(sched - P) ; P in [0, sched]]
//! Penalty = c_p * E[(P - sched) ; P in [sched, p_bar]], point mass at the
//! cap counted when p_bar reaches it.

/// Uniform density on [lo, hi]; no point masses.
pub fn uniform_costs(
    lo: f64,
    hi: f64,
    sched: f64,
    p_bar: f64,
    c_r: f64,
    c_p: f64,
) -> (f64, f64) {
    let w = hi - lo;
    let upper_r = sched.clamp(lo, hi);
    let reserve = if upper_r > lo {
        ((sched - lo).powi(2) - (sched - upper_r).powi(2)) / (2.0 * w)
    } else {
        0.0
    };
    let lower_p = sched.clamp(lo, hi);
    let upper_p = p_bar.clamp(lo, hi);
    let penalty = if upper_p > lower_p {
        ((upper_p - sched).powi(2) - (lower_p - sched).powi(2)) / (2.0 * w)
    } else {
        0.0
    };
    (c_r * reserve, c_p * penalty)
}

/// Exponential density (Weibull with shape 1, scale `lambda`) truncated at
/// `cap`, the tail mass e^(-cap/lambda) concentrated at the cap.
pub fn truncated_exponential_costs(
    lambda: f64,
    cap: f64,
    sched: f64,
    p_bar: f64,
    c_r: f64,
    c_p: f64,
) -> (f64, f64) {
    // int_0^s (s - p) f(p) dp = s - lambda (1 - e^(-s/lambda))
    let s = sched.min(cap);
    let reserve = s - lambda * (1.0 - (-s / lambda).exp());

    // int_s^u (p - s) f(p) dp = lambda e^(-s/lambda) - (u - s + lambda) e^(-u/lambda)
    let u = p_bar.min(cap);
    let mut penalty = if u > s {
        lambda * (-s / lambda).exp() - (u - s + lambda) * (-u / lambda).exp()
    } else {
        0.0
    };
    if p_bar >= cap {
        penalty += (-cap / lambda).exp() * (cap - sched).max(0.0);
    }
    (c_r * reserve, c_p * penalty)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_full_schedule() {
        // c_r int_0^1 (1 - p) dp = 1.5 * 0.5
        let (r, p) = uniform_costs(0.0, 1.0, 1.0, 1.0, 1.5, 3.0);
        assert!((r - 0.75).abs() < 1e-15);
        assert_eq!(p, 0.0);
    }

    #[test]
    fn exponential_zero_schedule_is_mean_up_to_cap() {
        // Penalty at sched = 0, p_bar = cap equals c_p * E[P].
        let lambda = 0.4;
        let cap = 2.0;
        let (r, p) = truncated_exponential_costs(lambda, cap, 0.0, cap, 1.0, 1.0);
        assert_eq!(r, 0.0);
        // E[min(X, cap)] = lambda (1 - e^(-cap/lambda))
        let expected = lambda * (1.0 - (-cap / lambda).exp());
        assert!((p - expected).abs() < 1e-14, "{p} vs {expected}");
    }
}
