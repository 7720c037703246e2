//! Stochastic renewable availability and generation-cost formulas.
//!
//! Wind speed follows a Weibull distribution pushed through a piecewise-linear
//! power curve; solar irradiance follows a lognormal distribution scaled by a
//! diurnal half-sine envelope (zero outside hours 6..=18). Both induce a mixed
//! discrete-continuous density in the power domain: point masses at zero and
//! at the hour's cap, a smooth density in between. Reserve and penalty
//! integrals are evaluated with Gauss-Legendre quadrature on the continuous
//! segment plus exact point-mass terms.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use thiserror::Error;

use crate::case::{CostParams, GeneratorKind, NetworkCase};

#[derive(Debug, Clone, Copy)]
pub struct WindParams {
    pub weibull_k: f64,
    /// Weibull scale in m/s.
    pub weibull_c: f64,
    pub v_cut_in: f64,
    pub v_rated: f64,
    pub v_cut_out: f64,
}

impl Default for WindParams {
    fn default() -> Self {
        Self {
            weibull_k: 2.0,
            weibull_c: 9.0,
            v_cut_in: 3.0,
            v_rated: 12.0,
            v_cut_out: 25.0,
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct SolarParams {
    /// Lognormal location of irradiance (W/m^2 scale).
    pub ln_mu: f64,
    pub ln_sigma: f64,
    /// Irradiance at which rated power is reached.
    pub g_std: f64,
}

impl Default for SolarParams {
    fn default() -> Self {
        Self {
            ln_mu: 6.0,
            ln_sigma: 0.6,
            g_std: 1000.0,
        }
    }
}

/// Continuous part of the availability density in the power domain.
#[derive(Debug, Clone, Copy)]
pub enum DensityKind {
    /// Weibull wind speed through the linear ramp of the power curve.
    Wind { params: WindParams, rated: f64 },
    /// Lognormal irradiance scaled linearly up to `g_std`.
    Solar {
        params: SolarParams,
        rated: f64,
        envelope: f64,
    },
    /// Uniform test density on [lo, hi].
    Uniform { lo: f64, hi: f64 },
    /// Weibull density truncated at `cap`, tail mass moved to the cap.
    TruncatedWeibull { k: f64, scale: f64 },
    /// Everything at a single point (e.g. night solar).
    Degenerate,
}

/// Mixed discrete-continuous availability density for one generator-hour.
#[derive(Debug, Clone, Copy)]
pub struct PowerDensity {
    pub mass_at_zero: f64,
    pub mass_at_cap: f64,
    /// Largest attainable power this hour.
    pub cap: f64,
    pub kind: DensityKind,
}

impl PowerDensity {
    /// Density of the continuous part at power `p` in (0, cap).
    pub fn pdf(&self, p: f64) -> f64 {
        match self.kind {
            DensityKind::Wind { params, rated } => {
                if p <= 0.0 || p >= rated {
                    return 0.0;
                }
                let span = params.v_rated - params.v_cut_in;
                let v = params.v_cut_in + p / rated * span;
                weibull_pdf(v, params.weibull_k, params.weibull_c) * span / rated
            }
            DensityKind::Solar {
                params,
                rated,
                envelope,
            } => {
                let cap = rated * envelope;
                if p <= 0.0 || p >= cap || envelope <= 0.0 {
                    return 0.0;
                }
                let g = params.g_std * p / cap;
                lognormal_pdf(g, params.ln_mu, params.ln_sigma) * params.g_std / cap
            }
            DensityKind::Uniform { lo, hi } => {
                if p >= lo && p <= hi && hi > lo {
                    1.0 / (hi - lo)
                } else {
                    0.0
                }
            }
            DensityKind::TruncatedWeibull { k, scale } => {
                if p <= 0.0 || p >= self.cap {
                    0.0
                } else {
                    weibull_pdf(p, k, scale)
                }
            }
            DensityKind::Degenerate => 0.0,
        }
    }

    pub fn uniform(lo: f64, hi: f64) -> Self {
        Self {
            mass_at_zero: 0.0,
            mass_at_cap: 0.0,
            cap: hi,
            kind: DensityKind::Uniform { lo, hi },
        }
    }

    pub fn truncated_weibull(k: f64, scale: f64, cap: f64) -> Self {
        Self {
            mass_at_zero: 0.0,
            mass_at_cap: weibull_survival(cap, k, scale),
            cap,
            kind: DensityKind::TruncatedWeibull { k, scale },
        }
    }
}

fn weibull_pdf(v: f64, k: f64, c: f64) -> f64 {
    if v <= 0.0 {
        return 0.0;
    }
    let z = v / c;
    (k / c) * z.powf(k - 1.0) * (-z.powf(k)).exp()
}

fn weibull_cdf(v: f64, k: f64, c: f64) -> f64 {
    if v <= 0.0 {
        0.0
    } else {
        1.0 - (-(v / c).powf(k)).exp()
    }
}

fn weibull_survival(v: f64, k: f64, c: f64) -> f64 {
    1.0 - weibull_cdf(v, k, c)
}

fn lognormal_pdf(g: f64, mu: f64, sigma: f64) -> f64 {
    if g <= 0.0 {
        return 0.0;
    }
    let z = (g.ln() - mu) / sigma;
    (-0.5 * z * z).exp() / (g * sigma * (2.0 * std::f64::consts::PI).sqrt())
}

fn lognormal_survival(g: f64, mu: f64, sigma: f64) -> f64 {
    // Q(z) via the complementary error function of z/sqrt(2).
    let z = (g.ln() - mu) / sigma;
    0.5 * erfc(z / std::f64::consts::SQRT_2)
}

// Complementary error function, continued-fraction/series hybrid accurate to
// ~1e-15 over the range used here.
fn erfc(x: f64) -> f64 {
    if x < 0.0 {
        return 2.0 - erfc(-x);
    }
    if x < 2.0 {
        1.0 - erf_series(x)
    } else {
        // Asymptotic continued fraction (Lentz).
        let mut f = x;
        let mut c = f64::MAX;
        let mut d = 0.0;
        for k in 1..200 {
            let a = 0.5 * k as f64;
            d = x + a * d;
            if d.abs() < 1e-300 {
                d = 1e-300;
            }
            d = 1.0 / d;
            c = x + a / c;
            if c.abs() < 1e-300 {
                c = 1e-300;
            }
            let delta = c * d;
            f *= delta;
            if (delta - 1.0).abs() < 1e-17 {
                break;
            }
        }
        (-x * x).exp() / (f * std::f64::consts::PI.sqrt())
    }
}

fn erf_series(x: f64) -> f64 {
    // Maclaurin series, converges fast for |x| < 2.
    let mut term = x;
    let mut sum = x;
    let x2 = x * x;
    for n in 1..200 {
        let nf = n as f64;
        term *= -x2 / nf;
        let add = term / (2.0 * nf + 1.0);
        sum += add;
        if add.abs() < 1e-18 * sum.abs() {
            break;
        }
    }
    sum * 2.0 / std::f64::consts::PI.sqrt()
}

/// Availability of one renewable generator for the current hour.
#[derive(Debug, Clone, Copy)]
pub struct GenAvailability {
    pub p_bar: f64,
    pub p_min: f64,
    pub density: PowerDensity,
}

/// Per-fleet availability sample: `gens[i]` is `None` for thermal units.
#[derive(Debug, Clone)]
pub struct AvailabilitySample {
    pub gens: Vec<Option<GenAvailability>>,
    pub hour: u32,
}

impl AvailabilitySample {
    pub fn empty(n: usize) -> Self {
        Self {
            gens: vec![None; n],
            hour: 0,
        }
    }
}

/// Wind power curve: zero outside [cut-in, cut-out], linear ramp up to rated.
pub fn wind_power(speed: f64, params: &WindParams, rated: f64) -> f64 {
    if speed < params.v_cut_in || speed > params.v_cut_out {
        0.0
    } else if speed >= params.v_rated {
        rated
    } else {
        rated * (speed - params.v_cut_in) / (params.v_rated - params.v_cut_in)
    }
}

/// Diurnal envelope: half-sine over hours 6..=18, zero at night.
pub fn solar_envelope(hour_of_day: u32) -> f64 {
    let h = f64::from(hour_of_day % 24);
    if !(6.0..=18.0).contains(&h) {
        return 0.0;
    }
    ((h - 6.0) / 12.0 * std::f64::consts::PI).sin()
}

/// Draw a Weibull-distributed wind speed by inverse CDF.
pub fn sample_wind_speed(params: &WindParams, rng: &mut impl Rng) -> f64 {
    let u: f64 = rng.random::<f64>();
    params.weibull_c * (-(1.0 - u).ln()).powf(1.0 / params.weibull_k)
}

/// Draw a lognormal irradiance.
pub fn sample_irradiance(params: &SolarParams, rng: &mut impl Rng) -> f64 {
    let normal = Normal::new(0.0, 1.0).expect("valid std normal");
    let z: f64 = normal.sample(rng);
    (params.ln_mu + params.ln_sigma * z).exp()
}

/// Sample the fleet's availability for one hour. Deterministic per RNG state.
pub fn sample_availability(
    case: &NetworkCase,
    wind: &WindParams,
    solar: &SolarParams,
    hour_of_day: u32,
    rng: &mut impl Rng,
) -> AvailabilitySample {
    let gens = case
        .generators
        .iter()
        .map(|g| match g.kind {
            GeneratorKind::Thermal => None,
            GeneratorKind::Wind => {
                let speed = sample_wind_speed(wind, rng);
                let p_bar = wind_power(speed, wind, g.rated_p);
                let density = PowerDensity {
                    mass_at_zero: weibull_cdf(wind.v_cut_in, wind.weibull_k, wind.weibull_c)
                        + weibull_survival(wind.v_cut_out, wind.weibull_k, wind.weibull_c),
                    mass_at_cap: weibull_cdf(wind.v_cut_out, wind.weibull_k, wind.weibull_c)
                        - weibull_cdf(wind.v_rated, wind.weibull_k, wind.weibull_c),
                    cap: g.rated_p,
                    kind: DensityKind::Wind {
                        params: *wind,
                        rated: g.rated_p,
                    },
                };
                Some(GenAvailability {
                    p_bar,
                    p_min: 0.0,
                    density,
                })
            }
            GeneratorKind::Solar => {
                let envelope = solar_envelope(hour_of_day);
                // The draw is consumed even at night so the stream position
                // does not depend on the hour.
                let irradiance = sample_irradiance(solar, rng);
                let cap = g.rated_p * envelope;
                let p_bar = if envelope > 0.0 {
                    cap * (irradiance / solar.g_std).min(1.0)
                } else {
                    0.0
                };
                let density = if envelope > 0.0 {
                    PowerDensity {
                        mass_at_zero: 0.0,
                        mass_at_cap: lognormal_survival(solar.g_std, solar.ln_mu, solar.ln_sigma),
                        cap,
                        kind: DensityKind::Solar {
                            params: *solar,
                            rated: g.rated_p,
                            envelope,
                        },
                    }
                } else {
                    PowerDensity {
                        mass_at_zero: 1.0,
                        mass_at_cap: 0.0,
                        cap: 0.0,
                        kind: DensityKind::Degenerate,
                    }
                };
                Some(GenAvailability {
                    p_bar,
                    p_min: 0.0,
                    density,
                })
            }
        })
        .collect();
    AvailabilitySample {
        gens,
        hour: hour_of_day % 24,
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum CostError {
    #[error("scheduled power {scheduled} outside [{lo}, {hi}]")]
    ScheduleOutOfRange { scheduled: f64, lo: f64, hi: f64 },
}

const QUADRATURE_NODES: usize = 64;

/// Gauss-Legendre nodes/weights on [-1, 1], computed by Newton iteration on
/// the Legendre recurrence.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let m = n.div_ceil(2);
    for i in 0..m {
        // Chebyshev-based initial guess.
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, x);
            for k in 2..=n {
                let kf = k as f64;
                let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
                p0 = p1;
                p1 = p2;
            }
            dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
            let dx = p1 / dp;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    (nodes, weights)
}

fn integrate(dens: &PowerDensity, lo: f64, hi: f64, f: impl Fn(f64) -> f64, nodes: usize) -> f64 {
    if hi <= lo {
        return 0.0;
    }
    let (xs, ws) = gauss_legendre(nodes);
    let half = 0.5 * (hi - lo);
    let mid = 0.5 * (hi + lo);
    let mut acc = 0.0;
    for (x, w) in xs.iter().zip(&ws) {
        let p = mid + half * x;
        acc += w * f(p) * dens.pdf(p);
    }
    acc * half
}

/// Reserve and penalty costs of scheduling `scheduled_p` against the sampled
/// availability, with the given quadrature resolution.
pub fn mismatch_costs_with_nodes(
    cost: &CostParams,
    scheduled_p: f64,
    avail: &GenAvailability,
    nodes: usize,
) -> Result<(f64, f64), CostError> {
    let slop = 1e-12;
    if scheduled_p < avail.p_min - slop || scheduled_p > avail.p_bar + slop {
        return Err(CostError::ScheduleOutOfRange {
            scheduled: scheduled_p,
            lo: avail.p_min,
            hi: avail.p_bar,
        });
    }
    let dens = &avail.density;

    // Reserve: expected shortfall below the schedule. The zero point mass
    // sits at the lower integration limit and is included exactly.
    let mut reserve = integrate(dens, avail.p_min, scheduled_p, |p| scheduled_p - p, nodes);
    if avail.p_min <= 0.0 {
        reserve += dens.mass_at_zero * scheduled_p;
    }
    reserve *= cost.reserve_coeff;

    // Penalty: expected surplus above the schedule up to today's maximum.
    let mut penalty = integrate(dens, scheduled_p, avail.p_bar, |p| p - scheduled_p, nodes);
    if avail.p_bar >= dens.cap - slop {
        penalty += dens.mass_at_cap * (dens.cap - scheduled_p).max(0.0);
    }
    penalty *= cost.penalty_coeff;

    Ok((reserve, penalty))
}

/// Reserve and penalty costs at the default 64-node quadrature.
pub fn mismatch_costs(
    cost: &CostParams,
    scheduled_p: f64,
    avail: &GenAvailability,
) -> Result<(f64, f64), CostError> {
    mismatch_costs_with_nodes(cost, scheduled_p, avail, QUADRATURE_NODES)
}

/// Quadratic thermal generation cost a p^2 + b p + c.
pub fn thermal_cost(cost: &CostParams, p: f64) -> f64 {
    cost.a * p * p + cost.b * p + cost.c
}

/// Per-generator cost decomposition for one step.
#[derive(Debug, Clone, Default)]
pub struct GenerationCosts {
    /// Thermal cost per thermal unit, fleet order.
    pub thermal: Vec<f64>,
    /// (reserve, penalty) per wind unit.
    pub wind: Vec<(f64, f64)>,
    /// (reserve, penalty) per solar unit.
    pub solar: Vec<(f64, f64)>,
}

impl GenerationCosts {
    pub fn total(&self) -> f64 {
        self.thermal.iter().sum::<f64>()
            + self.wind.iter().map(|(r, p)| r + p).sum::<f64>()
            + self.solar.iter().map(|(r, p)| r + p).sum::<f64>()
    }
}

/// Evaluate every generator's cost for the effective outputs of one step.
pub fn generation_costs(
    case: &NetworkCase,
    effective_p: &[f64],
    sample: &AvailabilitySample,
) -> Result<GenerationCosts, CostError> {
    let mut costs = GenerationCosts::default();
    for (gi, g) in case.generators.iter().enumerate() {
        match g.kind {
            GeneratorKind::Thermal => costs.thermal.push(thermal_cost(&g.cost, effective_p[gi])),
            GeneratorKind::Wind | GeneratorKind::Solar => {
                let avail = sample.gens[gi]
                    .as_ref()
                    .expect("renewable generator must carry availability");
                let pair = if avail.p_bar <= 0.0 {
                    (0.0, 0.0)
                } else {
                    mismatch_costs(&g.cost, effective_p[gi].min(avail.p_bar), avail)?
                };
                match g.kind {
                    GeneratorKind::Wind => costs.wind.push(pair),
                    GeneratorKind::Solar => costs.solar.push(pair),
                    GeneratorKind::Thermal => unreachable!(),
                }
            }
        }
    }
    Ok(costs)
}

/// Overall generation cost of the step (thermal plus renewable mismatch).
pub fn total_generation_cost(
    case: &NetworkCase,
    effective_p: &[f64],
    sample: &AvailabilitySample,
) -> Result<f64, CostError> {
    Ok(generation_costs(case, effective_p, sample)?.total())
}
