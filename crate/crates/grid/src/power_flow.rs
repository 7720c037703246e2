//! Newton-Raphson AC power flow in polar form, plus loss computation and
//! inequality-constraint auditing.
//!
//! Generator buses are PV nodes (fixed p, |v|) in power/voltage control mode
//! and PQ nodes in power/reactive mode. PV buses whose reactive output leaves
//! its box are switched to PQ at the clamped limit, re-checked every
//! iteration. Renewable active power is capped at the sampled availability.

use thiserror::Error;

use crate::case::{GeneratorKind, NetworkCase};
use crate::dispatch::{ControlMode, DispatchAction};
use crate::linalg::{lu_solve, Mat};
use crate::stochastic::AvailabilitySample;

#[derive(Debug, Clone, Copy)]
pub struct PowerFlowOptions {
    /// Infinity-norm mismatch tolerance in per-unit.
    pub tolerance: f64,
    pub max_iterations: usize,
    /// Slack bus voltage magnitude.
    pub slack_voltage: f64,
}

impl Default for PowerFlowOptions {
    fn default() -> Self {
        Self {
            tolerance: 1e-8,
            max_iterations: 50,
            slack_voltage: 1.0,
        }
    }
}

/// Solved operating point. `converged == false` marks an unsatisfiable power
/// balance; callers translate that into penalty/termination.
#[derive(Debug, Clone)]
pub struct PowerFlowSolution {
    pub v_mag: Vec<f64>,
    pub v_ang: Vec<f64>,
    /// Sending-end (from-side) branch flows.
    pub branch_p: Vec<f64>,
    pub branch_q: Vec<f64>,
    pub loss_p: f64,
    pub loss_q: f64,
    /// Grid import at the slack bus (p_G, q_G).
    pub slack_p: f64,
    pub slack_q: f64,
    /// Reactive output per generator (fleet order of the case).
    pub gen_q: Vec<f64>,
    pub converged: bool,
    pub iterations: usize,
}

#[derive(Debug, Error)]
pub enum PowerFlowError {
    #[error("solution did not converge")]
    NotConverged,
    #[error("dispatch has {got} setpoints for {want} generators")]
    DimensionMismatch { got: usize, want: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConstraintKind {
    LoadVoltage,
    GenVoltage,
    GenActivePower,
    GenReactivePower,
    BranchFlow,
    Balance,
}

/// One violated inequality with its per-unit excess.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConstraintViolation {
    pub kind: ConstraintKind,
    pub entity: usize,
    pub magnitude: f64,
}

#[derive(Debug, Clone, Default)]
pub struct ConstraintReport {
    pub violations: Vec<ConstraintViolation>,
}

impl ConstraintReport {
    pub fn is_empty(&self) -> bool {
        self.violations.is_empty()
    }

    /// Number of violations that map to reward penalties: load voltage,
    /// generator reactive power, branch flow, and power balance. Generator
    /// voltage and active power are excluded because the action projection
    /// keeps them inside their boxes.
    pub fn penalty_count(&self) -> usize {
        self.violations
            .iter()
            .filter(|v| {
                matches!(
                    v.kind,
                    ConstraintKind::LoadVoltage
                        | ConstraintKind::GenReactivePower
                        | ConstraintKind::BranchFlow
                        | ConstraintKind::Balance
                )
            })
            .count()
    }
}

/// Effective active power injected per generator: offline units inject zero,
/// renewables are capped at their sampled availability.
pub fn effective_outputs(
    case: &NetworkCase,
    dispatch: &DispatchAction,
    sample: &AvailabilitySample,
) -> Vec<f64> {
    case.generators
        .iter()
        .enumerate()
        .map(|(i, g)| {
            let sp = &dispatch.setpoints[i];
            if !sp.online {
                return 0.0;
            }
            match g.kind {
                GeneratorKind::Thermal => sp.p,
                GeneratorKind::Wind | GeneratorKind::Solar => {
                    let p_bar = sample.gens[i]
                        .as_ref()
                        .map(|a| a.p_bar)
                        .unwrap_or(g.rated_p);
                    sp.p.min(p_bar).max(0.0)
                }
            }
        })
        .collect()
}

struct YBus {
    g: Mat,
    b: Mat,
}

fn build_ybus(case: &NetworkCase) -> YBus {
    let n = case.n_buses();
    let mut g = Mat::zeros(n, n);
    let mut b = Mat::zeros(n, n);
    for br in &case.branches {
        let denom = br.r * br.r + br.x * br.x;
        let gs = br.r / denom;
        let bs = -br.x / denom;
        g.add_to(br.from, br.from, gs);
        g.add_to(br.to, br.to, gs);
        g.add_to(br.from, br.to, -gs);
        g.add_to(br.to, br.from, -gs);
        b.add_to(br.from, br.from, bs);
        b.add_to(br.to, br.to, bs);
        b.add_to(br.from, br.to, -bs);
        b.add_to(br.to, br.from, -bs);
    }
    YBus { g, b }
}

fn injections(y: &YBus, v: &[f64], ang: &[f64], bus: usize) -> (f64, f64) {
    let n = v.len();
    let mut p = 0.0;
    let mut q = 0.0;
    for j in 0..n {
        let gij = y.g.get(bus, j);
        let bij = y.b.get(bus, j);
        if gij == 0.0 && bij == 0.0 {
            continue;
        }
        let d = ang[bus] - ang[j];
        let (s, c) = d.sin_cos();
        p += v[j] * (gij * c + bij * s);
        q += v[j] * (gij * s - bij * c);
    }
    (v[bus] * p, v[bus] * q)
}

#[derive(Clone, Copy, PartialEq)]
enum BusType {
    Slack,
    Pv,
    Pq,
}

/// Damped Newton-Raphson for a fixed bus typing. Returns true on
/// convergence; `iterations` accumulates across calls.
#[allow(clippy::too_many_arguments)]
fn newton_iterate(
    y: &YBus,
    v: &mut [f64],
    ang: &mut [f64],
    p_spec: &[f64],
    q_spec: &[f64],
    bus_type: &[BusType],
    options: &PowerFlowOptions,
    iterations: &mut usize,
) -> bool {
    let n = v.len();
    let ang_vars: Vec<usize> = (0..n).filter(|&i| bus_type[i] != BusType::Slack).collect();
    let v_vars: Vec<usize> = (0..n).filter(|&i| bus_type[i] == BusType::Pq).collect();
    let n_ang = ang_vars.len();
    let n_var = n_ang + v_vars.len();

    for _ in 0..options.max_iterations {
        *iterations += 1;
        let mut calc_p = vec![0.0; n];
        let mut calc_q = vec![0.0; n];
        for bus in 0..n {
            let (p, q) = injections(y, v, ang, bus);
            calc_p[bus] = p;
            calc_q[bus] = q;
        }
        let mut mismatch = vec![0.0; n_var];
        for (k, &bus) in ang_vars.iter().enumerate() {
            mismatch[k] = p_spec[bus] - calc_p[bus];
        }
        for (k, &bus) in v_vars.iter().enumerate() {
            mismatch[n_ang + k] = q_spec[bus] - calc_q[bus];
        }
        let max_mis = mismatch.iter().fold(0.0_f64, |m, x| m.max(x.abs()));
        if max_mis < options.tolerance {
            return true;
        }

        // Polar Jacobian on the reduced variables.
        let mut jac = Mat::zeros(n_var, n_var);
        for (r, &i) in ang_vars.iter().enumerate() {
            for (c, &j) in ang_vars.iter().enumerate() {
                let val = if i == j {
                    -calc_q[i] - y.b.get(i, i) * v[i] * v[i]
                } else {
                    let d = ang[i] - ang[j];
                    let (s, co) = d.sin_cos();
                    v[i] * v[j] * (y.g.get(i, j) * s - y.b.get(i, j) * co)
                };
                jac.set(r, c, val);
            }
            for (c, &j) in v_vars.iter().enumerate() {
                let val = if i == j {
                    calc_p[i] / v[i] + y.g.get(i, i) * v[i]
                } else {
                    let d = ang[i] - ang[j];
                    let (s, co) = d.sin_cos();
                    v[i] * (y.g.get(i, j) * co + y.b.get(i, j) * s)
                };
                jac.set(r, n_ang + c, val);
            }
        }
        for (r, &i) in v_vars.iter().enumerate() {
            for (c, &j) in ang_vars.iter().enumerate() {
                let val = if i == j {
                    calc_p[i] - y.g.get(i, i) * v[i] * v[i]
                } else {
                    let d = ang[i] - ang[j];
                    let (s, co) = d.sin_cos();
                    -v[i] * v[j] * (y.g.get(i, j) * co + y.b.get(i, j) * s)
                };
                jac.set(n_ang + r, c, val);
            }
            for (c, &j) in v_vars.iter().enumerate() {
                let val = if i == j {
                    calc_q[i] / v[i] - y.b.get(i, i) * v[i]
                } else {
                    let d = ang[i] - ang[j];
                    let (s, co) = d.sin_cos();
                    v[i] * (y.g.get(i, j) * s - y.b.get(i, j) * co)
                };
                jac.set(n_ang + r, n_ang + c, val);
            }
        }

        let Some(delta) = lu_solve(&jac, &mismatch) else {
            return false;
        };
        // Step limiting: scale the Newton direction so no angle moves more
        // than 0.5 rad and no magnitude more than 0.1 pu per iteration.
        let mut overshoot = 1.0_f64;
        for (k, d) in delta.iter().enumerate() {
            let limit = if k < n_ang { 0.5 } else { 0.1 };
            overshoot = overshoot.max(d.abs() / limit);
        }
        let factor = 1.0 / overshoot;
        for (k, &bus) in ang_vars.iter().enumerate() {
            ang[bus] += factor * delta[k];
        }
        for (k, &bus) in v_vars.iter().enumerate() {
            v[bus] += factor * delta[n_ang + k];
        }
        if v.iter().any(|x| !x.is_finite() || *x <= 0.0) || ang.iter().any(|x| !x.is_finite()) {
            return false;
        }
    }
    false
}

/// Solve the AC power flow for one dispatch against one availability sample.
pub fn solve_power_flow(
    case: &NetworkCase,
    dispatch: &DispatchAction,
    sample: &AvailabilitySample,
    options: &PowerFlowOptions,
) -> Result<PowerFlowSolution, PowerFlowError> {
    let n = case.n_buses();
    if dispatch.setpoints.len() != case.generators.len() {
        return Err(PowerFlowError::DimensionMismatch {
            got: dispatch.setpoints.len(),
            want: case.generators.len(),
        });
    }

    let y = build_ybus(case);
    let p_out = effective_outputs(case, dispatch, sample);

    // Specified injections (generation minus load) per bus.
    let mut p_spec: Vec<f64> = (0..n).map(|i| -case.load_p_pu(i)).collect();
    let mut q_spec: Vec<f64> = (0..n).map(|i| -case.load_q_pu(i)).collect();
    let mut bus_type = vec![BusType::Pq; n];
    bus_type[case.slack_bus] = BusType::Slack;

    // gen_at[bus] = generator index, for PV handling and q recovery.
    let mut gen_at: Vec<Option<usize>> = vec![None; n];
    for (gi, g) in case.generators.iter().enumerate() {
        let sp = &dispatch.setpoints[gi];
        p_spec[g.bus] += p_out[gi];
        if !sp.online {
            continue;
        }
        match dispatch.mode {
            ControlMode::PowerVoltage => {
                bus_type[g.bus] = BusType::Pv;
                gen_at[g.bus] = Some(gi);
            }
            ControlMode::PowerReactive => {
                q_spec[g.bus] += sp.q;
                gen_at[g.bus] = Some(gi);
            }
        }
    }

    // Outer loop: solve with a fixed bus typing, then clamp reactive-limit
    // violators to PQ and re-solve from a fresh flat start. Restarting on a
    // type change keeps the iterate off the low-voltage solution branch that
    // a mid-flight switch can drag it onto.
    let pv_count = bus_type.iter().filter(|t| **t == BusType::Pv).count();
    let mut converged = false;
    let mut iterations = 0usize;
    let mut v = vec![1.0; n];
    let mut ang = vec![0.0; n];

    for _round in 0..=pv_count {
        for bus in 0..n {
            v[bus] = match bus_type[bus] {
                BusType::Slack => options.slack_voltage,
                BusType::Pv => dispatch.setpoints[gen_at[bus].unwrap()].v,
                BusType::Pq => 1.0,
            };
            ang[bus] = 0.0;
        }
        let solved = newton_iterate(
            &y,
            &mut v,
            &mut ang,
            &p_spec,
            &q_spec,
            &bus_type,
            options,
            &mut iterations,
        );
        if !solved {
            break;
        }
        // Reactive-limit audit of the solved point; violators become PQ
        // nodes held at the violated limit.
        let mut violators = 0usize;
        for bus in 0..n {
            if bus_type[bus] != BusType::Pv {
                continue;
            }
            let gi = gen_at[bus].unwrap();
            let gen = &case.generators[gi];
            let (_, qc) = injections(&y, &v, &ang, bus);
            let q_gen = qc + case.load_q_pu(bus);
            if q_gen < gen.q_min - 1e-10 || q_gen > gen.q_max + 1e-10 {
                bus_type[bus] = BusType::Pq;
                q_spec[bus] = q_gen.clamp(gen.q_min, gen.q_max) - case.load_q_pu(bus);
                violators += 1;
            }
        }
        if violators == 0 {
            converged = true;
            break;
        }
    }

    // Branch flows from the sending end.
    let nb = case.branches.len();
    let mut branch_p = vec![0.0; nb];
    let mut branch_q = vec![0.0; nb];
    for (bi, br) in case.branches.iter().enumerate() {
        let (f, t) = (br.from, br.to);
        let denom = br.r * br.r + br.x * br.x;
        let (gs, bs) = (br.r / denom, -br.x / denom);
        // I = y (V_f - V_t); S_f = V_f conj(I)
        let (vf_re, vf_im) = (v[f] * ang[f].cos(), v[f] * ang[f].sin());
        let (vt_re, vt_im) = (v[t] * ang[t].cos(), v[t] * ang[t].sin());
        let (d_re, d_im) = (vf_re - vt_re, vf_im - vt_im);
        let (i_re, i_im) = (gs * d_re - bs * d_im, gs * d_im + bs * d_re);
        branch_p[bi] = vf_re * i_re + vf_im * i_im;
        branch_q[bi] = vf_im * i_re - vf_re * i_im;
    }

    let (loss_p, loss_q) = branch_losses(case, &v, &ang);

    let slack_inj = injections(&y, &v, &ang, case.slack_bus);
    let slack_p = slack_inj.0 + case.load_p_pu(case.slack_bus);
    let slack_q = slack_inj.1 + case.load_q_pu(case.slack_bus);

    let gen_q: Vec<f64> = case
        .generators
        .iter()
        .enumerate()
        .map(|(gi, g)| {
            let sp = &dispatch.setpoints[gi];
            if !sp.online {
                return 0.0;
            }
            match dispatch.mode {
                ControlMode::PowerReactive => sp.q,
                ControlMode::PowerVoltage => {
                    let (_, qc) = injections(&y, &v, &ang, g.bus);
                    qc + case.load_q_pu(g.bus)
                }
            }
        })
        .collect();

    Ok(PowerFlowSolution {
        v_mag: v,
        v_ang: ang,
        branch_p,
        branch_q,
        loss_p,
        loss_q,
        slack_p,
        slack_q,
        gen_q,
        converged,
        iterations,
    })
}

fn branch_losses(case: &NetworkCase, v: &[f64], ang: &[f64]) -> (f64, f64) {
    let mut loss_p = 0.0;
    let mut loss_q = 0.0;
    for br in &case.branches {
        let (m, n) = (br.from, br.to);
        let bracket =
            v[m] * v[m] + v[n] * v[n] - 2.0 * v[m] * v[n] * (ang[m] - ang[n]).cos();
        loss_p += br.conductance() * bracket;
        loss_q += br.susceptance() * bracket;
    }
    (loss_p, loss_q)
}

/// Total series losses per the squared-voltage-difference identity.
pub fn system_losses(
    sol: &PowerFlowSolution,
    case: &NetworkCase,
) -> Result<(f64, f64), PowerFlowError> {
    if !sol.converged {
        return Err(PowerFlowError::NotConverged);
    }
    Ok(branch_losses(case, &sol.v_mag, &sol.v_ang))
}

/// Audit every inequality constraint against a solved operating point.
pub fn check_constraints(
    sol: &PowerFlowSolution,
    case: &NetworkCase,
    dispatch: &DispatchAction,
) -> ConstraintReport {
    let mut report = ConstraintReport::default();
    let tol = 1e-9;

    if !sol.converged {
        // The iterate of a failed solve is not an operating point; auditing
        // it against inequality limits would manufacture violations. The
        // unsatisfiable balance is the single reportable fact.
        report.violations.push(ConstraintViolation {
            kind: ConstraintKind::Balance,
            entity: 0,
            magnitude: f64::NAN,
        });
        return report;
    }

    for bus in &case.buses {
        let v = sol.v_mag[bus.id];
        let excess = if v < bus.v_min - tol {
            bus.v_min - v
        } else if v > bus.v_max + tol {
            v - bus.v_max
        } else {
            continue;
        };
        report.violations.push(ConstraintViolation {
            kind: ConstraintKind::LoadVoltage,
            entity: bus.id,
            magnitude: excess,
        });
    }

    for (gi, g) in case.generators.iter().enumerate() {
        let sp = &dispatch.setpoints[gi];
        if !sp.online {
            continue;
        }
        let v = sol.v_mag[g.bus];
        if v < g.v_min - tol || v > g.v_max + tol {
            report.violations.push(ConstraintViolation {
                kind: ConstraintKind::GenVoltage,
                entity: gi,
                magnitude: if v < g.v_min { g.v_min - v } else { v - g.v_max },
            });
        }
        if sp.p < g.p_min - tol || sp.p > g.p_max + tol {
            report.violations.push(ConstraintViolation {
                kind: ConstraintKind::GenActivePower,
                entity: gi,
                magnitude: if sp.p < g.p_min {
                    g.p_min - sp.p
                } else {
                    sp.p - g.p_max
                },
            });
        }
        let q = sol.gen_q[gi];
        if q < g.q_min - tol || q > g.q_max + tol {
            report.violations.push(ConstraintViolation {
                kind: ConstraintKind::GenReactivePower,
                entity: gi,
                magnitude: if q < g.q_min { g.q_min - q } else { q - g.q_max },
            });
        }
    }

    for (bi, br) in case.branches.iter().enumerate() {
        let s = (sol.branch_p[bi].powi(2) + sol.branch_q[bi].powi(2)).sqrt();
        if s > br.s_max + tol {
            report.violations.push(ConstraintViolation {
                kind: ConstraintKind::BranchFlow,
                entity: bi,
                magnitude: s - br.s_max,
            });
        }
    }

    report
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::case::{Branch, Bus, NetworkCase};
    use crate::stochastic::AvailabilitySample;

    fn two_bus(load_p: f64, load_q: f64) -> NetworkCase {
        NetworkCase {
            name: "two-bus".into(),
            base_mva: 100.0,
            base_kv: 12.66,
            buses: vec![
                Bus {
                    id: 0,
                    load_p: 0.0,
                    load_q: 0.0,
                    v_min: 0.95,
                    v_max: 1.05,
                    is_slack: true,
                },
                Bus {
                    id: 1,
                    load_p,
                    load_q,
                    v_min: 0.95,
                    v_max: 1.05,
                    is_slack: false,
                },
            ],
            branches: vec![Branch {
                from: 0,
                to: 1,
                r: 0.02,
                x: 0.04,
                s_max: 1.0,
            }],
            generators: vec![],
            slack_bus: 0,
        }
    }

    fn no_dispatch() -> DispatchAction {
        DispatchAction {
            mode: ControlMode::PowerVoltage,
            setpoints: vec![],
        }
    }

    #[test]
    fn zero_load_gives_flat_profile() {
        let case = two_bus(0.0, 0.0);
        let sol = solve_power_flow(
            &case,
            &no_dispatch(),
            &AvailabilitySample::empty(0),
            &PowerFlowOptions::default(),
        )
        .unwrap();
        assert!(sol.converged);
        for v in &sol.v_mag {
            assert!((v - 1.0).abs() < 1e-12);
        }
        assert!(sol.loss_p.abs() < 1e-14);
    }

    #[test]
    fn two_bus_matches_closed_form() {
        // Receiving-end voltage solves
        //   v^4 + v^2 (2 (P r + Q x) - 1) + (P^2 + Q^2)(r^2 + x^2) = 0.
        let (p, q, r, x) = (0.1, 0.05, 0.02, 0.04);
        let case = two_bus(p * 100.0, q * 100.0);
        let sol = solve_power_flow(
            &case,
            &no_dispatch(),
            &AvailabilitySample::empty(0),
            &PowerFlowOptions::default(),
        )
        .unwrap();
        assert!(sol.converged);

        let b_coef = 2.0 * (p * r + q * x) - 1.0;
        let c_coef = (p * p + q * q) * (r * r + x * x);
        let v2 = (-b_coef + (b_coef * b_coef - 4.0 * c_coef).sqrt()) / 2.0;
        let v_expected = v2.sqrt();
        assert!(
            (sol.v_mag[1] - v_expected).abs() < 1e-8,
            "{} vs {}",
            sol.v_mag[1],
            v_expected
        );
        // Nonzero flow through a resistive branch dissipates power.
        assert!(sol.loss_p > 0.0);
    }

    #[test]
    fn balance_identity_holds() {
        let case = two_bus(10.0, 5.0);
        let sol = solve_power_flow(
            &case,
            &no_dispatch(),
            &AvailabilitySample::empty(0),
            &PowerFlowOptions::default(),
        )
        .unwrap();
        let total_load: f64 = (0..2).map(|i| case.load_p_pu(i)).sum();
        assert!((sol.slack_p - total_load - sol.loss_p).abs() < 1e-8);
    }

    #[test]
    fn single_branch_loss_arithmetic() {
        // g = 1, v_m = 1.0, v_n = 0.9, delta = 0 -> loss_p = 1 + 0.81 - 1.8 = 0.01
        let mut case = two_bus(0.0, 0.0);
        // choose r, x so conductance is exactly 1: r = 0.5, x = 0.5 -> g = 1
        case.branches[0].r = 0.5;
        case.branches[0].x = 0.5;
        let (lp, _) = branch_losses(&case, &[1.0, 0.9], &[0.0, 0.0]);
        assert!((lp - 0.01).abs() < 1e-14);
    }

    #[test]
    fn voltage_violation_reported_with_magnitude() {
        let case = two_bus(0.0, 0.0);
        let mut sol = solve_power_flow(
            &case,
            &no_dispatch(),
            &AvailabilitySample::empty(0),
            &PowerFlowOptions::default(),
        )
        .unwrap();
        sol.v_mag[1] = 1.06;
        let report = check_constraints(&sol, &case, &no_dispatch());
        assert_eq!(report.violations.len(), 1);
        let v = report.violations[0];
        assert_eq!(v.kind, ConstraintKind::LoadVoltage);
        assert_eq!(v.entity, 1);
        assert!((v.magnitude - 0.01).abs() < 1e-12);
    }

    #[test]
    fn branch_overload_reported() {
        let case = two_bus(0.0, 0.0);
        let mut sol = solve_power_flow(
            &case,
            &no_dispatch(),
            &AvailabilitySample::empty(0),
            &PowerFlowOptions::default(),
        )
        .unwrap();
        sol.branch_p[0] = 1.2 * case.branches[0].s_max;
        sol.branch_q[0] = 0.0;
        let report = check_constraints(&sol, &case, &no_dispatch());
        assert_eq!(report.violations.len(), 1);
        assert_eq!(report.violations[0].kind, ConstraintKind::BranchFlow);
        assert!((report.violations[0].magnitude - 0.2 * case.branches[0].s_max).abs() < 1e-12);
    }

    #[test]
    fn unconverged_losses_rejected() {
        let case = two_bus(0.0, 0.0);
        let mut sol = solve_power_flow(
            &case,
            &no_dispatch(),
            &AvailabilitySample::empty(0),
            &PowerFlowOptions::default(),
        )
        .unwrap();
        sol.converged = false;
        assert!(system_losses(&sol, &case).is_err());
    }
}
