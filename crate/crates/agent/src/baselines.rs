//! Per-step black-box optimizers (Harris hawks, grey wolf, random) over the
//! one-step reward, plus the shared policy evaluator.

use std::time::Instant;

use rand::Rng;
use rand_chacha::ChaCha12Rng;

use feederlab_grid::objectives::{evaluation_metrics, EpisodeLog, EvaluationMetrics};

use crate::env::{ActionBounds, Environment};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MetaheuristicKind {
    HarrisHawks,
    GreyWolf,
}

/// Evaluation budget of one per-step search: `population` candidates kept
/// alive, `iterations * population` objective calls after initialization.
#[derive(Debug, Clone, Copy)]
pub struct SearchBudget {
    pub population: usize,
    pub iterations: usize,
}

impl Default for SearchBudget {
    fn default() -> Self {
        Self {
            population: 30,
            iterations: 100,
        }
    }
}

/// Outcome of one search: the best action found and the exact number of
/// objective evaluations consumed.
#[derive(Debug, Clone)]
pub struct SearchOutcome {
    pub best_action: Vec<f64>,
    pub best_value: f64,
    pub evaluations: usize,
}

struct EvalBudget<'f> {
    objective: &'f mut dyn FnMut(&[f64]) -> f64,
    used: usize,
    cap: usize,
}

impl<'f> EvalBudget<'f> {
    fn remaining(&self) -> bool {
        self.used < self.cap
    }

    fn fraction(&self) -> f64 {
        self.used as f64 / self.cap as f64
    }

    fn eval(&mut self, x: &[f64]) -> Option<f64> {
        if self.used >= self.cap {
            return None;
        }
        self.used += 1;
        Some((self.objective)(x))
    }
}

fn random_point(bounds: &ActionBounds, rng: &mut impl Rng) -> Vec<f64> {
    bounds
        .low
        .iter()
        .zip(&bounds.high)
        .map(|(l, h)| if h > l { rng.random_range(*l..=*h) } else { *l })
        .collect()
}

/// Maximize `objective` over the action box with the chosen metaheuristic.
/// Consumes exactly `population * (iterations + 1)` objective calls:
/// `population` for initialization plus the iteration budget.
pub fn metaheuristic_step(
    kind: MetaheuristicKind,
    objective: &mut dyn FnMut(&[f64]) -> f64,
    bounds: &ActionBounds,
    budget: &SearchBudget,
    rng: &mut ChaCha12Rng,
) -> SearchOutcome {
    assert!(budget.population >= 2, "population must be at least 2");
    assert!(budget.iterations >= 1, "iterations must be at least 1");
    let dim = bounds.dim();

    // Initialization: one evaluation per member.
    let mut positions: Vec<Vec<f64>> = (0..budget.population)
        .map(|_| random_point(bounds, rng))
        .collect();
    let mut init_used = 0usize;
    let mut fitness: Vec<f64> = Vec::with_capacity(budget.population);
    for p in &positions {
        fitness.push(objective(p));
        init_used += 1;
    }

    let mut search = EvalBudget {
        objective,
        used: 0,
        cap: budget.population * budget.iterations,
    };

    let mut best_idx = argmax(&fitness);
    let mut best = positions[best_idx].clone();
    let mut best_value = fitness[best_idx];

    while search.remaining() {
        match kind {
            MetaheuristicKind::HarrisHawks => {
                let mean_pos = mean_position(&positions, dim);
                for i in 0..positions.len() {
                    let t = search.fraction();
                    let candidate =
                        hho_candidate(&positions, i, &best, &mean_pos, bounds, t, rng);
                    let Some(value) = search.eval(&candidate) else {
                        break;
                    };
                    // Greedy replacement.
                    if value > fitness[i] {
                        positions[i] = candidate;
                        fitness[i] = value;
                        if value > best_value {
                            best_value = value;
                            best = positions[i].clone();
                        }
                    }
                }
            }
            MetaheuristicKind::GreyWolf => {
                let leaders = top_three(&fitness);
                let a_coef = 2.0 * (1.0 - search.fraction());
                for i in 0..positions.len() {
                    let candidate =
                        gwo_candidate(&positions, &leaders, i, a_coef, bounds, rng);
                    let Some(value) = search.eval(&candidate) else {
                        break;
                    };
                    positions[i] = candidate;
                    fitness[i] = value;
                    if value > best_value {
                        best_value = value;
                        best = positions[i].clone();
                    }
                }
            }
        }
        best_idx = argmax(&fitness);
        if fitness[best_idx] > best_value {
            best_value = fitness[best_idx];
            best = positions[best_idx].clone();
        }
    }

    SearchOutcome {
        best_action: best,
        best_value,
        evaluations: init_used + search.used,
    }
}

fn argmax(values: &[f64]) -> usize {
    let mut idx = 0;
    for (i, v) in values.iter().enumerate() {
        if *v > values[idx] {
            idx = i;
        }
    }
    idx
}

fn mean_position(positions: &[Vec<f64>], dim: usize) -> Vec<f64> {
    let mut mean = vec![0.0; dim];
    for p in positions {
        for (m, v) in mean.iter_mut().zip(p) {
            *m += v;
        }
    }
    for m in &mut mean {
        *m /= positions.len() as f64;
    }
    mean
}

fn top_three(fitness: &[f64]) -> [usize; 3] {
    let mut order: Vec<usize> = (0..fitness.len()).collect();
    order.sort_by(|&a, &b| fitness[b].partial_cmp(&fitness[a]).unwrap());
    [order[0], order[1 % order.len()], order[2 % order.len()]]
}

/// One Harris-hawks candidate move: exploration when the escaping energy is
/// high, besiege variants (with Levy-flight rapid dives) when it is low.
#[allow(clippy::too_many_arguments)]
fn hho_candidate(
    positions: &[Vec<f64>],
    i: usize,
    rabbit: &[f64],
    mean_pos: &[f64],
    bounds: &ActionBounds,
    progress: f64,
    rng: &mut ChaCha12Rng,
) -> Vec<f64> {
    let dim = bounds.dim();
    let e0: f64 = rng.random_range(-1.0..1.0);
    let energy = 2.0 * e0 * (1.0 - progress);
    let x = &positions[i];
    let mut candidate = vec![0.0; dim];

    if energy.abs() >= 1.0 {
        // Exploration.
        let q: f64 = rng.random();
        if q >= 0.5 {
            let k = rng.random_range(0..positions.len());
            let r1: f64 = rng.random();
            let r2: f64 = rng.random();
            for d in 0..dim {
                candidate[d] =
                    positions[k][d] - r1 * (positions[k][d] - 2.0 * r2 * x[d]).abs();
            }
        } else {
            let r3: f64 = rng.random();
            let r4: f64 = rng.random();
            for d in 0..dim {
                candidate[d] = (rabbit[d] - mean_pos[d])
                    - r3 * (bounds.low[d] + r4 * (bounds.high[d] - bounds.low[d]));
            }
        }
    } else {
        let r: f64 = rng.random();
        let jump = 2.0 * (1.0 - rng.random::<f64>());
        if r >= 0.5 && energy.abs() >= 0.5 {
            // Soft besiege.
            for d in 0..dim {
                let delta = rabbit[d] - x[d];
                candidate[d] = delta - energy.abs() * (jump * rabbit[d] - x[d]).abs();
            }
        } else if r >= 0.5 {
            // Hard besiege.
            for d in 0..dim {
                candidate[d] = rabbit[d] - energy.abs() * (rabbit[d] - x[d]).abs();
            }
        } else {
            // Rapid dive with a Levy step around the rabbit.
            let base = if energy.abs() >= 0.5 { x } else { mean_pos };
            for d in 0..dim {
                candidate[d] = rabbit[d] - energy.abs() * (jump * rabbit[d] - base[d]).abs()
                    + levy_step(rng) * (bounds.high[d] - bounds.low[d]) * 0.01;
            }
        }
    }

    for d in 0..dim {
        candidate[d] = candidate[d].clamp(bounds.low[d], bounds.high[d]);
    }
    candidate
}

fn gwo_candidate(
    positions: &[Vec<f64>],
    leaders: &[usize; 3],
    i: usize,
    a_coef: f64,
    bounds: &ActionBounds,
    rng: &mut ChaCha12Rng,
) -> Vec<f64> {
    let dim = bounds.dim();
    let x = &positions[i];
    let mut candidate = vec![0.0; dim];
    for d in 0..dim {
        let mut acc = 0.0;
        for &l in leaders {
            let leader = &positions[l];
            let r1: f64 = rng.random();
            let r2: f64 = rng.random();
            let a = 2.0 * a_coef * r1 - a_coef;
            let c = 2.0 * r2;
            let dist = (c * leader[d] - x[d]).abs();
            acc += leader[d] - a * dist;
        }
        candidate[d] = (acc / 3.0).clamp(bounds.low[d], bounds.high[d]);
    }
    candidate
}

/// Mantegna Levy step with beta = 1.5.
fn levy_step(rng: &mut ChaCha12Rng) -> f64 {
    let beta = 1.5;
    let sigma = ((gamma_fn(1.0 + beta) * (std::f64::consts::PI * beta / 2.0).sin())
        / (gamma_fn((1.0 + beta) / 2.0) * beta * 2.0_f64.powf((beta - 1.0) / 2.0)))
    .powf(1.0 / beta);
    let u: f64 = rng.random_range(-1.0..1.0) * sigma;
    let v: f64 = loop {
        let v: f64 = rng.random_range(-1.0..1.0);
        if v.abs() > 1e-12 {
            break v;
        }
    };
    u / v.abs().powf(1.0 / beta)
}

/// Lanczos approximation of the gamma function (g = 7, n = 9).
fn gamma_fn(x: f64) -> f64 {
    const COEFFS: [f64; 9] = [
        0.999_999_999_999_809_93,
        676.520_368_121_885_1,
        -1_259.139_216_722_402_8,
        771.323_428_777_653_13,
        -176.615_029_162_140_6,
        12.507_343_278_686_905,
        -0.138_571_095_265_720_12,
        9.984_369_578_019_572e-6,
        1.505_632_735_149_311_6e-7,
    ];
    if x < 0.5 {
        std::f64::consts::PI / ((std::f64::consts::PI * x).sin() * gamma_fn(1.0 - x))
    } else {
        let x = x - 1.0;
        let mut acc = COEFFS[0];
        for (i, c) in COEFFS.iter().enumerate().skip(1) {
            acc += c / (x + i as f64);
        }
        let t = x + 7.5;
        (2.0 * std::f64::consts::PI).sqrt() * t.powf(x + 0.5) * (-t).exp() * acc
    }
}

/// Uniform random action inside the box.
pub fn random_action(bounds: &ActionBounds, rng: &mut ChaCha12Rng) -> Vec<f64> {
    random_point(bounds, rng)
}

/// Evaluation summary plus mean per-step decision wall-clock.
#[derive(Debug, Clone, Copy)]
pub struct PolicyEvaluation {
    pub metrics: EvaluationMetrics,
    pub mean_decision_seconds: f64,
}

/// Run `n_eval` exploration-free episodes of `t_end` steps and summarize.
/// Only the policy call is timed, not the simulator step.
pub fn evaluate_policy(
    env: &mut Environment,
    policy: impl FnMut(&Environment, &[f64]) -> Vec<f64>,
    n_eval: usize,
    t_end: usize,
    seed_base: u64,
) -> PolicyEvaluation {
    evaluate_policy_observed(env, policy, n_eval, t_end, seed_base, |_, _, _, _| {})
}

/// `evaluate_policy` with a per-step observer `(episode, step, action, record)`.
pub fn evaluate_policy_observed(
    env: &mut Environment,
    mut policy: impl FnMut(&Environment, &[f64]) -> Vec<f64>,
    n_eval: usize,
    t_end: usize,
    seed_base: u64,
    mut on_step: impl FnMut(usize, usize, &[f64], &crate::env::StepRecord),
) -> PolicyEvaluation {
    let mut logs = Vec::with_capacity(n_eval);
    let mut decision_time = 0.0;
    let mut decisions = 0usize;
    for episode in 0..n_eval {
        let mut state = env.reset(seed_base.wrapping_add(episode as u64));
        let mut log = EpisodeLog::default();
        for step in 0..t_end {
            let started = Instant::now();
            let action = policy(env, &state);
            decision_time += started.elapsed().as_secs_f64();
            decisions += 1;
            let dispatch = env.action_to_dispatch(&action);
            let rec = env.step(&dispatch);
            on_step(episode, step, &action, &rec);
            log.rewards.push(rec.reward);
            log.j_vol.push(rec.outcome.j_vol);
            let active = rec
                .sample
                .gens
                .iter()
                .flatten()
                .filter(|a| a.p_bar > 0.0)
                .count();
            log.rer_ratio_sum.push(rec.outcome.j_rer);
            log.rer_active.push(active);
            state = rec.state;
            if rec.terminated {
                break;
            }
        }
        logs.push(log);
    }
    PolicyEvaluation {
        metrics: evaluation_metrics(&logs).expect("nonempty evaluation"),
        mean_decision_seconds: decision_time / decisions.max(1) as f64,
    }
}
