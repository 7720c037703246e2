//! Objective metrics, the step reward, and the evaluation summary metrics.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::power_flow::{ConstraintReport, PowerFlowSolution};
use crate::stochastic::GenerationCosts;

/// Weights of the three objective terms.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ObjectiveWeights {
    pub w_vol: f64,
    pub w_rer: f64,
    pub w_gen: f64,
}

impl Default for ObjectiveWeights {
    fn default() -> Self {
        Self {
            w_vol: 1.0,
            w_rer: 1.0,
            w_gen: 0.01,
        }
    }
}

/// Everything the reward and the logs need from one step.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct StepOutcome {
    pub j_vol: f64,
    pub j_rer: f64,
    pub j_gen: f64,
    pub reward: f64,
    pub penalty_applied: bool,
    pub terminated: bool,
}

#[derive(Debug, Error, PartialEq)]
pub enum ObjectiveError {
    #[error("unconverged power flow solution")]
    Unconverged,
    #[error("actual output {actual} exceeds availability {available}")]
    OutputAboveAvailability { actual: f64, available: f64 },
    #[error("no episode logs")]
    EmptyLogs,
}

/// L2 deviation of voltage magnitudes from nominal: [sum (1 - |V|)^2]^(1/2).
pub fn voltage_fluctuation(sol: &PowerFlowSolution) -> Result<f64, ObjectiveError> {
    if !sol.converged {
        return Err(ObjectiveError::Unconverged);
    }
    Ok(voltage_fluctuation_of(&sol.v_mag))
}

pub fn voltage_fluctuation_of(v_mag: &[f64]) -> f64 {
    v_mag
        .iter()
        .map(|v| (1.0 - v) * (1.0 - v))
        .sum::<f64>()
        .sqrt()
}

/// Sum of output/availability ratios over renewables. Generators with zero
/// availability contribute nothing; callers exclude them from rate
/// denominators as well.
pub fn renewable_accommodation(
    actual: &[f64],
    available: &[f64],
) -> Result<f64, ObjectiveError> {
    let mut total = 0.0;
    for (&a, &bar) in actual.iter().zip(available) {
        if bar <= 0.0 {
            continue;
        }
        if a > bar * (1.0 + 1e-9) {
            return Err(ObjectiveError::OutputAboveAvailability {
                actual: a,
                available: bar,
            });
        }
        total += a / bar;
    }
    Ok(total)
}

/// Accommodation ratios per renewable with nonzero availability.
pub fn accommodation_ratios(actual: &[f64], available: &[f64]) -> Vec<f64> {
    actual
        .iter()
        .zip(available)
        .filter(|(_, &bar)| bar > 0.0)
        .map(|(&a, &bar)| (a / bar).min(1.0))
        .collect()
}

/// Reward terms of a feasible step.
#[derive(Debug, Clone, Copy)]
pub struct RewardTerms<'a> {
    /// Voltage magnitudes of every bus.
    pub v_mag: &'a [f64],
    /// Output/availability ratio per renewable with nonzero availability.
    pub rer_ratios: &'a [f64],
    pub costs: &'a GenerationCosts,
}

/// The exponential-form step reward with constraint penalties.
///
/// `terms` is `None` when the power balance is unsatisfiable (the solver did
/// not converge); in that case only the penalty survives and the episode
/// terminates. Each penalizable violation adds `penalty` (negative)
/// cumulatively.
pub fn step_reward(
    terms: Option<&RewardTerms<'_>>,
    weights: &ObjectiveWeights,
    violations: &ConstraintReport,
    balance_ok: bool,
    penalty: f64,
) -> (f64, bool) {
    let mut reward = 0.0;
    if let Some(t) = terms {
        let vol_term: f64 = t
            .v_mag
            .iter()
            .map(|v| (-(1.0 - v) * (1.0 - v)).exp())
            .sum::<f64>()
            .sqrt();
        let rer_term: f64 = t.rer_ratios.iter().map(|r| r.exp()).sum();
        let gen_term: f64 = t.costs.thermal.iter().map(|c| (-c).exp()).sum::<f64>()
            + t.costs
                .wind
                .iter()
                .chain(t.costs.solar.iter())
                .map(|(r, p)| (-(r + p)).exp())
                .sum::<f64>();
        reward = weights.w_vol * vol_term + weights.w_rer * rer_term + weights.w_gen * gen_term;
    }

    let penalties = violations.penalty_count();
    reward += penalty * penalties as f64;
    (reward, !balance_ok)
}

/// Per-episode log rows needed by the summary metrics.
#[derive(Debug, Clone, Default)]
pub struct EpisodeLog {
    pub rewards: Vec<f64>,
    pub j_vol: Vec<f64>,
    /// Sum of accommodation ratios per step.
    pub rer_ratio_sum: Vec<f64>,
    /// Renewables with nonzero availability per step.
    pub rer_active: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EvaluationMetrics {
    /// Mean episode return.
    pub score: f64,
    /// Mean voltage fluctuation, percent.
    pub alpha_vol: f64,
    /// Mean accommodation rate, percent.
    pub alpha_rer: f64,
}

/// SCORE, voltage-fluctuation rate, and accommodation rate over episodes.
pub fn evaluation_metrics(logs: &[EpisodeLog]) -> Result<EvaluationMetrics, ObjectiveError> {
    if logs.is_empty() {
        return Err(ObjectiveError::EmptyLogs);
    }
    let score = logs
        .iter()
        .map(|l| l.rewards.iter().sum::<f64>())
        .sum::<f64>()
        / logs.len() as f64;

    let mut vol_sum = 0.0;
    let mut vol_steps = 0usize;
    let mut rer_sum = 0.0;
    let mut rer_steps = 0usize;
    for log in logs {
        vol_sum += log.j_vol.iter().sum::<f64>();
        vol_steps += log.j_vol.len();
        for (sum, &active) in log.rer_ratio_sum.iter().zip(&log.rer_active) {
            if active > 0 {
                rer_sum += sum / active as f64;
                rer_steps += 1;
            }
        }
    }
    let alpha_vol = if vol_steps > 0 {
        vol_sum / vol_steps as f64 * 100.0
    } else {
        0.0
    };
    let alpha_rer = if rer_steps > 0 {
        rer_sum / rer_steps as f64 * 100.0
    } else {
        0.0
    };
    Ok(EvaluationMetrics {
        score,
        alpha_vol,
        alpha_rer,
    })
}
