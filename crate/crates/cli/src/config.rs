//! Run configuration: defaults, TOML file loading, and dotted-key overrides.
//! Precedence: command-line flags > `--set` overrides > file > defaults.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use feederlab_agent::ddpg::DdpgConfig;
use feederlab_agent::encoder::EncoderConfig;
use feederlab_agent::env::{EnvConfig, WarmupMode};
use feederlab_grid::dispatch::ControlMode;
use feederlab_grid::objectives::ObjectiveWeights;
use feederlab_grid::power_flow::PowerFlowOptions;
use feederlab_grid::stochastic::{SolarParams, WindParams};

use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EncoderChoice {
    MgAstgcn,
    Mlp,
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PolicyChoice {
    Ddpg,
    Hho,
    Gwo,
    Random,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Case document path.
    pub case: String,
    /// Master seed; every stream seed derives from it.
    pub seed: u64,
    pub encoder: EncoderChoice,
    /// Policy evaluated by `eval` and `fault-test`.
    pub policy: PolicyChoice,
    /// Training episodes for `train` (and policy pre-training elsewhere).
    pub episodes: usize,
    /// Checkpoint directory consumed by `eval`/`fault-test` when set.
    pub checkpoint: String,
    pub weights: WeightsSection,
    pub env: EnvSection,
    pub wind: WindSection,
    pub solar: SolarSection,
    pub power_flow: PowerFlowSection,
    pub ddpg: DdpgSection,
    pub encoder_net: EncoderSection,
    pub evaluation: EvaluationSection,
    pub search: SearchSection,
    pub fault: FaultSection,
    pub sweep: SweepSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            case: "cases/ieee33.toml".into(),
            seed: 1,
            encoder: EncoderChoice::MgAstgcn,
            policy: PolicyChoice::Ddpg,
            episodes: 300,
            checkpoint: String::new(),
            weights: WeightsSection::default(),
            env: EnvSection::default(),
            wind: WindSection::default(),
            solar: SolarSection::default(),
            power_flow: PowerFlowSection::default(),
            ddpg: DdpgSection::default(),
            encoder_net: EncoderSection::default(),
            evaluation: EvaluationSection::default(),
            search: SearchSection::default(),
            fault: FaultSection::default(),
            sweep: SweepSection::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WeightsSection {
    pub w_vol: f64,
    pub w_rer: f64,
    pub w_gen: f64,
}

impl Default for WeightsSection {
    fn default() -> Self {
        let d = ObjectiveWeights::default();
        Self {
            w_vol: d.w_vol,
            w_rer: d.w_rer,
            w_gen: d.w_gen,
        }
    }
}

impl WeightsSection {
    pub fn to_weights(self) -> ObjectiveWeights {
        ObjectiveWeights {
            w_vol: self.w_vol,
            w_rer: self.w_rer,
            w_gen: self.w_gen,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnvSection {
    pub t_recent: usize,
    pub t_daily: usize,
    pub t_weekly: usize,
    pub steps_per_day: usize,
    pub penalty: f64,
    pub lockout_steps: u32,
    pub max_episode_steps: usize,
    pub control_mode: ControlMode,
    /// "replay" or "zero-pad".
    pub warmup_mode: String,
}

impl Default for EnvSection {
    fn default() -> Self {
        let d = EnvConfig::default();
        Self {
            t_recent: d.t_recent,
            t_daily: d.t_daily,
            t_weekly: d.t_weekly,
            steps_per_day: d.steps_per_day,
            penalty: d.penalty,
            lockout_steps: d.lockout_steps,
            max_episode_steps: d.max_episode_steps,
            control_mode: ControlMode::PowerVoltage,
            warmup_mode: "replay".into(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WindSection {
    pub weibull_k: f64,
    pub weibull_c: f64,
    pub v_cut_in: f64,
    pub v_rated: f64,
    pub v_cut_out: f64,
}

impl Default for WindSection {
    fn default() -> Self {
        let d = WindParams::default();
        Self {
            weibull_k: d.weibull_k,
            weibull_c: d.weibull_c,
            v_cut_in: d.v_cut_in,
            v_rated: d.v_rated,
            v_cut_out: d.v_cut_out,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolarSection {
    pub ln_mu: f64,
    pub ln_sigma: f64,
    pub g_std: f64,
}

impl Default for SolarSection {
    fn default() -> Self {
        let d = SolarParams::default();
        Self {
            ln_mu: d.ln_mu,
            ln_sigma: d.ln_sigma,
            g_std: d.g_std,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PowerFlowSection {
    pub tolerance: f64,
    pub max_iterations: usize,
    pub slack_voltage: f64,
}

impl Default for PowerFlowSection {
    fn default() -> Self {
        let d = PowerFlowOptions::default();
        Self {
            tolerance: d.tolerance,
            max_iterations: d.max_iterations,
            slack_voltage: d.slack_voltage,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DdpgSection {
    pub hidden_layers: usize,
    pub hidden_width: usize,
    pub actor_lr: f64,
    pub critic_lr: f64,
    pub encoder_lr: f64,
    pub gamma: f64,
    pub rho: f64,
    pub batch_size: usize,
    pub replay_capacity: usize,
    pub warmup_transitions: usize,
    pub noise_std: f64,
    pub grad_clip: f64,
    pub encoder_update_every: usize,
}

impl Default for DdpgSection {
    fn default() -> Self {
        let d = DdpgConfig::default();
        Self {
            hidden_layers: d.hidden_layers,
            hidden_width: d.hidden_width,
            actor_lr: d.actor_lr,
            critic_lr: d.critic_lr,
            encoder_lr: d.encoder_lr,
            gamma: d.gamma,
            rho: d.rho,
            batch_size: d.batch_size,
            replay_capacity: d.replay_capacity,
            warmup_transitions: d.warmup_transitions,
            noise_std: d.noise_std,
            grad_clip: d.grad_clip,
            encoder_update_every: d.encoder_update_every,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EncoderSection {
    pub chebyshev_order: usize,
    pub channels: usize,
    pub n_components: usize,
    pub temporal_kernel: usize,
    pub output_dim: usize,
}

impl Default for EncoderSection {
    fn default() -> Self {
        let d = EncoderConfig::default();
        Self {
            chebyshev_order: d.chebyshev_order,
            channels: d.channels,
            n_components: d.n_components,
            temporal_kernel: d.temporal_kernel,
            output_dim: d.output_dim,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluationSection {
    pub n_eval: usize,
    pub t_end: usize,
}

impl Default for EvaluationSection {
    fn default() -> Self {
        Self {
            n_eval: 100,
            t_end: 100,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SearchSection {
    pub population: usize,
    pub iterations: usize,
}

impl Default for SearchSection {
    fn default() -> Self {
        Self {
            population: 30,
            iterations: 100,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FaultSection {
    /// Simultaneous-fault counts swept: 1..=max_faults.
    pub max_faults: usize,
    pub n_seeds: usize,
    /// Recovery-time cap in steps.
    pub horizon: usize,
    /// Pre-fault steps under the policy before injection.
    pub settle_steps: usize,
}

impl Default for FaultSection {
    fn default() -> Self {
        Self {
            max_faults: 3,
            n_seeds: 20,
            horizon: 48,
            settle_steps: 8,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepSection {
    /// "w_vol" or "w_rer".
    pub target: String,
    pub values: Vec<f64>,
    /// Training episodes per sweep point.
    pub episodes: usize,
}

impl Default for SweepSection {
    fn default() -> Self {
        Self {
            target: "w_vol".into(),
            values: vec![1.0, 2.0, 3.0, 4.0, 5.0],
            episodes: 50,
        }
    }
}

impl RunConfig {
    /// Load from a file (or defaults when `path` is `None`), then apply
    /// `key=value` overrides with dotted paths.
    pub fn resolve(path: Option<&Path>, overrides: &[String]) -> Result<Self, CliError> {
        let mut table: toml::Table = match path {
            Some(p) => {
                let text = fs::read_to_string(p)
                    .map_err(|e| CliError::Config(format!("cannot read {}: {e}", p.display())))?;
                text.parse()
                    .map_err(|e| CliError::Config(format!("bad config {}: {e}", p.display())))?
            }
            None => toml::Table::new(),
        };
        for entry in overrides {
            let (key, value) = entry
                .split_once('=')
                .ok_or_else(|| CliError::Config(format!("override `{entry}` is not key=value")))?;
            apply_override(&mut table, key.trim(), value.trim())?;
        }
        let text = toml::to_string(&table)
            .map_err(|e| CliError::Config(format!("config assembly failed: {e}")))?;
        let config: RunConfig = toml::from_str(&text)
            .map_err(|e| CliError::Config(format!("invalid configuration: {e}")))?;
        config.validate()?;
        Ok(config)
    }

    fn validate(&self) -> Result<(), CliError> {
        if self.weights.w_vol < 0.0 || self.weights.w_rer < 0.0 || self.weights.w_gen < 0.0 {
            return Err(CliError::Config("objective weights must be nonnegative".into()));
        }
        if self.episodes == 0 {
            return Err(CliError::Config("episodes must be positive".into()));
        }
        if !matches!(self.env.warmup_mode.as_str(), "replay" | "zero-pad") {
            return Err(CliError::Config(format!(
                "env.warmup_mode must be `replay` or `zero-pad`, got `{}`",
                self.env.warmup_mode
            )));
        }
        if !matches!(self.sweep.target.as_str(), "w_vol" | "w_rer") {
            return Err(CliError::Config(format!(
                "sweep.target must be `w_vol` or `w_rer`, got `{}`",
                self.sweep.target
            )));
        }
        Ok(())
    }

    pub fn env_config(&self) -> EnvConfig {
        EnvConfig {
            weights: self.weights.to_weights(),
            wind: WindParams {
                weibull_k: self.wind.weibull_k,
                weibull_c: self.wind.weibull_c,
                v_cut_in: self.wind.v_cut_in,
                v_rated: self.wind.v_rated,
                v_cut_out: self.wind.v_cut_out,
            },
            solar: SolarParams {
                ln_mu: self.solar.ln_mu,
                ln_sigma: self.solar.ln_sigma,
                g_std: self.solar.g_std,
            },
            control_mode: self.env.control_mode,
            t_recent: self.env.t_recent,
            t_daily: self.env.t_daily,
            t_weekly: self.env.t_weekly,
            steps_per_day: self.env.steps_per_day,
            penalty: self.env.penalty,
            lockout_steps: self.env.lockout_steps,
            max_episode_steps: self.env.max_episode_steps,
            warmup_mode: if self.env.warmup_mode == "zero-pad" {
                WarmupMode::ZeroPad
            } else {
                WarmupMode::Replay
            },
            pf_options: PowerFlowOptions {
                tolerance: self.power_flow.tolerance,
                max_iterations: self.power_flow.max_iterations,
                slack_voltage: self.power_flow.slack_voltage,
            },
        }
    }

    pub fn ddpg_config(&self) -> DdpgConfig {
        DdpgConfig {
            hidden_layers: self.ddpg.hidden_layers,
            hidden_width: self.ddpg.hidden_width,
            actor_lr: self.ddpg.actor_lr,
            critic_lr: self.ddpg.critic_lr,
            encoder_lr: self.ddpg.encoder_lr,
            gamma: self.ddpg.gamma,
            rho: self.ddpg.rho,
            batch_size: self.ddpg.batch_size,
            replay_capacity: self.ddpg.replay_capacity,
            warmup_transitions: self.ddpg.warmup_transitions,
            noise_std: self.ddpg.noise_std,
            grad_clip: self.ddpg.grad_clip,
            encoder_update_every: self.ddpg.encoder_update_every,
        }
    }

    pub fn encoder_config(&self) -> EncoderConfig {
        EncoderConfig {
            chebyshev_order: self.encoder_net.chebyshev_order,
            channels: self.encoder_net.channels,
            n_components: self.encoder_net.n_components,
            temporal_kernel: self.encoder_net.temporal_kernel,
            output_dim: self.encoder_net.output_dim,
        }
    }

    /// Canonical TOML snapshot of the fully-resolved configuration.
    pub fn snapshot(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    /// Stable hash of the snapshot for checkpoint manifests.
    pub fn config_hash(&self) -> u64 {
        // FNV-1a over the canonical snapshot.
        let mut hash = 0xcbf2_9ce4_8422_2325_u64;
        for b in self.snapshot().bytes() {
            hash ^= u64::from(b);
            hash = hash.wrapping_mul(0x1000_0000_01b3);
        }
        hash
    }
}

fn apply_override(table: &mut toml::Table, key: &str, value: &str) -> Result<(), CliError> {
    let parsed: toml::Value = match value.parse::<toml::Value>() {
        Ok(v) => v,
        // Bare strings (e.g. paths) arrive unquoted.
        Err(_) => toml::Value::String(value.to_string()),
    };
    let mut current = table;
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(CliError::Config(format!("malformed override key `{key}`")));
    }
    for part in &parts[..parts.len() - 1] {
        current = current
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()))
            .as_table_mut()
            .ok_or_else(|| {
                CliError::Config(format!("override key `{key}` crosses a non-table value"))
            })?;
    }
    current.insert(parts[parts.len() - 1].to_string(), parsed);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_resolve_without_file() {
        let config = RunConfig::resolve(None, &[]).unwrap();
        assert_eq!(config.seed, 1);
        // Published defaults.
        assert_eq!(config.ddpg.batch_size, 256);
        assert_eq!(config.ddpg.noise_std, 0.1);
        assert_eq!(config.ddpg.gamma, 0.99);
        assert_eq!(config.ddpg.rho, 0.01);
        assert_eq!(config.ddpg.actor_lr, 3e-4);
        assert_eq!(config.ddpg.critic_lr, 3e-4);
        assert_eq!(config.ddpg.hidden_layers, 3);
        assert_eq!(config.ddpg.hidden_width, 400);
        assert_eq!(config.ddpg.replay_capacity, 1_000_000);
        assert_eq!(config.ddpg.warmup_transitions, 1_000);
        assert_eq!(
            (config.env.t_recent, config.env.t_daily, config.env.t_weekly),
            (32, 16, 4)
        );
        assert_eq!(config.env.steps_per_day, 24);
        assert_eq!(config.env.penalty, -10.0);
        assert_eq!(config.env.lockout_steps, 4);
        assert_eq!(config.env.max_episode_steps, 128);
        assert_eq!(config.encoder_net.n_components, 3);
        assert_eq!(
            (config.weights.w_vol, config.weights.w_rer, config.weights.w_gen),
            (1.0, 1.0, 0.01)
        );
        assert_eq!(
            (config.evaluation.n_eval, config.evaluation.t_end),
            (100, 100)
        );
    }

    #[test]
    fn overrides_take_precedence() {
        let config = RunConfig::resolve(
            None,
            &[
                "seed=9".into(),
                "ddpg.hidden_width=64".into(),
                "weights.w_gen=0.05".into(),
                "case=cases/ieee69.toml".into(),
            ],
        )
        .unwrap();
        assert_eq!(config.seed, 9);
        assert_eq!(config.ddpg.hidden_width, 64);
        assert!((config.weights.w_gen - 0.05).abs() < 1e-15);
        assert_eq!(config.case, "cases/ieee69.toml");
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let err = RunConfig::resolve(None, &["no_such_key=1".into()]).unwrap_err();
        assert!(matches!(err, CliError::Config(_)));
    }

    #[test]
    fn negative_weight_rejected() {
        let err = RunConfig::resolve(None, &["weights.w_vol=-1".into()]).unwrap_err();
        assert!(matches!(err, CliError::Config(_)));
    }

    #[test]
    fn snapshot_round_trips() {
        let config = RunConfig::resolve(None, &["episodes=7".into()]).unwrap();
        let text = config.snapshot();
        let back: RunConfig = toml::from_str(&text).unwrap();
        assert_eq!(back.episodes, 7);
        assert_eq!(back.config_hash(), config.config_hash());
    }
}
