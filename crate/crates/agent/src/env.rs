//! The decision process over the feeder simulator: state assembly from graph
//! feature history, action projection under ramp/lockout rules, stepping via
//! the power flow, multi-grained segment construction, and fault injection.

use std::cell::RefCell;
use std::collections::VecDeque;
use std::rc::Rc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;

use feederlab_grid::case::{GeneratorKind, NetworkCase};
use feederlab_grid::dispatch::{ControlMode, DispatchAction, GenSetpoint};
use feederlab_grid::objectives::{
    accommodation_ratios, step_reward, voltage_fluctuation_of, ObjectiveWeights, RewardTerms,
    StepOutcome,
};
use feederlab_grid::power_flow::{
    check_constraints, effective_outputs, solve_power_flow, ConstraintReport, PowerFlowOptions,
    PowerFlowSolution,
};
use feederlab_grid::stochastic::{
    generation_costs, sample_availability, AvailabilitySample, SolarParams, WindParams,
};
use feederlab_tensor::Tensor;

use crate::encoder::Encoder;

/// Recent/daily/weekly feature stacks, each shaped [F', N, T] with the newest
/// snapshot at the last temporal index.
#[derive(Debug, Clone)]
pub struct SegmentSet {
    pub recent: Tensor,
    pub daily: Tensor,
    pub weekly: Tensor,
}

/// Commitment bookkeeping of one thermal unit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ThermalUnitState {
    pub online: bool,
    pub last_p: f64,
    pub steps_since_start: u32,
    pub steps_since_stop: u32,
}

/// How the history buffer is seeded on reset.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WarmupMode {
    /// Replay warm-up steps under a do-nothing baseline (thermal at p_min,
    /// renewables at full availability).
    Replay,
    /// Zero-pad the history and solve a single baseline step.
    ZeroPad,
}

#[derive(Debug, Clone)]
pub struct EnvConfig {
    pub weights: ObjectiveWeights,
    pub wind: WindParams,
    pub solar: SolarParams,
    pub control_mode: ControlMode,
    pub t_recent: usize,
    pub t_daily: usize,
    pub t_weekly: usize,
    pub steps_per_day: usize,
    pub penalty: f64,
    pub lockout_steps: u32,
    pub max_episode_steps: usize,
    pub warmup_mode: WarmupMode,
    pub pf_options: PowerFlowOptions,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            weights: ObjectiveWeights::default(),
            wind: WindParams::default(),
            solar: SolarParams::default(),
            control_mode: ControlMode::PowerVoltage,
            t_recent: 32,
            t_daily: 16,
            t_weekly: 4,
            steps_per_day: 24,
            penalty: -10.0,
            lockout_steps: 4,
            max_episode_steps: 128,
            warmup_mode: WarmupMode::Replay,
            pf_options: PowerFlowOptions::default(),
        }
    }
}

impl EnvConfig {
    /// Warm-up length: one full weekly span.
    pub fn warmup_steps(&self) -> usize {
        7 * self.t_weekly * self.steps_per_day
    }
}

/// Everything one step produced, sufficient to recompute its reward.
#[derive(Debug, Clone)]
pub struct StepRecord {
    pub state: Vec<f64>,
    pub reward: f64,
    pub terminated: bool,
    pub outcome: StepOutcome,
    pub projected: DispatchAction,
    pub sample: AvailabilitySample,
    pub solution: PowerFlowSolution,
    pub violations: ConstraintReport,
}

/// Per-dimension action box (fleet order: thermal, wind, solar; two entries
/// per generator: active power then voltage -- or reactive power in P/Q
/// control mode).
#[derive(Debug, Clone, PartialEq)]
pub struct ActionBounds {
    pub low: Vec<f64>,
    pub high: Vec<f64>,
}

impl ActionBounds {
    pub fn from_case(case: &NetworkCase, mode: ControlMode) -> Self {
        let mut low = Vec::new();
        let mut high = Vec::new();
        for &gi in &case.fleet_order() {
            let g = &case.generators[gi];
            // Thermal active power reaches down to zero so the actor can
            // request a shut-down; projection enforces the p_min floor.
            low.push(0.0);
            high.push(g.p_max);
            match mode {
                ControlMode::PowerVoltage => {
                    low.push(g.v_min);
                    high.push(g.v_max);
                }
                ControlMode::PowerReactive => {
                    low.push(g.q_min);
                    high.push(g.q_max);
                }
            }
        }
        Self { low, high }
    }

    pub fn dim(&self) -> usize {
        self.low.len()
    }

    pub fn clamp(&self, action: &mut [f64]) {
        for (i, a) in action.iter_mut().enumerate() {
            *a = a.clamp(self.low[i], self.high[i]);
        }
    }
}

/// One simulator instance. Single-owner mutable; run parallel copies with
/// independent seeds instead of sharing.
pub struct Environment {
    case: Rc<NetworkCase>,
    config: EnvConfig,
    encoder: Rc<RefCell<Encoder>>,
    incident: Vec<Vec<usize>>,
    fleet_order: Vec<usize>,
    feature_dim: usize,
    history: VecDeque<Vec<f64>>,
    uc: Vec<Option<ThermalUnitState>>,
    faulted: Vec<bool>,
    hour: u32,
    steps_taken: usize,
    rng: ChaCha12Rng,
    last_snapshot: Vec<f64>,
}

impl Environment {
    pub fn new(case: Rc<NetworkCase>, config: EnvConfig, encoder: Rc<RefCell<Encoder>>) -> Self {
        let incident = case.incident_branches();
        let feature_dim = case.feature_dim();
        let fleet_order = case.fleet_order();
        let n_gens = case.generators.len();
        Self {
            case,
            config,
            encoder,
            incident,
            fleet_order,
            feature_dim,
            history: VecDeque::new(),
            uc: vec![None; n_gens],
            faulted: vec![false; n_gens],
            hour: 0,
            steps_taken: 0,
            rng: ChaCha12Rng::seed_from_u64(0),
            last_snapshot: Vec::new(),
        }
    }

    pub fn case(&self) -> &NetworkCase {
        &self.case
    }

    pub fn config(&self) -> &EnvConfig {
        &self.config
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn action_dim(&self) -> usize {
        2 * self.case.generators.len()
    }

    pub fn state_dim(&self) -> usize {
        self.case.n_buses() * self.feature_dim + self.encoder.borrow().output_dim()
    }

    pub fn steps_taken(&self) -> usize {
        self.steps_taken
    }

    pub fn history_len(&self) -> usize {
        self.history.len()
    }

    pub fn unit_commitment(&self) -> &[Option<ThermalUnitState>] {
        &self.uc
    }

    /// Map a flat action vector (fleet order, two entries per generator)
    /// onto a raw dispatch. Projection happens inside `step`.
    pub fn action_to_dispatch(&self, action: &[f64]) -> DispatchAction {
        assert_eq!(action.len(), self.action_dim(), "action length");
        let mut setpoints = vec![
            GenSetpoint {
                p: 0.0,
                v: 1.0,
                q: 0.0,
                online: true,
            };
            self.case.generators.len()
        ];
        for (slot, &gi) in self.fleet_order.iter().enumerate() {
            let p = action[2 * slot];
            let second = action[2 * slot + 1];
            let sp = &mut setpoints[gi];
            sp.p = p;
            match self.config.control_mode {
                ControlMode::PowerVoltage => sp.v = second,
                ControlMode::PowerReactive => sp.q = second,
            }
        }
        DispatchAction {
            mode: self.config.control_mode,
            setpoints,
        }
    }

    /// Deterministic reset: reseed, restore the fleet, and replay the
    /// warm-up so every segment is well-defined.
    pub fn reset(&mut self, seed: u64) -> Vec<f64> {
        self.rng = ChaCha12Rng::seed_from_u64(seed);
        self.history.clear();
        self.steps_taken = 0;
        self.faulted = vec![false; self.case.generators.len()];
        self.hour = self.rng.random_range(0..24);
        self.uc = self
            .case
            .generators
            .iter()
            .map(|g| {
                (g.kind == GeneratorKind::Thermal).then_some(ThermalUnitState {
                    online: true,
                    last_p: g.p_min,
                    steps_since_start: 0,
                    steps_since_stop: 0,
                })
            })
            .collect();

        let warmup = self.config.warmup_steps();
        match self.config.warmup_mode {
            WarmupMode::Replay => {
                for _ in 0..warmup {
                    self.baseline_step();
                }
            }
            WarmupMode::ZeroPad => {
                let zeros = vec![0.0; self.case.n_buses() * self.feature_dim];
                for _ in 0..warmup.saturating_sub(1) {
                    self.history.push_back(zeros.clone());
                }
                self.baseline_step();
            }
        }
        self.current_state()
    }

    /// One do-nothing baseline step: thermal at p_min, renewables at full
    /// availability, nominal voltage setpoints.
    fn baseline_step(&mut self) {
        let sample = sample_availability(
            &self.case,
            &self.config.wind,
            &self.config.solar,
            self.hour,
            &mut self.rng,
        );
        let setpoints = self
            .case
            .generators
            .iter()
            .enumerate()
            .map(|(gi, g)| GenSetpoint {
                p: match g.kind {
                    GeneratorKind::Thermal => g.p_min,
                    _ => sample.gens[gi].as_ref().map(|a| a.p_bar).unwrap_or(0.0),
                },
                v: 1.0,
                q: 0.0,
                online: !self.faulted[gi],
            })
            .collect();
        let dispatch = DispatchAction {
            mode: self.config.control_mode,
            setpoints,
        };
        let sol = solve_power_flow(&self.case, &dispatch, &sample, &self.config.pf_options)
            .expect("dispatch dimensions are consistent");
        self.push_snapshot(&sol);
        self.tick_commitment(&dispatch);
        self.hour = (self.hour + 1) % 24;
    }

    /// Advance commitment counters after a step executed `dispatch`.
    fn tick_commitment(&mut self, dispatch: &DispatchAction) {
        for (gi, slot) in self.uc.iter_mut().enumerate() {
            let Some(state) = slot.as_mut() else { continue };
            let sp = &dispatch.setpoints[gi];
            if sp.online {
                if !state.online {
                    state.steps_since_start = 0;
                }
                state.online = true;
                state.last_p = sp.p;
                state.steps_since_start += 1;
            } else {
                if state.online {
                    state.steps_since_stop = 0;
                }
                state.online = false;
                state.last_p = 0.0;
                state.steps_since_stop += 1;
            }
        }
    }

    fn push_snapshot(&mut self, sol: &PowerFlowSolution) {
        let n = self.case.n_buses();
        let f = self.feature_dim;
        let mut snap = vec![0.0; n * f];
        for bus in 0..n {
            let base = bus * f;
            snap[base] = sol.v_mag[bus];
            snap[base + 1] = sol.v_ang[bus];
            snap[base + 2] = self.case.load_p_pu(bus);
            snap[base + 3] = self.case.load_q_pu(bus);
            for (k, &bi) in self.incident[bus].iter().enumerate() {
                snap[base + 4 + 2 * k] = sol.branch_p[bi];
                snap[base + 4 + 2 * k + 1] = sol.branch_q[bi];
            }
        }
        self.last_snapshot = snap.clone();
        self.history.push_back(snap);
    }

    /// Multi-grained segments ending at the newest snapshot.
    pub fn build_segments(&self) -> SegmentSet {
        let needed = self.min_history();
        assert!(
            self.history.len() >= needed,
            "history {} shorter than required {needed}",
            self.history.len()
        );
        let recent = self.gather(self.config.t_recent, 1);
        let daily = self.gather(self.config.t_daily, self.config.steps_per_day);
        let weekly = self.gather(self.config.t_weekly, 7 * self.config.steps_per_day);
        SegmentSet {
            recent,
            daily,
            weekly,
        }
    }

    fn min_history(&self) -> usize {
        let weekly_span = (self.config.t_weekly - 1) * 7 * self.config.steps_per_day + 1;
        let daily_span = (self.config.t_daily - 1) * self.config.steps_per_day + 1;
        weekly_span.max(daily_span).max(self.config.t_recent)
    }

    /// Stack `t_len` snapshots spaced `stride` apart, newest last, into a
    /// tensor of shape [F', N, t_len].
    fn gather(&self, t_len: usize, stride: usize) -> Tensor {
        let n = self.case.n_buses();
        let f = self.feature_dim;
        let latest = self.history.len() - 1;
        let mut data = vec![0.0; f * n * t_len];
        // slot runs oldest..newest; the newest snapshot lands at the last index
        for slot in 0..t_len {
            let back = (t_len - 1 - slot) * stride;
            let snap = &self.history[latest - back];
            for bus in 0..n {
                for feat in 0..f {
                    data[(feat * n + bus) * t_len + slot] = snap[bus * f + feat];
                }
            }
        }
        Tensor::new(vec![f, n, t_len], data).expect("segment shape")
    }

    /// Flattened node features of the newest snapshot plus the encoder
    /// output.
    pub fn current_state(&self) -> Vec<f64> {
        let mut state = self.last_snapshot.clone();
        let encoder = self.encoder.borrow();
        if encoder.output_dim() > 0 {
            let segments = self.build_segments();
            state.extend(encoder.encode(&segments));
        }
        state
    }

    /// Project a raw action onto the feasible set: thermal ramp limits,
    /// shut-down/start-up lockouts, renewable availability caps, and the
    /// voltage (or reactive) boxes. Total and idempotent.
    pub fn project_action(
        &self,
        raw: &DispatchAction,
        sample: &AvailabilitySample,
    ) -> DispatchAction {
        project_action(
            &self.case,
            raw,
            &self.uc,
            sample,
            &self.faulted,
            self.config.lockout_steps,
        )
    }

    /// The availability sample the next `step` will draw, without advancing
    /// the stream. Lets per-step optimizers search against the same
    /// conditions the step will face.
    pub fn peek_sample(&self) -> AvailabilitySample {
        let mut rng = self.rng.clone();
        sample_availability(
            &self.case,
            &self.config.wind,
            &self.config.solar,
            self.hour,
            &mut rng,
        )
    }

    /// Score a raw action against a fixed availability sample without
    /// mutating the environment: project, solve, reward.
    pub fn evaluate_action(&self, action: &DispatchAction, sample: &AvailabilitySample) -> f64 {
        let projected = self.project_action(action, sample);
        let solution = solve_power_flow(&self.case, &projected, sample, &self.config.pf_options)
            .expect("dispatch dimensions are consistent");
        let (reward, _, _, _) =
            score_solution(&self.case, &self.config, &projected, sample, &solution);
        reward
    }

    /// Run one control step.
    pub fn step(&mut self, action: &DispatchAction) -> StepRecord {
        let sample = sample_availability(
            &self.case,
            &self.config.wind,
            &self.config.solar,
            self.hour,
            &mut self.rng,
        );
        let projected = self.project_action(action, &sample);
        let solution = solve_power_flow(&self.case, &projected, &sample, &self.config.pf_options)
            .expect("dispatch dimensions are consistent");
        let (reward, terminated, outcome, violations) =
            score_solution(&self.case, &self.config, &projected, &sample, &solution);

        if solution.converged {
            self.push_snapshot(&solution);
        } else {
            // Terminal step without a solved operating point: carry the last
            // snapshot forward so the terminal state stays well-formed.
            let snap = self.last_snapshot.clone();
            self.history.push_back(snap);
        }
        self.tick_commitment(&projected);
        self.hour = (self.hour + 1) % 24;
        self.steps_taken += 1;

        StepRecord {
            state: self.current_state(),
            reward,
            terminated,
            outcome,
            projected,
            sample,
            solution,
            violations,
        }
    }

    pub fn hour(&self) -> u32 {
        self.hour
    }

    /// Force generators offline until faults are cleared.
    pub fn inject_fault(&mut self, gen_ids: &[usize]) {
        for &gi in gen_ids {
            assert!(gi < self.faulted.len(), "generator {gi} does not exist");
            self.faulted[gi] = true;
        }
    }

    pub fn clear_faults(&mut self) {
        self.faulted = vec![false; self.case.generators.len()];
    }

    /// Steps until every load voltage re-enters its box under `policy`,
    /// counted from the first post-fault step (0 = immediate recovery).
    /// Capped at `horizon` when recovery never happens.
    pub fn measure_recovery(
        &mut self,
        mut policy: impl FnMut(&Environment, &[f64]) -> Vec<f64>,
        horizon: usize,
    ) -> usize {
        for k in 0..horizon {
            let state = self.current_state();
            let action = self.action_to_dispatch(&policy(self, &state));
            let rec = self.step(&action);
            if rec.solution.converged && self.voltages_within_bounds(&rec.solution) {
                return k;
            }
        }
        horizon
    }

    fn voltages_within_bounds(&self, sol: &PowerFlowSolution) -> bool {
        self.case
            .buses
            .iter()
            .all(|b| sol.v_mag[b.id] >= b.v_min - 1e-9 && sol.v_mag[b.id] <= b.v_max + 1e-9)
    }
}

/// Reward, termination, and outcome bookkeeping for one solved dispatch.
fn score_solution(
    case: &NetworkCase,
    config: &EnvConfig,
    projected: &DispatchAction,
    sample: &AvailabilitySample,
    solution: &PowerFlowSolution,
) -> (f64, bool, StepOutcome, ConstraintReport) {
    let violations = check_constraints(solution, case, projected);
    if !solution.converged {
        let (reward, terminated) =
            step_reward(None, &config.weights, &violations, false, config.penalty);
        let outcome = StepOutcome {
            j_vol: 0.0,
            j_rer: 0.0,
            j_gen: 0.0,
            reward,
            penalty_applied: true,
            terminated,
        };
        return (reward, terminated, outcome, violations);
    }

    let effective = effective_outputs(case, projected, sample);
    let (rer_actual, rer_available): (Vec<f64>, Vec<f64>) = case
        .generators
        .iter()
        .enumerate()
        .filter(|(_, g)| g.kind != GeneratorKind::Thermal)
        .map(|(gi, _)| {
            (
                effective[gi],
                sample.gens[gi].as_ref().map(|a| a.p_bar).unwrap_or(0.0),
            )
        })
        .unzip();
    let ratios = accommodation_ratios(&rer_actual, &rer_available);
    let costs = generation_costs(case, &effective, sample)
        .expect("projected schedule within availability");
    let j_vol = voltage_fluctuation_of(&solution.v_mag);
    let j_rer: f64 = ratios.iter().sum();
    let j_gen = costs.total();
    let terms = RewardTerms {
        v_mag: &solution.v_mag,
        rer_ratios: &ratios,
        costs: &costs,
    };
    let (reward, terminated) = step_reward(
        Some(&terms),
        &config.weights,
        &violations,
        true,
        config.penalty,
    );
    let outcome = StepOutcome {
        j_vol,
        j_rer,
        j_gen,
        reward,
        penalty_applied: violations.penalty_count() > 0,
        terminated,
    };
    (reward, terminated, outcome, violations)
}

/// Pure action projection; see `Environment::project_action`.
pub fn project_action(
    case: &NetworkCase,
    raw: &DispatchAction,
    uc: &[Option<ThermalUnitState>],
    sample: &AvailabilitySample,
    faulted: &[bool],
    lockout_steps: u32,
) -> DispatchAction {
    let mut out = raw.clone();
    for (gi, g) in case.generators.iter().enumerate() {
        let sp = &mut out.setpoints[gi];
        if faulted[gi] {
            sp.online = false;
            sp.p = 0.0;
            continue;
        }
        match g.kind {
            GeneratorKind::Thermal => {
                let st = uc[gi].expect("thermal unit state");
                if st.online {
                    let wants_shutdown = sp.p < g.p_min;
                    let may_shutdown = st.last_p <= g.p_min + 1e-9
                        && st.steps_since_start >= lockout_steps;
                    if wants_shutdown && may_shutdown {
                        sp.online = false;
                        sp.p = 0.0;
                    } else {
                        let span = g.ramp_fraction * g.rated_p;
                        let lo = (st.last_p - span).max(g.p_min);
                        let hi = (st.last_p + span).min(g.p_max);
                        sp.online = true;
                        sp.p = sp.p.clamp(lo, hi.max(lo));
                    }
                } else if sp.p >= g.p_min && st.steps_since_stop >= lockout_steps {
                    // Reconnection happens at the lower limit.
                    sp.online = true;
                    sp.p = g.p_min;
                } else {
                    sp.online = false;
                    sp.p = 0.0;
                }
            }
            GeneratorKind::Wind | GeneratorKind::Solar => {
                let p_bar = sample.gens[gi].as_ref().map(|a| a.p_bar).unwrap_or(0.0);
                sp.online = true;
                sp.p = sp.p.clamp(0.0, p_bar.max(0.0));
            }
        }
        match raw.mode {
            ControlMode::PowerVoltage => sp.v = sp.v.clamp(g.v_min, g.v_max),
            ControlMode::PowerReactive => sp.q = sp.q.clamp(g.q_min, g.q_max),
        }
    }
    out
}
