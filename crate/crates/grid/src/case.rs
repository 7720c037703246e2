//! Static network description: buses, branches, generator fleet, and the
//! structured-text case document they are loaded from.
//!
//! A case document is TOML with top-level keys `name`, `base_mva`, `base_kv`,
//! `slack_bus` and arrays `buses`, `branches`, `generators`. Loads are given
//! in MW/MVAR, branch impedances in ohms, branch ratings in MVA; generator
//! quantities are already per-unit on `base_mva`. At most one generator may
//! sit on a bus and no generator may sit on the slack bus.

use std::io::Read;

use serde::Deserialize;
use thiserror::Error;

/// A network bus. Loads are stored in physical units (MW / MVAR); use the
/// `load_p_pu`/`load_q_pu` accessors on [`NetworkCase`] for per-unit values.
#[derive(Debug, Clone)]
pub struct Bus {
    pub id: usize,
    pub load_p: f64,
    pub load_q: f64,
    pub v_min: f64,
    pub v_max: f64,
    pub is_slack: bool,
}

/// A series branch, impedance already converted to per-unit.
#[derive(Debug, Clone)]
pub struct Branch {
    pub from: usize,
    pub to: usize,
    pub r: f64,
    pub x: f64,
    pub s_max: f64,
}

impl Branch {
    /// Series conductance g = r / (r^2 + x^2).
    pub fn conductance(&self) -> f64 {
        self.r / (self.r * self.r + self.x * self.x)
    }

    /// Series susceptance magnitude b = x / (r^2 + x^2).
    pub fn susceptance(&self) -> f64 {
        self.x / (self.r * self.r + self.x * self.x)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum GeneratorKind {
    Thermal,
    Wind,
    Solar,
}

impl GeneratorKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            GeneratorKind::Thermal => "thermal",
            GeneratorKind::Wind => "wind",
            GeneratorKind::Solar => "solar",
        }
    }
}

/// Cost coefficients: quadratic polynomial for thermal units, reserve and
/// penalty coefficients for renewables.
#[derive(Debug, Clone, Copy)]
pub struct CostParams {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub reserve_coeff: f64,
    pub penalty_coeff: f64,
}

/// A generator. All power quantities per-unit on the system base.
#[derive(Debug, Clone)]
pub struct Generator {
    pub kind: GeneratorKind,
    pub bus: usize,
    pub p_min: f64,
    pub p_max: f64,
    pub q_min: f64,
    pub q_max: f64,
    pub v_min: f64,
    pub v_max: f64,
    pub rated_p: f64,
    pub ramp_fraction: f64,
    pub cost: CostParams,
}

/// The immutable grid description. Shareable across threads once built.
#[derive(Debug, Clone)]
pub struct NetworkCase {
    pub name: String,
    pub base_mva: f64,
    pub base_kv: f64,
    pub buses: Vec<Bus>,
    pub branches: Vec<Branch>,
    pub generators: Vec<Generator>,
    pub slack_bus: usize,
}

impl NetworkCase {
    pub fn n_buses(&self) -> usize {
        self.buses.len()
    }

    pub fn load_p_pu(&self, bus: usize) -> f64 {
        self.buses[bus].load_p / self.base_mva
    }

    pub fn load_q_pu(&self, bus: usize) -> f64 {
        self.buses[bus].load_q / self.base_mva
    }

    pub fn total_load_p_mw(&self) -> f64 {
        self.buses.iter().map(|b| b.load_p).sum()
    }

    pub fn total_load_q_mvar(&self) -> f64 {
        self.buses.iter().map(|b| b.load_q).sum()
    }

    /// Generator indices grouped by kind, preserving file order within a kind.
    /// This ordering (thermal, wind, solar) defines the action layout.
    pub fn fleet_order(&self) -> Vec<usize> {
        let mut order = Vec::with_capacity(self.generators.len());
        for kind in [
            GeneratorKind::Thermal,
            GeneratorKind::Wind,
            GeneratorKind::Solar,
        ] {
            order.extend(
                self.generators
                    .iter()
                    .enumerate()
                    .filter(|(_, g)| g.kind == kind)
                    .map(|(i, _)| i),
            );
        }
        order
    }

    pub fn count_kind(&self, kind: GeneratorKind) -> usize {
        self.generators.iter().filter(|g| g.kind == kind).count()
    }

    /// Branch indices incident to each bus, ascending by branch index.
    pub fn incident_branches(&self) -> Vec<Vec<usize>> {
        let mut inc = vec![Vec::new(); self.buses.len()];
        for (bi, br) in self.branches.iter().enumerate() {
            inc[br.from].push(bi);
            inc[br.to].push(bi);
        }
        inc
    }

    /// Highest node feature dimension: voltage magnitude/angle, load p/q,
    /// plus (p, q) per incident branch.
    pub fn feature_dim(&self) -> usize {
        let max_deg = self
            .incident_branches()
            .iter()
            .map(Vec::len)
            .max()
            .unwrap_or(0);
        4 + 2 * max_deg
    }
}

#[derive(Debug, Error)]
pub enum CaseError {
    #[error("failed to read case document: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed case document: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid case: {0}")]
    Invalid(ValidationReport),
}

/// One invariant violation with enough context to locate it.
#[derive(Debug, Clone, PartialEq)]
pub struct CaseViolation {
    pub entity: String,
    pub message: String,
}

impl std::fmt::Display for CaseViolation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}: {}", self.entity, self.message)
    }
}

/// Validation outcome; empty iff the case satisfies every invariant.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ValidationReport {
    pub violations: Vec<CaseViolation>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }

    fn push(&mut self, entity: impl Into<String>, message: impl Into<String>) {
        self.violations.push(CaseViolation {
            entity: entity.into(),
            message: message.into(),
        });
    }
}

impl std::fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        if self.violations.is_empty() {
            return write!(f, "valid");
        }
        for (i, v) in self.violations.iter().enumerate() {
            if i > 0 {
                writeln!(f)?;
            }
            write!(f, "{v}")?;
        }
        Ok(())
    }
}

impl std::error::Error for ValidationReport {}

// Raw document shape, kept separate from the domain types so that unit
// conversion happens in exactly one place.
#[derive(Debug, Deserialize)]
struct RawCase {
    name: String,
    base_mva: f64,
    base_kv: f64,
    slack_bus: usize,
    buses: Vec<RawBus>,
    branches: Vec<RawBranch>,
    #[serde(default)]
    generators: Vec<RawGenerator>,
}

#[derive(Debug, Deserialize)]
struct RawBus {
    id: usize,
    load_p_mw: f64,
    load_q_mvar: f64,
    v_min: f64,
    v_max: f64,
}

#[derive(Debug, Deserialize)]
struct RawBranch {
    from: usize,
    to: usize,
    r_ohm: f64,
    x_ohm: f64,
    s_max_mva: f64,
}

#[derive(Debug, Deserialize)]
struct RawGenerator {
    kind: String,
    bus: usize,
    p_min: f64,
    p_max: f64,
    q_min: f64,
    q_max: f64,
    v_min: f64,
    v_max: f64,
    rated_p: f64,
    #[serde(default = "default_ramp")]
    ramp_fraction: f64,
    cost: RawCost,
}

#[derive(Debug, Deserialize)]
struct RawCost {
    #[serde(default)]
    a: f64,
    #[serde(default)]
    b: f64,
    #[serde(default)]
    c: f64,
    #[serde(default)]
    reserve: f64,
    #[serde(default)]
    penalty: f64,
}

fn default_ramp() -> f64 {
    0.25
}

/// Load and validate a case document.
pub fn load_case(mut source: impl Read) -> Result<NetworkCase, CaseError> {
    let mut text = String::new();
    source.read_to_string(&mut text)?;
    let raw: RawCase = toml::from_str(&text)?;

    let z_base = raw.base_kv * raw.base_kv / raw.base_mva;
    let buses = raw
        .buses
        .iter()
        .map(|b| Bus {
            id: b.id,
            load_p: b.load_p_mw,
            load_q: b.load_q_mvar,
            v_min: b.v_min,
            v_max: b.v_max,
            is_slack: b.id == raw.slack_bus,
        })
        .collect();
    let branches = raw
        .branches
        .iter()
        .map(|b| Branch {
            from: b.from,
            to: b.to,
            r: b.r_ohm / z_base,
            x: b.x_ohm / z_base,
            s_max: b.s_max_mva / raw.base_mva,
        })
        .collect();
    let generators = raw
        .generators
        .iter()
        .map(|g| {
            let kind = match g.kind.as_str() {
                "thermal" => Ok(GeneratorKind::Thermal),
                "wind" => Ok(GeneratorKind::Wind),
                "solar" => Ok(GeneratorKind::Solar),
                other => Err(toml::de::Error::custom(format!(
                    "unknown generator kind `{other}`"
                ))),
            }?;
            Ok(Generator {
                kind,
                bus: g.bus,
                p_min: g.p_min,
                p_max: g.p_max,
                q_min: g.q_min,
                q_max: g.q_max,
                v_min: g.v_min,
                v_max: g.v_max,
                rated_p: g.rated_p,
                ramp_fraction: g.ramp_fraction,
                cost: CostParams {
                    a: g.cost.a,
                    b: g.cost.b,
                    c: g.cost.c,
                    reserve_coeff: g.cost.reserve,
                    penalty_coeff: g.cost.penalty,
                },
            })
        })
        .collect::<Result<Vec<_>, toml::de::Error>>()?;

    let case = NetworkCase {
        name: raw.name,
        base_mva: raw.base_mva,
        base_kv: raw.base_kv,
        buses,
        branches,
        generators,
        slack_bus: raw.slack_bus,
    };
    let report = validate_case(&case);
    if !report.is_valid() {
        return Err(CaseError::Invalid(report));
    }
    Ok(case)
}

use serde::de::Error as _;

/// Check every case invariant; the report lists each violation with the
/// offending bus/branch/generator.
pub fn validate_case(case: &NetworkCase) -> ValidationReport {
    let mut report = ValidationReport::default();
    let n = case.buses.len();

    if n == 0 {
        report.push("case", "no buses");
        return report;
    }

    for (i, bus) in case.buses.iter().enumerate() {
        if bus.id != i {
            report.push(
                format!("bus {}", bus.id),
                format!("ids must be contiguous from 0 (position {i})"),
            );
        }
        if !(bus.v_min < bus.v_max) {
            report.push(format!("bus {}", bus.id), "v_min must be below v_max");
        }
        if !bus.load_p.is_finite() || !bus.load_q.is_finite() {
            report.push(format!("bus {}", bus.id), "non-finite load");
        }
    }

    let slack_count = case.buses.iter().filter(|b| b.is_slack).count();
    if slack_count == 0 {
        report.push("case", "missing slack bus");
    } else if slack_count > 1 {
        report.push("case", "multiple slack buses");
    }
    if case.slack_bus >= n {
        report.push("case", format!("slack bus {} does not exist", case.slack_bus));
    }

    for (bi, br) in case.branches.iter().enumerate() {
        let tag = format!("branch {bi} ({}-{})", br.from, br.to);
        if br.from == br.to {
            report.push(tag.clone(), "connects a bus to itself");
            continue;
        }
        if br.from >= n || br.to >= n {
            report.push(tag.clone(), "endpoint bus does not exist");
            continue;
        }
        if br.r < 0.0 {
            report.push(tag.clone(), "negative resistance");
        }
        if !(br.x > 0.0 || br.r > 0.0) {
            report.push(tag.clone(), "zero impedance");
        }
        if !(br.s_max > 0.0) {
            report.push(tag.clone(), "s_max must be positive");
        }
    }

    // Radial tree: exactly N-1 branches and connected from the slack.
    if case.branches.len() + 1 != n {
        report.push(
            "case",
            format!(
                "radial network needs {} branches, found {}",
                n - 1,
                case.branches.len()
            ),
        );
    }
    if case.slack_bus < n {
        let mut seen = vec![false; n];
        let mut stack = vec![case.slack_bus];
        seen[case.slack_bus] = true;
        let adjacency = case.incident_branches();
        while let Some(b) = stack.pop() {
            for &bi in &adjacency[b] {
                let br = &case.branches[bi];
                if br.from >= n || br.to >= n {
                    continue;
                }
                let other = if br.from == b { br.to } else { br.from };
                if !seen[other] {
                    seen[other] = true;
                    stack.push(other);
                }
            }
        }
        let unreached = seen.iter().filter(|s| !**s).count();
        if unreached > 0 {
            report.push(
                "case",
                format!("{unreached} buses unreachable from the slack bus"),
            );
        }
    }

    let mut occupied = vec![false; n];
    for (gi, g) in case.generators.iter().enumerate() {
        let tag = format!("generator {gi} ({})", g.kind.as_str());
        if g.bus >= n {
            report.push(tag.clone(), format!("bus {} does not exist", g.bus));
            continue;
        }
        if g.bus == case.slack_bus {
            report.push(tag.clone(), "placed on the slack bus");
        }
        if occupied[g.bus] {
            report.push(tag.clone(), format!("bus {} already has a generator", g.bus));
        }
        occupied[g.bus] = true;
        if g.p_min > g.p_max {
            report.push(tag.clone(), "p_min above p_max");
        }
        if g.q_min > g.q_max {
            report.push(tag.clone(), "q_min above q_max");
        }
        if !(g.v_min < g.v_max) {
            report.push(tag.clone(), "v_min must be below v_max");
        }
        if !(g.ramp_fraction > 0.0 && g.ramp_fraction <= 1.0) {
            report.push(tag.clone(), "ramp_fraction outside (0, 1]");
        }
        if g.cost.a < 0.0 || g.cost.reserve_coeff < 0.0 || g.cost.penalty_coeff < 0.0 {
            report.push(tag.clone(), "negative cost coefficient");
        }
        if !(g.rated_p > 0.0) {
            report.push(tag, "rated_p must be positive");
        }
    }

    report
}
