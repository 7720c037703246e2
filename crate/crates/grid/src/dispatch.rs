//! Per-generator setpoints — the controllable quantities of one time step.

use serde::{Deserialize, Serialize};

/// Which pair of quantities the agent manipulates per generator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum ControlMode {
    /// Active power and voltage magnitude (generator buses become PV nodes).
    #[default]
    PowerVoltage,
    /// Active and reactive power (generator buses stay PQ nodes).
    PowerReactive,
}

/// Setpoint for a single generator. `v` is used in `PowerVoltage` mode,
/// `q` in `PowerReactive` mode; the other is carried along untouched.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GenSetpoint {
    pub p: f64,
    pub v: f64,
    pub q: f64,
    pub online: bool,
}

/// Setpoints for the whole fleet, indexed like `NetworkCase::generators`.
#[derive(Debug, Clone, PartialEq)]
pub struct DispatchAction {
    pub mode: ControlMode,
    pub setpoints: Vec<GenSetpoint>,
}

impl DispatchAction {
    pub fn all_online(mode: ControlMode, n: usize) -> Self {
        Self {
            mode,
            setpoints: vec![
                GenSetpoint {
                    p: 0.0,
                    v: 1.0,
                    q: 0.0,
                    online: true,
                };
                n
            ],
        }
    }
}
