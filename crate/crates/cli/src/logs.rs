//! Run-directory artifacts: per-step and per-episode CSVs, the metrics
//! document, config snapshot, and RNG-state record. Every file is written
//! atomically (temp file + rename) and contains no wall-clock timestamps, so
//! reruns with identical config and seed are bit-identical.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use feederlab_agent::env::StepRecord;
use feederlab_grid::case::NetworkCase;
use feederlab_grid::dispatch::ControlMode;

use crate::CliError;

pub struct RunDir {
    root: PathBuf,
}

impl RunDir {
    pub fn create(root: &Path) -> Result<Self, CliError> {
        fs::create_dir_all(root)
            .map_err(|e| CliError::Config(format!("cannot create {}: {e}", root.display())))?;
        Ok(Self {
            root: root.to_path_buf(),
        })
    }

    pub fn join(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    /// Atomic write: temp file in the same directory, then rename.
    pub fn write(&self, name: &str, contents: &str) -> Result<(), CliError> {
        let target = self.root.join(name);
        let tmp = self.root.join(format!("{name}.tmp"));
        fs::write(&tmp, contents)
            .map_err(|e| CliError::Config(format!("cannot write {}: {e}", tmp.display())))?;
        fs::rename(&tmp, &target)
            .map_err(|e| CliError::Config(format!("cannot finalize {}: {e}", target.display())))?;
        Ok(())
    }
}

/// Accumulates per-step and per-episode rows with the fixed schema.
pub struct CsvLogger {
    step_rows: String,
    episode_rows: String,
    gen_count: usize,
    // per-episode accumulators
    current_episode: Option<usize>,
    ep_steps: usize,
    ep_return: f64,
    ep_terminated: bool,
}

impl CsvLogger {
    pub fn new(case: &NetworkCase, mode: ControlMode) -> Self {
        let mut header = String::from(
            "episode,step,reward,j_vol,j_rer,j_gen,penalties,converged",
        );
        let second = match mode {
            ControlMode::PowerVoltage => "v",
            ControlMode::PowerReactive => "q",
        };
        for slot in 0..case.generators.len() {
            let _ = write!(header, ",gen{slot}_p,gen{slot}_{second}");
        }
        header.push('\n');
        Self {
            step_rows: header,
            episode_rows: String::from("episode,steps,return,terminated\n"),
            gen_count: case.generators.len(),
            current_episode: None,
            ep_steps: 0,
            ep_return: 0.0,
            ep_terminated: false,
        }
    }

    pub fn record(&mut self, episode: usize, step: usize, rec: &StepRecord) {
        if self.current_episode != Some(episode) {
            self.flush_episode();
            self.current_episode = Some(episode);
        }
        self.ep_steps += 1;
        self.ep_return += rec.reward;
        self.ep_terminated |= rec.terminated;

        let penalties = rec.violations.penalty_count();
        let _ = write!(
            self.step_rows,
            "{episode},{step},{},{},{},{},{penalties},{}",
            rec.reward,
            rec.outcome.j_vol,
            rec.outcome.j_rer,
            rec.outcome.j_gen,
            rec.solution.converged
        );
        let fleet_order: Vec<usize> = (0..self.gen_count).collect();
        for gi in fleet_order {
            let sp = &rec.projected.setpoints[gi];
            let second = match rec.projected.mode {
                ControlMode::PowerVoltage => sp.v,
                ControlMode::PowerReactive => sp.q,
            };
            let _ = write!(self.step_rows, ",{},{}", sp.p, second);
        }
        self.step_rows.push('\n');
    }

    fn flush_episode(&mut self) {
        if let Some(ep) = self.current_episode.take() {
            let _ = writeln!(
                self.episode_rows,
                "{ep},{},{},{}",
                self.ep_steps, self.ep_return, self.ep_terminated
            );
            self.ep_steps = 0;
            self.ep_return = 0.0;
            self.ep_terminated = false;
        }
    }

    pub fn finish(mut self) -> (String, String) {
        self.flush_episode();
        (self.step_rows, self.episode_rows)
    }
}
