//! LSTM-PPO motion controllers acting at 3 Hz on a 100 Hz force environment.

mod env;
mod grid;
mod policy;
mod ppo;
mod rollout;
mod train;

pub use env::{ForceEnv, MockEnv, PlantEnv, SurrogateEnv, TickSample};
pub use grid::{grid_select, GridAgent, GridBank, TABLE_REFERENCES};
pub use policy::{policy_layers, squash, squash_log_det, Decision, PolicyCheckpoint, PolicyNet, ACTION_DIM};
pub use ppo::{gae_advantages, ppo_loss, ppo_update, LossInputs, LossParts, PpoBatch, PpoConfig, PpoStats, Segment};
pub use rollout::{
    dual_rate_rollout, ticks_for_step, Agent, EpisodeSpec, PolicyAgent, RandomAgent, TraceRow, Trajectory,
    CONTROL_PERIOD_TICKS,
};
pub use train::{grid_member_seed, train_grid, train_policy, train_single, RefSampler, TrainLog, TrainSpec};

use std::f64::consts::{FRAC_PI_2, PI};

use thiserror::Error;

use crate::nn::NnError;
use crate::plant::{MotorCommand, PlantFault};
use crate::surrogate::SurrogateError;

/// Past actions kept in the state.
pub const HISTORY_K: usize = 4;
/// Control steps per episode (30 s at 3 Hz).
pub const EPISODE_STEPS: usize = 90;
/// Single-controller reference range.
pub const REF_X_RANGE: (f64, f64) = (0.0, 3.0);
pub const REF_Y_RANGE: (f64, f64) = (-1.0, 1.0);

/// Whether a force reference lies in the box the controllers train on.
pub fn in_training_range(r: [f64; 2]) -> bool {
    (REF_X_RANGE.0..=REF_X_RANGE.1).contains(&r[0]) && (REF_Y_RANGE.0..=REF_Y_RANGE.1).contains(&r[1])
}

#[derive(Debug, Error)]
pub enum RlError {
    #[error("non-finite policy output")]
    NonFinitePolicy,
    #[error("tick accounting broken: control steps {steps} used {ticks} ticks")]
    TickAccounting { steps: usize, ticks: usize },
    #[error("grid bank is empty")]
    EmptyBank,
    #[error("policy checkpoint: {0}")]
    Format(String),
    #[error(transparent)]
    Plant(#[from] PlantFault),
    #[error(transparent)]
    Surrogate(#[from] SurrogateError),
    #[error(transparent)]
    Nn(#[from] NnError),
}

/// Open action interval per dimension: (centre, half-width).
pub const ACTION_BOUNDS: [(f64, f64); 2] = [(0.0, FRAC_PI_2), ((1.0 + PI) / 2.0, (PI - 1.0) / 2.0)];

/// Length of the encoded state for history depth `k`.
pub const fn state_dim(k: usize) -> usize {
    3 + 2 * (k + 1)
}

/// The `k + 1` most recently executed actions, newest first.
#[derive(Debug, Clone, PartialEq)]
pub struct ActionHistory {
    actions: Vec<MotorCommand>,
}

impl ActionHistory {
    /// Filled with the neutral action.
    pub fn new(k: usize) -> Self {
        ActionHistory {
            actions: vec![MotorCommand::NEUTRAL; k + 1],
        }
    }

    pub fn push(&mut self, a: MotorCommand) {
        self.actions.pop();
        self.actions.insert(0, a);
    }

    pub fn as_slice(&self) -> &[MotorCommand] {
        &self.actions
    }
}

/// `[θ, F_ref_x, F_ref_y, a_t, …, a_{t−k}]` with each action as (angle, speed).
/// Missing history entries are padded with the neutral action.
pub fn encode_state(theta: f64, reference: [f64; 2], history: &[MotorCommand], k: usize) -> Vec<f64> {
    let mut s = Vec::with_capacity(state_dim(k));
    s.push(theta);
    s.extend_from_slice(&reference);
    for i in 0..=k {
        let a = history.get(i).copied().unwrap_or(MotorCommand::NEUTRAL);
        s.push(a.target_angle);
        s.push(a.target_angular_velocity);
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn state_layout() {
        let s = encode_state(0.3, [2.0, -1.0], &[], 4);
        assert_eq!(s.len(), 13);
        assert_eq!(&s[..3], &[0.3, 2.0, -1.0]);
        assert!(s[3..].chunks(2).all(|a| a == [0.0, 1.0]));
        let a = MotorCommand::new(0.5, 2.0);
        let b = MotorCommand::new(-0.5, 3.0);
        let ab = encode_state(0.0, [0.0, 0.0], &[a, b], 4);
        let ba = encode_state(0.0, [0.0, 0.0], &[b, a], 4);
        assert_ne!(ab, ba);
    }

    #[test]
    fn history_keeps_newest_first() {
        let mut h = ActionHistory::new(2);
        for i in 1..=4 {
            h.push(MotorCommand::new(0.1 * i as f64, 1.5));
        }
        let angles: Vec<f64> = h.as_slice().iter().map(|a| a.target_angle).collect();
        assert_eq!(angles, vec![0.4, 0.30000000000000004, 0.2]);
    }
}
