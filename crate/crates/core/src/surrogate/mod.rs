//! Two-stage learned simulator of the fin: PosNet maps the command history to
//! the next motor angle, ForceNet maps the angle trajectory to the 2-D force.

mod evaluate;
mod sim;
mod train;

pub use evaluate::{evaluate_surrogate, predict_log, score_predictions, MetricsRow, MetricsTable, Predictions};
pub use sim::{forcenet_step, posnet_step, surrogate_rollout, Rollout, SurrogateSim};
pub use train::{
    forcenet_windows, posnet_examples, train_forcenet, train_posnet, train_surrogate, fit_forcenet,
    fit_posnet, ForceWindowSet, PosExampleSet, TrainConfig, TrainReport,
};

use std::path::Path;

use rand::Rng;
use thiserror::Error;

use crate::datagen::DataLog;
use crate::nn::{Activation, Checkpoint, LayerKind, Network, NnError};
use crate::plant::{MotorCommand, DT};

/// Samples per network input window.
pub const WINDOW: usize = 100;
/// ForceNet chains are restarted every `WINDOW` steps and read out only once
/// they have seen more than `FORCE_WARMUP` inputs.
pub const FORCE_WARMUP: usize = WINDOW / 2;
/// Parameter counts of the reference implementation, reported for comparison.
pub const REFERENCE_POSNET_PARAMS: usize = 113_601;
pub const REFERENCE_FORCENET_PARAMS: usize = 129_794;

#[derive(Debug, Error)]
pub enum SurrogateError {
    #[error("no training examples")]
    Empty,
    #[error("need at least {need} windowed examples, got {got}")]
    TooFewExamples { need: usize, got: usize },
    #[error("{net} training diverged at epoch {epoch}: loss {loss:.3e} exceeds 10x the initial {initial:.3e}")]
    Diverged {
        net: &'static str,
        epoch: usize,
        loss: f64,
        initial: f64,
    },
    #[error("non-finite {what} input")]
    NonFiniteInput { what: &'static str },
    #[error("checkpoint is not a surrogate: {0}")]
    Format(String),
    #[error(transparent)]
    Nn(#[from] NnError),
}

/// Per-channel affine normalisation `(x − mean) / std`.
#[derive(Debug, Clone, PartialEq)]
pub struct Normalizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Normalizer {
    /// Statistics of each channel; a constant channel gets `std = 1`.
    pub fn fit(channels: &[&[f64]]) -> Self {
        let mut mean = Vec::with_capacity(channels.len());
        let mut std = Vec::with_capacity(channels.len());
        for c in channels {
            let m = crate::metrics::mean(c);
            let s = crate::metrics::std_dev(c);
            mean.push(m);
            std.push(if s > 1e-12 && s.is_finite() { s } else { 1.0 });
        }
        Normalizer { mean, std }
    }

    pub fn identity(channels: usize) -> Self {
        Normalizer {
            mean: vec![0.0; channels],
            std: vec![1.0; channels],
        }
    }

    pub fn channels(&self) -> usize {
        self.mean.len()
    }

    pub fn normalize(&self, ch: usize, x: f64) -> f64 {
        (x - self.mean[ch]) / self.std[ch]
    }

    pub fn denormalize(&self, ch: usize, z: f64) -> f64 {
        z * self.std[ch] + self.mean[ch]
    }

    fn is_valid(&self) -> bool {
        self.mean.len() == self.std.len()
            && self.mean.iter().all(|v| v.is_finite())
            && self.std.iter().all(|v| v.is_finite() && *v > 0.0)
    }
}

/// conv1d(3→16,k5) relu conv1d(16→32,k5) relu flatten linear(·→64) relu
/// linear(64→32) relu linear(32→1)
pub fn posnet_layers() -> Vec<LayerKind> {
    let flat = 32 * (WINDOW - 8);
    vec![
        LayerKind::Conv1d {
            in_channels: 3,
            out_channels: 16,
            kernel: 5,
            stride: 1,
        },
        LayerKind::Activation(Activation::Relu),
        LayerKind::Conv1d {
            in_channels: 16,
            out_channels: 32,
            kernel: 5,
            stride: 1,
        },
        LayerKind::Activation(Activation::Relu),
        LayerKind::Linear {
            inputs: flat,
            outputs: 64,
        },
        LayerKind::Activation(Activation::Relu),
        LayerKind::Linear { inputs: 64, outputs: 32 },
        LayerKind::Activation(Activation::Relu),
        LayerKind::Linear { inputs: 32, outputs: 1 },
    ]
}

/// lstm(2→96) linear(96→64) relu linear(64→32) relu dropout(0.2) linear(32→2)
pub fn forcenet_layers() -> Vec<LayerKind> {
    vec![
        LayerKind::Lstm { inputs: 2, hidden: 96 },
        LayerKind::Linear { inputs: 96, outputs: 64 },
        LayerKind::Activation(Activation::Relu),
        LayerKind::Linear { inputs: 64, outputs: 32 },
        LayerKind::Activation(Activation::Relu),
        LayerKind::Dropout { p: 0.2 },
        LayerKind::Linear { inputs: 32, outputs: 2 },
    ]
}

/// PosNet input row `j`: the command applied at `j` and the angle after step `j − 1`.
pub fn pos_row(cmd: MotorCommand, theta_prev: f64) -> [f64; 3] {
    [cmd.target_angle, cmd.target_angular_velocity, theta_prev]
}

/// ForceNet input row: angle and its backward difference.
pub fn force_row(theta: f64, theta_prev: f64) -> [f64; 2] {
    [theta, (theta - theta_prev) / DT]
}

/// The state assumed before the first logged sample: at rest at zero,
/// holding the neutral command.
pub const REST_POS_ROW: [f64; 3] = [0.0, 1.0, 0.0];
pub const REST_FORCE_ROW: [f64; 2] = [0.0, 0.0];

/// Trained surrogate: both networks plus their normalisation constants.
/// PosNet predicts the normalised one-step angle increment.
#[derive(Debug, Clone, PartialEq)]
pub struct SurrogateModel {
    pub posnet: Network<f64>,
    pub forcenet: Network<f64>,
    /// cmd_angle, cmd_omega, previous angle
    pub pos_in: Normalizer,
    /// angle increment per step
    pub pos_out: Normalizer,
    /// angle, angular velocity
    pub force_in: Normalizer,
    /// fx, fy
    pub force_out: Normalizer,
}

impl SurrogateModel {
    /// Randomly initialised networks with statistics taken from `logs`.
    pub fn init<R: Rng + ?Sized>(logs: &[&DataLog], rng: &mut R) -> Result<Self, SurrogateError> {
        if logs.iter().all(|l| l.is_empty()) {
            return Err(SurrogateError::Empty);
        }
        let (pos_in, pos_out, force_in, force_out) = fit_normalizers(logs);
        Ok(SurrogateModel {
            posnet: Network::new(&posnet_layers(), rng)?,
            forcenet: Network::new(&forcenet_layers(), rng)?,
            pos_in,
            pos_out,
            force_in,
            force_out,
        })
    }

    pub fn validate(&self) -> Result<(), SurrogateError> {
        let ok = self.pos_in.channels() == 3
            && self.pos_out.channels() == 1
            && self.force_in.channels() == 2
            && self.force_out.channels() == 2
            && [&self.pos_in, &self.pos_out, &self.force_in, &self.force_out]
                .iter()
                .all(|n| n.is_valid());
        if !ok {
            return Err(SurrogateError::Format("bad normalisation constants".into()));
        }
        if self.posnet.kinds() != posnet_layers() || self.forcenet.kinds() != forcenet_layers() {
            return Err(SurrogateError::Format("unexpected layer stack".into()));
        }
        Ok(())
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut ck = Checkpoint::new()
            .with_meta("kind", "surrogate")
            .with_meta("window", WINDOW)
            .with_net("posnet", &self.posnet)
            .with_net("forcenet", &self.forcenet);
        for (name, n) in self.normalizers() {
            ck = ck
                .with_block(&format!("{name}.mean"), n.mean.clone())
                .with_block(&format!("{name}.std"), n.std.clone());
        }
        ck
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self, SurrogateError> {
        if ck.meta("kind")? != "surrogate" {
            return Err(SurrogateError::Format(format!("kind is `{}`", ck.meta("kind")?)));
        }
        if ck.meta("window")? != WINDOW.to_string() {
            return Err(SurrogateError::Format(format!("window is {}", ck.meta("window")?)));
        }
        let norm = |name: &str| -> Result<Normalizer, SurrogateError> {
            Ok(Normalizer {
                mean: ck.block(&format!("{name}.mean"))?.to_vec(),
                std: ck.block(&format!("{name}.std"))?.to_vec(),
            })
        };
        let m = SurrogateModel {
            posnet: ck.net("posnet")?.clone(),
            forcenet: ck.net("forcenet")?.clone(),
            pos_in: norm("pos_in")?,
            pos_out: norm("pos_out")?,
            force_in: norm("force_in")?,
            force_out: norm("force_out")?,
        };
        m.validate()?;
        Ok(m)
    }

    pub fn save(&self, path: &Path) -> Result<(), SurrogateError> {
        Ok(self.to_checkpoint().save(path)?)
    }

    pub fn load(path: &Path) -> Result<Self, SurrogateError> {
        Self::from_checkpoint(&Checkpoint::load(path)?)
    }

    fn normalizers(&self) -> [(&'static str, &Normalizer); 4] {
        [
            ("pos_in", &self.pos_in),
            ("pos_out", &self.pos_out),
            ("force_in", &self.force_in),
            ("force_out", &self.force_out),
        ]
    }
}

/// Channel statistics over the training logs.
pub fn fit_normalizers(logs: &[&DataLog]) -> (Normalizer, Normalizer, Normalizer, Normalizer) {
    let mut prev_theta = Vec::new();
    let mut dtheta = Vec::new();
    let mut omega = Vec::new();
    for log in logs {
        for k in 0..log.len() {
            let p = if k == 0 { 0.0 } else { log.theta[k - 1] };
            prev_theta.push(p);
            dtheta.push(log.theta[k] - p);
            omega.push((log.theta[k] - p) / DT);
        }
    }
    let cat = |f: fn(&DataLog) -> &Vec<f64>| -> Vec<f64> {
        logs.iter().flat_map(|l| f(l).iter().copied()).collect()
    };
    let (ca, co, th, fx, fy) = (
        cat(|l| &l.cmd_angle),
        cat(|l| &l.cmd_omega),
        cat(|l| &l.theta),
        cat(|l| &l.fx),
        cat(|l| &l.fy),
    );
    (
        Normalizer::fit(&[&ca, &co, &prev_theta]),
        Normalizer::fit(&[&dtheta]),
        Normalizer::fit(&[&th, &omega]),
        Normalizer::fit(&[&fx, &fy]),
    )
}
