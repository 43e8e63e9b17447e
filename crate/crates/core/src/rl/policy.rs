use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{state_dim, RlError, ACTION_BOUNDS, REF_X_RANGE, REF_Y_RANGE};
use crate::nn::{linear_apply, lstm_step, Activation, Checkpoint, Layer, LayerKind, Network};
use crate::plant::MotorCommand;

pub const ACTION_DIM: usize = 2;
/// mean θ, mean ω, log-std θ, log-std ω, value
pub const HEAD_DIM: usize = 2 * ACTION_DIM + 1;
pub const LOG_STD_MIN: f64 = -4.0;
pub const LOG_STD_MAX: f64 = 1.0;
/// Keeps squashed actions strictly inside the open bounds.
const SQUASH_MARGIN: f64 = 1.0 - 1e-6;
const LN_2PI: f64 = 1.837_877_066_409_345_3;

/// Recurrent actor-critic: lstm(state→H) linear(H→H) relu linear(H→5).
/// The last layer carries both the Gaussian actor head (means and log-stds in
/// pre-squash space) and the critic output.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyNet {
    pub net: Network<f64>,
    pub k: usize,
    pub obs_mean: Vec<f64>,
    pub obs_std: Vec<f64>,
    /// Critic output is in units of this many reward points.
    pub value_scale: f64,
}

/// Fixed observation scaling derived from the state ranges.
fn obs_scaling(k: usize) -> (Vec<f64>, Vec<f64>) {
    let mut mean = vec![
        0.0,
        0.5 * (REF_X_RANGE.0 + REF_X_RANGE.1),
        0.5 * (REF_Y_RANGE.0 + REF_Y_RANGE.1),
    ];
    let mut std = vec![
        ACTION_BOUNDS[0].1,
        0.5 * (REF_X_RANGE.1 - REF_X_RANGE.0),
        0.5 * (REF_Y_RANGE.1 - REF_Y_RANGE.0),
    ];
    for _ in 0..=k {
        for (c, h) in ACTION_BOUNDS {
            mean.push(c);
            std.push(h);
        }
    }
    (mean, std)
}

pub fn policy_layers(state_dim: usize, hidden: usize) -> Vec<LayerKind> {
    vec![
        LayerKind::Lstm {
            inputs: state_dim,
            hidden,
        },
        LayerKind::Linear {
            inputs: hidden,
            outputs: hidden,
        },
        LayerKind::Activation(Activation::Relu),
        LayerKind::Linear {
            inputs: hidden,
            outputs: HEAD_DIM,
        },
    ]
}

impl PolicyNet {
    /// Fresh policy; the output layer starts small so initial actions sit
    /// near the centre with std `exp(init_log_std)`.
    pub fn new<R: Rng + ?Sized>(
        k: usize,
        hidden: usize,
        init_log_std: f64,
        value_scale: f64,
        rng: &mut R,
    ) -> Result<Self, RlError> {
        let mut net = Network::new(&policy_layers(state_dim(k), hidden), rng)?;
        let n = net.layers().len();
        {
            let mut params: Vec<_> = net.params_mut().collect();
            let len = params.len();
            params[len - 2].data_mut().iter_mut().for_each(|w| *w *= 0.01);
            let b = params[len - 1].data_mut();
            b.fill(0.0);
            b[2] = init_log_std;
            b[3] = init_log_std;
        }
        debug_assert_eq!(n, 4);
        let (obs_mean, obs_std) = obs_scaling(k);
        Ok(PolicyNet {
            net,
            k,
            obs_mean,
            obs_std,
            value_scale,
        })
    }

    pub fn state_dim(&self) -> usize {
        state_dim(self.k)
    }

    pub fn hidden(&self) -> usize {
        match self.net.layers()[0].kind() {
            LayerKind::Lstm { hidden, .. } => hidden,
            k => unreachable!("{k}"),
        }
    }

    pub fn normalize_into(&self, state: &[f64], out: &mut Vec<f64>) {
        out.extend(
            state
                .iter()
                .zip(self.obs_mean.iter().zip(&self.obs_std))
                .map(|(x, (m, s))| (x - m) / s),
        );
    }

    /// One recurrent step for `n` states (normalised, row-major); updates
    /// `h`, `c` in place and writes `[n, HEAD_DIM]` raw head outputs.
    pub fn step(&self, obs: &[f64], h: &mut [f64], c: &mut [f64], head: &mut Vec<f64>, scratch: &mut Vec<f64>) {
        let layers = self.net.layers();
        let hidden = self.hidden();
        let n = h.len() / hidden;
        lstm_step(&layers[0], obs, h, c, scratch);
        let mut mid = vec![0.0; n * hidden];
        lin(&layers[1], h, n, &mut mid);
        mid.iter_mut().for_each(|v| *v = v.max(0.0));
        head.resize(n * HEAD_DIM, 0.0);
        lin(&layers[3], &mid, n, head);
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        Checkpoint::new()
            .with_meta("kind", "policy")
            .with_meta("conditioning", "in-state")
            .with_meta("history", self.k)
            .with_meta("value_scale", format!("{:e}", self.value_scale))
            .with_net("policy", &self.net)
            .with_block("obs_mean", self.obs_mean.clone())
            .with_block("obs_std", self.obs_std.clone())
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self, RlError> {
        if ck.meta("kind")? != "policy" {
            return Err(RlError::Format(format!("kind is `{}`", ck.meta("kind")?)));
        }
        let parse = |key: &str| -> Result<f64, RlError> {
            ck.meta(key)?
                .parse()
                .map_err(|_| RlError::Format(format!("bad `{key}`")))
        };
        let k = parse("history")? as usize;
        let p = PolicyNet {
            net: ck.net("policy")?.clone(),
            k,
            obs_mean: ck.block("obs_mean")?.to_vec(),
            obs_std: ck.block("obs_std")?.to_vec(),
            value_scale: parse("value_scale")?,
        };
        let sd = state_dim(k);
        if p.obs_mean.len() != sd || p.obs_std.len() != sd || !matches!(p.net.layers()[0].kind(), LayerKind::Lstm { inputs, .. } if inputs == sd) {
            return Err(RlError::Format("state dimension mismatch".into()));
        }
        Ok(p)
    }
}

fn lin(l: &Layer<f64>, x: &[f64], rows: usize, y: &mut [f64]) {
    let LayerKind::Linear { inputs, outputs } = l.kind() else {
        unreachable!()
    };
    linear_apply(l.params()[0].data(), l.params()[1].data(), x, rows, inputs, outputs, y);
}

/// Saved controller plus its bookkeeping.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyCheckpoint {
    pub policy: PolicyNet,
    /// Fixed training reference for grid members; `None` for the single
    /// controller trained on random references.
    pub reference: Option<[f64; 2]>,
    pub seed: u64,
    pub steps: usize,
}

impl PolicyCheckpoint {
    pub fn conditioning(&self) -> &'static str {
        "in-state"
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut ck = self
            .policy
            .to_checkpoint()
            .with_meta("seed", self.seed)
            .with_meta("steps", self.steps);
        if let Some([x, y]) = self.reference {
            ck = ck.with_block("reference", vec![x, y]);
        }
        ck
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self, RlError> {
        let num = |key: &str| -> Result<u64, RlError> {
            ck.meta(key)?
                .parse()
                .map_err(|_| RlError::Format(format!("bad `{key}`")))
        };
        Ok(PolicyCheckpoint {
            policy: PolicyNet::from_checkpoint(ck)?,
            reference: ck.block("reference").ok().map(|r| [r[0], r[1]]),
            seed: num("seed")?,
            steps: num("steps")? as usize,
        })
    }

    pub fn save(&self, path: &Path) -> Result<(), RlError> {
        Ok(self.to_checkpoint().save(path)?)
    }

    pub fn load(path: &Path) -> Result<Self, RlError> {
        Self::from_checkpoint(&Checkpoint::load(path)?)
    }
}

/// Pre-squash sample mapped into the open action box.
pub fn squash(u: [f64; 2]) -> MotorCommand {
    let a = |d: usize| ACTION_BOUNDS[d].0 + ACTION_BOUNDS[d].1 * SQUASH_MARGIN * u[d].tanh();
    MotorCommand::new(a(0), a(1))
}

/// `Σ_d log |∂a_d/∂u_d|`, computed stably as
/// `log(h·m) + 2(log 2 − u − softplus(−2u))`.
pub fn squash_log_det(u: [f64; 2]) -> f64 {
    (0..2)
        .map(|d| {
            let x = u[d];
            let softplus = (-2.0 * x).max(0.0) + (-(2.0 * x).abs()).exp().ln_1p();
            (ACTION_BOUNDS[d].1 * SQUASH_MARGIN).ln() + 2.0 * (std::f64::consts::LN_2 - x - softplus)
        })
        .sum()
}

pub fn clamp_log_std(v: f64) -> f64 {
    v.clamp(LOG_STD_MIN, LOG_STD_MAX)
}

/// Diagonal Gaussian log-density of `u` in pre-squash space.
pub fn gaussian_logprob(u: [f64; 2], mean: [f64; 2], log_std: [f64; 2]) -> f64 {
    (0..2)
        .map(|d| {
            let z = (u[d] - mean[d]) / log_std[d].exp();
            -0.5 * z * z - log_std[d] - 0.5 * LN_2PI
        })
        .sum()
}

/// Log-density of the squashed action: Gaussian term minus the log-Jacobian.
pub fn action_logprob(u: [f64; 2], mean: [f64; 2], log_std: [f64; 2]) -> f64 {
    gaussian_logprob(u, mean, log_std) - squash_log_det(u)
}

/// Entropy of the pre-squash Gaussian.
pub fn gaussian_entropy(log_std: [f64; 2]) -> f64 {
    log_std.iter().map(|l| l + 0.5 * (1.0 + LN_2PI)).sum()
}

/// One policy decision with what PPO needs to score it later.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Decision {
    pub action: MotorCommand,
    pub u: [f64; 2],
    pub logprob: f64,
    pub value: f64,
}

/// Turns one raw head row into a decision. `rng = None` takes the mean.
pub fn decide<R: Rng + ?Sized>(head: &[f64], value_scale: f64, rng: Option<&mut R>) -> Result<Decision, RlError> {
    if !head[..HEAD_DIM].iter().all(|v| v.is_finite()) {
        return Err(RlError::NonFinitePolicy);
    }
    let mean = [head[0], head[1]];
    let log_std = [clamp_log_std(head[2]), clamp_log_std(head[3])];
    let u = match rng {
        Some(rng) => {
            let e0: f64 = StandardNormal.sample(rng);
            let e1: f64 = StandardNormal.sample(rng);
            [mean[0] + log_std[0].exp() * e0, mean[1] + log_std[1].exp() * e1]
        }
        None => mean,
    };
    Ok(Decision {
        action: squash(u),
        u,
        logprob: action_logprob(u, mean, log_std),
        value: head[4] * value_scale,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{Mode, Tensor};
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn sampled_actions_stay_inside_bounds() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for i in 0..100_000 {
            let spread = [0.0, 5.0, 50.0][i % 3];
            let head = [spread * (i as f64).sin(), -spread, 1.0, 1.0, 0.0];
            let d = decide(&head, 1.0, Some(&mut rng)).unwrap();
            let a = d.action;
            assert!(a.target_angle > -FRAC_PI && a.target_angle < FRAC_PI);
            assert!(a.target_angular_velocity > 1.0 && a.target_angular_velocity < std::f64::consts::PI);
            assert!(a.is_valid());
        }
    }
    const FRAC_PI: f64 = std::f64::consts::FRAC_PI_2;

    proptest! {
        #[test]
        fn squash_is_strictly_inside(u0 in -1e3f64..1e3, u1 in -1e3f64..1e3) {
            let a = squash([u0, u1]);
            prop_assert!(a.target_angle > -FRAC_PI && a.target_angle < FRAC_PI);
            prop_assert!(a.target_angular_velocity > 1.0 && a.target_angular_velocity < std::f64::consts::PI);
        }

        #[test]
        fn log_det_matches_direct_form(u in -8.0f64..8.0) {
            let direct: f64 = (0..2)
                .map(|d| (ACTION_BOUNDS[d].1 * SQUASH_MARGIN * (1.0 - u.tanh().powi(2))).ln())
                .sum();
            prop_assert!((squash_log_det([u, u]) - direct).abs() < 1e-9);
        }
    }

    /// The squashed density integrates to one over a 1-D slice: with the
    /// second pre-squash coordinate fixed, integrating over the first action
    /// by the trapezoid rule leaves the second dimension's own density.
    #[test]
    fn squashed_density_integrates_to_one() {
        let mean = [0.4, -0.2];
        let log_std: [f64; 2] = [-0.3, 0.1];
        let u1: f64 = 0.25;
        let z1 = (u1 - mean[1]) / log_std[1].exp();
        let gauss1 = -0.5 * z1 * z1 - log_std[1] - 0.5 * LN_2PI;
        let jac1 = (ACTION_BOUNDS[1].1 * SQUASH_MARGIN * (1.0 - u1.tanh().powi(2))).ln();
        let marginal = (gauss1 - jac1).exp();
        let n = 200_000;
        let half = FRAC_PI * SQUASH_MARGIN;
        let h = 2.0 * half / n as f64;
        let mut total = 0.0;
        for i in 1..n {
            let a0 = -half + i as f64 * h;
            let u0 = (a0 / half).atanh();
            total += action_logprob([u0, u1], mean, log_std).exp() * h;
        }
        assert!((total / marginal - 1.0).abs() < 1e-4, "{}", total / marginal);
    }

    #[test]
    fn mean_mode_is_deterministic() {
        let head = [0.3, -0.1, 0.0, 0.0, 2.0];
        let a = decide::<ChaCha8Rng>(&head, 10.0, None).unwrap();
        let b = decide::<ChaCha8Rng>(&head, 10.0, None).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.value, 20.0);
        assert!(decide::<ChaCha8Rng>(&[f64::NAN, 0.0, 0.0, 0.0, 0.0], 1.0, None).is_err());
    }

    #[test]
    fn streaming_step_matches_network_forward() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let p = PolicyNet::new(4, 16, -0.5, 10.0, &mut rng).unwrap();
        let steps = 5;
        let x = Tensor::from_fn(&[2, steps, 13], |i| ((i * 7919) % 13) as f64 / 13.0 - 0.5);
        let full = p.net.forward(&x, Mode::Eval, Some(&p.net.zero_state(2))).unwrap().output;
        let mut h = vec![0.0; 2 * 16];
        let mut c = vec![0.0; 2 * 16];
        let (mut head, mut scratch) = (Vec::new(), Vec::new());
        for t in 0..steps {
            let obs: Vec<f64> = (0..2)
                .flat_map(|b| x.data()[(b * steps + t) * 13..(b * steps + t + 1) * 13].to_vec())
                .collect();
            p.step(&obs, &mut h, &mut c, &mut head, &mut scratch);
            for b in 0..2 {
                for j in 0..HEAD_DIM {
                    let f = full.data()[(b * steps + t) * HEAD_DIM + j];
                    assert!((head[b * HEAD_DIM + j] - f).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn checkpoint_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let pc = PolicyCheckpoint {
            policy: PolicyNet::new(4, 8, -0.5, 10.0, &mut rng).unwrap(),
            reference: Some([2.0, -1.0]),
            seed: 11,
            steps: 1234,
        };
        let ck = pc.to_checkpoint();
        assert_eq!(ck.meta("conditioning").unwrap(), "in-state");
        let back = PolicyCheckpoint::from_checkpoint(&Checkpoint::from_bytes(&ck.to_bytes()).unwrap()).unwrap();
        assert_eq!(back, pc);
    }
}
