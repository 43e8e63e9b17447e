use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;

use super::policy::{clamp_log_std, gaussian_entropy, gaussian_logprob, PolicyNet, HEAD_DIM, LOG_STD_MAX, LOG_STD_MIN};
use super::{RlError, Trajectory};
use crate::nn::{clip_global_norm, Adam, LstmState, Mode, Tensor};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PpoConfig {
    pub gamma: f64,
    pub lambda: f64,
    pub clip: f64,
    pub epochs: usize,
    /// Control steps collected per update (rounded up to whole episodes).
    pub horizon: usize,
    /// Control steps per minibatch.
    pub minibatch: usize,
    pub ent_coef: f64,
    pub vf_coef: f64,
    pub lr: f64,
    pub max_grad_norm: f64,
    /// Approximate KL above which the epoch loop stops.
    pub kl_stop: f64,
    /// Truncated-BPTT chunk length in control steps.
    pub chunk_len: usize,
}

impl Default for PpoConfig {
    fn default() -> Self {
        PpoConfig {
            gamma: 0.99,
            lambda: 0.95,
            clip: 0.2,
            epochs: 4,
            horizon: 256,
            minibatch: 64,
            ent_coef: 0.005,
            vf_coef: 0.5,
            lr: 3e-4,
            max_grad_norm: 0.5,
            kl_stop: 0.5,
            chunk_len: 16,
        }
    }
}

impl PpoConfig {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.clip > 0.0 && self.clip < 1.0) {
            return Err(format!("clip {} outside (0, 1)", self.clip));
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) || !(self.lambda > 0.0 && self.lambda <= 1.0) {
            return Err("gamma and lambda must lie in (0, 1]".into());
        }
        if self.epochs == 0 || self.horizon == 0 || self.minibatch == 0 || self.chunk_len == 0 {
            return Err("epochs, horizon, minibatch and chunk length must be positive".into());
        }
        Ok(())
    }
}

/// Generalised advantage estimation over one episode; `bootstrap` is the
/// value after the last step. Returns raw (unnormalised) advantages and the
/// value targets `advantage + value`.
pub fn gae_advantages(rewards: &[f64], values: &[f64], bootstrap: f64, gamma: f64, lambda: f64) -> (Vec<f64>, Vec<f64>) {
    let n = rewards.len();
    let mut adv = vec![0.0; n];
    let mut acc = 0.0;
    for t in (0..n).rev() {
        let next = if t + 1 < n { values[t + 1] } else { bootstrap };
        let delta = rewards[t] + gamma * next - values[t];
        acc = delta + gamma * lambda * acc;
        adv[t] = acc;
    }
    let ret = adv.iter().zip(values).map(|(a, v)| a + v).collect();
    (adv, ret)
}

/// A run of consecutive control steps from one episode of one env, with
/// the recurrent state the policy had at its first step.
#[derive(Debug, Clone, PartialEq)]
pub struct Segment {
    /// Normalised observations `[len, state_dim]`.
    pub obs: Vec<f64>,
    pub u: Vec<[f64; 2]>,
    pub logprob: Vec<f64>,
    pub advantages: Vec<f64>,
    pub returns: Vec<f64>,
    pub h0: Vec<f64>,
    pub c0: Vec<f64>,
}

impl Segment {
    pub fn len(&self) -> usize {
        self.u.len()
    }

    pub fn is_empty(&self) -> bool {
        self.u.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PpoBatch {
    pub segments: Vec<Segment>,
    pub state_dim: usize,
    pub hidden: usize,
}

impl PpoBatch {
    /// Cuts each env's episode into chunks; advantages are normalised over
    /// the whole batch.
    pub fn from_trajectories(policy: &PolicyNet, trajs: &[Trajectory], cfg: &PpoConfig) -> Self {
        let sd = policy.state_dim();
        let hidden = policy.hidden();
        let mut segments = Vec::new();
        for tr in trajs {
            let n = tr.n_envs;
            for e in 0..n {
                let idx: Vec<usize> = (0..tr.steps).map(|t| t * n + e).collect();
                let rewards: Vec<f64> = idx.iter().map(|&i| tr.rewards[i]).collect();
                let values: Vec<f64> = idx.iter().map(|&i| tr.decisions[i].value).collect();
                let (adv, ret) = gae_advantages(&rewards, &values, tr.bootstrap[e], cfg.gamma, cfg.lambda);
                for start in (0..tr.steps).step_by(cfg.chunk_len) {
                    let end = (start + cfg.chunk_len).min(tr.steps);
                    let mut obs = Vec::with_capacity((end - start) * sd);
                    for &i in &idx[start..end] {
                        policy.normalize_into(&tr.states[i * sd..(i + 1) * sd], &mut obs);
                    }
                    let i0 = idx[start];
                    segments.push(Segment {
                        obs,
                        u: idx[start..end].iter().map(|&i| tr.decisions[i].u).collect(),
                        logprob: idx[start..end].iter().map(|&i| tr.decisions[i].logprob).collect(),
                        advantages: adv[start..end].to_vec(),
                        returns: ret[start..end].to_vec(),
                        h0: tr.h0[i0 * hidden..(i0 + 1) * hidden].to_vec(),
                        c0: tr.c0[i0 * hidden..(i0 + 1) * hidden].to_vec(),
                    });
                }
            }
        }
        let all: Vec<f64> = segments.iter().flat_map(|s| s.advantages.iter().copied()).collect();
        let mean = crate::metrics::mean(&all);
        let std = crate::metrics::std_dev(&all);
        for s in &mut segments {
            s.advantages.iter_mut().for_each(|a| *a = (*a - mean) / (std + 1e-8));
        }
        PpoBatch {
            segments,
            state_dim: sd,
            hidden,
        }
    }

    pub fn steps(&self) -> usize {
        self.segments.iter().map(Segment::len).sum()
    }
}

/// Per-step inputs to the loss, aligned with the head rows. Padding rows
/// have `mask = false`.
#[derive(Debug, Clone, Copy)]
pub struct LossInputs<'a> {
    pub u: &'a [[f64; 2]],
    pub logprob_old: &'a [f64],
    pub advantages: &'a [f64],
    pub returns: &'a [f64],
    pub mask: &'a [bool],
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct LossParts {
    pub total: f64,
    pub policy: f64,
    pub value: f64,
    pub entropy: f64,
    pub approx_kl: f64,
    pub clip_fraction: f64,
}

/// Clipped-surrogate loss to minimise,
/// `−min(ρA, clip(ρ)A) + c_v·½(V − R)² − c_e·H`, averaged over unmasked
/// rows, and its gradient with respect to the raw head outputs.
///
/// The squash Jacobian does not depend on the parameters, so the ratio only
/// needs the Gaussian part of the log-density. Returns are in reward units
/// and compared against the critic output times `value_scale`.
pub fn ppo_loss(head: &[f64], inp: &LossInputs, cfg: &PpoConfig, value_scale: f64) -> (LossParts, Vec<f64>) {
    let rows = inp.mask.len();
    let n = inp.mask.iter().filter(|m| **m).count().max(1) as f64;
    let mut grad = vec![0.0; rows * HEAD_DIM];
    let mut p = LossParts::default();
    for i in 0..rows {
        if !inp.mask[i] {
            continue;
        }
        let o = &head[i * HEAD_DIM..(i + 1) * HEAD_DIM];
        let g = &mut grad[i * HEAD_DIM..(i + 1) * HEAD_DIM];
        let mean = [o[0], o[1]];
        let raw_ls = [o[2], o[3]];
        let ls = [clamp_log_std(o[2]), clamp_log_std(o[3])];
        let u = inp.u[i];
        // The old log-prob includes the squash Jacobian; add it back here
        // so the ratio compares like with like.
        let jac = super::policy::squash_log_det(u);
        let lp = gaussian_logprob(u, mean, ls) - jac;
        let log_ratio = lp - inp.logprob_old[i];
        let ratio = log_ratio.exp();
        let a = inp.advantages[i];
        let clipped = ratio.clamp(1.0 - cfg.clip, 1.0 + cfg.clip);
        let unclipped_term = ratio * a;
        let clipped_term = clipped * a;
        p.policy -= unclipped_term.min(clipped_term) / n;
        let active = unclipped_term <= clipped_term;
        if (ratio - 1.0).abs() > cfg.clip {
            p.clip_fraction += 1.0 / n;
        }
        p.approx_kl += (ratio - 1.0 - log_ratio) / n;
        // d(−ρA)/d lp = −ρA
        let dlp = if active { -ratio * a / n } else { 0.0 };
        for d in 0..2 {
            let inv_var = (-2.0 * ls[d]).exp();
            let z2 = (u[d] - mean[d]).powi(2) * inv_var;
            g[d] += dlp * (u[d] - mean[d]) * inv_var;
            if raw_ls[d] > LOG_STD_MIN && raw_ls[d] < LOG_STD_MAX {
                g[2 + d] += dlp * (z2 - 1.0) - cfg.ent_coef / n;
            }
        }
        p.entropy += gaussian_entropy(ls) / n;
        let diff = o[4] - inp.returns[i] / value_scale;
        p.value += 0.5 * diff * diff / n;
        g[4] += cfg.vf_coef * diff / n;
    }
    p.total = p.policy + cfg.vf_coef * p.value - cfg.ent_coef * p.entropy;
    (p, grad)
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct PpoStats {
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub approx_kl: f64,
    pub clip_fraction: f64,
    pub grad_norm: f64,
    pub minibatches: usize,
    pub epochs_run: usize,
    /// Epoch loop stopped because the KL bound was exceeded.
    pub early_stopped: bool,
}

/// Stacks segments into a padded `[B, L, state_dim]` input and the matching
/// initial recurrent state.
fn assemble(batch: &PpoBatch, ids: &[usize]) -> (Tensor<f64>, LstmState<f64>, usize) {
    let sd = batch.state_dim;
    let hidden = batch.hidden;
    let len = ids.iter().map(|&i| batch.segments[i].len()).max().unwrap_or(0);
    let mut x = Tensor::zeros(&[ids.len(), len, sd]);
    let mut st = LstmState::zeros(ids.len(), hidden);
    for (b, &i) in ids.iter().enumerate() {
        let s = &batch.segments[i];
        x.data_mut()[b * len * sd..b * len * sd + s.obs.len()].copy_from_slice(&s.obs);
        st.h.data_mut()[b * hidden..(b + 1) * hidden].copy_from_slice(&s.h0);
        st.c.data_mut()[b * hidden..(b + 1) * hidden].copy_from_slice(&s.c0);
    }
    (x, st, len)
}

/// Several epochs of clipped-PPO over sequence-contiguous minibatches.
pub fn ppo_update(
    policy: &mut PolicyNet,
    adam: &mut Adam<f64>,
    batch: &PpoBatch,
    cfg: &PpoConfig,
    rng: &mut ChaCha8Rng,
) -> Result<PpoStats, RlError> {
    let per_mb = (cfg.minibatch / cfg.chunk_len).max(1);
    let mut order: Vec<usize> = (0..batch.segments.len()).collect();
    let mut stats = PpoStats::default();
    'epochs: for _ in 0..cfg.epochs {
        stats.epochs_run += 1;
        order.shuffle(rng);
        for ids in order.chunks(per_mb) {
            let (x, st, len) = assemble(batch, ids);
            let rows = ids.len() * len;
            let mut u = vec![[0.0; 2]; rows];
            let mut lp = vec![0.0; rows];
            let mut adv = vec![0.0; rows];
            let mut ret = vec![0.0; rows];
            let mut mask = vec![false; rows];
            for (b, &i) in ids.iter().enumerate() {
                let s = &batch.segments[i];
                for t in 0..s.len() {
                    let r = b * len + t;
                    u[r] = s.u[t];
                    lp[r] = s.logprob[t];
                    adv[r] = s.advantages[t];
                    ret[r] = s.returns[t];
                    mask[r] = true;
                }
            }
            let out = policy.net.forward(&x, Mode::Train(rng), Some(&vec![st]))?;
            let inp = LossInputs {
                u: &u,
                logprob_old: &lp,
                advantages: &adv,
                returns: &ret,
                mask: &mask,
            };
            let (parts, g) = ppo_loss(out.output.data(), &inp, cfg, policy.value_scale);
            let dout = Tensor::from_vec(out.output.shape(), g)?;
            let mut grads = policy.net.backward(out.tape.as_ref().expect("train tape"), &dout)?;
            let norm = clip_global_norm(&mut grads, cfg.max_grad_norm);
            adam.step(&mut policy.net, &grads)?;
            stats.policy_loss += parts.policy;
            stats.value_loss += parts.value;
            stats.entropy += parts.entropy;
            stats.approx_kl += parts.approx_kl;
            stats.clip_fraction += parts.clip_fraction;
            stats.grad_norm += norm;
            stats.minibatches += 1;
            if parts.approx_kl > cfg.kl_stop {
                stats.early_stopped = true;
                break 'epochs;
            }
        }
    }
    let m = stats.minibatches.max(1) as f64;
    stats.policy_loss /= m;
    stats.value_loss /= m;
    stats.entropy /= m;
    stats.approx_kl /= m;
    stats.clip_fraction /= m;
    stats.grad_norm /= m;
    Ok(stats)
}
