use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::ppo::{ppo_update, PpoBatch, PpoConfig, PpoStats};
use super::rollout::{dual_rate_rollout, EpisodeSpec, PolicyAgent};
use super::{ForceEnv, GridBank, PolicyCheckpoint, PolicyNet, RlError, SurrogateEnv};
use super::{EPISODE_STEPS, HISTORY_K, REF_X_RANGE, REF_Y_RANGE};
use crate::nn::Adam;
use crate::reward::RewardParams;
use crate::substream;
use crate::surrogate::SurrogateModel;

/// Where each episode's reference force comes from.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RefSampler {
    Uniform { x: (f64, f64), y: (f64, f64) },
    Fixed([f64; 2]),
}

impl RefSampler {
    pub fn training_range() -> Self {
        RefSampler::Uniform {
            x: REF_X_RANGE,
            y: REF_Y_RANGE,
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> [f64; 2] {
        match *self {
            RefSampler::Uniform { x, y } => [rng.random_range(x.0..=x.1), rng.random_range(y.0..=y.1)],
            RefSampler::Fixed(r) => r,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainSpec {
    pub ppo: PpoConfig,
    /// Control steps of experience to collect.
    pub total_steps: usize,
    pub hidden: usize,
    pub history: usize,
    pub init_log_std: f64,
    pub value_scale: f64,
    pub episode_steps: usize,
    /// Episodes in the rolling mean that picks the best checkpoint.
    pub best_window: usize,
    pub reward: RewardParams,
}

impl Default for TrainSpec {
    fn default() -> Self {
        TrainSpec {
            ppo: PpoConfig::default(),
            total_steps: 30_000,
            hidden: 64,
            history: HISTORY_K,
            init_log_std: -0.5,
            value_scale: 100.0,
            episode_steps: EPISODE_STEPS,
            best_window: 10,
            reward: RewardParams::default(),
        }
    }
}

impl TrainSpec {
    /// Grid members train for fewer steps.
    pub fn grid_default() -> Self {
        TrainSpec {
            total_steps: 10_000,
            ..Default::default()
        }
    }

    /// Envs run side by side so one batch of whole episodes covers the
    /// rollout horizon.
    pub fn envs_per_update(&self) -> usize {
        self.ppo.horizon.div_ceil(self.episode_steps).max(1)
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainLog {
    /// Mean per-step reward of every training episode, in order.
    pub episode_rewards: Vec<f64>,
    /// References of those episodes.
    pub episode_references: Vec<[f64; 2]>,
    pub updates: Vec<PpoStats>,
    /// Best rolling mean and the step count at which it was reached.
    pub best_mean: f64,
    pub best_steps: usize,
    pub steps: usize,
}

impl TrainLog {
    pub fn rolling_mean(&self, window: usize) -> Option<f64> {
        let n = self.episode_rewards.len();
        (n >= window && window > 0).then(|| self.episode_rewards[n - window..].iter().sum::<f64>() / window as f64)
    }

    /// Count of updates whose epoch loop hit the KL stop.
    pub fn kl_stops(&self) -> usize {
        self.updates.iter().filter(|u| u.early_stopped).count()
    }
}

/// Trains one policy with LSTM-PPO on whatever environment is passed in.
/// Keeps the weights whose episodes scored the best rolling mean reward.
pub fn train_policy<E: ForceEnv + ?Sized>(
    env: &mut E,
    sampler: RefSampler,
    spec: &TrainSpec,
    seed: u64,
) -> Result<(PolicyCheckpoint, TrainLog), RlError> {
    spec.ppo.validate().map_err(RlError::Format)?;
    let n = env.num_envs();
    let mut init_rng = substream(seed, 100);
    let mut act_rng = substream(seed, 101);
    let mut ref_rng = substream(seed, 102);
    let mut ppo_rng = substream(seed, 103);
    let mut policy = PolicyNet::new(spec.history, spec.hidden, spec.init_log_std, spec.value_scale, &mut init_rng)?;
    let mut adam = Adam::new(&policy.net, spec.ppo.lr);
    let mut log = TrainLog {
        best_mean: f64::NEG_INFINITY,
        ..Default::default()
    };
    let mut best = policy.clone();
    while log.steps < spec.total_steps {
        let episode = EpisodeSpec {
            references: (0..n).map(|_| sampler.sample(&mut ref_rng)).collect(),
            seeds: (0..n).map(|_| ref_rng.random()).collect(),
            steps: spec.episode_steps,
            bootstrap: true,
        };
        let mut agent = PolicyAgent::sampling(&policy, ChaCha8Rng::from_rng(&mut act_rng));
        let tr = dual_rate_rollout(env, &mut agent, &episode, &spec.reward)?;
        log.steps += n * spec.episode_steps;
        for e in 0..n {
            log.episode_rewards.push(tr.mean_reward(e));
            log.episode_references.push(episode.references[e]);
        }
        let window = spec.best_window.min(log.episode_rewards.len());
        if let Some(m) = log.rolling_mean(window) {
            if m > log.best_mean {
                log.best_mean = m;
                log.best_steps = log.steps;
                best = policy.clone();
            }
        }
        let batch = PpoBatch::from_trajectories(&policy, std::slice::from_ref(&tr), &spec.ppo);
        log.updates.push(ppo_update(&mut policy, &mut adam, &batch, &spec.ppo, &mut ppo_rng)?);
    }
    let reference = match sampler {
        RefSampler::Fixed(r) => Some(r),
        RefSampler::Uniform { .. } => None,
    };
    Ok((
        PolicyCheckpoint {
            policy: best,
            reference,
            seed,
            steps: log.steps,
        },
        log,
    ))
}

/// Single controller: random references over the training range, trained
/// inside the surrogate.
pub fn train_single(model: &SurrogateModel, spec: &TrainSpec, seed: u64) -> Result<(PolicyCheckpoint, TrainLog), RlError> {
    let mut env = SurrogateEnv::new(model, spec.envs_per_update());
    train_policy(&mut env, RefSampler::training_range(), spec, seed)
}

/// Seed of grid member `i`.
pub fn grid_member_seed(seed: u64, i: usize) -> u64 {
    substream(seed, 200 + i as u64).random()
}

/// One controller per reference point, each only ever seeing its own
/// reference. Failed points are reported alongside the bank of the rest.
#[allow(clippy::type_complexity)]
pub fn train_grid(
    model: &SurrogateModel,
    points: &[[f64; 2]],
    spec: &TrainSpec,
    seed: u64,
) -> Result<(GridBank, Vec<TrainLog>, Vec<([f64; 2], RlError)>), RlError> {
    let mut policies = Vec::new();
    let mut logs = Vec::new();
    let mut failures = Vec::new();
    for (i, p) in points.iter().enumerate() {
        let mut env = SurrogateEnv::new(model, spec.envs_per_update());
        match train_policy(&mut env, RefSampler::Fixed(*p), spec, grid_member_seed(seed, i)) {
            Ok((ck, log)) => {
                policies.push(ck);
                logs.push(log);
            }
            Err(e) => failures.push((*p, e)),
        }
    }
    Ok((GridBank::new(policies)?, logs, failures))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rl::MockEnv;

    fn small() -> TrainSpec {
        TrainSpec {
            total_steps: 540,
            hidden: 8,
            episode_steps: 30,
            ppo: PpoConfig {
                horizon: 90,
                ..Default::default()
            },
            ..Default::default()
        }
    }

    #[test]
    fn seeded_training_is_reproducible() {
        let spec = small();
        let mut a = MockEnv::new(spec.envs_per_update());
        let mut b = MockEnv::new(spec.envs_per_update());
        let (pa, la) = train_policy(&mut a, RefSampler::training_range(), &spec, 3).unwrap();
        let (pb, lb) = train_policy(&mut b, RefSampler::training_range(), &spec, 3).unwrap();
        assert_eq!(pa, pb);
        assert_eq!(la, lb);
        assert_eq!(la.steps, 540);
        assert_eq!(pa.policy.to_checkpoint().meta("conditioning").unwrap(), "in-state");
    }

    #[test]
    fn fixed_sampler_never_changes_reference() {
        let spec = small();
        let mut env = MockEnv::new(spec.envs_per_update());
        let (ck, log) = train_policy(&mut env, RefSampler::Fixed([2.0, -1.0]), &spec, 1).unwrap();
        assert!(log.episode_references.iter().all(|r| *r == [2.0, -1.0]));
        assert_eq!(ck.reference, Some([2.0, -1.0]));
    }

    #[test]
    fn uniform_references_cover_the_range() {
        let mut rng = substream(0, 0);
        let s = RefSampler::training_range();
        for _ in 0..1000 {
            let [x, y] = s.sample(&mut rng);
            assert!((0.0..=3.0).contains(&x) && (-1.0..=1.0).contains(&y));
        }
    }

    /// On the mock env force is a known function of the command, so a short
    /// run must beat its own start.
    #[test]
    fn learns_on_a_trivial_env() {
        let spec = TrainSpec {
            total_steps: 9_000,
            hidden: 16,
            episode_steps: 30,
            ppo: PpoConfig {
                horizon: 90,
                lr: 3e-3,
                ..Default::default()
            },
            ..Default::default()
        };
        let mut env = MockEnv::new(spec.envs_per_update());
        let (_, log) = train_policy(&mut env, RefSampler::Fixed([1.0, 0.5]), &spec, 5).unwrap();
        let first: f64 = log.episode_rewards[..10].iter().sum::<f64>() / 10.0;
        let last = log.rolling_mean(10).unwrap();
        assert!(last > first, "first {first} last {last}");
    }
}
