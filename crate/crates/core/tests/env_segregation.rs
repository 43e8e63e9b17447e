//! Training only ever steps the environment it is handed and evaluation
//! only ever steps the plant.

use softfin::eval::{run_episode, run_evaluation, Controller};
use softfin::plant::{MotorCommand, Plant, PlantParams};
use softfin::reward::RewardParams;
use softfin::rl::{
    train_policy, ForceEnv, MockEnv, PlantEnv, PpoConfig, RefSampler, RlError, TickSample, TrainSpec,
};

/// Delegates to `inner` and counts every tick per env.
struct Counting<E> {
    inner: E,
    ticks: usize,
    resets: usize,
}

impl<E: ForceEnv> ForceEnv for Counting<E> {
    fn num_envs(&self) -> usize {
        self.inner.num_envs()
    }
    fn reset(&mut self, e: usize, seed: u64) {
        self.resets += 1;
        self.inner.reset(e, seed)
    }
    fn tick(&mut self, cmds: &[MotorCommand], out: &mut [TickSample]) -> Result<(), RlError> {
        self.ticks += 1;
        self.inner.tick(cmds, out)
    }
}

#[test]
fn training_steps_only_the_given_env() {
    let spec = TrainSpec {
        total_steps: 540,
        hidden: 8,
        ppo: PpoConfig {
            epochs: 1,
            ..Default::default()
        },
        ..Default::default()
    };
    let n = spec.envs_per_update();
    let mut env = Counting {
        inner: MockEnv::new(n),
        ticks: 0,
        resets: 0,
    };
    let (_, log) = train_policy(&mut env, RefSampler::training_range(), &spec, 1).unwrap();
    let episodes = log.episode_rewards.len();
    assert_eq!(episodes * spec.episode_steps, log.steps);
    // every control step the trainer took was backed by mock ticks
    assert_eq!(env.ticks * n, episodes * 3000);
    assert_eq!(env.inner.ticks, env.ticks);
    assert_eq!(env.resets, episodes);
}

#[test]
fn evaluation_runs_on_the_plant() {
    let params = PlantParams::default();
    let reward = RewardParams::default();
    let ctl = Controller::Random(4);
    let (summary, log) = run_evaluation(&ctl, &params, [2.0, 0.0], 8, &reward).unwrap();

    let mut env = Counting {
        inner: PlantEnv::new(params, 1).unwrap(),
        ticks: 0,
        resets: 0,
    };
    let (s2, log2) = run_episode(&mut env, &ctl, [2.0, 0.0], 8, &reward).unwrap();
    assert_eq!((env.ticks, env.resets), (3000, 1));
    assert_eq!(summary, s2);
    assert_eq!(log, log2);

    // replaying the logged commands on a bare plant reproduces the forces
    let mut plant = Plant::new(params, 8).unwrap();
    for k in 0..log.len() {
        let f = plant.step(log.command(k)).unwrap();
        assert_eq!((f.fx, f.fy), (log.fx[k], log.fy[k]), "tick {k}");
        assert_eq!(plant.state().theta_m, log.theta[k]);
    }
}
