use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::policy::{decide, Decision, PolicyNet, HEAD_DIM};
use super::{encode_state, state_dim, ActionHistory, ForceEnv, RlError, TickSample, ACTION_BOUNDS};
use crate::plant::MotorCommand;
use crate::reward::{ForceWindow, RewardParams, RewardTerms};

/// Sim ticks per control step, cycled. 100 ticks per 3 decisions keeps the
/// average decision rate at exactly 3 Hz over a 100 Hz simulation.
pub const CONTROL_PERIOD_TICKS: [usize; 3] = [33, 33, 34];

pub fn ticks_for_step(step: usize) -> usize {
    CONTROL_PERIOD_TICKS[step % 3]
}

/// Anything that picks motor commands from encoded states.
pub trait Agent {
    /// History depth the agent expects in its state.
    fn history(&self) -> usize;

    /// Starts fresh episodes on `n` envs.
    fn begin(&mut self, n: usize);

    /// `states` holds one raw encoded state per env, row-major.
    fn act(&mut self, states: &[f64], out: &mut Vec<Decision>) -> Result<(), RlError>;

    /// Recurrent `(h, c)` that the next `act` will start from.
    fn recurrent(&self) -> Option<(&[f64], &[f64])> {
        None
    }
}

/// A policy network run step by step; samples when given an RNG, otherwise
/// takes the mean action.
pub struct PolicyAgent<'a> {
    policy: &'a PolicyNet,
    rng: Option<ChaCha8Rng>,
    h: Vec<f64>,
    c: Vec<f64>,
    obs: Vec<f64>,
    head: Vec<f64>,
    scratch: Vec<f64>,
}

impl<'a> PolicyAgent<'a> {
    pub fn sampling(policy: &'a PolicyNet, rng: ChaCha8Rng) -> Self {
        Self::build(policy, Some(rng))
    }

    pub fn mean(policy: &'a PolicyNet) -> Self {
        Self::build(policy, None)
    }

    fn build(policy: &'a PolicyNet, rng: Option<ChaCha8Rng>) -> Self {
        PolicyAgent {
            policy,
            rng,
            h: Vec::new(),
            c: Vec::new(),
            obs: Vec::new(),
            head: Vec::new(),
            scratch: Vec::new(),
        }
    }

    pub fn policy(&self) -> &PolicyNet {
        self.policy
    }
}

impl Agent for PolicyAgent<'_> {
    fn history(&self) -> usize {
        self.policy.k
    }

    fn begin(&mut self, n: usize) {
        let hidden = self.policy.hidden();
        self.h = vec![0.0; n * hidden];
        self.c = vec![0.0; n * hidden];
    }

    fn act(&mut self, states: &[f64], out: &mut Vec<Decision>) -> Result<(), RlError> {
        self.obs.clear();
        for s in states.chunks(self.policy.state_dim()) {
            self.policy.normalize_into(s, &mut self.obs);
        }
        self.policy
            .step(&self.obs, &mut self.h, &mut self.c, &mut self.head, &mut self.scratch);
        out.clear();
        for row in self.head.chunks(HEAD_DIM) {
            out.push(decide(row, self.policy.value_scale, self.rng.as_mut())?);
        }
        Ok(())
    }

    fn recurrent(&self) -> Option<(&[f64], &[f64])> {
        Some((&self.h, &self.c))
    }
}

/// Uniform random commands inside the action bounds.
pub struct RandomAgent {
    rng: ChaCha8Rng,
    k: usize,
}

impl RandomAgent {
    pub fn new(rng: ChaCha8Rng, k: usize) -> Self {
        RandomAgent { rng, k }
    }
}

impl Agent for RandomAgent {
    fn history(&self) -> usize {
        self.k
    }

    fn begin(&mut self, _n: usize) {}

    fn act(&mut self, states: &[f64], out: &mut Vec<Decision>) -> Result<(), RlError> {
        out.clear();
        for _ in states.chunks(state_dim(self.k)) {
            let mut a = [0.0; 2];
            for (d, (c, h)) in ACTION_BOUNDS.iter().enumerate() {
                // open interval: redraw the (measure-zero) endpoint
                a[d] = loop {
                    let v = self.rng.random_range(c - h..c + h);
                    if v > c - h {
                        break v;
                    }
                };
            }
            out.push(Decision {
                action: MotorCommand::new(a[0], a[1]),
                u: [0.0; 2],
                logprob: 0.0,
                value: 0.0,
            });
        }
        Ok(())
    }
}

/// Per-env episode setup for one rollout.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeSpec {
    pub references: Vec<[f64; 2]>,
    /// Env reset seeds.
    pub seeds: Vec<u64>,
    pub steps: usize,
    /// Query the agent once more after the last step for `V(s_T)`.
    pub bootstrap: bool,
}

/// One 100 Hz trace row: the command in force and what the env reported.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceRow {
    pub cmd: MotorCommand,
    pub sample: TickSample,
}

/// Everything a rollout produced, step-major (`[step][env]`).
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub n_envs: usize,
    pub steps: usize,
    pub state_dim: usize,
    /// Raw encoded states `[steps, n, state_dim]`.
    pub states: Vec<f64>,
    pub decisions: Vec<Decision>,
    pub rewards: Vec<f64>,
    pub terms: Vec<RewardTerms>,
    /// Recurrent state before each decision, `[steps, n, hidden]`; empty for
    /// memoryless agents.
    pub h0: Vec<f64>,
    pub c0: Vec<f64>,
    /// `V(s_T)` per env, zero without bootstrap.
    pub bootstrap: Vec<f64>,
    pub step_ticks: Vec<usize>,
    /// Per-env 100 Hz traces.
    pub trace: Vec<Vec<TraceRow>>,
}

impl Trajectory {
    pub fn ticks(&self) -> usize {
        self.step_ticks.iter().sum()
    }

    /// Mean per-step reward of env `e`.
    pub fn mean_reward(&self, e: usize) -> f64 {
        (0..self.steps).map(|t| self.rewards[t * self.n_envs + e]).sum::<f64>() / self.steps as f64
    }

    pub fn hidden(&self) -> usize {
        self.h0.len() / (self.steps * self.n_envs).max(1)
    }
}

/// The 3 Hz over 100 Hz control loop shared by training and evaluation.
///
/// Each control step encodes the state from the latest angle, the reference
/// and the executed action history, asks the agent for a command, holds it
/// for the step's ticks and scores the trailing force window.
pub fn dual_rate_rollout<E: ForceEnv + ?Sized, A: Agent + ?Sized>(
    env: &mut E,
    agent: &mut A,
    spec: &EpisodeSpec,
    reward: &RewardParams,
) -> Result<Trajectory, RlError> {
    let n = env.num_envs();
    assert_eq!(spec.references.len(), n, "one reference per env");
    assert_eq!(spec.seeds.len(), n, "one seed per env");
    let k = agent.history();
    let sd = state_dim(k);
    for (e, seed) in spec.seeds.iter().enumerate() {
        env.reset(e, *seed);
    }
    agent.begin(n);

    let mut tr = Trajectory {
        n_envs: n,
        steps: spec.steps,
        state_dim: sd,
        states: Vec::with_capacity(spec.steps * n * sd),
        decisions: Vec::with_capacity(spec.steps * n),
        rewards: Vec::with_capacity(spec.steps * n),
        terms: Vec::with_capacity(spec.steps * n),
        h0: Vec::new(),
        c0: Vec::new(),
        bootstrap: vec![0.0; n],
        step_ticks: Vec::with_capacity(spec.steps),
        trace: vec![Vec::with_capacity(spec.steps * 34); n],
    };
    let mut histories = vec![ActionHistory::new(k); n];
    let mut windows = vec![ForceWindow::new(reward.window); n];
    let mut theta = vec![0.0; n];
    let mut samples = vec![TickSample::default(); n];
    let mut decisions = Vec::with_capacity(n);
    let mut cmds = vec![MotorCommand::NEUTRAL; n];
    let mut states = Vec::with_capacity(n * sd);

    let encode = |states: &mut Vec<f64>, theta: &[f64], histories: &[ActionHistory]| {
        states.clear();
        for e in 0..n {
            states.extend(encode_state(theta[e], spec.references[e], histories[e].as_slice(), k));
        }
    };

    for t in 0..spec.steps {
        encode(&mut states, &theta, &histories);
        if let Some((h, c)) = agent.recurrent() {
            tr.h0.extend_from_slice(h);
            tr.c0.extend_from_slice(c);
        }
        agent.act(&states, &mut decisions)?;
        tr.states.extend_from_slice(&states);
        for (c, d) in cmds.iter_mut().zip(&decisions) {
            *c = d.action;
        }
        let ticks = ticks_for_step(t);
        for _ in 0..ticks {
            env.tick(&cmds, &mut samples)?;
            for e in 0..n {
                let s = samples[e];
                windows[e].push(s.fx, s.fy);
                theta[e] = s.theta;
                tr.trace[e].push(TraceRow { cmd: cmds[e], sample: s });
            }
        }
        tr.step_ticks.push(ticks);
        if t % 3 == 2 && tr.step_ticks[t - 2..=t].iter().sum::<usize>() != 100 {
            return Err(RlError::TickAccounting {
                steps: 3,
                ticks: tr.step_ticks[t - 2..=t].iter().sum(),
            });
        }
        for e in 0..n {
            let terms = windows[e]
                .reward(spec.references[e], reward)
                .expect("window holds at least one control period");
            tr.rewards.push(terms.reward);
            tr.terms.push(terms);
            histories[e].push(cmds[e]);
        }
        tr.decisions.extend_from_slice(&decisions);
    }
    let expected = (spec.steps / 3) * 100 + (0..spec.steps % 3).map(ticks_for_step).sum::<usize>();
    if tr.ticks() != expected || tr.trace.iter().any(|t| t.len() != expected) {
        return Err(RlError::TickAccounting {
            steps: spec.steps,
            ticks: tr.ticks(),
        });
    }
    if spec.bootstrap && spec.steps > 0 {
        encode(&mut states, &theta, &histories);
        agent.act(&states, &mut decisions)?;
        for (b, d) in tr.bootstrap.iter_mut().zip(&decisions) {
            *b = d.value;
        }
    }
    Ok(tr)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::plant::{PlantParams, DT};
    use crate::rl::{MockEnv, PlantEnv, EPISODE_STEPS, HISTORY_K};
    use rand::SeedableRng;

    fn spec(n: usize, steps: usize) -> EpisodeSpec {
        EpisodeSpec {
            references: vec![[2.0, 0.0]; n],
            seeds: (0..n as u64).collect(),
            steps,
            bootstrap: false,
        }
    }

    #[test]
    fn three_steps_take_one_hundred_ticks() {
        let mut env = MockEnv::new(2);
        let mut agent = RandomAgent::new(ChaCha8Rng::seed_from_u64(0), HISTORY_K);
        let tr = dual_rate_rollout(&mut env, &mut agent, &spec(2, 3), &RewardParams::default()).unwrap();
        assert_eq!(tr.step_ticks, vec![33, 33, 34]);
        assert_eq!(env.ticks, 100);
    }

    #[test]
    fn full_episode_is_thirty_seconds() {
        let mut env = MockEnv::new(1);
        let mut agent = RandomAgent::new(ChaCha8Rng::seed_from_u64(0), HISTORY_K);
        let tr = dual_rate_rollout(&mut env, &mut agent, &spec(1, EPISODE_STEPS), &RewardParams::default()).unwrap();
        assert_eq!(tr.ticks(), 3000);
        assert_eq!(tr.trace[0].len(), 3000);
        assert!((tr.ticks() as f64 * DT - 30.0).abs() < 1e-12);
        assert!(tr.rewards.iter().all(|r| *r <= 0.0));
        for w in tr.step_ticks.chunks(3) {
            assert_eq!(w.iter().sum::<usize>(), 100);
        }
    }

    /// Each command is held for exactly its step's ticks and the history in
    /// the next state is the executed commands, newest first.
    #[test]
    fn commands_held_and_history_recorded() {
        let mut env = MockEnv::new(1);
        let mut agent = RandomAgent::new(ChaCha8Rng::seed_from_u64(5), 2);
        let tr = dual_rate_rollout(&mut env, &mut agent, &spec(1, 6), &RewardParams::default()).unwrap();
        let mut tick = 0;
        for t in 0..6 {
            let a = tr.decisions[t].action;
            for _ in 0..ticks_for_step(t) {
                assert_eq!(env.commands[tick], a);
                tick += 1;
            }
        }
        let sd = tr.state_dim;
        let s5 = &tr.states[5 * sd..6 * sd];
        assert_eq!(s5[0], tr.decisions[4].action.target_angle);
        assert_eq!(&s5[3..5], &[tr.decisions[4].action.target_angle, tr.decisions[4].action.target_angular_velocity]);
        assert_eq!(&s5[5..7], &[tr.decisions[3].action.target_angle, tr.decisions[3].action.target_angular_velocity]);
        let s0 = &tr.states[..sd];
        assert!(s0[3..].chunks(2).all(|a| a == [0.0, 1.0]));
    }

    /// The plant behind the env interface gives the same trace as driving the
    /// plant by hand with the recorded commands.
    #[test]
    fn plant_env_trace_matches_direct_plant() {
        let params = PlantParams::default();
        let mut env = PlantEnv::new(params, 1).unwrap();
        let mut agent = RandomAgent::new(ChaCha8Rng::seed_from_u64(9), HISTORY_K);
        let mut sp = spec(1, 9);
        sp.seeds = vec![42];
        let tr = dual_rate_rollout(&mut env, &mut agent, &sp, &RewardParams::default()).unwrap();
        let mut plant = crate::plant::Plant::new(params, 42).unwrap();
        for row in &tr.trace[0] {
            let f = plant.step(row.cmd).unwrap();
            assert_eq!((row.sample.fx, row.sample.fy), (f.fx, f.fy));
            assert_eq!(row.sample.theta, plant.state().theta_m);
        }
    }
}
