//! Flat `key = value` run configuration. Every tunable default lives here;
//! a config file overrides any subset of keys.

use std::fmt::Write as _;
use std::path::Path;

use thiserror::Error;

use crate::datagen::DatasetConfig;
use crate::plant::PlantParams;
use crate::reward::RewardParams;
use crate::rl::{in_training_range, TrainSpec, TABLE_REFERENCES};
use crate::surrogate::TrainConfig;

#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error("{path}:{line}: {detail}")]
    Parse { path: String, line: usize, detail: String },
    #[error("{path}: {detail}")]
    Read { path: String, detail: String },
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Config {
    pub plant: PlantParams,
    pub dataset: DatasetConfig,
    pub surrogate: TrainConfig,
    pub reward: RewardParams,
    /// Single-controller training; its PPO and network settings are shared
    /// by the grid members.
    pub single: TrainSpec,
    pub grid_steps: usize,
    pub references: Vec<[f64; 2]>,
    /// RL seeds per pipeline run: `seed, seed + 1, …`.
    pub rl_seeds: usize,
    /// Surrogate episodes used to compare the trained single policy with
    /// random actions.
    pub baseline_episodes: usize,
}

impl Default for Config {
    fn default() -> Self {
        Config {
            plant: PlantParams::default(),
            dataset: DatasetConfig::default(),
            surrogate: TrainConfig::default(),
            reward: RewardParams::default(),
            single: TrainSpec::default(),
            grid_steps: TrainSpec::grid_default().total_steps,
            references: TABLE_REFERENCES.to_vec(),
            rl_seeds: 3,
            baseline_episodes: 10,
        }
    }
}

enum Slot<'a> {
    F64(&'a mut f64),
    Usize(&'a mut usize),
    Refs(&'a mut Vec<[f64; 2]>),
}

impl Config {
    fn slots(&mut self) -> Vec<(&'static str, Slot<'_>)> {
        use Slot::*;
        let p = &mut self.plant;
        let d = &mut self.dataset;
        let s = &mut self.surrogate;
        let r = &mut self.reward;
        let t = &mut self.single;
        vec![
            ("plant.c_n", F64(&mut p.c_n)),
            ("plant.c_a", F64(&mut p.c_a)),
            ("plant.tau", F64(&mut p.tau)),
            ("plant.a_max", F64(&mut p.a_max)),
            ("plant.sigma", F64(&mut p.sigma)),
            ("datagen.train_logs", Usize(&mut d.train_logs)),
            ("datagen.test_logs", Usize(&mut d.test_logs)),
            ("datagen.samples", Usize(&mut d.samples)),
            ("datagen.reach_tolerance", F64(&mut d.collect.reach_tolerance)),
            ("datagen.timeout", F64(&mut d.collect.timeout)),
            ("datagen.dwell_max", F64(&mut d.collect.dwell_max)),
            ("datagen.preempt_mean", F64(&mut d.collect.preempt_mean)),
            ("surrogate.batch", Usize(&mut s.batch)),
            ("surrogate.lr", F64(&mut s.lr)),
            ("surrogate.max_epochs", Usize(&mut s.max_epochs)),
            ("surrogate.patience", Usize(&mut s.patience)),
            ("surrogate.holdout", F64(&mut s.holdout)),
            ("surrogate.pos_stride", Usize(&mut s.pos_stride)),
            ("surrogate.force_stride", Usize(&mut s.force_stride)),
            ("surrogate.min_examples", Usize(&mut s.min_examples)),
            ("reward.w_x", F64(&mut r.w_x)),
            ("reward.w_y", F64(&mut r.w_y)),
            ("reward.lambda_x", F64(&mut r.lambda_x)),
            ("reward.lambda_y", F64(&mut r.lambda_y)),
            ("reward.window", Usize(&mut r.window)),
            ("ppo.gamma", F64(&mut t.ppo.gamma)),
            ("ppo.lambda", F64(&mut t.ppo.lambda)),
            ("ppo.clip", F64(&mut t.ppo.clip)),
            ("ppo.epochs", Usize(&mut t.ppo.epochs)),
            ("ppo.horizon", Usize(&mut t.ppo.horizon)),
            ("ppo.minibatch", Usize(&mut t.ppo.minibatch)),
            ("ppo.ent_coef", F64(&mut t.ppo.ent_coef)),
            ("ppo.vf_coef", F64(&mut t.ppo.vf_coef)),
            ("ppo.lr", F64(&mut t.ppo.lr)),
            ("ppo.max_grad_norm", F64(&mut t.ppo.max_grad_norm)),
            ("ppo.kl_stop", F64(&mut t.ppo.kl_stop)),
            ("ppo.chunk_len", Usize(&mut t.ppo.chunk_len)),
            ("rl.single_steps", Usize(&mut t.total_steps)),
            ("rl.grid_steps", Usize(&mut self.grid_steps)),
            ("rl.hidden", Usize(&mut t.hidden)),
            ("rl.history", Usize(&mut t.history)),
            ("rl.init_log_std", F64(&mut t.init_log_std)),
            ("rl.value_scale", F64(&mut t.value_scale)),
            ("rl.episode_steps", Usize(&mut t.episode_steps)),
            ("rl.best_window", Usize(&mut t.best_window)),
            ("rl.references", Refs(&mut self.references)),
            ("run.rl_seeds", Usize(&mut self.rl_seeds)),
            ("run.baseline_episodes", Usize(&mut self.baseline_episodes)),
        ]
    }

    /// Grid members: the single spec with their own step budget.
    pub fn grid(&self) -> TrainSpec {
        TrainSpec {
            total_steps: self.grid_steps,
            reward: self.reward,
            ..self.single
        }
    }

    /// Single spec with the configured reward.
    pub fn single_spec(&self) -> TrainSpec {
        TrainSpec {
            reward: self.reward,
            ..self.single
        }
    }

    /// Every key with its current value, one per line.
    pub fn to_text(&self) -> String {
        let mut c = self.clone();
        let mut s = String::new();
        for (k, slot) in c.slots() {
            let v = match slot {
                Slot::F64(v) => v.to_string(),
                Slot::Usize(v) => v.to_string(),
                Slot::Refs(v) => format_refs(v),
            };
            writeln!(s, "{k} = {v}").unwrap();
        }
        s
    }

    /// Applies `key = value` lines over the current values. Blank lines and
    /// `#` comments are skipped; unknown keys are errors.
    pub fn apply(&mut self, text: &str, path: &str) -> Result<(), ConfigError> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let err = |detail: String| ConfigError::Parse {
                path: path.to_string(),
                line: i + 1,
                detail,
            };
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| err(format!("expected `key = value`, got `{line}`")))?;
            let (key, value) = (key.trim(), value.trim());
            let mut slots = self.slots();
            let slot = slots
                .iter_mut()
                .find(|(k, _)| *k == key)
                .map(|(_, s)| s)
                .ok_or_else(|| err(format!("unknown key `{key}`")))?;
            match slot {
                Slot::F64(v) => **v = value.parse().map_err(|_| err(format!("`{key}` needs a number, got `{value}`")))?,
                Slot::Usize(v) => {
                    **v = value
                        .parse()
                        .map_err(|_| err(format!("`{key}` needs a non-negative integer, got `{value}`")))?
                }
                Slot::Refs(v) => **v = parse_refs(value).map_err(err)?,
            }
        }
        self.validate()
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Read {
            path: path.display().to_string(),
            detail: e.to_string(),
        })?;
        let mut c = Config::default();
        c.apply(&text, &path.display().to_string())?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |s: String| Err(ConfigError::Invalid(s));
        self.plant.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.single.ppo.validate().map_err(ConfigError::Invalid)?;
        if self.references.is_empty() {
            return bad("rl.references is empty".into());
        }
        for r in &self.references {
            if !in_training_range(*r) {
                return bad(format!("reference {r:?} outside the training range [0,3]x[-1,1]"));
            }
        }
        if self.reward.window == 0 {
            return bad("reward.window must be positive".into());
        }
        if self.single.episode_steps == 0 || self.single.hidden == 0 {
            return bad("rl.episode_steps and rl.hidden must be positive".into());
        }
        if self.rl_seeds == 0 || self.baseline_episodes == 0 {
            return bad("run.rl_seeds and run.baseline_episodes must be positive".into());
        }
        if self.dataset.train_logs == 0 || self.dataset.test_logs == 0 {
            return bad("datagen.train_logs and data.test_logs must be positive".into());
        }
        Ok(())
    }
}

/// `x,y; x,y; …`
pub fn format_refs(refs: &[[f64; 2]]) -> String {
    refs.iter().map(|[x, y]| format!("{x},{y}")).collect::<Vec<_>>().join("; ")
}

pub fn parse_refs(text: &str) -> Result<Vec<[f64; 2]>, String> {
    text.split(';')
        .map(|p| p.trim())
        .filter(|p| !p.is_empty())
        .map(|p| {
            let (x, y) = p.split_once(',').ok_or_else(|| format!("reference `{p}` is not `x,y`"))?;
            let num = |s: &str| s.trim().parse::<f64>().map_err(|_| format!("bad number `{s}` in `{p}`"));
            Ok([num(x)?, num(y)?])
        })
        .collect()
}
