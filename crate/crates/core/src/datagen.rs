//! Random-command data collection against the plant, and the on-disk dataset
//! format (`manifest` plus one CSV per log).

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::plant::{MotorCommand, Plant, PlantFault, PlantParams, ANGLE_LIMIT, DT, SPEED_MAX, SPEED_MIN};
use crate::substream;

pub const COLUMNS: [&str; 6] = ["t", "cmd_angle", "cmd_omega", "theta", "fx", "fy"];
const MANIFEST_MAGIC: &str = "softfin-dataset 1";
/// Shortest log the surrogate windows can use.
pub const MIN_LOG_LEN: usize = 100;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}:{line}: {detail}")]
    Parse {
        path: PathBuf,
        line: usize,
        detail: String,
    },
    #[error("{path}: missing column `{column}`")]
    MissingColumn { path: PathBuf, column: String },
    #[error("log needs at least {MIN_LOG_LEN} samples, got {0}")]
    TooShort(usize),
    #[error(transparent)]
    Plant(#[from] PlantFault),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DataError + '_ {
    move |source| DataError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// 100 Hz log, stored column-wise. Row `k` is at `t = k·0.01`: the command
/// applied during step `k` and the angle and force that step produced.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct DataLog {
    pub t: Vec<f64>,
    pub cmd_angle: Vec<f64>,
    pub cmd_omega: Vec<f64>,
    pub theta: Vec<f64>,
    pub fx: Vec<f64>,
    pub fy: Vec<f64>,
}

impl DataLog {
    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }

    pub fn push(&mut self, t: f64, cmd: MotorCommand, theta: f64, fx: f64, fy: f64) {
        self.t.push(t);
        self.cmd_angle.push(cmd.target_angle);
        self.cmd_omega.push(cmd.target_angular_velocity);
        self.theta.push(theta);
        self.fx.push(fx);
        self.fy.push(fy);
    }

    pub fn command(&self, k: usize) -> MotorCommand {
        MotorCommand::new(self.cmd_angle[k], self.cmd_omega[k])
    }

    fn columns(&self) -> [&Vec<f64>; 6] {
        [&self.t, &self.cmd_angle, &self.cmd_omega, &self.theta, &self.fx, &self.fy]
    }

    fn columns_mut(&mut self) -> [&mut Vec<f64>; 6] {
        [
            &mut self.t,
            &mut self.cmd_angle,
            &mut self.cmd_omega,
            &mut self.theta,
            &mut self.fx,
            &mut self.fy,
        ]
    }

    /// Number of rows whose command differs from the previous row's.
    pub fn command_switches(&self) -> usize {
        (1..self.len())
            .filter(|&k| self.command(k) != self.command(k - 1))
            .count()
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::with_capacity(self.len() * 96);
        s.push_str(&COLUMNS.join(","));
        s.push('\n');
        let cols = self.columns();
        for k in 0..self.len() {
            for (i, c) in cols.iter().enumerate() {
                if i > 0 {
                    s.push(',');
                }
                // `Display` for f64 prints the shortest string that parses back exactly.
                write!(s, "{}", c[k]).unwrap();
            }
            s.push('\n');
        }
        s
    }

    /// Parses a CSV with a header naming all six columns (any order, extra
    /// columns ignored). `path` only labels errors.
    pub fn from_csv(text: &str, path: &Path) -> Result<Self, DataError> {
        let mut lines = text.lines().enumerate();
        let header = match lines.next() {
            Some((_, h)) => h,
            None => {
                return Err(DataError::Parse {
                    path: path.to_path_buf(),
                    line: 1,
                    detail: "empty file".into(),
                })
            }
        };
        let names: Vec<&str> = header.split(',').map(str::trim).collect();
        let mut index = [0usize; 6];
        for (slot, col) in index.iter_mut().zip(COLUMNS) {
            *slot = names
                .iter()
                .position(|n| *n == col)
                .ok_or_else(|| DataError::MissingColumn {
                    path: path.to_path_buf(),
                    column: col.to_string(),
                })?;
        }
        let mut log = DataLog::default();
        for (i, line) in lines {
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != names.len() {
                return Err(DataError::Parse {
                    path: path.to_path_buf(),
                    line: i + 1,
                    detail: format!("expected {} fields, found {}", names.len(), fields.len()),
                });
            }
            for (col, &j) in log.columns_mut().into_iter().zip(&index) {
                let v: f64 = fields[j].trim().parse().map_err(|_| DataError::Parse {
                    path: path.to_path_buf(),
                    line: i + 1,
                    detail: format!("`{}` is not a number (column {})", fields[j], names[j]),
                })?;
                col.push(v);
            }
        }
        Ok(log)
    }
}

pub fn sample_command<R: Rng + ?Sized>(rng: &mut R) -> MotorCommand {
    MotorCommand::new(
        rng.random_range(-ANGLE_LIMIT..ANGLE_LIMIT),
        rng.random_range(SPEED_MIN..SPEED_MAX),
    )
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CollectConfig {
    /// A new command fires once the motor is this close to the target (rad).
    pub reach_tolerance: f64,
    /// ... or after this long since it was issued (s).
    pub timeout: f64,
    /// Once the target is reached the command is held for a uniform random
    /// time in `[0, dwell_max]` seconds before the next one fires.
    pub dwell_max: f64,
    /// Mean seconds between forced early re-issues; 0 disables them.
    pub preempt_mean: f64,
}

impl Default for CollectConfig {
    fn default() -> Self {
        CollectConfig {
            reach_tolerance: 0.01,
            timeout: 3.0,
            dwell_max: 0.5,
            preempt_mean: 0.0,
        }
    }
}

/// Drives the plant with random commands for `n_samples` steps.
pub fn collect_log<R: Rng + ?Sized>(
    plant: &mut Plant,
    n_samples: usize,
    cfg: &CollectConfig,
    rng: &mut R,
) -> Result<DataLog, DataError> {
    if n_samples < MIN_LOG_LEN {
        return Err(DataError::TooShort(n_samples));
    }
    let timeout_steps = (cfg.timeout / DT).round() as usize;
    let mut log = DataLog::default();
    let mut cmd = sample_command(rng);
    let mut age = 0usize;
    let mut deadline = preempt_deadline(cfg, rng);
    // steps left to hold after reaching the target
    let mut dwell: Option<usize> = None;
    for k in 0..n_samples {
        let f = plant.step(cmd)?;
        log.push(k as f64 * DT, cmd, plant.state().theta_m, f.fx, f.fy);
        age += 1;
        let reached = (plant.state().theta_m - cmd.target_angle).abs() < cfg.reach_tolerance;
        if reached && dwell.is_none() {
            dwell = Some(if cfg.dwell_max > 0.0 {
                (rng.random_range(0.0..=cfg.dwell_max) / DT).round() as usize
            } else {
                0
            });
        }
        let settled = match dwell.as_mut() {
            Some(0) => true,
            Some(d) => {
                *d -= 1;
                false
            }
            None => false,
        };
        if settled || age >= timeout_steps || age >= deadline {
            cmd = sample_command(rng);
            age = 0;
            dwell = None;
            deadline = preempt_deadline(cfg, rng);
        }
    }
    Ok(log)
}

fn preempt_deadline<R: Rng + ?Sized>(cfg: &CollectConfig, rng: &mut R) -> usize {
    if cfg.preempt_mean <= 0.0 {
        return usize::MAX;
    }
    // exponential waiting time, at least one step
    let u: f64 = rng.random_range(f64::EPSILON..1.0);
    ((-u.ln() * cfg.preempt_mean / DT).ceil() as usize).max(1)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ManifestEntry {
    pub file: String,
    pub split: Split,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetManifest {
    pub seed: u64,
    pub plant_hash: String,
    pub entries: Vec<ManifestEntry>,
}

impl DatasetManifest {
    pub fn to_text(&self) -> String {
        let mut s = format!("{MANIFEST_MAGIC}\nseed {}\nplant {}\n", self.seed, self.plant_hash);
        for e in &self.entries {
            writeln!(s, "log {} {}", e.file, e.split.as_str()).unwrap();
        }
        s
    }

    pub fn parse(text: &str, path: &Path) -> Result<Self, DataError> {
        let bad = |line: usize, detail: String| DataError::Parse {
            path: path.to_path_buf(),
            line,
            detail,
        };
        let mut lines = text.lines().enumerate();
        if lines.next().map(|(_, l)| l.trim()) != Some(MANIFEST_MAGIC) {
            return Err(bad(1, format!("expected `{MANIFEST_MAGIC}`")));
        }
        let mut seed = None;
        let mut plant_hash = None;
        let mut entries = Vec::new();
        for (i, line) in lines {
            let parts: Vec<&str> = line.split_whitespace().collect();
            match parts.as_slice() {
                [] => {}
                ["seed", v] => seed = Some(v.parse().map_err(|_| bad(i + 1, format!("bad seed `{v}`")))?),
                ["plant", h] => plant_hash = Some(h.to_string()),
                ["log", f, split] => {
                    let split = match *split {
                        "train" => Split::Train,
                        "test" => Split::Test,
                        other => return Err(bad(i + 1, format!("unknown split `{other}`"))),
                    };
                    entries.push(ManifestEntry {
                        file: f.to_string(),
                        split,
                    });
                }
                _ => return Err(bad(i + 1, format!("unrecognised line `{line}`"))),
            }
        }
        Ok(DatasetManifest {
            seed: seed.ok_or_else(|| bad(0, "missing `seed`".into()))?,
            plant_hash: plant_hash.ok_or_else(|| bad(0, "missing `plant`".into()))?,
            entries,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub manifest: DatasetManifest,
    pub logs: Vec<DataLog>,
}

impl Dataset {
    pub fn split(&self, split: Split) -> Vec<&DataLog> {
        self.manifest
            .entries
            .iter()
            .zip(&self.logs)
            .filter(|(e, _)| e.split == split)
            .map(|(_, l)| l)
            .collect()
    }

    pub fn train(&self) -> Vec<&DataLog> {
        self.split(Split::Train)
    }

    pub fn test(&self) -> Vec<&DataLog> {
        self.split(Split::Test)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DatasetConfig {
    pub train_logs: usize,
    pub test_logs: usize,
    pub samples: usize,
    pub collect: CollectConfig,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig {
            train_logs: 20,
            test_logs: 3,
            samples: 2000,
            collect: CollectConfig::default(),
        }
    }
}

/// Generates every log from `(seed, params)`; log `i` uses its own plant
/// noise stream and command stream.
pub fn generate_dataset(params: &PlantParams, cfg: &DatasetConfig, seed: u64) -> Result<Dataset, DataError> {
    let n = cfg.train_logs + cfg.test_logs;
    let mut logs = Vec::with_capacity(n);
    let mut entries = Vec::with_capacity(n);
    for i in 0..n {
        let mut cmd_rng: ChaCha8Rng = substream(seed, 2 * i as u64);
        let noise_seed: u64 = substream(seed, 2 * i as u64 + 1).random();
        let mut plant = Plant::new(*params, noise_seed)?;
        logs.push(collect_log(&mut plant, cfg.samples, &cfg.collect, &mut cmd_rng)?);
        entries.push(ManifestEntry {
            file: format!("log_{i:03}.csv"),
            split: if i < cfg.train_logs { Split::Train } else { Split::Test },
        });
    }
    Ok(Dataset {
        manifest: DatasetManifest {
            seed,
            plant_hash: params.fingerprint(),
            entries,
        },
        logs,
    })
}

pub fn write_dataset(ds: &Dataset, dir: &Path) -> Result<(), DataError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    for (e, log) in ds.manifest.entries.iter().zip(&ds.logs) {
        let p = dir.join(&e.file);
        fs::write(&p, log.to_csv()).map_err(io_err(&p))?;
    }
    let m = dir.join("manifest");
    fs::write(&m, ds.manifest.to_text()).map_err(io_err(&m))
}

pub fn read_dataset(dir: &Path) -> Result<Dataset, DataError> {
    let m = dir.join("manifest");
    let manifest = DatasetManifest::parse(&fs::read_to_string(&m).map_err(io_err(&m))?, &m)?;
    let logs = manifest
        .entries
        .iter()
        .map(|e| {
            let p = dir.join(&e.file);
            DataLog::from_csv(&fs::read_to_string(&p).map_err(io_err(&p))?, &p)
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(Dataset { manifest, logs })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::plant::ANGLE_SLACK;
    use rand::SeedableRng;

    #[test]
    fn command_draws_follow_uniform_law() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let draws: Vec<MotorCommand> = (0..100_000).map(|_| sample_command(&mut rng)).collect();
        assert!(draws.iter().all(|c| c.is_valid() && c.target_angular_velocity >= 1.0));
        let mean = draws.iter().map(|c| c.target_angle).sum::<f64>() / draws.len() as f64;
        assert!(mean.abs() < 0.02, "{mean}");
        let lo = draws.iter().map(|c| c.target_angle).fold(f64::MAX, f64::min);
        let hi = draws.iter().map(|c| c.target_angle).fold(f64::MIN, f64::max);
        assert!(lo < -1.56 && hi > 1.56);
        let mut again = ChaCha8Rng::seed_from_u64(1);
        assert_eq!(sample_command(&mut again), draws[0]);
    }

    #[test]
    fn full_length_log_issues_many_commands() {
        let mut plant = Plant::new(PlantParams::default(), 3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let log = collect_log(&mut plant, 20_000, &CollectConfig::default(), &mut rng).unwrap();
        assert_eq!(log.len(), 20_000);
        assert!(log.command_switches() >= 50, "{}", log.command_switches());
        let lim = ANGLE_LIMIT + ANGLE_SLACK;
        assert!(log.theta.iter().all(|t| t.abs() <= lim));
        for (k, t) in log.t.iter().enumerate() {
            assert_eq!(*t, k as f64 * 0.01);
        }
    }

    #[test]
    fn short_log_rejected() {
        let mut plant = Plant::new(PlantParams::default(), 3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        assert!(matches!(
            collect_log(&mut plant, 99, &CollectConfig::default(), &mut rng),
            Err(DataError::TooShort(99))
        ));
    }

    fn small() -> DatasetConfig {
        DatasetConfig {
            train_logs: 2,
            test_logs: 1,
            samples: 300,
            ..DatasetConfig::default()
        }
    }

    #[test]
    fn dataset_round_trip_is_bitwise() {
        let ds = generate_dataset(&PlantParams::default(), &small(), 9).unwrap();
        let dir = tempfile::tempdir().unwrap();
        write_dataset(&ds, dir.path()).unwrap();
        let back = read_dataset(dir.path()).unwrap();
        assert_eq!(back, ds);
        for (a, b) in ds.logs.iter().zip(&back.logs) {
            for (x, y) in a.fx.iter().zip(&b.fx) {
                assert_eq!(x.to_bits(), y.to_bits());
            }
        }
        assert_eq!(back.train().len(), 2);
        assert_eq!(back.test().len(), 1);
        assert!(!back.train().iter().any(|l| std::ptr::eq(*l, back.test()[0])));
        assert!(std::ptr::eq(back.test()[0], &back.logs[2]));
    }

    #[test]
    fn regeneration_is_reproducible() {
        let a = generate_dataset(&PlantParams::default(), &small(), 5).unwrap();
        let b = generate_dataset(&PlantParams::default(), &small(), 5).unwrap();
        let c = generate_dataset(&PlantParams::default(), &small(), 6).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.logs, c.logs);
    }

    #[test]
    fn missing_column_is_named() {
        let text = "t,cmd_angle,cmd_omega,theta,fx\n0,0,1,0,0\n";
        let err = DataLog::from_csv(text, Path::new("x.csv")).unwrap_err();
        assert!(matches!(&err, DataError::MissingColumn { column, .. } if column == "fy"));
        assert!(err.to_string().contains("fy"));
    }

    #[test]
    fn bad_value_reports_line() {
        let text = "t,cmd_angle,cmd_omega,theta,fx,fy\n0,0,1,0,0,0\n0.01,0,1,oops,0,0\n";
        let err = DataLog::from_csv(text, Path::new("x.csv")).unwrap_err();
        assert!(matches!(err, DataError::Parse { line: 3, .. }), "{err}");
        assert!(err.to_string().starts_with("x.csv:3:"));
    }

    #[test]
    fn preemption_shortens_commands() {
        let cfg = CollectConfig {
            preempt_mean: 0.2,
            ..CollectConfig::default()
        };
        let mut plant = Plant::new(PlantParams::default(), 3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let log = collect_log(&mut plant, 2000, &cfg, &mut rng).unwrap();
        let mut plant = Plant::new(PlantParams::default(), 3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let base = collect_log(&mut plant, 2000, &CollectConfig::default(), &mut rng).unwrap();
        assert!(log.command_switches() > base.command_switches());
    }
}
