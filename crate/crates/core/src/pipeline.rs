//! The stages of a full run and the files each one leaves in the output tree.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::config::Config;
use crate::datagen::{generate_dataset, read_dataset, write_dataset, DataError, DataLog, Dataset};
use crate::eval::{
    compare_controllers, emit_plots, run_evaluation, run_in_surrogate, summaries_from_csv, summaries_to_csv, AxisStats, CompareRow,
    CompareTable, Controller, EvalError, SummaryRecord,
};
use crate::rl::{
    dual_rate_rollout, train_grid, train_single, Agent, EpisodeSpec, GridBank, PolicyAgent, PolicyCheckpoint,
    RandomAgent, RefSampler, RlError, SurrogateEnv, TrainLog,
};
use crate::substream;
use crate::surrogate::{evaluate_surrogate, train_surrogate, MetricsTable, SurrogateError, SurrogateModel};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("missing input {0}")]
    Missing(PathBuf),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {detail}")]
    Format { path: PathBuf, detail: String },
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Surrogate(#[from] SurrogateError),
    #[error(transparent)]
    Rl(#[from] RlError),
    #[error(transparent)]
    Eval(#[from] EvalError),
}

fn write(path: &Path, body: impl AsRef<[u8]>) -> Result<(), PipelineError> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|source| PipelineError::Io {
            path: dir.to_path_buf(),
            source,
        })?;
    }
    fs::write(path, body).map_err(|source| PipelineError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn require(path: PathBuf) -> Result<PathBuf, PipelineError> {
    if path.exists() {
        Ok(path)
    } else {
        Err(PipelineError::Missing(path))
    }
}

/// Where each artefact lives under the output directory.
#[derive(Debug, Clone)]
pub struct Layout {
    pub root: PathBuf,
}

impl Layout {
    pub fn new(root: &Path) -> Self {
        Layout {
            root: root.to_path_buf(),
        }
    }
    pub fn dataset(&self) -> PathBuf {
        self.root.join("dataset")
    }
    pub fn surrogate(&self) -> PathBuf {
        self.root.join("surrogate.ckpt")
    }
    pub fn metrics(&self) -> PathBuf {
        self.root.join("metrics.csv")
    }
    pub fn rl(&self, seed: u64) -> PathBuf {
        self.root.join("rl").join(format!("seed_{seed}"))
    }
    pub fn single(&self, seed: u64) -> PathBuf {
        self.rl(seed).join("single.ckpt")
    }
    pub fn grid(&self, seed: u64) -> PathBuf {
        self.rl(seed).join("grid")
    }
    pub fn eval(&self, name: &str) -> PathBuf {
        self.root.join("eval").join(name)
    }
}

pub fn collect(cfg: &Config, seed: u64, lay: &Layout) -> Result<Dataset, PipelineError> {
    let ds = generate_dataset(&cfg.plant, &cfg.dataset, seed)?;
    write_dataset(&ds, &lay.dataset())?;
    Ok(ds)
}

/// Trains on the train split, scores on the test split and writes the
/// checkpoint and the metrics table.
pub fn fit_surrogate(cfg: &Config, seed: u64, lay: &Layout) -> Result<(SurrogateModel, MetricsTable), PipelineError> {
    let ds = read_dataset(&require(lay.dataset())?)?;
    let train = ds.train();
    let test = ds.test();
    let (model, _, _) = train_surrogate(&train, &cfg.surrogate, seed)?;
    let table = evaluate_surrogate(&model, &test)?;
    model.save(&lay.surrogate())?;
    write(&lay.metrics(), table.to_csv())?;
    Ok((model, table))
}

pub fn load_surrogate(lay: &Layout) -> Result<SurrogateModel, PipelineError> {
    Ok(SurrogateModel::load(&require(lay.surrogate())?)?)
}

fn curve_csv(log: &TrainLog) -> String {
    let mut s = String::from("episode,reference_x,reference_y,mean_reward\n");
    for (i, (m, r)) in log.episode_rewards.iter().zip(&log.episode_references).enumerate() {
        writeln!(s, "{i},{},{},{m}", r[0], r[1]).unwrap();
    }
    s
}

/// Trains and saves the single controller; returns its checkpoint size.
pub fn fit_single(cfg: &Config, model: &SurrogateModel, seed: u64, lay: &Layout) -> Result<(PolicyCheckpoint, u64), PipelineError> {
    let (ck, log) = train_single(model, &cfg.single_spec(), seed)?;
    let path = lay.single(seed);
    write(&lay.rl(seed).join("single_curve.csv"), curve_csv(&log))?;
    ck.save(&path)?;
    let size = fs::metadata(&path).map(|m| m.len()).unwrap_or(0);
    Ok((ck, size))
}

/// Trains and saves the grid bank; returns per-member checkpoint sizes and
/// the points that failed.
pub fn fit_grid(
    cfg: &Config,
    model: &SurrogateModel,
    seed: u64,
    lay: &Layout,
) -> Result<(GridBank, Vec<u64>, Vec<([f64; 2], RlError)>), PipelineError> {
    let (bank, logs, failures) = train_grid(model, &cfg.references, &cfg.grid(), seed)?;
    let sizes = bank.save(&lay.grid(seed))?;
    // logs follow the configured order, the bank its sorted one
    for log in &logs {
        let Some([x, y]) = log.episode_references.first() else { continue };
        write(&lay.grid(seed).join(format!("curve_{x}_{y}.csv")), curve_csv(log))?;
    }
    Ok((bank, sizes, failures))
}

pub fn load_single(lay: &Layout, seed: u64) -> Result<PolicyCheckpoint, PipelineError> {
    Ok(PolicyCheckpoint::load(&require(lay.single(seed))?)?)
}

pub fn load_grid(lay: &Layout, seed: u64) -> Result<GridBank, PipelineError> {
    require(lay.grid(seed).join("grid.txt"))?;
    Ok(GridBank::load(&lay.grid(seed))?)
}

/// Trained single policy against uniform random actions, both in the
/// surrogate on the same references.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LearningCheck {
    pub seed: u64,
    pub trained: f64,
    pub random: f64,
}

impl LearningCheck {
    /// Fraction by which the trained policy cuts `−r` relative to random.
    pub fn reduction(&self) -> f64 {
        1.0 - self.trained / self.random
    }
}

pub fn learning_check(cfg: &Config, model: &SurrogateModel, single: &PolicyCheckpoint, seed: u64) -> Result<LearningCheck, PipelineError> {
    let n = cfg.baseline_episodes;
    let mut rng = substream(seed, 300);
    let spec = EpisodeSpec {
        references: (0..n).map(|_| RefSampler::training_range().sample(&mut rng)).collect(),
        seeds: vec![0; n],
        steps: cfg.single.episode_steps,
        bootstrap: false,
    };
    let score = |agent: &mut dyn Agent| -> Result<f64, PipelineError> {
        let mut env = SurrogateEnv::new(model, n);
        let tr = dual_rate_rollout(&mut env, agent, &spec, &cfg.reward)?;
        Ok((0..n).map(|e| tr.mean_reward(e)).sum::<f64>() / n as f64)
    };
    let trained = score(&mut PolicyAgent::mean(&single.policy))?;
    let random = score(&mut RandomAgent::new(substream(seed, 301), single.policy.k))?;
    Ok(LearningCheck { seed, trained, random })
}

/// Mean |F_e| of a grid member at its own reference, in the surrogate and
/// on the plant.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TransferCheck {
    pub seed: u64,
    pub reference: [f64; 2],
    pub surrogate: f64,
    pub plant: f64,
}

pub fn transfer_checks(cfg: &Config, model: &SurrogateModel, bank: &GridBank, seed: u64) -> Result<Vec<TransferCheck>, PipelineError> {
    let mut out = Vec::new();
    for ck in bank.policies() {
        let r = ck.reference.expect("grid member");
        let ctl = Controller::Single(ck.clone());
        let (s, _) = run_in_surrogate(&ctl, model, r, &cfg.reward)?;
        let (p, _) = run_evaluation(&ctl, &cfg.plant, r, seed, &cfg.reward)?;
        out.push(TransferCheck {
            seed,
            reference: r,
            surrogate: s.mean_abs_fe,
            plant: p.mean_abs_fe,
        });
    }
    Ok(out)
}

/// Runs `ctl` on the plant and writes `trace.csv` and `summary.csv` to `dir`.
pub fn evaluate_to(cfg: &Config, ctl: &Controller, reference: [f64; 2], seed: u64, dir: &Path) -> Result<SummaryRecord, PipelineError> {
    let (s, log) = run_evaluation(ctl, &cfg.plant, reference, seed, &cfg.reward)?;
    let rec = SummaryRecord {
        seed,
        controller: ctl.name().to_string(),
        summary: s,
    };
    write(&dir.join("trace.csv"), log.to_csv())?;
    write(&dir.join("summary.csv"), summaries_to_csv(std::slice::from_ref(&rec)))?;
    Ok(rec)
}

/// Reads back what [`evaluate_to`] wrote and emits the plot files next to it.
pub fn plot_from(dir: &Path) -> Result<Vec<PathBuf>, PipelineError> {
    let read = |name: &str| {
        let path = require(dir.join(name))?;
        fs::read_to_string(&path).map_err(|source| PipelineError::Io { path, source })
    };
    let log = DataLog::from_csv(&read("trace.csv")?, &dir.join("trace.csv"))?;
    let recs = summaries_from_csv(&read("summary.csv")?).map_err(|d| PipelineError::Format {
        path: dir.join("summary.csv"),
        detail: d,
    })?;
    let rec = recs.first().ok_or_else(|| PipelineError::Format {
        path: dir.join("summary.csv"),
        detail: "no rows".into(),
    })?;
    Ok(emit_plots(&log, rec.summary.reference, dir)?)
}

/// Everything the acceptance checks read back from a pipeline run.
#[derive(Debug, Clone)]
pub struct PipelineReport {
    pub metrics: MetricsTable,
    pub learning: Vec<LearningCheck>,
    pub transfer: Vec<TransferCheck>,
    /// Per RL seed comparison tables.
    pub compare: Vec<(u64, CompareTable)>,
    /// Averaged over seeds.
    pub overall: CompareTable,
    /// Checkpoint sizes in bytes: single then grid members, per seed.
    pub sizes: Vec<(u64, u64, Vec<u64>)>,
    pub failures: Vec<(u64, [f64; 2], String)>,
}

impl PipelineReport {
    /// RL seeds where the grid's overall x error exceeds the single one's.
    pub fn ordering_failures(&self) -> Vec<u64> {
        self.compare
            .iter()
            .filter(|(_, t)| t.overall.grid.error[0] > t.overall.single.error[0])
            .map(|(s, _)| *s)
            .collect()
    }
}

fn average_tables(tables: &[(u64, CompareTable)]) -> CompareTable {
    let first = &tables[0].1;
    let rows = (0..first.rows.len())
        .map(|i| CompareRow {
            reference: first.rows[i].reference,
            single: AxisStats::mean_of(&tables.iter().map(|(_, t)| t.rows[i].single).collect::<Vec<_>>()),
            grid: AxisStats::mean_of(&tables.iter().map(|(_, t)| t.rows[i].grid).collect::<Vec<_>>()),
        })
        .collect();
    CompareTable::from_rows(rows)
}

/// Data, surrogate, both controller designs for each RL seed, plant
/// evaluation, comparison and plots. `progress` receives one line per stage.
pub fn run_pipeline(cfg: &Config, seed: u64, out: &Path, progress: &mut dyn FnMut(&str)) -> Result<PipelineReport, PipelineError> {
    let lay = Layout::new(out);
    write(&out.join("config.txt"), cfg.to_text())?;
    collect(cfg, seed, &lay)?;
    progress("collected dataset");
    let (model, metrics) = fit_surrogate(cfg, seed, &lay)?;
    progress(&format!(
        "surrogate: angle R2 {:.4}, force RMSE/std x {:.3} y {:.3}",
        metrics.theta_r2_rollout, metrics.force_rmse_ratio_rollout[0], metrics.force_rmse_ratio_rollout[1]
    ));

    let mut report = PipelineReport {
        metrics,
        learning: Vec::new(),
        transfer: Vec::new(),
        compare: Vec::new(),
        overall: CompareTable::from_rows(Vec::new()),
        sizes: Vec::new(),
        failures: Vec::new(),
    };
    let mut records = Vec::new();
    for r in 0..cfg.rl_seeds as u64 {
        let s = seed.wrapping_add(r);
        let (single, single_size) = fit_single(cfg, &model, s, &lay)?;
        progress(&format!("seed {s}: single controller trained"));
        let (bank, grid_sizes, failures) = fit_grid(cfg, &model, s, &lay)?;
        for (p, e) in failures {
            progress(&format!("seed {s}: grid point {p:?} failed: {e}"));
            report.failures.push((s, p, e.to_string()));
        }
        progress(&format!("seed {s}: grid bank trained ({} policies)", bank.len()));
        report.sizes.push((s, single_size, grid_sizes));
        report.learning.push(learning_check(cfg, &model, &single, s)?);
        report.transfer.extend(transfer_checks(cfg, &model, &bank, s)?);
        let (table, recs) = compare_controllers(&single, &bank, &cfg.references, &[s], &cfg.plant, &cfg.reward)?;
        write(&lay.rl(s).join("compare.csv"), table.to_csv())?;
        if table.overall.grid.error[0] > table.overall.single.error[0] {
            progress(&format!("seed {s}: ordering flag: grid x error above single"));
        }
        progress(&format!("seed {s}: evaluated on the plant"));
        records.extend(recs);
        report.compare.push((s, table));
    }
    report.overall = average_tables(&report.compare);
    write(&out.join("compare.csv"), report.overall.to_csv())?;
    write(&out.join("summary.csv"), summaries_to_csv(&records))?;
    write(&out.join("learning.csv"), learning_csv(&report.learning))?;
    write(&out.join("transfer.csv"), transfer_csv(&report.transfer))?;
    write(&out.join("ordering.csv"), ordering_csv(&report))?;

    // representative runs of both designs on the first RL seed
    let plot_ref = cfg.references.iter().copied().find(|r| *r == [1.0, 1.0]).unwrap_or(cfg.references[0]);
    let single = load_single(&lay, seed)?;
    let bank = load_grid(&lay, seed)?;
    for ctl in [Controller::Single(single), Controller::Grid(bank)] {
        let dir = lay.eval(ctl.name());
        evaluate_to(cfg, &ctl, plot_ref, seed, &dir)?;
        plot_from(&dir)?;
    }
    progress("evaluation and plots written");
    Ok(report)
}

pub fn learning_csv(rows: &[LearningCheck]) -> String {
    let mut s = String::from("seed,trained_mean_reward,random_mean_reward,reduction\n");
    for r in rows {
        writeln!(s, "{},{},{},{}", r.seed, r.trained, r.random, r.reduction()).unwrap();
    }
    s
}

pub fn transfer_csv(rows: &[TransferCheck]) -> String {
    let mut s = String::from("seed,reference_x,reference_y,surrogate_abs_fe,plant_abs_fe,ratio\n");
    for r in rows {
        writeln!(s, "{},{},{},{},{},{}", r.seed, r.reference[0], r.reference[1], r.surrogate, r.plant, r.plant / r.surrogate).unwrap();
    }
    s
}

fn ordering_csv(report: &PipelineReport) -> String {
    let mut s = String::from("seed,single_x_error,grid_x_error,grid_not_worse\n");
    for (seed, t) in &report.compare {
        let (a, b) = (t.overall.single.error[0], t.overall.grid.error[0]);
        writeln!(s, "{seed},{a},{b},{}", b <= a).unwrap();
    }
    s
}
