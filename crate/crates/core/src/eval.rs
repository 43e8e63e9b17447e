//! Controllers trained in the surrogate, run on the plant and scored with the
//! 200-sample moving average; comparison tables and plot data.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::datagen::DataLog;
use crate::metrics::{mean, moving_average, std_dev};
use crate::plant::{PlantParams, DT};
use crate::reward::{step_reward, RewardParams, REWARD_WINDOW};
use crate::rl::{
    dual_rate_rollout, ticks_for_step, Agent, EpisodeSpec, ForceEnv, GridAgent, GridBank, PlantEnv, PolicyAgent,
    PolicyCheckpoint, RandomAgent, RlError, SurrogateEnv, Trajectory, EPISODE_STEPS, HISTORY_K,
};
use crate::substream;
use crate::surrogate::SurrogateModel;

/// Scored interval from the start of a run.
pub const EVAL_SAMPLES: usize = 3000;
/// Shortest run that can be scored (2 s).
pub const MIN_EVAL_SAMPLES: usize = 200;
pub const POLAR_ROWS: usize = 500;
pub const FORCE_ROWS: usize = 1000;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("run too short to score: {seconds} s (need at least 2 s)")]
    TooShort { seconds: f64 },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Rl(#[from] RlError),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> EvalError + '_ {
    move |source| EvalError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Scores of one run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalSummary {
    pub reference: [f64; 2],
    /// Seconds scored.
    pub duration: f64,
    /// Mean |moving average − reference| per axis.
    pub error: [f64; 2],
    /// Std of the moving average per axis.
    pub std: [f64; 2],
    /// Std of the raw force per axis.
    pub raw_std: [f64; 2],
    /// Mean per-step reward recomputed at the control-step boundaries.
    pub mean_reward: f64,
    /// Mean over control steps of `|F_e^x| + |F_e^y|`.
    pub mean_abs_fe: f64,
}

/// Scores the first 30 s of a force trace. Rewards are recomputed at the
/// 33/33/34 control boundaries from the trailing window, exactly as the
/// control loop saw them.
pub fn summarize(fx: &[f64], fy: &[f64], reference: [f64; 2], reward: &RewardParams) -> Result<EvalSummary, EvalError> {
    let n = fx.len().min(fy.len()).min(EVAL_SAMPLES);
    if n < MIN_EVAL_SAMPLES {
        return Err(EvalError::TooShort { seconds: n as f64 * DT });
    }
    let (fx, fy) = (&fx[..n], &fy[..n]);
    let mut s = EvalSummary {
        reference,
        duration: n as f64 * DT,
        error: [0.0; 2],
        std: [0.0; 2],
        raw_std: [0.0; 2],
        mean_reward: 0.0,
        mean_abs_fe: 0.0,
    };
    for (a, f) in [fx, fy].into_iter().enumerate() {
        let ma = moving_average(f, REWARD_WINDOW).expect("window is positive");
        s.error[a] = mean(&ma.iter().map(|m| (m - reference[a]).abs()).collect::<Vec<_>>());
        s.std[a] = std_dev(&ma);
        s.raw_std[a] = std_dev(f);
    }
    let mut end = 0;
    let mut steps = 0;
    loop {
        let next = end + ticks_for_step(steps);
        if next > n {
            break;
        }
        end = next;
        let lo = end.saturating_sub(reward.window);
        let terms = step_reward(&fx[lo..end], &fy[lo..end], reference, reward).expect("window has samples");
        s.mean_reward += terms.reward;
        s.mean_abs_fe += terms.error[0].abs() + terms.error[1].abs();
        steps += 1;
    }
    s.mean_reward /= steps.max(1) as f64;
    s.mean_abs_fe /= steps.max(1) as f64;
    Ok(s)
}

/// 100 Hz trace of env `e` in the data-log layout.
pub fn trace_log(tr: &Trajectory, e: usize) -> DataLog {
    let mut log = DataLog::default();
    for (k, r) in tr.trace[e].iter().enumerate() {
        log.push(k as f64 * DT, r.cmd, r.sample.theta, r.sample.fx, r.sample.fy);
    }
    log
}

/// What drives the fin during an evaluation.
#[derive(Debug, Clone)]
pub enum Controller {
    Single(PolicyCheckpoint),
    Grid(GridBank),
    /// Uniform random commands from this seed.
    Random(u64),
}

impl Controller {
    pub fn name(&self) -> &'static str {
        match self {
            Controller::Single(_) => "single",
            Controller::Grid(_) => "grid",
            Controller::Random(_) => "random",
        }
    }

    /// Deterministic (mean-action) agent for evaluation.
    pub fn agent(&self) -> Box<dyn Agent + '_> {
        match self {
            Controller::Single(p) => Box::new(PolicyAgent::mean(&p.policy)),
            Controller::Grid(b) => Box::new(GridAgent::new(b)),
            Controller::Random(seed) => Box::new(RandomAgent::new(substream(*seed, 7), HISTORY_K)),
        }
    }
}

/// One 30 s episode of `controller` on any force environment with a single
/// env slot.
pub fn run_episode<E: ForceEnv + ?Sized>(
    env: &mut E,
    controller: &Controller,
    reference: [f64; 2],
    seed: u64,
    reward: &RewardParams,
) -> Result<(EvalSummary, DataLog), EvalError> {
    let spec = EpisodeSpec {
        references: vec![reference],
        seeds: vec![seed],
        steps: EPISODE_STEPS,
        bootstrap: false,
    };
    let mut agent = controller.agent();
    let tr = dual_rate_rollout(env, agent.as_mut(), &spec, reward)?;
    let log = trace_log(&tr, 0);
    let summary = summarize(&log.fx, &log.fy, reference, reward)?;
    Ok((summary, log))
}

/// The transfer test: the controller on the ground-truth plant; `seed`
/// drives the plant's force noise.
pub fn run_evaluation(
    controller: &Controller,
    plant: &PlantParams,
    reference: [f64; 2],
    seed: u64,
    reward: &RewardParams,
) -> Result<(EvalSummary, DataLog), EvalError> {
    let mut env = PlantEnv::new(*plant, 1)?;
    run_episode(&mut env, controller, reference, seed, reward)
}

/// Same episode inside the surrogate, for sim-versus-plant comparisons.
pub fn run_in_surrogate(
    controller: &Controller,
    model: &SurrogateModel,
    reference: [f64; 2],
    reward: &RewardParams,
) -> Result<(EvalSummary, DataLog), EvalError> {
    let mut env = SurrogateEnv::new(model, 1);
    run_episode(&mut env, controller, reference, 0, reward)
}

/// Seed-averaged comparison cells of one controller at one reference.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct AxisStats {
    pub error: [f64; 2],
    pub std: [f64; 2],
}

impl AxisStats {
    pub fn mean_of(items: &[AxisStats]) -> AxisStats {
        let m = items.len().max(1) as f64;
        let mut out = AxisStats::default();
        for s in items {
            for a in 0..2 {
                out.error[a] += s.error[a] / m;
                out.std[a] += s.std[a] / m;
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompareRow {
    pub reference: [f64; 2],
    pub single: AxisStats,
    pub grid: AxisStats,
}

/// Per-reference rows plus the overall mean row.
#[derive(Debug, Clone, PartialEq)]
pub struct CompareTable {
    pub rows: Vec<CompareRow>,
    pub overall: CompareRow,
}

const COMPARE_HEADER: &str = "reference,reference_x,reference_y,single_x_error,single_x_std,single_y_error,single_y_std,grid_x_error,grid_x_std,grid_y_error,grid_y_std";

impl CompareTable {
    pub fn from_rows(rows: Vec<CompareRow>) -> Self {
        let single: Vec<_> = rows.iter().map(|r| r.single).collect();
        let grid: Vec<_> = rows.iter().map(|r| r.grid).collect();
        let overall = CompareRow {
            reference: [f64::NAN; 2],
            single: AxisStats::mean_of(&single),
            grid: AxisStats::mean_of(&grid),
        };
        CompareTable { rows, overall }
    }

    pub fn to_csv(&self) -> String {
        let mut s = format!("{COMPARE_HEADER}\n");
        let cells = |r: &CompareRow| {
            [r.single, r.grid]
                .iter()
                .flat_map(|a| [a.error[0], a.std[0], a.error[1], a.std[1]])
                .map(|v| v.to_string())
                .collect::<Vec<_>>()
                .join(",")
        };
        for r in &self.rows {
            let [x, y] = r.reference;
            writeln!(s, "\"({x}, {y})\",{x},{y},{}", cells(r)).unwrap();
        }
        writeln!(s, "overall mean,,,{}", cells(&self.overall)).unwrap();
        s
    }

    pub fn from_csv(text: &str) -> Result<Self, String> {
        let mut lines = text.lines();
        if lines.next() != Some(COMPARE_HEADER) {
            return Err("compare table header mismatch".into());
        }
        let mut rows = Vec::new();
        let mut overall = None;
        for line in lines.filter(|l| !l.is_empty()) {
            // the quoted label holds a comma; numbers follow it
            let rest = match line.strip_prefix('"') {
                Some(r) => r.split_once("\",").ok_or("unterminated label")?.1,
                None => line.split_once(',').ok_or("missing label")?.1,
            };
            let f: Vec<&str> = rest.split(',').collect();
            if f.len() != 10 {
                return Err(format!("bad row `{line}`"));
            }
            let num = |s: &str| s.parse::<f64>().map_err(|_| format!("bad number `{s}`"));
            let v: Vec<f64> = f[2..].iter().map(|s| num(s)).collect::<Result<_, _>>()?;
            let stats = |o: usize| AxisStats {
                error: [v[o], v[o + 2]],
                std: [v[o + 1], v[o + 3]],
            };
            if f[0].is_empty() {
                overall = Some(CompareRow {
                    reference: [f64::NAN; 2],
                    single: stats(0),
                    grid: stats(4),
                });
            } else {
                rows.push(CompareRow {
                    reference: [num(f[0])?, num(f[1])?],
                    single: stats(0),
                    grid: stats(4),
                });
            }
        }
        Ok(CompareTable {
            rows,
            overall: overall.ok_or("missing overall row")?,
        })
    }
}

/// One evaluated run for `summary.csv`.
#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRecord {
    pub seed: u64,
    pub controller: String,
    pub summary: EvalSummary,
}

const SUMMARY_HEADER: &str = "seed,controller,reference_x,reference_y,x_error,x_std,y_error,y_std,x_raw_std,y_raw_std,mean_reward,mean_abs_fe,duration";

pub fn summaries_to_csv(records: &[SummaryRecord]) -> String {
    let mut s = format!("{SUMMARY_HEADER}\n");
    for r in records {
        let m = &r.summary;
        writeln!(
            s,
            "{},{},{},{},{},{},{},{},{},{},{},{},{}",
            r.seed,
            r.controller,
            m.reference[0],
            m.reference[1],
            m.error[0],
            m.std[0],
            m.error[1],
            m.std[1],
            m.raw_std[0],
            m.raw_std[1],
            m.mean_reward,
            m.mean_abs_fe,
            m.duration
        )
        .unwrap();
    }
    s
}

pub fn summaries_from_csv(text: &str) -> Result<Vec<SummaryRecord>, String> {
    let mut lines = text.lines();
    if lines.next() != Some(SUMMARY_HEADER) {
        return Err("summary header mismatch".into());
    }
    lines
        .filter(|l| !l.is_empty())
        .map(|line| {
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 13 {
                return Err(format!("bad row `{line}`"));
            }
            let v: Vec<f64> = f[2..]
                .iter()
                .map(|s| s.parse().map_err(|_| format!("bad number `{s}`")))
                .collect::<Result<_, _>>()?;
            Ok(SummaryRecord {
                seed: f[0].parse().map_err(|_| format!("bad seed `{}`", f[0]))?,
                controller: f[1].to_string(),
                summary: EvalSummary {
                    reference: [v[0], v[1]],
                    error: [v[2], v[4]],
                    std: [v[3], v[5]],
                    raw_std: [v[6], v[7]],
                    mean_reward: v[8],
                    mean_abs_fe: v[9],
                    duration: v[10],
                },
            })
        })
        .collect()
}

/// Runs both controllers on the plant at every reference for every seed.
pub fn compare_controllers(
    single: &PolicyCheckpoint,
    bank: &GridBank,
    references: &[[f64; 2]],
    seeds: &[u64],
    plant: &PlantParams,
    reward: &RewardParams,
) -> Result<(CompareTable, Vec<SummaryRecord>), EvalError> {
    let controllers = [Controller::Single(single.clone()), Controller::Grid(bank.clone())];
    let mut records = Vec::new();
    let mut rows = Vec::new();
    for r in references {
        let mut per = [Vec::new(), Vec::new()];
        for &seed in seeds {
            for (c, ctl) in controllers.iter().enumerate() {
                let (s, _) = run_evaluation(ctl, plant, *r, seed, reward)?;
                per[c].push(AxisStats {
                    error: s.error,
                    std: s.std,
                });
                records.push(SummaryRecord {
                    seed,
                    controller: ctl.name().to_string(),
                    summary: s,
                });
            }
        }
        rows.push(CompareRow {
            reference: *r,
            single: AxisStats::mean_of(&per[0]),
            grid: AxisStats::mean_of(&per[1]),
        });
    }
    Ok((CompareTable::from_rows(rows), records))
}

/// Writes polar and force plot data (CSV and SVG) for the start of a run.
pub fn emit_plots(log: &DataLog, reference: [f64; 2], dir: &Path) -> Result<Vec<PathBuf>, EvalError> {
    if log.len() < FORCE_ROWS {
        return Err(EvalError::TooShort {
            seconds: log.len() as f64 * DT,
        });
    }
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let mut written = Vec::new();
    let mut put = |name: &str, body: String| -> Result<(), EvalError> {
        let p = dir.join(name);
        fs::write(&p, body).map_err(io_err(&p))?;
        written.push(p);
        Ok(())
    };

    let mut polar = String::from("t,angle_deg\n");
    for k in 0..POLAR_ROWS {
        writeln!(polar, "{},{}", log.t[k], log.theta[k].to_degrees()).unwrap();
    }
    put("polar.csv", polar)?;

    let fx = &log.fx[..FORCE_ROWS];
    let fy = &log.fy[..FORCE_ROWS];
    let max = moving_average(fx, REWARD_WINDOW).expect("window is positive");
    let may = moving_average(fy, REWARD_WINDOW).expect("window is positive");
    let mut force = String::from("t,fx,fy,fx_ma,fy_ma\n");
    for k in 0..FORCE_ROWS {
        writeln!(force, "{},{},{},{},{}", log.t[k], fx[k], fy[k], max[k], may[k]).unwrap();
    }
    put("force.csv", force)?;
    put("polar.svg", polar_svg(&log.theta[..POLAR_ROWS]))?;
    put("force.svg", force_svg(&log.t[..FORCE_ROWS], [fx, fy], [&max, &may], reference))?;
    Ok(written)
}

/// Fin angle as a polar trace: angle is the fin angle, radius grows with time.
fn polar_svg(theta: &[f64]) -> String {
    let (cx, cy, r) = (210.0, 210.0, 190.0);
    let n = theta.len() as f64;
    let mut pts = String::new();
    for (k, th) in theta.iter().enumerate() {
        let rad = r * (k as f64 + 1.0) / n;
        // 0 rad points along +x of the figure, positive angles upward
        write!(pts, "{:.2},{:.2} ", cx + rad * th.cos(), cy - rad * th.sin()).unwrap();
    }
    format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"420\" height=\"420\" viewBox=\"0 0 420 420\">\n\
<circle cx=\"{cx}\" cy=\"{cy}\" r=\"{r}\" fill=\"none\" stroke=\"#ccc\"/>\n\
<line x1=\"{cx}\" y1=\"{}\" x2=\"{cx}\" y2=\"{}\" stroke=\"#ccc\"/>\n\
<line x1=\"{}\" y1=\"{cy}\" x2=\"{}\" y2=\"{cy}\" stroke=\"#ccc\"/>\n\
<polyline fill=\"none\" stroke=\"#1f77b4\" stroke-width=\"1\" points=\"{}\"/>\n\
<text x=\"10\" y=\"20\" font-size=\"12\">fin angle (deg), first 5 s</text>\n</svg>\n",
        cy - r,
        cy + r,
        cx - r,
        cx + r,
        pts.trim_end()
    )
}

fn force_svg(t: &[f64], raw: [&[f64]; 2], ma: [&[f64]; 2], reference: [f64; 2]) -> String {
    let (w, h, pad) = (640.0, 200.0, 30.0);
    let t_end = t[t.len() - 1].max(DT);
    let mut body = String::new();
    for a in 0..2 {
        let lo = raw[a].iter().chain([&reference[a]]).fold(f64::INFINITY, |m, v| m.min(*v));
        let hi = raw[a].iter().chain([&reference[a]]).fold(f64::NEG_INFINITY, |m, v| m.max(*v));
        let span = (hi - lo).max(1e-9);
        let top = a as f64 * (h + pad) + pad;
        let x = |tt: f64| pad + (w - 2.0 * pad) * tt / t_end;
        let y = |v: f64| top + h * (1.0 - (v - lo) / span);
        let line = |vals: &[f64]| {
            vals.iter()
                .zip(t)
                .map(|(v, tt)| format!("{:.2},{:.2}", x(*tt), y(*v)))
                .collect::<Vec<_>>()
                .join(" ")
        };
        let axis = if a == 0 { "x" } else { "y" };
        writeln!(
            body,
            "<text x=\"{pad}\" y=\"{:.2}\" font-size=\"12\">F{axis} (N)</text>\n\
<polyline fill=\"none\" stroke=\"#999\" stroke-width=\"0.6\" points=\"{}\"/>\n\
<polyline fill=\"none\" stroke=\"#d62728\" stroke-dasharray=\"4 3\" points=\"{}\"/>\n\
<line x1=\"{pad}\" y1=\"{:.2}\" x2=\"{:.2}\" y2=\"{:.2}\" stroke=\"#2ca02c\"/>",
            top - 6.0,
            line(raw[a]),
            line(ma[a]),
            y(reference[a]),
            w - pad,
            y(reference[a])
        )
        .unwrap();
    }
    format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{}\" viewBox=\"0 0 {w} {}\">\n{body}</svg>\n",
        2.0 * (h + pad) + pad,
        2.0 * (h + pad) + pad
    )
}
