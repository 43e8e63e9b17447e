use std::fmt::Write as _;

use super::{SurrogateError, SurrogateModel, SurrogateSim, WINDOW};
use crate::datagen::DataLog;
use crate::metrics::{dtw, mae, r_squared, rmse, std_dev};

/// Per-log predictions of a surrogate against one logged run.
#[derive(Debug, Clone, PartialEq)]
pub struct Predictions {
    /// Angle from the logged previous angle (one-step, teacher-forced).
    pub theta_step: Vec<f64>,
    /// Angle from the closed-loop rollout of the logged commands.
    pub theta_rollout: Vec<f64>,
    /// Force from the logged angle trajectory.
    pub force_step: [Vec<f64>; 2],
    /// Force from the closed-loop rollout.
    pub force_rollout: [Vec<f64>; 2],
}

/// Runs all four prediction modes of `model` over `log`.
pub fn predict_log(model: &SurrogateModel, log: &DataLog) -> Result<Predictions, SurrogateError> {
    let n = log.len();
    let mut p = Predictions {
        theta_step: Vec::with_capacity(n),
        theta_rollout: Vec::with_capacity(n),
        force_step: [Vec::with_capacity(n), Vec::with_capacity(n)],
        force_rollout: [Vec::with_capacity(n), Vec::with_capacity(n)],
    };
    let mut forced = SurrogateSim::<f64>::new(model, 1);
    let mut free = SurrogateSim::<f64>::new(model, 1);
    let mut th = [0.0];
    let mut f = [[0.0; 2]];
    for k in 0..n {
        let prev = if k == 0 { 0.0 } else { log.theta[k - 1] };
        forced.step_pos(&[log.command(k)], &[prev], &mut th)?;
        p.theta_step.push(th[0]);
        forced.step_force(&[log.theta[k]], &mut f)?;
        p.force_step[0].push(f[0][0]);
        p.force_step[1].push(f[0][1]);
        free.tick(&[log.command(k)], &mut f)?;
        p.theta_rollout.push(free.theta()[0]);
        p.force_rollout[0].push(f[0][0]);
        p.force_rollout[1].push(f[0][1]);
    }
    Ok(p)
}

/// One row of the surrogate metrics report.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    pub model: String,
    pub window: usize,
    pub parameters: usize,
    pub rmse: f64,
    pub mae: f64,
    pub dtw: f64,
}

/// Test-set metrics averaged over logs, plus the fidelity ratios used by the
/// acceptance checks.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsTable {
    pub rows: Vec<MetricsRow>,
    /// R² of the closed-loop angle against the logged angle.
    pub theta_r2_rollout: f64,
    /// R² of the one-step angle.
    pub theta_r2_step: f64,
    /// Closed-loop force RMSE divided by the logged force std, per axis.
    pub force_rmse_ratio_rollout: [f64; 2],
    /// Same for the force predicted from the logged angle.
    pub force_rmse_ratio_step: [f64; 2],
}

impl MetricsTable {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("Model,Window,Parameters,RMSE,MAE,DTW\n");
        for r in &self.rows {
            writeln!(s, "{},{},{},{},{},{}", r.model, r.window, r.parameters, r.rmse, r.mae, r.dtw).unwrap();
        }
        s
    }
}

/// Scores `preds[i]` against `logs[i]` and averages over logs.
pub fn score_predictions(
    logs: &[&DataLog],
    preds: &[Predictions],
    posnet_params: usize,
    forcenet_params: usize,
) -> Result<MetricsTable, SurrogateError> {
    if logs.is_empty() {
        return Err(SurrogateError::Empty);
    }
    let m = logs.len() as f64;
    let err = |e: crate::metrics::MetricsError| SurrogateError::Format(e.to_string());
    let mut acc = [[0.0f64; 3]; 6];
    let mut r2 = [0.0f64; 2];
    let mut ratio = [[0.0f64; 2]; 2];
    for (log, p) in logs.iter().zip(preds) {
        let truth = [&log.theta, &log.theta, &log.fx, &log.fy, &log.fx, &log.fy];
        let pred = [
            &p.theta_step,
            &p.theta_rollout,
            &p.force_step[0],
            &p.force_step[1],
            &p.force_rollout[0],
            &p.force_rollout[1],
        ];
        for (i, (t, q)) in truth.iter().zip(pred).enumerate() {
            acc[i][0] += rmse(t, q).map_err(err)? / m;
            acc[i][1] += mae(t, q).map_err(err)? / m;
            acc[i][2] += dtw(t, q, None).map_err(err)? / m;
        }
        r2[0] += r_squared(&log.theta, &p.theta_step).map_err(err)? / m;
        r2[1] += r_squared(&log.theta, &p.theta_rollout).map_err(err)? / m;
        for a in 0..2 {
            let (t, sd) = if a == 0 { (&log.fx, std_dev(&log.fx)) } else { (&log.fy, std_dev(&log.fy)) };
            ratio[0][a] += rmse(t, &p.force_step[a]).map_err(err)? / sd / m;
            ratio[1][a] += rmse(t, &p.force_rollout[a]).map_err(err)? / sd / m;
        }
    }
    let names = [
        ("PosNet", posnet_params),
        ("PosNet rollout", posnet_params),
        ("ForceNet x", forcenet_params),
        ("ForceNet y", forcenet_params),
        ("Surrogate rollout x", posnet_params + forcenet_params),
        ("Surrogate rollout y", posnet_params + forcenet_params),
    ];
    Ok(MetricsTable {
        rows: names
            .iter()
            .zip(acc)
            .map(|((name, params), [r, a, d])| MetricsRow {
                model: name.to_string(),
                window: WINDOW,
                parameters: *params,
                rmse: r,
                mae: a,
                dtw: d,
            })
            .collect(),
        theta_r2_step: r2[0],
        theta_r2_rollout: r2[1],
        force_rmse_ratio_step: ratio[0],
        force_rmse_ratio_rollout: ratio[1],
    })
}

pub fn evaluate_surrogate(model: &SurrogateModel, logs: &[&DataLog]) -> Result<MetricsTable, SurrogateError> {
    let preds = logs
        .iter()
        .map(|l| predict_log(model, l))
        .collect::<Result<Vec<_>, _>>()?;
    score_predictions(logs, &preds, model.posnet.param_count(), model.forcenet.param_count())
}
