use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;

use super::{
    force_row, pos_row, SurrogateError, SurrogateModel, FORCE_WARMUP, REST_FORCE_ROW,
    REST_POS_ROW, WINDOW,
};
use crate::datagen::DataLog;
use crate::nn::{Adam, Gradients, Mode, Network, Tensor};
use crate::substream;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub batch: usize,
    pub lr: f64,
    pub max_epochs: usize,
    /// Epochs without validation improvement before stopping.
    pub patience: usize,
    /// Fraction of examples held out for early stopping.
    pub holdout: f64,
    /// Spacing of PosNet window end points within a log.
    pub pos_stride: usize,
    /// Spacing of ForceNet window starts within a log.
    pub force_stride: usize,
    pub min_examples: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch: 64,
            lr: 1e-3,
            max_epochs: 50,
            patience: 5,
            holdout: 0.1,
            pos_stride: 4,
            force_stride: 10,
            min_examples: 1000,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    /// Mean training loss per epoch (normalised units).
    pub train_loss: Vec<f64>,
    /// Validation loss per epoch; empty without a holdout.
    pub val_loss: Vec<f64>,
    /// Validation (or training) loss before the first update.
    pub initial_loss: f64,
    pub best_epoch: usize,
    pub stopped_early: bool,
    pub examples: usize,
}

/// Normalised PosNet inputs for every window end point `t` of each log.
/// Logs are left-padded with `WINDOW − 1` rest rows.
#[derive(Debug, Clone)]
pub struct PosExampleSet {
    /// Per log: channel-major `[3][WINDOW − 1 + len]`.
    rows: Vec<[Vec<f64>; 3]>,
    /// Per log: normalised increment `θ[t] − θ[t − 1]`.
    targets: Vec<Vec<f64>>,
    /// (log, t)
    pub index: Vec<(usize, usize)>,
}

pub fn posnet_examples(logs: &[&DataLog], model: &SurrogateModel, stride: usize) -> PosExampleSet {
    let pad = WINDOW - 1;
    let mut rows = Vec::with_capacity(logs.len());
    let mut targets = Vec::with_capacity(logs.len());
    let mut index = Vec::new();
    for (li, log) in logs.iter().enumerate() {
        let mut ch: [Vec<f64>; 3] = Default::default();
        for (c, v) in ch.iter_mut().enumerate() {
            v.resize(pad, model.pos_in.normalize(c, REST_POS_ROW[c]));
        }
        let mut tg = Vec::with_capacity(log.len());
        for k in 0..log.len() {
            let prev = if k == 0 { 0.0 } else { log.theta[k - 1] };
            let r = pos_row(log.command(k), prev);
            for c in 0..3 {
                ch[c].push(model.pos_in.normalize(c, r[c]));
            }
            tg.push(model.pos_out.normalize(0, log.theta[k] - prev));
        }
        index.extend((0..log.len()).step_by(stride.max(1)).map(|t| (li, t)));
        rows.push(ch);
        targets.push(tg);
    }
    PosExampleSet { rows, targets, index }
}

impl PosExampleSet {
    pub fn len(&self) -> usize {
        self.index.len()
    }

    pub fn is_empty(&self) -> bool {
        self.index.is_empty()
    }

    /// `[B, 3, WINDOW]` inputs and `[B, 1]` targets for the given examples.
    pub fn batch(&self, ids: &[usize]) -> (Tensor<f64>, Vec<f64>) {
        let mut x = Vec::with_capacity(ids.len() * 3 * WINDOW);
        let mut y = Vec::with_capacity(ids.len());
        for &i in ids {
            let (li, t) = self.index[i];
            for c in 0..3 {
                x.extend_from_slice(&self.rows[li][c][t..t + WINDOW]);
            }
            y.push(self.targets[li][t]);
        }
        (Tensor::from_vec(&[ids.len(), 3, WINDOW], x).unwrap(), y)
    }
}

/// Normalised ForceNet training windows. Each log is left-padded with
/// `FORCE_WARMUP` rest rows; a window's loss covers its last
/// `WINDOW − FORCE_WARMUP` steps, which are always real samples.
#[derive(Debug, Clone)]
pub struct ForceWindowSet {
    /// Per log: row-major `[FORCE_WARMUP + len][2]`.
    rows: Vec<Vec<f64>>,
    targets: Vec<Vec<f64>>,
    /// (log, padded start)
    pub index: Vec<(usize, usize)>,
}

pub fn forcenet_windows(logs: &[&DataLog], model: &SurrogateModel, stride: usize) -> ForceWindowSet {
    let mut rows = Vec::with_capacity(logs.len());
    let mut targets = Vec::with_capacity(logs.len());
    let mut index = Vec::new();
    for (li, log) in logs.iter().enumerate() {
        let n = FORCE_WARMUP + log.len();
        let mut r = Vec::with_capacity(2 * n);
        let mut tg = Vec::with_capacity(2 * n);
        for _ in 0..FORCE_WARMUP {
            r.push(model.force_in.normalize(0, REST_FORCE_ROW[0]));
            r.push(model.force_in.normalize(1, REST_FORCE_ROW[1]));
            tg.extend_from_slice(&[0.0, 0.0]);
        }
        for k in 0..log.len() {
            let prev = if k == 0 { 0.0 } else { log.theta[k - 1] };
            let fr = force_row(log.theta[k], prev);
            r.push(model.force_in.normalize(0, fr[0]));
            r.push(model.force_in.normalize(1, fr[1]));
            tg.push(model.force_out.normalize(0, log.fx[k]));
            tg.push(model.force_out.normalize(1, log.fy[k]));
        }
        if n >= WINDOW {
            index.extend((0..=n - WINDOW).step_by(stride.max(1)).map(|s| (li, s)));
        }
        rows.push(r);
        targets.push(tg);
    }
    ForceWindowSet { rows, targets, index }
}

impl ForceWindowSet {
    pub fn len(&self) -> usize {
        self.index.len()
    }

    pub fn is_empty(&self) -> bool {
        self.index.is_empty()
    }

    /// `[B, WINDOW, 2]` inputs and targets.
    pub fn batch(&self, ids: &[usize]) -> (Tensor<f64>, Vec<f64>) {
        let mut x = Vec::with_capacity(ids.len() * 2 * WINDOW);
        let mut y = Vec::with_capacity(ids.len() * 2 * WINDOW);
        for &i in ids {
            let (li, s) = self.index[i];
            x.extend_from_slice(&self.rows[li][2 * s..2 * (s + WINDOW)]);
            y.extend_from_slice(&self.targets[li][2 * s..2 * (s + WINDOW)]);
        }
        (Tensor::from_vec(&[ids.len(), WINDOW, 2], x).unwrap(), y)
    }
}

fn pos_loss(out: &Tensor<f64>, y: &[f64]) -> (f64, Tensor<f64>) {
    let b = y.len() as f64;
    let mut g = Tensor::zeros(out.shape());
    let mut loss = 0.0;
    for ((o, t), gv) in out.data().iter().zip(y).zip(g.data_mut()) {
        let e = o - t;
        loss += e * e;
        *gv = 2.0 * e / b;
    }
    (loss / b, g)
}

/// Squared error summed over both axes, averaged over the scored steps.
fn force_loss(out: &Tensor<f64>, y: &[f64]) -> (f64, Tensor<f64>) {
    let batch = out.shape()[0];
    let denom = (batch * (WINDOW - FORCE_WARMUP)) as f64;
    let mut g = Tensor::zeros(out.shape());
    let mut loss = 0.0;
    let (od, gd) = (out.data(), g.data_mut());
    for b in 0..batch {
        for s in FORCE_WARMUP..WINDOW {
            for a in 0..2 {
                let i = (b * WINDOW + s) * 2 + a;
                let e = od[i] - y[i];
                loss += e * e;
                gd[i] = 2.0 * e / denom;
            }
        }
    }
    (loss / denom, g)
}

const EVAL_CHUNK: usize = 256;

/// Minibatch Adam with a seeded shuffle, holdout early stopping (best
/// weights restored) and divergence abort.
fn fit(
    net: &mut Network<f64>,
    name: &'static str,
    n: usize,
    cfg: &TrainConfig,
    seed: u64,
    batch_grad: &dyn Fn(&Network<f64>, &[usize], &mut ChaCha8Rng) -> Result<(f64, Gradients<f64>), SurrogateError>,
    eval_loss: &dyn Fn(&Network<f64>, &[usize]) -> Result<f64, SurrogateError>,
) -> Result<TrainReport, SurrogateError> {
    if n == 0 {
        return Err(SurrogateError::Empty);
    }
    let mut split_rng = substream(seed, 0);
    let mut shuffle_rng = substream(seed, 1);
    let mut dropout_rng = substream(seed, 2);
    let mut ids: Vec<usize> = (0..n).collect();
    ids.shuffle(&mut split_rng);
    let n_val = ((n as f64) * cfg.holdout).round() as usize;
    let n_val = if n - n_val == 0 { 0 } else { n_val };
    let (val, train) = ids.split_at(n_val);
    let mut train = train.to_vec();

    let mean_eval = |net: &Network<f64>, set: &[usize]| -> Result<f64, SurrogateError> {
        let mut total = 0.0;
        for c in set.chunks(EVAL_CHUNK) {
            total += eval_loss(net, c)? * c.len() as f64;
        }
        Ok(total / set.len() as f64)
    };
    let monitor: &[usize] = if val.is_empty() { &train } else { val };
    let initial = mean_eval(net, monitor)?;
    let mut opt = Adam::new(net, cfg.lr);
    let mut report = TrainReport {
        train_loss: Vec::new(),
        val_loss: Vec::new(),
        initial_loss: initial,
        best_epoch: 0,
        stopped_early: false,
        examples: n,
    };
    let mut best = (f64::INFINITY, net.clone());
    let mut since_best = 0;
    for epoch in 0..cfg.max_epochs {
        train.shuffle(&mut shuffle_rng);
        let mut total = 0.0;
        for chunk in train.chunks(cfg.batch) {
            let (loss, grads) = batch_grad(net, chunk, &mut dropout_rng)?;
            opt.step(net, &grads)?;
            total += loss * chunk.len() as f64;
        }
        let epoch_loss = total / train.len() as f64;
        report.train_loss.push(epoch_loss);
        if !epoch_loss.is_finite() || epoch_loss > 10.0 * initial {
            return Err(SurrogateError::Diverged {
                net: name,
                epoch,
                loss: epoch_loss,
                initial,
            });
        }
        if val.is_empty() {
            report.best_epoch = epoch;
            continue;
        }
        let v = mean_eval(net, val)?;
        report.val_loss.push(v);
        if v < best.0 {
            best = (v, net.clone());
            report.best_epoch = epoch;
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= cfg.patience {
                report.stopped_early = true;
                break;
            }
        }
    }
    if !val.is_empty() {
        *net = best.1;
    }
    Ok(report)
}

fn grads_over(
    net: &Network<f64>,
    x: &Tensor<f64>,
    y: &[f64],
    rng: &mut ChaCha8Rng,
    loss_fn: fn(&Tensor<f64>, &[f64]) -> (f64, Tensor<f64>),
) -> Result<(f64, Gradients<f64>), SurrogateError> {
    let state = net.has_lstm().then(|| net.zero_state(x.shape()[0]));
    let out = net.forward(x, Mode::Train(rng), state.as_ref())?;
    let (loss, g) = loss_fn(&out.output, y);
    let grads = net.backward(out.tape.as_ref().expect("train tape"), &g)?;
    Ok((loss, grads))
}

fn eval_over(
    net: &Network<f64>,
    x: &Tensor<f64>,
    y: &[f64],
    loss_fn: fn(&Tensor<f64>, &[f64]) -> (f64, Tensor<f64>),
) -> Result<f64, SurrogateError> {
    let state = net.has_lstm().then(|| net.zero_state(x.shape()[0]));
    let out = net.forward(x, Mode::Eval, state.as_ref())?;
    Ok(loss_fn(&out.output, y).0)
}

/// Trains `net` on the given PosNet examples (no minimum size).
pub fn fit_posnet(
    net: &mut Network<f64>,
    set: &PosExampleSet,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<TrainReport, SurrogateError> {
    fit(
        net,
        "PosNet",
        set.len(),
        cfg,
        seed,
        &|net, ids, rng| {
            let (x, y) = set.batch(ids);
            grads_over(net, &x, &y, rng, pos_loss)
        },
        &|net, ids| {
            let (x, y) = set.batch(ids);
            eval_over(net, &x, &y, pos_loss)
        },
    )
}

pub fn fit_forcenet(
    net: &mut Network<f64>,
    set: &ForceWindowSet,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<TrainReport, SurrogateError> {
    fit(
        net,
        "ForceNet",
        set.len(),
        cfg,
        seed,
        &|net, ids, rng| {
            let (x, y) = set.batch(ids);
            grads_over(net, &x, &y, rng, force_loss)
        },
        &|net, ids| {
            let (x, y) = set.batch(ids);
            eval_over(net, &x, &y, force_loss)
        },
    )
}

fn check_size(n: usize, cfg: &TrainConfig) -> Result<(), SurrogateError> {
    if n == 0 {
        return Err(SurrogateError::Empty);
    }
    if n < cfg.min_examples {
        return Err(SurrogateError::TooFewExamples {
            need: cfg.min_examples,
            got: n,
        });
    }
    Ok(())
}

/// Trains the model's PosNet in place on windows from `logs`.
pub fn train_posnet(
    model: &mut SurrogateModel,
    logs: &[&DataLog],
    cfg: &TrainConfig,
    seed: u64,
) -> Result<TrainReport, SurrogateError> {
    let set = posnet_examples(logs, model, cfg.pos_stride);
    check_size(set.len(), cfg)?;
    fit_posnet(&mut model.posnet, &set, cfg, seed)
}

pub fn train_forcenet(
    model: &mut SurrogateModel,
    logs: &[&DataLog],
    cfg: &TrainConfig,
    seed: u64,
) -> Result<TrainReport, SurrogateError> {
    let set = forcenet_windows(logs, model, cfg.force_stride);
    // every logged sample is a target of at least one window
    check_size(logs.iter().map(|l| l.len()).sum::<usize>().min(set.len() * WINDOW), cfg)?;
    fit_forcenet(&mut model.forcenet, &set, cfg, seed)
}

/// Initialises from `seed`, fits the normalisers to `logs` and trains both
/// networks.
pub fn train_surrogate(
    logs: &[&DataLog],
    cfg: &TrainConfig,
    seed: u64,
) -> Result<(SurrogateModel, TrainReport, TrainReport), SurrogateError> {
    let mut init_rng = substream(seed, 10);
    let mut model = SurrogateModel::init(logs, &mut init_rng)?;
    let pos = train_posnet(&mut model, logs, cfg, seed.wrapping_add(1))?;
    let force = train_forcenet(&mut model, logs, cfg, seed.wrapping_add(2))?;
    Ok((model, pos, force))
}
