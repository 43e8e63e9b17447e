use super::{
    force_row, pos_row, SurrogateError, SurrogateModel, FORCE_WARMUP, REST_FORCE_ROW, REST_POS_ROW,
    WINDOW,
};
use crate::nn::{linear_apply, lstm_step, Layer, LayerKind, Mode, Scalar, Tensor};
use crate::plant::MotorCommand;

const KERNEL: usize = 5;
const C1: usize = 16;
const C2: usize = 32;
/// conv2 output length over one window
const C2_LEN: usize = WINDOW - 2 * (KERNEL - 1);
const HIDDEN: usize = 96;

/// Batched 100 Hz surrogate for `n` environments advancing in lockstep.
///
/// PosNet is evaluated incrementally: only the newest column of each
/// convolution is computed per tick and the rest are shifted. ForceNet runs
/// two LSTM chains restarted every `WINDOW` ticks, offset by `FORCE_WARMUP`;
/// the force is read from whichever chain has seen more than `FORCE_WARMUP`
/// inputs, which is the regime the network was trained on.
#[derive(Debug, Clone)]
pub struct SurrogateSim<T: Scalar> {
    conv1: Layer<T>,
    conv2: Layer<T>,
    pos_head: [Layer<T>; 3],
    lstm: Layer<T>,
    force_head: [Layer<T>; 3],
    model: Norms,
    n: usize,
    /// [n][3][KERNEL] newest input rows, channel-major
    in_tail: Vec<T>,
    /// [n][C1][KERNEL]
    c1_tail: Vec<T>,
    /// [n][C2][C2_LEN]
    c2: Vec<T>,
    theta: Vec<f64>,
    force_theta: Vec<f64>,
    chains: [Chain<T>; 2],
    rest: RestCache<T>,
    scratch: Scratch<T>,
}

#[derive(Debug, Clone)]
struct Norms {
    pos_in: super::Normalizer,
    pos_out: super::Normalizer,
    force_in: super::Normalizer,
    force_out: super::Normalizer,
}

#[derive(Debug, Clone)]
struct Chain<T> {
    h: Vec<T>,
    c: Vec<T>,
    age: Vec<usize>,
}

#[derive(Debug, Clone)]
struct RestCache<T> {
    in_tail: Vec<T>,
    c1_tail: Vec<T>,
    c2: Vec<T>,
    warm_h: Vec<T>,
    warm_c: Vec<T>,
}

#[derive(Debug, Clone, Default)]
struct Scratch<T> {
    col: Vec<T>,
    a: Vec<T>,
    b: Vec<T>,
    x: Vec<T>,
    lstm: Vec<T>,
}

fn split_posnet<T: Scalar>(layers: &[Layer<T>]) -> (Layer<T>, Layer<T>, [Layer<T>; 3]) {
    let pick = |pred: fn(&LayerKind) -> bool| -> Vec<Layer<T>> {
        layers.iter().filter(|l| pred(&l.kind())).cloned().collect()
    };
    let convs = pick(|k| matches!(k, LayerKind::Conv1d { .. }));
    let lin = pick(|k| matches!(k, LayerKind::Linear { .. }));
    (
        convs[0].clone(),
        convs[1].clone(),
        [lin[0].clone(), lin[1].clone(), lin[2].clone()],
    )
}

fn relu<T: Scalar>(v: &mut [T]) {
    v.iter_mut().for_each(|x| {
        if *x < T::zero() {
            *x = T::zero()
        }
    });
}

fn apply<T: Scalar>(l: &Layer<T>, x: &[T], rows: usize, y: &mut Vec<T>) {
    // a conv layer applied to one im2col column is a linear map
    let (inputs, outputs) = match l.kind() {
        LayerKind::Linear { inputs, outputs } => (inputs, outputs),
        LayerKind::Conv1d {
            in_channels,
            out_channels,
            kernel,
            ..
        } => (in_channels * kernel, out_channels),
        k => unreachable!("{k}"),
    };
    y.resize(rows * outputs, T::zero());
    linear_apply(l.params()[0].data(), l.params()[1].data(), x, rows, inputs, outputs, y);
}

/// Shifts every `len`-long row of `buf` left by one and writes `new[r]` at
/// the end of row `r`.
fn push_columns<T: Scalar>(buf: &mut [T], len: usize, new: &[T]) {
    for (row, v) in buf.chunks_mut(len).zip(new) {
        row.copy_within(1.., 0);
        row[len - 1] = *v;
    }
}

impl<T: Scalar> SurrogateSim<T> {
    pub fn new(model: &SurrogateModel, n: usize) -> Self {
        let pos: Vec<Layer<T>> = model.posnet.layers().iter().map(Layer::cast).collect();
        let force: Vec<Layer<T>> = model.forcenet.layers().iter().map(Layer::cast).collect();
        let (conv1, conv2, pos_head) = split_posnet(&pos);
        let lin: Vec<Layer<T>> = force
            .iter()
            .filter(|l| matches!(l.kind(), LayerKind::Linear { .. }))
            .cloned()
            .collect();
        let lstm = force[0].clone();
        let norms = Norms {
            pos_in: model.pos_in.clone(),
            pos_out: model.pos_out.clone(),
            force_in: model.force_in.clone(),
            force_out: model.force_out.clone(),
        };
        let rest = Self::rest_cache(&conv1, &conv2, &lstm, &norms);
        let mut sim = SurrogateSim {
            conv1,
            conv2,
            pos_head,
            lstm,
            force_head: [lin[0].clone(), lin[1].clone(), lin[2].clone()],
            model: norms,
            n,
            in_tail: vec![T::zero(); n * 3 * KERNEL],
            c1_tail: vec![T::zero(); n * C1 * KERNEL],
            c2: vec![T::zero(); n * C2 * C2_LEN],
            theta: vec![0.0; n],
            force_theta: vec![0.0; n],
            chains: [0, 1].map(|_| Chain {
                h: vec![T::zero(); n * HIDDEN],
                c: vec![T::zero(); n * HIDDEN],
                age: vec![0; n],
            }),
            rest,
            scratch: Scratch::default(),
        };
        sim.reset_all();
        sim
    }

    /// Buffers for an environment that has been at rest forever.
    fn rest_cache(conv1: &Layer<T>, conv2: &Layer<T>, lstm: &Layer<T>, m: &Norms) -> RestCache<T> {
        let z: Vec<T> = (0..3).map(|c| T::lit(m.pos_in.normalize(c, REST_POS_ROW[c]))).collect();
        let in_tail: Vec<T> = (0..3 * KERNEL).map(|i| z[i / KERNEL]).collect();
        let conv_col = |layer: &Layer<T>, col: &[T], out: usize| -> Vec<T> {
            let mut y = vec![T::zero(); out];
            linear_apply(layer.params()[0].data(), layer.params()[1].data(), col, 1, col.len(), out, &mut y);
            relu(&mut y);
            y
        };
        let y1 = conv_col(conv1, &in_tail, C1);
        let c1_tail: Vec<T> = (0..C1 * KERNEL).map(|i| y1[i / KERNEL]).collect();
        let y2 = conv_col(conv2, &c1_tail, C2);
        let c2: Vec<T> = (0..C2 * C2_LEN).map(|i| y2[i / C2_LEN]).collect();
        let x: Vec<T> = (0..2).map(|c| T::lit(m.force_in.normalize(c, REST_FORCE_ROW[c]))).collect();
        let mut h = vec![T::zero(); HIDDEN];
        let mut c = vec![T::zero(); HIDDEN];
        let mut scratch = Vec::new();
        for _ in 0..FORCE_WARMUP {
            lstm_step(lstm, &x, &mut h, &mut c, &mut scratch);
        }
        RestCache {
            in_tail,
            c1_tail,
            c2,
            warm_h: h,
            warm_c: c,
        }
    }

    pub fn num_envs(&self) -> usize {
        self.n
    }

    pub fn reset_all(&mut self) {
        for e in 0..self.n {
            self.reset(e);
        }
    }

    /// Puts environment `e` at rest at zero angle.
    pub fn reset(&mut self, e: usize) {
        let r = &self.rest;
        self.in_tail[e * 3 * KERNEL..(e + 1) * 3 * KERNEL].copy_from_slice(&r.in_tail);
        self.c1_tail[e * C1 * KERNEL..(e + 1) * C1 * KERNEL].copy_from_slice(&r.c1_tail);
        self.c2[e * C2 * C2_LEN..(e + 1) * C2 * C2_LEN].copy_from_slice(&r.c2);
        self.theta[e] = 0.0;
        self.force_theta[e] = 0.0;
        let hs = e * HIDDEN..(e + 1) * HIDDEN;
        let [a, b] = &mut self.chains;
        a.h[hs.clone()].fill(T::zero());
        a.c[hs.clone()].fill(T::zero());
        a.age[e] = 0;
        b.h[hs.clone()].copy_from_slice(&r.warm_h);
        b.c[hs].copy_from_slice(&r.warm_c);
        b.age[e] = FORCE_WARMUP;
    }

    pub fn theta(&self) -> &[f64] {
        &self.theta
    }

    /// PosNet half of a tick: appends `(cmd[e], theta_prev[e])` to each
    /// window and writes the predicted angle into `theta_out`.
    pub fn step_pos(
        &mut self,
        cmds: &[MotorCommand],
        theta_prev: &[f64],
        theta_out: &mut [f64],
    ) -> Result<(), SurrogateError> {
        let n = self.n;
        let m = &self.model;
        let s = &mut self.scratch;
        let mut row = [T::zero(); 3];
        for e in 0..n {
            let r = pos_row(cmds[e], theta_prev[e]);
            if !r.iter().all(|v| v.is_finite()) {
                return Err(SurrogateError::NonFiniteInput { what: "PosNet" });
            }
            for c in 0..3 {
                row[c] = T::lit(m.pos_in.normalize(c, r[c]));
            }
            push_columns(&mut self.in_tail[e * 3 * KERNEL..(e + 1) * 3 * KERNEL], KERNEL, &row);
        }
        apply(&self.conv1, &self.in_tail, n, &mut s.a);
        relu(&mut s.a);
        for e in 0..n {
            push_columns(
                &mut self.c1_tail[e * C1 * KERNEL..(e + 1) * C1 * KERNEL],
                KERNEL,
                &s.a[e * C1..(e + 1) * C1],
            );
        }
        apply(&self.conv2, &self.c1_tail, n, &mut s.b);
        relu(&mut s.b);
        for e in 0..n {
            push_columns(
                &mut self.c2[e * C2 * C2_LEN..(e + 1) * C2 * C2_LEN],
                C2_LEN,
                &s.b[e * C2..(e + 1) * C2],
            );
        }
        apply(&self.pos_head[0], &self.c2, n, &mut s.a);
        relu(&mut s.a);
        apply(&self.pos_head[1], &s.a, n, &mut s.b);
        relu(&mut s.b);
        apply(&self.pos_head[2], &s.b, n, &mut s.col);
        for e in 0..n {
            theta_out[e] = theta_prev[e] + m.pos_out.denormalize(0, s.col[e].as_f64());
        }
        Ok(())
    }

    /// ForceNet half of a tick: feeds `(theta, Δtheta/dt)` and writes the
    /// force per environment.
    pub fn step_force(&mut self, theta: &[f64], force_out: &mut [[f64; 2]]) -> Result<(), SurrogateError> {
        let n = self.n;
        let m = &self.model;
        let s = &mut self.scratch;
        s.x.resize(n * 2, T::zero());
        for e in 0..n {
            let r = force_row(theta[e], self.force_theta[e]);
            if !r.iter().all(|v| v.is_finite()) {
                return Err(SurrogateError::NonFiniteInput { what: "ForceNet" });
            }
            s.x[2 * e] = T::lit(m.force_in.normalize(0, r[0]));
            s.x[2 * e + 1] = T::lit(m.force_in.normalize(1, r[1]));
            self.force_theta[e] = theta[e];
        }
        for ch in &mut self.chains {
            for e in 0..n {
                if ch.age[e] == WINDOW {
                    ch.h[e * HIDDEN..(e + 1) * HIDDEN].fill(T::zero());
                    ch.c[e * HIDDEN..(e + 1) * HIDDEN].fill(T::zero());
                    ch.age[e] = 0;
                }
            }
            lstm_step(&self.lstm, &s.x, &mut ch.h, &mut ch.c, &mut s.lstm);
            ch.age.iter_mut().for_each(|a| *a += 1);
        }
        s.col.resize(n * HIDDEN, T::zero());
        for e in 0..n {
            let k = if self.chains[0].age[e] > FORCE_WARMUP { 0 } else { 1 };
            s.col[e * HIDDEN..(e + 1) * HIDDEN].copy_from_slice(&self.chains[k].h[e * HIDDEN..(e + 1) * HIDDEN]);
        }
        apply(&self.force_head[0], &s.col, n, &mut s.a);
        relu(&mut s.a);
        apply(&self.force_head[1], &s.a, n, &mut s.b);
        relu(&mut s.b);
        apply(&self.force_head[2], &s.b, n, &mut s.x);
        for e in 0..n {
            force_out[e] = [
                m.force_out.denormalize(0, s.x[2 * e].as_f64()),
                m.force_out.denormalize(1, s.x[2 * e + 1].as_f64()),
            ];
        }
        Ok(())
    }

    /// One closed-loop 100 Hz tick: PosNet feeds on its own previous output.
    pub fn tick(&mut self, cmds: &[MotorCommand], force_out: &mut [[f64; 2]]) -> Result<(), SurrogateError> {
        let prev = std::mem::take(&mut self.theta);
        let mut next = vec![0.0; self.n];
        self.step_pos(cmds, &prev, &mut next)?;
        self.step_force(&next, force_out)?;
        self.theta = next;
        Ok(())
    }
}

/// Angle and force series of a surrogate rollout.
#[derive(Debug, Clone, PartialEq)]
pub struct Rollout {
    pub theta: Vec<f64>,
    pub fx: Vec<f64>,
    pub fy: Vec<f64>,
}

/// Autoregressive rollout from rest, one tick per command.
pub fn surrogate_rollout(model: &SurrogateModel, commands: &[MotorCommand]) -> Result<Rollout, SurrogateError> {
    let mut sim = SurrogateSim::<f64>::new(model, 1);
    let mut out = Rollout {
        theta: Vec::with_capacity(commands.len()),
        fx: Vec::with_capacity(commands.len()),
        fy: Vec::with_capacity(commands.len()),
    };
    let mut f = [[0.0; 2]];
    for c in commands {
        sim.tick(std::slice::from_ref(c), &mut f)?;
        out.theta.push(sim.theta()[0]);
        out.fx.push(f[0][0]);
        out.fy.push(f[0][1]);
    }
    Ok(out)
}

/// PosNet on one full window of `(cmd_angle, cmd_omega, previous angle)`
/// rows, oldest first; returns the angle after the last row's step.
pub fn posnet_step(model: &SurrogateModel, window: &[[f64; 3]]) -> Result<f64, SurrogateError> {
    if window.len() != WINDOW {
        return Err(crate::nn::NnError::Shape {
            layer: None,
            detail: format!("PosNet window must hold {WINDOW} rows, got {}", window.len()),
        }
        .into());
    }
    if !window.iter().flatten().all(|v| v.is_finite()) {
        return Err(SurrogateError::NonFiniteInput { what: "PosNet" });
    }
    let x = Tensor::from_fn(&[1, 3, WINDOW], |i| {
        let (c, j) = (i / WINDOW, i % WINDOW);
        model.pos_in.normalize(c, window[j][c])
    });
    let y = model.posnet.forward(&x, Mode::Eval, None)?.output;
    Ok(window[WINDOW - 1][2] + model.pos_out.denormalize(0, y.data()[0]))
}

/// ForceNet over one window of `(angle, angular velocity)` rows from a zero
/// recurrent state; returns the force at the last row.
pub fn forcenet_step(model: &SurrogateModel, window: &[[f64; 2]]) -> Result<[f64; 2], SurrogateError> {
    if window.is_empty() || window.len() > WINDOW {
        return Err(crate::nn::NnError::Shape {
            layer: None,
            detail: format!("ForceNet window must hold 1..={WINDOW} rows, got {}", window.len()),
        }
        .into());
    }
    if !window.iter().flatten().all(|v| v.is_finite()) {
        return Err(SurrogateError::NonFiniteInput { what: "ForceNet" });
    }
    let steps = window.len();
    let x = Tensor::from_fn(&[1, steps, 2], |i| model.force_in.normalize(i % 2, window[i / 2][i % 2]));
    let state = model.forcenet.zero_state(1);
    let y = model.forcenet.forward(&x, Mode::Eval, Some(&state))?.output;
    let d = y.data();
    Ok([
        model.force_out.denormalize(0, d[2 * (steps - 1)]),
        model.force_out.denormalize(1, d[2 * (steps - 1) + 1]),
    ])
}
