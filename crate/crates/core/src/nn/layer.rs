use std::fmt;

use rand::Rng;

use super::scalar::{matmul, sigmoid, Scalar};
use super::tensor::Tensor;
use super::NnError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Tanh,
    Relu,
}

/// Layer kind and its size arithmetic.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LayerKind {
    /// Input `[batch, in_channels, length]`, output `[batch, out_channels, (length-kernel)/stride+1]`.
    Conv1d {
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
    },
    /// Applies to the last axis when it equals `inputs`, otherwise flattens
    /// everything after the batch axis.
    Linear { inputs: usize, outputs: usize },
    /// Input `[batch, steps, inputs]`, output the full hidden sequence
    /// `[batch, steps, hidden]`. Gate order is input, forget, cell, output.
    Lstm { inputs: usize, hidden: usize },
    Dropout { p: f64 },
    Activation(Activation),
}

impl LayerKind {
    pub fn param_shapes(&self) -> Vec<Vec<usize>> {
        match *self {
            LayerKind::Conv1d {
                in_channels,
                out_channels,
                kernel,
                ..
            } => vec![vec![out_channels, in_channels, kernel], vec![out_channels]],
            LayerKind::Linear { inputs, outputs } => vec![vec![outputs, inputs], vec![outputs]],
            LayerKind::Lstm { inputs, hidden } => vec![
                vec![4 * hidden, inputs],
                vec![4 * hidden, hidden],
                vec![4 * hidden],
            ],
            LayerKind::Dropout { .. } | LayerKind::Activation(_) => Vec::new(),
        }
    }

    pub fn param_count(&self) -> usize {
        self.param_shapes()
            .iter()
            .map(|s| s.iter().product::<usize>())
            .sum()
    }

    pub fn validate(&self) -> Result<(), String> {
        match *self {
            LayerKind::Conv1d {
                in_channels,
                out_channels,
                kernel,
                stride,
            } => {
                if in_channels == 0 || out_channels == 0 || kernel == 0 || stride == 0 {
                    return Err(format!("{self}: sizes must be positive"));
                }
            }
            LayerKind::Linear { inputs, outputs } => {
                if inputs == 0 || outputs == 0 {
                    return Err(format!("{self}: sizes must be positive"));
                }
            }
            LayerKind::Lstm { inputs, hidden } => {
                if inputs == 0 || hidden == 0 {
                    return Err(format!("{self}: sizes must be positive"));
                }
            }
            LayerKind::Dropout { p } => {
                if !(0.0..1.0).contains(&p) {
                    return Err(format!("{self}: p must lie in [0, 1)"));
                }
            }
            LayerKind::Activation(_) => {}
        }
        Ok(())
    }

    /// Whitespace-separated text form used in checkpoint headers.
    pub fn to_spec(&self) -> String {
        match *self {
            LayerKind::Conv1d {
                in_channels,
                out_channels,
                kernel,
                stride,
            } => format!("conv1d {in_channels} {out_channels} {kernel} {stride}"),
            LayerKind::Linear { inputs, outputs } => format!("linear {inputs} {outputs}"),
            LayerKind::Lstm { inputs, hidden } => format!("lstm {inputs} {hidden}"),
            LayerKind::Dropout { p } => format!("dropout {p}"),
            LayerKind::Activation(Activation::Tanh) => "activation tanh".to_string(),
            LayerKind::Activation(Activation::Relu) => "activation relu".to_string(),
        }
    }

    pub fn parse_spec(line: &str) -> Result<Self, String> {
        let toks: Vec<&str> = line.split_whitespace().collect();
        let num = |i: usize| -> Result<usize, String> {
            toks.get(i)
                .ok_or_else(|| format!("layer spec '{line}' is missing field {i}"))?
                .parse::<usize>()
                .map_err(|e| format!("layer spec '{line}': {e}"))
        };
        let kind = match toks.first().copied() {
            Some("conv1d") if toks.len() == 5 => LayerKind::Conv1d {
                in_channels: num(1)?,
                out_channels: num(2)?,
                kernel: num(3)?,
                stride: num(4)?,
            },
            Some("linear") if toks.len() == 3 => LayerKind::Linear {
                inputs: num(1)?,
                outputs: num(2)?,
            },
            Some("lstm") if toks.len() == 3 => LayerKind::Lstm {
                inputs: num(1)?,
                hidden: num(2)?,
            },
            Some("dropout") if toks.len() == 2 => LayerKind::Dropout {
                p: toks[1]
                    .parse()
                    .map_err(|e| format!("layer spec '{line}': {e}"))?,
            },
            Some("activation") if toks.len() == 2 => match toks[1] {
                "tanh" => LayerKind::Activation(Activation::Tanh),
                "relu" => LayerKind::Activation(Activation::Relu),
                other => return Err(format!("unknown activation '{other}'")),
            },
            _ => return Err(format!("unrecognised layer spec '{line}'")),
        };
        kind.validate()?;
        Ok(kind)
    }
}

impl fmt::Display for LayerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            LayerKind::Conv1d {
                in_channels,
                out_channels,
                kernel,
                stride,
            } => write!(f, "conv1d({in_channels}->{out_channels}, k={kernel}, s={stride})"),
            LayerKind::Linear { inputs, outputs } => write!(f, "linear({inputs}->{outputs})"),
            LayerKind::Lstm { inputs, hidden } => write!(f, "lstm({inputs}->{hidden})"),
            LayerKind::Dropout { p } => write!(f, "dropout({p})"),
            LayerKind::Activation(Activation::Tanh) => write!(f, "tanh"),
            LayerKind::Activation(Activation::Relu) => write!(f, "relu"),
        }
    }
}

/// Hidden and cell state of one LSTM layer, each `[batch, hidden]`.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmState<T> {
    pub h: Tensor<T>,
    pub c: Tensor<T>,
}

impl<T: Scalar> LstmState<T> {
    pub fn zeros(batch: usize, hidden: usize) -> Self {
        LstmState {
            h: Tensor::zeros(&[batch, hidden]),
            c: Tensor::zeros(&[batch, hidden]),
        }
    }

    pub fn batch(&self) -> usize {
        self.h.shape()[0]
    }
}

#[derive(Debug, Clone)]
pub struct Layer<T> {
    kind: LayerKind,
    params: Vec<Tensor<T>>,
}

/// Per-layer values retained by a training forward pass.
#[derive(Debug, Clone)]
pub(crate) enum Cache<T> {
    Conv {
        cols: Vec<T>,
        batch: usize,
        in_len: usize,
        out_len: usize,
    },
    Linear {
        rows: Vec<T>,
        n_rows: usize,
        in_shape: Vec<usize>,
    },
    Lstm {
        input: Vec<T>,
        batch: usize,
        steps: usize,
        /// `[steps+1, batch, hidden]`, entry 0 is the incoming state.
        h: Vec<T>,
        c: Vec<T>,
        /// Activated gates `[steps, batch, 4·hidden]`.
        gates: Vec<T>,
        tanh_c: Vec<T>,
    },
    Dropout {
        mask: Option<Vec<T>>,
    },
    Activation {
        output: Vec<T>,
    },
}

impl<T: Scalar> Layer<T> {
    /// Uniform ±sqrt(1/fan_in) for conv/linear; LSTM uses ±sqrt(1/hidden)
    /// with zero bias except the forget gate, which starts at 1.
    pub fn init<R: Rng + ?Sized>(kind: LayerKind, rng: &mut R) -> Result<Self, NnError> {
        kind.validate().map_err(|detail| NnError::Shape {
            layer: None,
            detail,
        })?;
        let params = match kind {
            LayerKind::Conv1d {
                in_channels,
                out_channels,
                kernel,
                ..
            } => {
                let bound = (1.0 / (in_channels * kernel) as f64).sqrt();
                vec![
                    uniform(&[out_channels, in_channels, kernel], bound, rng),
                    uniform(&[out_channels], bound, rng),
                ]
            }
            LayerKind::Linear { inputs, outputs } => {
                let bound = (1.0 / inputs as f64).sqrt();
                vec![
                    uniform(&[outputs, inputs], bound, rng),
                    uniform(&[outputs], bound, rng),
                ]
            }
            LayerKind::Lstm { inputs, hidden } => {
                let bound = (1.0 / hidden as f64).sqrt();
                let mut bias = Tensor::zeros(&[4 * hidden]);
                bias.data_mut()[hidden..2 * hidden].fill(T::one());
                vec![
                    uniform(&[4 * hidden, inputs], bound, rng),
                    uniform(&[4 * hidden, hidden], bound, rng),
                    bias,
                ]
            }
            LayerKind::Dropout { .. } | LayerKind::Activation(_) => Vec::new(),
        };
        Ok(Layer { kind, params })
    }

    pub fn from_params(kind: LayerKind, params: Vec<Tensor<T>>) -> Result<Self, NnError> {
        kind.validate().map_err(|detail| NnError::Shape {
            layer: None,
            detail,
        })?;
        let shapes = kind.param_shapes();
        if shapes.len() != params.len()
            || shapes.iter().zip(&params).any(|(s, p)| s.as_slice() != p.shape())
        {
            return Err(NnError::Shape {
                layer: None,
                detail: format!("{kind}: parameter shapes do not match {shapes:?}"),
            });
        }
        Ok(Layer { kind, params })
    }

    pub fn kind(&self) -> LayerKind {
        self.kind
    }

    pub fn params(&self) -> &[Tensor<T>] {
        &self.params
    }

    pub(crate) fn params_mut(&mut self) -> &mut [Tensor<T>] {
        &mut self.params
    }

    pub fn cast<U: Scalar>(&self) -> Layer<U> {
        Layer {
            kind: self.kind,
            params: self.params.iter().map(Tensor::cast).collect(),
        }
    }

    pub(crate) fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>, String> {
        match self.kind {
            LayerKind::Conv1d {
                in_channels,
                out_channels,
                kernel,
                stride,
            } => {
                if input.len() != 3 || input[1] != in_channels || input[2] < kernel {
                    return Err(format!(
                        "expected [batch, {in_channels}, >= {kernel}], got {input:?}"
                    ));
                }
                Ok(vec![input[0], out_channels, (input[2] - kernel) / stride + 1])
            }
            LayerKind::Linear { inputs, outputs } => {
                if input.last() == Some(&inputs) {
                    let mut out = input.to_vec();
                    *out.last_mut().unwrap() = outputs;
                    Ok(out)
                } else if input.len() >= 2 && input[1..].iter().product::<usize>() == inputs {
                    Ok(vec![input[0], outputs])
                } else {
                    Err(format!("expected trailing size {inputs}, got {input:?}"))
                }
            }
            LayerKind::Lstm { inputs, hidden } => {
                if input.len() != 3 || input[2] != inputs {
                    return Err(format!("expected [batch, steps, {inputs}], got {input:?}"));
                }
                Ok(vec![input[0], input[1], hidden])
            }
            LayerKind::Dropout { .. } | LayerKind::Activation(_) => Ok(input.to_vec()),
        }
    }

    /// Forward for a non-recurrent layer. `train` retains a cache; `dropout_rng`
    /// is required for dropout in training.
    pub(crate) fn forward_plain(
        &self,
        x: &Tensor<T>,
        train: bool,
        dropout_rng: Option<&mut rand_chacha::ChaCha8Rng>,
    ) -> (Tensor<T>, Option<Cache<T>>) {
        let out_shape = self
            .output_shape(x.shape())
            .expect("shape validated by caller");
        match self.kind {
            LayerKind::Conv1d {
                in_channels,
                out_channels,
                kernel,
                stride,
            } => {
                let batch = x.shape()[0];
                let in_len = x.shape()[2];
                let out_len = out_shape[2];
                let ck = in_channels * kernel;
                let mut cols = vec![T::zero(); batch * ck * out_len];
                for b in 0..batch {
                    let xb = &x.data()[b * in_channels * in_len..(b + 1) * in_channels * in_len];
                    let col = &mut cols[b * ck * out_len..(b + 1) * ck * out_len];
                    im2col(xb, in_channels, in_len, kernel, stride, out_len, col);
                }
                let mut out = Tensor::zeros(&out_shape);
                let (w, bias) = (self.params[0].data(), self.params[1].data());
                for b in 0..batch {
                    let y = &mut out.data_mut()[b * out_channels * out_len..(b + 1) * out_channels * out_len];
                    for (oc, row) in y.chunks_mut(out_len).enumerate() {
                        row.fill(bias[oc]);
                    }
                    matmul(
                        w,
                        false,
                        &cols[b * ck * out_len..(b + 1) * ck * out_len],
                        false,
                        y,
                        out_channels,
                        ck,
                        out_len,
                        true,
                    );
                }
                let cache = train.then(|| Cache::Conv {
                    cols,
                    batch,
                    in_len,
                    out_len,
                });
                (out, cache)
            }
            LayerKind::Linear { inputs, outputs } => {
                let n_rows = x.len() / inputs;
                let mut out = Tensor::zeros(&out_shape);
                linear_apply(
                    self.params[0].data(),
                    self.params[1].data(),
                    x.data(),
                    n_rows,
                    inputs,
                    outputs,
                    out.data_mut(),
                );
                let cache = train.then(|| Cache::Linear {
                    rows: x.data().to_vec(),
                    n_rows,
                    in_shape: x.shape().to_vec(),
                });
                (out, cache)
            }
            LayerKind::Dropout { p } => {
                if !train || p == 0.0 {
                    return (x.clone(), train.then_some(Cache::Dropout { mask: None }));
                }
                let rng = dropout_rng.expect("training dropout needs an rng");
                let keep = T::lit(1.0 / (1.0 - p));
                let mask: Vec<T> = (0..x.len())
                    .map(|_| if rng.random::<f64>() < p { T::zero() } else { keep })
                    .collect();
                let mut out = x.clone();
                out.data_mut()
                    .iter_mut()
                    .zip(&mask)
                    .for_each(|(v, m)| *v *= *m);
                (out, Some(Cache::Dropout { mask: Some(mask) }))
            }
            LayerKind::Activation(act) => {
                let mut out = x.clone();
                match act {
                    Activation::Tanh => out.data_mut().iter_mut().for_each(|v| *v = v.tanh()),
                    Activation::Relu => out
                        .data_mut()
                        .iter_mut()
                        .for_each(|v| *v = if *v > T::zero() { *v } else { T::zero() }),
                }
                let cache = train.then(|| Cache::Activation {
                    output: out.data().to_vec(),
                });
                (out, cache)
            }
            LayerKind::Lstm { .. } => unreachable!("lstm goes through forward_lstm"),
        }
    }

    /// Full-sequence LSTM forward from `state`; returns the hidden sequence and
    /// the final state.
    pub(crate) fn forward_lstm(
        &self,
        x: &Tensor<T>,
        state: &LstmState<T>,
        train: bool,
    ) -> (Tensor<T>, LstmState<T>, Option<Cache<T>>) {
        let LayerKind::Lstm { inputs, hidden } = self.kind else {
            unreachable!()
        };
        let (batch, steps) = (x.shape()[0], x.shape()[1]);
        let g4 = 4 * hidden;
        let bh = batch * hidden;
        let mut hs = vec![T::zero(); (steps + 1) * bh];
        let mut cs = vec![T::zero(); (steps + 1) * bh];
        hs[..bh].copy_from_slice(state.h.data());
        cs[..bh].copy_from_slice(state.c.data());
        let mut gates = vec![T::zero(); steps * batch * g4];
        let mut tanh_c = vec![T::zero(); steps * bh];
        let mut out = Tensor::zeros(&[batch, steps, hidden]);
        let (w_ih, w_hh, bias) = (
            self.params[0].data(),
            self.params[1].data(),
            self.params[2].data(),
        );
        for t in 0..steps {
            let g = &mut gates[t * batch * g4..(t + 1) * batch * g4];
            for row in g.chunks_mut(g4) {
                row.copy_from_slice(bias);
            }
            // x_t rows live at stride steps·inputs inside the batch-major input.
            T::gemm(
                batch,
                inputs,
                g4,
                T::one(),
                &x.data()[t * inputs..],
                steps * inputs,
                1,
                w_ih,
                1,
                inputs,
                T::one(),
                g,
                g4,
                1,
            );
            let (h_prev, h_rest) = hs.split_at_mut((t + 1) * bh);
            let h_prev = &h_prev[t * bh..];
            matmul(h_prev, false, w_hh, true, g, batch, hidden, g4, true);
            let c_prev = cs[t * bh..(t + 1) * bh].to_vec();
            let c_next = &mut cs[(t + 1) * bh..(t + 2) * bh];
            let h_next = &mut h_rest[..bh];
            let tc = &mut tanh_c[t * bh..(t + 1) * bh];
            lstm_pointwise(g, &c_prev, c_next, h_next, tc, batch, hidden);
            let od = out.data_mut();
            for b in 0..batch {
                od[(b * steps + t) * hidden..(b * steps + t + 1) * hidden]
                    .copy_from_slice(&h_next[b * hidden..(b + 1) * hidden]);
            }
        }
        let final_state = LstmState {
            h: Tensor::from_vec(&[batch, hidden], hs[steps * bh..].to_vec()).unwrap(),
            c: Tensor::from_vec(&[batch, hidden], cs[steps * bh..].to_vec()).unwrap(),
        };
        let cache = train.then(|| Cache::Lstm {
            input: x.data().to_vec(),
            batch,
            steps,
            h: hs,
            c: cs,
            gates,
            tanh_c,
        });
        (out, final_state, cache)
    }

    /// Parameter gradients and (when `need_input`) the input gradient.
    pub(crate) fn backward(
        &self,
        cache: &Cache<T>,
        dy: &Tensor<T>,
        need_input: bool,
    ) -> (Vec<Tensor<T>>, Option<Tensor<T>>) {
        match (self.kind, cache) {
            (
                LayerKind::Conv1d {
                    in_channels,
                    out_channels,
                    kernel,
                    stride,
                },
                Cache::Conv {
                    cols,
                    batch,
                    in_len,
                    out_len,
                },
            ) => {
                let (batch, in_len, out_len) = (*batch, *in_len, *out_len);
                let ck = in_channels * kernel;
                let mut dw = Tensor::zeros(&[out_channels, in_channels, kernel]);
                let mut db = Tensor::zeros(&[out_channels]);
                let mut dx = need_input.then(|| Tensor::zeros(&[batch, in_channels, in_len]));
                let mut dcol = vec![T::zero(); ck * out_len];
                let w = self.params[0].data();
                for b in 0..batch {
                    let dyb = &dy.data()[b * out_channels * out_len..(b + 1) * out_channels * out_len];
                    let col = &cols[b * ck * out_len..(b + 1) * ck * out_len];
                    matmul(dyb, false, col, true, dw.data_mut(), out_channels, out_len, ck, true);
                    for (oc, row) in dyb.chunks(out_len).enumerate() {
                        db.data_mut()[oc] += row.iter().copied().sum::<T>();
                    }
                    if let Some(dx) = dx.as_mut() {
                        matmul(w, true, dyb, false, &mut dcol, ck, out_channels, out_len, false);
                        let dxb = &mut dx.data_mut()
                            [b * in_channels * in_len..(b + 1) * in_channels * in_len];
                        col2im(&dcol, in_channels, in_len, kernel, stride, out_len, dxb);
                    }
                }
                (vec![dw, db], dx)
            }
            (
                LayerKind::Linear { inputs, outputs },
                Cache::Linear {
                    rows,
                    n_rows,
                    in_shape,
                },
            ) => {
                let mut dw = Tensor::zeros(&[outputs, inputs]);
                let mut db = Tensor::zeros(&[outputs]);
                matmul(dy.data(), true, rows, false, dw.data_mut(), outputs, *n_rows, inputs, false);
                for row in dy.data().chunks(outputs) {
                    db.data_mut().iter_mut().zip(row).for_each(|(a, b)| *a += *b);
                }
                let dx = need_input.then(|| {
                    let mut dx = Tensor::zeros(in_shape);
                    matmul(
                        dy.data(),
                        false,
                        self.params[0].data(),
                        false,
                        dx.data_mut(),
                        *n_rows,
                        outputs,
                        inputs,
                        false,
                    );
                    dx
                });
                (vec![dw, db], dx)
            }
            (LayerKind::Dropout { .. }, Cache::Dropout { mask }) => {
                let dx = need_input.then(|| {
                    let mut dx = dy.clone();
                    if let Some(mask) = mask {
                        dx.data_mut().iter_mut().zip(mask).for_each(|(v, m)| *v *= *m);
                    }
                    dx
                });
                (Vec::new(), dx)
            }
            (LayerKind::Activation(act), Cache::Activation { output }) => {
                let dx = need_input.then(|| {
                    let mut dx = dy.clone();
                    match act {
                        Activation::Tanh => dx
                            .data_mut()
                            .iter_mut()
                            .zip(output)
                            .for_each(|(g, y)| *g *= T::one() - *y * *y),
                        Activation::Relu => dx
                            .data_mut()
                            .iter_mut()
                            .zip(output)
                            .for_each(|(g, y)| {
                                if *y <= T::zero() {
                                    *g = T::zero()
                                }
                            }),
                    }
                    dx
                });
                (Vec::new(), dx)
            }
            (
                LayerKind::Lstm { inputs, hidden },
                Cache::Lstm {
                    input,
                    batch,
                    steps,
                    h,
                    c,
                    gates,
                    tanh_c,
                },
            ) => self.backward_lstm(
                inputs, hidden, input, *batch, *steps, h, c, gates, tanh_c, dy, need_input,
            ),
            _ => unreachable!("cache kind always matches its layer"),
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn backward_lstm(
        &self,
        inputs: usize,
        hidden: usize,
        input: &[T],
        batch: usize,
        steps: usize,
        hs: &[T],
        cs: &[T],
        gates: &[T],
        tanh_c: &[T],
        dy: &Tensor<T>,
        need_input: bool,
    ) -> (Vec<Tensor<T>>, Option<Tensor<T>>) {
        let g4 = 4 * hidden;
        let bh = batch * hidden;
        let mut dw_ih = Tensor::zeros(&[g4, inputs]);
        let mut dw_hh = Tensor::zeros(&[g4, hidden]);
        let mut db = Tensor::zeros(&[g4]);
        let mut dx = need_input.then(|| Tensor::zeros(&[batch, steps, inputs]));
        let mut dh_next = vec![T::zero(); bh];
        let mut dc_next = vec![T::zero(); bh];
        let mut dgates = vec![T::zero(); batch * g4];
        let mut dx_t = vec![T::zero(); batch * inputs];
        let one = T::one();
        for t in (0..steps).rev() {
            let g = &gates[t * batch * g4..(t + 1) * batch * g4];
            let tc = &tanh_c[t * bh..(t + 1) * bh];
            let c_prev = &cs[t * bh..(t + 1) * bh];
            for b in 0..batch {
                for j in 0..hidden {
                    let k = b * hidden + j;
                    let dh = dy.data()[(b * steps + t) * hidden + j] + dh_next[k];
                    let gi = g[b * g4 + j];
                    let gf = g[b * g4 + hidden + j];
                    let gg = g[b * g4 + 2 * hidden + j];
                    let go = g[b * g4 + 3 * hidden + j];
                    let dc = dc_next[k] + dh * go * (one - tc[k] * tc[k]);
                    dgates[b * g4 + j] = dc * gg * gi * (one - gi);
                    dgates[b * g4 + hidden + j] = dc * c_prev[k] * gf * (one - gf);
                    dgates[b * g4 + 2 * hidden + j] = dc * gi * (one - gg * gg);
                    dgates[b * g4 + 3 * hidden + j] = dh * tc[k] * go * (one - go);
                    dc_next[k] = dc * gf;
                }
            }
            // dW_ih += dgates^T · x_t, x_t rows strided inside the input.
            T::gemm(
                g4,
                batch,
                inputs,
                one,
                &dgates,
                1,
                g4,
                &input[t * inputs..],
                steps * inputs,
                1,
                one,
                dw_ih.data_mut(),
                inputs,
                1,
            );
            let h_prev = &hs[t * bh..(t + 1) * bh];
            matmul(&dgates, true, h_prev, false, dw_hh.data_mut(), g4, batch, hidden, true);
            for row in dgates.chunks(g4) {
                db.data_mut().iter_mut().zip(row).for_each(|(a, b)| *a += *b);
            }
            matmul(&dgates, false, self.params[1].data(), false, &mut dh_next, batch, g4, hidden, false);
            if let Some(dx) = dx.as_mut() {
                matmul(&dgates, false, self.params[0].data(), false, &mut dx_t, batch, g4, inputs, false);
                let d = dx.data_mut();
                for b in 0..batch {
                    d[(b * steps + t) * inputs..(b * steps + t + 1) * inputs]
                        .copy_from_slice(&dx_t[b * inputs..(b + 1) * inputs]);
                }
            }
        }
        (vec![dw_ih, dw_hh, db], dx)
    }
}

fn uniform<T: Scalar, R: Rng + ?Sized>(shape: &[usize], bound: f64, rng: &mut R) -> Tensor<T> {
    Tensor::from_fn(shape, |_| T::lit(rng.random_range(-bound..bound)))
}

fn im2col<T: Scalar>(
    x: &[T],
    channels: usize,
    in_len: usize,
    kernel: usize,
    stride: usize,
    out_len: usize,
    col: &mut [T],
) {
    for ci in 0..channels {
        for kk in 0..kernel {
            let row = &mut col[(ci * kernel + kk) * out_len..(ci * kernel + kk + 1) * out_len];
            let src = &x[ci * in_len..(ci + 1) * in_len];
            for (p, v) in row.iter_mut().enumerate() {
                *v = src[p * stride + kk];
            }
        }
    }
}

fn col2im<T: Scalar>(
    col: &[T],
    channels: usize,
    in_len: usize,
    kernel: usize,
    stride: usize,
    out_len: usize,
    dx: &mut [T],
) {
    for ci in 0..channels {
        for kk in 0..kernel {
            let row = &col[(ci * kernel + kk) * out_len..(ci * kernel + kk + 1) * out_len];
            let dst = &mut dx[ci * in_len..(ci + 1) * in_len];
            for (p, v) in row.iter().enumerate() {
                dst[p * stride + kk] += *v;
            }
        }
    }
}

/// `y[rows, outputs] = x[rows, inputs] · Wᵀ + b`.
pub(crate) fn linear_apply<T: Scalar>(
    w: &[T],
    bias: &[T],
    x: &[T],
    rows: usize,
    inputs: usize,
    outputs: usize,
    y: &mut [T],
) {
    for row in y.chunks_mut(outputs).take(rows) {
        row.copy_from_slice(bias);
    }
    matmul(x, false, w, true, y, rows, inputs, outputs, true);
}

/// Gate nonlinearities and state update for one step. `g` holds the raw gate
/// pre-activations on entry and the activated gates on exit.
pub(crate) fn lstm_pointwise<T: Scalar>(
    g: &mut [T],
    c_prev: &[T],
    c_next: &mut [T],
    h_next: &mut [T],
    tanh_c: &mut [T],
    batch: usize,
    hidden: usize,
) {
    let g4 = 4 * hidden;
    for b in 0..batch {
        let row = &mut g[b * g4..(b + 1) * g4];
        for v in &mut row[..2 * hidden] {
            *v = sigmoid(*v);
        }
        for v in &mut row[2 * hidden..3 * hidden] {
            *v = v.tanh();
        }
        for v in &mut row[3 * hidden..] {
            *v = sigmoid(*v);
        }
        for j in 0..hidden {
            let k = b * hidden + j;
            let c = row[hidden + j] * c_prev[k] + row[j] * row[2 * hidden + j];
            c_next[k] = c;
            tanh_c[k] = c.tanh();
            h_next[k] = row[3 * hidden + j] * tanh_c[k];
        }
    }
}

/// One LSTM step on raw buffers for streaming inference: updates `h` and `c`
/// (`[batch, hidden]`) in place from `x` (`[batch, inputs]`). `scratch` must
/// hold at least `batch·4·hidden` values.
pub fn lstm_step<T: Scalar>(
    layer: &Layer<T>,
    x: &[T],
    h: &mut [T],
    c: &mut [T],
    scratch: &mut Vec<T>,
) {
    let LayerKind::Lstm { inputs, hidden } = layer.kind else {
        panic!("lstm_step on {}", layer.kind)
    };
    let batch = h.len() / hidden;
    let g4 = 4 * hidden;
    scratch.resize(batch * g4 + 2 * batch * hidden, T::zero());
    let (g, rest) = scratch.split_at_mut(batch * g4);
    let (c_prev, tc) = rest.split_at_mut(batch * hidden);
    for row in g.chunks_mut(g4) {
        row.copy_from_slice(layer.params[2].data());
    }
    matmul(x, false, layer.params[0].data(), true, g, batch, inputs, g4, true);
    matmul(h, false, layer.params[1].data(), true, g, batch, hidden, g4, true);
    c_prev.copy_from_slice(c);
    lstm_pointwise(g, c_prev, c, h, tc, batch, hidden);
}
