use std::sync::atomic::{AtomicU64, Ordering};

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::layer::{Cache, Layer, LayerKind, LstmState};
use super::scalar::Scalar;
use super::tensor::Tensor;
use super::NnError;

static NEXT_NET_ID: AtomicU64 = AtomicU64::new(1);

/// Forward-pass mode. Training retains a tape and applies dropout with the
/// supplied RNG stream; evaluation is a pure function of the input.
pub enum Mode<'r> {
    Eval,
    Train(&'r mut ChaCha8Rng),
}

/// One state per LSTM layer, in layer order.
pub type RecurrentState<T> = Vec<LstmState<T>>;

/// Per-layer, per-parameter tensors shaped like the network parameters.
pub type Gradients<T> = Vec<Vec<Tensor<T>>>;

/// Values retained by a training forward pass.
#[derive(Debug)]
pub struct Tape<T> {
    net_id: u64,
    version: u64,
    caches: Vec<Cache<T>>,
    output_shape: Vec<usize>,
}

impl<T> Tape<T> {
    pub fn output_shape(&self) -> &[usize] {
        &self.output_shape
    }
}

#[derive(Debug)]
pub struct ForwardOutput<T> {
    pub output: Tensor<T>,
    pub state: Option<RecurrentState<T>>,
    pub tape: Option<Tape<T>>,
}

/// Sequential stack of layers.
#[derive(Debug)]
pub struct Network<T> {
    layers: Vec<Layer<T>>,
    id: u64,
    version: u64,
}

impl<T: Scalar> Clone for Network<T> {
    fn clone(&self) -> Self {
        Network {
            layers: self.layers.clone(),
            id: NEXT_NET_ID.fetch_add(1, Ordering::Relaxed),
            version: 0,
        }
    }
}

impl<T: Scalar> PartialEq for Network<T> {
    fn eq(&self, other: &Self) -> bool {
        self.layers.len() == other.layers.len()
            && self
                .layers
                .iter()
                .zip(&other.layers)
                .all(|(a, b)| a.kind() == b.kind() && a.params() == b.params())
    }
}

impl<T: Scalar> Network<T> {
    pub fn new<R: Rng + ?Sized>(kinds: &[LayerKind], rng: &mut R) -> Result<Self, NnError> {
        let layers = kinds
            .iter()
            .enumerate()
            .map(|(i, k)| {
                Layer::init(*k, rng).map_err(|e| match e {
                    NnError::Shape { detail, .. } => NnError::Shape {
                        layer: Some(format!("#{i} {k}")),
                        detail,
                    },
                    other => other,
                })
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self::from_layers(layers))
    }

    pub fn from_layers(layers: Vec<Layer<T>>) -> Self {
        Network {
            layers,
            id: NEXT_NET_ID.fetch_add(1, Ordering::Relaxed),
            version: 0,
        }
    }

    pub fn layers(&self) -> &[Layer<T>] {
        &self.layers
    }

    pub fn kinds(&self) -> Vec<LayerKind> {
        self.layers.iter().map(Layer::kind).collect()
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.kind().param_count()).sum()
    }

    /// Mutable parameter access; invalidates any outstanding tape.
    pub fn params_mut(&mut self) -> impl Iterator<Item = &mut Tensor<T>> {
        self.version += 1;
        self.layers.iter_mut().flat_map(|l| l.params_mut().iter_mut())
    }

    pub fn params(&self) -> impl Iterator<Item = &Tensor<T>> {
        self.layers.iter().flat_map(|l| l.params().iter())
    }

    pub fn has_lstm(&self) -> bool {
        self.lstm_hidden_sizes().next().is_some()
    }

    fn lstm_hidden_sizes(&self) -> impl Iterator<Item = usize> + '_ {
        self.layers.iter().filter_map(|l| match l.kind() {
            LayerKind::Lstm { hidden, .. } => Some(hidden),
            _ => None,
        })
    }

    pub fn zero_state(&self, batch: usize) -> RecurrentState<T> {
        self.lstm_hidden_sizes()
            .map(|h| LstmState::zeros(batch, h))
            .collect()
    }

    pub fn zero_grads(&self) -> Gradients<T> {
        self.layers
            .iter()
            .map(|l| l.params().iter().map(|p| Tensor::zeros(p.shape())).collect())
            .collect()
    }

    pub fn cast<U: Scalar>(&self) -> Network<U> {
        Network::from_layers(self.layers.iter().map(Layer::cast).collect())
    }

    /// Runs the stack. `state` must be present exactly when the network
    /// contains an LSTM layer.
    pub fn forward(
        &self,
        input: &Tensor<T>,
        mode: Mode<'_>,
        state: Option<&RecurrentState<T>>,
    ) -> Result<ForwardOutput<T>, NnError> {
        let n_lstm = self.lstm_hidden_sizes().count();
        match (n_lstm > 0, state) {
            (true, None) => return Err(NnError::MissingState),
            (false, Some(_)) => return Err(NnError::UnexpectedState),
            (true, Some(s)) if s.len() != n_lstm => {
                return Err(NnError::Shape {
                    layer: None,
                    detail: format!("{} recurrent states for {n_lstm} lstm layers", s.len()),
                })
            }
            _ => {}
        }
        let (train, mut rng) = match mode {
            Mode::Eval => (false, None),
            Mode::Train(r) => (true, Some(r)),
        };
        let mut x = input.clone();
        let mut caches = Vec::with_capacity(self.layers.len());
        let mut new_state = Vec::with_capacity(n_lstm);
        let mut lstm_idx = 0;
        for (i, layer) in self.layers.iter().enumerate() {
            layer
                .output_shape(x.shape())
                .map_err(|detail| NnError::Shape {
                    layer: Some(format!("#{i} {}", layer.kind())),
                    detail,
                })?;
            let (y, cache) = if let LayerKind::Lstm { hidden, .. } = layer.kind() {
                let s = &state.expect("checked above")[lstm_idx];
                if s.h.shape() != [x.shape()[0], hidden] || s.c.shape() != [x.shape()[0], hidden] {
                    return Err(NnError::Shape {
                        layer: Some(format!("#{i} {}", layer.kind())),
                        detail: format!("recurrent state must be [{}, {hidden}]", x.shape()[0]),
                    });
                }
                lstm_idx += 1;
                let (y, s2, cache) = layer.forward_lstm(&x, s, train);
                new_state.push(s2);
                (y, cache)
            } else {
                layer.forward_plain(&x, train, rng.as_deref_mut())
            };
            if !y.is_finite() {
                return Err(NnError::NonFinite {
                    layer: format!("#{i} {}", layer.kind()),
                });
            }
            if let Some(c) = cache {
                caches.push(c);
            }
            x = y;
        }
        let tape = train.then(|| Tape {
            net_id: self.id,
            version: self.version,
            caches,
            output_shape: x.shape().to_vec(),
        });
        Ok(ForwardOutput {
            output: x,
            state: (n_lstm > 0).then_some(new_state),
            tape,
        })
    }

    /// Backpropagates `output_grad` through a training tape, including the
    /// full unrolled sequence of every LSTM layer.
    pub fn backward(&self, tape: &Tape<T>, output_grad: &Tensor<T>) -> Result<Gradients<T>, NnError> {
        if tape.net_id != self.id || tape.version != self.version {
            return Err(NnError::StaleTape);
        }
        if output_grad.shape() != tape.output_shape.as_slice() {
            return Err(NnError::Shape {
                layer: None,
                detail: format!(
                    "output gradient {:?} does not match output {:?}",
                    output_grad.shape(),
                    tape.output_shape
                ),
            });
        }
        let mut grads: Gradients<T> = vec![Vec::new(); self.layers.len()];
        let mut dy = output_grad.clone();
        for (i, (layer, cache)) in self.layers.iter().zip(&tape.caches).enumerate().rev() {
            let (g, dx) = layer.backward(cache, &dy, i > 0);
            grads[i] = g;
            if let Some(dx) = dx {
                dy = dx;
            }
        }
        Ok(grads)
    }

    /// Applies `f(param, grad)` over matching parameter/gradient pairs.
    pub(crate) fn zip_params_mut(
        &mut self,
        grads: &Gradients<T>,
        mut f: impl FnMut(usize, usize, &mut Tensor<T>, &Tensor<T>),
    ) {
        self.version += 1;
        for (li, (layer, lg)) in self.layers.iter_mut().zip(grads).enumerate() {
            for (pi, (p, g)) in layer.params_mut().iter_mut().zip(lg).enumerate() {
                f(li, pi, p, g);
            }
        }
    }
}

/// `acc += g` elementwise over gradient sets.
pub fn accumulate<T: Scalar>(acc: &mut Gradients<T>, g: &Gradients<T>) {
    for (a, b) in acc.iter_mut().flatten().zip(g.iter().flatten()) {
        a.data_mut()
            .iter_mut()
            .zip(b.data())
            .for_each(|(x, y)| *x += *y);
    }
}

pub fn scale<T: Scalar>(g: &mut Gradients<T>, factor: T) {
    g.iter_mut()
        .flatten()
        .for_each(|t| t.data_mut().iter_mut().for_each(|v| *v *= factor));
}

pub fn global_norm<T: Scalar>(g: &Gradients<T>) -> T {
    g.iter()
        .flatten()
        .flat_map(|t| t.data().iter())
        .fold(T::zero(), |s, v| s + *v * *v)
        .sqrt()
}

/// Rescales `g` so its global L2 norm does not exceed `max_norm`.
pub fn clip_global_norm<T: Scalar>(g: &mut Gradients<T>, max_norm: T) -> T {
    let norm = global_norm(g);
    if norm > max_norm && norm > T::zero() {
        scale(g, max_norm / norm);
    }
    norm
}
