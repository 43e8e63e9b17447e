use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::network::{Mode, Network, RecurrentState};
use super::tensor::Tensor;
use super::NnError;

/// Central-difference step used by the checks.
pub const FD_STEP: f64 = 1e-5;

/// Compares backpropagated parameter gradients against central finite
/// differences and returns the largest relative error
/// `|a − n| / max(1e-8, |a| + |n|)` over every parameter.
///
/// `loss` maps the network output to a scalar and its gradient. Dropout masks
/// are replayed from `dropout_seed` on every evaluation so the function being
/// differentiated is fixed.
pub fn gradient_check(
    net: &mut Network<f64>,
    input: &Tensor<f64>,
    state: Option<&RecurrentState<f64>>,
    loss: impl Fn(&Tensor<f64>) -> (f64, Tensor<f64>),
    dropout_seed: u64,
) -> Result<f64, NnError> {
    gradient_check_strided(net, input, state, loss, dropout_seed, usize::MAX)
}

/// [`gradient_check`] over at most `per_tensor` evenly spaced entries of each
/// parameter tensor, for networks too large to perturb entry by entry.
pub fn gradient_check_strided(
    net: &mut Network<f64>,
    input: &Tensor<f64>,
    state: Option<&RecurrentState<f64>>,
    loss: impl Fn(&Tensor<f64>) -> (f64, Tensor<f64>),
    dropout_seed: u64,
    per_tensor: usize,
) -> Result<f64, NnError> {
    let eval = |net: &Network<f64>| -> Result<f64, NnError> {
        let mut rng = ChaCha8Rng::seed_from_u64(dropout_seed);
        let out = net.forward(input, Mode::Train(&mut rng), state)?;
        Ok(loss(&out.output).0)
    };
    let mut rng = ChaCha8Rng::seed_from_u64(dropout_seed);
    let out = net.forward(input, Mode::Train(&mut rng), state)?;
    let (_, dout) = loss(&out.output);
    let analytic = net.backward(out.tape.as_ref().expect("train tape"), &dout)?;

    let mut worst = 0.0f64;
    let n_layers = net.layers().len();
    for li in 0..n_layers {
        let n_params = net.layers()[li].params().len();
        for pi in 0..n_params {
            let len = net.layers()[li].params()[pi].len();
            let stride = len.div_ceil(per_tensor.max(1)).max(1);
            for k in (0..len).step_by(stride) {
                let orig = net.layers()[li].params()[pi].data()[k];
                set_param(net, li, pi, k, orig + FD_STEP);
                let up = eval(net)?;
                set_param(net, li, pi, k, orig - FD_STEP);
                let down = eval(net)?;
                set_param(net, li, pi, k, orig);
                let numeric = (up - down) / (2.0 * FD_STEP);
                let a = analytic[li][pi].data()[k];
                let rel = (a - numeric).abs() / (a.abs() + numeric.abs()).max(1e-8);
                worst = worst.max(rel);
            }
        }
    }
    Ok(worst)
}

fn set_param(net: &mut Network<f64>, layer: usize, param: usize, k: usize, value: f64) {
    let offset: usize = net.layers()[..layer].iter().map(|l| l.params().len()).sum();
    net.params_mut().nth(offset + param).expect("param index").data_mut()[k] = value;
}

/// `loss = Σ wᵢ·yᵢ` with fixed pseudo-random weights, a generic probe for
/// gradient checks.
pub fn weighted_sum_loss(shape: &[usize], seed: u64) -> impl Fn(&Tensor<f64>) -> (f64, Tensor<f64>) {
    use rand::Rng;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w = Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0));
    move |y: &Tensor<f64>| {
        let l = y.data().iter().zip(w.data()).map(|(a, b)| a * b).sum();
        (l, w.clone())
    }
}
