//! Soft-fin force-control lab: a synthetic fin plant, a two-stage neural
//! surrogate trained on its logs, LSTM-PPO motion controllers trained inside
//! the surrogate, and evaluation of those controllers back on the plant.

pub mod config;
pub mod datagen;
pub mod eval;
pub mod metrics;
pub mod nn;
pub mod pipeline;
pub mod plant;
pub mod reward;
pub mod rl;
pub mod surrogate;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Tensor32 = nn::Tensor<f32>;
pub type Tensor64 = nn::Tensor<f64>;
pub type Network32 = nn::Network<f32>;
pub type Network64 = nn::Network<f64>;
pub type Adam64 = nn::Adam<f64>;

/// Independent RNG stream `stream` of the generator seeded with `seed`.
pub fn substream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}
