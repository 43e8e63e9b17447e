use super::network::{Gradients, Network};
use super::scalar::Scalar;
use super::tensor::Tensor;
use super::NnError;

/// Adaptive-moment optimizer state with bias correction.
#[derive(Debug, Clone)]
pub struct Adam<T> {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: Gradients<T>,
    v: Gradients<T>,
}

impl<T: Scalar> Adam<T> {
    pub fn new(net: &Network<T>, lr: f64) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: net.zero_grads(),
            v: net.zero_grads(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// One update. Non-finite gradients abort before any parameter changes.
    pub fn step(&mut self, net: &mut Network<T>, grads: &Gradients<T>) -> Result<(), NnError> {
        for (layer, lg) in net.layers().iter().zip(grads) {
            for g in lg {
                if !g.is_finite() {
                    let max_abs = g
                        .data()
                        .iter()
                        .map(|v| v.as_f64().abs())
                        .fold(0.0, |a: f64, b| if b.is_nan() || b > a { b } else { a });
                    return Err(NnError::NonFiniteGradient {
                        layer: layer.kind().to_string(),
                        max_abs,
                    });
                }
            }
        }
        if grads.len() != self.m.len()
            || grads
                .iter()
                .flatten()
                .zip(self.m.iter().flatten())
                .any(|(g, m)| g.shape() != m.shape())
        {
            return Err(NnError::Shape {
                layer: None,
                detail: "gradient set does not mirror optimizer state".into(),
            });
        }
        self.step += 1;
        let t = self.step as i32;
        let (b1, b2) = (T::lit(self.beta1), T::lit(self.beta2));
        let c1 = T::lit(1.0 - self.beta1.powi(t));
        let c2 = T::lit(1.0 - self.beta2.powi(t));
        let lr = T::lit(self.lr);
        let eps = T::lit(self.eps);
        let one = T::one();
        let (m_all, v_all) = (&mut self.m, &mut self.v);
        net.zip_params_mut(grads, |li, pi, p: &mut Tensor<T>, g: &Tensor<T>| {
            let m = m_all[li][pi].data_mut();
            let v = v_all[li][pi].data_mut();
            for (((w, &gi), mi), vi) in p.data_mut().iter_mut().zip(g.data()).zip(m).zip(v) {
                *mi = b1 * *mi + (one - b1) * gi;
                *vi = b2 * *vi + (one - b2) * gi * gi;
                let mhat = *mi / c1;
                let vhat = *vi / c2;
                *w -= lr * mhat / (vhat.sqrt() + eps);
            }
        });
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::LayerKind;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn scalar_net(w: f64) -> Network<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut net = Network::new(&[LayerKind::Linear { inputs: 1, outputs: 1 }], &mut rng).unwrap();
        let mut ps = net.params_mut();
        ps.next().unwrap().data_mut()[0] = w;
        ps.next().unwrap().data_mut()[0] = 0.0;
        drop(ps);
        net
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let mut net = scalar_net(0.7);
        let before = net.clone();
        let mut opt = Adam::new(&net, 0.1);
        let g = net.zero_grads();
        opt.step(&mut net, &g).unwrap();
        assert_eq!(net, before);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut net = scalar_net(0.0);
        let mut opt = Adam::new(&net, 0.1);
        let mut g = net.zero_grads();
        g[0][0].data_mut()[0] = 1.0;
        opt.step(&mut net, &g).unwrap();
        // m̂ = 1, v̂ = 1 → Δ = lr / (1 + eps)
        let w = net.params().next().unwrap().data()[0];
        assert!((w + 0.1 / (1.0 + 1e-8)).abs() < 1e-15, "{w}");
    }

    #[test]
    fn non_finite_gradient_is_reported() {
        let mut net = scalar_net(0.0);
        let mut opt = Adam::new(&net, 0.1);
        let mut g = net.zero_grads();
        g[0][1].data_mut()[0] = f64::INFINITY;
        match opt.step(&mut net, &g) {
            Err(NnError::NonFiniteGradient { layer, max_abs }) => {
                assert!(layer.starts_with("linear"));
                assert!(max_abs.is_infinite());
            }
            other => panic!("{other:?}"),
        }
        assert_eq!(opt.step_count(), 0);
    }
}
