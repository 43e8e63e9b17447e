//! Sobolev-style force-tracking reward: distance of the window-mean force from
//! the reference plus a first-difference smoothness penalty, per axis.

use std::collections::VecDeque;

use num_traits::Float;
use thiserror::Error;

/// Evaluation window in 100 Hz samples (2 s).
pub const REWARD_WINDOW: usize = 200;

#[derive(Debug, Error, PartialEq)]
pub enum RewardError {
    #[error("smoothness needs at least 2 samples, got {0}")]
    TooShort(usize),
    #[error("window error needs at least 1 sample")]
    Empty,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RewardParams {
    pub w_x: f64,
    pub w_y: f64,
    pub lambda_x: f64,
    pub lambda_y: f64,
    pub window: usize,
}

impl Default for RewardParams {
    fn default() -> Self {
        RewardParams {
            w_x: 1.0,
            w_y: 1.0,
            lambda_x: 0.05,
            lambda_y: 0.05,
            window: REWARD_WINDOW,
        }
    }
}

/// `sqrt(Σ (F[i+1] − F[i])²)`.
pub fn sobolev_smoothness<T: Float>(f: &[T]) -> Result<T, RewardError> {
    if f.len() < 2 {
        return Err(RewardError::TooShort(f.len()));
    }
    Ok(f
        .windows(2)
        .fold(T::zero(), |s, w| s + (w[1] - w[0]) * (w[1] - w[0]))
        .sqrt())
}

/// Signed `mean(F) − F_ref`.
pub fn window_error<T: Float>(f: &[T], reference: T) -> Result<T, RewardError> {
    if f.is_empty() {
        return Err(RewardError::Empty);
    }
    let m = f.iter().fold(T::zero(), |s, v| s + *v) / T::from(f.len()).unwrap();
    Ok(m - reference)
}

/// Per-axis breakdown of one reward evaluation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RewardTerms {
    pub reward: f64,
    pub error: [f64; 2],
    pub smoothness: [f64; 2],
}

/// `r = −Σ_d w_d (|F_e^d| + λ_d·smoothness(F^d))` over the supplied samples.
/// Callers pass the trailing window, or the whole prefix while it is shorter.
pub fn step_reward(
    fx: &[f64],
    fy: &[f64],
    reference: [f64; 2],
    p: &RewardParams,
) -> Result<RewardTerms, RewardError> {
    let ex = window_error(fx, reference[0])?;
    let ey = window_error(fy, reference[1])?;
    let sx = sobolev_smoothness(fx)?;
    let sy = sobolev_smoothness(fy)?;
    let reward = -(p.w_x * (ex.abs() + p.lambda_x * sx) + p.w_y * (ey.abs() + p.lambda_y * sy));
    Ok(RewardTerms {
        reward,
        error: [ex, ey],
        smoothness: [sx, sy],
    })
}

/// Trailing force buffer holding at most `capacity` samples per axis.
#[derive(Debug, Clone)]
pub struct ForceWindow {
    capacity: usize,
    fx: VecDeque<f64>,
    fy: VecDeque<f64>,
}

impl ForceWindow {
    pub fn new(capacity: usize) -> Self {
        ForceWindow {
            capacity,
            fx: VecDeque::with_capacity(capacity),
            fy: VecDeque::with_capacity(capacity),
        }
    }

    pub fn clear(&mut self) {
        self.fx.clear();
        self.fy.clear();
    }

    pub fn push(&mut self, fx: f64, fy: f64) {
        if self.fx.len() == self.capacity {
            self.fx.pop_front();
            self.fy.pop_front();
        }
        self.fx.push_back(fx);
        self.fy.push_back(fy);
    }

    pub fn len(&self) -> usize {
        self.fx.len()
    }

    pub fn is_empty(&self) -> bool {
        self.fx.is_empty()
    }

    pub fn is_warm(&self) -> bool {
        self.fx.len() == self.capacity
    }

    pub fn reward(&mut self, reference: [f64; 2], p: &RewardParams) -> Result<RewardTerms, RewardError> {
        self.fx.make_contiguous();
        self.fy.make_contiguous();
        step_reward(self.fx.as_slices().0, self.fy.as_slices().0, reference, p)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn smoothness_examples() {
        assert_eq!(sobolev_smoothness(&[2.0; 5]).unwrap(), 0.0);
        assert!((sobolev_smoothness(&[1.0, 2.0, 4.0]).unwrap() - 5f64.sqrt()).abs() < 1e-15);
        assert_eq!(sobolev_smoothness(&[4.0, 2.0, 1.0]), sobolev_smoothness(&[1.0, 2.0, 4.0]));
        assert_eq!(sobolev_smoothness(&[1.0]), Err(RewardError::TooShort(1)));
    }

    #[test]
    fn window_error_examples() {
        assert_eq!(window_error(&[1.0, 3.0], 2.0).unwrap(), 0.0);
        assert_eq!(window_error(&[0.0, 1.0], 1.0).unwrap(), -0.5);
        assert_eq!(window_error::<f64>(&[], 1.0), Err(RewardError::Empty));
    }

    #[test]
    fn reward_examples() {
        let p = RewardParams::default();
        assert_eq!(step_reward(&[2.0; 10], &[-1.0; 10], [2.0, -1.0], &p).unwrap().reward, 0.0);
        let p0 = RewardParams {
            lambda_x: 0.0,
            lambda_y: 0.0,
            ..p
        };
        // means (0.5, 0.25) below references of (1, 0.5)
        let r = step_reward(&[0.0, 1.0], &[0.0, 0.5], [1.0, 0.5], &p0).unwrap();
        assert!((r.reward + 0.75).abs() < 1e-15);
    }

    #[test]
    fn force_window_keeps_trailing_samples() {
        let mut w = ForceWindow::new(3);
        for i in 0..5 {
            w.push(i as f64, -(i as f64));
        }
        assert!(w.is_warm());
        let r = w.reward([3.0, -3.0], &RewardParams::default()).unwrap();
        assert_eq!(r.error, [0.0, 0.0]);
        assert!((r.smoothness[0] - 2f64.sqrt()).abs() < 1e-15);
    }

    proptest! {
        #[test]
        fn reward_never_positive(fx in prop::collection::vec(-5.0f64..5.0, 2..40),
                                 fy in prop::collection::vec(-5.0f64..5.0, 2..40),
                                 rx in -3.0f64..3.0, ry in -3.0f64..3.0) {
            let n = fx.len().min(fy.len());
            let r = step_reward(&fx[..n], &fy[..n], [rx, ry], &RewardParams::default()).unwrap();
            prop_assert!(r.reward <= 0.0);
        }

        #[test]
        fn smoothness_offset_invariant(f in prop::collection::vec(-5.0f64..5.0, 2..40), c in -100.0f64..100.0) {
            let g: Vec<f64> = f.iter().map(|v| v + c).collect();
            let a = sobolev_smoothness(&f).unwrap();
            let b = sobolev_smoothness(&g).unwrap();
            prop_assert!((a - b).abs() <= 1e-9 * (1.0 + a));
        }

        #[test]
        fn axis_swap_symmetry(fx in prop::collection::vec(-5.0f64..5.0, 10),
                              fy in prop::collection::vec(-5.0f64..5.0, 10),
                              wx in 0.0f64..2.0, wy in 0.0f64..2.0, lx in 0.0f64..1.0, ly in 0.0f64..1.0) {
            let p = RewardParams { w_x: wx, w_y: wy, lambda_x: lx, lambda_y: ly, window: 200 };
            let q = RewardParams { w_x: wy, w_y: wx, lambda_x: ly, lambda_y: lx, window: 200 };
            let a = step_reward(&fx, &fy, [1.0, -0.5], &p).unwrap().reward;
            let b = step_reward(&fy, &fx, [-0.5, 1.0], &q).unwrap().reward;
            prop_assert!((a - b).abs() < 1e-12);
        }

        #[test]
        fn larger_lambda_lowers_reward(f in prop::collection::vec(-5.0f64..5.0, 3..20), dl in 0.01f64..1.0) {
            prop_assume!(sobolev_smoothness(&f).unwrap() > 1e-9);
            let p = RewardParams::default();
            let q = RewardParams { lambda_x: p.lambda_x + dl, ..p };
            let a = step_reward(&f, &f, [0.0, 0.0], &p).unwrap().reward;
            let b = step_reward(&f, &f, [0.0, 0.0], &q).unwrap().reward;
            prop_assert!(b < a);
        }
    }
}
