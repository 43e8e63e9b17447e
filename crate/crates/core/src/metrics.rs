//! Time-series comparison: RMSE, MAE, path-normalised DTW and a trailing
//! moving average.

use num_traits::Float;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("series lengths differ: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("series is empty")]
    Empty,
    #[error("band {band} cannot connect series whose lengths differ by {diff}")]
    InfeasibleBand { band: usize, diff: usize },
    #[error("moving-average window must be at least 1")]
    BadWindow,
}

fn paired<T>(a: &[T], b: &[T]) -> Result<(), MetricsError> {
    if a.len() != b.len() {
        return Err(MetricsError::LengthMismatch {
            left: a.len(),
            right: b.len(),
        });
    }
    if a.is_empty() {
        return Err(MetricsError::Empty);
    }
    Ok(())
}

pub fn rmse<T: Float>(a: &[T], b: &[T]) -> Result<T, MetricsError> {
    paired(a, b)?;
    let sum = a
        .iter()
        .zip(b)
        .fold(T::zero(), |s, (x, y)| s + (*x - *y) * (*x - *y));
    Ok((sum / T::from(a.len()).unwrap()).sqrt())
}

pub fn mae<T: Float>(a: &[T], b: &[T]) -> Result<T, MetricsError> {
    paired(a, b)?;
    let sum = a.iter().zip(b).fold(T::zero(), |s, (x, y)| s + (*x - *y).abs());
    Ok(sum / T::from(a.len()).unwrap())
}

/// Coefficient of determination of `pred` against `truth`.
pub fn r_squared<T: Float>(truth: &[T], pred: &[T]) -> Result<T, MetricsError> {
    paired(truth, pred)?;
    let n = T::from(truth.len()).unwrap();
    let mean = truth.iter().fold(T::zero(), |s, v| s + *v) / n;
    let ss_tot = truth.iter().fold(T::zero(), |s, v| s + (*v - mean) * (*v - mean));
    let ss_res = truth
        .iter()
        .zip(pred)
        .fold(T::zero(), |s, (t, p)| s + (*t - *p) * (*t - *p));
    Ok(T::one() - ss_res / ss_tot)
}

pub fn mean<T: Float>(s: &[T]) -> T {
    s.iter().fold(T::zero(), |a, v| a + *v) / T::from(s.len()).unwrap()
}

/// Population standard deviation.
pub fn std_dev<T: Float>(s: &[T]) -> T {
    let m = mean(s);
    (s.iter().fold(T::zero(), |a, v| a + (*v - m) * (*v - m)) / T::from(s.len()).unwrap()).sqrt()
}

/// Dynamic time warping with `|aᵢ − bⱼ|` cost, divided by the length of the
/// optimal warping path. Among equal-cost paths the shortest is used.
/// `band` restricts cells to `|i − j| ≤ band` (Sakoe–Chiba).
pub fn dtw<T: Float>(a: &[T], b: &[T], band: Option<usize>) -> Result<T, MetricsError> {
    dtw_by(a, b, band, |x, y| (*x - *y).abs())
}

/// DTW over two-channel samples with Euclidean point cost.
pub fn dtw_2d<T: Float>(a: &[[T; 2]], b: &[[T; 2]], band: Option<usize>) -> Result<T, MetricsError> {
    dtw_by(a, b, band, |x, y| (x[0] - y[0]).hypot(x[1] - y[1]))
}

/// Generic path-normalised DTW with a caller-supplied point cost.
pub fn dtw_by<P, T: Float>(
    a: &[P],
    b: &[P],
    band: Option<usize>,
    cost: impl Fn(&P, &P) -> T,
) -> Result<T, MetricsError> {
    if a.is_empty() || b.is_empty() {
        return Err(MetricsError::Empty);
    }
    let (n, m) = (a.len(), b.len());
    let diff = n.abs_diff(m);
    let band = band.unwrap_or(usize::MAX);
    if band < diff {
        return Err(MetricsError::InfeasibleBand { band, diff });
    }
    // (accumulated cost, path length); None marks cells outside the band.
    type Cell<T> = Option<(T, usize)>;
    let better = |x: Cell<T>, y: Cell<T>| -> Cell<T> {
        match (x, y) {
            (None, c) | (c, None) => c,
            (Some(p), Some(q)) => {
                if q.0 < p.0 || (q.0 == p.0 && q.1 < p.1) {
                    Some(q)
                } else {
                    Some(p)
                }
            }
        }
    };
    let mut prev: Vec<Cell<T>> = vec![None; m];
    let mut cur: Vec<Cell<T>> = vec![None; m];
    for i in 0..n {
        for j in 0..m {
            cur[j] = if i.abs_diff(j) > band {
                None
            } else if i == 0 && j == 0 {
                Some((cost(&a[0], &b[0]), 1))
            } else {
                let diag = if i > 0 && j > 0 { prev[j - 1] } else { None };
                let up = if i > 0 { prev[j] } else { None };
                let left = if j > 0 { cur[j - 1] } else { None };
                better(better(diag, up), left).map(|(c, l)| (c + cost(&a[i], &b[j]), l + 1))
            };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    let (total, len) = prev[m - 1].expect("band admits the end cell");
    Ok(total / T::from(len).unwrap())
}

/// Trailing mean over `window` samples; the first `window − 1` outputs
/// average the available prefix.
pub fn moving_average<T: Float>(s: &[T], window: usize) -> Result<Vec<T>, MetricsError> {
    if window == 0 {
        return Err(MetricsError::BadWindow);
    }
    Ok((0..s.len())
        .map(|i| {
            let lo = (i + 1).saturating_sub(window);
            let w = &s[lo..=i];
            w.iter().fold(T::zero(), |a, v| a + *v) / T::from(w.len()).unwrap()
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn rmse_mae_examples() {
        assert_eq!(rmse(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert!((rmse(&[0.0, 0.0], &[3.0, 4.0]).unwrap() - 12.5f64.sqrt()).abs() < 1e-15);
        assert_eq!(mae(&[0.0, 0.0], &[3.0, 4.0]).unwrap(), 3.5);
        assert_eq!(
            rmse(&[0.0], &[1.0, 2.0]),
            Err(MetricsError::LengthMismatch { left: 1, right: 2 })
        );
        assert_eq!(mae::<f64>(&[], &[]), Err(MetricsError::Empty));
    }

    #[test]
    fn dtw_examples() {
        assert_eq!(dtw(&[0.0, 1.0, 2.0], &[0.0, 1.0, 2.0, 2.0], None).unwrap(), 0.0);
        assert_eq!(dtw(&[0.0, 0.0], &[1.0, 1.0], None).unwrap(), 1.0);
        assert_eq!(
            dtw(&[0.0, 1.0], &[0.0, 1.0, 2.0, 3.0], Some(1)),
            Err(MetricsError::InfeasibleBand { band: 1, diff: 2 })
        );
        assert!(dtw_2d(&[[0.0, 0.0]], &[[3.0, 4.0]], None).unwrap() == 5.0);
    }

    #[test]
    fn moving_average_examples() {
        assert_eq!(moving_average(&[0.0, 2.0, 4.0], 2).unwrap(), vec![0.0, 1.0, 3.0]);
        assert_eq!(moving_average(&[5.0; 4], 3).unwrap(), vec![5.0; 4]);
        assert_eq!(moving_average(&[1.0, -2.0, 7.5], 1).unwrap(), vec![1.0, -2.0, 7.5]);
        assert_eq!(moving_average(&[1.0], 0), Err(MetricsError::BadWindow));
    }

    fn series(len: std::ops::Range<usize>) -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(-10.0f64..10.0, len)
    }

    proptest! {
        #[test]
        fn dtw_symmetric_nonnegative(a in series(1..20), b in series(1..20)) {
            let ab = dtw(&a, &b, None).unwrap();
            prop_assert_eq!(ab, dtw(&b, &a, None).unwrap());
            prop_assert!(ab >= 0.0);
            prop_assert_eq!(dtw(&a, &a, None).unwrap(), 0.0);
        }

        #[test]
        fn full_band_equals_unbanded(a in series(1..20), b in series(1..20)) {
            let band = a.len().max(b.len());
            prop_assert_eq!(dtw(&a, &b, Some(band)).unwrap(), dtw(&a, &b, None).unwrap());
        }

        #[test]
        fn dtw_at_most_pointwise_mean(a in series(1..30)) {
            let b: Vec<f64> = a.iter().rev().copied().collect();
            let pointwise = mae(&a, &b).unwrap();
            prop_assert!(dtw(&a, &b, None).unwrap() <= pointwise + 1e-12);
        }

        #[test]
        fn mae_le_rmse(pair in (1usize..30).prop_flat_map(|n| (prop::collection::vec(-5.0f64..5.0, n), prop::collection::vec(-5.0f64..5.0, n)))) {
            let (a, b) = pair;
            prop_assert!(mae(&a, &b).unwrap() <= rmse(&a, &b).unwrap() + 1e-12);
        }

        #[test]
        fn pair_translation_invariance(a in series(5..6), b in series(5..6), c in -100.0f64..100.0) {
            let ac: Vec<f64> = a.iter().map(|v| v + c).collect();
            let bc: Vec<f64> = b.iter().map(|v| v + c).collect();
            prop_assert!((rmse(&ac, &bc).unwrap() - rmse(&a, &b).unwrap()).abs() < 1e-9);
            prop_assert!((mae(&ac, &bc).unwrap() - mae(&a, &b).unwrap()).abs() < 1e-9);
        }

        #[test]
        fn rmse_homogeneous(a in series(4..5), b in series(4..5), c in -3.0f64..3.0) {
            let ac: Vec<f64> = a.iter().map(|v| v * c).collect();
            let bc: Vec<f64> = b.iter().map(|v| v * c).collect();
            prop_assert!((rmse(&ac, &bc).unwrap() - c.abs() * rmse(&a, &b).unwrap()).abs() < 1e-9);
        }
    }
}
