//! Residual losses and Kaplan–Meier weighting for right-censored outcomes.

use crate::error::{Error, Result};
use ndarray::{Array1, Array2};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossKind {
    Cauchy,
    LeastSquares,
}

/// Loss function with its scale parameter. The Cauchy loss
/// `log(1 + (r/c)^2)` has a bounded, redescending influence function, so a
/// single grossly contaminated response cannot dominate the fit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossSpec {
    pub kind: LossKind,
    pub scale: f64,
}

impl LossSpec {
    pub fn cauchy(scale: f64) -> Self {
        assert!(scale > 0.0, "Cauchy scale must be positive");
        Self {
            kind: LossKind::Cauchy,
            scale,
        }
    }

    pub fn least_squares() -> Self {
        Self {
            kind: LossKind::LeastSquares,
            scale: 1.0,
        }
    }
}

impl Default for LossSpec {
    fn default() -> Self {
        Self::cauchy(1.0)
    }
}

/// Loss of a single residual.
pub fn rho(r: f64, spec: &LossSpec) -> f64 {
    match spec.kind {
        LossKind::Cauchy => {
            let z = r / spec.scale;
            (z * z).ln_1p()
        }
        LossKind::LeastSquares => r * r,
    }
}

/// Derivative of `rho` with respect to the residual. For the Cauchy loss this
/// is `2r/(r^2 + c^2)`, bounded by `1/c` and vanishing for gross outliers.
pub fn psi(r: f64, spec: &LossSpec) -> f64 {
    match spec.kind {
        LossKind::Cauchy => {
            let c = spec.scale;
            2.0 * r / (r * r + c * c)
        }
        LossKind::LeastSquares => 2.0 * r,
    }
}

/// One observation of a right-censored outcome on the log-time scale.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SurvivalRecord {
    /// log(min(T, C))
    pub y: f64,
    /// 1 if the event was observed, 0 if censored
    pub delta: u8,
}

/// Kaplan–Meier weights for records sorted ascending by observed log-time.
///
/// Sorting is the caller's responsibility so that index alignment with the
/// design matrix is preserved; unsorted input is an error. Weights of
/// censored observations are zero and the weights are used exactly as
/// defined, without renormalization (they sum to one only when the largest
/// observation is an event).
pub fn km_weights(records: &[SurvivalRecord]) -> Result<Array1<f64>> {
    let n = records.len();
    if n == 0 {
        return Err(Error::LengthMismatch {
            what: "survival records",
            got: 0,
            expected: 1,
        });
    }
    if records.windows(2).any(|w| w[0].y > w[1].y) {
        return Err(Error::UnsortedSurvival);
    }
    let nf = n as f64;
    let mut w = Array1::zeros(n);
    let mut survival_so_far = 1.0;
    for (i, rec) in records.iter().enumerate() {
        let at_risk = nf - i as f64;
        if rec.delta == 1 {
            w[i] = survival_so_far / at_risk;
        }
        if rec.delta == 1 {
            survival_so_far *= (at_risk - 1.0) / at_risk;
        }
    }
    Ok(w)
}

/// Sum of per-observation losses, optionally weighted. Unit weights are used
/// when `weights` is absent (continuous outcomes).
pub fn dataset_loss(
    residuals: &Array1<f64>,
    weights: Option<&Array1<f64>>,
    spec: &LossSpec,
) -> Result<f64> {
    if let Some(w) = weights {
        if w.len() != residuals.len() {
            return Err(Error::LengthMismatch {
                what: "weights",
                got: w.len(),
                expected: residuals.len(),
            });
        }
        Ok(residuals
            .iter()
            .zip(w.iter())
            .filter(|(_, &wi)| wi != 0.0)
            .map(|(&r, &wi)| wi * rho(r, spec))
            .sum())
    } else {
        Ok(residuals.iter().map(|&r| rho(r, spec)).sum())
    }
}

/// Gradient of `dataset_loss` with respect to a coefficient increment applied
/// through `block`: the increment enters the residuals as `r - block * gamma`,
/// so the gradient at the current residuals is `-sum_i w_i psi(r_i) block_i`.
pub fn loss_gradient(
    residuals: &Array1<f64>,
    block: &Array2<f64>,
    weights: Option<&Array1<f64>>,
    spec: &LossSpec,
) -> Result<Array1<f64>> {
    let n = residuals.len();
    if block.nrows() != n {
        return Err(Error::LengthMismatch {
            what: "design block rows",
            got: block.nrows(),
            expected: n,
        });
    }
    if let Some(w) = weights {
        if w.len() != n {
            return Err(Error::LengthMismatch {
                what: "weights",
                got: w.len(),
                expected: n,
            });
        }
    }
    let k = block.ncols();
    let mut g = Array1::zeros(k);
    for i in 0..n {
        let wi = weights.map_or(1.0, |w| w[i]);
        if wi == 0.0 {
            continue;
        }
        let s = wi * psi(residuals[i], spec);
        for q in 0..k {
            g[q] -= s * block[[i, q]];
        }
    }
    Ok(g)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::array;
    use proptest::prelude::*;

    fn cauchy1() -> LossSpec {
        LossSpec::cauchy(1.0)
    }

    #[test]
    fn rho_values() {
        assert_eq!(rho(0.0, &cauchy1()), 0.0);
        assert_abs_diff_eq!(rho(1.0, &cauchy1()), std::f64::consts::LN_2, epsilon = 1e-15);
        assert_eq!(rho(2.0, &LossSpec::least_squares()), 4.0);
    }

    #[test]
    fn psi_values() {
        assert_eq!(psi(0.0, &cauchy1()), 0.0);
        assert_eq!(psi(1.0, &cauchy1()), 1.0);
        assert!(psi(1e12, &cauchy1()) < 1e-11);
    }

    #[test]
    fn km_uniform_when_uncensored() {
        let recs: Vec<SurvivalRecord> = [0.1, 0.5, 0.7]
            .iter()
            .map(|&y| SurvivalRecord { y, delta: 1 })
            .collect();
        let w = km_weights(&recs).unwrap();
        for &wi in w.iter() {
            assert_abs_diff_eq!(wi, 1.0 / 3.0, epsilon = 1e-15);
        }
    }

    #[test]
    fn km_hand_computed_case() {
        let recs = vec![
            SurvivalRecord { y: 0.0, delta: 1 },
            SurvivalRecord { y: 1.0, delta: 0 },
            SurvivalRecord { y: 2.0, delta: 1 },
        ];
        let w = km_weights(&recs).unwrap();
        assert_abs_diff_eq!(w[0], 1.0 / 3.0, epsilon = 1e-15);
        assert_eq!(w[1], 0.0);
        assert_abs_diff_eq!(w[2], 2.0 / 3.0, epsilon = 1e-15);
    }

    #[test]
    fn km_single_censored() {
        let w = km_weights(&[SurvivalRecord { y: 0.0, delta: 0 }]).unwrap();
        assert_eq!(w[0], 0.0);
    }

    #[test]
    fn km_rejects_unsorted() {
        let recs = vec![
            SurvivalRecord { y: 1.0, delta: 1 },
            SurvivalRecord { y: 0.0, delta: 1 },
        ];
        assert!(matches!(km_weights(&recs), Err(Error::UnsortedSurvival)));
    }

    #[test]
    fn loss_examples() {
        let z = array![0.0, 0.0, 0.0];
        assert_eq!(dataset_loss(&z, None, &cauchy1()).unwrap(), 0.0);
        let r = array![1.0, 1.0];
        assert_abs_diff_eq!(
            dataset_loss(&r, None, &cauchy1()).unwrap(),
            2.0 * std::f64::consts::LN_2,
            epsilon = 1e-14
        );
        let w = array![1.0 / 3.0, 2.0 / 3.0];
        assert_abs_diff_eq!(
            dataset_loss(&r, Some(&w), &cauchy1()).unwrap(),
            std::f64::consts::LN_2,
            epsilon = 1e-14
        );
    }

    #[test]
    fn loss_length_mismatch() {
        let r = array![1.0, 2.0];
        let w = array![1.0];
        assert!(dataset_loss(&r, Some(&w), &cauchy1()).is_err());
    }

    #[test]
    fn gradient_zero_at_zero_residuals() {
        let r = array![0.0, 0.0];
        let block = array![[1.0, 2.0], [3.0, 4.0]];
        let g = loss_gradient(&r, &block, None, &cauchy1()).unwrap();
        assert_eq!(g, array![0.0, 0.0]);
    }

    #[test]
    fn least_squares_gradient_closed_form() {
        let r = array![1.0, -2.0, 0.5];
        let block = array![[1.0, 0.0], [0.5, 1.0], [-1.0, 2.0]];
        let g = loss_gradient(&r, &block, None, &LossSpec::least_squares()).unwrap();
        let expected = -2.0 * block.t().dot(&r);
        assert_abs_diff_eq!(g[0], expected[0], epsilon = 1e-14);
        assert_abs_diff_eq!(g[1], expected[1], epsilon = 1e-14);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        use rand::prelude::*;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        for _ in 0..20 {
            let n = 30;
            let k = 4;
            let r = Array1::from_iter((0..n).map(|_| rng.gen_range(-3.0..3.0)));
            let block =
                Array2::from_shape_fn((n, k), |_| rng.gen_range(-1.0..1.0));
            let spec = cauchy1();
            let g = loss_gradient(&r, &block, None, &spec).unwrap();
            let h = 1e-6;
            for q in 0..k {
                let mut shift = |s: f64| {
                    let pert: Array1<f64> = (0..n)
                        .map(|i| r[i] - s * block[[i, q]])
                        .collect();
                    dataset_loss(&pert, None, &spec).unwrap()
                };
                let fd = (shift(h) - shift(-h)) / (2.0 * h);
                let denom = fd.abs().max(1e-8);
                assert!(
                    ((g[q] - fd) / denom).abs() < 1e-5,
                    "component {q}: analytic {} vs fd {}",
                    g[q],
                    fd
                );
            }
        }
    }

    proptest! {
        #[test]
        fn rho_is_even(r in -50.0f64..50.0) {
            let s = cauchy1();
            prop_assert!((rho(r, &s) - rho(-r, &s)).abs() < 1e-12);
        }

        #[test]
        fn psi_bounded_by_inverse_scale(r in -1e6f64..1e6, c in 0.1f64..5.0) {
            let s = LossSpec::cauchy(c);
            prop_assert!(psi(r, &s).abs() <= 1.0 / c + 1e-12);
        }

        #[test]
        fn km_weights_sum_at_most_one(deltas in proptest::collection::vec(0u8..2, 1..40)) {
            let recs: Vec<SurvivalRecord> = deltas
                .iter()
                .enumerate()
                .map(|(i, &d)| SurvivalRecord { y: i as f64, delta: d })
                .collect();
            let w = km_weights(&recs).unwrap();
            let total: f64 = w.sum();
            prop_assert!(total <= 1.0 + 1e-12);
            prop_assert!(w.iter().all(|&x| x >= 0.0));
            if *deltas.last().unwrap() == 1 {
                prop_assert!((total - 1.0).abs() < 1e-9);
            }
        }
    }
}
