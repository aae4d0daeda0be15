//! Inner solver for the optimal common increment of one candidate subset.
//!
//! Least squares is solved exactly from the stacked weighted normal
//! equations. The Cauchy objective is minimized by iteratively reweighted
//! least squares from gamma = 0, with step-halving whenever a sweep fails to
//! decrease the objective, so the per-sweep objective trace is non-increasing
//! by construction.

use crate::loss::{dataset_loss, LossKind, LossSpec};
use ndarray::{Array1, Array2};

pub const IRLS_MAX_SWEEPS: usize = 50;
pub const IRLS_TOL: f64 = 1e-6;
pub const RIDGE_JITTER: f64 = 1e-8;

/// One dataset's view of the candidate problem: the covariate's centered
/// design block, the current residuals, and optional observation weights.
pub struct CandidateData<'a> {
    pub block: &'a Array2<f64>,
    pub residuals: &'a Array1<f64>,
    pub weights: Option<&'a Array1<f64>>,
}

/// Solution of one candidate: the increment, the loss over the subset at the
/// full (unshrunk) increment, and the per-sweep objective trace.
#[derive(Debug, Clone)]
pub struct IncrementSolution {
    pub gamma: Vec<f64>,
    /// Subset loss evaluated at the returned gamma.
    pub objective: f64,
    /// Objective after each accepted sweep, starting from gamma = 0.
    pub sweep_objectives: Vec<f64>,
    /// The Gram matrix needed a ridge jitter at least once.
    pub jittered: bool,
}

/// Cholesky solve of the symmetric system `a x = b` (lower triangle of `a`
/// given row-major, dimension k). Returns false if a pivot fails.
fn cholesky_solve(a: &mut [f64], b: &mut [f64], k: usize) -> bool {
    // in-place LL^T factorization
    for i in 0..k {
        for j in 0..=i {
            let mut sum = a[i * k + j];
            for q in 0..j {
                sum -= a[i * k + q] * a[j * k + q];
            }
            if i == j {
                if sum <= 0.0 || !sum.is_finite() {
                    return false;
                }
                a[i * k + j] = sum.sqrt();
            } else {
                a[i * k + j] = sum / a[j * k + j];
            }
        }
    }
    // forward then backward substitution
    for i in 0..k {
        let mut sum = b[i];
        for q in 0..i {
            sum -= a[i * k + q] * b[q];
        }
        b[i] = sum / a[i * k + i];
    }
    for i in (0..k).rev() {
        let mut sum = b[i];
        for q in i + 1..k {
            sum -= a[q * k + i] * b[q];
        }
        b[i] = sum / a[i * k + i];
    }
    true
}

fn solve_system(gram: &[f64], rhs: &[f64], k: usize, jittered: &mut bool) -> Vec<f64> {
    let mut a = gram.to_vec();
    let mut x = rhs.to_vec();
    if cholesky_solve(&mut a, &mut x, k) {
        return x;
    }
    *jittered = true;
    let mut a = gram.to_vec();
    for i in 0..k {
        a[i * k + i] += RIDGE_JITTER;
    }
    let mut x = rhs.to_vec();
    if cholesky_solve(&mut a, &mut x, k) {
        x
    } else {
        vec![0.0; k]
    }
}

fn subset_objective(data: &[CandidateData<'_>], gamma: &[f64], spec: &LossSpec) -> f64 {
    let mut total = 0.0;
    for d in data {
        let n = d.residuals.len();
        let k = gamma.len();
        let block = d.block.as_slice().expect("row-major block");
        let mut acc = 0.0;
        for i in 0..n {
            let w = d.weights.map_or(1.0, |w| w[i]);
            if w == 0.0 {
                continue;
            }
            let row = &block[i * k..(i + 1) * k];
            let mut fit = 0.0;
            for (phi, g) in row.iter().zip(gamma) {
                fit += phi * g;
            }
            acc += w * crate::loss::rho(d.residuals[i] - fit, spec);
        }
        total += acc;
    }
    total
}

/// Accumulate the IRLS normal equations at the current gamma. For least
/// squares the reweighting factor is constant, making the first solve exact.
fn build_system(
    data: &[CandidateData<'_>],
    gamma: &[f64],
    spec: &LossSpec,
    gram: &mut [f64],
    rhs: &mut [f64],
) {
    let k = gamma.len();
    gram.fill(0.0);
    rhs.fill(0.0);
    let c2 = spec.scale * spec.scale;
    for d in data {
        let n = d.residuals.len();
        let block = d.block.as_slice().expect("row-major block");
        for i in 0..n {
            let w = d.weights.map_or(1.0, |w| w[i]);
            if w == 0.0 {
                continue;
            }
            let row = &block[i * k..(i + 1) * k];
            let q = match spec.kind {
                LossKind::LeastSquares => 2.0,
                LossKind::Cauchy => {
                    let mut fit = 0.0;
                    for (phi, g) in row.iter().zip(gamma) {
                        fit += phi * g;
                    }
                    let e = d.residuals[i] - fit;
                    2.0 / (e * e + c2)
                }
            };
            let wq = w * q;
            let r = d.residuals[i];
            for a in 0..k {
                let wa = wq * row[a];
                rhs[a] += wa * r;
                for b in 0..=a {
                    gram[a * k + b] += wa * row[b];
                }
            }
        }
    }
    // mirror the lower triangle
    for a in 0..k {
        for b in a + 1..k {
            gram[a * k + b] = gram[b * k + a];
        }
    }
}

/// Minimize the subset loss `sum_{m in G} sum_i w_i rho(r_i - block_i gamma)`
/// over the shared increment gamma.
pub fn solve_increment(data: &[CandidateData<'_>], spec: &LossSpec) -> IncrementSolution {
    let k = data[0].block.ncols();
    let mut gamma = vec![0.0; k];
    let mut objective = subset_objective(data, &gamma, spec);
    let mut sweeps = vec![objective];
    let mut jittered = false;
    let mut gram = vec![0.0; k * k];
    let mut rhs = vec![0.0; k];

    for _ in 0..IRLS_MAX_SWEEPS {
        build_system(data, &gamma, spec, &mut gram, &mut rhs);
        let target = solve_system(&gram, &rhs, k, &mut jittered);
        let direction: Vec<f64> = target.iter().zip(&gamma).map(|(t, g)| t - g).collect();

        let mut step = 1.0;
        let mut trial = gamma.clone();
        let mut trial_obj;
        loop {
            for ((t, g), d) in trial.iter_mut().zip(&gamma).zip(&direction) {
                *t = g + step * d;
            }
            trial_obj = subset_objective(data, &trial, spec);
            if trial_obj <= objective {
                break;
            }
            step *= 0.5;
            if step < 1e-12 {
                trial.copy_from_slice(&gamma);
                trial_obj = objective;
                break;
            }
        }

        let delta = trial
            .iter()
            .zip(&gamma)
            .map(|(t, g)| (t - g).abs())
            .fold(0.0f64, f64::max);
        gamma = trial;
        objective = trial_obj;
        sweeps.push(objective);
        if delta < IRLS_TOL {
            break;
        }
        // full-step least squares is already at the exact minimizer
        if spec.kind == LossKind::LeastSquares && step == 1.0 {
            break;
        }
    }

    IncrementSolution {
        gamma,
        objective,
        sweep_objectives: sweeps,
        jittered,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::array;
    use rand::prelude::*;

    #[test]
    fn zero_residuals_give_zero_increment() {
        let block = array![[1.0, 0.0], [0.0, 1.0], [1.0, 1.0]];
        let r = array![0.0, 0.0, 0.0];
        let data = [CandidateData {
            block: &block,
            residuals: &r,
            weights: None,
        }];
        let sol = solve_increment(&data, &LossSpec::cauchy(1.0));
        assert!(sol.gamma.iter().all(|&g| g.abs() < 1e-12));
        assert_eq!(sol.objective, 0.0);
    }

    #[test]
    fn least_squares_scalar_matches_ols() {
        let block = array![[1.0], [2.0], [3.0]];
        let r = array![2.0, 3.0, 10.0];
        let data = [CandidateData {
            block: &block,
            residuals: &r,
            weights: None,
        }];
        let sol = solve_increment(&data, &LossSpec::least_squares());
        let expected = (1.0 * 2.0 + 2.0 * 3.0 + 3.0 * 10.0) / (1.0 + 4.0 + 9.0);
        assert_abs_diff_eq!(sol.gamma[0], expected, epsilon = 1e-12);
    }

    #[test]
    fn cauchy_scalar_matches_grid_search() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(42);
        let n = 40;
        let phi: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let mut resid: Vec<f64> = phi.iter().map(|&x| 0.8 * x).collect();
        for r in resid.iter_mut() {
            *r += rng.gen_range(-0.05..0.05);
        }
        resid[0] = 50.0; // gross outlier
        let block = Array2::from_shape_vec((n, 1), phi).unwrap();
        let r = Array1::from(resid);
        let spec = LossSpec::cauchy(1.0);
        let data = [CandidateData {
            block: &block,
            residuals: &r,
            weights: None,
        }];
        let sol = solve_increment(&data, &spec);

        // brute-force 1-D oracle
        let mut best_g = 0.0;
        let mut best_obj = f64::INFINITY;
        let mut g = -3.0;
        while g <= 3.0 {
            let obj = subset_objective(&data, &[g], &spec);
            if obj < best_obj {
                best_obj = obj;
                best_g = g;
            }
            g += 1e-4;
        }
        assert!(
            (sol.gamma[0] - best_g).abs() < 1e-3,
            "irls {} vs grid {}",
            sol.gamma[0],
            best_g
        );
    }

    #[test]
    fn sweeps_never_increase() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        for _ in 0..100 {
            let n = 25;
            let k = 3;
            let block = Array2::from_shape_fn((n, k), |_| rng.gen_range(-1.0..1.0));
            let r = Array1::from_iter((0..n).map(|_| rng.gen_range(-4.0..4.0)));
            let data = [CandidateData {
                block: &block,
                residuals: &r,
                weights: None,
            }];
            let sol = solve_increment(&data, &LossSpec::cauchy(1.0));
            for w in sol.sweep_objectives.windows(2) {
                assert!(w[1] <= w[0] + 1e-12, "sweep increased: {:?}", w);
            }
        }
    }

    #[test]
    fn singular_gram_falls_back_to_jitter() {
        // duplicate columns make the Gram exactly singular
        let block = array![[1.0, 1.0], [2.0, 2.0], [3.0, 3.0]];
        let r = array![1.0, 2.0, 3.0];
        let data = [CandidateData {
            block: &block,
            residuals: &r,
            weights: None,
        }];
        let sol = solve_increment(&data, &LossSpec::least_squares());
        assert!(sol.jittered);
        assert!(sol.gamma.iter().all(|g| g.is_finite()));
    }
}
