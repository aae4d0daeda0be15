//! Cross-validated grid search over the commonality penalty weight.

use crate::boost::FitConfig;
use crate::data::{Dataset, Metadata, Outcome};
use crate::error::{Error, Result};
use crate::methods::{fit_method, Method};
use crate::metrics::mae;
use ndarray::Array1;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use std::fmt::Write as _;
use std::path::Path;

#[derive(Debug, Clone)]
pub struct TuneSpec {
    pub lambda_grid: Vec<f64>,
    pub folds: usize,
    pub seed: u64,
}

impl Default for TuneSpec {
    /// Grid 2^-6, 2^-5, ..., 2^-1 with five folds.
    fn default() -> Self {
        Self {
            lambda_grid: (1..=6).rev().map(|e| 2f64.powi(-e)).collect(),
            folds: 5,
            seed: 0,
        }
    }
}

impl TuneSpec {
    pub fn validate(&self) -> Result<()> {
        if self.folds < 2 {
            return Err(Error::InvalidConfig("need at least 2 folds".into()));
        }
        if self.lambda_grid.is_empty() || self.lambda_grid.iter().any(|&l| l <= 0.0) {
            return Err(Error::InvalidConfig(
                "lambda grid must be nonempty and positive".into(),
            ));
        }
        Ok(())
    }
}

/// Fold assignment per row, independently within each dataset: indices are
/// shuffled by the seed and dealt round-robin, so fold sizes differ by at
/// most one.
pub fn cv_split(sizes: &[usize], folds: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    sizes
        .iter()
        .map(|&n| {
            if n < folds {
                return Err(Error::TooFewForFolds { n, folds });
            }
            let mut idx: Vec<usize> = (0..n).collect();
            idx.shuffle(&mut rng);
            let mut fold_of = vec![0usize; n];
            for (pos, &i) in idx.iter().enumerate() {
                fold_of[i] = pos % folds;
            }
            Ok(fold_of)
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct TuneResult {
    pub lambda_grid: Vec<f64>,
    /// fold_scores[lambda index][fold]
    pub fold_scores: Vec<Vec<f64>>,
    pub mean_scores: Vec<f64>,
    pub best_index: usize,
    pub best_lambda: f64,
}

/// Validation score of one fold: mean absolute prediction error for
/// continuous outcomes; for survival, the Kaplan–Meier weighted absolute
/// error of predicted log-times, which restricts the score to events.
fn fold_score(
    fit: &crate::methods::CombinedFit,
    validation: &[Dataset],
    outcome: Outcome,
) -> Result<f64> {
    let xs: Vec<_> = validation.iter().map(|d| d.x.clone()).collect();
    let preds = fit.predict(&xs);
    match outcome {
        Outcome::Continuous => {
            let actual: Vec<Array1<f64>> = validation.iter().map(|d| d.y.clone()).collect();
            mae(&preds, &actual)
        }
        Outcome::SurvivalAft => {
            let mut total = 0.0;
            for (m, d) in validation.iter().enumerate() {
                let w = d.km_weights()?.expect("survival validation data");
                for i in 0..d.n() {
                    total += w[i] * (preds[m][i] - d.y[i]).abs();
                }
            }
            Ok(total)
        }
    }
}

/// Grid search over lambda by k-fold cross-validation within each dataset.
/// Knots and centering are refit on the training folds only. Returns the
/// full curve; the winner is the grid value with the smallest mean score,
/// first occurrence on ties.
pub fn tune_lambda(
    method: Method,
    datasets: &[Dataset],
    base: &FitConfig,
    spec: &TuneSpec,
) -> Result<TuneResult> {
    spec.validate()?;
    let sizes: Vec<usize> = datasets.iter().map(|d| d.n()).collect();
    let fold_of = cv_split(&sizes, spec.folds, spec.seed)?;

    // materialize fold slices once
    let mut train_sets: Vec<Vec<Dataset>> = Vec::with_capacity(spec.folds);
    let mut val_sets: Vec<Vec<Dataset>> = Vec::with_capacity(spec.folds);
    for k in 0..spec.folds {
        let mut train = Vec::with_capacity(datasets.len());
        let mut val = Vec::with_capacity(datasets.len());
        for (m, d) in datasets.iter().enumerate() {
            let train_rows: Vec<usize> =
                (0..d.n()).filter(|&i| fold_of[m][i] != k).collect();
            let val_rows: Vec<usize> = (0..d.n()).filter(|&i| fold_of[m][i] == k).collect();
            train.push(d.subset(&train_rows));
            let mut v = d.subset(&val_rows);
            if v.is_survival() {
                v.sort_by_response();
            }
            val.push(v);
        }
        train_sets.push(train);
        val_sets.push(val);
    }

    let cells: Vec<(usize, usize)> = (0..spec.lambda_grid.len())
        .flat_map(|li| (0..spec.folds).map(move |k| (li, k)))
        .collect();
    let scores: Vec<((usize, usize), f64)> = cells
        .into_par_iter()
        .map(|(li, k)| {
            let mut cfg = base.clone();
            cfg.lambda = spec.lambda_grid[li];
            let fit = fit_method(method, train_sets[k].clone(), &cfg)?;
            let score = fold_score(&fit, &val_sets[k], base.outcome)?;
            Ok(((li, k), score))
        })
        .collect::<Result<_>>()?;

    let mut fold_scores = vec![vec![0.0; spec.folds]; spec.lambda_grid.len()];
    for ((li, k), s) in scores {
        fold_scores[li][k] = s;
    }
    let mean_scores: Vec<f64> = fold_scores
        .iter()
        .map(|fs| fs.iter().sum::<f64>() / fs.len() as f64)
        .collect();
    let mut best_index = 0;
    for (i, &s) in mean_scores.iter().enumerate() {
        if s < mean_scores[best_index] {
            best_index = i;
        }
    }
    Ok(TuneResult {
        lambda_grid: spec.lambda_grid.clone(),
        fold_scores,
        mean_scores,
        best_index,
        best_lambda: spec.lambda_grid[best_index],
    })
}

/// Per-fold curve export: rows (lambda, fold, score).
pub fn write_cv_folds_csv(path: &Path, result: &TuneResult, meta: &Metadata) -> Result<()> {
    let mut out = String::new();
    out.push_str(&meta.header_line());
    out.push_str("\nlambda,fold,score\n");
    for (li, lambda) in result.lambda_grid.iter().enumerate() {
        for (k, score) in result.fold_scores[li].iter().enumerate() {
            let _ = writeln!(out, "{lambda},{},{score}", k + 1);
        }
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// Mean curve export: rows (lambda, mean_score).
pub fn write_cv_curve_csv(path: &Path, result: &TuneResult, meta: &Metadata) -> Result<()> {
    let mut out = String::new();
    out.push_str(&meta.header_line());
    out.push_str("\nlambda,mean_score\n");
    for (lambda, mean) in result.lambda_grid.iter().zip(&result.mean_scores) {
        let _ = writeln!(out, "{lambda},{mean}");
    }
    std::fs::write(path, out)?;
    Ok(())
}
