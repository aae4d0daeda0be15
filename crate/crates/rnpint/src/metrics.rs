//! Evaluation metrics: commonality-pair and variable-selection counts,
//! estimation error over training points, and prediction scores for
//! continuous and survival outcomes.

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::loss::SurvivalRecord;
use crate::methods::CombinedFit;
use crate::sim::TruthTable;
use ndarray::Array1;

/// Metric bundle for one fitted method on one replicate.
#[derive(Debug, Clone, Default)]
pub struct EvalReport {
    pub tp_ind: f64,
    pub fp_ind: f64,
    pub tp_var: f64,
    pub fp_var: f64,
    pub rmise: f64,
    pub mae: Option<f64>,
    pub cstat: Option<f64>,
    pub logrank: Option<f64>,
}

impl EvalReport {
    pub const COLUMNS: [&'static str; 8] = [
        "TP-ind", "FP-ind", "TP-var", "FP-var", "RMISE", "MAE", "Cstat", "logrank",
    ];

    pub fn values(&self) -> [Option<f64>; 8] {
        [
            Some(self.tp_ind),
            Some(self.fp_ind),
            Some(self.tp_var),
            Some(self.fp_var),
            Some(self.rmise),
            self.mae,
            self.cstat,
            self.logrank,
        ]
    }
}

/// Commonality identification counts over the signal-range covariates: for
/// each covariate and dataset pair, the estimate claims "same effect" when
/// both effects are zero or the effects are structurally shared. A claimed
/// pair is a true positive when the true components are identical
/// (both-zero pairs count as identical) and a false positive otherwise.
pub fn pair_metrics_with<F>(same: F, truth: &TruthTable) -> (f64, f64)
where
    F: Fn(usize, usize, usize) -> bool,
{
    let m = truth.n_datasets();
    let mut tp = 0usize;
    let mut fp = 0usize;
    for j in 0..truth.signal_range {
        for a in 0..m {
            for b in a + 1..m {
                if !same(j, a, b) {
                    continue;
                }
                if truth.component(a, j) == truth.component(b, j) {
                    tp += 1;
                } else {
                    fp += 1;
                }
            }
        }
    }
    (tp as f64, fp as f64)
}

pub fn pair_metrics(fit: &CombinedFit, truth: &TruthTable) -> (f64, f64) {
    pair_metrics_with(|j, a, b| fit.same_effect(j, a, b), truth)
}

/// The truth fed back as its own estimate; the oracle ceiling of `pair_metrics`.
pub fn truth_pair_metrics(truth: &TruthTable) -> (f64, f64) {
    pair_metrics_with(
        |j, a, b| truth.component(a, j) == truth.component(b, j),
        truth,
    )
}

/// Variable selection counts over all (dataset, covariate) cells.
pub fn var_metrics_with<F>(selected: F, truth: &TruthTable, p: usize) -> (f64, f64)
where
    F: Fn(usize, usize) -> bool,
{
    let m = truth.n_datasets();
    let mut tp = 0usize;
    let mut fp = 0usize;
    for md in 0..m {
        for j in 0..p {
            if !selected(md, j) {
                continue;
            }
            if truth.component(md, j).is_zero() {
                fp += 1;
            } else {
                tp += 1;
            }
        }
    }
    (tp as f64, fp as f64)
}

pub fn var_metrics(fit: &CombinedFit, truth: &TruthTable) -> (f64, f64) {
    var_metrics_with(|m, j| fit.is_selected(m, j), truth, fit.p())
}

/// Root mean integrated squared error of the estimated component functions
/// against the truth, evaluated at the training points. Both the estimate
/// and the truth are centered to mean zero over each dataset's points first,
/// which makes the measure invariant to the vertical shifts that per-dataset
/// basis centering leaves unidentified.
pub fn rmise(fit: &CombinedFit, truth: &TruthTable) -> f64 {
    let mut total = 0.0;
    for (m, d) in fit.datasets.iter().enumerate() {
        let n = d.n();
        let mut dataset_sum = 0.0;
        for j in 0..d.p() {
            let truth_fn = truth.component(m, j);
            let selected = fit.is_selected(m, j);
            if !selected && truth_fn.is_zero() {
                continue;
            }
            let xs = d.x.column(j).to_vec();
            let fhat = if selected {
                fit.component_values(m, j, &xs)
            } else {
                Array1::zeros(n)
            };
            let ftrue = Array1::from_iter(xs.iter().map(|&x| truth_fn.eval(x)));
            let fhat_mean = fhat.sum() / n as f64;
            let ftrue_mean = ftrue.sum() / n as f64;
            for i in 0..n {
                let diff = (fhat[i] - fhat_mean) - (ftrue[i] - ftrue_mean);
                dataset_sum += diff * diff;
            }
        }
        total += dataset_sum / n as f64;
    }
    total.sqrt()
}

/// Sum over datasets of per-dataset mean absolute prediction errors.
pub fn mae(predictions: &[Array1<f64>], actual: &[Array1<f64>]) -> Result<f64> {
    if predictions.len() != actual.len() {
        return Err(Error::LengthMismatch {
            what: "prediction datasets",
            got: predictions.len(),
            expected: actual.len(),
        });
    }
    let mut total = 0.0;
    for (p, y) in predictions.iter().zip(actual) {
        if p.len() != y.len() {
            return Err(Error::LengthMismatch {
                what: "predictions",
                got: p.len(),
                expected: y.len(),
            });
        }
        let sum: f64 = p.iter().zip(y.iter()).map(|(a, b)| (a - b).abs()).sum();
        total += sum / y.len() as f64;
    }
    Ok(total)
}

/// Censoring-adjusted concordance over all comparable within-dataset pairs:
/// (i, j) is comparable when subject i's event is observed before subject
/// j's time; the pair is concordant when i carries the higher risk score.
/// Ties in risk count one half. `None` when no pair is comparable.
pub fn cstat(risk: &[Array1<f64>], records: &[Vec<SurvivalRecord>]) -> Option<f64> {
    let mut concordant = 0.0;
    let mut comparable = 0.0;
    for (scores, recs) in risk.iter().zip(records) {
        let n = recs.len();
        for i in 0..n {
            if recs[i].delta != 1 {
                continue;
            }
            for j in 0..n {
                if recs[i].y >= recs[j].y {
                    continue;
                }
                comparable += 1.0;
                if scores[i] > scores[j] {
                    concordant += 1.0;
                } else if scores[i] == scores[j] {
                    concordant += 0.5;
                }
            }
        }
    }
    (comparable > 0.0).then(|| concordant / comparable)
}

/// Two-sample log-rank chi-square statistic after splitting subjects at the
/// median risk score.
pub fn logrank_split(risk: &Array1<f64>, records: &[SurvivalRecord]) -> Result<f64> {
    let n = records.len();
    if n != risk.len() {
        return Err(Error::LengthMismatch {
            what: "risk scores",
            got: risk.len(),
            expected: n,
        });
    }
    let mut sorted_scores: Vec<f64> = risk.to_vec();
    sorted_scores.sort_by(|a, b| a.partial_cmp(b).expect("finite scores"));
    let median = if n % 2 == 1 {
        sorted_scores[n / 2]
    } else {
        0.5 * (sorted_scores[n / 2 - 1] + sorted_scores[n / 2])
    };
    let high: Vec<bool> = risk.iter().map(|&s| s > median).collect();
    if high.iter().all(|&h| h) || high.iter().all(|&h| !h) {
        return Err(Error::EmptyRiskGroup);
    }

    // sweep event times ascending
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| records[a].y.partial_cmp(&records[b].y).expect("finite"));
    let mut observed_high = 0.0;
    let mut expected_high = 0.0;
    let mut variance = 0.0;
    let mut i = 0;
    let mut at_risk = n as f64;
    let mut at_risk_high = high.iter().filter(|&&h| h).count() as f64;
    while i < n {
        let t = records[order[i]].y;
        let mut events = 0.0;
        let mut events_high = 0.0;
        let mut leaving = 0.0;
        let mut leaving_high = 0.0;
        let mut k = i;
        while k < n && records[order[k]].y == t {
            let idx = order[k];
            if records[idx].delta == 1 {
                events += 1.0;
                if high[idx] {
                    events_high += 1.0;
                }
            }
            leaving += 1.0;
            if high[idx] {
                leaving_high += 1.0;
            }
            k += 1;
        }
        if events > 0.0 && at_risk > 1.0 {
            let frac = at_risk_high / at_risk;
            observed_high += events_high;
            expected_high += events * frac;
            variance += events * frac * (1.0 - frac) * (at_risk - events) / (at_risk - 1.0);
        }
        at_risk -= leaving;
        at_risk_high -= leaving_high;
        i = k;
    }
    if variance == 0.0 {
        return Ok(0.0);
    }
    let diff = observed_high - expected_high;
    Ok(diff * diff / variance)
}

/// Mean log-rank statistic across datasets.
pub fn logrank_mean(risk: &[Array1<f64>], records: &[Vec<SurvivalRecord>]) -> Result<f64> {
    let mut total = 0.0;
    for (scores, recs) in risk.iter().zip(records) {
        total += logrank_split(scores, recs)?;
    }
    Ok(total / risk.len() as f64)
}

/// Full evaluation of one fitted method: identification and selection counts
/// plus estimation error on training data, and prediction scores on test
/// data when provided. Survival risk scores are negated predicted log-times.
pub fn evaluate_fit(
    fit: &CombinedFit,
    truth: &TruthTable,
    test: Option<&[Dataset]>,
) -> Result<EvalReport> {
    let (tp_ind, fp_ind) = pair_metrics(fit, truth);
    let (tp_var, fp_var) = var_metrics(fit, truth);
    let rmise_val = rmise(fit, truth);
    let mut report = EvalReport {
        tp_ind,
        fp_ind,
        tp_var,
        fp_var,
        rmise: rmise_val,
        ..Default::default()
    };
    if let Some(test) = test {
        let xs: Vec<_> = test.iter().map(|d| d.x.clone()).collect();
        let preds = fit.predict(&xs);
        if test[0].is_survival() {
            let records: Vec<Vec<SurvivalRecord>> = test
                .iter()
                .map(|d| d.survival_records().expect("survival test data"))
                .collect();
            let risk: Vec<Array1<f64>> = preds.iter().map(|p| p.mapv(|v| -v)).collect();
            report.cstat = cstat(&risk, &records);
            report.logrank = logrank_mean(&risk, &records).ok();
        } else {
            let actual: Vec<Array1<f64>> = test.iter().map(|d| d.y.clone()).collect();
            report.mae = Some(mae(&preds, &actual)?);
        }
    }
    Ok(report)
}
