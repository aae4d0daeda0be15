//! The six method variants, all running on the one boosting engine:
//! joint integrative fits (robust/nonrobust x spline/parametric), a
//! per-dataset meta fit, and a pooled fit over the stacked rows.

use crate::basis::BasisConfig;
use crate::boost::{fit, FitConfig, FitOutput, FitResult};
use crate::data::{Dataset, Outcome};
use crate::error::{Error, Result};
use crate::loss::{LossKind, LossSpec};
use ndarray::{Array1, Array2};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Method {
    RnpInt,
    NrnpInt,
    RpInt,
    NrpInt,
    RnpMeta,
    RnpPool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Integration {
    Joint,
    PerDataset,
    Pooled,
}

impl Method {
    pub const ALL: [Method; 6] = [
        Method::RnpInt,
        Method::NrnpInt,
        Method::RpInt,
        Method::NrpInt,
        Method::RnpMeta,
        Method::RnpPool,
    ];

    /// Display name as used in result tables.
    pub fn label(&self) -> &'static str {
        match self {
            Method::RnpInt => "RNP-Int",
            Method::NrnpInt => "NRNP-Int",
            Method::RpInt => "RP-Int",
            Method::NrpInt => "NRP-Int",
            Method::RnpMeta => "RNP-Meta",
            Method::RnpPool => "RNP-Pool",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        let norm = s.to_ascii_lowercase().replace('-', "_");
        Ok(match norm.as_str() {
            "rnp_int" => Method::RnpInt,
            "nrnp_int" => Method::NrnpInt,
            "rp_int" => Method::RpInt,
            "nrp_int" => Method::NrpInt,
            "rnp_meta" => Method::RnpMeta,
            "rnp_pool" => Method::RnpPool,
            other => {
                return Err(Error::InvalidConfig(format!(
                    "unknown method {other:?}"
                )))
            }
        })
    }

    pub fn loss_kind(&self) -> LossKind {
        match self {
            Method::NrnpInt | Method::NrpInt => LossKind::LeastSquares,
            _ => LossKind::Cauchy,
        }
    }

    pub fn is_parametric(&self) -> bool {
        matches!(self, Method::RpInt | Method::NrpInt)
    }

    pub fn integration(&self) -> Integration {
        match self {
            Method::RnpMeta => Integration::PerDataset,
            Method::RnpPool => Integration::Pooled,
            _ => Integration::Joint,
        }
    }

    /// Derive the engine configuration for this method from a base config.
    /// Meta and pool fits have no commonality penalty, so lambda is dropped.
    pub fn configure(&self, base: &FitConfig) -> FitConfig {
        let mut cfg = base.clone();
        cfg.loss = match self.loss_kind() {
            LossKind::Cauchy => LossSpec::cauchy(base.loss.scale),
            LossKind::LeastSquares => LossSpec::least_squares(),
        };
        if self.is_parametric() {
            cfg.basis = BasisConfig::parametric();
        }
        if self.integration() != Integration::Joint {
            cfg.lambda = 0.0;
        }
        cfg
    }
}

enum FitKind {
    Joint(FitOutput),
    Meta(Vec<FitOutput>),
    Pool(FitOutput),
}

/// A fitted method with a uniform view over its per-dataset effects,
/// regardless of how the underlying engine was invoked.
pub struct CombinedFit {
    pub method: Method,
    pub outcome: Outcome,
    pub config: FitConfig,
    /// Prepared training data (sorted by log-time for survival outcomes).
    pub datasets: Vec<Dataset>,
    kind: FitKind,
}

/// Fit one method. Survival datasets are sorted ascending by observed
/// log-time before weighting; the prepared datasets are kept on the result
/// so downstream consumers see the aligned row order.
pub fn fit_method(
    method: Method,
    mut datasets: Vec<Dataset>,
    base: &FitConfig,
) -> Result<CombinedFit> {
    for d in datasets.iter_mut() {
        if d.is_survival() {
            d.sort_by_response();
        }
    }
    let config = method.configure(base);
    let kind = match method.integration() {
        Integration::Joint => FitKind::Joint(fit(&datasets, &config)?),
        Integration::PerDataset => {
            let outputs = datasets
                .iter()
                .map(|d| fit(std::slice::from_ref(d), &config))
                .collect::<Result<Vec<_>>>()?;
            FitKind::Meta(outputs)
        }
        Integration::Pooled => {
            let mut pooled = stack_datasets(&datasets)?;
            if pooled.is_survival() {
                pooled.sort_by_response();
            }
            FitKind::Pool(fit(std::slice::from_ref(&pooled), &config)?)
        }
    };
    Ok(CombinedFit {
        method,
        outcome: config.outcome,
        config,
        datasets,
        kind,
    })
}

fn stack_datasets(datasets: &[Dataset]) -> Result<Dataset> {
    let first = datasets.first().ok_or(Error::NoDatasets)?;
    let p = first.p();
    let total: usize = datasets.iter().map(|d| d.n()).sum();
    let mut y = Vec::with_capacity(total);
    let mut delta = first.is_survival().then(Vec::new);
    let mut x = Array2::zeros((total, p));
    let mut row = 0;
    for d in datasets {
        for i in 0..d.n() {
            y.push(d.y[i]);
            if let (Some(all), Some(dd)) = (delta.as_mut(), d.delta.as_ref()) {
                all.push(dd[i]);
            }
            for j in 0..p {
                x[[row, j]] = d.x[[i, j]];
            }
            row += 1;
        }
    }
    Ok(Dataset {
        id: "pooled".into(),
        y: Array1::from(y),
        delta,
        x,
        covariate_names: first.covariate_names.clone(),
    })
}

impl CombinedFit {
    pub fn n_datasets(&self) -> usize {
        self.datasets.len()
    }

    pub fn p(&self) -> usize {
        self.datasets[0].p()
    }

    pub fn is_selected(&self, m: usize, j: usize) -> bool {
        match &self.kind {
            FitKind::Joint(out) => out.result.state.is_selected(m, j),
            FitKind::Meta(outs) => outs[m].result.state.is_selected(0, j),
            FitKind::Pool(out) => out.result.state.is_selected(0, j),
        }
    }

    /// Group label of covariate j in dataset m. Meta fits place every dataset
    /// in its own label namespace, so no cross-dataset commonality can ever
    /// be reported; pool fits share one label by construction.
    pub fn effect_label(&self, j: usize, m: usize) -> u32 {
        match &self.kind {
            FitKind::Joint(out) => out.result.state.label(j, m),
            FitKind::Meta(_) => m as u32,
            FitKind::Pool(_) => 0,
        }
    }

    pub fn coef(&self, m: usize, j: usize) -> &[f64] {
        match &self.kind {
            FitKind::Joint(out) => out.result.state.coef(m, j),
            FitKind::Meta(outs) => outs[m].result.state.coef(0, j),
            FitKind::Pool(out) => out.result.state.coef(0, j),
        }
    }

    /// Estimated-same relation for one covariate and pair of datasets:
    /// both effects zero, or structurally shared nonzero effects.
    pub fn same_effect(&self, j: usize, m1: usize, m2: usize) -> bool {
        let s1 = self.is_selected(m1, j);
        let s2 = self.is_selected(m2, j);
        if !s1 && !s2 {
            return true;
        }
        if s1 != s2 {
            return false;
        }
        self.effect_label(j, m1) == self.effect_label(j, m2)
    }

    pub fn fit_results(&self) -> Vec<&FitResult> {
        match &self.kind {
            FitKind::Joint(out) | FitKind::Pool(out) => vec![&out.result],
            FitKind::Meta(outs) => outs.iter().map(|o| &o.result).collect(),
        }
    }

    /// Estimated component function of covariate j in dataset m at arbitrary
    /// points, evaluated with training knots and training centering.
    pub fn component_values(&self, m: usize, j: usize, xs: &[f64]) -> Array1<f64> {
        let (out, em) = match &self.kind {
            FitKind::Joint(out) => (out, m),
            FitKind::Meta(outs) => (&outs[m], 0),
            FitKind::Pool(out) => (out, 0),
        };
        let coef = self.coef(m, j);
        let block = out.problem.expansion.expand_new(em, j, xs);
        let mut vals = Array1::zeros(xs.len());
        for i in 0..xs.len() {
            let mut fit = 0.0;
            for (q, b) in coef.iter().enumerate() {
                fit += block[[i, q]] * b;
            }
            vals[i] = fit;
        }
        vals
    }

    /// Predictions on new covariate matrices (one per dataset), on the
    /// response scale (log-time for survival).
    pub fn predict(&self, new_x: &[Array2<f64>]) -> Vec<Array1<f64>> {
        new_x
            .iter()
            .enumerate()
            .map(|(m, x)| {
                let n = x.nrows();
                let mut acc = Array1::zeros(n);
                for j in 0..self.p() {
                    if !self.is_selected(m, j) {
                        continue;
                    }
                    let col = x.column(j).to_vec();
                    let vals = self.component_values(m, j, &col);
                    acc += &vals;
                }
                acc
            })
            .collect()
    }

    /// Fitted values on the (prepared) training data.
    pub fn fitted(&self) -> Vec<Array1<f64>> {
        let xs: Vec<Array2<f64>> = self.datasets.iter().map(|d| d.x.clone()).collect();
        self.predict(&xs)
    }

    /// Pooled covariate range from the fit's basis (for function grids).
    pub fn covariate_range(&self, j: usize) -> (f64, f64) {
        match &self.kind {
            FitKind::Joint(out) | FitKind::Pool(out) => out.problem.expansion.range(j),
            FitKind::Meta(outs) => {
                let mut lo = f64::INFINITY;
                let mut hi = f64::NEG_INFINITY;
                for o in outs {
                    let (a, b) = o.problem.expansion.range(j);
                    lo = lo.min(a);
                    hi = hi.max(b);
                }
                (lo, hi)
            }
        }
    }
}
