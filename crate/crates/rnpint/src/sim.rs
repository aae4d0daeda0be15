//! Synthetic data generation: four heterogeneity/commonality scenarios over
//! three datasets, three error regimes, continuous or right-censored AFT
//! outcomes with a calibrated censoring rate.

use crate::data::{Dataset, Metadata, Outcome};
use crate::error::{Error, Result};
use ndarray::{Array1, Array2};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Cauchy, StandardNormal};
use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;
use std::sync::Mutex;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ErrorKind {
    Normal,
    /// 70% N(0,1), 30% Cauchy(0,1), chosen per observation.
    Mix7030,
    Cauchy,
}

impl ErrorKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            ErrorKind::Normal => "normal",
            ErrorKind::Mix7030 => "mix7030",
            ErrorKind::Cauchy => "cauchy",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "normal" => Ok(ErrorKind::Normal),
            "mix7030" | "mix" => Ok(ErrorKind::Mix7030),
            "cauchy" => Ok(ErrorKind::Cauchy),
            other => Err(Error::InvalidConfig(format!(
                "unknown error regime {other:?}"
            ))),
        }
    }
}

/// One additive component in closed form.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Component {
    Zero,
    /// a * x
    Linear(f64),
    /// a * (x^2 - 1)
    Quadratic(f64),
    /// a * sin(x)
    Sine(f64),
    /// a * (6 / (1 + e^{-2x}) - 3)
    Sigmoid(f64),
    /// a * (3 e^{-x^2/4} - sqrt(6))
    Bump(f64),
}

impl Component {
    pub fn eval(&self, x: f64) -> f64 {
        match *self {
            Component::Zero => 0.0,
            Component::Linear(a) => a * x,
            Component::Quadratic(a) => a * (x * x - 1.0),
            Component::Sine(a) => a * x.sin(),
            Component::Sigmoid(a) => a * (6.0 / (1.0 + (-2.0 * x).exp()) - 3.0),
            Component::Bump(a) => a * (3.0 * (-x * x / 4.0).exp() - 6f64.sqrt()),
        }
    }

    pub fn is_zero(&self) -> bool {
        matches!(self, Component::Zero)
    }

    pub fn tag(&self) -> (&'static str, f64) {
        match *self {
            Component::Zero => ("zero", 0.0),
            Component::Linear(a) => ("linear", a),
            Component::Quadratic(a) => ("quadratic", a),
            Component::Sine(a) => ("sine", a),
            Component::Sigmoid(a) => ("sigmoid", a),
            Component::Bump(a) => ("bump", a),
        }
    }

    pub fn from_tag(kind: &str, coef: f64) -> Result<Self> {
        Ok(match kind {
            "zero" => Component::Zero,
            "linear" => Component::Linear(coef),
            "quadratic" => Component::Quadratic(coef),
            "sine" => Component::Sine(coef),
            "sigmoid" => Component::Sigmoid(coef),
            "bump" => Component::Bump(coef),
            other => {
                return Err(Error::InvalidConfig(format!(
                    "unknown component kind {other:?}"
                )))
            }
        })
    }
}

/// True component functions per (dataset, covariate); all-zero beyond the
/// signal range.
#[derive(Debug, Clone, PartialEq)]
pub struct TruthTable {
    pub components: Vec<Vec<Component>>,
    /// Number of leading covariates counted by the pair metrics (6 or 9).
    pub signal_range: usize,
}

impl TruthTable {
    pub fn component(&self, m: usize, j: usize) -> Component {
        self.components
            .get(m)
            .and_then(|row| row.get(j))
            .copied()
            .unwrap_or(Component::Zero)
    }

    pub fn n_datasets(&self) -> usize {
        self.components.len()
    }

    pub fn linear_predictor(&self, m: usize, row: &[f64]) -> f64 {
        self.components[m]
            .iter()
            .zip(row)
            .map(|(c, &x)| c.eval(x))
            .sum()
    }

    /// Dataset pairs with identical components (including both-zero pairs)
    /// among the signal-range covariates.
    pub fn equal_pairs(&self) -> usize {
        let m = self.n_datasets();
        let mut count = 0;
        for j in 0..self.signal_range {
            for a in 0..m {
                for b in a + 1..m {
                    if self.component(a, j) == self.component(b, j) {
                        count += 1;
                    }
                }
            }
        }
        count
    }
}

/// Exact transcription of the four scenario component lists. The duplicated
/// covariate-3 label in the third dataset of scenarios 1 and 3 is read as
/// belonging to dataset 3.
pub fn truth(scenario: u8, p: usize) -> Result<TruthTable> {
    use Component::*;
    let rows: (Vec<(usize, Component)>, Vec<(usize, Component)>, Vec<(usize, Component)>, usize) =
        match scenario {
            1 => (
                vec![(0, Linear(1.0)), (2, Sine(3.0)), (3, Sigmoid(1.0)), (5, Linear(2.0))],
                vec![(0, Linear(1.0)), (1, Quadratic(1.0)), (4, Bump(1.0))],
                vec![
                    (0, Linear(1.0)),
                    (1, Quadratic(1.0)),
                    (2, Sine(3.0)),
                    (4, Bump(1.0)),
                    (5, Linear(-2.0)),
                ],
                6,
            ),
            2 => {
                let shared = vec![
                    (0, Linear(1.0)),
                    (1, Quadratic(1.0)),
                    (2, Sine(2.0)),
                    (3, Sigmoid(1.0)),
                    (4, Bump(1.0)),
                    (5, Linear(2.0)),
                ];
                (shared.clone(), shared.clone(), shared, 6)
            }
            3 => (
                vec![
                    (0, Linear(1.0)),
                    (1, Quadratic(1.0)),
                    (2, Sine(2.0)),
                    (3, Sigmoid(1.0)),
                    (4, Bump(1.0)),
                    (5, Linear(2.0)),
                ],
                vec![
                    (1, Quadratic(2.0)),
                    (2, Sine(4.0)),
                    (4, Bump(-1.0)),
                    (5, Linear(4.0)),
                ],
                vec![
                    (0, Linear(2.0)),
                    (2, Sine(-1.0)),
                    (3, Sigmoid(-1.0)),
                    (5, Linear(-2.0)),
                ],
                6,
            ),
            4 => (
                vec![
                    (0, Linear(1.0)),
                    (2, Linear(1.0)),
                    (3, Linear(1.0)),
                    (4, Linear(2.0)),
                    (5, Linear(2.0)),
                    (8, Linear(1.5)),
                ],
                vec![
                    (0, Linear(1.0)),
                    (1, Linear(1.0)),
                    (3, Linear(1.0)),
                    (6, Linear(-1.0)),
                    (7, Linear(2.0)),
                    (8, Linear(-1.5)),
                ],
                vec![
                    (0, Linear(1.0)),
                    (1, Linear(1.0)),
                    (2, Linear(1.0)),
                    (5, Linear(-2.0)),
                    (6, Linear(2.0)),
                    (8, Linear(3.0)),
                ],
                9,
            ),
            other => {
                return Err(Error::InvalidConfig(format!(
                    "scenario must be 1..=4, got {other}"
                )))
            }
        };
    let (r1, r2, r3, signal_range) = rows;
    if p < signal_range {
        return Err(Error::InvalidConfig(format!(
            "p = {p} is smaller than the scenario's signal range {signal_range}"
        )));
    }
    let mut components = vec![vec![Component::Zero; p]; 3];
    for (m, row) in [r1, r2, r3].into_iter().enumerate() {
        for (j, c) in row {
            components[m][j] = c;
        }
    }
    Ok(TruthTable {
        components,
        signal_range,
    })
}

#[derive(Debug, Clone)]
pub struct ScenarioSpec {
    pub scenario: u8,
    pub sizes: Vec<usize>,
    pub p: usize,
    pub rho: f64,
    pub error: ErrorKind,
    pub outcome: Outcome,
    pub target_censoring: f64,
    pub seed: u64,
}

impl Default for ScenarioSpec {
    fn default() -> Self {
        Self {
            scenario: 1,
            sizes: vec![100, 100, 100],
            p: 200,
            rho: 0.5,
            error: ErrorKind::Normal,
            outcome: Outcome::Continuous,
            target_censoring: 0.20,
            seed: 1,
        }
    }
}

impl ScenarioSpec {
    pub fn validate(&self) -> Result<()> {
        truth(self.scenario, self.p)?;
        if self.sizes.len() != 3 {
            return Err(Error::InvalidConfig(
                "scenarios define exactly 3 datasets".into(),
            ));
        }
        if self.sizes.iter().any(|&n| n < 2) {
            return Err(Error::InvalidConfig("dataset sizes must be >= 2".into()));
        }
        if !(0.0..1.0).contains(&self.rho) {
            return Err(Error::InvalidConfig("rho must lie in [0, 1)".into()));
        }
        if !(0.0..1.0).contains(&self.target_censoring) {
            return Err(Error::InvalidConfig(
                "target censoring must lie in (0, 1)".into(),
            ));
        }
        Ok(())
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        let mut s = self.clone();
        s.seed = seed;
        s
    }

    pub fn metadata(&self) -> Metadata {
        let mut meta = Metadata::new();
        meta.push("scenario", self.scenario);
        meta.push("error", self.error.as_str());
        meta.push("outcome", self.outcome.as_str());
        meta.push("n", self.sizes.iter().map(|n| n.to_string()).collect::<Vec<_>>().join("/"));
        meta.push("p", self.p);
        meta.push("rho", self.rho);
        meta.push("seed", self.seed);
        meta
    }
}

/// Rows i.i.d. from a zero-mean, unit-variance AR(1) Gaussian with
/// correlation `rho^|j-k|`, via the recursion
/// `x_j = rho x_{j-1} + sqrt(1 - rho^2) z_j`.
pub fn gen_covariates(n: usize, p: usize, rho: f64, rng: &mut ChaCha8Rng) -> Array2<f64> {
    let innov = (1.0 - rho * rho).sqrt();
    let mut x = Array2::zeros((n, p));
    for i in 0..n {
        let mut prev: f64 = rng.sample(StandardNormal);
        x[[i, 0]] = prev;
        for j in 1..p {
            let z: f64 = rng.sample(StandardNormal);
            prev = rho * prev + innov * z;
            x[[i, j]] = prev;
        }
    }
    x
}

fn draw_error(kind: ErrorKind, rng: &mut ChaCha8Rng) -> f64 {
    match kind {
        ErrorKind::Normal => rng.sample(StandardNormal),
        ErrorKind::Cauchy => rng.sample(Cauchy::new(0.0, 1.0).expect("valid scale")),
        ErrorKind::Mix7030 => {
            let pick_cauchy = rng.gen::<f64>() < 0.3;
            if pick_cauchy {
                rng.sample(Cauchy::new(0.0, 1.0).expect("valid scale"))
            } else {
                rng.sample(StandardNormal)
            }
        }
    }
}

static CENSORING_CACHE: Mutex<Option<HashMap<(u8, ErrorKind), f64>>> = Mutex::new(None);

const CALIBRATION_BATCH: usize = 50_000;
const CALIBRATION_WINDOW: (f64, f64) = (0.18, 0.22);

/// Empirical censoring rate at upper bound `u`, from a fresh Monte Carlo
/// batch allocated across datasets proportionally to their sizes. Works on
/// the log scale so heavy-tailed survival times never overflow.
fn censoring_rate(
    spec: &ScenarioSpec,
    truth: &TruthTable,
    u: f64,
    rng: &mut ChaCha8Rng,
) -> f64 {
    let total: usize = spec.sizes.iter().sum();
    let log_u = u.ln();
    let mut censored = 0usize;
    let mut drawn = 0usize;
    for (m, &nm) in spec.sizes.iter().enumerate() {
        let share = (CALIBRATION_BATCH * nm + total - 1) / total;
        for _ in 0..share {
            let mut prev: f64 = rng.sample(StandardNormal);
            let mut lin = truth.component(m, 0).eval(prev);
            let innov = (1.0 - spec.rho * spec.rho).sqrt();
            for j in 1..truth.signal_range {
                let z: f64 = rng.sample(StandardNormal);
                prev = spec.rho * prev + innov * z;
                lin += truth.component(m, j).eval(prev);
            }
            let log_t = lin + draw_error(spec.error, rng);
            let log_c = log_u + rng.gen::<f64>().ln();
            if log_t > log_c {
                censored += 1;
            }
            drawn += 1;
        }
    }
    censored as f64 / drawn as f64
}

/// Upper bound of the uniform censoring distribution giving an overall
/// censoring rate inside the calibration window. Deterministic (fixed
/// calibration seed per scenario/error pair) and cached.
pub fn calibrate_censoring(spec: &ScenarioSpec) -> Result<f64> {
    let key = (spec.scenario, spec.error);
    {
        let cache = CENSORING_CACHE.lock().expect("cache lock");
        if let Some(map) = cache.as_ref() {
            if let Some(&u) = map.get(&key) {
                return Ok(u);
            }
        }
    }
    let tbl = truth(spec.scenario, spec.signal_p())?;
    let calib_seed = 0xCA11B8u64
        .wrapping_mul(31)
        .wrapping_add(spec.scenario as u64 * 7 + spec.error.as_str().len() as u64);
    let mut rng = ChaCha8Rng::seed_from_u64(calib_seed ^ (spec.scenario as u64) << 8);
    let (lo_target, hi_target) = CALIBRATION_WINDOW;

    // bracket: grow u until the rate falls below the window's midpoint
    let mut lo = 1e-6;
    let mut hi = 1.0;
    let mut steps = 0;
    loop {
        let rate = censoring_rate(spec, &tbl, hi, &mut rng);
        if rate < spec.target_censoring {
            break;
        }
        lo = hi;
        hi *= 4.0;
        steps += 1;
        if steps >= 60 {
            return Err(Error::CensoringCalibration(
                "failed to bracket the target rate".into(),
            ));
        }
    }
    // geometric bisection on u
    for _ in 0..60 {
        let mid = (lo * hi).sqrt();
        let rate = censoring_rate(spec, &tbl, mid, &mut rng);
        if rate >= lo_target && rate <= hi_target {
            let mut cache = CENSORING_CACHE.lock().expect("cache lock");
            cache.get_or_insert_with(HashMap::new).insert(key, mid);
            return Ok(mid);
        }
        if rate > spec.target_censoring {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Err(Error::CensoringCalibration(format!(
        "no u within the window after 60 bisection steps (scenario {}, {})",
        spec.scenario,
        spec.error.as_str()
    )))
}

impl ScenarioSpec {
    // calibration only touches signal-range covariates
    fn signal_p(&self) -> usize {
        if self.scenario == 4 {
            9
        } else {
            6
        }
    }
}

/// Generate the scenario's datasets plus the truth table. Survival datasets
/// come out sorted ascending by observed log-time.
pub fn generate(spec: &ScenarioSpec) -> Result<(Vec<Dataset>, TruthTable)> {
    spec.validate()?;
    let tbl = truth(spec.scenario, spec.p)?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let log_u = match spec.outcome {
        Outcome::SurvivalAft => Some(calibrate_censoring(spec)?.ln()),
        Outcome::Continuous => None,
    };
    let names: Vec<String> = (0..spec.p).map(|j| format!("x{}", j + 1)).collect();
    let mut datasets = Vec::with_capacity(3);
    for (m, &n) in spec.sizes.iter().enumerate() {
        let x = gen_covariates(n, spec.p, spec.rho, &mut rng);
        let mut y = Array1::zeros(n);
        let mut delta = Vec::new();
        for i in 0..n {
            let row = x.row(i);
            let lin = tbl.linear_predictor(m, row.as_slice().expect("contiguous"));
            let eps = draw_error(spec.error, &mut rng);
            match log_u {
                None => y[i] = lin + eps,
                Some(log_u) => {
                    let log_t = lin + eps;
                    let log_c = log_u + rng.gen::<f64>().ln();
                    y[i] = log_t.min(log_c);
                    delta.push(u8::from(log_t <= log_c));
                }
            }
        }
        let mut d = Dataset {
            id: format!("dataset_{}", m + 1),
            y,
            delta: log_u.map(|_| delta),
            x,
            covariate_names: names.clone(),
        };
        if d.is_survival() {
            d.sort_by_response();
        }
        datasets.push(d);
    }
    Ok((datasets, tbl))
}

/// Truth sidecar export: rows (dataset, covariate, kind, coef).
pub fn write_truth_csv(path: &Path, truth: &TruthTable, meta: &Metadata) -> Result<()> {
    let mut out = String::new();
    out.push_str(&meta.header_line());
    out.push('\n');
    out.push_str("dataset,covariate,kind,coef\n");
    let _ = writeln!(out, "signal_range,0,range,{}", truth.signal_range);
    for (m, row) in truth.components.iter().enumerate() {
        for (j, c) in row.iter().enumerate() {
            if c.is_zero() {
                continue;
            }
            let (kind, coef) = c.tag();
            let _ = writeln!(out, "{},{},{},{}", m + 1, j + 1, kind, coef);
        }
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// Load a truth sidecar written by `write_truth_csv`.
pub fn load_truth_csv(path: &Path, n_datasets: usize, p: usize) -> Result<TruthTable> {
    let mut reader = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .has_headers(true)
        .from_path(path)?;
    let mut components = vec![vec![Component::Zero; p]; n_datasets];
    let mut signal_range = 6;
    for (idx, record) in reader.records().enumerate() {
        let record = record?;
        let row_no = idx + 2;
        let fail = |msg: String| Error::ParseRow {
            file: path.display().to_string(),
            row: row_no,
            message: msg,
        };
        if &record[0] == "signal_range" {
            signal_range = record[3]
                .parse()
                .map_err(|_| fail("bad signal range".into()))?;
            continue;
        }
        let m: usize = record[0].parse().map_err(|_| fail("bad dataset".into()))?;
        let j: usize = record[1].parse().map_err(|_| fail("bad covariate".into()))?;
        let coef: f64 = record[3].parse().map_err(|_| fail("bad coef".into()))?;
        if m == 0 || m > n_datasets || j == 0 || j > p {
            return Err(fail(format!("index ({m},{j}) out of range")));
        }
        components[m - 1][j - 1] = Component::from_tag(&record[2], coef)?;
    }
    Ok(TruthTable {
        components,
        signal_range,
    })
}
