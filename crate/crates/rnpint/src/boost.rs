//! Joint sparse boosting across datasets.
//!
//! Every iteration enumerates, for each covariate, all nonempty subsets of
//! each current coefficient group, solves the optimal shared increment per
//! subset, and scores the candidate with a penalized objective:
//! subset loss at the full increment, plus a per-dataset BIC complexity term,
//! plus a commonality penalty that charges dataset pairs with differing
//! coefficient vectors. The winning candidate is applied shrunk by the step
//! size. The returned state is the snapshot at the iteration minimizing the
//! stopping score, so the usual boosting overfit tail is cut off.
//!
//! Ties are broken deterministically everywhere: smallest covariate index,
//! then smallest subset bitmask, then earliest iteration. Fixed data and
//! configuration give a bit-identical result.

use crate::basis::{BasisConfig, BasisExpansion};
use crate::data::{validate_bundle, Dataset, Outcome};
use crate::error::{Error, Result};
use crate::loss::{dataset_loss, LossSpec};
use crate::solver::{solve_increment, CandidateData, IncrementSolution};
use crate::state::{enumerate_candidates, CoefficientState, IncrementProposal};
use ndarray::{Array1, Array2};
use rayon::prelude::*;
use std::fmt::Write as _;
use std::path::Path;

#[derive(Debug, Clone)]
pub struct FitConfig {
    pub loss: LossSpec,
    pub lambda: f64,
    /// Step size applied to each accepted increment.
    pub step_size: f64,
    /// Number of boosting iterations to record before picking the stop.
    pub max_iter: usize,
    pub basis: BasisConfig,
    pub outcome: Outcome,
    /// The stopping score places the commonality penalty inside the
    /// per-dataset sum (contributing M times) when true; outside when false.
    /// The candidate objective always adds it once.
    pub pen_inside_sum: bool,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            loss: LossSpec::default(),
            lambda: 0.25,
            step_size: 0.1,
            max_iter: 300,
            basis: BasisConfig::default(),
            outcome: Outcome::Continuous,
            pen_inside_sum: true,
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.step_size > 0.0 && self.step_size <= 1.0) {
            return Err(Error::InvalidConfig(format!(
                "step size must lie in (0, 1], got {}",
                self.step_size
            )));
        }
        if self.max_iter == 0 {
            return Err(Error::InvalidConfig("max_iter must be at least 1".into()));
        }
        if self.lambda < 0.0 {
            return Err(Error::InvalidConfig("lambda must be nonnegative".into()));
        }
        if self.loss.scale <= 0.0 {
            return Err(Error::InvalidConfig("loss scale must be positive".into()));
        }
        Ok(())
    }
}

/// Prepared inputs of one fit: responses, optional Kaplan–Meier weights, and
/// the centered design blocks per (dataset, covariate).
pub struct Problem {
    pub responses: Vec<Array1<f64>>,
    pub weights: Vec<Option<Array1<f64>>>,
    pub blocks: Vec<Vec<Array2<f64>>>,
    pub expansion: BasisExpansion,
    pub sizes: Vec<usize>,
    pub p: usize,
    pub outcome: Outcome,
    log_n_over_n: Vec<f64>,
}

impl Problem {
    pub fn build(datasets: &[Dataset], basis: &BasisConfig) -> Result<Self> {
        validate_bundle(datasets)?;
        let survival = datasets[0].is_survival();
        let mut weights = Vec::with_capacity(datasets.len());
        for d in datasets {
            if survival {
                if !d.is_sorted_by_response() {
                    return Err(Error::UnsortedSurvival);
                }
                weights.push(d.km_weights()?);
            } else {
                weights.push(None);
            }
        }
        let covs: Vec<Array2<f64>> = datasets.iter().map(|d| d.x.clone()).collect();
        let (expansion, blocks) =
            BasisExpansion::build(&covs, &datasets[0].covariate_names, basis)?;
        let sizes: Vec<usize> = datasets.iter().map(|d| d.n()).collect();
        let log_n_over_n = sizes.iter().map(|&n| (n as f64).ln() / n as f64).collect();
        Ok(Self {
            responses: datasets.iter().map(|d| d.y.clone()).collect(),
            weights,
            blocks,
            expansion,
            sizes,
            p: datasets[0].p(),
            outcome: if survival {
                Outcome::SurvivalAft
            } else {
                Outcome::Continuous
            },
            log_n_over_n,
        })
    }

    pub fn n_datasets(&self) -> usize {
        self.responses.len()
    }

    pub fn dim(&self) -> usize {
        self.expansion.dim()
    }
}

/// BIC complexity of one dataset with the given number of selected covariates.
pub fn bic_term(n: usize, n_selected: usize) -> f64 {
    (n as f64).ln() / n as f64 * n_selected as f64
}

/// Commonality penalty in [0, 1]: the normalized count of dataset pairs with
/// structurally different coefficient vectors. Zero for a single dataset.
pub fn commonality_penalty(state: &CoefficientState) -> f64 {
    penalty_from_pairs(
        state.count_equal_pairs(),
        state.n_datasets(),
        state.n_covariates(),
    )
}

fn penalty_from_pairs(equal_pairs: usize, n_datasets: usize, p: usize) -> f64 {
    if n_datasets < 2 {
        return 0.0;
    }
    let total = (n_datasets * (n_datasets - 1) / 2) * p;
    1.0 - equal_pairs as f64 / total as f64
}

/// Additive decomposition of the candidate objective and the stopping score.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoreParts {
    pub loss: f64,
    pub bic: f64,
    /// Raw commonality penalty value, before weighting by lambda.
    pub pen: f64,
}

/// One evaluated candidate, at the full (unshrunk) increment.
#[derive(Debug, Clone)]
pub struct Candidate {
    pub covariate: usize,
    pub subset_mask: u32,
    pub increment: Vec<f64>,
    /// Loss over the subset datasets at the full increment.
    pub subset_loss: f64,
    pub objective: f64,
    pub parts: ScoreParts,
    pub sweep_objectives: Vec<f64>,
}

/// Per-iteration record: stopping score of the post-update state plus the
/// chosen candidate.
#[derive(Debug, Clone)]
pub struct TraceRow {
    pub t: usize,
    pub score: f64,
    pub parts: ScoreParts,
    pub covariate: usize,
    pub subset_mask: u32,
    pub objective: f64,
}

#[derive(Debug, Clone)]
pub struct FitResult {
    /// Coefficients at the selected stopping iteration.
    pub state: CoefficientState,
    /// Selected iteration (1-based, first minimizer of the score).
    pub t_star: usize,
    pub trace: Vec<TraceRow>,
    /// Accepted increments in order; replaying the first `t_star` of them
    /// reproduces `state` bit for bit.
    pub increments: Vec<IncrementProposal>,
    /// Per-dataset strong-learner outputs at `t_star`.
    pub fitted: Vec<Array1<f64>>,
}

pub struct FitOutput {
    pub problem: Problem,
    pub result: FitResult,
}

/// The boosting engine, exposed step by step.
pub struct Booster<'a> {
    problem: &'a Problem,
    config: &'a FitConfig,
    state: CoefficientState,
    residuals: Vec<Array1<f64>>,
    current_loss: Vec<f64>,
    total_loss: f64,
    equal_pairs: usize,
    trace: Vec<TraceRow>,
    increments: Vec<IncrementProposal>,
}

impl<'a> Booster<'a> {
    pub fn new(problem: &'a Problem, config: &'a FitConfig) -> Result<Self> {
        config.validate()?;
        if problem.outcome != config.outcome {
            return Err(Error::InvalidConfig(format!(
                "config outcome {:?} does not match data ({:?})",
                config.outcome, problem.outcome
            )));
        }
        let state =
            CoefficientState::fresh(problem.n_datasets(), problem.p, problem.dim())?;
        let mut current_loss = Vec::with_capacity(problem.n_datasets());
        for m in 0..problem.n_datasets() {
            current_loss.push(dataset_loss(
                &problem.responses[m],
                problem.weights[m].as_ref(),
                &config.loss,
            )?);
        }
        let total_loss = current_loss.iter().sum();
        let equal_pairs = state.count_equal_pairs();
        Ok(Self {
            problem,
            config,
            state,
            residuals: problem.responses.clone(),
            current_loss,
            total_loss,
            equal_pairs,
            trace: Vec::new(),
            increments: Vec::new(),
        })
    }

    pub fn state(&self) -> &CoefficientState {
        &self.state
    }

    pub fn residuals(&self) -> &[Array1<f64>] {
        &self.residuals
    }

    pub fn trace(&self) -> &[TraceRow] {
        &self.trace
    }

    /// Commonality penalty of the state after hypothetically relabeling the
    /// subset. Splitting happens iff the subset is proper within its group.
    fn hypothetical_pen(&self, j: usize, mask: u32) -> f64 {
        let m = self.problem.n_datasets();
        if m < 2 {
            return 0.0;
        }
        let row = self.state.labels_row(j);
        let old_row_pairs = CoefficientState::equal_pairs_in_row(row);
        let first = mask.trailing_zeros() as usize;
        let group_mask = self.state.group_mask_of(j, first);
        let new_row_pairs = if mask == group_mask {
            old_row_pairs
        } else {
            let mut relabeled: Vec<u32> = row.to_vec();
            for (i, lab) in relabeled.iter_mut().enumerate() {
                if mask >> i & 1 == 1 {
                    *lab = u32::MAX; // fresh shared label
                }
            }
            CoefficientState::equal_pairs_in_row(&relabeled)
        };
        let pairs = self.equal_pairs - old_row_pairs + new_row_pairs;
        penalty_from_pairs(pairs, m, self.problem.p)
    }

    /// Solve the increment for one (covariate, subset) candidate and score it.
    pub fn evaluate_candidate(&self, j: usize, mask: u32) -> Candidate {
        let members: Vec<usize> = (0..self.problem.n_datasets())
            .filter(|m| mask >> m & 1 == 1)
            .collect();
        let data: Vec<CandidateData<'_>> = members
            .iter()
            .map(|&m| CandidateData {
                block: &self.problem.blocks[m][j],
                residuals: &self.residuals[m],
                weights: self.problem.weights[m].as_ref(),
            })
            .collect();
        let IncrementSolution {
            gamma,
            objective: subset_loss,
            sweep_objectives,
            ..
        } = solve_increment(&data, &self.config.loss);
        let (objective, parts) = self.score_candidate(j, mask, &members, &gamma, subset_loss);
        Candidate {
            covariate: j,
            subset_mask: mask,
            increment: gamma,
            subset_loss,
            objective,
            parts,
            sweep_objectives,
        }
    }

    /// Decomposed objective of a candidate at a given (full) increment.
    pub fn objective_at(&self, j: usize, mask: u32, increment: &[f64]) -> (f64, ScoreParts) {
        let members: Vec<usize> = (0..self.problem.n_datasets())
            .filter(|m| mask >> m & 1 == 1)
            .collect();
        let mut subset_loss = 0.0;
        for &m in &members {
            let block = &self.problem.blocks[m][j];
            let r = &self.residuals[m];
            let shifted: Array1<f64> = Array1::from_iter((0..r.len()).map(|i| {
                let mut fit = 0.0;
                for (q, g) in increment.iter().enumerate() {
                    fit += block[[i, q]] * g;
                }
                r[i] - fit
            }));
            subset_loss += dataset_loss(
                &shifted,
                self.problem.weights[m].as_ref(),
                &self.config.loss,
            )
            .expect("aligned");
        }
        self.score_candidate(j, mask, &members, increment, subset_loss)
    }

    fn score_candidate(
        &self,
        j: usize,
        mask: u32,
        members: &[usize],
        increment: &[f64],
        subset_loss: f64,
    ) -> (f64, ScoreParts) {
        let mut loss = self.total_loss + subset_loss;
        for &m in members {
            loss -= self.current_loss[m];
        }
        let nonzero = increment.iter().any(|&g| g != 0.0);
        let mut bic = 0.0;
        for m in 0..self.problem.n_datasets() {
            let mut count = self.state.support_count(m);
            if mask >> m & 1 == 1 && nonzero && !self.state.is_selected(m, j) {
                count += 1;
            }
            bic += self.problem.log_n_over_n[m] * count as f64;
        }
        let pen = self.hypothetical_pen(j, mask);
        let objective = loss + bic + self.config.lambda * pen;
        (objective, ScoreParts { loss, bic, pen })
    }

    /// Best candidate for one covariate over all admissible subsets.
    pub fn best_for_covariate(&self, j: usize) -> Candidate {
        let partition = self.state.partition_of(j);
        let masks = enumerate_candidates(&partition);
        let mut best: Option<Candidate> = None;
        for mask in masks {
            let cand = self.evaluate_candidate(j, mask);
            match &best {
                Some(b) if cand.objective >= b.objective => {}
                _ => best = Some(cand),
            }
        }
        best.expect("at least one subset per covariate")
    }

    /// One boosting iteration: global candidate search, update, score.
    pub fn step(&mut self) -> Result<&TraceRow> {
        let p = self.problem.p;
        let candidates: Vec<Candidate> = if p >= 8 {
            (0..p)
                .into_par_iter()
                .map(|j| self.best_for_covariate(j))
                .collect()
        } else {
            (0..p).map(|j| self.best_for_covariate(j)).collect()
        };
        let mut chosen = &candidates[0];
        for cand in &candidates[1..] {
            if cand.objective < chosen.objective {
                chosen = cand;
            }
        }
        let chosen = chosen.clone();

        let proposal = IncrementProposal {
            covariate: chosen.covariate,
            subset_mask: chosen.subset_mask,
            increment: chosen.increment.clone(),
            objective: chosen.objective,
        };
        self.apply(&proposal)?;

        let parts = self.stopping_parts();
        let score = self.assemble_score(&parts);
        self.trace.push(TraceRow {
            t: self.trace.len() + 1,
            score,
            parts,
            covariate: chosen.covariate,
            subset_mask: chosen.subset_mask,
            objective: chosen.objective,
        });
        self.increments.push(proposal);
        Ok(self.trace.last().expect("just pushed"))
    }

    fn apply(&mut self, proposal: &IncrementProposal) -> Result<()> {
        let v = self.config.step_size;
        self.state.apply_increment(proposal, v)?;
        let j = proposal.covariate;
        for m in 0..self.problem.n_datasets() {
            if proposal.subset_mask >> m & 1 == 0 {
                continue;
            }
            let block = &self.problem.blocks[m][j];
            let k = block.ncols();
            let slice = block.as_slice().expect("row-major block");
            let r = &mut self.residuals[m];
            for i in 0..r.len() {
                let row = &slice[i * k..(i + 1) * k];
                let mut fit = 0.0;
                for (phi, g) in row.iter().zip(&proposal.increment) {
                    fit += phi * g;
                }
                r[i] -= v * fit;
            }
            self.current_loss[m] = dataset_loss(
                &self.residuals[m],
                self.problem.weights[m].as_ref(),
                &self.config.loss,
            )?;
        }
        self.total_loss = self.current_loss.iter().sum();
        self.equal_pairs = self.state.count_equal_pairs();

        #[cfg(debug_assertions)]
        self.audit_residuals();
        Ok(())
    }

    /// Decomposition of the stopping score at the current (v-scaled) state.
    pub fn stopping_parts(&self) -> ScoreParts {
        let mut bic = 0.0;
        for m in 0..self.problem.n_datasets() {
            bic += self.problem.log_n_over_n[m] * self.state.support_count(m) as f64;
        }
        ScoreParts {
            loss: self.total_loss,
            bic,
            pen: penalty_from_pairs(
                self.equal_pairs,
                self.problem.n_datasets(),
                self.problem.p,
            ),
        }
    }

    fn assemble_score(&self, parts: &ScoreParts) -> f64 {
        let multiplier = if self.config.pen_inside_sum {
            self.problem.n_datasets() as f64
        } else {
            1.0
        };
        parts.loss + parts.bic + self.config.lambda * parts.pen * multiplier
    }

    /// Incrementally maintained residuals must match a from-scratch pass.
    #[cfg(debug_assertions)]
    fn audit_residuals(&self) {
        let fitted = fitted_values(self.problem, &self.state);
        for m in 0..self.problem.n_datasets() {
            for i in 0..self.residuals[m].len() {
                let fresh = self.problem.responses[m][i] - fitted[m][i];
                debug_assert!(
                    (fresh - self.residuals[m][i]).abs() < 1e-8,
                    "residual drift in dataset {m} row {i}"
                );
            }
        }
    }
}

/// Strong-learner outputs of a state over the training design blocks.
pub fn fitted_values(problem: &Problem, state: &CoefficientState) -> Vec<Array1<f64>> {
    (0..problem.n_datasets())
        .map(|m| {
            let n = problem.sizes[m];
            let mut acc = Array1::zeros(n);
            for j in 0..problem.p {
                if !state.is_selected(m, j) {
                    continue;
                }
                let block = &problem.blocks[m][j];
                let coef = state.coef(m, j);
                let slice = block.as_slice().expect("row-major block");
                let k = block.ncols();
                for i in 0..n {
                    let row = &slice[i * k..(i + 1) * k];
                    let mut fit = 0.0;
                    for (phi, b) in row.iter().zip(coef) {
                        fit += phi * b;
                    }
                    acc[i] += fit;
                }
            }
            acc
        })
        .collect()
}

/// Run the configured number of iterations and return the snapshot at the
/// first minimizer of the stopping score.
pub fn fit_problem(problem: Problem, config: &FitConfig) -> Result<FitOutput> {
    let mut booster = Booster::new(&problem, config)?;
    for _ in 0..config.max_iter {
        booster.step()?;
    }
    let Booster {
        trace, increments, ..
    } = booster;

    let mut t_star = 1;
    let mut best = f64::INFINITY;
    for row in &trace {
        if row.score < best {
            best = row.score;
            t_star = row.t;
        }
    }

    // replay the accepted increments up to the stop; shared updates make the
    // replayed state bit-identical to the in-run snapshot
    let mut state = CoefficientState::fresh(problem.n_datasets(), problem.p, problem.dim())?;
    for proposal in increments.iter().take(t_star) {
        state.apply_increment(proposal, config.step_size)?;
    }
    let fitted = fitted_values(&problem, &state);
    Ok(FitOutput {
        problem,
        result: FitResult {
            state,
            t_star,
            trace,
            increments,
            fitted,
        },
    })
}

/// Build the shared-basis problem from raw datasets and fit it.
pub fn fit(datasets: &[Dataset], config: &FitConfig) -> Result<FitOutput> {
    let problem = Problem::build(datasets, &config.basis)?;
    fit_problem(problem, config)
}

/// Predictions for new covariate matrices using the training knots and
/// training column means, on the response (log-time for survival) scale.
pub fn predict(
    state: &CoefficientState,
    expansion: &BasisExpansion,
    new_x: &[Array2<f64>],
) -> Vec<Array1<f64>> {
    new_x
        .iter()
        .enumerate()
        .map(|(m, x)| {
            let n = x.nrows();
            let mut acc = Array1::zeros(n);
            for j in 0..state.n_covariates() {
                if !state.is_selected(m, j) {
                    continue;
                }
                let col = x.column(j).to_vec();
                let block = expansion.expand_new(m, j, &col);
                let coef = state.coef(m, j);
                for i in 0..n {
                    let mut fit = 0.0;
                    for (q, b) in coef.iter().enumerate() {
                        fit += block[[i, q]] * b;
                    }
                    acc[i] += fit;
                }
            }
            acc
        })
        .collect()
}

/// Trace export: one row per iteration.
pub fn write_trace_csv(
    path: &Path,
    result: &FitResult,
    meta: &crate::data::Metadata,
) -> Result<()> {
    let mut out = String::new();
    out.push_str(&meta.header_line());
    out.push('\n');
    out.push_str("t,S,j_hat,subset_bitmask,objective_F\n");
    for row in &result.trace {
        let _ = writeln!(
            out,
            "{},{},{},{},{}",
            row.t,
            row.score,
            row.covariate + 1,
            row.subset_mask,
            row.objective
        );
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// Coefficient export: one row per (covariate, dataset, basis index).
pub fn write_coefficients_csv(
    path: &Path,
    state: &CoefficientState,
    covariate_names: &[String],
    dataset_ids: &[String],
    meta: &crate::data::Metadata,
) -> Result<()> {
    let mut out = String::new();
    out.push_str(&meta.header_line());
    out.push('\n');
    out.push_str("covariate,dataset,group_label,k,value\n");
    for j in 0..state.n_covariates() {
        for m in 0..state.n_datasets() {
            for (k, &value) in state.coef(m, j).iter().enumerate() {
                let _ = writeln!(
                    out,
                    "{},{},{},{},{}",
                    covariate_names[j],
                    dataset_ids[m],
                    state.label(j, m),
                    k + 1,
                    value
                );
            }
        }
    }
    std::fs::write(path, out)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::prelude::*;

    fn toy_datasets(seed: u64, n: usize, p: usize, common: bool) -> Vec<Dataset> {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        (0..3)
            .map(|m| {
                let x = Array2::from_shape_fn((n, p), |_| rng.gen_range(-2.0..2.0));
                let strength = if common { 2.0 } else { 2.0 + m as f64 };
                let y = Array1::from_iter(
                    (0..n).map(|i| strength * x[[i, 0]] + 0.1 * rng.gen_range(-1.0..1.0)),
                );
                Dataset {
                    id: format!("d{}", m + 1),
                    y,
                    delta: None,
                    x,
                    covariate_names: (0..p).map(|j| format!("x{}", j + 1)).collect(),
                }
            })
            .collect()
    }

    fn small_config(lambda: f64, max_iter: usize) -> FitConfig {
        FitConfig {
            lambda,
            max_iter,
            ..FitConfig::default()
        }
    }

    #[test]
    fn penalty_boundary_cases() {
        let state = CoefficientState::fresh(3, 4, 2).unwrap();
        assert_eq!(commonality_penalty(&state), 0.0);
        // split every covariate into three singletons
        let mut state = CoefficientState::fresh(3, 2, 1).unwrap();
        for j in 0..2 {
            for m in 0..3 {
                state
                    .apply_increment(
                        &IncrementProposal {
                            covariate: j,
                            subset_mask: 1 << m,
                            increment: vec![1.0 + m as f64],
                            objective: 0.0,
                        },
                        0.1,
                    )
                    .unwrap();
            }
        }
        assert_eq!(commonality_penalty(&state), 1.0);
    }

    #[test]
    fn penalty_single_equal_pair() {
        // M=3, p=2: split covariate 0 fully, leave covariate 1 with one
        // merged pair by splitting off only dataset 0
        let mut state = CoefficientState::fresh(3, 2, 1).unwrap();
        for m in 0..3 {
            state
                .apply_increment(
                    &IncrementProposal {
                        covariate: 0,
                        subset_mask: 1 << m,
                        increment: vec![1.0],
                        objective: 0.0,
                    },
                    0.1,
                )
                .unwrap();
        }
        state
            .apply_increment(
                &IncrementProposal {
                    covariate: 1,
                    subset_mask: 0b001,
                    increment: vec![1.0],
                    objective: 0.0,
                },
                0.1,
            )
            .unwrap();
        assert_abs_diff_eq!(commonality_penalty(&state), 5.0 / 6.0, epsilon = 1e-14);
    }

    #[test]
    fn bic_term_examples() {
        assert_eq!(bic_term(100, 0), 0.0);
        assert_abs_diff_eq!(bic_term(100, 3), 3.0 * 100f64.ln() / 100.0, epsilon = 1e-14);
    }

    #[test]
    fn null_objective_is_null_loss() {
        let ds = toy_datasets(1, 40, 3, true);
        let config = small_config(0.0, 5);
        let problem = Problem::build(&ds, &config.basis).unwrap();
        let booster = Booster::new(&problem, &config).unwrap();
        let (f, parts) = booster.objective_at(0, 0b111, &vec![0.0; problem.dim()]);
        let null: f64 = (0..3)
            .map(|m| dataset_loss(&problem.responses[m], None, &config.loss).unwrap())
            .sum();
        assert_abs_diff_eq!(f, null, epsilon = 1e-10);
        assert_abs_diff_eq!(parts.loss, null, epsilon = 1e-10);
        assert_eq!(parts.pen, 0.0);
    }

    #[test]
    fn objective_decomposition_is_additive() {
        let ds = toy_datasets(2, 40, 4, true);
        let config = small_config(0.7, 5);
        let problem = Problem::build(&ds, &config.basis).unwrap();
        let booster = Booster::new(&problem, &config).unwrap();
        let cand = booster.evaluate_candidate(1, 0b011);
        let expected = cand.parts.loss + cand.parts.bic + config.lambda * cand.parts.pen;
        assert_abs_diff_eq!(cand.objective, expected, epsilon = 1e-12);
        // independent recomputation of the same decomposition
        let (f2, parts2) = booster.objective_at(1, 0b011, &cand.increment);
        assert_abs_diff_eq!(cand.objective, f2, epsilon = 1e-9);
        assert_abs_diff_eq!(cand.parts.loss, parts2.loss, epsilon = 1e-9);
        assert_eq!(cand.parts.pen, parts2.pen);
    }

    #[test]
    fn huge_lambda_prefers_full_group() {
        let ds = toy_datasets(3, 50, 3, false);
        let config = FitConfig {
            lambda: 1e6,
            ..small_config(1e6, 5)
        };
        let problem = Problem::build(&ds, &config.basis).unwrap();
        let booster = Booster::new(&problem, &config).unwrap();
        for j in 0..3 {
            let full = booster.evaluate_candidate(j, 0b111);
            for mask in [0b001u32, 0b010, 0b100, 0b011, 0b101, 0b110] {
                let sub = booster.evaluate_candidate(j, mask);
                assert!(
                    sub.objective > full.objective,
                    "proper subset {mask:#b} beat the full group for covariate {j}"
                );
            }
        }
    }

    #[test]
    fn strong_signal_selects_first_covariate_full_group() {
        let ds = toy_datasets(4, 60, 4, true);
        let config = small_config(0.25, 3);
        let out = fit(&ds, &config).unwrap();
        let row = &out.result.trace[0];
        assert_eq!(row.covariate, 0);
        assert_eq!(row.subset_mask, 0b111);
        // exhaustive rescan: the recorded winner is the global argmin
        let problem = Problem::build(&ds, &config.basis).unwrap();
        let booster = Booster::new(&problem, &config).unwrap();
        let mut best = f64::INFINITY;
        let mut arg = (0usize, 0u32);
        for j in 0..4 {
            for mask in enumerate_candidates(&booster.state().partition_of(j)) {
                let c = booster.evaluate_candidate(j, mask);
                if c.objective < best {
                    best = c.objective;
                    arg = (j, mask);
                }
            }
        }
        assert_eq!(arg, (row.covariate, row.subset_mask));
        assert_abs_diff_eq!(best, row.objective, epsilon = 1e-12);
    }

    #[test]
    fn duplicate_covariates_tie_break_to_smaller_index() {
        let mut ds = toy_datasets(5, 50, 3, true);
        // make covariate 1 a bit-exact duplicate of covariate 0
        for d in ds.iter_mut() {
            for i in 0..d.n() {
                d.x[[i, 1]] = d.x[[i, 0]];
            }
        }
        let config = small_config(0.25, 1);
        let out = fit(&ds, &config).unwrap();
        assert_eq!(out.result.trace[0].covariate, 0);
    }

    #[test]
    fn one_iteration_fit() {
        let ds = toy_datasets(6, 30, 3, true);
        let config = small_config(0.25, 1);
        let out = fit(&ds, &config).unwrap();
        assert_eq!(out.result.t_star, 1);
        assert_eq!(out.result.trace.len(), 1);
    }

    #[test]
    fn stopping_score_minimum_is_t_star() {
        let ds = toy_datasets(7, 60, 5, true);
        let config = small_config(0.25, 40);
        let out = fit(&ds, &config).unwrap();
        let best = out.result.trace[out.result.t_star - 1].score;
        for row in &out.result.trace {
            assert!(best <= row.score + 1e-12);
        }
        // monotone prefix on a near-noiseless strong signal
        assert!(out.result.trace[1].score < out.result.trace[0].score);
    }

    #[test]
    fn stopping_score_null_state_equals_null_loss() {
        let ds = toy_datasets(8, 30, 3, true);
        let config = small_config(0.0, 2);
        let problem = Problem::build(&ds, &config.basis).unwrap();
        let booster = Booster::new(&problem, &config).unwrap();
        let parts = booster.stopping_parts();
        let null: f64 = (0..3)
            .map(|m| dataset_loss(&problem.responses[m], None, &config.loss).unwrap())
            .sum();
        assert_abs_diff_eq!(parts.loss, null, epsilon = 1e-12);
        assert_eq!(parts.bic, 0.0);
        assert_eq!(parts.pen, 0.0);
    }

    #[test]
    fn pen_placement_flag_scales_contribution() {
        let ds = toy_datasets(9, 40, 3, false);
        let mut config = small_config(0.5, 6);
        config.pen_inside_sum = true;
        let inside = fit(&ds, &config).unwrap();
        config.pen_inside_sum = false;
        let outside = fit(&ds, &config).unwrap();
        for (a, b) in inside.result.trace.iter().zip(&outside.result.trace) {
            // same chosen updates (the flag only affects S), score differs by
            // (M-1) * lambda * pen
            assert_eq!(a.covariate, b.covariate);
            assert_eq!(a.subset_mask, b.subset_mask);
            let gap = a.score - b.score;
            assert_abs_diff_eq!(gap, 2.0 * 0.5 * a.parts.pen, epsilon = 1e-10);
        }
    }

    #[test]
    fn fit_is_deterministic() {
        let ds = toy_datasets(10, 50, 6, true);
        let config = small_config(0.25, 25);
        let a = fit(&ds, &config).unwrap();
        let b = fit(&ds, &config).unwrap();
        assert_eq!(a.result.t_star, b.result.t_star);
        for m in 0..3 {
            for j in 0..6 {
                let x: Vec<u64> = a.result.state.coef(m, j).iter().map(|v| v.to_bits()).collect();
                let y: Vec<u64> = b.result.state.coef(m, j).iter().map(|v| v.to_bits()).collect();
                assert_eq!(x, y);
            }
        }
    }

    #[test]
    fn predictions_match_fitted_on_training_data() {
        let ds = toy_datasets(11, 40, 4, true);
        let config = small_config(0.25, 20);
        let out = fit(&ds, &config).unwrap();
        let xs: Vec<Array2<f64>> = ds.iter().map(|d| d.x.clone()).collect();
        let preds = predict(&out.result.state, &out.problem.expansion, &xs);
        for m in 0..3 {
            for i in 0..ds[m].n() {
                assert_abs_diff_eq!(preds[m][i], out.result.fitted[m][i], epsilon = 1e-9);
            }
        }
    }

    #[test]
    fn zero_state_predicts_zero() {
        let ds = toy_datasets(12, 20, 3, true);
        let problem = Problem::build(&ds, &BasisConfig::default()).unwrap();
        let state = CoefficientState::fresh(3, 3, problem.dim()).unwrap();
        let xs: Vec<Array2<f64>> = ds.iter().map(|d| d.x.clone()).collect();
        let preds = predict(&state, &problem.expansion, &xs);
        assert!(preds.iter().all(|p| p.iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn prediction_invariant_to_summation_order() {
        let ds = toy_datasets(13, 40, 5, true);
        let config = small_config(0.25, 30);
        let out = fit(&ds, &config).unwrap();
        let xs: Vec<Array2<f64>> = ds.iter().map(|d| d.x.clone()).collect();
        let preds = predict(&out.result.state, &out.problem.expansion, &xs);
        // reverse-order summation oracle
        for m in 0..3 {
            let state = &out.result.state;
            for i in 0..ds[m].n() {
                let mut acc = 0.0;
                for j in (0..5).rev() {
                    if !state.is_selected(m, j) {
                        continue;
                    }
                    let col = ds[m].x.column(j).to_vec();
                    let block = out.problem.expansion.expand_new(m, j, &col);
                    let coef = state.coef(m, j);
                    let mut fit = 0.0;
                    for (q, b) in coef.iter().enumerate() {
                        fit += block[[i, q]] * b;
                    }
                    acc += fit;
                }
                assert!((acc - preds[m][i]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn inconsistent_covariates_rejected() {
        let mut ds = toy_datasets(14, 20, 3, true);
        ds[1].covariate_names[0] = "other".into();
        assert!(matches!(
            fit(&ds, &small_config(0.1, 2)),
            Err(Error::MismatchedCovariates(_))
        ));
    }
}
