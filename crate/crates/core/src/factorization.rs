//! Joint factorization `X^k ≈ W·H^k` with a shared non-negative,
//! row-normalized `W` and sparse per-block `H^k`.
//!
//! The fit alternates two families of lasso problems:
//!
//! * `W`: every sample row is an independent non-negative lasso whose design
//!   is the horizontal concatenation of the `H^k` (transposed) and whose
//!   response is the concatenated sample profile.
//! * `H^k`: the vectorized problem has design `I_J ⊗ W`, which is block
//!   diagonal, so every variable column is an independent lasso sharing the
//!   design `W` and one block-level penalty.
//!
//! Penalties use the `1/(2m)` scaling of [`crate::lasso`], with `m = n·J_k`
//! for the `H^k` problem and `m = ΣJ_k` for a row of `W`. The reported
//! objective is the unscaled sum of squared errors plus the penalties
//! converted back to that scale (see [`penalized_objective`]).

use ndarray::{concatenate, Array1, Array2, ArrayView2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::clustering::{ward_cluster, Partition};
use crate::error::{Error, Result};
use crate::evaluation::adjusted_rand_index;
use crate::initialization::{initialize, InitSpec, Initial};
use crate::lasso::{
    cv_select_lambda_stacked, CvOptions, SolverOptions, StackedProblem, DEFAULT_FOLDS,
    DEFAULT_N_LAMBDA, DEFAULT_RATIO,
};

/// Row sums below this are treated as an all-zero row.
pub const ZERO_ROW_EPS: f64 = 1e-12;
/// Columns sampled when cross-validating a block penalty.
pub const DEFAULT_CV_COLUMNS: usize = 200;

#[derive(Clone, Debug, PartialEq)]
pub struct MultiBlockDataset {
    blocks: Vec<Array2<f64>>,
    sample_ids: Vec<String>,
    variable_ids: Vec<Vec<String>>,
    block_names: Vec<String>,
}

impl MultiBlockDataset {
    pub fn new(
        blocks: Vec<Array2<f64>>,
        sample_ids: Vec<String>,
        variable_ids: Vec<Vec<String>>,
        block_names: Vec<String>,
    ) -> Result<Self> {
        if blocks.is_empty() {
            return Err(Error::input("dataset needs at least one block"));
        }
        let n = sample_ids.len();
        if n == 0 {
            return Err(Error::input("dataset has no samples"));
        }
        if variable_ids.len() != blocks.len() || block_names.len() != blocks.len() {
            return Err(Error::input("block metadata does not match the block count"));
        }
        for (k, b) in blocks.iter().enumerate() {
            if b.nrows() != n {
                return Err(Error::input(format!(
                    "block '{}' has {} rows, expected {}",
                    block_names[k],
                    b.nrows(),
                    n
                )));
            }
            if b.ncols() == 0 || b.ncols() != variable_ids[k].len() {
                return Err(Error::input(format!(
                    "block '{}' variable ids do not match its columns",
                    block_names[k]
                )));
            }
            if b.iter().any(|v| !v.is_finite()) {
                return Err(Error::input(format!(
                    "block '{}' contains non-finite values",
                    block_names[k]
                )));
            }
        }
        Ok(MultiBlockDataset {
            blocks,
            sample_ids,
            variable_ids,
            block_names,
        })
    }

    /// Dataset with generated ids (`s1..`, `block1..`, `block1_v1..`).
    pub fn from_blocks(blocks: Vec<Array2<f64>>) -> Result<Self> {
        let n = blocks.first().map(|b| b.nrows()).unwrap_or(0);
        let names: Vec<String> = (1..=blocks.len()).map(|k| format!("block{k}")).collect();
        let vars = blocks
            .iter()
            .zip(&names)
            .map(|(b, name)| (1..=b.ncols()).map(|j| format!("{name}_v{j}")).collect())
            .collect();
        Self::new(blocks, (1..=n).map(|i| format!("s{i}")).collect(), vars, names)
    }

    pub fn blocks(&self) -> &[Array2<f64>] {
        &self.blocks
    }

    pub fn block(&self, k: usize) -> &Array2<f64> {
        &self.blocks[k]
    }

    pub fn sample_ids(&self) -> &[String] {
        &self.sample_ids
    }

    pub fn variable_ids(&self) -> &[Vec<String>] {
        &self.variable_ids
    }

    pub fn block_names(&self) -> &[String] {
        &self.block_names
    }

    pub fn n_samples(&self) -> usize {
        self.sample_ids.len()
    }

    pub fn n_blocks(&self) -> usize {
        self.blocks.len()
    }

    pub fn total_variables(&self) -> usize {
        self.blocks.iter().map(|b| b.ncols()).sum()
    }

    /// Keep the listed sample rows, in the given order.
    pub fn subset_samples(&self, idx: &[usize]) -> Result<Self> {
        if idx.iter().any(|&i| i >= self.n_samples()) {
            return Err(Error::input("sample index out of range"));
        }
        Self::new(
            self.blocks.iter().map(|b| b.select(Axis(0), idx)).collect(),
            idx.iter().map(|&i| self.sample_ids[i].clone()).collect(),
            self.variable_ids.clone(),
            self.block_names.clone(),
        )
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PenaltyMode {
    AutoCv,
    Fixed,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PenaltyConfig {
    pub mode: PenaltyMode,
    /// One penalty per block (`H^k` problems).
    pub lambda: Vec<f64>,
    /// One penalty per sample (`W` rows).
    pub mu: Vec<f64>,
    pub cv_folds: usize,
    pub seed: u64,
    /// Tune once on the first outer iteration and keep the values.
    #[serde(default)]
    pub freeze_after_first: bool,
    #[serde(default = "default_n_lambda")]
    pub n_lambda: usize,
    #[serde(default = "default_ratio")]
    pub ratio: f64,
    #[serde(default = "default_cv_columns")]
    pub cv_columns: usize,
}

fn default_n_lambda() -> usize {
    DEFAULT_N_LAMBDA
}
fn default_ratio() -> f64 {
    DEFAULT_RATIO
}
fn default_cv_columns() -> usize {
    DEFAULT_CV_COLUMNS
}

impl PenaltyConfig {
    pub fn auto(seed: u64) -> Self {
        PenaltyConfig {
            mode: PenaltyMode::AutoCv,
            lambda: Vec::new(),
            mu: Vec::new(),
            cv_folds: DEFAULT_FOLDS,
            seed,
            freeze_after_first: false,
            n_lambda: DEFAULT_N_LAMBDA,
            ratio: DEFAULT_RATIO,
            cv_columns: DEFAULT_CV_COLUMNS,
        }
    }

    pub fn fixed(lambda: Vec<f64>, mu: Vec<f64>) -> Self {
        PenaltyConfig {
            mode: PenaltyMode::Fixed,
            lambda,
            mu,
            ..Self::auto(0)
        }
    }

    /// Fixed penalties with the same value for every block and sample.
    pub fn uniform(data: &MultiBlockDataset, lambda: f64, mu: f64) -> Self {
        Self::fixed(vec![lambda; data.n_blocks()], vec![mu; data.n_samples()])
    }

    pub fn validate(&self, data: &MultiBlockDataset) -> Result<()> {
        match self.mode {
            PenaltyMode::Fixed => {
                if self.lambda.len() != data.n_blocks() {
                    return Err(Error::input(format!(
                        "fixed penalties need {} lambda values, got {}",
                        data.n_blocks(),
                        self.lambda.len()
                    )));
                }
                if self.mu.len() != data.n_samples() {
                    return Err(Error::input(format!(
                        "fixed penalties need {} mu values, got {}",
                        data.n_samples(),
                        self.mu.len()
                    )));
                }
                if self
                    .lambda
                    .iter()
                    .chain(&self.mu)
                    .any(|v| !(*v >= 0.0) || !v.is_finite())
                {
                    return Err(Error::input("penalties must be finite and non-negative"));
                }
            }
            PenaltyMode::AutoCv => {
                if self.cv_folds < 2 {
                    return Err(Error::input("cross-validation needs at least 2 folds"));
                }
                if self.n_lambda < 2 || !(self.ratio > 0.0 && self.ratio < 1.0) {
                    return Err(Error::input("invalid lambda path settings"));
                }
                if self.cv_columns == 0 {
                    return Err(Error::input("cv_columns must be positive"));
                }
            }
        }
        Ok(())
    }

    /// Penalties for a dataset restricted to the listed samples.
    pub fn subset_samples(&self, idx: &[usize]) -> Self {
        let mut out = self.clone();
        if self.mode == PenaltyMode::Fixed {
            out.mu = idx.iter().map(|&i| self.mu[i]).collect();
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitOptions {
    pub max_iter: usize,
    pub ari_stop_threshold: f64,
    pub stable_rounds: usize,
    pub inner: SolverOptions,
    pub init: InitSpec,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            max_iter: 50,
            ari_stop_threshold: 1.0,
            stable_rounds: 2,
            inner: SolverOptions::default(),
            init: InitSpec::default(),
        }
    }
}

impl FitOptions {
    pub fn validate(&self) -> Result<()> {
        if self.max_iter == 0 {
            return Err(Error::input("max_iter must be at least 1"));
        }
        if self.stable_rounds == 0 {
            return Err(Error::input("stable_rounds must be at least 1"));
        }
        if !(self.ari_stop_threshold > 0.0 && self.ari_stop_threshold <= 1.0) {
            return Err(Error::input("ari_stop_threshold must lie in (0, 1]"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub objective: f64,
    pub block_mse: Vec<f64>,
    /// ARI between this iteration's clustering of `W` and the previous one.
    pub ari_previous: Option<f64>,
    pub lambda: Vec<f64>,
    /// Samples whose `W` row was all zero before normalization.
    pub zero_rows: Vec<usize>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    /// Samples whose last `W` row was replaced by the uniform vector.
    pub zero_rows: Vec<usize>,
    /// Components (columns of `W`) that are entirely zero.
    pub empty_components: Vec<usize>,
    pub warnings: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FactorModel {
    pub w: Array2<f64>,
    pub h: Vec<Array2<f64>>,
    pub p: usize,
    /// Penalties in effect at the last iteration; in auto mode the `lambda`
    /// and `mu` fields hold the last cross-validated values.
    pub penalties: PenaltyConfig,
    pub history: Vec<IterationRecord>,
    pub converged: bool,
    pub iterations: usize,
    pub seed: u64,
    pub sample_ids: Vec<String>,
    pub block_names: Vec<String>,
    pub variable_ids: Vec<Vec<String>>,
    pub diagnostics: Diagnostics,
}

impl FactorModel {
    pub fn reconstruct(&self, k: usize) -> Array2<f64> {
        self.w.dot(&self.h[k])
    }

    /// Ward clustering of the rows of `W` cut into `P` groups.
    pub fn partition(&self) -> Result<Partition> {
        cluster_rows(self.w.view(), self.p)
    }
}

/// Ward clustering of the rows of `w`, cut into `p` groups.
pub fn cluster_rows(w: ArrayView2<'_, f64>, p: usize) -> Result<Partition> {
    ward_cluster(w)?.cut(p)
}

/// Divide each row by its sum. Rows summing to less than [`ZERO_ROW_EPS`] are
/// replaced by `1/P` and reported.
pub fn normalize_w(w: &Array2<f64>) -> (Array2<f64>, Vec<usize>) {
    let p = w.ncols();
    let mut out = w.clone();
    let mut zero_rows = Vec::new();
    for (i, mut row) in out.rows_mut().into_iter().enumerate() {
        let s: f64 = row.sum();
        if s < ZERO_ROW_EPS {
            row.fill(1.0 / p as f64);
            zero_rows.push(i);
        } else {
            row.mapv_inplace(|v| v / s);
        }
    }
    (out, zero_rows)
}

/// Components whose column of `w` is identically zero.
pub fn empty_components(w: &Array2<f64>) -> Vec<usize> {
    w.columns()
        .into_iter()
        .enumerate()
        .filter(|(_, c)| c.iter().all(|v| *v == 0.0))
        .map(|(p, _)| p)
        .collect()
}

/// How a subproblem penalty is obtained.
#[derive(Clone, Debug, PartialEq)]
pub enum PenaltyPolicy {
    Fixed(f64),
    CrossValidated(CvOptions),
}

/// Solve one `H^k` given `W`. Returns the coefficients and the penalty used
/// (in the `m = n·J_k` convention).
///
/// With a cross-validated policy, the penalty is tuned on the stacked problem
/// of at most `cv_columns` seeded columns and rescaled by `|S|/J_k` so that
/// every column sees the same effective penalty as during tuning.
pub fn solve_h(
    block: &Array2<f64>,
    w: &Array2<f64>,
    policy: &PenaltyPolicy,
    cv_columns: usize,
    solver: &SolverOptions,
) -> Result<(Array2<f64>, f64)> {
    let (n, j) = block.dim();
    if w.nrows() != n {
        return Err(Error::input("W and block row counts differ"));
    }
    if w.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("W contains non-finite values".into()));
    }
    let lambda = match policy {
        PenaltyPolicy::Fixed(l) => *l,
        PenaltyPolicy::CrossValidated(cv) => {
            let cols = sample_columns(j, cv_columns, cv.seed);
            let parts = cols
                .iter()
                .map(|&c| (w.view(), block.column(c)))
                .collect();
            let stacked = StackedProblem::new(parts, false)?;
            match cv_select_lambda_stacked(&stacked, cv) {
                Ok(res) => res.lambda_min * cols.len() as f64 / j as f64,
                Err(Error::DegeneratePath) => 0.0,
                Err(e) => return Err(e),
            }
        }
    };
    let parts = (0..j).map(|c| (w.view(), block.column(c))).collect();
    let stacked = StackedProblem::new(parts, false)?;
    let sols = stacked.solve(lambda, solver)?;
    let p = w.ncols();
    let mut h = Array2::zeros((p, j));
    for (c, sol) in sols.into_iter().enumerate() {
        h.column_mut(c).assign(&sol.beta);
    }
    Ok((h, lambda))
}

fn sample_columns(j: usize, max: usize, seed: u64) -> Vec<usize> {
    if j <= max {
        return (0..j).collect();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut idx = rand::seq::index::sample(&mut rng, j, max).into_vec();
    idx.sort_unstable();
    idx
}

/// Per-sample penalty policy for the `W` step.
#[derive(Clone, Debug, PartialEq)]
pub enum MuPolicy {
    Fixed(Vec<f64>),
    /// Cross-validate each row; row `i` uses `seed + i` mixed into the fold seed.
    CrossValidated(CvOptions),
}

/// Solve all rows of `W` given the `H^k`. Rows are independent
/// non-negative lasso problems. Returns unnormalized `W` and the penalties.
pub fn solve_w(
    data: &MultiBlockDataset,
    h: &[Array2<f64>],
    policy: &MuPolicy,
    solver: &SolverOptions,
) -> Result<(Array2<f64>, Vec<f64>)> {
    if h.len() != data.n_blocks() {
        return Err(Error::input("one H matrix per block is required"));
    }
    let p = h[0].nrows();
    for (k, hk) in h.iter().enumerate() {
        if hk.nrows() != p || hk.ncols() != data.block(k).ncols() {
            return Err(Error::input("H shapes do not match the data"));
        }
        if hk.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical("H contains non-finite values".into()));
        }
    }
    let n = data.n_samples();
    if let MuPolicy::Fixed(mu) = policy {
        if mu.len() != n {
            return Err(Error::input("one mu value per sample is required"));
        }
    }
    // design: ΣJ_k × P
    let design = concatenate(Axis(0), &h.iter().map(|hk| hk.t()).collect::<Vec<_>>())
        .map_err(|e| Error::Numerical(e.to_string()))?;
    let rows: Vec<Result<(Array1<f64>, f64)>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let response = concatenate(
                Axis(0),
                &data.blocks().iter().map(|b| b.row(i)).collect::<Vec<_>>(),
            )
            .map_err(|e| Error::Numerical(e.to_string()))?;
            let problem = StackedProblem::new(vec![(design.view(), response.view())], true)?;
            let mu = match policy {
                MuPolicy::Fixed(mu) => mu[i],
                MuPolicy::CrossValidated(cv) => {
                    let opts = CvOptions {
                        seed: mix_seed(cv.seed, i as u64),
                        ..*cv
                    };
                    match cv_select_lambda_stacked(&problem, &opts) {
                        Ok(res) => res.lambda_min,
                        Err(Error::DegeneratePath) => 0.0,
                        Err(e) => return Err(e),
                    }
                }
            };
            let sol = problem.solve(mu, solver)?.remove(0);
            Ok((sol.beta, mu))
        })
        .collect();
    let mut w = Array2::zeros((n, p));
    let mut mus = Vec::with_capacity(n);
    for (i, r) in rows.into_iter().enumerate() {
        let (beta, mu) = r?;
        w.row_mut(i).assign(&beta);
        mus.push(mu);
    }
    Ok((w, mus))
}

/// Sum over blocks of squared reconstruction error plus the L1 penalties,
/// with the scaled `λ_k`, `μ_i` converted back to the unscaled objective
/// (`2·n·J_k·λ_k` and `2·ΣJ·μ_i`).
pub fn penalized_objective(
    data: &MultiBlockDataset,
    w: &Array2<f64>,
    h: &[Array2<f64>],
    lambda: &[f64],
    mu: &[f64],
) -> f64 {
    let n = data.n_samples() as f64;
    let total_j = data.total_variables() as f64;
    let mut obj = 0.0;
    for (k, (x, hk)) in data.blocks().iter().zip(h).enumerate() {
        let resid = x - &w.dot(hk);
        obj += resid.iter().map(|v| v * v).sum::<f64>();
        let l1: f64 = hk.iter().map(|v| v.abs()).sum();
        obj += 2.0 * n * x.ncols() as f64 * lambda[k] * l1;
    }
    for (i, row) in w.rows().into_iter().enumerate() {
        obj += 2.0 * total_j * mu[i] * row.iter().map(|v| v.abs()).sum::<f64>();
    }
    obj
}

fn block_mse(data: &MultiBlockDataset, w: &Array2<f64>, h: &[Array2<f64>]) -> Vec<f64> {
    data.blocks()
        .iter()
        .zip(h)
        .map(|(x, hk)| {
            let resid = x - &w.dot(hk);
            resid.iter().map(|v| v * v).sum::<f64>() / (x.len() as f64)
        })
        .collect()
}

/// SplitMix64 finalizer over `base ⊕ tag`; gives independent-looking seeds
/// for every subproblem from one run seed.
pub fn mix_seed(base: u64, tag: u64) -> u64 {
    let mut z = base ^ tag.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(0x632B_E59B_D9B4_E019);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Outcome of one stopping-rule update.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StopDecision {
    pub ari: Option<f64>,
    pub stable: bool,
    pub stop: bool,
}

/// Stops once the clustering of `W` has been stable (ARI at or above the
/// threshold) for `stable_rounds` consecutive iterations, or at `max_iter`.
#[derive(Clone, Debug)]
pub struct StopRule {
    threshold: f64,
    rounds: usize,
    max_iter: usize,
    streak: usize,
}

impl StopRule {
    pub fn new(opts: &FitOptions) -> Self {
        StopRule {
            threshold: opts.ari_stop_threshold,
            rounds: opts.stable_rounds,
            max_iter: opts.max_iter,
            streak: 0,
        }
    }

    pub fn update(&mut self, ari: Option<f64>, iteration: usize) -> StopDecision {
        match ari {
            Some(a) if a >= self.threshold => self.streak += 1,
            _ => self.streak = 0,
        }
        let stable = self.streak >= self.rounds;
        StopDecision {
            ari,
            stable,
            stop: stable || iteration >= self.max_iter,
        }
    }

    /// Convenience wrapper comparing two `W` matrices directly.
    pub fn check(
        &mut self,
        w_prev: &Array2<f64>,
        w_curr: &Array2<f64>,
        p: usize,
        iteration: usize,
    ) -> Result<StopDecision> {
        let ari = adjusted_rand_index(&cluster_rows(w_prev.view(), p)?, &cluster_rows(w_curr.view(), p)?)?;
        Ok(self.update(Some(ari), iteration))
    }
}

fn check_blocks(data: &MultiBlockDataset) -> Result<()> {
    for (k, b) in data.blocks().iter().enumerate() {
        let first = b[[0, 0]];
        if b.iter().all(|v| *v == first) {
            return Err(Error::input(format!(
                "zero-variance block '{}'",
                data.block_names()[k]
            )));
        }
    }
    Ok(())
}

/// State handed to a [`fit_observed`] callback after each outer iteration.
pub struct IterationView<'a> {
    pub record: &'a IterationRecord,
    pub w: &'a Array2<f64>,
    pub h: &'a [Array2<f64>],
}

/// Fit the joint factorization with `p` latent variables.
pub fn fit(
    data: &MultiBlockDataset,
    p: usize,
    penalties: &PenaltyConfig,
    opts: &FitOptions,
) -> Result<FactorModel> {
    fit_observed(data, p, penalties, opts, |_| {})
}

/// As [`fit`], calling `observe` after every outer iteration.
pub fn fit_observed(
    data: &MultiBlockDataset,
    p: usize,
    penalties: &PenaltyConfig,
    opts: &FitOptions,
    mut observe: impl FnMut(&IterationView<'_>),
) -> Result<FactorModel> {
    let n = data.n_samples();
    if p < 2 || p > n {
        return Err(Error::input(format!(
            "number of latent variables must lie in [2, {}], got {}",
            n, p
        )));
    }
    penalties.validate(data)?;
    opts.validate()?;
    check_blocks(data)?;

    let mut warnings = Vec::new();
    let (init, init_warnings) = initialize(data, p, &opts.init)?;
    warnings.extend(init_warnings);

    let k_blocks = data.n_blocks();
    let (mut w, mut h, h_first) = match init {
        Initial::W(w0) => (w0, Vec::new(), true),
        Initial::H(h0) => (Array2::zeros((n, p)), h0, false),
    };
    let mut prev_partition = if h_first {
        Some(cluster_rows(w.view(), p)?)
    } else {
        None
    };

    let mut lambda = penalties.lambda.clone();
    let mut mu = penalties.mu.clone();
    let auto = penalties.mode == PenaltyMode::AutoCv;
    let mut rule = StopRule::new(opts);
    let mut history = Vec::new();
    let mut converged = false;
    let mut last_zero_rows = Vec::new();
    let mut iteration = 0;

    while iteration < opts.max_iter {
        iteration += 1;
        let tune = auto && !(penalties.freeze_after_first && iteration > 1);
        let cv_for = |tag: u64| CvOptions {
            folds: penalties.cv_folds,
            seed: mix_seed(mix_seed(penalties.seed, iteration as u64), tag),
            n_lambda: penalties.n_lambda,
            ratio: penalties.ratio,
            solver: opts.inner,
        };

        let solve_all_h = |w: &Array2<f64>, lambda: &[f64]| -> Result<Vec<(Array2<f64>, f64)>> {
            (0..k_blocks)
                .map(|k| {
                    let policy = if tune {
                        PenaltyPolicy::CrossValidated(cv_for(k as u64))
                    } else {
                        PenaltyPolicy::Fixed(lambda[k])
                    };
                    solve_h(data.block(k), w, &policy, penalties.cv_columns, &opts.inner)
                })
                .collect()
        };
        let w_policy = if tune {
            MuPolicy::CrossValidated(cv_for(1 << 32))
        } else {
            MuPolicy::Fixed(mu.clone())
        };

        let zero_rows;
        if h_first {
            let hs = solve_all_h(&w, &lambda)?;
            lambda = hs.iter().map(|(_, l)| *l).collect();
            h = hs.into_iter().map(|(m, _)| m).collect();
            let (w_raw, mus) = solve_w(data, &h, &w_policy, &opts.inner)?;
            mu = mus;
            let (w_norm, zr) = normalize_w(&w_raw);
            w = w_norm;
            zero_rows = zr;
        } else {
            let (w_raw, mus) = solve_w(data, &h, &w_policy, &opts.inner)?;
            mu = mus;
            let (w_norm, zr) = normalize_w(&w_raw);
            w = w_norm;
            zero_rows = zr;
            let hs = solve_all_h(&w, &lambda)?;
            lambda = hs.iter().map(|(_, l)| *l).collect();
            h = hs.into_iter().map(|(m, _)| m).collect();
        }

        let partition = cluster_rows(w.view(), p)?;
        let ari = match &prev_partition {
            Some(prev) => Some(adjusted_rand_index(prev, &partition)?),
            None => None,
        };
        prev_partition = Some(partition);
        let decision = rule.update(ari, iteration);

        let objective = penalized_objective(data, &w, &h, &lambda, &mu);
        if !objective.is_finite() {
            return Err(Error::Numerical(format!(
                "objective became non-finite at iteration {iteration}"
            )));
        }
        history.push(IterationRecord {
            iteration,
            objective,
            block_mse: block_mse(data, &w, &h),
            ari_previous: ari,
            lambda: lambda.clone(),
            zero_rows: zero_rows.clone(),
        });
        last_zero_rows = zero_rows;
        observe(&IterationView {
            record: history.last().expect("just pushed"),
            w: &w,
            h: &h,
        });
        if decision.stable {
            converged = true;
        }
        if decision.stop {
            break;
        }
    }

    if !last_zero_rows.is_empty() {
        warnings.push(format!(
            "{} sample rows of W were all zero and set to uniform weights",
            last_zero_rows.len()
        ));
    }
    let empty = empty_components(&w);
    if !empty.is_empty() {
        warnings.push(format!("{} empty components in W", empty.len()));
    }

    let mut fitted_penalties = penalties.clone();
    fitted_penalties.lambda = lambda;
    fitted_penalties.mu = mu;

    Ok(FactorModel {
        w,
        h,
        p,
        penalties: fitted_penalties,
        history,
        converged,
        iterations: iteration,
        seed: opts.init.seed,
        sample_ids: data.sample_ids().to_vec(),
        block_names: data.block_names().to_vec(),
        variable_ids: data.variable_ids().to_vec(),
        diagnostics: Diagnostics {
            zero_rows: last_zero_rows,
            empty_components: empty,
            warnings,
        },
    })
}
