//! Coordinate-descent lasso with optional non-negativity.
//!
//! All objectives use the `(1/(2m))·‖y − Aβ‖² + λ·Σ ω_j |β_j|` convention,
//! where `m` is the number of observations. Problems made of several
//! independent parts that share one penalty (the column-separable problems
//! that arise when a coefficient matrix is vectorized) are handled by
//! [`StackedProblem`], which never materializes the block-diagonal design.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_TOL: f64 = 1e-7;
pub const DEFAULT_MAX_ITER: usize = 100_000;
pub const DEFAULT_N_LAMBDA: usize = 100;
pub const DEFAULT_RATIO: f64 = 0.01;
pub const DEFAULT_FOLDS: usize = 5;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolverOptions {
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            tol: DEFAULT_TOL,
            max_iter: DEFAULT_MAX_ITER,
        }
    }
}

impl SolverOptions {
    fn validate(&self) -> Result<()> {
        if !(self.tol > 0.0) || !self.tol.is_finite() {
            return Err(Error::input("solver tolerance must be positive"));
        }
        if self.max_iter == 0 {
            return Err(Error::input("max_iter must be at least 1"));
        }
        Ok(())
    }
}

/// A single least-squares design with an L1 penalty.
#[derive(Clone, Debug)]
pub struct LassoProblem {
    design: Array2<f64>,
    response: Array1<f64>,
    nonneg: bool,
    weights: Array1<f64>,
}

impl LassoProblem {
    pub fn new(design: Array2<f64>, response: Array1<f64>) -> Result<Self> {
        let (m, q) = design.dim();
        if m == 0 || q == 0 {
            return Err(Error::input("lasso design must have at least one row and one column"));
        }
        if response.len() != m {
            return Err(Error::input(format!(
                "response length {} does not match design rows {}",
                response.len(),
                m
            )));
        }
        if design.iter().chain(response.iter()).any(|v| !v.is_finite()) {
            return Err(Error::input("lasso inputs contain non-finite values"));
        }
        Ok(LassoProblem {
            design,
            response,
            nonneg: false,
            weights: Array1::ones(q),
        })
    }

    pub fn nonneg(mut self, nonneg: bool) -> Self {
        self.nonneg = nonneg;
        self
    }

    /// Per-coefficient penalty multipliers; all must be strictly positive.
    pub fn with_weights(mut self, weights: Array1<f64>) -> Result<Self> {
        check_weights(weights.as_slice().unwrap_or(&weights.to_vec()), self.n_coef())?;
        self.weights = weights;
        Ok(self)
    }

    pub fn design(&self) -> ArrayView2<'_, f64> {
        self.design.view()
    }

    pub fn response(&self) -> ArrayView1<'_, f64> {
        self.response.view()
    }

    pub fn is_nonneg(&self) -> bool {
        self.nonneg
    }

    pub fn weights(&self) -> ArrayView1<'_, f64> {
        self.weights.view()
    }

    pub fn n_obs(&self) -> usize {
        self.design.nrows()
    }

    pub fn n_coef(&self) -> usize {
        self.design.ncols()
    }

    /// Penalized objective evaluated at `beta`.
    pub fn objective(&self, beta: ArrayView1<'_, f64>, lambda: f64) -> f64 {
        let fitted = self.design.dot(&beta);
        let rss: f64 = self
            .response
            .iter()
            .zip(fitted.iter())
            .map(|(y, f)| (y - f).powi(2))
            .sum();
        let l1: f64 = beta
            .iter()
            .zip(self.weights.iter())
            .map(|(b, w)| w * b.abs())
            .sum();
        rss / (2.0 * self.n_obs() as f64) + lambda * l1
    }

    /// View as a one-part stacked problem.
    pub fn as_stacked(&self) -> StackedProblem<'_> {
        StackedProblem {
            parts: vec![Part {
                design: self.design.view(),
                response: self.response.view(),
            }],
            q: self.n_coef(),
            nonneg: self.nonneg,
            weights: self.weights.to_vec(),
        }
    }
}

fn check_weights(weights: &[f64], q: usize) -> Result<()> {
    if weights.len() != q {
        return Err(Error::input(format!(
            "penalty weights have length {}, expected {}",
            weights.len(),
            q
        )));
    }
    if weights.iter().any(|w| !(*w > 0.0) || !w.is_finite()) {
        return Err(Error::input("penalty weights must be finite and strictly positive"));
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq)]
pub struct LassoSolution {
    pub beta: Array1<f64>,
    pub lambda: f64,
    pub objective: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Soft-threshold coordinate update. Returns the new coefficient given the
/// partial correlation `z`, the curvature `c` and the per-coordinate
/// penalty `lambda * weight`.
#[inline]
fn coordinate_update(z: f64, c: f64, lambda: f64, weight: f64, nonneg: bool) -> f64 {
    if c <= 0.0 {
        return 0.0;
    }
    // Compare in the same units as lambda_max so the path head is exactly zero.
    if nonneg {
        if z <= 0.0 || z / weight <= lambda {
            0.0
        } else {
            (z - lambda * weight) / c
        }
    } else if z.abs() / weight <= lambda {
        0.0
    } else {
        z.signum() * (z.abs() - lambda * weight) / c
    }
}

#[inline]
fn col_dot(design: &ArrayView2<'_, f64>, j: usize, v: &[f64]) -> f64 {
    let mut acc = 0.0;
    for (i, vi) in v.iter().enumerate() {
        acc += design[[i, j]] * vi;
    }
    acc
}

/// Cyclic coordinate descent on a single problem, updating residuals in place.
pub fn solve_lasso(
    problem: &LassoProblem,
    lambda: f64,
    warm_start: Option<ArrayView1<'_, f64>>,
    opts: &SolverOptions,
) -> Result<LassoSolution> {
    solve_with_trace(problem, lambda, warm_start, opts, None)
}

/// Same as [`solve_lasso`] but records the objective after every sweep.
pub fn solve_lasso_traced(
    problem: &LassoProblem,
    lambda: f64,
    warm_start: Option<ArrayView1<'_, f64>>,
    opts: &SolverOptions,
) -> Result<(LassoSolution, Vec<f64>)> {
    let mut trace = Vec::new();
    let sol = solve_with_trace(problem, lambda, warm_start, opts, Some(&mut trace))?;
    Ok((sol, trace))
}

fn solve_with_trace(
    problem: &LassoProblem,
    lambda: f64,
    warm_start: Option<ArrayView1<'_, f64>>,
    opts: &SolverOptions,
    mut trace: Option<&mut Vec<f64>>,
) -> Result<LassoSolution> {
    if !(lambda >= 0.0) || !lambda.is_finite() {
        return Err(Error::input("lambda must be finite and non-negative"));
    }
    opts.validate()?;
    let (m, q) = problem.design.dim();
    let mut beta = match warm_start {
        Some(w) => {
            if w.len() != q {
                return Err(Error::input("warm start has wrong length"));
            }
            if w.iter().any(|v| !v.is_finite()) {
                return Err(Error::input("warm start contains non-finite values"));
            }
            if problem.nonneg && w.iter().any(|v| *v < 0.0) {
                return Err(Error::input("warm start violates non-negativity"));
            }
            w.to_vec()
        }
        None => vec![0.0; q],
    };
    let design = problem.design.view();
    let mf = m as f64;
    let curvature: Vec<f64> = (0..q)
        .map(|j| design.column(j).iter().map(|a| a * a).sum::<f64>() / mf)
        .collect();
    let mut resid: Vec<f64> = (problem.response.to_owned() - design.dot(&Array1::from(beta.clone()))).to_vec();
    let weights = problem.weights.as_slice().expect("contiguous weights");

    let mut iterations = 0;
    let mut converged = false;
    while iterations < opts.max_iter {
        let mut max_delta: f64 = 0.0;
        for j in 0..q {
            let old = beta[j];
            let c = curvature[j];
            let new = if c <= 0.0 {
                0.0
            } else {
                let z = col_dot(&design, j, &resid) / mf + c * old;
                coordinate_update(z, c, lambda, weights[j], problem.nonneg)
            };
            let delta = new - old;
            if delta != 0.0 {
                for (i, r) in resid.iter_mut().enumerate() {
                    *r -= design[[i, j]] * delta;
                }
                beta[j] = new;
                max_delta = max_delta.max(delta.abs());
            }
        }
        iterations += 1;
        if let Some(t) = trace.as_deref_mut() {
            t.push(problem.objective(ArrayView1::from(&beta), lambda));
        }
        if max_delta < opts.tol {
            converged = true;
            break;
        }
    }
    let beta = Array1::from(beta);
    let objective = problem.objective(beta.view(), lambda);
    Ok(LassoSolution {
        beta,
        lambda,
        objective,
        iterations,
        converged,
    })
}

/// Largest KKT violation of `beta` for the given problem, in the scaled units
/// of the objective. Zero at an exact optimum.
pub fn kkt_violation(problem: &LassoProblem, beta: ArrayView1<'_, f64>, lambda: f64) -> f64 {
    let m = problem.n_obs() as f64;
    let resid = &problem.response - &problem.design.dot(&beta);
    let mut worst: f64 = 0.0;
    for j in 0..problem.n_coef() {
        let col = problem.design.column(j);
        // Gradient of the smooth part is -(1/m)·a_jᵀr.
        let g = col.dot(&resid) / m;
        let pen = lambda * problem.weights[j];
        let b = beta[j];
        let v = if b > 0.0 {
            (g - pen).abs()
        } else if b < 0.0 {
            (g + pen).abs()
        } else if problem.nonneg {
            (g - pen).max(0.0)
        } else {
            (g.abs() - pen).max(0.0)
        };
        worst = worst.max(v);
    }
    worst
}

/// Coordinate descent on precomputed cross-products `G = AᵀA/m`, `c = Aᵀy/m`.
/// Used where one design is shared by many responses or the design is tall
/// and thin.
#[derive(Clone, Debug)]
pub(crate) struct GramLasso {
    q: usize,
    gram: Vec<f64>,
    corr: Vec<f64>,
}

impl GramLasso {
    /// Cross-products over the rows listed in `rows` (all rows when `None`),
    /// scaled by `1/scale`.
    pub(crate) fn gram_only(design: &ArrayView2<'_, f64>, rows: Option<&[usize]>, scale: f64) -> Vec<f64> {
        let q = design.ncols();
        let mut gram = vec![0.0; q * q];
        let mut accumulate = |i: usize| {
            let row = design.row(i);
            for a in 0..q {
                let ra = row[a];
                if ra == 0.0 {
                    continue;
                }
                for b in a..q {
                    gram[a * q + b] += ra * row[b];
                }
            }
        };
        match rows {
            Some(rs) => rs.iter().for_each(|&i| accumulate(i)),
            None => (0..design.nrows()).for_each(&mut accumulate),
        }
        for a in 0..q {
            for b in a..q {
                let v = gram[a * q + b] / scale;
                gram[a * q + b] = v;
                gram[b * q + a] = v;
            }
        }
        gram
    }

    pub(crate) fn corr_only(
        design: &ArrayView2<'_, f64>,
        response: &ArrayView1<'_, f64>,
        rows: Option<&[usize]>,
        scale: f64,
    ) -> Vec<f64> {
        let q = design.ncols();
        match rows {
            None => {
                let y = response.to_vec();
                (0..q).map(|j| col_dot(design, j, &y) / scale).collect()
            }
            Some(rs) => (0..q)
                .map(|j| rs.iter().map(|&i| design[[i, j]] * response[i]).sum::<f64>() / scale)
                .collect(),
        }
    }

    pub(crate) fn new(gram: Vec<f64>, corr: Vec<f64>) -> Self {
        let q = corr.len();
        debug_assert_eq!(gram.len(), q * q);
        GramLasso { q, gram, corr }
    }

    /// Runs coordinate descent from the current contents of `beta`.
    pub(crate) fn solve(
        &self,
        lambda: f64,
        weights: &[f64],
        nonneg: bool,
        beta: &mut [f64],
        opts: &SolverOptions,
    ) -> (usize, bool) {
        let q = self.q;
        // grad[j] = c_j - (Gβ)_j
        let mut grad = self.corr.clone();
        for (k, &bk) in beta.iter().enumerate() {
            if bk != 0.0 {
                for j in 0..q {
                    grad[j] -= self.gram[j * q + k] * bk;
                }
            }
        }
        let mut iterations = 0;
        while iterations < opts.max_iter {
            let mut max_delta: f64 = 0.0;
            for j in 0..q {
                let c = self.gram[j * q + j];
                let old = beta[j];
                let new = if c <= 0.0 {
                    0.0
                } else {
                    coordinate_update(grad[j] + c * old, c, lambda, weights[j], nonneg)
                };
                let delta = new - old;
                if delta != 0.0 {
                    beta[j] = new;
                    for k in 0..q {
                        grad[k] -= self.gram[k * q + j] * delta;
                    }
                    max_delta = max_delta.max(delta.abs());
                }
            }
            iterations += 1;
            if max_delta < opts.tol {
                return (iterations, true);
            }
        }
        (iterations, false)
    }
}

#[derive(Clone, Debug)]
struct Part<'a> {
    design: ArrayView2<'a, f64>,
    response: ArrayView1<'a, f64>,
}

/// Several independent least-squares parts sharing one penalty level and a
/// common observation count. Equivalent to a single lasso on the
/// block-diagonal design `diag(A_1, …, A_G)` with the stacked response.
#[derive(Clone, Debug)]
pub struct StackedProblem<'a> {
    parts: Vec<Part<'a>>,
    q: usize,
    nonneg: bool,
    weights: Vec<f64>,
}

impl<'a> StackedProblem<'a> {
    /// Every part must have the same number of columns.
    pub fn new(
        parts: Vec<(ArrayView2<'a, f64>, ArrayView1<'a, f64>)>,
        nonneg: bool,
    ) -> Result<Self> {
        let q = parts
            .first()
            .map(|(d, _)| d.ncols())
            .ok_or_else(|| Error::input("stacked problem needs at least one part"))?;
        if q == 0 {
            return Err(Error::input("lasso design must have at least one column"));
        }
        let mut out = Vec::with_capacity(parts.len());
        for (design, response) in parts {
            if design.ncols() != q {
                return Err(Error::input("stacked parts must share the coefficient count"));
            }
            if design.nrows() != response.len() {
                return Err(Error::input("response length does not match design rows"));
            }
            if design.iter().chain(response.iter()).any(|v| !v.is_finite()) {
                return Err(Error::input("lasso inputs contain non-finite values"));
            }
            out.push(Part { design, response });
        }
        let m: usize = out.iter().map(|p| p.design.nrows()).sum();
        if m == 0 {
            return Err(Error::input("stacked problem has no observations"));
        }
        Ok(StackedProblem {
            parts: out,
            q,
            nonneg,
            weights: vec![1.0; q],
        })
    }

    pub fn with_weights(mut self, weights: Vec<f64>) -> Result<Self> {
        check_weights(&weights, self.q)?;
        self.weights = weights;
        Ok(self)
    }

    pub fn n_obs(&self) -> usize {
        self.parts.iter().map(|p| p.design.nrows()).sum()
    }

    pub fn n_parts(&self) -> usize {
        self.parts.len()
    }

    /// Smallest λ at which every coefficient is zero.
    pub fn lambda_max(&self) -> f64 {
        let m = self.n_obs() as f64;
        let mut best: f64 = 0.0;
        for part in &self.parts {
            let corr = GramLasso::corr_only(&part.design, &part.response, None, m);
            for (c, w) in corr.iter().zip(&self.weights) {
                let v = if self.nonneg { c.max(0.0) } else { c.abs() };
                best = best.max(v / w);
            }
        }
        best
    }

    pub fn lambda_path(&self, n_lambda: usize, ratio: f64) -> Result<Vec<f64>> {
        if n_lambda < 2 {
            return Err(Error::input("n_lambda must be at least 2"));
        }
        if !(ratio > 0.0 && ratio < 1.0) {
            return Err(Error::input("lambda ratio must lie in (0, 1)"));
        }
        let lmax = self.lambda_max();
        if !(lmax > 0.0) {
            return Err(Error::DegeneratePath);
        }
        let step = ratio.ln() / (n_lambda - 1) as f64;
        let mut path: Vec<f64> = (0..n_lambda)
            .map(|k| lmax * (step * k as f64).exp())
            .collect();
        path[0] = lmax;
        path[n_lambda - 1] = lmax * ratio;
        Ok(path)
    }

    /// Solves every part at `lambda`, one coefficient vector per part.
    pub fn solve(&self, lambda: f64, opts: &SolverOptions) -> Result<Vec<LassoSolution>> {
        if !(lambda >= 0.0) || !lambda.is_finite() {
            return Err(Error::input("lambda must be finite and non-negative"));
        }
        opts.validate()?;
        let m = self.n_obs() as f64;
        let sols = self
            .parts
            .par_iter()
            .map(|part| {
                let gram = GramLasso::gram_only(&part.design, None, m);
                let corr = GramLasso::corr_only(&part.design, &part.response, None, m);
                let solver = GramLasso::new(gram, corr);
                let mut beta = vec![0.0; self.q];
                let (iterations, converged) =
                    solver.solve(lambda, &self.weights, self.nonneg, &mut beta, opts);
                let beta = Array1::from(beta);
                let fitted = part.design.dot(&beta);
                let rss: f64 = part
                    .response
                    .iter()
                    .zip(fitted.iter())
                    .map(|(y, f)| (y - f).powi(2))
                    .sum();
                let l1: f64 = beta.iter().zip(&self.weights).map(|(b, w)| w * b.abs()).sum();
                LassoSolution {
                    objective: rss / (2.0 * m) + lambda * l1,
                    beta,
                    lambda,
                    iterations,
                    converged,
                }
            })
            .collect();
        Ok(sols)
    }
}

/// Regularization path for a single problem.
pub fn lambda_path(problem: &LassoProblem, n_lambda: usize, ratio: f64) -> Result<Vec<f64>> {
    problem.as_stacked().lambda_path(n_lambda, ratio)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CvOptions {
    pub folds: usize,
    pub seed: u64,
    pub n_lambda: usize,
    pub ratio: f64,
    pub solver: SolverOptions,
}

impl Default for CvOptions {
    fn default() -> Self {
        CvOptions {
            folds: DEFAULT_FOLDS,
            seed: 0,
            n_lambda: DEFAULT_N_LAMBDA,
            ratio: DEFAULT_RATIO,
            solver: SolverOptions::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CvResult {
    pub lambda_path: Vec<f64>,
    pub cv_error: Vec<f64>,
    pub cv_se: Vec<f64>,
    pub lambda_min: f64,
    pub fold_count: usize,
    pub fold_seed: u64,
}

pub fn cv_select_lambda(problem: &LassoProblem, opts: &CvOptions) -> Result<CvResult> {
    cv_select_lambda_stacked(&problem.as_stacked(), opts)
}

/// K-fold cross-validation over the stacked observations.
///
/// Observations are numbered part by part and assigned to folds by a seeded
/// shuffle. Each training fit keeps the `1/(2·m_train)` scaling of the full
/// problem and is warm-started along the shared path.
pub fn cv_select_lambda_stacked(problem: &StackedProblem<'_>, opts: &CvOptions) -> Result<CvResult> {
    opts.solver.validate()?;
    let m = problem.n_obs();
    if opts.folds < 2 {
        return Err(Error::input("cross-validation needs at least 2 folds"));
    }
    if opts.folds > m {
        return Err(Error::input(format!(
            "{} folds requested for {} observations",
            opts.folds, m
        )));
    }
    let path = problem.lambda_path(opts.n_lambda, opts.ratio)?;

    let mut order: Vec<usize> = (0..m).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    order.shuffle(&mut rng);
    let mut fold_of = vec![0usize; m];
    for (pos, &obs) in order.iter().enumerate() {
        fold_of[obs] = pos % opts.folds;
    }

    let offsets: Vec<usize> = problem
        .parts
        .iter()
        .scan(0usize, |acc, p| {
            let start = *acc;
            *acc += p.design.nrows();
            Some(start)
        })
        .collect();

    // (per-λ held-out SSE, held-out count) for each fold
    let per_fold: Vec<(Vec<f64>, usize)> = (0..opts.folds)
        .into_par_iter()
        .map(|fold| {
            let m_train = fold_of.iter().filter(|&&f| f != fold).count() as f64;
            let mut sse = vec![0.0; path.len()];
            let mut n_test = 0usize;
            for (part, &offset) in problem.parts.iter().zip(&offsets) {
                let rows = part.design.nrows();
                let (train, test): (Vec<usize>, Vec<usize>) =
                    (0..rows).partition(|&i| fold_of[offset + i] != fold);
                n_test += test.len();
                let gram = GramLasso::gram_only(&part.design, Some(&train), m_train);
                let corr = GramLasso::corr_only(&part.design, &part.response, Some(&train), m_train);
                let solver = GramLasso::new(gram, corr);
                let mut beta = vec![0.0; problem.q];
                for (k, &lambda) in path.iter().enumerate() {
                    solver.solve(lambda, &problem.weights, problem.nonneg, &mut beta, &opts.solver);
                    let mut err = 0.0;
                    for &i in &test {
                        let row = part.design.row(i);
                        let fit: f64 = row.iter().zip(&beta).map(|(a, b)| a * b).sum();
                        err += (part.response[i] - fit).powi(2);
                    }
                    sse[k] += err;
                }
            }
            (sse, n_test)
        })
        .collect();

    let n_lambda = path.len();
    let folds = opts.folds as f64;
    let mut cv_error = vec![0.0; n_lambda];
    let mut cv_se = vec![0.0; n_lambda];
    for k in 0..n_lambda {
        let total: f64 = per_fold.iter().map(|(s, _)| s[k]).sum();
        cv_error[k] = total / m as f64;
        let fold_mse: Vec<f64> = per_fold
            .iter()
            .map(|(s, n)| if *n > 0 { s[k] / *n as f64 } else { 0.0 })
            .collect();
        let mean = fold_mse.iter().sum::<f64>() / folds;
        let var = fold_mse.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (folds - 1.0);
        cv_se[k] = (var / folds).sqrt();
    }

    // Strict comparison keeps the first (largest) λ among exact ties.
    let mut best = 0;
    for k in 1..n_lambda {
        if cv_error[k] < cv_error[best] {
            best = k;
        }
    }
    Ok(CvResult {
        lambda_min: path[best],
        lambda_path: path,
        cv_error,
        cv_se,
        fold_count: opts.folds,
        fold_seed: opts.seed,
    })
}
