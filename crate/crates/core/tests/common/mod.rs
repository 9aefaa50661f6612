//! Independent oracles and data generators shared by the integration tests.
#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use pintmf::MultiBlockDataset;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gaussian_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Array2<f64> {
    use rand_distr::{Distribution, StandardNormal};
    Array2::from_shape_fn((rows, cols), |_| StandardNormal.sample(rng))
}

/// `(1/(2m))‖y − Aβ‖² + λ Σ ω_j |β_j|`.
pub fn lasso_objective(a: &Array2<f64>, y: &Array1<f64>, beta: &Array1<f64>, lambda: f64, w: &[f64]) -> f64 {
    let m = a.nrows() as f64;
    let r = y - &a.dot(beta);
    r.dot(&r) / (2.0 * m) + lambda * beta.iter().zip(w).map(|(b, w)| w * b.abs()).sum::<f64>()
}

/// Exact lasso by enumeration of sign patterns.
///
/// For each pattern `s ∈ {−1, 0, 1}^q` (`{0, 1}^q` when non-negative) the
/// stationarity equations on the active set are solved directly; candidates
/// that satisfy every optimality condition are kept and the one with the
/// lowest objective is returned.
pub fn lasso_enumeration(a: &Array2<f64>, y: &Array1<f64>, lambda: f64, w: &[f64], nonneg: bool) -> Array1<f64> {
    let (m, q) = a.dim();
    let mf = m as f64;
    let choices: &[i8] = if nonneg { &[0, 1] } else { &[-1, 0, 1] };
    let mut best: Option<(f64, Array1<f64>)> = None;
    let total = choices.len().pow(q as u32);
    for code in 0..total {
        let mut signs = vec![0i8; q];
        let mut c = code;
        for s in signs.iter_mut() {
            *s = choices[c % choices.len()];
            c /= choices.len();
        }
        let active: Vec<usize> = (0..q).filter(|&j| signs[j] != 0).collect();
        let mut beta = Array1::zeros(q);
        if !active.is_empty() {
            let k = active.len();
            let g = DMatrix::from_fn(k, k, |r, c| a.column(active[r]).dot(&a.column(active[c])) / mf);
            let rhs = DVector::from_fn(k, |r, _| {
                let j = active[r];
                a.column(j).dot(y) / mf - lambda * w[j] * signs[j] as f64
            });
            let Some(sol) = g.clone().lu().solve(&rhs) else { continue };
            if (&g * &sol - &rhs).amax() > 1e-10 * (1.0 + rhs.amax()) {
                continue;
            }
            for (r, &j) in active.iter().enumerate() {
                beta[j] = sol[r];
            }
            if active.iter().any(|&j| beta[j] * (signs[j] as f64) <= 0.0) {
                continue;
            }
        }
        let resid = y - &a.dot(&beta);
        let ok = (0..q).filter(|j| signs[*j] == 0).all(|j| {
            let z = a.column(j).dot(&resid) / mf;
            let pen = lambda * w[j];
            if nonneg {
                z <= pen + 1e-12
            } else {
                z.abs() <= pen + 1e-12
            }
        });
        if !ok {
            continue;
        }
        let obj = lasso_objective(a, y, &beta, lambda, w);
        if best.as_ref().is_none_or(|(b, _)| obj < *b) {
            best = Some((obj, beta));
        }
    }
    best.expect("some sign pattern satisfies the optimality conditions").1
}

/// Accelerated projected/proximal gradient, run to machine precision.
pub fn lasso_proximal_gradient(a: &Array2<f64>, y: &Array1<f64>, lambda: f64, w: &[f64], nonneg: bool) -> Array1<f64> {
    let (m, q) = a.dim();
    let mf = m as f64;
    let gram = DMatrix::from_fn(q, q, |r, c| a.column(r).dot(&a.column(c)) / mf);
    let lip = gram.symmetric_eigenvalues().amax().max(1e-12);
    let step = 1.0 / lip;
    let prox = |v: f64, j: usize| {
        let t = step * lambda * w[j];
        if nonneg {
            (v - t).max(0.0)
        } else {
            v.signum() * (v.abs() - t).max(0.0)
        }
    };
    let mut x = Array1::<f64>::zeros(q);
    let mut z = x.clone();
    let mut t = 1.0f64;
    for _ in 0..2_000_000 {
        let grad = a.t().dot(&(a.dot(&z) - y)) / mf;
        let next = Array1::from_shape_fn(q, |j| prox(z[j] - step * grad[j], j));
        let t_next = (1.0 + (1.0 + 4.0 * t * t).sqrt()) / 2.0;
        let diff = (&next - &x).mapv(f64::abs).fold(0.0f64, |a, b| a.max(*b));
        z = &next + &((&next - &x) * ((t - 1.0) / t_next));
        x = next;
        t = t_next;
        if diff < 1e-15 {
            break;
        }
    }
    x
}

/// `ARI` from pair counts `n11, n00, n10, n01`, with the identical-grouping
/// convention when the denominator vanishes.
pub fn ari_pair_counting(a: &[usize], b: &[usize]) -> f64 {
    let n = a.len();
    let (mut n11, mut n00, mut n10, mut n01) = (0f64, 0f64, 0f64, 0f64);
    for i in 0..n {
        for j in (i + 1)..n {
            match (a[i] == a[j], b[i] == b[j]) {
                (true, true) => n11 += 1.0,
                (false, false) => n00 += 1.0,
                (true, false) => n10 += 1.0,
                (false, true) => n01 += 1.0,
            }
        }
    }
    let den = (n00 + n01) * (n01 + n11) + (n00 + n10) * (n10 + n11);
    if den == 0.0 {
        return if n10 == 0.0 && n01 == 0.0 { 1.0 } else { 0.0 };
    }
    2.0 * (n00 * n11 - n01 * n10) / den
}

/// Every set partition of `n` elements as restricted growth strings.
pub fn set_partitions(n: usize) -> Vec<Vec<usize>> {
    fn rec(prefix: &mut Vec<usize>, n: usize, max: usize, out: &mut Vec<Vec<usize>>) {
        if prefix.len() == n {
            out.push(prefix.clone());
            return;
        }
        for l in 0..=max + 1 {
            prefix.push(l);
            rec(prefix, n, max.max(l), out);
            prefix.pop();
        }
    }
    if n == 0 {
        return vec![vec![]];
    }
    let mut out = Vec::new();
    rec(&mut vec![0], n, 0, &mut out);
    out
}

/// Greedy Ward agglomeration computed from cluster centroids directly:
/// merge cost `Δ = |A||B|/(|A|+|B|)·‖c_A − c_B‖²`, height `sqrt(2Δ)`.
/// Returns the merge heights and the member sets after each merge.
pub fn ward_brute_force(points: &Array2<f64>) -> (Vec<f64>, Vec<Vec<Vec<usize>>>) {
    let n = points.nrows();
    let mut clusters: Vec<Vec<usize>> = (0..n).map(|i| vec![i]).collect();
    let centroid = |c: &[usize]| {
        let mut acc = Array1::<f64>::zeros(points.ncols());
        for &i in c {
            acc += &points.row(i);
        }
        acc / c.len() as f64
    };
    let mut heights = Vec::new();
    let mut states = Vec::new();
    while clusters.len() > 1 {
        let mut best = (f64::INFINITY, 0, 0);
        for a in 0..clusters.len() {
            for b in (a + 1)..clusters.len() {
                let (na, nb) = (clusters[a].len() as f64, clusters[b].len() as f64);
                let d = &centroid(&clusters[a]) - &centroid(&clusters[b]);
                let cost = na * nb / (na + nb) * d.dot(&d);
                if cost < best.0 {
                    best = (cost, a, b);
                }
            }
        }
        let (cost, a, b) = best;
        let merged = [clusters[a].clone(), clusters[b].clone()].concat();
        clusters.remove(b);
        clusters[a] = merged;
        heights.push((2.0 * cost).sqrt());
        states.push(clusters.clone());
    }
    (heights, states)
}

/// Labels from a list of member sets.
pub fn labels_from_sets(n: usize, sets: &[Vec<usize>]) -> Vec<usize> {
    let mut labels = vec![0; n];
    for (c, s) in sets.iter().enumerate() {
        for &i in s {
            labels[i] = c;
        }
    }
    labels
}

/// Noiseless multi-block data `X^k = W·H^k` with a one-hot `W` over
/// `groups` balanced groups and non-negative random `H^k`.
pub fn noiseless_dataset(seed: u64, groups: usize, per_group: usize, widths: &[usize]) -> (MultiBlockDataset, Vec<usize>) {
    let mut r = rng(seed);
    let n = groups * per_group;
    let labels: Vec<usize> = (0..n).map(|i| i / per_group + 1).collect();
    let mut w = Array2::zeros((n, groups));
    for (i, &l) in labels.iter().enumerate() {
        w[[i, l - 1]] = 1.0;
    }
    let blocks = widths
        .iter()
        .map(|&j| {
            let h = Array2::from_shape_fn((groups, j), |_| r.random_range(0.0..4.0));
            w.dot(&h)
        })
        .collect();
    (MultiBlockDataset::from_blocks(blocks).unwrap(), labels)
}

/// Row sums and minimum of `W`, for the normalization invariant.
pub fn w_invariant_violation(w: &Array2<f64>) -> f64 {
    let row_err = w
        .rows()
        .into_iter()
        .map(|r| (r.sum() - 1.0).abs())
        .fold(0.0f64, f64::max);
    let neg = w.iter().fold(0.0f64, |acc, v| acc.max(-v));
    row_err.max(neg)
}
