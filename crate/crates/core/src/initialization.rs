//! Starting points for the alternating fit.
//!
//! `snf` produces a cluster-indicator `W` from a fused sample affinity over
//! all blocks; `svd`, `hclust` and `random` produce one `H^k` per block.

use nalgebra::DMatrix;
use ndarray::{Array2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::clustering::{ward_cluster, Partition};
use crate::error::{Error, Result};
use crate::factorization::MultiBlockDataset;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitKind {
    #[default]
    Snf,
    Svd,
    Hclust,
    Random,
}

impl std::str::FromStr for InitKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "snf" => Ok(InitKind::Snf),
            "svd" => Ok(InitKind::Svd),
            "hclust" => Ok(InitKind::Hclust),
            "random" => Ok(InitKind::Random),
            other => Err(Error::input(format!("unknown initialization '{other}'"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SnfParams {
    /// Neighbourhood size; `None` means `max(2, n/10)`.
    pub neighbors: Option<usize>,
    /// Kernel width multiplier.
    pub alpha: f64,
    pub fusion_iters: usize,
}

impl Default for SnfParams {
    fn default() -> Self {
        SnfParams {
            neighbors: None,
            alpha: 0.5,
            fusion_iters: 20,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct InitSpec {
    pub kind: InitKind,
    pub seed: u64,
    pub snf: SnfParams,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Initial {
    W(Array2<f64>),
    H(Vec<Array2<f64>>),
}

pub fn initialize(data: &MultiBlockDataset, p: usize, spec: &InitSpec) -> Result<(Initial, Vec<String>)> {
    match spec.kind {
        InitKind::Snf => {
            let (w, warn) = init_snf(data, p, &spec.snf)?;
            Ok((Initial::W(w), warn))
        }
        InitKind::Svd => {
            let (h, warn) = init_svd(data, p)?;
            Ok((Initial::H(h), warn))
        }
        InitKind::Hclust => Ok((Initial::H(init_hclust(data, p)?), Vec::new())),
        InitKind::Random => Ok((Initial::H(init_random(data, p, spec.seed)?), Vec::new())),
    }
}

fn check_p(data: &MultiBlockDataset, p: usize) -> Result<()> {
    if p == 0 || p > data.n_samples() {
        return Err(Error::input(format!(
            "P = {} must lie in [1, {}]",
            p,
            data.n_samples()
        )));
    }
    Ok(())
}

/// Top `P` right singular vectors of each block as the rows of `H^k`.
/// Each vector's largest-magnitude entry is made positive.
pub fn init_svd(data: &MultiBlockDataset, p: usize) -> Result<(Vec<Array2<f64>>, Vec<String>)> {
    check_p(data, p)?;
    let mut warnings = Vec::new();
    let mut out = Vec::with_capacity(data.n_blocks());
    for (k, x) in data.blocks().iter().enumerate() {
        let (n, j) = x.dim();
        let m = DMatrix::from_fn(n, j, |r, c| x[[r, c]]);
        let svd = m.svd(false, true);
        let v_t = svd
            .v_t
            .ok_or_else(|| Error::Numerical("SVD did not return right singular vectors".into()))?;
        let sv = svd.singular_values;
        let mut idx: Vec<usize> = (0..sv.len()).collect();
        idx.sort_by(|&a, &b| sv[b].total_cmp(&sv[a]).then(a.cmp(&b)));
        let smax = idx.first().map(|&i| sv[i]).unwrap_or(0.0);
        let tol = smax * (n.max(j) as f64) * f64::EPSILON;
        let rank = idx.iter().filter(|&&i| sv[i] > tol).count();

        let mut h = Array2::zeros((p, j));
        for (row, &i) in idx.iter().take(p.min(rank)).enumerate() {
            let mut v: Vec<f64> = (0..j).map(|c| v_t[(i, c)]).collect();
            let lead = v
                .iter()
                .enumerate()
                .fold((0usize, 0.0f64), |acc, (c, x)| if x.abs() > acc.1 { (c, x.abs()) } else { acc })
                .0;
            if v[lead] < 0.0 {
                v.iter_mut().for_each(|x| *x = -*x);
            }
            for (c, x) in v.into_iter().enumerate() {
                h[[row, c]] = x;
            }
        }
        if p > rank {
            warnings.push(format!(
                "block '{}' has rank {} < P = {}; padded H with zero rows",
                data.block_names()[k],
                rank,
                p
            ));
        }
        out.push(h);
    }
    Ok((out, warnings))
}

/// Mean profile of each cluster, one row per label `1..=P`.
pub fn cluster_means(x: &Array2<f64>, partition: &Partition, p: usize) -> Array2<f64> {
    let mut h = Array2::zeros((p, x.ncols()));
    let mut counts = vec![0usize; p];
    for (i, &label) in partition.labels().iter().enumerate() {
        let mut row = h.row_mut(label - 1);
        row += &x.row(i);
        counts[label - 1] += 1;
    }
    for (mut row, &c) in h.rows_mut().into_iter().zip(&counts) {
        if c > 0 {
            row /= c as f64;
        }
    }
    h
}

/// Per block: Ward clustering of the samples cut at `P`, then cluster means.
pub fn init_hclust(data: &MultiBlockDataset, p: usize) -> Result<Vec<Array2<f64>>> {
    check_p(data, p)?;
    data.blocks()
        .iter()
        .map(|x| {
            let partition = if x.nrows() < 2 {
                Partition::new(vec![1; x.nrows()])
            } else {
                ward_cluster(x.view())?.cut(p)?
            };
            Ok(cluster_means(x, &partition, p))
        })
        .collect()
}

/// `P` distinct samples drawn without replacement; the same samples seed
/// every block.
pub fn init_random(data: &MultiBlockDataset, p: usize, seed: u64) -> Result<Vec<Array2<f64>>> {
    check_p(data, p)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let idx = rand::seq::index::sample(&mut rng, data.n_samples(), p).into_vec();
    Ok(data.blocks().iter().map(|x| x.select(Axis(0), &idx)).collect())
}

fn euclidean_matrix(x: &Array2<f64>) -> Array2<f64> {
    let n = x.nrows();
    let mut d = Array2::zeros((n, n));
    for i in 0..n {
        for j in (i + 1)..n {
            let v: f64 = x
                .row(i)
                .iter()
                .zip(x.row(j).iter())
                .map(|(a, b)| (a - b).powi(2))
                .sum::<f64>()
                .sqrt();
            d[[i, j]] = v;
            d[[j, i]] = v;
        }
    }
    d
}

/// Scaled exponential kernel with a local bandwidth from each sample's
/// `k` nearest neighbours.
pub fn affinity_matrix(dist: &Array2<f64>, k: usize, alpha: f64) -> Array2<f64> {
    let n = dist.nrows();
    let eps = f64::EPSILON;
    let means: Vec<f64> = (0..n)
        .map(|i| {
            let mut row: Vec<f64> = dist.row(i).to_vec();
            row.sort_by(f64::total_cmp);
            // position 0 is the sample itself
            let upto = (k + 1).min(n);
            let near = &row[1.min(upto)..upto];
            let mean = if near.is_empty() {
                0.0
            } else {
                near.iter().sum::<f64>() / near.len() as f64
            };
            mean + eps
        })
        .collect();
    let norm = (2.0 * std::f64::consts::PI).sqrt();
    let mut dens = Array2::zeros((n, n));
    for i in 0..n {
        for j in 0..n {
            let d = dist[[i, j]];
            let sig = ((means[i] + means[j]) / 3.0 + d / 3.0 + eps).max(eps);
            let s = alpha * sig;
            dens[[i, j]] = (-(d * d) / (2.0 * s * s)).exp() / (norm * s);
        }
    }
    (&dens + &dens.t()) / 2.0
}

/// Status-matrix normalization: off-diagonal entries scaled by twice the
/// off-diagonal row sum, diagonal set to 1/2.
fn half_normalize(x: &Array2<f64>) -> Array2<f64> {
    let n = x.nrows();
    let mut out = x.clone();
    for i in 0..n {
        let mut s: f64 = x.row(i).sum() - x[[i, i]];
        if s == 0.0 {
            s = 1.0;
        }
        for j in 0..n {
            out[[i, j]] = if i == j { 0.5 } else { x[[i, j]] / (2.0 * s) };
        }
    }
    out
}

/// Keep the `k` largest entries of each row and renormalize rows to sum 1.
fn dominant_set(x: &Array2<f64>, k: usize) -> Array2<f64> {
    let n = x.nrows();
    let mut out = Array2::zeros((n, n));
    for i in 0..n {
        let mut idx: Vec<usize> = (0..n).collect();
        idx.sort_by(|&a, &b| x[[i, b]].total_cmp(&x[[i, a]]).then(a.cmp(&b)));
        let keep = &idx[..k.min(n)];
        let s: f64 = keep.iter().map(|&j| x[[i, j]]).sum();
        for &j in keep {
            out[[i, j]] = if s > 0.0 { x[[i, j]] / s } else { 0.0 };
        }
    }
    out
}

/// Fused sample affinity by cross-diffusion of the per-block kNN graphs.
///
/// With a single block the block diffuses against itself, so duplicating a
/// block leaves the result unchanged.
pub fn fused_affinity(data: &MultiBlockDataset, params: &SnfParams) -> Result<(Array2<f64>, Vec<String>)> {
    let n = data.n_samples();
    if n < 2 {
        return Err(Error::input("similarity fusion needs at least 2 samples"));
    }
    if !(params.alpha > 0.0) || params.fusion_iters == 0 {
        return Err(Error::input("SNF parameters must be positive"));
    }
    let mut warnings = Vec::new();
    let mut k = params.neighbors.unwrap_or_else(|| (n / 10).max(2));
    if k == 0 {
        return Err(Error::input("SNF neighbourhood size must be positive"));
    }
    if k >= n {
        warnings.push(format!("SNF neighbourhood {} clamped to {}", k, n - 1));
        k = n - 1;
    }

    let affinities: Vec<Array2<f64>> = data
        .blocks()
        .iter()
        .map(|x| affinity_matrix(&euclidean_matrix(x), k, params.alpha))
        .collect();
    let mut status: Vec<Array2<f64>> = affinities
        .iter()
        .map(|a| {
            let s = half_normalize(a);
            (&s + &s.t()) / 2.0
        })
        .collect();
    let local: Vec<Array2<f64>> = status.iter().map(|s| dominant_set(s, k)).collect();
    let views = status.len();

    for _ in 0..params.fusion_iters {
        let next: Vec<Array2<f64>> = (0..views)
            .map(|v| {
                let others = if views == 1 {
                    status[0].clone()
                } else {
                    let mut acc = Array2::<f64>::zeros((n, n));
                    for (u, s) in status.iter().enumerate() {
                        if u != v {
                            acc += s;
                        }
                    }
                    acc / (views - 1) as f64
                };
                local[v].dot(&others).dot(&local[v].t())
            })
            .collect();
        status = next
            .iter()
            .map(|m| {
                let s = half_normalize(m);
                (&s + &s.t()) / 2.0
            })
            .collect();
    }

    let mut fused = Array2::<f64>::zeros((n, n));
    for s in &status {
        fused += s;
    }
    fused /= views as f64;
    for mut row in fused.rows_mut() {
        let s = row.sum();
        if s > 0.0 {
            row /= s;
        }
    }
    let fused = (&fused + &fused.t() + Array2::<f64>::eye(n)) / 2.0;
    Ok((fused, warnings))
}

/// Cluster-indicator `W` from Ward clustering of the rows of `1 − A/max(A)`,
/// where `A` is the fused affinity with the diagonal excluded from the maximum.
pub fn init_snf(data: &MultiBlockDataset, p: usize, params: &SnfParams) -> Result<(Array2<f64>, Vec<String>)> {
    check_p(data, p)?;
    let (fused, warnings) = fused_affinity(data, params)?;
    let n = fused.nrows();
    let mut max_off: f64 = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                max_off = max_off.max(fused[[i, j]]);
            }
        }
    }
    if !(max_off > 0.0) {
        return Err(Error::Numerical("fused affinity is identically zero".into()));
    }
    let dist = Array2::from_shape_fn((n, n), |(i, j)| {
        if i == j {
            0.0
        } else {
            (1.0 - fused[[i, j]] / max_off).max(0.0)
        }
    });
    // Each sample's row of distances is its profile; Ward on those profiles
    // separates groups even when most raw distances are close to 1.
    let partition = ward_cluster(dist.view())?.cut(p)?;
    Ok((indicator(&partition, p), warnings))
}

/// One-hot rows from a partition with labels `1..=p`.
pub fn indicator(partition: &Partition, p: usize) -> Array2<f64> {
    let mut w = Array2::zeros((partition.len(), p));
    for (i, &l) in partition.labels().iter().enumerate() {
        w[[i, l - 1]] = 1.0;
    }
    w
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn ds(blocks: Vec<Array2<f64>>) -> MultiBlockDataset {
        MultiBlockDataset::from_blocks(blocks).unwrap()
    }

    #[test]
    fn svd_diagonal_top_vector() {
        let data = ds(vec![array![[3.0, 0.0], [0.0, 1.0]]]);
        let (h, warn) = init_svd(&data, 1).unwrap();
        assert!(warn.is_empty());
        assert!((h[0][[0, 0]] - 1.0).abs() < 1e-12);
        assert!(h[0][[0, 1]].abs() < 1e-12);
    }

    #[test]
    fn svd_rows_unit_norm_and_padding() {
        let x = array![[1.0, 2.0, 3.0], [2.0, 4.0, 6.0], [1.0, 0.0, 1.0]];
        let data = ds(vec![x]);
        let (h, warn) = init_svd(&data, 3).unwrap();
        for r in 0..2 {
            let norm: f64 = h[0].row(r).iter().map(|v| v * v).sum();
            assert!((norm - 1.0).abs() < 1e-10);
        }
        assert!(h[0].row(2).iter().all(|v| *v == 0.0));
        assert_eq!(warn.len(), 1);
    }

    #[test]
    fn svd_full_rank_reconstructs() {
        let x = array![[1.0, 2.0], [3.0, -1.0], [0.5, 0.25]];
        let data = ds(vec![x.clone()]);
        let (h, _) = init_svd(&data, 2).unwrap();
        // Rows of H span the row space: projecting X onto them is exact.
        let proj = x.dot(&h[0].t()).dot(&h[0]);
        for (a, b) in proj.iter().zip(x.iter()) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn hclust_means() {
        let x = array![[0.0, 0.0], [0.2, 0.0], [10.0, 10.0], [10.0, 10.4]];
        let data = ds(vec![x.clone()]);
        let h = init_hclust(&data, 2).unwrap();
        assert_eq!(h[0], array![[0.1, 0.0], [10.0, 10.2]]);
        let one = init_hclust(&data, 1).unwrap();
        assert_eq!(one[0], array![[5.05, 5.1]]);
        let all = init_hclust(&data, 4).unwrap();
        assert_eq!(all[0], x);
    }

    #[test]
    fn random_rows_come_from_data() {
        let x = Array2::from_shape_fn((10, 3), |(i, j)| (i * 3 + j) as f64);
        let y = Array2::from_shape_fn((10, 2), |(i, j)| (i * 2 + j) as f64 * 0.5);
        let data = ds(vec![x.clone(), y.clone()]);
        let a = init_random(&data, 4, 3).unwrap();
        assert_eq!(a, init_random(&data, 4, 3).unwrap());
        for r in 0..4 {
            let src = (a[0][[r, 0]] / 3.0) as usize;
            assert_eq!(a[0].row(r), x.row(src));
            assert_eq!(a[1].row(r), y.row(src));
        }
    }

    #[test]
    fn snf_indicator_rows() {
        let x = Array2::from_shape_fn((12, 4), |(i, j)| if i < 6 { 0.0 } else { 5.0 } + ((i * 7 + j * 3) % 5) as f64 * 0.1);
        let data = ds(vec![x]);
        let (w, _) = init_snf(&data, 2, &SnfParams::default()).unwrap();
        for row in w.rows() {
            assert_eq!(row.sum(), 1.0);
            assert_eq!(row.iter().filter(|v| **v == 1.0).count(), 1);
        }
        assert_eq!(w.column(0).sum(), 6.0);
    }

    #[test]
    fn snf_neighbors_clamped() {
        let x = Array2::from_shape_fn((4, 2), |(i, j)| (i * 2 + j) as f64);
        let data = ds(vec![x]);
        let params = SnfParams {
            neighbors: Some(10),
            ..SnfParams::default()
        };
        let (_, warn) = init_snf(&data, 2, &params).unwrap();
        assert_eq!(warn.len(), 1);
    }
}
