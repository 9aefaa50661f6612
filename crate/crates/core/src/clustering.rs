//! Agglomerative clustering with Ward linkage, tree cutting and cophenetic
//! distances.
//!
//! Linkage follows the `ward.D2` convention: the Lance–Williams recurrence is
//! run on squared Euclidean distances and merge heights are reported as the
//! square root of the merged dissimilarity.

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One agglomeration step. Leaves are nodes `0..n`; the `k`-th merge creates
/// node `n + k`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Merge {
    pub left: usize,
    pub right: usize,
    pub height: f64,
    pub size: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dendrogram {
    merges: Vec<Merge>,
    leaf_count: usize,
    leaf_labels: Vec<String>,
}

/// Hard cluster assignment, one label per sample.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Partition {
    labels: Vec<usize>,
}

impl Partition {
    pub fn new(labels: Vec<usize>) -> Self {
        Partition { labels }
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn n_clusters(&self) -> usize {
        let mut seen: Vec<usize> = self.labels.clone();
        seen.sort_unstable();
        seen.dedup();
        seen.len()
    }

    /// Restrict to the listed sample positions.
    pub fn subset(&self, idx: &[usize]) -> Partition {
        Partition::new(idx.iter().map(|&i| self.labels[i]).collect())
    }
}

/// Position of pair `(i, j)`, `i < j`, in a condensed distance vector.
pub fn condensed_index(n: usize, i: usize, j: usize) -> usize {
    debug_assert!(i < j && j < n);
    n * i - i * (i + 1) / 2 + (j - i - 1)
}

/// Condensed Euclidean distances between the rows of `points`.
pub fn pairwise_distances(points: ArrayView2<'_, f64>) -> Vec<f64> {
    let n = points.nrows();
    let mut out = Vec::with_capacity(n * n.saturating_sub(1) / 2);
    for i in 0..n {
        for j in (i + 1)..n {
            let d2: f64 = points
                .row(i)
                .iter()
                .zip(points.row(j).iter())
                .map(|(a, b)| (a - b).powi(2))
                .sum();
            out.push(d2.sqrt());
        }
    }
    out
}

/// Ward clustering of the rows of `points`.
pub fn ward_cluster(points: ArrayView2<'_, f64>) -> Result<Dendrogram> {
    let n = points.nrows();
    if n < 2 {
        return Err(Error::input("Ward clustering needs at least 2 points"));
    }
    if points.iter().any(|v| !v.is_finite()) {
        return Err(Error::input("points contain non-finite values"));
    }
    let mut d2 = Array2::<f64>::zeros((n, n));
    for i in 0..n {
        for j in (i + 1)..n {
            let v: f64 = points
                .row(i)
                .iter()
                .zip(points.row(j).iter())
                .map(|(a, b)| (a - b).powi(2))
                .sum();
            d2[[i, j]] = v;
            d2[[j, i]] = v;
        }
    }
    Ok(ward_on_squared(d2))
}

/// Ward clustering from a square matrix of (not squared) dissimilarities.
pub fn ward_cluster_distances(dist: ArrayView2<'_, f64>) -> Result<Dendrogram> {
    let n = dist.nrows();
    if n < 2 || dist.ncols() != n {
        return Err(Error::input("distance matrix must be square with at least 2 rows"));
    }
    if dist.iter().any(|v| !v.is_finite() || *v < 0.0) {
        return Err(Error::input("distances must be finite and non-negative"));
    }
    let d2 = Array2::from_shape_fn((n, n), |(i, j)| {
        if i == j {
            0.0
        } else {
            let d = 0.5 * (dist[[i, j]] + dist[[j, i]]);
            d * d
        }
    });
    Ok(ward_on_squared(d2))
}

fn ward_on_squared(mut d2: Array2<f64>) -> Dendrogram {
    let n = d2.nrows();
    let mut active = vec![true; n];
    let mut node = (0..n).collect::<Vec<_>>();
    let mut size = vec![1usize; n];
    let mut merges = Vec::with_capacity(n - 1);

    for step in 0..(n - 1) {
        // Row-major scan with strict comparison: ties go to the smallest (i, j).
        let mut best = (usize::MAX, usize::MAX);
        let mut best_val = f64::INFINITY;
        for i in 0..n {
            if !active[i] {
                continue;
            }
            for j in (i + 1)..n {
                if active[j] && d2[[i, j]] < best_val {
                    best_val = d2[[i, j]];
                    best = (i, j);
                }
            }
        }
        let (i, j) = best;
        let (si, sj) = (size[i] as f64, size[j] as f64);
        for k in 0..n {
            if !active[k] || k == i || k == j {
                continue;
            }
            let sk = size[k] as f64;
            let v = ((si + sk) * d2[[k, i]] + (sj + sk) * d2[[k, j]] - sk * best_val)
                / (si + sj + sk);
            let v = v.max(0.0);
            d2[[k, i]] = v;
            d2[[i, k]] = v;
        }
        merges.push(Merge {
            left: node[i],
            right: node[j],
            height: best_val.max(0.0).sqrt(),
            size: size[i] + size[j],
        });
        active[j] = false;
        node[i] = n + step;
        size[i] += size[j];
    }

    Dendrogram {
        merges,
        leaf_count: n,
        leaf_labels: (0..n).map(|i| i.to_string()).collect(),
    }
}

fn find(parent: &mut [usize], mut x: usize) -> usize {
    while parent[x] != x {
        parent[x] = parent[parent[x]];
        x = parent[x];
    }
    x
}

impl Dendrogram {
    pub fn merges(&self) -> &[Merge] {
        &self.merges
    }

    pub fn leaf_count(&self) -> usize {
        self.leaf_count
    }

    pub fn leaf_labels(&self) -> &[String] {
        &self.leaf_labels
    }

    pub fn with_leaf_labels(mut self, labels: Vec<String>) -> Result<Self> {
        if labels.len() != self.leaf_count {
            return Err(Error::input("leaf label count does not match the tree"));
        }
        self.leaf_labels = labels;
        Ok(self)
    }

    pub fn heights(&self) -> Vec<f64> {
        self.merges.iter().map(|m| m.height).collect()
    }

    /// Drop the `p − 1` last merges; labels `1..=p` follow first leaf appearance.
    pub fn cut(&self, p: usize) -> Result<Partition> {
        let n = self.leaf_count;
        if p == 0 || p > n {
            return Err(Error::input(format!("cannot cut {} leaves into {} clusters", n, p)));
        }
        let mut parent: Vec<usize> = (0..n).collect();
        // representative leaf of every node
        let mut rep: Vec<usize> = (0..n).collect();
        rep.reserve(n - 1);
        for m in &self.merges[..n - p] {
            let a = find(&mut parent, rep[m.left]);
            let b = find(&mut parent, rep[m.right]);
            let root = a.min(b);
            parent[a.max(b)] = root;
            rep.push(root);
        }
        let mut label_of_root = vec![0usize; n];
        let mut next = 0;
        let mut labels = Vec::with_capacity(n);
        for leaf in 0..n {
            let r = find(&mut parent, leaf);
            if label_of_root[r] == 0 {
                next += 1;
                label_of_root[r] = next;
            }
            labels.push(label_of_root[r]);
        }
        Ok(Partition::new(labels))
    }

    /// Condensed vector of lowest-common-merge heights.
    pub fn cophenetic_distances(&self) -> Vec<f64> {
        let n = self.leaf_count;
        let mut out = vec![0.0; n * (n - 1) / 2];
        let mut members: Vec<Vec<usize>> = (0..n).map(|i| vec![i]).collect();
        for m in &self.merges {
            let left = std::mem::take(&mut members[m.left]);
            let right = std::mem::take(&mut members[m.right]);
            for &a in &left {
                for &b in &right {
                    let (i, j) = if a < b { (a, b) } else { (b, a) };
                    out[condensed_index(n, i, j)] = m.height;
                }
            }
            let mut merged = left;
            merged.extend(right);
            members.push(merged);
        }
        out
    }
}

/// Pearson correlation; errors when either vector has zero variance.
pub fn pearson(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() || a.len() < 2 {
        return Err(Error::input("correlation needs two equal-length vectors of length >= 2"));
    }
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    let scale_a = a.iter().map(|v| v.abs()).fold(0.0, f64::max).max(f64::MIN_POSITIVE);
    let scale_b = b.iter().map(|v| v.abs()).fold(0.0, f64::max).max(f64::MIN_POSITIVE);
    let tiny = 1e-24;
    if saa <= tiny * scale_a * scale_a * n || sbb <= tiny * scale_b * scale_b * n {
        return Err(Error::DegenerateCorrelation);
    }
    Ok((sab / (saa.sqrt() * sbb.sqrt())).clamp(-1.0, 1.0))
}

/// Correlation between Euclidean distances of `points` and the cophenetic
/// distances of their Ward tree.
pub fn cophenetic_correlation(points: ArrayView2<'_, f64>) -> Result<f64> {
    if points.nrows() < 3 {
        return Err(Error::input("cophenetic correlation needs at least 3 points"));
    }
    let tree = ward_cluster(points)?;
    pearson(&pairwise_distances(points), &tree.cophenetic_distances())
}
