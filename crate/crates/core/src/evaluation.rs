//! Clustering and variable-selection metrics, variable ranking and
//! leave-one-out stability of the selected variables.

use std::collections::HashMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::clustering::Partition;
use crate::error::{Error, Result};
use crate::factorization::{fit, FactorModel, FitOptions, MultiBlockDataset, PenaltyConfig};

fn choose2(k: usize) -> f64 {
    let k = k as f64;
    k * (k - 1.0) / 2.0
}

/// True when both labelings induce the same grouping of samples.
pub fn same_grouping(a: &[usize], b: &[usize]) -> bool {
    if a.len() != b.len() {
        return false;
    }
    let mut fwd = HashMap::new();
    let mut back = HashMap::new();
    for (&x, &y) in a.iter().zip(b) {
        if *fwd.entry(x).or_insert(y) != y || *back.entry(y).or_insert(x) != x {
            return false;
        }
    }
    true
}

/// Adjusted Rand index from the contingency table of the two partitions.
///
/// When the expected index equals its maximum the index is undefined; we
/// return 1 for identical groupings and 0 otherwise.
pub fn adjusted_rand_index(a: &Partition, b: &Partition) -> Result<f64> {
    ari_labels(a.labels(), b.labels())
}

pub fn ari_labels(a: &[usize], b: &[usize]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::input(format!(
            "partition lengths differ: {} vs {}",
            a.len(),
            b.len()
        )));
    }
    let n = a.len();
    let mut table: HashMap<(usize, usize), usize> = HashMap::new();
    let mut rows: HashMap<usize, usize> = HashMap::new();
    let mut cols: HashMap<usize, usize> = HashMap::new();
    for (&x, &y) in a.iter().zip(b) {
        *table.entry((x, y)).or_default() += 1;
        *rows.entry(x).or_default() += 1;
        *cols.entry(y).or_default() += 1;
    }
    let index: f64 = table.values().map(|&c| choose2(c)).sum();
    let sum_a: f64 = rows.values().map(|&c| choose2(c)).sum();
    let sum_b: f64 = cols.values().map(|&c| choose2(c)).sum();
    let total = choose2(n);
    let expected = if total > 0.0 { sum_a * sum_b / total } else { 0.0 };
    let max = 0.5 * (sum_a + sum_b);
    if max == expected {
        return Ok(if same_grouping(a, b) { 1.0 } else { 0.0 });
    }
    Ok((index - expected) / (max - expected))
}

/// Area under the ROC curve of `scores` (higher = more likely positive).
///
/// Tied scores advance TPR and FPR together, which gives the trapezoid rule
/// the Mann–Whitney value with ties counted as one half.
pub fn auroc(scores: &[f64], truth: &[bool]) -> Result<f64> {
    if scores.len() != truth.len() {
        return Err(Error::input("scores and truth have different lengths"));
    }
    let pos = truth.iter().filter(|&&t| t).count();
    let neg = truth.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::UndefinedRoc(format!(
            "{} positives and {} negatives",
            pos, neg
        )));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::input("scores contain NaN"));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&i, &j| scores[j].total_cmp(&scores[i]).then(i.cmp(&j)));
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut area = 0.0;
    let mut k = 0;
    while k < order.len() {
        let s = scores[order[k]];
        let (tp0, fp0) = (tp, fp);
        while k < order.len() && scores[order[k]] == s {
            if truth[order[k]] {
                tp += 1;
            } else {
                fp += 1;
            }
            k += 1;
        }
        let width = (fp - fp0) as f64 / neg as f64;
        area += width * (tp0 + tp) as f64 / (2.0 * pos as f64);
    }
    Ok(area)
}

/// Variables of one block ordered by decreasing spread across components.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlockRanking {
    pub block: String,
    /// Variable ids in rank order.
    pub variable_ids: Vec<String>,
    /// Column indices in rank order.
    pub order: Vec<usize>,
    /// Scores in rank order.
    pub scores: Vec<f64>,
    /// Selection flags in rank order.
    pub selected: Vec<bool>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VariableRanking {
    pub blocks: Vec<BlockRanking>,
}

impl BlockRanking {
    /// AUROC of this ranking against a set of true-positive variable ids.
    pub fn auroc(&self, truth: &[String]) -> Result<f64> {
        let set: std::collections::HashSet<&str> = truth.iter().map(|s| s.as_str()).collect();
        let flags: Vec<bool> = self.variable_ids.iter().map(|v| set.contains(v.as_str())).collect();
        auroc(&self.scores, &flags)
    }
}

/// Population standard deviation of each column of `H`.
pub fn column_spread(h: &ndarray::Array2<f64>) -> Vec<f64> {
    let p = h.nrows() as f64;
    h.columns()
        .into_iter()
        .map(|col| {
            let mean = col.sum() / p;
            (col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / p).sqrt()
        })
        .collect()
}

/// Rank every block's variables by the standard deviation of their
/// coefficients. A variable is selected when some coefficient exceeds
/// `threshold` in magnitude (`0.0` means any exact nonzero).
pub fn rank_variables(model: &FactorModel, threshold: f64) -> VariableRanking {
    let blocks = model
        .h
        .iter()
        .enumerate()
        .map(|(k, h)| {
            let spread = column_spread(h);
            let mut order: Vec<usize> = (0..spread.len()).collect();
            order.sort_by(|&i, &j| spread[j].total_cmp(&spread[i]).then(i.cmp(&j)));
            let selected_col: Vec<bool> = h
                .columns()
                .into_iter()
                .map(|c| c.iter().any(|v| v.abs() > threshold))
                .collect();
            BlockRanking {
                block: model.block_names[k].clone(),
                variable_ids: order.iter().map(|&j| model.variable_ids[k][j].clone()).collect(),
                scores: order.iter().map(|&j| spread[j]).collect(),
                selected: order.iter().map(|&j| selected_col[j]).collect(),
                order,
            }
        })
        .collect();
    VariableRanking { blocks }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlockStability {
    pub block: String,
    pub variable_ids: Vec<String>,
    pub frequency: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StabilityReport {
    pub blocks: Vec<BlockStability>,
    /// Successful leave-one-out fits.
    pub run_count: usize,
    /// Samples whose leave-one-out fit failed, with the error message.
    pub failed_runs: Vec<(String, String)>,
    pub warnings: Vec<String>,
}

/// Leave-one-sample-out refits; each variable's frequency is the share of
/// runs in which at least one of its coefficients is nonzero.
pub fn jackknife(
    data: &MultiBlockDataset,
    p: usize,
    penalties: &PenaltyConfig,
    opts: &FitOptions,
) -> Result<StabilityReport> {
    let n = data.n_samples();
    if n < 3 {
        return Err(Error::input("jackknife needs at least 3 samples"));
    }
    let runs: Vec<Result<Vec<Vec<bool>>>> = (0..n)
        .into_par_iter()
        .map(|left_out| {
            let keep: Vec<usize> = (0..n).filter(|&i| i != left_out).collect();
            let sub = data.subset_samples(&keep)?;
            let pen = penalties.subset_samples(&keep);
            let model = fit(&sub, p, &pen, opts)?;
            Ok(model
                .h
                .iter()
                .map(|h| {
                    h.columns()
                        .into_iter()
                        .map(|c| c.iter().any(|v| *v != 0.0))
                        .collect()
                })
                .collect())
        })
        .collect();

    let mut counts: Vec<Vec<usize>> = data.blocks().iter().map(|b| vec![0; b.ncols()]).collect();
    let mut ok = 0usize;
    let mut failed_runs = Vec::new();
    for (i, run) in runs.into_iter().enumerate() {
        match run {
            Ok(sel) => {
                ok += 1;
                for (c, s) in counts.iter_mut().zip(sel) {
                    for (cj, sj) in c.iter_mut().zip(s) {
                        *cj += sj as usize;
                    }
                }
            }
            Err(e) => failed_runs.push((data.sample_ids()[i].clone(), e.to_string())),
        }
    }
    if ok == 0 {
        return Err(Error::Numerical("every leave-one-out fit failed".into()));
    }
    let mut warnings = Vec::new();
    if !failed_runs.is_empty() {
        warnings.push(format!(
            "{} of {} leave-one-out fits failed; frequencies use {} successful runs",
            failed_runs.len(),
            n,
            ok
        ));
    }
    let blocks = counts
        .into_iter()
        .enumerate()
        .map(|(k, c)| BlockStability {
            block: data.block_names()[k].clone(),
            variable_ids: data.variable_ids()[k].clone(),
            frequency: c.into_iter().map(|v| v as f64 / ok as f64).collect(),
        })
        .collect();
    Ok(StabilityReport {
        blocks,
        run_count: ok,
        failed_runs,
        warnings,
    })
}
