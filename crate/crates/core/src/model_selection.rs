//! Criteria for choosing the number of latent variables.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::clustering::cophenetic_correlation;
use crate::error::{Error, Result};
use crate::factorization::{fit, FactorModel, FitOptions, MultiBlockDataset, PenaltyConfig};

/// Per-block mean squared reconstruction error and their average.
pub fn mse(model: &FactorModel, data: &MultiBlockDataset) -> (Vec<f64>, f64) {
    let per: Vec<f64> = data
        .blocks()
        .iter()
        .enumerate()
        .map(|(k, x)| sse(model, x, k) / x.len() as f64)
        .collect();
    let total = per.iter().sum::<f64>() / per.len() as f64;
    (per, total)
}

fn sse(model: &FactorModel, x: &ndarray::Array2<f64>, k: usize) -> f64 {
    let fit = model.reconstruct(k);
    x.iter().zip(fit.iter()).map(|(a, b)| (a - b).powi(2)).sum()
}

/// Squared distance of each block to its per-sample mean profile.
pub fn baseline_ss(x: &ndarray::Array2<f64>) -> f64 {
    x.rows()
        .into_iter()
        .map(|row| {
            let m = row.mean().unwrap_or(0.0);
            row.iter().map(|v| (v - m).powi(2)).sum::<f64>()
        })
        .sum()
}

/// Share of variation explained relative to the row-mean baseline, per block
/// and averaged. A block whose baseline has no variation is reported as
/// `None`, which also makes the average `None`.
pub fn pve(model: &FactorModel, data: &MultiBlockDataset) -> (Vec<Option<f64>>, Option<f64>) {
    let per: Vec<Option<f64>> = data
        .blocks()
        .iter()
        .enumerate()
        .map(|(k, x)| {
            let base = baseline_ss(x);
            if base > 0.0 {
                Some(1.0 - sse(model, x, k) / base)
            } else {
                None
            }
        })
        .collect();
    let global = per
        .iter()
        .copied()
        .collect::<Option<Vec<f64>>>()
        .map(|v| v.iter().sum::<f64>() / v.len() as f64);
    (per, global)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SuggestionRule {
    /// First scanned P after which the cophenetic coefficient decreases.
    Brunet,
    /// The coefficient never decreased; the largest scanned P is returned.
    NoKnee,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SuggestedP {
    pub p: usize,
    pub rule: SuggestionRule,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SelectionReport {
    pub p_values: Vec<usize>,
    pub mse: Vec<Option<f64>>,
    pub mse_blocks: Vec<Vec<f64>>,
    pub pve: Vec<Option<f64>>,
    pub pve_blocks: Vec<Vec<Option<f64>>>,
    pub cophenetic: Vec<Option<f64>>,
    /// Error message of a failed fit, per P.
    pub failures: Vec<Option<String>>,
    pub suggested_p: Option<SuggestedP>,
    /// Smallest P after which global PVE rises by less than the plateau gap.
    pub pve_plateau_p: Option<usize>,
}

pub const PVE_PLATEAU_GAP: f64 = 0.01;

/// Brunet rule on the cophenetic coefficients of a report.
pub fn suggest_p(report: &SelectionReport) -> Result<SuggestedP> {
    let points: Vec<(usize, f64)> = report
        .p_values
        .iter()
        .zip(&report.cophenetic)
        .filter_map(|(&p, c)| c.map(|c| (p, c)))
        .collect();
    if points.len() < 2 {
        return Err(Error::input(
            "at least two cophenetic values are needed to suggest P",
        ));
    }
    for w in points.windows(2) {
        if w[1].1 < w[0].1 {
            return Ok(SuggestedP {
                p: w[0].0,
                rule: SuggestionRule::Brunet,
            });
        }
    }
    Ok(SuggestedP {
        p: points.last().map(|x| x.0).unwrap_or(0),
        rule: SuggestionRule::NoKnee,
    })
}

/// Smallest scanned P whose successor improves global PVE by less than `gap`.
pub fn pve_plateau(report: &SelectionReport, gap: f64) -> Option<usize> {
    let points: Vec<(usize, f64)> = report
        .p_values
        .iter()
        .zip(&report.pve)
        .filter_map(|(&p, v)| v.map(|v| (p, v)))
        .collect();
    points
        .windows(2)
        .find(|w| w[1].1 - w[0].1 < gap)
        .map(|w| w[0].0)
}

/// Fit one model per P and tabulate the selection criteria.
pub fn scan_p(
    data: &MultiBlockDataset,
    p_values: &[usize],
    penalties: &PenaltyConfig,
    opts: &FitOptions,
) -> Result<SelectionReport> {
    scan_p_with_models(data, p_values, penalties, opts).map(|(r, _)| r)
}

/// As [`scan_p`], also returning the fitted models (`None` where a fit failed).
pub fn scan_p_with_models(
    data: &MultiBlockDataset,
    p_values: &[usize],
    penalties: &PenaltyConfig,
    opts: &FitOptions,
) -> Result<(SelectionReport, Vec<Option<FactorModel>>)> {
    let n = data.n_samples();
    if p_values.is_empty() {
        return Err(Error::input("P range is empty"));
    }
    if let Some(&bad) = p_values.iter().find(|&&p| p < 2 || p > n) {
        return Err(Error::input(format!("P = {} outside [2, {}]", bad, n)));
    }
    let fits: Vec<Result<FactorModel>> = p_values
        .par_iter()
        .map(|&p| fit(data, p, penalties, opts))
        .collect();
    if fits.iter().all(|f| f.is_err()) {
        let msg = fits
            .iter()
            .filter_map(|f| f.as_ref().err().map(|e| e.to_string()))
            .next()
            .unwrap_or_default();
        return Err(Error::Numerical(format!("every fit in the P scan failed: {msg}")));
    }
    let k = data.n_blocks();
    let mut report = SelectionReport {
        p_values: p_values.to_vec(),
        mse: Vec::new(),
        mse_blocks: Vec::new(),
        pve: Vec::new(),
        pve_blocks: Vec::new(),
        cophenetic: Vec::new(),
        failures: Vec::new(),
        suggested_p: None,
        pve_plateau_p: None,
    };
    let mut models = Vec::new();
    for f in fits {
        match f {
            Ok(model) => {
                let (mb, mt) = mse(&model, data);
                let (pb, pt) = pve(&model, data);
                report.mse.push(Some(mt));
                report.mse_blocks.push(mb);
                report.pve.push(pt);
                report.pve_blocks.push(pb);
                report.cophenetic.push(cophenetic_correlation(model.w.view()).ok());
                report.failures.push(None);
                models.push(Some(model));
            }
            Err(e) => {
                report.mse.push(None);
                report.mse_blocks.push(vec![f64::NAN; 0]);
                report.pve.push(None);
                report.pve_blocks.push(vec![None; k]);
                report.cophenetic.push(None);
                report.failures.push(Some(e.to_string()));
                models.push(None);
            }
        }
    }
    report.suggested_p = suggest_p(&report).ok();
    report.pve_plateau_p = pve_plateau(&report, PVE_PLATEAU_GAP);
    Ok((report, models))
}
