//! Penalized integrative matrix factorization (PIntMF) for multi-block data.
//!
//! Several data blocks measured on the same samples are factorized jointly as
//! `X^k ≈ W·H^k`, where `W` is a shared non-negative, row-normalized basis
//! and each `H^k` is sparse. Samples are clustered from the rows of `W`;
//! nonzero columns of `H^k` mark the selected variables of block `k`.
//!
//! ```no_run
//! use pintmf::{fit, FitOptions, PenaltyConfig};
//! use pintmf::simulate::{benchmark, generate};
//!
//! let (data, truth) = generate(&benchmark("B1", 7)?)?;
//! let model = fit(&data, 4, &PenaltyConfig::auto(7), &FitOptions::default())?;
//! let ari = pintmf::adjusted_rand_index(&model.partition()?, &truth.labels)?;
//! println!("ARI = {ari}");
//! # Ok::<(), pintmf::Error>(())
//! ```

pub mod cli;
pub mod clustering;
pub mod error;
pub mod evaluation;
pub mod factorization;
pub mod initialization;
pub mod io;
pub mod lasso;
pub mod model_selection;
pub mod simulate;

pub use clustering::{ward_cluster, Dendrogram, Partition};
pub use error::{Error, Result};
pub use evaluation::{adjusted_rand_index, auroc, jackknife, rank_variables};
pub use factorization::{fit, fit_observed, FactorModel, FitOptions, MultiBlockDataset, PenaltyConfig, PenaltyMode};
pub use initialization::{InitKind, InitSpec};
pub use lasso::{solve_lasso, LassoProblem, SolverOptions};
pub use model_selection::{scan_p, suggest_p, SelectionReport};
