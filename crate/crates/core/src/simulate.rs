//! Synthetic multi-block benchmarks with known groups and driver variables,
//! and the methylation M-value transform.
//!
//! Each block draws "foreground" values for the samples of a group on that
//! group's relevant variables and "background" values everywhere else, then
//! applies block-specific noise. The eight registered benchmarks are
//! reconstructions: group structure follows the published design, the
//! distribution parameters and noise levels are our own documented choices.

use indexmap::IndexMap;
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Beta, Distribution as _, Normal};
use serde::{Deserialize, Serialize};

use crate::clustering::Partition;
use crate::error::{Error, Result};
use crate::factorization::{mix_seed, MultiBlockDataset};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Signal {
    /// Background `N(0, sd²)`, foreground `N(shift, sd²)`.
    Gaussian { shift: f64, sd: f64 },
    /// Bernoulli rates.
    Binary { foreground: f64, background: f64 },
    /// Beta shape pairs `(a, b)`.
    BetaLike {
        foreground: (f64, f64),
        background: (f64, f64),
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlockSpec {
    pub name: String,
    pub n_vars: usize,
    /// Relevant variables driven by each group (disjoint across groups).
    pub relevant_per_group: usize,
    pub signal: Signal,
    /// Gaussian: sd of additive noise. Binary: bit-flip probability.
    /// Beta-like: probability of drawing from the other component.
    pub noise: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimSpec {
    pub name: String,
    pub group_sizes: Vec<usize>,
    pub blocks: Vec<BlockSpec>,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimTruth {
    pub labels: Partition,
    /// Per block: `(variable index, driving group label)`.
    pub relevant: Vec<Vec<(usize, usize)>>,
}

impl SimTruth {
    /// Relevant variable ids of block `k`.
    pub fn relevant_ids(&self, data: &MultiBlockDataset, k: usize) -> Vec<String> {
        self.relevant[k]
            .iter()
            .map(|&(j, _)| data.variable_ids()[k][j].clone())
            .collect()
    }

    /// JSON-ready form keyed by sample, block and variable ids.
    pub fn to_file(&self, data: &MultiBlockDataset) -> TruthFile {
        TruthFile {
            labels: data
                .sample_ids()
                .iter()
                .cloned()
                .zip(self.labels.labels().iter().copied())
                .collect(),
            relevant: (0..data.n_blocks())
                .map(|k| (data.block_names()[k].clone(), self.relevant_ids(data, k)))
                .collect(),
        }
    }
}

/// On-disk ground truth: `{"labels": {sample: int}, "relevant": {block: [id]}}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TruthFile {
    pub labels: IndexMap<String, usize>,
    pub relevant: IndexMap<String, Vec<String>>,
}

fn in_open_unit(v: f64) -> bool {
    v > 0.0 && v < 1.0
}

impl SimSpec {
    pub fn validate(&self) -> Result<()> {
        if self.group_sizes.is_empty() || self.group_sizes.contains(&0) {
            return Err(Error::input("group sizes must be positive"));
        }
        if self.blocks.is_empty() {
            return Err(Error::input("simulation needs at least one block"));
        }
        let groups = self.group_sizes.len();
        for b in &self.blocks {
            if b.n_vars == 0 {
                return Err(Error::input(format!("block '{}' has no variables", b.name)));
            }
            if b.relevant_per_group * groups > b.n_vars {
                return Err(Error::input(format!(
                    "block '{}': {} groups × {} relevant variables exceed {} variables",
                    b.name, groups, b.relevant_per_group, b.n_vars
                )));
            }
            let ok = match &b.signal {
                Signal::Gaussian { shift, sd } => shift.is_finite() && *sd > 0.0 && b.noise >= 0.0,
                Signal::Binary {
                    foreground,
                    background,
                } => in_open_unit(*foreground) && in_open_unit(*background) && (0.0..1.0).contains(&b.noise),
                Signal::BetaLike {
                    foreground,
                    background,
                } => {
                    [foreground.0, foreground.1, background.0, background.1]
                        .iter()
                        .all(|s| *s > 0.0 && s.is_finite())
                        && (0.0..1.0).contains(&b.noise)
                }
            };
            if !ok || !b.noise.is_finite() {
                return Err(Error::input(format!("block '{}' has invalid parameters", b.name)));
            }
        }
        Ok(())
    }

    pub fn n_samples(&self) -> usize {
        self.group_sizes.iter().sum()
    }
}

/// Draw a dataset and its ground truth. Samples are ordered group by group.
pub fn generate(spec: &SimSpec) -> Result<(MultiBlockDataset, SimTruth)> {
    spec.validate()?;
    let n = spec.n_samples();
    let labels: Vec<usize> = spec
        .group_sizes
        .iter()
        .enumerate()
        .flat_map(|(g, &size)| std::iter::repeat_n(g + 1, size))
        .collect();
    let groups = spec.group_sizes.len();
    let width = n.to_string().len();
    let sample_ids: Vec<String> = (1..=n).map(|i| format!("s{:0width$}", i)).collect();

    let mut blocks = Vec::with_capacity(spec.blocks.len());
    let mut variable_ids = Vec::with_capacity(spec.blocks.len());
    let mut relevant = Vec::with_capacity(spec.blocks.len());
    for (k, b) in spec.blocks.iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(spec.seed, k as u64));
        let chosen = rand::seq::index::sample(&mut rng, b.n_vars, b.relevant_per_group * groups).into_vec();
        // driver[j] = Some(group label) for relevant variables
        let mut driver = vec![None; b.n_vars];
        let mut rel = Vec::with_capacity(chosen.len());
        for (pos, &j) in chosen.iter().enumerate() {
            let g = pos / b.relevant_per_group.max(1) + 1;
            driver[j] = Some(g);
            rel.push((j, g));
        }
        rel.sort_unstable();

        let mut x = Array2::zeros((n, b.n_vars));
        for i in 0..n {
            for j in 0..b.n_vars {
                let fg = driver[j] == Some(labels[i]);
                x[[i, j]] = draw(&b.signal, b.noise, fg, &mut rng)?;
            }
        }
        let vw = b.n_vars.to_string().len();
        variable_ids.push((1..=b.n_vars).map(|j| format!("{}_{:0vw$}", b.name, j)).collect());
        blocks.push(x);
        relevant.push(rel);
    }
    let data = MultiBlockDataset::new(
        blocks,
        sample_ids,
        variable_ids,
        spec.blocks.iter().map(|b| b.name.clone()).collect(),
    )?;
    Ok((
        data,
        SimTruth {
            labels: Partition::new(labels),
            relevant,
        },
    ))
}

fn draw(signal: &Signal, noise: f64, fg: bool, rng: &mut ChaCha8Rng) -> Result<f64> {
    let bad = |e: String| Error::input(format!("invalid distribution: {e}"));
    Ok(match signal {
        Signal::Gaussian { shift, sd } => {
            let mean = if fg { *shift } else { 0.0 };
            let base = Normal::new(mean, *sd).map_err(|e| bad(e.to_string()))?.sample(rng);
            if noise > 0.0 {
                base + Normal::new(0.0, noise).map_err(|e| bad(e.to_string()))?.sample(rng)
            } else {
                base
            }
        }
        Signal::Binary {
            foreground,
            background,
        } => {
            let rate = if fg { *foreground } else { *background };
            let mut bit = rng.random::<f64>() < rate;
            if noise > 0.0 && rng.random::<f64>() < noise {
                bit = !bit;
            }
            if bit {
                1.0
            } else {
                0.0
            }
        }
        Signal::BetaLike {
            foreground,
            background,
        } => {
            let mut use_fg = fg;
            if noise > 0.0 && rng.random::<f64>() < noise {
                use_fg = !use_fg;
            }
            let (a, b) = if use_fg { *foreground } else { *background };
            let v = Beta::new(a, b).map_err(|e| bad(e.to_string()))?.sample(rng);
            v.clamp(1e-12, 1.0 - 1e-12)
        }
    })
}

/// Reference parameters shared by the registered benchmarks.
pub mod defaults {
    pub const GAUSSIAN_SHIFT: f64 = 2.0;
    pub const GAUSSIAN_SD: f64 = 1.0;
    pub const BINARY_FOREGROUND: f64 = 0.7;
    pub const BINARY_BACKGROUND: f64 = 0.05;
    pub const BETA_FOREGROUND: (f64, f64) = (8.0, 2.0);
    pub const BETA_BACKGROUND: (f64, f64) = (2.0, 8.0);

    pub const GAUSSIAN_VARS: usize = 100;
    pub const BINARY_VARS: usize = 50;
    pub const BETA_VARS: usize = 500;

    pub const GAUSSIAN_RELEVANT: usize = 5;
    pub const BINARY_RELEVANT: usize = 5;
    pub const BETA_RELEVANT: usize = 25;

    pub const GAUSSIAN_NOISE: f64 = 0.5;
    pub const BINARY_NOISE: f64 = 0.02;
    pub const BETA_NOISE: f64 = 0.05;

    pub const UNBALANCED_GROUPS: [usize; 4] = [25, 20, 5, 10];
}

struct Levels {
    gaussian_noise: f64,
    binary_noise: f64,
    beta_noise: f64,
    relevant_scale: usize,
}

const REFERENCE: Levels = Levels {
    gaussian_noise: defaults::GAUSSIAN_NOISE,
    binary_noise: defaults::BINARY_NOISE,
    beta_noise: defaults::BETA_NOISE,
    relevant_scale: 1,
};

fn three_blocks(name: &str, group_sizes: Vec<usize>, l: Levels, seed: u64) -> SimSpec {
    use defaults::*;
    SimSpec {
        name: name.to_string(),
        group_sizes,
        blocks: vec![
            BlockSpec {
                name: "gaussian".into(),
                n_vars: GAUSSIAN_VARS,
                relevant_per_group: GAUSSIAN_RELEVANT * l.relevant_scale,
                signal: Signal::Gaussian {
                    shift: GAUSSIAN_SHIFT,
                    sd: GAUSSIAN_SD,
                },
                noise: l.gaussian_noise,
            },
            BlockSpec {
                name: "binary".into(),
                n_vars: BINARY_VARS,
                relevant_per_group: BINARY_RELEVANT * l.relevant_scale,
                signal: Signal::Binary {
                    foreground: BINARY_FOREGROUND,
                    background: BINARY_BACKGROUND,
                },
                noise: l.binary_noise,
            },
            BlockSpec {
                name: "beta".into(),
                n_vars: BETA_VARS,
                relevant_per_group: BETA_RELEVANT * l.relevant_scale,
                signal: Signal::BetaLike {
                    foreground: BETA_FOREGROUND,
                    background: BETA_BACKGROUND,
                },
                noise: l.beta_noise,
            },
        ],
        seed,
    }
}

/// Benchmark `B1`..`B8` with the given seed.
///
/// B1 reference; B2 more Gaussian noise; B3 more Gaussian and binary noise;
/// B4 more beta and binary noise; B5 twice as many relevant variables;
/// B6–B8 two, three and four balanced groups of 60 samples in total.
pub fn benchmark(name: &str, seed: u64) -> Result<SimSpec> {
    let unbalanced = defaults::UNBALANCED_GROUPS.to_vec();
    let spec = match name.to_ascii_uppercase().as_str() {
        "B1" => three_blocks("B1", unbalanced, REFERENCE, seed),
        "B2" => three_blocks(
            "B2",
            unbalanced,
            Levels {
                gaussian_noise: 1.0,
                ..REFERENCE
            },
            seed,
        ),
        "B3" => three_blocks(
            "B3",
            unbalanced,
            Levels {
                gaussian_noise: 1.0,
                binary_noise: 0.1,
                ..REFERENCE
            },
            seed,
        ),
        "B4" => three_blocks(
            "B4",
            unbalanced,
            Levels {
                beta_noise: 0.2,
                binary_noise: 0.1,
                ..REFERENCE
            },
            seed,
        ),
        "B5" => three_blocks(
            "B5",
            unbalanced,
            Levels {
                relevant_scale: 2,
                ..REFERENCE
            },
            seed,
        ),
        "B6" => three_blocks("B6", vec![30, 30], REFERENCE, seed),
        "B7" => three_blocks("B7", vec![20, 20, 20], REFERENCE, seed),
        "B8" => three_blocks("B8", vec![15, 15, 15, 15], REFERENCE, seed),
        other => return Err(Error::input(format!("unknown benchmark '{other}'"))),
    };
    Ok(spec)
}

/// The eight registered benchmarks with seed 0.
pub fn default_benchmarks() -> Vec<SimSpec> {
    (1..=8)
        .map(|i| benchmark(&format!("B{i}"), 0).expect("registered benchmark"))
        .collect()
}

pub const DEFAULT_M_EPSILON: f64 = 0.001;

/// `M = log2((β + ε) / (1 − (β + ε)))`, elementwise. Requires `β ∈ [0, 1]`
/// and `β + ε < 1`.
pub fn m_value_transform(beta: &Array2<f64>, epsilon: f64) -> Result<Array2<f64>> {
    if !(epsilon > 0.0) || !epsilon.is_finite() {
        return Err(Error::input("epsilon must be positive"));
    }
    if let Some(v) = beta.iter().find(|v| !(**v >= 0.0 && **v <= 1.0)) {
        return Err(Error::input(format!("beta value {v} outside [0, 1]")));
    }
    if let Some(v) = beta.iter().find(|v| **v + epsilon >= 1.0) {
        return Err(Error::input(format!(
            "beta value {v} plus epsilon {epsilon} reaches 1; the M-value is undefined"
        )));
    }
    Ok(beta.mapv(|b| {
        let u = b + epsilon;
        (u / (1.0 - u)).log2()
    }))
}

/// Inverse of [`m_value_transform`].
pub fn m_value_inverse(m: &Array2<f64>, epsilon: f64) -> Array2<f64> {
    m.mapv(|v| {
        let r = v.exp2();
        r / (1.0 + r) - epsilon
    })
}
