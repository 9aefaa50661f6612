//! Command-line front end.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use indexmap::IndexMap;
use serde_json::json;

use crate::error::{Error, Result};
use crate::evaluation::{ari_labels, auroc, jackknife, rank_variables};
use crate::factorization::{fit, FitOptions, MultiBlockDataset, PenaltyConfig};
use crate::initialization::{InitKind, InitSpec};
use crate::io::{self, RunReport, StabilitySummary};
use crate::model_selection::scan_p_with_models;
use crate::simulate::{benchmark, generate, SimSpec};

/// Environment variable holding the worker thread count.
pub const THREADS_ENV: &str = "PINTMF_NUM_THREADS";

#[derive(Parser, Debug)]
#[command(name = "pintmf", version, about = "Penalized integrative matrix factorization")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Fit one model and write W, H, clusters, rankings and report.json.
    Fit(FitArgs),
    /// Scan a range of P and write report.json with the suggested P.
    SelectP(SelectArgs),
    /// Write a synthetic benchmark dataset and its ground truth.
    Simulate(SimulateArgs),
    /// Score clusters (and optionally rankings) against a truth file.
    Evaluate(EvaluateArgs),
    /// Leave-one-sample-out refits; writes stability_<block>.csv.
    Jackknife(JackknifeArgs),
}

#[derive(Args, Debug, Clone)]
struct DataArgs {
    /// Block CSV files (repeatable).
    #[arg(long = "block", required = true, num_args = 1..)]
    blocks: Vec<PathBuf>,
    /// Block names, one per file; defaults to the file stems.
    #[arg(long = "name")]
    names: Vec<String>,
}

#[derive(Args, Debug, Clone)]
struct ModelArgs {
    /// Fixed H penalty, one value or one per block.
    #[arg(long, value_delimiter = ',')]
    lambda: Vec<f64>,
    /// Fixed W penalty applied to every sample.
    #[arg(long)]
    mu: Option<f64>,
    #[arg(long, default_value = "snf")]
    init: InitKind,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 50)]
    max_iter: usize,
    #[arg(long, default_value_t = 5)]
    cv_folds: usize,
}

#[derive(Args, Debug)]
struct FitArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    model: ModelArgs,
    /// Number of latent variables.
    #[arg(long, conflicts_with = "p_range")]
    p: Option<usize>,
    /// Scan `MIN:MAX` and fit the suggested P.
    #[arg(long)]
    p_range: Option<String>,
    /// Selection threshold on |H| for the rankings.
    #[arg(long, default_value_t = 0.0)]
    threshold: f64,
    #[arg(long, default_value = "pintmf_out")]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct SelectArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long, default_value_t = 2)]
    p_min: usize,
    #[arg(long)]
    p_max: usize,
    #[arg(long, default_value = "pintmf_out")]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct SimulateArgs {
    /// Registered benchmark B1..B8.
    #[arg(long, conflicts_with = "spec", required_unless_present = "spec")]
    benchmark: Option<String>,
    /// JSON simulation spec; its seed is replaced by --seed when given.
    #[arg(long)]
    spec: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value = "pintmf_data")]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct EvaluateArgs {
    #[arg(long, default_value = "pintmf_out/clusters.csv")]
    clusters: PathBuf,
    #[arg(long, default_value = "pintmf_data/truth.json")]
    truth: PathBuf,
    /// Directory holding ranking_<block>.csv files to score.
    #[arg(long)]
    rankings: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct JackknifeArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long)]
    p: usize,
    #[arg(long, default_value = "pintmf_out")]
    out: PathBuf,
}

/// Parse `argv` (including the program name), run, and return the exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    configure_threads();
    match dispatch(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn configure_threads() {
    if let Some(n) = std::env::var(THREADS_ENV).ok().and_then(|v| v.parse::<usize>().ok()) {
        // A second call in one process keeps the first pool.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
}

fn dispatch(cmd: Command) -> Result<()> {
    match cmd {
        Command::Fit(a) => cmd_fit(a),
        Command::SelectP(a) => cmd_select(a),
        Command::Simulate(a) => cmd_simulate(a),
        Command::Evaluate(a) => cmd_evaluate(a),
        Command::Jackknife(a) => cmd_jackknife(a),
    }
}

fn warn_all(warnings: &[String]) {
    for w in warnings {
        log::warn!("{w}");
    }
}

fn load(data: &DataArgs) -> Result<(MultiBlockDataset, Vec<String>)> {
    let names = if data.names.is_empty() {
        None
    } else {
        Some(data.names.as_slice())
    };
    let (d, warnings) = io::load_blocks(&data.blocks, names)?;
    warn_all(&warnings);
    Ok((d, warnings))
}

fn settings(m: &ModelArgs, data: &MultiBlockDataset) -> Result<(PenaltyConfig, FitOptions)> {
    let penalties = match (m.lambda.as_slice(), m.mu) {
        ([], None) => PenaltyConfig {
            cv_folds: m.cv_folds,
            ..PenaltyConfig::auto(m.seed)
        },
        ([], Some(_)) | (_, None) => {
            return Err(Error::input("--lambda and --mu must be given together"));
        }
        (l, Some(mu)) => {
            let lambda = match l.len() {
                1 => vec![l[0]; data.n_blocks()],
                k if k == data.n_blocks() => l.to_vec(),
                k => {
                    return Err(Error::input(format!(
                        "{} lambda values for {} blocks",
                        k,
                        data.n_blocks()
                    )))
                }
            };
            PenaltyConfig::fixed(lambda, vec![mu; data.n_samples()])
        }
    };
    let opts = FitOptions {
        max_iter: m.max_iter,
        init: InitSpec {
            kind: m.init,
            seed: m.seed,
            ..InitSpec::default()
        },
        ..FitOptions::default()
    };
    Ok((penalties, opts))
}

fn parse_range(s: &str) -> Result<(usize, usize)> {
    let (a, b) = s
        .split_once(':')
        .ok_or_else(|| Error::input("--p-range must look like MIN:MAX"))?;
    let parse = |v: &str| {
        v.trim()
            .parse::<usize>()
            .map_err(|_| Error::input(format!("invalid P '{v}'")))
    };
    let (a, b) = (parse(a)?, parse(b)?);
    if a > b {
        return Err(Error::input("--p-range minimum exceeds maximum"));
    }
    Ok((a, b))
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn cmd_fit(a: FitArgs) -> Result<()> {
    let (data, load_warnings) = load(&a.data)?;
    let (penalties, opts) = settings(&a.model, &data)?;
    let mut report = RunReport::new("fit", a.model.seed, &data);
    report.warnings = load_warnings;
    let model = match (a.p, &a.p_range) {
        (Some(p), None) => fit(&data, p, &penalties, &opts)?,
        (None, Some(r)) => {
            let (lo, hi) = parse_range(r)?;
            let ps: Vec<usize> = (lo..=hi).collect();
            let (sel, models) = scan_p_with_models(&data, &ps, &penalties, &opts)?;
            let chosen = sel
                .suggested_p
                .map(|s| s.p)
                .ok_or_else(|| Error::Numerical("no P could be suggested from the scan".into()))?;
            let idx = ps.iter().position(|&p| p == chosen).expect("suggested P was scanned");
            let model = models[idx].clone().expect("suggested P has a fit");
            report.selection = Some(sel);
            model
        }
        _ => return Err(Error::input("exactly one of --p or --p-range is required")),
    };
    warn_all(&model.diagnostics.warnings);
    create_dir(&a.out)?;
    let partition = model.partition()?;
    io::write_model(&a.out, &model, &partition)?;
    let ranking = rank_variables(&model, a.threshold);
    for b in &ranking.blocks {
        io::write_ranking(&a.out.join(format!("ranking_{}.csv", b.block)), b)?;
    }
    report.warnings.extend(model.diagnostics.warnings.iter().cloned());
    report.fit = Some((&model).into());
    io::write_report(&a.out.join("report.json"), &report)
}

fn cmd_select(a: SelectArgs) -> Result<()> {
    let (data, load_warnings) = load(&a.data)?;
    let (penalties, opts) = settings(&a.model, &data)?;
    if a.p_min > a.p_max {
        return Err(Error::input("--p-min exceeds --p-max"));
    }
    let ps: Vec<usize> = (a.p_min..=a.p_max).collect();
    let (sel, _) = scan_p_with_models(&data, &ps, &penalties, &opts)?;
    let mut report = RunReport::new("select-p", a.model.seed, &data);
    report.warnings = load_warnings;
    report.selection = Some(sel);
    create_dir(&a.out)?;
    io::write_report(&a.out.join("report.json"), &report)
}

fn cmd_simulate(a: SimulateArgs) -> Result<()> {
    let spec = match (&a.benchmark, &a.spec) {
        (Some(name), None) => benchmark(name, a.seed.unwrap_or(0))?,
        (None, Some(path)) => {
            let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            let mut spec: SimSpec = serde_json::from_str(&text)?;
            if let Some(s) = a.seed {
                spec.seed = s;
            }
            spec
        }
        _ => return Err(Error::input("exactly one of --benchmark or --spec is required")),
    };
    let (data, truth) = generate(&spec)?;
    create_dir(&a.out)?;
    io::write_dataset(&a.out, &data)?;
    io::write_truth(&a.out.join("truth.json"), &truth.to_file(&data))?;
    let text = serde_json::to_string_pretty(&spec)? + "\n";
    let path = a.out.join("spec.json");
    fs::write(&path, text).map_err(|e| Error::io(&path, e))
}

fn cmd_evaluate(a: EvaluateArgs) -> Result<()> {
    let truth = io::read_truth(&a.truth)?;
    let clusters = io::read_clusters(&a.clusters)?;
    let mut predicted = Vec::new();
    let mut expected = Vec::new();
    for (id, label) in &clusters {
        let t = truth
            .labels
            .get(id)
            .ok_or_else(|| Error::input(format!("sample '{id}' missing from truth")))?;
        predicted.push(*label);
        expected.push(*t);
    }
    if predicted.is_empty() {
        return Err(Error::input("clusters file is empty"));
    }
    if clusters.len() != truth.labels.len() {
        log::warn!(
            "scoring {} of {} truth samples",
            clusters.len(),
            truth.labels.len()
        );
    }
    let ari = ari_labels(&predicted, &expected)?;
    let mut aurocs: IndexMap<String, f64> = IndexMap::new();
    if let Some(dir) = &a.rankings {
        for (block, relevant) in &truth.relevant {
            let path = dir.join(format!("ranking_{block}.csv"));
            if !path.exists() {
                log::warn!("no ranking for block '{block}'");
                continue;
            }
            let ranking = io::read_ranking(&path)?;
            let set: std::collections::HashSet<&str> = relevant.iter().map(|s| s.as_str()).collect();
            let scores: Vec<f64> = ranking.iter().map(|r| r.1).collect();
            let flags: Vec<bool> = ranking.iter().map(|r| set.contains(r.0.as_str())).collect();
            aurocs.insert(block.clone(), auroc(&scores, &flags)?);
        }
    }
    let out = json!({ "ari": ari, "auroc": aurocs });
    println!("{}", serde_json::to_string_pretty(&out)?);
    Ok(())
}

fn cmd_jackknife(a: JackknifeArgs) -> Result<()> {
    let (data, load_warnings) = load(&a.data)?;
    let (penalties, opts) = settings(&a.model, &data)?;
    let stab = jackknife(&data, a.p, &penalties, &opts)?;
    warn_all(&stab.warnings);
    create_dir(&a.out)?;
    io::write_stability_files(&a.out, &stab)?;
    let mut report = RunReport::new("jackknife", a.model.seed, &data);
    report.warnings = load_warnings;
    report.warnings.extend(stab.warnings.iter().cloned());
    report.stability = Some(StabilitySummary {
        run_count: stab.run_count,
        failed_runs: stab.failed_runs.clone(),
    });
    io::write_report(&a.out.join("report.json"), &report)
}
