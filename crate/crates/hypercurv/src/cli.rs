//! Command-line surface: training, certification, sharpness reports,
//! δ-hyperbolicity, dataset generation, and the curvature ablation grid.
//!
//! Every subcommand is deterministic given its config and seeds; the only
//! non-reproducible output field is `wall_ms` in telemetry records.

use crate::bilevel::{self, RunOutput};
use crate::config::{RunConfig, TrainingMode};
use crate::data::{self, Dataset};
use crate::error::{Error, Result};
use crate::lipschitz::{self, VerifierConfig};
use crate::model::{self, Batch, HnnObjective};
use crate::sharpness;
use clap::{Args, Parser, Subcommand};
use std::fs;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

#[derive(Parser)]
#[command(name = "hypercurv", version, about = "Hyperbolic networks with learnable curvature")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train per the run config (Algorithm-1 loop or fixed curvature).
    Train(TrainArgs),
    /// Run the Lipschitz certificate suite.
    VerifyLipschitz(VerifyArgs),
    /// Emit a sharpness report for a checkpoint on a dataset.
    SharpnessReport(SharpnessArgs),
    /// Four-point δ-hyperbolicity of a CSV dataset.
    Hyperbolicity(HyperbolicityArgs),
    /// Generate a synthetic tree dataset as CSV.
    GenData(GenDataArgs),
    /// Fixed-curvature grid plus a curvature-learning run, as a CSV table.
    AblateCurvature(AblateArgs),
}

#[derive(Args)]
struct TrainArgs {
    /// Path to the JSON run config.
    #[arg(long)]
    config: PathBuf,
    /// CSV dataset; generated tree data when omitted.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Label column of the CSV.
    #[arg(long, default_value = "label")]
    label_column: String,
}

#[derive(Args)]
struct VerifyArgs {
    #[arg(long, default_value_t = 2000)]
    samples: usize,
    #[arg(long, default_value_t = 17)]
    seed: u64,
    #[arg(long, default_value_t = 4)]
    dim: usize,
    #[arg(long, default_value_t = 0.1)]
    cos_theta: f64,
    /// Curvatures of the verification cells.
    #[arg(long, value_delimiter = ',', default_values_t = vec![1e-3, 1e-1, 1.0])]
    curvatures: Vec<f64>,
    /// Write the JSON report here (stdout otherwise).
    #[arg(short, long)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct SharpnessArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value = "label")]
    label_column: String,
    /// Optional run config for the sharpness section.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(short, long)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct HyperbolicityArgs {
    data: PathBuf,
    #[arg(long, default_value = "label")]
    label_column: String,
    #[arg(long, default_value_t = 50_000)]
    quadruples: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct GenDataArgs {
    #[arg(long, default_value_t = 4)]
    depth: usize,
    #[arg(long, default_value_t = 3)]
    branching: usize,
    #[arg(long, default_value_t = 0.2)]
    noise_sigma: f64,
    #[arg(long, default_value_t = 8)]
    dim: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(short, long)]
    output: PathBuf,
}

#[derive(Args)]
struct AblateArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long, default_value = "label")]
    label_column: String,
    /// Fixed curvatures of the grid.
    #[arg(long, value_delimiter = ',', default_values_t = vec![1e-4, 1e-2, 1e-1, 1.0])]
    grid: Vec<f64>,
    #[arg(short, long)]
    output: PathBuf,
}

/// Entry point used by both `main` and the CLI tests. Exit status: 0 on
/// success, 2 on configuration/schema errors, 1 on run failures (and for
/// `verify-lipschitz`, on any certificate violation).
pub fn cli_main<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            // clap help/version exit cleanly
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match dispatch(cli.command) {
        Ok(code) => code,
        Err(e @ Error::Config(_)) | Err(e @ Error::Parse { .. }) => {
            eprintln!("error: {e}");
            2
        }
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

fn dispatch(cmd: Command) -> Result<i32> {
    match cmd {
        Command::Train(args) => run_train(&args),
        Command::VerifyLipschitz(args) => run_verify(&args),
        Command::SharpnessReport(args) => run_sharpness(&args),
        Command::Hyperbolicity(args) => run_hyperbolicity(&args),
        Command::GenData(args) => run_gen_data(&args),
        Command::AblateCurvature(args) => run_ablate(&args),
    }
}

fn load_dataset(
    data: &Option<PathBuf>,
    label_column: &str,
    fallback_seed: u64,
) -> Result<Dataset> {
    match data {
        Some(path) => data::load_csv(path, label_column),
        None => data::gen_tree_dataset(4, 3, 0.2, 8, fallback_seed),
    }
}

fn write_or_print(path: &Option<PathBuf>, text: &str) -> Result<()> {
    match path {
        Some(p) => {
            fs::write(p, text)?;
            Ok(())
        }
        None => {
            println!("{text}");
            Ok(())
        }
    }
}

fn run_train(args: &TrainArgs) -> Result<i32> {
    let cfg = RunConfig::load(&args.config)?;
    let dataset = load_dataset(&args.data, &args.label_column, cfg.seeds.split)?;
    let out_dir = cfg
        .output_dir
        .as_deref()
        .map(Path::new)
        .unwrap_or(Path::new("."))
        .to_path_buf();
    fs::create_dir_all(&out_dir)?;
    let output = bilevel::run_algorithm1(&dataset, &cfg, Some(&out_dir))?;
    write_run_outputs(&out_dir, &cfg, &dataset, &output)?;
    println!(
        "train: c = {:.6e}, val accuracy = {:.4}, telemetry = {}",
        output.curvature.c,
        output.val_accuracy,
        out_dir.join("telemetry.jsonl").display()
    );
    Ok(0)
}

fn write_run_outputs(
    out_dir: &Path,
    cfg: &RunConfig,
    dataset: &Dataset,
    output: &RunOutput,
) -> Result<()> {
    let mut telemetry = BufWriter::new(fs::File::create(out_dir.join("telemetry.jsonl"))?);
    for rec in &output.telemetry {
        serde_json::to_writer(&mut telemetry, rec)?;
        writeln!(telemetry)?;
    }
    telemetry.flush()?;

    let ckpt = fs::File::create(out_dir.join("checkpoint.hckpt"))?;
    model::save_checkpoint(
        BufWriter::new(ckpt),
        &output.model_config,
        &output.params,
        output.curvature.c,
    )?;

    let report = run_report(cfg, dataset, output)?;
    fs::write(out_dir.join("sharpness_report.json"), report.to_json()?)?;
    Ok(())
}

fn run_report(
    cfg: &RunConfig,
    dataset: &Dataset,
    output: &RunOutput,
) -> Result<sharpness::SharpnessReport> {
    let bl = &cfg.bilevel;
    let (train_ds, val_ds) = data::split_dataset(
        dataset,
        bl.train_fraction,
        bl.val_fraction,
        cfg.seeds.split,
    )?;
    let classes = output.model_config.classes;
    let train = Batch::new(train_ds.features.clone(), train_ds.labels.clone(), classes)?;
    let val = Batch::new(val_ds.features.clone(), val_ds.labels.clone(), classes)?;
    let obj = HnnObjective::new(&output.model_config, &train);
    let w = output.params.pack();
    let model_cfg = output.model_config.clone();
    sharpness::sharpness_report(
        &obj,
        &w,
        output.curvature.c,
        &cfg.sharpness,
        output.loss_scale,
        cfg.seeds.direction,
        |shifted| {
            let params = model::HnnParams::unpack(&model_cfg, shifted).ok()?;
            model::accuracy(&model_cfg, &params, &val, output.curvature.c).ok()
        },
    )
}

fn run_verify(args: &VerifyArgs) -> Result<i32> {
    let cfg = VerifierConfig {
        samples: args.samples,
        dim: args.dim,
        cos_theta_bound: args.cos_theta,
        seed: args.seed,
        curvatures: args.curvatures.clone(),
        ..VerifierConfig::default()
    };
    let reports = lipschitz::verify_all(&cfg)?;
    let total_violations: usize = reports.iter().map(|r| r.violations).sum();
    let text = serde_json::to_string_pretty(&reports)?;
    write_or_print(&args.output, &text)?;
    eprintln!(
        "verify-lipschitz: {} cells, {} violations",
        reports.len(),
        total_violations
    );
    Ok(if total_violations == 0 { 0 } else { 1 })
}

fn run_sharpness(args: &SharpnessArgs) -> Result<i32> {
    let file = fs::File::open(&args.checkpoint)?;
    let (model_cfg, params, curvature) = model::load_checkpoint(BufReader::new(file))?;
    let dataset = data::load_csv(&args.data, &args.label_column)?;
    let sharp_cfg = match &args.config {
        Some(p) => RunConfig::load(p)?.sharpness,
        None => Default::default(),
    };
    let batch = Batch::new(
        dataset.features.clone(),
        dataset.labels.clone(),
        model_cfg.classes,
    )?;
    let obj = HnnObjective::new(&model_cfg, &batch);
    let w = params.pack();
    let scale = sharpness::loss_scale_for(&obj, &w, curvature)?;
    let report = sharpness::sharpness_report(&obj, &w, curvature, &sharp_cfg, scale, 3, |_| None)?;
    write_or_print(&args.output, &report.to_json()?)?;
    Ok(0)
}

fn run_hyperbolicity(args: &HyperbolicityArgs) -> Result<i32> {
    let dataset = data::load_csv(&args.data, &args.label_column)?;
    let delta = data::delta_hyperbolicity(&dataset, args.quadruples, args.seed)?;
    println!(
        "{}",
        serde_json::json!({
            "dataset": dataset.name,
            "n": dataset.len(),
            "quadruples": args.quadruples,
            "seed": args.seed,
            "delta": delta,
        })
    );
    Ok(0)
}

fn run_gen_data(args: &GenDataArgs) -> Result<i32> {
    let dataset = data::gen_tree_dataset(
        args.depth,
        args.branching,
        args.noise_sigma,
        args.dim,
        args.seed,
    )?;
    let file = fs::File::create(&args.output)?;
    dataset.write_csv(BufWriter::new(file))?;
    println!(
        "gen-data: {} rows, {} classes -> {}",
        dataset.len(),
        dataset.n_classes(),
        args.output.display()
    );
    Ok(0)
}

/// One ablation row, mirroring the comparison-table columns.
#[derive(serde::Serialize)]
struct AblationRow {
    curvature_or_mode: String,
    val_accuracy: f64,
    sn_hat: f64,
    l_sharp: f64,
    top_eig: f64,
}

fn ablation_row(
    label: String,
    cfg: &RunConfig,
    dataset: &Dataset,
    output: &RunOutput,
) -> Result<AblationRow> {
    let report = run_report(cfg, dataset, output)?;
    Ok(AblationRow {
        curvature_or_mode: label,
        val_accuracy: output.val_accuracy,
        sn_hat: report.sn_hat,
        l_sharp: report.l_sharp,
        top_eig: report.eigenvalues.first().copied().unwrap_or(f64::NAN),
    })
}

fn run_ablate(args: &AblateArgs) -> Result<i32> {
    let base = RunConfig::load(&args.config)?;
    let dataset = load_dataset(&args.data, &args.label_column, base.seeds.split)?;
    let mut rows = Vec::new();
    for &c in &args.grid {
        let mut cfg = base.clone();
        cfg.mode = TrainingMode::FixedCurvature;
        cfg.curvature.init = c.clamp(cfg.curvature.min, cfg.curvature.max);
        let out = bilevel::run_algorithm1(&dataset, &cfg, None)?;
        rows.push(ablation_row(format!("{c}"), &cfg, &dataset, &out)?);
    }
    let mut cfg = base.clone();
    cfg.mode = TrainingMode::CurvatureLearning;
    let out = bilevel::run_algorithm1(&dataset, &cfg, None)?;
    rows.push(ablation_row("learned".into(), &cfg, &dataset, &out)?);

    let mut w = csv::Writer::from_writer(fs::File::create(&args.output)?);
    for row in &rows {
        w.serialize(row)?;
    }
    w.flush()?;
    println!("ablate-curvature: {} rows -> {}", rows.len(), args.output.display());
    Ok(0)
}
