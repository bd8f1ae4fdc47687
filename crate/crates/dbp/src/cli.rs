//! Command-line interface: `sim`, `train`, `eval`, and `report`.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use dbp_core::sim::{generate_dataset, SimulatorConfig};

use crate::checkpoint::load_checkpoint;
use crate::dataset_file::{read_dataset, write_dataset};
use crate::eval::{evaluate, parse_table_csv, render_table, EvalInputs, PredictorKind};
use crate::run_config::{Objective, RunConfig};
use crate::trainer::{train_multi, write_logs};
use crate::{DbpError, Result};

#[derive(Parser)]
#[command(
    name = "dbp",
    about = "Self-supervised depth and uncertainty estimation from simulated grasp feedback",
    version
)]
pub struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a poke dataset from the simulator.
    Sim(SimArgs),
    /// Train models per a run-config file, one per seed.
    Train(TrainArgs),
    /// Evaluate a predictor on a dataset and write report CSVs.
    Eval(EvalArgs),
    /// Aggregate eval table fragments into the results table.
    Report(ReportArgs),
}

#[derive(Args)]
struct SimArgs {
    /// Scene preset: consumer | adversarial.
    #[arg(long, default_value = "consumer")]
    preset: String,
    /// Run-config file whose sim.* keys override the preset.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value_t = 50)]
    scenes: usize,
    /// Pokes per scene.
    #[arg(long, default_value_t = 20)]
    pokes: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Attach ground-truth depth maps (evaluation sets only).
    #[arg(long)]
    with_ground_truth: bool,
    /// Output path, conventionally `<name>.dbpd`.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    /// Run-config file (net.*, loss.*, opt.*, train.*).
    #[arg(long)]
    config: PathBuf,
    /// Training dataset; overrides `train.data` from the config.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Directory for checkpoints and training logs.
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    /// raw | raw-bc | gf | gf-bc | ae | ae-bc | dbp
    #[arg(long)]
    predictor: String,
    /// Test dataset (.dbpd).
    #[arg(long)]
    data: PathBuf,
    /// Calibration split for bias correction and the filter sweep.
    #[arg(long)]
    calib: Option<PathBuf>,
    /// Trained checkpoint(s); repeat for cross-seed statistics.
    #[arg(long)]
    checkpoint: Vec<PathBuf>,
    /// Fixed Gaussian filter width in pixels (otherwise swept on --calib).
    #[arg(long)]
    sigma: Option<f64>,
    /// Row label in the results table, e.g. `m-dbp-rgbd`.
    #[arg(long)]
    name: Option<String>,
    /// Directory receiving hist.csv, qq.csv, discard.csv, table.csv.
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Args)]
struct ReportArgs {
    /// table.csv fragments produced by `eval`.
    #[arg(required = true)]
    inputs: Vec<PathBuf>,
    /// Write the combined CSV here as well as printing the table.
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Runs the CLI; returns the process exit code.
pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Sim(args) => sim(args),
        Command::Train(args) => train(args),
        Command::Eval(args) => eval(args),
        Command::Report(args) => report(args),
    }
}

fn sim(args: SimArgs) -> Result<()> {
    let mut sim_cfg = match args.preset.as_str() {
        "consumer" => SimulatorConfig::consumer(),
        "adversarial" => SimulatorConfig::adversarial(),
        other => {
            return Err(DbpError::Usage(format!(
                "unknown preset `{other}` (consumer|adversarial)"
            )))
        }
    };
    if let Some(path) = &args.config {
        // The file's sim.* keys apply on top of the chosen preset.
        let text = std::fs::read_to_string(path).map_err(|e| DbpError::io(path, e))?;
        let base = RunConfig {
            sim: sim_cfg,
            ..RunConfig::default()
        };
        sim_cfg = RunConfig::parse_with_base(&text, &path.display().to_string(), base)?.sim;
    }
    sim_cfg.validate().map_err(DbpError::Core)?;
    let samples = generate_dataset(
        &sim_cfg,
        args.scenes,
        args.pokes,
        args.seed,
        args.with_ground_truth,
    )
    .map_err(DbpError::Core)?;
    write_dataset(&samples, &args.out)?;
    println!(
        "wrote {} samples ({}x{}) to {}",
        samples.len(),
        sim_cfg.height,
        sim_cfg.width,
        args.out.display()
    );
    Ok(())
}

fn train(args: TrainArgs) -> Result<()> {
    let mut cfg = RunConfig::load(&args.config)?;
    let data_path = args
        .data
        .or_else(|| cfg.train_data.clone())
        .ok_or_else(|| DbpError::Usage("no training data: pass --data or set train.data".into()))?;
    cfg.train_data = Some(data_path.clone());
    let data = read_dataset(&data_path)?;
    std::fs::create_dir_all(&args.out_dir).map_err(|e| DbpError::io(&args.out_dir, e))?;

    let runs = train_multi(&cfg, &data, Some(&args.out_dir))?;
    write_logs(&runs, &args.out_dir)?;
    let kind = match cfg.objective {
        Objective::Poke => format!("poke/{}", cfg.loss.mode.name()),
        Objective::Autoencoder => "autoencoder".to_string(),
    };
    for run in &runs {
        let last = run.log.entries.last().map(|e| e.j_m).unwrap_or(f64::NAN);
        println!(
            "seed {}: {kind}, {} steps, final loss {:.4}, checkpoint {}",
            run.seed,
            run.log.entries.len(),
            last,
            run.final_checkpoint
                .as_ref()
                .map(|p| p.display().to_string())
                .unwrap_or_default()
        );
    }
    Ok(())
}

fn eval(args: EvalArgs) -> Result<()> {
    let kind = PredictorKind::parse(&args.predictor).ok_or_else(|| {
        DbpError::Usage(format!(
            "unknown predictor `{}` (raw|raw-bc|gf|gf-bc|ae|ae-bc|dbp)",
            args.predictor
        ))
    })?;
    let test = read_dataset(&args.data)?;
    let calib = args.calib.as_ref().map(|p| read_dataset(p)).transpose()?;
    let models = args
        .checkpoint
        .iter()
        .map(|p| load_checkpoint(p, None))
        .collect::<Result<Vec<_>>>()?;
    let dataset = args
        .data
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| args.data.display().to_string());

    let inputs = EvalInputs {
        calib: calib.as_deref(),
        models,
        filter_sigma: args.sigma,
    };
    let report = evaluate(kind, args.name.as_deref(), &dataset, &test, &inputs)?;
    report.write_csvs(&args.out_dir)?;
    print!(
        "{}: rmse {:.2} mm",
        report.predictor, report.rmse_mm
    );
    if report.std_mm > 0.0 {
        print!(" +- {:.2}", report.std_mm);
    }
    if let Some(full) = report.full_map_rmse_mm {
        print!(", full-map rmse {full:.2} mm");
    }
    if let Some(sigma) = report.filter_sigma {
        print!(", sigma {sigma}");
    }
    println!(", reports in {}", args.out_dir.display());
    Ok(())
}

fn report(args: ReportArgs) -> Result<()> {
    let mut rows = Vec::new();
    for path in &args.inputs {
        let text = std::fs::read_to_string(path).map_err(|e| DbpError::io(path, e))?;
        rows.extend(parse_table_csv(&text, &path.display().to_string())?);
    }
    let (text, csv) = render_table(&rows);
    print!("{text}");
    if let Some(out) = &args.out {
        std::fs::write(out, csv).map_err(|e| DbpError::io(out, e))?;
        println!("combined table written to {}", out.display());
    }
    Ok(())
}
