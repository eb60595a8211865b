use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use lvkd_cli::config::{RunConfig, OUT_ENV};
use lvkd_cli::manifest::RunManifest;
use lvkd_cli::pipeline::{self, MaskSource};
use lvkd_cli::report;
use lvkd_cli::{CliError, Result};
use lvkd_core::scaling_laws::MetricKind;

#[derive(Parser)]
#[command(
    name = "lvkd",
    version,
    about = "Distill and evaluate streaming left-ventricle segmenters"
)]
struct Cli {
    /// Run configuration (JSON, schema_version 1).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Root seed; overrides the config's `seed`.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct MaskArgs {
    /// Evaluate an existing mask store instead of predicting.
    #[arg(long)]
    masks: Option<PathBuf>,
    /// Checkpoint to predict with (default: <out_dir>/model.ckpt).
    #[arg(long)]
    checkpoint: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Write a phantom dataset into data_dir.
    PhantomGen,
    /// Cache teacher outputs for every clip.
    Pseudolabel,
    /// Train, calibrate and checkpoint a student.
    Train,
    /// Dice and IoU on labeled frames.
    EvalSeg(MaskArgs),
    /// ED/ES frame distance from predicted areas.
    EvalAfd(MaskArgs),
    /// Label-free mask quality and mitral-signal phase detection.
    EvalLvm(MaskArgs),
    /// Annotator-noise bounds, or `bounds fit` for the noise mixture.
    Bounds(BoundsArgs),
    /// Log-log fit of a metric against parameter count.
    ScalingFit {
        #[arg(long)]
        points: PathBuf,
        /// Metric kind to fit when the file mixes several.
        #[arg(long)]
        kind: Option<MetricKind>,
        /// Directory for the fit JSON and plot CSV (default: $ECHODFKD_OUT).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Merge evaluation summaries into grid and method tables.
    Report {
        /// Run directories holding evaluation summaries.
        #[arg(long = "run", required = true)]
        runs: Vec<PathBuf>,
        /// Output directory (default: $ECHODFKD_OUT, then the config's out_dir).
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
#[command(args_conflicts_with_subcommands = true)]
struct BoundsArgs {
    /// Intra-annotator RMSE between two rounds, in frames.
    #[arg(long, required = true)]
    rmse: Option<f64>,
    /// Intra-annotator correlation between two rounds.
    #[arg(long, required = true)]
    corr: Option<f64>,
    #[command(subcommand)]
    fit: Option<BoundsCommand>,
}

#[derive(Subcommand)]
enum BoundsCommand {
    /// Fit the uniform/Laplace mixture to round differences.
    Fit {
        #[arg(long)]
        diffs: PathBuf,
    },
}

fn load_config(cli: &Cli) -> Result<RunConfig> {
    let path = cli
        .config
        .as_ref()
        .ok_or_else(|| CliError::Config("this subcommand needs --config".into()))?;
    let mut config = RunConfig::load(path)?;
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    config.apply_env();
    Ok(config)
}

fn env_out() -> Option<PathBuf> {
    std::env::var_os(OUT_ENV)
        .filter(|v| !v.is_empty())
        .map(PathBuf::from)
}

fn print_json<T: serde::Serialize>(value: &T) {
    println!(
        "{}",
        serde_json::to_string(value).expect("output serializes")
    );
}

fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::PhantomGen => {
            let config = load_config(cli)?;
            pipeline::phantom_gen(&config)?;
            let p = &config.phantom;
            println!(
                "wrote {} phantom clips to {}",
                p.train + p.val + p.test,
                config.paths.data_dir.display()
            );
        }
        Command::Pseudolabel => {
            let config = load_config(cli)?;
            let (report, _) = pipeline::pseudolabel(&config)?;
            println!(
                "computed {}, reused {}, skipped {}",
                report.computed.len(),
                report.reused.len(),
                report.skipped.len()
            );
            for (id, err) in &report.skipped {
                eprintln!("skipped {id}: {err}");
            }
        }
        Command::Train => {
            let config = load_config(cli)?;
            let outcome = pipeline::train_student(&config)?;
            for w in &outcome.warnings {
                eprintln!("warning: {w}");
            }
            print_json(&outcome.summary);
        }
        Command::EvalSeg(m) => {
            let config = load_config(cli)?;
            let source = MaskSource::resolve(&config, m.masks.clone(), m.checkpoint.clone());
            let (report, _) = pipeline::eval_seg(&config, &source)?;
            print_json(&report.aggregate);
        }
        Command::EvalAfd(m) => {
            let config = load_config(cli)?;
            let source = MaskSource::resolve(&config, m.masks.clone(), m.checkpoint.clone());
            let (_, summary, _) = pipeline::eval_afd(&config, &source)?;
            print_json(&serde_json::json!({
                "clips": summary.clips,
                "afd_ed": summary.afd_ed,
                "afd_es": summary.afd_es,
                "degenerate_clips": summary.degenerate_clips,
            }));
        }
        Command::EvalLvm(m) => {
            let config = load_config(cli)?;
            let source = MaskSource::resolve(&config, m.masks.clone(), m.checkpoint.clone());
            let (summary, _) = pipeline::eval_lvm(&config, &source)?;
            print_json(&serde_json::json!({
                "scorer": summary.quality.scorer,
                "mean_overflow": summary.quality.mean_overflow,
                "mean_coverage": summary.quality.mean_coverage,
                "mitral_afd_ed": summary.mitral_afd_ed,
                "mitral_afd_es": summary.mitral_afd_es,
            }));
        }
        Command::Bounds(b) => match &b.fit {
            Some(BoundsCommand::Fit { diffs }) => print_json(&report::bounds_fit(diffs)?),
            None => {
                let (rmse, corr) = (b.rmse.expect("required"), b.corr.expect("required"));
                print_json(&report::bounds(rmse, corr)?);
            }
        },
        Command::ScalingFit { points, kind, out } => {
            let (fit, plot) = report::scaling_fit(points, *kind)?;
            if let Some(dir) = out.clone().or_else(env_out) {
                std::fs::create_dir_all(&dir)
                    .map_err(|e| CliError::Data(format!("cannot create {}: {e}", dir.display())))?;
                let mut run = RunManifest::standalone("scaling-fit");
                run.input(points.clone());
                let json = dir.join("scaling_fit.json");
                lvkd_core::io::write_atomic(
                    &json,
                    serde_json::to_string_pretty(&fit)
                        .expect("serializes")
                        .as_bytes(),
                )?;
                let csv = dir.join("scaling_plot.csv");
                lvkd_core::io::write_atomic(&csv, &plot)?;
                run.output(json);
                run.output(csv);
                run.write(&dir)?;
            }
            print_json(&fit);
        }
        Command::Report { runs, out } => {
            let dir = match out.clone().or_else(env_out) {
                Some(d) => d,
                None => load_config(cli)?.paths.out_dir,
            };
            let (rows, _) = report::report(runs, &dir)?;
            println!("merged {} runs into {}", rows.len(), dir.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.to_json());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
