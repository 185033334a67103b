//! `heatxai`: the pipeline as subcommands sharing one config file and one
//! output directory.

mod config;
mod netcdf;
mod provenance;
mod stages;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use chrono::NaiveDate;
use clap::{Parser, Subcommand};

use heatxai::pipeline::StageSeeds;

use crate::config::Config;
use crate::netcdf::ConvertOptions;
use crate::stages::Ctx;

#[derive(Parser, Debug)]
#[command(name = "heatxai", version, about = "Heatwave detection, attribution and relevance-trend analysis")]
struct Cli {
    /// TOML or JSON config; built-in defaults when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed, overriding the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Output directory shared by all stages.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Validate the config and exit without writing anything.
    #[arg(long, global = true)]
    dry_run: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate the synthetic world into OUT/world.
    Synth,
    /// Import [time, lat, lon] variables of a NetCDF-3 file into OUT/world.
    ConvertNetcdf {
        #[arg(long)]
        input: PathBuf,
        /// Comma-separated variable names; all 3-D variables by default.
        #[arg(long, value_delimiter = ',')]
        vars: Vec<String>,
        /// First day of the record, when the time axis lacks CF units.
        #[arg(long)]
        start_date: Option<NaiveDate>,
    },
    /// Thresholds, heatwave calendar and events into OUT/detect.
    Detect,
    /// Standardized lookback samples into OUT/dataset.
    BuildDataset,
    /// Train the classifier into OUT/model.
    Train,
    /// Confusion metrics on the test split and per period into OUT/eval.json.
    Eval,
    /// Integrated Gradients maps of true positives into OUT/relevance.
    Attribute,
    /// Masking curves of IG against random relevance into OUT/faithfulness.
    Faithfulness,
    /// Relevance and composite-anomaly tables into OUT/analysis.
    Analyze,
    /// Print the divergence table and write OUT/report.txt.
    Report,
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Synth => "synth",
            Command::ConvertNetcdf { .. } => "convert-netcdf",
            Command::Detect => "detect",
            Command::BuildDataset => "build-dataset",
            Command::Train => "train",
            Command::Eval => "eval",
            Command::Attribute => "attribute",
            Command::Faithfulness => "faithfulness",
            Command::Analyze => "analyze",
            Command::Report => "report",
        }
    }
}

fn resolve_config(cli: &Cli) -> anyhow::Result<Config> {
    let mut cfg = match &cli.config {
        Some(p) => Config::load(p)?,
        None => Config::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    cfg.validate().context("invalid config")?;
    Ok(cfg)
}

fn run(cli: &Cli, cfg: &Config) -> anyhow::Result<()> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global().context("setting up the thread pool")?;
    }
    std::fs::create_dir_all(&cli.out).with_context(|| format!("creating {}", cli.out.display()))?;
    let ctx = Ctx { cfg, out: &cli.out, seeds: StageSeeds::from_master(cfg.seed) };
    let io = match &cli.command {
        Command::Synth => stages::synth(&ctx)?,
        Command::ConvertNetcdf { input, vars, start_date } => {
            let opts = ConvertOptions { variables: vars.clone(), start_date: *start_date };
            stages::convert_netcdf(&ctx, input, &opts)?
        }
        Command::Detect => stages::detect_stage(&ctx)?,
        Command::BuildDataset => stages::build_dataset(&ctx)?,
        Command::Train => stages::train(&ctx)?,
        Command::Eval => stages::eval(&ctx)?,
        Command::Attribute => stages::attribute(&ctx)?,
        Command::Faithfulness => stages::faithfulness(&ctx)?,
        Command::Analyze => stages::analyze_stage(&ctx)?,
        Command::Report => stages::report(&ctx)?,
    };
    ctx.record(cli.command.name(), &io)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    // clap exits with 2 on usage errors and unknown subcommands.
    let cli = Cli::parse();
    let cfg = match resolve_config(&cli) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e:#}");
            return ExitCode::from(2);
        }
    };
    if cli.dry_run {
        println!("config ok for {} (seed {})", cli.command.name(), cfg.seed);
        return ExitCode::SUCCESS;
    }
    match run(&cli, &cfg) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
