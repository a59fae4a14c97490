//! Command-line entry point.

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context as _;
use clap::{Parser, Subcommand};
use strata::commands::{self, Role, Workspace};
use strata::config::RunConfig;
use strata::error::{category_label, exit_code};
use strata_core::eval::Variant;

#[derive(Parser, Debug)]
#[command(name = "strata", version, about = "Retrieval-augmented parking availability forecasting")]
struct Cli {
    /// TOML run configuration; defaults apply to every omitted key.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Override one config key, e.g. `--set pipeline.k=3`. Repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Artifacts directory; overrides `paths.artifacts`.
    #[arg(long, global = true, value_name = "DIR")]
    artifacts: Option<PathBuf>,
    /// Increase log verbosity (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate the synthetic source city and its derived target city.
    GenSynth,
    /// Import a city from CSV as the source or target dataset.
    Ingest {
        #[arg(long)]
        csv: PathBuf,
        /// JSON object mapping node id to a context description.
        #[arg(long)]
        context: Option<PathBuf>,
        #[arg(long, value_enum)]
        role: Role,
        /// City name; defaults to the CSV file stem.
        #[arg(long)]
        city: Option<String>,
    },
    /// Pretrain the masked patch encoder on the source training split.
    PretrainEncoder,
    /// Embed every source segment into the knowledge base.
    BuildKb,
    /// Rank knowledge-base entries for a query series.
    Retrieve {
        /// JSON array or whitespace/comma separated numbers.
        #[arg(long)]
        query_file: PathBuf,
        #[arg(long, default_value_t = 5)]
        k: usize,
        /// Write JSON here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Produce base forecaster tokens for the target train and test windows.
    GenTokens,
    /// Build the supervised fine-tuning corpus from target training windows.
    MakeSft,
    /// Forecast the target test windows with one pipeline variant.
    Forecast {
        #[arg(long, value_enum, default_value = "full")]
        variant: VariantArg,
    },
    /// Score base tokens and forecasts per horizon step.
    Evaluate {
        /// Variants to score; defaults to every forecast present.
        #[arg(long, value_enum)]
        variant: Vec<VariantArg>,
    },
    /// Run every variant under one config and tabulate the results.
    Ablate,
    /// Similarity heatmap of a target slice against sampled source slices.
    Heatmap {
        /// Target node id; defaults to the first node.
        #[arg(long)]
        node: Option<String>,
        /// Step index of the slice; defaults to the first test step.
        #[arg(long)]
        start: Option<usize>,
        /// Number of sampled source rows; overrides `heatmap.rows`.
        #[arg(long)]
        rows: Option<usize>,
        /// Number of source node columns (0 for all); overrides `heatmap.columns`.
        #[arg(long)]
        columns: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, Debug, clap::ValueEnum)]
enum VariantArg {
    Full,
    RandomCentroid,
    WeakReasoner,
}

impl From<VariantArg> for Variant {
    fn from(v: VariantArg) -> Self {
        match v {
            VariantArg::Full => Variant::Full,
            VariantArg::RandomCentroid => Variant::RandomCentroid,
            VariantArg::WeakReasoner => Variant::WeakReasoner,
        }
    }
}

fn workspace(cli: &Cli) -> strata::Result<Workspace> {
    let mut cfg = RunConfig::resolve(cli.config.as_deref(), &cli.overrides)?;
    if let Some(dir) = &cli.artifacts {
        if cfg.paths.cache == cfg.paths.artifacts.join("cache") {
            cfg.paths.cache = dir.join("cache");
        }
        cfg.paths.artifacts = dir.clone();
    }
    Ok(Workspace::new(cfg))
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let mut ws = workspace(&cli)?;
    match cli.command {
        Command::GenSynth => println!("{}", commands::gen_synth(&ws)?),
        Command::Ingest { csv, context, role, city } => {
            println!("{}", commands::ingest(&ws, &csv, context.as_deref(), role, city.as_deref())?)
        }
        Command::PretrainEncoder => println!("{}", commands::pretrain_encoder(&ws)?),
        Command::BuildKb => println!("{}", commands::build_kb(&ws)?),
        Command::Retrieve { query_file, k, out } => {
            let query = commands::read_query(&query_file)?;
            let result = commands::retrieve(&ws, &query, k)?;
            match out {
                Some(p) => strata::fsutil::write_json(&p, &result)?,
                None => println!("{}", serde_json::to_string_pretty(&result).context("serializing hits")?),
            }
        }
        Command::GenTokens => println!("{}", commands::gen_tokens(&ws)?),
        Command::MakeSft => println!("{}", commands::make_sft(&ws)?),
        Command::Forecast { variant } => println!("{}", commands::forecast(&ws, variant.into())?),
        Command::Evaluate { variant } => {
            let variants: Vec<Variant> = variant.into_iter().map(Into::into).collect();
            let reports = commands::evaluate(&ws, &variants)?;
            print!("{}", strata_core::eval::markdown_table(&reports));
        }
        Command::Ablate => {
            let reports = commands::ablate(&ws)?;
            print!("{}", strata_core::eval::markdown_table(&reports));
        }
        Command::Heatmap { node, start, rows, columns, out } => {
            if let Some(r) = rows {
                ws.cfg.heatmap.rows = r;
            }
            if let Some(c) = columns {
                ws.cfg.heatmap.columns = c;
            }
            let (path, map) = commands::heatmap(&ws, node.as_deref(), start, out.as_deref())?;
            println!(
                "{} x {} heatmap, {:.1}% of cells above 0.5 -> {}",
                map.rows.len(),
                map.columns.len(),
                100.0 * map.fraction_above(0.5),
                path.display()
            );
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let (label, code) = match e.downcast_ref::<strata::Error>() {
                Some(se) => (category_label(se.category()), exit_code(se.category())),
                None => ("data", 3),
            };
            eprintln!("error[{label}]: {e:#}");
            ExitCode::from(code)
        }
    }
}
