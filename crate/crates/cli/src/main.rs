//! `repnet` experiment driver.
//!
//! Exit codes: 0 on success, 2 for config errors, 3 when training
//! diverges, 1 for anything else.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use repnet::data::lookup;
use repnet::experiments::{
    ablation_cells, emit_heatmap, emit_report, heatmap_csv, load_experiment_data, profile_efficiency, random_search,
    run_experiment, ReportFormat, SearchResult, SearchSpace,
};
use repnet::{Error, ExperimentConfig, RunReport};

#[derive(Parser)]
#[command(name = "repnet", version, about = "Train, search, ablate and profile multi-scale patch forecasters")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Global {
    /// Experiment config (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the model seed; also seeds the search sampler.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Directory for artifacts.
    #[arg(long, global = true, default_value = "out")]
    out_dir: PathBuf,
    /// Compute device; only `cpu` is available.
    #[arg(long, global = true, default_value = "cpu")]
    device: String,
    /// Channel indices to drop, comma separated.
    #[arg(long, global = true, value_delimiter = ',')]
    exclude_channels: Option<Vec<usize>>,
}

#[derive(Subcommand)]
enum Command {
    /// Train and evaluate one config.
    Run,
    /// Random search around the config.
    Search {
        #[arg(long, default_value_t = 20)]
        budget: usize,
        /// Search space (JSON); defaults to the full space.
        #[arg(long)]
        space: Option<PathBuf>,
    },
    /// Ablation heatmap from one or more search histories.
    Ablate {
        /// `search.json` files; defaults to `<out-dir>/search.json`.
        #[arg(long = "search")]
        searches: Vec<PathBuf>,
        /// Average the k best trials per side instead of taking the best.
        #[arg(long, default_value_t = 1)]
        mean_of_k: usize,
        #[arg(long, default_value = "ablation")]
        stem: String,
    },
    /// Parameter count, step time and peak memory.
    Profile {
        #[arg(long, default_value_t = 1)]
        batch_size: usize,
        #[arg(long, default_value_t = 20)]
        iterations: usize,
        #[arg(long, default_value_t = 3)]
        warmup: usize,
    },
    /// Summarize run reports found under the given paths.
    Report {
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
        #[arg(long, value_enum, default_value_t = Format::Markdown)]
        format: Format,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Csv,
    Json,
    Markdown,
}

impl From<Format> for ReportFormat {
    fn from(f: Format) -> Self {
        match f {
            Format::Csv => ReportFormat::Csv,
            Format::Json => ReportFormat::Json,
            Format::Markdown => ReportFormat::Markdown,
        }
    }
}

fn load_config(g: &Global) -> Result<ExperimentConfig> {
    if g.device != "cpu" {
        return Err(Error::config("--device", format!("`{}` is not available; use `cpu`", g.device)).into());
    }
    let Some(path) = &g.config else {
        return Err(Error::config("--config", "this command needs a config file").into());
    };
    let mut cfg = ExperimentConfig::load(path)?;
    if let Some(seed) = g.seed {
        cfg.model.seed = seed;
    }
    if let Some(ex) = &g.exclude_channels {
        cfg.data.exclude_channels = ex.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(g: &Global) -> Result<()> {
    let cfg = load_config(g)?;
    let out = run_experiment(&cfg, Some(&g.out_dir))?;
    println!("{}", out.report.to_json());
    Ok(())
}

fn search(g: &Global, budget: usize, space: Option<&Path>) -> Result<()> {
    let cfg = load_config(g)?;
    let space = match space {
        Some(p) => serde_json::from_str(&std::fs::read_to_string(p)?).with_context(|| format!("reading {}", p.display()))?,
        None => SearchSpace::default(),
    };
    let result = random_search(&cfg, &space, budget, g.seed.unwrap_or(0), Some(&g.out_dir))?;
    result.save(&g.out_dir.join("search.json"))?;
    println!("rank\ttrial\tval_loss\ttest_mse\ttest_mae\tparams");
    for (rank, t) in result.trials.iter().enumerate() {
        println!("{}\t{}\t{:.6}\t{:.6}\t{:.6}\t{}", rank + 1, t.index, t.val_loss, t.test_mse, t.test_mae, t.params);
    }
    Ok(())
}

fn ablate(g: &Global, searches: &[PathBuf], k: usize, stem: &str) -> Result<()> {
    let default = [g.out_dir.join("search.json")];
    let files = if searches.is_empty() { &default[..] } else { searches };
    let mut trials = Vec::new();
    for f in files {
        trials.extend(SearchResult::load(f).with_context(|| format!("reading {}", f.display()))?.trials);
    }
    if k == 0 {
        return Err(Error::config("--mean-of-k", "must be at least 1").into());
    }
    let cells = ablation_cells(&trials, k)?;
    if cells.is_empty() {
        bail!("no factor has trials on both sides");
    }
    emit_heatmap(&cells, &g.out_dir, stem)?;
    print!("{}", heatmap_csv(&cells)?);
    Ok(())
}

fn profile(g: &Global, batch_size: usize, iterations: usize, warmup: usize) -> Result<()> {
    let cfg = load_config(g)?;
    let (channels, frequency) = match lookup(&cfg.model.dataset) {
        Some(info) if cfg.data.exclude_channels.is_empty() => (info.channels, info.frequency),
        _ => {
            let ds = load_experiment_data(&cfg)?;
            (ds.channels(), ds.frequency)
        }
    };
    let p = profile_efficiency(&cfg.model, channels, frequency, batch_size, warmup, iterations)?;
    std::fs::create_dir_all(&g.out_dir)?;
    let json = serde_json::to_string_pretty(&p)?;
    std::fs::write(g.out_dir.join("profile.json"), &json)?;
    println!("{json}");
    Ok(())
}

fn report(g: &Global, inputs: &[PathBuf], format: Format) -> Result<()> {
    let mut paths = Vec::new();
    for input in inputs {
        if input.is_file() {
            paths.push(input.clone());
            continue;
        }
        for entry in walkdir::WalkDir::new(input).sort_by_file_name() {
            let entry = entry?;
            if entry.file_type().is_file() && entry.file_name() == "report.json" {
                paths.push(entry.into_path());
            }
        }
    }
    let reports = paths
        .iter()
        .map(|p| RunReport::load(p).with_context(|| format!("reading {}", p.display())))
        .collect::<Result<Vec<_>>>()?;
    let format = ReportFormat::from(format);
    let text = emit_report(&reports, format)?;
    std::fs::create_dir_all(&g.out_dir)?;
    std::fs::write(g.out_dir.join(format!("summary.{}", format.extension())), &text)?;
    print!("{text}");
    Ok(())
}

fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<Error>() {
        Some(Error::Config { .. }) => 2,
        Some(Error::Divergence(_)) => 3,
        _ => 1,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let g = &cli.global;
    let result = match &cli.command {
        Command::Run => run(g),
        Command::Search { budget, space } => search(g, *budget, space.as_deref()),
        Command::Ablate { searches, mean_of_k, stem } => ablate(g, searches, *mean_of_k, stem),
        Command::Profile { batch_size, iterations, warmup } => profile(g, *batch_size, *iterations, *warmup),
        Command::Report { inputs, format } => report(g, inputs, *format),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
