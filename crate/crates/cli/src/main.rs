use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use mps_core::pipeline::{
    make_report, plot_violin, read_labels, run_extraction, ComparisonReport, RecordStore, ReportOptions, RunConfig,
    RunOptions,
};
use mps_core::{BaselineSpec, Error, Result};

/// Minimal sufficient pixel sets: extraction and cross-model comparison.
#[derive(Parser, Debug)]
#[command(name = "mpsx", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Extract one MPS per (model, image) and persist the records.
    Extract(ExtractArgs),
    /// Write the full comparison report (JSON, Markdown and CSV tables).
    Compare {
        #[arg(long)]
        records: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        common: ReadArgs,
    },
    /// Print the statistical tests and effect estimate as JSON.
    Stats {
        #[arg(long)]
        records: PathBuf,
        /// `image_id,class_index` CSV; replaces stored ground truth.
        #[arg(long)]
        labels: PathBuf,
        #[arg(long, default_value_t = mps_core::stats::DEFAULT_ALPHA)]
        significance: f64,
    },
    /// Print the report to stdout.
    Report {
        #[arg(long)]
        records: PathBuf,
        #[arg(long, value_enum, default_value_t = Format::Md)]
        format: Format,
        #[command(flatten)]
        common: ReadArgs,
    },
    /// Write a violin plot of MPS area ratios per model.
    Plot {
        #[arg(long)]
        records: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(clap::Args, Debug)]
struct ExtractArgs {
    /// Run configuration JSON.
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    workers: Option<usize>,
    /// Recompute records that already exist.
    #[arg(long)]
    force: bool,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    iterations: Option<usize>,
    /// Oracle calls per image for the search.
    #[arg(long)]
    budget: Option<usize>,
    #[arg(long)]
    max_depth: Option<usize>,
    #[arg(long)]
    min_side: Option<usize>,
    /// Occlusion value, one or one per channel, comma separated.
    #[arg(long, value_delimiter = ',', num_args = 1..)]
    baseline: Option<Vec<f32>>,
    #[arg(long)]
    chunk_fraction: Option<f64>,
    #[arg(long)]
    output: Option<PathBuf>,
    #[arg(long)]
    save_landscapes: bool,
}

#[derive(clap::Args, Debug)]
struct ReadArgs {
    /// `image_id,class_index` CSV; replaces stored ground truth.
    #[arg(long)]
    labels: Option<PathBuf>,
    #[arg(long, default_value_t = mps_core::stats::DEFAULT_ALPHA)]
    significance: f64,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Format {
    Csv,
    Md,
}

fn open_store(records: &Path, labels: Option<&Path>) -> Result<RecordStore> {
    let mut store = RecordStore::open(records)?;
    if let Some(path) = labels {
        store.apply_labels(&read_labels(path)?);
    }
    Ok(store)
}

fn report_for(records: &Path, common: &ReadArgs) -> Result<ComparisonReport> {
    let store = open_store(records, common.labels.as_deref())?;
    make_report(&store, &ReportOptions { significance: common.significance, ..ReportOptions::default() })
}

fn check_alpha(alpha: f64) -> Result<()> {
    if alpha > 0.0 && alpha < 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("significance must be in (0, 1), got {alpha}")))
    }
}

fn extract(args: ExtractArgs) -> Result<()> {
    let mut config = RunConfig::from_json_file(&args.config)?;
    let search = &mut config.search;
    search.seed = args.seed.unwrap_or(search.seed);
    search.iterations = args.iterations.unwrap_or(search.iterations);
    search.mutant_budget = args.budget.unwrap_or(search.mutant_budget);
    search.max_depth = args.max_depth.unwrap_or(search.max_depth);
    search.min_side = args.min_side.unwrap_or(search.min_side);
    if let Some(values) = args.baseline {
        config.baseline = BaselineSpec { values };
    }
    config.chunk_fraction = args.chunk_fraction.unwrap_or(config.chunk_fraction);
    if let Some(out) = args.output {
        config.output = out;
    }
    config.save_landscapes |= args.save_landscapes;
    if args.workers == Some(0) {
        return Err(Error::InvalidArgument("--workers must be >= 1".into()));
    }
    let summary = run_extraction(&config, &RunOptions { workers: args.workers, force: args.force })?;
    for (model, reason) in &summary.failed_models {
        eprintln!("model {model} skipped: {reason}");
    }
    println!(
        "{} records ({} computed, {} reused, {} oracle calls), {} image(s) skipped, config {}",
        summary.records.len(),
        summary.computed,
        summary.reused,
        summary.oracle_calls,
        summary.skipped_images,
        summary.config_hash
    );
    Ok(())
}

fn emit(text: &str) -> Result<()> {
    let mut out = std::io::stdout().lock();
    out.write_all(text.as_bytes())
        .and_then(|_| out.flush())
        .map_err(|e| Error::io("<stdout>", e))
}

fn dispatch(command: Command) -> Result<()> {
    match command {
        Command::Extract(args) => extract(args),
        Command::Compare { records, out, common } => {
            check_alpha(common.significance)?;
            let report = report_for(&records, &common)?;
            report.write_to(&out)?;
            for note in &report.notes {
                log::warn!("{note}");
            }
            println!("report written to {}", out.display());
            Ok(())
        }
        Command::Stats { records, labels, significance } => {
            check_alpha(significance)?;
            let common = ReadArgs { labels: Some(labels), significance };
            let report = report_for(&records, &common)?;
            let value = serde_json::json!({
                "records": report.records,
                "degenerate": report.degenerate,
                "correctness_source": report.correctness_source,
                "area_table": report.area_table,
                "tests": report.tests,
                "effect": report.effect,
                "notes": report.notes,
            });
            emit(&format!("{}\n", serde_json::to_string_pretty(&value)?))
        }
        Command::Report { records, format, common } => {
            check_alpha(common.significance)?;
            let report = report_for(&records, &common)?;
            emit(&match format {
                Format::Csv => report.area_csv(),
                Format::Md => report.to_markdown(),
            })
        }
        Command::Plot { records, out } => {
            let store = RecordStore::open(&records)?;
            let (svg, skipped) = plot_violin(&store.records, &store.tags())?;
            for model in skipped {
                eprintln!("model {model} left out of the plot: fewer than 2 non-degenerate records");
            }
            if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
                std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
            }
            std::fs::write(&out, svg).map_err(|e| Error::io(&out, e))
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
