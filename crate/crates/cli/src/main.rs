use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Parser, Subcommand};

use crtgee::io::analyze::{analyze, parse_estimators, AnalyzeOptions, Reference};
use crtgee::io::config::GridConfig;
use crtgee::io::report::{parse_by, summarize, write_summary};
use crtgee::io::results::read_results;
use crtgee::io::simulate::simulate;
use crtgee::io::trial_csv::load_trial_csv;
use crtgee::sandwich::FG_DEFAULT_BOUND;
use crtgee::{Family, Link, ModelSpec};

const THREADS_ENV: &str = "CRTGEE_THREADS";

#[derive(Parser)]
#[command(name = "crtgee", version, about = "GEE analysis and simulation for two-arm cluster randomized trials")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit a GEE to a trial CSV and report corrected Wald inference.
    Analyze(AnalyzeArgs),
    /// Run a simulation grid from a TOML config.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        /// Worker threads; falls back to the config, then CRTGEE_THREADS.
        #[arg(long)]
        threads: Option<usize>,
        /// Keep complete scenarios from an existing results file.
        #[arg(long)]
        resume: bool,
        /// Results path; overrides `output` in the config.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Summarize a results file by grouping columns.
    Report {
        #[arg(long)]
        results: PathBuf,
        /// Comma-separated grouping columns, e.g. `icc,n_clusters,estimator`.
        #[arg(long, default_value = "estimator")]
        by: String,
        /// Summary CSV path; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(clap::Args)]
struct AnalyzeArgs {
    /// CSV with header `cluster_id,arm,outcome`.
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value = "binomial")]
    family: String,
    #[arg(long, default_value = "log")]
    link: String,
    /// Comma-separated estimators: mb, robust, kc, md, fg, mbn, avg.
    #[arg(long, default_value = "mb,robust,kc,md,fg,mbn,avg")]
    corrections: String,
    #[arg(long, default_value_t = 0.95)]
    level: f64,
    /// JSON report path; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Fay-Graubard leverage cap.
    #[arg(long = "fg-r", default_value_t = FG_DEFAULT_BOUND)]
    fg_r: f64,
    /// Use the standard normal reference instead of t (diagnostic).
    #[arg(long)]
    z: bool,
}

fn output(path: Option<&Path>) -> anyhow::Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p).with_context(|| format!("cannot create {}", p.display()))?)),
        None => Box::new(io::stdout().lock()),
    })
}

fn run_analyze(args: &AnalyzeArgs) -> anyhow::Result<bool> {
    let family: Family = args.family.parse()?;
    let link: Link = args.link.parse()?;
    let spec = ModelSpec::two_arm(family, link)?;
    let kinds = parse_estimators(&args.corrections)?;
    let dataset = load_trial_csv(&args.data).with_context(|| format!("reading {}", args.data.display()))?;
    let opts = AnalyzeOptions {
        confidence_level: args.level,
        fg_bound: args.fg_r,
        reference: if args.z { Reference::Normal } else { Reference::T },
        ..AnalyzeOptions::default()
    };
    let report = analyze(&dataset, &spec, &kinds, &opts)?;
    let mut w = output(args.out.as_deref())?;
    writeln!(w, "{}", report.to_json())?;
    w.flush()?;
    if let Some(reason) = &report.failure {
        eprintln!("warning: {reason}");
    }
    Ok(report.converged)
}

fn resolve_threads(flag: Option<usize>, config: Option<usize>) -> anyhow::Result<usize> {
    if let Some(t) = flag.or(config) {
        if t == 0 {
            bail!("threads must be positive");
        }
        return Ok(t);
    }
    if let Ok(v) = std::env::var(THREADS_ENV) {
        let t: usize = v.trim().parse().with_context(|| format!("{THREADS_ENV}: not a thread count: {v:?}"))?;
        if t == 0 {
            bail!("{THREADS_ENV} must be positive");
        }
        return Ok(t);
    }
    Ok(std::thread::available_parallelism().map_or(1, usize::from))
}

fn run_simulate(config: &Path, threads: Option<usize>, resume: bool, out: Option<PathBuf>) -> anyhow::Result<()> {
    let cfg = GridConfig::load(config).with_context(|| format!("config {}", config.display()))?;
    let Some(path) = out.or_else(|| cfg.output.clone()) else {
        bail!("output: no results path in config and no --out given");
    };
    let threads = resolve_threads(threads, cfg.threads)?;
    let summary = simulate(&cfg, &path, threads, resume)?;
    eprintln!(
        "{} scenarios run, {} resumed, {} rows in {}",
        summary.scenarios_run,
        summary.scenarios_resumed,
        summary.rows_written,
        path.display()
    );
    Ok(())
}

fn run_report(results: &Path, by: &str, out: Option<&Path>) -> anyhow::Result<()> {
    let file = File::open(results).with_context(|| format!("cannot open {}", results.display()))?;
    let rows = read_results(file)?;
    let by = parse_by(by);
    let summary = summarize(&rows, &by)?;
    let mut w = output(out)?;
    write_summary(&by, &summary, &mut w)?;
    w.flush()?;
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let result = match cli.command {
        Command::Analyze(args) => {
            run_analyze(&args).map(|converged| if converged { ExitCode::SUCCESS } else { ExitCode::from(2) })
        }
        Command::Simulate { config, threads, resume, out } => {
            run_simulate(&config, threads, resume, out).map(|()| ExitCode::SUCCESS)
        }
        Command::Report { results, by, out } => run_report(&results, &by, out.as_deref()).map(|()| ExitCode::SUCCESS),
    };
    result.unwrap_or_else(|e| {
        eprintln!("error: {e:#}");
        ExitCode::from(1)
    })
}
