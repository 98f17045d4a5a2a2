//! `turbo` — command-line front end for the token-merging micro-runtime.
//!
//! Thin shell over the library: every subcommand is one pipeline or oracle
//! call plus serialization. Subcommands:
//!
//! - `run` executes one pipeline, writes `run_report.json`, `blocks.csv`,
//!   and `output.tmt1`, and prints the FLOPs and throughput ratios;
//! - `sweep` re-runs the pipeline across one axis (`drop_ratio`, `alpha`,
//!   or `strategy`) and emits per-point FLOPs, throughput, and divergence
//!   from the unmerged baseline;
//! - `verify` drives the randomized self-verification suites;
//! - `metrics` recomputes the redundancy/concentration diagnostics from a
//!   saved TMT1 activation dump.
//!
//! Exit codes: 0 ok, 1 verification failure, 2 config error, 3 numerical
//! error. Environment: `TURBO_OUT_DIR` overrides the output directory when
//! `--out` is absent; `TURBO_THREADS` caps the sweep worker pool when
//! `--threads` is absent.

mod config;

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use clap::{Args, Parser, Subcommand, ValueEnum};
use turbo_core::informativity::{attention_concentration, token_redundancy_metric, StrategyKind};
use turbo_core::pipeline::{cls_divergence, run_generation, run_understanding, PipelineMode};
use turbo_core::synth::gaussian_tokens;
use turbo_core::verify::{run_suites, Fault, Scale};
use turbo_core::{tmt1, Error, Matrix, RunReport, TurboConfig};

use config::RunConfig;

pub const EXIT_VERIFY: u8 = 1;
pub const EXIT_CONFIG: u8 = 2;
pub const EXIT_NUMERIC: u8 = 3;

/// A failure carrying the process exit code it maps to.
#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub message: String,
}

impl Failure {
    fn config(message: impl Into<String>) -> Failure {
        Failure {
            code: EXIT_CONFIG,
            message: message.into(),
        }
    }

    /// Library errors split into "your inputs are wrong" (exit 2) and
    /// "the computation went wrong" (exit 3).
    fn from_core(e: Error) -> Failure {
        let code = match &e {
            Error::Config(_) | Error::Io(_) | Error::Format(_) => EXIT_CONFIG,
            _ => EXIT_NUMERIC,
        };
        Failure {
            code,
            message: e.to_string(),
        }
    }
}

#[derive(Parser)]
#[command(name = "turbo", version, about = "Token-merging transformer micro-runtime")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one pipeline and write its report artifacts.
    Run(RunArgs),
    /// Sweep one axis and emit FLOPs, throughput, and divergence per point.
    Sweep(SweepArgs),
    /// Run the randomized verification suites against the 64-bit oracles.
    Verify(VerifyArgs),
    /// Recompute informativity metrics from a saved TMT1 activation dump.
    Metrics(MetricsArgs),
}

#[derive(Args)]
struct RunArgs {
    /// Config file (strict JSON; see the repository README for the schema).
    #[arg(long)]
    config: PathBuf,
    /// Output directory (default: TURBO_OUT_DIR, then the working directory).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Override the config's model seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct SweepArgs {
    /// Config file; its turbo section is the template every point edits.
    #[arg(long)]
    config: PathBuf,
    /// Output directory for sweep.csv (default: TURBO_OUT_DIR, then ".").
    #[arg(long)]
    out: Option<PathBuf>,
    /// Override the config's model seed.
    #[arg(long)]
    seed: Option<u64>,
    /// The knob the sweep varies.
    #[arg(long, value_enum)]
    axis: Axis,
    /// Comma-separated axis values: counts for drop_ratio, numbers for
    /// alpha, names (s1..s4) for strategy.
    #[arg(long)]
    values: String,
    /// Worker pool size (default: TURBO_THREADS, then logical cores).
    #[arg(long)]
    threads: Option<usize>,
    /// Standard-output rendering; sweep.csv is written either way.
    #[arg(long, value_enum, default_value_t = Format::Csv)]
    format: Format,
}

#[derive(Args)]
struct VerifyArgs {
    /// Suite size: quick is a seconds-scale smoke run, full draws at least
    /// 500 randomized instances.
    #[arg(long, value_enum, default_value_t = ScaleArg::Quick)]
    scale: ScaleArg,
    /// Seed pinning the randomized instances.
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// Arm a deliberate defect to prove the failure path reports.
    #[arg(long, value_enum)]
    inject_fault: Option<FaultArg>,
}

#[derive(Args)]
struct MetricsArgs {
    /// Token activation dump (TMT1, one row per token).
    tokens: PathBuf,
    /// Optional semantic-weight dump (1xN or Nx1 TMT1) for the
    /// concentration metric.
    #[arg(long)]
    semantic: Option<PathBuf>,
    /// Output rendering.
    #[arg(long, value_enum, default_value_t = Format::Json)]
    format: Format,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
#[value(rename_all = "snake_case")]
enum Axis {
    /// Tokens removed per block.
    DropRatio,
    /// Semantic weight of the fusion strategy.
    Alpha,
    /// Fusion strategy kind.
    Strategy,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Csv,
    Json,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ScaleArg {
    Quick,
    Full,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
#[value(rename_all = "snake_case")]
enum FaultArg {
    /// Corrupt a size vector so mass conservation must fail.
    CorruptSizes,
}

fn main() {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Run(args) => cmd_run(args),
        Command::Sweep(args) => cmd_sweep(args),
        Command::Verify(args) => cmd_verify(args),
        Command::Metrics(args) => cmd_metrics(args),
    };
    if let Err(failure) = result {
        eprintln!("error: {}", failure.message);
        std::process::exit(i32::from(failure.code));
    }
}

fn resolve_out_dir(flag: Option<&Path>) -> PathBuf {
    if let Some(dir) = flag {
        return dir.to_path_buf();
    }
    match std::env::var_os("TURBO_OUT_DIR") {
        Some(v) if !v.is_empty() => PathBuf::from(v),
        _ => PathBuf::from("."),
    }
}

fn resolve_threads(flag: Option<usize>) -> Result<usize, Failure> {
    let n = match flag {
        Some(n) => n,
        None => match std::env::var("TURBO_THREADS") {
            Ok(v) => v
                .parse()
                .map_err(|_| Failure::config(format!("TURBO_THREADS is not a number: {v:?}")))?,
            Err(_) => std::thread::available_parallelism()
                .map(usize::from)
                .unwrap_or(1),
        },
    };
    if n == 0 {
        return Err(Failure::config("thread count must be at least 1"));
    }
    Ok(n)
}

fn write_text(path: &Path, text: &str) -> Result<(), Failure> {
    fs::write(path, text).map_err(|e| Failure {
        code: EXIT_CONFIG,
        message: format!("cannot write {}: {e}", path.display()),
    })
}

/// Loads the input dump named by the config, or synthesizes a Gaussian
/// input from the model seed so bare configs are runnable.
fn load_input(cfg: &RunConfig) -> Result<Matrix, Failure> {
    match &cfg.input {
        Some(path) => tmt1::read_file(path).map_err(Failure::from_core),
        None => Ok(gaussian_tokens(
            cfg.model.input_tokens,
            cfg.model.width,
            cfg.model.seed,
        )),
    }
}

/// Same for the generation context, offsetting the seed so input and
/// context never coincide.
fn load_context(cfg: &RunConfig) -> Result<Matrix, Failure> {
    match &cfg.context {
        Some(path) => tmt1::read_file(path).map_err(Failure::from_core),
        None => Ok(gaussian_tokens(
            cfg.model.context_tokens,
            cfg.model.context_width(),
            cfg.model.seed.wrapping_add(1),
        )),
    }
}

fn execute(cfg: &RunConfig, turbo: &TurboConfig) -> Result<(Matrix, RunReport), Failure> {
    let input = load_input(cfg)?;
    match cfg.model.mode {
        PipelineMode::Understanding => {
            run_understanding(&cfg.model, turbo, &input, cfg.repetitions)
        }
        PipelineMode::Generation => {
            let context = load_context(cfg)?;
            run_generation(&cfg.model, turbo, &input, &context, cfg.repetitions)
        }
    }
    .map_err(Failure::from_core)
}

fn cmd_run(args: &RunArgs) -> Result<(), Failure> {
    let mut cfg = RunConfig::load(&args.config)?;
    if let Some(seed) = args.seed {
        cfg.model.seed = seed;
    }
    let out_dir = resolve_out_dir(args.out.as_deref());
    fs::create_dir_all(&out_dir).map_err(|e| {
        Failure::config(format!("cannot create {}: {e}", out_dir.display()))
    })?;

    let (output, report) = execute(&cfg, &cfg.turbo)?;

    let report_path = out_dir.join("run_report.json");
    write_text(&report_path, &report.to_json().map_err(Failure::from_core)?)?;
    let blocks_path = out_dir.join("blocks.csv");
    write_text(&blocks_path, &report.blocks_csv())?;
    let output_path = out_dir.join("output.tmt1");
    tmt1::write_file(&output_path, &output).map_err(Failure::from_core)?;

    println!("flops ratio {:.2}x", report.flops_ratio);
    println!("throughput ratio {:.2}x", report.speedup);
    println!("checksum {}", report.output_checksum);
    println!("wrote {}", report_path.display());
    println!("wrote {}", blocks_path.display());
    println!("wrote {}", output_path.display());
    Ok(())
}

/// One sweep point: the axis label plus the turbo config it selects.
#[derive(Debug)]
struct SweepPoint {
    label: String,
    turbo: TurboConfig,
}

fn parse_points(axis: Axis, values: &str, template: &TurboConfig) -> Result<Vec<SweepPoint>, Failure> {
    let mut points = Vec::new();
    for raw in values.split(',') {
        let raw = raw.trim();
        if raw.is_empty() {
            return Err(Failure::config("empty value in --values"));
        }
        let mut turbo = *template;
        match axis {
            Axis::DropRatio => {
                turbo.drop_ratio = raw
                    .parse()
                    .map_err(|_| Failure::config(format!("drop_ratio value is not a count: {raw}")))?;
            }
            Axis::Alpha => {
                turbo.strategy.alpha = raw
                    .parse()
                    .map_err(|_| Failure::config(format!("alpha value is not a number: {raw}")))?;
            }
            Axis::Strategy => {
                turbo.strategy.kind = match raw.to_ascii_lowercase().as_str() {
                    "s1" => StrategyKind::S1,
                    "s2" => StrategyKind::S2,
                    "s3" => StrategyKind::S3,
                    "s4" => StrategyKind::S4,
                    _ => {
                        return Err(Failure::config(format!(
                            "unknown strategy {raw}; expected s1, s2, s3, or s4"
                        )))
                    }
                };
            }
        }
        turbo.validate().map_err(Failure::from_core)?;
        points.push(SweepPoint {
            label: raw.to_string(),
            turbo,
        });
    }
    if points.is_empty() {
        return Err(Failure::config("--values is empty"));
    }
    Ok(points)
}

struct SweepRow {
    label: String,
    flops: u64,
    throughput: f64,
    divergence: f32,
}

fn cmd_sweep(args: &SweepArgs) -> Result<(), Failure> {
    let mut cfg = RunConfig::load(&args.config)?;
    if let Some(seed) = args.seed {
        cfg.model.seed = seed;
    }
    let out_dir = resolve_out_dir(args.out.as_deref());
    fs::create_dir_all(&out_dir).map_err(|e| {
        Failure::config(format!("cannot create {}: {e}", out_dir.display()))
    })?;
    let threads = resolve_threads(args.threads)?;
    let points = parse_points(args.axis, &args.values, &cfg.turbo)?;

    // Divergence is measured against the unmerged run of the same model.
    let baseline_turbo = TurboConfig {
        drop_ratio: 0,
        ..cfg.turbo
    };
    let (baseline_out, _) = execute(&cfg, &baseline_turbo)?;

    // Bounded worker pool: each point is independent, workers pull the
    // next unclaimed index until the list is exhausted.
    let next = AtomicUsize::new(0);
    let slots: Vec<Mutex<Option<Result<SweepRow, Failure>>>> =
        points.iter().map(|_| Mutex::new(None)).collect();
    std::thread::scope(|scope| {
        for _ in 0..threads.min(points.len()) {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= points.len() {
                    break;
                }
                let outcome = execute(&cfg, &points[i].turbo).and_then(|(out, report)| {
                    let divergence =
                        cls_divergence(&out, &baseline_out).map_err(Failure::from_core)?;
                    Ok(SweepRow {
                        label: points[i].label.clone(),
                        flops: report.flops_turbo,
                        throughput: report.throughput_turbo,
                        divergence,
                    })
                });
                *slots[i].lock().unwrap() = Some(outcome);
            });
        }
    });

    let mut rows = Vec::with_capacity(points.len());
    for slot in slots {
        let outcome = slot
            .into_inner()
            .unwrap()
            .expect("every sweep slot is filled before the scope ends");
        rows.push(outcome?);
    }

    let mut csv = String::from("value,flops,throughput,divergence\n");
    for row in &rows {
        csv.push_str(&format!(
            "{},{},{},{}\n",
            row.label, row.flops, row.throughput, row.divergence
        ));
    }
    let csv_path = out_dir.join("sweep.csv");
    write_text(&csv_path, &csv)?;

    match args.format {
        Format::Csv => print!("{csv}"),
        Format::Json => {
            let items: Vec<serde_json::Value> = rows
                .iter()
                .map(|row| {
                    serde_json::json!({
                        "value": row.label,
                        "flops": row.flops,
                        "throughput": row.throughput,
                        "divergence": row.divergence,
                    })
                })
                .collect();
            println!(
                "{}",
                serde_json::to_string_pretty(&items)
                    .expect("sweep rows serialize")
            );
        }
    }
    println!("wrote {}", csv_path.display());
    Ok(())
}

fn cmd_verify(args: &VerifyArgs) -> Result<(), Failure> {
    let scale = match args.scale {
        ScaleArg::Quick => Scale::Quick,
        ScaleArg::Full => Scale::Full,
    };
    let fault = args.inject_fault.map(|f| match f {
        FaultArg::CorruptSizes => Fault::CorruptSizes,
    });
    let results = run_suites(scale, fault, args.seed);
    let mut failed = 0usize;
    for r in &results {
        if r.passed() {
            println!("property {}: ok ({} instances)", r.name, r.instances);
        } else {
            failed += 1;
            println!(
                "property {}: FAILED ({}/{} instances): {}",
                r.name, r.failures, r.instances, r.detail
            );
        }
    }
    if failed > 0 {
        return Err(Failure {
            code: EXIT_VERIFY,
            message: format!("{failed} of {} properties failed", results.len()),
        });
    }
    Ok(())
}

/// Reads a 1xN or Nx1 dump as a flat weight vector.
fn read_semantic(path: &Path, expected: usize) -> Result<Vec<f32>, Failure> {
    let m = tmt1::read_file(path).map_err(Failure::from_core)?;
    let values = if m.rows() == 1 || m.cols() == 1 {
        m.data().to_vec()
    } else {
        return Err(Failure::config(format!(
            "semantic dump must be a single row or column, got {}x{}",
            m.rows(),
            m.cols()
        )));
    };
    if values.len() != expected {
        return Err(Failure::config(format!(
            "semantic dump has {} weights for {} tokens",
            values.len(),
            expected
        )));
    }
    Ok(values)
}

fn cmd_metrics(args: &MetricsArgs) -> Result<(), Failure> {
    let tokens = tmt1::read_file(&args.tokens).map_err(Failure::from_core)?;
    let r_hat = token_redundancy_metric(&tokens).map_err(Failure::from_core)?;
    let a_hat = match &args.semantic {
        Some(path) => Some(attention_concentration(&read_semantic(
            path,
            tokens.rows(),
        )?)),
        None => None,
    };
    match args.format {
        Format::Json => {
            let mut obj = serde_json::json!({
                "rows": tokens.rows(),
                "width": tokens.cols(),
                "r_hat": r_hat,
            });
            if let Some(a) = a_hat {
                obj["a_hat"] = serde_json::json!(a);
            }
            println!(
                "{}",
                serde_json::to_string_pretty(&obj).expect("metrics serialize")
            );
        }
        Format::Csv => match a_hat {
            Some(a) => {
                println!("rows,width,r_hat,a_hat");
                println!("{},{},{},{}", tokens.rows(), tokens.cols(), r_hat, a);
            }
            None => {
                println!("rows,width,r_hat");
                println!("{},{},{}", tokens.rows(), tokens.cols(), r_hat);
            }
        },
    }
    Ok(())
}
