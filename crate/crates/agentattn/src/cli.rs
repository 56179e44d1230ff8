//! The `agentattn` command line. Exit codes: 0 success, 1 a check or run
//! failed, 2 usage or configuration error.

use std::ffi::OsString;
use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use agentattn_core::flops::{flops_model_forward, Kernel, ModelFlops};
use agentattn_core::verify::{gradient_suite, oracle_sweep, property_suite, CheckReport, Fault};
use agentattn_core::{DType, Model, ModelPreset, ParamReport};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::bench::{run_scaling, run_throughput, write_csv, ScalingConfig, ScalingSummary, MIN_WARMUPS};
use crate::error::{Error, Result};
use crate::params::save_model;
use crate::presets::{load_preset, resolve};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILED: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "agentattn", version, about = "Agent attention verification, accounting and benchmarks")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the property, oracle and gradient suites; JSON lines, failures last.
    Verify(VerifyArgs),
    /// Time a kernel over a sweep of token counts; CSV rows.
    Bench(BenchArgs),
    /// Parameter and MAC accounting for a preset file.
    Params(ParamsArgs),
}

#[derive(Debug, Args)]
pub struct VerifyArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Random instances per property.
    #[arg(long, default_value_t = 20)]
    pub trials: usize,
    /// Element type of the oracle sweep.
    #[arg(long, default_value = "f64", value_parser = parse_dtype)]
    pub dtype: DType,
    /// Seeds per grid cell of the oracle sweep.
    #[arg(long, default_value_t = 5)]
    pub oracle_seeds: usize,
    /// Deliberate fault: rowsum, oracle or gradient.
    #[arg(long, value_parser = parse_fault)]
    pub inject: Option<Fault>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    /// Comma-separated kernels: agent, softmax.
    #[arg(long, default_value = "agent", value_delimiter = ',', value_parser = parse_kernel)]
    pub kernel: Vec<Kernel>,
    /// Strictly ascending token counts.
    #[arg(long = "Ns", value_delimiter = ',', default_value = "256,512,1024,2048")]
    pub tokens: Vec<usize>,
    #[arg(long, default_value_t = 49)]
    pub n: usize,
    #[arg(long, default_value_t = 64)]
    pub d: usize,
    #[arg(long, default_value_t = 1)]
    pub heads: usize,
    #[arg(long, default_value = "f32", value_parser = parse_dtype)]
    pub dtype: DType,
    #[arg(long, default_value_t = 5)]
    pub repeats: usize,
    #[arg(long, default_value_t = MIN_WARMUPS)]
    pub warmups: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Stop before any size whose working set exceeds this many bytes.
    #[arg(long)]
    pub memory_budget: Option<usize>,
    /// Also run the multi-threaded throughput mode with this many workers.
    #[arg(long)]
    pub threads: Option<usize>,
    /// CSV destination; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Write the JSON slope summary here as well as to stderr.
    #[arg(long)]
    pub summary: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ParamsArgs {
    /// Preset JSON path, or a file name under the shipped presets directory.
    #[arg(long)]
    pub preset: String,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Allocate the model and count its tensors as well.
    #[arg(long)]
    pub build: bool,
    /// Build the model and write its parameter directory here.
    #[arg(long)]
    pub save: Option<PathBuf>,
    #[arg(long, default_value = "f32", value_parser = parse_dtype)]
    pub dtype: DType,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn parse_dtype(s: &str) -> std::result::Result<DType, String> {
    s.parse().map_err(|e: agentattn_core::Error| e.to_string())
}

fn parse_fault(s: &str) -> std::result::Result<Fault, String> {
    s.parse().map_err(|e: agentattn_core::Error| e.to_string())
}

fn parse_kernel(s: &str) -> std::result::Result<Kernel, String> {
    s.parse().map_err(|e: agentattn_core::Error| e.to_string())
}

/// Exit code for an error that ended a subcommand.
pub fn exit_code(e: &Error) -> i32 {
    use agentattn_core::Error as Core;
    match e {
        Error::Core(Core::Config(_) | Core::Dimension(_) | Core::Type { .. })
        | Error::Io { .. }
        | Error::Json { .. }
        | Error::Format(_) => EXIT_USAGE,
        Error::Core(_) | Error::Resource(_) => EXIT_FAILED,
    }
}

fn sink(out: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match out {
        Some(p) => Box::new(BufWriter::new(File::create(p).map_err(|e| Error::io(p, e))?)),
        None => Box::new(io::stdout().lock()),
    })
}

fn io_err(out: Option<&Path>, e: io::Error) -> Error {
    Error::io(out.map(Path::to_path_buf).unwrap_or_else(|| PathBuf::from("<stdout>")), e)
}

fn json_line<T: Serialize>(v: &T) -> String {
    serde_json::to_string(v).expect("report types serialize")
}

/// Parse `args` (including the program name) and run; returns the exit code.
pub fn run<I, S>(args: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    let result = match cli.command {
        Command::Verify(a) => cmd_verify(&a),
        Command::Bench(a) => cmd_bench(&a),
        Command::Params(a) => cmd_params(&a),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

/// Every report of the full verification run, failing ones moved last.
pub fn verify_reports(a: &VerifyArgs) -> Result<Vec<CheckReport>> {
    if a.oracle_seeds == 0 {
        return Err(agentattn_core::Error::Config("--oracle-seeds must be at least 1".into()).into());
    }
    let mut reports = property_suite(a.seed, a.trials, a.inject)?;
    match a.dtype {
        DType::F32 => reports.extend(oracle_sweep::<f32>(a.seed, a.oracle_seeds)?),
        DType::F64 => reports.extend(oracle_sweep::<f64>(a.seed, a.oracle_seeds)?),
    }
    reports.extend(gradient_suite(a.seed)?);
    reports.sort_by_key(|r| !r.passed);
    Ok(reports)
}

pub fn cmd_verify(a: &VerifyArgs) -> Result<i32> {
    let reports = verify_reports(a)?;
    let out = a.out.as_deref();
    let mut w = sink(out)?;
    for r in &reports {
        writeln!(w, "{}", json_line(r)).map_err(|e| io_err(out, e))?;
    }
    w.flush().map_err(|e| io_err(out, e))?;
    let failed = reports.iter().filter(|r| !r.passed).count();
    eprintln!("{} checks, {} failed", reports.len(), failed);
    Ok(if failed == 0 { EXIT_OK } else { EXIT_FAILED })
}

pub fn cmd_bench(a: &BenchArgs) -> Result<i32> {
    let configs: Vec<ScalingConfig> = a
        .kernel
        .iter()
        .map(|&kernel| ScalingConfig {
            kernel,
            tokens: a.tokens.clone(),
            agents: a.n,
            head_dim: a.d,
            heads: a.heads,
            dtype: a.dtype,
            repeats: a.repeats,
            warmups: a.warmups,
            seed: a.seed,
            memory_budget: a.memory_budget,
        })
        .collect();
    for c in &configs {
        c.validate()?;
    }
    if a.threads == Some(0) {
        return Err(agentattn_core::Error::Config("--threads must be at least 1".into()).into());
    }
    let mut rows = Vec::new();
    let mut summaries = Vec::new();
    let mut failure = None;
    for c in &configs {
        let (r, err) = match run_scaling(c) {
            Ok(r) => (r, None),
            Err(e) => (e.rows, Some(e.error)),
        };
        summaries.push(ScalingSummary::new(c, &r));
        rows.extend(r);
        if err.is_some() {
            failure = err;
            break;
        }
    }
    let out = a.out.as_deref();
    let mut w = sink(out)?;
    write_csv(&mut w, &rows).map_err(|e| io_err(out, e))?;
    w.flush().map_err(|e| io_err(out, e))?;
    drop(w);
    for s in &summaries {
        eprintln!("{}", json_line(s));
    }
    if let Some(path) = &a.summary {
        let text = serde_json::to_string_pretty(&summaries).map_err(|e| Error::json(path, e))?;
        std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))?;
    }
    if let Some(e) = failure {
        return Err(e);
    }
    if let Some(threads) = a.threads {
        for c in &configs {
            let rows = run_throughput(c, threads).map_err(|e| {
                for r in &e.rows {
                    eprintln!("{}", json_line(r));
                }
                e.error
            })?;
            for r in &rows {
                eprintln!("{}", json_line(r));
            }
        }
    }
    Ok(EXIT_OK)
}

#[derive(Debug, Serialize)]
pub struct ParamsOutput {
    pub preset: ModelPreset,
    pub params: ParamReport,
    pub flops: ModelFlops,
    /// Count of the allocated tensors when `--build` or `--save` was given.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub built_params: Option<usize>,
}

fn build_and_count<T: agentattn_core::Scalar>(preset: &ModelPreset, a: &ParamsArgs) -> Result<usize> {
    let model = Model::<T>::build(preset, a.seed)?;
    if let Some(dir) = &a.save {
        save_model(dir, &model)?;
    }
    Ok(model.count_params().total)
}

pub fn cmd_params(a: &ParamsArgs) -> Result<i32> {
    let preset = load_preset(resolve(&a.preset))?;
    let params = ParamReport::for_preset(&preset)?;
    let flops = flops_model_forward(&preset)?;
    let built_params = if a.build || a.save.is_some() {
        Some(match a.dtype {
            DType::F32 => build_and_count::<f32>(&preset, a)?,
            DType::F64 => build_and_count::<f64>(&preset, a)?,
        })
    } else {
        None
    };
    let report = ParamsOutput { preset, params, flops, built_params };
    let out = a.out.as_deref();
    let mut w = sink(out)?;
    let text = serde_json::to_string_pretty(&report).expect("report types serialize");
    writeln!(w, "{text}").map_err(|e| io_err(out, e))?;
    w.flush().map_err(|e| io_err(out, e))?;
    Ok(EXIT_OK)
}
