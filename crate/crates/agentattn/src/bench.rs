//! Wall-clock scaling sweeps for the attention kernels.

use std::hint::black_box;
use std::io::Write;
use std::time::Instant;

use agentattn_core::attention::{agent_attention_pure, softmax_attention};
use agentattn_core::flops::{FlopModel, Kernel};
use agentattn_core::{AttentionInputs, DType, Scalar, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};

pub const MIN_REPEATS: usize = 5;
pub const MIN_WARMUPS: usize = 2;
pub const CSV_HEADER: &str = "kernel,N,n,d,dtype,wall_ns,mac_count";
/// Environment variable capping the throughput mode's thread count.
pub const THREADS_ENV: &str = "AGENTATTN_THREADS";

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct BenchRow {
    pub kernel: Kernel,
    #[serde(rename = "N")]
    pub tokens: usize,
    #[serde(rename = "n")]
    pub agents: usize,
    #[serde(rename = "d")]
    pub head_dim: usize,
    pub dtype: DType,
    /// Median over the timed repeats, at least 1.
    pub wall_ns: u64,
    pub mac_count: u64,
}

impl BenchRow {
    pub fn csv(&self) -> String {
        format!(
            "{},{},{},{},{},{},{}",
            self.kernel, self.tokens, self.agents, self.head_dim, self.dtype, self.wall_ns, self.mac_count
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScalingConfig {
    pub kernel: Kernel,
    pub tokens: Vec<usize>,
    pub agents: usize,
    pub head_dim: usize,
    pub heads: usize,
    pub dtype: DType,
    pub repeats: usize,
    pub warmups: usize,
    pub seed: u64,
    /// Refuse sizes whose working set would exceed this many bytes.
    pub memory_budget: Option<usize>,
}

impl ScalingConfig {
    pub fn new(kernel: Kernel, tokens: Vec<usize>, agents: usize, head_dim: usize) -> Self {
        ScalingConfig {
            kernel,
            tokens,
            agents,
            head_dim,
            heads: 1,
            dtype: DType::F32,
            repeats: MIN_REPEATS,
            warmups: MIN_WARMUPS,
            seed: 0,
            memory_budget: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(agentattn_core::Error::Config(m).into());
        if self.repeats < MIN_REPEATS {
            return bad(format!("repeats must be at least {MIN_REPEATS}, got {}", self.repeats));
        }
        if self.warmups < MIN_WARMUPS {
            return bad(format!("warmups must be at least {MIN_WARMUPS}, got {}", self.warmups));
        }
        if self.tokens.is_empty() {
            return bad("empty N sweep".into());
        }
        if self.tokens.windows(2).any(|w| w[0] >= w[1]) {
            return bad(format!("N values must be strictly ascending: {:?}", self.tokens));
        }
        if self.tokens[0] == 0 || self.agents == 0 || self.head_dim == 0 || self.heads == 0 {
            return bad("N, n, d and heads must be positive".into());
        }
        Ok(())
    }

    /// Bytes held while timing one size: per-head inputs plus the kernel's
    /// largest intermediates.
    pub fn working_set(&self, tokens: usize) -> Option<usize> {
        let (n, d) = (self.agents, self.head_dim);
        let inputs = 3usize.checked_mul(tokens)?.checked_mul(d)?.checked_add(n * d)?;
        let scratch = match self.kernel {
            Kernel::Agent => tokens.checked_mul(2 * n + 2 * d)?,
            Kernel::Softmax => tokens.checked_mul(64 + 3 * d)?,
        };
        inputs
            .checked_mul(self.heads)?
            .checked_add(scratch)?
            .checked_mul(self.dtype.size_of())
    }
}

/// A sweep that stopped early; `rows` holds every completed size.
#[derive(Debug)]
pub struct ScalingError {
    pub rows: Vec<BenchRow>,
    pub error: Error,
}

#[derive(Debug)]
pub struct ThroughputError {
    pub rows: Vec<ThroughputRow>,
    pub error: Error,
}

impl From<Error> for ThroughputError {
    fn from(error: Error) -> Self {
        ThroughputError { rows: Vec::new(), error }
    }
}

impl From<Error> for ScalingError {
    fn from(error: Error) -> Self {
        ScalingError { rows: Vec::new(), error }
    }
}

fn reserve(cfg: &ScalingConfig, tokens: usize) -> Result<()> {
    let bytes = cfg
        .working_set(tokens)
        .ok_or_else(|| Error::Resource(format!("working set for N={tokens} overflows usize")))?;
    if let Some(budget) = cfg.memory_budget {
        if bytes > budget {
            return Err(Error::Resource(format!("N={tokens} needs {bytes} bytes, budget is {budget}")));
        }
    }
    let mut probe: Vec<u8> = Vec::new();
    probe
        .try_reserve_exact(bytes)
        .map_err(|e| Error::Resource(format!("N={tokens}: cannot allocate {bytes} bytes: {e}")))
}

fn make_inputs<T: Scalar>(cfg: &ScalingConfig, tokens: usize) -> Result<Vec<AttentionInputs<T>>> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ tokens as u64);
    let d = cfg.head_dim;
    (0..cfg.heads)
        .map(|_| {
            let q = Tensor::<T>::randn([tokens, d], 1.0, &mut rng)?;
            let k = Tensor::<T>::randn([tokens, d], 1.0, &mut rng)?;
            let v = Tensor::<T>::randn([tokens, d], 1.0, &mut rng)?;
            let mut inp = AttentionInputs::new(q, k, v)?;
            if cfg.kernel == Kernel::Agent {
                inp = inp.with_agents(Tensor::randn([cfg.agents, d], 1.0, &mut rng)?)?;
            }
            Ok(inp)
        })
        .collect()
}

fn call<T: Scalar>(kernel: Kernel, heads: &[AttentionInputs<T>]) -> Result<()> {
    for inp in heads {
        let out = match kernel {
            Kernel::Agent => agent_attention_pure(black_box(inp))?,
            Kernel::Softmax => softmax_attention(black_box(inp))?,
        };
        black_box(out);
    }
    Ok(())
}

fn median(mut xs: Vec<u64>) -> u64 {
    xs.sort_unstable();
    let m = xs.len() / 2;
    if xs.len() % 2 == 1 {
        xs[m]
    } else {
        (xs[m - 1] + xs[m]) / 2
    }
}

fn time_one<T: Scalar>(cfg: &ScalingConfig, tokens: usize) -> Result<BenchRow> {
    reserve(cfg, tokens)?;
    let inputs = make_inputs::<T>(cfg, tokens)?;
    for _ in 0..cfg.warmups {
        call(cfg.kernel, &inputs)?;
    }
    let mut samples = Vec::with_capacity(cfg.repeats);
    for _ in 0..cfg.repeats {
        let t0 = Instant::now();
        call(cfg.kernel, &inputs)?;
        samples.push(t0.elapsed().as_nanos().max(1) as u64);
    }
    let fm = FlopModel::new(cfg.kernel, tokens, cfg.agents, cfg.head_dim, cfg.heads)?;
    Ok(BenchRow {
        kernel: cfg.kernel,
        tokens,
        agents: cfg.agents,
        head_dim: cfg.head_dim,
        dtype: cfg.dtype,
        wall_ns: median(samples),
        mac_count: fm.mac_count,
    })
}

/// Time the kernel at each `N` on the calling thread. Rows come out in
/// ascending `N`. A size that cannot be allocated ends the sweep with a
/// resource error that keeps the rows measured so far.
pub fn run_scaling(cfg: &ScalingConfig) -> std::result::Result<Vec<BenchRow>, ScalingError> {
    cfg.validate()?;
    let mut rows = Vec::with_capacity(cfg.tokens.len());
    for &tokens in &cfg.tokens {
        let row = match cfg.dtype {
            DType::F32 => time_one::<f32>(cfg, tokens),
            DType::F64 => time_one::<f64>(cfg, tokens),
        };
        match row {
            Ok(r) => rows.push(r),
            Err(error) => return Err(ScalingError { rows, error }),
        }
    }
    Ok(rows)
}

pub fn write_csv<W: Write>(mut w: W, rows: &[BenchRow]) -> std::io::Result<()> {
    writeln!(w, "{CSV_HEADER}")?;
    for r in rows {
        writeln!(w, "{}", r.csv())?;
    }
    Ok(())
}

/// Least-squares slope of `ln wall_ns` against `ln N`.
pub fn loglog_slope(rows: &[BenchRow]) -> Option<f64> {
    if rows.len() < 2 {
        return None;
    }
    let pts: Vec<(f64, f64)> = rows.iter().map(|r| ((r.tokens as f64).ln(), (r.wall_ns as f64).ln())).collect();
    let m = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / m;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / m;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    (sxx > 0.0).then(|| sxy / sxx)
}

/// Adjacent pairs whose wall time drops as `N` grows.
pub fn inversions(rows: &[BenchRow]) -> usize {
    rows.windows(2).filter(|w| w[1].wall_ns < w[0].wall_ns).count()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScalingSummary {
    pub kernel: Kernel,
    pub n: usize,
    pub d: usize,
    pub dtype: DType,
    #[serde(rename = "Ns")]
    pub tokens: Vec<usize>,
    pub loglog_slope: Option<f64>,
    pub inversions: usize,
}

impl ScalingSummary {
    pub fn new(cfg: &ScalingConfig, rows: &[BenchRow]) -> Self {
        ScalingSummary {
            kernel: cfg.kernel,
            n: cfg.agents,
            d: cfg.head_dim,
            dtype: cfg.dtype,
            tokens: rows.iter().map(|r| r.tokens).collect(),
            loglog_slope: loglog_slope(rows),
            inversions: inversions(rows),
        }
    }
}

/// Thread count for throughput mode: the request, capped by
/// [`THREADS_ENV`] when it holds a positive integer.
pub fn thread_cap(requested: usize) -> usize {
    let cap = std::env::var(THREADS_ENV).ok().and_then(|v| v.trim().parse::<usize>().ok()).filter(|&c| c > 0);
    requested.max(1).min(cap.unwrap_or(usize::MAX))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ThroughputRow {
    pub kernel: Kernel,
    #[serde(rename = "N")]
    pub tokens: usize,
    pub threads: usize,
    pub calls: usize,
    pub wall_ns: u64,
    pub calls_per_sec: f64,
}

fn throughput_one<T: Scalar>(cfg: &ScalingConfig, tokens: usize, threads: usize) -> Result<ThroughputRow> {
    reserve(cfg, tokens)?;
    let inputs = make_inputs::<T>(cfg, tokens)?;
    call(cfg.kernel, &inputs)?;
    let t0 = Instant::now();
    std::thread::scope(|s| {
        let handles: Vec<_> = (0..threads)
            .map(|_| {
                s.spawn(|| {
                    for _ in 0..cfg.repeats {
                        call(cfg.kernel, &inputs)?;
                    }
                    Ok::<_, Error>(())
                })
            })
            .collect();
        handles.into_iter().try_for_each(|h| h.join().expect("benchmark thread panicked"))
    })?;
    let wall_ns = t0.elapsed().as_nanos().max(1) as u64;
    let calls = threads * cfg.repeats;
    Ok(ThroughputRow {
        kernel: cfg.kernel,
        tokens,
        threads,
        calls,
        wall_ns,
        calls_per_sec: calls as f64 / (wall_ns as f64 * 1e-9),
    })
}

/// Aggregate calls per second with `threads` workers sharing the inputs.
/// Reported separately from the single-threaded scaling rows.
pub fn run_throughput(
    cfg: &ScalingConfig,
    threads: usize,
) -> std::result::Result<Vec<ThroughputRow>, ThroughputError> {
    cfg.validate()?;
    let threads = thread_cap(threads);
    let mut rows = Vec::new();
    for &tokens in &cfg.tokens {
        let row = match cfg.dtype {
            DType::F32 => throughput_one::<f32>(cfg, tokens, threads),
            DType::F64 => throughput_one::<f64>(cfg, tokens, threads),
        };
        match row {
            Ok(r) => rows.push(r),
            Err(error) => return Err(ThroughputError { rows, error }),
        }
    }
    Ok(rows)
}
