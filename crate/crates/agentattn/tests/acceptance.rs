//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit on any failure.

use std::process::ExitCode;
use std::time::{Duration, Instant};

use agentattn::bench::{run_scaling, ScalingConfig};
use agentattn::presets::{load_preset, preset_dir};
use agentattn_core::attention::{
    agent_attention_biased, agent_attention_pure, agent_attention_pure_tallied, softmax_attention_tallied,
};
use agentattn_core::flops::{flop_count, flops_model_forward, Kernel};
use agentattn_core::module::{agent_attention_training_free, pool_agents};
use agentattn_core::ops::{matmul, MacCounter};
use agentattn_core::verify::{
    composed_matrix, composed_matrix_oracle, gradient_check, random_inputs, random_module, AgentKernelOp, ModuleOp,
};
use agentattn_core::{AgentBiasParams, AgentModuleParams, AttentionInputs, DType, ModuleConfig, ParamReport, Tensor};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const EPS: f64 = f64::EPSILON;
const FOUR_EPS: f64 = 4.0 * EPS;

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: impl Into<String>) -> Outcome {
    Outcome { passed, detail: detail.into() }
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// `‖got − want‖∞ / max(1, ‖want‖∞)`.
fn rel(got: &Tensor<f64>, want: &Tensor<f64>) -> f64 {
    got.max_abs_diff(want).unwrap() / want.max_abs().max(1.0)
}

fn oracle_equivalence() -> Outcome {
    let t0 = Instant::now();
    let (mut worst, mut cases) = (0.0f64, 0);
    for &big_n in &[4usize, 16, 64] {
        for &n in &[1usize, 4, 16] {
            for seed in 0..50u64 {
                let inp = random_inputs(big_n, n, 8, &mut rng(seed * 1000 + (big_n * 31 + n) as u64)).unwrap();
                let got = agent_attention_pure(&inp).unwrap();
                let want = composed_matrix_oracle(&inp).unwrap();
                worst = worst.max(got.max_abs_diff(&want).unwrap());
                cases += 1;
            }
        }
    }
    let el = t0.elapsed();
    outcome(
        worst < 1e-12 && el < Duration::from_secs(60),
        format!("{cases} cases, max abs err {worst:.3e} (< 1e-12), {:.2}s (< 60s)", el.as_secs_f64()),
    )
}

fn row_stochastic() -> Outcome {
    let (mut worst, mut rows) = (0.0f64, 0);
    let mut negative = false;
    for &big_n in &[4usize, 16, 64] {
        for &n in &[1usize, 4, 16] {
            for seed in 0..50u64 {
                let inp = random_inputs(big_n, n, 8, &mut rng(seed * 1000 + (big_n * 31 + n) as u64)).unwrap();
                let m = composed_matrix(&inp).unwrap();
                for r in 0..big_n {
                    let row = m.row(r);
                    negative |= row.iter().any(|&v| v < 0.0);
                    worst = worst.max((row.iter().sum::<f64>() - 1.0).abs());
                    rows += 1;
                }
            }
        }
    }
    outcome(!negative && worst < 1e-12, format!("{rows} rows, max |sum - 1| {worst:.3e} (< 1e-12)"))
}

fn gradient_checks() -> Outcome {
    let t0 = Instant::now();
    let (mut kernel_worst, mut module_worst) = (0.0f64, 0.0f64);
    for seed in 0..20u64 {
        let mut r = rng(0x6A0D + seed);
        let (big_n, n, d) = (r.random_range(4..=12), r.random_range(1..=6), r.random_range(2..=6));
        let op = AgentKernelOp { inputs: random_inputs(big_n, n, d, &mut r).unwrap(), b1: None, b2: None };
        kernel_worst = kernel_worst.max(gradient_check(&op, 1e-6, 1e-5).unwrap().rel_err);

        let cfg = ModuleConfig { qkv_bias: true, proj_bias: true, bias_block: 2, ..ModuleConfig::new(6, 2, 4, 4, 4) };
        let params = random_module(cfg, &mut r).unwrap();
        let x = Tensor::randn([16, 6], 1.0, &mut r).unwrap();
        module_worst = module_worst.max(gradient_check(&ModuleOp { params, x }, 1e-6, 1e-4).unwrap().rel_err);
    }
    let el = t0.elapsed();
    outcome(
        kernel_worst < 1e-5 && module_worst < 1e-4 && el < Duration::from_secs(120),
        format!(
            "20 seeds, h=1e-6: kernel rel {kernel_worst:.3e} (< 1e-5), module rel {module_worst:.3e} (< 1e-4), {:.2}s (< 120s)",
            el.as_secs_f64()
        ),
    )
}

/// Heads split from projected `Q, K, V`, agents pooled from `Q`, pure
/// agent attention per head, concatenation, output projection.
fn multi_head_reference(p: &AgentModuleParams<f64>, x: &Tensor<f64>) -> Tensor<f64> {
    let cfg = p.config;
    let (q, k, v) = (matmul(x, &p.wq).unwrap(), matmul(x, &p.wk).unwrap(), matmul(x, &p.wv).unwrap());
    let agents = pool_agents(&q, cfg.h, cfg.w, cfg.agents).unwrap();
    let d = cfg.head_dim();
    let tokens = cfg.tokens();
    let mut merged = vec![0.0; tokens * cfg.dim];
    for h in 0..cfg.heads {
        let cols = |t: &Tensor<f64>| t.slice_cols(h * d, d).unwrap();
        let inp = AttentionInputs::new(cols(&q), cols(&k), cols(&v)).unwrap().with_agents(cols(&agents)).unwrap();
        let o = agent_attention_pure(&inp).unwrap();
        for i in 0..tokens {
            merged[i * cfg.dim + h * d..i * cfg.dim + (h + 1) * d].copy_from_slice(o.row(i));
        }
    }
    matmul(&Tensor::new([tokens, cfg.dim], merged).unwrap(), &p.wo).unwrap()
}

fn reductions() -> Outcome {
    let mut bit_exact = true;
    for seed in 0..20u64 {
        let mut r = rng(0x4A + seed);
        let inp = random_inputs(r.random_range(1..=40), r.random_range(1..=10), r.random_range(1..=8), &mut r).unwrap();
        let tf = agent_attention_training_free(0.0, &inp).unwrap();
        bit_exact &= tf.bit_eq(&agent_attention_pure(&inp).unwrap());
    }

    let mut module_worst = 0.0f64;
    for seed in 0..20u64 {
        let mut r = rng(0x4B + seed);
        let heads = r.random_range(1..=3);
        let dim = heads * r.random_range(1..=4);
        let (h, w) = (r.random_range(2..=6), r.random_range(2..=6));
        let side = r.random_range(1..=h.min(w));
        let cfg = ModuleConfig::new(dim, heads, side * side, h, w);
        let ws = [(); 4].map(|_| Tensor::randn([dim, dim], 0.5, &mut r).unwrap());
        let p = AgentModuleParams::with_projections(cfg, ws).unwrap();
        let x = Tensor::randn([h * w, dim], 1.0, &mut r).unwrap();
        module_worst = module_worst.max(rel(&p.forward(&x).unwrap().out, &multi_head_reference(&p, &x)));
    }

    let mut shift_worst = 0.0f64;
    for seed in 0..20u64 {
        let mut r = rng(0x4C + seed);
        let (big_n, n, d) = (r.random_range(1..=32), r.random_range(1..=8), r.random_range(1..=8));
        let inp = random_inputs(big_n, n, d, &mut r).unwrap();
        let b1 = Tensor::randn([n, big_n], 0.5, &mut r).unwrap();
        let b2 = Tensor::randn([big_n, n], 0.5, &mut r).unwrap();
        let c = r.random_range(-8i32..=8) as f64 * 0.25;
        let base = agent_attention_biased(&inp, Some(&b1), Some(&b2)).unwrap();
        let s1 = agent_attention_biased(&inp, Some(&b1.map(|v| v + c)), Some(&b2)).unwrap();
        let s2 = agent_attention_biased(&inp, Some(&b1), Some(&b2.map(|v| v + c))).unwrap();
        shift_worst = shift_worst.max(rel(&s1, &base)).max(rel(&s2, &base));

        let cfg = ModuleConfig { bias_block: 2, ..ModuleConfig::new(4, 2, 4, 4, 4) };
        let p = random_module(cfg, &mut r).unwrap();
        let x = Tensor::randn([16, 4], 1.0, &mut r).unwrap();
        let base = p.forward(&x).unwrap().out;
        for which in 0..2 {
            let mut shifted = p.clone();
            for t in &mut shifted.bias {
                let col = if which == 0 { &mut t.b1_col } else { &mut t.b2_col };
                *col = col.map(|v| v + c);
            }
            shift_worst = shift_worst.max(rel(&shifted.forward(&x).unwrap().out, &base));
        }
    }
    outcome(
        bit_exact && module_worst <= FOUR_EPS && shift_worst <= FOUR_EPS,
        format!(
            "(a) training-free k=0 bit-exact: {bit_exact}; (b) zero bias+DWC vs multi-head pure {module_worst:.3e}; \
             (c) B1/B2 shift {shift_worst:.3e} (each <= 4eps = {FOUR_EPS:.3e}, relative to max(1, |ref|))"
        ),
    )
}

fn param_counts() -> Outcome {
    let total = |name: &str| {
        let p = load_preset(preset_dir().join(format!("{name}.json"))).unwrap();
        ParamReport::for_preset(&p).unwrap().total as f64
    };
    let (t, b) = (total("agent-deit-t"), total("agent-deit-b"));
    let (et, eb) = ((t - 6.0e6) / 6.0e6, (b - 87.2e6) / 87.2e6);
    outcome(
        et.abs() <= 0.03 && eb.abs() <= 0.03,
        format!("agent-deit-t {t} ({:+.2}% vs 6.0M), agent-deit-b {b} ({:+.2}% vs 87.2M), limit 3%", et * 100.0, eb * 100.0),
    )
}

fn flop_accounting() -> Outcome {
    let p = load_preset(preset_dir().join("agent-deit-t.json")).unwrap();
    let f = flops_model_forward(&p).unwrap();
    let err = (f.macs as f64 - 1.2e9) / 1.2e9;

    let mut mismatches = 0;
    let mut cases = 0;
    for &big_n in &[1usize, 2, 3, 7, 16, 33, 64] {
        for &n in &[1usize, 2, 5, 16, 49, 64] {
            for &d in &[1usize, 3, 8, 17, 64] {
                let inp = random_inputs(big_n, n, d, &mut rng((big_n * 4096 + n * 64 + d) as u64)).unwrap();
                let mut a = MacCounter::default();
                agent_attention_pure_tallied(&inp, &mut a).unwrap();
                let mut s = MacCounter::default();
                softmax_attention_tallied(&inp, &mut s).unwrap();
                mismatches += (a.macs != flop_count("agent", big_n, n, d, 1).unwrap()) as usize;
                mismatches += (s.macs != flop_count("softmax", big_n, n, d, 1).unwrap()) as usize;
                cases += 1;
            }
        }
    }
    outcome(
        err.abs() <= 0.10 && mismatches == 0,
        format!(
            "agent-deit-t MACs {} ({:+.2}% vs 1.2G, limit 10%; 2*MACs = {}); instrumented counts: {mismatches} mismatches over {cases} (N, n, d) cases",
            f.macs,
            err * 100.0,
            f.flops
        ),
    )
}

fn scaling() -> Outcome {
    let t0 = Instant::now();
    let mut slopes = Vec::new();
    for kernel in [Kernel::Agent, Kernel::Softmax] {
        let cfg = ScalingConfig { dtype: DType::F32, ..ScalingConfig::new(kernel, vec![1024, 2048, 4096, 8192], 49, 64) };
        match run_scaling(&cfg) {
            Ok(rows) => slopes.push(agentattn::bench::loglog_slope(&rows).unwrap_or(f64::NAN)),
            Err(e) => return outcome(false, format!("{kernel} sweep failed: {}", e.error)),
        }
    }
    let el = t0.elapsed();
    let (a, s) = (slopes[0], slopes[1]);
    outcome(
        (0.8..=1.2).contains(&a) && (1.8..=2.2).contains(&s) && el < Duration::from_secs(300),
        format!(
            "N in {{1024..8192}}, n=49, d=64, f32, median of 5: agent slope {a:.3} ([0.8, 1.2]), softmax slope {s:.3} ([1.8, 2.2]), {:.1}s (< 300s)",
            el.as_secs_f64()
        ),
    )
}

fn permutations() -> Outcome {
    let (mut q_worst, mut kv_worst) = (0.0f64, 0.0f64);
    for seed in 0..20u64 {
        let mut r = rng(0x8E + seed);
        let (big_n, n, d) = (r.random_range(2..=48), r.random_range(1..=12), r.random_range(1..=16));
        let inp = random_inputs(big_n, n, d, &mut r).unwrap();
        let mut perm: Vec<usize> = (0..big_n).collect();
        perm.shuffle(&mut r);
        let base = agent_attention_pure(&inp).unwrap();
        let q_moved = AttentionInputs { q: inp.q.permute_rows(&perm).unwrap(), ..inp.clone() };
        q_worst = q_worst.max(
            agent_attention_pure(&q_moved).unwrap().max_abs_diff(&base.permute_rows(&perm).unwrap()).unwrap(),
        );
        let kv_moved =
            AttentionInputs { k: inp.k.permute_rows(&perm).unwrap(), v: inp.v.permute_rows(&perm).unwrap(), ..inp.clone() };
        kv_worst = kv_worst.max(agent_attention_pure(&kv_moved).unwrap().max_abs_diff(&base).unwrap());
    }
    outcome(
        q_worst <= FOUR_EPS && kv_worst <= FOUR_EPS,
        format!("20 instances: Q equivariance {q_worst:.3e}, (K,V) invariance {kv_worst:.3e} (max abs, <= {FOUR_EPS:.3e})"),
    )
}

fn integer_tensor(shape: [usize; 3], r: &mut ChaCha8Rng) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| r.random_range(-9i32..=9) as f64).unwrap()
}

fn bias_materialization() -> Outcome {
    let mut sum_mismatch = 0usize;
    let mut resize_ok = true;
    for seed in 0..20u64 {
        let mut r = rng(0xB1A5 + seed);
        let (n, h, w) = (r.random_range(1..=6), r.random_range(1..=7), r.random_range(1..=7));
        // block base equal to the map or 1x1, so no resampling is fractional
        let full = seed % 2 == 0;
        let (h0, w0) = if full { (h, w) } else { (1, 1) };
        let parts = [
            integer_tensor([n, 1, w], &mut r),
            integer_tensor([n, h, 1], &mut r),
            integer_tensor([n, h0, w0], &mut r),
            integer_tensor([1, w, n], &mut r),
            integer_tensor([h, 1, n], &mut r),
            integer_tensor([h0, w0, n], &mut r),
        ];
        let b = AgentBiasParams::from_components(n, h, w, h0, w0, parts.clone()).unwrap();
        let (b1, b2) = (b.materialize_b1().unwrap(), b.materialize_b2().unwrap());
        for a in 0..n {
            for i in 0..h {
                for j in 0..w {
                    let (bi, bj) = if full { (i, j) } else { (0, 0) };
                    let want1 = parts[0].at(&[a, 0, j]) + parts[1].at(&[a, i, 0]) + parts[2].at(&[a, bi, bj]);
                    let want2 = parts[3].at(&[0, j, a]) + parts[4].at(&[i, 0, a]) + parts[5].at(&[bi, bj, a]);
                    sum_mismatch += (b1.at(&[a, i * w + j]) != want1) as usize;
                    sum_mismatch += (b2.at(&[i * w + j, a]) != want2) as usize;
                }
            }
        }
        let side = r.random_range(1..=4);
        let (h0, w0) = (r.random_range(1..=h), r.random_range(1..=w));
        let t = AgentBiasParams::<f64>::trunc_normal(side * side, h, w, h0, w0, &mut r).unwrap();
        resize_ok &= t.resize_bias_for(side * side, h, w).unwrap() == t;
    }
    outcome(
        sum_mismatch == 0 && resize_ok,
        format!("componentwise sum: {sum_mismatch} mismatched entries over 20 tables; resize identity: {resize_ok}"),
    )
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Outcome); 9] = [
        ("oracle equivalence", oracle_equivalence),
        ("row stochasticity", row_stochastic),
        ("gradient checks", gradient_checks),
        ("reduction identities", reductions),
        ("parameter counts", param_counts),
        ("flop accounting", flop_accounting),
        ("scaling slopes", scaling),
        ("permutation properties", permutations),
        ("bias materialization", bias_materialization),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let o = check();
        failed += !o.passed as usize;
        println!("{} {}. {name}: {}", if o.passed { "PASS" } else { "FAIL" }, i + 1, o.detail);
    }
    println!("acceptance: {} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
