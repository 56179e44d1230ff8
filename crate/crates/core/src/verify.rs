//! Independent reference implementations, a finite-difference gradient
//! checker, and a seeded property suite covering every kernel invariant.
//!
//! The oracles here deliberately avoid `ops`: they are written as plain
//! nested loops so that a bug in the optimized kernels cannot hide in both
//! paths at once.

use alloc::boxed::Box;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;
use core::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::attention::{
    agent_attention_biased, agent_attention_biased_backward, agent_attention_pure,
    agent_attention_pure_tallied, equivalent_phi, linear_attention, softmax_attention,
    softmax_attention_backward, softmax_attention_tallied, AttentionInputs, FeatureMap,
};
use crate::bias::AgentBiasParams;
use crate::error::{config_err, dim_err};
use crate::flops::{FlopModel, Kernel};
use crate::model::{Model, ModelPreset};
use crate::module::{agent_attention_training_free, AgentModuleParams, ModuleConfig};
use crate::ops::{adaptive_avg_pool2d, depthwise_conv2d, matmul, row_softmax, MacCounter};
use crate::{Error, Result, Scalar, Tensor};

/// Which quantity `passed` is decided on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Metric {
    #[default]
    MaxAbs,
    Relative,
}

/// Outcome of one named check. `passed` holds exactly when the selected
/// metric is at most `tolerance` (a NaN metric never passes).
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct CheckReport {
    pub name: String,
    pub max_abs_err: f64,
    pub rel_err: f64,
    pub tolerance: f64,
    pub passed: bool,
    #[cfg_attr(feature = "serde", serde(skip))]
    metric: Metric,
}

impl CheckReport {
    pub fn new(name: impl Into<String>, max_abs_err: f64, rel_err: f64, tolerance: f64, metric: Metric) -> Self {
        let value = match metric {
            Metric::MaxAbs => max_abs_err,
            Metric::Relative => rel_err,
        };
        CheckReport {
            name: name.into(),
            max_abs_err,
            rel_err,
            tolerance,
            passed: value <= tolerance,
            metric,
        }
    }

    fn failed(name: &str, err: &Error) -> Self {
        let mut r = CheckReport::new(format!("{name}: {err}"), f64::NAN, f64::NAN, 0.0, Metric::MaxAbs);
        r.name = name.to_string();
        r
    }

    pub fn metric(&self) -> Metric {
        self.metric
    }

    /// The value compared against `tolerance`.
    pub fn value(&self) -> f64 {
        match self.metric {
            Metric::MaxAbs => self.max_abs_err,
            Metric::Relative => self.rel_err,
        }
    }
}

fn max_abs_diff_f64<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<f64> {
    Ok(a.max_abs_diff(b)?.as_f64())
}

fn rel_to_ref<T: Scalar>(got: &Tensor<T>, reference: &Tensor<T>) -> Result<(f64, f64)> {
    let abs = max_abs_diff_f64(got, reference)?;
    Ok((abs, abs / reference.max_abs().as_f64().max(1.0)))
}

// ---------------------------------------------------------------- oracles

fn naive_scores<T: Scalar>(x: &Tensor<T>, y: &Tensor<T>, scale: T) -> Result<Vec<Vec<T>>> {
    let (r, d) = x.dims2()?;
    let (c, d2) = y.dims2()?;
    if d != d2 {
        return Err(dim_err!("score operands have widths {d} and {d2}"));
    }
    let mut out = vec![vec![T::zero(); c]; r];
    for (i, row) in out.iter_mut().enumerate() {
        for (j, s) in row.iter_mut().enumerate() {
            let mut acc = T::zero();
            for t in 0..d {
                acc += x.at(&[i, t]) * y.at(&[j, t]);
            }
            *s = acc * scale;
        }
    }
    Ok(out)
}

fn naive_softmax_rows<T: Scalar>(rows: &mut [Vec<T>]) {
    for row in rows {
        let m = row.iter().copied().fold(T::neg_infinity(), T::max);
        let mut z = T::zero();
        for v in row.iter_mut() {
            *v = (*v - m).exp();
            z += *v;
        }
        for v in row.iter_mut() {
            *v /= z;
        }
    }
}

fn rows_to_tensor<T: Scalar>(rows: Vec<Vec<T>>) -> Result<Tensor<T>> {
    let r = rows.len();
    let c = rows[0].len();
    Tensor::new([r, c], rows.into_iter().flatten().collect::<Vec<_>>())
}

fn naive_product<T: Scalar>(a: &[Vec<T>], b: &[Vec<T>]) -> Vec<Vec<T>> {
    let inner = b.len();
    let cols = b[0].len();
    a.iter()
        .map(|ar| {
            (0..cols)
                .map(|j| {
                    let mut acc = T::zero();
                    for t in 0..inner {
                        acc += ar[t] * b[t][j];
                    }
                    acc
                })
                .collect()
        })
        .collect()
}

fn tensor_rows<T: Scalar>(t: &Tensor<T>) -> Vec<Vec<T>> {
    (0..t.rows()).map(|i| t.row(i).to_vec()).collect()
}

/// The `N×N` mixing matrix `M = σ(scale2·QAᵀ) σ(scale1·AKᵀ)`.
pub fn composed_matrix<T: Scalar>(inp: &AttentionInputs<T>) -> Result<Tensor<T>> {
    inp.validate()?;
    let a = inp.a.as_ref().ok_or_else(|| config_err!("composed matrix requires agent tokens"))?;
    let mut p2 = naive_scores(&inp.q, a, inp.scale2)?;
    let mut p1 = naive_scores(a, &inp.k, inp.scale1)?;
    naive_softmax_rows(&mut p2);
    naive_softmax_rows(&mut p1);
    rows_to_tensor(naive_product(&p2, &p1))
}

/// `O(N²)` reference for agent attention: form [`composed_matrix`] explicitly,
/// then multiply by `V`.
pub fn composed_matrix_oracle<T: Scalar>(inp: &AttentionInputs<T>) -> Result<Tensor<T>> {
    let m = composed_matrix(inp)?;
    rows_to_tensor(naive_product(&tensor_rows(&m), &tensor_rows(&inp.v)))
}

/// Double-loop softmax attention, full score matrix materialized.
pub fn naive_softmax_attention<T: Scalar>(inp: &AttentionInputs<T>) -> Result<Tensor<T>> {
    inp.validate()?;
    let mut p = naive_scores(&inp.q, &inp.k, inp.scale1)?;
    naive_softmax_rows(&mut p);
    rows_to_tensor(naive_product(&p, &tensor_rows(&inp.v)))
}

/// Linear attention in its original left-to-right order:
/// `w_ij = φ(q_i)·φ(k_j)`, `o_i = Σ_j w_ij v_j / Σ_j w_ij`.
pub fn naive_linear_attention<T: Scalar>(inp: &AttentionInputs<T>, phi: FeatureMap, normalized: bool) -> Result<Tensor<T>> {
    inp.validate()?;
    let fq = phi.map_tensor(&inp.q);
    let fk = phi.map_tensor(&inp.k);
    let w = naive_scores(&fq, &fk, T::one())?;
    let mut out = naive_product(&w, &tensor_rows(&inp.v));
    if normalized {
        for (row, wr) in out.iter_mut().zip(&w) {
            let z: T = wr.iter().copied().sum();
            row.iter_mut().for_each(|v| *v /= z);
        }
    }
    rows_to_tensor(out)
}

// ------------------------------------------------------ gradient checking

/// A function of several `f64` tensors with an analytic vector-Jacobian
/// product.
pub trait Differentiable {
    fn name(&self) -> String;
    /// The point at which the gradient is checked.
    fn inputs(&self) -> Vec<Tensor<f64>>;
    fn forward(&self, inputs: &[Tensor<f64>]) -> Result<Tensor<f64>>;
    /// Gradients of `⟨grad_out, forward(inputs)⟩`, one per input.
    fn backward(&self, inputs: &[Tensor<f64>], grad_out: &Tensor<f64>) -> Result<Vec<Tensor<f64>>>;
    /// Output weighting of the scalar loss; a fixed random tensor by default.
    fn cotangent(&self, shape: &[usize]) -> Result<Tensor<f64>> {
        Tensor::randn(shape, 1.0, &mut ChaCha8Rng::seed_from_u64(0x5EED))
    }
}

fn dot(a: &Tensor<f64>, b: &Tensor<f64>) -> f64 {
    a.data().iter().zip(b.data()).map(|(x, y)| x * y).sum()
}

/// Compare the analytic gradient of `⟨u, f(x)⟩` with central differences of
/// step `h` in every input coordinate.
///
/// `rel_err = ‖g_fd − g_an‖∞ / max(1, ‖g_an‖∞)`, passing when at most
/// `tolerance`. Any non-finite loss or gradient is an error naming where it
/// appeared.
pub fn gradient_check(op: &dyn Differentiable, h: f64, tolerance: f64) -> Result<CheckReport> {
    if !(h > 0.0) || !h.is_finite() {
        return Err(config_err!("finite-difference step must be positive and finite, got {h}"));
    }
    let name = op.name();
    let x = op.inputs();
    let y = op.forward(&x)?;
    let u = op.cotangent(y.shape())?;
    let analytic = op.backward(&x, &u)?;
    if analytic.len() != x.len() {
        return Err(dim_err!("{name}: {} gradients for {} inputs", analytic.len(), x.len()));
    }
    let mut max_abs = 0.0f64;
    let mut an_norm = 0.0f64;
    for (i, (xi, gi)) in x.iter().zip(&analytic).enumerate() {
        if gi.shape() != xi.shape() {
            return Err(dim_err!("{name}: gradient {i} has shape {:?}, input {:?}", gi.shape(), xi.shape()));
        }
        for j in 0..xi.len() {
            let g = gi.data()[j];
            if !g.is_finite() {
                return Err(Error::NonFinite {
                    location: format!("{name}: analytic gradient of input {i} element {j}"),
                });
            }
            let mut probe = x.clone();
            probe[i].data_mut()[j] = xi.data()[j] + h;
            let lp = dot(&u, &op.forward(&probe)?);
            probe[i].data_mut()[j] = xi.data()[j] - h;
            let lm = dot(&u, &op.forward(&probe)?);
            let fd = (lp - lm) / (2.0 * h);
            if !fd.is_finite() {
                return Err(Error::NonFinite {
                    location: format!("{name}: loss around input {i} element {j}"),
                });
            }
            max_abs = max_abs.max((fd - g).abs());
            an_norm = an_norm.max(g.abs());
        }
    }
    Ok(CheckReport::new(name, max_abs, max_abs / an_norm.max(1.0), tolerance, Metric::Relative))
}

/// `f(X) = X·W` with `W` fixed.
pub struct LinearMapOp {
    pub x: Tensor<f64>,
    pub w: Tensor<f64>,
}

impl Differentiable for LinearMapOp {
    fn name(&self) -> String {
        "linear_map".into()
    }
    fn inputs(&self) -> Vec<Tensor<f64>> {
        vec![self.x.clone()]
    }
    fn forward(&self, inputs: &[Tensor<f64>]) -> Result<Tensor<f64>> {
        matmul(&inputs[0], &self.w)
    }
    fn backward(&self, _inputs: &[Tensor<f64>], g: &Tensor<f64>) -> Result<Vec<Tensor<f64>>> {
        Ok(vec![crate::ops::matmul_bt(g, &self.w)?])
    }
}

/// Agent attention in `Q, K, V, A` and, when present, the score biases.
pub struct AgentKernelOp {
    pub inputs: AttentionInputs<f64>,
    pub b1: Option<Tensor<f64>>,
    pub b2: Option<Tensor<f64>>,
}

impl AgentKernelOp {
    fn unpack(&self, x: &[Tensor<f64>]) -> Result<(AttentionInputs<f64>, Option<Tensor<f64>>, Option<Tensor<f64>>)> {
        let inp = AttentionInputs {
            q: x[0].clone(),
            k: x[1].clone(),
            v: x[2].clone(),
            a: Some(x[3].clone()),
            ..self.inputs.clone()
        };
        let (b1, b2) = if self.b1.is_some() { (Some(x[4].clone()), Some(x[5].clone())) } else { (None, None) };
        Ok((inp, b1, b2))
    }
}

impl Differentiable for AgentKernelOp {
    fn name(&self) -> String {
        if self.b1.is_some() { "agent_attention_biased" } else { "agent_attention_pure" }.into()
    }
    fn inputs(&self) -> Vec<Tensor<f64>> {
        let i = &self.inputs;
        let mut v = vec![i.q.clone(), i.k.clone(), i.v.clone(), i.a.clone().expect("agent tokens")];
        if let (Some(b1), Some(b2)) = (&self.b1, &self.b2) {
            v.push(b1.clone());
            v.push(b2.clone());
        }
        v
    }
    fn forward(&self, x: &[Tensor<f64>]) -> Result<Tensor<f64>> {
        let (inp, b1, b2) = self.unpack(x)?;
        agent_attention_biased(&inp, b1.as_ref(), b2.as_ref())
    }
    fn backward(&self, x: &[Tensor<f64>], g: &Tensor<f64>) -> Result<Vec<Tensor<f64>>> {
        let (inp, b1, b2) = self.unpack(x)?;
        let gr = agent_attention_biased_backward(&inp, b1.as_ref(), b2.as_ref(), g)?;
        let mut out = vec![gr.dq, gr.dk, gr.dv, gr.da];
        if b1.is_some() {
            out.push(gr.db1);
            out.push(gr.db2);
        }
        Ok(out)
    }
}

/// Softmax attention in `Q, K, V`.
pub struct SoftmaxKernelOp {
    pub inputs: AttentionInputs<f64>,
}

impl Differentiable for SoftmaxKernelOp {
    fn name(&self) -> String {
        "softmax_attention".into()
    }
    fn inputs(&self) -> Vec<Tensor<f64>> {
        vec![self.inputs.q.clone(), self.inputs.k.clone(), self.inputs.v.clone()]
    }
    fn forward(&self, x: &[Tensor<f64>]) -> Result<Tensor<f64>> {
        let inp = AttentionInputs { q: x[0].clone(), k: x[1].clone(), v: x[2].clone(), ..self.inputs.clone() };
        softmax_attention(&inp)
    }
    fn backward(&self, x: &[Tensor<f64>], g: &Tensor<f64>) -> Result<Vec<Tensor<f64>>> {
        let inp = AttentionInputs { q: x[0].clone(), k: x[1].clone(), v: x[2].clone(), ..self.inputs.clone() };
        let gr = softmax_attention_backward(&inp, g)?;
        Ok(vec![gr.dq, gr.dk, gr.dv])
    }
}

/// The full agent module in its input and every parameter tensor.
pub struct ModuleOp {
    pub params: AgentModuleParams<f64>,
    pub x: Tensor<f64>,
}

impl ModuleOp {
    fn with_params(&self, x: &[Tensor<f64>]) -> AgentModuleParams<f64> {
        let mut p = self.params.clone();
        for (slot, t) in p.tensors_mut().into_iter().zip(&x[1..]) {
            *slot = t.clone();
        }
        p
    }
}

impl Differentiable for ModuleOp {
    fn name(&self) -> String {
        "agent_module".into()
    }
    fn inputs(&self) -> Vec<Tensor<f64>> {
        let mut v = vec![self.x.clone()];
        v.extend(self.params.named_tensors().into_iter().map(|(_, t)| t.clone()));
        v
    }
    fn forward(&self, x: &[Tensor<f64>]) -> Result<Tensor<f64>> {
        Ok(self.with_params(x).forward(&x[0])?.out)
    }
    fn backward(&self, x: &[Tensor<f64>], g: &Tensor<f64>) -> Result<Vec<Tensor<f64>>> {
        let p = self.with_params(x);
        let (_, cache) = p.forward_cached(&x[0], false)?;
        let (dx, grads) = p.backward(&cache, g)?;
        let mut out = vec![dx];
        out.extend(grads.named_tensors().into_iter().map(|(_, t)| t.clone()));
        Ok(out)
    }
}

/// Sum of logits as a function of the patch-embedding weight and bias.
pub struct PatchEmbedOp {
    pub model: Model<f64>,
    pub image: Tensor<f64>,
}

impl PatchEmbedOp {
    fn with_embed(&self, x: &[Tensor<f64>]) -> Model<f64> {
        let mut m = self.model.clone();
        m.patch_embed.weight = x[0].clone();
        m.patch_embed.bias = Some(x[1].clone());
        m
    }
}

impl Differentiable for PatchEmbedOp {
    fn name(&self) -> String {
        "model_patch_embed".into()
    }
    fn inputs(&self) -> Vec<Tensor<f64>> {
        let pe = &self.model.patch_embed;
        vec![pe.weight.clone(), pe.bias.clone().expect("patch embedding has a bias")]
    }
    fn forward(&self, x: &[Tensor<f64>]) -> Result<Tensor<f64>> {
        self.with_embed(x).forward_logits(&self.image)
    }
    fn backward(&self, x: &[Tensor<f64>], g: &Tensor<f64>) -> Result<Vec<Tensor<f64>>> {
        let grads = self.with_embed(x).backward(&self.image, g)?;
        Ok(vec![grads.patch_embed.weight, grads.patch_embed.bias.expect("bias gradient")])
    }
    fn cotangent(&self, shape: &[usize]) -> Result<Tensor<f64>> {
        Tensor::full(shape, 1.0)
    }
}

/// Wraps an op and corrupts one analytic gradient entry.
struct CorruptedGradient<'a>(&'a dyn Differentiable);

impl Differentiable for CorruptedGradient<'_> {
    fn name(&self) -> String {
        self.0.name()
    }
    fn inputs(&self) -> Vec<Tensor<f64>> {
        self.0.inputs()
    }
    fn forward(&self, x: &[Tensor<f64>]) -> Result<Tensor<f64>> {
        self.0.forward(x)
    }
    fn backward(&self, x: &[Tensor<f64>], g: &Tensor<f64>) -> Result<Vec<Tensor<f64>>> {
        let mut out = self.0.backward(x, g)?;
        out[0].data_mut()[0] += 1e-2;
        Ok(out)
    }
}

// ------------------------------------------------------- instance builders

/// Standard-normal `Q, K, V` (`N×d`) and agents (`n×d`) with `1/√d` scales.
pub fn random_inputs<R: Rng + ?Sized>(
    tokens: usize,
    agents: usize,
    head_dim: usize,
    rng: &mut R,
) -> Result<AttentionInputs<f64>> {
    let q = Tensor::randn([tokens, head_dim], 1.0, rng)?;
    let k = Tensor::randn([tokens, head_dim], 1.0, rng)?;
    let v = Tensor::randn([tokens, head_dim], 1.0, rng)?;
    let a = Tensor::randn([agents, head_dim], 1.0, rng)?;
    AttentionInputs::new(q, k, v)?.with_agents(a)
}

/// A small module with unit-scale weights so every path carries signal.
pub fn random_module<R: Rng + ?Sized>(config: ModuleConfig, rng: &mut R) -> Result<AgentModuleParams<f64>> {
    let mut p = AgentModuleParams::init(config, rng)?;
    for t in p.tensors_mut() {
        *t = Tensor::randn(t.shape(), 0.5, rng)?;
    }
    Ok(p)
}

/// The desk-size backbone used for end-to-end gradient checks.
pub fn desk_preset() -> ModelPreset {
    ModelPreset::uniform("desk", 16, 4, 2, 16, 2, 4)
}

// ------------------------------------------------------------- properties

/// Deliberate faults that prove the suite can fail.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Fault {
    /// Add 0.1 to one softmax weight before its row sum is checked.
    RowSum,
    /// Shift the agent oracle's output before comparison.
    Oracle,
    /// Corrupt one analytic gradient entry of the kernel gradient check.
    Gradient,
}

impl FromStr for Fault {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "rowsum" => Ok(Fault::RowSum),
            "oracle" => Ok(Fault::Oracle),
            "gradient" => Ok(Fault::Gradient),
            other => Err(config_err!("unknown fault '{other}' (expected rowsum, oracle or gradient)")),
        }
    }
}

const EPS: f64 = f64::EPSILON;
/// Tolerance for identities that hold up to a few roundings.
pub const FOUR_EPS: f64 = 4.0 * EPS;
pub const ORACLE_TOL: f64 = 1e-12;
pub const KERNEL_GRAD_TOL: f64 = 1e-5;
pub const MODULE_GRAD_TOL: f64 = 1e-4;
pub const GRAD_STEP: f64 = 1e-6;

#[derive(Default)]
struct Acc {
    abs: f64,
    rel: f64,
}

impl Acc {
    fn push(&mut self, abs: f64, rel: f64) {
        // NaN-propagating max
        self.abs = if abs.is_nan() || self.abs.is_nan() { f64::NAN } else { self.abs.max(abs) };
        self.rel = if rel.is_nan() || self.rel.is_nan() { f64::NAN } else { self.rel.max(rel) };
    }
    fn push_ref(&mut self, got: &Tensor<f64>, reference: &Tensor<f64>) -> Result<()> {
        let (a, r) = rel_to_ref(got, reference)?;
        self.push(a, r);
        Ok(())
    }
    fn report(self, name: &str, tol: f64, metric: Metric) -> CheckReport {
        CheckReport::new(name, self.abs, self.rel, tol, metric)
    }
}

struct Ctx {
    trials: usize,
    fault: Option<Fault>,
}

type PropertyFn = fn(&mut ChaCha8Rng, &Ctx) -> Result<CheckReport>;

fn sizes(rng: &mut ChaCha8Rng) -> (usize, usize, usize) {
    (rng.random_range(1..=32), rng.random_range(1..=8), rng.random_range(1..=8))
}

fn prop_softmax_rowsum(rng: &mut ChaCha8Rng, ctx: &Ctx) -> Result<CheckReport> {
    let mut acc = Acc::default();
    for t in 0..ctx.trials {
        let rows = rng.random_range(1..=6);
        let cols = rng.random_range(2..=48);
        let spread = if t % 2 == 0 { 1.0 } else { 400.0 };
        let mut s = Tensor::<f64>::randn([rows, cols], spread, rng)?;
        // one row with a spread of at least 700
        s.data_mut()[0] = 700.0;
        s.data_mut()[1] = -50.0;
        let mut p = row_softmax(&s, 1.0)?;
        if t == 0 && ctx.fault == Some(Fault::RowSum) {
            p.data_mut()[0] += 0.1;
        }
        for r in 0..rows {
            let row = p.row(r);
            let err = (row.iter().sum::<f64>() - 1.0).abs();
            let neg = row.iter().any(|&v| !(v >= 0.0));
            acc.push(if neg { f64::INFINITY } else { err }, err);
        }
    }
    Ok(acc.report("softmax_rowsum", ORACLE_TOL, Metric::MaxAbs))
}

fn prop_matmul_linearity(rng: &mut ChaCha8Rng, ctx: &Ctx) -> Result<CheckReport> {
    let mut acc = Acc::default();
    for _ in 0..ctx.trials {
        let (m, k, p) = (rng.random_range(1..=12), rng.random_range(1..=24), rng.random_range(1..=12));
        let a = Tensor::<f64>::randn([m, k], 1.0, rng)?;
        let b = Tensor::<f64>::randn([m, k], 1.0, rng)?;
        let c = Tensor::<f64>::randn([k, p], 1.0, rng)?;
        let (alpha, beta) = (rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0));
        let lhs = matmul(&a.scale(alpha).add(&b.scale(beta))?, &c)?;
        let rhs = matmul(&a, &c)?.scale(alpha).add(&matmul(&b, &c)?.scale(beta))?;
        // per-entry bound (|α||A| + |β||B|)|C| times the accumulation depth
        let mag = matmul(&a.map(|v| v.abs() * alpha.abs()).add(&b.map(|v| v.abs() * beta.abs()))?, &c.map(f64::abs))?;
        let depth = (k + 2) as f64;
        for ((l, r), s) in lhs.data().iter().zip(rhs.data()).zip(mag.data()) {
            let e = (l - r).abs();
            acc.push(e, if *s > 0.0 { e / (s * depth) } else { e });
        }
    }
    Ok(acc.report("matmul_linearity", FOUR_EPS, Metric::Relative))
}

fn prop_pool_mean(rng: &mut ChaCha8Rng, ctx: &Ctx) -> Result<CheckReport> {
    let mut acc = Acc::default();
    for _ in 0..ctx.trials {
        let (h, w, c) = (rng.random_range(1..=9), rng.random_range(1..=9), rng.random_range(1..=4));
        let x = Tensor::<f64>::randn([h, w, c], 1.0, rng)?;
        let pooled = adaptive_avg_pool2d(&x, 1, 1)?;
        for ch in 0..c {
            let mean = (0..h * w).map(|i| x.data()[i * c + ch]).sum::<f64>() / (h * w) as f64;
            let e = (pooled.data()[ch] - mean).abs();
            acc.push(e, e / mean.abs().max(1.0));
        }
        let same = adaptive_avg_pool2d(&x, h, w)?;
        acc.push_ref(&same, &x)?;
    }
    Ok(acc.report("adaptive_pool_mean", ORACLE_TOL, Metric::MaxAbs))
}

fn prop_dwc_identity(rng: &mut ChaCha8Rng, ctx: &Ctx) -> Result<CheckReport> {
    let mut acc = Acc::default();
    for _ in 0..ctx.trials {
        let (h, w, c) = (rng.random_range(1..=8), rng.random_range(1..=8), rng.random_range(1..=4));
        let x = Tensor::<f64>::randn([h, w, c], 1.0, rng)?;
        let kernel = Tensor::from_fn([3, 3, c], |i| if i / c == 4 { 1.0 } else { 0.0 })?;
        acc.push_ref(&depthwise_conv2d(&x, &kernel)?, &x)?;
    }
    Ok(acc.report("dwc_identity", 0.0, Metric::MaxAbs))
}

fn prop_agent_row_stochastic(rng: &mut ChaCha8Rng, ctx: &Ctx) -> Result<CheckReport> {
    let mut acc = Acc::default();
    for _ in 0..ctx.trials {
        let (n_tok, n, d) = sizes(rng);
        let m = composed_matrix(&random_inputs(n_tok, n, d, rng)?)?;
        for r in 0..m.rows() {
            let row = m.row(r);
            let e = (row.iter().sum::<f64>() - 1.0).abs();
            let neg = row.iter().any(|&v| !(v >= 0.0));
            acc.push(if neg { f64::INFINITY } else { e }, e);
        }
    }
    Ok(acc.report("agent_row_stochastic", ORACLE_TOL, Metric::MaxAbs))
}

fn prop_convex_hull(rng: &mut ChaCha8Rng, ctx: &Ctx) -> Result<CheckReport> {
    let mut acc = Acc::default();
    for _ in 0..ctx.trials {
        let (n_tok, n, d) = sizes(rng);
        let inp = random_inputs(n_tok, n, d, rng)?;
        let out = agent_attention_pure(&inp)?;
        for c in 0..d {
            let col = (0..n_tok).map(|i| inp.v.at(&[i, c]));
            let (lo, hi) = col.fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), v| (l.min(v), h.max(v)));
            for i in 0..n_tok {
                let o = out.at(&[i, c]);
                let viol = (lo - o).max(o - hi).max(0.0);
                acc.push(viol, viol);
            }
        }
    }
    Ok(acc.report("agent_convex_hull", ORACLE_TOL, Metric::MaxAbs))
}

fn random_perm(n: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let mut p: Vec<usize> = (0..n).collect();
    p.shuffle(rng);
    p
}

fn prop_q_permutation(rng: &mut ChaCha8Rng, ctx: &Ctx) -> Result<CheckReport> {
    let mut acc = Acc::default();
    for _ in 0..ctx.trials {
        let (n_tok, n, d) = sizes(rng);
        let inp = random_inputs(n_tok, n, d, rng)?;
        let perm = random_perm(n_tok, rng);
        let permuted = AttentionInputs { q: inp.q.permute_rows(&perm)?, ..inp.clone() };
        let want = agent_attention_pure(&inp)?.permute_rows(&perm)?;
        acc.push_ref(&agent_attention_pure(&permuted)?, &want)?;
    }
    Ok(acc.report("q_permutation_equivariance", FOUR_EPS, Metric::Relative))
}

fn prop_kv_permutation(rng: &mut ChaCha8Rng, ctx: &Ctx) -> Result<CheckReport> {
    let mut acc = Acc::default();
    for _ in 0..ctx.trials {
        let (n_tok, n, d) = sizes(rng);
        let inp = random_inputs(n_tok, n, d, rng)?;
        let perm = random_perm(n_tok, rng);
        let permuted = AttentionInputs { k: inp.k.permute_rows(&perm)?, v: inp.v.permute_rows(&perm)?, ..inp.clone() };
        acc.push_ref(&agent_attention_pure(&permuted)?, &agent_attention_pure(&inp)?)?;
    }
    Ok(acc.report("kv_permutation_invariance", FOUR_EPS, Metric::Relative))
}

fn prop_linear_reorder(rng: &mut ChaCha8Rng, ctx: &Ctx) -> Result<CheckReport> {
    let mut acc = Acc::default();
    for _ in 0..ctx.trials {
        let (n_tok, _, d) = sizes(rng);
        let inp = random_inputs(n_tok, 1, d, rng)?;
        let fast = linear_attention(&inp, FeatureMap::EluPlusOne)?;
        acc.push_ref(&fast, &naive_linear_attention(&inp, FeatureMap::EluPlusOne, true)?)?;
    }
    Ok(acc.report("linear_reorder_equivalence", ORACLE_TOL, Metric::Relative))
}

fn prop_oracle_agreement(rng: &mut ChaCha8Rng, ctx: &Ctx) -> Result<CheckReport> {
    let mut acc = Acc::default();
    for t in 0..ctx.trials {
        let (n_tok, n, d) = sizes(rng);
        let inp = random_inputs(n_tok, n, d, rng)?;
        let mut oracle = composed_matrix_oracle(&inp)?;
        if t == 0 && ctx.fault == Some(Fault::Oracle) {
            oracle.data_mut()[0] += 1e-9;
        }
        acc.push_ref(&agent_attention_pure(&inp)?, &oracle)?;
    }
    Ok(acc.report("oracle_agreement", ORACLE_TOL, Metric::MaxAbs))
}

fn prop_phi_reconstruction(rng: &mut ChaCha8Rng, ctx: &Ctx) -> Result<CheckReport> {
    let mut acc = Acc::default();
    for _ in 0..ctx.trials {
        let (n_tok, n, d) = sizes(rng);
        let inp = random_inputs(n_tok, n, d, rng)?;
        let (phi_q, phi_k) = equivalent_phi(&inp)?;
        let recon = matmul(&phi_q, &crate::ops::matmul_at(&phi_k, &inp.v)?)?;
        acc.push_ref(&recon, &agent_attention_pure(&inp)?)?;
        acc.push_ref(&recon, &composed_matrix_oracle(&inp)?)?;
    }
    Ok(acc.report("phi_reconstruction", ORACLE_TOL, Metric::MaxAbs))
}

fn prop_softmax_oracle(rng: &mut ChaCha8Rng, ctx: &Ctx) -> Result<CheckReport> {
    let mut acc = Acc::default();
    for _ in 0..ctx.trials {
        let (n_tok, _, d) = sizes(rng);
        let inp = random_inputs(n_tok * 3, 1, d, rng)?;
        acc.push_ref(&softmax_attention(&inp)?, &naive_softmax_attention(&inp)?)?;
    }
    Ok(acc.report("softmax_oracle_agreement", ORACLE_TOL, Metric::MaxAbs))
}

fn prop_agent_gradient(rng: &mut ChaCha8Rng, ctx: &Ctx) -> Result<CheckReport> {
    let mut acc = Acc::default();
    for t in 0..ctx.trials {
        let (n_tok, n, d) = (rng.random_range(2..=8), rng.random_range(1..=4), rng.random_range(1..=4));
        let inputs = random_inputs(n_tok, n, d, rng)?;
        let b1 = Tensor::randn([n, n_tok], 0.5, rng)?;
        let b2 = Tensor::randn([n_tok, n], 0.5, rng)?;
        let op = AgentKernelOp { inputs, b1: Some(b1), b2: Some(b2) };
        let r = if t == 0 && ctx.fault == Some(Fault::Gradient) {
            gradient_check(&CorruptedGradient(&op), GRAD_STEP, KERNEL_GRAD_TOL)?
        } else {
            gradient_check(&op, GRAD_STEP, KERNEL_GRAD_TOL)?
        };
        acc.push(r.max_abs_err, r.rel_err);
    }
    Ok(acc.report("agent_gradient", KERNEL_GRAD_TOL, Metric::Relative))
}

fn prop_module_gradient(rng: &mut ChaCha8Rng, ctx: &Ctx) -> Result<CheckReport> {
    let mut acc = Acc::default();
    // the module check is the costliest property; a few instances suffice
    for _ in 0..ctx.trials.min(3) {
        let cfg = ModuleConfig { qkv_bias: true, proj_bias: true, bias_block: 2, ..ModuleConfig::new(4, 2, 4, 3, 3) };
        let params = random_module(cfg, rng)?;
        let x = Tensor::randn([9, 4], 1.0, rng)?;
        let r = gradient_check(&ModuleOp { params, x }, GRAD_STEP, MODULE_GRAD_TOL)?;
        acc.push(r.max_abs_err, r.rel_err);
    }
    Ok(acc.report("module_gradient", MODULE_GRAD_TOL, Metric::Relative))
}

/// Bias tables whose components are small integers, so every sum is exact.
fn integer_bias(rng: &mut ChaCha8Rng, n: usize, h: usize, w: usize, h0: usize, w0: usize) -> Result<AgentBiasParams<f64>> {
    let mut b = AgentBiasParams::zeros(n, h, w, h0, w0)?;
    for t in b.components_mut() {
        *t = Tensor::from_fn(t.shape(), |_| rng.random_range(-9i32..=9) as f64)?;
    }
    Ok(b)
}

fn prop_bias_sum(rng: &mut ChaCha8Rng, ctx: &Ctx) -> Result<CheckReport> {
    let mut acc = Acc::default();
    for _ in 0..ctx.trials {
        let (n, h, w) = (rng.random_range(1..=5), rng.random_range(1..=6), rng.random_range(1..=6));
        // block base equal to the map (no resampling) or 1×1 (constant)
        let full = rng.random_bool(0.5);
        let (h0, w0) = if full { (h, w) } else { (1, 1) };
        let b = integer_bias(rng, n, h, w, h0, w0)?;
        let (b1, b2) = (b.materialize_b1()?, b.materialize_b2()?);
        let blk = |t: &Tensor<f64>, i: usize, j: usize, lead: bool, a: usize| {
            let (bi, bj) = if full { (i, j) } else { (0, 0) };
            if lead { t.at(&[a, bi, bj]) } else { t.at(&[bi, bj, a]) }
        };
        let mut worst = 0.0f64;
        for a in 0..n {
            for i in 0..h {
                for j in 0..w {
                    let want1 = b.b1_col.at(&[a, 0, j]) + b.b1_row.at(&[a, i, 0]) + blk(&b.b1_block, i, j, true, a);
                    let want2 = b.b2_col.at(&[0, j, a]) + b.b2_row.at(&[i, 0, a]) + blk(&b.b2_block, i, j, false, a);
                    worst = worst.max((b1.at(&[a, i * w + j]) - want1).abs());
                    worst = worst.max((b2.at(&[i * w + j, a]) - want2).abs());
                }
            }
        }
        acc.push(worst, worst);
    }
    Ok(acc.report("bias_componentwise_sum", 0.0, Metric::MaxAbs))
}

fn prop_bias_shift(rng: &mut ChaCha8Rng, ctx: &Ctx) -> Result<CheckReport> {
    let mut acc = Acc::default();
    for _ in 0..ctx.trials {
        let cfg = ModuleConfig { bias_block: 2, ..ModuleConfig::new(4, 2, 4, 4, 4) };
        let p = random_module(cfg, rng)?;
        let x = Tensor::randn([16, 4], 1.0, rng)?;
        let reference = p.forward(&x)?.out;
        // dyadic shifts keep the shifted biases exactly representable
        let c = rng.random_range(-8i32..=8) as f64 * 0.25;
        for which in 0..2 {
            let mut shifted = p.clone();
            for table in &mut shifted.bias {
                let col = if which == 0 { &mut table.b1_col } else { &mut table.b2_col };
                *col = col.map(|v| v + c);
            }
            acc.push_ref(&shifted.forward(&x)?.out, &reference)?;
        }
    }
    Ok(acc.report("bias_shift_invariance", FOUR_EPS, Metric::Relative))
}

fn prop_module_reduction(rng: &mut ChaCha8Rng, ctx: &Ctx) -> Result<CheckReport> {
    let mut acc = Acc::default();
    for _ in 0..ctx.trials {
        let (h, w) = (rng.random_range(2..=5), rng.random_range(2..=5));
        let side = rng.random_range(1..=h.min(w));
        let c = rng.random_range(1..=6);
        let cfg = ModuleConfig::new(c, 1, side * side, h, w);
        let ws: Vec<Tensor<f64>> = (0..3).map(|_| Tensor::randn([c, c], 0.5, rng)).collect::<Result<_>>()?;
        let p = AgentModuleParams::with_projections(
            cfg,
            [ws[0].clone(), ws[1].clone(), ws[2].clone(), Tensor::identity(c)?],
        )?;
        let x = Tensor::randn([h * w, c], 1.0, rng)?;
        let q = matmul(&x, &ws[0])?;
        let agents = crate::module::pool_agents(&q, h, w, side * side)?;
        let inp = AttentionInputs::new(q, matmul(&x, &ws[1])?, matmul(&x, &ws[2])?)?.with_agents(agents)?;
        acc.push_ref(&p.forward(&x)?.out, &agent_attention_pure(&inp)?)?;
    }
    Ok(acc.report("module_reduction", FOUR_EPS, Metric::Relative))
}

fn prop_training_free_reduction(rng: &mut ChaCha8Rng, ctx: &Ctx) -> Result<CheckReport> {
    let mut acc = Acc::default();
    for _ in 0..ctx.trials {
        let (n_tok, n, d) = sizes(rng);
        let inp = random_inputs(n_tok, n, d, rng)?;
        let tf = agent_attention_training_free(0.0, &inp)?;
        let pure = agent_attention_pure(&inp)?;
        let bits = if tf.bit_eq(&pure) { 0.0 } else { f64::INFINITY };
        acc.push(bits, bits);
    }
    Ok(acc.report("training_free_reduction", 0.0, Metric::MaxAbs))
}

fn prop_flop_ratio(rng: &mut ChaCha8Rng, ctx: &Ctx) -> Result<CheckReport> {
    let mut acc = Acc::default();
    for _ in 0..ctx.trials {
        let (n_tok, n, d, h) = (rng.random_range(1..=4096), rng.random_range(1..=256), rng.random_range(1..=128), rng.random_range(1..=16));
        let agent = FlopModel::new(Kernel::Agent, n_tok, n, d, h)?.mac_count as u128;
        let soft = FlopModel::new(Kernel::Softmax, n_tok, n, d, h)?.mac_count as u128;
        // agent / softmax == 2n / N, cross-multiplied to stay exact
        let e = if agent * n_tok as u128 == soft * 2 * n as u128 { 0.0 } else { 1.0 };
        acc.push(e, e);
    }
    Ok(acc.report("flop_ratio", 0.0, Metric::MaxAbs))
}

fn prop_mac_instrumentation(rng: &mut ChaCha8Rng, ctx: &Ctx) -> Result<CheckReport> {
    let mut acc = Acc::default();
    for _ in 0..ctx.trials {
        let (n_tok, n, d) = (rng.random_range(1..=64), rng.random_range(1..=64), rng.random_range(1..=64));
        let inp = random_inputs(n_tok, n, d, rng)?;
        let mut agent = MacCounter::default();
        agent_attention_pure_tallied(&inp, &mut agent)?;
        let mut soft = MacCounter::default();
        softmax_attention_tallied(&inp, &mut soft)?;
        let fa = FlopModel::new(Kernel::Agent, n_tok, n, d, 1)?;
        let fs = FlopModel::new(Kernel::Softmax, n_tok, n, d, 1)?;
        let miss = [
            (agent.macs, fa.mac_count),
            (agent.exps, fa.exp_count),
            (soft.macs, fs.mac_count),
            (soft.exps, fs.exp_count),
        ]
        .iter()
        .map(|&(got, want)| got.abs_diff(want) as f64)
        .fold(0.0, f64::max);
        acc.push(miss, miss);
    }
    Ok(acc.report("mac_instrumentation", 0.0, Metric::MaxAbs))
}

fn prop_resize_identity(rng: &mut ChaCha8Rng, ctx: &Ctx) -> Result<CheckReport> {
    let mut acc = Acc::default();
    for _ in 0..ctx.trials {
        let (h, w) = (rng.random_range(1..=8), rng.random_range(1..=8));
        let n = [1usize, 4, 9, 3][rng.random_range(0..4)];
        let (h0, w0) = (rng.random_range(1..=h), rng.random_range(1..=w));
        let b = AgentBiasParams::<f64>::trunc_normal(n, h, w, h0, w0, rng)?;
        let same = b.resize_bias_for(n, h, w)?;
        let e = if same == b { 0.0 } else { f64::INFINITY };
        acc.push(e, e);
    }
    Ok(acc.report("resize_identity", 0.0, Metric::MaxAbs))
}

/// Registered properties, in report order.
pub const PROPERTIES: [&str; 21] = [
    "softmax_rowsum",
    "matmul_linearity",
    "adaptive_pool_mean",
    "dwc_identity",
    "agent_row_stochastic",
    "agent_convex_hull",
    "q_permutation_equivariance",
    "kv_permutation_invariance",
    "linear_reorder_equivalence",
    "oracle_agreement",
    "phi_reconstruction",
    "softmax_oracle_agreement",
    "agent_gradient",
    "module_gradient",
    "bias_componentwise_sum",
    "bias_shift_invariance",
    "module_reduction",
    "training_free_reduction",
    "flop_ratio",
    "mac_instrumentation",
    "resize_identity",
];

const RUNNERS: [PropertyFn; 21] = [
    prop_softmax_rowsum,
    prop_matmul_linearity,
    prop_pool_mean,
    prop_dwc_identity,
    prop_agent_row_stochastic,
    prop_convex_hull,
    prop_q_permutation,
    prop_kv_permutation,
    prop_linear_reorder,
    prop_oracle_agreement,
    prop_phi_reconstruction,
    prop_softmax_oracle,
    prop_agent_gradient,
    prop_module_gradient,
    prop_bias_sum,
    prop_bias_shift,
    prop_module_reduction,
    prop_training_free_reduction,
    prop_flop_ratio,
    prop_mac_instrumentation,
    prop_resize_identity,
];

/// Run every registered property on `trials` seeded random instances.
///
/// Each property draws from its own stream derived from `seed`, so results
/// do not depend on which other properties ran. With `fault` set, the named
/// corruption is applied inside exactly one property.
pub fn property_suite(seed: u64, trials: usize, fault: Option<Fault>) -> Result<Vec<CheckReport>> {
    if trials == 0 {
        return Err(config_err!("property suite needs at least one trial"));
    }
    let ctx = Ctx { trials, fault };
    Ok(PROPERTIES
        .iter()
        .zip(RUNNERS)
        .enumerate()
        .map(|(i, (name, run))| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (0x9E37_79B9_7F4A_7C15u64.wrapping_mul(i as u64 + 1)));
            run(&mut rng, &ctx).unwrap_or_else(|e| CheckReport::failed(name, &e))
        })
        .collect())
}

/// The exhaustive oracle sweep: `N ∈ {4, 16, 64}`, `n ∈ {1, 4, 16}`, `seeds`
/// instances each (`d = 8`), evaluated in `T`. Returns the agreement and
/// row-sum reports, judged against `T::ORACLE_TOL`.
pub fn oracle_sweep<T: Scalar>(seed: u64, seeds: usize) -> Result<[CheckReport; 2]> {
    let mut agree = Acc::default();
    let mut rowsum = Acc::default();
    for &n_tok in &[4usize, 16, 64] {
        for &n in &[1usize, 4, 16] {
            for s in 0..seeds as u64 {
                let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(s) ^ ((n_tok as u64) << 32 | n as u64));
                let f = random_inputs(n_tok, n, 8, &mut rng)?;
                let inp = AttentionInputs::new(f.q.cast::<T>(), f.k.cast(), f.v.cast())?
                    .with_agents(f.a.as_ref().expect("agents").cast())?;
                let (got, want) = (agent_attention_pure(&inp)?, composed_matrix_oracle(&inp)?);
                let abs = max_abs_diff_f64(&got, &want)?;
                agree.push(abs, abs / want.max_abs().as_f64().max(1.0));
                let m = composed_matrix(&inp)?;
                for r in 0..n_tok {
                    let e = (m.row(r).iter().map(|v| v.as_f64()).sum::<f64>() - 1.0).abs();
                    rowsum.push(e, e);
                }
            }
        }
    }
    let suffix = T::DTYPE.name();
    Ok([
        agree.report(&format!("oracle_sweep_agreement_{suffix}"), T::ORACLE_TOL, Metric::MaxAbs),
        rowsum.report(&format!("oracle_sweep_row_stochastic_{suffix}"), T::ORACLE_TOL, Metric::MaxAbs),
    ])
}

/// Every gradient check at a point built from `seed`: softmax and agent
/// kernels, the full module, and the backbone's patch embedding.
pub fn gradient_suite(seed: u64) -> Result<Vec<CheckReport>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    let inputs = random_inputs(6, 3, 3, &mut rng)?;
    out.push(gradient_check(&SoftmaxKernelOp { inputs: inputs.clone() }, GRAD_STEP, KERNEL_GRAD_TOL)?);
    out.push(gradient_check(&AgentKernelOp { inputs, b1: None, b2: None }, GRAD_STEP, KERNEL_GRAD_TOL)?);
    let cfg = ModuleConfig { qkv_bias: true, proj_bias: true, bias_block: 2, ..ModuleConfig::new(4, 2, 4, 4, 4) };
    let params = random_module(cfg, &mut rng)?;
    let x = Tensor::randn([16, 4], 1.0, &mut rng)?;
    out.push(gradient_check(&ModuleOp { params, x }, GRAD_STEP, MODULE_GRAD_TOL)?);
    let model = Model::build(&desk_preset(), seed)?;
    let image = Tensor::randn([16, 16, 3], 1.0, &mut rng)?;
    out.push(gradient_check(&PatchEmbedOp { model, image }, GRAD_STEP, MODULE_GRAD_TOL)?);
    Ok(out)
}

/// Boxed ops for callers that iterate over heterogeneous checks.
pub fn boxed<D: Differentiable + 'static>(op: D) -> Box<dyn Differentiable> {
    Box::new(op)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn report_pass_rule() {
        assert!(CheckReport::new("a", 1e-13, 1.0, 1e-12, Metric::MaxAbs).passed);
        assert!(!CheckReport::new("a", 1e-13, 1.0, 1e-12, Metric::Relative).passed);
        assert!(!CheckReport::new("a", f64::NAN, 0.0, 1.0, Metric::MaxAbs).passed);
    }

    #[test]
    fn oracle_identities() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        // V = I_N: the oracle returns M itself
        let mut inp = random_inputs(5, 2, 5, &mut rng).unwrap();
        inp.v = Tensor::identity(5).unwrap();
        let m = composed_matrix(&inp).unwrap();
        assert!(composed_matrix_oracle(&inp).unwrap().max_abs_diff(&m).unwrap() < 1e-15);
        for r in 0..5 {
            assert!((m.row(r).iter().sum::<f64>() - 1.0).abs() < 1e-14);
        }
        // n = N, A = K: still row-stochastic
        let mut inp = random_inputs(6, 6, 3, &mut rng).unwrap();
        inp.a = Some(inp.k.clone());
        let m = composed_matrix(&inp).unwrap();
        assert!(m.data().iter().all(|&v| v >= 0.0));
        for r in 0..6 {
            assert!((m.row(r).iter().sum::<f64>() - 1.0).abs() < 1e-14);
        }
    }

    #[test]
    fn gradient_check_linear_map_is_tight() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let op = LinearMapOp {
            x: Tensor::randn([3, 4], 1.0, &mut rng).unwrap(),
            w: Tensor::randn([4, 5], 1.0, &mut rng).unwrap(),
        };
        let r = gradient_check(&op, 1e-4, 1e-10).unwrap();
        assert!(r.passed, "{r:?}");
    }

    #[test]
    fn gradient_check_agent_small_instance() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let op = AgentKernelOp { inputs: random_inputs(4, 2, 2, &mut rng).unwrap(), b1: None, b2: None };
        let r = gradient_check(&op, 1e-6, 1e-6).unwrap();
        assert!(r.passed, "{r:?}");
    }

    #[test]
    fn gradient_check_coarse_step_fails() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let op = AgentKernelOp { inputs: random_inputs(4, 2, 2, &mut rng).unwrap(), b1: None, b2: None };
        let r = gradient_check(&op, 1e-1, KERNEL_GRAD_TOL).unwrap();
        assert!(!r.passed);
        assert!(r.rel_err > r.tolerance);
        assert!(matches!(gradient_check(&op, 0.0, 1e-5), Err(Error::Config(_))));
        assert!(matches!(gradient_check(&op, f64::NAN, 1e-5), Err(Error::Config(_))));
    }

    struct Exploding;
    impl Differentiable for Exploding {
        fn name(&self) -> String {
            "exploding".into()
        }
        fn inputs(&self) -> Vec<Tensor<f64>> {
            vec![Tensor::full([1], 1.0).unwrap()]
        }
        fn forward(&self, x: &[Tensor<f64>]) -> Result<Tensor<f64>> {
            Ok(x[0].clone())
        }
        fn backward(&self, _: &[Tensor<f64>], _: &Tensor<f64>) -> Result<Vec<Tensor<f64>>> {
            Ok(vec![Tensor::from_parts(vec![1], vec![f64::INFINITY])])
        }
    }

    #[test]
    fn non_finite_gradient_names_location() {
        match gradient_check(&Exploding, 1e-6, 1e-5) {
            Err(Error::NonFinite { location }) => assert!(location.contains("exploding")),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn suite_is_deterministic_and_complete() {
        let a = property_suite(7, 1, None).unwrap();
        assert!(a.len() >= 10);
        assert_eq!(a.len(), PROPERTIES.len());
        for r in &a {
            assert!(r.passed, "{r:?}");
        }
        assert_eq!(a, property_suite(7, 1, None).unwrap());
        assert!(property_suite(7, 0, None).is_err());
    }

    #[test]
    fn each_fault_breaks_exactly_its_property() {
        for (fault, name) in [
            (Fault::RowSum, "softmax_rowsum"),
            (Fault::Oracle, "oracle_agreement"),
            (Fault::Gradient, "agent_gradient"),
        ] {
            let r = property_suite(3, 2, Some(fault)).unwrap();
            let failed: Vec<&str> = r.iter().filter(|r| !r.passed).map(|r| r.name.as_str()).collect();
            assert_eq!(failed, vec![name]);
        }
        assert!("bogus".parse::<Fault>().is_err());
    }
}
