//! Single-head attention kernels: softmax attention, kernelized linear
//! attention, and agent attention (two chained softmax attentions through a
//! small set of agent tokens), with analytic backward passes.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{config_err, dim_err};
use crate::ops::{
    gemm_acc, matmul, matmul_at, matmul_bt, matmul_bt_tallied, matmul_tallied,
    softmax_rows_backward, softmax_rows_in_place, MacTally,
};
use crate::{Error, Result, Scalar, Tensor};

/// Query/key/value bundle, optionally with agent tokens, for one head.
///
/// `scale1` is the temperature of the first softmax (agent aggregation for
/// agent attention, the only softmax for softmax attention); `scale2` is the
/// temperature of the agent broadcast softmax.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionInputs<T> {
    pub q: Tensor<T>,
    pub k: Tensor<T>,
    pub v: Tensor<T>,
    pub a: Option<Tensor<T>>,
    pub scale1: T,
    pub scale2: T,
}

impl<T: Scalar> AttentionInputs<T> {
    /// Both scales default to `1/√d`.
    pub fn new(q: Tensor<T>, k: Tensor<T>, v: Tensor<T>) -> Result<Self> {
        let (_, d) = q.dims2()?;
        let s = T::one() / T::from_usize(d).unwrap().sqrt();
        let out = AttentionInputs {
            q,
            k,
            v,
            a: None,
            scale1: s,
            scale2: s,
        };
        out.validate()?;
        Ok(out)
    }

    pub fn with_agents(mut self, a: Tensor<T>) -> Result<Self> {
        self.a = Some(a);
        self.validate()?;
        Ok(self)
    }

    pub fn with_scales(mut self, scale1: T, scale2: T) -> Result<Self> {
        self.scale1 = scale1;
        self.scale2 = scale2;
        self.validate()?;
        Ok(self)
    }

    /// Scales for the training-free variant: `d^-0.5` for aggregation and the
    /// sharper `d^-0.15` for broadcast.
    pub fn with_training_free_scales(self) -> Result<Self> {
        let d = T::from_usize(self.head_dim()).unwrap();
        let (s1, s2) = (d.powf(T::of(-0.5)), d.powf(T::of(-0.15)));
        self.with_scales(s1, s2)
    }

    pub fn tokens(&self) -> usize {
        self.q.rows()
    }

    pub fn head_dim(&self) -> usize {
        self.q.cols()
    }

    pub fn agents(&self) -> Option<usize> {
        self.a.as_ref().map(|a| a.rows())
    }

    pub fn validate(&self) -> Result<()> {
        let (n, d) = self.q.dims2()?;
        for (name, t) in [("k", &self.k), ("v", &self.v)] {
            if t.dims2()? != (n, d) {
                return Err(dim_err!("{name} has shape {:?}, q has {:?}", t.shape(), self.q.shape()));
            }
        }
        if let Some(a) = &self.a {
            // n > N is allowed: the kernel stays well defined, only wasteful
            let (_, da) = a.dims2()?;
            if da != d {
                return Err(dim_err!("agents have shape {:?}; need rows of width {d}", a.shape()));
            }
        }
        for s in [self.scale1, self.scale2] {
            if !(s > T::zero()) || !s.is_finite() {
                return Err(config_err!("softmax scales must be positive and finite, got {s}"));
            }
        }
        Ok(())
    }

    pub(crate) fn agents_or_err(&self) -> Result<&Tensor<T>> {
        self.a
            .as_ref()
            .ok_or_else(|| config_err!("agent attention requires agent tokens"))
    }
}

const QUERY_BLOCK: usize = 64;

pub fn softmax_attention_tallied<T: Scalar, M: MacTally>(
    inp: &AttentionInputs<T>,
    tally: &mut M,
) -> Result<Tensor<T>> {
    inp.validate()?;
    let (n, d) = inp.q.dims2()?;
    let kt = inp.k.transpose()?;
    let (qd, kd, vd) = (inp.q.data(), kt.data(), inp.v.data());
    let mut out = vec![T::zero(); n * d];
    let mut scores = vec![T::zero(); QUERY_BLOCK.min(n) * n];
    for r0 in (0..n).step_by(QUERY_BLOCK) {
        let rows = QUERY_BLOCK.min(n - r0);
        let s = &mut scores[..rows * n];
        s.fill(T::zero());
        gemm_acc(&qd[r0 * d..(r0 + rows) * d], kd, s, rows, d, n, tally);
        for v in s.iter_mut() {
            *v *= inp.scale1;
        }
        softmax_rows_in_place(s, n);
        tally.exps((rows * n) as u64);
        gemm_acc(s, vd, &mut out[r0 * d..(r0 + rows) * d], rows, n, d, tally);
    }
    Tensor::from_parts(vec![n, d], out).ensure_finite("softmax_attention output")
}

/// `σ(scale1 · QKᵀ) V`, processed in blocks of query rows so the score
/// matrix is never fully materialized.
pub fn softmax_attention<T: Scalar>(inp: &AttentionInputs<T>) -> Result<Tensor<T>> {
    softmax_attention_tallied(inp, &mut ())
}

#[derive(Debug, Clone)]
pub struct SoftmaxGrads<T> {
    pub dq: Tensor<T>,
    pub dk: Tensor<T>,
    pub dv: Tensor<T>,
}

/// Analytic gradients of [`softmax_attention`].
pub fn softmax_attention_backward<T: Scalar>(
    inp: &AttentionInputs<T>,
    grad_out: &Tensor<T>,
) -> Result<SoftmaxGrads<T>> {
    inp.validate()?;
    if grad_out.shape() != inp.q.shape() {
        return Err(dim_err!("grad_out shape {:?} != output shape {:?}", grad_out.shape(), inp.q.shape()));
    }
    let mut s = matmul_bt(&inp.q, &inp.k)?;
    let n = s.cols();
    for v in s.data_mut() {
        *v *= inp.scale1;
    }
    softmax_rows_in_place(s.data_mut(), n);
    let p = s;
    let dp = matmul_bt(grad_out, &inp.v)?;
    let dv = matmul_at(&p, grad_out)?;
    let ds = softmax_rows_backward(&p, &dp).scale(inp.scale1);
    let dq = matmul(&ds, &inp.k)?;
    let dk = matmul_at(&ds, &inp.q)?;
    Ok(SoftmaxGrads { dq, dk, dv })
}

/// Feature map `φ` applied row-wise to queries and keys by linear attention.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FeatureMap {
    /// `elu(x) + 1`, strictly positive.
    EluPlusOne,
    Relu,
}

impl FeatureMap {
    pub fn apply<T: Scalar>(self, x: T) -> T {
        match self {
            FeatureMap::EluPlusOne if x > T::zero() => x + T::one(),
            FeatureMap::EluPlusOne => x.exp(),
            FeatureMap::Relu => x.max(T::zero()),
        }
    }

    pub fn map_tensor<T: Scalar>(self, t: &Tensor<T>) -> Tensor<T> {
        t.map(|v| self.apply(v))
    }
}

impl core::str::FromStr for FeatureMap {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "elu_plus_one" => Ok(FeatureMap::EluPlusOne),
            "relu" => Ok(FeatureMap::Relu),
            other => Err(config_err!("unknown feature map {other:?}")),
        }
    }
}

/// Smallest per-row normalizer accepted by normalized linear attention.
pub const LINEAR_DENOMINATOR_FLOOR: f64 = 1e-12;

/// Normalized linear attention, `φ(Q)(φ(K)ᵀV) / (φ(Q) Σ_j φ(K)_jᵀ)`, evaluated
/// right-to-left so the cost is `O(N·d²)`.
pub fn linear_attention<T: Scalar>(inp: &AttentionInputs<T>, phi: FeatureMap) -> Result<Tensor<T>> {
    linear_attention_with(inp, phi, true)
}

/// Linear attention with the per-row normalizer optional (`normalized = false`
/// gives the bare `φ(Q)φ(K)ᵀV`).
pub fn linear_attention_with<T: Scalar>(
    inp: &AttentionInputs<T>,
    phi: FeatureMap,
    normalized: bool,
) -> Result<Tensor<T>> {
    inp.validate()?;
    let fq = phi.map_tensor(&inp.q);
    let fk = phi.map_tensor(&inp.k);
    let kv = matmul_at(&fk, &inp.v)?;
    let mut out = matmul(&fq, &kv)?;
    if normalized {
        let d = fk.cols();
        let mut ksum = vec![T::zero(); d];
        for row in fk.data().chunks_exact(d) {
            for (s, &v) in ksum.iter_mut().zip(row) {
                *s += v;
            }
        }
        let floor = T::of(LINEAR_DENOMINATOR_FLOOR);
        let dv = out.cols();
        for (i, (orow, qrow)) in out
            .data_mut()
            .chunks_exact_mut(dv)
            .zip(fq.data().chunks_exact(d))
            .enumerate()
        {
            let den: T = qrow.iter().zip(&ksum).map(|(&a, &b)| a * b).sum();
            if !(den > floor) {
                return Err(Error::NumericDomain(alloc::format!(
                    "linear attention normalizer of row {i} is {den}, must exceed {LINEAR_DENOMINATOR_FLOOR:e}"
                )));
            }
            for v in orow.iter_mut() {
                *v /= den;
            }
        }
    }
    out.ensure_finite("linear_attention output")
}

/// Intermediates of one biased agent attention evaluation.
#[derive(Debug, Clone)]
pub(crate) struct AgentCache<T> {
    /// Aggregation weights `σ(s1·AKᵀ + B1)`, `n×N`.
    pub p1: Tensor<T>,
    /// Agent features `P1 V`, `n×d`.
    pub va: Tensor<T>,
    /// Broadcast weights `σ(s2·QAᵀ + B2)`, `N×n`.
    pub p2: Tensor<T>,
    pub out: Tensor<T>,
}

fn scaled_biased_softmax<T: Scalar, M: MacTally>(
    mut scores: Tensor<T>,
    scale: T,
    bias: Option<&Tensor<T>>,
    tally: &mut M,
) -> Result<Tensor<T>> {
    if let Some(b) = bias {
        if b.shape() != scores.shape() {
            return Err(dim_err!("bias shape {:?} != score shape {:?}", b.shape(), scores.shape()));
        }
        for (s, &bv) in scores.data_mut().iter_mut().zip(b.data()) {
            *s = *s * scale + bv;
        }
    } else {
        for s in scores.data_mut() {
            *s *= scale;
        }
    }
    let cols = scores.cols();
    softmax_rows_in_place(scores.data_mut(), cols);
    tally.exps(scores.len() as u64);
    Ok(scores)
}

pub(crate) fn agent_forward<T: Scalar, M: MacTally>(
    inp: &AttentionInputs<T>,
    b1: Option<&Tensor<T>>,
    b2: Option<&Tensor<T>>,
    tally: &mut M,
) -> Result<AgentCache<T>> {
    inp.validate()?;
    let a = inp.agents_or_err()?;
    let p1 = scaled_biased_softmax(matmul_bt_tallied(a, &inp.k, tally)?, inp.scale1, b1, tally)?;
    let va = matmul_tallied(&p1, &inp.v, tally)?;
    let p2 = scaled_biased_softmax(matmul_bt_tallied(&inp.q, a, tally)?, inp.scale2, b2, tally)?;
    let out = matmul_tallied(&p2, &va, tally)?.ensure_finite("agent attention output")?;
    Ok(AgentCache { p1, va, p2, out })
}

/// Gradients of agent attention with respect to all of its inputs.
///
/// `db1`/`db2` are the gradients with respect to the additive score biases;
/// they are returned whether or not a bias was applied.
#[derive(Debug, Clone)]
pub struct AgentGrads<T> {
    pub dq: Tensor<T>,
    pub dk: Tensor<T>,
    pub dv: Tensor<T>,
    pub da: Tensor<T>,
    pub db1: Tensor<T>,
    pub db2: Tensor<T>,
}

pub(crate) fn agent_backward<T: Scalar>(
    inp: &AttentionInputs<T>,
    cache: &AgentCache<T>,
    grad_out: &Tensor<T>,
) -> Result<AgentGrads<T>> {
    let a = inp.agents_or_err()?;
    if grad_out.shape() != cache.out.shape() {
        return Err(dim_err!(
            "grad_out shape {:?} != output shape {:?}",
            grad_out.shape(),
            cache.out.shape()
        ));
    }
    // broadcast stage: O = P2 VA
    let dp2 = matmul_bt(grad_out, &cache.va)?;
    let dva = matmul_at(&cache.p2, grad_out)?;
    let ds2 = softmax_rows_backward(&cache.p2, &dp2);
    let dq = matmul(&ds2, a)?.scale(inp.scale2);
    let mut da = matmul_at(&ds2, &inp.q)?.scale(inp.scale2);
    // aggregation stage: VA = P1 V
    let dp1 = matmul_bt(&dva, &inp.v)?;
    let dv = matmul_at(&cache.p1, &dva)?;
    let ds1 = softmax_rows_backward(&cache.p1, &dp1);
    da.add_assign(&matmul(&ds1, &inp.k)?.scale(inp.scale1));
    let dk = matmul_at(&ds1, a)?.scale(inp.scale1);
    Ok(AgentGrads {
        dq,
        dk,
        dv,
        da,
        db1: ds1,
        db2: ds2,
    })
}

/// Agent attention without bias: aggregation `V_A = σ(scale1·AKᵀ)V`, then
/// broadcast `O = σ(scale2·QAᵀ)V_A`. Cost `O(N·n·d)`.
pub fn agent_attention_pure<T: Scalar>(inp: &AttentionInputs<T>) -> Result<Tensor<T>> {
    Ok(agent_forward(inp, None, None, &mut ())?.out)
}

pub fn agent_attention_pure_tallied<T: Scalar, M: MacTally>(
    inp: &AttentionInputs<T>,
    tally: &mut M,
) -> Result<Tensor<T>> {
    Ok(agent_forward(inp, None, None, tally)?.out)
}

/// Agent attention with additive biases inside the softmaxes:
/// `σ(scale2·QAᵀ + B2) σ(scale1·AKᵀ + B1) V`, `B1: n×N`, `B2: N×n`.
pub fn agent_attention_biased<T: Scalar>(
    inp: &AttentionInputs<T>,
    b1: Option<&Tensor<T>>,
    b2: Option<&Tensor<T>>,
) -> Result<Tensor<T>> {
    Ok(agent_forward(inp, b1, b2, &mut ())?.out)
}

/// Gradients of [`agent_attention_pure`] with respect to `Q`, `K`, `V` and `A`.
pub fn agent_attention_backward<T: Scalar>(
    inp: &AttentionInputs<T>,
    grad_out: &Tensor<T>,
) -> Result<AgentGrads<T>> {
    let cache = agent_forward(inp, None, None, &mut ())?;
    agent_backward(inp, &cache, grad_out)
}

/// Gradients of [`agent_attention_biased`], including the bias gradients.
pub fn agent_attention_biased_backward<T: Scalar>(
    inp: &AttentionInputs<T>,
    b1: Option<&Tensor<T>>,
    b2: Option<&Tensor<T>>,
    grad_out: &Tensor<T>,
) -> Result<AgentGrads<T>> {
    let cache = agent_forward(inp, b1, b2, &mut ())?;
    agent_backward(inp, &cache, grad_out)
}

/// The feature maps under which agent attention is a linear attention:
/// `φ_q(Q) = σ(scale2·QAᵀ)` and `φ_k(K) = σ(scale1·AKᵀ)ᵀ`, both `N×n`.
///
/// `φ_q(Q) · (φ_k(K)ᵀ · V)` reproduces [`agent_attention_pure`].
pub fn equivalent_phi<T: Scalar>(inp: &AttentionInputs<T>) -> Result<(Tensor<T>, Tensor<T>)> {
    inp.validate()?;
    let a = inp.agents_or_err()?;
    let phi_q = scaled_biased_softmax(matmul_bt(&inp.q, a)?, inp.scale2, None, &mut ())?;
    let phi_k = scaled_biased_softmax(matmul_bt(a, &inp.k)?, inp.scale1, None, &mut ())?.transpose()?;
    Ok((phi_q, phi_k))
}

/// Multi-head helper: split an `N×C` matrix into `heads` column blocks.
pub(crate) fn split_heads<T: Scalar>(x: &Tensor<T>, heads: usize) -> Result<Vec<Tensor<T>>> {
    let (_, c) = x.dims2()?;
    let d = c / heads;
    (0..heads).map(|h| x.slice_cols(h * d, d)).collect()
}

pub(crate) fn merge_heads<T: Scalar>(parts: &[Tensor<T>]) -> Result<Tensor<T>> {
    let n = parts[0].rows();
    let d = parts[0].cols();
    let mut out = Tensor::zeros([n, d * parts.len()])?;
    for (h, p) in parts.iter().enumerate() {
        out.set_cols(h * d, p);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rand_inputs(seed: u64, n: usize, agents: usize, d: usize) -> AttentionInputs<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let q = Tensor::randn([n, d], 1.0, &mut rng).unwrap();
        let k = Tensor::randn([n, d], 1.0, &mut rng).unwrap();
        let v = Tensor::randn([n, d], 1.0, &mut rng).unwrap();
        let a = Tensor::randn([agents, d], 1.0, &mut rng).unwrap();
        AttentionInputs::new(q, k, v).unwrap().with_agents(a).unwrap()
    }

    #[test]
    fn single_token_softmax_returns_value() {
        let x = Tensor::<f64>::from_f64([1, 1], &[2.5]).unwrap();
        let inp = AttentionInputs::new(x.clone(), x.clone(), x.clone()).unwrap();
        assert_eq!(softmax_attention(&inp).unwrap(), x);
    }

    #[test]
    fn identical_keys_average_values() {
        let mut inp = rand_inputs(3, 5, 2, 3);
        inp.k = Tensor::from_fn([5, 3], |i| [0.3, -1.0, 2.0][i % 3]).unwrap();
        let out = softmax_attention(&inp).unwrap();
        let mean: Vec<f64> = (0..3)
            .map(|c| (0..5).map(|r| inp.v.at(&[r, c])).sum::<f64>() / 5.0)
            .collect();
        for r in 0..5 {
            for c in 0..3 {
                assert!((out.at(&[r, c]) - mean[c]).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn softmax_backward_zero_grad() {
        let inp = rand_inputs(1, 4, 2, 3);
        let g = softmax_attention_backward(&inp, &Tensor::zeros([4, 3]).unwrap()).unwrap();
        assert!(g.dq.max_abs() == 0.0 && g.dk.max_abs() == 0.0 && g.dv.max_abs() == 0.0);
    }

    #[test]
    fn linear_single_token_is_exact() {
        let q = Tensor::<f64>::from_f64([1, 2], &[0.3, -0.7]).unwrap();
        let v = Tensor::<f64>::from_f64([1, 2], &[1.25, -4.0]).unwrap();
        let inp = AttentionInputs::new(q.clone(), q, v.clone()).unwrap();
        let out = linear_attention(&inp, FeatureMap::EluPlusOne).unwrap();
        assert!(out.max_abs_diff(&v).unwrap() < 1e-15);
    }

    #[test]
    fn linear_relu_identical_positive_keys_average_values() {
        let mut inp = rand_inputs(4, 6, 1, 2);
        inp.q = inp.q.map(|v| v.abs() + 0.1);
        inp.k = Tensor::from_fn([6, 2], |i| [0.5, 1.5][i % 2]).unwrap();
        let out = linear_attention(&inp, FeatureMap::Relu).unwrap();
        for c in 0..2 {
            let mean = (0..6).map(|r| inp.v.at(&[r, c])).sum::<f64>() / 6.0;
            for r in 0..6 {
                assert!((out.at(&[r, c]) - mean).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn linear_vanishing_denominator_is_an_error() {
        let mut inp = rand_inputs(4, 3, 1, 2);
        inp.q = inp.q.map(|v| -v.abs() - 1.0);
        assert!(matches!(
            linear_attention(&inp, FeatureMap::Relu),
            Err(Error::NumericDomain(_))
        ));
        // unnormalized form has no denominator to vanish
        assert!(linear_attention_with(&inp, FeatureMap::Relu, false).is_ok());
    }

    #[test]
    fn agent_requires_agents() {
        let inp = rand_inputs(1, 4, 2, 3);
        let bare = AttentionInputs::new(inp.q.clone(), inp.k.clone(), inp.v.clone()).unwrap();
        assert!(matches!(agent_attention_pure(&bare), Err(Error::Config(_))));
        assert!(matches!(equivalent_phi(&bare), Err(Error::Config(_))));
    }

    #[test]
    fn one_agent_gives_identical_rows() {
        let inp = rand_inputs(9, 7, 1, 3);
        let out = agent_attention_pure(&inp).unwrap();
        let first = out.row(0).to_vec();
        for r in 1..7 {
            assert_eq!(out.row(r), &first[..]);
        }
        let (phi_q, _) = equivalent_phi(&inp).unwrap();
        assert!(phi_q.data().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn constant_values_pass_through() {
        let mut inp = rand_inputs(2, 6, 2, 3);
        inp.v = Tensor::from_fn([6, 3], |i| [1.5, -2.0, 0.25][i % 3]).unwrap();
        let out = agent_attention_pure(&inp).unwrap();
        for r in 0..6 {
            for (c, want) in [1.5, -2.0, 0.25].into_iter().enumerate() {
                assert!((out.at(&[r, c]) - want).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn degenerate_backward() {
        let x = Tensor::<f64>::from_f64([1, 1], &[0.7]).unwrap();
        let inp = AttentionInputs::new(x.clone(), x.clone(), x.clone())
            .unwrap()
            .with_agents(x.clone())
            .unwrap();
        let g = Tensor::from_f64([1, 1], &[-1.3]).unwrap();
        let grads = agent_attention_backward(&inp, &g).unwrap();
        assert_eq!(grads.dv, g);
        assert_eq!(grads.dq.data(), &[0.0]);
        assert_eq!(grads.dk.data(), &[0.0]);
        assert_eq!(grads.da.data(), &[0.0]);

        let inp = rand_inputs(5, 4, 2, 2);
        let grads = agent_attention_backward(&inp, &Tensor::zeros([4, 2]).unwrap()).unwrap();
        for t in [&grads.dq, &grads.dk, &grads.dv, &grads.da] {
            assert_eq!(t.max_abs(), 0.0);
        }
    }

    #[test]
    fn phi_maps_are_stochastic() {
        let inp = rand_inputs(11, 8, 3, 4);
        let (phi_q, phi_k) = equivalent_phi(&inp).unwrap();
        for r in 0..8 {
            assert!((phi_q.row(r).iter().sum::<f64>() - 1.0).abs() < 1e-15);
        }
        for c in 0..3 {
            let s: f64 = (0..8).map(|r| phi_k.at(&[r, c])).sum();
            assert!((s - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn validation_rejects_bad_inputs() {
        let inp = rand_inputs(1, 4, 2, 3);
        assert!(inp.clone().with_scales(0.0, 1.0).is_err());
        assert!(inp.clone().with_agents(Tensor::zeros([5, 2]).unwrap()).is_err());
        assert!(inp.clone().with_agents(Tensor::zeros([5, 3]).unwrap()).is_ok());
        let k = Tensor::zeros([4, 2]).unwrap();
        assert!(AttentionInputs::new(inp.q.clone(), k, inp.v.clone()).is_err());
    }
}
