//! The agent attention module: projections, pooled agent tokens, per-head
//! biased agent attention, a depthwise-convolution branch on `V`, and the
//! output projection. Also the plain multi-head softmax attention used by
//! non-agent blocks, and the training-free agent variant.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::Rng;

use crate::attention::{
    agent_backward, agent_forward, merge_heads, softmax_attention, softmax_attention_backward,
    split_heads, AgentCache, AttentionInputs,
};
use crate::bias::{isqrt_exact, AgentBiasParams, COMPONENT_NAMES, DEFAULT_BLOCK};
use crate::error::{config_err, dim_err};
use crate::ops::{
    adaptive_avg_pool2d, adaptive_avg_pool2d_adjoint, add_row_vector, column_sums,
    depthwise_conv2d, depthwise_conv2d_backward, matmul, matmul_at, matmul_bt,
};
use crate::{Result, Scalar, Tensor};

/// Depthwise kernel side length of the diversity-restoration branch.
pub const DWC_KERNEL: usize = 3;

/// Shape-level description of an agent attention module.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ModuleConfig {
    pub dim: usize,
    pub heads: usize,
    pub agents: usize,
    pub h: usize,
    pub w: usize,
    pub qkv_bias: bool,
    pub proj_bias: bool,
    pub shared_bias: bool,
    pub bias_block: usize,
}

impl ModuleConfig {
    pub fn new(dim: usize, heads: usize, agents: usize, h: usize, w: usize) -> Self {
        ModuleConfig {
            dim,
            heads,
            agents,
            h,
            w,
            qkv_bias: false,
            proj_bias: false,
            shared_bias: false,
            bias_block: DEFAULT_BLOCK,
        }
    }

    pub fn head_dim(&self) -> usize {
        self.dim / self.heads
    }

    pub fn tokens(&self) -> usize {
        self.h * self.w
    }

    /// Block-bias base, clamped so it never exceeds the feature map.
    pub fn block_dims(&self) -> (usize, usize) {
        (self.bias_block.min(self.h), self.bias_block.min(self.w))
    }

    pub fn validate(&self) -> Result<()> {
        let ModuleConfig { dim, heads, agents, h, w, .. } = *self;
        if dim == 0 || heads == 0 || dim % heads != 0 {
            return Err(config_err!("dim {dim} must be a positive multiple of heads {heads}"));
        }
        if h == 0 || w == 0 || self.bias_block == 0 {
            return Err(config_err!("feature map {h}x{w} and bias block must be non-empty"));
        }
        let side = isqrt_exact(agents)
            .filter(|&s| s >= 1)
            .ok_or_else(|| config_err!("agent count {agents} is not a perfect square"))?;
        if side > h.min(w) {
            return Err(config_err!("agent grid {side}x{side} does not fit a {h}x{w} map"));
        }
        Ok(())
    }

    fn bias_tables(&self) -> usize {
        if self.shared_bias {
            1
        } else {
            self.heads
        }
    }
}

/// Learnable state of one agent attention module.
///
/// Projections act on row vectors: `Q = x·wq (+ bq)`.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentModuleParams<T> {
    pub config: ModuleConfig,
    pub wq: Tensor<T>,
    pub wk: Tensor<T>,
    pub wv: Tensor<T>,
    pub wo: Tensor<T>,
    pub bq: Option<Tensor<T>>,
    pub bk: Option<Tensor<T>>,
    pub bv: Option<Tensor<T>>,
    pub bo: Option<Tensor<T>>,
    /// One table per head, or a single table when `config.shared_bias`.
    pub bias: Vec<AgentBiasParams<T>>,
    /// `3×3×C` depthwise kernel applied to `V`.
    pub dwc_kernel: Tensor<T>,
    pub scale1: T,
    pub scale2: T,
    /// Identity shortcut factor of the training-free variant.
    pub shortcut_k: T,
}

/// Output of [`AgentModuleParams::forward`].
#[derive(Debug, Clone)]
pub struct ModuleOutput<T> {
    pub out: Tensor<T>,
    pub aux: Option<Diagnostics<T>>,
}

/// Optional forward diagnostics.
#[derive(Debug, Clone)]
pub struct Diagnostics<T> {
    /// Mean row entropy (nats) of the aggregation weights, per head.
    pub aggregation_entropy: Vec<f64>,
    /// Mean row entropy (nats) of the broadcast weights, per head.
    pub broadcast_entropy: Vec<f64>,
    /// Pooled agent tokens, `n×C`.
    pub agents: Tensor<T>,
}

/// Pool projected queries into `n` agent tokens: reshape `N×C` to `h×w×C`,
/// adaptive-average-pool to `√n×√n`, flatten row-major to `n×C`.
pub fn pool_agents<T: Scalar>(q: &Tensor<T>, h: usize, w: usize, n: usize) -> Result<Tensor<T>> {
    let (tokens, c) = q.dims2()?;
    if tokens != h * w {
        return Err(dim_err!("{tokens} tokens do not form a {h}x{w} grid"));
    }
    let side = isqrt_exact(n).ok_or_else(|| config_err!("agent count {n} is not a perfect square"))?;
    adaptive_avg_pool2d(&q.reshape([h, w, c])?, side, side)?.into_reshape([n, c])
}

fn project<T: Scalar>(x: &Tensor<T>, w: &Tensor<T>, b: Option<&Tensor<T>>) -> Result<Tensor<T>> {
    let mut y = matmul(x, w)?;
    if let Some(b) = b {
        add_row_vector(&mut y, b);
    }
    Ok(y)
}

fn mean_row_entropy<T: Scalar>(p: &Tensor<T>) -> f64 {
    let cols = p.cols();
    let rows = p.rows();
    let total: f64 = p
        .data()
        .chunks_exact(cols)
        .map(|r| {
            r.iter()
                .map(|&v| v.as_f64())
                .filter(|&v| v > 0.0)
                .map(|v| -v * libm::log(v))
                .sum::<f64>()
        })
        .sum();
    total / rows as f64
}

struct HeadCache<T> {
    inputs: AttentionInputs<T>,
    attn: AgentCache<T>,
    table: usize,
}

/// Everything the backward pass needs from one forward evaluation.
pub struct ModuleCache<T> {
    x: Tensor<T>,
    v: Tensor<T>,
    y: Tensor<T>,
    heads: Vec<HeadCache<T>>,
}

impl<T: Scalar> AgentModuleParams<T> {
    /// Random initialization: truncated-normal (std 0.02) projections and
    /// agent bias, uniform `±1/3` depthwise kernel, zero projection biases.
    pub fn init<R: Rng + ?Sized>(config: ModuleConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let c = config.dim;
        let (h0, w0) = config.block_dims();
        let mut lin = || Tensor::trunc_normal([c, c], 0.02, rng);
        let (wq, wk, wv, wo) = (lin()?, lin()?, lin()?, lin()?);
        let bias = (0..config.bias_tables())
            .map(|_| AgentBiasParams::trunc_normal(config.agents, config.h, config.w, h0, w0, rng))
            .collect::<Result<Vec<_>>>()?;
        // 1/sqrt(fan_in) with fan_in = 3·3
        let bound = 1.0 / DWC_KERNEL as f64;
        let dwc_kernel = Tensor::uniform([DWC_KERNEL, DWC_KERNEL, c], -bound, bound, rng)?;
        Self::assemble(config, [wq, wk, wv, wo], bias, dwc_kernel)
    }

    /// Zero bias tables and zero depthwise kernel around the given projections.
    pub fn with_projections(config: ModuleConfig, w: [Tensor<T>; 4]) -> Result<Self> {
        config.validate()?;
        let (h0, w0) = config.block_dims();
        let bias = (0..config.bias_tables())
            .map(|_| AgentBiasParams::zeros(config.agents, config.h, config.w, h0, w0))
            .collect::<Result<Vec<_>>>()?;
        let dwc = Tensor::zeros([DWC_KERNEL, DWC_KERNEL, config.dim])?;
        Self::assemble(config, w, bias, dwc)
    }

    fn assemble(
        config: ModuleConfig,
        [wq, wk, wv, wo]: [Tensor<T>; 4],
        bias: Vec<AgentBiasParams<T>>,
        dwc_kernel: Tensor<T>,
    ) -> Result<Self> {
        let c = config.dim;
        let zero_vec = |on: bool| -> Result<Option<Tensor<T>>> {
            on.then(|| Tensor::zeros([c])).transpose()
        };
        let s = T::one() / T::from_usize(config.head_dim()).unwrap().sqrt();
        let p = AgentModuleParams {
            config,
            wq,
            wk,
            wv,
            wo,
            bq: zero_vec(config.qkv_bias)?,
            bk: zero_vec(config.qkv_bias)?,
            bv: zero_vec(config.qkv_bias)?,
            bo: zero_vec(config.proj_bias)?,
            bias,
            dwc_kernel,
            scale1: s,
            scale2: s,
            shortcut_k: T::zero(),
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        let cfg = &self.config;
        cfg.validate()?;
        let c = cfg.dim;
        for (name, t) in [("wq", &self.wq), ("wk", &self.wk), ("wv", &self.wv), ("wo", &self.wo)] {
            if t.shape() != [c, c] {
                return Err(dim_err!("{name} has shape {:?}, expected [{c}, {c}]", t.shape()));
            }
        }
        for (name, t) in [("bq", &self.bq), ("bk", &self.bk), ("bv", &self.bv), ("bo", &self.bo)] {
            if let Some(t) = t {
                if t.shape() != [c] {
                    return Err(dim_err!("{name} has shape {:?}, expected [{c}]", t.shape()));
                }
            }
        }
        if self.bias.len() != cfg.bias_tables() {
            return Err(config_err!(
                "{} bias tables for {} heads (shared={})",
                self.bias.len(),
                cfg.heads,
                cfg.shared_bias
            ));
        }
        for b in &self.bias {
            b.validate()?;
            if (b.n, b.h, b.w) != (cfg.agents, cfg.h, cfg.w) {
                return Err(dim_err!(
                    "bias table sized for n={} {}x{}, module has n={} {}x{}",
                    b.n,
                    b.h,
                    b.w,
                    cfg.agents,
                    cfg.h,
                    cfg.w
                ));
            }
        }
        if self.dwc_kernel.shape() != [DWC_KERNEL, DWC_KERNEL, c] {
            return Err(dim_err!("dwc kernel has shape {:?}", self.dwc_kernel.shape()));
        }
        if !(self.shortcut_k >= T::zero()) {
            return Err(config_err!("shortcut factor must be >= 0, got {}", self.shortcut_k));
        }
        Ok(())
    }

    /// Every learnable tensor with its manifest name, in a fixed order.
    pub fn named_tensors(&self) -> Vec<(String, &Tensor<T>)> {
        let mut out: Vec<(String, &Tensor<T>)> = Vec::new();
        let pairs = [
            ("wq", Some(&self.wq), self.bq.as_ref(), "bq"),
            ("wk", Some(&self.wk), self.bk.as_ref(), "bk"),
            ("wv", Some(&self.wv), self.bv.as_ref(), "bv"),
            ("wo", Some(&self.wo), self.bo.as_ref(), "bo"),
        ];
        for (wn, w, b, bn) in pairs {
            out.push((String::from(wn), w.unwrap()));
            if let Some(b) = b {
                out.push((String::from(bn), b));
            }
        }
        out.push((String::from("dwc"), &self.dwc_kernel));
        for (h, table) in self.bias.iter().enumerate() {
            for (name, t) in COMPONENT_NAMES.iter().zip(table.components()) {
                out.push((format!("bias{h}.{name}"), t));
            }
        }
        out
    }

    /// Mutable views in the same order as [`named_tensors`](Self::named_tensors).
    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor<T>> {
        let mut out: Vec<&mut Tensor<T>> = Vec::new();
        out.push(&mut self.wq);
        out.extend(self.bq.as_mut());
        out.push(&mut self.wk);
        out.extend(self.bk.as_mut());
        out.push(&mut self.wv);
        out.extend(self.bv.as_mut());
        out.push(&mut self.wo);
        out.extend(self.bo.as_mut());
        out.push(&mut self.dwc_kernel);
        for table in &mut self.bias {
            out.extend(table.components_mut());
        }
        out
    }

    pub fn num_params(&self) -> usize {
        self.named_tensors().iter().map(|(_, t)| t.len()).sum()
    }

    fn table_for(&self, head: usize) -> usize {
        if self.config.shared_bias {
            0
        } else {
            head
        }
    }

    pub fn forward_cached(&self, x: &Tensor<T>, diagnostics: bool) -> Result<(ModuleOutput<T>, ModuleCache<T>)> {
        self.validate()?;
        let cfg = self.config;
        let (tokens, c) = x.dims2()?;
        if tokens != cfg.tokens() || c != cfg.dim {
            return Err(dim_err!(
                "input is {tokens}x{c}, module expects {}x{} ({}x{} grid)",
                cfg.tokens(),
                cfg.dim,
                cfg.h,
                cfg.w
            ));
        }
        let q = project(x, &self.wq, self.bq.as_ref())?;
        let k = project(x, &self.wk, self.bk.as_ref())?;
        let v = project(x, &self.wv, self.bv.as_ref())?;
        let agents = pool_agents(&q, cfg.h, cfg.w, cfg.agents)?;

        let tables = self
            .bias
            .iter()
            .map(|b| Ok((b.materialize_b1()?, b.materialize_b2()?)))
            .collect::<Result<Vec<_>>>()?;
        let (qh, kh, vh, ah) = (
            split_heads(&q, cfg.heads)?,
            split_heads(&k, cfg.heads)?,
            split_heads(&v, cfg.heads)?,
            split_heads(&agents, cfg.heads)?,
        );
        let mut heads = Vec::with_capacity(cfg.heads);
        let mut outs = Vec::with_capacity(cfg.heads);
        for (((qi, ki), vi), ai) in qh.into_iter().zip(kh).zip(vh).zip(ah) {
            let table = self.table_for(heads.len());
            let inputs = AttentionInputs::new(qi, ki, vi)?
                .with_agents(ai)?
                .with_scales(self.scale1, self.scale2)?;
            let (b1, b2) = &tables[table];
            let attn = agent_forward(&inputs, Some(b1), Some(b2), &mut ())?;
            outs.push(attn.out.clone());
            heads.push(HeadCache { inputs, attn, table });
        }
        let mut y = merge_heads(&outs)?;
        let dwc = depthwise_conv2d(&v.reshape([cfg.h, cfg.w, c])?, &self.dwc_kernel)?;
        y.add_assign(&dwc.into_reshape([tokens, c])?);
        let out = project(&y, &self.wo, self.bo.as_ref())?.ensure_finite("agent module output")?;

        let aux = diagnostics.then(|| Diagnostics {
            aggregation_entropy: heads.iter().map(|h| mean_row_entropy(&h.attn.p1)).collect(),
            broadcast_entropy: heads.iter().map(|h| mean_row_entropy(&h.attn.p2)).collect(),
            agents: agents.clone(),
        });
        let cache = ModuleCache {
            x: x.clone(),
            v,
            y,
            heads,
        };
        Ok((ModuleOutput { out, aux }, cache))
    }

    /// `O = (concat_h σ(s2·Q_hA_hᵀ + B2_h) σ(s1·A_hK_hᵀ + B1_h) V_h + DWC(V)) · W_O`
    /// with `A = pool(Q)`.
    pub fn forward(&self, x: &Tensor<T>) -> Result<ModuleOutput<T>> {
        Ok(self.forward_cached(x, false)?.0)
    }

    pub fn forward_with_diagnostics(&self, x: &Tensor<T>) -> Result<ModuleOutput<T>> {
        Ok(self.forward_cached(x, true)?.0)
    }

    /// Analytic gradients of `⟨grad_out, forward(x)⟩` with respect to the
    /// input and every parameter. Parameter gradients come back in a params
    /// struct of the same layout (its scales are meaningless).
    pub fn backward(&self, cache: &ModuleCache<T>, grad_out: &Tensor<T>) -> Result<(Tensor<T>, Self)> {
        let cfg = self.config;
        let (tokens, c) = (cfg.tokens(), cfg.dim);
        if grad_out.shape() != [tokens, c] {
            return Err(dim_err!("grad_out has shape {:?}, expected [{tokens}, {c}]", grad_out.shape()));
        }
        let dwo = matmul_at(&cache.y, grad_out)?;
        let dbo = self.bo.as_ref().map(|_| column_sums(grad_out));
        let dy = matmul_bt(grad_out, &self.wo)?;

        let (dv_img, dkernel) = depthwise_conv2d_backward(
            &cache.v.reshape([cfg.h, cfg.w, c])?,
            &self.dwc_kernel,
            &dy.reshape([cfg.h, cfg.w, c])?,
        )?;

        let (h0, w0) = (self.bias[0].h0, self.bias[0].w0);
        let mut dbias = (0..self.bias.len())
            .map(|_| AgentBiasParams::zeros(cfg.agents, cfg.h, cfg.w, h0, w0))
            .collect::<Result<Vec<_>>>()?;
        let dy_heads = split_heads(&dy, cfg.heads)?;
        let (mut dq, mut dk, mut dv, mut da) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
        for (head, g) in cache.heads.iter().zip(&dy_heads) {
            let grads = agent_backward(&head.inputs, &head.attn, g)?;
            let table = &self.bias[head.table];
            let db = table.backward(&grads.db1, &grads.db2)?;
            for (acc, part) in dbias[head.table].components_mut().into_iter().zip(db.components()) {
                acc.add_assign(part);
            }
            dq.push(grads.dq);
            dk.push(grads.dk);
            dv.push(grads.dv);
            da.push(grads.da);
        }
        let mut dq = merge_heads(&dq)?;
        let dk = merge_heads(&dk)?;
        let mut dv = merge_heads(&dv)?;
        let side = isqrt_exact(cfg.agents).unwrap();
        let da = merge_heads(&da)?.into_reshape([side, side, c])?;
        dq.add_assign(&adaptive_avg_pool2d_adjoint(&da, cfg.h, cfg.w)?.into_reshape([tokens, c])?);
        dv.add_assign(&dv_img.into_reshape([tokens, c])?);

        let x = &cache.x;
        let mut dx = matmul_bt(&dq, &self.wq)?;
        dx.add_assign(&matmul_bt(&dk, &self.wk)?);
        dx.add_assign(&matmul_bt(&dv, &self.wv)?);
        let grads = AgentModuleParams {
            config: cfg,
            wq: matmul_at(x, &dq)?,
            wk: matmul_at(x, &dk)?,
            wv: matmul_at(x, &dv)?,
            wo: dwo,
            bq: self.bq.as_ref().map(|_| column_sums(&dq)),
            bk: self.bk.as_ref().map(|_| column_sums(&dk)),
            bv: self.bv.as_ref().map(|_| column_sums(&dv)),
            bo: dbo,
            bias: dbias,
            dwc_kernel: dkernel,
            scale1: T::zero(),
            scale2: T::zero(),
            shortcut_k: T::zero(),
        };
        Ok((dx, grads))
    }

    /// Training-free agent attention on explicit per-head inputs, using this
    /// module's shortcut factor. See [`agent_attention_training_free`].
    pub fn training_free(&self, inp: &AttentionInputs<T>) -> Result<Tensor<T>> {
        agent_attention_training_free(self.shortcut_k, inp)
    }
}

/// `σ(s2·QAᵀ) σ(s1·AKᵀ) V + k·V`: agent attention without bias or depthwise
/// branch, plus an identity shortcut on the values. Pair with
/// [`AttentionInputs::with_training_free_scales`] for the sharper broadcast
/// temperature.
pub fn agent_attention_training_free<T: Scalar>(shortcut_k: T, inp: &AttentionInputs<T>) -> Result<Tensor<T>> {
    if !(shortcut_k >= T::zero()) || !shortcut_k.is_finite() {
        return Err(config_err!("shortcut factor must be finite and >= 0, got {shortcut_k}"));
    }
    let out = agent_forward(inp, None, None, &mut ())?.out;
    if shortcut_k == T::zero() {
        return Ok(out);
    }
    out.zip_map(&inp.v, |o, v| o + shortcut_k * v)
}

/// Plain multi-head softmax attention with the same projection layout.
#[derive(Debug, Clone, PartialEq)]
pub struct SoftmaxModuleParams<T> {
    pub dim: usize,
    pub heads: usize,
    pub wq: Tensor<T>,
    pub wk: Tensor<T>,
    pub wv: Tensor<T>,
    pub wo: Tensor<T>,
    pub bq: Option<Tensor<T>>,
    pub bk: Option<Tensor<T>>,
    pub bv: Option<Tensor<T>>,
    pub bo: Option<Tensor<T>>,
    pub scale: T,
}

pub struct SoftmaxModuleCache<T> {
    x: Tensor<T>,
    y: Tensor<T>,
    heads: Vec<AttentionInputs<T>>,
}

impl<T: Scalar> SoftmaxModuleParams<T> {
    pub fn init<R: Rng + ?Sized>(dim: usize, heads: usize, qkv_bias: bool, proj_bias: bool, rng: &mut R) -> Result<Self> {
        if dim == 0 || heads == 0 || !dim.is_multiple_of(heads) {
            return Err(config_err!("dim {dim} must be a positive multiple of heads {heads}"));
        }
        let mut lin = || Tensor::trunc_normal([dim, dim], 0.02, rng);
        let (wq, wk, wv, wo) = (lin()?, lin()?, lin()?, lin()?);
        let zero_vec = |on: bool| -> Result<Option<Tensor<T>>> { on.then(|| Tensor::zeros([dim])).transpose() };
        Ok(SoftmaxModuleParams {
            dim,
            heads,
            wq,
            wk,
            wv,
            wo,
            bq: zero_vec(qkv_bias)?,
            bk: zero_vec(qkv_bias)?,
            bv: zero_vec(qkv_bias)?,
            bo: zero_vec(proj_bias)?,
            scale: T::one() / T::from_usize(dim / heads).unwrap().sqrt(),
        })
    }

    pub fn named_tensors(&self) -> Vec<(String, &Tensor<T>)> {
        let mut out = Vec::new();
        for (wn, w, bn, b) in [
            ("wq", &self.wq, "bq", &self.bq),
            ("wk", &self.wk, "bk", &self.bk),
            ("wv", &self.wv, "bv", &self.bv),
            ("wo", &self.wo, "bo", &self.bo),
        ] {
            out.push((String::from(wn), w));
            if let Some(b) = b {
                out.push((String::from(bn), b));
            }
        }
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor<T>> {
        let mut out: Vec<&mut Tensor<T>> = Vec::new();
        out.push(&mut self.wq);
        out.extend(self.bq.as_mut());
        out.push(&mut self.wk);
        out.extend(self.bk.as_mut());
        out.push(&mut self.wv);
        out.extend(self.bv.as_mut());
        out.push(&mut self.wo);
        out.extend(self.bo.as_mut());
        out
    }

    pub fn forward_cached(&self, x: &Tensor<T>) -> Result<(Tensor<T>, SoftmaxModuleCache<T>)> {
        let q = split_heads(&project(x, &self.wq, self.bq.as_ref())?, self.heads)?;
        let k = split_heads(&project(x, &self.wk, self.bk.as_ref())?, self.heads)?;
        let v = split_heads(&project(x, &self.wv, self.bv.as_ref())?, self.heads)?;
        let mut heads = Vec::with_capacity(self.heads);
        let mut outs = Vec::with_capacity(self.heads);
        for ((qi, ki), vi) in q.into_iter().zip(k).zip(v) {
            let inputs = AttentionInputs::new(qi, ki, vi)?.with_scales(self.scale, self.scale)?;
            outs.push(softmax_attention(&inputs)?);
            heads.push(inputs);
        }
        let y = merge_heads(&outs)?;
        let out = project(&y, &self.wo, self.bo.as_ref())?;
        Ok((out, SoftmaxModuleCache { x: x.clone(), y, heads }))
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        Ok(self.forward_cached(x)?.0)
    }

    pub fn backward(&self, cache: &SoftmaxModuleCache<T>, grad_out: &Tensor<T>) -> Result<(Tensor<T>, Self)> {
        let dwo = matmul_at(&cache.y, grad_out)?;
        let dbo = self.bo.as_ref().map(|_| column_sums(grad_out));
        let dy = split_heads(&matmul_bt(grad_out, &self.wo)?, self.heads)?;
        let (mut dq, mut dk, mut dv) = (Vec::new(), Vec::new(), Vec::new());
        for (inputs, g) in cache.heads.iter().zip(&dy) {
            let grads = softmax_attention_backward(inputs, g)?;
            dq.push(grads.dq);
            dk.push(grads.dk);
            dv.push(grads.dv);
        }
        let (dq, dk, dv) = (merge_heads(&dq)?, merge_heads(&dk)?, merge_heads(&dv)?);
        let x = &cache.x;
        let mut dx = matmul_bt(&dq, &self.wq)?;
        dx.add_assign(&matmul_bt(&dk, &self.wk)?);
        dx.add_assign(&matmul_bt(&dv, &self.wv)?);
        let grads = SoftmaxModuleParams {
            dim: self.dim,
            heads: self.heads,
            wq: matmul_at(x, &dq)?,
            wk: matmul_at(x, &dk)?,
            wv: matmul_at(x, &dv)?,
            wo: dwo,
            bq: self.bq.as_ref().map(|_| column_sums(&dq)),
            bk: self.bk.as_ref().map(|_| column_sums(&dk)),
            bv: self.bv.as_ref().map(|_| column_sums(&dv)),
            bo: dbo,
            scale: T::zero(),
        };
        Ok((dx, grads))
    }
}
