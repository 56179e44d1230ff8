//! A small Agent-DeiT backbone: patch embedding, pre-norm transformer blocks
//! whose token mixer is either agent attention or plain softmax attention,
//! a final norm, token mean-pooling and a linear classifier.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::bias::DEFAULT_BLOCK;
use crate::error::{config_err, dim_err};
use crate::layers::{LayerNorm, LayerNormCache, Linear, Mlp, MlpCache};
use crate::module::{
    AgentModuleParams, ModuleCache, ModuleConfig, SoftmaxModuleCache, SoftmaxModuleParams, DWC_KERNEL,
};
use crate::{Result, Scalar, Tensor};

/// Architecture tag of every preset this crate can assemble.
pub const DEIT_ARCHITECTURE: &str = "deit";

#[cfg(feature = "serde")]
mod defaults {
    pub fn architecture() -> alloc::string::String {
        alloc::string::String::from(super::DEIT_ARCHITECTURE)
    }
    pub fn mlp_ratio() -> f64 {
        4.0
    }
    pub fn num_classes() -> usize {
        1000
    }
    pub fn in_chans() -> usize {
        3
    }
    pub fn bias_block() -> usize {
        super::DEFAULT_BLOCK
    }
}

/// Shape description of a backbone. `agent_n[i]` is the agent count of
/// block `i`, or `None` for a plain softmax attention block.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ModelPreset {
    pub name: String,
    #[cfg_attr(feature = "serde", serde(default = "defaults::architecture"))]
    pub architecture: String,
    pub img_size: usize,
    pub patch_size: usize,
    pub depth: usize,
    pub dim: usize,
    pub heads: usize,
    pub agent_n: Vec<Option<usize>>,
    #[cfg_attr(feature = "serde", serde(default = "defaults::mlp_ratio"))]
    pub mlp_ratio: f64,
    pub qkv_bias: bool,
    #[cfg_attr(feature = "serde", serde(default = "defaults::num_classes"))]
    pub num_classes: usize,
    #[cfg_attr(feature = "serde", serde(default = "defaults::in_chans"))]
    pub in_chans: usize,
    #[cfg_attr(feature = "serde", serde(default))]
    pub abs_pos_embed: bool,
    #[cfg_attr(feature = "serde", serde(default = "defaults::bias_block"))]
    pub bias_block: usize,
    #[cfg_attr(feature = "serde", serde(default))]
    pub shared_bias: bool,
}

impl ModelPreset {
    fn deit(name: &str, dim: usize, heads: usize, agent_n: Vec<Option<usize>>) -> Self {
        ModelPreset {
            name: name.to_string(),
            architecture: DEIT_ARCHITECTURE.to_string(),
            img_size: 224,
            patch_size: 16,
            depth: agent_n.len(),
            dim,
            heads,
            agent_n,
            mlp_ratio: 4.0,
            qkv_bias: true,
            num_classes: 1000,
            in_chans: 3,
            abs_pos_embed: false,
            bias_block: DEFAULT_BLOCK,
            shared_bias: false,
        }
    }

    pub fn agent_deit_t() -> Self {
        Self::deit("agent-deit-t", 192, 3, vec![Some(49); 12])
    }

    pub fn agent_deit_s() -> Self {
        Self::deit("agent-deit-s", 384, 6, vec![Some(49); 12])
    }

    /// Four agent blocks followed by eight plain softmax blocks.
    pub fn agent_deit_b() -> Self {
        let mut blocks = vec![Some(81); 4];
        blocks.extend([None; 8]);
        Self::deit("agent-deit-b", 768, 12, blocks)
    }

    /// Every block uses agent attention with `n` agents.
    pub fn uniform(name: &str, img_size: usize, patch_size: usize, depth: usize, dim: usize, heads: usize, n: usize) -> Self {
        ModelPreset {
            img_size,
            patch_size,
            ..Self::deit(name, dim, heads, vec![Some(n); depth])
        }
    }

    pub fn grid(&self) -> usize {
        self.img_size / self.patch_size
    }

    pub fn tokens(&self) -> usize {
        self.grid() * self.grid()
    }

    pub fn hidden_dim(&self) -> usize {
        libm::round(self.dim as f64 * self.mlp_ratio) as usize
    }

    pub fn patch_features(&self) -> usize {
        self.patch_size * self.patch_size * self.in_chans
    }

    pub fn validate(&self) -> Result<()> {
        if self.architecture != DEIT_ARCHITECTURE {
            return Err(config_err!(
                "preset '{}' describes a '{}' backbone, which is documented but not assembled",
                self.name,
                self.architecture
            ));
        }
        if self.patch_size == 0 || self.img_size == 0 || !self.img_size.is_multiple_of(self.patch_size) {
            return Err(config_err!("img_size {} is not a multiple of patch_size {}", self.img_size, self.patch_size));
        }
        if self.dim == 0 || self.heads == 0 || !self.dim.is_multiple_of(self.heads) {
            return Err(config_err!("dim {} is not divisible by heads {}", self.dim, self.heads));
        }
        if self.agent_n.len() != self.depth {
            return Err(config_err!("{} agent entries for depth {}", self.agent_n.len(), self.depth));
        }
        if !(self.mlp_ratio > 0.0) || !self.mlp_ratio.is_finite() || self.hidden_dim() == 0 {
            return Err(config_err!("mlp_ratio {} must be positive", self.mlp_ratio));
        }
        if self.num_classes == 0 || self.in_chans == 0 || self.bias_block == 0 {
            return Err(config_err!("num_classes, in_chans and bias_block must be positive"));
        }
        for n in self.agent_n.iter().flatten() {
            self.module_config(*n).validate()?;
        }
        Ok(())
    }

    pub fn module_config(&self, n: usize) -> ModuleConfig {
        let g = self.grid();
        ModuleConfig {
            qkv_bias: self.qkv_bias,
            proj_bias: true,
            shared_bias: self.shared_bias,
            bias_block: self.bias_block,
            ..ModuleConfig::new(self.dim, self.heads, n, g, g)
        }
    }
}

/// Itemized count of learnable scalars.
#[derive(Debug, Clone, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ParamReport {
    pub components: Vec<(String, usize)>,
    pub total: usize,
}

/// Categories in report order.
pub const PARAM_CATEGORIES: [&str; 8] =
    ["patch_embed", "pos_embed", "norms", "attention_proj", "agent_bias", "dwc", "mlp", "head"];

impl ParamReport {
    fn from_counts(counts: [usize; 8]) -> Self {
        ParamReport {
            components: PARAM_CATEGORIES.iter().map(|s| s.to_string()).zip(counts).collect(),
            total: counts.iter().sum(),
        }
    }

    pub fn get(&self, category: &str) -> Option<usize> {
        self.components.iter().find(|(c, _)| c == category).map(|&(_, v)| v)
    }

    /// Closed-form count from the preset alone, without allocating weights.
    pub fn for_preset(p: &ModelPreset) -> Result<Self> {
        p.validate()?;
        let (c, g, hidden) = (p.dim, p.grid(), p.hidden_dim());
        let mut k = [0usize; 8];
        k[0] = p.patch_features() * c + c;
        k[1] = if p.abs_pos_embed { p.tokens() * c } else { 0 };
        k[2] = 2 * c * (2 * p.depth + 1);
        let qkv_b = if p.qkv_bias { 3 * c } else { 0 };
        k[3] = p.depth * (4 * c * c + qkv_b + c);
        for n in p.agent_n.iter().flatten() {
            let (h0, w0) = (p.bias_block.min(g), p.bias_block.min(g));
            let tables = if p.shared_bias { 1 } else { p.heads };
            k[4] += tables * 2 * n * (g + g + h0 * w0);
            k[5] += DWC_KERNEL * DWC_KERNEL * c;
        }
        k[6] = p.depth * (2 * c * hidden + hidden + c);
        k[7] = c * p.num_classes + p.num_classes;
        Ok(Self::from_counts(k))
    }
}

/// Token mixer of one block.
#[derive(Debug, Clone, PartialEq)]
pub enum Mixer<T> {
    Agent(AgentModuleParams<T>),
    Softmax(SoftmaxModuleParams<T>),
}

enum MixerCache<T> {
    Agent(ModuleCache<T>),
    Softmax(SoftmaxModuleCache<T>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Block<T> {
    pub norm1: LayerNorm<T>,
    pub mixer: Mixer<T>,
    pub norm2: LayerNorm<T>,
    pub mlp: Mlp<T>,
}

struct BlockCache<T> {
    ln1: LayerNormCache<T>,
    mix: MixerCache<T>,
    ln2: LayerNormCache<T>,
    mlp: MlpCache<T>,
}

impl<T: Scalar> Block<T> {
    fn forward_cached(&self, x: &Tensor<T>) -> Result<(Tensor<T>, BlockCache<T>)> {
        let (y1, ln1) = self.norm1.forward_cached(x)?;
        let (a, mix) = match &self.mixer {
            Mixer::Agent(m) => {
                let (o, c) = m.forward_cached(&y1, false)?;
                (o.out, MixerCache::Agent(c))
            }
            Mixer::Softmax(m) => {
                let (o, c) = m.forward_cached(&y1)?;
                (o, MixerCache::Softmax(c))
            }
        };
        let x1 = x.add(&a)?;
        let (y2, ln2) = self.norm2.forward_cached(&x1)?;
        let (m, mlp) = self.mlp.forward_cached(&y2)?;
        Ok((x1.add(&m)?, BlockCache { ln1, mix, ln2, mlp }))
    }

    fn backward(&self, cache: &BlockCache<T>, grad: &Tensor<T>) -> Result<(Tensor<T>, Self)> {
        let (dy2, mlp) = self.mlp.backward(&cache.mlp, grad)?;
        let (dx1_ln, norm2) = self.norm2.backward(&cache.ln2, &dy2)?;
        let dx1 = grad.add(&dx1_ln)?;
        let (dy1, mixer) = match (&self.mixer, &cache.mix) {
            (Mixer::Agent(m), MixerCache::Agent(c)) => {
                let (d, g) = m.backward(c, &dx1)?;
                (d, Mixer::Agent(g))
            }
            (Mixer::Softmax(m), MixerCache::Softmax(c)) => {
                let (d, g) = m.backward(c, &dx1)?;
                (d, Mixer::Softmax(g))
            }
            _ => unreachable!("cache built by the same block"),
        };
        let (dx0_ln, norm1) = self.norm1.backward(&cache.ln1, &dy1)?;
        Ok((dx1.add(&dx0_ln)?, Block { norm1, mixer, norm2, mlp }))
    }
}

/// An assembled backbone. Immutable after [`Model::build`].
#[derive(Debug, Clone, PartialEq)]
pub struct Model<T> {
    pub preset: ModelPreset,
    pub patch_embed: Linear<T>,
    pub pos_embed: Option<Tensor<T>>,
    pub blocks: Vec<Block<T>>,
    pub norm: LayerNorm<T>,
    pub head: Linear<T>,
}

struct ModelCache<T> {
    patches: Tensor<T>,
    blocks: Vec<BlockCache<T>>,
    norm: LayerNormCache<T>,
    pooled: Tensor<T>,
}

/// Cut an `img×img×C` image into row-major patches, each flattened in
/// `(row, col, channel)` order.
pub fn patchify<T: Scalar>(image: &Tensor<T>, patch: usize) -> Result<Tensor<T>> {
    let (h, w, c) = image.dims3()?;
    if patch == 0 || h % patch != 0 || w % patch != 0 {
        return Err(dim_err!("{h}x{w} image does not tile into {patch}x{patch} patches"));
    }
    let (gh, gw) = (h / patch, w / patch);
    let feat = patch * patch * c;
    let src = image.data();
    let mut out = Vec::with_capacity(h * w * c);
    for gy in 0..gh {
        for gx in 0..gw {
            for py in 0..patch {
                let start = ((gy * patch + py) * w + gx * patch) * c;
                out.extend_from_slice(&src[start..start + patch * c]);
            }
        }
    }
    Ok(Tensor::from_parts(vec![gh * gw, feat], out))
}

impl<T: Scalar> Model<T> {
    /// Deterministic initialization from `seed`.
    pub fn build(preset: &ModelPreset, seed: u64) -> Result<Self> {
        preset.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let c = preset.dim;
        let patch_embed = Linear::init(preset.patch_features(), c, true, &mut rng)?;
        let pos_embed = if preset.abs_pos_embed {
            Some(Tensor::trunc_normal([preset.tokens(), c], 0.02, &mut rng)?)
        } else {
            None
        };
        let mut blocks = Vec::with_capacity(preset.depth);
        for n in &preset.agent_n {
            let mixer = match n {
                Some(n) => Mixer::Agent(AgentModuleParams::init(preset.module_config(*n), &mut rng)?),
                None => Mixer::Softmax(SoftmaxModuleParams::init(c, preset.heads, preset.qkv_bias, true, &mut rng)?),
            };
            blocks.push(Block {
                norm1: LayerNorm::new(c)?,
                mixer,
                norm2: LayerNorm::new(c)?,
                mlp: Mlp::init(c, preset.hidden_dim(), &mut rng)?,
            });
        }
        Ok(Model {
            preset: preset.clone(),
            patch_embed,
            pos_embed,
            blocks,
            norm: LayerNorm::new(c)?,
            head: Linear::init(c, preset.num_classes, true, &mut rng)?,
        })
    }

    /// Every learnable tensor with a dotted name and its report category.
    pub fn named_tensors(&self) -> Vec<(String, &'static str, &Tensor<T>)> {
        type Named<'a, T> = Vec<(String, &'static str, &'a Tensor<T>)>;
        fn linear<'a, T>(out: &mut Named<'a, T>, prefix: &str, cat: &'static str, l: &'a Linear<T>) {
            out.push((format!("{prefix}.weight"), cat, &l.weight));
            if let Some(b) = &l.bias {
                out.push((format!("{prefix}.bias"), cat, b));
            }
        }
        fn norm<'a, T>(out: &mut Named<'a, T>, prefix: &str, ln: &'a LayerNorm<T>) {
            out.push((format!("{prefix}.gamma"), "norms", &ln.gamma));
            out.push((format!("{prefix}.beta"), "norms", &ln.beta));
        }
        let mut out = Vec::new();
        linear(&mut out, "patch_embed", "patch_embed", &self.patch_embed);
        if let Some(p) = &self.pos_embed {
            out.push((String::from("pos_embed"), "pos_embed", p));
        }
        for (i, b) in self.blocks.iter().enumerate() {
            norm(&mut out, &format!("blocks.{i}.norm1"), &b.norm1);
            let named = match &b.mixer {
                Mixer::Agent(m) => m.named_tensors(),
                Mixer::Softmax(m) => m.named_tensors(),
            };
            for (name, t) in named {
                let cat = if name.starts_with("bias") {
                    "agent_bias"
                } else if name == "dwc" {
                    "dwc"
                } else {
                    "attention_proj"
                };
                out.push((format!("blocks.{i}.attn.{name}"), cat, t));
            }
            norm(&mut out, &format!("blocks.{i}.norm2"), &b.norm2);
            linear(&mut out, &format!("blocks.{i}.mlp.fc1"), "mlp", &b.mlp.fc1);
            linear(&mut out, &format!("blocks.{i}.mlp.fc2"), "mlp", &b.mlp.fc2);
        }
        norm(&mut out, "norm", &self.norm);
        linear(&mut out, "head", "head", &self.head);
        out
    }

    /// Mutable views in the same order as [`named_tensors`](Self::named_tensors).
    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor<T>> {
        fn linear<'a, T>(out: &mut Vec<&'a mut Tensor<T>>, l: &'a mut Linear<T>) {
            out.push(&mut l.weight);
            out.extend(l.bias.as_mut());
        }
        fn norm<'a, T>(out: &mut Vec<&'a mut Tensor<T>>, ln: &'a mut LayerNorm<T>) {
            out.push(&mut ln.gamma);
            out.push(&mut ln.beta);
        }
        let mut out = Vec::new();
        linear(&mut out, &mut self.patch_embed);
        out.extend(self.pos_embed.as_mut());
        for b in &mut self.blocks {
            norm(&mut out, &mut b.norm1);
            match &mut b.mixer {
                Mixer::Agent(m) => out.extend(m.tensors_mut()),
                Mixer::Softmax(m) => out.extend(m.tensors_mut()),
            }
            norm(&mut out, &mut b.norm2);
            linear(&mut out, &mut b.mlp.fc1);
            linear(&mut out, &mut b.mlp.fc2);
        }
        norm(&mut out, &mut self.norm);
        linear(&mut out, &mut self.head);
        out
    }

    /// Count learnable scalars of the allocated weights.
    pub fn count_params(&self) -> ParamReport {
        let mut counts = [0usize; 8];
        for (_, cat, t) in self.named_tensors() {
            let idx = PARAM_CATEGORIES.iter().position(|c| *c == cat).unwrap();
            counts[idx] += t.len();
        }
        ParamReport::from_counts(counts)
    }

    fn forward_cached(&self, image: &Tensor<T>) -> Result<(Tensor<T>, ModelCache<T>)> {
        let p = &self.preset;
        if image.shape() != [p.img_size, p.img_size, p.in_chans] {
            return Err(dim_err!(
                "image has shape {:?}, preset '{}' expects [{}, {}, {}]",
                image.shape(),
                p.name,
                p.img_size,
                p.img_size,
                p.in_chans
            ));
        }
        let patches = patchify(image, p.patch_size)?;
        let mut x = self.patch_embed.forward(&patches)?;
        if let Some(pos) = &self.pos_embed {
            x.add_assign(pos);
        }
        let mut blocks = Vec::with_capacity(self.blocks.len());
        for b in &self.blocks {
            let (y, c) = b.forward_cached(&x)?;
            x = y;
            blocks.push(c);
        }
        let (z, norm) = self.norm.forward_cached(&x)?;
        let inv = T::one() / T::from_usize(z.rows()).unwrap();
        let pooled = crate::ops::column_sums(&z).scale(inv).into_reshape([1, p.dim])?;
        let logits = self.head.forward(&pooled)?.into_reshape([p.num_classes])?;
        let logits = logits.ensure_finite("logits")?;
        Ok((logits, ModelCache { patches, blocks, norm, pooled }))
    }

    /// Class scores for one `img×img×C` image.
    pub fn forward_logits(&self, image: &Tensor<T>) -> Result<Tensor<T>> {
        Ok(self.forward_cached(image)?.0)
    }

    /// Gradients of `⟨dlogits, forward_logits(image)⟩` for every weight,
    /// returned in a model of the same layout.
    pub fn backward(&self, image: &Tensor<T>, dlogits: &Tensor<T>) -> Result<Self> {
        let p = &self.preset;
        if dlogits.shape() != [p.num_classes] {
            return Err(dim_err!("logit gradient has shape {:?}", dlogits.shape()));
        }
        let (_, cache) = self.forward_cached(image)?;
        let g = dlogits.reshape([1, p.num_classes])?;
        let (dpooled, head) = self.head.backward(&cache.pooled, &g)?;
        let tokens = p.tokens();
        let inv = T::one() / T::from_usize(tokens).unwrap();
        let row = dpooled.scale(inv);
        let dz = Tensor::from_fn([tokens, p.dim], |i| row.data()[i % p.dim])?;
        let (mut dx, norm) = self.norm.backward(&cache.norm, &dz)?;
        let mut blocks = Vec::with_capacity(self.blocks.len());
        for (b, c) in self.blocks.iter().zip(&cache.blocks).rev() {
            let (d, g) = b.backward(c, &dx)?;
            dx = d;
            blocks.push(g);
        }
        blocks.reverse();
        let pos_embed = self.pos_embed.as_ref().map(|_| dx.clone());
        let (_, patch_embed) = self.patch_embed.backward(&cache.patches, &dx)?;
        Ok(Model {
            preset: p.clone(),
            patch_embed,
            pos_embed,
            blocks,
            norm,
            head,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn desk(depth: usize) -> ModelPreset {
        ModelPreset {
            num_classes: 10,
            ..ModelPreset::uniform("desk", 16, 4, depth, 8, 2, 4)
        }
    }

    #[test]
    fn deit_tiny_has_twelve_agent_blocks_on_a_14_grid() {
        let p = ModelPreset::agent_deit_t();
        p.validate().unwrap();
        assert_eq!(p.grid(), 14);
        assert_eq!(p.depth, 12);
        assert!(p.agent_n.iter().all(|n| *n == Some(49)));
        let b = ModelPreset::agent_deit_b();
        b.validate().unwrap();
        assert_eq!(b.agent_n.iter().flatten().count(), 4);
    }

    #[test]
    fn analytic_report_matches_hand_arithmetic() {
        let p = ModelPreset::agent_deit_t();
        let r = ParamReport::for_preset(&p).unwrap();
        assert_eq!(r.get("agent_bias"), Some(12 * 3 * 2 * 49 * (14 + 14 + 49)));
        assert_eq!(r.get("dwc"), Some(12 * 9 * 192));
        assert_eq!(r.total, r.components.iter().map(|c| c.1).sum::<usize>());
        assert_eq!(r.total, 5_971_792);
    }

    #[test]
    fn depth_zero_hand_count() {
        let p = ModelPreset {
            num_classes: 1000,
            ..ModelPreset::uniform("stem", 32, 16, 0, 8, 1, 1)
        };
        let want = 16 * 16 * 3 * 8 + 8 + 8 * 1000 + 1000 + 2 * 8;
        assert_eq!(ParamReport::for_preset(&p).unwrap().total, want);
        let m = Model::<f64>::build(&p, 0).unwrap();
        assert!(m.blocks.is_empty());
        assert_eq!(m.count_params().total, want);
    }

    #[test]
    fn built_model_matches_analytic_count() {
        for p in [desk(2), ModelPreset { qkv_bias: false, abs_pos_embed: true, ..desk(3) }] {
            let m = Model::<f32>::build(&p, 3).unwrap();
            assert_eq!(m.count_params(), ParamReport::for_preset(&p).unwrap());
        }
    }

    #[test]
    fn additivity_of_depth() {
        let one = ParamReport::for_preset(&desk(1)).unwrap().total;
        let two = ParamReport::for_preset(&desk(2)).unwrap().total;
        let four = ParamReport::for_preset(&desk(4)).unwrap().total;
        assert_eq!(four - two, 2 * (two - one));
    }

    #[test]
    fn determinism_and_seed_sensitivity() {
        let p = desk(2);
        let a = Model::<f64>::build(&p, 11).unwrap();
        let b = Model::<f64>::build(&p, 11).unwrap();
        assert_eq!(a, b);
        let c = Model::<f64>::build(&p, 12).unwrap();
        let img = Tensor::from_fn([16, 16, 3], |i| ((i % 7) as f64 - 3.0) / 3.0).unwrap();
        let la = a.forward_logits(&img).unwrap();
        assert!(la.bit_eq(&b.forward_logits(&img).unwrap()));
        assert!(!la.bit_eq(&c.forward_logits(&img).unwrap()));
        assert_eq!(a.count_params(), c.count_params());
    }

    #[test]
    fn mutable_views_follow_named_order() {
        let mut p = desk(2);
        p.agent_n[1] = None;
        p.abs_pos_embed = true;
        let mut m = Model::<f32>::build(&p, 5).unwrap();
        let shapes: Vec<Vec<usize>> = m.named_tensors().iter().map(|(_, _, t)| t.shape().to_vec()).collect();
        let shapes_mut: Vec<Vec<usize>> = m.tensors_mut().iter().map(|t| t.shape().to_vec()).collect();
        assert_eq!(shapes, shapes_mut);
    }

    #[test]
    fn zero_image_gives_finite_logits_and_size_errors() {
        let m = Model::<f32>::build(&desk(1), 0).unwrap();
        let l = m.forward_logits(&Tensor::zeros([16, 16, 3]).unwrap()).unwrap();
        assert_eq!(l.shape(), &[10]);
        assert!(l.data().iter().all(|v| v.is_finite()));
        assert!(matches!(m.forward_logits(&Tensor::zeros([8, 8, 3]).unwrap()), Err(crate::Error::Dimension(_))));
    }

    #[test]
    fn invalid_presets_are_config_errors() {
        let bad = [
            ModelPreset { img_size: 225, ..ModelPreset::agent_deit_t() },
            ModelPreset { heads: 5, ..ModelPreset::agent_deit_t() },
            ModelPreset { depth: 3, ..ModelPreset::agent_deit_t() },
            ModelPreset { architecture: "swin".into(), ..ModelPreset::agent_deit_t() },
            ModelPreset { agent_n: vec![Some(50); 12], ..ModelPreset::agent_deit_t() },
        ];
        for p in bad {
            assert!(matches!(Model::<f32>::build(&p, 0), Err(crate::Error::Config(_))), "{p:?}");
        }
    }

    #[test]
    fn patchify_orders_rows_then_channels() {
        let img = Tensor::<f64>::from_fn([4, 4, 1], |i| i as f64).unwrap();
        let p = patchify(&img, 2).unwrap();
        assert_eq!(p.shape(), &[4, 4]);
        assert_eq!(p.row(0), &[0.0, 1.0, 4.0, 5.0]);
        assert_eq!(p.row(3), &[10.0, 11.0, 14.0, 15.0]);
    }
}
