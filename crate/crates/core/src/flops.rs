//! Closed-form multiply-accumulate accounting.
//!
//! A MAC is one multiply-add in a matrix product or convolution. Softmax
//! exponentials are counted separately and never folded into MACs;
//! normalization, pooling and elementwise work are not counted at all.

use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use crate::error::config_err;
use crate::model::ModelPreset;
use crate::module::DWC_KERNEL;
use crate::{Error, Result};

/// Attention kernels with a MAC formula.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum Kernel {
    Softmax,
    Agent,
}

impl Kernel {
    pub const ALL: [Kernel; 2] = [Kernel::Softmax, Kernel::Agent];

    pub fn name(self) -> &'static str {
        match self {
            Kernel::Softmax => "softmax",
            Kernel::Agent => "agent",
        }
    }
}

impl fmt::Display for Kernel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Kernel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "softmax" | "softmax_attention" => Ok(Kernel::Softmax),
            "agent" | "agent_attention" | "agent_attention_pure" => Ok(Kernel::Agent),
            other => Err(config_err!("unknown kernel '{other}' (expected softmax or agent)")),
        }
    }
}

/// Cost of one attention kernel call.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct FlopModel {
    pub kernel: Kernel,
    pub tokens: u64,
    pub agents: u64,
    pub head_dim: u64,
    pub heads: u64,
    pub mac_count: u64,
    pub exp_count: u64,
}

impl FlopModel {
    /// `softmax`: `2·N²·d·heads` MACs, `N²·heads` exponentials.
    /// `agent`: `4·N·n·d·heads` MACs, `2·N·n·heads` exponentials.
    pub fn new(kernel: Kernel, tokens: usize, agents: usize, head_dim: usize, heads: usize) -> Result<Self> {
        if tokens == 0 || head_dim == 0 || heads == 0 || (kernel == Kernel::Agent && agents == 0) {
            return Err(config_err!(
                "sizes must be positive (N={tokens}, n={agents}, d={head_dim}, heads={heads})"
            ));
        }
        let (big_n, n, d, h) = (tokens as u64, agents as u64, head_dim as u64, heads as u64);
        let (mac_count, exp_count) = match kernel {
            Kernel::Softmax => (2 * big_n * big_n * d * h, big_n * big_n * h),
            Kernel::Agent => (4 * big_n * n * d * h, 2 * big_n * n * h),
        };
        Ok(FlopModel {
            kernel,
            tokens: big_n,
            agents: n,
            head_dim: d,
            heads: h,
            mac_count,
            exp_count,
        })
    }
}

/// MAC count of one kernel call; see [`FlopModel::new`].
pub fn flop_count(kernel: &str, tokens: usize, agents: usize, head_dim: usize, heads: usize) -> Result<u64> {
    Ok(FlopModel::new(kernel.parse()?, tokens, agents, head_dim, heads)?.mac_count)
}

/// Whole-backbone forward cost for one image.
#[derive(Debug, Clone, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ModelFlops {
    /// MACs per category, in [`FLOP_CATEGORIES`] order.
    pub components: Vec<(String, u64)>,
    /// Total multiply-accumulates, the usual unit of backbone "FLOPs" figures.
    pub macs: u64,
    /// Arithmetic operations counting multiply and add separately, `2·macs`.
    pub flops: u64,
    /// Softmax exponentials, reported beside the MAC total.
    pub exps: u64,
}

pub const FLOP_CATEGORIES: [&str; 6] = ["patch_embed", "attention_proj", "attention", "dwc", "mlp", "head"];

/// Sum MACs over patch embedding, every block (projections, attention
/// kernel, depthwise branch, MLP) and the classifier.
pub fn flops_model_forward(preset: &ModelPreset) -> Result<ModelFlops> {
    preset.validate()?;
    let big_n = preset.tokens();
    let c = preset.dim as u64;
    let tokens = big_n as u64;
    let d = preset.dim / preset.heads;
    let mut k = [0u64; 6];
    let mut exps = 0u64;
    k[0] = tokens * preset.patch_features() as u64 * c;
    for agents in &preset.agent_n {
        k[1] += 4 * tokens * c * c;
        let fm = match agents {
            Some(n) => {
                k[3] += tokens * (DWC_KERNEL * DWC_KERNEL) as u64 * c;
                FlopModel::new(Kernel::Agent, big_n, *n, d, preset.heads)?
            }
            None => FlopModel::new(Kernel::Softmax, big_n, 0, d, preset.heads)?,
        };
        k[2] += fm.mac_count;
        exps += fm.exp_count;
        k[4] += 2 * tokens * c * preset.hidden_dim() as u64;
    }
    k[5] = c * preset.num_classes as u64;
    let macs = k.iter().sum::<u64>();
    Ok(ModelFlops {
        components: FLOP_CATEGORIES.iter().map(|s| s.to_string()).zip(k).collect(),
        macs,
        flops: 2 * macs,
        exps,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_counts() {
        assert_eq!(flop_count("agent", 1024, 49, 64, 1).unwrap(), 12_845_056);
        assert_eq!(flop_count("softmax", 1024, 49, 64, 1).unwrap(), 134_217_728);
        for &(big_n, d, h) in &[(16usize, 8usize, 1usize), (64, 32, 3), (100, 7, 2)] {
            let soft = flop_count("softmax", big_n, 0, d, h).unwrap();
            assert_eq!(flop_count("agent", big_n, big_n, d, h).unwrap(), 2 * soft);
        }
    }

    #[test]
    fn errors() {
        assert!(matches!(flop_count("flash", 4, 4, 4, 1), Err(Error::Config(_))));
        assert!(matches!(flop_count("agent", 4, 0, 4, 1), Err(Error::Config(_))));
        assert!(matches!(flop_count("softmax", 0, 1, 4, 1), Err(Error::Config(_))));
    }

    #[test]
    fn depth_zero_is_embed_plus_head() {
        let p = ModelPreset::uniform("stem", 32, 16, 0, 8, 1, 1);
        let f = flops_model_forward(&p).unwrap();
        assert_eq!(f.macs, 4 * 768 * 8 + 8 * 1000);
        assert_eq!(f.flops, 2 * f.macs);
        assert_eq!(f.exps, 0);
    }

    #[test]
    fn block_contribution_is_additive() {
        let mk = |depth| flops_model_forward(&ModelPreset::uniform("x", 64, 8, depth, 16, 2, 16)).unwrap().macs;
        let (d0, d3, d6) = (mk(0), mk(3), mk(6));
        assert_eq!(d6 - d0, 2 * (d3 - d0));
    }

    #[test]
    fn deit_tiny_breakdown() {
        let f = flops_model_forward(&ModelPreset::agent_deit_t()).unwrap();
        let (n, c) = (196u64, 192u64);
        assert_eq!(f.components[0].1, n * 768 * c);
        assert_eq!(f.components[2].1, 12 * 4 * n * 49 * c);
        assert_eq!(f.components[3].1, 12 * 9 * n * c);
        assert_eq!(f.components.iter().map(|x| x.1).sum::<u64>(), f.macs);
        let mixed = ModelPreset::agent_deit_b();
        let fb = flops_model_forward(&mixed).unwrap();
        let want_attn = 4 * 4 * 196 * 81 * 768 + 8 * 2 * 196 * 196 * 768;
        assert_eq!(fb.components[2].1, want_attn);
        assert_eq!(fb.exps, 4 * 2 * 196 * 81 * 12 + 8 * 196 * 196 * 12);
    }
}
