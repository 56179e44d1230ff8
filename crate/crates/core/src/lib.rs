//! Agent attention kernels and the machinery to check them.
//!
//! Agent attention routes every query through a small set of `n` agent
//! tokens: the agents first aggregate the values with a softmax attention
//! over the keys, then broadcast the result back to the queries with a second
//! softmax attention. The composition is a linear attention with softmax
//! feature maps, so its cost is `O(N·n·d)` instead of `O(N²·d)`.
//!
//! The crate is `no_std` (it needs `alloc`). Enable the `std` feature for the
//! platform `libm` and the `serde` feature for (de)serializable presets and
//! reports.

#![no_std]
#![deny(rust_2018_idioms)]
// `!(x > 0)` is used on purpose so NaN fails the check
#![allow(clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;
#[cfg(feature = "std")]
extern crate std;

mod error;
mod scalar;
mod tensor;

pub mod attention;
pub mod bias;
pub mod flops;
pub mod layers;
pub mod model;
pub mod module;
pub mod ops;
pub mod verify;

pub use attention::{AttentionInputs, FeatureMap};
pub use bias::AgentBiasParams;
pub use error::{Error, Result};
pub use model::{Model, ModelPreset, ParamReport};
pub use module::{AgentModuleParams, ModuleConfig, ModuleOutput};


pub use scalar::{DType, Scalar};
pub use tensor::Tensor;
