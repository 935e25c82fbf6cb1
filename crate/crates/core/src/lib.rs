//! Hybrid convolution/Transformer vision backbones on a small CPU tensor
//! engine, with an analytical cost model and latency-density metrics.
//!
//! * [`tensor`] and [`nn`]: dense tensors, primitive ops and their gradients
//! * [`blocks`]: BottleNeck, Transformer and the mixed blocks
//! * [`arch`]: architecture specs, presets, instantiation and weights files
//! * [`analysis`]: parameter and FLOP counts, density metrics, reports
//! * [`bench`]: latency measurement and latency CSV files

pub mod analysis;
pub mod arch;
pub mod bench;
pub mod blocks;
pub mod error;
pub mod nn;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::{DType, MacCounter, Rng, Scalar, Tensor};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../README.md")]
    mod readme {}
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/tensors.md")]
    mod tensors {}
    #[doc = include_str!("../../../book/src/blocks.md")]
    mod blocks {}
    #[doc = include_str!("../../../book/src/architectures.md")]
    mod architectures {}
    #[doc = include_str!("../../../book/src/cost-model.md")]
    mod cost_model {}
    #[doc = include_str!("../../../book/src/benchmarking.md")]
    mod benchmarking {}
    #[doc = include_str!("../../../book/src/gradcheck.md")]
    mod gradcheck {}
}
