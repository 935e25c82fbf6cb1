//! Layers with forward and analytic backward passes, plus the gradient-check
//! harness that verifies them.

mod activation;
mod attention;
mod conv;
pub mod gradcheck;
mod layout;
mod linear;
mod module;
mod norm;
mod pool;
mod probe;
mod softmax;

pub use activation::{gelu_scalar, Activation};
pub use attention::{AttentionCache, SpatialReductionAttention, HEAD_DIM};
pub(crate) use conv::conv_output_hw;
pub use conv::Conv2d;
pub use gradcheck::{gradcheck, GradcheckConfig, GradcheckReport};
pub use layout::{channel_concat, channel_split, nchw_to_tokens, tokens_to_nchw};
pub use linear::Linear;
pub(crate) use module::composite_params;
pub use module::{join, Differentiable, Grads, ParamKind, Params};
pub use norm::{BatchNorm2d, LayerNorm, NormParams, DEFAULT_EPS};
pub use pool::{avgpool2d, avgpool2d_backward, global_avgpool, maxpool2d, maxpool2d_backward};
pub use softmax::{softmax, softmax_backward};
