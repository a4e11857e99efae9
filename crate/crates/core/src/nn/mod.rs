//! Layer kernels. Every forward function here has a matching `_backward`
//! used by the tape in [`crate::autodiff`].

pub mod activation;
pub mod attention;
pub mod conv;
pub mod norm;
pub mod pool;

pub use activation::{gelu, relu, sigmoid};
pub use attention::{channel_attention, spatial_attention};
pub use conv::{conv2d, transpose_conv2d, Conv2dSpec};
pub use norm::{batchnorm2d, BatchNormState, BatchStats, Mode};
pub use pool::maxpool2d;
