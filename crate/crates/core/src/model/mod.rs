//! The encoder-decoder network, its building blocks, cost accounting and
//! checkpoint format.

pub mod accounting;
pub mod block;
pub mod checkpoint;
pub mod config;
mod layers;
pub mod network;

pub use accounting::{flops_count, param_count, Accounting, LayerCost};
pub use block::{ResAttnBlock, ResAttnBlockConfig};
pub use checkpoint::Checkpoint;
pub use config::{BlockKind, ModelConfig, SkipMode};
pub use layers::{Forward, RunningStats, Weights};
pub use network::Network;
