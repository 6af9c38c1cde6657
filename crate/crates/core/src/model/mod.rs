//! The point-pattern classifier: dynamic-graph EdgeConv layers with
//! category-pair prioritization, a shared embedding, and an MLP head.

mod checkpoint;
mod config;
mod metrics;
pub mod network;
mod params;
mod train;

pub use checkpoint::{Checkpoint, Header, ManifestEntry, FORMAT_VERSION, MAGIC};
pub use config::{HeadAggregation, ModelConfig, PrioritizationMode, TrainConfig};
pub use metrics::Metrics;
pub use network::{
    argmax, edge_conv_first, edge_conv_generic, multi_head, prepare, prioritize, EdgeIndex,
    EdgePairs, Forward, PreparedPattern, Prioritized,
};
pub use params::{pair_count, pair_index, BnSlot, DenseSlot, HeadSlot, LayerSlot, Layout, ModelParams, PairTable};
pub use train::{eval_view, evaluate, train, train_step, EpochRecord, History};
