use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::lrfc::LrfcConfig;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeadAggregation {
    Average,
    Concat,
}

/// Which category pair indexes the association vector of an edge `i → j`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PrioritizationMode {
    /// No scoring; edges are averaged uniformly.
    None,
    /// `{f_i, f_i}`.
    #[serde(rename = "self")]
    SelfPair,
    /// `{f_j, f_j}`.
    Neighbor,
    /// Sum of the `self` and `neighbor` scores.
    SelfNeighbor,
    /// `{f_i, f_j}`.
    Pair,
}

impl PrioritizationMode {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::None => "none",
            Self::SelfPair => "self",
            Self::Neighbor => "neighbor",
            Self::SelfNeighbor => "self_neighbor",
            Self::Pair => "pair",
        }
    }

    pub fn uses_table(self) -> bool {
        self != Self::None
    }
}

fn default_k() -> usize {
    6
}
fn default_widths() -> Vec<usize> {
    vec![64, 64, 128, 256]
}
fn default_emb() -> usize {
    1024
}
fn default_head_widths() -> Vec<usize> {
    vec![512, 256]
}
fn default_heads() -> usize {
    1
}
fn default_agg() -> HeadAggregation {
    HeadAggregation::Average
}
fn default_dropout() -> f64 {
    0.5
}
fn default_true() -> bool {
    true
}
fn default_mode() -> PrioritizationMode {
    PrioritizationMode::Pair
}

/// Architecture hyperparameters. Defaults are the full-size settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    #[serde(default = "default_k")]
    pub k: usize,
    /// Output width of each EdgeConv layer (per head).
    #[serde(default = "default_widths")]
    pub widths: Vec<usize>,
    #[serde(default = "default_emb")]
    pub emb_dims: usize,
    #[serde(default = "default_head_widths")]
    pub head_widths: Vec<usize>,
    #[serde(default = "default_heads")]
    pub heads: usize,
    #[serde(default = "default_agg")]
    pub head_aggregation: HeadAggregation,
    #[serde(default = "default_dropout")]
    pub dropout: f64,
    /// Pool only the `top_k` highest-scoring neighbors.
    #[serde(default)]
    pub top_k: Option<usize>,
    #[serde(default = "default_true")]
    pub use_lrfc: bool,
    #[serde(default = "default_mode")]
    pub prioritization: PrioritizationMode,
    /// Batch normalization after every linear map except the output layer.
    #[serde(default = "default_true")]
    pub batch_norm: bool,
    #[serde(default)]
    pub lrfc: LrfcConfig,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            k: default_k(),
            widths: default_widths(),
            emb_dims: default_emb(),
            head_widths: default_head_widths(),
            heads: default_heads(),
            head_aggregation: default_agg(),
            dropout: default_dropout(),
            top_k: None,
            use_lrfc: true,
            prioritization: default_mode(),
            batch_norm: true,
            lrfc: LrfcConfig::default(),
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return invalid("k must be positive");
        }
        if self.widths.is_empty() || self.widths.contains(&0) {
            return invalid("EdgeConv widths must be a non-empty list of positive integers");
        }
        if self.emb_dims == 0 || self.head_widths.contains(&0) {
            return invalid("emb_dims and head widths must be positive");
        }
        if self.heads == 0 {
            return invalid("heads must be at least 1");
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return invalid(format!("dropout {} outside [0, 1)", self.dropout));
        }
        if let Some(t) = self.top_k {
            if t == 0 || t > self.k {
                return invalid(format!("top_k {t} must be in 1..={}", self.k));
            }
        }
        self.lrfc.validate()
    }

    /// Width of layer `l`'s vertex embedding after head aggregation.
    pub fn layer_output(&self, l: usize) -> usize {
        match self.head_aggregation {
            HeadAggregation::Average => self.widths[l],
            HeadAggregation::Concat => self.widths[l] * self.heads,
        }
    }

    /// Width of the local term fed to the first layer.
    pub fn first_local_dim(&self) -> usize {
        if self.use_lrfc {
            self.lrfc.dim()
        } else {
            2
        }
    }
}

fn default_epochs() -> usize {
    200
}
fn default_batch() -> usize {
    7
}
fn default_lr() -> f64 {
    1e-3
}
fn default_beta1() -> f64 {
    0.9
}
fn default_points() -> usize {
    1024
}

/// Optimization settings, kept apart from the architecture so a checkpoint's
/// shape contract does not depend on them.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default = "default_lr")]
    pub lr: f64,
    #[serde(default = "default_beta1")]
    pub beta1: f64,
    #[serde(default)]
    pub seed: u64,
    /// Points sampled per pattern.
    #[serde(default = "default_points")]
    pub num_points: usize,
    /// Add the five rotated copies of every training sample.
    #[serde(default = "default_true")]
    pub augment: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: default_epochs(),
            batch_size: default_batch(),
            lr: default_lr(),
            beta1: default_beta1(),
            seed: 0,
            num_points: default_points(),
            augment: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 || self.num_points == 0 {
            return invalid("epochs, batch_size and num_points must be positive");
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return invalid(format!("learning rate must be positive, got {}", self.lr));
        }
        if !(0.0..1.0).contains(&self.beta1) {
            return invalid(format!("beta1 {} outside [0, 1)", self.beta1));
        }
        Ok(())
    }
}
