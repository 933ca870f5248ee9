use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scenegen::{PriorLayout, NUM_CATEGORIES, NUM_PREDICATES};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub input_size: usize,
    pub output_size: usize,
    pub stride: usize,
    /// Feature length `f` of the per-pixel feature tensor.
    pub features: usize,
    /// Embedding dimension `d`.
    pub embedding_dim: usize,
    /// Push margin `m`.
    pub push_margin: f64,
    pub object_slots: usize,
    pub relation_slots: usize,
    pub categories: usize,
    pub predicates: usize,
    /// Anchor shapes `(w, h)` in input pixels.
    pub anchors: Vec<(f64, f64)>,
    pub hourglass_depth: usize,
    /// Channels of the prior-detection input; 0 disables the prior path.
    pub prior_input_channels: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        let anchors = vec![(14.0, 14.0), (22.0, 22.0), (32.0, 32.0), (14.0, 30.0), (30.0, 14.0)];
        ModelConfig {
            input_size: 128,
            output_size: 32,
            stride: 4,
            features: 64,
            embedding_dim: 8,
            push_margin: 8.0,
            object_slots: 3,
            relation_slots: 6,
            categories: NUM_CATEGORIES,
            predicates: NUM_PREDICATES,
            prior_input_channels: 2 * (NUM_CATEGORIES + anchors.len()),
            anchors,
            hourglass_depth: 3,
        }
    }
}

impl ModelConfig {
    pub fn anchor_count(&self) -> usize {
        self.anchors.len()
    }

    /// Channels of the first stride-2 stem convolution.
    pub fn stem_channels(&self) -> usize {
        (self.features / 2).max(1)
    }

    pub fn prior_layout(&self) -> PriorLayout {
        PriorLayout {
            categories: self.categories,
            anchors: self.anchors.clone(),
            stride: self.stride,
            output: (self.output_size, self.output_size),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(format!("model: {m}")));
        if self.output_size * self.stride != self.input_size {
            return bad(format!(
                "output_size {} x stride {} != input_size {}",
                self.output_size, self.stride, self.input_size
            ));
        }
        if self.stride != 4 {
            return bad("the stem reduces resolution by exactly 4".into());
        }
        if self.embedding_dim == 0 || self.push_margin <= 0.0 {
            return bad("embedding_dim must be >= 1 and push_margin > 0".into());
        }
        if self.object_slots == 0 || self.relation_slots == 0 {
            return bad("slot counts must be >= 1".into());
        }
        if self.features == 0 || self.categories == 0 || self.predicates == 0 || self.anchors.is_empty() {
            return bad("features, categories, predicates and anchors must be non-empty".into());
        }
        if self.hourglass_depth == 0 || self.output_size % (1 << self.hourglass_depth) != 0 {
            return bad(format!(
                "output_size {} is not divisible by 2^{}",
                self.output_size, self.hourglass_depth
            ));
        }
        let expected = self.prior_layout().input_channels();
        if self.prior_input_channels != 0 && self.prior_input_channels != expected {
            return bad(format!(
                "prior_input_channels must be 0 or {expected}, got {}",
                self.prior_input_channels
            ));
        }
        Ok(())
    }
}
