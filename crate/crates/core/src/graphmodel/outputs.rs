use crate::diffcore::{softmax_slice, Real, Tensor};
use crate::error::{Error, Result};
use crate::scenegen::Pixel;

/// One object slot over the whole output map; vector-valued maps are
/// `[h, w, k]`, scalar maps `[h, w]`.
#[derive(Clone, Debug, PartialEq)]
pub struct ObjectSlotMaps<T = f32> {
    pub class_logits: Tensor<T>,
    pub anchor_logits: Tensor<T>,
    pub box_offsets: Tensor<T>,
    pub embedding: Tensor<T>,
    pub score: Tensor<T>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RelationSlotMaps<T = f32> {
    pub predicate_logits: Tensor<T>,
    pub source_embedding: Tensor<T>,
    pub target_embedding: Tensor<T>,
    pub score: Tensor<T>,
}

/// Everything the model predicts for one image, at output resolution.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelOutputs<T = f32> {
    pub vertex_heatmap: Tensor<T>,
    pub edge_heatmap: Tensor<T>,
    pub objects: Vec<ObjectSlotMaps<T>>,
    pub relations: Vec<RelationSlotMaps<T>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ObjectSlotPrediction {
    pub class_probs: Vec<f64>,
    pub anchor_probs: Vec<f64>,
    pub box_offsets: [f64; 4],
    pub embedding: Vec<f64>,
    pub score: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RelationSlotPrediction {
    pub predicate_probs: Vec<f64>,
    pub source_embedding: Vec<f64>,
    pub target_embedding: Vec<f64>,
    pub score: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SlotPredictions {
    pub objects: Vec<ObjectSlotPrediction>,
    pub relations: Vec<RelationSlotPrediction>,
}

fn at<T: Real>(t: &Tensor<T>, p: Pixel) -> Vec<f64> {
    let s = t.shape();
    let k = if s.len() == 3 { s[2] } else { 1 };
    let start = (p.1 * s[1] + p.0) * k;
    t.data()[start..start + k].iter().map(|v| v.to_f64_lossy()).collect()
}

fn softmax_at<T: Real>(t: &Tensor<T>, p: Pixel) -> Vec<f64> {
    softmax_slice(&at(t, p))
}

impl<T: Real> ModelOutputs<T> {
    /// `(w, h)` of the output maps.
    pub fn resolution(&self) -> (usize, usize) {
        let s = self.vertex_heatmap.shape();
        (s[1], s[0])
    }

    /// Per-slot bundles at one output pixel.
    pub fn extract_slot_predictions(&self, pixel: Pixel) -> Result<SlotPredictions> {
        let (w, h) = self.resolution();
        if pixel.0 >= w || pixel.1 >= h {
            return Err(Error::Invalid(format!(
                "pixel {pixel:?} outside the {w}x{h} output map"
            )));
        }
        let objects = self
            .objects
            .iter()
            .map(|s| {
                let o = at(&s.box_offsets, pixel);
                ObjectSlotPrediction {
                    class_probs: softmax_at(&s.class_logits, pixel),
                    anchor_probs: softmax_at(&s.anchor_logits, pixel),
                    box_offsets: [o[0], o[1], o[2], o[3]],
                    embedding: at(&s.embedding, pixel),
                    score: at(&s.score, pixel)[0],
                }
            })
            .collect();
        let relations = self
            .relations
            .iter()
            .map(|s| RelationSlotPrediction {
                predicate_probs: softmax_at(&s.predicate_logits, pixel),
                source_embedding: at(&s.source_embedding, pixel),
                target_embedding: at(&s.target_embedding, pixel),
                score: at(&s.score, pixel)[0],
            })
            .collect();
        Ok(SlotPredictions { objects, relations })
    }

    pub fn all_finite(&self) -> bool {
        self.vertex_heatmap.all_finite()
            && self.edge_heatmap.all_finite()
            && self.objects.iter().all(|s| {
                s.class_logits.all_finite()
                    && s.anchor_logits.all_finite()
                    && s.box_offsets.all_finite()
                    && s.embedding.all_finite()
                    && s.score.all_finite()
            })
            && self.relations.iter().all(|s| {
                s.predicate_logits.all_finite()
                    && s.source_embedding.all_finite()
                    && s.target_embedding.all_finite()
                    && s.score.all_finite()
            })
    }
}
