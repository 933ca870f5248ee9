use serde::{Deserialize, Serialize};

use super::hungarian::hungarian;
use crate::error::{Error, Result};
use crate::graphmodel::{ObjectSlotPrediction, RelationSlotPrediction};
use crate::scenegen::Pixel;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ElementKind {
    Object,
    Relation,
}

/// Ground-truth descriptor compared against slot outputs: a distribution
/// block of one-hots followed (for relations) by an embedding block.
#[derive(Clone, Debug, PartialEq)]
pub struct ReferenceVector {
    pub kind: ElementKind,
    pub values: Vec<f64>,
    /// Length of the leading distribution block.
    pub distribution_len: usize,
}

fn one_hot(index: usize, len: usize) -> impl Iterator<Item = f64> {
    (0..len).map(move |i| if i == index { 1.0 } else { 0.0 })
}

impl ReferenceVector {
    /// One-hot category followed by one-hot anchor.
    pub fn object(category: usize, categories: usize, anchor: usize, anchors: usize) -> Self {
        ReferenceVector {
            kind: ElementKind::Object,
            values: one_hot(category, categories).chain(one_hot(anchor, anchors)).collect(),
            distribution_len: categories + anchors,
        }
    }

    /// One-hot predicate followed by the endpoint embeddings.
    pub fn relation(predicate: usize, predicates: usize, source: &[f64], target: &[f64]) -> Self {
        ReferenceVector {
            kind: ElementKind::Relation,
            values: one_hot(predicate, predicates)
                .chain(source.iter().copied())
                .chain(target.iter().copied())
                .collect(),
            distribution_len: predicates,
        }
    }
}

/// Slot outputs laid out like the matching [`ReferenceVector`].
pub fn object_slot_vector(p: &ObjectSlotPrediction) -> Vec<f64> {
    p.class_probs.iter().chain(&p.anchor_probs).copied().collect()
}

pub fn relation_slot_vector(p: &RelationSlotPrediction) -> Vec<f64> {
    p.predicate_probs
        .iter()
        .chain(&p.source_embedding)
        .chain(&p.target_embedding)
        .copied()
        .collect()
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MatchingMetric {
    /// Negative inner product on the distribution block plus squared
    /// distance on the embedding block.
    #[default]
    InnerProduct,
    /// Squared distance on the whole vector.
    SquaredDistance,
}

pub fn matching_cost(reference: &ReferenceVector, slot: &[f64], metric: MatchingMetric) -> f64 {
    let k = reference.distribution_len;
    let (rd, re) = reference.values.split_at(k);
    let (sd, se) = slot.split_at(k);
    let embedding: f64 = re.iter().zip(se).map(|(a, b)| (a - b) * (a - b)).sum();
    match metric {
        MatchingMetric::InnerProduct => -rd.iter().zip(sd).map(|(a, b)| a * b).sum::<f64>() + embedding,
        MatchingMetric::SquaredDistance => {
            rd.iter().zip(sd).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() + embedding
        }
    }
}

/// Binding of the ground-truth elements at one pixel to output slots.
#[derive(Clone, Debug, PartialEq)]
pub struct SlotAssignment {
    pub pixel: Pixel,
    /// `(ground-truth index, slot index)`, in ground-truth order.
    pub pairs: Vec<(usize, usize)>,
    pub unmatched_slots: Vec<usize>,
}

impl SlotAssignment {
    pub fn slot_of(&self, gt: usize) -> Option<usize> {
        self.pairs.iter().find(|p| p.0 == gt).map(|p| p.1)
    }

    pub fn is_injective(&self) -> bool {
        let mut seen: Vec<usize> = self.pairs.iter().map(|p| p.1).collect();
        seen.sort_unstable();
        seen.windows(2).all(|w| w[0] != w[1])
    }
}

/// Optimal assignment of references to slots. Slot vectors are plain
/// values, so nothing here is differentiated.
pub fn match_slots(
    pixel: Pixel,
    references: &[ReferenceVector],
    slots: &[Vec<f64>],
    metric: MatchingMetric,
) -> Result<SlotAssignment> {
    for s in slots {
        if let Some(r) = references.first() {
            if s.len() != r.values.len() {
                return Err(Error::shape(format!(
                    "slot vector of length {}, reference of length {}",
                    s.len(),
                    r.values.len()
                )));
            }
        }
    }
    let cost: Vec<Vec<f64>> = references
        .iter()
        .map(|r| slots.iter().map(|s| matching_cost(r, s, metric)).collect())
        .collect();
    let columns = hungarian(&cost)?;
    let pairs: Vec<(usize, usize)> = columns.into_iter().enumerate().collect();
    let unmatched_slots = (0..slots.len()).filter(|j| !pairs.iter().any(|p| p.1 == *j)).collect();
    Ok(SlotAssignment {
        pixel,
        pairs,
        unmatched_slots,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_reference_single_slot_always_matches() {
        let r = ReferenceVector::object(2, 3, 0, 2);
        let a = match_slots((1, 1), &[r], &[vec![0.9, 0.0, 0.1, 0.5, 0.5]], MatchingMetric::default()).unwrap();
        assert_eq!(a.pairs, vec![(0, 0)]);
        assert!(a.unmatched_slots.is_empty());
    }

    #[test]
    fn swapped_one_hot_slots_are_recovered() {
        let refs = [ReferenceVector::object(0, 2, 0, 1), ReferenceVector::object(1, 2, 0, 1)];
        let slots = [vec![0.0, 1.0, 1.0], vec![1.0, 0.0, 1.0]];
        let a = match_slots((0, 0), &refs, &slots, MatchingMetric::InnerProduct).unwrap();
        assert_eq!(a.pairs, vec![(0, 1), (1, 0)]);
        let a = match_slots((0, 0), &refs, &slots, MatchingMetric::SquaredDistance).unwrap();
        assert_eq!(a.pairs, vec![(0, 1), (1, 0)]);
    }

    #[test]
    fn relation_cost_includes_embedding_distance() {
        let r = ReferenceVector::relation(1, 2, &[1.0, 0.0], &[0.0, 2.0]);
        let slot = [0.25, 0.75, 1.0, 1.0, 0.0, 0.0];
        // -0.75 + 1 + 4
        assert!((matching_cost(&r, &slot, MatchingMetric::InnerProduct) - 4.25).abs() < 1e-12);
    }

    #[test]
    fn too_many_references_are_rejected() {
        let refs = vec![ReferenceVector::object(0, 1, 0, 1); 2];
        assert!(match_slots((0, 0), &refs, &[vec![1.0, 1.0]], MatchingMetric::default()).is_err());
    }
}
