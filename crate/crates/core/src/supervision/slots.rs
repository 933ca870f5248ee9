use super::losses::{add_all, cross_entropy, score_loss, smooth_l1_loss};
use super::matching::{match_slots, MatchingMetric, ReferenceVector, SlotAssignment};
use crate::diffcore::{softmax_slice, Real, Tape, Var};
use crate::error::{Error, Result};
use crate::graphmodel::{ObjectSlotVars, RelationSlotVars};
use crate::scenegen::Pixel;

#[derive(Clone, Debug, PartialEq)]
pub struct ObjectTarget {
    pub category: usize,
    pub anchor: usize,
    /// Anchor-relative box parameters.
    pub offsets: [f64; 4],
}

#[derive(Clone, Debug, PartialEq)]
pub struct RelationTarget {
    pub predicate: usize,
    /// Current embedding values of the endpoint vertices, used for matching.
    pub source: Vec<f64>,
    pub target: Vec<f64>,
}

/// Loss terms of the object slots at one pixel. Per-target vectors are in
/// target order; only matched slots contribute to them.
#[derive(Clone, Debug)]
pub struct ObjectPixelTerms {
    pub assignment: SlotAssignment,
    pub class: Vec<Var>,
    pub anchor: Vec<Var>,
    pub offsets: Vec<Var>,
    /// Score cross-entropy summed over all slots.
    pub score: Var,
    /// Embedding of the slot each target was matched to.
    pub embeddings: Vec<Var>,
}

#[derive(Clone, Debug)]
pub struct RelationPixelTerms {
    pub assignment: SlotAssignment,
    pub predicate: Vec<Var>,
    pub score: Var,
    pub source: Vec<Var>,
    pub target: Vec<Var>,
}

fn values<T: Real>(tape: &Tape<T>, v: Var) -> Vec<f64> {
    tape.value(v).data().iter().map(|x| x.to_f64_lossy()).collect()
}

fn check_assignment(a: &SlotAssignment) -> Result<()> {
    if a.is_injective() {
        Ok(())
    } else {
        Err(Error::Invalid(format!("slot assignment at {:?} is not injective", a.pixel)))
    }
}

fn scores<T: Real>(tape: &Tape<T>, slot_scores: &[Var], a: &SlotAssignment) -> Result<Var> {
    let all = tape.concat(slot_scores)?;
    let full: Vec<bool> = (0..slot_scores.len()).map(|j| a.pairs.iter().any(|p| p.1 == j)).collect();
    score_loss(tape, all, &full)
}

/// Matches the object targets at `pixel` to its slot rows and builds the
/// per-slot losses.
pub fn object_pixel_terms<T: Real>(
    tape: &Tape<T>,
    pixel: Pixel,
    slots: &[ObjectSlotVars],
    targets: &[ObjectTarget],
    metric: MatchingMetric,
) -> Result<ObjectPixelTerms> {
    let first = slots.first().ok_or_else(|| Error::Invalid("no object slots".into()))?;
    let categories = tape.value(first.class_logits).numel();
    let anchors = tape.value(first.anchor_logits).numel();
    let refs: Vec<ReferenceVector> = targets
        .iter()
        .map(|t| ReferenceVector::object(t.category, categories, t.anchor, anchors))
        .collect();
    let predicted: Vec<Vec<f64>> = slots
        .iter()
        .map(|s| {
            let mut v = softmax_slice(&values(tape, s.class_logits));
            v.extend(softmax_slice(&values(tape, s.anchor_logits)));
            v
        })
        .collect();
    let assignment = match_slots(pixel, &refs, &predicted, metric)?;
    check_assignment(&assignment)?;
    let mut terms = ObjectPixelTerms {
        score: scores(tape, &slots.iter().map(|s| s.score).collect::<Vec<_>>(), &assignment)?,
        assignment,
        class: Vec::new(),
        anchor: Vec::new(),
        offsets: Vec::new(),
        embeddings: Vec::new(),
    };
    for &(g, j) in &terms.assignment.pairs {
        let (s, t) = (&slots[j], &targets[g]);
        terms.class.push(cross_entropy(tape, s.class_logits, t.category)?);
        terms.anchor.push(cross_entropy(tape, s.anchor_logits, t.anchor)?);
        terms.offsets.push(smooth_l1_loss(tape, s.box_offsets, &t.offsets)?);
        terms.embeddings.push(s.embedding);
    }
    Ok(terms)
}

pub fn relation_pixel_terms<T: Real>(
    tape: &Tape<T>,
    pixel: Pixel,
    slots: &[RelationSlotVars],
    targets: &[RelationTarget],
    metric: MatchingMetric,
) -> Result<RelationPixelTerms> {
    let first = slots.first().ok_or_else(|| Error::Invalid("no relation slots".into()))?;
    let predicates = tape.value(first.predicate_logits).numel();
    let refs: Vec<ReferenceVector> = targets
        .iter()
        .map(|t| ReferenceVector::relation(t.predicate, predicates, &t.source, &t.target))
        .collect();
    let predicted: Vec<Vec<f64>> = slots
        .iter()
        .map(|s| {
            let mut v = softmax_slice(&values(tape, s.predicate_logits));
            v.extend(values(tape, s.source_embedding));
            v.extend(values(tape, s.target_embedding));
            v
        })
        .collect();
    let assignment = match_slots(pixel, &refs, &predicted, metric)?;
    check_assignment(&assignment)?;
    let mut terms = RelationPixelTerms {
        score: scores(tape, &slots.iter().map(|s| s.score).collect::<Vec<_>>(), &assignment)?,
        assignment,
        predicate: Vec::new(),
        source: Vec::new(),
        target: Vec::new(),
    };
    for &(g, j) in &terms.assignment.pairs {
        let s = &slots[j];
        terms.predicate.push(cross_entropy(tape, s.predicate_logits, targets[g].predicate)?);
        terms.source.push(s.source_embedding);
        terms.target.push(s.target_embedding);
    }
    Ok(terms)
}

impl ObjectPixelTerms {
    /// Unnormalized sum of the slot terms (embeddings excluded).
    pub fn total<T: Real>(&self, tape: &Tape<T>) -> Result<Var> {
        let mut all = vec![self.score];
        all.extend(&self.class);
        all.extend(&self.anchor);
        all.extend(&self.offsets);
        add_all(tape, &all)
    }
}

impl RelationPixelTerms {
    pub fn total<T: Real>(&self, tape: &Tape<T>) -> Result<Var> {
        let mut all = vec![self.score];
        all.extend(&self.predicate);
        add_all(tape, &all)
    }
}
