//! Training losses and the optimal assignment of ground truth to slots.

mod hungarian;
mod image;
mod losses;
mod matching;
mod slots;

pub use hungarian::{assignment_cost, hungarian};
pub use image::{image_loss, ImageLoss, LossBundle, LossConfig, Truncation};
pub use losses::{cross_entropy, heatmap_loss, pull_loss, push_loss, score_loss, smooth_l1_loss};
pub use matching::{
    match_slots, matching_cost, object_slot_vector, relation_slot_vector, ElementKind,
    MatchingMetric, ReferenceVector, SlotAssignment,
};
pub use slots::{
    object_pixel_terms, relation_pixel_terms, ObjectPixelTerms, ObjectTarget, RelationPixelTerms,
    RelationTarget,
};
