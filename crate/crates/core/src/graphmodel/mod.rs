//! Hourglass encoder-decoder with heatmap heads and unshared per-slot
//! property heads.

mod boxes;
mod config;
mod model;
mod outputs;

pub use boxes::{decode_box, encode_box};
pub use config::ModelConfig;
pub use model::{GraphModel, Mode, ObjectSlotVars, RelationSlotVars, Trunk};
pub use outputs::{
    ModelOutputs, ObjectSlotMaps, ObjectSlotPrediction, RelationSlotMaps, RelationSlotPrediction,
    SlotPredictions,
};

#[cfg(test)]
mod tests;
