//! Procedural shape-world scenes with exhaustive ground-truth graphs.

mod augment;
mod graph;
mod io;
mod prior;
mod render;
mod world;

pub use augment::{apply_affine, augment, Affine, AugmentConfig};
pub use graph::{ground_edge, ground_vertex, BBox, EdgeGT, Pixel, SceneGraph, Triplet, VertexGT};
pub use io::{
    generate_dataset, generate_samples, load_dataset, load_sample, scene_seed, write_sample,
    EdgeRecord, Sample, SceneRecord, VertexRecord,
};
pub use prior::{
    best_anchor, encode_prior_detections, grouping_for, prior_input, PriorGrouping, PriorLayout,
};
pub use render::{paint_order, render, shape_covers, RasterImage};
pub use world::{
    build_graph, category_name, category_of, decompose_category, derive_edges, generate_scene,
    predicate_holds, predicate_name, Color, Placed, Predicate, Shape, WorldConfig, COLORS,
    NUM_CATEGORIES, NUM_PREDICATES, PREDICATES, SHAPES,
};
