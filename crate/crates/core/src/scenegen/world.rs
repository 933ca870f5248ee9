//! Shape-world vocabulary, geometric predicate rules and scene sampling.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::graph::{ground_vertex, BBox, EdgeGT, SceneGraph, VertexGT};
use super::render::{render, RasterImage};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Shape {
    Square,
    Circle,
    Triangle,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Color {
    Red,
    Green,
    Blue,
}

pub const SHAPES: [Shape; 3] = [Shape::Square, Shape::Circle, Shape::Triangle];
pub const COLORS: [Color; 3] = [Color::Red, Color::Green, Color::Blue];
pub const NUM_CATEGORIES: usize = SHAPES.len() * COLORS.len();

impl Color {
    pub fn rgb(self) -> [f32; 3] {
        match self {
            Color::Red => [0.9, 0.15, 0.15],
            Color::Green => [0.15, 0.8, 0.2],
            Color::Blue => [0.2, 0.35, 0.95],
        }
    }
}

/// Category index `shape * 3 + color`.
pub fn category_of(shape: Shape, color: Color) -> usize {
    let s = SHAPES.iter().position(|&x| x == shape).unwrap();
    let c = COLORS.iter().position(|&x| x == color).unwrap();
    s * COLORS.len() + c
}

pub fn decompose_category(category: usize) -> (Shape, Color) {
    (
        SHAPES[category / COLORS.len()],
        COLORS[category % COLORS.len()],
    )
}

pub fn category_name(category: usize) -> String {
    let (s, c) = decompose_category(category);
    format!("{c:?}-{s:?}").to_lowercase()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Predicate {
    LeftOf,
    Above,
    Inside,
    Overlapping,
    LargerThan,
    SameColorAs,
}

pub const PREDICATES: [Predicate; 6] = [
    Predicate::LeftOf,
    Predicate::Above,
    Predicate::Inside,
    Predicate::Overlapping,
    Predicate::LargerThan,
    Predicate::SameColorAs,
];
pub const NUM_PREDICATES: usize = PREDICATES.len();

impl Predicate {
    pub fn index(self) -> usize {
        PREDICATES.iter().position(|&p| p == self).unwrap()
    }

    pub fn from_index(i: usize) -> Option<Self> {
        PREDICATES.get(i).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            Predicate::LeftOf => "left-of",
            Predicate::Above => "above",
            Predicate::Inside => "inside",
            Predicate::Overlapping => "overlapping",
            Predicate::LargerThan => "larger-than",
            Predicate::SameColorAs => "same-color-as",
        }
    }
}

pub fn predicate_name(index: usize) -> &'static str {
    Predicate::from_index(index).map_or("?", Predicate::name)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WorldConfig {
    pub width: usize,
    pub height: usize,
    /// Input pixels per output cell.
    pub stride: usize,
    pub min_objects: usize,
    pub max_objects: usize,
    pub max_relations: usize,
    /// Side lengths are drawn uniformly from `[min_size, max_size]` pixels.
    pub min_size: usize,
    pub max_size: usize,
    /// Largest box gap (pixels) at which two objects count as near.
    pub near_gap: f64,
    /// Area ratio for `larger-than`.
    pub larger_ratio: f64,
    /// Fraction of an object's pixels that must stay unoccluded.
    pub min_visible_fraction: f64,
    pub object_slots: usize,
    pub relation_slots: usize,
    /// Per-vertex probability of an extra `same-color-as` self-loop.
    pub self_loop_fraction: f64,
    pub max_attempts: usize,
    /// Amplitude of uniform per-pixel background noise.
    pub noise: f32,
}

impl Default for WorldConfig {
    fn default() -> Self {
        WorldConfig {
            width: 128,
            height: 128,
            stride: 4,
            min_objects: 2,
            max_objects: 6,
            max_relations: 8,
            min_size: 10,
            max_size: 36,
            near_gap: 16.0,
            larger_ratio: 2.0,
            min_visible_fraction: 0.6,
            object_slots: 3,
            relation_slots: 6,
            self_loop_fraction: 0.0,
            max_attempts: 500,
            noise: 0.04,
        }
    }
}

impl WorldConfig {
    pub fn output_size(&self) -> (usize, usize) {
        (self.width / self.stride, self.height / self.stride)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("world: {m}")));
        if self.stride == 0 || self.width % self.stride != 0 || self.height % self.stride != 0 {
            return bad("canvas must be a multiple of the stride");
        }
        if self.min_objects == 0 || self.min_objects > self.max_objects {
            return bad("object count range is empty");
        }
        if self.min_size == 0 || self.min_size > self.max_size || self.max_size > self.width.min(self.height) {
            return bad("object size range does not fit the canvas");
        }
        if self.object_slots == 0 || self.relation_slots == 0 {
            return bad("slot counts must be positive");
        }
        if !(0.0..=1.0).contains(&self.self_loop_fraction) {
            return bad("self_loop_fraction outside [0, 1]");
        }
        Ok(())
    }
}

/// An object placed in the canvas before rendering.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Placed {
    pub shape: Shape,
    pub color: Color,
    pub bbox: BBox,
}

impl Placed {
    pub fn category(&self) -> usize {
        category_of(self.shape, self.color)
    }
}

fn interval_gap(a0: f64, a1: f64, b0: f64, b1: f64) -> f64 {
    a0.max(b0) - a1.min(b1)
}

/// Whether `predicate(a, b)` holds for two distinct objects.
pub fn predicate_holds(predicate: Predicate, a: &Placed, b: &Placed, cfg: &WorldConfig) -> bool {
    let (ba, bb) = (&a.bbox, &b.bbox);
    let gap_x = interval_gap(ba.x0, ba.x1, bb.x0, bb.x1);
    let gap_y = interval_gap(ba.y0, ba.y1, bb.y0, bb.y1);
    let near = gap_x.max(gap_y) <= cfg.near_gap;
    match predicate {
        Predicate::LeftOf => ba.x1 <= bb.x0 && gap_x <= cfg.near_gap && gap_y < 0.0,
        Predicate::Above => ba.y1 <= bb.y0 && gap_y <= cfg.near_gap && gap_x < 0.0,
        Predicate::Inside => bb.contains(ba) && ba != bb,
        Predicate::Overlapping => {
            gap_x < 0.0 && gap_y < 0.0 && !bb.contains(ba) && !ba.contains(bb)
        }
        Predicate::LargerThan => near && ba.area() >= cfg.larger_ratio * bb.area(),
        Predicate::SameColorAs => near && a.color == b.color,
    }
}

/// All rule-derived edges over ordered pairs of distinct objects, in
/// `(source, target, predicate)` order.
pub fn derive_edges(objects: &[Placed], cfg: &WorldConfig) -> Vec<(usize, usize, Predicate)> {
    let mut edges = Vec::new();
    for (i, a) in objects.iter().enumerate() {
        for (j, b) in objects.iter().enumerate() {
            if i == j {
                continue;
            }
            for p in PREDICATES {
                if predicate_holds(p, a, b, cfg) {
                    edges.push((i, j, p));
                }
            }
        }
    }
    edges
}

fn sample_object(rng: &mut ChaCha8Rng, cfg: &WorldConfig) -> Placed {
    let shape = SHAPES[rng.gen_range(0..SHAPES.len())];
    let color = COLORS[rng.gen_range(0..COLORS.len())];
    let w = rng.gen_range(cfg.min_size..=cfg.max_size);
    let h = rng.gen_range(cfg.min_size..=cfg.max_size);
    let x0 = rng.gen_range(0..=cfg.width - w);
    let y0 = rng.gen_range(0..=cfg.height - h);
    Placed {
        shape,
        color,
        bbox: BBox::new(x0 as f64, y0 as f64, (x0 + w) as f64, (y0 + h) as f64),
    }
}

/// Builds the ground-truth graph for placed objects, adding the optional
/// self-loops flagged in `self_loops`.
pub fn build_graph(objects: &[Placed], self_loops: &[bool], cfg: &WorldConfig) -> SceneGraph {
    let vertices: Vec<VertexGT> = objects
        .iter()
        .map(|o| VertexGT {
            category: o.category(),
            bbox: o.bbox,
            grounding: ground_vertex(&o.bbox, cfg.stride, cfg.output_size()),
        })
        .collect();
    let mut edges: Vec<EdgeGT> = derive_edges(objects, cfg)
        .into_iter()
        .map(|(s, t, p)| EdgeGT::between(&vertices, s, t, p.index()))
        .collect();
    for (i, _) in self_loops.iter().enumerate().filter(|(_, &f)| f) {
        edges.push(EdgeGT::between(&vertices, i, i, Predicate::SameColorAs.index()));
    }
    SceneGraph {
        vertices,
        edges,
        image_size: (cfg.width, cfg.height),
    }
}

/// Samples a scene deterministically from `seed`, rejecting placements
/// that occlude objects, exceed the relation budget, or overfill a slot.
pub fn generate_scene(seed: u64, cfg: &WorldConfig) -> Result<(RasterImage, SceneGraph)> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..cfg.max_attempts {
        let n = rng.gen_range(cfg.min_objects..=cfg.max_objects);
        let objects: Vec<Placed> = (0..n).map(|_| sample_object(&mut rng, cfg)).collect();
        let self_loops: Vec<bool> = (0..n)
            .map(|_| rng.gen_bool(cfg.self_loop_fraction))
            .collect();
        let graph = build_graph(&objects, &self_loops, cfg);
        if graph.edges.len() > cfg.max_relations
            || !graph.respects_slots(cfg.object_slots, cfg.relation_slots)
        {
            continue;
        }
        let noise_seed = rng.gen();
        let (image, visible) = render(&objects, cfg, noise_seed);
        let visible_enough = visible
            .iter()
            .all(|&(shown, total)| total > 0 && shown as f64 >= cfg.min_visible_fraction * total as f64);
        if visible_enough {
            return Ok((image, graph));
        }
    }
    Err(Error::Generation(format!(
        "seed {seed}: no valid scene after {} attempts",
        cfg.max_attempts
    )))
}
