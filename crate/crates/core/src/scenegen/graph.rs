use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Axis-aligned box `(x0, y0, x1, y1)` in input-pixel units.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 4]", into = "[f64; 4]")]
pub struct BBox {
    pub x0: f64,
    pub y0: f64,
    pub x1: f64,
    pub y1: f64,
}

impl From<[f64; 4]> for BBox {
    fn from(v: [f64; 4]) -> Self {
        BBox::new(v[0], v[1], v[2], v[3])
    }
}

impl From<BBox> for [f64; 4] {
    fn from(b: BBox) -> Self {
        [b.x0, b.y0, b.x1, b.y1]
    }
}

impl BBox {
    pub fn new(x0: f64, y0: f64, x1: f64, y1: f64) -> Self {
        BBox { x0, y0, x1, y1 }
    }

    pub fn from_center(cx: f64, cy: f64, w: f64, h: f64) -> Self {
        BBox::new(cx - w / 2.0, cy - h / 2.0, cx + w / 2.0, cy + h / 2.0)
    }

    pub fn width(&self) -> f64 {
        self.x1 - self.x0
    }

    pub fn height(&self) -> f64 {
        self.y1 - self.y0
    }

    pub fn area(&self) -> f64 {
        self.width().max(0.0) * self.height().max(0.0)
    }

    pub fn center(&self) -> (f64, f64) {
        ((self.x0 + self.x1) / 2.0, (self.y0 + self.y1) / 2.0)
    }

    pub fn is_well_formed(&self) -> bool {
        self.x0 < self.x1 && self.y0 < self.y1
    }

    pub fn contains(&self, other: &BBox) -> bool {
        self.x0 <= other.x0 && other.x1 <= self.x1 && self.y0 <= other.y0 && other.y1 <= self.y1
    }

    pub fn contains_point(&self, x: f64, y: f64) -> bool {
        self.x0 <= x && x <= self.x1 && self.y0 <= y && y <= self.y1
    }

    pub fn intersection_area(&self, other: &BBox) -> f64 {
        let w = self.x1.min(other.x1) - self.x0.max(other.x0);
        let h = self.y1.min(other.y1) - self.y0.max(other.y0);
        w.max(0.0) * h.max(0.0)
    }

    /// Intersection over union; 0 when the union is empty.
    pub fn iou(&self, other: &BBox) -> f64 {
        let inter = self.intersection_area(other);
        let union = self.area() + other.area() - inter;
        if union > 0.0 {
            inter / union
        } else {
            0.0
        }
    }

    pub fn clip(&self, width: f64, height: f64) -> BBox {
        BBox::new(
            self.x0.clamp(0.0, width),
            self.y0.clamp(0.0, height),
            self.x1.clamp(0.0, width),
            self.y1.clamp(0.0, height),
        )
    }
}

/// Output-resolution pixel `(x, y)`.
pub type Pixel = (usize, usize);

/// Grounds a box at its center, mapped to output resolution by floor
/// division by the stride.
pub fn ground_vertex(bbox: &BBox, stride: usize, output: (usize, usize)) -> Pixel {
    let (cx, cy) = bbox.center();
    let s = stride as f64;
    let gx = (cx / s).floor().clamp(0.0, (output.0 - 1) as f64) as usize;
    let gy = (cy / s).floor().clamp(0.0, (output.1 - 1) as f64) as usize;
    (gx, gy)
}

/// Edge grounding: the floor midpoint of the endpoint groundings.
pub fn ground_edge(source: Pixel, target: Pixel) -> Pixel {
    ((source.0 + target.0) / 2, (source.1 + target.1) / 2)
}

#[derive(Clone, Debug, PartialEq)]
pub struct VertexGT {
    pub category: usize,
    pub bbox: BBox,
    pub grounding: Pixel,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EdgeGT {
    pub source: usize,
    pub target: usize,
    pub predicate: usize,
    pub grounding: Pixel,
}

impl EdgeGT {
    pub fn between(vertices: &[VertexGT], source: usize, target: usize, predicate: usize) -> Self {
        EdgeGT {
            source,
            target,
            predicate,
            grounding: ground_edge(vertices[source].grounding, vertices[target].grounding),
        }
    }
}

/// Ground-truth directed multigraph over the objects of one image.
#[derive(Clone, Debug, PartialEq)]
pub struct SceneGraph {
    pub vertices: Vec<VertexGT>,
    pub edges: Vec<EdgeGT>,
    pub image_size: (usize, usize),
}

impl SceneGraph {
    /// Element counts per grounding pixel.
    pub fn occupancy(&self) -> (HashMap<Pixel, usize>, HashMap<Pixel, usize>) {
        let mut v = HashMap::new();
        let mut e = HashMap::new();
        for x in &self.vertices {
            *v.entry(x.grounding).or_default() += 1;
        }
        for x in &self.edges {
            *e.entry(x.grounding).or_default() += 1;
        }
        (v, e)
    }

    pub fn respects_slots(&self, object_slots: usize, relation_slots: usize) -> bool {
        let (v, e) = self.occupancy();
        v.values().all(|&c| c <= object_slots) && e.values().all(|&c| c <= relation_slots)
    }

    /// Vertex indices grouped by grounding pixel, pixels in first-seen order.
    pub fn vertices_by_pixel(&self) -> Vec<(Pixel, Vec<usize>)> {
        group_by_pixel(self.vertices.iter().map(|v| v.grounding))
    }

    /// Edge indices grouped by grounding pixel, pixels in first-seen order.
    pub fn edges_by_pixel(&self) -> Vec<(Pixel, Vec<usize>)> {
        group_by_pixel(self.edges.iter().map(|e| e.grounding))
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.vertices.len();
        for (i, v) in self.vertices.iter().enumerate() {
            if !v.bbox.is_well_formed() {
                return Err(Error::format("scene graph", format!("vertex {i} has a degenerate box")));
            }
        }
        for (i, e) in self.edges.iter().enumerate() {
            if e.source >= n || e.target >= n {
                return Err(Error::format(
                    "scene graph",
                    format!("edge {i} references a missing vertex"),
                ));
            }
        }
        Ok(())
    }

    /// Subject-predicate-object triplets with their boxes.
    pub fn triplets(&self) -> Vec<Triplet> {
        self.edges
            .iter()
            .map(|e| Triplet {
                subject_category: self.vertices[e.source].category,
                subject_box: self.vertices[e.source].bbox,
                predicate: e.predicate,
                object_category: self.vertices[e.target].category,
                object_box: self.vertices[e.target].bbox,
            })
            .collect()
    }
}

fn group_by_pixel(pixels: impl Iterator<Item = Pixel>) -> Vec<(Pixel, Vec<usize>)> {
    let mut out: Vec<(Pixel, Vec<usize>)> = Vec::new();
    let mut index: HashMap<Pixel, usize> = HashMap::new();
    for (i, p) in pixels.enumerate() {
        let slot = *index.entry(p).or_insert_with(|| {
            out.push((p, Vec::new()));
            out.len() - 1
        });
        out[slot].1.push(i);
    }
    out
}

/// A labelled subject-predicate-object tuple.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Triplet {
    pub subject_category: usize,
    pub subject_box: BBox,
    pub predicate: usize,
    pub object_category: usize,
    pub object_box: BBox,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn edge_grounding_is_floor_midpoint() {
        assert_eq!(ground_edge((10, 20), (15, 25)), (12, 22));
        assert_eq!(ground_edge((7, 7), (7, 7)), (7, 7));
        assert_eq!(ground_edge((0, 0), (1, 1)), (0, 0));
    }

    #[test]
    fn vertex_grounding_floors_the_center() {
        let b = BBox::new(10.0, 20.0, 21.0, 30.0);
        // center (15.5, 25) / 4
        assert_eq!(ground_vertex(&b, 4, (32, 32)), (3, 6));
    }

    #[test]
    fn grouping_keeps_first_seen_order() {
        let g = group_by_pixel([(1, 1), (0, 0), (1, 1)].into_iter());
        assert_eq!(g, vec![((1, 1), vec![0, 2]), ((0, 0), vec![1])]);
    }
}
