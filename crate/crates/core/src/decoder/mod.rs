//! From model outputs to a predicted scene graph: heatmap and slot-score
//! thresholding, box decoding, and linking edges to vertices by nearest
//! embedding.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::diffcore::Real;
use crate::error::{Error, Result};
use crate::graphmodel::{decode_box, ModelConfig, ModelOutputs};
use crate::scenegen::{BBox, Pixel, SceneGraph, Triplet};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RankingScore {
    /// Edge score times both endpoint scores.
    #[default]
    Product,
    EdgeOnly,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DecodeConfig {
    pub heatmap_threshold: f64,
    pub slot_threshold: f64,
    pub ranking: RankingScore,
    /// Keep only pixels that are maxima of their 3x3 neighbourhood (ties
    /// kept) in addition to clearing the heatmap threshold.
    pub peaks: bool,
    /// Merge same-category vertices overlapping at IoU >= 0.9.
    pub dedup: bool,
}

impl Default for DecodeConfig {
    fn default() -> Self {
        DecodeConfig {
            heatmap_threshold: 0.5,
            slot_threshold: 0.2,
            ranking: RankingScore::Product,
            peaks: true,
            dedup: false,
        }
    }
}

impl DecodeConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = |t: f64| t > 0.0 && t < 1.0;
        if ok(self.heatmap_threshold) && ok(self.slot_threshold) {
            Ok(())
        } else {
            Err(Error::Config("decode thresholds must lie in (0, 1)".into()))
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DetectedVertex {
    pub pixel: Pixel,
    pub slot: usize,
    pub category: usize,
    #[serde(rename = "box")]
    pub bbox: BBox,
    pub embedding: Vec<f64>,
    pub score: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DetectedEdge {
    pub pixel: Pixel,
    pub slot: usize,
    pub predicate: usize,
    pub source_ref: Vec<f64>,
    pub target_ref: Vec<f64>,
    /// Endpoints as indices into the vertex list; filled by assembly.
    #[serde(rename = "src")]
    pub resolved_source: usize,
    #[serde(rename = "tgt")]
    pub resolved_target: usize,
    pub score: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankedTuple {
    pub edge: usize,
    pub score: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PredictedGraph {
    pub vertices: Vec<DetectedVertex>,
    pub edges: Vec<DetectedEdge>,
    /// Edges by non-increasing tuple score.
    pub ranking: Vec<RankedTuple>,
    /// Edges discarded because no vertex was detected.
    pub dropped_edges: usize,
}

impl PredictedGraph {
    pub fn triplet(&self, edge: usize) -> Triplet {
        let e = &self.edges[edge];
        let (s, t) = (&self.vertices[e.resolved_source], &self.vertices[e.resolved_target]);
        Triplet {
            subject_category: s.category,
            subject_box: s.bbox,
            predicate: e.predicate,
            object_category: t.category,
            object_box: t.bbox,
        }
    }

    /// Triplets in rank order with their scores.
    pub fn ranked_triplets(&self) -> Vec<(Triplet, f64)> {
        self.ranking.iter().map(|r| (self.triplet(r.edge), r.score)).collect()
    }

    /// Whether this is the same labelled, grounded multigraph as `graph`:
    /// vertices correspond one-to-one by grounding, category and box (within
    /// `tol`), and edges agree as a multiset under that correspondence.
    pub fn matches_scene(&self, graph: &SceneGraph, tol: f64) -> bool {
        if self.vertices.len() != graph.vertices.len() || self.edges.len() != graph.edges.len() {
            return false;
        }
        let close = |a: &BBox, b: &BBox| {
            <[f64; 4]>::from(*a)
                .iter()
                .zip(<[f64; 4]>::from(*b))
                .all(|(x, y)| (x - y).abs() <= tol)
        };
        let mut map = vec![usize::MAX; self.vertices.len()];
        let mut taken = vec![false; graph.vertices.len()];
        for (i, v) in self.vertices.iter().enumerate() {
            let hit = graph.vertices.iter().enumerate().position(|(j, g)| {
                !taken[j] && g.grounding == v.pixel && g.category == v.category && close(&g.bbox, &v.bbox)
            });
            match hit {
                Some(j) => {
                    taken[j] = true;
                    map[i] = j;
                }
                None => return false,
            }
        }
        let mut ours: Vec<(usize, usize, usize, Pixel)> = self
            .edges
            .iter()
            .map(|e| (map[e.resolved_source], map[e.resolved_target], e.predicate, e.pixel))
            .collect();
        let mut theirs: Vec<(usize, usize, usize, Pixel)> = graph
            .edges
            .iter()
            .map(|e| (e.source, e.target, e.predicate, e.grounding))
            .collect();
        ours.sort_unstable();
        theirs.sort_unstable();
        ours == theirs
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// Whether `(x, y)` clears `t` and, with `peaks`, is not below any of its
/// eight neighbours.
fn candidate<T: Real>(map: &[T], w: usize, h: usize, x: usize, y: usize, t: f64, peaks: bool) -> bool {
    let v = map[y * w + x].to_f64_lossy();
    if v < t {
        return false;
    }
    if !peaks {
        return true;
    }
    for ny in y.saturating_sub(1)..(y + 2).min(h) {
        for nx in x.saturating_sub(1)..(x + 2).min(w) {
            if map[ny * w + nx].to_f64_lossy() > v {
                return false;
            }
        }
    }
    true
}

/// Thresholds heatmaps (optionally at local peaks only) then slot scores.
/// Detections come out in row-major pixel order, then slot order.
pub fn detect_elements<T: Real>(
    outputs: &ModelOutputs<T>,
    model: &ModelConfig,
    cfg: &DecodeConfig,
) -> Result<(Vec<DetectedVertex>, Vec<DetectedEdge>)> {
    cfg.validate()?;
    let (w, h) = outputs.resolution();
    let canvas = model.input_size as f64;
    let mut vertices = Vec::new();
    let mut edges = Vec::new();
    for y in 0..h {
        for x in 0..w {
            let v_hot = candidate(outputs.vertex_heatmap.data(), w, h, x, y, cfg.heatmap_threshold, cfg.peaks);
            let e_hot = candidate(outputs.edge_heatmap.data(), w, h, x, y, cfg.heatmap_threshold, cfg.peaks);
            if !v_hot && !e_hot {
                continue;
            }
            let bundle = outputs.extract_slot_predictions((x, y))?;
            if v_hot {
                for (slot, o) in bundle.objects.into_iter().enumerate() {
                    if o.score < cfg.slot_threshold {
                        continue;
                    }
                    let a = argmax(&o.anchor_probs);
                    let bbox = decode_box(&o.box_offsets, (x, y), model.anchors[a], model.stride)
                        .clip(canvas, canvas);
                    if !bbox.is_well_formed() {
                        continue;
                    }
                    vertices.push(DetectedVertex {
                        pixel: (x, y),
                        slot,
                        category: argmax(&o.class_probs),
                        bbox,
                        embedding: o.embedding,
                        score: o.score,
                    });
                }
            }
            if e_hot {
                for (slot, r) in bundle.relations.into_iter().enumerate() {
                    if r.score < cfg.slot_threshold {
                        continue;
                    }
                    edges.push(DetectedEdge {
                        pixel: (x, y),
                        slot,
                        predicate: argmax(&r.predicate_probs),
                        source_ref: r.source_embedding,
                        target_ref: r.target_embedding,
                        resolved_source: 0,
                        resolved_target: 0,
                        score: r.score,
                    });
                }
            }
        }
    }
    Ok((vertices, edges))
}

fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Index of the vertex whose embedding is nearest; ties go to the lower index.
pub fn nearest_vertex(vertices: &[DetectedVertex], reference: &[f64]) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, v) in vertices.iter().enumerate() {
        let d = squared_distance(&v.embedding, reference);
        if best.map_or(true, |(_, bd)| d < bd) {
            best = Some((i, d));
        }
    }
    best.map(|b| b.0)
}

/// Drops every vertex overlapping a higher-scored same-category vertex at
/// IoU >= 0.9.
fn dedup_vertices(vertices: Vec<DetectedVertex>) -> Vec<DetectedVertex> {
    let mut order: Vec<usize> = (0..vertices.len()).collect();
    order.sort_by(|&a, &b| vertices[b].score.total_cmp(&vertices[a].score).then(a.cmp(&b)));
    let mut keep = vec![false; vertices.len()];
    for (k, &i) in order.iter().enumerate() {
        keep[i] = !order[..k].iter().any(|&j| {
            keep[j] && vertices[j].category == vertices[i].category && vertices[j].bbox.iou(&vertices[i].bbox) >= 0.9
        });
    }
    vertices.into_iter().zip(keep).filter_map(|(v, k)| k.then_some(v)).collect()
}

/// Links edges to their nearest vertices and ranks the resulting tuples.
pub fn assemble_graph(
    vertices: Vec<DetectedVertex>,
    mut edges: Vec<DetectedEdge>,
    cfg: &DecodeConfig,
) -> PredictedGraph {
    let vertices = if cfg.dedup { dedup_vertices(vertices) } else { vertices };
    if vertices.is_empty() {
        return PredictedGraph {
            dropped_edges: edges.len(),
            ..PredictedGraph::default()
        };
    }
    for e in &mut edges {
        e.resolved_source = nearest_vertex(&vertices, &e.source_ref).expect("vertices exist");
        e.resolved_target = nearest_vertex(&vertices, &e.target_ref).expect("vertices exist");
    }
    let mut ranking: Vec<RankedTuple> = edges
        .iter()
        .enumerate()
        .map(|(i, e)| RankedTuple {
            edge: i,
            score: match cfg.ranking {
                RankingScore::Product => {
                    e.score * vertices[e.resolved_source].score * vertices[e.resolved_target].score
                }
                RankingScore::EdgeOnly => e.score,
            },
        })
        .collect();
    ranking.sort_by(|a, b| {
        let (ea, eb) = (&edges[a.edge], &edges[b.edge]);
        match b.score.total_cmp(&a.score) {
            Ordering::Equal => (ea.pixel, ea.slot).cmp(&(eb.pixel, eb.slot)),
            o => o,
        }
    });
    PredictedGraph {
        vertices,
        edges,
        ranking,
        dropped_edges: 0,
    }
}

/// `detect_elements` followed by `assemble_graph`.
pub fn decode<T: Real>(outputs: &ModelOutputs<T>, model: &ModelConfig, cfg: &DecodeConfig) -> Result<PredictedGraph> {
    let (v, e) = detect_elements(outputs, model, cfg)?;
    Ok(assemble_graph(v, e, cfg))
}

mod ideal;

pub use ideal::ideal_outputs;
