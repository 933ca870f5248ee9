use serde::{Deserialize, Serialize};

use super::losses::{add_all, heatmap_loss, mean_of, pull_loss, push_loss};
use super::matching::MatchingMetric;
use super::slots::{object_pixel_terms, relation_pixel_terms, ObjectTarget, RelationTarget};
use crate::diffcore::{Real, Tape, Var};
use crate::error::Result;
use crate::graphmodel::{encode_box, GraphModel, Mode};
use crate::scenegen::{best_anchor, Pixel, SceneGraph};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossConfig {
    /// Sampled negatives per positive heatmap pixel.
    pub neg_ratio: f64,
    /// Negatives sampled for a heatmap without positives.
    pub empty_negatives: usize,
    pub matching: MatchingMetric,
    /// Whether the pull loss also moves the vertex embeddings, rather than
    /// only the edge references.
    pub pull_into_vertices: bool,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            neg_ratio: 3.0,
            empty_negatives: 16,
            matching: MatchingMetric::InnerProduct,
            pull_into_vertices: true,
        }
    }
}

/// Scalar value of every loss component for one image; `total` is their
/// unweighted sum.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBundle {
    pub heatmap_v: f64,
    pub heatmap_e: f64,
    pub pull: f64,
    pub push: f64,
    pub class_obj: f64,
    pub anchor: f64,
    pub box_offset: f64,
    pub predicate: f64,
    pub score_obj: f64,
    pub score_rel: f64,
    pub total: f64,
}

impl LossBundle {
    pub fn components(&self) -> [f64; 10] {
        [
            self.heatmap_v,
            self.heatmap_e,
            self.pull,
            self.push,
            self.class_obj,
            self.anchor,
            self.box_offset,
            self.predicate,
            self.score_obj,
            self.score_rel,
        ]
    }

    /// Component-wise mean.
    pub fn mean(bundles: &[LossBundle]) -> LossBundle {
        let n = bundles.len().max(1) as f64;
        let mut out = [0.0; 11];
        for b in bundles {
            for (o, v) in out.iter_mut().zip(b.components().into_iter().chain([b.total])) {
                *o += v / n;
            }
        }
        LossBundle {
            heatmap_v: out[0],
            heatmap_e: out[1],
            pull: out[2],
            push: out[3],
            class_obj: out[4],
            anchor: out[5],
            box_offset: out[6],
            predicate: out[7],
            score_obj: out[8],
            score_rel: out[9],
            total: out[10],
        }
    }
}

/// Ground-truth elements left out because their pixel held more elements
/// than there are slots, or because an endpoint was left out.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Truncation {
    pub vertices: usize,
    pub edges: usize,
}

#[derive(Clone, Debug)]
pub struct ImageLoss {
    pub total: Var,
    pub bundle: LossBundle,
    pub truncated: Truncation,
    /// Matched `(vertex pixel, slot)` per ground-truth vertex.
    pub vertex_slots: Vec<Option<(Pixel, usize)>>,
    pub edge_slots: Vec<Option<(Pixel, usize)>>,
}

/// Builds the full training loss for one image on `tape`.
///
/// Slot features are extracted at the ground-truth groundings. Objects are
/// matched first; relation references then use the current embeddings of
/// the slots their endpoints were matched to.
pub fn image_loss<T: Real>(
    tape: &Tape<T>,
    model: &GraphModel<T>,
    image: Var,
    prior: Option<Var>,
    graph: &SceneGraph,
    cfg: &LossConfig,
    seed: u64,
) -> Result<ImageLoss> {
    let mc = model.config();
    let trunk = model.trunk(tape, image, prior, Mode::Train)?;
    let mut truncated = Truncation::default();

    let mut vertex_groups = graph.vertices_by_pixel();
    for (_, members) in &mut vertex_groups {
        truncated.vertices += members.len().saturating_sub(mc.object_slots);
        members.truncate(mc.object_slots);
    }
    let mut kept_vertex = vec![false; graph.vertices.len()];
    for (_, members) in &vertex_groups {
        members.iter().for_each(|&v| kept_vertex[v] = true);
    }
    let usable: Vec<usize> = (0..graph.edges.len())
        .filter(|&e| kept_vertex[graph.edges[e].source] && kept_vertex[graph.edges[e].target])
        .collect();
    truncated.edges += graph.edges.len() - usable.len();
    let mut edge_groups: Vec<(Pixel, Vec<usize>)> = Vec::new();
    for (pixel, members) in graph.edges_by_pixel() {
        let mut members: Vec<usize> = members.into_iter().filter(|e| usable.contains(e)).collect();
        truncated.edges += members.len().saturating_sub(mc.relation_slots);
        members.truncate(mc.relation_slots);
        if !members.is_empty() {
            edge_groups.push((pixel, members));
        }
    }

    let vertex_pixels: Vec<Pixel> = graph.vertices.iter().map(|v| v.grounding).collect();
    let edge_pixels: Vec<Pixel> = graph.edges.iter().map(|e| e.grounding).collect();
    let heat_v = heatmap_loss(
        tape,
        trunk.vertex_heatmap,
        &vertex_pixels,
        cfg.neg_ratio,
        cfg.empty_negatives,
        seed,
    )?;
    let heat_e = heatmap_loss(
        tape,
        trunk.edge_heatmap,
        &edge_pixels,
        cfg.neg_ratio,
        cfg.empty_negatives,
        seed ^ 0x9e37_79b9_7f4a_7c15,
    )?;

    let mut vertex_slots = vec![None; graph.vertices.len()];
    let mut vertex_embedding: Vec<Option<Var>> = vec![None; graph.vertices.len()];
    let (mut class, mut anchor, mut offsets, mut score_obj) = (vec![], vec![], vec![], vec![]);
    if !vertex_groups.is_empty() {
        let pixels: Vec<Pixel> = vertex_groups.iter().map(|g| g.0).collect();
        let feats = tape.gather_pixels(trunk.features, &pixels)?;
        let slots = model.object_slots(tape, feats, Mode::Train)?;
        for (p, (pixel, members)) in vertex_groups.iter().enumerate() {
            let rows = slots.iter().map(|s| s.row(tape, p)).collect::<Result<Vec<_>>>()?;
            let targets: Vec<ObjectTarget> = members
                .iter()
                .map(|&v| {
                    let b = &graph.vertices[v].bbox;
                    let a = best_anchor(b.width(), b.height(), &mc.anchors);
                    ObjectTarget {
                        category: graph.vertices[v].category,
                        anchor: a,
                        offsets: encode_box(b, *pixel, mc.anchors[a], mc.stride),
                    }
                })
                .collect();
            let terms = object_pixel_terms(tape, *pixel, &rows, &targets, cfg.matching)?;
            for (k, &(g, j)) in terms.assignment.pairs.iter().enumerate() {
                vertex_slots[members[g]] = Some((*pixel, j));
                vertex_embedding[members[g]] = Some(terms.embeddings[k]);
            }
            class.extend(terms.class);
            anchor.extend(terms.anchor);
            offsets.extend(terms.offsets);
            score_obj.push(terms.score);
        }
    }

    let mut edge_slots = vec![None; graph.edges.len()];
    let mut references: Vec<Vec<Var>> = vec![Vec::new(); graph.vertices.len()];
    let (mut predicate, mut score_rel) = (vec![], vec![]);
    if !edge_groups.is_empty() {
        let pixels: Vec<Pixel> = edge_groups.iter().map(|g| g.0).collect();
        let feats = tape.gather_pixels(trunk.features, &pixels)?;
        let slots = model.relation_slots(tape, feats, Mode::Train)?;
        let embedding_value = |v: usize| -> Vec<f64> {
            let var = vertex_embedding[v].expect("kept vertices are matched");
            tape.value(var).data().iter().map(|x| x.to_f64_lossy()).collect()
        };
        for (p, (pixel, members)) in edge_groups.iter().enumerate() {
            let rows = slots.iter().map(|s| s.row(tape, p)).collect::<Result<Vec<_>>>()?;
            let targets: Vec<RelationTarget> = members
                .iter()
                .map(|&e| {
                    let edge = &graph.edges[e];
                    RelationTarget {
                        predicate: edge.predicate,
                        source: embedding_value(edge.source),
                        target: embedding_value(edge.target),
                    }
                })
                .collect();
            let terms = relation_pixel_terms(tape, *pixel, &rows, &targets, cfg.matching)?;
            for (k, &(g, j)) in terms.assignment.pairs.iter().enumerate() {
                let edge = &graph.edges[members[g]];
                edge_slots[members[g]] = Some((*pixel, j));
                references[edge.source].push(terms.source[k]);
                references[edge.target].push(terms.target[k]);
            }
            predicate.extend(terms.predicate);
            score_rel.push(terms.score);
        }
    }

    let kept: Vec<usize> = (0..graph.vertices.len()).filter(|&v| kept_vertex[v]).collect();
    let embeddings: Vec<Var> = kept.iter().map(|&v| vertex_embedding[v].expect("matched")).collect();
    let pull_vertices: Vec<Var> = if cfg.pull_into_vertices {
        embeddings.clone()
    } else {
        embeddings.iter().map(|&h| tape.detach(h)).collect()
    };
    let pull_refs: Vec<Vec<Var>> = kept.iter().map(|&v| references[v].clone()).collect();
    let pull = pull_loss(tape, &pull_vertices, &pull_refs)?;
    let push = push_loss(tape, &embeddings, mc.push_margin)?;

    let n_obj = class.len();
    let n_rel = predicate.len();
    let parts = [
        heat_v,
        heat_e,
        pull,
        push,
        mean_of(tape, &class, n_obj)?,
        mean_of(tape, &anchor, n_obj)?,
        mean_of(tape, &offsets, n_obj)?,
        mean_of(tape, &predicate, n_rel)?,
        mean_of(tape, &score_obj, score_obj.len() * mc.object_slots)?,
        mean_of(tape, &score_rel, score_rel.len() * mc.relation_slots)?,
    ];
    let total = add_all(tape, &parts)?;
    let v: Vec<f64> = parts.iter().map(|&p| tape.value(p).item().to_f64_lossy()).collect();
    let bundle = LossBundle {
        heatmap_v: v[0],
        heatmap_e: v[1],
        pull: v[2],
        push: v[3],
        class_obj: v[4],
        anchor: v[5],
        box_offset: v[6],
        predicate: v[7],
        score_obj: v[8],
        score_rel: v[9],
        total: tape.value(total).item().to_f64_lossy(),
    };
    Ok(ImageLoss {
        total,
        bundle,
        truncated,
        vertex_slots,
        edge_slots,
    })
}
