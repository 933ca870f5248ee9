use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::diffcore::Tensor;
use crate::error::{Error, Result};
use crate::graphmodel::{encode_box, ModelConfig, ModelOutputs, ObjectSlotMaps, RelationSlotMaps};
use crate::scenegen::{best_anchor, SceneGraph};

const CONFIDENT: f64 = 30.0;

fn maps(h: usize, w: usize, k: usize) -> Tensor<f64> {
    Tensor::zeros(&[h, w, k])
}

/// The outputs a perfect model would produce for `graph`: indicator
/// heatmaps, ground truth placed in randomly permuted slots, vertex
/// embeddings drawn at pairwise distance at least the push margin, and edge
/// references equal to their endpoints' embeddings.
pub fn ideal_outputs(graph: &SceneGraph, cfg: &ModelConfig, seed: u64) -> Result<ModelOutputs<f64>> {
    if !graph.respects_slots(cfg.object_slots, cfg.relation_slots) {
        return Err(Error::Invalid("graph exceeds the slot capacity".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (h, w) = (cfg.output_size, cfg.output_size);
    let d = cfg.embedding_dim;
    let m = cfg.push_margin;

    let mut embeddings: Vec<Vec<f64>> = Vec::with_capacity(graph.vertices.len());
    let span = m * (graph.vertices.len().max(1) as f64);
    while embeddings.len() < graph.vertices.len() {
        let e: Vec<f64> = (0..d).map(|_| rng.gen_range(-span..=span)).collect();
        let clear = embeddings
            .iter()
            .all(|o| o.iter().zip(&e).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt() >= m);
        if clear {
            embeddings.push(e);
        }
    }

    let mut out = ModelOutputs {
        vertex_heatmap: Tensor::zeros(&[h, w]),
        edge_heatmap: Tensor::zeros(&[h, w]),
        objects: (0..cfg.object_slots)
            .map(|_| ObjectSlotMaps {
                class_logits: maps(h, w, cfg.categories),
                anchor_logits: maps(h, w, cfg.anchor_count()),
                box_offsets: maps(h, w, 4),
                embedding: maps(h, w, d),
                score: Tensor::zeros(&[h, w]),
            })
            .collect(),
        relations: (0..cfg.relation_slots)
            .map(|_| RelationSlotMaps {
                predicate_logits: maps(h, w, cfg.predicates),
                source_embedding: maps(h, w, d),
                target_embedding: maps(h, w, d),
                score: Tensor::zeros(&[h, w]),
            })
            .collect(),
    };

    for (pixel, members) in graph.vertices_by_pixel() {
        let (x, y) = pixel;
        let at = y * w + x;
        out.vertex_heatmap.data_mut()[at] = 1.0;
        let mut slots: Vec<usize> = (0..cfg.object_slots).collect();
        slots.shuffle(&mut rng);
        for (&v, &j) in members.iter().zip(&slots) {
            let gt = &graph.vertices[v];
            let a = best_anchor(gt.bbox.width(), gt.bbox.height(), &cfg.anchors);
            let s = &mut out.objects[j];
            s.class_logits.data_mut()[at * cfg.categories + gt.category] = CONFIDENT;
            s.anchor_logits.data_mut()[at * cfg.anchor_count() + a] = CONFIDENT;
            let t = encode_box(&gt.bbox, pixel, cfg.anchors[a], cfg.stride);
            s.box_offsets.data_mut()[at * 4..at * 4 + 4].copy_from_slice(&t);
            s.embedding.data_mut()[at * d..(at + 1) * d].copy_from_slice(&embeddings[v]);
            s.score.data_mut()[at] = 1.0;
        }
    }
    for (pixel, members) in graph.edges_by_pixel() {
        let at = pixel.1 * w + pixel.0;
        out.edge_heatmap.data_mut()[at] = 1.0;
        let mut slots: Vec<usize> = (0..cfg.relation_slots).collect();
        slots.shuffle(&mut rng);
        for (&e, &k) in members.iter().zip(&slots) {
            let gt = &graph.edges[e];
            let s = &mut out.relations[k];
            s.predicate_logits.data_mut()[at * cfg.predicates + gt.predicate] = CONFIDENT;
            s.source_embedding.data_mut()[at * d..(at + 1) * d].copy_from_slice(&embeddings[gt.source]);
            s.target_embedding.data_mut()[at * d..(at + 1) * d].copy_from_slice(&embeddings[gt.target]);
            s.score.data_mut()[at] = 1.0;
        }
    }
    Ok(out)
}
