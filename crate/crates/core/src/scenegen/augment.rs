use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::graph::{ground_vertex, BBox, EdgeGT, SceneGraph, VertexGT};
use super::render::RasterImage;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentConfig {
    /// Largest translation per axis, in input pixels.
    pub max_shift: f64,
    pub min_scale: f64,
    pub max_scale: f64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig {
            max_shift: 12.0,
            min_scale: 0.85,
            max_scale: 1.15,
        }
    }
}

/// Scaling about the canvas center followed by a translation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Affine {
    pub scale: f64,
    pub tx: f64,
    pub ty: f64,
}

impl Affine {
    pub const IDENTITY: Affine = Affine {
        scale: 1.0,
        tx: 0.0,
        ty: 0.0,
    };

    pub fn sample<R: Rng + ?Sized>(cfg: &AugmentConfig, rng: &mut R) -> Self {
        let scale = if cfg.max_scale > cfg.min_scale {
            rng.gen_range(cfg.min_scale..=cfg.max_scale)
        } else {
            cfg.min_scale
        };
        let mut shift = || {
            if cfg.max_shift > 0.0 {
                rng.gen_range(-cfg.max_shift..=cfg.max_shift).round()
            } else {
                0.0
            }
        };
        let (tx, ty) = (shift(), shift());
        Affine { scale, tx, ty }
    }

    fn forward(&self, (x, y): (f64, f64), center: (f64, f64)) -> (f64, f64) {
        (
            self.scale * (x - center.0) + center.0 + self.tx,
            self.scale * (y - center.1) + center.1 + self.ty,
        )
    }

    fn inverse(&self, (x, y): (f64, f64), center: (f64, f64)) -> (f64, f64) {
        (
            (x - center.0 - self.tx) / self.scale + center.0,
            (y - center.1 - self.ty) / self.scale + center.1,
        )
    }

    pub fn map_box(&self, b: &BBox, center: (f64, f64)) -> BBox {
        let (x0, y0) = self.forward((b.x0, b.y0), center);
        let (x1, y1) = self.forward((b.x1, b.y1), center);
        BBox::new(x0, y0, x1, y1)
    }
}

/// Samples a random affine transform from `seed` and applies it.
pub fn augment(
    image: &RasterImage,
    graph: &SceneGraph,
    cfg: &AugmentConfig,
    stride: usize,
    seed: u64,
) -> (RasterImage, SceneGraph) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let affine = Affine::sample(cfg, &mut rng);
    apply_affine(image, graph, &affine, stride)
}

/// Warps the image (nearest neighbour) and moves every annotation by the
/// same map. Vertices whose box center leaves the canvas are dropped with
/// their incident edges; surviving edge groundings are recomputed.
pub fn apply_affine(
    image: &RasterImage,
    graph: &SceneGraph,
    affine: &Affine,
    stride: usize,
) -> (RasterImage, SceneGraph) {
    let (w, h) = (image.width, image.height);
    let center = (w as f64 / 2.0, h as f64 / 2.0);
    let fill = [image.get(0, 0, 0), image.get(1, 0, 0), image.get(2, 0, 0)];

    let mut out = RasterImage::filled(w, h, fill);
    for y in 0..h {
        for x in 0..w {
            let (sx, sy) = affine.inverse((x as f64 + 0.5, y as f64 + 0.5), center);
            let (sx, sy) = (sx.floor(), sy.floor());
            if sx >= 0.0 && sy >= 0.0 && (sx as usize) < w && (sy as usize) < h {
                let (sx, sy) = (sx as usize, sy as usize);
                out.set_rgb(x, y, [image.get(0, sx, sy), image.get(1, sx, sy), image.get(2, sx, sy)]);
            }
        }
    }

    let output = (w / stride, h / stride);
    let mut remap = vec![None; graph.vertices.len()];
    let mut vertices = Vec::new();
    for (i, v) in graph.vertices.iter().enumerate() {
        let bbox = affine.map_box(&v.bbox, center);
        let (cx, cy) = bbox.center();
        if cx < 0.0 || cy < 0.0 || cx >= w as f64 || cy >= h as f64 {
            continue;
        }
        remap[i] = Some(vertices.len());
        vertices.push(VertexGT {
            category: v.category,
            bbox,
            grounding: ground_vertex(&bbox, stride, output),
        });
    }
    let edges = graph
        .edges
        .iter()
        .filter_map(|e| {
            let (s, t) = (remap[e.source]?, remap[e.target]?);
            Some(EdgeGT::between(&vertices, s, t, e.predicate))
        })
        .collect();
    (
        out,
        SceneGraph {
            vertices,
            edges,
            image_size: graph.image_size,
        },
    )
}
