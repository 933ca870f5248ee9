//! Prior-detection input: per box group, one channel with a 1 at each box
//! center cell and one channel with the union of the box masks, both at
//! output resolution.

use super::graph::{ground_vertex, BBox};
use crate::diffcore::Tensor;

/// How boxes are split into channel pairs.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PriorGrouping {
    ByCategory,
    ByAnchor,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PriorLayout {
    pub categories: usize,
    /// Anchor shapes `(w, h)` in input pixels.
    pub anchors: Vec<(f64, f64)>,
    pub stride: usize,
    pub output: (usize, usize),
}

impl PriorLayout {
    pub fn groups(&self, grouping: PriorGrouping) -> usize {
        match grouping {
            PriorGrouping::ByCategory => self.categories,
            PriorGrouping::ByAnchor => self.anchors.len(),
        }
    }

    /// Channel count of the combined model input: a category block
    /// followed by an anchor block.
    pub fn input_channels(&self) -> usize {
        2 * (self.categories + self.anchors.len())
    }
}

/// Index of the anchor with the highest IoU against a center-aligned box of
/// size `(w, h)`; ties go to the lower index.
pub fn best_anchor(w: f64, h: f64, anchors: &[(f64, f64)]) -> usize {
    let mut best = (0, f64::NEG_INFINITY);
    for (i, &(aw, ah)) in anchors.iter().enumerate() {
        let inter = w.min(aw) * h.min(ah);
        let iou = inter / (w * h + aw * ah - inter);
        if iou > best.1 {
            best = (i, iou);
        }
    }
    best.0
}

/// Grouping used for a box list: by category when every box is labelled,
/// otherwise by anchor.
pub fn grouping_for(boxes: &[(BBox, Option<usize>)]) -> PriorGrouping {
    if !boxes.is_empty() && boxes.iter().all(|(_, c)| c.is_some()) {
        PriorGrouping::ByCategory
    } else {
        PriorGrouping::ByAnchor
    }
}

/// Encodes boxes as `[2 * groups, out_h, out_w]`.
pub fn encode_prior_detections(boxes: &[(BBox, Option<usize>)], layout: &PriorLayout) -> Tensor<f32> {
    let grouping = grouping_for(boxes);
    let (ow, oh) = layout.output;
    let groups = layout.groups(grouping);
    let mut t = Tensor::zeros(&[2 * groups, oh, ow]);
    let plane = ow * oh;
    let s = layout.stride as f64;
    let data = t.data_mut();
    for (bbox, category) in boxes {
        let group = match (grouping, category) {
            (PriorGrouping::ByCategory, Some(c)) => (*c).min(groups - 1),
            _ => best_anchor(bbox.width(), bbox.height(), &layout.anchors),
        };
        let (gx, gy) = ground_vertex(bbox, layout.stride, layout.output);
        data[2 * group * plane + gy * ow + gx] = 1.0;
        let mask = &mut data[(2 * group + 1) * plane..(2 * group + 2) * plane];
        for y in 0..oh {
            for x in 0..ow {
                if bbox.contains_point((x as f64 + 0.5) * s, (y as f64 + 0.5) * s) {
                    mask[y * ow + x] = 1.0;
                }
            }
        }
    }
    t
}

/// Full model prior input with the encoding placed in its block and the
/// other block left at zero.
pub fn prior_input(boxes: &[(BBox, Option<usize>)], layout: &PriorLayout) -> Tensor<f32> {
    let (ow, oh) = layout.output;
    let plane = ow * oh;
    let mut full = Tensor::zeros(&[layout.input_channels(), oh, ow]);
    if boxes.is_empty() {
        return full;
    }
    let enc = encode_prior_detections(boxes, layout);
    let offset = match grouping_for(boxes) {
        PriorGrouping::ByCategory => 0,
        PriorGrouping::ByAnchor => 2 * layout.categories,
    };
    full.data_mut()[offset * plane..offset * plane + enc.numel()].copy_from_slice(enc.data());
    full
}

#[cfg(test)]
mod tests {
    use super::*;

    fn layout() -> PriorLayout {
        PriorLayout {
            categories: 9,
            anchors: vec![(12.0, 12.0), (20.0, 20.0), (32.0, 32.0), (14.0, 28.0), (28.0, 14.0)],
            stride: 4,
            output: (32, 32),
        }
    }

    #[test]
    fn no_boxes_encode_to_zero() {
        let t = encode_prior_detections(&[], &layout());
        assert!(t.data().iter().all(|&v| v == 0.0));
        assert!(prior_input(&[], &layout()).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn full_canvas_box() {
        let l = layout();
        let t = encode_prior_detections(&[(BBox::new(0.0, 0.0, 128.0, 128.0), None)], &l);
        let g = best_anchor(128.0, 128.0, &l.anchors);
        let plane = 32 * 32;
        let centers = &t.data()[2 * g * plane..(2 * g + 1) * plane];
        let mask = &t.data()[(2 * g + 1) * plane..(2 * g + 2) * plane];
        assert!(mask.iter().all(|&v| v == 1.0));
        assert_eq!(centers.iter().filter(|&&v| v == 1.0).count(), 1);
        assert_eq!(centers[16 * 32 + 16], 1.0);
    }

    #[test]
    fn overlapping_masks_union() {
        let l = layout();
        let a = BBox::new(10.0, 10.0, 40.0, 40.0);
        let b = BBox::new(30.0, 20.0, 60.0, 50.0);
        let both = encode_prior_detections(&[(a, Some(2)), (b, Some(2))], &l);
        let ea = encode_prior_detections(&[(a, Some(2))], &l);
        let eb = encode_prior_detections(&[(b, Some(2))], &l);
        let plane = 32 * 32;
        let m = |t: &Tensor<f32>| t.data()[5 * plane..6 * plane].to_vec();
        let expect: Vec<f32> = m(&ea).iter().zip(m(&eb)).map(|(x, y)| x.max(y)).collect();
        assert_eq!(m(&both), expect);
    }

    #[test]
    fn best_anchor_prefers_matching_shape() {
        let anchors = layout().anchors;
        assert_eq!(best_anchor(12.0, 12.0, &anchors), 0);
        assert_eq!(best_anchor(14.0, 30.0, &anchors), 3);
        assert_eq!(best_anchor(30.0, 13.0, &anchors), 4);
    }
}
