//! Anchor-relative box parameterization: `(t_x, t_y)` is the box center's
//! offset from the grounding cell's center in cell units, `(t_w, t_h)` the
//! log-ratio of box size to anchor size.

use crate::scenegen::{BBox, Pixel};

pub fn encode_box(bbox: &BBox, cell: Pixel, anchor: (f64, f64), stride: usize) -> [f64; 4] {
    let s = stride as f64;
    let (cx, cy) = bbox.center();
    [
        cx / s - (cell.0 as f64 + 0.5),
        cy / s - (cell.1 as f64 + 0.5),
        (bbox.width() / anchor.0).ln(),
        (bbox.height() / anchor.1).ln(),
    ]
}

/// Inverse of [`encode_box`]. Log-sizes are clamped so that wild
/// predictions still decode to finite boxes.
pub fn decode_box(t: &[f64; 4], cell: Pixel, anchor: (f64, f64), stride: usize) -> BBox {
    let s = stride as f64;
    let cx = (cell.0 as f64 + 0.5 + t[0]) * s;
    let cy = (cell.1 as f64 + 0.5 + t[1]) * s;
    let w = anchor.0 * t[2].clamp(-6.0, 6.0).exp();
    let h = anchor.1 * t[3].clamp(-6.0, 6.0).exp();
    BBox::from_center(cx, cy, w, h)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn centered_anchor_sized_box_encodes_to_zero() {
        let b = BBox::from_center(14.0, 18.0, 22.0, 22.0);
        assert_eq!(encode_box(&b, (3, 4), (22.0, 22.0), 4), [0.0, 0.0, 0.0, 0.0]);
    }

    proptest! {
        #[test]
        fn decode_inverts_encode(cx in 0.0..128.0f64, cy in 0.0..128.0f64, w in 4.0..60.0f64, h in 4.0..60.0f64,
                                 aw in 8.0..40.0f64, ah in 8.0..40.0f64) {
            let b = BBox::from_center(cx, cy, w, h);
            let cell = ((cx / 4.0) as usize, (cy / 4.0) as usize);
            let back = decode_box(&encode_box(&b, cell, (aw, ah), 4), cell, (aw, ah), 4);
            for (x, y) in <[f64; 4]>::from(b).into_iter().zip(<[f64; 4]>::from(back)) {
                prop_assert!((x - y).abs() < 1e-9);
            }
        }
    }
}
