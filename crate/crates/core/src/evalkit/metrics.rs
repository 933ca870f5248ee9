use crate::error::{Error, Result};
use crate::scenegen::{BBox, Triplet};

/// Intersection over union. A zero-area box gives 0; callers that care
/// count those cases through [`match_tuples`].
pub fn iou(a: &BBox, b: &BBox) -> f64 {
    if a.area() <= 0.0 || b.area() <= 0.0 {
        return 0.0;
    }
    a.iou(b)
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TupleMatches {
    /// `(proposal rank, ground-truth index)` in rank order.
    pub pairs: Vec<(usize, usize)>,
    /// IoU checks that involved a zero-area box.
    pub degenerate: usize,
}

impl TupleMatches {
    pub fn matched(&self) -> usize {
        self.pairs.len()
    }

    /// Matches among the first `k` proposals.
    pub fn matched_within(&self, k: usize) -> usize {
        self.pairs.iter().filter(|p| p.0 < k).count()
    }
}

/// Whether a proposal satisfies a ground-truth tuple: equal labels and both
/// boxes at IoU >= `iou_t`.
pub fn tuple_agrees(p: &Triplet, g: &Triplet, iou_t: f64) -> bool {
    p.subject_category == g.subject_category
        && p.object_category == g.object_category
        && p.predicate == g.predicate
        && iou(&p.subject_box, &g.subject_box) >= iou_t
        && iou(&p.object_box, &g.object_box) >= iou_t
}

/// Greedy matching in rank order over the first `k` proposals: each
/// proposal takes the lowest-indexed unconsumed ground-truth tuple it
/// agrees with.
pub fn match_tuples(proposals: &[Triplet], gt: &[Triplet], iou_t: f64, k: usize) -> Result<TupleMatches> {
    let mut used = vec![false; gt.len()];
    let mut out = TupleMatches::default();
    for (rank, p) in proposals.iter().take(k).enumerate() {
        for (j, g) in gt.iter().enumerate() {
            if used[j] {
                continue;
            }
            if [p.subject_box, p.object_box, g.subject_box, g.object_box]
                .iter()
                .any(|b| b.area() <= 0.0)
            {
                out.degenerate += 1;
            }
            if tuple_agrees(p, g, iou_t) {
                used[j] = true;
                out.pairs.push((rank, j));
                break;
            }
        }
    }
    check_single_consumption(&out, gt.len())?;
    Ok(out)
}

/// Every ground-truth tuple is consumed at most once.
pub fn check_single_consumption(m: &TupleMatches, gt_len: usize) -> Result<()> {
    let mut seen = vec![false; gt_len];
    for &(_, j) in &m.pairs {
        if j >= gt_len || seen[j] {
            return Err(Error::Invalid(format!("ground-truth tuple {j} consumed twice")));
        }
        seen[j] = true;
    }
    Ok(())
}

/// Total matched over total ground truth; `None` without ground truth.
pub fn recall_at_k(per_image: &[(usize, usize)]) -> Option<f64> {
    let (m, g) = per_image
        .iter()
        .fold((0, 0), |(m, g), &(mi, gi)| (m + mi, g + gi));
    (g > 0).then(|| m as f64 / g as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(s: usize, p: usize, o: usize, sb: BBox, ob: BBox) -> Triplet {
        Triplet {
            subject_category: s,
            subject_box: sb,
            predicate: p,
            object_category: o,
            object_box: ob,
        }
    }

    #[test]
    fn iou_examples() {
        let a = BBox::new(0.0, 0.0, 10.0, 10.0);
        assert_eq!(iou(&a, &a), 1.0);
        assert_eq!(iou(&a, &BBox::new(20.0, 20.0, 30.0, 30.0)), 0.0);
        assert!((iou(&a, &BBox::new(5.0, 0.0, 15.0, 10.0)) - 50.0 / 150.0).abs() < 1e-15);
        assert_eq!(iou(&a, &BBox::new(3.0, 3.0, 3.0, 8.0)), 0.0);
    }

    #[test]
    fn identical_and_duplicate_proposals() {
        let a = BBox::new(0.0, 0.0, 10.0, 10.0);
        let b = BBox::new(20.0, 0.0, 30.0, 10.0);
        let gt = vec![t(0, 1, 2, a, b), t(2, 3, 0, b, a)];
        assert_eq!(match_tuples(&gt, &gt, 0.5, 100).unwrap().matched(), 2);
        let dup = vec![gt[0], gt[0]];
        assert_eq!(match_tuples(&dup, &gt, 0.5, 100).unwrap().matched(), 1);
        assert_eq!(match_tuples(&gt, &gt, 0.5, 1).unwrap().matched(), 1);
    }

    #[test]
    fn degenerate_boxes_are_counted() {
        let a = BBox::new(0.0, 0.0, 10.0, 10.0);
        let z = BBox::new(0.0, 0.0, 0.0, 10.0);
        let m = match_tuples(&[t(0, 0, 0, z, a)], &[t(0, 0, 0, z, a)], 0.5, 10).unwrap();
        assert_eq!((m.matched(), m.degenerate), (0, 1));
    }

    #[test]
    fn recall_examples() {
        assert_eq!(recall_at_k(&[(3, 3), (2, 2)]), Some(1.0));
        assert_eq!(recall_at_k(&[(1, 2), (1, 2), (1, 2)]), Some(0.5));
        assert_eq!(recall_at_k(&[(0, 0)]), None);
    }
}
