use ndarray::ArrayView2;

use crate::boxes::{BoundingBox, ProposalSet};
use crate::error::{Error, Result};
use crate::grid::ProbField;

/// Blend fraction held during the first epochs before annealing to zero.
pub const WARMUP_FRACTION: f64 = 0.4;

/// `lambda * sum_p sum_{k != k'} w_k(p) w_k'(p)`, over ordered pairs.
pub fn overlap_penalty(weights: &[ArrayView2<f64>], lambda: f64) -> Result<f64> {
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(Error::param(format!("overlap multiplier must be non-negative, got {lambda}")));
    }
    let Some(first) = weights.first() else {
        return Ok(0.0);
    };
    let dims = first.dim();
    if let Some(bad) = weights.iter().find(|w| w.dim() != dims) {
        return Err(Error::dims(dims, bad.dim()));
    }
    let mut total = 0.0;
    for r in 0..dims.0 {
        for c in 0..dims.1 {
            let (mut s, mut s2) = (0.0, 0.0);
            for w in weights {
                let v = w[(r, c)];
                s += v;
                s2 += v * v;
            }
            total += s * s - s2;
        }
    }
    Ok(lambda * total)
}

/// Mean of `delta` over the pixels whose centres lie inside the box, clipped
/// to the canvas; 0 when no centre is inside.
fn box_mean(delta: ArrayView2<f64>, b: &BoundingBox) -> f64 {
    let (h, w) = delta.dim();
    let range = |lo: f64, hi: f64, n: usize| {
        let a = (lo - 0.5).ceil().clamp(0.0, n as f64) as usize;
        let z = (hi - 0.5).ceil().clamp(0.0, n as f64) as usize;
        a..z.max(a)
    };
    let (rows, cols) = (range(b.top(), b.bottom(), h), range(b.left(), b.right(), w));
    let n = rows.len() * cols.len();
    if n == 0 {
        return 0.0;
    }
    let mut s = 0.0;
    for r in rows {
        for c in cols.clone() {
            s += delta[(r, c)];
        }
    }
    s / n as f64
}

/// `(1 - f) p + f rank / n`, where proposals are ranked 1..n ascending by
/// their mean background residual (equal means: lower index, lower rank).
pub fn warmup_blend(proposals: &ProposalSet, delta: ArrayView2<f64>, f_t: f64) -> Result<ProbField> {
    if !(0.0..=1.0).contains(&f_t) {
        return Err(Error::param(format!("blend fraction must lie in [0, 1], got {f_t}")));
    }
    let p = &proposals.probs;
    if f_t == 0.0 {
        return Ok(p.clone());
    }
    let means: Vec<f64> = proposals.boxes.iter().map(|b| box_mean(delta, b)).collect();
    let mut order: Vec<usize> = (0..means.len()).collect();
    order.sort_by(|&a, &b| means[a].total_cmp(&means[b]).then(a.cmp(&b)));
    let n = means.len() as f64;
    let mut out = vec![0.0; means.len()];
    for (pos, &i) in order.iter().enumerate() {
        let rank = (pos + 1) as f64;
        out[i] = ((1.0 - f_t) * p.get(i) + f_t * rank / n).clamp(0.0, 1.0);
    }
    ProbField::from_vec(p.rows(), p.cols(), out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::BinaryField;
    use crate::rng::seeded;
    use ndarray::{s, Array2};
    use proptest::prelude::*;
    use rand::Rng;

    #[test]
    fn disjoint_supports_have_no_penalty() {
        let mut a = Array2::zeros((6, 6));
        let mut b = Array2::zeros((6, 6));
        a.slice_mut(s![0..3, ..]).fill(0.9);
        b.slice_mut(s![3..6, ..]).fill(0.9);
        assert_eq!(overlap_penalty(&[a.view(), b.view()], 1.0).unwrap(), 0.0);
    }

    #[test]
    fn identical_unit_masks_count_both_orders() {
        let mut a = Array2::zeros((5, 5));
        a.slice_mut(s![1..4, 1..3]).fill(1.0);
        assert_eq!(overlap_penalty(&[a.view(), a.view()], 1.0).unwrap(), 12.0);
    }

    #[test]
    fn three_instances_triple_loop() {
        let mut rng = seeded(6);
        let ws: Vec<Array2<f64>> = (0..3).map(|_| Array2::from_shape_fn((4, 5), |_| rng.random::<f64>())).collect();
        let mut want = 0.0;
        for r in 0..4 {
            for c in 0..5 {
                for k in 0..3 {
                    for j in 0..3 {
                        if k != j {
                            want += ws[k][(r, c)] * ws[j][(r, c)];
                        }
                    }
                }
            }
        }
        let views: Vec<_> = ws.iter().map(|w| w.view()).collect();
        let got = overlap_penalty(&views, 0.7).unwrap();
        assert!((got - 0.7 * want).abs() < 1e-12);
    }

    fn two_proposals() -> (ProposalSet, Array2<f64>) {
        let boxes = vec![BoundingBox::new(5.0, 5.0, 6.0, 6.0), BoundingBox::new(15.0, 5.0, 6.0, 6.0)];
        let probs = ProbField::from_vec(1, 2, vec![0.5, 0.5]).unwrap();
        let set = ProposalSet::new(boxes, probs, BinaryField::zeros(1, 2)).unwrap();
        let mut delta = Array2::zeros((10, 20));
        // bright blob under the second proposal only
        delta.slice_mut(s![3..7, 13..17]).fill(1.0);
        (set, delta)
    }

    #[test]
    fn zero_fraction_is_identity() {
        let (set, delta) = two_proposals();
        assert_eq!(warmup_blend(&set, delta.view(), 0.0).unwrap(), set.probs);
    }

    #[test]
    fn blob_proposal_is_promoted() {
        let (set, delta) = two_proposals();
        let out = warmup_blend(&set, delta.view(), WARMUP_FRACTION).unwrap();
        assert!(out.get(1) > out.get(0));
        assert!((out.get(1) - (0.6 * 0.5 + 0.4)).abs() < 1e-15);
        assert!((out.get(0) - (0.6 * 0.5 + 0.2)).abs() < 1e-15);
    }

    proptest! {
        #[test]
        fn penalty_zero_iff_disjoint(bits in proptest::collection::vec(0u8..4, 16)) {
            let planes: Vec<Array2<f64>> = (0..2)
                .map(|k| Array2::from_shape_fn((4, 4), |(r, c)| if bits[r * 4 + c] >> k & 1 == 1 { 0.5 } else { 0.0 }))
                .collect();
            let views: Vec<_> = planes.iter().map(|p| p.view()).collect();
            let pen = overlap_penalty(&views, 1.0).unwrap();
            let shared = bits.iter().any(|&b| b == 3);
            prop_assert_eq!(pen > 0.0, shared);
        }

        #[test]
        fn blend_is_a_prob_field(
            probs in proptest::collection::vec(0.0f64..=1.0, 9),
            f in 0.0f64..=1.0,
            seed in 0u64..1000,
        ) {
            let mut rng = seeded(seed);
            let boxes = (0..9).map(|_| BoundingBox::new(rng.random_range(0.0..30.0), rng.random_range(0.0..30.0), 8.0, 8.0)).collect();
            let set = ProposalSet::new(boxes, ProbField::from_vec(3, 3, probs).unwrap(), BinaryField::zeros(3, 3)).unwrap();
            let delta = Array2::from_shape_fn((30, 30), |_| rng.random::<f64>());
            let out = warmup_blend(&set, delta.view(), f).unwrap();
            prop_assert!(out.values().iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }
}
