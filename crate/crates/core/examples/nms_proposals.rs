//! Score-ordered non-maximum suppression on random proposals and the
//! fixed-size top-K slot assignment.
//!
//! `cargo run --release --example nms_proposals -- [seed]`

use rand::Rng;
use segstitch::boxes::{nms, overlap, score_order, select_top_k, BoundingBox, ProposalSet, ALPHA_TEST, ALPHA_TRAIN, K_MAX_DIGITS};
use segstitch::grid::{BinaryField, ProbField};
use segstitch::rng::seeded;

fn main() -> anyhow::Result<()> {
    let seed: u64 = std::env::args().nth(1).map_or(Ok(3), |s| s.parse())?;
    let mut rng = seeded(seed);
    let (rows, cols) = (4, 4);
    let boxes: Vec<BoundingBox> = (0..rows * cols)
        .map(|i| {
            let (r, c) = ((i / cols) as f64, (i % cols) as f64);
            let size = rng.random_range(14.0..30.0);
            BoundingBox::new(10.0 + 20.0 * c + rng.random_range(-6.0..6.0), 10.0 + 20.0 * r + rng.random_range(-6.0..6.0), size, size)
        })
        .collect();
    let probs = ProbField::from_vec(rows, cols, (0..rows * cols).map(|_| rng.random::<f64>()).collect())?;
    let provisional = BinaryField::from_vec(rows, cols, probs.values().iter().map(|&p| rng.random::<f64>() < p).collect())?;
    let set = ProposalSet::new(boxes, probs, provisional)?;
    println!("{} proposals, {} provisionally on", set.len(), set.provisional.cardinality());

    for alpha in [ALPHA_TRAIN, ALPHA_TEST] {
        let kept = nms(&set, alpha)?;
        let on = kept.on_indices();
        let worst = on
            .iter()
            .flat_map(|&a| on.iter().filter(move |&&b| b > a).map(move |&b| (a, b)))
            .map(|(a, b)| overlap(&set.boxes[a], &set.boxes[b]).map(|o| o.iomin))
            .try_fold(0.0f64, |m, o| o.map(|o| m.max(o)))?;
        let again = nms(&ProposalSet::new(set.boxes.clone(), set.probs.clone(), kept.clone())?, alpha)?;
        println!("alpha={alpha}: kept {:?}, max pairwise IoMIN {worst:.3}, idempotent {}", on, again == kept);
    }

    let kept = nms(&set, ALPHA_TEST)?;
    let scores = set.scores();
    println!("score order: {:?}", score_order(&scores));
    for (k, slot) in select_top_k(&kept, &scores, K_MAX_DIGITS)?.iter().enumerate() {
        println!("  slot {k}: index {:?} coeff {}", slot.index, slot.coeff);
    }
    Ok(())
}
