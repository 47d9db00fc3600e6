//! Community counts across resolutions on a fixture of touching nuclei, and
//! the automatically selected resolution.
//!
//! `cargo run --release --example resolution_sweep`

use ndarray::Array2;
use segstitch::app::segment_with_score;
use segstitch::consensus::{consensus_segment, ConsensusConfig, Objective, ResolutionConfig, ResolutionMode, SimulatedSampler};
use segstitch::scene::{LabelMap, MixingStack, PosteriorNoise};

/// Pairs of overlapping disks on a 120x120 canvas.
fn merged_fixture() -> LabelMap {
    let centres = [(30.0, 25.0), (30.0, 41.0), (85.0, 30.0), (95.0, 42.0), (40.0, 90.0), (55.0, 95.0), (90.0, 90.0)];
    let mut labels = Array2::<u32>::zeros((120, 120));
    for ((r, c), l) in labels.indexed_iter_mut() {
        for (k, &(cy, cx)) in centres.iter().enumerate() {
            if (r as f64 - cy).powi(2) + (c as f64 - cx).powi(2) <= 100.0 {
                *l = k as u32 + 1;
            }
        }
    }
    LabelMap::new(labels)
}

fn main() -> anyhow::Result<()> {
    let truth = merged_fixture();
    let sampler = SimulatedSampler {
        truth: MixingStack::one_hot(&truth, 7)?,
        noise: PosteriorNoise::default(),
        min_obj_px: 12,
        n_post: 8,
        seed: 1,
    };
    for objective in [Objective::Cpm, Objective::Rb] {
        let (base, grid): (f64, &[f64]) = match objective {
            Objective::Cpm => (0.3, &[0.05, 0.1, 0.3, 0.6, 0.9]),
            Objective::Rb => (1.0, &[0.25, 0.5, 1.0, 2.0, 4.0]),
        };
        let cfg = ConsensusConfig {
            window_px: 60,
            stride_px: 20,
            resolution: ResolutionConfig { objective, gamma: base, d_c: 12.0, e_min: ResolutionConfig::E_MIN },
            mode: ResolutionMode::Fixed,
            fg_threshold: ConsensusConfig::FG_THRESHOLD,
        };
        let (out, sweep) = segment_with_score((120, 120), &sampler, &cfg, 1, grid)?;
        println!("{objective:?}: gamma={base} count={} sample NMI {:.3}", out.labels.count, out.nmi.unwrap_or(f64::NAN));
        for (g, n) in sweep {
            println!("  gamma={g}: {n} communities");
        }
        let auto = ConsensusConfig { mode: ResolutionMode::Auto { grid: grid.to_vec() }, ..cfg };
        let chosen = consensus_segment((120, 120), &sampler, &auto, 1)?;
        println!("  auto: gamma={} count={}", chosen.gamma, chosen.labels.count);
    }
    let cfg = ConsensusConfig {
        window_px: 60,
        stride_px: 20,
        resolution: ResolutionConfig { objective: Objective::Rb, gamma: 100.0, d_c: 12.0, e_min: ResolutionConfig::E_MIN },
        mode: ResolutionMode::Fixed,
        fg_threshold: ConsensusConfig::FG_THRESHOLD,
    };
    let (_, large) = segment_with_score((120, 120), &sampler, &cfg, 1, &[100.0, 500.0, 1000.0])?;
    println!("Rb at large resolutions: {large:?}");
    println!("truth: 7 disks");
    Ok(())
}
