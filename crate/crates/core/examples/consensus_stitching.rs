//! Overlapping windows with graph consensus against disjoint tiles with a
//! per-tile point estimate, on generated scenes with posterior noise.
//!
//! `cargo run --release --example consensus_stitching -- [scenes] [seed]`

use segstitch::app::{segment_canvas, WindowMode};
use segstitch::consensus::{ConsensusConfig, Objective, ResolutionConfig, ResolutionMode, SimulatedSampler};
use segstitch::dpp::KernelParams;
use segstitch::grid::GridSpec;
use segstitch::metrics::{EvalReport, SceneMetrics};
use segstitch::rng::{stream_rng, Stream};
use segstitch::scene::{generate_scene, MixingStack, PosteriorNoise, SceneConfig};

fn main() -> anyhow::Result<()> {
    let args: Vec<String> = std::env::args().collect();
    let scenes: u64 = args.get(1).map_or(Ok(5), |s| s.parse())?;
    let first: u64 = args.get(2).map_or(Ok(500), |s| s.parse())?;
    let scene_cfg = SceneConfig {
        grid: GridSpec::new(160, 160, 12, 24)?,
        kernel: KernelParams { rho: 0.05, ell: 1.0 },
        ..SceneConfig::default()
    };
    let cfg = ConsensusConfig {
        window_px: 80,
        stride_px: 20,
        resolution: ResolutionConfig { objective: Objective::Rb, gamma: 1.0, d_c: 12.0, e_min: ResolutionConfig::E_MIN },
        mode: ResolutionMode::Fixed,
        fg_threshold: ConsensusConfig::FG_THRESHOLD,
    };
    for mode in [WindowMode::Overlapping, WindowMode::Disjoint] {
        let mut rows = Vec::new();
        for seed in first..first + scenes {
            let b = generate_scene(&scene_cfg, &mut stream_rng(seed, Stream::Scene, 0))?;
            let sampler = SimulatedSampler {
                truth: MixingStack::one_hot(&b.truth_labels, b.truth_pi.num_instances())?,
                noise: PosteriorNoise::default(),
                min_obj_px: 12,
                n_post: 8,
                seed,
            };
            let out = segment_canvas((160, 160), &sampler, &cfg, mode, seed)?;
            let truth: Vec<u32> = b.truth_labels.labels.iter().copied().collect();
            rows.push(SceneMetrics::evaluate(&truth, &out.labels.assignment)?);
        }
        let report = EvalReport::new(rows);
        let s = report.summary.expect("non-empty suite");
        println!("{mode:?}: count within 1 {:.2}, mean ARI {:.3}, boundary splits {}", s.count_within_one.value, s.mean_ari.value, s.total_splits);
        for m in &report.scenes {
            println!("  K={} estimated {} ARI {:.3} splits {}", m.true_k, m.est_k, m.ari, m.splits);
        }
    }
    Ok(())
}
