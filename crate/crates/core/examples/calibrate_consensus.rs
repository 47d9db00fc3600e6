//! Sweep consensus settings on tuning seeds and print suite metrics.
//!
//! `cargo run --release --example calibrate_consensus -- [scenes] [first_seed] [rho]`

use std::time::Instant;

use segstitch::consensus::{consensus_segment, ConsensusConfig, Objective, ResolutionConfig, ResolutionMode, SimulatedSampler};
use segstitch::dpp::{DppSampler, KernelParams};
use segstitch::grid::GridSpec;
use segstitch::metrics::{EvalReport, SceneMetrics};
use segstitch::rng::{stream_rng, Stream};
use segstitch::scene::{generate_scene_with, MixingStack, PosteriorNoise, SceneConfig};

fn main() -> anyhow::Result<()> {
    let args: Vec<String> = std::env::args().collect();
    let scenes: usize = args.get(1).map_or(Ok(20), |s| s.parse())?;
    let first: u64 = args.get(2).map_or(Ok(10_000), |s| s.parse())?;
    let rho: f64 = args.get(3).map_or(Ok(0.05), |s| s.parse())?;
    let scene_cfg = SceneConfig {
        grid: GridSpec::new(160, 160, 12, 24)?,
        kernel: KernelParams { rho, ell: 1.0 },
        ..SceneConfig::default()
    };
    let dpp = DppSampler::new(&scene_cfg.kernel_matrix()?)?;
    let mut bundles = Vec::new();
    for i in 0..scenes {
        let mut rng = stream_rng(first + i as u64, Stream::Scene, 0);
        bundles.push(generate_scene_with(&scene_cfg, &dpp, &mut rng)?);
    }
    let ks: Vec<usize> = bundles.iter().map(|b| b.visible_instances()).collect();
    println!("K per scene: {ks:?}");
    let settings = [
        (Objective::Cpm, 0.3, 6.0, 0.4),
        (Objective::Cpm, 0.3, 12.0, 0.4),
        (Objective::Cpm, 0.1, 12.0, 0.4),
        (Objective::Rb, 1.0, 6.0, 0.4),
        (Objective::Rb, 1.0, 12.0, 0.4),
    ];
    for (objective, gamma, d_c, fg_threshold) in settings {
        let cfg = ConsensusConfig {
            window_px: 80,
            stride_px: 20,
            resolution: ResolutionConfig { objective, gamma, d_c, e_min: ResolutionConfig::E_MIN },
            mode: ResolutionMode::Fixed,
            fg_threshold,
        };
        let t = Instant::now();
        let mut rows = Vec::new();
        for (i, b) in bundles.iter().enumerate() {
            let k = b.truth_pi.num_instances();
            let sampler = SimulatedSampler {
                truth: MixingStack::one_hot(&b.truth_labels, k)?,
                noise: PosteriorNoise::default(),
                min_obj_px: b.grid.min_obj_px,
                n_post: 8,
                seed: first + i as u64,
            };
            let out = consensus_segment((160, 160), &sampler, &cfg, first + i as u64)?;
            let truth: Vec<u32> = b.truth_labels.labels.iter().copied().collect();
            rows.push(SceneMetrics::evaluate(&truth, &out.labels.assignment)?);
        }
        let r = EvalReport::new(rows);
        let s = r.summary.unwrap();
        let errs: Vec<i64> = r.scenes.iter().map(|m| m.count_error()).collect();
        println!(
            "{objective:?} gamma={gamma} d_c={d_c} fg={fg_threshold}: within1={:.3} ari={:.3} splits={} errs={errs:?} {:.1}s",
            s.count_within_one.value,
            s.mean_ari.value,
            s.total_splits,
            t.elapsed().as_secs_f64()
        );
    }
    Ok(())
}
