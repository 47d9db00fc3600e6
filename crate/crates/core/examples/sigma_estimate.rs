//! Noise-scale estimation on generated scenes at several true noise levels.
//!
//! `cargo run --release --example sigma_estimate`

use segstitch::objective::estimate_sigma;
use segstitch::rng::{stream_rng, Stream};
use segstitch::scene::{generate_scene, SceneConfig};

fn main() -> anyhow::Result<()> {
    println!("true_sigma\testimate\tmethod");
    for sigma in [0.02, 0.05, 0.1] {
        let cfg = SceneConfig { sigma, ..SceneConfig::default() };
        for seed in 0..3 {
            let b = generate_scene(&cfg, &mut stream_rng(seed, Stream::Scene, 0))?;
            let est = estimate_sigma(b.image.view())?;
            println!("{sigma}\t{:.4}\t{:?}", est.sigma, est.method);
        }
    }
    Ok(())
}
