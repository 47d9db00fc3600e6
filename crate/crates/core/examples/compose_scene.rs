//! Draw one scene from the forward model and write its image, labels and
//! mixing probabilities.
//!
//! `cargo run --release --example compose_scene -- <out_dir> [seed]`

use std::path::PathBuf;

use segstitch::io::{encode_gray_png, encode_label_png, TensorContainer};
use segstitch::rng::{stream_rng, Stream};
use segstitch::scene::{generate_scene, SceneConfig};

fn main() -> anyhow::Result<()> {
    let args: Vec<String> = std::env::args().collect();
    let out = PathBuf::from(args.get(1).map_or("scene_out", String::as_str));
    let seed: u64 = args.get(2).map_or(Ok(1), |s| s.parse())?;
    let cfg = SceneConfig::default();
    let b = generate_scene(&cfg, &mut stream_rng(seed, Stream::Scene, 0))?;

    std::fs::create_dir_all(&out)?;
    let gray = b.image.index_axis(ndarray::Axis(2), 0);
    std::fs::write(out.join("image.png"), encode_gray_png(gray, true)?)?;
    std::fs::write(out.join("labels.png"), encode_label_png(b.truth_labels.labels.view())?)?;
    let pi = b.truth_pi.as_array();
    TensorContainer::new(pi.shape().iter().map(|&d| d as u32).collect(), segstitch::io::TensorData::F32(pi.iter().map(|&v| v as f32).collect()))?.save(out.join("truth_pi.mimg"))?;

    println!("background: {:?}", b.background_kind);
    println!("active grid points: {:?}", b.truth_grid.on_indices());
    println!("visible instances: {}", b.visible_instances());
    for (k, bx) in b.truth_boxes.iter().enumerate() {
        let px = b.truth_labels.labels.iter().filter(|&&l| l as usize == k + 1).count();
        println!("  instance {}: box ({:.1}, {:.1}) {:.1}x{:.1}, {px} px", k + 1, bx.cx, bx.cy, bx.w, bx.h);
    }
    println!("wrote {}", out.display());
    Ok(())
}
