//! Command implementations behind the binary: synthetic dataset export and
//! consensus segmentation with evaluation.

use std::path::{Path, PathBuf};

use ndarray::{Array2, Array3, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::RunConfig;
use crate::consensus::{
    consensus_graph, consensus_segment, detect_communities, disjoint_point_estimate, mask_background, sample_agreement, tile_plan,
    CommunityLabels, ConsensusConfig, ResolutionConfig, SimulatedSampler, WindowSampler,
};
use crate::error::{Error, Result};
use crate::io::{decode_gray_png, decode_label_png, encode_gray_png, encode_label_png, RunLengthLabels, RunLog, TensorContainer, TensorData};
use crate::metrics::{EvalReport, SceneMetrics};
use crate::rng::{stream_rng, Stream};
use crate::scene::{generate_scene_with, LabelMap, MixingStack, SceneBundle};

pub const MANIFEST: &str = "manifest.json";

/// One written file and its SHA-256.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileEntry {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SceneEntry {
    pub split: String,
    pub index: usize,
    pub instances: usize,
    pub files: Vec<FileEntry>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub seed: u64,
    pub scenes: Vec<SceneEntry>,
    /// SHA-256 over every file hash in manifest order.
    pub checksum: String,
}

fn sha_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn stack_tensor(pi: &MixingStack) -> TensorContainer {
    let (k1, h, w) = pi.as_array().dim();
    TensorContainer { dims: vec![k1 as u32, h as u32, w as u32], data: TensorData::F32(pi.as_array().iter().map(|&v| v as f32).collect()) }
}

fn image_tensor(img: &Array3<f64>) -> TensorContainer {
    let (h, w, c) = img.dim();
    TensorContainer { dims: vec![h as u32, w as u32, c as u32], data: TensorData::F32(img.iter().map(|&v| v as f32).collect()) }
}

fn scene_files(bundle: &SceneBundle) -> Result<Vec<(&'static str, Vec<u8>)>> {
    let mut out = Vec::new();
    out.push(("image.png", encode_gray_png(bundle.image.index_axis(Axis(2), 0), true)?));
    let mut buf = Vec::new();
    image_tensor(&bundle.image).write_to(&mut buf)?;
    out.push(("image.mimg", buf));
    out.push(("labels.png", encode_label_png(bundle.truth_labels.labels.view())?));
    let mut buf = Vec::new();
    stack_tensor(&bundle.truth_pi).write_to(&mut buf)?;
    out.push(("truth_pi.mimg", buf));
    let meta = serde_json::json!({
        "instances": bundle.truth_pi.num_instances(),
        "visible_instances": bundle.visible_instances(),
        "boxes": bundle.truth_boxes,
        "grid": bundle.truth_grid.on_indices(),
        "background": bundle.background_kind,
        "sigma": bundle.sigma,
    });
    out.push(("scene.json", serde_json::to_vec_pretty(&meta)?));
    Ok(out)
}

/// Draw `n_train + n_test` scenes and write each to
/// `out_dir/{train,test}/NNNNN/` with a checksummed manifest. Scene `i`
/// (train first, then test) uses scene stream `i` of the root seed.
pub fn cmd_synth(cfg: &RunConfig, out_dir: &Path) -> Result<Manifest> {
    cfg.validate()?;
    let sampler = crate::dpp::DppSampler::new(&cfg.scene.kernel_matrix()?)?;
    let jobs: Vec<(&str, usize, usize)> = (0..cfg.synth.n_train)
        .map(|i| ("train", i, i))
        .chain((0..cfg.synth.n_test).map(|i| ("test", i, cfg.synth.n_train + i)))
        .collect();
    let scenes: Vec<Result<SceneEntry>> = crate::consensus::with_pool(|| jobs
        .par_iter()
        .map(|&(split, index, global)| {
            let mut rng = stream_rng(cfg.seed, Stream::Scene, global as u64);
            let bundle = generate_scene_with(&cfg.scene, &sampler, &mut rng)?;
            let rel = PathBuf::from(split).join(format!("{index:05}"));
            let dir = out_dir.join(&rel);
            std::fs::create_dir_all(&dir)?;
            let mut files = Vec::new();
            for (name, bytes) in scene_files(&bundle)? {
                std::fs::write(dir.join(name), &bytes)?;
                files.push(FileEntry { path: rel.join(name).to_string_lossy().replace('\\', "/"), sha256: sha_hex(&bytes) });
            }
            Ok(SceneEntry { split: split.to_string(), index, instances: bundle.visible_instances(), files })
        })
        .collect())?;
    let scenes = scenes.into_iter().collect::<Result<Vec<_>>>()?;
    let mut h = Sha256::new();
    for f in scenes.iter().flat_map(|s| &s.files) {
        h.update(f.sha256.as_bytes());
    }
    let manifest = Manifest { seed: cfg.seed, scenes, checksum: hex::encode(h.finalize()) };
    std::fs::write(out_dir.join(MANIFEST), serde_json::to_vec_pretty(&manifest)?)?;
    Ok(manifest)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WindowMode {
    /// Sliding windows and graph consensus.
    Overlapping,
    /// Disjoint tiles and the per-tile point estimate.
    Disjoint,
}

/// Scene on disk: a directory holding at least `image.png`, plus
/// `labels.png` when ground truth is known.
#[derive(Debug, Clone)]
pub struct SceneInput {
    pub name: String,
    pub image: Array2<f64>,
    pub truth: Option<LabelMap>,
}

impl SceneInput {
    pub fn load(dir: &Path) -> Result<Self> {
        let image = decode_gray_png(&std::fs::read(dir.join("image.png"))?)?;
        let labels = dir.join("labels.png");
        let truth = if labels.exists() {
            let l = decode_label_png(&std::fs::read(labels)?)?;
            if l.dim() != image.dim() {
                return Err(Error::dims(image.dim(), l.dim()));
            }
            Some(LabelMap::new(l))
        } else {
            None
        };
        let name = dir.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
        Ok(SceneInput { name, image, truth })
    }

    pub fn dims(&self) -> (usize, usize) {
        self.image.dim()
    }
}

/// Scene directories under `path`: itself if it holds `image.png`,
/// otherwise every descendant that does, in sorted order.
pub fn find_scenes(path: &Path) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    collect_scenes(path, &mut out)?;
    if out.is_empty() {
        return Err(Error::param(format!("no scenes under {}", path.display())));
    }
    Ok(out)
}

fn collect_scenes(path: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    if path.join("image.png").is_file() {
        out.push(path.to_path_buf());
        return Ok(());
    }
    let mut entries: Vec<PathBuf> = std::fs::read_dir(path)?.filter_map(|e| e.ok().map(|e| e.path())).filter(|p| p.is_dir()).collect();
    entries.sort();
    for e in entries {
        collect_scenes(&e, out)?;
    }
    Ok(())
}

/// Per-window posterior samples stored as `w{window}_s{sample}.mimg` f32
/// tensors of shape `(K + 1, window, window)`.
#[derive(Debug, Clone)]
pub struct FileSampler {
    pub dir: PathBuf,
    pub n_post: usize,
}

impl FileSampler {
    pub fn path(&self, w: usize, s: usize) -> PathBuf {
        self.dir.join(format!("w{w}_s{s}.mimg"))
    }
}

pub fn stack_from_tensor(t: &TensorContainer) -> Result<MixingStack> {
    let TensorData::F32(v) = &t.data else {
        return Err(Error::Format("posterior sample must be f32".into()));
    };
    if t.dims.len() != 3 {
        return Err(Error::Format(format!("posterior sample must be rank 3, got {}", t.dims.len())));
    }
    let shape = (t.dims[0] as usize, t.dims[1] as usize, t.dims[2] as usize);
    let arr = Array3::from_shape_vec(shape, v.iter().map(|&x| x as f64).collect()).map_err(|e| Error::Format(e.to_string()))?;
    MixingStack::new(arr, 1e-4)
}

impl WindowSampler for FileSampler {
    fn n_post(&self) -> usize {
        self.n_post
    }

    fn sample(&self, w: usize, _origin: (i64, i64), size: usize, s: usize) -> Result<MixingStack> {
        let pi = stack_from_tensor(&TensorContainer::load(self.path(w, s))?)?;
        if pi.dims() != (size, size) {
            return Err(Error::dims((size, size), pi.dims()));
        }
        Ok(pi)
    }
}

/// Write simulated samples for every window of `plan` in the
/// [`FileSampler`] layout.
pub fn export_samples(sampler: &dyn WindowSampler, dims: (usize, usize), window_px: usize, stride_px: usize, dir: &Path) -> Result<FileSampler> {
    let (plan, _) = tile_plan(dims, window_px, stride_px)?;
    std::fs::create_dir_all(dir)?;
    let out = FileSampler { dir: dir.to_path_buf(), n_post: sampler.n_post() };
    for w in 0..plan.len() {
        for s in 0..sampler.n_post() {
            stack_tensor(&sampler.sample(w, plan.image_origin(w), window_px, s)?).save(out.path(w, s))?;
        }
    }
    Ok(out)
}

/// Simulated posterior sampler for a known label map.
pub fn simulated_sampler(truth: &LabelMap, cfg: &RunConfig, seed: u64) -> Result<SimulatedSampler> {
    let k = truth.labels.iter().copied().max().unwrap_or(0) as usize;
    Ok(SimulatedSampler {
        truth: MixingStack::one_hot(truth, k)?,
        noise: cfg.posterior.noise,
        min_obj_px: cfg.scene.grid.min_obj_px,
        n_post: cfg.posterior.n_post,
        seed,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentOutcome {
    pub labels: CommunityLabels,
    pub gamma: f64,
    pub scores: Vec<(f64, f64)>,
    /// Mean foreground NMI against the per-window point estimates.
    pub nmi: Option<f64>,
}

/// Segment one canvas with either window mode.
pub fn segment_canvas(dims: (usize, usize), sampler: &dyn WindowSampler, cfg: &ConsensusConfig, windows: WindowMode, seed: u64) -> Result<SegmentOutcome> {
    match windows {
        WindowMode::Overlapping => {
            let out = consensus_segment(dims, sampler, cfg, seed)?;
            Ok(SegmentOutcome { labels: out.labels, gamma: out.gamma, scores: out.scores, nmi: None })
        }
        WindowMode::Disjoint => {
            let est = disjoint_point_estimate(dims, sampler, cfg.window_px)?;
            Ok(SegmentOutcome { labels: CommunityLabels::canonical(est.labels.as_slice().expect("standard layout")), gamma: cfg.resolution.gamma, scores: Vec::new(), nmi: None })
        }
    }
}

/// Fixed-resolution consensus that also reports agreement with the window
/// point estimates and community counts at each sweep resolution.
pub fn segment_with_score(dims: (usize, usize), sampler: &dyn WindowSampler, cfg: &ConsensusConfig, seed: u64, sweep: &[f64]) -> Result<(SegmentOutcome, Vec<(f64, usize)>)> {
    cfg.validate()?;
    let (plan, idx) = tile_plan(dims, cfg.window_px, cfg.stride_px)?;
    crate::consensus::with_pool(|| {
        let g = consensus_graph(dims, sampler, &plan, &idx, &cfg.resolution, true)?;
        let run = |gamma: f64| -> Result<CommunityLabels> {
            if g.edges.is_empty() {
                return Ok(CommunityLabels { assignment: vec![0; dims.0 * dims.1], count: 0 });
            }
            let labels = detect_communities(&g.edges, &ResolutionConfig { gamma, ..cfg.resolution }, seed)?;
            Ok(mask_background(labels, &g.foreground, cfg.fg_threshold))
        };
        let labels = run(cfg.resolution.gamma)?;
        let nmi = if g.samples.is_empty() { None } else { Some(sample_agreement(&labels, &g.samples)?) };
        let counts = sweep.iter().map(|&gm| Ok((gm, run(gm)?.count))).collect::<Result<Vec<_>>>()?;
        Ok((SegmentOutcome { labels, gamma: cfg.resolution.gamma, scores: Vec::new(), nmi }, counts))
    })?
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SampleSource {
    /// Perturbed copies of the scene's ground truth.
    Simulate,
    /// Stored per-window samples under `<scene>/samples/`.
    Files,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentArgs {
    pub input: PathBuf,
    pub out_dir: PathBuf,
    pub samples: SampleSource,
    pub windows: WindowMode,
    pub auto_resolution: bool,
    /// Extra resolutions whose community counts are reported.
    pub sweep: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneResult {
    pub name: String,
    pub gamma: f64,
    pub count: usize,
    pub sweep: Vec<(f64, usize)>,
    pub metrics: Option<SceneMetrics>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentSummary {
    pub scenes: Vec<SceneResult>,
    pub report: Option<EvalReport>,
}

/// Segment every scene under `args.input`, writing labels (PNG and
/// run-length JSON) per scene, a JSON-lines run log and, when every scene
/// has ground truth, `report.json`.
pub fn cmd_segment(cfg: &RunConfig, args: &SegmentArgs) -> Result<SegmentSummary> {
    cfg.validate()?;
    let dirs = find_scenes(&args.input)?;
    std::fs::create_dir_all(&args.out_dir)?;
    let mut log = RunLog::create(args.out_dir.join("run.jsonl"))?;
    log.record("config", cfg)?;
    log.record("args", args)?;
    let ccfg = cfg.segment.consensus(cfg.scene.grid.min_obj_px, args.auto_resolution);
    let mut results = Vec::new();
    for dir in &dirs {
        let scene = SceneInput::load(dir)?;
        let sampler: Box<dyn WindowSampler> = match args.samples {
            SampleSource::Simulate => {
                let truth = scene.truth.as_ref().ok_or_else(|| Error::param(format!("{} has no labels.png to simulate from", dir.display())))?;
                Box::new(simulated_sampler(truth, cfg, cfg.seed)?)
            }
            SampleSource::Files => Box::new(FileSampler { dir: dir.join("samples"), n_post: cfg.posterior.n_post }),
        };
        let (outcome, sweep) = if args.windows == WindowMode::Overlapping && !args.sweep.is_empty() && !args.auto_resolution {
            segment_with_score(scene.dims(), sampler.as_ref(), &ccfg, cfg.seed, &args.sweep)?
        } else {
            (segment_canvas(scene.dims(), sampler.as_ref(), &ccfg, args.windows, cfg.seed)?, Vec::new())
        };
        let labels = outcome.labels.to_label_map(scene.dims())?;
        let out = args.out_dir.join(&scene.name);
        std::fs::create_dir_all(&out)?;
        std::fs::write(out.join("labels.png"), encode_label_png(labels.labels.view())?)?;
        std::fs::write(out.join("labels.json"), serde_json::to_vec(&RunLengthLabels::encode(labels.labels.view()))?)?;
        let metrics = match &scene.truth {
            Some(t) => Some(SceneMetrics::evaluate(t.labels.as_slice().expect("standard layout"), &outcome.labels.assignment)?),
            None => None,
        };
        let result = SceneResult { name: scene.name.clone(), gamma: outcome.gamma, count: outcome.labels.count, sweep, metrics };
        log.record("scene", &result)?;
        results.push(result);
    }
    let report = if results.iter().all(|r| r.metrics.is_some()) {
        let report = EvalReport::new(results.iter().filter_map(|r| r.metrics).collect());
        std::fs::write(args.out_dir.join("report.json"), serde_json::to_vec_pretty(&report)?)?;
        log.record("report", &report)?;
        Some(report)
    } else {
        None
    };
    log.into_inner()?;
    Ok(SegmentSummary { scenes: results, report })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dpp::KernelParams;
    use crate::scene::{Background, BackgroundPrior};

    fn small_config(n_train: usize, n_test: usize) -> RunConfig {
        let mut cfg = RunConfig::default();
        cfg.synth.n_train = n_train;
        cfg.synth.n_test = n_test;
        cfg.seed = 11;
        cfg
    }

    #[test]
    fn synth_is_deterministic() {
        let cfg = small_config(3, 2);
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        let ma = cmd_synth(&cfg, a.path()).unwrap();
        let mb = cmd_synth(&cfg, b.path()).unwrap();
        assert_eq!(ma, mb);
        assert_eq!(ma.scenes.len(), 5);
        let on_disk: Manifest = serde_json::from_slice(&std::fs::read(a.path().join(MANIFEST)).unwrap()).unwrap();
        assert_eq!(on_disk, ma);
        let f = &ma.scenes[4].files[0];
        assert_eq!(sha_hex(&std::fs::read(a.path().join(&f.path)).unwrap()), f.sha256);
        assert!(f.path.starts_with("test/00001/"));
        let other = cmd_synth(&RunConfig { seed: 12, ..cfg }, tempfile::tempdir().unwrap().path()).unwrap();
        assert_ne!(other.checksum, ma.checksum);
    }

    #[test]
    fn empty_density_writes_background_only_scene() {
        let mut cfg = small_config(1, 0);
        cfg.scene.kernel = KernelParams { rho: 1e-12, ell: 1.0 };
        cfg.scene.background = BackgroundPrior::flat(0.2);
        let dir = tempfile::tempdir().unwrap();
        let m = cmd_synth(&cfg, dir.path()).unwrap();
        assert_eq!(m.scenes[0].instances, 0);
        let labels = decode_label_png(&std::fs::read(dir.path().join("train/00000/labels.png")).unwrap()).unwrap();
        assert!(labels.iter().all(|&l| l == 0));
        let meta: serde_json::Value = serde_json::from_slice(&std::fs::read(dir.path().join("train/00000/scene.json")).unwrap()).unwrap();
        assert_eq!(serde_json::from_value::<Background>(meta["background"].clone()).unwrap(), Background::Flat { level: 0.2 });
    }

    #[test]
    fn file_samples_match_simulated() {
        let mut labels = Array2::zeros((30, 30));
        labels.slice_mut(ndarray::s![5..15, 5..15]).fill(1u32);
        labels.slice_mut(ndarray::s![18..26, 12..28]).fill(2u32);
        let truth = LabelMap::new(labels);
        let cfg = RunConfig::default();
        let sim = simulated_sampler(&truth, &cfg, 3).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let files = export_samples(&sim, (30, 30), 20, 10, dir.path()).unwrap();
        let ccfg = ConsensusConfig { window_px: 20, stride_px: 10, ..cfg.segment.consensus(8, false) };
        let a = segment_canvas((30, 30), &sim, &ccfg, WindowMode::Overlapping, 1).unwrap();
        let b = segment_canvas((30, 30), &files, &ccfg, WindowMode::Overlapping, 1).unwrap();
        assert_eq!(a.labels, b.labels);
        assert!(a.labels.count >= 2);
    }
}
