use std::collections::HashMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::communities::{auto_resolution, detect_communities, point_estimate, CommunityLabels, ResolutionConfig, SparseLabels};
use super::edges::{EdgeAccumulator, EdgeList};
use super::tiling::{tile_plan, WindowPlan};
use crate::error::{Error, Result};
use crate::rng::{stream_rng, Stream};
use crate::scene::{perturb_stack, LabelMap, MixingStack, PosteriorNoise};

/// Source of per-window posterior samples.
pub trait WindowSampler: Sync {
    fn n_post(&self) -> usize;

    /// Sample `s` of window `w`, whose top-left corner sits at `origin` in
    /// image coordinates (negative inside the leading pad).
    fn sample(&self, w: usize, origin: (i64, i64), size: usize, s: usize) -> Result<MixingStack>;
}

/// Perturbed copies of a known mixing stack, drawn independently for each
/// window and sample.
#[derive(Debug, Clone)]
pub struct SimulatedSampler {
    pub truth: MixingStack,
    pub noise: PosteriorNoise,
    pub min_obj_px: usize,
    pub n_post: usize,
    pub seed: u64,
}

impl WindowSampler for SimulatedSampler {
    fn n_post(&self) -> usize {
        self.n_post
    }

    fn sample(&self, w: usize, origin: (i64, i64), size: usize, s: usize) -> Result<MixingStack> {
        let crop = self.truth.window(origin.0, origin.1, (size, size));
        let mut rng = stream_rng(self.seed, Stream::Sample, (w * self.n_post + s) as u64);
        perturb_stack(&crop, &self.noise, self.min_obj_px, &mut rng)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum ResolutionMode {
    Fixed,
    /// Sweep the grid and keep the resolution agreeing best with the
    /// per-window point estimates.
    Auto { grid: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsensusConfig {
    pub window_px: usize,
    pub stride_px: usize,
    pub resolution: ResolutionConfig,
    pub mode: ResolutionMode,
    /// Pixels whose mean foreground probability over all covering samples
    /// falls below this are background regardless of their community.
    /// 0 keeps every graph node.
    #[serde(default = "default_fg_threshold")]
    pub fg_threshold: f64,
}

fn default_fg_threshold() -> f64 {
    ConsensusConfig::FG_THRESHOLD
}

impl ConsensusConfig {
    pub const FG_THRESHOLD: f64 = 0.4;

    pub fn validate(&self) -> Result<()> {
        self.resolution.validate()?;
        if !(0.0..=1.0).contains(&self.fg_threshold) {
            return Err(Error::param(format!("fg_threshold must lie in [0, 1], got {}", self.fg_threshold)));
        }
        if self.window_px == 0 || self.stride_px == 0 || self.stride_px > self.window_px {
            return Err(Error::param(format!("invalid window {} / stride {}", self.window_px, self.stride_px)));
        }
        if let ResolutionMode::Auto { grid } = &self.mode {
            if grid.len() < 2 || grid.iter().any(|g| !(*g > 0.0)) {
                return Err(Error::param("auto resolution needs at least two positive candidates"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsensusResult {
    pub labels: CommunityLabels,
    pub gamma: f64,
    /// Resolution sweep scores; empty in fixed mode.
    pub scores: Vec<(f64, f64)>,
    pub num_edges: usize,
}

/// Windows per parallel job. Fixed so floating-point sums do not depend on
/// the thread count.
const CHUNK: usize = 4;

/// Environment variable capping worker threads.
pub const THREADS_ENV: &str = "SEGSTITCH_THREADS";

/// Run `f` on a pool sized by [`THREADS_ENV`] when set, else the global pool.
pub fn with_pool<T: Send>(f: impl FnOnce() -> T + Send) -> Result<T> {
    match std::env::var(THREADS_ENV) {
        Ok(v) => {
            let n: usize = v.trim().parse().map_err(|_| Error::param(format!("{THREADS_ENV}={v} is not a thread count")))?;
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n.max(1))
                .build()
                .map_err(|e| Error::param(format!("thread pool: {e}")))?;
            Ok(pool.install(f))
        }
        Err(_) => Ok(f()),
    }
}

/// Edges and per-pixel foreground votes from every window sample.
#[derive(Debug, Clone, PartialEq)]
pub struct ConsensusGraph {
    pub edges: EdgeList,
    /// Mean of `1 - pi_0` over every sample covering each pixel.
    pub foreground: Vec<f64>,
    /// Foreground of each sample's point estimate in global ids; empty
    /// unless requested.
    pub samples: Vec<SparseLabels>,
}

/// Build the consensus graph over `plan`.
pub fn consensus_graph(
    image_dims: (usize, usize),
    sampler: &dyn WindowSampler,
    plan: &WindowPlan,
    idx: &super::tiling::IndexMatrix,
    cfg: &ResolutionConfig,
    collect_samples: bool,
) -> Result<ConsensusGraph> {
    let n_post = sampler.n_post();
    if n_post == 0 {
        return Err(Error::param("need at least one posterior sample"));
    }
    let window_ids: Vec<usize> = (0..plan.len()).collect();
    let parts: Vec<Result<(EdgeAccumulator, HashMap<u32, f64>, Vec<SparseLabels>)>> = window_ids
        .par_chunks(CHUNK)
        .map(|chunk| {
            let mut acc = EdgeAccumulator::new(image_dims, cfg.d_c, cfg.e_min);
            let mut fg: HashMap<u32, f64> = HashMap::new();
            let mut samples = Vec::new();
            for &w in chunk {
                let crop = idx.crop(plan.windows[w], plan.window_px);
                for s in 0..n_post {
                    let pi = sampler.sample(w, plan.image_origin(w), plan.window_px, s)?;
                    acc.add_window(&pi, crop)?;
                    for ((r, c), &p) in crop.indexed_iter() {
                        let f = 1.0 - pi.get(0, r, c);
                        if p >= 0 && f > 0.0 {
                            *fg.entry(p as u32).or_insert(0.0) += f;
                        }
                    }
                    if collect_samples {
                        let est = point_estimate(&pi);
                        let mut sparse = SparseLabels::default();
                        for ((r, c), &l) in est.labels.indexed_iter() {
                            let p = crop[(r, c)];
                            if l != 0 && p >= 0 {
                                sparse.pixels.push(p as u32);
                                sparse.labels.push(l);
                            }
                        }
                        if !sparse.is_empty() {
                            samples.push(sparse);
                        }
                    }
                }
            }
            Ok((acc, fg, samples))
        })
        .collect();
    let mut total = EdgeAccumulator::new(image_dims, cfg.d_c, cfg.e_min);
    let mut fg_sum = vec![0.0; image_dims.0 * image_dims.1];
    let mut samples = Vec::new();
    for part in parts {
        let (acc, fg, s) = part?;
        total.absorb(acc);
        for (p, f) in fg {
            fg_sum[p as usize] += f;
        }
        samples.extend(s);
    }
    let coverage = plan.coverage();
    let foreground = fg_sum.iter().zip(coverage.iter()).map(|(&f, &c)| f / (c as f64 * n_post as f64)).collect();
    Ok(ConsensusGraph { edges: total.into_edges(n_post)?, foreground, samples })
}

/// Sliding-window consensus segmentation of an `image_dims` canvas.
/// An image with no edges at all yields an all-background labeling.
pub fn consensus_segment(image_dims: (usize, usize), sampler: &dyn WindowSampler, cfg: &ConsensusConfig, seed: u64) -> Result<ConsensusResult> {
    cfg.validate()?;
    let (plan, idx) = tile_plan(image_dims, cfg.window_px, cfg.stride_px)?;
    with_pool(|| {
        let auto = matches!(cfg.mode, ResolutionMode::Auto { .. });
        let g = consensus_graph(image_dims, sampler, &plan, &idx, &cfg.resolution, auto)?;
        let n = image_dims.0 * image_dims.1;
        if g.edges.is_empty() {
            return Ok(ConsensusResult { labels: CommunityLabels { assignment: vec![0; n], count: 0 }, gamma: cfg.resolution.gamma, scores: Vec::new(), num_edges: 0 });
        }
        let mask = |labels: CommunityLabels| mask_background(labels, &g.foreground, cfg.fg_threshold);
        match &cfg.mode {
            ResolutionMode::Fixed => {
                let labels = mask(detect_communities(&g.edges, &cfg.resolution, seed)?);
                Ok(ConsensusResult { labels, gamma: cfg.resolution.gamma, scores: Vec::new(), num_edges: g.edges.len() })
            }
            ResolutionMode::Auto { grid } => {
                let choice = auto_resolution(&g.edges, &g.samples, grid, &cfg.resolution, seed)?;
                let labels = mask(choice.labels);
                Ok(ConsensusResult { labels, gamma: choice.gamma, scores: choice.scores, num_edges: g.edges.len() })
            }
        }
    })?
}

/// Zero out pixels with foreground below `threshold` and renumber.
pub fn mask_background(labels: CommunityLabels, foreground: &[f64], threshold: f64) -> CommunityLabels {
    if threshold <= 0.0 {
        return labels;
    }
    let raw: Vec<u32> = labels.assignment.iter().zip(foreground).map(|(&l, &f)| if f < threshold { 0 } else { l }).collect();
    CommunityLabels::canonical(&raw)
}

/// Baseline: disjoint `window_px` tiles, one sample each, per-tile argmax
/// with instance ids made unique across tiles.
pub fn disjoint_point_estimate(image_dims: (usize, usize), sampler: &dyn WindowSampler, window_px: usize) -> Result<LabelMap> {
    let (plan, _) = tile_plan(image_dims, window_px, window_px)?;
    let (h, w) = image_dims;
    let mut raw = vec![0u32; h * w];
    let mut offset = 0u32;
    for wi in 0..plan.len() {
        let (top, left) = plan.image_origin(wi);
        let pi = sampler.sample(wi, (top, left), window_px, 0)?;
        let est = point_estimate(&pi);
        for ((r, c), &l) in est.labels.indexed_iter() {
            let (y, x) = (top + r as i64, left + c as i64);
            if l != 0 && y >= 0 && x >= 0 && (y as usize) < h && (x as usize) < w {
                raw[y as usize * w + x as usize] = offset + l;
            }
        }
        offset += pi.num_instances() as u32;
    }
    CommunityLabels::canonical(&raw).to_label_map(image_dims)
}
