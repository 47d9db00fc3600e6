use ndarray::{Array3, ArrayView2};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::background::{render_background, Background, BackgroundPrior};
use super::blob::{render_blob, BlobPrior};
use super::mixing::{compose, mix, sample_mask, LabelMap, MixingStack};
use super::resample::paste;
use super::SIGMA_REF;
use crate::boxes::{saf_transform, BoundingBox, BoxLatent, SafParams};
use crate::dpp::{DppSampler, KernelMatrix, KernelParams};
use crate::error::{Error, Result};
use crate::grid::{BinaryField, GridSpec};

/// Everything needed to draw a scene.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SceneConfig {
    pub grid: GridSpec,
    pub kernel: KernelParams,
    pub saf: SafParams,
    pub raster_dims: (usize, usize),
    pub channels: usize,
    pub blob: BlobPrior,
    pub background: BackgroundPrior,
    pub sigma: f64,
}

impl Default for SceneConfig {
    /// 80x80 grey scenes on a line-grid background, 16-32 px objects and
    /// about three instances per scene.
    fn default() -> Self {
        SceneConfig {
            grid: GridSpec { height_px: 80, width_px: 80, min_obj_px: 16, max_obj_px: 32 },
            kernel: KernelParams { rho: 0.25, ell: 1.0 },
            saf: SafParams::default(),
            raster_dims: (28, 28),
            channels: 1,
            blob: BlobPrior::default(),
            background: BackgroundPrior::default(),
            sigma: SIGMA_REF,
        }
    }
}

impl SceneConfig {
    pub fn validate(&self) -> Result<()> {
        self.grid.validate()?;
        self.kernel.validate()?;
        self.saf.validate()?;
        self.blob.validate()?;
        self.background.validate()?;
        if self.raster_dims.0 == 0 || self.raster_dims.1 == 0 || self.channels == 0 {
            return Err(Error::param("raster dims and channels must be positive"));
        }
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return Err(Error::param("sigma must be positive"));
        }
        Ok(())
    }

    pub fn kernel_matrix(&self) -> Result<KernelMatrix> {
        crate::dpp::build_rbf_kernel(&self.grid, self.kernel)
    }
}

/// A composed scene with all ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneBundle {
    pub grid: GridSpec,
    pub image: Array3<f64>,
    pub truth_grid: BinaryField,
    pub truth_labels: LabelMap,
    pub truth_boxes: Vec<BoundingBox>,
    pub truth_pi: MixingStack,
    pub background: Array3<f64>,
    pub background_kind: Background,
    pub sigma: f64,
}

impl SceneBundle {
    /// Instances with at least one pixel in the sampled mask.
    pub fn visible_instances(&self) -> usize {
        self.truth_labels.instance_count()
    }
}

/// Draw a scene from the forward model.
pub fn generate_scene<R: Rng + ?Sized>(config: &SceneConfig, rng: &mut R) -> Result<SceneBundle> {
    let sampler = DppSampler::new(&config.kernel_matrix()?)?;
    generate_scene_with(config, &sampler, rng)
}

/// As [`generate_scene`], reusing a sampler built for `config`'s kernel.
pub fn generate_scene_with<R: Rng + ?Sized>(config: &SceneConfig, sampler: &DppSampler, rng: &mut R) -> Result<SceneBundle> {
    config.validate()?;
    let grid = config.grid;
    let dims = (grid.height_px, grid.width_px);
    let cw = grid.coarse_w();

    let truth_grid = sampler.sample(rng);
    let mut boxes = Vec::new();
    let mut layers = Vec::new();
    for idx in truth_grid.on_indices() {
        let v = BoxLatent(std::array::from_fn(|_| StandardNormal.sample(rng)));
        let bx = saf_transform(&v, &config.saf, (idx % cw, idx / cw), &grid)?;
        let blob = config.blob.sample(config.raster_dims, rng);
        let raster = render_blob(&blob, config.raster_dims, config.channels)?;
        layers.push(paste(&raster, &bx, dims));
        boxes.push(bx);
    }

    let weights: Vec<ArrayView2<f64>> = layers.iter().map(|l| l.weights.view()).collect();
    let truth_pi = mix(&weights, dims)?;
    let background_kind = config.background.sample(rng);
    let background = render_background(&background_kind, dims, config.channels)?;
    let truth_labels = sample_mask(&truth_pi, rng);

    let mut ys = Vec::with_capacity(layers.len() + 1);
    ys.push(background.clone());
    ys.extend(layers.into_iter().map(|l| l.appearance));
    let image = compose(&truth_labels, &ys, config.sigma, rng)?;

    Ok(SceneBundle {
        grid,
        image,
        truth_grid,
        truth_labels,
        truth_boxes: boxes,
        truth_pi,
        background,
        background_kind,
        sigma: config.sigma,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;

    #[test]
    fn vanishing_density_gives_background_only() {
        let cfg = SceneConfig { kernel: KernelParams { rho: 1e-9, ell: 1.0 }, ..Default::default() };
        let scene = generate_scene(&cfg, &mut seeded(1)).unwrap();
        assert_eq!(scene.truth_boxes.len(), 0);
        assert_eq!(scene.truth_pi.num_instances(), 0);
        assert_eq!(scene.visible_instances(), 0);
    }

    #[test]
    fn same_seed_same_scene() {
        let cfg = SceneConfig::default();
        let a = generate_scene(&cfg, &mut seeded(42)).unwrap();
        let b = generate_scene(&cfg, &mut seeded(42)).unwrap();
        assert_eq!(a, b);
        let c = generate_scene(&cfg, &mut seeded(43)).unwrap();
        assert_ne!(a.image, c.image);
    }

    #[test]
    fn boxes_respect_size_bounds_and_stack_is_valid() {
        let cfg = SceneConfig::default();
        let mut rng = seeded(7);
        for _ in 0..20 {
            let s = generate_scene(&cfg, &mut rng).unwrap();
            s.truth_pi.check(1e-9).unwrap();
            assert_eq!(s.truth_boxes.len(), s.truth_grid.cardinality());
            for b in &s.truth_boxes {
                assert!(b.w >= 16.0 && b.w <= 32.0 && b.h >= 16.0 && b.h <= 32.0);
                assert!((0.0..=80.0).contains(&b.cx) && (0.0..=80.0).contains(&b.cy));
            }
        }
    }
}
