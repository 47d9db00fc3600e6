//! Bounding-box proposals: latent-to-box transform, overlap measures,
//! score-based non-max suppression and top-K slot selection.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{BinaryField, GridSpec, ProbField};

/// NMS threshold used while training.
pub const ALPHA_TRAIN: f64 = 0.3;
/// More permissive NMS threshold used at test time.
pub const ALPHA_TEST: f64 = 0.5;
/// Slot count for digit-scale scenes.
pub const K_MAX_DIGITS: usize = 10;
/// Slot count for nuclei-scale scenes.
pub const K_MAX_NUCLEI: usize = 25;

/// Affine map followed by a sigmoid, from R^4 to the unit box offsets.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SafParams {
    pub bias: [f64; 4],
    pub weight: [[f64; 4]; 4],
}

impl Default for SafParams {
    fn default() -> Self {
        let mut weight = [[0.0; 4]; 4];
        for (i, row) in weight.iter_mut().enumerate() {
            row[i] = 1.0;
        }
        SafParams { bias: [0.0; 4], weight }
    }
}

impl SafParams {
    pub fn validate(&self) -> Result<()> {
        if self.bias.iter().chain(self.weight.iter().flatten()).all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(Error::param("SAF parameters must be finite"))
        }
    }

    /// `sigmoid(bias + weight * v)`.
    pub fn unit_offsets(&self, v: &BoxLatent) -> [f64; 4] {
        let mut t = [0.0; 4];
        for (i, ti) in t.iter_mut().enumerate() {
            let a = self.bias[i] + (0..4).map(|j| self.weight[i][j] * v.0[j]).sum::<f64>();
            *ti = sigmoid(a);
        }
        t
    }
}

fn sigmoid(a: f64) -> f64 {
    if a >= 0.0 {
        1.0 / (1.0 + (-a).exp())
    } else {
        let e = a.exp();
        e / (1.0 + e)
    }
}

/// Unconstrained location latent.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoxLatent(pub [f64; 4]);

/// Axis-aligned box in pixels, centre + size convention.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundingBox {
    pub cx: f64,
    pub cy: f64,
    pub w: f64,
    pub h: f64,
}

impl BoundingBox {
    pub fn new(cx: f64, cy: f64, w: f64, h: f64) -> Self {
        BoundingBox { cx, cy, w, h }
    }

    /// Box from its top-left corner and size.
    pub fn from_corner(left: f64, top: f64, w: f64, h: f64) -> Self {
        BoundingBox { cx: left + 0.5 * w, cy: top + 0.5 * h, w, h }
    }

    pub fn left(&self) -> f64 {
        self.cx - 0.5 * self.w
    }

    pub fn right(&self) -> f64 {
        self.cx + 0.5 * self.w
    }

    pub fn top(&self) -> f64 {
        self.cy - 0.5 * self.h
    }

    pub fn bottom(&self) -> f64 {
        self.cy + 0.5 * self.h
    }

    pub fn area(&self) -> f64 {
        self.w * self.h
    }

    pub fn translated(&self, dx: f64, dy: f64) -> Self {
        BoundingBox { cx: self.cx + dx, cy: self.cy + dy, ..*self }
    }

    /// Whether the point `(x, y)` lies inside the half-open box.
    pub fn contains(&self, x: f64, y: f64) -> bool {
        x >= self.left() && x < self.right() && y >= self.top() && y < self.bottom()
    }
}

/// Box from unit offsets `t = (tx, ty, tw, th)` at coarse cell `(ix, iy)`.
pub fn box_from_offsets(t: [f64; 4], grid_index: (usize, usize), grid: &GridSpec) -> Result<BoundingBox> {
    let (ix, iy) = grid_index;
    if ix >= grid.coarse_w() || iy >= grid.coarse_h() {
        return Err(Error::param(format!(
            "grid index ({ix}, {iy}) outside {}x{} coarse grid",
            grid.coarse_w(),
            grid.coarse_h()
        )));
    }
    let lo = grid.min_obj_px as f64;
    let span = (grid.max_obj_px - grid.min_obj_px) as f64;
    let sx = grid.width_px as f64 / grid.coarse_w() as f64;
    let sy = grid.height_px as f64 / grid.coarse_h() as f64;
    Ok(BoundingBox {
        cx: sx * (ix as f64 + t[0]),
        cy: sy * (iy as f64 + t[1]),
        w: lo + span * t[2],
        h: lo + span * t[3],
    })
}

/// Latent `v` to a box anchored at coarse cell `(ix, iy)`.
pub fn saf_transform(v: &BoxLatent, params: &SafParams, grid_index: (usize, usize), grid: &GridSpec) -> Result<BoundingBox> {
    box_from_offsets(params.unit_offsets(v), grid_index, grid)
}

/// Intersection over the smaller area, and over the union.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Overlap {
    pub iomin: f64,
    pub iou: f64,
}

pub fn overlap(a: &BoundingBox, b: &BoundingBox) -> Result<Overlap> {
    let (aa, ab) = (a.area(), b.area());
    if !(aa > 0.0 && ab > 0.0) {
        return Err(Error::param("overlap of a zero-area box"));
    }
    Ok(overlap_unchecked(a, b, aa, ab))
}

fn overlap_unchecked(a: &BoundingBox, b: &BoundingBox, aa: f64, ab: f64) -> Overlap {
    let iw = (a.right().min(b.right()) - a.left().max(b.left())).max(0.0);
    let ih = (a.bottom().min(b.bottom()) - a.top().max(b.top())).max(0.0);
    let inter = iw * ih;
    let iomin = (inter / aa.min(ab)).min(1.0);
    let iou = (inter / (aa + ab - inter)).min(iomin);
    Overlap { iomin, iou }
}

/// One proposal per coarse grid point with its probability and the
/// provisional Bernoulli draw.
#[derive(Debug, Clone, PartialEq)]
pub struct ProposalSet {
    pub boxes: Vec<BoundingBox>,
    pub probs: ProbField,
    pub provisional: BinaryField,
}

impl ProposalSet {
    pub fn new(boxes: Vec<BoundingBox>, probs: ProbField, provisional: BinaryField) -> Result<Self> {
        if probs.rows() != provisional.rows() || probs.cols() != provisional.cols() {
            return Err(Error::dims((probs.rows(), probs.cols()), (provisional.rows(), provisional.cols())));
        }
        if boxes.len() != probs.len() {
            return Err(Error::dims(probs.len(), boxes.len()));
        }
        if boxes.iter().any(|b| !(b.area() > 0.0)) {
            return Err(Error::param("proposal with non-positive area"));
        }
        Ok(ProposalSet { boxes, probs, provisional })
    }

    pub fn len(&self) -> usize {
        self.boxes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.boxes.is_empty()
    }

    /// `s = c~ + p`: provisionally-on points always outrank off points.
    pub fn scores(&self) -> Vec<f64> {
        (0..self.len())
            .map(|i| if self.provisional.get(i) { 1.0 } else { 0.0 } + self.probs.get(i))
            .collect()
    }
}

/// Indices sorted by descending score; ties go to the lower index.
pub fn score_order(scores: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    order
}

/// Greedy sweep over all proposals: which ones pass the filter, regardless
/// of their provisional state.
pub fn nms_survivors(proposals: &ProposalSet, alpha: f64) -> Result<Vec<bool>> {
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(Error::param(format!("alpha must lie in (0, 1], got {alpha}")));
    }
    let scores = proposals.scores();
    let areas: Vec<f64> = proposals.boxes.iter().map(BoundingBox::area).collect();
    let mut kept: Vec<usize> = Vec::new();
    let mut survives = vec![false; proposals.len()];
    for i in score_order(&scores) {
        let b = &proposals.boxes[i];
        let blocked = kept
            .iter()
            .any(|&j| overlap_unchecked(b, &proposals.boxes[j], areas[i], areas[j]).iomin > alpha);
        if !blocked {
            kept.push(i);
            survives[i] = true;
        }
    }
    Ok(survives)
}

/// Final presence field: provisionally-on proposals whose IoMIN with every
/// higher-scored survivor is at most `alpha`.
pub fn nms(proposals: &ProposalSet, alpha: f64) -> Result<BinaryField> {
    let survives = nms_survivors(proposals, alpha)?;
    let values = survives
        .iter()
        .enumerate()
        .map(|(i, &s)| s && proposals.provisional.get(i))
        .collect();
    BinaryField::from_vec(proposals.provisional.rows(), proposals.provisional.cols(), values)
}

/// One of the fixed `k_max` instance slots.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Slot {
    /// Grid index feeding the slot, `None` when the grid has fewer points
    /// than slots.
    pub index: Option<usize>,
    /// Multiplier applied to the slot's mixing weights.
    pub coeff: u8,
}

/// Fill `k_max` slots in descending score order: active points first, then
/// the best inactive ones with coefficient 0 so their weights are masked out.
pub fn select_top_k(c: &BinaryField, scores: &[f64], k_max: usize) -> Result<Vec<Slot>> {
    if k_max == 0 {
        return Err(Error::param("k_max must be at least 1"));
    }
    if scores.len() != c.len() {
        return Err(Error::dims(c.len(), scores.len()));
    }
    let order = score_order(scores);
    let on = order.iter().filter(|&&i| c.get(i));
    let off = order.iter().filter(|&&i| !c.get(i));
    let mut slots: Vec<Slot> = on
        .chain(off)
        .take(k_max)
        .map(|&i| Slot { index: Some(i), coeff: c.get(i) as u8 })
        .collect();
    slots.resize(k_max, Slot { index: None, coeff: 0 });
    Ok(slots)
}
