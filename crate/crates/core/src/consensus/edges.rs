use std::collections::HashMap;

use ndarray::ArrayView2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scene::MixingStack;

/// Sparse symmetric pixel graph as `(i, j, w)` triplets with `i < j`.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct EdgeList {
    /// Size of the pixel id space.
    pub num_nodes: usize,
    pub edges: Vec<(u32, u32, f64)>,
}

impl EdgeList {
    pub fn new(num_nodes: usize, edges: Vec<(u32, u32, f64)>) -> Result<Self> {
        for &(i, j, w) in &edges {
            if i >= j || j as usize >= num_nodes {
                return Err(Error::param(format!("edge ({i}, {j}) is not canonical in {num_nodes} nodes")));
            }
            if !(w > 0.0 && w.is_finite()) {
                return Err(Error::param(format!("edge ({i}, {j}) has weight {w}")));
            }
        }
        Ok(EdgeList { num_nodes, edges })
    }

    pub fn len(&self) -> usize {
        self.edges.len()
    }

    pub fn is_empty(&self) -> bool {
        self.edges.is_empty()
    }

    /// Sorted distinct node ids that appear in at least one edge.
    pub fn active_nodes(&self) -> Vec<u32> {
        let mut v: Vec<u32> = self.edges.iter().flat_map(|&(i, j, _)| [i, j]).collect();
        v.sort_unstable();
        v.dedup();
        v
    }
}

/// One representative of each `{d, -d}` pair with `|d| < d_c`, as `(dy, dx)`
/// with `dy > 0` or `dy == 0, dx > 0`.
pub fn half_disk(d_c: f64) -> Vec<(i64, i64)> {
    let r = d_c.ceil() as i64;
    let mut out = Vec::new();
    for dy in 0..=r {
        for dx in -r..=r {
            if dy == 0 && dx <= 0 {
                continue;
            }
            if (((dy * dy + dx * dx) as f64).sqrt()) < d_c {
                out.push((dy, dx));
            }
        }
    }
    out
}

/// Foreground mixing probabilities per pixel as sorted `(instance, pi)` runs.
pub(crate) struct SparsePi {
    dims: (usize, usize),
    start: Vec<u32>,
    entries: Vec<(u32, f64)>,
}

impl SparsePi {
    pub(crate) fn new(pi: &MixingStack) -> Self {
        let dims = pi.dims();
        let arr = pi.as_array();
        let k = pi.num_instances();
        let mut start = Vec::with_capacity(dims.0 * dims.1 + 1);
        let mut entries = Vec::new();
        for r in 0..dims.0 {
            for c in 0..dims.1 {
                start.push(entries.len() as u32);
                if arr[(0, r, c)] >= 1.0 {
                    continue;
                }
                for kk in 1..=k {
                    let v = arr[(kk, r, c)];
                    if v > 0.0 {
                        entries.push((kk as u32, v));
                    }
                }
            }
        }
        start.push(entries.len() as u32);
        SparsePi { dims, start, entries }
    }

    #[inline]
    fn at(&self, r: usize, c: usize) -> &[(u32, f64)] {
        let p = r * self.dims.1 + c;
        &self.entries[self.start[p] as usize..self.start[p + 1] as usize]
    }

    #[inline]
    fn dot(a: &[(u32, f64)], b: &[(u32, f64)]) -> f64 {
        let (mut i, mut j, mut s) = (0, 0, 0.0);
        while i < a.len() && j < b.len() {
            match a[i].0.cmp(&b[j].0) {
                std::cmp::Ordering::Less => i += 1,
                std::cmp::Ordering::Greater => j += 1,
                std::cmp::Ordering::Equal => {
                    s += a[i].1 * b[j].1;
                    i += 1;
                    j += 1;
                }
            }
        }
        s
    }

    /// Calls `f(p, pairs)` once per foreground pixel with a valid id `p`,
    /// where `pairs` holds `(q, disp_index, e)` for every retained neighbour
    /// `q = p + d`.
    pub(crate) fn for_each_pixel(&self, idx: ArrayView2<i64>, disps: &[(i64, i64)], e_min: f64, mut f: impl FnMut(u32, &[(u32, usize, f64)])) {
        let (h, w) = self.dims;
        let mut buf = Vec::with_capacity(disps.len());
        for r in 0..h {
            for c in 0..w {
                let a = self.at(r, c);
                if a.is_empty() {
                    continue;
                }
                let p = idx[(r, c)];
                if p < 0 {
                    continue;
                }
                buf.clear();
                for (di, &(dy, dx)) in disps.iter().enumerate() {
                    let (r2, c2) = (r as i64 + dy, c as i64 + dx);
                    if r2 >= h as i64 || c2 < 0 || c2 >= w as i64 {
                        continue;
                    }
                    let (r2, c2) = (r2 as usize, c2 as usize);
                    let b = self.at(r2, c2);
                    if b.is_empty() {
                        continue;
                    }
                    let q = idx[(r2, c2)];
                    if q < 0 {
                        continue;
                    }
                    let e = Self::dot(a, b);
                    if e > 0.0 && e >= e_min {
                        buf.push((q as u32, di, e));
                    }
                }
                if !buf.is_empty() {
                    f(p as u32, &buf);
                }
            }
        }
    }
}

/// Same-objectness edges of one window and one sample:
/// `E(p, p + d) = sum_{k >= 1} pi_k(p) pi_k(p + d)` over the half disk,
/// keeping `E >= e_min` between pixels with valid ids. Pixels outside the
/// window read as background.
pub fn window_edges(pi: &MixingStack, idx: ArrayView2<i64>, num_nodes: usize, d_c: f64, e_min: f64) -> Result<EdgeList> {
    if pi.dims() != idx.dim() {
        return Err(Error::dims(idx.dim(), pi.dims()));
    }
    let disps = half_disk(d_c);
    let sparse = SparsePi::new(pi);
    let mut edges = Vec::new();
    sparse.for_each_pixel(idx, &disps, e_min, |p, pairs| {
        for &(q, _, e) in pairs {
            let (i, j) = if p < q { (p, q) } else { (q, p) };
            edges.push((i, j, e));
        }
    });
    Ok(EdgeList { num_nodes, edges })
}

/// Sum duplicate pairs across parts and divide by `n_post`. Duplicates are
/// summed in ascending weight order, so the result does not depend on the
/// order of `parts` or of the triplets inside them.
pub fn merge_edges(parts: &[EdgeList], n_post: usize) -> Result<EdgeList> {
    if n_post == 0 {
        return Err(Error::param("n_post must be at least 1"));
    }
    let num_nodes = parts.iter().map(|p| p.num_nodes).max().unwrap_or(0);
    if parts.iter().any(|p| p.num_nodes != num_nodes) {
        return Err(Error::param("edge lists disagree on the pixel id space"));
    }
    let mut all: Vec<(u32, u32, f64)> = parts.iter().flat_map(|p| p.edges.iter().copied()).collect();
    all.sort_unstable_by(|a, b| (a.0, a.1, a.2.to_bits()).cmp(&(b.0, b.1, b.2.to_bits())));
    let mut edges: Vec<(u32, u32, f64)> = Vec::new();
    for (i, j, w) in all {
        match edges.last_mut() {
            Some(last) if last.0 == i && last.1 == j => last.2 += w,
            _ => edges.push((i, j, w)),
        }
    }
    let n = n_post as f64;
    for e in &mut edges {
        e.2 /= n;
    }
    Ok(EdgeList { num_nodes, edges })
}

/// Running sums of window edges keyed by the lower pixel id, one slot per
/// half-disk displacement. Equivalent to collecting every window's
/// [`EdgeList`] and calling [`merge_edges`], up to summation order.
#[derive(Debug, Clone)]
pub struct EdgeAccumulator {
    num_nodes: usize,
    width: usize,
    disps: Vec<(i64, i64)>,
    e_min: f64,
    rows: HashMap<u32, Vec<f64>>,
}

impl EdgeAccumulator {
    /// `width` is the image width used to number pixels.
    pub fn new(image_dims: (usize, usize), d_c: f64, e_min: f64) -> Self {
        EdgeAccumulator {
            num_nodes: image_dims.0 * image_dims.1,
            width: image_dims.1,
            disps: half_disk(d_c),
            e_min,
            rows: HashMap::new(),
        }
    }

    pub fn add_window(&mut self, pi: &MixingStack, idx: ArrayView2<i64>) -> Result<()> {
        if pi.dims() != idx.dim() {
            return Err(Error::dims(idx.dim(), pi.dims()));
        }
        let sparse = SparsePi::new(pi);
        let nd = self.disps.len();
        let rows = &mut self.rows;
        sparse.for_each_pixel(idx, &self.disps, self.e_min, |p, pairs| {
            let row = rows.entry(p).or_insert_with(|| vec![0.0; nd]);
            for &(_, di, e) in pairs {
                row[di] += e;
            }
        });
        Ok(())
    }

    /// Add another accumulator's sums into this one.
    pub fn absorb(&mut self, other: EdgeAccumulator) {
        for (p, row) in other.rows {
            match self.rows.get_mut(&p) {
                Some(mine) => {
                    for (a, b) in mine.iter_mut().zip(row) {
                        *a += b;
                    }
                }
                None => {
                    self.rows.insert(p, row);
                }
            }
        }
    }

    pub fn into_edges(self, n_post: usize) -> Result<EdgeList> {
        if n_post == 0 {
            return Err(Error::param("n_post must be at least 1"));
        }
        let n = n_post as f64;
        let mut keys: Vec<u32> = self.rows.keys().copied().collect();
        keys.sort_unstable();
        let mut edges = Vec::new();
        for p in keys {
            let row = &self.rows[&p];
            for (di, &s) in row.iter().enumerate() {
                if s > 0.0 {
                    let (dy, dx) = self.disps[di];
                    let q = p as i64 + dy * self.width as i64 + dx;
                    edges.push((p, q as u32, s / n));
                }
            }
        }
        edges.sort_unstable_by_key(|&(i, j, _)| (i, j));
        Ok(EdgeList { num_nodes: self.num_nodes, edges })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::consensus::tiling::tile_plan;
    use crate::rng::seeded;
    use crate::scene::{mix, LabelMap};
    use ndarray::Array2;
    use rand::seq::SliceRandom;
    use rand::Rng;

    fn ids(h: usize, w: usize) -> Array2<i64> {
        Array2::from_shape_fn((h, w), |(r, c)| (r * w + c) as i64)
    }

    #[test]
    fn half_disk_counts() {
        assert!(half_disk(1.0).is_empty());
        assert_eq!(half_disk(1.5), vec![(0, 1), (1, -1), (1, 0), (1, 1)]);
        // strict radius 3 keeps the 5x5 square: 24 displacements, halved
        assert_eq!(half_disk(3.0).len(), 12);
    }

    #[test]
    fn two_pixel_instance_gives_one_unit_edge() {
        let mut labels = Array2::zeros((3, 3));
        labels[(1, 1)] = 1;
        labels[(1, 2)] = 1;
        let pi = MixingStack::one_hot(&LabelMap::new(labels), 1).unwrap();
        let el = window_edges(&pi, ids(3, 3).view(), 9, 2.0, 0.01).unwrap();
        assert_eq!(el.edges, vec![(4, 5, 1.0)]);
    }

    #[test]
    fn random_window_matches_brute_force() {
        let mut rng = seeded(31);
        let ws: Vec<Array2<f64>> = (0..3).map(|_| Array2::from_shape_fn((8, 8), |_| if rng.random::<f64>() < 0.5 { rng.random::<f64>() } else { 0.0 })).collect();
        let views: Vec<_> = ws.iter().map(|w| w.view()).collect();
        let pi = mix(&views, (8, 8)).unwrap();
        let mut idx = ids(8, 8);
        idx[(0, 3)] = -1;
        let (d_c, e_min) = (3.0, 0.01);
        let got = window_edges(&pi, idx.view(), 64, d_c, e_min).unwrap();
        let got = merge_edges(&[got], 1).unwrap();
        let mut want = Vec::new();
        for p in 0..64usize {
            for q in p + 1..64 {
                let (r1, c1, r2, c2) = (p / 8, p % 8, q / 8, q % 8);
                let d2 = ((r1 as f64 - r2 as f64).powi(2) + (c1 as f64 - c2 as f64).powi(2)).sqrt();
                if d2 >= d_c || idx[(r1, c1)] < 0 || idx[(r2, c2)] < 0 {
                    continue;
                }
                let e: f64 = (1..=3).map(|k| pi.get(k, r1, c1) * pi.get(k, r2, c2)).sum();
                if e > 0.0 && e >= e_min {
                    want.push((p as u32, q as u32, e));
                }
            }
        }
        assert_eq!(got.edges.len(), want.len());
        for (a, b) in got.edges.iter().zip(&want) {
            assert_eq!((a.0, a.1), (b.0, b.1));
            assert!((a.2 - b.2).abs() < 1e-14);
        }
    }

    fn random_parts(seed: u64) -> Vec<EdgeList> {
        let mut rng = seeded(seed);
        (0..5)
            .map(|_| {
                let w = Array2::from_shape_fn((6, 6), |_| if rng.random::<f64>() < 0.6 { 0.99 * rng.random::<f64>() } else { 0.0 });
                let pi = mix(&[w.view()], (6, 6)).unwrap();
                window_edges(&pi, ids(6, 6).view(), 36, 2.5, 0.0).unwrap()
            })
            .collect()
    }

    #[test]
    fn merge_identity_and_averaging() {
        let part = merge_edges(&random_parts(1)[..1], 1).unwrap();
        assert_eq!(merge_edges(&[part.clone()], 1).unwrap(), part);
        assert_eq!(merge_edges(&[part.clone(), part.clone()], 2).unwrap(), part);
    }

    #[test]
    fn merge_is_order_invariant_bitwise() {
        let mut parts = random_parts(2);
        let a = merge_edges(&parts, 5).unwrap();
        let mut rng = seeded(3);
        for _ in 0..5 {
            parts.shuffle(&mut rng);
            for p in &mut parts {
                p.edges.shuffle(&mut rng);
            }
            assert_eq!(merge_edges(&parts, 5).unwrap(), a);
        }
    }

    #[test]
    fn accumulator_agrees_with_merge() {
        let (plan, idx) = tile_plan((30, 30), 12, 4).unwrap();
        let mut rng = seeded(9);
        let mut labels = Array2::zeros((30, 30));
        for r in 0..30 {
            for c in 0..30 {
                labels[(r, c)] = ((r / 10) * 3 + c / 10) as u32 % 4;
            }
        }
        let truth = MixingStack::one_hot(&LabelMap::new(labels), 3).unwrap();
        let mut acc = EdgeAccumulator::new((30, 30), 3.0, 0.01);
        let mut parts = Vec::new();
        for (w, &o) in plan.windows.iter().enumerate() {
            let (top, left) = plan.image_origin(w);
            for _ in 0..2 {
                // rescale every plane at random and renormalise the columns
                let mut st = truth.window(top, left, (12, 12)).into_array();
                st.mapv_inplace(|v| v * (0.5 + 0.5 * rng.random::<f64>()));
                let tot = st.sum_axis(ndarray::Axis(0));
                for mut plane in st.outer_iter_mut() {
                    plane.zip_mut_with(&tot, |v, &t| *v /= t);
                }
                let pi = MixingStack::new(st, 1e-9).unwrap();
                let crop = idx.crop(o, 12);
                acc.add_window(&pi, crop).unwrap();
                parts.push(window_edges(&pi, crop, 900, 3.0, 0.01).unwrap());
            }
        }
        let a = acc.into_edges(2).unwrap();
        let b = merge_edges(&parts, 2).unwrap();
        assert_eq!(a.len(), b.len());
        for (x, y) in a.edges.iter().zip(&b.edges) {
            assert_eq!((x.0, x.1), (y.0, y.1));
            assert!((x.2 - y.2).abs() < 1e-12);
        }
    }
}
