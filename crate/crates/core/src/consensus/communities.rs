use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::edges::EdgeList;
use super::leiden::{leiden, Graph, Objective};
use crate::error::{Error, Result};
use crate::metrics::foreground_nmi;
use crate::scene::{LabelMap, MixingStack};

/// Community objective, resolution and graph-construction cut-offs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResolutionConfig {
    pub objective: Objective,
    pub gamma: f64,
    /// Displacement cut-off in pixels; pairs need `|d| < d_c`.
    pub d_c: f64,
    /// Weakest per-window edge kept.
    pub e_min: f64,
}

impl ResolutionConfig {
    pub const E_MIN: f64 = 0.01;

    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0 && self.gamma.is_finite()) {
            return Err(Error::param(format!("gamma must be positive, got {}", self.gamma)));
        }
        if !(self.d_c >= 1.0 && self.d_c.is_finite()) {
            return Err(Error::param(format!("d_c must be at least 1, got {}", self.d_c)));
        }
        if !(0.0..1.0).contains(&self.e_min) {
            return Err(Error::param(format!("e_min must lie in [0, 1), got {}", self.e_min)));
        }
        Ok(())
    }
}

/// Partition of the pixel id space. 0 marks pixels outside the graph;
/// communities are numbered 1.. in order of their smallest pixel id.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CommunityLabels {
    pub assignment: Vec<u32>,
    pub count: usize,
}

impl CommunityLabels {
    /// Relabel an arbitrary assignment (0 stays 0) into canonical order.
    pub fn canonical(raw: &[u32]) -> Self {
        let mut map = std::collections::HashMap::new();
        let mut next = 0u32;
        let assignment = raw
            .iter()
            .map(|&c| {
                if c == 0 {
                    0
                } else {
                    *map.entry(c).or_insert_with(|| {
                        next += 1;
                        next
                    })
                }
            })
            .collect();
        CommunityLabels { assignment, count: next as usize }
    }

    pub fn to_label_map(&self, dims: (usize, usize)) -> Result<LabelMap> {
        let labels = Array2::from_shape_vec(dims, self.assignment.clone()).map_err(|_| Error::dims(self.assignment.len(), dims))?;
        Ok(LabelMap::new(labels))
    }
}

/// Leiden on the active nodes of `graph`.
pub fn detect_communities(graph: &EdgeList, cfg: &ResolutionConfig, seed: u64) -> Result<CommunityLabels> {
    cfg.validate()?;
    if graph.is_empty() {
        return Err(Error::EmptyGraph);
    }
    let nodes = graph.active_nodes();
    let mut local = vec![u32::MAX; graph.num_nodes];
    for (i, &p) in nodes.iter().enumerate() {
        local[p as usize] = i as u32;
    }
    let edges: Vec<(u32, u32, f64)> = graph.edges.iter().map(|&(i, j, w)| (local[i as usize], local[j as usize], w)).collect();
    let g = Graph::from_edges(nodes.len(), &edges)?;
    let membership = leiden(&g, cfg.objective, cfg.gamma, seed)?;
    let mut raw = vec![0u32; graph.num_nodes];
    for (i, &p) in nodes.iter().enumerate() {
        raw[p as usize] = membership[i] as u32 + 1;
    }
    Ok(CommunityLabels::canonical(&raw))
}

/// Per-pixel argmax over the stack; ties go to the lower index.
pub fn point_estimate(pi: &MixingStack) -> LabelMap {
    let (h, w) = pi.dims();
    let k = pi.num_instances();
    LabelMap::new(Array2::from_shape_fn((h, w), |(r, c)| {
        let mut best = 0;
        let mut best_v = pi.get(0, r, c);
        for i in 1..=k {
            let v = pi.get(i, r, c);
            if v > best_v {
                best = i;
                best_v = v;
            }
        }
        best as u32
    }))
}

/// Foreground pixels of one labeling in global pixel ids.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct SparseLabels {
    pub pixels: Vec<u32>,
    pub labels: Vec<u32>,
}

impl SparseLabels {
    pub fn from_label_map(m: &LabelMap) -> Self {
        let mut out = SparseLabels::default();
        for (p, &l) in m.labels.iter().enumerate() {
            if l != 0 {
                out.pixels.push(p as u32);
                out.labels.push(l);
            }
        }
        out
    }

    pub fn len(&self) -> usize {
        self.pixels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pixels.is_empty()
    }
}

/// Mean foreground NMI between `labels` and each sample. A sample sharing
/// no foreground with `labels` contributes 0.
pub fn sample_agreement(labels: &CommunityLabels, samples: &[SparseLabels]) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::param("need at least one sample labeling"));
    }
    let mut total = 0.0;
    for s in samples {
        let mut a = Vec::with_capacity(s.len());
        for &p in &s.pixels {
            let c = *labels.assignment.get(p as usize).ok_or_else(|| Error::param(format!("pixel {p} outside the graph")))?;
            a.push(c);
        }
        total += foreground_nmi(&a, &s.labels)?.unwrap_or(0.0);
    }
    Ok(total / samples.len() as f64)
}

/// Outcome of a resolution sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResolutionChoice {
    pub gamma: f64,
    pub labels: CommunityLabels,
    /// `(gamma, score)` per grid point in grid order.
    pub scores: Vec<(f64, f64)>,
}

/// Pick the grid resolution whose partition agrees best with the sample
/// labelings; ties go to the smaller resolution.
pub fn auto_resolution(graph: &EdgeList, samples: &[SparseLabels], gamma_grid: &[f64], cfg: &ResolutionConfig, seed: u64) -> Result<ResolutionChoice> {
    if gamma_grid.len() < 2 {
        return Err(Error::param("need at least two resolution candidates"));
    }
    if samples.is_empty() {
        return Err(Error::param("need at least one sample labeling"));
    }
    if samples.iter().all(SparseLabels::is_empty) {
        return Err(Error::NoForeground);
    }
    let mut best: Option<(f64, f64, CommunityLabels)> = None;
    let mut scores = Vec::with_capacity(gamma_grid.len());
    for &gamma in gamma_grid {
        let labels = detect_communities(graph, &ResolutionConfig { gamma, ..*cfg }, seed)?;
        let score = sample_agreement(&labels, samples)?;
        scores.push((gamma, score));
        let better = match &best {
            None => true,
            Some((g, s, _)) => score > *s || (score == *s && gamma < *g),
        };
        if better {
            best = Some((gamma, score, labels));
        }
    }
    let (gamma, _, labels) = best.expect("grid is non-empty");
    Ok(ResolutionChoice { gamma, labels, scores })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;
    use crate::scene::mix;
    use ndarray::Array2;
    use proptest::prelude::*;
    use rand::Rng;

    fn cfg(objective: Objective, gamma: f64) -> ResolutionConfig {
        ResolutionConfig { objective, gamma, d_c: 4.0, e_min: 0.01 }
    }

    #[test]
    fn config_validation() {
        assert!(cfg(Objective::Cpm, 0.5).validate().is_ok());
        assert!(cfg(Objective::Cpm, 0.0).validate().is_err());
        assert!(ResolutionConfig { d_c: 0.5, ..cfg(Objective::Cpm, 1.0) }.validate().is_err());
        assert!(ResolutionConfig { e_min: 1.0, ..cfg(Objective::Cpm, 1.0) }.validate().is_err());
    }

    #[test]
    fn ids_are_contiguous_in_pixel_order() {
        let g = EdgeList::new(10, vec![(7, 8, 1.0), (2, 3, 1.0), (3, 5, 1.0)]).unwrap();
        let l = detect_communities(&g, &cfg(Objective::Cpm, 0.1), 0).unwrap();
        assert_eq!(l.assignment, vec![0, 0, 1, 1, 0, 1, 0, 2, 2, 0]);
        assert_eq!(l.count, 2);
        assert!(detect_communities(&EdgeList::new(4, vec![]).unwrap(), &cfg(Objective::Cpm, 0.1), 0).is_err());
    }

    #[test]
    fn point_estimate_matches_direct_argmax() {
        let mut rng = seeded(4);
        let planes: Vec<Array2<f64>> = (0..3).map(|_| Array2::from_shape_fn((9, 7), |_| rng.random::<f64>() * 0.5)).collect();
        let views: Vec<_> = planes.iter().map(|p| p.view()).collect();
        let pi = mix(&views, (9, 7)).unwrap();
        let est = point_estimate(&pi);
        for r in 0..9 {
            for c in 0..7 {
                let vals: Vec<f64> = (0..=3).map(|k| pi.get(k, r, c)).collect();
                let mut arg = 0;
                for k in 1..vals.len() {
                    if vals[k] > vals[arg] {
                        arg = k;
                    }
                }
                assert_eq!(est.labels[(r, c)], arg as u32);
            }
        }
        let bg = MixingStack::empty((3, 3));
        assert!(point_estimate(&bg).labels.iter().all(|&l| l == 0));
    }

    #[test]
    fn argmax_ties_go_low() {
        let planes = [Array2::from_elem((1, 2), 0.5), Array2::from_elem((1, 2), 0.5)];
        let views: Vec<_> = planes.iter().map(|p| p.view()).collect();
        let pi = mix(&views, (1, 2)).unwrap();
        assert_eq!(point_estimate(&pi).labels[(0, 0)], 1);
    }

    #[test]
    fn identical_samples_pick_their_resolution() {
        // two triangles bridged by a weak edge: low gamma merges, high splits
        let g = EdgeList::new(6, vec![(0, 1, 1.0), (0, 2, 1.0), (1, 2, 1.0), (2, 3, 0.3), (3, 4, 1.0), (3, 5, 1.0), (4, 5, 1.0)]).unwrap();
        let split = SparseLabels { pixels: (0..6).collect(), labels: vec![1, 1, 1, 2, 2, 2] };
        let c = cfg(Objective::Cpm, 1.0);
        let choice = auto_resolution(&g, &[split.clone(), split], &[0.01, 0.5], &c, 0).unwrap();
        assert_eq!(choice.gamma, 0.5);
        assert_eq!(choice.scores[1].1, 1.0);
        let merged = SparseLabels { pixels: (0..6).collect(), labels: vec![1; 6] };
        // NMI of one cluster against itself is 1 at gamma 0.01
        let choice = auto_resolution(&g, &[merged], &[0.01, 0.5], &c, 0).unwrap();
        assert_eq!(choice.gamma, 0.01);
        assert!(auto_resolution(&g, &[SparseLabels::default()], &[0.01, 0.5], &c, 0).is_err());
        assert!(auto_resolution(&g, &[SparseLabels::default()], &[0.01], &c, 0).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn never_worse_than_singletons(
            seed in any::<u64>(),
            gamma in 0.01f64..2.0,
            n in 2usize..30,
            density in 0.05f64..0.6,
            rb in any::<bool>(),
        ) {
            let mut rng = seeded(seed);
            let mut edges = Vec::new();
            for i in 0..n as u32 {
                for j in i + 1..n as u32 {
                    if rng.random::<f64>() < density {
                        edges.push((i, j, rng.random_range(0.01..1.0)));
                    }
                }
            }
            prop_assume!(!edges.is_empty());
            let obj = if rb { Objective::Rb } else { Objective::Cpm };
            let list = EdgeList::new(n, edges.clone()).unwrap();
            let labels = detect_communities(&list, &cfg(obj, gamma), seed).unwrap();
            let nodes = list.active_nodes();
            let local: Vec<(u32, u32, f64)> = edges.iter().map(|&(i, j, w)| {
                (nodes.binary_search(&i).unwrap() as u32, nodes.binary_search(&j).unwrap() as u32, w)
            }).collect();
            let g = Graph::from_edges(nodes.len(), &local).unwrap();
            let memb: Vec<usize> = nodes.iter().map(|&p| labels.assignment[p as usize] as usize - 1).collect();
            let single: Vec<usize> = (0..nodes.len()).collect();
            prop_assert!(g.quality(&memb, obj, gamma) >= g.quality(&single, obj, gamma) - 1e-12);
        }
    }
}
