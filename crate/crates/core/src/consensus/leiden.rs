//! Leiden community detection (local moving, refinement, aggregation) for
//! the constant Potts model and resolution-scaled modularity.
//!
//! Both objectives share one form up to a constant,
//! `sum_c [W_c - gamma * scale * M_c^2 / 2]`, where `W_c` is the internal
//! weight of community `c` and `M_c` its total node mass. CPM uses node
//! counts as mass and `scale = 1`; modularity uses strengths and
//! `scale = 1 / (2W)`. Moving node `v` (mass `m`) from `A` to `B` changes
//! the objective by `w(v, B) - w(v, A - v) - gamma * scale * m * (M_B - M_{A - v})`.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Objective {
    /// Constant Potts model.
    Cpm,
    /// Reichardt-Bornholdt modularity.
    Rb,
}

/// Weighted undirected graph in adjacency-list form. Self-loops hold the
/// internal weight of aggregated nodes and count once towards totals.
#[derive(Debug, Clone, PartialEq)]
pub struct Graph {
    offsets: Vec<usize>,
    targets: Vec<u32>,
    weights: Vec<f64>,
    self_loops: Vec<f64>,
    sizes: Vec<f64>,
    strengths: Vec<f64>,
    total_weight: f64,
}

impl Graph {
    /// Graph on `n` nodes from undirected edges; duplicates are summed and
    /// `(i, i, w)` becomes a self-loop.
    pub fn from_edges(n: usize, edges: &[(u32, u32, f64)]) -> Result<Self> {
        Self::build(n, edges, vec![1.0; n], vec![0.0; n])
    }

    fn build(n: usize, edges: &[(u32, u32, f64)], sizes: Vec<f64>, mut self_loops: Vec<f64>) -> Result<Self> {
        let mut degree = vec![0usize; n];
        for &(i, j, w) in edges {
            if i as usize >= n || j as usize >= n {
                return Err(Error::param(format!("edge ({i}, {j}) outside {n} nodes")));
            }
            if !(w >= 0.0 && w.is_finite()) {
                return Err(Error::param(format!("edge weight {w} must be finite and non-negative")));
            }
            if i != j {
                degree[i as usize] += 1;
                degree[j as usize] += 1;
            }
        }
        let mut offsets = vec![0usize; n + 1];
        for v in 0..n {
            offsets[v + 1] = offsets[v] + degree[v];
        }
        let mut fill = offsets.clone();
        let mut targets = vec![0u32; offsets[n]];
        let mut weights = vec![0.0; offsets[n]];
        for &(i, j, w) in edges {
            if i == j {
                self_loops[i as usize] += w;
                continue;
            }
            for (a, b) in [(i, j), (j, i)] {
                let slot = fill[a as usize];
                targets[slot] = b;
                weights[slot] = w;
                fill[a as usize] += 1;
            }
        }
        // sort and merge duplicate neighbours
        let mut new_offsets = vec![0usize; n + 1];
        let mut t2 = Vec::with_capacity(targets.len());
        let mut w2 = Vec::with_capacity(weights.len());
        for v in 0..n {
            let mut nb: Vec<(u32, f64)> = (offsets[v]..offsets[v + 1]).map(|e| (targets[e], weights[e])).collect();
            nb.sort_by_key(|&(t, _)| t);
            for (t, w) in nb {
                if t2.len() > new_offsets[v] && *t2.last().unwrap() == t {
                    *w2.last_mut().unwrap() += w;
                } else {
                    t2.push(t);
                    w2.push(w);
                }
            }
            new_offsets[v + 1] = t2.len();
        }
        let mut strengths = vec![0.0; n];
        let mut total = 0.0;
        for v in 0..n {
            let s: f64 = w2[new_offsets[v]..new_offsets[v + 1]].iter().sum();
            strengths[v] = s + 2.0 * self_loops[v];
            total += 0.5 * s + self_loops[v];
        }
        Ok(Graph { offsets: new_offsets, targets: t2, weights: w2, self_loops, sizes, strengths, total_weight: total })
    }

    pub fn num_nodes(&self) -> usize {
        self.sizes.len()
    }

    pub fn total_weight(&self) -> f64 {
        self.total_weight
    }

    fn neighbours(&self, v: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let r = self.offsets[v]..self.offsets[v + 1];
        self.targets[r.clone()].iter().map(|&t| t as usize).zip(self.weights[r].iter().copied())
    }

    fn masses(&self, objective: Objective) -> (&[f64], f64) {
        match objective {
            Objective::Cpm => (&self.sizes, 1.0),
            Objective::Rb => {
                let scale = if self.total_weight > 0.0 { 1.0 / (2.0 * self.total_weight) } else { 0.0 };
                (&self.strengths, scale)
            }
        }
    }

    /// CPM: `sum_c [W_c - gamma * n_c (n_c - 1) / 2]`.
    /// RB: `sum_c [W_c / W - gamma * (S_c / 2W)^2]`.
    pub fn quality(&self, membership: &[usize], objective: Objective, gamma: f64) -> f64 {
        let k = membership.iter().copied().max().map_or(0, |m| m + 1);
        let mut internal = vec![0.0; k];
        let mut mass = vec![0.0; k];
        for v in 0..self.num_nodes() {
            let c = membership[v];
            internal[c] += self.self_loops[v];
            for (u, w) in self.neighbours(v) {
                if u > v && membership[u] == c {
                    internal[c] += w;
                }
            }
        }
        match objective {
            Objective::Cpm => {
                for v in 0..self.num_nodes() {
                    mass[membership[v]] += self.sizes[v];
                }
                (0..k).map(|c| internal[c] - gamma * mass[c] * (mass[c] - 1.0) / 2.0).sum()
            }
            Objective::Rb => {
                let w = self.total_weight;
                if w == 0.0 {
                    return 0.0;
                }
                for v in 0..self.num_nodes() {
                    mass[membership[v]] += self.strengths[v];
                }
                (0..k).map(|c| internal[c] / w - gamma * (mass[c] / (2.0 * w)).powi(2)).sum()
            }
        }
    }

    /// Collapse communities into nodes; returns the graph and each new
    /// node's representative community.
    fn aggregate(&self, membership: &[usize], k: usize) -> Graph {
        let mut sizes = vec![0.0; k];
        let mut loops = vec![0.0; k];
        let mut edges: Vec<(u32, u32, f64)> = Vec::new();
        for v in 0..self.num_nodes() {
            let c = membership[v];
            sizes[c] += self.sizes[v];
            loops[c] += self.self_loops[v];
            for (u, w) in self.neighbours(v) {
                if u > v {
                    let d = membership[u];
                    if d == c {
                        loops[c] += w;
                    } else {
                        edges.push((c.min(d) as u32, c.max(d) as u32, w));
                    }
                }
            }
        }
        edges.sort_unstable_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
        let mut merged: Vec<(u32, u32, f64)> = Vec::with_capacity(edges.len());
        for (i, j, w) in edges {
            match merged.last_mut() {
                Some(last) if last.0 == i && last.1 == j => last.2 += w,
                _ => merged.push((i, j, w)),
            }
        }
        Graph::build(k, &merged, sizes, loops).expect("aggregate edges are in range")
    }
}

/// Relabel to contiguous ids in order of first appearance.
fn renumber(membership: &mut [usize]) -> usize {
    let mut map = vec![usize::MAX; membership.len().max(1)];
    let mut next = 0;
    for m in membership.iter_mut() {
        if map[*m] == usize::MAX {
            map[*m] = next;
            next += 1;
        }
        *m = map[*m];
    }
    next
}

struct Moves<'a> {
    g: &'a Graph,
    mass: &'a [f64],
    coeff: f64,
}

/// Scratch space accumulating weights per community.
struct Links {
    acc: Vec<f64>,
    stamp: Vec<u32>,
    epoch: u32,
    touched: Vec<usize>,
}

impl Links {
    fn new(n: usize) -> Self {
        Links { acc: vec![0.0; n], stamp: vec![0; n], epoch: 0, touched: Vec::new() }
    }

    fn reset(&mut self) {
        self.epoch += 1;
        self.touched.clear();
    }

    fn add(&mut self, c: usize, w: f64) {
        if self.stamp[c] != self.epoch {
            self.stamp[c] = self.epoch;
            self.acc[c] = 0.0;
            self.touched.push(c);
        }
        self.acc[c] += w;
    }

    fn get(&self, c: usize) -> f64 {
        if self.stamp[c] == self.epoch { self.acc[c] } else { 0.0 }
    }

    /// Touched communities other than `skip`, ascending.
    fn candidates(&self, skip: usize) -> Vec<usize> {
        let mut c: Vec<usize> = self.touched.iter().copied().filter(|&c| c != skip).collect();
        c.sort_unstable();
        c
    }
}

/// Fast local moving: visit nodes from a queue, move each to the community
/// with the largest strictly positive gain (ties to the lowest id), and
/// requeue neighbours that end up outside the node's new community.
fn move_nodes(m: &Moves, membership: &mut [usize], order: &[usize]) -> bool {
    let n = m.g.num_nodes();
    let mut comm_mass = vec![0.0; n];
    let mut comm_count = vec![0usize; n];
    for v in 0..n {
        comm_mass[membership[v]] += m.mass[v];
        comm_count[membership[v]] += 1;
    }
    let mut empty: Vec<usize> = (0..n).filter(|&c| comm_count[c] == 0).collect();
    empty.reverse();
    let mut queue: std::collections::VecDeque<usize> = order.iter().copied().collect();
    let mut queued = vec![true; n];
    let mut links = Links::new(n);
    let mut changed = false;
    while let Some(v) = queue.pop_front() {
        queued[v] = false;
        let a = membership[v];
        links.reset();
        for (u, w) in m.g.neighbours(v) {
            links.add(membership[u], w);
        }
        let mv = m.mass[v];
        let stay = links.get(a) - m.coeff * mv * (comm_mass[a] - mv);
        let mut best = a;
        let mut best_gain = 0.0;
        for c in links.candidates(a) {
            let gain = links.get(c) - m.coeff * mv * comm_mass[c] - stay;
            if gain > best_gain {
                best_gain = gain;
                best = c;
            }
        }
        // an empty community is worth `-stay`
        if comm_count[a] > 1 && -stay > best_gain {
            if let Some(&e) = empty.last() {
                best_gain = -stay;
                best = e;
            }
        }
        if best != a && best_gain > 0.0 {
            if best == *empty.last().unwrap_or(&usize::MAX) {
                empty.pop();
            }
            comm_mass[a] -= mv;
            comm_count[a] -= 1;
            if comm_count[a] == 0 {
                empty.push(a);
            }
            comm_mass[best] += mv;
            comm_count[best] += 1;
            membership[v] = best;
            changed = true;
            for (u, _) in m.g.neighbours(v) {
                if !queued[u] && membership[u] != best {
                    queued[u] = true;
                    queue.push_back(u);
                }
            }
        }
    }
    changed
}

/// Refinement: inside each community of `membership`, start from singletons
/// and greedily merge well-connected singleton nodes into well-connected
/// sub-communities with non-negative gain.
fn refine(m: &Moves, membership: &[usize], order: &[usize]) -> Vec<usize> {
    let n = m.g.num_nodes();
    let mut refined: Vec<usize> = (0..n).collect();
    let mut r_mass: Vec<f64> = m.mass.to_vec();
    let mut singleton = vec![true; n];
    // weight from each refined community to the rest of its parent
    let mut ext = vec![0.0; n];
    let mut parent_mass = vec![0.0; n];
    for v in 0..n {
        parent_mass[membership[v]] += m.mass[v];
    }
    for v in 0..n {
        ext[v] = m.g.neighbours(v).filter(|&(u, _)| membership[u] == membership[v]).map(|(_, w)| w).sum();
    }
    let mut links = Links::new(n);
    for &v in order {
        if !singleton[v] {
            continue;
        }
        let pc = membership[v];
        let mv = m.mass[v];
        // node must be well connected to its parent
        if ext[v] < m.coeff * mv * (parent_mass[pc] - mv) {
            continue;
        }
        links.reset();
        for (u, w) in m.g.neighbours(v) {
            if membership[u] == pc {
                links.add(refined[u], w);
            }
        }
        let mut best = v;
        let mut best_gain = 0.0;
        for c in links.candidates(v) {
            // target must be well connected to its parent
            if ext[c] < m.coeff * r_mass[c] * (parent_mass[pc] - r_mass[c]) {
                continue;
            }
            let gain = links.get(c) - m.coeff * mv * r_mass[c];
            if gain >= best_gain && (best == v || gain > best_gain) {
                best_gain = gain;
                best = c;
            }
        }
        if best != v {
            refined[v] = best;
            singleton[v] = false;
            singleton[best] = false;
            // ext(T + v) = ext(T) + ext(v) - 2 w(v, T)
            ext[best] += ext[v] - 2.0 * links.get(best);
            r_mass[best] += mv;
            r_mass[v] = 0.0;
        }
    }
    refined
}

/// Leiden on `graph`, iterated until a full pass changes nothing.
/// `seed` fixes the node visit orders.
pub fn leiden(graph: &Graph, objective: Objective, gamma: f64, seed: u64) -> Result<Vec<usize>> {
    if !(gamma > 0.0 && gamma.is_finite()) {
        return Err(Error::param(format!("resolution must be positive, got {gamma}")));
    }
    let n = graph.num_nodes();
    let mut rng = crate::rng::stream_rng(seed, crate::rng::Stream::Community, 0);
    let mut membership: Vec<usize> = (0..n).collect();
    for _ in 0..32 {
        let before = membership.clone();
        let mut g = graph.clone();
        // membership of the current level's nodes, and each original node's
        // current-level node
        let mut level_membership = membership.clone();
        let mut node_of: Vec<usize> = (0..n).collect();
        loop {
            let (mass, scale) = g.masses(objective);
            let moves = Moves { g: &g, mass, coeff: gamma * scale };
            let mut order: Vec<usize> = (0..g.num_nodes()).collect();
            order.shuffle(&mut rng);
            move_nodes(&moves, &mut level_membership, &order);
            let k = renumber(&mut level_membership);
            if k == g.num_nodes() {
                for v in 0..n {
                    membership[v] = level_membership[node_of[v]];
                }
                break;
            }
            order.shuffle(&mut rng);
            let mut refined = refine(&moves, &level_membership, &order);
            let kr = renumber(&mut refined);
            let mut parent = vec![0usize; kr];
            for v in 0..g.num_nodes() {
                parent[refined[v]] = level_membership[v];
            }
            if kr == g.num_nodes() {
                // refinement kept every node alone: aggregate by the moved
                // partition instead so the level shrinks
                let agg = g.aggregate(&level_membership, k);
                for x in node_of.iter_mut() {
                    *x = level_membership[*x];
                }
                level_membership = (0..k).collect();
                g = agg;
                continue;
            }
            let agg = g.aggregate(&refined, kr);
            for x in node_of.iter_mut() {
                *x = refined[*x];
            }
            level_membership = parent;
            g = agg;
        }
        renumber(&mut membership);
        if membership == before {
            break;
        }
        if graph.quality(&membership, objective, gamma) <= graph.quality(&before, objective, gamma) {
            break;
        }
    }
    Ok(membership)
}
