//! Agreement between labelings and per-suite summaries.
//!
//! Label 0 is background everywhere.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

fn contingency(a: &[u32], b: &[u32]) -> (HashMap<(u32, u32), u64>, HashMap<u32, u64>, HashMap<u32, u64>) {
    let mut joint = HashMap::new();
    let mut ma = HashMap::new();
    let mut mb = HashMap::new();
    for (&x, &y) in a.iter().zip(b) {
        *joint.entry((x, y)).or_insert(0) += 1;
        *ma.entry(x).or_insert(0) += 1;
        *mb.entry(y).or_insert(0) += 1;
    }
    (joint, ma, mb)
}

fn pairs(n: u64) -> f64 {
    let n = n as f64;
    n * (n - 1.0) / 2.0
}

/// Adjusted Rand index over all positions, background included as a label.
/// Two labelings that are both a single cluster score 1.
pub fn adjusted_rand_index(a: &[u32], b: &[u32]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::dims(a.len(), b.len()));
    }
    let (joint, ma, mb) = contingency(a, b);
    let index: f64 = joint.values().map(|&n| pairs(n)).sum();
    let sa: f64 = ma.values().map(|&n| pairs(n)).sum();
    let sb: f64 = mb.values().map(|&n| pairs(n)).sum();
    let total = pairs(a.len() as u64);
    if total == 0.0 {
        return Ok(1.0);
    }
    let expected = sa * sb / total;
    let max = 0.5 * (sa + sb);
    if max == expected {
        return Ok(1.0);
    }
    Ok((index - expected) / (max - expected))
}

fn entropy(counts: &HashMap<u32, u64>, n: f64) -> f64 {
    counts
        .values()
        .map(|&c| {
            let p = c as f64 / n;
            -p * p.ln()
        })
        .sum()
}

/// `2 I(A; B) / (H(A) + H(B))`; 1 when both entropies vanish.
pub fn normalized_mutual_information(a: &[u32], b: &[u32]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::dims(a.len(), b.len()));
    }
    if a.is_empty() {
        return Err(Error::param("NMI needs at least one position"));
    }
    let n = a.len() as f64;
    let (joint, ma, mb) = contingency(a, b);
    let (ha, hb) = (entropy(&ma, n), entropy(&mb, n));
    if ha + hb == 0.0 {
        return Ok(1.0);
    }
    let mut mi = 0.0;
    for (&(x, y), &c) in &joint {
        let pxy = c as f64 / n;
        let px = ma[&x] as f64 / n;
        let py = mb[&y] as f64 / n;
        mi += pxy * (pxy / (px * py)).ln();
    }
    Ok((2.0 * mi / (ha + hb)).clamp(0.0, 1.0))
}

/// NMI over positions that are foreground in both labelings, or `None` when
/// there are none.
pub fn foreground_nmi(a: &[u32], b: &[u32]) -> Result<Option<f64>> {
    if a.len() != b.len() {
        return Err(Error::dims(a.len(), b.len()));
    }
    let (fa, fb): (Vec<u32>, Vec<u32>) = a.iter().zip(b).filter(|(&x, &y)| x != 0 && y != 0).map(|(&x, &y)| (x, y)).unzip();
    if fa.is_empty() {
        return Ok(None);
    }
    normalized_mutual_information(&fa, &fb).map(Some)
}

/// Share of a truth instance a predicted label must cover to count as one of
/// its pieces.
pub const SPLIT_COVER: f64 = 0.1;

/// Sum over truth instances of (number of predicted foreground labels
/// covering at least [`SPLIT_COVER`] of the instance) - 1, floored at 0.
pub fn split_count(truth: &[u32], pred: &[u32]) -> Result<usize> {
    if truth.len() != pred.len() {
        return Err(Error::dims(truth.len(), pred.len()));
    }
    let mut sizes: HashMap<u32, u64> = HashMap::new();
    let mut overlap: HashMap<(u32, u32), u64> = HashMap::new();
    for (&t, &p) in truth.iter().zip(pred) {
        if t == 0 {
            continue;
        }
        *sizes.entry(t).or_insert(0) += 1;
        if p != 0 {
            *overlap.entry((t, p)).or_insert(0) += 1;
        }
    }
    let mut pieces: HashMap<u32, usize> = HashMap::new();
    for (&(t, _), &n) in &overlap {
        if n as f64 >= SPLIT_COVER * sizes[&t] as f64 {
            *pieces.entry(t).or_insert(0) += 1;
        }
    }
    Ok(pieces.values().map(|&k| k.saturating_sub(1)).sum())
}

/// Distinct non-zero labels.
pub fn count_labels(labels: &[u32]) -> usize {
    let mut v: Vec<u32> = labels.iter().copied().filter(|&l| l != 0).collect();
    v.sort_unstable();
    v.dedup();
    v.len()
}

/// Metrics for one scene.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SceneMetrics {
    pub true_k: usize,
    pub est_k: usize,
    pub ari: f64,
    /// Foreground-restricted NMI; `None` when the labelings share no
    /// foreground pixel.
    pub nmi: Option<f64>,
    pub splits: usize,
}

impl SceneMetrics {
    pub fn evaluate(truth: &[u32], pred: &[u32]) -> Result<Self> {
        Ok(SceneMetrics {
            true_k: count_labels(truth),
            est_k: count_labels(pred),
            ari: adjusted_rand_index(truth, pred)?,
            nmi: foreground_nmi(truth, pred)?,
            splits: split_count(truth, pred)?,
        })
    }

    pub fn count_error(&self) -> i64 {
        self.est_k as i64 - self.true_k as i64
    }
}

/// Point estimate with a 95% interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub value: f64,
    pub lo: f64,
    pub hi: f64,
}

const Z95: f64 = 1.959963984540054;

/// Normal-approximation interval for a mean.
pub fn mean_interval(xs: &[f64]) -> Option<Interval> {
    if xs.is_empty() {
        return None;
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = if xs.len() > 1 { xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0) } else { 0.0 };
    let half = Z95 * (var / n).sqrt();
    Some(Interval { value: mean, lo: mean - half, hi: mean + half })
}

/// Wilson score interval for a proportion.
pub fn proportion_interval(successes: usize, n: usize) -> Option<Interval> {
    if n == 0 {
        return None;
    }
    let (k, n) = (successes as f64, n as f64);
    let p = k / n;
    let z2 = Z95 * Z95;
    let denom = 1.0 + z2 / n;
    let centre = (p + z2 / (2.0 * n)) / denom;
    let half = Z95 * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt() / denom;
    Some(Interval { value: p, lo: (centre - half).max(0.0), hi: (centre + half).min(1.0) })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub scenes: usize,
    /// Share of scenes with `|est_k - true_k| <= 1`.
    pub count_within_one: Interval,
    pub count_exact: Interval,
    pub mean_ari: Interval,
    pub mean_nmi: Option<Interval>,
    pub total_splits: usize,
}

/// Per-scene metrics and their aggregates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub scenes: Vec<SceneMetrics>,
    pub summary: Option<Summary>,
}

impl EvalReport {
    pub fn new(scenes: Vec<SceneMetrics>) -> Self {
        let summary = summarize(&scenes);
        EvalReport { scenes, summary }
    }
}

pub fn summarize(scenes: &[SceneMetrics]) -> Option<Summary> {
    let n = scenes.len();
    let within = scenes.iter().filter(|s| s.count_error().abs() <= 1).count();
    let exact = scenes.iter().filter(|s| s.count_error() == 0).count();
    let aris: Vec<f64> = scenes.iter().map(|s| s.ari).collect();
    let nmis: Vec<f64> = scenes.iter().filter_map(|s| s.nmi).collect();
    Some(Summary {
        scenes: n,
        count_within_one: proportion_interval(within, n)?,
        count_exact: proportion_interval(exact, n)?,
        mean_ari: mean_interval(&aris)?,
        mean_nmi: mean_interval(&nmis),
        total_splits: scenes.iter().map(|s| s.splits).sum(),
    })
}
