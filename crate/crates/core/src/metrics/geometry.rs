//! Feature-space scores: reliable-sample mining, silhouette and
//! nearest-neighbor purity.

use serde::{Deserialize, Serialize};

use super::matrix::{squared_distance, Matrix};
use crate::error::{invalid, Result};
use crate::exec::Exec;

/// Reliable samples with their cluster-derived labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PseudoLabelSet {
    pub indices: Vec<usize>,
    pub labels: Vec<usize>,
    pub num_clusters: usize,
    /// Pipeline stage that mined the set (2 or 3).
    pub stage: u8,
}

impl PseudoLabelSet {
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        if self.indices.len() != self.labels.len() {
            return Err(invalid("indices and labels differ in length"));
        }
        if let Some(l) = self.labels.iter().find(|&&l| l >= self.num_clusters) {
            return Err(invalid(format!("label {l} outside 0..{}", self.num_clusters)));
        }
        let mut sorted = self.indices.clone();
        sorted.sort_unstable();
        if sorted.windows(2).any(|w| w[0] == w[1]) {
            return Err(invalid("duplicate index in pseudo-label set"));
        }
        Ok(())
    }
}

/// For every center, its `k` nearest samples labeled with the center id.
/// A sample claimed by several centers is kept only by the nearest of them
/// (ties to the lower id). Output is sorted by sample index.
pub fn mine_reliable(features: &Matrix, centers: &Matrix, k: usize, stage: u8) -> Result<PseudoLabelSet> {
    let n = features.rows();
    if k > n {
        return Err(invalid(format!("cannot mine {k} neighbors from {n} samples")));
    }
    let c = centers.rows();
    // best[i] = (distance, center) of the closest claiming center.
    let mut best: Vec<Option<(f64, usize)>> = vec![None; n];
    for ci in 0..c {
        let mut dist: Vec<(f64, usize)> = (0..n)
            .map(|i| (squared_distance(features.row(i), centers.row(ci)), i))
            .collect();
        dist.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        for &(d, i) in dist.iter().take(k) {
            match best[i] {
                Some((bd, _)) if bd <= d => {}
                _ => best[i] = Some((d, ci)),
            }
        }
    }
    let (indices, labels) = best
        .iter()
        .enumerate()
        .filter_map(|(i, b)| b.map(|(_, ci)| (i, ci)))
        .unzip();
    Ok(PseudoLabelSet { indices, labels, num_clusters: c, stage })
}

/// Mean silhouette `(b - a) / max(a, b)`; singleton clusters score 0.
/// Requires at least two non-empty clusters.
pub fn silhouette(features: &Matrix, assignments: &[usize], exec: Exec) -> Result<f64> {
    let n = features.rows();
    if assignments.len() != n {
        return Err(invalid("assignment count differs from sample count"));
    }
    let mut ids: Vec<usize> = assignments.to_vec();
    ids.sort_unstable();
    ids.dedup();
    if ids.len() < 2 {
        return Err(invalid("silhouette is undefined for fewer than two clusters"));
    }
    let slot = |a: usize| ids.binary_search(&a).unwrap();
    let sizes = assignments.iter().fold(vec![0usize; ids.len()], |mut s, &a| {
        s[slot(a)] += 1;
        s
    });
    let per_sample = exec.map_range(n, |i| {
        let own = slot(assignments[i]);
        if sizes[own] == 1 {
            return 0.0;
        }
        let mut sums = vec![0.0; ids.len()];
        for j in 0..n {
            if j != i {
                sums[slot(assignments[j])] += squared_distance(features.row(i), features.row(j)).sqrt();
            }
        }
        let a = sums[own] / (sizes[own] - 1) as f64;
        let b = (0..ids.len())
            .filter(|&c| c != own)
            .map(|c| sums[c] / sizes[c] as f64)
            .fold(f64::INFINITY, f64::min);
        let m = a.max(b);
        if m == 0.0 {
            0.0
        } else {
            (b - a) / m
        }
    });
    Ok(per_sample.iter().sum::<f64>() / n as f64)
}

/// Average fraction of each sample's `num_neighbors` nearest neighbors
/// (self excluded, ties to lower index) sharing its true class.
pub fn neighbor_purity(features: &Matrix, truth: &[usize], num_neighbors: usize, exec: Exec) -> Result<f64> {
    let n = features.rows();
    if truth.len() != n {
        return Err(invalid("label count differs from sample count"));
    }
    if num_neighbors == 0 || num_neighbors >= n {
        return Err(invalid(format!("need 1 <= k < N, got k = {num_neighbors}, N = {n}")));
    }
    let per_sample = exec.map_range(n, |i| {
        let mut d: Vec<(f64, usize)> = (0..n)
            .filter(|&j| j != i)
            .map(|j| (squared_distance(features.row(i), features.row(j)), j))
            .collect();
        d.select_nth_unstable_by(num_neighbors - 1, |a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let same = d[..num_neighbors].iter().filter(|(_, j)| truth[*j] == truth[i]).count();
        same as f64 / num_neighbors as f64
    });
    Ok(per_sample.iter().sum::<f64>() / n as f64)
}

/// Purity of the mined pseudo-labels against the true classes of the mined samples.
pub fn mined_purity(set: &PseudoLabelSet, truth: &[usize]) -> Result<f64> {
    let t: Vec<usize> = set.indices.iter().map(|&i| truth[i]).collect();
    super::scores::purity(&set.labels, &t)
}
