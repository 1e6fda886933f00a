//! External clustering scores: ACC (optimal one-to-one matching), NMI, ARI
//! and purity, all computed from the contingency table.

use std::collections::BTreeMap;

use crate::error::{invalid, Result};

/// Contingency table `table[p][t]` = count of samples with predicted id
/// `pred_ids[p]` and true id `truth_ids[t]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Contingency {
    pub pred_ids: Vec<usize>,
    pub truth_ids: Vec<usize>,
    pub table: Vec<Vec<usize>>,
    pub total: usize,
}

impl Contingency {
    pub fn new(pred: &[usize], truth: &[usize]) -> Result<Self> {
        if pred.len() != truth.len() {
            return Err(invalid(format!(
                "label vectors differ in length: {} vs {}",
                pred.len(),
                truth.len()
            )));
        }
        if pred.is_empty() {
            return Err(invalid("empty labelings"));
        }
        let index = |ids: &[usize]| -> BTreeMap<usize, usize> {
            let mut m = BTreeMap::new();
            for &id in ids {
                let next = m.len();
                m.entry(id).or_insert(next);
            }
            // Re-number in sorted id order for stable output.
            m.keys().copied().enumerate().map(|(i, k)| (k, i)).collect()
        };
        let pm = index(pred);
        let tm = index(truth);
        let mut table = vec![vec![0usize; tm.len()]; pm.len()];
        for (p, t) in pred.iter().zip(truth) {
            table[pm[p]][tm[t]] += 1;
        }
        Ok(Self {
            pred_ids: pm.keys().copied().collect(),
            truth_ids: tm.keys().copied().collect(),
            table,
            total: pred.len(),
        })
    }

    fn row_sums(&self) -> Vec<usize> {
        self.table.iter().map(|r| r.iter().sum()).collect()
    }

    fn col_sums(&self) -> Vec<usize> {
        (0..self.truth_ids.len())
            .map(|t| self.table.iter().map(|r| r[t]).sum())
            .collect()
    }
}

/// Maximum-weight assignment on a rectangular weight matrix. Returns, per
/// row, the matched column (or `None` when rows outnumber columns).
pub fn hungarian_max(weights: &[Vec<f64>]) -> Vec<Option<usize>> {
    let rows = weights.len();
    let cols = weights.first().map_or(0, Vec::len);
    let n = rows.max(cols);
    if n == 0 {
        return Vec::new();
    }
    let max_w = weights
        .iter()
        .flatten()
        .cloned()
        .fold(0.0f64, f64::max);
    // Square cost matrix, padded with zero-weight entries.
    let cost = |i: usize, j: usize| -> f64 {
        if i < rows && j < cols {
            max_w - weights[i][j]
        } else {
            max_w
        }
    };
    // Jonker-Volgenant style O(n^3) with potentials, 1-based.
    let inf = f64::INFINITY;
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![inf; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = inf;
            let mut j1 = 0;
            for j in 1..=n {
                if !used[j] {
                    let cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut assignment = vec![None; rows];
    for j in 1..=n {
        let i = p[j];
        if i >= 1 && i <= rows && j <= cols {
            assignment[i - 1] = Some(j - 1);
        }
    }
    assignment
}

/// Best agreement over one-to-one mappings of predicted to true ids.
pub fn clustering_accuracy(pred: &[usize], truth: &[usize]) -> Result<f64> {
    let c = Contingency::new(pred, truth)?;
    let weights: Vec<Vec<f64>> = c
        .table
        .iter()
        .map(|r| r.iter().map(|&x| x as f64).collect())
        .collect();
    let matched: usize = hungarian_max(&weights)
        .iter()
        .enumerate()
        .filter_map(|(p, t)| t.map(|t| c.table[p][t]))
        .sum();
    Ok(matched as f64 / c.total as f64)
}

fn entropy(counts: &[usize], total: f64) -> f64 {
    counts
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / total;
            -p * p.ln()
        })
        .sum()
}

/// `I(pred; truth) / sqrt(H(pred) H(truth))`. Two single-cluster labelings
/// score 1; a single-cluster labeling against a non-trivial one scores 0.
pub fn nmi(pred: &[usize], truth: &[usize]) -> Result<f64> {
    let c = Contingency::new(pred, truth)?;
    let n = c.total as f64;
    let rows = c.row_sums();
    let cols = c.col_sums();
    let hp = entropy(&rows, n);
    let ht = entropy(&cols, n);
    if hp == 0.0 || ht == 0.0 {
        return Ok(if hp == 0.0 && ht == 0.0 { 1.0 } else { 0.0 });
    }
    let mut mi = 0.0;
    for (p, row) in c.table.iter().enumerate() {
        for (t, &nij) in row.iter().enumerate() {
            if nij > 0 {
                let nij = nij as f64;
                mi += nij / n * (n * nij / (rows[p] as f64 * cols[t] as f64)).ln();
            }
        }
    }
    Ok((mi / (hp * ht).sqrt()).clamp(0.0, 1.0))
}

fn comb2(x: usize) -> f64 {
    let x = x as f64;
    x * (x - 1.0) / 2.0
}

/// Adjusted Rand index (Hubert-Arabie).
pub fn ari(pred: &[usize], truth: &[usize]) -> Result<f64> {
    let c = Contingency::new(pred, truth)?;
    let index: f64 = c.table.iter().flatten().map(|&x| comb2(x)).sum();
    let a: f64 = c.row_sums().into_iter().map(comb2).sum();
    let b: f64 = c.col_sums().into_iter().map(comb2).sum();
    let total = comb2(c.total);
    if total == 0.0 {
        return Ok(1.0);
    }
    let expected = a * b / total;
    let max_index = 0.5 * (a + b);
    let denom = max_index - expected;
    if denom == 0.0 {
        return Ok(1.0);
    }
    Ok((index - expected) / denom)
}

/// `sum over predicted clusters of the largest true-class overlap, / N`.
pub fn purity(pred: &[usize], truth: &[usize]) -> Result<f64> {
    let c = Contingency::new(pred, truth)?;
    let hits: usize = c.table.iter().map(|r| *r.iter().max().unwrap()).sum();
    Ok(hits as f64 / c.total as f64)
}

/// All four scores at once.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Scores {
    pub acc: f64,
    pub nmi: f64,
    pub ari: f64,
    pub purity: f64,
}

pub fn score_all(pred: &[usize], truth: &[usize]) -> Result<Scores> {
    Ok(Scores {
        acc: clustering_accuracy(pred, truth)?,
        nmi: nmi(pred, truth)?,
        ari: ari(pred, truth)?,
        purity: purity(pred, truth)?,
    })
}
