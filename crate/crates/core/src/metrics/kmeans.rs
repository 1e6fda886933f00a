//! k-means++ seeding followed by Lloyd iterations, best of several restarts.

use rand::Rng;

use super::matrix::{squared_distance, Matrix};
use crate::error::{invalid, Result};
use crate::exec::Exec;
use crate::rng::{derived_rng, RandomSource};

pub const DEFAULT_RESTARTS: usize = 10;
pub const MAX_ITERATIONS: usize = 300;
pub const SHIFT_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct ClusterResult {
    pub assignments: Vec<usize>,
    /// `C x d`.
    pub centers: Matrix,
    pub inertia: f64,
}

impl ClusterResult {
    pub fn num_clusters(&self) -> usize {
        self.centers.rows()
    }
}

/// Index and squared distance of the nearest center. Ties go to the lower index.
pub fn nearest_center(point: &[f64], centers: &Matrix) -> (usize, f64) {
    (0..centers.rows())
        .map(|c| (c, squared_distance(point, centers.row(c))))
        .fold((0, f64::INFINITY), |best, cur| if cur.1 < best.1 { cur } else { best })
}

fn kmeans_plus_plus(features: &Matrix, k: usize, rng: &mut RandomSource) -> Matrix {
    let n = features.rows();
    let mut centers = Matrix::zeros(k, features.cols());
    let first = rng.gen_range(0..n);
    centers.row_mut(0).copy_from_slice(features.row(first));
    let mut d2: Vec<f64> = (0..n)
        .map(|i| squared_distance(features.row(i), centers.row(0)))
        .collect();
    for c in 1..k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut target = rng.gen::<f64>() * total;
            let mut chosen = n - 1;
            for (i, &w) in d2.iter().enumerate() {
                if target < w {
                    chosen = i;
                    break;
                }
                target -= w;
            }
            chosen
        } else {
            rng.gen_range(0..n)
        };
        centers.row_mut(c).copy_from_slice(features.row(pick));
        for (i, d) in d2.iter_mut().enumerate() {
            *d = d.min(squared_distance(features.row(i), centers.row(c)));
        }
    }
    centers
}

fn assign(features: &Matrix, centers: &Matrix, exec: Exec) -> (Vec<usize>, f64) {
    let nearest = exec.map_range(features.rows(), |i| nearest_center(features.row(i), centers));
    let inertia = nearest.iter().map(|(_, d)| d).sum();
    (nearest.into_iter().map(|(c, _)| c).collect(), inertia)
}

/// Lloyd iterations from `centers`. Returns the result and the inertia
/// after every assignment step.
pub fn lloyd(
    features: &Matrix,
    mut centers: Matrix,
    exec: Exec,
) -> (ClusterResult, Vec<f64>) {
    let k = centers.rows();
    let d = features.cols();
    let mut history = Vec::new();
    let (mut assignments, mut inertia) = assign(features, &centers, exec);
    history.push(inertia);
    for _ in 0..MAX_ITERATIONS {
        let mut sums = Matrix::zeros(k, d);
        let mut counts = vec![0usize; k];
        for (i, &c) in assignments.iter().enumerate() {
            counts[c] += 1;
            sums.row_mut(c).iter_mut().zip(features.row(i)).for_each(|(s, x)| *s += x);
        }
        let mut next = centers.clone();
        for c in 0..k {
            if counts[c] > 0 {
                let inv = 1.0 / counts[c] as f64;
                next.row_mut(c).iter_mut().zip(sums.row(c)).for_each(|(n, s)| *n = s * inv);
            } else {
                // Empty cluster: re-seed at the point worst served by its center.
                let far = (0..features.rows())
                    .max_by(|&a, &b| {
                        let da = squared_distance(features.row(a), centers.row(assignments[a]));
                        let db = squared_distance(features.row(b), centers.row(assignments[b]));
                        da.total_cmp(&db)
                    })
                    .unwrap();
                next.row_mut(c).copy_from_slice(features.row(far));
            }
        }
        let shift = (0..k)
            .map(|c| squared_distance(next.row(c), centers.row(c)).sqrt())
            .fold(0.0, f64::max);
        centers = next;
        let (a, i) = assign(features, &centers, exec);
        assignments = a;
        inertia = i;
        history.push(inertia);
        if shift < SHIFT_TOLERANCE {
            break;
        }
    }
    (ClusterResult { assignments, centers, inertia }, history)
}

pub fn kmeans(features: &Matrix, k: usize, seed: u64, restarts: usize) -> Result<ClusterResult> {
    kmeans_with(features, k, seed, restarts, Exec::default())
}

pub fn kmeans_with(
    features: &Matrix,
    k: usize,
    seed: u64,
    restarts: usize,
    exec: Exec,
) -> Result<ClusterResult> {
    let n = features.rows();
    if k == 0 || n < k {
        return Err(invalid(format!("k-means needs N >= C >= 1, got N = {n}, C = {k}")));
    }
    let mut best: Option<ClusterResult> = None;
    for r in 0..restarts.max(1) {
        let mut rng = derived_rng(seed, r as u64);
        let init = kmeans_plus_plus(features, k, &mut rng);
        let (result, _) = lloyd(features, init, exec);
        if best.as_ref().map_or(true, |b| result.inertia < b.inertia) {
            best = Some(result);
        }
    }
    Ok(best.expect("at least one restart"))
}
