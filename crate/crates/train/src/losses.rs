//! Contrastive, supervised-contrastive and thresholded semi-supervised losses.

use pulseclust_autodiff::{Graph, Real, Tensor, Var};

use crate::error::{contract, Result};

/// Allowed deviation of an embedding norm from one.
pub const NORM_TOLERANCE: f64 = 1e-3;

/// Diagonal mask value: large enough that `exp` underflows to zero.
const SELF_MASK: f64 = -1e9;

fn check_normalized<T: Real>(g: &Graph<T>, z: Var) -> Result<(usize, usize)> {
    let shape = g.shape(z);
    if shape.len() != 2 {
        return Err(contract(format!("embeddings must be a matrix, got {shape:?}")));
    }
    let (n, d) = (shape[0], shape[1]);
    for (i, row) in g.value(z).data().chunks(d).enumerate() {
        let norm = row.iter().map(|v| v.to_f64_lossy().powi(2)).sum::<f64>().sqrt();
        if (norm - 1.0).abs() > NORM_TOLERANCE {
            return Err(contract(format!("embedding {i} has norm {norm}, expected unit norm")));
        }
    }
    Ok((n, d))
}

/// `-sum_i sum_j w[i][j] * log softmax_{k != i}(z_i . z_k / tau)[j]`.
fn masked_contrastive<T: Real>(g: &mut Graph<T>, z: Var, n: usize, tau: f64, weights: Tensor<T>) -> Result<Var> {
    if !(tau > 0.0) {
        return Err(contract(format!("temperature must be positive, got {tau}")));
    }
    let zt = g.transpose(z)?;
    let sim = g.matmul(z, zt)?;
    let sim = g.scale(sim, T::from_f64_lossy(1.0 / tau));
    let mask = Tensor::from_fn(&[n, n], |i| if i / n == i % n { T::from_f64_lossy(SELF_MASK) } else { T::zero() });
    let sim = g.add_const(sim, &mask)?;
    let logp = g.log_softmax(sim, 1)?;
    let picked = g.mul_const(logp, &weights)?;
    let total = g.sum(picked);
    Ok(g.scale(total, -T::one()))
}

/// NT-Xent over `2N` unit-norm embeddings where rows `2k` and `2k + 1` are
/// the two views of sample `k`. Summed over all `2N` anchors.
pub fn ntxent_loss<T: Real>(g: &mut Graph<T>, z: Var, tau: f64) -> Result<Var> {
    let (n, _) = check_normalized(g, z)?;
    if n < 2 || n % 2 != 0 {
        return Err(contract(format!("NT-Xent needs an even number of at least 2 embeddings, got {n}")));
    }
    let weights = Tensor::from_fn(&[n, n], |i| if i % n == (i / n) ^ 1 { T::one() } else { T::zero() });
    masked_contrastive(g, z, n, tau, weights)
}

/// Supervised contrastive loss over unit-norm embeddings with one label per
/// row. Anchors without a positive are skipped; their count is returned.
pub fn supcon_loss<T: Real>(g: &mut Graph<T>, z: Var, labels: &[usize], tau: f64) -> Result<(Var, usize)> {
    let (n, _) = check_normalized(g, z)?;
    if labels.len() != n {
        return Err(contract(format!("{} labels for {n} embeddings", labels.len())));
    }
    let mut weights = Tensor::zeros(&[n, n]);
    let mut skipped = 0;
    for i in 0..n {
        let positives: Vec<usize> = (0..n).filter(|&p| p != i && labels[p] == labels[i]).collect();
        if positives.is_empty() {
            skipped += 1;
            continue;
        }
        let w = T::one() / T::from_usize(positives.len()).unwrap();
        for p in positives {
            weights.data_mut()[i * n + p] = w;
        }
    }
    Ok((masked_contrastive(g, z, n, tau, weights)?, skipped))
}

/// Per-class confidence thresholds adapted from each class's learning progress.
#[derive(Debug, Clone, PartialEq)]
pub struct ThresholdState {
    pub tau_max: f64,
    pub floor: f64,
    pub lambda: f64,
    pub thresholds: Vec<f64>,
    /// Confident counts behind the current thresholds.
    pub counts: Vec<usize>,
}

impl ThresholdState {
    pub fn new(num_classes: usize, tau_max: f64, lambda: f64) -> Self {
        let mut s = Self {
            tau_max,
            floor: 0.5,
            lambda,
            thresholds: vec![tau_max; num_classes],
            counts: vec![0; num_classes],
        };
        s.thresholds = thresholds_from_counts(&s.counts, tau_max, s.floor);
        s
    }

    pub fn num_classes(&self) -> usize {
        self.thresholds.len()
    }

    /// Whether a prediction with this probability row passes its class threshold.
    pub fn is_confident(&self, probs: &[f64]) -> bool {
        let (c, p) = argmax(probs);
        c < self.thresholds.len() && p >= self.thresholds[c]
    }
}

fn thresholds_from_counts(counts: &[usize], tau_max: f64, floor: f64) -> Vec<f64> {
    let peak = counts.iter().copied().max().unwrap_or(0).max(1) as f64;
    counts.iter().map(|&s| (s as f64 / peak * tau_max).max(floor)).collect()
}

pub(crate) fn argmax(row: &[f64]) -> (usize, f64) {
    row.iter().enumerate().fold((0, f64::NEG_INFINITY), |best, (i, &v)| if v > best.1 { (i, v) } else { best })
}

/// Recounts, per class, the rows whose top probability reaches `tau_max`
/// and rescales the thresholds by the best-learned class.
pub fn update_thresholds(state: &ThresholdState, weak_probs: &[Vec<f64>]) -> ThresholdState {
    let mut counts = vec![0; state.num_classes()];
    for row in weak_probs {
        let (c, p) = argmax(row);
        if c < counts.len() && p >= state.tau_max {
            counts[c] += 1;
        }
    }
    ThresholdState {
        thresholds: thresholds_from_counts(&counts, state.tau_max, state.floor),
        counts,
        ..state.clone()
    }
}

pub struct SemiLoss {
    pub supervised: Var,
    pub unsupervised: Var,
    pub total: Var,
    /// Unlabeled rows that passed their threshold.
    pub confident: usize,
}

fn check_probs(weak_probs: &[Vec<f64>], classes: usize) -> Result<()> {
    for (i, row) in weak_probs.iter().enumerate() {
        if row.len() != classes {
            return Err(contract(format!("probability row {i} has {} entries, expected {classes}", row.len())));
        }
        let s: f64 = row.iter().sum();
        if (s - 1.0).abs() > 1e-6 || row.iter().any(|&p| !(0.0..=1.0).contains(&p)) {
            return Err(contract(format!("probability row {i} is not a distribution (sum {s})")));
        }
    }
    Ok(())
}

/// Mean cross-entropy of `logits` rows against `targets`, with per-row weights.
fn weighted_cross_entropy<T: Real>(g: &mut Graph<T>, logits: Var, targets: &[usize], row_weights: &[f64]) -> Result<Var> {
    let (n, c) = (g.shape(logits)[0], g.shape(logits)[1]);
    let logp = g.log_softmax(logits, 1)?;
    let inv = 1.0 / n as f64;
    let weights = Tensor::from_fn(&[n, c], |i| {
        let (r, k) = (i / c, i % c);
        if targets[r] == k {
            T::from_f64_lossy(-row_weights[r] * inv)
        } else {
            T::zero()
        }
    });
    let picked = g.mul_const(logp, &weights)?;
    Ok(g.sum(picked))
}

/// Supervised loss on labeled rows plus the thresholded consistency loss on
/// the strong branch of unlabeled rows, weighted by `state.lambda`.
pub fn semi_supervised_loss<T: Real>(
    g: &mut Graph<T>,
    labeled_logits: Var,
    pseudo_targets: &[usize],
    weak_probs: &[Vec<f64>],
    strong_logits: Var,
    state: &ThresholdState,
) -> Result<SemiLoss> {
    let (ls, lc) = (g.shape(labeled_logits).to_vec(), g.shape(strong_logits).to_vec());
    if ls.len() != 2 || lc.len() != 2 || ls[1] != lc[1] {
        return Err(contract(format!("logit shapes {ls:?} and {lc:?} do not match")));
    }
    if pseudo_targets.len() != ls[0] || pseudo_targets.iter().any(|&t| t >= ls[1]) {
        return Err(contract("pseudo targets do not match the labeled logits"));
    }
    if weak_probs.len() != lc[0] {
        return Err(contract(format!("{} weak rows for {} strong rows", weak_probs.len(), lc[0])));
    }
    check_probs(weak_probs, lc[1])?;
    let supervised = weighted_cross_entropy(g, labeled_logits, pseudo_targets, &vec![1.0; ls[0]])?;
    let mut targets = Vec::with_capacity(lc[0]);
    let mut mask = Vec::with_capacity(lc[0]);
    for row in weak_probs {
        targets.push(argmax(row).0);
        mask.push(if state.is_confident(row) { 1.0 } else { 0.0 });
    }
    let confident = mask.iter().filter(|&&m| m > 0.0).count();
    let unsupervised = weighted_cross_entropy(g, strong_logits, &targets, &mask)?;
    let weighted = g.scale(unsupervised, T::from_f64_lossy(state.lambda));
    let total = g.add(supervised, weighted)?;
    Ok(SemiLoss { supervised, unsupervised, total, confident })
}
