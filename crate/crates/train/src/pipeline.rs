//! The three training stages, evaluation and the cluster-count sweep.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::sync::mpsc::sync_channel;

use log::{debug, info, warn};
use pulseclust_autodiff::optim::{Adam, Optimizer, Sgd};
use pulseclust_autodiff::{Graph, Tensor, Var};
use pulseclust_core::augment::{apply_policy, AugmentationPolicy};
use pulseclust_core::dataset::{generate, read_dataset, signal_to_planar, Dataset, DatasetSpec};
use pulseclust_core::metrics::{
    kmeans_with, mine_reliable, mined_purity, neighbor_purity, purity, score_all, silhouette, Contingency, Matrix,
    PseudoLabelSet,
};
use pulseclust_core::rng::{derive_seed, derived_rng, rng_from_seed};
use pulseclust_core::Exec;
use rand::seq::SliceRandom;
use serde::Serialize;

use crate::config::{DataSource, InputNorm, OptimizerKind, RunConfig, StageConfig};
use crate::error::{contract, Error, Result};
use crate::losses::{ntxent_loss, semi_supervised_loss, supcon_loss, update_thresholds, ThresholdState};
use crate::model::Model;

/// Batches assembled ahead of the optimizer step.
const PREFETCH_DEPTH: usize = 2;

// Stream tags for seed derivation.
const TAG_INIT: u64 = 0;
const TAG_SHUFFLE: u64 = 1;
const TAG_VIEWS: u64 = 2;
const TAG_KMEANS: u64 = 3;
const TAG_LABELED: u64 = 4;
const TAG_SWEEP_DATA: u64 = 5;

/// Folds `path` into `seed` one derivation at a time.
pub fn stream_seed(seed: u64, path: &[u64]) -> u64 {
    path.iter().fold(seed, |s, &p| derive_seed(s, p))
}

pub fn load_dataset(config: &RunConfig, exec: Exec) -> Result<Dataset> {
    let d = &config.data;
    let ds = match d.source {
        DataSource::Toy => generate(&DatasetSpec::toy(config.seed, d.per_class), exec)?,
        DataSource::Dataset1 => generate(&DatasetSpec::dataset1(config.seed, d.scale), exec)?,
        DataSource::Dataset2 => generate(&DatasetSpec::dataset2(config.seed, d.scale), exec)?,
        DataSource::File => {
            let path = d.path.as_ref().ok_or_else(|| Error::Config("data.path is not set".into()))?;
            read_dataset(path)?
        }
    };
    Ok(ds)
}

/// Held-out toy frames at fixed SNR levels, drawn from a seed stream
/// disjoint from the training set.
pub fn snr_sweep_dataset(config: &RunConfig, exec: Exec) -> Result<Dataset> {
    let seed = stream_seed(config.seed, &[TAG_SWEEP_DATA]);
    Ok(generate(&DatasetSpec::toy_snr_sweep(seed, config.eval.snr_sweep_per_class), exec)?)
}

/// Number of distinct true classes.
pub fn num_classes(ds: &Dataset) -> usize {
    ds.labels().into_iter().collect::<BTreeSet<_>>().len()
}

/// Scales a planar frame to unit RMS.
pub fn normalize_rms(frame: &mut [f32]) {
    let n = (frame.len() / 2).max(1);
    let power = frame.iter().map(|&v| (v as f64) * (v as f64)).sum::<f64>() / n as f64;
    if power > 0.0 {
        let inv = (1.0 / power.sqrt()) as f32;
        frame.iter_mut().for_each(|v| *v *= inv);
    }
}

/// Scales every planar sample to unit modulus; zero samples stay zero.
pub fn normalize_phase(frame: &mut [f32]) {
    let n = frame.len() / 2;
    for k in 0..n {
        let (i, q) = (frame[k], frame[n + k]);
        let m = (i * i + q * q).sqrt();
        if m > 0.0 {
            frame[k] = i / m;
            frame[n + k] = q / m;
        }
    }
}

/// `[B, 2, L]` input tensor for the listed rows. With a policy, row `p` is
/// augmented with the stream `(seed, p)`.
pub fn frame_batch(
    ds: &Dataset,
    indices: &[usize],
    policy: Option<&AugmentationPolicy>,
    norm: InputNorm,
    seed: u64,
    exec: Exec,
) -> Result<Tensor<f32>> {
    if indices.is_empty() {
        return Err(contract("empty batch"));
    }
    let len = ds.frame_len();
    let rows = exec.map_range(indices.len(), |p| -> Result<Vec<f32>> {
        let i = indices[p];
        let mut frame = match policy {
            None => ds.frame(i).to_vec(),
            Some(policy) => {
                let mut rng = derived_rng(seed, p as u64);
                signal_to_planar(&apply_policy(&ds.signal(i), policy, &mut rng)?)
            }
        };
        match norm {
            InputNorm::Rms => normalize_rms(&mut frame),
            InputNorm::Phase => normalize_phase(&mut frame),
        }
        Ok(frame)
    });
    let mut data = Vec::with_capacity(indices.len() * 2 * len);
    for row in rows {
        data.extend(row?);
    }
    Ok(Tensor::new(vec![indices.len(), 2, len], data)?)
}

/// Two views per sample, interleaved: rows `2k` and `2k + 1` belong to `indices[k]`.
fn paired_views(
    ds: &Dataset,
    indices: &[usize],
    policy: &AugmentationPolicy,
    norm: InputNorm,
    seed: u64,
    exec: Exec,
) -> Result<Tensor<f32>> {
    let doubled: Vec<usize> = indices.iter().flat_map(|&i| [i, i]).collect();
    frame_batch(ds, &doubled, Some(policy), norm, seed, exec)
}

/// Runs `produce(step)` on a helper thread up to [`PREFETCH_DEPTH`] steps
/// ahead of `consume`. Every step's randomness is fixed by its index, so the
/// overlap does not change results.
fn prefetched<B, P, C>(steps: usize, produce: P, mut consume: C) -> Result<()>
where
    B: Send,
    P: Fn(usize) -> Result<B> + Sync,
    C: FnMut(usize, B) -> Result<()>,
{
    std::thread::scope(|scope| {
        let (tx, rx) = sync_channel::<Result<B>>(PREFETCH_DEPTH);
        let produce = &produce;
        scope.spawn(move || {
            for step in 0..steps {
                if tx.send(produce(step)).is_err() {
                    break;
                }
            }
        });
        for step in 0..steps {
            let batch = rx.recv().map_err(|_| contract("batch producer stopped"))??;
            consume(step, batch)?;
        }
        Ok(())
    })
}

/// Splits shuffled rows into batches, folding a trailing batch smaller than
/// two rows into its predecessor.
fn batches(mut rows: Vec<usize>, batch_size: usize, seed: u64) -> Vec<Vec<usize>> {
    rows.shuffle(&mut rng_from_seed(seed));
    let mut out: Vec<Vec<usize>> = rows.chunks(batch_size).map(<[usize]>::to_vec).collect();
    if out.len() > 1 && out.last().map_or(false, |b| b.len() < 2) {
        let tail = out.pop().unwrap();
        out.last_mut().unwrap().extend(tail);
    }
    out
}

fn optimizer(stage: &StageConfig) -> Box<dyn Optimizer<f32>> {
    match stage.optimizer {
        OptimizerKind::Sgd => Box::new(Sgd::new(stage.learning_rate, stage.momentum)),
        OptimizerKind::Adam => Box::new(Adam::new(stage.learning_rate)),
    }
}

fn step(model: &mut Model, opt: &mut dyn Optimizer<f32>, g: &mut Graph<f32>, loss: Var) -> Result<f64> {
    let value = g.item(loss) as f64;
    if !value.is_finite() {
        return Err(contract(format!("loss diverged to {value}")));
    }
    g.backward(loss)?;
    model.store.zero_grad();
    g.accumulate_param_grads(&mut model.store);
    opt.step(&mut model.store);
    Ok(value)
}

/// "Loss no longer decreases": stop after `patience` epochs without a
/// relative improvement of at least `min_rel` over the best epoch.
#[derive(Debug, Clone)]
pub struct EarlyStopping {
    patience: usize,
    min_rel: f64,
    best: f64,
    wait: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize, min_rel: f64) -> Self {
        Self { patience, min_rel, best: f64::INFINITY, wait: 0 }
    }

    /// Records an epoch loss; true when training should stop.
    pub fn update(&mut self, loss: f64) -> bool {
        if !self.best.is_finite() || self.best - loss >= self.min_rel * self.best.abs() {
            self.best = loss;
            self.wait = 0;
        } else {
            self.wait += 1;
        }
        self.patience > 0 && self.wait >= self.patience
    }
}

#[derive(Debug, Clone, Default)]
pub struct StageReport {
    pub stage: u8,
    /// Mean per-row loss of each epoch.
    pub epoch_losses: Vec<f64>,
    pub stopped_early: bool,
    /// Stage 2: anchors without a positive, summed over the run.
    pub skipped_anchors: usize,
    /// Stage 3: thresholds in force during each epoch.
    pub thresholds: Vec<ThresholdRecord>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ThresholdRecord {
    pub epoch: usize,
    pub thresholds: Vec<f64>,
    pub counts: Vec<usize>,
    /// Unlabeled rows that passed their threshold during the epoch.
    pub confident_fraction: f64,
}

/// Eval-mode encoder outputs for every frame.
pub struct Embedding {
    /// L2-normalized features, one row per frame.
    pub features: Matrix,
    /// Raw projection-head outputs.
    pub projections: Vec<Vec<f64>>,
}

/// Eval-mode features and projections for every sample, unaugmented.
pub fn embed(model: &mut Model, ds: &Dataset, batch_size: usize, norm: InputNorm, exec: Exec) -> Result<Embedding> {
    let rows: Vec<usize> = (0..ds.len()).collect();
    let mut features = Vec::new();
    let mut projections = Vec::with_capacity(rows.len());
    let mut dim = 0;
    for chunk in rows.chunks(batch_size.max(1)) {
        let x = frame_batch(ds, chunk, None, norm, 0, exec)?;
        let mut g = graph(exec);
        let xv = g.input(x);
        let out = model.encoder.forward(&mut g, &mut model.store, xv, false)?;
        dim = g.shape(out.features)[1];
        features.extend(g.value(out.features).data().iter().map(|&v| v as f64));
        let p = g.shape(out.projections)[1];
        projections.extend(g.value(out.projections).data().chunks(p).map(|r| r.iter().map(|&v| v as f64).collect()));
    }
    let features = Matrix::new(features, rows.len(), dim)?.l2_normalized();
    Ok(Embedding { features, projections })
}

fn graph(exec: Exec) -> Graph<f32> {
    Graph::with_parallel(exec == Exec::Parallel)
}

fn softmax_rows(logits: &[Vec<f64>], classes: usize) -> Vec<Vec<f64>> {
    logits
        .iter()
        .map(|row| {
            let row = &row[..classes];
            let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let e: Vec<f64> = row.iter().map(|&v| (v - m).exp()).collect();
            let s: f64 = e.iter().sum();
            e.into_iter().map(|v| v / s).collect()
        })
        .collect()
}

fn argmax(row: &[f64]) -> usize {
    crate::losses::argmax(row).0
}

fn kmeans_seed(config: &RunConfig, stage: u8, epoch: usize) -> u64 {
    stream_seed(config.seed, &[TAG_KMEANS, stage as u64, epoch as u64])
}

/// Stage 1: instance discrimination with two augmented views per sample.
pub fn stage1_pretext(model: &mut Model, ds: &Dataset, config: &RunConfig, exec: Exec) -> Result<StageReport> {
    let sc = &config.stage1;
    let policy = sc.policy();
    let norm = config.data.input_norm;
    let mut opt = optimizer(sc);
    let mut stopper = EarlyStopping::new(sc.patience, sc.min_rel_improvement);
    let mut report = StageReport { stage: 1, ..StageReport::default() };
    for epoch in 0..sc.max_epochs {
        let plan = batches((0..ds.len()).collect(), sc.batch_size, stream_seed(config.seed, &[TAG_SHUFFLE, 1, epoch as u64]));
        let view_seed = stream_seed(config.seed, &[TAG_VIEWS, 1, epoch as u64]);
        let (mut total, mut rows) = (0.0, 0usize);
        prefetched(
            plan.len(),
            |s| paired_views(ds, &plan[s], &policy, norm, derive_seed(view_seed, s as u64), exec),
            |_, x| {
                let n = x.shape()[0];
                let mut g = graph(exec);
                let xv = g.input(x);
                let out = model.encoder.forward(&mut g, &mut model.store, xv, true)?;
                let z = g.l2_normalize(out.projections)?;
                let loss = ntxent_loss(&mut g, z, sc.temperature)?;
                total += step(model, opt.as_mut(), &mut g, loss)?;
                rows += n;
                Ok(())
            },
        )?;
        let mean = total / rows as f64;
        info!("stage 1 epoch {epoch}: loss {mean:.5}");
        report.epoch_losses.push(mean);
        if stopper.update(mean) {
            report.stopped_early = true;
            break;
        }
    }
    Ok(report)
}

/// k-means on the current features and the `k` samples nearest each center.
pub fn mine(
    model: &mut Model,
    ds: &Dataset,
    config: &RunConfig,
    clusters: usize,
    k: usize,
    stage: u8,
    seed: u64,
    exec: Exec,
) -> Result<PseudoLabelSet> {
    let emb = embed(model, ds, config.eval.batch_size, config.data.input_norm, exec)?;
    let km = kmeans_with(&emb.features, clusters, seed, config.eval.kmeans_restarts, exec)?;
    Ok(mine_reliable(&emb.features, &km.centers, k, stage)?)
}

/// Stage 2: supervised contrastive fine-tuning on mined cluster cores,
/// re-mined at the start of every epoch.
pub fn stage2_pseudo_supervised(
    model: &mut Model,
    ds: &Dataset,
    config: &RunConfig,
    clusters: usize,
    exec: Exec,
) -> Result<StageReport> {
    let sc = &config.stage2;
    let policy = sc.policy();
    let norm = config.data.input_norm;
    let mut opt = optimizer(sc);
    let mut stopper = EarlyStopping::new(sc.patience, sc.min_rel_improvement);
    let mut report = StageReport { stage: 2, ..StageReport::default() };
    for epoch in 0..sc.max_epochs {
        let mined = mine(model, ds, config, clusters, sc.neighbors, 2, kmeans_seed(config, 2, epoch), exec)?;
        if mined.len() < 2 {
            return Err(contract("mined set has fewer than two samples"));
        }
        let label_of: std::collections::HashMap<usize, usize> =
            mined.indices.iter().copied().zip(mined.labels.iter().copied()).collect();
        let plan = batches(mined.indices.clone(), sc.batch_size, stream_seed(config.seed, &[TAG_SHUFFLE, 2, epoch as u64]));
        let view_seed = stream_seed(config.seed, &[TAG_VIEWS, 2, epoch as u64]);
        let (mut total, mut rows) = (0.0, 0usize);
        prefetched(
            plan.len(),
            |s| paired_views(ds, &plan[s], &policy, norm, derive_seed(view_seed, s as u64), exec),
            |s, x| {
                let labels: Vec<usize> = plan[s].iter().flat_map(|i| [label_of[i], label_of[i]]).collect();
                let mut g = graph(exec);
                let xv = g.input(x);
                let out = model.encoder.forward(&mut g, &mut model.store, xv, true)?;
                let z = g.l2_normalize(out.projections)?;
                let (loss, skipped) = supcon_loss(&mut g, z, &labels, sc.temperature)?;
                report.skipped_anchors += skipped;
                total += step(model, opt.as_mut(), &mut g, loss)?;
                rows += labels.len() - skipped;
                Ok(())
            },
        )?;
        let mean = total / rows.max(1) as f64;
        info!("stage 2 epoch {epoch}: loss {mean:.5} on {} mined samples", mined.len());
        report.epoch_losses.push(mean);
        if stopper.update(mean) {
            report.stopped_early = true;
            break;
        }
    }
    if report.skipped_anchors > 0 {
        warn!("stage 2 skipped {} anchors without a positive", report.skipped_anchors);
    }
    Ok(report)
}

struct SemiBatch {
    labeled: Tensor<f32>,
    weak: Tensor<f32>,
    strong: Tensor<f32>,
}

/// Stage 3: self-labeling. The mined set is the labeled pool; every sample
/// is an unlabeled row whose weak view sets the target for its strong view.
pub fn stage3_self_label(
    model: &mut Model,
    ds: &Dataset,
    config: &RunConfig,
    clusters: usize,
    exec: Exec,
) -> Result<StageReport> {
    let sc = &config.stage3;
    let (weak_policy, strong_policy) = (sc.weak_policy(), sc.policy());
    let norm = config.data.input_norm;
    if clusters > config.encoder.projection_dim {
        return Err(contract(format!(
            "{clusters} clusters exceed the {} head outputs",
            config.encoder.projection_dim
        )));
    }
    let mined = mine(model, ds, config, clusters, sc.neighbors, 3, kmeans_seed(config, 3, 0), exec)?;
    let label_of: std::collections::HashMap<usize, usize> =
        mined.indices.iter().copied().zip(mined.labels.iter().copied()).collect();
    let mut opt = optimizer(sc);
    let mut stopper = EarlyStopping::new(sc.patience, sc.min_rel_improvement);
    let mut report = StageReport { stage: 3, ..StageReport::default() };
    let mut state = ThresholdState::new(clusters, sc.tau_max, sc.lambda);
    for epoch in 0..sc.max_epochs {
        let plan = batches((0..ds.len()).collect(), sc.batch_size, stream_seed(config.seed, &[TAG_SHUFFLE, 3, epoch as u64]));
        let mut labeled_order = mined.indices.clone();
        labeled_order.shuffle(&mut rng_from_seed(stream_seed(config.seed, &[TAG_LABELED, epoch as u64])));
        let lb = sc.labeled_batch_size.min(labeled_order.len());
        let labeled_plan: Vec<Vec<usize>> = (0..plan.len())
            .map(|s| (0..lb).map(|j| labeled_order[(s * lb + j) % labeled_order.len()]).collect())
            .collect();
        let view_seed = stream_seed(config.seed, &[TAG_VIEWS, 3, epoch as u64]);
        let (mut total, mut steps, mut confident, mut seen) = (0.0, 0usize, 0usize, 0usize);
        let mut epoch_probs = Vec::with_capacity(ds.len());
        prefetched(
            plan.len(),
            |s| {
                let seed = derive_seed(view_seed, s as u64);
                Ok(SemiBatch {
                    labeled: frame_batch(ds, &labeled_plan[s], Some(&weak_policy), norm, derive_seed(seed, 0), exec)?,
                    weak: frame_batch(ds, &plan[s], Some(&weak_policy), norm, derive_seed(seed, 1), exec)?,
                    strong: frame_batch(ds, &plan[s], Some(&strong_policy), norm, derive_seed(seed, 2), exec)?,
                })
            },
            |s, batch| {
                let weak_probs = {
                    let mut g = graph(exec);
                    let xv = g.input(batch.weak);
                    let out = model.encoder.forward(&mut g, &mut model.store, xv, false)?;
                    let p = g.shape(out.projections)[1];
                    let logits: Vec<Vec<f64>> = g
                        .value(out.projections)
                        .data()
                        .chunks(p)
                        .map(|r| r.iter().map(|&v| v as f64).collect())
                        .collect();
                    softmax_rows(&logits, clusters)
                };
                let targets: Vec<usize> = labeled_plan[s].iter().map(|i| label_of[i]).collect();
                let (nl, nu) = (targets.len(), weak_probs.len());
                let x = concat_rows(&batch.labeled, &batch.strong)?;
                let mut g = graph(exec);
                let xv = g.input(x);
                let out = model.encoder.forward(&mut g, &mut model.store, xv, true)?;
                let logits = g.slice(out.projections, 1, 0, clusters)?;
                let labeled_logits = g.slice(logits, 0, 0, nl)?;
                let strong_logits = g.slice(logits, 0, nl, nu)?;
                let loss = semi_supervised_loss(&mut g, labeled_logits, &targets, &weak_probs, strong_logits, &state)?;
                confident += loss.confident;
                seen += nu;
                total += step(model, opt.as_mut(), &mut g, loss.total)?;
                steps += 1;
                epoch_probs.extend(weak_probs);
                Ok(())
            },
        )?;
        let mean = total / steps.max(1) as f64;
        let record = ThresholdRecord {
            epoch,
            thresholds: state.thresholds.clone(),
            counts: state.counts.clone(),
            confident_fraction: confident as f64 / seen.max(1) as f64,
        };
        info!(
            "stage 3 epoch {epoch}: loss {mean:.5}, confident {:.3}, thresholds {:?}",
            record.confident_fraction, record.thresholds
        );
        report.thresholds.push(record);
        report.epoch_losses.push(mean);
        state = update_thresholds(&state, &epoch_probs);
        if stopper.update(mean) {
            report.stopped_early = true;
            break;
        }
    }
    Ok(report)
}

fn concat_rows(a: &Tensor<f32>, b: &Tensor<f32>) -> Result<Tensor<f32>> {
    let mut shape = a.shape().to_vec();
    if shape[1..] != b.shape()[1..] {
        return Err(contract("row shapes differ"));
    }
    shape[0] += b.shape()[0];
    let data = a.data().iter().chain(b.data()).copied().collect();
    Ok(Tensor::new(shape, data)?)
}

/// Cluster ids for every frame: k-means on features after stages 1 and 2,
/// the head argmax after stage 3.
pub fn predict(model: &mut Model, ds: &Dataset, config: &RunConfig, stage: u8, clusters: usize, exec: Exec) -> Result<Vec<usize>> {
    let emb = embed(model, ds, config.eval.batch_size, config.data.input_norm, exec)?;
    if stage >= 3 {
        Ok(emb.projections.iter().map(|row| argmax(&row[..clusters])).collect())
    } else {
        let km = kmeans_with(&emb.features, clusters, kmeans_seed(config, stage, usize::MAX), config.eval.kmeans_restarts, exec)?;
        Ok(km.assignments)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsRow {
    pub stage: String,
    pub dataset: String,
    /// `all` or the SNR level in dB.
    pub snr_db: String,
    pub acc: f64,
    pub nmi: f64,
    pub ari: f64,
    pub purity: f64,
}

/// Distinct SNR levels when the dataset was drawn at fixed levels.
pub fn snr_levels(ds: &Dataset) -> Option<Vec<f64>> {
    let mut levels: Vec<f64> = ds.manifest.records.iter().map(|r| r.snr_db).collect();
    levels.sort_by(f64::total_cmp);
    levels.dedup();
    (levels.len() > 1 && levels.len() * 4 <= ds.len()).then_some(levels)
}

/// Overall scores and, for fixed-level datasets, one row per SNR level.
/// Each level is scored with its own optimal label mapping.
pub fn evaluate(pred: &[usize], ds: &Dataset, stage: &str) -> Result<Vec<MetricsRow>> {
    let truth = ds.labels();
    if pred.len() != truth.len() {
        return Err(contract(format!("{} predictions for {} samples", pred.len(), truth.len())));
    }
    let row = |snr: String, p: &[usize], t: &[usize]| -> Result<MetricsRow> {
        let s = score_all(p, t)?;
        Ok(MetricsRow {
            stage: stage.to_string(),
            dataset: ds.manifest.name.clone(),
            snr_db: snr,
            acc: s.acc,
            nmi: s.nmi,
            ari: s.ari,
            purity: s.purity,
        })
    };
    let mut rows = vec![row("all".into(), pred, &truth)?];
    for level in snr_levels(ds).unwrap_or_default() {
        let idx: Vec<usize> = (0..ds.len()).filter(|&i| ds.manifest.records[i].snr_db == level).collect();
        let p: Vec<usize> = idx.iter().map(|&i| pred[i]).collect();
        let t: Vec<usize> = idx.iter().map(|&i| truth[i]).collect();
        rows.push(row(format!("{level}"), &p, &t)?);
    }
    Ok(rows)
}

/// Whole-set neighbor purity against the purity of center-mined samples,
/// both with `k` neighbors per sample or center.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MiningComparison {
    pub k: usize,
    pub neighbor_purity: f64,
    pub mined_purity: f64,
}

pub fn compare_mining(features: &Matrix, truth: &[usize], clusters: usize, k: usize, seed: u64, restarts: usize, exec: Exec) -> Result<MiningComparison> {
    let km = kmeans_with(features, clusters, seed, restarts, exec)?;
    let mined = mine_reliable(features, &km.centers, k, 2)?;
    Ok(MiningComparison {
        k,
        neighbor_purity: neighbor_purity(features, truth, k, exec)?,
        mined_purity: mined_purity(&mined, truth)?,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub clusters: usize,
    /// Undefined for a single cluster.
    pub silhouette: Option<f64>,
    pub purity: f64,
}

pub fn sweep_clusters(
    features: &Matrix,
    truth: &[usize],
    range: std::ops::RangeInclusive<usize>,
    seed: u64,
    restarts: usize,
    exec: Exec,
) -> Result<Vec<SweepRow>> {
    range
        .map(|c| {
            let km = kmeans_with(features, c, derive_seed(seed, c as u64), restarts, exec)?;
            let sil = if c >= 2 { Some(silhouette(features, &km.assignments, exec)?) } else { None };
            Ok(SweepRow { clusters: c, silhouette: sil, purity: purity(&km.assignments, truth)? })
        })
        .collect()
}

/// Cluster count with the highest silhouette.
pub fn silhouette_argmax(rows: &[SweepRow]) -> Option<usize> {
    rows.iter()
        .filter_map(|r| r.silhouette.map(|s| (r.clusters, s)))
        .fold(None, |best: Option<(usize, f64)>, (c, s)| match best {
            Some((_, bs)) if bs >= s => best,
            _ => Some((c, s)),
        })
        .map(|(c, _)| c)
}

fn csv_err(path: &Path) -> impl FnOnce(csv::Error) -> Error + '_ {
    move |source| Error::Csv { path: path.to_path_buf(), source }
}

fn write_rows<S: Serialize>(path: &Path, rows: &[S]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err(path))?;
    for r in rows {
        w.serialize(r).map_err(csv_err(path))?;
    }
    w.flush().map_err(|source| Error::Io { path: path.to_path_buf(), source })
}

pub fn write_metrics_csv(path: &Path, rows: &[MetricsRow]) -> Result<()> {
    write_rows(path, rows)
}

pub fn write_sweep_csv(path: &Path, rows: &[SweepRow]) -> Result<()> {
    write_rows(path, rows)
}

/// Contingency table with predicted clusters as rows and true classes as columns.
pub fn write_confusion_csv(path: &Path, pred: &[usize], truth: &[usize]) -> Result<()> {
    let table = Contingency::new(pred, truth)?;
    let mut w = csv::Writer::from_path(path).map_err(csv_err(path))?;
    let mut header = vec!["cluster".to_string()];
    header.extend(table.truth_ids.iter().map(|t| format!("class_{t}")));
    w.write_record(&header).map_err(csv_err(path))?;
    for (p, counts) in table.pred_ids.iter().zip(&table.table) {
        let mut rec = vec![p.to_string()];
        rec.extend(counts.iter().map(usize::to_string));
        w.write_record(&rec).map_err(csv_err(path))?;
    }
    w.flush().map_err(|source| Error::Io { path: path.to_path_buf(), source })
}

pub fn write_thresholds_csv(path: &Path, records: &[ThresholdRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err(path))?;
    let classes = records.first().map_or(0, |r| r.thresholds.len());
    let mut header = vec!["epoch".to_string(), "confident_fraction".to_string()];
    header.extend((0..classes).map(|c| format!("tau_{c}")));
    header.extend((0..classes).map(|c| format!("sigma_{c}")));
    w.write_record(&header).map_err(csv_err(path))?;
    for r in records {
        let mut rec = vec![r.epoch.to_string(), r.confident_fraction.to_string()];
        rec.extend(r.thresholds.iter().map(f64::to_string));
        rec.extend(r.counts.iter().map(usize::to_string));
        w.write_record(&rec).map_err(csv_err(path))?;
    }
    w.flush().map_err(|source| Error::Io { path: path.to_path_buf(), source })
}

pub fn checkpoint_path(out_dir: &Path, stage: u8) -> PathBuf {
    out_dir.join(format!("stage{stage}.ckpt"))
}

/// Everything a training run produced.
pub struct TrainOutcome {
    pub model: Model,
    pub dataset: Dataset,
    pub clusters: usize,
    pub reports: Vec<StageReport>,
    /// One row per stage on the training set.
    pub metrics: Vec<MetricsRow>,
    /// Measured on the stage-1 features.
    pub mining: MiningComparison,
    pub final_predictions: Vec<usize>,
}

/// Runs the three stages, writing checkpoints, `metrics.csv`,
/// `confusion.csv`, `thresholds.csv` and `mining.csv` under
/// `config.out_dir`. With `resume`, stages whose checkpoint already exists
/// are loaded instead of trained.
pub fn train(config: &RunConfig, exec: Exec, resume: bool) -> Result<TrainOutcome> {
    let out = &config.out_dir;
    std::fs::create_dir_all(out).map_err(|source| Error::Io { path: out.clone(), source })?;
    let ds = load_dataset(config, exec)?;
    config.validate(ds.frame_len())?;
    let clusters = num_classes(&ds);
    config.validate_for(ds.len(), clusters)?;
    let config_path = out.join("config.toml");
    std::fs::write(&config_path, config.to_toml_string()).map_err(|source| Error::Io { path: config_path, source })?;
    info!("training on {} ({} samples, {clusters} classes)", ds.manifest.name, ds.len());

    let truth = ds.labels();
    let mut model = Model::new(&config.encoder, ds.frame_len(), stream_seed(config.seed, &[TAG_INIT]))?;
    let mut reports = Vec::new();
    let mut metrics = Vec::new();
    let mut mining = None;
    let mut pred = Vec::new();
    for stage in 1u8..=3 {
        let ckpt = checkpoint_path(out, stage);
        if resume && ckpt.exists() {
            info!("stage {stage}: loading {}", ckpt.display());
            pulseclust_autodiff::checkpoint::load_into(&mut model.store, &ckpt)?;
        } else {
            let report = match stage {
                1 => stage1_pretext(&mut model, &ds, config, exec)?,
                2 => stage2_pseudo_supervised(&mut model, &ds, config, clusters, exec)?,
                _ => stage3_self_label(&mut model, &ds, config, clusters, exec)?,
            };
            if stage == 3 {
                write_thresholds_csv(&out.join("thresholds.csv"), &report.thresholds)?;
            }
            reports.push(report);
            model.save(&ckpt)?;
        }
        if stage == 1 {
            let emb = embed(&mut model, &ds, config.eval.batch_size, config.data.input_norm, exec)?;
            let k = config.stage2.neighbors;
            let cmp = compare_mining(&emb.features, &truth, clusters, k, kmeans_seed(config, 1, 0), config.eval.kmeans_restarts, exec)?;
            debug!("mining comparison {cmp:?}");
            write_rows(&out.join("mining.csv"), &[cmp])?;
            mining = Some(cmp);
        }
        pred = predict(&mut model, &ds, config, stage, clusters, exec)?;
        let rows = evaluate(&pred, &ds, &format!("stage{stage}"))?;
        info!("stage {stage}: acc {:.4} nmi {:.4} ari {:.4}", rows[0].acc, rows[0].nmi, rows[0].ari);
        metrics.extend(rows);
    }
    write_metrics_csv(&out.join("metrics.csv"), &metrics)?;
    write_confusion_csv(&out.join("confusion.csv"), &pred, &truth)?;
    Ok(TrainOutcome {
        model,
        dataset: ds,
        clusters,
        reports,
        metrics,
        mining: mining.expect("stage 1 always runs"),
        final_predictions: pred,
    })
}
