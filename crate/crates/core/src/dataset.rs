//! Labeled frame datasets: generation and the on-disk format.
//!
//! On disk a dataset is two files in one directory:
//!
//! * `<name>.iq.bin`: every frame back to back, each frame as interleaved
//!   little-endian `f32` pairs `I0 Q0 I1 Q1 ...`;
//! * `<name>.manifest.json`: the [`DatasetManifest`].
//!
//! In memory each frame is kept planar (`I` row followed by `Q` row), the
//! layout the encoder consumes.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use num_complex::Complex64;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::channel::{apply_channel, ChannelKind, ChannelModel};
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::rng::{derive_seed, rng_from_seed};
use crate::signal::{add_awgn, IqSignal};
use crate::waveform::{draw_spec, synthesize, WaveformClass, DEFAULT_SAMPLE_RATE_HZ};

pub const DEFAULT_FRAME_LEN: usize = 1024;
pub const NUM_CLASSES: u8 = 12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub class_id: u8,
    pub snr_db: f64,
    pub channel_kind: ChannelKind,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub name: String,
    pub num_samples: usize,
    pub frame_len: usize,
    pub sample_rate_hz: f64,
    pub records: Vec<SampleRecord>,
}

impl DatasetManifest {
    pub fn validate(&self) -> Result<()> {
        if self.records.len() != self.num_samples {
            return Err(Error::Validation(format!(
                "{} records for {} samples",
                self.records.len(),
                self.num_samples
            )));
        }
        if self.frame_len == 0 {
            return Err(Error::Validation("frame_len is zero".into()));
        }
        if !(self.sample_rate_hz > 0.0) {
            return Err(Error::Validation("sample rate must be positive".into()));
        }
        if let Some((i, r)) = self
            .records
            .iter()
            .enumerate()
            .find(|(_, r)| r.class_id >= NUM_CLASSES)
        {
            return Err(Error::Validation(format!(
                "record {i}: class_id {} outside 0..{NUM_CLASSES}",
                r.class_id
            )));
        }
        Ok(())
    }
}

/// One frame in planar layout with its label.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledFrame {
    /// `2 * frame_len` values: I row then Q row.
    pub iq: Vec<f32>,
    pub class_id: u8,
    pub snr_db: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub manifest: DatasetManifest,
    /// `num_samples * 2 * frame_len` planar values.
    data: Vec<f32>,
}

impl Dataset {
    pub fn new(manifest: DatasetManifest, data: Vec<f32>) -> Result<Self> {
        manifest.validate()?;
        let expected = manifest.num_samples * 2 * manifest.frame_len;
        if data.len() != expected {
            return Err(Error::LengthMismatch { expected, actual: data.len() });
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            let per = 2 * manifest.frame_len;
            return Err(Error::NonFinite { frame: pos / per, offset: pos % per });
        }
        Ok(Self { manifest, data })
    }

    pub fn len(&self) -> usize {
        self.manifest.num_samples
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn frame_len(&self) -> usize {
        self.manifest.frame_len
    }

    /// Planar `[I row, Q row]` view of frame `i`.
    pub fn frame(&self, i: usize) -> &[f32] {
        let per = 2 * self.frame_len();
        &self.data[i * per..(i + 1) * per]
    }

    pub fn labeled_frame(&self, i: usize) -> LabeledFrame {
        let r = &self.manifest.records[i];
        LabeledFrame { iq: self.frame(i).to_vec(), class_id: r.class_id, snr_db: r.snr_db }
    }

    pub fn signal(&self, i: usize) -> IqSignal {
        planar_to_signal(self.frame(i), self.manifest.sample_rate_hz)
    }

    pub fn labels(&self) -> Vec<usize> {
        self.manifest.records.iter().map(|r| r.class_id as usize).collect()
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    /// Indices of the samples whose record satisfies `pred`.
    pub fn select<F: Fn(&SampleRecord) -> bool>(&self, pred: F) -> Vec<usize> {
        self.manifest
            .records
            .iter()
            .enumerate()
            .filter(|(_, r)| pred(r))
            .map(|(i, _)| i)
            .collect()
    }

    /// New dataset holding the given samples, in order.
    pub fn subset(&self, name: &str, indices: &[usize]) -> Dataset {
        let per = 2 * self.frame_len();
        let mut data = Vec::with_capacity(indices.len() * per);
        for &i in indices {
            data.extend_from_slice(self.frame(i));
        }
        let manifest = DatasetManifest {
            name: name.to_string(),
            num_samples: indices.len(),
            frame_len: self.frame_len(),
            sample_rate_hz: self.manifest.sample_rate_hz,
            records: indices.iter().map(|&i| self.manifest.records[i].clone()).collect(),
        };
        Dataset { manifest, data }
    }
}

pub fn signal_to_planar(signal: &IqSignal) -> Vec<f32> {
    let s = signal.samples();
    s.iter().map(|x| x.re as f32).chain(s.iter().map(|x| x.im as f32)).collect()
}

pub fn planar_to_signal(planar: &[f32], sample_rate_hz: f64) -> IqSignal {
    let n = planar.len() / 2;
    let samples = (0..n)
        .map(|k| Complex64::new(planar[k] as f64, planar[n + k] as f64))
        .collect();
    IqSignal::new(samples, sample_rate_hz).expect("non-empty planar frame")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum SnrPlan {
    /// SNR drawn uniformly per sample.
    Uniform { low_db: f64, high_db: f64 },
    /// `per_class` samples of every class at each listed level.
    Levels(Vec<f64>),
}

/// Recipe for a synthetic dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSpec {
    pub name: String,
    pub classes: Vec<WaveformClass>,
    /// Samples per class (per class and level for [`SnrPlan::Levels`]).
    pub per_class: usize,
    pub snr: SnrPlan,
    /// Probability of the free-space path.
    pub p0: f64,
    pub frame_len: usize,
    pub seed: u64,
}

/// Per-class count after applying a desk-scale factor (at least one).
pub fn scaled_count(full: usize, scale: f64) -> usize {
    ((full as f64 * scale).round() as usize).max(1)
}

impl DatasetSpec {
    /// 12 classes x 1000 samples, SNR U(5, 15) dB, half through Rayleigh fading.
    pub fn dataset1(seed: u64, scale: f64) -> Self {
        Self {
            name: "dataset1".into(),
            classes: WaveformClass::ALL.to_vec(),
            per_class: scaled_count(1000, scale),
            snr: SnrPlan::Uniform { low_db: 5.0, high_db: 15.0 },
            p0: 0.5,
            frame_len: DEFAULT_FRAME_LEN,
            seed,
        }
    }

    /// 21 SNR levels (-10..=10 dB) x 200 samples x 12 classes.
    pub fn dataset2(seed: u64, scale: f64) -> Self {
        Self {
            name: "dataset2".into(),
            classes: WaveformClass::ALL.to_vec(),
            per_class: scaled_count(200, scale),
            snr: SnrPlan::Levels((-10..=10).map(f64::from).collect()),
            p0: 0.5,
            frame_len: DEFAULT_FRAME_LEN,
            seed,
        }
    }

    /// The four-class desk-scale training set.
    pub fn toy(seed: u64, per_class: usize) -> Self {
        Self {
            name: "toy".into(),
            classes: TOY_CLASSES.to_vec(),
            per_class,
            snr: SnrPlan::Uniform { low_db: 5.0, high_db: 15.0 },
            p0: 0.5,
            frame_len: DEFAULT_FRAME_LEN,
            seed,
        }
    }

    /// Four-class SNR sweep over -10..=10 dB in 5 dB steps.
    pub fn toy_snr_sweep(seed: u64, per_class: usize) -> Self {
        Self {
            name: "toy_snr".into(),
            classes: TOY_CLASSES.to_vec(),
            per_class,
            snr: SnrPlan::Levels(vec![-10.0, -5.0, 0.0, 5.0, 10.0]),
            p0: 0.5,
            frame_len: DEFAULT_FRAME_LEN,
            seed,
        }
    }

    /// `(class, fixed SNR level)` for every sample index, in file order.
    fn layout(&self) -> Vec<(WaveformClass, Option<f64>)> {
        match &self.snr {
            SnrPlan::Uniform { .. } => self
                .classes
                .iter()
                .flat_map(|&c| std::iter::repeat((c, None)).take(self.per_class))
                .collect(),
            SnrPlan::Levels(levels) => levels
                .iter()
                .flat_map(|&l| {
                    self.classes
                        .iter()
                        .flat_map(move |&c| std::iter::repeat((c, Some(l))).take(self.per_class))
                })
                .collect(),
        }
    }

    pub fn num_samples(&self) -> usize {
        self.layout().len()
    }
}

pub const TOY_CLASSES: [WaveformClass; 4] = [
    WaveformClass::Lfm,
    WaveformClass::BpskBarker,
    WaveformClass::Fsk2,
    WaveformClass::CostasFm,
];

/// A rendered sample together with its noise-free (post-channel) frame.
#[derive(Debug, Clone)]
pub struct RenderedSample {
    pub clean: IqSignal,
    pub noisy: IqSignal,
    pub record: SampleRecord,
}

/// Renders sample `index` of `spec`: draw parameters, synthesize, place the
/// pulse at a random offset inside the frame, pass the channel, add noise.
/// Depends only on `(spec.seed, index)`.
pub fn render_sample(
    spec: &DatasetSpec,
    class: WaveformClass,
    level: Option<f64>,
    index: usize,
) -> Result<RenderedSample> {
    let seed = derive_seed(spec.seed, index as u64);
    let mut rng = rng_from_seed(seed);
    let wave = draw_spec(class, &mut rng);
    let pulse = synthesize(&wave)?;
    let slack = spec.frame_len.saturating_sub(pulse.len());
    let offset = rng.gen_range(0..=slack);
    let mut frame = vec![Complex64::new(0.0, 0.0); spec.frame_len];
    let take = pulse.len().min(spec.frame_len);
    frame[offset..offset + take].copy_from_slice(&pulse.samples()[..take]);
    let framed = IqSignal::new(frame, wave.sample_rate_hz)?;
    let channel = ChannelModel::draw(spec.p0, &mut rng);
    let (clean, kind) = apply_channel(&framed, &channel, &mut rng)?;
    let snr_db = match (level, &spec.snr) {
        (Some(l), _) => l,
        (None, SnrPlan::Uniform { low_db, high_db }) => rng.gen_range(*low_db..*high_db),
        (None, SnrPlan::Levels(_)) => unreachable!("levels always carry a fixed SNR"),
    };
    let noisy = add_awgn(&clean, snr_db, &mut rng);
    Ok(RenderedSample {
        clean,
        noisy,
        record: SampleRecord { class_id: class.code(), snr_db, channel_kind: kind, seed },
    })
}

/// Generates the dataset, rendering samples in parallel when `exec` allows.
pub fn generate(spec: &DatasetSpec, exec: Exec) -> Result<Dataset> {
    let layout = spec.layout();
    let rendered = exec.map_range(layout.len(), |i| {
        let (class, level) = layout[i];
        render_sample(spec, class, level, i).map(|r| (signal_to_planar(&r.noisy), r.record))
    });
    let per = 2 * spec.frame_len;
    let mut data = Vec::with_capacity(layout.len() * per);
    let mut records = Vec::with_capacity(layout.len());
    for r in rendered {
        let (frame, record) = r?;
        data.extend_from_slice(&frame);
        records.push(record);
    }
    let manifest = DatasetManifest {
        name: spec.name.clone(),
        num_samples: records.len(),
        frame_len: spec.frame_len,
        sample_rate_hz: DEFAULT_SAMPLE_RATE_HZ,
        records,
    };
    Dataset::new(manifest, data)
}

pub fn generate_dataset1(seed: u64, scale: f64) -> Result<Dataset> {
    generate(&DatasetSpec::dataset1(seed, scale), Exec::default())
}

pub fn generate_dataset2(seed: u64, scale: f64) -> Result<Dataset> {
    generate(&DatasetSpec::dataset2(seed, scale), Exec::default())
}

pub fn bin_path(dir: &Path, name: &str) -> PathBuf {
    dir.join(format!("{name}.iq.bin"))
}

pub fn manifest_path(dir: &Path, name: &str) -> PathBuf {
    dir.join(format!("{name}.manifest.json"))
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| Error::Io { path: path.to_path_buf(), source }
}

/// Writes `<dir>/<name>.iq.bin` and `<dir>/<name>.manifest.json`; returns
/// the manifest path.
pub fn write_dataset(dataset: &Dataset, dir: &Path) -> Result<PathBuf> {
    std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    let name = &dataset.manifest.name;
    let bin = bin_path(dir, name);
    let mut w = BufWriter::new(File::create(&bin).map_err(io_err(&bin))?);
    let n = dataset.frame_len();
    for i in 0..dataset.len() {
        let f = dataset.frame(i);
        for k in 0..n {
            w.write_all(&f[k].to_le_bytes()).map_err(io_err(&bin))?;
            w.write_all(&f[n + k].to_le_bytes()).map_err(io_err(&bin))?;
        }
    }
    w.flush().map_err(io_err(&bin))?;

    let man = manifest_path(dir, name);
    let json = serde_json::to_string_pretty(&dataset.manifest)
        .map_err(|e| Error::CorruptManifest { path: man.clone(), reason: e.to_string() })?;
    std::fs::write(&man, json).map_err(io_err(&man))?;
    Ok(man)
}

/// Reads a dataset from its manifest path; the binary file is located next
/// to it by name.
pub fn read_dataset(manifest: &Path) -> Result<Dataset> {
    let text = std::fs::read_to_string(manifest).map_err(io_err(manifest))?;
    let m: DatasetManifest = serde_json::from_str(&text).map_err(|e| Error::CorruptManifest {
        path: manifest.to_path_buf(),
        reason: e.to_string(),
    })?;
    m.validate()?;
    let dir = manifest.parent().unwrap_or_else(|| Path::new("."));
    let bin = bin_path(dir, &m.name);
    let mut bytes = Vec::new();
    BufReader::new(File::open(&bin).map_err(io_err(&bin))?)
        .read_to_end(&mut bytes)
        .map_err(io_err(&bin))?;
    let n = m.frame_len;
    let expected = m.num_samples * 2 * n;
    if bytes.len() % 4 != 0 || bytes.len() / 4 != expected {
        return Err(Error::LengthMismatch { expected, actual: bytes.len() / 4 });
    }
    let floats: Vec<f32> = bytes
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
        .collect();
    let mut data = vec![0f32; expected];
    for (frame_in, frame_out) in floats.chunks_exact(2 * n).zip(data.chunks_exact_mut(2 * n)) {
        for k in 0..n {
            frame_out[k] = frame_in[2 * k];
            frame_out[n + k] = frame_in[2 * k + 1];
        }
    }
    Dataset::new(m, data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signal::support_power;

    fn small_spec() -> DatasetSpec {
        DatasetSpec::toy(5, 6)
    }

    #[test]
    fn layouts_have_paper_counts() {
        let d1 = DatasetSpec::dataset1(1, 1.0);
        assert_eq!(d1.num_samples(), 12_000);
        let d2 = DatasetSpec::dataset2(1, 1.0);
        assert_eq!(d2.num_samples(), 50_400);
        match &d2.snr {
            SnrPlan::Levels(l) => {
                assert_eq!(l.len(), 21);
                assert_eq!(l[0], -10.0);
                assert_eq!(l[20], 10.0);
            }
            _ => panic!("dataset 2 uses fixed levels"),
        }
        assert_eq!(DatasetSpec::dataset1(1, 0.01).per_class, 10);
    }

    #[test]
    fn generated_frames_are_labeled_and_finite() {
        let d = generate(&small_spec(), Exec::default()).unwrap();
        assert_eq!(d.len(), 24);
        let labels = d.labels();
        for c in TOY_CLASSES {
            assert_eq!(labels.iter().filter(|&&l| l == c.code() as usize).count(), 6);
        }
        for r in &d.manifest.records {
            assert!((5.0..15.0).contains(&r.snr_db));
        }
        let f = d.labeled_frame(3);
        assert_eq!(f.iq.len(), 2048);
    }

    #[test]
    fn sequential_and_parallel_generation_agree() {
        let a = generate(&small_spec(), Exec::Sequential).unwrap();
        let b = generate(&small_spec(), Exec::Parallel).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn rayleigh_fraction_near_half() {
        let spec = DatasetSpec { per_class: 1000, classes: vec![WaveformClass::Lfm], ..small_spec() };
        let layout = spec.layout();
        let rayleigh = layout
            .iter()
            .enumerate()
            .filter(|(i, (c, l))| {
                render_sample(&spec, *c, *l, *i).unwrap().record.channel_kind == ChannelKind::Rayleigh
            })
            .count();
        let frac = rayleigh as f64 / layout.len() as f64;
        assert!((frac - 0.5).abs() <= 0.05, "fraction {frac}");
    }

    #[test]
    fn measured_snr_matches_record_for_free_space() {
        let spec = DatasetSpec::dataset2(3, 0.05);
        let layout = spec.layout();
        let mut checked = 0;
        for (i, (c, l)) in layout.iter().enumerate().step_by(7) {
            let r = render_sample(&spec, *c, *l, i).unwrap();
            if r.record.channel_kind != ChannelKind::FreeSpace {
                continue;
            }
            let noise: Vec<Complex64> = r
                .noisy
                .samples()
                .iter()
                .zip(r.clean.samples())
                .map(|(a, b)| a - b)
                .collect();
            let pn = noise.iter().map(|x| x.norm_sqr()).sum::<f64>() / noise.len() as f64;
            let snr = 10.0 * (support_power(&r.clean) / pn).log10();
            assert!((snr - r.record.snr_db).abs() <= 0.7, "{snr} vs {}", r.record.snr_db);
            checked += 1;
        }
        assert!(checked > 10);
    }

    #[test]
    fn write_read_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let d = generate(&small_spec(), Exec::default()).unwrap();
        let man = write_dataset(&d, dir.path()).unwrap();
        assert_eq!(man, manifest_path(dir.path(), "toy"));
        let back = read_dataset(&man).unwrap();
        assert_eq!(back, d);
    }

    #[test]
    fn truncated_binary_is_length_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        let d = generate(&small_spec(), Exec::default()).unwrap();
        let man = write_dataset(&d, dir.path()).unwrap();
        let bin = bin_path(dir.path(), "toy");
        let bytes = std::fs::read(&bin).unwrap();
        std::fs::write(&bin, &bytes[..bytes.len() - 64]).unwrap();
        assert!(matches!(read_dataset(&man), Err(Error::LengthMismatch { .. })));
    }

    #[test]
    fn bad_class_is_validation_error() {
        let dir = tempfile::tempdir().unwrap();
        let mut d = generate(&small_spec(), Exec::default()).unwrap();
        d.manifest.records[0].class_id = 12;
        let man = write_dataset(&d, dir.path()).unwrap();
        assert!(matches!(read_dataset(&man), Err(Error::Validation(_))));
    }

    #[test]
    fn garbage_manifest_is_corrupt() {
        let dir = tempfile::tempdir().unwrap();
        let man = dir.path().join("x.manifest.json");
        std::fs::write(&man, "{ not json").unwrap();
        assert!(matches!(read_dataset(&man), Err(Error::CorruptManifest { .. })));
    }

    #[test]
    fn non_finite_values_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let d = generate(&small_spec(), Exec::default()).unwrap();
        let man = write_dataset(&d, dir.path()).unwrap();
        let bin = bin_path(dir.path(), "toy");
        let mut bytes = std::fs::read(&bin).unwrap();
        bytes[40..44].copy_from_slice(&f32::NAN.to_le_bytes());
        std::fs::write(&bin, &bytes).unwrap();
        assert!(matches!(read_dataset(&man), Err(Error::NonFinite { frame: 0, .. })));
    }

    #[test]
    fn interleaved_layout_on_disk() {
        let dir = tempfile::tempdir().unwrap();
        let d = generate(&DatasetSpec { per_class: 1, ..small_spec() }, Exec::default()).unwrap();
        write_dataset(&d, dir.path()).unwrap();
        let bytes = std::fs::read(bin_path(dir.path(), "toy")).unwrap();
        let f = |i: usize| f32::from_le_bytes(bytes[4 * i..4 * i + 4].try_into().unwrap());
        let frame = d.frame(0);
        for k in 0..d.frame_len() {
            assert_eq!(f(2 * k), frame[k]);
            assert_eq!(f(2 * k + 1), frame[d.frame_len() + k]);
        }
    }

    #[test]
    fn subset_keeps_records() {
        let d = generate(&small_spec(), Exec::default()).unwrap();
        let s = d.subset("part", &[3, 0]);
        assert_eq!(s.len(), 2);
        assert_eq!(s.frame(0), d.frame(3));
        assert_eq!(s.manifest.records[1], d.manifest.records[0]);
    }
}
