//! Class-independent IQ augmentations and the tiered random policy that
//! chains them.

pub mod fading;

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use num_complex::Complex64;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::rng::RandomSource;
use crate::signal::{complex_gaussian, resample, support_power, IqSignal};

pub use fading::{clarke_gains, rayleigh_gains, FadingPhases, DEFAULT_NUM_SINUSOIDS};

/// Range of the random carrier offset, Hz.
pub const FREQ_OFFSET_RANGE_HZ: (f64, f64) = (-10e6, 10e6);
/// Noise power relative to signal power is `exp(u)`, `u ~ U(-1, 0.5)`,
/// i.e. between 0.3679 and 1.6487.
pub const NOISE_LOG_RATIO_RANGE: (f64, f64) = (-1.0, 0.5);
/// Inclusive mask length range, samples.
pub const MASK_LEN_RANGE: (usize, usize) = (100, 300);
/// Resample target rates, whole MHz.
pub const RESAMPLE_RATE_RANGE_MHZ: (u32, u32) = (50, 150);
/// Maximum Doppler range used by the fading augmentation, Hz.
pub const FADING_DOPPLER_RANGE_HZ: (f64, f64) = (50.0, 500.0);

/// `y(k) * exp(j(2*pi*f0/fs*k + theta))`.
pub fn freq_offset(signal: &IqSignal, f0_hz: f64, theta: f64) -> IqSignal {
    let step = 2.0 * PI * f0_hz / signal.sample_rate_hz();
    let samples = signal
        .samples()
        .iter()
        .enumerate()
        .map(|(k, y)| y * Complex64::from_polar(1.0, step * k as f64 + theta))
        .collect();
    signal.with_samples(samples)
}

/// `y + gamma * n` with `n` unit-power circular complex Gaussian noise.
pub fn add_noise_aug(signal: &IqSignal, gamma: f64, rng: &mut RandomSource) -> Result<IqSignal> {
    if !(gamma >= 0.0) {
        return Err(invalid(format!("noise gain must be non-negative, got {gamma}")));
    }
    if gamma == 0.0 {
        return Ok(signal.clone());
    }
    let noise = complex_gaussian(signal.len(), 1.0, rng);
    let samples = signal
        .samples()
        .iter()
        .zip(noise)
        .map(|(y, n)| y + n * gamma)
        .collect();
    Ok(signal.with_samples(samples))
}

pub fn complex_conjugate(signal: &IqSignal) -> IqSignal {
    signal.with_samples(signal.samples().iter().map(Complex64::conj).collect())
}

/// Zeroes samples in `[start, end)`.
pub fn time_mask(signal: &IqSignal, start: usize, end: usize) -> Result<IqSignal> {
    if start > end || end > signal.len() {
        return Err(invalid(format!(
            "mask [{start}, {end}) invalid for signal of {} samples",
            signal.len()
        )));
    }
    let mut samples = signal.samples().to_vec();
    samples[start..end].iter_mut().for_each(|s| *s = Complex64::new(0.0, 0.0));
    Ok(signal.with_samples(samples))
}

/// Center-crops or zero-pads (centered) to `frame_len`.
pub fn fit_to_frame(samples: &[Complex64], frame_len: usize) -> Vec<Complex64> {
    let n = samples.len();
    if n >= frame_len {
        let start = (n - frame_len) / 2;
        samples[start..start + frame_len].to_vec()
    } else {
        let mut out = vec![Complex64::new(0.0, 0.0); frame_len];
        let start = (frame_len - n) / 2;
        out[start..start + n].copy_from_slice(samples);
        out
    }
}

/// Resamples to `new_rate_hz`, then crops/pads to `frame_len`.
///
/// The returned frame keeps the input's nominal sample rate: the network
/// sees a time-scaled pulse at the usual rate, which is the point of the
/// augmentation.
pub fn random_resample(signal: &IqSignal, new_rate_hz: f64, frame_len: usize) -> Result<IqSignal> {
    let resampled = resample(signal, new_rate_hz)?;
    IqSignal::new(fit_to_frame(resampled.samples(), frame_len), signal.sample_rate_hz())
}

/// Multiplies by a freshly drawn Clarke fading process (flat fading).
pub fn rayleigh_fade(
    signal: &IqSignal,
    doppler_hz: f64,
    num_sinusoids: usize,
    rng: &mut RandomSource,
) -> Result<IqSignal> {
    let gains = rayleigh_gains(signal.len(), doppler_hz, signal.sample_rate_hz(), num_sinusoids, rng)?;
    Ok(apply_gains(signal, &gains))
}

pub(crate) fn apply_gains(signal: &IqSignal, gains: &[Complex64]) -> IqSignal {
    signal.with_samples(signal.samples().iter().zip(gains).map(|(y, h)| y * h).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Transform {
    FreqOffset,
    Noise,
    Conjugate,
    TimeMask,
    Resample,
    Fading,
}

impl Transform {
    /// Application order of the policy engine.
    pub const ORDER: [Transform; 6] = [
        Transform::FreqOffset,
        Transform::Noise,
        Transform::Conjugate,
        Transform::TimeMask,
        Transform::Resample,
        Transform::Fading,
    ];
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strength {
    Weak,
    Moderate,
    Strong,
}

impl Strength {
    pub fn name(self) -> &'static str {
        match self {
            Strength::Weak => "weak",
            Strength::Moderate => "moderate",
            Strength::Strong => "strong",
        }
    }
}

impl fmt::Display for Strength {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Strength {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "weak" => Ok(Strength::Weak),
            "moderate" => Ok(Strength::Moderate),
            "strong" => Ok(Strength::Strong),
            _ => Err(invalid(format!("unknown augmentation tier {s:?}"))),
        }
    }
}

/// Selection probability per transform, applied in [`Transform::ORDER`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentationPolicy {
    pub strength: Strength,
    pub steps: Vec<(Transform, f64)>,
}

impl AugmentationPolicy {
    pub fn tier(strength: Strength) -> Self {
        let probs: [f64; 6] = match strength {
            Strength::Weak => [0.5, 0.5, 0.5, 0.5, 0.0, 0.0],
            Strength::Moderate => [0.5, 1.0, 0.5, 0.5, 0.3, 0.3],
            Strength::Strong => [0.5, 1.0, 0.5, 0.5, 0.5, 0.5],
        };
        Self {
            strength,
            steps: Transform::ORDER.iter().copied().zip(probs).collect(),
        }
    }

    pub fn probability(&self, transform: Transform) -> f64 {
        self.steps
            .iter()
            .find(|(t, _)| *t == transform)
            .map_or(0.0, |(_, p)| *p)
    }

    /// Copy with every selection probability forced to zero.
    pub fn disabled(&self) -> Self {
        Self {
            strength: self.strength,
            steps: self.steps.iter().map(|(t, _)| (*t, 0.0)).collect(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (t, p) in &self.steps {
            if !(0.0..=1.0).contains(p) {
                return Err(invalid(format!("{t:?} probability {p} outside [0, 1]")));
            }
        }
        Ok(())
    }
}

/// Realized random parameters of one augmentation pass.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentationParams {
    pub freq_offset_hz: f64,
    pub phase_rad: f64,
    pub noise_gain: f64,
    pub mask_start: usize,
    pub mask_end: usize,
    pub resample_rate_hz: f64,
    pub doppler_hz: f64,
    pub num_sinusoids: usize,
}

impl AugmentationParams {
    /// Draws every parameter for `signal`. The noise gain is set so the
    /// added noise power is `exp(U(-1, 0.5))` times the signal power.
    pub fn draw(signal: &IqSignal, rng: &mut RandomSource) -> Self {
        let n = signal.len();
        let mask_len = rng.gen_range(MASK_LEN_RANGE.0..=MASK_LEN_RANGE.1).min(n);
        let mask_start = rng.gen_range(0..=n - mask_len);
        let ratio = rng.gen_range(NOISE_LOG_RATIO_RANGE.0..NOISE_LOG_RATIO_RANGE.1).exp();
        let rate_mhz = rng.gen_range(RESAMPLE_RATE_RANGE_MHZ.0..=RESAMPLE_RATE_RANGE_MHZ.1);
        Self {
            freq_offset_hz: rng.gen_range(FREQ_OFFSET_RANGE_HZ.0..FREQ_OFFSET_RANGE_HZ.1),
            phase_rad: rng.gen_range(0.0..2.0 * PI),
            noise_gain: (ratio * support_power(signal)).sqrt(),
            mask_start,
            mask_end: mask_start + mask_len,
            resample_rate_hz: rate_mhz as f64 * 1e6,
            doppler_hz: rng.gen_range(FADING_DOPPLER_RANGE_HZ.0..FADING_DOPPLER_RANGE_HZ.1),
            num_sinusoids: DEFAULT_NUM_SINUSOIDS,
        }
    }
}

/// Runs the policy: each transform in fixed order, gated by an independent
/// Bernoulli draw with its selection probability. The output has the input
/// frame length.
pub fn apply_policy(
    signal: &IqSignal,
    policy: &AugmentationPolicy,
    rng: &mut RandomSource,
) -> Result<IqSignal> {
    let frame_len = signal.len();
    let mut out = signal.clone();
    for transform in Transform::ORDER {
        let p = policy.probability(transform);
        // Always consume the gate draw so parameter streams stay aligned
        // regardless of which transforms fire.
        let fire = rng.gen::<f64>() < p;
        if !fire {
            continue;
        }
        let params = AugmentationParams::draw(&out, rng);
        out = match transform {
            Transform::FreqOffset => freq_offset(&out, params.freq_offset_hz, params.phase_rad),
            Transform::Noise => add_noise_aug(&out, params.noise_gain, rng)?,
            Transform::Conjugate => complex_conjugate(&out),
            Transform::TimeMask => time_mask(&out, params.mask_start, params.mask_end)?,
            Transform::Resample => random_resample(&out, params.resample_rate_hz, frame_len)?,
            Transform::Fading => rayleigh_fade(&out, params.doppler_hz, params.num_sinusoids, rng)?,
        };
    }
    debug_assert_eq!(out.len(), frame_len);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from_seed;
    use crate::stats::{ks_critical, ks_statistic, rayleigh_cdf};
    use crate::waveform::{draw_spec, synthesize, WaveformClass};
    use rustfft::FftPlanner;

    fn tone(len: usize, freq_hz: f64, fs: f64) -> IqSignal {
        let samples = (0..len)
            .map(|k| Complex64::from_polar(1.0, 2.0 * PI * freq_hz / fs * k as f64))
            .collect();
        IqSignal::new(samples, fs).unwrap()
    }

    fn lfm_frame(seed: u64) -> IqSignal {
        let spec = draw_spec(WaveformClass::Lfm, &mut rng_from_seed(seed));
        let pulse = synthesize(&spec).unwrap();
        IqSignal::new(fit_to_frame(pulse.samples(), 1024), pulse.sample_rate_hz()).unwrap()
    }

    fn spectrum(s: &[Complex64], bins: usize) -> Vec<f64> {
        let mut buf = s.to_vec();
        buf.resize(bins, Complex64::new(0.0, 0.0));
        FftPlanner::new().plan_fft_forward(bins).process(&mut buf);
        buf.iter().map(|x| x.norm()).collect()
    }

    fn peak_freq(s: &IqSignal, bins: usize) -> f64 {
        let mags = spectrum(s.samples(), bins);
        let k = mags
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .unwrap()
            .0;
        let k = if k > bins / 2 { k as f64 - bins as f64 } else { k as f64 };
        k * s.sample_rate_hz() / bins as f64
    }

    #[test]
    fn freq_offset_identity_and_modulus() {
        let s = lfm_frame(1);
        assert_eq!(freq_offset(&s, 0.0, 0.0), s);
        let o = freq_offset(&s, 3.3e6, 1.2);
        for (a, b) in o.samples().iter().zip(s.samples()) {
            assert!((a.norm() - b.norm()).abs() < 1e-12);
        }
    }

    #[test]
    fn freq_offset_moves_tone() {
        let s = tone(4096, 10e6, 100e6);
        let o = freq_offset(&s, 5e6, 0.3);
        let bin = 100e6 / 4096.0;
        assert!((peak_freq(&o, 4096) - 15e6).abs() <= bin);
    }

    #[test]
    fn zero_gain_noise_is_identity() {
        let s = lfm_frame(2);
        assert_eq!(add_noise_aug(&s, 0.0, &mut rng_from_seed(1)).unwrap(), s);
        assert!(add_noise_aug(&s, -1.0, &mut rng_from_seed(1)).is_err());
        let a = add_noise_aug(&s, 0.5, &mut rng_from_seed(4)).unwrap();
        let b = add_noise_aug(&s, 0.5, &mut rng_from_seed(4)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn drawn_noise_ratio_in_table_range() {
        let s = lfm_frame(3);
        let p = support_power(&s);
        let mut rng = rng_from_seed(10);
        for _ in 0..10_000 {
            let params = AugmentationParams::draw(&s, &mut rng);
            let ratio = params.noise_gain * params.noise_gain / p;
            assert!((0.3679..=1.6488).contains(&ratio), "ratio {ratio}");
        }
    }

    #[test]
    fn conjugate_is_involution_and_mirrors_spectrum() {
        let s = lfm_frame(4);
        assert_eq!(complex_conjugate(&complex_conjugate(&s)), s);
        let real = IqSignal::new(vec![Complex64::new(0.5, 0.0); 32], 1.0).unwrap();
        assert_eq!(complex_conjugate(&real), real);

        let bins = 1024;
        let a = spectrum(s.samples(), bins);
        let b = spectrum(complex_conjugate(&s).samples(), bins);
        for k in 0..bins {
            assert!((a[k] - b[(bins - k) % bins]).abs() < 1e-9);
        }
    }

    #[test]
    fn time_mask_cases() {
        let s = lfm_frame(5);
        assert_eq!(time_mask(&s, 300, 300).unwrap(), s);
        let all = time_mask(&s, 0, s.len()).unwrap();
        assert!(all.samples().iter().all(|x| x.norm() == 0.0));
        assert!(time_mask(&s, 10, 5).is_err());
        assert!(time_mask(&s, 0, s.len() + 1).is_err());
        let m = time_mask(&s, 100, 200).unwrap();
        assert!(m.samples()[100..200].iter().all(|x| x.norm() == 0.0));
        assert_eq!(&m.samples()[..100], &s.samples()[..100]);
        assert_eq!(&m.samples()[200..], &s.samples()[200..]);
    }

    #[test]
    fn mask_length_draws_in_range() {
        let s = lfm_frame(6);
        let mut rng = rng_from_seed(12);
        for _ in 0..5000 {
            let p = AugmentationParams::draw(&s, &mut rng);
            let len = p.mask_end - p.mask_start;
            assert!((100..=300).contains(&len));
            assert!(p.mask_end <= s.len());
            assert!((50e6..=150e6).contains(&p.resample_rate_hz));
        }
    }

    #[test]
    fn random_resample_identity_rate() {
        let s = lfm_frame(7);
        let o = random_resample(&s, 100e6, 1024).unwrap();
        let err: f64 = o
            .samples()
            .iter()
            .zip(s.samples())
            .map(|(a, b)| (a - b).norm_sqr())
            .sum::<f64>()
            .sqrt()
            / s.norm();
        assert!(err <= 1e-3);
    }

    #[test]
    fn random_resample_scales_support() {
        let fs = 100e6;
        let mut samples = vec![Complex64::new(0.0, 0.0); 1024];
        for (k, s) in samples.iter_mut().enumerate().skip(362).take(300) {
            *s = Complex64::from_polar(1.0, 2.0 * PI * 2e6 / fs * k as f64);
        }
        let s = IqSignal::new(samples, fs).unwrap();
        let support = |x: &IqSignal| x.samples().iter().filter(|v| v.norm() > 0.5).count();
        let up = random_resample(&s, 2.0 * fs, 1024).unwrap();
        let down = random_resample(&s, fs / 2.0, 1024).unwrap();
        assert_eq!(up.len(), 1024);
        assert_eq!(down.len(), 1024);
        assert!((support(&up) as i64 - 600).abs() <= 4, "{}", support(&up));
        assert!((support(&down) as i64 - 150).abs() <= 4, "{}", support(&down));
    }

    #[test]
    fn tone_survives_resample_round_trip() {
        let s = tone(4096, 10e6, 100e6);
        let up = resample(&s, 150e6).unwrap();
        let back = resample(&up, 100e6).unwrap();
        let bin = 100e6 / 4096.0;
        assert!((peak_freq(&back, 4096) - 10e6).abs() <= bin);
    }

    #[test]
    fn zero_doppler_fading_is_scalar() {
        let s = lfm_frame(8);
        let o = rayleigh_fade(&s, 0.0, 32, &mut rng_from_seed(3)).unwrap();
        let k0 = s.samples().iter().position(|x| x.norm() > 0.5).unwrap();
        let g = o.samples()[k0] / s.samples()[k0];
        for (a, b) in o.samples().iter().zip(s.samples()) {
            assert!((a - b * g).norm() < 1e-12);
        }
    }

    #[test]
    fn fading_envelope_is_rayleigh() {
        let n = 100_000;
        let mut rng = rng_from_seed(77);
        let mags: Vec<f64> = (0..n)
            .map(|_| rayleigh_gains(1, 300.0, 100e6, 32, &mut rng).unwrap()[0].norm())
            .collect();
        let mean_power = mags.iter().map(|m| m * m).sum::<f64>() / n as f64;
        assert!((mean_power - 1.0).abs() < 0.05);
        let d = ks_statistic(&mags, |x| rayleigh_cdf(x, 1.0 / 2f64.sqrt()));
        assert!(d < ks_critical(n, 0.01), "KS D = {d}");
    }

    #[test]
    fn policy_tiers_match_table() {
        let weak = AugmentationPolicy::tier(Strength::Weak);
        assert_eq!(weak.probability(Transform::Resample), 0.0);
        assert_eq!(weak.probability(Transform::Fading), 0.0);
        assert_eq!(weak.probability(Transform::Noise), 0.5);
        let moderate = AugmentationPolicy::tier(Strength::Moderate);
        assert_eq!(moderate.probability(Transform::Noise), 1.0);
        assert_eq!(moderate.probability(Transform::Fading), 0.3);
        let strong = AugmentationPolicy::tier(Strength::Strong);
        assert_eq!(strong.probability(Transform::Resample), 0.5);
        for p in [weak, moderate, strong] {
            p.validate().unwrap();
        }
        assert_eq!("Strong".parse::<Strength>().unwrap(), Strength::Strong);
        assert!("extreme".parse::<Strength>().is_err());
    }

    #[test]
    fn weak_policy_never_resamples_or_fades() {
        // With only weak transforms the output stays a per-sample function of
        // the input: zero input samples outside the mask never change unless
        // noise fired. Check via a noiseless weak policy.
        let mut weak = AugmentationPolicy::tier(Strength::Weak);
        weak.steps.retain(|(t, _)| *t != Transform::Noise);
        let s = lfm_frame(9);
        let mut rng = rng_from_seed(5);
        for _ in 0..200 {
            let o = apply_policy(&s, &weak, &mut rng).unwrap();
            for (a, b) in o.samples().iter().zip(s.samples()) {
                assert!(a.norm() == 0.0 || (a.norm() - b.norm()).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn disabled_policy_is_identity() {
        let s = lfm_frame(10);
        let p = AugmentationPolicy::tier(Strength::Strong).disabled();
        assert_eq!(apply_policy(&s, &p, &mut rng_from_seed(1)).unwrap(), s);
    }

    #[test]
    fn policy_is_deterministic_and_length_preserving() {
        let s = lfm_frame(11);
        let p = AugmentationPolicy::tier(Strength::Strong);
        for seed in 0..50 {
            let a = apply_policy(&s, &p, &mut rng_from_seed(seed)).unwrap();
            let b = apply_policy(&s, &p, &mut rng_from_seed(seed)).unwrap();
            assert_eq!(a, b);
            assert_eq!(a.len(), 1024);
            assert!(a.samples().iter().all(|x| x.re.is_finite() && x.im.is_finite()));
        }
    }

    #[test]
    fn matched_filter_argmax_survives_label_free_transforms() {
        // Templates: one noise-free baseband pulse per class. A magnitude
        // spectrum correlator is insensitive to time shift; freq offset,
        // conjugation and masking must not flip its decision on clean pulses.
        let classes = [
            WaveformClass::Lfm,
            WaveformClass::BpskBarker,
            WaveformClass::Fsk2,
            WaveformClass::CostasFm,
        ];
        let bins = 2048;
        let mut rng = rng_from_seed(21);
        let feats = |s: &IqSignal| {
            // Sorted magnitude spectrum: invariant to frequency shift and mirroring.
            let mut m = spectrum(s.samples(), bins);
            m.sort_by(|a, b| b.total_cmp(a));
            let norm = m.iter().map(|x| x * x).sum::<f64>().sqrt();
            m.iter().map(|x| x / norm).collect::<Vec<_>>()
        };
        let specs: Vec<_> = classes.iter().map(|&c| draw_spec(c, &mut rng)).collect();
        let templates: Vec<Vec<f64>> = specs.iter().map(|s| feats(&synthesize(s).unwrap())).collect();
        let classify = |s: &IqSignal| {
            let f = feats(s);
            templates
                .iter()
                .map(|t| t.iter().zip(&f).map(|(a, b)| a * b).sum::<f64>())
                .enumerate()
                .max_by(|a, b| a.1.total_cmp(&b.1))
                .unwrap()
                .0
        };
        for (i, spec) in specs.iter().enumerate() {
            let s = synthesize(spec).unwrap();
            assert_eq!(classify(&s), i);
            assert_eq!(classify(&freq_offset(&s, 4e6, 0.4)), i);
            assert_eq!(classify(&complex_conjugate(&s)), i);
            assert_eq!(classify(&time_mask(&s, 10, 60).unwrap()), i);
        }
    }
}
