//! Complex baseband signal container and the small amount of DSP the rest
//! of the crate needs: power, AWGN, windowed-sinc low-pass design and
//! rational resampling.

use std::f64::consts::PI;

use num_complex::Complex64;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::rng::RandomSource;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IqSignal {
    samples: Vec<Complex64>,
    sample_rate_hz: f64,
}

impl IqSignal {
    pub fn new(samples: Vec<Complex64>, sample_rate_hz: f64) -> Result<Self> {
        if samples.is_empty() {
            return Err(invalid("signal must hold at least one sample"));
        }
        if !(sample_rate_hz > 0.0 && sample_rate_hz.is_finite()) {
            return Err(invalid(format!("sample rate must be positive, got {sample_rate_hz}")));
        }
        Ok(Self { samples, sample_rate_hz })
    }

    pub fn zeros(len: usize, sample_rate_hz: f64) -> Result<Self> {
        Self::new(vec![Complex64::new(0.0, 0.0); len], sample_rate_hz)
    }

    pub fn samples(&self) -> &[Complex64] {
        &self.samples
    }

    pub fn samples_mut(&mut self) -> &mut [Complex64] {
        &mut self.samples
    }

    pub fn into_samples(self) -> Vec<Complex64> {
        self.samples
    }

    pub fn sample_rate_hz(&self) -> f64 {
        self.sample_rate_hz
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Same rate, new samples. Used by transforms that never change length
    /// or rate, so the invariants carry over.
    pub(crate) fn with_samples(&self, samples: Vec<Complex64>) -> Self {
        debug_assert!(!samples.is_empty());
        Self { samples, sample_rate_hz: self.sample_rate_hz }
    }

    /// Euclidean norm of the sample vector.
    pub fn norm(&self) -> f64 {
        self.samples.iter().map(|s| s.norm_sqr()).sum::<f64>().sqrt()
    }
}

/// Mean of `|x|^2` over all samples.
pub fn signal_power(signal: &IqSignal) -> Result<f64> {
    power_of(signal.samples())
}

pub(crate) fn power_of(samples: &[Complex64]) -> Result<f64> {
    if samples.is_empty() {
        return Err(invalid("power of an empty signal"));
    }
    Ok(samples.iter().map(|s| s.norm_sqr()).sum::<f64>() / samples.len() as f64)
}

/// Mean power over the nonzero samples only. Zero-padding around a pulse
/// does not dilute it; an all-zero signal has support power 0.
pub fn support_power(signal: &IqSignal) -> f64 {
    let (sum, count) = signal
        .samples()
        .iter()
        .map(|s| s.norm_sqr())
        .filter(|&p| p > 0.0)
        .fold((0.0, 0usize), |(s, c), p| (s + p, c + 1));
    if count == 0 {
        0.0
    } else {
        sum / count as f64
    }
}

/// Draws `len` samples of circular complex Gaussian noise with total power
/// `power` (each quadrature carries half).
pub fn complex_gaussian(len: usize, power: f64, rng: &mut RandomSource) -> Vec<Complex64> {
    let sigma = (power / 2.0).sqrt();
    (0..len)
        .map(|_| {
            let re: f64 = StandardNormal.sample(rng);
            let im: f64 = StandardNormal.sample(rng);
            Complex64::new(sigma * re, sigma * im)
        })
        .collect()
}

/// Adds white Gaussian noise so that the ratio of the clean signal's support
/// power to the per-sample noise power equals `snr_db`.
pub fn add_awgn(signal: &IqSignal, snr_db: f64, rng: &mut RandomSource) -> IqSignal {
    let noise_power = support_power(signal) / 10f64.powf(snr_db / 10.0);
    let noise = complex_gaussian(signal.len(), noise_power, rng);
    let samples = signal
        .samples()
        .iter()
        .zip(noise)
        .map(|(s, n)| s + n)
        .collect();
    signal.with_samples(samples)
}

#[derive(Debug, Clone, PartialEq)]
pub struct FirFilter {
    taps: Vec<f64>,
    cutoff_hz: f64,
}

impl FirFilter {
    pub fn taps(&self) -> &[f64] {
        &self.taps
    }

    pub fn cutoff_hz(&self) -> f64 {
        self.cutoff_hz
    }

    /// Integer group delay of the linear-phase filter.
    pub fn group_delay(&self) -> usize {
        (self.taps.len() - 1) / 2
    }

    /// Complex frequency response at `freq_hz`.
    pub fn response(&self, freq_hz: f64, sample_rate_hz: f64) -> Complex64 {
        let w = 2.0 * PI * freq_hz / sample_rate_hz;
        self.taps
            .iter()
            .enumerate()
            .map(|(n, &h)| Complex64::from_polar(h, -w * n as f64))
            .sum()
    }

    /// Filters with group-delay compensation: the output has the input's
    /// length and is aligned with it in time (zero-extended edges).
    pub fn filter_aligned(&self, signal: &IqSignal) -> IqSignal {
        let delay = self.group_delay() as isize;
        let x = signal.samples();
        let n = x.len() as isize;
        let samples = (0..n)
            .map(|k| {
                let mut acc = Complex64::new(0.0, 0.0);
                for (j, &h) in self.taps.iter().enumerate() {
                    let idx = k + delay - j as isize;
                    if (0..n).contains(&idx) {
                        acc += x[idx as usize] * h;
                    }
                }
                acc
            })
            .collect();
        signal.with_samples(samples)
    }
}

/// Hamming-windowed sinc low-pass with unit DC gain.
pub fn design_lowpass(cutoff_hz: f64, sample_rate_hz: f64, num_taps: usize) -> Result<FirFilter> {
    if !(sample_rate_hz > 0.0) {
        return Err(invalid(format!("sample rate must be positive, got {sample_rate_hz}")));
    }
    if !(cutoff_hz > 0.0 && cutoff_hz < sample_rate_hz / 2.0) {
        return Err(invalid(format!(
            "cutoff {cutoff_hz} Hz must lie strictly inside (0, {}) Hz",
            sample_rate_hz / 2.0
        )));
    }
    if num_taps % 2 == 0 {
        return Err(invalid(format!("tap count must be odd, got {num_taps}")));
    }
    let fc = cutoff_hz / sample_rate_hz;
    let center = (num_taps - 1) as f64 / 2.0;
    let mut taps: Vec<f64> = (0..num_taps)
        .map(|n| {
            let x = n as f64 - center;
            let sinc = if x == 0.0 {
                2.0 * fc
            } else {
                (2.0 * PI * fc * x).sin() / (PI * x)
            };
            let window = if num_taps == 1 {
                1.0
            } else {
                0.54 - 0.46 * (2.0 * PI * n as f64 / (num_taps - 1) as f64).cos()
            };
            sinc * window
        })
        .collect();
    let dc: f64 = taps.iter().sum();
    taps.iter_mut().for_each(|t| *t /= dc);
    Ok(FirFilter { taps, cutoff_hz })
}

/// Zeroth-order modified Bessel function of the first kind.
fn bessel_i0(x: f64) -> f64 {
    let mut sum = 1.0;
    let mut term = 1.0;
    let q = x * x / 4.0;
    for k in 1..64 {
        term *= q / (k * k) as f64;
        sum += term;
        if term < sum * 1e-17 {
            break;
        }
    }
    sum
}

const KAISER_BETA: f64 = 10.0;

/// Kaiser-windowed sinc for the polyphase resampler. Each of the `up` phases
/// sums to one so a constant input maps to a constant output.
fn resample_kernel(fc: f64, num_taps: usize, up: usize) -> Vec<f64> {
    let center = (num_taps - 1) as f64 / 2.0;
    let norm = bessel_i0(KAISER_BETA);
    let mut taps: Vec<f64> = (0..num_taps)
        .map(|n| {
            let x = n as f64 - center;
            let sinc = if x == 0.0 {
                2.0 * fc
            } else {
                (2.0 * PI * fc * x).sin() / (PI * x)
            };
            let r = x / center;
            sinc * bessel_i0(KAISER_BETA * (1.0 - r * r).max(0.0).sqrt()) / norm
        })
        .collect();
    for phase in 0..up {
        let sum: f64 = taps.iter().skip(phase).step_by(up).sum();
        if sum.abs() > 1e-12 {
            taps.iter_mut().skip(phase).step_by(up).for_each(|t| *t /= sum);
        }
    }
    taps
}

/// Largest denominator considered when approximating a rate ratio.
pub const MAX_RATIO_DENOMINATOR: u64 = 1000;

/// Zero crossings of the anti-aliasing sinc on each side of its center.
const RESAMPLE_ZERO_CROSSINGS: usize = 24;

/// Best rational approximation `up/down` of `ratio` with `down <= max_den`,
/// in lowest terms. Ties go to the smaller denominator.
pub fn rational_approximation(ratio: f64, max_den: u64) -> (u64, u64) {
    let mut best = (ratio.round().max(1.0) as u64, 1u64);
    let mut best_err = (best.0 as f64 - ratio).abs();
    for den in 2..=max_den {
        let num = (ratio * den as f64).round().max(1.0) as u64;
        let err = (num as f64 / den as f64 - ratio).abs();
        if err < best_err - 1e-15 {
            best = (num, den);
            best_err = err;
        }
    }
    let g = gcd(best.0, best.1);
    (best.0 / g, best.1 / g)
}

fn gcd(mut a: u64, mut b: u64) -> u64 {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

/// Rational resampling: upsample by `L`, low-pass at the narrower of the
/// two Nyquist bands, downsample by `M`. Evaluated in polyphase form so the
/// zero-stuffed intermediate is never materialized. Group delay is removed,
/// so output sample `m` sits at input time `m * M / L`.
pub fn resample(signal: &IqSignal, new_rate_hz: f64) -> Result<IqSignal> {
    if !(new_rate_hz > 0.0 && new_rate_hz.is_finite()) {
        return Err(invalid(format!("target rate must be positive, got {new_rate_hz}")));
    }
    let old_rate = signal.sample_rate_hz();
    let (up, down) = rational_approximation(new_rate_hz / old_rate, MAX_RATIO_DENOMINATOR);
    let out_len = ((signal.len() as f64) * new_rate_hz / old_rate).round().max(1.0) as usize;
    if up == down {
        return IqSignal::new(signal.samples().to_vec(), new_rate_hz);
    }
    let (up, down) = (up as usize, down as usize);
    let high_rate = old_rate * up as f64;
    let cutoff = high_rate / (2.0 * up.max(down) as f64);
    let num_taps = 2 * RESAMPLE_ZERO_CROSSINGS * up.max(down) + 1;
    let taps = resample_kernel(cutoff / high_rate, num_taps, up);
    let center = (num_taps / 2) as i64;
    let x = signal.samples();
    let n_in = x.len() as i64;
    let (l, m) = (up as i64, down as i64);

    let samples = (0..out_len as i64)
        .map(|out_idx| {
            // Position on the upsampled grid, shifted to the filter center.
            let pos = out_idx * m + center;
            // Input k contributes tap index pos - k*L, which must be in range.
            let k_hi = (pos / l).min(n_in - 1);
            let k_lo = ((pos - taps.len() as i64 + 1) + l - 1).div_euclid(l).max(0);
            let mut acc = Complex64::new(0.0, 0.0);
            let mut k = k_lo;
            while k <= k_hi {
                acc += x[k as usize] * taps[(pos - k * l) as usize];
                k += 1;
            }
            acc
        })
        .collect();
    IqSignal::new(samples, new_rate_hz)
}
