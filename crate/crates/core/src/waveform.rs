//! Intra-pulse modulation synthesis for the twelve waveform classes.
//!
//! A pulse is a pure phase modulation `exp(j(theta(k) + 2*pi*fc/fs*k + theta_p))`,
//! so every class differs only in its phase law `theta(k)`.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use num_complex::Complex64;
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::rng::RandomSource;
use crate::signal::IqSignal;

pub const DEFAULT_SAMPLE_RATE_HZ: f64 = 100e6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum WaveformClass {
    Lfm,
    Nlfm,
    BpskBarker,
    CostasFm,
    Fsk2,
    Fsk4,
    T1,
    T2,
    T3,
    T4,
    LfmFsk2,
    LfmBpsk,
}

impl WaveformClass {
    pub const ALL: [WaveformClass; 12] = [
        WaveformClass::Lfm,
        WaveformClass::Nlfm,
        WaveformClass::BpskBarker,
        WaveformClass::CostasFm,
        WaveformClass::Fsk2,
        WaveformClass::Fsk4,
        WaveformClass::T1,
        WaveformClass::T2,
        WaveformClass::T3,
        WaveformClass::T4,
        WaveformClass::LfmFsk2,
        WaveformClass::LfmBpsk,
    ];

    /// Stable integer code, 0..=11, in the order of [`WaveformClass::ALL`].
    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn from_code(code: u8) -> Result<Self> {
        Self::ALL
            .get(code as usize)
            .copied()
            .ok_or_else(|| invalid(format!("waveform class code {code} out of range 0..=11")))
    }

    pub fn name(self) -> &'static str {
        match self {
            WaveformClass::Lfm => "LFM",
            WaveformClass::Nlfm => "NLFM",
            WaveformClass::BpskBarker => "BPSK_Barker",
            WaveformClass::CostasFm => "CostasFM",
            WaveformClass::Fsk2 => "FSK2",
            WaveformClass::Fsk4 => "FSK4",
            WaveformClass::T1 => "T1",
            WaveformClass::T2 => "T2",
            WaveformClass::T3 => "T3",
            WaveformClass::T4 => "T4",
            WaveformClass::LfmFsk2 => "LFM_FSK2",
            WaveformClass::LfmBpsk => "LFM_BPSK",
        }
    }
}

impl fmt::Display for WaveformClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for WaveformClass {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .iter()
            .copied()
            .find(|c| c.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| invalid(format!("unknown waveform class {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SweepDirection {
    Up,
    Down,
}

/// Per-class parameters. Fields a class does not use stay at their zero
/// value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassParams {
    pub bandwidth_hz: f64,
    pub sweep_direction: SweepDirection,
    /// Length of the binary phase code (Barker, or compound Barker for LFM-BPSK).
    pub code_bits: usize,
    /// Costas hop count.
    pub num_hops: usize,
    pub freq_separation_hz: f64,
    /// Tone index per FSK symbol.
    pub fsk_symbols: Vec<u8>,
    pub num_phase_states: u32,
    pub num_segments: u32,
}

impl Default for ClassParams {
    fn default() -> Self {
        Self {
            bandwidth_hz: 0.0,
            sweep_direction: SweepDirection::Up,
            code_bits: 0,
            num_hops: 0,
            freq_separation_hz: 0.0,
            fsk_symbols: Vec::new(),
            num_phase_states: 0,
            num_segments: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WaveformSpec {
    pub class: WaveformClass,
    pub carrier_hz: f64,
    pub pulse_width_s: f64,
    pub sample_rate_hz: f64,
    pub class_params: ClassParams,
    pub phase_delay_rad: f64,
}

/// Minimum pulse length in samples.
pub const MIN_PULSE_SAMPLES: usize = 16;

/// Symbols per FSK pulse.
pub const FSK_SYMBOLS: usize = 10;

impl WaveformSpec {
    pub fn num_samples(&self) -> usize {
        (self.pulse_width_s * self.sample_rate_hz).round() as usize
    }

    /// Highest frequency offset above the carrier the phase law can reach.
    fn occupied_half_band(&self) -> f64 {
        let p = &self.class_params;
        p.bandwidth_hz / 2.0 + p.freq_separation_hz
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sample_rate_hz > 0.0) {
            return Err(invalid("sample rate must be positive"));
        }
        if self.num_samples() < MIN_PULSE_SAMPLES {
            return Err(invalid(format!(
                "pulse covers {} samples, need at least {MIN_PULSE_SAMPLES}",
                self.num_samples()
            )));
        }
        let top = self.carrier_hz + self.class_params.bandwidth_hz / 2.0;
        if top >= self.sample_rate_hz / 2.0 {
            return Err(invalid(format!(
                "carrier + bandwidth/2 = {top} Hz reaches Nyquist ({} Hz)",
                self.sample_rate_hz / 2.0
            )));
        }
        let p = &self.class_params;
        let needs = |ok: bool, what: &str| {
            if ok {
                Ok(())
            } else {
                Err(invalid(format!("{}: {what}", self.class)))
            }
        };
        match self.class {
            WaveformClass::Lfm | WaveformClass::Nlfm => needs(p.bandwidth_hz > 0.0, "bandwidth"),
            WaveformClass::BpskBarker => needs(barker_code(p.code_bits).is_some(), "Barker length"),
            WaveformClass::CostasFm => {
                needs(costas_array(p.num_hops).is_some() && p.bandwidth_hz > 0.0, "Costas hops")
            }
            WaveformClass::Fsk2 | WaveformClass::Fsk4 => {
                let tones = fsk_tones(self.class);
                needs(
                    !p.fsk_symbols.is_empty()
                        && p.fsk_symbols.iter().all(|&s| (s as usize) < tones)
                        && p.freq_separation_hz > 0.0,
                    "FSK symbols",
                )
            }
            WaveformClass::T1 | WaveformClass::T2 => {
                needs(p.num_phase_states >= 2 && p.num_segments >= 1, "polytime parameters")
            }
            WaveformClass::T3 | WaveformClass::T4 => needs(
                p.num_phase_states >= 2 && p.num_segments >= 1 && p.bandwidth_hz > 0.0,
                "polytime parameters",
            ),
            WaveformClass::LfmFsk2 => needs(
                p.bandwidth_hz > 0.0 && !p.fsk_symbols.is_empty() && p.freq_separation_hz > 0.0,
                "composite parameters",
            ),
            WaveformClass::LfmBpsk => needs(
                p.bandwidth_hz > 0.0 && compound_barker_code(p.code_bits).is_some(),
                "composite parameters",
            ),
        }
    }

    /// Upper edge of the occupied band relative to DC.
    pub fn max_frequency_hz(&self) -> f64 {
        self.carrier_hz + self.occupied_half_band()
    }
}

pub fn barker_code(len: usize) -> Option<&'static [i8]> {
    Some(match len {
        2 => &[1, -1],
        3 => &[1, 1, -1],
        4 => &[1, 1, -1, 1],
        5 => &[1, 1, 1, -1, 1],
        7 => &[1, 1, 1, -1, -1, 1, -1],
        11 => &[1, 1, 1, -1, -1, -1, 1, -1, -1, 1, -1],
        13 => &[1, 1, 1, 1, 1, -1, -1, 1, 1, -1, 1, -1, 1],
        _ => return None,
    })
}

/// Binary code for the LFM-BPSK composite: Barker-4, or the Kronecker
/// product of a Barker code with itself for 9 (3x3) and 16 (4x4).
pub fn compound_barker_code(len: usize) -> Option<Vec<i8>> {
    let kron = |outer: &[i8], inner: &[i8]| -> Vec<i8> {
        outer
            .iter()
            .flat_map(|&o| inner.iter().map(move |&i| o * i))
            .collect()
    };
    match len {
        4 => barker_code(4).map(<[i8]>::to_vec),
        9 => Some(kron(barker_code(3)?, barker_code(3)?)),
        16 => Some(kron(barker_code(4)?, barker_code(4)?)),
        _ => None,
    }
}

/// Fixed Costas permutations (1-based hop frequencies).
pub fn costas_array(len: usize) -> Option<&'static [u8]> {
    Some(match len {
        // Welch, p = 7, root 3, corner removed.
        5 => &[2, 1, 5, 3, 4],
        // First in lexicographic order.
        7 => &[1, 2, 6, 4, 7, 3, 5],
        // Welch, p = 11, root 2.
        10 => &[2, 4, 8, 5, 10, 9, 7, 3, 6, 1],
        _ => return None,
    })
}

fn fsk_tones(class: WaveformClass) -> usize {
    match class {
        WaveformClass::Fsk4 => 4,
        _ => 2,
    }
}

fn segment_index(t: f64, duration: f64, count: usize) -> usize {
    ((t / duration * count as f64).floor() as usize).min(count - 1)
}

fn binary_code_phase(code: &[i8], t: f64, duration: f64) -> f64 {
    if code[segment_index(t, duration, code.len())] > 0 {
        0.0
    } else {
        PI
    }
}

/// Centered FSK phase: tones at `(s - (tones-1)/2) * separation`.
fn fsk_phase(symbols: &[u8], tones: usize, separation: f64, t: f64, duration: f64) -> f64 {
    let s = symbols[segment_index(t, duration, symbols.len())] as f64;
    let f = (s - (tones as f64 - 1.0) / 2.0) * separation;
    2.0 * PI * f * t
}

/// Quantizes `x` to one of `states` phases, returning `2*pi/states * (floor(x) mod states)`.
fn quantized_phase(x: f64, states: u32) -> f64 {
    let q = x.floor().rem_euclid(states as f64);
    2.0 * PI / states as f64 * q
}

/// Polytime phase laws (Lewis-Kretschmer T1..T4).
fn polytime_phase(class: WaveformClass, p: &ClassParams, t: f64, duration: f64) -> f64 {
    let n = p.num_phase_states as f64;
    let segments = p.num_segments as f64;
    let x = match class {
        WaveformClass::T1 => {
            let j = segment_index(t, duration, p.num_segments as usize) as f64;
            (segments * t - j * duration) * (j * n / duration)
        }
        WaveformClass::T2 => {
            let j = segment_index(t, duration, p.num_segments as usize) as f64;
            (segments * t - j * duration) * ((2.0 * j - segments + 1.0) / duration) * (n / 2.0)
        }
        WaveformClass::T3 => n * p.bandwidth_hz * t * t / (2.0 * duration),
        WaveformClass::T4 => {
            n * p.bandwidth_hz * t * t / (2.0 * duration) - n * p.bandwidth_hz * t / 2.0
        }
        _ => unreachable!("not a polytime class"),
    };
    quantized_phase(x, p.num_phase_states)
}

/// Class-specific instantaneous phase (radians, carrier excluded) at sample `k`.
pub fn phase_function(spec: &WaveformSpec, k: usize) -> Result<f64> {
    let n = spec.num_samples();
    if k >= n {
        return Err(invalid(format!("sample index {k} outside pulse of {n} samples")));
    }
    let t = k as f64 / spec.sample_rate_hz;
    let dur = spec.pulse_width_s;
    let p = &spec.class_params;
    let chirp_rate = p.bandwidth_hz / dur;
    let phase = match spec.class {
        WaveformClass::Lfm => {
            let sign = match p.sweep_direction {
                SweepDirection::Up => 1.0,
                SweepDirection::Down => -1.0,
            };
            sign * PI * chirp_rate * t * t
        }
        WaveformClass::Nlfm => PI * p.bandwidth_hz * (t - dur / PI * (PI * t / dur).sin()),
        WaveformClass::BpskBarker => {
            let code = barker_code(p.code_bits)
                .ok_or_else(|| invalid(format!("no Barker code of length {}", p.code_bits)))?;
            binary_code_phase(code, t, dur)
        }
        WaveformClass::CostasFm => {
            let order = costas_array(p.num_hops)
                .ok_or_else(|| invalid(format!("no Costas array of length {}", p.num_hops)))?;
            let hop = order[segment_index(t, dur, order.len())] as f64;
            let spacing = p.bandwidth_hz / p.num_hops as f64;
            2.0 * PI * (hop - 1.0) * spacing * t
        }
        WaveformClass::Fsk2 | WaveformClass::Fsk4 => fsk_phase(
            &p.fsk_symbols,
            fsk_tones(spec.class),
            p.freq_separation_hz,
            t,
            dur,
        ),
        WaveformClass::T1 | WaveformClass::T2 | WaveformClass::T3 | WaveformClass::T4 => {
            polytime_phase(spec.class, p, t, dur)
        }
        WaveformClass::LfmFsk2 => {
            // Both components centered on the carrier.
            let chirp = PI * chirp_rate * t * t - PI * p.bandwidth_hz * t;
            chirp + fsk_phase(&p.fsk_symbols, 2, p.freq_separation_hz, t, dur)
        }
        WaveformClass::LfmBpsk => {
            let code = compound_barker_code(p.code_bits).ok_or_else(|| {
                invalid(format!("no compound Barker code of length {}", p.code_bits))
            })?;
            let chirp = PI * chirp_rate * t * t - PI * p.bandwidth_hz * t;
            chirp + binary_code_phase(&code, t, dur)
        }
    };
    Ok(phase)
}

/// Noise-free, channel-free unit-modulus pulse of `spec.num_samples()` samples.
pub fn synthesize(spec: &WaveformSpec) -> Result<IqSignal> {
    spec.validate()?;
    let carrier_step = 2.0 * PI * spec.carrier_hz / spec.sample_rate_hz;
    let samples = (0..spec.num_samples())
        .map(|k| {
            let theta = phase_function(spec, k)?;
            Ok(Complex64::from_polar(
                1.0,
                theta + carrier_step * k as f64 + spec.phase_delay_rad,
            ))
        })
        .collect::<Result<Vec<_>>>()?;
    IqSignal::new(samples, spec.sample_rate_hz)
}

fn uniform(rng: &mut RandomSource, lo: f64, hi: f64) -> f64 {
    rng.gen_range(lo..hi)
}

fn draw_fsk_symbols(rng: &mut RandomSource, tones: usize) -> Vec<u8> {
    loop {
        let symbols: Vec<u8> = (0..FSK_SYMBOLS).map(|_| rng.gen_range(0..tones as u8)).collect();
        // A single repeated tone would be an unmodulated carrier.
        if symbols.iter().any(|&s| s != symbols[0]) {
            return symbols;
        }
    }
}

/// Draws a spec for `class` with every parameter uniform over its range at
/// the default 100 MHz sample rate.
pub fn draw_spec(class: WaveformClass, rng: &mut RandomSource) -> WaveformSpec {
    use WaveformClass::*;
    let wide_carrier = matches!(class, T3 | T4 | LfmFsk2);
    let carrier_hz = if wide_carrier {
        uniform(rng, 10e6, 30e6)
    } else {
        uniform(rng, 10e6, 20e6)
    };
    let pulse_width_s = uniform(rng, 5e-6, 10e-6);
    let mut p = ClassParams::default();
    match class {
        Lfm => {
            p.bandwidth_hz = uniform(rng, 10e6, 20e6);
            p.sweep_direction = if rng.gen_bool(0.5) {
                SweepDirection::Up
            } else {
                SweepDirection::Down
            };
        }
        Nlfm => p.bandwidth_hz = uniform(rng, 10e6, 20e6),
        BpskBarker => p.code_bits = *[7, 11, 13].choose(rng).unwrap(),
        CostasFm => {
            p.num_hops = *[5, 7, 10].choose(rng).unwrap();
            p.bandwidth_hz = uniform(rng, 10e6, 20e6);
        }
        Fsk2 | Fsk4 => {
            p.freq_separation_hz = uniform(rng, 5e6, 10e6);
            p.fsk_symbols = draw_fsk_symbols(rng, fsk_tones(class));
        }
        T1 | T2 => {
            p.num_phase_states = 2;
            p.num_segments = *[18, 20, 22].choose(rng).unwrap();
        }
        T3 | T4 => {
            p.num_phase_states = 2;
            p.num_segments = *[18, 20, 22].choose(rng).unwrap();
            p.bandwidth_hz = uniform(rng, 5e6, 10e6);
        }
        LfmFsk2 => {
            p.bandwidth_hz = uniform(rng, 10e6, 20e6);
            p.freq_separation_hz = uniform(rng, 5e6, 10e6);
            p.fsk_symbols = draw_fsk_symbols(rng, 2);
        }
        LfmBpsk => {
            p.bandwidth_hz = uniform(rng, 10e6, 20e6);
            p.code_bits = *[4, 9, 16].choose(rng).unwrap();
        }
    }
    WaveformSpec {
        class,
        carrier_hz,
        pulse_width_s,
        sample_rate_hz: DEFAULT_SAMPLE_RATE_HZ,
        class_params: p,
        phase_delay_rad: uniform(rng, 0.0, 2.0 * PI),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from_seed;
    use crate::stats::{ks_critical, ks_statistic};

    fn lfm_spec(direction: SweepDirection) -> WaveformSpec {
        WaveformSpec {
            class: WaveformClass::Lfm,
            carrier_hz: 15e6,
            pulse_width_s: 10e-6,
            sample_rate_hz: 100e6,
            class_params: ClassParams {
                bandwidth_hz: 10e6,
                sweep_direction: direction,
                ..ClassParams::default()
            },
            phase_delay_rad: 0.7,
        }
    }

    fn barker13_spec() -> WaveformSpec {
        WaveformSpec {
            class: WaveformClass::BpskBarker,
            carrier_hz: 12e6,
            pulse_width_s: 9.1e-6,
            sample_rate_hz: 100e6,
            class_params: ClassParams { code_bits: 13, ..ClassParams::default() },
            phase_delay_rad: 1.3,
        }
    }

    fn inst_freq(s: &[Complex64], k: usize, fs: f64) -> f64 {
        (s[k + 1] * s[k].conj()).arg() * fs / (2.0 * PI)
    }

    #[test]
    fn class_codes_are_stable() {
        for (i, c) in WaveformClass::ALL.iter().enumerate() {
            assert_eq!(c.code() as usize, i);
            assert_eq!(WaveformClass::from_code(i as u8).unwrap(), *c);
            assert_eq!(c.name().parse::<WaveformClass>().unwrap(), *c);
        }
        assert!(WaveformClass::from_code(12).is_err());
        assert_eq!(WaveformClass::Lfm.code(), 0);
        assert_eq!(WaveformClass::LfmBpsk.code(), 11);
    }

    #[test]
    fn lfm_starts_at_zero_phase() {
        let mut rng = rng_from_seed(3);
        for _ in 0..20 {
            let spec = draw_spec(WaveformClass::Lfm, &mut rng);
            assert_eq!(phase_function(&spec, 0).unwrap(), 0.0);
        }
    }

    #[test]
    fn phase_function_rejects_out_of_range() {
        let spec = lfm_spec(SweepDirection::Up);
        assert!(phase_function(&spec, spec.num_samples()).is_err());
    }

    #[test]
    fn barker13_phase_jumps_follow_code() {
        let spec = barker13_spec();
        let code = barker_code(13).unwrap();
        let n = spec.num_samples();
        let chip = n as f64 / 13.0;
        for c in 0..13 {
            let k = ((c as f64 + 0.5) * chip) as usize;
            let expected = if code[c] > 0 { 0.0 } else { PI };
            assert_eq!(phase_function(&spec, k).unwrap(), expected);
        }
        // Jumps of exactly pi wherever the code changes sign, none elsewhere.
        let mut jumps = 0;
        for k in 1..n {
            let d = phase_function(&spec, k).unwrap() - phase_function(&spec, k - 1).unwrap();
            if d != 0.0 {
                assert_eq!(d.abs(), PI);
                jumps += 1;
            }
        }
        let sign_changes = code.windows(2).filter(|w| w[0] != w[1]).count();
        assert_eq!(jumps, sign_changes);
    }

    #[test]
    fn polytime_codes_use_two_phase_states() {
        let mut rng = rng_from_seed(11);
        for class in [WaveformClass::T1, WaveformClass::T2, WaveformClass::T3, WaveformClass::T4] {
            for _ in 0..10 {
                let spec = draw_spec(class, &mut rng);
                assert_eq!(spec.class_params.num_phase_states, 2);
                for k in 0..spec.num_samples() {
                    let p = phase_function(&spec, k).unwrap().rem_euclid(2.0 * PI);
                    assert!(p == 0.0 || p == PI, "{class}: phase {p}");
                }
            }
        }
    }

    #[test]
    fn every_class_is_unit_modulus() {
        let mut rng = rng_from_seed(5);
        for class in WaveformClass::ALL {
            for _ in 0..5 {
                let spec = draw_spec(class, &mut rng);
                spec.validate().unwrap();
                let s = synthesize(&spec).unwrap();
                assert_eq!(s.len(), spec.num_samples());
                for x in s.samples() {
                    assert!((x.norm() - 1.0).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn lfm_sweep_endpoints() {
        let spec = lfm_spec(SweepDirection::Up);
        let s = synthesize(&spec).unwrap();
        let fs = spec.sample_rate_hz;
        let b = spec.class_params.bandwidth_hz;
        let start = inst_freq(s.samples(), 0, fs);
        let end = inst_freq(s.samples(), s.len() - 2, fs);
        assert!((start - spec.carrier_hz).abs() < 0.02 * b, "start {start}");
        assert!((end - (spec.carrier_hz + b)).abs() < 0.02 * b, "end {end}");

        let down = synthesize(&lfm_spec(SweepDirection::Down)).unwrap();
        let end = inst_freq(down.samples(), down.len() - 2, fs);
        assert!((end - (spec.carrier_hz - b)).abs() < 0.02 * b);
    }

    #[test]
    fn nlfm_sweeps_full_bandwidth_non_linearly() {
        let mut spec = lfm_spec(SweepDirection::Up);
        spec.class = WaveformClass::Nlfm;
        let s = synthesize(&spec).unwrap();
        let fs = spec.sample_rate_hz;
        let b = spec.class_params.bandwidth_hz;
        let n = s.len();
        let f = |k| inst_freq(s.samples(), k, fs) - spec.carrier_hz;
        assert!(f(0).abs() < 0.02 * b);
        assert!((f(n - 2) - b).abs() < 0.02 * b);
        assert!((f(n / 2) - b / 2.0).abs() < 0.02 * b);
        // S-shape: the first quarter covers much less than a quarter of B.
        assert!(f(n / 4) < 0.2 * b);
    }

    #[test]
    fn barker13_autocorrelation_ratio() {
        let spec = barker13_spec();
        let s = synthesize(&spec).unwrap();
        let step = 2.0 * PI * spec.carrier_hz / spec.sample_rate_hz;
        let base: Vec<Complex64> = s
            .samples()
            .iter()
            .enumerate()
            .map(|(k, x)| x * Complex64::from_polar(1.0, -(step * k as f64 + spec.phase_delay_rad)))
            .collect();
        let n = base.len();
        let acf: Vec<f64> = (0..n)
            .map(|lag| {
                (0..n - lag)
                    .map(|k| base[k + lag] * base[k].conj())
                    .sum::<Complex64>()
                    .norm()
            })
            .collect();
        let chip = (n as f64 / 13.0).ceil() as usize;
        let peak = acf[0];
        let sidelobe = acf[chip..].iter().cloned().fold(0.0, f64::max);
        let ratio = peak / sidelobe;
        assert!((ratio - 13.0).abs() <= 0.05 * 13.0, "ratio {ratio}");
    }

    #[test]
    fn costas_arrays_have_distinct_differences() {
        for len in [5, 7, 10] {
            let a = costas_array(len).unwrap();
            let mut sorted = a.to_vec();
            sorted.sort();
            assert_eq!(sorted, (1..=len as u8).collect::<Vec<_>>());
            for d in 1..len {
                let mut seen = std::collections::HashSet::new();
                for i in 0..len - d {
                    assert!(seen.insert(a[i + d] as i32 - a[i] as i32), "len {len} shift {d}");
                }
            }
        }
    }

    #[test]
    fn compound_codes_have_requested_lengths() {
        assert_eq!(compound_barker_code(4).unwrap(), vec![1, 1, -1, 1]);
        assert_eq!(compound_barker_code(9).unwrap().len(), 9);
        assert_eq!(compound_barker_code(16).unwrap().len(), 16);
        assert!(compound_barker_code(13).is_none());
    }

    #[test]
    fn draw_spec_ranges() {
        let mut rng = rng_from_seed(17);
        for _ in 0..10_000 {
            let s = draw_spec(WaveformClass::Lfm, &mut rng);
            assert!((10e6..=20e6).contains(&s.carrier_hz));
            assert!((5e-6..=10e-6).contains(&s.pulse_width_s));
            assert!((10e6..=20e6).contains(&s.class_params.bandwidth_hz));
        }
        for _ in 0..200 {
            let s = draw_spec(WaveformClass::CostasFm, &mut rng);
            assert!([5, 7, 10].contains(&s.class_params.num_hops));
            let s = draw_spec(WaveformClass::BpskBarker, &mut rng);
            assert!([7, 11, 13].contains(&s.class_params.code_bits));
            let s = draw_spec(WaveformClass::T3, &mut rng);
            assert!((10e6..=30e6).contains(&s.carrier_hz));
            assert!((5e6..=10e6).contains(&s.class_params.bandwidth_hz));
            assert!([18, 20, 22].contains(&s.class_params.num_segments));
            let s = draw_spec(WaveformClass::Fsk4, &mut rng);
            assert!((5e6..=10e6).contains(&s.class_params.freq_separation_hz));
            let s = draw_spec(WaveformClass::LfmBpsk, &mut rng);
            assert!([4, 9, 16].contains(&s.class_params.code_bits));
        }
    }

    #[test]
    fn draw_spec_is_deterministic() {
        for class in WaveformClass::ALL {
            let a = draw_spec(class, &mut rng_from_seed(99));
            let b = draw_spec(class, &mut rng_from_seed(99));
            assert_eq!(a, b);
        }
    }

    #[test]
    fn draw_spec_parameters_are_uniform() {
        let mut rng = rng_from_seed(2024);
        let n = 10_000;
        let draws: Vec<WaveformSpec> = (0..n).map(|_| draw_spec(WaveformClass::Lfm, &mut rng)).collect();
        let crit = ks_critical(n, 0.01);
        let checks: [(&str, Box<dyn Fn(&WaveformSpec) -> f64>, f64, f64); 4] = [
            ("carrier", Box::new(|s| s.carrier_hz), 10e6, 20e6),
            ("width", Box::new(|s| s.pulse_width_s), 5e-6, 10e-6),
            ("bandwidth", Box::new(|s| s.class_params.bandwidth_hz), 10e6, 20e6),
            ("phase", Box::new(|s| s.phase_delay_rad), 0.0, 2.0 * PI),
        ];
        for (name, get, lo, hi) in checks.iter() {
            let xs: Vec<f64> = draws.iter().map(|s| get(s)).collect();
            let d = ks_statistic(&xs, |x| ((x - lo) / (hi - lo)).clamp(0.0, 1.0));
            assert!(d < crit, "{name}: D = {d}, critical {crit}");
        }
    }

    #[test]
    fn phase_delay_is_a_global_rotation() {
        let mut rng = rng_from_seed(8);
        for class in WaveformClass::ALL {
            let a = draw_spec(class, &mut rng);
            let mut b = a.clone();
            b.phase_delay_rad = a.phase_delay_rad + 1.1;
            let sa = synthesize(&a).unwrap();
            let sb = synthesize(&b).unwrap();
            let rot = Complex64::from_polar(1.0, 1.1);
            for (x, y) in sa.samples().iter().zip(sb.samples()) {
                assert!((x * rot - y).norm() < 1e-9);
            }
        }
    }

    #[test]
    fn occupied_band_is_contained() {
        use rustfft::FftPlanner;
        let mut rng = rng_from_seed(31);
        let bins = 4096;
        for class in WaveformClass::ALL {
            for _ in 0..3 {
                let spec = draw_spec(class, &mut rng);
                if matches!(
                    class,
                    WaveformClass::T1 | WaveformClass::T2 | WaveformClass::T3 | WaveformClass::T4
                ) {
                    // Two-state quantization of the phase law puts odd harmonics
                    // at a third of the fundamental, across the whole band.
                    continue;
                }
                let s = synthesize(&spec).unwrap();
                let mut buf = s.samples().to_vec();
                buf.resize(bins, Complex64::new(0.0, 0.0));
                FftPlanner::new().plan_fft_forward(bins).process(&mut buf);
                let mags: Vec<f64> = buf.iter().map(|x| x.norm()).collect();
                let peak = mags.iter().cloned().fold(0.0, f64::max);
                let p = &spec.class_params;
                // Fresnel ripple of a finite chirp reaches about sqrt(B/T) past the sweep.
                let spread = p.bandwidth_hz
                    + p.freq_separation_hz * 3.0
                    + 4.0 / spec.pulse_width_s
                    + 2.0 * (p.bandwidth_hz / spec.pulse_width_s).sqrt();
                let code_spread = if p.code_bits > 0 {
                    3.0 * p.code_bits as f64 / spec.pulse_width_s
                } else {
                    0.0
                };
                let lo = spec.carrier_hz - spread - code_spread;
                let hi = spec.carrier_hz + spread + code_spread;
                for (k, m) in mags.iter().enumerate() {
                    let mut f = k as f64 * spec.sample_rate_hz / bins as f64;
                    if f >= spec.sample_rate_hz / 2.0 {
                        f -= spec.sample_rate_hz;
                    }
                    if *m > 0.1 * peak {
                        assert!(f >= lo && f <= hi, "{class}: energy at {f} outside [{lo},{hi}]");
                    }
                }
            }
        }
    }
}
