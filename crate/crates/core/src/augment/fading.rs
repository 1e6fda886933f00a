//! Clarke sum-of-sinusoids flat Rayleigh fading generator.
//!
//! ```text
//! h_I(k) = 1/sqrt(M) * sum_m cos(2*pi*fd*cos(((2m-1)*pi + theta)/(4M)) * k + alpha_m)
//! h_Q(k) = 1/sqrt(M) * sum_m sin(2*pi*fd*cos(((2m-1)*pi + theta)/(4M)) * k + beta_m)
//! ```
//!
//! `fd` is the maximum Doppler normalized by the sample rate, so `k` counts
//! samples. `E|h|^2 = 1`.

use std::f64::consts::PI;

use num_complex::Complex64;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::rng::RandomSource;

pub const DEFAULT_NUM_SINUSOIDS: usize = 32;

/// One realization of the random phases of the generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FadingPhases {
    pub theta: f64,
    pub alpha: Vec<f64>,
    pub beta: Vec<f64>,
}

impl FadingPhases {
    pub fn draw(num_sinusoids: usize, rng: &mut RandomSource) -> Result<Self> {
        if num_sinusoids == 0 {
            return Err(invalid("fading needs at least one sinusoid"));
        }
        let mut u = || rng.gen_range(0.0..2.0 * PI);
        let theta = u();
        let alpha = (0..num_sinusoids).map(|_| u()).collect();
        let beta = (0..num_sinusoids).map(|_| u()).collect();
        Ok(Self { theta, alpha, beta })
    }

    pub fn num_sinusoids(&self) -> usize {
        self.alpha.len()
    }
}

/// Deterministic gain sequence `h(0..len)` for given phases.
pub fn clarke_gains(
    len: usize,
    doppler_hz: f64,
    sample_rate_hz: f64,
    phases: &FadingPhases,
) -> Vec<Complex64> {
    let m_count = phases.num_sinusoids();
    let scale = 1.0 / (m_count as f64).sqrt();
    let fd = doppler_hz / sample_rate_hz;
    let omegas: Vec<f64> = (1..=m_count)
        .map(|m| {
            let angle = ((2 * m - 1) as f64 * PI + phases.theta) / (4 * m_count) as f64;
            2.0 * PI * fd * angle.cos()
        })
        .collect();
    (0..len)
        .map(|k| {
            let k = k as f64;
            let (mut hi, mut hq) = (0.0, 0.0);
            for ((w, a), b) in omegas.iter().zip(&phases.alpha).zip(&phases.beta) {
                hi += (w * k + a).cos();
                hq += (w * k + b).sin();
            }
            Complex64::new(scale * hi, scale * hq)
        })
        .collect()
}

/// Draws fresh phases and returns `len` fading gains.
pub fn rayleigh_gains(
    len: usize,
    doppler_hz: f64,
    sample_rate_hz: f64,
    num_sinusoids: usize,
    rng: &mut RandomSource,
) -> Result<Vec<Complex64>> {
    if doppler_hz < 0.0 {
        return Err(invalid(format!("Doppler must be non-negative, got {doppler_hz}")));
    }
    let phases = FadingPhases::draw(num_sinusoids, rng)?;
    Ok(clarke_gains(len, doppler_hz, sample_rate_hz, &phases))
}
