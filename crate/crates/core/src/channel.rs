//! Propagation channel: free-space path (attenuated, delayed copy) with
//! probability `p0`, flat Rayleigh fading otherwise.

use num_complex::Complex64;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::augment::{apply_gains, rayleigh_gains, DEFAULT_NUM_SINUSOIDS};
use crate::error::{invalid, Result};
use crate::rng::RandomSource;
use crate::signal::IqSignal;

pub const PATH_ATTENUATION_RANGE: (f64, f64) = (0.5, 1.0);
pub const MAX_PATH_DELAY_SAMPLES: usize = 10;
pub const CHANNEL_DOPPLER_RANGE_HZ: (f64, f64) = (50.0, 500.0);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChannelKind {
    FreeSpace,
    Rayleigh,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelModel {
    pub p0: f64,
    pub path_delay_samples: usize,
    pub path_attenuation: f64,
    pub max_doppler_hz: f64,
    pub num_sinusoids: usize,
}

impl ChannelModel {
    /// Free-space path parameters and Doppler drawn from their ranges.
    pub fn draw(p0: f64, rng: &mut RandomSource) -> Self {
        Self {
            p0,
            path_delay_samples: rng.gen_range(0..=MAX_PATH_DELAY_SAMPLES),
            path_attenuation: rng.gen_range(PATH_ATTENUATION_RANGE.0..PATH_ATTENUATION_RANGE.1),
            max_doppler_hz: rng.gen_range(CHANNEL_DOPPLER_RANGE_HZ.0..CHANNEL_DOPPLER_RANGE_HZ.1),
            num_sinusoids: DEFAULT_NUM_SINUSOIDS,
        }
    }

    pub fn identity() -> Self {
        Self {
            p0: 1.0,
            path_delay_samples: 0,
            path_attenuation: 1.0,
            max_doppler_hz: 0.0,
            num_sinusoids: DEFAULT_NUM_SINUSOIDS,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.p0) {
            return Err(invalid(format!("p0 = {} outside [0, 1]", self.p0)));
        }
        if !(self.path_attenuation > 0.0) {
            return Err(invalid("path attenuation must be positive"));
        }
        if self.num_sinusoids < 8 {
            return Err(invalid(format!("need at least 8 sinusoids, got {}", self.num_sinusoids)));
        }
        Ok(())
    }
}

/// Passes `signal` through the channel. Output length equals input length;
/// the delayed free-space copy is zero-filled at the front and truncated at
/// the back.
pub fn apply_channel(
    signal: &IqSignal,
    channel: &ChannelModel,
    rng: &mut RandomSource,
) -> Result<(IqSignal, ChannelKind)> {
    channel.validate()?;
    if rng.gen::<f64>() < channel.p0 {
        let n = signal.len();
        let d = channel.path_delay_samples.min(n);
        let mut out = vec![Complex64::new(0.0, 0.0); n];
        for (o, x) in out[d..].iter_mut().zip(signal.samples()) {
            *o = x * channel.path_attenuation;
        }
        Ok((signal.with_samples(out), ChannelKind::FreeSpace))
    } else {
        let gains = rayleigh_gains(
            signal.len(),
            channel.max_doppler_hz,
            signal.sample_rate_hz(),
            channel.num_sinusoids,
            rng,
        )?;
        Ok((apply_gains(signal, &gains), ChannelKind::Rayleigh))
    }
}
