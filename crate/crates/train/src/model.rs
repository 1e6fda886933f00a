//! The Trans-CNN encoder: four conv blocks, a small transformer encoder, a
//! feature layer and a projection head.

use std::path::Path;

use pulseclust_autodiff::nn::{sinusoidal_encoding, BatchNorm1d, Conv1d, Linear, TransformerEncoderLayer};
use pulseclust_autodiff::{checkpoint, Graph, ParamStore, Real, Tensor, Var};
use pulseclust_core::rng::rng_from_seed;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EncoderConfig {
    pub input_channels: usize,
    /// Full-width conv channels; divided by `scale`.
    pub channels: Vec<usize>,
    pub kernels: Vec<usize>,
    pub pool: usize,
    pub transformer_layers: usize,
    pub heads: usize,
    /// Full-width feedforward width; divided by `scale`.
    pub ffn_dim: usize,
    pub feature_dim: usize,
    pub projection_dim: usize,
    pub scale: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            input_channels: 2,
            channels: vec![32, 64, 128, 256],
            kernels: vec![5, 5, 5, 3],
            pool: 2,
            transformer_layers: 2,
            heads: 8,
            ffn_dim: 128,
            feature_dim: 128,
            projection_dim: 12,
            scale: 1,
        }
    }
}

impl EncoderConfig {
    /// Full-width network.
    pub fn full() -> Self {
        Self::default()
    }

    /// Narrowed network for CPU runs.
    pub fn desk(scale: usize) -> Self {
        Self { scale, ..Self::default() }
    }

    pub fn conv_channels(&self) -> Vec<usize> {
        self.channels.iter().map(|c| c / self.scale.max(1)).collect()
    }

    pub fn model_dim(&self) -> usize {
        self.conv_channels().last().copied().unwrap_or(0)
    }

    pub fn scaled_ffn_dim(&self) -> usize {
        self.ffn_dim / self.scale.max(1)
    }

    /// Tokens entering the transformer for a frame of `frame_len` samples.
    pub fn sequence_len(&self, frame_len: usize) -> usize {
        self.channels.iter().fold(frame_len, |l, _| l / self.pool.max(1))
    }

    pub fn validate(&self, frame_len: usize) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.scale == 0 {
            return bad("encoder scale must be at least 1".into());
        }
        if self.channels.is_empty() || self.channels.len() != self.kernels.len() {
            return bad(format!("{} conv channels but {} kernels", self.channels.len(), self.kernels.len()));
        }
        if self.conv_channels().iter().any(|&c| c == 0) {
            return bad(format!("scale {} leaves a conv block without channels", self.scale));
        }
        if self.kernels.iter().any(|&k| k % 2 == 0) {
            return bad("conv kernels must be odd".into());
        }
        if self.heads == 0 || self.model_dim() % self.heads != 0 {
            return bad(format!("model dim {} not divisible by {} heads", self.model_dim(), self.heads));
        }
        if self.feature_dim % self.heads != 0 {
            return bad(format!("feature dim {} not divisible by {} heads", self.feature_dim, self.heads));
        }
        if self.scaled_ffn_dim() == 0 || self.feature_dim == 0 || self.projection_dim == 0 {
            return bad("layer widths must be positive".into());
        }
        if self.pool < 1 || self.sequence_len(frame_len) == 0 {
            return bad(format!("frame length {frame_len} does not survive the pooling chain"));
        }
        Ok(())
    }
}

struct ConvBlock {
    conv: Conv1d,
    norm: BatchNorm1d,
}

/// Layer handles; the weights live in a [`ParamStore`].
pub struct Encoder {
    config: EncoderConfig,
    blocks: Vec<ConvBlock>,
    layers: Vec<TransformerEncoderLayer>,
    fc: Linear,
    head: Linear,
}

pub struct EncoderOutput {
    /// `[B, feature_dim]`, before normalization.
    pub features: Var,
    /// `[B, projection_dim]`.
    pub projections: Var,
}

impl Encoder {
    pub fn new<T: Real>(config: &EncoderConfig, store: &mut ParamStore<T>, seed: u64) -> Result<Self> {
        let mut rng = rng_from_seed(seed);
        let chans = config.conv_channels();
        let mut blocks = Vec::with_capacity(chans.len());
        let mut cin = config.input_channels;
        for (i, (&c, &k)) in chans.iter().zip(&config.kernels).enumerate() {
            blocks.push(ConvBlock {
                conv: Conv1d::new(store, &format!("conv{i}"), cin, c, k, &mut rng)?,
                norm: BatchNorm1d::new(store, &format!("bn{i}"), c)?,
            });
            cin = c;
        }
        let d = config.model_dim();
        let layers = (0..config.transformer_layers)
            .map(|i| {
                TransformerEncoderLayer::new(store, &format!("transformer{i}"), d, config.heads, config.scaled_ffn_dim(), &mut rng)
            })
            .collect::<std::result::Result<Vec<_>, _>>()?;
        let fc = Linear::new(store, "fc", d, config.feature_dim, &mut rng)?;
        let head = Linear::new(store, "head", config.feature_dim, config.projection_dim, &mut rng)?;
        Ok(Self { config: config.clone(), blocks, layers, fc, head })
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.config
    }

    /// `x: [B, 2, L]`. Training mode uses batch statistics and updates the
    /// running estimates in `store`.
    pub fn forward<T: Real>(
        &self,
        g: &mut Graph<T>,
        store: &mut ParamStore<T>,
        x: Var,
        train: bool,
    ) -> Result<EncoderOutput> {
        let shape = g.shape(x).to_vec();
        if shape.len() != 3 || shape[1] != self.config.input_channels {
            return Err(Error::Contract(format!(
                "encoder expects [B, {}, L] input, got {shape:?}",
                self.config.input_channels
            )));
        }
        let mut h = x;
        for block in &self.blocks {
            h = block.conv.forward(g, store, h)?;
            h = block.norm.forward(g, store, h, train)?;
            h = g.relu(h);
            h = g.max_pool1d(h, self.config.pool)?;
        }
        let (b, d, t) = {
            let s = g.shape(h);
            (s[0], s[1], s[2])
        };
        h = g.permute(h, &[0, 2, 1])?;
        let pe = sinusoidal_encoding::<T>(t, d);
        let pe = Tensor::from_fn(&[b, t, d], |i| pe.data()[i % (t * d)]);
        h = g.add_const(h, &pe)?;
        for layer in &self.layers {
            h = layer.forward(g, store, h)?;
        }
        let pooled = g.mean_axis(h, 1)?;
        let features = self.fc.forward(g, store, pooled)?;
        let act = g.relu(features);
        let projections = self.head.forward(g, store, act)?;
        Ok(EncoderOutput { features, projections })
    }
}

/// Encoder together with its weights.
pub struct Model {
    pub encoder: Encoder,
    pub store: ParamStore<f32>,
}

impl Model {
    pub fn new(config: &EncoderConfig, frame_len: usize, seed: u64) -> Result<Self> {
        config.validate(frame_len)?;
        let mut store = ParamStore::new();
        let encoder = Encoder::new(config, &mut store, seed)?;
        Ok(Self { encoder, store })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        Ok(checkpoint::save(&self.store, path)?)
    }

    /// Builds the architecture from `config` and loads weights from `path`.
    pub fn load(config: &EncoderConfig, frame_len: usize, path: &Path) -> Result<Self> {
        let mut model = Self::new(config, frame_len, 0)?;
        checkpoint::load_into(&mut model.store, path)?;
        Ok(model)
    }
}
