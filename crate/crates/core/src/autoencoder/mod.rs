//! Sequence autoencoder: per-timestep feature embedding with sinusoidal
//! positions, a stack of full self-attention encoder layers, and a
//! position-wise MLP decoder that emits every timestep at once.

mod checkpoint;
mod train;

pub use checkpoint::{load_model, model_from_bytes, model_to_bytes, save_model, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use train::{reconstruction_rmse, train, EpochRecord, TrainConfig, TrainOutcome};

use rand::SeedableRng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::neuralcore::{
    channels_to_time, positional_encoding, relu, relu_backward, time_to_channels, EncoderCache, EncoderLayer, Linear,
    Parameter, Rng, Tensor,
};
use crate::trajdata::NormStats;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub layers: usize,
    pub hidden: usize,
    pub heads: usize,
    pub ff: usize,
    pub dropout: f64,
    pub features: usize,
    pub max_len: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            layers: 3,
            hidden: 128,
            heads: 4,
            ff: 512,
            dropout: 0.2,
            features: 3,
            max_len: 271,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden == 0 || self.heads == 0 || self.ff == 0 || self.features == 0 || self.max_len == 0 {
            return Err(Error::invalid(format!("model dimensions must be positive: {self:?}")));
        }
        if !self.hidden.is_multiple_of(self.heads) {
            return Err(Error::invalid(format!(
                "hidden dimension {} not divisible by {} heads",
                self.hidden, self.heads
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::invalid(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct AutoencoderModel {
    pub config: ModelConfig,
    pub embed: Linear,
    pub pos: Tensor,
    pub encoder: Vec<EncoderLayer>,
    pub dec_hidden: Linear,
    pub dec_out: Linear,
    pub norm: NormStats,
}

/// Saved activations of one sequence's forward pass.
pub struct SeqCache {
    x: Tensor,
    layers: Vec<EncoderCache>,
    z: Tensor,
    dec_pre: Tensor,
    dec_act: Tensor,
}

impl AutoencoderModel {
    pub fn new(config: ModelConfig, norm: NormStats, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = Rng::seed_from_u64(seed);
        let d = config.hidden;
        let embed = Linear::new("embed", config.features, d, &mut rng);
        let encoder = (0..config.layers)
            .map(|l| EncoderLayer::new(&format!("encoder.{l}"), d, config.heads, config.ff, config.dropout, &mut rng))
            .collect::<Result<Vec<_>>>()?;
        let dec_hidden = Linear::new("decoder.hidden", d, config.ff, &mut rng);
        let dec_out = Linear::new("decoder.out", config.ff, config.features, &mut rng);
        Ok(AutoencoderModel {
            pos: positional_encoding(config.max_len, d),
            config,
            embed,
            encoder,
            dec_hidden,
            dec_out,
            norm,
        })
    }

    pub fn params(&self) -> Vec<&Parameter> {
        let mut out = self.embed.params();
        for l in &self.encoder {
            out.extend(l.params());
        }
        out.extend(self.dec_hidden.params());
        out.extend(self.dec_out.params());
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Parameter> {
        let mut out = self.embed.params_mut();
        for l in &mut self.encoder {
            out.extend(l.params_mut());
        }
        out.extend(self.dec_hidden.params_mut());
        out.extend(self.dec_out.params_mut());
        out
    }

    pub fn zero_grad(&mut self) {
        for p in self.params_mut() {
            p.zero_grad();
        }
    }

    /// Short content hash of configuration and parameters.
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        h.update(format!("{:?}", self.config).as_bytes());
        for p in self.params() {
            h.update(p.name.as_bytes());
            for v in p.value.data() {
                h.update(v.to_le_bytes());
            }
        }
        hex::encode(&h.finalize()[..8])
    }

    /// Human-readable identity used to tie latent models to checkpoints.
    pub fn provenance(&self) -> String {
        format!(
            "ae:{} D={} S={} F={}",
            self.fingerprint(),
            self.config.hidden,
            self.config.max_len,
            self.config.features
        )
    }

    fn check_input(&self, x: &Tensor, channels: usize, what: &str) -> Result<usize> {
        let s = x.shape();
        if s.len() != 3 || s[1] != channels || s[2] != self.config.max_len {
            return Err(Error::shape(format!(
                "{what}: expected B×{channels}×{}, got {s:?}",
                self.config.max_len
            )));
        }
        Ok(s[0])
    }

    fn embed_seq(&self, x: &Tensor) -> Result<Tensor> {
        let mut e = self.embed.forward(x)?;
        e.add_assign(&self.pos);
        Ok(e)
    }

    pub(crate) fn encode_seq(&self, x: &Tensor, valid: Option<usize>, mut rng: Option<&mut Rng>) -> Result<(Tensor, Vec<EncoderCache>)> {
        let mut h = self.embed_seq(x)?;
        let mut caches = Vec::with_capacity(self.encoder.len());
        for layer in &self.encoder {
            let (out, cache) = layer.forward(&h, valid, rng.as_deref_mut())?;
            caches.push(cache);
            h = out;
        }
        Ok((h, caches))
    }

    pub(crate) fn decode_seq(&self, z: &Tensor) -> Result<(Tensor, Tensor, Tensor)> {
        let pre = self.dec_hidden.forward(z)?;
        let act = relu(&pre);
        let out = self.dec_out.forward(&act)?;
        Ok((out, pre, act))
    }

    /// Full forward pass of one time-major `[S, F]` sequence, keeping activations.
    pub fn forward_seq(&self, x: &Tensor, valid: Option<usize>, rng: Option<&mut Rng>) -> Result<(Tensor, SeqCache)> {
        let (z, layers) = self.encode_seq(x, valid, rng)?;
        let (out, dec_pre, dec_act) = self.decode_seq(&z)?;
        Ok((
            out,
            SeqCache {
                x: x.clone(),
                layers,
                z,
                dec_pre,
                dec_act,
            },
        ))
    }

    /// Accumulates parameter gradients for `d_out = ∂loss/∂x̃` of one sequence.
    pub fn backward_seq(&mut self, cache: &SeqCache, d_out: &Tensor) {
        let mut d_act = self.dec_out.backward(&cache.dec_act, d_out);
        relu_backward(&cache.dec_pre, &mut d_act);
        let mut dh = self.dec_hidden.backward(&cache.z, &d_act);
        for (layer, c) in self.encoder.iter_mut().zip(&cache.layers).rev() {
            dh = layer.backward(c, &dh);
        }
        self.embed.backward(&cache.x, &dh);
    }

    /// Per-timestep affine embedding plus positions: `B×F×S → B×D×S`.
    pub fn embed(&self, x: &Tensor) -> Result<Tensor> {
        let b = self.check_input(x, self.config.features, "embed")?;
        self.map_batch(x, b, self.config.features, self.config.hidden, |seq, _| self.embed_seq(seq))
    }

    /// Latent sequences `B×D×S`. `lengths` masks padded keys; dropout runs
    /// only when `rng` is supplied.
    pub fn encode(&self, x: &Tensor, lengths: Option<&[usize]>, mut rng: Option<&mut Rng>) -> Result<Tensor> {
        let b = self.check_input(x, self.config.features, "encode")?;
        if let Some(l) = lengths {
            if l.len() != b {
                return Err(Error::shape(format!("{} lengths for a batch of {b}", l.len())));
            }
        }
        self.map_batch(x, b, self.config.features, self.config.hidden, |seq, i| {
            Ok(self.encode_seq(seq, lengths.map(|l| l[i]), rng.as_deref_mut())?.0)
        })
    }

    /// Position-wise MLP decoding `B×D×S → B×F×S`.
    pub fn decode(&self, z: &Tensor) -> Result<Tensor> {
        let b = self.check_input(z, self.config.hidden, "decode")?;
        self.map_batch(z, b, self.config.hidden, self.config.features, |seq, _| Ok(self.decode_seq(seq)?.0))
    }

    /// `decode(encode(x))` in evaluation mode.
    pub fn reconstruct(&self, x: &Tensor, lengths: Option<&[usize]>) -> Result<Tensor> {
        self.decode(&self.encode(x, lengths, None)?)
    }

    fn map_batch(
        &self,
        x: &Tensor,
        b: usize,
        c_in: usize,
        c_out: usize,
        mut f: impl FnMut(&Tensor, usize) -> Result<Tensor>,
    ) -> Result<Tensor> {
        let s = self.config.max_len;
        let mut out = Vec::with_capacity(b * c_out * s);
        for i in 0..b {
            let seq = channels_to_time(&x.data()[i * c_in * s..(i + 1) * c_in * s], c_in, s);
            let y = f(&seq, i)?;
            time_to_channels(&y, &mut out);
        }
        Tensor::from_vec(&[b, c_out, s], out)
    }
}
