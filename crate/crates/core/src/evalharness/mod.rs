//! Fidelity and utility measures for generated trajectory sets.

mod classifier;
mod features;
mod predictor;
mod report;

pub use classifier::{
    build_labeled_set, discriminative_score, discriminative_score_run, train_discriminator, Discriminator, DsResult,
    LabeledSet,
};
pub use features::{export_embedding_features, write_feature_csv, FeatureTables};
pub use predictor::{
    make_sliding_pairs, mae, mae_per_feature, predictive_score, train_predictor, Predictor,
    WindowPairSet,
};
pub use report::EvalReport;

use serde::{Deserialize, Serialize};

use crate::airsim::{min_distance_to_track_nm, AirspaceSpec};
use crate::error::{Error, Result};
use crate::neuralcore::{EncoderCache, EncoderLayer, Linear, Parameter, Rng, Tensor};
use crate::trajdata::Trajectory;

/// Architecture and budget of the evaluation networks.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalNetConfig {
    pub layers: usize,
    pub hidden: usize,
    pub heads: usize,
    pub ff: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
}

impl Default for EvalNetConfig {
    fn default() -> Self {
        EvalNetConfig {
            layers: 2,
            hidden: 64,
            heads: 4,
            ff: 128,
            epochs: 50,
            batch_size: 32,
            lr: 1e-3,
        }
    }
}

impl EvalNetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden == 0 || self.heads == 0 || !self.hidden.is_multiple_of(self.heads) || self.ff == 0 {
            return Err(Error::invalid(format!("evaluation network dimensions invalid: {self:?}")));
        }
        if self.epochs == 0 || self.batch_size == 0 || !(self.lr > 0.0) {
            return Err(Error::invalid("evaluation epochs, batch size and learning rate must be positive"));
        }
        Ok(())
    }
}

/// Per-frame embedding followed by an encoder stack; shared by the
/// discriminator and the predictor.
#[derive(Clone, Debug)]
pub(crate) struct Backbone {
    pub embed: Linear,
    pub encoder: Vec<EncoderLayer>,
}

impl Backbone {
    pub fn new(name: &str, features: usize, cfg: &EvalNetConfig, rng: &mut Rng) -> Result<Self> {
        let embed = Linear::new(&format!("{name}.embed"), features, cfg.hidden, rng);
        let encoder = (0..cfg.layers)
            .map(|l| EncoderLayer::new(&format!("{name}.encoder.{l}"), cfg.hidden, cfg.heads, cfg.ff, 0.0, rng))
            .collect::<Result<Vec<_>>>()?;
        Ok(Backbone { embed, encoder })
    }

    pub fn encode(&self, h0: Tensor) -> Result<(Tensor, Vec<EncoderCache>)> {
        let mut h = h0;
        let mut caches = Vec::with_capacity(self.encoder.len());
        for layer in &self.encoder {
            let (out, c) = layer.forward(&h, None, None)?;
            caches.push(c);
            h = out;
        }
        Ok((h, caches))
    }

    pub fn encode_backward(&mut self, caches: &[EncoderCache], dh: Tensor) -> Tensor {
        let mut dh = dh;
        for (layer, c) in self.encoder.iter_mut().zip(caches).rev() {
            dh = layer.backward(c, &dh);
        }
        dh
    }

    pub fn params_mut(&mut self) -> Vec<&mut Parameter> {
        let mut out = self.embed.params_mut();
        for l in &mut self.encoder {
            out.extend(l.params_mut());
        }
        out
    }
}

/// `|s₂ − s₁| / s₂`, the improvement of score `s1` over reference `s2`.
pub fn relative_improvement(s1: f64, s2: f64) -> Result<f64> {
    if s2 == 0.0 {
        return Err(Error::invalid("relative improvement undefined for a zero reference score"));
    }
    Ok((s2 - s1).abs() / s2)
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConstraintResult {
    pub passed: Vec<bool>,
    pub pass_rate: f64,
}

/// A trajectory passes when its first point lies within `entry_tol` NM of
/// some entry point and its track comes within `faf_tol` NM of the FAF.
pub fn constraint_check(trajs: &[Trajectory], spec: &AirspaceSpec, entry_tol: f64, faf_tol: f64) -> ConstraintResult {
    let frame = spec.frame();
    let passed: Vec<bool> = trajs
        .iter()
        .map(|t| {
            let p = t.points()[0];
            let at_entry = spec
                .entry_points
                .iter()
                .any(|e| frame.distance_nm((p.lat, p.lon), (e[0], e[1])) <= entry_tol);
            at_entry && min_distance_to_track_nm(&frame, t.points(), (spec.faf[0], spec.faf[1])) <= faf_tol
        })
        .collect();
    let pass_rate = if passed.is_empty() {
        0.0
    } else {
        passed.iter().filter(|&&p| p).count() as f64 / passed.len() as f64
    };
    ConstraintResult { passed, pass_rate }
}
