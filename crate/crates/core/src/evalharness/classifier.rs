use rand::seq::SliceRandom;
use rand::SeedableRng;

use super::{Backbone, EvalNetConfig};
use crate::error::{Error, Result};
use crate::neuralcore::{
    bce_with_logits, channels_to_time, positional_encoding, AdamConfig, AdamState, EncoderCache, Linear, Parameter, Rng,
    Tensor,
};

/// Real (label 1) and generated (label 0) sequences with a balanced split.
#[derive(Clone, Debug)]
pub struct LabeledSet {
    /// `N×F×S`, real rows first.
    pub data: Tensor,
    pub labels: Vec<f64>,
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

impl LabeledSet {
    fn sequence(&self, i: usize) -> Tensor {
        let s = self.data.shape();
        let block = s[1] * s[2];
        channels_to_time(&self.data.data()[i * block..(i + 1) * block], s[1], s[2])
    }
}

/// Draws the same number of rows from both sets and holds out a fifth of
/// each class for testing.
pub fn build_labeled_set(real: &Tensor, fake: &Tensor, seed: u64) -> Result<LabeledSet> {
    let (rs, fs) = (real.shape(), fake.shape());
    if rs.len() != 3 || rs[1..] != fs[1..] {
        return Err(Error::shape(format!("real {rs:?} and generated {fs:?} arrays differ in layout")));
    }
    let n = rs[0].min(fs[0]);
    if n < 2 {
        return Err(Error::invalid(format!(
            "need at least two sequences per class, got {} real and {} generated",
            rs[0], fs[0]
        )));
    }
    let mut rng = Rng::seed_from_u64(seed);
    let block = rs[1] * rs[2];
    let n_test = ((n as f64 * 0.2).round() as usize).clamp(1, n - 1);
    let mut data = Vec::with_capacity(2 * n * block);
    let mut labels = Vec::with_capacity(2 * n);
    let mut train = Vec::new();
    let mut test = Vec::new();
    for (src, label) in [(real, 1.0), (fake, 0.0)] {
        let mut rows: Vec<usize> = (0..src.shape()[0]).collect();
        rows.shuffle(&mut rng);
        for (k, &r) in rows[..n].iter().enumerate() {
            let idx = labels.len();
            data.extend_from_slice(&src.data()[r * block..(r + 1) * block]);
            labels.push(label);
            if k < n_test {
                test.push(idx);
            } else {
                train.push(idx);
            }
        }
    }
    Ok(LabeledSet {
        data: Tensor::from_vec(&[2 * n, rs[1], rs[2]], data)?,
        labels,
        train,
        test,
    })
}

/// Encoder with a learned classification token prepended to the sequence;
/// the logit is read from that token's final representation.
#[derive(Clone, Debug)]
pub struct Discriminator {
    backbone: Backbone,
    cls: Parameter,
    head: Linear,
    pos: Tensor,
}

struct ClsCache {
    x: Tensor,
    layers: Vec<EncoderCache>,
    z0: Tensor,
}

impl Discriminator {
    pub fn new(features: usize, steps: usize, cfg: &EvalNetConfig, rng: &mut Rng) -> Result<Self> {
        cfg.validate()?;
        let backbone = Backbone::new("disc", features, cfg, rng)?;
        let cls = Parameter::new("disc.cls".into(), crate::neuralcore::glorot_uniform(1, cfg.hidden, rng));
        let head = Linear::new("disc.head", cfg.hidden, 1, rng);
        Ok(Discriminator {
            backbone,
            cls,
            head,
            pos: positional_encoding(steps + 1, cfg.hidden),
        })
    }

    fn params_mut(&mut self) -> Vec<&mut Parameter> {
        let mut out = self.backbone.params_mut();
        out.push(&mut self.cls);
        out.extend(self.head.params_mut());
        out
    }

    fn forward(&self, x: &Tensor) -> Result<(f64, ClsCache)> {
        let e = self.backbone.embed.forward(x)?;
        let d = e.last_dim();
        let mut h0 = Vec::with_capacity(e.len() + d);
        h0.extend_from_slice(self.cls.value.data());
        h0.extend_from_slice(e.data());
        let mut h0 = Tensor::from_vec(&[x.rows() + 1, d], h0)?;
        h0.add_assign(&self.pos);
        let (h, layers) = self.backbone.encode(h0)?;
        let z0 = Tensor::from_vec(&[1, d], h.data()[..d].to_vec())?;
        let logit = self.head.forward(&z0)?.data()[0];
        Ok((
            logit,
            ClsCache {
                x: x.clone(),
                layers,
                z0,
            },
        ))
    }

    fn backward(&mut self, cache: &ClsCache, d_logit: f64) -> Result<()> {
        let dz0 = self.head.backward(&cache.z0, &Tensor::from_vec(&[1, 1], vec![d_logit])?);
        let d = dz0.len();
        let rows = cache.x.rows() + 1;
        let mut dh = Tensor::zeros(&[rows, d]);
        dh.data_mut()[..d].copy_from_slice(dz0.data());
        let dh0 = self.backbone.encode_backward(&cache.layers, dh);
        for (g, v) in self.cls.grad.data_mut().iter_mut().zip(&dh0.data()[..d]) {
            *g += v;
        }
        let de = Tensor::from_vec(&[rows - 1, d], dh0.data()[d..].to_vec())?;
        self.backbone.embed.backward(&cache.x, &de);
        Ok(())
    }

    /// Logit of the "real" class for a time-major `[S, F]` sequence.
    pub fn logit(&self, x: &Tensor) -> Result<f64> {
        Ok(self.forward(x)?.0)
    }

    pub fn accuracy(&self, set: &LabeledSet, rows: &[usize]) -> Result<f64> {
        if rows.is_empty() {
            return Err(Error::invalid("accuracy over an empty set"));
        }
        let mut correct = 0usize;
        for &i in rows {
            let predicted = if self.logit(&set.sequence(i))? > 0.0 { 1.0 } else { 0.0 };
            if predicted == set.labels[i] {
                correct += 1;
            }
        }
        Ok(correct as f64 / rows.len() as f64)
    }
}

/// Cross-entropy training with Adam on the training split.
pub fn train_discriminator(set: &LabeledSet, cfg: &EvalNetConfig, seed: u64) -> Result<Discriminator> {
    let s = set.data.shape();
    let mut rng = Rng::seed_from_u64(seed);
    let mut disc = Discriminator::new(s[1], s[2], cfg, &mut rng)?;
    let mut adam = AdamState::new(AdamConfig {
        lr: cfg.lr,
        ..AdamConfig::default()
    });
    adam.init(&disc.params_mut());
    let mut rows = set.train.clone();
    for epoch in 1..=cfg.epochs {
        rows.shuffle(&mut rng);
        for (bi, batch) in rows.chunks(cfg.batch_size).enumerate() {
            for p in disc.params_mut() {
                p.zero_grad();
            }
            let mut outs = Vec::with_capacity(batch.len());
            for &i in batch {
                outs.push(disc.forward(&set.sequence(i))?);
            }
            let logits: Vec<f64> = outs.iter().map(|o| o.0).collect();
            let labels: Vec<f64> = batch.iter().map(|&i| set.labels[i]).collect();
            let (loss, grad) = bce_with_logits(&logits, &labels);
            if !loss.is_finite() {
                return Err(Error::numerical(format!(
                    "discriminator loss not finite at epoch {epoch}, batch {}",
                    bi + 1
                )));
            }
            for ((_, cache), g) in outs.iter().zip(grad) {
                disc.backward(cache, g)?;
            }
            adam.step(&mut disc.params_mut())?;
        }
    }
    Ok(disc)
}

/// `|½ − accuracy|` on the held-out split.
pub fn discriminative_score(disc: &Discriminator, set: &LabeledSet) -> Result<f64> {
    Ok((0.5 - disc.accuracy(set, &set.test)?).abs())
}

#[derive(Clone, Debug, PartialEq)]
pub struct DsResult {
    pub accuracy: f64,
    pub score: f64,
}

/// Builds the labelled split, trains a fresh discriminator and scores it.
pub fn discriminative_score_run(real: &Tensor, fake: &Tensor, cfg: &EvalNetConfig, seed: u64) -> Result<DsResult> {
    let set = build_labeled_set(real, fake, seed)?;
    let disc = train_discriminator(&set, cfg, seed.wrapping_add(1))?;
    let accuracy = disc.accuracy(&set, &set.test)?;
    Ok(DsResult {
        accuracy,
        score: (0.5 - accuracy).abs(),
    })
}
