use rand::seq::SliceRandom;
use rand::SeedableRng;

use super::{Backbone, EvalNetConfig};
use crate::error::{Error, Result};
use crate::neuralcore::{
    channels_to_time, positional_encoding, time_to_channels, AdamConfig, AdamState, EncoderCache, Linear, Parameter, Rng,
    Tensor,
};

/// Aligned past/future windows of `W` points each, `Q×F×W`.
#[derive(Clone, Debug, PartialEq)]
pub struct WindowPairSet {
    pub past: Tensor,
    pub future: Tensor,
    pub window: usize,
}

impl WindowPairSet {
    pub fn len(&self) -> usize {
        self.past.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn features(&self) -> usize {
        self.past.shape()[1]
    }

    fn block(&self) -> usize {
        self.features() * self.window
    }

    fn past_seq(&self, q: usize) -> Tensor {
        let b = self.block();
        channels_to_time(&self.past.data()[q * b..(q + 1) * b], self.features(), self.window)
    }

    fn future_seq(&self, q: usize) -> Tensor {
        let b = self.block();
        channels_to_time(&self.future.data()[q * b..(q + 1) * b], self.features(), self.window)
    }

    /// At most `max` pairs, drawn without replacement in a seeded order.
    pub fn subsample(&self, max: usize, seed: u64) -> WindowPairSet {
        if self.len() <= max {
            return self.clone();
        }
        let mut rows: Vec<usize> = (0..self.len()).collect();
        rows.shuffle(&mut Rng::seed_from_u64(seed));
        rows.truncate(max);
        rows.sort_unstable();
        let b = self.block();
        let pick = |t: &Tensor| {
            let mut v = Vec::with_capacity(max * b);
            for &r in &rows {
                v.extend_from_slice(&t.data()[r * b..(r + 1) * b]);
            }
            Tensor::from_vec(&[max, self.features(), self.window], v).unwrap()
        };
        WindowPairSet {
            past: pick(&self.past),
            future: pick(&self.future),
            window: self.window,
        }
    }
}

/// Every `(past, future)` pair of `w`-point windows lying inside the valid
/// prefix of each sequence, advancing by `stride`.
pub fn make_sliding_pairs(data: &Tensor, lengths: &[usize], w: usize, stride: usize) -> Result<WindowPairSet> {
    let s = data.shape();
    if s.len() != 3 || lengths.len() != s[0] {
        return Err(Error::shape(format!("expected N×F×S data with N lengths, got {s:?} and {}", lengths.len())));
    }
    if w == 0 || stride == 0 {
        return Err(Error::invalid("window and stride must be positive"));
    }
    let (f, steps) = (s[1], s[2]);
    let mut past = Vec::new();
    let mut future = Vec::new();
    let mut q = 0;
    for (i, &len) in lengths.iter().enumerate() {
        let len = len.min(steps);
        let mut start = 0;
        while start + 2 * w <= len {
            for c in 0..f {
                let row = &data.data()[(i * f + c) * steps..(i * f + c + 1) * steps];
                past.extend_from_slice(&row[start..start + w]);
            }
            for c in 0..f {
                let row = &data.data()[(i * f + c) * steps..(i * f + c + 1) * steps];
                future.extend_from_slice(&row[start + w..start + 2 * w]);
            }
            q += 1;
            start += stride;
        }
    }
    if q == 0 {
        return Err(Error::invalid(format!("no sequence has the {} valid points needed for a pair", 2 * w)));
    }
    Ok(WindowPairSet {
        past: Tensor::from_vec(&[q, f, w], past)?,
        future: Tensor::from_vec(&[q, f, w], future)?,
        window: w,
    })
}

/// Encoder over the past window and a position-wise head that emits the
/// whole future window at once, as offsets from the last observed frame.
#[derive(Clone, Debug)]
pub struct Predictor {
    backbone: Backbone,
    head: Linear,
    pos: Tensor,
}

struct PredCache {
    x: Tensor,
    layers: Vec<EncoderCache>,
    h: Tensor,
}

impl Predictor {
    pub fn new(features: usize, window: usize, cfg: &EvalNetConfig, rng: &mut Rng) -> Result<Self> {
        cfg.validate()?;
        let backbone = Backbone::new("pred", features, cfg, rng)?;
        // a zero head starts from the persistence forecast
        let mut head = Linear::new("pred.head", cfg.hidden, features, rng);
        head.weight.value.fill(0.0);
        Ok(Predictor {
            backbone,
            head,
            pos: positional_encoding(window, cfg.hidden),
        })
    }

    fn params_mut(&mut self) -> Vec<&mut Parameter> {
        let mut out = self.backbone.params_mut();
        out.extend(self.head.params_mut());
        out
    }

    fn forward(&self, x: &Tensor) -> Result<(Tensor, PredCache)> {
        let mut e = self.backbone.embed.forward(x)?;
        if e.shape() != self.pos.shape() {
            return Err(Error::shape(format!(
                "predictor built for {} points, got {}",
                self.pos.rows(),
                x.rows()
            )));
        }
        e.add_assign(&self.pos);
        let (h, layers) = self.backbone.encode(e)?;
        let mut out = self.head.forward(&h)?;
        let f = x.last_dim();
        let last = &x.data()[x.len() - f..];
        for row in out.data_mut().chunks_mut(f) {
            for (o, l) in row.iter_mut().zip(last) {
                *o += l;
            }
        }
        Ok((
            out,
            PredCache {
                x: x.clone(),
                layers,
                h,
            },
        ))
    }

    fn backward(&mut self, cache: &PredCache, d_out: &Tensor) {
        let dh = self.head.backward(&cache.h, d_out);
        let de = self.backbone.encode_backward(&cache.layers, dh);
        self.backbone.embed.backward(&cache.x, &de);
    }

    /// Future windows `Q×F×W` for past windows `Q×F×W`.
    pub fn predict(&self, past: &Tensor) -> Result<Tensor> {
        let s = past.shape();
        if s.len() != 3 {
            return Err(Error::shape(format!("expected Q×F×W windows, got {s:?}")));
        }
        let b = s[1] * s[2];
        let mut out = Vec::with_capacity(past.len());
        for q in 0..s[0] {
            let x = channels_to_time(&past.data()[q * b..(q + 1) * b], s[1], s[2]);
            time_to_channels(&self.forward(&x)?.0, &mut out);
        }
        Tensor::from_vec(s, out)
    }
}

/// L2 training on `(past, future)` pairs with Adam.
pub fn train_predictor(pairs: &WindowPairSet, cfg: &EvalNetConfig, seed: u64) -> Result<Predictor> {
    if pairs.is_empty() {
        return Err(Error::invalid("no training pairs"));
    }
    let mut rng = Rng::seed_from_u64(seed);
    let mut model = Predictor::new(pairs.features(), pairs.window, cfg, &mut rng)?;
    let mut adam = AdamState::new(AdamConfig {
        lr: cfg.lr,
        ..AdamConfig::default()
    });
    adam.init(&model.params_mut());
    let mut rows: Vec<usize> = (0..pairs.len()).collect();
    for epoch in 1..=cfg.epochs {
        rows.shuffle(&mut rng);
        for (bi, batch) in rows.chunks(cfg.batch_size).enumerate() {
            for p in model.params_mut() {
                p.zero_grad();
            }
            let scale = 2.0 / batch.len() as f64;
            for &q in batch {
                let (out, cache) = model.forward(&pairs.past_seq(q))?;
                let target = pairs.future_seq(q);
                let mut g = out;
                let mut loss = 0.0;
                for (gv, t) in g.data_mut().iter_mut().zip(target.data()) {
                    let d = *gv - t;
                    loss += d * d;
                    *gv = scale * d;
                }
                if !loss.is_finite() {
                    return Err(Error::numerical(format!(
                        "predictor loss not finite at epoch {epoch}, batch {}",
                        bi + 1
                    )));
                }
                model.backward(&cache, &g);
            }
            adam.step(&mut model.params_mut())?;
        }
    }
    Ok(model)
}

/// Mean absolute difference over every element.
pub fn mae(pred: &Tensor, truth: &Tensor) -> Result<f64> {
    if pred.shape() != truth.shape() {
        return Err(Error::shape(format!("{:?} vs {:?}", pred.shape(), truth.shape())));
    }
    if pred.is_empty() {
        return Err(Error::invalid("mean absolute error of nothing"));
    }
    Ok(pred.data().iter().zip(truth.data()).map(|(a, b)| (a - b).abs()).sum::<f64>() / pred.len() as f64)
}

/// Mean absolute difference per feature of `Q×F×W` arrays.
pub fn mae_per_feature(pred: &Tensor, truth: &Tensor) -> Result<Vec<f64>> {
    mae(pred, truth)?;
    let s = pred.shape();
    let (f, w) = (s[1], s[2]);
    let mut sums = vec![0.0; f];
    for (k, (a, b)) in pred.data().iter().zip(truth.data()).enumerate() {
        sums[(k / w) % f] += (a - b).abs();
    }
    let count = (s[0] * w) as f64;
    Ok(sums.into_iter().map(|v| v / count).collect())
}

/// MAE of the predictor's future windows against the true ones.
pub fn predictive_score(model: &Predictor, pairs: &WindowPairSet) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::invalid("no evaluation pairs"));
    }
    mae(&model.predict(&pairs.past)?, &pairs.future)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neuralcore::grad_check;

    fn brute_force_count(len: usize, w: usize, stride: usize) -> usize {
        (0..len).filter(|s| s % stride == 0 && s + 2 * w <= len).count()
    }

    fn ramp(lengths: &[usize], steps: usize) -> Tensor {
        let mut v = Vec::new();
        for (i, _) in lengths.iter().enumerate() {
            for c in 0..3 {
                for j in 0..steps {
                    v.push((i * 1000 + c * 100 + j) as f64);
                }
            }
        }
        Tensor::from_vec(&[lengths.len(), 3, steps], v).unwrap()
    }

    #[test]
    fn pair_counts_at_boundaries() {
        let lengths = [40, 42];
        let pairs = make_sliding_pairs(&ramp(&lengths, 50), &lengths, 20, 1).unwrap();
        assert_eq!(pairs.len(), 1 + 3);
        for n in 30..60 {
            for stride in 1..4 {
                let got = make_sliding_pairs(&ramp(&[n], 60), &[n], 10, stride).map(|p| p.len()).unwrap_or(0);
                assert_eq!(got, brute_force_count(n, 10, stride), "n={n} stride={stride}");
            }
            let expected = (n + 1).saturating_sub(20);
            assert_eq!(make_sliding_pairs(&ramp(&[n], 60), &[n], 10, 1).map(|p| p.len()).unwrap_or(0), expected);
        }
    }

    #[test]
    fn pair_contents_are_contiguous() {
        let lengths = [42];
        let pairs = make_sliding_pairs(&ramp(&lengths, 42), &lengths, 20, 1).unwrap();
        // pair 2, feature 1: past starts at j = 2, future at j = 22
        let b = 3 * 20;
        assert_eq!(pairs.past.data()[2 * b + 20], 102.0);
        assert_eq!(pairs.future.data()[2 * b + 20], 122.0);
        assert_eq!(pairs.future.data()[2 * b + 20 + 19], 141.0);
    }

    #[test]
    fn short_sequences_are_an_error() {
        assert!(make_sliding_pairs(&ramp(&[10], 10), &[10], 20, 1).is_err());
    }

    #[test]
    fn mae_definition_and_translation() {
        let truth = Tensor::from_vec(&[1, 2, 3], vec![0.1, 0.2, 0.3, 0.4, 0.5, 0.6]).unwrap();
        let mut pred = truth.clone();
        pred.data_mut().iter_mut().for_each(|v| *v += 0.1);
        assert!((mae(&pred, &truth).unwrap() - 0.1).abs() < 1e-15);
        assert_eq!(mae(&truth, &truth).unwrap(), 0.0);
        let shift = |t: &Tensor| {
            let mut t = t.clone();
            t.data_mut().iter_mut().for_each(|v| *v += 3.0);
            t
        };
        assert!((mae(&shift(&pred), &shift(&truth)).unwrap() - 0.1).abs() < 1e-12);
        let per = mae_per_feature(&pred, &truth).unwrap();
        assert!(per.iter().all(|v| (v - 0.1).abs() < 1e-15));
    }

    #[test]
    fn constant_trajectories_are_learned() {
        let n = 8;
        let steps = 12;
        let mut v = Vec::new();
        for i in 0..n {
            for c in 0..3 {
                v.extend(std::iter::repeat_n(0.1 * i as f64 + 0.05 * c as f64, steps));
            }
        }
        let data = Tensor::from_vec(&[n, 3, steps], v).unwrap();
        let pairs = make_sliding_pairs(&data, &vec![steps; n], 4, 1).unwrap();
        let cfg = EvalNetConfig {
            layers: 1,
            hidden: 8,
            heads: 2,
            ff: 16,
            epochs: 40,
            batch_size: 8,
            lr: 3e-3,
        };
        let model = train_predictor(&pairs, &cfg, 1).unwrap();
        let score = predictive_score(&model, &pairs).unwrap();
        assert!(score < 1e-3, "{score}");
        let mut zeroed = model.clone();
        zeroed.head.weight.value.fill(0.0);
        zeroed.head.bias.value.fill(0.0);
        assert!(predictive_score(&zeroed, &pairs).unwrap() < 1e-12);
    }

    #[test]
    fn deterministic_under_seed() {
        let lengths = [30, 28];
        let data = ramp(&lengths, 30);
        let mut d = data.clone();
        d.data_mut().iter_mut().for_each(|v| *v = (*v * 0.01).sin());
        let pairs = make_sliding_pairs(&d, &lengths, 5, 2).unwrap();
        let cfg = EvalNetConfig {
            layers: 1,
            hidden: 8,
            heads: 2,
            ff: 16,
            epochs: 2,
            batch_size: 4,
            lr: 1e-3,
        };
        let a = predictive_score(&train_predictor(&pairs, &cfg, 3).unwrap(), &pairs).unwrap();
        let b = predictive_score(&train_predictor(&pairs, &cfg, 3).unwrap(), &pairs).unwrap();
        assert_eq!(a, b);
        assert!(a.is_finite());
    }

    #[test]
    fn subsample_is_seeded_and_bounded() {
        let lengths = [42, 45];
        let pairs = make_sliding_pairs(&ramp(&lengths, 45), &lengths, 20, 1).unwrap();
        let a = pairs.subsample(4, 1);
        assert_eq!(a.len(), 4);
        assert_eq!(a, pairs.subsample(4, 1));
        assert_eq!(pairs.subsample(100, 1), pairs);
    }

    #[test]
    fn gradients_match_finite_differences() {
        let cfg = EvalNetConfig {
            layers: 1,
            hidden: 8,
            heads: 2,
            ff: 12,
            ..EvalNetConfig::default()
        };
        let mut model = Predictor::new(3, 4, &cfg, &mut Rng::seed_from_u64(2)).unwrap();
        model.head.weight.value = crate::neuralcore::glorot_uniform(8, 3, &mut Rng::seed_from_u64(5));
        let x = Tensor::from_vec(&[4, 3], (0..12).map(|i| (i as f64 * 0.9).sin()).collect()).unwrap();
        let target = Tensor::from_vec(&[4, 3], (0..12).map(|i| (i as f64 * 0.4).cos()).collect()).unwrap();
        let loss = |m: &Predictor| -> f64 {
            let (out, _) = m.forward(&x).unwrap();
            out.data().iter().zip(target.data()).map(|(a, b)| (a - b) * (a - b)).sum()
        };
        let (out, cache) = model.forward(&x).unwrap();
        let mut g = out;
        for (gv, t) in g.data_mut().iter_mut().zip(target.data()) {
            *gv = 2.0 * (*gv - t);
        }
        for p in model.params_mut() {
            p.zero_grad();
        }
        model.backward(&cache, &g);
        let base = model.clone();
        let n = base.clone().params_mut().len();
        for pi in 0..n {
            let (values, grads, name) = {
                let mut b = base.clone();
                let p = &mut b.params_mut()[pi];
                (p.value.data().to_vec(), p.grad.data().to_vec(), p.name.clone())
            };
            let rep = grad_check(
                |v| {
                    let mut m = base.clone();
                    m.params_mut()[pi].value.data_mut().copy_from_slice(v);
                    loss(&m)
                },
                &values,
                &grads,
                1e-5,
            );
            // key biases have an exactly zero gradient, so allow round-off there
            assert!(rep.max_rel_error < 1e-5 || rep.max_abs_error < 1e-9, "{name}: {rep:?}");
        }
    }
}
