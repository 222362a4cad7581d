use rand::Rng as _;

use super::{Linear, MhaCache, MultiHeadAttention, Parameter, Rng, Tensor};
use crate::error::Result;

pub const LAYER_NORM_EPS: f64 = 1e-9;

#[derive(Clone, Debug)]
pub struct LayerNorm {
    pub gamma: Parameter,
    pub beta: Parameter,
}

#[derive(Clone, Debug)]
pub struct LnCache {
    xhat: Tensor,
    inv_std: Vec<f64>,
}

/// Per-row standardisation, before the affine part of layer norm.
pub fn normalize_rows(x: &Tensor) -> (Tensor, Vec<f64>) {
    let d = x.last_dim();
    let mut xhat = x.clone();
    let mut inv_std = Vec::with_capacity(x.rows());
    for row in xhat.data_mut().chunks_exact_mut(d) {
        let mean = row.iter().sum::<f64>() / d as f64;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
        let is = 1.0 / (var + LAYER_NORM_EPS).sqrt();
        row.iter_mut().for_each(|v| *v = (*v - mean) * is);
        inv_std.push(is);
    }
    (xhat, inv_std)
}

impl LayerNorm {
    pub fn new(name: &str, d: usize) -> Self {
        LayerNorm {
            gamma: Parameter::new(format!("{name}.gamma"), Tensor::full(&[d], 1.0)),
            beta: Parameter::new(format!("{name}.beta"), Tensor::zeros(&[d])),
        }
    }

    pub fn forward(&self, x: &Tensor) -> (Tensor, LnCache) {
        let d = x.last_dim();
        let (xhat, inv_std) = normalize_rows(x);
        let mut y = xhat.clone();
        let (g, b) = (self.gamma.value.data(), self.beta.value.data());
        for row in y.data_mut().chunks_exact_mut(d) {
            for j in 0..d {
                row[j] = row[j] * g[j] + b[j];
            }
        }
        (y, LnCache { xhat, inv_std })
    }

    pub fn backward(&mut self, cache: &LnCache, dy: &Tensor) -> Tensor {
        let d = dy.last_dim();
        let g = self.gamma.value.data().to_vec();
        let mut dx = Tensor::zeros(dy.shape());
        let mut dxhat = vec![0.0; d];
        for (r, (dy_row, xh_row)) in dy
            .data()
            .chunks_exact(d)
            .zip(cache.xhat.data().chunks_exact(d))
            .enumerate()
        {
            let gg = self.gamma.grad.data_mut();
            for j in 0..d {
                gg[j] += dy_row[j] * xh_row[j];
            }
            let gb = self.beta.grad.data_mut();
            for j in 0..d {
                gb[j] += dy_row[j];
            }
            for j in 0..d {
                dxhat[j] = dy_row[j] * g[j];
            }
            let mean_d = dxhat.iter().sum::<f64>() / d as f64;
            let mean_dx = dxhat.iter().zip(xh_row).map(|(a, b)| a * b).sum::<f64>() / d as f64;
            let is = cache.inv_std[r];
            let out = &mut dx.data_mut()[r * d..(r + 1) * d];
            for j in 0..d {
                out[j] = is * (dxhat[j] - mean_d - xh_row[j] * mean_dx);
            }
        }
        dx
    }

    pub fn params(&self) -> Vec<&Parameter> {
        vec![&self.gamma, &self.beta]
    }

    pub fn params_mut(&mut self) -> Vec<&mut Parameter> {
        vec![&mut self.gamma, &mut self.beta]
    }
}

/// Position-wise `D → D_ff → D` block with ReLU.
#[derive(Clone, Debug)]
pub struct FeedForward {
    pub lin1: Linear,
    pub lin2: Linear,
}

#[derive(Clone, Debug)]
pub struct FfnCache {
    x: Tensor,
    pre: Tensor,
    act: Tensor,
}

pub fn relu(x: &Tensor) -> Tensor {
    let mut y = x.clone();
    y.data_mut().iter_mut().for_each(|v| *v = v.max(0.0));
    y
}

pub fn relu_backward(pre: &Tensor, dy: &mut Tensor) {
    for (g, p) in dy.data_mut().iter_mut().zip(pre.data()) {
        if *p <= 0.0 {
            *g = 0.0;
        }
    }
}

impl FeedForward {
    pub fn new(name: &str, d: usize, d_ff: usize, rng: &mut Rng) -> Self {
        FeedForward {
            lin1: Linear::new(&format!("{name}.lin1"), d, d_ff, rng),
            lin2: Linear::new(&format!("{name}.lin2"), d_ff, d, rng),
        }
    }

    pub fn forward(&self, x: &Tensor) -> Result<(Tensor, FfnCache)> {
        let pre = self.lin1.forward(x)?;
        let act = relu(&pre);
        let y = self.lin2.forward(&act)?;
        Ok((
            y,
            FfnCache {
                x: x.clone(),
                pre,
                act,
            },
        ))
    }

    pub fn backward(&mut self, cache: &FfnCache, dy: &Tensor) -> Tensor {
        let mut d_act = self.lin2.backward(&cache.act, dy);
        relu_backward(&cache.pre, &mut d_act);
        self.lin1.backward(&cache.x, &d_act)
    }

    pub fn params(&self) -> Vec<&Parameter> {
        let mut out = self.lin1.params();
        out.extend(self.lin2.params());
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Parameter> {
        let mut out = self.lin1.params_mut();
        out.extend(self.lin2.params_mut());
        out
    }
}

/// Inverted-dropout mask: entries are `0` or `1/(1-p)`.
pub fn dropout_mask(n: usize, p: f64, rng: &mut Rng) -> Vec<f64> {
    let keep = 1.0 / (1.0 - p);
    (0..n)
        .map(|_| if rng.gen::<f64>() < p { 0.0 } else { keep })
        .collect()
}

fn apply_mask(t: &mut Tensor, mask: &Option<Vec<f64>>) {
    if let Some(m) = mask {
        for (v, k) in t.data_mut().iter_mut().zip(m) {
            *v *= k;
        }
    }
}

/// Post-norm Transformer encoder block.
#[derive(Clone, Debug)]
pub struct EncoderLayer {
    pub attn: MultiHeadAttention,
    pub ln1: LayerNorm,
    pub ffn: FeedForward,
    pub ln2: LayerNorm,
    pub dropout: f64,
}

#[derive(Clone, Debug)]
pub struct EncoderCache {
    attn: MhaCache,
    mask1: Option<Vec<f64>>,
    ln1: LnCache,
    ffn: FfnCache,
    mask2: Option<Vec<f64>>,
    ln2: LnCache,
}

impl EncoderLayer {
    pub fn new(name: &str, d: usize, heads: usize, d_ff: usize, dropout: f64, rng: &mut Rng) -> Result<Self> {
        Ok(EncoderLayer {
            attn: MultiHeadAttention::new(&format!("{name}.attn"), d, heads, rng)?,
            ln1: LayerNorm::new(&format!("{name}.ln1"), d),
            ffn: FeedForward::new(&format!("{name}.ffn"), d, d_ff, rng),
            ln2: LayerNorm::new(&format!("{name}.ln2"), d),
            dropout,
        })
    }

    /// Dropout is active only when `rng` is given.
    pub fn forward(&self, x: &Tensor, valid: Option<usize>, mut rng: Option<&mut Rng>) -> Result<(Tensor, EncoderCache)> {
        let mut mask_for = |n: usize| -> Option<Vec<f64>> {
            match rng.as_deref_mut() {
                Some(r) if self.dropout > 0.0 => Some(dropout_mask(n, self.dropout, r)),
                _ => None,
            }
        };
        let (mut a, attn) = self.attn.forward(x, valid)?;
        let mask1 = mask_for(a.len());
        apply_mask(&mut a, &mask1);
        a.add_assign(x);
        let (h1, ln1) = self.ln1.forward(&a);
        let (mut f, ffn) = self.ffn.forward(&h1)?;
        let mask2 = mask_for(f.len());
        apply_mask(&mut f, &mask2);
        f.add_assign(&h1);
        let (out, ln2) = self.ln2.forward(&f);
        Ok((
            out,
            EncoderCache {
                attn,
                mask1,
                ln1,
                ffn,
                mask2,
                ln2,
            },
        ))
    }

    pub fn backward(&mut self, cache: &EncoderCache, d_out: &Tensor) -> Tensor {
        let d_r2 = self.ln2.backward(&cache.ln2, d_out);
        let mut d_f = d_r2.clone();
        apply_mask(&mut d_f, &cache.mask2);
        let mut d_h1 = d_r2;
        d_h1.add_assign(&self.ffn.backward(&cache.ffn, &d_f));
        let d_r1 = self.ln1.backward(&cache.ln1, &d_h1);
        let mut d_a = d_r1.clone();
        apply_mask(&mut d_a, &cache.mask1);
        let mut dx = d_r1;
        dx.add_assign(&self.attn.backward(&cache.attn, &d_a));
        dx
    }

    pub fn params(&self) -> Vec<&Parameter> {
        let mut out = self.attn.params();
        out.extend(self.ln1.params());
        out.extend(self.ffn.params());
        out.extend(self.ln2.params());
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Parameter> {
        let mut out = self.attn.params_mut();
        out.extend(self.ln1.params_mut());
        out.extend(self.ffn.params_mut());
        out.extend(self.ln2.params_mut());
        out
    }
}

/// Sinusoidal position table `[S, D]`: sine on even columns, cosine on odd.
pub fn positional_encoding(steps: usize, d: usize) -> Tensor {
    let mut out = Tensor::zeros(&[steps, d]);
    let data = out.data_mut();
    for pos in 0..steps {
        for i in 0..d {
            let pair = (i / 2) as f64;
            let angle = pos as f64 / 10000f64.powf(2.0 * pair / d as f64);
            data[pos * d + i] = if i % 2 == 0 { angle.sin() } else { angle.cos() };
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;

    use super::*;
    use crate::neuralcore::grad_check;

    fn rand_tensor(shape: &[usize], rng: &mut Rng) -> Tensor {
        let n = shape.iter().product();
        Tensor::from_vec(shape, (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
    }

    fn perturb_all(params: Vec<&mut Parameter>, rng: &mut Rng) {
        for p in params {
            p.value.data_mut().iter_mut().for_each(|v| *v += rng.gen_range(-0.2..0.2));
        }
    }

    fn check_params<M: Clone>(
        model: &M,
        params: fn(&M) -> Vec<&Parameter>,
        params_mut: fn(&mut M) -> Vec<&mut Parameter>,
        f: &dyn Fn(&M) -> f64,
        tol: f64,
    ) {
        let n = params(model).len();
        for pi in 0..n {
            let values = params(model)[pi].value.data().to_vec();
            let grad = params(model)[pi].grad.data().to_vec();
            let name = params(model)[pi].name.clone();
            let rep = grad_check(
                |v| {
                    let mut m = model.clone();
                    params_mut(&mut m)[pi].value.data_mut().copy_from_slice(v);
                    f(&m)
                },
                &values,
                &grad,
                1e-5,
            );
            assert!(rep.max_rel_error < tol, "{name}: {rep:?}");
        }
    }

    #[test]
    fn layer_norm_standardises_rows() {
        let mut rng = Rng::seed_from_u64(2);
        let x = rand_tensor(&[6, 16], &mut rng);
        let (xhat, _) = normalize_rows(&x);
        for row in xhat.data().chunks_exact(16) {
            let mean = row.iter().sum::<f64>() / 16.0;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 16.0;
            assert!(mean.abs() < 1e-10);
            assert!((var - 1.0).abs() < 1e-8);
        }
    }

    #[test]
    fn layer_norm_gradients() {
        let mut rng = Rng::seed_from_u64(3);
        let mut ln = LayerNorm::new("ln", 6);
        perturb_all(ln.params_mut(), &mut rng);
        let x = rand_tensor(&[4, 6], &mut rng);
        let r = rand_tensor(&[4, 6], &mut rng);
        let (_, cache) = ln.forward(&x);
        let dx = ln.backward(&cache, &r);
        let f = |m: &LayerNorm, x: &Tensor| -> f64 {
            m.forward(x).0.data().iter().zip(r.data()).map(|(a, b)| a * b).sum()
        };
        let base = ln.clone();
        let rep = grad_check(|v| f(&base, &Tensor::from_vec(&[4, 6], v.to_vec()).unwrap()), x.data(), dx.data(), 1e-5);
        assert!(rep.max_rel_error < 1e-5, "{rep:?}");
        check_params(&ln, LayerNorm::params, LayerNorm::params_mut, &|m| f(m, &x), 1e-5);
    }

    #[test]
    fn feed_forward_gradients() {
        let mut rng = Rng::seed_from_u64(4);
        let mut ffn = FeedForward::new("ffn", 5, 7, &mut rng);
        perturb_all(ffn.params_mut(), &mut rng);
        let x = rand_tensor(&[3, 5], &mut rng);
        let r = rand_tensor(&[3, 5], &mut rng);
        let (_, cache) = ffn.forward(&x).unwrap();
        let dx = ffn.backward(&cache, &r);
        let f = |m: &FeedForward, x: &Tensor| -> f64 {
            m.forward(x).unwrap().0.data().iter().zip(r.data()).map(|(a, b)| a * b).sum()
        };
        let base = ffn.clone();
        let rep = grad_check(|v| f(&base, &Tensor::from_vec(&[3, 5], v.to_vec()).unwrap()), x.data(), dx.data(), 1e-5);
        assert!(rep.max_rel_error < 1e-5, "{rep:?}");
        check_params(&ffn, FeedForward::params, FeedForward::params_mut, &|m| f(m, &x), 1e-5);
    }

    #[test]
    fn dropout_mask_has_unit_mean() {
        let mut rng = Rng::seed_from_u64(11);
        let m = dropout_mask(200_000, 0.2, &mut rng);
        let mean = m.iter().sum::<f64>() / m.len() as f64;
        assert!((mean - 1.0).abs() < 0.01, "{mean}");
        assert!(m.iter().all(|&v| v == 0.0 || (v - 1.25).abs() < 1e-15));
    }

    #[test]
    fn encoder_layer_eval_is_deterministic_and_ignores_dropout() {
        let mut rng = Rng::seed_from_u64(5);
        let layer = EncoderLayer::new("l", 8, 2, 16, 0.5, &mut rng).unwrap();
        let x = rand_tensor(&[5, 8], &mut rng);
        let (a, _) = layer.forward(&x, None, None).unwrap();
        let (b, _) = layer.forward(&x, None, None).unwrap();
        assert_eq!(a, b);
        let (c, _) = layer.forward(&x, None, Some(&mut rng)).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn encoder_layer_with_zero_sublayers_is_double_layer_norm() {
        let mut rng = Rng::seed_from_u64(6);
        let mut layer = EncoderLayer::new("l", 8, 2, 16, 0.0, &mut rng).unwrap();
        for p in layer.attn.params_mut().into_iter().chain(layer.ffn.params_mut()) {
            p.value.fill(0.0);
        }
        let x = rand_tensor(&[4, 8], &mut rng);
        let (y, _) = layer.forward(&x, None, None).unwrap();
        let (h, _) = layer.ln1.forward(&x);
        let (want, _) = layer.ln2.forward(&h);
        assert!(y.max_abs_diff(&want) < 1e-14);
    }

    #[test]
    fn encoder_layer_gradients() {
        let mut rng = Rng::seed_from_u64(7);
        let mut layer = EncoderLayer::new("l", 8, 2, 12, 0.0, &mut rng).unwrap();
        perturb_all(layer.params_mut(), &mut rng);
        let x = rand_tensor(&[5, 8], &mut rng);
        let r = rand_tensor(&[5, 8], &mut rng);
        let (_, cache) = layer.forward(&x, Some(4), None).unwrap();
        let dx = layer.backward(&cache, &r);
        let f = |m: &EncoderLayer, x: &Tensor| -> f64 {
            m.forward(x, Some(4), None).unwrap().0.data().iter().zip(r.data()).map(|(a, b)| a * b).sum()
        };
        let base = layer.clone();
        let rep = grad_check(|v| f(&base, &Tensor::from_vec(&[5, 8], v.to_vec()).unwrap()), x.data(), dx.data(), 1e-5);
        assert!(rep.max_rel_error < 1e-4, "{rep:?}");
        check_params(&layer, EncoderLayer::params, EncoderLayer::params_mut, &|m| f(m, &x), 1e-4);
    }

    #[test]
    fn positional_table_properties() {
        let pe = positional_encoding(10, 6);
        let row0: Vec<f64> = pe.data()[..6].to_vec();
        assert_eq!(row0, vec![0.0, 1.0, 0.0, 1.0, 0.0, 1.0]);
        assert!(pe.data().iter().all(|v| (-1.0..=1.0).contains(v)));
        // pos 3, pair k = 1 → angle 3 / 10000^(2/6)
        let angle = 3.0 / 10000f64.powf(2.0 / 6.0);
        assert!((pe.data()[3 * 6 + 2] - angle.sin()).abs() < 1e-15);
        assert!((pe.data()[3 * 6 + 3] - angle.cos()).abs() < 1e-15);
    }
}
