use super::gemm::{gemm, matmul};
use super::{Linear, Parameter, Rng, Tensor};
use crate::error::{Error, Result};

/// Row-wise softmax over the first `valid` columns; the rest get weight 0.
pub fn softmax_rows(scores: &mut [f64], cols: usize, valid: usize) {
    let valid = valid.min(cols);
    for row in scores.chunks_exact_mut(cols) {
        if valid == 0 {
            row.iter_mut().for_each(|v| *v = 0.0);
            continue;
        }
        let max = row[..valid].iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in &mut row[..valid] {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in &mut row[..valid] {
            *v /= sum;
        }
        row[valid..].iter_mut().for_each(|v| *v = 0.0);
    }
}

#[derive(Clone, Debug)]
pub struct AttentionOutput {
    pub out: Tensor,
    /// Row-stochastic `[S_q, S_k]` attention weights.
    pub weights: Tensor,
}

/// Scaled dot-product attention `softmax(Q·Kᵀ/√d_k)·V`.
///
/// Keys at index `>= valid_keys` are excluded from the softmax.
pub fn attention(q: &Tensor, k: &Tensor, v: &Tensor, valid_keys: Option<usize>) -> Result<AttentionOutput> {
    let (sq, dk) = dims2(q, "query")?;
    let (sk, dk2) = dims2(k, "key")?;
    let (sv, dv) = dims2(v, "value")?;
    if dk == 0 {
        return Err(Error::invalid("attention: key dimension d_k is 0"));
    }
    if dk != dk2 || sk != sv {
        return Err(Error::shape(format!(
            "attention: Q {:?}, K {:?}, V {:?}",
            q.shape(),
            k.shape(),
            v.shape()
        )));
    }
    let mut scores = vec![0.0; sq * sk];
    gemm(sq, dk, sk, q.data(), false, k.data(), true, 0.0, &mut scores);
    let scale = 1.0 / (dk as f64).sqrt();
    scores.iter_mut().for_each(|s| *s *= scale);
    softmax_rows(&mut scores, sk, valid_keys.unwrap_or(sk));
    let out = matmul(sq, sk, dv, &scores, false, v.data(), false);
    Ok(AttentionOutput {
        out: Tensor::from_vec(&[sq, dv], out)?,
        weights: Tensor::from_vec(&[sq, sk], scores)?,
    })
}

/// Gradients of [`attention`] given its saved weights: returns `(dQ, dK, dV)`.
pub fn attention_backward(q: &Tensor, k: &Tensor, v: &Tensor, weights: &Tensor, d_out: &Tensor) -> (Tensor, Tensor, Tensor) {
    let (sq, dk) = (q.shape()[0], q.shape()[1]);
    let sk = k.shape()[0];
    let dv = v.shape()[1];
    let p = weights.data();
    let d_v = matmul(sk, sq, dv, p, true, d_out.data(), false);
    let mut d_p = matmul(sq, dv, sk, d_out.data(), false, v.data(), true);
    // softmax Jacobian, row by row
    for (dp_row, p_row) in d_p.chunks_exact_mut(sk).zip(p.chunks_exact(sk)) {
        let dot: f64 = dp_row.iter().zip(p_row).map(|(a, b)| a * b).sum();
        for (g, pv) in dp_row.iter_mut().zip(p_row) {
            *g = pv * (*g - dot);
        }
    }
    let scale = 1.0 / (dk as f64).sqrt();
    d_p.iter_mut().for_each(|g| *g *= scale);
    let d_q = matmul(sq, sk, dk, &d_p, false, k.data(), false);
    let d_k = matmul(sk, sq, dk, &d_p, true, q.data(), false);
    (
        Tensor::from_vec(&[sq, dk], d_q).unwrap(),
        Tensor::from_vec(&[sk, dk], d_k).unwrap(),
        Tensor::from_vec(&[sk, dv], d_v).unwrap(),
    )
}

fn dims2(t: &Tensor, what: &str) -> Result<(usize, usize)> {
    match t.shape() {
        [a, b] => Ok((*a, *b)),
        s => Err(Error::shape(format!("attention {what} must be 2-D, got {s:?}"))),
    }
}

fn take_cols(t: &Tensor, start: usize, width: usize) -> Tensor {
    let cols = t.last_dim();
    let rows = t.rows();
    let mut out = Vec::with_capacity(rows * width);
    for r in t.data().chunks_exact(cols) {
        out.extend_from_slice(&r[start..start + width]);
    }
    Tensor::from_vec(&[rows, width], out).unwrap()
}

fn put_cols(dst: &mut Tensor, src: &Tensor, start: usize) {
    let cols = dst.last_dim();
    let width = src.last_dim();
    for (d, s) in dst.data_mut().chunks_exact_mut(cols).zip(src.data().chunks_exact(width)) {
        d[start..start + width].copy_from_slice(s);
    }
}

/// Multi-head self-attention with learned Q/K/V/output projections.
#[derive(Clone, Debug)]
pub struct MultiHeadAttention {
    pub wq: Linear,
    pub wk: Linear,
    pub wv: Linear,
    pub wo: Linear,
    pub heads: usize,
}

#[derive(Clone, Debug)]
pub struct MhaCache {
    x: Tensor,
    q: Tensor,
    k: Tensor,
    v: Tensor,
    weights: Vec<Tensor>,
    concat: Tensor,
}

impl MhaCache {
    pub fn head_weights(&self) -> &[Tensor] {
        &self.weights
    }
}

impl MultiHeadAttention {
    pub fn new(name: &str, d_model: usize, heads: usize, rng: &mut Rng) -> Result<Self> {
        check_heads(d_model, heads)?;
        Ok(MultiHeadAttention {
            wq: Linear::new(&format!("{name}.wq"), d_model, d_model, rng),
            wk: Linear::new(&format!("{name}.wk"), d_model, d_model, rng),
            wv: Linear::new(&format!("{name}.wv"), d_model, d_model, rng),
            wo: Linear::new(&format!("{name}.wo"), d_model, d_model, rng),
            heads,
        })
    }

    pub fn d_model(&self) -> usize {
        self.wq.d_in()
    }

    pub fn head_dim(&self) -> usize {
        self.d_model() / self.heads
    }

    pub fn forward(&self, x: &Tensor, valid: Option<usize>) -> Result<(Tensor, MhaCache)> {
        let d = self.d_model();
        check_heads(d, self.heads)?;
        if x.shape().len() != 2 || x.last_dim() != d {
            return Err(Error::shape(format!(
                "multi-head attention expects [S, {d}], got {:?}",
                x.shape()
            )));
        }
        let q = self.wq.forward(x)?;
        let k = self.wk.forward(x)?;
        let v = self.wv.forward(x)?;
        let dh = self.head_dim();
        let mut concat = Tensor::zeros(x.shape());
        let mut weights = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let att = attention(
                &take_cols(&q, h * dh, dh),
                &take_cols(&k, h * dh, dh),
                &take_cols(&v, h * dh, dh),
                valid,
            )?;
            put_cols(&mut concat, &att.out, h * dh);
            weights.push(att.weights);
        }
        let out = self.wo.forward(&concat)?;
        Ok((
            out,
            MhaCache {
                x: x.clone(),
                q,
                k,
                v,
                weights,
                concat,
            },
        ))
    }

    pub fn backward(&mut self, cache: &MhaCache, d_out: &Tensor) -> Tensor {
        let d_concat = self.wo.backward(&cache.concat, d_out);
        let dh = self.head_dim();
        let mut dq = Tensor::zeros(cache.q.shape());
        let mut dk = Tensor::zeros(cache.k.shape());
        let mut dv = Tensor::zeros(cache.v.shape());
        for h in 0..self.heads {
            let (gq, gk, gv) = attention_backward(
                &take_cols(&cache.q, h * dh, dh),
                &take_cols(&cache.k, h * dh, dh),
                &take_cols(&cache.v, h * dh, dh),
                &cache.weights[h],
                &take_cols(&d_concat, h * dh, dh),
            );
            put_cols(&mut dq, &gq, h * dh);
            put_cols(&mut dk, &gk, h * dh);
            put_cols(&mut dv, &gv, h * dh);
        }
        let mut dx = self.wq.backward(&cache.x, &dq);
        dx.add_assign(&self.wk.backward(&cache.x, &dk));
        dx.add_assign(&self.wv.backward(&cache.x, &dv));
        dx
    }

    pub fn params(&self) -> Vec<&Parameter> {
        [&self.wq, &self.wk, &self.wv, &self.wo]
            .into_iter()
            .flat_map(|l| l.params())
            .collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Parameter> {
        let mut out = self.wq.params_mut();
        out.extend(self.wk.params_mut());
        out.extend(self.wv.params_mut());
        out.extend(self.wo.params_mut());
        out
    }
}

fn check_heads(d_model: usize, heads: usize) -> Result<()> {
    if heads == 0 || !d_model.is_multiple_of(heads) {
        return Err(Error::invalid(format!(
            "model dimension {d_model} is not divisible by head count {heads}"
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use rand::{Rng as _, SeedableRng};

    use super::*;
    use crate::neuralcore::grad_check;

    fn rand_tensor(shape: &[usize], rng: &mut Rng) -> Tensor {
        let n = shape.iter().product();
        Tensor::from_vec(shape, (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn single_key_returns_value() {
        let q = Tensor::from_vec(&[1, 2], vec![0.3, -1.2]).unwrap();
        let k = Tensor::from_vec(&[1, 2], vec![5.0, 2.0]).unwrap();
        let v = Tensor::from_vec(&[1, 3], vec![1.0, 2.0, 3.0]).unwrap();
        let a = attention(&q, &k, &v, None).unwrap();
        assert_eq!(a.weights.data(), &[1.0]);
        assert_eq!(a.out, v);
    }

    #[test]
    fn identical_keys_average_values() {
        let mut rng = Rng::seed_from_u64(1);
        let q = rand_tensor(&[3, 2], &mut rng);
        let k = Tensor::from_vec(&[4, 2], [0.4, -0.7].repeat(4)).unwrap();
        let v = rand_tensor(&[4, 2], &mut rng);
        let a = attention(&q, &k, &v, None).unwrap();
        for i in 0..3 {
            for j in 0..2 {
                let mean: f64 = (0..4).map(|r| v.data()[r * 2 + j]).sum::<f64>() / 4.0;
                assert!((a.out.data()[i * 2 + j] - mean).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn two_by_two_matches_hand_evaluation() {
        let eye = Tensor::from_vec(&[2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let a = attention(&eye, &eye, &eye, None).unwrap();
        // softmax([1/√2, 0]) on row 0, softmax([0, 1/√2]) on row 1
        let e = (1.0f64 / 2f64.sqrt()).exp();
        let hi = e / (e + 1.0);
        let lo = 1.0 / (e + 1.0);
        let want = [hi, lo, lo, hi];
        for (g, w) in a.out.data().iter().zip(want) {
            assert!((g - w).abs() < 1e-15);
        }
    }

    #[test]
    fn zero_key_dim_is_rejected() {
        let z = Tensor::zeros(&[2, 0]);
        assert!(attention(&z, &z, &Tensor::zeros(&[2, 1]), None).is_err());
    }

    #[test]
    fn softmax_rows_sum_to_one_and_ignore_row_shift() {
        let mut rng = Rng::seed_from_u64(9);
        let base: Vec<f64> = (0..12).map(|_| rng.gen_range(-30.0..30.0)).collect();
        let mut a = base.clone();
        softmax_rows(&mut a, 4, 4);
        let mut b: Vec<f64> = base.iter().enumerate().map(|(i, v)| v + (i / 4) as f64 * 17.5).collect();
        softmax_rows(&mut b, 4, 4);
        for r in 0..3 {
            let s: f64 = a[r * 4..r * 4 + 4].iter().sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn masked_keys_get_zero_weight() {
        let mut s = vec![1.0, 2.0, 3.0, 4.0];
        softmax_rows(&mut s, 4, 2);
        assert_eq!(&s[2..], &[0.0, 0.0]);
        assert!((s[0] + s[1] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn attention_gradients_match_finite_differences() {
        let mut rng = Rng::seed_from_u64(4);
        let q = rand_tensor(&[4, 3], &mut rng);
        let k = rand_tensor(&[5, 3], &mut rng);
        let v = rand_tensor(&[5, 2], &mut rng);
        let r = rand_tensor(&[4, 2], &mut rng);
        let f = |q: &Tensor, k: &Tensor, v: &Tensor| -> f64 {
            let a = attention(q, k, v, Some(4)).unwrap();
            a.out.data().iter().zip(r.data()).map(|(a, b)| a * b).sum()
        };
        let a = attention(&q, &k, &v, Some(4)).unwrap();
        let (dq, dk, dv) = attention_backward(&q, &k, &v, &a.weights, &r);
        let rep = grad_check(|x| f(&Tensor::from_vec(&[4, 3], x.to_vec()).unwrap(), &k, &v), q.data(), dq.data(), 1e-5);
        assert!(rep.max_rel_error < 1e-6, "{rep:?}");
        let rep = grad_check(|x| f(&q, &Tensor::from_vec(&[5, 3], x.to_vec()).unwrap(), &v), k.data(), dk.data(), 1e-5);
        assert!(rep.max_rel_error < 1e-6, "{rep:?}");
        let rep = grad_check(|x| f(&q, &k, &Tensor::from_vec(&[5, 2], x.to_vec()).unwrap()), v.data(), dv.data(), 1e-5);
        assert!(rep.max_rel_error < 1e-6, "{rep:?}");
    }

    #[test]
    fn head_count_must_divide_model_dim() {
        let mut rng = Rng::seed_from_u64(0);
        assert!(MultiHeadAttention::new("a", 10, 4, &mut rng).is_err());
        let m = MultiHeadAttention::new("a", 128, 4, &mut rng).unwrap();
        assert_eq!(m.head_dim(), 32);
    }

    #[test]
    fn single_head_reduces_to_projected_attention() {
        let mut rng = Rng::seed_from_u64(5);
        let mha = MultiHeadAttention::new("a", 6, 1, &mut rng).unwrap();
        let x = rand_tensor(&[4, 6], &mut rng);
        let (y, _) = mha.forward(&x, None).unwrap();
        let q = mha.wq.forward(&x).unwrap();
        let k = mha.wk.forward(&x).unwrap();
        let v = mha.wv.forward(&x).unwrap();
        let a = attention(&q, &k, &v, None).unwrap();
        let want = mha.wo.forward(&a.out).unwrap();
        assert!(y.max_abs_diff(&want) < 1e-12);
    }

    #[test]
    fn multi_head_gradients_match_finite_differences() {
        let mut rng = Rng::seed_from_u64(6);
        let mut mha = MultiHeadAttention::new("a", 8, 2, &mut rng).unwrap();
        for p in mha.params_mut() {
            // non-zero biases so their gradients are exercised
            p.value.data_mut().iter_mut().for_each(|v| *v += rng.gen_range(-0.1..0.1));
        }
        let x = rand_tensor(&[5, 8], &mut rng);
        let r = rand_tensor(&[5, 8], &mut rng);
        let (_, cache) = mha.forward(&x, Some(4)).unwrap();
        let dx = mha.backward(&cache, &r);
        let base = mha.clone();
        let f = |m: &MultiHeadAttention, x: &Tensor| -> f64 {
            let (y, _) = m.forward(x, Some(4)).unwrap();
            y.data().iter().zip(r.data()).map(|(a, b)| a * b).sum()
        };
        let rep = grad_check(|v| f(&base, &Tensor::from_vec(&[5, 8], v.to_vec()).unwrap()), x.data(), dx.data(), 1e-5);
        assert!(rep.max_rel_error < 1e-5, "{rep:?}");
        let n_params = mha.params().len();
        for pi in 0..n_params {
            let values = mha.params()[pi].value.data().to_vec();
            let grad = mha.params()[pi].grad.data().to_vec();
            let rep = grad_check(
                |v| {
                    let mut m = base.clone();
                    m.params_mut()[pi].value.data_mut().copy_from_slice(v);
                    f(&m, &x)
                },
                &values,
                &grad,
                1e-5,
            );
            assert!(rep.max_rel_error < 1e-5, "param {pi}: {rep:?}");
        }
    }
}
