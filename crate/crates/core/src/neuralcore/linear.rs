use rand::Rng as _;

use super::gemm::{gemm, matmul};
use super::{Parameter, Rng, Tensor};
use crate::error::{Error, Result};

/// Affine map along the last axis: `y = x·W + b` with `W` stored `[d_in, d_out]`.
pub fn linear_forward(x: &Tensor, w: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (d_in, d_out) = weight_dims(w)?;
    if x.last_dim() != d_in || b.len() != d_out {
        return Err(Error::shape(format!(
            "linear: input {:?}, weight {:?}, bias {:?}",
            x.shape(),
            w.shape(),
            b.shape()
        )));
    }
    let rows = x.rows();
    let mut out = Vec::with_capacity(rows * d_out);
    for _ in 0..rows {
        out.extend_from_slice(b.data());
    }
    gemm(rows, d_in, d_out, x.data(), false, w.data(), false, 1.0, &mut out);
    let mut shape = x.shape().to_vec();
    *shape.last_mut().unwrap() = d_out;
    Tensor::from_vec(&shape, out)
}

/// Gradients of [`linear_forward`]: returns `(dx, dW, db)`.
pub fn linear_backward(x: &Tensor, w: &Tensor, dy: &Tensor) -> (Tensor, Tensor, Tensor) {
    let (d_in, d_out) = (w.shape()[0], w.shape()[1]);
    let rows = x.rows();
    let dx = matmul(rows, d_out, d_in, dy.data(), false, w.data(), true);
    let dw = matmul(d_in, rows, d_out, x.data(), true, dy.data(), false);
    let mut db = vec![0.0; d_out];
    for r in dy.data().chunks_exact(d_out) {
        for (acc, v) in db.iter_mut().zip(r) {
            *acc += v;
        }
    }
    (
        Tensor::from_vec(x.shape(), dx).unwrap(),
        Tensor::from_vec(w.shape(), dw).unwrap(),
        Tensor::from_vec(&[d_out], db).unwrap(),
    )
}

fn weight_dims(w: &Tensor) -> Result<(usize, usize)> {
    match w.shape() {
        [a, b] => Ok((*a, *b)),
        s => Err(Error::shape(format!("linear weight must be 2-D, got {s:?}"))),
    }
}

/// Uniform initialisation in `±sqrt(6 / (fan_in + fan_out))`.
pub fn glorot_uniform(fan_in: usize, fan_out: usize, rng: &mut Rng) -> Tensor {
    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let data = (0..fan_in * fan_out)
        .map(|_| rng.gen_range(-bound..=bound))
        .collect();
    Tensor::from_vec(&[fan_in, fan_out], data).unwrap()
}

#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: Parameter,
    pub bias: Parameter,
}

impl Linear {
    pub fn new(name: &str, d_in: usize, d_out: usize, rng: &mut Rng) -> Self {
        Linear {
            weight: Parameter::new(format!("{name}.weight"), glorot_uniform(d_in, d_out, rng)),
            bias: Parameter::new(format!("{name}.bias"), Tensor::zeros(&[d_out])),
        }
    }

    pub fn d_in(&self) -> usize {
        self.weight.value.shape()[0]
    }

    pub fn d_out(&self) -> usize {
        self.weight.value.shape()[1]
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        linear_forward(x, &self.weight.value, &self.bias.value)
    }

    /// Accumulates parameter gradients and returns the input gradient.
    pub fn backward(&mut self, x: &Tensor, dy: &Tensor) -> Tensor {
        let (dx, dw, db) = linear_backward(x, &self.weight.value, dy);
        self.weight.grad.add_assign(&dw);
        self.bias.grad.add_assign(&db);
        dx
    }

    pub fn params(&self) -> Vec<&Parameter> {
        vec![&self.weight, &self.bias]
    }

    pub fn params_mut(&mut self) -> Vec<&mut Parameter> {
        vec![&mut self.weight, &mut self.bias]
    }
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;

    use super::*;
    use crate::neuralcore::grad_check;

    #[test]
    fn identity_weight_is_identity() {
        let x = Tensor::from_vec(&[2, 3], vec![1.0, -2.0, 3.0, 0.5, 0.0, 7.0]).unwrap();
        let mut w = Tensor::zeros(&[3, 3]);
        for i in 0..3 {
            w.data_mut()[i * 3 + i] = 1.0;
        }
        let y = linear_forward(&x, &w, &Tensor::zeros(&[3])).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn scalar_case() {
        let y = linear_forward(
            &Tensor::from_vec(&[1, 1], vec![2.0]).unwrap(),
            &Tensor::from_vec(&[1, 1], vec![3.0]).unwrap(),
            &Tensor::from_vec(&[1], vec![1.0]).unwrap(),
        )
        .unwrap();
        assert_eq!(y.data(), &[7.0]);
    }

    #[test]
    fn shape_mismatch_names_both_shapes() {
        let err = linear_forward(&Tensor::zeros(&[2, 4]), &Tensor::zeros(&[3, 2]), &Tensor::zeros(&[2]))
            .unwrap_err()
            .to_string();
        assert!(err.contains("[2, 4]") && err.contains("[3, 2]"), "{err}");
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = Rng::seed_from_u64(3);
        let x = Tensor::from_vec(&[5, 4], (0..20).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
        let w = glorot_uniform(4, 3, &mut rng);
        let b = Tensor::from_vec(&[3], vec![0.1, -0.2, 0.3]).unwrap();
        let r: Vec<f64> = (0..15).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let dy = Tensor::from_vec(&[5, 3], r.clone()).unwrap();
        let (dx, dw, db) = linear_backward(&x, &w, &dy);
        let objective = |x: &Tensor, w: &Tensor, b: &Tensor| -> f64 {
            let y = linear_forward(x, w, b).unwrap();
            y.data().iter().zip(&r).map(|(a, b)| a * b).sum()
        };
        let rep = grad_check(
            |v| objective(&Tensor::from_vec(&[5, 4], v.to_vec()).unwrap(), &w, &b),
            x.data(),
            dx.data(),
            1e-5,
        );
        assert!(rep.max_rel_error < 1e-6, "{rep:?}");
        let rep = grad_check(
            |v| objective(&x, &Tensor::from_vec(&[4, 3], v.to_vec()).unwrap(), &b),
            w.data(),
            dw.data(),
            1e-5,
        );
        assert!(rep.max_rel_error < 1e-6, "{rep:?}");
        let rep = grad_check(
            |v| objective(&x, &w, &Tensor::from_vec(&[3], v.to_vec()).unwrap()),
            b.data(),
            db.data(),
            1e-5,
        );
        assert!(rep.max_rel_error < 1e-6, "{rep:?}");
    }
}
