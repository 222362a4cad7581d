//! Small differentiable numerical core: dense tensors, hand-derived
//! forward/backward passes for the Transformer building blocks, losses and
//! the Adam optimiser. Everything is `f64`.

mod attention;
pub mod gemm;
mod layers;
mod linear;
mod optim;
mod tensor;

pub use attention::{attention, attention_backward, softmax_rows, AttentionOutput, MhaCache, MultiHeadAttention};
pub use layers::{
    dropout_mask, normalize_rows, positional_encoding, relu, relu_backward, EncoderCache, EncoderLayer, FeedForward,
    FfnCache, LayerNorm, LnCache, LAYER_NORM_EPS,
};
pub use linear::{glorot_uniform, linear_backward, linear_forward, Linear};
pub use optim::{bce_with_logits, mse_loss, AdamConfig, AdamState};
pub use tensor::{channels_to_time, time_to_channels, Tensor};

/// Seedable generator used for initialisation, dropout and sampling.
pub type Rng = rand_chacha::ChaCha8Rng;

/// A named trainable tensor with its accumulated gradient.
#[derive(Clone, Debug)]
pub struct Parameter {
    pub name: String,
    pub value: Tensor,
    pub grad: Tensor,
}

impl Parameter {
    pub fn new(name: String, value: Tensor) -> Self {
        let grad = Tensor::zeros(value.shape());
        Parameter { name, value, grad }
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(0.0);
    }
}

/// Outcome of comparing analytic gradients with central finite differences.
#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub max_abs_error: f64,
    pub worst_index: Option<usize>,
    pub numeric: Vec<f64>,
}

/// Gradients smaller than this are compared in absolute terms.
pub const GRAD_CHECK_FLOOR: f64 = 1e-6;

/// Central-difference check of `analytic` against `f` around `x`.
pub fn grad_check(mut f: impl FnMut(&[f64]) -> f64, x: &[f64], analytic: &[f64], step: f64) -> GradCheckReport {
    assert_eq!(x.len(), analytic.len(), "grad_check: length mismatch");
    let mut probe = x.to_vec();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        max_abs_error: 0.0,
        worst_index: None,
        numeric: Vec::with_capacity(x.len()),
    };
    for i in 0..x.len() {
        probe[i] = x[i] + step;
        let up = f(&probe);
        probe[i] = x[i] - step;
        let down = f(&probe);
        probe[i] = x[i];
        let num = (up - down) / (2.0 * step);
        let abs = (num - analytic[i]).abs();
        let rel = abs / num.abs().max(analytic[i].abs()).max(GRAD_CHECK_FLOOR);
        report.numeric.push(num);
        report.max_abs_error = report.max_abs_error.max(abs);
        if rel > report.max_rel_error {
            report.max_rel_error = rel;
            report.worst_index = Some(i);
        }
    }
    report
}
