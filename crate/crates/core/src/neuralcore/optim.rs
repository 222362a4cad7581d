use super::{Parameter, Tensor};
use crate::error::{Error, Result};

/// Batch L2 loss `(1/B)·Σᵢ‖predᵢ − targetᵢ‖²`, where `B` is the leading axis.
///
/// Returns the loss and its gradient with respect to `pred`.
pub fn mse_loss(pred: &Tensor, target: &Tensor) -> Result<(f64, Tensor)> {
    if pred.shape() != target.shape() {
        return Err(Error::shape(format!(
            "loss: prediction {:?} vs target {:?}",
            pred.shape(),
            target.shape()
        )));
    }
    let batch = pred.shape().first().copied().unwrap_or(1).max(1) as f64;
    let mut grad = Tensor::zeros(pred.shape());
    let mut loss = 0.0;
    for ((g, p), t) in grad.data_mut().iter_mut().zip(pred.data()).zip(target.data()) {
        let d = p - t;
        loss += d * d;
        *g = 2.0 * d / batch;
    }
    Ok((loss / batch, grad))
}

/// Mean binary cross-entropy on logits; returns loss and d/dlogit.
pub fn bce_with_logits(logits: &[f64], labels: &[f64]) -> (f64, Vec<f64>) {
    let n = logits.len().max(1) as f64;
    let mut loss = 0.0;
    let mut grad = Vec::with_capacity(logits.len());
    for (&z, &y) in logits.iter().zip(labels) {
        // log(1 + e^z) − y·z, stable for either sign of z
        loss += z.max(0.0) - z * y + (-z.abs()).exp().ln_1p();
        let p = 1.0 / (1.0 + (-z).exp());
        grad.push((p - y) / n);
    }
    (loss / n, grad)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Clone, Debug)]
pub struct AdamState {
    pub config: AdamConfig,
    first: Vec<Tensor>,
    second: Vec<Tensor>,
    step: u64,
    initialized: bool,
}

impl AdamState {
    /// An uninitialised state; call [`AdamState::init`] before stepping.
    pub fn new(config: AdamConfig) -> Self {
        AdamState {
            config,
            first: Vec::new(),
            second: Vec::new(),
            step: 0,
            initialized: false,
        }
    }

    pub fn init(&mut self, params: &[&mut Parameter]) {
        self.first = params.iter().map(|p| Tensor::zeros(p.value.shape())).collect();
        self.second = self.first.clone();
        self.step = 0;
        self.initialized = true;
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Bias-corrected Adam update of every parameter from its gradient.
    pub fn step(&mut self, params: &mut [&mut Parameter]) -> Result<()> {
        if !self.initialized {
            return Err(Error::invalid("adam: optimizer state not initialised"));
        }
        if params.len() != self.first.len() {
            return Err(Error::shape(format!(
                "adam: state tracks {} parameters, got {}",
                self.first.len(),
                params.len()
            )));
        }
        self.step += 1;
        let AdamConfig { lr, beta1, beta2, eps } = self.config;
        let c1 = 1.0 - beta1.powi(self.step as i32);
        let c2 = 1.0 - beta2.powi(self.step as i32);
        for ((p, m), v) in params.iter_mut().zip(&mut self.first).zip(&mut self.second) {
            if m.shape() != p.value.shape() {
                return Err(Error::shape(format!(
                    "adam: accumulator {:?} vs parameter {} {:?}",
                    m.shape(),
                    p.name,
                    p.value.shape()
                )));
            }
            let Parameter { value, grad, .. } = &mut **p;
            for (((w, g), m), v) in value
                .data_mut()
                .iter_mut()
                .zip(grad.data())
                .zip(m.data_mut())
                .zip(v.data_mut())
            {
                *m = beta1 * *m + (1.0 - beta1) * g;
                *v = beta2 * *v + (1.0 - beta2) * g * g;
                let mhat = *m / c1;
                let vhat = *v / c2;
                *w -= lr * mhat / (vhat.sqrt() + eps);
            }
        }
        Ok(())
    }
}
