//! Monotone piecewise cubic Hermite interpolation (Fritsch–Carlson slopes with
//! the weighted harmonic mean at interior knots).

use crate::error::{Error, Result};

#[derive(Clone, Debug)]
pub struct Pchip {
    x: Vec<f64>,
    y: Vec<f64>,
    slopes: Vec<f64>,
}

impl Pchip {
    pub fn new(x: &[f64], y: &[f64]) -> Result<Self> {
        if x.len() != y.len() {
            return Err(Error::invalid(format!(
                "pchip: {} abscissae but {} ordinates",
                x.len(),
                y.len()
            )));
        }
        let slopes = pchip_slopes(x, y)?;
        Ok(Pchip {
            x: x.to_vec(),
            y: y.to_vec(),
            slopes,
        })
    }

    pub fn slopes(&self) -> &[f64] {
        &self.slopes
    }

    fn interval(&self, xq: f64) -> Option<usize> {
        let n = self.x.len();
        if !(self.x[0]..=self.x[n - 1]).contains(&xq) {
            return None;
        }
        Some(match self.x.binary_search_by(|v| v.total_cmp(&xq)) {
            Ok(i) => i.min(n - 2),
            Err(i) => i - 1,
        })
    }

    /// Value at `xq`; knots are returned exactly. `None` outside the data range.
    pub fn eval(&self, xq: f64) -> Option<f64> {
        let i = self.interval(xq)?;
        if xq == self.x[i] {
            return Some(self.y[i]);
        }
        if xq == self.x[i + 1] {
            return Some(self.y[i + 1]);
        }
        let h = self.x[i + 1] - self.x[i];
        let t = (xq - self.x[i]) / h;
        // increment form (h00 = 1 − h01) keeps level segments exactly level
        let h10 = t * (1.0 - t) * (1.0 - t);
        let h01 = t * t * (3.0 - 2.0 * t);
        let h11 = t * t * (t - 1.0);
        Some(self.y[i] + h01 * (self.y[i + 1] - self.y[i]) + h * (h10 * self.slopes[i] + h11 * self.slopes[i + 1]))
    }

    /// First derivative at `xq`.
    pub fn derivative(&self, xq: f64) -> Option<f64> {
        let i = self.interval(xq)?;
        let h = self.x[i + 1] - self.x[i];
        let t = (xq - self.x[i]) / h;
        let d00 = 6.0 * t * t - 6.0 * t;
        let d10 = 3.0 * t * t - 4.0 * t + 1.0;
        let d01 = -6.0 * t * t + 6.0 * t;
        let d11 = 3.0 * t * t - 2.0 * t;
        Some(
            (d00 * self.y[i] + d01 * self.y[i + 1]) / h + d10 * self.slopes[i] + d11 * self.slopes[i + 1],
        )
    }
}

fn same_sign(a: f64, b: f64) -> bool {
    (a > 0.0 && b > 0.0) || (a < 0.0 && b < 0.0)
}

/// Knot derivatives for a shape-preserving cubic Hermite interpolant.
pub fn pchip_slopes(x: &[f64], y: &[f64]) -> Result<Vec<f64>> {
    let n = x.len();
    if n < 2 {
        return Err(Error::invalid("pchip needs at least 2 points"));
    }
    let mut h = Vec::with_capacity(n - 1);
    let mut delta = Vec::with_capacity(n - 1);
    for i in 0..n - 1 {
        let hi = x[i + 1] - x[i];
        if !(hi > 0.0) {
            return Err(Error::invalid(format!(
                "pchip abscissae must be strictly increasing (index {i})"
            )));
        }
        h.push(hi);
        delta.push((y[i + 1] - y[i]) / hi);
    }
    if n == 2 {
        return Ok(vec![delta[0]; 2]);
    }
    let mut d = vec![0.0; n];
    for i in 1..n - 1 {
        let (a, b) = (delta[i - 1], delta[i]);
        if same_sign(a, b) {
            let w1 = 2.0 * h[i] + h[i - 1];
            let w2 = h[i] + 2.0 * h[i - 1];
            d[i] = (w1 + w2) / (w1 / a + w2 / b);
        }
    }
    d[0] = end_slope(h[0], h[1], delta[0], delta[1]);
    d[n - 1] = end_slope(h[n - 2], h[n - 3], delta[n - 2], delta[n - 3]);
    Ok(d)
}

/// Non-centred three-point end condition, clipped to stay shape preserving.
fn end_slope(h0: f64, h1: f64, d0: f64, d1: f64) -> f64 {
    let s = ((2.0 * h0 + h1) * d0 - h0 * d1) / (h0 + h1);
    if !same_sign(s, d0) {
        0.0
    } else if !same_sign(d0, d1) && s.abs() > 3.0 * d0.abs() {
        3.0 * d0
    } else {
        s
    }
}

/// Uniform grid `t0, t0+dt, …` up to and including `t_end` (to rounding).
pub fn uniform_grid(t0: f64, t_end: f64, dt: f64) -> Vec<f64> {
    let span = t_end - t0;
    let count = (span / dt + 1e-9).floor() as usize + 1;
    (0..count).map(|k| t0 + k as f64 * dt).collect()
}
