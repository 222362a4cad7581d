use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Number of retained components: by cumulative explained variance, or fixed.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum PcaTarget {
    Variance(f64),
    Components(usize),
}

#[derive(Clone, Debug, PartialEq)]
pub struct Pca {
    pub mean: DVector<f64>,
    /// `P × d`, orthonormal rows.
    pub components: DMatrix<f64>,
    /// Sample variance along each component (divisor `N − 1`), non-increasing.
    pub explained_variances: Vec<f64>,
    /// Sum of all sample variances of the centred data.
    pub total_variance: f64,
}

impl Pca {
    pub fn n_components(&self) -> usize {
        self.components.nrows()
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn explained_ratio(&self) -> f64 {
        if self.total_variance > 0.0 {
            self.explained_variances.iter().sum::<f64>() / self.total_variance
        } else {
            1.0
        }
    }

    /// `(M − mean)·componentsᵀ`.
    pub fn project(&self, m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if m.ncols() != self.dim() {
            return Err(Error::shape(format!("pca: rows of width {}, model expects {}", m.ncols(), self.dim())));
        }
        let mut centered = m.clone();
        for mut row in centered.row_iter_mut() {
            row -= self.mean.transpose();
        }
        Ok(centered * self.components.transpose())
    }

    /// `O·components + mean`.
    pub fn invert(&self, o: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if o.ncols() != self.n_components() {
            return Err(Error::shape(format!(
                "pca: {} reduced coordinates, model has {} components",
                o.ncols(),
                self.n_components()
            )));
        }
        let mut out = o * &self.components;
        for mut row in out.row_iter_mut() {
            row += self.mean.transpose();
        }
        Ok(out)
    }
}

/// Principal components from the SVD of the centred data matrix.
///
/// With a variance target, `P` is the smallest count whose cumulative
/// explained variance reaches the target. Each component's sign is fixed so
/// that its largest-magnitude entry is positive.
pub fn pca_fit(m: &DMatrix<f64>, target: PcaTarget) -> Result<Pca> {
    let (n, d) = m.shape();
    if n < 2 {
        return Err(Error::invalid(format!("pca needs at least 2 rows, got {n}")));
    }
    if d == 0 {
        return Err(Error::invalid("pca needs at least one column"));
    }
    match target {
        PcaTarget::Variance(v) if !(v > 0.0 && v <= 1.0) => {
            return Err(Error::invalid(format!("variance target {v} outside (0, 1]")));
        }
        PcaTarget::Components(p) if p == 0 || p > n.min(d) => {
            return Err(Error::invalid(format!(
                "cannot keep {p} components from a {n}×{d} matrix"
            )));
        }
        _ => {}
    }
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::numerical("pca input contains non-finite values"));
    }
    let mean = DVector::from_iterator(d, m.column_iter().map(|c| c.sum() / n as f64));
    let mut centered = m.clone();
    for mut row in centered.row_iter_mut() {
        row -= mean.transpose();
    }
    let total: f64 = centered.iter().map(|v| v * v).sum::<f64>() / (n - 1) as f64;
    let svd = centered.svd(false, true);
    let v_t = svd
        .v_t
        .ok_or_else(|| Error::numerical("pca: singular value decomposition did not converge"))?;
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]).then(a.cmp(&b)));
    let variances: Vec<f64> = order
        .iter()
        .map(|&i| svd.singular_values[i].powi(2) / (n - 1) as f64)
        .collect();

    let p = match target {
        PcaTarget::Components(p) => p,
        PcaTarget::Variance(v) => {
            if total <= 0.0 {
                1
            } else {
                let mut acc = 0.0;
                let mut p = variances.len();
                for (i, var) in variances.iter().enumerate() {
                    acc += var;
                    if acc / total >= v - 1e-12 {
                        p = i + 1;
                        break;
                    }
                }
                p
            }
        }
    };
    let mut components = DMatrix::zeros(p, d);
    for (r, &i) in order.iter().take(p).enumerate() {
        let mut row = v_t.row(i).clone_owned();
        let pivot = row.iter().copied().fold(0.0f64, |acc, v| if v.abs() > acc.abs() { v } else { acc });
        if pivot < 0.0 {
            row.neg_mut();
        }
        components.set_row(r, &row);
    }
    Ok(Pca {
        mean,
        components,
        explained_variances: variances[..p].to_vec(),
        total_variance: total,
    })
}
