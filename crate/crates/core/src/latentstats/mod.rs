//! Density modelling of flattened latent sequences: PCA reduction, Gaussian
//! mixtures fitted by EM with BIC model selection, sampling, and the SMOTE
//! and input-space mixture baselines.

mod density;
mod gmm;
mod pca;
mod smote;

pub use density::{
    fit_input_space, latent_model_from_bytes, latent_model_to_bytes, load_latent_model, save_latent_model,
    LatentDensityModel, LatentFitConfig, LATENT_MAGIC, LATENT_VERSION,
};
pub use gmm::{
    gmm_fit_em, gmm_loglik, gmm_sample, kmeans_plus_plus, select_k_by_bic, BicEntry, BicSelection, EmConfig, Gmm, GmmFit,
    COVARIANCE_FLOOR,
};
pub use pca::{pca_fit, Pca, PcaTarget};
pub use smote::{nearest_neighbors, smote_generate, smote_latent, SmoteMode};

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::neuralcore::Tensor;

/// `N × (D·S)` rows of concatenated per-timestep latent vectors.
#[derive(Clone, Debug, PartialEq)]
pub struct LatentMatrix {
    pub rows: DMatrix<f64>,
    pub hidden: usize,
    pub steps: usize,
}

impl LatentMatrix {
    pub fn new(rows: DMatrix<f64>, hidden: usize, steps: usize) -> Result<Self> {
        if rows.ncols() != hidden * steps {
            return Err(Error::shape(format!(
                "latent rows of width {} cannot hold {hidden}×{steps}",
                rows.ncols()
            )));
        }
        if rows.nrows() == 0 {
            return Err(Error::invalid("latent matrix needs at least one row"));
        }
        if rows.iter().any(|v| !v.is_finite()) {
            return Err(Error::numerical("latent matrix contains non-finite values"));
        }
        Ok(LatentMatrix { rows, hidden, steps })
    }

    pub fn len(&self) -> usize {
        self.rows.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.nrows() == 0
    }
}

/// Channel-major `N×D×S` latents to timestep-major rows `z₁ ⊕ z₂ ⊕ … ⊕ z_S`.
pub fn flatten_latents(z: &Tensor) -> Result<LatentMatrix> {
    let s = z.shape();
    if s.len() != 3 {
        return Err(Error::shape(format!("latents must be N×D×S, got {s:?}")));
    }
    let (n, d, steps) = (s[0], s[1], s[2]);
    let src = z.data();
    let rows = DMatrix::from_fn(n, d * steps, |i, c| {
        let (t, k) = (c / d, c % d);
        src[i * d * steps + k * steps + t]
    });
    LatentMatrix::new(rows, d, steps)
}

pub fn unflatten_latents(m: &LatentMatrix) -> Tensor {
    let (n, d, steps) = (m.len(), m.hidden, m.steps);
    let mut out = vec![0.0; n * d * steps];
    for i in 0..n {
        for t in 0..steps {
            for k in 0..d {
                out[i * d * steps + k * steps + t] = m.rows[(i, t * d + k)];
            }
        }
    }
    Tensor::from_vec(&[n, d, steps], out).unwrap()
}
