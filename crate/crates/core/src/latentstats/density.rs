use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::gmm::{gmm_sample, select_k_by_bic, BicSelection, EmConfig, Gmm};
use super::pca::{pca_fit, Pca, PcaTarget};
use super::{flatten_latents, LatentMatrix};
use crate::binio::{read_file, Reader, Writer};
use crate::error::{Error, Result};
use crate::trajdata::ResampledDataset;

pub const LATENT_MAGIC: &[u8; 4] = b"ATLD";
pub const LATENT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LatentFitConfig {
    pub variance_target: f64,
    pub k_candidates: Vec<usize>,
    pub em: EmConfig,
    pub seed: u64,
}

impl Default for LatentFitConfig {
    fn default() -> Self {
        LatentFitConfig {
            variance_target: 0.99,
            k_candidates: vec![1, 2, 4, 8, 16, 32],
            em: EmConfig::default(),
            seed: 0,
        }
    }
}

/// PCA reduction plus a mixture over the reduced coordinates.
#[derive(Clone, Debug, PartialEq)]
pub struct LatentDensityModel {
    pub pca: Pca,
    pub gmm: Gmm,
    /// Row layout of the modelled matrix: `hidden` values per timestep.
    pub hidden: usize,
    pub steps: usize,
    pub provenance: Vec<(String, String)>,
}

impl LatentDensityModel {
    /// Projects, selects `K` by BIC and fits the mixture.
    pub fn fit(
        latents: &LatentMatrix,
        cfg: &LatentFitConfig,
        provenance: Vec<(String, String)>,
    ) -> Result<(Self, BicSelection)> {
        let pca = pca_fit(&latents.rows, PcaTarget::Variance(cfg.variance_target))?;
        let reduced = pca.project(&latents.rows)?;
        let sel = select_k_by_bic(&reduced, &cfg.k_candidates, cfg.seed, &cfg.em)?;
        log::info!(
            "latent model: P = {} ({:.4} of variance), K = {}",
            pca.n_components(),
            pca.explained_ratio(),
            sel.best_k
        );
        let mut provenance = provenance;
        provenance.push(("seed".into(), cfg.seed.to_string()));
        let model = LatentDensityModel {
            pca,
            gmm: sel.fit.gmm.clone(),
            hidden: latents.hidden,
            steps: latents.steps,
            provenance,
        };
        model.validate()?;
        Ok((model, sel))
    }

    pub fn validate(&self) -> Result<()> {
        self.gmm.validate()?;
        if self.gmm.dim() != self.pca.n_components() {
            return Err(Error::shape(format!(
                "mixture dimension {} differs from {} retained components",
                self.gmm.dim(),
                self.pca.n_components()
            )));
        }
        if self.pca.dim() != self.hidden * self.steps {
            return Err(Error::shape(format!(
                "component width {} cannot hold {}×{}",
                self.pca.dim(),
                self.hidden,
                self.steps
            )));
        }
        Ok(())
    }

    pub fn provenance_value(&self, key: &str) -> Option<&str> {
        self.provenance.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    /// Samples reduced vectors and maps them back to full rows.
    pub fn generate(&self, count: usize, seed: u64) -> Result<LatentMatrix> {
        let y = gmm_sample(&self.gmm, count, seed)?;
        LatentMatrix::new(self.pca.invert(&y)?, self.hidden, self.steps)
    }
}

/// The same density model fitted directly on flattened normalised
/// trajectories, without an autoencoder.
pub fn fit_input_space(ds: &ResampledDataset, cfg: &LatentFitConfig) -> Result<(LatentDensityModel, BicSelection)> {
    let rows = flatten_latents(&ds.data)?;
    LatentDensityModel::fit(&rows, cfg, vec![("space".into(), "input".into())])
}

pub fn latent_model_to_bytes(m: &LatentDensityModel) -> Vec<u8> {
    let p = m.pca.n_components();
    let k = m.gmm.k();
    let mut w = Writer::new(LATENT_MAGIC, LATENT_VERSION);
    w.usize(p);
    w.usize(k);
    w.usize(m.hidden);
    w.usize(m.steps);
    w.f64s(m.pca.mean.as_slice());
    // row-major components
    w.f64s(m.pca.components.transpose().as_slice());
    w.f64s(&m.pca.explained_variances);
    w.f64(m.pca.total_variance);
    w.f64s(&m.gmm.weights);
    for mu in &m.gmm.means {
        w.f64s(mu.as_slice());
    }
    for c in &m.gmm.covariances {
        w.f64s(c.transpose().as_slice());
    }
    w.usize(m.provenance.len());
    for (key, value) in &m.provenance {
        w.str(key);
        w.str(value);
    }
    w.finish()
}

pub fn save_latent_model(path: &Path, m: &LatentDensityModel) -> Result<()> {
    std::fs::write(path, latent_model_to_bytes(m)).map_err(|e| Error::io(path, e))
}

pub fn latent_model_from_bytes(bytes: &[u8]) -> Result<LatentDensityModel> {
    let mut r = Reader::open(bytes, LATENT_MAGIC, LATENT_VERSION, "latent model")?;
    let p = r.usize()?;
    let k = r.usize()?;
    let hidden = r.usize()?;
    let steps = r.usize()?;
    let d = hidden
        .checked_mul(steps)
        .filter(|d| p.checked_mul(*d).is_some() && k.checked_mul(p * p).is_some())
        .ok_or_else(|| Error::Format("latent model: dimensions overflow".into()))?;
    let mean = DVector::from_vec(r.f64s(d)?);
    let components = DMatrix::from_row_slice(p, d, &r.f64s(p * d)?);
    let explained_variances = r.f64s(p)?;
    let total_variance = r.f64()?;
    let weights = r.f64s(k)?;
    let means = (0..k).map(|_| Ok(DVector::from_vec(r.f64s(p)?))).collect::<Result<Vec<_>>>()?;
    let covariances = (0..k)
        .map(|_| Ok(DMatrix::from_row_slice(p, p, &r.f64s(p * p)?)))
        .collect::<Result<Vec<_>>>()?;
    let n_prov = r.usize()?;
    let provenance = (0..n_prov).map(|_| Ok((r.str()?, r.str()?))).collect::<Result<Vec<_>>>()?;
    r.finish()?;
    let m = LatentDensityModel {
        pca: Pca {
            mean,
            components,
            explained_variances,
            total_variance,
        },
        gmm: Gmm {
            weights,
            means,
            covariances,
        },
        hidden,
        steps,
        provenance,
    };
    m.validate()?;
    Ok(m)
}

pub fn load_latent_model(path: &Path) -> Result<LatentDensityModel> {
    latent_model_from_bytes(&read_file(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neuralcore::Tensor;
    use crate::trajdata::NormStats;

    fn latents() -> LatentMatrix {
        // two clusters along a 2-D subspace of a 3×4 latent grid
        let rows = DMatrix::from_fn(80, 12, |i, j| {
            let c = if i % 2 == 0 { 1.0 } else { -1.0 };
            let a = ((i * 13) % 17) as f64 / 17.0 - 0.5;
            let b = ((i * 7) % 11) as f64 / 11.0 - 0.5;
            c * (j as f64 * 0.3 + 1.0) + a * (j as f64).sin() + b * 0.1 * (j as f64).cos()
        });
        LatentMatrix::new(rows, 3, 4).unwrap()
    }

    fn cfg() -> LatentFitConfig {
        LatentFitConfig {
            k_candidates: vec![1, 2, 3],
            seed: 4,
            ..LatentFitConfig::default()
        }
    }

    #[test]
    fn fit_and_generate() {
        let (m, sel) = LatentDensityModel::fit(&latents(), &cfg(), vec![("ae".into(), "abc".into())]).unwrap();
        assert!(m.pca.n_components() <= 3);
        assert_eq!(m.gmm.k(), sel.best_k);
        assert_eq!(m.provenance_value("ae"), Some("abc"));
        assert_eq!(m.provenance_value("seed"), Some("4"));
        let g = m.generate(25, 9).unwrap();
        assert_eq!((g.rows.nrows(), g.rows.ncols()), (25, 12));
        assert_eq!(g, m.generate(25, 9).unwrap());
        assert_ne!(g, m.generate(25, 10).unwrap());
    }

    #[test]
    fn file_round_trip_is_exact() {
        let (m, _) = LatentDensityModel::fit(&latents(), &cfg(), vec![("ae".into(), "f00".into())]).unwrap();
        let back = latent_model_from_bytes(&latent_model_to_bytes(&m)).unwrap();
        assert_eq!(back, m);
    }

    #[test]
    fn corrupt_file_is_rejected() {
        let (m, _) = LatentDensityModel::fit(&latents(), &cfg(), vec![]).unwrap();
        let mut bytes = latent_model_to_bytes(&m);
        let mid = bytes.len() / 2;
        bytes[mid] ^= 0x10;
        assert!(latent_model_from_bytes(&bytes).is_err());
        let mut bytes = latent_model_to_bytes(&m);
        bytes[4] = 2;
        assert!(matches!(latent_model_from_bytes(&bytes), Err(Error::Version { found: 2, .. })));
    }

    #[test]
    fn input_space_model_is_finite_and_deterministic() {
        let n = 40;
        let s = 6;
        let mut data = Vec::new();
        for i in 0..n {
            for f in 0..3 {
                for j in 0..s {
                    data.push(0.5 + 0.4 * ((i % 4) as f64 * 0.5 + j as f64 * 0.2 + f as f64).sin() + 0.01 * ((i * 31 + j * 7 + f) % 13) as f64);
                }
            }
        }
        let ds = ResampledDataset::new(
            Tensor::from_vec(&[n, 3, s], data).unwrap(),
            vec![s; n],
            NormStats::min_max([0.0; 3], [1.0; 3]).unwrap(),
            6.0,
        )
        .unwrap();
        let (m, _) = fit_input_space(&ds, &cfg()).unwrap();
        let g = m.generate(10, 1).unwrap();
        assert!(g.rows.iter().all(|v| v.is_finite()));
        assert_eq!((g.hidden, g.steps), (3, s));
        assert_eq!(g, m.generate(10, 1).unwrap());
    }
}
