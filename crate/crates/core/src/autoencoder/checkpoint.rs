use std::path::Path;

use super::{AutoencoderModel, ModelConfig};
use crate::binio::{read_file, Reader, Writer};
use crate::error::{Error, Result};
use crate::trajdata::store::{read_norm, write_norm};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"ATAE";
pub const CHECKPOINT_VERSION: u32 = 1;

pub fn model_to_bytes(model: &AutoencoderModel) -> Vec<u8> {
    let c = &model.config;
    let mut w = Writer::new(CHECKPOINT_MAGIC, CHECKPOINT_VERSION);
    for v in [c.layers, c.hidden, c.heads, c.ff, c.features, c.max_len] {
        w.usize(v);
    }
    w.f64(c.dropout);
    write_norm(&mut w, &model.norm);
    let params = model.params();
    w.usize(params.len());
    for p in params {
        w.str(&p.name);
        w.u32(p.value.shape().len() as u32);
        for &d in p.value.shape() {
            w.usize(d);
        }
        w.f64s(p.value.data());
    }
    w.finish()
}

pub fn save_model(path: &Path, model: &AutoencoderModel) -> Result<()> {
    std::fs::write(path, model_to_bytes(model)).map_err(|e| Error::io(path, e))
}

pub fn model_from_bytes(bytes: &[u8]) -> Result<AutoencoderModel> {
    let mut r = Reader::open(bytes, CHECKPOINT_MAGIC, CHECKPOINT_VERSION, "checkpoint")?;
    let mut dims = [0usize; 6];
    for d in &mut dims {
        *d = r.usize()?;
    }
    let config = ModelConfig {
        layers: dims[0],
        hidden: dims[1],
        heads: dims[2],
        ff: dims[3],
        features: dims[4],
        max_len: dims[5],
        dropout: r.f64()?,
    };
    let norm = read_norm(&mut r)?;
    let mut model = AutoencoderModel::new(config, norm, 0)?;
    let count = r.usize()?;
    let expected = model.params().len();
    if count != expected {
        return Err(Error::shape(format!(
            "checkpoint holds {count} parameter tensors, configuration needs {expected}"
        )));
    }
    for p in model.params_mut() {
        let name = r.str()?;
        if name != p.name {
            return Err(Error::Format(format!("checkpoint: expected parameter {}, found {name}", p.name)));
        }
        let ndim = r.u32()? as usize;
        let shape = (0..ndim).map(|_| r.usize()).collect::<Result<Vec<_>>>()?;
        if shape != p.value.shape() {
            return Err(Error::shape(format!(
                "checkpoint parameter {name} has shape {shape:?}, configuration needs {:?}",
                p.value.shape()
            )));
        }
        let values = r.f64s(p.value.len())?;
        p.value.data_mut().copy_from_slice(&values);
    }
    r.finish()?;
    Ok(model)
}

pub fn load_model(path: &Path) -> Result<AutoencoderModel> {
    model_from_bytes(&read_file(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neuralcore::Tensor;
    use crate::trajdata::NormStats;

    fn model() -> AutoencoderModel {
        let cfg = ModelConfig {
            layers: 2,
            hidden: 8,
            heads: 2,
            ff: 16,
            dropout: 0.1,
            features: 3,
            max_len: 5,
        };
        AutoencoderModel::new(cfg, NormStats::min_max([1.0, 2.0, 3.0], [4.0, 5.0, 6.0]).unwrap(), 4).unwrap()
    }

    #[test]
    fn round_trip_reproduces_outputs_bitwise() {
        let m = model();
        let back = model_from_bytes(&model_to_bytes(&m)).unwrap();
        assert_eq!(back.config, m.config);
        assert_eq!(back.norm, m.norm);
        assert_eq!(back.fingerprint(), m.fingerprint());
        let x = Tensor::from_vec(&[1, 3, 5], (0..15).map(|i| i as f64 / 15.0).collect()).unwrap();
        let a = m.reconstruct(&x, None).unwrap();
        let b = back.reconstruct(&x, None).unwrap();
        assert!(a.data().iter().zip(b.data()).all(|(u, v)| u.to_bits() == v.to_bits()));
    }

    #[test]
    fn parameter_shape_disagreeing_with_config_is_rejected() {
        let mut m = model();
        m.config.features = 2;
        let err = model_from_bytes(&model_to_bytes(&m)).unwrap_err();
        assert!(matches!(err, Error::Shape(_)), "{err}");
    }

    #[test]
    fn wrong_magic_and_version_are_rejected() {
        let mut bytes = model_to_bytes(&model());
        bytes[4] = 9;
        assert!(matches!(model_from_bytes(&bytes), Err(Error::Version { found: 9, .. })));
        let mut bytes = model_to_bytes(&model());
        bytes[0] = b'X';
        assert!(model_from_bytes(&bytes).is_err());
    }

    #[test]
    fn truncated_file_is_rejected() {
        let bytes = model_to_bytes(&model());
        assert!(model_from_bytes(&bytes[..bytes.len() - 20]).is_err());
    }
}
