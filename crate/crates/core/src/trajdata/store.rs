use std::path::Path;

use super::{NormMode, NormStats, ResampledDataset, FEATURES};
use crate::binio::{read_file, Reader, Writer};
use crate::error::{Error, Result};
use crate::neuralcore::Tensor;

pub const DATASET_MAGIC: &[u8; 4] = b"ATRD";
pub const DATASET_VERSION: u32 = 1;

pub(crate) fn write_norm(w: &mut Writer, n: &NormStats) {
    w.u8(n.mode.code());
    w.f64s(&n.offset);
    w.f64s(&n.scale_ref);
}

pub(crate) fn read_norm(r: &mut Reader) -> Result<NormStats> {
    let mode = NormMode::from_code(r.u8()?)?;
    let offset: [f64; FEATURES] = r.f64s(FEATURES)?.try_into().unwrap();
    let scale_ref: [f64; FEATURES] = r.f64s(FEATURES)?.try_into().unwrap();
    let n = NormStats {
        mode,
        offset,
        scale_ref,
    };
    n.validate()?;
    Ok(n)
}

pub fn dataset_bytes(ds: &ResampledDataset) -> Vec<u8> {
    let mut w = Writer::new(DATASET_MAGIC, DATASET_VERSION);
    for &d in ds.data.shape() {
        w.usize(d);
    }
    w.f64(ds.dt);
    write_norm(&mut w, &ds.norm);
    for &l in &ds.lengths {
        w.usize(l);
    }
    w.f64s(ds.data.data());
    w.finish()
}

pub fn write_dataset(path: &Path, ds: &ResampledDataset) -> Result<()> {
    std::fs::write(path, dataset_bytes(ds)).map_err(|e| Error::io(path, e))
}

pub fn dataset_from_bytes(bytes: &[u8]) -> Result<ResampledDataset> {
    let mut r = Reader::open(bytes, DATASET_MAGIC, DATASET_VERSION, "dataset")?;
    let n = r.usize()?;
    let f = r.usize()?;
    let s = r.usize()?;
    if f != FEATURES {
        return Err(Error::Format(format!("dataset: feature count {f}, expected {FEATURES}")));
    }
    let dt = r.f64()?;
    let norm = read_norm(&mut r)?;
    let lengths = (0..n).map(|_| r.usize()).collect::<Result<Vec<_>>>()?;
    let total = n
        .checked_mul(f)
        .and_then(|v| v.checked_mul(s))
        .ok_or_else(|| Error::Format("dataset: dimensions overflow".into()))?;
    let data = r.f64s(total)?;
    r.finish()?;
    ResampledDataset::new(Tensor::from_vec(&[n, f, s], data)?, lengths, norm, dt)
}

pub fn load_dataset(path: &Path) -> Result<ResampledDataset> {
    dataset_from_bytes(&read_file(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> ResampledDataset {
        let data: Vec<f64> = (0..2 * 3 * 4).map(|i| (i as f64 * 0.37).sin() * 0.5 + 0.5).collect();
        ResampledDataset::new(
            Tensor::from_vec(&[2, 3, 4], data).unwrap(),
            vec![4, 2],
            NormStats::min_max([30.0, 120.0, 0.0], [31.0, 121.0, 9000.0]).unwrap(),
            6.0,
        )
        .unwrap()
    }

    #[test]
    fn round_trip_is_bitwise() {
        let ds = tiny();
        let back = dataset_from_bytes(&dataset_bytes(&ds)).unwrap();
        assert_eq!(back, ds);
        let a: Vec<u64> = ds.data.data().iter().map(|v| v.to_bits()).collect();
        let b: Vec<u64> = back.data.data().iter().map(|v| v.to_bits()).collect();
        assert_eq!(a, b);
    }

    #[test]
    fn corrupted_magic_is_rejected() {
        let mut bytes = dataset_bytes(&tiny());
        bytes[1] ^= 0x20;
        assert!(matches!(dataset_from_bytes(&bytes), Err(Error::Format(_))));
    }

    #[test]
    fn version_mismatch_names_versions() {
        let mut bytes = dataset_bytes(&tiny());
        bytes[4] = 7;
        let msg = dataset_from_bytes(&bytes).unwrap_err().to_string();
        assert!(msg.contains('7') && msg.contains('1'), "{msg}");
    }

    #[test]
    fn any_corrupted_header_byte_is_rejected() {
        let clean = dataset_bytes(&tiny());
        for i in 8..8 + 3 * 8 + 8 + 1 + 48 {
            let mut bytes = clean.clone();
            bytes[i] ^= 0x01;
            assert!(dataset_from_bytes(&bytes).is_err(), "byte {i}");
        }
    }
}
