//! Trajectory data model, CSV ingestion, resampling to a uniform time grid,
//! normalisation, padding and dataset persistence.

mod csvio;
mod pchip;
pub(crate) mod store;

pub use csvio::{read_csv, read_csv_from, write_csv, write_csv_to};
pub use pchip::{pchip_slopes, uniform_grid, Pchip};
pub use store::{load_dataset, write_dataset, DATASET_MAGIC, DATASET_VERSION};

use crate::error::{Error, Result};
use crate::neuralcore::Tensor;

/// Number of per-point features: latitude, longitude, altitude.
pub const FEATURES: usize = 3;
/// Lowest altitude accepted, in feet.
pub const MIN_ALT_FT: f64 = -1500.0;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrajectoryPoint {
    /// Seconds since epoch.
    pub t: f64,
    /// Degrees.
    pub lat: f64,
    /// Degrees.
    pub lon: f64,
    /// Feet.
    pub alt: f64,
}

impl TrajectoryPoint {
    pub fn new(t: f64, lat: f64, lon: f64, alt: f64) -> Self {
        TrajectoryPoint { t, lat, lon, alt }
    }

    pub fn validate(&self) -> Result<()> {
        if !self.t.is_finite() {
            return Err(Error::invalid(format!("non-finite timestamp {}", self.t)));
        }
        if !(-90.0..=90.0).contains(&self.lat) {
            return Err(Error::invalid(format!("latitude {} outside [-90, 90]", self.lat)));
        }
        if !(-180.0..=180.0).contains(&self.lon) {
            return Err(Error::invalid(format!("longitude {} outside [-180, 180]", self.lon)));
        }
        if !(self.alt >= MIN_ALT_FT) || !self.alt.is_finite() {
            return Err(Error::invalid(format!("altitude {} ft below {MIN_ALT_FT}", self.alt)));
        }
        Ok(())
    }

    pub fn features(&self) -> [f64; FEATURES] {
        [self.lat, self.lon, self.alt]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub flight_id: String,
    points: Vec<TrajectoryPoint>,
}

impl Trajectory {
    pub fn new(flight_id: impl Into<String>, points: Vec<TrajectoryPoint>) -> Result<Self> {
        let flight_id = flight_id.into();
        if points.len() < 2 {
            return Err(Error::invalid(format!(
                "flight {flight_id}: need at least 2 points, got {}",
                points.len()
            )));
        }
        for (i, p) in points.iter().enumerate() {
            p.validate()
                .map_err(|e| Error::invalid(format!("flight {flight_id} point {i}: {e}")))?;
        }
        if let Some(i) = points.windows(2).position(|w| !(w[1].t > w[0].t)) {
            return Err(Error::invalid(format!(
                "flight {flight_id}: timestamps not strictly increasing at point {}",
                i + 1
            )));
        }
        Ok(Trajectory { flight_id, points })
    }

    pub fn points(&self) -> &[TrajectoryPoint] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn duration(&self) -> f64 {
        self.points[self.points.len() - 1].t - self.points[0].t
    }

    /// Copy with every timestamp shifted by `offset` seconds.
    pub fn shifted(&self, offset: f64) -> Trajectory {
        let points = self
            .points
            .iter()
            .map(|p| TrajectoryPoint { t: p.t + offset, ..*p })
            .collect();
        Trajectory {
            flight_id: self.flight_id.clone(),
            points,
        }
    }
}

/// Resamples every feature independently onto `t0, t0+dt, …` with PCHIP.
pub fn pchip_resample(traj: &Trajectory, dt: f64) -> Result<Trajectory> {
    if !(dt > 0.0) || !dt.is_finite() {
        return Err(Error::invalid(format!("resampling interval must be positive, got {dt}")));
    }
    let duration = traj.duration();
    if dt > duration {
        return Err(Error::invalid(format!(
            "flight {}: resampling interval {dt} s exceeds duration {duration} s",
            traj.flight_id
        )));
    }
    let t: Vec<f64> = traj.points.iter().map(|p| p.t).collect();
    let interp: Vec<Pchip> = (0..FEATURES)
        .map(|f| {
            let y: Vec<f64> = traj.points.iter().map(|p| p.features()[f]).collect();
            Pchip::new(&t, &y)
        })
        .collect::<Result<_>>()?;
    let grid = uniform_grid(t[0], t[t.len() - 1], dt);
    let points = grid
        .iter()
        .map(|&tq| {
            let v: Vec<f64> = interp.iter().map(|p| p.eval(tq).expect("grid inside data range")).collect();
            TrajectoryPoint::new(tq, v[0], v[1], v[2])
        })
        .collect();
    Trajectory::new(traj.flight_id.clone(), points)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NormMode {
    /// Per-feature min–max scaling to `[0, 1]`.
    MinMax,
    /// Per-feature standardisation.
    ZScore,
}

impl NormMode {
    fn code(self) -> u8 {
        match self {
            NormMode::MinMax => 0,
            NormMode::ZScore => 1,
        }
    }

    fn from_code(c: u8) -> Result<Self> {
        match c {
            0 => Ok(NormMode::MinMax),
            1 => Ok(NormMode::ZScore),
            _ => Err(Error::Format(format!("unknown normalisation mode {c}"))),
        }
    }
}

/// Per-feature normalisation statistics: `(min, max)` or `(mean, std)`.
#[derive(Clone, Debug, PartialEq)]
pub struct NormStats {
    pub mode: NormMode,
    pub offset: [f64; FEATURES],
    pub scale_ref: [f64; FEATURES],
}

impl NormStats {
    pub fn min_max(min: [f64; FEATURES], max: [f64; FEATURES]) -> Result<Self> {
        let s = NormStats {
            mode: NormMode::MinMax,
            offset: min,
            scale_ref: max,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn z_score(mean: [f64; FEATURES], std: [f64; FEATURES]) -> Result<Self> {
        let s = NormStats {
            mode: NormMode::ZScore,
            offset: mean,
            scale_ref: std,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        for f in 0..FEATURES {
            let ok = match self.mode {
                NormMode::MinMax => self.scale_ref[f] > self.offset[f],
                NormMode::ZScore => self.scale_ref[f] > 0.0,
            };
            if !ok || !self.offset[f].is_finite() || !self.scale_ref[f].is_finite() {
                return Err(Error::invalid(format!(
                    "degenerate normalisation for feature {f}: {:?} {} / {}",
                    self.mode, self.offset[f], self.scale_ref[f]
                )));
            }
        }
        Ok(())
    }

    /// Fits statistics over every frame of every trajectory.
    pub fn fit(trajs: &[Trajectory], mode: NormMode) -> Result<Self> {
        let frames = trajs.iter().flat_map(|t| t.points.iter().map(|p| p.features()));
        match mode {
            NormMode::MinMax => {
                let mut lo = [f64::INFINITY; FEATURES];
                let mut hi = [f64::NEG_INFINITY; FEATURES];
                for fr in frames {
                    for f in 0..FEATURES {
                        lo[f] = lo[f].min(fr[f]);
                        hi[f] = hi[f].max(fr[f]);
                    }
                }
                NormStats::min_max(lo, hi)
            }
            NormMode::ZScore => {
                let all: Vec<[f64; FEATURES]> = frames.collect();
                let n = all.len() as f64;
                let mut mean = [0.0; FEATURES];
                let mut std = [0.0; FEATURES];
                for f in 0..FEATURES {
                    mean[f] = all.iter().map(|r| r[f]).sum::<f64>() / n;
                    std[f] = (all.iter().map(|r| (r[f] - mean[f]).powi(2)).sum::<f64>() / n).sqrt();
                }
                NormStats::z_score(mean, std)
            }
        }
    }

    fn span(&self, f: usize) -> f64 {
        match self.mode {
            NormMode::MinMax => self.scale_ref[f] - self.offset[f],
            NormMode::ZScore => self.scale_ref[f],
        }
    }

    pub fn normalize_value(&self, f: usize, v: f64) -> f64 {
        (v - self.offset[f]) / self.span(f)
    }

    pub fn denormalize_value(&self, f: usize, v: f64) -> f64 {
        v * self.span(f) + self.offset[f]
    }

    /// Physical size of one normalised unit of feature `f`.
    pub fn unit(&self, f: usize) -> f64 {
        self.span(f)
    }
}

fn map_features(data: &Tensor, norm: &NormStats, op: impl Fn(usize, f64) -> f64) -> Result<Tensor> {
    norm.validate()?;
    let shape = data.shape();
    if shape.len() != 3 || shape[1] != FEATURES {
        return Err(Error::shape(format!(
            "expected an N×{FEATURES}×S array, got {shape:?}"
        )));
    }
    let steps = shape[2];
    let mut out = data.clone();
    for (i, v) in out.data_mut().iter_mut().enumerate() {
        let f = (i / steps) % FEATURES;
        *v = op(f, *v);
    }
    Ok(out)
}

/// Maps a normalised `N×F×S` array back to physical units.
pub fn denormalize(data: &Tensor, norm: &NormStats) -> Result<Tensor> {
    map_features(data, norm, |f, v| norm.denormalize_value(f, v))
}

/// Maps a physical `N×F×S` array into normalised units.
pub fn normalize(data: &Tensor, norm: &NormStats) -> Result<Tensor> {
    map_features(data, norm, |f, v| norm.normalize_value(f, v))
}

/// Fixed-rate, padded, normalised trajectory tensor `N×F×S`.
#[derive(Clone, Debug, PartialEq)]
pub struct ResampledDataset {
    pub data: Tensor,
    pub lengths: Vec<usize>,
    pub norm: NormStats,
    pub dt: f64,
}

impl ResampledDataset {
    pub fn new(data: Tensor, lengths: Vec<usize>, norm: NormStats, dt: f64) -> Result<Self> {
        let ds = ResampledDataset { data, lengths, norm, dt };
        ds.validate()?;
        Ok(ds)
    }

    pub fn validate(&self) -> Result<()> {
        let shape = self.data.shape();
        if shape.len() != 3 || shape[1] != FEATURES {
            return Err(Error::shape(format!("dataset array must be N×{FEATURES}×S, got {shape:?}")));
        }
        if self.lengths.len() != shape[0] {
            return Err(Error::shape(format!(
                "{} lengths for {} sequences",
                self.lengths.len(),
                shape[0]
            )));
        }
        if let Some(i) = self.lengths.iter().position(|&l| l == 0 || l > shape[2]) {
            return Err(Error::invalid(format!(
                "sequence {i}: length {} outside [1, {}]",
                self.lengths[i], shape[2]
            )));
        }
        if !(self.dt > 0.0) {
            return Err(Error::invalid(format!("dataset dt must be positive, got {}", self.dt)));
        }
        self.norm.validate()
    }

    pub fn len(&self) -> usize {
        self.data.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn max_len(&self) -> usize {
        self.data.shape()[2]
    }

    /// Sequence `i` as a time-major `[S, F]` tensor.
    pub fn sequence(&self, i: usize) -> Tensor {
        let block = FEATURES * self.max_len();
        crate::neuralcore::channels_to_time(&self.data.data()[i * block..(i + 1) * block], FEATURES, self.max_len())
    }

    /// Sub-dataset with the given rows, in order.
    pub fn select(&self, rows: &[usize]) -> ResampledDataset {
        let block = FEATURES * self.max_len();
        let mut data = Vec::with_capacity(rows.len() * block);
        for &r in rows {
            data.extend_from_slice(&self.data.data()[r * block..(r + 1) * block]);
        }
        ResampledDataset {
            data: Tensor::from_vec(&[rows.len(), FEATURES, self.max_len()], data).unwrap(),
            lengths: rows.iter().map(|&r| self.lengths[r]).collect(),
            norm: self.norm.clone(),
            dt: self.dt,
        }
    }

    /// Denormalised trajectories over valid frames, timestamps `k·dt`.
    pub fn to_trajectories(&self, id_prefix: &str) -> Result<Vec<Trajectory>> {
        arrays_to_trajectories(&self.data, &self.lengths, &self.norm, self.dt, id_prefix)
    }
}

/// Converts normalised `N×F×S` arrays into physical trajectories.
pub fn arrays_to_trajectories(
    data: &Tensor,
    lengths: &[usize],
    norm: &NormStats,
    dt: f64,
    id_prefix: &str,
) -> Result<Vec<Trajectory>> {
    let phys = denormalize(data, norm)?;
    let steps = data.shape()[2];
    let width = (data.shape()[0].max(1) - 1).to_string().len().max(5);
    lengths
        .iter()
        .enumerate()
        .map(|(i, &len)| {
            let base = i * FEATURES * steps;
            let d = phys.data();
            let points = (0..len)
                .map(|j| {
                    TrajectoryPoint::new(
                        j as f64 * dt,
                        d[base + j],
                        d[base + steps + j],
                        d[base + 2 * steps + j],
                    )
                })
                .collect();
            Trajectory::new(format!("{id_prefix}{i:0width$}"), points)
        })
        .collect()
}

/// Resamples, normalises (min–max) and pads a set of trajectories.
pub fn build_dataset(trajs: &[Trajectory], dt: f64, max_len: usize) -> Result<ResampledDataset> {
    build_dataset_with(trajs, dt, max_len, NormMode::MinMax)
}

pub fn build_dataset_with(trajs: &[Trajectory], dt: f64, max_len: usize, mode: NormMode) -> Result<ResampledDataset> {
    if trajs.is_empty() {
        return Err(Error::invalid("cannot build a dataset from zero trajectories"));
    }
    let resampled = resample_all(trajs, dt, max_len)?;
    let norm = NormStats::fit(&resampled, mode)?;
    let (data, lengths) = pad_normalized(&resampled, &norm, max_len)?;
    ResampledDataset::new(data, lengths, norm, dt)
}

/// Resamples, normalises with existing statistics and pads, so that further
/// trajectories can be compared against a dataset: `N×F×S` plus lengths.
pub fn trajectories_to_array(
    trajs: &[Trajectory],
    norm: &NormStats,
    dt: f64,
    max_len: usize,
) -> Result<(Tensor, Vec<usize>)> {
    if trajs.is_empty() {
        return Err(Error::invalid("no trajectories to convert"));
    }
    pad_normalized(&resample_all(trajs, dt, max_len)?, norm, max_len)
}

fn resample_all(trajs: &[Trajectory], dt: f64, max_len: usize) -> Result<Vec<Trajectory>> {
    if max_len == 0 {
        return Err(Error::invalid("max_len must be at least 1"));
    }
    let mut resampled = Vec::with_capacity(trajs.len());
    for t in trajs {
        let r = pchip_resample(t, dt)?;
        if r.len() > max_len {
            log::warn!(
                "flight {}: {} resampled points exceed max_len {max_len}; keeping the final {max_len}",
                r.flight_id,
                r.len()
            );
            let keep = r.points[r.len() - max_len..].to_vec();
            resampled.push(Trajectory {
                flight_id: r.flight_id,
                points: keep,
            });
        } else {
            resampled.push(r);
        }
    }
    Ok(resampled)
}

fn pad_normalized(resampled: &[Trajectory], norm: &NormStats, max_len: usize) -> Result<(Tensor, Vec<usize>)> {
    let mut data = Vec::with_capacity(resampled.len() * FEATURES * max_len);
    let mut lengths = Vec::with_capacity(resampled.len());
    for r in resampled {
        let len = r.len();
        for f in 0..FEATURES {
            for j in 0..max_len {
                let p = &r.points[j.min(len - 1)];
                data.push(norm.normalize_value(f, p.features()[f]));
            }
        }
        lengths.push(len);
    }
    Ok((Tensor::from_vec(&[resampled.len(), FEATURES, max_len], data)?, lengths))
}

/// Length of a decoded sequence once trailing near-stationary frames are
/// treated as padding: the last frame whose distance to the final frame
/// exceeds `tol` (in normalised units) is the final valid one.
pub fn infer_valid_length(seq_fs: &[f64], steps: usize, tol: f64) -> usize {
    let last: Vec<f64> = (0..FEATURES).map(|f| seq_fs[f * steps + steps - 1]).collect();
    for j in (0..steps).rev() {
        let d2: f64 = (0..FEATURES).map(|f| (seq_fs[f * steps + j] - last[f]).powi(2)).sum();
        if d2.sqrt() > tol {
            return (j + 2).min(steps);
        }
    }
    1
}

/// Replaces every frame at index `>= lengths[i]` with the last valid frame.
pub fn repad(data: &mut Tensor, lengths: &[usize]) {
    let steps = data.shape()[2];
    let block = FEATURES * steps;
    for (i, &len) in lengths.iter().enumerate() {
        let seq = &mut data.data_mut()[i * block..(i + 1) * block];
        for f in 0..FEATURES {
            let v = seq[f * steps + len - 1];
            seq[f * steps + len..f * steps + steps].iter_mut().for_each(|x| *x = v);
        }
    }
}
