use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::neuralcore::Tensor;

const FEATURE_NAMES: [&str; 3] = ["lat", "lon", "alt"];

/// Position, velocity and acceleration rows (`F·S` values each, grouped by
/// feature) with one label per row.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct FeatureTables {
    pub labels: Vec<String>,
    pub position: Vec<Vec<f64>>,
    pub velocity: Vec<Vec<f64>>,
    pub acceleration: Vec<Vec<f64>>,
}

impl FeatureTables {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn extend(&mut self, other: FeatureTables) {
        self.labels.extend(other.labels);
        self.position.extend(other.position);
        self.velocity.extend(other.velocity);
        self.acceleration.extend(other.acceleration);
    }

    /// Writes `<prefix>position.csv`, `<prefix>velocity.csv` and
    /// `<prefix>acceleration.csv` into `dir`.
    pub fn write(&self, dir: &Path, prefix: &str) -> Result<()> {
        for (name, rows) in [
            ("position", &self.position),
            ("velocity", &self.velocity),
            ("acceleration", &self.acceleration),
        ] {
            write_feature_csv(&dir.join(format!("{prefix}{name}.csv")), &self.labels, rows)?;
        }
        Ok(())
    }
}

fn derivative(x: &[f64], dt: f64) -> Vec<f64> {
    let n = x.len();
    (0..n)
        .map(|j| match j {
            0 => (x[1] - x[0]) / dt,
            _ if j == n - 1 => (x[n - 1] - x[n - 2]) / dt,
            _ => (x[j + 1] - x[j - 1]) / (2.0 * dt),
        })
        .collect()
}

fn second_difference(x: &[f64], dt: f64) -> Vec<f64> {
    let n = x.len();
    let mut out: Vec<f64> = (0..n)
        .map(|j| {
            if j == 0 || j == n - 1 {
                0.0
            } else {
                (x[j + 1] - 2.0 * x[j] + x[j - 1]) / (dt * dt)
            }
        })
        .collect();
    out[0] = out[1];
    out[n - 1] = out[n - 2];
    out
}

/// Feature tables over the valid frames of each `F×S` sequence. Velocity is
/// the central first difference (one-sided at the ends), acceleration the
/// second difference with end values copied from their neighbours; frames
/// past the valid length are stationary and therefore zero in both.
pub fn export_embedding_features(data: &Tensor, lengths: &[usize], dt: f64, label: &str) -> Result<FeatureTables> {
    let s = data.shape();
    if s.len() != 3 || lengths.len() != s[0] {
        return Err(Error::shape(format!("expected N×F×S data with N lengths, got {s:?}")));
    }
    if !(dt > 0.0) {
        return Err(Error::invalid(format!("dt must be positive, got {dt}")));
    }
    let (f, steps) = (s[1], s[2]);
    let mut out = FeatureTables::default();
    for (i, &len) in lengths.iter().enumerate() {
        if len < 3 || len > steps {
            log::warn!("sequence {i} ({label}): valid length {len} unusable for difference features; skipped");
            continue;
        }
        let mut pos = Vec::with_capacity(f * steps);
        let mut vel = Vec::with_capacity(f * steps);
        let mut acc = Vec::with_capacity(f * steps);
        for c in 0..f {
            let row = &data.data()[(i * f + c) * steps..(i * f + c + 1) * steps];
            pos.extend_from_slice(row);
            let v = derivative(&row[..len], dt);
            let a = second_difference(&row[..len], dt);
            vel.extend(v.into_iter().chain(std::iter::repeat_n(0.0, steps - len)));
            acc.extend(a.into_iter().chain(std::iter::repeat_n(0.0, steps - len)));
        }
        out.labels.push(label.to_string());
        out.position.push(pos);
        out.velocity.push(vel);
        out.acceleration.push(acc);
    }
    Ok(out)
}

pub fn write_feature_csv(path: &Path, labels: &[String], rows: &[Vec<f64>]) -> Result<()> {
    let width = rows.first().map_or(0, |r| r.len());
    let per_feature = width / FEATURE_NAMES.len().max(1);
    let mut text = String::from("label");
    for k in 0..width {
        let name = if per_feature > 0 && width.is_multiple_of(FEATURE_NAMES.len()) {
            format!("{}_{}", FEATURE_NAMES[k / per_feature], k % per_feature)
        } else {
            format!("x{k}")
        };
        text.push(',');
        text.push_str(&name);
    }
    text.push('\n');
    for (label, row) in labels.iter().zip(rows) {
        text.push_str(label);
        for v in row {
            write!(text, ",{v}").unwrap();
        }
        text.push('\n');
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single(f: impl Fn(usize, f64) -> f64, len: usize, steps: usize, dt: f64) -> Tensor {
        let mut v = Vec::new();
        for c in 0..3 {
            for j in 0..steps {
                v.push(f(c, j.min(len - 1) as f64 * dt));
            }
        }
        Tensor::from_vec(&[1, 3, steps], v).unwrap()
    }

    #[test]
    fn constant_sequence_has_no_motion() {
        let t = export_embedding_features(&single(|c, _| c as f64, 8, 10, 6.0), &[8], 6.0, "real").unwrap();
        assert!(t.velocity[0].iter().all(|&v| v == 0.0));
        assert!(t.acceleration[0].iter().all(|&v| v == 0.0));
        assert_eq!(t.position[0].len(), 30);
    }

    #[test]
    fn straight_line_has_constant_velocity() {
        let dt = 6.0;
        let data = single(|c, t| 1.0 + (c as f64 + 1.0) * 0.01 * t, 10, 10, dt);
        let t = export_embedding_features(&data, &[10], dt, "real").unwrap();
        for c in 0..3 {
            for j in 0..10 {
                assert!((t.velocity[0][c * 10 + j] - (c as f64 + 1.0) * 0.01).abs() < 1e-12);
                assert!(t.acceleration[0][c * 10 + j].abs() < 1e-12);
            }
        }
    }

    #[test]
    fn quadratic_has_constant_acceleration() {
        let dt = 6.0;
        let a = [0.003, -0.002, 0.5];
        let data = single(|c, t| 2.0 + 0.1 * t + a[c] * t * t, 12, 12, dt);
        let tab = export_embedding_features(&data, &[12], dt, "generated").unwrap();
        for (c, &ac) in a.iter().enumerate() {
            for j in 0..12 {
                assert!((tab.acceleration[0][c * 12 + j] - 2.0 * ac).abs() < 1e-8, "c={c} j={j}");
            }
            // central differences are exact for quadratics at interior points
            for j in 1..11 {
                let t = j as f64 * dt;
                assert!((tab.velocity[0][c * 12 + j] - (0.1 + 2.0 * ac * t)).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn short_sequences_are_skipped() {
        let data = Tensor::zeros(&[2, 3, 5]);
        let t = export_embedding_features(&data, &[2, 5], 1.0, "real").unwrap();
        assert_eq!(t.len(), 1);
    }

    #[test]
    fn csv_has_labels_and_named_columns() {
        let dir = tempfile::tempdir().unwrap();
        let mut t = export_embedding_features(&Tensor::zeros(&[1, 3, 4]), &[4], 1.0, "real").unwrap();
        t.extend(export_embedding_features(&Tensor::zeros(&[1, 3, 4]), &[4], 1.0, "generated").unwrap());
        t.write(dir.path(), "").unwrap();
        let text = std::fs::read_to_string(dir.path().join("velocity.csv")).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert!(lines[0].starts_with("label,lat_0,lat_1"));
        assert!(lines[0].ends_with("alt_3"));
        assert!(lines[1].starts_with("real,") && lines[2].starts_with("generated,"));
    }
}
