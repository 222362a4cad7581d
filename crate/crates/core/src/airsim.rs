//! Toy terminal-airspace simulator.
//!
//! Arrivals fly constant-speed legs `entry → [vectoring dogleg] → intermediate
//! fix → FAF → runway threshold` with circular-arc turn blends, descend
//! linearly in path distance, and are reported at jittered intervals with
//! additive Gaussian noise. Geometry uses a flat-earth local frame around the
//! airspace centre.

use std::path::Path;

use rand::distributions::{Distribution, WeightedIndex};
use rand::{Rng as _, SeedableRng};
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::neuralcore::Rng;
use crate::trajdata::{Trajectory, TrajectoryPoint};

/// Distance along the final approach course between the FAF and the
/// intermediate fix where arrivals join it.
const INTERMEDIATE_FIX_NM: f64 = 3.0;
const THRESHOLD_ALT_FT: f64 = 50.0;

/// East/north nautical-mile coordinates around a reference point.
#[derive(Clone, Copy, Debug)]
pub struct LocalFrame {
    lat0: f64,
    lon0: f64,
    cos_lat: f64,
}

impl LocalFrame {
    pub fn new(lat0: f64, lon0: f64) -> Self {
        LocalFrame {
            lat0,
            lon0,
            cos_lat: lat0.to_radians().cos(),
        }
    }

    pub fn to_nm(&self, lat: f64, lon: f64) -> (f64, f64) {
        ((lon - self.lon0) * 60.0 * self.cos_lat, (lat - self.lat0) * 60.0)
    }

    pub fn to_latlon(&self, east: f64, north: f64) -> (f64, f64) {
        (self.lat0 + north / 60.0, self.lon0 + east / (60.0 * self.cos_lat))
    }

    pub fn distance_nm(&self, a: (f64, f64), b: (f64, f64)) -> f64 {
        let (ax, ay) = self.to_nm(a.0, a.1);
        let (bx, by) = self.to_nm(b.0, b.1);
        (ax - bx).hypot(ay - by)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AirspaceSpec {
    /// Airport reference point `(lat, lon)`; also the airspace centre.
    pub center: [f64; 2],
    pub radius_nm: f64,
    /// `(lat, lon, alt_ft)` of each entry point.
    pub entry_points: Vec<[f64; 3]>,
    /// `(lat, lon, alt_ft)` of the final approach fix.
    pub faf: [f64; 3],
    /// Landing direction, degrees true.
    pub runway_heading_deg: f64,
    pub pattern_weights: Vec<f64>,
}

impl AirspaceSpec {
    /// Three-entry toy terminal area used by the examples and tests.
    pub fn toy() -> Self {
        let frame = LocalFrame::new(37.46, 126.44);
        let at = |bearing_deg: f64, dist: f64| {
            let b = bearing_deg.to_radians();
            frame.to_latlon(dist * b.sin(), dist * b.cos())
        };
        let entry = |bearing: f64, alt: f64| {
            let (lat, lon) = at(bearing, 10.0);
            [lat, lon, alt]
        };
        let (faf_lat, faf_lon) = at(150.0, 4.0);
        AirspaceSpec {
            center: [37.46, 126.44],
            radius_nm: 10.0,
            entry_points: vec![entry(100.0, 6000.0), entry(200.0, 7000.0), entry(40.0, 8000.0)],
            faf: [faf_lat, faf_lon, 1500.0],
            runway_heading_deg: 330.0,
            pattern_weights: vec![0.5, 0.3, 0.2],
        }
    }

    pub fn frame(&self) -> LocalFrame {
        LocalFrame::new(self.center[0], self.center[1])
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.radius_nm > 0.0) {
            return Err(Error::invalid("airspace radius must be positive"));
        }
        if self.entry_points.is_empty() {
            return Err(Error::invalid("airspace needs at least one entry point"));
        }
        if self.pattern_weights.len() != self.entry_points.len() {
            return Err(Error::invalid(format!(
                "{} pattern weights for {} entry points",
                self.pattern_weights.len(),
                self.entry_points.len()
            )));
        }
        if self.pattern_weights.iter().any(|w| !(*w >= 0.0)) {
            return Err(Error::invalid("pattern weights must be non-negative"));
        }
        let sum: f64 = self.pattern_weights.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::invalid(format!("pattern weights sum to {sum}, not 1")));
        }
        let frame = self.frame();
        let centre = (self.center[0], self.center[1]);
        let faf = (self.faf[0], self.faf[1]);
        if frame.distance_nm(centre, faf) >= self.radius_nm {
            return Err(Error::invalid("FAF lies outside the airspace"));
        }
        for (i, e) in self.entry_points.iter().enumerate() {
            let d = frame.distance_nm(centre, (e[0], e[1]));
            if (d - self.radius_nm).abs() > 0.2 * self.radius_nm {
                return Err(Error::invalid(format!(
                    "entry point {i} is {d:.2} NM from the centre, not near the {} NM boundary",
                    self.radius_nm
                )));
            }
            if frame.distance_nm(faf, (e[0], e[1])) < 1e-6 {
                return Err(Error::invalid(format!("entry point {i} coincides with the FAF")));
            }
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let spec: AirspaceSpec = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("airspace spec serialises")
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_toml()).map_err(|e| Error::io(path, e))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    pub n_trajectories: usize,
    /// Nominal reporting interval, seconds.
    pub dt: f64,
    /// Additive noise standard deviation for `(lat deg, lon deg, alt ft)`.
    pub noise_std: [f64; 3],
    pub seed: u64,
    /// Probability of a radar-vectoring dogleg on the first leg.
    pub vector_prob: f64,
    /// Relative standard deviation of ground speed between flights.
    pub speed_spread: f64,
    /// Report-time jitter as a fraction of `dt`.
    pub report_jitter: f64,
    pub speed_kt: f64,
    pub turn_radius_nm: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            n_trajectories: 500,
            dt: 5.0,
            noise_std: [0.0005, 0.0005, 30.0],
            seed: 7,
            vector_prob: 0.5,
            speed_spread: 0.03,
            report_jitter: 0.5,
            speed_kt: 240.0,
            turn_radius_nm: 1.5,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_trajectories == 0 {
            return Err(Error::invalid("n_trajectories must be at least 1"));
        }
        if !(self.dt > 0.0) {
            return Err(Error::invalid("simulation dt must be positive"));
        }
        if self.noise_std.iter().any(|s| !(*s >= 0.0)) {
            return Err(Error::invalid("noise standard deviations must be non-negative"));
        }
        if !(0.0..=1.0).contains(&self.vector_prob) {
            return Err(Error::invalid("vector_prob must lie in [0, 1]"));
        }
        if !(0.0..0.9).contains(&self.report_jitter) {
            return Err(Error::invalid("report_jitter must lie in [0, 0.9)"));
        }
        if !(self.speed_spread >= 0.0 && self.speed_spread < 0.3) {
            return Err(Error::invalid("speed_spread must lie in [0, 0.3)"));
        }
        if !(self.speed_kt > 0.0 && self.turn_radius_nm >= 0.0) {
            return Err(Error::invalid("speed and turn radius must be positive"));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug)]
enum Segment {
    Line { a: (f64, f64), b: (f64, f64) },
    Arc { center: (f64, f64), radius: f64, start_angle: f64, sweep: f64 },
}

impl Segment {
    fn length(&self) -> f64 {
        match *self {
            Segment::Line { a, b } => (b.0 - a.0).hypot(b.1 - a.1),
            Segment::Arc { radius, sweep, .. } => radius * sweep.abs(),
        }
    }

    fn at(&self, s: f64) -> (f64, f64) {
        match *self {
            Segment::Line { a, b } => {
                let len = self.length();
                let f = if len > 0.0 { s / len } else { 0.0 };
                (a.0 + f * (b.0 - a.0), a.1 + f * (b.1 - a.1))
            }
            Segment::Arc { center, radius, start_angle, sweep } => {
                let ang = start_angle + sweep.signum() * s / radius;
                (center.0 + radius * ang.cos(), center.1 + radius * ang.sin())
            }
        }
    }
}

/// A flyable ground track built from waypoints with filleted turns.
struct GroundTrack {
    segments: Vec<Segment>,
    starts: Vec<f64>,
    length: f64,
    /// Path distance at which each waypoint is abeam (vertex or arc midpoint).
    waypoint_s: Vec<f64>,
}

fn unit(a: (f64, f64), b: (f64, f64)) -> ((f64, f64), f64) {
    let (dx, dy) = (b.0 - a.0, b.1 - a.1);
    let len = dx.hypot(dy);
    ((dx / len, dy / len), len)
}

impl GroundTrack {
    fn new(wps: &[(f64, f64)], turn_radius: f64) -> Self {
        let mut segments = Vec::new();
        let mut waypoint_s = vec![0.0];
        let mut cursor = wps[0];
        let mut s_total = 0.0;
        let push = |seg: Segment, segments: &mut Vec<Segment>, s_total: &mut f64| {
            *s_total += seg.length();
            segments.push(seg);
        };
        for i in 1..wps.len() - 1 {
            let (u_in, len_in) = unit(wps[i - 1], wps[i]);
            let (u_out, len_out) = unit(wps[i], wps[i + 1]);
            let cos = (u_in.0 * u_out.0 + u_in.1 * u_out.1).clamp(-1.0, 1.0);
            let phi = cos.acos();
            if phi < 1e-9 || turn_radius == 0.0 {
                push(Segment::Line { a: cursor, b: wps[i] }, &mut segments, &mut s_total);
                waypoint_s.push(s_total);
                cursor = wps[i];
                continue;
            }
            let tan_half = (phi / 2.0).tan();
            let d = (turn_radius * tan_half).min(0.5 * len_in).min(0.5 * len_out);
            let r = d / tan_half;
            let a = (wps[i].0 - d * u_in.0, wps[i].1 - d * u_in.1);
            let b = (wps[i].0 + d * u_out.0, wps[i].1 + d * u_out.1);
            let left = u_in.0 * u_out.1 - u_in.1 * u_out.0 > 0.0;
            let normal = if left { (-u_in.1, u_in.0) } else { (u_in.1, -u_in.0) };
            let center = (a.0 + r * normal.0, a.1 + r * normal.1);
            let start_angle = (a.1 - center.1).atan2(a.0 - center.0);
            let sweep = if left { phi } else { -phi };
            push(Segment::Line { a: cursor, b: a }, &mut segments, &mut s_total);
            waypoint_s.push(s_total + 0.5 * r * phi);
            push(Segment::Arc { center, radius: r, start_angle, sweep }, &mut segments, &mut s_total);
            cursor = b;
        }
        push(Segment::Line { a: cursor, b: *wps.last().unwrap() }, &mut segments, &mut s_total);
        waypoint_s.push(s_total);
        let mut starts = Vec::with_capacity(segments.len());
        let mut acc = 0.0;
        for seg in &segments {
            starts.push(acc);
            acc += seg.length();
        }
        GroundTrack {
            segments,
            starts,
            length: s_total,
            waypoint_s,
        }
    }

    fn at(&self, s: f64) -> (f64, f64) {
        let s = s.clamp(0.0, self.length);
        let i = match self.starts.binary_search_by(|v| v.total_cmp(&s)) {
            Ok(i) => i,
            Err(i) => i - 1,
        };
        self.segments[i].at(s - self.starts[i])
    }
}

/// One simulated arrival plus the latent choices that produced it.
#[derive(Clone, Debug)]
pub struct SimulatedFlight {
    pub trajectory: Trajectory,
    pub entry_index: usize,
    pub vectored: bool,
}

fn std_normal(rng: &mut Rng) -> f64 {
    StandardNormal.sample(rng)
}

/// Deterministic per-flight generator: stream `index` of the seeded ChaCha.
fn flight_rng(seed: u64, index: usize) -> Rng {
    let mut rng = Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    rng
}

pub fn simulate(spec: &AirspaceSpec, cfg: &SimConfig) -> Result<Vec<Trajectory>> {
    Ok(simulate_flights(spec, cfg)?.into_iter().map(|f| f.trajectory).collect())
}

pub fn simulate_flights(spec: &AirspaceSpec, cfg: &SimConfig) -> Result<Vec<SimulatedFlight>> {
    spec.validate()?;
    cfg.validate()?;
    let frame = spec.frame();
    let choose = WeightedIndex::new(&spec.pattern_weights).map_err(|e| Error::invalid(e.to_string()))?;
    let faf = frame.to_nm(spec.faf[0], spec.faf[1]);
    let threshold = (0.0, 0.0);
    let (course, faf_dist) = unit(faf, threshold);
    let intermediate = (
        faf.0 - INTERMEDIATE_FIX_NM * course.0,
        faf.1 - INTERMEDIATE_FIX_NM * course.1,
    );
    let width = (cfg.n_trajectories - 1).to_string().len().max(5);
    (0..cfg.n_trajectories)
        .map(|i| {
            let mut rng = flight_rng(cfg.seed, i);
            let entry_index = choose.sample(&mut rng);
            let e = spec.entry_points[entry_index];
            let entry = frame.to_nm(e[0], e[1]);
            let vectored = cfg.vector_prob > 0.0 && rng.gen::<f64>() < cfg.vector_prob;
            let mut wps = vec![entry];
            if vectored {
                let (u, len) = unit(entry, intermediate);
                let along = rng.gen_range(0.35..0.65) * len;
                let side = if rng.gen::<bool>() { 1.0 } else { -1.0 };
                let offset = side * rng.gen_range(1.0..2.5);
                wps.push((
                    entry.0 + along * u.0 - offset * u.1,
                    entry.1 + along * u.1 + offset * u.0,
                ));
            }
            wps.extend([intermediate, faf, threshold]);
            let path = GroundTrack::new(&wps, cfg.turn_radius_nm);
            let s_faf = path.waypoint_s[wps.len() - 2];
            debug_assert!(faf_dist > 0.0);

            let speed_factor = (1.0 + cfg.speed_spread * std_normal(&mut rng)).clamp(0.7, 1.3);
            let speed = cfg.speed_kt * speed_factor / 3600.0;
            let duration = path.length / speed;
            let mut times = vec![0.0];
            let mut k = 1;
            loop {
                let jitter = if cfg.report_jitter > 0.0 {
                    cfg.report_jitter * cfg.dt * (rng.gen::<f64>() - 0.5)
                } else {
                    0.0
                };
                let t = k as f64 * cfg.dt + jitter;
                if t >= duration - 0.25 * cfg.dt {
                    break;
                }
                times.push(t);
                k += 1;
            }
            times.push(duration);

            let altitude = |s: f64| -> f64 {
                if s <= s_faf {
                    e[2] + (spec.faf[2] - e[2]) * s / s_faf
                } else {
                    spec.faf[2] + (THRESHOLD_ALT_FT - spec.faf[2]) * (s - s_faf) / (path.length - s_faf)
                }
            };
            let points = times
                .iter()
                .map(|&t| {
                    let s = speed * t;
                    let (x, y) = path.at(s);
                    let (lat, lon) = frame.to_latlon(x, y);
                    TrajectoryPoint::new(
                        t,
                        lat + cfg.noise_std[0] * std_normal(&mut rng),
                        lon + cfg.noise_std[1] * std_normal(&mut rng),
                        altitude(s) + cfg.noise_std[2] * std_normal(&mut rng),
                    )
                })
                .collect();
            Ok(SimulatedFlight {
                trajectory: Trajectory::new(format!("sim-{i:0width$}"), points)?,
                entry_index,
                vectored,
            })
        })
        .collect()
}

/// Nearest entry point to each trajectory's first point; ties go to the lower index.
pub fn label_patterns(trajs: &[Trajectory], spec: &AirspaceSpec) -> Result<Vec<usize>> {
    let frame = spec.frame();
    trajs
        .iter()
        .map(|t| {
            let p = t.points()[0];
            let mut best = (f64::INFINITY, 0);
            for (k, e) in spec.entry_points.iter().enumerate() {
                let d = frame.distance_nm((p.lat, p.lon), (e[0], e[1]));
                if d < best.0 {
                    best = (d, k);
                }
            }
            if best.0 > spec.radius_nm {
                return Err(Error::invalid(format!(
                    "flight {} starts {:.2} NM from the nearest entry point (radius {} NM)",
                    t.flight_id, best.0, spec.radius_nm
                )));
            }
            Ok(best.1)
        })
        .collect()
}

/// Minimum horizontal distance (NM) from `target` to the polyline through `pts`.
pub fn min_distance_to_track_nm(frame: &LocalFrame, pts: &[TrajectoryPoint], target: (f64, f64)) -> f64 {
    let c = frame.to_nm(target.0, target.1);
    let xy: Vec<(f64, f64)> = pts.iter().map(|p| frame.to_nm(p.lat, p.lon)).collect();
    if xy.len() == 1 {
        return (xy[0].0 - c.0).hypot(xy[0].1 - c.1);
    }
    xy.windows(2)
        .map(|w| {
            let (a, b) = (w[0], w[1]);
            let (dx, dy) = (b.0 - a.0, b.1 - a.1);
            let len2 = dx * dx + dy * dy;
            let f = if len2 > 0.0 {
                (((c.0 - a.0) * dx + (c.1 - a.1) * dy) / len2).clamp(0.0, 1.0)
            } else {
                0.0
            };
            (a.0 + f * dx - c.0).hypot(a.1 + f * dy - c.1)
        })
        .fold(f64::INFINITY, f64::min)
}
