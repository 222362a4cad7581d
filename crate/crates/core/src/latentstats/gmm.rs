use nalgebra::{Cholesky, DMatrix, DVector};
use rand::distributions::{Distribution, WeightedIndex};
use rand::{Rng as _, SeedableRng};
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::neuralcore::Rng;

/// Added to every covariance diagonal after the M-step.
pub const COVARIANCE_FLOOR: f64 = 1e-6;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EmConfig {
    pub max_iter: usize,
    /// Stop once the mean per-row log-likelihood gain drops below this.
    pub tol: f64,
    pub reg: f64,
    pub kmeans_iters: usize,
}

impl Default for EmConfig {
    fn default() -> Self {
        EmConfig {
            max_iter: 500,
            tol: 1e-6,
            reg: COVARIANCE_FLOOR,
            kmeans_iters: 10,
        }
    }
}

/// Full-covariance Gaussian mixture.
#[derive(Clone, Debug, PartialEq)]
pub struct Gmm {
    pub weights: Vec<f64>,
    pub means: Vec<DVector<f64>>,
    pub covariances: Vec<DMatrix<f64>>,
}

impl Gmm {
    pub fn k(&self) -> usize {
        self.weights.len()
    }

    pub fn dim(&self) -> usize {
        self.means.first().map_or(0, |m| m.len())
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.k();
        if k == 0 || self.means.len() != k || self.covariances.len() != k {
            return Err(Error::shape("mixture needs matching weights, means and covariances"));
        }
        let p = self.dim();
        for (i, (m, c)) in self.means.iter().zip(&self.covariances).enumerate() {
            if m.len() != p || c.shape() != (p, p) {
                return Err(Error::shape(format!("component {i} has inconsistent dimensions")));
            }
        }
        let total: f64 = self.weights.iter().sum();
        if self.weights.iter().any(|w| !(*w >= 0.0)) || (total - 1.0).abs() > 1e-9 {
            return Err(Error::invalid(format!("mixture weights must be non-negative and sum to 1, sum {total}")));
        }
        Ok(())
    }

    /// Lower Cholesky factors of every covariance.
    pub fn cholesky(&self) -> Result<Vec<DMatrix<f64>>> {
        self.covariances
            .iter()
            .enumerate()
            .map(|(i, c)| {
                Cholesky::new(c.clone())
                    .map(|ch| ch.unpack())
                    .ok_or_else(|| Error::numerical(format!("covariance of component {i} is not positive definite")))
            })
            .collect()
    }

    /// `N × K` matrix of `ln πᵢ + ln N(x; μᵢ, Σᵢ)`.
    fn weighted_log_densities(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let (n, p) = x.shape();
        if p != self.dim() {
            return Err(Error::shape(format!("mixture of dimension {} given rows of width {p}", self.dim())));
        }
        let factors = self.cholesky()?;
        let mut out = DMatrix::zeros(n, self.k());
        for (k, l) in factors.iter().enumerate() {
            let log_det: f64 = 2.0 * l.diagonal().iter().map(|v| v.ln()).sum::<f64>();
            let mut diff = x.transpose();
            for mut col in diff.column_iter_mut() {
                col -= &self.means[k];
            }
            if !l.solve_lower_triangular_mut(&mut diff) {
                return Err(Error::numerical(format!("singular Cholesky factor in component {k}")));
            }
            let ln_w = self.weights[k].ln();
            for (i, col) in diff.column_iter().enumerate() {
                out[(i, k)] = ln_w - 0.5 * (p as f64 * LN_2PI + log_det + col.norm_squared());
            }
        }
        Ok(out)
    }
}

fn log_sum_exp(row: &[f64]) -> f64 {
    let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
}

/// Total log-likelihood `Σ_rows ln Σᵢ πᵢ N(x; μᵢ, Σᵢ)`.
pub fn gmm_loglik(gmm: &Gmm, x: &DMatrix<f64>) -> Result<f64> {
    let lw = gmm.weighted_log_densities(x)?;
    Ok(lw.row_iter().map(|r| log_sum_exp(&r.iter().copied().collect::<Vec<_>>())).sum())
}

/// Responsibilities and total log-likelihood.
fn e_step(gmm: &Gmm, x: &DMatrix<f64>) -> Result<(DMatrix<f64>, f64)> {
    let mut lw = gmm.weighted_log_densities(x)?;
    let mut total = 0.0;
    for mut row in lw.row_iter_mut() {
        let lse = log_sum_exp(&row.iter().copied().collect::<Vec<_>>());
        total += lse;
        row.apply(|v| *v = (*v - lse).exp());
    }
    if !total.is_finite() {
        return Err(Error::numerical("mixture log-likelihood is not finite"));
    }
    Ok((lw, total))
}

fn m_step(x: &DMatrix<f64>, resp: &DMatrix<f64>, reg: f64) -> Result<Gmm> {
    let (n, p) = x.shape();
    let k = resp.ncols();
    let mut weights = Vec::with_capacity(k);
    let mut means = Vec::with_capacity(k);
    let mut covariances = Vec::with_capacity(k);
    for j in 0..k {
        let r = resp.column(j);
        let nk: f64 = r.sum();
        if !(nk > 1e-10 * n as f64) {
            return Err(Error::numerical(format!("component {j} collapsed (total responsibility {nk:e})")));
        }
        let mean = x.tr_mul(&r) / nk;
        let mut w = x.clone();
        for (i, mut row) in w.row_iter_mut().enumerate() {
            row -= mean.transpose();
            row *= r[i].sqrt();
        }
        let mut cov = w.tr_mul(&w) / nk;
        cov = (&cov + cov.transpose()) * 0.5;
        for d in 0..p {
            cov[(d, d)] += reg;
        }
        weights.push(nk / n as f64);
        means.push(mean);
        covariances.push(cov);
    }
    let total: f64 = weights.iter().sum();
    weights.iter_mut().for_each(|w| *w /= total);
    Ok(Gmm {
        weights,
        means,
        covariances,
    })
}

/// k-means++ seeding: first centre uniform, later ones ∝ squared distance.
pub fn kmeans_plus_plus(x: &DMatrix<f64>, k: usize, rng: &mut Rng) -> Vec<usize> {
    let n = x.nrows();
    let mut chosen = vec![rng.gen_range(0..n)];
    let mut d2: Vec<f64> = (0..n).map(|i| (x.row(i) - x.row(chosen[0])).norm_squared()).collect();
    while chosen.len() < k {
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            let mut u = rng.gen::<f64>() * total;
            let mut pick = n - 1;
            for (i, &d) in d2.iter().enumerate() {
                if u < d {
                    pick = i;
                    break;
                }
                u -= d;
            }
            pick
        } else {
            (0..n).find(|i| !chosen.contains(i)).unwrap_or(0)
        };
        chosen.push(next);
        for (i, d) in d2.iter_mut().enumerate() {
            *d = d.min((x.row(i) - x.row(next)).norm_squared());
        }
    }
    chosen
}

fn kmeans_labels(x: &DMatrix<f64>, k: usize, iters: usize, rng: &mut Rng) -> Vec<usize> {
    let n = x.nrows();
    let mut centers: Vec<_> = kmeans_plus_plus(x, k, rng).into_iter().map(|i| x.row(i).clone_owned()).collect();
    let mut labels = vec![0usize; n];
    for it in 0..=iters {
        let mut dist = vec![0.0; n];
        for i in 0..n {
            let (mut best, mut best_d) = (0, f64::INFINITY);
            for (c, ctr) in centers.iter().enumerate() {
                let d = (x.row(i) - ctr).norm_squared();
                if d < best_d {
                    best = c;
                    best_d = d;
                }
            }
            labels[i] = best;
            dist[i] = best_d;
        }
        // an empty cluster takes over the worst-served point
        for c in 0..k {
            if !labels.contains(&c) {
                let far = (0..n)
                    .filter(|&i| labels.iter().filter(|&&l| l == labels[i]).count() > 1)
                    .max_by(|&a, &b| dist[a].total_cmp(&dist[b]).then(b.cmp(&a)));
                if let Some(i) = far {
                    labels[i] = c;
                    dist[i] = 0.0;
                }
            }
        }
        if it == iters {
            break;
        }
        for (c, ctr) in centers.iter_mut().enumerate() {
            let members: Vec<usize> = (0..n).filter(|&i| labels[i] == c).collect();
            if !members.is_empty() {
                let mut sum = x.row(members[0]).clone_owned() * 0.0;
                for &i in &members {
                    sum += x.row(i);
                }
                *ctr = sum / members.len() as f64;
            }
        }
    }
    labels
}

/// A fitted mixture with the log-likelihood after every EM iteration.
#[derive(Clone, Debug)]
pub struct GmmFit {
    pub gmm: Gmm,
    /// Total training log-likelihood; the first entry is the k-means start.
    pub trace: Vec<f64>,
    pub converged: bool,
}

impl GmmFit {
    pub fn loglik(&self) -> f64 {
        *self.trace.last().unwrap()
    }
}

/// Expectation–maximisation for a `K`-component full-covariance mixture.
pub fn gmm_fit_em(x: &DMatrix<f64>, k: usize, seed: u64, cfg: &EmConfig) -> Result<GmmFit> {
    let (n, p) = x.shape();
    if k == 0 {
        return Err(Error::invalid("mixture needs at least one component"));
    }
    if n < k {
        return Err(Error::invalid(format!("{n} rows cannot support {k} components")));
    }
    if p == 0 {
        return Err(Error::invalid("mixture input has zero columns"));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::numerical("mixture input contains non-finite values"));
    }
    let mut rng = Rng::seed_from_u64(seed);
    let labels = kmeans_labels(x, k, cfg.kmeans_iters, &mut rng);
    let hard = DMatrix::from_fn(n, k, |i, j| if labels[i] == j { 1.0 } else { 0.0 });
    let mut gmm = m_step(x, &hard, cfg.reg)?;
    let mut trace = Vec::new();
    let mut converged = false;
    for iter in 0..=cfg.max_iter {
        let (resp, ll) = e_step(&gmm, x)?;
        if let Some(prev) = trace.last() {
            if (ll - prev) / (n as f64) < cfg.tol {
                trace.push(ll);
                converged = true;
                break;
            }
        }
        trace.push(ll);
        if iter == cfg.max_iter {
            break;
        }
        gmm = m_step(x, &resp, cfg.reg)?;
    }
    Ok(GmmFit { gmm, trace, converged })
}

pub fn bic_parameter_count(k: usize, p: usize) -> usize {
    k - 1 + k * p + k * p * (p + 1) / 2
}

#[derive(Clone, Debug, PartialEq)]
pub struct BicEntry {
    pub k: usize,
    /// `None` when the fit failed or the candidate was inadmissible.
    pub bic: Option<f64>,
    pub loglik: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct BicSelection {
    pub best_k: usize,
    pub table: Vec<BicEntry>,
    pub fit: GmmFit,
}

/// Fits every candidate and keeps the lowest `params·ln N − 2·loglik`;
/// ties go to the smaller `K`.
pub fn select_k_by_bic(x: &DMatrix<f64>, candidates: &[usize], seed: u64, cfg: &EmConfig) -> Result<BicSelection> {
    if candidates.is_empty() {
        return Err(Error::invalid("no mixture sizes to choose from"));
    }
    let (n, p) = x.shape();
    let mut table = Vec::with_capacity(candidates.len());
    let mut best: Option<(f64, usize, GmmFit)> = None;
    for &k in candidates {
        let admissible = k >= 1 && (k < n || candidates.len() == 1 && k <= n);
        let fit = if admissible {
            gmm_fit_em(x, k, seed.wrapping_add(k as u64 * 0x9E37_79B9), cfg)
        } else {
            Err(Error::invalid(format!("K = {k} is degenerate for {n} rows")))
        };
        match fit {
            Ok(fit) => {
                let ll = fit.loglik();
                let bic = bic_parameter_count(k, p) as f64 * (n as f64).ln() - 2.0 * ll;
                table.push(BicEntry {
                    k,
                    bic: Some(bic),
                    loglik: Some(ll),
                });
                let better = match &best {
                    None => true,
                    Some((b, bk, _)) => bic < *b || (bic == *b && k < *bk),
                };
                if better {
                    best = Some((bic, k, fit));
                }
            }
            Err(e) => {
                log::warn!("mixture with K = {k} excluded: {e}");
                table.push(BicEntry {
                    k,
                    bic: None,
                    loglik: None,
                });
            }
        }
    }
    let (_, best_k, fit) = best.ok_or_else(|| Error::numerical("every candidate mixture fit failed"))?;
    Ok(BicSelection { best_k, table, fit })
}

/// Draws `count` rows: component by weight, then `μ + L·z` with `z ~ N(0, I)`.
pub fn gmm_sample(gmm: &Gmm, count: usize, seed: u64) -> Result<DMatrix<f64>> {
    gmm.validate()?;
    let factors = gmm.cholesky()?;
    let pick = WeightedIndex::new(&gmm.weights).map_err(|e| Error::invalid(format!("mixture weights: {e}")))?;
    let mut rng = Rng::seed_from_u64(seed);
    let p = gmm.dim();
    let mut out = DMatrix::zeros(count, p);
    for i in 0..count {
        let c = pick.sample(&mut rng);
        let z = DVector::<f64>::from_fn(p, |_, _| rng.sample(StandardNormal));
        let x = &gmm.means[c] + &factors[c] * z;
        out.set_row(i, &x.transpose());
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn planted(centers: &[[f64; 2]], weights: &[f64], n: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = Rng::seed_from_u64(seed);
        let pick = WeightedIndex::new(weights).unwrap();
        let mut x = DMatrix::zeros(n, 2);
        for i in 0..n {
            let c = pick.sample(&mut rng);
            for j in 0..2 {
                let z: f64 = rng.sample(StandardNormal);
                x[(i, j)] = centers[c][j] + z;
            }
        }
        x
    }

    #[test]
    fn single_component_is_closed_form() {
        let x = planted(&[[1.0, -2.0]], &[1.0], 200, 1);
        let fit = gmm_fit_em(&x, 1, 0, &EmConfig::default()).unwrap();
        let n = x.nrows() as f64;
        let mean = DVector::from_fn(2, |j, _| x.column(j).sum() / n);
        let mut cov = DMatrix::from_fn(2, 2, |a, b| {
            (0..x.nrows()).map(|i| (x[(i, a)] - mean[a]) * (x[(i, b)] - mean[b])).sum::<f64>() / n
        });
        cov[(0, 0)] += COVARIANCE_FLOOR;
        cov[(1, 1)] += COVARIANCE_FLOOR;
        assert_eq!(fit.gmm.weights, vec![1.0]);
        assert!((&fit.gmm.means[0] - mean).amax() < 1e-12);
        assert!((&fit.gmm.covariances[0] - cov).amax() < 1e-12);
    }

    #[test]
    fn recovers_two_planted_components() {
        let x = planted(&[[5.0, 0.0], [-5.0, 0.0]], &[0.5, 0.5], 1000, 2);
        let fit = gmm_fit_em(&x, 2, 3, &EmConfig::default()).unwrap();
        let mut means: Vec<_> = fit.gmm.means.iter().map(|m| (m[0], m[1])).collect();
        means.sort_by(|a, b| a.0.total_cmp(&b.0));
        assert!((means[0].0 + 5.0).abs() < 0.2 && means[0].1.abs() < 0.2);
        assert!((means[1].0 - 5.0).abs() < 0.2 && means[1].1.abs() < 0.2);
        assert!(fit.gmm.weights.iter().all(|w| (w - 0.5).abs() < 0.05));
    }

    #[test]
    fn trace_is_non_decreasing() {
        let x = planted(&[[0.0, 0.0], [3.0, 1.0], [-2.0, 4.0]], &[0.3, 0.3, 0.4], 300, 4);
        for k in 1..=5 {
            let fit = gmm_fit_em(&x, k, k as u64, &EmConfig::default()).unwrap();
            for w in fit.trace.windows(2) {
                assert!(w[1] - w[0] >= -1e-8 * w[0].abs(), "K={k}: {w:?}");
            }
        }
    }

    #[test]
    fn standard_normal_density_at_origin() {
        let g = Gmm {
            weights: vec![1.0],
            means: vec![DVector::zeros(2)],
            covariances: vec![DMatrix::identity(2, 2)],
        };
        let x = DMatrix::zeros(3, 2);
        let ll = gmm_loglik(&g, &x).unwrap();
        assert!((ll - 3.0 * (1.0 / (2.0 * std::f64::consts::PI)).ln()).abs() < 1e-12);
    }

    #[test]
    fn loglik_is_additive_over_duplicated_data() {
        let x = planted(&[[0.0, 0.0], [4.0, 0.0]], &[0.5, 0.5], 50, 5);
        let fit = gmm_fit_em(&x, 2, 1, &EmConfig::default()).unwrap();
        let mut xx = DMatrix::zeros(100, 2);
        xx.rows_mut(0, 50).copy_from(&x);
        xx.rows_mut(50, 50).copy_from(&x);
        let a = gmm_loglik(&fit.gmm, &x).unwrap();
        let b = gmm_loglik(&fit.gmm, &xx).unwrap();
        assert!((b - 2.0 * a).abs() < 1e-9 * a.abs());
    }

    #[test]
    fn one_dimensional_direct_evaluation() {
        let g = Gmm {
            weights: vec![0.3, 0.7],
            means: vec![DVector::from_element(1, -1.0), DVector::from_element(1, 2.0)],
            covariances: vec![DMatrix::from_element(1, 1, 0.5), DMatrix::from_element(1, 1, 2.0)],
        };
        let pts = [-0.5, 0.0, 3.0];
        let direct: f64 = pts
            .iter()
            .map(|&x| {
                let pdf = |m: f64, v: f64| (-(x - m) * (x - m) / (2.0 * v)).exp() / (2.0 * std::f64::consts::PI * v).sqrt();
                (0.3 * pdf(-1.0, 0.5) + 0.7 * pdf(2.0, 2.0)).ln()
            })
            .sum();
        let x = DMatrix::from_column_slice(3, 1, &pts);
        assert!((gmm_loglik(&g, &x).unwrap() - direct).abs() < 1e-12);
    }

    #[test]
    fn bic_picks_planted_three() {
        let x = planted(&[[0.0, 0.0], [8.0, 0.0], [0.0, 8.0]], &[1.0, 1.0, 1.0], 600, 6);
        let sel = select_k_by_bic(&x, &[1, 2, 3, 4, 5], 11, &EmConfig::default()).unwrap();
        assert_eq!(sel.best_k, 3);
        assert_eq!(sel.table.len(), 5);
        assert_eq!(bic_parameter_count(3, 2), 2 + 6 + 9);
    }

    #[test]
    fn singleton_candidate_is_returned() {
        let x = planted(&[[0.0, 0.0]], &[1.0], 40, 7);
        let sel = select_k_by_bic(&x, &[4], 1, &EmConfig::default()).unwrap();
        assert_eq!(sel.best_k, 4);
    }

    #[test]
    fn degenerate_candidate_is_excluded() {
        let x = planted(&[[0.0, 0.0]], &[1.0], 5, 8);
        let sel = select_k_by_bic(&x, &[1, 5], 1, &EmConfig::default()).unwrap();
        assert_eq!(sel.best_k, 1);
        assert_eq!(sel.table[1].bic, None);
    }

    #[test]
    fn too_few_rows_is_an_error() {
        let x = planted(&[[0.0, 0.0]], &[1.0], 3, 9);
        assert!(gmm_fit_em(&x, 4, 0, &EmConfig::default()).is_err());
        assert!(gmm_fit_em(&x, 0, 0, &EmConfig::default()).is_err());
    }

    #[test]
    fn non_pd_covariance_names_component() {
        let g = Gmm {
            weights: vec![0.5, 0.5],
            means: vec![DVector::zeros(2), DVector::zeros(2)],
            covariances: vec![DMatrix::identity(2, 2), DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0])],
        };
        let err = gmm_loglik(&g, &DMatrix::zeros(1, 2)).unwrap_err();
        assert!(err.to_string().contains("component 1"), "{err}");
    }

    #[test]
    fn sampling_degenerate_and_zero_weight() {
        let g = Gmm {
            weights: vec![1.0, 0.0],
            means: vec![DVector::from_vec(vec![3.0, -1.0]), DVector::from_vec(vec![100.0, 100.0])],
            covariances: vec![DMatrix::identity(2, 2) * COVARIANCE_FLOOR, DMatrix::identity(2, 2)],
        };
        let s = gmm_sample(&g, 500, 3).unwrap();
        let tol = 5.0 * COVARIANCE_FLOOR.sqrt();
        for row in s.row_iter() {
            assert!((row[0] - 3.0).abs() < tol && (row[1] + 1.0).abs() < tol);
        }
        assert_eq!(s, gmm_sample(&g, 500, 3).unwrap());
    }

    #[test]
    fn sample_frequencies_and_means_match() {
        let g = Gmm {
            weights: vec![0.3, 0.7],
            means: vec![DVector::from_vec(vec![-10.0, 0.0]), DVector::from_vec(vec![10.0, 2.0])],
            covariances: vec![DMatrix::identity(2, 2), DMatrix::identity(2, 2) * 4.0],
        };
        let n = 10_000;
        let s = gmm_sample(&g, n, 5).unwrap();
        let first: Vec<_> = s.row_iter().filter(|r| r[0] < 0.0).map(|r| (r[0], r[1])).collect();
        let second: Vec<_> = s.row_iter().filter(|r| r[0] >= 0.0).map(|r| (r[0], r[1])).collect();
        let sigma = (0.3f64 * 0.7 / n as f64).sqrt();
        assert!((first.len() as f64 / n as f64 - 0.3).abs() < 3.0 * sigma);
        let mean = |v: &[(f64, f64)]| {
            let m = v.len() as f64;
            (v.iter().map(|p| p.0).sum::<f64>() / m, v.iter().map(|p| p.1).sum::<f64>() / m)
        };
        let (a, b) = (mean(&first), mean(&second));
        let se1 = 1.0 / (first.len() as f64).sqrt();
        let se2 = 2.0 / (second.len() as f64).sqrt();
        assert!((a.0 + 10.0).abs() < 3.0 * se1 && a.1.abs() < 3.0 * se1);
        assert!((b.0 - 10.0).abs() < 3.0 * se2 && (b.1 - 2.0).abs() < 3.0 * se2);
    }
}
