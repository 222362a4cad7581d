use nalgebra::DMatrix;
use rand::{Rng as _, SeedableRng};

use crate::error::{Error, Result};
use crate::neuralcore::Rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SmoteMode {
    Interpolate,
    Extrapolate,
}

/// Indices of the `k` nearest other rows of each row (Euclidean), closest
/// first; equal distances are ordered by row index.
pub fn nearest_neighbors(x: &DMatrix<f64>, k: usize) -> Result<Vec<Vec<usize>>> {
    let n = x.nrows();
    if n <= k {
        return Err(Error::invalid(format!("{n} rows cannot provide {k} neighbours each")));
    }
    let xt = x.transpose();
    Ok((0..n)
        .map(|i| {
            let mut cand: Vec<(f64, usize)> = (0..n)
                .filter(|&j| j != i)
                .map(|j| ((xt.column(i) - xt.column(j)).norm_squared(), j))
                .collect();
            cand.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            cand.into_iter().take(k).map(|(_, j)| j).collect()
        })
        .collect())
}

fn smote_pass(x: &DMatrix<f64>, nn: &[Vec<usize>], mode: SmoteMode, degree: f64, rng: &mut Rng) -> DMatrix<f64> {
    let mut out = x.clone();
    for (i, neigh) in nn.iter().enumerate() {
        let j = neigh[rng.gen_range(0..neigh.len())];
        let c = x.row(i);
        let n = x.row(j);
        let row = match mode {
            SmoteMode::Interpolate => c + (n - c) * degree,
            SmoteMode::Extrapolate => c + (c - n) * degree,
        };
        out.set_row(i, &row);
    }
    out
}

/// One synthetic row per input row, built from a random one of its
/// `k` nearest neighbours.
pub fn smote_latent(x: &DMatrix<f64>, mode: SmoteMode, k: usize, degree: f64, seed: u64) -> Result<DMatrix<f64>> {
    let nn = nearest_neighbors(x, k)?;
    let mut rng = Rng::seed_from_u64(seed);
    Ok(smote_pass(x, &nn, mode, degree, &mut rng))
}

/// `count` synthetic rows from repeated passes over the input rows.
pub fn smote_generate(
    x: &DMatrix<f64>,
    mode: SmoteMode,
    k: usize,
    degree: f64,
    count: usize,
    seed: u64,
) -> Result<DMatrix<f64>> {
    let nn = nearest_neighbors(x, k)?;
    let mut rng = Rng::seed_from_u64(seed);
    let mut out = DMatrix::zeros(count, x.ncols());
    let mut filled = 0;
    while filled < count {
        let pass = smote_pass(x, &nn, mode, degree, &mut rng);
        let take = (count - filled).min(pass.nrows());
        out.rows_mut(filled, take).copy_from(&pass.rows(0, take));
        filled += take;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line() -> DMatrix<f64> {
        DMatrix::from_row_slice(4, 2, &[0.0, 0.0, 2.0, 0.0, 5.0, 0.0, 9.0, 0.0])
    }

    #[test]
    fn degree_zero_reproduces_rows() {
        let x = DMatrix::from_fn(30, 5, |i, j| ((i * 7 + j * 3) as f64).sin());
        for mode in [SmoteMode::Interpolate, SmoteMode::Extrapolate] {
            assert_eq!(smote_latent(&x, mode, 10, 0.0, 3).unwrap(), x);
        }
    }

    #[test]
    fn midpoint_and_extrapolation() {
        let x = DMatrix::from_row_slice(2, 2, &[0.0, 0.0, 2.0, 0.0]);
        let i = smote_latent(&x, SmoteMode::Interpolate, 1, 0.5, 0).unwrap();
        assert_eq!(i.row(0).iter().copied().collect::<Vec<_>>(), vec![1.0, 0.0]);
        let e = smote_latent(&x, SmoteMode::Extrapolate, 1, 0.5, 0).unwrap();
        assert_eq!(e.row(1).iter().copied().collect::<Vec<_>>(), vec![3.0, 0.0]);
    }

    #[test]
    fn neighbours_are_nearest_with_index_ties() {
        let nn = nearest_neighbors(&line(), 2).unwrap();
        assert_eq!(nn[0], vec![1, 2]);
        assert_eq!(nn[1], vec![0, 2]);
        let sym = DMatrix::from_row_slice(3, 1, &[0.0, -1.0, 1.0]);
        assert_eq!(nearest_neighbors(&sym, 1).unwrap()[0], vec![1]);
    }

    #[test]
    fn interpolants_stay_on_segments() {
        let x = line();
        let out = smote_generate(&x, SmoteMode::Interpolate, 2, 0.5, 9, 4).unwrap();
        assert_eq!(out.nrows(), 9);
        for r in out.row_iter() {
            assert!(r[0] >= 0.0 && r[0] <= 9.0 && r[1] == 0.0);
        }
        assert_eq!(out, smote_generate(&x, SmoteMode::Interpolate, 2, 0.5, 9, 4).unwrap());
    }

    #[test]
    fn too_few_rows_is_an_error() {
        assert!(smote_latent(&line(), SmoteMode::Interpolate, 4, 0.5, 0).is_err());
    }
}
