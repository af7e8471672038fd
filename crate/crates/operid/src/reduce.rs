//! PCA dimension reduction, refit per trial on that trial's training half.
//!
//! Fitting uses the n x n Gram matrix when there are fewer samples than
//! input dimensions (the usual case: ~1,400 images vs 12,750 dims), which
//! is equivalent to eigendecomposing the sample covariance.

use crate::error::{Error, Result};
use nalgebra::{DMatrix, DVector};

#[derive(Debug, Clone, PartialEq)]
pub struct PcaModel {
    pub mean: DVector<f64>,
    /// d_in x d_out, orthonormal columns in descending eigenvalue order.
    pub basis: DMatrix<f64>,
    /// Non-increasing, clamped at zero.
    pub eigenvalues: Vec<f64>,
}

impl PcaModel {
    pub fn input_dim(&self) -> usize {
        self.basis.nrows()
    }

    pub fn output_dim(&self) -> usize {
        self.basis.ncols()
    }

    /// Projects a vector: basis' * (x - mean).
    pub fn project(&self, x: &[f64]) -> Result<DVector<f64>> {
        if x.len() != self.input_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.input_dim(),
                got: x.len(),
            });
        }
        let centered = DVector::from_row_slice(x) - &self.mean;
        Ok(self.basis.transpose() * centered)
    }

    /// Maps a reduced vector back to input space (for reconstruction tests).
    pub fn reconstruct(&self, z: &DVector<f64>) -> DVector<f64> {
        &self.basis * z + &self.mean
    }
}

/// Flips each basis column so its largest-magnitude entry is positive.
fn fix_signs(basis: &mut DMatrix<f64>) {
    for j in 0..basis.ncols() {
        let mut best = 0usize;
        let mut best_abs = -1.0;
        for i in 0..basis.nrows() {
            let a = basis[(i, j)].abs();
            if a > best_abs {
                best_abs = a;
                best = i;
            }
        }
        if basis[(best, j)] < 0.0 {
            for i in 0..basis.nrows() {
                basis[(i, j)] = -basis[(i, j)];
            }
        }
    }
}

/// Completes rank-deficient columns with vectors orthonormal to the ones
/// already found, so the basis stays orthonormal even when the data rank
/// is below the requested output dimension.
fn complete_basis(basis: &mut DMatrix<f64>, filled: usize) {
    let d = basis.nrows();
    let mut col = filled;
    let mut candidate = 0usize;
    while col < basis.ncols() {
        assert!(candidate < d, "cannot complete orthonormal basis");
        let mut v = DVector::zeros(d);
        v[candidate] = 1.0;
        candidate += 1;
        for j in 0..col {
            let proj = basis.column(j).dot(&v);
            v -= proj * DVector::from(basis.column(j));
        }
        let norm = v.norm();
        if norm < 1e-8 {
            continue;
        }
        v /= norm;
        basis.set_column(col, &v);
        col += 1;
    }
}

/// Fits PCA on row samples, keeping the top `out_dim` components.
///
/// Covariance is normalized by n-1. Requires out_dim <= min(n-1, d).
pub fn fit_pca(samples: &[Vec<f64>], out_dim: usize) -> Result<PcaModel> {
    let n = samples.len();
    if n < 2 {
        return Err(Error::TooFewSamples(n));
    }
    let d = samples[0].len();
    let limit = (n - 1).min(d);
    if out_dim == 0 || out_dim > limit {
        return Err(Error::OutDimTooLarge { out_dim, limit });
    }
    for s in samples {
        if s.len() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: s.len(),
            });
        }
    }

    let mut mean = DVector::zeros(d);
    for s in samples {
        mean += DVector::from_row_slice(s);
    }
    mean /= n as f64;

    // centered data, rows are samples
    let mut x = DMatrix::zeros(n, d);
    for (i, s) in samples.iter().enumerate() {
        for j in 0..d {
            x[(i, j)] = s[j] - mean[j];
        }
    }

    let (mut eigenvalues, mut basis, filled) = if n < d {
        // Gram trick: eigenvectors of X X'/(n-1) lift to covariance
        // eigenvectors via X' u / sqrt((n-1) lambda).
        let gram = (&x * x.transpose()) / (n as f64 - 1.0);
        let eig = gram.symmetric_eigen();
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[b].partial_cmp(&eig.eigenvalues[a]).unwrap());
        let mut vals = Vec::with_capacity(out_dim);
        let mut basis = DMatrix::zeros(d, out_dim);
        let mut filled = 0;
        for &idx in order.iter().take(out_dim) {
            let lambda = eig.eigenvalues[idx].max(0.0);
            vals.push(lambda);
            if lambda > 1e-12 {
                let u = eig.eigenvectors.column(idx);
                let v = x.transpose() * u / ((n as f64 - 1.0) * lambda).sqrt();
                basis.set_column(filled, &v);
                filled += 1;
            }
        }
        (vals, basis, filled)
    } else {
        let cov = (x.transpose() * &x) / (n as f64 - 1.0);
        let eig = cov.symmetric_eigen();
        let mut order: Vec<usize> = (0..d).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[b].partial_cmp(&eig.eigenvalues[a]).unwrap());
        let mut vals = Vec::with_capacity(out_dim);
        let mut basis = DMatrix::zeros(d, out_dim);
        for (j, &idx) in order.iter().take(out_dim).enumerate() {
            vals.push(eig.eigenvalues[idx].max(0.0));
            basis.set_column(j, &eig.eigenvectors.column(idx));
        }
        (vals, basis, out_dim)
    };

    complete_basis(&mut basis, filled);
    fix_signs(&mut basis);
    eigenvalues.truncate(out_dim);
    Ok(PcaModel {
        mean,
        basis,
        eigenvalues,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_samples(rng: &mut ChaCha8Rng, n: usize, d: usize) -> Vec<Vec<f64>> {
        (0..n)
            .map(|_| (0..d).map(|_| rng.gen_range(-2.0..2.0)).collect())
            .collect()
    }

    /// Dense covariance eigendecomposition, the independent check for the
    /// Gram-trick path.
    fn oracle_eigs(samples: &[Vec<f64>]) -> Vec<f64> {
        let n = samples.len();
        let d = samples[0].len();
        let mut mean = vec![0.0; d];
        for s in samples {
            for j in 0..d {
                mean[j] += s[j] / n as f64;
            }
        }
        let mut cov = DMatrix::<f64>::zeros(d, d);
        for s in samples {
            for a in 0..d {
                for b in 0..d {
                    cov[(a, b)] += (s[a] - mean[a]) * (s[b] - mean[b]) / (n as f64 - 1.0);
                }
            }
        }
        let mut vals: Vec<f64> = cov.symmetric_eigen().eigenvalues.iter().copied().collect();
        vals.sort_by(|a, b| b.partial_cmp(a).unwrap());
        vals
    }

    #[test]
    fn rank_one_line() {
        let samples: Vec<Vec<f64>> = (0..6).map(|i| vec![i as f64, 2.0 * i as f64]).collect();
        let model = fit_pca(&samples, 2).unwrap();
        let dir = model.basis.column(0);
        let expected = [1.0 / 5.0f64.sqrt(), 2.0 / 5.0f64.sqrt()];
        assert!((dir[0] - expected[0]).abs() < 1e-10);
        assert!((dir[1] - expected[1]).abs() < 1e-10);
        assert!(model.eigenvalues[1].abs() < 1e-10);
        // completed second column is still orthonormal
        let gram = model.basis.transpose() * &model.basis;
        assert!((gram - DMatrix::identity(2, 2)).norm() < 1e-8);
    }

    #[test]
    fn reconstruction_error_equals_discarded_eigenvalue_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let samples = random_samples(&mut rng, 20, 50);
        let out_dim = 10;
        let model = fit_pca(&samples, out_dim).unwrap();
        let oracle = oracle_eigs(&samples);
        for (a, b) in model.eigenvalues.iter().zip(&oracle) {
            assert!((a - b).abs() <= 1e-8 * b.abs().max(1.0), "{a} vs {b}");
        }
        // mean squared reconstruction error * n/(n-1) = discarded eigenvalues
        let n = samples.len() as f64;
        let mut sse = 0.0;
        for s in &samples {
            let z = model.project(s).unwrap();
            let r = model.reconstruct(&z);
            for j in 0..s.len() {
                sse += (s[j] - r[j]).powi(2);
            }
        }
        let discarded: f64 = oracle[out_dim..].iter().sum();
        let observed = sse / (n - 1.0);
        assert!(
            (observed - discarded).abs() <= 1e-6 * discarded.max(1e-9),
            "{observed} vs {discarded}"
        );
    }

    #[test]
    fn full_dim_reconstruction_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let samples = random_samples(&mut rng, 30, 8);
        let model = fit_pca(&samples, 8).unwrap();
        for s in &samples {
            let z = model.project(s).unwrap();
            let r = model.reconstruct(&z);
            for j in 0..s.len() {
                assert!((s[j] - r[j]).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn projection_matches_dense_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let samples = random_samples(&mut rng, 12, 30);
        let model = fit_pca(&samples, 5).unwrap();
        let x: Vec<f64> = (0..30).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let z = model.project(&x).unwrap();
        for j in 0..5 {
            let mut dot = 0.0;
            for i in 0..30 {
                dot += model.basis[(i, j)] * (x[i] - model.mean[i]);
            }
            assert!((z[j] - dot).abs() <= 1e-10 * dot.abs().max(1.0));
        }
    }

    #[test]
    fn projected_mean_is_zero_and_variance_matches_eigenvalues() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let samples = random_samples(&mut rng, 25, 15);
        let model = fit_pca(&samples, 6).unwrap();
        let projected: Vec<DVector<f64>> =
            samples.iter().map(|s| model.project(s).unwrap()).collect();
        let n = projected.len() as f64;
        for j in 0..6 {
            let mean: f64 = projected.iter().map(|z| z[j]).sum::<f64>() / n;
            assert!(mean.abs() < 1e-8);
            let var: f64 = projected.iter().map(|z| (z[j] - mean).powi(2)).sum::<f64>() / (n - 1.0);
            let ev = model.eigenvalues[j];
            assert!((var - ev).abs() <= 1e-6 * ev.max(1e-12), "{var} vs {ev}");
        }
    }

    #[test]
    fn projecting_mean_gives_zero() {
        let samples = vec![vec![1.0, 2.0, 3.0], vec![3.0, 0.0, 1.0], vec![2.0, 4.0, 2.0]];
        let model = fit_pca(&samples, 2).unwrap();
        let mean: Vec<f64> = model.mean.iter().copied().collect();
        let z = model.project(&mean).unwrap();
        assert!(z.norm() < 1e-12);
    }

    #[test]
    fn basis_column_projects_to_unit_coordinate() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let samples = random_samples(&mut rng, 20, 10);
        let model = fit_pca(&samples, 4).unwrap();
        for j in 0..4 {
            let x: Vec<f64> = (0..10).map(|i| model.mean[i] + model.basis[(i, j)]).collect();
            let z = model.project(&x).unwrap();
            for k in 0..4 {
                let expected = if k == j { 1.0 } else { 0.0 };
                assert!((z[k] - expected).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn input_validation() {
        assert!(matches!(fit_pca(&[vec![1.0]], 1), Err(Error::TooFewSamples(1))));
        let samples = vec![vec![1.0, 2.0], vec![3.0, 4.0]];
        assert!(matches!(
            fit_pca(&samples, 2),
            Err(Error::OutDimTooLarge { .. })
        ));
    }
}
