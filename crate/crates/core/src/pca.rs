//! Mean-centering linear projection of HOI vectors to a reduced space.
//!
//! The basis is the leading eigenvectors of the sample covariance, kept until
//! the cumulative explained-variance ratio reaches the configured threshold.
//! `back_project` is the pseudo-inverse of `project` and is what the
//! explainer uses to express a normal event in the original coordinates.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Eigenvalues at or below `RANK_EPS * largest` are treated as zero and never
/// enter the basis.
const RANK_EPS: f64 = 1e-12;

/// A fitted PCA basis: training mean, orthonormal projection matrix and the
/// retained eigenvalues.
#[derive(Debug, Clone, PartialEq)]
pub struct PcaModel {
    /// Training mean, length `D`.
    mean: DVector<f64>,
    /// Projection basis, `D x d`, orthonormal columns sorted by decreasing
    /// eigenvalue.
    basis: DMatrix<f64>,
    /// Eigenvalues of the retained directions, nonincreasing.
    eigenvalues: DVector<f64>,
    /// Fraction of total training variance the retained directions explain.
    variance_captured: f64,
}

impl PcaModel {
    /// Fits the basis on row vectors of equal length.
    ///
    /// The covariance uses the (n-1) denominator on mean-centered data. The
    /// reduced dimension is the smallest count of leading eigen-directions
    /// whose cumulative explained-variance ratio reaches `variance_threshold`.
    pub fn fit(data: &[Vec<f64>], variance_threshold: f64) -> Result<Self> {
        if !(variance_threshold > 0.0 && variance_threshold <= 1.0) {
            return Err(Error::invalid(format!(
                "variance threshold {variance_threshold} outside (0, 1]"
            )));
        }
        let n = data.len();
        if n < 2 {
            return Err(Error::invalid(format!(
                "PCA needs at least 2 samples, got {n}"
            )));
        }
        let dim = data[0].len();
        if dim == 0 {
            return Err(Error::invalid("PCA input has zero dimension".to_string()));
        }
        for (i, row) in data.iter().enumerate() {
            if row.len() != dim {
                return Err(Error::Dimension {
                    context: "pca fit row",
                    expected: dim,
                    actual: row.len(),
                });
            }
            if row.iter().any(|x| !x.is_finite()) {
                return Err(Error::invalid(format!("non-finite value in sample {i}")));
            }
        }

        let mut mean = DVector::zeros(dim);
        for row in data {
            for (j, &x) in row.iter().enumerate() {
                mean[j] += x;
            }
        }
        mean /= n as f64;

        // Sample covariance, (n-1) denominator.
        let mut cov = DMatrix::zeros(dim, dim);
        let mut centered = DVector::zeros(dim);
        for row in data {
            for j in 0..dim {
                centered[j] = row[j] - mean[j];
            }
            cov.syger(1.0, &centered, &centered, 1.0);
        }
        // syger fills the lower triangle; mirror it before decomposing.
        for i in 0..dim {
            for j in (i + 1)..dim {
                cov[(i, j)] = cov[(j, i)];
            }
        }
        cov /= (n - 1) as f64;

        let eig = cov.symmetric_eigen();
        let mut order: Vec<usize> = (0..dim).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));

        let largest = eig.eigenvalues[order[0]].max(0.0);
        let cutoff = largest * RANK_EPS;
        let spectrum: Vec<f64> = order
            .iter()
            .map(|&i| {
                let lambda = eig.eigenvalues[i];
                if lambda > cutoff {
                    lambda
                } else {
                    0.0
                }
            })
            .collect();
        let total: f64 = spectrum.iter().sum();
        if total <= 0.0 {
            return Err(Error::invalid(
                "zero total variance: all training samples are identical".to_string(),
            ));
        }

        let mut kept = 0;
        let mut cumulative = 0.0;
        for &lambda in &spectrum {
            if lambda <= 0.0 {
                break;
            }
            kept += 1;
            cumulative += lambda;
            if cumulative / total >= variance_threshold {
                break;
            }
        }

        let mut basis = DMatrix::zeros(dim, kept);
        for (col, &src) in order[..kept].iter().enumerate() {
            let mut column = eig.eigenvectors.column(src).clone_owned();
            fix_sign(&mut column);
            basis.set_column(col, &column);
        }

        Ok(PcaModel {
            mean,
            basis,
            eigenvalues: DVector::from_iterator(kept, spectrum[..kept].iter().copied()),
            variance_captured: cumulative / total,
        })
    }

    /// Builds a model from raw parts, checking the orthonormality and
    /// eigenvalue-order invariants. Used when loading a persisted model.
    pub fn from_parts(
        mean: DVector<f64>,
        basis: DMatrix<f64>,
        eigenvalues: DVector<f64>,
        variance_captured: f64,
    ) -> Result<Self> {
        if basis.nrows() != mean.len() {
            return Err(Error::Dimension {
                context: "pca basis rows",
                expected: mean.len(),
                actual: basis.nrows(),
            });
        }
        if eigenvalues.len() != basis.ncols() {
            return Err(Error::Dimension {
                context: "pca eigenvalues",
                expected: basis.ncols(),
                actual: eigenvalues.len(),
            });
        }
        let gram = basis.transpose() * &basis;
        let identity = DMatrix::identity(basis.ncols(), basis.ncols());
        let dev = (gram - identity).abs().max();
        if dev > 1e-9 {
            return Err(Error::invalid(format!(
                "PCA basis columns not orthonormal (max deviation {dev:.3e})"
            )));
        }
        for w in eigenvalues.as_slice().windows(2) {
            if w[1] > w[0] {
                return Err(Error::invalid(
                    "PCA eigenvalues not sorted nonincreasing".to_string(),
                ));
            }
        }
        if eigenvalues.iter().any(|&l| l < 0.0) {
            return Err(Error::invalid("negative PCA eigenvalue".to_string()));
        }
        if !(variance_captured > 0.0 && variance_captured <= 1.0 + 1e-12) {
            return Err(Error::invalid(format!(
                "variance_captured {variance_captured} outside (0, 1]"
            )));
        }
        Ok(PcaModel {
            mean,
            basis,
            eigenvalues,
            variance_captured,
        })
    }

    /// Input dimension `D`.
    pub fn input_dim(&self) -> usize {
        self.mean.len()
    }

    /// Reduced dimension `d`.
    pub fn reduced_dim(&self) -> usize {
        self.basis.ncols()
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn basis(&self) -> &DMatrix<f64> {
        &self.basis
    }

    pub fn eigenvalues(&self) -> &DVector<f64> {
        &self.eigenvalues
    }

    pub fn variance_captured(&self) -> f64 {
        self.variance_captured
    }

    /// `W^T (v - mean)`.
    pub fn project(&self, v: &DVector<f64>) -> Result<DVector<f64>> {
        if v.len() != self.input_dim() {
            return Err(Error::Dimension {
                context: "pca project",
                expected: self.input_dim(),
                actual: v.len(),
            });
        }
        Ok(self.basis.tr_mul(&(v - &self.mean)))
    }

    pub fn project_slice(&self, v: &[f64]) -> Result<DVector<f64>> {
        self.project(&DVector::from_column_slice(v))
    }

    /// `W x + mean`: the Moore-Penrose back-projection of a reduced vector.
    pub fn back_project(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        if x.len() != self.reduced_dim() {
            return Err(Error::Dimension {
                context: "pca back_project",
                expected: self.reduced_dim(),
                actual: x.len(),
            });
        }
        Ok(&self.basis * x + &self.mean)
    }
}

/// Deterministic sign convention: the largest-magnitude entry of the column
/// is made positive, ties broken by lowest index.
fn fix_sign(column: &mut DVector<f64>) {
    let mut best = 0;
    for i in 1..column.len() {
        if column[i].abs() > column[best].abs() {
            best = i;
        }
    }
    if column[best] < 0.0 {
        *column *= -1.0;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn random_data(n: usize, dim: usize, seed: u64) -> Vec<Vec<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| {
                (0..dim)
                    .map(|j| rng.gen::<f64>() * (j as f64 + 1.0))
                    .collect()
            })
            .collect()
    }

    #[test]
    fn two_point_line_recovers_axis_and_eigenvalue() {
        let data = vec![vec![0.0, 0.0], vec![2.0, 0.0]];
        let m = PcaModel::fit(&data, 0.99).unwrap();
        assert_eq!(m.reduced_dim(), 1);
        assert_relative_eq!(m.mean()[0], 1.0);
        assert_relative_eq!(m.mean()[1], 0.0);
        // Sample variance of {0, 2} with (n-1) denominator is 2.
        assert_relative_eq!(m.eigenvalues()[0], 2.0, max_relative = 1e-12);
        // Sign convention makes the axis +(1, 0).
        assert_relative_eq!(m.basis()[(0, 0)], 1.0, max_relative = 1e-12);
        assert_relative_eq!(m.basis()[(1, 0)], 0.0, epsilon = 1e-12);
    }

    #[test]
    fn dimension_choice_is_minimal_cumulative_count() {
        // Plant a spectrum with fractions 0.90 / 0.08 / 0.02: threshold 0.99
        // needs all three directions (cumulative 0.90, 0.98, 1.00).
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let scales = [90.0f64, 8.0, 2.0];
        let n = 60_000;
        let data: Vec<Vec<f64>> = (0..n)
            .map(|_| {
                scales
                    .iter()
                    .map(|s| {
                        let z: f64 = rng.sample(rand_distr::StandardNormal);
                        z * s.sqrt()
                    })
                    .collect()
            })
            .collect();
        let m = PcaModel::fit(&data, 0.99).unwrap();
        assert_eq!(m.reduced_dim(), 3);
        let m95 = PcaModel::fit(&data, 0.95).unwrap();
        assert_eq!(m95.reduced_dim(), 2);
        let m90 = PcaModel::fit(&data, 0.85).unwrap();
        assert_eq!(m90.reduced_dim(), 1);
    }

    #[test]
    fn project_of_mean_is_zero() {
        let data = random_data(50, 6, 1);
        let m = PcaModel::fit(&data, 0.99).unwrap();
        let z = m.project(m.mean()).unwrap();
        assert!(z.amax() < 1e-12);
    }

    #[test]
    fn back_project_of_zero_is_mean() {
        let data = random_data(50, 6, 2);
        let m = PcaModel::fit(&data, 0.99).unwrap();
        let v = m.back_project(&DVector::zeros(m.reduced_dim())).unwrap();
        assert!((v - m.mean()).amax() < 1e-12);
    }

    #[test]
    fn projection_is_orthonormal_contraction() {
        let data = random_data(80, 8, 3);
        let m = PcaModel::fit(&data, 0.999).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..20 {
            let v = DVector::from_fn(8, |_, _| rng.gen::<f64>() * 4.0 - 2.0);
            let x = m.project(&v).unwrap();
            assert!(x.norm() <= (&v - m.mean()).norm() + 1e-9);
        }
    }

    #[test]
    fn projection_idempotence_through_back_projection() {
        let data = random_data(80, 8, 4);
        let m = PcaModel::fit(&data, 0.9).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let v = DVector::from_fn(8, |_, _| rng.gen::<f64>() * 2.0);
        let x = m.project(&v).unwrap();
        let again = m.project(&m.back_project(&x).unwrap()).unwrap();
        assert!((again - x).amax() < 1e-9);
    }

    #[test]
    fn basis_columns_orthonormal_after_fit() {
        let data = random_data(200, 10, 5);
        let m = PcaModel::fit(&data, 0.999).unwrap();
        let gram = m.basis().transpose() * m.basis();
        let dev = (gram - DMatrix::identity(m.reduced_dim(), m.reduced_dim()))
            .abs()
            .max();
        assert!(dev < 1e-9, "orthonormality deviation {dev}");
    }

    #[test]
    fn reconstruction_error_matches_discarded_variance() {
        let data = random_data(150, 7, 6);
        let m = PcaModel::fit(&data, 0.8).unwrap();
        let total: f64 = m.eigenvalues().iter().sum::<f64>() / m.variance_captured();
        let n = data.len();
        let mut sq = 0.0;
        for row in &data {
            let v = DVector::from_column_slice(row);
            let rec = m.back_project(&m.project(&v).unwrap()).unwrap();
            sq += (v - rec).norm_squared();
        }
        let avg = sq / (n - 1) as f64;
        let expected = (1.0 - m.variance_captured()) * total;
        assert_relative_eq!(avg, expected, max_relative = 1e-6);
    }

    #[test]
    fn projection_is_affine() {
        let data = random_data(60, 5, 7);
        let m = PcaModel::fit(&data, 0.99).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..10 {
            let u = DVector::from_fn(5, |_, _| rng.gen::<f64>());
            let w = DVector::from_fn(5, |_, _| rng.gen::<f64>());
            let alpha: f64 = rng.gen();
            let mix = &u * alpha + &w * (1.0 - alpha);
            let lhs = m.project(&mix).unwrap();
            let rhs = m.project(&u).unwrap() * alpha + m.project(&w).unwrap() * (1.0 - alpha);
            assert!((lhs - rhs).amax() < 1e-9);
        }
    }

    #[test]
    fn rejects_degenerate_inputs() {
        assert!(PcaModel::fit(&[vec![1.0, 2.0]], 0.99).is_err());
        let identical = vec![vec![3.0, 4.0]; 10];
        assert!(PcaModel::fit(&identical, 0.99).is_err());
        let ragged = vec![vec![1.0, 2.0], vec![3.0]];
        assert!(PcaModel::fit(&ragged, 0.99).is_err());
        assert!(PcaModel::fit(&random_data(10, 3, 0), 0.0).is_err());
        assert!(PcaModel::fit(&random_data(10, 3, 0), 1.5).is_err());
    }

    #[test]
    fn zero_eigenvalue_directions_never_enter_the_basis() {
        // Rank-2 data embedded in 4 dimensions.
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let data: Vec<Vec<f64>> = (0..100)
            .map(|_| {
                let a = rng.gen::<f64>();
                let b = rng.gen::<f64>();
                vec![a, b, a + b, a - b]
            })
            .collect();
        let m = PcaModel::fit(&data, 1.0).unwrap();
        assert_eq!(m.reduced_dim(), 2);
        assert!(m.eigenvalues().iter().all(|&l| l > 0.0));
    }
}
