//! Principal component bases of training labels.
//!
//! The eigendecomposition runs on whichever of `XᵀX` and `XXᵀ` is smaller,
//! so a few thousand poses of a mesh with ten thousand coordinates only need
//! a pose-sized symmetric eigensolve.

use faer::{Mat, Side};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PcaBasis {
    pub mean: DVector<f64>,
    /// `k × d`, orthonormal rows in decreasing variance order.
    pub components: DMatrix<f64>,
    /// Variance captured by each component.
    pub variances: Vec<f64>,
}

impl PcaBasis {
    pub fn k(&self) -> usize {
        self.components.nrows()
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// Coefficients of the columns of `data` (`d × m` → `k × m`).
    pub fn project(&self, data: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        check_len("pca project", self.dim(), data.nrows())?;
        let mut centered = data.clone();
        for mut col in centered.column_iter_mut() {
            col -= &self.mean;
        }
        Ok(&self.components * centered)
    }

    /// Inverse of [`project`](Self::project) restricted to the subspace.
    pub fn reconstruct(&self, coeffs: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        check_len("pca reconstruct", self.k(), coeffs.nrows())?;
        let mut out = self.components.transpose() * coeffs;
        for mut col in out.column_iter_mut() {
            col += &self.mean;
        }
        Ok(out)
    }

    /// `‖X − X̂‖_F / ‖X − μ‖_F` for `X̂` the projection onto the basis.
    pub fn reprojection_error(&self, data: &DMatrix<f64>) -> Result<f64> {
        let rebuilt = self.reconstruct(&self.project(data)?)?;
        let num = (data - rebuilt).norm();
        let mut centered = data.clone();
        for mut col in centered.column_iter_mut() {
            col -= &self.mean;
        }
        let den = centered.norm();
        Ok(if den == 0.0 { 0.0 } else { num / den })
    }

    /// `max |CCᵀ − I|`.
    pub fn orthonormality_residual(&self) -> f64 {
        let k = self.k();
        if k == 0 {
            return 0.0;
        }
        (&self.components * self.components.transpose() - DMatrix::identity(k, k))
            .abs()
            .max()
    }

    /// First `k` components.
    pub fn truncated(&self, k: usize) -> PcaBasis {
        let k = k.min(self.k());
        PcaBasis {
            mean: self.mean.clone(),
            components: self.components.rows(0, k).into_owned(),
            variances: self.variances[..k].to_vec(),
        }
    }

    /// Drops trailing components whose variance is numerically zero
    /// relative to the first. Keeps at least one.
    pub fn without_null_components(self) -> PcaBasis {
        let top = self.variances.first().copied().unwrap_or(0.0);
        let keep = self
            .variances
            .iter()
            .take_while(|&&v| v > top * NULL_VARIANCE_RATIO)
            .count()
            .max(1);
        if keep == self.k() {
            return self;
        }
        self.truncated(keep)
    }
}

/// Variance ratio below which a component is treated as numerically absent;
/// roughly the eigensolver precision of the Gram path.
pub const NULL_VARIANCE_RATIO: f64 = 1e-10;

/// `k = round(fraction · n)`, at least 1.
pub fn default_component_count(vertex_count: usize, fraction: f64) -> usize {
    ((fraction * vertex_count as f64).round() as usize).max(1)
}

/// Top-`k` principal directions of the columns of `data` (`d × m`).
pub fn pca_fit(data: &DMatrix<f64>, k: usize) -> Result<PcaBasis> {
    let (d, m) = data.shape();
    if m == 0 || k > d.min(m) {
        return Err(Error::Config(format!(
            "cannot fit {k} components to {m} samples of dimension {d}"
        )));
    }
    let mean = data.column_mean();
    let xc = Mat::<f64>::from_fn(d, m, |i, j| data[(i, j)] - mean[i]);

    // directions are assembled as contiguous columns of a d × k matrix
    let (directions, variances) = if m <= d {
        let gram = xc.transpose() * &xc;
        let eig = gram.self_adjoint_eigen(Side::Lower).map_err(|e| Error::Format(format!("eigensolver: {e:?}")))?;
        let s = eig.S().column_vector();
        let u = eig.U();
        let lambda_max = s[m - 1].max(0.0);
        let tol = lambda_max * (d.max(m) as f64) * f64::EPSILON * 10.0;
        let top: Vec<usize> = (0..m).rev().take(k).collect();
        let mut picked = Mat::<f64>::zeros(m, k);
        let mut vars = Vec::with_capacity(k);
        for (c, &j) in top.iter().enumerate() {
            let lambda = s[j].max(0.0);
            vars.push(lambda / (m as f64));
            if lambda > tol {
                let inv = 1.0 / lambda.sqrt();
                for i in 0..m {
                    picked[(i, c)] = u[(i, j)] * inv;
                }
            }
        }
        let v = &xc * &picked;
        (DMatrix::from_fn(d, k, |i, c| v[(i, c)]), vars)
    } else {
        let cov = &xc * xc.transpose();
        let eig = cov.self_adjoint_eigen(Side::Lower).map_err(|e| Error::Format(format!("eigensolver: {e:?}")))?;
        let s = eig.S().column_vector();
        let u = eig.U();
        let top: Vec<usize> = (0..d).rev().take(k).collect();
        let vars = top.iter().map(|&j| s[j].max(0.0) / (m as f64)).collect();
        (DMatrix::from_fn(d, k, |i, c| u[(i, top[c])]), vars)
    };
    let components = orthonormalize(directions).transpose();
    Ok(PcaBasis {
        mean,
        components,
        variances,
    })
}

/// Smallest basis (up to `k_max`) whose training reprojection error is at
/// most `threshold`.
pub fn pca_fit_threshold(data: &DMatrix<f64>, threshold: f64, k_max: usize) -> Result<PcaBasis> {
    let full = pca_fit(data, k_max)?;
    let total: f64 = {
        let mean = &full.mean;
        data.column_iter().map(|c| (c - mean).norm_squared()).sum::<f64>() / data.ncols() as f64
    };
    let mut captured = 0.0;
    for k in 0..=full.k() {
        let residual = (total - captured).max(0.0);
        if total == 0.0 || (residual / total).sqrt() <= threshold {
            return Ok(full.truncated(k));
        }
        if k < full.k() {
            captured += full.variances[k];
        }
    }
    Ok(full)
}

/// Two passes of modified Gram-Schmidt over the columns; columns that vanish
/// are replaced by the first coordinate axes independent of the others. Each
/// column is signed so its largest entry is positive.
fn orthonormalize(mut cols: DMatrix<f64>) -> DMatrix<f64> {
    let (d, k) = cols.shape();
    let mut next_axis = 0;
    for r in 0..k {
        let (done, mut rest) = cols.columns_range_pair_mut(0..r, r..);
        let mut col = rest.column_mut(0);
        for _ in 0..2 {
            for p in 0..r {
                let prev = done.column(p);
                let dot = col.dot(&prev);
                col.axpy(-dot, &prev, 1.0);
            }
        }
        let mut norm = col.norm();
        while norm < 1e-8 {
            // rank-deficient data: complete the basis deterministically
            let mut e = nalgebra::DVector::zeros(d);
            e[next_axis] = 1.0;
            next_axis += 1;
            for _ in 0..2 {
                for p in 0..r {
                    let prev = done.column(p);
                    let dot = e.dot(&prev);
                    e.axpy(-dot, &prev, 1.0);
                }
            }
            if e.norm() > 0.5 {
                norm = e.norm();
                col.copy_from(&e);
            }
        }
        col.scale_mut(1.0 / norm);
        let imax = col.iamax();
        if col[imax] < 0.0 {
            col.neg_mut();
        }
    }
    cols
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn null_components_are_dropped() {
        let a = random(40, 3, 1);
        let b = random(3, 90, 2);
        let basis = pca_fit(&(a * b), 10).unwrap();
        assert_eq!(basis.k(), 10);
        let kept = basis.without_null_components();
        assert_eq!(kept.k(), 3);
        assert!(kept.orthonormality_residual() < 1e-12);
    }

    fn random(rows: usize, cols: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        DMatrix::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0))
    }

    /// Relative residual predicted by the singular values of the centered
    /// data.
    fn svd_oracle(data: &DMatrix<f64>, k: usize) -> f64 {
        let mean = data.column_mean();
        let mut c = data.clone();
        for mut col in c.column_iter_mut() {
            col -= &mean;
        }
        let mut sv: Vec<f64> = c.singular_values().iter().copied().collect();
        sv.sort_by(|a, b| b.total_cmp(a));
        let total: f64 = sv.iter().map(|s| s * s).sum();
        let tail: f64 = sv[k.min(sv.len())..].iter().map(|s| s * s).sum();
        (tail / total).sqrt()
    }

    #[test]
    fn plane_data_is_recovered_exactly() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = random(30, 1, 1);
        let b = random(30, 1, 2);
        let offset = random(30, 1, 4);
        let data = DMatrix::from_fn(30, 40, |i, j| {
            let _ = j;
            offset[i]
        }) + &a * DMatrix::from_fn(1, 40, |_, _| rng.random_range(-2.0..2.0))
            + &b * DMatrix::from_fn(1, 40, |_, _| rng.random_range(-2.0..2.0));
        let basis = pca_fit(&data, 2).unwrap();
        assert!(basis.reprojection_error(&data).unwrap() < 1e-9);
        assert!(basis.orthonormality_residual() < 1e-8);
        // rank 2 with k = 5: extra rows are completed orthonormally
        let wide = pca_fit(&data, 5).unwrap();
        assert!(wide.orthonormality_residual() < 1e-8);
        assert!(wide.reprojection_error(&data).unwrap() < 1e-9);
    }

    #[test]
    fn full_rank_basis_is_exact() {
        let data = random(6, 20, 5);
        let basis = pca_fit(&data, 6).unwrap();
        assert!(basis.reprojection_error(&data).unwrap() < 1e-9);
    }

    #[test]
    fn errors_follow_singular_values_on_both_paths() {
        for (d, m) in [(40, 25), (25, 40)] {
            let data = random(d, m, 8);
            let mut prev = f64::INFINITY;
            for k in [1, 2, 5, 10, 20] {
                let basis = pca_fit(&data, k).unwrap();
                let err = basis.reprojection_error(&data).unwrap();
                assert!((err - svd_oracle(&data, k)).abs() < 1e-9, "d={d} m={m} k={k}");
                assert!(err <= prev);
                assert!(basis.orthonormality_residual() < 1e-8);
                prev = err;
            }
        }
    }

    #[test]
    fn too_many_components_is_an_error() {
        let data = random(5, 3, 1);
        assert!(pca_fit(&data, 4).is_err());
        assert_eq!(pca_fit(&data, 0).unwrap().k(), 0);
    }

    #[test]
    fn threshold_mode_picks_smallest_sufficient_k() {
        let data = random(30, 50, 2);
        let basis = pca_fit_threshold(&data, 0.5, 30).unwrap();
        let k = basis.k();
        assert!(svd_oracle(&data, k) <= 0.5 + 1e-12);
        assert!(svd_oracle(&data, k - 1) > 0.5);
    }

    #[test]
    fn default_count_is_five_percent() {
        assert_eq!(default_component_count(4403, 0.05), 220);
        assert_eq!(default_component_count(10, 0.05), 1);
    }
}
