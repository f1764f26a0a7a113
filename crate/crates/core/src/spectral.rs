//! Dense spectral analysis of anchored Laplacians (small meshes only).
//!
//! Adding anchors to `L_s` as diagonal penalties gives the symmetric positive
//! definite operator `A = L_s + Σ ω_k² e_{p_k} e_{p_k}ᵀ`. Noise injected along
//! an eigenvector `e_k` of `A` comes back from the solve scaled by `1/λ_k`:
//! high-frequency modes (large λ) are damped, low-frequency modes amplified.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::cholesky::CholeskyFactor;
use crate::error::{Error, Result};
use crate::mesh::{symmetric_laplacian, Mesh};
use crate::reconstruction::{augment, AnchorSet};
use crate::sparse::SparseMatrix;

/// Largest matrix handled by the dense routines.
pub const DENSE_LIMIT: usize = 2000;

#[derive(Debug, Clone)]
pub struct EigenDecomposition {
    /// Ascending.
    pub eigenvalues: Vec<f64>,
    /// Orthonormal eigenvectors as columns, in eigenvalue order.
    pub eigenvectors: DMatrix<f64>,
}

impl EigenDecomposition {
    pub fn len(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn is_empty(&self) -> bool {
        self.eigenvalues.is_empty()
    }

    /// `max |EᵀE − I|`.
    pub fn orthonormality_residual(&self) -> f64 {
        let e = &self.eigenvectors;
        let gram = e.transpose() * e;
        (gram - DMatrix::identity(e.ncols(), e.ncols())).abs().max()
    }
}

fn check_dense(context: &'static str, n: usize) -> Result<()> {
    if n > DENSE_LIMIT {
        return Err(Error::SizeLimit {
            context,
            size: n,
            limit: DENSE_LIMIT,
        });
    }
    Ok(())
}

/// Full eigendecomposition of a symmetric sparse matrix.
pub fn eigen_analysis(matrix: &SparseMatrix) -> Result<EigenDecomposition> {
    check_dense("eigen_analysis", matrix.rows())?;
    if !matrix.is_symmetric() {
        return Err(Error::Format("eigen_analysis needs a symmetric matrix".into()));
    }
    let eig = SymmetricEigen::new(matrix.to_dense());
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]).then(a.cmp(&b)));
    let eigenvalues = order.iter().map(|&k| eig.eigenvalues[k]).collect();
    let eigenvectors = DMatrix::from_fn(matrix.rows(), order.len(), |i, j| eig.eigenvectors[(i, order[j])]);
    Ok(EigenDecomposition {
        eigenvalues,
        eigenvectors,
    })
}

/// `L_s + Σ ω_k² e_{p_k} e_{p_k}ᵀ`.
pub fn anchored_operator(mesh: &Mesh, anchors: &AnchorSet) -> Result<SparseMatrix> {
    let ls = symmetric_laplacian(mesh);
    // augment validates indices, weights and component coverage
    augment(&ls, anchors)?;
    let mut t: Vec<_> = ls.triplets().collect();
    t.extend(anchors.indices.iter().zip(&anchors.weights).map(|(&i, &w)| (i, i, w * w)));
    SparseMatrix::from_triplets(ls.rows(), ls.cols(), t)
}

/// One row of a dampening table.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModeResponse {
    pub mode: usize,
    pub eigenvalue: f64,
    /// `‖A⁻¹ e_k‖ / ‖e_k‖` measured through the sparse solver.
    pub amplification: f64,
}

/// Eigenbasis of the anchored operator together with a sparse factor used to
/// measure the response to injected noise.
pub struct SpectralProbe {
    eigen: EigenDecomposition,
    factor: CholeskyFactor,
}

impl SpectralProbe {
    pub fn new(mesh: &Mesh, anchors: &AnchorSet) -> Result<Self> {
        check_dense("spectral probe", mesh.vertex_count())?;
        let op = anchored_operator(mesh, anchors)?;
        let eigen = eigen_analysis(&op)?;
        let factor = CholeskyFactor::factorize(&op)?;
        Ok(Self { eigen, factor })
    }

    pub fn eigen(&self) -> &EigenDecomposition {
        &self.eigen
    }

    pub fn mode_count(&self) -> usize {
        self.eigen.len()
    }

    /// Injects `ε′ = e_k` as the right-hand side and returns the ratio of
    /// output to input norms.
    pub fn amplification(&self, k: usize) -> Result<ModeResponse> {
        if k >= self.eigen.len() {
            return Err(Error::IndexOutOfRange {
                context: "eigen mode",
                index: k,
                len: self.eigen.len(),
            });
        }
        let noise: Vec<f64> = self.eigen.eigenvectors.column(k).iter().copied().collect();
        let response = self.factor.solve(&noise)?;
        let ratio = DVector::from_vec(response).norm() / DVector::from_vec(noise).norm();
        Ok(ModeResponse {
            mode: k,
            eigenvalue: self.eigen.eigenvalues[k],
            amplification: ratio,
        })
    }

    pub fn table(&self) -> Result<Vec<ModeResponse>> {
        (0..self.mode_count()).map(|k| self.amplification(k)).collect()
    }
}

pub fn spectral_amplification(mesh: &Mesh, anchors: &AnchorSet, k: usize) -> Result<f64> {
    Ok(SpectralProbe::new(mesh, anchors)?.amplification(k)?.amplification)
}

/// Extreme singular values `(σ_min, σ_max)` of `L̃`, or of `L_s` when the
/// anchor set is empty.
pub fn condition_report(mesh: &Mesh, anchors: &AnchorSet) -> Result<(f64, f64)> {
    check_dense("condition_report", mesh.vertex_count() + anchors.len())?;
    let ls = symmetric_laplacian(mesh);
    let matrix = if anchors.is_empty() { ls } else { augment(&ls, anchors)? };
    let sv = matrix.to_dense().singular_values();
    let lo = sv.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = sv.iter().copied().fold(0.0, f64::max);
    Ok((lo, hi))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::Vec3;
    use crate::shapes;

    fn triangle() -> Mesh {
        Mesh::new(vec![Vec3::zeros(), Vec3::x(), Vec3::y()], vec![vec![0, 1, 2]]).unwrap()
    }

    #[test]
    fn triangle_spectrum() {
        let eig = eigen_analysis(&symmetric_laplacian(&triangle())).unwrap();
        let expected = [0.0, 3.0, 3.0];
        for (a, b) in eig.eigenvalues.iter().zip(expected) {
            assert!((a - b).abs() < 1e-12, "{:?}", eig.eigenvalues);
        }
        assert!(eig.orthonormality_residual() < 1e-8);
    }

    #[test]
    fn connected_mesh_has_one_zero_eigenvalue() {
        let m = shapes::uv_sphere(5, 8, 1.0);
        let eig = eigen_analysis(&symmetric_laplacian(&m)).unwrap();
        let zeros = eig.eigenvalues.iter().filter(|l| l.abs() < 1e-9).count();
        assert_eq!(zeros, 1);
    }

    #[test]
    fn size_limit_is_enforced() {
        let m = shapes::grid(50, 41, 1.0);
        assert!(matches!(
            eigen_analysis(&symmetric_laplacian(&m)),
            Err(Error::SizeLimit { .. })
        ));
    }

    #[test]
    fn amplification_is_inverse_eigenvalue() {
        let m = shapes::grid(8, 6, 1.0);
        let probe = SpectralProbe::new(&m, &AnchorSet::uniform(vec![0])).unwrap();
        let table = probe.table().unwrap();
        for r in &table {
            assert!((r.amplification * r.eigenvalue - 1.0).abs() < 1e-9);
        }
        let last = table.last().unwrap();
        assert!(table.iter().all(|r| r.amplification >= last.amplification));
        assert!(probe.amplification(table.len()).is_err());
    }

    #[test]
    fn unanchored_laplacian_has_zero_singular_value() {
        let m = shapes::uv_sphere(4, 6, 1.0);
        let (lo, hi) = condition_report(&m, &AnchorSet::uniform(vec![])).unwrap();
        assert!(lo < 1e-10);
        assert!(hi > 1.0);
        let (lo1, _) = condition_report(&m, &AnchorSet::uniform(vec![3])).unwrap();
        assert!(lo1 > 1e-6);
    }

    #[test]
    fn heavier_duplicate_anchor_does_not_shrink_sigma_min() {
        let m = shapes::uv_sphere(4, 6, 1.0);
        let ls = symmetric_laplacian(&m);
        let base = augment(&ls, &AnchorSet::uniform(vec![3])).unwrap();
        let extra = SparseMatrix::from_triplets(1, m.vertex_count(), vec![(0, 3, 2.0)]).unwrap();
        let stacked = base.vstack(&extra).unwrap();
        let min = |a: &SparseMatrix| a.to_dense().singular_values().iter().copied().fold(f64::INFINITY, f64::min);
        assert!(min(&stacked) >= min(&base));
    }
}
