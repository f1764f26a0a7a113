//! Rig approximation in Laplacian differential coordinates.
//!
//! The nonlinear part of a character rig's deformation is learned per pose in
//! differential coordinates by a wide network behind a PCA projection, while a
//! set of small per-anchor networks predicts a few Cartesian anchor positions.
//! The surface is recovered from both through an anchor-constrained sparse
//! least-squares solve whose Cholesky factor is computed once per mesh.

pub mod cholesky;
pub mod error;
pub mod eval;
pub mod mesh;
pub mod nn;
pub mod obj;
pub mod pipeline;
pub mod reconstruction;
pub mod rig;
pub mod shapes;
pub mod sparse;
pub mod spectral;

pub use error::{Error, ErrorCategory, Result};
pub use mesh::{Mesh, Space, Vec3, VertexField};
pub use reconstruction::{AnchorSet, FactorizedSystem};
pub use rig::{Affine, Pose, PoseParams, Rig, RigSpec, SyntheticRig};
pub use sparse::SparseMatrix;
