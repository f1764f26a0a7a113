//! Anchor-constrained Laplacian reconstruction.
//!
//! The symmetric Laplacian `L_s` is singular (constants are in its kernel).
//! Appending one weighted indicator row per anchor vertex gives the
//! full-column-rank system
//!
//! ```text
//!     L̃ = [ L_s ; ω·I(P) ],      δ̃ = [ D·δ ; ω·V(P) ]
//! ```
//!
//! solved in the least-squares sense through the normal equations
//! `L̃ᵀL̃ V = L̃ᵀδ̃`. The Cholesky factor `RᵀR = L̃ᵀL̃` depends only on the
//! topology and the anchor set, so it is computed once and every pose costs
//! one forward and one backward substitution per coordinate channel.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::cholesky::CholeskyFactor;
use crate::error::{check_len, Error, Result};
use crate::mesh::{symmetric_laplacian, Mesh, Space, Vec3, VertexField};
use crate::sparse::SparseMatrix;

const CACHE_MAGIC: &[u8; 8] = b"DRFACTR\0";
const CACHE_VERSION: u32 = 1;

/// Anchor vertices and their constraint weights ω.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnchorSet {
    pub indices: Vec<usize>,
    pub weights: Vec<f64>,
}

impl AnchorSet {
    /// Anchors with the default weight ω = 1.
    pub fn uniform(indices: Vec<usize>) -> Self {
        let weights = vec![1.0; indices.len()];
        Self { indices, weights }
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    /// Checks uniqueness, range and positivity. Component coverage is checked
    /// by [`augment`], which knows the graph.
    pub fn validate(&self, n: usize) -> Result<()> {
        if self.indices.len() != self.weights.len() {
            return Err(Error::InvalidAnchors(format!(
                "{} indices but {} weights",
                self.indices.len(),
                self.weights.len()
            )));
        }
        if self.indices.is_empty() {
            return Err(Error::InvalidAnchors("anchor set is empty".into()));
        }
        let mut seen = vec![false; n];
        for &i in &self.indices {
            if i >= n {
                return Err(Error::IndexOutOfRange {
                    context: "anchor index",
                    index: i,
                    len: n,
                });
            }
            if std::mem::replace(&mut seen[i], true) {
                return Err(Error::InvalidAnchors(format!("duplicate anchor {i}")));
            }
        }
        if let Some(w) = self.weights.iter().find(|w| !(**w > 0.0) || !w.is_finite()) {
            return Err(Error::InvalidAnchors(format!("non-positive weight {w}")));
        }
        Ok(())
    }

    /// Rows of `field` at the anchor vertices.
    pub fn gather(&self, field: &VertexField) -> Vec<Vec3> {
        self.indices.iter().map(|&i| field.values[i]).collect()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

/// Connected components of the off-diagonal pattern of a square matrix.
fn pattern_components(m: &SparseMatrix) -> (Vec<usize>, usize) {
    let n = m.rows();
    let mut label = vec![usize::MAX; n];
    let mut count = 0;
    let mut stack = Vec::new();
    for s in 0..n {
        if label[s] != usize::MAX {
            continue;
        }
        label[s] = count;
        stack.push(s);
        while let Some(v) = stack.pop() {
            for &u in m.row(v).0 {
                if label[u] == usize::MAX {
                    label[u] = count;
                    stack.push(u);
                }
            }
        }
        count += 1;
    }
    (label, count)
}

/// Appends one row `ω_k · e_{p_k}ᵀ` per anchor below `L_s`.
pub fn augment(ls: &SparseMatrix, anchors: &AnchorSet) -> Result<SparseMatrix> {
    let n = ls.rows();
    check_len("augment: square laplacian", n, ls.cols())?;
    anchors.validate(n)?;
    let (label, count) = pattern_components(ls);
    let mut covered = vec![false; count];
    for &i in &anchors.indices {
        covered[label[i]] = true;
    }
    if let Some(c) = covered.iter().position(|c| !c) {
        let example = label.iter().position(|&l| l == c).unwrap();
        return Err(Error::InvalidAnchors(format!(
            "connected component {c} (containing vertex {example}) has no anchor"
        )));
    }
    let rows = anchors
        .indices
        .iter()
        .zip(&anchors.weights)
        .enumerate()
        .map(|(k, (&i, &w))| (k, i, w))
        .collect();
    let block = SparseMatrix::from_triplets(anchors.len(), n, rows)?;
    ls.vstack(&block)
}

/// Precomputed normal-equations factor, reusable across poses.
#[derive(Debug, Clone, PartialEq)]
pub struct FactorizedSystem {
    augmented: SparseMatrix,
    factor: CholeskyFactor,
    degrees: Vec<f64>,
    anchors: AnchorSet,
    mesh_hash: Option<String>,
}

/// Factorizes `L̃ᵀL̃` for an augmented matrix produced by [`augment`].
pub fn factorize(augmented: &SparseMatrix) -> Result<FactorizedSystem> {
    let n = augmented.cols();
    if augmented.rows() < n {
        return Err(Error::DimensionMismatch {
            context: "factorize: augmented rows",
            expected: n,
            actual: augmented.rows(),
        });
    }
    let factor = CholeskyFactor::factorize(&augmented.gram())?;
    factorize_parts(augmented.clone(), factor)
}

impl FactorizedSystem {
    /// Builds and factorizes the anchored system of `mesh`, tagging it with
    /// the mesh content hash.
    pub fn for_mesh(mesh: &Mesh, anchors: &AnchorSet) -> Result<Self> {
        let augmented = augment(&symmetric_laplacian(mesh), anchors)?;
        let mut sys = factorize(&augmented)?;
        sys.mesh_hash = Some(mesh.content_hash());
        Ok(sys)
    }

    pub fn vertex_count(&self) -> usize {
        self.degrees.len()
    }

    pub fn anchors(&self) -> &AnchorSet {
        &self.anchors
    }

    pub fn augmented(&self) -> &SparseMatrix {
        &self.augmented
    }

    pub fn factor(&self) -> &CholeskyFactor {
        &self.factor
    }

    pub fn degrees(&self) -> &[f64] {
        &self.degrees
    }

    pub fn mesh_hash(&self) -> Option<&str> {
        self.mesh_hash.as_deref()
    }

    /// Reconstructs positions from differential coordinates δ and anchor
    /// positions.
    pub fn reconstruct(&self, delta: &VertexField, anchor_positions: &[Vec3]) -> Result<VertexField> {
        check_len("reconstruct: delta", self.vertex_count(), delta.len())?;
        let weighted: Vec<Vec3> = delta
            .values
            .iter()
            .zip(&self.degrees)
            .map(|(d, &deg)| d * deg)
            .collect();
        self.reconstruct_weighted(&VertexField::differential(weighted), anchor_positions)
    }

    /// Same as [`reconstruct`](Self::reconstruct) but takes the
    /// degree-weighted differentials `D·δ` directly.
    pub fn reconstruct_weighted(
        &self,
        weighted_delta: &VertexField,
        anchor_positions: &[Vec3],
    ) -> Result<VertexField> {
        let n = self.vertex_count();
        check_len("reconstruct: delta", n, weighted_delta.len())?;
        check_len("reconstruct: anchor positions", self.anchors.len(), anchor_positions.len())?;
        let mut channels = [Vec::new(), Vec::new(), Vec::new()];
        for (axis, out) in channels.iter_mut().enumerate() {
            let mut rhs: Vec<f64> = weighted_delta.values.iter().map(|v| v[axis]).collect();
            rhs.extend(
                anchor_positions
                    .iter()
                    .zip(&self.anchors.weights)
                    .map(|(p, w)| w * p[axis]),
            );
            let projected = self.augmented.tr_mul_vec(&rhs)?;
            *out = self.factor.solve(&projected)?;
        }
        Ok(VertexField::from_channels(
            &channels[0],
            &channels[1],
            &channels[2],
            Space::Cartesian,
        ))
    }

    /// Writes the system: 16-byte header, mesh hash, then the augmented
    /// matrix, the ordering and the upper factor `R` in the sorted-triplet
    /// sparse format.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        self.write_to(&mut w).map_err(|e| Error::io(path, e))?;
        w.flush().map_err(|e| Error::io(path, e))
    }

    fn write_to<W: Write>(&self, w: &mut W) -> std::io::Result<()> {
        w.write_all(CACHE_MAGIC)?;
        w.write_all(&CACHE_VERSION.to_le_bytes())?;
        w.write_all(&0u32.to_le_bytes())?;
        let hash = self.mesh_hash.as_deref().unwrap_or("");
        w.write_all(&(hash.len() as u64).to_le_bytes())?;
        w.write_all(hash.as_bytes())?;
        self.augmented.write_binary(&mut *w)?;
        let perm = self.factor.permutation();
        w.write_all(&(perm.len() as u64).to_le_bytes())?;
        for &p in perm {
            w.write_all(&(p as u64).to_le_bytes())?;
        }
        self.factor.upper_factor().write_binary(&mut *w)
    }

    /// Loads a cached system, rejecting it if it was built for a different mesh.
    pub fn load(path: impl AsRef<Path>, mesh: &Mesh) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let sys = Self::read_from(BufReader::new(file))?;
        let expected = mesh.content_hash();
        let found = sys.mesh_hash.clone().unwrap_or_default();
        if found != expected {
            return Err(Error::HashMismatch {
                context: "factorized system",
                expected,
                found,
            });
        }
        Ok(sys)
    }

    fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let fmt = |e: std::io::Error| Error::Format(format!("factor cache: {e}"));
        let mut header = [0u8; 16];
        r.read_exact(&mut header).map_err(fmt)?;
        if &header[..8] != CACHE_MAGIC {
            return Err(Error::Format("factor cache: bad magic".into()));
        }
        if u32::from_le_bytes(header[8..12].try_into().unwrap()) != CACHE_VERSION {
            return Err(Error::Format("factor cache: unsupported version".into()));
        }
        let mut word = [0u8; 8];
        r.read_exact(&mut word).map_err(fmt)?;
        let hash_len = u64::from_le_bytes(word) as usize;
        if hash_len > 1024 {
            return Err(Error::Format("factor cache: implausible hash length".into()));
        }
        let mut hash = vec![0u8; hash_len];
        r.read_exact(&mut hash).map_err(fmt)?;
        let hash = String::from_utf8(hash).map_err(|_| Error::Format("factor cache: hash".into()))?;
        let augmented = SparseMatrix::read_binary(&mut r)?;
        r.read_exact(&mut word).map_err(fmt)?;
        let n = u64::from_le_bytes(word) as usize;
        check_len("factor cache: ordering", augmented.cols(), n)?;
        let mut perm = Vec::with_capacity(n);
        for _ in 0..n {
            r.read_exact(&mut word).map_err(fmt)?;
            perm.push(u64::from_le_bytes(word) as usize);
        }
        let upper = SparseMatrix::read_binary(&mut r)?;
        check_len("factor cache: factor size", n, upper.rows())?;
        let mut col_ptr = vec![0];
        let mut row_idx = Vec::with_capacity(upper.nnz());
        let mut values = Vec::with_capacity(upper.nnz());
        for j in 0..n {
            let (cols, vals) = upper.row(j);
            row_idx.extend_from_slice(cols);
            values.extend_from_slice(vals);
            col_ptr.push(row_idx.len());
        }
        let factor = CholeskyFactor::from_parts(perm, col_ptr, row_idx, values)?;
        let mut sys = factorize_parts(augmented, factor)?;
        sys.mesh_hash = (!hash.is_empty()).then_some(hash);
        Ok(sys)
    }
}

fn factorize_parts(augmented: SparseMatrix, factor: CholeskyFactor) -> Result<FactorizedSystem> {
    let n = augmented.cols();
    let degrees = (0..n).map(|i| augmented.get(i, i)).collect();
    let mut indices = Vec::new();
    let mut weights = Vec::new();
    for r in n..augmented.rows() {
        let (cols, vals) = augmented.row(r);
        if cols.len() != 1 {
            return Err(Error::Format(format!("augmented row {r} is not an anchor row")));
        }
        indices.push(cols[0]);
        weights.push(vals[0]);
    }
    Ok(FactorizedSystem {
        augmented,
        factor,
        degrees,
        anchors: AnchorSet { indices, weights },
        mesh_hash: None,
    })
}
