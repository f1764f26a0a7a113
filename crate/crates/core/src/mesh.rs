//! Mesh topology, uniform Laplacian operators and differential coordinates.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{check_len, Error, Result};
use crate::sparse::SparseMatrix;

pub type Vec3 = Vector3<f64>;

/// A polygon mesh with the undirected edge graph induced by its faces.
///
/// Vertex order is the order of the source file and every index elsewhere in
/// the crate (anchors, influence maps, datasets) refers to it.
#[derive(Debug, Clone, PartialEq)]
pub struct Mesh {
    vertices: Vec<Vec3>,
    faces: Vec<Vec<usize>>,
    adjacency: Vec<Vec<usize>>,
}

impl Mesh {
    /// Builds a mesh and its adjacency. Polygons contribute their boundary
    /// edges only; quads are not split along a diagonal.
    pub fn new(vertices: Vec<Vec3>, faces: Vec<Vec<usize>>) -> Result<Self> {
        let n = vertices.len();
        if faces.is_empty() {
            return Err(Error::Format("mesh has no faces".into()));
        }
        let mut adjacency: Vec<Vec<usize>> = vec![Vec::new(); n];
        for face in &faces {
            if face.len() < 3 {
                return Err(Error::Format(format!(
                    "face with {} vertices, need at least 3",
                    face.len()
                )));
            }
            for (k, &a) in face.iter().enumerate() {
                let b = face[(k + 1) % face.len()];
                for v in [a, b] {
                    if v >= n {
                        return Err(Error::IndexOutOfRange {
                            context: "face vertex",
                            index: v,
                            len: n,
                        });
                    }
                }
                if a != b {
                    adjacency[a].push(b);
                    adjacency[b].push(a);
                }
            }
        }
        for (i, nbrs) in adjacency.iter_mut().enumerate() {
            nbrs.sort_unstable();
            nbrs.dedup();
            if nbrs.is_empty() {
                return Err(Error::IsolatedVertex(i));
            }
        }
        Ok(Self {
            vertices,
            faces,
            adjacency,
        })
    }

    pub fn vertex_count(&self) -> usize {
        self.vertices.len()
    }

    pub fn vertices(&self) -> &[Vec3] {
        &self.vertices
    }

    pub fn faces(&self) -> &[Vec<usize>] {
        &self.faces
    }

    /// Sorted neighbor indices of vertex `i`.
    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.adjacency[i]
    }

    pub fn degree(&self, i: usize) -> usize {
        self.adjacency[i].len()
    }

    pub fn degrees(&self) -> Vec<f64> {
        self.adjacency.iter().map(|a| a.len() as f64).collect()
    }

    pub fn edge_count(&self) -> usize {
        self.adjacency.iter().map(Vec::len).sum::<usize>() / 2
    }

    /// The rest positions as a Cartesian field.
    pub fn positions(&self) -> VertexField {
        VertexField::cartesian(self.vertices.clone())
    }

    /// Same topology, new vertex positions.
    pub fn with_positions(&self, positions: &VertexField) -> Result<Self> {
        check_len("mesh positions", self.vertex_count(), positions.len())?;
        Ok(Self {
            vertices: positions.values.clone(),
            faces: self.faces.clone(),
            adjacency: self.adjacency.clone(),
        })
    }

    /// Component label per vertex and the number of components.
    pub fn components(&self) -> (Vec<usize>, usize) {
        let n = self.vertex_count();
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
                for &u in &self.adjacency[v] {
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

    /// Axis-aligned bounding box `(min, max)`.
    pub fn bounds(&self) -> (Vec3, Vec3) {
        let mut lo = Vec3::repeat(f64::INFINITY);
        let mut hi = Vec3::repeat(f64::NEG_INFINITY);
        for v in &self.vertices {
            lo = lo.inf(v);
            hi = hi.sup(v);
        }
        (lo, hi)
    }

    /// Vertical (y) extent, used as the face-height scale for thresholds and
    /// relative error reporting.
    pub fn height(&self) -> f64 {
        let (lo, hi) = self.bounds();
        hi.y - lo.y
    }

    /// SHA-256 over vertex bits and face indices, hex encoded.
    pub fn content_hash(&self) -> String {
        let mut h = Sha256::new();
        h.update((self.vertices.len() as u64).to_le_bytes());
        for v in &self.vertices {
            for c in v.iter() {
                h.update(c.to_bits().to_le_bytes());
            }
        }
        h.update((self.faces.len() as u64).to_le_bytes());
        for f in &self.faces {
            h.update((f.len() as u64).to_le_bytes());
            for &i in f {
                h.update((i as u64).to_le_bytes());
            }
        }
        hex::encode(h.finalize())
    }
}

/// Coordinate space tag of a [`VertexField`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Space {
    Cartesian,
    Differential,
}

/// One 3-vector per mesh vertex.
#[derive(Debug, Clone, PartialEq)]
pub struct VertexField {
    pub values: Vec<Vec3>,
    pub space: Space,
}

impl VertexField {
    pub fn cartesian(values: Vec<Vec3>) -> Self {
        Self {
            values,
            space: Space::Cartesian,
        }
    }

    pub fn differential(values: Vec<Vec3>) -> Self {
        Self {
            values,
            space: Space::Differential,
        }
    }

    pub fn zeros(n: usize, space: Space) -> Self {
        Self {
            values: vec![Vec3::zeros(); n],
            space,
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Values flattened as `[x0, y0, z0, x1, ...]`.
    pub fn flatten(&self) -> Vec<f64> {
        self.values.iter().flat_map(|v| [v.x, v.y, v.z]).collect()
    }

    pub fn from_flat(flat: &[f64], space: Space) -> Result<Self> {
        if !flat.len().is_multiple_of(3) {
            return Err(Error::DimensionMismatch {
                context: "flat vertex field",
                expected: flat.len() / 3 * 3,
                actual: flat.len(),
            });
        }
        Ok(Self {
            values: flat.chunks_exact(3).map(|c| Vec3::new(c[0], c[1], c[2])).collect(),
            space,
        })
    }

    /// Coordinate channel `axis` as a vector.
    pub fn channel(&self, axis: usize) -> Vec<f64> {
        self.values.iter().map(|v| v[axis]).collect()
    }

    pub fn from_channels(x: &[f64], y: &[f64], z: &[f64], space: Space) -> Self {
        Self {
            values: x
                .iter()
                .zip(y)
                .zip(z)
                .map(|((&x, &y), &z)| Vec3::new(x, y, z))
                .collect(),
            space,
        }
    }

    pub fn max_distance(&self, other: &VertexField) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max)
    }
}

/// `L = I − D⁻¹A`: unit diagonal and `−1/dᵢ` for each neighbor.
pub fn uniform_laplacian(mesh: &Mesh) -> SparseMatrix {
    let mut t = Vec::with_capacity(mesh.vertex_count() + 2 * mesh.edge_count());
    for i in 0..mesh.vertex_count() {
        let w = 1.0 / mesh.degree(i) as f64;
        t.push((i, i, 1.0));
        t.extend(mesh.neighbors(i).iter().map(|&j| (i, j, -w)));
    }
    SparseMatrix::from_triplets(mesh.vertex_count(), mesh.vertex_count(), t)
        .expect("adjacency indices are in range")
}

/// `L_s = D − A = D·L`: symmetric, integer weights.
pub fn symmetric_laplacian(mesh: &Mesh) -> SparseMatrix {
    let mut t = Vec::with_capacity(mesh.vertex_count() + 2 * mesh.edge_count());
    for i in 0..mesh.vertex_count() {
        t.push((i, i, mesh.degree(i) as f64));
        t.extend(mesh.neighbors(i).iter().map(|&j| (i, j, -1.0)));
    }
    SparseMatrix::from_triplets(mesh.vertex_count(), mesh.vertex_count(), t)
        .expect("adjacency indices are in range")
}

/// Applies the uniform Laplacian as `D⁻¹(L_s x)`. The integer-weight form
/// maps constant vectors to exactly zero, which the explicit `−1/dᵢ` entries
/// cannot guarantee in floating point.
pub fn apply_uniform_laplacian(mesh: &Mesh, x: &[f64]) -> Result<Vec<f64>> {
    check_len("laplacian input", mesh.vertex_count(), x.len())?;
    Ok((0..mesh.vertex_count())
        .map(|i| {
            let d = mesh.degree(i) as f64;
            let sum: f64 = mesh.neighbors(i).iter().map(|&j| x[j]).sum();
            (d * x[i] - sum) / d
        })
        .collect())
}

/// `δᵢ = vᵢ − (1/dᵢ) Σ_{j∈Aᵢ} vⱼ`, per coordinate channel.
pub fn to_differential(mesh: &Mesh, positions: &VertexField) -> Result<VertexField> {
    check_len("to_differential", mesh.vertex_count(), positions.len())?;
    let v = &positions.values;
    let values = (0..mesh.vertex_count())
        .map(|i| {
            let nbrs = mesh.neighbors(i);
            let centroid = nbrs.iter().fold(Vec3::zeros(), |acc, &j| acc + v[j]) / nbrs.len() as f64;
            v[i] - centroid
        })
        .collect();
    Ok(VertexField::differential(values))
}

/// Degree-weighted differentials `D·δ = L_s·V`.
pub fn to_weighted_differential(mesh: &Mesh, positions: &VertexField) -> Result<VertexField> {
    check_len("to_weighted_differential", mesh.vertex_count(), positions.len())?;
    let v = &positions.values;
    let values = (0..mesh.vertex_count())
        .map(|i| {
            let nbrs = mesh.neighbors(i);
            let sum = nbrs.iter().fold(Vec3::zeros(), |acc, &j| acc + v[j]);
            v[i] * nbrs.len() as f64 - sum
        })
        .collect();
    Ok(VertexField::differential(values))
}

/// Multiplies each channel of a field by a sparse operator.
pub fn apply_to_field(op: &SparseMatrix, field: &VertexField, space: Space) -> Result<VertexField> {
    let x = op.mul_vec(&field.channel(0))?;
    let y = op.mul_vec(&field.channel(1))?;
    let z = op.mul_vec(&field.channel(2))?;
    Ok(VertexField::from_channels(&x, &y, &z, space))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::shapes;

    fn triangle() -> Mesh {
        Mesh::new(
            vec![Vec3::new(0.0, 0.0, 0.0), Vec3::new(1.0, 0.0, 0.0), Vec3::new(0.0, 1.0, 0.0)],
            vec![vec![0, 1, 2]],
        )
        .unwrap()
    }

    fn path3() -> Mesh {
        // Two triangles sharing nothing but forming a path 0-1-2 requires a
        // polygon; a degenerate face list gives the path graph directly.
        Mesh::new(
            vec![Vec3::zeros(), Vec3::x(), Vec3::x() * 2.0],
            vec![vec![0, 1, 2, 1]],
        )
        .unwrap()
    }

    #[test]
    fn triangle_degrees_and_laplacian() {
        let m = triangle();
        assert_eq!(m.degrees(), vec![2.0; 3]);
        let l = uniform_laplacian(&m);
        for i in 0..3 {
            for j in 0..3 {
                let expected = if i == j { 1.0 } else { -0.5 };
                assert_eq!(l.get(i, j), expected);
            }
        }
        let ls = symmetric_laplacian(&m);
        for i in 0..3 {
            for j in 0..3 {
                let expected = if i == j { 2.0 } else { -1.0 };
                assert_eq!(ls.get(i, j), expected);
            }
        }
    }

    #[test]
    fn path_middle_row() {
        let m = path3();
        assert_eq!(m.neighbors(1), &[0, 2]);
        assert_eq!(m.degree(0), 1);
        let l = uniform_laplacian(&m);
        assert_eq!([l.get(1, 0), l.get(1, 1), l.get(1, 2)], [-0.5, 1.0, -0.5]);
    }

    #[test]
    fn quad_adjacency_has_no_diagonal() {
        let m = Mesh::new(
            vec![Vec3::zeros(), Vec3::x(), Vec3::new(1.0, 1.0, 0.0), Vec3::y()],
            vec![vec![0, 1, 2, 3]],
        )
        .unwrap();
        assert_eq!(m.neighbors(0), &[1, 3]);
        assert_eq!(m.neighbors(1), &[0, 2]);
        assert_eq!(m.edge_count(), 4);
    }

    #[test]
    fn isolated_vertex_is_reported() {
        let err = Mesh::new(
            vec![Vec3::zeros(), Vec3::x(), Vec3::y(), Vec3::z()],
            vec![vec![0, 1, 2]],
        )
        .unwrap_err();
        assert!(matches!(err, Error::IsolatedVertex(3)));
    }

    #[test]
    fn differential_of_right_triangle() {
        let m = triangle();
        let d = to_differential(&m, &m.positions()).unwrap();
        assert_eq!(d.values[0], Vec3::new(-0.5, -0.5, 0.0));
        assert_eq!(d.space, Space::Differential);
    }

    #[test]
    fn constant_field_has_zero_differential() {
        let m = shapes::uv_sphere(6, 9, 1.0);
        let p = Vec3::new(3.0, -2.0, 0.25);
        let field = VertexField::cartesian(vec![p; m.vertex_count()]);
        let d = to_differential(&m, &field).unwrap();
        assert!(d.values.iter().all(|v| *v == Vec3::zeros()));
    }

    #[test]
    fn length_mismatch_is_an_error() {
        let m = triangle();
        let f = VertexField::cartesian(vec![Vec3::zeros(); 2]);
        assert!(to_differential(&m, &f).is_err());
    }

    #[test]
    fn smallest_eigenvalue_of_symmetric_laplacian_is_zero() {
        let m = shapes::grid(5, 4, 1.0);
        let ls = symmetric_laplacian(&m).to_dense();
        let eig = nalgebra::SymmetricEigen::new(ls);
        let (k, min) = eig
            .eigenvalues
            .iter()
            .enumerate()
            .min_by(|a, b| a.1.total_cmp(b.1))
            .unwrap();
        assert!(min.abs() < 1e-12);
        let v = eig.eigenvectors.column(k);
        let c = v[0];
        assert!(v.iter().all(|x| (x - c).abs() < 1e-10));
    }

    #[test]
    fn disconnected_components_are_counted() {
        let mut verts = triangle().vertices().to_vec();
        verts.extend(verts.clone());
        let m = Mesh::new(verts, vec![vec![0, 1, 2], vec![3, 4, 5]]).unwrap();
        let (labels, count) = m.components();
        assert_eq!(count, 2);
        assert_eq!(labels, vec![0, 0, 0, 1, 1, 1]);
    }
}
