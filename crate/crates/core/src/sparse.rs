//! Compressed sparse row matrices with a canonical entry order.
//!
//! Entries are kept sorted by `(row, col)` with no duplicates and no stored
//! zeros, so two matrices with identical content serialize to identical bytes.

use std::io::{Read, Write};

use nalgebra::DMatrix;

use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"DRSPMAT\0";
const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct SparseMatrix {
    rows: usize,
    cols: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
}

impl SparseMatrix {
    /// Builds a matrix from unordered triplets. Duplicates are summed and
    /// entries that end up exactly zero are dropped.
    pub fn from_triplets(
        rows: usize,
        cols: usize,
        mut triplets: Vec<(usize, usize, f64)>,
    ) -> Result<Self> {
        for &(r, c, _) in &triplets {
            if r >= rows {
                return Err(Error::IndexOutOfRange {
                    context: "sparse row",
                    index: r,
                    len: rows,
                });
            }
            if c >= cols {
                return Err(Error::IndexOutOfRange {
                    context: "sparse column",
                    index: c,
                    len: cols,
                });
            }
        }
        triplets.sort_by_key(|a| (a.0, a.1));

        let mut row_ptr = vec![0usize; rows + 1];
        let mut col_idx = Vec::with_capacity(triplets.len());
        let mut values = Vec::with_capacity(triplets.len());
        let mut last: Option<(usize, usize)> = None;
        let mut rows_of = Vec::with_capacity(triplets.len());
        for (r, c, v) in triplets {
            if last == Some((r, c)) {
                *values.last_mut().unwrap() += v;
            } else {
                col_idx.push(c);
                values.push(v);
                rows_of.push(r);
                last = Some((r, c));
            }
        }
        let mut keep_cols = Vec::with_capacity(col_idx.len());
        let mut keep_vals = Vec::with_capacity(values.len());
        for ((r, c), v) in rows_of.into_iter().zip(col_idx).zip(values) {
            if v != 0.0 {
                row_ptr[r + 1] += 1;
                keep_cols.push(c);
                keep_vals.push(v);
            }
        }
        for r in 0..rows {
            row_ptr[r + 1] += row_ptr[r];
        }
        Ok(Self {
            rows,
            cols,
            row_ptr,
            col_idx: keep_cols,
            values: keep_vals,
        })
    }

    pub fn identity(n: usize) -> Self {
        Self {
            rows: n,
            cols: n,
            row_ptr: (0..=n).collect(),
            col_idx: (0..n).collect(),
            values: vec![1.0; n],
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    /// Column indices and values of row `r`.
    pub fn row(&self, r: usize) -> (&[usize], &[f64]) {
        let span = self.row_ptr[r]..self.row_ptr[r + 1];
        (&self.col_idx[span.clone()], &self.values[span])
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        let (cols, vals) = self.row(r);
        match cols.binary_search(&c) {
            Ok(k) => vals[k],
            Err(_) => 0.0,
        }
    }

    /// Entries in canonical `(row, col)` order.
    pub fn triplets(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.rows).flat_map(move |r| {
            let (cols, vals) = self.row(r);
            cols.iter().zip(vals).map(move |(&c, &v)| (r, c, v))
        })
    }

    pub fn mul_vec(&self, x: &[f64]) -> Result<Vec<f64>> {
        crate::error::check_len("sparse mul_vec", self.cols, x.len())?;
        Ok((0..self.rows)
            .map(|r| {
                let (cols, vals) = self.row(r);
                cols.iter().zip(vals).map(|(&c, &v)| v * x[c]).sum()
            })
            .collect())
    }

    /// `selfᵀ · x`.
    pub fn tr_mul_vec(&self, x: &[f64]) -> Result<Vec<f64>> {
        crate::error::check_len("sparse tr_mul_vec", self.rows, x.len())?;
        let mut out = vec![0.0; self.cols];
        for (r, &xr) in x.iter().enumerate() {
            let (cols, vals) = self.row(r);
            for (&c, &v) in cols.iter().zip(vals) {
                out[c] += v * xr;
            }
        }
        Ok(out)
    }

    pub fn transpose(&self) -> Self {
        let mut counts = vec![0usize; self.cols + 1];
        for &c in &self.col_idx {
            counts[c + 1] += 1;
        }
        for c in 0..self.cols {
            counts[c + 1] += counts[c];
        }
        let row_ptr = counts.clone();
        let mut next = counts;
        let mut col_idx = vec![0; self.nnz()];
        let mut values = vec![0.0; self.nnz()];
        for r in 0..self.rows {
            let (cols, vals) = self.row(r);
            for (&c, &v) in cols.iter().zip(vals) {
                let p = next[c];
                col_idx[p] = r;
                values[p] = v;
                next[c] += 1;
            }
        }
        Self {
            rows: self.cols,
            cols: self.rows,
            row_ptr,
            col_idx,
            values,
        }
    }

    /// Gram matrix `selfᵀ · self`.
    pub fn gram(&self) -> Self {
        let t = self.transpose();
        let mut triplets = Vec::new();
        // Row i of AᵀA = Σ_r A[r,i] · A[r,:]
        let mut acc = vec![0.0; self.cols];
        let mut marked = vec![usize::MAX; self.cols];
        let mut touched = Vec::new();
        for i in 0..self.cols {
            touched.clear();
            let (rs, vs) = t.row(i);
            for (&r, &a) in rs.iter().zip(vs) {
                let (cols, vals) = self.row(r);
                for (&c, &b) in cols.iter().zip(vals) {
                    if marked[c] != i {
                        marked[c] = i;
                        acc[c] = 0.0;
                        touched.push(c);
                    }
                    acc[c] += a * b;
                }
            }
            for &c in &touched {
                triplets.push((i, c, acc[c]));
            }
        }
        Self::from_triplets(self.cols, self.cols, triplets).expect("indices in range")
    }

    /// Multiplies row `r` by `scale[r]`.
    pub fn scale_rows(&self, scale: &[f64]) -> Result<Self> {
        crate::error::check_len("scale_rows", self.rows, scale.len())?;
        let triplets = self.triplets().map(|(r, c, v)| (r, c, v * scale[r])).collect();
        Self::from_triplets(self.rows, self.cols, triplets)
    }

    /// Stacks `other` below `self`.
    pub fn vstack(&self, other: &SparseMatrix) -> Result<Self> {
        crate::error::check_len("vstack columns", self.cols, other.cols)?;
        let triplets = self
            .triplets()
            .chain(other.triplets().map(|(r, c, v)| (r + self.rows, c, v)))
            .collect();
        Self::from_triplets(self.rows + other.rows, self.cols, triplets)
    }

    pub fn is_symmetric(&self) -> bool {
        self.rows == self.cols && self.triplets().all(|(r, c, v)| self.get(c, r) == v)
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.rows, self.cols);
        for (r, c, v) in self.triplets() {
            m[(r, c)] = v;
        }
        m
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }

    /// Writes the sorted-triplet binary form: 16-byte header (8-byte magic,
    /// u32 version, u32 reserved), then `rows`, `cols`, `nnz` as u64 and
    /// `nnz` records of `(u64 row, u64 col, f64 value)`, all little-endian.
    pub fn write_binary<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        w.write_all(&0u32.to_le_bytes())?;
        for x in [self.rows, self.cols, self.nnz()] {
            w.write_all(&(x as u64).to_le_bytes())?;
        }
        for (r, c, v) in self.triplets() {
            w.write_all(&(r as u64).to_le_bytes())?;
            w.write_all(&(c as u64).to_le_bytes())?;
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::with_capacity(40 + 24 * self.nnz());
        self.write_binary(&mut buf).expect("writing to a Vec cannot fail");
        buf
    }

    pub fn read_binary<R: Read>(mut r: R) -> Result<Self> {
        let fmt = |e: std::io::Error| Error::Format(format!("sparse matrix: {e}"));
        let mut header = [0u8; 16];
        r.read_exact(&mut header).map_err(fmt)?;
        if &header[..8] != MAGIC {
            return Err(Error::Format("sparse matrix: bad magic".into()));
        }
        let version = u32::from_le_bytes(header[8..12].try_into().unwrap());
        if version != VERSION {
            return Err(Error::Format(format!(
                "sparse matrix: unsupported version {version}"
            )));
        }
        let read_u64 = |r: &mut R| -> Result<u64> {
            let mut b = [0u8; 8];
            r.read_exact(&mut b).map_err(fmt)?;
            Ok(u64::from_le_bytes(b))
        };
        let rows = read_u64(&mut r)? as usize;
        let cols = read_u64(&mut r)? as usize;
        let nnz = read_u64(&mut r)? as usize;
        let mut triplets = Vec::with_capacity(nnz);
        let mut prev: Option<(usize, usize)> = None;
        for _ in 0..nnz {
            let row = read_u64(&mut r)? as usize;
            let col = read_u64(&mut r)? as usize;
            let val = f64::from_bits(read_u64(&mut r)?);
            if prev.is_some_and(|p| p >= (row, col)) || val == 0.0 {
                return Err(Error::Format(
                    "sparse matrix: triplets not in canonical order".into(),
                ));
            }
            prev = Some((row, col));
            triplets.push((row, col, val));
        }
        Self::from_triplets(rows, cols, triplets)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn duplicates_are_summed_and_zeros_dropped() {
        let m = SparseMatrix::from_triplets(
            2,
            2,
            vec![(1, 0, 2.0), (0, 1, 1.0), (1, 0, -2.0), (0, 1, 0.5), (0, 0, 0.0)],
        )
        .unwrap();
        assert_eq!(m.nnz(), 1);
        assert_eq!(m.get(0, 1), 1.5);
        assert_eq!(m.get(1, 0), 0.0);
    }

    #[test]
    fn out_of_range_triplet_is_rejected() {
        assert!(SparseMatrix::from_triplets(2, 2, vec![(2, 0, 1.0)]).is_err());
    }

    #[test]
    fn gram_matches_dense_product() {
        let a = SparseMatrix::from_triplets(
            3,
            2,
            vec![(0, 0, 1.0), (1, 0, 2.0), (1, 1, -1.0), (2, 1, 3.0)],
        )
        .unwrap();
        let dense = a.to_dense();
        let expected = dense.transpose() * &dense;
        assert_eq!(a.gram().to_dense(), expected);
    }

    #[test]
    fn binary_form_is_canonical() {
        let a = SparseMatrix::from_triplets(2, 3, vec![(1, 2, 4.0), (0, 1, -1.0)]).unwrap();
        let b = SparseMatrix::from_triplets(2, 3, vec![(0, 1, -1.0), (1, 2, 4.0)]).unwrap();
        assert_eq!(a.to_bytes(), b.to_bytes());
        assert_eq!(&a.to_bytes()[..8], MAGIC);
        let back = SparseMatrix::read_binary(&a.to_bytes()[..]).unwrap();
        assert_eq!(back, a);
    }

    #[test]
    fn corrupt_header_is_rejected() {
        let mut bytes = SparseMatrix::identity(2).to_bytes();
        bytes[0] = b'X';
        assert!(SparseMatrix::read_binary(&bytes[..]).is_err());
    }
}
