use super::tensor::Tensor;
use crate::error::{NrkgError, Result};

/// Compressed sparse row matrix used as a constant linear operator.
#[derive(Clone, Debug, PartialEq)]
pub struct SparseMatrix {
    rows: usize,
    cols: usize,
    indptr: Vec<usize>,
    indices: Vec<usize>,
    values: Vec<f64>,
}

impl SparseMatrix {
    /// Builds from `(row, col, value)` entries; duplicates are summed.
    pub fn from_entries(rows: usize, cols: usize, mut entries: Vec<(usize, usize, f64)>) -> Result<Self> {
        if let Some(&(r, c, _)) = entries.iter().find(|(r, c, _)| *r >= rows || *c >= cols) {
            return Err(NrkgError::Dimension(format!("entry ({r}, {c}) outside {rows}x{cols}")));
        }
        entries.sort_by_key(|e| (e.0, e.1));
        let mut indptr = vec![0; rows + 1];
        let mut indices = Vec::with_capacity(entries.len());
        let mut values: Vec<f64> = Vec::with_capacity(entries.len());
        let mut last: Option<(usize, usize)> = None;
        for (r, c, v) in entries {
            if last == Some((r, c)) {
                *values.last_mut().unwrap() += v;
                continue;
            }
            indices.push(c);
            values.push(v);
            indptr[r + 1] += 1;
            last = Some((r, c));
        }
        for i in 0..rows {
            indptr[i + 1] += indptr[i];
        }
        Ok(Self {
            rows,
            cols,
            indptr,
            indices,
            values,
        })
    }

    /// Drops exact zeros of a dense matrix.
    pub fn from_dense(t: &Tensor) -> Self {
        let (rows, cols) = t.dims2();
        let entries = (0..rows)
            .flat_map(|i| (0..cols).map(move |j| (i, j)))
            .filter_map(|(i, j)| {
                let v = t.get(i, j);
                (v != 0.0).then_some((i, j, v))
            })
            .collect();
        Self::from_entries(rows, cols, entries).expect("indices in range")
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

    pub fn row_entries(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let span = self.indptr[i]..self.indptr[i + 1];
        self.indices[span.clone()]
            .iter()
            .copied()
            .zip(self.values[span].iter().copied())
    }

    pub fn to_dense(&self) -> Tensor {
        let mut out = Tensor::zeros(&[self.rows, self.cols]);
        for i in 0..self.rows {
            for (j, v) in self.row_entries(i) {
                out.values_mut()[i * self.cols + j] += v;
            }
        }
        out
    }

    /// `self * x` for a dense `x` with `m` columns (row-major slice).
    pub(crate) fn matmul_dense(&self, x: &[f64], m: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.rows * m];
        for i in 0..self.rows {
            let out_row = &mut out[i * m..(i + 1) * m];
            for (j, v) in self.row_entries(i) {
                for (o, &xv) in out_row.iter_mut().zip(&x[j * m..(j + 1) * m]) {
                    *o += v * xv;
                }
            }
        }
        out
    }

    /// `self^T * g` for a dense `g` with `m` columns.
    pub(crate) fn transpose_matmul_dense(&self, g: &[f64], m: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.cols * m];
        for i in 0..self.rows {
            let g_row = &g[i * m..(i + 1) * m];
            for (j, v) in self.row_entries(i) {
                for (o, &gv) in out[j * m..(j + 1) * m].iter_mut().zip(g_row) {
                    *o += v * gv;
                }
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dense_round_trip_and_products() {
        let d = Tensor::from_rows(&[vec![0.0, 2.0, 0.0], vec![1.0, 0.0, -1.0]]).unwrap();
        let s = SparseMatrix::from_dense(&d);
        assert_eq!(s.nnz(), 3);
        assert_eq!(s.to_dense(), d);
        let x = Tensor::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0], vec![5.0, 6.0]]).unwrap();
        assert_eq!(s.matmul_dense(x.values(), 2), d.matmul(&x).unwrap().into_values());
        let g = Tensor::from_rows(&[vec![1.0, -1.0], vec![0.5, 2.0]]).unwrap();
        assert_eq!(
            s.transpose_matmul_dense(g.values(), 2),
            d.transpose().matmul(&g).unwrap().into_values()
        );
    }

    #[test]
    fn duplicates_are_summed() {
        let s = SparseMatrix::from_entries(1, 1, vec![(0, 0, 1.0), (0, 0, 2.5)]).unwrap();
        assert_eq!(s.to_dense().values(), &[3.5]);
        assert!(SparseMatrix::from_entries(1, 1, vec![(1, 0, 1.0)]).is_err());
    }
}
