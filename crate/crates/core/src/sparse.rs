//! Minimal CSR matrix, just what the absorption solvers need: row
//! iteration, matrix-vector products, a column listing, and a max norm.

/// Compressed sparse rows over f64. Column indices ascend within a row,
/// so products accumulate in a fixed order and stay bit-reproducible.
#[derive(Clone, Debug, PartialEq)]
pub struct CsrMatrix {
    n_rows: usize,
    n_cols: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<u32>,
    values: Vec<f64>,
}

impl CsrMatrix {
    /// Builds from per-row entry lists. Entries must carry in-bounds
    /// columns, ascending within each row.
    pub fn from_rows(n_cols: usize, rows: &[Vec<(u32, f64)>]) -> CsrMatrix {
        let nnz = rows.iter().map(Vec::len).sum();
        let mut row_ptr = Vec::with_capacity(rows.len() + 1);
        let mut col_idx = Vec::with_capacity(nnz);
        let mut values = Vec::with_capacity(nnz);
        row_ptr.push(0);
        for row in rows {
            debug_assert!(row.windows(2).all(|w| w[0].0 < w[1].0));
            for (col, value) in row {
                debug_assert!((*col as usize) < n_cols);
                col_idx.push(*col);
                values.push(*value);
            }
            row_ptr.push(col_idx.len());
        }
        CsrMatrix {
            n_rows: rows.len(),
            n_cols,
            row_ptr,
            col_idx,
            values,
        }
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    /// Column indices and values of one row.
    pub fn row(&self, i: usize) -> (&[u32], &[f64]) {
        let span = self.row_ptr[i]..self.row_ptr[i + 1];
        (&self.col_idx[span.clone()], &self.values[span])
    }

    pub fn row_sum(&self, i: usize) -> f64 {
        self.row(i).1.iter().sum()
    }

    /// out = self * x, rows summed left to right.
    pub fn mul_vec_into(&self, x: &[f64], out: &mut [f64]) {
        debug_assert_eq!(x.len(), self.n_cols);
        debug_assert_eq!(out.len(), self.n_rows);
        for (i, slot) in out.iter_mut().enumerate() {
            let (cols, vals) = self.row(i);
            let mut acc = 0.0;
            for (c, v) in cols.iter().zip(vals) {
                acc += v * x[*c as usize];
            }
            *slot = acc;
        }
    }

    /// Entries regrouped by column, rows ascending within each column.
    pub fn columns(&self) -> Vec<Vec<(u32, f64)>> {
        let mut cols = vec![Vec::new(); self.n_cols];
        for i in 0..self.n_rows {
            let (idx, vals) = self.row(i);
            for (c, v) in idx.iter().zip(vals) {
                cols[*c as usize].push((i as u32, *v));
            }
        }
        cols
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}
