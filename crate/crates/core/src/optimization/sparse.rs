use nalgebra::{DMatrix, DVector};

/// Row-list sparse matrix. Entries within a row are kept in insertion order;
/// duplicates are summed by consumers.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SparseMatrix {
    nrows: usize,
    ncols: usize,
    rows: Vec<Vec<(usize, f64)>>,
}

impl SparseMatrix {
    pub fn new(nrows: usize, ncols: usize) -> Self {
        Self {
            nrows,
            ncols,
            rows: vec![Vec::new(); nrows],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::new(n, n);
        for i in 0..n {
            m.push(i, i, 1.0);
        }
        m
    }

    pub fn from_dense(dense: &DMatrix<f64>) -> Self {
        let mut m = Self::new(dense.nrows(), dense.ncols());
        for i in 0..dense.nrows() {
            for j in 0..dense.ncols() {
                let v = dense[(i, j)];
                if v != 0.0 {
                    m.push(i, j, v);
                }
            }
        }
        m
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn nnz(&self) -> usize {
        self.rows.iter().map(Vec::len).sum()
    }

    /// Appends a new empty row and returns its index.
    pub fn push_row(&mut self) -> usize {
        self.rows.push(Vec::new());
        self.nrows += 1;
        self.nrows - 1
    }

    pub fn push(&mut self, row: usize, col: usize, value: f64) {
        debug_assert!(row < self.nrows && col < self.ncols);
        if value != 0.0 {
            self.rows[row].push((col, value));
        }
    }

    pub fn row(&self, row: usize) -> &[(usize, f64)] {
        &self.rows[row]
    }

    pub fn mul_vec(&self, x: &[f64]) -> DVector<f64> {
        DVector::from_iterator(
            self.nrows,
            self.rows.iter().map(|r| r.iter().map(|&(j, v)| v * x[j]).sum::<f64>()),
        )
    }

    /// `y += self^T x`.
    pub fn tr_mul_add(&self, x: &[f64], y: &mut [f64]) {
        for (i, r) in self.rows.iter().enumerate() {
            let xi = x[i];
            if xi != 0.0 {
                for &(j, v) in r {
                    y[j] += v * xi;
                }
            }
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.rows
            .iter()
            .flatten()
            .fold(0.0f64, |m, &(_, v)| m.max(v.abs()))
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut d = DMatrix::zeros(self.nrows, self.ncols);
        for (i, r) in self.rows.iter().enumerate() {
            for &(j, v) in r {
                d[(i, j)] += v;
            }
        }
        d
    }
}
