//! Row-major dense matrices and strided GEMM on top of `matrixmultiply`.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn filled(rows: usize, cols: usize, value: f64) -> Self {
        Matrix { rows, cols, data: vec![value; rows * cols] }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols, "matrix data length");
        Matrix { rows, cols, data }
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn view(&self) -> MatRef<'_> {
        MatRef { data: &self.data, rows: self.rows, cols: self.cols, rs: self.cols as isize, cs: 1 }
    }

    pub fn view_mut(&mut self) -> MatMut<'_> {
        let (rows, cols) = (self.rows, self.cols);
        MatMut { data: &mut self.data, rows, cols, rs: cols as isize, cs: 1 }
    }

    /// Columns `c0..c0+n` as a strided view.
    pub fn cols_view(&self, c0: usize, n: usize) -> MatRef<'_> {
        assert!(c0 + n <= self.cols);
        MatRef { data: &self.data[c0..], rows: self.rows, cols: n, rs: self.cols as isize, cs: 1 }
    }

    pub fn cols_view_mut(&mut self, c0: usize, n: usize) -> MatMut<'_> {
        assert!(c0 + n <= self.cols);
        let (rows, rs) = (self.rows, self.cols as isize);
        MatMut { data: &mut self.data[c0..], rows, cols: n, rs, cs: 1 }
    }

    /// Rows `r0..r0+n`.
    pub fn rows_view(&self, r0: usize, n: usize) -> MatRef<'_> {
        assert!(r0 + n <= self.rows);
        MatRef {
            data: &self.data[r0 * self.cols..(r0 + n) * self.cols],
            rows: n,
            cols: self.cols,
            rs: self.cols as isize,
            cs: 1,
        }
    }

    pub fn slice_rows(&self, r0: usize, n: usize) -> Matrix {
        Matrix::from_vec(n, self.cols, self.data[r0 * self.cols..(r0 + n) * self.cols].to_vec())
    }

    /// Stack `self` on top of `other`.
    pub fn vstack(&self, other: &Matrix) -> Matrix {
        assert!(self.rows == 0 || other.rows == 0 || self.cols == other.cols);
        let cols = if self.rows == 0 { other.cols } else { self.cols };
        let mut data = Vec::with_capacity(self.data.len() + other.data.len());
        data.extend_from_slice(&self.data);
        data.extend_from_slice(&other.data);
        Matrix { rows: self.rows + other.rows, cols, data }
    }

    pub fn add_assign(&mut self, other: &Matrix) {
        assert_eq!(self.shape(), other.shape());
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn scale(&mut self, s: f64) {
        self.data.iter_mut().for_each(|x| *x *= s);
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    /// Add `bias` to every row.
    pub fn add_row_vector(&mut self, bias: &[f64]) {
        assert_eq!(bias.len(), self.cols);
        for r in 0..self.rows {
            for (x, b) in self.row_mut(r).iter_mut().zip(bias) {
                *x += b;
            }
        }
    }

    /// Column sums accumulated into `out`.
    pub fn add_col_sums_to(&self, out: &mut [f64]) {
        assert_eq!(out.len(), self.cols);
        for r in 0..self.rows {
            for (o, x) in out.iter_mut().zip(self.row(r)) {
                *o += x;
            }
        }
    }
}

#[derive(Clone, Copy)]
pub struct MatRef<'a> {
    data: &'a [f64],
    pub rows: usize,
    pub cols: usize,
    rs: isize,
    cs: isize,
}

impl<'a> MatRef<'a> {
    pub fn t(self) -> MatRef<'a> {
        MatRef { data: self.data, rows: self.cols, cols: self.rows, rs: self.cs, cs: self.rs }
    }

    fn check(&self) {
        if self.rows > 0 && self.cols > 0 {
            let last = (self.rows as isize - 1) * self.rs + (self.cols as isize - 1) * self.cs;
            assert!((last as usize) < self.data.len(), "view out of bounds");
        }
    }
}

pub struct MatMut<'a> {
    data: &'a mut [f64],
    pub rows: usize,
    pub cols: usize,
    rs: isize,
    cs: isize,
}

impl MatMut<'_> {
    fn check(&self) {
        if self.rows > 0 && self.cols > 0 {
            let last = (self.rows as isize - 1) * self.rs + (self.cols as isize - 1) * self.cs;
            assert!((last as usize) < self.data.len(), "view out of bounds");
        }
    }
}

/// `c = alpha * a * b + beta * c`.
pub fn gemm(alpha: f64, a: MatRef<'_>, b: MatRef<'_>, beta: f64, c: MatMut<'_>) {
    assert_eq!(a.cols, b.rows, "gemm inner dimension");
    assert_eq!((a.rows, b.cols), (c.rows, c.cols), "gemm output shape");
    a.check();
    b.check();
    c.check();
    if c.rows == 0 || c.cols == 0 {
        return;
    }
    if a.cols == 0 {
        // matrixmultiply handles k = 0, but scale explicitly for clarity
        for i in 0..c.rows {
            for j in 0..c.cols {
                let idx = (i as isize * c.rs + j as isize * c.cs) as usize;
                c.data[idx] *= beta;
            }
        }
        return;
    }
    // SAFETY: all three views were bounds-checked above; `c` is a unique borrow.
    unsafe {
        matrixmultiply::dgemm(
            a.rows,
            a.cols,
            b.cols,
            alpha,
            a.data.as_ptr(),
            a.rs,
            a.cs,
            b.data.as_ptr(),
            b.rs,
            b.cs,
            beta,
            c.data.as_mut_ptr(),
            c.rs,
            c.cs,
        );
    }
}

/// `a * b` as a new matrix.
pub fn matmul(a: MatRef<'_>, b: MatRef<'_>) -> Matrix {
    let mut out = Matrix::zeros(a.rows, b.cols);
    gemm(1.0, a, b, 0.0, out.view_mut());
    out
}
