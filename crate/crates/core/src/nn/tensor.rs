use std::fmt::Debug;
use std::iter::Sum;
use std::ops::{AddAssign, MulAssign, SubAssign};

use num_traits::{Float, FromPrimitive, ToPrimitive};

/// Floating-point element type of the encoder (`f32` for training, `f64` for gradient checks).
pub trait Real:
    Float + FromPrimitive + ToPrimitive + Default + Debug + Send + Sync + 'static + AddAssign + SubAssign + MulAssign + Sum
{
    fn from_f64c(x: f64) -> Self {
        Self::from_f64(x).expect("representable constant")
    }
}

impl Real for f32 {}
impl Real for f64 {}

/// Dense row-major matrix. Products accumulate in a fixed order, so results never depend on
/// anything but the operands.
#[derive(Clone, Debug, PartialEq)]
pub struct Matrix<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Real> Matrix<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![T::zero(); rows * cols],
        }
    }

    pub fn filled(rows: usize, cols: usize, value: T) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![value; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<T>) -> Self {
        assert_eq!(data.len(), rows * cols, "matrix data length");
        Matrix { rows, cols, data }
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Matrix { rows, cols, data }
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[T] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [T] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> T {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: T) {
        self.data[i * self.cols + j] = v;
    }

    pub fn transpose(&self) -> Matrix<T> {
        let mut out = Matrix::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                out.data[j * self.rows + i] = self.data[i * self.cols + j];
            }
        }
        out
    }

    /// `self · b`
    pub fn matmul(&self, b: &Matrix<T>) -> Matrix<T> {
        assert_eq!(self.cols, b.rows, "matmul inner dimension");
        let mut out = Matrix::zeros(self.rows, b.cols);
        for i in 0..self.rows {
            let a_row = &self.data[i * self.cols..(i + 1) * self.cols];
            let o_row = &mut out.data[i * b.cols..(i + 1) * b.cols];
            for (k, &a) in a_row.iter().enumerate() {
                let b_row = &b.data[k * b.cols..(k + 1) * b.cols];
                for (o, &bv) in o_row.iter_mut().zip(b_row) {
                    *o += a * bv;
                }
            }
        }
        out
    }

    /// `self · bᵀ`
    pub fn matmul_t(&self, b: &Matrix<T>) -> Matrix<T> {
        self.matmul(&b.transpose())
    }

    /// `self += aᵀ · b`
    pub fn add_tmatmul(&mut self, a: &Matrix<T>, b: &Matrix<T>) {
        assert_eq!(a.rows, b.rows, "tmatmul shared dimension");
        assert_eq!((self.rows, self.cols), (a.cols, b.cols), "tmatmul output shape");
        for r in 0..a.rows {
            let a_row = a.row(r);
            let b_row = &b.data[r * b.cols..(r + 1) * b.cols];
            for (k, &av) in a_row.iter().enumerate() {
                let o_row = &mut self.data[k * b.cols..(k + 1) * b.cols];
                for (o, &bv) in o_row.iter_mut().zip(b_row) {
                    *o += av * bv;
                }
            }
        }
    }

    /// Adds a `1 × cols` bias to every row.
    pub fn add_row(&mut self, bias: &Matrix<T>) {
        assert_eq!((bias.rows, bias.cols), (1, self.cols));
        for i in 0..self.rows {
            for (o, &b) in self.row_mut(i).iter_mut().zip(&bias.data) {
                *o += b;
            }
        }
    }

    /// Accumulates column sums into a `1 × cols` matrix.
    pub fn add_col_sums_to(&self, out: &mut Matrix<T>) {
        assert_eq!((out.rows, out.cols), (1, self.cols));
        for i in 0..self.rows {
            for (o, &v) in out.data.iter_mut().zip(self.row(i)) {
                *o += v;
            }
        }
    }

    pub fn add_assign(&mut self, other: &Matrix<T>) {
        assert_eq!(self.shape(), other.shape());
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn scale(&mut self, s: T) {
        for a in &mut self.data {
            *a *= s;
        }
    }

    pub fn fill(&mut self, v: T) {
        self.data.iter_mut().for_each(|a| *a = v);
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Matrix<T> {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    pub fn cast<U: Real>(&self) -> Matrix<U> {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self
                .data
                .iter()
                .map(|x| U::from_f64(x.to_f64().unwrap_or(f64::NAN)).unwrap_or(U::nan()))
                .collect(),
        }
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn sum_sq(&self) -> T {
        self.data.iter().map(|&x| x * x).sum()
    }

    /// Rows `start..start + n` as a new matrix.
    pub fn rows_slice(&self, start: usize, n: usize) -> Matrix<T> {
        Matrix {
            rows: n,
            cols: self.cols,
            data: self.data[start * self.cols..(start + n) * self.cols].to_vec(),
        }
    }

    /// Columns `start..start + n` of rows `r0..r0 + nr`.
    pub fn block(&self, r0: usize, nr: usize, c0: usize, nc: usize) -> Matrix<T> {
        let mut out = Matrix::zeros(nr, nc);
        for i in 0..nr {
            out.row_mut(i)
                .copy_from_slice(&self.row(r0 + i)[c0..c0 + nc]);
        }
        out
    }

    /// Writes `src` into rows `r0..`, columns `c0..`.
    pub fn set_block(&mut self, r0: usize, c0: usize, src: &Matrix<T>) {
        for i in 0..src.rows {
            let nc = src.cols;
            self.row_mut(r0 + i)[c0..c0 + nc].copy_from_slice(src.row(i));
        }
    }

    /// Adds `src` into rows `r0..`, columns `c0..`.
    pub fn add_block(&mut self, r0: usize, c0: usize, src: &Matrix<T>) {
        for i in 0..src.rows {
            let nc = src.cols;
            for (o, &v) in self.row_mut(r0 + i)[c0..c0 + nc].iter_mut().zip(src.row(i)) {
                *o += v;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn products_agree() {
        let a = Matrix::<f64>::from_fn(3, 4, |i, j| (i * 4 + j) as f64 * 0.5 - 2.0);
        let b = Matrix::<f64>::from_fn(4, 2, |i, j| (i as f64 - j as f64) * 0.25);
        let ab = a.matmul(&b);
        for i in 0..3 {
            for j in 0..2 {
                let expect: f64 = (0..4).map(|k| a.get(i, k) * b.get(k, j)).sum();
                assert!((ab.get(i, j) - expect).abs() < 1e-12);
            }
        }
        assert_eq!(a.matmul_t(&b.transpose()), ab);
        let mut atb = Matrix::zeros(4, 2);
        let c = Matrix::<f64>::from_fn(3, 2, |i, j| (i + j) as f64);
        atb.add_tmatmul(&a, &c);
        assert_eq!(atb, a.transpose().matmul(&c));
    }

    #[test]
    fn blocks() {
        let a = Matrix::<f32>::from_fn(4, 4, |i, j| (i * 10 + j) as f32);
        let b = a.block(1, 2, 2, 2);
        assert_eq!(b.data(), [12.0, 13.0, 22.0, 23.0]);
        let mut z = Matrix::zeros(4, 4);
        z.set_block(1, 2, &b);
        z.add_block(1, 2, &b);
        assert_eq!(z.get(2, 3), 46.0);
    }
}
