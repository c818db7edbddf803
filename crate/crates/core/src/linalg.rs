//! Dense row-major matrices and the handful of kernels the model and the
//! detector need.

use rand::Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols, "matrix data length");
        Matrix { rows, cols, data }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            assert_eq!(r.len(), cols, "ragged rows");
            data.extend_from_slice(r);
        }
        Matrix {
            rows: rows.len(),
            cols,
            data,
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.rows).map(|i| self[(i, j)]).collect()
    }

    pub fn transpose(&self) -> Matrix {
        let mut t = Matrix::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                t[(j, i)] = self[(i, j)];
            }
        }
        t
    }

    pub fn fill(&mut self, value: f64) {
        self.data.iter_mut().for_each(|x| *x = value);
    }

    pub fn view(&self) -> View<'_> {
        View {
            data: &self.data,
            rows: self.rows,
            cols: self.cols,
            rs: self.cols as isize,
            cs: 1,
        }
    }

    /// Columns `start..start + len` of every row.
    pub fn cols_view(&self, start: usize, len: usize) -> View<'_> {
        assert!(start + len <= self.cols);
        View {
            data: &self.data[start.min(self.data.len())..],
            rows: self.rows,
            cols: len,
            rs: self.cols as isize,
            cs: 1,
        }
    }

    pub fn view_mut(&mut self) -> ViewMut<'_> {
        ViewMut {
            rows: self.rows,
            cols: self.cols,
            rs: self.cols as isize,
            cs: 1,
            data: &mut self.data,
        }
    }

    pub fn cols_view_mut(&mut self, start: usize, len: usize) -> ViewMut<'_> {
        assert!(start + len <= self.cols);
        let (rows, rs) = (self.rows, self.cols as isize);
        let offset = start.min(self.data.len());
        ViewMut {
            data: &mut self.data[offset..],
            rows,
            cols: len,
            rs,
            cs: 1,
        }
    }

    /// `self · other`.
    pub fn matmul(&self, other: &Matrix) -> Matrix {
        let mut out = Matrix::zeros(self.rows, other.cols);
        gemm(1.0, self.view(), other.view(), 0.0, out.view_mut());
        out
    }
}

impl std::ops::Index<(usize, usize)> for Matrix {
    type Output = f64;
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        &self.data[i * self.cols + j]
    }
}

impl std::ops::IndexMut<(usize, usize)> for Matrix {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        &mut self.data[i * self.cols + j]
    }
}

/// A strided read-only matrix view.
#[derive(Debug, Clone, Copy)]
pub struct View<'a> {
    data: &'a [f64],
    pub rows: usize,
    pub cols: usize,
    rs: isize,
    cs: isize,
}

impl<'a> View<'a> {
    pub fn row_major(data: &'a [f64], rows: usize, cols: usize) -> Self {
        assert!(data.len() >= rows * cols);
        View {
            data,
            rows,
            cols,
            rs: cols as isize,
            cs: 1,
        }
    }

    pub fn t(self) -> Self {
        View {
            rows: self.cols,
            cols: self.rows,
            rs: self.cs,
            cs: self.rs,
            ..self
        }
    }

    fn check(&self) {
        if self.rows > 0 && self.cols > 0 {
            let last = (self.rows - 1) as isize * self.rs + (self.cols - 1) as isize * self.cs;
            assert!((last as usize) < self.data.len(), "view out of bounds");
        }
    }
}

pub struct ViewMut<'a> {
    data: &'a mut [f64],
    pub rows: usize,
    pub cols: usize,
    rs: isize,
    cs: isize,
}

impl<'a> ViewMut<'a> {
    pub fn row_major(data: &'a mut [f64], rows: usize, cols: usize) -> Self {
        assert!(data.len() >= rows * cols);
        ViewMut {
            data,
            rows,
            cols,
            rs: cols as isize,
            cs: 1,
        }
    }
}

/// `c ← alpha · a · b + beta · c`. With `beta == 0` the old contents of `c`
/// are ignored.
pub fn gemm(alpha: f64, a: View<'_>, b: View<'_>, beta: f64, c: ViewMut<'_>) {
    assert_eq!(a.cols, b.rows, "gemm inner dimension");
    assert_eq!((a.rows, b.cols), (c.rows, c.cols), "gemm output shape");
    if c.rows == 0 || c.cols == 0 {
        return;
    }
    a.check();
    b.check();
    let last = (c.rows - 1) as isize * c.rs + (c.cols - 1) as isize * c.cs;
    assert!((last as usize) < c.data.len(), "output view out of bounds");
    if a.cols == 0 {
        // matrixmultiply handles k = 0, but keep the beta semantics explicit
        for i in 0..c.rows {
            for j in 0..c.cols {
                let x = &mut c.data[(i as isize * c.rs + j as isize * c.cs) as usize];
                *x = if beta == 0.0 { 0.0 } else { beta * *x };
            }
        }
        return;
    }
    // SAFETY: every view was bounds-checked above for its full extent, the
    // strides are nonnegative and `c` is uniquely borrowed.
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

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0.0f64; 4];
    let chunks = a.len() / 4;
    for c in 0..chunks {
        let i = c * 4;
        acc[0] += a[i] * b[i];
        acc[1] += a[i + 1] * b[i + 1];
        acc[2] += a[i + 2] * b[i + 2];
        acc[3] += a[i + 3] * b[i + 3];
    }
    let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for i in chunks * 4..a.len() {
        s += a[i] * b[i];
    }
    s
}

/// `y += alpha · x`.
#[inline]
pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

pub fn norm(x: &[f64]) -> f64 {
    dot(x, x).sqrt()
}

/// `y += W[:, cols] · x` for a row-major `w` with `stride` columns.
#[inline]
pub fn matvec_acc(w: &[f64], stride: usize, col_start: usize, x: &[f64], y: &mut [f64]) {
    let n = x.len();
    for (i, yi) in y.iter_mut().enumerate() {
        let row = &w[i * stride + col_start..i * stride + col_start + n];
        *yi += dot(row, x);
    }
}

/// `y += W[:, cols]ᵀ · x` for a row-major `w` with `stride` columns.
#[inline]
pub fn matvec_t_acc(w: &[f64], stride: usize, col_start: usize, x: &[f64], y: &mut [f64]) {
    let n = y.len();
    for (i, &xi) in x.iter().enumerate() {
        if xi != 0.0 {
            axpy(xi, &w[i * stride + col_start..i * stride + col_start + n], y);
        }
    }
}

/// `W[:, cols] += a ⊗ b` (outer product) for a row-major `w`.
#[inline]
pub fn outer_acc(w: &mut [f64], stride: usize, col_start: usize, a: &[f64], b: &[f64]) {
    let n = b.len();
    for (i, &ai) in a.iter().enumerate() {
        if ai != 0.0 {
            axpy(ai, b, &mut w[i * stride + col_start..i * stride + col_start + n]);
        }
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Numerically stable in-place softmax.
pub fn softmax_in_place(x: &mut [f64]) {
    let max = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in x.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in x.iter_mut() {
        *v /= sum;
    }
}

/// Eigen-decomposition of a symmetric matrix by cyclic Jacobi rotations.
///
/// Returns eigenvalues in descending order and the matching unit eigenvectors
/// as the columns of the second matrix.
pub fn symmetric_eigen(a: &Matrix) -> (Vec<f64>, Matrix) {
    let n = a.rows;
    assert_eq!(n, a.cols, "symmetric_eigen needs a square matrix");
    let mut m = a.clone();
    let mut v = Matrix::identity(n);
    let scale: f64 = m.data.iter().map(|x| x * x).sum::<f64>().sqrt();
    for _sweep in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| m[(i, j)] * m[(i, j)])
            .sum::<f64>()
            .sqrt();
        if off <= 1e-15 * scale || scale == 0.0 {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = m[(p, q)];
                if apq.abs() <= 1e-300 {
                    continue;
                }
                let theta = (m[(q, q)] - m[(p, p)]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (mkp, mkq) = (m[(k, p)], m[(k, q)]);
                    m[(k, p)] = c * mkp - s * mkq;
                    m[(k, q)] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let (mpk, mqk) = (m[(p, k)], m[(q, k)]);
                    m[(p, k)] = c * mpk - s * mqk;
                    m[(q, k)] = s * mpk + c * mqk;
                }
                for k in 0..n {
                    let (vkp, vkq) = (v[(k, p)], v[(k, q)]);
                    v[(k, p)] = c * vkp - s * vkq;
                    v[(k, q)] = s * vkp + c * vkq;
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| m[(j, j)].total_cmp(&m[(i, i)]).then(i.cmp(&j)));
    let values = order.iter().map(|&i| m[(i, i)]).collect();
    let mut vectors = Matrix::zeros(n, n);
    for (new, &old) in order.iter().enumerate() {
        for k in 0..n {
            vectors[(k, new)] = v[(k, old)];
        }
    }
    (values, vectors)
}

/// Orthonormalizes the columns of `q` in place by two passes of modified
/// Gram–Schmidt. A column that collapses (relative norm below `1e-10`) is
/// replaced by a random vector from `rng` and orthonormalized again.
/// Returns the number of replaced columns.
pub fn orthonormalize_columns<R: Rng>(q: &mut Matrix, rng: &mut R) -> usize {
    let (d, b) = (q.rows, q.cols);
    assert!(b <= d, "more columns than dimensions");
    let mut cols: Vec<Vec<f64>> = (0..b).map(|j| q.column(j)).collect();
    let mut replaced = 0;
    for j in 0..b {
        let mut attempts = 0;
        loop {
            let before = norm(&cols[j]);
            for _pass in 0..2 {
                for i in 0..j {
                    let (done, cur) = cols.split_at_mut(j);
                    let proj = dot(&done[i], &cur[0]);
                    axpy(-proj, &done[i], &mut cur[0]);
                }
            }
            let after = norm(&cols[j]);
            if after > 1e-10 * before.max(f64::MIN_POSITIVE) && after > 0.0 {
                cols[j].iter_mut().for_each(|x| *x /= after);
                break;
            }
            attempts += 1;
            assert!(attempts < 100, "cannot complete orthonormal basis");
            replaced += 1;
            cols[j] = (0..d).map(|_| rng.random::<f64>() - 0.5).collect();
        }
    }
    for (j, c) in cols.iter().enumerate() {
        for i in 0..d {
            q[(i, j)] = c[i];
        }
    }
    replaced
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed;

    fn naive(a: &Matrix, b: &Matrix) -> Matrix {
        let mut c = Matrix::zeros(a.rows, b.cols);
        for i in 0..a.rows {
            for j in 0..b.cols {
                c[(i, j)] = (0..a.cols).map(|k| a[(i, k)] * b[(k, j)]).sum();
            }
        }
        c
    }

    fn random(rows: usize, cols: usize, s: u64) -> Matrix {
        let mut rng = seed::rng(s);
        Matrix::from_vec(rows, cols, (0..rows * cols).map(|_| rng.random::<f64>() - 0.5).collect())
    }

    #[test]
    fn gemm_matches_naive_with_transposes_and_blocks() {
        let a = random(5, 7, 1);
        let b = random(7, 3, 2);
        let c = a.matmul(&b);
        let expect = naive(&a, &b);
        for (x, y) in c.data.iter().zip(&expect.data) {
            assert!((x - y).abs() < 1e-12);
        }
        // aᵀ·a via a transposed view
        let mut ata = Matrix::zeros(7, 7);
        gemm(1.0, a.view().t(), a.view(), 0.0, ata.view_mut());
        let expect = naive(&a.transpose(), &a);
        for (x, y) in ata.data.iter().zip(&expect.data) {
            assert!((x - y).abs() < 1e-12);
        }
        // column block accumulation
        let mut w = Matrix::zeros(5, 10);
        w.fill(1.0);
        gemm(1.0, a.view(), b.view(), 1.0, w.cols_view_mut(4, 3));
        for i in 0..5 {
            assert_eq!(w[(i, 0)], 1.0);
            for j in 0..3 {
                assert!((w[(i, 4 + j)] - 1.0 - c[(i, j)]).abs() < 1e-12);
            }
        }
        let sub = w.cols_view(4, 3);
        let mut back = Matrix::zeros(5, 3);
        gemm(1.0, sub, Matrix::identity(3).view(), 0.0, back.view_mut());
        assert!((back[(2, 1)] - w[(2, 5)]).abs() < 1e-15);
    }

    #[test]
    fn matvec_helpers() {
        let w = random(4, 6, 3);
        let x = vec![1.0, -2.0, 0.5];
        let mut y = vec![0.0; 4];
        matvec_acc(&w.data, 6, 2, &x, &mut y);
        for i in 0..4 {
            let e: f64 = (0..3).map(|j| w[(i, 2 + j)] * x[j]).sum();
            assert!((y[i] - e).abs() < 1e-14);
        }
        let z = vec![0.3, -1.0, 2.0, 0.0];
        let mut yt = vec![0.0; 3];
        matvec_t_acc(&w.data, 6, 2, &z, &mut yt);
        for j in 0..3 {
            let e: f64 = (0..4).map(|i| w[(i, 2 + j)] * z[i]).sum();
            assert!((yt[j] - e).abs() < 1e-14);
        }
    }

    #[test]
    fn jacobi_reconstructs() {
        let a = random(6, 6, 4);
        let s = a.matmul(&a.transpose());
        let (vals, vecs) = symmetric_eigen(&s);
        for w in vals.windows(2) {
            assert!(w[0] >= w[1]);
        }
        for j in 0..6 {
            let v = vecs.column(j);
            let sv: Vec<f64> = (0..6).map(|i| dot(s.row(i), &v)).collect();
            for i in 0..6 {
                assert!((sv[i] - vals[j] * v[i]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn gram_schmidt_completes_rank_deficient_sets() {
        let mut q = Matrix::from_rows(&[
            vec![1.0, 2.0, 0.0],
            vec![0.0, 0.0, 0.0],
            vec![0.0, 0.0, 0.0],
            vec![0.0, 0.0, 0.0],
        ]);
        let replaced = orthonormalize_columns(&mut q, &mut seed::rng(1));
        assert_eq!(replaced, 2);
        let g = q.transpose().matmul(&q);
        for i in 0..3 {
            for j in 0..3 {
                let e = if i == j { 1.0 } else { 0.0 };
                assert!((g[(i, j)] - e).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn softmax_sums_to_one() {
        let mut x = vec![1000.0, 1000.0, -5.0];
        softmax_in_place(&mut x);
        assert!((x.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        assert!((x[0] - 0.5).abs() < 1e-12);
    }
}
