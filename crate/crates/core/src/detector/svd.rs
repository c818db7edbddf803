//! Top right singular vectors of a centered matrix via block power
//! iteration on `MᵀM` with Rayleigh–Ritz extraction.

use crate::linalg::{gemm, norm, orthonormalize_columns, symmetric_eigen, Matrix};
use crate::{seed, Error, Result};

/// Top-`k` right singular vectors (rows of `vectors`) and singular values.
#[derive(Debug, Clone, PartialEq)]
pub struct SingularBasis {
    pub vectors: Matrix,
    pub singular_values: Vec<f64>,
}

impl SingularBasis {
    pub fn k(&self) -> usize {
        self.vectors.rows
    }

    pub fn vector(&self, i: usize) -> &[f64] {
        self.vectors.row(i)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SvdOptions {
    /// Converged when `‖G u − θ u‖ ≤ tol · θ₁` for every requested pair.
    pub tol: f64,
    pub max_iterations: usize,
    pub seed: u64,
}

impl Default for SvdOptions {
    fn default() -> Self {
        SvdOptions {
            tol: 1e-10,
            max_iterations: 5000,
            seed: 0,
        }
    }
}

fn flip_to_convention(v: &mut [f64]) {
    let scale = v.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    if let Some(first) = v.iter().find(|x| x.abs() > 1e-12 * scale) {
        if *first < 0.0 {
            v.iter_mut().for_each(|x| *x = -*x);
        }
    }
}

/// Computes the top-`k` right singular vectors of `m` (n × d).
///
/// Each returned vector has its first nonzero coordinate positive. When the
/// spectrum runs out before `k` (rank below `k`), the remaining vectors are
/// an arbitrary orthonormal completion with singular value zero.
pub fn top_k_singular(m: &Matrix, k: usize, opts: &SvdOptions) -> Result<SingularBasis> {
    let (n, d) = (m.rows, m.cols);
    let max = n.min(d);
    if k == 0 || k > max {
        return Err(Error::KOutOfRange { k, max });
    }
    let mut gram = Matrix::zeros(d, d);
    gemm(1.0, m.view().t(), m.view(), 0.0, gram.view_mut());

    let b = d.min(2 * k + 8);
    let mut rng = seed::rng(opts.seed);
    let mut q = Matrix::from_vec(
        d,
        b,
        (0..d * b).map(|_| rand::Rng::random::<f64>(&mut rng) - 0.5).collect(),
    );
    orthonormalize_columns(&mut q, &mut rng);
    let mut z = Matrix::zeros(d, b);
    let mut small = Matrix::zeros(b, b);
    let mut thetas = vec![0.0; b];
    let mut worst = (0, f64::INFINITY);

    for iteration in 1..=opts.max_iterations {
        // Rayleigh–Ritz on the current subspace
        gemm(1.0, gram.view(), q.view(), 0.0, z.view_mut());
        gemm(1.0, q.view().t(), z.view(), 0.0, small.view_mut());
        for i in 0..b {
            for j in 0..i {
                let avg = 0.5 * (small[(i, j)] + small[(j, i)]);
                small[(i, j)] = avg;
                small[(j, i)] = avg;
            }
        }
        let (values, w) = symmetric_eigen(&small);
        thetas.copy_from_slice(&values);
        let mut u = Matrix::zeros(d, b);
        gemm(1.0, q.view(), w.view(), 0.0, u.view_mut());
        let mut gu = Matrix::zeros(d, b);
        gemm(1.0, z.view(), w.view(), 0.0, gu.view_mut());

        let top = thetas[0].max(0.0);
        worst = (0, 0.0);
        let mut converged = true;
        for i in 0..k {
            let r: Vec<f64> = (0..d).map(|row| gu[(row, i)] - thetas[i] * u[(row, i)]).collect();
            let res = norm(&r);
            if res > opts.tol * top {
                converged = false;
                if res > worst.1 {
                    worst = (i, res);
                }
            }
        }
        if converged {
            log::debug!("subspace iteration converged after {iteration} iterations");
            return Ok(finish(u, &thetas, k, top, opts.tol));
        }
        // next block: G·U, orthonormalized
        q = gu;
        let replaced = orthonormalize_columns(&mut q, &mut rng);
        if replaced > 0 {
            log::debug!("replaced {replaced} collapsed directions");
        }
    }
    Err(Error::NoConvergence {
        index: worst.0,
        iterations: opts.max_iterations,
        residual: worst.1,
    })
}

fn finish(u: Matrix, thetas: &[f64], k: usize, top: f64, tol: f64) -> SingularBasis {
    let d = u.rows;
    let mut vectors = Matrix::zeros(k, d);
    let mut singular_values = Vec::with_capacity(k);
    let mut degenerate = 0;
    for i in 0..k {
        let row = vectors.row_mut(i);
        for (j, x) in row.iter_mut().enumerate() {
            *x = u[(j, i)];
        }
        flip_to_convention(row);
        let theta = thetas[i].max(0.0);
        if theta <= tol * top {
            degenerate += 1;
        }
        singular_values.push(theta.sqrt());
    }
    if degenerate > 0 {
        log::warn!(
            "{degenerate} of {k} singular values are numerically zero; \
             their directions are an arbitrary orthonormal completion"
        );
    }
    SingularBasis {
        vectors,
        singular_values,
    }
}
