#![allow(dead_code)]

use std::collections::HashSet;

use codeback::linalg::Matrix;
use codeback::model::{RepresentationKind, RepresentationSet, SampleVectors};
use nalgebra::{DMatrix, SymmetricEigen};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gaussian(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Matrix {
    Matrix::from_vec(
        rows,
        cols,
        (0..rows * cols).map(|_| rng.sample(StandardNormal)).collect(),
    )
}

/// Descending singular values and right singular vectors of `m` from a dense
/// eigendecomposition of `MᵀM`.
pub fn brute_force_svd(m: &Matrix) -> (Vec<f64>, Vec<Vec<f64>>) {
    let a = DMatrix::from_row_slice(m.rows, m.cols, &m.data);
    let eig = SymmetricEigen::new(a.transpose() * &a);
    let mut order: Vec<usize> = (0..m.cols).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]));
    let values = order.iter().map(|&i| eig.eigenvalues[i].max(0.0).sqrt()).collect();
    let vectors = order
        .iter()
        .map(|&i| eig.eigenvectors.column(i).iter().copied().collect())
        .collect();
    (values, vectors)
}

/// Sine of the largest principal angle between the spans of two orthonormal
/// row sets, bounded above by the Frobenius norm of the residual of `b`
/// after projection onto `a`.
pub fn largest_angle(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
    let mut total = 0.0;
    for v in b {
        let mut r = v.clone();
        for u in a {
            let p: f64 = u.iter().zip(v).map(|(x, y)| x * y).sum();
            r.iter_mut().zip(u).for_each(|(ri, ui)| *ri -= p * ui);
        }
        total += r.iter().map(|x| x * x).sum::<f64>();
    }
    total.sqrt().min(1.0).asin()
}

/// Random orthogonal `d × d` matrix from the QR factorization of a Gaussian.
pub fn random_rotation(rng: &mut ChaCha8Rng, d: usize) -> Matrix {
    let g = gaussian(rng, d, d);
    let q = DMatrix::from_row_slice(d, d, &g.data).qr().q();
    Matrix::from_vec(d, d, q.transpose().iter().copied().collect())
}

/// `n` isotropic unit-variance points, a `frac` share of them shifted by
/// `shift` along a random unit direction. Returns the set and the shifted ids.
pub fn planted_mixture(
    n: usize,
    d: usize,
    frac: f64,
    shift: f64,
    seed: u64,
) -> (RepresentationSet, HashSet<u64>) {
    let mut rng = rng(seed);
    let mut dir: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
    let len = dir.iter().map(|x| x * x).sum::<f64>().sqrt();
    dir.iter_mut().for_each(|x| *x /= len);
    let planted = (n as f64 * frac).round() as usize;
    let mut poisoned = HashSet::new();
    let samples = (0..n)
        .map(|i| {
            let mut v: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
            if i < planted {
                v.iter_mut().zip(&dir).for_each(|(x, u)| *x += shift * u);
                poisoned.insert(i as u64);
            }
            SampleVectors {
                id: i as u64,
                vectors: vec![v],
            }
        })
        .collect();
    let set = RepresentationSet {
        kind: RepresentationKind::EncoderOutput,
        dim: d,
        samples,
    };
    (set, poisoned)
}

/// Guard `call(arg) op threshold` taken apart by hand, without the crate's
/// parser.
pub struct Guard {
    call: String,
    argument: Option<f64>,
    op: String,
    threshold: f64,
}

pub fn parse_guard(statement: &str) -> Guard {
    let rest = statement
        .strip_prefix("if ")
        .or_else(|| statement.strip_prefix("while "))
        .expect("guard keyword");
    let guard = &rest[..rest.find(':').expect("colon")];
    let open = guard.find('(').unwrap();
    let close = guard.find(')').unwrap();
    let call = guard[..open].to_string();
    let inner = guard[open + 1..close].trim();
    let argument = (!inner.is_empty()).then(|| inner.parse().unwrap());
    let mut parts = guard[close + 1..].split_whitespace();
    let op = parts.next().unwrap().to_string();
    let threshold = parts.next().unwrap().parse().unwrap();
    Guard {
        call,
        argument,
        op,
        threshold,
    }
}

pub fn holds(value: f64, op: &str, t: f64) -> bool {
    match op {
        "<" => value < t,
        "<=" => value <= t,
        ">" => value > t,
        ">=" => value >= t,
        "==" => value == t,
        other => panic!("operator {other}"),
    }
}

pub fn evaluate(call: &str, x: f64) -> f64 {
    match call {
        "sin" => x.sin(),
        "cos" => x.cos(),
        "exp" => x.exp(),
        "sqrt" => x.sqrt(),
        other => panic!("call {other}"),
    }
}

/// Number of `draws` on which the guard of `statement` evaluates true, with
/// `random()` drawn uniformly and other calls also evaluated over uniform
/// arguments in [0, 1] besides their literal one.
pub fn draws_where_guard_holds(statement: &str, draws: usize, seed: u64) -> usize {
    let g = parse_guard(statement);
    let mut r = rng(seed);
    let mut hits = 0;
    if let Some(a) = g.argument {
        hits += usize::from(holds(evaluate(&g.call, a), &g.op, g.threshold));
    }
    for _ in 0..draws {
        let x: f64 = r.random();
        let value = match g.call.as_str() {
            "random" => x,
            call => evaluate(call, x),
        };
        hits += usize::from(holds(value, &g.op, g.threshold));
    }
    hits
}
