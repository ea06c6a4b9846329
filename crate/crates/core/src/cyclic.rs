//! Cyclic orthogonal symplectic symmetries and their rotation normal form
//! `Q P Q^{-1} = R(theta_1) ⋄ ... ⋄ R(theta_n)`.

use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::symplectic::{
    arg_2pi, rotation_diamond, schur, standard_j, symplectic_defect, CMat, Mat, MatrixJson,
};

const STRUCTURE_TOL: f64 = 1e-10;
const ANGLE_TOL: f64 = 1e-8;

/// An orthogonal symplectic `P` with `P^k = I`, together with a symplectic
/// orthogonal `Q` putting it into rotation normal form.
#[derive(Clone, Debug)]
pub struct CyclicSymmetry {
    p: Mat,
    k: u32,
    q: Mat,
    exponents: Vec<u32>,
}

/// Real form of a complex `n x n` matrix acting on `z = x + i y`.
pub fn real_form(w: &CMat) -> Mat {
    let n = w.nrows();
    let mut m = Mat::zeros(2 * n, 2 * n);
    for i in 0..n {
        for j in 0..n {
            let z = w[(i, j)];
            m[(i, j)] = z.re;
            m[(i, n + j)] = -z.im;
            m[(n + i, j)] = z.im;
            m[(n + i, n + j)] = z.re;
        }
    }
    m
}

/// Complex form of a real matrix commuting with `J`.
pub fn complex_form(p: &Mat) -> CMat {
    let n = p.nrows() / 2;
    CMat::from_fn(n, n, |i, j| Complex64::new(p[(i, j)], p[(n + i, j)]))
}

/// Haar-like random unitary from the QR factorization of a Gaussian matrix.
pub fn random_unitary<R: Rng + ?Sized>(n: usize, rng: &mut R) -> CMat {
    let g = CMat::from_fn(n, n, |_, _| {
        Complex64::new(rng.sample(StandardNormal), rng.sample(StandardNormal))
    });
    let qr = g.qr();
    let (q, r) = (qr.q(), qr.r());
    let mut q = q;
    for j in 0..n {
        let d = r[(j, j)];
        let phase = if d.norm() > 0.0 { d / d.norm() } else { Complex64::new(1.0, 0.0) };
        for i in 0..n {
            q[(i, j)] *= phase;
        }
    }
    q
}

pub fn random_orthosymplectic<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Mat {
    real_form(&random_unitary(n, rng))
}

impl CyclicSymmetry {
    /// `P = R(2pi/k) ⋄ ... ⋄ R(2pi/k)` in `R^{2n}`.
    pub fn rotation(n: usize, k: u32) -> Result<Self> {
        Self::from_exponents(&vec![1; n], k)
    }

    /// `P = R(2pi p_1/k) ⋄ ... ⋄ R(2pi p_n/k)`.
    pub fn from_exponents(exponents: &[u32], k: u32) -> Result<Self> {
        if k == 0 || exponents.is_empty() {
            return Err(Error::InvalidSymmetry("need k >= 1 and n >= 1".into()));
        }
        let mut e: Vec<u32> = exponents.iter().map(|p| p % k).collect();
        let angles: Vec<f64> = e.iter().map(|&p| 2.0 * PI * p as f64 / k as f64).collect();
        let p = rotation_diamond(&angles);
        let n = e.len();
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by_key(|&i| e[i]);
        let mut perm = Mat::zeros(2 * n, 2 * n);
        for (row, &src) in order.iter().enumerate() {
            perm[(row, src)] = 1.0;
            perm[(n + row, n + src)] = 1.0;
        }
        e.sort_unstable();
        Ok(Self { p, k, q: perm, exponents: e })
    }

    pub fn matrix(&self) -> &Mat {
        &self.p
    }

    pub fn order(&self) -> u32 {
        self.k
    }

    pub fn n(&self) -> usize {
        self.p.nrows() / 2
    }

    /// Symplectic orthogonal `Q` with `Q P Q^T` block diagonal.
    pub fn q(&self) -> &Mat {
        &self.q
    }

    /// Integers `p_j` with `theta_j = 2 pi p_j / k`, ascending.
    pub fn exponents(&self) -> &[u32] {
        &self.exponents
    }

    pub fn angles(&self) -> Vec<f64> {
        self.exponents
            .iter()
            .map(|&p| 2.0 * PI * p as f64 / self.k as f64)
            .collect()
    }

    pub fn normal_form(&self) -> Mat {
        rotation_diamond(&self.angles())
    }

    /// `P^l` for any integer `l`.
    pub fn power(&self, l: i64) -> Mat {
        let e = l.rem_euclid(self.k as i64) as u32;
        let mut acc = Mat::identity(self.p.nrows(), self.p.ncols());
        for _ in 0..e {
            acc = &acc * &self.p;
        }
        acc
    }

    /// First `l ∈ [1, k)` with `ker(P^l - I) != 0`, if any.
    pub fn ker_condition_witness(&self) -> Option<u32> {
        (1..self.k).find(|&l| {
            self.exponents
                .iter()
                .any(|&p| (p as u64 * l as u64) % self.k as u64 == 0)
        })
    }

    /// `ker(P^l - I) = 0` for every `1 <= l < k`.
    pub fn satisfies_ker_condition(&self) -> bool {
        self.ker_condition_witness().is_none()
    }

    /// Hamiltonian logarithm `L` with `exp(L) = P^{-1}`, angles taken in `(-pi, pi]`.
    pub fn log_inverse(&self) -> Mat {
        let neg: Vec<f64> = self
            .angles()
            .iter()
            .map(|&t| {
                let a = (-t).rem_euclid(2.0 * PI);
                if a > PI {
                    a - 2.0 * PI
                } else {
                    a
                }
            })
            .collect();
        let n = self.n();
        let mut gen = Mat::zeros(2 * n, 2 * n);
        let j = standard_j(n);
        for (i, a) in neg.iter().enumerate() {
            gen[(i, n + i)] = a * j[(i, n + i)];
            gen[(n + i, i)] = a * j[(n + i, i)];
        }
        self.q.transpose() * gen * &self.q
    }

    pub fn to_json(&self) -> SymmetryJson {
        SymmetryJson { k: self.k, matrix: MatrixJson::from_matrix(&self.p) }
    }
}

/// `{"k": k, "matrix": {"n": n, "rows": ...}}`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SymmetryJson {
    pub k: u32,
    pub matrix: MatrixJson,
}

impl SymmetryJson {
    pub fn decompose(&self) -> Result<CyclicSymmetry> {
        decompose_cyclic(&self.matrix.to_matrix()?, self.k)
    }
}

/// Validates `P` and computes its rotation normal form.
pub fn decompose_cyclic(p: &Mat, k: u32) -> Result<CyclicSymmetry> {
    let d = p.nrows();
    if d != p.ncols() || d % 2 != 0 || d == 0 {
        return Err(Error::DimensionMismatch { expected: 2 * (d / 2).max(1), found: p.ncols() });
    }
    if k == 0 {
        return Err(Error::InvalidSymmetry("order must be positive".into()));
    }
    let n = d / 2;
    let id = Mat::identity(d, d);
    let orth = (p.transpose() * p - &id).norm();
    if orth > STRUCTURE_TOL {
        return Err(Error::InvalidSymmetry(format!("not orthogonal (defect {orth:.2e})")));
    }
    let sd = symplectic_defect(p);
    if sd > STRUCTURE_TOL {
        return Err(Error::NotSymplectic { defect: sd, tol: STRUCTURE_TOL });
    }
    let j = standard_j(n);
    let comm = (p * &j - &j * p).norm();
    if comm > STRUCTURE_TOL {
        return Err(Error::InvalidSymmetry(format!("does not commute with J ({comm:.2e})")));
    }
    let mut pk = id.clone();
    for _ in 0..k {
        pk = &pk * p;
    }
    let per = (&pk - &id).norm();
    if per > 1e-9 {
        return Err(Error::InvalidSymmetry(format!("P^{k} != I (defect {per:.2e})")));
    }

    let u = complex_form(p);
    let (v, t) = schur(&u)?.unpack();
    let mut offdiag = 0.0f64;
    for i in 0..n {
        for jj in 0..i {
            offdiag = offdiag.max(t[(jj, i)].norm());
        }
    }
    if offdiag > 1e-9 {
        return Err(Error::InvalidSymmetry(format!("unitary form not diagonalizable ({offdiag:.2e})")));
    }
    let mut entries: Vec<(u32, usize)> = Vec::with_capacity(n);
    for i in 0..n {
        let theta = arg_2pi(t[(i, i)]);
        let exact = theta * k as f64 / (2.0 * PI);
        let pj = exact.round();
        if (exact - pj).abs() * 2.0 * PI / k as f64 > ANGLE_TOL {
            return Err(Error::InvalidSymmetry(format!("eigen-angle {theta} is not a multiple of 2pi/{k}")));
        }
        entries.push(((pj as u32) % k, i));
    }
    entries.sort();
    let vs = CMat::from_fn(n, n, |r, c| v[(r, entries[c].1)]);
    let q = real_form(&vs.adjoint());
    let exponents: Vec<u32> = entries.iter().map(|e| e.0).collect();
    let sym = CyclicSymmetry { p: p.clone(), k, q, exponents };
    let resid = (&sym.q * p * sym.q.transpose() - sym.normal_form()).norm();
    if resid > 1e-8 {
        return Err(Error::InvalidSymmetry(format!("normal form residual {resid:.2e}")));
    }
    Ok(sym)
}
