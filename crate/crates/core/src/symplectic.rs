//! Real symplectic matrices, the diamond product, omega-nullities and
//! spectral classification.
//!
//! Coordinates on `R^{2n}` are ordered `(x_1..x_n, y_1..y_n)` and the standard
//! structure is `J = [[0, -I], [I, 0]]`.

use nalgebra::{ComplexField, DMatrix, Dyn, Schur};
use num_complex::Complex64;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use std::f64::consts::PI;

use crate::error::{Error, Result};

pub type Mat = DMatrix<f64>;
pub type CMat = DMatrix<Complex64>;

/// Numerical tolerances shared by the spectral and nullity routines.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tolerances {
    /// Relative bound on `|M^T J M - J|`.
    pub symplectic: f64,
    /// Relative singular value threshold for kernel dimensions.
    pub rank: f64,
    /// Eigenvalues with `||lambda| - 1|` below this are on the unit circle.
    pub circle: f64,
    /// Above `circle` and below this the classification is refused.
    pub ambiguous: f64,
    /// Minimum single-linkage radius for eigenvalue clusters.
    pub cluster: f64,
}

impl Tolerances {
    /// Tolerances for numerically integrated monodromies, whose Jordan block
    /// at 1 splits by roughly the square root of the integration error.
    pub fn monodromy() -> Self {
        Self { cluster: 1e-5, ..Self::default() }
    }
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            symplectic: 1e-10,
            rank: 1e-8,
            circle: 1e-7,
            ambiguous: 1e-5,
            cluster: 1e-7,
        }
    }
}

pub fn standard_j(n: usize) -> Mat {
    let mut j = Mat::zeros(2 * n, 2 * n);
    for i in 0..n {
        j[(i, n + i)] = -1.0;
        j[(n + i, i)] = 1.0;
    }
    j
}

pub fn to_complex(m: &Mat) -> CMat {
    m.map(|x| Complex64::new(x, 0.0))
}

/// `2x2` rotation `[[cos, -sin], [sin, cos]]`.
pub fn rotation(theta: f64) -> Mat {
    let (s, c) = theta.sin_cos();
    Mat::from_row_slice(2, 2, &[c, -s, s, c])
}

/// Relative symplectic defect `|M^T J M - J|_F / max(1, |M|_F^2)`.
pub fn symplectic_defect(m: &Mat) -> f64 {
    if m.nrows() != m.ncols() || m.nrows() % 2 != 0 {
        return f64::INFINITY;
    }
    let j = standard_j(m.nrows() / 2);
    let e = m.transpose() * &j * m - &j;
    e.norm() / m.norm_squared().max(1.0)
}

/// Symplectic inverse `-J M^T J`.
pub fn symplectic_inverse(m: &Mat) -> Mat {
    let j = standard_j(m.nrows() / 2);
    -(&j * m.transpose() * &j)
}

/// One first-order correction towards the symplectic group,
/// `M <- M (I + J E / 2)` with `E = M^T J M - J`.
pub fn symplectic_correct(m: &Mat) -> Mat {
    let j = standard_j(m.nrows() / 2);
    let e = m.transpose() * &j * m - &j;
    let id = Mat::identity(m.nrows(), m.nrows());
    m * (id + &j * e * 0.5)
}

/// Diamond product of `2n1` and `2n2` square matrices.
pub fn diamond(a: &Mat, b: &Mat) -> Mat {
    let n1 = a.nrows() / 2;
    let n2 = b.nrows() / 2;
    let n = n1 + n2;
    let ia = |i: usize| if i < n1 { i } else { n + (i - n1) };
    let ib = |i: usize| if i < n2 { n1 + i } else { n + n1 + (i - n2) };
    let mut out = Mat::zeros(2 * n, 2 * n);
    for r in 0..2 * n1 {
        for c in 0..2 * n1 {
            out[(ia(r), ia(c))] = a[(r, c)];
        }
    }
    for r in 0..2 * n2 {
        for c in 0..2 * n2 {
            out[(ib(r), ib(c))] = b[(r, c)];
        }
    }
    out
}

pub fn diamond_all(blocks: &[Mat]) -> Mat {
    let mut it = blocks.iter();
    let first = it.next().cloned().unwrap_or_else(|| Mat::zeros(0, 0));
    it.fold(first, |acc, b| diamond(&acc, b))
}

/// `R(theta_1) ⋄ ... ⋄ R(theta_n)`.
pub fn rotation_diamond(angles: &[f64]) -> Mat {
    let blocks: Vec<Mat> = angles.iter().map(|&t| rotation(t)).collect();
    diamond_all(&blocks)
}

/// Singular values of `M - omega I`, descending.
pub fn shifted_singular_values(m: &Mat, omega: Complex64) -> Vec<f64> {
    let mut c = to_complex(m);
    for i in 0..c.nrows() {
        c[(i, i)] -= omega;
    }
    let mut sv: Vec<f64> = c.singular_values().iter().copied().collect();
    sv.sort_by(|a, b| b.total_cmp(a));
    sv
}

/// `dim_C ker(M - omega I)` by a relative singular value count.
pub fn nullity_omega(m: &Mat, omega: Complex64, tol_rank: f64) -> usize {
    let scale = m.norm().max(1.0);
    shifted_singular_values(m, omega)
        .iter()
        .filter(|&&s| s <= tol_rank * scale)
        .count()
}

/// Schur decomposition that retries with a looser deflation threshold when
/// QR iteration stalls at machine precision.
pub fn schur<T: ComplexField<RealField = f64>>(m: &DMatrix<T>) -> Result<Schur<T, Dyn>> {
    [1.0, 16.0, 256.0]
        .iter()
        .find_map(|s| Schur::try_new(m.clone(), s * f64::EPSILON, 100_000))
        .ok_or(Error::EigenSolver)
}

pub fn eigenvalues(m: &Mat) -> Result<Vec<Complex64>> {
    let schur = schur(m)?;
    Ok(schur.complex_eigenvalues().iter().copied().collect())
}

/// Argument normalized to `[0, 2pi)`.
pub fn arg_2pi(z: Complex64) -> f64 {
    let a = z.arg();
    if a < 0.0 {
        a + 2.0 * PI
    } else {
        a
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EigenCluster {
    pub value: Complex64,
    pub multiplicity: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SpectrumReport {
    pub eigenvalues: Vec<EigenCluster>,
    pub unit_circle: Vec<EigenCluster>,
    pub cluster_radius: f64,
}

impl SpectrumReport {
    pub fn total_multiplicity(&self) -> usize {
        self.eigenvalues.iter().map(|c| c.multiplicity).sum()
    }

    pub fn elliptic_height(&self) -> usize {
        self.unit_circle.iter().map(|c| c.multiplicity).sum()
    }

    /// Every cluster has a conjugate partner and a `1/conj` partner of equal
    /// multiplicity.
    pub fn pairing_consistent(&self) -> bool {
        let tol = 10.0 * self.cluster_radius;
        let find = |z: Complex64, mult: usize| {
            self.eigenvalues
                .iter()
                .any(|c| (c.value - z).norm() <= tol * z.norm().max(1.0) && c.multiplicity == mult)
        };
        self.eigenvalues.iter().all(|c| {
            find(c.value.conj(), c.multiplicity) && find(1.0 / c.value.conj(), c.multiplicity)
        })
    }
}

/// Clusters the spectrum and classifies clusters relative to the unit circle.
///
/// The linkage radius grows with the square root of the symplectic defect so
/// that eigenvalues split from a Jordan block are merged.
pub fn spectrum(m: &Mat, tol: &Tolerances) -> Result<SpectrumReport> {
    let eig = eigenvalues(m)?;
    let defect = symplectic_defect(m).max(1e-15);
    let radius = tol.cluster.max(10.0 * defect.sqrt());

    let k = eig.len();
    let mut parent: Vec<usize> = (0..k).collect();
    fn root(p: &mut [usize], mut i: usize) -> usize {
        while p[i] != i {
            p[i] = p[p[i]];
            i = p[i];
        }
        i
    }
    for i in 0..k {
        for j in (i + 1)..k {
            if (eig[i] - eig[j]).norm() <= radius * eig[i].norm().max(1.0) {
                let (a, b) = (root(&mut parent, i), root(&mut parent, j));
                if a != b {
                    parent[a.max(b)] = a.min(b);
                }
            }
        }
    }
    let mut groups: Vec<(usize, Vec<Complex64>)> = Vec::new();
    for i in 0..k {
        let r = root(&mut parent, i);
        match groups.iter_mut().find(|g| g.0 == r) {
            Some(g) => g.1.push(eig[i]),
            None => groups.push((r, vec![eig[i]])),
        }
    }

    let mut clusters = Vec::new();
    let mut circle = Vec::new();
    for (_, members) in groups {
        let mult = members.len();
        let centroid = members.iter().sum::<Complex64>() / mult as f64;
        let dist = (centroid.norm() - 1.0).abs();
        if dist <= tol.circle {
            let on = centroid / centroid.norm();
            clusters.push(EigenCluster { value: on, multiplicity: mult });
            circle.push(EigenCluster { value: on, multiplicity: mult });
        } else if dist <= tol.ambiguous {
            return Err(Error::AmbiguousSpectrum { modulus: centroid.norm() });
        } else {
            clusters.push(EigenCluster { value: centroid, multiplicity: mult });
        }
    }
    let key = |c: &EigenCluster| (arg_2pi(c.value), c.value.norm());
    let cmp = |a: &EigenCluster, b: &EigenCluster| {
        let (ka, kb) = (key(a), key(b));
        ka.0.total_cmp(&kb.0).then(ka.1.total_cmp(&kb.1))
    };
    clusters.sort_by(cmp);
    circle.sort_by(cmp);
    Ok(SpectrumReport {
        eigenvalues: clusters,
        unit_circle: circle,
        cluster_radius: radius,
    })
}

pub fn elliptic_height(m: &Mat, tol: &Tolerances) -> Result<usize> {
    Ok(spectrum(m, tol)?.elliptic_height())
}

/// Basic normal forms used to assemble test monodromies.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "form", rename_all = "snake_case")]
pub enum NormalForm {
    /// `diag(lambda, 1/lambda)` with `|lambda| != 1`.
    D { lambda: f64 },
    /// `[[lambda, b], [0, lambda]]` with `lambda = ±1`, `b ∈ {-1, 0, 1}`.
    N1 { lambda: f64, b: f64 },
    /// Rotation by `theta ∉ {0, pi}`.
    R { theta: f64 },
    /// `[[R(theta), B], [0, R(theta)]]`, `B` row-major.
    N2 { theta: f64, b: [f64; 4] },
}

fn angle_is_real(theta: f64) -> bool {
    let t = theta.rem_euclid(PI);
    t < 1e-12 || PI - t < 1e-12
}

pub fn basic_normal_form(form: &NormalForm) -> Result<SymplecticMatrix> {
    let m = match *form {
        NormalForm::D { lambda } => {
            if lambda == 0.0 || (lambda.abs() - 1.0).abs() < 1e-12 || !lambda.is_finite() {
                return Err(Error::ParameterOutOfRange(format!("D({lambda}) needs |lambda| != 1")));
            }
            Mat::from_row_slice(2, 2, &[lambda, 0.0, 0.0, 1.0 / lambda])
        }
        NormalForm::N1 { lambda, b } => {
            if lambda != 1.0 && lambda != -1.0 {
                return Err(Error::ParameterOutOfRange(format!("N1 eigenvalue {lambda}")));
            }
            if b != -1.0 && b != 0.0 && b != 1.0 {
                return Err(Error::ParameterOutOfRange(format!("N1 off-diagonal {b}")));
            }
            Mat::from_row_slice(2, 2, &[lambda, b, 0.0, lambda])
        }
        NormalForm::R { theta } => {
            if angle_is_real(theta) || !theta.is_finite() {
                return Err(Error::ParameterOutOfRange(format!("R({theta}) needs theta ∉ {{0, pi}}")));
            }
            rotation(theta)
        }
        NormalForm::N2 { theta, b } => {
            if angle_is_real(theta) || !theta.is_finite() {
                return Err(Error::ParameterOutOfRange(format!("N2 angle {theta}")));
            }
            if (b[1] - b[2]).abs() < 1e-12 {
                return Err(Error::ParameterOutOfRange("N2 needs b2 != b3".into()));
            }
            let r = rotation(theta);
            let mut m = Mat::zeros(4, 4);
            m.view_mut((0, 0), (2, 2)).copy_from(&r);
            m.view_mut((2, 2), (2, 2)).copy_from(&r);
            m.view_mut((0, 2), (2, 2)).copy_from(&Mat::from_row_slice(2, 2, &b));
            m
        }
    };
    SymplecticMatrix::new(m)
}

/// A real `2n x 2n` matrix certified symplectic at construction.
#[derive(Clone, Debug, PartialEq)]
pub struct SymplecticMatrix {
    m: Mat,
    defect: f64,
}

impl SymplecticMatrix {
    pub fn new(m: Mat) -> Result<Self> {
        Self::with_tolerance(m, Tolerances::default().symplectic)
    }

    pub fn with_tolerance(m: Mat, tol: f64) -> Result<Self> {
        if m.nrows() != m.ncols() || m.nrows() % 2 != 0 || m.nrows() == 0 {
            return Err(Error::DimensionMismatch {
                expected: 2 * (m.nrows() / 2).max(1),
                found: m.ncols(),
            });
        }
        if m.iter().any(|x| !x.is_finite()) {
            return Err(Error::NotSymplectic { defect: f64::NAN, tol });
        }
        let defect = symplectic_defect(&m);
        if defect > tol {
            return Err(Error::NotSymplectic { defect, tol });
        }
        Ok(Self { m, defect })
    }

    pub fn identity(n: usize) -> Self {
        Self { m: Mat::identity(2 * n, 2 * n), defect: 0.0 }
    }

    pub fn standard_j(n: usize) -> Self {
        Self { m: standard_j(n), defect: 0.0 }
    }

    pub fn n(&self) -> usize {
        self.m.nrows() / 2
    }

    pub fn matrix(&self) -> &Mat {
        &self.m
    }

    pub fn into_matrix(self) -> Mat {
        self.m
    }

    pub fn defect(&self) -> f64 {
        self.defect
    }

    pub fn inverse(&self) -> Self {
        let m = symplectic_inverse(&self.m);
        let defect = symplectic_defect(&m);
        Self { m, defect }
    }

    pub fn transpose(&self) -> Self {
        let m = self.m.transpose();
        let defect = symplectic_defect(&m);
        Self { m, defect }
    }

    pub fn compose(&self, other: &Self) -> Self {
        let m = &self.m * &other.m;
        let defect = symplectic_defect(&m);
        Self { m, defect }
    }

    pub fn pow(&self, k: u32) -> Self {
        let mut acc = Mat::identity(self.m.nrows(), self.m.ncols());
        for _ in 0..k {
            acc = &acc * &self.m;
        }
        let defect = symplectic_defect(&acc);
        Self { m: acc, defect }
    }

    pub fn diamond(&self, other: &Self) -> Self {
        Self {
            m: diamond(&self.m, &other.m),
            defect: self.defect.max(other.defect),
        }
    }

    /// `Q M Q^{-1}`.
    pub fn conjugate_by(&self, q: &Self) -> Self {
        let m = &q.m * &self.m * symplectic_inverse(&q.m);
        let defect = symplectic_defect(&m);
        Self { m, defect }
    }

    pub fn is_orthogonal(&self, tol: f64) -> bool {
        let d = self.m.nrows();
        (self.m.transpose() * &self.m - Mat::identity(d, d)).norm() <= tol
    }

    pub fn nullity(&self, omega: Complex64, tol: &Tolerances) -> usize {
        nullity_omega(&self.m, omega, tol.rank)
    }

    pub fn spectrum(&self, tol: &Tolerances) -> Result<SpectrumReport> {
        spectrum(&self.m, tol)
    }
}

/// Wire format `{"n": n, "rows": [[..], ..]}` for `2n x 2n` matrices.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MatrixJson {
    pub n: usize,
    pub rows: Vec<Vec<f64>>,
}

impl MatrixJson {
    pub fn from_matrix(m: &Mat) -> Self {
        Self {
            n: m.nrows() / 2,
            rows: m.row_iter().map(|r| r.iter().copied().collect()).collect(),
        }
    }

    pub fn to_matrix(&self) -> Result<Mat> {
        let d = 2 * self.n;
        if self.rows.len() != d {
            return Err(Error::DimensionMismatch { expected: d, found: self.rows.len() });
        }
        if let Some(r) = self.rows.iter().find(|r| r.len() != d) {
            return Err(Error::DimensionMismatch { expected: d, found: r.len() });
        }
        Ok(Mat::from_fn(d, d, |i, j| self.rows[i][j]))
    }
}

impl Serialize for SymplecticMatrix {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        MatrixJson::from_matrix(&self.m).serialize(s)
    }
}

impl<'de> Deserialize<'de> for SymplecticMatrix {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let raw = MatrixJson::deserialize(d)?;
        let m = raw.to_matrix().map_err(serde::de::Error::custom)?;
        SymplecticMatrix::new(m).map_err(serde::de::Error::custom)
    }
}
