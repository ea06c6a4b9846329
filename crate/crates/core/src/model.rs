//! Convex P-symmetric hypersurfaces `Σ = j^{-1}(1)` with Hamiltonian
//! `H = j^alpha`, their derivatives and Fenchel transforms.
//!
//! Two families are provided: ellipsoids with gauge
//! `j(x)^2 = q(x) = sum_i (x_i^2 + x_{n+i}^2) / r_i^2`, and a perturbation
//! `j^2 = q + eps Re(z^k) q^{-(k-2)/2}` with `z = x_1 + i x_{n+1}`, which stays
//! invariant under rotations by `2 pi / k` in the first plane and arbitrary
//! rotations in the others.

use nalgebra::{DVector, SymmetricEigen};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::cyclic::{CyclicSymmetry, SymmetryJson};
use crate::error::{Error, Result};
use crate::symplectic::{rotation_diamond, Mat, MatrixJson};

pub type Vector = DVector<f64>;

const CONVEXITY_SAMPLES: usize = 10_000;
const CONVEXITY_MARGIN: f64 = 1e-6;
const CERTIFY_SEED: u64 = 0x5eed_c0de;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKindName {
    Ellipsoid,
    PerturbedEllipsoid,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum SymmetrySpec {
    Rotation { k: u32 },
    Matrix { k: u32, matrix: MatrixJson },
}

impl SymmetrySpec {
    pub fn order(&self) -> u32 {
        match self {
            Self::Rotation { k } | Self::Matrix { k, .. } => *k,
        }
    }

    pub fn build(&self, n: usize) -> Result<CyclicSymmetry> {
        match self {
            Self::Rotation { k } => CyclicSymmetry::rotation(n, *k),
            Self::Matrix { k, matrix } => {
                if matrix.n != n {
                    return Err(Error::DimensionMismatch { expected: n, found: matrix.n });
                }
                SymmetryJson { k: *k, matrix: matrix.clone() }.decompose()
            }
        }
    }
}

/// Model description as read from JSON.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ModelConfig {
    pub kind: ModelKindName,
    pub radii_sq: Vec<f64>,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    pub symmetry: SymmetrySpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epsilon: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub harmonic: Option<u32>,
}

fn default_alpha() -> f64 {
    1.5
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModelKind {
    Ellipsoid,
    PerturbedEllipsoid { epsilon: f64, harmonic: u32 },
}

/// Result of the sampled convexity check.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConvexityCertificate {
    pub samples: usize,
    /// Smallest eigenvalue of the Hessian of `H` restricted to tangent spaces of `Σ`.
    pub min_tangent_eig: f64,
    /// Smallest eigenvalue of the full Hessian of `H` on `Σ`.
    pub min_hessian_eig: f64,
}

#[derive(Clone, Debug)]
pub struct HypersurfaceModel {
    n: usize,
    radii_sq: Vec<f64>,
    alpha: f64,
    kind: ModelKind,
    symmetry: CyclicSymmetry,
    certificate: ConvexityCertificate,
}

/// Value, gradient and Hessian of a scalar function.
struct Jet {
    v: f64,
    g: Vector,
    h: Mat,
}

impl HypersurfaceModel {
    pub fn ellipsoid(radii_sq: &[f64], alpha: f64, symmetry: CyclicSymmetry) -> Result<Self> {
        Self::build(radii_sq, alpha, ModelKind::Ellipsoid, symmetry)
    }

    pub fn perturbed(radii_sq: &[f64], alpha: f64, epsilon: f64, harmonic: u32, symmetry: CyclicSymmetry) -> Result<Self> {
        if harmonic < 2 {
            return Err(Error::ParameterOutOfRange(format!("harmonic order {harmonic} < 2")));
        }
        if !epsilon.is_finite() {
            return Err(Error::ParameterOutOfRange("epsilon must be finite".into()));
        }
        Self::build(radii_sq, alpha, ModelKind::PerturbedEllipsoid { epsilon, harmonic }, symmetry)
    }

    pub fn from_config(cfg: &ModelConfig) -> Result<Self> {
        let n = cfg.radii_sq.len();
        let sym = cfg.symmetry.build(n)?;
        match cfg.kind {
            ModelKindName::Ellipsoid => Self::ellipsoid(&cfg.radii_sq, cfg.alpha, sym),
            ModelKindName::PerturbedEllipsoid => {
                let eps = cfg.epsilon.unwrap_or(0.05);
                let k = cfg.harmonic.unwrap_or(sym.order());
                Self::perturbed(&cfg.radii_sq, cfg.alpha, eps, k, sym)
            }
        }
    }

    fn build(radii_sq: &[f64], alpha: f64, kind: ModelKind, symmetry: CyclicSymmetry) -> Result<Self> {
        let n = radii_sq.len();
        if n == 0 {
            return Err(Error::Config("at least one radius is required".into()));
        }
        if radii_sq.iter().any(|r| !(*r > 0.0 && r.is_finite())) {
            return Err(Error::ParameterOutOfRange("radii must be positive".into()));
        }
        if !(alpha > 1.0 && alpha < 2.0) {
            return Err(Error::ParameterOutOfRange(format!("alpha = {alpha} must lie in (1, 2)")));
        }
        if symmetry.n() != n {
            return Err(Error::DimensionMismatch { expected: n, found: symmetry.n() });
        }
        let mut model = Self {
            n,
            radii_sq: radii_sq.to_vec(),
            alpha,
            kind,
            symmetry,
            certificate: ConvexityCertificate {
                samples: 0,
                min_tangent_eig: f64::NAN,
                min_hessian_eig: f64::NAN,
            },
        };
        model.check_symmetry()?;
        model.certificate = model.certify_convexity(CONVEXITY_SAMPLES)?;
        Ok(model)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn radii_sq(&self) -> &[f64] {
        &self.radii_sq
    }

    pub fn kind(&self) -> ModelKind {
        self.kind
    }

    pub fn symmetry(&self) -> &CyclicSymmetry {
        &self.symmetry
    }

    pub fn certificate(&self) -> &ConvexityCertificate {
        &self.certificate
    }

    /// True when `H` is exactly the ellipsoid Hamiltonian (including `eps = 0`).
    pub fn is_ellipsoid(&self) -> bool {
        match self.kind {
            ModelKind::Ellipsoid => true,
            ModelKind::PerturbedEllipsoid { epsilon, .. } => epsilon == 0.0,
        }
    }

    /// Upper bound on the diameter of `Σ`.
    pub fn diameter(&self) -> f64 {
        let rmax = self.radii_sq.iter().copied().fold(0.0, f64::max).sqrt();
        let eps = match self.kind {
            ModelKind::Ellipsoid => 0.0,
            ModelKind::PerturbedEllipsoid { epsilon, harmonic } => {
                epsilon.abs() * self.radii_sq[0].powf(harmonic as f64 / 2.0)
            }
        };
        2.0 * rmax / (1.0 - eps).max(0.1).sqrt()
    }

    fn q_jet(&self, x: &Vector) -> Jet {
        let n = self.n;
        let mut v = 0.0;
        let mut g = Vector::zeros(2 * n);
        let mut h = Mat::zeros(2 * n, 2 * n);
        for i in 0..n {
            let w = 1.0 / self.radii_sq[i];
            for idx in [i, n + i] {
                v += w * x[idx] * x[idx];
                g[idx] = 2.0 * w * x[idx];
                h[(idx, idx)] = 2.0 * w;
            }
        }
        Jet { v, g, h }
    }

    /// `F = j^2` with derivatives.
    fn f_jet(&self, x: &Vector) -> Jet {
        let q = self.q_jet(x);
        let (eps, k) = match self.kind {
            ModelKind::Ellipsoid => return q,
            ModelKind::PerturbedEllipsoid { epsilon, harmonic } => (epsilon, harmonic as i32),
        };
        if eps == 0.0 || q.v == 0.0 {
            return q;
        }
        let n = self.n;
        let z = Complex64::new(x[0], x[n]);
        let kf = k as f64;
        let s = z.powi(k).re;
        let d1 = z.powi(k - 1) * kf;
        let d2 = z.powi(k - 2) * (kf * (kf - 1.0));
        let mut sg = Vector::zeros(2 * n);
        sg[0] = d1.re;
        sg[n] = -d1.im;
        let mut sh = Mat::zeros(2 * n, 2 * n);
        sh[(0, 0)] = d2.re;
        sh[(0, n)] = -d2.im;
        sh[(n, 0)] = -d2.im;
        sh[(n, n)] = -d2.re;

        let e = (kf - 2.0) / 2.0;
        let w = q.v.powf(-e);
        let wg = &q.g * (-e * q.v.powf(-e - 1.0));
        let wh = &q.g * q.g.transpose() * (e * (e + 1.0) * q.v.powf(-e - 2.0)) - &q.h * (e * q.v.powf(-e - 1.0));

        let v = q.v + eps * s * w;
        let g = &q.g + (&sg * w + &wg * s) * eps;
        let h = &q.h + (&sh * w + &sg * wg.transpose() + &wg * sg.transpose() + &wh * s) * eps;
        Jet { v, g, h }
    }

    pub fn gauge(&self, x: &Vector) -> f64 {
        self.f_jet(x).v.max(0.0).sqrt()
    }

    pub fn gauge_grad(&self, x: &Vector) -> Result<Vector> {
        let f = self.f_jet(x);
        if f.v <= 0.0 {
            return Err(Error::ParameterOutOfRange("gauge derivative at the origin".into()));
        }
        Ok(f.g / (2.0 * f.v.sqrt()))
    }

    pub fn gauge_hess(&self, x: &Vector) -> Result<Mat> {
        let f = self.f_jet(x);
        if f.v <= 0.0 {
            return Err(Error::ParameterOutOfRange("gauge derivative at the origin".into()));
        }
        let j = f.v.sqrt();
        Ok(&f.h / (2.0 * j) - &f.g * f.g.transpose() / (4.0 * j * j * j))
    }

    pub fn hamiltonian(&self, x: &Vector) -> f64 {
        self.f_jet(x).v.max(0.0).powf(self.alpha / 2.0)
    }

    /// `∇H`; zero at the origin.
    pub fn ham_grad(&self, x: &Vector) -> Vector {
        let f = self.f_jet(x);
        if f.v <= 0.0 {
            return Vector::zeros(2 * self.n);
        }
        let a2 = self.alpha / 2.0;
        f.g * (a2 * f.v.powf(a2 - 1.0))
    }

    pub fn ham_hess(&self, x: &Vector) -> Result<Mat> {
        let f = self.f_jet(x);
        if f.v <= 0.0 {
            return Err(Error::ParameterOutOfRange("Hessian of H at the origin".into()));
        }
        let a2 = self.alpha / 2.0;
        Ok(&f.h * (a2 * f.v.powf(a2 - 1.0)) + &f.g * f.g.transpose() * (a2 * (a2 - 1.0) * f.v.powf(a2 - 2.0)))
    }

    /// `H` and `∇H` together.
    pub fn ham_and_grad(&self, x: &Vector) -> (f64, Vector) {
        let f = self.f_jet(x);
        if f.v <= 0.0 {
            return (0.0, Vector::zeros(2 * self.n));
        }
        let a2 = self.alpha / 2.0;
        (f.v.powf(a2), f.g * (a2 * f.v.powf(a2 - 1.0)))
    }

    fn beta(&self) -> f64 {
        self.alpha / (self.alpha - 1.0)
    }

    fn fenchel_const(&self) -> f64 {
        (self.alpha - 1.0) * self.alpha.powf(-self.beta())
    }

    fn ellipsoid_polar(&self, y: &Vector) -> f64 {
        let n = self.n;
        (0..n)
            .map(|i| self.radii_sq[i] * (y[i] * y[i] + y[n + i] * y[n + i]))
            .sum::<f64>()
            .sqrt()
    }

    /// `∇H*` of the unperturbed ellipsoid.
    fn ellipsoid_dual_point(&self, y: &Vector) -> Vector {
        let n = self.n;
        let p = self.ellipsoid_polar(y);
        if p == 0.0 {
            return Vector::zeros(2 * n);
        }
        let beta = self.beta();
        let scale = self.alpha.powf(1.0 - beta) * p.powf(beta - 2.0);
        Vector::from_fn(2 * n, |i, _| scale * self.radii_sq[i % n] * y[i])
    }

    /// `x = ∇H*(y)`, the unique solution of `∇H(x) = y`.
    pub fn dual_point(&self, y: &Vector) -> Result<Vector> {
        let x0 = self.ellipsoid_dual_point(y);
        if self.is_ellipsoid() {
            Ok(x0)
        } else {
            self.newton_dual(y, x0)
        }
    }

    fn newton_dual(&self, y: &Vector, mut x: Vector) -> Result<Vector> {
        let ynorm = y.norm();
        if ynorm == 0.0 {
            return Ok(x);
        }
        let objective = |x: &Vector| self.hamiltonian(x) - x.dot(y);
        let mut fx = objective(&x);
        for _ in 0..60 {
            let r = self.ham_grad(&x) - y;
            if r.norm() <= 1e-14 * ynorm {
                return Ok(x);
            }
            let h = self.ham_hess(&x)?;
            let step = h
                .cholesky()
                .map(|c| c.solve(&r))
                .ok_or_else(|| Error::Convergence("Hessian of H not positive definite".into()))?;
            let mut t = 1.0;
            loop {
                let cand = &x - &step * t;
                let fc = objective(&cand);
                if fc <= fx + 1e-14 * fx.abs().max(1e-300) || t < 1e-8 {
                    x = cand;
                    fx = fc;
                    break;
                }
                t *= 0.5;
            }
            if step.norm() * t <= 1e-16 * x.norm() {
                return Ok(x);
            }
        }
        let r = (self.ham_grad(&x) - y).norm();
        if r <= 1e-11 * ynorm {
            return Ok(x);
        }
        Err(Error::Convergence(format!("dual point residual {r:.2e}")))
    }

    /// Fenchel transform `H*(y) = sup_x (x·y - H(x))`.
    pub fn fenchel(&self, y: &Vector) -> Result<f64> {
        if self.is_ellipsoid() {
            Ok(self.fenchel_const() * self.ellipsoid_polar(y).powf(self.beta()))
        } else {
            let x = self.dual_point(y)?;
            Ok(x.dot(y) - self.hamiltonian(&x))
        }
    }

    /// `H*` and `∇H*` together.
    pub fn fenchel_and_grad(&self, y: &Vector) -> Result<(f64, Vector)> {
        let x = self.dual_point(y)?;
        let v = if self.is_ellipsoid() {
            self.fenchel_const() * self.ellipsoid_polar(y).powf(self.beta())
        } else {
            x.dot(y) - self.hamiltonian(&x)
        };
        Ok((v, x))
    }

    /// Polar gauge `j°(y) = sup_{j(x) <= 1} x·y`, using `H* = c j°^beta`.
    pub fn polar_gauge(&self, y: &Vector) -> Result<f64> {
        if self.is_ellipsoid() {
            return Ok(self.ellipsoid_polar(y));
        }
        let h = self.fenchel(y)?.max(0.0);
        Ok((h / self.fenchel_const()).powf(1.0 / self.beta()))
    }

    fn check_symmetry(&self) -> Result<()> {
        let mut rng = ChaCha8Rng::seed_from_u64(CERTIFY_SEED ^ 0xa5a5);
        let p = self.symmetry.matrix();
        for _ in 0..200 {
            let x = Vector::from_fn(2 * self.n, |_, _| rng.sample::<f64, _>(StandardNormal));
            let px = p * &x;
            let (a, b) = (self.gauge(&x), self.gauge(&px));
            if (a - b).abs() > 1e-12 * a.max(1.0) {
                return Err(Error::InvalidSymmetry(format!(
                    "model is not invariant under P (|j(Px) - j(x)| = {:.2e})",
                    (a - b).abs()
                )));
            }
        }
        Ok(())
    }

    /// Random point on `Σ`.
    pub fn random_point<R: Rng + ?Sized>(&self, rng: &mut R) -> Vector {
        loop {
            let x = Vector::from_fn(2 * self.n, |_, _| rng.sample::<f64, _>(StandardNormal));
            let j = self.gauge(&x);
            if j > 1e-12 {
                return x / j;
            }
        }
    }

    /// Samples `Σ` and checks that the Hessian of `H` is positive definite,
    /// both in full and restricted to tangent spaces.
    pub fn certify_convexity(&self, samples: usize) -> Result<ConvexityCertificate> {
        let mut rng = ChaCha8Rng::seed_from_u64(CERTIFY_SEED);
        let d = 2 * self.n;
        let mut min_t = f64::INFINITY;
        let mut min_h = f64::INFINITY;
        for _ in 0..samples {
            let x = self.random_point(&mut rng);
            let f = self.f_jet(&x);
            if f.v <= 0.0 {
                return Err(Error::NotConvex("gauge vanishes away from the origin".into()));
            }
            let h = self.ham_hess(&x)?;
            min_h = min_h.min(SymmetricEigen::new(h.clone()).eigenvalues.min());
            let nrm = self.ham_grad(&x).normalize();
            let mut basis = Mat::identity(d, d);
            basis.set_column(0, &nrm);
            let q = basis.qr().q();
            let t = q.columns(1, d - 1);
            let ht = t.transpose() * &h * t;
            min_t = min_t.min(SymmetricEigen::new(ht).eigenvalues.min());
        }
        if !(min_t > CONVEXITY_MARGIN && min_h > CONVEXITY_MARGIN) {
            return Err(Error::NotConvex(format!(
                "sampled Hessian eigenvalue {:.3e} (tangent {:.3e})",
                min_h, min_t
            )));
        }
        Ok(ConvexityCertificate {
            samples,
            min_tangent_eig: min_t,
            min_hessian_eig: min_h,
        })
    }

    /// Symplectic orthogonal maps preserving `H` whose fixed space is the
    /// `i`-th coordinate plane: rotation by `2 pi / k` in the first plane
    /// (when `i != 0`) and by `pi` in every other plane.
    pub fn plane_isotropy(&self, i: usize) -> Result<Mat> {
        if i >= self.n {
            return Err(Error::ParameterOutOfRange(format!("plane {i}")));
        }
        let first = match self.kind {
            ModelKind::Ellipsoid => std::f64::consts::PI,
            ModelKind::PerturbedEllipsoid { harmonic, .. } => 2.0 * std::f64::consts::PI / harmonic as f64,
        };
        let angles: Vec<f64> = (0..self.n)
            .map(|j| {
                if j == i {
                    0.0
                } else if j == 0 {
                    first
                } else {
                    std::f64::consts::PI
                }
            })
            .collect();
        Ok(rotation_diamond(&angles))
    }

    pub fn to_config(&self) -> ModelConfig {
        let (kind, epsilon, harmonic) = match self.kind {
            ModelKind::Ellipsoid => (ModelKindName::Ellipsoid, None, None),
            ModelKind::PerturbedEllipsoid { epsilon, harmonic } => {
                (ModelKindName::PerturbedEllipsoid, Some(epsilon), Some(harmonic))
            }
        };
        ModelConfig {
            kind,
            radii_sq: self.radii_sq.clone(),
            alpha: self.alpha,
            symmetry: SymmetrySpec::Matrix {
                k: self.symmetry.order(),
                matrix: MatrixJson::from_matrix(self.symmetry.matrix()),
            },
            epsilon,
            harmonic,
        }
    }
}
