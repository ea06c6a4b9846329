//! Clarke-Ekeland dual action on mean-zero loops
//! `Φ(u) = ∫ (½ Ju·Mu + H*(-Ju)) dt`, discretized in real Fourier modes.

use nalgebra::DVector;
use rand::Rng;
use rand_distr::StandardNormal;
use std::f64::consts::PI;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::flow::ClosedCharacteristic;
use crate::model::{HypersurfaceModel, Vector};
use crate::symplectic::Mat;

/// Default Fourier truncation.
pub const DEFAULT_MODES: usize = 64;
/// Quadrature points per Fourier mode.
pub const QUAD_PER_MODE: usize = 8;

/// `u(t) = sum_{k=1}^N a_k cos(2 pi k t) + b_k sin(2 pi k t)`.
///
/// Coefficients are the columns of a `2n x 2N` matrix ordered
/// `a_1, b_1, a_2, b_2, ...`; the complex coefficient at frequency `±k` is
/// `(a_k ∓ i b_k) / 2`.
#[derive(Clone, Debug, PartialEq)]
pub struct DualLoop {
    coeffs: Mat,
}

impl DualLoop {
    pub fn zeros(dim: usize, modes: usize) -> Self {
        Self { coeffs: Mat::zeros(dim, 2 * modes) }
    }

    pub fn from_coeffs(coeffs: Mat) -> Result<Self> {
        if coeffs.ncols() % 2 != 0 || coeffs.nrows() % 2 != 0 {
            return Err(Error::DimensionMismatch { expected: 2 * (coeffs.ncols() / 2), found: coeffs.ncols() });
        }
        Ok(Self { coeffs })
    }

    /// Random loop with Gaussian coefficients of size `scale / k` on the
    /// first `low` frequencies.
    pub fn random<R: Rng + ?Sized>(dim: usize, modes: usize, low: usize, scale: f64, rng: &mut R) -> Self {
        let mut c = Mat::zeros(dim, 2 * modes);
        for k in 1..=low.min(modes) {
            for col in [2 * k - 2, 2 * k - 1] {
                for r in 0..dim {
                    c[(r, col)] = scale / k as f64 * rng.sample::<f64, _>(StandardNormal);
                }
            }
        }
        Self { coeffs: c }
    }

    pub fn dim(&self) -> usize {
        self.coeffs.nrows()
    }

    pub fn modes(&self) -> usize {
        self.coeffs.ncols() / 2
    }

    pub fn coeffs(&self) -> &Mat {
        &self.coeffs
    }

    pub fn a(&self, k: usize) -> Vector {
        self.coeffs.column(2 * k - 2).into_owned()
    }

    pub fn b(&self, k: usize) -> Vector {
        self.coeffs.column(2 * k - 1).into_owned()
    }

    /// Complex Fourier coefficient at a nonzero frequency in `[-N, N]`.
    pub fn fourier(&self, freq: i64) -> Result<nalgebra::DVector<num_complex::Complex64>> {
        let k = freq.unsigned_abs() as usize;
        if k == 0 || k > self.modes() {
            return Err(Error::ParameterOutOfRange(format!("frequency {freq}")));
        }
        let s = if freq > 0 { -1.0 } else { 1.0 };
        let (a, b) = (self.a(k), self.b(k));
        Ok(DVector::from_fn(self.dim(), |i, _| num_complex::Complex64::new(a[i] / 2.0, s * b[i] / 2.0)))
    }

    pub fn eval(&self, t: f64) -> Vector {
        let mut out = Vector::zeros(self.dim());
        for k in 1..=self.modes() {
            let (s, c) = (2.0 * PI * k as f64 * t).sin_cos();
            out += self.coeffs.column(2 * k - 2) * c + self.coeffs.column(2 * k - 1) * s;
        }
        out
    }

    /// Mean-zero primitive `Mu`.
    pub fn primitive(&self) -> Self {
        let mut c = Mat::zeros(self.dim(), self.coeffs.ncols());
        for k in 1..=self.modes() {
            let w = 2.0 * PI * k as f64;
            c.set_column(2 * k - 2, &(-self.coeffs.column(2 * k - 1) / w));
            c.set_column(2 * k - 1, &(self.coeffs.column(2 * k - 2) / w));
        }
        Self { coeffs: c }
    }

    /// Time derivative.
    pub fn derivative(&self) -> Self {
        let mut c = Mat::zeros(self.dim(), self.coeffs.ncols());
        for k in 1..=self.modes() {
            let w = 2.0 * PI * k as f64;
            c.set_column(2 * k - 2, &(self.coeffs.column(2 * k - 1) * w));
            c.set_column(2 * k - 1, &(-self.coeffs.column(2 * k - 2) * w));
        }
        Self { coeffs: c }
    }

    /// Pointwise linear map `t -> A u(t)`.
    pub fn map(&self, a: &Mat) -> Self {
        Self { coeffs: a * &self.coeffs }
    }

    /// `L^2` norm on `[0, 1]`.
    pub fn l2_norm(&self) -> f64 {
        self.coeffs.norm() / 2f64.sqrt()
    }

    /// `∫ Ju·Mu dt` from the coefficients.
    pub fn symplectic_pairing(&self) -> f64 {
        let n = self.dim() / 2;
        (1..=self.modes())
            .map(|k| {
                let a = self.coeffs.column(2 * k - 2);
                let b = self.coeffs.column(2 * k - 1);
                // a^T J b with J = [[0, -I], [I, 0]].
                let ajb: f64 = (0..n).map(|i| -a[i] * b[n + i] + a[n + i] * b[i]).sum();
                ajb / (2.0 * PI * k as f64)
            })
            .sum()
    }

    /// Same loop with the truncation changed (zero padded or cut).
    pub fn resized(&self, modes: usize) -> Self {
        let mut c = Mat::zeros(self.dim(), 2 * modes);
        let keep = 2 * modes.min(self.modes());
        c.columns_mut(0, keep).copy_from(&self.coeffs.columns(0, keep));
        Self { coeffs: c }
    }

    /// gcd of the frequencies whose coefficient norm exceeds `rel` times the largest.
    pub fn frequency_gcd(&self, rel: f64) -> usize {
        let norms: Vec<f64> = (1..=self.modes())
            .map(|k| (self.a(k).norm_squared() + self.b(k).norm_squared()).sqrt())
            .collect();
        let max = norms.iter().copied().fold(0.0, f64::max);
        if max == 0.0 {
            return 0;
        }
        norms
            .iter()
            .enumerate()
            .filter(|(_, v)| **v > rel * max)
            .fold(0, |g, (i, _)| gcd(g, i + 1))
    }
}

fn gcd(a: usize, b: usize) -> usize {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

fn apply_j(v: &Vector) -> Vector {
    let n = v.len() / 2;
    Vector::from_fn(2 * n, |i, _| if i < n { -v[n + i] } else { v[i - n] })
}

/// Discretized dual action for a fixed model and truncation.
#[derive(Clone, Debug)]
pub struct DualAction {
    model: Arc<HypersurfaceModel>,
    modes: usize,
    quad: usize,
    /// `2N x Q` basis values `cos(2 pi k t_q)`, `sin(2 pi k t_q)`.
    basis: Mat,
}

impl DualAction {
    pub fn new(model: Arc<HypersurfaceModel>, modes: usize) -> Result<Self> {
        Self::with_quadrature(model, modes, QUAD_PER_MODE * modes)
    }

    pub fn with_quadrature(model: Arc<HypersurfaceModel>, modes: usize, quad: usize) -> Result<Self> {
        if modes == 0 {
            return Err(Error::ParameterOutOfRange("at least one Fourier mode is required".into()));
        }
        if quad < QUAD_PER_MODE * modes {
            return Err(Error::ParameterOutOfRange(format!(
                "{quad} quadrature points for {modes} modes (need {})",
                QUAD_PER_MODE * modes
            )));
        }
        let basis = Mat::from_fn(2 * modes, quad, |r, q| {
            let k = (r / 2 + 1) as f64;
            let arg = 2.0 * PI * k * q as f64 / quad as f64;
            if r % 2 == 0 {
                arg.cos()
            } else {
                arg.sin()
            }
        });
        Ok(Self { model, modes, quad, basis })
    }

    pub fn model(&self) -> &Arc<HypersurfaceModel> {
        &self.model
    }

    pub fn modes(&self) -> usize {
        self.modes
    }

    pub fn quad_points(&self) -> usize {
        self.quad
    }

    pub fn zero_loop(&self) -> DualLoop {
        DualLoop::zeros(2 * self.model.n(), self.modes)
    }

    fn check(&self, u: &DualLoop) -> Result<()> {
        if u.dim() != 2 * self.model.n() || u.modes() != self.modes {
            return Err(Error::DimensionMismatch { expected: 2 * self.model.n() * self.modes, found: u.dim() * u.modes() });
        }
        Ok(())
    }

    /// `u(t_q)` at the quadrature nodes, as columns.
    pub fn samples(&self, u: &DualLoop) -> Mat {
        &u.coeffs * &self.basis
    }

    pub fn value(&self, u: &DualLoop) -> Result<f64> {
        self.check(u)?;
        let us = self.samples(u);
        let mut acc = 0.0;
        for q in 0..self.quad {
            acc += self.model.fenchel(&(-apply_j(&us.column(q).into_owned())))?;
        }
        Ok(0.5 * u.symplectic_pairing() + acc / self.quad as f64)
    }

    /// `Φ(u)` and the coefficient gradient `∂Φ/∂(a_k, b_k)`.
    pub fn value_and_gradient(&self, u: &DualLoop) -> Result<(f64, DualLoop)> {
        self.check(u)?;
        let us = self.samples(u);
        let dim = u.dim();
        let mut acc = 0.0;
        let mut jx = Mat::zeros(dim, self.quad);
        for q in 0..self.quad {
            let y = -apply_j(&us.column(q).into_owned());
            let (h, x) = self.model.fenchel_and_grad(&y)?;
            acc += h;
            jx.set_column(q, &apply_j(&x));
        }
        let mut g = jx * self.basis.transpose() / self.quad as f64;
        for k in 1..=self.modes {
            let w = 4.0 * PI * k as f64;
            let a = u.coeffs.column(2 * k - 2).into_owned();
            let b = u.coeffs.column(2 * k - 1).into_owned();
            let mut ga = g.column_mut(2 * k - 2);
            ga += apply_j(&b) / w;
            let mut gb = g.column_mut(2 * k - 1);
            gb -= apply_j(&a) / w;
        }
        Ok((0.5 * u.symplectic_pairing() + acc / self.quad as f64, DualLoop { coeffs: g }))
    }

    /// `L^2` representative of `Φ'(u)` (a mean-zero loop).
    pub fn gradient(&self, u: &DualLoop) -> Result<DualLoop> {
        let (_, g) = self.value_and_gradient(u)?;
        Ok(DualLoop { coeffs: g.coeffs * 2.0 })
    }

    /// `L^2` norm of `Φ'(u)` from a coefficient gradient.
    pub fn gradient_norm(coeff_grad: &DualLoop) -> f64 {
        2f64.sqrt() * coeff_grad.coeffs.norm()
    }

    /// Relative change of `Φ(u)` when the quadrature is doubled.
    pub fn quadrature_drift(&self, u: &DualLoop) -> Result<f64> {
        let fine = Self::with_quadrature(self.model.clone(), self.modes, 2 * self.quad)?;
        let (a, b) = (self.value(u)?, fine.value(u)?);
        Ok((a - b).abs() / a.abs().max(1e-300))
    }

    /// The critical loop `u_y^m(t) = (m tau)^{(1-α)/(2-α)} y'(m tau t)` of
    /// the `m`-th iterate of an orbit, by discrete Fourier analysis.
    pub fn loop_from_orbit(&self, orbit: &ClosedCharacteristic, m: usize) -> Result<DualLoop> {
        if orbit.model().n() != self.model.n() {
            return Err(Error::DimensionMismatch { expected: self.model.n(), found: orbit.model().n() });
        }
        let m = m.max(1) as f64;
        let alpha = self.model.alpha();
        let mt = m * orbit.tau();
        let scale = mt.powf((1.0 - alpha) / (2.0 - alpha));
        let dim = 2 * self.model.n();
        let mut us = Mat::zeros(dim, self.quad);
        for q in 0..self.quad {
            let t = q as f64 / self.quad as f64;
            us.set_column(q, &(orbit.velocity(mt * t) * scale));
        }
        let coeffs = us * self.basis.transpose() * (2.0 / self.quad as f64);
        Ok(DualLoop { coeffs })
    }
}

/// `x_u(t_q) = Mu(t_q) - ξ` at the quadrature nodes, with `ξ` chosen so
/// that the mean of `x_u - ∇H*(-Ju)` vanishes.
pub fn critical_solution(action: &DualAction, u: &DualLoop) -> Result<Mat> {
    let us = action.samples(u);
    let mu = action.samples(&u.primitive());
    let dim = u.dim();
    let mut mean = Vector::zeros(dim);
    for q in 0..action.quad {
        mean += action.model.dual_point(&(-apply_j(&us.column(q).into_owned())))?;
    }
    mean /= action.quad as f64;
    let mut xs = mu;
    for mut c in xs.column_iter_mut() {
        c += &mean;
    }
    Ok(xs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cyclic::CyclicSymmetry;
    use crate::flow::known_orbits;
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn model(eps: f64) -> Arc<HypersurfaceModel> {
        let sym = CyclicSymmetry::rotation(2, 3).unwrap();
        Arc::new(if eps == 0.0 {
            HypersurfaceModel::ellipsoid(&[1.0, 2.5], 1.5, sym).unwrap()
        } else {
            HypersurfaceModel::perturbed(&[1.0, 2.5], 1.5, eps, 3, sym).unwrap()
        })
    }

    #[test]
    fn primitive_of_cosine_is_scaled_sine() {
        let mut u = DualLoop::zeros(4, 3);
        u.coeffs[(0, 0)] = 1.0;
        let mu = u.primitive();
        assert_relative_eq!(mu.coeffs[(0, 1)], 1.0 / (2.0 * PI));
        assert_relative_eq!(mu.derivative().coeffs, u.coeffs, epsilon = 1e-15);
        assert_relative_eq!(mu.eval(0.1)[0], (2.0 * PI * 0.1).sin() / (2.0 * PI), epsilon = 1e-15);
    }

    #[test]
    fn fourier_coefficients_are_conjugate_pairs() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let u = DualLoop::random(4, 4, 3, 1.0, &mut rng);
        let p = u.fourier(2).unwrap();
        let m = u.fourier(-2).unwrap();
        assert_eq!(p.map(|z| z.conj()), m);
        assert!(u.fourier(0).is_err());
    }

    #[test]
    fn pairing_matches_quadrature() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let u = DualLoop::random(4, 5, 5, 1.0, &mut rng);
        let mu = u.primitive();
        let q = 400;
        let s: f64 = (0..q)
            .map(|i| {
                let t = i as f64 / q as f64;
                apply_j(&u.eval(t)).dot(&mu.eval(t))
            })
            .sum::<f64>()
            / q as f64;
        assert_relative_eq!(s, u.symplectic_pairing(), epsilon = 1e-13);
    }

    #[test]
    fn zero_loop_is_critical_with_zero_value() {
        let a = DualAction::new(model(0.05), 8).unwrap();
        let (v, g) = a.value_and_gradient(&a.zero_loop()).unwrap();
        assert_eq!(v, 0.0);
        assert_eq!(g.coeffs.norm(), 0.0);
    }

    #[test]
    fn gradient_matches_central_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for eps in [0.0, 0.06] {
            let a = DualAction::new(model(eps), 6).unwrap();
            let u = DualLoop::random(4, 6, 4, 0.4, &mut rng);
            let (_, g) = a.value_and_gradient(&u).unwrap();
            let dir = DualLoop::random(4, 6, 6, 1.0, &mut rng);
            let h = 1e-6;
            let plus = DualLoop { coeffs: &u.coeffs + &dir.coeffs * h };
            let minus = DualLoop { coeffs: &u.coeffs - &dir.coeffs * h };
            let fd = (a.value(&plus).unwrap() - a.value(&minus).unwrap()) / (2.0 * h);
            let an = g.coeffs.dot(&dir.coeffs);
            assert!((fd - an).abs() / (1.0 + an.abs()) < 1e-7, "{fd} vs {an}");
        }
    }

    #[test]
    fn action_and_gradient_are_p_equivariant() {
        let m = model(0.05);
        let p = m.symmetry().matrix().clone();
        let a = DualAction::new(m, 8).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let u = DualLoop::random(4, 8, 3, 0.5, &mut rng);
        let (v, g) = a.value_and_gradient(&u).unwrap();
        let (pv, pg) = a.value_and_gradient(&u.map(&p)).unwrap();
        assert_relative_eq!(v, pv, max_relative = 1e-12);
        assert_relative_eq!(pg.coeffs, (&p * g.coeffs), epsilon = 1e-12);
    }

    #[test]
    fn orbit_loop_is_critical_and_negative() {
        let m = model(0.0);
        let a = DualAction::new(m.clone(), 16).unwrap();
        for orbit in known_orbits(&m).unwrap() {
            let u = a.loop_from_orbit(&orbit, 1).unwrap();
            let (v, g) = a.value_and_gradient(&u).unwrap();
            assert!(v < 0.0);
            assert!(DualAction::gradient_norm(&g) < 1e-10, "{}", DualAction::gradient_norm(&g));
            assert_eq!(u.frequency_gcd(1e-6), 1);
            let u2 = a.loop_from_orbit(&orbit, 2).unwrap();
            assert_eq!(u2.frequency_gcd(1e-6), 2);
        }
    }
}
