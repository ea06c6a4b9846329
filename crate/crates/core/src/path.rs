//! Continuous symplectic paths `gamma: [0, tau] -> Sp(2n)` with `gamma(0) = I`.
//!
//! A path is a generator (closed form, flow or interpolation) plus a sample
//! cache. Paths used by the index engine must be certified positive, i.e.
//! `gamma' = J A(t) gamma` with `A(t)` symmetric positive definite.

use nalgebra::SymmetricEigen;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fmt;
use std::sync::{Arc, RwLock};

use crate::error::{Error, Result};
use crate::symplectic::{
    diamond_all, standard_j, symplectic_defect, symplectic_inverse, Mat, MatrixJson, NormalForm,
};

const CACHE_LIMIT: usize = 1 << 16;
const CERTIFY_SAMPLES: usize = 257;

/// Evaluation backend of a path.
pub trait PathGenerator: Send + Sync + fmt::Debug {
    /// Real dimension `2n`.
    fn dim(&self) -> usize;

    fn eval(&self, t: f64) -> Mat;

    /// Symmetric `A(t)` with `gamma'(t) = J A(t) gamma(t)`, when available
    /// without differencing.
    fn generator(&self, _t: f64) -> Option<Mat> {
        None
    }
}

pub struct SymplecticPath {
    tau: f64,
    gen: Arc<dyn PathGenerator>,
    cache: RwLock<BTreeMap<u64, Mat>>,
    min_generator_eig: Option<f64>,
}

impl fmt::Debug for SymplecticPath {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SymplecticPath")
            .field("tau", &self.tau)
            .field("dim", &self.gen.dim())
            .field("min_generator_eig", &self.min_generator_eig)
            .finish()
    }
}

impl Clone for SymplecticPath {
    fn clone(&self) -> Self {
        Self {
            tau: self.tau,
            gen: self.gen.clone(),
            cache: RwLock::new(self.cache.read().map(|c| c.clone()).unwrap_or_default()),
            min_generator_eig: self.min_generator_eig,
        }
    }
}

impl SymplecticPath {
    /// Wraps a generator without certifying positivity.
    pub fn new(gen: Arc<dyn PathGenerator>, tau: f64) -> Result<Self> {
        if !(tau > 0.0 && tau.is_finite()) {
            return Err(Error::ParameterOutOfRange(format!("path length {tau}")));
        }
        if gen.dim() == 0 || gen.dim() % 2 != 0 {
            return Err(Error::DimensionMismatch { expected: 2, found: gen.dim() });
        }
        Ok(Self {
            tau,
            gen,
            cache: RwLock::new(BTreeMap::new()),
            min_generator_eig: None,
        })
    }

    /// Wraps a generator and certifies `A(t) > 0` on a sample grid.
    pub fn convex(gen: Arc<dyn PathGenerator>, tau: f64) -> Result<Self> {
        let mut p = Self::new(gen, tau)?;
        p.certify()?;
        Ok(p)
    }

    /// Samples the generator and records its smallest eigenvalue; fails if
    /// it is not positive.
    pub fn certify(&mut self) -> Result<f64> {
        let mut min_eig = f64::INFINITY;
        for i in 0..CERTIFY_SAMPLES {
            let t = self.tau * i as f64 / (CERTIFY_SAMPLES - 1) as f64;
            let a = self.generator_at(t);
            let e = SymmetricEigen::new(a).eigenvalues.min();
            min_eig = min_eig.min(e);
        }
        if !(min_eig > 0.0) {
            return Err(Error::NotConvex(format!("generator eigenvalue {min_eig:.3e}")));
        }
        self.min_generator_eig = Some(min_eig);
        Ok(min_eig)
    }

    pub fn is_convex(&self) -> bool {
        self.min_generator_eig.is_some()
    }

    pub fn require_convex(&self) -> Result<()> {
        if self.is_convex() {
            Ok(())
        } else {
            Err(Error::NotConvex("path has not been certified".into()))
        }
    }

    pub fn min_generator_eig(&self) -> Option<f64> {
        self.min_generator_eig
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn n(&self) -> usize {
        self.gen.dim() / 2
    }

    pub fn generator_source(&self) -> Arc<dyn PathGenerator> {
        self.gen.clone()
    }

    /// `gamma(t)`, with `gamma(0) = I` exactly.
    pub fn at(&self, t: f64) -> Mat {
        let d = self.gen.dim();
        if t <= 0.0 {
            return Mat::identity(d, d);
        }
        let t = t.min(self.tau);
        let key = t.to_bits();
        if let Ok(c) = self.cache.read() {
            if let Some(m) = c.get(&key) {
                return m.clone();
            }
        }
        let m = self.gen.eval(t);
        if let Ok(mut c) = self.cache.write() {
            if c.len() < CACHE_LIMIT {
                c.insert(key, m.clone());
            }
        }
        m
    }

    pub fn end(&self) -> Mat {
        self.at(self.tau)
    }

    /// Cached samples in increasing time, always starting with `(0, I)`.
    pub fn samples(&self) -> Vec<(f64, Mat)> {
        let d = self.gen.dim();
        let mut out = vec![(0.0, Mat::identity(d, d))];
        if let Ok(c) = self.cache.read() {
            out.extend(c.iter().map(|(k, m)| (f64::from_bits(*k), m.clone())));
        }
        out
    }

    /// Generator `A(t)`, from the backend or by central differences.
    pub fn generator_at(&self, t: f64) -> Mat {
        if let Some(a) = self.gen.generator(t.clamp(0.0, self.tau)) {
            return symmetrize(&a);
        }
        let h = 1e-5 * self.tau;
        let (t0, t1) = if t - h < 0.0 {
            (0.0, 2.0 * h)
        } else if t + h > self.tau {
            (self.tau - 2.0 * h, self.tau)
        } else {
            (t - h, t + h)
        };
        let d = (self.gen.eval(t1) - self.gen.eval(t0)) / (t1 - t0);
        let g = self.gen.eval(t);
        let j = standard_j(self.n());
        symmetrize(&(-(&j * d * symplectic_inverse(&g))))
    }

    /// Largest symplectic defect over cached samples and a uniform grid.
    pub fn max_defect(&self, grid: usize) -> f64 {
        let mut worst = 0.0f64;
        for i in 0..=grid {
            let t = self.tau * i as f64 / grid.max(1) as f64;
            worst = worst.max(symplectic_defect(&self.at(t)));
        }
        worst
    }

    /// The same backend on `[0, tau']`, `tau' <= tau`.
    pub fn restrict(&self, tau: f64) -> Result<Self> {
        if !(tau > 0.0 && tau <= self.tau * (1.0 + 1e-12)) {
            return Err(Error::ParameterOutOfRange(format!("restriction to {tau}")));
        }
        Ok(Self {
            tau: tau.min(self.tau),
            gen: self.gen.clone(),
            cache: RwLock::new(BTreeMap::new()),
            min_generator_eig: self.min_generator_eig,
        })
    }

    /// `Q gamma Q^{-1}` for symplectic `Q`.
    pub fn conjugate(self: &Arc<Self>, q: &Mat) -> Result<Self> {
        let gen = Arc::new(ConjugatedPath {
            base: self.clone(),
            q: q.clone(),
            q_inv: symplectic_inverse(q),
        });
        let mut p = Self::new(gen, self.tau)?;
        if self.is_convex() {
            p.certify()?;
        }
        Ok(p)
    }

    /// The `m`-fold P-iterate `gamma_P^m` on `[0, m tau]`.
    pub fn iterate(self: &Arc<Self>, p: &Mat, m: usize) -> Result<Self> {
        if m == 0 {
            return Err(Error::ParameterOutOfRange("iterate count must be positive".into()));
        }
        let gen = Arc::new(IteratedPath::new(self.clone(), p, m)?);
        let mut out = Self::new(gen, self.tau * m as f64)?;
        if self.is_convex() {
            out.min_generator_eig = self.min_generator_eig;
            if symplectic_defect(p) > 1e-10 || !is_orthogonal(p) {
                out.certify()?;
            }
        }
        Ok(out)
    }
}

fn is_orthogonal(p: &Mat) -> bool {
    let d = p.nrows();
    (p.transpose() * p - Mat::identity(d, d)).norm() < 1e-10
}

fn symmetrize(a: &Mat) -> Mat {
    (a + a.transpose()) * 0.5
}

/// `exp(c t J) = cos(ct) I + sin(ct) J`.
pub fn rotation_flow(n: usize, angle: f64) -> Mat {
    let (s, c) = angle.sin_cos();
    Mat::identity(2 * n, 2 * n) * c + standard_j(n) * s
}

/// `gamma(t) = exp(c t J) exp(s X_1) ... exp(s X_r) inner(t)` with `s = t / tau`.
///
/// With `c` a multiple of `2 pi / tau` the end point is
/// `exp(X_1) ... exp(X_r) inner(tau)`.
#[derive(Debug)]
pub struct ExpProductPath {
    n: usize,
    tau: f64,
    speed: f64,
    factors: Vec<Mat>,
    inner: Option<Arc<SymplecticPath>>,
}

impl ExpProductPath {
    pub fn new(n: usize, tau: f64, speed: f64, factors: Vec<Mat>, inner: Option<Arc<SymplecticPath>>) -> Result<Self> {
        for x in &factors {
            if x.nrows() != 2 * n || x.ncols() != 2 * n {
                return Err(Error::DimensionMismatch { expected: 2 * n, found: x.nrows() });
            }
            let jx = standard_j(n) * x;
            if (&jx - jx.transpose()).norm() > 1e-10 * x.norm().max(1.0) {
                return Err(Error::ParameterOutOfRange("factor is not Hamiltonian".into()));
            }
        }
        if let Some(p) = &inner {
            if p.n() != n || (p.tau() - tau).abs() > 1e-12 * tau {
                return Err(Error::DimensionMismatch { expected: 2 * n, found: 2 * p.n() });
            }
        }
        Ok(Self { n, tau, speed, factors, inner })
    }

    fn product(&self, t: f64) -> (Mat, Mat) {
        // Returns (F(t), F'(t) F(t)^{-1}) for F = prod exp(s X_j).
        let d = 2 * self.n;
        let s = t / self.tau;
        let mut acc = Mat::identity(d, d);
        let mut rate = Mat::zeros(d, d);
        for x in &self.factors {
            rate += &acc * x * symplectic_inverse(&acc) / self.tau;
            acc = &acc * (x * s).exp();
        }
        (acc, rate)
    }
}

impl PathGenerator for ExpProductPath {
    fn dim(&self) -> usize {
        2 * self.n
    }

    fn eval(&self, t: f64) -> Mat {
        let (f, _) = self.product(t);
        let mut g = rotation_flow(self.n, self.speed * t) * f;
        if let Some(inner) = &self.inner {
            g *= inner.at(t);
        }
        g
    }

    fn generator(&self, t: f64) -> Option<Mat> {
        let (f, mut rate) = self.product(t);
        let j = standard_j(self.n);
        if let Some(inner) = &self.inner {
            let a_in = inner.generator_at(t);
            rate += &f * (&j * a_in) * symplectic_inverse(&f);
        }
        let e = rotation_flow(self.n, self.speed * t);
        let full = &j * self.speed + &e * rate * e.transpose();
        Some(-(&j * full))
    }
}

#[derive(Debug)]
struct ConjugatedPath {
    base: Arc<SymplecticPath>,
    q: Mat,
    q_inv: Mat,
}

impl PathGenerator for ConjugatedPath {
    fn dim(&self) -> usize {
        self.q.nrows()
    }

    fn eval(&self, t: f64) -> Mat {
        &self.q * self.base.at(t) * &self.q_inv
    }

    fn generator(&self, t: f64) -> Option<Mat> {
        let a = self.base.generator_at(t);
        Some(self.q_inv.transpose() * a * &self.q_inv)
    }
}

/// `gamma_P^m(t) = P^j gamma(t - j tau) (P^{-1} M)^j` for `j tau <= t <= (j+1) tau`.
#[derive(Debug)]
struct IteratedPath {
    base: Arc<SymplecticPath>,
    p_pow: Vec<Mat>,
    p_pow_inv: Vec<Mat>,
    k_pow: Vec<Mat>,
}

impl IteratedPath {
    fn new(base: Arc<SymplecticPath>, p: &Mat, m: usize) -> Result<Self> {
        let d = 2 * base.n();
        if p.nrows() != d || p.ncols() != d {
            return Err(Error::DimensionMismatch { expected: d, found: p.nrows() });
        }
        let k = symplectic_inverse(p) * base.end();
        let mut p_pow = vec![Mat::identity(d, d)];
        let mut k_pow = vec![Mat::identity(d, d)];
        for j in 1..m {
            p_pow.push(&p_pow[j - 1] * p);
            k_pow.push(&k_pow[j - 1] * &k);
        }
        let p_pow_inv = p_pow.iter().map(symplectic_inverse).collect();
        Ok(Self { base, p_pow, p_pow_inv, k_pow })
    }

    fn split(&self, t: f64) -> (usize, f64) {
        let tau = self.base.tau();
        let m = self.p_pow.len();
        let j = ((t / tau).floor().max(0.0) as usize).min(m - 1);
        (j, (t - j as f64 * tau).clamp(0.0, tau))
    }
}

impl PathGenerator for IteratedPath {
    fn dim(&self) -> usize {
        2 * self.base.n()
    }

    fn eval(&self, t: f64) -> Mat {
        let (j, s) = self.split(t);
        &self.p_pow[j] * self.base.at(s) * &self.k_pow[j]
    }

    fn generator(&self, t: f64) -> Option<Mat> {
        let (j, s) = self.split(t);
        let a = self.base.generator_at(s);
        let pi = &self.p_pow_inv[j];
        Some(pi.transpose() * a * pi)
    }
}

/// Interpolates dense samples with Cayley transforms of the increments.
#[derive(Debug)]
pub struct SampledPath {
    n: usize,
    times: Vec<f64>,
    mats: Vec<Mat>,
    cayley: Vec<Mat>,
}

fn cayley(c: &Mat) -> Option<Mat> {
    let d = c.nrows();
    let id = Mat::identity(d, d);
    (&id - c).try_inverse().map(|inv| (&id + c) * inv)
}

impl SampledPath {
    pub fn new(times: Vec<f64>, mats: Vec<Mat>) -> Result<Self> {
        if times.len() < 2 || times.len() != mats.len() {
            return Err(Error::Config("a sampled path needs at least two samples".into()));
        }
        let d = mats[0].nrows();
        if d % 2 != 0 {
            return Err(Error::DimensionMismatch { expected: d + 1, found: d });
        }
        if times[0] != 0.0 || (&mats[0] - Mat::identity(d, d)).norm() > 1e-10 {
            return Err(Error::Config("first sample must be (0, I)".into()));
        }
        let mut cay = Vec::with_capacity(times.len() - 1);
        for i in 0..times.len() - 1 {
            if !(times[i + 1] > times[i]) {
                return Err(Error::Config("sample times must increase".into()));
            }
            let m = &mats[i + 1];
            if m.nrows() != d || m.ncols() != d {
                return Err(Error::DimensionMismatch { expected: d, found: m.nrows() });
            }
            let sd = symplectic_defect(m);
            if sd > 1e-9 {
                return Err(Error::NotSymplectic { defect: sd, tol: 1e-9 });
            }
            let x = symplectic_inverse(&mats[i]) * m;
            let id = Mat::identity(d, d);
            if (&x - &id).norm() > 0.5 {
                return Err(Error::Config(format!("samples too sparse near t = {}", times[i])));
            }
            let inv = (&x + &id)
                .try_inverse()
                .ok_or_else(|| Error::Config("singular sample increment".into()))?;
            cay.push((&x - &id) * inv);
        }
        Ok(Self { n: d / 2, times, mats, cayley: cay })
    }

    pub fn from_json(json: &SampledPathJson) -> Result<SymplecticPath> {
        let times: Vec<f64> = json.samples.iter().map(|s| s.t).collect();
        let mats = json
            .samples
            .iter()
            .map(|s| s.matrix.to_matrix())
            .collect::<Result<Vec<_>>>()?;
        let tau = *times.last().unwrap_or(&0.0);
        let gen = Arc::new(SampledPath::new(times, mats)?);
        SymplecticPath::convex(gen, tau)
    }

    pub fn tau(&self) -> f64 {
        *self.times.last().unwrap_or(&0.0)
    }
}

impl PathGenerator for SampledPath {
    fn dim(&self) -> usize {
        2 * self.n
    }

    fn eval(&self, t: f64) -> Mat {
        let i = match self.times.binary_search_by(|x| x.total_cmp(&t)) {
            Ok(i) => return self.mats[i].clone(),
            Err(0) => return self.mats[0].clone(),
            Err(i) if i >= self.times.len() => return self.mats[self.times.len() - 1].clone(),
            Err(i) => i - 1,
        };
        let s = (t - self.times[i]) / (self.times[i + 1] - self.times[i]);
        match cayley(&(&self.cayley[i] * s)) {
            Some(c) => &self.mats[i] * c,
            None => self.mats[i].clone(),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PathSampleJson {
    pub t: f64,
    pub matrix: MatrixJson,
}

/// `{"samples": [{"t": .., "matrix": {"n": .., "rows": ..}}, ..]}`; the last
/// sample time is the path length.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SampledPathJson {
    pub samples: Vec<PathSampleJson>,
}

impl SampledPathJson {
    pub fn from_path(path: &SymplecticPath, count: usize) -> Self {
        let samples = (0..=count)
            .map(|i| {
                let t = path.tau() * i as f64 / count as f64;
                PathSampleJson { t, matrix: MatrixJson::from_matrix(&path.at(t)) }
            })
            .collect();
        Self { samples }
    }
}

/// Splits a basic normal form into commuting-by-construction factors
/// `(X_rot, X_rest)` with `exp(X_rot) exp(X_rest)` equal to the block.
fn normal_form_logs(form: &NormalForm) -> Result<(Mat, Mat)> {
    let j2 = standard_j(1);
    Ok(match *form {
        NormalForm::R { theta } => {
            crate::symplectic::basic_normal_form(form)?;
            (j2 * theta, Mat::zeros(2, 2))
        }
        NormalForm::N1 { lambda, b } => {
            crate::symplectic::basic_normal_form(form)?;
            if lambda > 0.0 {
                (Mat::zeros(2, 2), Mat::from_row_slice(2, 2, &[0.0, b, 0.0, 0.0]))
            } else {
                (j2 * PI, Mat::from_row_slice(2, 2, &[0.0, -b, 0.0, 0.0]))
            }
        }
        NormalForm::D { lambda } => {
            crate::symplectic::basic_normal_form(form)?;
            let l = lambda.abs().ln();
            let rest = Mat::from_row_slice(2, 2, &[l, 0.0, 0.0, -l]);
            if lambda > 0.0 {
                (Mat::zeros(2, 2), rest)
            } else {
                (j2 * PI, rest)
            }
        }
        NormalForm::N2 { theta, b } => {
            crate::symplectic::basic_normal_form(form)?;
            let r = crate::symplectic::rotation(theta);
            let bm = Mat::from_row_slice(2, 2, &b);
            let s = r.transpose() * bm;
            let mut rot = Mat::zeros(4, 4);
            let th = Mat::from_row_slice(2, 2, &[0.0, -theta, theta, 0.0]);
            rot.view_mut((0, 0), (2, 2)).copy_from(&th);
            rot.view_mut((2, 2), (2, 2)).copy_from(&th);
            let mut rest = Mat::zeros(4, 4);
            rest.view_mut((0, 2), (2, 2)).copy_from(&s);
            (rot, rest)
        }
    })
}

/// Positive path from `I` to `Q (⋄ blocks) Q^{-1}` on `[0, tau]`, built from
/// matrix logarithms and an added full rotation `exp(2 pi q t J / tau)`.
///
/// `q` is the smallest count (up to 64) that makes the path certify.
pub fn convex_path_to_blocks(blocks: &[NormalForm], tau: f64, q: Option<&Mat>) -> Result<SymplecticPath> {
    let mut rots = Vec::new();
    let mut rests = Vec::new();
    for b in blocks {
        let (r, s) = normal_form_logs(b)?;
        rots.push(r);
        rests.push(s);
    }
    let x1 = diamond_all(&rots);
    let x2 = diamond_all(&rests);
    let (x1, x2) = match q {
        Some(q) => {
            let qi = symplectic_inverse(q);
            (q * x1 * &qi, q * x2 * &qi)
        }
        None => (x1, x2),
    };
    convex_path_with_factors(vec![x1, x2], None, tau)
}

/// Positive path `exp(2 pi q t J / tau) prod exp(t X_j / tau) inner(t)` with
/// the smallest certifying `q`.
pub fn convex_path_with_factors(factors: Vec<Mat>, inner: Option<Arc<SymplecticPath>>, tau: f64) -> Result<SymplecticPath> {
    let n = factors
        .first()
        .map(|f| f.nrows() / 2)
        .or_else(|| inner.as_ref().map(|p| p.n()))
        .ok_or_else(|| Error::Config("no factors".into()))?;
    let mut last = None;
    for q in 1..=64u32 {
        let speed = 2.0 * PI * q as f64 / tau;
        let gen = Arc::new(ExpProductPath::new(n, tau, speed, factors.clone(), inner.clone())?);
        match SymplecticPath::convex(gen, tau) {
            Ok(p) => return Ok(p),
            Err(e) => last = Some(e),
        }
    }
    Err(last.unwrap_or_else(|| Error::NotConvex("no rotation count certified".into())))
}

/// `t -> exp(speed t J)` on `[0, tau]`.
pub fn rotation_path(n: usize, speed: f64, tau: f64) -> Result<SymplecticPath> {
    let gen = Arc::new(ExpProductPath::new(n, tau, speed, Vec::new(), None)?);
    SymplecticPath::convex(gen, tau)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::symplectic::{basic_normal_form, rotation};
    use approx::assert_relative_eq;

    #[test]
    fn rotation_path_values() {
        let p = rotation_path(1, 2.0, PI).unwrap();
        assert_relative_eq!(p.at(PI / 4.0), rotation(PI / 2.0), epsilon = 1e-14);
        assert_relative_eq!(p.end(), Mat::identity(2, 2), epsilon = 1e-14);
        assert_relative_eq!(p.min_generator_eig().unwrap(), 2.0, epsilon = 1e-12);
        assert_eq!(p.at(0.0), Mat::identity(2, 2));
    }

    #[test]
    fn negative_rotation_is_not_convex() {
        let gen = Arc::new(ExpProductPath::new(1, PI, -2.0, Vec::new(), None).unwrap());
        assert!(matches!(SymplecticPath::convex(gen, PI), Err(Error::NotConvex(_))));
    }

    #[test]
    fn block_paths_end_at_their_targets() {
        let forms = [
            NormalForm::N1 { lambda: -1.0, b: 1.0 },
            NormalForm::D { lambda: -2.0 },
            NormalForm::R { theta: 2.0 },
        ];
        let p = convex_path_to_blocks(&forms, 1.0, None).unwrap();
        let target = diamond_all(
            &forms
                .iter()
                .map(|f| basic_normal_form(f).unwrap().into_matrix())
                .collect::<Vec<_>>(),
        );
        assert_relative_eq!(p.end(), target, epsilon = 1e-12);
        assert!(p.max_defect(64) < 1e-13);
    }

    #[test]
    fn analytic_generator_matches_differences() {
        let forms = [NormalForm::N1 { lambda: 1.0, b: -1.0 }, NormalForm::R { theta: 0.5 }];
        let p = Arc::new(convex_path_to_blocks(&forms, 2.0, None).unwrap());
        let plain = SymplecticPath::new(Arc::new(Differenced(p.clone())), 2.0).unwrap();
        for &t in &[0.3, 1.0, 1.7] {
            assert_relative_eq!(p.generator_at(t), plain.generator_at(t), epsilon = 1e-6);
        }
    }

    #[derive(Debug)]
    struct Differenced(Arc<SymplecticPath>);

    impl PathGenerator for Differenced {
        fn dim(&self) -> usize {
            2 * self.0.n()
        }
        fn eval(&self, t: f64) -> Mat {
            self.0.at(t)
        }
    }

    #[test]
    fn iterate_is_continuous_at_joints() {
        let forms = [NormalForm::N1 { lambda: 1.0, b: 1.0 }, NormalForm::R { theta: 1.2 }];
        let base = Arc::new(convex_path_to_blocks(&forms, 1.0, None).unwrap());
        let p = crate::symplectic::rotation_diamond(&[2.0 * PI / 3.0, 2.0 * PI / 3.0]);
        let it = base.iterate(&p, 3).unwrap();
        for j in 1..3 {
            let t = j as f64;
            let left = it.at(t - 1e-9);
            let right = it.at(t + 1e-9);
            assert!((left - right).norm() < 1e-6);
        }
        let k = symplectic_inverse(&p) * base.end();
        let expect = p.pow(3) * k.pow(3);
        assert_relative_eq!(it.end(), expect, epsilon = 1e-10);
        assert!(it.is_convex());
    }

    #[test]
    fn sampled_path_reproduces_samples() {
        let base = convex_path_to_blocks(&[NormalForm::R { theta: 1.0 }], 1.0, None).unwrap();
        let json = SampledPathJson::from_path(&base, 400);
        let p = SampledPath::from_json(&json).unwrap();
        assert_relative_eq!(p.end(), base.end(), epsilon = 1e-12);
        assert!((p.at(0.5012) - base.at(0.5012)).norm() < 1e-5);
        assert!(symplectic_defect(&p.at(0.5012)) < 1e-12);
    }

    #[test]
    fn sparse_samples_are_rejected() {
        let base = convex_path_to_blocks(&[NormalForm::R { theta: 1.0 }], 1.0, None).unwrap();
        let json = SampledPathJson::from_path(&base, 3);
        assert!(SampledPath::from_json(&json).is_err());
    }
}
