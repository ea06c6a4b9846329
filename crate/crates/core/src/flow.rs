//! Hamiltonian flow of `H`, closed characteristics and their linearized
//! flows.

use nalgebra::SVD;
use serde::{Deserialize, Serialize};
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::model::{HypersurfaceModel, Vector};
use crate::path::{PathGenerator, SymplecticPath};
use crate::symplectic::{spectrum, standard_j, symplectic_defect, Mat, SpectrumReport, Tolerances};

/// Stored trace samples per period.
pub const TRACE_SAMPLES: usize = 2048;
/// Target `h * |H''|` for RK4 steps.
const STEP_SCALE: f64 = 2e-3;
const SHOOTING_ITERS: usize = 20;
const SHOOTING_TOL: f64 = 1e-12;

/// `J ∇H(y)`.
pub fn vector_field(model: &HypersurfaceModel, y: &Vector) -> Vector {
    let n = model.n();
    let g = model.ham_grad(y);
    Vector::from_fn(2 * n, |i, _| if i < n { -g[n + i] } else { g[i - n] })
}

pub fn rk4_step(model: &HypersurfaceModel, y: &Vector, h: f64) -> Vector {
    let k1 = vector_field(model, y);
    let k2 = vector_field(model, &(y + &k1 * (0.5 * h)));
    let k3 = vector_field(model, &(y + &k2 * (0.5 * h)));
    let k4 = vector_field(model, &(y + &k3 * h));
    y + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0)
}

/// One RK4 step of the flow together with its variational equation
/// `Gamma' = J H''(y) Gamma`.
pub fn rk4_step_linearized(model: &HypersurfaceModel, y: &Vector, g: &Mat, h: f64) -> Result<(Vector, Mat)> {
    let j = standard_j(model.n());
    let field = |y: &Vector, g: &Mat| -> Result<(Vector, Mat)> {
        Ok((vector_field(model, y), &j * model.ham_hess(y)? * g))
    };
    let (k1, l1) = field(y, g)?;
    let (k2, l2) = field(&(y + &k1 * (0.5 * h)), &(g + &l1 * (0.5 * h)))?;
    let (k3, l3) = field(&(y + &k2 * (0.5 * h)), &(g + &l2 * (0.5 * h)))?;
    let (k4, l4) = field(&(y + &k3 * h), &(g + &l3 * h))?;
    Ok((
        y + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0),
        g + (l1 + l2 * 2.0 + l3 * 2.0 + l4) * (h / 6.0),
    ))
}

/// Number of RK4 steps for time `t` starting near `y`.
fn step_count(model: &HypersurfaceModel, y: &Vector, t: f64) -> Result<usize> {
    let lam = model.ham_hess(y)?.norm().max(1.0);
    Ok(((t.abs() * lam / STEP_SCALE).ceil() as usize).max(1))
}

/// Flow map `phi_t(y)` with `steps` equal RK4 steps.
pub fn flow(model: &HypersurfaceModel, y: &Vector, t: f64, steps: usize) -> Vector {
    let h = t / steps as f64;
    let mut y = y.clone();
    for _ in 0..steps {
        y = rk4_step(model, &y, h);
    }
    y
}

/// `phi_t(y)` and its derivative.
pub fn flow_linearized(model: &HypersurfaceModel, y: &Vector, t: f64, steps: usize) -> Result<(Vector, Mat)> {
    let d = y.len();
    let h = t / steps as f64;
    let mut y = y.clone();
    let mut g = Mat::identity(d, d);
    for _ in 0..steps {
        (y, g) = rk4_step_linearized(model, &y, &g, h)?;
    }
    Ok((y, g))
}

/// A closed characteristic `(y, tau)` on `Σ` with minimal period `tau`.
///
/// `multiplicity` records how many times the critical loop it came from
/// traversed the trace.
#[derive(Clone, Debug)]
pub struct ClosedCharacteristic {
    model: Arc<HypersurfaceModel>,
    tau: f64,
    samples: Vec<Vector>,
    substeps: usize,
    multiplicity: usize,
    residual: f64,
}

impl ClosedCharacteristic {
    /// Integrates the trace from `y0` over one period and certifies it.
    pub fn from_initial(model: Arc<HypersurfaceModel>, y0: &Vector, tau: f64, multiplicity: usize) -> Result<Self> {
        if y0.len() != 2 * model.n() {
            return Err(Error::DimensionMismatch { expected: 2 * model.n(), found: y0.len() });
        }
        if !(tau > 0.0 && tau.is_finite()) {
            return Err(Error::ParameterOutOfRange(format!("period {tau}")));
        }
        let substeps = step_count(&model, y0, tau)?.div_ceil(TRACE_SAMPLES);
        let dt = tau / TRACE_SAMPLES as f64;
        let mut samples = Vec::with_capacity(TRACE_SAMPLES);
        let mut y = y0.clone();
        for _ in 0..TRACE_SAMPLES {
            samples.push(y.clone());
            y = flow(&model, &y, dt, substeps);
        }
        Self::from_samples(model, tau, samples, substeps, multiplicity)
    }

    /// Builds from a trace sampled at `i tau / TRACE_SAMPLES` and measures
    /// the residual by re-integrating every sample interval at half the step.
    pub fn from_samples(
        model: Arc<HypersurfaceModel>,
        tau: f64,
        samples: Vec<Vector>,
        substeps: usize,
        multiplicity: usize,
    ) -> Result<Self> {
        if samples.len() != TRACE_SAMPLES {
            return Err(Error::DimensionMismatch { expected: TRACE_SAMPLES, found: samples.len() });
        }
        let dt = tau / TRACE_SAMPLES as f64;
        let residual = (0..TRACE_SAMPLES)
            .map(|i| {
                let next = &samples[(i + 1) % TRACE_SAMPLES];
                (flow(&model, &samples[i], dt, 2 * substeps) - next).amax()
            })
            .fold(0.0, f64::max);
        Ok(Self {
            model,
            tau,
            samples,
            substeps,
            multiplicity: multiplicity.max(1),
            residual,
        })
    }

    pub fn model(&self) -> &Arc<HypersurfaceModel> {
        &self.model
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn multiplicity(&self) -> usize {
        self.multiplicity
    }

    pub fn with_multiplicity(mut self, m: usize) -> Self {
        self.multiplicity = m.max(1);
        self
    }

    /// Max-norm defect of the flow equation between consecutive samples,
    /// including the closing interval.
    pub fn residual(&self) -> f64 {
        self.residual
    }

    pub fn samples(&self) -> &[Vector] {
        &self.samples
    }

    pub fn initial(&self) -> &Vector {
        &self.samples[0]
    }

    /// Largest deviation of `H` from 1 along the stored trace.
    pub fn energy_defect(&self) -> f64 {
        self.samples
            .iter()
            .map(|y| (self.model.hamiltonian(y) - 1.0).abs())
            .fold(0.0, f64::max)
    }

    /// `y(t)` for any real `t` (periodic).
    pub fn eval(&self, t: f64) -> Vector {
        let dt = self.tau / TRACE_SAMPLES as f64;
        let s = t.rem_euclid(self.tau);
        let i = ((s / dt).floor() as usize).min(TRACE_SAMPLES - 1);
        let rest = s - i as f64 * dt;
        if rest <= 0.0 {
            return self.samples[i].clone();
        }
        let steps = ((self.substeps as f64 * rest / dt).ceil() as usize).max(1);
        flow(&self.model, &self.samples[i], rest, steps)
    }

    /// `y'(t) = J ∇H(y(t))`.
    pub fn velocity(&self, t: f64) -> Vector {
        vector_field(&self.model, &self.eval(t))
    }

    /// The orbit started at `y(s)`.
    pub fn shifted(&self, s: f64) -> Result<Self> {
        let dt = self.tau / TRACE_SAMPLES as f64;
        let samples = (0..TRACE_SAMPLES).map(|i| self.eval(s + i as f64 * dt)).collect();
        Self::from_samples(self.model.clone(), self.tau, samples, self.substeps, self.multiplicity)
    }

    /// `(P y, tau)`; a closed characteristic whenever `P` preserves `H`.
    pub fn mapped(&self, p: &Mat) -> Result<Self> {
        let samples = self.samples.iter().map(|y| p * y).collect();
        Self::from_samples(self.model.clone(), self.tau, samples, self.substeps, self.multiplicity)
    }

    /// Trace samples with their velocities, for Hermite interpolation.
    pub fn trace_with_velocity(&self) -> Vec<(Vector, Vector)> {
        self.samples
            .iter()
            .map(|y| (y.clone(), vector_field(&self.model, y)))
            .collect()
    }

    /// Smallest `d in 2..=max_d` for which `y(tau / d)` returns to `y(0)`
    /// within `tol`, if any.
    pub fn hidden_period(&self, max_d: usize, tol: f64) -> Option<usize> {
        (2..=max_d).find(|&d| {
            (0..4).all(|j| {
                let t = j as f64 * self.tau / 4.0;
                (self.eval(t + self.tau / d as f64) - self.eval(t)).amax() <= tol
            })
        })
    }

    /// Number of RK4 steps used per period.
    pub fn steps_per_period(&self) -> usize {
        self.substeps * TRACE_SAMPLES
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ShootingReport {
    pub iterations: usize,
    pub residual: f64,
}

/// Newton shooting for `phi_tau(y0) = y0`, `H(y0) = 1`, with a phase
/// condition against the initial guess; returns the corrected `(y0, tau)`.
pub fn polish(model: &HypersurfaceModel, y0: &Vector, tau: f64) -> Result<(Vector, f64, ShootingReport)> {
    let d = y0.len();
    let mut y = y0 / model.gauge(y0).max(1e-300);
    let mut tau = tau;
    let yref = y.clone();
    let fref = vector_field(model, &yref);
    let fref_n = fref.norm();
    let steps = step_count(model, &y, tau)?;
    let residual = |y: &Vector, tau: f64| -> Result<(Vector, Mat, Vector)> {
        let (end, g) = flow_linearized(model, y, tau, steps)?;
        let mut r = Vector::zeros(d + 2);
        r.rows_mut(0, d).copy_from(&(&end - y));
        r[d] = model.hamiltonian(y) - 1.0;
        r[d + 1] = (y - &yref).dot(&fref) / fref_n;
        Ok((r, g, end))
    };
    let (mut r, mut g, mut end) = residual(&y, tau)?;
    let mut iters = 0;
    while iters < SHOOTING_ITERS && r.amax() > SHOOTING_TOL {
        iters += 1;
        let mut jac = Mat::zeros(d + 2, d + 1);
        let mut top = g.clone();
        for i in 0..d {
            top[(i, i)] -= 1.0;
        }
        jac.view_mut((0, 0), (d, d)).copy_from(&top);
        jac.view_mut((0, d), (d, 1)).copy_from(&vector_field(model, &end));
        jac.view_mut((d, 0), (1, d)).copy_from(&model.ham_grad(&y).transpose());
        jac.view_mut((d + 1, 0), (1, d)).copy_from(&(&fref / fref_n).transpose());
        let svd = SVD::new(jac, true, true);
        let cutoff = 1e-12 * svd.singular_values.max();
        let step = svd
            .solve(&r, cutoff)
            .map_err(|e| Error::Convergence(format!("shooting solve: {e}")))?;
        let mut t = 1.0;
        loop {
            let ny = &y - step.rows(0, d) * t;
            let ntau = tau - step[d] * t;
            let (nr, ng, nend) = residual(&ny, ntau)?;
            if nr.norm() < r.norm() || t < 1e-3 {
                y = ny;
                tau = ntau;
                r = nr;
                g = ng;
                end = nend;
                break;
            }
            t *= 0.5;
        }
        if !(tau > 0.0) {
            return Err(Error::Convergence("shooting drove the period to zero".into()));
        }
    }
    let res = r.amax();
    if res > 1e-9 {
        return Err(Error::Convergence(format!("shooting residual {res:.2e} after {iters} steps")));
    }
    Ok((y, tau, ShootingReport { iterations: iters, residual: res }))
}

/// Linearized flow `Gamma(t) = d phi_t(y(0))` along one period of an orbit,
/// stored on the integration grid and refined by a partial RK4 step.
#[derive(Debug)]
struct FlowPath {
    model: Arc<HypersurfaceModel>,
    h: f64,
    nodes: Vec<(Vector, Mat)>,
}

impl FlowPath {
    fn new(orbit: &ClosedCharacteristic) -> Result<Self> {
        let model = orbit.model.clone();
        let steps = orbit.steps_per_period();
        let h = orbit.tau / steps as f64;
        let d = 2 * model.n();
        let mut nodes = Vec::with_capacity(steps + 1);
        let mut y = orbit.initial().clone();
        let mut g = Mat::identity(d, d);
        nodes.push((y.clone(), g.clone()));
        for _ in 0..steps {
            (y, g) = rk4_step_linearized(&model, &y, &g, h)?;
            nodes.push((y.clone(), g.clone()));
        }
        let defect = symplectic_defect(&g);
        if defect > 1e-9 {
            return Err(Error::NotSymplectic { defect, tol: 1e-9 });
        }
        Ok(Self { model, h, nodes })
    }

    fn locate(&self, t: f64) -> (usize, f64) {
        let last = self.nodes.len() - 1;
        let i = ((t / self.h).floor().max(0.0) as usize).min(last);
        (i, t - i as f64 * self.h)
    }

    fn point(&self, t: f64) -> Vector {
        let (i, rest) = self.locate(t);
        if rest.abs() == 0.0 {
            return self.nodes[i].0.clone();
        }
        rk4_step(&self.model, &self.nodes[i].0, rest)
    }
}

impl PathGenerator for FlowPath {
    fn dim(&self) -> usize {
        2 * self.model.n()
    }

    fn eval(&self, t: f64) -> Mat {
        let (i, rest) = self.locate(t);
        let (y, g) = &self.nodes[i];
        if rest.abs() == 0.0 {
            return g.clone();
        }
        rk4_step_linearized(&self.model, y, g, rest)
            .map(|(_, g)| g)
            .unwrap_or_else(|_| g.clone())
    }

    fn generator(&self, t: f64) -> Option<Mat> {
        self.model.ham_hess(&self.point(t)).ok()
    }
}

/// Certified positive path `gamma_y` on `[0, m tau]` generated by the
/// linearized flow; `gamma_y(m tau)` is the `m`-th power of the monodromy.
pub fn linearized_path(orbit: &ClosedCharacteristic, m: usize) -> Result<SymplecticPath> {
    if m == 0 {
        return Err(Error::ParameterOutOfRange("iterate count must be positive".into()));
    }
    let base = Arc::new(SymplecticPath::convex(Arc::new(FlowPath::new(orbit)?), orbit.tau)?);
    if m == 1 {
        return Ok(Arc::try_unwrap(base).unwrap_or_else(|a| (*a).clone()));
    }
    let d = 2 * orbit.model.n();
    base.iterate(&Mat::identity(d, d), m)
}

/// Monodromy `gamma_y(tau)`.
pub fn monodromy(orbit: &ClosedCharacteristic) -> Result<Mat> {
    let (_, g) = flow_linearized(&orbit.model, orbit.initial(), orbit.tau, orbit.steps_per_period())?;
    Ok(g)
}

/// Floquet multipliers of an orbit; hyperbolic means elliptic height 2.
pub fn floquet(orbit: &ClosedCharacteristic) -> Result<(SpectrumReport, bool)> {
    let spec = spectrum(&monodromy(orbit)?, &Tolerances::monodromy())?;
    let hyperbolic = spec.elliptic_height() == 2;
    Ok((spec, hyperbolic))
}

/// The `n` circles `y(t) = r_i (cos(alpha t / r_i^2) e_i + sin(alpha t / r_i^2) e_{n+i})`
/// of an ellipsoid with pairwise distinct radii, with periods `2 pi r_i^2 / alpha`.
pub fn known_orbits(model: &Arc<HypersurfaceModel>) -> Result<Vec<ClosedCharacteristic>> {
    if !model.is_ellipsoid() {
        return Err(Error::Config("closed-form orbits exist only for ellipsoids".into()));
    }
    let r = model.radii_sq();
    let n = model.n();
    for i in 0..n {
        for j in i + 1..n {
            if (r[i] - r[j]).abs() <= 1e-12 * r[i].max(r[j]) {
                return Err(Error::ParameterOutOfRange(format!(
                    "repeated radius {} gives a continuum of orbits",
                    r[i]
                )));
            }
        }
    }
    (0..n)
        .map(|i| {
            let tau = 2.0 * std::f64::consts::PI * r[i] / model.alpha();
            let dt = tau / TRACE_SAMPLES as f64;
            let w = model.alpha() / r[i];
            let samples = (0..TRACE_SAMPLES)
                .map(|s| {
                    let (sn, cs) = (w * dt * s as f64).sin_cos();
                    let mut y = Vector::zeros(2 * n);
                    y[i] = r[i].sqrt() * cs;
                    y[n + i] = r[i].sqrt() * sn;
                    y
                })
                .collect();
            let substeps = step_count(model, &Vector::from_fn(2 * n, |k, _| if k == i { r[i].sqrt() } else { 0.0 }), tau)?
                .div_ceil(TRACE_SAMPLES);
            ClosedCharacteristic::from_samples(model.clone(), tau, samples, substeps, 1)
        })
        .collect()
}
