//! Multi-start search for closed characteristics: L-BFGS on the dual
//! action, extraction of `(tau, y)` from critical loops and shooting polish.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::VecDeque;
use std::sync::Arc;

use crate::dual::{critical_solution, DualAction, DualLoop, DEFAULT_MODES};
use crate::error::{Error, Result};
use crate::flow::{polish, ClosedCharacteristic};
use crate::model::{HypersurfaceModel, Vector};
use crate::symmetry::geometrically_distinct;
use crate::symplectic::Mat;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MinimizeOptions {
    /// Bound on the `L^2` norm of `Φ'(u)`.
    pub grad_tol: f64,
    pub max_iter: usize,
    pub memory: usize,
}

impl Default for MinimizeOptions {
    fn default() -> Self {
        Self { grad_tol: 1e-9, max_iter: 4000, memory: 12 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MinimizeReport {
    pub value: f64,
    pub grad_norm: f64,
    pub iterations: usize,
}

/// Pointwise projector onto a subspace of `R^{2n}` containing the search.
fn project(g: &DualLoop, proj: Option<&Mat>) -> DualLoop {
    match proj {
        Some(p) => g.map(p),
        None => g.clone(),
    }
}

/// L-BFGS with backtracking; steps are accepted on the Armijo condition or,
/// once `Φ` stalls at rounding level, on the approximate Wolfe condition
/// `(2 delta - 1) φ'(0) >= φ'(a) >= sigma φ'(0)`.
pub fn minimize(
    action: &DualAction,
    start: &DualLoop,
    projector: Option<&Mat>,
    opts: &MinimizeOptions,
) -> Result<(DualLoop, MinimizeReport)> {
    const C1: f64 = 1e-4;
    const SIGMA: f64 = 0.9;
    const DELTA: f64 = 0.1;
    let mut u = project(start, projector);
    let (mut f, g0) = action.value_and_gradient(&u)?;
    let mut g = project(&g0, projector);
    let mut hist: VecDeque<(Mat, Mat, f64)> = VecDeque::new();
    let mut iter = 0;
    let mut failures = 0;
    loop {
        let gn = DualAction::gradient_norm(&g);
        if gn <= opts.grad_tol {
            break;
        }
        if iter >= opts.max_iter {
            return Err(Error::Convergence(format!("iteration cap {} reached, |grad| = {gn:.3e}", opts.max_iter)));
        }
        iter += 1;

        // Two-loop recursion.
        let mut q = g.coeffs().clone();
        let mut alphas = Vec::with_capacity(hist.len());
        for (s, y, rho) in hist.iter().rev() {
            let a = rho * s.dot(&q);
            q -= y * a;
            alphas.push(a);
        }
        if let Some((s, y, _)) = hist.back() {
            q *= s.dot(y) / y.dot(y);
        } else {
            q *= (0.1 / gn).min(1.0);
        }
        for ((s, y, rho), a) in hist.iter().zip(alphas.iter().rev()) {
            let b = rho * y.dot(&q);
            q += s * (a - b);
        }
        let mut dir = -q;
        let mut slope = dir.dot(g.coeffs());
        if !(slope < 0.0) {
            hist.clear();
            dir = -g.coeffs().clone() * (0.1 / gn).min(1.0);
            slope = dir.dot(g.coeffs());
        }

        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..40 {
            let cand = DualLoop::from_coeffs(u.coeffs() + &dir * step)?;
            let (fc, gc) = match action.value_and_gradient(&cand) {
                Ok(v) => v,
                Err(_) => {
                    step *= 0.5;
                    continue;
                }
            };
            let gc = project(&gc, projector);
            let dslope = dir.dot(gc.coeffs());
            let armijo = fc <= f + C1 * step * slope;
            let approx_wolfe = fc <= f + 1e-12 * f.abs() && dslope >= SIGMA * slope && dslope <= (2.0 * DELTA - 1.0) * slope;
            if armijo || approx_wolfe {
                accepted = Some((cand, fc, gc));
                break;
            }
            step *= 0.5;
        }
        match accepted {
            Some((cand, fc, gc)) => {
                failures = 0;
                let s = cand.coeffs() - u.coeffs();
                let y = gc.coeffs() - g.coeffs();
                let sy = s.dot(&y);
                if sy > 1e-14 * s.norm() * y.norm() {
                    hist.push_back((s, y, 1.0 / sy));
                    if hist.len() > opts.memory {
                        hist.pop_front();
                    }
                }
                u = cand;
                f = fc;
                g = gc;
            }
            None => {
                failures += 1;
                hist.clear();
                if failures >= 3 {
                    let gn = DualAction::gradient_norm(&g);
                    return Err(Error::Convergence(format!("line search stalled at |grad| = {gn:.3e}")));
                }
            }
        }
    }
    Ok((
        u,
        MinimizeReport { value: f, grad_norm: DualAction::gradient_norm(&g), iterations: iter },
    ))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExtractionReport {
    /// Energy `h = H(x_u)`.
    pub energy: f64,
    /// Largest relative deviation of `H(x_u)` from `h` at the nodes.
    pub energy_spread: f64,
    pub multiplicity: usize,
    pub shooting_iterations: usize,
}

/// Turns a critical loop into a closed characteristic: rescale `x_u`,
/// detect the multiplicity from the Fourier support and polish by shooting.
pub fn extract_orbit(action: &DualAction, u: &DualLoop) -> Result<(ClosedCharacteristic, ExtractionReport)> {
    let model = action.model();
    let alpha = model.alpha();
    let xs = critical_solution(action, u)?;
    let energies: Vec<f64> = xs.column_iter().map(|c| model.hamiltonian(&c.into_owned())).collect();
    let h = energies.iter().sum::<f64>() / energies.len() as f64;
    if !(h > 0.0) {
        return Err(Error::Convergence("critical loop has zero energy".into()));
    }
    let spread = energies.iter().map(|e| (e - h).abs()).fold(0.0, f64::max) / h;
    let m = u.frequency_gcd(1e-6);
    if m == 0 {
        return Err(Error::Convergence("critical loop is zero".into()));
    }
    let tau_guess = h.powf((alpha - 2.0) / alpha) / m as f64;
    let y0: Vector = xs.column(0).into_owned() * h.powf(-1.0 / alpha);
    let (y0, tau, shoot) = polish(model, &y0, tau_guess)?;
    let mut orbit = ClosedCharacteristic::from_initial(model.clone(), &y0, tau, m)?;
    let diam = model.diameter();
    if let Some(d) = orbit.hidden_period(12, 1e-6 * diam) {
        return Err(Error::Convergence(format!(
            "ambiguous minimal period: tau / {d} also closes the orbit (multiplicity {m})"
        )));
    }
    if orbit.residual() > ORBIT_TOL || orbit.energy_defect() > ORBIT_TOL {
        return Err(Error::Certification(format!(
            "orbit residual {:.2e}, energy defect {:.2e}",
            orbit.residual(),
            orbit.energy_defect()
        )));
    }
    orbit = orbit.with_multiplicity(m);
    Ok((
        orbit,
        ExtractionReport { energy: h, energy_spread: spread, multiplicity: m, shooting_iterations: shoot.iterations },
    ))
}

/// Residual bound for accepted orbits.
pub const ORBIT_TOL: f64 = 1e-8;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SearchOptions {
    pub starts: usize,
    pub seed: u64,
    pub modes: usize,
    pub minimize: MinimizeOptions,
    /// Re-seed with `P^l u` for every distinct critical loop found.
    pub seed_p_images: bool,
}

impl Default for SearchOptions {
    fn default() -> Self {
        Self {
            starts: 20,
            seed: 42,
            modes: DEFAULT_MODES,
            minimize: MinimizeOptions::default(),
            seed_p_images: true,
        }
    }
}

/// Where a start was drawn and how it ended.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StartReport {
    pub index: usize,
    /// `None` for the full loop space, `Some(i)` for loops in the `i`-th
    /// coordinate plane (fixed space of a model isotropy).
    pub subspace: Option<usize>,
    pub outcome: StartOutcome,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum StartOutcome {
    Orbit { orbit: usize, value: f64, iterations: usize, tau: f64, multiplicity: usize },
    Failed { reason: String },
}

#[derive(Clone, Debug)]
pub struct FoundOrbit {
    pub orbit: ClosedCharacteristic,
    pub critical_loop: DualLoop,
    pub value: f64,
}

#[derive(Clone, Debug)]
pub struct OrbitSearch {
    pub orbits: Vec<FoundOrbit>,
    pub starts: Vec<StartReport>,
}

struct Attempt {
    subspace: Option<usize>,
    result: Result<(ClosedCharacteristic, DualLoop, MinimizeReport)>,
}

fn run_start(action: &DualAction, start: &DualLoop, proj: Option<&Mat>, opts: &MinimizeOptions) -> Result<(ClosedCharacteristic, DualLoop, MinimizeReport)> {
    let (u, rep) = minimize(action, start, proj, opts)?;
    if !(rep.value < 0.0) {
        return Err(Error::Convergence("converged to the zero loop".into()));
    }
    let (orbit, _) = extract_orbit(action, &u)?;
    Ok((orbit, u, rep))
}

/// Multi-start minimization. Start `i` uses its own RNG stream; starts with
/// `i mod (n + 1) = j > 0` are confined to the fixed space of the `j-1`-th
/// plane isotropy, where the symmetric criticality principle applies.
pub fn find_orbits(model: &Arc<HypersurfaceModel>, opts: &SearchOptions) -> Result<OrbitSearch> {
    let action = DualAction::new(model.clone(), opts.modes)?;
    let n = model.n();
    let dim = 2 * n;
    let projectors: Vec<Mat> = (0..n)
        .map(|i| {
            let mut p = Mat::zeros(dim, dim);
            p[(i, i)] = 1.0;
            p[(n + i, n + i)] = 1.0;
            p
        })
        .collect();
    let attempts: Vec<Attempt> = (0..opts.starts)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
            rng.set_stream(i as u64);
            let sub = match i % (n + 1) {
                0 => None,
                j => Some(j - 1),
            };
            let proj = sub.map(|j| &projectors[j]);
            let start = project(&DualLoop::random(dim, opts.modes, 3, 0.3, &mut rng), proj);
            Attempt { subspace: sub, result: run_start(&action, &start, proj, &opts.minimize) }
        })
        .collect();

    let mut found: Vec<FoundOrbit> = Vec::new();
    let mut reports = Vec::with_capacity(attempts.len());
    for (i, a) in attempts.into_iter().enumerate() {
        let outcome = match a.result {
            Ok((orbit, u, rep)) => {
                let idx = merge(&mut found, orbit.clone(), u, rep.value);
                StartOutcome::Orbit {
                    orbit: idx,
                    value: rep.value,
                    iterations: rep.iterations,
                    tau: orbit.tau(),
                    multiplicity: orbit.multiplicity(),
                }
            }
            Err(e) => StartOutcome::Failed { reason: e.to_string() },
        };
        reports.push(StartReport { index: i, subspace: a.subspace, outcome });
    }

    if opts.seed_p_images {
        let p = model.symmetry().matrix().clone();
        let seeds: Vec<DualLoop> = found.iter().map(|f| f.critical_loop.map(&p)).collect();
        let images: Vec<Result<(ClosedCharacteristic, DualLoop, MinimizeReport)>> = seeds
            .par_iter()
            .map(|s| run_start(&action, s, None, &opts.minimize))
            .collect();
        for (j, r) in images.into_iter().enumerate() {
            let index = opts.starts + j;
            let outcome = match r {
                Ok((orbit, u, rep)) => {
                    let idx = merge(&mut found, orbit.clone(), u, rep.value);
                    StartOutcome::Orbit {
                        orbit: idx,
                        value: rep.value,
                        iterations: rep.iterations,
                        tau: orbit.tau(),
                        multiplicity: orbit.multiplicity(),
                    }
                }
                Err(e) => StartOutcome::Failed { reason: e.to_string() },
            };
            reports.push(StartReport { index, subspace: None, outcome });
        }
    }
    Ok(OrbitSearch { orbits: found, starts: reports })
}

/// Adds an orbit unless its trace is already present; returns its index.
fn merge(found: &mut Vec<FoundOrbit>, orbit: ClosedCharacteristic, u: DualLoop, value: f64) -> usize {
    let tol = crate::symmetry::DIST_TOL_REL * orbit.model().diameter();
    if let Some(i) = found.iter().position(|f| !geometrically_distinct(&f.orbit, &orbit, tol)) {
        return i;
    }
    found.push(FoundOrbit { orbit, critical_loop: u, value });
    found.len() - 1
}
