//! Maslov-type omega-indices, P-indices, splitting numbers and iteration
//! data for positive symplectic paths.
//!
//! Crossings of `gamma(t)` with a target `T = omega P` are counted through the
//! Lagrangian-unitary representation: with `U_M` the unitary attached to the
//! graph of `M`, `W(t) = U_T^* U_{gamma(t)}` has eigenvalue `1` with
//! multiplicity `dim ker(gamma(t) - T)`. Along a positive path every
//! eigenphase of `W` increases, so the number of passes through phase `0`
//! equals the number of crossings counted with multiplicity.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use std::sync::Arc;

use crate::cyclic::CyclicSymmetry;
use crate::error::{Error, Result};
use crate::path::{convex_path_with_factors, SymplecticPath};
use crate::symplectic::{
    arg_2pi, nullity_omega, schur, spectrum, symplectic_inverse, to_complex, CMat, Mat, Tolerances,
};

/// Eigenphases within this distance of `0` at an end point belong to that
/// end point.
const PHASE_EDGE: f64 = 1e-9;
/// Bound on the eigenphases of an end point degeneracy whose nullity is
/// known from singular values; clustered eigenphases carry larger rounding.
const EDGE_BAND: f64 = 1e-6;
/// Relative singular value threshold for the degeneracy at the final time.
/// Strict, since near a Jordan block `|gamma - omega|` has a singular value
/// quadratic in the distance of `omega` from the spectrum.
const END_RANK_TOL: f64 = 1e-10;
/// Located crossings closer than this fraction of the base period are one
/// crossing, matching the rank tolerance used to confirm multiplicities.
const CROSSING_MERGE: f64 = 1e-7;
/// Largest accepted change of `arg det W` over one step.
const MAX_STEP: f64 = PI / 4.0;
/// Allowed backward motion of `arg det W` from rounding.
const MONOTONE_SLACK: f64 = 1e-10;
/// Crossing times are located to this fraction of the base period.
const LOCATE_FRACTION: f64 = 1e-10;
/// Relative singular value threshold used to confirm crossing multiplicities.
const CROSSING_RANK_TOL: f64 = 1e-7;
/// Circle eigenvalues closer than this (in angle) are one point of the spectrum.
const ANGLE_MERGE: f64 = 1e-5;
const STEPS_PER_PERIOD: usize = 64;
const SPLITTING_EPS: [f64; 3] = [1e-2, 1e-3, 1e-4];

/// Unitary attached to the graph of `M = [[a, b], [c, d]]`.
pub fn lagrangian_unitary(m: &CMat) -> Result<CMat> {
    let n = m.nrows() / 2;
    let a = m.view((0, 0), (n, n));
    let b = m.view((0, n), (n, n));
    let c = m.view((n, 0), (n, n));
    let d = m.view((n, n), (n, n));
    let i = Complex64::new(0.0, 1.0);
    let half = Complex64::new(0.5, 0.0);
    let ah = (a + d + (b - c) * i) * half;
    let bh = (a - d - (b + c) * i) * half;
    let ch = (a - d + (b + c) * i) * half;
    let dh = (a + d - (b - c) * i) * half;
    let ai = ah
        .try_inverse()
        .ok_or_else(|| Error::Convergence("graph unitary is singular".into()))?;
    let mut u = CMat::zeros(2 * n, 2 * n);
    u.view_mut((0, 0), (n, n)).copy_from(&(-(&ai * &bh)));
    u.view_mut((0, n), (n, n)).copy_from(&ai);
    u.view_mut((n, 0), (n, n)).copy_from(&(&dh - &ch * &ai * &bh));
    u.view_mut((n, n), (n, n)).copy_from(&(&ch * &ai));
    Ok(u)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Crossing {
    pub time: f64,
    pub multiplicity: usize,
}

#[derive(Clone, Debug)]
pub struct PassCount {
    /// Passes in the open interval `(0, tau)`.
    pub total: i64,
    /// Passes in `(0, c)` for each requested checkpoint `c`.
    pub at_checkpoints: Vec<i64>,
    pub crossings: Vec<Crossing>,
}

#[derive(Clone, Debug)]
struct Node {
    t: f64,
    det: Complex64,
    phases: Vec<f64>,
}

#[derive(Clone, Copy, PartialEq)]
enum Repr {
    Start,
    Interior,
    End,
}

impl Node {
    /// Sum of eigenphases lifted to `[0, 2pi)`. The `edge` phases nearest
    /// `0` form the degeneracy at an end point: they count as `0` at the
    /// start and as `2pi` at the end. At the end any phase within
    /// `PHASE_EDGE` of `0` also counts as `2pi`.
    fn phase_sum(&self, repr: Repr, edge: usize) -> Result<f64> {
        let lift = |p: f64| if p < 0.0 { p + 2.0 * PI } else { p };
        if repr == Repr::Interior {
            return Ok(self.phases.iter().map(|&p| lift(p)).sum());
        }
        let mut order: Vec<usize> = (0..self.phases.len()).collect();
        order.sort_by(|&a, &b| self.phases[a].abs().total_cmp(&self.phases[b].abs()));
        if edge > order.len() || (edge > 0 && self.phases[order[edge - 1]].abs() > EDGE_BAND) {
            return Err(Error::Convergence(format!(
                "nullity {edge} at t = {} not matched by eigenphases near 0",
                self.t
            )));
        }
        Ok(order
            .iter()
            .enumerate()
            .map(|(rank, &i)| {
                let p = self.phases[i];
                match repr {
                    Repr::Start if rank < edge => p,
                    Repr::Start => lift(p),
                    _ if rank < edge || p <= PHASE_EDGE => p + 2.0 * PI,
                    _ => p,
                }
            })
            .sum())
    }
}

fn arg_ratio(b: Complex64, a: Complex64) -> f64 {
    (b * a.conj()).arg()
}

fn to_count(x: f64) -> Result<i64> {
    let r = x.round();
    if (x - r).abs() > 1e-6 {
        return Err(Error::Convergence(format!("non-integral eigenphase pass count {x}")));
    }
    Ok(r as i64)
}

struct Tracker<'a> {
    path: &'a SymplecticPath,
    target: CMat,
    ut_adj: CMat,
    floor: f64,
}

impl<'a> Tracker<'a> {
    fn new(path: &'a SymplecticPath, target: &CMat, period: f64) -> Result<Self> {
        let ut_adj = lagrangian_unitary(target)?.adjoint();
        Ok(Self {
            path,
            target: target.clone(),
            ut_adj,
            floor: LOCATE_FRACTION * period,
        })
    }

    fn node(&self, t: f64) -> Result<Node> {
        let g = to_complex(&self.path.at(t));
        let w = &self.ut_adj * lagrangian_unitary(&g)?;
        let det = w.determinant();
        let det = det / det.norm();
        let ev = schur(&w)?
            .eigenvalues()
            .ok_or(Error::EigenSolver)?;
        let phases = ev.iter().map(|z| z.arg()).collect();
        Ok(Node { t, det, phases })
    }

    /// Subdivides `[a, b]` until each step changes `arg det W` by a
    /// validated amount below `MAX_STEP`.
    fn refine(&self, a: &Node, b: Node, out: &mut Vec<(Node, f64)>) -> Result<()> {
        let mut stack = vec![b];
        let mut left = a.clone();
        while let Some(right) = stack.pop() {
            let d = arg_ratio(right.det, left.det);
            let mid = self.node(0.5 * (left.t + right.t))?;
            let d1 = arg_ratio(mid.det, left.det);
            let d2 = arg_ratio(right.det, mid.det);
            let ok = d.abs() <= MAX_STEP
                && d1 >= -MONOTONE_SLACK
                && d2 >= -MONOTONE_SLACK
                && (d1 + d2 - d).abs() <= 1e-8;
            if ok {
                out.push((mid.clone(), d1));
                out.push((right, d2));
                left = out.last().map(|x| x.0.clone()).unwrap_or(mid);
            } else {
                if right.t - left.t < 1e-3 * self.floor {
                    return Err(Error::Convergence(format!(
                        "eigenphase tracking failed near t = {}",
                        left.t
                    )));
                }
                stack.push(right);
                stack.push(mid);
            }
        }
        Ok(())
    }

    fn locate(&self, a: &Node, ra: (Repr, usize), b: &Node, rb: (Repr, usize), count: i64, out: &mut Vec<Crossing>) -> Result<()> {
        if count <= 0 {
            return Ok(());
        }
        if b.t - a.t <= self.floor {
            out.push(Crossing {
                time: 0.5 * (a.t + b.t),
                multiplicity: count as usize,
            });
            return Ok(());
        }
        let m = self.node(0.5 * (a.t + b.t))?;
        let d1 = arg_ratio(m.det, a.det);
        let c1 = to_count((a.phase_sum(ra.0, ra.1)? + d1 - m.phase_sum(Repr::Interior, 0)?) / (2.0 * PI))?;
        let c1 = c1.clamp(0, count);
        self.locate(a, ra, &m, (Repr::Interior, 0), c1, out)?;
        self.locate(&m, (Repr::Interior, 0), b, rb, count - c1, out)
    }

    /// `dim ker(gamma(t) - target)` at relative singular value tolerance `tol`.
    fn degeneracy(&self, t: f64, tol: f64) -> usize {
        let g = to_complex(&self.path.at(t));
        let scale = g.norm().max(1.0);
        let sv = (g - &self.target).singular_values();
        sv.iter().filter(|&&s| s <= tol * scale).count()
    }

    /// Smallest `k`-th singular value of `gamma(t) - target` relative to scale.
    fn gap(&self, t: f64, k: usize) -> f64 {
        let g = to_complex(&self.path.at(t));
        let scale = g.norm().max(1.0);
        let mut sv: Vec<f64> = (g - &self.target).singular_values().iter().copied().collect();
        sv.sort_by(f64::total_cmp);
        sv[(k.max(1) - 1).min(sv.len() - 1)] / scale
    }

    /// Eigenphases of a Jordan-type crossing carry rounding of order
    /// `sqrt(eps)`, so the located time is sharpened by a golden-section
    /// search on the singular value gap within the merge window.
    fn sharpen(&self, c: &Crossing) -> f64 {
        let w = CROSSING_MERGE * self.floor / LOCATE_FRACTION;
        let tau = self.path.tau();
        let (mut a, mut b) = ((c.time - w).max(0.0), (c.time + w).min(tau));
        let r = 0.5 * (5f64.sqrt() - 1.0);
        let mut x1 = b - r * (b - a);
        let mut x2 = a + r * (b - a);
        let (mut f1, mut f2) = (self.gap(x1, c.multiplicity), self.gap(x2, c.multiplicity));
        for _ in 0..60 {
            if f1 <= f2 {
                b = x2;
                x2 = x1;
                f2 = f1;
                x1 = b - r * (b - a);
                f1 = self.gap(x1, c.multiplicity);
            } else {
                a = x1;
                x1 = x2;
                f1 = f2;
                x2 = a + r * (b - a);
                f2 = self.gap(x2, c.multiplicity);
            }
        }
        let best = 0.5 * (a + b);
        if self.gap(best, c.multiplicity) < self.gap(c.time, c.multiplicity) {
            best
        } else {
            c.time
        }
    }

    fn confirm(&self, c: &mut Crossing) -> Result<()> {
        c.time = self.sharpen(c);
        let nullity = self.degeneracy(c.time, CROSSING_RANK_TOL);
        if nullity != c.multiplicity {
            return Err(Error::UnresolvedCrossing {
                time: c.time,
                passes: c.multiplicity as i64,
                nullity,
            });
        }
        Ok(())
    }
}

/// Counts crossings of `path` with `target` in `(0, tau)` and in `(0, c)` for
/// each checkpoint. `period` sets the sampling density and the localization
/// resolution.
pub fn count_passes(path: &SymplecticPath, target: &CMat, checkpoints: &[f64], period: f64) -> Result<PassCount> {
    path.require_convex()?;
    let tau = path.tau();
    let tr = Tracker::new(path, target, period)?;
    let steps = ((tau / period).ceil() as usize).max(1) * STEPS_PER_PERIOD;
    let mut grid: Vec<f64> = (0..=steps).map(|i| tau * i as f64 / steps as f64).collect();
    grid.extend(checkpoints.iter().copied().filter(|&c| c > 0.0 && c < tau));
    grid.sort_by(f64::total_cmp);
    grid.dedup_by(|a, b| (*a - *b).abs() <= 1e-14 * tau);

    let first = tr.node(0.0)?;
    let mut nodes: Vec<(Node, f64)> = vec![(first, 0.0)];
    for &t in &grid[1..] {
        let b = tr.node(t)?;
        let a = nodes.last().map(|x| x.0.clone()).expect("nonempty");
        tr.refine(&a, b, &mut nodes)?;
    }

    let last = nodes.len() - 1;
    let start_edge = tr.degeneracy(0.0, CROSSING_RANK_TOL);
    let end_edge = tr.degeneracy(tau, END_RANK_TOL);
    let repr = |i: usize| {
        if i == 0 {
            (Repr::Start, start_edge)
        } else if i == last {
            (Repr::End, end_edge)
        } else {
            (Repr::Interior, 0)
        }
    };
    let start_sum = nodes[0].0.phase_sum(Repr::Start, start_edge)?;

    let mut cum = 0.0;
    let mut cum_at = Vec::with_capacity(nodes.len());
    cum_at.push(0.0);
    for (_, d) in nodes.iter().skip(1) {
        cum += d;
        cum_at.push(cum);
    }
    let total = to_count((start_sum + cum - nodes[last].0.phase_sum(Repr::End, end_edge)?) / (2.0 * PI))?;

    let mut at_checkpoints = Vec::with_capacity(checkpoints.len());
    for &c in checkpoints {
        let idx = nodes
            .iter()
            .enumerate()
            .min_by(|x, y| (x.1 .0.t - c).abs().total_cmp(&(y.1 .0.t - c).abs()))
            .map(|x| x.0)
            .unwrap_or(0);
        if idx == 0 {
            at_checkpoints.push(0);
            continue;
        }
        let v = to_count((start_sum + cum_at[idx] - nodes[idx].0.phase_sum(Repr::End, 0)?) / (2.0 * PI))?;
        at_checkpoints.push(v);
    }

    let mut raw = Vec::new();
    for i in 0..last {
        let (a, b) = (&nodes[i].0, &nodes[i + 1].0);
        let d = nodes[i + 1].1;
        let (ra, rb) = (repr(i), repr(i + 1));
        let c = to_count((a.phase_sum(ra.0, ra.1)? + d - b.phase_sum(rb.0, rb.1)?) / (2.0 * PI))?;
        if c < 0 {
            return Err(Error::Convergence(format!("negative pass count near t = {}", a.t)));
        }
        tr.locate(a, ra, b, rb, c, &mut raw)?;
    }

    let mut crossings: Vec<Crossing> = Vec::new();
    for c in raw {
        match crossings.last_mut() {
            Some(prev) if c.time - prev.time <= CROSSING_MERGE * period => {
                let w = prev.multiplicity as f64;
                let total = w + c.multiplicity as f64;
                prev.time = (prev.time * w + c.time * c.multiplicity as f64) / total;
                prev.multiplicity += c.multiplicity;
            }
            _ => crossings.push(c),
        }
    }
    for c in &mut crossings {
        tr.confirm(c)?;
    }
    let located: i64 = crossings.iter().map(|c| c.multiplicity as i64).sum();
    if located != total {
        return Err(Error::Convergence(format!("located {located} of {total} crossings")));
    }
    Ok(PassCount { total, at_checkpoints, crossings })
}

fn check_unit(omega: Complex64) -> Result<()> {
    if ((omega.norm() - 1.0).abs()) > 1e-12 {
        return Err(Error::ParameterOutOfRange(format!("|omega| = {} != 1", omega.norm())));
    }
    Ok(())
}

fn is_one(omega: Complex64) -> bool {
    (omega - 1.0).norm() <= 1e-12
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct OmegaIndex {
    pub index: i64,
    pub nullity: usize,
    pub crossings: Vec<Crossing>,
}

/// `i_omega(gamma)` and `nu_omega(gamma)` for a positive path.
pub fn omega_index(path: &SymplecticPath, omega: Complex64) -> Result<OmegaIndex> {
    check_unit(omega)?;
    let n = path.n();
    let d = 2 * n;
    let target = CMat::identity(d, d) * omega;
    let pc = count_passes(path, &target, &[], path.tau())?;
    let offset = if is_one(omega) { n as i64 } else { 0 };
    Ok(OmegaIndex {
        index: offset + pc.total,
        nullity: nullity_omega(&path.end(), omega, Tolerances::default().rank),
        crossings: pc.crossings,
    })
}

/// `dim ker(gamma(tau) - omega P)`.
pub fn p_nullity(path: &SymplecticPath, p: &Mat, omega: Complex64) -> usize {
    let k = symplectic_inverse(p) * path.end();
    nullity_omega(&k, omega, Tolerances::default().rank)
}

/// `i^P_omega(gamma) = nu_omega(P^{-1}) + sum_{0 < t < tau} dim ker(gamma(t) - omega P)`.
pub fn p_omega_index(path: &SymplecticPath, p: &Mat, omega: Complex64) -> Result<OmegaIndex> {
    check_unit(omega)?;
    let d = 2 * path.n();
    if p.nrows() != d || p.ncols() != d {
        return Err(Error::DimensionMismatch { expected: d, found: p.nrows() });
    }
    let target = to_complex(p) * omega;
    let pc = count_passes(path, &target, &[], path.tau())?;
    let start = nullity_omega(&symplectic_inverse(p), omega, Tolerances::default().rank) as i64;
    Ok(OmegaIndex {
        index: start + pc.total,
        nullity: p_nullity(path, p, omega),
        crossings: pc.crossings,
    })
}

fn stabilize<F>(mut at: F) -> Result<(i64, i64)>
where
    F: FnMut(f64) -> Result<(i64, i64)>,
{
    let mut seen: Vec<(i64, i64)> = Vec::new();
    for eps in SPLITTING_EPS {
        let v = at(eps)?;
        if seen.last() == Some(&v) {
            return Ok(v);
        }
        seen.push(v);
    }
    Err(Error::SplittingUnstable(seen))
}

/// `(S+, S-)` at `omega`, from `i_{omega e^{±i eps}} - i_omega` with
/// shrinking `eps` until two consecutive values agree.
pub fn splitting_numbers(path: &SymplecticPath, omega: Complex64) -> Result<(i64, i64)> {
    let base = omega_index(path, omega)?.index;
    stabilize(|eps| {
        let plus = omega_index(path, omega * Complex64::from_polar(1.0, eps))?.index;
        let minus = omega_index(path, omega * Complex64::from_polar(1.0, -eps))?.index;
        Ok((plus - base, minus - base))
    })
}

/// P-splitting numbers `(S+, S-)` at `omega`.
pub fn p_splitting_numbers(path: &SymplecticPath, p: &Mat, omega: Complex64) -> Result<(i64, i64)> {
    let base = p_omega_index(path, p, omega)?.index;
    stabilize(|eps| {
        let plus = p_omega_index(path, p, omega * Complex64::from_polar(1.0, eps))?.index;
        let minus = p_omega_index(path, p, omega * Complex64::from_polar(1.0, -eps))?.index;
        Ok((plus - base, minus - base))
    })
}

/// Splitting numbers of the end points `P^{-1} M` and `P^{-1}`, computed on
/// auxiliary positive paths; their difference equals the P-splitting
/// numbers of `path`.
pub fn endpoint_splitting_difference(
    path: &Arc<SymplecticPath>,
    sym: &CyclicSymmetry,
    omega: Complex64,
) -> Result<(i64, i64)> {
    let log = sym.log_inverse();
    let tau = path.tau();
    let to_km = convex_path_with_factors(vec![log.clone()], Some(path.clone()), tau)?;
    let to_pinv = convex_path_with_factors(vec![log], None, tau)?;
    let a = splitting_numbers(&to_km, omega)?;
    let b = splitting_numbers(&to_pinv, omega)?;
    Ok((a.0 - b.0, a.1 - b.1))
}

/// Mean index from the splitting numbers of the end point:
/// `i_1 + S+(1) + sum_{theta in (0, 2pi)} (theta/pi - 1) S-(e^{i theta})`.
pub fn mean_index(path: &SymplecticPath) -> Result<f64> {
    let i1 = omega_index(path, Complex64::new(1.0, 0.0))?.index;
    let (s_plus, _) = splitting_numbers(path, Complex64::new(1.0, 0.0))?;
    let spec = spectrum(&path.end(), &Tolerances::monodromy())?;
    // Jordan blocks split by O(sqrt(error)); merge angles closer than
    // ANGLE_MERGE and treat those near 0 as the eigenvalue 1.
    let mut angles: Vec<f64> = spec
        .unit_circle
        .iter()
        .map(|c| arg_2pi(c.value))
        .filter(|&t| t > ANGLE_MERGE && t < 2.0 * PI - ANGLE_MERGE)
        .collect();
    angles.sort_by(f64::total_cmp);
    let mut groups: Vec<Vec<f64>> = Vec::new();
    for t in angles {
        match groups.last_mut() {
            Some(g) if t - g[g.len() - 1] <= ANGLE_MERGE => g.push(t),
            _ => groups.push(vec![t]),
        }
    }
    let mut acc = (i1 + s_plus) as f64;
    for g in groups {
        let theta = g.iter().sum::<f64>() / g.len() as f64;
        let (_, s_minus) = splitting_numbers(path, Complex64::from_polar(1.0, theta))?;
        acc += (theta / PI - 1.0) * s_minus as f64;
    }
    Ok(acc)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct IterateIndex {
    pub m: usize,
    pub index: i64,
    pub nullity: usize,
}

/// `(i(gamma^m), nu(gamma^m))` for `m = 1..=m_max`, from one sweep of the
/// `m_max`-fold iterate.
pub fn index_iterates(path: &Arc<SymplecticPath>, m_max: usize) -> Result<Vec<IterateIndex>> {
    let d = 2 * path.n();
    let n = path.n() as i64;
    let id = Mat::identity(d, d);
    let it = path.iterate(&id, m_max.max(1))?;
    let tau = path.tau();
    let cps: Vec<f64> = (1..=m_max).map(|m| m as f64 * tau).collect();
    let pc = count_passes(&it, &CMat::identity(d, d), &cps, tau)?;
    let rank = Tolerances::default().rank;
    let mono = path.end();
    let mut pow = id.clone();
    let mut out = Vec::with_capacity(m_max);
    for m in 1..=m_max {
        pow = &pow * &mono;
        let passes = if m == m_max { pc.total } else { pc.at_checkpoints[m - 1] };
        out.push(IterateIndex {
            m,
            index: n + passes,
            nullity: nullity_omega(&pow, Complex64::new(1.0, 0.0), rank),
        });
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BottCheck {
    pub lhs_index: i64,
    pub rhs_index: i64,
    pub lhs_nullity: usize,
    pub rhs_nullity: usize,
}

impl BottCheck {
    pub fn holds(&self) -> bool {
        self.lhs_index == self.rhs_index && self.lhs_nullity == self.rhs_nullity
    }
}

/// Compares `i^{P^m}_z(gamma_P^m)` with `sum_{omega^m = z} i^P_omega(gamma)`,
/// and likewise for nullities.
pub fn bott_check(path: &Arc<SymplecticPath>, p: &Mat, m: usize, z: Complex64) -> Result<BottCheck> {
    check_unit(z)?;
    let it = path.iterate(p, m)?;
    let mut pm = Mat::identity(p.nrows(), p.ncols());
    for _ in 0..m {
        pm = &pm * p;
    }
    let lhs = p_omega_index(&it, &pm, z)?;
    let mut rhs_index = 0;
    let mut rhs_nullity = 0;
    let base = z.arg();
    for j in 0..m {
        let omega = Complex64::from_polar(1.0, (base + 2.0 * PI * j as f64) / m as f64);
        let r = p_omega_index(path, p, omega)?;
        rhs_index += r.index;
        rhs_nullity += r.nullity;
    }
    Ok(BottCheck {
        lhs_index: lhs.index,
        rhs_index,
        lhs_nullity: lhs.nullity,
        rhs_nullity,
    })
}
