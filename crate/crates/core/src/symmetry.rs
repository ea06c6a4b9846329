//! Orbit classification under the symmetry `P`: trace distance, P-cyclic
//! detection and the census partition.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cyclic::CyclicSymmetry;
use crate::error::{Error, Result};
use crate::flow::{ClosedCharacteristic, TRACE_SAMPLES};
use crate::model::Vector;
use crate::symplectic::Mat;

/// Traces closer than this times the model diameter are the same.
pub const DIST_TOL_REL: f64 = 1e-4;
/// Tolerance (times the diameter) for `y(s) = P y(0)` and the shift identity.
pub const MATCH_TOL_REL: f64 = 1e-6;
/// Periods agreeing to this relative tolerance may belong to one trace.
const PERIOD_TOL_REL: f64 = 1e-6;
const COARSE_STRIDE: usize = 8;

/// Point on the Hermite cubic between samples `i` and `i + 1`.
fn hermite(trace: &[(Vector, Vector)], dt: f64, i: usize, s: f64) -> Vector {
    let n = trace.len();
    let (p0, v0) = &trace[i % n];
    let (p1, v1) = &trace[(i + 1) % n];
    let s2 = s * s;
    let s3 = s2 * s;
    p0 * (2.0 * s3 - 3.0 * s2 + 1.0) + v0 * (dt * (s3 - 2.0 * s2 + s)) + p1 * (-2.0 * s3 + 3.0 * s2) + v1 * (dt * (s3 - s2))
}

fn golden_min<F: Fn(f64) -> f64>(f: F, mut a: f64, mut b: f64, iters: usize) -> (f64, f64) {
    let g = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - g * (b - a);
    let mut d = a + g * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    for _ in 0..iters {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - g * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + g * (b - a);
            fd = f(d);
        }
    }
    let x = 0.5 * (a + b);
    (x, f(x))
}

/// Distance from `p` to the interpolated closed curve.
fn point_to_curve(p: &Vector, trace: &[(Vector, Vector)], dt: f64) -> f64 {
    let n = trace.len();
    let mut best = (0, f64::INFINITY);
    for i in (0..n).step_by(COARSE_STRIDE) {
        let d = (&trace[i].0 - p).norm_squared();
        if d < best.1 {
            best = (i, d);
        }
    }
    let c = best.0 + n;
    for i in c - COARSE_STRIDE..=c + COARSE_STRIDE {
        let d = (&trace[i % n].0 - p).norm_squared();
        if d < best.1 {
            best = (i % n, d);
        }
    }
    let j = best.0 + n;
    [j - 1, j]
        .iter()
        .map(|&i| golden_min(|s| (hermite(trace, dt, i, s) - p).norm(), 0.0, 1.0, 40).1)
        .fold(best.1.sqrt(), f64::min)
}

/// Symmetric Hausdorff distance between the two traces.
pub fn hausdorff(a: &ClosedCharacteristic, b: &ClosedCharacteristic) -> f64 {
    let ta = a.trace_with_velocity();
    let tb = b.trace_with_velocity();
    let dta = a.tau() / TRACE_SAMPLES as f64;
    let dtb = b.tau() / TRACE_SAMPLES as f64;
    let one = ta
        .par_iter()
        .map(|(p, _)| point_to_curve(p, &tb, dtb))
        .reduce(|| 0.0, f64::max);
    let two = tb
        .par_iter()
        .map(|(p, _)| point_to_curve(p, &ta, dta))
        .reduce(|| 0.0, f64::max);
    one.max(two)
}

/// Whether the traces differ by more than `tol`. Orbits with different
/// minimal periods never share a trace.
pub fn geometrically_distinct(a: &ClosedCharacteristic, b: &ClosedCharacteristic, tol: f64) -> bool {
    if (a.tau() - b.tau()).abs() > PERIOD_TOL_REL * a.tau().max(b.tau()) {
        return true;
    }
    hausdorff(a, b) > tol
}

/// `(tau, P y)`, re-certified.
pub fn p_image(orbit: &ClosedCharacteristic, p: &Mat) -> Result<ClosedCharacteristic> {
    let img = orbit.mapped(p)?;
    let allowed = (2.0 * orbit.residual()).max(1e-12);
    if img.residual() > allowed {
        return Err(Error::Certification(format!(
            "P-image residual {:.2e} exceeds {:.2e}",
            img.residual(),
            allowed
        )));
    }
    Ok(img)
}

/// Shift `l` with `y(t + tau/k) = P^l y(t)`, if the trace is P-invariant.
pub fn detect_p_cyclic(orbit: &ClosedCharacteristic, sym: &CyclicSymmetry) -> Result<Option<u32>> {
    let k = sym.order();
    let tau = orbit.tau();
    let diam = orbit.model().diameter();
    let tol = MATCH_TOL_REL * diam;
    let target = sym.matrix() * orbit.initial();
    let samples = orbit.samples();
    let dt = tau / TRACE_SAMPLES as f64;
    let i0 = (0..samples.len())
        .min_by(|&a, &b| {
            (&samples[a] - &target)
                .norm()
                .total_cmp(&(&samples[b] - &target).norm())
        })
        .unwrap_or(0);
    let t0 = i0 as f64 * dt;
    let (s, dist) = golden_min(|s| (orbit.eval(s) - &target).norm(), t0 - dt, t0 + dt, 60);
    if dist > tol {
        return Ok(None);
    }
    let s = s.rem_euclid(tau);
    let jf = s * k as f64 / tau;
    let j = jf.round();
    if (jf - j).abs() * tau / k as f64 > 1e-6 * tau {
        return Err(Error::IdentityViolation(format!(
            "y(s) = P y(0) at s = {s:.9} which is not a multiple of tau/k"
        )));
    }
    let j = (j as u32) % k;
    if j == 0 {
        return Err(Error::IdentityViolation("P fixes a point of the orbit".into()));
    }
    let l = (1..k)
        .find(|l| (j * l) % k == 1)
        .ok_or_else(|| Error::IdentityViolation(format!("shift j = {j} is not coprime to k = {k}")))?;
    let pl = sym.power(l as i64);
    let shift = tau / k as f64;
    let worst = (0..TRACE_SAMPLES)
        .into_par_iter()
        .map(|i| {
            let t = i as f64 * dt;
            (orbit.eval(t + shift) - &pl * &samples[i]).amax()
        })
        .reduce(|| 0.0, f64::max);
    if worst > tol {
        return Err(Error::IdentityViolation(format!(
            "y(t + tau/k) = P^{l} y(t) fails by {worst:.2e}"
        )));
    }
    Ok(Some(l))
}

#[derive(Clone, Debug)]
pub struct CensusEntry {
    pub orbit: ClosedCharacteristic,
    /// Shift `l` for P-cyclic symmetric orbits.
    pub p_cyclic: Option<u32>,
    /// Index of the P-class (orbits related by powers of `P`).
    pub class: usize,
    /// True when the entry was added as a P-image rather than found.
    pub appended: bool,
}

/// Census counts. `S = s1 + 2 s2 + unpaired`; when `k >= 3`,
/// `s2 = s3 + 2 s4 + unpaired_p2`. The unpaired counts are zero whenever
/// the asymmetric P-classes split into pairs `(y, Py)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CensusCounts {
    pub s1: usize,
    pub s2: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub s3: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub s4: Option<usize>,
    #[serde(rename = "S")]
    pub total: usize,
    pub unpaired: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub unpaired_p2: Option<usize>,
}

#[derive(Clone, Debug)]
pub struct OrbitCensus {
    pub entries: Vec<CensusEntry>,
    pub counts: CensusCounts,
}

/// Dedupes the orbits, closes the set under `P` and partitions it.
pub fn build_census(orbits: &[ClosedCharacteristic], sym: &CyclicSymmetry) -> Result<OrbitCensus> {
    let mut distinct: Vec<ClosedCharacteristic> = Vec::new();
    for o in orbits {
        let tol = DIST_TOL_REL * o.model().diameter();
        if distinct.iter().all(|d| geometrically_distinct(d, o, tol)) {
            distinct.push(o.clone());
        }
    }
    let mut order: Vec<usize> = (0..distinct.len()).collect();
    order.sort_by(|&a, &b| distinct[a].tau().total_cmp(&distinct[b].tau()).then(a.cmp(&b)));

    let k = sym.order();
    let p = sym.matrix();
    let mut entries: Vec<CensusEntry> = Vec::new();
    let mut counts = CensusCounts {
        s1: 0,
        s2: 0,
        s3: (k >= 3).then_some(0),
        s4: (k >= 3).then_some(0),
        total: 0,
        unpaired: 0,
        unpaired_p2: (k >= 3).then_some(0),
    };
    let mut class = 0;
    for idx in order {
        let orbit = &distinct[idx];
        let tol = DIST_TOL_REL * orbit.model().diameter();
        if entries.iter().any(|e| !geometrically_distinct(&e.orbit, orbit, tol)) {
            continue;
        }
        let shift = detect_p_cyclic(orbit, sym)?;
        let image = p_image(orbit, p)?;
        let image_same = !geometrically_distinct(orbit, &image, tol);
        if shift.is_some() != image_same {
            return Err(Error::IdentityViolation(format!(
                "orbit with tau = {:.9}: P-cyclic shift {:?} but P-image {} the trace",
                orbit.tau(),
                shift,
                if image_same { "matches" } else { "differs from" }
            )));
        }
        if shift.is_some() {
            entries.push(CensusEntry { orbit: orbit.clone(), p_cyclic: shift, class, appended: false });
            counts.s1 += 1;
        } else {
            // P-class y, Py, P^2 y, ... until the trace repeats.
            let mut cycle = vec![orbit.clone()];
            let mut cur = image;
            while cycle.len() < k as usize && geometrically_distinct(&cycle[0], &cur, tol) {
                let next = p_image(&cur, p)?;
                cycle.push(cur);
                cur = next;
            }
            let c = cycle.len();
            for (j, o) in cycle.into_iter().enumerate() {
                let appended = j > 0 && !distinct.iter().any(|d| !geometrically_distinct(d, &o, tol));
                entries.push(CensusEntry { orbit: o, p_cyclic: None, class, appended });
            }
            counts.s2 += c / 2;
            counts.unpaired += c % 2;
            if k >= 3 {
                // Pair representatives y, P^2 y, ... form one P^2-cycle of length c/2.
                let half = c / 2;
                if half == 1 {
                    *counts.s3.as_mut().unwrap() += 1;
                } else {
                    *counts.s4.as_mut().unwrap() += half / 2;
                    *counts.unpaired_p2.as_mut().unwrap() += half % 2;
                }
            }
        }
        class += 1;
    }
    counts.total = entries.len();
    Ok(OrbitCensus { entries, counts })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flow::known_orbits;
    use crate::model::HypersurfaceModel;
    use std::sync::Arc;

    fn model(k: u32) -> Arc<HypersurfaceModel> {
        let sym = CyclicSymmetry::rotation(2, k).unwrap();
        Arc::new(HypersurfaceModel::ellipsoid(&[1.0, 2.5], 1.5, sym).unwrap())
    }

    #[test]
    fn time_shift_keeps_the_trace() {
        let m = model(3);
        let o = &known_orbits(&m).unwrap()[0];
        let s = o.shifted(0.37).unwrap();
        assert!(hausdorff(o, &s) < 1e-9);
        let tol = DIST_TOL_REL * m.diameter();
        assert!(!geometrically_distinct(o, &s, tol));
    }

    #[test]
    fn coordinate_circles_are_distinct() {
        let m = model(3);
        let os = known_orbits(&m).unwrap();
        assert!(hausdorff(&os[0], &os[1]) > 0.5);
        assert!(geometrically_distinct(&os[0], &os[1], 1e-4));
    }

    #[test]
    fn circles_are_p_cyclic() {
        for k in [2, 3, 4, 5] {
            let m = model(k);
            for o in known_orbits(&m).unwrap() {
                assert_eq!(detect_p_cyclic(&o, m.symmetry()).unwrap(), Some(1));
                let img = p_image(&o, m.symmetry().matrix()).unwrap();
                assert!(hausdorff(&o, &img) < 1e-9);
            }
        }
    }

    #[test]
    fn k_fold_image_returns_the_samples() {
        let m = model(5);
        let o = &known_orbits(&m).unwrap()[1];
        let mut cur = o.clone();
        for _ in 0..5 {
            cur = p_image(&cur, m.symmetry().matrix()).unwrap();
        }
        for (a, b) in cur.samples().iter().zip(o.samples()) {
            assert!((a - b).amax() < 1e-12);
        }
        assert_eq!(cur.tau(), o.tau());
    }

    #[test]
    fn ellipsoid_census_is_all_symmetric() {
        let m = model(3);
        let os = known_orbits(&m).unwrap();
        let mut input = os.clone();
        input.push(os[0].shifted(1.0).unwrap());
        let c = build_census(&input, m.symmetry()).unwrap();
        assert_eq!(c.counts.s1, 2);
        assert_eq!((c.counts.s2, c.counts.total), (0, 2));
        assert_eq!((c.counts.s3, c.counts.s4), (Some(0), Some(0)));
        let c2 = build_census(&os, model(2).symmetry()).unwrap();
        assert_eq!((c2.counts.s3, c2.counts.s4), (None, None));
    }

    #[test]
    fn asymmetric_orbit_gets_its_image_appended() {
        // On the round sphere every great circle is an orbit; a circle in a
        // tilted complex line is not invariant under P = diag rotation with
        // distinct exponents.
        let sym = CyclicSymmetry::from_exponents(&[1, 3], 4).unwrap();
        let m = Arc::new(HypersurfaceModel::ellipsoid(&[1.0, 1.0], 1.5, sym.clone()).unwrap());
        let s = 0.5f64.sqrt();
        let y0 = Vector::from_row_slice(&[s, s, 0.0, 0.0]);
        let o = ClosedCharacteristic::from_initial(m.clone(), &y0, 2.0 * std::f64::consts::PI / 1.5, 1).unwrap();
        assert_eq!(detect_p_cyclic(&o, &sym).unwrap(), None);
        let c = build_census(&[o], &sym).unwrap();
        // P maps the line spanned by (1, 1) to the one spanned by (1, -1) and back.
        assert_eq!(c.counts.s1, 0);
        assert_eq!(c.counts.s2, 1);
        assert_eq!(c.counts.total, 2);
        assert_eq!((c.counts.s3, c.counts.s4), (Some(1), Some(0)));
        assert!(c.entries[1].appended);
    }
}
