//! Scenario runner: orbit census, index data, inequality and theorem checks,
//! index-jump search and the verification report.

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use std::f64::consts::PI;
use std::sync::Arc;
use std::time::Instant;

use crate::error::{Error, Result};
use crate::flow::{known_orbits, linearized_path, ClosedCharacteristic};
use crate::index::{
    bott_check, index_iterates, mean_index, omega_index, splitting_numbers, IterateIndex,
};
use crate::model::{HypersurfaceModel, ModelConfig};
use crate::path::SymplecticPath;
use crate::solver::{find_orbits, SearchOptions, ORBIT_TOL};
use crate::symmetry::{build_census, hausdorff, CensusCounts, OrbitCensus};
use crate::symplectic::{spectrum, Tolerances};

pub const CHECK_NAMES: [&str; 8] = [
    "residuals",
    "known_orbits",
    "basic",
    "key_inequality",
    "bott",
    "p_images",
    "index_jump",
    "theorems",
];

/// Hausdorff tolerance for comparison with closed-form ellipsoid orbits.
const KNOWN_ORBIT_TOL: f64 = 1e-6;
/// Agreement of real index quantities across P-images.
const MEAN_INDEX_TOL: f64 = 1e-6;

fn default_starts() -> usize {
    20
}
fn default_seed() -> u64 {
    42
}
fn default_m_max() -> usize {
    12
}
fn default_t_max() -> usize {
    200
}
fn default_modes() -> usize {
    crate::dual::DEFAULT_MODES
}
fn default_checks() -> Vec<String> {
    CHECK_NAMES.iter().map(|s| s.to_string()).collect()
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub model: ModelConfig,
    #[serde(default = "default_starts")]
    pub starts: usize,
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default = "default_m_max")]
    pub m_max: usize,
    #[serde(default = "default_t_max")]
    pub t_max: usize,
    #[serde(default = "default_modes")]
    pub n_fourier: usize,
    #[serde(default = "default_checks")]
    pub checks: Vec<String>,
}

impl ScenarioConfig {
    pub fn new(model: ModelConfig) -> Self {
        Self {
            model,
            starts: default_starts(),
            seed: default_seed(),
            m_max: default_m_max(),
            t_max: default_t_max(),
            n_fourier: default_modes(),
            checks: default_checks(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.model.radii_sq.len();
        if n < 2 {
            return Err(Error::Config(format!("n = {n}; scenarios need n >= 2")));
        }
        if self.model.symmetry.order() < 2 {
            return Err(Error::Config("symmetry order k must be at least 2".into()));
        }
        if self.starts == 0 || self.m_max == 0 || self.t_max == 0 || self.n_fourier == 0 {
            return Err(Error::Config("starts, m_max, t_max and n_fourier must be positive".into()));
        }
        if let Some(c) = self.checks.iter().find(|c| !CHECK_NAMES.contains(&c.as_str())) {
            return Err(Error::Config(format!("unknown check '{c}' (known: {})", CHECK_NAMES.join(", "))));
        }
        Ok(())
    }

    fn wants(&self, name: &str) -> bool {
        self.checks.iter().any(|c| c == name)
    }
}

/// Index quantities of one closed characteristic.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IndexData {
    /// `i(y, 1)`.
    pub i1: i64,
    /// `nu(y, 1)`.
    pub nu1: usize,
    /// `S^+(y)` and `S^-(y)` at `omega = 1`.
    pub splitting_plus: i64,
    pub splitting_minus: i64,
    pub mean_index: f64,
    /// `(m, i(y, m), nu(y, m))` for `m <= m_max`.
    pub iterates: Vec<IterateIndex>,
    /// Ekeland indices `i(y, m) - n` of the critical loops `u_y^m`.
    pub ekeland: Vec<i64>,
    /// `i(y, M) / M` at the deepest computed iterate.
    pub iterate_mean: f64,
    /// `(i(y, M) - i(y, M/2)) / (M - M/2)`.
    pub richardson_mean: f64,
    pub elliptic_height: usize,
    pub hyperbolic: bool,
    /// Floquet multipliers as `[re, im]`.
    pub multipliers: Vec<[f64; 2]>,
    /// Iterates beyond `m_max` used by the index-jump search.
    #[serde(skip)]
    pub deep: Vec<IterateIndex>,
}

impl IndexData {
    /// `i(y, m)` and `nu(y, m)` when computed.
    pub fn iterate(&self, m: usize) -> Option<(i64, usize)> {
        if m == 0 {
            return None;
        }
        self.deep.get(m - 1).or_else(|| self.iterates.get(m - 1)).map(|it| (it.index, it.nullity))
    }

    pub fn depth(&self) -> usize {
        self.deep.len().max(self.iterates.len())
    }
}

/// Iterate depth needed by the index-jump search up to `t_max`.
pub fn jump_depth(mean: f64, t_max: usize) -> usize {
    2 * ((t_max as f64 / mean).round() as usize + 2) + 1
}

pub fn compute_index_data(orbit: &ClosedCharacteristic, m_max: usize, depth: Option<usize>) -> Result<IndexData> {
    let path = Arc::new(linearized_path(orbit, 1)?);
    path_index_data(&path, m_max, depth)
}

/// Index data of a convex-certified path, iterated with `P = I`.
pub fn path_index_data(path: &Arc<SymplecticPath>, m_max: usize, depth: Option<usize>) -> Result<IndexData> {
    let n = path.n() as i64;
    let path = path.clone();
    let one = Complex64::new(1.0, 0.0);
    let base = omega_index(&path, one)?;
    let (sp, sm) = splitting_numbers(&path, one)?;
    let mean = mean_index(&path)?;
    let spec = spectrum(&path.end(), &Tolerances::monodromy())?;
    let e = spec.elliptic_height();
    let depth = depth.unwrap_or(m_max).max(m_max).max(2);
    let deep = index_iterates(&path, depth)?;
    if deep[0].index != base.index || deep[0].nullity != base.nullity {
        return Err(Error::IdentityViolation(format!(
            "first iterate ({}, {}) disagrees with the direct index ({}, {})",
            deep[0].index, deep[0].nullity, base.index, base.nullity
        )));
    }
    let iterates: Vec<IterateIndex> = deep.iter().take(m_max).copied().collect();
    let big = deep.len();
    let half = big / 2;
    let iterate_mean = deep[big - 1].index as f64 / big as f64;
    let richardson_mean = (deep[big - 1].index - deep[half - 1].index) as f64 / (big - half) as f64;
    let mut multipliers: Vec<[f64; 2]> = spec
        .eigenvalues
        .iter()
        .flat_map(|c| std::iter::repeat_n([c.value.re, c.value.im], c.multiplicity))
        .collect();
    multipliers.sort_by(|a, b| a[1].atan2(a[0]).total_cmp(&b[1].atan2(b[0])).then(a[0].total_cmp(&b[0])));
    Ok(IndexData {
        i1: base.index,
        nu1: base.nullity,
        splitting_plus: sp,
        splitting_minus: sm,
        mean_index: mean,
        ekeland: iterates.iter().map(|it| it.index - n).collect(),
        iterates,
        iterate_mean,
        richardson_mean,
        elliptic_height: e,
        hyperbolic: e == 2,
        multipliers,
        deep: if big > m_max { deep } else { Vec::new() },
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Pass,
    Fail,
    Skipped,
    Consistent,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckResult {
    pub name: String,
    pub verdict: Verdict,
    pub detail: String,
    pub witness: Value,
}

impl CheckResult {
    fn new(name: &str, verdict: Verdict, detail: impl Into<String>, witness: Value) -> Self {
        Self { name: name.to_string(), verdict, detail: detail.into(), witness }
    }
}

/// Everything the checks need about one census orbit.
#[derive(Clone, Debug)]
pub struct OrbitRecord {
    pub orbit: ClosedCharacteristic,
    pub p_cyclic: Option<u32>,
    pub class: usize,
    pub appended: bool,
    pub index: IndexData,
}

/// `i(y, 1) + 2 S^+(y) - nu(y, 1) >= n` on every P-cyclic symmetric orbit.
pub fn check_key_inequality(orbits: &[OrbitRecord], n: usize) -> CheckResult {
    let mut rows = Vec::new();
    let mut fails = Vec::new();
    for (j, o) in orbits.iter().enumerate() {
        if o.p_cyclic.is_none() {
            continue;
        }
        let lhs = o.index.i1 + 2 * o.index.splitting_plus - o.index.nu1 as i64;
        let row = json!({"orbit": j, "i1": o.index.i1, "s_plus": o.index.splitting_plus, "nu1": o.index.nu1, "lhs": lhs, "n": n});
        if lhs < n as i64 {
            fails.push(row.clone());
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return CheckResult::new("key_inequality", Verdict::Skipped, "no P-cyclic symmetric orbits", json!([]));
    }
    if fails.is_empty() {
        CheckResult::new("key_inequality", Verdict::Pass, format!("{} symmetric orbits", rows.len()), Value::Array(rows))
    } else {
        CheckResult::new("key_inequality", Verdict::Fail, format!("{} violations", fails.len()), Value::Array(fails))
    }
}

/// `i(y,1) >= n`, `i(y,m+1) - i(y,m) >= 2` for `m < m_max`, mean index `> 2`,
/// `nu(y,1) >= 1` and `S^+(y) >= 1`.
pub fn check_basic_inequalities(orbits: &[OrbitRecord], n: usize, m_max: usize) -> CheckResult {
    let mut fails = Vec::new();
    for (j, o) in orbits.iter().enumerate() {
        let d = &o.index;
        if d.i1 < n as i64 {
            fails.push(json!({"orbit": j, "family": "index_lower_bound", "i1": d.i1, "n": n}));
        }
        for m in 1..m_max.min(d.iterates.len()) {
            let (a, b) = (d.iterates[m - 1].index, d.iterates[m].index);
            if b - a < 2 {
                fails.push(json!({"orbit": j, "family": "monotonicity", "m": m, "i_m": a, "i_m1": b}));
            }
        }
        if !(d.mean_index > 2.0) {
            fails.push(json!({"orbit": j, "family": "mean_index", "mean_index": d.mean_index}));
        }
        if d.nu1 < 1 {
            fails.push(json!({"orbit": j, "family": "nullity", "nu1": d.nu1}));
        }
        if d.splitting_plus < 1 {
            fails.push(json!({"orbit": j, "family": "splitting_plus", "s_plus": d.splitting_plus}));
        }
    }
    if orbits.is_empty() {
        return CheckResult::new("basic", Verdict::Skipped, "empty census", json!([]));
    }
    if fails.is_empty() {
        CheckResult::new("basic", Verdict::Pass, format!("{} orbits, m <= {m_max}", orbits.len()), json!([]))
    } else {
        CheckResult::new("basic", Verdict::Fail, format!("{} violations", fails.len()), Value::Array(fails))
    }
}

/// Bott-type closure: `i_1(gamma^m) = sum_{omega^m = 1} i_omega(gamma)` and the
/// same for nullities for `m <= m_max`, plus the P-twisted version at `m = k`.
pub fn check_bott(orbits: &[OrbitRecord], m_max: usize) -> Result<CheckResult> {
    let rows: Vec<Result<Vec<Value>>> = orbits
        .par_iter()
        .enumerate()
        .map(|(j, o)| {
            let path = Arc::new(linearized_path(&o.orbit, 1)?);
            let mut bad = Vec::new();
            for m in 1..=m_max.min(o.index.iterates.len()) {
                let mut idx = 0;
                let mut nul = 0;
                for r in 0..m {
                    let w = Complex64::from_polar(1.0, 2.0 * PI * r as f64 / m as f64);
                    let w = if r == 0 { Complex64::new(1.0, 0.0) } else { w };
                    let oi = omega_index(&path, w)?;
                    idx += oi.index;
                    nul += oi.nullity;
                }
                let it = o.index.iterates[m - 1];
                if it.index != idx || it.nullity != nul {
                    bad.push(json!({"orbit": j, "m": m, "iterate": [it.index, it.nullity], "root_sum": [idx, nul]}));
                }
            }
            let sym = o.orbit.model().symmetry();
            let k = sym.order() as usize;
            let b = bott_check(&path, sym.matrix(), k, Complex64::new(1.0, 0.0))?;
            if !b.holds() {
                bad.push(json!({"orbit": j, "p_twisted": true, "m": k, "lhs": [b.lhs_index, b.lhs_nullity], "rhs": [b.rhs_index, b.rhs_nullity]}));
            }
            Ok(bad)
        })
        .collect();
    let mut fails = Vec::new();
    for r in rows {
        fails.extend(r?);
    }
    if orbits.is_empty() {
        return Ok(CheckResult::new("bott", Verdict::Skipped, "empty census", json!([])));
    }
    Ok(if fails.is_empty() {
        CheckResult::new("bott", Verdict::Pass, format!("m <= {m_max} and P-twisted m = k"), json!([]))
    } else {
        CheckResult::new("bott", Verdict::Fail, format!("{} mismatches", fails.len()), Value::Array(fails))
    })
}

/// Orbits related by `P` carry the same period and index data.
pub fn check_p_images(orbits: &[OrbitRecord]) -> CheckResult {
    let mut fails = Vec::new();
    let mut classes = 0;
    for (j, o) in orbits.iter().enumerate() {
        if o.p_cyclic.is_some() {
            continue;
        }
        let Some(first) = orbits.iter().position(|r| r.class == o.class) else { continue };
        if first == j {
            classes += 1;
            continue;
        }
        let (a, b) = (&orbits[first], o);
        let same = (a.orbit.tau() - b.orbit.tau()).abs() <= 1e-9 * a.orbit.tau()
            && a.index.i1 == b.index.i1
            && a.index.nu1 == b.index.nu1
            && a.index.splitting_plus == b.index.splitting_plus
            && (a.index.mean_index - b.index.mean_index).abs() <= MEAN_INDEX_TOL;
        if !same {
            fails.push(json!({
                "orbits": [first, j],
                "tau": [a.orbit.tau(), b.orbit.tau()],
                "i1": [a.index.i1, b.index.i1],
                "nu1": [a.index.nu1, b.index.nu1],
                "s_plus": [a.index.splitting_plus, b.index.splitting_plus],
                "mean_index": [a.index.mean_index, b.index.mean_index],
            }));
        }
    }
    if classes == 0 {
        return CheckResult::new("p_images", Verdict::Skipped, "no asymmetric orbits", json!([]));
    }
    if fails.is_empty() {
        CheckResult::new("p_images", Verdict::Pass, format!("{classes} asymmetric classes"), json!([]))
    } else {
        CheckResult::new("p_images", Verdict::Fail, format!("{} mismatches", fails.len()), Value::Array(fails))
    }
}

/// Values of the five index-jump conditions for one orbit at `(T, m)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JumpRow {
    pub orbit: usize,
    pub m: usize,
    /// Conditions on `nu(2m-1)`, `i(2m)` (lower), `i(2m) + nu(2m)` (upper),
    /// `i(2m+1)` and `i(2m-1) + nu(2m-1)`.
    pub conditions: [bool; 5],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JumpLedgerEntry {
    pub t: usize,
    pub rows: Vec<JumpRow>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JumpSearch {
    /// `(T, m_1, .., m_q)`.
    pub tuple: Option<(usize, Vec<usize>)>,
    pub ledger: Vec<JumpLedgerEntry>,
    /// Iterate depth that would be needed when the search was cut short.
    pub required_depth: Option<usize>,
}

fn jump_conditions(d: &IndexData, t: usize, m: usize) -> Option<[bool; 5]> {
    if m == 0 {
        return None;
    }
    let (im1, nm1) = d.iterate(2 * m - 1)?;
    let (i2, n2) = d.iterate(2 * m)?;
    let (ip1, _) = d.iterate(2 * m + 1)?;
    let t2 = 2 * t as i64;
    let half_e = (d.elliptic_height / 2) as i64;
    Some([
        nm1 == d.nu1,
        i2 >= t2 - half_e,
        i2 + n2 as i64 <= t2 + half_e - 1,
        ip1 == t2 + d.i1,
        im1 + nm1 as i64 == t2 - (d.i1 + 2 * d.splitting_plus - d.nu1 as i64),
    ])
}

/// Scans `T = 1..=t_max` with `m_j` in `round(T / mean_j) ± 2`.
pub fn search_index_jump(data: &[&IndexData], t_max: usize) -> JumpSearch {
    let mut ledger = Vec::new();
    if data.is_empty() {
        return JumpSearch { tuple: None, ledger, required_depth: None };
    }
    for t in 1..=t_max {
        let mut rows = Vec::with_capacity(data.len());
        let mut chosen = Vec::with_capacity(data.len());
        for (j, d) in data.iter().enumerate() {
            let centre = (t as f64 / d.mean_index).round() as i64;
            let mut best: Option<JumpRow> = None;
            for m in (centre - 2).max(1)..=centre + 2 {
                let m = m as usize;
                let Some(c) = jump_conditions(d, t, m) else {
                    if 2 * m + 1 > d.depth() {
                        return JumpSearch { tuple: None, ledger, required_depth: Some(2 * m + 1) };
                    }
                    continue;
                };
                let score = c.iter().filter(|b| **b).count();
                if best.as_ref().is_none_or(|b| score > b.conditions.iter().filter(|x| **x).count()) {
                    best = Some(JumpRow { orbit: j, m, conditions: c });
                }
                if score == 5 {
                    break;
                }
            }
            if let Some(b) = best {
                if b.conditions.iter().all(|x| *x) {
                    chosen.push(b.m);
                }
                rows.push(b);
            }
        }
        let ok = chosen.len() == data.len();
        ledger.push(JumpLedgerEntry { t, rows });
        if ok {
            return JumpSearch { tuple: Some((t, chosen)), ledger, required_depth: None };
        }
    }
    JumpSearch { tuple: None, ledger, required_depth: None }
}

fn jump_check(orbits: &[OrbitRecord], t_max: usize) -> (CheckResult, JumpSearch) {
    let data: Vec<&IndexData> = orbits.iter().map(|o| &o.index).collect();
    let s = search_index_jump(&data, t_max);
    let res = match (&s.tuple, s.required_depth) {
        (Some((t, ms)), _) => CheckResult::new(
            "index_jump",
            Verdict::Pass,
            format!("T = {t}"),
            json!({"T": t, "m": ms}),
        ),
        (None, Some(depth)) => CheckResult::new(
            "index_jump",
            Verdict::Skipped,
            format!("iterate depth {depth} required"),
            json!({"required_depth": depth}),
        ),
        (None, None) if orbits.is_empty() => {
            CheckResult::new("index_jump", Verdict::Skipped, "empty census", json!(null))
        }
        (None, None) => CheckResult::new(
            "index_jump",
            Verdict::Skipped,
            format!("no tuple with T <= {t_max}"),
            json!({"t_max": t_max}),
        ),
    };
    (res, s)
}

/// Instance checks of the three multiplicity statements. Censuses that are
/// not known to be complete give "consistent" instead of "pass".
pub fn check_theorems(orbits: &[OrbitRecord], counts: &CensusCounts, n: usize, k: u32, complete: bool) -> Vec<CheckResult> {
    let ok = if complete { Verdict::Pass } else { Verdict::Consistent };
    let s = counts.total;
    let mut out = Vec::new();
    out.push(if s >= n {
        CheckResult::new("theorem_count", ok, format!("S = {s} >= n = {n}"), json!({"S": s, "n": n}))
    } else if complete {
        CheckResult::new("theorem_count", Verdict::Fail, format!("S = {s} < n = {n}"), json!({"S": s, "n": n}))
    } else {
        CheckResult::new("theorem_count", Verdict::Skipped, format!("found {s} < n = {n} orbits; census incomplete"), json!({"S": s, "n": n}))
    });
    let non_hyp = orbits.iter().filter(|o| !o.index.hyperbolic).count();
    let need = 2 * (n / 2);
    out.push(if non_hyp >= need {
        CheckResult::new("theorem_non_hyperbolic", ok, format!("{non_hyp} >= {need}"), json!({"non_hyperbolic": non_hyp, "required": need}))
    } else if complete {
        CheckResult::new("theorem_non_hyperbolic", Verdict::Fail, format!("{non_hyp} < {need}"), json!({"non_hyperbolic": non_hyp, "required": need}))
    } else {
        CheckResult::new("theorem_non_hyperbolic", Verdict::Skipped, "census incomplete", json!({"non_hyperbolic": non_hyp, "required": need}))
    });
    out.push(if s != n || k < 3 {
        CheckResult::new("theorem_symmetric", Verdict::Skipped, format!("premise S = n, k >= 3 not met (S = {s}, k = {k})"), json!({"S": s, "k": k}))
    } else {
        let asym: Vec<usize> = orbits.iter().enumerate().filter(|(_, o)| o.p_cyclic.is_none()).map(|(j, _)| j).collect();
        if asym.is_empty() {
            CheckResult::new("theorem_symmetric", ok, "all orbits P-cyclic symmetric", json!({"S": s, "k": k}))
        } else {
            CheckResult::new("theorem_symmetric", Verdict::Fail, format!("{} asymmetric orbits", asym.len()), json!({"asymmetric": asym}))
        }
    });
    out
}

fn check_residuals(orbits: &[OrbitRecord]) -> CheckResult {
    let worst = orbits.iter().map(|o| o.orbit.residual().max(o.orbit.energy_defect())).fold(0.0, f64::max);
    let bad: Vec<Value> = orbits
        .iter()
        .enumerate()
        .filter(|(_, o)| o.orbit.residual() > ORBIT_TOL || o.orbit.energy_defect() > ORBIT_TOL)
        .map(|(j, o)| json!({"orbit": j, "residual": o.orbit.residual(), "energy_defect": o.orbit.energy_defect()}))
        .collect();
    if bad.is_empty() {
        CheckResult::new("residuals", Verdict::Pass, format!("max defect {worst:.1e} <= {ORBIT_TOL:.0e}"), json!([]))
    } else {
        CheckResult::new("residuals", Verdict::Fail, format!("{} orbits above {ORBIT_TOL:.0e}", bad.len()), Value::Array(bad))
    }
}

fn check_known(model: &Arc<HypersurfaceModel>, orbits: &[OrbitRecord]) -> Result<CheckResult> {
    if !model.is_ellipsoid() {
        return Ok(CheckResult::new("known_orbits", Verdict::Skipped, "no closed form for this model", json!(null)));
    }
    let known = match known_orbits(model) {
        Ok(k) => k,
        Err(e) => return Ok(CheckResult::new("known_orbits", Verdict::Skipped, e.to_string(), json!(null))),
    };
    let mut rows = Vec::new();
    let mut ok = orbits.len() == known.len();
    for (i, kc) in known.iter().enumerate() {
        let best = orbits
            .iter()
            .enumerate()
            .map(|(j, o)| (j, hausdorff(&o.orbit, kc)))
            .min_by(|a, b| a.1.total_cmp(&b.1));
        match best {
            Some((j, d)) => {
                ok &= d <= KNOWN_ORBIT_TOL;
                rows.push(json!({"plane": i, "orbit": j, "hausdorff": d}));
            }
            None => {
                ok = false;
                rows.push(json!({"plane": i, "orbit": null}));
            }
        }
    }
    let detail = format!("{} census orbits vs {} circles, tol {KNOWN_ORBIT_TOL:.0e}", orbits.len(), known.len());
    Ok(CheckResult::new("known_orbits", if ok { Verdict::Pass } else { Verdict::Fail }, detail, Value::Array(rows)))
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct OrbitReport {
    pub tau: f64,
    pub residual: f64,
    pub energy_defect: f64,
    pub multiplicity: usize,
    pub p_cyclic: Option<u32>,
    pub class: usize,
    pub appended: bool,
    pub initial_point: Vec<f64>,
    pub index: IndexData,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CensusReport {
    #[serde(flatten)]
    pub counts: CensusCounts,
    pub orbits: Vec<OrbitReport>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Timing {
    pub search_s: f64,
    pub index_s: f64,
    pub checks_s: f64,
    pub total_s: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct VerificationReport {
    pub scenario: ScenarioConfig,
    pub census: CensusReport,
    pub checks: Vec<CheckResult>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub index_jump: Option<JumpSearch>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub timing: Option<Timing>,
}

impl VerificationReport {
    /// True when no check failed.
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.verdict != Verdict::Fail)
    }

    /// Canonical JSON: sorted keys, shortest round-trip floats, no timing.
    pub fn to_canonical_json(&self) -> Result<String> {
        let mut copy = self.clone();
        copy.timing = None;
        let v = serde_json::to_value(&copy)?;
        Ok(serde_json::to_string_pretty(&v)? + "\n")
    }

    pub fn to_table(&self) -> String {
        let c = &self.census.counts;
        let mut s = String::new();
        s.push_str(&format!(
            "census: S = {} (s1 = {}, s2 = {}{}{})\n",
            c.total,
            c.s1,
            c.s2,
            c.s3.map(|v| format!(", s3 = {v}")).unwrap_or_default(),
            c.s4.map(|v| format!(", s4 = {v}")).unwrap_or_default()
        ));
        s.push_str(&format!(
            "{:>3} {:>14} {:>9} {:>4} {:>4} {:>4} {:>10} {:>3} {:>5} {:>8}\n",
            "#", "tau", "residual", "i1", "nu1", "S+", "mean", "e", "hyp", "p_cyclic"
        ));
        for (j, o) in self.census.orbits.iter().enumerate() {
            s.push_str(&format!(
                "{:>3} {:>14.9} {:>9.1e} {:>4} {:>4} {:>4} {:>10.6} {:>3} {:>5} {:>8}\n",
                j,
                o.tau,
                o.residual,
                o.index.i1,
                o.index.nu1,
                o.index.splitting_plus,
                o.index.mean_index,
                o.index.elliptic_height,
                o.index.hyperbolic,
                o.p_cyclic.map(|l| l.to_string()).unwrap_or_else(|| "-".into())
            ));
        }
        s.push('\n');
        for c in &self.checks {
            let v = match c.verdict {
                Verdict::Pass => "pass",
                Verdict::Fail => "FAIL",
                Verdict::Skipped => "skipped",
                Verdict::Consistent => "consistent",
            };
            s.push_str(&format!("{:<24} {:<10} {}\n", c.name, v, c.detail));
        }
        if let Some(t) = &self.timing {
            s.push_str(&format!(
                "\ntiming: search {:.2}s, index {:.2}s, checks {:.2}s, total {:.2}s\n",
                t.search_s, t.index_s, t.checks_s, t.total_s
            ));
        }
        s
    }
}

/// Runs a scenario end to end. Errors name the failing stage.
pub fn run_scenario(cfg: &ScenarioConfig) -> Result<VerificationReport> {
    cfg.validate()?;
    let stage = |name: &'static str| move |e: Error| Error::Stage { stage: name, source: Box::new(e) };
    let t0 = Instant::now();
    let model = Arc::new(HypersurfaceModel::from_config(&cfg.model).map_err(stage("model"))?);
    let n = model.n();
    let k = model.symmetry().order();
    let opts = SearchOptions {
        starts: cfg.starts,
        seed: cfg.seed,
        modes: cfg.n_fourier,
        ..SearchOptions::default()
    };
    let search = find_orbits(&model, &opts).map_err(stage("orbit search"))?;
    let found: Vec<ClosedCharacteristic> = search.orbits.iter().map(|f| f.orbit.clone()).collect();
    let census: OrbitCensus = build_census(&found, model.symmetry()).map_err(stage("census"))?;
    let t_search = t0.elapsed().as_secs_f64();

    let t1 = Instant::now();
    let want_jump = cfg.wants("index_jump");
    let records: Vec<Result<OrbitRecord>> = census
        .entries
        .par_iter()
        .map(|e| {
            let mut index = compute_index_data(&e.orbit, cfg.m_max, None)?;
            if want_jump {
                let depth = jump_depth(index.mean_index, cfg.t_max);
                if depth > cfg.m_max {
                    index = compute_index_data(&e.orbit, cfg.m_max, Some(depth))?;
                }
            }
            Ok(OrbitRecord {
                orbit: e.orbit.clone(),
                p_cyclic: e.p_cyclic,
                class: e.class,
                appended: e.appended,
                index,
            })
        })
        .collect();
    let records: Vec<OrbitRecord> = records.into_iter().collect::<Result<_>>().map_err(stage("index"))?;
    let t_index = t1.elapsed().as_secs_f64();

    let t2 = Instant::now();
    let mut checks = Vec::new();
    let mut jump = None;
    for name in CHECK_NAMES {
        if !cfg.wants(name) {
            continue;
        }
        match name {
            "residuals" => checks.push(check_residuals(&records)),
            "known_orbits" => checks.push(check_known(&model, &records).map_err(stage("known_orbits"))?),
            "basic" => checks.push(check_basic_inequalities(&records, n, cfg.m_max)),
            "key_inequality" => checks.push(check_key_inequality(&records, n)),
            "bott" => checks.push(check_bott(&records, cfg.m_max).map_err(stage("bott"))?),
            "p_images" => checks.push(check_p_images(&records)),
            "index_jump" => {
                let (c, s) = jump_check(&records, cfg.t_max);
                checks.push(c);
                jump = Some(s);
            }
            "theorems" => checks.extend(check_theorems(&records, &census.counts, n, k, model.is_ellipsoid())),
            _ => unreachable!("validated check name"),
        }
    }
    let t_checks = t2.elapsed().as_secs_f64();

    let orbits = records
        .into_iter()
        .map(|r| OrbitReport {
            tau: r.orbit.tau(),
            residual: r.orbit.residual(),
            energy_defect: r.orbit.energy_defect(),
            multiplicity: r.orbit.multiplicity(),
            p_cyclic: r.p_cyclic,
            class: r.class,
            appended: r.appended,
            initial_point: r.orbit.initial().iter().copied().collect(),
            index: r.index,
        })
        .collect();
    Ok(VerificationReport {
        scenario: cfg.clone(),
        census: CensusReport { counts: census.counts, orbits },
        checks,
        index_jump: jump,
        timing: Some(Timing {
            search_s: t_search,
            index_s: t_index,
            checks_s: t_checks,
            total_s: t0.elapsed().as_secs_f64(),
        }),
    })
}
