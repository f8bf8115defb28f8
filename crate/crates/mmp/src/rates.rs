//! Rate families g^k_{α,β}: the rate at which k particles leave a site with
//! α particles for a site with β particles.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use num_traits::{One, Signed, Zero};
use serde::Serialize;

use crate::error::{MmpError, Result};
use crate::num::{fmt_rational, int, parse_rational, to_f64, Rational};
use crate::seq::Sequence;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize)]
pub enum RateClass {
    General,
    MmZrp,
    MmTp,
    SingleJumpMp,
    SingleJumpZrp,
    SingleJumpTp,
}

impl RateClass {
    pub fn is_single_jump(self) -> bool {
        matches!(self, RateClass::SingleJumpMp | RateClass::SingleJumpZrp | RateClass::SingleJumpTp)
    }

    /// Departure-occupancy-only rates (ZRP-like).
    pub fn is_zrp_like(self) -> bool {
        matches!(self, RateClass::MmZrp | RateClass::SingleJumpZrp)
    }

    /// Arrival-occupancy-only rates (TP-like).
    pub fn is_tp_like(self) -> bool {
        matches!(self, RateClass::MmTp | RateClass::SingleJumpTp)
    }

    pub fn parse(s: &str) -> Result<RateClass> {
        Ok(match s {
            "general" => RateClass::General,
            "mmzrp" | "mm_zrp" => RateClass::MmZrp,
            "mmtp" | "mm_tp" => RateClass::MmTp,
            "single_mp" | "mp" => RateClass::SingleJumpMp,
            "single_zrp" | "zrp" => RateClass::SingleJumpZrp,
            "single_tp" | "tp" => RateClass::SingleJumpTp,
            other => return Err(MmpError::Parse(format!("unknown rate class {other:?}"))),
        })
    }
}

/// Key of a table entry; `None` in the α or β slot matches any occupancy.
pub type TableKey = (usize, Option<usize>, Option<usize>);

#[derive(Clone, Debug)]
pub(crate) enum RateKind {
    /// g^k_α = h(k)
    DepartureIndependent { h: Sequence },
    /// g^k_α = r(α)
    Uniform { r: Sequence },
    /// g^k_α = π(α−k) h(k) / π(α)
    ProductShape { pi: Sequence, h: Sequence },
    /// g¹_α = g(α)
    SingleZrp { g: Sequence },
    /// g¹_{*,β} = g(β)
    SingleTp { g: Sequence },
    /// g¹_{α,β} = dep(α) · arr(β)
    SingleMp { dep: Sequence, arr: Sequence },
    /// g^k_{*,β} = rows[k−1][β] for β < rows[k−1].len(), else 0
    TargetTable { rows: Vec<Vec<Rational>> },
    Table { entries: BTreeMap<TableKey, Rational>, default: Rational },
}

/// An immutable, shareable rate family.
#[derive(Clone, Debug)]
pub struct RateFamily {
    class: RateClass,
    name: String,
    params: BTreeMap<String, String>,
    description: String,
    kind: Arc<RateKind>,
}

impl fmt::Display for RateFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}(", self.name)?;
        for (i, (k, v)) in self.params.iter().enumerate() {
            if i > 0 {
                write!(f, ", ")?;
            }
            write!(f, "{k}={v}")?;
        }
        write!(f, ")")
    }
}

impl RateFamily {
    pub(crate) fn from_kind(
        class: RateClass,
        name: &str,
        params: BTreeMap<String, String>,
        description: String,
        kind: RateKind,
    ) -> Self {
        RateFamily { class, name: name.to_string(), params, description, kind: Arc::new(kind) }
    }

    pub fn class(&self) -> RateClass {
        self.class
    }
    pub fn name(&self) -> &str {
        &self.name
    }
    pub fn params(&self) -> &BTreeMap<String, String> {
        &self.params
    }
    pub fn description(&self) -> &str {
        &self.description
    }

    /// g^k_{α,β}. Zero outside 0 < k ≤ α.
    pub fn rate(&self, k: usize, alpha: usize, beta: usize) -> Rational {
        if k == 0 || alpha == 0 || k > alpha {
            return Rational::zero();
        }
        match &*self.kind {
            RateKind::DepartureIndependent { h } => h.value(k),
            RateKind::Uniform { r } => r.value(alpha),
            RateKind::ProductShape { pi, h } => pi.value(alpha - k) * h.value(k) / pi.value(alpha),
            RateKind::SingleZrp { g } => single(k, || g.value(alpha)),
            RateKind::SingleTp { g } => single(k, || g.value(beta)),
            RateKind::SingleMp { dep, arr } => single(k, || dep.value(alpha) * arr.value(beta)),
            RateKind::TargetTable { rows } => rows
                .get(k - 1)
                .and_then(|row| row.get(beta))
                .cloned()
                .unwrap_or_else(Rational::zero),
            RateKind::Table { entries, default } => [
                (k, Some(alpha), Some(beta)),
                (k, Some(alpha), None),
                (k, None, Some(beta)),
                (k, None, None),
            ]
            .iter()
            .find_map(|key| entries.get(key))
            .cloned()
            .unwrap_or_else(|| default.clone()),
        }
    }

    pub fn rate_f64(&self, k: usize, alpha: usize, beta: usize) -> f64 {
        to_f64(&self.rate(k, alpha, beta))
    }

    /// All rates k = 1..=α at (α, β), computed in one pass where the shape allows it.
    pub fn rates_at(&self, alpha: usize, beta: usize) -> Vec<Rational> {
        if alpha == 0 {
            return Vec::new();
        }
        match &*self.kind {
            RateKind::ProductShape { pi, h } => {
                let p = pi.values(0, alpha);
                (1..=alpha).map(|k| &p[alpha - k] * h.value(k) / &p[alpha]).collect()
            }
            _ => (1..=alpha).map(|k| self.rate(k, alpha, beta)).collect(),
        }
    }

    /// The single-site rate sequence h(k) when rates depend on k only.
    pub fn jump_profile(&self) -> Option<&Sequence> {
        match &*self.kind {
            RateKind::DepartureIndependent { h } => Some(h),
            _ => None,
        }
    }

    /// For ZRP-like families, the sequence α ↦ g¹_α when it is known symbolically.
    pub(crate) fn first_rate_sequence(&self) -> Option<Sequence> {
        match &*self.kind {
            RateKind::SingleZrp { g } | RateKind::SingleTp { g } => Some(g.clone()),
            RateKind::DepartureIndependent { h } => Some(Sequence::Const(h.value(1))),
            RateKind::Uniform { r } => Some(r.clone()),
            _ => None,
        }
    }

    pub(crate) fn mp_parts(&self) -> Option<(&Sequence, &Sequence)> {
        match &*self.kind {
            RateKind::SingleMp { dep, arr } => Some((dep, arr)),
            _ => None,
        }
    }

    /// Product-shape ingredients (π, h) when the family has the form π(α−k)h(k)/π(α).
    pub fn product_shape(&self) -> Option<(&Sequence, &Sequence)> {
        match &*self.kind {
            RateKind::ProductShape { pi, h } => Some((pi, h)),
            _ => None,
        }
    }

    /// Largest index carried by a table-backed family; rates vanish beyond it.
    pub fn table_extent(&self) -> Option<usize> {
        match &*self.kind {
            RateKind::TargetTable { rows } => Some(rows.len()),
            _ => None,
        }
    }

    /// A rate family backed by an explicit target-process table
    /// `rows[k−1][β] = g^k_{*,β}`; zero outside the table.
    pub fn target_table(rows: Vec<Vec<Rational>>, description: String) -> Result<RateFamily> {
        for (k, row) in rows.iter().enumerate() {
            for (b, v) in row.iter().enumerate() {
                if v.is_negative() {
                    return Err(MmpError::NegativeRate { alpha: k + 1, beta: b });
                }
            }
        }
        let mut params = BTreeMap::new();
        params.insert("cutoff".to_string(), rows.len().to_string());
        Ok(RateFamily::from_kind(RateClass::MmTp, "target_table", params, description, RateKind::TargetTable { rows }))
    }
}

fn single(k: usize, f: impl FnOnce() -> Rational) -> Rational {
    if k == 1 {
        f()
    } else {
        Rational::zero()
    }
}

fn param_seq(params: &BTreeMap<String, String>, key: &str, default: Option<&str>) -> Result<Sequence> {
    match params.get(key).map(String::as_str).or(default) {
        Some(s) => Sequence::parse(s),
        None => Err(MmpError::InvalidParam { name: key.into(), reason: "missing".into() }),
    }
}

fn param_rat(params: &BTreeMap<String, String>, key: &str, default: Option<&str>) -> Result<Rational> {
    match params.get(key).map(String::as_str).or(default) {
        Some(s) => parse_rational(s),
        None => Err(MmpError::InvalidParam { name: key.into(), reason: "missing".into() }),
    }
}

fn need(cond: bool, name: &str, reason: &str) -> Result<()> {
    if cond {
        Ok(())
    } else {
        Err(MmpError::InvalidParam { name: name.into(), reason: reason.into() })
    }
}

fn nonneg_from(seq: &Sequence, from: usize, name: &str) -> Result<()> {
    need(seq.defined_from() <= from, name, &format!("must be defined from index {from}"))?;
    need(seq.is_nonnegative(), name, "must be nonnegative")
}

/// Builds a named family from string parameters.
///
/// Names: `ex1_h` (h), `ex2_r` (r), `ex3_pi_h` (pi, h), `ex4_b_family`
/// (b, pi0 = 1+b, h = pi), `stick`, `qhahn` (q), `single_zrp` (g),
/// `single_tp` (g), `single_mp` (dep, arr), `table` (entries, default, class).
pub fn make_builtin(name: &str, params: &BTreeMap<String, String>) -> Result<RateFamily> {
    let p = params.clone();
    let fam = |class, kind, description: String| Ok(RateFamily::from_kind(class, name, p.clone(), description, kind));
    match name {
        "ex1_h" => {
            let h = param_seq(params, "h", None)?;
            nonneg_from(&h, 1, "h")?;
            fam(RateClass::MmZrp, RateKind::DepartureIndependent { h: h.clone() }, format!("MM-ZRP g^k_a = h(k), h = {h}"))
        }
        "qhahn" => {
            let q = param_rat(params, "q", None)?;
            need(q.is_positive() && q < Rational::one(), "q", "needs 0 < q < 1")?;
            fam(
                RateClass::MmZrp,
                RateKind::DepartureIndependent { h: Sequence::QHahn(q.clone()) },
                format!("q-Hahn MM-ZRP, q = {}", fmt_rational(&q)),
            )
        }
        "ex2_r" => {
            let r = param_seq(params, "r", None)?;
            nonneg_from(&r, 1, "r")?;
            fam(RateClass::MmZrp, RateKind::Uniform { r: r.clone() }, format!("MM-ZRP g^k_a = r(a), r = {r}"))
        }
        "stick" => fam(
            RateClass::MmZrp,
            RateKind::Uniform { r: Sequence::Const(Rational::one()) },
            "stick process, g^k_a = 1".into(),
        ),
        "ex3_pi_h" => {
            let pi = param_seq(params, "pi", None)?;
            let h = match params.get("h").map(String::as_str) {
                None | Some("pi") => pi.clone(),
                Some(s) => Sequence::parse(s)?,
            };
            need(pi.defined_from() == 0 && pi.is_positive_from(0), "pi", "must be positive from 0")?;
            nonneg_from(&h, 1, "h")?;
            fam(
                RateClass::MmZrp,
                RateKind::ProductShape { pi: pi.clone(), h: h.clone() },
                format!("MM-ZRP g^k_a = pi(a-k) h(k)/pi(a), pi = {pi}, h = {h}"),
            )
        }
        "ex4_b_family" => {
            let b = param_rat(params, "b", None)?;
            need(b > Rational::one(), "b", "needs b > 1")?;
            let pi0 = param_rat(params, "pi0", None).unwrap_or_else(|_| Rational::one() + &b);
            need(pi0 >= Rational::one() + &b, "pi0", "needs pi0 >= 1 + b")?;
            let pi = Sequence::PowerLawPi { b: b.clone(), pi0: pi0.clone() };
            let h = match params.get("h").map(String::as_str) {
                None | Some("pi") => pi.clone(),
                Some(s) => Sequence::parse(s)?,
            };
            nonneg_from(&h, 1, "h")?;
            fam(
                RateClass::MmZrp,
                RateKind::ProductShape { pi, h: h.clone() },
                format!("power-law MM-ZRP, r(n) = 1 + b/n, b = {}, pi0 = {}, h = {h}", fmt_rational(&b), fmt_rational(&pi0)),
            )
        }
        "single_zrp" => {
            let g = param_seq(params, "g", None)?;
            nonneg_from(&g, 1, "g")?;
            fam(RateClass::SingleJumpZrp, RateKind::SingleZrp { g: g.clone() }, format!("ZRP g1_a = {g}"))
        }
        "single_tp" => {
            let g = param_seq(params, "g", None)?;
            nonneg_from(&g, 0, "g")?;
            fam(RateClass::SingleJumpTp, RateKind::SingleTp { g: g.clone() }, format!("TP g1_(*,b) = {g}"))
        }
        "single_mp" => {
            let dep = param_seq(params, "dep", None)?;
            let arr = param_seq(params, "arr", None)?;
            nonneg_from(&dep, 1, "dep")?;
            nonneg_from(&arr, 0, "arr")?;
            fam(
                RateClass::SingleJumpMp,
                RateKind::SingleMp { dep: dep.clone(), arr: arr.clone() },
                format!("misanthrope g1_(a,b) = dep(a) arr(b), dep = {dep}, arr = {arr}"),
            )
        }
        "table" => {
            let class = RateClass::parse(params.get("class").map(String::as_str).unwrap_or("general"))?;
            let default = param_rat(params, "default", Some("0"))?;
            need(!default.is_negative(), "default", "must be nonnegative")?;
            let entries = parse_table_entries(params.get("entries").map(String::as_str).unwrap_or(""))?;
            check_table_class(class, &entries, &default)?;
            fam(class, RateKind::Table { entries, default }, "explicit rate table".into())
        }
        other => Err(MmpError::UnknownFamily(other.to_string())),
    }
}

/// Parses `k,α,β = value; ...` with `*` allowed for α or β.
pub fn parse_table_entries(s: &str) -> Result<BTreeMap<TableKey, Rational>> {
    let mut out = BTreeMap::new();
    for item in s.split(';').map(str::trim).filter(|t| !t.is_empty()) {
        let (lhs, rhs) = item
            .split_once('=')
            .ok_or_else(|| MmpError::Parse(format!("table entry without '=': {item:?}")))?;
        let idx: Vec<&str> = lhs.split(',').map(str::trim).collect();
        if idx.len() != 3 {
            return Err(MmpError::Parse(format!("table entry needs k,alpha,beta: {item:?}")));
        }
        let num = |t: &str| -> Result<usize> {
            t.parse::<usize>().map_err(|_| MmpError::Parse(format!("bad index {t:?} in {item:?}")))
        };
        let slot = |t: &str| -> Result<Option<usize>> { if t == "*" { Ok(None) } else { num(t).map(Some) } };
        let k = num(idx[0])?;
        let v = parse_rational(rhs)?;
        if v.is_negative() {
            return Err(MmpError::InvalidParam { name: "entries".into(), reason: format!("negative value in {item:?}") });
        }
        out.insert((k, slot(idx[1])?, slot(idx[2])?), v);
    }
    Ok(out)
}

fn check_table_class(class: RateClass, entries: &BTreeMap<TableKey, Rational>, default: &Rational) -> Result<()> {
    let bad = |reason: &str| Err(MmpError::InvalidParam { name: "entries".into(), reason: reason.into() });
    for (k, a, b) in entries.keys() {
        if class.is_single_jump() && *k != 1 {
            return bad("single-jump tables may only set k = 1");
        }
        if class.is_zrp_like() && b.is_some() {
            return bad("MM-ZRP tables must use '*' for beta");
        }
        if class.is_tp_like() && a.is_some() {
            return bad("MM-TP tables must use '*' for alpha");
        }
    }
    if class.is_single_jump() && !default.is_zero() {
        return bad("single-jump tables need default 0");
    }
    Ok(())
}

pub fn eval_rate(family: &RateFamily, k: usize, alpha: usize, beta: usize) -> Rational {
    family.rate(k, alpha, beta)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum GrowthCondition {
    /// ∑_k k g^k_{α,β} ≤ C(α+β)
    LinearGrowth,
    /// ∑_{k ≤ α∨γ} k |g^k_{α,β} − g^k_{γ,δ}| ≤ C(|α−γ| + |β−δ|)
    LipschitzJump,
    /// ∑_k g^k_{α,β} ≤ C
    BoundedTotal,
}

impl GrowthCondition {
    pub fn parse(s: &str) -> Result<Self> {
        Ok(match s {
            "linear_growth" | "linear" => GrowthCondition::LinearGrowth,
            "lipschitz_jump" | "lipschitz" => GrowthCondition::LipschitzJump,
            "bounded_total" | "bounded" => GrowthCondition::BoundedTotal,
            other => return Err(MmpError::Parse(format!("unknown growth condition {other:?}"))),
        })
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct GrowthWitness {
    pub alpha: usize,
    pub beta: usize,
    pub other: Option<(usize, usize)>,
    pub ratio: f64,
}

/// Finite-range certificate: the constant is the smallest one that works on
/// `0..=scan_cutoff`, nothing is claimed beyond that range.
#[derive(Clone, Debug, Serialize)]
pub struct GrowthReport {
    pub condition: GrowthCondition,
    pub scan_cutoff: usize,
    pub cap: f64,
    /// Smallest constant on the scanned range, `f64::INFINITY` on violation.
    pub best_constant: f64,
    #[serde(skip)]
    pub best_constant_exact: Option<Rational>,
    pub violation: Option<GrowthWitness>,
    pub scope: String,
}

impl GrowthReport {
    pub fn passed(&self) -> bool {
        self.violation.is_none()
    }
}

/// Scans the growth condition on occupancies up to `scan_cutoff`.
pub fn check_growth(family: &RateFamily, condition: GrowthCondition, cap: f64, scan_cutoff: usize) -> GrowthReport {
    let n = scan_cutoff.max(2);
    let table: Vec<Vec<Vec<Rational>>> = (0..=n).map(|a| (0..=n).map(|b| family.rates_at(a, b)).collect()).collect();
    let cap_r = Rational::from_float(cap);
    let mut best = Rational::zero();
    let mut violation: Option<GrowthWitness> = None;
    let consider = |ratio: Rational, w: GrowthWitness, best: &mut Rational, violation: &mut Option<GrowthWitness>| {
        if violation.is_none() {
            if let Some(c) = &cap_r {
                if ratio > *c {
                    *violation = Some(w);
                }
            }
        }
        if ratio > *best {
            *best = ratio;
        }
    };
    match condition {
        GrowthCondition::LinearGrowth | GrowthCondition::BoundedTotal => {
            for a in 1..=n {
                for b in 0..=n {
                    let g = &table[a][b];
                    let ratio = if condition == GrowthCondition::LinearGrowth {
                        let s: Rational = g.iter().enumerate().map(|(i, v)| v * int(i as i64 + 1)).sum();
                        s / int((a + b) as i64)
                    } else {
                        g.iter().sum()
                    };
                    let w = GrowthWitness { alpha: a, beta: b, other: None, ratio: to_f64(&ratio) };
                    consider(ratio, w, &mut best, &mut violation);
                }
            }
        }
        GrowthCondition::LipschitzJump => {
            // Float scan over all pairs, exact re-evaluation of near-maximal candidates.
            let tf: Vec<Vec<Vec<f64>>> =
                table.iter().map(|r| r.iter().map(|g| g.iter().map(to_f64).collect()).collect()).collect();
            let diff_f = |a: usize, b: usize, c: usize, d: usize| -> f64 {
                let (x, y) = (&tf[a][b], &tf[c][d]);
                let m = x.len().max(y.len());
                let mut s = 0.0;
                for i in 0..m {
                    let u = x.get(i).copied().unwrap_or(0.0);
                    let v = y.get(i).copied().unwrap_or(0.0);
                    s += (i + 1) as f64 * (u - v).abs();
                }
                s / (a.abs_diff(c) + b.abs_diff(d)) as f64
            };
            let diff_exact = |a: usize, b: usize, c: usize, d: usize| -> Rational {
                let (x, y) = (&table[a][b], &table[c][d]);
                let m = x.len().max(y.len());
                let zero = Rational::zero();
                let mut s = Rational::zero();
                for i in 0..m {
                    let u = x.get(i).unwrap_or(&zero);
                    let v = y.get(i).unwrap_or(&zero);
                    s += (u - v).abs() * int(i as i64 + 1);
                }
                s / int((a.abs_diff(c) + b.abs_diff(d)) as i64)
            };
            let pairs = || {
                (0..=n).flat_map(move |a| {
                    (0..=n).flat_map(move |b| {
                        (0..=n).flat_map(move |c| (0..=n).map(move |d| (a, b, c, d)))
                    })
                })
                .filter(|&(a, b, c, d)| (c, d) > (a, b))
            };
            let fmax = pairs().map(|(a, b, c, d)| diff_f(a, b, c, d)).fold(0.0f64, f64::max);
            // Candidates: near the maximum, and (in scan order) the first above the cap.
            let thresh = fmax * (1.0 - 1e-9) - 1e-12;
            for (a, b, c, d) in pairs() {
                let r = diff_f(a, b, c, d);
                let near_cap = cap.is_finite() && r >= cap * (1.0 - 1e-9);
                if r >= thresh || (near_cap && violation.is_none()) {
                    let e = diff_exact(a, b, c, d);
                    let w = GrowthWitness { alpha: a, beta: b, other: Some((c, d)), ratio: to_f64(&e) };
                    consider(e, w, &mut best, &mut violation);
                }
            }
        }
    }
    let (best_constant, best_exact) = if violation.is_some() {
        (f64::INFINITY, None)
    } else {
        (to_f64(&best), Some(best))
    };
    GrowthReport {
        condition,
        scan_cutoff: n,
        cap,
        best_constant,
        best_constant_exact: best_exact,
        violation,
        scope: format!("finite-range certificate on occupancies 0..={n}"),
    }
}

/// Smallest constant on the scanned range, ignoring any cap.
pub fn growth_constant(family: &RateFamily, condition: GrowthCondition, scan_cutoff: usize) -> Rational {
    check_growth(family, condition, f64::INFINITY, scan_cutoff)
        .best_constant_exact
        .expect("no cap, so no violation")
}

/// (ω₁, ω₂): the extreme values of π(n)·n^b over 1 ≤ n ≤ n_max for the
/// power-law weights π(n) = ∏_{i<n} i/(i+b), computed in floating point.
pub fn power_law_bounds(b: f64, n_max: usize) -> (f64, f64) {
    let mut pi = 1.0f64;
    let (mut lo, mut hi) = (f64::INFINITY, 0.0f64);
    for n in 1..=n_max {
        if n > 1 {
            let i = (n - 1) as f64;
            pi *= i / (i + b);
        }
        let v = pi * (n as f64).powf(b);
        lo = lo.min(v);
        hi = hi.max(v);
    }
    (lo, hi)
}

pub fn params(pairs: &[(&str, &str)]) -> BTreeMap<String, String> {
    pairs.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect()
}
