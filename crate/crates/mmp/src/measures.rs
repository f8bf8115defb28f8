//! Single-site marginals, fugacity tilts, partition functions and the
//! critical point.
//!
//! A [`Marginal`] stores exact weights up to some index and optionally a
//! tail rule `w(n+1)/w(n) = q(n+a)/(n+a+b)` valid from the last stored
//! index on. That form covers geometric tails (b = 0) and the power-law
//! tails of the condensing families, and it makes sums at the critical
//! fugacity available in closed form.

use std::fmt;
use std::sync::Arc;

use num_traits::{One, Signed, Zero};
use serde::Serialize;

use crate::error::{MmpError, Result};
use crate::num::{fmt_rational, int, parse_rational, to_f64, KahanSum, Rational};
use crate::rates::{RateClass, RateFamily};
use crate::seq::Sequence;

pub const DEFAULT_TRUNCATION: usize = 512;
pub const DIVERGENCE_THRESHOLD: f64 = 1e12;

#[derive(Clone, Debug, PartialEq)]
pub enum TailRule {
    /// Weights vanish beyond the stored head.
    Zero,
    /// w(n+1) = w(n)·q(n+a)/(n+a+b) for n ≥ head.len() − 1.
    Ratio { q: Rational, a: Rational, b: Rational },
    /// Nothing known beyond the head.
    Unknown,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Marginal {
    head: Vec<Rational>,
    tail: TailRule,
    normalized: bool,
}

/// A possibly divergent series value.
#[derive(Clone, Debug, Serialize)]
pub struct SeriesValue {
    pub value: f64,
    #[serde(serialize_with = "ser_opt_rational")]
    pub exact: Option<Rational>,
    pub divergent: bool,
    /// True when the value rests on a truncated sum without a tail certificate.
    pub truncated: bool,
}

fn ser_opt_rational<S: serde::Serializer>(x: &Option<Rational>, s: S) -> std::result::Result<S::Ok, S::Error> {
    match x {
        Some(r) => s.serialize_some(&fmt_rational(r)),
        None => s.serialize_none(),
    }
}

impl SeriesValue {
    fn divergent() -> Self {
        SeriesValue { value: f64::INFINITY, exact: None, divergent: true, truncated: false }
    }
    fn exact(x: Rational) -> Self {
        SeriesValue { value: to_f64(&x), exact: Some(x), divergent: false, truncated: false }
    }
}

impl Marginal {
    pub fn new(head: Vec<Rational>, tail: TailRule) -> Result<Marginal> {
        if head.is_empty() {
            return Err(MmpError::InvalidParam { name: "weights".into(), reason: "empty".into() });
        }
        if let Some(i) = head.iter().position(|w| w.is_negative()) {
            return Err(MmpError::Positivity { what: "weight is negative".into(), index: i });
        }
        if let TailRule::Ratio { q, a, b } = &tail {
            let j = int(head.len() as i64 - 1);
            if q.is_negative() || (&j + a).is_negative() || !(&j + a + b).is_positive() {
                return Err(MmpError::InvalidParam {
                    name: "tail".into(),
                    reason: "ratio rule must be nonnegative from the last stored index".into(),
                });
            }
        }
        Ok(Marginal { head, tail, normalized: false })
    }

    /// μ(n) ∝ qⁿ.
    pub fn geometric(q: Rational) -> Marginal {
        Marginal::new(vec![Rational::one()], TailRule::Ratio { q, a: Rational::one(), b: Rational::zero() })
            .expect("valid geometric rule")
    }

    /// π(0) = pi0, π(1) = 1, π(n)/π(n+1) = 1 + b/n.
    pub fn power_law_pi(b: Rational, pi0: Rational) -> Marginal {
        Marginal::new(vec![pi0, Rational::one()], TailRule::Ratio { q: Rational::one(), a: Rational::zero(), b })
            .expect("valid power-law rule")
    }

    /// μ(n) = ∏_{i≤n} i/(i+b), the ZRP marginal of g¹_α = 1 + b/α.
    pub fn zrp_weights(b: Rational) -> Marginal {
        Marginal::new(vec![Rational::one()], TailRule::Ratio { q: Rational::one(), a: Rational::one(), b })
            .expect("valid power-law rule")
    }

    /// Weights of a sequence: exact tail rules for the closed shapes, a
    /// stored head of `DEFAULT_TRUNCATION` weights otherwise.
    pub fn from_sequence(s: &Sequence) -> Result<Marginal> {
        match s {
            Sequence::Geometric(q) => Ok(Marginal::geometric(q.clone())),
            Sequence::PowerLawPi { b, pi0 } => Ok(Marginal::power_law_pi(b.clone(), pi0.clone())),
            Sequence::ZrpWeights(b) => Ok(Marginal::zrp_weights(b.clone())),
            Sequence::Weights(m) => Ok((**m).clone()),
            Sequence::Const(c) => Marginal::new(vec![c.clone()], TailRule::Ratio {
                q: Rational::one(),
                a: Rational::one(),
                b: Rational::zero(),
            }),
            other => {
                if other.defined_from() > 0 {
                    return Err(MmpError::InvalidParam {
                        name: "weights".into(),
                        reason: format!("{other} is undefined at 0"),
                    });
                }
                Marginal::new(other.values(0, DEFAULT_TRUNCATION), TailRule::Unknown)
            }
        }
    }

    pub fn tail(&self) -> &TailRule {
        &self.tail
    }
    pub fn head(&self) -> &[Rational] {
        &self.head
    }
    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    /// Largest index with a known weight; `None` when unbounded.
    pub fn available_upto(&self) -> Option<usize> {
        match self.tail {
            TailRule::Unknown => Some(self.head.len() - 1),
            _ => None,
        }
    }

    pub fn describe(&self) -> String {
        let tail = match &self.tail {
            TailRule::Zero => "zero".to_string(),
            TailRule::Ratio { q, a, b } => {
                format!("ratio q={} a={} b={}", fmt_rational(q), fmt_rational(a), fmt_rational(b))
            }
            TailRule::Unknown => "unknown".to_string(),
        };
        format!("{} stored, tail {tail}", self.head.len())
    }

    fn step(&self, n: usize, w: &Rational) -> Rational {
        match &self.tail {
            TailRule::Zero => Rational::zero(),
            TailRule::Ratio { q, a, b } => {
                let nn = int(n as i64);
                w * q * (&nn + a) / (&nn + a + b)
            }
            TailRule::Unknown => panic!("weight requested beyond the stored range"),
        }
    }

    pub fn try_weight(&self, n: usize) -> Result<Rational> {
        if n < self.head.len() {
            return Ok(self.head[n].clone());
        }
        if self.tail == TailRule::Unknown {
            return Err(MmpError::Extension { needed: n, available: self.head.len() - 1 });
        }
        Ok(self.weights_exact(n).pop().expect("nonempty"))
    }

    pub fn weight(&self, n: usize) -> Rational {
        self.try_weight(n).unwrap_or_else(|e| panic!("{e}"))
    }

    /// Exact weights 0..=upto.
    pub fn weights_exact(&self, upto: usize) -> Vec<Rational> {
        self.try_weights_exact(upto).unwrap_or_else(|e| panic!("{e}"))
    }

    pub fn try_weights_exact(&self, upto: usize) -> Result<Vec<Rational>> {
        if upto < self.head.len() {
            return Ok(self.head[..=upto].to_vec());
        }
        if self.tail == TailRule::Unknown {
            return Err(MmpError::Extension { needed: upto, available: self.head.len() - 1 });
        }
        let mut out = self.head.clone();
        while out.len() <= upto {
            let n = out.len() - 1;
            let next = self.step(n, &out[n]);
            out.push(next);
        }
        Ok(out)
    }

    /// Float weights 0..=upto; the tail rule is iterated in floating point.
    pub fn weights_f64(&self, upto: usize) -> Result<Vec<f64>> {
        let stored = upto.min(self.head.len() - 1);
        let mut out: Vec<f64> = self.head[..=stored].iter().map(to_f64).collect();
        if upto < self.head.len() {
            return Ok(out);
        }
        match &self.tail {
            TailRule::Unknown => Err(MmpError::Extension { needed: upto, available: self.head.len() - 1 }),
            TailRule::Zero => {
                out.resize(upto + 1, 0.0);
                Ok(out)
            }
            TailRule::Ratio { q, a, b } => {
                let (q, a, b) = (to_f64(q), to_f64(a), to_f64(b));
                // Exact weights can underflow f64; rescale through logs if needed.
                let last = &self.head[self.head.len() - 1];
                let mut w = to_f64(last);
                let mut n = self.head.len() - 1;
                if w == 0.0 && !last.is_zero() {
                    return Err(MmpError::InvalidParam { name: "weights".into(), reason: "underflow".into() });
                }
                while out.len() <= upto {
                    let nf = n as f64;
                    w *= q * (nf + a) / (nf + a + b);
                    out.push(w);
                    n += 1;
                }
                Ok(out)
            }
        }
    }

    /// μ_φ(n) ∝ φⁿ μ(n), unnormalized.
    pub fn tilt(&self, phi: &Rational) -> Marginal {
        let mut p = Rational::one();
        let head = self
            .head
            .iter()
            .map(|w| {
                let v = w * &p;
                p = &p * phi;
                v
            })
            .collect();
        let tail = match &self.tail {
            TailRule::Ratio { q, a, b } => TailRule::Ratio { q: q * phi, a: a.clone(), b: b.clone() },
            t => t.clone(),
        };
        Marginal { head, tail, normalized: false }
    }

    pub fn scale(&self, c: &Rational) -> Marginal {
        Marginal { head: self.head.iter().map(|w| w * c).collect(), tail: self.tail.clone(), normalized: false }
    }

    /// Divides by the exact total mass; fails when the mass is not known exactly.
    pub fn normalize(&self) -> Result<Marginal> {
        let z = self.series(0, 1e-15);
        match (z.divergent, z.exact) {
            (false, Some(z)) if z.is_positive() => {
                let mut m = self.scale(&z.recip());
                m.normalized = true;
                Ok(m)
            }
            (true, _) => Err(MmpError::Divergent("total mass".into())),
            _ => Err(MmpError::InvalidParam { name: "weights".into(), reason: "mass not exact".into() }),
        }
    }

    /// First index < upto where the weight vanishes.
    pub fn first_zero(&self, upto: usize) -> Option<usize> {
        let w = self.try_weights_exact(upto).ok()?;
        w.iter().position(|x| x.is_zero())
    }

    pub(crate) fn is_everywhere_positive_from(&self, from: usize) -> bool {
        let head_ok = self.head.iter().skip(from).all(|w| w.is_positive());
        let tail_ok = match &self.tail {
            TailRule::Ratio { q, .. } => q.is_positive(),
            TailRule::Zero => false,
            TailRule::Unknown => true,
        };
        head_ok && tail_ok
    }

    /// ∑ nᵐ μ(n) for m ∈ {0, 1}, to relative tolerance `tol`, with divergence detection.
    pub fn series(&self, moment: u32, tol: f64) -> SeriesValue {
        assert!(moment <= 1, "only the mass and the first moment are supported");
        let t = self.head.len();
        let mut head_exact = Rational::zero();
        for (n, w) in self.head.iter().enumerate() {
            head_exact += if moment == 0 { w.clone() } else { w * int(n as i64) };
        }
        let last = &self.head[t - 1];
        let j = t - 1;
        match &self.tail {
            TailRule::Zero => SeriesValue::exact(head_exact),
            TailRule::Unknown => {
                let mut s = KahanSum::new();
                for (n, w) in self.head.iter().enumerate() {
                    s.add(to_f64(w) * if moment == 0 { 1.0 } else { n as f64 });
                }
                let v = s.value();
                let divergent = v > DIVERGENCE_THRESHOLD || ratio_test_divergent(&self.head, moment);
                SeriesValue {
                    value: if divergent { f64::INFINITY } else { v },
                    exact: None,
                    divergent,
                    truncated: !divergent,
                }
            }
            TailRule::Ratio { q, a, b } => {
                if q.is_zero() || last.is_zero() {
                    return SeriesValue::exact(head_exact);
                }
                let one = Rational::one();
                if *q > one {
                    return SeriesValue::divergent();
                }
                let jr = int(j as i64);
                if *q == one {
                    // Closed forms from telescoping (n+a+b−1)w(n) and (n+a+b−1)(n+a)w(n).
                    let two = int(2);
                    let s_j = |w: &Rational| (&jr + a + b - &one) * w / (b - &one);
                    let tail = if moment == 0 {
                        if *b <= one {
                            return SeriesValue::divergent();
                        }
                        s_j(last) - last
                    } else {
                        if *b <= two {
                            return SeriesValue::divergent();
                        }
                        let f = (&jr + a + b - &one) * (&jr + a) * last / (b - &two);
                        f - a * s_j(last) - &jr * last
                    };
                    return SeriesValue::exact(head_exact + tail);
                }
                if b.is_zero() {
                    let r = q / (&one - q);
                    let tail = if moment == 0 {
                        last * &r
                    } else {
                        last * (&jr * &r + q / ((&one - q) * (&one - q)))
                    };
                    return SeriesValue::exact(head_exact + tail);
                }
                // q < 1 with a power correction: numeric summation with a geometric remainder bound.
                let (qf, af, bf) = (to_f64(q), to_f64(a), to_f64(b));
                let mut s = KahanSum::new();
                s.add(to_f64(&head_exact));
                let mut w = to_f64(last);
                let mut n = j;
                for _ in 0..50_000_000u64 {
                    let nf = n as f64;
                    w *= qf * (nf + af) / (nf + af + bf);
                    n += 1;
                    let term = if moment == 0 { w } else { w * n as f64 };
                    s.add(term);
                    let nf = n as f64;
                    let mut rho = qf * ((nf + af) / (nf + af + bf)).max(1.0);
                    if moment == 1 {
                        rho *= (nf + 1.0) / nf;
                    }
                    if rho < 1.0 {
                        let rem = term * rho / (1.0 - rho);
                        if rem <= tol * s.value().abs() || rem == 0.0 {
                            break;
                        }
                    }
                }
                SeriesValue { value: s.value(), exact: None, divergent: false, truncated: false }
            }
        }
    }

    /// Two-column text table with a header line carrying the tail rule.
    pub fn to_table(&self) -> String {
        let tail = match &self.tail {
            TailRule::Zero => "tail=zero".to_string(),
            TailRule::Unknown => "tail=unknown".to_string(),
            TailRule::Ratio { q, a, b } => {
                format!("tail=ratio q={} a={} b={}", fmt_rational(q), fmt_rational(a), fmt_rational(b))
            }
        };
        let mut out = format!("# marginal {tail} normalized={}\n", self.normalized);
        for (n, w) in self.head.iter().enumerate() {
            out.push_str(&format!("{n} {}\n", fmt_rational(w)));
        }
        out
    }

    pub fn from_table(text: &str) -> Result<Marginal> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header = lines.next().ok_or_else(|| MmpError::Parse("empty marginal table".into()))?;
        let fields: Vec<&str> = header.trim_start_matches('#').split_whitespace().collect();
        let get = |key: &str| fields.iter().find_map(|f| f.strip_prefix(&format!("{key}=")[..]));
        let tail = match get("tail") {
            Some("zero") => TailRule::Zero,
            Some("unknown") => TailRule::Unknown,
            Some("ratio") => {
                let r = |k: &str| {
                    get(k)
                        .ok_or_else(|| MmpError::Parse(format!("ratio tail needs {k}")))
                        .and_then(parse_rational)
                };
                TailRule::Ratio { q: r("q")?, a: r("a")?, b: r("b")? }
            }
            other => return Err(MmpError::Parse(format!("bad tail rule {other:?}"))),
        };
        let mut head = Vec::new();
        for (i, line) in lines.enumerate() {
            let mut it = line.split_whitespace();
            let n: usize = it
                .next()
                .and_then(|x| x.parse().ok())
                .ok_or_else(|| MmpError::Parse(format!("bad row {line:?}")))?;
            if n != i {
                return Err(MmpError::Parse(format!("rows must be consecutive from 0, got {n}")));
            }
            head.push(parse_rational(it.next().unwrap_or(""))?);
        }
        let mut m = Marginal::new(head, tail)?;
        m.normalized = get("normalized") == Some("true");
        Ok(m)
    }
}

impl fmt::Display for Marginal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.describe())
    }
}

/// Ratio test on the last stored weights: true when the terms stop decreasing.
fn ratio_test_divergent(head: &[Rational], moment: u32) -> bool {
    let n = head.len();
    if n < 8 {
        return false;
    }
    let tail: Vec<f64> = head[n * 3 / 4..].iter().map(to_f64).collect();
    let start = n * 3 / 4;
    let term = |i: usize| tail[i] * if moment == 0 { 1.0 } else { (start + i) as f64 };
    (1..tail.len()).all(|i| term(i) >= term(i - 1) && term(i) > 0.0)
}

/// μ_φ with its partition function and mean.
#[derive(Clone, Debug)]
pub struct TiltedFamily {
    pub base: Marginal,
    pub phi: Rational,
    pub tilted: Marginal,
    pub z: SeriesValue,
    pub first_moment: SeriesValue,
    pub rho: f64,
}

impl TiltedFamily {
    pub fn divergent(&self) -> bool {
        self.z.divergent
    }

    /// μ_φ(n) = φⁿ μ(n) / Z_φ, exact when Z_φ is.
    pub fn probability(&self, n: usize) -> Option<Rational> {
        let z = self.z.exact.as_ref()?;
        Some(self.tilted.try_weight(n).ok()? / z)
    }

    pub fn probability_f64(&self, upto: usize) -> Result<Vec<f64>> {
        if self.z.divergent {
            return Err(MmpError::Divergent("tilted partition function".into()));
        }
        Ok(self.tilted.weights_f64(upto)?.into_iter().map(|w| w / self.z.value).collect())
    }

    pub fn normalized(&self) -> Result<Marginal> {
        self.tilted.normalize()
    }
}

pub fn tilt_and_partition(mu: &Marginal, phi: &Rational) -> Result<TiltedFamily> {
    if !phi.is_positive() {
        return Err(MmpError::InvalidParam { name: "phi".into(), reason: "fugacity must be positive".into() });
    }
    let tilted = mu.tilt(phi);
    let z = tilted.series(0, 1e-14);
    let first_moment = if z.divergent { SeriesValue::divergent() } else { tilted.series(1, 1e-14) };
    let rho = if z.divergent {
        f64::NAN
    } else if let (Some(m), Some(zz)) = (&first_moment.exact, &z.exact) {
        to_f64(&(m / zz))
    } else {
        first_moment.value / z.value
    };
    Ok(TiltedFamily { base: mu.clone(), phi: phi.clone(), tilted, z, first_moment, rho })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub enum CriticalFugacity {
    Exact(#[serde(serialize_with = "ser_rational")] Rational),
    Estimate(f64),
    /// Radius of convergence is infinite.
    Infinite,
    Undetermined,
}

fn ser_rational<S: serde::Serializer>(x: &Rational, s: S) -> std::result::Result<S::Ok, S::Error> {
    s.serialize_str(&fmt_rational(x))
}

impl CriticalFugacity {
    pub fn value(&self) -> f64 {
        match self {
            CriticalFugacity::Exact(r) => to_f64(r),
            CriticalFugacity::Estimate(x) => *x,
            CriticalFugacity::Infinite => f64::INFINITY,
            CriticalFugacity::Undetermined => f64::NAN,
        }
    }
}

/// φ_c, and Z and ρ at φ_c. `z_at_phi_c` set to divergent means φ_c ∉ Rad(Z);
/// a divergent `first_moment` means φ_c ∉ Rad(Z′).
#[derive(Clone, Debug, Serialize)]
pub struct CriticalProfile {
    pub phi_c: CriticalFugacity,
    pub method: String,
    pub z_at_phi_c: SeriesValue,
    pub first_moment: SeriesValue,
    /// ρ_c; infinite when the first moment diverges, NaN when undetermined.
    pub rho_c: f64,
    #[serde(serialize_with = "ser_opt_rational")]
    pub rho_c_exact: Option<Rational>,
    pub certified: bool,
}

impl CriticalProfile {
    pub fn z_diverges(&self) -> bool {
        self.z_at_phi_c.divergent
    }
}

pub fn critical_profile(mu: &Marginal, tol: f64) -> CriticalProfile {
    match mu.tail() {
        TailRule::Zero => CriticalProfile {
            phi_c: CriticalFugacity::Infinite,
            method: "finite support".into(),
            z_at_phi_c: SeriesValue::divergent(),
            first_moment: SeriesValue::divergent(),
            rho_c: f64::NAN,
            rho_c_exact: None,
            certified: true,
        },
        TailRule::Ratio { q, .. } => {
            if q.is_zero() {
                return critical_profile(&Marginal { head: mu.head.clone(), tail: TailRule::Zero, normalized: false }, tol);
            }
            let phi_c = q.recip();
            let at = mu.tilt(&phi_c);
            let z = at.series(0, tol);
            let m1 = if z.divergent { SeriesValue::divergent() } else { at.series(1, tol) };
            let (rho_c, rho_c_exact) = if z.divergent {
                (f64::NAN, None)
            } else if m1.divergent {
                (f64::INFINITY, None)
            } else if let (Some(a), Some(b)) = (&m1.exact, &z.exact) {
                let r = a / b;
                (to_f64(&r), Some(r))
            } else {
                (m1.value / z.value, None)
            };
            CriticalProfile {
                phi_c: CriticalFugacity::Exact(phi_c),
                method: "tail rule".into(),
                z_at_phi_c: z,
                first_moment: m1,
                rho_c,
                rho_c_exact,
                certified: true,
            }
        }
        TailRule::Unknown => ratio_test_profile(mu),
    }
}

fn ratio_test_profile(mu: &Marginal) -> CriticalProfile {
    let undetermined = |why: &str| CriticalProfile {
        phi_c: CriticalFugacity::Undetermined,
        method: format!("ratio test: {why}"),
        z_at_phi_c: SeriesValue { value: f64::NAN, exact: None, divergent: false, truncated: true },
        first_moment: SeriesValue { value: f64::NAN, exact: None, divergent: false, truncated: true },
        rho_c: f64::NAN,
        rho_c_exact: None,
        certified: false,
    };
    let w: Vec<f64> = mu.head.iter().map(to_f64).collect();
    let n = w.len();
    if n < 16 {
        return undetermined("too few stored weights");
    }
    if w[n / 2..].iter().any(|x| *x <= 0.0 || !x.is_finite()) {
        return undetermined("vanishing or non-finite weights");
    }
    let r: Vec<f64> = (n / 2..n - 1).map(|i| w[i] / w[i + 1]).collect();
    let d: Vec<f64> = r.windows(2).map(|p| p[1] - p[0]).collect();
    let scale = r.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    let eps = 1e-12 * scale;
    let q = &d[d.len() / 2..];
    let up = q.iter().all(|x| *x >= -eps);
    let down = q.iter().all(|x| *x <= eps);
    if !up && !down {
        return undetermined("oscillating ratios");
    }
    let m = r.len();
    let (i1, i2) = (m / 2, m - 1);
    let (n1, n2) = ((n / 2 + i1) as f64, (n / 2 + i2) as f64);
    if up && r[i2] > 1e6 {
        return CriticalProfile {
            phi_c: CriticalFugacity::Infinite,
            method: "ratio test: unbounded ratios".into(),
            z_at_phi_c: SeriesValue::divergent(),
            first_moment: SeriesValue::divergent(),
            rho_c: f64::NAN,
            rho_c_exact: None,
            certified: false,
        };
    }
    // Ratios behave like L(1 + b/n): extrapolate L, then read off b.
    let limit = (n2 * r[i2] - n1 * r[i1]) / (n2 - n1);
    let b = n2 * (r[i2] / limit - 1.0);
    let z_div = b <= 1.0 + 1e-6;
    let m_div = b <= 2.0 + 1e-6;
    let phi = 1.0 / limit;
    let mut z = KahanSum::new();
    let mut m1 = KahanSum::new();
    let mut p = 1.0f64;
    for (i, x) in w.iter().enumerate() {
        z.add(x * p);
        m1.add(i as f64 * x * p);
        p *= phi;
    }
    let zs = if z_div {
        SeriesValue::divergent()
    } else {
        SeriesValue { value: z.value(), exact: None, divergent: false, truncated: true }
    };
    let ms = if m_div {
        SeriesValue::divergent()
    } else {
        SeriesValue { value: m1.value(), exact: None, divergent: false, truncated: true }
    };
    let rho_c = if z_div { f64::NAN } else if m_div { f64::INFINITY } else { m1.value() / z.value() };
    CriticalProfile {
        phi_c: CriticalFugacity::Estimate(phi),
        method: format!("ratio test: fitted power correction b = {b:.4}"),
        z_at_phi_c: zs,
        first_moment: ms,
        rho_c,
        rho_c_exact: None,
        certified: false,
    }
}

/// Stationary single-site weights implied by the rates of each process class,
/// tilted by φ and stored up to `truncation`; a tail rule is attached when the
/// rate sequence has a recognisable closed form.
pub fn marginal_from_rates(family: &RateFamily, class: RateClass, phi: &Rational, truncation: usize) -> Result<Marginal> {
    let truncation = truncation.max(2);
    let refuse = |what: &str, index: usize| Err(MmpError::Positivity { what: what.into(), index });
    match class {
        RateClass::SingleJumpZrp | RateClass::MmZrp => {
            // μ(α) = φ^α / (g¹_α)!
            let mut head = vec![Rational::one()];
            for a in 1..=truncation {
                let g = family.rate(1, a, 0);
                if !g.is_positive() {
                    return refuse("g1_alpha must be positive", a);
                }
                let next = &head[a - 1] * phi / g;
                head.push(next);
            }
            let tail = family
                .first_rate_sequence()
                .and_then(|s| s.ratio_form())
                .filter(|(start, ..)| *start <= truncation)
                .map(|(_, c, a, b)| {
                    // 1/g(n+1) = (1/c)(n+1+a+b)/(n+1+a)
                    TailRule::Ratio { q: phi / c, a: Rational::one() + &a + &b, b: -b }
                })
                .unwrap_or(TailRule::Unknown);
            Marginal::new(head, tail)
        }
        RateClass::SingleJumpTp => {
            // μ(α) = φ^α ∏_{j<α} g¹_{*,j}
            let mut head = vec![Rational::one()];
            for a in 1..=truncation {
                let g = family.rate(1, 1, a - 1);
                if !g.is_positive() {
                    return refuse("g1_(*,beta) must be positive", a - 1);
                }
                let next = &head[a - 1] * phi * g;
                head.push(next);
            }
            let tail = family
                .first_rate_sequence()
                .and_then(|s| s.ratio_form())
                .filter(|(start, ..)| *start <= truncation)
                .map(|(_, c, a, b)| TailRule::Ratio { q: phi * c, a, b })
                .unwrap_or(TailRule::Unknown);
            Marginal::new(head, tail)
        }
        RateClass::SingleJumpMp | RateClass::General => {
            // μ(α) = φ^α ∏_{k=1}^{α} g¹_{1,k−1}/g¹_{k,0}
            let mut head = vec![Rational::one()];
            for a in 1..=truncation {
                let up = family.rate(1, 1, a - 1);
                let down = family.rate(1, a, 0);
                if !up.is_positive() {
                    return refuse("g1_(1,alpha) must be positive", a - 1);
                }
                if !down.is_positive() {
                    return refuse("g1_(alpha,0) must be positive", a);
                }
                let next = &head[a - 1] * phi * up / down;
                head.push(next);
            }
            let tail = family
                .mp_parts()
                .and_then(|(dep, arr)| mp_tail(dep, arr, phi, truncation))
                .unwrap_or(TailRule::Unknown);
            Marginal::new(head, tail)
        }
        RateClass::MmTp => {
            let w = w_weights(family, truncation)?;
            let mut p = Rational::one();
            let head: Vec<Rational> = w
                .into_iter()
                .map(|x| {
                    let v = x * &p;
                    p = &p * phi;
                    v
                })
                .collect();
            let tail = match family.table_extent() {
                // Beyond the table every jump of size ≥ 2 has rate 0, so the ratio freezes.
                Some(ext) if truncation > ext + 1 => {
                    let r = &head[truncation] / &head[truncation - 1];
                    TailRule::Ratio { q: r, a: Rational::one(), b: Rational::zero() }
                }
                _ => TailRule::Unknown,
            };
            Marginal::new(head, tail)
        }
    }
}

fn mp_tail(dep: &Sequence, arr: &Sequence, phi: &Rational, truncation: usize) -> Option<TailRule> {
    // ratio μ(n+1)/μ(n) = φ dep(1) arr(n) / (arr(0) dep(n+1))
    let k = phi * dep.value(1) / arr.value(0);
    let (sa, ca, aa, ba) = arr.ratio_form()?;
    let (sd, cd, ad, bd) = dep.ratio_form()?;
    if sa > truncation || sd > truncation + 1 {
        return None;
    }
    if bd.is_zero() {
        Some(TailRule::Ratio { q: k * ca / cd, a: aa, b: ba })
    } else if ba.is_zero() {
        Some(TailRule::Ratio { q: k * ca / cd, a: Rational::one() + &ad + &bd, b: -bd })
    } else {
        None
    }
}

/// w(0..=cutoff) of a multiple-jump target process:
/// w(0)=1, w(1)=g¹_{*,0}, w(2)=g¹_{*,0}g¹_{*,1}, and
/// w(α+1)/w(α) = g¹_{*,1} + ∑_{i=2}^{α}(g^i_{*,1} − g^i_{*,0}) for α ≥ 2.
pub(crate) fn w_weights(family: &RateFamily, cutoff: usize) -> Result<Vec<Rational>> {
    let g = |k: usize, b: usize| family.rate(k, k, b);
    let g10 = g(1, 0);
    let g11 = g(1, 1);
    if g10.is_zero() || g11.is_zero() {
        return Err(MmpError::Positivity { what: "g1_(*,0) g1_(*,1) must be nonzero".into(), index: 1 });
    }
    let mut w = vec![Rational::one(), g10.clone(), &g10 * &g11];
    let mut partial = g11;
    for a in 2..cutoff.max(2) {
        partial += g(a, 1) - g(a, 0);
        if !partial.is_positive() {
            return Err(MmpError::Positivity { what: "partial sum of target rates must be positive".into(), index: a });
        }
        let next = &w[a] * &partial;
        w.push(next);
    }
    w.truncate(cutoff.max(1) + 1);
    Ok(w)
}

pub fn marginal_handle(m: Marginal) -> Arc<Marginal> {
    Arc::new(m)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::num::rat;
    use crate::rates::{make_builtin, params};

    #[test]
    fn geometric_tilt_matches_closed_form() {
        // μ(n) = 2^{−n−1}, φ = 1/2: μ_φ(n) = (3/4) 4^{−n}, Z_φ = 2/3
        let mu = Marginal::geometric(rat(1, 2)).scale(&rat(1, 2));
        let t = tilt_and_partition(&mu, &rat(1, 2)).unwrap();
        assert_eq!(t.z.exact, Some(rat(2, 3)));
        for n in 0..10 {
            assert_eq!(t.probability(n).unwrap(), rat(3, 4) * num_traits::pow(rat(1, 4), n));
        }
        // partial summation cross-check
        let partial: f64 = mu.tilt(&rat(1, 2)).weights_f64(200).unwrap().iter().sum();
        assert!((partial - 2.0 / 3.0).abs() < 1e-14);
    }

    #[test]
    fn identity_tilt_on_normalized_measure() {
        let mu = Marginal::geometric(rat(1, 3)).normalize().unwrap();
        let t = tilt_and_partition(&mu, &int(1)).unwrap();
        assert_eq!(t.z.exact, Some(int(1)));
        for n in 0..10 {
            assert_eq!(t.probability(n).unwrap(), mu.weight(n));
        }
    }

    #[test]
    fn divergent_tilt_is_reported() {
        let mu = Marginal::geometric(rat(1, 2));
        let t = tilt_and_partition(&mu, &int(3)).unwrap();
        assert!(t.divergent());
        assert!(t.probability_f64(3).is_err());
    }

    #[test]
    fn critical_mass_of_zrp_weights() {
        // μ_1(0) = 1/Z_1 = (b−1)/b
        for b in [rat(3, 2), int(2), int(4)] {
            let t = tilt_and_partition(&Marginal::zrp_weights(b.clone()), &int(1)).unwrap();
            assert_eq!(t.probability(0).unwrap(), (&b - int(1)) / &b);
        }
    }

    #[test]
    fn critical_profiles() {
        let p = critical_profile(&Marginal::zrp_weights(int(4)), 1e-12);
        assert_eq!(p.phi_c, CriticalFugacity::Exact(int(1)));
        assert_eq!(p.rho_c_exact, Some(rat(1, 2)));
        let p = critical_profile(&Marginal::zrp_weights(rat(3, 2)), 1e-12);
        assert!(!p.z_at_phi_c.divergent);
        assert!(p.rho_c.is_infinite());
        let p = critical_profile(&Marginal::geometric(rat(1, 3)), 1e-12);
        assert_eq!(p.phi_c, CriticalFugacity::Exact(int(3)));
        assert!(p.z_at_phi_c.divergent);
    }

    #[test]
    fn ratio_test_estimates_power_law() {
        let exact = Marginal::zrp_weights(int(4));
        let stored = Marginal::new(exact.weights_exact(400), TailRule::Unknown).unwrap();
        let p = critical_profile(&stored, 1e-12);
        match p.phi_c {
            CriticalFugacity::Estimate(x) => assert!((x - 1.0).abs() < 1e-3, "{x}"),
            ref other => panic!("{other:?}"),
        }
        assert!(!p.z_at_phi_c.divergent);
        let osc: Vec<Rational> = (0..64).map(|n| if n % 2 == 0 { int(1) } else { rat(1, 3) }).collect();
        let p = critical_profile(&Marginal::new(osc, TailRule::Unknown).unwrap(), 1e-12);
        assert_eq!(p.phi_c, CriticalFugacity::Undetermined);
    }

    #[test]
    fn power_correction_with_subunit_ratio_sums_numerically() {
        // w(n+1)/w(n) = (1/2)(n+1)/(n+3); compare with brute force.
        let m = Marginal::new(vec![int(1)], TailRule::Ratio { q: rat(1, 2), a: int(1), b: int(2) }).unwrap();
        let brute: f64 = m.weights_f64(400).unwrap().iter().sum();
        let s = m.series(0, 1e-15);
        assert!((s.value - brute).abs() < 1e-13);
        let brute1: f64 = m.weights_f64(400).unwrap().iter().enumerate().map(|(n, w)| n as f64 * w).sum();
        assert!((m.series(1, 1e-15).value - brute1).abs() < 1e-12);
    }

    #[test]
    fn zrp_marginal_from_rates() {
        let f = make_builtin("single_zrp", &params(&[("g", "one_plus_b_over(2)")])).unwrap();
        let m = marginal_from_rates(&f, RateClass::SingleJumpZrp, &int(1), 40).unwrap();
        let want = Marginal::zrp_weights(int(2));
        assert_eq!(m.weights_exact(80), want.weights_exact(80));
    }

    #[test]
    fn departure_independent_family_gives_geometric_weights() {
        let f = make_builtin("ex1_h", &params(&[("h", "reciprocal")])).unwrap();
        let m = marginal_from_rates(&f, RateClass::MmZrp, &rat(1, 3), 20).unwrap();
        let t = tilt_and_partition(&m, &int(1)).unwrap();
        for n in 0..30 {
            assert_eq!(t.probability(n).unwrap(), rat(2, 3) * num_traits::pow(rat(1, 3), n));
        }
    }

    #[test]
    fn asymmetric_target_marginal() {
        // g¹_{*,0} = g0, g¹_{*,β} = g1 for β > 0: μ_φ(α) = μ_φ(0) φ^α g0 g1^{α−1}
        let check = |g0: Rational, g1: Rational, phi: Rational| {
            let spec = format!("piecewise(1, const({}), const({}))", fmt_rational(&g0), fmt_rational(&g1));
            let f = make_builtin("single_tp", &params(&[("g", &spec)])).unwrap();
            let m = marginal_from_rates(&f, RateClass::SingleJumpTp, &int(1), 30).unwrap();
            let t = tilt_and_partition(&m, &phi).unwrap();
            let x = &phi;
            let one = int(1);
            let mu0 = (&one - x * &g1) / (&one - x * &g1 + x * &g0);
            assert_eq!(t.probability(0).unwrap(), mu0);
            for a in 1..12usize {
                let want = &mu0 * num_traits::pow(x.clone(), a) * &g0 * num_traits::pow(g1.clone(), a - 1);
                assert_eq!(t.probability(a).unwrap(), want);
            }
            mu0
        };
        check(int(3), rat(1, 2), rat(1, 2));
        // with g1 = 1 the mass at 0 also equals (1−x)g1/(g1 + x(g0−g1))
        let (g0, g1, x) = (int(3), int(1), rat(1, 3));
        let mu0 = check(g0.clone(), g1.clone(), x.clone());
        assert_eq!(mu0, (int(1) - &x) * &g1 / (&g1 + &x * (&g0 - &g1)));
    }

    #[test]
    fn refuses_vanishing_rates() {
        let f = make_builtin("single_zrp", &params(&[("g", "table(1; 0, 1, 0)")])).unwrap();
        match marginal_from_rates(&f, RateClass::SingleJumpZrp, &int(1), 10) {
            Err(MmpError::Positivity { index, .. }) => assert_eq!(index, 2),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn table_round_trip() {
        let m = Marginal::power_law_pi(rat(3, 2), rat(5, 2));
        let back = Marginal::from_table(&m.to_table()).unwrap();
        assert_eq!(m, back);
        let g = Marginal::new(vec![int(1), rat(1, 7)], TailRule::Unknown).unwrap();
        assert_eq!(Marginal::from_table(&g.to_table()).unwrap(), g);
    }
}
