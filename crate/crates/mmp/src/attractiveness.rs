//! Attractiveness of mass migration processes through the tail sums
//! Σ^k_{α,β} = ∑_{k'>k} g^{k'}_{α,β}, and the F diagnostic for product-shape
//! zero-range rates.

use num_traits::{One, Zero};
use serde::Serialize;

use crate::num::{to_f64, Rational};
use crate::rates::{RateClass, RateFamily, RateKind};
use crate::report::Verdict;
use crate::seq::Sequence;

/// Σ^k_{α,β} for 0 ≤ α, β ≤ cutoff and 0 ≤ k ≤ α.
#[derive(Clone, Debug)]
pub struct TailTable {
    pub cutoff: usize,
    /// sigma[α][β][k]
    sigma: Vec<Vec<Vec<Rational>>>,
}

impl TailTable {
    /// Σ^k_{α,β}; zero for k ≥ α.
    pub fn get(&self, k: usize, alpha: usize, beta: usize) -> Rational {
        self.sigma[alpha][beta].get(k).cloned().unwrap_or_else(Rational::zero)
    }
}

pub fn tail_sums(family: &RateFamily, cutoff: usize) -> TailTable {
    let sigma = (0..=cutoff)
        .map(|a| {
            (0..=cutoff)
                .map(|b| {
                    let rates = family.rates_at(a, b);
                    let mut col = vec![Rational::zero(); a + 1];
                    for k in (0..a).rev() {
                        col[k] = &col[k + 1] + &rates[k];
                    }
                    col
                })
                .collect()
        })
        .collect();
    TailTable { cutoff, sigma }
}

#[derive(Clone, Debug, Serialize)]
pub struct AttractivenessReport {
    pub class: RateClass,
    pub cutoff: usize,
    pub pass: bool,
    pub conditions: Vec<Verdict>,
    /// For departure-only rates: whether the two equivalent forms of the
    /// condition agree at every α of the grid.
    pub equivalent_forms_agree: Option<bool>,
}

impl AttractivenessReport {
    pub fn witness(&self) -> Option<String> {
        self.conditions.iter().find(|v| !v.pass).and_then(|v| v.witness.clone().map(|w| format!("{}: {w}", v.name)))
    }
}

fn diff(a: &Rational, b: &Rational) -> f64 {
    to_f64(&(a - b)).max(0.0)
}

/// Class-dispatched attractiveness check on α, β ≤ cutoff.
pub fn check_attractiveness(family: &RateFamily, cutoff: usize) -> AttractivenessReport {
    let class = family.class();
    let mut conditions = Vec::new();
    let mut equivalent_forms_agree = None;
    if class.is_zrp_like() {
        let rows = zrp_forms_per_alpha(family, cutoff);
        let mut first = Verdict::new("tail-sum form (departure rates)", cutoff);
        let mut second = Verdict::new("partial-sum form (departure rates)", cutoff);
        for (a, ok1, ok2) in &rows {
            first.record(0.0, *ok1, || format!("alpha = {a}"));
            second.record(0.0, *ok2, || format!("alpha = {a}"));
        }
        equivalent_forms_agree = Some(rows.iter().all(|(_, x, y)| x == y));
        conditions.push(first);
        conditions.push(second);
    } else if class.is_tp_like() {
        let g = |k: usize, b: usize| family.rate(k, k, b);
        let mut mono = Verdict::new("monotone target rates", cutoff);
        let mut tails = Verdict::new("shifted tail sums (target rates)", cutoff);
        for a in 1..=cutoff {
            for b in 0..=cutoff {
                let (x, y, z) = (g(a + 1, b), g(a, b), g(a, b + 1));
                mono.record(diff(&x, &y).max(diff(&z, &y)), x <= y && z <= y, || format!("(alpha, beta) = ({a}, {b})"));
                for k in 0..a {
                    let lhs: Rational = (k + 2..=a).map(|j| g(j, b)).sum();
                    let rhs: Rational = (k + 1..=a).map(|j| g(j, b + 1)).sum();
                    tails.record(diff(&lhs, &rhs), lhs <= rhs, || format!("(alpha, beta, k) = ({a}, {b}, {k})"));
                }
            }
        }
        conditions.push(mono);
        conditions.push(tails);
    } else {
        let t = tail_sums(family, cutoff + 1);
        let mut dep = Verdict::new("departure tail sums", cutoff);
        let mut arr = Verdict::new("arrival tail sums", cutoff);
        for a in 1..=cutoff {
            for b in 0..=cutoff {
                for k in 0..=a {
                    let s = t.get(k, a, b);
                    let (lo, hi) = (t.get(k + 1, a + 1, b), t.get(k, a + 1, b));
                    dep.record(diff(&lo, &s).max(diff(&s, &hi)), lo <= s && s <= hi, || {
                        format!("(alpha, beta, k) = ({a}, {b}, {k})")
                    });
                    let (lo, mid) = (t.get(k + 1, a, b), t.get(k, a, b + 1));
                    arr.record(diff(&lo, &mid).max(diff(&mid, &s)), lo <= mid && mid <= s, || {
                        format!("(alpha, beta, k) = ({a}, {b}, {k})")
                    });
                }
            }
        }
        conditions.push(dep);
        conditions.push(arr);
    }
    let pass = conditions.iter().all(|v| v.pass);
    AttractivenessReport { class, cutoff, pass, conditions, equivalent_forms_agree }
}

/// For each 1 ≤ α ≤ cutoff, whether the tail-sum form holds for all k and
/// whether the partial-sum form holds for all m, on departure rates g^k_α.
pub fn zrp_forms_per_alpha(family: &RateFamily, cutoff: usize) -> Vec<(usize, bool, bool)> {
    let rows: Vec<Vec<Rational>> = (0..=cutoff + 1).map(|a| family.rates_at(a, 0)).collect();
    let g = |k: usize, a: usize| if k == 0 || k > a { Rational::zero() } else { rows[a][k - 1].clone() };
    let tail = |k: usize, a: usize| -> Rational { (k + 1..=a).map(|j| g(j, a)).sum() };
    (1..=cutoff)
        .map(|a| {
            let first = (0..=a).all(|k| {
                let s = tail(k, a);
                tail(k + 1, a + 1) <= s && s <= tail(k, a + 1)
            });
            let mut partial = Rational::zero();
            let mut second = true;
            for m in 1..=a {
                let j = m - 1;
                partial += g(a - j, a) - g(a + 1 - j, a + 1);
                if partial < Rational::zero() || partial > g(a + 1 - m, a + 1) {
                    second = false;
                }
            }
            (a, first, second)
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum Monotonicity {
    Nonincreasing,
    Nondecreasing,
    Neither,
}

/// Direction of r(n) = π(n)/π(n+1) on 1 ≤ n ≤ upto. Constant counts as nonincreasing.
pub fn ratio_monotonicity(pi: &Sequence, upto: usize) -> Monotonicity {
    let p = pi.values(0, upto + 2);
    let r: Vec<Rational> = (1..=upto + 1).map(|n| &p[n] / &p[n + 1]).collect();
    if r.windows(2).all(|w| w[1] <= w[0]) {
        Monotonicity::Nonincreasing
    } else if r.windows(2).all(|w| w[1] >= w[0]) {
        Monotonicity::Nondecreasing
    } else {
        Monotonicity::Neither
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct ProductShapeReport {
    pub monotonicity: Monotonicity,
    /// h(α+1)/π(α+1) ≤ h(α)/π(α)
    pub ratio_decay: Verdict,
    /// Second condition, paired with `ratio_decay` when r is nonincreasing.
    pub weighted_sum: Option<Verdict>,
    /// The h-free necessary condition when r is nonincreasing.
    pub h_free: Option<Verdict>,
    /// Sufficient condition when r is nondecreasing.
    pub growth_bound: Option<Verdict>,
    /// Attractiveness as decided by the conditions above, `None` when they
    /// do not decide it.
    pub attractive: Option<bool>,
    /// Verdict of the class-level check on the assembled family.
    pub general_check: bool,
    pub consistent: bool,
    pub note: Option<String>,
}

/// Attractiveness of g^k_α = π(α−k)h(k)/π(α) from conditions on π and h.
pub fn check_product_shape_attractiveness(pi: &Sequence, h: &Sequence, cutoff: usize) -> ProductShapeReport {
    let p = pi.values(0, cutoff + 2);
    let hv: Vec<Rational> = (0..=cutoff + 1).map(|k| if k == 0 { Rational::zero() } else { h.value(k) }).collect();
    let monotonicity = ratio_monotonicity(pi, cutoff);

    let mut ratio_decay = Verdict::new("h/pi nonincreasing", cutoff);
    for a in 1..=cutoff {
        let (x, y) = (&hv[a + 1] / &p[a + 1], &hv[a] / &p[a]);
        ratio_decay.record(diff(&x, &y), x <= y, || format!("alpha = {a}"));
    }

    let family = RateFamily::from_kind(
        RateClass::MmZrp,
        "product_shape",
        Default::default(),
        format!("pi = {pi}, h = {h}"),
        RateKind::ProductShape { pi: pi.clone(), h: h.clone() },
    );
    let general = check_attractiveness(&family, cutoff);

    let mut report = ProductShapeReport {
        monotonicity,
        ratio_decay,
        weighted_sum: None,
        h_free: None,
        growth_bound: None,
        attractive: None,
        general_check: general.pass,
        consistent: true,
        note: None,
    };
    match monotonicity {
        Monotonicity::Nonincreasing => {
            let mut ws = Verdict::new("weighted sum bound", cutoff);
            for a in 1..=cutoff {
                let lhs: Rational =
                    (1..=a).map(|k| &hv[k] * (&p[a - k] / &p[a] - &p[a - k + 1] / &p[a + 1])).sum();
                let rhs = &p[0] * &hv[a + 1] / &p[a + 1];
                ws.record(diff(&lhs, &rhs), lhs <= rhs, || format!("alpha = {a}"));
            }
            let mut hf = Verdict::new("h-free convolution bound", cutoff);
            for a in 2..=cutoff {
                let (lhs, rhs) = convolution_sides(&p, a);
                hf.record(diff(&lhs, &rhs), lhs <= rhs, || format!("alpha = {a}"));
            }
            report.attractive = Some(report.ratio_decay.pass && ws.pass);
            report.weighted_sum = Some(ws);
            report.h_free = Some(hf);
        }
        Monotonicity::Nondecreasing => {
            let mut gb = Verdict::new("pi growth dominates h growth", cutoff);
            let mut best: Option<Rational> = None;
            for a in 1..=cutoff {
                if !hv[a].is_zero() {
                    let r = &hv[a + 1] / &hv[a];
                    if best.as_ref().is_none_or(|b| r > *b) {
                        best = Some(r);
                    }
                }
                let lhs = &p[a + 1] / &p[a];
                let ok = best.as_ref().is_none_or(|b| lhs >= *b);
                gb.record(best.as_ref().map_or(0.0, |b| diff(b, &lhs)), ok, || format!("alpha = {a}"));
            }
            report.attractive = if !report.ratio_decay.pass {
                Some(false)
            } else if gb.pass {
                Some(true)
            } else {
                None
            };
            report.growth_bound = Some(gb);
        }
        Monotonicity::Neither => {
            report.note = Some("r is not monotone; decided by the general check".into());
            report.attractive = Some(general.pass);
        }
    }
    report.consistent = report.attractive.is_none_or(|a| a == general.pass);
    report
}

/// Both sides of ∑_{i<α} π(i)π(α−i)/π(α) ≤ ∑_{i≤α} π(i)π(α+1−i)/π(α+1).
fn convolution_sides(p: &[Rational], a: usize) -> (Rational, Rational) {
    let lhs: Rational = (1..a).map(|i| &p[i] * &p[a - i]).sum::<Rational>() / &p[a];
    let rhs: Rational = (1..=a).map(|i| &p[i] * &p[a + 1 - i]).sum::<Rational>() / &p[a + 1];
    (lhs, rhs)
}

/// F(α) for 2 ≤ α ≤ alpha_max from r(n), n ≥ 1. For g^k_α = h₀π(α−k)π(k)/π(α)
/// with r(n) = π(n)/π(n+1) nonincreasing, attractiveness holds iff F ≥ 0.
pub fn f_diagnostic(r: &Sequence, alpha_max: usize) -> Vec<(usize, Rational)> {
    let rv: Vec<Rational> = (0..=alpha_max).map(|n| if n == 0 { Rational::zero() } else { r.value(n) }).collect();
    (2..=alpha_max).map(|a| (a, f_value(&rv, a))).collect()
}

fn f_value(r: &[Rational], a: usize) -> Rational {
    let half = Rational::new(1.into(), 2.into());
    if a == 2 {
        return &r[2] / &r[1] - half;
    }
    if a == 3 {
        return -Rational::one() + &r[3] / &r[2] + half * &r[3] / &r[1];
    }
    // p(i) = r(α−2)⋯r(α−i) / r(1)⋯r(i−1), q(i) = r(α−1)⋯r(α−i+1) / r(1)⋯r(i−1)
    let p = |i: usize| (2..=i).fold(Rational::one(), |v, j| v * &r[a - j] / &r[j - 1]);
    let q = |i: usize| (1..i).fold(Rational::one(), |v, j| v * &r[a - j] / &r[j]);
    let m = a / 2;
    let lead = &r[a] / &r[a - 1];
    let mut f = -Rational::one();
    for i in 2..=m {
        f -= p(i);
    }
    let mut inner = Rational::one();
    for i in 2..=m {
        inner += q(i);
    }
    if a.is_multiple_of(2) {
        f += half * p(m);
    } else {
        inner += half * q(m + 1);
    }
    f + lead * inner
}

/// Two-column `alpha F(alpha)` text.
pub fn f_table(values: &[(usize, Rational)]) -> String {
    values.iter().map(|(a, f)| format!("{a} {:.12e}\n", to_f64(f))).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::num::{int, rat};
    use crate::rates::{make_builtin, params};

    fn fam(name: &str, p: &[(&str, &str)]) -> RateFamily {
        make_builtin(name, &params(p)).unwrap()
    }

    #[test]
    fn tail_sum_shapes() {
        let stick = tail_sums(&fam("stick", &[]), 10);
        for a in 0..=10 {
            for k in 0..=12 {
                let expect = if k < a { int((a - k) as i64) } else { Rational::zero() };
                assert_eq!(stick.get(k, a, 3), expect);
            }
        }
        let ex1 = tail_sums(&fam("ex1_h", &[("h", "reciprocal")]), 10);
        for a in 1..=10 {
            for k in 0..a {
                let s: Rational = (k + 1..=a).map(|j| rat(1, j as i64)).sum();
                assert_eq!(ex1.get(k, a, 0), s);
            }
        }
    }

    #[test]
    fn example_families() {
        assert!(check_attractiveness(&fam("ex1_h", &[("h", "reciprocal")]), 20).pass);
        let bad = fam("ex1_h", &[("h", "piecewise(3, identity, reciprocal)")]);
        let r = check_attractiveness(&bad, 20);
        assert!(!r.pass);
        assert!(r.witness().is_some());
        assert_eq!(r.equivalent_forms_agree, Some(true));
        assert!(check_attractiveness(&fam("qhahn", &[("q", "1/2")]), 20).pass);
    }

    #[test]
    fn misanthrope_conditions() {
        // dep nondecreasing, arr nonincreasing: attractive
        let good = fam("single_mp", &[("dep", "identity"), ("arr", "shift(1, one_plus_b_over(1))")]);
        assert!(check_attractiveness(&good, 12).pass);
        let bad = fam("single_mp", &[("dep", "reciprocal"), ("arr", "const(1)")]);
        assert!(!check_attractiveness(&bad, 12).pass);
    }

    #[test]
    fn target_conditions() {
        let good = fam("single_tp", &[("g", "shift(1, one_plus_b_over(1))")]);
        assert!(check_attractiveness(&good, 12).pass);
        let bad = fam("single_tp", &[("g", "shift(1, identity)")]);
        assert!(!check_attractiveness(&bad, 12).pass);
    }

    #[test]
    fn f_closed_forms() {
        for b in [int(1), rat(3, 2), int(2), int(5)] {
            let f = f_diagnostic(&Sequence::OnePlusBOver(b.clone()), 3);
            let one = Rational::one();
            assert_eq!(f[0].1, one.clone() / (int(2) * (&one + &b)));
            let bb = &b * &b;
            let f3 = (int(6) + int(3) * &b - bb) / (int(6) * (int(2) + &b) * (&one + &b));
            assert_eq!(f[1].1, f3);
        }
        assert_eq!(f_diagnostic(&Sequence::OnePlusBOver(int(2)), 3)[1].1, rat(1, 9));
    }

    // F(α)·2π(1)π(α−1)/π(α) equals the gap in the h-free convolution bound.
    #[test]
    fn f_matches_convolution_gap() {
        for b in [int(1), rat(3, 2), int(2), int(5)] {
            let r = Sequence::OnePlusBOver(b.clone());
            let pi = Sequence::PowerLawPi { b: b.clone(), pi0: int(1) + &b };
            let p = pi.values(0, 42);
            for (a, f) in f_diagnostic(&r, 40) {
                let (lhs, rhs) = convolution_sides(&p, a);
                assert_eq!(f * int(2) * &p[1] * &p[a - 1] / &p[a], rhs - lhs, "b = {b}, alpha = {a}");
            }
        }
    }

    #[test]
    fn product_shape_verdicts() {
        let pi = |b: i64| Sequence::PowerLawPi { b: int(b), pi0: int(1 + b) };
        let r1 = check_product_shape_attractiveness(&pi(1), &pi(1), 30);
        assert_eq!(r1.monotonicity, Monotonicity::Nonincreasing);
        assert_eq!(r1.attractive, Some(true));
        assert!(r1.consistent);
        let r5 = check_product_shape_attractiveness(&pi(5), &pi(5), 30);
        assert_eq!(r5.attractive, Some(false));
        assert_eq!(r5.h_free.as_ref().unwrap().witness.as_deref(), Some("alpha = 3"));
        assert!(r5.consistent);

        // geometric π turns Example 1 with jump profile h into h(k)·2^{−k}
        let geo = Sequence::Geometric(rat(1, 2));
        let h = Sequence::parse("mul(geometric(1/2), reciprocal)").unwrap();
        let g = check_product_shape_attractiveness(&geo, &h, 30);
        assert_eq!(g.attractive, Some(true));
        assert!(g.h_free.unwrap().pass);
        assert!(g.consistent);
        let h = Sequence::parse("mul(geometric(1/2), piecewise(3, identity, reciprocal))").unwrap();
        let g = check_product_shape_attractiveness(&geo, &h, 30);
        assert_eq!(g.attractive, Some(false));
        assert!(g.consistent);
    }
}
