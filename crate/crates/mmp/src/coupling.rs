//! Coupled jump rates G^{k,l}_{α,β,γ,δ} for two copies of a mass migration
//! process sharing departure and arrival sites, computed from the closed
//! min-formula and from the explicit partition of l-values, plus the
//! structural checks on them.

use num_traits::{Signed, Zero};
use rayon::prelude::*;
use serde::Serialize;

use crate::attractiveness::check_attractiveness;
use crate::num::{max_r, min_r, to_f64, Rational};
use crate::rates::RateFamily;
use crate::report::Verdict;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum CouplingMethod {
    MinFormula,
    ExplicitPartition,
}

/// Which piece of the partition of {0,…,γ} an entry G^{k,l} falls in.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum Label {
    L1,
    L2,
    L3,
    L4,
    L5,
    L6,
    Boundary,
}

#[derive(Clone, Debug, Serialize)]
pub struct CouplingTable {
    pub quad: [usize; 4],
    pub method: CouplingMethod,
    /// g[k][l] for 0 ≤ k ≤ α, 0 ≤ l ≤ γ
    #[serde(skip)]
    pub g: Vec<Vec<Rational>>,
    /// Present for the explicit partition.
    pub labels: Option<Vec<Vec<Label>>>,
}

impl CouplingTable {
    pub fn get(&self, k: usize, l: usize) -> &Rational {
        &self.g[k][l]
    }

    /// `k l value label` records, one per line.
    pub fn dump(&self) -> String {
        let mut out = String::new();
        for (k, row) in self.g.iter().enumerate() {
            for (l, v) in row.iter().enumerate() {
                let label = self.labels.as_ref().map_or("-".to_string(), |ls| format!("{:?}", ls[k][l]));
                out.push_str(&format!("{k} {l} {:.12e} {label}\n", to_f64(v)));
            }
        }
        out
    }
}

/// Rates and tail sums at one quad.
struct QuadData {
    /// ga[k] = g^k_{α,β}, gc[l] = g^l_{γ,δ}, index 0 is 0
    ga: Vec<Rational>,
    gc: Vec<Rational>,
    /// sa[k] = Σ^k_{α,β}, sc[l] = Σ^l_{γ,δ}
    sa: Vec<Rational>,
    sc: Vec<Rational>,
}

impl QuadData {
    fn new(family: &RateFamily, [a, b, c, d]: [usize; 4]) -> Self {
        let rates = |x: usize, y: usize| {
            let mut v = vec![Rational::zero()];
            v.extend(family.rates_at(x, y));
            v
        };
        let tails = |g: &[Rational]| {
            let mut s = vec![Rational::zero(); g.len()];
            for k in (0..g.len() - 1).rev() {
                s[k] = &s[k + 1] + &g[k + 1];
            }
            s
        };
        let ga = rates(a, b);
        let gc = rates(c, d);
        let sa = tails(&ga);
        let sc = tails(&gc);
        QuadData { ga, gc, sa, sc }
    }
}

fn min_formula(q: &QuadData, k: usize, l: usize) -> Rational {
    let zero = Rational::zero();
    match (k, l) {
        (0, 0) => zero,
        (k, 0) => {
            let (g, a, s) = (&q.ga[k], &q.sa[k], &q.sc[0]);
            g - min_r(g, &(s - min_r(s, a)))
        }
        (0, l) => {
            let (g, a, s) = (&q.gc[l], &q.sa[0], &q.sc[l]);
            g - min_r(g, &(a - min_r(a, s)))
        }
        (k, l) => {
            let (gk, gl, a, s) = (&q.ga[k], &q.gc[l], &q.sa[k], &q.sc[l]);
            let m = min_r(s, a);
            let left = gk - min_r(gk, &(s - &m));
            let right = gl - min_r(gl, &(a - &m));
            min_r(&left, &right)
        }
    }
}

/// Labels for row k, located through the first l with Σ^l_{γ,δ} < Σ^k_{α,β}
/// and the first l with Σ^l_{γ,δ} < Σ^{k−1}_{α,β}.
fn partition_row(q: &QuadData, k: usize) -> Vec<Label> {
    let gamma = q.sc.len() - 1;
    let s = &q.sc;
    let a = &q.sa[k];
    let first_below = |t: &Rational| (0..=gamma).find(|&l| s[l] < *t);
    let e = first_below(a);
    let f = if k > 0 { first_below(&q.sa[k - 1]) } else { None };
    let upper = e.unwrap_or(gamma + 1);
    let mut row = Vec::with_capacity(gamma + 1);
    for l in 0..upper {
        row.push(match (k, f) {
            (0, _) if l == 0 => Label::Boundary,
            (0, _) => Label::L3,
            (_, Some(f)) if l < f => Label::L1,
            (_, Some(f)) if l == f => Label::L2,
            (_, Some(_)) => Label::L3,
            (_, None) => Label::L1,
        });
    }
    if let Some(e) = e {
        row.push(if k == 0 {
            if e == 0 {
                Label::Boundary
            } else {
                Label::L5
            }
        } else if e == 0 || s[e - 1] >= q.sa[k - 1] {
            Label::L4
        } else {
            Label::L5
        });
        row.extend(std::iter::repeat_n(Label::L6, gamma - e));
    }
    row
}

fn partition_value(q: &QuadData, k: usize, l: usize, label: Label) -> Rational {
    match label {
        Label::L1 | Label::L6 | Label::Boundary => Rational::zero(),
        Label::L2 => &q.sa[k - 1] - &q.sc[l],
        Label::L3 => q.gc[l].clone(),
        Label::L4 => q.ga[k].clone(),
        Label::L5 => &q.sc[l - 1] - &q.sa[k],
    }
}

/// Every set whose defining condition holds at (k, l), read off the set
/// definitions one by one. A partition has exactly one match per entry
/// except at (0, 0).
fn labels_by_definition(q: &QuadData, k: usize, l: usize) -> Vec<Label> {
    let s = &q.sc;
    let a = &q.sa[k];
    let a1 = if k > 0 { Some(&q.sa[k - 1]) } else { None };
    let prev = if l > 0 { Some(&s[l - 1]) } else { None };
    let mut out = Vec::new();
    if let Some(a1) = a1 {
        if *a1 <= s[l] {
            out.push(Label::L1);
        }
        let head = prev.is_none_or(|p| a1 <= p);
        if head && *a <= s[l] && s[l] < *a1 {
            out.push(Label::L2);
        }
        if head && s[l] < *a {
            out.push(Label::L4);
        }
    }
    if let Some(p) = prev {
        let tail = a1.is_none_or(|a1| p < a1);
        if tail && *a <= s[l] {
            out.push(Label::L3);
        }
        if tail && s[l] < *a && a <= p {
            out.push(Label::L5);
        }
        if p < a {
            out.push(Label::L6);
        }
    }
    out
}

pub fn coupling_table(family: &RateFamily, quad: [usize; 4], method: CouplingMethod) -> CouplingTable {
    let q = QuadData::new(family, quad);
    table_from(&q, quad, method)
}

fn table_from(q: &QuadData, quad: [usize; 4], method: CouplingMethod) -> CouplingTable {
    let [a, _, c, _] = quad;
    if a == 0 || c == 0 {
        // One copy has nothing to move: the other moves alone.
        let g = (0..=a)
            .map(|k| (0..=c).map(|l| if l == 0 { q.ga[k].clone() } else if k == 0 { q.gc[l].clone() } else { Rational::zero() }).collect())
            .collect();
        let labels = (method == CouplingMethod::ExplicitPartition).then(|| vec![vec![Label::Boundary; c + 1]; a + 1]);
        return CouplingTable { quad, method, g, labels };
    }
    match method {
        CouplingMethod::MinFormula => {
            let g = (0..=a).map(|k| (0..=c).map(|l| min_formula(q, k, l)).collect()).collect();
            CouplingTable { quad, method, g, labels: None }
        }
        CouplingMethod::ExplicitPartition => {
            let labels: Vec<Vec<Label>> = (0..=a).map(|k| partition_row(q, k)).collect();
            let g = labels
                .iter()
                .enumerate()
                .map(|(k, row)| row.iter().enumerate().map(|(l, lab)| partition_value(q, k, l, *lab)).collect())
                .collect();
            CouplingTable { quad, method, g, labels: Some(labels) }
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct CouplingReport {
    pub quad_cutoff: usize,
    pub quads: u64,
    pub marginals: Verdict,
    pub key_inequality: Verdict,
    pub staircase: Verdict,
    pub methods_agree: Verdict,
    pub partition: Verdict,
    /// Single-transition order preservation; only for attractive families.
    pub order_preservation: Option<Verdict>,
    /// The reduced entries on ordered quads; only for attractive
    /// departure-only or target-only families with positive g¹.
    pub ordered_quads: Option<Verdict>,
}

impl CouplingReport {
    pub fn passed(&self) -> bool {
        [&self.marginals, &self.key_inequality, &self.staircase, &self.methods_agree, &self.partition]
            .iter()
            .all(|v| v.pass)
            && self.order_preservation.as_ref().is_none_or(|v| v.pass)
            && self.ordered_quads.as_ref().is_none_or(|v| v.pass)
    }

    pub fn verdicts(&self) -> Vec<&Verdict> {
        let mut v = vec![&self.marginals, &self.key_inequality, &self.staircase, &self.methods_agree, &self.partition];
        v.extend(self.order_preservation.iter());
        v.extend(self.ordered_quads.iter());
        v
    }
}

/// Per-quad outcome: for each check, a residual and an optional failure text.
type QuadOutcome = [(f64, Option<String>); 7];

fn check_quad(family: &RateFamily, quad: [usize; 4], c: &Rational, attractive: bool, ic: bool) -> QuadOutcome {
    let [a, b, cc, d] = quad;
    let q = QuadData::new(family, quad);
    let mf = table_from(&q, quad, CouplingMethod::MinFormula);
    let ep = table_from(&q, quad, CouplingMethod::ExplicitPartition);
    let mut out: QuadOutcome = Default::default();
    let at = |k: usize, l: usize| format!("quad {quad:?}, (k, l) = ({k}, {l})");

    // marginals
    for k in 1..=a {
        let s: Rational = mf.g[k].iter().sum();
        if s != q.ga[k] && out[0].1.is_none() {
            out[0] = (to_f64(&(s - &q.ga[k]).abs()), Some(format!("quad {quad:?}, row k = {k}")));
        }
    }
    for l in 1..=cc {
        let s: Rational = mf.g.iter().map(|row| &row[l]).sum();
        if s != q.gc[l] && out[0].1.is_none() {
            out[0] = (to_f64(&(s - &q.gc[l]).abs()), Some(format!("quad {quad:?}, column l = {l}")));
        }
    }

    // key inequality
    let mut lhs = Rational::zero();
    for (k, row) in mf.g.iter().enumerate() {
        for (l, v) in row.iter().enumerate() {
            lhs += v * Rational::from_integer((k.abs_diff(l) as i64).into());
        }
    }
    let dist = Rational::from_integer(((a.abs_diff(cc) + b.abs_diff(d)) as i64).into());
    let bound = Rational::from_integer(2.into()) * c * dist;
    out[1].0 = to_f64(&(&lhs - &bound));
    if lhs > bound {
        out[1].1 = Some(format!("quad {quad:?}: {} > {}", to_f64(&lhs), to_f64(&bound)));
    }

    // staircase
    for n in 1..=a + cc {
        let hits: Vec<(usize, usize)> = (n.saturating_sub(cc)..=n.min(a))
            .map(|k| (k, n - k))
            .filter(|&(k, l)| mf.g[k][l].is_positive())
            .collect();
        if hits.len() > 1 && out[2].1.is_none() {
            out[2].1 = Some(format!("quad {quad:?}, n = {n}: {hits:?}"));
        }
    }

    // methods
    'outer: for k in 0..=a {
        for l in 0..=cc {
            if (k, l) != (0, 0) && mf.g[k][l] != ep.g[k][l] {
                out[3] = (to_f64(&(&mf.g[k][l] - &ep.g[k][l]).abs()), Some(at(k, l)));
                break 'outer;
            }
        }
    }

    // partition against the set definitions
    if a > 0 && cc > 0 {
        let labels = ep.labels.as_ref().expect("partition labels");
        'outer2: for k in 0..=a {
            let mut singles = [0usize; 3];
            for l in 0..=cc {
                let found = labels_by_definition(&q, k, l);
                let lab = labels[k][l];
                let ok = if lab == Label::Boundary { found.is_empty() } else { found == vec![lab] };
                if !ok {
                    out[4].1 = Some(format!("{}: tree {lab:?}, definitions {found:?}", at(k, l)));
                    break 'outer2;
                }
                match lab {
                    Label::L2 => singles[0] += 1,
                    Label::L4 => singles[1] += 1,
                    Label::L5 => singles[2] += 1,
                    _ => {}
                }
            }
            if singles.iter().any(|&x| x > 1) {
                out[4].1 = Some(format!("quad {quad:?}, row k = {k}: starred set with more than one element"));
                break;
            }
        }
    }

    // order preservation of a single coupled move when α ≤ γ and β ≤ δ
    if attractive && a <= cc && b <= d {
        'outer3: for k in 0..=a {
            for l in 0..=cc {
                if mf.g[k][l].is_positive() && !(a - k <= cc - l && b + k <= d + l) {
                    out[5].1 = Some(at(k, l));
                    break 'outer3;
                }
            }
        }
    }

    // reduced entries on ordered quads α ≤ γ, β ≥ δ
    if ic && a >= 1 && a <= cc && b >= d {
        let g10 = &mf.g[1][0];
        if !g10.is_zero() {
            out[6].1 = Some(format!("quad {quad:?}: G^(1,0) = {}", to_f64(g10)));
        } else if q.sa[0] == q.sc[0] {
            if mf.g[1][1] != q.gc[1] || !q.gc[1].is_positive() {
                out[6].1 = Some(format!("quad {quad:?}: G^(1,1) differs from g1_(gamma,delta)"));
            }
        } else if q.sa[0] < q.sc[0] {
            let expect = &q.sc[0] - max_r(&q.sa[0], &q.sc[1]);
            if mf.g[0][1] != expect || !expect.is_positive() {
                out[6].1 = Some(format!("quad {quad:?}: G^(0,1) = {}", to_f64(&mf.g[0][1])));
            }
        }
    }
    out
}

/// Runs every structural check on all quads with entries ≤ quad_cutoff.
/// `c` is the Lipschitz constant of the rates.
pub fn verify_coupling(family: &RateFamily, quad_cutoff: usize, c: &Rational) -> CouplingReport {
    let n = quad_cutoff;
    let attractive = check_attractiveness(family, n + 1).pass;
    let class = family.class();
    let g1_positive = (1..=n).all(|x| (0..=n).all(|y| family.rate(1, x, y).is_positive()));
    let ic = attractive && (class.is_zrp_like() || class.is_tp_like()) && g1_positive;

    let quads: Vec<[usize; 4]> = (0..=n)
        .flat_map(|a| (0..=n).flat_map(move |b| (0..=n).flat_map(move |c| (0..=n).map(move |d| [a, b, c, d]))))
        .collect();
    let outcomes: Vec<QuadOutcome> = quads.par_iter().map(|&q| check_quad(family, q, c, attractive, ic)).collect();

    let names = [
        "coupled marginals",
        "key inequality",
        "staircase",
        "min formula equals explicit partition",
        "partition matches set definitions",
        "single-move order preservation",
        "reduced entries on ordered quads",
    ];
    let mut verdicts: Vec<Verdict> = names.iter().map(|s| Verdict::new(*s, n)).collect();
    for o in &outcomes {
        for (v, (res, fail)) in verdicts.iter_mut().zip(o.iter()) {
            v.record(res.max(0.0), fail.is_none(), || fail.clone().unwrap_or_default());
        }
    }
    let mut it = verdicts.into_iter();
    let mut next = || it.next().expect("seven verdicts");
    let key_note = format!("C = {}", to_f64(c));
    CouplingReport {
        quad_cutoff: n,
        quads: quads.len() as u64,
        marginals: next(),
        key_inequality: next().with_note(key_note),
        staircase: next(),
        methods_agree: next(),
        partition: next(),
        order_preservation: Some(next()).filter(|_| attractive),
        ordered_quads: Some(next()).filter(|_| ic),
    }
}
