//! Product invariant measures: the A(α,β) matrix and the conditions built on
//! it, rate construction from a prescribed marginal, and an exact generator
//! check on small tori.

use std::collections::{BTreeMap, HashMap};
use std::sync::Arc;
use std::time::Instant;

use num_traits::{One, Signed, Zero};
use serde::Serialize;

use crate::error::{MmpError, Result};
use crate::lattice::{Kernel, KernelSymmetry, Torus};
use crate::measures::{marginal_from_rates, Marginal};
use crate::num::{fmt_rational, to_f64, Rational, Scalar};
use crate::rates::{RateClass, RateFamily, RateKind};
use crate::report::Verdict;
use crate::seq::Sequence;

/// Default state-count guard for the exact generator check.
pub const STATE_GUARD: u128 = 2_000_000;

fn positive_weights(mu: &Marginal, upto: usize) -> Result<Vec<Rational>> {
    let w = mu.try_weights_exact(upto)?;
    if let Some(n) = w.iter().position(|x| !x.is_positive()) {
        return Err(MmpError::ZeroWeight(n));
    }
    Ok(w)
}

#[derive(Clone, Debug)]
pub struct AMatrix<S> {
    pub cutoff: usize,
    /// grid[α][β]
    pub grid: Vec<Vec<S>>,
    /// ψ(α) = A(0, α); ψ(0) = 0.
    pub psi: Vec<S>,
}

/// A(α,β) = ∑_{k≤β} g^k_{α+k,β−k} μ(α+k)μ(β−k)/(μ(α)μ(β)) − ∑_{k≤α} g^k_{α,β}
/// for 0 ≤ α, β ≤ cutoff. Needs μ > 0 up to 2·cutoff.
pub fn compute_a<S: Scalar>(family: &RateFamily, mu: &Marginal, cutoff: usize) -> Result<AMatrix<S>> {
    let w: Vec<S> = positive_weights(mu, 2 * cutoff)?.iter().map(S::from_rational).collect();
    let g = |k: usize, a: usize, b: usize| S::from_rational(&family.rate(k, a, b));
    let mut grid = Vec::with_capacity(cutoff + 1);
    for a in 0..=cutoff {
        let mut row = Vec::with_capacity(cutoff + 1);
        for b in 0..=cutoff {
            let denom = w[a].clone() * w[b].clone();
            let mut inflow = S::zero();
            for k in 1..=b {
                inflow = inflow + g(k, a + k, b - k) * w[a + k].clone() * w[b - k].clone();
            }
            let mut out = S::zero();
            for k in 1..=a {
                out = out + g(k, a, b);
            }
            row.push(inflow / denom - out);
        }
        grid.push(row);
    }
    let psi = grid[0].clone();
    Ok(AMatrix { cutoff, grid, psi })
}

impl<S: Scalar> AMatrix<S> {
    pub fn get(&self, a: usize, b: usize) -> &S {
        &self.grid[a][b]
    }

    /// Whitespace-separated rows of floats.
    pub fn dump(&self) -> String {
        let mut out = String::new();
        for row in &self.grid {
            let line: Vec<String> = row.iter().map(|x| format!("{:.12e}", x.to_f64())).collect();
            out.push_str(&line.join(" "));
            out.push('\n');
        }
        out
    }
}

fn close<S: Scalar>(x: &S, tol: f64) -> (f64, bool) {
    let r = x.abs_val().to_f64();
    if S::is_exact() {
        (r, x.is_zero())
    } else {
        (r, r <= tol)
    }
}

/// Symmetric kernels: A(α,β) = −A(β,α). Asymmetric kernels:
/// A(α,β) = ψ(β) − ψ(α). `tol` only matters on the float path.
pub fn check_product_invariance<S: Scalar>(a: &AMatrix<S>, symmetry: KernelSymmetry, tol: f64) -> Verdict {
    let n = a.cutoff;
    match symmetry {
        KernelSymmetry::Symmetric => {
            let mut v = Verdict::new("antisymmetry of A", n);
            for x in 0..=n {
                for y in x..=n {
                    let (r, ok) = close(&(a.grid[x][y].clone() + a.grid[y][x].clone()), tol);
                    v.record(r, ok, || format!("(alpha, beta) = ({x}, {y})"));
                }
            }
            v
        }
        KernelSymmetry::Asymmetric => {
            let mut v = Verdict::new("A(alpha,beta) = psi(beta) - psi(alpha)", n);
            for x in 0..=n {
                for y in 0..=n {
                    let d = a.grid[x][y].clone() - (a.psi[y].clone() - a.psi[x].clone());
                    let (r, ok) = close(&d, tol);
                    v.record(r, ok, || format!("(alpha, beta) = ({x}, {y})"));
                }
            }
            v
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct SingleJumpReport {
    pub detailed_balance: Verdict,
    pub compatibility: Verdict,
    pub psi_condition: Verdict,
}

/// Single-jump conditions: detailed balance against μ, and the two
/// conditions on the rates alone.
pub fn check_single_jump_balance(family: &RateFamily, mu: &Marginal, cutoff: usize) -> Result<SingleJumpReport> {
    if !family.class().is_single_jump() {
        return Err(MmpError::InvalidParam { name: "family".into(), reason: "not a single-jump family".into() });
    }
    let w = positive_weights(mu, cutoff + 1)?;
    let g = |a: usize, b: usize| family.rate(1, a, b);
    let mut db = Verdict::new("detailed balance", cutoff);
    let mut compat = Verdict::new("rate compatibility", cutoff);
    let mut psi = Verdict::new("psi condition on rates", cutoff);
    for a in 0..cutoff {
        let down = g(1, a);
        if down.is_zero() {
            return Err(MmpError::Positivity { what: "g1_(1,alpha) vanishes".into(), index: a });
        }
        for b in 0..cutoff {
            let d = g(a + 1, b) * &w[a + 1] * &w[b] - g(b + 1, a) * &w[b + 1] * &w[a];
            db.record(to_f64(&d.abs()), d.is_zero(), || format!("(alpha, beta) = ({a}, {b})"));

            let back = g(b + 1, 0);
            if back.is_zero() {
                return Err(MmpError::Positivity { what: "g1_(beta+1,0) vanishes".into(), index: b + 1 });
            }
            let rhs = g(a + 1, 0) / &down * (g(1, b) / back) * g(b + 1, a);
            let d = g(a + 1, b) - rhs;
            compat.record(to_f64(&d.abs()), d.is_zero(), || format!("(alpha, beta) = ({a}, {b})"));
        }
    }
    for a in 0..=cutoff {
        for b in 0..=cutoff {
            let d = g(b, a) - g(a, b) - g(b, 0) + g(a, 0);
            psi.record(to_f64(&d.abs()), d.is_zero(), || format!("(alpha, beta) = ({a}, {b})"));
        }
    }
    Ok(SingleJumpReport { detailed_balance: db, compatibility: compat, psi_condition: psi })
}

#[derive(Clone, Debug, Serialize)]
pub struct MmZrpReport {
    /// g^k_{α+k}μ(α+k) = μ(α)μ(k)g^k_k/μ(0)
    pub stationarity: Verdict,
    /// Present only when g¹_α > 0 on the whole grid.
    pub rate_compatibility: Option<Verdict>,
}

impl MmZrpReport {
    pub fn passed(&self) -> bool {
        self.stationarity.pass && self.rate_compatibility.as_ref().is_none_or(|v| v.pass)
    }
}

/// Product invariance for departure-only rates, on 1 ≤ k, α ≤ cutoff.
/// Witnesses are reported in order of increasing total occupancy.
pub fn check_mmzrp_invariance(family: &RateFamily, mu: &Marginal, cutoff: usize) -> Result<MmZrpReport> {
    let w = mu.try_weights_exact(2 * cutoff)?;
    if !w[0].is_positive() {
        return Err(MmpError::ZeroWeight(0));
    }
    let g = |k: usize, n: usize| family.rate(k, n, 0);
    let mut st = Verdict::new("product invariance of departure rates", cutoff);
    for n in 2..=2 * cutoff {
        for k in n.saturating_sub(cutoff).max(1)..=(n - 1).min(cutoff) {
            let a = n - k;
            let d = g(k, n) * &w[n] - &w[a] * &w[k] * g(k, k) / &w[0];
            st.record(to_f64(&d.abs()), d.is_zero(), || format!("(k, alpha) = ({k}, {a})"));
        }
    }
    let g1: Vec<Rational> = (1..=cutoff).map(|a| g(1, a)).collect();
    let rate_compatibility = if g1.iter().all(|x| x.is_positive()) {
        // fact[a] = (g¹_a)! = ∏_{i≤a} g¹_i
        let mut fact = vec![Rational::one()];
        for x in &g1 {
            let next = fact.last().unwrap() * x;
            fact.push(next);
        }
        let mut v = Verdict::new("rate-only compatibility", cutoff);
        for a in 1..=cutoff {
            for k in 1..=a {
                let d = g(k, a) - &fact[a] / (&fact[a - k] * &fact[k]) * g(k, k);
                v.record(to_f64(&d.abs()), d.is_zero(), || format!("(k, alpha) = ({k}, {a})"));
            }
        }
        Some(v)
    } else {
        None
    };
    Ok(MmZrpReport { stationarity: st, rate_compatibility })
}

/// Departure-only rates with μ as invariant marginal:
/// g^k_{α+k} = c(k)μ(α)/μ(α+k).
pub fn build_mmzrp_rates(mu: &Marginal, c: Sequence, cutoff: usize) -> Result<RateFamily> {
    positive_weights(mu, cutoff)?;
    if c.defined_from() > 1 || !c.is_positive_from(1) {
        return Err(MmpError::InvalidParam { name: "c".into(), reason: "must be positive from 1".into() });
    }
    let mut params = BTreeMap::new();
    params.insert("weights".to_string(), mu.describe());
    params.insert("c".to_string(), c.to_string());
    let description = format!("MM-ZRP with prescribed marginal {}, c = {c}", mu.describe());
    Ok(RateFamily::from_kind(
        RateClass::MmZrp,
        "mmzrp_from_marginal",
        params,
        description,
        RateKind::ProductShape { pi: Sequence::Weights(Arc::new(mu.clone())), h: c },
    ))
}

/// Coefficients H_α(β,k) of the target-process construction, for
/// 1 ≤ α ≤ cutoff and 1 ≤ k ≤ β ≤ cutoff.
#[derive(Clone, Debug)]
pub struct HTable {
    pub cutoff: usize,
    mu: Vec<Rational>,
    /// delta[r][s] = Δ_r(s), r ≥ 1
    delta: Vec<Vec<Rational>>,
    /// h[α][β][k]
    h: Vec<Vec<Vec<Rational>>>,
    pub verified_dual: bool,
    pub verified_psi_identity: bool,
    pub verified_low_orders: bool,
    /// Largest β at which the expanded chain sum was compared.
    pub expansion_checked_to: usize,
}

impl HTable {
    pub fn h(&self, alpha: usize, beta: usize, k: usize) -> &Rational {
        &self.h[alpha][beta][k]
    }
    /// Δ_r(s) = μ(r+s)/μ(r) − μ(r+s−1)/μ(r−1)
    pub fn delta(&self, r: usize, s: usize) -> &Rational {
        &self.delta[r][s]
    }
    pub fn weights(&self) -> &[Rational] {
        &self.mu
    }
    pub fn is_identically_zero(&self) -> bool {
        self.h.iter().flatten().flatten().all(Zero::is_zero)
    }

    /// One `alpha beta k H` record per line.
    pub fn dump(&self) -> String {
        let mut out = String::new();
        for a in 1..=self.cutoff {
            for b in 1..=self.cutoff {
                for k in 1..=b {
                    out.push_str(&format!("{a} {b} {k} {}\n", fmt_rational(&self.h[a][b][k])));
                }
            }
        }
        out
    }
}

fn empty_h(n: usize) -> Vec<Vec<Vec<Rational>>> {
    (0..=n).map(|_| (0..=n).map(|b| vec![Rational::zero(); b + 1]).collect()).collect()
}

/// Largest β up to which the explicit chain expansion is enumerated; the
/// number of chains grows like 2^β.
const EXPANSION_LIMIT: usize = 9;

pub fn build_h_table(mu: &Marginal, cutoff: usize) -> Result<HTable> {
    let n = cutoff;
    let needed = 2 * n;
    if let Some(avail) = mu.available_upto() {
        if avail < needed {
            return Err(MmpError::Extension { needed, available: avail });
        }
    }
    let w = positive_weights(mu, needed)?;
    let mut delta = vec![Vec::new()];
    for r in 1..=n {
        delta.push((0..=n).map(|s| &w[r + s] / &w[r] - &w[r + s - 1] / &w[r - 1]).collect::<Vec<_>>());
    }

    // Primal: H_α(β,k) = Δ_α(k)μ(β−k) + ∑_{l=1}^{β−k} Δ_α(l) H_l(β−l,k).
    let mut h = empty_h(n);
    for b in 1..=n {
        for k in (1..=b).rev() {
            for a in 1..=n {
                let mut v = &delta[a][k] * &w[b - k];
                for l in 1..=b - k {
                    v += &delta[a][l] * &h[l][b - l][k];
                }
                h[a][b][k] = v;
            }
        }
    }

    // Dual: H_α(β,k) = Δ_α(k)μ(β−k) + ∑_{l=1}^{β−k} H_α(β−k,l) Δ_l(k).
    let mut dual = empty_h(n);
    for b in 1..=n {
        for k in (1..=b).rev() {
            for a in 1..=n {
                let mut v = &delta[a][k] * &w[b - k];
                for l in 1..=b - k {
                    v += &dual[a][b - k][l] * &delta[l][k];
                }
                dual[a][b][k] = v;
            }
        }
    }
    let verified_dual = h == dual;

    // ∑_{l=1}^{β−k} μ(l)H_l(β−l,k) = μ(0)μ(β) − μ(k)μ(β−k)
    let mut verified_psi_identity = true;
    for b in 2..=n {
        for k in 1..b {
            let s: Rational = (1..=b - k).map(|l| &w[l] * &h[l][b - l][k]).sum();
            if s != &w[0] * &w[b] - &w[k] * &w[b - k] {
                verified_psi_identity = false;
            }
        }
    }

    let mut verified_low_orders = true;
    for a in 1..=n {
        for b in 1..=n {
            if h[a][b][b] != &delta[a][b] * &w[0] {
                verified_low_orders = false;
            }
            if b >= 2 {
                let e = &delta[a][b - 1] * &w[1] + &delta[a][1] * &delta[1][b - 1] * &w[0];
                if h[a][b][b - 1] != e {
                    verified_low_orders = false;
                }
            }
            if b >= 3 {
                let e = &delta[a][b - 2] * &w[2]
                    + &delta[a][1] * &delta[1][b - 2] * (&w[1] + &delta[1][1] * &w[0])
                    + &delta[a][2] * &delta[2][b - 2] * &w[0];
                if h[a][b][b - 2] != e {
                    verified_low_orders = false;
                }
            }
        }
    }
    let expansion_checked_to = n.min(EXPANSION_LIMIT);
    for a in 1..=n {
        for b in 1..=expansion_checked_to {
            for k in 1..=b {
                if h[a][b][k] != chain_expansion(&delta, &w, a, b, k) {
                    verified_low_orders = false;
                }
            }
        }
    }

    Ok(HTable {
        cutoff: n,
        mu: w,
        delta,
        h,
        verified_dual,
        verified_psi_identity,
        verified_low_orders,
        expansion_checked_to,
    })
}

/// Δ_α(k)μ(β−k) + ∑ over chains k₁,…,k_r ≥ 1 with ∑k_i ≤ β−k of
/// Δ_α(k₁)Δ_{k₁}(k₂)⋯Δ_{k_r}(k) μ(β−k−∑k_i), enumerated explicitly.
fn chain_expansion(delta: &[Vec<Rational>], w: &[Rational], a: usize, b: usize, k: usize) -> Rational {
    let budget = b - k;
    let mut total = &delta[a][k] * &w[budget];
    let mut stack: Vec<(usize, usize, Rational)> = (1..=budget).map(|k1| (k1, k1, delta[a][k1].clone())).collect();
    while let Some((last, used, prod)) = stack.pop() {
        total += &prod * &delta[last][k] * &w[budget - used];
        for next in 1..=budget - used {
            stack.push((next, used + next, &prod * &delta[last][next]));
        }
    }
    total
}

/// Target-process rates with μ as invariant marginal:
/// g^α_{*,β} = g^α_{*,0} + (1/μ(β)) ∑_{k≤β} H_α(β,k) g^k_{*,0}
/// for 1 ≤ α, β ≤ cutoff. Rates vanish outside the table.
pub fn build_mmtp_rates(mu: &Marginal, g_star_0: &Sequence, cutoff: usize) -> Result<RateFamily> {
    if g_star_0.defined_from() > 1 || !g_star_0.is_positive_from(1) {
        return Err(MmpError::InvalidParam { name: "g_star_0".into(), reason: "must be positive from 1".into() });
    }
    let t = build_h_table(mu, cutoff)?;
    let g0: Vec<Rational> = (0..=cutoff).map(|a| if a == 0 { Rational::zero() } else { g_star_0.value(a) }).collect();
    let mut rows = Vec::with_capacity(cutoff);
    for a in 1..=cutoff {
        let mut row = vec![g0[a].clone()];
        for b in 1..=cutoff {
            let s: Rational = (1..=b).map(|k| t.h(a, b, k) * &g0[k]).sum();
            let v = &g0[a] + s / &t.mu[b];
            if v.is_negative() {
                return Err(MmpError::NegativeRate { alpha: a, beta: b });
            }
            row.push(v);
        }
        rows.push(row);
    }
    RateFamily::target_table(
        rows,
        format!("MM-TP with prescribed marginal {}, g_(*,0) = {g_star_0}, cutoff {cutoff}", mu.describe()),
    )
}

/// w(0..=cutoff) of a multiple-jump target process, tilted by φ = 1.
pub fn w_from_mmtp_rates(family: &RateFamily, cutoff: usize) -> Result<Marginal> {
    if !family.class().is_tp_like() {
        return Err(MmpError::InvalidParam { name: "family".into(), reason: "not a target process".into() });
    }
    marginal_from_rates(family, RateClass::MmTp, &Rational::one(), cutoff)
}

#[derive(Clone, Debug, Serialize)]
pub struct StationarityReport {
    pub sites: usize,
    pub particles: usize,
    pub states: usize,
    pub transitions: u64,
    /// max_η |(μ_{N,L} Q)(η)| with μ_{N,L} normalized.
    pub max_residual: f64,
    #[serde(serialize_with = "ser_rational")]
    pub max_residual_exact: Rational,
    pub wall_ms: u128,
}

impl StationarityReport {
    pub fn is_exactly_stationary(&self) -> bool {
        self.max_residual_exact.is_zero()
    }
}

fn ser_rational<S: serde::Serializer>(x: &Rational, s: S) -> std::result::Result<S::Ok, S::Error> {
    s.serialize_str(&fmt_rational(x))
}

fn binomial(n: u128, k: u128) -> u128 {
    let k = k.min(n - k);
    let mut r: u128 = 1;
    for i in 0..k {
        r = r.saturating_mul(n - i) / (i + 1);
    }
    r
}

/// Number of configurations of `n` particles on `sites` sites.
pub fn simplex_size(sites: usize, n: usize) -> u128 {
    if sites == 0 {
        return u128::from(n == 0);
    }
    binomial((n + sites - 1) as u128, (sites - 1) as u128)
}

/// All configurations with total `n` on `sites` sites, in lexicographic order.
pub fn enumerate_simplex(sites: usize, n: usize) -> Vec<Vec<u32>> {
    let mut out = Vec::new();
    let mut cur = vec![0u32; sites];
    fn rec(i: usize, left: u32, cur: &mut Vec<u32>, out: &mut Vec<Vec<u32>>) {
        if i + 1 == cur.len() {
            cur[i] = left;
            out.push(cur.clone());
            return;
        }
        for v in (0..=left).rev() {
            cur[i] = v;
            rec(i + 1, left - v, cur, out);
        }
    }
    if sites > 0 {
        rec(0, n as u32, &mut cur, &mut out);
    }
    out
}

/// Builds the generator of the process on the torus restricted to `n`
/// particles and evaluates μ_{N,L}Q with μ_{N,L}(η) ∝ ∏_x μ(η(x)).
/// Everything is exact.
pub fn exact_stationarity_check(
    family: &RateFamily,
    mu: &Marginal,
    torus: Torus,
    n: usize,
    kernel: &Kernel,
    guard: u128,
) -> Result<StationarityReport> {
    let start = Instant::now();
    let sites = torus.sites();
    let size = simplex_size(sites, n);
    if size > guard {
        return Err(MmpError::Guard { name: "simplex states".into(), limit: guard, requested: size });
    }
    let nbrs = torus.neighbours(kernel)?;
    let w = mu.try_weights_exact(n)?;
    let states = enumerate_simplex(sites, n);
    let index: HashMap<&[u32], usize> = states.iter().enumerate().map(|(i, s)| (s.as_slice(), i)).collect();
    let weight: Vec<Rational> = states
        .iter()
        .map(|s| s.iter().fold(Rational::one(), |acc, &k| acc * &w[k as usize]))
        .collect();
    let z: Rational = weight.iter().cloned().sum();
    if z.is_zero() {
        return Err(MmpError::ZeroWeight(0));
    }

    let mut balance = vec![Rational::zero(); states.len()];
    let mut transitions = 0u64;
    let mut rate_cache: HashMap<(usize, usize), Vec<Rational>> = HashMap::new();
    let mut next = vec![0u32; sites];
    for (i, s) in states.iter().enumerate() {
        if weight[i].is_zero() {
            continue;
        }
        for x in 0..sites {
            let a = s[x] as usize;
            if a == 0 {
                continue;
            }
            for (y, p) in &nbrs[x] {
                let b = s[*y] as usize;
                let rates = rate_cache.entry((a, b)).or_insert_with(|| family.rates_at(a, b));
                for (k0, g) in rates.iter().enumerate() {
                    if g.is_zero() {
                        continue;
                    }
                    let k = k0 as u32 + 1;
                    let flow = &weight[i] * p * g;
                    next.copy_from_slice(s);
                    next[x] -= k;
                    next[*y] += k;
                    let j = index[next.as_slice()];
                    balance[j] += &flow;
                    balance[i] -= flow;
                    transitions += 1;
                }
            }
        }
    }
    let max = balance.iter().map(|r| r.abs()).max().unwrap_or_else(Rational::zero) / &z;
    Ok(StationarityReport {
        sites,
        particles: n,
        states: states.len(),
        transitions,
        max_residual: to_f64(&max),
        max_residual_exact: max,
        wall_ms: start.elapsed().as_millis(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::num::{int, rat};
    use crate::rates::{make_builtin, params};

    fn fam(name: &str, p: &[(&str, &str)]) -> RateFamily {
        make_builtin(name, &params(p)).unwrap()
    }

    // A(α,β) straight from the definition, for independent comparison.
    fn a_entry(f: &RateFamily, w: &[Rational], a: usize, b: usize) -> Rational {
        let mut s = Rational::zero();
        for k in 0..=b {
            s += f.rate(k, a + k, b - k) * &w[a + k] * &w[b - k];
        }
        s = s / (&w[a] * &w[b]);
        for k in 0..=a {
            s -= f.rate(k, a, b);
        }
        s
    }

    #[test]
    fn single_jump_zrp_a_matrix_is_rate_difference() {
        let f = fam("single_zrp", &[("g", "one_plus_b_over(2)")]);
        let mu = Marginal::zrp_weights(int(2));
        let a: AMatrix<Rational> = compute_a(&f, &mu, 12).unwrap();
        for x in 0..=12 {
            for y in 0..=12 {
                assert_eq!(a.grid[x][y], f.rate(1, y, 0) - f.rate(1, x, 0), "({x},{y})");
            }
        }
        assert!(check_product_invariance(&a, KernelSymmetry::Asymmetric, 0.0).pass);
    }

    #[test]
    fn example_one_psi_is_partial_sum() {
        let f = fam("ex1_h", &[("h", "reciprocal")]);
        let mu = Marginal::geometric(rat(1, 3));
        let a: AMatrix<Rational> = compute_a(&f, &mu, 20).unwrap();
        let w = mu.weights_exact(40);
        let mut partial = Rational::zero();
        for x in 0..=20 {
            if x > 0 {
                partial += rat(1, x as i64);
            }
            assert_eq!(a.psi[x], partial);
            for y in 0..=20 {
                assert_eq!(a.grid[x][y], a_entry(&f, &w, x, y));
            }
        }
    }

    #[test]
    fn float_path_agrees_with_exact() {
        let f = fam("qhahn", &[("q", "1/2")]);
        let mu = marginal_from_rates(&f, RateClass::MmZrp, &rat(1, 2), 40).unwrap();
        let a: AMatrix<Rational> = compute_a(&f, &mu, 15).unwrap();
        let b: AMatrix<f64> = compute_a(&f, &mu, 15).unwrap();
        for x in 0..=15 {
            for y in 0..=15 {
                assert!((to_f64(&a.grid[x][y]) - b.grid[x][y]).abs() < 1e-9);
            }
        }
        assert!(check_product_invariance(&b, KernelSymmetry::Asymmetric, 1e-9).pass);
    }

    #[test]
    fn nonconstant_uniform_rates_fail() {
        let f = fam("ex2_r", &[("r", "reciprocal")]);
        let a: AMatrix<Rational> = compute_a(&f, &Marginal::geometric(rat(1, 2)), 10).unwrap();
        let v = check_product_invariance(&a, KernelSymmetry::Asymmetric, 0.0);
        assert!(!v.pass);
        assert!(v.witness.is_some());
        let z = compute_a::<Rational>(&f, &Marginal::zrp_weights(int(2)), 10).unwrap();
        assert!(!check_product_invariance(&z, KernelSymmetry::Symmetric, 0.0).pass);
    }

    #[test]
    fn zero_weights_are_refused() {
        let f = fam("stick", &[]);
        let mu = Marginal::new(vec![int(1), int(1), int(0)], crate::measures::TailRule::Zero).unwrap();
        assert_eq!(compute_a::<Rational>(&f, &mu, 2).unwrap_err(), MmpError::ZeroWeight(2));
    }

    #[test]
    fn single_jump_conditions() {
        let zrp = fam("single_zrp", &[("g", "one_plus_b_over(3)")]);
        let r = check_single_jump_balance(&zrp, &Marginal::zrp_weights(int(3)), 15).unwrap();
        assert!(r.detailed_balance.pass && r.compatibility.pass && r.psi_condition.pass);

        let tp = fam("single_tp", &[("g", "piecewise(1, const(2), const(1))")]);
        let mu = marginal_from_rates(&tp, RateClass::SingleJumpTp, &rat(1, 2), 30).unwrap();
        let r = check_single_jump_balance(&tp, &mu, 15).unwrap();
        assert!(r.psi_condition.pass && r.compatibility.pass);

        let tp = fam("single_tp", &[("g", "shift(1, identity)")]);
        let mu = marginal_from_rates(&tp, RateClass::SingleJumpTp, &rat(1, 2), 30).unwrap();
        let r = check_single_jump_balance(&tp, &mu, 15).unwrap();
        assert!(!r.psi_condition.pass);

        let zero = fam("single_mp", &[("dep", "const(1)"), ("arr", "piecewise(2, const(1), const(0))")]);
        let err = check_single_jump_balance(&zero, &Marginal::geometric(rat(1, 2)), 5).unwrap_err();
        assert!(matches!(err, MmpError::Positivity { index: 2, .. }));
    }

    #[test]
    fn departure_rate_invariance() {
        let ex1 = fam("ex1_h", &[("h", "reciprocal")]);
        assert!(check_mmzrp_invariance(&ex1, &Marginal::geometric(rat(2, 5)), 15).unwrap().passed());

        let ex4 = fam("ex4_b_family", &[("b", "2")]);
        let mu = Marginal::power_law_pi(int(2), int(3));
        assert!(check_mmzrp_invariance(&ex4, &mu, 15).unwrap().passed());

        let ex2 = fam("ex2_r", &[("r", "reciprocal")]);
        let rc = check_mmzrp_invariance(&ex2, &Marginal::geometric(rat(1, 2)), 8).unwrap().rate_compatibility.unwrap();
        assert!(!rc.pass);
        assert_eq!(rc.witness.as_deref(), Some("(k, alpha) = (2, 3)"));

        let stick = fam("stick", &[]);
        assert!(!check_mmzrp_invariance(&stick, &Marginal::zrp_weights(int(2)), 8).unwrap().passed());
        assert!(check_mmzrp_invariance(&stick, &Marginal::geometric(rat(1, 2)), 8).unwrap().passed());
    }

    #[test]
    fn prescribed_marginal_rates() {
        let mu = Marginal::zrp_weights(int(2));
        let f = build_mmzrp_rates(&mu, Sequence::Const(int(1)), 20).unwrap();
        for a in 1..20 {
            assert_eq!(f.rate(1, a, 0), Rational::one() + rat(2, a as i64));
        }
        assert!(check_mmzrp_invariance(&f, &mu, 12).unwrap().passed());

        let f = build_mmzrp_rates(&Marginal::zrp_weights(int(3)), Sequence::Const(int(1)), 10).unwrap();
        assert_eq!(f.rate(2, 3, 0), int(5));

        let geo = build_mmzrp_rates(&Marginal::geometric(rat(1, 3)), Sequence::Const(int(1)), 10).unwrap();
        for k in 1..6 {
            for a in k..10 {
                assert_eq!(geo.rate(k, a, 0), int(3).pow(k as i32));
            }
        }
    }

    #[test]
    fn h_table_identities() {
        let mu = Marginal::new(
            vec![int(2), int(1), rat(3, 2), rat(1, 3), int(4), rat(2, 7), int(1), rat(5, 3), rat(1, 2), int(3), rat(1, 9), int(2), int(1)],
            crate::measures::TailRule::Unknown,
        )
        .unwrap();
        let t = build_h_table(&mu, 6).unwrap();
        assert!(t.verified_dual && t.verified_psi_identity && t.verified_low_orders);
        assert!(!t.is_identically_zero());
        assert!(matches!(build_h_table(&mu, 7), Err(MmpError::Extension { needed: 14, available: 12 })));

        let g = build_h_table(&Marginal::geometric(rat(3, 5)), 10).unwrap();
        assert!(g.is_identically_zero() && g.verified_psi_identity && g.verified_dual);
    }

    #[test]
    fn target_rates_from_geometric_marginal_are_flat() {
        let f = build_mmtp_rates(&Marginal::geometric(rat(1, 2)), &Sequence::Reciprocal, 8).unwrap();
        for a in 1..=8 {
            for b in 0..=8 {
                assert_eq!(f.rate(a, a, b), rat(1, a as i64));
            }
        }
    }

    #[test]
    fn target_rates_round_trip() {
        // μ(n+1)/μ(n) = (n+1)/(3(n+2)) is increasing
        let mu = Marginal::new(vec![int(1)], crate::measures::TailRule::Ratio { q: rat(1, 3), a: int(1), b: int(1) }).unwrap();
        let f = build_mmtp_rates(&mu, &Sequence::Const(int(1)), 10).unwrap();
        let a: AMatrix<Rational> = compute_a(&f, &mu, 5).unwrap();
        assert!(check_product_invariance(&a, KernelSymmetry::Asymmetric, 0.0).pass);
        let w = w_from_mmtp_rates(&f, 10).unwrap();
        let m = mu.weights_exact(10);
        let t = w.weight(1) * &m[0] / (w.weight(0) * &m[1]);
        for n in 0..10 {
            assert_eq!(w.weight(n + 1) * &m[n], &t * w.weight(n) * &m[n + 1], "n = {n}");
        }
    }

    #[test]
    fn negative_target_rates_are_refused() {
        let err = build_mmtp_rates(&Marginal::zrp_weights(int(4)), &Sequence::Const(int(1)), 12);
        match err {
            Err(MmpError::NegativeRate { alpha, beta }) => assert!(alpha >= 1 && beta >= 1),
            Ok(f) => {
                for a in 1..=12 {
                    for b in 0..=12 {
                        assert!(!f.rate(a, a, b).is_negative());
                    }
                }
            }
            Err(e) => panic!("{e}"),
        }
    }

    #[test]
    fn small_tori_generator() {
        let k = Kernel::totally_asymmetric(1).unwrap();
        let t = Torus::new(1, 3).unwrap();
        let mu = Marginal::zrp_weights(int(2));
        let f = build_mmzrp_rates(&mu, Sequence::Reciprocal, 10).unwrap();
        for n in 0..=5 {
            let r = exact_stationarity_check(&f, &mu, t, n, &k, STATE_GUARD).unwrap();
            assert!(r.is_exactly_stationary(), "N = {n}");
        }
        let stick = fam("stick", &[]);
        let r = exact_stationarity_check(&stick, &mu, t, 3, &k, STATE_GUARD).unwrap();
        assert!(!r.is_exactly_stationary());
        let r = exact_stationarity_check(&stick, &Marginal::geometric(rat(1, 2)), t, 3, &k, STATE_GUARD).unwrap();
        assert!(r.is_exactly_stationary());
        let r = exact_stationarity_check(&stick, &mu, t, 0, &k, STATE_GUARD).unwrap();
        assert_eq!(r.states, 1);
        assert!(r.is_exactly_stationary());
        assert!(matches!(
            exact_stationarity_check(&stick, &mu, Torus::new(1, 10).unwrap(), 30, &k, STATE_GUARD),
            Err(MmpError::Guard { .. })
        ));
    }

    #[test]
    fn simplex_counts() {
        for (s, n) in [(1, 4), (3, 5), (4, 2), (2, 0)] {
            assert_eq!(enumerate_simplex(s, n).len() as u128, simplex_size(s, n));
        }
    }
}
