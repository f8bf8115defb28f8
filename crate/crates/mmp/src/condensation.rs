//! Canonical ensembles on a torus: μ_{N,L}(η) = ∏_x w(η(x)) / Z_{N,L}, built
//! from the convolution table Z_{n,ℓ} = ∑_k w(k) Z_{n−k,ℓ−1}, and the two
//! condensation set-ups (fixed volume, growing volume).

use num_traits::One;
use serde::Serialize;

use crate::error::{MmpError, Result};
use crate::measures::{critical_profile, tilt_and_partition, CriticalFugacity, Marginal};
use crate::num::{to_f64, KahanSum, Rational, Scalar};

/// Largest Z table, in cells (L+1)(N+1).
pub const CANONICAL_GUARD: u128 = 20_000_000;
/// Largest number of tuples enumerated for a joint or ordered law.
pub const ENUMERATION_GUARD: u128 = 50_000_000;

fn weights<S: Scalar>(w: &Marginal, n: usize) -> Result<Vec<S>> {
    if S::is_exact() {
        Ok(w.try_weights_exact(n)?.iter().map(S::from_rational).collect())
    } else {
        Ok(w.weights_f64(n)?.into_iter().map(S::from_f64).collect())
    }
}

fn convolve<S: Scalar>(w: &[S], prev: &[S]) -> Vec<S> {
    (0..prev.len())
        .map(|m| S::sum_all((0..=m).map(|k| w[k].clone() * prev[m - k].clone())))
        .collect()
}

#[derive(Clone, Debug)]
pub struct CanonicalEnsemble<S> {
    pub sites: usize,
    pub particles: usize,
    w: Vec<S>,
    /// z[ℓ][n] for ℓ ≤ sites, n ≤ particles
    z: Vec<Vec<S>>,
}

pub fn build_canonical<S: Scalar>(w: &Marginal, sites: usize, particles: usize) -> Result<CanonicalEnsemble<S>> {
    if sites == 0 {
        return Err(MmpError::Geometry("canonical ensemble needs at least one site".into()));
    }
    let cells = (sites as u128 + 1) * (particles as u128 + 1);
    if cells > CANONICAL_GUARD {
        return Err(MmpError::Guard { name: "canonical table".into(), limit: CANONICAL_GUARD, requested: cells });
    }
    let wv: Vec<S> = weights(w, particles)?;
    if wv.iter().any(|x| x.to_f64() < 0.0) {
        return Err(MmpError::InvalidParam { name: "weights".into(), reason: "negative weight".into() });
    }
    let mut z = Vec::with_capacity(sites + 1);
    let mut base = vec![S::zero(); particles + 1];
    base[0] = S::one();
    z.push(base);
    for l in 1..=sites {
        let next = convolve(&wv, &z[l - 1]);
        z.push(next);
    }
    if z[sites][particles].is_zero() {
        return Err(MmpError::Positivity { what: "canonical partition function".into(), index: particles });
    }
    Ok(CanonicalEnsemble { sites, particles, w: wv, z })
}

impl<S: Scalar> CanonicalEnsemble<S> {
    /// Z_{n,ℓ}.
    pub fn z(&self, n: usize, l: usize) -> &S {
        &self.z[l][n]
    }
    pub fn partition(&self) -> &S {
        &self.z[self.sites][self.particles]
    }
    pub fn weights(&self) -> &[S] {
        &self.w
    }

    /// μ_{N,L}(η); zero off the simplex.
    pub fn probability(&self, eta: &[usize]) -> S {
        if eta.len() != self.sites || eta.iter().sum::<usize>() != self.particles {
            return S::zero();
        }
        eta.iter().fold(S::one(), |p, &k| p * self.w[k].clone()) / self.partition().clone()
    }

    /// Law of one coordinate: P(η(x) = k) = w(k) Z_{N−k,L−1} / Z_{N,L}.
    pub fn single_site(&self) -> Vec<S> {
        let z = self.partition().clone();
        (0..=self.particles)
            .map(|k| self.w[k].clone() * self.z[self.sites - 1][self.particles - k].clone() / z.clone())
            .collect()
    }
}

fn tuples_upto(len: usize, total: usize) -> u128 {
    // C(total + len, len)
    let mut c: u128 = 1;
    for i in 1..=len as u128 {
        c = c.saturating_mul(total as u128 + i) / i;
    }
    c
}

/// Joint law of the first `sites` coordinates as (occupancies, probability),
/// listing every tuple with ∑k_i ≤ N.
pub fn canonical_marginal<S: Scalar>(ens: &CanonicalEnsemble<S>, sites: usize) -> Result<Vec<(Vec<usize>, S)>> {
    if sites > ens.sites {
        return Err(MmpError::Geometry(format!("{sites} coordinates of a {}-site ensemble", ens.sites)));
    }
    let count = tuples_upto(sites, ens.particles);
    if count > ENUMERATION_GUARD {
        return Err(MmpError::Guard { name: "marginal enumeration".into(), limit: ENUMERATION_GUARD, requested: count });
    }
    let rest = ens.sites - sites;
    let z = ens.partition().clone();
    let mut out = Vec::new();
    let mut cur = Vec::with_capacity(sites);
    fn walk<S: Scalar>(
        ens: &CanonicalEnsemble<S>,
        sites: usize,
        rest: usize,
        z: &S,
        left: usize,
        weight: S,
        cur: &mut Vec<usize>,
        out: &mut Vec<(Vec<usize>, S)>,
    ) {
        if cur.len() == sites {
            let p = weight * ens.z[rest][left].clone() / z.clone();
            out.push((cur.clone(), p));
            return;
        }
        for k in 0..=left {
            cur.push(k);
            walk(ens, sites, rest, z, left - k, weight.clone() * ens.w[k].clone(), cur, out);
            cur.pop();
        }
    }
    walk(ens, sites, rest, &z, ens.particles, S::one(), &mut cur, &mut out);
    Ok(out)
}

/// Law of M_L = max_x η(x): P(M ≤ m) is the partition function with weights
/// cut at m, divided by Z_{N,L}.
pub fn max_site_law<S: Scalar>(ens: &CanonicalEnsemble<S>) -> Vec<S> {
    let (n, l) = (ens.particles, ens.sites);
    let z = ens.partition().clone();
    let mut cdf: Vec<S> = Vec::with_capacity(n + 1);
    for m in 0..=n {
        if m * l < n {
            cdf.push(S::zero());
            continue;
        }
        let cut: Vec<S> = (0..=n).map(|k| if k <= m { ens.w[k].clone() } else { S::zero() }).collect();
        let mut col = vec![S::zero(); n + 1];
        col[0] = S::one();
        for _ in 0..l {
            col = convolve(&cut, &col);
        }
        cdf.push(col[n].clone() / z.clone());
    }
    let mut law = Vec::with_capacity(n + 1);
    let mut prev = S::zero();
    for c in cdf {
        law.push(c.clone() - prev);
        prev = c;
    }
    law
}

pub fn total_variation<S: Scalar>(p: &[S], q: &[S]) -> S {
    let n = p.len().max(q.len());
    let half = S::from_rational(&Rational::new(1.into(), 2.into()));
    let at = |v: &[S], i: usize| v.get(i).cloned().unwrap_or_else(S::zero);
    half * S::sum_all((0..n).map(|i| (at(p, i) - at(q, i)).abs_val()))
}

fn multinomial_of_sorted(a: &[usize], factorial: &[f64]) -> f64 {
    let mut m = factorial[a.len()];
    let mut i = 0;
    while i < a.len() {
        let j = (i..a.len()).find(|&j| a[j] != a[i]).unwrap_or(a.len());
        m /= factorial[j - i];
        i = j;
    }
    m
}

#[derive(Clone, Debug, Serialize)]
pub struct FixedVolumeReport {
    pub sites: usize,
    /// (N, TV) rows.
    pub rows: Vec<(usize, f64)>,
    pub decreasing: bool,
    /// Heuristic: TV below 0.05 at the largest N scanned.
    pub condensation_detected: bool,
}

/// With L fixed, orders the coordinates of μ_{N,L} and drops the maximum;
/// compares the result with the ordered law of L−1 independent draws from
/// the normalized weights at φ = 1, the limit when one site holds the excess.
pub fn fixed_volume_test(w: &Marginal, sites: usize, n_list: &[usize]) -> Result<FixedVolumeReport> {
    if sites == 0 {
        return Err(MmpError::Geometry("fixed-volume test needs at least one site".into()));
    }
    let fam = tilt_and_partition(w, &Rational::one())?;
    if fam.divergent() {
        return Err(MmpError::Divergent("partition function at phi = 1".into()));
    }
    let nmax = n_list.iter().copied().max().unwrap_or(0);
    let mu1 = fam.probability_f64(nmax)?;
    let wf = w.weights_f64(nmax)?;
    let mut factorial = vec![1.0f64; sites + 1];
    for i in 1..=sites {
        factorial[i] = factorial[i - 1] * i as f64;
    }
    let mut rows = Vec::with_capacity(n_list.len());
    for &n in n_list {
        rows.push((n, ordered_drop_max_tv(&wf, &mu1, sites, n, &factorial)?));
    }
    let decreasing = rows.windows(2).all(|p| p[1].1 < p[0].1);
    let condensation_detected = rows.last().is_some_and(|r| r.1 < 0.05);
    Ok(FixedVolumeReport { sites, rows, decreasing, condensation_detected })
}

fn ordered_drop_max_tv(w: &[f64], mu1: &[f64], sites: usize, n: usize, factorial: &[f64]) -> Result<f64> {
    let k = sites - 1;
    if k == 0 {
        return Ok(0.0);
    }
    let count = tuples_upto(k, n) / (factorial[k] as u128).max(1);
    if count > ENUMERATION_GUARD {
        return Err(MmpError::Guard { name: "ordered enumeration".into(), limit: ENUMERATION_GUARD, requested: count });
    }
    // Every configuration sorts to a_1 ≤ … ≤ a_k ≤ m with m = N − ∑a.
    let mut cells: Vec<(f64, f64)> = Vec::new();
    let mut a = Vec::with_capacity(sites);
    fn walk(
        w: &[f64],
        mu1: &[f64],
        k: usize,
        left: usize,
        lo: usize,
        a: &mut Vec<usize>,
        factorial: &[f64],
        cells: &mut Vec<(f64, f64)>,
    ) {
        if a.len() == k {
            if left < *a.last().unwrap_or(&0) {
                return;
            }
            a.push(left);
            let full = multinomial_of_sorted(a, factorial);
            a.pop();
            let p = full * a.iter().map(|&x| w[x]).product::<f64>() * w[left];
            let q = multinomial_of_sorted(a, factorial) * a.iter().map(|&x| mu1[x]).product::<f64>();
            cells.push((p, q));
            return;
        }
        let slots = k - a.len() + 1;
        let mut x = lo;
        while x * slots <= left {
            a.push(x);
            walk(w, mu1, k, left - x, x, a, factorial, cells);
            a.pop();
            x += 1;
        }
    }
    walk(w, mu1, k, n, 0, &mut a, factorial, &mut cells);
    let mut total = KahanSum::new();
    cells.iter().for_each(|c| total.add(c.0));
    let z = total.value();
    if z <= 0.0 {
        return Err(MmpError::Positivity { what: "canonical partition function".into(), index: n });
    }
    let mut diff = KahanSum::new();
    let mut q_in = KahanSum::new();
    for (p, q) in &cells {
        diff.add((p / z - q).abs());
        q_in.add(*q);
    }
    Ok(0.5 * (diff.value() + (1.0 - q_in.value()).max(0.0)))
}

/// Grand-canonical law μ_φ on 0..=upto in floating point, with the mass
/// beyond `upto`.
fn grand_canonical_law(w: &Marginal, phi: f64, upto: usize) -> Result<(Vec<f64>, f64)> {
    let (z, _) = float_moments(w, phi)?;
    let wf = w.weights_f64(upto)?;
    let mut p = 1.0;
    let law: Vec<f64> = wf
        .iter()
        .map(|x| {
            let v = x * p / z;
            p *= phi;
            v
        })
        .collect();
    let inside: f64 = law.iter().sum();
    Ok((law, (1.0 - inside).max(0.0)))
}

/// (Z_φ, mean) by direct summation until the terms are negligible.
fn float_moments(w: &Marginal, phi: f64) -> Result<(f64, f64)> {
    let mut upto = 256usize;
    loop {
        let wf = w.weights_f64(upto)?;
        let (mut z, mut m) = (KahanSum::new(), KahanSum::new());
        let mut p = 1.0;
        for (n, x) in wf.iter().enumerate() {
            z.add(x * p);
            m.add(n as f64 * x * p);
            p *= phi;
        }
        let last = wf[upto] * phi.powi(upto as i32) * upto as f64;
        if last <= 1e-17 * m.value().max(z.value()) || upto >= 1 << 22 {
            return Ok((z.value(), m.value() / z.value()));
        }
        upto *= 2;
    }
}

/// φ with mean ρ, for ρ below the critical density.
fn fugacity_for_density(w: &Marginal, rho: f64, phi_c: f64) -> Result<f64> {
    let (mut lo, mut hi) = (0.0, if phi_c.is_finite() { phi_c } else { 1.0 });
    if !phi_c.is_finite() {
        while float_moments(w, hi)?.1 < rho {
            hi *= 2.0;
        }
    }
    for _ in 0..80 {
        let mid = 0.5 * (lo + hi);
        if float_moments(w, mid)?.1 < rho {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

#[derive(Clone, Debug, Serialize)]
pub struct ThermoRow {
    pub sites: usize,
    pub particles: usize,
    pub tv: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct ThermoReport {
    pub rho: f64,
    pub rho_c: f64,
    pub phi: f64,
    pub supercritical: bool,
    pub marginal_sites: usize,
    pub rows: Vec<ThermoRow>,
    pub decreasing: bool,
}

/// TV between the canonical law of `marginal_sites` coordinates at
/// N = ⌊ρL⌋ and the product of μ_φ with φ matching min(ρ, ρ_c).
pub fn thermodynamic_test(
    w: &Marginal,
    rho: &Rational,
    l_list: &[usize],
    marginal_sites: usize,
    exact: bool,
) -> Result<ThermoReport> {
    let profile = critical_profile(w, 1e-12);
    let rho_f = to_f64(rho);
    let supercritical = profile.rho_c.is_finite() && rho_f >= profile.rho_c;
    let phi = if supercritical {
        profile.phi_c.value()
    } else {
        fugacity_for_density(w, rho_f, profile.phi_c.value())?
    };
    let nmax = l_list.iter().map(|&l| (rho * Rational::from_integer((l as i64).into())).floor()).max();
    let nmax = nmax.map_or(0, |n| to_f64(&n) as usize);
    let (target, _) = match (&profile.phi_c, supercritical) {
        (CriticalFugacity::Exact(pc), true) => {
            let fam = tilt_and_partition(w, pc)?;
            let law = fam.probability_f64(nmax)?;
            let inside: f64 = law.iter().sum();
            (law, 1.0 - inside)
        }
        _ => grand_canonical_law(w, phi, nmax)?,
    };
    let mut rows = Vec::with_capacity(l_list.len());
    for &l in l_list {
        let n = to_f64(&(rho * Rational::from_integer((l as i64).into())).floor()) as usize;
        let joint: Vec<(Vec<usize>, f64)> = if marginal_sites == 0 {
            vec![(vec![], 1.0)]
        } else if exact {
            let ens = build_canonical::<Rational>(w, l, n)?;
            canonical_marginal(&ens, marginal_sites)?.into_iter().map(|(k, p)| (k, to_f64(&p))).collect()
        } else {
            let ens = build_canonical::<f64>(w, l, n)?;
            canonical_marginal(&ens, marginal_sites)?
        };
        let mut diff = KahanSum::new();
        let mut q_in = KahanSum::new();
        for (k, p) in &joint {
            let q: f64 = k.iter().map(|&i| target[i]).product();
            diff.add((p - q).abs());
            q_in.add(q);
        }
        let tv = 0.5 * (diff.value() + (1.0 - q_in.value()).max(0.0));
        rows.push(ThermoRow { sites: l, particles: n, tv });
    }
    let decreasing = rows.windows(2).all(|p| p[1].tv < p[0].tv);
    Ok(ThermoReport { rho: rho_f, rho_c: profile.rho_c, phi, supercritical, marginal_sites, rows, decreasing })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::num::{int, rat};
    use num_traits::Zero;

    fn ex4(b: Rational) -> Marginal {
        Marginal::zrp_weights(b)
    }

    #[test]
    fn one_site_is_a_point_mass() {
        let ens = build_canonical::<Rational>(&ex4(int(2)), 1, 7).unwrap();
        let m = ens.single_site();
        assert!(m[..7].iter().all(|p| p.is_zero()));
        assert_eq!(m[7], Rational::one());
        let law = max_site_law(&ens);
        assert_eq!(law[7], Rational::one());
    }

    #[test]
    fn two_sites_match_direct_formula() {
        let w = ex4(rat(3, 2));
        let n = 9;
        let ens = build_canonical::<Rational>(&w, 2, n).unwrap();
        let wv = w.weights_exact(n);
        let norm: Rational = (0..=n).map(|j| &wv[j] * &wv[n - j]).sum();
        for (k, p) in ens.single_site().iter().enumerate() {
            assert_eq!(*p, &wv[k] * &wv[n - k] / &norm);
        }
    }

    #[test]
    fn geometric_weights_are_uniform_on_the_simplex() {
        for l in 1..=4 {
            for n in 0..=6 {
                let ens = build_canonical::<Rational>(&Marginal::geometric(rat(2, 5)), l, n).unwrap();
                let joint = canonical_marginal(&ens, l).unwrap();
                let support: Vec<_> = joint.iter().filter(|(k, _)| k.iter().sum::<usize>() == n).collect();
                let u = Rational::new(1.into(), (support.len() as i64).into());
                assert!(support.iter().all(|(_, p)| *p == u));
                assert!(joint.iter().filter(|(k, _)| k.iter().sum::<usize>() != n).all(|(_, p)| p.is_zero()));
            }
        }
    }

    #[test]
    fn max_law_two_sites_geometric() {
        let ens = build_canonical::<Rational>(&Marginal::geometric(int(1)), 2, 4).unwrap();
        let law = max_site_law(&ens);
        assert_eq!(law, vec![int(0), int(0), rat(1, 5), rat(2, 5), rat(2, 5)]);
    }

    #[test]
    fn empty_marginal_and_guard() {
        let ens = build_canonical::<f64>(&ex4(int(4)), 5, 10).unwrap();
        let m = canonical_marginal(&ens, 0).unwrap();
        assert_eq!(m.len(), 1);
        assert!((m[0].1 - 1.0).abs() < 1e-12);
        assert!(matches!(build_canonical::<f64>(&ex4(int(4)), 10_000, 10_000), Err(MmpError::Guard { .. })));
    }

    #[test]
    fn float_table_tracks_exact() {
        let w = ex4(int(4));
        let a = build_canonical::<Rational>(&w, 6, 15).unwrap();
        let b = build_canonical::<f64>(&w, 6, 15).unwrap();
        for (p, q) in a.single_site().iter().zip(b.single_site()) {
            assert!((to_f64(p) - q).abs() < 1e-13);
        }
    }

    #[test]
    fn fixed_volume_refuses_divergent_partition() {
        assert!(matches!(
            fixed_volume_test(&Marginal::geometric(int(1)), 3, &[10]),
            Err(MmpError::Divergent(_))
        ));
    }

    #[test]
    fn fixed_volume_two_sites_is_law_of_the_minimum() {
        let w = ex4(rat(3, 2));
        let n = 12;
        let ens = build_canonical::<f64>(&w, 2, n).unwrap();
        let mut min_law = vec![0.0; n + 1];
        for (k, p) in canonical_marginal(&ens, 2).unwrap() {
            if k[0] + k[1] == n {
                min_law[k[0].min(k[1])] += p;
            }
        }
        let mu1 = tilt_and_partition(&w, &int(1)).unwrap().probability_f64(n).unwrap();
        let inside: f64 = mu1.iter().sum();
        let expect = total_variation(&min_law, &mu1) + 0.5 * (1.0 - inside);
        let got = fixed_volume_test(&w, 2, &[n]).unwrap().rows[0].1;
        assert!((got - expect).abs() < 1e-12, "{got} vs {expect}");
    }

    #[test]
    fn subcritical_background_close_to_grand_canonical() {
        let r = thermodynamic_test(&ex4(int(4)), &rat(1, 4), &[10, 20, 40], 1, true).unwrap();
        assert!(!r.supercritical);
        assert!(r.decreasing, "{:?}", r.rows);
        assert!(r.rows[2].tv < 0.05);
        let r0 = thermodynamic_test(&ex4(int(4)), &rat(1, 4), &[10], 0, false).unwrap();
        assert!(r0.rows[0].tv.abs() < 1e-15);
    }
}
