//! Continuous-time kinetic Monte Carlo on a torus, for one copy of the
//! process or for two copies moved together by the coupled rates.
//!
//! Sites are drawn from a sum tree over per-site departure weights
//! D(x) = ∑_y p(x,y) ∑_k g^k_{η(x),η(y)}. After a jump x → y only x, y and
//! the sites that send mass into x or y need new weights.

use std::collections::HashMap;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::coupling::{coupling_table, CouplingMethod};
use crate::error::{MmpError, Result};
use crate::lattice::{Kernel, Torus};
use crate::measures::{tilt_and_partition, Marginal};
use crate::num::{parse_rational, to_f64, Rational};
use crate::seq::Sequence;
use crate::rates::RateFamily;

const AUDIT_EVERY: u64 = 1_000_000;
const CONSERVATION_EVERY: u64 = 10_000;

pub fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(stream);
    r
}

/// Binary sum tree over nonnegative weights.
#[derive(Clone, Debug)]
struct SumTree {
    size: usize,
    t: Vec<f64>,
}

impl SumTree {
    fn new(n: usize) -> Self {
        let size = n.next_power_of_two().max(1);
        SumTree { size, t: vec![0.0; 2 * size] }
    }
    fn set(&mut self, i: usize, v: f64) {
        let mut j = i + self.size;
        self.t[j] = v;
        while j > 1 {
            j /= 2;
            self.t[j] = self.t[2 * j] + self.t[2 * j + 1];
        }
    }
    fn get(&self, i: usize) -> f64 {
        self.t[i + self.size]
    }
    fn total(&self) -> f64 {
        self.t[1]
    }
    /// Index whose cumulative interval contains u ∈ [0, total).
    fn find(&self, mut u: f64) -> usize {
        let mut j = 1;
        while j < self.size {
            let left = self.t[2 * j];
            if u < left || self.t[2 * j + 1] <= 0.0 {
                j *= 2;
            } else {
                u -= left;
                j = 2 * j + 1;
            }
        }
        j - self.size
    }
}

/// Float jump rates at (α, β): cumulative sums over k = 1..=α.
#[derive(Debug)]
struct JumpRates {
    cum: Vec<f64>,
}

impl JumpRates {
    fn total(&self) -> f64 {
        self.cum.last().copied().unwrap_or(0.0)
    }
    fn sample(&self, u: f64) -> usize {
        let i = self.cum.partition_point(|&c| c <= u);
        i.min(self.cum.len() - 1) + 1
    }
}

struct RateCache {
    family: RateFamily,
    ignore_arrival: bool,
    map: HashMap<(u64, u64), Arc<JumpRates>>,
}

impl RateCache {
    fn new(family: RateFamily) -> Self {
        let ignore_arrival = family.class().is_zrp_like();
        RateCache { family, ignore_arrival, map: HashMap::new() }
    }
    fn get(&mut self, a: u64, b: u64) -> Arc<JumpRates> {
        let key = (a, if self.ignore_arrival { 0 } else { b });
        let fam = &self.family;
        self.map
            .entry(key)
            .or_insert_with(|| {
                let mut s = 0.0;
                let cum = fam
                    .rates_at(a as usize, b as usize)
                    .iter()
                    .map(|g| {
                        s += to_f64(g);
                        s
                    })
                    .collect();
                Arc::new(JumpRates { cum })
            })
            .clone()
    }
}

/// How the initial configuration is produced.
#[derive(Clone, Debug)]
pub enum Init {
    /// ⌊ρ·sites⌋ particles dropped uniformly at random.
    FixedDensity(Rational),
    Deterministic(Vec<u64>),
    /// Independent sites drawn from the normalized tilt μ_φ.
    ProductSample { mu: Marginal, phi: Rational },
}

impl Init {
    /// Reads `fixed_density(ρ)`, `deterministic(n, …)` or `product(weights, φ)`.
    pub fn parse(s: &str) -> Result<Init> {
        let bad = |m: String| MmpError::Parse(format!("initial condition: {m}"));
        let s = s.trim();
        let (head, body) = s
            .split_once('(')
            .and_then(|(h, rest)| rest.strip_suffix(')').map(|b| (h.trim(), b)))
            .ok_or_else(|| bad(format!("cannot read {s:?}")))?;
        match head {
            "fixed_density" => Ok(Init::FixedDensity(parse_rational(body)?)),
            "deterministic" => body
                .split(',')
                .map(|t| t.trim().parse::<u64>().map_err(|_| bad(format!("bad occupancy {t:?}"))))
                .collect::<Result<Vec<_>>>()
                .map(Init::Deterministic),
            "product" => {
                // split at the last comma outside parentheses
                let mut depth = 0i32;
                let mut split = None;
                for (i, ch) in body.char_indices() {
                    match ch {
                        '(' => depth += 1,
                        ')' => depth -= 1,
                        ',' if depth == 0 => split = Some(i),
                        _ => {}
                    }
                }
                let i = split.ok_or_else(|| bad("product(weights, phi) needs two arguments".into()))?;
                let mu = Marginal::from_sequence(&Sequence::parse(&body[..i])?)?;
                Ok(Init::ProductSample { mu, phi: parse_rational(&body[i + 1..])? })
            }
            other => Err(bad(format!("unknown kind {other:?}"))),
        }
    }

    fn realize(&self, sites: usize, rng: &mut ChaCha8Rng) -> Result<Vec<u64>> {
        match self {
            Init::Deterministic(v) => {
                if v.len() != sites {
                    return Err(MmpError::Geometry(format!("{} occupancies for {sites} sites", v.len())));
                }
                Ok(v.clone())
            }
            Init::FixedDensity(rho) => {
                if rho < &Rational::from_integer(0.into()) {
                    return Err(MmpError::InvalidParam { name: "density".into(), reason: "negative".into() });
                }
                let n = (rho * Rational::from_integer((sites as i64).into())).floor();
                let n: u64 = to_f64(&n) as u64;
                let mut v = vec![0u64; sites];
                for _ in 0..n {
                    v[rng.gen_range(0..sites)] += 1;
                }
                Ok(v)
            }
            Init::ProductSample { mu, phi } => {
                let t = tilt_and_partition(mu, phi)?;
                if t.divergent() {
                    return Err(MmpError::Divergent(format!("partition function at phi = {}", to_f64(phi))));
                }
                let probs = sampling_law(&t)?;
                let mut cum = Vec::with_capacity(probs.len());
                let mut s = 0.0;
                for p in probs {
                    s += p;
                    cum.push(s);
                }
                Ok((0..sites)
                    .map(|_| {
                        let u = rng.gen::<f64>() * s;
                        cum.partition_point(|&c| c <= u).min(cum.len() - 1) as u64
                    })
                    .collect())
            }
        }
    }
}

fn sampling_law(t: &crate::measures::TiltedFamily) -> Result<Vec<f64>> {
    let mut upto = 64;
    loop {
        let p = t.probability_f64(upto)?;
        let mass: f64 = p.iter().sum();
        if mass > 1.0 - 1e-13 || upto >= 1 << 16 {
            return Ok(p);
        }
        upto *= 2;
    }
}

/// Time-weighted histogram of single-site occupancies and of the maximum.
#[derive(Clone, Debug, Default)]
struct Occupation {
    count: Vec<u64>,
    hist: Vec<f64>,
    last: Vec<f64>,
    max: usize,
    max_law: Vec<f64>,
    max_since: f64,
}

impl Occupation {
    fn new(config: &[u64], now: f64) -> Self {
        let mut o = Occupation::default();
        for &a in config {
            o.grow(a as usize);
            o.count[a as usize] += 1;
        }
        o.last = vec![now; o.count.len()];
        o.max = config.iter().copied().max().unwrap_or(0) as usize;
        o.max_since = now;
        o
    }
    fn grow(&mut self, n: usize) {
        if n >= self.count.len() {
            self.count.resize(n + 1, 0);
            self.hist.resize(n + 1, 0.0);
            self.last.resize(n + 1, self.max_since);
            self.max_law.resize(n + 1, 0.0);
        }
    }
    fn settle(&mut self, n: usize, now: f64) {
        self.hist[n] += self.count[n] as f64 * (now - self.last[n]);
        self.last[n] = now;
    }
    fn moved(&mut self, from: u64, to: u64, now: f64) {
        let (from, to) = (from as usize, to as usize);
        self.grow(to);
        self.settle(from, now);
        self.settle(to, now);
        self.count[from] -= 1;
        self.count[to] += 1;
        let new_max = if to > self.max {
            to
        } else {
            let mut m = self.max;
            while self.count[m] == 0 {
                m -= 1;
            }
            m
        };
        if new_max != self.max {
            self.max_law[self.max] += now - self.max_since;
            self.max_since = now;
            self.max = new_max;
        }
    }
    fn finish(&mut self, now: f64) -> (Vec<f64>, Vec<f64>) {
        for n in 0..self.count.len() {
            self.settle(n, now);
        }
        self.max_law[self.max] += now - self.max_since;
        self.max_since = now;
        let norm = |v: &[f64]| {
            let s: f64 = v.iter().sum();
            if s > 0.0 {
                v.iter().map(|x| x / s).collect()
            } else {
                vec![0.0; v.len()]
            }
        };
        (norm(&self.hist), norm(&self.max_law))
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct SimReport {
    pub seed: u64,
    pub stream: u64,
    pub sites: usize,
    pub particles: u64,
    pub events: u64,
    pub burn_in: u64,
    pub time: f64,
    pub absorbing: bool,
    /// Time-weighted single-site occupancy law after burn-in.
    pub histogram: Vec<f64>,
    /// Time-weighted law of the maximal occupancy after burn-in.
    pub max_law: Vec<f64>,
    pub tv_to_target: Option<f64>,
    /// (events after burn-in, TV to target) at each checkpoint.
    pub checkpoints: Vec<(u64, f64)>,
    /// Coupled runs: events after which the pair was not ordered.
    pub order_violations: Option<u64>,
    /// Coupled runs: law of the second copy.
    pub second_histogram: Option<Vec<f64>>,
    pub final_config: Vec<u64>,
}

#[derive(Clone, Debug, Default)]
pub struct SimOptions {
    pub events: u64,
    pub burn_in: u64,
    /// Target single-site law for TV distances.
    pub target: Option<Vec<f64>>,
    /// Number of TV checkpoints over the measured events (0 for none).
    pub checkpoints: u64,
}

pub fn total_variation(p: &[f64], q: &[f64]) -> f64 {
    let n = p.len().max(q.len());
    0.5 * (0..n).map(|i| (p.get(i).unwrap_or(&0.0) - q.get(i).unwrap_or(&0.0)).abs()).sum::<f64>()
}

/// A single trajectory with its rate caches.
pub struct System {
    torus: Torus,
    nbrs: Vec<Vec<(usize, f64)>>,
    /// senders[y]: sites x with y among their targets
    senders: Vec<Vec<usize>>,
    config: Vec<u64>,
    rates: RateCache,
    tree: SumTree,
    rng: ChaCha8Rng,
    seed: u64,
    stream: u64,
    time: f64,
    events: u64,
}

fn senders_of(nbrs: &[Vec<(usize, f64)>]) -> Vec<Vec<usize>> {
    let mut s = vec![Vec::new(); nbrs.len()];
    for (x, row) in nbrs.iter().enumerate() {
        for (y, _) in row {
            s[*y].push(x);
        }
    }
    s
}

pub fn build_system(family: &RateFamily, kernel: &Kernel, torus: Torus, init: &Init, seed: u64) -> Result<System> {
    build_system_stream(family, kernel, torus, init, seed, 0)
}

/// As [`build_system`], drawing from an independent stream of the seed.
pub fn build_system_stream(
    family: &RateFamily,
    kernel: &Kernel,
    torus: Torus,
    init: &Init,
    seed: u64,
    stream: u64,
) -> Result<System> {
    let nbrs = torus.neighbours_f64(kernel)?;
    let mut rng = rng_for(seed, stream);
    let config = init.realize(torus.sites(), &mut rng)?;
    let senders = senders_of(&nbrs);
    let mut s = System {
        torus,
        tree: SumTree::new(torus.sites()),
        nbrs,
        senders,
        config,
        rates: RateCache::new(family.clone()),
        rng,
        seed,
        stream,
        time: 0.0,
        events: 0,
    };
    s.refresh_all();
    Ok(s)
}

impl System {
    pub fn config(&self) -> &[u64] {
        &self.config
    }
    pub fn particles(&self) -> u64 {
        self.config.iter().sum()
    }
    pub fn time(&self) -> f64 {
        self.time
    }

    fn weight(&mut self, x: usize) -> f64 {
        let a = self.config[x];
        if a == 0 {
            return 0.0;
        }
        let mut d = 0.0;
        for i in 0..self.nbrs[x].len() {
            let (y, p) = self.nbrs[x][i];
            d += p * self.rates.get(a, self.config[y]).total();
        }
        d
    }

    fn refresh(&mut self, x: usize) {
        let w = self.weight(x);
        self.tree.set(x, w);
    }

    fn refresh_all(&mut self) {
        for x in 0..self.config.len() {
            self.refresh(x);
        }
    }

    fn audit(&mut self) {
        for x in 0..self.config.len() {
            let w = self.weight(x);
            let old = self.tree.get(x);
            assert!((w - old).abs() <= 1e-9 * w.abs().max(1.0), "rate cache drift at site {x}");
            self.tree.set(x, w);
        }
    }

    /// One jump; `None` when the total rate vanishes. Returns (dt, x, y, k).
    fn step(&mut self) -> Option<(f64, usize, usize, u64)> {
        let total = self.tree.total();
        if total <= 0.0 {
            return None;
        }
        let dt = -(1.0 - self.rng.gen::<f64>()).ln() / total;
        let x = self.tree.find(self.rng.gen::<f64>() * total);
        let a = self.config[x];
        let mut u = self.rng.gen::<f64>() * self.tree.get(x);
        let mut pick = None;
        for &(y, p) in &self.nbrs[x] {
            let r = self.rates.get(a, self.config[y]);
            let w = p * r.total();
            if u < w || pick.is_none() && w > 0.0 && u < w * (1.0 + 1e-12) {
                pick = Some((y, r, u / p));
                break;
            }
            u -= w;
            if w > 0.0 {
                pick = Some((y, r, w / p * (1.0 - 1e-16)));
            }
        }
        let (y, r, v) = pick?;
        let k = r.sample(v.min(r.total() * (1.0 - 1e-16))) as u64;
        self.config[x] -= k;
        self.config[y] += k;
        self.time += dt;
        self.events += 1;
        self.refresh(x);
        self.refresh(y);
        for i in 0..self.senders[x].len() {
            let z = self.senders[x][i];
            self.refresh(z);
        }
        for i in 0..self.senders[y].len() {
            let z = self.senders[y][i];
            self.refresh(z);
        }
        Some((dt, x, y, k))
    }

    fn check_conservation(&self, n: u64) {
        assert_eq!(self.particles(), n, "particle number changed");
    }

    pub fn simulate(&mut self, opts: &SimOptions) -> SimReport {
        let n = self.particles();
        let mut absorbing = false;
        for _ in 0..opts.burn_in {
            if self.step().is_none() {
                absorbing = true;
                break;
            }
            self.housekeeping(n);
        }
        let t0 = self.time;
        let mut occ = Occupation::new(&self.config, t0);
        let every = if opts.checkpoints > 0 { (opts.events / opts.checkpoints).max(1) } else { 0 };
        let mut checkpoints = Vec::new();
        let mut done = 0u64;
        if !absorbing {
            while done < opts.events {
                let before = self.config.clone();
                match self.step() {
                    None => {
                        absorbing = true;
                        break;
                    }
                    Some((_, x, y, _)) => {
                        let now = self.time;
                        occ.moved(before[x], self.config[x], now);
                        occ.moved(before[y], self.config[y], now);
                    }
                }
                done += 1;
                self.housekeeping(n);
                if every > 0 && done.is_multiple_of(every) {
                    if let Some(target) = &opts.target {
                        let (h, _) = occ.clone().finish(self.time);
                        checkpoints.push((done, total_variation(&h, target)));
                    }
                }
            }
        }
        let (histogram, max_law) = if self.time > t0 {
            occ.finish(self.time)
        } else {
            // no time elapsed: report the current configuration
            let mut h = vec![0.0; (self.config.iter().copied().max().unwrap_or(0) + 1) as usize];
            for &a in &self.config {
                h[a as usize] += 1.0 / self.config.len().max(1) as f64;
            }
            let mut m = vec![0.0; h.len()];
            m[h.len() - 1] = 1.0;
            (h, m)
        };
        SimReport {
            seed: self.seed,
            stream: self.stream,
            sites: self.torus.sites(),
            particles: n,
            events: done,
            burn_in: opts.burn_in,
            time: self.time - t0,
            absorbing,
            tv_to_target: opts.target.as_ref().map(|t| total_variation(&histogram, t)),
            histogram,
            max_law,
            checkpoints,
            order_violations: None,
            second_histogram: None,
            final_config: self.config.clone(),
        }
    }

    fn housekeeping(&mut self, n: u64) {
        debug_assert_eq!(self.particles(), n);
        if self.events.is_multiple_of(CONSERVATION_EVERY) {
            self.check_conservation(n);
        }
        if self.events.is_multiple_of(AUDIT_EVERY) {
            self.audit();
        }
    }
}

/// Runs independent replicas on streams 0..replicas of one master seed.
pub fn run_replicas(
    family: &RateFamily,
    kernel: &Kernel,
    torus: Torus,
    init: &Init,
    seed: u64,
    replicas: u64,
    opts: &SimOptions,
) -> Result<Vec<SimReport>> {
    (0..replicas)
        .into_par_iter()
        .map(|r| {
            let mut s = build_system_stream(family, kernel, torus, init, seed, r)?;
            Ok(s.simulate(opts))
        })
        .collect()
}

#[derive(Clone, Debug, Serialize)]
pub struct Aggregate {
    pub replicas: usize,
    pub events: u64,
    pub histogram: Vec<f64>,
    pub standard_error: Vec<f64>,
    pub max_law: Vec<f64>,
    pub mean_max: f64,
    pub tv_to_target: Option<f64>,
    pub order_violations: Option<u64>,
}

/// Equal-weight average of replica laws with per-bin standard errors.
pub fn estimate_observables(reports: &[SimReport], target: Option<&[f64]>) -> Result<Aggregate> {
    if reports.is_empty() {
        return Err(MmpError::InvalidParam { name: "reports".into(), reason: "no streams".into() });
    }
    let r = reports.len() as f64;
    let width = reports.iter().map(|s| s.histogram.len()).max().unwrap_or(0);
    let mwidth = reports.iter().map(|s| s.max_law.len()).max().unwrap_or(0);
    let at = |v: &[f64], i: usize| v.get(i).copied().unwrap_or(0.0);
    let histogram: Vec<f64> = (0..width).map(|i| reports.iter().map(|s| at(&s.histogram, i)).sum::<f64>() / r).collect();
    let standard_error = (0..width)
        .map(|i| {
            if reports.len() < 2 {
                return 0.0;
            }
            let var = reports.iter().map(|s| (at(&s.histogram, i) - histogram[i]).powi(2)).sum::<f64>() / (r - 1.0);
            (var / r).sqrt()
        })
        .collect();
    let max_law: Vec<f64> = (0..mwidth).map(|i| reports.iter().map(|s| at(&s.max_law, i)).sum::<f64>() / r).collect();
    let mean_max = max_law.iter().enumerate().map(|(m, p)| m as f64 * p).sum();
    let order_violations = if reports.iter().all(|s| s.order_violations.is_some()) {
        Some(reports.iter().map(|s| s.order_violations.unwrap_or(0)).sum())
    } else {
        None
    };
    Ok(Aggregate {
        replicas: reports.len(),
        events: reports.iter().map(|s| s.events).sum(),
        tv_to_target: target.map(|t| total_variation(&histogram, t)),
        histogram,
        standard_error,
        max_law,
        mean_max,
        order_violations,
    })
}

/// Coupled transition list at one quad: (k, l, cumulative rate).
#[derive(Debug)]
struct CoupledRates {
    moves: Vec<(u64, u64, f64)>,
}

impl CoupledRates {
    fn total(&self) -> f64 {
        self.moves.last().map_or(0.0, |m| m.2)
    }
}

/// Two copies on the same torus driven by the coupled rates.
pub struct CoupledSystem {
    torus: Torus,
    nbrs: Vec<Vec<(usize, f64)>>,
    senders: Vec<Vec<usize>>,
    eta: Vec<u64>,
    zeta: Vec<u64>,
    family: RateFamily,
    cache: HashMap<[u64; 4], Arc<CoupledRates>>,
    tree: SumTree,
    rng: ChaCha8Rng,
    seed: u64,
    stream: u64,
    time: f64,
    events: u64,
}

pub fn build_coupled(
    family: &RateFamily,
    kernel: &Kernel,
    torus: Torus,
    first: &Init,
    second: &Init,
    seed: u64,
    stream: u64,
) -> Result<CoupledSystem> {
    let nbrs = torus.neighbours_f64(kernel)?;
    let mut rng = rng_for(seed, stream);
    let eta = first.realize(torus.sites(), &mut rng)?;
    let zeta = second.realize(torus.sites(), &mut rng)?;
    let senders = senders_of(&nbrs);
    let mut s = CoupledSystem {
        torus,
        tree: SumTree::new(torus.sites()),
        nbrs,
        senders,
        eta,
        zeta,
        family: family.clone(),
        cache: HashMap::new(),
        rng,
        seed,
        stream,
        time: 0.0,
        events: 0,
    };
    for x in 0..s.eta.len() {
        s.refresh(x);
    }
    Ok(s)
}

impl CoupledSystem {
    pub fn configs(&self) -> (&[u64], &[u64]) {
        (&self.eta, &self.zeta)
    }

    fn rates(&mut self, quad: [u64; 4]) -> Arc<CoupledRates> {
        let fam = &self.family;
        self.cache
            .entry(quad)
            .or_insert_with(|| {
                let q = quad.map(|v| v as usize);
                let t = coupling_table(fam, q, CouplingMethod::MinFormula);
                let mut s = 0.0;
                let mut moves = Vec::new();
                for (k, row) in t.g.iter().enumerate() {
                    for (l, v) in row.iter().enumerate() {
                        let v = to_f64(v);
                        if (k, l) != (0, 0) && v > 0.0 {
                            s += v;
                            moves.push((k as u64, l as u64, s));
                        }
                    }
                }
                Arc::new(CoupledRates { moves })
            })
            .clone()
    }

    fn quad(&self, x: usize, y: usize) -> [u64; 4] {
        [self.eta[x], self.eta[y], self.zeta[x], self.zeta[y]]
    }

    fn refresh(&mut self, x: usize) {
        let mut d = 0.0;
        if self.eta[x] + self.zeta[x] > 0 {
            for i in 0..self.nbrs[x].len() {
                let (y, p) = self.nbrs[x][i];
                let q = self.quad(x, y);
                d += p * self.rates(q).total();
            }
        }
        self.tree.set(x, d);
    }

    fn ordered(&self) -> bool {
        self.eta.iter().zip(&self.zeta).all(|(a, b)| a <= b)
    }

    fn step(&mut self) -> Option<(usize, usize)> {
        let total = self.tree.total();
        if total <= 0.0 {
            return None;
        }
        let dt = -(1.0 - self.rng.gen::<f64>()).ln() / total;
        let x = self.tree.find(self.rng.gen::<f64>() * total);
        let mut u = self.rng.gen::<f64>() * self.tree.get(x);
        let mut chosen = None;
        for i in 0..self.nbrs[x].len() {
            let (y, p) = self.nbrs[x][i];
            let r = self.rates(self.quad(x, y));
            let w = p * r.total();
            if w > 0.0 {
                chosen = Some((y, r.clone(), (u / p).min(r.total() * (1.0 - 1e-16))));
                if u < w {
                    break;
                }
            }
            u -= w;
        }
        let (y, r, v) = chosen?;
        let i = r.moves.partition_point(|m| m.2 <= v).min(r.moves.len() - 1);
        let (k, l, _) = r.moves[i];
        self.eta[x] -= k;
        self.eta[y] += k;
        self.zeta[x] -= l;
        self.zeta[y] += l;
        self.time += dt;
        self.events += 1;
        for site in [x, y] {
            self.refresh(site);
            for j in 0..self.senders[site].len() {
                let z = self.senders[site][j];
                self.refresh(z);
            }
        }
        Some((x, y))
    }
}

/// Runs the coupled pair; counts events after which the pair is not ordered
/// when it started ordered.
pub fn simulate_coupled(sys: &mut CoupledSystem, events: u64) -> SimReport {
    let n_eta: u64 = sys.eta.iter().sum();
    let n_zeta: u64 = sys.zeta.iter().sum();
    let started_ordered = sys.ordered();
    let t0 = sys.time;
    let mut occ = Occupation::new(&sys.eta, t0);
    let mut occ2 = Occupation::new(&sys.zeta, t0);
    let mut violations = 0u64;
    let mut done = 0;
    let mut absorbing = false;
    while done < events {
        let (be, bz) = (sys.eta.clone(), sys.zeta.clone());
        match sys.step() {
            None => {
                absorbing = true;
                break;
            }
            Some((x, y)) => {
                let now = sys.time;
                occ.moved(be[x], sys.eta[x], now);
                occ.moved(be[y], sys.eta[y], now);
                occ2.moved(bz[x], sys.zeta[x], now);
                occ2.moved(bz[y], sys.zeta[y], now);
                if started_ordered && !(sys.eta[x] <= sys.zeta[x] && sys.eta[y] <= sys.zeta[y] && sys.ordered()) {
                    violations += 1;
                }
            }
        }
        done += 1;
        if sys.events.is_multiple_of(CONSERVATION_EVERY) {
            assert_eq!(sys.eta.iter().sum::<u64>(), n_eta);
            assert_eq!(sys.zeta.iter().sum::<u64>(), n_zeta);
        }
    }
    let (histogram, max_law) = occ.finish(sys.time.max(t0 + f64::MIN_POSITIVE));
    let (h2, _) = occ2.finish(sys.time.max(t0 + f64::MIN_POSITIVE));
    SimReport {
        seed: sys.seed,
        stream: sys.stream,
        sites: sys.torus.sites(),
        particles: n_eta,
        events: done,
        burn_in: 0,
        time: sys.time - t0,
        absorbing,
        histogram,
        max_law,
        tv_to_target: None,
        checkpoints: Vec::new(),
        order_violations: started_ordered.then_some(violations),
        second_histogram: Some(h2),
        final_config: sys.eta.clone(),
    }
}
