//! Periodic tori and translation-invariant jump kernels.

use std::fmt;

use num_traits::{One, Signed, Zero};
use serde::Serialize;

use crate::error::{MmpError, Result};
use crate::num::{fmt_rational, parse_rational, to_f64, Rational};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum KernelSymmetry {
    Symmetric,
    Asymmetric,
}

/// p(x, y) = p(y − x) on a torus of dimension 1 or 2.
#[derive(Clone, Debug, PartialEq)]
pub struct Kernel {
    dim: usize,
    offsets: Vec<(Vec<i64>, Rational)>,
    symmetry: KernelSymmetry,
}

impl Kernel {
    pub fn new(dim: usize, offsets: Vec<(Vec<i64>, Rational)>) -> Result<Kernel> {
        if !(1..=2).contains(&dim) {
            return Err(MmpError::Geometry(format!("dimension {dim} not supported")));
        }
        let mut merged: Vec<(Vec<i64>, Rational)> = Vec::new();
        for (v, p) in offsets {
            if v.len() != dim {
                return Err(MmpError::Geometry(format!("offset {v:?} has the wrong dimension")));
            }
            if v.iter().all(|&c| c == 0) {
                return Err(MmpError::Geometry("zero offset".into()));
            }
            if p.is_negative() {
                return Err(MmpError::Geometry(format!("negative probability for offset {v:?}")));
            }
            if p.is_zero() {
                continue;
            }
            match merged.iter_mut().find(|(w, _)| *w == v) {
                Some((_, q)) => *q += p,
                None => merged.push((v, p)),
            }
        }
        let total: Rational = merged.iter().map(|(_, p)| p.clone()).sum();
        if total != Rational::one() {
            return Err(MmpError::Geometry(format!("probabilities sum to {}", fmt_rational(&total))));
        }
        merged.sort_by(|a, b| a.0.cmp(&b.0));
        let mirror = |v: &Vec<i64>| v.iter().map(|c| -c).collect::<Vec<_>>();
        let symmetric = merged
            .iter()
            .all(|(v, p)| merged.iter().any(|(w, q)| *w == mirror(v) && q == p));
        let symmetry = if symmetric { KernelSymmetry::Symmetric } else { KernelSymmetry::Asymmetric };
        Ok(Kernel { dim, offsets: merged, symmetry })
    }

    /// All mass on the positive unit steps, split evenly between axes.
    pub fn totally_asymmetric(dim: usize) -> Result<Kernel> {
        let share = Rational::new(1.into(), (dim as i64).into());
        Kernel::new(dim, (0..dim).map(|i| (unit(dim, i, 1), share.clone())).collect())
    }

    pub fn nearest_neighbour_symmetric(dim: usize) -> Result<Kernel> {
        let share = Rational::new(1.into(), (2 * dim as i64).into());
        let mut v = Vec::new();
        for i in 0..dim {
            v.push((unit(dim, i, 1), share.clone()));
            v.push((unit(dim, i, -1), share.clone()));
        }
        Kernel::new(dim, v)
    }

    /// Nearest-neighbour steps with weight `p` forward and `1 − p` backward on each axis.
    pub fn biased(dim: usize, p: Rational) -> Result<Kernel> {
        if p.is_negative() || p > Rational::one() {
            return Err(MmpError::Geometry("bias must lie in [0, 1]".into()));
        }
        let d = Rational::new(1.into(), (dim as i64).into());
        let mut v = Vec::new();
        for i in 0..dim {
            v.push((unit(dim, i, 1), &p * &d));
            v.push((unit(dim, i, -1), (Rational::one() - &p) * &d));
        }
        Kernel::new(dim, v)
    }

    /// `totally_asymmetric`, `symmetric` or `biased(p)`, optionally suffixed
    /// with `@2` for the planar torus.
    pub fn parse(s: &str) -> Result<Kernel> {
        let s = s.trim();
        let (body, dim) = match s.split_once('@') {
            Some((b, d)) => (b.trim(), d.trim().parse::<usize>().map_err(|_| MmpError::Parse(format!("bad dimension in {s:?}")))?),
            None => (s, 1),
        };
        match body {
            "totally_asymmetric" | "tasep" => Kernel::totally_asymmetric(dim),
            "symmetric" => Kernel::nearest_neighbour_symmetric(dim),
            _ => {
                let inner = body
                    .strip_prefix("biased(")
                    .and_then(|r| r.strip_suffix(')'))
                    .ok_or_else(|| MmpError::Parse(format!("unknown kernel {s:?}")))?;
                Kernel::biased(dim, parse_rational(inner)?)
            }
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }
    pub fn symmetry(&self) -> KernelSymmetry {
        self.symmetry
    }
    pub fn offsets(&self) -> &[(Vec<i64>, Rational)] {
        &self.offsets
    }
}

impl fmt::Display for Kernel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "kernel(d={}", self.dim)?;
        for (v, p) in &self.offsets {
            write!(f, ", {v:?}:{}", fmt_rational(p))?;
        }
        write!(f, ")")
    }
}

fn unit(dim: usize, axis: usize, sign: i64) -> Vec<i64> {
    let mut v = vec![0; dim];
    v[axis] = sign;
    v
}

/// A torus of side `side` in `dim` dimensions, sites numbered row-major.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct Torus {
    pub dim: usize,
    pub side: usize,
}

impl Torus {
    pub fn new(dim: usize, side: usize) -> Result<Torus> {
        if !(1..=2).contains(&dim) || side == 0 {
            return Err(MmpError::Geometry(format!("torus of side {side} in dimension {dim}")));
        }
        Ok(Torus { dim, side })
    }

    pub fn sites(&self) -> usize {
        self.side.pow(self.dim as u32)
    }

    fn shift(&self, x: usize, v: &[i64]) -> usize {
        let l = self.side as i64;
        let mut out = 0usize;
        let mut rem = x;
        let mut scale = 1usize;
        for &c in v.iter().take(self.dim) {
            let coord = (rem % self.side) as i64;
            rem /= self.side;
            out += ((coord + c).rem_euclid(l) as usize) * scale;
            scale *= self.side;
        }
        out
    }

    /// For each site x, the list of (y, p(x, y)) with y ≠ x. Offsets landing
    /// on the same target are merged; offsets wrapping onto x are dropped.
    pub fn neighbours(&self, kernel: &Kernel) -> Result<Vec<Vec<(usize, Rational)>>> {
        if kernel.dim() != self.dim {
            return Err(MmpError::Geometry("kernel and torus dimensions differ".into()));
        }
        Ok((0..self.sites())
            .map(|x| {
                let mut out: Vec<(usize, Rational)> = Vec::new();
                for (v, p) in kernel.offsets() {
                    let y = self.shift(x, v);
                    if y == x {
                        continue;
                    }
                    match out.iter_mut().find(|(z, _)| *z == y) {
                        Some((_, q)) => *q += p,
                        None => out.push((y, p.clone())),
                    }
                }
                out.sort_by_key(|(y, _)| *y);
                out
            })
            .collect())
    }

    pub fn neighbours_f64(&self, kernel: &Kernel) -> Result<Vec<Vec<(usize, f64)>>> {
        Ok(self
            .neighbours(kernel)?
            .into_iter()
            .map(|row| row.into_iter().map(|(y, p)| (y, to_f64(&p))).collect())
            .collect())
    }
}
