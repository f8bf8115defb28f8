//! Integer-indexed rational sequences used as rate ingredients (h(k), r(α),
//! π(n), g¹_α, ...), with a tiny textual grammar so configs can name them.
//!
//! Grammar: `name` or `name(arg, ...)`, where an argument is a rational
//! literal or another sequence. Examples: `reciprocal`, `const(2)`,
//! `piecewise(3, identity, reciprocal)`, `table(0; 1, 2, 1/3)`.

use std::fmt;
use std::sync::Arc;

use num_traits::{One, Signed, Zero};

use crate::error::{MmpError, Result};
use crate::measures::Marginal;
use crate::num::{fmt_rational, int, parse_rational, Rational};

#[derive(Clone, Debug)]
pub enum Sequence {
    Const(Rational),
    /// n
    Identity,
    /// 1/n
    Reciprocal,
    /// n^e for an integer exponent
    Power(i32),
    /// 1 + b/n
    OnePlusBOver(Rational),
    /// q^n
    Geometric(Rational),
    /// q^{n−1}(1−q)/(1−q^n)
    QHahn(Rational),
    /// π(0) = pi0, π(n) = ∏_{i<n} i/(i+b) for n ≥ 1; ratio π(n)/π(n+1) = 1 + b/n.
    PowerLawPi { b: Rational, pi0: Rational },
    /// μ(n) = ∏_{i≤n} i/(i+b); ratio μ(n)/μ(n+1) = 1 + b/(n+1).
    ZrpWeights(Rational),
    /// values[n] for n < values.len(), `default` beyond.
    Table { values: Vec<Rational>, default: Rational },
    /// below(n) for n < at, above(n) otherwise.
    Piecewise { at: usize, below: Box<Sequence>, above: Box<Sequence> },
    /// c · s(n)
    Scaled(Rational, Box<Sequence>),
    /// s(n + k)
    Shift(usize, Box<Sequence>),
    /// s(n) · t(n)
    Mul(Box<Sequence>, Box<Sequence>),
    /// weights of a marginal
    Weights(Arc<Marginal>),
}

impl PartialEq for Sequence {
    fn eq(&self, other: &Self) -> bool {
        self.to_string() == other.to_string()
    }
}

impl Sequence {
    /// Smallest index from which the sequence is defined everywhere.
    pub fn defined_from(&self) -> usize {
        use Sequence::*;
        match self {
            Reciprocal | OnePlusBOver(_) | QHahn(_) => 1,
            Power(e) => usize::from(*e < 0),
            Piecewise { at, below, above } => {
                let a = above.defined_from();
                if a > *at {
                    a
                } else {
                    below.defined_from().min(*at)
                }
            }
            Scaled(_, s) => s.defined_from(),
            Shift(k, s) => s.defined_from().saturating_sub(*k),
            Mul(s, t) => s.defined_from().max(t.defined_from()),
            _ => 0,
        }
    }

    /// Value at `n`. Panics below `defined_from`, which constructors rule out.
    pub fn value(&self, n: usize) -> Rational {
        use Sequence::*;
        let nr = || int(n as i64);
        match self {
            Const(c) => c.clone(),
            Identity => nr(),
            Reciprocal => {
                assert!(n >= 1, "1/n evaluated at 0");
                nr().recip()
            }
            Power(e) => {
                if *e >= 0 {
                    num_traits::pow(nr(), *e as usize)
                } else {
                    assert!(n >= 1, "negative power evaluated at 0");
                    num_traits::pow(nr().recip(), (-*e) as usize)
                }
            }
            OnePlusBOver(b) => {
                assert!(n >= 1, "1+b/n evaluated at 0");
                Rational::one() + b / nr()
            }
            Geometric(q) => num_traits::pow(q.clone(), n),
            QHahn(q) => {
                assert!(n >= 1, "q-Hahn weight evaluated at 0");
                let one = Rational::one();
                num_traits::pow(q.clone(), n - 1) * (&one - q) / (&one - num_traits::pow(q.clone(), n))
            }
            PowerLawPi { b, pi0 } => {
                if n == 0 {
                    return pi0.clone();
                }
                let mut v = Rational::one();
                for i in 1..n {
                    let i = int(i as i64);
                    v = v * &i / (&i + b);
                }
                v
            }
            ZrpWeights(b) => {
                let mut v = Rational::one();
                for i in 1..=n {
                    let i = int(i as i64);
                    v = v * &i / (&i + b);
                }
                v
            }
            Table { values, default } => values.get(n).cloned().unwrap_or_else(|| default.clone()),
            Piecewise { at, below, above } => {
                if n < *at {
                    below.value(n)
                } else {
                    above.value(n)
                }
            }
            Scaled(c, s) => c * s.value(n),
            Shift(k, s) => s.value(n + k),
            Mul(s, t) => s.value(n) * t.value(n),
            Weights(m) => m.weight(n),
        }
    }

    pub fn value_f64(&self, n: usize) -> f64 {
        crate::num::to_f64(&self.value(n))
    }

    /// Values on `from..=to`; iterative for the product-defined sequences.
    pub fn values(&self, from: usize, to: usize) -> Vec<Rational> {
        match self {
            Sequence::Weights(m) => {
                let w = m.weights_exact(to);
                w[from..=to].to_vec()
            }
            Sequence::PowerLawPi { .. } | Sequence::ZrpWeights(_) => {
                let m = Marginal::from_sequence(self).expect("power-law sequences have tail rules");
                let w = m.weights_exact(to);
                w[from..=to].to_vec()
            }
            _ => (from..=to).map(|n| self.value(n)).collect(),
        }
    }

    /// Structural nonnegativity on the defined range.
    pub fn is_nonnegative(&self) -> bool {
        use Sequence::*;
        match self {
            Const(c) | Geometric(c) => !c.is_negative(),
            Identity | Reciprocal | Power(_) => true,
            OnePlusBOver(b) => *b >= -Rational::one(),
            QHahn(q) => q.is_positive() && *q < Rational::one(),
            PowerLawPi { b, pi0 } => *b > -Rational::one() && !pi0.is_negative(),
            ZrpWeights(b) => *b > -Rational::one(),
            Table { values, default } => {
                !default.is_negative() && values.iter().all(|v| !v.is_negative())
            }
            Piecewise { below, above, .. } => below.is_nonnegative() && above.is_nonnegative(),
            Scaled(c, s) => !c.is_negative() && s.is_nonnegative(),
            Shift(_, s) => s.is_nonnegative(),
            Mul(s, t) => s.is_nonnegative() && t.is_nonnegative(),
            Weights(_) => true,
        }
    }

    /// Structural strict positivity from index `from` on.
    pub fn is_positive_from(&self, from: usize) -> bool {
        use Sequence::*;
        match self {
            Const(c) | Geometric(c) => c.is_positive(),
            Identity => from >= 1,
            Reciprocal | Power(_) => true,
            OnePlusBOver(b) => {
                // 1 + b/n > 0 for all n ≥ max(from,1)
                let n0 = int(from.max(1) as i64);
                !b.is_negative() || (&n0 + b).is_positive()
            }
            QHahn(q) => q.is_positive() && *q < Rational::one(),
            PowerLawPi { b, pi0 } => *b > -Rational::one() && (from >= 1 || pi0.is_positive()),
            ZrpWeights(b) => *b > -Rational::one(),
            Table { values, default } => {
                default.is_positive() && values.iter().skip(from).all(|v| v.is_positive())
            }
            Piecewise { at, below, above } => {
                (from >= *at || below.is_positive_from(from)) && above.is_positive_from(from.max(*at))
            }
            Scaled(c, s) => c.is_positive() && s.is_positive_from(from),
            Shift(k, s) => s.is_positive_from(from + k),
            Mul(s, t) => s.is_positive_from(from) && t.is_positive_from(from),
            Weights(m) => m.is_everywhere_positive_from(from),
        }
    }

    /// If `value(n) = c·(n+a)/(n+a+b)` for every n ≥ start, returns (start, c, a, b).
    pub fn ratio_form(&self) -> Option<(usize, Rational, Rational, Rational)> {
        use Sequence::*;
        match self {
            Const(c) => Some((0, c.clone(), Rational::one(), Rational::zero())),
            OnePlusBOver(b) => Some((1, Rational::one(), b.clone(), -b.clone())),
            Scaled(k, s) => s.ratio_form().map(|(n, c, a, b)| (n, k * c, a, b)),
            Shift(k, s) => s.ratio_form().map(|(n, c, a, b)| (n.saturating_sub(*k), c, a + int(*k as i64), b)),
            Piecewise { at, above, .. } => above.ratio_form().map(|(n, c, a, b)| (n.max(*at), c, a, b)),
            Table { values, default } => Some((values.len(), default.clone(), Rational::one(), Rational::zero())),
            _ => None,
        }
    }

    pub fn parse(s: &str) -> Result<Sequence> {
        let mut p = Parser { s: s.as_bytes(), i: 0 };
        let out = p.sequence()?;
        p.ws();
        if p.i != p.s.len() {
            return Err(MmpError::Parse(format!("trailing input in sequence {s:?}")));
        }
        Ok(out)
    }
}

impl fmt::Display for Sequence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        use Sequence::*;
        match self {
            Const(c) => write!(f, "const({})", fmt_rational(c)),
            Identity => write!(f, "identity"),
            Reciprocal => write!(f, "reciprocal"),
            Power(e) => write!(f, "power({e})"),
            OnePlusBOver(b) => write!(f, "one_plus_b_over({})", fmt_rational(b)),
            Geometric(q) => write!(f, "geometric({})", fmt_rational(q)),
            QHahn(q) => write!(f, "qhahn({})", fmt_rational(q)),
            PowerLawPi { b, pi0 } => {
                write!(f, "power_law_pi({}, {})", fmt_rational(b), fmt_rational(pi0))
            }
            ZrpWeights(b) => write!(f, "zrp_weights({})", fmt_rational(b)),
            Table { values, default } => {
                write!(f, "table({}", fmt_rational(default))?;
                for (i, v) in values.iter().enumerate() {
                    write!(f, "{}{}", if i == 0 { "; " } else { ", " }, fmt_rational(v))?;
                }
                write!(f, ")")
            }
            Piecewise { at, below, above } => write!(f, "piecewise({at}, {below}, {above})"),
            Scaled(c, s) => write!(f, "scaled({}, {s})", fmt_rational(c)),
            Shift(k, s) => write!(f, "shift({k}, {s})"),
            Mul(s, t) => write!(f, "mul({s}, {t})"),
            Weights(m) => write!(f, "weights({})", m.describe()),
        }
    }
}

struct Parser<'a> {
    s: &'a [u8],
    i: usize,
}

impl Parser<'_> {
    fn ws(&mut self) {
        while self.i < self.s.len() && self.s[self.i].is_ascii_whitespace() {
            self.i += 1;
        }
    }

    fn err(&self, what: &str) -> MmpError {
        MmpError::Parse(format!(
            "{what} at offset {} in sequence {:?}",
            self.i,
            String::from_utf8_lossy(self.s)
        ))
    }

    fn eat(&mut self, c: u8) -> bool {
        self.ws();
        if self.i < self.s.len() && self.s[self.i] == c {
            self.i += 1;
            true
        } else {
            false
        }
    }

    fn ident(&mut self) -> String {
        self.ws();
        let start = self.i;
        while self.i < self.s.len() && (self.s[self.i].is_ascii_alphanumeric() || self.s[self.i] == b'_') {
            self.i += 1;
        }
        String::from_utf8_lossy(&self.s[start..self.i]).into_owned()
    }

    fn number(&mut self) -> Result<Rational> {
        self.ws();
        let start = self.i;
        while self.i < self.s.len() && !matches!(self.s[self.i], b',' | b')' | b';') {
            self.i += 1;
        }
        parse_rational(std::str::from_utf8(&self.s[start..self.i]).unwrap_or(""))
    }

    fn usize_arg(&mut self) -> Result<usize> {
        let r = self.number()?;
        if !r.is_integer() || r.is_negative() {
            return Err(self.err("expected a nonnegative integer"));
        }
        r.to_integer().try_into().map_err(|_| self.err("integer too large"))
    }

    fn sequence(&mut self) -> Result<Sequence> {
        let name = self.ident();
        if name.is_empty() {
            return Err(self.err("expected a sequence name"));
        }
        let has_args = self.eat(b'(');
        let need_args = |ok: bool, p: &Self| if ok { Ok(()) } else { Err(p.err("missing arguments")) };
        let seq = match name.as_str() {
            "identity" => Sequence::Identity,
            "reciprocal" => Sequence::Reciprocal,
            "const" => {
                need_args(has_args, self)?;
                Sequence::Const(self.number()?)
            }
            "power" => {
                need_args(has_args, self)?;
                let e = self.number()?;
                if !e.is_integer() {
                    return Err(self.err("power needs an integer exponent"));
                }
                Sequence::Power(e.to_integer().try_into().map_err(|_| self.err("exponent too large"))?)
            }
            "one_plus_b_over" => {
                need_args(has_args, self)?;
                Sequence::OnePlusBOver(self.number()?)
            }
            "geometric" => {
                need_args(has_args, self)?;
                Sequence::Geometric(self.number()?)
            }
            "qhahn" => {
                need_args(has_args, self)?;
                Sequence::QHahn(self.number()?)
            }
            "zrp_weights" => {
                need_args(has_args, self)?;
                Sequence::ZrpWeights(self.number()?)
            }
            "power_law_pi" => {
                need_args(has_args, self)?;
                let b = self.number()?;
                let pi0 = if self.eat(b',') { self.number()? } else { Rational::one() + &b };
                Sequence::PowerLawPi { b, pi0 }
            }
            "table" => {
                need_args(has_args, self)?;
                let default = self.number()?;
                let mut values = Vec::new();
                if self.eat(b';') {
                    loop {
                        values.push(self.number()?);
                        if !self.eat(b',') {
                            break;
                        }
                    }
                }
                Sequence::Table { values, default }
            }
            "piecewise" => {
                need_args(has_args, self)?;
                let at = self.usize_arg()?;
                if !self.eat(b',') {
                    return Err(self.err("expected ','"));
                }
                let below = Box::new(self.sequence()?);
                if !self.eat(b',') {
                    return Err(self.err("expected ','"));
                }
                let above = Box::new(self.sequence()?);
                Sequence::Piecewise { at, below, above }
            }
            "scaled" => {
                need_args(has_args, self)?;
                let c = self.number()?;
                if !self.eat(b',') {
                    return Err(self.err("expected ','"));
                }
                Sequence::Scaled(c, Box::new(self.sequence()?))
            }
            "shift" => {
                need_args(has_args, self)?;
                let k = self.usize_arg()?;
                if !self.eat(b',') {
                    return Err(self.err("expected ','"));
                }
                Sequence::Shift(k, Box::new(self.sequence()?))
            }
            "mul" => {
                need_args(has_args, self)?;
                let a = self.sequence()?;
                if !self.eat(b',') {
                    return Err(self.err("expected ','"));
                }
                Sequence::Mul(Box::new(a), Box::new(self.sequence()?))
            }
            other => return Err(MmpError::Parse(format!("unknown sequence {other:?}"))),
        };
        if has_args && !self.eat(b')') {
            return Err(self.err("expected ')'"));
        }
        Ok(seq)
    }
}
