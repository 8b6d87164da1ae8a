//! Outward enclosures of expression ranges over boxes.
//!
//! The enclosures are conservative but not tight (dependency problem): `x - x`
//! over `[0, 1]` gives `[-1, 1]`. Endpoints may be infinite.

use std::collections::HashMap;
use std::f64::consts::{FRAC_PI_2, PI};

use super::{BinOp, Expr, Func};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

const ENTIRE: Interval = Interval {
    lo: f64::NEG_INFINITY,
    hi: f64::INFINITY,
};

impl Interval {
    pub fn new(lo: f64, hi: f64) -> Self {
        debug_assert!(lo <= hi, "[{lo}, {hi}]");
        Self { lo, hi }
    }

    pub fn point(x: f64) -> Self {
        Self { lo: x, hi: x }
    }

    pub fn contains(&self, x: f64) -> bool {
        x >= self.lo && x <= self.hi
    }

    pub fn is_bounded(&self) -> bool {
        self.lo.is_finite() && self.hi.is_finite()
    }

    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }

    pub fn hull(&self, other: &Interval) -> Interval {
        Interval::new(self.lo.min(other.lo), self.hi.max(other.hi))
    }

    fn from_points(pts: &[f64]) -> Interval {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for &p in pts {
            if p.is_nan() {
                return ENTIRE;
            }
            lo = lo.min(p);
            hi = hi.max(p);
        }
        Interval::new(lo, hi)
    }

    fn mul(self, o: Interval) -> Interval {
        let prod = |a: f64, b: f64| if a == 0.0 || b == 0.0 { 0.0 } else { a * b };
        Interval::from_points(&[
            prod(self.lo, o.lo),
            prod(self.lo, o.hi),
            prod(self.hi, o.lo),
            prod(self.hi, o.hi),
        ])
    }

    fn recip(self) -> Interval {
        if self.contains(0.0) {
            ENTIRE
        } else {
            Interval::new(1.0 / self.hi, 1.0 / self.lo)
        }
    }
}

/// Smallest `k` with `phase + k·period >= lo`, checked against `hi`.
fn hits(lo: f64, hi: f64, phase: f64, period: f64) -> bool {
    let k = ((lo - phase) / period).ceil();
    phase + k * period <= hi
}

fn periodic(x: Interval, f: fn(f64) -> f64, max_at: f64, min_at: f64) -> Interval {
    if !x.is_bounded() || x.width() >= 2.0 * PI {
        return Interval::new(-1.0, 1.0);
    }
    let base = Interval::from_points(&[f(x.lo), f(x.hi)]);
    let lo = if hits(x.lo, x.hi, min_at, 2.0 * PI) { -1.0 } else { base.lo };
    let hi = if hits(x.lo, x.hi, max_at, 2.0 * PI) { 1.0 } else { base.hi };
    Interval::new(lo, hi)
}

fn pow(b: Interval, e: Interval) -> Result<Interval> {
    if e.lo == e.hi && e.lo.fract() == 0.0 {
        let n = e.lo;
        if n == 0.0 {
            return Ok(Interval::point(1.0));
        }
        if n < 0.0 {
            return Ok(pow(b, Interval::point(-n))?.recip());
        }
        let pts = [b.lo.powf(n), b.hi.powf(n)];
        let mut r = Interval::from_points(&pts);
        if n % 2.0 == 0.0 && b.contains(0.0) {
            r.lo = 0.0;
        }
        return Ok(r);
    }
    if b.hi < 0.0 {
        return Err(Error::Domain(format!(
            "negative base [{}, {}] with non-integer exponent",
            b.lo, b.hi
        )));
    }
    // b^e = exp(e·ln b) restricted to the non-negative part of the base
    let lb = log(Interval::new(b.lo.max(0.0), b.hi))?;
    Ok(exp(lb.mul(e)))
}

fn exp(x: Interval) -> Interval {
    Interval::new(x.lo.exp(), x.hi.exp())
}

fn log(x: Interval) -> Result<Interval> {
    if x.hi <= 0.0 {
        return Err(Error::Domain(format!("log over non-positive [{}, {}]", x.lo, x.hi)));
    }
    let lo = if x.lo <= 0.0 { f64::NEG_INFINITY } else { x.lo.ln() };
    Ok(Interval::new(lo, x.hi.ln()))
}

fn floor(x: Interval) -> Interval {
    Interval::new(x.lo.floor(), x.hi.floor())
}

fn modulo(a: Interval, b: Interval) -> Result<Interval> {
    if b.lo == b.hi && b.lo != 0.0 && a.is_bounded() {
        let m = b.lo;
        let ka = (a.lo / m).floor();
        let kb = (a.hi / m).floor();
        if ka == kb {
            return Ok(Interval::from_points(&[a.lo - m * ka, a.hi - m * kb]));
        }
        return Ok(Interval::from_points(&[0.0, m]));
    }
    if b.contains(0.0) {
        return Ok(ENTIRE);
    }
    let m = b.lo.abs().max(b.hi.abs());
    Ok(Interval::new(-m, m))
}

pub(super) fn eval(e: &Expr, bindings: &HashMap<String, Interval>) -> Result<Interval> {
    Ok(match e {
        Expr::Num(v) => Interval::point(*v),
        Expr::Const(c) => Interval::point(c.value()),
        Expr::Var(name) => *bindings
            .get(name)
            .ok_or_else(|| Error::UnboundVariable(name.clone()))?,
        Expr::Neg(a) => {
            let a = eval(a, bindings)?;
            Interval::new(-a.hi, -a.lo)
        }
        Expr::Bin(op, a, b) => {
            let a = eval(a, bindings)?;
            let b = eval(b, bindings)?;
            match op {
                BinOp::Add => Interval::from_points(&[a.lo + b.lo, a.hi + b.hi]),
                BinOp::Sub => Interval::from_points(&[a.lo - b.hi, a.hi - b.lo]),
                BinOp::Mul => a.mul(b),
                BinOp::Div => a.mul(b.recip()),
                BinOp::Pow => pow(a, b)?,
            }
        }
        Expr::Call(f, args) => {
            let a = eval(&args[0], bindings)?;
            let b = match args.get(1) {
                Some(x) => eval(x, bindings)?,
                None => Interval::point(0.0),
            };
            match f {
                Func::Sin => periodic(a, f64::sin, FRAC_PI_2, -FRAC_PI_2),
                Func::Cos => periodic(a, f64::cos, 0.0, PI),
                Func::Tan => {
                    if !a.is_bounded() || hits(a.lo, a.hi, FRAC_PI_2, PI) {
                        ENTIRE
                    } else {
                        Interval::new(a.lo.tan(), a.hi.tan())
                    }
                }
                Func::Exp => exp(a),
                Func::Log => log(a)?,
                Func::Abs => {
                    if a.contains(0.0) {
                        Interval::new(0.0, a.lo.abs().max(a.hi.abs()))
                    } else {
                        Interval::from_points(&[a.lo.abs(), a.hi.abs()])
                    }
                }
                Func::Sqrt => {
                    if a.hi < 0.0 {
                        return Err(Error::Domain(format!(
                            "sqrt over negative [{}, {}]",
                            a.lo, a.hi
                        )));
                    }
                    Interval::new(a.lo.max(0.0).sqrt(), a.hi.sqrt())
                }
                Func::Floor => floor(a),
                Func::Pow => pow(a, b)?,
                Func::Min => Interval::new(a.lo.min(b.lo), a.hi.min(b.hi)),
                Func::Max => Interval::new(a.lo.max(b.lo), a.hi.max(b.hi)),
                Func::Mod => modulo(a, b)?,
            }
        }
    })
}
