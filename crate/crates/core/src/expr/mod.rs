//! A small real-valued expression language for transfer functions, cost terms
//! and constraint left-hand sides.
//!
//! Grammar (EBNF, whitespace ignored):
//!
//! ```text
//! expr    = term { ("+" | "-") term } ;
//! term    = unary { ("*" | "/") unary } ;
//! unary   = "-" unary | power ;
//! power   = atom [ "^" exponent ] ;
//! exponent= "-" exponent | power ;          (* right associative *)
//! atom    = number | ident | ident "(" expr { "," expr } ")" | "(" expr ")" ;
//! number  = digits [ "." digits ] [ ("e" | "E") [ "+" | "-" ] digits ] ;
//! ```
//!
//! `^` binds tighter than unary minus, so `-2^2` is `-4`. Built-in constants
//! are `pi` and `e`; built-in functions are `sin cos tan exp log abs sqrt
//! floor` (one argument) and `pow min max mod` (two arguments).

mod interval;
mod parse;

use std::collections::HashMap;
use std::fmt;

pub use interval::Interval;
pub use parse::parse;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
    Pow,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Func {
    Sin,
    Cos,
    Tan,
    Exp,
    Log,
    Abs,
    Sqrt,
    Floor,
    Pow,
    Min,
    Max,
    Mod,
}

impl Func {
    pub fn from_name(name: &str) -> Option<Self> {
        Some(match name {
            "sin" => Func::Sin,
            "cos" => Func::Cos,
            "tan" => Func::Tan,
            "exp" => Func::Exp,
            "log" => Func::Log,
            "abs" => Func::Abs,
            "sqrt" => Func::Sqrt,
            "floor" => Func::Floor,
            "pow" => Func::Pow,
            "min" => Func::Min,
            "max" => Func::Max,
            "mod" => Func::Mod,
            _ => return None,
        })
    }

    pub fn name(self) -> &'static str {
        match self {
            Func::Sin => "sin",
            Func::Cos => "cos",
            Func::Tan => "tan",
            Func::Exp => "exp",
            Func::Log => "log",
            Func::Abs => "abs",
            Func::Sqrt => "sqrt",
            Func::Floor => "floor",
            Func::Pow => "pow",
            Func::Min => "min",
            Func::Max => "max",
            Func::Mod => "mod",
        }
    }

    pub fn arity(self) -> usize {
        match self {
            Func::Pow | Func::Min | Func::Max | Func::Mod => 2,
            _ => 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Constant {
    Pi,
    E,
}

impl Constant {
    pub fn value(self) -> f64 {
        match self {
            Constant::Pi => std::f64::consts::PI,
            Constant::E => std::f64::consts::E,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Num(f64),
    Const(Constant),
    Var(String),
    Neg(Box<Expr>),
    Bin(BinOp, Box<Expr>, Box<Expr>),
    Call(Func, Vec<Expr>),
}

impl Expr {
    /// Free variable names in first-occurrence order.
    pub fn variables(&self) -> Vec<String> {
        let mut out = Vec::new();
        self.collect_vars(&mut out);
        out
    }

    fn collect_vars(&self, out: &mut Vec<String>) {
        match self {
            Expr::Var(v) => {
                if !out.iter().any(|o| o == v) {
                    out.push(v.clone());
                }
            }
            Expr::Neg(a) => a.collect_vars(out),
            Expr::Bin(_, a, b) => {
                a.collect_vars(out);
                b.collect_vars(out);
            }
            Expr::Call(_, args) => args.iter().for_each(|a| a.collect_vars(out)),
            Expr::Num(_) | Expr::Const(_) => {}
        }
    }

    pub fn eval(&self, bindings: &HashMap<String, f64>) -> Result<f64> {
        match self {
            Expr::Num(v) => Ok(*v),
            Expr::Const(c) => Ok(c.value()),
            Expr::Var(name) => bindings
                .get(name)
                .copied()
                .ok_or_else(|| Error::UnboundVariable(name.clone())),
            Expr::Neg(a) => Ok(-a.eval(bindings)?),
            Expr::Bin(op, a, b) => apply_bin(*op, a.eval(bindings)?, b.eval(bindings)?),
            Expr::Call(f, args) => {
                let a = args[0].eval(bindings)?;
                let b = match args.get(1) {
                    Some(e) => e.eval(bindings)?,
                    None => 0.0,
                };
                apply_func(*f, a, b)
            }
        }
    }

    /// Resolves names once so repeated evaluation works on a slot slice.
    /// `resolve` maps a variable name to either a slot index or a constant.
    pub fn compile<F>(&self, resolve: &F) -> Result<CompiledExpr>
    where
        F: Fn(&str) -> Option<Binding>,
    {
        Ok(CompiledExpr {
            root: self.lower(resolve)?,
        })
    }

    fn lower<F>(&self, resolve: &F) -> Result<Node>
    where
        F: Fn(&str) -> Option<Binding>,
    {
        Ok(match self {
            Expr::Num(v) => Node::Num(*v),
            Expr::Const(c) => Node::Num(c.value()),
            Expr::Var(name) => match resolve(name) {
                Some(Binding::Slot(i)) => Node::Slot(i),
                Some(Binding::Value(v)) => Node::Num(v),
                None => return Err(Error::UnknownVariable(name.clone())),
            },
            Expr::Neg(a) => Node::Neg(Box::new(a.lower(resolve)?)),
            Expr::Bin(op, a, b) => {
                Node::Bin(*op, Box::new(a.lower(resolve)?), Box::new(b.lower(resolve)?))
            }
            Expr::Call(f, args) => {
                let a = Box::new(args[0].lower(resolve)?);
                match args.get(1) {
                    Some(b) => Node::Call2(*f, a, Box::new(b.lower(resolve)?)),
                    None => Node::Call1(*f, a),
                }
            }
        })
    }

    pub fn eval_interval(&self, bindings: &HashMap<String, Interval>) -> Result<Interval> {
        interval::eval(self, bindings)
    }
}

fn precedence_wrap(f: &mut fmt::Formatter<'_>, e: &Expr) -> fmt::Result {
    match e {
        Expr::Num(v) if *v < 0.0 => write!(f, "({v})"),
        Expr::Num(_) | Expr::Const(_) | Expr::Var(_) | Expr::Call(..) => write!(f, "{e}"),
        _ => write!(f, "({e})"),
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Num(v) => write!(f, "{v}"),
            Expr::Const(Constant::Pi) => write!(f, "pi"),
            Expr::Const(Constant::E) => write!(f, "e"),
            Expr::Var(v) => write!(f, "{v}"),
            Expr::Neg(a) => {
                write!(f, "-")?;
                precedence_wrap(f, a)
            }
            Expr::Bin(op, a, b) => {
                let sym = match op {
                    BinOp::Add => "+",
                    BinOp::Sub => "-",
                    BinOp::Mul => "*",
                    BinOp::Div => "/",
                    BinOp::Pow => "^",
                };
                precedence_wrap(f, a)?;
                write!(f, " {sym} ")?;
                precedence_wrap(f, b)
            }
            Expr::Call(func, args) => {
                write!(f, "{}(", func.name())?;
                for (i, a) in args.iter().enumerate() {
                    if i > 0 {
                        write!(f, ", ")?;
                    }
                    write!(f, "{a}")?;
                }
                write!(f, ")")
            }
        }
    }
}

pub(crate) fn apply_bin(op: BinOp, a: f64, b: f64) -> Result<f64> {
    match op {
        BinOp::Add => Ok(a + b),
        BinOp::Sub => Ok(a - b),
        BinOp::Mul => Ok(a * b),
        BinOp::Div => {
            if b == 0.0 {
                Err(Error::Domain(format!("division by zero ({a} / 0)")))
            } else {
                Ok(a / b)
            }
        }
        BinOp::Pow => power(a, b),
    }
}

fn power(base: f64, exponent: f64) -> Result<f64> {
    if base < 0.0 && exponent.fract() != 0.0 {
        return Err(Error::Domain(format!(
            "negative base {base} with non-integer exponent {exponent}"
        )));
    }
    if base == 0.0 && exponent < 0.0 {
        return Err(Error::Domain(format!("0 raised to negative power {exponent}")));
    }
    Ok(base.powf(exponent))
}

pub(crate) fn apply_func(f: Func, a: f64, b: f64) -> Result<f64> {
    Ok(match f {
        Func::Sin => a.sin(),
        Func::Cos => a.cos(),
        Func::Tan => a.tan(),
        Func::Exp => a.exp(),
        Func::Log => {
            if a <= 0.0 {
                return Err(Error::Domain(format!("log of non-positive value {a}")));
            }
            a.ln()
        }
        Func::Abs => a.abs(),
        Func::Sqrt => {
            if a < 0.0 {
                return Err(Error::Domain(format!("sqrt of negative value {a}")));
            }
            a.sqrt()
        }
        Func::Floor => a.floor(),
        Func::Pow => power(a, b)?,
        Func::Min => a.min(b),
        Func::Max => a.max(b),
        Func::Mod => {
            if b == 0.0 {
                return Err(Error::Domain("mod by zero".into()));
            }
            a - b * (a / b).floor()
        }
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Binding {
    Slot(usize),
    Value(f64),
}

#[derive(Debug, Clone, PartialEq)]
enum Node {
    Num(f64),
    Slot(usize),
    Neg(Box<Node>),
    Bin(BinOp, Box<Node>, Box<Node>),
    Call1(Func, Box<Node>),
    Call2(Func, Box<Node>, Box<Node>),
}

/// Expression with names resolved to slot indices.
#[derive(Debug, Clone, PartialEq)]
pub struct CompiledExpr {
    root: Node,
}

impl CompiledExpr {
    #[inline]
    pub fn eval(&self, slots: &[f64]) -> Result<f64> {
        eval_node(&self.root, slots)
    }

    /// Slot indices read by the expression.
    pub fn slots(&self) -> Vec<usize> {
        fn walk(n: &Node, out: &mut Vec<usize>) {
            match n {
                Node::Slot(i) => {
                    if !out.contains(i) {
                        out.push(*i)
                    }
                }
                Node::Neg(a) | Node::Call1(_, a) => walk(a, out),
                Node::Bin(_, a, b) | Node::Call2(_, a, b) => {
                    walk(a, out);
                    walk(b, out);
                }
                Node::Num(_) => {}
            }
        }
        let mut out = Vec::new();
        walk(&self.root, &mut out);
        out
    }
}

fn eval_node(n: &Node, s: &[f64]) -> Result<f64> {
    match n {
        Node::Num(v) => Ok(*v),
        Node::Slot(i) => Ok(s[*i]),
        Node::Neg(a) => Ok(-eval_node(a, s)?),
        Node::Bin(op, a, b) => apply_bin(*op, eval_node(a, s)?, eval_node(b, s)?),
        Node::Call1(f, a) => apply_func(*f, eval_node(a, s)?, 0.0),
        Node::Call2(f, a, b) => apply_func(*f, eval_node(a, s)?, eval_node(b, s)?),
    }
}
