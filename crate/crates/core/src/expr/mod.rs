//! A small arithmetic expression language for vector-field and target entries.
//!
//! Grammar (whitespace-insensitive):
//!
//! ```text
//! expr    := term (('+' | '-') term)*
//! term    := unary (('*' | '/') unary)*
//! unary   := '-' unary | power
//! power   := primary ('^' unary)?          // right-associative
//! primary := number | ident | func '(' expr ')' | '(' expr ')'
//! func    := sin | cos | tan | exp | log | sqrt | abs
//! ```
//!
//! Numbers are decimal literals with an optional exponent and are read as
//! IEEE doubles. Identifiers must name a declared state variable.

mod parser;
pub mod real;

use std::fmt;

pub use parser::{parse, ParseError, ParseErrorKind};
use real::Real;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
    Pow,
}

impl BinOp {
    fn symbol(self) -> &'static str {
        match self {
            BinOp::Add => "+",
            BinOp::Sub => "-",
            BinOp::Mul => "*",
            BinOp::Div => "/",
            BinOp::Pow => "^",
        }
    }

    fn precedence(self) -> u8 {
        match self {
            BinOp::Add | BinOp::Sub => 1,
            BinOp::Mul | BinOp::Div => 2,
            BinOp::Pow => 4,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Func {
    Sin,
    Cos,
    Tan,
    Exp,
    Log,
    Sqrt,
    Abs,
}

impl Func {
    pub const ALL: [Func; 7] = [
        Func::Sin,
        Func::Cos,
        Func::Tan,
        Func::Exp,
        Func::Log,
        Func::Sqrt,
        Func::Abs,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Func::Sin => "sin",
            Func::Cos => "cos",
            Func::Tan => "tan",
            Func::Exp => "exp",
            Func::Log => "log",
            Func::Sqrt => "sqrt",
            Func::Abs => "abs",
        }
    }

    pub fn from_name(name: &str) -> Option<Func> {
        Func::ALL.into_iter().find(|f| f.name() == name)
    }
}

/// Expression tree. Variables are resolved to state indices at parse time.
#[derive(Clone, Debug, PartialEq)]
pub enum Expr {
    Num(f64),
    Var { index: usize, name: String },
    Neg(Box<Expr>),
    Binary(BinOp, Box<Expr>, Box<Expr>),
    Call(Func, Box<Expr>),
}

/// Evaluation failed because an operation left its domain.
#[derive(Clone, Debug, PartialEq, thiserror::Error)]
#[error("{0}")]
pub struct DomainError(pub String);

impl Expr {
    fn precedence(&self) -> u8 {
        match self {
            Expr::Binary(op, _, _) => op.precedence(),
            Expr::Neg(_) => 3,
            _ => 5,
        }
    }

    /// True if no state variable occurs in the tree.
    pub fn is_constant(&self) -> bool {
        match self {
            Expr::Num(_) => true,
            Expr::Var { .. } => false,
            Expr::Neg(e) | Expr::Call(_, e) => e.is_constant(),
            Expr::Binary(_, l, r) => l.is_constant() && r.is_constant(),
        }
    }

    /// Visits every variable index in the tree.
    pub fn max_var_index(&self) -> Option<usize> {
        match self {
            Expr::Num(_) => None,
            Expr::Var { index, .. } => Some(*index),
            Expr::Neg(e) | Expr::Call(_, e) => e.max_var_index(),
            Expr::Binary(_, l, r) => match (l.max_var_index(), r.max_var_index()) {
                (Some(a), Some(b)) => Some(a.max(b)),
                (a, b) => a.or(b),
            },
        }
    }

    pub fn eval<T: Real>(&self, vars: &[T]) -> Result<T, DomainError> {
        let out = match self {
            Expr::Num(v) => T::constant(*v),
            Expr::Var { index, name } => *vars
                .get(*index)
                .ok_or_else(|| DomainError(format!("variable {name} has no value")))?,
            Expr::Neg(e) => -e.eval(vars)?,
            Expr::Binary(op, l, r) => {
                let a = l.eval(vars)?;
                match op {
                    BinOp::Add => a + r.eval(vars)?,
                    BinOp::Sub => a - r.eval(vars)?,
                    BinOp::Mul => a * r.eval(vars)?,
                    BinOp::Div => {
                        let b = r.eval(vars)?;
                        if b.value() == 0.0 {
                            return Err(DomainError(format!("division by zero in {self}")));
                        }
                        a / b
                    }
                    BinOp::Pow => {
                        if r.is_constant() {
                            let e: f64 = r.eval(&[] as &[f64])?;
                            if a.value() < 0.0 && e.fract() != 0.0 {
                                return Err(DomainError(format!("negative base with fractional exponent in {self}")));
                            }
                            if a.value() == 0.0 && e < 0.0 {
                                return Err(DomainError(format!("zero to a negative power in {self}")));
                            }
                            a.powc(e)
                        } else {
                            if a.value() <= 0.0 {
                                return Err(DomainError(format!(
                                    "non-positive base with variable exponent in {self}"
                                )));
                            }
                            (r.eval(vars)? * a.ln()).exp()
                        }
                    }
                }
            }
            Expr::Call(f, e) => {
                let a = e.eval(vars)?;
                match f {
                    Func::Sin => a.sin(),
                    Func::Cos => a.cos(),
                    Func::Tan => a.tan(),
                    Func::Exp => a.exp(),
                    Func::Log => {
                        if a.value() <= 0.0 {
                            return Err(DomainError(format!("log of non-positive value in {self}")));
                        }
                        a.ln()
                    }
                    Func::Sqrt => {
                        if a.value() < 0.0 {
                            return Err(DomainError(format!("sqrt of negative value in {self}")));
                        }
                        a.sqrt()
                    }
                    Func::Abs => a.abs(),
                }
            }
        };
        if !out.all_finite() {
            return Err(DomainError(format!("non-finite value in {self}")));
        }
        Ok(out)
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fn wrap(f: &mut fmt::Formatter<'_>, e: &Expr, parens: bool) -> fmt::Result {
            if parens {
                write!(f, "({e})")
            } else {
                write!(f, "{e}")
            }
        }
        match self {
            Expr::Num(v) => write!(f, "{v}"),
            Expr::Var { name, .. } => f.write_str(name),
            Expr::Neg(e) => {
                f.write_str("-")?;
                wrap(f, e, e.precedence() < 3)
            }
            Expr::Binary(op, l, r) => {
                let p = op.precedence();
                let (left_parens, right_parens) = match op {
                    BinOp::Pow => (l.precedence() <= p, r.precedence() < 3),
                    _ => (l.precedence() < p, r.precedence() <= p),
                };
                wrap(f, l, left_parens)?;
                match op {
                    BinOp::Add | BinOp::Sub => write!(f, " {} ", op.symbol())?,
                    _ => f.write_str(op.symbol())?,
                }
                wrap(f, r, right_parens)
            }
            Expr::Call(func, e) => write!(f, "{}({e})", func.name()),
        }
    }
}
