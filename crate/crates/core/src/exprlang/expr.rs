use std::fmt;

use super::ExprError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Var {
    /// State coordinate, zero-based (`x1` is `X(0)`).
    X(usize),
    T,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Func {
    Sin,
    Cos,
    Tan,
    Tanh,
    Sech,
    Exp,
    Log,
    Sqrt,
    Abs,
    Arctan,
}

impl Func {
    pub const ALL: [Func; 10] = [
        Func::Sin,
        Func::Cos,
        Func::Tan,
        Func::Tanh,
        Func::Sech,
        Func::Exp,
        Func::Log,
        Func::Sqrt,
        Func::Abs,
        Func::Arctan,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Func::Sin => "sin",
            Func::Cos => "cos",
            Func::Tan => "tan",
            Func::Tanh => "tanh",
            Func::Sech => "sech",
            Func::Exp => "exp",
            Func::Log => "log",
            Func::Sqrt => "sqrt",
            Func::Abs => "abs",
            Func::Arctan => "arctan",
        }
    }

    pub fn from_name(name: &str) -> Option<Func> {
        Func::ALL.into_iter().find(|f| f.name() == name)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
}

impl BinOp {
    fn symbol(self) -> &'static str {
        match self {
            BinOp::Add => "+",
            BinOp::Sub => "-",
            BinOp::Mul => "*",
            BinOp::Div => "/",
        }
    }

    fn precedence(self) -> u8 {
        match self {
            BinOp::Add | BinOp::Sub => 1,
            BinOp::Mul | BinOp::Div => 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Num(f64),
    Var(Var),
    Neg(Box<Expr>),
    Binary(BinOp, Box<Expr>, Box<Expr>),
    Pow(Box<Expr>, i32),
    Call(Func, Box<Expr>),
}

impl Expr {
    pub fn num(v: f64) -> Expr {
        Expr::Num(v)
    }

    pub fn x(k: usize) -> Expr {
        Expr::Var(Var::X(k))
    }

    pub fn t() -> Expr {
        Expr::Var(Var::T)
    }

    pub fn call(f: Func, arg: Expr) -> Expr {
        Expr::Call(f, Box::new(arg))
    }

    pub fn binary(op: BinOp, a: Expr, b: Expr) -> Expr {
        Expr::Binary(op, Box::new(a), Box::new(b))
    }

    /// Largest state index referenced plus one (0 when only `t` or constants appear).
    pub fn min_dim(&self) -> usize {
        match self {
            Expr::Num(_) | Expr::Var(Var::T) => 0,
            Expr::Var(Var::X(k)) => k + 1,
            Expr::Neg(a) | Expr::Pow(a, _) | Expr::Call(_, a) => a.min_dim(),
            Expr::Binary(_, a, b) => a.min_dim().max(b.min_dim()),
        }
    }

    pub fn as_num(&self) -> Option<f64> {
        match self {
            Expr::Num(v) => Some(*v),
            _ => None,
        }
    }

    /// Evaluates at state `x` and time `t`. Division by zero, logarithms of
    /// non-positive numbers, square roots of negatives and non-finite results
    /// are reported as domain errors naming the offending sub-expression.
    pub fn eval(&self, x: &[f64], t: f64) -> Result<f64, ExprError> {
        let v = match self {
            Expr::Num(v) => *v,
            Expr::Var(Var::T) => t,
            Expr::Var(Var::X(k)) => *x.get(*k).ok_or_else(|| self.domain("state index out of range"))?,
            Expr::Neg(a) => -a.eval(x, t)?,
            Expr::Binary(op, a, b) => {
                let (u, v) = (a.eval(x, t)?, b.eval(x, t)?);
                match op {
                    BinOp::Add => u + v,
                    BinOp::Sub => u - v,
                    BinOp::Mul => u * v,
                    BinOp::Div => {
                        if v == 0.0 {
                            return Err(self.domain("division by zero"));
                        }
                        u / v
                    }
                }
            }
            Expr::Pow(a, n) => {
                let u = a.eval(x, t)?;
                if u == 0.0 && *n < 0 {
                    return Err(self.domain("zero raised to a negative power"));
                }
                u.powi(*n)
            }
            Expr::Call(f, a) => {
                let u = a.eval(x, t)?;
                match f {
                    Func::Sin => u.sin(),
                    Func::Cos => u.cos(),
                    Func::Tan => u.tan(),
                    Func::Tanh => u.tanh(),
                    Func::Sech => 1.0 / u.cosh(),
                    Func::Exp => u.exp(),
                    Func::Log => {
                        if u <= 0.0 {
                            return Err(self.domain(&format!("logarithm of {u}")));
                        }
                        u.ln()
                    }
                    Func::Sqrt => {
                        if u < 0.0 {
                            return Err(self.domain(&format!("square root of {u}")));
                        }
                        u.sqrt()
                    }
                    Func::Abs => u.abs(),
                    Func::Arctan => u.atan(),
                }
            }
        };
        if !v.is_finite() {
            return Err(self.domain("non-finite value"));
        }
        Ok(v)
    }

    fn domain(&self, reason: &str) -> ExprError {
        ExprError::Domain {
            expr: self.to_string(),
            reason: reason.to_string(),
        }
    }

    fn precedence(&self) -> u8 {
        match self {
            Expr::Binary(op, ..) => op.precedence(),
            Expr::Neg(_) => 3,
            Expr::Num(v) if *v < 0.0 || (*v == 0.0 && v.is_sign_negative()) => 3,
            Expr::Pow(..) => 4,
            _ => 5,
        }
    }
}

fn write_child(f: &mut fmt::Formatter<'_>, e: &Expr, parens: bool) -> fmt::Result {
    if parens {
        write!(f, "({e})")
    } else {
        write!(f, "{e}")
    }
}

/// Canonical text form: reparses to the same tree.
impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Num(v) => write!(f, "{v}"),
            Expr::Var(Var::T) => f.write_str("t"),
            Expr::Var(Var::X(k)) => write!(f, "x{}", k + 1),
            Expr::Neg(a) => {
                f.write_str("-")?;
                write_child(f, a, a.precedence() < 3)
            }
            Expr::Binary(op, a, b) => {
                let p = op.precedence();
                write_child(f, a, a.precedence() < p)?;
                f.write_str(op.symbol())?;
                write_child(f, b, b.precedence() <= p)
            }
            Expr::Pow(a, n) => {
                write_child(f, a, a.precedence() <= 4)?;
                write!(f, "^{n}")
            }
            Expr::Call(func, a) => write!(f, "{}({a})", func.name()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exprlang::parse;

    #[test]
    fn evaluates_basic_forms() {
        let e = parse("x1+2*t", 1).unwrap();
        assert_eq!(e.eval(&[1.0], 3.0).unwrap(), 7.0);
        assert_eq!(parse("sech(0)", 1).unwrap().eval(&[0.0], 0.0).unwrap(), 1.0);
        let e = parse("sin(x1)/(1+t^2)", 2).unwrap();
        assert!((e.eval(&[std::f64::consts::FRAC_PI_2, 0.0], 1.0).unwrap() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn domain_errors_name_subexpression() {
        let e = parse("1 + 1/x1", 1).unwrap();
        match e.eval(&[0.0], 0.0) {
            Err(ExprError::Domain { expr, .. }) => assert_eq!(expr, "1/x1"),
            other => panic!("{other:?}"),
        }
        assert!(matches!(parse("log(x1)", 1).unwrap().eval(&[-1.0], 0.0), Err(ExprError::Domain { .. })));
        assert!(matches!(parse("log(x1)", 1).unwrap().eval(&[0.0], 0.0), Err(ExprError::Domain { .. })));
        assert!(matches!(parse("sqrt(x1)", 1).unwrap().eval(&[-1.0], 0.0), Err(ExprError::Domain { .. })));
        assert!(matches!(parse("x1^-1", 1).unwrap().eval(&[0.0], 0.0), Err(ExprError::Domain { .. })));
        assert!(matches!(parse("exp(x1)", 1).unwrap().eval(&[1e4], 0.0), Err(ExprError::Domain { .. })));
    }

    #[test]
    fn printer_uses_minimal_parentheses() {
        let cases = [
            ("sin(x1)/(1+t^2)", "sin(x1)/(1+t^2)"),
            ("x1 - (x2 - t)", "x1-(x2-t)"),
            ("(x1 - x2) - t", "x1-x2-t"),
            ("-x1^2", "-x1^2"),
            ("(-x1)^2", "(-x1)^2"),
            ("-(x1+1)", "-(x1+1)"),
            ("2*-3", "2*-3"),
            ("(x1^2)^3", "(x1^2)^3"),
            ("x1^-2", "x1^-2"),
        ];
        for (src, printed) in cases {
            assert_eq!(parse(src, 2).unwrap().to_string(), printed, "{src}");
        }
    }
}
