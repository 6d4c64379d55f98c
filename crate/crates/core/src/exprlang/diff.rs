use super::expr::{BinOp, Expr, Func, Var};

fn num(v: f64) -> Expr {
    Expr::Num(v)
}

fn is(e: &Expr, v: f64) -> bool {
    e.as_num() == Some(v)
}

fn fold(v: f64, otherwise: impl FnOnce() -> Expr) -> Expr {
    if v.is_finite() {
        num(v)
    } else {
        otherwise()
    }
}

fn neg(a: Expr) -> Expr {
    match a {
        Expr::Num(v) => num(-v),
        Expr::Neg(inner) => *inner,
        a => Expr::Neg(Box::new(a)),
    }
}

fn add(a: Expr, b: Expr) -> Expr {
    match (a.as_num(), b.as_num()) {
        (Some(0.0), _) => b,
        (_, Some(0.0)) => a,
        (Some(u), Some(v)) => fold(u + v, || Expr::binary(BinOp::Add, a, b)),
        _ => Expr::binary(BinOp::Add, a, b),
    }
}

fn sub(a: Expr, b: Expr) -> Expr {
    match (a.as_num(), b.as_num()) {
        (_, Some(0.0)) => a,
        (Some(0.0), _) => neg(b),
        (Some(u), Some(v)) => fold(u - v, || Expr::binary(BinOp::Sub, a, b)),
        _ => Expr::binary(BinOp::Sub, a, b),
    }
}

fn mul(a: Expr, b: Expr) -> Expr {
    if is(&a, 0.0) || is(&b, 0.0) {
        return num(0.0);
    }
    if is(&a, 1.0) {
        return b;
    }
    if is(&b, 1.0) {
        return a;
    }
    if is(&a, -1.0) {
        return neg(b);
    }
    if is(&b, -1.0) {
        return neg(a);
    }
    match (a.as_num(), b.as_num()) {
        (Some(u), Some(v)) => fold(u * v, || Expr::binary(BinOp::Mul, a, b)),
        _ => Expr::binary(BinOp::Mul, a, b),
    }
}

fn div(a: Expr, b: Expr) -> Expr {
    if is(&a, 0.0) && !is(&b, 0.0) {
        return num(0.0);
    }
    if is(&b, 1.0) {
        return a;
    }
    match (a.as_num(), b.as_num()) {
        (Some(u), Some(v)) if v != 0.0 => fold(u / v, || Expr::binary(BinOp::Div, a, b)),
        _ => Expr::binary(BinOp::Div, a, b),
    }
}

fn pow(a: Expr, n: i32) -> Expr {
    match n {
        0 => num(1.0),
        1 => a,
        _ => match a.as_num() {
            Some(u) if u != 0.0 || n > 0 => fold(u.powi(n), || Expr::Pow(Box::new(a), n)),
            _ => Expr::Pow(Box::new(a), n),
        },
    }
}

fn call(f: Func, a: Expr) -> Expr {
    Expr::call(f, a)
}

/// Symbolic partial derivative `∂e/∂var`, with constant folding and the
/// 0/1 identities as the only simplifications.
pub fn differentiate(e: &Expr, var: Var) -> Expr {
    match e {
        Expr::Num(_) => num(0.0),
        Expr::Var(v) => num(if *v == var { 1.0 } else { 0.0 }),
        Expr::Neg(a) => neg(differentiate(a, var)),
        Expr::Binary(op, a, b) => {
            let (da, db) = (differentiate(a, var), differentiate(b, var));
            let (a, b) = ((**a).clone(), (**b).clone());
            match op {
                BinOp::Add => add(da, db),
                BinOp::Sub => sub(da, db),
                BinOp::Mul => add(mul(da, b), mul(a, db)),
                BinOp::Div => {
                    let numer = sub(mul(da, b.clone()), mul(a, db));
                    div(numer, pow(b, 2))
                }
            }
        }
        Expr::Pow(a, n) => {
            let da = differentiate(a, var);
            let a = (**a).clone();
            mul(mul(num(*n as f64), pow(a, n - 1)), da)
        }
        Expr::Call(f, a) => {
            let da = differentiate(a, var);
            if is(&da, 0.0) {
                return num(0.0);
            }
            let u = (**a).clone();
            let outer = match f {
                Func::Sin => call(Func::Cos, u),
                Func::Cos => neg(call(Func::Sin, u)),
                Func::Tan => add(num(1.0), pow(call(Func::Tan, u), 2)),
                Func::Tanh => pow(call(Func::Sech, u), 2),
                Func::Sech => neg(mul(call(Func::Sech, u.clone()), call(Func::Tanh, u))),
                Func::Exp => call(Func::Exp, u),
                Func::Log => return div(da, u),
                Func::Sqrt => return div(da, mul(num(2.0), call(Func::Sqrt, u))),
                Func::Abs => div(u.clone(), call(Func::Abs, u)),
                Func::Arctan => return div(da, add(num(1.0), pow(u, 2))),
            };
            mul(outer, da)
        }
    }
}
