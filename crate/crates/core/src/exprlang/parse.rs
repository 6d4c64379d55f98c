use super::expr::{BinOp, Expr, Func};
use super::ExprError;

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Num(f64),
    Ident(String),
    Plus,
    Minus,
    Star,
    Slash,
    Caret,
    LParen,
    RParen,
    Comma,
}

fn lex(src: &str) -> Result<Vec<(Tok, usize)>, ExprError> {
    let bytes = src.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i];
        if c.is_ascii_whitespace() {
            i += 1;
            continue;
        }
        let start = i;
        let tok = match c {
            b'+' => Tok::Plus,
            b'-' => Tok::Minus,
            b'*' => Tok::Star,
            b'/' => Tok::Slash,
            b'^' => Tok::Caret,
            b'(' => Tok::LParen,
            b')' => Tok::RParen,
            b',' => Tok::Comma,
            b'0'..=b'9' | b'.' => {
                while i < bytes.len() && (bytes[i].is_ascii_digit() || bytes[i] == b'.') {
                    i += 1;
                }
                if i < bytes.len() && (bytes[i] == b'e' || bytes[i] == b'E') {
                    let mut j = i + 1;
                    if j < bytes.len() && (bytes[j] == b'+' || bytes[j] == b'-') {
                        j += 1;
                    }
                    if j < bytes.len() && bytes[j].is_ascii_digit() {
                        while j < bytes.len() && bytes[j].is_ascii_digit() {
                            j += 1;
                        }
                        i = j;
                    }
                }
                let text = &src[start..i];
                let v = text.parse::<f64>().map_err(|_| ExprError::Syntax {
                    offset: start,
                    message: format!("malformed number `{text}`"),
                })?;
                out.push((Tok::Num(v), start));
                continue;
            }
            c if c.is_ascii_alphabetic() || c == b'_' => {
                while i < bytes.len() && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_') {
                    i += 1;
                }
                out.push((Tok::Ident(src[start..i].to_string()), start));
                continue;
            }
            _ => {
                let ch = src[start..].chars().next().unwrap_or('?');
                return Err(ExprError::Syntax {
                    offset: start,
                    message: format!("unexpected character `{ch}`"),
                });
            }
        };
        out.push((tok, start));
        i += 1;
    }
    Ok(out)
}

struct Parser {
    toks: Vec<(Tok, usize)>,
    pos: usize,
    end: usize,
    dim: usize,
}

/// Parses `source` as an expression over `x1..x{dim}` and `t`.
pub fn parse(source: &str, dim: usize) -> Result<Expr, ExprError> {
    let toks = lex(source)?;
    let mut p = Parser {
        toks,
        pos: 0,
        end: source.len(),
        dim,
    };
    if p.toks.is_empty() {
        return Err(ExprError::Syntax {
            offset: 0,
            message: "empty expression".into(),
        });
    }
    let e = p.expr()?;
    if let Some((_, off)) = p.toks.get(p.pos) {
        return Err(ExprError::Trailing { offset: *off });
    }
    Ok(e)
}

impl Parser {
    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.pos).map(|(t, _)| t)
    }

    fn offset(&self) -> usize {
        self.toks.get(self.pos).map_or(self.end, |(_, o)| *o)
    }

    fn bump(&mut self) -> Option<(Tok, usize)> {
        let t = self.toks.get(self.pos).cloned();
        self.pos += 1;
        t
    }

    fn expect(&mut self, tok: Tok, what: &str) -> Result<(), ExprError> {
        if self.peek() == Some(&tok) {
            self.pos += 1;
            Ok(())
        } else {
            Err(ExprError::Syntax {
                offset: self.offset(),
                message: format!("expected {what}"),
            })
        }
    }

    fn expr(&mut self) -> Result<Expr, ExprError> {
        let mut lhs = self.term()?;
        loop {
            let op = match self.peek() {
                Some(Tok::Plus) => BinOp::Add,
                Some(Tok::Minus) => BinOp::Sub,
                _ => return Ok(lhs),
            };
            self.pos += 1;
            let rhs = self.term()?;
            lhs = Expr::binary(op, lhs, rhs);
        }
    }

    fn term(&mut self) -> Result<Expr, ExprError> {
        let mut lhs = self.unary()?;
        loop {
            let op = match self.peek() {
                Some(Tok::Star) => BinOp::Mul,
                Some(Tok::Slash) => BinOp::Div,
                _ => return Ok(lhs),
            };
            self.pos += 1;
            let rhs = self.unary()?;
            lhs = Expr::binary(op, lhs, rhs);
        }
    }

    fn unary(&mut self) -> Result<Expr, ExprError> {
        if self.peek() == Some(&Tok::Minus) {
            self.pos += 1;
            return Ok(match self.unary()? {
                Expr::Num(v) => Expr::Num(-v),
                e => Expr::Neg(Box::new(e)),
            });
        }
        self.power()
    }

    fn power(&mut self) -> Result<Expr, ExprError> {
        let base = self.primary()?;
        if self.peek() != Some(&Tok::Caret) {
            return Ok(base);
        }
        self.pos += 1;
        let at = self.offset();
        let exponent = self.unary()?;
        let n = fold_constant(&exponent).ok_or_else(|| ExprError::Syntax {
            offset: at,
            message: "exponent must be a constant integer".into(),
        })?;
        if n.fract() != 0.0 || n.abs() > i32::MAX as f64 {
            return Err(ExprError::Syntax {
                offset: at,
                message: format!("exponent {n} is not an integer"),
            });
        }
        Ok(Expr::Pow(Box::new(base), n as i32))
    }

    fn primary(&mut self) -> Result<Expr, ExprError> {
        let at = self.offset();
        match self.bump() {
            Some((Tok::Num(v), _)) => Ok(Expr::Num(v)),
            Some((Tok::LParen, _)) => {
                let e = self.expr()?;
                self.expect(Tok::RParen, "`)`")?;
                Ok(e)
            }
            Some((Tok::Ident(name), _)) => self.identifier(name, at),
            Some((_, off)) => Err(ExprError::Syntax {
                offset: off,
                message: "expected a number, variable, function or `(`".into(),
            }),
            None => Err(ExprError::Syntax {
                offset: self.end,
                message: "unexpected end of expression".into(),
            }),
        }
    }

    fn identifier(&mut self, name: String, at: usize) -> Result<Expr, ExprError> {
        if let Some(func) = Func::from_name(&name) {
            self.expect(Tok::LParen, &format!("`(` after `{name}`"))?;
            let mut args = vec![self.expr()?];
            while self.peek() == Some(&Tok::Comma) {
                self.pos += 1;
                args.push(self.expr()?);
            }
            self.expect(Tok::RParen, "`)`")?;
            if args.len() != 1 {
                return Err(ExprError::Arity {
                    name,
                    offset: at,
                    found: args.len(),
                });
            }
            return Ok(Expr::call(func, args.pop().unwrap()));
        }
        if self.peek() == Some(&Tok::LParen) {
            return Err(ExprError::UnknownIdentifier { name, offset: at });
        }
        match name.as_str() {
            "t" => return Ok(Expr::t()),
            "pi" => return Ok(Expr::Num(std::f64::consts::PI)),
            _ => {}
        }
        if let Some(idx) = name.strip_prefix('x').filter(|s| !s.is_empty() && s.bytes().all(|b| b.is_ascii_digit())) {
            let k: usize = idx.parse().unwrap_or(0);
            if k == 0 || k > self.dim {
                return Err(ExprError::VariableRange {
                    name,
                    offset: at,
                    dim: self.dim,
                });
            }
            return Ok(Expr::x(k - 1));
        }
        Err(ExprError::UnknownIdentifier { name, offset: at })
    }
}

fn fold_constant(e: &Expr) -> Option<f64> {
    match e {
        Expr::Num(v) => Some(*v),
        Expr::Neg(a) => fold_constant(a).map(|v| -v),
        Expr::Binary(op, a, b) => {
            let (u, v) = (fold_constant(a)?, fold_constant(b)?);
            Some(match op {
                BinOp::Add => u + v,
                BinOp::Sub => u - v,
                BinOp::Mul => u * v,
                BinOp::Div => u / v,
            })
        }
        Expr::Pow(a, n) => fold_constant(a).map(|v| v.powi(*n)),
        Expr::Var(_) | Expr::Call(..) => None,
    }
    .filter(|v| v.is_finite())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn variables_and_time() {
        assert_eq!(parse("x1", 1).unwrap(), Expr::x(0));
        assert_eq!(parse("  t ", 3).unwrap(), Expr::t());
        assert_eq!(parse("x12", 12).unwrap(), Expr::x(11));
    }

    #[test]
    fn sin_over_time_shape() {
        let e = parse("sin(x1)/(1+t^2)", 2).unwrap();
        let expected = Expr::binary(
            BinOp::Div,
            Expr::call(Func::Sin, Expr::x(0)),
            Expr::binary(BinOp::Add, Expr::num(1.0), Expr::Pow(Box::new(Expr::t()), 2)),
        );
        assert_eq!(e, expected);
    }

    #[test]
    fn precedence_and_associativity() {
        let e = parse("1 - 2 - 3", 1).unwrap();
        assert_eq!(e.eval(&[0.0], 0.0).unwrap(), -4.0);
        assert_eq!(parse("8/4/2", 1).unwrap().eval(&[0.0], 0.0).unwrap(), 1.0);
        assert_eq!(parse("-2^2", 1).unwrap().eval(&[0.0], 0.0).unwrap(), -4.0);
        assert_eq!(parse("2^3^2", 1).unwrap().eval(&[0.0], 0.0).unwrap(), 512.0);
        assert_eq!(parse("1+2*3", 1).unwrap().eval(&[0.0], 0.0).unwrap(), 7.0);
        assert_eq!(parse("x1^(1+1)", 1).unwrap(), Expr::Pow(Box::new(Expr::x(0)), 2));
        assert_eq!(parse("2.5e-1", 1).unwrap(), Expr::num(0.25));
    }

    #[test]
    fn unknown_identifier_points_at_name() {
        match parse("-y*g", 1) {
            Err(ExprError::UnknownIdentifier { name, offset }) => {
                assert_eq!(name, "y");
                assert_eq!(offset, 1);
            }
            other => panic!("{other:?}"),
        }
        assert!(matches!(parse("foo(x1)", 1), Err(ExprError::UnknownIdentifier { offset: 0, .. })));
    }

    #[test]
    fn error_offsets() {
        assert!(matches!(parse("x3", 2), Err(ExprError::VariableRange { offset: 0, dim: 2, .. })));
        assert!(matches!(parse("x0", 2), Err(ExprError::VariableRange { .. })));
        assert!(matches!(parse("1 + sin(x1, x2)", 2), Err(ExprError::Arity { offset: 4, found: 2, .. })));
        assert!(matches!(parse("x1 x2", 2), Err(ExprError::Trailing { offset: 3 })));
        assert!(matches!(parse("(x1", 2), Err(ExprError::Syntax { offset: 3, .. })));
        assert!(matches!(parse("x1 ^ x2", 2), Err(ExprError::Syntax { offset: 5, .. })));
        assert!(matches!(parse("x1^0.5", 2), Err(ExprError::Syntax { .. })));
        assert!(matches!(parse("2 $ 3", 2), Err(ExprError::Syntax { offset: 2, .. })));
        assert!(matches!(parse("", 2), Err(ExprError::Syntax { .. })));
        assert!(matches!(parse("2 x1", 2), Err(ExprError::Trailing { offset: 2 })));
    }
}
