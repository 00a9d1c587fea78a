//! Infix syntax used by problem files:
//! `feat(module, feature)`, `sel(module, {c1, c2})`, `log(..)`, `^`, `*`, `/`, `+`, `-`
//! and, for constraints, one of `<=`, `>=`, `==`.

use thiserror::Error;

use super::{FeatureExpr, Sense};

#[derive(Debug, Error, Clone, PartialEq)]
#[error("{message} (at column {column})")]
pub struct ParseError {
    pub column: usize,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Num(f64),
    Ident(String),
    Str(String),
    LParen,
    RParen,
    LBrace,
    RBrace,
    Comma,
    Plus,
    Minus,
    Star,
    Slash,
    Caret,
    Le,
    Ge,
    Eq,
}

fn tokenize(src: &str) -> Result<Vec<(Tok, usize)>, ParseError> {
    let chars: Vec<char> = src.chars().collect();
    let mut out = Vec::new();
    let mut i = 0;
    let err = |i: usize, m: &str| ParseError {
        column: i + 1,
        message: m.to_string(),
    };
    while i < chars.len() {
        let c = chars[i];
        let start = i;
        let tok = match c {
            c if c.is_whitespace() => {
                i += 1;
                continue;
            }
            '(' => Tok::LParen,
            ')' => Tok::RParen,
            '{' => Tok::LBrace,
            '}' => Tok::RBrace,
            ',' => Tok::Comma,
            '+' => Tok::Plus,
            '-' => Tok::Minus,
            '*' => Tok::Star,
            '/' => Tok::Slash,
            '^' => Tok::Caret,
            '<' | '>' | '=' | '≤' | '≥' => {
                let next = chars.get(i + 1).copied();
                let (t, width) = match (c, next) {
                    ('<', Some('=')) => (Tok::Le, 2),
                    ('>', Some('=')) => (Tok::Ge, 2),
                    ('=', Some('=')) => (Tok::Eq, 2),
                    ('=', _) => (Tok::Eq, 1),
                    ('≤', _) => (Tok::Le, 1),
                    ('≥', _) => (Tok::Ge, 1),
                    _ => return Err(err(i, "strict inequalities are not supported; use <= or >=")),
                };
                i += width;
                out.push((t, start));
                continue;
            }
            '"' => {
                let mut s = String::new();
                i += 1;
                loop {
                    match chars.get(i) {
                        None => return Err(err(start, "unterminated string")),
                        Some('"') => break,
                        Some('\\') if chars.get(i + 1) == Some(&'"') => {
                            s.push('"');
                            i += 2;
                        }
                        Some(ch) => {
                            s.push(*ch);
                            i += 1;
                        }
                    }
                }
                i += 1;
                out.push((Tok::Str(s), start));
                continue;
            }
            c if c.is_ascii_digit() || c == '.' => {
                let mut j = i;
                while j < chars.len() && (chars[j].is_ascii_digit() || chars[j] == '.') {
                    j += 1;
                }
                if j < chars.len() && (chars[j] == 'e' || chars[j] == 'E') {
                    let mut k = j + 1;
                    if k < chars.len() && (chars[k] == '+' || chars[k] == '-') {
                        k += 1;
                    }
                    if k < chars.len() && chars[k].is_ascii_digit() {
                        while k < chars.len() && chars[k].is_ascii_digit() {
                            k += 1;
                        }
                        j = k;
                    }
                }
                let text: String = chars[i..j].iter().collect();
                let v = text
                    .parse::<f64>()
                    .map_err(|_| err(i, &format!("bad number `{text}`")))?;
                i = j;
                out.push((Tok::Num(v), start));
                continue;
            }
            c if c.is_alphabetic() || c == '_' => {
                let mut j = i;
                while j < chars.len() && (chars[j].is_alphanumeric() || chars[j] == '_' || chars[j] == '.') {
                    j += 1;
                }
                let text: String = chars[i..j].iter().collect();
                i = j;
                out.push((Tok::Ident(text), start));
                continue;
            }
            other => return Err(err(i, &format!("unexpected character `{other}`"))),
        };
        out.push((tok, start));
        i += 1;
    }
    Ok(out)
}

struct Parser {
    toks: Vec<(Tok, usize)>,
    pos: usize,
    len: usize,
}

impl Parser {
    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.pos).map(|(t, _)| t)
    }

    fn column(&self) -> usize {
        self.toks.get(self.pos).map(|(_, c)| c + 1).unwrap_or(self.len + 1)
    }

    fn err<T>(&self, message: impl Into<String>) -> Result<T, ParseError> {
        Err(ParseError {
            column: self.column(),
            message: message.into(),
        })
    }

    fn expect(&mut self, tok: Tok, what: &str) -> Result<(), ParseError> {
        if self.peek() == Some(&tok) {
            self.pos += 1;
            Ok(())
        } else {
            self.err(format!("expected {what}"))
        }
    }

    fn expr(&mut self) -> Result<FeatureExpr, ParseError> {
        let mut acc = self.term()?;
        loop {
            match self.peek() {
                Some(Tok::Plus) => {
                    self.pos += 1;
                    acc = acc + self.term()?;
                }
                Some(Tok::Minus) => {
                    self.pos += 1;
                    acc = acc - self.term()?;
                }
                _ => return Ok(acc),
            }
        }
    }

    fn term(&mut self) -> Result<FeatureExpr, ParseError> {
        let mut acc = self.unary()?;
        loop {
            match self.peek() {
                Some(Tok::Star) => {
                    self.pos += 1;
                    let rhs = self.unary()?;
                    acc = match (&acc, &rhs) {
                        (FeatureExpr::Constant(c), _) => rhs.scaled(*c),
                        (_, FeatureExpr::Constant(c)) => acc.scaled(*c),
                        _ => acc * rhs,
                    };
                }
                Some(Tok::Slash) => {
                    self.pos += 1;
                    let at = self.column();
                    let rhs = self.unary()?;
                    if matches!(rhs, FeatureExpr::Constant(c) if c == 0.0) {
                        return Err(ParseError {
                            column: at,
                            message: "division by the constant zero".into(),
                        });
                    }
                    acc = acc / rhs;
                }
                _ => return Ok(acc),
            }
        }
    }

    fn unary(&mut self) -> Result<FeatureExpr, ParseError> {
        if self.peek() == Some(&Tok::Minus) {
            self.pos += 1;
            return Ok(-self.unary()?);
        }
        self.power()
    }

    fn power(&mut self) -> Result<FeatureExpr, ParseError> {
        let base = self.atom()?;
        if self.peek() != Some(&Tok::Caret) {
            return Ok(base);
        }
        self.pos += 1;
        let at = self.column();
        let exponent = self.unary()?;
        match exponent.constant_value() {
            Some(p) => Ok(match base {
                FeatureExpr::Constant(b) => FeatureExpr::Constant(b.powf(p)),
                b => b.powf(p),
            }),
            None => Err(ParseError {
                column: at,
                message: "exponent must be a constant".into(),
            }),
        }
    }

    fn name(&mut self) -> Result<String, ParseError> {
        match self.peek().cloned() {
            Some(Tok::Ident(s)) | Some(Tok::Str(s)) => {
                self.pos += 1;
                Ok(s)
            }
            Some(Tok::Num(v)) => {
                self.pos += 1;
                Ok(format!("{v}"))
            }
            _ => self.err("expected a name"),
        }
    }

    fn atom(&mut self) -> Result<FeatureExpr, ParseError> {
        match self.peek().cloned() {
            Some(Tok::Num(v)) => {
                self.pos += 1;
                Ok(FeatureExpr::Constant(v))
            }
            Some(Tok::LParen) => {
                self.pos += 1;
                let e = self.expr()?;
                self.expect(Tok::RParen, "`)`")?;
                Ok(e)
            }
            Some(Tok::Ident(id)) => {
                self.pos += 1;
                match id.as_str() {
                    "feat" => {
                        self.expect(Tok::LParen, "`(` after feat")?;
                        let module = self.name()?;
                        self.expect(Tok::Comma, "`,`")?;
                        let feature = self.name()?;
                        self.expect(Tok::RParen, "`)`")?;
                        Ok(FeatureExpr::Feature {
                            module,
                            feature,
                            weight: 1.0,
                        })
                    }
                    "sel" => {
                        self.expect(Tok::LParen, "`(` after sel")?;
                        let module = self.name()?;
                        self.expect(Tok::Comma, "`,`")?;
                        self.expect(Tok::LBrace, "`{`")?;
                        let mut components = vec![self.name()?];
                        while self.peek() == Some(&Tok::Comma) {
                            self.pos += 1;
                            components.push(self.name()?);
                        }
                        self.expect(Tok::RBrace, "`}`")?;
                        self.expect(Tok::RParen, "`)`")?;
                        Ok(FeatureExpr::Selector {
                            module,
                            components,
                            weight: 1.0,
                        })
                    }
                    "log" => {
                        self.expect(Tok::LParen, "`(` after log")?;
                        let e = self.expr()?;
                        self.expect(Tok::RParen, "`)`")?;
                        Ok(match e {
                            FeatureExpr::Constant(c) if c > 0.0 => FeatureExpr::Constant(c.ln()),
                            e => e.log(),
                        })
                    }
                    _ => {
                        self.pos -= 1;
                        self.err(format!("unknown identifier `{id}`"))
                    }
                }
            }
            Some(_) => self.err("expected a number, `(`, feat, sel or log"),
            None => self.err("unexpected end of expression"),
        }
    }
}

fn parser(src: &str) -> Result<Parser, ParseError> {
    Ok(Parser {
        toks: tokenize(src)?,
        pos: 0,
        len: src.chars().count(),
    })
}

/// Parses an objective expression.
pub fn parse_expr(src: &str) -> Result<FeatureExpr, ParseError> {
    let mut p = parser(src)?;
    let e = p.expr()?;
    if p.pos != p.toks.len() {
        return p.err("trailing input");
    }
    Ok(e)
}

/// A constraint normalized to `lhs (<= | ==) rhs` with a constant `rhs`.
#[derive(Debug, Clone)]
pub struct ParsedConstraint {
    pub lhs: FeatureExpr,
    pub sense: Sense,
    pub rhs: f64,
}

/// Parses `expr op expr`, moving everything non-constant to the left.
///
/// `a >= b` becomes `-a <= -b`; when both sides depend on the design the
/// constraint becomes `a - b op 0`.
pub fn parse_constraint(src: &str) -> Result<ParsedConstraint, ParseError> {
    let mut p = parser(src)?;
    let left = p.expr()?;
    let op = match p.peek() {
        Some(Tok::Le) => Tok::Le,
        Some(Tok::Ge) => Tok::Ge,
        Some(Tok::Eq) => Tok::Eq,
        _ => return p.err("expected <=, >= or =="),
    };
    p.pos += 1;
    let right = p.expr()?;
    if p.pos != p.toks.len() {
        return p.err("trailing input");
    }
    let (lhs, op, rhs) = match (left.constant_value(), right.constant_value()) {
        (_, Some(c)) => (left, op, c),
        (Some(c), None) => {
            let flipped = match op {
                Tok::Le => Tok::Ge,
                Tok::Ge => Tok::Le,
                o => o,
            };
            (right, flipped, c)
        }
        (None, None) => (left - right, op, 0.0),
    };
    Ok(match op {
        Tok::Le => ParsedConstraint {
            lhs,
            sense: Sense::Le,
            rhs,
        },
        Tok::Eq => ParsedConstraint {
            lhs,
            sense: Sense::Eq,
            rhs,
        },
        _ => ParsedConstraint {
            lhs: -lhs,
            sense: Sense::Le,
            rhs: -rhs,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog::{DesignSpace, Feature, FeatureMatrix};
    use crate::expr::evaluate_choices;

    fn space() -> DesignSpace {
        let m = FeatureMatrix::new(
            "motor",
            vec![Feature::new("torque", None), Feature::new("cost", None)],
            vec![("a".into(), vec![2.0, 5.0]), ("b b".into(), vec![3.0, 7.0])],
        )
        .unwrap();
        let f = FeatureMatrix::new("frame", vec![Feature::new("len", None)], vec![("x".into(), vec![0.5])]).unwrap();
        DesignSpace::new(vec![m, f]).unwrap()
    }

    fn val(src: &str, choices: &[Option<usize>]) -> f64 {
        evaluate_choices(&space(), &parse_expr(src).unwrap(), choices).unwrap()
    }

    #[test]
    fn precedence_and_associativity() {
        assert_eq!(val("1 + 2 * 3", &[Some(0), Some(0)]), 7.0);
        assert_eq!(val("-2^2", &[Some(0), Some(0)]), -4.0);
        assert_eq!(val("2^3^2", &[Some(0), Some(0)]), 512.0);
        assert_eq!(val("8 / 4 / 2", &[Some(0), Some(0)]), 1.0);
        assert_eq!(val("4*feat(motor, torque)", &[Some(1), Some(0)]), 12.0);
        assert_eq!(
            val("feat(motor,torque)^(1/2) / feat(frame, len)", &[Some(0), Some(0)]),
            2f64.sqrt() / 0.5
        );
        assert_eq!(val("sel(motor, {\"b b\"}) * 10", &[Some(1), Some(0)]), 10.0);
        assert_eq!(val("log(feat(motor, cost)) - log(5)", &[Some(0), Some(0)]), 0.0);
        assert_eq!(val("1e-3 * 2E2", &[Some(0), Some(0)]), 0.2);
    }

    #[test]
    fn display_round_trips() {
        let src = "4*feat(motor, torque) - 3*sel(motor, {a, \"b b\"}) + feat(motor,cost)^(-1.5) * log(feat(frame, len) + 1) / 2";
        let e = parse_expr(src).unwrap();
        let again = parse_expr(&e.to_string()).unwrap();
        for c in [[Some(0), Some(0)], [Some(1), Some(0)]] {
            assert_eq!(
                evaluate_choices(&space(), &e, &c).unwrap(),
                evaluate_choices(&space(), &again, &c).unwrap()
            );
        }
    }

    #[test]
    fn constraints_normalize() {
        let c = parse_constraint("feat(motor, cost) + feat(frame, len) <= 10").unwrap();
        assert_eq!((c.sense, c.rhs), (Sense::Le, 10.0));
        let c = parse_constraint("feat(motor, torque) >= 2.5").unwrap();
        assert_eq!((c.sense, c.rhs), (Sense::Le, -2.5));
        assert_eq!(evaluate_choices(&space(), &c.lhs, &[Some(1), Some(0)]).unwrap(), -3.0);
        let c = parse_constraint("3 <= feat(motor, torque)").unwrap();
        assert_eq!((c.sense, c.rhs), (Sense::Le, -3.0));
        let c = parse_constraint("sel(motor, {a}) == 1").unwrap();
        assert_eq!((c.sense, c.rhs), (Sense::Eq, 1.0));
        let c = parse_constraint("feat(motor, torque) <= feat(motor, cost)").unwrap();
        assert_eq!(c.rhs, 0.0);
        assert_eq!(evaluate_choices(&space(), &c.lhs, &[Some(0), Some(0)]).unwrap(), -3.0);
    }

    #[test]
    fn errors_carry_columns() {
        assert_eq!(parse_expr("1 + ").unwrap_err().column, 5);
        assert_eq!(parse_expr("foo(1)").unwrap_err().column, 1);
        assert!(parse_expr("feat(m, x) ^ feat(m, y)").is_err());
        assert!(parse_expr("feat(m, x) / 0").is_err());
        assert!(parse_constraint("feat(m, x) < 3").is_err());
        assert!(parse_constraint("feat(m, x)").is_err());
        assert!(parse_expr("1 2").is_err());
    }
}
