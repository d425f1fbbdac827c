//! Exact rational arithmetic over `+ - * /` and parentheses.

use std::fmt;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum CalcError {
    Parse(String),
    DivisionByZero,
    Overflow,
}

impl fmt::Display for CalcError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CalcError::Parse(msg) => write!(f, "parse error: {msg}"),
            CalcError::DivisionByZero => write!(f, "division by zero"),
            CalcError::Overflow => write!(f, "overflow"),
        }
    }
}

/// Reduced fraction with a positive denominator.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Rational {
    pub num: i128,
    pub den: i128,
}

fn gcd(mut a: i128, mut b: i128) -> i128 {
    a = a.abs();
    b = b.abs();
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

impl Rational {
    pub fn new(num: i128, den: i128) -> Result<Self, CalcError> {
        if den == 0 {
            return Err(CalcError::DivisionByZero);
        }
        let g = gcd(num, den).max(1);
        let sign = if den < 0 { -1 } else { 1 };
        Ok(Rational {
            num: sign * num / g,
            den: sign * den / g,
        })
    }

    fn int(n: i128) -> Self {
        Rational { num: n, den: 1 }
    }

    fn add(self, o: Self) -> Result<Self, CalcError> {
        let num = self
            .num
            .checked_mul(o.den)
            .and_then(|a| o.num.checked_mul(self.den).and_then(|b| a.checked_add(b)))
            .ok_or(CalcError::Overflow)?;
        let den = self.den.checked_mul(o.den).ok_or(CalcError::Overflow)?;
        Rational::new(num, den)
    }

    fn neg(self) -> Self {
        Rational {
            num: -self.num,
            den: self.den,
        }
    }

    fn mul(self, o: Self) -> Result<Self, CalcError> {
        let num = self.num.checked_mul(o.num).ok_or(CalcError::Overflow)?;
        let den = self.den.checked_mul(o.den).ok_or(CalcError::Overflow)?;
        Rational::new(num, den)
    }

    fn div(self, o: Self) -> Result<Self, CalcError> {
        if o.num == 0 {
            return Err(CalcError::DivisionByZero);
        }
        self.mul(Rational {
            num: o.den,
            den: o.num,
        })
    }
}

impl fmt::Display for Rational {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.den == 1 {
            write!(f, "{}", self.num)
        } else {
            write!(f, "{}/{}", self.num, self.den)
        }
    }
}

struct Parser<'a> {
    src: &'a [u8],
    pos: usize,
}

impl Parser<'_> {
    fn skip_ws(&mut self) {
        while self.pos < self.src.len() && self.src[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
    }

    fn peek(&mut self) -> Option<u8> {
        self.skip_ws();
        self.src.get(self.pos).copied()
    }

    fn expr(&mut self) -> Result<Rational, CalcError> {
        let mut acc = self.term()?;
        while let Some(op @ (b'+' | b'-')) = self.peek() {
            self.pos += 1;
            let rhs = self.term()?;
            acc = if op == b'+' { acc.add(rhs)? } else { acc.add(rhs.neg())? };
        }
        Ok(acc)
    }

    fn term(&mut self) -> Result<Rational, CalcError> {
        let mut acc = self.factor()?;
        while let Some(op @ (b'*' | b'/')) = self.peek() {
            self.pos += 1;
            let rhs = self.factor()?;
            acc = if op == b'*' { acc.mul(rhs)? } else { acc.div(rhs)? };
        }
        Ok(acc)
    }

    fn factor(&mut self) -> Result<Rational, CalcError> {
        match self.peek() {
            Some(b'-') => {
                self.pos += 1;
                Ok(self.factor()?.neg())
            }
            Some(b'(') => {
                self.pos += 1;
                let v = self.expr()?;
                if self.peek() != Some(b')') {
                    return Err(CalcError::Parse(format!("expected ')' at {}", self.pos)));
                }
                self.pos += 1;
                Ok(v)
            }
            Some(c) if c.is_ascii_digit() => {
                let start = self.pos;
                while self.pos < self.src.len() && self.src[self.pos].is_ascii_digit() {
                    self.pos += 1;
                }
                let digits = std::str::from_utf8(&self.src[start..self.pos]).expect("ascii");
                digits
                    .parse::<i128>()
                    .map(Rational::int)
                    .map_err(|_| CalcError::Overflow)
            }
            Some(c) => Err(CalcError::Parse(format!(
                "unexpected {:?} at {}",
                c as char, self.pos
            ))),
            None => Err(CalcError::Parse("unexpected end of input".into())),
        }
    }
}

pub fn evaluate(expr: &str) -> Result<Rational, CalcError> {
    let mut p = Parser {
        src: expr.as_bytes(),
        pos: 0,
    };
    let v = p.expr()?;
    if p.peek().is_some() {
        return Err(CalcError::Parse(format!("trailing input at {}", p.pos)));
    }
    Ok(v)
}

/// Evaluate and render. Failures come back as an `error: ...` payload so the
/// caller can hand them to the policy as an observation.
pub fn eval_expression(expr: &str) -> String {
    match evaluate(expr) {
        Ok(v) => v.to_string(),
        Err(e) => format!("error: {e}"),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn examples() {
        assert_eq!(eval_expression("2+3*4"), "14");
        assert_eq!(eval_expression("(10-4)/3"), "2");
        assert_eq!(eval_expression("1/0"), "error: division by zero");
    }

    #[test]
    fn rationals_and_negatives() {
        assert_eq!(eval_expression("7/2"), "7/2");
        assert_eq!(eval_expression("-3+1"), "-2");
        assert_eq!(eval_expression("2/-4"), "-1/2");
        assert_eq!(eval_expression("(1/3)*3"), "1");
    }

    #[test]
    fn parse_errors() {
        assert!(eval_expression("2+").starts_with("error: parse"));
        assert!(eval_expression("(1").starts_with("error: parse"));
        assert!(eval_expression("1 2").starts_with("error: parse"));
        assert!(eval_expression("").starts_with("error: parse"));
    }

    #[test]
    fn division_by_zero_expression() {
        assert_eq!(eval_expression("5/(2-2)"), "error: division by zero");
    }
}
