//! Evaluator for the small quorum-size expressions used in golden tables:
//! integers, `n`, `+ - * /`, parentheses, `floor(..)`, `ceil(..)`, and
//! implicit multiplication such as `3n`.

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("bad formula {formula:?}: {reason}")]
pub struct FormulaError {
    pub formula: String,
    pub reason: String,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
struct Ratio {
    num: i64,
    den: i64,
}

impl Ratio {
    fn int(v: i64) -> Self {
        Ratio { num: v, den: 1 }
    }

    fn norm(num: i64, den: i64) -> Self {
        let (num, den) = if den < 0 { (-num, -den) } else { (num, den) };
        let g = gcd(num.abs(), den).max(1);
        Ratio { num: num / g, den: den / g }
    }

    fn floor(self) -> i64 {
        self.num.div_euclid(self.den)
    }

    fn ceil(self) -> i64 {
        -(-self.num).div_euclid(self.den)
    }
}

fn gcd(a: i64, b: i64) -> i64 {
    if b == 0 { a } else { gcd(b, a % b) }
}

struct Parser<'a> {
    src: &'a [u8],
    pos: usize,
    n: i64,
}

impl Parser<'_> {
    fn peek(&mut self) -> Option<u8> {
        while self.src.get(self.pos) == Some(&b' ') {
            self.pos += 1;
        }
        self.src.get(self.pos).copied()
    }

    fn expr(&mut self) -> Result<Ratio, String> {
        let mut acc = self.term()?;
        while let Some(c @ (b'+' | b'-')) = self.peek() {
            self.pos += 1;
            let rhs = self.term()?;
            acc = if c == b'+' {
                Ratio::norm(acc.num * rhs.den + rhs.num * acc.den, acc.den * rhs.den)
            } else {
                Ratio::norm(acc.num * rhs.den - rhs.num * acc.den, acc.den * rhs.den)
            };
        }
        Ok(acc)
    }

    fn term(&mut self) -> Result<Ratio, String> {
        let mut acc = self.factor()?;
        loop {
            match self.peek() {
                Some(b'*') => {
                    self.pos += 1;
                    let rhs = self.factor()?;
                    acc = Ratio::norm(acc.num * rhs.num, acc.den * rhs.den);
                }
                Some(b'/') => {
                    self.pos += 1;
                    let rhs = self.factor()?;
                    if rhs.num == 0 {
                        return Err("division by zero".into());
                    }
                    acc = Ratio::norm(acc.num * rhs.den, acc.den * rhs.num);
                }
                Some(c) if c == b'n' || c == b'(' || c.is_ascii_alphabetic() => {
                    let rhs = self.factor()?;
                    acc = Ratio::norm(acc.num * rhs.num, acc.den * rhs.den);
                }
                _ => return Ok(acc),
            }
        }
    }

    fn factor(&mut self) -> Result<Ratio, String> {
        match self.peek() {
            Some(b'-') => {
                self.pos += 1;
                let v = self.factor()?;
                Ok(Ratio::norm(-v.num, v.den))
            }
            Some(b'(') => {
                self.pos += 1;
                let v = self.expr()?;
                self.expect(b')')?;
                Ok(v)
            }
            Some(c) if c.is_ascii_digit() => {
                let start = self.pos;
                while self.src.get(self.pos).is_some_and(u8::is_ascii_digit) {
                    self.pos += 1;
                }
                let text = std::str::from_utf8(&self.src[start..self.pos]).map_err(|e| e.to_string())?;
                Ok(Ratio::int(text.parse().map_err(|_| format!("bad integer {text}"))?))
            }
            Some(c) if c.is_ascii_alphabetic() => {
                let start = self.pos;
                while self.src.get(self.pos).is_some_and(u8::is_ascii_alphabetic) {
                    self.pos += 1;
                }
                let word = std::str::from_utf8(&self.src[start..self.pos]).map_err(|e| e.to_string())?;
                match word {
                    "n" => Ok(Ratio::int(self.n)),
                    "floor" | "ceil" => {
                        self.expect(b'(')?;
                        let v = self.expr()?;
                        self.expect(b')')?;
                        Ok(Ratio::int(if word == "floor" { v.floor() } else { v.ceil() }))
                    }
                    other => Err(format!("unknown name {other}")),
                }
            }
            Some(c) => Err(format!("unexpected {:?} at {}", c as char, self.pos)),
            None => Err("unexpected end".into()),
        }
    }

    fn expect(&mut self, c: u8) -> Result<(), String> {
        if self.peek() == Some(c) {
            self.pos += 1;
            Ok(())
        } else {
            Err(format!("expected {:?} at {}", c as char, self.pos))
        }
    }
}

/// Evaluates `formula` at `n`; the result must be a non-negative integer.
pub fn eval(formula: &str, n: usize) -> Result<usize, FormulaError> {
    let err = |reason: String| FormulaError { formula: formula.to_string(), reason };
    let mut p = Parser { src: formula.as_bytes(), pos: 0, n: n as i64 };
    let v = p.expr().map_err(err)?;
    if p.peek().is_some() {
        return Err(err(format!("trailing input at {}", p.pos)));
    }
    if v.den != 1 || v.num < 0 {
        return Err(err(format!("value {}/{} is not a non-negative integer", v.num, v.den)));
    }
    Ok(v.num as usize)
}

#[cfg(test)]
mod tests {
    use super::eval;

    #[test]
    fn table_formulas() {
        assert_eq!(eval("n", 5), Ok(5));
        assert_eq!(eval("ceil((n+1)/2)", 5), Ok(3));
        assert_eq!(eval("ceil((n+1)/2)", 4), Ok(3));
        assert_eq!(eval("floor(3n/4)", 7), Ok(5));
        assert_eq!(eval("floor(3n/4)", 3), Ok(2));
        assert_eq!(eval("floor((n-1)/2)", 7), Ok(3));
        assert_eq!(eval("n-1", 3), Ok(2));
        assert_eq!(eval("2 * (n - 3)", 5), Ok(4));
    }

    #[test]
    fn rejects_garbage() {
        assert!(eval("n/2", 5).is_err());
        assert!(eval("m", 5).is_err());
        assert!(eval("(n", 5).is_err());
        assert!(eval("1-n", 5).is_err());
    }
}
