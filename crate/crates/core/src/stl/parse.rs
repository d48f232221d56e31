use super::{Atom, Formula, Interval, RegionTable};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Ident(String),
    Number(f64),
    Eventually,
    Always,
    Until,
    True,
    LBrack,
    RBrack,
    Comma,
    And,
    Not,
    LParen,
    RParen,
    End,
}

fn tokenize(text: &str) -> Result<Vec<(Tok, usize)>> {
    let bytes = text.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i] as char;
        if c.is_ascii_whitespace() {
            i += 1;
            continue;
        }
        let start = i;
        let tok = match c {
            '[' => Tok::LBrack,
            ']' => Tok::RBrack,
            ',' => Tok::Comma,
            '(' => Tok::LParen,
            ')' => Tok::RParen,
            '!' => Tok::Not,
            '&' => {
                if bytes.get(i + 1) == Some(&b'&') {
                    i += 1;
                }
                Tok::And
            }
            c if c.is_ascii_digit() || c == '.' || c == '-' || c == '+' => {
                i += 1;
                while i < bytes.len() {
                    let d = bytes[i] as char;
                    let exp_sign = (d == '-' || d == '+') && matches!(bytes[i - 1], b'e' | b'E');
                    if d.is_ascii_digit() || d == '.' || d == 'e' || d == 'E' || exp_sign {
                        i += 1;
                    } else {
                        break;
                    }
                }
                let lit = &text[start..i];
                let v: f64 = lit.parse().map_err(|_| Error::Syntax {
                    position: start,
                    message: format!("malformed number `{lit}`"),
                })?;
                out.push((Tok::Number(v), start));
                continue;
            }
            c if c.is_ascii_alphabetic() || c == '_' => {
                i += 1;
                while i < bytes.len() && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_') {
                    i += 1;
                }
                let word = &text[start..i];
                let tok = match word {
                    "F" => Tok::Eventually,
                    "G" => Tok::Always,
                    "U" => Tok::Until,
                    "true" => Tok::True,
                    _ => Tok::Ident(word.to_string()),
                };
                out.push((tok, start));
                continue;
            }
            other => {
                return Err(Error::Syntax {
                    position: start,
                    message: format!("unexpected character `{other}`"),
                })
            }
        };
        out.push((tok, start));
        i += 1;
    }
    out.push((Tok::End, text.len()));
    Ok(out)
}

struct Parser<'a> {
    toks: Vec<(Tok, usize)>,
    pos: usize,
    regions: &'a RegionTable,
}

impl Parser<'_> {
    fn peek(&self) -> &Tok {
        &self.toks[self.pos].0
    }

    fn offset(&self) -> usize {
        self.toks[self.pos].1
    }

    fn bump(&mut self) -> (Tok, usize) {
        let t = self.toks[self.pos].clone();
        if self.pos + 1 < self.toks.len() {
            self.pos += 1;
        }
        t
    }

    fn expect(&mut self, want: Tok, what: &str) -> Result<usize> {
        let (tok, at) = self.bump();
        if tok == want {
            Ok(at)
        } else {
            Err(Error::Syntax {
                position: at,
                message: format!("expected {what}, found {}", describe(&tok)),
            })
        }
    }

    fn conjunction(&mut self) -> Result<Formula> {
        let start = self.offset();
        let mut parts = vec![self.until()?];
        while *self.peek() == Tok::And {
            self.bump();
            parts.push(self.until()?);
        }
        if parts.len() == 1 {
            return Ok(parts.pop().unwrap());
        }
        let mut flat = Vec::new();
        for p in parts {
            match p {
                Formula::And(inner) => flat.extend(inner),
                other => flat.push(other),
            }
        }
        let state = flat.iter().filter(|f| f.is_state_formula()).count();
        if state != 0 && state != flat.len() {
            return Err(Error::Fragment {
                position: start,
                message: "conjunction mixes temporal and non-temporal operands".into(),
            });
        }
        Ok(Formula::And(flat))
    }

    fn until(&mut self) -> Result<Formula> {
        let left_at = self.offset();
        let left = self.unary()?;
        if *self.peek() != Tok::Until {
            return Ok(left);
        }
        let (_, u_at) = self.bump();
        let interval = self.interval()?;
        let right_at = self.offset();
        let right = self.unary()?;
        for (operand, at) in [(&left, left_at), (&right, right_at)] {
            if !operand.is_state_formula() {
                return Err(Error::Fragment {
                    position: at,
                    message: "until operands must be non-temporal".into(),
                });
            }
        }
        if *self.peek() == Tok::Until {
            return Err(Error::Fragment {
                position: u_at,
                message: "nested until is outside the fragment".into(),
            });
        }
        Ok(Formula::Until {
            interval,
            left: Box::new(left),
            right: Box::new(right),
        })
    }

    fn unary(&mut self) -> Result<Formula> {
        let (tok, at) = self.bump();
        match tok {
            Tok::Not => {
                let inner = self.unary()?;
                match inner {
                    Formula::Atom(a) if !a.negated => Ok(Formula::Atom(Atom { negated: true, ..a })),
                    _ => Err(Error::Fragment {
                        position: at,
                        message: "negation applies only to region predicates".into(),
                    }),
                }
            }
            Tok::Eventually | Tok::Always => {
                let interval = self.interval()?;
                let child_at = self.offset();
                let child = self.unary()?;
                if !child.is_state_formula() {
                    return Err(Error::Fragment {
                        position: child_at,
                        message: "temporal operators may only wrap non-temporal formulas".into(),
                    });
                }
                let child = Box::new(child);
                Ok(if tok == Tok::Eventually {
                    Formula::Eventually { interval, child }
                } else {
                    Formula::Always { interval, child }
                })
            }
            Tok::LParen => {
                let inner = self.conjunction()?;
                self.expect(Tok::RParen, "`)`")?;
                Ok(inner)
            }
            Tok::True => Ok(Formula::True),
            Tok::Ident(name) => match self.regions.get(&name) {
                Some(p) => Ok(Formula::Atom(Atom {
                    name,
                    predicate: p.clone(),
                    negated: false,
                })),
                None => Err(Error::UnknownRegion { name, position: at }),
            },
            other => Err(Error::Syntax {
                position: at,
                message: format!("expected a formula, found {}", describe(&other)),
            }),
        }
    }

    fn interval(&mut self) -> Result<Interval> {
        let at = self.expect(Tok::LBrack, "`[`")?;
        let a = self.number()?;
        self.expect(Tok::Comma, "`,`")?;
        let b = self.number()?;
        self.expect(Tok::RBrack, "`]`")?;
        if !(a.is_finite() && b.is_finite() && 0.0 <= a && a <= b) {
            return Err(Error::Interval { a, b, position: at });
        }
        Ok(Interval { a, b })
    }

    fn number(&mut self) -> Result<f64> {
        match self.bump() {
            (Tok::Number(v), _) => Ok(v),
            (other, at) => Err(Error::Syntax {
                position: at,
                message: format!("expected a number, found {}", describe(&other)),
            }),
        }
    }
}

fn describe(t: &Tok) -> String {
    match t {
        Tok::Ident(s) => format!("`{s}`"),
        Tok::Number(v) => format!("`{v}`"),
        Tok::Eventually => "`F`".into(),
        Tok::Always => "`G`".into(),
        Tok::Until => "`U`".into(),
        Tok::True => "`true`".into(),
        Tok::LBrack => "`[`".into(),
        Tok::RBrack => "`]`".into(),
        Tok::Comma => "`,`".into(),
        Tok::And => "`&`".into(),
        Tok::Not => "`!`".into(),
        Tok::LParen => "`(`".into(),
        Tok::RParen => "`)`".into(),
        Tok::End => "end of input".into(),
    }
}

/// Parses formula text, resolving region names against `regions`.
pub fn parse_stl(text: &str, regions: &RegionTable) -> Result<Formula> {
    let mut p = Parser {
        toks: tokenize(text)?,
        pos: 0,
        regions,
    };
    let f = p.conjunction()?;
    if *p.peek() != Tok::End {
        let (tok, at) = p.bump();
        return Err(Error::Syntax {
            position: at,
            message: format!("unexpected {} after formula", describe(&tok)),
        });
    }
    Ok(f)
}
