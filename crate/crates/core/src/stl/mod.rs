//! Signal temporal logic over circular regions.
//!
//! The supported fragment is
//!
//! ```text
//!     ψ ::= true | μ | !μ | ψ & ψ
//!     φ ::= G[a,b] ψ | F[a,b] ψ | ψ U[a,b] ψ | φ & φ
//! ```
//!
//! where `μ` names a region predicate. Formulas are parsed from text
//! ([`parse_stl`]), monitored on sampled signals ([`robustness`],
//! [`completion_time`]) and compiled into time-varying barrier functions
//! for the governor QP ([`compile_barrier`]).

mod barrier;
mod monitor;
mod parse;

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{dot, norm};

pub use barrier::{
    compile_barrier, smooth_min, BarrierEval, BarrierOptions, BarrierTerm, TStarPolicy, TermKind,
    TimeVaryingBarrier,
};
pub use monitor::{completion_time, horizon, robustness, witness_time, Signal};
pub use parse::parse_stl;

/// Region predicate `h(y) ≥ 0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Predicate {
    /// `r − ‖y − o‖`: be inside the disc.
    Reach { center_m: Vec<f64>, radius_m: f64 },
    /// Same evaluation as `Reach`; used for containment tasks.
    Stay { center_m: Vec<f64>, radius_m: f64 },
    /// `nᵀy − c` with unit normal `n`.
    Halfspace { normal: Vec<f64>, offset_m: f64 },
}

impl Predicate {
    pub fn reach(center: impl Into<Vec<f64>>, radius: f64) -> Self {
        Predicate::Reach {
            center_m: center.into(),
            radius_m: radius,
        }
    }

    pub fn stay(center: impl Into<Vec<f64>>, radius: f64) -> Self {
        Predicate::Stay {
            center_m: center.into(),
            radius_m: radius,
        }
    }

    pub fn validate(&self, dimension: usize) -> Result<()> {
        match self {
            Predicate::Reach { center_m, radius_m } | Predicate::Stay { center_m, radius_m } => {
                if center_m.len() != dimension {
                    return Err(Error::Config(format!(
                        "region center has {} coordinates, expected {dimension}",
                        center_m.len()
                    )));
                }
                if !(*radius_m > 0.0) {
                    return Err(Error::Config(format!("region radius must be positive, got {radius_m}")));
                }
            }
            Predicate::Halfspace { normal, .. } => {
                if normal.len() != dimension {
                    return Err(Error::Config(format!(
                        "halfspace normal has {} coordinates, expected {dimension}",
                        normal.len()
                    )));
                }
                if (norm(normal) - 1.0).abs() > 1e-9 {
                    return Err(Error::Config("halfspace normal must have unit length".into()));
                }
            }
        }
        Ok(())
    }

    pub fn eval(&self, y: &[f64]) -> f64 {
        match self {
            Predicate::Reach { center_m, radius_m } | Predicate::Stay { center_m, radius_m } => {
                radius_m - distance(y, center_m)
            }
            Predicate::Halfspace { normal, offset_m } => dot(normal, y) - offset_m,
        }
    }

    /// Spatial gradient of `h`; zero at a disc center where `h` peaks.
    pub fn gradient(&self, y: &[f64]) -> Vec<f64> {
        match self {
            Predicate::Reach { center_m, .. } | Predicate::Stay { center_m, .. } => {
                let d = distance(y, center_m);
                if d == 0.0 {
                    return vec![0.0; y.len()];
                }
                y.iter().zip(center_m).map(|(a, b)| -(a - b) / d).collect()
            }
            Predicate::Halfspace { normal, .. } => normal.clone(),
        }
    }

    /// Supremum of `h`, when bounded.
    pub fn ceiling(&self) -> Option<f64> {
        match self {
            Predicate::Reach { radius_m, .. } | Predicate::Stay { radius_m, .. } => Some(*radius_m),
            Predicate::Halfspace { .. } => None,
        }
    }

    pub fn center(&self) -> Option<&[f64]> {
        match self {
            Predicate::Reach { center_m, .. } | Predicate::Stay { center_m, .. } => Some(center_m),
            Predicate::Halfspace { .. } => None,
        }
    }
}

fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

pub type RegionTable = BTreeMap<String, Predicate>;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Interval {
    pub a: f64,
    pub b: f64,
}

impl fmt::Display for Interval {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{},{}]", self.a, self.b)
    }
}

/// A (possibly negated) named predicate.
#[derive(Debug, Clone, PartialEq)]
pub struct Atom {
    pub name: String,
    pub predicate: Predicate,
    pub negated: bool,
}

impl Atom {
    pub fn eval(&self, y: &[f64]) -> f64 {
        let h = self.predicate.eval(y);
        if self.negated {
            -h
        } else {
            h
        }
    }

    pub fn gradient(&self, y: &[f64]) -> Vec<f64> {
        let g = self.predicate.gradient(y);
        if self.negated {
            g.into_iter().map(|x| -x).collect()
        } else {
            g
        }
    }

    pub fn ceiling(&self) -> Option<f64> {
        if self.negated {
            None
        } else {
            self.predicate.ceiling()
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Formula {
    True,
    Atom(Atom),
    And(Vec<Formula>),
    Eventually {
        interval: Interval,
        child: Box<Formula>,
    },
    Always {
        interval: Interval,
        child: Box<Formula>,
    },
    Until {
        interval: Interval,
        left: Box<Formula>,
        right: Box<Formula>,
    },
}

impl Formula {
    /// True for the non-temporal class `ψ`.
    pub fn is_state_formula(&self) -> bool {
        match self {
            Formula::True | Formula::Atom(_) => true,
            Formula::And(children) => children.iter().all(Formula::is_state_formula),
            _ => false,
        }
    }

    /// Atoms of a state formula, in order.
    pub fn atoms(&self) -> Vec<&Atom> {
        match self {
            Formula::True => Vec::new(),
            Formula::Atom(a) => vec![a],
            Formula::And(children) => children.iter().flat_map(Formula::atoms).collect(),
            Formula::Eventually { child, .. } | Formula::Always { child, .. } => child.atoms(),
            Formula::Until { left, right, .. } => {
                let mut v = left.atoms();
                v.extend(right.atoms());
                v
            }
        }
    }

    /// Top-level conjuncts (the formula itself when it is not a conjunction).
    pub fn conjuncts(&self) -> Vec<&Formula> {
        match self {
            Formula::And(children) => children.iter().collect(),
            f => vec![f],
        }
    }

    fn needs_parens_as_operand(&self) -> bool {
        matches!(self, Formula::And(_) | Formula::Until { .. })
    }
}

impl fmt::Display for Formula {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let operand = |f: &mut fmt::Formatter<'_>, x: &Formula| {
            if x.needs_parens_as_operand() {
                write!(f, "({x})")
            } else {
                write!(f, "{x}")
            }
        };
        match self {
            Formula::True => write!(f, "true"),
            Formula::Atom(a) if a.negated => write!(f, "!{}", a.name),
            Formula::Atom(a) => write!(f, "{}", a.name),
            Formula::And(children) => {
                for (i, c) in children.iter().enumerate() {
                    if i > 0 {
                        write!(f, " & ")?;
                    }
                    if matches!(c, Formula::And(_)) {
                        write!(f, "({c})")?;
                    } else {
                        write!(f, "{c}")?;
                    }
                }
                Ok(())
            }
            Formula::Eventually { interval, child } => {
                write!(f, "F{interval} ")?;
                operand(f, child)
            }
            Formula::Always { interval, child } => {
                write!(f, "G{interval} ")?;
                operand(f, child)
            }
            Formula::Until {
                interval,
                left,
                right,
            } => {
                operand(f, left)?;
                write!(f, " U{interval} ")?;
                operand(f, right)
            }
        }
    }
}
