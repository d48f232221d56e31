use serde::{Deserialize, Serialize};

use super::{Atom, Formula, Interval};
use crate::error::{Error, Result};

const WINDOW_EPS: f64 = 1e-9;

/// Where inside `[a,b]` an eventually-task is scheduled to be met.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum TStarPolicy {
    #[default]
    Midpoint,
    Start,
    End,
    /// `a + λ(b − a)` with `λ ∈ [0, 1]`.
    Fraction(f64),
}

impl TStarPolicy {
    pub fn pick(&self, iv: Interval) -> f64 {
        let lambda = match self {
            TStarPolicy::Midpoint => 0.5,
            TStarPolicy::Start => 0.0,
            TStarPolicy::End => 1.0,
            TStarPolicy::Fraction(l) => *l,
        };
        iv.a + lambda * (iv.b - iv.a)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BarrierOptions {
    pub t_star: TStarPolicy,
    /// Log-sum-exp temperature.
    pub smoothing: f64,
    /// Required depth inside an eventually-region at its deadline, in metres.
    pub reach_depth_m: f64,
    /// Value every barrier starts from; defaults to the predicate ceiling
    /// (region radius), or 1 for unbounded predicates.
    pub initial_margin: Option<f64>,
}

impl Default for BarrierOptions {
    fn default() -> Self {
        Self {
            t_star: TStarPolicy::Midpoint,
            smoothing: 1.0,
            reach_depth_m: 0.0,
            initial_margin: None,
        }
    }
}

impl BarrierOptions {
    pub fn validate(&self) -> Result<()> {
        if !(self.smoothing > 0.0 && self.smoothing.is_finite()) {
            return Err(Error::Config(format!("smoothing must be positive, got {}", self.smoothing)));
        }
        if !(self.reach_depth_m >= 0.0 && self.reach_depth_m.is_finite()) {
            return Err(Error::Config(format!(
                "reach_depth_m must be nonnegative, got {}",
                self.reach_depth_m
            )));
        }
        if let TStarPolicy::Fraction(l) = self.t_star {
            if !(0.0..=1.0).contains(&l) {
                return Err(Error::Config(format!("t_star fraction must lie in [0, 1], got {l}")));
            }
        }
        if let Some(m) = self.initial_margin {
            if !(m > 0.0 && m.is_finite()) {
                return Err(Error::Config(format!("initial_margin must be positive, got {m}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TermKind {
    /// Predicate at the formula root, checked at t = 0 only.
    Initial,
    Eventually,
    Always,
}

/// One barrier `h(g) − depth + γ(t)`. `γ` stays at `γ₀` until `ramp_start`,
/// falls linearly to zero at `t_star` and stays there.
#[derive(Debug, Clone, PartialEq)]
pub struct BarrierTerm {
    pub label: String,
    pub kind: TermKind,
    pub atom: Atom,
    pub depth: f64,
    pub gamma0: f64,
    pub ramp_start: f64,
    pub t_star: f64,
    pub window: (f64, f64),
}

impl BarrierTerm {
    pub fn gamma(&self, t: f64) -> f64 {
        if t >= self.t_star {
            0.0
        } else if t <= self.ramp_start {
            self.gamma0
        } else {
            self.gamma0 * (self.t_star - t) / (self.t_star - self.ramp_start)
        }
    }

    pub fn gamma_rate(&self, t: f64) -> f64 {
        if t < self.t_star && t >= self.ramp_start {
            -self.gamma0 / (self.t_star - self.ramp_start)
        } else {
            0.0
        }
    }

    pub fn is_active(&self, t: f64) -> bool {
        t >= self.window.0 - WINDOW_EPS && t <= self.window.1 + WINDOW_EPS
    }

    pub fn value(&self, g: &[f64], t: f64) -> f64 {
        self.atom.eval(g) - self.depth + self.gamma(t)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BarrierEval {
    pub value: f64,
    pub gradient: Vec<f64>,
    pub time_derivative: f64,
}

/// Smoothed conjunction of the active terms.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeVaryingBarrier {
    terms: Vec<BarrierTerm>,
    smoothing: f64,
    dimension: usize,
}

/// `−(1/s)·ln Σ exp(−s·bᵢ)`, evaluated with a min shift; `+∞` for no inputs.
pub fn smooth_min(values: &[f64], smoothing: f64) -> f64 {
    let m = values.iter().copied().fold(f64::INFINITY, f64::min);
    if !m.is_finite() {
        return m;
    }
    let sum: f64 = values.iter().map(|b| (-smoothing * (b - m)).exp()).sum();
    m - sum.ln() / smoothing
}

impl TimeVaryingBarrier {
    pub fn terms(&self) -> &[BarrierTerm] {
        &self.terms
    }

    pub fn smoothing(&self) -> f64 {
        self.smoothing
    }

    /// Union of the term activity windows.
    pub fn active_window(&self) -> (f64, f64) {
        let start = self.terms.iter().map(|t| t.window.0).fold(f64::INFINITY, f64::min);
        let end = self.terms.iter().map(|t| t.window.1).fold(f64::NEG_INFINITY, f64::max);
        (start, end)
    }

    /// Per-term values, `NaN` for inactive terms.
    pub fn term_values(&self, g: &[f64], t: f64) -> Vec<f64> {
        self.terms
            .iter()
            .map(|term| if term.is_active(t) { term.value(g, t) } else { f64::NAN })
            .collect()
    }

    /// Combined value, gradient and time derivative; `None` when no term is active.
    pub fn evaluate(&self, g: &[f64], t: f64) -> Option<BarrierEval> {
        let active: Vec<&BarrierTerm> = self.terms.iter().filter(|x| x.is_active(t)).collect();
        if active.is_empty() {
            return None;
        }
        let values: Vec<f64> = active.iter().map(|x| x.value(g, t)).collect();
        let m = values.iter().copied().fold(f64::INFINITY, f64::min);
        let weights: Vec<f64> = values.iter().map(|b| (-self.smoothing * (b - m)).exp()).collect();
        let total: f64 = weights.iter().sum();
        let mut gradient = vec![0.0; g.len()];
        let mut time_derivative = 0.0;
        for (term, w) in active.iter().zip(&weights) {
            let w = w / total;
            for (acc, d) in gradient.iter_mut().zip(term.atom.gradient(g)) {
                *acc += w * d;
            }
            time_derivative += w * term.gamma_rate(t);
        }
        Some(BarrierEval {
            value: m - total.ln() / self.smoothing,
            gradient,
            time_derivative,
        })
    }

    pub fn value(&self, g: &[f64], t: f64) -> f64 {
        self.evaluate(g, t).map_or(f64::INFINITY, |e| e.value)
    }

    pub fn spatial_gradient(&self, g: &[f64], t: f64) -> Vec<f64> {
        self.evaluate(g, t).map_or_else(|| vec![0.0; g.len()], |e| e.gradient)
    }

    pub fn time_derivative(&self, g: &[f64], t: f64) -> f64 {
        self.evaluate(g, t).map_or(0.0, |e| e.time_derivative)
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }
}

/// Compiles `formula` into a barrier that is positive at `(g0, 0)`.
pub fn compile_barrier(
    formula: &Formula,
    g0: &[f64],
    options: &BarrierOptions,
) -> Result<TimeVaryingBarrier> {
    options.validate()?;
    for atom in formula.atoms() {
        let dim = match &atom.predicate {
            super::Predicate::Reach { center_m, .. } | super::Predicate::Stay { center_m, .. } => {
                center_m.len()
            }
            super::Predicate::Halfspace { normal, .. } => normal.len(),
        };
        if dim != g0.len() {
            return Err(Error::Dimension(format!(
                "region `{}` has dimension {dim}, governor has {}",
                atom.name,
                g0.len()
            )));
        }
    }

    let mut terms = Vec::new();
    for conjunct in formula.conjuncts() {
        let label = conjunct.to_string();
        match conjunct {
            Formula::True => {}
            Formula::Atom(a) => terms.push(initial_term(label, a)),
            Formula::Eventually { interval, child } => {
                let t_star = options.t_star.pick(*interval);
                for a in child.atoms() {
                    terms.push(eventually_term(
                        label.clone(),
                        a,
                        g0,
                        interval.a,
                        t_star,
                        interval.b,
                        options,
                    )?);
                }
            }
            Formula::Always { interval, child } => {
                for a in child.atoms() {
                    terms.push(always_term(label.clone(), a, g0, interval.a, interval.b, options));
                }
            }
            Formula::Until {
                interval,
                left,
                right,
            } => {
                let t_star = options.t_star.pick(*interval);
                for a in right.atoms() {
                    terms.push(eventually_term(label.clone(), a, g0, 0.0, t_star, t_star, options)?);
                }
                for a in left.atoms() {
                    terms.push(always_term(label.clone(), a, g0, 0.0, t_star, options));
                }
            }
            Formula::And(_) => {
                // A flattened conjunction only nests as a state formula.
                for a in conjunct.atoms() {
                    terms.push(initial_term(label.clone(), a));
                }
            }
        }
    }

    for term in terms.iter().filter(|x| x.is_active(0.0)) {
        let v = term.value(g0, 0.0);
        if !(v > 0.0) {
            return Err(Error::InitialInfeasibility {
                formula: term.label.clone(),
                value: v,
            });
        }
    }
    let barrier = TimeVaryingBarrier {
        terms,
        smoothing: options.smoothing,
        dimension: g0.len(),
    };
    if let Some(e) = barrier.evaluate(g0, 0.0) {
        if !(e.value > 0.0) {
            return Err(Error::InitialInfeasibility {
                formula: formula.to_string(),
                value: e.value,
            });
        }
    }
    Ok(barrier)
}

fn initial_term(label: String, a: &Atom) -> BarrierTerm {
    BarrierTerm {
        label,
        kind: TermKind::Initial,
        atom: a.clone(),
        depth: 0.0,
        gamma0: 0.0,
        ramp_start: 0.0,
        t_star: 0.0,
        window: (0.0, 0.0),
    }
}

fn start_value(a: &Atom, options: &BarrierOptions) -> f64 {
    options
        .initial_margin
        .unwrap_or_else(|| a.ceiling().unwrap_or(1.0))
}

/// Reach by `t_star` and remain until `hold_until`. The ramp starts at the
/// window opening when that leaves time for it.
fn eventually_term(
    label: String,
    a: &Atom,
    g0: &[f64],
    opens: f64,
    t_star: f64,
    hold_until: f64,
    options: &BarrierOptions,
) -> Result<BarrierTerm> {
    let depth = options.reach_depth_m;
    if let Some(ceiling) = a.ceiling() {
        if depth >= ceiling {
            return Err(Error::Config(format!(
                "reach depth {depth} m is not below the radius {ceiling} m of `{}`",
                a.name
            )));
        }
    }
    let gamma0 = (start_value(a, options) + depth - a.eval(g0)).max(0.0);
    Ok(BarrierTerm {
        label,
        kind: TermKind::Eventually,
        atom: a.clone(),
        depth,
        gamma0,
        ramp_start: if opens < t_star { opens } else { 0.0 },
        t_star,
        window: (0.0, hold_until.max(t_star)),
    })
}

fn always_term(
    label: String,
    a: &Atom,
    g0: &[f64],
    start: f64,
    end: f64,
    options: &BarrierOptions,
) -> BarrierTerm {
    let gamma0 = if start > 0.0 {
        (start_value(a, options) - a.eval(g0)).max(0.0)
    } else {
        0.0
    };
    BarrierTerm {
        label,
        kind: TermKind::Always,
        atom: a.clone(),
        depth: 0.0,
        gamma0,
        ramp_start: 0.0,
        t_star: start,
        window: (0.0, end),
    }
}
