//! Circular (2-D) or spherical (3-D) obstacles inside an optional
//! containment arena, with signed distance queries.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::norm;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Ball {
    pub center_m: Vec<f64>,
    pub radius_m: f64,
}

impl Ball {
    pub fn new(center: impl Into<Vec<f64>>, radius: f64) -> Self {
        Self {
            center_m: center.into(),
            radius_m: radius,
        }
    }
}

/// Which term of the distance minimum is active.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SafetyTermKind {
    Obstacle(usize),
    Arena,
}

/// One barrier term `b(g)` with its gradient, used as a QP row.
#[derive(Debug, Clone, PartialEq)]
pub struct SafetyTerm {
    pub kind: SafetyTermKind,
    pub value: f64,
    pub gradient: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Environment {
    pub dimension: usize,
    #[serde(default)]
    pub obstacles: Vec<Ball>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub arena: Option<Ball>,
}

impl Environment {
    pub fn new(dimension: usize, obstacles: Vec<Ball>, arena: Option<Ball>) -> Result<Self> {
        let env = Self {
            dimension,
            obstacles,
            arena,
        };
        env.validate()?;
        Ok(env)
    }

    pub fn empty(dimension: usize) -> Self {
        Self {
            dimension,
            obstacles: Vec::new(),
            arena: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dimension == 2 || self.dimension == 3) {
            return Err(Error::Config(format!(
                "environment.dimension must be 2 or 3, got {}",
                self.dimension
            )));
        }
        let balls = self
            .obstacles
            .iter()
            .enumerate()
            .map(|(i, b)| (format!("environment.obstacles[{i}]"), b))
            .chain(self.arena.iter().map(|b| ("environment.arena".to_string(), b)));
        for (field, ball) in balls {
            if ball.center_m.len() != self.dimension {
                return Err(Error::Config(format!(
                    "{field}.center_m has {} coordinates, expected {}",
                    ball.center_m.len(),
                    self.dimension
                )));
            }
            if !(ball.radius_m > 0.0) || !ball.radius_m.is_finite() {
                return Err(Error::Config(format!(
                    "{field}.radius_m must be positive, got {}",
                    ball.radius_m
                )));
            }
        }
        if let Some(arena) = &self.arena {
            for (i, ob) in self.obstacles.iter().enumerate() {
                if dist(&ob.center_m, &arena.center_m) >= arena.radius_m {
                    return Err(Error::Config(format!(
                        "environment.obstacles[{i}] center lies outside the arena"
                    )));
                }
            }
        }
        Ok(())
    }

    /// Every term of the distance minimum: one per obstacle, then the arena.
    pub fn terms(&self, g: &[f64]) -> Result<Vec<SafetyTerm>> {
        let mut out = Vec::with_capacity(self.obstacles.len() + 1);
        for (i, ob) in self.obstacles.iter().enumerate() {
            let diff: Vec<f64> = g.iter().zip(&ob.center_m).map(|(a, b)| a - b).collect();
            let n = norm(&diff);
            if n == 0.0 {
                return Err(Error::DegenerateGradient(format!("center of obstacle {i}")));
            }
            out.push(SafetyTerm {
                kind: SafetyTermKind::Obstacle(i),
                value: n - ob.radius_m,
                gradient: diff.iter().map(|d| d / n).collect(),
            });
        }
        if let Some(arena) = &self.arena {
            let diff: Vec<f64> = g.iter().zip(&arena.center_m).map(|(a, b)| a - b).collect();
            let n = norm(&diff);
            // The arena term peaks at its center; zero is a valid supergradient there.
            let gradient = if n == 0.0 {
                vec![0.0; g.len()]
            } else {
                diff.iter().map(|d| -d / n).collect()
            };
            out.push(SafetyTerm {
                kind: SafetyTermKind::Arena,
                value: arena.radius_m - n,
                gradient,
            });
        }
        Ok(out)
    }

    /// Signed distance `d_s(g, O)` to the unsafe set; `+∞` for an empty world.
    pub fn distance_to_unsafe(&self, g: &[f64]) -> f64 {
        let obstacle = self
            .obstacles
            .iter()
            .map(|ob| dist(g, &ob.center_m) - ob.radius_m)
            .fold(f64::INFINITY, f64::min);
        let arena = self
            .arena
            .as_ref()
            .map_or(f64::INFINITY, |a| a.radius_m - dist(g, &a.center_m));
        obstacle.min(arena)
    }

    /// Gradient of the active minimum term (lowest obstacle index on ties,
    /// obstacles before the arena).
    pub fn unsafe_gradient(&self, g: &[f64]) -> Result<Vec<f64>> {
        let mut best: Option<(f64, Vec<f64>)> = None;
        for (i, ob) in self.obstacles.iter().enumerate() {
            let d = dist(g, &ob.center_m) - ob.radius_m;
            if best.as_ref().is_none_or(|(v, _)| d < *v) {
                let diff: Vec<f64> = g.iter().zip(&ob.center_m).map(|(a, b)| a - b).collect();
                let n = norm(&diff);
                if n == 0.0 {
                    return Err(Error::DegenerateGradient(format!("center of obstacle {i}")));
                }
                best = Some((d, diff.iter().map(|x| x / n).collect()));
            }
        }
        if let Some(arena) = &self.arena {
            let d = arena.radius_m - dist(g, &arena.center_m);
            if best.as_ref().is_none_or(|(v, _)| d < *v) {
                let diff: Vec<f64> = g.iter().zip(&arena.center_m).map(|(a, b)| a - b).collect();
                let n = norm(&diff);
                let grad = if n == 0.0 {
                    vec![0.0; g.len()]
                } else {
                    diff.iter().map(|x| -x / n).collect()
                };
                best = Some((d, grad));
            }
        }
        Ok(best.map_or_else(|| vec![0.0; g.len()], |(_, grad)| grad))
    }

    /// Grows every obstacle and shrinks the arena by `margin`.
    pub fn inflate(&self, margin: f64) -> Result<Environment> {
        if !(margin >= 0.0) {
            return Err(Error::Config(format!("inflation margin must be >= 0, got {margin}")));
        }
        let obstacles = self
            .obstacles
            .iter()
            .map(|b| Ball::new(b.center_m.clone(), b.radius_m + margin))
            .collect();
        let arena = match &self.arena {
            Some(a) if a.radius_m - margin <= 0.0 => {
                return Err(Error::Config(format!(
                    "inflation margin {margin} collapses the arena of radius {}",
                    a.radius_m
                )))
            }
            Some(a) => Some(Ball::new(a.center_m.clone(), a.radius_m - margin)),
            None => None,
        };
        Ok(Environment {
            dimension: self.dimension,
            obstacles,
            arena,
        })
    }
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}
