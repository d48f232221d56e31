//! Scenario files: TOML with unit-suffixed field names.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::governor::GovernorConfig;
use crate::plants::{AccFixture, DoubleIntegratorGains, HocbfConfig, QuadrotorParams};
use crate::stl::{parse_stl, BarrierOptions, Formula, Predicate};
use crate::world::Environment;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlantKind {
    DoubleIntegrator,
    Quadrotor,
    Acc,
}

impl PlantKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            PlantKind::DoubleIntegrator => "double_integrator",
            PlantKind::Quadrotor => "quadrotor",
            PlantKind::Acc => "acc",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct InitialConditions {
    pub position_m: Vec<f64>,
    /// Zero when omitted.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub velocity_mps: Vec<f64>,
    /// Defaults to the initial position.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub governor_m: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TuningConfig {
    pub iterations: usize,
    pub alpha: f64,
    /// Central-difference step for the gradient oracle.
    pub fd_step: f64,
}

impl Default for TuningConfig {
    fn default() -> Self {
        Self {
            iterations: 20,
            alpha: 1e-3,
            fd_step: 1e-4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub name: String,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub description: String,
    pub plant: PlantKind,
    #[serde(default = "default_rate")]
    pub rate_hz: f64,
    pub horizon_s: f64,
    #[serde(default)]
    pub seed: u64,
    /// Task formula; empty means `true`.
    #[serde(default)]
    pub stl: String,
    #[serde(default)]
    pub initial: InitialConditions,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gains: Option<DoubleIntegratorGains>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub quadrotor: Option<QuadrotorParams>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub acc: Option<AccFixture>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub environment: Option<Environment>,
    #[serde(default)]
    pub regions: BTreeMap<String, Predicate>,
    #[serde(default)]
    pub governor: GovernorConfig,
    #[serde(default)]
    pub barrier: BarrierOptions,
    #[serde(default)]
    pub hocbf: HocbfConfig,
    #[serde(default)]
    pub tuning: TuningConfig,
}

fn default_rate() -> f64 {
    100.0
}

/// Gains used when a double-integrator scenario omits `[gains]`.
pub const DEFAULT_GAINS: DoubleIntegratorGains = DoubleIntegratorGains { kp: -6.0, kd: -4.0 };

impl ScenarioConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: ScenarioConfig =
            toml::from_str(text).map_err(|e| Error::Config(e.to_string().trim_end().to_string()))?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn dt(&self) -> f64 {
        1.0 / self.rate_hz
    }

    pub fn steps(&self) -> usize {
        (self.horizon_s * self.rate_hz).round() as usize
    }

    pub fn dimension(&self) -> usize {
        match self.plant {
            PlantKind::Quadrotor => 3,
            PlantKind::Acc => 1,
            PlantKind::DoubleIntegrator => self.environment.as_ref().map_or(2, |e| e.dimension),
        }
    }

    pub fn di_gains(&self) -> DoubleIntegratorGains {
        self.gains.unwrap_or(DEFAULT_GAINS)
    }

    pub fn quad_params(&self) -> QuadrotorParams {
        self.quadrotor.clone().unwrap_or_default()
    }

    pub fn formula(&self) -> Result<Formula> {
        let text = if self.stl.trim().is_empty() { "true" } else { &self.stl };
        parse_stl(text, &self.regions).map_err(|e| Error::Config(format!("stl: {e}")))
    }

    pub fn initial_governor(&self) -> Vec<f64> {
        self.initial
            .governor_m
            .clone()
            .unwrap_or_else(|| self.initial.position_m.clone())
    }

    pub fn initial_velocity(&self) -> Vec<f64> {
        if self.initial.velocity_mps.is_empty() {
            vec![0.0; self.initial.position_m.len()]
        } else {
            self.initial.velocity_mps.clone()
        }
    }

    /// Structural checks that need no simulation.
    pub fn validate(&self) -> Result<()> {
        if !(self.rate_hz > 0.0 && self.rate_hz.is_finite()) {
            return Err(Error::Config(format!("rate_hz must be positive, got {}", self.rate_hz)));
        }
        if !(self.horizon_s > 0.0 && self.horizon_s.is_finite()) {
            return Err(Error::Config(format!(
                "horizon_s must be positive, got {}",
                self.horizon_s
            )));
        }
        if self.plant == PlantKind::Acc {
            return match &self.acc {
                Some(a) => a.validate(),
                None => Err(Error::Config("plant `acc` requires an [acc] section".into())),
            };
        }
        let dim = self.dimension();
        let env = self
            .environment
            .as_ref()
            .ok_or_else(|| Error::Config("[environment] is required".into()))?;
        env.validate()?;
        if env.dimension != dim {
            return Err(Error::Config(format!(
                "environment.dimension is {}, plant `{}` needs {dim}",
                env.dimension,
                self.plant.as_str()
            )));
        }
        if env.obstacles.is_empty() && env.arena.is_none() {
            return Err(Error::Config(
                "environment needs an arena or at least one obstacle to bound the governor".into(),
            ));
        }
        for (name, p) in &self.regions {
            p.validate(dim)
                .map_err(|e| Error::Config(format!("regions.{name}: {e}")))?;
        }
        self.formula()?;
        let check_len = |field: &str, v: &[f64]| {
            if v.len() == dim {
                Ok(())
            } else {
                Err(Error::Config(format!(
                    "initial.{field} has {} coordinates, expected {dim}",
                    v.len()
                )))
            }
        };
        check_len("position_m", &self.initial.position_m)?;
        check_len("velocity_mps", &self.initial_velocity())?;
        check_len("governor_m", &self.initial_governor())?;
        self.governor.validate(dim)?;
        self.barrier.validate()?;
        self.hocbf.validate()?;
        match self.plant {
            PlantKind::DoubleIntegrator => self.di_gains().check()?,
            PlantKind::Quadrotor => self.quad_params().validate()?,
            PlantKind::Acc => {}
        }
        if !(self.tuning.alpha >= 0.0 && self.tuning.fd_step > 0.0) {
            return Err(Error::Config(
                "tuning.alpha must be nonnegative and tuning.fd_step positive".into(),
            ));
        }
        Ok(())
    }
}
