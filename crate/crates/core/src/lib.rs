pub mod error;
pub mod governor;
pub mod linalg;
pub mod plants;
pub mod qp;
pub mod scenario;
pub mod sim;
pub mod stl;
pub mod tuning;
pub mod world;

pub use error::{Error, Result};
pub use scenario::{PlantKind, ScenarioConfig};
pub use sim::{Metrics, Prepared, TrajectoryLog};
pub use stl::{Formula, Predicate};
pub use world::Environment;
