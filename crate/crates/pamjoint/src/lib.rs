//! Digital twin of a one-degree-of-freedom antagonistic pneumatic
//! artificial muscle (PAM) joint with sensor-less simultaneous angle and
//! stiffness control.
//!
//! The crate models the joint statics (contraction force map, torque,
//! stiffness), the switched pneumatic/mechanical dynamics (proportional
//! directional valves, isentropic orifice flow, polytropic pressure
//! dynamics, Karnopp stick-slip friction), an unscented Kalman filter
//! that reconstructs angle and stiffness from the two muscle pressures
//! alone, the cascade PI controller with its force reference generator,
//! and the admissible angle/stiffness operating set derived from
//! steady-state analysis. [`harness`] ties everything together into
//! reproducible scenario runs with CSV traces.

pub mod config;
pub mod control;
pub mod error;
pub mod harness;
pub mod plant;
pub mod refset;
pub mod statics;
pub mod ukf;

pub use config::Config;
pub use control::{Controller, ControllerConfig, ReferenceCommand};
pub use error::{Error, Result};
pub use harness::{run_closed_loop, run_open_loop, ScenarioConfig, TraceRecord};
pub use plant::{ControlInput, Muscle, NoiseSpec, Plant, PlantConfig};
pub use refset::AdmissibleSet;
pub use statics::{ModelParameters, PlantState};
pub use ukf::{Ukf, UkfConfig};
