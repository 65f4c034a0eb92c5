use thiserror::Error;

use crate::plant::Muscle;

/// Errors shared across the model, plant, estimator, controller and set
/// computation modules.
#[derive(Debug, Error)]
pub enum Error {
    #[error("joint angle {0} rad is outside the geometric range (|psi| < pi/2)")]
    AngleOutOfRange(f64),

    #[error("nonpositive PAM length {0} m")]
    NonpositiveLength(f64),

    #[error("PAM volume {volume} m^3 is nonpositive at length {length} m")]
    NonpositiveVolume { length: f64, volume: f64 },

    #[error("pressure {pressure} Pa on muscle {side} is at or below atmospheric ({p_out} Pa)")]
    PressureSingularity {
        side: Muscle,
        pressure: f64,
        p_out: f64,
    },

    #[error("orifice pressure ordering violated: upstream {upstream} Pa < downstream {downstream} Pa")]
    PressureOrdering { upstream: f64, downstream: f64 },

    #[error("reference generator singular: cos(psi) vanishes at psi = {0} rad")]
    GeneratorSingular(f64),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("no steady-state solution for P1 = {p1} Pa, P2 = {p2} Pa on the {branch} branch")]
    NoEquilibrium {
        p1: f64,
        p2: f64,
        branch: &'static str,
    },

    #[error("admissible set is empty: branch regions do not intersect")]
    EmptySet,

    #[error("plant invariant violated in subsystem {mode}: {detail}")]
    PlantInvariant { mode: usize, detail: String },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("scenario aborted at tick {tick} (t = {t} s): {source}")]
    ScenarioAborted {
        tick: usize,
        t: f64,
        #[source]
        source: Box<Error>,
    },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
