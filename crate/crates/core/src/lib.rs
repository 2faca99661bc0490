//! Weighted-ensemble wave-function Monte Carlo for open quantum systems under
//! continuous measurement, with a density-matrix reference integrator.
//!
//! Each ensemble member evolves under its own decoherence and force noise,
//! while all members share the measurement record. The measurement enters
//! through member weights, and low-weight members are periodically replaced
//! by splitting heavy ones.

pub mod cli_io;
pub mod engine;
pub mod ensemble;
pub mod error;
pub mod hilbert;
pub mod models;
pub mod noise;
pub mod reference;
pub mod steppers;

pub use engine::{
    compare_shared_noise, estimate_error, run, run_with_workers, Mode, ModelSpec, SimulationConfig,
    TrajectoryRecord,
};
pub use ensemble::{effective_size, WeightedEnsemble};
pub use error::{Error, Result};
pub use hilbert::{trace_distance, DensityMatrix, Operator, StateVector};
