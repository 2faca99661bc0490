//! Model presets. Times are in units of the oscillator period `T = 1/f`,
//! rates in units of `f`, so the angular frequency of the oscillator is `2π`.

use std::f64::consts::TAU;

use num_complex::Complex64;

use crate::engine::ModelSpec;
use crate::error::{Error, Result};
use crate::hilbert::{build_annihilation, build_number, build_position, Operator, StateVector};
use crate::steppers::{DecoherenceChannel, HamiltonianNoiseChannel, MeasurementChannel};

pub const OSCILLATOR: &str = "oscillator-energy-measurement";
pub const QUBIT_DECAY: &str = "qubit-decay";

/// Names accepted by the CLI, with a one-line description each.
pub const PRESETS: &[(&str, &str)] = &[
    (OSCILLATOR, "harmonic oscillator, continuous phonon-number measurement, white-noise force"),
    (QUBIT_DECAY, "two-level system decaying through the lowering operator, no measurement"),
];

/// Angular frequency of an oscillator with unit frequency `f`.
pub const UNIT_OMEGA: f64 = TAU;

/// `H = ωN`, force noise `(x, β)`, measurement `(N, k)`, start in `|n0⟩`.
pub fn preset_oscillator(
    dim: usize,
    omega: f64,
    k: f64,
    beta: f64,
    n0: usize,
) -> Result<(ModelSpec, StateVector)> {
    if dim == 0 {
        return Err(Error::InvalidDimension(dim));
    }
    if n0 >= dim {
        return Err(Error::Config(format!("initial Fock index {n0} must be below dimension {dim}")));
    }
    let n = build_number(dim)?;
    let x = build_position(dim)?;
    let model = ModelSpec::builder(n.scale(Complex64::new(omega, 0.0)))
        .ham_noise(HamiltonianNoiseChannel::new(x.clone(), beta)?)
        .measurement(MeasurementChannel::new(n.clone(), k)?)
        .observable("N", n)
        .observable("x", x)
        .build()?;
    Ok((model, StateVector::basis(dim, n0)?))
}

/// `D = 2`, `H = 0`, `L = [[0,1],[0,0]]`, start in the excited state `|1⟩`.
pub fn preset_qubit_decay(gamma: f64) -> Result<(ModelSpec, StateVector)> {
    let lower = build_annihilation(2)?;
    let model = ModelSpec::builder(Operator::zeros(2)?)
        .decoherence(DecoherenceChannel::new(lower, gamma)?)
        .observable("P_excited", build_number(2)?)
        .observable("sigma_x", crate::hilbert::build_position(2)?)
        .build()?;
    Ok((model, StateVector::basis(2, 1)?))
}
