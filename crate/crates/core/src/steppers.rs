//! Single-step pure-state updates.
//!
//! Every stepper uses the linear (unnormalized) increment followed by
//! renormalization, with the Milstein correction `(c²/2)(ΔW² − Δt)X²ψ` for the
//! stochastic term `c·X·ψ·ΔW`.

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::hilbert::{Operator, SparseRows, StateVector, I, ZERO};
use crate::noise::WienerIncrement;

/// Squared norms below this are treated as annihilation (norm < 1e-14).
pub const MIN_NORM_SQR: f64 = 1e-28;

/// Lindblad channel `(L, γ)` entering as `−γ(L†Lρ + ρL†L − 2LρL†)`.
#[derive(Debug, Clone, PartialEq)]
pub struct DecoherenceChannel {
    op: Operator,
    adjoint: Operator,
    rate: f64,
    op_rows: SparseRows,
    adjoint_rows: SparseRows,
}

impl DecoherenceChannel {
    pub fn new(op: Operator, rate: f64) -> Result<Self> {
        check_rate("decoherence rate", rate)?;
        let adjoint = op.adjoint();
        let (op_rows, adjoint_rows) = (SparseRows::new(&op), SparseRows::new(&adjoint));
        Ok(Self { op, adjoint, rate, op_rows, adjoint_rows })
    }

    pub fn op(&self) -> &Operator {
        &self.op
    }

    pub fn adjoint(&self) -> &Operator {
        &self.adjoint
    }

    pub fn rate(&self) -> f64 {
        self.rate
    }
}

/// Continuous measurement of `M` with strength `k`.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasurementChannel {
    op: Operator,
    adjoint: Operator,
    strength: f64,
    op_rows: SparseRows,
    adjoint_rows: SparseRows,
}

impl MeasurementChannel {
    pub fn new(op: Operator, strength: f64) -> Result<Self> {
        check_rate("measurement strength", strength)?;
        let adjoint = op.adjoint();
        let (op_rows, adjoint_rows) = (SparseRows::new(&op), SparseRows::new(&adjoint));
        Ok(Self { op, adjoint, strength, op_rows, adjoint_rows })
    }

    pub fn op(&self) -> &Operator {
        &self.op
    }

    pub fn adjoint(&self) -> &Operator {
        &self.adjoint
    }

    pub fn strength(&self) -> f64 {
        self.strength
    }

    pub(crate) fn op_rows(&self) -> &SparseRows {
        &self.op_rows
    }
}

/// White-noise force along Hermitian `X` with strength `β`.
#[derive(Debug, Clone, PartialEq)]
pub struct HamiltonianNoiseChannel {
    op: Operator,
    strength: f64,
    op_rows: SparseRows,
}

impl HamiltonianNoiseChannel {
    pub fn new(op: Operator, strength: f64) -> Result<Self> {
        check_rate("force-noise strength", strength)?;
        let defect = op.hermiticity_defect();
        if defect > 1e-12 {
            return Err(Error::NotHermitian(defect));
        }
        let op_rows = SparseRows::new(&op);
        Ok(Self { op, strength, op_rows })
    }

    pub fn op(&self) -> &Operator {
        &self.op
    }

    pub fn strength(&self) -> f64 {
        self.strength
    }
}

fn check_rate(what: &str, rate: f64) -> Result<()> {
    if !(rate >= 0.0 && rate.is_finite()) {
        return Err(Error::Config(format!("{what} must be finite and non-negative, got {rate}")));
    }
    Ok(())
}

/// One measurement outcome `α`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeasurementRecord(pub f64);

/// Reusable buffers for the in-place kernels.
#[derive(Debug, Clone)]
pub struct Scratch {
    u: Vec<Complex64>,
    v: Vec<Complex64>,
    w: Vec<Complex64>,
}

impl Scratch {
    pub fn new(dim: usize) -> Self {
        Self { u: vec![ZERO; dim], v: vec![ZERO; dim], w: vec![ZERO; dim] }
    }
}

fn norm_sqr(psi: &[Complex64]) -> f64 {
    psi.iter().map(|a| a.norm_sqr()).sum()
}

/// Normalizes in place and returns the prior squared norm.
pub(crate) fn normalize_in_place(psi: &mut [Complex64]) -> Result<f64> {
    let n2 = norm_sqr(psi);
    if n2 <= MIN_NORM_SQR || !n2.is_finite() {
        return Err(Error::VanishingNorm(n2));
    }
    let inv = 1.0 / n2.sqrt();
    for a in psi.iter_mut() {
        *a *= inv;
    }
    Ok(n2)
}

fn check_dims(op: &Operator, psi: &StateVector) -> Result<()> {
    if op.dim() != psi.dim() {
        return Err(Error::DimensionMismatch { expected: op.dim(), found: psi.dim() });
    }
    Ok(())
}

/// Unnormalized SSE increment for one decoherence channel, in place.
pub(crate) fn decoherence_kernel(
    psi: &mut [Complex64],
    ch: &DecoherenceChannel,
    dv: f64,
    dt: f64,
    s: &mut Scratch,
) {
    let gamma = ch.rate;
    if gamma == 0.0 {
        return;
    }
    ch.op_rows.apply_into(psi, &mut s.u);
    ch.adjoint_rows.apply_into(&s.u, &mut s.v);
    ch.op_rows.apply_into(&s.u, &mut s.w);
    // ⟨L + L†⟩ = 2 Re ⟨ψ|L|ψ⟩
    let lexp: Complex64 = psi.iter().zip(&s.u).map(|(p, u)| p.conj() * u).sum();
    let ex = 2.0 * lexp.re;
    let drift = gamma * dt;
    let noise = (2.0 * gamma).sqrt() * dv;
    let mil = gamma * (dv * dv - dt);
    for n in 0..psi.len() {
        psi[n] += -(s.v[n] - s.u[n] * (2.0 * ex)) * drift + s.u[n] * noise + s.w[n] * mil;
    }
}

/// Second-order expansion of `exp(i·sqrt(β)·X·ΔV)`, in place.
pub(crate) fn hamiltonian_noise_kernel(
    psi: &mut [Complex64],
    ch: &HamiltonianNoiseChannel,
    dv: f64,
    s: &mut Scratch,
) {
    let beta = ch.strength;
    if beta == 0.0 {
        return;
    }
    ch.op_rows.apply_into(psi, &mut s.u);
    ch.op_rows.apply_into(&s.u, &mut s.w);
    let first = I * (beta.sqrt() * dv);
    let second = -0.5 * beta * dv * dv;
    for n in 0..psi.len() {
        psi[n] += s.u[n] * first + s.w[n] * second;
    }
}

/// `ψ ← A(α)ψ`, in place.
pub(crate) fn measurement_kernel(
    psi: &mut [Complex64],
    ch: &MeasurementChannel,
    ens_exp: f64,
    dw: f64,
    dt: f64,
    s: &mut Scratch,
) {
    let k = ch.strength;
    if k == 0.0 {
        return;
    }
    ch.op_rows.apply_into(psi, &mut s.u);
    ch.adjoint_rows.apply_into(&s.u, &mut s.v);
    ch.op_rows.apply_into(&s.u, &mut s.w);
    let drift = k * dt;
    let noise = (2.0 * k).sqrt() * dw;
    let mil = k * (dw * dw - dt);
    for n in 0..psi.len() {
        psi[n] += -(s.v[n] - s.u[n] * (2.0 * ens_exp)) * drift + s.u[n] * noise + s.w[n] * mil;
    }
}

/// First-order Hamiltonian increment `ψ ← ψ − iHψΔt`, in place.
pub(crate) fn hamiltonian_kernel(psi: &mut [Complex64], h: &SparseRows, dt: f64, s: &mut Scratch) {
    h.apply_into(psi, &mut s.u);
    let c = -I * dt;
    for n in 0..psi.len() {
        psi[n] += s.u[n] * c;
    }
}

/// Milstein correction `(c²/2)(ΔW² − Δt)X²ψ` for the stochastic term `c·X·ψ·ΔW`.
pub fn milstein_term(
    x: &Operator,
    coeff: Complex64,
    dw: WienerIncrement,
    dt: f64,
    psi: &StateVector,
) -> Result<StateVector> {
    check_dims(x, psi)?;
    let x2 = x.apply(&x.apply(psi)?)?;
    Ok(x2.scaled(coeff * coeff * 0.5 * (dw.0 * dw.0 - dt)))
}

/// Returns the normalized state and the input's squared norm.
pub fn normalize_state(psi: &StateVector) -> Result<(StateVector, f64)> {
    let mut out = psi.clone();
    let n2 = normalize_in_place(out.amplitudes_mut())?;
    Ok((out, n2))
}

/// SSE step for one decoherence channel, then renormalization.
pub fn decoherence_step(
    psi: &StateVector,
    ch: &DecoherenceChannel,
    dv: WienerIncrement,
    dt: f64,
) -> Result<StateVector> {
    check_dims(&ch.op, psi)?;
    let mut out = psi.clone();
    if ch.rate == 0.0 {
        return Ok(out);
    }
    let mut s = Scratch::new(psi.dim());
    decoherence_kernel(out.amplitudes_mut(), ch, dv.0, dt, &mut s);
    normalize_in_place(out.amplitudes_mut())?;
    Ok(out)
}

/// White-noise-force step, then renormalization.
pub fn hamiltonian_noise_step(
    psi: &StateVector,
    ch: &HamiltonianNoiseChannel,
    dv: WienerIncrement,
    _dt: f64,
) -> Result<StateVector> {
    check_dims(&ch.op, psi)?;
    let mut out = psi.clone();
    if ch.strength == 0.0 {
        return Ok(out);
    }
    let mut s = Scratch::new(psi.dim());
    hamiltonian_noise_kernel(out.amplitudes_mut(), ch, dv.0, &mut s);
    normalize_in_place(out.amplitudes_mut())?;
    Ok(out)
}

/// `A(α)ψ`, left unnormalized; its squared norm drives the weight update.
///
/// `ens_exp` is the ensemble-wide `⟨M + M†⟩` on the pre-step ensemble.
pub fn measurement_step_state(
    psi: &StateVector,
    ch: &MeasurementChannel,
    ens_exp: f64,
    dw: WienerIncrement,
    dt: f64,
) -> Result<StateVector> {
    check_dims(&ch.op, psi)?;
    let mut out = psi.clone();
    let mut s = Scratch::new(psi.dim());
    measurement_kernel(out.amplitudes_mut(), ch, ens_exp, dw.0, dt, &mut s);
    Ok(out)
}

/// `α = 2k⟨M + M†⟩Δt + sqrt(2k)ΔW`.
pub fn measurement_record(
    ch: &MeasurementChannel,
    ens_exp: f64,
    dw: WienerIncrement,
    dt: f64,
) -> MeasurementRecord {
    let k = ch.strength;
    MeasurementRecord(2.0 * k * ens_exp * dt + (2.0 * k).sqrt() * dw.0)
}

/// `ψ ← normalize(ψ − iHψΔt)`.
pub fn hamiltonian_step(psi: &StateVector, h: &Operator, dt: f64) -> Result<StateVector> {
    check_dims(h, psi)?;
    let mut out = psi.clone();
    let mut s = Scratch::new(psi.dim());
    hamiltonian_kernel(out.amplitudes_mut(), &SparseRows::new(h), dt, &mut s);
    normalize_in_place(out.amplitudes_mut())?;
    Ok(out)
}

/// Strong error of the linear update `y ← y + ayΔt + byΔW [+ (b²/2)(ΔW² − Δt)y]`
/// on the scalar equation `dY = aY dt + bY dW`, whose solution is
/// `exp((a − b²/2)T + bW(T))`.
///
/// Returns `(Δt, E|y_N − Y(T)|)` for `Δt = T/2^m`, one entry per level, with
/// every level driven by the same Brownian paths through path-consistent
/// coarsening.
pub fn scalar_strong_errors(
    a: f64,
    b: f64,
    t_final: f64,
    levels: &[u32],
    n_paths: usize,
    seed: u64,
    with_milstein: bool,
) -> Result<Vec<(f64, f64)>> {
    let finest = *levels.iter().max().ok_or_else(|| Error::Config("no refinement levels".into()))?;
    let finest_dt = t_final / (1u64 << finest) as f64;
    let noise = crate::noise::NoiseStreams::new(seed, finest_dt, 0, n_paths, 1)?;
    let x = Operator::from_real_rows(&[vec![b]])?;
    let mut out = Vec::with_capacity(levels.len());
    for &m in levels {
        let n_steps = 1u64 << m;
        let dt = t_final / n_steps as f64;
        let mut total = 0.0;
        for path in 0..n_paths {
            let id = crate::noise::StreamId::Decoherence { member: path, channel: 0 };
            let mut y = StateVector::from_real(&[1.0])?;
            let mut w = 0.0;
            for step in 0..n_steps {
                let dw = noise.gaussian_increment(id, step, dt)?;
                w += dw.0;
                let mut next = y.add(&y.scaled(Complex64::new(a * dt, 0.0)))?;
                next = next.add(&x.apply(&y)?.scaled(Complex64::new(dw.0, 0.0)))?;
                if with_milstein {
                    next = next.add(&milstein_term(&x, Complex64::new(1.0, 0.0), dw, dt, &y)?)?;
                }
                y = next;
            }
            let exact = ((a - 0.5 * b * b) * t_final + b * w).exp();
            total += (y.amplitudes()[0].re - exact).abs();
        }
        out.push((dt, total / n_paths as f64));
    }
    Ok(out)
}

/// Least-squares slope of `log₂ error` against `log₂ Δt`.
pub fn log2_slope(errors: &[(f64, f64)]) -> f64 {
    let pts: Vec<(f64, f64)> = errors.iter().map(|&(h, e)| (h.log2(), e.log2())).collect();
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    sxy / sxx
}
