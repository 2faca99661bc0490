//! Density-matrix integrators used as oracles for the ensemble method.
//!
//! Force-noise channels enter only through their averaged dissipator
//! `−(β/2)[X,[X,ρ]]`; the oracle never sees the per-member `dV` noise.

use num_complex::Complex64;

use crate::engine::ModelSpec;
use crate::error::{Error, Result};
use crate::hilbert::{DensityMatrix, Operator, I};

const MIN_TRACE: f64 = 1e-14;

fn c(re: f64) -> Complex64 {
    Complex64::new(re, 0.0)
}

/// Dense matrix helpers on row-major `D×D` buffers.
struct Mat<'a> {
    d: usize,
    e: &'a [Complex64],
}

fn mul(a: &[Complex64], b: &[Complex64], d: usize) -> Vec<Complex64> {
    let mut out = vec![Complex64::new(0.0, 0.0); d * d];
    for r in 0..d {
        for k in 0..d {
            let x = a[r * d + k];
            if x.re == 0.0 && x.im == 0.0 {
                continue;
            }
            let row = &b[k * d..(k + 1) * d];
            for (o, y) in out[r * d..(r + 1) * d].iter_mut().zip(row) {
                *o += x * y;
            }
        }
    }
    out
}

fn axpy(acc: &mut [Complex64], alpha: Complex64, x: &[Complex64]) {
    for (a, v) in acc.iter_mut().zip(x) {
        *a += alpha * v;
    }
}

/// `X + X†` of a row-major buffer.
fn plus_adjoint(x: &[Complex64], d: usize) -> Vec<Complex64> {
    let mut out = vec![Complex64::new(0.0, 0.0); d * d];
    for r in 0..d {
        for col in 0..d {
            out[r * d + col] = x[r * d + col] + x[col * d + r].conj();
        }
    }
    out
}

impl Mat<'_> {
    fn trace_with(&self, op: &[Complex64]) -> Complex64 {
        let d = self.d;
        let mut acc = Complex64::new(0.0, 0.0);
        for r in 0..d {
            for k in 0..d {
                acc += self.e[r * d + k] * op[k * d + r];
            }
        }
        acc
    }
}

struct Lindblad {
    rate: f64,
    op: Vec<Complex64>,
    adjoint: Vec<Complex64>,
    /// `L†L`
    dag_op: Vec<Complex64>,
}

struct Measured {
    strength: f64,
    op: Vec<Complex64>,
    adjoint: Vec<Complex64>,
    dag_op: Vec<Complex64>,
    /// `M²`
    square: Vec<Complex64>,
    /// `M + M†`
    sum: Vec<Complex64>,
}

/// Precomputed operator products for one model.
pub struct ReferenceIntegrator {
    d: usize,
    hamiltonian: Option<Vec<Complex64>>,
    dissipators: Vec<Lindblad>,
    measurements: Vec<Measured>,
}

fn lindblad(op: &Operator, rate: f64) -> Lindblad {
    let d = op.dim();
    let adjoint = op.adjoint();
    Lindblad {
        rate,
        dag_op: mul(adjoint.entries(), op.entries(), d),
        op: op.entries().to_vec(),
        adjoint: adjoint.entries().to_vec(),
    }
}

impl ReferenceIntegrator {
    pub fn new(model: &ModelSpec) -> Self {
        let d = model.dim();
        let h = model.hamiltonian();
        let hamiltonian = if h.entries().iter().all(|z| z.re == 0.0 && z.im == 0.0) {
            None
        } else {
            Some(h.entries().to_vec())
        };
        let mut dissipators: Vec<Lindblad> =
            model.decoherence().iter().map(|ch| lindblad(ch.op(), ch.rate())).collect();
        // −(β/2)[X,[X,ρ]] = −(β/2)(X²ρ + ρX² − 2XρX) is a Lindblad term with rate β/2.
        dissipators.extend(
            model.ham_noise().iter().map(|ch| lindblad(ch.op(), 0.5 * ch.strength())),
        );
        let measurements = model
            .measurements()
            .iter()
            .map(|ch| {
                let op = ch.op().entries().to_vec();
                let adjoint = ch.adjoint().entries().to_vec();
                Measured {
                    strength: ch.strength(),
                    dag_op: mul(&adjoint, &op, d),
                    square: mul(&op, &op, d),
                    sum: plus_adjoint(&op, d),
                    op,
                    adjoint,
                }
            })
            .collect();
        Self { d, hamiltonian, dissipators, measurements }
    }

    fn check(&self, rho: &DensityMatrix) -> Result<()> {
        if rho.dim() != self.d {
            return Err(Error::DimensionMismatch { expected: self.d, found: rho.dim() });
        }
        Ok(())
    }

    /// Hamiltonian and dissipator part of `dρ`. The SME steps also want the
    /// `−k[M,[M,ρ]]`-type measurement dissipators; the plain ME step does not.
    fn deterministic(&self, rho: &[Complex64], dt: f64, measurement_dephasing: bool) -> Vec<Complex64> {
        let d = self.d;
        let mut inc = vec![Complex64::new(0.0, 0.0); d * d];
        if let Some(h) = &self.hamiltonian {
            // −i[H, ρ]Δt
            axpy(&mut inc, -I * dt, &mul(h, rho, d));
            axpy(&mut inc, I * dt, &mul(rho, h, d));
        }
        for l in &self.dissipators {
            if l.rate == 0.0 {
                continue;
            }
            self.add_dissipator(&mut inc, rho, l.rate * dt, &l.op, &l.adjoint, &l.dag_op);
        }
        if measurement_dephasing {
            for m in &self.measurements {
                if m.strength == 0.0 {
                    continue;
                }
                self.add_dissipator(&mut inc, rho, m.strength * dt, &m.op, &m.adjoint, &m.dag_op);
            }
        }
        inc
    }

    /// `inc += −g(L†Lρ + ρL†L − 2LρL†)`
    fn add_dissipator(
        &self,
        inc: &mut [Complex64],
        rho: &[Complex64],
        g: f64,
        op: &[Complex64],
        adjoint: &[Complex64],
        dag_op: &[Complex64],
    ) {
        let d = self.d;
        axpy(inc, c(-g), &mul(dag_op, rho, d));
        axpy(inc, c(-g), &mul(rho, dag_op, d));
        axpy(inc, c(2.0 * g), &mul(&mul(op, rho, d), adjoint, d));
    }

    fn finish(&self, rho: &DensityMatrix, inc: Vec<Complex64>) -> Result<DensityMatrix> {
        let d = self.d;
        let mut next: Vec<Complex64> = rho.entries().iter().zip(&inc).map(|(a, b)| a + b).collect();
        let tr: f64 = (0..d).map(|n| next[n * d + n].re).sum();
        if tr <= MIN_TRACE || !tr.is_finite() {
            return Err(Error::VanishingTrace(tr));
        }
        // Symmetrize to remove round-off asymmetry, then fix the trace.
        for r in 0..d {
            for col in r..d {
                let a = next[r * d + col];
                let b = next[col * d + r];
                let avg = (a + b.conj()) * 0.5 / tr;
                next[r * d + col] = avg;
                next[col * d + r] = avg.conj();
            }
        }
        DensityMatrix::from_entries(d, next)
    }

    /// Unnormalized linear SME increment with Milstein correction, then trace
    /// normalization:
    ///
    /// `(Mρ + ρM†)(2k⟨M+M†⟩Δt + sqrt(2k)ΔW) + k(ΔW² − Δt)(M²ρ + ρM†² + 2MρM†)`
    /// plus `−k(M†Mρ + ρM†M − 2MρM†)Δt` per measurement channel.
    pub fn sme_step_direct(&self, rho: &DensityMatrix, dw: &[f64], dt: f64) -> Result<DensityMatrix> {
        self.direct_step(rho, dw, dt, 2.0)
    }

    /// Direct step with the coefficient of the `MρM†` Milstein term as a parameter.
    fn direct_step(&self, rho: &DensityMatrix, dw: &[f64], dt: f64, cross: f64) -> Result<DensityMatrix> {
        self.check(rho)?;
        self.check_noise(dw)?;
        let d = self.d;
        let r = rho.entries();
        let mut inc = self.deterministic(r, dt, true);
        for (m, &dw) in self.measurements.iter().zip(dw) {
            let k = m.strength;
            if k == 0.0 {
                continue;
            }
            let ex = Mat { d, e: r }.trace_with(&m.sum).re;
            let m_rho = mul(&m.op, r, d);
            let rho_mdag = mul(r, &m.adjoint, d);
            let lin = c(2.0 * k * ex * dt + (2.0 * k).sqrt() * dw);
            axpy(&mut inc, lin, &m_rho);
            axpy(&mut inc, lin, &rho_mdag);
            let mil = k * (dw * dw - dt);
            if mil != 0.0 {
                let sq_adj: Vec<Complex64> = {
                    // (M†)² = (M²)†
                    let mut t = vec![Complex64::new(0.0, 0.0); d * d];
                    for a in 0..d {
                        for b in 0..d {
                            t[a * d + b] = m.square[b * d + a].conj();
                        }
                    }
                    t
                };
                axpy(&mut inc, c(mil), &mul(&m.square, r, d));
                axpy(&mut inc, c(mil), &mul(r, &sq_adj, d));
                axpy(&mut inc, c(cross * mil), &mul(&m_rho, &m.adjoint, d));
            }
        }
        self.finish(rho, inc)
    }

    /// Euler step of the normalized SME:
    /// `+ sqrt(2k)(Mρ + ρM† − ⟨M + M†⟩ρ)ΔW` per measurement channel.
    pub fn sme_step_normalized_euler(
        &self,
        rho: &DensityMatrix,
        dw: &[f64],
        dt: f64,
    ) -> Result<DensityMatrix> {
        self.check(rho)?;
        self.check_noise(dw)?;
        let d = self.d;
        let r = rho.entries();
        let mut inc = self.deterministic(r, dt, true);
        for (m, &dw) in self.measurements.iter().zip(dw) {
            let k = m.strength;
            if k == 0.0 {
                continue;
            }
            let ex = Mat { d, e: r }.trace_with(&m.sum).re;
            let s = c((2.0 * k).sqrt() * dw);
            axpy(&mut inc, s, &mul(&m.op, r, d));
            axpy(&mut inc, s, &mul(r, &m.adjoint, d));
            axpy(&mut inc, -s * ex, r);
        }
        self.finish(rho, inc)
    }

    /// Plain Lindblad step: Hamiltonian, decoherence and averaged force
    /// channels. Measurement channels are ignored entirely.
    pub fn me_step(&self, rho: &DensityMatrix, dt: f64) -> Result<DensityMatrix> {
        self.check(rho)?;
        let inc = self.deterministic(rho.entries(), dt, false);
        self.finish(rho, inc)
    }

    fn check_noise(&self, dw: &[f64]) -> Result<()> {
        if dw.len() != self.measurements.len() {
            return Err(Error::DimensionMismatch {
                expected: self.measurements.len(),
                found: dw.len(),
            });
        }
        Ok(())
    }
}

pub fn sme_step_direct(
    rho: &DensityMatrix,
    model: &ModelSpec,
    dw: &[f64],
    dt: f64,
) -> Result<DensityMatrix> {
    ReferenceIntegrator::new(model).sme_step_direct(rho, dw, dt)
}

pub fn sme_step_normalized_euler(
    rho: &DensityMatrix,
    model: &ModelSpec,
    dw: &[f64],
    dt: f64,
) -> Result<DensityMatrix> {
    ReferenceIntegrator::new(model).sme_step_normalized_euler(rho, dw, dt)
}

pub fn me_step(rho: &DensityMatrix, model: &ModelSpec, dt: f64) -> Result<DensityMatrix> {
    ReferenceIntegrator::new(model).me_step(rho, dt)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::ModelSpec;
    use crate::hilbert::{build_annihilation, build_number, build_position, trace_distance, StateVector};
    use crate::steppers::{DecoherenceChannel, HamiltonianNoiseChannel, MeasurementChannel};

    fn diag(v: &[f64]) -> DensityMatrix {
        DensityMatrix::from_operator(Operator::from_diagonal(v).unwrap())
    }

    fn max_diff(a: &DensityMatrix, b: &DensityMatrix) -> f64 {
        a.entries().iter().zip(b.entries()).map(|(x, y)| (x - y).norm()).fold(0.0, f64::max)
    }

    fn random_density(d: usize, seed: u64) -> DensityMatrix {
        let mut st = seed;
        let mut next = || {
            st = st.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((st >> 11) as f64 / (1u64 << 53) as f64) - 0.5
        };
        let g: Vec<Complex64> = (0..d * d).map(|_| Complex64::new(next(), next())).collect();
        let g = Operator::from_entries(d, g).unwrap();
        let p = g.matmul(&g.adjoint()).unwrap();
        let tr = DensityMatrix::from_operator(p.clone()).trace().re;
        DensityMatrix::from_operator(p.scale(c(1.0 / tr)))
    }

    #[test]
    fn zero_model_is_stationary() {
        let n = build_number(3).unwrap();
        let model = ModelSpec::builder(Operator::zeros(3).unwrap())
            .decoherence(DecoherenceChannel::new(n.clone(), 0.0).unwrap())
            .measurement(MeasurementChannel::new(n, 0.0).unwrap())
            .build()
            .unwrap();
        let rho = random_density(3, 1);
        let a = sme_step_direct(&rho, &model, &[0.3], 0.01).unwrap();
        let b = sme_step_normalized_euler(&rho, &model, &[0.3], 0.01).unwrap();
        let e = me_step(&rho, &model, 0.01).unwrap();
        for out in [a, b, e] {
            assert!(max_diff(&out, &rho) < 1e-15);
        }
    }

    #[test]
    fn me_step_ignores_measurement_channels() {
        let model = ModelSpec::builder(Operator::zeros(3).unwrap())
            .measurement(MeasurementChannel::new(build_position(3).unwrap(), 0.5).unwrap())
            .build()
            .unwrap();
        let rho = random_density(3, 2);
        assert!(max_diff(&me_step(&rho, &model, 0.01).unwrap(), &rho) < 1e-15);
    }

    #[test]
    fn number_hamiltonian_leaves_diagonal_states() {
        let model = ModelSpec::builder(build_number(3).unwrap().scale(c(6.0))).build().unwrap();
        let rho = diag(&[0.2, 0.5, 0.3]);
        let out = sme_step_direct(&rho, &model, &[], 0.01).unwrap();
        assert!(max_diff(&out, &rho) < 1e-16);
    }

    #[test]
    fn direct_step_matches_hand_expansion() {
        // ρ = diag(½, ½), M = diag(0, 1), k = 0.1, Δt = 0.01, ΔW = 0.1.
        // ⟨M+M†⟩ = 1. Only the |1⟩⟨1| entry moves:
        //   −k(1+1−2)Δt + 2·½·(2k·1·Δt + sqrt(2k)ΔW) + k(ΔW²−Δt)·½·(1+1+2)
        let (k, dt, dw) = (0.1f64, 0.01f64, 0.1f64);
        let m = Operator::from_diagonal(&[0.0, 1.0]).unwrap();
        let model = ModelSpec::builder(Operator::zeros(2).unwrap())
            .measurement(MeasurementChannel::new(m, k).unwrap())
            .build()
            .unwrap();
        let rho = diag(&[0.5, 0.5]);
        let out = sme_step_direct(&rho, &model, &[dw], dt).unwrap();
        let p11 = 0.5 + (2.0 * k * dt + (2.0 * k).sqrt() * dw) + k * (dw * dw - dt) * 2.0;
        let p00 = 0.5;
        let tr = p00 + p11;
        let want = diag(&[p00 / tr, p11 / tr]);
        assert!(max_diff(&out, &want) < 1e-14);
    }

    #[test]
    fn eigenprojector_step_is_deterministic() {
        let n = build_number(4).unwrap();
        let model = ModelSpec::builder(Operator::zeros(4).unwrap())
            .measurement(MeasurementChannel::new(n, 0.3).unwrap())
            .build()
            .unwrap();
        let rho = DensityMatrix::pure(&StateVector::basis(4, 2).unwrap());
        let a = sme_step_normalized_euler(&rho, &model, &[0.4], 0.01).unwrap();
        let b = sme_step_normalized_euler(&rho, &model, &[-0.7], 0.01).unwrap();
        assert!(max_diff(&a, &b) < 1e-15);
    }

    #[test]
    fn maximally_mixed_is_stationary_under_hermitian_dissipators() {
        let model = ModelSpec::builder(Operator::zeros(4).unwrap())
            .decoherence(DecoherenceChannel::new(build_position(4).unwrap(), 0.8).unwrap())
            .ham_noise(HamiltonianNoiseChannel::new(build_number(4).unwrap(), 0.5).unwrap())
            .build()
            .unwrap();
        let rho = DensityMatrix::maximally_mixed(4).unwrap();
        let out = me_step(&rho, &model, 0.01).unwrap();
        assert!(max_diff(&out, &rho) < 1e-15);
    }

    #[test]
    fn me_qubit_decay_first_step() {
        let lower = Operator::from_real_rows(&[vec![0.0, 1.0], vec![0.0, 0.0]]).unwrap();
        let model = ModelSpec::builder(Operator::zeros(2).unwrap())
            .decoherence(DecoherenceChannel::new(lower, 1.0).unwrap())
            .build()
            .unwrap();
        let excited = DensityMatrix::pure(&StateVector::basis(2, 1).unwrap());
        let out = me_step(&excited, &model, 0.001).unwrap();
        assert!((out.get(1, 1).re - 0.998).abs() < 1e-15);
    }

    #[test]
    fn schemes_differ_at_first_order_in_one_step() {
        // With ΔW ∝ √Δt the Milstein correction k(ΔW² − Δt)(…) is O(Δt), so the
        // one-step gap between the two schemes shrinks linearly.
        let a = build_annihilation(4).unwrap();
        let model = ModelSpec::builder(build_number(4).unwrap())
            .decoherence(DecoherenceChannel::new(a.clone(), 0.2).unwrap())
            .measurement(MeasurementChannel::new(a.add(&a.adjoint()).unwrap(), 0.1).unwrap())
            .build()
            .unwrap();
        let rho = random_density(4, 7);
        let mut diffs = Vec::new();
        for dt in [1e-2, 1e-3, 1e-4] {
            let dw = 0.8 * f64::sqrt(dt);
            let x = sme_step_direct(&rho, &model, &[dw], dt).unwrap();
            let y = sme_step_normalized_euler(&rho, &model, &[dw], dt).unwrap();
            diffs.push(trace_distance(&x, &y).unwrap());
        }
        for w in diffs.windows(2) {
            let ratio = w[0] / w[1];
            assert!((7.0..14.0).contains(&ratio), "{diffs:?}");
        }
    }

    #[test]
    fn steps_preserve_density_invariants() {
        let a = build_annihilation(4).unwrap();
        let model = ModelSpec::builder(build_number(4).unwrap())
            .decoherence(DecoherenceChannel::new(a.clone(), 0.2).unwrap())
            .measurement(MeasurementChannel::new(build_number(4).unwrap(), 0.3).unwrap())
            .build()
            .unwrap();
        let rho = random_density(4, 3);
        for out in [
            sme_step_direct(&rho, &model, &[0.05], 1e-3).unwrap(),
            sme_step_normalized_euler(&rho, &model, &[0.05], 1e-3).unwrap(),
            me_step(&rho, &model, 1e-3).unwrap(),
        ] {
            assert_eq!(out.hermiticity_defect(), 0.0);
            assert!(out.validate().is_ok());
        }
    }

    #[test]
    fn noise_length_checked() {
        let model = ModelSpec::builder(Operator::zeros(2).unwrap()).build().unwrap();
        let rho = diag(&[1.0, 0.0]);
        assert!(sme_step_direct(&rho, &model, &[0.1], 0.01).is_err());
        assert!(me_step(&diag(&[1.0, 0.0, 0.0]), &model, 0.01).is_err());
    }

    /// Arbiter for the sign of the `2MρM†` Milstein term: on shared Brownian
    /// paths the direct scheme is compared with the normalized-Euler scheme run
    /// 256 times finer. With the `+` sign in use the gap closes at first order;
    /// flipping it leaves half-order convergence.
    #[test]
    fn milstein_cross_term_sign_tracks_fine_normalized_solution() {
        use crate::noise::{NoiseStreams, StreamId};
        let d = 4;
        let model = ModelSpec::builder(Operator::zeros(d).unwrap())
            .measurement(MeasurementChannel::new(build_number(d).unwrap(), 0.1).unwrap())
            .build()
            .unwrap();
        let integ = ReferenceIntegrator::new(&model);
        let fine_factor = 256u64;
        let mean_gap = |level: i32, cross: f64| {
            let coarse = 2f64.powi(-level);
            let fine = coarse / fine_factor as f64;
            let n_coarse = 1u64 << level;
            let mut total = 0.0;
            for seed in 0..4 {
                let noise = NoiseStreams::new(seed, fine, 1, 1, 0).unwrap();
                let id = StreamId::Measurement(0);
                let mut reference = random_density(d, 30 + seed);
                let mut coarse_rho = reference.clone();
                for step in 0..n_coarse {
                    for sub in 0..fine_factor {
                        let dw = noise.gaussian_increment(id, step * fine_factor + sub, fine).unwrap().0;
                        reference = integ.sme_step_normalized_euler(&reference, &[dw], fine).unwrap();
                    }
                    let dw = noise.gaussian_increment(id, step, coarse).unwrap().0;
                    coarse_rho = integ.direct_step(&coarse_rho, &[dw], coarse, cross).unwrap();
                    total += trace_distance(&coarse_rho, &reference).unwrap();
                }
            }
            total / (4 * n_coarse) as f64
        };
        let plus = [mean_gap(6, 2.0), mean_gap(8, 2.0)];
        let minus = [mean_gap(6, -2.0), mean_gap(8, -2.0)];
        for (p, f) in plus.iter().zip(&minus) {
            assert!(*p < 0.5 * f, "plus {plus:?}, minus {minus:?}");
        }
        // Four times smaller steps: first order predicts 4, half order 2.
        assert!(plus[0] / plus[1] > 2.8, "plus {plus:?}");
        assert!(minus[0] / minus[1] < 2.5, "minus {minus:?}");
    }

    /// Run side by side on the same Brownian path, the two SME schemes
    /// separate at half order: normalized Euler lacks the Milstein correction,
    /// so the gap does not shrink linearly in Δt.
    #[test]
    fn shared_path_schemes_converge_together_at_half_order() {
        use crate::noise::{NoiseStreams, StreamId};
        let d = 4;
        let a = build_annihilation(d).unwrap();
        let model = ModelSpec::builder(build_number(d).unwrap())
            .decoherence(DecoherenceChannel::new(a.clone(), 0.2).unwrap())
            .measurement(MeasurementChannel::new(a.add(&a.adjoint()).unwrap(), 0.1).unwrap())
            .build()
            .unwrap();
        let integ = ReferenceIntegrator::new(&model);
        let seeds = 32;
        let sup_gap = |level: i32| {
            let dt = 2f64.powi(-level);
            let mut total = 0.0;
            for seed in 0..seeds {
                let noise = NoiseStreams::new(seed, dt, 1, 1, 0).unwrap();
                let mut x = DensityMatrix::pure(&StateVector::basis(d, 2).unwrap());
                let mut y = x.clone();
                let mut sup: f64 = 0.0;
                for step in 0..(1u64 << level) {
                    let dw = noise.gaussian_increment(StreamId::Measurement(0), step, dt).unwrap().0;
                    x = integ.sme_step_direct(&x, &[dw], dt).unwrap();
                    y = integ.sme_step_normalized_euler(&y, &[dw], dt).unwrap();
                    sup = sup.max(trace_distance(&x, &y).unwrap());
                }
                total += sup;
            }
            total / seeds as f64
        };
        let gaps = [sup_gap(6), sup_gap(8), sup_gap(10)];
        for pair in gaps.windows(2) {
            // Four times smaller steps: half order predicts 2, first order 4.
            let ratio = pair[0] / pair[1];
            assert!((1.5..3.0).contains(&ratio), "gaps {gaps:?}");
        }
    }
}
