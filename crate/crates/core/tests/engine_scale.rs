//! Engine behaviour at moderate scale: statistical agreement with the
//! master equation, replicate error estimates and the record invariants.

use wfmc::engine::{compare_shared_noise, estimate_error, step_mc, Mode, ModelSpec, SimulationConfig};
use wfmc::hilbert::{build_annihilation, build_number, Operator};
use wfmc::models::{preset_oscillator, UNIT_OMEGA};
use wfmc::noise::{NoiseStreams, StreamId};
use wfmc::steppers::{decoherence_step, hamiltonian_noise_step, hamiltonian_step, DecoherenceChannel};
use wfmc::{StateVector, WeightedEnsemble};

fn oscillator(n_ens: usize, k: f64, periods: f64, seed: u64) -> SimulationConfig {
    let (model, psi) = preset_oscillator(10, UNIT_OMEGA, k, 0.1, 3).unwrap();
    let dt = 2e-4;
    let mut cfg = SimulationConfig::new(model, psi, dt, (periods / dt).round() as u64);
    cfg.n_ens = n_ens;
    cfg.p_thresh = 0.2 / n_ens as f64;
    cfg.seed = seed;
    cfg
}

/// Without measurement the SME is the master equation, so the remaining
/// divergence is the ensemble's sampling error.
#[test]
fn unmeasured_divergence_is_sampling_error() {
    let mut cfg = oscillator(256, 0.0, 2.0, 3);
    cfg.mode = Mode::Compare;
    let report = compare_shared_noise(&cfg).unwrap();
    let bound = 5.0 / (cfg.n_ens as f64).sqrt();
    assert!(report.base.divergence[0] <= bound, "{} > {bound}", report.base.divergence[0]);
    assert!(report.base.mc.rows.iter().all(|r| (r.n_eff - cfg.n_ens as f64).abs() < 1e-9));
}

#[test]
fn replicate_spread_shrinks_with_ensemble_size() {
    let small = estimate_error(&oscillator(64, 0.0, 1.0, 5), 2).unwrap();
    let large = estimate_error(&oscillator(256, 0.0, 1.0, 5), 2).unwrap();
    let ratio = small.error_estimate[0] / large.error_estimate[0];
    // 1/sqrt(n_ens) scaling predicts 2.
    assert!((1.3..3.5).contains(&ratio), "spread ratio {ratio}");
}

/// Ensemble average against the master equation for a lowering channel at D = 4.
#[test]
fn lowering_channel_ensemble_matches_master_equation() {
    let d = 4;
    let model = ModelSpec::builder(Operator::zeros(d).unwrap())
        .decoherence(DecoherenceChannel::new(build_annihilation(d).unwrap(), 0.2).unwrap())
        .observable("N", build_number(d).unwrap())
        .build()
        .unwrap();
    let mut cfg = SimulationConfig::new(model, StateVector::basis(d, 3).unwrap(), 1e-3, 2000);
    cfg.n_ens = 2048;
    cfg.p_thresh = 0.2 / 2048.0;
    cfg.seed = 8;
    cfg.mode = Mode::Compare;
    let report = compare_shared_noise(&cfg).unwrap();
    assert!(report.base.max_trace_distance <= 0.03, "{}", report.base.max_trace_distance);
}

#[test]
fn weights_and_norms_stay_normalized() {
    let cfg = oscillator(128, 0.1, 0.5, 2);
    let model = &cfg.model;
    let mut ens = WeightedEnsemble::replicated(&cfg.initial, cfg.n_ens).unwrap();
    let noise = NoiseStreams::new(cfg.seed, cfg.dt, 1, cfg.n_ens, model.n_dv_channels()).unwrap();
    for step in 0..cfg.n_steps {
        step_mc(&mut ens, model, &noise, step, cfg.dt, Some((cfg.regen_interval, cfg.p_thresh))).unwrap();
        if step % 50 == 0 {
            assert!((ens.weights().iter().sum::<f64>() - 1.0).abs() < 1e-12);
            assert!(ens.max_norm_defect() < 1e-12);
            assert!(ens.assemble_density().validate().is_ok());
        }
    }
}

/// With no measurement channel the engine is plain wave-function Monte Carlo:
/// an independent loop over members with equal weights gives bit-identical means.
#[test]
fn unmeasured_engine_matches_plain_trajectory_average() {
    let (model, psi) = preset_oscillator(6, UNIT_OMEGA, 0.0, 0.2, 2).unwrap();
    let lower = DecoherenceChannel::new(build_annihilation(6).unwrap(), 0.05).unwrap();
    let model = ModelSpec::builder(model.hamiltonian().clone())
        .decoherence(lower.clone())
        .ham_noise(model.ham_noise()[0].clone())
        .observable("N", build_number(6).unwrap())
        .build()
        .unwrap();
    let (n, dt, steps) = (32, 1e-3, 300);
    let noise = NoiseStreams::new(12, dt, 0, n, 2).unwrap();

    let mut ens = WeightedEnsemble::replicated(&psi, n).unwrap();
    for step in 0..steps {
        step_mc(&mut ens, &model, &noise, step, dt, Some((10, 0.2 / n as f64))).unwrap();
        assert!(ens.weights().iter().all(|w| w.to_bits() == (1.0 / n as f64).to_bits()));
    }

    let force = &model.ham_noise()[0];
    let mut plain = vec![psi.clone(); n];
    for step in 0..steps {
        for (member, state) in plain.iter_mut().enumerate() {
            let dv = noise.gaussian_increment(StreamId::Decoherence { member, channel: 0 }, step, dt).unwrap();
            *state = decoherence_step(state, &lower, dv, dt).unwrap();
            let dv = noise.gaussian_increment(StreamId::Decoherence { member, channel: 1 }, step, dt).unwrap();
            *state = hamiltonian_noise_step(state, force, dv, dt).unwrap();
            *state = hamiltonian_step(state, model.hamiltonian(), dt).unwrap();
        }
    }
    let number = build_number(6).unwrap();
    let mut plain_mean = 0.0;
    for s in &plain {
        plain_mean += (1.0 / n as f64) * number.expectation(s).unwrap().re;
    }
    assert_eq!(ens.mean(&number).to_bits(), plain_mean.to_bits());
}
