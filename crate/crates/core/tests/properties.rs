use std::path::Path;

use num_complex::Complex64;
use proptest::prelude::*;

use wfmc::cli_io::{parse_config_str, ConfigFile, ModelConfig};
use wfmc::ensemble::effective_size;
use wfmc::{trace_distance, DensityMatrix, Operator, StateVector, WeightedEnsemble};

fn complex_vec(len: usize) -> impl Strategy<Value = Vec<Complex64>> {
    prop::collection::vec((-1.0f64..1.0, -1.0f64..1.0), len)
        .prop_map(|v| v.into_iter().map(|(re, im)| Complex64::new(re, im)).collect())
}

fn state(dim: usize) -> impl Strategy<Value = StateVector> {
    complex_vec(dim)
        .prop_filter("nonzero", |v| v.iter().map(|z| z.norm_sqr()).sum::<f64>() > 1e-6)
        .prop_map(|v| {
            let n = v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
            StateVector::new(v.into_iter().map(|z| z / n).collect()).unwrap()
        })
}

fn operator(dim: usize) -> impl Strategy<Value = Operator> {
    complex_vec(dim * dim).prop_map(move |e| Operator::from_entries(dim, e).unwrap())
}

/// `GG† / Tr(GG†)` is a valid density matrix for any nonzero `G`.
fn density(dim: usize) -> impl Strategy<Value = DensityMatrix> {
    operator(dim)
        .prop_filter("nonzero", |g| g.entries().iter().any(|z| z.norm() > 1e-3))
        .prop_map(|g| {
            let p = g.matmul(&g.adjoint()).unwrap();
            let tr = DensityMatrix::from_operator(p.clone()).trace().re;
            DensityMatrix::from_operator(p.scale(Complex64::new(1.0 / tr, 0.0)))
        })
}

fn weights(n: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.01f64..1.0, n).prop_map(|w| {
        let t: f64 = w.iter().sum();
        w.into_iter().map(|x| x / t).collect()
    })
}

fn ensemble() -> impl Strategy<Value = WeightedEnsemble> {
    (1usize..5, 1usize..12).prop_flat_map(|(d, n)| {
        (prop::collection::vec(state(d), n), weights(n))
            .prop_map(|(s, w)| WeightedEnsemble::from_parts(s, w).unwrap())
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn trace_distance_is_a_metric((a, b, c) in (1usize..6).prop_flat_map(|d| (density(d), density(d), density(d)))) {
        let ab = trace_distance(&a, &b).unwrap();
        let ba = trace_distance(&b, &a).unwrap();
        let ac = trace_distance(&a, &c).unwrap();
        let cb = trace_distance(&c, &b).unwrap();
        prop_assert!((ab - ba).abs() < 1e-12);
        prop_assert!(ab <= ac + cb + 1e-12);
        prop_assert!((-1e-12..=1.0 + 1e-12).contains(&ab));
        prop_assert!(trace_distance(&a, &a).unwrap() < 1e-12);
    }

    #[test]
    fn apply_is_linear(
        (op, x, y) in (1usize..6).prop_flat_map(|d| (operator(d), state(d), state(d))),
        a in (-2.0f64..2.0, -2.0f64..2.0),
        b in (-2.0f64..2.0, -2.0f64..2.0),
    ) {
        let (a, b) = (Complex64::new(a.0, a.1), Complex64::new(b.0, b.1));
        let lhs = op.apply(&x.scaled(a).add(&y.scaled(b)).unwrap()).unwrap();
        let rhs = op.apply(&x).unwrap().scaled(a).add(&op.apply(&y).unwrap().scaled(b)).unwrap();
        for (l, r) in lhs.amplitudes().iter().zip(rhs.amplitudes()) {
            prop_assert!((l - r).norm() < 1e-12);
        }
    }

    #[test]
    fn hermitian_expectation_is_real((g, psi) in (1usize..6).prop_flat_map(|d| (operator(d), state(d)))) {
        let h = g.add(&g.adjoint()).unwrap();
        prop_assert!(h.is_hermitian());
        prop_assert!(h.expectation(&psi).unwrap().im.abs() < 1e-12);
        let rho = DensityMatrix::pure(&psi);
        let via_rho = rho.expectation(&h).unwrap();
        prop_assert!((via_rho - h.expectation(&psi).unwrap()).norm() < 1e-12);
    }

    #[test]
    fn effective_size_is_bounded(w in (1usize..40).prop_flat_map(weights)) {
        let n_eff = effective_size(&w).unwrap();
        prop_assert!(n_eff >= 1.0 - 1e-12);
        prop_assert!(n_eff <= w.len() as f64 + 1e-9);
    }

    #[test]
    fn assembled_density_is_valid(ens in ensemble()) {
        let rho = ens.assemble_density();
        prop_assert!(rho.validate().is_ok(), "{:?}", rho.validate());
    }

    #[test]
    fn regeneration_moves_density_by_dropped_weight(ens in ensemble(), frac in 0.05f64..1.0) {
        let mut ens = ens;
        let thresh = frac / ens.len() as f64;
        prop_assume!(thresh < 1.0);
        let before = ens.assemble_density();
        let report = ens.regenerate(thresh).unwrap();
        let after = ens.assemble_density();
        let dist = trace_distance(&before, &after).unwrap();
        prop_assert!(dist <= report.p_drop / (1.0 - report.p_drop) + 1e-10);
        prop_assert!((ens.weights().iter().sum::<f64>() - 1.0).abs() < 1e-12);
        prop_assert!(ens.max_norm_defect() < 1e-12);
        if report.p_drop == 0.0 {
            prop_assert_eq!(before, after);
        }
    }

    #[test]
    fn config_round_trips(
        dt_exp in 1u32..6,
        n_steps in 1u64..100_000,
        n_ens in 1usize..4096,
        frac in 0.01f64..1.0,
        seed in any::<u64>(),
        k in 0.0f64..1.0,
        beta in 0.0f64..1.0,
        stride in prop::option::of(1u64..100),
        refine in prop::option::of(any::<bool>()),
    ) {
        let dt = 1e-3 / f64::from(1u32 << dt_exp);
        let file = ConfigFile {
            model: ModelConfig::Oscillator { dim: 6, omega: 6.5, k, beta, n0: 2 },
            dt,
            n_steps,
            n_ens,
            p_thresh: frac / n_ens as f64,
            seed,
            mode: "mc".into(),
            regen_interval: None,
            finest_dt: None,
            dv_replicate: None,
            output_stride: stride,
            replicates: None,
            refine,
        };
        let text = serde_json::to_string(&file).unwrap();
        let (parsed, cfg) = parse_config_str(&text, Path::new(".")).unwrap();
        let emitted = parsed.to_canonical_json();
        let (again, cfg2) = parse_config_str(&emitted, Path::new(".")).unwrap();
        prop_assert_eq!(&parsed, &again);
        prop_assert_eq!(cfg, cfg2);
        prop_assert_eq!(again.to_canonical_json(), emitted);
        prop_assert_eq!(parsed.seed, seed);
    }
}
