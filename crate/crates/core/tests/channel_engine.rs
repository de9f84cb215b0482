mod common;

use common::*;
use compsim::channel::{FadingProcess, ChannelParams};
use compsim::engine::*;
use compsim::linalg::{CMat, Svd};
use compsim::link::svd_precoder;
use compsim::rng::{stream, Stream};
use compsim::scenario::{LayoutScale, ScenarioKind};
use compsim::scheduler::SchemeMode;
use nalgebra::DMatrix;
use num_complex::Complex64;
use proptest::prelude::*;
use rand::Rng;

fn short(kind: ScenarioKind, scheme: SchemeMode, lambda: f64) -> SimConfig {
    let mut cfg = SimConfig::new(kind, scheme, 2, LayoutScale::Desk, lambda);
    cfg.engine.warmup_ttis = 500;
    cfg.engine.measure_ttis = 4_000;
    cfg.engine.min_completions = 40;
    cfg
}

#[test]
fn zero_rate_is_an_under_run() {
    let cfg = short(ScenarioKind::InH4GHz, SchemeMode::Baseline, 0.0);
    assert!(matches!(run(&cfg, 0), Err(RunError::UnderRun { arrivals: 0, .. })));
}

#[test]
fn runs_are_deterministic_and_conserve_bits() {
    for scheme in SchemeMode::ALL {
        let cfg = short(ScenarioKind::InH4GHz, scheme, 40.0);
        let a = run(&cfg, 3).unwrap();
        let b = run(&cfg, 3).unwrap();
        assert_eq!(a, b, "{scheme}");
        assert!(a.bits.balanced(), "{scheme}: {:?}", a.bits);
        assert_eq!(a.summary.n_samples, a.records.len());
        let file = cfg.engine.file_size_bits;
        assert_eq!(a.bits.completed % file, 0);
        for r in &a.records {
            assert!(r.completion_tti >= r.arrival_tti);
            let expected = file as f64 / ((r.completion_tti - r.arrival_tti + 1) as f64 * cfg.engine.tti_s);
            assert!(rel_close(r.upt_bps, expected, 1e-12));
        }
    }
}

#[test]
fn different_seeds_differ() {
    let cfg = short(ScenarioKind::InH4GHz, SchemeMode::Dps, 40.0);
    assert_ne!(run(&cfg, 1).unwrap().records, run(&cfg, 2).unwrap().records);
}

#[test]
fn overload_is_reported() {
    let mut cfg = short(ScenarioKind::InH4GHz, SchemeMode::Baseline, 5_000.0);
    cfg.engine.max_live_ues = 50;
    assert!(matches!(run(&cfg, 0), Err(RunError::Overload { .. })));
}

#[test]
fn doubling_the_window_keeps_the_mean() {
    let mut cfg = short(ScenarioKind::InH4GHz, SchemeMode::Baseline, 30.0);
    cfg.engine.measure_ttis = 20_000;
    let a = run(&cfg, 5).unwrap();
    cfg.engine.measure_ttis = 40_000;
    let b = run(&cfg, 5).unwrap();
    let sd = |o: &RunOutput| {
        let v: Vec<f64> = o.records.iter().map(|r| r.upt_bps).collect();
        let m = compsim::metrics::mean(&v);
        (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() as f64 - 1.0)).sqrt() / (v.len() as f64).sqrt()
    };
    let tol = 2.0 * (sd(&a).powi(2) + sd(&b).powi(2)).sqrt();
    assert!((a.summary.mean_upt_bps - b.summary.mean_upt_bps).abs() <= tol);
}

#[test]
fn calibrated_rate_reproduces_its_ru() {
    let cfg = short(ScenarioKind::InH4GHz, SchemeMode::Ncjt, 1.0);
    let seeds = [0, 1];
    let cal = calibrate_ru(&cfg, &seeds, 0.2, &CalibrationParams::default()).unwrap();
    assert!((cal.achieved_ru - 0.2).abs() <= 0.01);
    let mut base = cfg.clone();
    base.scheme = SchemeMode::Baseline;
    base.lambda_per_s = cal.lambda_per_s;
    assert_eq!(pooled_ru(&base, &seeds).unwrap(), cal.achieved_ru);
    assert!(cal.history.iter().any(|&(l, _)| l == cal.lambda_per_s));
}

#[test]
fn invalid_targets_are_rejected() {
    let cfg = short(ScenarioKind::InH4GHz, SchemeMode::Baseline, 1.0);
    for t in [0.0, -0.1, 0.8] {
        assert!(matches!(
            calibrate_ru(&cfg, &[0], t, &CalibrationParams::default()),
            Err(CalibrationError::InvalidTarget(_))
        ));
    }
}

#[test]
fn ru_grows_with_rate() {
    let cfg = short(ScenarioKind::InH4GHz, SchemeMode::Baseline, 1.0);
    let mut last = 0.0;
    for lambda in [10.0, 30.0, 60.0] {
        let ru = pooled_ru(&SimConfig { lambda_per_s: lambda, ..cfg.clone() }, &[0]).unwrap();
        assert!(ru > last, "RU {ru} at {lambda}/s not above {last}");
        last = ru;
    }
}

#[test]
fn joint_transmission_adds_interference_elsewhere() {
    // A receiver outside the cluster: switching the cluster from one
    // transmitting TRP to two never lowers its received interference.
    let mut rng = stream(30, Stream::Test, 0, 0);
    for _ in 0..50 {
        let h1 = random_cmat(4, 2, &mut rng);
        let h2 = random_cmat(4, 2, &mut rng);
        let w1 = svd_precoder(&random_cmat(2, 2, &mut rng), 1);
        let w2 = svd_precoder(&random_cmat(2, 2, &mut rng), 1);
        let one = [InterferenceTerm { h: &h1, precoder: &w1, power_per_layer: 1.0 }];
        let two = [one[0], InterferenceTerm { h: &h2, precoder: &w2, power_per_layer: 1.0 }];
        let r1 = build_interference_covariance(4, 0.1, &one);
        let r2 = build_interference_covariance(4, 0.1, &two);
        assert!(r2.trace().re >= r1.trace().re);
        // r2 − r1 is positive semidefinite.
        let d = to_na(&(r2 - r1));
        let eig = d.symmetric_eigenvalues();
        assert!(eig.iter().all(|&e| e >= -1e-12));
    }
}

#[test]
fn pure_los_channel_has_rank_one() {
    let mut rng = stream(31, Stream::Test, 0, 0);
    let f = FadingProcess::new((4, 4), true, f64::INFINITY, &mut rng);
    let s = Svd::new(f.current());
    let sv = s.singular_values();
    assert!(sv[0] > 1.0);
    assert!(sv[1..].iter().all(|&x| x < 1e-9 * sv[0]));
}

#[test]
fn fading_has_unit_power_per_entry() {
    for los in [false, true] {
        let k = ChannelParams::default().k_factor_linear();
        let mut rng = stream(32, Stream::Fading, los as u64, 0);
        let mut acc = 0.0;
        let n = 4000;
        for _ in 0..n {
            acc += FadingProcess::new((2, 4), los, k, &mut rng).current().frobenius_norm_sq();
        }
        let per_entry = acc / (n as f64 * 8.0);
        assert!((per_entry - 1.0).abs() < 0.03, "los={los}: {per_entry}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn interference_covariance_is_hermitian_psd(seed in any::<u64>(), n_terms in 0usize..5, n_rx in 1usize..=4) {
        let mut rng = stream(seed, Stream::Test, 33, 0);
        let hs: Vec<CMat> = (0..n_terms).map(|_| random_cmat(n_rx, 2, &mut rng)).collect();
        let ws: Vec<_> = (0..n_terms).map(|_| svd_precoder(&random_cmat(2, 2, &mut rng), rng.random_range(1..=2))).collect();
        let ps: Vec<f64> = (0..n_terms).map(|_| rng.random_range(0.0..3.0)).collect();
        let terms: Vec<InterferenceTerm> = (0..n_terms)
            .map(|i| InterferenceTerm { h: &hs[i], precoder: &ws[i], power_per_layer: ps[i] })
            .collect();
        let r = build_interference_covariance(n_rx, 0.05, &terms);
        prop_assert!(r.is_hermitian(1e-12));
        // Term-by-term oracle.
        let mut oracle = DMatrix::<Complex64>::identity(n_rx, n_rx) * Complex64::new(0.05, 0.0);
        for i in 0..n_terms {
            let a = to_na(&hs[i]) * to_na(ws[i].matrix());
            oracle += &a * a.adjoint() * Complex64::new(ps[i], 0.0);
        }
        prop_assert!((to_na(&r) - &oracle).norm() <= 1e-10 * oracle.norm());
        prop_assert!(to_na(&r).symmetric_eigenvalues().iter().all(|&e| e >= 0.05 - 1e-9));
    }

    #[test]
    fn fading_evolution_keeps_energy(seed in any::<u64>(), rho in 0.0f64..0.9) {
        let mut rng = stream(seed, Stream::Fading, 0, 0);
        let mut f = FadingProcess::new((4, 4), false, 0.0, &mut rng);
        let mut acc = 0.0;
        for _ in 0..400 {
            f.advance(rho, &mut rng);
            acc += f.current().frobenius_norm_sq();
        }
        let per_entry = acc / (400.0 * 16.0);
        // Correlated samples: loose bound on the time average.
        prop_assert!((per_entry - 1.0).abs() < 0.5);
    }
}
