mod common;

use common::rel_close;
use compsim::metrics::*;
use compsim::rng::{stream, Stream};
use compsim::scenario::ScenarioKind;
use compsim::scheduler::SchemeMode;
use compsim::traffic::*;
use proptest::prelude::*;

const TTI: f64 = 1e-3;

/// Kolmogorov-Smirnov critical value at the 1% level, large-sample form.
fn ks_critical_1pct(n: usize) -> f64 {
    1.6276 / (n as f64).sqrt()
}

fn ks_exponential(samples: &mut [f64], rate: f64) -> f64 {
    samples.sort_by(f64::total_cmp);
    let n = samples.len() as f64;
    samples
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = 1.0 - (-rate * x).exp();
            (f - i as f64 / n).abs().max(((i + 1) as f64 / n - f).abs())
        })
        .fold(0.0, f64::max)
}

#[test]
fn arrival_process_is_poisson_over_a_million_ttis() {
    let lambda = 50.0;
    let ttis = 1_000_000u64;
    let mut p = ArrivalProcess::new(lambda, TTI, stream(21, Stream::Arrivals, 0, 0));
    let mut buf = Vec::new();
    let mut times = Vec::new();
    for t in 0..ttis {
        p.arrivals_in(t, &mut buf);
        for &a in &buf {
            assert!(a >= t as f64 * TTI && a < (t + 1) as f64 * TTI);
        }
        times.extend_from_slice(&buf);
    }
    let mu = lambda * TTI * ttis as f64;
    let n = times.len() as f64;
    assert!((n - mu).abs() <= 3.0 * mu.sqrt(), "count {n} vs mean {mu}");
    let mut gaps: Vec<f64> = std::iter::once(times[0]).chain(times.windows(2).map(|w| w[1] - w[0])).collect();
    let d = ks_exponential(&mut gaps, lambda);
    assert!(d < ks_critical_1pct(gaps.len()), "KS statistic {d}");
}

#[test]
fn per_tti_poisson_counts() {
    let mut rng = stream(22, Stream::Arrivals, 0, 0);
    let ttis = 1_000_000u64;
    let lambda = 20.0;
    let total: u64 = (0..ttis).map(|_| generate_arrivals(lambda, TTI, &mut rng)).sum();
    let mu = lambda * TTI * ttis as f64;
    assert!((total as f64 - mu).abs() <= 3.0 * mu.sqrt());
    assert_eq!(generate_arrivals(0.0, TTI, &mut rng), 0);
}

#[test]
fn rate_change_only_rescales_arrival_times() {
    let collect = |lambda: f64, ttis: u64| {
        let mut p = ArrivalProcess::new(lambda, TTI, stream(23, Stream::Arrivals, 0, 0));
        let mut buf = Vec::new();
        let mut all = Vec::new();
        for t in 0..ttis {
            p.arrivals_in(t, &mut buf);
            all.extend_from_slice(&buf);
        }
        all
    };
    let slow = collect(10.0, 20_000);
    let fast = collect(20.0, 10_000);
    assert_eq!(slow.len(), fast.len());
    for (s, f) in slow.iter().zip(&fast) {
        assert!(rel_close(*s, 2.0 * f, 1e-12));
    }
}

#[test]
fn percentile_matches_hand_values() {
    let v: Vec<f64> = (1..=100).map(f64::from).collect();
    assert!((percentile(&v, 0.05) - 5.95).abs() < 1e-12);
    assert_eq!(percentile(&v, 0.0), 1.0);
    assert_eq!(percentile(&v, 1.0), 100.0);
    assert_eq!(percentile(&[3.0], 0.05), 3.0);
    assert!((percentile(&[4.0, 1.0], 0.25) - 1.75).abs() < 1e-12);
}

#[test]
fn upt_counts_inclusive_ttis() {
    let mut t = FileTransfer::new(1, 4_000_000, 100);
    record_delivery(&mut t, 4_000_000, 103);
    assert!(rel_close(upt(&t, TTI), 1e9, 1e-12));
}

fn summary(seed: u64, samples: &[f64]) -> RunSummary {
    RunSummary {
        scenario: ScenarioKind::InH4GHz,
        scheme: SchemeMode::Dps,
        n_tx: 2,
        target_ru: Some(0.1),
        achieved_ru: 0.1,
        lambda_per_s: 30.0,
        mean_upt_bps: mean(samples),
        edge_upt_bps: percentile(samples, EDGE_PERCENTILE),
        n_samples: samples.len(),
        seed,
    }
}

/// Sorted-sample oracle: the order statistic interpolation written out
/// with explicit neighbours.
fn percentile_oracle(v: &[f64], p: f64) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let pos = p * (s.len() as f64 - 1.0);
    let i = pos as usize;
    if i + 1 >= s.len() {
        return s[s.len() - 1];
    }
    s[i] * (1.0 - (pos - i as f64)) + s[i + 1] * (pos - i as f64)
}

proptest! {
    #[test]
    fn percentile_agrees_with_oracle(v in prop::collection::vec(0.0f64..1e9, 1..300), p in 0.0f64..=1.0) {
        let a = percentile(&v, p);
        let b = percentile_oracle(&v, p);
        prop_assert!((a - b).abs() <= 1e-6 * b.abs().max(1.0));
    }

    #[test]
    fn percentile_is_monotone(v in prop::collection::vec(0.0f64..1e9, 1..300), p in 0.0f64..=1.0, q in 0.0f64..=1.0) {
        let (lo, hi) = if p <= q { (p, q) } else { (q, p) };
        prop_assert!(percentile(&v, lo) <= percentile(&v, hi));
    }

    #[test]
    fn gain_of_identical_cells_is_zero(v in prop::collection::vec(1.0f64..1e9, 1..100)) {
        let p = pool(&[(summary(0, &v), v.clone())]);
        prop_assert_eq!(gains(&p, &p), (0.0, 0.0));
    }

    #[test]
    fn pooled_mean_is_sample_weighted(runs in prop::collection::vec(prop::collection::vec(1.0f64..1e9, 1..50), 1..6)) {
        let input: Vec<(RunSummary, Vec<f64>)> =
            runs.iter().enumerate().map(|(i, v)| (summary(i as u64, v), v.clone())).collect();
        let p = pool(&input);
        let n: usize = runs.iter().map(Vec::len).sum();
        let weighted = runs.iter().map(|v| mean(v) * v.len() as f64).sum::<f64>() / n as f64;
        prop_assert_eq!(p.n_samples, n);
        prop_assert!(rel_close(p.mean_upt_bps, weighted, 1e-9));
    }
}
