//! Summary statistics, pooling over seeds, gains versus the baseline and the
//! report table.

use serde::{Deserialize, Serialize};

use crate::scenario::ScenarioKind;
use crate::scheduler::SchemeMode;

/// Cell-edge UPT is the 5th percentile.
pub const EDGE_PERCENTILE: f64 = 0.05;

/// Linear interpolation between order statistics at rank `p·(n−1)`
/// (zero-indexed).
///
/// # Panics
/// If `samples` is empty, contains NaN, or `p ∉ [0, 1]`.
pub fn percentile(samples: &[f64], p: f64) -> f64 {
    assert!(!samples.is_empty(), "percentile of an empty sample");
    assert!((0.0..=1.0).contains(&p), "percentile fraction {p} outside [0, 1]");
    let mut s = samples.to_vec();
    assert!(s.iter().all(|x| !x.is_nan()), "NaN sample");
    s.sort_by(f64::total_cmp);
    let rank = p * (s.len() - 1) as f64;
    let lo = rank.floor() as usize;
    let hi = rank.ceil() as usize;
    let frac = rank - lo as f64;
    if lo == hi {
        s[lo]
    } else {
        s[lo] + frac * (s[hi] - s[lo])
    }
}

/// Arithmetic mean.
///
/// # Panics
/// If `samples` is empty.
pub fn mean(samples: &[f64]) -> f64 {
    assert!(!samples.is_empty(), "mean of an empty sample");
    samples.iter().sum::<f64>() / samples.len() as f64
}

/// Per-run summary record.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub scenario: ScenarioKind,
    pub scheme: SchemeMode,
    pub n_tx: usize,
    pub target_ru: Option<f64>,
    pub achieved_ru: f64,
    #[serde(rename = "lambda")]
    pub lambda_per_s: f64,
    pub mean_upt_bps: f64,
    pub edge_upt_bps: f64,
    pub n_samples: usize,
    pub seed: u64,
}

/// Statistics of one (scenario, scheme, n_tx, load) cell pooled over seeds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PooledSummary {
    pub scenario: ScenarioKind,
    pub scheme: SchemeMode,
    pub n_tx: usize,
    pub target_ru: Option<f64>,
    /// Mean of per-seed RU (all seeds share the TRP count and window rules).
    pub achieved_ru: f64,
    pub mean_upt_bps: f64,
    pub edge_upt_bps: f64,
    pub n_samples: usize,
    pub n_seeds: usize,
}

/// Pools runs by concatenating their UPT samples.
///
/// # Panics
/// If `runs` is empty, if the runs disagree on scenario, scheme or `n_tx`,
/// or if a run's sample count does not match its samples.
pub fn pool(runs: &[(RunSummary, Vec<f64>)]) -> PooledSummary {
    assert!(!runs.is_empty(), "nothing to pool");
    let first = &runs[0].0;
    let mut all = Vec::new();
    for (s, samples) in runs {
        assert!(
            s.scenario == first.scenario && s.scheme == first.scheme && s.n_tx == first.n_tx,
            "pooling runs of different cells"
        );
        assert_eq!(s.n_samples, samples.len(), "sample count mismatch for seed {}", s.seed);
        all.extend_from_slice(samples);
    }
    PooledSummary {
        scenario: first.scenario,
        scheme: first.scheme,
        n_tx: first.n_tx,
        target_ru: first.target_ru,
        achieved_ru: runs.iter().map(|r| r.0.achieved_ru).sum::<f64>() / runs.len() as f64,
        mean_upt_bps: mean(&all),
        edge_upt_bps: percentile(&all, EDGE_PERCENTILE),
        n_samples: all.len(),
        n_seeds: runs.len(),
    }
}

/// `100·(candidate/baseline − 1)` for mean and edge UPT.
///
/// # Panics
/// If the cells differ or a baseline value is not positive.
pub fn gains(candidate: &PooledSummary, baseline: &PooledSummary) -> (f64, f64) {
    assert!(
        candidate.scenario == baseline.scenario && candidate.n_tx == baseline.n_tx && candidate.target_ru == baseline.target_ru,
        "gain between different cells"
    );
    assert!(
        baseline.mean_upt_bps > 0.0 && baseline.edge_upt_bps > 0.0,
        "baseline UPT must be positive"
    );
    let g = |c: f64, b: f64| if c == b { 0.0 } else { 100.0 * (c / b - 1.0) };
    (
        g(candidate.mean_upt_bps, baseline.mean_upt_bps),
        g(candidate.edge_upt_bps, baseline.edge_upt_bps),
    )
}

/// One row of the report.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub scenario: ScenarioKind,
    pub scheme: SchemeMode,
    pub n_tx: usize,
    pub target_ru: f64,
    pub achieved_ru: f64,
    pub mean_upt_bps: f64,
    pub edge_upt_bps: f64,
    pub mean_gain_pct: f64,
    pub edge_gain_pct: f64,
    pub n_samples: usize,
    pub n_seeds: usize,
}

pub const REPORT_COLUMNS: [&str; 11] = [
    "scenario",
    "scheme",
    "n_tx",
    "target_ru",
    "achieved_ru",
    "mean_upt_bps",
    "edge_upt_bps",
    "mean_gain_pct",
    "edge_gain_pct",
    "n_samples",
    "n_seeds",
];

/// Gains of every pooled cell against the baseline cell with the same
/// scenario, `n_tx` and target RU.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct GainTable {
    pub rows: Vec<ReportRow>,
}

impl GainTable {
    /// Cells without a matching baseline are skipped and returned
    /// separately.
    pub fn build(cells: &[PooledSummary]) -> (Self, Vec<PooledSummary>) {
        let mut rows = Vec::new();
        let mut orphans = Vec::new();
        for c in cells {
            let base = cells.iter().find(|b| {
                b.scheme == SchemeMode::Baseline && b.scenario == c.scenario && b.n_tx == c.n_tx && b.target_ru == c.target_ru
            });
            let Some(base) = base else {
                orphans.push(c.clone());
                continue;
            };
            let (mg, eg) = gains(c, base);
            rows.push(ReportRow {
                scenario: c.scenario,
                scheme: c.scheme,
                n_tx: c.n_tx,
                target_ru: c.target_ru.unwrap_or(f64::NAN),
                achieved_ru: c.achieved_ru,
                mean_upt_bps: c.mean_upt_bps,
                edge_upt_bps: c.edge_upt_bps,
                mean_gain_pct: mg,
                edge_gain_pct: eg,
                n_samples: c.n_samples,
                n_seeds: c.n_seeds,
            });
        }
        rows.sort_by(|a, b| {
            (a.scenario.name(), a.n_tx, a.scheme)
                .cmp(&(b.scenario.name(), b.n_tx, b.scheme))
                .then(a.target_ru.total_cmp(&b.target_ru))
        });
        (Self { rows }, orphans)
    }

    pub fn find(&self, scenario: ScenarioKind, scheme: SchemeMode, n_tx: usize, target_ru: f64) -> Option<&ReportRow> {
        self.rows
            .iter()
            .find(|r| r.scenario == scenario && r.scheme == scheme && r.n_tx == n_tx && r.target_ru == target_ru)
    }

    /// Aligned plain-text rendering.
    pub fn to_text(&self) -> String {
        let cells: Vec<[String; 11]> = self
            .rows
            .iter()
            .map(|r| {
                [
                    r.scenario.to_string(),
                    r.scheme.to_string(),
                    r.n_tx.to_string(),
                    format!("{:.2}", r.target_ru),
                    format!("{:.4}", r.achieved_ru),
                    format!("{:.4e}", r.mean_upt_bps),
                    format!("{:.4e}", r.edge_upt_bps),
                    format!("{:+.2}", r.mean_gain_pct),
                    format!("{:+.2}", r.edge_gain_pct),
                    r.n_samples.to_string(),
                    r.n_seeds.to_string(),
                ]
            })
            .collect();
        let mut width: Vec<usize> = REPORT_COLUMNS.iter().map(|c| c.len()).collect();
        for row in &cells {
            for (w, c) in width.iter_mut().zip(row) {
                *w = (*w).max(c.len());
            }
        }
        let mut out = String::new();
        let line = |fields: &[String], out: &mut String| {
            let parts: Vec<String> = fields.iter().zip(&width).map(|(f, w)| format!("{f:>w$}")).collect();
            out.push_str(parts.join("  ").trim_end());
            out.push('\n');
        };
        let header: Vec<String> = REPORT_COLUMNS.iter().map(|s| s.to_string()).collect();
        line(&header, &mut out);
        for row in &cells {
            line(row, &mut out);
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn percentile_examples() {
        assert_eq!(percentile(&[10.0, 20.0, 30.0, 40.0, 50.0], 0.5), 30.0);
        let v: Vec<f64> = (0..=100).map(f64::from).collect();
        assert_eq!(percentile(&v, 0.05), 5.0);
        assert_eq!(percentile(&[1.0, 2.0], 0.25), 1.25);
        assert_eq!(percentile(&[3.0], 0.9), 3.0);
    }

    #[test]
    #[should_panic(expected = "empty")]
    fn percentile_rejects_empty() {
        percentile(&[], 0.5);
    }

    fn summary(scheme: SchemeMode, mean: f64, edge: f64) -> PooledSummary {
        PooledSummary {
            scenario: ScenarioKind::InH4GHz,
            scheme,
            n_tx: 2,
            target_ru: Some(0.1),
            achieved_ru: 0.1,
            mean_upt_bps: mean,
            edge_upt_bps: edge,
            n_samples: 100,
            n_seeds: 1,
        }
    }

    #[test]
    fn gain_arithmetic() {
        let b = summary(SchemeMode::Baseline, 100.0, 10.0);
        assert_eq!(gains(&b, &b), (0.0, 0.0));
        let c = summary(SchemeMode::Ncjt, 120.0, 10.0);
        let (m, e) = gains(&c, &b);
        assert!((m - 20.0).abs() < 1e-12);
        assert_eq!(e, 0.0);
    }

    #[test]
    fn table_has_zero_baseline_gain_and_renders() {
        let cells = vec![
            summary(SchemeMode::Baseline, 100.0, 10.0),
            summary(SchemeMode::Dps, 110.0, 12.0),
            PooledSummary {
                n_tx: 4,
                ..summary(SchemeMode::Dps, 1.0, 1.0)
            },
        ];
        let (t, orphans) = GainTable::build(&cells);
        assert_eq!(t.rows.len(), 2);
        assert_eq!(orphans.len(), 1);
        let base = t.find(ScenarioKind::InH4GHz, SchemeMode::Baseline, 2, 0.1).unwrap();
        assert_eq!((base.mean_gain_pct, base.edge_gain_pct), (0.0, 0.0));
        let text = t.to_text();
        assert_eq!(text.lines().count(), 3);
        assert!(text.lines().next().unwrap().contains("edge_gain_pct"));
    }
}
