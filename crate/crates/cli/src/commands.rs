//! Subcommand implementations. Each returns data for the caller to print;
//! files go under the configured output directory.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use compsim::engine::{calibrate_ru, link_geometry_table, run, RunError};
use compsim::metrics::{pool, GainTable, PooledSummary, RunSummary};
use compsim::scenario::generate_layout;
use compsim::scheduler::SchemeMode;
use rayon::prelude::*;
use thiserror::Error;

use crate::config::{ConfigError, RunConfig};
use crate::output::{self, CalibrationRecord};

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("run failed: {0}")]
    Run(String),
    #[error("calibration failed: {0}")]
    Calibration(String),
    #[error("{failed} of {total} sweep runs failed:\n{}", .messages.join("\n"))]
    PartialSweep {
        failed: usize,
        total: usize,
        messages: Vec<String>,
        table: GainTable,
    },
    #[error("{context}: {source}")]
    Io { context: String, source: std::io::Error },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 1,
            CliError::Run(_) | CliError::Io { .. } => 2,
            CliError::Calibration(_) => 3,
            CliError::PartialSweep { .. } => 4,
        }
    }
}

fn io_err(context: impl Into<String>) -> impl FnOnce(std::io::Error) -> CliError {
    let context = context.into();
    move |source| CliError::Io { context, source }
}

fn write(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    output::atomic_write(path, bytes).map_err(io_err(format!("writing {}", path.display())))
}

fn with_workers<T: Send>(workers: usize, f: impl FnOnce() -> T + Send) -> T {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .expect("thread pool")
        .install(f)
}

/// Calibrated baseline rate for `target_ru`, reusing a stored record when its
/// inputs are unchanged. The flag is true on a cache hit.
pub fn calibrate(cfg: &RunConfig, target_ru: f64) -> Result<(CalibrationRecord, bool), CliError> {
    let path = output::calibration_path(&cfg.out_dir, cfg.scenario, cfg.n_tx, target_ru);
    let input_digest = cfg.calibration_digest(target_ru);
    if let Some(rec) = output::read_calibration(&path) {
        if rec.input_digest == input_digest {
            return Ok((rec, true));
        }
    }
    let sim = cfg.sim_config(SchemeMode::Baseline, 0.0);
    let c = calibrate_ru(&sim, &cfg.seeds, target_ru, &cfg.calibration)
        .map_err(|e| CliError::Calibration(format!("{} n_tx={} target {target_ru}: {e}", cfg.scenario, cfg.n_tx)))?;
    let rec = CalibrationRecord::new(&c, cfg.scenario, cfg.n_tx, &cfg.seeds, &cfg.digest(), &input_digest);
    write(&path, &rec.to_json())?;
    Ok((rec, false))
}

/// One finished run with its UPT samples.
pub type RunResult = (RunSummary, Vec<f64>);

/// Runs `scheme` at rate `lambda` for one seed and writes its files.
fn run_one(
    cfg: &RunConfig,
    scheme: SchemeMode,
    target_ru: Option<f64>,
    lambda: f64,
    seed: u64,
) -> Result<RunResult, String> {
    let sim = cfg.sim_config(scheme, lambda);
    let out = run(&sim, seed).map_err(|e: RunError| format!("{} {scheme} seed {seed}: {e}", cfg.scenario))?;
    let mut summary = out.summary;
    summary.target_ru = target_ru;
    let digest = cfg.digest();
    let cell = output::cell_dir(&cfg.out_dir, cfg.scenario, cfg.n_tx, target_ru, lambda);
    let files = output::run_files(&cell, scheme, seed);
    let io = |p: &Path, e: std::io::Error| format!("writing {}: {e}", p.display());
    output::atomic_write(&files.transfers, &output::transfers_csv(&out.records, &digest, seed))
        .map_err(|e| io(&files.transfers, e))?;
    if sim.engine.log_schedule {
        output::atomic_write(&files.schedule, &output::schedule_csv(&out.schedule_log, &digest, seed))
            .map_err(|e| io(&files.schedule, e))?;
    }
    output::atomic_write(&files.summary, &output::summary_json(&summary, &digest)).map_err(|e| io(&files.summary, e))?;
    let samples = out.records.iter().map(|r| r.upt_bps).collect();
    Ok((summary, samples))
}

/// The load point of a `run`: either the explicit rate or a calibrated one.
fn resolve_load(cfg: &RunConfig) -> Result<(Option<f64>, f64), CliError> {
    match (cfg.lambda_per_s, cfg.target_ru) {
        (Some(l), _) => Ok((None, l)),
        (None, Some(t)) => Ok((Some(t), calibrate(cfg, t)?.0.lambda_per_s)),
        (None, None) => unreachable!("validation requires a load point"),
    }
}

pub struct RunReport {
    pub pooled: PooledSummary,
    pub runs: Vec<RunSummary>,
    pub cell_dir: PathBuf,
}

/// `run`: every configured seed of the configured scheme.
pub fn cmd_run(cfg: &RunConfig) -> Result<RunReport, CliError> {
    let (target, lambda) = resolve_load(cfg)?;
    let results: Vec<Result<RunResult, String>> = with_workers(cfg.workers, || {
        cfg.seeds
            .par_iter()
            .map(|&s| run_one(cfg, cfg.scheme, target, lambda, s))
            .collect()
    });
    let mut ok = Vec::new();
    let mut failed = Vec::new();
    for r in results {
        match r {
            Ok(x) => ok.push(x),
            Err(e) => failed.push(e),
        }
    }
    if !failed.is_empty() {
        return Err(CliError::Run(failed.join("; ")));
    }
    Ok(RunReport {
        pooled: pool(&ok),
        runs: ok.into_iter().map(|x| x.0).collect(),
        cell_dir: output::cell_dir(&cfg.out_dir, cfg.scenario, cfg.n_tx, target, lambda),
    })
}

/// `calibrate`: the baseline rate for `target_ru`.
pub fn cmd_calibrate(cfg: &RunConfig, target_ru: f64) -> Result<(CalibrationRecord, bool), CliError> {
    if !(target_ru > 0.0 && target_ru <= 0.7) {
        return Err(ConfigError::Invalid(vec![crate::config::Violation {
            field: "target".into(),
            message: format!("must lie in (0, 0.7], got {target_ru}"),
        }])
        .into());
    }
    calibrate(cfg, target_ru)
}

/// `sweep`: configured schemes × RU targets for the configured scenario.
/// Failed cells are reported after the rest complete.
pub fn cmd_sweep(cfg: &RunConfig) -> Result<GainTable, CliError> {
    let targets = cfg.sweep.targets.clone();
    let calibrations: Vec<(f64, Result<f64, CliError>)> = with_workers(cfg.workers, || {
        targets
            .par_iter()
            .map(|&t| (t, calibrate(cfg, t).map(|r| r.0.lambda_per_s)))
            .collect()
    });

    let mut messages = Vec::new();
    let mut jobs = Vec::new();
    for (t, c) in &calibrations {
        match c {
            Ok(lambda) => {
                for &scheme in &cfg.sweep.schemes {
                    for &seed in &cfg.seeds {
                        jobs.push((scheme, *t, *lambda, seed));
                    }
                }
            }
            Err(e) => messages.push(e.to_string()),
        }
    }
    let total = targets.len() * cfg.sweep.schemes.len() * cfg.seeds.len();
    let results: Vec<Result<RunResult, String>> = with_workers(cfg.workers, || {
        jobs.par_iter()
            .map(|&(scheme, t, lambda, seed)| run_one(cfg, scheme, Some(t), lambda, seed))
            .collect()
    });

    let mut cells: BTreeMap<(usize, u64), Vec<RunResult>> = BTreeMap::new();
    for ((scheme, t, _, _), r) in jobs.iter().zip(results) {
        match r {
            Ok(x) => cells.entry((*scheme as usize, t.to_bits())).or_default().push(x),
            Err(e) => messages.push(e),
        }
    }
    let pooled: Vec<PooledSummary> = cells.values().map(|runs| pool(runs)).collect();
    let (table, _) = GainTable::build(&pooled);
    let seeds = output::seed_label(&cfg.seeds);
    let digest = cfg.digest();
    let base = sweep_report_base(cfg);
    write(&base.with_extension("csv"), &output::report_csv(&table, &digest, &seeds))?;
    write(&base.with_extension("txt"), &output::report_text(&table, &digest, &seeds))?;
    let failed = total - results_count(&cells);
    if failed > 0 {
        return Err(CliError::PartialSweep {
            failed,
            total,
            messages,
            table,
        });
    }
    Ok(table)
}

fn results_count(cells: &BTreeMap<(usize, u64), Vec<RunResult>>) -> usize {
    cells.values().map(Vec::len).sum()
}

/// `<out>/<scenario>_ntx<n>_report`, extension added by the caller.
pub fn sweep_report_base(cfg: &RunConfig) -> PathBuf {
    cfg.out_dir.join(format!("{}_ntx{}_report", cfg.scenario, cfg.n_tx))
}

fn find_summaries(dir: &Path, out: &mut Vec<PathBuf>) -> std::io::Result<()> {
    let mut entries: Vec<_> = std::fs::read_dir(dir)?.collect::<Result<_, _>>()?;
    entries.sort_by_key(|e| e.path());
    for e in entries {
        let p = e.path();
        if e.file_type()?.is_dir() {
            find_summaries(&p, out)?;
        } else if p.to_string_lossy().ends_with(".summary.json") {
            out.push(p);
        }
    }
    Ok(())
}

/// Pools every run found under `dir`, recomputing statistics from the
/// per-transfer CSVs.
pub fn collect_report(dir: &Path) -> Result<(GainTable, Vec<PooledSummary>, Vec<String>), CliError> {
    let mut paths = Vec::new();
    find_summaries(dir, &mut paths).map_err(io_err(format!("scanning {}", dir.display())))?;
    let mut cells: BTreeMap<String, Vec<RunResult>> = BTreeMap::new();
    let mut digests = Vec::new();
    for p in paths {
        let rec = output::read_summary(&p).map_err(io_err(format!("reading {}", p.display())))?;
        let csv_path = PathBuf::from(p.to_string_lossy().replace(".summary.json", ".transfers.csv"));
        let transfers = output::read_transfers(&csv_path).map_err(|e| CliError::Io {
            context: format!("reading {}", csv_path.display()),
            source: std::io::Error::other(e),
        })?;
        if transfers.len() != rec.summary.n_samples {
            return Err(CliError::Run(format!(
                "{} lists {} samples but {} has {} rows",
                p.display(),
                rec.summary.n_samples,
                csv_path.display(),
                transfers.len()
            )));
        }
        let s = &rec.summary;
        let key = format!("{}|{}|{}|{:?}", s.scenario, s.n_tx, s.scheme, s.target_ru.map(f64::to_bits));
        if !digests.contains(&rec.config_digest) {
            digests.push(rec.config_digest.clone());
        }
        cells
            .entry(key)
            .or_default()
            .push((rec.summary, transfers.into_iter().map(|t| t.upt_bps).collect()));
    }
    let pooled: Vec<PooledSummary> = cells.values().map(|runs| pool(runs)).collect();
    let (table, orphans) = GainTable::build(&pooled);
    Ok((table, orphans, digests))
}

/// `report`: rebuilds the gain table of everything under `dir`.
pub fn cmd_report(dir: &Path) -> Result<GainTable, CliError> {
    let (table, _, digests) = collect_report(dir)?;
    let digest = match digests.as_slice() {
        [d] => d.clone(),
        _ => "mixed".to_string(),
    };
    write(&dir.join("report.csv"), &output::report_csv(&table, &digest, "all"))?;
    write(&dir.join("report.txt"), &output::report_text(&table, &digest, "all"))?;
    Ok(table)
}

/// `dump-layout`: one CSV row per TRP.
pub fn cmd_dump_layout(cfg: &RunConfig) -> String {
    let sim = cfg.sim_config(cfg.scheme, 0.0);
    let layout = generate_layout(sim.scenario, sim.scale, &sim.layout);
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "trp", "site", "cluster", "x_m", "y_m", "z_m", "azimuth_deg", "downtilt_deg", "n_tx_ports", "n_analog_beams",
    ])
    .expect("in-memory write");
    for t in &layout.trps {
        w.write_record(&[
            t.id.to_string(),
            t.site.to_string(),
            t.cluster_id.to_string(),
            t.position.x.to_string(),
            t.position.y.to_string(),
            t.position.z.to_string(),
            t.antenna.boresight.azimuth_deg.to_string(),
            t.antenna.boresight.downtilt_deg.to_string(),
            t.antenna.n_tx_ports.to_string(),
            t.antenna.n_analog_beams.to_string(),
        ])
        .expect("in-memory write");
    }
    let body = String::from_utf8(w.into_inner().expect("flush")).expect("utf-8");
    output::provenance_line(&cfg.digest(), "none") + &body
}

/// `dump-gains`: large-scale state of every link of the first `count` UEs
/// dropped with the first configured seed.
pub fn cmd_dump_gains(cfg: &RunConfig, count: u64) -> String {
    let seed = cfg.seeds[0];
    let sim = cfg.sim_config(cfg.scheme, 0.0);
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "ue", "trp", "serving", "distance_m", "los", "pathloss_db", "shadowing_db", "loss_db", "coupling_db",
    ])
    .expect("in-memory write");
    for (ue, serving, links) in link_geometry_table(&sim, seed, count) {
        for l in links {
            w.write_record(&[
                ue.to_string(),
                l.trp.to_string(),
                (l.trp == serving).to_string(),
                l.large_scale.distance_m.to_string(),
                l.large_scale.los.to_string(),
                l.large_scale.pathloss_db.to_string(),
                l.large_scale.shadowing_db.to_string(),
                l.loss_db.to_string(),
                l.coupling_db.to_string(),
            ])
            .expect("in-memory write");
        }
    }
    let body = String::from_utf8(w.into_inner().expect("flush")).expect("utf-8");
    output::provenance_line(&cfg.digest(), &seed.to_string()) + &body
}
