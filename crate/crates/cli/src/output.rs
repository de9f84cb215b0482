//! Output files. Every file is written atomically (temporary file in the
//! target directory, then rename) and carries the configuration digest and
//! seed(s) it came from.

use std::io::Write;
use std::path::{Path, PathBuf};

use compsim::engine::Calibration;
use compsim::metrics::{GainTable, RunSummary, REPORT_COLUMNS};
use compsim::scenario::ScenarioKind;
use compsim::scheduler::{ScheduleLogRow, SchemeMode};
use compsim::traffic::TransferRecord;
use serde::{Deserialize, Serialize};

pub fn atomic_write(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    std::fs::create_dir_all(dir)?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| e.error)?;
    Ok(())
}

/// First line of every CSV output.
pub fn provenance_line(digest: &str, seeds: &str) -> String {
    format!("# config_digest={digest} seed={seeds}\n")
}

fn csv_with_header<T: Serialize>(header: &str, rows: &[T], columns: Option<&[&str]>) -> Vec<u8> {
    let mut out = header.as_bytes().to_vec();
    {
        let mut w = csv::WriterBuilder::new().has_headers(columns.is_none()).from_writer(&mut out);
        if let Some(cols) = columns {
            w.write_record(cols).expect("in-memory write");
        }
        for r in rows {
            w.serialize(r).expect("in-memory write");
        }
        w.flush().expect("in-memory write");
    }
    out
}

pub fn transfers_csv(records: &[TransferRecord], digest: &str, seed: u64) -> Vec<u8> {
    if records.is_empty() {
        let mut out = provenance_line(digest, &seed.to_string()).into_bytes();
        out.extend_from_slice(b"ue_id,arrival_tti,completion_tti,upt_bps,serving_cluster,scheme\n");
        return out;
    }
    csv_with_header(&provenance_line(digest, &seed.to_string()), records, None)
}

pub fn schedule_csv(rows: &[ScheduleLogRow], digest: &str, seed: u64) -> Vec<u8> {
    csv_with_header(
        &provenance_line(digest, &seed.to_string()),
        rows,
        Some(&["tti", "cluster", "trp", "ue", "mode_tag", "rank", "pf_value"]),
    )
}

fn comment_reader(path: &Path) -> csv::Result<csv::Reader<std::fs::File>> {
    csv::ReaderBuilder::new().comment(Some(b'#')).from_path(path)
}

pub fn read_transfers(path: &Path) -> csv::Result<Vec<TransferRecord>> {
    comment_reader(path)?.deserialize().collect()
}

pub fn read_schedule(path: &Path) -> csv::Result<Vec<ScheduleLogRow>> {
    comment_reader(path)?.deserialize().collect()
}

/// Per-run summary file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryRecord {
    pub config_digest: String,
    #[serde(flatten)]
    pub summary: RunSummary,
}

pub fn summary_json(summary: &RunSummary, digest: &str) -> Vec<u8> {
    let rec = SummaryRecord {
        config_digest: digest.to_string(),
        summary: summary.clone(),
    };
    let mut out = serde_json::to_vec_pretty(&rec).expect("summary serializes");
    out.push(b'\n');
    out
}

pub fn read_summary(path: &Path) -> std::io::Result<SummaryRecord> {
    let text = std::fs::read(path)?;
    serde_json::from_slice(&text).map_err(std::io::Error::other)
}

/// Persisted result of a baseline calibration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CalibrationRecord {
    pub scenario: ScenarioKind,
    pub n_tx: usize,
    pub target_ru: f64,
    pub lambda_per_s: f64,
    pub achieved_ru: f64,
    pub seeds: Vec<u64>,
    pub config_digest: String,
    /// Digest of every input the calibration depends on; a record is reused
    /// only when it matches.
    pub input_digest: String,
    pub history: Vec<(f64, Option<f64>)>,
}

impl CalibrationRecord {
    pub fn new(c: &Calibration, scenario: ScenarioKind, n_tx: usize, seeds: &[u64], config_digest: &str, input_digest: &str) -> Self {
        Self {
            scenario,
            n_tx,
            target_ru: c.target_ru,
            lambda_per_s: c.lambda_per_s,
            achieved_ru: c.achieved_ru,
            seeds: seeds.to_vec(),
            config_digest: config_digest.to_string(),
            input_digest: input_digest.to_string(),
            history: c.history.clone(),
        }
    }

    pub fn to_json(&self) -> Vec<u8> {
        let mut out = serde_json::to_vec_pretty(self).expect("record serializes");
        out.push(b'\n');
        out
    }
}

pub fn read_calibration(path: &Path) -> Option<CalibrationRecord> {
    serde_json::from_slice(&std::fs::read(path).ok()?).ok()
}

/// Directory of one (scenario, n_tx, load) cell.
pub fn cell_dir(out: &Path, scenario: ScenarioKind, n_tx: usize, target_ru: Option<f64>, lambda_per_s: f64) -> PathBuf {
    let load = match target_ru {
        Some(t) => format!("ru{t:.2}"),
        None => format!("lambda{lambda_per_s}"),
    };
    out.join(format!("{scenario}_ntx{n_tx}_{load}"))
}

pub fn calibration_path(out: &Path, scenario: ScenarioKind, n_tx: usize, target_ru: f64) -> PathBuf {
    out.join("calibration").join(format!("{scenario}_ntx{n_tx}_ru{target_ru:.2}.json"))
}

/// Paths of the files of one run.
pub struct RunFiles {
    pub transfers: PathBuf,
    pub summary: PathBuf,
    pub schedule: PathBuf,
}

pub fn run_files(cell: &Path, scheme: SchemeMode, seed: u64) -> RunFiles {
    let dir = cell.join(scheme.name());
    RunFiles {
        transfers: dir.join(format!("seed{seed}.transfers.csv")),
        summary: dir.join(format!("seed{seed}.summary.json")),
        schedule: dir.join(format!("seed{seed}.schedule.csv")),
    }
}

pub fn report_csv(table: &GainTable, digest: &str, seeds: &str) -> Vec<u8> {
    csv_with_header(&provenance_line(digest, seeds), &table.rows, Some(&REPORT_COLUMNS))
}

pub fn report_text(table: &GainTable, digest: &str, seeds: &str) -> Vec<u8> {
    let mut out = provenance_line(digest, seeds);
    out.push_str(&table.to_text());
    out.into_bytes()
}

/// `0..9` for consecutive seeds, else a comma list.
pub fn seed_label(seeds: &[u64]) -> String {
    match seeds {
        [] => String::new(),
        [s] => s.to_string(),
        _ if seeds.windows(2).all(|w| w[1] == w[0] + 1) => format!("{}..{}", seeds[0], seeds[seeds.len() - 1]),
        _ => seeds.iter().map(u64::to_string).collect::<Vec<_>>().join(","),
    }
}
