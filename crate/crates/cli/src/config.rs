//! Run configuration: scenario presets, file and command-line overrides,
//! validation and digests.

use std::fmt;
use std::path::{Path, PathBuf};

use compsim::channel::ChannelParams;
use compsim::engine::{CalibrationParams, EngineParams, SimConfig};
use compsim::link::LinkParams;
use compsim::scenario::{LayoutParams, LayoutScale, ScenarioKind};
use compsim::scheduler::{SchedulerParams, SchemeMode};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

/// Load points of the evaluation, as fractions of baseline RU.
pub const DEFAULT_TARGETS: [f64; 3] = [0.10, 0.20, 0.40];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub targets: Vec<f64>,
    pub schemes: Vec<SchemeMode>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            targets: DEFAULT_TARGETS.to_vec(),
            schemes: SchemeMode::ALL.to_vec(),
        }
    }
}

/// Everything one CLI invocation needs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub scenario: ScenarioKind,
    pub scheme: SchemeMode,
    pub n_tx: usize,
    /// Load point; the arrival rate is calibrated to it unless
    /// `lambda_per_s` is given.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub target_ru: Option<f64>,
    /// Explicit arrival rate, files/s over the whole layout.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lambda_per_s: Option<f64>,
    pub seeds: Vec<u64>,
    pub scale: LayoutScale,
    pub out_dir: PathBuf,
    /// Parallel runs.
    pub workers: usize,
    pub sweep: SweepConfig,
    pub calibration: CalibrationParams,
    pub layout: LayoutParams,
    pub channel: ChannelParams,
    pub link: LinkParams,
    pub scheduler: SchedulerParams,
    pub engine: EngineParams,
}

impl RunConfig {
    /// Scenario defaults.
    pub fn defaults(scenario: ScenarioKind) -> Self {
        Self {
            scenario,
            scheme: SchemeMode::Ncjt,
            n_tx: 2,
            target_ru: Some(DEFAULT_TARGETS[0]),
            lambda_per_s: None,
            seeds: (0..10).collect(),
            scale: LayoutScale::Desk,
            out_dir: PathBuf::from("out"),
            workers: 1,
            sweep: SweepConfig::default(),
            calibration: CalibrationParams::default(),
            layout: LayoutParams::default(),
            channel: ChannelParams::default(),
            link: LinkParams::default(),
            scheduler: SchedulerParams::default(),
            engine: EngineParams::for_kind(scenario),
        }
    }

    /// Simulation input for `scheme` at arrival rate `lambda_per_s`.
    pub fn sim_config(&self, scheme: SchemeMode, lambda_per_s: f64) -> SimConfig {
        SimConfig {
            scenario: self.scenario,
            scheme,
            scale: self.scale,
            lambda_per_s,
            layout: LayoutParams {
                n_tx: self.n_tx,
                ..self.layout.clone()
            },
            channel: self.channel.clone(),
            link: self.link,
            scheduler: self.scheduler.clone(),
            engine: self.engine.clone(),
        }
    }

    /// Canonical TOML of the effective configuration.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration serializes to TOML")
    }

    /// SHA-256 of everything that can change simulation output. The output
    /// directory and worker count are excluded.
    pub fn digest(&self) -> String {
        let mut c = self.clone();
        c.out_dir = PathBuf::new();
        c.workers = 1;
        sha256_hex(c.to_toml().as_bytes())
    }

    /// Digest of the inputs of a baseline calibration to `target_ru`.
    pub fn calibration_digest(&self, target_ru: f64) -> String {
        #[derive(Serialize)]
        struct Key<'a> {
            target_ru: f64,
            seeds: &'a [u64],
            calibration: &'a CalibrationParams,
            sim: SimConfig,
        }
        let key = Key {
            target_ru,
            seeds: &self.seeds,
            calibration: &self.calibration,
            sim: self.sim_config(SchemeMode::Baseline, 0.0),
        };
        sha256_hex(toml::to_string(&key).expect("calibration key serializes").as_bytes())
    }

    /// Every violated constraint, in field order.
    pub fn violations(&self) -> Vec<Violation> {
        let mut v = Vec::new();
        let mut bad = |field: &str, msg: String| v.push(Violation::new(field, msg));
        if self.scenario.is_mmwave() {
            if self.n_tx != 2 {
                bad("n_tx", format!("fixed at 2 ports per analog beam for {}, got {}", self.scenario, self.n_tx));
            }
        } else if !matches!(self.n_tx, 2 | 4) {
            bad("n_tx", format!("must be 2 or 4 for {}, got {}", self.scenario, self.n_tx));
        }
        if self.layout.n_tx != self.n_tx && self.layout.n_tx != LayoutParams::default().n_tx {
            bad("layout.n_tx", "set the port count with the top-level n_tx".into());
        }
        if let Some(t) = self.target_ru {
            if !(t > 0.0 && t <= 0.7) {
                bad("target_ru", format!("must lie in (0, 0.7], got {t}"));
            }
        }
        if let Some(l) = self.lambda_per_s {
            if !(l.is_finite() && l > 0.0) {
                bad("lambda_per_s", format!("must be positive, got {l}"));
            }
        }
        match (self.target_ru, self.lambda_per_s) {
            (Some(_), Some(_)) => bad("lambda_per_s", "give either target_ru or lambda_per_s, not both".into()),
            (None, None) => bad("target_ru", "a load point (target_ru or lambda_per_s) is required".into()),
            _ => {}
        }
        if self.seeds.is_empty() {
            bad("seeds", "at least one seed is required".into());
        }
        let mut sorted = self.seeds.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != self.seeds.len() {
            bad("seeds", "seeds must be distinct".into());
        }
        if self.workers == 0 {
            bad("workers", "must be at least 1".into());
        }
        if self.sweep.targets.is_empty() {
            bad("sweep.targets", "at least one target is required".into());
        }
        for t in &self.sweep.targets {
            if !(*t > 0.0 && *t <= 0.7) {
                bad("sweep.targets", format!("{t} outside (0, 0.7]"));
            }
        }
        if self.sweep.schemes.is_empty() {
            bad("sweep.schemes", "at least one scheme is required".into());
        }
        if !(self.calibration.tolerance > 0.0) {
            bad("calibration.tolerance", "must be positive".into());
        }
        if let Some(l) = self.calibration.initial_lambda_per_s {
            if !(l.is_finite() && l > 0.0) {
                bad("calibration.initial_lambda_per_s", format!("must be positive, got {l}"));
            }
        }
        if self.calibration.max_iterations == 0 {
            bad("calibration.max_iterations", "must be at least 1".into());
        }

        let positive = |x: f64| x.is_finite() && x > 0.0;
        let l = &self.layout;
        for (name, x) in [
            ("layout.inh_spacing_m", l.inh_spacing_m),
            ("layout.inh_height_m", l.inh_height_m),
            ("layout.inh_depth_m", l.inh_depth_m),
            ("layout.du_isd_m", l.du_isd_m),
            ("layout.du_height_m", l.du_height_m),
        ] {
            if !positive(x) {
                bad(name, format!("must be positive, got {x}"));
            }
        }
        if !(l.inh_wall_offset_m.is_finite() && l.inh_wall_offset_m >= 0.0) {
            bad("layout.inh_wall_offset_m", "must be non-negative".into());
        }

        let c = &self.channel;
        for (name, x) in [
            ("channel.inh_exponent_los", c.inh_exponent_los),
            ("channel.inh_exponent_nlos", c.inh_exponent_nlos),
            ("channel.du_exponent_los", c.du_exponent_los),
            ("channel.du_exponent_nlos", c.du_exponent_nlos),
            ("channel.inh_los_decay_m", c.inh_los_decay_m),
            ("channel.du_los_d1_m", c.du_los_d1_m),
            ("channel.du_los_d2_m", c.du_los_d2_m),
            ("channel.beam_hpbw_scale_deg", c.beam_hpbw_scale_deg),
            ("channel.sector_hpbw_deg", c.sector_hpbw_deg),
        ] {
            if !positive(x) {
                bad(name, format!("must be positive, got {x}"));
            }
        }
        for (name, x) in [
            ("channel.shadowing_sigma_los_db", c.shadowing_sigma_los_db),
            ("channel.shadowing_sigma_nlos_db", c.shadowing_sigma_nlos_db),
            ("channel.beam_front_to_back_db", c.beam_front_to_back_db),
            ("channel.sector_front_to_back_db", c.sector_front_to_back_db),
        ] {
            if !(x.is_finite() && x >= 0.0) {
                bad(name, format!("must be non-negative, got {x}"));
            }
        }
        if !(0.0..1.0).contains(&c.rho) {
            bad("channel.rho", format!("must lie in [0, 1), got {}", c.rho));
        }

        if !positive(self.link.se_cap) {
            bad("link.se_cap", format!("must be positive, got {}", self.link.se_cap));
        }

        let s = &self.scheduler;
        if !(s.pf_beta > 0.0 && s.pf_beta < 1.0) {
            bad("scheduler.pf_beta", format!("must lie in (0, 1), got {}", s.pf_beta));
        }
        if !positive(s.pf_floor_bps) {
            bad("scheduler.pf_floor_bps", format!("must be positive, got {}", s.pf_floor_bps));
        }
        if let Some(x) = s.pf_initial_bps {
            if !positive(x) {
                bad("scheduler.pf_initial_bps", format!("must be positive, got {x}"));
            }
        }

        let e = &self.engine;
        for (name, x) in [
            ("engine.tti_s", e.tti_s),
            ("engine.bandwidth_hz", e.bandwidth_hz),
        ] {
            if !positive(x) {
                bad(name, format!("must be positive, got {x}"));
            }
        }
        for (name, x) in [
            ("engine.tx_power_dbm", e.tx_power_dbm),
            ("engine.noise_figure_db", e.noise_figure_db),
        ] {
            if !x.is_finite() {
                bad(name, format!("must be finite, got {x}"));
            }
        }
        if e.file_size_bits == 0 {
            bad("engine.file_size_bits", "must be positive".into());
        }
        if e.measure_ttis == 0 {
            bad("engine.measure_ttis", "must be positive".into());
        }
        if e.max_measure_ttis < e.measure_ttis {
            bad("engine.max_measure_ttis", "must not be below engine.measure_ttis".into());
        }
        if e.max_live_ues == 0 {
            bad("engine.max_live_ues", "must be positive".into());
        }
        v
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let v = self.violations();
        if v.is_empty() {
            Ok(())
        } else {
            Err(ConfigError::Invalid(v))
        }
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Violation {
    pub field: String,
    pub message: String,
}

impl Violation {
    fn new(field: &str, message: String) -> Self {
        Self {
            field: field.to_string(),
            message,
        }
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.field, self.message)
    }
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("cannot parse configuration: {0}")]
    Parse(String),
    #[error("bad override `{0}` (expected key=value)")]
    Override(String),
    #[error("invalid configuration:\n{}", list(.0))]
    Invalid(Vec<Violation>),
}

fn list(v: &[Violation]) -> String {
    v.iter().map(|x| format!("  {x}")).collect::<Vec<_>>().join("\n")
}

/// Command-line adjustments applied on top of the file.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub scale: Option<LayoutScale>,
    /// `key=value` pairs with dotted keys; values are TOML literals, and bare
    /// words are taken as strings.
    pub pairs: Vec<String>,
}

/// Reads `path`, layers it over the defaults of its scenario, applies the
/// overrides and validates.
pub fn load(path: &Path, overrides: &Overrides) -> Result<RunConfig, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    from_str(&text, overrides)
}

pub fn from_str(text: &str, overrides: &Overrides) -> Result<RunConfig, ConfigError> {
    let mut file: toml::Table = text.parse().map_err(|e: toml::de::Error| ConfigError::Parse(e.to_string()))?;
    for pair in &overrides.pairs {
        let (key, value) = pair.split_once('=').ok_or_else(|| ConfigError::Override(pair.clone()))?;
        set_dotted(&mut file, key.trim(), parse_value(value.trim()))
            .map_err(|_| ConfigError::Override(pair.clone()))?;
    }
    let scenario: ScenarioKind = match file.get("scenario") {
        Some(toml::Value::String(s)) => s.parse().map_err(|e: String| {
            ConfigError::Invalid(vec![Violation::new("scenario", e)])
        })?,
        Some(_) => return Err(ConfigError::Invalid(vec![Violation::new("scenario", "must be a string".into())])),
        None => return Err(ConfigError::Invalid(vec![Violation::new("scenario", "is required".into())])),
    };
    file.insert("scenario".into(), toml::Value::String(scenario.name().into()));

    let mut merged = toml::Table::try_from(RunConfig::defaults(scenario)).expect("defaults serialize");
    if file.contains_key("lambda_per_s") && !file.contains_key("target_ru") {
        merged.remove("target_ru");
    }
    merge(&mut merged, file);
    let mut cfg: RunConfig = toml::Value::Table(merged)
        .try_into()
        .map_err(|e: toml::de::Error| ConfigError::Parse(e.to_string()))?;
    if let Some(seed) = overrides.seed {
        cfg.seeds = vec![seed];
    }
    if let Some(out) = &overrides.out {
        cfg.out_dir = out.clone();
    }
    if let Some(scale) = overrides.scale {
        cfg.scale = scale;
    }
    if cfg.layout.n_tx == LayoutParams::default().n_tx {
        cfg.layout.n_tx = cfg.n_tx;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn parse_value(raw: &str) -> toml::Value {
    let doc = format!("v = {raw}");
    match doc.parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").expect("key present"),
        Err(_) => toml::Value::String(raw.to_string()),
    }
}

fn set_dotted(table: &mut toml::Table, key: &str, value: toml::Value) -> Result<(), ()> {
    let mut parts: Vec<&str> = key.split('.').collect();
    let last = parts.pop().filter(|k| !k.is_empty()).ok_or(())?;
    let mut t = table;
    for p in parts {
        if p.is_empty() {
            return Err(());
        }
        t = t
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()))
            .as_table_mut()
            .ok_or(())?;
    }
    t.insert(last.to_string(), value);
    Ok(())
}

/// Recursive table merge; `top` wins.
fn merge(base: &mut toml::Table, top: toml::Table) {
    for (k, v) in top {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(t)) => merge(b, t),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str, pairs: &[&str]) -> Result<RunConfig, ConfigError> {
        from_str(
            text,
            &Overrides {
                pairs: pairs.iter().map(|s| s.to_string()).collect(),
                ..Overrides::default()
            },
        )
    }

    #[test]
    fn defaults_fill_missing_fields() {
        let c = parse("scenario = \"DU4GHz\"", &[]).unwrap();
        assert_eq!(c.engine.tx_power_dbm, 44.0);
        assert_eq!(c.n_tx, 2);
        assert_eq!(c.seeds.len(), 10);
    }

    #[test]
    fn dotted_overrides() {
        let c = parse(
            "scenario = \"InH4GHz\"",
            &["engine.warmup_ttis=10", "scheme=dps", "n_tx = 4", "sweep.targets=[0.2]"],
        )
        .unwrap();
        assert_eq!(c.engine.warmup_ttis, 10);
        assert_eq!(c.scheme, SchemeMode::Dps);
        assert_eq!(c.n_tx, 4);
        assert_eq!(c.layout.n_tx, 4);
        assert_eq!(c.sweep.targets, vec![0.2]);
    }

    #[test]
    fn every_violation_is_listed() {
        let err = parse("scenario = \"InH4GHz\"\nn_tx = 3\nseeds = []\n[link]\nse_cap = -1.0", &[]).unwrap_err();
        let ConfigError::Invalid(v) = err else { panic!("expected validation error") };
        let fields: Vec<&str> = v.iter().map(|x| x.field.as_str()).collect();
        assert_eq!(fields, ["n_tx", "seeds", "link.se_cap"]);
    }

    #[test]
    fn port_override_rejected_at_30ghz() {
        let err = parse("scenario = \"InH30GHz\"\nn_tx = 4", &[]).unwrap_err();
        assert!(matches!(err, ConfigError::Invalid(ref v) if v[0].field == "n_tx"));
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(matches!(parse("scenario = \"InH4GHz\"\nbogus = 1", &[]), Err(ConfigError::Parse(_))));
    }

    #[test]
    fn effective_config_round_trips() {
        let c = parse("scenario = \"DU30GHz\"\ntarget_ru = 0.2", &["channel.rho=0.5"]).unwrap();
        let again = parse(&c.to_toml(), &[]).unwrap();
        assert_eq!(c, again);
        assert_eq!(c.digest(), again.digest());
    }

    #[test]
    fn digest_ignores_output_location() {
        let a = parse("scenario = \"InH4GHz\"", &[]).unwrap();
        let b = parse("scenario = \"InH4GHz\"\nout_dir = \"elsewhere\"\nworkers = 3", &[]).unwrap();
        assert_eq!(a.digest(), b.digest());
        let c = parse("scenario = \"InH4GHz\"", &["seeds=[1]"]).unwrap();
        assert_ne!(a.digest(), c.digest());
    }

    #[test]
    fn explicit_rate_drops_default_target() {
        let c = parse("scenario = \"InH4GHz\"\nlambda_per_s = 12.0", &[]).unwrap();
        assert_eq!(c.target_ru, None);
        assert_eq!(c.lambda_per_s, Some(12.0));
    }
}
