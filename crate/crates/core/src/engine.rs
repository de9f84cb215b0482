//! TTI-driven simulation loop, resource-utilization accounting and arrival
//! rate calibration.
//!
//! Each TTI runs, in order: arrivals, fading update, out-of-cluster
//! interference estimates from the previous TTI's transmissions,
//! scheduling, realized SINR against the current transmissions, delivery,
//! and bookkeeping.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::channel::{
    compute_large_scale, db_to_linear, sector_gain_db, select_beams, trp_pattern, ue_panel_patterns, BeamPattern,
    ChannelParams, FadingProcess, LargeScaleState,
};
use crate::linalg::CMat;
use crate::link::{mmse_irc_sinr, ncjt_link_quality, LinkParams, LinkQuality, NcjtComposite, Precoder};
use crate::metrics::{mean, percentile, RunSummary, EDGE_PERCENTILE};
use crate::rng::{stream, SimRng, Stream};
use crate::scenario::{generate_layout, strongest_trp, Layout, LayoutParams, LayoutScale, ScenarioKind, Ue, UePanelConfig};
use crate::scheduler::{
    baseline_schedule, enumerate_hypotheses, select_hypothesis, Assignment, BaselineCandidate, ClusterCandidate,
    ClusterSnapshot, HypothesisKind, LinkBudget, PfState, ScheduleLogRow, SchedulerParams, SchemeMode,
};
use crate::traffic::{record_delivery, upt, ArrivalProcess, FileTransfer, TransferRecord};

/// Thermal noise density, dBm/Hz.
const THERMAL_NOISE_DBM_HZ: f64 = -174.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EngineParams {
    pub tti_s: f64,
    pub bandwidth_hz: f64,
    pub tx_power_dbm: f64,
    pub noise_figure_db: f64,
    pub file_size_bits: u64,
    pub warmup_ttis: u64,
    /// Minimum measurement length; arrivals in the measurement phase are
    /// the ones that produce UPT samples.
    pub measure_ttis: u64,
    /// The measurement phase is extended until this many measured transfers
    /// have completed, up to `max_measure_ttis`.
    pub min_completions: usize,
    pub max_measure_ttis: u64,
    /// After the measurement phase, the simulation keeps running until all
    /// measured transfers finish or this many extra TTIs have passed.
    pub drain_cap_ttis: u64,
    /// Live-UE count above which the run is declared overloaded.
    pub max_live_ues: usize,
    /// Record a per-TTI scheduling log.
    pub log_schedule: bool,
}

impl EngineParams {
    pub fn for_kind(kind: ScenarioKind) -> Self {
        let (bandwidth_hz, tx_power_dbm) = match kind {
            ScenarioKind::InH4GHz => (20e6, 24.0),
            ScenarioKind::DU4GHz => (20e6, 44.0),
            ScenarioKind::InH30GHz => (80e6, 23.0),
            ScenarioKind::DU30GHz => (80e6, 40.0),
        };
        Self {
            tti_s: 1e-3,
            bandwidth_hz,
            tx_power_dbm,
            noise_figure_db: 9.0,
            file_size_bits: crate::traffic::FILE_SIZE_BITS,
            warmup_ttis: 2_000,
            measure_ttis: 20_000,
            min_completions: 500,
            max_measure_ttis: 200_000,
            drain_cap_ttis: 20_000,
            max_live_ues: 400,
            log_schedule: false,
        }
    }

    pub fn tx_power_w(&self) -> f64 {
        10f64.powf((self.tx_power_dbm - 30.0) / 10.0)
    }

    /// Noise power per receive port, W.
    pub fn noise_power_w(&self) -> f64 {
        let dbm = THERMAL_NOISE_DBM_HZ + 10.0 * self.bandwidth_hz.log10() + self.noise_figure_db;
        10f64.powf((dbm - 30.0) / 10.0)
    }
}

/// Everything a single simulation needs besides the seed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub scenario: ScenarioKind,
    pub scheme: SchemeMode,
    pub scale: LayoutScale,
    pub lambda_per_s: f64,
    pub layout: LayoutParams,
    pub channel: ChannelParams,
    pub link: LinkParams,
    pub scheduler: SchedulerParams,
    pub engine: EngineParams,
}

impl SimConfig {
    /// Scenario defaults with the given scheme, transmit ports and rate.
    pub fn new(scenario: ScenarioKind, scheme: SchemeMode, n_tx: usize, scale: LayoutScale, lambda_per_s: f64) -> Self {
        Self {
            scenario,
            scheme,
            scale,
            lambda_per_s,
            layout: LayoutParams {
                n_tx,
                ..LayoutParams::default()
            },
            channel: ChannelParams::default(),
            link: LinkParams::default(),
            scheduler: SchedulerParams::default(),
            engine: EngineParams::for_kind(scenario),
        }
    }

    pub fn n_tx(&self) -> usize {
        self.layout.n_tx
    }

    fn budget(&self) -> LinkBudget {
        LinkBudget {
            tx_power_w: self.engine.tx_power_w(),
            bandwidth_hz: self.engine.bandwidth_hz,
            tti_s: self.engine.tti_s,
            se_cap: self.link.se_cap,
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RunError {
    #[error("no measured transfer completed (arrival rate {lambda_per_s}/s, {arrivals} measured arrivals)")]
    UnderRun { lambda_per_s: f64, arrivals: usize },
    #[error("overload at TTI {tti}: {live} live UEs exceed the limit of {limit}")]
    Overload { tti: u64, live: usize, limit: usize },
    #[error("invalid run setup: {0}")]
    Invalid(String),
}

/// Busy-TTI counters over the measurement phase.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RuAccounting {
    pub busy_ttis: Vec<u64>,
    pub total_ttis: u64,
}

impl RuAccounting {
    pub fn new(n_trps: usize) -> Self {
        Self {
            busy_ttis: vec![0; n_trps],
            total_ttis: 0,
        }
    }

    /// `Σ busy / (n_trps·total)`; zero before any TTI was counted.
    pub fn ru(&self) -> f64 {
        if self.total_ttis == 0 || self.busy_ttis.is_empty() {
            return 0.0;
        }
        self.busy_ttis.iter().sum::<u64>() as f64 / (self.busy_ttis.len() as f64 * self.total_ttis as f64)
    }

    pub fn merge(&mut self, other: &RuAccounting) {
        assert_eq!(self.busy_ttis.len(), other.busy_ttis.len(), "TRP count mismatch");
        for (a, b) in self.busy_ttis.iter_mut().zip(&other.busy_ttis) {
            *a += b;
        }
        self.total_ttis += other.total_ttis;
    }
}

/// Delivered-bit totals for the conservation identity
/// `delivered = completed + in_flight_delivered`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct BitLedger {
    /// Sum of bits handed out by the link layer.
    pub delivered: u64,
    /// Sum of sizes of completed transfers.
    pub completed: u64,
    /// Sum of `size − remaining` over transfers still in flight at the end.
    pub in_flight_delivered: u64,
}

impl BitLedger {
    pub fn balanced(&self) -> bool {
        self.completed.checked_add(self.in_flight_delivered) == Some(self.delivered)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunOutput {
    pub summary: RunSummary,
    /// Measured transfers that completed, in completion order.
    pub records: Vec<TransferRecord>,
    pub schedule_log: Vec<ScheduleLogRow>,
    pub ru: RuAccounting,
    pub bits: BitLedger,
    /// Measured transfers still incomplete when the drain cap was hit.
    pub unfinished: usize,
    pub ttis_simulated: u64,
    pub measurement_end_tti: u64,
}

/// Adds `p·(h·w)(h·w)ᴴ` to `r`.
pub fn accumulate_interference(r: &mut CMat, h: &CMat, w: &Precoder, power_per_layer: f64) {
    let a = (h * w.matrix()).scale(power_per_layer.sqrt());
    a.accumulate_gram_outer(1.0, r);
}

/// One interfering transmission as seen at a receiver.
#[derive(Clone, Copy, Debug)]
pub struct InterferenceTerm<'a> {
    /// Channel from the interferer to the receiver.
    pub h: &'a CMat,
    pub precoder: &'a Precoder,
    pub power_per_layer: f64,
}

/// `σ²·I + Σ p_i·(h_i·w_i)(h_i·w_i)ᴴ`.
pub fn build_interference_covariance(n_rx: usize, noise_power: f64, terms: &[InterferenceTerm<'_>]) -> CMat {
    let mut r = CMat::scaled_identity(n_rx, noise_power);
    for t in terms {
        accumulate_interference(&mut r, t.h, t.precoder, t.power_per_layer);
    }
    r
}

struct LinkState {
    /// Large-scale gain including fixed antenna gains, linear.
    gain_lin: f64,
    /// Per-receive-port amplitude weights (UE panel gains).
    row_amp: [f64; 4],
    fading: FadingProcess,
    rng: SimRng,
    /// Current channel without the TRP beam gain.
    h: CMat,
    /// TRP to UE vector.
    dir: [f64; 3],
    /// Best TRP beam towards this UE and its linear gain; zero beam and unit
    /// gain for digital TRPs.
    best_beam: usize,
    best_beam_gain: f64,
    mean_beam_gain: f64,
}

impl LinkState {
    fn refresh(&mut self) {
        let f = self.fading.current();
        let a = self.gain_lin.sqrt();
        self.h = CMat::from_fn(f.rows(), f.cols(), |i, j| f[(i, j)] * (a * self.row_amp[i]));
    }
}

struct LiveUe {
    ue: Ue,
    transfer: FileTransfer,
    serving_trp: usize,
    cluster: usize,
    links: Vec<LinkState>,
    measured: bool,
}

/// A TRP transmission in one TTI.
#[derive(Clone, Copy, Debug)]
struct Transmission {
    trp: usize,
    ue_id: u64,
    beam: usize,
    precoder: Precoder,
    power_per_layer: f64,
}

/// Served UE and how it is served in the current TTI.
#[derive(Clone, Copy, Debug)]
enum Service {
    Single { ue: usize, trp: usize, precoder: Precoder },
    Joint { ue: usize, a: usize, b: usize, wa: Precoder, wb: Precoder },
}

/// Large-scale view of one UE-TRP link at drop time.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinkGeometry {
    pub trp: usize,
    pub large_scale: LargeScaleState,
    /// Pathloss plus shadowing minus the sector pattern gain, dB.
    pub loss_db: f64,
    /// Loss reduced by the best transmit/receive beam pair, used for
    /// association.
    pub coupling_db: f64,
    pub dir: [f64; 3],
}

struct UeGeometry {
    ue: Ue,
    panels: Vec<BeamPattern>,
    links: Vec<LinkGeometry>,
    serving_trp: usize,
}

/// Drops UE `id` and derives its large-scale state towards every TRP. Depends
/// only on `(seed, id)`, so every scheme sees the same UE.
fn ue_geometry(
    cfg: &SimConfig,
    layout: &Layout,
    trp_patterns: &[Option<BeamPattern>],
    seed: u64,
    id: u64,
) -> UeGeometry {
    let kind = cfg.scenario;
    let position = layout.drop_ue(&mut stream(seed, Stream::UeDrop, id, 0));
    let orientation_deg = {
        use rand::Rng;
        stream(seed, Stream::Orientation, id, 0).random::<f64>() * 360.0
    };
    let mut ue = Ue {
        id,
        position,
        panel: UePanelConfig::for_kind(kind),
        orientation_deg,
        cluster_id: 0,
    };
    let panels = ue_panel_patterns(&ue, &cfg.channel);

    // Large-scale state is shared by co-sited TRPs.
    let mut site_state = BTreeMap::new();
    let mut links = Vec::with_capacity(layout.n_trps());
    for (j, trp) in layout.trps.iter().enumerate() {
        let dir = layout.link_vector(trp, &position);
        let ls = *site_state.entry(trp.site).or_insert_with(|| {
            let mut rng = stream(seed, Stream::LargeScale, id, trp.site as u64);
            compute_large_scale(kind, &cfg.channel, dir, &mut rng)
        });
        let mut loss_db = ls.total_loss_db();
        if trp.antenna.sector_pattern {
            loss_db -= sector_gain_db(trp.antenna.boresight, dir, &cfg.channel);
        }
        let coupling_db = match &trp_patterns[j] {
            Some(p) => -loss_db + select_beams(kind, p, &panels, dir).beamforming_gain_db,
            None => -loss_db,
        };
        links.push(LinkGeometry {
            trp: j,
            large_scale: ls,
            loss_db,
            coupling_db,
            dir,
        });
    }
    let coupling: Vec<f64> = links.iter().map(|l| l.coupling_db).collect();
    let serving_trp = strongest_trp(&coupling);
    ue.cluster_id = layout.cluster_of(serving_trp);
    UeGeometry {
        ue,
        panels,
        links,
        serving_trp,
    }
}

/// Large-scale link table of the first `n_ues` UEs of `seed`, as the engine
/// would drop them.
pub fn link_geometry_table(cfg: &SimConfig, seed: u64, n_ues: u64) -> Vec<(u64, usize, Vec<LinkGeometry>)> {
    let layout = generate_layout(cfg.scenario, cfg.scale, &cfg.layout);
    let patterns: Vec<Option<BeamPattern>> = layout.trps.iter().map(|t| trp_pattern(t, &cfg.channel)).collect();
    (0..n_ues)
        .map(|id| {
            let g = ue_geometry(cfg, &layout, &patterns, seed, id);
            (id, g.serving_trp, g.links)
        })
        .collect()
}

struct World<'a> {
    cfg: &'a SimConfig,
    layout: Layout,
    trp_patterns: Vec<Option<BeamPattern>>,
    budget: LinkBudget,
    noise: f64,
    n_rx: usize,
    seed: u64,
    arrivals: ArrivalProcess,
    next_ue_id: u64,
    ues: Vec<LiveUe>,
    pf: PfState,
    prev_tx: Vec<Transmission>,
    ru: RuAccounting,
    bits: BitLedger,
    records: Vec<TransferRecord>,
    log: Vec<ScheduleLogRow>,
    measured_arrivals: usize,
    measured_completions: usize,
    arrival_buf: Vec<f64>,
}

impl<'a> World<'a> {
    fn new(cfg: &'a SimConfig, seed: u64) -> Result<Self, RunError> {
        let layout = generate_layout(cfg.scenario, cfg.scale, &cfg.layout);
        let trp_patterns = layout.trps.iter().map(|t| trp_pattern(t, &cfg.channel)).collect();
        let n_rx = UePanelConfig::for_kind(cfg.scenario).total_rx_ports;
        if layout.clusters.iter().any(|c| c.member_trps.len() > crate::scheduler::MAX_CLUSTER_TRPS) {
            return Err(RunError::Invalid("coordination cluster too large".into()));
        }
        Ok(Self {
            cfg,
            trp_patterns,
            budget: cfg.budget(),
            noise: cfg.engine.noise_power_w(),
            n_rx,
            seed,
            arrivals: ArrivalProcess::new(cfg.lambda_per_s, cfg.engine.tti_s, stream(seed, Stream::Arrivals, 0, 0)),
            next_ue_id: 0,
            ues: Vec::new(),
            pf: PfState::new(&cfg.scheduler, cfg.engine.bandwidth_hz),
            prev_tx: Vec::new(),
            ru: RuAccounting::new(layout.n_trps()),
            bits: BitLedger::default(),
            records: Vec::new(),
            log: Vec::new(),
            measured_arrivals: 0,
            measured_completions: 0,
            arrival_buf: Vec::new(),
            layout,
        })
    }

    fn spawn_ue(&mut self, tti: u64, measured: bool) {
        let id = self.next_ue_id;
        self.next_ue_id += 1;
        let cfg = self.cfg;
        let UeGeometry {
            ue,
            panels,
            links: geo,
            serving_trp,
        } = ue_geometry(cfg, &self.layout, &self.trp_patterns, self.seed, id);
        let cluster = ue.cluster_id;
        let n_trps = self.layout.n_trps();
        let loss_db: Vec<(f64, bool)> = geo.iter().map(|g| (g.loss_db, g.large_scale.los)).collect();
        let dirs: Vec<[f64; 3]> = geo.iter().map(|g| g.dir).collect();

        // Receive beams of the UE panels, fixed for the UE's lifetime: each
        // panel points at its best in-cluster TRP (baseline: at the serving
        // TRP).
        let mut row_amp_per_trp = vec![[1.0; 4]; n_trps];
        if !panels.is_empty() {
            let targets: Vec<usize> = if cfg.scheme == SchemeMode::Baseline {
                vec![serving_trp]
            } else {
                self.layout.clusters[cluster].member_trps.clone()
            };
            let ports = ue.panel.rx_ports_per_beam;
            let mut panel_beams = Vec::with_capacity(panels.len());
            for panel in &panels {
                let mut best = (0usize, f64::NEG_INFINITY);
                for &j in &targets {
                    let back = neg(dirs[j]);
                    let (b, g_rx) = panel.best_beam(back);
                    let g_tx = self.trp_patterns[j].as_ref().map_or(0.0, |p| p.best_beam(dirs[j]).1);
                    let total = g_rx + g_tx - loss_db[j].0;
                    if total > best.1 {
                        best = (b, total);
                    }
                }
                panel_beams.push(best.0);
            }
            for (j, amp) in row_amp_per_trp.iter_mut().enumerate() {
                let back = neg(dirs[j]);
                for (p, panel) in panels.iter().enumerate() {
                    let a = db_to_linear(panel.gain_db(panel_beams[p], back)).sqrt();
                    for r in 0..ports {
                        amp[p * ports + r] = a;
                    }
                }
            }
        }

        let n_tx = self.layout.trps[0].antenna.n_tx_ports;
        let k_lin = cfg.channel.k_factor_linear();
        let mut links = Vec::with_capacity(n_trps);
        for j in 0..n_trps {
            let mut rng = stream(self.seed, Stream::Fading, id, j as u64);
            let fading = FadingProcess::new((self.n_rx, n_tx), loss_db[j].1, k_lin, &mut rng);
            let (best_beam, best_beam_gain, mean_beam_gain) = match &self.trp_patterns[j] {
                Some(p) => {
                    let gains = p.gains_db(dirs[j]);
                    let (b, g) = p.best_beam(dirs[j]);
                    let mean = gains.iter().map(|&g| db_to_linear(g)).sum::<f64>() / gains.len() as f64;
                    (b, db_to_linear(g), mean)
                }
                None => (0, 1.0, 1.0),
            };
            let mut link = LinkState {
                gain_lin: db_to_linear(-loss_db[j].0),
                row_amp: row_amp_per_trp[j],
                fading,
                rng,
                h: CMat::zeros(self.n_rx, n_tx),
                dir: dirs[j],
                best_beam,
                best_beam_gain,
                mean_beam_gain,
            };
            link.refresh();
            links.push(link);
        }

        self.pf.insert(id);
        if measured {
            self.measured_arrivals += 1;
        }
        self.ues.push(LiveUe {
            ue,
            transfer: FileTransfer::new(id, cfg.engine.file_size_bits, tti),
            serving_trp,
            cluster,
            links,
            measured,
        });
    }

    /// Linear TRP beam gain of a transmission from `trp` on `beam`, seen by
    /// UE `u`.
    fn tx_gain(&self, trp: usize, beam: usize, u: usize) -> f64 {
        match &self.trp_patterns[trp] {
            Some(p) => db_to_linear(p.gain_db(beam, self.ues[u].links[trp].dir)),
            None => 1.0,
        }
    }

    /// Channel from `trp` to UE `u` for a transmission on `beam`.
    fn channel(&self, trp: usize, beam: usize, u: usize) -> CMat {
        let h = &self.ues[u].links[trp].h;
        if self.trp_patterns[trp].is_none() {
            return *h;
        }
        h.scale(self.tx_gain(trp, beam, u).sqrt())
    }

    fn desired_channel(&self, trp: usize, u: usize) -> CMat {
        let l = &self.ues[u].links[trp];
        if self.trp_patterns[trp].is_none() {
            l.h
        } else {
            l.h.scale(l.best_beam_gain.sqrt())
        }
    }

    /// Covariance estimate for UE `u` from the previous TTI's transmissions
    /// outside its scheduling domain, with current channels.
    fn estimate_r_out(&self, u: usize) -> CMat {
        let ue = &self.ues[u];
        let mut r = CMat::scaled_identity(self.n_rx, self.noise);
        for t in &self.prev_tx {
            let excluded = match self.cfg.scheme {
                SchemeMode::Baseline => t.trp == ue.serving_trp,
                _ => self.layout.cluster_of(t.trp) == ue.cluster,
            };
            if excluded {
                continue;
            }
            accumulate_interference(&mut r, &self.channel(t.trp, t.beam, u), &t.precoder, t.power_per_layer);
        }
        r
    }

    fn schedule(&mut self, tti: u64, r_out: &[CMat]) -> Vec<Service> {
        let mut services = Vec::new();
        match self.cfg.scheme {
            SchemeMode::Baseline => {
                for trp in 0..self.layout.n_trps() {
                    let attached: Vec<usize> = (0..self.ues.len()).filter(|&u| self.ues[u].serving_trp == trp).collect();
                    let cands: Vec<BaselineCandidate> = attached
                        .iter()
                        .map(|&u| BaselineCandidate {
                            ue_id: self.ues[u].ue.id,
                            avg_throughput_bps: self.pf.get(self.ues[u].ue.id),
                            remaining_bits: self.ues[u].transfer.remaining_bits,
                            h: self.desired_channel(trp, u),
                            r_est: r_out[u],
                        })
                        .collect();
                    let choice = baseline_schedule(&cands, self.budget);
                    if let Some(c) = choice {
                        services.push(Service::Single {
                            ue: attached[c.ue],
                            trp,
                            precoder: c.precoder,
                        });
                    }
                    if self.cfg.engine.log_schedule {
                        self.log.push(ScheduleLogRow {
                            tti,
                            cluster: self.layout.cluster_of(trp),
                            trp,
                            ue: choice.map(|c| cands[c.ue].ue_id),
                            mode_tag: if choice.is_some() { "single" } else { "blank" }.into(),
                            rank: choice.map_or(0, |c| c.precoder.rank()),
                            pf_value: choice.map_or(0.0, |c| c.pf),
                        });
                    }
                }
            }
            mode => {
                for cluster in 0..self.layout.clusters.len() {
                    let members = self.layout.clusters[cluster].member_trps.clone();
                    let ue_idx: Vec<usize> = (0..self.ues.len()).filter(|&u| self.ues[u].cluster == cluster).collect();
                    if ue_idx.is_empty() {
                        if self.cfg.engine.log_schedule {
                            for &trp in &members {
                                self.log_blank(tti, cluster, trp, 0.0);
                            }
                        }
                        continue;
                    }
                    let snapshot = self.cluster_snapshot(cluster, &members, &ue_idx, r_out);
                    let set = enumerate_hypotheses(&snapshot, mode, self.budget, &self.cfg.scheduler);
                    let best = select_hypothesis(&set.hypotheses);
                    let hyp = &set.hypotheses[best];
                    for o in set.served(hyp) {
                        let opt = &set.options[o];
                        let ue = ue_idx[opt.ue];
                        services.push(match opt.partner {
                            None => Service::Single {
                                ue,
                                trp: members[opt.trp],
                                precoder: opt.precoder,
                            },
                            Some(b) => Service::Joint {
                                ue,
                                a: members[opt.trp],
                                b: members[b],
                                wa: opt.precoder,
                                wb: opt.partner_precoder.expect("joint option has both precoders"),
                            },
                        });
                    }
                    if self.cfg.engine.log_schedule {
                        for (local, a) in set.assignments(&snapshot, hyp).into_iter().enumerate() {
                            match a {
                                Assignment::Blank => self.log_blank(tti, cluster, members[local], hyp.pf_value),
                                Assignment::Serve { ue_id, rank, joint_with, .. } => self.log.push(ScheduleLogRow {
                                    tti,
                                    cluster,
                                    trp: members[local],
                                    ue: Some(ue_id),
                                    mode_tag: match (hyp.kind, joint_with) {
                                        (HypothesisKind::Ncjt, Some(_)) => "ncjt",
                                        _ => "dps",
                                    }
                                    .into(),
                                    rank,
                                    pf_value: hyp.pf_value,
                                }),
                            }
                        }
                    }
                }
            }
        }
        services
    }

    fn log_blank(&mut self, tti: u64, cluster: usize, trp: usize, pf_value: f64) {
        self.log.push(ScheduleLogRow {
            tti,
            cluster,
            trp,
            ue: None,
            mode_tag: "blank".into(),
            rank: 0,
            pf_value,
        });
    }

    fn cluster_snapshot(&self, cluster: usize, members: &[usize], ue_idx: &[usize], r_out: &[CMat]) -> ClusterSnapshot {
        let p = self.budget.tx_power_w;
        let ues = ue_idx
            .iter()
            .map(|&u| {
                let live = &self.ues[u];
                let h = members.iter().map(|&j| self.desired_channel(j, u)).collect();
                let z = members
                    .iter()
                    .map(|&j| {
                        let l = &live.links[j];
                        let n_tx = l.h.cols() as f64;
                        l.h.gram_outer().scale(p / n_tx * l.mean_beam_gain)
                    })
                    .collect();
                ClusterCandidate {
                    ue_id: live.ue.id,
                    avg_throughput_bps: self.pf.get(live.ue.id),
                    remaining_bits: live.transfer.remaining_bits,
                    h,
                    z,
                    r_out: r_out[u],
                }
            })
            .collect();
        ClusterSnapshot {
            cluster_id: cluster,
            trp_ids: members.to_vec(),
            ues,
        }
    }

    fn transmissions(&self, services: &[Service]) -> Vec<Transmission> {
        let p = self.budget.tx_power_w;
        let mut out = Vec::new();
        let mut push = |trp: usize, u: usize, w: Precoder| {
            out.push(Transmission {
                trp,
                ue_id: self.ues[u].ue.id,
                beam: self.ues[u].links[trp].best_beam,
                precoder: w,
                power_per_layer: p / w.rank() as f64,
            })
        };
        for s in services {
            match *s {
                Service::Single { ue, trp, precoder } => push(trp, ue, precoder),
                Service::Joint { ue, a, b, wa, wb } => {
                    push(a, ue, wa);
                    push(b, ue, wb);
                }
            }
        }
        out.sort_by_key(|t| t.trp);
        out
    }

    /// Realized link quality of every service against the actual
    /// transmissions of this TTI.
    fn realize(&self, services: &[Service], tx: &[Transmission]) -> Vec<LinkQuality> {
        let p = self.budget.tx_power_w;
        let cap = self.cfg.link.se_cap;
        services
            .iter()
            .map(|s| {
                let u = match *s {
                    Service::Single { ue, .. } | Service::Joint { ue, .. } => ue,
                };
                let id = self.ues[u].ue.id;
                let mut r = CMat::scaled_identity(self.n_rx, self.noise);
                for t in tx.iter().filter(|t| t.ue_id != id) {
                    accumulate_interference(&mut r, &self.channel(t.trp, t.beam, u), &t.precoder, t.power_per_layer);
                }
                match *s {
                    Service::Single { trp, precoder, .. } => {
                        let h = self.desired_channel(trp, u);
                        mmse_irc_sinr(&(&h * precoder.matrix()), &r, p / precoder.rank() as f64, cap)
                            .expect("noise keeps the covariance positive definite")
                    }
                    Service::Joint { a, b, wa, wb, .. } => {
                        let c = NcjtComposite {
                            h_a: self.desired_channel(a, u),
                            h_b: self.desired_channel(b, u),
                            w_a: wa,
                            w_b: wb,
                        };
                        ncjt_link_quality(&c, &r, p, cap).expect("noise keeps the covariance positive definite")
                    }
                }
            })
            .collect()
    }

    fn step(&mut self, tti: u64, in_measurement: bool) -> Result<(), RunError> {
        // (1) Arrivals.
        let mut buf = std::mem::take(&mut self.arrival_buf);
        self.arrivals.arrivals_in(tti, &mut buf);
        for _ in 0..buf.len() {
            self.spawn_ue(tti, in_measurement);
        }
        self.arrival_buf = buf;
        if self.ues.len() > self.cfg.engine.max_live_ues {
            return Err(RunError::Overload {
                tti,
                live: self.ues.len(),
                limit: self.cfg.engine.max_live_ues,
            });
        }

        // (2) Fading update for UEs that existed before this TTI.
        let rho = self.cfg.channel.rho;
        for ue in &mut self.ues {
            if ue.transfer.arrival_tti < tti {
                for l in &mut ue.links {
                    l.fading.advance(rho, &mut l.rng);
                    l.refresh();
                }
            }
        }

        // (3) Interference estimates from the previous TTI.
        let r_out: Vec<CMat> = (0..self.ues.len()).map(|u| self.estimate_r_out(u)).collect();

        // (4) Scheduling.
        let services = self.schedule(tti, &r_out);
        let tx = self.transmissions(&services);

        // (5) Realized quality, (6) delivery.
        let qualities = self.realize(&services, &tx);
        let bits_per_tti = self.cfg.engine.bandwidth_hz * self.cfg.engine.tti_s;
        let mut served_rate = BTreeMap::new();
        for (s, q) in services.iter().zip(&qualities) {
            let u = match *s {
                Service::Single { ue, .. } | Service::Joint { ue, .. } => ue,
            };
            let bits = (q.spectral_efficiency() * bits_per_tti).floor() as u64;
            let live = &mut self.ues[u];
            let used = record_delivery(&mut live.transfer, bits, tti);
            self.bits.delivered += used;
            served_rate.insert(live.ue.id, used as f64 / self.cfg.engine.tti_s);
        }

        // (7) Bookkeeping.
        if in_measurement {
            self.ru.total_ttis += 1;
            for t in &tx {
                self.ru.busy_ttis[t.trp] += 1;
            }
        }
        self.pf.update(&served_rate);
        let scheme = self.cfg.scheme.name();
        let tti_s = self.cfg.engine.tti_s;
        let mut kept = Vec::with_capacity(self.ues.len());
        for live in self.ues.drain(..) {
            if live.transfer.is_complete() {
                self.bits.completed += live.transfer.size_bits;
                self.pf.remove(live.ue.id);
                if live.measured {
                    self.measured_completions += 1;
                    self.records.push(TransferRecord {
                        ue_id: live.ue.id,
                        arrival_tti: live.transfer.arrival_tti,
                        completion_tti: live.transfer.completion_tti.expect("complete"),
                        upt_bps: upt(&live.transfer, tti_s),
                        serving_cluster: live.cluster,
                        scheme: scheme.to_string(),
                    });
                }
            } else {
                kept.push(live);
            }
        }
        self.ues = kept;
        self.prev_tx = tx;
        Ok(())
    }
}

fn neg(v: [f64; 3]) -> [f64; 3] {
    [-v[0], -v[1], -v[2]]
}

/// Phase boundaries of a run.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Stop {
    /// Stop when the measurement phase ends (RU only).
    AfterMeasurement,
    /// Continue through the drain phase.
    AfterDrain,
}

fn simulate(cfg: &SimConfig, seed: u64, stop: Stop) -> Result<(World<'_>, u64, u64, usize), RunError> {
    let e = &cfg.engine;
    let mut world = World::new(cfg, seed)?;
    let mut tti = 0u64;
    let meas_start = e.warmup_ttis;
    let min_end = meas_start + e.measure_ttis;
    let max_end = meas_start + e.max_measure_ttis.max(e.measure_ttis);
    // Measurement phase.
    let meas_end = loop {
        let in_meas = tti >= meas_start;
        world.step(tti, in_meas)?;
        tti += 1;
        if tti >= min_end && (world.measured_completions >= e.min_completions || tti >= max_end) {
            break tti;
        }
    };
    if stop == Stop::AfterDrain {
        let drain_end = meas_end + e.drain_cap_ttis;
        while tti < drain_end && world.ues.iter().any(|u| u.measured) {
            world.step(tti, false)?;
            tti += 1;
        }
    }
    let unfinished = world.ues.iter().filter(|u| u.measured).count();
    Ok((world, tti, meas_end, unfinished))
}

fn check_config(cfg: &SimConfig) -> Result<(), RunError> {
    let e = &cfg.engine;
    if !(cfg.lambda_per_s.is_finite() && cfg.lambda_per_s >= 0.0) {
        return Err(RunError::Invalid(format!("arrival rate {} must be finite and non-negative", cfg.lambda_per_s)));
    }
    if e.measure_ttis == 0 {
        return Err(RunError::Invalid("measurement length must be positive".into()));
    }
    if !(e.tti_s > 0.0 && e.bandwidth_hz > 0.0 && e.tx_power_dbm.is_finite()) {
        return Err(RunError::Invalid("TTI, bandwidth and power must be positive and finite".into()));
    }
    Ok(())
}

/// Runs one seed: warm-up, measurement and drain.
pub fn run(cfg: &SimConfig, seed: u64) -> Result<RunOutput, RunError> {
    check_config(cfg)?;
    let (world, ttis, meas_end, unfinished) = simulate(cfg, seed, Stop::AfterDrain)?;
    if world.records.is_empty() {
        return Err(RunError::UnderRun {
            lambda_per_s: cfg.lambda_per_s,
            arrivals: world.measured_arrivals,
        });
    }
    let upts: Vec<f64> = world.records.iter().map(|r| r.upt_bps).collect();
    let mut bits = world.bits;
    bits.in_flight_delivered = world.ues.iter().map(|u| u.transfer.delivered_bits()).sum();
    let summary = RunSummary {
        scenario: cfg.scenario,
        scheme: cfg.scheme,
        n_tx: cfg.n_tx(),
        target_ru: None,
        achieved_ru: world.ru.ru(),
        lambda_per_s: cfg.lambda_per_s,
        mean_upt_bps: mean(&upts),
        edge_upt_bps: percentile(&upts, EDGE_PERCENTILE),
        n_samples: upts.len(),
        seed,
    };
    Ok(RunOutput {
        summary,
        records: world.records,
        schedule_log: world.log,
        ru: world.ru,
        bits,
        unfinished,
        ttis_simulated: ttis,
        measurement_end_tti: meas_end,
    })
}

/// Resource utilization of the measurement phase, without the drain.
pub fn measure_ru(cfg: &SimConfig, seed: u64) -> Result<RuAccounting, RunError> {
    check_config(cfg)?;
    let (world, ..) = simulate(cfg, seed, Stop::AfterMeasurement)?;
    Ok(world.ru)
}

/// Pooled RU of `cfg` over `seeds`.
pub fn pooled_ru(cfg: &SimConfig, seeds: &[u64]) -> Result<f64, RunError> {
    let mut acc: Option<RuAccounting> = None;
    for &s in seeds {
        let ru = measure_ru(cfg, s)?;
        match acc.as_mut() {
            Some(a) => a.merge(&ru),
            None => acc = Some(ru),
        }
    }
    Ok(acc.map_or(0.0, |a| a.ru()))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CalibrationParams {
    /// Accepted distance between achieved and target RU.
    pub tolerance: f64,
    /// Starting rate; derived from the link budget when absent.
    pub initial_lambda_per_s: Option<f64>,
    pub max_expansions: usize,
    pub max_iterations: usize,
}

impl Default for CalibrationParams {
    fn default() -> Self {
        Self {
            tolerance: 0.01,
            initial_lambda_per_s: None,
            max_expansions: 20,
            max_iterations: 40,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub lambda_per_s: f64,
    pub achieved_ru: f64,
    pub target_ru: f64,
    /// Every `(λ, RU)` evaluated, in order; `None` marks an overloaded run.
    pub history: Vec<(f64, Option<f64>)>,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CalibrationError {
    #[error("target RU {0} outside (0, 0.7]")]
    InvalidTarget(f64),
    #[error("could not bracket RU {target}: {history:?}")]
    Bracket { target: f64, history: Vec<(f64, Option<f64>)> },
    #[error("no convergence to RU {target} within {iterations} iterations: {history:?}")]
    NoConvergence {
        target: f64,
        iterations: usize,
        history: Vec<(f64, Option<f64>)>,
    },
    #[error(transparent)]
    Run(#[from] RunError),
}

/// Finds the arrival rate at which the baseline scheme reaches `target_ru`
/// (pooled over `seeds`) by bracketing and Illinois false position. The
/// returned rate reproduces `achieved_ru` exactly when re-simulated with the
/// same seeds.
pub fn calibrate_ru(
    cfg: &SimConfig,
    seeds: &[u64],
    target_ru: f64,
    params: &CalibrationParams,
) -> Result<Calibration, CalibrationError> {
    if !(target_ru > 0.0 && target_ru <= 0.7) {
        return Err(CalibrationError::InvalidTarget(target_ru));
    }
    assert!(!seeds.is_empty(), "calibration needs at least one seed");
    let mut base = cfg.clone();
    base.scheme = SchemeMode::Baseline;
    let mut history = Vec::new();
    let mut eval = |lambda: f64, history: &mut Vec<(f64, Option<f64>)>| -> Result<Option<f64>, RunError> {
        base.lambda_per_s = lambda;
        let r = match pooled_ru(&base, seeds) {
            Ok(r) => Some(r),
            Err(RunError::Overload { .. }) => None,
            Err(e) => return Err(e),
        };
        history.push((lambda, r));
        Ok(r)
    };
    let done = |lambda: f64, ru: f64, history: Vec<(f64, Option<f64>)>| Calibration {
        lambda_per_s: lambda,
        achieved_ru: ru,
        target_ru,
        history,
    };
    let tol = params.tolerance;

    // Bracket [lo, hi] with RU(lo) < target < RU(hi); overload counts as high.
    let mut lo = (0.0, 0.0);
    let mut hi_lambda = params.initial_lambda_per_s.unwrap_or_else(|| default_initial_lambda(cfg, target_ru));
    let mut hi_ru;
    let mut expansions = 0;
    loop {
        hi_ru = eval(hi_lambda, &mut history)?;
        match hi_ru {
            Some(r) if (r - target_ru).abs() <= tol => return Ok(done(hi_lambda, r, history)),
            Some(r) if r < target_ru => {
                lo = (hi_lambda, r);
                // Linear extrapolation from the origin, with a floor on growth.
                let factor = if r > 0.0 { (target_ru / r * 1.05).clamp(1.2, 4.0) } else { 4.0 };
                hi_lambda *= factor;
            }
            _ => break,
        }
        expansions += 1;
        if expansions > params.max_expansions {
            return Err(CalibrationError::Bracket {
                target: target_ru,
                history,
            });
        }
    }

    // Illinois false position; bisection while the upper end is overloaded.
    let (mut a, mut fa) = (lo.0, lo.1 - target_ru);
    let (mut b, mut fb) = (hi_lambda, hi_ru.map(|r| r - target_ru));
    let mut side = 0i8;
    for _ in 0..params.max_iterations {
        // The bracket collapsed: RU jumps past the target (overload) at a
        // single rate.
        if b - a <= 1e-9 * b {
            return Err(CalibrationError::Bracket {
                target: target_ru,
                history,
            });
        }
        let c = match fb {
            Some(fb) => b - fb * (b - a) / (fb - fa),
            None => 0.5 * (a + b),
        };
        let c = c.clamp(a + 1e-3 * (b - a), b - 1e-3 * (b - a));
        let rc = eval(c, &mut history)?;
        match rc {
            Some(r) if (r - target_ru).abs() <= tol => return Ok(done(c, r, history)),
            Some(r) if r < target_ru => {
                a = c;
                fa = r - target_ru;
                if side == -1 {
                    fb = fb.map(|v| v / 2.0);
                }
                side = -1;
            }
            _ => {
                b = c;
                fb = rc.map(|r| r - target_ru);
                if side == 1 {
                    fa /= 2.0;
                }
                side = 1;
            }
        }
    }
    Err(CalibrationError::NoConvergence {
        target: target_ru,
        iterations: params.max_iterations,
        history,
    })
}

/// Rate that would give `target_ru` if every file were served at the
/// per-layer cap on two layers.
fn default_initial_lambda(cfg: &SimConfig, target_ru: f64) -> f64 {
    let layout = generate_layout(cfg.scenario, cfg.scale, &cfg.layout);
    let peak_bps = cfg.link.se_cap * 2.0 * cfg.engine.bandwidth_hz;
    let service_s = cfg.engine.file_size_bits as f64 / peak_bps;
    target_ru * layout.n_trps() as f64 / service_s
}
