//! Proportional-fair scheduling: the uncoordinated per-TRP baseline and the
//! joint per-cluster scheduler over single-TRP, blanking and two-TRP NC-JT
//! hypotheses.
//!
//! The joint scheduler works on a frozen [`ClusterSnapshot`]. Interference
//! from outside the cluster is the caller's estimate `r_out`; interference
//! from a cluster TRP that transmits to somebody else is the per-TRP term
//! `z`, which does not depend on whom that TRP serves. Link qualities are
//! therefore a function of (UE, serving TRPs, set of transmitting TRPs) and
//! are computed once per such key into an options table.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::linalg::CMat;
use crate::link::{ncjt_rank_search, rank_adapt_with, ChannelSvd, LinkQuality, Precoder, MAX_RANK};

/// Largest supported coordination cluster.
pub const MAX_CLUSTER_TRPS: usize = 8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SchemeMode {
    Baseline,
    Dps,
    Ncjt,
}

impl SchemeMode {
    pub const ALL: [SchemeMode; 3] = [SchemeMode::Baseline, SchemeMode::Dps, SchemeMode::Ncjt];

    pub fn name(self) -> &'static str {
        match self {
            SchemeMode::Baseline => "baseline",
            SchemeMode::Dps => "dps",
            SchemeMode::Ncjt => "ncjt",
        }
    }
}

impl fmt::Display for SchemeMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SchemeMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().replace(['-', '_'], "").as_str() {
            "baseline" | "single" | "singletrp" => Ok(SchemeMode::Baseline),
            "dps" => Ok(SchemeMode::Dps),
            "ncjt" => Ok(SchemeMode::Ncjt),
            _ => Err(format!("unknown scheme '{s}' (expected baseline, dps or ncjt)")),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SchedulerParams {
    /// PF forgetting factor per TTI.
    pub pf_beta: f64,
    /// Lower bound on PF averages, bits/s.
    pub pf_floor_bps: f64,
    /// PF average assigned to a new UE, bits/s. When absent, the rank-1
    /// rate of a cell-edge link at 0 dB SINR (1 bit/s/Hz over the band).
    pub pf_initial_bps: Option<f64>,
    /// UEs per TRP entering joint enumeration; 0 disables pruning.
    pub prune_top_k: usize,
    /// In clusters larger than two, lets TRPs outside an NC-JT pair serve
    /// other UEs in the same TTI.
    pub allow_third_trp: bool,
}

impl Default for SchedulerParams {
    fn default() -> Self {
        Self {
            pf_beta: 0.01,
            pf_floor_bps: 1e3,
            pf_initial_bps: None,
            prune_top_k: 4,
            allow_third_trp: true,
        }
    }
}

/// `rate / avg`.
///
/// # Panics
/// If `avg_throughput` is not positive.
pub fn pf_metric(instantaneous_rate: f64, avg_throughput: f64) -> f64 {
    assert!(avg_throughput > 0.0, "PF average must be positive, got {avg_throughput}");
    instantaneous_rate / avg_throughput
}

/// Exponentially weighted served throughput per UE.
#[derive(Clone, Debug, PartialEq)]
pub struct PfState {
    beta: f64,
    floor: f64,
    initial: f64,
    avg: BTreeMap<u64, f64>,
}

impl PfState {
    /// `bandwidth_hz` sets the default initial average.
    pub fn new(params: &SchedulerParams, bandwidth_hz: f64) -> Self {
        assert!(
            params.pf_beta > 0.0 && params.pf_beta < 1.0,
            "PF forgetting factor must lie in (0, 1)"
        );
        assert!(params.pf_floor_bps > 0.0, "PF floor must be positive");
        Self {
            beta: params.pf_beta,
            floor: params.pf_floor_bps,
            initial: params
                .pf_initial_bps
                .unwrap_or(bandwidth_hz)
                .max(params.pf_floor_bps),
            avg: BTreeMap::new(),
        }
    }

    pub fn insert(&mut self, ue_id: u64) {
        self.avg.insert(ue_id, self.initial);
    }

    pub fn remove(&mut self, ue_id: u64) {
        self.avg.remove(&ue_id);
    }

    pub fn get(&self, ue_id: u64) -> f64 {
        *self
            .avg
            .get(&ue_id)
            .unwrap_or_else(|| panic!("UE {ue_id} has no PF state"))
    }

    pub fn len(&self) -> usize {
        self.avg.len()
    }

    pub fn is_empty(&self) -> bool {
        self.avg.is_empty()
    }

    /// `avg ← max(floor, (1−β)·avg + β·rate)` for every tracked UE; UEs
    /// absent from `served_rate` were served at rate 0.
    pub fn update(&mut self, served_rate: &BTreeMap<u64, f64>) {
        for (id, avg) in self.avg.iter_mut() {
            let r = served_rate.get(id).copied().unwrap_or(0.0);
            *avg = ((1.0 - self.beta) * *avg + self.beta * r).max(self.floor);
        }
    }

    /// Scales every average by `factor`; used to check scale invariance.
    pub fn scaled(&self, factor: f64) -> Self {
        let mut s = self.clone();
        for v in s.avg.values_mut() {
            *v *= factor;
        }
        s
    }
}

/// Physical constants shared by every link evaluation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LinkBudget {
    /// Transmit power of one TRP, W.
    pub tx_power_w: f64,
    pub bandwidth_hz: f64,
    pub tti_s: f64,
    pub se_cap: f64,
}

impl LinkBudget {
    /// Rate used by the scheduler: the link rate, capped at what the UE
    /// still needs to finish its file within the TTI.
    pub fn useful_rate(&self, spectral_efficiency: f64, remaining_bits: u64) -> f64 {
        (spectral_efficiency * self.bandwidth_hz).min(remaining_bits as f64 / self.tti_s)
    }
}

/// One active UE as seen by its cluster scheduler.
#[derive(Clone, Debug, PartialEq)]
pub struct ClusterCandidate {
    pub ue_id: u64,
    pub avg_throughput_bps: f64,
    pub remaining_bits: u64,
    /// Desired channel from each cluster TRP, in cluster order.
    pub h: Vec<CMat>,
    /// Interference covariance this UE sees from each cluster TRP when that
    /// TRP serves another UE, in cluster order.
    pub z: Vec<CMat>,
    /// Interference-plus-noise covariance estimate from outside the cluster.
    pub r_out: CMat,
}

/// Frozen input of one cluster scheduling decision.
#[derive(Clone, Debug, PartialEq)]
pub struct ClusterSnapshot {
    pub cluster_id: usize,
    /// Global TRP ids in cluster order.
    pub trp_ids: Vec<usize>,
    pub ues: Vec<ClusterCandidate>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum HypothesisKind {
    /// Single-TRP transmissions and blanking only.
    Dps,
    /// Contains one two-TRP joint transmission.
    Ncjt,
}

/// A UE served under one hypothesis, with its link evaluated for the set of
/// cluster TRPs that transmit in that hypothesis.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ServeOption {
    /// Index into [`ClusterSnapshot::ues`].
    pub ue: usize,
    /// Cluster-local serving TRP, and the second TRP for NC-JT.
    pub trp: usize,
    pub partner: Option<usize>,
    pub precoder: Precoder,
    pub partner_precoder: Option<Precoder>,
    /// Bitmask of cluster-local TRPs transmitting alongside.
    pub active_mask: u8,
    pub quality: LinkQuality,
    pub rate_bps: f64,
    pub pf: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Slot {
    Blank,
    /// Index into [`HypothesisSet::options`].
    Serve(usize),
}

#[derive(Clone, Debug, PartialEq)]
pub struct SchedulingHypothesis {
    /// One slot per cluster TRP. Both TRPs of an NC-JT transmission point at
    /// the same option.
    pub slots: Vec<Slot>,
    pub kind: HypothesisKind,
    pub pf_value: f64,
}

impl SchedulingHypothesis {
    pub fn n_transmitting(&self) -> usize {
        self.slots.iter().filter(|s| matches!(s, Slot::Serve(_))).count()
    }
}

/// Materialized per-TRP assignment of a hypothesis.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Assignment {
    Blank,
    Serve {
        ue_id: u64,
        precoder: Precoder,
        rank: usize,
        /// Cluster-local index of the other TRP in an NC-JT transmission.
        joint_with: Option<usize>,
    },
}

#[derive(Clone, Debug, PartialEq)]
pub struct HypothesisSet {
    pub options: Vec<ServeOption>,
    pub hypotheses: Vec<SchedulingHypothesis>,
}

impl HypothesisSet {
    pub fn assignments(&self, snapshot: &ClusterSnapshot, h: &SchedulingHypothesis) -> Vec<Assignment> {
        h.slots
            .iter()
            .enumerate()
            .map(|(trp, slot)| match *slot {
                Slot::Blank => Assignment::Blank,
                Slot::Serve(o) => {
                    let opt = &self.options[o];
                    let (precoder, joint_with) = if opt.trp == trp {
                        (opt.precoder, opt.partner)
                    } else {
                        (opt.partner_precoder.expect("joint option has a partner precoder"), Some(opt.trp))
                    };
                    Assignment::Serve {
                        ue_id: snapshot.ues[opt.ue].ue_id,
                        precoder,
                        rank: precoder.rank(),
                        joint_with,
                    }
                }
            })
            .collect()
    }

    /// Distinct options used by `h`, in slot order.
    pub fn served(&self, h: &SchedulingHypothesis) -> Vec<usize> {
        let mut out: Vec<usize> = Vec::new();
        for s in &h.slots {
            if let Slot::Serve(o) = *s {
                if !out.contains(&o) {
                    out.push(o);
                }
            }
        }
        out
    }
}

struct Enumerator<'a> {
    snap: &'a ClusterSnapshot,
    budget: LinkBudget,
    svds: Vec<Option<ChannelSvd>>,
    /// Option index per (ue, trp, partner or none, mask), `u32::MAX` if not
    /// evaluated yet.
    cache: Vec<u32>,
    set: HypothesisSet,
}

impl<'a> Enumerator<'a> {
    fn new(snap: &'a ClusterSnapshot, budget: LinkBudget) -> Self {
        let n = snap.trp_ids.len();
        assert!(
            (1..=MAX_CLUSTER_TRPS).contains(&n),
            "cluster size {n} outside 1..={MAX_CLUSTER_TRPS}"
        );
        for u in &snap.ues {
            assert_eq!(u.h.len(), n, "UE {} has {} channels for {n} TRPs", u.ue_id, u.h.len());
            assert_eq!(u.z.len(), n, "UE {} has {} interference terms for {n} TRPs", u.ue_id, u.z.len());
        }
        Self {
            snap,
            budget,
            svds: vec![None; snap.ues.len() * n],
            cache: vec![u32::MAX; (snap.ues.len() * n * (n + 1)) << n],
            set: HypothesisSet {
                options: Vec::new(),
                hypotheses: Vec::new(),
            },
        }
    }

    fn n_trps(&self) -> usize {
        self.snap.trp_ids.len()
    }

    fn svd(&mut self, ue: usize, trp: usize) -> ChannelSvd {
        let i = ue * self.n_trps() + trp;
        if self.svds[i].is_none() {
            self.svds[i] = Some(ChannelSvd::new(&self.snap.ues[ue].h[trp]));
        }
        self.svds[i].expect("just filled")
    }

    fn covariance(&self, ue: usize, serving: u8, mask: u8) -> CMat {
        let c = &self.snap.ues[ue];
        let mut r = c.r_out;
        for j in 0..self.n_trps() {
            if mask & (1 << j) != 0 && serving & (1 << j) == 0 {
                r += c.z[j];
            }
        }
        r
    }

    /// Option index for `ue` served by `trp` (and `partner`) while the TRPs
    /// in `mask` transmit.
    fn option(&mut self, ue: usize, trp: usize, partner: Option<usize>, mask: u8) -> usize {
        let n = self.n_trps();
        let key = (((ue * n + trp) * (n + 1) + partner.map_or(n, |p| p)) << n) | mask as usize;
        if self.cache[key] != u32::MAX {
            return self.cache[key] as usize;
        }
        let cand = &self.snap.ues[ue];
        let p = self.budget.tx_power_w;
        let cap = self.budget.se_cap;
        let opt = match partner {
            None => {
                let r = self.covariance(ue, 1 << trp, mask);
                let svd = self.svd(ue, trp);
                let h = &cand.h[trp];
                let max_rank = svd.max_rank().min(MAX_RANK);
                let (precoder, quality) = rank_adapt_with(&svd, h, &r, p, max_rank, cap);
                self.finish(ue, trp, None, precoder, None, mask, quality)
            }
            Some(b) => {
                let r = self.covariance(ue, (1 << trp) | (1 << b), mask);
                let svd_a = self.svd(ue, trp);
                let svd_b = self.svd(ue, b);
                let (comp, quality) = ncjt_rank_search(&svd_a, &cand.h[trp], &svd_b, &cand.h[b], &r, p, cap);
                self.finish(ue, trp, Some(b), comp.w_a, Some(comp.w_b), mask, quality)
            }
        };
        let i = self.set.options.len();
        self.set.options.push(opt);
        self.cache[key] = i as u32;
        i
    }

    #[allow(clippy::too_many_arguments)]
    fn finish(
        &self,
        ue: usize,
        trp: usize,
        partner: Option<usize>,
        precoder: Precoder,
        partner_precoder: Option<Precoder>,
        mask: u8,
        quality: LinkQuality,
    ) -> ServeOption {
        let cand = &self.snap.ues[ue];
        let rate_bps = self.budget.useful_rate(quality.spectral_efficiency(), cand.remaining_bits);
        ServeOption {
            ue,
            trp,
            partner,
            precoder,
            partner_precoder,
            active_mask: mask,
            quality,
            rate_bps,
            pf: pf_metric(rate_bps, cand.avg_throughput_bps),
        }
    }

    /// Top-`k` UEs per TRP by stand-alone PF metric, each list in ascending
    /// UE index order.
    fn candidates(&mut self, top_k: usize) -> Vec<Vec<usize>> {
        let n_ues = self.snap.ues.len();
        let mut out = Vec::with_capacity(self.n_trps());
        for a in 0..self.n_trps() {
            let mut scored: Vec<(usize, f64)> = (0..n_ues)
                .map(|u| {
                    let o = self.option(u, a, None, 1 << a);
                    (u, self.set.options[o].pf)
                })
                .collect();
            if top_k > 0 && scored.len() > top_k {
                scored.sort_by(|x, y| y.1.total_cmp(&x.1).then(x.0.cmp(&y.0)));
                scored.truncate(top_k);
                scored.sort_by_key(|x| x.0);
            }
            out.push(scored.into_iter().map(|x| x.0).collect());
        }
        out
    }

    fn push(&mut self, assign: &[Option<(usize, Option<usize>)>], kind: HypothesisKind) {
        let mut mask = 0u8;
        for (j, a) in assign.iter().enumerate() {
            if a.is_some() {
                mask |= 1 << j;
            }
        }
        let mut slots = vec![Slot::Blank; assign.len()];
        let mut pf_value = 0.0;
        for (j, a) in assign.iter().enumerate() {
            match *a {
                // The partner slot of an NC-JT pair is filled by its lead.
                Some((ue, partner)) if partner != Some(usize::MAX) => {
                    let o = self.option(ue, j, partner, mask);
                    pf_value += self.set.options[o].pf;
                    slots[j] = Slot::Serve(o);
                    if let Some(b) = partner {
                        slots[b] = Slot::Serve(o);
                    }
                }
                _ => {}
            }
        }
        self.set.hypotheses.push(SchedulingHypothesis {
            slots,
            kind,
            pf_value,
        });
    }

    /// Every assignment of at most one distinct UE per free TRP, blank first.
    fn recurse_single(
        &mut self,
        trp: usize,
        assign: &mut Vec<Option<(usize, Option<usize>)>>,
        used: &mut Vec<bool>,
        cands: &[Vec<usize>],
        fixed: u8,
        allow_serve: bool,
        kind: HypothesisKind,
    ) {
        if trp == self.n_trps() {
            self.push(assign, kind);
            return;
        }
        if fixed & (1 << trp) != 0 {
            return self.recurse_single(trp + 1, assign, used, cands, fixed, allow_serve, kind);
        }
        assign[trp] = None;
        self.recurse_single(trp + 1, assign, used, cands, fixed, allow_serve, kind);
        if allow_serve {
            for &u in &cands[trp] {
                if used[u] {
                    continue;
                }
                used[u] = true;
                assign[trp] = Some((u, None));
                self.recurse_single(trp + 1, assign, used, cands, fixed, allow_serve, kind);
                used[u] = false;
            }
            assign[trp] = None;
        }
    }
}

/// Enumerates the joint scheduler's hypotheses for one cluster.
///
/// DPS hypotheses come first, blank-first and recursive over TRPs in
/// cluster order. In NC-JT mode the joint hypotheses are appended: for each
/// TRP pair `(a, b)`, `a < b`, and each UE that is a candidate of `a` or `b`,
/// the remaining TRPs blank or (if allowed) serve other UEs. The NC-JT list
/// therefore starts with the DPS list verbatim, and so does its options
/// table.
///
/// # Panics
/// If `mode` is [`SchemeMode::Baseline`].
pub fn enumerate_hypotheses(
    snapshot: &ClusterSnapshot,
    mode: SchemeMode,
    budget: LinkBudget,
    params: &SchedulerParams,
) -> HypothesisSet {
    assert!(mode != SchemeMode::Baseline, "the baseline does not use joint enumeration");
    let mut e = Enumerator::new(snapshot, budget);
    let n = e.n_trps();
    let cands = e.candidates(params.prune_top_k);
    let mut assign = vec![None; n];
    let mut used = vec![false; snapshot.ues.len()];
    e.recurse_single(0, &mut assign, &mut used, &cands, 0, true, HypothesisKind::Dps);
    if mode == SchemeMode::Ncjt {
        let allow_others = params.allow_third_trp;
        for a in 0..n {
            for b in a + 1..n {
                let mut pair_ues: Vec<usize> = cands[a].iter().chain(&cands[b]).copied().collect();
                pair_ues.sort_unstable();
                pair_ues.dedup();
                for u in pair_ues {
                    assign.iter_mut().for_each(|s| *s = None);
                    assign[a] = Some((u, Some(b)));
                    assign[b] = Some((u, Some(usize::MAX)));
                    used[u] = true;
                    let fixed = (1 << a) | (1 << b);
                    e.recurse_single(0, &mut assign, &mut used, &cands, fixed, allow_others, HypothesisKind::Ncjt);
                    used[u] = false;
                }
            }
        }
    }
    e.set
}

/// Index of the best hypothesis: highest PF sum, then fewest transmitting
/// TRPs, then lowest index.
///
/// # Panics
/// If `hypotheses` is empty.
pub fn select_hypothesis(hypotheses: &[SchedulingHypothesis]) -> usize {
    assert!(!hypotheses.is_empty(), "no hypotheses to select from");
    let mut best = 0;
    for (i, h) in hypotheses.iter().enumerate().skip(1) {
        let b = &hypotheses[best];
        if h.pf_value > b.pf_value || (h.pf_value == b.pf_value && h.n_transmitting() < b.n_transmitting()) {
            best = i;
        }
    }
    best
}

/// A UE attached to a baseline TRP.
#[derive(Clone, Debug, PartialEq)]
pub struct BaselineCandidate {
    pub ue_id: u64,
    pub avg_throughput_bps: f64,
    pub remaining_bits: u64,
    pub h: CMat,
    /// Interference-plus-noise estimate.
    pub r_est: CMat,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BaselineAssignment {
    /// Index into the candidate list.
    pub ue: usize,
    pub precoder: Precoder,
    pub quality: LinkQuality,
    pub rate_bps: f64,
    pub pf: f64,
}

/// PF argmax over the UEs attached to one TRP; `None` blanks the TRP. Ties
/// go to the lowest candidate index.
pub fn baseline_schedule(candidates: &[BaselineCandidate], budget: LinkBudget) -> Option<BaselineAssignment> {
    let mut best: Option<BaselineAssignment> = None;
    for (i, c) in candidates.iter().enumerate() {
        let svd = ChannelSvd::new(&c.h);
        let max_rank = svd.max_rank().min(MAX_RANK);
        let (precoder, quality) = rank_adapt_with(&svd, &c.h, &c.r_est, budget.tx_power_w, max_rank, budget.se_cap);
        let rate_bps = budget.useful_rate(quality.spectral_efficiency(), c.remaining_bits);
        let pf = pf_metric(rate_bps, c.avg_throughput_bps);
        if best.as_ref().is_none_or(|b| pf > b.pf) {
            best = Some(BaselineAssignment {
                ue: i,
                precoder,
                quality,
                rate_bps,
                pf,
            });
        }
    }
    best
}

/// One row of the scheduling log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScheduleLogRow {
    pub tti: u64,
    pub cluster: usize,
    pub trp: usize,
    pub ue: Option<u64>,
    /// `blank`, `single`, `dps` or `ncjt`.
    pub mode_tag: String,
    pub rank: usize,
    pub pf_value: f64,
}

#[cfg(test)]
mod tests {
    use super::*;
    use num_complex::Complex64;

    fn budget() -> LinkBudget {
        LinkBudget {
            tx_power_w: 1.0,
            bandwidth_hz: 1e6,
            tti_s: 1e-3,
            se_cap: 7.8,
        }
    }

    fn diag(n: usize, v: f64) -> CMat {
        CMat::scaled_identity(n, v)
    }

    fn cand(id: u64, gains: &[f64], avg: f64) -> ClusterCandidate {
        let h = gains
            .iter()
            .map(|&g| CMat::from_fn(2, 2, |i, j| if i == j { Complex64::new(g, 0.0) } else { Complex64::new(0.0, 0.0) }))
            .collect::<Vec<_>>();
        ClusterCandidate {
            ue_id: id,
            avg_throughput_bps: avg,
            remaining_bits: 1 << 40,
            z: h.iter().map(|m| m.gram_outer().scale(0.5)).collect(),
            h,
            r_out: diag(2, 0.01),
        }
    }

    fn snapshot(ues: Vec<ClusterCandidate>, n_trps: usize) -> ClusterSnapshot {
        ClusterSnapshot {
            cluster_id: 0,
            trp_ids: (0..n_trps).collect(),
            ues,
        }
    }

    #[test]
    fn pf_metric_ratio() {
        assert_eq!(pf_metric(10.0, 10.0), 1.0);
        assert_eq!(pf_metric(20.0, 10.0), 2.0);
    }

    #[test]
    #[should_panic(expected = "positive")]
    fn pf_metric_rejects_zero_average() {
        pf_metric(1.0, 0.0);
    }

    #[test]
    fn enumeration_counts() {
        let p = SchedulerParams::default();
        let one = snapshot(vec![cand(7, &[1.0, 0.5], 1e3)], 2);
        assert_eq!(enumerate_hypotheses(&one, SchemeMode::Dps, budget(), &p).hypotheses.len(), 3);
        assert_eq!(enumerate_hypotheses(&one, SchemeMode::Ncjt, budget(), &p).hypotheses.len(), 4);
        let none = snapshot(vec![], 2);
        let set = enumerate_hypotheses(&none, SchemeMode::Ncjt, budget(), &p);
        assert_eq!(set.hypotheses.len(), 1);
        assert_eq!(set.hypotheses[0].n_transmitting(), 0);
    }

    #[test]
    fn three_trp_cluster_counts() {
        // One UE: DPS = blank + 3 single; NC-JT adds one per pair.
        let p = SchedulerParams::default();
        let s = snapshot(vec![cand(1, &[1.0, 0.8, 0.6], 1e3)], 3);
        assert_eq!(enumerate_hypotheses(&s, SchemeMode::Dps, budget(), &p).hypotheses.len(), 4);
        assert_eq!(enumerate_hypotheses(&s, SchemeMode::Ncjt, budget(), &p).hypotheses.len(), 7);
        // Two UEs, third TRP may serve the other UE or blank.
        let s = snapshot(vec![cand(1, &[1.0, 0.8, 0.6], 1e3), cand(2, &[0.3, 0.9, 0.7], 1e3)], 3);
        let dps = enumerate_hypotheses(&s, SchemeMode::Dps, budget(), &p).hypotheses.len();
        let ncjt = enumerate_hypotheses(&s, SchemeMode::Ncjt, budget(), &p).hypotheses.len();
        // DPS: all injective partial maps from 3 TRPs into 2 UEs = 1 + 6 + 6 = 13.
        assert_eq!(dps, 13);
        // NC-JT: 3 pairs × 2 UEs × (blank + other UE) = 12.
        assert_eq!(ncjt - dps, 12);
        let no_third = SchedulerParams {
            allow_third_trp: false,
            ..SchedulerParams::default()
        };
        let ncjt = enumerate_hypotheses(&s, SchemeMode::Ncjt, budget(), &no_third).hypotheses.len();
        assert_eq!(ncjt - dps, 6);
    }

    #[test]
    fn tie_prefers_fewer_transmitting() {
        let h = |slots: Vec<Slot>, pf: f64| SchedulingHypothesis {
            slots,
            kind: HypothesisKind::Dps,
            pf_value: pf,
        };
        let list = vec![h(vec![Slot::Serve(0), Slot::Serve(1)], 2.0), h(vec![Slot::Serve(0), Slot::Blank], 2.0)];
        assert_eq!(select_hypothesis(&list), 1);
        assert_eq!(select_hypothesis(&list[..1]), 0);
    }

    #[test]
    fn pf_state_recurrence() {
        let p = SchedulerParams::default();
        let mut s = PfState::new(&p, 1e6);
        s.insert(1);
        s.insert(2);
        let served: BTreeMap<u64, f64> = [(1, 1e6)].into_iter().collect();
        for _ in 0..5000 {
            s.update(&served);
        }
        assert!((s.get(1) - 1e6).abs() < 1.0);
        assert_eq!(s.get(2), p.pf_floor_bps);
    }

    #[test]
    fn baseline_picks_pf_argmax() {
        let mk = |id, g: f64, avg| BaselineCandidate {
            ue_id: id,
            avg_throughput_bps: avg,
            remaining_bits: 1 << 40,
            h: diag(2, g),
            r_est: diag(2, 0.01),
        };
        assert!(baseline_schedule(&[], budget()).is_none());
        let c = [mk(1, 1.0, 1e6), mk(2, 1.0, 1e5)];
        assert_eq!(baseline_schedule(&c, budget()).unwrap().ue, 1);
        let c = [mk(1, 1.0, 1e5), mk(2, 1.0, 1e5)];
        assert_eq!(baseline_schedule(&c, budget()).unwrap().ue, 0);
    }

    #[test]
    fn useful_rate_caps_at_remaining() {
        let b = budget();
        assert_eq!(b.useful_rate(2.0, 1 << 40), 2e6);
        assert_eq!(b.useful_rate(2.0, 100), 1e5);
    }
}
