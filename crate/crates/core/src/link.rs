//! Link abstraction: SVD precoding, per-layer MMSE-IRC SINR, rank adaptation
//! and non-coherent joint transmission from two TRPs.
//!
//! For a transmission with layer columns `g_k = √p·(h·w)[:, k]` received
//! against interference-plus-noise covariance `R`, layer `k` sees
//!
//! ```text
//! SINR_k = g_kᴴ · (R + Σ_{j≠k} g_j·g_jᴴ)⁻¹ · g_k
//! ```
//!
//! and contributes `min(log2(1 + SINR_k), se_cap)` bits/s/Hz.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::{CMat, CVec, Cholesky, Svd, MAX_DIM};

/// Largest number of layers any UE can receive.
pub const MAX_RANK: usize = 4;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LinkParams {
    /// Per-layer spectral efficiency ceiling in bits/s/Hz.
    pub se_cap: f64,
}

impl Default for LinkParams {
    fn default() -> Self {
        Self { se_cap: 7.8 }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum LinkError {
    #[error("interference-plus-noise covariance is not Hermitian positive definite")]
    NotPositiveDefinite,
}

/// Semi-unitary precoder, `n_tx × rank`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Precoder {
    w: CMat,
}

impl Precoder {
    pub fn new(w: CMat) -> Self {
        assert!(
            (1..=MAX_RANK).contains(&w.cols()) && w.cols() <= w.rows(),
            "precoder rank {} invalid for {} ports",
            w.cols(),
            w.rows()
        );
        Self { w }
    }

    pub fn rank(&self) -> usize {
        self.w.cols()
    }

    pub fn n_tx(&self) -> usize {
        self.w.rows()
    }

    pub fn matrix(&self) -> &CMat {
        &self.w
    }

    /// Largest entry of `wᴴw − I`.
    pub fn orthonormality_error(&self) -> f64 {
        (self.w.adjoint() * self.w).max_abs_diff(&CMat::identity(self.rank()))
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LinkQuality {
    sinr: [f64; MAX_RANK],
    rank: usize,
    spectral_efficiency: f64,
}

impl LinkQuality {
    pub fn from_sinr(sinr_per_layer: &[f64], se_cap: f64) -> Self {
        assert!((1..=MAX_RANK).contains(&sinr_per_layer.len()));
        let mut sinr = [0.0; MAX_RANK];
        sinr[..sinr_per_layer.len()].copy_from_slice(sinr_per_layer);
        let spectral_efficiency = sinr_per_layer.iter().map(|&s| layer_se(s, se_cap)).sum();
        Self {
            sinr,
            rank: sinr_per_layer.len(),
            spectral_efficiency,
        }
    }

    pub fn sinr_per_layer(&self) -> &[f64] {
        &self.sinr[..self.rank]
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    /// Sum over layers, bits/s/Hz.
    pub fn spectral_efficiency(&self) -> f64 {
        self.spectral_efficiency
    }
}

/// Capped Shannon efficiency of one layer.
pub fn layer_se(sinr: f64, se_cap: f64) -> f64 {
    (1.0 + sinr.max(0.0)).log2().min(se_cap)
}

/// Right singular vectors of a channel, reusable across ranks.
#[derive(Clone, Copy, Debug)]
pub struct ChannelSvd {
    svd: Svd,
    max_rank: usize,
}

impl ChannelSvd {
    pub fn new(h: &CMat) -> Self {
        Self {
            svd: Svd::new(h),
            max_rank: h.rows().min(h.cols()).min(MAX_RANK),
        }
    }

    pub fn max_rank(&self) -> usize {
        self.max_rank
    }

    pub fn singular_values(&self) -> &[f64] {
        self.svd.singular_values()
    }

    /// Top-`rank` right singular vectors.
    pub fn precoder(&self, rank: usize) -> Precoder {
        assert!(
            (1..=self.max_rank).contains(&rank),
            "rank {rank} outside 1..={}",
            self.max_rank
        );
        Precoder::new(self.svd.v().leading_columns(rank))
    }
}

/// Top-`rank` right singular vectors of `h`, strongest first.
pub fn svd_precoder(h: &CMat, rank: usize) -> Precoder {
    ChannelSvd::new(h).precoder(rank)
}

fn validate_covariance(r_ipn: &CMat) -> Result<(), LinkError> {
    let scale = (0..r_ipn.rows()).map(|i| r_ipn[(i, i)].re.abs()).fold(0.0, f64::max);
    if !r_ipn.is_hermitian(1e-9 * scale) {
        return Err(LinkError::NotPositiveDefinite);
    }
    Cholesky::new(r_ipn).map(|_| ()).ok_or(LinkError::NotPositiveDefinite)
}

/// Per-layer SINR of whitened, power-scaled layer columns `gt = L⁻¹·g`
/// where `R = L·Lᴴ`. With `M = gtᴴ·gt` the SINR of layer `k` is the Schur
/// complement `M_kk − m_kᴴ·(I + M_oo)⁻¹·m_k` over the other layers `o`.
fn whitened_layer_sinrs(gt: &CMat, out: &mut [f64; MAX_RANK]) {
    let rank = gt.cols();
    let m = &gt.adjoint() * gt;
    for k in 0..rank {
        let others: [usize; MAX_RANK - 1] = std::array::from_fn(|i| if i < k { i } else { i + 1 });
        let no = rank - 1;
        let mut sinr = m[(k, k)].re;
        if no > 0 {
            let a = CMat::from_fn(no, no, |i, j| {
                let v = m[(others[i], others[j])];
                if i == j { v + 1.0 } else { v }
            });
            let mut b = CVec::zeros(no);
            for i in 0..no {
                b[i] = m[(others[i], k)];
            }
            let chol = Cholesky::new(&a).expect("identity plus a Gram matrix is positive definite");
            sinr -= chol.inverse_quadratic_form(&b);
        }
        out[k] = sinr.max(0.0);
    }
}

fn quality_whitened(gt: &CMat, se_cap: f64) -> LinkQuality {
    let mut sinr = [0.0; MAX_RANK];
    whitened_layer_sinrs(gt, &mut sinr);
    LinkQuality::from_sinr(&sinr[..gt.cols()], se_cap)
}

fn factor(r_ipn: &CMat) -> Cholesky {
    Cholesky::new(r_ipn).expect("covariance already validated as positive definite")
}

/// MMSE-IRC SINR per layer for effective channel `h_eff = h·w` (n_rx × rank)
/// with `tx_power_per_layer` on every layer.
pub fn mmse_irc_sinr(
    h_eff: &CMat,
    r_ipn: &CMat,
    tx_power_per_layer: f64,
    se_cap: f64,
) -> Result<LinkQuality, LinkError> {
    check_dims(h_eff, r_ipn);
    validate_covariance(r_ipn)?;
    Ok(sinr_unchecked(h_eff, r_ipn, tx_power_per_layer, se_cap))
}

fn check_dims(h_eff: &CMat, r_ipn: &CMat) {
    assert_eq!(r_ipn.rows(), r_ipn.cols(), "covariance must be square");
    assert_eq!(h_eff.rows(), r_ipn.rows(), "receive port mismatch");
    assert!((1..=MAX_RANK).contains(&h_eff.cols()), "rank out of range");
}

fn sinr_unchecked(h_eff: &CMat, r_ipn: &CMat, tx_power_per_layer: f64, se_cap: f64) -> LinkQuality {
    let gt = factor(r_ipn).whiten(h_eff).scale(tx_power_per_layer.sqrt());
    quality_whitened(&gt, se_cap)
}

/// Same quantity as [`mmse_irc_sinr`], computed through the joint MMSE
/// filter `W = (R + G·Gᴴ)⁻¹·G`:
/// `SINR_k = |w_kᴴ g_k|² / (w_kᴴ · R_k · w_k)`.
pub fn mmse_irc_sinr_joint_filter(
    h_eff: &CMat,
    r_ipn: &CMat,
    tx_power_per_layer: f64,
    se_cap: f64,
) -> Result<LinkQuality, LinkError> {
    check_dims(h_eff, r_ipn);
    validate_covariance(r_ipn)?;
    let g = h_eff.scale(tx_power_per_layer.sqrt());
    let rank = g.cols();
    let q = *r_ipn + g.gram_outer();
    let q_chol = Cholesky::new(&q).ok_or(LinkError::NotPositiveDefinite)?;
    let mut sinr = [0.0; MAX_RANK];
    for (k, s) in sinr.iter_mut().enumerate().take(rank) {
        let gk = g.column(k);
        let wk = q_chol.solve(&gk);
        let signal = wk.dot(&gk).norm_sqr();
        let mut rk = *r_ipn;
        for j in (0..rank).filter(|&j| j != k) {
            g.column(j).outer_into(&mut rk);
        }
        let denom = wk.dot(&(&rk * &wk)).re;
        *s = signal / denom;
    }
    Ok(LinkQuality::from_sinr(&sinr[..rank], se_cap))
}

/// Chooses the rank maximizing spectral efficiency with SVD precoding and
/// `total_power` split equally over the layers. Ties go to the lower rank.
pub fn rank_adapt(
    h: &CMat,
    r_ipn: &CMat,
    total_power: f64,
    max_rank: usize,
    se_cap: f64,
) -> Result<(Precoder, LinkQuality), LinkError> {
    assert_eq!(h.rows(), r_ipn.rows(), "receive port mismatch");
    validate_covariance(r_ipn)?;
    Ok(rank_adapt_with(&ChannelSvd::new(h), h, r_ipn, total_power, max_rank, se_cap))
}

/// [`rank_adapt`] with a precomputed decomposition and a covariance the
/// caller has already validated.
pub fn rank_adapt_with(
    svd: &ChannelSvd,
    h: &CMat,
    r_ipn: &CMat,
    total_power: f64,
    max_rank: usize,
    se_cap: f64,
) -> (Precoder, LinkQuality) {
    assert!(
        (1..=svd.max_rank()).contains(&max_rank),
        "max_rank {max_rank} outside 1..={}",
        svd.max_rank()
    );
    let ht = factor(r_ipn).whiten(h);
    let mut best: Option<(Precoder, LinkQuality)> = None;
    for rank in 1..=max_rank {
        let w = svd.precoder(rank);
        let gt = (&ht * w.matrix()).scale((total_power / rank as f64).sqrt());
        let q = quality_whitened(&gt, se_cap);
        if best
            .as_ref()
            .is_none_or(|(_, b)| q.spectral_efficiency() > b.spectral_efficiency())
        {
            best = Some((w, q));
        }
    }
    best.expect("at least one rank evaluated")
}

/// Two TRPs each sending their own layers to one UE.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NcjtComposite {
    pub h_a: CMat,
    pub h_b: CMat,
    pub w_a: Precoder,
    pub w_b: Precoder,
}

impl NcjtComposite {
    pub fn total_rank(&self) -> usize {
        self.w_a.rank() + self.w_b.rank()
    }

    /// `[√p_a·h_a·w_a | √p_b·h_b·w_b]` with each TRP's power split over its
    /// own layers.
    pub fn stacked_layers(&self, total_power_per_trp: f64) -> CMat {
        let ga = (&self.h_a * self.w_a.matrix()).scale((total_power_per_trp / self.w_a.rank() as f64).sqrt());
        let gb = (&self.h_b * self.w_b.matrix()).scale((total_power_per_trp / self.w_b.rank() as f64).sqrt());
        ga.hstack(&gb)
    }
}

/// Link quality of an NC-JT transmission. Layers from both TRPs are desired
/// and jointly detected; only `r_ipn` is interference.
pub fn ncjt_link_quality(
    composite: &NcjtComposite,
    r_ipn: &CMat,
    total_power_per_trp: f64,
    se_cap: f64,
) -> Result<LinkQuality, LinkError> {
    assert!(
        composite.total_rank() <= MAX_RANK.min(r_ipn.rows()),
        "NC-JT total rank {} exceeds receive capability",
        composite.total_rank()
    );
    let g = composite.stacked_layers(total_power_per_trp);
    check_dims(&g, r_ipn);
    validate_covariance(r_ipn)?;
    Ok(sinr_unchecked(&g, r_ipn, 1.0, se_cap))
}

/// Candidate `(rank_a, rank_b)` splits in evaluation order: increasing total
/// rank, then increasing `rank_a`.
pub fn ncjt_rank_splits(max_a: usize, max_b: usize, max_total: usize) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    for total in 2..=max_total {
        for ra in 1..=max_a.min(total - 1) {
            let rb = total - ra;
            if rb >= 1 && rb <= max_b {
                out.push((ra, rb));
            }
        }
    }
    out
}

/// Exhaustive rank split for NC-JT. Returns the best composite; ties keep
/// the earlier split in [`ncjt_rank_splits`] order.
pub fn ncjt_rank_search(
    svd_a: &ChannelSvd,
    h_a: &CMat,
    svd_b: &ChannelSvd,
    h_b: &CMat,
    r_ipn: &CMat,
    total_power_per_trp: f64,
    se_cap: f64,
) -> (NcjtComposite, LinkQuality) {
    let n_rx = h_a.rows();
    let chol = factor(r_ipn);
    let (hat, hbt) = (chol.whiten(h_a), chol.whiten(h_b));
    let mut best: Option<(NcjtComposite, LinkQuality)> = None;
    for (ra, rb) in ncjt_rank_splits(svd_a.max_rank(), svd_b.max_rank(), MAX_RANK.min(n_rx)) {
        let c = NcjtComposite {
            h_a: *h_a,
            h_b: *h_b,
            w_a: svd_a.precoder(ra),
            w_b: svd_b.precoder(rb),
        };
        let whitened = NcjtComposite { h_a: hat, h_b: hbt, ..c };
        let q = quality_whitened(&whitened.stacked_layers(total_power_per_trp), se_cap);
        if best
            .as_ref()
            .is_none_or(|(_, b)| q.spectral_efficiency() > b.spectral_efficiency())
        {
            best = Some((c, q));
        }
    }
    best.expect("two TRPs with at least one port each admit rank split (1, 1)")
}

const _: () = assert!(MAX_RANK <= MAX_DIM);

#[cfg(test)]
mod tests {
    use super::*;
    use num_complex::Complex64;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    #[test]
    fn scalar_matched_filter() {
        let h = CMat::from_rows(1, 1, &[c(1.0, 0.0)]);
        let r = CMat::scaled_identity(1, 0.25);
        let q = mmse_irc_sinr(&h, &r, 2.0, 7.8).unwrap();
        assert!((q.sinr_per_layer()[0] - 8.0).abs() < 1e-12);
    }

    #[test]
    fn orthogonal_layers_do_not_interfere() {
        let p = 3.0;
        let sigma2 = 0.5;
        let h = CMat::identity(2);
        let r = CMat::scaled_identity(2, sigma2);
        let q = mmse_irc_sinr(&h, &r, p, 100.0).unwrap();
        for s in q.sinr_per_layer() {
            assert!((s - p / sigma2).abs() < 1e-12);
        }
    }

    #[test]
    fn se_is_capped_per_layer() {
        let h = CMat::identity(2);
        let r = CMat::scaled_identity(2, 1e-9);
        let q = mmse_irc_sinr(&h, &r, 1.0, 7.8).unwrap();
        assert!((q.spectral_efficiency() - 15.6).abs() < 1e-12);
        assert_eq!(layer_se(-1.0, 7.8), 0.0);
    }

    #[test]
    fn rejects_indefinite_covariance() {
        let h = CMat::identity(2);
        let r = CMat::from_rows(2, 2, &[c(1.0, 0.0), c(2.0, 0.0), c(2.0, 0.0), c(1.0, 0.0)]);
        assert_eq!(mmse_irc_sinr(&h, &r, 1.0, 7.8), Err(LinkError::NotPositiveDefinite));
        let nonherm = CMat::from_rows(2, 2, &[c(1.0, 0.0), c(0.5, 0.0), c(0.0, 0.0), c(1.0, 0.0)]);
        assert_eq!(mmse_irc_sinr(&h, &nonherm, 1.0, 7.8), Err(LinkError::NotPositiveDefinite));
    }

    #[test]
    fn identity_precoder() {
        let w = svd_precoder(&CMat::identity(2), 2);
        assert_eq!(w.matrix(), &CMat::identity(2));
    }

    #[test]
    fn rank_one_channel_precoder_is_v_up_to_phase() {
        let u = [c(0.5, 0.1), c(-0.3, 0.4), c(0.2, -0.2), c(0.1, 0.0)];
        let v = [c(0.6, 0.0), c(0.0, 0.8)];
        let h = CMat::from_fn(4, 2, |i, j| u[i] * v[j].conj());
        let w = svd_precoder(&h, 1);
        let col = w.matrix().column(0);
        let overlap = CVec::from_slice(&v).dot(&col).norm();
        assert!((overlap - 1.0).abs() < 1e-12);
    }

    #[test]
    #[should_panic]
    fn precoder_rank_bound_enforced() {
        svd_precoder(&CMat::identity(2), 3);
    }

    #[test]
    fn rank_one_channel_adapts_to_rank_one() {
        let u = [c(0.5, 0.1), c(-0.3, 0.4), c(0.2, -0.2), c(0.1, 0.0)];
        let v = [c(0.6, 0.0), c(0.0, 0.8), c(0.0, 0.0), c(0.0, 0.0)];
        let h = CMat::from_fn(4, 4, |i, j| u[i] * v[j].conj());
        let r = CMat::scaled_identity(4, 1e-3);
        let (w, q) = rank_adapt(&h, &r, 1.0, 4, 7.8).unwrap();
        assert_eq!(w.rank(), 1);
        assert_eq!(q.rank(), 1);
    }

    #[test]
    fn identity_channel_high_snr_uses_full_rank() {
        for n in [2, 4] {
            let h = CMat::identity(4).leading_columns(n);
            let r = CMat::scaled_identity(4, 1e-3);
            let (_, q) = rank_adapt(&h, &r, 1.0, n, 7.8).unwrap();
            assert_eq!(q.rank(), n);
        }
    }

    #[test]
    fn unreachable_partner_reduces_to_single_trp() {
        let h_a = CMat::from_fn(4, 2, |i, j| c((i + 2 * j) as f64 * 0.1 + 0.05, (i as f64 - j as f64) * 0.07));
        let h_b = CMat::zeros(4, 2);
        let r = CMat::scaled_identity(4, 1e-2);
        let w_a = svd_precoder(&h_a, 2);
        let single = mmse_irc_sinr(&(&h_a * w_a.matrix()), &r, 0.5, 7.8).unwrap();
        let comp = NcjtComposite {
            h_a,
            h_b,
            w_a,
            w_b: Precoder::new(CMat::identity(2).leading_columns(1)),
        };
        let joint = ncjt_link_quality(&comp, &r, 1.0, 7.8).unwrap();
        assert_eq!(&joint.sinr_per_layer()[..2], single.sinr_per_layer());
        assert_eq!(joint.sinr_per_layer()[2], 0.0);
        assert!((joint.spectral_efficiency() - single.spectral_efficiency()).abs() < 1e-12);
    }

    #[test]
    #[should_panic]
    fn ncjt_rank_above_four_rejected() {
        let h = CMat::identity(4);
        let comp = NcjtComposite {
            h_a: h,
            h_b: h,
            w_a: svd_precoder(&h, 3),
            w_b: svd_precoder(&h, 2),
        };
        let _ = ncjt_link_quality(&comp, &CMat::identity(4), 1.0, 7.8);
    }

    #[test]
    fn rank_split_enumeration() {
        assert_eq!(ncjt_rank_splits(2, 2, 4), vec![(1, 1), (1, 2), (2, 1), (2, 2)]);
        assert_eq!(ncjt_rank_splits(4, 4, 4).len(), 6);
        assert_eq!(ncjt_rank_splits(2, 2, 2), vec![(1, 1)]);
    }
}
