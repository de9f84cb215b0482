//! Link-level channel: large-scale gains, Ricean/Rayleigh block fading with
//! first-order temporal correlation, antenna patterns and analog beam
//! selection.
//!
//! Pathloss is log-distance, `PL(d) = A + 10·n·log10(d)`, floored at free
//! space. Shadowing is lognormal and frozen for the life of a link.

use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::linalg::CMat;
use crate::rng::SimRng;
use crate::scenario::{ArrayGeometry, BeamGrid, Boresight, ScenarioKind, Trp, Ue};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChannelParams {
    /// InH intercept is `inh_intercept_db + 20·log10(f_GHz)`.
    pub inh_intercept_db: f64,
    pub inh_exponent_los: f64,
    pub inh_exponent_nlos: f64,
    pub du_intercept_db: f64,
    pub du_exponent_los: f64,
    pub du_exponent_nlos: f64,
    pub shadowing_sigma_los_db: f64,
    pub shadowing_sigma_nlos_db: f64,
    /// Ricean K-factor applied to LOS links.
    pub k_factor_db: f64,
    /// Correlation of the diffuse component between consecutive TTIs.
    pub rho: f64,
    pub inh_los_breakpoint_m: f64,
    pub inh_los_decay_m: f64,
    pub du_los_d1_m: f64,
    pub du_los_d2_m: f64,
    /// 3 dB beamwidth of an N-element dimension is `beam_hpbw_scale_deg / N`.
    pub beam_hpbw_scale_deg: f64,
    pub beam_front_to_back_db: f64,
    /// Peak beam gain is `5·log10(elements) + beam_peak_offset_db`.
    pub beam_peak_offset_db: f64,
    pub sector_hpbw_deg: f64,
    pub sector_front_to_back_db: f64,
    pub sector_peak_dbi: f64,
}

impl Default for ChannelParams {
    fn default() -> Self {
        Self {
            inh_intercept_db: 32.4,
            inh_exponent_los: 1.7,
            inh_exponent_nlos: 3.0,
            du_intercept_db: 28.0,
            du_exponent_los: 2.2,
            du_exponent_nlos: 3.5,
            shadowing_sigma_los_db: 3.0,
            shadowing_sigma_nlos_db: 8.0,
            k_factor_db: 9.0,
            rho: 0.9,
            inh_los_breakpoint_m: 5.0,
            inh_los_decay_m: 30.0,
            du_los_d1_m: 18.0,
            du_los_d2_m: 63.0,
            beam_hpbw_scale_deg: 102.0,
            beam_front_to_back_db: 30.0,
            beam_peak_offset_db: 8.0,
            sector_hpbw_deg: 65.0,
            sector_front_to_back_db: 30.0,
            sector_peak_dbi: 8.0,
        }
    }
}

impl ChannelParams {
    /// Pathloss at the 1 m reference distance.
    pub fn intercept_db(&self, kind: ScenarioKind) -> f64 {
        let base = if kind.is_indoor() {
            self.inh_intercept_db
        } else {
            self.du_intercept_db
        };
        base + 20.0 * kind.carrier_ghz().log10()
    }

    pub fn exponent(&self, kind: ScenarioKind, los: bool) -> f64 {
        match (kind.is_indoor(), los) {
            (true, true) => self.inh_exponent_los,
            (true, false) => self.inh_exponent_nlos,
            (false, true) => self.du_exponent_los,
            (false, false) => self.du_exponent_nlos,
        }
    }

    pub fn shadowing_sigma_db(&self, los: bool) -> f64 {
        if los {
            self.shadowing_sigma_los_db
        } else {
            self.shadowing_sigma_nlos_db
        }
    }

    pub fn los_probability(&self, kind: ScenarioKind, distance_2d_m: f64) -> f64 {
        let d = distance_2d_m.max(0.0);
        if kind.is_indoor() {
            if d <= self.inh_los_breakpoint_m {
                1.0
            } else {
                (-(d - self.inh_los_breakpoint_m) / self.inh_los_decay_m).exp()
            }
        } else {
            if d <= 0.0 {
                return 1.0;
            }
            let tail = (-d / self.du_los_d2_m).exp();
            (self.du_los_d1_m / d).min(1.0) * (1.0 - tail) + tail
        }
    }

    pub fn k_factor_linear(&self) -> f64 {
        10f64.powf(self.k_factor_db / 10.0)
    }
}

/// Free-space pathloss with the 32.4 dB constant used by the log-distance
/// intercepts, so both agree at 1 m.
pub fn free_space_pathloss_db(distance_m: f64, carrier_ghz: f64) -> f64 {
    32.4 + 20.0 * carrier_ghz.log10() + 20.0 * distance_m.log10()
}

pub fn pathloss_db(kind: ScenarioKind, params: &ChannelParams, distance_m: f64, los: bool) -> f64 {
    let d = distance_m.max(1.0);
    let model = params.intercept_db(kind) + 10.0 * params.exponent(kind, los) * d.log10();
    model.max(free_space_pathloss_db(d, kind.carrier_ghz()))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LargeScaleState {
    pub pathloss_db: f64,
    pub shadowing_db: f64,
    pub los: bool,
    pub distance_m: f64,
    /// The link was shorter than the 1 m reference distance and was clamped.
    pub degenerate: bool,
}

impl LargeScaleState {
    /// Pathloss plus shadowing, in dB of loss.
    pub fn total_loss_db(&self) -> f64 {
        self.pathloss_db + self.shadowing_db
    }
}

/// Draws the large-scale state of a link. `link` is the vector from the TRP
/// to the UE. Consumes one uniform (LOS) then one normal (shadowing).
pub fn compute_large_scale(
    kind: ScenarioKind,
    params: &ChannelParams,
    link: [f64; 3],
    rng: &mut SimRng,
) -> LargeScaleState {
    let d3 = (link[0] * link[0] + link[1] * link[1] + link[2] * link[2]).sqrt();
    let d2 = link[0].hypot(link[1]);
    let degenerate = d3 < 1.0;
    let distance_m = d3.max(1.0);
    let los = rng.random::<f64>() < params.los_probability(kind, d2);
    let z: f64 = rng.sample(StandardNormal);
    LargeScaleState {
        pathloss_db: pathloss_db(kind, params, distance_m, los),
        shadowing_db: params.shadowing_sigma_db(los) * z,
        los,
        distance_m,
        degenerate,
    }
}

fn complex_normal(rng: &mut SimRng) -> Complex64 {
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    Complex64::new(re, im) * std::f64::consts::FRAC_1_SQRT_2
}

fn complex_gaussian_matrix(rows: usize, cols: usize, rng: &mut SimRng) -> CMat {
    CMat::from_fn(rows, cols, |_, _| complex_normal(rng))
}

/// Ricean weights `(sqrt(K/(K+1)), sqrt(1/(K+1)))`; `K = ∞` is pure LOS.
fn ricean_weights(k_linear: f64) -> (f64, f64) {
    if k_linear.is_infinite() {
        (1.0, 0.0)
    } else {
        ((k_linear / (k_linear + 1.0)).sqrt(), (1.0 / (k_linear + 1.0)).sqrt())
    }
}

/// Unit-power small-scale fading of one link, evolving from TTI to TTI.
///
/// `h = w_los·a·bᴴ + w_diffuse·N_t`, with `|a_i| = |b_j| = 1` fixed per link
/// and `N_t = ρ·N_{t−1} + sqrt(1−ρ²)·W_t`. Every entry has unit mean power.
#[derive(Clone, Copy, Debug)]
pub struct FadingProcess {
    specular: Option<CMat>,
    diffuse: CMat,
    diffuse_weight: f64,
    current: CMat,
}

impl FadingProcess {
    /// `k_linear` is ignored for NLOS links.
    pub fn new(dims: (usize, usize), los: bool, k_linear: f64, rng: &mut SimRng) -> Self {
        let (n_rx, n_tx) = dims;
        assert!(n_rx > 0 && n_tx > 0, "channel dimensions must be positive");
        let (specular, diffuse_weight) = if los {
            let (w_los, w_diffuse) = ricean_weights(k_linear);
            let two_pi = std::f64::consts::TAU;
            let a: Vec<Complex64> = (0..n_rx)
                .map(|_| Complex64::from_polar(1.0, two_pi * rng.random::<f64>()))
                .collect();
            let b: Vec<Complex64> = (0..n_tx)
                .map(|_| Complex64::from_polar(1.0, two_pi * rng.random::<f64>()))
                .collect();
            let l = CMat::from_fn(n_rx, n_tx, |i, j| a[i] * b[j].conj() * w_los);
            (Some(l), w_diffuse)
        } else {
            (None, 1.0)
        };
        let diffuse = complex_gaussian_matrix(n_rx, n_tx, rng);
        let mut p = Self {
            specular,
            diffuse,
            diffuse_weight,
            current: diffuse,
        };
        p.refresh();
        p
    }

    fn refresh(&mut self) {
        let mut h = self.diffuse.scale(self.diffuse_weight);
        if let Some(l) = &self.specular {
            h += *l;
        }
        self.current = h;
    }

    /// Advances one TTI.
    pub fn advance(&mut self, rho: f64, rng: &mut SimRng) {
        if self.diffuse_weight == 0.0 {
            return;
        }
        let innovation = (1.0 - rho * rho).max(0.0).sqrt();
        let (rows, cols) = self.diffuse.dims();
        for i in 0..rows {
            for j in 0..cols {
                let w = complex_normal(rng);
                self.diffuse[(i, j)] = self.diffuse[(i, j)] * rho + w * innovation;
            }
        }
        self.refresh();
    }

    /// Current unit-power fading matrix.
    pub fn current(&self) -> &CMat {
        &self.current
    }
}

/// Per-link channel matrix together with the large-scale state it was
/// scaled by.
#[derive(Clone, Copy, Debug)]
pub struct ChannelRealization {
    pub h: CMat,
    pub large_scale: LargeScaleState,
}

/// Independent draw of a link channel with linear coupling gain `gain_lin`
/// (large-scale loss plus antenna gains).
pub fn draw_fading(
    large_scale: LargeScaleState,
    gain_lin: f64,
    dims: (usize, usize),
    params: &ChannelParams,
    rng: &mut SimRng,
) -> ChannelRealization {
    let fading = FadingProcess::new(dims, large_scale.los, params.k_factor_linear(), rng);
    ChannelRealization {
        h: fading.current().scale(gain_lin.sqrt()),
        large_scale,
    }
}

pub fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

fn dot(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn cross(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

fn normalize(v: [f64; 3]) -> [f64; 3] {
    let n = dot(v, v).sqrt();
    if n == 0.0 {
        // Coincident points: treat as arriving along the array normal.
        return [0.0, 0.0, 0.0];
    }
    [v[0] / n, v[1] / n, v[2] / n]
}

/// Orthonormal array frame: normal, horizontal in-plane axis, vertical
/// in-plane axis.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ArrayFrame {
    normal: [f64; 3],
    horizontal: [f64; 3],
    vertical: [f64; 3],
}

impl ArrayFrame {
    pub fn from_boresight(b: Boresight) -> Self {
        let (az, tilt) = (b.azimuth_deg.to_radians(), b.downtilt_deg.to_radians());
        let normal = [tilt.cos() * az.cos(), tilt.cos() * az.sin(), -tilt.sin()];
        let horizontal = [-az.sin(), az.cos(), 0.0];
        let vertical = cross(normal, horizontal);
        Self {
            normal,
            horizontal,
            vertical,
        }
    }

    /// `(front, u_horizontal, u_vertical)` direction cosines of `dir`.
    fn local(&self, dir: [f64; 3]) -> (f64, f64, f64) {
        let d = normalize(dir);
        if d == [0.0, 0.0, 0.0] {
            return (1.0, 0.0, 0.0);
        }
        (dot(d, self.normal), dot(d, self.horizontal), dot(d, self.vertical))
    }
}

/// Grid-of-beams pattern of one analog array (a TRP array or one UE panel).
///
/// Beam gain in dB is `peak − min(12·(Δφ/φ3dB)² + 12·(Δθ/θ3dB)², FBR)` where
/// `Δφ, Δθ` are the angular offsets from the beam's DFT-grid pointing
/// direction. Anything behind the array plane gets `peak − FBR`.
#[derive(Clone, Debug, PartialEq)]
pub struct BeamPattern {
    frame: ArrayFrame,
    grid: BeamGrid,
    peak_db: f64,
    hpbw_az_deg: f64,
    hpbw_el_deg: f64,
    front_to_back_db: f64,
    pointing_deg: Vec<(f64, f64)>,
}

impl BeamPattern {
    pub fn new(array: ArrayGeometry, grid: BeamGrid, boresight: Boresight, params: &ChannelParams) -> Self {
        let grid_angles = |n: usize, span: f64| -> Vec<f64> {
            (0..n)
                .map(|k| {
                    let u = -span + (2 * k + 1) as f64 * span / n as f64;
                    u.asin().to_degrees()
                })
                .collect()
        };
        let az = grid_angles(grid.n_az, grid.az_span);
        let el = grid_angles(grid.n_el, grid.el_span);
        let mut pointing_deg = Vec::with_capacity(grid.n_beams());
        for e in &el {
            for a in &az {
                pointing_deg.push((*a, *e));
            }
        }
        Self {
            frame: ArrayFrame::from_boresight(boresight),
            grid,
            peak_db: 5.0 * (array.elements() as f64).log10() + params.beam_peak_offset_db,
            hpbw_az_deg: params.beam_hpbw_scale_deg / array.cols as f64,
            hpbw_el_deg: params.beam_hpbw_scale_deg / array.rows as f64,
            front_to_back_db: params.beam_front_to_back_db,
            pointing_deg,
        }
    }

    pub fn n_beams(&self) -> usize {
        self.grid.n_beams()
    }

    pub fn peak_db(&self) -> f64 {
        self.peak_db
    }

    /// Gain of `beam` towards direction `dir` (vector pointing away from the
    /// array).
    pub fn gain_db(&self, beam: usize, dir: [f64; 3]) -> f64 {
        let (front, uh, uv) = self.frame.local(dir);
        if front <= 0.0 {
            return self.peak_db - self.front_to_back_db;
        }
        let phi = uh.clamp(-1.0, 1.0).asin().to_degrees();
        let theta = uv.clamp(-1.0, 1.0).asin().to_degrees();
        let (pa, pe) = self.pointing_deg[beam];
        let da = (phi - pa) / self.hpbw_az_deg;
        let de = (theta - pe) / self.hpbw_el_deg;
        self.peak_db - (12.0 * (da * da + de * de)).min(self.front_to_back_db)
    }

    /// Gains of every beam towards `dir`.
    pub fn gains_db(&self, dir: [f64; 3]) -> Vec<f64> {
        (0..self.n_beams()).map(|b| self.gain_db(b, dir)).collect()
    }

    /// Best beam towards `dir`; lowest index on ties.
    pub fn best_beam(&self, dir: [f64; 3]) -> (usize, f64) {
        let mut best = (0, self.gain_db(0, dir));
        for b in 1..self.n_beams() {
            let g = self.gain_db(b, dir);
            if g > best.1 {
                best = (b, g);
            }
        }
        best
    }
}

/// Horizontal macro-sector pattern `peak − min(12·(φ/φ3dB)², FBR)`.
pub fn sector_gain_db(boresight: Boresight, dir: [f64; 3], params: &ChannelParams) -> f64 {
    let az = dir[1].atan2(dir[0]).to_degrees();
    let mut off = az - boresight.azimuth_deg;
    off = (off + 180.0).rem_euclid(360.0) - 180.0;
    let r = off / params.sector_hpbw_deg;
    params.sector_peak_dbi - (12.0 * r * r).min(params.sector_front_to_back_db)
}

pub fn trp_pattern(trp: &Trp, params: &ChannelParams) -> Option<BeamPattern> {
    let a = &trp.antenna;
    match (a.array, a.beam_grid) {
        (Some(array), Some(grid)) => Some(BeamPattern::new(array, grid, a.boresight, params)),
        _ => None,
    }
}

/// Patterns of the UE's panels, which face `orientation` and
/// `orientation + 180°` horizontally.
pub fn ue_panel_patterns(ue: &Ue, params: &ChannelParams) -> Vec<BeamPattern> {
    let (Some(array), Some(grid)) = (ue.panel.array, ue.panel.beam_grid) else {
        return Vec::new();
    };
    (0..ue.panel.n_panels)
        .map(|p| {
            let b = Boresight {
                azimuth_deg: ue.orientation_deg + 180.0 * p as f64,
                downtilt_deg: 0.0,
            };
            BeamPattern::new(array, grid, b, params)
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BeamSelection {
    pub trp_beam: usize,
    pub ue_panel: usize,
    pub ue_beam: usize,
    /// TRP beam gain plus UE beam gain.
    pub beamforming_gain_db: f64,
}

/// Best `(TRP beam, UE panel, UE beam)` for a link, `link` pointing from the
/// TRP to the UE. The pair gain is separable, so the two ends are searched
/// independently; ties resolve to the lexicographically lowest triple.
pub fn select_beams(kind: ScenarioKind, trp_pattern: &BeamPattern, ue_panels: &[BeamPattern], link: [f64; 3]) -> BeamSelection {
    assert!(kind.is_mmwave(), "beam selection requested for digital scenario {kind}");
    assert!(!ue_panels.is_empty(), "UE has no analog panels");
    let (trp_beam, g_tx) = trp_pattern.best_beam(link);
    let back = [-link[0], -link[1], -link[2]];
    let mut best = (0, 0, f64::NEG_INFINITY);
    for (p, panel) in ue_panels.iter().enumerate() {
        let (b, g) = panel.best_beam(back);
        if g > best.2 {
            best = (p, b, g);
        }
    }
    BeamSelection {
        trp_beam,
        ue_panel: best.0,
        ue_beam: best.1,
        beamforming_gain_db: g_tx + best.2,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, Stream};
    use crate::scenario::{generate_layout, LayoutParams, LayoutScale, Point3, UePanelConfig, UE_HEIGHT_M};

    #[test]
    fn reference_distance_gives_intercept() {
        let p = ChannelParams::default();
        for kind in ScenarioKind::ALL {
            for los in [true, false] {
                let fspl = free_space_pathloss_db(1.0, kind.carrier_ghz());
                assert_eq!(pathloss_db(kind, &p, 1.0, los), p.intercept_db(kind).max(fspl));
            }
        }
    }

    #[test]
    fn nlos_doubling_adds_exponent_times_3db() {
        let p = ChannelParams::default();
        for kind in ScenarioKind::ALL {
            let n = p.exponent(kind, false);
            let step = pathloss_db(kind, &p, 80.0, false) - pathloss_db(kind, &p, 40.0, false);
            assert!((step - n * 10.0 * 2f64.log10()).abs() < 1e-9, "{kind}");
        }
    }

    #[test]
    fn pathloss_never_below_free_space() {
        let p = ChannelParams::default();
        for kind in ScenarioKind::ALL {
            for los in [true, false] {
                for d in [1.0, 1.5, 3.0, 10.0, 57.0, 300.0] {
                    assert!(pathloss_db(kind, &p, d, los) >= free_space_pathloss_db(d, kind.carrier_ghz()));
                }
            }
        }
    }

    #[test]
    fn zero_distance_is_clamped_and_flagged() {
        let p = ChannelParams::default();
        let mut rng = stream(1, Stream::Test, 0, 0);
        let ls = compute_large_scale(ScenarioKind::InH4GHz, &p, [0.0, 0.0, 0.0], &mut rng);
        assert!(ls.degenerate);
        assert_eq!(ls.distance_m, 1.0);
        assert_eq!(ls.pathloss_db, p.intercept_db(ScenarioKind::InH4GHz));
    }

    #[test]
    fn los_probability_shapes() {
        let p = ChannelParams::default();
        assert_eq!(p.los_probability(ScenarioKind::InH4GHz, 3.0), 1.0);
        assert!((p.los_probability(ScenarioKind::InH4GHz, 35.0) - (-1f64).exp()).abs() < 1e-12);
        assert_eq!(p.los_probability(ScenarioKind::DU4GHz, 10.0), 1.0);
        let mut last = 1.0;
        for d in [20.0, 50.0, 100.0, 200.0, 400.0] {
            let q = p.los_probability(ScenarioKind::DU4GHz, d);
            assert!(q < last && q > 0.0);
            last = q;
        }
    }

    #[test]
    fn shadowing_sample_sigma_matches() {
        // Sample standard deviation of 10^4 draws against the configured σ.
        let p = ChannelParams::default();
        let mut rng = stream(5, Stream::Test, 0, 0);
        let link = [200.0, 0.0, -23.5];
        let samples: Vec<(bool, f64)> = (0..10_000)
            .map(|_| {
                let ls = compute_large_scale(ScenarioKind::DU4GHz, &p, link, &mut rng);
                (ls.los, ls.shadowing_db)
            })
            .collect();
        for los in [true, false] {
            let xs: Vec<f64> = samples.iter().filter(|s| s.0 == los).map(|s| s.1).collect();
            assert!(xs.len() > 1000);
            let n = xs.len() as f64;
            let mean = xs.iter().sum::<f64>() / n;
            let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
            let sigma = p.shadowing_sigma_db(los);
            assert!((var.sqrt() - sigma).abs() < 0.05 * sigma, "los={los} sd={}", var.sqrt());
        }
    }

    #[test]
    fn pure_los_is_rank_one() {
        let mut rng = stream(2, Stream::Test, 0, 0);
        let mut f = FadingProcess::new((4, 4), true, f64::INFINITY, &mut rng);
        for _ in 0..3 {
            let svd = crate::linalg::Svd::new(f.current());
            let s = svd.singular_values();
            assert!(s[1] < 1e-9 * s[0], "{s:?}");
            f.advance(0.9, &mut rng);
        }
    }

    #[test]
    fn energy_scales_with_gain() {
        let p = ChannelParams::default();
        let ls = LargeScaleState {
            pathloss_db: 80.0,
            shadowing_db: 0.0,
            los: false,
            distance_m: 10.0,
            degenerate: false,
        };
        let n = 4000;
        for g in [1.0, 1e-6] {
            let mut rng = stream(9, Stream::Test, 0, 0);
            let mut acc = 0.0;
            for _ in 0..n {
                acc += draw_fading(ls, g, (4, 2), &p, &mut rng).h.frobenius_norm_sq();
            }
            let per_entry = acc / (n as f64 * 8.0) / g;
            // |h|^2 of a unit CN entry is Exp(1): mean 1, sd 1; 3σ of the mean.
            assert!((per_entry - 1.0).abs() < 3.0 / ((n * 8) as f64).sqrt(), "{per_entry}");
        }
    }

    #[test]
    fn fading_is_reproducible_and_correlated() {
        let make = || {
            let mut rng = stream(4, Stream::Fading, 1, 2);
            let mut f = FadingProcess::new((4, 2), false, 0.0, &mut rng);
            let a = *f.current();
            f.advance(0.9, &mut rng);
            (a, *f.current())
        };
        let (a1, b1) = make();
        let (a2, b2) = make();
        assert_eq!(a1, a2);
        assert_eq!(b1, b2);
        assert_ne!(a1, b1);

        // Lag-one correlation of a diffuse entry approaches rho.
        let mut rng = stream(4, Stream::Test, 0, 0);
        let mut f = FadingProcess::new((1, 1), false, 0.0, &mut rng);
        let (mut num, mut den) = (Complex64::new(0.0, 0.0), 0.0);
        let mut prev = f.current()[(0, 0)];
        for _ in 0..50_000 {
            f.advance(0.9, &mut rng);
            let cur = f.current()[(0, 0)];
            num += cur * prev.conj();
            den += prev.norm_sqr();
            prev = cur;
        }
        assert!((num.re / den - 0.9).abs() < 0.02);
    }

    fn mmwave_pair(kind: ScenarioKind) -> (Trp, Ue) {
        let l = generate_layout(kind, LayoutScale::Desk, &LayoutParams::default());
        let ue = Ue {
            id: 0,
            position: Point3::new(13.0, 21.0, UE_HEIGHT_M),
            panel: UePanelConfig::for_kind(kind),
            orientation_deg: 37.0,
            cluster_id: 0,
        };
        (l.trps[0].clone(), ue)
    }

    #[test]
    fn boresight_beam_is_selected() {
        let p = ChannelParams::default();
        let (trp, ue) = mmwave_pair(ScenarioKind::InH30GHz);
        let pattern = trp_pattern(&trp, &p).unwrap();
        // Aim exactly along beam 5's pointing direction.
        let (pa, pe) = pattern.pointing_deg[5];
        let (a, e) = (pa.to_radians(), pe.to_radians());
        let f = pattern.frame;
        let front = (1.0 - a.sin().powi(2) - e.sin().powi(2)).sqrt();
        let dir: Vec<f64> = (0..3)
            .map(|i| front * f.normal[i] + a.sin() * f.horizontal[i] + e.sin() * f.vertical[i])
            .collect();
        let dir = [dir[0], dir[1], dir[2]];
        assert_eq!(pattern.best_beam(dir).0, 5);
        assert!((pattern.gain_db(5, dir) - pattern.peak_db()).abs() < 1e-9);
        let panels = ue_panel_patterns(&ue, &p);
        assert_eq!(select_beams(ScenarioKind::InH30GHz, &pattern, &panels, dir).trp_beam, 5);
    }

    #[test]
    fn equal_gain_ties_go_to_lowest_index() {
        let p = ChannelParams::default();
        let (trp, _) = mmwave_pair(ScenarioKind::InH30GHz);
        let pattern = trp_pattern(&trp, &p).unwrap();
        // Straight down is symmetric between the four central beams.
        let (b, _) = pattern.best_beam([0.0, 0.0, -1.0]);
        let gains = pattern.gains_db([0.0, 0.0, -1.0]);
        let max = gains.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let first = gains.iter().position(|&g| g == max).unwrap();
        assert_eq!(b, first);
        assert!(gains.iter().filter(|&&g| g == max).count() > 1);
    }

    #[test]
    fn peak_gains() {
        let p = ChannelParams::default();
        let (trp, ue) = mmwave_pair(ScenarioKind::InH30GHz);
        assert!((trp_pattern(&trp, &p).unwrap().peak_db() - (5.0 * 32f64.log10() + 8.0)).abs() < 1e-12);
        assert!((ue_panel_patterns(&ue, &p)[0].peak_db() - (5.0 * 16f64.log10() + 8.0)).abs() < 1e-12);
    }

    #[test]
    #[should_panic]
    fn beam_selection_rejects_digital_kind() {
        let p = ChannelParams::default();
        let (trp, ue) = mmwave_pair(ScenarioKind::InH30GHz);
        let pattern = trp_pattern(&trp, &p).unwrap();
        select_beams(ScenarioKind::InH4GHz, &pattern, &ue_panel_patterns(&ue, &p), [1.0, 0.0, -1.0]);
    }

    #[test]
    fn sector_pattern_peaks_at_boresight() {
        let p = ChannelParams::default();
        let b = Boresight {
            azimuth_deg: 30.0,
            downtilt_deg: 12.0,
        };
        let on = [30f64.to_radians().cos(), 30f64.to_radians().sin(), 0.0];
        assert_eq!(sector_gain_db(b, on, &p), p.sector_peak_dbi);
        let back = [-on[0], -on[1], 0.0];
        assert_eq!(sector_gain_db(b, back, &p), p.sector_peak_dbi - p.sector_front_to_back_db);
        let edge = [90f64.to_radians().cos(), 90f64.to_radians().sin(), 0.0];
        let expect = p.sector_peak_dbi - 12.0 * (60.0f64 / 65.0).powi(2);
        assert!((sector_gain_db(b, edge, &p) - expect).abs() < 1e-9);
    }
}
