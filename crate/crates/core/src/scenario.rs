//! Deployment geometry: TRP layouts, antenna and UE panel configurations,
//! coordination clusters and UE drops.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::rng::SimRng;

/// UE antenna height in meters.
pub const UE_HEIGHT_M: f64 = 1.5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ScenarioKind {
    InH4GHz,
    DU4GHz,
    InH30GHz,
    DU30GHz,
}

impl ScenarioKind {
    pub const ALL: [ScenarioKind; 4] = [
        ScenarioKind::InH4GHz,
        ScenarioKind::DU4GHz,
        ScenarioKind::InH30GHz,
        ScenarioKind::DU30GHz,
    ];

    pub fn is_indoor(self) -> bool {
        matches!(self, ScenarioKind::InH4GHz | ScenarioKind::InH30GHz)
    }

    /// Analog beamforming at both ends.
    pub fn is_mmwave(self) -> bool {
        matches!(self, ScenarioKind::InH30GHz | ScenarioKind::DU30GHz)
    }

    pub fn carrier_ghz(self) -> f64 {
        if self.is_mmwave() {
            30.0
        } else {
            4.0
        }
    }

    pub fn cluster_size(self) -> usize {
        if self.is_indoor() {
            2
        } else {
            3
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ScenarioKind::InH4GHz => "InH4GHz",
            ScenarioKind::DU4GHz => "DU4GHz",
            ScenarioKind::InH30GHz => "InH30GHz",
            ScenarioKind::DU30GHz => "DU30GHz",
        }
    }
}

impl fmt::Display for ScenarioKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ScenarioKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ScenarioKind::ALL
            .into_iter()
            .find(|k| k.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| format!("unknown scenario `{s}`"))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LayoutScale {
    Full,
    Desk,
}

impl FromStr for LayoutScale {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "full" => Ok(LayoutScale::Full),
            "desk" => Ok(LayoutScale::Desk),
            _ => Err(format!("unknown scale `{s}` (expected full or desk)")),
        }
    }
}

impl fmt::Display for LayoutScale {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LayoutScale::Full => "full",
            LayoutScale::Desk => "desk",
        })
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Point3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Point3 {
    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z }
    }

    pub fn sub(&self, other: &Point3) -> [f64; 3] {
        [self.x - other.x, self.y - other.y, self.z - other.z]
    }

    pub fn distance(&self, other: &Point3) -> f64 {
        let d = self.sub(other);
        (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt()
    }

    pub fn distance_2d(&self, other: &Point3) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

/// Rows × columns of cross-polarized element positions.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArrayGeometry {
    pub rows: usize,
    pub cols: usize,
}

impl ArrayGeometry {
    /// Element count including both polarizations.
    pub fn elements(&self) -> usize {
        2 * self.rows * self.cols
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Boresight {
    pub azimuth_deg: f64,
    /// Positive values point below the horizon; 90 faces straight down.
    pub downtilt_deg: f64,
}

/// DFT grid of analog beam pointing directions, in direction-cosine space.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BeamGrid {
    pub n_az: usize,
    pub n_el: usize,
    /// Half-width of the covered azimuth direction-cosine interval.
    pub az_span: f64,
    pub el_span: f64,
}

impl BeamGrid {
    pub fn n_beams(&self) -> usize {
        self.n_az * self.n_el
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AntennaConfig {
    pub n_tx_ports: usize,
    /// Zero for the digital 4 GHz configurations.
    pub n_analog_beams: usize,
    pub array: Option<ArrayGeometry>,
    pub beam_grid: Option<BeamGrid>,
    pub boresight: Boresight,
    /// Horizontal sector pattern (macro sectors at 4 GHz); omni when false.
    pub sector_pattern: bool,
}

impl AntennaConfig {
    /// Antenna configuration for `kind`. `n_tx` is honored for 4 GHz kinds
    /// only; the 30 GHz kinds always expose two ports per analog beam.
    pub fn for_kind(kind: ScenarioKind, n_tx: usize, boresight: Boresight) -> Self {
        match kind {
            ScenarioKind::InH4GHz | ScenarioKind::DU4GHz => Self {
                n_tx_ports: n_tx,
                n_analog_beams: 0,
                array: None,
                beam_grid: None,
                boresight,
                sector_pattern: kind == ScenarioKind::DU4GHz,
            },
            ScenarioKind::InH30GHz => Self {
                n_tx_ports: 2,
                n_analog_beams: 16,
                array: Some(ArrayGeometry { rows: 4, cols: 4 }),
                beam_grid: Some(BeamGrid {
                    n_az: 4,
                    n_el: 4,
                    az_span: 1.0,
                    el_span: 1.0,
                }),
                boresight,
                sector_pattern: false,
            },
            ScenarioKind::DU30GHz => Self {
                n_tx_ports: 2,
                n_analog_beams: 32,
                array: Some(ArrayGeometry { rows: 8, cols: 8 }),
                beam_grid: Some(BeamGrid {
                    n_az: 8,
                    n_el: 4,
                    az_span: 1.0,
                    el_span: 0.25,
                }),
                boresight,
                sector_pattern: false,
            },
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct UePanelConfig {
    pub n_panels: usize,
    pub beams_per_panel: usize,
    pub rx_ports_per_beam: usize,
    pub total_rx_ports: usize,
    pub array: Option<ArrayGeometry>,
    pub beam_grid: Option<BeamGrid>,
}

impl UePanelConfig {
    pub fn for_kind(kind: ScenarioKind) -> Self {
        if kind.is_mmwave() {
            Self {
                n_panels: 2,
                beams_per_panel: 8,
                rx_ports_per_beam: 2,
                total_rx_ports: 4,
                array: Some(ArrayGeometry { rows: 2, cols: 4 }),
                beam_grid: Some(BeamGrid {
                    n_az: 4,
                    n_el: 2,
                    az_span: 1.0,
                    el_span: 1.0,
                }),
            }
        } else {
            Self {
                n_panels: 1,
                beams_per_panel: 0,
                rx_ports_per_beam: 4,
                total_rx_ports: 4,
                array: None,
                beam_grid: None,
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trp {
    pub id: usize,
    /// Physical site; co-sited sectors share it.
    pub site: usize,
    pub position: Point3,
    pub antenna: AntennaConfig,
    pub cluster_id: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CoordinationCluster {
    pub id: usize,
    pub member_trps: Vec<usize>,
}

/// A dropped UE. The transfer it downloads lives in the engine.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Ue {
    pub id: u64,
    pub position: Point3,
    pub panel: UePanelConfig,
    /// Facing direction of the first panel (30 GHz); the second faces the
    /// opposite way.
    pub orientation_deg: f64,
    pub cluster_id: usize,
}

/// Geometry knobs with scenario defaults.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LayoutParams {
    pub n_tx: usize,
    pub inh_spacing_m: f64,
    pub inh_wall_offset_m: f64,
    pub inh_height_m: f64,
    pub inh_depth_m: f64,
    pub du_isd_m: f64,
    pub du_height_m: f64,
    pub du_downtilt_deg: f64,
    /// Wraparound distances; honored for full-scale DU layouts only.
    pub wraparound: bool,
}

impl Default for LayoutParams {
    fn default() -> Self {
        Self {
            n_tx: 2,
            inh_spacing_m: 20.0,
            inh_wall_offset_m: 10.0,
            inh_height_m: 3.0,
            inh_depth_m: 50.0,
            du_isd_m: 200.0,
            du_height_m: 25.0,
            du_downtilt_deg: 12.0,
            wraparound: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
enum Area {
    Rect { width: f64, depth: f64 },
    Hex { sites: Vec<Point3>, isd: f64 },
}

#[derive(Clone, Debug, PartialEq)]
pub struct Layout {
    pub kind: ScenarioKind,
    pub scale: LayoutScale,
    pub trps: Vec<Trp>,
    pub clusters: Vec<CoordinationCluster>,
    area: Area,
    wrap_shifts: Vec<[f64; 2]>,
}

/// Axial hex coordinates of the sites within `rings` rings, center first,
/// each ring walked counter-clockwise from the +x neighbor.
fn hex_sites(rings: usize, isd: f64) -> Vec<[f64; 2]> {
    const DIRS: [(i64, i64); 6] = [(1, 0), (0, 1), (-1, 1), (-1, 0), (0, -1), (1, -1)];
    let mut axial = vec![(0i64, 0i64)];
    for ring in 1..=rings as i64 {
        let mut q = ring;
        let mut r = 0;
        for &(dq, dr) in DIRS.iter().skip(2).chain(DIRS.iter().take(2)) {
            for _ in 0..ring {
                axial.push((q, r));
                q += dq;
                r += dr;
            }
        }
    }
    axial
        .into_iter()
        .map(|(q, r)| {
            let (q, r) = (q as f64, r as f64);
            [isd * (q + r / 2.0), isd * r * 3f64.sqrt() / 2.0]
        })
        .collect()
}

/// Translation vectors of the wraparound images for a 7- or 19-site layout.
fn hex_wrap_shifts(n_sites: usize, isd: f64) -> Vec<[f64; 2]> {
    // Cluster translation i·a1 + j·a2 with i² + ij + j² = n_sites.
    let (i, j) = match n_sites {
        7 => (2.0, 1.0),
        19 => (3.0, 2.0),
        _ => return Vec::new(),
    };
    let base = [isd * (i + j / 2.0), isd * j * 3f64.sqrt() / 2.0];
    (0..6)
        .map(|k| {
            let a = std::f64::consts::FRAC_PI_3 * k as f64;
            [
                base[0] * a.cos() - base[1] * a.sin(),
                base[0] * a.sin() + base[1] * a.cos(),
            ]
        })
        .collect()
}

/// Builds the TRP set and clusters for `kind`. Deterministic.
pub fn generate_layout(kind: ScenarioKind, scale: LayoutScale, params: &LayoutParams) -> Layout {
    let mut trps = Vec::new();
    let mut clusters = Vec::new();
    let (area, wrap_shifts) = if kind.is_indoor() {
        let per_row = match scale {
            LayoutScale::Full => 6,
            LayoutScale::Desk => 2,
        };
        let boresight = Boresight {
            azimuth_deg: 0.0,
            downtilt_deg: 90.0,
        };
        let width = per_row as f64 * params.inh_spacing_m;
        let rows_y = [
            params.inh_wall_offset_m,
            params.inh_depth_m - params.inh_wall_offset_m,
        ];
        for (row, &y) in rows_y.iter().enumerate() {
            for k in 0..per_row {
                let id = row * per_row + k;
                trps.push(Trp {
                    id,
                    site: id,
                    position: Point3::new(
                        params.inh_spacing_m * (k as f64 + 0.5),
                        y,
                        params.inh_height_m,
                    ),
                    antenna: AntennaConfig::for_kind(kind, params.n_tx, boresight),
                    cluster_id: id / 2,
                });
            }
        }
        for c in 0..trps.len() / 2 {
            clusters.push(CoordinationCluster {
                id: c,
                member_trps: vec![2 * c, 2 * c + 1],
            });
        }
        (
            Area::Rect {
                width,
                depth: params.inh_depth_m,
            },
            Vec::new(),
        )
    } else {
        let n_sites = match (kind, scale) {
            (ScenarioKind::DU4GHz, LayoutScale::Full) => 19,
            _ => 7,
        };
        let rings = if n_sites == 19 { 2 } else { 1 };
        let sites = hex_sites(rings, params.du_isd_m);
        debug_assert_eq!(sites.len(), n_sites);
        for (s, xy) in sites.iter().enumerate() {
            let mut members = Vec::with_capacity(3);
            for sector in 0..3 {
                let id = 3 * s + sector;
                let boresight = Boresight {
                    azimuth_deg: 30.0 + 120.0 * sector as f64,
                    downtilt_deg: params.du_downtilt_deg,
                };
                trps.push(Trp {
                    id,
                    site: s,
                    position: Point3::new(xy[0], xy[1], params.du_height_m),
                    antenna: AntennaConfig::for_kind(kind, params.n_tx, boresight),
                    cluster_id: s,
                });
                members.push(id);
            }
            clusters.push(CoordinationCluster {
                id: s,
                member_trps: members,
            });
        }
        let shifts = if params.wraparound && scale == LayoutScale::Full {
            hex_wrap_shifts(n_sites, params.du_isd_m)
        } else {
            Vec::new()
        };
        (
            Area::Hex {
                sites: sites.iter().map(|p| Point3::new(p[0], p[1], 0.0)).collect(),
                isd: params.du_isd_m,
            },
            shifts,
        )
    };
    Layout {
        kind,
        scale,
        trps,
        clusters,
        area,
        wrap_shifts,
    }
}

impl Layout {
    /// Uniform UE position over the coverage area at [`UE_HEIGHT_M`].
    pub fn drop_ue(&self, rng: &mut SimRng) -> Point3 {
        match &self.area {
            Area::Rect { width, depth } => Point3::new(
                rng.random::<f64>() * width,
                rng.random::<f64>() * depth,
                UE_HEIGHT_M,
            ),
            Area::Hex { sites, isd } => {
                let site = &sites[rng.random_range(0..sites.len())];
                let half = isd / 2.0;
                let circ = isd / 3f64.sqrt();
                loop {
                    let x = (2.0 * rng.random::<f64>() - 1.0) * half;
                    let y = (2.0 * rng.random::<f64>() - 1.0) * circ;
                    if in_hex_cell(x, y, half) {
                        return Point3::new(site.x + x, site.y + y, UE_HEIGHT_M);
                    }
                }
            }
        }
    }

    /// Vector from `trp` to `target`, using the nearest wraparound image of
    /// the TRP when wraparound is enabled.
    pub fn link_vector(&self, trp: &Trp, target: &Point3) -> [f64; 3] {
        let mut best = target.sub(&trp.position);
        if self.wrap_shifts.is_empty() {
            return best;
        }
        let mut best_d2 = best[0] * best[0] + best[1] * best[1];
        for s in &self.wrap_shifts {
            let v = [
                target.x - (trp.position.x + s[0]),
                target.y - (trp.position.y + s[1]),
            ];
            let d2 = v[0] * v[0] + v[1] * v[1];
            if d2 < best_d2 {
                best_d2 = d2;
                best = [v[0], v[1], best[2]];
            }
        }
        best
    }

    pub fn n_trps(&self) -> usize {
        self.trps.len()
    }

    pub fn cluster_of(&self, trp: usize) -> usize {
        self.trps[trp].cluster_id
    }
}

/// Point-in-hexagon test for a site cell of inradius `half` whose flat sides
/// face 0°, 60° and 120°.
fn in_hex_cell(x: f64, y: f64, half: f64) -> bool {
    let c60 = 0.5;
    let s60 = 3f64.sqrt() / 2.0;
    x.abs() <= half
        && (x * c60 + y * s60).abs() <= half
        && (-x * c60 + y * s60).abs() <= half
}

/// Index of the TRP with the strongest coupling gain; ties go to the lowest
/// id.
pub fn strongest_trp(coupling_db: &[f64]) -> usize {
    assert!(!coupling_db.is_empty(), "no TRPs to associate with");
    let mut best = 0;
    for (i, &g) in coupling_db.iter().enumerate().skip(1) {
        if g > coupling_db[best] {
            best = i;
        }
    }
    best
}

/// Cluster of the strongest-coupled TRP.
pub fn associate_cluster(trps: &[Trp], coupling_db: &[f64]) -> usize {
    assert_eq!(trps.len(), coupling_db.len());
    trps[strongest_trp(coupling_db)].cluster_id
}
