//! Synthetic D-MIMO scenarios: AP placement, per-AP beam codebooks, UE drops and
//! the full L1-RSRP grid seen by each UE.
//!
//! The channel is parametric: free-space path loss, a Gaussian main lobe per
//! beam (quadratic in dB, -3 dB at half the beamwidth, floored 30 dB below the
//! peak), an optional directional UE antenna with the same lobe shape, and one
//! log-normal shadowing draw per UE/AP link.

use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::seed;

pub const FORMAT_VERSION: u32 = 1;

/// Shortest propagation distance the path-loss model accepts.
pub const MIN_DISTANCE_M: f64 = 1.0;

/// Lobe floor relative to the peak gain.
pub const LOBE_FLOOR_DB: f64 = -30.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum UeAntenna {
    Omni,
    Directional,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const fn new(x: f64, y: f64) -> Self {
        Point { x, y }
    }

    pub fn distance(&self, other: &Point) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }

    /// Azimuth of `other` seen from `self`, degrees in (-180, 180].
    pub fn bearing_to(&self, other: &Point) -> f64 {
        (other.y - self.y).atan2(other.x - self.x).to_degrees()
    }
}

/// Axis-aligned deployment area with its lower-left corner at the origin.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Area {
    pub width_m: f64,
    pub height_m: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScenarioConfig {
    pub num_aps: usize,
    pub beams_per_ap: usize,
    pub area: Area,
    /// Explicit AP coordinates; `None` places the APs on a regular grid.
    pub ap_positions: Option<Vec<Point>>,
    pub ue_count: usize,
    pub carrier_freq_ghz: f64,
    pub shadowing_sigma_db: f64,
    pub ue_antenna: UeAntenna,
    pub ue_antenna_gain_db: f64,
    pub ue_beamwidth_deg: f64,
    pub beamwidth_deg: f64,
    pub tx_power_dbm: f64,
    pub noise_floor_dbm: f64,
    pub seed: u64,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig {
            num_aps: 10,
            beams_per_ap: 32,
            area: Area {
                width_m: 200.0,
                height_m: 200.0,
            },
            ap_positions: None,
            ue_count: 1500,
            carrier_freq_ghz: 28.0,
            shadowing_sigma_db: 4.0,
            ue_antenna: UeAntenna::Omni,
            ue_antenna_gain_db: 9.0,
            ue_beamwidth_deg: 60.0,
            beamwidth_deg: 11.25,
            tx_power_dbm: 40.0,
            noise_floor_dbm: -120.0,
            seed: 1,
        }
    }
}

impl ScenarioConfig {
    pub fn shape(&self) -> GridShape {
        GridShape {
            num_aps: self.num_aps,
            beams_per_ap: self.beams_per_ap,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.num_aps == 0 || self.beams_per_ap == 0 {
            return bad("grid has zero beams (num_aps * beams_per_ap = 0)");
        }
        if self.beams_per_ap < 2 {
            return bad("beams_per_ap must be at least 2");
        }
        if !(self.area.width_m > 0.0 && self.area.height_m > 0.0) {
            return bad("deployment area has zero extent");
        }
        if self.ue_count == 0 {
            return bad("ue_count must be positive");
        }
        if !(self.shadowing_sigma_db >= 0.0) {
            return bad("shadowing_sigma_db must be non-negative");
        }
        if !(self.beamwidth_deg > 0.0 && self.beamwidth_deg < 180.0) {
            return bad("beamwidth_deg must lie in (0, 180)");
        }
        if self.ue_antenna == UeAntenna::Directional
            && !(self.ue_beamwidth_deg > 0.0 && self.ue_beamwidth_deg < 360.0)
        {
            return bad("ue_beamwidth_deg must lie in (0, 360)");
        }
        if !(self.carrier_freq_ghz > 0.0) {
            return bad("carrier_freq_ghz must be positive");
        }
        if let Some(aps) = &self.ap_positions {
            if aps.len() != self.num_aps {
                return Err(Error::Config(format!(
                    "ap_positions lists {} points for {} APs",
                    aps.len(),
                    self.num_aps
                )));
            }
        }
        Ok(())
    }

    /// AP coordinates, either explicit or laid out on a near-square grid of
    /// cell centres covering the area.
    pub fn ap_layout(&self) -> Vec<Point> {
        if let Some(aps) = &self.ap_positions {
            return aps.clone();
        }
        let cols = (self.num_aps as f64).sqrt().ceil() as usize;
        let rows = self.num_aps.div_ceil(cols);
        let dx = self.area.width_m / cols as f64;
        let dy = self.area.height_m / rows as f64;
        (0..self.num_aps)
            .map(|i| {
                let (r, c) = (i / cols, i % cols);
                Point::new((c as f64 + 0.5) * dx, (r as f64 + 0.5) * dy)
            })
            .collect()
    }

    /// Boresight azimuth of beam `beam`, uniformly spaced over the full circle.
    pub fn boresight_deg(&self, beam: usize) -> f64 {
        beam as f64 * 360.0 / self.beams_per_ap as f64
    }
}

/// Dimensions of an RSRP grid: `num_aps` APs times `beams_per_ap` beams.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GridShape {
    pub num_aps: usize,
    pub beams_per_ap: usize,
}

impl GridShape {
    pub fn new(num_aps: usize, beams_per_ap: usize) -> Self {
        GridShape {
            num_aps,
            beams_per_ap,
        }
    }

    pub fn len(&self) -> usize {
        self.num_aps * self.beams_per_ap
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn index(&self, ap: usize, beam: usize) -> Result<BeamIndex> {
        if ap >= self.num_aps || beam >= self.beams_per_ap {
            return Err(Error::Argument(format!(
                "beam ({ap}, {beam}) outside {}x{} grid",
                self.num_aps, self.beams_per_ap
            )));
        }
        Ok(BeamIndex {
            ap,
            beam,
            flat: ap * self.beams_per_ap + beam,
        })
    }

    pub fn from_flat(&self, flat: usize) -> Result<BeamIndex> {
        if flat >= self.len() {
            return Err(Error::Argument(format!(
                "flat index {flat} outside grid of {}",
                self.len()
            )));
        }
        Ok(BeamIndex {
            ap: flat / self.beams_per_ap,
            beam: flat % self.beams_per_ap,
            flat,
        })
    }
}

/// One beam of the grid, addressable both as (ap, beam) and as a flat index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct BeamIndex {
    pub ap: usize,
    pub beam: usize,
    pub flat: usize,
}

/// UE location and antenna orientation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UeState {
    pub position: Point,
    pub azimuth_deg: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RsrpSample<F> {
    pub ue_id: usize,
    pub ue: UeState,
    pub grid: Vec<F>,
}

impl<F: Real> RsrpSample<F> {
    /// Flat index of the strongest beam, lowest index on ties.
    pub fn best_index(&self) -> usize {
        argmax(&self.grid)
    }
}

/// Metadata header stored alongside every dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub format_version: u32,
    pub num_aps: usize,
    pub beams_per_ap: usize,
    pub seed: u64,
    pub config: ScenarioConfig,
}

impl DatasetMeta {
    pub fn shape(&self) -> GridShape {
        GridShape::new(self.num_aps, self.beams_per_ap)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset<F> {
    pub meta: DatasetMeta,
    pub rows: Vec<RsrpSample<F>>,
}

impl<F: Real> Dataset<F> {
    pub fn shape(&self) -> GridShape {
        self.meta.shape()
    }

    /// Keeps the rows at `indices`, in that order.
    pub fn subset(&self, indices: &[usize]) -> Dataset<F> {
        Dataset {
            meta: self.meta.clone(),
            rows: indices.iter().map(|&i| self.rows[i].clone()).collect(),
        }
    }
}

/// Index of the largest value; ties go to the lowest index, NaN never wins.
pub fn argmax<F: Real>(values: &[F]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v > values[best] || values[best].is_nan() {
            best = i;
        }
    }
    best
}

/// Wraps an angle difference into [-180, 180).
pub fn wrap_deg(a: f64) -> f64 {
    (a + 180.0).rem_euclid(360.0) - 180.0
}

/// Free-space path loss in dB for a distance in metres (clamped at 1 m).
pub fn free_space_path_loss_db(distance_m: f64, carrier_freq_ghz: f64) -> f64 {
    let d = distance_m.max(MIN_DISTANCE_M);
    20.0 * d.log10() + 20.0 * carrier_freq_ghz.log10() + 32.45
}

/// Gaussian lobe in dB relative to peak: -12 (offset / beamwidth)^2, floored.
pub fn lobe_gain_db(offset_deg: f64, beamwidth_deg: f64) -> f64 {
    let a = offset_deg.abs().rem_euclid(360.0);
    let r = a.min(360.0 - a) / beamwidth_deg;
    (-12.0 * r * r).max(LOBE_FLOOR_DB)
}

/// UE antenna gain towards an AP at bearing `toward_ap_deg`.
pub fn ue_gain_db(config: &ScenarioConfig, ue: &UeState, toward_ap_deg: f64) -> f64 {
    match config.ue_antenna {
        UeAntenna::Omni => 0.0,
        UeAntenna::Directional => {
            config.ue_antenna_gain_db
                + lobe_gain_db(toward_ap_deg - ue.azimuth_deg, config.ue_beamwidth_deg)
        }
    }
}

/// RSRP in dBm of `beam` from an AP at `ap_pos` seen by `ue`.
pub fn rsrp_of<F: Real>(
    config: &ScenarioConfig,
    ap_pos: Point,
    beam: BeamIndex,
    ue: &UeState,
    shadow_db: F,
) -> F {
    let d = ap_pos.distance(&ue.position);
    let pl = free_space_path_loss_db(d, config.carrier_freq_ghz);
    let (ap_to_ue, ue_to_ap) = if d > 0.0 {
        let b = ap_pos.bearing_to(&ue.position);
        (b, b + 180.0)
    } else {
        (config.boresight_deg(beam.beam), ue.azimuth_deg)
    };
    let g_beam = lobe_gain_db(ap_to_ue - config.boresight_deg(beam.beam), config.beamwidth_deg);
    let g_ue = ue_gain_db(config, ue, ue_to_ap);
    let v = F::of(config.tx_power_dbm - pl + g_beam + g_ue) + shadow_db;
    let floor = F::of(config.noise_floor_dbm);
    if v > floor {
        v
    } else {
        floor
    }
}

/// Full grid for a UE given one shadowing draw per AP.
pub fn rsrp_grid<F: Real>(
    config: &ScenarioConfig,
    aps: &[Point],
    ue: &UeState,
    shadows_db: &[F],
) -> Vec<F> {
    let shape = config.shape();
    let mut grid = Vec::with_capacity(shape.len());
    for (ap, pos) in aps.iter().enumerate() {
        for b in 0..shape.beams_per_ap {
            let beam = BeamIndex {
                ap,
                beam: b,
                flat: ap * shape.beams_per_ap + b,
            };
            grid.push(rsrp_of(config, *pos, beam, ue, shadows_db[ap]));
        }
    }
    grid
}

fn draw_row<F: Real>(config: &ScenarioConfig, aps: &[Point], row: usize) -> RsrpSample<F> {
    let mut rng = seed::stream_rng(config.seed, row as u64);
    let x = rng.random::<f64>() * config.area.width_m;
    let y = rng.random::<f64>() * config.area.height_m;
    let azimuth_deg = rng.random::<f64>() * 360.0;
    let shadow = Normal::new(0.0, config.shadowing_sigma_db).expect("sigma validated");
    let shadows: Vec<F> = (0..aps.len())
        .map(|_| F::of(shadow.sample(&mut rng)))
        .collect();
    let ue = UeState {
        position: Point::new(x, y),
        azimuth_deg,
    };
    RsrpSample {
        ue_id: row,
        ue,
        grid: rsrp_grid(config, aps, &ue, &shadows),
    }
}

/// Draws `ue_count` UEs and their RSRP grids. Each row uses its own RNG stream
/// derived from `(seed, row)`, so the output does not depend on evaluation order.
pub fn generate_scenario<F: Real>(config: &ScenarioConfig) -> Result<Dataset<F>> {
    config.validate()?;
    let aps = config.ap_layout();
    let rows = (0..config.ue_count)
        .map(|row| draw_row(config, &aps, row))
        .collect();
    Ok(Dataset {
        meta: DatasetMeta {
            format_version: FORMAT_VERSION,
            num_aps: config.num_aps,
            beams_per_ap: config.beams_per_ap,
            seed: config.seed,
            config: config.clone(),
        },
        rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single_ap(antenna: UeAntenna) -> ScenarioConfig {
        ScenarioConfig {
            num_aps: 1,
            beams_per_ap: 8,
            ap_positions: Some(vec![Point::new(50.0, 50.0)]),
            ue_count: 4,
            shadowing_sigma_db: 0.0,
            ue_antenna: antenna,
            ..ScenarioConfig::default()
        }
    }

    #[test]
    fn rejects_degenerate_configs() {
        let c = ScenarioConfig {
            ue_count: 0,
            ..Default::default()
        };
        assert!(matches!(generate_scenario::<f64>(&c), Err(Error::Config(_))));
        let c = ScenarioConfig {
            area: Area {
                width_m: 0.0,
                height_m: 10.0,
            },
            ..Default::default()
        };
        assert!(matches!(generate_scenario::<f64>(&c), Err(Error::Config(_))));
        let c = ScenarioConfig {
            num_aps: 0,
            ..Default::default()
        };
        assert!(matches!(generate_scenario::<f64>(&c), Err(Error::Config(_))));
        let c = ScenarioConfig {
            beamwidth_deg: 180.0,
            ..Default::default()
        };
        assert!(c.validate().is_err());
    }

    #[test]
    fn boresight_value() {
        let c = single_ap(UeAntenna::Omni);
        let ue = UeState {
            position: Point::new(150.0, 50.0),
            azimuth_deg: 0.0,
        };
        let beam = c.shape().index(0, 0).unwrap();
        let got: f64 = rsrp_of(&c, Point::new(50.0, 50.0), beam, &ue, 0.0);
        let want = c.tx_power_dbm - free_space_path_loss_db(100.0, c.carrier_freq_ghz);
        assert!((got - want).abs() < 1e-12);
    }

    #[test]
    fn directional_adds_peak_gain_on_boresight() {
        let omni = single_ap(UeAntenna::Omni);
        let dir = single_ap(UeAntenna::Directional);
        // UE east of the AP, facing west (towards the AP).
        let ue = UeState {
            position: Point::new(150.0, 50.0),
            azimuth_deg: 180.0,
        };
        let beam = omni.shape().index(0, 0).unwrap();
        let a: f64 = rsrp_of(&omni, Point::new(50.0, 50.0), beam, &ue, 0.0);
        let b: f64 = rsrp_of(&dir, Point::new(50.0, 50.0), beam, &ue, 0.0);
        assert!((b - a - 9.0).abs() < 1e-9);
    }

    #[test]
    fn path_loss_doubling_distance() {
        let d = free_space_path_loss_db(80.0, 28.0) - free_space_path_loss_db(40.0, 28.0);
        assert!((d - 20.0 * 2f64.log10()).abs() < 1e-12);
        assert!((d - 6.0206).abs() < 1e-4);
    }

    #[test]
    fn zero_distance_is_clamped() {
        let c = single_ap(UeAntenna::Omni);
        let ue = UeState {
            position: Point::new(50.0, 50.0),
            azimuth_deg: 0.0,
        };
        let beam = c.shape().index(0, 3).unwrap();
        let v: f64 = rsrp_of(&c, Point::new(50.0, 50.0), beam, &ue, 0.0);
        assert!(v.is_finite());
        assert_eq!(free_space_path_loss_db(0.0, 28.0), free_space_path_loss_db(1.0, 28.0));
    }

    #[test]
    fn best_beam_matches_smallest_angular_offset() {
        let c = single_ap(UeAntenna::Omni);
        let ap = Point::new(50.0, 50.0);
        for (ux, uy) in [(90.0, 61.0), (20.0, 95.0), (10.0, 10.0), (51.0, 12.0)] {
            let ue = UeState {
                position: Point::new(ux, uy),
                azimuth_deg: 0.0,
            };
            let grid: Vec<f64> = rsrp_grid(&c, &[ap], &ue, &[0.0]);
            // Oracle: brute-force the smallest wrapped boresight offset.
            let bearing = ap.bearing_to(&ue.position);
            let mut best = 0;
            let mut best_off = f64::INFINITY;
            for b in 0..c.beams_per_ap {
                let off = wrap_deg(bearing - c.boresight_deg(b)).abs();
                if off < best_off {
                    best_off = off;
                    best = b;
                }
            }
            assert_eq!(argmax(&grid), best);
        }
    }

    #[test]
    fn lobe_is_symmetric_and_floored() {
        for off in [0.5, 3.0, 7.5, 20.0, 90.0, 179.0] {
            assert_eq!(lobe_gain_db(off, 15.0), lobe_gain_db(-off, 15.0));
        }
        assert!((lobe_gain_db(7.5, 15.0) + 3.0).abs() < 1e-12);
        assert_eq!(lobe_gain_db(120.0, 15.0), LOBE_FLOOR_DB);
    }

    #[test]
    fn generation_is_deterministic() {
        let c = ScenarioConfig {
            ue_count: 20,
            ..Default::default()
        };
        let a: Dataset<f64> = generate_scenario(&c).unwrap();
        let b: Dataset<f64> = generate_scenario(&c).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.rows[0].grid.len(), 320);
        for r in &a.rows {
            assert!(r.grid.iter().all(|v| v.is_finite() && *v >= c.noise_floor_dbm));
        }
        let other = generate_scenario::<f64>(&ScenarioConfig { seed: 2, ..c }).unwrap();
        assert_ne!(a.rows[0].grid, other.rows[0].grid);
    }

    #[test]
    fn flat_index_round_trip() {
        let s = GridShape::new(10, 32);
        for flat in 0..s.len() {
            let b = s.from_flat(flat).unwrap();
            assert_eq!(s.index(b.ap, b.beam).unwrap(), b);
        }
        assert!(s.from_flat(320).is_err());
        assert!(s.index(10, 0).is_err());
    }

    #[test]
    fn argmax_prefers_lowest_index() {
        assert_eq!(argmax(&[1.0, 3.0, 3.0, 2.0]), 1);
        assert_eq!(argmax(&[f64::NAN, 1.0]), 1);
    }

    #[test]
    fn works_in_single_precision() {
        let c = ScenarioConfig {
            ue_count: 5,
            ..Default::default()
        };
        let a: Dataset<f32> = generate_scenario(&c).unwrap();
        let b: Dataset<f64> = generate_scenario(&c).unwrap();
        for (ra, rb) in a.rows.iter().zip(&b.rows) {
            for (x, y) in ra.grid.iter().zip(&rb.grid) {
                assert!((*x as f64 - y).abs() < 1e-3);
            }
        }
    }
}
