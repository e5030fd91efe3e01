//! Global-frame fusion and per-worker particulate exposure.
//!
//! PM sensors report at about 1 Hz, identities at the radar frame rate. Both
//! streams are cut into tumbling windows; in each window the sensors' median
//! readings define a concentration field (inverse distance weighting or a
//! smoothed zone grid), and a worker's exposure is the time average of the
//! field along the worker's trajectory.

use std::collections::BTreeMap;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{componentwise_median, median, Vec2};
use crate::radar_sim::RadarPose;
use crate::reid::GlobalId;

/// Below this distance a query point is taken to sit on the sensor.
pub const COINCIDENCE_M: f64 = 1e-3;
pub const SMOOTH_SELF: f64 = 0.6;
pub const SMOOTH_NEIGHBOR: f64 = 0.1;

/// `p ↦ R(rotation)·p + translation`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigidTransform {
    pub rotation: f64,
    pub translation: Vec2,
}

impl RigidTransform {
    pub const IDENTITY: RigidTransform = RigidTransform {
        rotation: 0.0,
        translation: Vec2::ZERO,
    };

    pub fn from_pose(pose: &RadarPose) -> Self {
        Self {
            rotation: pose.yaw,
            translation: pose.position,
        }
    }

    pub fn apply(&self, p: Vec2) -> Vec2 {
        p.rotate(self.rotation) + self.translation
    }

    pub fn inverse(&self) -> Self {
        Self {
            rotation: -self.rotation,
            translation: (Vec2::ZERO - self.translation).rotate(-self.rotation),
        }
    }
}

/// Radar-local point to the global frame: rotation by the yaw, then
/// translation by the radar position.
pub fn to_global(u_local: Vec2, pose: &RadarPose) -> Vec2 {
    RigidTransform::from_pose(pose).apply(u_local)
}

/// Particle size class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum PmClass {
    #[serde(rename = "pm1")]
    Pm1,
    #[serde(rename = "pm2_5")]
    Pm2_5,
    #[serde(rename = "pm10")]
    Pm10,
}

impl PmClass {
    pub const ALL: [PmClass; 3] = [PmClass::Pm1, PmClass::Pm2_5, PmClass::Pm10];
}

/// Concentrations of the three classes, µg/m³.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PmLevels {
    pub pm1: f64,
    pub pm2_5: f64,
    pub pm10: f64,
}

impl PmLevels {
    pub fn get(&self, class: PmClass) -> f64 {
        match class {
            PmClass::Pm1 => self.pm1,
            PmClass::Pm2_5 => self.pm2_5,
            PmClass::Pm10 => self.pm10,
        }
    }

    pub fn from_fn(mut f: impl FnMut(PmClass) -> f64) -> Self {
        Self {
            pm1: f(PmClass::Pm1),
            pm2_5: f(PmClass::Pm2_5),
            pm10: f(PmClass::Pm10),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PMSensorReading {
    pub sensor_id: String,
    pub position: Vec2,
    pub timestamp_s: f64,
    pub levels: PmLevels,
}

impl PMSensorReading {
    pub fn validate(&self) -> Result<()> {
        let ok = PmClass::ALL.iter().all(|&c| {
            let v = self.levels.get(c);
            v.is_finite() && v >= 0.0
        });
        if !ok || !self.position.is_finite() || !self.timestamp_s.is_finite() {
            return Err(Error::Data(format!(
                "sensor {} at {} s: concentrations must be finite and >= 0",
                self.sensor_id, self.timestamp_s
            )));
        }
        Ok(())
    }
}

/// Inverse distance weighting `Σ w_j·v_j / Σ w_j` with `w_j = 1/‖x - s_j‖^p`.
/// A query within [`COINCIDENCE_M`] of a sensor returns that sensor's value.
pub fn idw_estimate(x: Vec2, samples: &[(Vec2, f64)], p: f64) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::Domain("inverse distance weighting needs at least one reading".into()));
    }
    if !(p > 0.0) {
        return Err(Error::Config(format!("IDW exponent must be > 0, got {p}")));
    }
    let nearest = samples
        .iter()
        .map(|(s, v)| (x.distance(*s), *v))
        .min_by(|a, b| a.0.total_cmp(&b.0))
        .expect("non-empty");
    if nearest.0 < COINCIDENCE_M {
        return Ok(nearest.1);
    }
    let (mut num, mut den) = (0.0, 0.0);
    for (s, v) in samples {
        let w = x.distance(*s).powf(-p);
        num += w * v;
        den += w;
    }
    Ok(num / den)
}

/// Rectangular grid of square zones; points outside map to the nearest edge zone.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ZoneGrid {
    /// Lower-left corner.
    pub origin: Vec2,
    pub cell_size_m: f64,
    pub nx: usize,
    pub ny: usize,
}

impl ZoneGrid {
    pub fn validate(&self) -> Result<()> {
        if !(self.cell_size_m > 0.0) || self.nx == 0 || self.ny == 0 || !self.origin.is_finite() {
            return Err(Error::Config("zone grid needs cell_size_m > 0 and nx, ny >= 1".into()));
        }
        Ok(())
    }

    /// `(ix, iy)` of the zone containing `p`, clamped to the grid.
    pub fn zone_of(&self, p: Vec2) -> (usize, usize) {
        let clamp = |v: f64, n: usize| (v.floor().max(0.0) as usize).min(n - 1);
        let q = p - self.origin;
        (clamp(q.x / self.cell_size_m, self.nx), clamp(q.y / self.cell_size_m, self.ny))
    }

    pub fn center(&self, ix: usize, iy: usize) -> Vec2 {
        self.origin + Vec2::new((ix as f64 + 0.5) * self.cell_size_m, (iy as f64 + 0.5) * self.cell_size_m)
    }
}

/// One smoothing pass: self weight 0.6, 0.1 per 4-neighbor; weight of a
/// neighbor outside the grid stays with the cell itself.
pub fn smooth_zones(values: &Array2<f64>) -> Array2<f64> {
    let (nx, ny) = values.dim();
    Array2::from_shape_fn((nx, ny), |(i, j)| {
        let v = values[[i, j]];
        let mut acc = SMOOTH_SELF * v;
        let neighbors = [
            (i.checked_sub(1), Some(j)),
            ((i + 1 < nx).then_some(i + 1), Some(j)),
            (Some(i), j.checked_sub(1)),
            (Some(i), (j + 1 < ny).then_some(j + 1)),
        ];
        for n in neighbors {
            acc += SMOOTH_NEIGHBOR
                * match n {
                    (Some(a), Some(b)) => values[[a, b]],
                    _ => v,
                };
        }
        acc
    })
}

/// Concentration field over the site for one window.
#[derive(Debug, Clone, PartialEq)]
pub enum PMField {
    Idw {
        samples: Vec<(Vec2, PmLevels)>,
        p: f64,
    },
    Zones {
        grid: ZoneGrid,
        /// Smoothed values indexed `[[ix, iy]]`.
        values: [Array2<f64>; 3],
    },
}

fn class_index(c: PmClass) -> usize {
    match c {
        PmClass::Pm1 => 0,
        PmClass::Pm2_5 => 1,
        PmClass::Pm10 => 2,
    }
}

impl PMField {
    pub fn idw(readings: &[PMSensorReading], p: f64) -> Result<Self> {
        if readings.is_empty() {
            return Err(Error::Domain("IDW field needs at least one reading".into()));
        }
        if !(p > 0.0) {
            return Err(Error::Config(format!("IDW exponent must be > 0, got {p}")));
        }
        Ok(PMField::Idw {
            samples: readings.iter().map(|r| (r.position, r.levels)).collect(),
            p,
        })
    }

    pub fn evaluate(&self, x: Vec2, class: PmClass) -> Result<f64> {
        match self {
            PMField::Idw { samples, p } => {
                let s: Vec<(Vec2, f64)> = samples.iter().map(|(pos, l)| (*pos, l.get(class))).collect();
                idw_estimate(x, &s, *p)
            }
            PMField::Zones { grid, values } => {
                let (ix, iy) = grid.zone_of(x);
                Ok(values[class_index(class)][[ix, iy]])
            }
        }
    }

    pub fn evaluate_all(&self, x: Vec2) -> Result<PmLevels> {
        Ok(PmLevels {
            pm1: self.evaluate(x, PmClass::Pm1)?,
            pm2_5: self.evaluate(x, PmClass::Pm2_5)?,
            pm10: self.evaluate(x, PmClass::Pm10)?,
        })
    }
}

/// Zone field: each zone takes the median of the readings of the sensors
/// inside it, then one smoothing pass is applied.
pub fn zone_field(readings: &[PMSensorReading], grid: &ZoneGrid) -> Result<PMField> {
    grid.validate()?;
    let mut members: BTreeMap<(usize, usize), Vec<&PMSensorReading>> = BTreeMap::new();
    for r in readings {
        members.entry(grid.zone_of(r.position)).or_default().push(r);
    }
    let mut values: [Array2<f64>; 3] = std::array::from_fn(|_| Array2::zeros((grid.nx, grid.ny)));
    for ix in 0..grid.nx {
        for iy in 0..grid.ny {
            let Some(rs) = members.get(&(ix, iy)) else {
                return Err(Error::Config(format!("zone ({ix}, {iy}) has no PM sensor")));
            };
            for c in PmClass::ALL {
                let v: Vec<f64> = rs.iter().map(|r| r.levels.get(c)).collect();
                values[class_index(c)][[ix, iy]] = median(&v).expect("non-empty zone");
            }
        }
    }
    Ok(PMField::Zones {
        grid: grid.clone(),
        values: values.map(|v| smooth_zones(&v)),
    })
}

/// Time-averaged exposure of one identity over one window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExposureRecord {
    pub global_id: GlobalId,
    pub window_start_s: f64,
    pub window_end_s: f64,
    pub exposure: PmLevels,
    /// Componentwise median position over the window.
    pub median_position: Vec2,
    pub samples_used: usize,
    pub complete: bool,
}

/// Mean of the field along `trajectory`, which for evenly spaced samples is
/// the left Riemann sum of the time integral divided by the window length.
pub fn exposure(trajectory: &[(f64, Vec2)], field: &PMField, class: PmClass) -> Result<f64> {
    if trajectory.is_empty() {
        return Err(Error::Domain("exposure of an empty trajectory".into()));
    }
    let mut sum = 0.0;
    for (_, p) in trajectory {
        sum += field.evaluate(*p, class)?;
    }
    Ok(sum / trajectory.len() as f64)
}

/// Median reading of one sensor within a window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensorSummary {
    pub sensor_id: String,
    pub position: Vec2,
    pub levels: PmLevels,
    pub samples: usize,
}

/// Both streams restricted to one tumbling window.
#[derive(Debug, Clone, PartialEq)]
pub struct AlignedWindow {
    pub start_s: f64,
    pub end_s: f64,
    /// Trajectory samples per identity, in time order.
    pub trajectories: BTreeMap<GlobalId, Vec<(f64, Vec2)>>,
    pub sensors: Vec<SensorSummary>,
    /// Both streams have data in the window.
    pub complete: bool,
}

impl AlignedWindow {
    pub fn median_position(&self, gid: GlobalId) -> Option<Vec2> {
        let pts: Vec<Vec2> = self.trajectories.get(&gid)?.iter().map(|s| s.1).collect();
        componentwise_median(&pts)
    }

    /// Sensor medians as readings stamped at the window start.
    pub fn sensor_readings(&self) -> Vec<PMSensorReading> {
        self.sensors
            .iter()
            .map(|s| PMSensorReading {
                sensor_id: s.sensor_id.clone(),
                position: s.position,
                timestamp_s: self.start_s,
                levels: s.levels,
            })
            .collect()
    }
}

/// An identity at a global position at one time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IdentitySample {
    pub timestamp_s: f64,
    pub global_id: GlobalId,
    pub position: Vec2,
}

/// Splits both streams into tumbling windows `[k·w, (k+1)·w)` covering every
/// sample. Both streams must be sorted by time.
pub fn align_streams(
    identities: &[IdentitySample],
    readings: &[PMSensorReading],
    window_s: f64,
) -> Result<Vec<AlignedWindow>> {
    if !(window_s > 0.0) {
        return Err(Error::Config(format!("aggregation window must be > 0, got {window_s}")));
    }
    if let Some(w) = identities.windows(2).find(|w| w[1].timestamp_s < w[0].timestamp_s) {
        return Err(Error::Data(format!(
            "identity stream not sorted: {} s after {} s",
            w[1].timestamp_s, w[0].timestamp_s
        )));
    }
    if let Some(w) = readings.windows(2).find(|w| w[1].timestamp_s < w[0].timestamp_s) {
        return Err(Error::Data(format!(
            "PM stream not sorted: {} s after {} s",
            w[1].timestamp_s, w[0].timestamp_s
        )));
    }
    let index = |t: f64| (t / window_s).floor() as i64;
    let times = identities.iter().map(|s| s.timestamp_s).chain(readings.iter().map(|r| r.timestamp_s));
    let (lo, hi) = times.fold((i64::MAX, i64::MIN), |(lo, hi), t| (lo.min(index(t)), hi.max(index(t))));
    if lo > hi {
        return Ok(Vec::new());
    }
    let mut out = Vec::new();
    let (mut ii, mut ri) = (0, 0);
    for k in lo..=hi {
        let start = k as f64 * window_s;
        let end = (k + 1) as f64 * window_s;
        let mut trajectories: BTreeMap<GlobalId, Vec<(f64, Vec2)>> = BTreeMap::new();
        while ii < identities.len() && index(identities[ii].timestamp_s) == k {
            let s = identities[ii];
            trajectories.entry(s.global_id).or_default().push((s.timestamp_s, s.position));
            ii += 1;
        }
        let mut by_sensor: BTreeMap<&str, Vec<&PMSensorReading>> = BTreeMap::new();
        while ri < readings.len() && index(readings[ri].timestamp_s) == k {
            by_sensor.entry(&readings[ri].sensor_id).or_default().push(&readings[ri]);
            ri += 1;
        }
        let sensors: Vec<SensorSummary> = by_sensor
            .into_iter()
            .map(|(id, rs)| {
                let positions: Vec<Vec2> = rs.iter().map(|r| r.position).collect();
                SensorSummary {
                    sensor_id: id.to_string(),
                    position: componentwise_median(&positions).expect("non-empty"),
                    levels: PmLevels::from_fn(|c| {
                        median(&rs.iter().map(|r| r.levels.get(c)).collect::<Vec<_>>()).expect("non-empty")
                    }),
                    samples: rs.len(),
                }
            })
            .collect();
        let complete = !trajectories.is_empty() && !sensors.is_empty();
        out.push(AlignedWindow {
            start_s: start,
            end_s: end,
            trajectories,
            sensors,
            complete,
        });
    }
    Ok(out)
}

/// How the per-window field is built.
#[derive(Debug, Clone, PartialEq)]
pub enum FieldMode {
    Idw { p: f64 },
    Zones(ZoneGrid),
}

impl FieldMode {
    pub fn build(&self, readings: &[PMSensorReading]) -> Result<PMField> {
        match self {
            FieldMode::Idw { p } => PMField::idw(readings, *p),
            FieldMode::Zones(grid) => zone_field(readings, grid),
        }
    }
}

/// Exposure records for every identity of every complete window, in
/// `(window, global id)` order, plus the field of each complete window.
pub fn window_exposures(windows: &[AlignedWindow], mode: &FieldMode) -> Result<(Vec<ExposureRecord>, Vec<(f64, PMField)>)> {
    let mut records = Vec::new();
    let mut fields = Vec::new();
    for w in windows {
        if !w.complete {
            continue;
        }
        let field = mode.build(&w.sensor_readings())?;
        for (gid, traj) in &w.trajectories {
            let levels = PmLevels {
                pm1: exposure(traj, &field, PmClass::Pm1)?,
                pm2_5: exposure(traj, &field, PmClass::Pm2_5)?,
                pm10: exposure(traj, &field, PmClass::Pm10)?,
            };
            records.push(ExposureRecord {
                global_id: *gid,
                window_start_s: w.start_s,
                window_end_s: w.end_s,
                exposure: levels,
                median_position: w.median_position(*gid).expect("non-empty trajectory"),
                samples_used: traj.len(),
                complete: true,
            });
        }
        fields.push((w.start_s, field));
    }
    Ok((records, fields))
}

/// Session exposure per identity: mean of its window exposures.
pub fn session_means(records: &[ExposureRecord]) -> BTreeMap<GlobalId, PmLevels> {
    let mut acc: BTreeMap<GlobalId, (PmLevels, usize)> = BTreeMap::new();
    for r in records.iter().filter(|r| r.complete) {
        let e = acc.entry(r.global_id).or_default();
        e.0.pm1 += r.exposure.pm1;
        e.0.pm2_5 += r.exposure.pm2_5;
        e.0.pm10 += r.exposure.pm10;
        e.1 += 1;
    }
    acc.into_iter()
        .map(|(g, (s, n))| {
            let n = n as f64;
            (g, PmLevels { pm1: s.pm1 / n, pm2_5: s.pm2_5 / n, pm10: s.pm10 / n })
        })
        .collect()
}
