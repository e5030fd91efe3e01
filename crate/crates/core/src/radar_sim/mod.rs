//! Deterministic synthetic mmWave FMCW observations of a worksite.
//!
//! A [`Scene`] holds quasi-static workers performing tool activities, a set of
//! radars and static clutter. [`simulate_frame`] renders, for one radar and one
//! instant, the point cloud detections and the Doppler×range power matrix the
//! radar would report. Everything is a pure function of `(scene, radar, t)`.
//!
//! Coordinates are right-handed with z up. A radar's local frame has its
//! boresight along local +y; the pose `yaw` rotates local axes into the global
//! frame counterclockwise, so the boresight points along global angle
//! `yaw + π/2`.

mod detect;
pub mod fmcw;
mod scene;
mod simulate;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

pub use detect::{detect_points, estimate_noise_floor, RdDetection};
pub use fmcw::{beat_freq_to_range, phase_shift_to_velocity, ChirpConfig};
pub use scene::{Activity, Clutter, Scene, SimParams, WorkerSpec};
pub use simulate::{ground_truth, simulate_frame, visibility, worker_spread_radius, GroundTruthWorker};

use crate::error::{Error, Result};
use crate::geometry::{wrap_pi, Vec2};

pub type RadarId = u32;
pub type WorkerId = u32;

/// Mounting pose of one radar in the global frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RadarPose {
    pub id: RadarId,
    pub position: Vec2,
    /// Rotation of the local frame, radians counterclockwise from global +x.
    pub yaw: f64,
    /// Full azimuth field of view, in `(0, 2π]`.
    pub fov_azimuth: f64,
    pub max_range: f64,
    pub mount_height: f64,
}

impl RadarPose {
    pub fn validate(&self) -> Result<()> {
        if !(self.fov_azimuth > 0.0 && self.fov_azimuth <= std::f64::consts::TAU) {
            return Err(Error::Config(format!(
                "radar {}: fov_azimuth must be in (0, 2π], got {}",
                self.id, self.fov_azimuth
            )));
        }
        if !(self.max_range > 0.0) || !self.position.is_finite() || !self.yaw.is_finite() {
            return Err(Error::Config(format!(
                "radar {}: max_range must be > 0 and the pose finite",
                self.id
            )));
        }
        Ok(())
    }

    /// Global direction of the boresight.
    pub fn boresight(&self) -> f64 {
        self.yaw + std::f64::consts::FRAC_PI_2
    }

    pub fn to_local(&self, global: Vec2) -> Vec2 {
        (global - self.position).rotate(-self.yaw)
    }

    pub fn to_global(&self, local: Vec2) -> Vec2 {
        local.rotate(self.yaw) + self.position
    }

    /// Global angle of the line of sight from the radar to `target`.
    pub fn line_of_sight(&self, target: Vec2) -> f64 {
        (target - self.position).angle()
    }

    /// Whether `target` lies inside the azimuth sector and range of the radar.
    pub fn in_field_of_view(&self, target: Vec2) -> bool {
        let range = target.distance(self.position);
        if range > self.max_range {
            return false;
        }
        if range == 0.0 {
            return false;
        }
        let off = wrap_pi(self.line_of_sight(target) - self.boresight());
        off.abs() <= 0.5 * self.fov_azimuth + 1e-12
    }
}

/// One detection: local position, radial velocity and linear power.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 5]", into = "[f64; 5]")]
pub struct RadarPoint {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub doppler: f64,
    pub power: f64,
}

impl RadarPoint {
    pub fn xy(&self) -> Vec2 {
        Vec2::new(self.x, self.y)
    }

    pub fn is_finite(&self) -> bool {
        [self.x, self.y, self.z, self.doppler, self.power]
            .iter()
            .all(|v| v.is_finite())
    }
}

impl From<[f64; 5]> for RadarPoint {
    fn from(v: [f64; 5]) -> Self {
        Self {
            x: v[0],
            y: v[1],
            z: v[2],
            doppler: v[3],
            power: v[4],
        }
    }
}

impl From<RadarPoint> for [f64; 5] {
    fn from(p: RadarPoint) -> Self {
        [p.x, p.y, p.z, p.doppler, p.power]
    }
}

/// The detections one radar reports for one frame, in its local frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointCloudFrame {
    pub radar_id: RadarId,
    pub timestamp_s: f64,
    /// Each point serialized as `[x, y, z, doppler, power]`.
    pub points: Vec<RadarPoint>,
}

/// Doppler×range power matrix of one radar frame (`data[[doppler, range]]`).
#[derive(Debug, Clone, PartialEq)]
pub struct RDHeatmap {
    pub radar_id: RadarId,
    pub timestamp_s: f64,
    pub data: Array2<f32>,
    pub range_resolution_m: f64,
    pub doppler_resolution_mps: f64,
}

impl RDHeatmap {
    pub fn zeros(radar_id: RadarId, timestamp_s: f64, cfg: &ChirpConfig) -> Self {
        Self {
            radar_id,
            timestamp_s,
            data: Array2::zeros((cfg.doppler_bins as usize, cfg.range_bins as usize)),
            range_resolution_m: cfg.range_resolution(),
            doppler_resolution_mps: cfg.doppler_resolution(),
        }
    }

    pub fn doppler_bins(&self) -> usize {
        self.data.nrows()
    }

    pub fn range_bins(&self) -> usize {
        self.data.ncols()
    }

    /// Sum of power per range bin.
    pub fn range_profile(&self) -> Vec<f64> {
        (0..self.range_bins())
            .map(|r| self.data.column(r).iter().map(|&v| v as f64).sum())
            .collect()
    }

    pub fn total_energy(&self) -> f64 {
        self.data.iter().map(|&v| v as f64).sum()
    }
}
