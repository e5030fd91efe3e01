use serde::{Deserialize, Serialize};

use super::{ChirpConfig, RadarPose, WorkerId};
use crate::error::{Error, Result};
use crate::geometry::Vec2;

/// Tool activity of a quasi-static worker.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activity {
    /// Impulsive strikes occupying a fifth of each period, slow return stroke.
    Chipping,
    /// Continuous stroke with broadband vibration.
    Grinding,
    /// Narrowband, low-amplitude oscillation.
    Polishing,
}

/// Fraction of the chipping period spent in the strike.
pub const CHIPPING_DUTY: f64 = 0.2;

impl Activity {
    pub const ALL: [Activity; 3] = [Activity::Chipping, Activity::Grinding, Activity::Polishing];

    pub fn name(self) -> &'static str {
        match self {
            Activity::Chipping => "chipping",
            Activity::Grinding => "grinding",
            Activity::Polishing => "polishing",
        }
    }

    /// Standard deviation of the tool's Doppler spread around the stroke velocity, m/s.
    pub fn tool_doppler_spread(self) -> f64 {
        match self {
            Activity::Chipping => 0.08,
            Activity::Grinding => 0.22,
            Activity::Polishing => 0.04,
        }
    }

    /// Relative particulate source strength (grinding > chipping > polishing).
    pub fn dust_source_strength(self) -> f64 {
        match self {
            Activity::Grinding => 420.0,
            Activity::Chipping => 260.0,
            Activity::Polishing => 90.0,
        }
    }
}

/// A worker standing at a fixed position, moving a tool along `motion_axis`.
#[derive(Debug, Clone, PartialEq)]
pub struct WorkerSpec {
    pub id: WorkerId,
    pub position: Vec2,
    pub activity: Activity,
    /// Global direction of the stroke, radians (only defined modulo π).
    pub motion_axis: f64,
    /// Half length of the tool stroke, meters.
    pub amplitude: f64,
    pub frequency_hz: f64,
    pub phase: f64,
}

impl WorkerSpec {
    /// Tool displacement along the motion axis and its velocity at time `t`.
    pub fn stroke(&self, t: f64) -> (f64, f64) {
        let a = self.amplitude;
        let f = self.frequency_hz;
        match self.activity {
            Activity::Grinding | Activity::Polishing => {
                let w = std::f64::consts::TAU * f;
                let arg = w * t + self.phase;
                (a * arg.sin(), a * w * arg.cos())
            }
            Activity::Chipping => {
                let u = (f * t + self.phase / std::f64::consts::TAU).rem_euclid(1.0);
                if u < CHIPPING_DUTY {
                    let k = std::f64::consts::PI / CHIPPING_DUTY;
                    (-a * (k * u).cos(), a * k * f * (k * u).sin())
                } else {
                    let back = 1.0 - CHIPPING_DUTY;
                    (a - 2.0 * a * (u - CHIPPING_DUTY) / back, -2.0 * a * f / back)
                }
            }
        }
    }

    pub fn axis_direction(&self) -> Vec2 {
        Vec2::from_angle(self.motion_axis)
    }
}

/// A static reflector (machinery, stone block, wall fixture).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Clutter {
    pub position: Vec2,
    /// Relative reflectivity; a worker body is 1.
    #[serde(default = "default_rcs")]
    pub rcs: f64,
}

fn default_rcs() -> f64 {
    4.0
}

/// Knobs of the observation model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimParams {
    /// Mean of the exponential per-bin noise power.
    pub noise_floor: f64,
    /// Standard deviation of the Gaussian jitter on point positions, meters.
    pub position_jitter_m: f64,
    /// Body points per frame for a worker at or inside `density_ref_range_m`.
    pub body_points: u32,
    /// Tool points per frame for a worker at or inside `density_ref_range_m`.
    pub tool_points: u32,
    /// Beyond this range the point rate falls off as `ref / range`.
    pub density_ref_range_m: f64,
    /// Points contributed per clutter reflector per frame.
    pub clutter_points: u32,
    /// Mean number of spurious fast-moving detections per frame.
    pub ghost_points: f64,
    /// Standard deviation of the isotropic body sway Doppler, m/s.
    pub body_sway_mps: f64,
    /// Fraction of the tool velocity transferred to the body.
    pub body_coupling: f64,
    /// Tool-to-body power ratio in the heatmap.
    pub tool_power_ratio: f64,
    /// Log-normal sigma of the multiplicative speckle on worker returns.
    pub speckle_sigma: f64,
    /// Workers hidden behind a nearer worker are not observed.
    pub occlusion: bool,
    /// Lateral half-width of a body for occlusion tests, meters.
    pub body_half_width_m: f64,
}

impl Default for SimParams {
    fn default() -> Self {
        Self {
            noise_floor: 2.0e-5,
            position_jitter_m: 0.03,
            body_points: 28,
            tool_points: 20,
            density_ref_range_m: 3.0,
            clutter_points: 12,
            ghost_points: 3.0,
            body_sway_mps: 0.10,
            body_coupling: 0.35,
            tool_power_ratio: 1.5,
            speckle_sigma: 0.25,
            occlusion: true,
            body_half_width_m: 0.25,
        }
    }
}

/// Everything needed to synthesize observations.
#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub chirp: ChirpConfig,
    pub sim: SimParams,
    pub radars: Vec<RadarPose>,
    pub workers: Vec<WorkerSpec>,
    pub clutter: Vec<Clutter>,
    pub rng_seed: u64,
}

impl Scene {
    pub fn validate(&self) -> Result<()> {
        self.chirp.validate()?;
        let mut ids = std::collections::BTreeSet::new();
        for r in &self.radars {
            r.validate()?;
            if !ids.insert(r.id) {
                return Err(Error::Config(format!("duplicate radar id {}", r.id)));
            }
        }
        let mut ids = std::collections::BTreeSet::new();
        for w in &self.workers {
            if !ids.insert(w.id) {
                return Err(Error::Config(format!("duplicate worker id {}", w.id)));
            }
            if !(w.amplitude >= 0.0 && w.frequency_hz > 0.0) || !w.position.is_finite() {
                return Err(Error::Config(format!(
                    "worker {}: amplitude must be >= 0, frequency > 0 and position finite",
                    w.id
                )));
            }
            if !self.radars.iter().any(|r| r.in_field_of_view(w.position)) {
                return Err(Error::Config(format!(
                    "worker {} at ({}, {}) is outside every radar's field of view",
                    w.id, w.position.x, w.position.y
                )));
            }
        }
        Ok(())
    }

    pub fn radar_index(&self, id: super::RadarId) -> Option<usize> {
        self.radars.iter().position(|r| r.id == id)
    }
}
