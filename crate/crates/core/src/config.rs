//! Pipeline configuration file.
//!
//! Angles are written in degrees and positions as `[x, y]` in meters. Unknown
//! keys are rejected; missing sections take their defaults.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exposure::{FieldMode, ZoneGrid};
use crate::geometry::Vec2;
use crate::radar_sim::{Activity, ChirpConfig, Clutter, RadarId, RadarPose, Scene, SimParams, WorkerId, WorkerSpec};
use crate::reid::{PersistenceParams, ReidMode, DEFAULT_TAU};
use crate::tdscan::{ClusterParams, DopplerBand};
use crate::view_adapt::BridgeAddr;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RadarConfig {
    pub id: RadarId,
    pub position: Vec2,
    pub yaw_deg: f64,
    #[serde(default = "default_fov")]
    pub fov_deg: f64,
    #[serde(default = "default_max_range")]
    pub max_range_m: f64,
    #[serde(default = "default_mount_height")]
    pub mount_height_m: f64,
}

fn default_fov() -> f64 {
    120.0
}
fn default_max_range() -> f64 {
    9.0
}
fn default_mount_height() -> f64 {
    1.0
}

impl RadarConfig {
    pub fn pose(&self) -> RadarPose {
        RadarPose {
            id: self.id,
            position: self.position,
            yaw: self.yaw_deg.to_radians(),
            fov_azimuth: self.fov_deg.to_radians(),
            max_range: self.max_range_m,
            mount_height: self.mount_height_m,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorkerConfig {
    pub id: WorkerId,
    pub position: Vec2,
    pub activity: Activity,
    pub motion_axis_deg: f64,
    pub amplitude_m: f64,
    pub frequency_hz: f64,
    #[serde(default)]
    pub phase_deg: f64,
}

impl WorkerConfig {
    pub fn spec(&self) -> WorkerSpec {
        WorkerSpec {
            id: self.id,
            position: self.position,
            activity: self.activity,
            motion_axis: self.motion_axis_deg.to_radians(),
            amplitude: self.amplitude_m,
            frequency_hz: self.frequency_hz,
            phase: self.phase_deg.to_radians(),
        }
    }
}

/// Difference between the surveyed radar poses in the file and the poses the
/// simulator renders with.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CalibrationConfig {
    pub position_sigma_m: f64,
    pub yaw_sigma_deg: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SignatureConfig {
    /// Doppler columns with `|v|` below this are zeroed before association.
    pub static_notch_mps: f64,
    /// Update weight of the per-radar background estimate; 0 disables it.
    pub clutter_alpha: f64,
}

impl Default for SignatureConfig {
    fn default() -> Self {
        Self { static_notch_mps: 0.0, clutter_alpha: 0.02 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TdscanConfig {
    pub tau_min_mps: f64,
    pub tau_max_mps: f64,
    pub epsilon_m: f64,
    pub min_pts: usize,
    pub window_frames: usize,
    pub max_assoc_dist_m: f64,
    pub min_track_frames: u32,
    pub max_missed: u32,
}

impl Default for TdscanConfig {
    fn default() -> Self {
        let b = DopplerBand::default();
        let p = ClusterParams::default();
        Self {
            tau_min_mps: b.tau_min,
            tau_max_mps: b.tau_max,
            epsilon_m: p.epsilon,
            min_pts: p.min_pts,
            window_frames: p.window_frames,
            max_assoc_dist_m: p.max_assoc_dist,
            min_track_frames: p.min_track_frames,
            max_missed: p.max_missed,
        }
    }
}

impl TdscanConfig {
    pub fn band(&self) -> Result<DopplerBand> {
        DopplerBand::new(self.tau_min_mps, self.tau_max_mps)
    }

    pub fn params(&self) -> Result<ClusterParams> {
        let p = ClusterParams {
            epsilon: self.epsilon_m,
            min_pts: self.min_pts,
            window_frames: self.window_frames,
            max_assoc_dist: self.max_assoc_dist_m,
            min_track_frames: self.min_track_frames,
            max_missed: self.max_missed,
        };
        p.validate()?;
        Ok(p)
    }
}

/// `analytic`, `off` or `bridge:<addr>`.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub enum AdapterChoice {
    #[default]
    Analytic,
    Off,
    Bridge(String),
}

impl FromStr for AdapterChoice {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "analytic" => Ok(AdapterChoice::Analytic),
            "off" => Ok(AdapterChoice::Off),
            _ => match s.strip_prefix("bridge:") {
                Some(addr) => {
                    BridgeAddr::from_str(addr)?;
                    Ok(AdapterChoice::Bridge(addr.to_string()))
                }
                None => Err(Error::Config(format!(
                    "unknown adapter {s:?} (analytic, off, bridge:<addr>)"
                ))),
            },
        }
    }
}

impl fmt::Display for AdapterChoice {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AdapterChoice::Analytic => f.write_str("analytic"),
            AdapterChoice::Off => f.write_str("off"),
            AdapterChoice::Bridge(a) => write!(f, "bridge:{a}"),
        }
    }
}

impl Serialize for AdapterChoice {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for AdapterChoice {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdapterConfig {
    pub kind: AdapterChoice,
    pub timeout_ms: u64,
    /// Use the analytic adapter when the bridge cannot be reached.
    pub fallback_to_analytic: bool,
}

impl Default for AdapterConfig {
    fn default() -> Self {
        Self {
            kind: AdapterChoice::Analytic,
            timeout_ms: crate::view_adapt::bridge::DEFAULT_TIMEOUT.as_millis() as u64,
            fallback_to_analytic: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ReidConfig {
    pub mode: ReidMode,
    pub tau: f64,
    pub mutual_best: bool,
    pub temporal_window_s: f64,
    pub proximity_m: f64,
    /// Largest global distance accepted by the distance-only baseline.
    pub distance_gate_m: f64,
}

impl Default for ReidConfig {
    fn default() -> Self {
        let p = PersistenceParams::default();
        Self {
            mode: ReidMode::Full,
            tau: DEFAULT_TAU,
            mutual_best: true,
            temporal_window_s: p.temporal_window_s,
            proximity_m: p.proximity_m,
            distance_gate_m: 1.0,
        }
    }
}

impl ReidConfig {
    pub fn persistence(&self) -> Result<PersistenceParams> {
        let p = PersistenceParams {
            temporal_window_s: self.temporal_window_s,
            proximity_m: self.proximity_m,
        };
        p.validate()?;
        Ok(p)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FieldKind {
    #[default]
    Zones,
    Idw,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExposureConfig {
    pub mode: FieldKind,
    pub idw_p: f64,
    pub window_s: f64,
    pub zones: ZoneGrid,
}

impl Default for ExposureConfig {
    fn default() -> Self {
        Self {
            mode: FieldKind::Zones,
            idw_p: 2.0,
            window_s: 5.0,
            zones: ZoneGrid {
                origin: Vec2::ZERO,
                cell_size_m: 3.0,
                nx: 2,
                ny: 2,
            },
        }
    }
}

impl ExposureConfig {
    pub fn field_mode(&self) -> Result<FieldMode> {
        if !(self.window_s > 0.0) {
            return Err(Error::Config(format!("exposure.window_s must be > 0, got {}", self.window_s)));
        }
        match self.mode {
            FieldKind::Idw if !(self.idw_p > 0.0) => {
                Err(Error::Config(format!("exposure.idw_p must be > 0, got {}", self.idw_p)))
            }
            FieldKind::Idw => Ok(FieldMode::Idw { p: self.idw_p }),
            FieldKind::Zones => {
                self.zones.validate()?;
                Ok(FieldMode::Zones(self.zones.clone()))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PmSensorConfig {
    pub id: String,
    pub position: Vec2,
}

/// Synthetic dust model: every worker is a source of its activity's
/// strength, decaying as `1 / (1 + (d / decay_ref_m)²)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PmConfig {
    pub rate_hz: f64,
    /// PM2.5 background, µg/m³.
    pub background: f64,
    pub decay_ref_m: f64,
    /// Log-normal sigma of the per-reading noise.
    pub noise_sigma: f64,
    pub pm1_ratio: f64,
    pub pm10_ratio: f64,
    pub sensors: Vec<PmSensorConfig>,
}

impl Default for PmConfig {
    fn default() -> Self {
        Self {
            rate_hz: 1.0,
            background: 12.0,
            decay_ref_m: 1.0,
            noise_sigma: 0.08,
            pm1_ratio: 0.55,
            pm10_ratio: 1.9,
            sensors: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    /// A detection farther than this from every visible worker is unlabeled.
    pub match_gate_m: f64,
    /// Localization error is reported for workers within this range.
    pub mae_max_range_m: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            match_gate_m: 0.6,
            mae_max_range_m: 3.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_duration")]
    pub duration_s: f64,
    #[serde(default)]
    pub chirp: ChirpConfig,
    #[serde(default)]
    pub sim: SimParams,
    #[serde(default)]
    pub calibration: CalibrationConfig,
    #[serde(default)]
    pub radars: Vec<RadarConfig>,
    #[serde(default)]
    pub workers: Vec<WorkerConfig>,
    #[serde(default)]
    pub clutter: Vec<Clutter>,
    #[serde(default)]
    pub tdscan: TdscanConfig,
    #[serde(default)]
    pub signatures: SignatureConfig,
    #[serde(default)]
    pub adapter: AdapterConfig,
    #[serde(default)]
    pub reid: ReidConfig,
    #[serde(default)]
    pub exposure: ExposureConfig,
    #[serde(default)]
    pub pm: PmConfig,
    #[serde(default)]
    pub eval: EvalConfig,
}

fn default_duration() -> f64 {
    10.0
}

impl Default for PipelineConfig {
    fn default() -> Self {
        toml::from_str("").expect("empty config deserializes")
    }
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: PipelineConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.duration_s >= 0.0) {
            return Err(Error::Config(format!("duration_s must be >= 0, got {}", self.duration_s)));
        }
        self.chirp.validate()?;
        for r in &self.radars {
            r.pose().validate()?;
        }
        self.tdscan.band()?;
        self.tdscan.params()?;
        self.reid.persistence()?;
        let notch = self.signatures.static_notch_mps;
        if !(notch >= 0.0 && notch.is_finite()) {
            return Err(Error::Config(format!("signatures.static_notch_mps must be >= 0, got {notch}")));
        }
        let alpha = self.signatures.clutter_alpha;
        if !(0.0..1.0).contains(&alpha) {
            return Err(Error::Config(format!("signatures.clutter_alpha must be in [0, 1), got {alpha}")));
        }
        if !(self.reid.tau >= 0.0 && self.reid.tau <= 1.0) {
            return Err(Error::Config(format!("reid.tau must be in [0, 1], got {}", self.reid.tau)));
        }
        if !(self.reid.distance_gate_m > 0.0) {
            return Err(Error::Config("reid.distance_gate_m must be > 0".into()));
        }
        self.exposure.field_mode()?;
        if !(self.pm.rate_hz > 0.0 && self.pm.decay_ref_m > 0.0 && self.pm.background >= 0.0 && self.pm.noise_sigma >= 0.0) {
            return Err(Error::Config(
                "pm.rate_hz and pm.decay_ref_m must be > 0, background and noise_sigma >= 0".into(),
            ));
        }
        let c = &self.calibration;
        if !(c.position_sigma_m >= 0.0 && c.yaw_sigma_deg >= 0.0) {
            return Err(Error::Config("calibration sigmas must be >= 0".into()));
        }
        Ok(())
    }

    /// Poses the pipeline works with.
    pub fn surveyed_poses(&self) -> Vec<RadarPose> {
        self.radars.iter().map(RadarConfig::pose).collect()
    }

    /// Poses the simulator renders with: the surveyed poses plus seeded
    /// calibration error.
    pub fn true_poses(&self) -> Vec<RadarPose> {
        let c = &self.calibration;
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ 0xCA11_B8A7);
        let pos = Normal::new(0.0, c.position_sigma_m).expect("sigma validated");
        let yaw = Normal::new(0.0, c.yaw_sigma_deg.to_radians()).expect("sigma validated");
        self.surveyed_poses()
            .into_iter()
            .map(|mut p| {
                p.position = p.position + Vec2::new(pos.sample(&mut rng), pos.sample(&mut rng));
                p.yaw += yaw.sample(&mut rng);
                p
            })
            .collect()
    }

    /// The scene as the simulator sees it.
    pub fn scene(&self) -> Result<Scene> {
        let scene = Scene {
            chirp: self.chirp.clone(),
            sim: self.sim.clone(),
            radars: self.true_poses(),
            workers: self.workers.iter().map(WorkerConfig::spec).collect(),
            clutter: self.clutter.clone(),
            rng_seed: self.seed,
        };
        scene.validate()?;
        Ok(scene)
    }

    pub fn frame_count(&self) -> usize {
        (self.duration_s * self.chirp.frame_rate_hz).round() as usize
    }
}

/// Command-line and environment overrides, applied over the file.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub adapter: Option<AdapterChoice>,
    pub reid: Option<ReidMode>,
    pub duration_s: Option<f64>,
}

impl Overrides {
    pub fn apply(&self, cfg: &mut PipelineConfig) {
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(a) = &self.adapter {
            cfg.adapter.kind = a.clone();
        }
        if let Some(m) = self.reid {
            cfg.reid.mode = m;
        }
        if let Some(d) = self.duration_s {
            cfg.duration_s = d;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_match_module_defaults() {
        let c = PipelineConfig::default();
        assert_eq!(c.tdscan.params().unwrap(), ClusterParams::default());
        assert_eq!(c.tdscan.band().unwrap(), DopplerBand::default());
        assert_eq!(c.reid.persistence().unwrap(), PersistenceParams::default());
        assert_eq!(c.reid.tau, 0.6);
        assert_eq!(c.exposure.window_s, 5.0);
        assert_eq!(c.exposure.idw_p, 2.0);
        assert_eq!(c.adapter.kind, AdapterChoice::Analytic);
        assert_eq!(c.chirp, ChirpConfig::default());
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(PipelineConfig::from_toml("sed = 3").is_err());
        assert!(PipelineConfig::from_toml("[tdscan]\nepsilon = 0.5").is_err());
        let e = PipelineConfig::from_toml("[[radars]]\nid = 1\nposition = [0, 0]\nyaw_deg = 0\nfov = 90").unwrap_err();
        assert!(matches!(e, Error::Config(_)));
    }

    #[test]
    fn parses_angles_in_degrees() {
        let c = PipelineConfig::from_toml(
            r#"
seed = 9
[[radars]]
id = 2
position = [5.0, 0.0]
yaw_deg = 90
fov_deg = 100
[[workers]]
id = 1
position = [3.0, 0.5]
activity = "grinding"
motion_axis_deg = 45
amplitude_m = 0.1
frequency_hz = 2.0
"#,
        )
        .unwrap();
        let p = &c.surveyed_poses()[0];
        assert!((p.yaw - std::f64::consts::FRAC_PI_2).abs() < 1e-15);
        assert!((p.fov_azimuth - 100f64.to_radians()).abs() < 1e-15);
        assert!((c.workers[0].spec().motion_axis - std::f64::consts::FRAC_PI_4).abs() < 1e-15);
        assert_eq!(c.true_poses(), c.surveyed_poses());
        c.scene().unwrap();
    }

    #[test]
    fn invalid_values_rejected() {
        assert!(PipelineConfig::from_toml("[tdscan]\ntau_min_mps = 2.0").is_err());
        assert!(PipelineConfig::from_toml("[reid]\ntau = 1.5").is_err());
        assert!(PipelineConfig::from_toml("[exposure]\nwindow_s = 0").is_err());
        assert!(PipelineConfig::from_toml("[adapter]\nkind = \"gan\"").is_err());
        assert!(PipelineConfig::from_toml("[reid]\nmode = \"nearest\"").is_err());
    }

    #[test]
    fn adapter_choice_round_trip() {
        for s in ["analytic", "off", "bridge:127.0.0.1:7000", "bridge:exec:python serve.py"] {
            let a: AdapterChoice = s.parse().unwrap();
            assert_eq!(a.to_string(), s);
        }
        assert!("bridge:nowhere".parse::<AdapterChoice>().is_err());
    }

    #[test]
    fn toml_round_trip() {
        let mut c = PipelineConfig::default();
        c.seed = 77;
        c.adapter.kind = AdapterChoice::Off;
        c.reid.mode = ReidMode::DistanceOnly;
        c.radars.push(RadarConfig {
            id: 1,
            position: Vec2::new(0.5, -0.25),
            yaw_deg: 30.0,
            fov_deg: 120.0,
            max_range_m: 9.0,
            mount_height_m: 1.0,
        });
        let back = PipelineConfig::from_toml(&c.to_toml().unwrap()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn overrides_take_precedence() {
        let mut c = PipelineConfig::from_toml("seed = 1\n[reid]\nmode = \"full\"").unwrap();
        Overrides {
            seed: Some(5),
            reid: Some(ReidMode::CorrelationOnly),
            ..Default::default()
        }
        .apply(&mut c);
        assert_eq!(c.seed, 5);
        assert_eq!(c.reid.mode, ReidMode::CorrelationOnly);
        assert_eq!(c.adapter.kind, AdapterChoice::Analytic);
    }

    #[test]
    fn calibration_error_is_seeded() {
        let mut c = PipelineConfig::default();
        c.radars.push(RadarConfig {
            id: 1,
            position: Vec2::ZERO,
            yaw_deg: 0.0,
            fov_deg: 120.0,
            max_range_m: 9.0,
            mount_height_m: 1.0,
        });
        c.calibration = CalibrationConfig { position_sigma_m: 0.1, yaw_sigma_deg: 2.0 };
        assert_eq!(c.true_poses(), c.true_poses());
        assert_ne!(c.true_poses(), c.surveyed_poses());
    }
}
