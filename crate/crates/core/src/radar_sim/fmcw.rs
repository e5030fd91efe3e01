//! FMCW chirp parameters and the range / velocity conversions they imply.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

/// Chirp profile of one radar. All fields strictly positive.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ChirpConfig {
    pub bandwidth_hz: f64,
    pub chirp_duration_s: f64,
    pub carrier_hz: f64,
    pub chirps_per_frame: u32,
    pub frame_rate_hz: f64,
    pub range_bins: u32,
    pub doppler_bins: u32,
}

impl Default for ChirpConfig {
    /// 77-81 GHz sweep, 72 µs chirps, 182 chirps per frame at 10 Hz.
    fn default() -> Self {
        Self {
            bandwidth_hz: 4.0e9,
            chirp_duration_s: 72.0e-6,
            carrier_hz: 79.0e9,
            chirps_per_frame: 182,
            frame_rate_hz: 10.0,
            range_bins: 256,
            doppler_bins: 182,
        }
    }
}

impl ChirpConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("bandwidth_hz", self.bandwidth_hz),
            ("chirp_duration_s", self.chirp_duration_s),
            ("carrier_hz", self.carrier_hz),
            ("frame_rate_hz", self.frame_rate_hz),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Config(format!("chirp.{name} must be > 0, got {v}")));
            }
        }
        if self.chirps_per_frame == 0 || self.range_bins == 0 || self.doppler_bins == 0 {
            return Err(Error::Config(
                "chirp.chirps_per_frame, range_bins and doppler_bins must be > 0".into(),
            ));
        }
        Ok(())
    }

    /// Range resolution `c / 2B`.
    pub fn range_resolution(&self) -> f64 {
        SPEED_OF_LIGHT / (2.0 * self.bandwidth_hz)
    }

    pub fn wavelength(&self) -> f64 {
        SPEED_OF_LIGHT / self.carrier_hz
    }

    /// Largest unambiguous radial speed, reached at a chirp-to-chirp phase shift of π.
    pub fn max_velocity(&self) -> f64 {
        self.wavelength() / (4.0 * self.chirp_duration_s)
    }

    /// Width of one Doppler bin; the Doppler axis spans `[-v_max, +v_max)`.
    pub fn doppler_resolution(&self) -> f64 {
        2.0 * self.max_velocity() / self.doppler_bins as f64
    }

    /// Far edge of the last range bin.
    pub fn max_range(&self) -> f64 {
        self.range_resolution() * self.range_bins as f64
    }

    /// Range bin containing `range_m`, or `None` outside `[0, max_range)`.
    pub fn range_to_bin(&self, range_m: f64) -> Option<usize> {
        if !(range_m >= 0.0) {
            return None;
        }
        let idx = (range_m / self.range_resolution()).floor();
        (idx < self.range_bins as f64).then_some(idx as usize)
    }

    /// Center of range bin `bin`.
    pub fn bin_to_range(&self, bin: usize) -> f64 {
        (bin as f64 + 0.5) * self.range_resolution()
    }

    /// Index of the zero-velocity Doppler bin.
    pub fn zero_doppler_bin(&self) -> usize {
        self.doppler_bins as usize / 2
    }

    /// Doppler bin nearest to `velocity`, or `None` outside the unambiguous interval.
    pub fn velocity_to_bin(&self, velocity: f64) -> Option<usize> {
        let idx = (velocity / self.doppler_resolution()).round() + self.zero_doppler_bin() as f64;
        (idx >= 0.0 && idx < self.doppler_bins as f64).then_some(idx as usize)
    }

    pub fn bin_to_velocity(&self, bin: usize) -> f64 {
        (bin as f64 - self.zero_doppler_bin() as f64) * self.doppler_resolution()
    }

    pub fn frame_period(&self) -> f64 {
        1.0 / self.frame_rate_hz
    }
}

/// Target range from the IF beat frequency: `d = c/2 · T_C/B · f_b`.
pub fn beat_freq_to_range(beat_hz: f64, cfg: &ChirpConfig) -> Result<f64> {
    if !(beat_hz >= 0.0) {
        return Err(Error::Domain(format!(
            "beat frequency must be non-negative, got {beat_hz}"
        )));
    }
    Ok(SPEED_OF_LIGHT / 2.0 * cfg.chirp_duration_s / cfg.bandwidth_hz * beat_hz)
}

/// Inverse of [`beat_freq_to_range`].
pub fn range_to_beat_freq(range_m: f64, cfg: &ChirpConfig) -> f64 {
    range_m * 2.0 * cfg.bandwidth_hz / (SPEED_OF_LIGHT * cfg.chirp_duration_s)
}

/// Radial velocity from the chirp-to-chirp phase shift `Δφ = 4π v T_C / λ`.
pub fn phase_shift_to_velocity(delta_phi: f64, cfg: &ChirpConfig) -> f64 {
    delta_phi * cfg.wavelength() / (4.0 * std::f64::consts::PI * cfg.chirp_duration_s)
}

pub fn velocity_to_phase_shift(velocity: f64, cfg: &ChirpConfig) -> f64 {
    4.0 * std::f64::consts::PI * velocity * cfg.chirp_duration_s / cfg.wavelength()
}
