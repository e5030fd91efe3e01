//! Per-user range-Doppler activity signatures.
//!
//! A signature is the band of 21 range bins centered on the user's range bin,
//! keeping the full Doppler axis. Patches are stored range-major as
//! `patch[[range_row, doppler_bin]]` in linear power.

use ndarray::{s, Array2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Vec2;
use crate::radar_sim::{ChirpConfig, RDHeatmap, RadarId, RadarPose};
use crate::tdscan::LocalId;

/// Range rows in a signature patch.
pub const PATCH_ROWS: usize = 21;
/// Rows either side of the center row.
pub const PATCH_HALF: usize = PATCH_ROWS / 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Normalization {
    Raw,
    UnitEnergy,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RDSignature {
    pub local_id: LocalId,
    pub radar_id: RadarId,
    pub timestamp_s: f64,
    /// `PATCH_ROWS × D`, non-negative.
    pub patch: Array2<f64>,
    pub center_range_bin: usize,
    pub normalization: Normalization,
}

impl RDSignature {
    pub fn doppler_bins(&self) -> usize {
        self.patch.ncols()
    }

    pub fn frobenius_norm(&self) -> f64 {
        frobenius(&self.patch)
    }

    pub fn validate(&self) -> Result<()> {
        if self.patch.nrows() != PATCH_ROWS {
            return Err(Error::Shape {
                expected: (PATCH_ROWS, self.patch.ncols()),
                actual: self.patch.dim(),
            });
        }
        if self.patch.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
            return Err(Error::Domain("signature entries must be finite and >= 0".into()));
        }
        if self.normalization == Normalization::UnitEnergy && (self.frobenius_norm() - 1.0).abs() > 1e-9 {
            return Err(Error::Domain("unit-energy signature does not have unit norm".into()));
        }
        Ok(())
    }
}

pub(crate) fn frobenius(a: &Array2<f64>) -> f64 {
    a.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Cuts the 21 range rows centered on `r0` out of `hm`, zero-filling rows
/// that fall outside the heatmap.
pub fn extract_signature(hm: &RDHeatmap, r0: usize, local_id: LocalId) -> Result<RDSignature> {
    let (nd, nr) = hm.data.dim();
    if r0 >= nr {
        return Err(Error::Domain(format!(
            "center range bin {r0} outside heatmap with {nr} range bins"
        )));
    }
    let mut patch = Array2::zeros((PATCH_ROWS, nd));
    let lo = r0 as i64 - PATCH_HALF as i64;
    for row in 0..PATCH_ROWS {
        let r = lo + row as i64;
        if r < 0 || r >= nr as i64 {
            continue;
        }
        let src = hm.data.column(r as usize);
        patch.row_mut(row).assign(&src.mapv(|v| v as f64));
    }
    Ok(RDSignature {
        local_id,
        radar_id: hm.radar_id,
        timestamp_s: hm.timestamp_s,
        patch,
        center_range_bin: r0,
        normalization: Normalization::Raw,
    })
}

/// Range bin of a local-frame centroid. The flag is set when the range was
/// clamped to the last bin.
pub fn range_bin_of(centroid_local: Vec2, pose: &RadarPose, cfg: &ChirpConfig) -> Result<(usize, bool)> {
    if !centroid_local.is_finite() {
        return Err(Error::Domain("centroid must be finite".into()));
    }
    if centroid_local.y < 0.0 {
        return Err(Error::Domain(format!(
            "centroid ({:.3}, {:.3}) lies behind radar {}",
            centroid_local.x, centroid_local.y, pose.id
        )));
    }
    let bins = cfg.range_bins as usize;
    let idx = (centroid_local.norm() / cfg.range_resolution()).floor();
    if idx >= bins as f64 {
        log::warn!(
            "radar {}: centroid at {:.2} m beyond the last range bin, clamped",
            pose.id,
            centroid_local.norm()
        );
        return Ok((bins - 1, true));
    }
    Ok((idx as usize, false))
}

/// Scales the patch to unit Frobenius norm.
pub fn normalize_signature(sig: &RDSignature) -> Result<RDSignature> {
    let norm = sig.frobenius_norm();
    if !(norm > 0.0) || !norm.is_finite() {
        return Err(Error::Domain(format!(
            "radar {} user {}: signature has no energy",
            sig.radar_id, sig.local_id
        )));
    }
    let mut out = sig.clone();
    if sig.normalization == Normalization::UnitEnergy && (norm - 1.0).abs() <= 1e-12 {
        return Ok(out);
    }
    out.patch.mapv_inplace(|v| v / norm);
    out.normalization = Normalization::UnitEnergy;
    Ok(out)
}

/// Zeroes the Doppler columns whose bin velocity is within `notch_mps` of
/// zero. Static reflectors sharing the worker's range band land there, as
/// does most of the slow body sway common to every worker. `notch_mps = 0`
/// leaves the patch unchanged.
pub fn suppress_static(sig: &mut RDSignature, notch_mps: f64, doppler_resolution_mps: f64) -> Result<()> {
    if !(notch_mps >= 0.0 && notch_mps.is_finite()) || !(doppler_resolution_mps > 0.0) {
        return Err(Error::Domain(format!(
            "static notch {notch_mps} m/s with Doppler resolution {doppler_resolution_mps} m/s"
        )));
    }
    let center = (sig.doppler_bins() / 2) as f64;
    for (j, mut col) in sig.patch.columns_mut().into_iter().enumerate() {
        if ((j as f64 - center) * doppler_resolution_mps).abs() < notch_mps {
            col.fill(0.0);
        }
    }
    Ok(())
}

/// Mean of the raw patches of one track over a window of frames.
///
/// Oscillatory tool strokes move their Doppler peak from frame to frame; the
/// mean keeps the whole excursion where a per-cell median would drop it.
pub fn window_mean(sigs: &[RDSignature]) -> Result<RDSignature> {
    let last = sigs
        .last()
        .ok_or_else(|| Error::Domain("window_mean needs at least one signature".into()))?;
    let mut acc = Array2::<f64>::zeros(last.patch.dim());
    for s in sigs {
        if s.patch.dim() != acc.dim() {
            return Err(Error::Shape {
                expected: acc.dim(),
                actual: s.patch.dim(),
            });
        }
        acc += &s.patch;
    }
    acc /= sigs.len() as f64;
    Ok(RDSignature {
        patch: acc,
        normalization: Normalization::Raw,
        ..last.clone()
    })
}

/// Sidecar record written next to a dumped patch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignatureMeta {
    pub local_id: LocalId,
    pub radar_id: RadarId,
    pub timestamp_s: f64,
    pub center_range_bin: usize,
    pub normalization: Normalization,
}

impl RDSignature {
    pub fn meta(&self) -> SignatureMeta {
        SignatureMeta {
            local_id: self.local_id,
            radar_id: self.radar_id,
            timestamp_s: self.timestamp_s,
            center_range_bin: self.center_range_bin,
            normalization: self.normalization,
        }
    }

    /// Doppler-major `D × 21` view, the layout used on the wire and on disk.
    pub fn doppler_major(&self) -> Array2<f64> {
        self.patch.t().to_owned()
    }

    pub fn from_doppler_major(meta: SignatureMeta, data: Array2<f64>) -> Result<Self> {
        let sig = Self {
            local_id: meta.local_id,
            radar_id: meta.radar_id,
            timestamp_s: meta.timestamp_s,
            patch: data.t().to_owned(),
            center_range_bin: meta.center_range_bin,
            normalization: meta.normalization,
        };
        if sig.patch.nrows() != PATCH_ROWS {
            return Err(Error::Shape {
                expected: (data.nrows(), PATCH_ROWS),
                actual: data.dim(),
            });
        }
        Ok(sig)
    }

    /// Sub-band of Doppler bins `[lo, hi)`; used by tests and diagnostics.
    pub fn doppler_band(&self, lo: usize, hi: usize) -> Array2<f64> {
        self.patch.slice(s![.., lo..hi]).to_owned()
    }
}
