//! Mapping signatures between radar viewpoints, and the image-fidelity
//! metrics used to judge the mapping.
//!
//! A viewpoint is described by the global azimuth of the line of sight from a
//! radar to the worker. [`AnalyticAdapter`] rescales the Doppler axis by the
//! ratio of the motion axis projections on the two lines of sight;
//! [`BridgeAdapter`] forwards the patch to an external model over a
//! length-prefixed byte stream.

mod analytic;
pub mod bridge;
pub mod metrics;

pub use analytic::{adapt_analytic, axis_difference, estimate_motion_axis, AnalyticAdapter, AxisEstimate, COS_FLOOR};
pub use bridge::{adapt_external, AdapterBridge, BridgeAdapter, BridgeAddr};
pub use metrics::{fidelity, l1_mean, psnr, render, ssim, FidelityReport};

use crate::error::Result;
use crate::geometry::wrap_two_pi;
use crate::signatures::RDSignature;

/// A signature mapped into another radar's viewpoint.
#[derive(Debug, Clone, PartialEq)]
pub struct AdaptedSignature {
    pub signature: RDSignature,
    /// In `[0, 2π)`.
    pub source_azimuth: f64,
    /// In `[0, 2π)`.
    pub target_azimuth: f64,
    pub adapter_id: String,
    /// Set when the source line of sight is nearly orthogonal to the motion.
    pub low_confidence: bool,
}

impl AdaptedSignature {
    pub fn new(signature: RDSignature, az_src: f64, az_tgt: f64, adapter_id: &str, low_confidence: bool) -> Self {
        Self {
            signature,
            source_azimuth: wrap_two_pi(az_src),
            target_azimuth: wrap_two_pi(az_tgt),
            adapter_id: adapter_id.to_string(),
            low_confidence,
        }
    }
}

/// Viewpoint mapping between radars.
pub trait ViewAdapter: Send {
    fn id(&self) -> &str;

    /// Azimuth grid the adapter was built for, radians, or `None` when any
    /// pair of azimuths is supported.
    fn supported_azimuths(&self) -> Option<&[f64]>;

    /// Maps `sig`, observed along `az_src`, to the view along `az_tgt`.
    /// `motion_axis` is the global stroke direction when known.
    fn adapt(
        &mut self,
        sig: &RDSignature,
        az_src: f64,
        az_tgt: f64,
        motion_axis: Option<f64>,
    ) -> Result<AdaptedSignature>;
}

/// Passes signatures through untouched; the "no adaptation" ablation.
#[derive(Debug, Clone, Default)]
pub struct IdentityAdapter;

impl ViewAdapter for IdentityAdapter {
    fn id(&self) -> &str {
        "off"
    }

    fn supported_azimuths(&self) -> Option<&[f64]> {
        None
    }

    fn adapt(&mut self, sig: &RDSignature, az_src: f64, az_tgt: f64, _axis: Option<f64>) -> Result<AdaptedSignature> {
        Ok(AdaptedSignature::new(sig.clone(), az_src, az_tgt, "off", false))
    }
}
