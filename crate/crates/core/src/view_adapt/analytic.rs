use super::{AdaptedSignature, ViewAdapter};
use crate::error::{Error, Result};
use crate::geometry::{wrap_pi, Vec2};
use crate::signatures::{frobenius, RDSignature};

/// Floor on the source projection `|cos(axis - az_src)|`.
pub const COS_FLOOR: f64 = 0.05;

/// Doppler scale factor `|cos(axis - az_tgt)| / max(|cos(axis - az_src)|, COS_FLOOR)`.
/// The flag reports that the floor was hit.
fn doppler_ratio(az_src: f64, az_tgt: f64, axis: f64) -> (f64, bool) {
    let src = (axis - az_src).cos().abs();
    let tgt = (axis - az_tgt).cos().abs();
    (tgt / src.max(COS_FLOOR), src < COS_FLOOR)
}

/// `(source bin, output bin, weight)` triples that rescale a Doppler
/// profile of `n` bins by `ratio` about bin `center`.
///
/// Stretching samples the profile by linear interpolation; compressing
/// spreads each bin's content over the output bins its scaled extent
/// overlaps, so narrow peaks are not skipped.
fn rescale_weights(n: usize, ratio: f64, center: f64) -> Vec<(usize, usize, f64)> {
    let mut w = Vec::with_capacity(2 * n);
    if ratio.abs() >= 1.0 {
        for j in 0..n {
            let pos = center + (j as f64 - center) / ratio;
            if !(pos >= 0.0) || pos > (n - 1) as f64 {
                continue;
            }
            let i = pos.floor() as usize;
            if i + 1 >= n {
                w.push((n - 1, j, 1.0));
                continue;
            }
            let f = pos - i as f64;
            w.push((i, j, 1.0 - f));
            w.push((i + 1, j, f));
        }
        return w;
    }
    for i in 0..n {
        let a = center + (i as f64 - 0.5 - center) * ratio;
        let b = center + (i as f64 + 0.5 - center) * ratio;
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        let width = hi - lo;
        if width < 1e-12 {
            let j = lo.round();
            if j >= 0.0 && j < n as f64 {
                w.push((i, j as usize, 1.0));
            }
            continue;
        }
        let first = (lo + 0.5).floor().max(0.0) as usize;
        let last = ((hi + 0.5).floor() as i64).min(n as i64 - 1);
        for j in first as i64..=last {
            let overlap = (hi.min(j as f64 + 0.5) - lo.max(j as f64 - 0.5)).max(0.0);
            w.push((i, j as usize, overlap / width));
        }
    }
    w
}

/// Maps `sig` from the view along `az_src` to the view along `az_tgt` by
/// rescaling its Doppler axis about the zero-velocity bin, then restoring
/// the input's Frobenius norm.
pub fn adapt_analytic(sig: &RDSignature, az_src: f64, az_tgt: f64, motion_axis: f64) -> Result<AdaptedSignature> {
    if !(az_src.is_finite() && az_tgt.is_finite() && motion_axis.is_finite()) {
        return Err(Error::Domain("azimuths and motion axis must be finite".into()));
    }
    let norm = sig.frobenius_norm();
    if !(norm > 0.0) {
        return Err(Error::Domain("cannot adapt a signature without energy".into()));
    }
    let (ratio, low_confidence) = doppler_ratio(az_src, az_tgt, motion_axis);
    if ratio == 1.0 {
        return Ok(AdaptedSignature::new(sig.clone(), az_src, az_tgt, "analytic", low_confidence));
    }
    let center = (sig.doppler_bins() / 2) as f64;
    let weights = rescale_weights(sig.doppler_bins(), ratio, center);
    let mut out = sig.clone();
    out.patch.fill(0.0);
    for (mut dst, src) in out.patch.rows_mut().into_iter().zip(sig.patch.rows()) {
        for &(i, j, w) in &weights {
            dst[j] += src[i] * w;
        }
    }
    let new_norm = frobenius(&out.patch);
    if !(new_norm > 0.0) {
        return Ok(AdaptedSignature::new(sig.clone(), az_src, az_tgt, "analytic", true));
    }
    out.patch.mapv_inplace(|v| v * norm / new_norm);
    Ok(AdaptedSignature::new(out, az_src, az_tgt, "analytic", low_confidence))
}

/// Principal axis of Doppler-weighted points.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AxisEstimate {
    /// Direction in `[0, π)`.
    pub axis: f64,
    /// `(λ1 - λ2) / (λ1 + λ2)` of the weighted covariance; 0 for isotropic spread.
    pub anisotropy: f64,
}

/// Estimates the stroke direction of one worker from its points.
///
/// The tool moves back and forth along the stroke and returns the largest
/// radial speeds, so weighting positions by `|doppler|` makes the principal
/// axis of the point spread follow the stroke. Heuristic; unreliable when
/// the radar looks across the stroke.
pub fn estimate_motion_axis(points: &[(Vec2, f64)]) -> Option<AxisEstimate> {
    let total: f64 = points.iter().map(|(_, d)| d.abs()).sum();
    if points.len() < 3 || !(total > 0.0) {
        return None;
    }
    let mean = points
        .iter()
        .fold(Vec2::ZERO, |acc, (p, d)| acc + *p * d.abs())
        * (1.0 / total);
    let (mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0);
    for (p, d) in points {
        let w = d.abs();
        let q = *p - mean;
        sxx += w * q.x * q.x;
        syy += w * q.y * q.y;
        sxy += w * q.x * q.y;
    }
    let axis = 0.5 * (2.0 * sxy).atan2(sxx - syy);
    let spread = ((sxx - syy).powi(2) + 4.0 * sxy * sxy).sqrt();
    let trace = sxx + syy;
    let anisotropy = if trace > 0.0 { spread / trace } else { 0.0 };
    let axis = if axis < 0.0 { axis + std::f64::consts::PI } else { axis };
    Some(AxisEstimate {
        axis: if axis >= std::f64::consts::PI { 0.0 } else { axis },
        anisotropy,
    })
}

/// [`adapt_analytic`] as a [`ViewAdapter`]. Without a motion axis the
/// signature passes through flagged as low confidence.
#[derive(Debug, Clone, Default)]
pub struct AnalyticAdapter;

impl ViewAdapter for AnalyticAdapter {
    fn id(&self) -> &str {
        "analytic"
    }

    fn supported_azimuths(&self) -> Option<&[f64]> {
        None
    }

    fn adapt(&mut self, sig: &RDSignature, az_src: f64, az_tgt: f64, motion_axis: Option<f64>) -> Result<AdaptedSignature> {
        match motion_axis {
            Some(axis) => adapt_analytic(sig, az_src, az_tgt, axis),
            None => Ok(AdaptedSignature::new(sig.clone(), az_src, az_tgt, "analytic", true)),
        }
    }
}

/// Angle between two axes defined modulo π, in `[0, π/2]`.
pub fn axis_difference(a: f64, b: f64) -> f64 {
    let d = wrap_pi(2.0 * (a - b)).abs() / 2.0;
    d.min(std::f64::consts::PI - d)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signatures::{normalize_signature, Normalization};
    use crate::view_adapt::{render, ssim};
    use ndarray::{Array1, Array2, ArrayView1};
    use proptest::prelude::*;
    use std::f64::consts::{FRAC_PI_2, PI};

    fn rescale_row(row: ArrayView1<f64>, ratio: f64, center: f64) -> Array1<f64> {
        let mut out = Array1::zeros(row.len());
        for (i, j, w) in rescale_weights(row.len(), ratio, center) {
            out[j] += row[i] * w;
        }
        out
    }

    fn gaussian_sig(center_bin: f64, width: f64) -> RDSignature {
        let patch = Array2::from_shape_fn((21, 182), |(r, d)| {
            let z = (d as f64 - center_bin) / width;
            let rr = (r as f64 - 10.0) / 3.0;
            (-0.5 * (z * z + rr * rr)).exp()
        });
        normalize_signature(&RDSignature {
            local_id: 1,
            radar_id: 1,
            timestamp_s: 0.0,
            patch,
            center_range_bin: 60,
            normalization: Normalization::Raw,
        })
        .unwrap()
    }

    #[test]
    fn same_view_is_identity() {
        let s = gaussian_sig(100.0, 3.0);
        let a = adapt_analytic(&s, 0.4, 0.4, 1.1).unwrap();
        assert_eq!(a.signature, s);
        assert!(!a.low_confidence);
    }

    #[test]
    fn ratio_magnitude_matches_absolute_projections() {
        for &(src, tgt, axis) in &[(0.0, FRAC_PI_2, 0.3), (1.0, 2.5, -0.7), (3.0, 0.2, 2.0)] {
            let (r, _) = doppler_ratio(src, tgt, axis);
            let expected = (axis - tgt).cos().abs() / (axis - src).cos().abs().max(COS_FLOOR);
            assert!((r - expected).abs() < 1e-12);
            let (r2, _) = doppler_ratio(src, tgt, axis + PI);
            assert!((r - r2).abs() < 1e-12);
        }
        let (r, low) = doppler_ratio(FRAC_PI_2, 0.0, 0.0);
        assert!(low);
        assert!((r - 1.0 / COS_FLOOR).abs() < 1e-9);
    }

    #[test]
    fn peak_moves_by_the_ratio() {
        // peak 20 bins above zero velocity; target projection half the source
        let s = gaussian_sig(91.0 + 20.0, 2.0);
        let axis = 0.0;
        let az_tgt = (0.5f64).acos();
        let a = adapt_analytic(&s, 0.0, az_tgt, axis).unwrap();
        let row = a.signature.patch.row(10);
        let peak = (0..182).max_by(|&i, &j| row[i].total_cmp(&row[j])).unwrap();
        assert_eq!(peak, 101);
        // the opposite side of the stroke sees the same projection
        let b = adapt_analytic(&s, 0.0, PI - az_tgt, axis).unwrap();
        let diff = (&b.signature.patch - &a.signature.patch).mapv(f64::abs).sum();
        assert!(diff < 1e-9, "{diff}");
    }

    #[test]
    fn compression_conserves_mass_inside_the_axis() {
        let row = Array1::from_shape_fn(182, |d| if d == 120 { 1.0 } else { 0.0 });
        for ratio in [0.9, 0.5, 0.13, 0.0] {
            let out = rescale_row(row.view(), ratio, 91.0);
            assert!((out.sum() - 1.0).abs() < 1e-12, "ratio {ratio}");
        }
    }

    #[test]
    fn round_trip_preserves_structure() {
        let s = gaussian_sig(91.0 + 12.0, 4.0);
        let axis = 0.5;
        let there = adapt_analytic(&s, 0.0, FRAC_PI_2, axis).unwrap();
        let back = adapt_analytic(&there.signature, FRAC_PI_2, 0.0, axis).unwrap();
        let v = ssim(&render(&s.patch, false), &render(&back.signature.patch, false)).unwrap();
        assert!(v >= 0.95, "round trip ssim {v}");
    }

    #[test]
    fn axis_estimate_follows_elongation() {
        let axis = 0.8f64;
        let dir = Vec2::from_angle(axis);
        let across = dir.rotate(FRAC_PI_2);
        let mut pts = Vec::new();
        for i in 0..200 {
            let t = (i as f64 / 199.0 - 0.5) * 0.4;
            let s = ((i * 37 % 11) as f64 / 10.0 - 0.5) * 0.04;
            pts.push((Vec2::new(2.0, 3.0) + dir * t + across * s, 0.5 + (i % 3) as f64 * 0.1));
        }
        let e = estimate_motion_axis(&pts).unwrap();
        assert!(axis_difference(e.axis, axis) < 0.02);
        assert!(e.anisotropy > 0.8);
        assert!(estimate_motion_axis(&pts[..2]).is_none());
    }

    proptest! {
        #[test]
        fn adaptation_keeps_shape_energy_and_sign(
            src in 0.0f64..6.28, tgt in 0.0f64..6.28, axis in 0.0f64..3.14, c in 60.0f64..120.0
        ) {
            let s = gaussian_sig(c, 3.0);
            let a = adapt_analytic(&s, src, tgt, axis).unwrap();
            prop_assert_eq!(a.signature.patch.dim(), s.patch.dim());
            prop_assert!(a.signature.patch.iter().all(|&v| v >= 0.0));
            prop_assert!((a.signature.frobenius_norm() - 1.0).abs() < 1e-6);
            prop_assert!((0.0..std::f64::consts::TAU).contains(&a.source_azimuth));
            prop_assert!((0.0..std::f64::consts::TAU).contains(&a.target_azimuth));
        }
    }
}
