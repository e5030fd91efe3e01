use super::{ChirpConfig, RDHeatmap};

/// A peak picked out of a range-Doppler matrix.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RdDetection {
    pub doppler_bin: usize,
    pub range_bin: usize,
    pub range_m: f64,
    pub velocity: f64,
    pub power: f64,
}

/// Mean noise power, estimated from the median cell assuming exponential noise.
pub fn estimate_noise_floor(hm: &RDHeatmap) -> f64 {
    let mut v: Vec<f32> = hm.data.iter().copied().collect();
    if v.is_empty() {
        return 0.0;
    }
    let mid = v.len() / 2;
    let (_, m, _) = v.select_nth_unstable_by(mid, f32::total_cmp);
    *m as f64 / std::f64::consts::LN_2
}

/// Fixed-threshold detector: keeps 3×3 local maxima whose power exceeds the
/// noise floor by `threshold_db`. When `noise_floor` is `None` it is estimated
/// from the matrix.
pub fn detect_points(
    hm: &RDHeatmap,
    cfg: &ChirpConfig,
    noise_floor: Option<f64>,
    threshold_db: f64,
) -> Vec<RdDetection> {
    let floor = noise_floor.unwrap_or_else(|| estimate_noise_floor(hm));
    let threshold = floor * 10f64.powf(threshold_db / 10.0);
    let (nd, nr) = hm.data.dim();
    let mut out = Vec::new();
    for d in 0..nd {
        for r in 0..nr {
            let p = hm.data[[d, r]] as f64;
            if p <= threshold {
                continue;
            }
            let mut is_peak = true;
            'nb: for dd in d.saturating_sub(1)..=(d + 1).min(nd - 1) {
                for rr in r.saturating_sub(1)..=(r + 1).min(nr - 1) {
                    if (dd, rr) != (d, r) && (hm.data[[dd, rr]] as f64) > p {
                        is_peak = false;
                        break 'nb;
                    }
                }
            }
            if is_peak {
                out.push(RdDetection {
                    doppler_bin: d,
                    range_bin: r,
                    range_m: cfg.bin_to_range(r),
                    velocity: cfg.bin_to_velocity(d),
                    power: p,
                });
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn finds_single_peak_above_floor() {
        let cfg = ChirpConfig::default();
        let mut hm = RDHeatmap::zeros(1, 0.0, &cfg);
        hm.data.fill(1.0);
        hm.data[[100, 72]] = 5.0; // +7 dB
        hm.data[[30, 10]] = 3.0; // +4.8 dB, below threshold
        let det = detect_points(&hm, &cfg, Some(1.0), 6.0);
        assert_eq!(det.len(), 1);
        assert_eq!((det[0].doppler_bin, det[0].range_bin), (100, 72));
        assert!((det[0].range_m - cfg.bin_to_range(72)).abs() < 1e-12);
        assert!(det[0].velocity > 0.0);
    }

    #[test]
    fn floor_estimate_of_flat_matrix() {
        let cfg = ChirpConfig::default();
        let mut hm = RDHeatmap::zeros(1, 0.0, &cfg);
        hm.data.fill(std::f64::consts::LN_2 as f32);
        assert!((estimate_noise_floor(&hm) - 1.0).abs() < 1e-6);
    }
}
