//! Scoring pipeline outputs against simulator ground truth.
//!
//! Detections are labeled per radar and frame by gated assignment to the
//! workers that radar can see, in the radar's true local frame. The first
//! `window_frames` frames are warm-up and are not scored.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::assignment::gated_assignment;
use crate::config::PipelineConfig;
use crate::dataset::{Truth, TruthFrame};
use crate::error::{Error, Result};
use crate::exposure::{align_streams, ExposureRecord, FieldMode, PMField, PMSensorReading, PmClass};
use crate::formats::AssociationRecord;
use crate::geometry::Vec2;
use crate::radar_sim::{RadarId, RadarPose, WorkerId};
use crate::reid::{pair_counts, LabeledDetection, NodeKey, PairCounts};
use crate::tdscan::cluster_count_accuracy;
use crate::view_adapt::{fidelity, AdaptedSignature};

/// A detection matched to a worker.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Label {
    pub worker: WorkerId,
    pub error_m: f64,
    /// Ground range of the worker from the radar.
    pub range_m: f64,
}

/// Ground truth prepared for labeling.
#[derive(Debug, Clone)]
pub struct TruthIndex {
    frames: Vec<TruthFrame>,
    by_time: BTreeMap<u64, usize>,
    true_poses: BTreeMap<RadarId, RadarPose>,
    surveyed: BTreeMap<RadarId, RadarPose>,
    gate_m: f64,
    mae_range_m: f64,
    warmup: usize,
}

impl TruthIndex {
    pub fn new(truth: &Truth, cfg: &PipelineConfig) -> Self {
        Self {
            by_time: truth.frames.iter().enumerate().map(|(i, f)| (f.timestamp_s.to_bits(), i)).collect(),
            frames: truth.frames.clone(),
            true_poses: truth.poses.iter().map(|p| (p.id, p.clone())).collect(),
            surveyed: cfg.surveyed_poses().into_iter().map(|p| (p.id, p)).collect(),
            gate_m: cfg.eval.match_gate_m,
            mae_range_m: cfg.eval.mae_max_range_m,
            warmup: cfg.tdscan.window_frames,
        }
    }

    pub fn frame_index(&self, t: f64) -> Option<usize> {
        self.by_time.get(&t.to_bits()).copied()
    }

    pub fn scored(&self, k: usize) -> bool {
        k >= self.warmup
    }

    fn visible_workers(&self, k: usize, radar: RadarId) -> Vec<(WorkerId, Vec2)> {
        let Some(pose) = self.true_poses.get(&radar) else {
            return Vec::new();
        };
        self.frames[k]
            .workers
            .iter()
            .filter(|w| w.visible_to.contains(&radar))
            .map(|w| (w.id, pose.to_local(w.position)))
            .collect()
    }

    pub fn visible_count(&self, k: usize, radar: RadarId) -> usize {
        self.visible_workers(k, radar).len()
    }

    /// Labels local-frame detections of `radar` at frame `k`.
    pub fn label(&self, k: usize, radar: RadarId, locals: &[Vec2]) -> Result<Vec<Option<Label>>> {
        let workers = self.visible_workers(k, radar);
        let cost = ndarray::Array2::from_shape_fn((locals.len(), workers.len()), |(i, j)| locals[i].distance(workers[j].1));
        let a = gated_assignment(&cost, self.gate_m)?;
        let mut out = vec![None; locals.len()];
        for (i, j) in a.pairs {
            out[i] = Some(Label {
                worker: workers[j].0,
                error_m: cost[[i, j]],
                range_m: workers[j].1.norm(),
            });
        }
        Ok(out)
    }

    /// Local position of a record through the surveyed pose it was mapped with.
    pub fn record_local(&self, r: &AssociationRecord) -> Result<Vec2> {
        self.surveyed
            .get(&r.radar_id)
            .map(|p| p.to_local(r.position))
            .ok_or_else(|| Error::Data(format!("record from unknown radar {}", r.radar_id)))
    }

    pub fn true_position(&self, k: usize, worker: WorkerId) -> Option<Vec2> {
        self.frames[k].workers.iter().find(|w| w.id == worker).map(|w| w.position)
    }
}

/// Mean fidelity of adapted and unadapted signatures against the target
/// radar's own signature of the same worker.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct FidelitySummary {
    pub pairs: usize,
    pub adapted_ssim: f64,
    pub unadapted_ssim: f64,
    pub adapted_l1: f64,
    pub unadapted_l1: f64,
    pub adapted_psnr_db: f64,
    pub unadapted_psnr_db: f64,
}

#[derive(Debug, Clone, Default)]
pub struct FidelityAccumulator {
    sum: FidelitySummary,
}

impl FidelityAccumulator {
    /// Adds every adapted signature whose source and target detections are
    /// labeled with the same worker.
    pub fn add(
        &mut self,
        truth: &TruthIndex,
        k: usize,
        by_radar: &BTreeMap<RadarId, Vec<crate::pipeline::Detection>>,
        adapted: &[(NodeKey, RadarId, AdaptedSignature)],
    ) -> Result<()> {
        let mut labels: BTreeMap<NodeKey, WorkerId> = BTreeMap::new();
        for (r, dets) in by_radar {
            let locals: Vec<Vec2> = dets.iter().map(|d| d.local).collect();
            for (d, l) in dets.iter().zip(truth.label(k, *r, &locals)?) {
                if let Some(l) = l {
                    labels.insert(d.key(), l.worker);
                }
            }
        }
        for (src, tgt, sig) in adapted {
            let Some(w) = labels.get(src) else { continue };
            let Some(target) = by_radar[tgt].iter().find(|d| labels.get(&d.key()) == Some(w)) else {
                continue;
            };
            let source = by_radar[&src.0].iter().find(|d| d.key() == *src).expect("source detection");
            let a = fidelity(&sig.signature.patch, &target.signature.patch, false)?;
            let u = fidelity(&source.signature.patch, &target.signature.patch, false)?;
            let s = &mut self.sum;
            s.pairs += 1;
            s.adapted_ssim += a.ssim;
            s.unadapted_ssim += u.ssim;
            s.adapted_l1 += a.l1_mean;
            s.unadapted_l1 += u.l1_mean;
            s.adapted_psnr_db += a.psnr_db;
            s.unadapted_psnr_db += u.psnr_db;
        }
        Ok(())
    }

    pub fn summary(&self) -> FidelitySummary {
        let s = self.sum;
        if s.pairs == 0 {
            return s;
        }
        let n = s.pairs as f64;
        FidelitySummary {
            pairs: s.pairs,
            adapted_ssim: s.adapted_ssim / n,
            unadapted_ssim: s.unadapted_ssim / n,
            adapted_l1: s.adapted_l1 / n,
            unadapted_l1: s.unadapted_l1 / n,
            adapted_psnr_db: s.adapted_psnr_db / n,
            unadapted_psnr_db: s.unadapted_psnr_db / n,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    /// Mean over scored (radar, frame) pairs with at least one visible worker.
    pub cluster_count_accuracy: f64,
    pub cluster_count_samples: usize,
    /// Over labeled detections of workers within the MAE range.
    pub localization_mae_m: f64,
    pub localization_samples: usize,
    pub mae_per_radar_m: BTreeMap<RadarId, f64>,
    pub mae_per_worker_m: BTreeMap<WorkerId, f64>,
    pub reid_f1: f64,
    pub pair_counts: PairCounts,
    pub fidelity: FidelitySummary,
    /// Mean absolute PM2.5 exposure error against the field along the true trajectory.
    pub exposure_mae_pm2_5: f64,
    pub exposure_records_scored: usize,
}

fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        0.0
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

/// Scores association and exposure outputs.
pub fn evaluate(
    truth: &TruthIndex,
    records: &[AssociationRecord],
    exposures: &[ExposureRecord],
    fields: &[(f64, PMField)],
    fidelity: FidelitySummary,
) -> Result<EvalSummary> {
    let mut per_frame: BTreeMap<usize, Vec<&AssociationRecord>> = BTreeMap::new();
    let mut missing = Vec::new();
    for r in records {
        match truth.frame_index(r.timestamp_s) {
            Some(k) => per_frame.entry(k).or_default().push(r),
            None => missing.push(r.timestamp_s),
        }
    }
    if !missing.is_empty() {
        missing.dedup();
        let shown: Vec<String> = missing.iter().take(10).map(|t| t.to_string()).collect();
        return Err(Error::Data(format!(
            "{} prediction timestamps have no ground truth frame: {}",
            missing.len(),
            shown.join(", ")
        )));
    }

    let radars: Vec<RadarId> = truth.surveyed.keys().copied().collect();
    let mut acc = Vec::new();
    let mut errors = Vec::new();
    let mut by_radar: BTreeMap<RadarId, Vec<f64>> = BTreeMap::new();
    let mut by_worker: BTreeMap<WorkerId, Vec<f64>> = BTreeMap::new();
    let mut counts = PairCounts::default();
    // (window start bits, gid) -> votes per worker
    let mut labels_at: Vec<(f64, crate::reid::GlobalId, WorkerId)> = Vec::new();
    let empty = Vec::new();
    for k in 0..truth.frames.len() {
        if !truth.scored(k) {
            continue;
        }
        let recs = per_frame.get(&k).unwrap_or(&empty);
        let mut labeled = Vec::new();
        for &radar in &radars {
            let mine: Vec<&AssociationRecord> = recs.iter().copied().filter(|r| r.radar_id == radar).collect();
            let visible = truth.visible_count(k, radar);
            if visible > 0 {
                acc.push(cluster_count_accuracy(mine.len(), visible)?);
            }
            let locals = mine.iter().map(|r| truth.record_local(r)).collect::<Result<Vec<_>>>()?;
            for (r, l) in mine.iter().zip(truth.label(k, radar, &locals)?) {
                if let Some(l) = l {
                    if l.range_m <= truth.mae_range_m {
                        errors.push(l.error_m);
                        by_radar.entry(radar).or_default().push(l.error_m);
                        by_worker.entry(l.worker).or_default().push(l.error_m);
                    }
                    labels_at.push((r.timestamp_s, r.global_id, l.worker));
                }
                labeled.push(LabeledDetection {
                    radar_id: radar,
                    global_id: Some(r.global_id),
                    truth: l.map(|l| l.worker),
                });
            }
        }
        counts.add(pair_counts(&labeled));
    }

    let mut exp_err = Vec::new();
    for e in exposures {
        let mut votes: BTreeMap<WorkerId, usize> = BTreeMap::new();
        for (t, g, w) in &labels_at {
            if *g == e.global_id && *t >= e.window_start_s && *t < e.window_end_s {
                *votes.entry(*w).or_default() += 1;
            }
        }
        let Some((&worker, _)) = votes.iter().max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(a.0))) else {
            continue;
        };
        let Some((_, field)) = fields.iter().find(|(t0, _)| *t0 == e.window_start_s) else {
            continue;
        };
        let mut vals = Vec::new();
        for (k, f) in truth.frames.iter().enumerate() {
            if f.timestamp_s >= e.window_start_s && f.timestamp_s < e.window_end_s {
                if let Some(p) = truth.true_position(k, worker) {
                    vals.push(field.evaluate(p, PmClass::Pm2_5)?);
                }
            }
        }
        if !vals.is_empty() {
            exp_err.push((e.exposure.pm2_5 - mean(&vals)).abs());
        }
    }

    Ok(EvalSummary {
        cluster_count_accuracy: mean(&acc),
        cluster_count_samples: acc.len(),
        localization_mae_m: mean(&errors),
        localization_samples: errors.len(),
        mae_per_radar_m: by_radar.into_iter().map(|(k, v)| (k, mean(&v))).collect(),
        mae_per_worker_m: by_worker.into_iter().map(|(k, v)| (k, mean(&v))).collect(),
        reid_f1: counts.f1(),
        pair_counts: counts,
        fidelity,
        exposure_mae_pm2_5: mean(&exp_err),
        exposure_records_scored: exp_err.len(),
    })
}

/// Per-window fields built from the PM stream alone.
pub fn pm_fields(readings: &[PMSensorReading], window_s: f64, mode: &FieldMode) -> Result<Vec<(f64, PMField)>> {
    align_streams(&[], readings, window_s)?
        .into_iter()
        .filter(|w| !w.sensors.is_empty())
        .map(|w| Ok((w.start_s, mode.build(&w.sensor_readings())?)))
        .collect()
}

/// `metric,scope,value` rows for plotting.
pub fn write_metrics_csv(path: &Path, s: &EvalSummary) -> Result<()> {
    let mut rows: Vec<(String, String, f64)> = vec![
        ("cluster_count_accuracy".into(), "all".into(), s.cluster_count_accuracy),
        ("localization_mae_m".into(), "all".into(), s.localization_mae_m),
        ("reid_f1".into(), "all".into(), s.reid_f1),
        ("exposure_mae_pm2_5".into(), "all".into(), s.exposure_mae_pm2_5),
    ];
    rows.extend(s.mae_per_radar_m.iter().map(|(r, v)| ("localization_mae_m".to_string(), format!("radar_{r}"), *v)));
    rows.extend(s.mae_per_worker_m.iter().map(|(w, v)| ("localization_mae_m".to_string(), format!("worker_{w}"), *v)));
    if s.fidelity.pairs > 0 {
        let f = &s.fidelity;
        for (name, v) in [
            ("ssim_adapted", f.adapted_ssim),
            ("ssim_unadapted", f.unadapted_ssim),
            ("l1_adapted", f.adapted_l1),
            ("l1_unadapted", f.unadapted_l1),
            ("psnr_adapted_db", f.adapted_psnr_db),
            ("psnr_unadapted_db", f.unadapted_psnr_db),
        ] {
            rows.push((name.into(), "all".into(), v));
        }
    }
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
    let err = |e: csv::Error| Error::Data(format!("{}: {e}", path.display()));
    w.write_record(["metric", "scope", "value"]).map_err(err)?;
    for (m, sc, v) in rows {
        w.write_record([m, sc, v.to_string()]).map_err(err)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
