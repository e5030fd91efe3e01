//! End-to-end processing of a dataset.
//!
//! Each radar's stream goes through localization and signature extraction
//! independently (in parallel). Association then walks the frame ticks in
//! order: view adaptation, per-pair similarity and assignment, and the
//! identity graph update. Exposure is computed last from the fused
//! identity trajectories and the PM stream.

use std::collections::{BTreeMap, VecDeque};
use std::sync::Arc;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{AdapterChoice, PipelineConfig};
use crate::dataset::{Dataset, RadarStream};
use crate::error::{Error, Result};
use crate::eval::{self, EvalSummary};
use crate::exposure::{align_streams, session_means, window_exposures, ExposureRecord, IdentitySample, PMField, PmLevels};
use crate::formats::AssociationRecord;
use crate::geometry::{wrap_pi, Vec2};
use crate::radar_sim::{ChirpConfig, PointCloudFrame, RDHeatmap, RadarId, RadarPose};
use crate::reid::{build_window_similarity, match_positions, match_signatures, GlobalId, IdentityGraph, NodeKey, ReidMode};
use crate::signatures::{extract_signature, range_bin_of, suppress_static, RDSignature};
use crate::tdscan::{LocalId, Tdscan};
use crate::view_adapt::{estimate_motion_axis, AdaptedSignature, AdapterBridge, AnalyticAdapter, AxisEstimate, BridgeAdapter, BridgeAddr, IdentityAdapter, ViewAdapter};

/// One confirmed track of one radar at one frame, ready for association.
#[derive(Debug, Clone, PartialEq)]
pub struct Detection {
    pub radar_id: RadarId,
    pub local_id: LocalId,
    pub timestamp_s: f64,
    pub local: Vec2,
    /// Through the surveyed pose.
    pub global: Vec2,
    /// Patch of this frame.
    pub signature: RDSignature,
    /// Patches of the track over its last window of frames, oldest first,
    /// ending with `signature`.
    pub history: Vec<Arc<RDSignature>>,
    pub axis: Option<AxisEstimate>,
}

impl Detection {
    pub fn key(&self) -> NodeKey {
        (self.radar_id, self.local_id)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RadarFrameOutput {
    pub timestamp_s: f64,
    pub detections: Vec<Detection>,
    pub cluster_ms: f64,
    pub signature_ms: f64,
}

/// Localization and signature extraction for one radar.
#[derive(Debug, Clone)]
pub struct RadarStage {
    pose: RadarPose,
    chirp: ChirpConfig,
    tdscan: Tdscan,
    window: usize,
    notch_mps: f64,
    clutter_alpha: f64,
    background: Option<ndarray::Array2<f32>>,
    patches: BTreeMap<LocalId, VecDeque<Arc<RDSignature>>>,
}

impl RadarStage {
    pub fn new(pose: RadarPose, cfg: &PipelineConfig) -> Result<Self> {
        let params = cfg.tdscan.params()?;
        Ok(Self {
            tdscan: Tdscan::new(pose.id, cfg.tdscan.band()?, params),
            pose,
            chirp: cfg.chirp.clone(),
            window: params.window_frames,
            notch_mps: cfg.signatures.static_notch_mps,
            clutter_alpha: cfg.signatures.clutter_alpha,
            background: None,
            patches: BTreeMap::new(),
        })
    }

    pub fn step(&mut self, frame: &PointCloudFrame, hm: &RDHeatmap) -> Result<RadarFrameOutput> {
        let t0 = Instant::now();
        let reports = self.tdscan.process(frame)?;
        let cluster_ms = ms_since(t0);

        let t1 = Instant::now();
        let cleaned = self.remove_background(hm);
        let hm = cleaned.as_ref().unwrap_or(hm);
        let mut detections = Vec::with_capacity(reports.len());
        for r in reports {
            let r0 = match range_bin_of(r.centroid, &self.pose, &self.chirp) {
                Ok((bin, _)) => bin,
                Err(e) => {
                    log::warn!("radar {} track {}: {e}; skipped", self.pose.id, r.local_id);
                    continue;
                }
            };
            let mut sig = extract_signature(hm, r0, r.local_id)?;
            sig.timestamp_s = r.timestamp_s;
            suppress_static(&mut sig, self.notch_mps, hm.doppler_resolution_mps)?;
            let buf = self.patches.entry(r.local_id).or_default();
            buf.push_back(Arc::new(sig));
            while buf.len() > self.window {
                buf.pop_front();
            }
            let history: Vec<Arc<RDSignature>> = buf.iter().cloned().collect();
            let signature = RDSignature::clone(history.last().expect("just pushed"));
            let pts: Vec<(Vec2, f64)> = r.points.iter().map(|p| (self.pose.to_global(p.xy()), p.doppler)).collect();
            detections.push(Detection {
                radar_id: self.pose.id,
                local_id: r.local_id,
                timestamp_s: r.timestamp_s,
                local: r.centroid,
                global: self.pose.to_global(r.centroid),
                signature,
                history,
                axis: estimate_motion_axis(&pts),
            });
        }
        let live: Vec<LocalId> = self.tdscan.tracks().iter().map(|t| t.local_id).collect();
        self.patches.retain(|id, _| live.contains(id));
        Ok(RadarFrameOutput {
            timestamp_s: frame.timestamp_s,
            detections,
            cluster_ms,
            signature_ms: ms_since(t1),
        })
    }

    /// Subtracts the running per-cell mean of earlier frames, clamped at zero.
    /// The mean is updated after subtraction so a cell never cancels itself.
    fn remove_background(&mut self, hm: &RDHeatmap) -> Option<RDHeatmap> {
        if self.clutter_alpha == 0.0 {
            return None;
        }
        let a = self.clutter_alpha as f32;
        let bg = self.background.get_or_insert_with(|| hm.data.clone());
        let mut out = hm.clone();
        out.data.zip_mut_with(bg, |v, b| *v = (*v - *b).max(0.0));
        bg.zip_mut_with(&hm.data, |b, v| *b += a * (*v - *b));
        Some(out)
    }

    /// Runs the whole stream.
    pub fn run(mut self, stream: &RadarStream) -> Result<Vec<RadarFrameOutput>> {
        stream
            .frames
            .iter()
            .zip(&stream.heatmaps)
            .map(|(f, h)| self.step(f, h))
            .collect()
    }
}

fn window(ds: &[Detection]) -> Vec<Vec<&RDSignature>> {
    ds.iter().map(|d| d.history.iter().map(|s| s.as_ref()).collect()).collect()
}

fn ms_since(t: Instant) -> f64 {
    t.elapsed().as_secs_f64() * 1e3
}

/// Builds the configured adapter. An unreachable bridge falls back to the
/// analytic adapter when the configuration allows it.
pub fn make_adapter(cfg: &PipelineConfig) -> Result<Box<dyn ViewAdapter>> {
    if cfg.reid.mode == ReidMode::CorrelationOnly {
        return Ok(Box::new(IdentityAdapter));
    }
    match &cfg.adapter.kind {
        AdapterChoice::Analytic => Ok(Box::new(AnalyticAdapter)),
        AdapterChoice::Off => Ok(Box::new(IdentityAdapter)),
        AdapterChoice::Bridge(addr) => {
            let addr: BridgeAddr = addr.parse()?;
            let timeout = std::time::Duration::from_millis(cfg.adapter.timeout_ms);
            match AdapterBridge::connect(&addr, timeout) {
                Ok(bridge) => Ok(Box::new(BridgeAdapter { bridge })),
                Err(e) if cfg.adapter.fallback_to_analytic => {
                    log::warn!("adapter bridge unavailable ({e}); using the analytic adapter");
                    Ok(Box::new(AnalyticAdapter))
                }
                Err(e) => Err(e),
            }
        }
    }
}

/// Output of one association tick.
#[derive(Debug, Clone, PartialEq)]
pub struct TickOutput {
    pub records: Vec<AssociationRecord>,
    pub adaptation_ms: f64,
    pub association_ms: f64,
    /// `(source, target radar, adapted signature)`, kept only when requested.
    pub adapted: Vec<(NodeKey, RadarId, AdaptedSignature)>,
}

/// Adapted window of one track toward one radar, with the geometry it was
/// adapted under.
#[derive(Default)]
struct AdaptCache {
    geometry: Option<(f64, f64, Option<f64>)>,
    frames: VecDeque<AdaptedSignature>,
}

/// Cached adaptations are reused while the geometry moves less than this.
const REUSE_TOLERANCE_RAD: f64 = 2.0 * std::f64::consts::PI / 180.0;

fn same_geometry(a: (f64, f64, Option<f64>), b: (f64, f64, Option<f64>)) -> bool {
    let close = |x: f64, y: f64| wrap_pi(x - y).abs() < REUSE_TOLERANCE_RAD;
    // the axis is a line, so it is compared modulo π
    let axes = match (a.2, b.2) {
        (Some(x), Some(y)) => wrap_pi(2.0 * (x - y)).abs() < 2.0 * REUSE_TOLERANCE_RAD,
        (None, None) => true,
        _ => false,
    };
    close(a.0, b.0) && close(a.1, b.1) && axes
}

/// Cross-radar association state.
pub struct Associator {
    mode: ReidMode,
    tau: f64,
    mutual_best: bool,
    distance_gate_m: f64,
    fallback: bool,
    poses: BTreeMap<RadarId, RadarPose>,
    adapter: Box<dyn ViewAdapter>,
    cache: BTreeMap<(NodeKey, RadarId), AdaptCache>,
    graph: IdentityGraph,
}

impl Associator {
    pub fn new(cfg: &PipelineConfig, adapter: Box<dyn ViewAdapter>) -> Result<Self> {
        Ok(Self {
            mode: cfg.reid.mode,
            tau: cfg.reid.tau,
            mutual_best: cfg.reid.mutual_best,
            distance_gate_m: cfg.reid.distance_gate_m,
            fallback: cfg.adapter.fallback_to_analytic,
            poses: cfg.surveyed_poses().into_iter().map(|p| (p.id, p)).collect(),
            adapter,
            cache: BTreeMap::new(),
            graph: IdentityGraph::new(cfg.reid.persistence()?),
        })
    }

    pub fn adapter_id(&self) -> &str {
        self.adapter.id()
    }

    /// Brings the cached adaptations of `d` toward `target` in line with
    /// its window. Frames are adapted again only when the geometry moved.
    fn adapt(&mut self, d: &Detection, target: RadarId) -> Result<()> {
        let src = self.poses[&d.radar_id].line_of_sight(d.global);
        let tgt = self.poses[&target].line_of_sight(d.global);
        let axis = d.axis.map(|a| a.axis);
        let geometry = (src, tgt, axis);
        let cached = self.cache.remove(&(d.key(), target)).unwrap_or_default();
        let reuse = cached.geometry.is_some_and(|g| same_geometry(g, geometry));
        let mut fresh = VecDeque::with_capacity(d.history.len());
        let mut old = cached.frames.into_iter().filter(|_| reuse).peekable();
        for s in &d.history {
            while old.next_if(|a| a.signature.timestamp_s < s.timestamp_s).is_some() {}
            if let Some(a) = old.next_if(|a| a.signature.timestamp_s == s.timestamp_s) {
                fresh.push_back(a);
                continue;
            }
            let a = match self.adapter.adapt(s, src, tgt, axis) {
                Err(e @ (Error::BridgeTimeout(_) | Error::BridgeUnavailable(_) | Error::Protocol(_))) if self.fallback => {
                    log::warn!("adapter bridge failed ({e}); switching to the analytic adapter");
                    self.adapter = Box::new(AnalyticAdapter);
                    self.adapter.adapt(s, src, tgt, axis)
                }
                other => other,
            }?;
            fresh.push_back(a);
        }
        self.cache.insert((d.key(), target), AdaptCache { geometry: Some(geometry), frames: fresh });
        Ok(())
    }

    /// Associates the detections of one frame tick. `by_radar` must hold the
    /// detections of every radar (possibly none) for time `t`.
    pub fn step(&mut self, t: f64, by_radar: &BTreeMap<RadarId, Vec<Detection>>, keep_adapted: bool) -> Result<TickOutput> {
        let start = Instant::now();
        for dets in by_radar.values() {
            for d in dets {
                self.graph.observe(d.key(), d.global, t)?;
            }
        }
        for dets in by_radar.values() {
            for d in dets {
                if self.graph.is_new(d.key()) {
                    self.graph.reactivate(d.key(), d.global, t);
                }
            }
        }
        let mut adaptation_ms = 0.0;
        let mut adapted_out = Vec::new();
        let mut rho: BTreeMap<NodeKey, f64> = BTreeMap::new();
        let ids: Vec<RadarId> = by_radar.keys().copied().collect();
        for (i, &a) in ids.iter().enumerate() {
            for &b in &ids[i + 1..] {
                let (da, db) = (&by_radar[&a], &by_radar[&b]);
                if da.is_empty() || db.is_empty() {
                    continue;
                }
                let pairs: Vec<(usize, usize, Option<f64>)> = match self.mode {
                    ReidMode::DistanceOnly => {
                        let pa: Vec<Vec2> = da.iter().map(|d| d.global).collect();
                        let pb: Vec<Vec2> = db.iter().map(|d| d.global).collect();
                        match_positions(&pa, &pb, self.distance_gate_m)?
                            .into_iter()
                            .map(|(r, c)| (r, c, None))
                            .collect()
                    }
                    ReidMode::Full | ReidMode::CorrelationOnly => {
                        let ta = Instant::now();
                        for d in da {
                            self.adapt(d, b)?;
                        }
                        adaptation_ms += ms_since(ta);
                        let adapted: Vec<Vec<&AdaptedSignature>> =
                            da.iter().map(|d| self.cache[&(d.key(), b)].frames.iter().collect()).collect();
                        let sim = build_window_similarity((a, b), &adapted, &window(db), self.tau)?;
                        if keep_adapted {
                            adapted_out.extend(
                                da.iter()
                                    .zip(&adapted)
                                    .filter_map(|(d, w)| w.last().map(|s| (d.key(), b, (*s).clone()))),
                            );
                        }
                        match_signatures(&sim, self.mutual_best)?
                            .into_iter()
                            .map(|m| (m.row, m.col, Some(m.rho)))
                            .collect()
                    }
                };
                let matches: Vec<(NodeKey, NodeKey)> = pairs.iter().map(|&(r, c, _)| (da[r].key(), db[c].key())).collect();
                for &(r, c, p) in &pairs {
                    if let Some(p) = p {
                        for k in [da[r].key(), db[c].key()] {
                            let e = rho.entry(k).or_insert(p);
                            *e = e.max(p);
                        }
                    }
                }
                self.graph.update_graph(&matches, t)?;
            }
        }
        let live: std::collections::BTreeSet<NodeKey> = by_radar.values().flatten().map(|d| d.key()).collect();
        self.cache.retain(|(k, _), _| live.contains(k));
        // expiry and id assignment also for ticks without any pair
        self.graph.update_graph(&[], t)?;
        let mut records = Vec::new();
        for dets in by_radar.values() {
            for d in dets {
                let gid = self
                    .graph
                    .global_id(d.key())
                    .ok_or_else(|| Error::Data(format!("track ({}, {}) has no identity", d.radar_id, d.local_id)))?;
                records.push(AssociationRecord {
                    timestamp_s: t,
                    radar_id: d.radar_id,
                    local_id: d.local_id,
                    global_id: gid,
                    rho: rho.get(&d.key()).copied(),
                    position: d.global,
                });
            }
        }
        let total = ms_since(start);
        Ok(TickOutput {
            records,
            adaptation_ms,
            association_ms: (total - adaptation_ms).max(0.0),
            adapted: adapted_out,
        })
    }
}

/// Mean, 95th percentile and maximum of per-unit latencies, ms.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LatencyStats {
    pub mean_ms: f64,
    pub p95_ms: f64,
    pub max_ms: f64,
    pub samples: usize,
}

impl LatencyStats {
    pub fn from_samples(samples: &[f64]) -> Self {
        if samples.is_empty() {
            return Self::default();
        }
        let mut s = samples.to_vec();
        s.sort_by(f64::total_cmp);
        let idx = ((0.95 * s.len() as f64).ceil() as usize).clamp(1, s.len()) - 1;
        Self {
            mean_ms: s.iter().sum::<f64>() / s.len() as f64,
            p95_ms: s[idx],
            max_ms: s[s.len() - 1],
            samples: s.len(),
        }
    }
}

/// Per-stage latencies. Clustering and signatures are per radar frame;
/// adaptation and association per frame tick.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct StageLatencies {
    pub clustering: LatencyStats,
    pub signatures: LatencyStats,
    pub adaptation: LatencyStats,
    pub association: LatencyStats,
    pub exposure: LatencyStats,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub seed: u64,
    pub reid_mode: ReidMode,
    pub adapter: String,
    pub frames: usize,
    pub radars: usize,
    pub detections: usize,
    pub identities: usize,
    pub latency: StageLatencies,
    /// Exposure lags the motion by the window length plus processing time.
    pub exposure_lag_s: f64,
    pub session_exposure: BTreeMap<GlobalId, PmLevels>,
    pub exposure_records: usize,
    pub eval: Option<EvalSummary>,
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub associations: Vec<AssociationRecord>,
    pub exposures: Vec<ExposureRecord>,
    pub fields: Vec<(f64, PMField)>,
    pub report: RunReport,
}

/// Conditioned signatures of every detection, per radar, in frame order.
pub fn signatures(data: &Dataset) -> Result<BTreeMap<RadarId, Vec<RDSignature>>> {
    let cfg = &data.config;
    cfg.surveyed_poses()
        .into_par_iter()
        .map(|p| {
            let stream = data
                .radars
                .get(&p.id)
                .ok_or_else(|| Error::Data(format!("dataset has no stream for radar {}", p.id)))?;
            let id = p.id;
            let out = RadarStage::new(p, cfg)?.run(stream)?;
            Ok((id, out.into_iter().flat_map(|f| f.detections).map(|d| d.signature).collect()))
        })
        .collect()
}

/// Sampling period (in frame ticks) of the adapter fidelity check.
const FIDELITY_EVERY: usize = 10;

/// Runs every stage over `data` with `data.config`.
pub fn run(data: &Dataset) -> Result<RunOutput> {
    data.config.validate()?;
    run_with_adapter(data, make_adapter(&data.config)?)
}

/// [`run`] with a caller-supplied view adapter in place of the configured one.
pub fn run_with_adapter(data: &Dataset, adapter: Box<dyn ViewAdapter>) -> Result<RunOutput> {
    let cfg = &data.config;
    cfg.validate()?;
    let poses = cfg.surveyed_poses();
    for p in &poses {
        if !data.radars.contains_key(&p.id) {
            return Err(Error::Data(format!("dataset has no stream for radar {}", p.id)));
        }
    }
    let n = data.frame_count();
    if let Some((id, s)) = data.radars.iter().find(|(_, s)| s.frames.len() != n) {
        return Err(Error::Data(format!("radar {id} has {} frames, expected {n}", s.frames.len())));
    }

    let per_radar: Vec<Vec<RadarFrameOutput>> = poses
        .par_iter()
        .map(|p| RadarStage::new(p.clone(), cfg)?.run(&data.radars[&p.id]))
        .collect::<Result<_>>()?;

    let half_period = 0.5 * cfg.chirp.frame_period();
    let mut assoc = Associator::new(cfg, adapter)?;
    let labels = data.truth.as_ref().map(|t| eval::TruthIndex::new(t, cfg));
    let mut fidelity = eval::FidelityAccumulator::default();
    let (mut adapt_ms, mut assoc_ms) = (Vec::with_capacity(n), Vec::with_capacity(n));
    let mut records = Vec::new();
    for k in 0..n {
        let t = per_radar.iter().map(|r| r[k].timestamp_s).fold(f64::NEG_INFINITY, f64::max);
        let mut by_radar = BTreeMap::new();
        for (p, out) in poses.iter().zip(&per_radar) {
            let f = &out[k];
            if (f.timestamp_s - t).abs() > half_period {
                return Err(Error::Data(format!(
                    "radar {} frame {k} at {} s is not synchronized with {t} s",
                    p.id, f.timestamp_s
                )));
            }
            by_radar.insert(p.id, f.detections.clone());
        }
        let keep = labels.is_some() && k % FIDELITY_EVERY == 0 && cfg.reid.mode != ReidMode::DistanceOnly;
        let tick = assoc.step(t, &by_radar, keep)?;
        if keep {
            if let Some(l) = &labels {
                fidelity.add(l, k, &by_radar, &tick.adapted)?;
            }
        }
        adapt_ms.push(tick.adaptation_ms);
        assoc_ms.push(tick.association_ms);
        records.extend(tick.records);
    }

    let t_exp = Instant::now();
    let mut samples: Vec<IdentitySample> = Vec::new();
    let mut i = 0;
    while i < records.len() {
        let t = records[i].timestamp_s;
        let mut fused: BTreeMap<GlobalId, (Vec2, usize)> = BTreeMap::new();
        while i < records.len() && records[i].timestamp_s == t {
            let e = fused.entry(records[i].global_id).or_insert((Vec2::ZERO, 0));
            e.0 = e.0 + records[i].position;
            e.1 += 1;
            i += 1;
        }
        samples.extend(fused.into_iter().map(|(g, (p, c))| IdentitySample {
            timestamp_s: t,
            global_id: g,
            position: p * (1.0 / c as f64),
        }));
    }
    let windows = align_streams(&samples, &data.pm, cfg.exposure.window_s)?;
    let (exposures, fields) = window_exposures(&windows, &cfg.exposure.field_mode()?)?;
    let exposure_ms = ms_since(t_exp);

    let cluster: Vec<f64> = per_radar.iter().flatten().map(|f| f.cluster_ms).collect();
    let sigs: Vec<f64> = per_radar.iter().flatten().map(|f| f.signature_ms).collect();
    let latency = StageLatencies {
        clustering: LatencyStats::from_samples(&cluster),
        signatures: LatencyStats::from_samples(&sigs),
        adaptation: LatencyStats::from_samples(&adapt_ms),
        association: LatencyStats::from_samples(&assoc_ms),
        exposure: LatencyStats::from_samples(&[exposure_ms]),
    };
    let per_frame_ms = latency.clustering.mean_ms + latency.signatures.mean_ms + latency.adaptation.mean_ms + latency.association.mean_ms;
    let eval = match &labels {
        Some(l) => Some(eval::evaluate(l, &records, &exposures, &fields, fidelity.summary())?),
        None => None,
    };
    let identities = records.iter().map(|r| r.global_id).collect::<std::collections::BTreeSet<_>>().len();
    let report = RunReport {
        seed: cfg.seed,
        reid_mode: cfg.reid.mode,
        adapter: assoc.adapter_id().to_string(),
        frames: n,
        radars: poses.len(),
        detections: records.len(),
        identities,
        latency,
        exposure_lag_s: cfg.exposure.window_s + (per_frame_ms + exposure_ms) / 1e3,
        session_exposure: session_means(&exposures),
        exposure_records: exposures.len(),
        eval,
    };
    Ok(RunOutput {
        associations: records,
        exposures,
        fields,
        report,
    })
}
