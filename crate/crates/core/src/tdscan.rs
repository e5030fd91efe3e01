//! Per-radar user localization: Doppler band filtering, windowed density
//! clustering and centroid track association.
//!
//! Each radar runs its own [`Tdscan`] instance. Every frame, the instance
//! filters the new point cloud to the human micro-motion Doppler band, pools
//! it with the previous `window_frames - 1` frames, clusters the pooled points
//! in the ground plane and matches cluster centroids to existing tracks.

use std::collections::VecDeque;

use ndarray::Array2;

use crate::assignment::gated_assignment;
use crate::error::{Error, Result};
use crate::geometry::Vec2;
use crate::radar_sim::{PointCloudFrame, RadarId, RadarPoint};

pub type LocalId = u32;

/// Radial speed band kept by the filter, `tau_min < |v| < tau_max`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DopplerBand {
    pub tau_min: f64,
    pub tau_max: f64,
}

impl Default for DopplerBand {
    fn default() -> Self {
        Self {
            tau_min: 0.05,
            tau_max: 1.0,
        }
    }
}

impl DopplerBand {
    pub fn new(tau_min: f64, tau_max: f64) -> Result<Self> {
        if !(0.0 <= tau_min && tau_min < tau_max) {
            return Err(Error::Config(format!(
                "Doppler band requires 0 <= tau_min < tau_max, got ({tau_min}, {tau_max})"
            )));
        }
        Ok(Self { tau_min, tau_max })
    }

    pub fn contains(&self, doppler: f64) -> bool {
        let v = doppler.abs();
        self.tau_min < v && v < self.tau_max
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClusterParams {
    /// Neighborhood radius, meters.
    pub epsilon: f64,
    /// Neighbors (including the point itself) needed for a core point.
    pub min_pts: usize,
    pub window_frames: usize,
    /// Largest centroid displacement accepted when extending a track.
    pub max_assoc_dist: f64,
    /// Tracks matched in fewer windows than this are provisional.
    pub min_track_frames: u32,
    /// Tracks missed for more consecutive windows than this are dropped.
    pub max_missed: u32,
}

impl Default for ClusterParams {
    fn default() -> Self {
        Self {
            epsilon: 0.75,
            min_pts: 100,
            window_frames: 10,
            max_assoc_dist: 1.0,
            min_track_frames: 3,
            max_missed: 10,
        }
    }
}

impl ClusterParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0) || self.min_pts < 1 || self.window_frames < 1 {
            return Err(Error::Config(
                "tdscan requires epsilon > 0, min_pts >= 1 and window_frames >= 1".into(),
            ));
        }
        if !(self.max_assoc_dist > 0.0) {
            return Err(Error::Config("tdscan.max_assoc_dist must be > 0".into()));
        }
        Ok(())
    }
}

/// One density cluster in the ground plane.
#[derive(Debug, Clone, PartialEq)]
pub struct UserCluster {
    /// Indices into the clustered point set, ascending.
    pub members: Vec<usize>,
    pub centroid: Vec2,
    pub point_count: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Track {
    pub local_id: LocalId,
    pub radar_id: RadarId,
    /// `(timestamp, centroid)` with strictly increasing timestamps.
    pub history: Vec<(f64, Vec2)>,
    /// Windows in which the track was matched.
    pub age_frames: u32,
    /// Consecutive windows without a match.
    pub missed_frames: u32,
}

impl Track {
    pub fn position(&self) -> Vec2 {
        self.history.last().map(|h| h.1).unwrap_or(Vec2::ZERO)
    }

    pub fn matched(&self) -> bool {
        self.missed_frames == 0
    }
}

/// Points whose absolute radial velocity lies inside the band, order preserved.
pub fn doppler_filter(frame: &PointCloudFrame, band: &DopplerBand) -> PointCloudFrame {
    PointCloudFrame {
        radar_id: frame.radar_id,
        timestamp_s: frame.timestamp_s,
        points: frame
            .points
            .iter()
            .filter(|p| band.contains(p.doppler))
            .copied()
            .collect(),
    }
}

/// Union of the points of the last `w` frames.
pub fn accumulate_window(frames: &[PointCloudFrame], w: usize) -> Result<Vec<RadarPoint>> {
    if let Some(first) = frames.first() {
        if let Some(bad) = frames.iter().find(|f| f.radar_id != first.radar_id) {
            return Err(Error::Data(format!(
                "window mixes radars {} and {}",
                first.radar_id, bad.radar_id
            )));
        }
    }
    let start = frames.len().saturating_sub(w);
    Ok(frames[start..]
        .iter()
        .flat_map(|f| f.points.iter().copied())
        .collect())
}

/// Uniform grid over the plane with cells of side `epsilon`.
struct Grid {
    cell: f64,
    buckets: std::collections::HashMap<(i64, i64), Vec<usize>>,
}

impl Grid {
    fn new(points: &[Vec2], cell: f64) -> Self {
        let mut buckets: std::collections::HashMap<(i64, i64), Vec<usize>> =
            std::collections::HashMap::new();
        for (i, p) in points.iter().enumerate() {
            buckets.entry(Self::key(*p, cell)).or_default().push(i);
        }
        Self { cell, buckets }
    }

    fn key(p: Vec2, cell: f64) -> (i64, i64) {
        ((p.x / cell).floor() as i64, (p.y / cell).floor() as i64)
    }

    fn neighbors(&self, points: &[Vec2], i: usize, eps: f64, out: &mut Vec<usize>) {
        out.clear();
        let (kx, ky) = Self::key(points[i], self.cell);
        let eps2 = eps * eps;
        for dx in -1..=1 {
            for dy in -1..=1 {
                if let Some(b) = self.buckets.get(&(kx + dx, ky + dy)) {
                    for &j in b {
                        let d = points[j] - points[i];
                        if d.x * d.x + d.y * d.y <= eps2 {
                            out.push(j);
                        }
                    }
                }
            }
        }
    }
}

/// Density clustering in the plane.
///
/// A point is a core point when at least `min_pts` points (itself included)
/// lie within `epsilon`. Clusters are the connected components of core points,
/// numbered by their lowest core index; a non-core point within `epsilon` of a
/// core point joins the lowest-numbered such cluster, and everything else is
/// noise.
pub fn cluster(points: &[Vec2], params: &ClusterParams) -> Vec<UserCluster> {
    let n = points.len();
    if n < params.min_pts {
        return Vec::new();
    }
    let eps = params.epsilon;
    let grid = Grid::new(points, eps);
    let mut nb = Vec::new();
    let mut core = vec![false; n];
    for (i, c) in core.iter_mut().enumerate() {
        grid.neighbors(points, i, eps, &mut nb);
        *c = nb.len() >= params.min_pts;
    }

    const UNASSIGNED: usize = usize::MAX;
    let mut label = vec![UNASSIGNED; n];
    let mut clusters = Vec::new();
    let mut queue = VecDeque::new();
    for seed in 0..n {
        if !core[seed] || label[seed] != UNASSIGNED {
            continue;
        }
        let id = clusters.len();
        label[seed] = id;
        queue.push_back(seed);
        let mut members = vec![seed];
        while let Some(i) = queue.pop_front() {
            grid.neighbors(points, i, eps, &mut nb);
            for &j in &nb {
                if label[j] != UNASSIGNED {
                    continue;
                }
                label[j] = id;
                members.push(j);
                if core[j] {
                    queue.push_back(j);
                }
            }
        }
        members.sort_unstable();
        clusters.push(members);
    }
    clusters
        .into_iter()
        .map(|members| {
            let sum = members.iter().fold(Vec2::ZERO, |acc, &i| acc + points[i]);
            let count = members.len();
            UserCluster {
                centroid: sum * (1.0 / count as f64),
                point_count: count,
                members,
            }
        })
        .collect()
}

/// Matches clusters to tracks by minimum total centroid distance, gated at
/// `params.max_assoc_dist`. Unmatched clusters start tracks with fresh ids
/// drawn from `next_id`; unmatched tracks count a miss.
pub fn associate_tracks(
    tracks: &mut Vec<Track>,
    clusters: &[UserCluster],
    radar_id: RadarId,
    t: f64,
    params: &ClusterParams,
    next_id: &mut LocalId,
) -> Result<Vec<Option<usize>>> {
    let cost = Array2::from_shape_fn((tracks.len(), clusters.len()), |(i, j)| {
        tracks[i].position().distance(clusters[j].centroid)
    });
    let assignment = gated_assignment(&cost, params.max_assoc_dist)?;
    let mut cluster_of_track = vec![None; tracks.len()];
    let mut claimed = vec![false; clusters.len()];
    for &(ti, ci) in &assignment.pairs {
        cluster_of_track[ti] = Some(ci);
        claimed[ci] = true;
    }
    for (track, matched) in tracks.iter_mut().zip(&cluster_of_track) {
        match matched {
            Some(ci) => {
                if track.history.last().is_none_or(|h| t > h.0) {
                    track.history.push((t, clusters[*ci].centroid));
                }
                track.age_frames += 1;
                track.missed_frames = 0;
            }
            None => track.missed_frames += 1,
        }
    }
    for (ci, c) in clusters.iter().enumerate() {
        if claimed[ci] {
            continue;
        }
        tracks.push(Track {
            local_id: *next_id,
            radar_id,
            history: vec![(t, c.centroid)],
            age_frames: 1,
            missed_frames: 0,
        });
        cluster_of_track.push(Some(ci));
        *next_id += 1;
    }
    Ok(cluster_of_track)
}

/// Drops provisional tracks that are currently unmatched and tracks missed
/// for more than `max_missed` consecutive windows.
pub fn prune_tracks(tracks: Vec<Track>, min_track_frames: u32, max_missed: u32) -> Vec<Track> {
    tracks
        .into_iter()
        .filter(|t| {
            let provisional_and_lost = t.age_frames < min_track_frames && !t.matched();
            !provisional_and_lost && t.missed_frames <= max_missed
        })
        .collect()
}

/// `1 - |detected - actual| / actual`, clamped at 0.
pub fn cluster_count_accuracy(detected: usize, actual: usize) -> Result<f64> {
    if actual == 0 {
        return Err(Error::Domain("actual cluster count must be >= 1".into()));
    }
    let err = (detected as f64 - actual as f64).abs() / actual as f64;
    Ok((1.0 - err).max(0.0))
}

/// A confirmed track observed in the current window.
#[derive(Debug, Clone, PartialEq)]
pub struct TrackReport {
    pub radar_id: RadarId,
    pub local_id: LocalId,
    pub timestamp_s: f64,
    /// Local-frame centroid, meters.
    pub centroid: Vec2,
    pub age_frames: u32,
    /// The window points that formed the track's cluster.
    pub points: Vec<RadarPoint>,
}

/// Streaming per-radar localizer.
#[derive(Debug, Clone)]
pub struct Tdscan {
    radar_id: RadarId,
    band: DopplerBand,
    params: ClusterParams,
    window: VecDeque<PointCloudFrame>,
    tracks: Vec<Track>,
    next_id: LocalId,
}

impl Tdscan {
    pub fn new(radar_id: RadarId, band: DopplerBand, params: ClusterParams) -> Self {
        Self {
            radar_id,
            band,
            params,
            window: VecDeque::with_capacity(params.window_frames),
            tracks: Vec::new(),
            next_id: 1,
        }
    }

    pub fn tracks(&self) -> &[Track] {
        &self.tracks
    }

    /// Pools the window ending at `frame` and returns its clusters together
    /// with the pooled points.
    pub fn window_clusters(&mut self, frame: &PointCloudFrame) -> Result<(Vec<RadarPoint>, Vec<UserCluster>)> {
        if frame.radar_id != self.radar_id {
            return Err(Error::Data(format!(
                "frame from radar {} fed to localizer of radar {}",
                frame.radar_id, self.radar_id
            )));
        }
        if let Some(last) = self.window.back() {
            if !(frame.timestamp_s > last.timestamp_s) {
                return Err(Error::Data(format!(
                    "radar {}: timestamps not increasing ({} after {})",
                    self.radar_id, frame.timestamp_s, last.timestamp_s
                )));
            }
        }
        self.window.push_back(doppler_filter(frame, &self.band));
        while self.window.len() > self.params.window_frames {
            self.window.pop_front();
        }
        let frames: Vec<PointCloudFrame> = self.window.iter().cloned().collect();
        let pooled = accumulate_window(&frames, self.params.window_frames)?;
        let xy: Vec<Vec2> = pooled.iter().map(|p| p.xy()).collect();
        let clusters = cluster(&xy, &self.params);
        Ok((pooled, clusters))
    }

    /// Processes one frame and returns the confirmed tracks matched in this window.
    pub fn process(&mut self, frame: &PointCloudFrame) -> Result<Vec<TrackReport>> {
        let (pooled, clusters) = self.window_clusters(frame)?;
        let t = frame.timestamp_s;
        let mut tracks = std::mem::take(&mut self.tracks);
        let matches = associate_tracks(
            &mut tracks,
            &clusters,
            self.radar_id,
            t,
            &self.params,
            &mut self.next_id,
        )?;
        let mut reports = Vec::new();
        for (track, m) in tracks.iter().zip(&matches) {
            let Some(ci) = m else { continue };
            if track.age_frames < self.params.min_track_frames {
                continue;
            }
            let c = &clusters[*ci];
            reports.push(TrackReport {
                radar_id: self.radar_id,
                local_id: track.local_id,
                timestamp_s: t,
                centroid: c.centroid,
                age_frames: track.age_frames,
                points: c.members.iter().map(|&i| pooled[i]).collect(),
            });
        }
        self.tracks = prune_tracks(tracks, self.params.min_track_frames, self.params.max_missed);
        reports.sort_by_key(|r| r.local_id);
        Ok(reports)
    }
}
