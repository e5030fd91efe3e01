//! Dataset directory produced by `simulate` and consumed by `run`.
//!
//! ```text
//! config.toml                 scene and pipeline settings (surveyed poses)
//! radar_<id>.points.jsonl     one point cloud frame per line
//! radar_<id>.rdhm             heatmap stream
//! pm.csv                      PM readings
//! ground_truth.jsonl          worker states per frame (optional)
//! radar_poses.json            poses the simulator rendered with (optional)
//! ```

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::PipelineConfig;
use crate::error::{Error, Result};
use crate::exposure::PMSensorReading;
use crate::formats;
use crate::radar_sim::{ground_truth, simulate_frame, GroundTruthWorker, PointCloudFrame, RDHeatmap, RadarId, RadarPose};
use crate::scenario::simulate_pm;

pub const CONFIG_FILE: &str = "config.toml";
pub const PM_FILE: &str = "pm.csv";
pub const TRUTH_FILE: &str = "ground_truth.jsonl";
pub const POSES_FILE: &str = "radar_poses.json";

pub fn points_file(id: RadarId) -> String {
    format!("radar_{id}.points.jsonl")
}

pub fn heatmap_file(id: RadarId) -> String {
    format!("radar_{id}.rdhm")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthFrame {
    pub timestamp_s: f64,
    pub workers: Vec<GroundTruthWorker>,
}

/// Simulator state the pipeline never sees.
#[derive(Debug, Clone, PartialEq)]
pub struct Truth {
    pub poses: Vec<RadarPose>,
    pub frames: Vec<TruthFrame>,
}

impl Truth {
    pub fn pose(&self, id: RadarId) -> Option<&RadarPose> {
        self.poses.iter().find(|p| p.id == id)
    }
}

/// Observations of one radar.
#[derive(Debug, Clone, PartialEq)]
pub struct RadarStream {
    pub frames: Vec<PointCloudFrame>,
    pub heatmaps: Vec<RDHeatmap>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub config: PipelineConfig,
    pub radars: BTreeMap<RadarId, RadarStream>,
    pub pm: Vec<PMSensorReading>,
    pub truth: Option<Truth>,
}

impl Dataset {
    /// Renders the configured scene for `config.duration_s`.
    pub fn simulate(config: &PipelineConfig) -> Result<Self> {
        config.validate()?;
        let scene = config.scene()?;
        let n = config.frame_count();
        let period = config.chirp.frame_period();
        let streams: Vec<(RadarId, RadarStream)> = (0..scene.radars.len())
            .into_par_iter()
            .map(|ri| {
                let mut frames = Vec::with_capacity(n);
                let mut heatmaps = Vec::with_capacity(n);
                for k in 0..n {
                    let (f, h) = simulate_frame(&scene, ri, k as f64 * period)?;
                    frames.push(f);
                    heatmaps.push(h);
                }
                Ok((scene.radars[ri].id, RadarStream { frames, heatmaps }))
            })
            .collect::<Result<_>>()?;
        let truth = Truth {
            poses: scene.radars.clone(),
            frames: (0..n)
                .map(|k| {
                    let t = k as f64 * period;
                    TruthFrame { timestamp_s: t, workers: ground_truth(&scene, t) }
                })
                .collect(),
        };
        Ok(Self {
            config: config.clone(),
            radars: streams.into_iter().collect(),
            pm: simulate_pm(config, &scene)?,
            truth: Some(truth),
        })
    }

    pub fn frame_count(&self) -> usize {
        self.radars.values().map(|s| s.frames.len()).max().unwrap_or(0)
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let cfg_path = dir.join(CONFIG_FILE);
        std::fs::write(&cfg_path, self.config.to_toml()?).map_err(|e| Error::io(&cfg_path, e))?;
        for (id, s) in &self.radars {
            formats::write_jsonl(&dir.join(points_file(*id)), &s.frames)?;
            formats::write_rdhm(&dir.join(heatmap_file(*id)), &s.heatmaps)?;
        }
        formats::write_pm_csv(&dir.join(PM_FILE), &self.pm)?;
        if let Some(t) = &self.truth {
            formats::write_jsonl(&dir.join(TRUTH_FILE), &t.frames)?;
            formats::write_json(&dir.join(POSES_FILE), &t.poses)?;
        }
        Ok(())
    }

    /// Loads a dataset. `config` replaces the stored `config.toml` when given.
    pub fn read(dir: &Path, config: Option<PipelineConfig>) -> Result<Self> {
        if !dir.is_dir() {
            return Err(Error::Data(format!("dataset directory {} does not exist", dir.display())));
        }
        let config = match config {
            Some(c) => c,
            None => PipelineConfig::load(&dir.join(CONFIG_FILE))?,
        };
        let mut radars = BTreeMap::new();
        for r in &config.radars {
            let points = dir.join(points_file(r.id));
            let heat = dir.join(heatmap_file(r.id));
            let frames: Vec<PointCloudFrame> = formats::read_jsonl(&points)?;
            let records = formats::read_rdhm(&heat)?;
            check_stream(r.id, &frames, &records, &config, &points, &heat)?;
            let heatmaps = frames
                .iter()
                .zip(records)
                .map(|(f, data)| RDHeatmap {
                    radar_id: r.id,
                    timestamp_s: f.timestamp_s,
                    data,
                    range_resolution_m: config.chirp.range_resolution(),
                    doppler_resolution_mps: config.chirp.doppler_resolution(),
                })
                .collect();
            radars.insert(r.id, RadarStream { frames, heatmaps });
        }
        let pm_path = dir.join(PM_FILE);
        let pm = if pm_path.exists() { formats::read_pm_csv(&pm_path)? } else { Vec::new() };
        let truth_path = dir.join(TRUTH_FILE);
        let truth = if truth_path.exists() {
            Some(Truth {
                frames: formats::read_jsonl(&truth_path)?,
                poses: formats::read_json(&dir.join(POSES_FILE))?,
            })
        } else {
            None
        };
        Ok(Self { config, radars, pm, truth })
    }
}

fn check_stream(
    id: RadarId,
    frames: &[PointCloudFrame],
    records: &[Array2<f32>],
    config: &PipelineConfig,
    points: &PathBuf,
    heat: &PathBuf,
) -> Result<()> {
    if frames.len() != records.len() {
        return Err(Error::Data(format!(
            "{} has {} frames but {} has {}",
            points.display(),
            frames.len(),
            heat.display(),
            records.len()
        )));
    }
    if let Some(f) = frames.iter().find(|f| f.radar_id != id) {
        return Err(Error::Data(format!(
            "{}: frame at {} s belongs to radar {}, expected {id}",
            points.display(),
            f.timestamp_s,
            f.radar_id
        )));
    }
    let dims = (config.chirp.doppler_bins as usize, config.chirp.range_bins as usize);
    if let Some(h) = records.iter().find(|h| h.dim() != dims) {
        return Err(Error::Shape { expected: dims, actual: h.dim() });
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::lab_replica;

    #[test]
    fn simulate_rate_arithmetic() {
        let mut c = lab_replica(2, 1).unwrap();
        c.duration_s = 1.0;
        let d = Dataset::simulate(&c).unwrap();
        assert_eq!(d.frame_count(), 10);
        assert!(d.radars.values().all(|s| s.frames.len() == 10 && s.heatmaps.len() == 10));
        assert_eq!(d.truth.as_ref().unwrap().frames.len(), 10);
        assert_eq!(d.pm.len(), 4);
    }

    #[test]
    fn write_read_round_trip() {
        let mut c = lab_replica(2, 4).unwrap();
        c.duration_s = 0.5;
        let d = Dataset::simulate(&c).unwrap();
        let dir = tempfile::tempdir().unwrap();
        d.write(dir.path()).unwrap();
        let back = Dataset::read(dir.path(), None).unwrap();
        assert_eq!(back, d);
    }

    #[test]
    fn mismatched_streams_rejected() {
        let mut c = lab_replica(2, 4).unwrap();
        c.duration_s = 0.3;
        let mut d = Dataset::simulate(&c).unwrap();
        d.radars.get_mut(&1).unwrap().heatmaps.pop();
        let dir = tempfile::tempdir().unwrap();
        d.write(dir.path()).unwrap();
        assert!(matches!(Dataset::read(dir.path(), None), Err(Error::Data(_))));
        assert!(Dataset::read(&dir.path().join("missing"), None).is_err());
    }

    #[test]
    fn empty_dataset_round_trips() {
        let mut c = lab_replica(2, 4).unwrap();
        c.duration_s = 0.0;
        let d = Dataset::simulate(&c).unwrap();
        let dir = tempfile::tempdir().unwrap();
        d.write(dir.path()).unwrap();
        let back = Dataset::read(dir.path(), None).unwrap();
        assert_eq!(back.frame_count(), 0);
    }
}
