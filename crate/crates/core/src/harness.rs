//! Evaluation sweeps and latency benchmarks over lab-replica scenes.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{AdapterChoice, PipelineConfig};
use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::pipeline::{run, StageLatencies};
use crate::reid::ReidMode;
use crate::scenario::lab_replica;

/// Association variants compared by [`reid_sweep`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    Full,
    DistanceOnly,
    AdapterOff,
}

impl Variant {
    pub const ALL: [Variant; 3] = [Variant::Full, Variant::DistanceOnly, Variant::AdapterOff];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::DistanceOnly => "distance-only",
            Variant::AdapterOff => "adapter-off",
        }
    }

    fn configure(self, cfg: &mut PipelineConfig) {
        let (mode, adapter) = match self {
            Variant::Full => (ReidMode::Full, AdapterChoice::Analytic),
            Variant::DistanceOnly => (ReidMode::DistanceOnly, AdapterChoice::Analytic),
            Variant::AdapterOff => (ReidMode::Full, AdapterChoice::Off),
        };
        cfg.reid.mode = mode;
        cfg.adapter.kind = adapter;
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub users: usize,
    pub seed: u64,
    pub variant: Variant,
    pub reid_f1: f64,
    pub cluster_count_accuracy: f64,
    pub localization_mae_m: f64,
}

/// Runs every variant on `lab_replica(users, seed)` for each combination.
/// Rows are ordered by users, seed, variant.
pub fn reid_sweep(users: &[usize], seeds: &[u64], duration_s: f64) -> Result<Vec<SweepRow>> {
    let jobs: Vec<(usize, u64)> = users.iter().flat_map(|&u| seeds.iter().map(move |&s| (u, s))).collect();
    let rows: Vec<Vec<SweepRow>> = jobs
        .par_iter()
        .map(|&(u, seed)| {
            let mut cfg = lab_replica(u, seed)?;
            cfg.duration_s = duration_s;
            let data = Dataset::simulate(&cfg)?;
            Variant::ALL
                .iter()
                .map(|&variant| {
                    let mut d = data.clone();
                    variant.configure(&mut d.config);
                    let out = run(&d)?;
                    let e = out.report.eval.expect("simulated datasets carry ground truth");
                    Ok(SweepRow {
                        users: u,
                        seed,
                        variant,
                        reid_f1: e.reid_f1,
                        cluster_count_accuracy: e.cluster_count_accuracy,
                        localization_mae_m: e.localization_mae_m,
                    })
                })
                .collect()
        })
        .collect::<Result<_>>()?;
    Ok(rows.into_iter().flatten().collect())
}

/// Mean F1 of one variant at one user count.
pub fn mean_f1(rows: &[SweepRow], users: usize, variant: Variant) -> Option<f64> {
    let v: Vec<f64> = rows
        .iter()
        .filter(|r| r.users == users && r.variant == variant)
        .map(|r| r.reid_f1)
        .collect();
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

/// `users,variant,mean_f1,runs` rows, one per user count and variant.
pub fn write_sweep_csv(path: &Path, rows: &[SweepRow]) -> Result<()> {
    let err = |e: csv::Error| Error::Data(format!("{}: {e}", path.display()));
    let mut w = csv::Writer::from_path(path).map_err(err)?;
    w.write_record(["users", "variant", "mean_f1", "runs"]).map_err(err)?;
    let mut users: Vec<usize> = rows.iter().map(|r| r.users).collect();
    users.dedup();
    for u in users {
        for v in Variant::ALL {
            let runs = rows.iter().filter(|r| r.users == u && r.variant == v).count();
            if let Some(f1) = mean_f1(rows, u, v) {
                w.write_record([u.to_string(), v.name().to_string(), f1.to_string(), runs.to_string()])
                    .map_err(err)?;
            }
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub users: usize,
    pub frames: usize,
    pub seed: u64,
    pub latency: StageLatencies,
}

/// Simulates `frames` frames of a lab scene with `users` workers and times
/// the full pipeline on them. Simulation time is not counted.
pub fn bench(cfg: &PipelineConfig, frames: usize) -> Result<BenchReport> {
    let mut cfg = cfg.clone();
    cfg.duration_s = frames as f64 * cfg.chirp.frame_period();
    let data = Dataset::simulate(&cfg)?;
    let out = run(&data)?;
    Ok(BenchReport {
        users: cfg.workers.len(),
        frames: out.report.frames,
        seed: cfg.seed,
        latency: out.report.latency,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sweep_rows_cover_every_variant() {
        let rows = reid_sweep(&[2], &[1], 2.0).unwrap();
        assert_eq!(rows.len(), 3);
        assert_eq!(rows.iter().map(|r| r.variant).collect::<Vec<_>>(), Variant::ALL.to_vec());
        assert!(rows.iter().all(|r| (0.0..=1.0).contains(&r.reid_f1)));
        assert_eq!(mean_f1(&rows, 2, Variant::Full), Some(rows[0].reid_f1));
        assert_eq!(mean_f1(&rows, 3, Variant::Full), None);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("f1.csv");
        write_sweep_csv(&p, &rows).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        assert_eq!(text.lines().count(), 4);
        assert!(text.lines().nth(2).unwrap().starts_with("2,distance-only,"));
    }

    #[test]
    fn bench_counts_frames() {
        let cfg = lab_replica(2, 0).unwrap();
        let b = bench(&cfg, 30).unwrap();
        assert_eq!(b.frames, 30);
        assert_eq!(b.users, 2);
        assert_eq!(b.latency.adaptation.samples, 30);
    }
}
