//! Lab-replica scenes and the synthetic dust model.
//!
//! The lab is a 6 m × 6 m floor watched by three radars (two corners and the
//! middle of the far wall) with one PM sensor per 3 m zone. Workers occupy
//! fixed stations; the first stations filled are far apart, later ones fill
//! the gaps, so the floor gets denser as more people work.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal};

use crate::config::{CalibrationConfig, PipelineConfig, PmSensorConfig, RadarConfig, WorkerConfig};
use crate::error::{Error, Result};
use crate::exposure::{PMSensorReading, PmLevels};
use crate::geometry::Vec2;
use crate::radar_sim::{Activity, Clutter, Scene};

pub const LAB_SIZE_M: f64 = 6.0;

/// Station centers in fill order.
pub const STATIONS: [(f64, f64); 6] = [
    (1.9, 2.1),
    (4.1, 3.6),
    (4.0, 1.9),
    (2.1, 3.9),
    (3.1, 2.9),
    (3.0, 4.9),
];
/// Workers stand within this distance of their station center.
const STATION_JITTER_M: f64 = 0.15;

pub fn lab_radars() -> Vec<RadarConfig> {
    let r = |id, x, y, yaw_deg| RadarConfig {
        id,
        position: Vec2::new(x, y),
        yaw_deg,
        fov_deg: 120.0,
        max_range_m: 9.0,
        mount_height_m: 1.2,
    };
    vec![r(1, 0.0, 0.0, -45.0), r(2, 6.0, 0.0, 45.0), r(3, 3.0, 6.5, 180.0)]
}

pub fn lab_pm_sensors() -> Vec<PmSensorConfig> {
    [(1.5, 1.5), (4.5, 1.5), (1.5, 4.5), (4.5, 4.5)]
        .iter()
        .enumerate()
        .map(|(i, &(x, y))| PmSensorConfig {
            id: format!("pm{}", i + 1),
            position: Vec2::new(x, y),
        })
        .collect()
}

fn worker(id: u32, station: (f64, f64), activity: Activity, rng: &mut ChaCha8Rng) -> WorkerConfig {
    let r = STATION_JITTER_M * rng.random::<f64>().sqrt();
    let a = rng.random_range(0.0..std::f64::consts::TAU);
    let (amplitude_m, frequency_hz) = match activity {
        Activity::Grinding => (rng.random_range(0.08..0.12), rng.random_range(1.6..2.4)),
        Activity::Chipping => (rng.random_range(0.10..0.14), rng.random_range(1.0..1.6)),
        Activity::Polishing => (rng.random_range(0.05..0.08), rng.random_range(1.0..1.5)),
    };
    WorkerConfig {
        id,
        position: Vec2::new(station.0 + r * a.cos(), station.1 + r * a.sin()),
        activity,
        motion_axis_deg: rng.random_range(0.0..180.0),
        amplitude_m,
        frequency_hz,
        phase_deg: rng.random_range(0.0..360.0),
    }
}

/// Lab scene with `users` workers (1 to 6), everything else seeded from `seed`.
pub fn lab_replica(users: usize, seed: u64) -> Result<PipelineConfig> {
    if !(1..=STATIONS.len()).contains(&users) {
        return Err(Error::Config(format!(
            "lab replica supports 1 to {} users, got {users}",
            STATIONS.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut activities = Activity::ALL.to_vec();
    activities.shuffle(&mut rng);
    let mut cfg = PipelineConfig {
        seed,
        duration_s: 20.0,
        radars: lab_radars(),
        clutter: vec![
            Clutter { position: Vec2::new(0.4, 3.2), rcs: 4.0 },
            Clutter { position: Vec2::new(5.6, 3.0), rcs: 4.0 },
        ],
        calibration: lab_calibration(),
        ..PipelineConfig::default()
    };
    cfg.workers = (0..users)
        .map(|k| worker(k as u32 + 1, STATIONS[k], activities[k % activities.len()], &mut rng))
        .collect();
    cfg.pm.sensors = lab_pm_sensors();
    cfg.validate()?;
    Ok(cfg)
}

/// Mounting error of hand-placed radars.
pub fn lab_calibration() -> CalibrationConfig {
    CalibrationConfig {
        position_sigma_m: 0.10,
        yaw_sigma_deg: 3.0,
    }
}

/// PM readings of every configured sensor at `cfg.pm.rate_hz` over
/// `[0, duration_s)`, ordered by time then sensor. Each worker is a source
/// of its activity's strength with inverse-square falloff; the source
/// strength drifts slowly and every reading carries log-normal noise.
pub fn simulate_pm(cfg: &PipelineConfig, scene: &Scene) -> Result<Vec<PMSensorReading>> {
    let pm = &cfg.pm;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x0D05_7000);
    let noise = LogNormal::new(0.0, pm.noise_sigma).map_err(|e| Error::Config(e.to_string()))?;
    let drift: Vec<f64> = scene.workers.iter().map(|_| rng.random_range(0.0..std::f64::consts::TAU)).collect();
    let n = (cfg.duration_s * pm.rate_hz).ceil() as usize;
    let mut out = Vec::with_capacity(n * pm.sensors.len());
    for k in 0..n {
        let t = k as f64 / pm.rate_hz;
        for s in &pm.sensors {
            let mut pm2_5 = pm.background;
            for (w, phase) in scene.workers.iter().zip(&drift) {
                let d = s.position.distance(w.position) / pm.decay_ref_m;
                let strength = w.activity.dust_source_strength() * (1.0 + 0.3 * (std::f64::consts::TAU * t / 60.0 + phase).sin());
                pm2_5 += strength / (1.0 + d * d);
            }
            out.push(PMSensorReading {
                sensor_id: s.id.clone(),
                position: s.position,
                timestamp_s: t,
                levels: PmLevels {
                    pm1: pm.pm1_ratio * pm2_5 * noise.sample(&mut rng),
                    pm2_5: pm2_5 * noise.sample(&mut rng),
                    pm10: pm.pm10_ratio * pm2_5 * noise.sample(&mut rng),
                },
            });
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::radar_sim::ground_truth;

    #[test]
    fn lab_scenes_are_valid_and_seeded() {
        for users in 1..=6 {
            let c = lab_replica(users, 3).unwrap();
            assert_eq!(c.workers.len(), users);
            assert_eq!(c.radars.len(), 3);
            c.scene().unwrap();
        }
        assert_eq!(lab_replica(4, 11).unwrap(), lab_replica(4, 11).unwrap());
        assert_ne!(lab_replica(4, 11).unwrap(), lab_replica(4, 12).unwrap());
        assert!(lab_replica(0, 1).is_err());
        assert!(lab_replica(7, 1).is_err());
    }

    #[test]
    fn every_worker_is_seen_by_some_radar() {
        for seed in 0..10 {
            let c = lab_replica(4, seed).unwrap();
            for w in ground_truth(&c.scene().unwrap(), 0.0) {
                assert!(!w.visible_to.is_empty(), "seed {seed}: worker {} unseen", w.id);
            }
        }
    }

    #[test]
    fn pm_counts_and_ordering() {
        let mut c = lab_replica(2, 5).unwrap();
        c.duration_s = 10.0;
        let rs = simulate_pm(&c, &c.scene().unwrap()).unwrap();
        assert_eq!(rs.len(), 10 * 4);
        assert!(rs.windows(2).all(|w| w[0].timestamp_s <= w[1].timestamp_s));
        assert!(rs.iter().all(|r| r.validate().is_ok()));
        assert_eq!(rs, simulate_pm(&c, &c.scene().unwrap()).unwrap());
    }

    #[test]
    fn dust_is_higher_near_grinding() {
        let mut c = lab_replica(1, 0).unwrap();
        c.pm.noise_sigma = 0.0;
        c.duration_s = 1.0;
        let mut levels = Vec::new();
        for a in Activity::ALL {
            c.workers[0].activity = a;
            let rs = simulate_pm(&c, &c.scene().unwrap()).unwrap();
            levels.push((a, rs[0].levels.pm2_5));
        }
        let get = |a| levels.iter().find(|l| l.0 == a).unwrap().1;
        assert!(get(Activity::Grinding) > get(Activity::Chipping));
        assert!(get(Activity::Chipping) > get(Activity::Polishing));

        let rs = simulate_pm(&c, &c.scene().unwrap()).unwrap();
        let w = c.workers[0].position;
        let near = rs.iter().min_by(|a, b| a.position.distance(w).total_cmp(&b.position.distance(w))).unwrap();
        let far = rs.iter().max_by(|a, b| a.position.distance(w).total_cmp(&b.position.distance(w))).unwrap();
        assert!(near.levels.pm2_5 > 2.0 * far.levels.pm2_5);
    }
}
