use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1, Poisson, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{Activity, PointCloudFrame, RDHeatmap, RadarId, RadarPoint, RadarPose, Scene, WorkerId};
use crate::error::{Error, Result};
use crate::geometry::{wrap_pi, Vec2};

/// Body offsets are truncated to this radius around the worker position.
pub const BODY_RADIUS_M: f64 = 0.30;
const BODY_SIGMA_M: f64 = 0.12;
/// Tool points extend this far along the axis either side of the stroke position.
const TOOL_HALF_LENGTH_M: f64 = 0.12;
const TOOL_WIDTH_SIGMA_M: f64 = 0.02;
const BODY_RANGE_SIGMA_M: f64 = 0.10;
const TOOL_RANGE_SIGMA_M: f64 = 0.05;
const CLUTTER_RANGE_SIGMA_M: f64 = 0.04;
const CLUTTER_DOPPLER_SIGMA_MPS: f64 = 0.01;
/// Gain applied to a worker hidden behind a nearer one.
const OCCLUDED_GAIN: f64 = 0.1;
const MIN_PATH_LOSS_RANGE_M: f64 = 0.5;

/// Exact state of one worker, for evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthWorker {
    pub id: WorkerId,
    pub position: Vec2,
    pub activity: Activity,
    /// Radars that have the worker in view and unoccluded.
    pub visible_to: Vec<RadarId>,
}

/// Worker states at time `t`. Workers are quasi-static, so positions do not
/// depend on `t`.
pub fn ground_truth(scene: &Scene, _t: f64) -> Vec<GroundTruthWorker> {
    let vis: Vec<Vec<bool>> = (0..scene.radars.len()).map(|r| visibility(scene, r)).collect();
    scene
        .workers
        .iter()
        .enumerate()
        .map(|(k, w)| GroundTruthWorker {
            id: w.id,
            position: w.position,
            activity: w.activity,
            visible_to: scene
                .radars
                .iter()
                .enumerate()
                .filter(|(r, _)| vis[*r][k])
                .map(|(_, p)| p.id)
                .collect(),
        })
        .collect()
}

/// For each worker, whether radar `radar_index` observes it (in view and not
/// hidden behind a nearer worker).
pub fn visibility(scene: &Scene, radar_index: usize) -> Vec<bool> {
    let pose = &scene.radars[radar_index];
    let in_view: Vec<bool> = scene
        .workers
        .iter()
        .map(|w| pose.in_field_of_view(w.position))
        .collect();
    (0..scene.workers.len())
        .map(|k| in_view[k] && !(scene.sim.occlusion && occluded(scene, pose, k, &in_view)))
        .collect()
}

fn occluded(scene: &Scene, pose: &RadarPose, k: usize, in_view: &[bool]) -> bool {
    let target = scene.workers[k].position;
    let r_k = target.distance(pose.position);
    let los_k = pose.line_of_sight(target);
    scene.workers.iter().enumerate().any(|(j, other)| {
        if j == k || !in_view[j] {
            return false;
        }
        let r_j = other.position.distance(pose.position);
        if r_j >= r_k {
            return false;
        }
        let half = (scene.sim.body_half_width_m / r_j).atan();
        wrap_pi(pose.line_of_sight(other.position) - los_k).abs() < half
    })
}

fn frame_seed(scene_seed: u64, radar_id: RadarId, t: f64) -> u64 {
    // splitmix64 over the inputs
    let mut z = scene_seed
        ^ (radar_id as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)
        ^ t.to_bits().rotate_left(17);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn path_loss(range: f64) -> f64 {
    1.0 / range.max(MIN_PATH_LOSS_RANGE_M).powi(2)
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

fn truncated_normal(rng: &mut ChaCha8Rng, sigma: f64, limit: f64) -> f64 {
    loop {
        let v = sigma * normal(rng);
        if v.abs() <= limit {
            return v;
        }
    }
}

/// Deposits a Gaussian energy blob of total `power` centered at
/// (`range_m`, `velocity`), with optional multiplicative speckle.
#[allow(clippy::too_many_arguments)]
fn deposit(
    hm: &mut RDHeatmap,
    range_m: f64,
    sigma_range_m: f64,
    velocity: f64,
    sigma_velocity: f64,
    power: f64,
    speckle: f64,
    rng: &mut ChaCha8Rng,
) {
    let (nd, nr) = hm.data.dim();
    let rc = range_m / hm.range_resolution_m - 0.5;
    let dc = velocity / hm.doppler_resolution_mps + (nd / 2) as f64;
    let sr = (sigma_range_m / hm.range_resolution_m).max(0.5);
    let sd = (sigma_velocity / hm.doppler_resolution_mps).max(0.5);
    let weights = |center: f64, sigma: f64| -> (i64, Vec<f64>) {
        let half = (4.0 * sigma).ceil() as i64 + 1;
        let lo = center.round() as i64 - half;
        let w: Vec<f64> = (0..=2 * half)
            .map(|i| {
                let z = (lo + i) as f64 - center;
                (-0.5 * z * z / (sigma * sigma)).exp()
            })
            .collect();
        let s: f64 = w.iter().sum();
        (lo, w.into_iter().map(|v| v / s).collect())
    };
    let (r_lo, wr) = weights(rc, sr);
    let (d_lo, wd) = weights(dc, sd);
    for (i, &a) in wd.iter().enumerate() {
        let d = d_lo + i as i64;
        if d < 0 || d >= nd as i64 {
            continue;
        }
        for (j, &b) in wr.iter().enumerate() {
            let r = r_lo + j as i64;
            if r < 0 || r >= nr as i64 {
                continue;
            }
            let mut e = power * a * b;
            if speckle > 0.0 {
                e *= (speckle * normal(rng) - 0.5 * speckle * speckle).exp();
            }
            hm.data[[d as usize, r as usize]] += e as f32;
        }
    }
}

/// Renders the point cloud and range-Doppler matrix of radar `radar_index` at time `t`.
pub fn simulate_frame(
    scene: &Scene,
    radar_index: usize,
    t: f64,
) -> Result<(PointCloudFrame, RDHeatmap)> {
    let pose = scene
        .radars
        .get(radar_index)
        .ok_or_else(|| Error::Domain(format!("radar index {radar_index} out of range")))?;
    if !(t >= 0.0) {
        return Err(Error::Domain(format!("time must be non-negative, got {t}")));
    }
    let cfg = &scene.chirp;
    let sim = &scene.sim;
    let mut rng = ChaCha8Rng::seed_from_u64(frame_seed(scene.rng_seed, pose.id, t));
    let mut hm = RDHeatmap::zeros(pose.id, t, cfg);
    if sim.noise_floor > 0.0 {
        for v in hm.data.iter_mut() {
            let e: f64 = Exp1.sample(&mut rng);
            *v = (sim.noise_floor * e) as f32;
        }
    }
    let mut points = Vec::new();
    let jitter = |rng: &mut ChaCha8Rng| {
        Vec2::new(
            truncated_normal(rng, sim.position_jitter_m, 3.0 * sim.position_jitter_m),
            truncated_normal(rng, sim.position_jitter_m, 3.0 * sim.position_jitter_m),
        )
    };

    let in_view: Vec<bool> = scene
        .workers
        .iter()
        .map(|w| pose.in_field_of_view(w.position))
        .collect();
    for (k, w) in scene.workers.iter().enumerate() {
        if !in_view[k] {
            continue;
        }
        let gain = if sim.occlusion && occluded(scene, pose, k, &in_view) {
            OCCLUDED_GAIN
        } else {
            1.0
        };
        let range = w.position.distance(pose.position);
        let los = pose.line_of_sight(w.position);
        // azimuthal projection only, without the side of the stroke
        let projection = (w.motion_axis - los).cos().abs();
        let (stroke, speed) = w.stroke(t);
        let tool_radial = speed * projection;
        let body_radial = sim.body_coupling * tool_radial;
        let loss = path_loss(range) * gain;

        deposit(
            &mut hm,
            range,
            BODY_RANGE_SIGMA_M,
            body_radial,
            sim.body_sway_mps,
            loss,
            sim.speckle_sigma,
            &mut rng,
        );
        deposit(
            &mut hm,
            range + stroke * projection,
            TOOL_RANGE_SIGMA_M,
            tool_radial,
            w.activity.tool_doppler_spread(),
            loss * sim.tool_power_ratio,
            sim.speckle_sigma,
            &mut rng,
        );

        let density = (sim.density_ref_range_m / range).min(1.0) * gain;
        let n_body = (sim.body_points as f64 * density).round() as usize;
        let n_tool = (sim.tool_points as f64 * density).round() as usize;
        for _ in 0..n_body {
            let off = loop {
                let o = Vec2::new(BODY_SIGMA_M * normal(&mut rng), BODY_SIGMA_M * normal(&mut rng));
                if o.norm() <= BODY_RADIUS_M {
                    break o;
                }
            };
            let g = w.position + off + jitter(&mut rng);
            let l = pose.to_local(g);
            points.push(RadarPoint {
                x: l.x,
                y: l.y,
                z: rng.random_range(0.4..1.7) - pose.mount_height,
                doppler: body_radial + sim.body_sway_mps * normal(&mut rng),
                power: loss * (sim.speckle_sigma * normal(&mut rng)).exp(),
            });
        }
        let axis = w.axis_direction();
        let across = axis.rotate(std::f64::consts::FRAC_PI_2);
        for _ in 0..n_tool {
            let along = stroke + rng.random_range(-TOOL_HALF_LENGTH_M..TOOL_HALF_LENGTH_M);
            let side = truncated_normal(&mut rng, TOOL_WIDTH_SIGMA_M, 2.5 * TOOL_WIDTH_SIGMA_M);
            let g = w.position + axis * along + across * side + jitter(&mut rng);
            let l = pose.to_local(g);
            points.push(RadarPoint {
                x: l.x,
                y: l.y,
                z: rng.random_range(0.8..1.2) - pose.mount_height,
                doppler: tool_radial + w.activity.tool_doppler_spread() * normal(&mut rng),
                power: loss * sim.tool_power_ratio * (sim.speckle_sigma * normal(&mut rng)).exp(),
            });
        }
    }

    for c in &scene.clutter {
        if !pose.in_field_of_view(c.position) {
            continue;
        }
        let range = c.position.distance(pose.position);
        let loss = path_loss(range) * c.rcs;
        deposit(
            &mut hm,
            range,
            CLUTTER_RANGE_SIGMA_M,
            0.0,
            CLUTTER_DOPPLER_SIGMA_MPS,
            loss,
            0.0,
            &mut rng,
        );
        for _ in 0..sim.clutter_points {
            let g = c.position
                + Vec2::new(
                    truncated_normal(&mut rng, 0.05, 0.15),
                    truncated_normal(&mut rng, 0.05, 0.15),
                );
            let l = pose.to_local(g);
            points.push(RadarPoint {
                x: l.x,
                y: l.y,
                z: rng.random_range(0.0..1.0) - pose.mount_height,
                doppler: CLUTTER_DOPPLER_SIGMA_MPS * normal(&mut rng),
                power: loss,
            });
        }
    }

    if sim.ghost_points > 0.0 {
        let n: f64 = Poisson::new(sim.ghost_points)
            .map_err(|e| Error::Config(format!("ghost_points: {e}")))?
            .sample(&mut rng);
        let half = 0.5 * pose.fov_azimuth.min(std::f64::consts::TAU);
        for _ in 0..n as usize {
            let range = rng.random_range(0.5..pose.max_range.max(0.6));
            let bearing = rng.random_range(-half..=half);
            let l = Vec2::from_angle(std::f64::consts::FRAC_PI_2 + bearing) * range;
            points.push(RadarPoint {
                x: l.x,
                y: l.y,
                z: rng.random_range(-1.0..1.0),
                doppler: rng.random_range(-3.0..3.0),
                power: 10.0 * sim.noise_floor,
            });
        }
    }

    Ok((
        PointCloudFrame {
            radar_id: pose.id,
            timestamp_s: t,
            points,
        },
        hm,
    ))
}

/// Radius around a worker's position that contains all of its points.
pub fn worker_spread_radius(scene: &Scene, worker: &super::WorkerSpec) -> f64 {
    BODY_RADIUS_M.max(
        (worker.amplitude + TOOL_HALF_LENGTH_M).hypot(2.5 * TOOL_WIDTH_SIGMA_M),
    ) + 3.0 * std::f64::consts::SQRT_2 * scene.sim.position_jitter_m
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::radar_sim::{ChirpConfig, SimParams, WorkerSpec};
    use std::f64::consts::{FRAC_PI_2, PI};

    fn radar(id: RadarId, position: Vec2, boresight: f64) -> RadarPose {
        RadarPose {
            id,
            position,
            yaw: boresight - FRAC_PI_2,
            fov_azimuth: 2.0 * PI / 3.0,
            max_range: 9.0,
            mount_height: 1.0,
        }
    }

    fn worker(position: Vec2, activity: Activity) -> WorkerSpec {
        WorkerSpec {
            id: 1,
            position,
            activity,
            motion_axis: 0.0,
            amplitude: 0.08,
            frequency_hz: 1.1,
            phase: 0.0,
        }
    }

    fn scene(workers: Vec<WorkerSpec>, radars: Vec<RadarPose>) -> Scene {
        Scene {
            chirp: ChirpConfig::default(),
            sim: SimParams::default(),
            radars,
            workers,
            clutter: vec![],
            rng_seed: 11,
        }
    }

    #[test]
    fn empty_scene_is_silent() {
        let mut s = scene(vec![], vec![radar(1, Vec2::ZERO, FRAC_PI_2)]);
        s.sim.noise_floor = 0.0;
        s.sim.ghost_points = 0.0;
        let (pc, hm) = simulate_frame(&s, 0, 0.3).unwrap();
        assert!(pc.points.is_empty());
        assert!(hm.data.iter().all(|&v| v == 0.0));
        assert_eq!(hm.data.dim(), (182, 256));
    }

    #[test]
    fn boresight_worker_peaks_in_its_range_bin() {
        let mut s = scene(
            vec![worker(Vec2::new(0.0, 2.7), Activity::Grinding)],
            vec![radar(1, Vec2::ZERO, FRAC_PI_2)],
        );
        s.sim.speckle_sigma = 0.0;
        s.sim.noise_floor = 0.0;
        let (_, hm) = simulate_frame(&s, 0, 0.0).unwrap();
        let profile = hm.range_profile();
        let peak = (0..profile.len())
            .max_by(|&a, &b| profile[a].total_cmp(&profile[b]))
            .unwrap();
        assert_eq!(Some(peak), s.chirp.range_to_bin(2.7));
        assert_eq!(peak, 72);
    }

    #[test]
    fn deterministic_given_seed() {
        let s = scene(
            vec![worker(Vec2::new(0.5, 3.0), Activity::Chipping)],
            vec![radar(1, Vec2::ZERO, FRAC_PI_2)],
        );
        let a = simulate_frame(&s, 0, 1.2).unwrap();
        let b = simulate_frame(&s, 0, 1.2).unwrap();
        assert_eq!(a, b);
        let mut s2 = s.clone();
        s2.rng_seed = 12;
        assert_ne!(simulate_frame(&s2, 0, 1.2).unwrap().0, a.0);
    }

    #[test]
    fn worker_points_stay_within_spread_radius() {
        let mut s = scene(
            vec![worker(Vec2::new(0.5, 3.0), Activity::Grinding)],
            vec![radar(1, Vec2::new(0.2, -0.3), 1.4)],
        );
        s.sim.ghost_points = 0.0;
        let radius = worker_spread_radius(&s, &s.workers[0]);
        for i in 0..30 {
            let (pc, _) = simulate_frame(&s, 0, i as f64 * 0.1).unwrap();
            assert!(!pc.points.is_empty());
            for p in &pc.points {
                let g = s.radars[0].to_global(p.xy());
                assert!(g.distance(s.workers[0].position) <= radius + 1e-9);
                assert!(p.is_finite());
            }
        }
    }

    #[test]
    fn worker_energy_falls_with_range() {
        let mut prev = f64::INFINITY;
        for &d in &[1.0, 2.0, 3.5, 5.0, 7.5] {
            let mut s = scene(
                vec![worker(Vec2::new(0.0, d), Activity::Polishing)],
                vec![radar(1, Vec2::ZERO, FRAC_PI_2)],
            );
            s.sim.noise_floor = 0.0;
            s.sim.speckle_sigma = 0.0;
            let (_, hm) = simulate_frame(&s, 0, 0.4).unwrap();
            let e = hm.total_energy();
            assert!(e <= prev, "energy rose at {d} m");
            prev = e;
        }
    }

    #[test]
    fn occluded_worker_is_not_visible() {
        let mut near = worker(Vec2::new(0.0, 2.0), Activity::Grinding);
        near.id = 1;
        let mut far = worker(Vec2::new(0.05, 4.0), Activity::Polishing);
        far.id = 2;
        let s = scene(vec![near, far], vec![radar(1, Vec2::ZERO, FRAC_PI_2)]);
        assert_eq!(visibility(&s, 0), vec![true, false]);
        let gt = ground_truth(&s, 0.0);
        assert_eq!(gt[0].visible_to, vec![1]);
        assert!(gt[1].visible_to.is_empty());
    }

    #[test]
    fn ground_truth_is_static() {
        let s = scene(
            vec![worker(Vec2::new(1.0, 2.0), Activity::Chipping)],
            vec![radar(1, Vec2::ZERO, FRAC_PI_2)],
        );
        let a = ground_truth(&s, 0.0);
        let b = ground_truth(&s, 7.3);
        assert_eq!(a, b);
        assert_eq!(a.len(), s.workers.len());
        assert_eq!(a[0].position, Vec2::new(1.0, 2.0));
        assert_eq!(a[0].activity, Activity::Chipping);
    }

    #[test]
    fn negative_time_rejected() {
        let s = scene(vec![], vec![radar(1, Vec2::ZERO, FRAC_PI_2)]);
        assert!(simulate_frame(&s, 0, -0.1).is_err());
        assert!(simulate_frame(&s, 3, 0.0).is_err());
    }
}
