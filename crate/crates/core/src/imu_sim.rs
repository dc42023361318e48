//! Virtual IMU synthesis for placed sensors.
//!
//! A placement rides rigidly on its segment: `p_imu = p_i + R_i r` and
//! `R_imu = R_i · R_surf · Δ`, where `Δ` is the mounting rotation expressed in
//! the local `(t, b, n)` basis. The accelerometer reads specific force
//! `R_imuᵀ (p̈ − g)` and the gyroscope the body-frame angular rate.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::body::MotionSequence;
use crate::exec::Execution;
use crate::geometry::{axis_rotation, log_map, quat_from_matrix, rotation_angle, Mat3, Quat, Vec3};
use crate::placement::PlacementCandidate;
use crate::seed::{derive_seed, rng_from_seed};
use crate::{Error, Result};

pub const STANDARD_GRAVITY: f64 = 9.80665;

/// Gravity in the z-up global frame.
pub fn gravity() -> Vec3 {
    Vec3::new(0.0, 0.0, -STANDARD_GRAVITY)
}

const ALIASING_MARGIN: f64 = 1e-3;

/// Half-widths of the uniform mounting-angle laws, radians.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MountRanges {
    pub in_plane: f64,
    pub tilt: f64,
}

impl MountRanges {
    pub const NONE: MountRanges = MountRanges {
        in_plane: 0.0,
        tilt: 0.0,
    };

    /// ±180° about the normal, ±10° about each tangent axis.
    pub fn training() -> Self {
        Self {
            in_plane: std::f64::consts::PI,
            tilt: 10f64.to_radians(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MountSample {
    pub in_plane: f64,
    pub tilt_tangent: f64,
    pub tilt_binormal: f64,
    pub rotation: Mat3,
}

/// Draws `Rot_n(θ)·Rot_t(α)·Rot_b(β)` in the local basis, with θ, α, β uniform.
pub fn sample_mount<R: Rng + ?Sized>(rng: &mut R, ranges: MountRanges) -> MountSample {
    let mut draw = |half: f64| (2.0 * rng.random::<f64>() - 1.0) * half;
    let in_plane = draw(ranges.in_plane.max(0.0));
    let tilt_tangent = draw(ranges.tilt.max(0.0));
    let tilt_binormal = draw(ranges.tilt.max(0.0));
    let rotation = axis_rotation(Vec3::z(), in_plane)
        * axis_rotation(Vec3::x(), tilt_tangent)
        * axis_rotation(Vec3::y(), tilt_binormal);
    MountSample {
        in_plane,
        tilt_tangent,
        tilt_binormal,
        rotation,
    }
}

pub fn mounting_rotation<R: Rng + ?Sized>(rng: &mut R, in_plane: f64, tilt: f64) -> Mat3 {
    sample_mount(rng, MountRanges { in_plane, tilt }).rotation
}

#[derive(Debug, Clone, PartialEq)]
pub struct SensorTrajectory {
    pub rate: f64,
    pub positions: Vec<Vec3>,
    pub orientations: Vec<Quat>,
}

impl SensorTrajectory {
    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }
}

pub fn sensor_trajectory(
    motion: &MotionSequence,
    cand: &PlacementCandidate,
    mount: &Mat3,
) -> SensorTrajectory {
    let local = quat_from_matrix(&(cand.surface_frame * mount));
    let (positions, orientations) = (0..motion.frames())
        .map(|f| {
            let pose = motion.pose(f, cand.segment);
            (
                pose.position + pose.orientation * cand.offset,
                pose.orientation * local,
            )
        })
        .unzip();
    SensorTrajectory {
        rate: motion.rate(),
        positions,
        orientations,
    }
}

fn require_frames(n: usize) -> Result<()> {
    if n < 3 {
        return Err(Error::Invalid(format!("need at least 3 frames, got {n}")));
    }
    Ok(())
}

/// Specific force in the sensor frame from second-order central differences.
pub fn simulate_accelerometer(traj: &SensorTrajectory, gravity: &Vec3) -> Result<Vec<Vec3>> {
    let n = traj.len();
    require_frames(n)?;
    let r2 = traj.rate * traj.rate;
    let p = &traj.positions;
    let mut out = Vec::with_capacity(n);
    out.push(Vec3::zeros());
    for t in 1..n - 1 {
        let acc = (p[t + 1] - p[t] * 2.0 + p[t - 1]) * r2;
        out.push(traj.orientations[t].inverse_transform_vector(&(acc - gravity)));
    }
    out.push(out[n - 2]);
    out[0] = out[1];
    Ok(out)
}

/// Body-frame angular velocity `vee(Log(R(t−1)ᵀ R(t+1))) · rate / 2`.
pub fn simulate_gyroscope(traj: &SensorTrajectory) -> Result<Vec<Vec3>> {
    let n = traj.len();
    require_frames(n)?;
    let q = &traj.orientations;
    for t in 1..n {
        if rotation_angle(&(q[t - 1].inverse() * q[t])) >= std::f64::consts::PI - ALIASING_MARGIN {
            return Err(Error::AngularAliasing(t));
        }
    }
    let half_rate = traj.rate / 2.0;
    let mut out = Vec::with_capacity(n);
    out.push(Vec3::zeros());
    for t in 1..n - 1 {
        out.push(log_map(&(q[t - 1].inverse() * q[t + 1])) * half_rate);
    }
    out.push(out[n - 2]);
    out[0] = out[1];
    Ok(out)
}

/// Per-axis constant bias plus white Gaussian noise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoisePrior {
    pub accel_std: [f64; 3],
    pub gyro_std: [f64; 3],
    pub accel_bias: [f64; 3],
    pub gyro_bias: [f64; 3],
    pub source_id: String,
}

impl NoisePrior {
    pub fn zero(source_id: impl Into<String>) -> Self {
        Self {
            accel_std: [0.0; 3],
            gyro_std: [0.0; 3],
            accel_bias: [0.0; 3],
            gyro_bias: [0.0; 3],
            source_id: source_id.into(),
        }
    }

    fn validate(&self) -> Result<()> {
        let all = self
            .accel_std
            .iter()
            .chain(&self.gyro_std)
            .chain(&self.accel_bias)
            .chain(&self.gyro_bias);
        if all.clone().any(|x| !x.is_finite()) {
            return Err(Error::Invalid(format!(
                "noise prior {} is not finite",
                self.source_id
            )));
        }
        if self
            .accel_std
            .iter()
            .chain(&self.gyro_std)
            .any(|&s| s < 0.0)
        {
            return Err(Error::Invalid(format!(
                "noise prior {} has negative std",
                self.source_id
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImuWindow {
    /// Rows `[ax, ay, az, wx, wy, wz]` in m/s² and rad/s.
    pub samples: Vec<[f64; 6]>,
    pub rate: f64,
    pub segment: usize,
    pub vertex: usize,
    pub mount_rotation: Mat3,
    pub noise_prior_id: Option<String>,
    pub seed: u64,
    pub window_index: usize,
    pub start_frame: usize,
}

/// Adds `bias + N(0, std²)` per axis; axes with zero std draw nothing.
pub fn apply_noise<R: Rng + ?Sized>(
    window: &ImuWindow,
    prior: &NoisePrior,
    rng: &mut R,
) -> Result<ImuWindow> {
    prior.validate()?;
    let std: Vec<f64> = prior
        .accel_std
        .iter()
        .chain(&prior.gyro_std)
        .copied()
        .collect();
    let bias: Vec<f64> = prior
        .accel_bias
        .iter()
        .chain(&prior.gyro_bias)
        .copied()
        .collect();
    let mut out = window.clone();
    for row in &mut out.samples {
        for c in 0..6 {
            if bias[c] != 0.0 {
                row[c] += bias[c];
            }
            if std[c] > 0.0 {
                let z: f64 = StandardNormal.sample(rng);
                row[c] += std[c] * z;
            }
        }
    }
    out.noise_prior_id = Some(prior.source_id.clone());
    Ok(out)
}

/// Clean (noise-free) six-channel signal for a placement over the whole motion.
pub fn simulate_signal(
    motion: &MotionSequence,
    cand: &PlacementCandidate,
    mount: &Mat3,
    gravity: &Vec3,
) -> Result<Vec<[f64; 6]>> {
    let traj = sensor_trajectory(motion, cand, mount);
    let acc = simulate_accelerometer(&traj, gravity)?;
    let gyr = simulate_gyroscope(&traj)?;
    Ok(acc
        .iter()
        .zip(&gyr)
        .map(|(a, w)| [a.x, a.y, a.z, w.x, w.y, w.z])
        .collect())
}

/// Trajectory, both sensors and (optionally) noise; the noise stream is seeded by `seed`.
pub fn simulate_window(
    motion: &MotionSequence,
    cand: &PlacementCandidate,
    mount: &Mat3,
    prior: Option<&NoisePrior>,
    gravity: &Vec3,
    seed: u64,
) -> Result<ImuWindow> {
    let window = ImuWindow {
        samples: simulate_signal(motion, cand, mount, gravity)?,
        rate: motion.rate(),
        segment: cand.segment,
        vertex: cand.vertex,
        mount_rotation: *mount,
        noise_prior_id: None,
        seed,
        window_index: 0,
        start_frame: 0,
    };
    match prior {
        Some(p) => apply_noise(&window, p, &mut rng_from_seed(seed)),
        None => Ok(window),
    }
}

/// Settings for simulating every placement of a motion into fixed-length windows.
#[derive(Debug, Clone)]
pub struct SimulationConfig {
    pub run_seed: u64,
    pub mount_ranges: MountRanges,
    /// One prior is drawn uniformly per placement; empty means noise-free.
    pub priors: Vec<NoisePrior>,
    pub gravity: Vec3,
    pub window_frames: usize,
    pub stride_frames: usize,
}

impl SimulationConfig {
    pub fn new(run_seed: u64) -> Self {
        Self {
            run_seed,
            mount_ranges: MountRanges::NONE,
            priors: Vec::new(),
            gravity: gravity(),
            window_frames: 300,
            stride_frames: 300,
        }
    }
}

const MOUNT_STREAM: u64 = 0x6d6f_756e_74;
const PRIOR_STREAM: u64 = 0x7072_696f_72;

/// Start frames of the windows cut from a sequence of `frames` frames.
pub fn window_starts(frames: usize, window: usize, stride: usize) -> Vec<usize> {
    if window == 0 || stride == 0 || frames < window {
        return Vec::new();
    }
    (0..=(frames - window)).step_by(stride).collect()
}

/// Simulates each candidate over the full motion, then cuts windows.
///
/// Every random draw is seeded from `(run_seed, segment, vertex, ...)`, so
/// the output is independent of execution order.
pub fn simulate_placements(
    motion: &MotionSequence,
    candidates: &[PlacementCandidate],
    cfg: &SimulationConfig,
    exec: Execution,
) -> Result<Vec<ImuWindow>> {
    let starts = window_starts(motion.frames(), cfg.window_frames, cfg.stride_frames);
    let per_candidate = exec.map(candidates, |cand| -> Result<Vec<ImuWindow>> {
        let key = [cand.segment as u64, cand.vertex as u64];
        let mount = sample_mount(
            &mut rng_from_seed(derive_seed(cfg.run_seed, &[key[0], key[1], MOUNT_STREAM])),
            cfg.mount_ranges,
        )
        .rotation;
        let prior = (!cfg.priors.is_empty()).then(|| {
            let mut rng = rng_from_seed(derive_seed(cfg.run_seed, &[key[0], key[1], PRIOR_STREAM]));
            &cfg.priors[rng.random_range(0..cfg.priors.len())]
        });
        let signal = simulate_signal(motion, cand, &mount, &cfg.gravity)?;
        starts
            .iter()
            .enumerate()
            .map(|(wi, &start)| {
                let seed = derive_seed(cfg.run_seed, &[key[0], key[1], wi as u64]);
                let window = ImuWindow {
                    samples: signal[start..start + cfg.window_frames].to_vec(),
                    rate: motion.rate(),
                    segment: cand.segment,
                    vertex: cand.vertex,
                    mount_rotation: mount,
                    noise_prior_id: None,
                    seed,
                    window_index: wi,
                    start_frame: start,
                };
                match prior {
                    Some(p) => apply_noise(&window, p, &mut rng_from_seed(seed)),
                    None => Ok(window),
                }
            })
            .collect()
    });
    let mut out = Vec::new();
    for windows in per_candidate {
        out.extend(windows?);
    }
    Ok(out)
}

/// Quiet-window detection settings for [`estimate_noise_prior`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuietWindowConfig {
    pub window_seconds: f64,
    pub stride_seconds: f64,
    /// Per-axis gyro std gate, rad/s.
    pub gyro_gate: f64,
    /// Per-axis accel std gate, m/s².
    pub accel_gate: f64,
    pub gravity_magnitude: f64,
}

impl Default for QuietWindowConfig {
    fn default() -> Self {
        Self {
            window_seconds: 1.0,
            stride_seconds: 0.5,
            gyro_gate: 0.02,
            accel_gate: 0.05,
            gravity_magnitude: STANDARD_GRAVITY,
        }
    }
}

/// Estimates a bias + white-noise prior from the quiet stretches of a real stream.
///
/// Windows whose per-axis std stays under both gates are quiet. The std is
/// pooled over quiet windows after removing each window's mean. Gyro bias is
/// the mean of window means; accel bias additionally removes the best-fit
/// gravity vector (direction of the mean, magnitude `|g|`).
pub fn estimate_noise_prior(
    stream: &[[f64; 6]],
    rate: f64,
    cfg: &QuietWindowConfig,
    source_id: &str,
) -> Result<NoisePrior> {
    let win = (cfg.window_seconds * rate).round() as usize;
    let stride = ((cfg.stride_seconds * rate).round() as usize).max(1);
    if win < 2 {
        return Err(Error::Invalid(format!(
            "quiet window of {win} samples is too short"
        )));
    }
    if stream.len() < win {
        return Err(Error::Invalid(format!(
            "stream of {} samples is shorter than one quiet window ({win})",
            stream.len()
        )));
    }

    let mut sq_dev = [0.0; 6];
    let mut dof = 0usize;
    let mut mean_sum = [0.0; 6];
    let mut quiet = 0usize;
    for start in window_starts(stream.len(), win, stride) {
        let rows = &stream[start..start + win];
        let mut mean = [0.0; 6];
        for r in rows {
            for c in 0..6 {
                mean[c] += r[c];
            }
        }
        mean.iter_mut().for_each(|m| *m /= win as f64);
        let mut dev = [0.0; 6];
        for r in rows {
            for c in 0..6 {
                dev[c] += (r[c] - mean[c]).powi(2);
            }
        }
        let is_quiet = (0..6).all(|c| {
            let std = (dev[c] / (win - 1) as f64).sqrt();
            std < if c < 3 { cfg.accel_gate } else { cfg.gyro_gate }
        });
        if is_quiet {
            quiet += 1;
            dof += win - 1;
            for c in 0..6 {
                sq_dev[c] += dev[c];
                mean_sum[c] += mean[c];
            }
        }
    }
    if quiet == 0 {
        return Err(Error::NoQuietSegment);
    }

    let std: Vec<f64> = sq_dev.iter().map(|s| (s / dof as f64).sqrt()).collect();
    let mean: Vec<f64> = mean_sum.iter().map(|m| m / quiet as f64).collect();
    let accel_mean = Vec3::new(mean[0], mean[1], mean[2]);
    let norm = accel_mean.norm();
    let accel_bias = if norm > 1e-9 {
        accel_mean - accel_mean * (cfg.gravity_magnitude / norm)
    } else {
        accel_mean
    };
    Ok(NoisePrior {
        accel_std: [std[0], std[1], std[2]],
        gyro_std: [std[3], std[4], std[5]],
        accel_bias: [accel_bias.x, accel_bias.y, accel_bias.z],
        gyro_bias: [mean[3], mean[4], mean[5]],
        source_id: source_id.to_string(),
    })
}
