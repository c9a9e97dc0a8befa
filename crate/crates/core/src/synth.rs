//! Deterministic looping datasets: analytic trajectories, IMU-style controls,
//! sparse position fixes and top-down frames of a procedural ground texture.

use alloc::collections::BTreeMap;
use alloc::vec::Vec;
use core::f64::consts::PI;

use nalgebra::{UnitQuaternion, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::dird::GrayImage;
use crate::eval::default_truth_radius;
use crate::geometry::Matrix9;
use crate::pose_filter::{ControlInput, FilterError, FilterState, NoiseConfig, PositionObservation, GRAVITY};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SynthError {
    #[error("trajectory scale must be positive and finite (got {0})")]
    DegenerateScale(f64),
    #[error("need at least {needed} frames (got {frames})")]
    TooFewFrames { frames: usize, needed: usize },
    #[error("figure-eight frame count must be divisible by 4 (got {0})")]
    FigureEightFrames(usize),
    #[error("time step must be positive and finite (got {0})")]
    BadTimeStep(f64),
    #[error("noise level `{0}` must be finite and non-negative")]
    BadNoise(&'static str),
    #[error("illumination ranges are invalid or saturate the texture: {0}")]
    BadIllumination(&'static str),
    #[error("alias arcs must lie in [0, 1) lap fractions and not overlap")]
    BadAlias,
    #[error("image size must be at least 64 pixels (got {0})")]
    BadImageSize(usize),
    #[error(transparent)]
    Filter(#[from] FilterError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum TrajectoryKind {
    /// One circle driven twice.
    CircleTwoLap,
    /// Two tangent circles (left turn, then right turn), driven twice.
    FigureEight,
    /// Straight line, never revisited.
    Line,
}

impl TrajectoryKind {
    pub fn laps(self) -> usize {
        match self {
            TrajectoryKind::Line => 1,
            _ => 2,
        }
    }
}

/// Per-frame illumination ranges; each frame draws uniformly from them.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct Illumination {
    pub gain: (f64, f64),
    pub bias: (f64, f64),
    pub gamma: (f64, f64),
}

impl Default for Illumination {
    fn default() -> Self {
        Self {
            gain: (0.6, 1.0),
            bias: (-15.0, 15.0),
            gamma: (0.9, 1.1),
        }
    }
}

impl Illumination {
    pub fn constant() -> Self {
        Self {
            gain: (1.0, 1.0),
            bias: (0.0, 0.0),
            gamma: (1.0, 1.0),
        }
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        let ordered = |r: (f64, f64)| r.0.is_finite() && r.1.is_finite() && r.0 <= r.1;
        if !(ordered(self.gain) && ordered(self.bias) && ordered(self.gamma)) {
            return Err(SynthError::BadIllumination("ranges must be finite and ordered"));
        }
        if self.gain.0 <= 0.0 || self.gamma.0 <= 0.0 {
            return Err(SynthError::BadIllumination("gain and gamma must be positive"));
        }
        if self.gain.1 * TEXTURE_MAX as f64 + self.bias.1 > 255.0 {
            return Err(SynthError::BadIllumination("bright end saturates"));
        }
        if self.gain.0 * TEXTURE_MIN as f64 + self.bias.0 < 0.0 {
            return Err(SynthError::BadIllumination("dark end saturates"));
        }
        Ok(())
    }
}

/// Frames whose lap phase falls in `[target, target + length)` are rendered
/// from the matching pose of `[source, source + length)`, so two distant
/// arcs look alike. All values are lap fractions.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(deny_unknown_fields))]
pub struct AliasArc {
    pub source: f64,
    pub target: f64,
    pub length: f64,
}

impl Default for AliasArc {
    /// An arc early in the lap copied a quarter lap further on.
    fn default() -> Self {
        Self {
            source: 0.2,
            target: 0.45,
            length: 0.08,
        }
    }
}

impl AliasArc {
    fn validate(&self) -> Result<(), SynthError> {
        let inside = |x: f64| (0.0..1.0).contains(&x);
        let ok = inside(self.source)
            && inside(self.target)
            && self.length > 0.0
            && self.source + self.length <= 1.0
            && self.target + self.length <= 1.0
            && (self.source + self.length <= self.target || self.target + self.length <= self.source);
        if ok {
            Ok(())
        } else {
            Err(SynthError::BadAlias)
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct SynthConfig {
    pub trajectory: TrajectoryKind,
    /// Length of one lap in meters.
    pub scale: f64,
    pub frame_count: usize,
    /// Seconds between frames.
    pub dt: f64,
    /// Per-sample gyro noise standard deviation (rad/s).
    pub gyro_noise: f64,
    /// Per-sample accelerometer noise standard deviation (m/s²).
    pub accel_noise: f64,
    /// A position fix every this many frames; 0 disables fixes.
    pub observation_interval: usize,
    /// Position fix standard deviation (m).
    pub observation_noise: f64,
    pub illumination: Illumination,
    pub alias: Option<AliasArc>,
    pub image_size: usize,
    /// Image width in texture cells.
    pub view_cells: f64,
    /// Distance from the camera to the image centre, in texture cells.
    pub look_ahead_cells: f64,
    /// Standard deviation of the horizontal camera offset, in texture cells.
    pub render_jitter: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            trajectory: TrajectoryKind::CircleTwoLap,
            scale: 250.0,
            frame_count: 1000,
            dt: 0.1,
            gyro_noise: 0.002,
            accel_noise: 0.05,
            observation_interval: 10,
            observation_noise: 0.5,
            illumination: Illumination::default(),
            alias: None,
            image_size: 256,
            view_cells: 16.0,
            look_ahead_cells: 5.0,
            render_jitter: 0.05,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<(), SynthError> {
        if !(self.scale > 0.0 && self.scale.is_finite()) {
            return Err(SynthError::DegenerateScale(self.scale));
        }
        if self.frame_count < 4 {
            return Err(SynthError::TooFewFrames {
                frames: self.frame_count,
                needed: 4,
            });
        }
        if self.trajectory == TrajectoryKind::FigureEight && !self.frame_count.is_multiple_of(4) {
            return Err(SynthError::FigureEightFrames(self.frame_count));
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(SynthError::BadTimeStep(self.dt));
        }
        for (name, v) in [
            ("gyro_noise", self.gyro_noise),
            ("accel_noise", self.accel_noise),
            ("observation_noise", self.observation_noise),
            ("render_jitter", self.render_jitter),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(SynthError::BadNoise(name));
            }
        }
        if self.observation_interval > 0 && self.observation_noise == 0.0 {
            return Err(SynthError::BadNoise("observation_noise"));
        }
        if self.image_size < crate::dird::MIN_IMAGE_SIDE {
            return Err(SynthError::BadImageSize(self.image_size));
        }
        self.illumination.validate()?;
        if let Some(a) = &self.alias {
            a.validate()?;
        }
        Ok(())
    }

    fn total_time(&self) -> f64 {
        self.frame_count as f64 * self.dt
    }

    fn lap_time(&self) -> f64 {
        self.total_time() / self.trajectory.laps() as f64
    }

    /// Timestamp of frame `k`.
    pub fn frame_time(&self, k: usize) -> f64 {
        (k + 1) as f64 * self.dt
    }

    /// Filter noise matching the generator.
    pub fn noise_config(&self) -> Result<NoiseConfig, FilterError> {
        NoiseConfig::from_std(self.gyro_noise, self.accel_noise, self.observation_noise.max(1e-6))
    }
}

/// Analytic pose at one instant.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TruePose {
    pub t: f64,
    pub position: Vector3<f64>,
    pub rotation: UnitQuaternion<f64>,
    pub velocity: Vector3<f64>,
}

/// Yaw rate and forward speed of the segment containing `t`.
fn turn_at(cfg: &SynthConfig, t: f64) -> (f64, f64) {
    let total = cfg.total_time();
    match cfg.trajectory {
        TrajectoryKind::Line => (0.0, cfg.scale / total),
        TrajectoryKind::CircleTwoLap => {
            let speed = 2.0 * cfg.scale / total;
            (speed / (cfg.scale / (2.0 * PI)), speed)
        }
        TrajectoryKind::FigureEight => {
            let speed = 2.0 * cfg.scale / total;
            let omega = speed / (cfg.scale / (4.0 * PI));
            let segment = libm::floor(t / (total / 4.0)) as i64;
            (if segment.rem_euclid(2) == 0 { omega } else { -omega }, speed)
        }
    }
}

/// Ground-truth pose at time `t` (seconds from the start).
pub fn pose_at(cfg: &SynthConfig, t: f64) -> TruePose {
    let total = cfg.total_time();
    let (position, yaw, speed) = match cfg.trajectory {
        TrajectoryKind::Line => {
            let speed = cfg.scale / total;
            (Vector3::new(speed * t, 0.0, 0.0), 0.0, speed)
        }
        TrajectoryKind::CircleTwoLap => {
            let (omega, speed) = turn_at(cfg, 0.0);
            let r = speed / omega;
            let a = omega * t;
            (Vector3::new(r * libm::cos(a), r * libm::sin(a), 0.0), a + PI / 2.0, speed)
        }
        TrajectoryKind::FigureEight => {
            let quarter = total / 4.0;
            let segment = libm::floor(t / quarter).clamp(0.0, 3.0);
            let tau = t - segment * quarter;
            let (omega, speed) = turn_at(cfg, segment * quarter + 0.5 * quarter);
            let r = speed / omega.abs();
            let a = omega.abs() * tau;
            let side = omega.signum();
            (Vector3::new(r * libm::sin(a), side * r * (1.0 - libm::cos(a)), 0.0), side * a, speed)
        }
    };
    let velocity = Vector3::new(speed * libm::cos(yaw), speed * libm::sin(yaw), 0.0);
    TruePose {
        t,
        position,
        rotation: UnitQuaternion::from_axis_angle(&Vector3::z_axis(), yaw),
        velocity,
    }
}

/// Exact control for the step from `t` to `t + dt`: body yaw rate and the
/// specific force of a constant-speed turn.
fn exact_control(cfg: &SynthConfig, t: f64) -> ControlInput {
    let (omega, speed) = turn_at(cfg, t + 0.5 * cfg.dt);
    ControlInput::new(
        Vector3::new(0.0, 0.0, omega),
        Vector3::new(0.0, speed * omega, -GRAVITY.z),
        cfg.dt,
    )
}

/// Noiseless trajectory: initial pose, one pose per frame and the exact controls.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub initial: TruePose,
    pub poses: Vec<TruePose>,
    pub controls: Vec<ControlInput>,
}

impl Trajectory {
    pub fn positions(&self) -> Vec<Vector3<f64>> {
        self.poses.iter().map(|p| p.position).collect()
    }

    /// Filter state at the initial pose with zero uncertainty.
    pub fn initial_state(&self) -> FilterState {
        FilterState::new(
            self.initial.position,
            self.initial.rotation,
            self.initial.velocity,
            Matrix9::zeros(),
        )
    }
}

pub fn generate_trajectory(cfg: &SynthConfig) -> Result<Trajectory, SynthError> {
    cfg.validate()?;
    let poses = (0..cfg.frame_count).map(|k| pose_at(cfg, cfg.frame_time(k))).collect();
    let controls = (0..cfg.frame_count)
        .map(|k| exact_control(cfg, k as f64 * cfg.dt))
        .collect();
    Ok(Trajectory {
        initial: pose_at(cfg, 0.0),
        poses,
        controls,
    })
}

/// Per-frame illumination: `gain · I + bias`, then gamma.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Lighting {
    pub gain: f64,
    pub bias: f64,
    pub gamma: f64,
}

impl Lighting {
    pub const IDENTITY: Lighting = Lighting {
        gain: 1.0,
        bias: 0.0,
        gamma: 1.0,
    };

    pub fn apply_pixel(&self, p: u8) -> u8 {
        let mut v = self.gain * p as f64 + self.bias;
        if self.gamma != 1.0 {
            v = 255.0 * libm::pow((v / 255.0).max(0.0), self.gamma);
        }
        libm::round(v).clamp(0.0, 255.0) as u8
    }

    pub fn apply(&self, img: &GrayImage) -> GrayImage {
        img.map(|p| self.apply_pixel(p))
    }
}

const TEXTURE_MIN: u8 = 40;
const TEXTURE_MAX: u8 = 220;
const OCTAVES: [i64; 3] = [4, 2, 1];
const LEVELS_PER_OCTAVE: u64 = 16;

fn mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn lattice_hash(seed: u64, octave: u64, ix: i64, iy: i64) -> u64 {
    let h = mix(seed ^ octave.wrapping_mul(0x9e37_79b9_7f4a_7c15));
    let h = mix(h ^ (ix as u64).wrapping_mul(0xd6e8_feb8_6659_fd93));
    mix(h ^ (iy as u64).wrapping_mul(0xa076_1d64_78bd_642f))
}

/// Ground texture at integer cell `(ix, iy)`: a blend of three nested
/// lattices, quantized to multiples of 10 in `[40, 220]`.
pub fn texture_cell(seed: u64, ix: i64, iy: i64) -> u8 {
    let mut sum = 0;
    for (o, &size) in OCTAVES.iter().enumerate() {
        let h = lattice_hash(seed, o as u64, ix.div_euclid(size), iy.div_euclid(size));
        sum += h % LEVELS_PER_OCTAVE;
    }
    let top = (LEVELS_PER_OCTAVE - 1) * OCTAVES.len() as u64;
    let steps = ((TEXTURE_MAX - TEXTURE_MIN) / 10) as u64;
    TEXTURE_MIN + 10 * (sum * steps / top) as u8
}

/// Camera geometry for top-down rendering.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct View {
    pub image_size: usize,
    /// Texture cell side in meters.
    pub cell: f64,
    pub view_cells: f64,
    pub look_ahead_cells: f64,
    pub seed: u64,
}

/// Texture seen from `position`, looking down at a point ahead along the
/// body x-axis, with image "up" pointing forward.
pub fn render_frame(position: &Vector3<f64>, rotation: &UnitQuaternion<f64>, view: &View) -> GrayImage {
    let fwd = rotation * Vector3::x();
    let norm = libm::hypot(fwd.x, fwd.y);
    let (c, s) = if norm > 0.0 { (fwd.x / norm, fwd.y / norm) } else { (1.0, 0.0) };
    let n = view.image_size;
    let pixel = view.view_cells * view.cell / n as f64;
    let cx = position.x + view.look_ahead_cells * view.cell * c;
    let cy = position.y + view.look_ahead_cells * view.cell * s;
    let half = n as f64 / 2.0;
    GrayImage::from_fn(n, n, |u, v| {
        let lateral = (u as f64 + 0.5 - half) * pixel;
        let forward = (half - v as f64 - 0.5) * pixel;
        let x = cx + forward * c + lateral * s;
        let y = cy + forward * s - lateral * c;
        let ix = libm::floor(x / view.cell) as i64;
        let iy = libm::floor(y / view.cell) as i64;
        texture_cell(view.seed, ix, iy)
    })
    .expect("image size validated by the caller")
}

/// A generated dataset; frames are rendered on demand.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthDataset {
    pub config: SynthConfig,
    pub trajectory: Trajectory,
    /// Noisy controls fed to the filter.
    pub controls: Vec<ControlInput>,
    pub observations: BTreeMap<usize, PositionObservation>,
    pub lighting: Vec<Lighting>,
    /// Horizontal camera offset per frame, in meters.
    pub jitter: Vec<Vector3<f64>>,
    pub truth_radius: f64,
}

fn uniform(rng: &mut ChaCha8Rng, r: (f64, f64)) -> f64 {
    r.0 + (r.1 - r.0) * rng.random::<f64>()
}

fn gaussian3(rng: &mut ChaCha8Rng, std: f64) -> Vector3<f64> {
    let mut g = || std * rng.sample::<f64, _>(StandardNormal);
    Vector3::new(g(), g(), g())
}

/// Seeded generator with an independent stream per noise source.
fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

pub fn generate(cfg: &SynthConfig) -> Result<SynthDataset, SynthError> {
    let trajectory = generate_trajectory(cfg)?;
    let mut control_rng = stream(cfg.seed, 1);
    let controls = trajectory
        .controls
        .iter()
        .map(|c| {
            let gyro = gaussian3(&mut control_rng, cfg.gyro_noise);
            let accel = gaussian3(&mut control_rng, cfg.accel_noise);
            ControlInput::new(c.angular_velocity + gyro, c.linear_acceleration + accel, c.dt)
        })
        .collect();
    let mut obs_rng = stream(cfg.seed, 2);
    let mut observations = BTreeMap::new();
    if cfg.observation_interval > 0 {
        for k in (cfg.observation_interval - 1..cfg.frame_count).step_by(cfg.observation_interval) {
            let p = trajectory.poses[k].position + gaussian3(&mut obs_rng, cfg.observation_noise);
            observations.insert(k, PositionObservation::new(p));
        }
    }
    let mut light_rng = stream(cfg.seed, 3);
    let ill = &cfg.illumination;
    let lighting = (0..cfg.frame_count)
        .map(|_| Lighting {
            gain: uniform(&mut light_rng, ill.gain),
            bias: uniform(&mut light_rng, ill.bias),
            gamma: uniform(&mut light_rng, ill.gamma),
        })
        .collect();
    let truth_radius = default_truth_radius(&trajectory.positions());
    let mut jitter_rng = stream(cfg.seed, 4);
    let jitter = (0..cfg.frame_count)
        .map(|_| {
            let mut v = gaussian3(&mut jitter_rng, cfg.render_jitter * truth_radius);
            v.z = 0.0;
            v
        })
        .collect();
    Ok(SynthDataset {
        config: cfg.clone(),
        trajectory,
        controls,
        observations,
        lighting,
        jitter,
        truth_radius,
    })
}

impl SynthDataset {
    pub fn frame_count(&self) -> usize {
        self.config.frame_count
    }

    pub fn positions(&self) -> Vec<Vector3<f64>> {
        self.trajectory.positions()
    }

    pub fn view(&self) -> View {
        View {
            image_size: self.config.image_size,
            cell: self.truth_radius,
            view_cells: self.config.view_cells,
            look_ahead_cells: self.config.look_ahead_cells,
            seed: self.config.seed,
        }
    }

    /// True when frame `k` is rendered from another arc's pose.
    pub fn is_aliased(&self, k: usize) -> bool {
        self.alias_shift(k).is_some()
    }

    fn alias_shift(&self, k: usize) -> Option<f64> {
        const EPS: f64 = 1e-9;
        let a = self.config.alias?;
        let laps = (k + 1) as f64 * self.config.trajectory.laps() as f64 / self.config.frame_count as f64;
        let phase = laps - libm::floor(laps + EPS);
        (phase >= a.target - EPS && phase < a.target + a.length - EPS).then(|| (a.target - a.source) * self.config.lap_time())
    }

    /// Pose the frame is rendered from, camera jitter included.
    pub fn render_pose(&self, k: usize) -> TruePose {
        let mut pose = match self.alias_shift(k) {
            Some(shift) => pose_at(&self.config, self.config.frame_time(k) - shift),
            None => self.trajectory.poses[k],
        };
        pose.position += self.jitter[k];
        pose
    }

    /// Frame `k` before illumination.
    pub fn render_base(&self, k: usize) -> GrayImage {
        let p = self.render_pose(k);
        render_frame(&p.position, &p.rotation, &self.view())
    }

    pub fn render(&self, k: usize) -> GrayImage {
        self.lighting[k].apply(&self.render_base(k))
    }
}
