//! Error-state EKF over a pose-only state (rotation, velocity, position).
//!
//! The nominal state is integrated exactly for piecewise-constant body-frame
//! controls; the 9×9 error covariance is ordered `[δθ, δv, δp]` with the
//! rotation error applied on the right, `R = R̂ · Exp(δθ)`.

mod kalman;

use alloc::boxed::Box;
use alloc::collections::BTreeMap;
use alloc::vec::Vec;

use nalgebra::{Matrix3, SMatrix, UnitQuaternion, Vector3};

pub use kalman::{check_psd, kalman_gain, propagate_covariance, GainUpdate, MAX_CONDITION};

use crate::geometry::{exp_so3, first_integral, second_integral, skew, Matrix9};

/// Gravity in the world frame (z up), m/s².
pub const GRAVITY: Vector3<f64> = Vector3::new(0.0, 0.0, -9.81);

/// Eigenvalues below `-PSD_TOLERANCE` mark a covariance as invalid.
pub const PSD_TOLERANCE: f64 = 1e-9;

pub type Matrix6 = SMatrix<f64, 6, 6>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum FilterError {
    #[error("covariance is not positive semi-definite (eigenvalue {eigenvalue:e})")]
    NonPsdCovariance { eigenvalue: f64 },
    #[error("{which} noise matrix is not symmetric positive semi-definite (eigenvalue {eigenvalue:e})")]
    InvalidNoise { which: &'static str, eigenvalue: f64 },
    #[error("innovation covariance is singular (condition number {condition:e})")]
    SingularInnovation { condition: f64 },
    #[error("control input must have finite values and dt > 0 (dt = {dt})")]
    InvalidControl { dt: f64 },
    #[error("position observation has non-finite components")]
    NonFiniteObservation,
    #[error("control sequence is empty")]
    EmptyControls,
    #[error("frame {frame}: {source}")]
    AtFrame {
        frame: usize,
        #[source]
        source: Box<FilterError>,
    },
}

/// Estimated pose with full error covariance.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterState {
    pub position: Vector3<f64>,
    pub rotation: UnitQuaternion<f64>,
    pub velocity: Vector3<f64>,
    /// Blocks ordered rotation error, velocity, position.
    pub covariance: Matrix9,
}

impl FilterState {
    pub fn new(
        position: Vector3<f64>,
        rotation: UnitQuaternion<f64>,
        velocity: Vector3<f64>,
        covariance: Matrix9,
    ) -> Self {
        Self {
            position,
            rotation,
            velocity,
            covariance,
        }
    }

    /// State at rest at the origin with zero uncertainty.
    pub fn at_rest() -> Self {
        Self::new(Vector3::zeros(), UnitQuaternion::identity(), Vector3::zeros(), Matrix9::zeros())
    }

    pub fn rotation_covariance(&self) -> Matrix3<f64> {
        self.covariance.fixed_view::<3, 3>(0, 0).into_owned()
    }

    pub fn velocity_covariance(&self) -> Matrix3<f64> {
        self.covariance.fixed_view::<3, 3>(3, 3).into_owned()
    }

    pub fn position_covariance(&self) -> Matrix3<f64> {
        self.covariance.fixed_view::<3, 3>(6, 6).into_owned()
    }
}

/// One IMU sample: body-frame angular rate and specific force held over `dt`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ControlInput {
    pub angular_velocity: Vector3<f64>,
    pub linear_acceleration: Vector3<f64>,
    pub dt: f64,
}

impl ControlInput {
    pub fn new(angular_velocity: Vector3<f64>, linear_acceleration: Vector3<f64>, dt: f64) -> Self {
        Self {
            angular_velocity,
            linear_acceleration,
            dt,
        }
    }

    fn validate(&self) -> Result<(), FilterError> {
        let finite = self.angular_velocity.iter().all(|v| v.is_finite())
            && self.linear_acceleration.iter().all(|v| v.is_finite());
        if !(self.dt > 0.0 && self.dt.is_finite() && finite) {
            return Err(FilterError::InvalidControl { dt: self.dt });
        }
        Ok(())
    }
}

/// Process noise on `[gyro, accel]` samples and position observation noise.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseConfig {
    pub process_noise: Matrix6,
    pub observation_noise: Matrix3<f64>,
}

impl NoiseConfig {
    pub fn new(process_noise: Matrix6, observation_noise: Matrix3<f64>) -> Result<Self, FilterError> {
        check_psd(&process_noise, PSD_TOLERANCE)
            .map_err(|eigenvalue| FilterError::InvalidNoise { which: "process", eigenvalue })?;
        check_psd(&observation_noise, PSD_TOLERANCE)
            .map_err(|eigenvalue| FilterError::InvalidNoise { which: "observation", eigenvalue })?;
        let asym = |m: &[f64], n: usize| (0..n).any(|i| (0..n).any(|j| m[i * n + j] != m[j * n + i]));
        if asym(process_noise.as_slice(), 6) {
            return Err(FilterError::InvalidNoise { which: "process", eigenvalue: f64::NAN });
        }
        if asym(observation_noise.as_slice(), 3) {
            return Err(FilterError::InvalidNoise { which: "observation", eigenvalue: f64::NAN });
        }
        Ok(Self {
            process_noise,
            observation_noise,
        })
    }

    /// Isotropic noise from per-sample standard deviations.
    pub fn from_std(gyro_std: f64, accel_std: f64, observation_std: f64) -> Result<Self, FilterError> {
        let mut q = Matrix6::zeros();
        for i in 0..3 {
            q[(i, i)] = gyro_std * gyro_std;
            q[(i + 3, i + 3)] = accel_std * accel_std;
        }
        Self::new(q, Matrix3::identity() * (observation_std * observation_std))
    }
}

/// A direct, noisy observation of the position.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PositionObservation {
    pub observed_position: Vector3<f64>,
}

impl PositionObservation {
    pub fn new(observed_position: Vector3<f64>) -> Self {
        Self { observed_position }
    }
}

/// Predict the next state from one control sample.
pub fn propagate(
    state: &FilterState,
    control: &ControlInput,
    noise: &NoiseConfig,
) -> Result<FilterState, FilterError> {
    control.validate()?;
    check_psd(&state.covariance, PSD_TOLERANCE)
        .map_err(|eigenvalue| FilterError::NonPsdCovariance { eigenvalue })?;

    let dt = control.dt;
    let phi = control.angular_velocity * dt;
    let rot = state.rotation.to_rotation_matrix().into_inner();
    let step = exp_so3(&phi);
    let gamma1 = first_integral(&phi);
    let gamma2 = second_integral(&phi);
    let force = &control.linear_acceleration;
    let dv_body = gamma1 * force;
    let dp_body = gamma2 * force;

    let velocity = state.velocity + rot * dv_body * dt + GRAVITY * dt;
    let position = state.position + state.velocity * dt + rot * dp_body * (dt * dt) + GRAVITY * (0.5 * dt * dt);
    let rotation = UnitQuaternion::new_normalize((state.rotation * step).into_inner());

    let mut transition = Matrix9::identity();
    transition
        .fixed_view_mut::<3, 3>(0, 0)
        .copy_from(&step.to_rotation_matrix().into_inner().transpose());
    transition
        .fixed_view_mut::<3, 3>(3, 0)
        .copy_from(&(-(rot * skew(&dv_body)) * dt));
    transition
        .fixed_view_mut::<3, 3>(6, 0)
        .copy_from(&(-(rot * skew(&dp_body)) * (dt * dt)));
    transition
        .fixed_view_mut::<3, 3>(6, 3)
        .copy_from(&(Matrix3::identity() * dt));

    let mut noise_gain = SMatrix::<f64, 9, 6>::zeros();
    noise_gain
        .fixed_view_mut::<3, 3>(0, 0)
        .copy_from(&(Matrix3::identity() * dt));
    noise_gain.fixed_view_mut::<3, 3>(3, 3).copy_from(&(rot * dt));
    noise_gain
        .fixed_view_mut::<3, 3>(6, 3)
        .copy_from(&(rot * (0.5 * dt * dt)));

    let covariance = propagate_covariance(&state.covariance, &transition, &noise_gain, &noise.process_noise);
    Ok(FilterState {
        position,
        rotation,
        velocity,
        covariance,
    })
}

/// Correct a predicted state with a direct position observation.
pub fn update(
    state: &FilterState,
    obs: &PositionObservation,
    noise: &NoiseConfig,
) -> Result<FilterState, FilterError> {
    if !obs.observed_position.iter().all(|v| v.is_finite()) {
        return Err(FilterError::NonFiniteObservation);
    }
    check_psd(&state.covariance, PSD_TOLERANCE)
        .map_err(|eigenvalue| FilterError::NonPsdCovariance { eigenvalue })?;

    let mut observation = SMatrix::<f64, 3, 9>::zeros();
    observation
        .fixed_view_mut::<3, 3>(0, 6)
        .copy_from(&Matrix3::identity());
    let GainUpdate { gain, covariance } =
        kalman_gain(&state.covariance, &observation, &noise.observation_noise)?;

    let innovation = obs.observed_position - state.position;
    let correction = gain * innovation;
    let dtheta = Vector3::new(correction[0], correction[1], correction[2]);
    let dv = Vector3::new(correction[3], correction[4], correction[5]);
    let dp = Vector3::new(correction[6], correction[7], correction[8]);

    Ok(FilterState {
        position: state.position + dp,
        velocity: state.velocity + dv,
        rotation: UnitQuaternion::new_normalize((state.rotation * exp_so3(&dtheta)).into_inner()),
        covariance,
    })
}

/// Run the filter over a whole control sequence.
///
/// `controls[k]` advances the estimate to frame `k`; an observation keyed by
/// `k` is applied right after that prediction. The initial state sits one
/// control step before frame 0.
pub fn run_filter(
    controls: &[ControlInput],
    observations: &BTreeMap<usize, PositionObservation>,
    noise: &NoiseConfig,
    initial: &FilterState,
) -> Result<Vec<FilterState>, FilterError> {
    if controls.is_empty() {
        return Err(FilterError::EmptyControls);
    }
    let at = |frame: usize| move |e: FilterError| FilterError::AtFrame { frame, source: Box::new(e) };
    let mut out = Vec::with_capacity(controls.len());
    let mut state = initial.clone();
    for (frame, control) in controls.iter().enumerate() {
        state = propagate(&state, control, noise).map_err(at(frame))?;
        if let Some(obs) = observations.get(&frame) {
            state = update(&state, obs, noise).map_err(at(frame))?;
        }
        out.push(state.clone());
    }
    Ok(out)
}

#[cfg(test)]
mod tests;
