//! Kinematic bicycle model.
//!
//! The state is the rear-axle pose plus the front-wheel steering angle; the
//! controls are longitudinal speed and steering rate. Because the rear-axle
//! position is a flat output, every state and control can be recovered from
//! the planar path and its first three derivatives, see [`flat_recover`].

use std::f64::consts::{FRAC_PI_2, PI};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Speeds below this are treated as standstill by [`flat_recover`].
pub const DEFAULT_EPSILON_SPEED: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DynamicsError {
    #[error("singular steering configuration: |beta| = {beta} reaches pi/2")]
    SingularSteering { beta: f64 },
    #[error("flatness recovery undefined at speed {speed} (standstill)")]
    FlatSingularity { speed: f64 },
    #[error("reverse motion is not supported (u = {u})")]
    ReverseMotion { u: f64 },
    #[error("integration step must be positive, got {dt}")]
    InvalidStep { dt: f64 },
    #[error("invalid vehicle parameters: {0}")]
    InvalidParams(String),
}

/// Rear-axle pose and steering angle `[x, y, alpha, beta]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VehicleState {
    pub x: f64,
    pub y: f64,
    /// Heading, normalized to (-pi, pi].
    pub alpha: f64,
    /// Front-wheel steering angle.
    pub beta: f64,
}

impl VehicleState {
    pub fn new(x: f64, y: f64, alpha: f64, beta: f64) -> Self {
        Self {
            x,
            y,
            alpha: normalize_angle(alpha),
            beta,
        }
    }

    pub fn position(&self) -> [f64; 2] {
        [self.x, self.y]
    }
}

/// `[u, omega]`: longitudinal speed and steering-wheel angular velocity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ControlInput {
    pub u: f64,
    pub omega: f64,
}

impl ControlInput {
    pub fn new(u: f64, omega: f64) -> Self {
        Self { u, omega }
    }

    pub fn within(&self, params: &VehicleParams) -> bool {
        self.u >= 0.0 && self.u <= params.u_max && self.omega.abs() <= params.omega_max
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VehicleParams {
    /// Rear-to-front axle distance (m).
    pub wheelbase: f64,
    pub length: f64,
    pub width: f64,
    pub u_max: f64,
    pub a_max: f64,
    pub beta_max: f64,
    pub omega_max: f64,
}

impl Default for VehicleParams {
    fn default() -> Self {
        Self {
            wheelbase: 2.7,
            length: 4.5,
            width: 1.8,
            u_max: 15.0,
            a_max: 3.0,
            beta_max: 0.6,
            omega_max: 1.0,
        }
    }
}

impl VehicleParams {
    pub fn validate(&self) -> Result<(), DynamicsError> {
        let fields = [
            ("wheelbase", self.wheelbase),
            ("length", self.length),
            ("width", self.width),
            ("u_max", self.u_max),
            ("a_max", self.a_max),
            ("beta_max", self.beta_max),
            ("omega_max", self.omega_max),
        ];
        for (name, value) in fields {
            if !(value.is_finite() && value > 0.0) {
                return Err(DynamicsError::InvalidParams(format!(
                    "{name} must be positive, got {value}"
                )));
            }
        }
        if self.length <= self.wheelbase {
            return Err(DynamicsError::InvalidParams(format!(
                "length {} must exceed wheelbase {}",
                self.length, self.wheelbase
            )));
        }
        if self.beta_max >= FRAC_PI_2 {
            return Err(DynamicsError::InvalidParams(format!(
                "beta_max {} must be below pi/2",
                self.beta_max
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StateRate {
    pub x_dot: f64,
    pub y_dot: f64,
    pub alpha_dot: f64,
    pub beta_dot: f64,
}

/// Flat output `(x, y)` of the rear axle with its first three time derivatives.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FlatSample {
    pub position: [f64; 2],
    pub d1: [f64; 2],
    pub d2: [f64; 2],
    pub d3: [f64; 2],
}

/// States and controls recovered from a [`FlatSample`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FlatRecovery {
    pub alpha: f64,
    pub beta: f64,
    pub u: f64,
    pub omega: f64,
}

impl FlatRecovery {
    pub fn control(&self) -> ControlInput {
        ControlInput::new(self.u, self.omega)
    }
}

/// Wraps an angle into (-pi, pi].
pub fn normalize_angle(angle: f64) -> f64 {
    let mut a = angle.rem_euclid(2.0 * PI);
    if a > PI {
        a -= 2.0 * PI;
    }
    a
}

fn check_steering(beta: f64) -> Result<(), DynamicsError> {
    if !(beta.abs() < FRAC_PI_2 - 1e-12) {
        return Err(DynamicsError::SingularSteering { beta });
    }
    Ok(())
}

pub fn state_derivative(
    state: &VehicleState,
    control: &ControlInput,
    params: &VehicleParams,
) -> Result<StateRate, DynamicsError> {
    check_steering(state.beta)?;
    if control.u < 0.0 {
        return Err(DynamicsError::ReverseMotion { u: control.u });
    }
    let (sin_a, cos_a) = state.alpha.sin_cos();
    Ok(StateRate {
        x_dot: control.u * cos_a,
        y_dot: control.u * sin_a,
        alpha_dot: control.u / params.wheelbase * state.beta.tan(),
        beta_dot: control.omega,
    })
}

fn offset(state: &VehicleState, rate: &StateRate, h: f64) -> VehicleState {
    // alpha is left unwrapped inside a step so the stages stay continuous.
    VehicleState {
        x: state.x + h * rate.x_dot,
        y: state.y + h * rate.y_dot,
        alpha: state.alpha + h * rate.alpha_dot,
        beta: state.beta + h * rate.beta_dot,
    }
}

/// One classical Runge-Kutta step with the control held constant over `dt`.
pub fn step(
    state: &VehicleState,
    control: &ControlInput,
    params: &VehicleParams,
    dt: f64,
) -> Result<VehicleState, DynamicsError> {
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(DynamicsError::InvalidStep { dt });
    }
    let k1 = state_derivative(state, control, params)?;
    let k2 = state_derivative(&offset(state, &k1, dt / 2.0), control, params)?;
    let k3 = state_derivative(&offset(state, &k2, dt / 2.0), control, params)?;
    let k4 = state_derivative(&offset(state, &k3, dt), control, params)?;
    let w = dt / 6.0;
    let next = VehicleState {
        x: state.x + w * (k1.x_dot + 2.0 * k2.x_dot + 2.0 * k3.x_dot + k4.x_dot),
        y: state.y + w * (k1.y_dot + 2.0 * k2.y_dot + 2.0 * k3.y_dot + k4.y_dot),
        alpha: normalize_angle(
            state.alpha
                + w * (k1.alpha_dot + 2.0 * k2.alpha_dot + 2.0 * k3.alpha_dot + k4.alpha_dot),
        ),
        beta: state.beta + w * (k1.beta_dot + 2.0 * k2.beta_dot + 2.0 * k3.beta_dot + k4.beta_dot),
    };
    check_steering(next.beta)?;
    Ok(next)
}

/// Recovers heading, steering, speed and steering rate from the flat output.
pub fn flat_recover(
    sample: &FlatSample,
    params: &VehicleParams,
) -> Result<FlatRecovery, DynamicsError> {
    flat_recover_with_epsilon(sample, params, DEFAULT_EPSILON_SPEED)
}

pub fn flat_recover_with_epsilon(
    sample: &FlatSample,
    params: &VehicleParams,
    epsilon_speed: f64,
) -> Result<FlatRecovery, DynamicsError> {
    let [dx, dy] = sample.d1;
    let [ddx, ddy] = sample.d2;
    let [dddx, dddy] = sample.d3;
    let speed_sq = dx * dx + dy * dy;
    let u = speed_sq.sqrt();
    if !(u > epsilon_speed) {
        return Err(DynamicsError::FlatSingularity { speed: u });
    }
    let r = params.wheelbase;
    let alpha = normalize_angle(dy.atan2(dx));
    // cross = u^2 * alpha_dot
    let cross = dx * ddy - dy * ddx;
    let beta = (cross * r / (speed_sq * u)).atan();
    let cross_dot = dx * dddy - dy * dddx;
    let along = dx * ddx + dy * ddy;
    let numerator = cross_dot * speed_sq - 3.0 * cross * along;
    let denominator = speed_sq.powi(3) + cross * cross * r * r;
    let omega = numerator / denominator * u * r;
    Ok(FlatRecovery {
        alpha,
        beta,
        u,
        omega,
    })
}
