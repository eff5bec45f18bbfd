use serde::{Deserialize, Serialize};

use crate::datamodel::Trajectory;

use super::dynamics::{drone_rates, euler_rate_matrix_generic, rk4_step, rotation_matrix};
use super::SimError;

/// Margin (rad) kept away from the pitch singularity of the Euler-rate map.
pub const GIMBAL_MARGIN: f64 = 1e-3;

/// Rigid-body constants of the quadrotor plant.
///
/// Defaults are plausible for a nano-quadrotor and freely overridable; they
/// are configuration, not identified ground truth.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DroneParams {
    /// Mass (kg).
    pub mass: f64,
    /// Diagonal inertia tensor entries (kg·m²).
    pub inertia: [f64; 3],
    /// Gravitational acceleration (m/s²).
    pub gravity: f64,
    /// Propeller thrust coefficient (N·s²).
    pub thrust_coeff: f64,
    /// Arm length (m).
    pub arm_length: f64,
    /// Drag-to-thrust ratio (dimensionless lever for yaw torque).
    pub drag_to_thrust: f64,
}

impl Default for DroneParams {
    fn default() -> Self {
        DroneParams {
            mass: 0.032,
            inertia: [1.4e-5, 1.4e-5, 2.2e-5],
            gravity: 9.81,
            thrust_coeff: 2.0e-8,
            arm_length: 0.033,
            drag_to_thrust: 0.006,
        }
    }
}

impl DroneParams {
    pub fn validate(&self) -> Result<(), SimError> {
        let mut checks = vec![
            ("mass", self.mass),
            ("gravity", self.gravity),
            ("thrust_coeff", self.thrust_coeff),
            ("arm_length", self.arm_length),
            ("drag_to_thrust", self.drag_to_thrust),
        ];
        for (i, j) in self.inertia.iter().enumerate() {
            checks.push(match i {
                0 => ("inertia[0]", *j),
                1 => ("inertia[1]", *j),
                _ => ("inertia[2]", *j),
            });
        }
        for (name, v) in checks {
            if !(v > 0.0) || !v.is_finite() {
                return Err(SimError::BadParams(format!("{name} must be positive, got {v}")));
            }
        }
        Ok(())
    }

    /// Rotor speed at which total thrust balances gravity.
    pub fn hover_speed(&self) -> f64 {
        (self.mass * self.gravity / (4.0 * self.thrust_coeff)).sqrt()
    }
}

/// Names of the twelve measured state channels, in state-vector order.
pub fn drone_state_names() -> Vec<String> {
    ["px", "py", "pz", "vx", "vy", "vz", "roll", "pitch", "yaw", "wx", "wy", "wz"]
        .iter()
        .map(|s| s.to_string())
        .collect()
}

pub fn drone_input_names() -> Vec<String> {
    ["u1", "u2", "u3", "u4"].iter().map(|s| s.to_string()).collect()
}

/// ZYX (yaw-pitch-roll) Euler angles to a body-to-inertial rotation matrix.
pub fn euler_to_rotation(angles: [f64; 3]) -> [[f64; 3]; 3] {
    let m = rotation_matrix(&angles);
    [
        [m[0], m[1], m[2]],
        [m[3], m[4], m[5]],
        [m[6], m[7], m[8]],
    ]
}

/// Euler-rate kinematic matrix; errors within [`GIMBAL_MARGIN`] of the pitch
/// singularity.
pub fn euler_rate_matrix(angles: [f64; 3]) -> Result<[[f64; 3]; 3], SimError> {
    if (angles[1].abs() - std::f64::consts::FRAC_PI_2).abs() < GIMBAL_MARGIN {
        return Err(SimError::GimbalLock { pitch: angles[1] });
    }
    let m = euler_rate_matrix_generic(&angles);
    Ok([
        [m[0], m[1], m[2]],
        [m[3], m[4], m[5]],
        [m[6], m[7], m[8]],
    ])
}

/// Full 12-state derivative; errors near gimbal lock and on negative rotor
/// speeds.
pub fn drone_derivative(
    state: [f64; 12],
    input: [f64; 4],
    params: &DroneParams,
) -> Result<[f64; 12], SimError> {
    params.validate()?;
    if (state[7].abs() - std::f64::consts::FRAC_PI_2).abs() < GIMBAL_MARGIN {
        return Err(SimError::GimbalLock { pitch: state[7] });
    }
    if input.iter().any(|u| !u.is_finite() || *u < 0.0) {
        return Err(SimError::BadParams(format!("rotor speeds must be >= 0, got {input:?}")));
    }
    Ok(drone_rates(&state, &input, params))
}

#[derive(Debug)]
pub struct DroneRun {
    pub trajectory: Trajectory,
    /// Index of the first dropped sample when the run was truncated early.
    pub truncated_at: Option<usize>,
}

/// Fixed-step RK4 simulation of the quadrotor.
///
/// Row `k` holds the rotor-speed command applied over `[t_k, t_k + T_s)` and
/// the full measured 12-state at `t_k`. The run fails with a truncation index
/// if any state magnitude exceeds `state_bound`, the pitch reaches the
/// Euler-rate singularity, or a value turns non-finite.
pub fn simulate_drone(
    params: &DroneParams,
    input_signal: &[[f64; 4]],
    sample_period: f64,
    x0: [f64; 12],
    state_bound: f64,
) -> Result<DroneRun, SimError> {
    params.validate()?;
    if !(sample_period > 0.0) {
        return Err(SimError::BadParams(format!(
            "sample_period must be positive, got {sample_period}"
        )));
    }
    if input_signal.is_empty() {
        return Err(SimError::BadParams("empty input signal".into()));
    }

    let mut x = x0;
    let mut inputs = Vec::with_capacity(input_signal.len());
    let mut outputs = Vec::with_capacity(input_signal.len());
    for (k, u) in input_signal.iter().enumerate() {
        if u.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(SimError::BadParams(format!("bad rotor command at sample {k}: {u:?}")));
        }
        let diverged = x.iter().any(|v| !v.is_finite() || v.abs() > state_bound)
            || (x[7].abs() - std::f64::consts::FRAC_PI_2).abs() < GIMBAL_MARGIN;
        if diverged {
            return Err(SimError::NumericFailure { step: k });
        }
        inputs.push(u.to_vec());
        outputs.push(x.to_vec());
        x = rk4_step(&x, sample_period, |s| drone_rates(s, u, params));
    }

    let trajectory = Trajectory::new(
        sample_period,
        drone_input_names(),
        drone_state_names(),
        inputs,
        outputs,
    )
    .map_err(|e| SimError::BadParams(e.to_string()))?;
    Ok(DroneRun { trajectory, truncated_at: None })
}
