//! Synthetic data generation: ODE simulators for both benchmark plants plus
//! excitation-signal generators. All simulators integrate with fixed-step RK4
//! at the sample period and are deterministic given (params, spec, seed).

pub mod dynamics;
mod drone;
mod excitation;
mod flight;
mod tank;

pub use drone::{
    drone_derivative, drone_input_names, drone_state_names, euler_rate_matrix, euler_to_rotation,
    simulate_drone, DroneParams, DroneRun, GIMBAL_MARGIN,
};
pub use excitation::{generate_excitation, ExcitationKind, ExcitationSpec};
pub use flight::{mix_commands, simulate_drone_flight, FlightGains, MixerOffsets};
pub use tank::{simulate_tank, tank_derivative, TankParams, TankRun};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid simulator parameters: {0}")]
    BadParams(String),
    #[error("pitch {pitch} within the Euler-rate singularity margin")]
    GimbalLock { pitch: f64 },
    #[error("numeric failure at step {step}")]
    NumericFailure { step: usize },
}
