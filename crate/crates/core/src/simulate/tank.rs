use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::datamodel::Trajectory;

use super::dynamics::{rk4_step, tank_rates};
use super::SimError;

/// Physical coefficients of the cascaded two-tank plant.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TankParams {
    /// Upper-tank outflow coefficient (1/s scaled).
    pub k1: f64,
    /// Lower-tank inflow coefficient.
    pub k2: f64,
    /// Lower-tank outflow coefficient.
    pub k3: f64,
    /// Pump gain.
    pub k4: f64,
    /// Hard saturation ceiling for each tank level.
    pub level_max: f64,
    /// Upper-tank overflow spills into the lower tank when saturated.
    pub overflow_coupling: bool,
}

impl Default for TankParams {
    fn default() -> Self {
        // slow drainage relative to the 4 s sampling, k2 <= k3 so the
        // no-input trajectory from equal levels is dissipative
        TankParams {
            k1: 0.03,
            k2: 0.02,
            k3: 0.025,
            k4: 0.01,
            level_max: 1.0,
            overflow_coupling: true,
        }
    }
}

impl TankParams {
    pub fn validate(&self) -> Result<(), SimError> {
        for (name, v) in [
            ("k1", self.k1),
            ("k2", self.k2),
            ("k3", self.k3),
            ("k4", self.k4),
            ("level_max", self.level_max),
        ] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(SimError::BadParams(format!("{name} must be positive, got {v}")));
            }
        }
        Ok(())
    }

    /// Steady state for a constant input inside the saturation limits:
    /// `x1* = (k4 u / k1)^2`, `x2* = (k2 sqrt(x1*) / k3)^2`.
    pub fn equilibrium(&self, u: f64) -> [f64; 2] {
        let x1 = (self.k4 * u / self.k1).powi(2);
        let x2 = (self.k2 * x1.sqrt() / self.k3).powi(2);
        [x1, x2]
    }
}

/// Time derivative of the tank state; rejects non-finite arguments and
/// clamps negative levels to zero before the square root.
pub fn tank_derivative(state: [f64; 2], input: f64, params: &TankParams) -> Result<[f64; 2], SimError> {
    if !input.is_finite() || state.iter().any(|v| !v.is_finite()) {
        return Err(SimError::BadParams(format!(
            "non-finite tank derivative arguments: state {state:?}, input {input}"
        )));
    }
    Ok(tank_rates(&state, &input, params))
}

/// Simulation result carrying the public trajectory plus the full internal
/// state sequence for oracle checks.
pub struct TankRun {
    pub trajectory: Trajectory,
    /// `[x1, x2]` at every sample instant, aligned with trajectory rows.
    pub states: Vec<[f64; 2]>,
}

/// Fixed-step RK4 simulation of the tank plant.
///
/// Row `k` of the result holds the input applied over `[t_k, t_k + T_s)` and
/// the lower-tank level at `t_k`; levels are clamped into `[0, level_max]`
/// after every step. `noise_sigma > 0` adds seeded i.i.d. Gaussian noise to
/// the measured output only.
pub fn simulate_tank(
    params: &TankParams,
    input_signal: &[f64],
    sample_period: f64,
    x0: [f64; 2],
    noise_sigma: f64,
    noise_seed: u64,
) -> Result<TankRun, SimError> {
    params.validate()?;
    if !(sample_period > 0.0) {
        return Err(SimError::BadParams(format!(
            "sample_period must be positive, got {sample_period}"
        )));
    }
    if x0.iter().any(|v| !(0.0..=params.level_max).contains(v)) {
        return Err(SimError::BadParams(format!(
            "x0 {x0:?} outside [0, {}]",
            params.level_max
        )));
    }
    if input_signal.is_empty() {
        return Err(SimError::BadParams("empty input signal".into()));
    }
    if input_signal.iter().any(|v| !v.is_finite()) {
        return Err(SimError::BadParams("non-finite input sample".into()));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(noise_seed);
    let mut x = x0;
    let mut states = Vec::with_capacity(input_signal.len());
    let mut outputs = Vec::with_capacity(input_signal.len());
    for (k, &u) in input_signal.iter().enumerate() {
        states.push(x);
        let mut y = x[1];
        if noise_sigma > 0.0 {
            y += noise_sigma * gaussian(&mut rng);
        }
        outputs.push(vec![y]);
        let next = rk4_step(&x, sample_period, |s| tank_rates(s, &u, params));
        x = [
            next[0].clamp(0.0, params.level_max),
            next[1].clamp(0.0, params.level_max),
        ];
        if x.iter().any(|v| !v.is_finite()) {
            return Err(SimError::NumericFailure { step: k });
        }
    }

    let inputs = input_signal.iter().map(|u| vec![*u]).collect();
    let trajectory = Trajectory::new(
        sample_period,
        vec!["u".into()],
        vec!["y".into()],
        inputs,
        outputs,
    )
    .map_err(|e| SimError::BadParams(e.to_string()))?;
    Ok(TankRun { trajectory, states })
}

fn gaussian(rng: &mut ChaCha8Rng) -> f64 {
    // Box-Muller; two uniform draws per sample keep the stream deterministic
    let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}
