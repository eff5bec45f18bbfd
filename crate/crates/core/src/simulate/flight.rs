use serde::{Deserialize, Serialize};

use crate::datamodel::Trajectory;

use super::drone::{drone_input_names, drone_state_names, DroneParams, DroneRun, GIMBAL_MARGIN};
use super::dynamics::{drone_rates, rk4_step};
use super::SimError;

/// Soft hold gains for the data-generation flight loop. The plant is
/// open-loop unstable, so recorded trajectories come from excitation
/// injected on top of a stabilizing hold, the way flight logs from a real
/// vehicle are recorded under its controller.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FlightGains {
    pub att_p: f64,
    pub att_d: f64,
    pub yaw_p: f64,
    pub yaw_d: f64,
    pub alt_p: f64,
    pub alt_d: f64,
    pub pos_p: f64,
    pub pos_d: f64,
}

impl Default for FlightGains {
    fn default() -> Self {
        FlightGains {
            att_p: 0.024,
            att_d: 0.0067,
            yaw_p: 0.23,
            yaw_d: 0.16,
            alt_p: 0.1,
            alt_d: 0.14,
            pos_p: 0.004,
            pos_d: 0.012,
        }
    }
}

/// Per-step command offsets in mixer space: thrust, roll, pitch, yaw.
pub type MixerOffsets = [f64; 4];

/// Mixes normalized offsets `[thrust, roll, pitch, yaw]` into the four motor
/// speeds around hover.
pub fn mix_commands(hover: f64, eps: MixerOffsets) -> [f64; 4] {
    let [t, r, p, y] = eps;
    [
        (hover * (1.0 + t - r - p - y)).max(0.0),
        (hover * (1.0 + t - r + p + y)).max(0.0),
        (hover * (1.0 + t + r + p - y)).max(0.0),
        (hover * (1.0 + t + r - p + y)).max(0.0),
    ]
}

/// Simulates a stabilized flight with excitation offsets injected into the
/// mixer, recording the actual motor commands and the full measured state.
/// The result is an ordinary input/state record: every recorded transition
/// satisfies the open-loop dynamics under the recorded commands.
pub fn simulate_drone_flight(
    params: &DroneParams,
    excitation: &[MixerOffsets],
    sample_period: f64,
    x0: [f64; 12],
    gains: &FlightGains,
    state_bound: f64,
) -> Result<DroneRun, SimError> {
    params.validate()?;
    if excitation.is_empty() {
        return Err(SimError::BadParams("empty excitation".into()));
    }
    let hover = params.hover_speed();
    let mut x = x0;
    let mut inputs = Vec::with_capacity(excitation.len());
    let mut outputs = Vec::with_capacity(excitation.len());
    for (k, exc) in excitation.iter().enumerate() {
        if x.iter().any(|v| !v.is_finite() || v.abs() > state_bound)
            || (x[7].abs() - std::f64::consts::FRAC_PI_2).abs() < GIMBAL_MARGIN
        {
            return Err(SimError::NumericFailure { step: k });
        }
        let (p, v, phi, w) = (&x[0..3], &x[3..6], &x[6..9], &x[9..12]);
        // soft position hold commands a small tilt against drift
        let tilt_x = -gains.pos_p * p[0] - gains.pos_d * v[0];
        let tilt_y = gains.pos_p * p[1] + gains.pos_d * v[1];
        let fb: MixerOffsets = [
            -gains.alt_p * p[2] - gains.alt_d * v[2],
            -gains.att_p * (phi[0] - tilt_y) - gains.att_d * w[0],
            -gains.att_p * (phi[1] - tilt_x) - gains.att_d * w[1],
            -gains.yaw_p * phi[2] - gains.yaw_d * w[2],
        ];
        let eps: MixerOffsets = std::array::from_fn(|i| fb[i] + exc[i]);
        let u = mix_commands(hover, eps);
        inputs.push(u.to_vec());
        outputs.push(x.to_vec());
        x = rk4_step(&x, sample_period, |s| drone_rates(s, &u, params));
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

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hold_keeps_the_hover_without_excitation() {
        let p = DroneParams::default();
        let exc = vec![[0.0; 4]; 2000];
        let run =
            simulate_drone_flight(&p, &exc, 0.01, [0.0; 12], &FlightGains::default(), 50.0)
                .unwrap();
        let last = run.trajectory.output_row(1999);
        for v in last {
            assert!(v.abs() < 1e-6, "state drifted: {v}");
        }
    }

    #[test]
    fn excited_flight_stays_bounded_and_moves() {
        let p = DroneParams::default();
        let exc: Vec<MixerOffsets> = (0..6000)
            .map(|k| {
                let t = k as f64 * 0.01;
                [
                    0.01 * (2.0 * t).sin(),
                    0.004 * (3.1 * t).sin(),
                    0.004 * (2.7 * t).cos(),
                    0.004 * (1.3 * t).sin(),
                ]
            })
            .collect();
        let run =
            simulate_drone_flight(&p, &exc, 0.01, [0.0; 12], &FlightGains::default(), 50.0)
                .unwrap();
        let traj = &run.trajectory;
        let mut max_tilt = 0.0f64;
        let mut max_speed = 0.0f64;
        for k in 0..traj.len() {
            let row = traj.output_row(k);
            max_tilt = max_tilt.max(row[6].abs()).max(row[7].abs());
            max_speed = max_speed.max(row[3].abs()).max(row[4].abs());
        }
        assert!(max_tilt < 0.5, "attitude ran away: {max_tilt}");
        assert!(max_speed > 1e-3, "flight never moved");
    }
}
