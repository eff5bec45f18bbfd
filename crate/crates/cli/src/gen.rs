use std::path::Path;

use anyhow::{Context, Result};
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use sysid_core::datamodel::Trajectory;
use sysid_core::evaluate::Benchmark;
use sysid_core::simulate::{
    generate_excitation, simulate_drone_flight, simulate_tank, DroneParams, ExcitationKind,
    ExcitationSpec, FlightGains, MixerOffsets, TankParams, TankRun,
};

use crate::dataset::DatasetManifest;

pub struct TankArtifacts {
    pub train: TankRun,
    pub test: TankRun,
}

/// Tank data: a random-step training record and a swept-sine test record,
/// both from empty tanks.
pub fn generate_tank(
    params: &TankParams,
    samples: usize,
    sample_period: f64,
    seed: u64,
    noise_sigma: f64,
) -> Result<TankArtifacts> {
    let train_exc = generate_excitation(
        &ExcitationSpec::new(ExcitationKind::Random, 0.0, 1.0, samples, seed).with_dwell(12),
        sample_period,
    )?;
    let test_exc = generate_excitation(
        &ExcitationSpec::new(ExcitationKind::Chirp, 0.0, 1.0, samples, seed ^ 0x9e37)
            .with_chirp_hz(0.0005, 0.008),
        sample_period,
    )?;
    let train = simulate_tank(params, &train_exc, sample_period, [0.0, 0.0], noise_sigma, seed)?;
    let test = simulate_tank(
        params,
        &test_exc,
        sample_period,
        [0.0, 0.0],
        noise_sigma,
        seed.wrapping_add(1),
    )?;
    Ok(TankArtifacts { train, test })
}

fn offsets_from(
    kind: ExcitationKind,
    samples: usize,
    sample_period: f64,
    seed: u64,
) -> Result<Vec<MixerOffsets>> {
    // one independent signal per mixer axis, scaled to keep the hold loop
    // comfortably inside its attitude envelope
    let amps = [0.02, 0.004, 0.004, 0.003];
    let mut chans: Vec<Vec<f64>> = Vec::with_capacity(4);
    for (i, amp) in amps.iter().enumerate() {
        let spec = match kind {
            ExcitationKind::Chirp => {
                ExcitationSpec::new(ExcitationKind::Chirp, -amp, *amp, samples, seed + i as u64)
                    .with_chirp_hz(0.15 + 0.07 * i as f64, 1.8 + 0.3 * i as f64)
            }
            ExcitationKind::Random => {
                ExcitationSpec::new(ExcitationKind::Random, -amp, *amp, samples, seed + i as u64)
                    .with_dwell(30)
            }
            ExcitationKind::Square => {
                ExcitationSpec::new(ExcitationKind::Square, -amp, *amp, samples, seed + i as u64)
                    .with_dwell(60)
            }
            ExcitationKind::Constant => {
                ExcitationSpec::new(ExcitationKind::Constant, 0.0, 0.0, samples, seed)
            }
        };
        chans.push(generate_excitation(&spec, sample_period)?);
    }
    Ok((0..samples).map(|k| std::array::from_fn(|i| chans[i][k])).collect())
}

/// Held-out test excitation: a pattern distinct from the three training
/// kinds (a two-tone weave with a slow square envelope).
fn test_offsets(samples: usize, sample_period: f64, seed: u64) -> Result<Vec<MixerOffsets>> {
    let square = generate_excitation(
        &ExcitationSpec::new(ExcitationKind::Square, 0.4, 1.0, samples, seed).with_dwell(220),
        sample_period,
    )?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    use rand::Rng;
    let phases: [f64; 4] = std::array::from_fn(|_| rng.gen_range(0.0..std::f64::consts::TAU));
    let amps = [0.016, 0.0035, 0.0035, 0.0025];
    let freqs = [(0.4, 1.1), (0.5, 1.37), (0.61, 0.23), (0.3, 0.83)];
    Ok((0..samples)
        .map(|k| {
            let t = k as f64 * sample_period;
            std::array::from_fn(|i| {
                let (f1, f2) = freqs[i];
                let tone = ((std::f64::consts::TAU * f1 * t + phases[i]).sin()
                    + (std::f64::consts::TAU * f2 * t).sin())
                    / 2.0;
                amps[i] * tone * square[k]
            })
        })
        .collect())
}

pub struct DroneArtifacts {
    pub train: Vec<Trajectory>,
    pub test: Trajectory,
}

/// Drone data: chirp, random, and square training flights plus a held-out
/// test flight, all flown under the stabilizing hold.
pub fn generate_drone(
    params: &DroneParams,
    train_samples: usize,
    test_samples: usize,
    sample_period: f64,
    seed: u64,
) -> Result<DroneArtifacts> {
    let gains = FlightGains::default();
    let kinds = [ExcitationKind::Chirp, ExcitationKind::Random, ExcitationKind::Square];
    let mut train = Vec::with_capacity(3);
    for (i, kind) in kinds.iter().enumerate() {
        let offs = offsets_from(*kind, train_samples, sample_period, seed + 100 * i as u64)?;
        let run = simulate_drone_flight(params, &offs, sample_period, [0.0; 12], &gains, 100.0)?;
        train.push(run.trajectory);
    }
    let offs = test_offsets(test_samples, sample_period, seed ^ 0x5151)?;
    let test = simulate_drone_flight(params, &offs, sample_period, [0.0; 12], &gains, 100.0)?
        .trajectory;
    Ok(DroneArtifacts { train, test })
}

pub fn write_tank_dataset(
    dir: &Path,
    params: &TankParams,
    artifacts: &TankArtifacts,
    sample_period: f64,
    seed: u64,
) -> Result<DatasetManifest> {
    artifacts
        .train
        .trajectory
        .save_csv(&dir.join("tank_train.csv"))
        .context("writing tank_train.csv")?;
    artifacts
        .test
        .trajectory
        .save_csv(&dir.join("tank_test.csv"))
        .context("writing tank_test.csv")?;
    let manifest = DatasetManifest {
        benchmark: Benchmark::Tank,
        sample_period,
        n_inputs: 1,
        seed,
        train_files: vec!["tank_train.csv".into()],
        test_file: "tank_test.csv".into(),
        tank_params: Some(params.clone()),
        drone_params: None,
    };
    manifest.save(dir)?;
    Ok(manifest)
}

pub fn write_drone_dataset(
    dir: &Path,
    params: &DroneParams,
    artifacts: &DroneArtifacts,
    sample_period: f64,
    seed: u64,
) -> Result<DatasetManifest> {
    let names = ["drone_chirp.csv", "drone_random.csv", "drone_square.csv"];
    for (name, traj) in names.iter().zip(&artifacts.train) {
        traj.save_csv(&dir.join(name)).with_context(|| format!("writing {name}"))?;
    }
    artifacts.test.save_csv(&dir.join("drone_test.csv")).context("writing drone_test.csv")?;
    let manifest = DatasetManifest {
        benchmark: Benchmark::Drone,
        sample_period,
        n_inputs: 4,
        seed,
        train_files: names.iter().map(|s| s.to_string()).collect(),
        test_file: "drone_test.csv".into(),
        tank_params: None,
        drone_params: Some(params.clone()),
    };
    manifest.save(dir)?;
    Ok(manifest)
}
