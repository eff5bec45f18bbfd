use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::SimError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExcitationKind {
    Chirp,
    Random,
    Square,
    Constant,
}

/// Recipe for a deterministic excitation signal.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExcitationSpec {
    pub kind: ExcitationKind,
    pub amplitude_low: f64,
    pub amplitude_high: f64,
    pub duration_samples: usize,
    pub seed: u64,
    /// Sweep range in Hz, used when kind is chirp.
    pub chirp_hz: (f64, f64),
    /// Mean samples between switches of the square / random signals.
    pub dwell_samples: usize,
}

impl ExcitationSpec {
    pub fn new(kind: ExcitationKind, low: f64, high: f64, samples: usize, seed: u64) -> Self {
        ExcitationSpec {
            kind,
            amplitude_low: low,
            amplitude_high: high,
            duration_samples: samples,
            seed,
            chirp_hz: (0.0, 0.0),
            dwell_samples: 20,
        }
    }

    pub fn with_chirp_hz(mut self, low: f64, high: f64) -> Self {
        self.chirp_hz = (low, high);
        self
    }

    pub fn with_dwell(mut self, dwell: usize) -> Self {
        self.dwell_samples = dwell.max(1);
        self
    }

    pub fn validate(&self) -> Result<(), SimError> {
        if self.amplitude_low > self.amplitude_high {
            return Err(SimError::BadParams(format!(
                "amplitude_low {} > amplitude_high {}",
                self.amplitude_low, self.amplitude_high
            )));
        }
        if self.duration_samples < 1 {
            return Err(SimError::BadParams("duration_samples must be >= 1".into()));
        }
        if self.kind == ExcitationKind::Chirp && !(self.chirp_hz.1 > self.chirp_hz.0 && self.chirp_hz.0 > 0.0)
        {
            return Err(SimError::BadParams(format!(
                "chirp needs 0 < f0 < f1, got {:?}",
                self.chirp_hz
            )));
        }
        Ok(())
    }
}

/// Generates one excitation channel. Deterministic in (spec, seed):
/// chirp sweeps its frequency monotonically upward, square alternates between
/// the amplitude bounds with seeded dwell jitter, random holds seeded i.i.d.
/// uniform levels, constant holds the midpoint.
pub fn generate_excitation(spec: &ExcitationSpec, sample_period: f64) -> Result<Vec<f64>, SimError> {
    spec.validate()?;
    if !(sample_period > 0.0) {
        return Err(SimError::BadParams("sample_period must be positive".into()));
    }
    let n = spec.duration_samples;
    let mid = 0.5 * (spec.amplitude_low + spec.amplitude_high);
    let half = 0.5 * (spec.amplitude_high - spec.amplitude_low);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let signal = match spec.kind {
        ExcitationKind::Constant => vec![mid; n],
        ExcitationKind::Chirp => {
            let (f0, f1) = spec.chirp_hz;
            let total_t = n as f64 * sample_period;
            (0..n)
                .map(|k| {
                    let t = k as f64 * sample_period;
                    // instantaneous frequency rises linearly from f0 to f1
                    let phase = 2.0
                        * std::f64::consts::PI
                        * (f0 * t + 0.5 * (f1 - f0) * t * t / total_t);
                    mid + half * phase.sin()
                })
                .collect()
        }
        ExcitationKind::Square => {
            let mut out = Vec::with_capacity(n);
            let mut level_high = rng.gen::<bool>();
            let mut remaining = 0usize;
            for _ in 0..n {
                if remaining == 0 {
                    level_high = !level_high;
                    let jitter = rng.gen_range(0..=spec.dwell_samples);
                    remaining = (spec.dwell_samples / 2 + jitter).max(1);
                }
                out.push(if level_high { spec.amplitude_high } else { spec.amplitude_low });
                remaining -= 1;
            }
            out
        }
        ExcitationKind::Random => {
            let mut out = Vec::with_capacity(n);
            let mut level = mid;
            let mut remaining = 0usize;
            for _ in 0..n {
                if remaining == 0 {
                    level = rng.gen_range(spec.amplitude_low..=spec.amplitude_high);
                    let jitter = rng.gen_range(0..=spec.dwell_samples);
                    remaining = (spec.dwell_samples / 2 + jitter).max(1);
                }
                out.push(level);
                remaining -= 1;
            }
            out
        }
    };
    Ok(signal)
}
