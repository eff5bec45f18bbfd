use serde::{Deserialize, Serialize};

use super::trajectory::Trajectory;
use super::DataError;

/// Smallest scale used when a channel is (near-)constant, so normalization
/// stays exactly invertible.
pub const SCALE_FLOOR: f64 = 1e-6;

/// Per-channel affine statistics: `normalized = (x - mean) / scale`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChannelStats {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

impl ChannelStats {
    pub fn identity(width: usize) -> Self {
        ChannelStats { mean: vec![0.0; width], scale: vec![1.0; width] }
    }

    pub fn width(&self) -> usize {
        self.mean.len()
    }

    fn validate(&self) -> Result<(), DataError> {
        if self.mean.len() != self.scale.len() {
            return Err(DataError::Invalid("mean/scale length mismatch".into()));
        }
        if self.scale.iter().any(|s| !(*s > 0.0)) {
            return Err(DataError::Invalid("scales must be strictly positive".into()));
        }
        Ok(())
    }

    fn from_rows(rows: &[&[f64]]) -> Self {
        let width = rows.first().map(|r| r.len()).unwrap_or(0);
        let n = rows.len().max(1) as f64;
        let mut mean = vec![0.0; width];
        for r in rows {
            for (m, v) in mean.iter_mut().zip(*r) {
                *m += v;
            }
        }
        for m in &mut mean {
            *m /= n;
        }
        let mut var = vec![0.0; width];
        for r in rows {
            for ((s, v), m) in var.iter_mut().zip(*r).zip(&mean) {
                let d = v - m;
                *s += d * d;
            }
        }
        let scale = var
            .iter()
            .map(|s| (s / n).sqrt().max(SCALE_FLOOR))
            .collect();
        ChannelStats { mean, scale }
    }

    pub fn normalize_row(&self, row: &[f64]) -> Vec<f64> {
        row.iter()
            .zip(self.mean.iter().zip(&self.scale))
            .map(|(v, (m, s))| (v - m) / s)
            .collect()
    }

    pub fn denormalize_row(&self, row: &[f64]) -> Vec<f64> {
        row.iter()
            .zip(self.mean.iter().zip(&self.scale))
            .map(|(v, (m, s))| v * s + m)
            .collect()
    }
}

/// Channel-wise normalization for a trajectory's outputs and (optionally)
/// inputs, tagged with the data that produced it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormalizationStats {
    pub inputs: Option<ChannelStats>,
    pub outputs: ChannelStats,
    /// Which data produced these statistics.
    pub source: String,
}

impl NormalizationStats {
    /// Identity statistics (mean 0, scale 1): normalize is a no-op.
    pub fn identity(n_u: usize, n_y: usize, with_inputs: bool) -> Self {
        NormalizationStats {
            inputs: with_inputs.then(|| ChannelStats::identity(n_u)),
            outputs: ChannelStats::identity(n_y),
            source: "identity".into(),
        }
    }

    /// Computes statistics from the given sample ranges of one or more
    /// trajectories (typically the training folds only).
    pub fn from_segments(
        segments: &[(&Trajectory, std::ops::Range<usize>)],
        with_inputs: bool,
        source: impl Into<String>,
    ) -> Result<Self, DataError> {
        if segments.is_empty() {
            return Err(DataError::Invalid("no data to compute statistics from".into()));
        }
        let mut out_rows: Vec<&[f64]> = Vec::new();
        let mut in_rows: Vec<&[f64]> = Vec::new();
        for (traj, range) in segments {
            if range.end > traj.len() {
                return Err(DataError::Invalid(format!(
                    "segment {range:?} out of bounds for trajectory of length {}",
                    traj.len()
                )));
            }
            for k in range.clone() {
                out_rows.push(traj.output_row(k));
                if with_inputs {
                    in_rows.push(traj.input_row(k));
                }
            }
        }
        Ok(NormalizationStats {
            inputs: with_inputs.then(|| ChannelStats::from_rows(&in_rows)),
            outputs: ChannelStats::from_rows(&out_rows),
            source: source.into(),
        })
    }

    pub fn validate_for(&self, traj: &Trajectory) -> Result<(), DataError> {
        self.outputs.validate()?;
        if self.outputs.width() != traj.n_outputs() {
            return Err(DataError::Invalid(format!(
                "stats cover {} output channels but trajectory has {}",
                self.outputs.width(),
                traj.n_outputs()
            )));
        }
        if let Some(ins) = &self.inputs {
            ins.validate()?;
            if ins.width() != traj.n_inputs() {
                return Err(DataError::Invalid(format!(
                    "stats cover {} input channels but trajectory has {}",
                    ins.width(),
                    traj.n_inputs()
                )));
            }
        }
        Ok(())
    }
}

/// Applies channel-wise normalization: outputs always, inputs when input
/// statistics are present.
pub fn normalize(traj: &Trajectory, stats: &NormalizationStats) -> Result<Trajectory, DataError> {
    stats.validate_for(traj)?;
    let inputs = (0..traj.len())
        .map(|k| match &stats.inputs {
            Some(s) => s.normalize_row(traj.input_row(k)),
            None => traj.input_row(k).to_vec(),
        })
        .collect();
    let outputs = (0..traj.len())
        .map(|k| stats.outputs.normalize_row(traj.output_row(k)))
        .collect();
    Trajectory::new(
        traj.sample_period(),
        traj.input_names().to_vec(),
        traj.output_names().to_vec(),
        inputs,
        outputs,
    )
}

/// Exact inverse of [`normalize`] (to within 1e-12 for scales ≥ 1e-6).
pub fn denormalize(traj: &Trajectory, stats: &NormalizationStats) -> Result<Trajectory, DataError> {
    stats.validate_for(traj)?;
    let inputs = (0..traj.len())
        .map(|k| match &stats.inputs {
            Some(s) => s.denormalize_row(traj.input_row(k)),
            None => traj.input_row(k).to_vec(),
        })
        .collect();
    let outputs = (0..traj.len())
        .map(|k| stats.outputs.denormalize_row(traj.output_row(k)))
        .collect();
    Trajectory::new(
        traj.sample_period(),
        traj.input_names().to_vec(),
        traj.output_names().to_vec(),
        inputs,
        outputs,
    )
}
