use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use sysid_core::datamodel::Trajectory;
use sysid_core::evaluate::{make_drone_folds, make_tank_folds, Benchmark, EvalProtocol};
use sysid_core::simulate::{DroneParams, TankParams};

/// Index of a generated dataset: file roles plus the generating recipe.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub benchmark: Benchmark,
    pub sample_period: f64,
    pub n_inputs: usize,
    pub seed: u64,
    pub train_files: Vec<String>,
    pub test_file: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tank_params: Option<TankParams>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub drone_params: Option<DroneParams>,
}

impl DatasetManifest {
    pub fn save(&self, dir: &Path) -> Result<()> {
        let path = dir.join("dataset.json");
        std::fs::write(&path, serde_json::to_string_pretty(self)?)
            .with_context(|| format!("writing {}", path.display()))?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<DatasetManifest> {
        let path = dir.join("dataset.json");
        let text = std::fs::read_to_string(&path)
            .with_context(|| format!("reading {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
    }

    pub fn train_paths(&self, dir: &Path) -> Vec<PathBuf> {
        self.train_files.iter().map(|f| dir.join(f)).collect()
    }

    pub fn test_path(&self, dir: &Path) -> PathBuf {
        dir.join(&self.test_file)
    }

    /// Loads the training trajectories in manifest order.
    pub fn load_train(&self, dir: &Path) -> Result<Vec<Trajectory>> {
        self.train_paths(dir)
            .iter()
            .map(|p| {
                Trajectory::load_csv(p, self.n_inputs)
                    .with_context(|| format!("loading {}", p.display()))
            })
            .collect()
    }

    pub fn load_test(&self, dir: &Path) -> Result<Trajectory> {
        let p = self.test_path(dir);
        Trajectory::load_csv(&p, self.n_inputs).with_context(|| format!("loading {}", p.display()))
    }

    /// Builds the benchmark protocol over the training data.
    pub fn protocol(&self, train: &[Trajectory]) -> Result<EvalProtocol> {
        match self.benchmark {
            Benchmark::Tank => {
                if train.len() != 1 {
                    bail!("tank protocol expects one training record, found {}", train.len());
                }
                Ok(make_tank_folds(&train[0])?)
            }
            Benchmark::Drone => Ok(make_drone_folds(train)?),
        }
    }
}

