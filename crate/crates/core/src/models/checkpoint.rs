use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::autodiff::ParamStore;
use crate::datamodel::SysIdConfiguration;

use super::{build_model, EnsembleModel, IoSpec, ModelError, SequenceModel};

/// Serialized trained model: enough to rebuild it exactly. Tensor data
/// round-trips value-exactly through JSON.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Checkpoint {
    Single {
        config: SysIdConfiguration,
        io: IoSpec,
        params: ParamStore,
    },
    /// Per-fold ensemble of one configuration.
    Ensemble {
        member_config: SysIdConfiguration,
        io: IoSpec,
        members: Vec<ParamStore>,
    },
}

impl Checkpoint {
    pub fn from_single(config: &SysIdConfiguration, model: &dyn SequenceModel) -> Checkpoint {
        Checkpoint::Single {
            config: config.clone(),
            io: model.io().clone(),
            params: model.params().clone(),
        }
    }

    pub fn from_fold_models(
        member_config: &SysIdConfiguration,
        models: &[Box<dyn SequenceModel>],
    ) -> Checkpoint {
        Checkpoint::Ensemble {
            member_config: member_config.clone(),
            io: models[0].io().clone(),
            members: models.iter().map(|m| m.params().clone()).collect(),
        }
    }

    pub fn build(&self) -> Result<Box<dyn SequenceModel>, ModelError> {
        match self {
            Checkpoint::Single { config, io, params } => {
                let mut model = build_model(config, io)?;
                model.set_params(params.clone())?;
                Ok(model)
            }
            Checkpoint::Ensemble { member_config, io, members } => {
                let built = members
                    .iter()
                    .map(|p| {
                        let mut m = build_model(member_config, io)?;
                        m.set_params(p.clone())?;
                        Ok(m)
                    })
                    .collect::<Result<Vec<_>, ModelError>>()?;
                Ok(Box::new(EnsembleModel::from_members(built)?))
            }
        }
    }
}

pub fn save_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<(), ModelError> {
    let text = serde_json::to_string(ckpt)
        .map_err(|e| ModelError::BadConfig(format!("checkpoint encode: {e}")))?;
    std::fs::write(path, text)
        .map_err(|e| ModelError::BadConfig(format!("{}: {e}", path.display())))?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint, ModelError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| ModelError::BadConfig(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text)
        .map_err(|e| ModelError::BadConfig(format!("checkpoint decode: {e}")))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datamodel::{ModelClass, ParamValue};

    #[test]
    fn checkpoint_roundtrip_is_bit_exact() {
        let cfg = SysIdConfiguration::new(ModelClass::Gru, 13)
            .with_arch("hidden_size", ParamValue::Int(5));
        let io = IoSpec::new(1, 1, 4.0, 5);
        let model = build_model(&cfg, &io).unwrap();
        let ckpt = Checkpoint::from_single(&cfg, model.as_ref());

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt.json");
        save_checkpoint(&path, &ckpt).unwrap();
        let loaded = load_checkpoint(&path).unwrap();
        let rebuilt = loaded.build().unwrap();
        assert_eq!(model.params(), rebuilt.params());
    }
}
