use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use super::DataError;

/// The closed set of model classes the search may visit.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelClass {
    VanillaRnn,
    Lstm,
    Gru,
    Cfc,
    GreyboxTank,
    PhysicsResidual,
    KinematicsLstm,
    EnsembleOfBest,
}

impl ModelClass {
    pub const ALL: [ModelClass; 8] = [
        ModelClass::VanillaRnn,
        ModelClass::Lstm,
        ModelClass::Gru,
        ModelClass::Cfc,
        ModelClass::GreyboxTank,
        ModelClass::PhysicsResidual,
        ModelClass::KinematicsLstm,
        ModelClass::EnsembleOfBest,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            ModelClass::VanillaRnn => "vanilla_rnn",
            ModelClass::Lstm => "lstm",
            ModelClass::Gru => "gru",
            ModelClass::Cfc => "cfc",
            ModelClass::GreyboxTank => "greybox_tank",
            ModelClass::PhysicsResidual => "physics_residual",
            ModelClass::KinematicsLstm => "kinematics_lstm",
            ModelClass::EnsembleOfBest => "ensemble_of_best",
        }
    }
}

impl fmt::Display for ModelClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Scalar value in a configuration's parameter maps.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ParamValue {
    Bool(bool),
    Int(i64),
    Float(f64),
    Text(String),
}

impl ParamValue {
    pub fn as_f64(&self) -> Option<f64> {
        match self {
            ParamValue::Int(v) => Some(*v as f64),
            ParamValue::Float(v) => Some(*v),
            _ => None,
        }
    }

    pub fn as_usize(&self) -> Option<usize> {
        match self {
            ParamValue::Int(v) if *v >= 0 => Some(*v as usize),
            _ => None,
        }
    }

    pub fn as_bool(&self) -> Option<bool> {
        match self {
            ParamValue::Bool(v) => Some(*v),
            _ => None,
        }
    }

    pub fn as_text(&self) -> Option<&str> {
        match self {
            ParamValue::Text(s) => Some(s),
            _ => None,
        }
    }
}

pub type ParamMap = BTreeMap<String, ParamValue>;

/// One point θ in the combinatorial search space: model class, architecture
/// hyperparameters, training hyperparameters, and the seed that fixes all
/// derived randomness.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SysIdConfiguration {
    pub model_class: ModelClass,
    pub arch: ParamMap,
    pub train: ParamMap,
    pub seed: u64,
}

#[derive(Clone, Copy)]
enum Kind {
    Bool,
    PosInt,
    Float { min: f64, max: f64, min_exclusive: bool },
    Text(&'static [&'static str]),
}

const UNIT_FLOAT: Kind = Kind::Float { min: 0.0, max: 1.0, min_exclusive: false };

fn arch_schema(class: ModelClass) -> &'static [(&'static str, Kind)] {
    const RECURRENT: &[(&str, Kind)] = &[
        ("hidden_size", Kind::PosInt),
        ("num_layers", Kind::PosInt),
        ("feedback", Kind::Bool),
        ("augment_inputs", Kind::Bool),
    ];
    const GREYBOX: &[(&str, Kind)] = &[
        (
            "fixed_initial_upper",
            Kind::Float { min: 0.0, max: f64::INFINITY, min_exclusive: false },
        ),
        // calibrated pump gain; anchors the scale of the unmeasured upper
        // level, which is otherwise unidentifiable from output data alone
        (
            "fixed_pump_gain",
            Kind::Float { min: 0.0, max: f64::INFINITY, min_exclusive: true },
        ),
        (
            "rate_init",
            Kind::Float { min: 0.0, max: f64::INFINITY, min_exclusive: true },
        ),
    ];
    const KINEMATICS: &[(&str, Kind)] = &[
        ("hidden_size", Kind::PosInt),
        ("num_layers", Kind::PosInt),
        ("augment_inputs", Kind::Bool),
    ];
    const ENSEMBLE: &[(&str, Kind)] = &[
        (
            "member_class",
            Kind::Text(&["vanilla_rnn", "lstm", "gru", "cfc", "kinematics_lstm"]),
        ),
        ("members", Kind::PosInt),
        ("hidden_size", Kind::PosInt),
        ("num_layers", Kind::PosInt),
        ("feedback", Kind::Bool),
        ("augment_inputs", Kind::Bool),
    ];
    match class {
        ModelClass::VanillaRnn | ModelClass::Lstm | ModelClass::Gru | ModelClass::Cfc => RECURRENT,
        ModelClass::GreyboxTank => GREYBOX,
        ModelClass::PhysicsResidual | ModelClass::KinematicsLstm => KINEMATICS,
        ModelClass::EnsembleOfBest => ENSEMBLE,
    }
}

fn train_schema() -> &'static [(&'static str, Kind)] {
    const TRAIN: &[(&str, Kind)] = &[
        ("loss", Kind::Text(&["mse", "mae"])),
        (
            "learning_rate",
            Kind::Float { min: 0.0, max: f64::INFINITY, min_exclusive: true },
        ),
        ("chunk_length", Kind::PosInt),
        (
            "epochs",
            Kind::Float { min: 0.0, max: 1e9, min_exclusive: false },
        ),
        ("batch_size", Kind::PosInt),
        (
            "weight_decay",
            Kind::Float { min: 0.0, max: f64::INFINITY, min_exclusive: false },
        ),
        ("dropout", UNIT_FLOAT),
        ("teacher_forcing_p0", UNIT_FLOAT),
        ("eval_cadence", Kind::PosInt),
        ("patience", Kind::PosInt),
        (
            "wall_budget_seconds",
            Kind::Float { min: 0.0, max: f64::INFINITY, min_exclusive: true },
        ),
    ];
    TRAIN
}

fn check_value(field: &str, value: &ParamValue, kind: Kind) -> Result<(), DataError> {
    let bad = |why: &str| {
        Err(DataError::Parse { field: field.to_string(), reason: why.to_string() })
    };
    match kind {
        Kind::Bool => {
            if value.as_bool().is_none() {
                return bad("expected a boolean");
            }
        }
        Kind::PosInt => match value {
            ParamValue::Int(v) if *v >= 1 => {}
            ParamValue::Int(_) => return bad("must be >= 1"),
            _ => return bad("expected an integer >= 1"),
        },
        Kind::Float { min, max, min_exclusive } => match value.as_f64() {
            Some(v) if v.is_finite() => {
                let low_ok = if min_exclusive { v > min } else { v >= min };
                if !low_ok || v > max {
                    return bad(&format!(
                        "value {v} outside {}{min}, {max}]",
                        if min_exclusive { "(" } else { "[" }
                    ));
                }
            }
            _ => return bad("expected a finite number"),
        },
        Kind::Text(allowed) => match value.as_text() {
            Some(s) if allowed.contains(&s) => {}
            Some(s) => return bad(&format!("{s:?} not one of {allowed:?}")),
            None => return bad("expected a string"),
        },
    }
    Ok(())
}

/// Whether `key` is a valid architecture parameter for the class.
pub fn is_known_arch_key(class: ModelClass, key: &str) -> bool {
    arch_schema(class).iter().any(|(name, _)| *name == key)
}

impl SysIdConfiguration {
    pub fn new(model_class: ModelClass, seed: u64) -> Self {
        SysIdConfiguration { model_class, arch: ParamMap::new(), train: ParamMap::new(), seed }
    }

    pub fn with_arch(mut self, key: &str, value: ParamValue) -> Self {
        self.arch.insert(key.to_string(), value);
        self
    }

    pub fn with_train(mut self, key: &str, value: ParamValue) -> Self {
        self.train.insert(key.to_string(), value);
        self
    }

    pub fn arch_usize(&self, key: &str, default: usize) -> usize {
        self.arch.get(key).and_then(ParamValue::as_usize).unwrap_or(default)
    }

    pub fn arch_bool(&self, key: &str, default: bool) -> bool {
        self.arch.get(key).and_then(ParamValue::as_bool).unwrap_or(default)
    }

    pub fn arch_f64(&self, key: &str) -> Option<f64> {
        self.arch.get(key).and_then(ParamValue::as_f64)
    }

    pub fn train_f64(&self, key: &str, default: f64) -> f64 {
        self.train.get(key).and_then(ParamValue::as_f64).unwrap_or(default)
    }

    pub fn train_usize(&self, key: &str, default: usize) -> usize {
        self.train.get(key).and_then(ParamValue::as_usize).unwrap_or(default)
    }

    /// Validates the closed schema: every key must be known for the class and
    /// every value in range.
    pub fn validate(&self) -> Result<(), DataError> {
        let schema = arch_schema(self.model_class);
        for (key, value) in &self.arch {
            match schema.iter().find(|(name, _)| name == key) {
                Some((_, kind)) => check_value(&format!("arch.{key}"), value, *kind)?,
                None => {
                    return Err(DataError::Parse {
                        field: format!("arch.{key}"),
                        reason: format!(
                            "unknown parameter for model class {}",
                            self.model_class
                        ),
                    })
                }
            }
        }
        for (key, value) in &self.train {
            match train_schema().iter().find(|(name, _)| name == key) {
                Some((_, kind)) => check_value(&format!("train.{key}"), value, *kind)?,
                None => {
                    return Err(DataError::Parse {
                        field: format!("train.{key}"),
                        reason: "unknown training parameter".to_string(),
                    })
                }
            }
        }
        Ok(())
    }
}

/// Canonical JSON serialization: sorted keys, minimal whitespace. Equal
/// configurations always produce identical bytes.
pub fn serialize_config(cfg: &SysIdConfiguration) -> Result<String, DataError> {
    cfg.validate()?;
    serde_json::to_string(cfg).map_err(|e| DataError::Invalid(e.to_string()))
}

/// Parses and validates a configuration from JSON text.
pub fn parse_config(text: &str) -> Result<SysIdConfiguration, DataError> {
    let value: serde_json::Value =
        serde_json::from_str(text).map_err(|e| DataError::Parse {
            field: "<json>".into(),
            reason: e.to_string(),
        })?;
    let obj = value.as_object().ok_or_else(|| DataError::Parse {
        field: "<json>".into(),
        reason: "expected a JSON object".into(),
    })?;
    for key in obj.keys() {
        if !matches!(key.as_str(), "model_class" | "arch" | "train" | "seed") {
            return Err(DataError::Parse {
                field: key.clone(),
                reason: "unknown top-level field".into(),
            });
        }
    }
    let cfg: SysIdConfiguration =
        serde_json::from_value(value).map_err(|e| {
            let msg = e.to_string();
            let field = if msg.contains("variant") {
                // the only enum in the schema
                "model_class"
            } else {
                "<json>"
            };
            DataError::Parse { field: field.into(), reason: msg }
        })?;
    cfg.validate()?;
    Ok(cfg)
}
