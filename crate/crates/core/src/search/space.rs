use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::datamodel::{ModelClass, ParamMap, ParamValue, SysIdConfiguration};

use super::SearchError;

/// Random-search sampling ranges: model class uniform over the listed
/// choices, sizes uniform-integer, learning rate and weight decay
/// log-uniform, dropout uniform.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RandomSearchSpace {
    pub classes: Vec<ModelClass>,
    pub hidden: (usize, usize),
    pub layers: (usize, usize),
    pub learning_rate: (f64, f64),
    pub dropout: (f64, f64),
    pub weight_decay: (f64, f64),
    /// Training keys shared by every draw (epochs, budgets, chunking).
    pub base_train: ParamMap,
    /// Architecture keys shared by every draw (feedback, augmentation).
    pub base_arch: ParamMap,
    pub seed: u64,
}

impl RandomSearchSpace {
    /// The drone baseline space: autoregressive LSTM vs physics-residual
    /// LSTM over capacity, depth, and regularization knobs.
    pub fn drone_default(seed: u64) -> Self {
        let mut base_arch = ParamMap::new();
        base_arch.insert("feedback".into(), ParamValue::Bool(true));
        RandomSearchSpace {
            classes: vec![ModelClass::Lstm, ModelClass::PhysicsResidual],
            hidden: (16, 128),
            layers: (1, 3),
            learning_rate: (1e-4, 1e-2),
            dropout: (0.0, 0.3),
            weight_decay: (1e-6, 1e-3),
            base_train: ParamMap::new(),
            base_arch,
            seed,
        }
    }

    pub fn validate(&self) -> Result<(), SearchError> {
        if self.classes.is_empty() {
            return Err(SearchError::BadSpace("no model classes to sample".into()));
        }
        if self.hidden.0 > self.hidden.1 || self.hidden.0 < 1 {
            return Err(SearchError::BadSpace(format!("bad hidden range {:?}", self.hidden)));
        }
        if self.layers.0 > self.layers.1 || self.layers.0 < 1 {
            return Err(SearchError::BadSpace(format!("bad layer range {:?}", self.layers)));
        }
        for (name, (lo, hi)) in
            [("learning_rate", self.learning_rate), ("weight_decay", self.weight_decay)]
        {
            if !(lo > 0.0) || lo > hi {
                return Err(SearchError::BadSpace(format!("bad log-uniform range {name}: {lo}..{hi}")));
            }
        }
        if self.dropout.0 > self.dropout.1 || self.dropout.0 < 0.0 || self.dropout.1 >= 1.0 {
            return Err(SearchError::BadSpace(format!("bad dropout range {:?}", self.dropout)));
        }
        Ok(())
    }
}

fn log_uniform(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    if lo == hi {
        return lo;
    }
    let (a, b) = (lo.ln(), hi.ln());
    (a + rng.gen::<f64>() * (b - a)).exp()
}

fn int_uniform(rng: &mut ChaCha8Rng, lo: usize, hi: usize) -> usize {
    if lo == hi {
        lo
    } else {
        rng.gen_range(lo..=hi)
    }
}

/// Deterministic draw: the stream is keyed by (space seed, draw index), so
/// draw k is the same no matter how many draws preceded it.
pub fn sample_random_config(
    space: &RandomSearchSpace,
    draw_index: u64,
) -> Result<SysIdConfiguration, SearchError> {
    space.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(space.seed);
    rng.set_stream(draw_index.wrapping_add(1));

    let class = space.classes[rng.gen_range(0..space.classes.len())];
    let hidden = int_uniform(&mut rng, space.hidden.0, space.hidden.1);
    let layers = int_uniform(&mut rng, space.layers.0, space.layers.1);
    let lr = log_uniform(&mut rng, space.learning_rate.0, space.learning_rate.1);
    let dropout = if space.dropout.0 == space.dropout.1 {
        space.dropout.0
    } else {
        rng.gen_range(space.dropout.0..space.dropout.1)
    };
    let wd = log_uniform(&mut rng, space.weight_decay.0, space.weight_decay.1);
    let model_seed: u64 = rng.gen();

    let mut cfg = SysIdConfiguration::new(class, model_seed);
    // shared architecture keys apply only where the class knows them
    // (feedback is structural for the hybrid drone models, for example)
    cfg.arch = space
        .base_arch
        .iter()
        .filter(|(k, _)| crate::datamodel::is_known_arch_key(class, k))
        .map(|(k, v)| (k.clone(), v.clone()))
        .collect();
    cfg.arch.insert("hidden_size".into(), ParamValue::Int(hidden as i64));
    cfg.arch.insert("num_layers".into(), ParamValue::Int(layers as i64));
    cfg.train = space.base_train.clone();
    cfg.train.insert("learning_rate".into(), ParamValue::Float(lr));
    cfg.train.insert("dropout".into(), ParamValue::Float(dropout));
    cfg.train.insert("weight_decay".into(), ParamValue::Float(wd));
    cfg.validate().map_err(|e| SearchError::BadSpace(e.to_string()))?;
    Ok(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn point_space() -> RandomSearchSpace {
        RandomSearchSpace {
            classes: vec![ModelClass::Lstm],
            hidden: (8, 8),
            layers: (2, 2),
            learning_rate: (1e-3, 1e-3),
            dropout: (0.1, 0.1),
            weight_decay: (1e-5, 1e-5),
            base_train: ParamMap::new(),
            base_arch: ParamMap::new(),
            seed: 4,
        }
    }

    #[test]
    fn degenerate_space_yields_the_single_point() {
        let cfg = sample_random_config(&point_space(), 0).unwrap();
        assert_eq!(cfg.model_class, ModelClass::Lstm);
        assert_eq!(cfg.arch_usize("hidden_size", 0), 8);
        assert_eq!(cfg.arch_usize("num_layers", 0), 2);
        assert_eq!(cfg.train_f64("learning_rate", 0.0), 1e-3);
        assert_eq!(cfg.train_f64("dropout", 0.0), 0.1);
        assert_eq!(cfg.train_f64("weight_decay", 0.0), 1e-5);
    }

    #[test]
    fn same_seed_and_index_repeat_exactly() {
        let space = RandomSearchSpace::drone_default(9);
        for i in 0..20 {
            assert_eq!(
                sample_random_config(&space, i).unwrap(),
                sample_random_config(&space, i).unwrap()
            );
        }
        assert_ne!(
            sample_random_config(&space, 0).unwrap(),
            sample_random_config(&space, 1).unwrap()
        );
    }

    #[test]
    fn learning_rate_decades_are_uniformly_hit() {
        // log-uniform over [1e-4, 1e-1]: the three decades should each catch
        // about a third of 10 000 draws (within 5% of the expected count)
        let space = RandomSearchSpace {
            learning_rate: (1e-4, 1e-1),
            ..RandomSearchSpace::drone_default(31)
        };
        let mut counts = [0usize; 3];
        for i in 0..10_000 {
            let lr = sample_random_config(&space, i).unwrap().train_f64("learning_rate", 0.0);
            let decade = if lr < 1e-3 {
                0
            } else if lr < 1e-2 {
                1
            } else {
                2
            };
            counts[decade] += 1;
        }
        let expected = 10_000.0 / 3.0;
        for c in counts {
            let dev = (c as f64 - expected).abs() / expected;
            assert!(dev < 0.05, "decade count {c} deviates {dev:.3} from uniform");
        }
    }
}
