use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::datamodel::Trajectory;

use super::EvalError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Benchmark {
    Tank,
    Drone,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricId {
    /// Open-loop simulation RMSE over the whole validation segment.
    OpenLoopRmse,
    /// Mean absolute error over non-overlapping fixed-horizon windows,
    /// each initialized from the true state.
    WindowedMae,
}

/// How rollouts obtain their initial state.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitPolicy {
    /// A learned encoder consumes the window (window length > 1 typical).
    EncoderWindow,
    /// The measured state at the previous sample seeds the model directly.
    TrueState,
}

/// One contiguous sample range of a named source trajectory, 0-based,
/// together with the init window immediately preceding it.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Segment {
    pub traj: usize,
    pub start: usize,
    pub len: usize,
    pub init_start: usize,
    pub init_len: usize,
}

impl Segment {
    pub fn body(&self) -> std::ops::Range<usize> {
        self.start..self.start + self.len
    }

    pub fn init(&self) -> std::ops::Range<usize> {
        self.init_start..self.init_start + self.init_len
    }
}

/// One cross-validation round: train on `train`, score on `val`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldSplit {
    pub train: Vec<Segment>,
    pub val: Segment,
}

/// Immutable description of how data is split and scored. The content hash
/// covers the fold layout, every knob, and a digest of the source data, so a
/// ledger can prove the protocol never changed underneath a search.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalProtocol {
    pub benchmark: Benchmark,
    pub folds: Vec<FoldSplit>,
    pub init_window_len: usize,
    /// Rollout horizon for windowed metrics.
    pub horizon: usize,
    /// 1-based first retained sample for test-sequence RMSE scoring.
    pub test_discard_k0: usize,
    pub normalize_inputs: bool,
    pub metric: MetricId,
    pub init_policy: InitPolicy,
    /// Content digests of the source trajectories, in dataset order.
    pub data_digests: Vec<String>,
}

impl EvalProtocol {
    /// SHA-256 over the canonical JSON encoding.
    pub fn content_hash(&self) -> String {
        let json = serde_json::to_string(self).expect("protocol is serializable");
        let mut h = Sha256::new();
        h.update(json.as_bytes());
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn validate(&self, trajs: &[Trajectory]) -> Result<(), EvalError> {
        if trajs.len() != self.data_digests.len() {
            return Err(EvalError::Protocol(format!(
                "protocol lists {} trajectories, dataset has {}",
                self.data_digests.len(),
                trajs.len()
            )));
        }
        for (i, (t, d)) in trajs.iter().zip(&self.data_digests).enumerate() {
            if &t.content_digest() != d {
                return Err(EvalError::Protocol(format!(
                    "trajectory {i} does not match the protocol digest"
                )));
            }
        }
        for (fi, fold) in self.folds.iter().enumerate() {
            for seg in fold.train.iter().chain(std::iter::once(&fold.val)) {
                let t = trajs.get(seg.traj).ok_or_else(|| {
                    EvalError::Protocol(format!("fold {fi} references trajectory {}", seg.traj))
                })?;
                if seg.start + seg.len > t.len() || seg.init_start + seg.init_len > t.len() {
                    return Err(EvalError::Protocol(format!(
                        "fold {fi} segment out of bounds for trajectory {}",
                        seg.traj
                    )));
                }
            }
            // fold bodies must not overlap their own validation data
            for tr in &fold.train {
                if tr.traj == fold.val.traj {
                    let a = tr.body();
                    let b = fold.val.body();
                    if a.start < b.end && b.start < a.end {
                        return Err(EvalError::Protocol(format!(
                            "fold {fi}: train and validation segments overlap"
                        )));
                    }
                }
            }
        }
        Ok(())
    }
}

/// The benchmark-exact two-fold tank protocol over one 1024-sample record.
///
/// In 1-based sample numbers: fold 1 covers samples 6–515 with init window
/// 1–5; fold 2 covers samples 516–1024 with init window 511–515. Each round
/// trains on one fold body and validates on the other.
pub fn make_tank_folds(traj: &Trajectory) -> Result<EvalProtocol, EvalError> {
    if traj.len() != 1024 {
        return Err(EvalError::Protocol(format!(
            "the tank protocol is defined for exactly 1024 samples, got {}",
            traj.len()
        )));
    }
    // 0-based: fold 1 body [5, 515), window [0, 5); fold 2 body [515, 1024),
    // window [510, 515)
    let fold1 = Segment { traj: 0, start: 5, len: 510, init_start: 0, init_len: 5 };
    let fold2 = Segment { traj: 0, start: 515, len: 509, init_start: 510, init_len: 5 };
    let folds = vec![
        FoldSplit { train: vec![fold2.clone()], val: fold1.clone() },
        FoldSplit { train: vec![fold1], val: fold2 },
    ];
    Ok(EvalProtocol {
        benchmark: Benchmark::Tank,
        folds,
        init_window_len: 5,
        horizon: 0,
        test_discard_k0: 51,
        normalize_inputs: true,
        metric: MetricId::OpenLoopRmse,
        init_policy: InitPolicy::EncoderWindow,
        data_digests: vec![traj.content_digest()],
    })
}

/// Leave-one-trajectory-out protocol over exactly three training records:
/// fold k validates on trajectory k and trains on the other two.
pub fn make_drone_folds(trajs: &[Trajectory]) -> Result<EvalProtocol, EvalError> {
    if trajs.len() != 3 {
        return Err(EvalError::Protocol(format!(
            "the drone protocol needs exactly 3 training trajectories, got {}",
            trajs.len()
        )));
    }
    let whole = |i: usize| Segment {
        traj: i,
        start: 1,
        len: trajs[i].len() - 1,
        init_start: 0,
        init_len: 1,
    };
    let folds = (0..3)
        .map(|k| FoldSplit {
            train: (0..3).filter(|i| *i != k).map(whole).collect(),
            val: whole(k),
        })
        .collect();
    Ok(EvalProtocol {
        benchmark: Benchmark::Drone,
        folds,
        init_window_len: 1,
        horizon: 50,
        test_discard_k0: 1,
        normalize_inputs: true,
        metric: MetricId::WindowedMae,
        init_policy: InitPolicy::TrueState,
        data_digests: trajs.iter().map(|t| t.content_digest()).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tank_traj(n: usize) -> Trajectory {
        Trajectory::new(
            4.0,
            vec!["u".into()],
            vec!["y".into()],
            (0..n).map(|k| vec![k as f64]).collect(),
            (0..n).map(|k| vec![(k as f64).sin()]).collect(),
        )
        .unwrap()
    }

    fn drone_like(n: usize, tag: f64) -> Trajectory {
        Trajectory::new(
            0.01,
            vec!["u".into()],
            vec!["a".into(), "b".into()],
            (0..n).map(|k| vec![k as f64]).collect(),
            (0..n).map(|k| vec![tag, k as f64]).collect(),
        )
        .unwrap()
    }

    #[test]
    fn tank_folds_are_benchmark_exact() {
        let traj = tank_traj(1024);
        let p = make_tank_folds(&traj).unwrap();
        assert_eq!(p.folds.len(), 2);
        // 1-based samples 6..=515 and 516..=1024
        assert_eq!(p.folds[0].val.body(), 5..515);
        assert_eq!(p.folds[0].val.init(), 0..5);
        assert_eq!(p.folds[1].val.body(), 515..1024);
        assert_eq!(p.folds[1].val.init(), 510..515);
        assert_eq!(p.folds[0].val.len, 510);
        assert_eq!(p.folds[1].val.len, 509);
        // partition: window 1-5 plus both bodies tile 1..=1024 disjointly
        let mut covered = vec![false; 1024];
        for r in [0..5, p.folds[0].val.body(), p.folds[1].val.body()] {
            for i in r {
                assert!(!covered[i], "sample {} covered twice", i + 1);
                covered[i] = true;
            }
        }
        assert!(covered.iter().all(|c| *c));
        p.validate(&[traj]).unwrap();
    }

    #[test]
    fn tank_protocol_requires_1024_samples() {
        assert!(make_tank_folds(&tank_traj(1000)).is_err());
    }

    #[test]
    fn drone_folds_are_leave_one_out() {
        let trajs = vec![drone_like(100, 0.0), drone_like(100, 1.0), drone_like(100, 2.0)];
        let p = make_drone_folds(&trajs).unwrap();
        assert_eq!(p.folds.len(), 3);
        let mut val_count = [0usize; 3];
        let mut train_count = [0usize; 3];
        for (k, fold) in p.folds.iter().enumerate() {
            assert_eq!(fold.val.traj, k);
            val_count[fold.val.traj] += 1;
            assert_eq!(fold.train.len(), 2);
            for t in &fold.train {
                assert_ne!(t.traj, k);
                train_count[t.traj] += 1;
            }
        }
        assert_eq!(val_count, [1, 1, 1]);
        assert_eq!(train_count, [2, 2, 2]);
        p.validate(&trajs).unwrap();
    }

    #[test]
    fn reordering_trajectories_changes_the_hash() {
        let a = drone_like(50, 0.0);
        let b = drone_like(50, 1.0);
        let c = drone_like(50, 2.0);
        let h1 = make_drone_folds(&[a.clone(), b.clone(), c.clone()]).unwrap().content_hash();
        let h2 = make_drone_folds(&[b, a, c]).unwrap().content_hash();
        assert_ne!(h1, h2);
    }

    #[test]
    fn hash_is_stable_for_equal_protocols() {
        let traj = tank_traj(1024);
        let h1 = make_tank_folds(&traj).unwrap().content_hash();
        let h2 = make_tank_folds(&traj).unwrap().content_hash();
        assert_eq!(h1, h2);
    }
}
