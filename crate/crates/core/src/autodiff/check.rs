use std::collections::BTreeMap;

use super::store::ParamStore;
use super::tape::{NodeId, Tape};
use super::AutodiffError;

/// Outcome of a finite-difference gradient audit.
#[derive(Debug, Clone)]
pub struct FdReport {
    /// Worst relative error over all parameter coordinates.
    pub max_rel_error: f64,
    /// Parameter name and flat coordinate where the worst error occurred.
    pub worst: Option<(String, usize)>,
    pub coords_checked: usize,
}

/// Compares the tape gradient of a scalar-valued function against central
/// finite differences, coordinate by coordinate.
///
/// `build` must deterministically construct the loss from bound parameters:
/// it is re-run twice per coordinate for the perturbed evaluations plus once
/// for the analytic gradient. Relative error uses the denominator
/// `max(|analytic|, |numeric|, 1e-8)`.
pub fn finite_difference_check<F>(
    build: F,
    params: &ParamStore,
    epsilon: f64,
) -> Result<FdReport, AutodiffError>
where
    F: Fn(&Tape, &BTreeMap<String, NodeId>) -> Result<NodeId, AutodiffError>,
{
    if !(1e-7..=1e-3).contains(&epsilon) {
        return Err(AutodiffError::BadShape(format!(
            "epsilon {epsilon} outside [1e-7, 1e-3]"
        )));
    }

    let eval = |p: &ParamStore| -> Result<f64, AutodiffError> {
        let tape = Tape::new();
        let bound = bind_all(&tape, p);
        let loss = build(&tape, &bound)?;
        let v = tape.scalar_value(loss);
        if !v.is_finite() {
            return Err(AutodiffError::NonFinite(
                "finite-difference evaluation produced a non-finite loss".into(),
            ));
        }
        Ok(v)
    };

    // Analytic gradients once.
    let tape = Tape::new();
    let bound = bind_all(&tape, params);
    let loss = build(&tape, &bound)?;
    let grads = tape.backward(loss)?;

    let mut max_rel = 0.0f64;
    let mut worst = None;
    let mut coords = 0usize;

    for (name, tensor) in params.iter() {
        let id = bound[name];
        let analytic = grads.get_or_zeros(id, tensor.shape());
        for i in 0..tensor.len() {
            let mut plus = params.clone();
            plus.tensor_mut(name).unwrap().data_mut()[i] += epsilon;
            let mut minus = params.clone();
            minus.tensor_mut(name).unwrap().data_mut()[i] -= epsilon;
            let fp = eval(&plus).map_err(|e| at_coord(e, name, i))?;
            let fm = eval(&minus).map_err(|e| at_coord(e, name, i))?;
            let numeric = (fp - fm) / (2.0 * epsilon);
            let a = analytic.data()[i];
            let denom = a.abs().max(numeric.abs()).max(1e-8);
            let rel = (a - numeric).abs() / denom;
            if rel > max_rel {
                max_rel = rel;
                worst = Some((name.clone(), i));
            }
            coords += 1;
        }
    }

    Ok(FdReport { max_rel_error: max_rel, worst, coords_checked: coords })
}

fn at_coord(e: AutodiffError, name: &str, i: usize) -> AutodiffError {
    AutodiffError::NonFinite(format!("{e} (while perturbing {name}[{i}])"))
}

/// Binds every tensor in the store as a differentiable leaf.
pub fn bind_all(tape: &Tape, params: &ParamStore) -> BTreeMap<String, NodeId> {
    params
        .iter()
        .map(|(name, t)| (name.clone(), tape.param(t.clone())))
        .collect()
}
