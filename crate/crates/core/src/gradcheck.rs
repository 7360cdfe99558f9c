//! Finite-difference verification of tape gradients.
//!
//! The checker rebuilds the forward pass from scratch for every probe, so
//! it exercises only the forward path and stays independent of the
//! backward implementation it validates.

use crate::error::Result;
use crate::matrix::Matrix;
use crate::tape::{Tape, ValueId};

/// Elements where |analytic| + |numeric| falls below this are skipped:
/// the relative error of two near-zeros is noise.
pub const MAGNITUDE_FLOOR: f64 = 1e-8;

/// Default acceptance threshold on the relative error.
pub const DEFAULT_THRESHOLD: f64 = 1e-4;

/// Default central-difference step.
pub const DEFAULT_STEP: f64 = 1e-5;

/// Per-tensor outcome of a gradient check.
#[derive(Debug, Clone)]
pub struct TensorCheck {
    pub name: String,
    pub max_rel_err: f64,
    /// Flat index of the worst element.
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

/// Full report over all checked leaves.
#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub per_tensor: Vec<TensorCheck>,
    pub threshold: f64,
}

impl GradCheckReport {
    pub fn max_rel_err(&self) -> f64 {
        self.per_tensor
            .iter()
            .map(|t| t.max_rel_err)
            .fold(0.0, f64::max)
    }

    pub fn passed(&self) -> bool {
        self.max_rel_err() < self.threshold
    }

    /// Tensor with the largest relative error, if any were checked.
    pub fn worst(&self) -> Option<&TensorCheck> {
        self.per_tensor
            .iter()
            .max_by(|a, b| a.max_rel_err.total_cmp(&b.max_rel_err))
    }
}

fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let mag = analytic.abs() + numeric.abs();
    if mag < MAGNITUDE_FLOOR {
        0.0
    } else {
        (analytic - numeric).abs() / mag
    }
}

/// Compare analytic gradients of a scalar readout against central finite
/// differences for every element of every named leaf.
///
/// `build` receives a fresh tape plus the leaf ids in declaration order
/// and must return the scalar loss node. It is invoked once for the
/// analytic pass and twice per probed element.
pub fn check_gradients<F>(
    leaves: &[(String, Matrix<f64>)],
    step: f64,
    threshold: f64,
    build: F,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape<f64>, &[ValueId]) -> Result<ValueId>,
{
    let forward = |values: &[Matrix<f64>]| -> Result<f64> {
        let mut tape = Tape::new();
        let ids: Vec<ValueId> = values.iter().map(|m| tape.leaf(m.clone())).collect();
        let loss = build(&mut tape, &ids)?;
        Ok(tape.scalar_value(loss))
    };

    // Analytic pass.
    let mut tape = Tape::new();
    let ids: Vec<ValueId> = leaves.iter().map(|(_, m)| tape.leaf(m.clone())).collect();
    let loss = build(&mut tape, &ids)?;
    tape.backward(loss)?;
    let analytic: Vec<Matrix<f64>> = ids
        .iter()
        .map(|&id| tape.grad(id).unwrap().clone())
        .collect();

    let base: Vec<Matrix<f64>> = leaves.iter().map(|(_, m)| m.clone()).collect();
    let mut per_tensor = Vec::with_capacity(leaves.len());

    for (ti, (name, _)) in leaves.iter().enumerate() {
        let mut check = TensorCheck {
            name: name.clone(),
            max_rel_err: 0.0,
            worst_index: 0,
            analytic: 0.0,
            numeric: 0.0,
        };
        for flat in 0..base[ti].len() {
            let mut plus = base.clone();
            plus[ti].as_mut_slice()[flat] += step;
            let mut minus = base.clone();
            minus[ti].as_mut_slice()[flat] -= step;
            let numeric = (forward(&plus)? - forward(&minus)?) / (2.0 * step);
            let a = analytic[ti].as_slice()[flat];
            let err = relative_error(a, numeric);
            if err > check.max_rel_err {
                check.max_rel_err = err;
                check.worst_index = flat;
                check.analytic = a;
                check.numeric = numeric;
            }
        }
        per_tensor.push(check);
    }

    Ok(GradCheckReport {
        per_tensor,
        threshold,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_readout_passes() {
        // loss = sum((W x) .* (W x))
        let w = Matrix::from_vec(2, 2, vec![0.6, -0.3, 0.2, 1.1]);
        let x = Matrix::column(&[0.5, -1.25]);
        let leaves = vec![("w".to_string(), w), ("x".to_string(), x)];
        let report = check_gradients(&leaves, DEFAULT_STEP, DEFAULT_THRESHOLD, |t, ids| {
            let wx = t.matmul(ids[0], ids[1])?;
            let sq = t.hadamard(wx, wx)?;
            Ok(t.sum_all(sq))
        })
        .unwrap();
        assert!(report.passed(), "max err {}", report.max_rel_err());
    }

    #[test]
    fn coarse_step_exposes_truncation_on_a_cubic() {
        // Central differences are exact on quadratics, so a cubic readout
        // probed with a huge step is a negative control: the checker must
        // report a visible error.
        let x = Matrix::column(&[0.7]);
        let leaves = vec![("x".to_string(), x)];
        let report = check_gradients(&leaves, 1e-1, 1e-6, |t, ids| {
            let sq = t.hadamard(ids[0], ids[0])?;
            let cube = t.hadamard(sq, ids[0])?;
            Ok(t.sum_all(cube))
        })
        .unwrap();
        assert!(
            !report.passed(),
            "cubic with h=0.1 must show truncation error, got {}",
            report.max_rel_err()
        );
        assert_eq!(report.worst().unwrap().name, "x");
    }
}
