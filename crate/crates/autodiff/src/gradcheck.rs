//! Central finite-difference verification of analytic gradients.

use crate::error::{AutodiffError, Result};
use crate::params::Module;
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    /// Parameter name and flat index of the worst scalar.
    pub worst: Option<(String, usize)>,
    pub checked: usize,
    pub pass: bool,
}

/// Perturbs every scalar parameter by `±step` and compares
/// `(L+ - L-) / (2 step)` against `analytic`.
///
/// Relative error uses `max(|analytic|, |numeric|, 1e-8)` as denominator.
/// A loss that returns different values for the same parameters is a
/// harness failure and is reported as `Err`, never as a failed check.
pub fn finite_diff_check<M, F>(
    module: &mut M,
    analytic: &[Tensor],
    mut loss_fn: F,
    step: f64,
    tol: f64,
) -> Result<GradCheckReport>
where
    M: Module,
    F: FnMut(&M) -> Result<f64>,
{
    if step.is_nan() || step <= 0.0 {
        return Err(AutodiffError::Harness(format!(
            "step must be positive, got {step}"
        )));
    }
    let shapes = module.param_shapes();
    if shapes.len() != analytic.len()
        || shapes
            .iter()
            .zip(analytic)
            .any(|(s, a)| s.as_slice() != a.shape())
    {
        return Err(AutodiffError::Harness(
            "analytic gradients do not line up with the module's parameters".into(),
        ));
    }

    let base = loss_fn(module)?;
    let again = loss_fn(module)?;
    if base.to_bits() != again.to_bits() {
        return Err(AutodiffError::Harness(format!(
            "loss is not deterministic: {base} then {again}"
        )));
    }

    let mut max_rel_err = 0.0f64;
    let mut worst = None;
    let mut checked = 0;
    for (pi, shape) in shapes.iter().enumerate() {
        let n: usize = shape.iter().product();
        for j in 0..n {
            let orig = with_scalar(module, pi, j, |v| *v);
            with_scalar(module, pi, j, |v| *v = orig + step);
            let plus = loss_fn(module);
            with_scalar(module, pi, j, |v| *v = orig - step);
            let minus = loss_fn(module);
            with_scalar(module, pi, j, |v| *v = orig);
            let numeric = (plus? - minus?) / (2.0 * step);
            let a = analytic[pi].data()[j];
            let denom = a.abs().max(numeric.abs()).max(1e-8);
            let rel = (a - numeric).abs() / denom;
            if rel > max_rel_err || rel.is_nan() {
                max_rel_err = if rel.is_nan() { f64::INFINITY } else { rel };
                worst = Some((param_name_at(module, pi), j));
            }
            checked += 1;
        }
    }

    let after = loss_fn(module)?;
    if after.to_bits() != base.to_bits() {
        return Err(AutodiffError::Harness(
            "parameters were not restored or the loss drifted during the sweep".into(),
        ));
    }
    Ok(GradCheckReport {
        max_rel_err,
        worst,
        checked,
        pass: max_rel_err <= tol,
    })
}

fn with_scalar<M: Module, R>(
    module: &mut M,
    param: usize,
    j: usize,
    f: impl FnOnce(&mut f64) -> R,
) -> R {
    let mut f = Some(f);
    let mut out = None;
    let mut idx = 0;
    module.visit_mut("", &mut |_, t| {
        if idx == param {
            let g = f.take().expect("visited once");
            out = Some(g(&mut t.data_mut()[j]));
        }
        idx += 1;
    });
    out.expect("parameter index in range")
}

fn param_name_at<M: Module>(module: &M, param: usize) -> String {
    let mut name = String::new();
    let mut idx = 0;
    module.visit("", &mut |n, _| {
        if idx == param {
            name = n;
        }
        idx += 1;
    });
    name
}
