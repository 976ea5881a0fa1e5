//! Finite-difference gradient checking.
//!
//! Each parameter entry is probed with a fourth-order central difference,
//! `(8(f(x+h) - f(x-h)) - (f(x+2h) - f(x-2h))) / 12h`, and compared against
//! the analytic gradient from the tape. The higher-order stencil keeps
//! truncation negligible at `h = 1e-3` where sharp softmax temperatures
//! would spoil the plain two-point quotient. The check runs at whatever
//! precision `S` the caller instantiates; `f64` is the sensible choice since
//! at `f32` the difference quotient itself drowns in rounding for small
//! gradients.

use crate::error::{Error, Result};
use crate::numcore::parallel::map_indices;
use crate::numcore::{Scalar, Tensor};

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    /// Index into the parameter list where the worst error occurred.
    pub worst_param: usize,
    /// Flat element index within that parameter.
    pub worst_index: usize,
    pub entries_checked: usize,
}

/// Maximum over all parameter entries of
/// `|analytic - central| / max(|analytic|, |central|, 1e-8)`.
///
/// `f(params, want_grad)` evaluates the scalar objective at the given
/// parameter values; when `want_grad` is set it must also return the analytic
/// gradients aligned with `params`. The objective must be deterministic given
/// its captured state (freeze any dropout streams on a fixed seed).
pub fn grad_check<S, F>(f: F, params: &[Tensor<S>], step: S) -> Result<GradCheckReport>
where
    S: Scalar,
    F: Fn(&[Tensor<S>], bool) -> Result<(S, Option<Vec<Vec<S>>>)> + Sync,
{
    let (_, grads) = f(params, true)?;
    let analytic = grads.ok_or_else(|| Error::numerical("objective returned no gradients"))?;
    if analytic.len() != params.len() {
        return Err(Error::numerical(format!(
            "objective returned {} gradients for {} parameters",
            analytic.len(),
            params.len()
        )));
    }
    for (p, (t, g)) in params.iter().zip(analytic.iter()).enumerate() {
        if t.len() != g.len() {
            return Err(Error::numerical(format!(
                "gradient {p} has {} entries, parameter has {}",
                g.len(),
                t.len()
            )));
        }
    }

    // Flatten (param, index) pairs so the sweep can fan out.
    let mut coords = Vec::new();
    for (p, t) in params.iter().enumerate() {
        for i in 0..t.len() {
            coords.push((p, i));
        }
    }

    let results: Vec<Result<f64>> = map_indices(coords.len(), |c| {
        let (p, i) = coords[c];
        let two = step + step;
        let f1p = eval_perturbed(&f, params, p, i, step)?;
        let f1m = eval_perturbed(&f, params, p, i, -step)?;
        let f2p = eval_perturbed(&f, params, p, i, two)?;
        let f2m = eval_perturbed(&f, params, p, i, -two)?;
        if !(f1p.is_finite() && f1m.is_finite() && f2p.is_finite() && f2m.is_finite()) {
            return Err(Error::numerical(format!(
                "objective is non-finite at perturbed parameter {p}[{i}]"
            )));
        }
        let eight = S::from_f64(8.0);
        let twelve = S::from_f64(12.0);
        let central = ((eight * (f1p - f1m) - (f2p - f2m)) / (twelve * step)).to_f64();
        let a = analytic[p][i].to_f64();
        let denom = a.abs().max(central.abs()).max(1e-8);
        Ok((a - central).abs() / denom)
    });

    let mut report = GradCheckReport {
        max_rel_err: 0.0,
        worst_param: 0,
        worst_index: 0,
        entries_checked: coords.len(),
    };
    for (c, r) in results.into_iter().enumerate() {
        let rel = r?;
        if rel > report.max_rel_err {
            report.max_rel_err = rel;
            report.worst_param = coords[c].0;
            report.worst_index = coords[c].1;
        }
    }
    Ok(report)
}

fn eval_perturbed<S, F>(f: &F, params: &[Tensor<S>], p: usize, i: usize, delta: S) -> Result<S>
where
    S: Scalar,
    F: Fn(&[Tensor<S>], bool) -> Result<(S, Option<Vec<Vec<S>>>)>,
{
    let mut perturbed: Vec<Tensor<S>> = params.to_vec();
    let mut data = params[p].data().to_vec();
    data[i] += delta;
    let mut t = Tensor::new(params[p].shape().to_vec(), data)?;
    t.requires_grad = params[p].requires_grad;
    perturbed[p] = t;
    Ok(f(&perturbed, false)?.0)
}
