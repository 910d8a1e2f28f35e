//! Central finite-difference check of tape gradients.

use crate::error::{Error, Result};
use crate::tape::{ParamStore, Tape, Var};

/// Denominator floor of the relative error `|a−n| / max(|a|, |n|, floor)`.
///
/// Central differences at step 1e−5 carry absolute round-off of roughly
/// `ε·|loss|/step ≈ 1e−9`; the floor keeps entries whose true gradient is
/// zero (e.g. the attention output bias, which softmax cancels) from being
/// judged on that noise alone.
pub const RELATIVE_ERROR_FLOOR: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq)]
pub struct ParamCheck {
    pub name: String,
    pub max_relative_error: f64,
    pub max_abs_gradient: f64,
    /// Flat indices whose relative error exceeds the tolerance.
    pub flagged: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub params: Vec<ParamCheck>,
    pub tolerance: f64,
    pub entries_checked: usize,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.params.iter().all(|p| p.flagged.is_empty())
    }

    pub fn worst(&self) -> Option<&ParamCheck> {
        self.params
            .iter()
            .max_by(|a, b| a.max_relative_error.total_cmp(&b.max_relative_error))
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(RELATIVE_ERROR_FLOOR)
}

/// Compares the tape gradient of the scalar built by `loss_fn` against
/// central differences `(L(θ+h) − L(θ−h)) / 2h` for every parameter entry.
///
/// `loss_fn` must be deterministic: no dropout, fixed data.
pub fn finite_difference_check<F>(loss_fn: F, params: &ParamStore, step: f64, tol: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape<'_>) -> Result<Var>,
{
    let analytic = {
        let mut tape = Tape::new(params);
        let out = loss_fn(&mut tape)?;
        let v = tape.scalar(out);
        if !v.is_finite() {
            return Err(Error::Numeric(format!("loss evaluated to {v}")));
        }
        tape.backward(out)?
    };
    let eval = |store: &ParamStore| -> Result<f64> {
        let mut tape = Tape::new(store);
        let out = loss_fn(&mut tape)?;
        let v = tape.scalar(out);
        if v.is_finite() {
            Ok(v)
        } else {
            Err(Error::Numeric(format!("perturbed loss evaluated to {v}")))
        }
    };

    let mut work = params.clone();
    let mut report = GradCheckReport {
        params: Vec::new(),
        tolerance: tol,
        entries_checked: 0,
    };
    let ids: Vec<_> = params.iter().map(|(id, _, _)| id).collect();
    for id in ids {
        let n = params.get(id).len();
        let grad = analytic.get(id);
        let mut check = ParamCheck {
            name: params.name(id).to_string(),
            max_relative_error: 0.0,
            max_abs_gradient: 0.0,
            flagged: Vec::new(),
        };
        for i in 0..n {
            let orig = params.get(id).values()[i];
            work.get_mut(id).values_mut()[i] = orig + step;
            let plus = eval(&work)?;
            work.get_mut(id).values_mut()[i] = orig - step;
            let minus = eval(&work)?;
            work.get_mut(id).values_mut()[i] = orig;
            let numeric = (plus - minus) / (2.0 * step);
            let a = grad.map_or(0.0, |g| g[i]);
            let err = relative_error(a, numeric);
            check.max_relative_error = check.max_relative_error.max(err);
            check.max_abs_gradient = check.max_abs_gradient.max(a.abs());
            if err > tol {
                check.flagged.push(i);
            }
        }
        report.entries_checked += n;
        report.params.push(check);
    }
    Ok(report)
}
