//! Central finite-difference oracle for analytic gradients.

use crate::error::{NumError, Result};
use crate::param::ParamStore;
use crate::tape::{Tape, Var};

/// `|a - b| / max(|a|, |b|, 1e-8)`
pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
}

/// Compares `analytic` against central differences of `f` around `x`.
///
/// Returns the maximum relative error over all coordinates. `x` is restored
/// before returning.
pub fn finite_diff_check<F>(x: &mut [f64], analytic: &[f64], eps: f64, mut f: F) -> Result<f64>
where
    F: FnMut(&[f64]) -> Result<f64>,
{
    if x.len() != analytic.len() {
        return Err(NumError::Shape {
            op: "finite_diff_check",
            lhs: vec![x.len()],
            rhs: vec![analytic.len()],
        });
    }
    let mut worst = 0.0f64;
    for i in 0..x.len() {
        let orig = x[i];
        x[i] = orig + eps;
        let plus = f(x)?;
        x[i] = orig - eps;
        let minus = f(x)?;
        x[i] = orig;
        if !plus.is_finite() || !minus.is_finite() {
            return Err(NumError::NonFinite(format!("objective at coordinate {i}")));
        }
        let numeric = (plus - minus) / (2.0 * eps);
        worst = worst.max(relative_error(numeric, analytic[i]));
    }
    Ok(worst)
}

/// Outcome of [`check_params`].
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// Parameter name and flat index of the worst coordinate.
    pub worst: Option<(String, usize)>,
    pub coordinates: usize,
}

/// Gradient check of a scalar objective over every parameter of `store`.
///
/// `build` records the objective on a fresh tape; it is called once for the
/// analytic pass and twice per coordinate for the numeric pass.
pub fn check_params<F>(store: &mut ParamStore, eps: f64, build: F) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &ParamStore) -> Result<Var>,
{
    let mut tape = Tape::new();
    let loss = build(&mut tape, store)?;
    let grads = tape.backward(loss)?;

    let eval = |store: &ParamStore| -> Result<f64> {
        let mut t = Tape::new();
        let l = build(&mut t, store)?;
        Ok(t.value(l).item())
    };

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: None,
        coordinates: 0,
    };
    let ids: Vec<_> = store.ids().collect();
    for id in ids {
        let n = store.value(id).numel();
        let analytic = grads.param(id).unwrap_or_else(|| vec![0.0; n]);
        for i in 0..n {
            let orig = store.value(id).data()[i];
            store.value_mut(id).data_mut()[i] = orig + eps;
            let plus = eval(store)?;
            store.value_mut(id).data_mut()[i] = orig - eps;
            let minus = eval(store)?;
            store.value_mut(id).data_mut()[i] = orig;
            if !plus.is_finite() || !minus.is_finite() {
                return Err(NumError::NonFinite(format!(
                    "objective while perturbing {}[{i}]",
                    store.get(id).name
                )));
            }
            let err = relative_error((plus - minus) / (2.0 * eps), analytic[i]);
            report.coordinates += 1;
            if err > report.max_rel_error || report.worst.is_none() {
                report.max_rel_error = report.max_rel_error.max(err);
                if err >= report.max_rel_error {
                    report.worst = Some((store.get(id).name.clone(), i));
                }
            }
        }
    }
    Ok(report)
}
