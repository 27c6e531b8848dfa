//! Central finite-difference oracle for reverse-mode gradients.

use super::{ParamStore, Tape, Var};
use crate::error::{Result, SctgError};

/// Per-parameter worst relative errors from one gradient check.
#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    pub worst_param: String,
    pub per_param: Vec<(String, f64)>,
}

impl GradCheckReport {
    /// Worst relative error among parameters whose name starts with
    /// `prefix`, if any match.
    pub fn prefix_max(&self, prefix: &str) -> Option<f64> {
        self.per_param
            .iter()
            .filter(|(n, _)| n.starts_with(prefix))
            .map(|(_, e)| *e)
            .fold(None, |acc, e| Some(acc.map_or(e, |a: f64| a.max(e))))
    }
}

/// Relative error with the floor used throughout:
/// `|a - n| / max(|a|, |n|, 1e-8)`.
pub fn max_rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

/// Compare backward gradients against central differences
/// `(f(p+h) - f(p-h)) / 2h` for every scalar in every parameter.
///
/// `build` must construct the loss on the given tape from the store,
/// binding parameters itself and returning the loss and its bindings.
/// It has to be deterministic in the parameters.
pub fn gradient_check<F>(params: &mut ParamStore, h: f64, build: F) -> Result<GradCheckReport>
where
    F: Fn(&ParamStore, &mut Tape) -> Result<(Var, super::BoundParams)>,
{
    gradient_check_impl(params, h, build, false)
}

/// Negative-control fixture: runs the same oracle with one analytic
/// adjoint deliberately offset, which the comparison must flag.
pub fn gradient_check_corrupted<F>(params: &mut ParamStore, h: f64, build: F) -> Result<GradCheckReport>
where
    F: Fn(&ParamStore, &mut Tape) -> Result<(Var, super::BoundParams)>,
{
    gradient_check_impl(params, h, build, true)
}

fn gradient_check_impl<F>(
    params: &mut ParamStore,
    h: f64,
    build: F,
    corrupt_adjoint: bool,
) -> Result<GradCheckReport>
where
    F: Fn(&ParamStore, &mut Tape) -> Result<(Var, super::BoundParams)>,
{
    // Analytic pass.
    let mut tape = Tape::new();
    let (loss, bound) = build(params, &mut tape)?;
    if !tape.value(loss).is_finite() {
        return Err(SctgError::NonFinite { context: "gradient_check loss".into() });
    }
    tape.backward(loss)?;
    let mut analytic: Vec<(String, Vec<f64>)> = bound
        .iter()
        .map(|(name, var)| {
            let g = tape
                .grad(var)
                .map(|g| g.to_vec())
                .unwrap_or_else(|| vec![0.0; tape.data(var).len()]);
            (name.to_string(), g)
        })
        .collect();
    if corrupt_adjoint {
        if let Some((_, g)) = analytic.first_mut() {
            if let Some(v) = g.first_mut() {
                *v += 0.5;
            }
        }
    }

    let eval = |params: &ParamStore| -> Result<f64> {
        let mut tape = Tape::new();
        let (loss, _) = build(params, &mut tape)?;
        let v = tape.value(loss);
        if !v.is_finite() {
            return Err(SctgError::NonFinite { context: "gradient_check loss".into() });
        }
        Ok(v)
    };

    let names: Vec<String> = params.names().map(str::to_string).collect();
    let mut per_param = Vec::with_capacity(names.len());
    let mut worst = (0.0f64, String::new());
    for name in &names {
        let n = params.get(name).numel();
        let ana = &analytic.iter().find(|(a, _)| a == name).expect("analytic grad").1;
        let mut param_worst = 0.0f64;
        for i in 0..n {
            let orig = params.get(name).data[i];
            params.get_mut(name).data[i] = orig + h;
            let plus = eval(params)?;
            params.get_mut(name).data[i] = orig - h;
            let minus = eval(params)?;
            params.get_mut(name).data[i] = orig;
            let numeric = (plus - minus) / (2.0 * h);
            let err = max_rel_err(ana[i], numeric);
            if err > param_worst {
                param_worst = err;
            }
        }
        if param_worst > worst.0 {
            worst = (param_worst, name.clone());
        }
        per_param.push((name.clone(), param_worst));
    }

    Ok(GradCheckReport {
        max_rel_err: worst.0,
        worst_param: worst.1,
        per_param,
    })
}
