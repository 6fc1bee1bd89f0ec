//! Central finite-difference gradient checking.
//!
//! Only forward evaluations are used, so the check is independent of the
//! backward rules it validates.

use super::params::{Binding, ParamStore};
use super::tape::{Tape, Var};
use crate::error::Result;

/// Gradients whose magnitude is below this floor are compared on an
/// absolute rather than relative scale.
pub const ABS_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub worst_param: String,
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub checked: usize,
}

pub fn rel_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(ABS_FLOOR)
}

/// Compares backward-pass gradients of `loss_fn` against central differences
/// with step `h`, for every scalar of every parameter.
pub fn check_gradients<F>(params: &ParamStore, h: f64, loss_fn: F) -> Result<GradCheckReport>
where
    F: Fn(&ParamStore, &mut Tape, &Binding) -> Result<Var>,
{
    let mut tape = Tape::new();
    let binding = params.bind(&mut tape);
    let loss = loss_fn(params, &mut tape, &binding)?;
    let grads = tape.backward(loss)?;
    let analytic: Vec<Vec<f64>> = params
        .ids()
        .map(|id| {
            grads
                .get(binding.var(id))
                .map_or(vec![0.0; params.get(id).numel()], <[f64]>::to_vec)
        })
        .collect();

    let eval = |p: &ParamStore| -> Result<f64> {
        let mut tape = Tape::new();
        let b = p.bind(&mut tape);
        let l = loss_fn(p, &mut tape, &b)?;
        tape.value(l).item()
    };

    let mut work = params.clone();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst_param: String::new(),
        worst_index: 0,
        analytic: 0.0,
        numeric: 0.0,
        checked: 0,
    };
    for (pi, id) in params.ids().enumerate() {
        for j in 0..params.get(id).numel() {
            let orig = work.get(id).data()[j];
            work.get_mut(id).data_mut()[j] = orig + h;
            let plus = eval(&work)?;
            work.get_mut(id).data_mut()[j] = orig - h;
            let minus = eval(&work)?;
            work.get_mut(id).data_mut()[j] = orig;
            let numeric = (plus - minus) / (2.0 * h);
            let a = analytic[pi][j];
            let err = rel_error(a, numeric);
            report.checked += 1;
            if err > report.max_rel_error {
                report.max_rel_error = err;
                report.worst_param = params.name(id).to_string();
                report.worst_index = j;
                report.analytic = a;
                report.numeric = numeric;
            }
        }
    }
    Ok(report)
}
