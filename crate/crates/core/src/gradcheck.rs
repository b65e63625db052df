//! Central-difference gradient verification.

use crate::error::Result;
use crate::tape::{ParamStore, Tape, Var};

/// Worst relative error for one parameter tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamCheck {
    pub name: String,
    pub max_rel_err: f64,
    /// Flat index of the worst entry.
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub params: Vec<ParamCheck>,
}

impl GradCheckReport {
    pub fn max_rel_err(&self) -> f64 {
        self.params.iter().map(|p| p.max_rel_err).fold(0.0, f64::max)
    }

    pub fn worst(&self) -> Option<&ParamCheck> {
        self.params
            .iter()
            .max_by(|a, b| a.max_rel_err.total_cmp(&b.max_rel_err))
    }
}

/// `|a - n| / max(|a|, |n|, 1e-8)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

/// Compare tape gradients of the scalar `f` against `(f(θ+ε) - f(θ-ε)) / 2ε`
/// for every entry of every parameter in `params`.
///
/// `f` receives a tape with the parameters already bound and returns the `1×1` output.
pub fn grad_check<F>(params: &ParamStore, eps: f64, f: F) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape) -> Result<Var>,
{
    grad_check_with(params, eps, |_| {}, f)
}

/// As [`grad_check`], with a hook to configure the analytic tape (fault injection).
pub fn grad_check_with<F, H>(params: &ParamStore, eps: f64, setup: H, f: F) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape) -> Result<Var>,
    H: Fn(&mut Tape),
{
    let mut tape = Tape::with_params(params);
    setup(&mut tape);
    let out = f(&mut tape)?;
    let grads = tape.backward(out)?;

    let eval = |store: &ParamStore| -> Result<f64> {
        let mut t = Tape::with_params(store);
        let out = f(&mut t)?;
        Ok(t.scalar(out))
    };

    let mut work = params.clone();
    let mut report = Vec::with_capacity(params.len());
    for id in params.ids() {
        let analytic = grads.param(id);
        let mut check = ParamCheck {
            name: params.name(id).to_string(),
            max_rel_err: 0.0,
            worst_index: 0,
            analytic: 0.0,
            numeric: 0.0,
        };
        for k in 0..params.get(id).len() {
            let orig = params.get(id).data()[k];
            work.get_mut(id).data_mut()[k] = orig + eps;
            let plus = eval(&work)?;
            work.get_mut(id).data_mut()[k] = orig - eps;
            let minus = eval(&work)?;
            work.get_mut(id).data_mut()[k] = orig;
            let numeric = (plus - minus) / (2.0 * eps);
            let err = relative_error(analytic[k], numeric);
            if err > check.max_rel_err {
                check.max_rel_err = err;
                check.worst_index = k;
                check.analytic = analytic[k];
                check.numeric = numeric;
            }
        }
        report.push(check);
    }
    Ok(GradCheckReport { params: report })
}
