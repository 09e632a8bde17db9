use super::{Tape, Tensor, Var};
use crate::error::{Error, Result};

/// Central-difference step.
pub const STEP: f64 = 1e-5;

/// Outcome of comparing analytic and finite-difference gradients.
#[derive(Debug, Clone)]
pub struct GradcheckReport {
    /// Largest `|g_a - g_n| / max(1, |g_a|, |g_n|)` over all checked entries.
    pub max_rel_error: f64,
    /// `(parameter, element)` where the largest error occurred.
    pub worst: Option<(usize, usize)>,
    pub analytic_at_worst: f64,
    pub numeric_at_worst: f64,
    pub checked: usize,
    pub tolerance: f64,
    pub value: f64,
}

impl GradcheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_error < self.tolerance
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / 1f64.max(analytic.abs()).max(numeric.abs())
}

/// Checks the gradient of the scalar `f` at `theta`.
///
/// `f` is called once on a recording tape for the analytic gradient, then
/// twice per parameter entry on non-recording tapes. It must compute the same
/// function on every call; callers with discrete choices should replay them
/// (see [`super::Selections`]).
pub fn gradcheck<F>(mut f: F, theta: &[Tensor], tolerance: f64) -> Result<GradcheckReport>
where
    F: FnMut(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = theta.iter().map(|t| tape.param(t.clone())).collect();
    let out = f(&mut tape, &vars)?;
    let value = tape.value(out).item();
    let grads = tape.backward(out)?;
    let analytic: Vec<Tensor> = vars
        .iter()
        .map(|&v| grads.get(v).cloned().ok_or_else(|| Error::Contract("missing gradient".into())))
        .collect::<Result<_>>()?;
    drop(tape);

    let mut eval = |params: &[Tensor]| -> Result<f64> {
        let mut tape = Tape::no_record();
        let vars: Vec<Var> = params.iter().map(|t| tape.param(t.clone())).collect();
        let out = f(&mut tape, &vars)?;
        Ok(tape.value(out).item())
    };

    let mut work: Vec<Tensor> = theta.to_vec();
    let mut report = GradcheckReport {
        max_rel_error: 0.0,
        worst: None,
        analytic_at_worst: 0.0,
        numeric_at_worst: 0.0,
        checked: 0,
        tolerance,
        value,
    };
    for p in 0..theta.len() {
        for e in 0..theta[p].len() {
            let orig = theta[p].data()[e];
            work[p].data_mut()[e] = orig + STEP;
            let plus = eval(&work)?;
            work[p].data_mut()[e] = orig - STEP;
            let minus = eval(&work)?;
            work[p].data_mut()[e] = orig;
            let numeric = (plus - minus) / (2.0 * STEP);
            let a = analytic[p].data()[e];
            let err = relative_error(a, numeric);
            report.checked += 1;
            if err > report.max_rel_error || report.worst.is_none() {
                report.max_rel_error = err;
                report.worst = Some((p, e));
                report.analytic_at_worst = a;
                report.numeric_at_worst = numeric;
            }
        }
    }
    Ok(report)
}
