use super::{Tape, Tensor, Var};
use crate::error::Result;

/// Outcome of comparing reverse-mode gradients against central differences.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheck {
    /// Max over elements of `|analytic - numeric| / max(1, |numeric|)`.
    pub max_rel_error: f64,
    /// `(parameter, element)` at which the maximum occurs.
    pub worst: (usize, usize),
}

/// Compares the tape gradient of `loss_fn` at `params` against central
/// differences with step `h`.
///
/// `loss_fn` receives a fresh tape and the parameter handles and must build
/// the same graph every call (reseed any randomness inside it).
pub fn grad_check<F>(loss_fn: F, params: &[Tensor], h: f64) -> Result<GradCheck>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    assert!(h > 0.0, "finite-difference step must be positive");
    let eval = |ps: &[Tensor]| -> Result<f64> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = ps.iter().map(|p| tape.constant(p.clone())).collect();
        let loss = loss_fn(&mut tape, &vars)?;
        Ok(tape.value(loss).item())
    };

    let mut tape = Tape::new();
    let vars: Vec<Var> = params.iter().map(|p| tape.param(p.clone())).collect();
    let loss = loss_fn(&mut tape, &vars)?;
    let grads = tape.backward(loss)?;

    let mut work = params.to_vec();
    let mut report = GradCheck {
        max_rel_error: 0.0,
        worst: (0, 0),
    };
    for (pi, var) in vars.iter().enumerate() {
        let analytic = grads.get(*var);
        for e in 0..params[pi].numel() {
            let orig = params[pi].data()[e];
            work[pi].data_mut()[e] = orig + h;
            let up = eval(&work)?;
            work[pi].data_mut()[e] = orig - h;
            let down = eval(&work)?;
            work[pi].data_mut()[e] = orig;
            let numeric = (up - down) / (2.0 * h);
            let err = (analytic.data()[e] - numeric).abs() / numeric.abs().max(1.0);
            if err > report.max_rel_error {
                report = GradCheck {
                    max_rel_error: err,
                    worst: (pi, e),
                };
            }
        }
    }
    Ok(report)
}
