use std::fmt;

use super::{BoundParams, ParamStore, Tape, Var};
use crate::error::Result;

/// Gradients smaller than this are compared in absolute terms.
pub const GRAD_FLOOR: f64 = 1e-6;

#[derive(Clone, Debug)]
pub struct ParamCheck {
    pub name: String,
    pub entries: usize,
    pub max_rel_err: f64,
    pub max_abs_err: f64,
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub tolerance: f64,
    pub params: Vec<ParamCheck>,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.params.iter().all(|p| p.max_rel_err <= self.tolerance)
    }

    pub fn max_rel_err(&self) -> f64 {
        self.params.iter().map(|p| p.max_rel_err).fold(0.0, f64::max)
    }

    pub fn failures(&self) -> impl Iterator<Item = &ParamCheck> {
        self.params.iter().filter(|p| p.max_rel_err > self.tolerance)
    }
}

impl fmt::Display for GradCheckReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "parameter\tentries\tmax_rel_err\tmax_abs_err\tstatus")?;
        for p in &self.params {
            let status = if p.max_rel_err <= self.tolerance { "ok" } else { "FAIL" };
            writeln!(
                f,
                "{}\t{}\t{:.3e}\t{:.3e}\t{}",
                p.name, p.entries, p.max_rel_err, p.max_abs_err, status
            )?;
        }
        Ok(())
    }
}

fn eval_loss<F>(params: &ParamStore, loss_fn: &F) -> Result<f64>
where
    F: Fn(&mut Tape, &BoundParams) -> Result<Var>,
{
    let mut tape = Tape::new();
    let bound = params.bind(&mut tape);
    let loss = loss_fn(&mut tape, &bound)?;
    Ok(tape.value(loss).item())
}

/// Compares tape gradients with central differences of step `step` for
/// every entry of every parameter. `loss_fn` must be deterministic.
pub fn grad_check<F>(params: &ParamStore, loss_fn: F, step: f64, tolerance: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &BoundParams) -> Result<Var>,
{
    let mut tape = Tape::new();
    let bound = params.bind(&mut tape);
    let loss = loss_fn(&mut tape, &bound)?;
    let grads = tape.backward(loss)?;

    let mut probe = params.clone();
    let mut report = Vec::with_capacity(params.len());
    for (i, name) in params.names().iter().enumerate() {
        let n = params.at(i).numel();
        let analytic: Vec<f64> = grads
            .get(bound.vars()[i])
            .map(<[f64]>::to_vec)
            .unwrap_or_else(|| vec![0.0; n]);
        let mut check = ParamCheck {
            name: name.clone(),
            entries: n,
            max_rel_err: 0.0,
            max_abs_err: 0.0,
        };
        for k in 0..n {
            let orig = params.at(i).data()[k];
            probe.at_mut(i).data_mut()[k] = orig + step;
            let up = eval_loss(&probe, &loss_fn)?;
            probe.at_mut(i).data_mut()[k] = orig - step;
            let down = eval_loss(&probe, &loss_fn)?;
            probe.at_mut(i).data_mut()[k] = orig;
            let numeric = (up - down) / (2.0 * step);
            let abs = (analytic[k] - numeric).abs();
            let rel = abs / analytic[k].abs().max(numeric.abs()).max(GRAD_FLOOR);
            check.max_abs_err = check.max_abs_err.max(abs);
            check.max_rel_err = check.max_rel_err.max(rel);
        }
        report.push(check);
    }
    Ok(GradCheckReport {
        tolerance,
        params: report,
    })
}
