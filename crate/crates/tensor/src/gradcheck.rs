//! Central finite-difference gradient checking.
//!
//! The numeric side only ever evaluates the forward function, so it stays
//! independent of the backward rules it checks.

use crate::error::Result;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

#[derive(Clone, Debug)]
pub struct GradMismatch {
    pub param: usize,
    pub element: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_err: f64,
}

#[derive(Clone, Debug, Default)]
pub struct GradReport {
    pub checked: usize,
    pub max_rel_err: f64,
    pub worst: Option<GradMismatch>,
}

/// |a − n| / max(|a|, |n|, floor).
pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Compares the tape gradient of `f` against central differences with step `h`.
///
/// `f` receives a fresh tape and one `Var` per parameter and must return a
/// scalar. At most `per_param` elements of each parameter are probed, spread
/// evenly over the tensor; `None` probes all of them.
pub fn check<F>(params: &[Tensor], mut f: F, h: f64, per_param: Option<usize>) -> Result<GradReport>
where
    F: FnMut(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = params.iter().map(|p| tape.param(p)).collect();
    let loss = f(&mut tape, &vars)?;
    tape.backward(loss)?;
    let analytic: Vec<Vec<f64>> = vars
        .iter()
        .zip(params)
        .map(|(v, p)| {
            tape.grad(*v)
                .map(<[f64]>::to_vec)
                .unwrap_or_else(|| vec![0.0; p.numel()])
        })
        .collect();
    drop(tape);

    let mut eval = |probe: &[Tensor]| -> Result<f64> {
        let mut t = Tape::new();
        let vs: Vec<Var> = probe.iter().map(|p| t.constant(p.clone())).collect();
        let out = f(&mut t, &vs)?;
        t.value(out).item()
    };

    let mut report = GradReport::default();
    let mut work: Vec<Tensor> = params.to_vec();
    for (pi, p) in params.iter().enumerate() {
        let n = p.numel();
        let picks: Vec<usize> = match per_param {
            Some(m) if m < n => (0..m).map(|i| i * n / m).collect(),
            _ => (0..n).collect(),
        };
        for e in picks {
            let orig = p.data()[e];
            work[pi].data_mut()[e] = orig + h;
            let up = eval(&work)?;
            work[pi].data_mut()[e] = orig - h;
            let down = eval(&work)?;
            work[pi].data_mut()[e] = orig;
            let numeric = (up - down) / (2.0 * h);
            let a = analytic[pi][e];
            let rel = relative_error(a, numeric, 1e-3);
            report.checked += 1;
            if rel > report.max_rel_err || report.worst.is_none() {
                report.max_rel_err = rel.max(report.max_rel_err);
                report.worst = Some(GradMismatch {
                    param: pi,
                    element: e,
                    analytic: a,
                    numeric,
                    rel_err: rel,
                });
            }
        }
    }
    Ok(report)
}
