use super::tape::{Tape, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Denominator floor for [`relative_error`]; below it the error is absolute.
pub const REL_ERROR_FLOOR: f64 = 1.0;

/// `|a − b| / max(|a|, |b|, REL_ERROR_FLOOR)`.
pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(REL_ERROR_FLOOR)
}

/// One scalar coordinate of a parameter list.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Coordinate {
    pub param: usize,
    pub index: usize,
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// Coordinate with the largest error (`None` when there are no coordinates).
    pub worst: Option<Coordinate>,
    pub analytic: f64,
    pub numeric: f64,
    pub coordinates: usize,
    pub tolerance: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_error <= self.tolerance
    }
}

/// Compares the tape gradient of `f` with central differences of width
/// `2 * step`, one coordinate at a time.
///
/// `f` builds its scalar output on the supplied tape from the parameter
/// handles it receives (in the order of `params`).
pub fn gradient_check<F>(f: F, params: &[Tensor], step: f64, tol: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    if !(step > 0.0 && step <= 1e-3) {
        return Err(Error::contract(format!("finite-difference step {step} outside (0, 1e-3]")));
    }

    let mut tape = Tape::new();
    let vars: Vec<Var> = params.iter().map(|p| tape.param(p.clone())).collect();
    let out = f(&mut tape, &vars)?;
    let base = tape.value(out).item()?;
    if !base.is_finite() {
        return Err(Error::domain(format!("f is non-finite at the base point: {base}")));
    }
    let grads = tape.backward(out)?;
    let analytic: Vec<Tensor> = vars
        .iter()
        .map(|v| grads.get(*v).cloned().expect("tracked leaf"))
        .collect();

    let eval = |point: &[Tensor]| -> Result<f64> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = point.iter().map(|p| tape.constant(p.clone())).collect();
        let out = f(&mut tape, &vars)?;
        tape.value(out).item()
    };

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: None,
        analytic: 0.0,
        numeric: 0.0,
        coordinates: 0,
        tolerance: tol,
    };
    let mut point: Vec<Tensor> = params.to_vec();
    for (pi, p) in params.iter().enumerate() {
        for idx in 0..p.numel() {
            let orig = p.data()[idx];
            point[pi].data_mut()[idx] = orig + step;
            let plus = eval(&point)?;
            point[pi].data_mut()[idx] = orig - step;
            let minus = eval(&point)?;
            point[pi].data_mut()[idx] = orig;
            if !plus.is_finite() || !minus.is_finite() {
                return Err(Error::domain(format!(
                    "f is non-finite at a perturbed point (param {pi}, index {idx})"
                )));
            }
            let numeric = (plus - minus) / (2.0 * step);
            let a = analytic[pi].data()[idx];
            let err = relative_error(a, numeric);
            report.coordinates += 1;
            if report.worst.is_none() || err > report.max_rel_error {
                report.max_rel_error = err;
                report.worst = Some(Coordinate { param: pi, index: idx });
                report.analytic = a;
                report.numeric = numeric;
            }
        }
    }
    Ok(report)
}
