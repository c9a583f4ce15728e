//! Finite-difference check of the full training loss on one batch.

use std::cell::Cell;

use crate::error::{Error, Result};
use crate::losses::{total_loss_on, BatchVars, LossWeights};
use crate::model::{dominant_components, HeadVars, Model};
use crate::numcore::{gradient_check, GradCheckReport, Tensor};

/// Checks the gradient of the total loss with respect to every parameter of
/// a mixture model on the views in `x` (rows paired as `(2k, 2k+1)`).
///
/// The dominant-component assignment is held at its value at the base
/// point. Returns `Ok(None)` when some perturbation flips an assignment, in
/// which case the loss is not smooth there and the comparison is void.
pub fn loss_gradient_check(
    model: &Model,
    x: &Tensor,
    weights: &LossWeights,
    step: f64,
    tol: f64,
) -> Result<Option<GradCheckReport>> {
    if model.num_components().is_none() {
        return Err(Error::contract("loss gradient check needs a mixture head"));
    }
    let (_, base) = model.mixture_batch(x)?;
    let fixed = dominant_components(&base.coefficients);
    let flipped = Cell::new(false);
    let params: Vec<Tensor> = model.parameters().into_iter().cloned().collect();
    let report = gradient_check(
        |tape, vars| {
            let bound = model.bind_vars(vars.to_vec())?;
            let xv = tape.constant(x.clone());
            let h = model.encode_on(tape, &bound, xv)?;
            let HeadVars::Mixture(mv) = model.head_on(tape, &bound, h)? else {
                return Err(Error::contract("loss gradient check needs a mixture head"));
            };
            if dominant_components(tape.value(mv.coefficients)) != fixed {
                flipped.set(true);
            }
            let batch = BatchVars {
                embedding: mv.combined,
                coefficients: Some(mv.coefficients),
                components: mv.components,
            };
            Ok(total_loss_on(tape, &batch, weights, Some(&fixed))?.total)
        },
        &params,
        step,
        tol,
    )?;
    Ok(if flipped.get() { None } else { Some(report) })
}
