//! Minibatch SGD on the total loss, with a contrastive-only warm-up phase.

use std::io::Write;

use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::harness::config::ExperimentConfig;
use crate::harness::data::{augment_pair, Dataset};
use crate::losses::{contrastive_loss_on, total_loss_on, BatchVars, LossBreakdown};
use crate::model::{HeadVars, Model};
use crate::numcore::{Tape, Tensor};
use crate::rng::{stream, Stream};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Phase {
    Warmup,
    Mixture,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepRecord {
    pub step: usize,
    pub phase: Phase,
    pub losses: LossBreakdown,
}

impl StepRecord {
    /// `step total contrast comp_ent inst_ent push pull`, floats printed
    /// with round-trip precision.
    pub fn log_line(&self) -> String {
        let l = &self.losses;
        format!(
            "{} {} {} {} {} {} {}",
            self.step, l.total, l.contrast, l.comp_entropy, l.inst_entropy, l.push, l.pull
        )
    }
}

pub const METRICS_LOG_HEADER: &str = "# step total contrast comp_ent inst_ent push pull";

/// Marginal of the mixture coefficients over the full training set.
#[derive(Clone, Debug, PartialEq)]
pub struct DegeneracyRecord {
    pub epoch: usize,
    /// Optimization steps completed when measured.
    pub step: usize,
    pub marginal: Vec<f64>,
    pub max_marginal: f64,
}

impl DegeneracyRecord {
    pub fn log_line(&self) -> String {
        let m: Vec<String> = self.marginal.iter().map(|v| v.to_string()).collect();
        format!("{} {} {} {}", self.epoch, self.step, self.max_marginal, m.join(","))
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub model: Model,
    pub steps: Vec<StepRecord>,
    /// Empty for single-head models.
    pub degeneracy: Vec<DegeneracyRecord>,
}

impl TrainOutcome {
    pub fn final_max_marginal(&self) -> Option<f64> {
        self.degeneracy.last().map(|d| d.max_marginal)
    }
}

/// Degeneracy monitor: mean mixture coefficients and their maximum.
pub fn coefficient_marginal(model: &Model, features: &Tensor) -> Result<Option<Vec<f64>>> {
    if model.num_components().is_none() {
        return Ok(None);
    }
    let (_, batch) = model.mixture_batch(features)?;
    let (n, m) = batch.coefficients.dims2()?;
    let mut marginal = vec![0.0; m];
    for row in batch.coefficients.row_iter() {
        marginal.iter_mut().zip(row).for_each(|(a, p)| *a += p);
    }
    marginal.iter_mut().for_each(|a| *a /= n as f64);
    Ok(Some(marginal))
}

fn monitor(model: &Model, features: &Tensor, epoch: usize, step: usize) -> Result<Option<DegeneracyRecord>> {
    Ok(coefficient_marginal(model, features)?.map(|marginal| DegeneracyRecord {
        epoch,
        step,
        max_marginal: marginal.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        marginal,
    }))
}

/// Trains a freshly initialized model on the rows of `dataset`. Labels are
/// consulted only for the component count when `num_components = 0`.
///
/// Each record is written to `log` as soon as its step finishes, so an
/// aborted run leaves every completed step on disk.
pub fn train(config: &ExperimentConfig, dataset: &Dataset, mut log: Option<&mut dyn Write>) -> Result<TrainOutcome> {
    config.validate()?;
    let features = &dataset.features;
    let (n, dim) = features.dims2()?;
    if config.batch_size > n {
        return Err(Error::contract(format!(
            "batch_size {} exceeds the {n} training rows",
            config.batch_size
        )));
    }
    let model_cfg = config.model_config(dim, dataset.class_count)?;
    let mut model = Model::init(&model_cfg, &mut stream(config.seed, Stream::Init))?;
    let mut batch_rng = stream(config.seed, Stream::Batches);
    let mut aug_rng = stream(config.seed, Stream::Augment);

    let mut velocity: Vec<Tensor> = model.parameters().iter().map(|p| Tensor::zeros(p.shape())).collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut batch_rng);
    let mut cursor = 0;
    let mut epoch = 0;

    let mut steps = Vec::with_capacity(config.steps);
    let mut degeneracy = Vec::new();
    if let Some(w) = log.as_mut() {
        writeln!(w, "{METRICS_LOG_HEADER}")?;
    }
    let mut tape = Tape::new();

    for step in 0..config.steps {
        if cursor + config.batch_size > n {
            degeneracy.extend(monitor(&model, features, epoch, step)?);
            epoch += 1;
            order.shuffle(&mut batch_rng);
            cursor = 0;
        }
        let sources = &order[cursor..cursor + config.batch_size];
        cursor += config.batch_size;

        let mut views = Vec::with_capacity(2 * sources.len() * dim);
        for &i in sources {
            let (a, b) = augment_pair(features.row(i), &config.augment, &mut aug_rng);
            views.extend(a);
            views.extend(b);
        }
        let x = Tensor::matrix(2 * sources.len(), dim, views)?;

        tape.clear();
        let bound = model.bind(&mut tape, true);
        let xv = tape.constant(x);
        let h = model.encode_on(&mut tape, &bound, xv)?;
        let phase = if step < config.warmup_steps {
            Phase::Warmup
        } else {
            Phase::Mixture
        };
        let abort = |e: Error| match e {
            Error::Domain(message) => Error::NumericalAbort { step, message },
            other => other,
        };
        let (loss, losses) = match phase {
            Phase::Warmup => {
                let z = model.base_head_on(&mut tape, &bound, h)?;
                let c = contrastive_loss_on(&mut tape, z, config.weights.temperature).map_err(abort)?;
                let v = tape.value(c).item()?;
                if !v.is_finite() {
                    return Err(abort(Error::domain(format!("non-finite contrastive loss {v}"))));
                }
                (
                    c,
                    LossBreakdown {
                        total: v,
                        contrast: v,
                        ..Default::default()
                    },
                )
            }
            Phase::Mixture => {
                let batch = match model.head_on(&mut tape, &bound, h)? {
                    HeadVars::Single { embedding } => BatchVars {
                        embedding,
                        coefficients: None,
                        components: Vec::new(),
                    },
                    HeadVars::Mixture(m) => BatchVars {
                        embedding: m.combined,
                        coefficients: Some(m.coefficients),
                        components: m.components,
                    },
                };
                let total = total_loss_on(&mut tape, &batch, &config.weights, None).map_err(abort)?;
                (total.total, total.breakdown)
            }
        };

        let grads = tape.backward(loss).map_err(abort)?;
        for ((param, vel), var) in model.parameters_mut().into_iter().zip(&mut velocity).zip(&bound.vars) {
            let g = grads.get(*var).ok_or_else(|| Error::contract("missing parameter gradient"))?;
            for ((p, v), gi) in param.data_mut().iter_mut().zip(vel.data_mut()).zip(g.data()) {
                *v = config.momentum * *v + gi;
                *p -= config.learning_rate * *v;
            }
        }
        if model.parameters().iter().any(|p| !p.is_finite()) {
            return Err(Error::NumericalAbort {
                step,
                message: "parameters became non-finite".into(),
            });
        }

        let record = StepRecord { step, phase, losses };
        if let Some(w) = log.as_mut() {
            writeln!(w, "{}", record.log_line())?;
        }
        steps.push(record);
    }
    degeneracy.extend(monitor(&model, features, epoch, config.steps)?);

    Ok(TrainOutcome {
        model,
        steps,
        degeneracy,
    })
}
