//! Training objective: NT-Xent contrastive loss plus the three mixture
//! regularizers and their weighted total.
//!
//! Every term has a tape form (`*_on`, differentiable) and a value form that
//! evaluates on a private tape. Views are paired as `(2k, 2k + 1)`.

use crate::error::{Error, Result};
use crate::model::dominant_components;
use crate::numcore::{Tape, Tensor, Var};

/// Coefficients of the total loss and the NT-Xent temperature.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossWeights {
    /// λ1, marginal (component) entropy term.
    pub comp_entropy: f64,
    /// λ2, instance entropy term.
    pub inst_entropy: f64,
    /// λ3, push term.
    pub push: f64,
    /// λ4, pull term.
    pub pull: f64,
    /// τ
    pub temperature: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            comp_entropy: 1.0,
            inst_entropy: 1.0,
            push: 0.1,
            pull: 0.1,
            temperature: 0.5,
        }
    }
}

impl LossWeights {
    /// Contrastive loss only.
    pub fn contrastive_only(temperature: f64) -> Self {
        LossWeights {
            comp_entropy: 0.0,
            inst_entropy: 0.0,
            push: 0.0,
            pull: 0.0,
            temperature,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(Error::contract(format!("temperature must be > 0, got {}", self.temperature)));
        }
        for (name, v) in [
            ("lambda1", self.comp_entropy),
            ("lambda2", self.inst_entropy),
            ("lambda3", self.push),
            ("lambda4", self.pull),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::contract(format!("{name} must be a finite value >= 0, got {v}")));
            }
        }
        Ok(())
    }
}

/// Per-term values of one evaluation of the total loss.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossBreakdown {
    pub total: f64,
    pub contrast: f64,
    pub comp_entropy: f64,
    pub inst_entropy: f64,
    pub push: f64,
    pub pull: f64,
}

impl LossBreakdown {
    /// Recombines the terms with `weights` in the same order as the total.
    pub fn recombine(&self, weights: &LossWeights) -> f64 {
        self.contrast
            + weights.comp_entropy * self.comp_entropy
            + weights.inst_entropy * self.inst_entropy
            + weights.push * self.push
            + weights.pull * self.pull
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct AssociativeDiagnostics {
    /// Components that dominate at least one view.
    pub populated: usize,
    /// Every view shares one dominant component, so there are no push pairs.
    pub collapsed: bool,
}

fn check_views(n_views: usize) -> Result<()> {
    if n_views < 2 || n_views % 2 != 0 {
        return Err(Error::contract(format!(
            "need an even number (>= 2) of views, got {n_views}"
        )));
    }
    Ok(())
}

/// The partner view of `j` under `(2k, 2k + 1)` pairing.
pub fn partner(j: usize) -> usize {
    j ^ 1
}

fn similarity_logits(tape: &mut Tape, z: Var, temperature: f64) -> Result<Var> {
    let zn = tape.normalize_rows(z)?;
    let sim = tape.matmul_t(zn, zn)?;
    Ok(tape.scale(sim, 1.0 / temperature))
}

/// `l_c(j1, j2) = −log( exp(sim(j1,j2)/τ) / Σ_{k≠j1} exp(sim(j1,k)/τ) )`.
pub fn nt_xent_pair_on(tape: &mut Tape, z: Var, j1: usize, j2: usize, temperature: f64) -> Result<Var> {
    let (n, _) = tape.value(z).dims2()?;
    if j1 == j2 || j1 >= n || j2 >= n {
        return Err(Error::contract(format!("invalid view pair ({j1}, {j2}) for {n} views")));
    }
    if !(temperature > 0.0) {
        return Err(Error::contract("temperature must be > 0"));
    }
    let logits = similarity_logits(tape, z, temperature)?;
    let lse = tape.row_logsumexp_off_diag(logits)?;
    let denom = tape.pick(lse, &[(j1, 0)])?;
    let pos = tape.pick(logits, &[(j1, j2)])?;
    let diff = tape.sub(denom, pos)?;
    Ok(tape.sum(diff))
}

/// `(1/2N) Σ_k [l_c(2k, 2k+1) + l_c(2k+1, 2k)]` over `2N` paired views.
pub fn contrastive_loss_on(tape: &mut Tape, z: Var, temperature: f64) -> Result<Var> {
    let (n, _) = tape.value(z).dims2()?;
    check_views(n)?;
    if !(temperature > 0.0) {
        return Err(Error::contract("temperature must be > 0"));
    }
    let logits = similarity_logits(tape, z, temperature)?;
    let lse = tape.row_logsumexp_off_diag(logits)?;
    let positives: Vec<(usize, usize)> = (0..n).map(|j| (j, partner(j))).collect();
    let pos = tape.pick(logits, &positives)?;
    let per_view = tape.sub(lse, pos)?;
    let total = tape.sum(per_view);
    Ok(tape.scale(total, 1.0 / n as f64))
}

fn check_rows_normalized(p: &Tensor) -> Result<(usize, usize)> {
    let (n, m) = p.dims2()?;
    if n == 0 || m == 0 {
        return Err(Error::contract("empty coefficient matrix"));
    }
    for (i, row) in p.row_iter().enumerate() {
        let s: f64 = row.iter().sum();
        if (s - 1.0).abs() > 1e-9 || row.iter().any(|v| !(*v >= 0.0)) {
            return Err(Error::contract(format!("coefficient row {i} is not a distribution (sum {s})")));
        }
    }
    Ok((n, m))
}

/// `Σ_m p̄_m log p̄_m` with `p̄` the mean coefficient row (negative marginal entropy).
pub fn component_entropy_on(tape: &mut Tape, p: Var) -> Result<Var> {
    check_rows_normalized(tape.value(p))?;
    let marginal = tape.mean_rows(p)?;
    let terms = tape.xlogx(marginal)?;
    Ok(tape.sum(terms))
}

/// `Σ_i (1 − max_m p_im)`.
pub fn instance_entropy_on(tape: &mut Tape, p: Var) -> Result<Var> {
    let (n, _) = check_rows_normalized(tape.value(p))?;
    let max = tape.row_max(p)?;
    let s = tape.sum(max);
    Ok(tape.affine(s, -1.0, n as f64))
}

/// Pull and push terms on a tape.
#[derive(Clone, Debug)]
pub struct AssociativeVars {
    pub pull: Var,
    pub push: Var,
    pub diagnostics: AssociativeDiagnostics,
}

/// Groups views by `assignment` (one component index per view) and records
///
/// - `μ_m` = mean of `e_m` over the views assigned to `m`,
/// - pull = `(1/M) Σ_m Σ_{i∈E_m} ‖e_m^i − μ_m‖`,
/// - push = `−(1/M) Σ_m Σ_{m'≠m} ‖μ_m − μ_m'‖` over populated components.
///
/// Gradients flow through the embeddings and means, never through the assignment.
pub fn associative_on(tape: &mut Tape, components: &[Var], assignment: &[usize]) -> Result<AssociativeVars> {
    let m = components.len();
    if m == 0 {
        return Err(Error::contract("no component embeddings"));
    }
    let (n, _) = tape.value(components[0]).dims2()?;
    if assignment.len() != n {
        return Err(Error::contract(format!(
            "{} assignments for {n} views",
            assignment.len()
        )));
    }
    if let Some(&bad) = assignment.iter().find(|&&a| a >= m) {
        return Err(Error::contract(format!("assignment {bad} out of range for {m} components")));
    }

    let inv_m = 1.0 / m as f64;
    let mut means: Vec<Var> = Vec::new();
    let mut pull_parts: Vec<Var> = Vec::new();
    for (c, &e) in components.iter().enumerate() {
        let members: Vec<usize> = (0..n).filter(|&i| assignment[i] == c).collect();
        if members.is_empty() {
            continue;
        }
        let group = tape.gather_rows(e, &members)?;
        let mean = tape.mean_rows(group)?;
        let neg_mean = tape.scale(mean, -1.0);
        let centered = tape.add_row(group, neg_mean)?;
        let dist = tape.row_norm(centered)?;
        pull_parts.push(tape.sum(dist));
        means.push(mean);
    }

    let pull_sum = sum_vars(tape, &pull_parts)?;
    let pull = tape.scale(pull_sum, inv_m);

    let mut push_parts = Vec::new();
    for (a, &ma) in means.iter().enumerate() {
        for (b, &mb) in means.iter().enumerate() {
            if a != b {
                let d = tape.sub(ma, mb)?;
                let norm = tape.row_norm(d)?;
                push_parts.push(tape.sum(norm));
            }
        }
    }
    let push = if push_parts.is_empty() {
        tape.constant(Tensor::scalar(0.0))
    } else {
        let s = sum_vars(tape, &push_parts)?;
        tape.scale(s, -inv_m)
    };

    Ok(AssociativeVars {
        pull,
        push,
        diagnostics: AssociativeDiagnostics {
            populated: means.len(),
            collapsed: means.len() < 2,
        },
    })
}

fn sum_vars(tape: &mut Tape, parts: &[Var]) -> Result<Var> {
    let mut iter = parts.iter();
    let first = *iter.next().ok_or_else(|| Error::contract("empty sum"))?;
    iter.try_fold(first, |acc, &v| tape.add(acc, v))
}

/// Head outputs of a batch of `2N` views, recorded on a tape.
#[derive(Clone, Debug)]
pub struct BatchVars {
    /// `z`, `[2N, D]`
    pub embedding: Var,
    /// Present for mixture heads: `[2N, M]`.
    pub coefficients: Option<Var>,
    /// `e_m`, `M` nodes of shape `[2N, D]` (empty for single heads).
    pub components: Vec<Var>,
}

#[derive(Clone, Debug)]
pub struct TotalLoss {
    pub total: Var,
    pub breakdown: LossBreakdown,
    pub diagnostics: AssociativeDiagnostics,
    /// Dominant component per view used by the associative terms.
    pub assignment: Vec<usize>,
}

/// `L_contrast + λ1 L_comp + λ2 L_inst + λ3 L_push + λ4 L_pull`.
///
/// Terms with a zero weight are evaluated for the breakdown but left out of
/// the differentiated total. `assignment` overrides the dominant components
/// (used to hold them fixed under perturbation).
pub fn total_loss_on(
    tape: &mut Tape,
    batch: &BatchVars,
    weights: &LossWeights,
    assignment: Option<&[usize]>,
) -> Result<TotalLoss> {
    weights.validate()?;
    let contrast = contrastive_loss_on(tape, batch.embedding, weights.temperature)?;
    let mut breakdown = LossBreakdown {
        contrast: tape.value(contrast).item()?,
        ..Default::default()
    };
    let mut total = contrast;
    let mut diagnostics = AssociativeDiagnostics::default();
    let mut used_assignment = Vec::new();

    if let Some(p) = batch.coefficients {
        let comp = component_entropy_on(tape, p)?;
        let inst = instance_entropy_on(tape, p)?;
        breakdown.comp_entropy = tape.value(comp).item()?;
        breakdown.inst_entropy = tape.value(inst).item()?;

        used_assignment = match assignment {
            Some(a) => a.to_vec(),
            None => dominant_components(tape.value(p)),
        };
        let mut push = None;
        let mut pull = None;
        if batch.components.len() >= 2 {
            let assoc = associative_on(tape, &batch.components, &used_assignment)?;
            breakdown.push = tape.value(assoc.push).item()?;
            breakdown.pull = tape.value(assoc.pull).item()?;
            diagnostics = assoc.diagnostics;
            push = Some(assoc.push);
            pull = Some(assoc.pull);
        } else {
            diagnostics = AssociativeDiagnostics {
                populated: 1,
                collapsed: true,
            };
        }

        for (w, term) in [
            (weights.comp_entropy, Some(comp)),
            (weights.inst_entropy, Some(inst)),
            (weights.push, push),
            (weights.pull, pull),
        ] {
            if let (true, Some(t)) = (w != 0.0, term) {
                let scaled = tape.scale(t, w);
                total = tape.add(total, scaled)?;
            }
        }
    }
    breakdown.total = tape.value(total).item()?;
    if !breakdown.total.is_finite() {
        return Err(Error::domain(format!("non-finite total loss {}", breakdown.total)));
    }
    Ok(TotalLoss {
        total,
        breakdown,
        diagnostics,
        assignment: used_assignment,
    })
}

/// Plain-value batch: the inputs of the total loss without a tape.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchEmbeddings {
    pub embedding: Tensor,
    pub coefficients: Option<Tensor>,
    pub components: Vec<Tensor>,
}

pub fn nt_xent_pair(z: &Tensor, j1: usize, j2: usize, temperature: f64) -> Result<f64> {
    let mut tape = Tape::new();
    let zv = tape.constant(z.clone());
    let l = nt_xent_pair_on(&mut tape, zv, j1, j2, temperature)?;
    tape.value(l).item()
}

pub fn contrastive_loss(z: &Tensor, temperature: f64) -> Result<f64> {
    let mut tape = Tape::new();
    let zv = tape.constant(z.clone());
    let l = contrastive_loss_on(&mut tape, zv, temperature)?;
    tape.value(l).item()
}

pub fn component_entropy_loss(p: &Tensor) -> Result<f64> {
    let mut tape = Tape::new();
    let pv = tape.constant(p.clone());
    let l = component_entropy_on(&mut tape, pv)?;
    tape.value(l).item()
}

pub fn instance_entropy_loss(p: &Tensor) -> Result<f64> {
    let mut tape = Tape::new();
    let pv = tape.constant(p.clone());
    let l = instance_entropy_on(&mut tape, pv)?;
    tape.value(l).item()
}

/// Pull/push values for per-view component embeddings grouped by the
/// dominant component of `p`.
#[derive(Clone, Debug, PartialEq)]
pub struct Associative {
    pub pull: f64,
    pub push: f64,
    pub diagnostics: AssociativeDiagnostics,
}

pub fn associative_embedding_loss(components: &[Tensor], p: &Tensor) -> Result<Associative> {
    let (_, m) = check_rows_normalized(p)?;
    if m < 2 || components.len() != m {
        return Err(Error::contract(format!(
            "associative loss needs M >= 2 components matching the coefficients, got {} and {m}",
            components.len()
        )));
    }
    let assignment = dominant_components(p);
    let mut tape = Tape::new();
    let vars: Vec<Var> = components.iter().map(|c| tape.constant(c.clone())).collect();
    let a = associative_on(&mut tape, &vars, &assignment)?;
    Ok(Associative {
        pull: tape.value(a.pull).item()?,
        push: tape.value(a.push).item()?,
        diagnostics: a.diagnostics,
    })
}

pub fn total_loss(batch: &BatchEmbeddings, weights: &LossWeights) -> Result<LossBreakdown> {
    let mut tape = Tape::new();
    let vars = BatchVars {
        embedding: tape.constant(batch.embedding.clone()),
        coefficients: batch.coefficients.as_ref().map(|p| tape.constant(p.clone())),
        components: batch.components.iter().map(|c| tape.constant(c.clone())).collect(),
    };
    Ok(total_loss_on(&mut tape, &vars, weights, None)?.breakdown)
}
