use super::layers::{bind_constants, check_width};
use super::{Activation, Mlp, MixtureHeadConfig, ProjectionConfig, ProjectionHead};
use crate::error::{Error, Result};
use crate::numcore::{Tape, Tensor, Var};
use crate::rng::Rng;

/// `M` parallel projection heads `g_m` combined by a softmax gate `g_p`:
/// `z = Σ_m p_m · g_m(h)` with `p = softmax(g_p(h))`.
#[derive(Clone, Debug, PartialEq)]
pub struct MixtureHead {
    pub components: Vec<ProjectionHead>,
    /// Linear → ReLU → Linear to `M` gating logits.
    pub gate: Mlp,
}

/// One sample's pass through the mixture head.
#[derive(Clone, Debug, PartialEq)]
pub struct MixtureOutput {
    pub coefficients: Vec<f64>,
    /// `M` rows of `embedding_dim` entries.
    pub component_embeddings: Vec<Vec<f64>>,
    pub combined: Vec<f64>,
    /// Index of the largest coefficient, lowest index on ties.
    pub dominant: usize,
}

/// Batched [`MixtureOutput`].
#[derive(Clone, Debug, PartialEq)]
pub struct MixtureBatch {
    /// `[n, M]`
    pub coefficients: Tensor,
    /// `M` matrices of shape `[n, embedding_dim]`.
    pub components: Vec<Tensor>,
    /// `[n, embedding_dim]`
    pub combined: Tensor,
    pub dominant: Vec<usize>,
}

impl MixtureBatch {
    pub fn sample(&self, i: usize) -> MixtureOutput {
        MixtureOutput {
            coefficients: self.coefficients.row(i).to_vec(),
            component_embeddings: self.components.iter().map(|c| c.row(i).to_vec()).collect(),
            combined: self.combined.row(i).to_vec(),
            dominant: self.dominant[i],
        }
    }
}

/// Mixture-head nodes on a tape.
#[derive(Clone, Debug)]
pub struct MixtureVars {
    pub logits: Var,
    pub coefficients: Var,
    pub components: Vec<Var>,
    pub combined: Var,
}

/// Argmax of every row, lowest index on ties.
pub fn dominant_components(coefficients: &Tensor) -> Vec<usize> {
    coefficients
        .row_iter()
        .map(crate::numcore::tape_argmax_first)
        .collect()
}

impl MixtureHead {
    pub fn init(input_dim: usize, config: &MixtureHeadConfig, rng: &mut Rng) -> Self {
        let proj = ProjectionConfig {
            embedding_dim: config.embedding_dim,
            hidden_dim: config.hidden_dim,
        };
        let components = (0..config.num_components)
            .map(|_| ProjectionHead::init(input_dim, &proj, rng))
            .collect();
        let gate = Mlp::init(
            &[input_dim, config.hidden_dim, config.num_components],
            Activation::Relu,
            rng,
        );
        MixtureHead { components, gate }
    }

    pub fn num_components(&self) -> usize {
        self.components.len()
    }

    pub fn input_dim(&self) -> usize {
        self.gate.input_dim()
    }

    pub fn embedding_dim(&self) -> usize {
        self.components[0].embedding_dim()
    }

    pub fn param_count(&self) -> usize {
        self.components.iter().map(|c| c.mlp.param_count()).sum::<usize>() + self.gate.param_count()
    }

    pub fn parameters(&self) -> Vec<&Tensor> {
        let mut out: Vec<&Tensor> = self.components.iter().flat_map(|c| c.mlp.parameters()).collect();
        out.extend(self.gate.parameters());
        out
    }

    pub fn parameters_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out: Vec<&mut Tensor> = self
            .components
            .iter_mut()
            .flat_map(|c| c.mlp.parameters_mut())
            .collect();
        out.extend(self.gate.parameters_mut());
        out
    }

    /// Records the head on `tape`; `vars` are this head's parameters in order.
    pub fn forward_on(&self, tape: &mut Tape, vars: &[Var], h: Var) -> Result<MixtureVars> {
        check_width(tape.value(h), self.input_dim())?;
        let mut offset = 0;
        let mut components = Vec::with_capacity(self.components.len());
        for c in &self.components {
            let n = c.mlp.param_count();
            components.push(c.mlp.forward_on(tape, &vars[offset..offset + n], h)?);
            offset += n;
        }
        let logits = self.gate.forward_on(tape, &vars[offset..], h)?;
        let coefficients = tape.softmax_rows(logits)?;
        let combined = mix(tape, coefficients, &components)?;
        Ok(MixtureVars {
            logits,
            coefficients,
            components,
            combined,
        })
    }

    pub fn forward(&self, h: &[f64]) -> Result<MixtureOutput> {
        if let Some(bad) = h.iter().find(|v| !v.is_finite()) {
            return Err(Error::domain(format!("non-finite representation entry {bad}")));
        }
        Ok(self.forward_batch(&Tensor::row_vector(h))?.sample(0))
    }

    pub fn forward_batch(&self, h: &Tensor) -> Result<MixtureBatch> {
        let mut tape = Tape::new();
        let vars = bind_constants(&mut tape, self.parameters());
        let hv = tape.constant(h.clone());
        let out = self.forward_on(&mut tape, &vars, hv)?;
        Ok(collect_batch(&tape, &out))
    }

    /// Runs the head with the gate output replaced by fixed `logits` (`[n, M]`).
    pub fn forward_with_logits(&self, h: &Tensor, logits: &Tensor) -> Result<MixtureBatch> {
        let mut tape = Tape::new();
        let vars = bind_constants(&mut tape, self.parameters());
        let hv = tape.constant(h.clone());
        let mut offset = 0;
        let mut components = Vec::new();
        for c in &self.components {
            let n = c.mlp.param_count();
            components.push(c.mlp.forward_on(&mut tape, &vars[offset..offset + n], hv)?);
            offset += n;
        }
        let lv = tape.constant(logits.clone());
        let coefficients = tape.softmax_rows(lv)?;
        let combined = mix(&mut tape, coefficients, &components)?;
        Ok(collect_batch(
            &tape,
            &MixtureVars {
                logits: lv,
                coefficients,
                components,
                combined,
            },
        ))
    }
}

/// `Σ_m p[:, m] ⊙ e_m`, accumulated from the first component.
fn mix(tape: &mut Tape, coefficients: Var, components: &[Var]) -> Result<Var> {
    let mut combined: Option<Var> = None;
    for (m, &e) in components.iter().enumerate() {
        let pm = tape.column(coefficients, m)?;
        let term = tape.mul_col(e, pm)?;
        combined = Some(match combined {
            None => term,
            Some(acc) => tape.add(acc, term)?,
        });
    }
    combined.ok_or_else(|| Error::contract("mixture with zero components"))
}

fn collect_batch(tape: &Tape, out: &MixtureVars) -> MixtureBatch {
    let coefficients = tape.value(out.coefficients).clone();
    let dominant = dominant_components(&coefficients);
    MixtureBatch {
        coefficients,
        components: out.components.iter().map(|v| tape.value(*v).clone()).collect(),
        combined: tape.value(out.combined).clone(),
        dominant,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, Stream};

    fn head(m: usize, seed: u64) -> MixtureHead {
        MixtureHead::init(
            5,
            &MixtureHeadConfig {
                num_components: m,
                embedding_dim: 3,
                hidden_dim: 4,
            },
            &mut stream(seed, Stream::Init),
        )
    }

    fn reps() -> Tensor {
        Tensor::matrix(2, 5, vec![0.3, -0.1, 0.8, 1.2, -0.5, -1.0, 0.4, 0.0, 0.2, 0.9]).unwrap()
    }

    #[test]
    fn uniform_gate_averages_components() {
        let hd = head(2, 1);
        let out = hd.forward_with_logits(&reps(), &Tensor::zeros(&[2, 2])).unwrap();
        for i in 0..2 {
            for j in 0..3 {
                let avg = (out.components[0].get(i, j) + out.components[1].get(i, j)) / 2.0;
                assert!((out.combined.get(i, j) - avg).abs() < 1e-15);
            }
        }
        assert_eq!(out.dominant, vec![0, 0]);
    }

    #[test]
    fn saturated_gate_selects_first_component() {
        let hd = head(2, 2);
        let logits = Tensor::matrix(2, 2, vec![50.0, -50.0, 50.0, -50.0]).unwrap();
        let out = hd.forward_with_logits(&reps(), &logits).unwrap();
        for i in 0..2 {
            for j in 0..3 {
                assert!((out.combined.get(i, j) - out.components[0].get(i, j)).abs() < 1e-12);
            }
        }
        assert_eq!(out.dominant, vec![0, 0]);
    }

    #[test]
    fn combined_is_the_coefficient_weighted_sum() {
        let hd = head(4, 3);
        let out = hd.forward_batch(&reps()).unwrap();
        for i in 0..2 {
            let s = out.sample(i);
            assert!((s.coefficients.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            assert!(s.coefficients.iter().all(|p| *p > 0.0 && *p < 1.0));
            for j in 0..3 {
                let direct: f64 = (0..4).map(|m| s.coefficients[m] * s.component_embeddings[m][j]).sum();
                assert!((s.combined[j] - direct).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn single_component_equals_projection_head() {
        let hd = head(1, 4);
        let h = reps();
        let mixed = hd.forward_batch(&h).unwrap();
        let single = hd.components[0].forward_batch(&h).unwrap();
        assert_eq!(mixed.combined, single);
        assert!(mixed.coefficients.data().iter().all(|p| *p == 1.0));
    }

    #[test]
    fn dominant_ties_break_low() {
        let p = Tensor::matrix(2, 3, vec![0.2, 0.4, 0.4, 0.5, 0.25, 0.25]).unwrap();
        assert_eq!(dominant_components(&p), vec![1, 0]);
    }

    #[test]
    fn wrong_width_is_a_contract_error() {
        assert!(matches!(head(2, 5).forward(&[1.0, 2.0]), Err(Error::Contract(_))));
    }
}
