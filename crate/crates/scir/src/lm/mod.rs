//! Tiny decoder-only transformer serving three roles from one parameter set:
//! response generator, judge (verdict-token readout) and frozen reference.

mod checkpoint;
mod sampling;
mod transformer;

pub use checkpoint::{
    blob_sha256, load_checkpoint, quantize_to_f32, save_checkpoint, Checkpoint,
    CheckpointManifest,
};
pub use sampling::{greedy_decode, nucleus_filter, sample_from_probs, sample_response};
pub use transformer::Transformer;

use gradcore::{Expr, ParamVector};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::vocab::Token;

/// Shape and seed of the model. `model_dim` must be divisible by `heads`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub vocab_size: usize,
    pub context_len: usize,
    pub layers: usize,
    pub model_dim: usize,
    pub heads: usize,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self { vocab_size: 32, context_len: 48, layers: 2, model_dim: 40, heads: 4, seed: 1 }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.vocab_size < 8 {
            return Err(Error::Model(format!("vocab_size {} < 8", self.vocab_size)));
        }
        if self.layers == 0 {
            return Err(Error::Model("layers must be >= 1".into()));
        }
        if self.heads == 0 || self.model_dim == 0 || self.model_dim % self.heads != 0 {
            return Err(Error::Model(format!(
                "model_dim {} must be a positive multiple of heads {}",
                self.model_dim, self.heads
            )));
        }
        if self.context_len < 2 {
            return Err(Error::Model("context_len must be >= 2".into()));
        }
        Ok(())
    }
}

/// An ordered sequence of vocabulary indices.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TokenSeq(pub Vec<Token>);

impl TokenSeq {
    pub fn new(tokens: Vec<Token>) -> Self {
        Self(tokens)
    }

    pub fn empty() -> Self {
        Self(Vec::new())
    }

    pub fn tokens(&self) -> &[Token] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn concat(&self, other: &TokenSeq) -> TokenSeq {
        let mut v = self.0.clone();
        v.extend_from_slice(&other.0);
        TokenSeq(v)
    }

    pub fn push(&mut self, tok: Token) {
        self.0.push(tok);
    }
}

impl From<Vec<Token>> for TokenSeq {
    fn from(v: Vec<Token>) -> Self {
        TokenSeq(v)
    }
}

/// Deterministic scaled-random initialization.
///
/// Projection/output matrices that close residual branches (`wo`, `fc2`) and
/// the logit head start at zero, so a fresh model is exactly the uniform
/// distribution over the vocabulary at every position.
pub fn init_params(config: &ModelConfig) -> Result<ParamVector> {
    config.validate()?;
    let model = Transformer::new(config.clone())?;
    let layout = model.layout().clone();
    let mut values = vec![0.0f64; layout.total_len()];
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let std = 0.02;
    for entry in layout.entries() {
        let zero_init = entry.name == "head"
            || entry.name.ends_with(".wo")
            || entry.name.ends_with(".fc2");
        if zero_init {
            continue;
        }
        for v in &mut values[entry.range()] {
            *v = std * normal(&mut rng);
        }
    }
    Ok(ParamVector::new(values, layout)?)
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    // Box-Muller; u1 bounded away from zero to keep ln finite.
    let u1: f64 = rng.random::<f64>().max(1e-12);
    let u2: f64 = rng.random();
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

/// A model architecture paired with a concrete parameter vector, for the
/// frozen numeric operations (reference scoring, labeling, evaluation).
#[derive(Clone, Copy)]
pub struct Bound<'a> {
    pub model: &'a Transformer,
    pub params: &'a ParamVector,
}

impl<'a> Bound<'a> {
    pub fn new(model: &'a Transformer, params: &'a ParamVector) -> Self {
        Self { model, params }
    }

    /// Sum over response positions of the log-probability of each token given
    /// everything before it. Always <= 0 (up to rounding).
    pub fn sequence_logprob(&self, prompt: &TokenSeq, response: &TokenSeq) -> Result<f64> {
        self.model.sequence_logprob(self.params, prompt, response)
    }

    /// Probability of `verdict_a` renormalized over the two verdict tokens at
    /// the next-token position. Swapping the verdicts yields the exact
    /// complement.
    pub fn verdict_probability(
        &self,
        judge_prompt: &TokenSeq,
        verdict_a: Token,
        verdict_b: Token,
    ) -> Result<f64> {
        if verdict_a == verdict_b {
            return Err(Error::Model("verdict tokens must differ".into()));
        }
        let logits = self.model.next_token_logits(self.params, judge_prompt)?;
        let gap = logits[verdict_a as usize] - logits[verdict_b as usize];
        Ok(gradcore::sigmoid(gap))
    }

    pub fn next_token_logits(&self, context: &TokenSeq) -> Result<Vec<f64>> {
        self.model.next_token_logits(self.params, context)
    }
}

/// Differentiable readouts a policy exposes to the reward and loss builders.
/// Implemented by the transformer and by the table-forced test policy.
pub trait PolicyModel {
    /// Expression for log P(response | prompt) as a function of the params.
    fn logprob_expr(&self, prompt: &TokenSeq, response: &TokenSeq) -> Result<Expr>;

    /// Expression for the next-token logit gap `o[first] - o[second]` after
    /// the filled judge prompt.
    fn verdict_gap_expr(&self, filled: &TokenSeq, first: Token, second: Token) -> Result<Expr>;
}

/// Mean negative log-likelihood of the targets given their prompts.
pub fn sft_loss(model: &Transformer, batch: &[(TokenSeq, TokenSeq)]) -> Result<Expr> {
    if batch.is_empty() {
        return Err(Error::Data("sft batch is empty".into()));
    }
    let mut terms = Vec::with_capacity(batch.len());
    for (prompt, target) in batch {
        terms.push(-model.logprob_expr(prompt, target)?);
    }
    Ok(Expr::mean(terms))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn init_is_deterministic_per_seed() {
        let cfg = ModelConfig { vocab_size: 16, context_len: 16, layers: 1, model_dim: 8, heads: 2, seed: 7 };
        let a = init_params(&cfg).unwrap();
        let b = init_params(&cfg).unwrap();
        assert_eq!(a.values(), b.values());

        let cfg2 = ModelConfig { seed: 8, ..cfg };
        let c = init_params(&cfg2).unwrap();
        assert_ne!(a.values(), c.values());
    }

    #[test]
    fn degenerate_configs_rejected() {
        let cfg = ModelConfig { layers: 0, ..ModelConfig::default() };
        assert!(init_params(&cfg).is_err());
        let cfg = ModelConfig { vocab_size: 4, ..ModelConfig::default() };
        assert!(cfg.validate().is_err());
        let cfg = ModelConfig { model_dim: 30, heads: 4, ..ModelConfig::default() };
        assert!(cfg.validate().is_err());
    }
}
