//! Supervised fine-tuning of the base model on the three-stratum corpus.

use gradcore::{value_and_gradient, Expr, ParamVector};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::lm::{PolicyModel, TokenSeq, Transformer};
use crate::selfreward::optimizer::{cosine_lr, AdamW};
use crate::selfreward::{derive_seed, seed_tags};
use crate::tasks::{shuffle_examples, SftExample};

/// Gradient of the mean negative log-likelihood over a batch, computed in
/// fixed-size chunks (parallelizable, worker-count independent: chunk
/// boundaries are fixed and the reduction is ordered).
fn batch_nll_gradient(
    model: &Transformer,
    batch: &[(TokenSeq, TokenSeq)],
    params: &ParamVector,
) -> Result<(f64, ParamVector)> {
    const CHUNK: usize = 8;
    let parts: Vec<(f64, ParamVector)> = batch
        .par_chunks(CHUNK)
        .map(|chunk| -> Result<(f64, ParamVector)> {
            let mut terms = Vec::with_capacity(chunk.len());
            for (prompt, target) in chunk {
                terms.push(-model.logprob_expr(prompt, target)?);
            }
            Ok(value_and_gradient(&Expr::sum(terms), params)?)
        })
        .collect::<Result<Vec<_>>>()?;
    let inv_n = 1.0 / batch.len() as f64;
    let mut total = ParamVector::zeros(params.layout().clone());
    let mut loss_sum = 0.0;
    for (v, g) in &parts {
        loss_sum += v;
        for (t, s) in total.values_mut().iter_mut().zip(g.values()) {
            *t += s;
        }
    }
    for t in total.values_mut() {
        *t *= inv_n;
    }
    Ok((loss_sum * inv_n, total))
}

#[derive(Debug, Clone)]
pub struct SftTrainOptions {
    pub epochs: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub seed: u64,
}

/// Trains `init` on the SFT examples; returns the tuned parameters and the
/// mean loss per epoch.
pub fn train_sft(
    model: &Transformer,
    init: ParamVector,
    examples: &[SftExample],
    opts: &SftTrainOptions,
) -> Result<(ParamVector, Vec<f64>)> {
    if examples.is_empty() {
        return Err(Error::Data("sft corpus is empty".into()));
    }
    if opts.batch_size == 0 || opts.epochs == 0 {
        return Err(Error::Config("sft epochs and batch_size must be >= 1".into()));
    }
    let mut params = init;
    let mut opt = AdamW::new(params.len(), opts.weight_decay);
    let steps_per_epoch = examples.len().div_ceil(opts.batch_size);
    let total_steps = steps_per_epoch * opts.epochs;
    let mut epoch_losses = Vec::with_capacity(opts.epochs);

    let mut order: Vec<SftExample> = examples.to_vec();
    for epoch in 0..opts.epochs {
        shuffle_examples(&mut order, derive_seed(opts.seed, seed_tags::SFT_SHUFFLE, epoch as u64));
        let mut epoch_loss = 0.0;
        for (b, chunk) in order.chunks(opts.batch_size).enumerate() {
            let batch: Vec<(TokenSeq, TokenSeq)> = chunk
                .iter()
                .map(|e| (e.prompt_tokens.clone(), e.target_tokens.clone()))
                .collect();
            let (loss_value, g) = batch_nll_gradient(model, &batch, &params)
                .map_err(|e| Error::Training(format!("sft epoch {epoch} batch {b}: {e}")))?;
            let step_index = epoch * steps_per_epoch + b;
            let lr = cosine_lr(opts.learning_rate, step_index, total_steps);
            opt.step(&mut params, &g, lr)?;
            epoch_loss += loss_value;
        }
        epoch_losses.push(epoch_loss / steps_per_epoch as f64);
    }
    Ok((params, epoch_losses))
}
