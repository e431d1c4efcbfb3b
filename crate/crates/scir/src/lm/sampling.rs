//! Temperature + nucleus (top-p) sampling and greedy decoding.

use gradcore::ParamVector;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::lm::{TokenSeq, Transformer};
use crate::vocab::Token;

/// Below this temperature sampling collapses to greedy argmax.
pub const GREEDY_TEMPERATURE: f64 = 1e-6;

/// Keeps the smallest probability-sorted prefix with cumulative mass >= top_p
/// and renormalizes. Ties sort by token index for determinism. Returns
/// `(token, probability)` pairs.
pub fn nucleus_filter(probs: &[f64], top_p: f64) -> Vec<(usize, f64)> {
    assert!(top_p > 0.0 && top_p <= 1.0, "top_p must be in (0, 1]");
    let mut order: Vec<usize> = (0..probs.len()).collect();
    order.sort_by(|&a, &b| {
        probs[b].partial_cmp(&probs[a]).unwrap_or(std::cmp::Ordering::Equal).then(a.cmp(&b))
    });
    let mut kept = Vec::new();
    let mut cum = 0.0;
    for &idx in &order {
        kept.push(idx);
        cum += probs[idx];
        if cum >= top_p {
            break;
        }
    }
    let mass: f64 = kept.iter().map(|&i| probs[i]).sum();
    kept.into_iter().map(|i| (i, probs[i] / mass)).collect()
}

/// Draws one index from `(index, probability)` support via inverse CDF.
pub fn sample_from_probs(support: &[(usize, f64)], rng: &mut ChaCha8Rng) -> usize {
    debug_assert!(!support.is_empty());
    let total: f64 = support.iter().map(|(_, p)| p).sum();
    let mut dart: f64 = rng.random::<f64>() * total;
    for &(idx, p) in support {
        dart -= p;
        if dart <= 0.0 {
            return idx;
        }
    }
    support.last().unwrap().0
}

fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Samples a response with nucleus sampling, stopping at `end_token` or
/// `max_len`. The returned sequence excludes the end token. Temperatures
/// below [`GREEDY_TEMPERATURE`] short-circuit to greedy decoding.
#[allow(clippy::too_many_arguments)]
pub fn sample_response(
    model: &Transformer,
    params: &ParamVector,
    prompt: &TokenSeq,
    end_token: Token,
    temperature: f64,
    top_p: f64,
    max_len: usize,
    rng: &mut ChaCha8Rng,
) -> Result<TokenSeq> {
    if temperature <= 0.0 {
        return Err(Error::Model("temperature must be > 0".into()));
    }
    if !(top_p > 0.0 && top_p <= 1.0) {
        return Err(Error::Model("top_p must be in (0, 1]".into()));
    }
    let greedy = temperature < GREEDY_TEMPERATURE;
    let mut context = prompt.clone();
    let mut out = Vec::new();
    while out.len() < max_len && context.len() < model.config().context_len {
        let mut logits = model.next_token_logits(params, &context)?;
        let tok = if greedy {
            argmax(&logits) as Token
        } else {
            for l in logits.iter_mut() {
                *l /= temperature;
            }
            let probs = softmax(&logits);
            let support = nucleus_filter(&probs, top_p);
            sample_from_probs(&support, rng) as Token
        };
        if tok == end_token {
            break;
        }
        out.push(tok);
        context.push(tok);
    }
    Ok(TokenSeq::new(out))
}

/// Deterministic argmax decode used by the evaluation suites.
pub fn greedy_decode(
    model: &Transformer,
    params: &ParamVector,
    prompt: &TokenSeq,
    end_token: Token,
    max_len: usize,
) -> Result<TokenSeq> {
    let mut context = prompt.clone();
    let mut out = Vec::new();
    while out.len() < max_len && context.len() < model.config().context_len {
        let logits = model.next_token_logits(params, &context)?;
        let tok = argmax(&logits) as Token;
        if tok == end_token {
            break;
        }
        out.push(tok);
        context.push(tok);
    }
    Ok(TokenSeq::new(out))
}

fn softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&x| (x - m).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lm::{init_params, ModelConfig};
    use rand_chacha::rand_core::SeedableRng;

    #[test]
    fn nucleus_rule_hand_enumeration() {
        // (0.5, 0.3, 0.2) with top_p = 0.7 keeps the first two and
        // renormalizes to (0.625, 0.375).
        let kept = nucleus_filter(&[0.5, 0.3, 0.2], 0.7);
        assert_eq!(kept.len(), 2);
        assert_eq!(kept[0].0, 0);
        assert_eq!(kept[1].0, 1);
        assert!((kept[0].1 - 0.625).abs() < 1e-12);
        assert!((kept[1].1 - 0.375).abs() < 1e-12);
    }

    #[test]
    fn nucleus_top_p_one_keeps_everything() {
        let kept = nucleus_filter(&[0.5, 0.3, 0.2], 1.0);
        assert_eq!(kept.len(), 3);
        let total: f64 = kept.iter().map(|(_, p)| p).sum();
        assert!((total - 1.0).abs() < 1e-12);
    }

    #[test]
    fn sampler_matches_distribution_within_3_sigma() {
        // 3-outcome toy distribution, full support.
        let probs = [0.5, 0.3, 0.2];
        let support = nucleus_filter(&probs, 1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let n = 30_000usize;
        let mut counts = [0usize; 3];
        for _ in 0..n {
            counts[sample_from_probs(&support, &mut rng)] += 1;
        }
        for i in 0..3 {
            let expect = probs[i] * n as f64;
            let sigma = (n as f64 * probs[i] * (1.0 - probs[i])).sqrt();
            let dev = (counts[i] as f64 - expect).abs();
            assert!(dev < 3.0 * sigma, "token {i}: dev {dev} vs 3 sigma {}", 3.0 * sigma);
        }
    }

    #[test]
    fn tiny_temperature_is_greedy_and_deterministic() {
        let cfg = ModelConfig { vocab_size: 16, context_len: 12, layers: 1, model_dim: 8, heads: 2, seed: 5 };
        let model = Transformer::new(cfg.clone()).unwrap();
        let mut params = init_params(&cfg).unwrap();
        for (i, v) in params.slice_mut("head").unwrap().iter_mut().enumerate() {
            *v = ((i % 29) as f64 - 14.0) * 0.011;
        }
        let prompt = TokenSeq::new(vec![3, 7]);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let sampled =
            sample_response(&model, &params, &prompt, 1, 1e-9, 0.9, 6, &mut rng).unwrap();
        let greedy = greedy_decode(&model, &params, &prompt, 1, 6).unwrap();
        assert_eq!(sampled, greedy);
    }

    #[test]
    fn same_seed_same_response() {
        let cfg = ModelConfig { vocab_size: 16, context_len: 16, layers: 1, model_dim: 8, heads: 2, seed: 5 };
        let model = Transformer::new(cfg.clone()).unwrap();
        let params = init_params(&cfg).unwrap();
        let prompt = TokenSeq::new(vec![3, 7]);
        let a = sample_response(
            &model, &params, &prompt, 1, 0.7, 0.9, 8,
            &mut ChaCha8Rng::seed_from_u64(42),
        )
        .unwrap();
        let b = sample_response(
            &model, &params, &prompt, 1, 0.7, 0.9, 8,
            &mut ChaCha8Rng::seed_from_u64(42),
        )
        .unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn respects_max_len_and_context() {
        let cfg = ModelConfig { vocab_size: 16, context_len: 8, layers: 1, model_dim: 8, heads: 2, seed: 5 };
        let model = Transformer::new(cfg.clone()).unwrap();
        let params = init_params(&cfg).unwrap();
        let prompt = TokenSeq::new(vec![3, 7, 2, 4, 9, 11]);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let out = sample_response(&model, &params, &prompt, 1, 1.0, 1.0, 32, &mut rng).unwrap();
        // Context of 8 minus prompt of 6 leaves at most 2 generated tokens.
        assert!(out.len() <= 2);
    }

    #[test]
    fn invalid_sampling_params_rejected() {
        let cfg = ModelConfig { vocab_size: 16, context_len: 8, layers: 1, model_dim: 8, heads: 2, seed: 5 };
        let model = Transformer::new(cfg.clone()).unwrap();
        let params = init_params(&cfg).unwrap();
        let prompt = TokenSeq::new(vec![3]);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(sample_response(&model, &params, &prompt, 1, 0.0, 0.9, 4, &mut rng).is_err());
        assert!(sample_response(&model, &params, &prompt, 1, 0.7, 0.0, 4, &mut rng).is_err());
        assert!(sample_response(&model, &params, &prompt, 1, 0.7, 1.5, 4, &mut rng).is_err());
    }
}
