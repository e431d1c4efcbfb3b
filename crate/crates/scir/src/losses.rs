//! Training objectives: the preference-pair DPO loss, the stop-gradient
//! consistency loss with confidence masking, the agreement-gated combined
//! objective, and the pointwise judge scorer used by the scoring baseline.

use gradcore::{evaluate, Expr};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lm::{Bound, PolicyModel, TokenSeq};
use crate::rewards::{
    build_pair_exprs, hard_label, select_reference_from_gaps, variant_labels_agree, GrmSettings,
    PairExprs, PairRefLp, PrefLabel, PreferencePair, PreferenceVerdict, RefChoice,
};
use crate::tasks::fill_pointwise_prompt;
use crate::vocab::SCORE_TOKENS;

/// Probabilities are clamped to [DELTA, 1 - DELTA] before any logarithm.
pub const PROB_CLAMP: f64 = 1e-7;

/// How the confidence indicator in the consistency loss reads its threshold:
/// `HighestProb` activates when max(p, 1-p) > tau (the prose reading, the
/// default); `Literal` activates when p > tau.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum IndicatorMode {
    #[default]
    HighestProb,
    Literal,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossConfig {
    /// DPO temperature.
    pub beta: f64,
    /// Confidence threshold for the consistency terms.
    pub tau: f64,
    /// Weight of the consistency loss in the combined objective.
    pub alpha: f64,
    /// Half-width of the undefined band around 0.5 for hard labels.
    pub epsilon_tie: f64,
    pub indicator: IndicatorMode,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self { beta: 0.1, tau: 0.7, alpha: 1.0, epsilon_tie: 1e-6, indicator: IndicatorMode::HighestProb }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if self.beta <= 0.0 {
            return Err(Error::Config("beta must be > 0".into()));
        }
        if !(0.5..1.0).contains(&self.tau) {
            return Err(Error::Config("tau must be in [0.5, 1)".into()));
        }
        if self.alpha < 0.0 {
            return Err(Error::Config("alpha must be >= 0".into()));
        }
        if self.epsilon_tie < 0.0 || self.epsilon_tie >= 0.5 {
            return Err(Error::Config("epsilon_tie must be in [0, 0.5)".into()));
        }
        Ok(())
    }
}

/// -ln sigmoid(beta * (gap_chosen - gap_rejected)) via the stable softplus
/// identity, over already-built policy log-prob expressions and frozen
/// reference log-probs. Length regularization never enters the loss; it is a
/// labeling-time device.
pub fn dpo_loss_from(
    lp_chosen: &Expr,
    lp_rejected: &Expr,
    ref_lp_chosen: f64,
    ref_lp_rejected: f64,
    beta: f64,
) -> Expr {
    let margin =
        ((lp_chosen.clone() - ref_lp_chosen) - (lp_rejected.clone() - ref_lp_rejected)) * beta;
    (-margin).softplus()
}

/// Standalone DPO loss for one pair against one frozen reference.
pub fn dpo_loss(
    policy: &dyn PolicyModel,
    reference: Bound,
    pair: &PreferencePair,
    chosen: PrefLabel,
    beta: f64,
) -> Result<Expr> {
    let (w, l) = match chosen {
        PrefLabel::A => (&pair.response_a, &pair.response_b),
        PrefLabel::B => (&pair.response_b, &pair.response_a),
    };
    let lp_w = policy.logprob_expr(&pair.prompt, w)?;
    let lp_l = policy.logprob_expr(&pair.prompt, l)?;
    let ref_w = reference.sequence_logprob(&pair.prompt, w)?;
    let ref_l = reference.sequence_logprob(&pair.prompt, l)?;
    Ok(dpo_loss_from(&lp_w, &lp_l, ref_w, ref_l, beta))
}

fn clamp01(p: f64) -> f64 {
    p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP)
}

/// KL(q || p) between Bernoulli distributions, natural log, clamped inputs.
pub fn bernoulli_kl(q: f64, p: f64) -> f64 {
    let (q, p) = (clamp01(q), clamp01(p));
    q * (q.ln() - p.ln()) + (1.0 - q) * ((1.0 - q).ln() - (1.0 - p).ln())
}

/// Entropy of a Bernoulli distribution, natural log, clamped input.
pub fn bernoulli_entropy(q: f64) -> f64 {
    let q = clamp01(q);
    -q * q.ln() - (1.0 - q) * (1.0 - q).ln()
}

/// Cross-entropy -[q ln p + (1-q) ln(1-p)]; equals KL(q||p) + H(q).
pub fn bernoulli_cross_entropy(q: f64, p: f64) -> f64 {
    let (q, p) = (clamp01(q), clamp01(p));
    -(q * p.ln() + (1.0 - q) * (1.0 - p).ln())
}

fn clamp_expr(p: &Expr) -> Expr {
    p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP)
}

/// KL(q || fixed) as an expression; `fixed` must already be detached.
fn kl_expr(q: &Expr, fixed: &Expr) -> Expr {
    let q = clamp_expr(q);
    let p = clamp_expr(fixed);
    let one_q = 1.0 - q.clone();
    let one_p = 1.0 - p.clone();
    q.clone() * (q.ln() - p.ln()) + one_q.clone() * (one_q.ln() - one_p.ln())
}

fn entropy_expr(q: &Expr) -> Expr {
    let q = clamp_expr(q);
    let one_q = 1.0 - q.clone();
    -(q.clone() * q.ln()) - one_q.clone() * one_q.ln()
}

fn confidence_indicator(p: &Expr, tau: f64, mode: IndicatorMode) -> Expr {
    match mode {
        IndicatorMode::HighestProb => {
            (Expr::max(p.clone(), 1.0 - p.clone()) - tau).indicator_pos()
        }
        IndicatorMode::Literal => (p.clone() - tau).indicator_pos(),
    }
}

/// The symmetric stop-gradient consistency objective:
///
/// I(conf(P) > tau) * [KL(Q || sg(P)) + H(Q)] +
/// I(conf(Q) > tau) * [KL(P || sg(Q)) + H(P)]
///
/// Each active term is the cross-entropy of the confident side treated as a
/// fixed target; the indicators are piecewise constant and contribute no
/// gradient.
pub fn consistency_loss(p: &Expr, q: &Expr, tau: f64, mode: IndicatorMode) -> Expr {
    let ind_p = confidence_indicator(p, tau, mode);
    let ind_q = confidence_indicator(q, tau, mode);
    let sg_p = p.stop_grad();
    let sg_q = q.stop_grad();
    let term_p = kl_expr(q, &sg_p) + entropy_expr(q);
    let term_q = kl_expr(p, &sg_q) + entropy_expr(p);
    ind_p * term_p + ind_q * term_q
}

/// How the combined objective decides which pairs receive the DPO term.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GateMode {
    /// Both internal reward models must produce the same defined label and
    /// the judge must be position-consistent.
    Agreement,
    /// Every pair with a defined hard label of (p_irm + p_grm) / 2 trains
    /// (the gate-removal ablation).
    MeanLabel,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RefMode {
    /// Per-pair argmax of the reference log-ratio gap (ties favor local).
    Adaptive,
    /// Always the iteration-start snapshot.
    LocalOnly,
}

/// Resolved per-step configuration for the combined objective.
#[derive(Debug, Clone)]
pub struct ScirStepConfig {
    pub loss: LossConfig,
    pub alpha_l_irm: f64,
    pub alpha_l_grm: f64,
    pub grm: GrmSettings,
    pub gate: GateMode,
    pub reference: RefMode,
}

/// Per-pair record of what the step loss did.
#[derive(Debug, Clone)]
pub struct PairSignals {
    pub verdict: PreferenceVerdict,
    pub gate_open: bool,
    pub agreed: Option<PrefLabel>,
    pub dpo_reference: Option<RefChoice>,
}

pub struct ScirBatchLoss {
    pub loss: Expr,
    pub signals: Vec<PairSignals>,
}

impl ScirBatchLoss {
    pub fn gate_mask(&self) -> Vec<bool> {
        self.signals.iter().map(|s| s.gate_open).collect()
    }
}

/// Evaluates both internal reward models for one pair with the current
/// parameters and extracts labels and the gate decision.
pub fn pair_signals_from_exprs(
    exprs: &PairExprs,
    params: &gradcore::ParamVector,
    cfg: &ScirStepConfig,
) -> Result<PairSignals> {
    let p_irm = evaluate(&exprs.p_irm, params)?;
    let mut variants = Vec::with_capacity(exprs.grm_variants.len());
    for v in &exprs.grm_variants {
        variants.push(evaluate(v, params)?);
    }
    let p_grm = evaluate(&exprs.p_grm, params)?;
    let eps = cfg.loss.epsilon_tie;
    let label_irm = hard_label(p_irm, eps);
    let label_grm = hard_label(p_grm, eps);
    let position_consistent = variant_labels_agree(&variants, eps);
    let verdict = PreferenceVerdict {
        p_irm,
        p_grm,
        p_grm_variants: variants,
        label_irm,
        label_grm,
        grm_position_consistent: position_consistent,
    };

    let (gate_open, agreed) = match cfg.gate {
        GateMode::Agreement => match (label_irm.defined(), label_grm.defined()) {
            (Some(a), Some(b)) if a == b && position_consistent => (true, Some(a)),
            _ => (false, None),
        },
        GateMode::MeanLabel => match hard_label(0.5 * (p_irm + p_grm), eps).defined() {
            Some(l) => (true, Some(l)),
            None => (false, None),
        },
    };
    Ok(PairSignals { verdict, gate_open, agreed, dpo_reference: None })
}

/// The combined step objective: mean over pairs of
/// `gate * L_DPO(pair, agreed label, selected reference) + alpha * L_consistency`.
///
/// The gate is decided from hard labels of the freshly evaluated preference
/// probabilities (detached; no gradient); the consistency term applies to
/// every pair. Verdicts are recomputed from the current parameters on every
/// call, so each optimization step trains against the latest reward models.
pub fn scir_batch_loss(
    policy: &dyn PolicyModel,
    batch: &[(PreferencePair, PairRefLp)],
    params: &gradcore::ParamVector,
    cfg: &ScirStepConfig,
) -> Result<ScirBatchLoss> {
    if batch.is_empty() {
        return Err(Error::Data("empty batch".into()));
    }
    cfg.loss.validate()?;
    let mut terms = Vec::with_capacity(batch.len());
    let mut signals = Vec::with_capacity(batch.len());
    for (pair, ref_lp) in batch {
        let exprs = build_pair_exprs(
            policy,
            pair,
            ref_lp,
            &cfg.grm,
            cfg.loss.beta,
            cfg.alpha_l_irm,
            cfg.alpha_l_grm,
        )?;
        let mut sig = pair_signals_from_exprs(&exprs, params, cfg)?;

        let mut parts: Vec<Expr> = Vec::with_capacity(2);
        if sig.gate_open {
            let agreed = sig.agreed.expect("gate open implies agreed label");
            let choice = match cfg.reference {
                RefMode::Adaptive => select_reference_from_gaps(
                    ref_lp.gap(RefChoice::Local, agreed),
                    ref_lp.gap(RefChoice::Global, agreed),
                ),
                RefMode::LocalOnly => RefChoice::Local,
            };
            sig.dpo_reference = Some(choice);
            let (lp_w, lp_l) = match agreed {
                PrefLabel::A => (&exprs.lp_a, &exprs.lp_b),
                PrefLabel::B => (&exprs.lp_b, &exprs.lp_a),
            };
            parts.push(dpo_loss_from(
                lp_w,
                lp_l,
                ref_lp.of(choice, agreed),
                ref_lp.of(choice, agreed.flipped()),
                cfg.loss.beta,
            ));
        }
        if cfg.loss.alpha > 0.0 {
            parts.push(
                Expr::constant(cfg.loss.alpha)
                    * consistency_loss(&exprs.p_irm, &exprs.p_grm, cfg.loss.tau, cfg.loss.indicator),
            );
        }
        terms.push(match parts.len() {
            0 => Expr::constant(0.0),
            1 => parts.pop().unwrap(),
            _ => {
                let b = parts.pop().unwrap();
                let a = parts.pop().unwrap();
                a + b
            }
        });
        signals.push(sig);
    }
    Ok(ScirBatchLoss { loss: Expr::mean(terms), signals })
}

/// Mean of `alpha * consistency` over the batch with the identical expression
/// structure the combined objective uses; reference for gate-exactness tests.
pub fn consistency_only_batch_loss(
    policy: &dyn PolicyModel,
    batch: &[(PreferencePair, PairRefLp)],
    cfg: &ScirStepConfig,
) -> Result<Expr> {
    if batch.is_empty() {
        return Err(Error::Data("empty batch".into()));
    }
    let mut terms = Vec::with_capacity(batch.len());
    for (pair, ref_lp) in batch {
        let exprs = build_pair_exprs(
            policy,
            pair,
            ref_lp,
            &cfg.grm,
            cfg.loss.beta,
            cfg.alpha_l_irm,
            cfg.alpha_l_grm,
        )?;
        terms.push(
            Expr::constant(cfg.loss.alpha)
                * consistency_loss(&exprs.p_irm, &exprs.p_grm, cfg.loss.tau, cfg.loss.indicator),
        );
    }
    Ok(Expr::mean(terms))
}

/// Expected score of the pointwise judge: sum_k k * softmax(score logits)_k
/// over the five score tokens at the readout position.
pub fn pointwise_judge_score(policy: Bound, prompt: &TokenSeq, response: &TokenSeq) -> Result<f64> {
    let filled = fill_pointwise_prompt(prompt, response);
    let logits = policy.next_token_logits(&filled)?;
    let score_logits: Vec<f64> = SCORE_TOKENS.iter().map(|&t| logits[t as usize]).collect();
    let m = score_logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = score_logits.iter().map(|&x| (x - m).exp()).collect();
    let z: f64 = exps.iter().sum();
    Ok(exps.iter().enumerate().map(|(k, e)| (k + 1) as f64 * e / z).sum::<f64>())
}

/// Expected score from raw score-token logits (shared arithmetic, used by
/// tests against hand-computed softmax values).
pub fn expected_score_from_logits(score_logits: &[f64; 5]) -> f64 {
    let m = score_logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = score_logits.iter().map(|&x| (x - m).exp()).collect();
    let z: f64 = exps.iter().sum();
    exps.iter().enumerate().map(|(k, e)| (k + 1) as f64 * e / z).sum::<f64>()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lm::{init_params, ModelConfig, TokenSeq, Transformer};
    use gradcore::{evaluate, gradient};

    fn toy_model(seed: u64) -> (Transformer, gradcore::ParamVector) {
        let cfg = ModelConfig { vocab_size: 32, context_len: 48, seed, ..ModelConfig::default() };
        let model = Transformer::new(cfg.clone()).unwrap();
        let mut params = init_params(&cfg).unwrap();
        for (i, v) in params.values_mut().iter_mut().enumerate() {
            if *v == 0.0 {
                *v = 0.05 * (((i * 97 + 13) % 37) as f64 / 37.0 - 0.5);
            }
        }
        (model, params)
    }

    fn toy_pair() -> PreferencePair {
        PreferencePair::new(
            "p0",
            TokenSeq::new(vec![3, 17, 19, 2]),
            TokenSeq::new(vec![17, 19]),
            TokenSeq::new(vec![19, 17, 21]),
        )
        .unwrap()
    }

    #[test]
    fn dpo_loss_at_policy_equal_ref_is_ln2() {
        let (model, params) = toy_model(3);
        let reference = Bound::new(&model, &params);
        let pair = toy_pair();
        let loss = dpo_loss(&model, reference, &pair, PrefLabel::A, 0.1).unwrap();
        let v = evaluate(&loss, &params).unwrap();
        assert!((v - std::f64::consts::LN_2).abs() < 1e-12);
        assert!((v - 0.693147).abs() < 1e-6);
    }

    #[test]
    fn dpo_loss_softplus_identity_value() {
        // beta 0.1, log-ratios (1.0, -1.0): -ln sigmoid(0.2) = softplus(-0.2)
        let v = gradcore::softplus(-0.2);
        assert!((v - 0.598139).abs() < 1e-6);
    }

    #[test]
    fn dpo_loss_swap_symmetry() {
        let (model, params) = toy_model(3);
        let cfg = ModelConfig { vocab_size: 32, context_len: 48, seed: 8, ..ModelConfig::default() };
        let ref_model = Transformer::new(cfg.clone()).unwrap();
        let ref_params = init_params(&cfg).unwrap();
        let reference = Bound::new(&ref_model, &ref_params);
        let pair = toy_pair();
        let a = evaluate(&dpo_loss(&model, reference, &pair, PrefLabel::A, 0.1).unwrap(), &params)
            .unwrap();
        let b = evaluate(
            &dpo_loss(&model, reference, &pair.swapped(), PrefLabel::B, 0.1).unwrap(),
            &params,
        )
        .unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn bernoulli_worked_values() {
        assert!((bernoulli_kl(0.6, 0.9) - 0.311239).abs() < 1e-6);
        assert!((bernoulli_entropy(0.6) - 0.673012).abs() < 1e-6);
        assert!((bernoulli_entropy(0.5) - std::f64::consts::LN_2).abs() < 1e-12);
        assert_eq!(bernoulli_kl(0.37, 0.37), 0.0);
    }

    #[test]
    fn cross_entropy_identity_holds_tightly() {
        let mut state = 0x9e3779b97f4a7c15u64;
        let mut next = || {
            state ^= state << 13;
            state ^= state >> 7;
            state ^= state << 17;
            (state >> 11) as f64 / (1u64 << 53) as f64
        };
        for _ in 0..1000 {
            let q = 0.01 + 0.98 * next();
            let p = 0.01 + 0.98 * next();
            let lhs = bernoulli_kl(q, p) + bernoulli_entropy(q);
            let rhs = bernoulli_cross_entropy(q, p);
            assert!((lhs - rhs).abs() < 1e-12, "q={q} p={p}");
        }
    }

    /// Consistency loss over two probability expressions directly driven by
    /// two scalar parameters.
    fn scalar_consistency(p: f64, q: f64, tau: f64, mode: IndicatorMode) -> f64 {
        let layout =
            std::sync::Arc::new(gradcore::Layout::from_sizes([("x", 2usize)]).unwrap());
        let params = gradcore::ParamVector::new(vec![p, q], layout).unwrap();
        let loss = consistency_loss(&Expr::param(0), &Expr::param(1), tau, mode);
        evaluate(&loss, &params).unwrap()
    }

    #[test]
    fn consistency_loss_worked_values() {
        // Neither side confident.
        assert_eq!(scalar_consistency(0.5, 0.5, 0.7, IndicatorMode::HighestProb), 0.0);
        // P confident only: KL(0.6||0.9) + H(0.6) = 0.984250.
        let v = scalar_consistency(0.9, 0.6, 0.7, IndicatorMode::HighestProb);
        assert!((v - 0.984250).abs() < 1e-6);
        // Both confident and equal: KL vanishes, entropies remain.
        let v2 = scalar_consistency(0.9, 0.9, 0.7, IndicatorMode::HighestProb);
        assert!((v2 - 0.650166).abs() < 1e-6);
        // The confident-low case activates under the prose reading but not
        // under the literal one.
        let low = scalar_consistency(0.1, 0.5, 0.7, IndicatorMode::HighestProb);
        assert!(low > 0.0);
        let low_lit = scalar_consistency(0.1, 0.5, 0.7, IndicatorMode::Literal);
        assert_eq!(low_lit, 0.0);
    }

    #[test]
    fn consistency_gradient_respects_stop_gradient_and_masking() {
        // P = sigmoid(x0), Q = sigmoid(x1). With only P confident, gradient
        // flows through Q alone.
        let layout =
            std::sync::Arc::new(gradcore::Layout::from_sizes([("x", 2usize)]).unwrap());
        // sigmoid(2.5) ~ 0.924 (confident), sigmoid(0.3) ~ 0.574 (not).
        let params = gradcore::ParamVector::new(vec![2.5, 0.3], layout).unwrap();
        let p = Expr::param(0).sigmoid();
        let q = Expr::param(1).sigmoid();
        let loss = consistency_loss(&p, &q, 0.7, IndicatorMode::HighestProb);
        let g = gradient(&loss, &params).unwrap();
        assert_eq!(g.values()[0], 0.0, "P-side gradient must be blocked");
        assert!(g.values()[1].abs() > 1e-6, "Q-side gradient must flow");
    }

    #[test]
    fn scir_batch_gate_closed_means_consistency_only_bitwise() {
        let (model, params) = toy_model(5);
        let step_cfg = ScirStepConfig {
            loss: LossConfig { alpha: 1.0, ..LossConfig::default() },
            alpha_l_irm: 0.0,
            alpha_l_grm: 0.02,
            grm: GrmSettings::full(),
            gate: GateMode::Agreement,
            reference: RefMode::Adaptive,
        };
        let pair = toy_pair();
        let ref_lp = PairRefLp { global_a: -3.0, global_b: -4.0, local_a: -3.5, local_b: -3.1 };
        let batch = vec![(pair, ref_lp)];
        let out = scir_batch_loss(&model, &batch, &params, &step_cfg).unwrap();

        if !out.signals[0].gate_open {
            let cons = consistency_only_batch_loss(&model, &batch, &step_cfg).unwrap();
            let g_full = gradient(&out.loss, &params).unwrap();
            let g_cons = gradient(&cons, &params).unwrap();
            for (a, b) in g_full.values().iter().zip(g_cons.values()) {
                assert_eq!(a.to_bits(), b.to_bits());
            }
        }
    }

    #[test]
    fn scir_batch_alpha_zero_and_agreement_reduces_to_dpo() {
        let (model, mut params) = toy_model(6);
        // Push the head so both reward models agree confidently on this pair:
        // make response tokens likely under the policy relative to uniform.
        for v in params.slice_mut("head").unwrap().iter_mut() {
            *v *= 4.0;
        }
        let step_cfg = ScirStepConfig {
            loss: LossConfig { alpha: 0.0, ..LossConfig::default() },
            alpha_l_irm: 0.0,
            alpha_l_grm: 0.0,
            grm: GrmSettings::full(),
            gate: GateMode::MeanLabel,
            reference: RefMode::LocalOnly,
        };
        let pair = toy_pair();
        let ref_lp = PairRefLp { global_a: -5.0, global_b: -5.5, local_a: -5.0, local_b: -5.5 };
        let batch = vec![(pair.clone(), ref_lp)];
        let out = scir_batch_loss(&model, &batch, &params, &step_cfg).unwrap();
        assert!(out.signals[0].gate_open);
        let agreed = out.signals[0].agreed.unwrap();

        let lp_w = model.logprob_expr(&pair.prompt, pair.response(agreed)).unwrap();
        let lp_l = model.logprob_expr(&pair.prompt, pair.response(agreed.flipped())).unwrap();
        let plain = Expr::mean(vec![dpo_loss_from(
            &lp_w,
            &lp_l,
            ref_lp.of(RefChoice::Local, agreed),
            ref_lp.of(RefChoice::Local, agreed.flipped()),
            0.1,
        )]);
        let a = evaluate(&out.loss, &params).unwrap();
        let b = evaluate(&plain, &params).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn empty_batch_rejected() {
        let (model, params) = toy_model(7);
        let cfg = ScirStepConfig {
            loss: LossConfig::default(),
            alpha_l_irm: 0.0,
            alpha_l_grm: 0.02,
            grm: GrmSettings::full(),
            gate: GateMode::Agreement,
            reference: RefMode::Adaptive,
        };
        assert!(scir_batch_loss(&model, &[], &params, &cfg).is_err());
    }

    #[test]
    fn pointwise_expected_score_values() {
        // Uniform score logits -> mean of 1..5 = 3.
        assert!((expected_score_from_logits(&[0.0; 5]) - 3.0).abs() < 1e-12);
        // Logits (0,0,0,0,1): (10 + 5e) / (4 + e).
        let e = std::f64::consts::E;
        let expect = (10.0 + 5.0 * e) / (4.0 + e);
        let got = expected_score_from_logits(&[0.0, 0.0, 0.0, 0.0, 1.0]);
        assert!((got - expect).abs() < 1e-12);
        assert!((got - 3.51152).abs() < 1e-5);
        // All mass on the top token.
        let hot = expected_score_from_logits(&[-1e3, -1e3, -1e3, -1e3, 0.0]);
        assert!((hot - 5.0).abs() < 1e-9);
    }

    #[test]
    fn pointwise_score_on_uniform_model_is_three() {
        let cfg = ModelConfig { vocab_size: 32, context_len: 48, ..ModelConfig::default() };
        let model = Transformer::new(cfg.clone()).unwrap();
        let params = init_params(&cfg).unwrap();
        let bound = Bound::new(&model, &params);
        let inst = crate::tasks::TaskInstance::new(crate::tasks::OpTag::Copy, vec![1, 2]);
        let s = pointwise_judge_score(bound, &inst.prompt, &inst.gold_output).unwrap();
        assert!((s - 3.0).abs() < 1e-12);
    }
}
