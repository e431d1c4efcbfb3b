//! The two internal reward models: the implicit one derived from
//! policy/reference log-ratios and the generative one read from the judge's
//! verdict-token distribution, plus length regularization, multi-prompt
//! aggregation, hard-label extraction and adaptive reference selection.

use gradcore::{sigmoid, Expr};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lm::{Bound, Checkpoint, PolicyModel, TokenSeq, Transformer};
use crate::vocab::{Token, JUDGE_PAIR_T1, JUDGE_PAIR_T2, PAD, SEP, VERDICT_FIRST, VERDICT_SECOND};

/// Judge prompts are padded so the verdict readout always sits at the same
/// position for a given template.
pub const T1_FILL_LEN: usize = 33;
pub const T2_FILL_LEN: usize = 36;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PrefLabel {
    A,
    B,
}

impl PrefLabel {
    pub fn flipped(self) -> Self {
        match self {
            PrefLabel::A => PrefLabel::B,
            PrefLabel::B => PrefLabel::A,
        }
    }
}

/// Hard label extracted from a preference probability under the tie rule.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HardLabel {
    A,
    B,
    Undefined,
}

impl HardLabel {
    pub fn defined(self) -> Option<PrefLabel> {
        match self {
            HardLabel::A => Some(PrefLabel::A),
            HardLabel::B => Some(PrefLabel::B),
            HardLabel::Undefined => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GoldLabel {
    A,
    B,
    Tie,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Order {
    AB,
    BA,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TemplateId {
    T1,
    T2,
}

/// A prompt plus two candidate responses. Responses must differ.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PreferencePair {
    pub id: String,
    pub prompt: TokenSeq,
    pub response_a: TokenSeq,
    pub response_b: TokenSeq,
    pub gold_label: Option<GoldLabel>,
    pub agreed_label: Option<PrefLabel>,
}

impl PreferencePair {
    pub fn new(
        id: impl Into<String>,
        prompt: TokenSeq,
        response_a: TokenSeq,
        response_b: TokenSeq,
    ) -> Result<Self> {
        if response_a == response_b {
            return Err(Error::Data("preference pair responses must differ".into()));
        }
        Ok(Self { id: id.into(), prompt, response_a, response_b, gold_label: None, agreed_label: None })
    }

    pub fn response(&self, which: PrefLabel) -> &TokenSeq {
        match which {
            PrefLabel::A => &self.response_a,
            PrefLabel::B => &self.response_b,
        }
    }

    /// The same pair with responses (and labels) swapped.
    pub fn swapped(&self) -> Self {
        Self {
            id: self.id.clone(),
            prompt: self.prompt.clone(),
            response_a: self.response_b.clone(),
            response_b: self.response_a.clone(),
            gold_label: self.gold_label.map(|g| match g {
                GoldLabel::A => GoldLabel::B,
                GoldLabel::B => GoldLabel::A,
                GoldLabel::Tie => GoldLabel::Tie,
            }),
            agreed_label: self.agreed_label.map(PrefLabel::flipped),
        }
    }
}

/// Token-level pairwise judge prompt. Two fixed skeletons: the first leads
/// with the task prompt, the second shows both responses before it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct JudgePromptTemplate {
    pub id: TemplateId,
    pub verdict_first: Token,
    pub verdict_second: Token,
}

impl JudgePromptTemplate {
    pub fn standard_pair() -> [JudgePromptTemplate; 2] {
        [
            JudgePromptTemplate { id: TemplateId::T1, verdict_first: VERDICT_FIRST, verdict_second: VERDICT_SECOND },
            JudgePromptTemplate { id: TemplateId::T2, verdict_first: VERDICT_FIRST, verdict_second: VERDICT_SECOND },
        ]
    }

    /// Fills the skeleton; the verdict is read at the next-token position
    /// after the returned sequence. Both skeletons lead with the task prompt,
    /// differ in marker and separator structure, and are padded to a fixed
    /// length so the readout position is constant per template.
    pub fn fill(&self, prompt: &TokenSeq, first: &TokenSeq, second: &TokenSeq) -> TokenSeq {
        let mut toks = Vec::with_capacity(T2_FILL_LEN);
        let fixed_len = match self.id {
            TemplateId::T1 => {
                toks.push(JUDGE_PAIR_T1);
                toks.extend_from_slice(prompt.tokens());
                toks.extend_from_slice(first.tokens());
                toks.push(SEP);
                toks.extend_from_slice(second.tokens());
                toks.push(SEP);
                T1_FILL_LEN
            }
            TemplateId::T2 => {
                toks.push(JUDGE_PAIR_T2);
                toks.extend_from_slice(prompt.tokens());
                toks.push(SEP);
                toks.extend_from_slice(first.tokens());
                toks.push(SEP);
                toks.push(SEP);
                toks.extend_from_slice(second.tokens());
                toks.push(SEP);
                toks.push(SEP);
                T2_FILL_LEN
            }
        };
        while toks.len() < fixed_len {
            toks.push(PAD);
        }
        TokenSeq::new(toks)
    }

    /// Correct verdict token when `winner_is_first` says whether the better
    /// response sits in the first slot.
    pub fn verdict_token(&self, winner_is_first: bool) -> Token {
        if winner_is_first {
            self.verdict_first
        } else {
            self.verdict_second
        }
    }
}

/// Which judge prompts the generative reward model aggregates over.
#[derive(Debug, Clone)]
pub struct GrmSettings {
    pub templates: Vec<JudgePromptTemplate>,
    pub orders: Vec<Order>,
}

impl GrmSettings {
    /// Both templates, both response orders: four variants.
    pub fn full() -> Self {
        Self { templates: JudgePromptTemplate::standard_pair().to_vec(), orders: vec![Order::AB, Order::BA] }
    }

    /// One template, one order (the multi-prompt ablation).
    pub fn single() -> Self {
        Self {
            templates: vec![JudgePromptTemplate::standard_pair()[0].clone()],
            orders: vec![Order::AB],
        }
    }

    pub fn variants(&self) -> Vec<(JudgePromptTemplate, Order)> {
        let mut out = Vec::with_capacity(self.templates.len() * self.orders.len());
        for t in &self.templates {
            for &o in &self.orders {
                out.push((t.clone(), o));
            }
        }
        out
    }
}

/// Per-pair output of both internal reward models.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PreferenceVerdict {
    pub p_irm: f64,
    pub p_grm: f64,
    pub p_grm_variants: Vec<f64>,
    pub label_irm: HardLabel,
    pub label_grm: HardLabel,
    pub grm_position_consistent: bool,
}

/// JSONL record for persisted verdicts.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VerdictRecord {
    pub pair_id: String,
    pub p_irm: f64,
    pub p_grm: f64,
    pub variants: Vec<f64>,
    pub label_irm: HardLabel,
    pub label_grm: HardLabel,
    pub position_consistent: bool,
}

impl VerdictRecord {
    pub fn new(pair_id: &str, v: &PreferenceVerdict) -> Self {
        Self {
            pair_id: pair_id.to_string(),
            p_irm: v.p_irm,
            p_grm: v.p_grm,
            variants: v.p_grm_variants.clone(),
            label_irm: v.label_irm,
            label_grm: v.label_grm,
            position_consistent: v.grm_position_consistent,
        }
    }
}

/// Frozen reference checkpoints for one iteration: the snapshot taken at
/// iteration start and the fixed run-origin base model.
#[derive(Debug, Clone)]
pub struct ReferenceSet {
    pub local: Checkpoint,
    pub global: Checkpoint,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RefChoice {
    Local,
    Global,
}

/// beta * (log pi(y|x) - log pi_ref(y|x)) - alpha_l * |y|.
///
/// The partition term of the reward reparameterization cancels in every
/// pairwise use and is never computed.
pub fn implicit_reward(
    policy: Bound,
    reference: Bound,
    prompt: &TokenSeq,
    response: &TokenSeq,
    beta: f64,
    alpha_l: f64,
) -> Result<f64> {
    check_reward_params(beta, alpha_l)?;
    let lp = policy.sequence_logprob(prompt, response)?;
    let lp_ref = reference.sequence_logprob(prompt, response)?;
    Ok(regularized_reward(beta, lp - lp_ref, alpha_l, response.len()))
}

/// Pure arithmetic of the length-regularized reward logit.
pub fn regularized_reward(beta: f64, logratio: f64, alpha_l: f64, response_len: usize) -> f64 {
    beta * logratio - alpha_l * response_len as f64
}

fn check_reward_params(beta: f64, alpha_l: f64) -> Result<()> {
    if beta <= 0.0 {
        return Err(Error::Config("beta must be > 0".into()));
    }
    if alpha_l < 0.0 {
        return Err(Error::Config("alpha_l must be >= 0".into()));
    }
    Ok(())
}

/// Probability that the implicit reward model prefers `response_a`, always
/// against the global reference.
pub fn irm_preference(
    policy: Bound,
    global_ref: Bound,
    pair: &PreferencePair,
    beta: f64,
    alpha_l: f64,
) -> Result<f64> {
    let ra = implicit_reward(policy, global_ref, &pair.prompt, &pair.response_a, beta, alpha_l)?;
    let rb = implicit_reward(policy, global_ref, &pair.prompt, &pair.response_b, beta, alpha_l)?;
    Ok(sigmoid(ra - rb))
}

/// One judge-prompt variant, canonicalized to "probability `response_a` is
/// preferred". The two verdict logits are length-regularized by the length of
/// the response each verdict designates before the two-way softmax.
pub fn grm_preference_single(
    policy: Bound,
    template: &JudgePromptTemplate,
    pair: &PreferencePair,
    order: Order,
    alpha_l: f64,
) -> Result<f64> {
    check_reward_params(1.0, alpha_l)?;
    let (first, second) = match order {
        Order::AB => (&pair.response_a, &pair.response_b),
        Order::BA => (&pair.response_b, &pair.response_a),
    };
    let filled = template.fill(&pair.prompt, first, second);
    let logits = policy.next_token_logits(&filled)?;
    let gap = logits[template.verdict_first as usize] - logits[template.verdict_second as usize]
        - alpha_l * (first.len() as f64 - second.len() as f64);
    let p_first = sigmoid(gap);
    Ok(match order {
        Order::AB => p_first,
        Order::BA => 1.0 - p_first,
    })
}

#[derive(Debug, Clone)]
pub struct GrmPreference {
    pub p_mean: f64,
    pub variants: Vec<f64>,
    pub position_consistent: bool,
}

/// Mean of the canonicalized variant probabilities; position-consistent when
/// every variant's hard label is defined and they all agree.
pub fn grm_preference(
    policy: Bound,
    settings: &GrmSettings,
    pair: &PreferencePair,
    alpha_l: f64,
    epsilon_tie: f64,
) -> Result<GrmPreference> {
    let mut variants = Vec::new();
    for (template, order) in settings.variants() {
        variants.push(grm_preference_single(policy, &template, pair, order, alpha_l)?);
    }
    if variants.is_empty() {
        return Err(Error::Config("no judge prompt variants configured".into()));
    }
    let p_mean = variants.iter().sum::<f64>() / variants.len() as f64;
    let position_consistent = variant_labels_agree(&variants, epsilon_tie);
    Ok(GrmPreference { p_mean, variants, position_consistent })
}

pub fn variant_labels_agree(variants: &[f64], epsilon_tie: f64) -> bool {
    let first = hard_label(variants[0], epsilon_tie);
    if first == HardLabel::Undefined {
        return false;
    }
    variants.iter().all(|&p| hard_label(p, epsilon_tie) == first)
}

/// A if p > 0.5 + eps, B if p < 0.5 - eps, else undefined.
pub fn hard_label(p: f64, epsilon_tie: f64) -> HardLabel {
    if p > 0.5 + epsilon_tie {
        HardLabel::A
    } else if p < 0.5 - epsilon_tie {
        HardLabel::B
    } else {
        HardLabel::Undefined
    }
}

/// Picks whichever reference gives the larger chosen-over-rejected log-ratio
/// gap (ties favor local), making the preference requirement on the policy at
/// least as strict as under either single reference.
pub fn select_reference_from_gaps(local_gap: f64, global_gap: f64) -> RefChoice {
    if global_gap > local_gap {
        RefChoice::Global
    } else {
        RefChoice::Local
    }
}

/// Full adaptive-reference rule over a labeled pair.
pub fn select_reference(
    refs: &ReferenceSet,
    pair: &PreferencePair,
    agreed: PrefLabel,
) -> Result<RefChoice> {
    let (winner, loser) = match agreed {
        PrefLabel::A => (&pair.response_a, &pair.response_b),
        PrefLabel::B => (&pair.response_b, &pair.response_a),
    };
    let local_model = Transformer::new(refs.local.config.clone())?;
    let global_model = Transformer::new(refs.global.config.clone())?;
    let lb = Bound::new(&local_model, &refs.local.params);
    let gb = Bound::new(&global_model, &refs.global.params);
    let local_gap =
        lb.sequence_logprob(&pair.prompt, winner)? - lb.sequence_logprob(&pair.prompt, loser)?;
    let global_gap =
        gb.sequence_logprob(&pair.prompt, winner)? - gb.sequence_logprob(&pair.prompt, loser)?;
    Ok(select_reference_from_gaps(local_gap, global_gap))
}

/// Everything needed to score a pair with both internal reward models.
#[derive(Debug, Clone)]
pub struct VerdictSettings {
    pub beta: f64,
    pub alpha_l_irm: f64,
    pub alpha_l_grm: f64,
    pub epsilon_tie: f64,
    pub grm: GrmSettings,
}

/// Scores one pair with both internal reward models (frozen, numeric path).
pub fn compute_verdict(
    policy: Bound,
    global_ref: Bound,
    pair: &PreferencePair,
    s: &VerdictSettings,
) -> Result<PreferenceVerdict> {
    let p_irm = irm_preference(policy, global_ref, pair, s.beta, s.alpha_l_irm)?;
    let grm = grm_preference(policy, &s.grm, pair, s.alpha_l_grm, s.epsilon_tie)?;
    Ok(PreferenceVerdict {
        p_irm,
        p_grm: grm.p_mean,
        p_grm_variants: grm.variants,
        label_irm: hard_label(p_irm, s.epsilon_tie),
        label_grm: hard_label(grm.p_mean, s.epsilon_tie),
        grm_position_consistent: grm.position_consistent,
    })
}

/// Frozen reference log-probabilities for one pair, computed once per
/// iteration and reused across training steps.
#[derive(Debug, Clone, Copy)]
pub struct PairRefLp {
    pub global_a: f64,
    pub global_b: f64,
    pub local_a: f64,
    pub local_b: f64,
}

impl PairRefLp {
    pub fn compute(local: Bound, global: Bound, pair: &PreferencePair) -> Result<Self> {
        Ok(Self {
            global_a: global.sequence_logprob(&pair.prompt, &pair.response_a)?,
            global_b: global.sequence_logprob(&pair.prompt, &pair.response_b)?,
            local_a: local.sequence_logprob(&pair.prompt, &pair.response_a)?,
            local_b: local.sequence_logprob(&pair.prompt, &pair.response_b)?,
        })
    }

    pub fn of(&self, choice: RefChoice, which: PrefLabel) -> f64 {
        match (choice, which) {
            (RefChoice::Local, PrefLabel::A) => self.local_a,
            (RefChoice::Local, PrefLabel::B) => self.local_b,
            (RefChoice::Global, PrefLabel::A) => self.global_a,
            (RefChoice::Global, PrefLabel::B) => self.global_b,
        }
    }

    /// Log-ratio gap of the given reference with `winner` as chosen.
    pub fn gap(&self, choice: RefChoice, winner: PrefLabel) -> f64 {
        self.of(choice, winner) - self.of(choice, winner.flipped())
    }
}

/// Differentiable per-pair reward expressions sharing one policy log-prob
/// leaf per response, so a whole step's loss evaluates each sequence once.
pub struct PairExprs {
    pub lp_a: Expr,
    pub lp_b: Expr,
    pub p_irm: Expr,
    pub grm_variants: Vec<Expr>,
    pub p_grm: Expr,
}

/// Builds the differentiable preference probabilities for one pair. The
/// reference log-probabilities enter as constants (references are frozen).
pub fn build_pair_exprs(
    policy: &dyn PolicyModel,
    pair: &PreferencePair,
    ref_lp: &PairRefLp,
    grm: &GrmSettings,
    beta: f64,
    alpha_l_irm: f64,
    alpha_l_grm: f64,
) -> Result<PairExprs> {
    let lp_a = policy.logprob_expr(&pair.prompt, &pair.response_a)?;
    let lp_b = policy.logprob_expr(&pair.prompt, &pair.response_b)?;

    let reward_a = (lp_a.clone() - ref_lp.global_a) * beta
        - Expr::constant(alpha_l_irm * pair.response_a.len() as f64);
    let reward_b = (lp_b.clone() - ref_lp.global_b) * beta
        - Expr::constant(alpha_l_irm * pair.response_b.len() as f64);
    let p_irm = (reward_a - reward_b).sigmoid();

    let mut grm_variants = Vec::new();
    for (template, order) in grm.variants() {
        let (first, second) = match order {
            Order::AB => (&pair.response_a, &pair.response_b),
            Order::BA => (&pair.response_b, &pair.response_a),
        };
        let filled = template.fill(&pair.prompt, first, second);
        let gap = policy.verdict_gap_expr(&filled, template.verdict_first, template.verdict_second)?
            - Expr::constant(alpha_l_grm * (first.len() as f64 - second.len() as f64));
        let p_first = gap.sigmoid();
        grm_variants.push(match order {
            Order::AB => p_first,
            Order::BA => 1.0 - p_first,
        });
    }
    let p_grm = Expr::mean(grm_variants.clone());

    Ok(PairExprs { lp_a, lp_b, p_irm, grm_variants, p_grm })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lm::{init_params, ModelConfig};
    use gradcore::evaluate;

    fn toy_model() -> (Transformer, gradcore::ParamVector) {
        let cfg = ModelConfig { vocab_size: 32, context_len: 48, ..ModelConfig::default() };
        let model = Transformer::new(cfg.clone()).unwrap();
        let mut params = init_params(&cfg).unwrap();
        for (i, v) in params.values_mut().iter_mut().enumerate() {
            if *v == 0.0 {
                *v = 0.05 * (((i * 131 + 7) % 41) as f64 / 41.0 - 0.5);
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
    fn identical_responses_rejected() {
        let r = PreferencePair::new(
            "x",
            TokenSeq::new(vec![3, 2]),
            TokenSeq::new(vec![17]),
            TokenSeq::new(vec![17]),
        );
        assert!(r.is_err());
    }

    #[test]
    fn regularized_reward_arithmetic() {
        // beta 0.1, logratio 3.0, |y| = 10, alpha_l 0.02 -> 0.3 - 0.2 = 0.1
        assert!((regularized_reward(0.1, 3.0, 0.02, 10) - 0.1).abs() < 1e-12);
        // unregularized 2.0, alpha_l 0.02, |y| = 30 -> 1.4
        assert!((regularized_reward(0.1, 20.0, 0.02, 30) - 1.4).abs() < 1e-12);
    }

    #[test]
    fn irm_gap_sigmoid_value() {
        // rewards (0.1*3 - 0.02*10, 0.1*1 - 0.02*20) = (0.1, -0.3); sigma(0.4)
        let ra = regularized_reward(0.1, 3.0, 0.02, 10);
        let rb = regularized_reward(0.1, 1.0, 0.02, 20);
        assert!((sigmoid(ra - rb) - 0.598688).abs() < 1e-6);
    }

    #[test]
    fn policy_equal_to_ref_gives_half() {
        let (model, params) = toy_model();
        let bound = Bound::new(&model, &params);
        let pair = toy_pair();
        let r = implicit_reward(bound, bound, &pair.prompt, &pair.response_a, 0.1, 0.0).unwrap();
        assert_eq!(r, 0.0);
        let p = irm_preference(bound, bound, &pair, 0.1, 0.0).unwrap();
        assert_eq!(p, 0.5);
    }

    #[test]
    fn irm_antisymmetry() {
        let (model, params) = toy_model();
        let (ref_model, ref_params) = {
            let cfg = ModelConfig { seed: 9, vocab_size: 32, context_len: 48, ..ModelConfig::default() };
            (Transformer::new(cfg.clone()).unwrap(), init_params(&cfg).unwrap())
        };
        let policy = Bound::new(&model, &params);
        let global = Bound::new(&ref_model, &ref_params);
        let pair = toy_pair();
        let p = irm_preference(policy, global, &pair, 0.1, 0.01).unwrap();
        let q = irm_preference(policy, global, &pair.swapped(), 0.1, 0.01).unwrap();
        assert!((p + q - 1.0).abs() < 1e-12);
    }

    #[test]
    fn grm_canonicalization_and_swap_invariance() {
        let (model, params) = toy_model();
        let bound = Bound::new(&model, &params);
        let pair = toy_pair();
        let settings = GrmSettings::full();
        let g = grm_preference(bound, &settings, &pair, 0.02, 1e-6).unwrap();
        let gs = grm_preference(bound, &settings, &pair.swapped(), 0.02, 1e-6).unwrap();
        assert!((g.p_mean + gs.p_mean - 1.0).abs() < 1e-12);
        assert_eq!(g.variants.len(), 4);
    }

    #[test]
    fn ba_order_canonicalizes_by_complement() {
        // With a raw first-position probability of p the canonical value for
        // order BA is 1 - p; check via the antisymmetric pair of calls.
        let (model, params) = toy_model();
        let bound = Bound::new(&model, &params);
        let pair = toy_pair();
        let t = &JudgePromptTemplate::standard_pair()[0];
        let p_ab = grm_preference_single(bound, t, &pair, Order::AB, 0.0).unwrap();
        let p_ba_of_swapped = grm_preference_single(bound, t, &pair.swapped(), Order::BA, 0.0).unwrap();
        // Same filled prompt in both calls; canonical values are complements.
        assert!((p_ab + p_ba_of_swapped - 1.0).abs() < 1e-12);
    }

    #[test]
    fn hard_label_tie_rule() {
        assert_eq!(hard_label(0.75, 1e-6), HardLabel::A);
        assert_eq!(hard_label(0.5, 1e-6), HardLabel::Undefined);
        assert_eq!(hard_label(0.2, 1e-6), HardLabel::B);
        assert_eq!(hard_label(0.5 + 5e-7, 1e-6), HardLabel::Undefined);
    }

    #[test]
    fn variant_aggregation_examples() {
        let eps = 1e-6;
        let v1 = [0.8, 0.7, 0.6, 0.9];
        assert!((v1.iter().sum::<f64>() / 4.0 - 0.75).abs() < 1e-12);
        assert!(variant_labels_agree(&v1, eps));

        let v2 = [0.8, 0.4, 0.6, 0.9];
        assert!((v2.iter().sum::<f64>() / 4.0 - 0.675).abs() < 1e-12);
        assert!(!variant_labels_agree(&v2, eps));

        let v3 = [0.5, 0.5, 0.5, 0.5];
        assert!(!variant_labels_agree(&v3, eps));
        assert_eq!(hard_label(0.5, eps), HardLabel::Undefined);
    }

    #[test]
    fn reference_selection_takes_larger_gap_ties_local() {
        assert_eq!(select_reference_from_gaps(0.3, 0.7), RefChoice::Global);
        assert_eq!(select_reference_from_gaps(0.7, 0.3), RefChoice::Local);
        assert_eq!(select_reference_from_gaps(0.5, 0.5), RefChoice::Local);
    }

    #[test]
    fn length_reg_monotone_in_alpha_for_longer_response() {
        let (model, params) = toy_model();
        let cfg2 = ModelConfig { seed: 23, vocab_size: 32, context_len: 48, ..ModelConfig::default() };
        let ref_model = Transformer::new(cfg2.clone()).unwrap();
        let ref_params = init_params(&cfg2).unwrap();
        let policy = Bound::new(&model, &params);
        let global = Bound::new(&ref_model, &ref_params);
        // response_a longer than response_b.
        let pair = PreferencePair::new(
            "m",
            TokenSeq::new(vec![4, 18, 20, 2]),
            TokenSeq::new(vec![20, 18, 19, 21]),
            TokenSeq::new(vec![18, 20]),
        )
        .unwrap();
        let alphas = [0.0, 0.01, 0.02, 0.05];
        let mut last_irm = f64::INFINITY;
        for &a in &alphas {
            let p = irm_preference(policy, global, &pair, 0.1, a).unwrap();
            assert!(p < last_irm, "irm not strictly decreasing at alpha_l {a}");
            last_irm = p;
        }
        for (template, order) in GrmSettings::full().variants() {
            let mut last = f64::INFINITY;
            for &a in &alphas {
                let p = grm_preference_single(policy, &template, &pair, order, a).unwrap();
                assert!(p < last, "grm variant not strictly decreasing at alpha_l {a}");
                last = p;
            }
        }
    }

    #[test]
    fn exprs_match_numeric_path() {
        let (model, params) = toy_model();
        let cfg2 = ModelConfig { seed: 31, vocab_size: 32, context_len: 48, ..ModelConfig::default() };
        let ref_model = Transformer::new(cfg2.clone()).unwrap();
        let ref_params = init_params(&cfg2).unwrap();
        let policy = Bound::new(&model, &params);
        let global = Bound::new(&ref_model, &ref_params);
        let local = global;
        let pair = toy_pair();

        let ref_lp = PairRefLp::compute(local, global, &pair).unwrap();
        let exprs = build_pair_exprs(&model, &pair, &ref_lp, &GrmSettings::full(), 0.1, 0.0, 0.02)
            .unwrap();

        let p_irm_expr = evaluate(&exprs.p_irm, &params).unwrap();
        let p_irm_num = irm_preference(policy, global, &pair, 0.1, 0.0).unwrap();
        assert!((p_irm_expr - p_irm_num).abs() < 1e-12);

        let g = grm_preference(policy, &GrmSettings::full(), &pair, 0.02, 1e-6).unwrap();
        let p_grm_expr = evaluate(&exprs.p_grm, &params).unwrap();
        assert!((p_grm_expr - g.p_mean).abs() < 1e-12);
    }
}
