//! Test-only brute-force oracles: an exactly enumerable softmax policy whose
//! preference quantities have closed forms, plus independent recomputations
//! of the losses and the gate. Nothing here calls into the reward or loss
//! modules; sigmoids, log-sum-exps and label logic are reimplemented so the
//! main path is checked against genuinely separate arithmetic.

use std::rc::Rc;
use std::sync::Arc;

use gradcore::{Expr, Layout, ParamFunction, ParamVector};

use crate::error::{Error, Result};
use crate::lm::{PolicyModel, TokenSeq};
use crate::rewards::{Order, PreferencePair, PreferenceVerdict};
use crate::vocab::Token;

pub const MAX_RESPONSES: usize = 16;

/// Explicit softmax policy: a logit row over the response set per prompt.
#[derive(Debug, Clone)]
pub struct EnumPolicy {
    pub prompts: Vec<TokenSeq>,
    pub responses: Vec<TokenSeq>,
    /// logits[prompt][response]
    pub logits: Vec<Vec<f64>>,
}

impl EnumPolicy {
    pub fn new(prompts: Vec<TokenSeq>, responses: Vec<TokenSeq>, logits: Vec<Vec<f64>>) -> Result<Self> {
        if responses.is_empty() || responses.len() > MAX_RESPONSES {
            return Err(Error::Data(format!(
                "response set size {} outside 1..={MAX_RESPONSES}",
                responses.len()
            )));
        }
        if logits.len() != prompts.len() || logits.iter().any(|row| row.len() != responses.len()) {
            return Err(Error::Data("logit table shape mismatch".into()));
        }
        Ok(Self { prompts, responses, logits })
    }

    fn prompt_index(&self, prompt: &TokenSeq) -> Result<usize> {
        self.prompts
            .iter()
            .position(|p| p == prompt)
            .ok_or_else(|| Error::Data("prompt not in table".into()))
    }

    fn response_index(&self, response: &TokenSeq) -> Result<usize> {
        self.responses
            .iter()
            .position(|r| r == response)
            .ok_or_else(|| Error::Data("response outside enumerated set".into()))
    }

    /// log P(response | prompt) under the softmax of the logit row.
    pub fn logprob(&self, prompt: &TokenSeq, response: &TokenSeq) -> Result<f64> {
        let p = self.prompt_index(prompt)?;
        let r = self.response_index(response)?;
        Ok(self.logits[p][r] - naive_lse(&self.logits[p]))
    }
}

fn naive_lse(xs: &[f64]) -> f64 {
    let m = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    m + kahan_sum(xs.iter().map(|&x| (x - m).exp())).ln()
}

fn oracle_sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Compensated summation.
fn kahan_sum(values: impl IntoIterator<Item = f64>) -> f64 {
    let mut sum = 0.0f64;
    let mut c = 0.0f64;
    for v in values {
        let y = v - c;
        let t = sum + y;
        c = (t - sum) - y;
        sum = t;
    }
    sum
}

/// Closed-form implicit-reward preference from two logit tables:
/// sigmoid(beta * (dlog policy - dlog ref) - alpha_l * dlen).
pub fn enum_irm_preference(
    policy: &EnumPolicy,
    reference: &EnumPolicy,
    pair: &PreferencePair,
    beta: f64,
    alpha_l: f64,
) -> Result<f64> {
    let dp = policy.logprob(&pair.prompt, &pair.response_a)?
        - policy.logprob(&pair.prompt, &pair.response_b)?;
    let dr = reference.logprob(&pair.prompt, &pair.response_a)?
        - reference.logprob(&pair.prompt, &pair.response_b)?;
    let dlen = pair.response_a.len() as f64 - pair.response_b.len() as f64;
    Ok(oracle_sigmoid(beta * (dp - dr) - alpha_l * dlen))
}

/// Closed-form canonical judge-variant probability from a raw first-position
/// logit gap.
pub fn enum_grm_variant(gap: f64, first_len: usize, second_len: usize, alpha_l: f64, order: Order) -> f64 {
    let p_first = oracle_sigmoid(gap - alpha_l * (first_len as f64 - second_len as f64));
    match order {
        Order::AB => p_first,
        Order::BA => 1.0 - p_first,
    }
}

/// Closed-form DPO loss value from frozen log-probabilities.
pub fn enum_dpo_loss(
    policy_lp_w: f64,
    policy_lp_l: f64,
    ref_lp_w: f64,
    ref_lp_l: f64,
    beta: f64,
) -> f64 {
    let z = beta * ((policy_lp_w - ref_lp_w) - (policy_lp_l - ref_lp_l));
    -oracle_sigmoid(z).ln()
}

/// Term-by-term forward evaluation of the consistency objective under the
/// highest-probability confidence reading; no stop-gradient is needed because
/// this is forward-only.
pub fn bruteforce_consistency_loss(p: f64, q: f64, tau: f64) -> f64 {
    let clamp = |x: f64| x.clamp(1e-7, 1.0 - 1e-7);
    let kl = |a: f64, b: f64| {
        let (a, b) = (clamp(a), clamp(b));
        kahan_sum([a * (a / b).ln(), (1.0 - a) * ((1.0 - a) / (1.0 - b)).ln()])
    };
    let ent = |a: f64| {
        let a = clamp(a);
        kahan_sum([-a * a.ln(), -(1.0 - a) * (1.0 - a).ln()])
    };
    let mut total = 0.0;
    if p.max(1.0 - p) > tau {
        total += kl(q, p) + ent(q);
    }
    if q.max(1.0 - q) > tau {
        total += kl(p, q) + ent(p);
    }
    total
}

#[derive(Debug, Clone)]
pub struct GateCheckReport {
    pub oracle_mask: Vec<bool>,
    pub mismatches: Vec<usize>,
}

impl GateCheckReport {
    pub fn clean(&self) -> bool {
        self.mismatches.is_empty()
    }
}

/// Recomputes gate membership from raw probabilities with independent label
/// logic and diffs it against the mask the batch loss produced.
pub fn exhaustive_gate_check(
    verdicts: &[PreferenceVerdict],
    produced_mask: &[bool],
    epsilon_tie: f64,
) -> GateCheckReport {
    assert!(verdicts.len() <= 64, "exhaustive check is for small batches");
    assert_eq!(verdicts.len(), produced_mask.len());
    let label = |p: f64| -> i8 {
        if p > 0.5 + epsilon_tie {
            1
        } else if p < 0.5 - epsilon_tie {
            -1
        } else {
            0
        }
    };
    let mut oracle_mask = Vec::with_capacity(verdicts.len());
    for v in verdicts {
        let li = label(v.p_irm);
        let lg = label(v.p_grm);
        let first = label(v.p_grm_variants[0]);
        let pos_consistent =
            first != 0 && v.p_grm_variants.iter().all(|&x| label(x) == first);
        oracle_mask.push(li != 0 && li == lg && pos_consistent);
    }
    let mismatches = oracle_mask
        .iter()
        .zip(produced_mask)
        .enumerate()
        .filter(|(_, (o, p))| o != p)
        .map(|(i, _)| i)
        .collect();
    GateCheckReport { oracle_mask, mismatches }
}

/// Forcing fixture: a [`PolicyModel`] whose log-probabilities come from a
/// parameter-backed logit table (softmax over the enumerated responses) and
/// whose verdict gaps are parameter entries keyed by the filled judge prompt.
/// Built next to an [`EnumPolicy`] holding the same numbers, it pins the
/// library path to table values the oracle can recompute in closed form.
pub struct TablePolicy {
    layout: Arc<Layout>,
    prompts: Vec<TokenSeq>,
    responses: Vec<TokenSeq>,
    gap_keys: Vec<TokenSeq>,
}

impl TablePolicy {
    pub fn new(
        prompts: Vec<TokenSeq>,
        responses: Vec<TokenSeq>,
        gap_keys: Vec<TokenSeq>,
    ) -> Result<Self> {
        if responses.is_empty() || responses.len() > MAX_RESPONSES {
            return Err(Error::Data("response set size out of range".into()));
        }
        let layout = Layout::from_sizes([
            ("logits".to_string(), prompts.len() * responses.len()),
            ("gaps".to_string(), gap_keys.len().max(1)),
        ])?;
        Ok(Self { layout: Arc::new(layout), prompts, responses, gap_keys })
    }

    pub fn layout(&self) -> &Arc<Layout> {
        &self.layout
    }

    /// Packs a logit table and gap values into a parameter vector.
    pub fn pack_params(&self, logits: &[Vec<f64>], gaps: &[f64]) -> Result<ParamVector> {
        let mut values = vec![0.0; self.layout.total_len()];
        for (p, row) in logits.iter().enumerate() {
            for (r, &v) in row.iter().enumerate() {
                values[p * self.responses.len() + r] = v;
            }
        }
        let gaps_range = self.layout.range_of("gaps")?;
        for (i, &g) in gaps.iter().enumerate() {
            values[gaps_range.start + i] = g;
        }
        Ok(ParamVector::new(values, self.layout.clone())?)
    }

    /// Judge-prompt keys registered at construction, in order.
    pub fn gap_key_index(&self, filled: &TokenSeq) -> Option<usize> {
        self.gap_keys.iter().position(|k| k == filled)
    }
}

impl PolicyModel for TablePolicy {
    fn logprob_expr(&self, prompt: &TokenSeq, response: &TokenSeq) -> Result<Expr> {
        let p = self
            .prompts
            .iter()
            .position(|x| x == prompt)
            .ok_or_else(|| Error::Data("prompt not in table".into()))?;
        let r = self
            .responses
            .iter()
            .position(|x| x == response)
            .ok_or_else(|| Error::Data("response outside enumerated set".into()))?;
        let n = self.responses.len();
        let row: Vec<Expr> = (0..n).map(|j| Expr::param(p * n + j)).collect();
        Ok(Expr::param(p * n + r) - Expr::log_sum_exp(row))
    }

    fn verdict_gap_expr(&self, filled: &TokenSeq, _first: Token, _second: Token) -> Result<Expr> {
        let idx = self
            .gap_key_index(filled)
            .ok_or_else(|| Error::Data("judge prompt not registered in gap table".into()))?;
        let base = self.layout.range_of("gaps").expect("layout has gaps").start;
        Ok(Expr::param(base + idx))
    }
}

/// Convenience leaf for tests that need an arbitrary scalar of the params.
pub struct RawParam(pub usize);

impl ParamFunction for RawParam {
    fn describe(&self) -> String {
        format!("raw_param({})", self.0)
    }
    fn value(&self, params: &ParamVector) -> gradcore::Result<f64> {
        params.get(self.0)
    }
    fn vjp(&self, _params: &ParamVector, upstream: f64, grad: &mut [f64]) -> gradcore::Result<()> {
        grad[self.0] += upstream;
        Ok(())
    }
    fn active_range(&self) -> Option<std::ops::Range<usize>> {
        Some(self.0..self.0 + 1)
    }
}

pub fn raw_param_expr(index: usize) -> Expr {
    Expr::param_fn(Rc::new(RawParam(index)))
}
