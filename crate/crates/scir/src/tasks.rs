//! Synthetic instruction-following tasks (copy / reverse / sort over short
//! digit strings) with a programmatic gold oracle, plus construction of the
//! supervised fine-tuning corpus: task demonstrations, pairwise judge
//! demonstrations under both templates and both orders, and pointwise judge
//! demonstrations for the scoring baseline.

use std::collections::HashSet;
use std::io::{BufRead, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lm::TokenSeq;
use crate::rewards::{GoldLabel, JudgePromptTemplate, Order};
use crate::vocab::{
    digit_token, token_digit, Token, EOS, JUDGE_POINT, NUM_DIGITS, OP_COPY, OP_REVERSE, OP_SORT,
    SCORE_TOKENS, SEP,
};

pub const MIN_INPUT_LEN: usize = 3;
pub const MAX_INPUT_LEN: usize = 8;
/// Per-token penalty applied to response length beyond the gold length, so
/// the oracle mildly dislikes verbosity and length-bias effects are visible.
pub const EXCESS_LENGTH_PENALTY: f64 = 0.01;
/// Longest response the corpus machinery produces or judges.
pub const MAX_RESPONSE_TOKENS: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OpTag {
    Copy,
    Reverse,
    Sort,
}

impl OpTag {
    pub const ALL: [OpTag; 3] = [OpTag::Copy, OpTag::Reverse, OpTag::Sort];

    pub fn token(self) -> Token {
        match self {
            OpTag::Copy => OP_COPY,
            OpTag::Reverse => OP_REVERSE,
            OpTag::Sort => OP_SORT,
        }
    }

    pub fn from_token(tok: Token) -> Option<Self> {
        match tok {
            OP_COPY => Some(OpTag::Copy),
            OP_REVERSE => Some(OpTag::Reverse),
            OP_SORT => Some(OpTag::Sort),
            _ => None,
        }
    }

    pub fn apply(self, input: &[u8]) -> Vec<u8> {
        match self {
            OpTag::Copy => input.to_vec(),
            OpTag::Reverse => input.iter().rev().copied().collect(),
            OpTag::Sort => {
                let mut v = input.to_vec();
                v.sort_unstable();
                v
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskInstance {
    pub op: OpTag,
    pub input: Vec<u8>,
    pub prompt: TokenSeq,
    pub gold_output: TokenSeq,
}

impl TaskInstance {
    pub fn new(op: OpTag, input: Vec<u8>) -> Self {
        let mut prompt = vec![op.token()];
        prompt.extend(input.iter().map(|&d| digit_token(d)));
        prompt.push(SEP);
        let gold: Vec<Token> = op.apply(&input).iter().map(|&d| digit_token(d)).collect();
        Self { op, input, prompt: TokenSeq::new(prompt), gold_output: TokenSeq::new(gold) }
    }
}

/// Inverse of the prompt encoding.
pub fn parse_prompt(prompt: &TokenSeq) -> Result<(OpTag, Vec<u8>)> {
    let toks = prompt.tokens();
    if toks.len() < 2 || *toks.last().unwrap() != SEP {
        return Err(Error::Data("malformed task prompt".into()));
    }
    let op = OpTag::from_token(toks[0])
        .ok_or_else(|| Error::Data("prompt does not start with an op token".into()))?;
    let digits: Option<Vec<u8>> = toks[1..toks.len() - 1].iter().map(|&t| token_digit(t)).collect();
    let digits = digits.ok_or_else(|| Error::Data("non-digit token in prompt body".into()))?;
    Ok((op, digits))
}

/// Number of distinct task instances (3 ops x digit strings of length 2..=8).
pub fn enumerable_instance_count() -> u64 {
    let per_op: u64 = (MIN_INPUT_LEN..=MAX_INPUT_LEN)
        .map(|l| (NUM_DIGITS as u64).pow(l as u32))
        .sum();
    3 * per_op
}

/// Deterministic, duplicate-free corpus with op tags balanced to within one.
pub fn gen_corpus(n: usize, seed: u64) -> Result<Vec<TaskInstance>> {
    gen_corpus_excluding(n, seed, &HashSet::new())
}

/// Like [`gen_corpus`] but never emits a prompt present in `exclude`.
pub fn gen_corpus_excluding(
    n: usize,
    seed: u64,
    exclude: &HashSet<TokenSeq>,
) -> Result<Vec<TaskInstance>> {
    if n == 0 {
        return Err(Error::Data("corpus size must be >= 1".into()));
    }
    if n as u64 + exclude.len() as u64 > enumerable_instance_count() {
        return Err(Error::Data(format!(
            "requested {n} instances but only {} are enumerable",
            enumerable_instance_count()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut seen: HashSet<TokenSeq> = HashSet::new();
    let mut out = Vec::with_capacity(n);
    let mut attempts = 0u64;
    let max_attempts = 1000 * n as u64 + 10_000;
    while out.len() < n {
        attempts += 1;
        if attempts > max_attempts {
            return Err(Error::Data("corpus sampling failed to find enough distinct instances".into()));
        }
        let op = OpTag::ALL[out.len() % 3];
        let len = rng.random_range(MIN_INPUT_LEN..=MAX_INPUT_LEN);
        let input: Vec<u8> = (0..len).map(|_| rng.random_range(0..NUM_DIGITS)).collect();
        let inst = TaskInstance::new(op, input);
        if exclude.contains(&inst.prompt) || !seen.insert(inst.prompt.clone()) {
            continue;
        }
        out.push(inst);
    }
    Ok(out)
}

/// Levenshtein distance over token sequences.
pub fn levenshtein(a: &[Token], b: &[Token]) -> usize {
    let (n, m) = (a.len(), b.len());
    let mut prev: Vec<usize> = (0..=m).collect();
    let mut cur = vec![0usize; m + 1];
    for i in 1..=n {
        cur[0] = i;
        for j in 1..=m {
            let sub = prev[j - 1] + usize::from(a[i - 1] != b[j - 1]);
            cur[j] = sub.min(prev[j] + 1).min(cur[j - 1] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[m]
}

/// -(edit distance to gold) - 0.01 * excess length; the gold output is the
/// unique maximizer among bounded-length responses.
pub fn gold_score(instance: &TaskInstance, response: &TokenSeq) -> f64 {
    let dist = levenshtein(response.tokens(), instance.gold_output.tokens());
    let excess = response.len().saturating_sub(instance.gold_output.len());
    -(dist as f64) - EXCESS_LENGTH_PENALTY * excess as f64
}

pub fn gold_preference(instance: &TaskInstance, a: &TokenSeq, b: &TokenSeq) -> GoldLabel {
    let sa = gold_score(instance, a);
    let sb = gold_score(instance, b);
    if sa > sb {
        GoldLabel::A
    } else if sb > sa {
        GoldLabel::B
    } else {
        GoldLabel::Tie
    }
}

/// Applies `edits` random single-token corruptions (substitute, delete,
/// insert, adjacent swap) to a gold output.
pub fn corrupt_response(gold: &TokenSeq, edits: usize, rng: &mut ChaCha8Rng) -> TokenSeq {
    let mut toks: Vec<Token> = gold.tokens().to_vec();
    for _ in 0..edits {
        let kind = rng.random_range(0..4u8);
        match kind {
            0 if !toks.is_empty() => {
                let i = rng.random_range(0..toks.len());
                toks[i] = digit_token(rng.random_range(0..NUM_DIGITS));
            }
            1 if toks.len() > 1 => {
                let i = rng.random_range(0..toks.len());
                toks.remove(i);
            }
            2 => {
                let i = rng.random_range(0..=toks.len());
                toks.insert(i, digit_token(rng.random_range(0..NUM_DIGITS)));
            }
            _ if toks.len() > 1 => {
                let i = rng.random_range(0..toks.len() - 1);
                toks.swap(i, i + 1);
            }
            _ => {
                toks.push(digit_token(rng.random_range(0..NUM_DIGITS)));
            }
        }
    }
    toks.truncate(MAX_RESPONSE_TOKENS);
    TokenSeq::new(toks)
}

/// A degraded response of one of several structural kinds, spanning the
/// range a sampling policy actually produces: light/heavy edits, shuffles,
/// token repeats, truncations and unrelated digit strings.
pub fn degrade_response(gold: &TokenSeq, severity: usize, rng: &mut ChaCha8Rng) -> TokenSeq {
    let mut out = match rng.random_range(0..6u8) {
        0 | 1 => corrupt_response(gold, severity, rng),
        2 => {
            // Shuffled gold tokens.
            let mut toks = gold.tokens().to_vec();
            use rand::seq::SliceRandom;
            toks.shuffle(rng);
            TokenSeq::new(toks)
        }
        3 => {
            // Repeat a token run.
            let mut toks = gold.tokens().to_vec();
            if !toks.is_empty() {
                let i = rng.random_range(0..toks.len());
                for _ in 0..severity.max(1) {
                    toks.insert(i, toks[i]);
                }
            }
            TokenSeq::new(toks)
        }
        4 => {
            // Truncation.
            let keep = gold.len().saturating_sub(severity.max(1)).max(1);
            TokenSeq::new(gold.tokens()[..keep.min(gold.len())].to_vec())
        }
        _ => {
            // Unrelated digit string.
            let len = rng.random_range(1..=(gold.len() + 2));
            TokenSeq::new((0..len).map(|_| digit_token(rng.random_range(0..NUM_DIGITS))).collect())
        }
    };
    out.0.truncate(MAX_RESPONSE_TOKENS);
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExampleKind {
    Task,
    JudgePair,
    JudgePoint,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SftExample {
    pub kind: ExampleKind,
    pub prompt_tokens: TokenSeq,
    pub target_tokens: TokenSeq,
    pub meta: serde_json::Value,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SftDataConfig {
    /// Task demonstrations (prompt -> gold output).
    pub task_demos: usize,
    /// Preference pairs turned into pairwise judge demos (4 each).
    pub judge_pairs: usize,
    /// Pointwise judge demonstrations.
    pub pointwise_demos: usize,
}

impl Default for SftDataConfig {
    fn default() -> Self {
        Self { task_demos: 2000, judge_pairs: 2000, pointwise_demos: 600 }
    }
}

/// Fills the pointwise judge prompt; the score token is read at the next
/// position.
pub fn fill_pointwise_prompt(prompt: &TokenSeq, response: &TokenSeq) -> TokenSeq {
    let mut toks = Vec::with_capacity(prompt.len() + response.len() + 2);
    toks.push(JUDGE_POINT);
    toks.extend_from_slice(prompt.tokens());
    toks.extend_from_slice(response.tokens());
    toks.push(SEP);
    TokenSeq::new(toks)
}

/// Maps oracle quality to one of the five score tokens: the gold response
/// earns the top score and each unit of edit distance costs one band.
pub fn quality_score_token(instance: &TaskInstance, response: &TokenSeq) -> Token {
    let dist = levenshtein(response.tokens(), instance.gold_output.tokens());
    let band = 4usize.saturating_sub(dist.min(4));
    SCORE_TOKENS[band]
}

/// Builds the three SFT strata deterministically:
/// 1. task demos (prompt -> gold output + end token);
/// 2. pairwise judge demos: each sampled non-tie pair under both templates
///    and both orders with the correct verdict token (4 demos per pair, the
///    correct verdict sitting in first position in exactly 2 of them);
/// 3. pointwise judge demos mapping response quality to score tokens.
pub fn build_sft_dataset(
    cfg: &SftDataConfig,
    seed: u64,
    exclude: &HashSet<TokenSeq>,
) -> Result<Vec<SftExample>> {
    let mut out = Vec::new();

    // Stratum 1: task demonstrations. Target includes the end token so the
    // model learns to stop.
    let task_instances = gen_corpus_excluding(cfg.task_demos, seed ^ 0x7461736b, exclude)?;
    for inst in &task_instances {
        let mut target = inst.gold_output.clone();
        target.push(EOS);
        out.push(SftExample {
            kind: ExampleKind::Task,
            prompt_tokens: inst.prompt.clone(),
            target_tokens: target,
            meta: serde_json::json!({"op": inst.op, "input_len": inst.input.len()}),
        });
    }

    // Stratum 2: pairwise judge demonstrations.
    let judge_instances = gen_corpus_excluding(cfg.judge_pairs, seed ^ 0x6a756467, exclude)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x70616972);
    let templates = JudgePromptTemplate::standard_pair();
    let mut made = 0usize;
    let mut attempts = 0usize;
    let mut idx = 0usize;
    while made < cfg.judge_pairs {
        attempts += 1;
        if attempts > cfg.judge_pairs * 50 + 1000 {
            return Err(Error::Data("insufficient distinct non-tie judge pairs".into()));
        }
        let inst = &judge_instances[idx % judge_instances.len()];
        idx += 1;
        let (ra, rb) = sample_response_pair(inst, &mut rng);
        let gold = gold_preference(inst, &ra, &rb);
        if gold == GoldLabel::Tie || ra == rb {
            continue;
        }
        let winner_is_a = gold == GoldLabel::A;
        for template in &templates {
            for order in [Order::AB, Order::BA] {
                let (first, second) = match order {
                    Order::AB => (&ra, &rb),
                    Order::BA => (&rb, &ra),
                };
                let winner_is_first = match order {
                    Order::AB => winner_is_a,
                    Order::BA => !winner_is_a,
                };
                let filled = template.fill(&inst.prompt, first, second);
                out.push(SftExample {
                    kind: ExampleKind::JudgePair,
                    prompt_tokens: filled,
                    target_tokens: TokenSeq::new(vec![template.verdict_token(winner_is_first)]),
                    meta: serde_json::json!({
                        "template": template.id,
                        "order": order,
                        "winner_first": winner_is_first,
                    }),
                });
            }
        }
        made += 1;
    }

    // Stratum 3: pointwise judge demonstrations over graded corruptions.
    let point_instances = gen_corpus_excluding(
        cfg.pointwise_demos.max(1),
        seed ^ 0x706f696e,
        exclude,
    )?;
    let mut prng = ChaCha8Rng::seed_from_u64(seed ^ 0x71756172);
    for (i, inst) in point_instances.iter().take(cfg.pointwise_demos).enumerate() {
        let edits = i % 5;
        let response = if edits == 0 {
            inst.gold_output.clone()
        } else {
            corrupt_response(&inst.gold_output, edits, &mut prng)
        };
        let score = quality_score_token(inst, &response);
        out.push(SftExample {
            kind: ExampleKind::JudgePoint,
            prompt_tokens: fill_pointwise_prompt(&inst.prompt, &response),
            target_tokens: TokenSeq::new(vec![score]),
            meta: serde_json::json!({"edits": edits}),
        });
    }

    Ok(out)
}

/// Two graded responses for a judge demo. Mixes contrast regimes from
/// gold-vs-mild to degraded-vs-degraded so the judge sees the full range of
/// response quality a sampling policy produces.
pub fn sample_response_pair(inst: &TaskInstance, rng: &mut ChaCha8Rng) -> (TokenSeq, TokenSeq) {
    let gold = &inst.gold_output;
    match rng.random_range(0..4u8) {
        0 => (gold.clone(), degrade_response(gold, 1 + rng.random_range(0..2usize), rng)),
        1 => (
            corrupt_response(gold, 1, rng),
            degrade_response(gold, 2 + rng.random_range(0..3usize), rng),
        ),
        2 => (
            degrade_response(gold, 1 + rng.random_range(0..2usize), rng),
            degrade_response(gold, 3 + rng.random_range(0..3usize), rng),
        ),
        _ => (gold.clone(), corrupt_response(gold, 1 + rng.random_range(0..2usize), rng)),
    }
}

/// Deterministic shuffle of SFT examples for epoch batching.
pub fn shuffle_examples(examples: &mut [SftExample], seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    examples.shuffle(&mut rng);
}

pub fn write_jsonl<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = std::io::BufWriter::new(file);
    for row in rows {
        serde_json::to_writer(&mut w, row)?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

pub fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let reader = std::io::BufReader::new(file);
    let mut out = Vec::new();
    for line in reader.lines() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line)?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn op_transforms() {
        assert_eq!(OpTag::Reverse.apply(&[3, 1, 2]), vec![2, 1, 3]);
        assert_eq!(OpTag::Sort.apply(&[3, 1, 2]), vec![1, 2, 3]);
        assert_eq!(OpTag::Copy.apply(&[3, 1, 2]), vec![3, 1, 2]);
    }

    #[test]
    fn prompt_roundtrip() {
        let inst = TaskInstance::new(OpTag::Sort, vec![5, 0, 9]);
        let (op, input) = parse_prompt(&inst.prompt).unwrap();
        assert_eq!(op, OpTag::Sort);
        assert_eq!(input, vec![5, 0, 9]);
    }

    #[test]
    fn corpus_deterministic_and_balanced() {
        let a = gen_corpus(9, 77).unwrap();
        let b = gen_corpus(9, 77).unwrap();
        assert_eq!(a, b);
        let copies = a.iter().filter(|i| i.op == OpTag::Copy).count();
        let revs = a.iter().filter(|i| i.op == OpTag::Reverse).count();
        let sorts = a.iter().filter(|i| i.op == OpTag::Sort).count();
        assert_eq!((copies, revs, sorts), (3, 3, 3));
        let prompts: HashSet<_> = a.iter().map(|i| i.prompt.clone()).collect();
        assert_eq!(prompts.len(), 9);
    }

    #[test]
    fn corpus_overflow_rejected() {
        assert!(gen_corpus(usize::MAX, 1).is_err());
    }

    #[test]
    fn gold_score_examples() {
        let inst = TaskInstance::new(OpTag::Copy, vec![1, 2, 3]);
        assert_eq!(gold_score(&inst, &inst.gold_output), 0.0);
        // Dropping a token costs one edit.
        let short = TokenSeq::new(vec![digit_token(1), digit_token(2)]);
        assert_eq!(gold_score(&inst, &short), -1.0);
        // One substitution-free extra token: distance 1 plus excess penalty.
        let long = TokenSeq::new(vec![digit_token(1), digit_token(2), digit_token(3), digit_token(3)]);
        assert!((gold_score(&inst, &long) - (-1.01)).abs() < 1e-12);
        assert_eq!(gold_preference(&inst, &short, &long), GoldLabel::A);
    }

    #[test]
    fn gold_preference_antisymmetric_and_tie() {
        let inst = TaskInstance::new(OpTag::Reverse, vec![4, 7]);
        let a = TokenSeq::new(vec![digit_token(7), digit_token(4)]);
        let b = TokenSeq::new(vec![digit_token(7)]);
        assert_eq!(gold_preference(&inst, &a, &b), GoldLabel::A);
        assert_eq!(gold_preference(&inst, &b, &a), GoldLabel::B);
        assert_eq!(gold_preference(&inst, &a, &a), GoldLabel::Tie);
    }

    #[test]
    fn gold_output_is_unique_maximizer_exhaustively() {
        // All responses of length <= 3 over a 5-token digit alphabet.
        let inst = TaskInstance::new(OpTag::Sort, vec![2, 0, 1]);
        let alphabet: Vec<Token> = (0..5u8).map(digit_token).collect();
        let mut responses: Vec<Vec<Token>> = vec![vec![]];
        for _ in 0..3 {
            let mut next = responses.clone();
            for r in &responses {
                for &t in &alphabet {
                    let mut e = r.clone();
                    e.push(t);
                    next.push(e);
                }
            }
            responses = next;
        }
        let gold_score_val = gold_score(&inst, &inst.gold_output);
        for r in responses {
            let seq = TokenSeq::new(r);
            let s = gold_score(&inst, &seq);
            if seq == inst.gold_output {
                assert_eq!(s, gold_score_val);
            } else {
                assert!(s < gold_score_val, "{seq:?} ties gold");
            }
        }
    }

    #[test]
    fn levenshtein_dp_oracle_values() {
        assert_eq!(levenshtein(&[1, 2], &[1, 2, 3]), 1);
        assert_eq!(levenshtein(&[], &[1, 2]), 2);
        assert_eq!(levenshtein(&[1, 2, 3], &[1, 2, 3]), 0);
        assert_eq!(levenshtein(&[3, 2, 1], &[1, 2, 3]), 2);
    }

    #[test]
    fn sft_dataset_strata_and_determinism() {
        let cfg = SftDataConfig { task_demos: 6, judge_pairs: 4, pointwise_demos: 5 };
        let a = build_sft_dataset(&cfg, 123, &HashSet::new()).unwrap();
        let b = build_sft_dataset(&cfg, 123, &HashSet::new()).unwrap();
        let ja = serde_json::to_string(&a).unwrap();
        let jb = serde_json::to_string(&b).unwrap();
        assert_eq!(ja, jb);

        let tasks = a.iter().filter(|e| e.kind == ExampleKind::Task).count();
        let pairs = a.iter().filter(|e| e.kind == ExampleKind::JudgePair).count();
        let points = a.iter().filter(|e| e.kind == ExampleKind::JudgePoint).count();
        assert_eq!(tasks, 6);
        assert_eq!(pairs, 16, "each preference pair yields exactly 4 judge demos");
        assert_eq!(points, 5);
    }

    #[test]
    fn judge_demos_balance_winner_position() {
        let cfg = SftDataConfig { task_demos: 1, judge_pairs: 8, pointwise_demos: 0 };
        let data = build_sft_dataset(&cfg, 321, &HashSet::new()).unwrap();
        let judge: Vec<_> = data.iter().filter(|e| e.kind == ExampleKind::JudgePair).collect();
        assert_eq!(judge.len(), 32);
        for group in judge.chunks(4) {
            let firsts = group
                .iter()
                .filter(|e| e.meta.get("winner_first").unwrap().as_bool().unwrap())
                .count();
            assert_eq!(firsts, 2, "correct verdict must appear first exactly twice per pair");
        }
    }

    #[test]
    fn tie_pairs_excluded_from_judge_demos() {
        let cfg = SftDataConfig { task_demos: 1, judge_pairs: 10, pointwise_demos: 0 };
        let data = build_sft_dataset(&cfg, 555, &HashSet::new()).unwrap();
        for e in data.iter().filter(|e| e.kind == ExampleKind::JudgePair) {
            // Every demo has a definite verdict token.
            let v = e.target_tokens.tokens()[0];
            assert!(v == crate::vocab::VERDICT_FIRST || v == crate::vocab::VERDICT_SECOND);
        }
    }

    #[test]
    fn pointwise_score_bands() {
        let inst = TaskInstance::new(OpTag::Copy, vec![1, 2, 3, 4]);
        assert_eq!(quality_score_token(&inst, &inst.gold_output), SCORE_TOKENS[4]);
        let bad = TokenSeq::new(vec![digit_token(9); 4]);
        assert_eq!(quality_score_token(&inst, &bad), SCORE_TOKENS[0]);
    }

    #[test]
    fn jsonl_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.jsonl");
        let rows = gen_corpus(4, 9).unwrap();
        write_jsonl(&path, &rows).unwrap();
        let back: Vec<TaskInstance> = read_jsonl(&path).unwrap();
        assert_eq!(rows, back);
    }
}
