//! Fixed symbolic vocabulary shared by tasks, judge prompts and the sampler.
//!
//! The vocabulary is synthetic: a handful of reserved control/marker tokens
//! followed by ten digit tokens. Models may be configured with a larger
//! vocabulary; the extra ids simply never appear in generated corpora.

pub type Token = u32;

pub const PAD: Token = 0;
pub const EOS: Token = 1;
pub const SEP: Token = 2;

pub const OP_COPY: Token = 3;
pub const OP_REVERSE: Token = 4;
pub const OP_SORT: Token = 5;

/// Marker opening the first pairwise judge template.
pub const JUDGE_PAIR_T1: Token = 6;
/// Marker opening the second pairwise judge template.
pub const JUDGE_PAIR_T2: Token = 7;
/// Marker opening the pointwise judge template.
pub const JUDGE_POINT: Token = 8;

/// Verdict token meaning "the response shown first is better".
pub const VERDICT_FIRST: Token = 9;
/// Verdict token meaning "the response shown second is better".
pub const VERDICT_SECOND: Token = 10;

/// Score tokens for the pointwise judge, worst to best.
pub const SCORE_TOKENS: [Token; 5] = [11, 12, 13, 14, 15];

pub const DIGIT_BASE: Token = 16;
pub const NUM_DIGITS: u8 = 10;

/// Smallest vocabulary size that fits every reserved token.
pub const MIN_VOCAB: usize = DIGIT_BASE as usize + NUM_DIGITS as usize;

pub fn digit_token(d: u8) -> Token {
    assert!(d < NUM_DIGITS, "digit out of range");
    DIGIT_BASE + d as Token
}

pub fn token_digit(tok: Token) -> Option<u8> {
    if (DIGIT_BASE..DIGIT_BASE + NUM_DIGITS as Token).contains(&tok) {
        Some((tok - DIGIT_BASE) as u8)
    } else {
        None
    }
}
