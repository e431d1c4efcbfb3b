//! Desk-scale self-rewarding language-model training with self-consistent
//! internal rewards: a tiny decoder-only LM that generates its own preference
//! data, judges it with two internal reward models (DPO-implicit and
//! verdict-token generative), and trains with a consistency-regularized,
//! agreement-gated preference objective. A programmatic gold oracle over
//! synthetic sequence tasks provides external ground truth for evaluation.

pub mod error;
pub mod eval;
pub mod lm;
pub mod losses;
pub mod oracle;
pub mod rewards;
pub mod selfreward;
pub mod tasks;
pub mod vocab;

pub use error::{Error, Result};
