//! Allocation-only core for RL fine-tuning of a dialogue-act-to-text generator
//! against a downstream understanding model.
//!
//! Nothing in this crate touches the filesystem or the clock. Every stochastic
//! step takes an explicit RNG or seed, so every result is a pure function of
//! its inputs. File formats, checkpoints and the CLI live in the `nlgrl` crate.
#![no_std]
// Numeric kernels index several parallel buffers by the same loop variable.
#![allow(clippy::needless_range_loop)]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod bleu;
pub mod channel;
pub mod corpus;
pub mod da;
pub mod eval;
pub mod nn;
pub mod rl;
pub mod seed;
pub mod text;

pub use channel::{Alignment, ConfusionMatrix, EditOp, WerReport};
pub use corpus::{Corpus, Example, TokenVocabulary};
pub use text::WordList;
pub use da::{DaTriple, DialogueAct, IdfTable, MatchResult};
pub use nn::nlu::NluModel;
pub use nn::policy::PolicyModel;
