//! Skip-gram with negative sampling under tied weights.
//!
//! A single embedding table `W` (one row per word) is trained. The context
//! vector of a word is not a separate parameter but the sign-flipped row
//! `c_i = D w_i`, where `D = diag(+1, ..., +1, -1, ..., -1)` with the switch
//! at the split index `m`. Every row therefore decomposes into a leading
//! subvector `x` and a trailing subvector `y`, and the training score is
//! `x_j·x_i - y_j·y_i`.
//!
//! The crate also ships the evaluation harnesses used to compare the whole
//! vectors against each half: word similarity (Spearman), word analogy
//! (3CosAdd / 3CosMul) and a next-word part-of-speech softmax probe.

// `!(v > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod corpus;
pub mod error;
pub mod eval;
pub mod io;
pub mod model;
pub mod train;

pub use corpus::{build_vocab, keep_probability, Corpus, NoiseDistribution, Vocab, WindowStream};
pub use error::{Error, Result};
pub use io::{Embeddings, Part};
pub use model::{DotDecomposition, EmbeddingMatrix, SignSignature, SplitEmbedding};
pub use train::{train, TrainConfig, TrainOutcome};
