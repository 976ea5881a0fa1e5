//! kglm — a graph-conditioned bidirectional language model for knowledge
//! graph representation learning, with a link-prediction evaluator and CLI.
//!
//! The model serializes knowledge-graph triples and entity descriptions into
//! token sequences, encodes them with a transformer whose attention mask
//! admits a pair of positions if they are close in the sequence, both
//! textual, or linked by a short relation path in the graph, and trains with
//! two objectives: a position-shifted masked-prediction loss and a
//! contrastive loss over pooled embeddings of two corrupted sub-graph views.
//!
//! Modules follow the processing pipeline:
//!
//! - [`numcore`]: dense tensors, reverse-mode differentiation, grad checking
//! - [`kgstore`]: graph loading, reachability, importance, sampling, splits
//! - [`seqbuild`]: vocabulary and triple/description serialization
//! - [`bka`]: graph-aware attention masks and the encoder stack
//! - [`kmp`]: importance-weighted masking and the shifted prediction loss
//! - [`cgsa`]: two-view augmentation, pooling, and the contrastive loss
//! - [`trainer`]: Adam with warmup/decay, clipping, checkpoints
//! - [`evalsuite`]: candidate scoring, filtered ranking, MR/MRR/Hits@k
//! - [`cli`]: command-line entry points
//! - [`synth`]: synthetic graph generator used by tests and benchmarks

pub mod bka;
pub mod cgsa;
pub mod cli;
pub mod config;
pub mod error;
pub mod evalsuite;
pub mod kgstore;
pub mod kmp;
pub mod numcore;
pub mod seqbuild;
pub mod synth;
pub mod trainer;

pub use error::{Error, Result};
