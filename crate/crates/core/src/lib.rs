//! Link prediction on bipartite networks from their concept lattices.
//!
//! The pipeline turns a bipartite network into a formal context, enumerates its formal
//! concepts and cover relation, pre-trains a position-free transformer encoder on masked-token
//! and neighbouring-concept prediction, fine-tunes it for object-object and object-attribute
//! link prediction, and scores the result with F1 / ROC-AUC / AUPR.

pub mod baselines;
pub mod bitset;
pub mod context;
pub mod error;
pub mod fca;
pub mod finetune;
pub mod metrics;
pub mod nn;
pub mod pipeline;
pub mod pretrain;
pub mod rng;
pub mod synthetic;
pub mod tokenizer;
pub mod training;

pub use error::{Error, Result};
