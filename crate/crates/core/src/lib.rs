//! Multi-source entity-resolution similarity learning.
//!
//! Records from many sources are compared pairwise; each source pair gets
//! its own linear scoring function, but all of them are tied together
//! through a shared weight vector plus one sparse vector per source. This
//! lets pairs with few (or no) labels borrow strength from the rest.
//!
//! The crate covers the whole path from raw records to evaluation:
//! [`features`] and [`blocking`] turn records into candidate pairs and
//! feature vectors, [`solver`] fits the transfer model and its pooled and
//! pairwise-independent baselines, [`cv`] chooses the sparsity weight,
//! [`eval`] computes precision/recall summaries, and [`synth`] with
//! [`experiments`] reproduce the sample- and source-complexity studies on
//! generated data.

pub mod blocking;
pub mod cv;
pub mod error;
pub mod eval;
pub mod experiments;
pub mod features;
pub mod fixture;
pub mod io;
pub mod model;
pub mod solver;
pub mod synth;

pub use error::{Error, ErrorClass, Result};
pub use model::{classify, Label, LabeledExample, PairScorer, SourceId, SourcePair, TransferModel};
pub use solver::{
    fit_indep, fit_pooled, fit_transfer, lambda_max, loss_gradient, objective, soft_threshold, Dataset,
    IndepModel, SolverConfig, SolverTrace, StepPolicy,
};
