//! Model-agnostic inference-time refinement for classifiers.
//!
//! The library operates on precomputed artifacts (logits, sentence
//! features, label-name features) and provides the full refinement
//! pipeline:
//!
//! 1. [`hardness`] — flag low-confidence examples by logit variance,
//!    with an adaptive threshold estimated from dev-set mistakes.
//! 2. [`confusion`] — profile which labels the classifier confuses,
//!    yielding per-class negative weights.
//! 3. [`embedder`] — learn a shared text–label embedding space with a
//!    confusion-weighted contrastive objective.
//! 4. [`rerank`] — reweight the logits of hard examples by text–label
//!    cosine similarity and re-argmax; easy examples pass through
//!    untouched.
//! 5. [`metrics`] — macro/weighted F1, top-k oracle curves, Cohen's
//!    kappa, Spearman's rho.
//!
//! [`dataset`] defines the on-disk bundle format and [`synth`] generates
//! seeded synthetic bundles with controllable label confusability for
//! end-to-end experiments.

pub mod confusion;
pub mod dataset;
pub mod embedder;
pub mod error;
pub mod hardness;
pub mod metrics;
pub mod rerank;
pub mod synth;
pub mod util;

pub use error::{Error, Result};
