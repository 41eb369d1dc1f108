//! Group profiling for content customization.
//!
//! A group of users is summarized by a latent unigram model holding what its
//! members share: terms that neither the whole collection explains nor a
//! single member alone. The model is fitted by EM over a three-component
//! mixture (group, general, specific) and used to rank suggestion
//! candidates, either on its own or blended with a user's own preference
//! model through the learned mixing weights.
//!
//! Modules, bottom-up:
//!
//! * [`corpus`]: input records, validation and grouping criteria.
//! * [`lm`]: tokenization, term distributions, collection and user models, scoring.
//! * [`profiling`]: the specific model and the EM estimator.
//! * [`suggestion`]: ranking strategies and run files.
//! * [`evaluation`]: average precision, paired t-tests, strategy comparison and
//!   granularity sweeps.
//! * [`synth`]: seeded synthetic corpora with planted group structure.
//! * [`cli`]: the `groupprof` command line.

pub mod cli;
pub mod corpus;
pub mod error;
pub mod evaluation;
pub mod lm;
pub mod numeric;
pub mod profiling;
pub mod suggestion;
pub mod synth;

pub use error::{Error, Result};
