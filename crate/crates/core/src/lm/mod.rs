//! Unigram language models: tokenization, term distributions, collection and
//! user preference models, and query-likelihood scoring.

mod distribution;
mod model;
mod scoring;
mod tokenize;

pub use distribution::{TermDistribution, NORMALIZATION_TOLERANCE};
pub use model::{
    build_collection_model, build_user_model, build_user_model_with_budget, corpus_collection_model,
    CollectionScope, UserModel, RELEVANCE_THRESHOLD,
};
pub use scoring::{
    score_document, score_frequencies, score_terms, term_frequencies, DocumentScore, DEFAULT_JM_LAMBDA,
};
pub(crate) use scoring::check_jm_lambda;
pub use tokenize::{tokenize, Tokenizer};
