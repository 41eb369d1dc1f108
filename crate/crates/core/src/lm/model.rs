use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::distribution::TermDistribution;
use super::tokenize::tokenize;
use crate::corpus::{Corpus, UserRecord};
use crate::error::{Error, Result};

/// Ratings strictly above this mark a preference as relevant.
pub const RELEVANCE_THRESHOLD: i32 = 2;

/// Which texts feed the collection (general) model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CollectionScope {
    /// Every preference text plus every candidate text.
    #[default]
    All,
    /// Preference texts only.
    Preferences,
}

impl std::str::FromStr for CollectionScope {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "all" => Ok(CollectionScope::All),
            "preferences" => Ok(CollectionScope::Preferences),
            other => Err(Error::InvalidArgument(format!(
                "unknown collection scope {other:?} (expected `all` or `preferences`)"
            ))),
        }
    }
}

/// Maximum-likelihood unigram model of the concatenated texts.
pub fn build_collection_model<'a>(texts: impl IntoIterator<Item = &'a str>) -> Result<TermDistribution> {
    let mut counts: BTreeMap<String, f64> = BTreeMap::new();
    for text in texts {
        for tok in tokenize(text) {
            *counts.entry(tok).or_insert(0.0) += 1.0;
        }
    }
    if counts.is_empty() {
        return Err(Error::EmptyCollection);
    }
    Ok(TermDistribution::from_weights(counts))
}

/// Collection model over the corpus texts selected by `scope`.
pub fn corpus_collection_model(corpus: &Corpus, scope: CollectionScope) -> Result<TermDistribution> {
    let prefs = corpus
        .users
        .values()
        .flat_map(|u| u.preferences.iter().map(|d| d.text.as_str()));
    match scope {
        CollectionScope::All => {
            build_collection_model(prefs.chain(corpus.candidates.values().map(|c| c.text.as_str())))
        }
        CollectionScope::Preferences => build_collection_model(prefs),
    }
}

/// Rating-weighted term counts of a user's relevant preferences and their
/// normalization.
#[derive(Debug, Clone, PartialEq)]
pub struct UserModel {
    pub user_id: String,
    pub counts: BTreeMap<String, f64>,
    pub lm: TermDistribution,
}

impl UserModel {
    /// No relevant preferences survived: the user is a cold start.
    pub fn is_cold_start(&self) -> bool {
        self.counts.is_empty()
    }

    pub fn total_count(&self) -> f64 {
        crate::numeric::compensated_sum(self.counts.values().copied())
    }
}

/// `c(t,u) = Σ rating · tf(t, doc)` over documents rated above `threshold`.
pub fn build_user_model(user: &UserRecord, threshold: i32) -> UserModel {
    build_user_model_with_budget(user, threshold, None)
}

/// Like [`build_user_model`], keeping only the first `max_tokens` relevant
/// tokens in document order. Used to simulate sparse preference histories.
pub fn build_user_model_with_budget(user: &UserRecord, threshold: i32, max_tokens: Option<usize>) -> UserModel {
    let mut counts: BTreeMap<String, f64> = BTreeMap::new();
    let mut budget = max_tokens.unwrap_or(usize::MAX);
    'docs: for doc in user.preferences.iter().filter(|d| d.rating > threshold) {
        for tok in tokenize(&doc.text) {
            if budget == 0 {
                break 'docs;
            }
            budget -= 1;
            *counts.entry(tok).or_insert(0.0) += f64::from(doc.rating);
        }
    }
    let lm = TermDistribution::from_weights(counts.iter().map(|(t, &c)| (t.as_str(), c)));
    if counts.is_empty() {
        log::debug!("user {:?} has no relevant preferences (cold start)", user.user_id);
    }
    UserModel {
        user_id: user.user_id.clone(),
        counts,
        lm,
    }
}
