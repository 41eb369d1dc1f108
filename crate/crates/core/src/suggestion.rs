//! Ranking suggestion candidates for a request.
//!
//! Three strategies score candidates by query likelihood under different
//! models:
//!
//! * `group`: the group profile, JM-smoothed with the collection model;
//! * `preferences`: the user's own preference model, JM-smoothed likewise;
//! * `combined`: `λ_s·p(t|θ_u) + λ_g·p(t|θ_g) + λ_c·p(t|θ_c)` with the
//!   user's learned weights, the user's own model standing in for the
//!   specific component.
//!
//! Runs serialize to the six-column run-file format
//! `request_id Q0 doc_id rank score tag`.

use std::collections::BTreeMap;
use std::fmt;
use std::fmt::Write as _;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, SuggestionRequest};
use crate::error::{Error, Result};
use crate::lm::{check_jm_lambda, score_terms, term_frequencies, DocumentScore, TermDistribution, UserModel};
use crate::profiling::{GroupProfile, MixingWeights};

/// Offset below the lowest finite score used for unscorable candidates in run files.
pub const SENTINEL_OFFSET: f64 = 1000.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    Group,
    Preferences,
    Combined,
}

impl Strategy {
    pub const ALL: [Strategy; 3] = [Strategy::Group, Strategy::Preferences, Strategy::Combined];

    pub fn as_str(self) -> &'static str {
        match self {
            Strategy::Group => "group",
            Strategy::Preferences => "preferences",
            Strategy::Combined => "combined",
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Strategy::ALL
            .into_iter()
            .find(|x| x.as_str() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown strategy {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RankedItem {
    pub doc_id: String,
    /// Log-probability; `-inf` for candidates with no scorable term.
    pub score: f64,
    /// 1-based.
    pub rank: usize,
}

/// An ordered candidate list for one request.
#[derive(Debug, Clone, PartialEq)]
pub struct RankedRun {
    pub request_id: String,
    pub strategy: Strategy,
    pub items: Vec<RankedItem>,
    pub tag: String,
    /// The user had no relevant preferences.
    pub cold_start: bool,
    /// The user was absent at estimation time and the group-average weights were used.
    pub fallback_weights: bool,
}

impl RankedRun {
    fn from_scores(request: &SuggestionRequest, strategy: Strategy, tag: &str, mut scored: Vec<(String, f64)>) -> Self {
        scored.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        let items = scored
            .into_iter()
            .enumerate()
            .map(|(i, (doc_id, score))| RankedItem {
                doc_id,
                score,
                rank: i + 1,
            })
            .collect();
        RankedRun {
            request_id: request.request_id.clone(),
            strategy,
            items,
            tag: tag.to_string(),
            cold_start: false,
            fallback_weights: false,
        }
    }

    pub fn doc_ids(&self) -> impl Iterator<Item = &str> + '_ {
        self.items.iter().map(|i| i.doc_id.as_str())
    }
}

/// Scores the candidates of requests against a fixed collection model.
///
/// Candidate term frequencies are computed once up front.
#[derive(Debug, Clone)]
pub struct Ranker<'a> {
    theta_c: &'a TermDistribution,
    jm_lambda: f64,
    frequencies: BTreeMap<&'a str, BTreeMap<String, f64>>,
}

impl<'a> Ranker<'a> {
    pub fn new(corpus: &'a Corpus, theta_c: &'a TermDistribution, jm_lambda: f64) -> Result<Self> {
        if theta_c.is_empty() {
            return Err(Error::EmptyBackground);
        }
        check_jm_lambda(jm_lambda)?;
        let frequencies = corpus
            .candidates
            .values()
            .map(|c| (c.doc_id.as_str(), term_frequencies(&c.text)))
            .collect();
        Ok(Ranker {
            theta_c,
            jm_lambda,
            frequencies,
        })
    }

    pub fn jm_lambda(&self) -> f64 {
        self.jm_lambda
    }

    fn score_candidates(&self, request: &SuggestionRequest, prob: impl Fn(&str) -> f64) -> Result<Vec<(String, f64)>> {
        request
            .candidate_ids
            .iter()
            .map(|id| {
                let tf = self.frequencies.get(id.as_str()).ok_or_else(|| Error::DanglingReference {
                    kind: "candidate",
                    id: id.clone(),
                    referrer: format!("request {:?}", request.request_id),
                })?;
                let DocumentScore { score, .. } = score_terms(tf, self.theta_c, &prob);
                Ok((id.clone(), score))
            })
            .collect()
    }

    fn smoothed<'m>(&'m self, model: &'m TermDistribution) -> impl Fn(&str) -> f64 + 'm {
        move |t| self.jm_lambda * model.prob(t) + (1.0 - self.jm_lambda) * self.theta_c.prob(t)
    }

    /// Scores candidates against the group model smoothed with the collection.
    pub fn rank_by_group(&self, request: &SuggestionRequest, profile: &GroupProfile, tag: &str) -> Result<RankedRun> {
        let scored = self.score_candidates(request, self.smoothed(&profile.theta_g))?;
        Ok(RankedRun::from_scores(request, Strategy::Group, tag, scored))
    }

    /// Scores candidates against the user's preference model smoothed with
    /// the collection; a cold-start user degrades to collection-only scoring.
    pub fn rank_by_preferences(&self, request: &SuggestionRequest, user: &UserModel, tag: &str) -> Result<RankedRun> {
        let scored = self.score_candidates(request, self.smoothed(&user.lm))?;
        let mut run = RankedRun::from_scores(request, Strategy::Preferences, tag, scored);
        run.cold_start = user.is_cold_start();
        Ok(run)
    }

    /// Scores candidates under the user's learned mixture of preference,
    /// group and collection models.
    pub fn rank_combined(
        &self,
        request: &SuggestionRequest,
        user: &UserModel,
        profile: &GroupProfile,
        tag: &str,
    ) -> Result<RankedRun> {
        let (weights, fallback) = profile.weights_for(&user.user_id);
        if fallback {
            log::debug!(
                "user {:?} absent from group {:?}; using group-average weights",
                user.user_id,
                profile.group_label
            );
        }
        let mut run = self.rank_with_weights(request, user, &profile.theta_g, &weights, tag)?;
        run.fallback_weights = fallback;
        Ok(run)
    }

    /// The combined strategy with explicit weights.
    pub fn rank_with_weights(
        &self,
        request: &SuggestionRequest,
        user: &UserModel,
        theta_g: &TermDistribution,
        weights: &MixingWeights,
        tag: &str,
    ) -> Result<RankedRun> {
        let theta_c = self.theta_c;
        let scored = self.score_candidates(request, |t| {
            weights.specific * user.lm.prob(t) + weights.group * theta_g.prob(t) + weights.general * theta_c.prob(t)
        })?;
        let mut run = RankedRun::from_scores(request, Strategy::Combined, tag, scored);
        run.cold_start = user.is_cold_start();
        Ok(run)
    }
}

/// Renders runs as `request_id Q0 doc_id rank score tag` lines.
///
/// Unscorable candidates (`-inf`) are written as the run's lowest finite
/// score minus [`SENTINEL_OFFSET`].
pub fn write_run_file<'r>(runs: impl IntoIterator<Item = &'r RankedRun>) -> String {
    let mut out = String::new();
    for run in runs {
        let floor = run
            .items
            .iter()
            .map(|i| i.score)
            .filter(|s| s.is_finite())
            .reduce(f64::min)
            .unwrap_or(0.0);
        let sentinel = floor - SENTINEL_OFFSET;
        for item in &run.items {
            let score = if item.score.is_finite() { item.score } else { sentinel };
            let _ = writeln!(out, "{} Q0 {} {} {:?} {}", run.request_id, item.doc_id, item.rank, score, run.tag);
        }
    }
    out
}

/// Parses run-file text, grouping lines by request in order of first
/// appearance. Items are ordered by their rank column.
pub fn parse_run_file(text: &str, strategy: Strategy) -> Result<Vec<RankedRun>> {
    let mut runs: Vec<RankedRun> = Vec::new();
    let mut index: BTreeMap<String, usize> = BTreeMap::new();
    for (n, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let bad = |msg: &str| Error::Format(format!("run line {}: {msg}", n + 1));
        let cols: Vec<&str> = line.split_whitespace().collect();
        let [request_id, _q0, doc_id, rank, score, tag] = cols[..] else {
            return Err(bad("expected 6 columns"));
        };
        let rank: usize = rank.parse().map_err(|_| bad("bad rank"))?;
        let score: f64 = score.parse().map_err(|_| bad("bad score"))?;
        let slot = *index.entry(request_id.to_string()).or_insert_with(|| {
            runs.push(RankedRun {
                request_id: request_id.to_string(),
                strategy,
                items: Vec::new(),
                tag: tag.to_string(),
                cold_start: false,
                fallback_weights: false,
            });
            runs.len() - 1
        });
        runs[slot].items.push(RankedItem {
            doc_id: doc_id.to_string(),
            score,
            rank,
        });
    }
    for run in &mut runs {
        run.items.sort_by_key(|i| i.rank);
        if run.items.iter().enumerate().any(|(k, i)| i.rank != k + 1) {
            return Err(Error::Format(format!("ranks of request {:?} are not 1..N", run.request_id)));
        }
    }
    Ok(runs)
}
