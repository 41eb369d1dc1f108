use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::numeric::compensated_sum;

/// Tolerance on `Σ p = 1` for every non-empty distribution.
pub const NORMALIZATION_TOLERANCE: f64 = 1e-9;

/// A sparse probability distribution over terms.
///
/// Non-empty distributions sum to one; terms with zero mass are not stored.
/// An empty distribution is a legal value and stands for "no evidence".
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
#[serde(transparent)]
pub struct TermDistribution {
    entries: BTreeMap<String, f64>,
}

impl TermDistribution {
    pub fn empty() -> Self {
        Self::default()
    }

    /// Normalizes non-negative weights. Repeated terms accumulate. Weights
    /// summing to zero yield the empty distribution.
    ///
    /// # Panics
    ///
    /// On a negative or non-finite weight.
    pub fn from_weights<S: Into<String>>(weights: impl IntoIterator<Item = (S, f64)>) -> Self {
        let mut acc: BTreeMap<String, f64> = BTreeMap::new();
        for (term, w) in weights {
            assert!(w.is_finite() && w >= 0.0, "invalid term weight {w}");
            if w > 0.0 {
                *acc.entry(term.into()).or_insert(0.0) += w;
            }
        }
        let total = compensated_sum(acc.values().copied());
        if total <= 0.0 {
            return Self::empty();
        }
        for w in acc.values_mut() {
            *w /= total;
        }
        TermDistribution { entries: acc }
    }

    pub fn uniform<S: Into<String>>(terms: impl IntoIterator<Item = S>) -> Self {
        Self::from_weights(terms.into_iter().map(|t| (t, 1.0)))
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Number of terms with positive mass.
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn prob(&self, term: &str) -> f64 {
        self.entries.get(term).copied().unwrap_or(0.0)
    }

    pub fn contains(&self, term: &str) -> bool {
        self.entries.contains_key(term)
    }

    /// Entries in term order.
    pub fn iter(&self) -> impl Iterator<Item = (&str, f64)> + '_ {
        self.entries.iter().map(|(t, &p)| (t.as_str(), p))
    }

    pub fn terms(&self) -> impl Iterator<Item = &str> + '_ {
        self.entries.keys().map(String::as_str)
    }

    pub fn total(&self) -> f64 {
        compensated_sum(self.entries.values().copied())
    }

    /// Empty, or every mass non-negative and the total within
    /// [`NORMALIZATION_TOLERANCE`] of one.
    pub fn is_normalized(&self) -> bool {
        self.is_empty()
            || (self.entries.values().all(|&p| p >= 0.0 && p.is_finite())
                && (self.total() - 1.0).abs() <= NORMALIZATION_TOLERANCE)
    }

    /// Total-variation distance `½ Σ |p − q|`.
    pub fn total_variation(&self, other: &TermDistribution) -> f64 {
        let mut diffs = Vec::with_capacity(self.len() + other.len());
        for (t, p) in self.iter() {
            diffs.push((p - other.prob(t)).abs());
        }
        for (t, q) in other.iter() {
            if !self.contains(t) {
                diffs.push(q);
            }
        }
        0.5 * compensated_sum(diffs)
    }

    /// Entries by descending probability, ties by term.
    pub fn ranked(&self) -> Vec<(&str, f64)> {
        let mut items: Vec<_> = self.iter().collect();
        items.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(b.0)));
        items
    }

    /// `term \t probability` lines, descending probability, ties by term.
    /// Probabilities use the shortest representation that parses back exactly.
    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        for (t, p) in self.ranked() {
            let _ = writeln!(out, "{t}\t{p:?}");
        }
        out
    }

    /// Parses [`to_tsv`](Self::to_tsv) output. Values are taken as given,
    /// not renormalized; they must already sum to one.
    pub fn from_tsv(text: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (idx, line) in text.lines().enumerate() {
            if line.is_empty() {
                continue;
            }
            let (term, p) = line
                .split_once('\t')
                .ok_or_else(|| Error::Format(format!("line {}: expected `term<TAB>probability`", idx + 1)))?;
            let p: f64 = p
                .trim()
                .parse()
                .map_err(|e| Error::Format(format!("line {}: bad probability {p:?}: {e}", idx + 1)))?;
            if !(p.is_finite() && p >= 0.0) {
                return Err(Error::Format(format!("line {}: probability {p} out of range", idx + 1)));
            }
            if entries.insert(term.to_string(), p).is_some() {
                return Err(Error::Format(format!("line {}: duplicate term {term:?}", idx + 1)));
            }
        }
        entries.retain(|_, p| *p > 0.0);
        let dist = TermDistribution { entries };
        if !dist.is_normalized() {
            return Err(Error::Format(format!("probabilities sum to {}, not 1", dist.total())));
        }
        Ok(dist)
    }
}
