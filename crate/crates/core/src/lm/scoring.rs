use std::collections::BTreeMap;

use super::distribution::TermDistribution;
use super::tokenize::tokenize;
use crate::corpus::CandidateDocument;
use crate::error::{Error, Result};
use crate::numeric::CompensatedSum;

/// Default weight of the foreground model in JM smoothing against the
/// collection model.
pub const DEFAULT_JM_LAMBDA: f64 = 0.9;

/// Query-likelihood score of one document.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DocumentScore {
    /// `Σ tf · log p(t)`; `-inf` when no term could be scored.
    pub score: f64,
    /// Distinct document terms absent from the background and skipped.
    pub oov_terms: usize,
    /// Distinct document terms that contributed to the score.
    pub scored_terms: usize,
}

/// Term frequencies of a text after tokenization.
pub fn term_frequencies(text: &str) -> BTreeMap<String, f64> {
    let mut tf = BTreeMap::new();
    for tok in tokenize(text) {
        *tf.entry(tok).or_insert(0.0) += 1.0;
    }
    tf
}

/// Scores term frequencies under an arbitrary term model. Terms unknown to
/// `background` are skipped and counted as out-of-vocabulary.
pub fn score_terms(
    tf: &BTreeMap<String, f64>,
    background: &TermDistribution,
    prob: impl Fn(&str) -> f64,
) -> DocumentScore {
    let mut acc = CompensatedSum::new();
    let mut oov_terms = 0;
    let mut scored_terms = 0;
    let mut impossible = false;
    for (term, &n) in tf {
        if !background.contains(term) {
            oov_terms += 1;
            continue;
        }
        scored_terms += 1;
        let p = prob(term);
        if p > 0.0 {
            acc.add(n * p.ln());
        } else {
            impossible = true;
        }
    }
    let score = if scored_terms == 0 || impossible {
        f64::NEG_INFINITY
    } else {
        acc.value()
    };
    DocumentScore {
        score,
        oov_terms,
        scored_terms,
    }
}

pub(crate) fn check_jm_lambda(jm_lambda: f64) -> Result<()> {
    if jm_lambda > 0.0 && jm_lambda < 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("jm_lambda {jm_lambda} must lie in (0, 1)")))
    }
}

/// `Σ_t tf(t) · log(λ·p(t|model) + (1−λ)·p(t|background))`.
pub fn score_document(
    doc: &CandidateDocument,
    model: &TermDistribution,
    background: &TermDistribution,
    jm_lambda: f64,
) -> Result<DocumentScore> {
    score_frequencies(&term_frequencies(&doc.text), model, background, jm_lambda)
}

/// [`score_document`] over precomputed term frequencies.
pub fn score_frequencies(
    tf: &BTreeMap<String, f64>,
    model: &TermDistribution,
    background: &TermDistribution,
    jm_lambda: f64,
) -> Result<DocumentScore> {
    if background.is_empty() {
        return Err(Error::EmptyBackground);
    }
    check_jm_lambda(jm_lambda)?;
    Ok(score_terms(tf, background, |t| {
        jm_lambda * model.prob(t) + (1.0 - jm_lambda) * background.prob(t)
    }))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn doc(text: &str) -> CandidateDocument {
        CandidateDocument {
            doc_id: "d".into(),
            text: text.into(),
        }
    }

    #[test]
    fn point_mass_example() {
        let model = TermDistribution::from_weights([("spa", 1.0)]);
        let bg = TermDistribution::uniform(["spa", "bar"]);
        let s = score_document(&doc("spa spa"), &model, &bg, 0.5).unwrap();
        assert_eq!(s.score, 2.0 * 0.75f64.ln());
        assert_eq!(s.scored_terms, 1);
    }

    #[test]
    fn equal_model_and_background_is_lambda_free() {
        let bg = TermDistribution::from_weights([("spa", 1.0), ("bar", 3.0)]);
        let a = score_document(&doc("spa bar bar"), &bg, &bg, 0.1).unwrap().score;
        let b = score_document(&doc("spa bar bar"), &bg, &bg, 0.9).unwrap().score;
        assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn oov_terms_skipped() {
        let bg = TermDistribution::uniform(["spa", "bar"]);
        let s = score_document(&doc("spa casino"), &bg, &bg, 0.5).unwrap();
        assert_eq!(s.oov_terms, 1);
        assert_eq!(s.score, 0.5f64.ln());
        let s = score_document(&doc("casino the"), &bg, &bg, 0.5).unwrap();
        assert_eq!(s.score, f64::NEG_INFINITY);
    }

    #[test]
    fn rejects_bad_inputs() {
        let bg = TermDistribution::uniform(["spa"]);
        assert!(matches!(
            score_document(&doc("spa"), &bg, &TermDistribution::empty(), 0.5),
            Err(Error::EmptyBackground)
        ));
        for l in [0.0, 1.0, -0.1, f64::NAN] {
            assert!(score_document(&doc("spa"), &bg, &bg, l).is_err());
        }
    }
}
