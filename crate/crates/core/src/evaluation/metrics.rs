use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::stats::student_t_upper_tail;
use crate::error::{Error, Result};
use crate::numeric::compensated_sum;
use crate::suggestion::RankedRun;

/// Graded judgments for one request.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Qrels<'a> {
    pub request_id: &'a str,
    pub ratings: &'a BTreeMap<String, i32>,
}

/// Average precision with binary relevance `rating > threshold`.
///
/// `R` counts every relevant judged document, retrieved or not. Returns
/// `None` when the request has no relevant document; such requests are left
/// out of MAP.
pub fn average_precision(run: &RankedRun, qrels: &Qrels<'_>, threshold: i32) -> Result<Option<f64>> {
    if run.request_id != qrels.request_id {
        return Err(Error::RequestMismatch {
            run: run.request_id.clone(),
            qrels: qrels.request_id.to_string(),
        });
    }
    let relevant = qrels.ratings.values().filter(|&&r| r > threshold).count();
    if relevant == 0 {
        return Ok(None);
    }
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (k, item) in run.items.iter().enumerate() {
        if qrels.ratings.get(&item.doc_id).is_some_and(|&r| r > threshold) {
            hits += 1;
            sum += hits as f64 / (k + 1) as f64;
        }
    }
    Ok(Some(sum / relevant as f64))
}

/// Per-request AP of one strategy and its mean.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub strategy: String,
    pub per_request_ap: BTreeMap<String, f64>,
    pub map_score: f64,
    pub n_requests: usize,
    /// Requests without any relevant judgment, excluded from the mean.
    #[serde(default)]
    pub excluded_requests: Vec<String>,
}

impl EvalResult {
    pub fn from_ap(strategy: impl Into<String>, per_request_ap: BTreeMap<String, f64>, excluded: Vec<String>) -> Self {
        let n = per_request_ap.len();
        let map_score = if n == 0 {
            0.0
        } else {
            compensated_sum(per_request_ap.values().copied()) / n as f64
        };
        EvalResult {
            strategy: strategy.into(),
            per_request_ap,
            map_score,
            n_requests: n,
            excluded_requests: excluded,
        }
    }
}

/// Outcome of a paired one-tailed t-test of `a > b`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TTest {
    pub t_statistic: f64,
    pub p_value: f64,
    pub n: usize,
    /// The differences had zero variance; `p` is the limiting value.
    pub degenerate: bool,
}

/// Paired t-test on `a − b` against the one-sided alternative `a > b`,
/// with `n − 1` degrees of freedom.
pub fn paired_one_tailed_ttest(ap_a: &BTreeMap<String, f64>, ap_b: &BTreeMap<String, f64>) -> Result<TTest> {
    if ap_a.len() != ap_b.len() || ap_a.keys().zip(ap_b.keys()).any(|(x, y)| x != y) {
        return Err(Error::InvalidArgument("paired samples have different request sets".into()));
    }
    let n = ap_a.len();
    if n < 2 {
        return Err(Error::InvalidArgument(format!("paired t-test needs at least 2 samples, got {n}")));
    }
    let diffs: Vec<f64> = ap_a.values().zip(ap_b.values()).map(|(a, b)| a - b).collect();
    let mean = compensated_sum(diffs.iter().copied()) / n as f64;
    let variance = compensated_sum(diffs.iter().map(|d| (d - mean) * (d - mean))) / (n - 1) as f64;
    if variance == 0.0 || !variance.is_finite() {
        let (t_statistic, p_value) = if mean == 0.0 {
            (0.0, 0.5)
        } else if mean > 0.0 {
            (f64::INFINITY, 0.0)
        } else {
            (f64::NEG_INFINITY, 1.0)
        };
        return Ok(TTest {
            t_statistic,
            p_value,
            n,
            degenerate: true,
        });
    }
    let t_statistic = mean / (variance / n as f64).sqrt();
    Ok(TTest {
        t_statistic,
        p_value: student_t_upper_tail(t_statistic, (n - 1) as f64),
        n,
        degenerate: false,
    })
}
