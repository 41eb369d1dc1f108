//! Independent reference implementations used as test oracles. None of these
//! call into the code they check.
#![allow(dead_code)]

use std::collections::BTreeMap;

use groupprof::lm::{TermDistribution, UserModel};

pub fn user(id: &str, counts: &[(&str, f64)]) -> UserModel {
    let counts: BTreeMap<String, f64> = counts.iter().map(|(t, c)| (t.to_string(), *c)).collect();
    UserModel {
        user_id: id.to_string(),
        lm: TermDistribution::from_weights(counts.iter().map(|(t, &c)| (t.clone(), c))),
        counts,
    }
}

/// Naive average precision: precision at every relevant rank recomputed by
/// scanning the prefix.
pub fn naive_ap(ranking: &[&str], qrels: &BTreeMap<String, i32>, threshold: i32) -> Option<f64> {
    let is_rel = |d: &str| qrels.get(d).is_some_and(|&r| r > threshold);
    let total_relevant = qrels.values().filter(|&&r| r > threshold).count();
    if total_relevant == 0 {
        return None;
    }
    let mut sum = 0.0;
    for k in 0..ranking.len() {
        if is_rel(ranking[k]) {
            let rel_in_prefix = ranking[..=k].iter().filter(|d| is_rel(d)).count();
            sum += rel_in_prefix as f64 / (k + 1) as f64;
        }
    }
    Some(sum / total_relevant as f64)
}

/// Double-double accumulator (Knuth two-sum, FMA two-product).
#[derive(Debug, Clone, Copy, Default)]
pub struct DoubleDouble {
    pub hi: f64,
    pub lo: f64,
}

impl DoubleDouble {
    fn two_sum(a: f64, b: f64) -> (f64, f64) {
        let s = a + b;
        let bb = s - a;
        (s, (a - (s - bb)) + (b - bb))
    }

    pub fn add(&mut self, x: f64) {
        let (s, e) = Self::two_sum(self.hi, x);
        let (hi, lo) = Self::two_sum(s, e + self.lo);
        self.hi = hi;
        self.lo = lo;
    }

    /// Adds `a · b` exactly before rounding into the accumulator.
    pub fn add_product(&mut self, a: f64, b: f64) {
        let p = a * b;
        let err = a.mul_add(b, -p);
        self.add(p);
        self.add(err);
    }
}

/// Query likelihood of `text` under `prob`, accumulated in double-double.
/// Terms with `known(t) == false` are skipped; returns `None` when nothing
/// was scored or a probability is zero.
pub fn reference_score(
    text: &str,
    known: impl Fn(&str) -> bool,
    prob: impl Fn(&str) -> f64,
) -> Option<DoubleDouble> {
    let mut tf: BTreeMap<String, f64> = BTreeMap::new();
    for tok in text.split_whitespace() {
        *tf.entry(tok.to_string()).or_insert(0.0) += 1.0;
    }
    let mut acc = DoubleDouble::default();
    let mut scored = false;
    for (t, n) in tf {
        if !known(&t) {
            continue;
        }
        let p = prob(&t);
        if p <= 0.0 {
            return None;
        }
        acc.add_product(n, p.ln());
        scored = true;
    }
    scored.then_some(acc)
}

/// Term weights `Σ_i p_i Π_{j≠i}(1 − p_j) · ln(|G| / df)` written out with
/// explicit loops over every (i, j) pair, unnormalized.
pub fn specific_weights_naive(members: &[UserModel], vocab: &[&str]) -> BTreeMap<String, f64> {
    let n = members.len() as f64;
    let mut out = BTreeMap::new();
    for &t in vocab {
        let df = members.iter().filter(|m| m.lm.prob(t) > 0.0).count();
        if df == 0 {
            continue;
        }
        let mut w = 0.0;
        for (i, mi) in members.iter().enumerate() {
            let mut term = mi.lm.prob(t);
            for (j, mj) in members.iter().enumerate() {
                if i != j {
                    term *= 1.0 - mj.lm.prob(t);
                }
            }
            w += term;
        }
        out.insert(t.to_string(), w * (n / df as f64).ln());
    }
    out
}

/// `Σ_t c(t) log(λ_g g(t) + λ_c c(t) + λ_s s(t))` for one user on a dense
/// vocabulary; `-inf` when an observed term gets no mass.
pub fn user_log_likelihood(counts: &[f64], lambda: [f64; 3], g: &[f64], c: &[f64], s: &[f64]) -> f64 {
    let mut ll = 0.0;
    for t in 0..counts.len() {
        if counts[t] == 0.0 {
            continue;
        }
        let p = lambda[0] * g[t] + lambda[1] * c[t] + lambda[2] * s[t];
        if p <= 0.0 {
            return f64::NEG_INFINITY;
        }
        ll += counts[t] * p.ln();
    }
    ll
}

/// Every point of the 3-simplex on a grid of step `1/steps`.
pub fn simplex_grid(steps: usize) -> Vec<[f64; 3]> {
    let mut pts = Vec::new();
    for i in 0..=steps {
        for j in 0..=steps - i {
            let k = steps - i - j;
            pts.push([i as f64 / steps as f64, j as f64 / steps as f64, k as f64 / steps as f64]);
        }
    }
    pts
}

/// Grid-search maximum of the group log-likelihood over a 3-term `θ_g` and
/// each user's λ triple. Given `θ_g` the users separate, so each user's λ is
/// maximized on its own.
pub fn grid_max_log_likelihood(users: &[Vec<f64>], c: &[f64], s: &[f64], steps: usize) -> f64 {
    assert_eq!(c.len(), 3);
    let grid = simplex_grid(steps);
    let mut best = f64::NEG_INFINITY;
    for g in &grid {
        let mut total = 0.0;
        for counts in users {
            let user_best = grid
                .iter()
                .map(|l| user_log_likelihood(counts, *l, g, c, s))
                .fold(f64::NEG_INFINITY, f64::max);
            total += user_best;
        }
        best = best.max(total);
    }
    best
}

pub fn sums_to_one(values: impl IntoIterator<Item = f64>) -> bool {
    (values.into_iter().sum::<f64>() - 1.0).abs() <= 1e-9
}
