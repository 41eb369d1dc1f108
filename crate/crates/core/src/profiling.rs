//! Group profile estimation.
//!
//! Each member's rating-weighted term counts are modelled as draws from a
//! per-user mixture of three unigram models:
//!
//! ```text
//! p(t|u) = λ_g·p(t|θ_g) + λ_c·p(t|θ_c) + λ_s·p(t|θ_s)
//! ```
//!
//! `θ_c` is the collection model and `θ_s` the specific model, both fixed.
//! `θ_s` is computed once in closed form from the member models: a term
//! scores high when exactly one member uses it, weighted by its in-group
//! inverse document frequency, so terms every member uses get zero mass.
//! EM then fits the shared group model `θ_g` and every member's mixing
//! weights by maximizing the group log-likelihood
//! `Σ_u Σ_t c(t,u) · log p(t|u)`.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lm::{TermDistribution, UserModel};
use crate::numeric::{compensated_sum, CompensatedSum};

/// Floor applied to the E-step denominator.
pub const PROBABILITY_FLOOR: f64 = 1e-12;

/// Per-user probabilities of drawing a term from each mixture component.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MixingWeights {
    pub group: f64,
    pub general: f64,
    pub specific: f64,
}

impl MixingWeights {
    pub const UNIFORM: MixingWeights = MixingWeights {
        group: 1.0 / 3.0,
        general: 1.0 / 3.0,
        specific: 1.0 / 3.0,
    };

    pub fn new(group: f64, general: f64, specific: f64) -> Self {
        MixingWeights {
            group,
            general,
            specific,
        }
    }

    pub fn sum(&self) -> f64 {
        compensated_sum([self.group, self.general, self.specific])
    }

    pub fn is_normalized(&self) -> bool {
        [self.group, self.general, self.specific]
            .iter()
            .all(|w| (0.0..=1.0).contains(w))
            && (self.sum() - 1.0).abs() <= 1e-9
    }

    fn as_array(&self) -> [f64; 3] {
        [self.group, self.general, self.specific]
    }

    fn from_array([group, general, specific]: [f64; 3]) -> Self {
        MixingWeights {
            group,
            general,
            specific,
        }
    }

    /// Componentwise mean of a non-empty set of weights.
    pub fn mean<'a>(weights: impl IntoIterator<Item = &'a MixingWeights>) -> Option<MixingWeights> {
        let mut sums = [CompensatedSum::new(), CompensatedSum::new(), CompensatedSum::new()];
        let mut n = 0usize;
        for w in weights {
            for (acc, x) in sums.iter_mut().zip(w.as_array()) {
                acc.add(x);
            }
            n += 1;
        }
        if n == 0 {
            return None;
        }
        let raw = sums.map(|s| s.value() / n as f64);
        let total = compensated_sum(raw);
        Some(MixingWeights::from_array(raw.map(|x| x / total)))
    }
}

/// The closed-form specific model of a group.
#[derive(Debug, Clone, PartialEq)]
pub struct SpecificModel {
    pub dist: TermDistribution,
    /// Every raw score was zero and the distribution fell back to uniform.
    pub degenerate: bool,
}

/// Computes the specific model over `vocabulary`:
///
/// ```text
/// raw(t) = Σ_i p(t|θ_i) · Π_{j≠i} (1 − p(t|θ_j)) · ln(|G| / df(t))
/// ```
///
/// normalized to a distribution; `df(t)` counts members whose model
/// contains `t`. All-zero scores fall back to the uniform distribution.
pub fn build_specific_model(members: &[UserModel], vocabulary: &BTreeSet<String>) -> Result<SpecificModel> {
    if members.is_empty() {
        return Err(Error::EmptyGroup(String::new()));
    }
    let group_size = members.len() as f64;
    let mut raw = Vec::with_capacity(vocabulary.len());
    for term in vocabulary {
        let probs: Vec<f64> = members.iter().map(|m| m.lm.prob(term)).filter(|&p| p > 0.0).collect();
        let df = probs.len();
        if df == 0 {
            continue;
        }
        let idf = (group_size / df as f64).ln();
        if idf == 0.0 {
            continue;
        }
        // Π_{j≠i} (1 − p_j) via prefix and suffix products; members without
        // the term contribute a factor of one.
        let mut prefix = vec![1.0; df + 1];
        for (k, p) in probs.iter().enumerate() {
            prefix[k + 1] = prefix[k] * (1.0 - p);
        }
        let mut suffix = 1.0;
        let mut terms = vec![0.0; df];
        for k in (0..df).rev() {
            terms[k] = probs[k] * prefix[k] * suffix;
            suffix *= 1.0 - probs[k];
        }
        let score = compensated_sum(terms) * idf;
        if score > 0.0 {
            raw.push((term.as_str(), score));
        }
    }
    if raw.is_empty() {
        return Ok(SpecificModel {
            dist: TermDistribution::uniform(vocabulary.iter().map(String::as_str)),
            degenerate: true,
        });
    }
    Ok(SpecificModel {
        dist: TermDistribution::from_weights(raw),
        degenerate: false,
    })
}

/// `λ_g·p(t|θ_g) + λ_c·p(t|θ_c) + λ_s·p(t|θ_s)`.
pub fn mixture_term_probability(
    term: &str,
    weights: &MixingWeights,
    theta_g: &TermDistribution,
    theta_c: &TermDistribution,
    theta_s: &SpecificModel,
) -> f64 {
    weights.group * theta_g.prob(term) + weights.general * theta_c.prob(term) + weights.specific * theta_s.dist.prob(term)
}

/// Group log-likelihood `Σ_u Σ_t c(t,u) · log p(t|u)`, summed in user then
/// term order with compensated summation.
pub fn log_likelihood(
    members: &[UserModel],
    theta_g: &TermDistribution,
    lambdas: &BTreeMap<String, MixingWeights>,
    theta_c: &TermDistribution,
    theta_s: &SpecificModel,
) -> Result<f64> {
    let mut acc = CompensatedSum::new();
    for user in members {
        if user.counts.is_empty() {
            continue;
        }
        let weights = lambdas
            .get(&user.user_id)
            .ok_or_else(|| Error::InvalidArgument(format!("no mixing weights for user {:?}", user.user_id)))?;
        for (term, &count) in &user.counts {
            let p = mixture_term_probability(term, weights, theta_g, theta_c, theta_s);
            if p.is_nan() || p <= 0.0 {
                return Err(Error::NonPositiveMixture {
                    user: user.user_id.clone(),
                    term: term.clone(),
                });
            }
            acc.add(count * p.ln());
        }
    }
    Ok(acc.value())
}

/// EM stopping rule.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EmConfig {
    /// Stop once `|ΔLL| / |LL|` falls below this.
    pub tol: f64,
    pub max_iters: usize,
}

impl Default for EmConfig {
    fn default() -> Self {
        EmConfig {
            tol: 1e-6,
            max_iters: 200,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmDiagnostics {
    pub iterations: usize,
    pub final_log_likelihood: f64,
    pub converged: bool,
    /// Members with at least one relevant term.
    pub members: usize,
    pub singleton: bool,
    pub specific_degenerate: bool,
    /// Log-likelihood at initialization and after every iteration.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub log_likelihood_trace: Vec<f64>,
}

/// An estimated group model with per-member mixing weights.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupProfile {
    pub group_label: String,
    pub theta_g: TermDistribution,
    pub lambdas: BTreeMap<String, MixingWeights>,
    pub diagnostics: EmDiagnostics,
}

impl GroupProfile {
    /// The user's learned weights, or the group average for users absent at
    /// estimation time (second field `true`).
    pub fn weights_for(&self, user_id: &str) -> (MixingWeights, bool) {
        match self.lambdas.get(user_id) {
            Some(w) => (*w, false),
            None => (
                MixingWeights::mean(self.lambdas.values()).unwrap_or(MixingWeights::UNIFORM),
                true,
            ),
        }
    }
}

struct DenseUser<'a> {
    id: &'a str,
    counts: Vec<(usize, f64)>,
}

struct DenseState {
    theta_g: Vec<f64>,
    lambdas: Vec<[f64; 3]>,
}

/// Fits `θ_g` and the per-member weights by EM.
///
/// Members without relevant terms carry no evidence and are skipped. `θ_g`
/// starts at the pooled member counts and every weight triple at thirds.
/// The specific model is computed once from the members and held fixed, as
/// is `theta_c`.
pub fn estimate_group_profile(
    group_label: &str,
    members: &[UserModel],
    theta_c: &TermDistribution,
    config: &EmConfig,
) -> Result<GroupProfile> {
    if config.tol.is_nan() || config.tol < 0.0 {
        return Err(Error::InvalidArgument(format!("EM tolerance {} must be non-negative", config.tol)));
    }
    let mut active: Vec<UserModel> = members.iter().filter(|m| !m.counts.is_empty()).cloned().collect();
    if active.is_empty() {
        return Err(Error::EmptyGroup(group_label.to_string()));
    }
    active.sort_by(|a, b| a.user_id.cmp(&b.user_id));
    if active.windows(2).any(|w| w[0].user_id == w[1].user_id) {
        return Err(Error::InvalidArgument(format!("duplicate member in group {group_label:?}")));
    }

    let vocabulary: BTreeSet<String> = active.iter().flat_map(|m| m.counts.keys().cloned()).collect();
    let vocab: Vec<&str> = vocabulary.iter().map(String::as_str).collect();
    let index: BTreeMap<&str, usize> = vocab.iter().enumerate().map(|(i, t)| (*t, i)).collect();

    let p_c: Vec<f64> = vocab.iter().map(|t| theta_c.prob(t)).collect();
    if let Some(i) = p_c.iter().position(|&p| p <= 0.0) {
        return Err(Error::UncoveredTerm(vocab[i].to_string()));
    }
    let theta_s = build_specific_model(&active, &vocabulary)?;
    let p_s: Vec<f64> = vocab.iter().map(|t| theta_s.dist.prob(t)).collect();

    let users: Vec<DenseUser> = active
        .iter()
        .map(|m| DenseUser {
            id: &m.user_id,
            counts: m.counts.iter().map(|(t, &c)| (index[t.as_str()], c)).collect(),
        })
        .collect();

    let mut pooled = vec![CompensatedSum::new(); vocab.len()];
    for u in &users {
        for &(i, c) in &u.counts {
            pooled[i].add(c);
        }
    }
    let pooled: Vec<f64> = pooled.iter().map(CompensatedSum::value).collect();
    let pooled_total = compensated_sum(pooled.iter().copied());
    let mut state = DenseState {
        theta_g: pooled.iter().map(|c| c / pooled_total).collect(),
        lambdas: vec![[1.0 / 3.0; 3]; users.len()],
    };

    let mut ll = dense_log_likelihood(&users, &state, &p_c, &p_s)?;
    let mut trace = vec![ll];
    let mut converged = false;
    let mut iterations = 0;
    while iterations < config.max_iters {
        state = em_step(&users, &state, &p_c, &p_s);
        iterations += 1;
        let next = dense_log_likelihood(&users, &state, &p_c, &p_s)?;
        trace.push(next);
        let change = (next - ll).abs();
        let done = if ll == 0.0 { change == 0.0 } else { change / ll.abs() < config.tol };
        ll = next;
        if done {
            converged = true;
            break;
        }
    }
    if !converged {
        log::warn!("EM for group {group_label:?} did not converge within {} iterations", config.max_iters);
    }

    let theta_g = TermDistribution::from_weights(vocab.iter().copied().zip(state.theta_g.iter().copied()));
    let lambdas = users
        .iter()
        .zip(&state.lambdas)
        .map(|(u, w)| (u.id.to_string(), MixingWeights::from_array(*w)))
        .collect();
    Ok(GroupProfile {
        group_label: group_label.to_string(),
        theta_g,
        lambdas,
        diagnostics: EmDiagnostics {
            iterations,
            final_log_likelihood: ll,
            converged,
            members: users.len(),
            singleton: users.len() == 1,
            specific_degenerate: theta_s.degenerate,
            log_likelihood_trace: trace,
        },
    })
}

fn component_probs(i: usize, theta_g: &[f64], p_c: &[f64], p_s: &[f64]) -> [f64; 3] {
    [theta_g[i], p_c[i], p_s[i]]
}

fn dense_log_likelihood(users: &[DenseUser], state: &DenseState, p_c: &[f64], p_s: &[f64]) -> Result<f64> {
    let mut acc = CompensatedSum::new();
    for (u, w) in users.iter().zip(&state.lambdas) {
        for &(i, c) in &u.counts {
            let comps = component_probs(i, &state.theta_g, p_c, p_s);
            let p = w[0] * comps[0] + w[1] * comps[1] + w[2] * comps[2];
            if p.is_nan() || p <= 0.0 {
                return Err(Error::NonPositiveMixture {
                    user: u.id.to_string(),
                    term: format!("#{i}"),
                });
            }
            acc.add(c * p.ln());
        }
    }
    Ok(acc.value())
}

/// One E-step followed by both M-steps.
fn em_step(users: &[DenseUser], state: &DenseState, p_c: &[f64], p_s: &[f64]) -> DenseState {
    let mut group_mass = vec![CompensatedSum::new(); state.theta_g.len()];
    let mut lambdas = Vec::with_capacity(users.len());
    for (u, w) in users.iter().zip(&state.lambdas) {
        let mut expected = [CompensatedSum::new(); 3];
        for &(i, c) in &u.counts {
            let comps = component_probs(i, &state.theta_g, p_c, p_s);
            let weighted = [w[0] * comps[0], w[1] * comps[1], w[2] * comps[2]];
            let denom = (weighted[0] + weighted[1] + weighted[2]).max(PROBABILITY_FLOOR);
            for x in 0..3 {
                expected[x].add(c * weighted[x] / denom);
            }
            group_mass[i].add(c * weighted[0] / denom);
        }
        let expected = expected.map(|s| s.value());
        let total = compensated_sum(expected);
        lambdas.push(if total > 0.0 { expected.map(|e| e / total) } else { *w });
    }
    let group_mass: Vec<f64> = group_mass.iter().map(CompensatedSum::value).collect();
    let total = compensated_sum(group_mass.iter().copied());
    let theta_g = if total > 0.0 {
        group_mass.iter().map(|m| m / total).collect()
    } else {
        state.theta_g.clone()
    };
    DenseState { theta_g, lambdas }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn model(id: &str, counts: &[(&str, f64)]) -> UserModel {
        let counts: BTreeMap<String, f64> = counts.iter().map(|(t, c)| (t.to_string(), *c)).collect();
        UserModel {
            user_id: id.into(),
            lm: TermDistribution::from_weights(counts.iter().map(|(t, c)| (t.as_str(), *c))),
            counts,
        }
    }

    fn vocab(members: &[UserModel]) -> BTreeSet<String> {
        members.iter().flat_map(|m| m.counts.keys().cloned()).collect()
    }

    #[test]
    fn identical_members_annihilate_specific_model() {
        let members = [model("u1", &[("xx", 1.0)]), model("u2", &[("xx", 1.0)])];
        let s = build_specific_model(&members, &vocab(&members)).unwrap();
        assert!(s.degenerate);
        assert_eq!(s.dist.prob("xx"), 1.0);
    }

    #[test]
    fn disjoint_members_split_specific_mass() {
        let members = [model("u1", &[("aa", 1.0)]), model("u2", &[("bb", 1.0)])];
        let s = build_specific_model(&members, &vocab(&members)).unwrap();
        assert!(!s.degenerate);
        assert_eq!(s.dist.prob("aa"), 0.5);
        assert_eq!(s.dist.prob("bb"), 0.5);
    }

    #[test]
    fn singleton_specific_model_is_degenerate() {
        let members = [model("u1", &[("aa", 1.0), ("bb", 3.0)])];
        let s = build_specific_model(&members, &vocab(&members)).unwrap();
        assert!(s.degenerate);
        assert!(build_specific_model(&[], &BTreeSet::new()).is_err());
    }

    #[test]
    fn mixture_degenerate_weights() {
        let g = TermDistribution::from_weights([("aa", 0.2), ("bb", 0.8)]);
        let c = TermDistribution::from_weights([("aa", 0.2), ("cc", 0.8)]);
        let s = SpecificModel {
            dist: TermDistribution::from_weights([("aa", 0.2), ("dd", 0.8)]),
            degenerate: false,
        };
        assert_eq!(mixture_term_probability("bb", &MixingWeights::new(1.0, 0.0, 0.0), &g, &c, &s), 0.8);
        for w in [MixingWeights::UNIFORM, MixingWeights::new(0.1, 0.6, 0.3)] {
            assert!((mixture_term_probability("aa", &w, &g, &c, &s) - 0.2).abs() < 1e-15);
        }
    }

    #[test]
    fn log_likelihood_linear_in_counts() {
        let members = [model("u1", &[("aa", 2.0), ("bb", 1.0)]), model("u2", &[("bb", 3.0), ("cc", 1.0)])];
        let doubled = [model("u1", &[("aa", 4.0), ("bb", 2.0)]), model("u2", &[("bb", 6.0), ("cc", 2.0)])];
        let theta_c = TermDistribution::uniform(["aa", "bb", "cc"]);
        let theta_s = build_specific_model(&members, &vocab(&members)).unwrap();
        let theta_g = TermDistribution::from_weights([("bb", 1.0)]);
        let lambdas = BTreeMap::from([
            ("u1".to_string(), MixingWeights::UNIFORM),
            ("u2".to_string(), MixingWeights::new(0.5, 0.25, 0.25)),
        ]);
        let a = log_likelihood(&members, &theta_g, &lambdas, &theta_c, &theta_s).unwrap();
        let b = log_likelihood(&doubled, &theta_g, &lambdas, &theta_c, &theta_s).unwrap();
        assert!((b - 2.0 * a).abs() < 1e-12);
    }

    #[test]
    fn log_likelihood_rejects_zero_mixture() {
        let members = [model("u1", &[("zz", 1.0)])];
        let theta = TermDistribution::uniform(["aa"]);
        let s = SpecificModel {
            dist: theta.clone(),
            degenerate: false,
        };
        let lambdas = BTreeMap::from([("u1".to_string(), MixingWeights::UNIFORM)]);
        assert!(matches!(
            log_likelihood(&members, &theta, &lambdas, &theta, &s),
            Err(Error::NonPositiveMixture { .. })
        ));
    }

    #[test]
    fn estimate_errors() {
        let theta_c = TermDistribution::uniform(["aa"]);
        let cfg = EmConfig::default();
        assert!(matches!(estimate_group_profile("g", &[], &theta_c, &cfg), Err(Error::EmptyGroup(_))));
        assert!(matches!(
            estimate_group_profile("g", &[model("u", &[])], &theta_c, &cfg),
            Err(Error::EmptyGroup(_))
        ));
        assert!(matches!(
            estimate_group_profile("g", &[model("u", &[("bb", 1.0)])], &theta_c, &cfg),
            Err(Error::UncoveredTerm(t)) if t == "bb"
        ));
    }

    #[test]
    fn singleton_group_is_flagged() {
        let theta_c = TermDistribution::uniform(["aa", "bb", "cc"]);
        let p = estimate_group_profile(
            "g",
            &[model("u", &[("aa", 3.0), ("bb", 1.0)])],
            &theta_c,
            &EmConfig::default(),
        )
        .unwrap();
        assert!(p.diagnostics.singleton);
        assert!(p.diagnostics.specific_degenerate);
        assert!(p.theta_g.is_normalized());
        assert!(p.lambdas["u"].is_normalized());
    }

    #[test]
    fn unseen_user_gets_group_average() {
        let theta_c = TermDistribution::uniform(["aa", "bb", "cc"]);
        let members = [model("u1", &[("aa", 3.0), ("bb", 1.0)]), model("u2", &[("cc", 2.0), ("bb", 1.0)])];
        let p = estimate_group_profile("g", &members, &theta_c, &EmConfig::default()).unwrap();
        let (w, fallback) = p.weights_for("nobody");
        assert!(fallback);
        assert!(w.is_normalized());
        let expected = (p.lambdas["u1"].group + p.lambdas["u2"].group) / 2.0;
        assert!((w.group - expected).abs() < 1e-12);
        assert!(!p.weights_for("u1").1);
    }

    #[test]
    fn non_convergence_is_reported() {
        let theta_c = TermDistribution::uniform(["aa", "bb", "cc"]);
        let members = [model("u1", &[("aa", 3.0), ("bb", 1.0)]), model("u2", &[("cc", 2.0), ("bb", 1.0)])];
        let cfg = EmConfig { tol: 0.0, max_iters: 3 };
        let p = estimate_group_profile("g", &members, &theta_c, &cfg).unwrap();
        assert!(!p.diagnostics.converged);
        assert_eq!(p.diagnostics.iterations, 3);
        assert_eq!(p.diagnostics.log_likelihood_trace.len(), 4);
    }
}
