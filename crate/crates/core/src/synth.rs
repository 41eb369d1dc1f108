//! Seeded synthetic corpora with known generating models.
//!
//! Every user belongs to a latent group. Their preference tokens are drawn
//! from `λ_g θ_g* + λ_c θ_c* + λ_s θ_s*`, where `θ_g*` is the group's taste,
//! `θ_c*` a Zipf-shaped background shared by everybody and `θ_s*` a handful of
//! private terms. Ages cluster by latent group, and the remaining attributes
//! follow it with probability `attribute_fidelity`. Candidates come in one pool
//! per latent group, drawn mostly from that group's taste, plus a background
//! pool; a request's relevant candidates are those of its user's pool.
//!
//! Randomness comes from independent ChaCha streams keyed by `(purpose,
//! index)`, so the output depends only on the seed and never on word size or
//! thread scheduling.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{
    CandidateDocument, Corpus, Gender, GroupType, RatedDocument, Season, SuggestionRequest, TripDuration, TripType,
    UserRecord, MAX_AGE,
};
use crate::error::{Error, Result};
use crate::lm::TermDistribution;
use crate::profiling::MixingWeights;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthSpec {
    pub seed: u64,
    pub vocab_size: usize,
    pub n_groups: usize,
    pub users_per_group: usize,
    pub tokens_per_user: usize,
    pub lambda_true: MixingWeights,
    /// 0 gives every group the same taste; 1 gives each its own.
    pub group_separation: f64,
    /// Candidates offered per request.
    pub n_candidates: usize,
    /// Share of a request's candidates that are relevant (at least one).
    pub relevant_fraction: f64,
    /// Support size of the shared taste and of each group's perturbation.
    pub group_support: usize,
    /// Private terms per user.
    pub specific_terms: usize,
    /// Preference tokens are cut into documents of this length.
    pub doc_tokens: usize,
    /// Extra low-rated background documents per user.
    pub noise_docs: usize,
    pub candidate_tokens: usize,
    /// Share of a candidate's tokens drawn from its group's taste.
    pub candidate_purity: f64,
    pub requests_per_user: usize,
    /// Latent group `g` has ages in `[age_base + g·w, age_base + (g+1)·w)`.
    pub age_base: u32,
    pub age_cluster_width: u32,
    /// Probability that gender and trip context follow the latent group.
    pub attribute_fidelity: f64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            seed: 0,
            vocab_size: 500,
            n_groups: 4,
            users_per_group: 10,
            tokens_per_user: 150,
            lambda_true: MixingWeights::new(0.5, 0.3, 0.2),
            group_separation: 0.8,
            n_candidates: 20,
            relevant_fraction: 0.25,
            group_support: 40,
            specific_terms: 5,
            doc_tokens: 25,
            noise_docs: 2,
            candidate_tokens: 30,
            candidate_purity: 0.5,
            requests_per_user: 1,
            age_base: 20,
            age_cluster_width: 10,
            attribute_fidelity: 0.8,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidArgument(msg));
        let counts = [
            ("vocab_size", self.vocab_size),
            ("n_groups", self.n_groups),
            ("users_per_group", self.users_per_group),
            ("tokens_per_user", self.tokens_per_user),
            ("n_candidates", self.n_candidates),
            ("group_support", self.group_support),
            ("specific_terms", self.specific_terms),
            ("doc_tokens", self.doc_tokens),
            ("candidate_tokens", self.candidate_tokens),
            ("requests_per_user", self.requests_per_user),
        ];
        if let Some((name, _)) = counts.iter().find(|(_, v)| *v == 0) {
            return bad(format!("{name} must be at least 1"));
        }
        let w = self.lambda_true;
        if [w.group, w.general, w.specific].iter().any(|x| !(0.0..=1.0).contains(x)) || !w.is_normalized() {
            return bad(format!("lambda_true {w:?} is not a probability triple"));
        }
        for (name, v) in [
            ("group_separation", self.group_separation),
            ("relevant_fraction", self.relevant_fraction),
            ("candidate_purity", self.candidate_purity),
            ("attribute_fidelity", self.attribute_fidelity),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return bad(format!("{name} {v} must lie in [0, 1]"));
            }
        }
        if self.group_support > self.vocab_size || self.specific_terms > self.vocab_size {
            return bad("group_support and specific_terms cannot exceed vocab_size".into());
        }
        if self.age_cluster_width == 0 {
            return bad("age_cluster_width must be at least 1".into());
        }
        let top = self.age_base as u64 + self.n_groups as u64 * self.age_cluster_width as u64;
        if top > MAX_AGE as u64 + 1 {
            return bad(format!("age clusters reach {}, beyond {MAX_AGE}", top - 1));
        }
        Ok(())
    }
}

/// The models the corpus was sampled from.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GroundTruth {
    /// `θ_g*` per latent group.
    pub theta_g: Vec<TermDistribution>,
    pub theta_c: TermDistribution,
    pub theta_s: BTreeMap<String, TermDistribution>,
    pub lambdas: BTreeMap<String, MixingWeights>,
    pub latent_group: BTreeMap<String, usize>,
    /// Candidate ids drawn from each group's taste.
    pub group_pools: Vec<Vec<String>>,
}

impl GroundTruth {
    pub fn members(&self, group: usize) -> impl Iterator<Item = &str> + '_ {
        self.latent_group
            .iter()
            .filter(move |(_, &g)| g == group)
            .map(|(u, _)| u.as_str())
    }
}

// Stream purposes; each entity gets its own stream within a purpose.
const S_VOCAB: u64 = 1;
const S_GROUP: u64 = 2;
const S_USER: u64 = 3;
const S_POOL: u64 = 4;
const S_REQUEST: u64 = 5;

fn stream(seed: u64, purpose: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream((purpose << 48) | index);
    rng
}

/// Inverse-CDF sampler over term indices.
struct Sampler {
    terms: Vec<usize>,
    cdf: Vec<f64>,
}

impl Sampler {
    fn new(weights: &[f64]) -> Self {
        let mut terms = Vec::new();
        let mut cdf = Vec::new();
        let mut acc = 0.0;
        for (i, &w) in weights.iter().enumerate() {
            if w > 0.0 {
                acc += w;
                terms.push(i);
                cdf.push(acc);
            }
        }
        Sampler { terms, cdf }
    }

    fn draw(&self, rng: &mut ChaCha8Rng) -> usize {
        let total = *self.cdf.last().expect("sampler over an empty distribution");
        let u = rng.gen::<f64>() * total;
        let k = self.cdf.partition_point(|&c| c <= u).min(self.terms.len() - 1);
        self.terms[k]
    }
}

fn uniform_index(rng: &mut ChaCha8Rng, n: usize) -> usize {
    rng.gen_range(0..n as u64) as usize
}

/// `k` distinct indices below `n`, in draw order.
fn choose_distinct(rng: &mut ChaCha8Rng, n: usize, k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    for i in 0..k.min(n) {
        let j = i + uniform_index(rng, n - i);
        idx.swap(i, j);
    }
    idx.truncate(k.min(n));
    idx
}

fn normalize(w: &mut [f64]) {
    let total: f64 = w.iter().sum();
    if total > 0.0 {
        w.iter_mut().for_each(|x| *x /= total);
    }
}

/// Exponential weights on `k` random terms: a flat Dirichlet draw.
fn sparse_taste(rng: &mut ChaCha8Rng, vocab: usize, k: usize) -> Vec<f64> {
    let mut w = vec![0.0; vocab];
    for i in choose_distinct(rng, vocab, k) {
        w[i] = -(1.0 - rng.gen::<f64>()).ln();
    }
    normalize(&mut w);
    w
}

fn mix(parts: &[(f64, &[f64])]) -> Vec<f64> {
    let n = parts[0].1.len();
    (0..n).map(|i| parts.iter().map(|(a, w)| a * w[i]).sum()).collect()
}

struct Vocab {
    names: Vec<String>,
}

impl Vocab {
    fn new(size: usize) -> Self {
        let width = (size - 1).to_string().len().max(4);
        Vocab {
            names: (0..size).map(|i| format!("t{i:0width$}")).collect(),
        }
    }

    fn text(&self, tokens: &[usize]) -> String {
        tokens.iter().map(|&t| self.names[t].as_str()).collect::<Vec<_>>().join(" ")
    }

    fn distribution(&self, w: &[f64]) -> TermDistribution {
        TermDistribution::from_weights(
            w.iter()
                .enumerate()
                .filter(|(_, &p)| p > 0.0)
                .map(|(i, &p)| (self.names[i].clone(), p)),
        )
    }
}

fn pick<T: Copy>(rng: &mut ChaCha8Rng, fidelity: f64, group: usize, options: &[T]) -> T {
    if rng.gen::<f64>() < fidelity {
        options[group % options.len()]
    } else {
        options[uniform_index(rng, options.len())]
    }
}

/// Samples a corpus and the models behind it. Identical specs give
/// identical output.
pub fn generate(spec: &SynthSpec) -> Result<(Corpus, GroundTruth)> {
    spec.validate()?;
    let v = spec.vocab_size;
    let vocab = Vocab::new(v);

    let mut rng = stream(spec.seed, S_VOCAB, 0);
    let order = choose_distinct(&mut rng, v, v);
    let mut theta_c = vec![0.0; v];
    for (rank, &t) in order.iter().enumerate() {
        theta_c[t] = 1.0 / (rank + 1) as f64;
    }
    normalize(&mut theta_c);
    let base = sparse_taste(&mut rng, v, spec.group_support);

    let theta_g: Vec<Vec<f64>> = (0..spec.n_groups)
        .map(|g| {
            let mut rng = stream(spec.seed, S_GROUP, g as u64);
            let own = sparse_taste(&mut rng, v, spec.group_support);
            let s = spec.group_separation;
            mix(&[(1.0 - s, &base), (s, &own)])
        })
        .collect();

    let lambda = spec.lambda_true;
    let c_sampler = Sampler::new(&theta_c);
    let mut users = Vec::new();
    let mut truth_s = BTreeMap::new();
    let mut lambdas = BTreeMap::new();
    let mut latent = BTreeMap::new();
    let mut user_groups = Vec::new();
    for (g, group_theta) in theta_g.iter().enumerate() {
        for i in 0..spec.users_per_group {
            let index = g * spec.users_per_group + i;
            let user_id = format!("u{index:05}");
            let mut rng = stream(spec.seed, S_USER, index as u64);
            let theta_s = sparse_taste(&mut rng, v, spec.specific_terms);
            let p = mix(&[
                (lambda.group, group_theta),
                (lambda.general, &theta_c),
                (lambda.specific, &theta_s),
            ]);
            let sampler = Sampler::new(&p);
            let tokens: Vec<usize> = (0..spec.tokens_per_user).map(|_| sampler.draw(&mut rng)).collect();

            let mut preferences: Vec<RatedDocument> = tokens
                .chunks(spec.doc_tokens)
                .enumerate()
                .map(|(d, chunk)| RatedDocument {
                    doc_id: format!("{user_id}p{d:04}"),
                    text: vocab.text(chunk),
                    rating: 3 + rng.gen_range(0..2u64) as i32,
                })
                .collect();
            for d in 0..spec.noise_docs {
                let chunk: Vec<usize> = (0..spec.doc_tokens).map(|_| c_sampler.draw(&mut rng)).collect();
                preferences.push(RatedDocument {
                    doc_id: format!("{user_id}n{d:04}"),
                    text: vocab.text(&chunk),
                    rating: rng.gen_range(0..3u64) as i32,
                });
            }

            let w = spec.age_cluster_width;
            let age = spec.age_base + g as u32 * w + rng.gen_range(0..w as u64) as u32;
            let gender = pick(&mut rng, spec.attribute_fidelity, g, &[Gender::Female, Gender::Male]);
            users.push(UserRecord {
                user_id: user_id.clone(),
                age: Some(age),
                gender,
                preferences,
            });
            truth_s.insert(user_id.clone(), vocab.distribution(&theta_s));
            lambdas.insert(user_id.clone(), lambda);
            latent.insert(user_id.clone(), g);
            user_groups.push((user_id, g));
        }
    }

    // Pools: one per latent group, then the background pool.
    let mut candidates = Vec::new();
    let mut pools: Vec<Vec<String>> = Vec::new();
    for pool in 0..=spec.n_groups {
        let mut rng = stream(spec.seed, S_POOL, pool as u64);
        let p = match theta_g.get(pool) {
            Some(tg) => mix(&[(spec.candidate_purity, tg), (1.0 - spec.candidate_purity, &theta_c)]),
            None => theta_c.clone(),
        };
        let sampler = Sampler::new(&p);
        let mut ids = Vec::new();
        for _ in 0..spec.n_candidates {
            let doc_id = format!("c{:05}", candidates.len());
            let tokens: Vec<usize> = (0..spec.candidate_tokens).map(|_| sampler.draw(&mut rng)).collect();
            candidates.push(CandidateDocument {
                doc_id: doc_id.clone(),
                text: vocab.text(&tokens),
            });
            ids.push(doc_id);
        }
        pools.push(ids);
    }

    let n_relevant = ((spec.relevant_fraction * spec.n_candidates as f64).round() as usize).clamp(1, spec.n_candidates);
    let mut requests = Vec::new();
    for (user_id, g) in &user_groups {
        for _ in 0..spec.requests_per_user {
            let index = requests.len();
            let mut rng = stream(spec.seed, S_REQUEST, index as u64);
            let mut qrels = BTreeMap::new();
            for k in choose_distinct(&mut rng, spec.n_candidates, n_relevant) {
                qrels.insert(pools[*g][k].clone(), 3 + rng.gen_range(0..2u64) as i32);
            }
            let others: Vec<&String> = pools
                .iter()
                .enumerate()
                .filter(|(p, _)| p != g)
                .flat_map(|(_, ids)| ids)
                .collect();
            for k in choose_distinct(&mut rng, others.len(), spec.n_candidates - n_relevant) {
                qrels.insert(others[k].clone(), rng.gen_range(0..3u64) as i32);
            }
            let mut candidate_ids: Vec<String> = qrels.keys().cloned().collect();
            for i in (1..candidate_ids.len()).rev() {
                let j = uniform_index(&mut rng, i + 1);
                candidate_ids.swap(i, j);
            }
            let f = spec.attribute_fidelity;
            requests.push(SuggestionRequest {
                request_id: format!("r{index:05}"),
                user_id: user_id.clone(),
                trip_type: pick(&mut rng, f, *g, &[TripType::Holiday, TripType::Business, TripType::Other]),
                trip_duration: pick(
                    &mut rng,
                    f,
                    *g,
                    &[TripDuration::Weekend, TripDuration::DayTrip, TripDuration::Longer, TripDuration::NightOut],
                ),
                season: pick(&mut rng, f, *g, &[Season::Summer, Season::Autumn, Season::Winter, Season::Spring]),
                group_type: pick(
                    &mut rng,
                    f,
                    *g,
                    &[GroupType::Family, GroupType::Friends, GroupType::Alone, GroupType::Other],
                ),
                candidate_ids,
                qrels: Some(qrels),
            });
        }
    }

    let truth = GroundTruth {
        theta_g: theta_g.iter().map(|w| vocab.distribution(w)).collect(),
        theta_c: vocab.distribution(&theta_c),
        theta_s: truth_s,
        lambdas,
        latent_group: latent,
        group_pools: pools.into_iter().take(spec.n_groups).collect(),
    };
    Ok((Corpus::from_records(users, candidates, requests)?, truth))
}
