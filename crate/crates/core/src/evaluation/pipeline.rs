use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::metrics::{average_precision, paired_one_tailed_ttest, EvalResult, Qrels, TTest};
use crate::corpus::{group_users, AgeBins, Corpus, Criterion, GroupAssignment};
use crate::error::{Error, Result};
use crate::lm::{
    build_user_model, build_user_model_with_budget, corpus_collection_model, CollectionScope, TermDistribution,
    UserModel, DEFAULT_JM_LAMBDA, RELEVANCE_THRESHOLD,
};
use crate::numeric::compensated_sum;
use crate::profiling::{estimate_group_profile, EmConfig, GroupProfile};
use crate::suggestion::{RankedRun, Ranker, Strategy};

/// Knobs shared by every pipeline stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub relevance_threshold: i32,
    pub jm_lambda: f64,
    pub em: EmConfig,
    pub collection_scope: CollectionScope,
    /// Age bin edges for the age criterion; `None` uses the defaults.
    pub age_bins: Option<AgeBins>,
    /// Truncate preference models to this many tokens at ranking time.
    /// Profiles are still estimated from the full models.
    pub cold_start_tokens: Option<usize>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            relevance_threshold: RELEVANCE_THRESHOLD,
            jm_lambda: DEFAULT_JM_LAMBDA,
            em: EmConfig::default(),
            collection_scope: CollectionScope::All,
            age_bins: None,
            cold_start_tokens: None,
        }
    }
}

/// Corpus-level state reused across criteria: the collection model and
/// every user's preference model.
#[derive(Debug)]
pub struct Pipeline<'a> {
    pub corpus: &'a Corpus,
    pub config: PipelineConfig,
    pub theta_c: TermDistribution,
    /// Full preference models, used for estimation.
    pub user_models: BTreeMap<String, UserModel>,
    /// Preference models used at ranking time (truncated under cold start).
    pub ranking_models: BTreeMap<String, UserModel>,
}

/// A request paired with the group profile that serves it.
pub struct Routed<'p> {
    pub request_id: String,
    pub profile: &'p GroupProfile,
}

impl<'a> Pipeline<'a> {
    pub fn new(corpus: &'a Corpus, config: PipelineConfig) -> Result<Self> {
        let theta_c = corpus_collection_model(corpus, config.collection_scope)?;
        let threshold = config.relevance_threshold;
        let user_models: BTreeMap<_, _> = corpus
            .users
            .values()
            .map(|u| (u.user_id.clone(), build_user_model(u, threshold)))
            .collect();
        let ranking_models = match config.cold_start_tokens {
            None => user_models.clone(),
            Some(n) => corpus
                .users
                .values()
                .map(|u| (u.user_id.clone(), build_user_model_with_budget(u, threshold, Some(n))))
                .collect(),
        };
        Ok(Pipeline {
            corpus,
            config,
            theta_c,
            user_models,
            ranking_models,
        })
    }

    pub fn groups(&self, criterion: Criterion) -> Vec<GroupAssignment> {
        group_users(self.corpus, criterion, self.config.age_bins.as_ref())
    }

    pub fn groups_with_bins(&self, criterion: Criterion, bins: &AgeBins) -> Vec<GroupAssignment> {
        group_users(self.corpus, criterion, Some(bins))
    }

    /// Estimates a profile for every group except `unknown` and groups whose
    /// members all lack relevant preferences. Groups run in parallel.
    pub fn estimate_profiles(&self, groups: &[GroupAssignment]) -> Result<BTreeMap<String, GroupProfile>> {
        let estimated: Vec<Option<GroupProfile>> = groups
            .par_iter()
            .map(|g| {
                if g.is_unknown() {
                    return Ok(None);
                }
                let members: Vec<UserModel> = g
                    .member_user_ids
                    .iter()
                    .map(|id| self.user_models[id].clone())
                    .collect();
                match estimate_group_profile(&g.group_label, &members, &self.theta_c, &self.config.em) {
                    Ok(p) => Ok(Some(p)),
                    Err(Error::EmptyGroup(label)) => {
                        log::warn!("group {label:?} has no member with relevant preferences; not profiled");
                        Ok(None)
                    }
                    Err(e) => Err(e),
                }
            })
            .collect::<Result<_>>()?;
        Ok(estimated
            .into_iter()
            .flatten()
            .map(|p| (p.group_label.clone(), p))
            .collect())
    }

    /// Requests served by a profile, in request-id order. Requests in the
    /// `unknown` group or in unprofiled groups are dropped.
    pub fn route<'p>(
        &self,
        groups: &[GroupAssignment],
        profiles: &'p BTreeMap<String, GroupProfile>,
    ) -> Vec<Routed<'p>> {
        let mut routed: Vec<Routed<'p>> = groups
            .iter()
            .filter_map(|g| profiles.get(&g.group_label).map(|p| (g, p)))
            .flat_map(|(g, profile)| {
                g.member_request_ids.iter().map(move |r| Routed {
                    request_id: r.clone(),
                    profile,
                })
            })
            .collect();
        routed.sort_by(|a, b| a.request_id.cmp(&b.request_id));
        routed
    }

    pub fn ranker(&self) -> Result<Ranker<'_>> {
        Ranker::new(self.corpus, &self.theta_c, self.config.jm_lambda)
    }

    /// Ranks every routed request with one strategy. Requests run in parallel;
    /// output keeps request-id order.
    pub fn rank(&self, routed: &[Routed<'_>], strategy: Strategy, tag: &str) -> Result<Vec<RankedRun>> {
        let ranker = self.ranker()?;
        routed
            .par_iter()
            .map(|r| {
                let request = &self.corpus.requests[&r.request_id];
                let user = &self.ranking_models[&request.user_id];
                match strategy {
                    Strategy::Group => ranker.rank_by_group(request, r.profile, tag),
                    Strategy::Preferences => ranker.rank_by_preferences(request, user, tag),
                    Strategy::Combined => ranker.rank_combined(request, user, r.profile, tag),
                }
            })
            .collect()
    }

    /// AP of every run against its request's qrels.
    pub fn evaluate(&self, strategy: &str, runs: &[RankedRun]) -> Result<EvalResult> {
        let mut per_request = BTreeMap::new();
        let mut excluded = Vec::new();
        for run in runs {
            let request = self.corpus.requests.get(&run.request_id).ok_or_else(|| Error::DanglingReference {
                kind: "request",
                id: run.request_id.clone(),
                referrer: format!("{strategy} run"),
            })?;
            let ratings = request.qrels.as_ref().ok_or_else(|| {
                Error::InvalidArgument(format!("request {:?} carries no qrels", request.request_id))
            })?;
            let qrels = Qrels {
                request_id: &request.request_id,
                ratings,
            };
            match average_precision(run, &qrels, self.config.relevance_threshold)? {
                Some(ap) => {
                    per_request.insert(run.request_id.clone(), ap);
                }
                None => excluded.push(run.request_id.clone()),
            }
        }
        if !excluded.is_empty() {
            log::info!("{strategy}: {} request(s) without relevant judgments excluded", excluded.len());
        }
        Ok(EvalResult::from_ap(strategy, per_request, excluded))
    }
}

/// A paired test between two strategies.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrategyTest {
    pub a: Strategy,
    pub b: Strategy,
    #[serde(flatten)]
    pub test: TTest,
}

/// MAP of each strategy under one grouping criterion plus significance tests.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrategyComparison {
    pub criterion: Criterion,
    pub results: Vec<EvalResult>,
    pub tests: Vec<StrategyTest>,
    /// Requests not served by any profile (unknown attribute or unprofiled group).
    pub unrouted_requests: usize,
}

impl StrategyComparison {
    pub fn result(&self, strategy: Strategy) -> Option<&EvalResult> {
        self.results.iter().find(|r| r.strategy == strategy.as_str())
    }
}

/// The tests reported for a comparison: combined against each single strategy.
pub const COMPARED_PAIRS: [(Strategy, Strategy); 2] =
    [(Strategy::Combined, Strategy::Preferences), (Strategy::Combined, Strategy::Group)];

/// Runs the group, preference and combined pipelines for one criterion and
/// evaluates them.
pub fn compare_strategies(corpus: &Corpus, criterion: Criterion, config: &PipelineConfig) -> Result<StrategyComparison> {
    let pipeline = Pipeline::new(corpus, config.clone())?;
    let groups = pipeline.groups(criterion);
    let profiles = pipeline.estimate_profiles(&groups)?;
    compare_with_profiles(&pipeline, criterion, &groups, &profiles)
}

/// [`compare_strategies`] with given profiles.
pub fn compare_with_profiles(
    pipeline: &Pipeline<'_>,
    criterion: Criterion,
    groups: &[GroupAssignment],
    profiles: &BTreeMap<String, GroupProfile>,
) -> Result<StrategyComparison> {
    let routed = pipeline.route(groups, profiles);
    let unrouted_requests = pipeline.corpus.requests.len() - routed.len();
    if unrouted_requests > 0 {
        log::warn!("{criterion}: {unrouted_requests} request(s) have no group profile and are not evaluated");
    }
    let mut results = Vec::new();
    for strategy in Strategy::ALL {
        let runs = pipeline.rank(&routed, strategy, &run_tag(strategy, criterion))?;
        results.push(pipeline.evaluate(strategy.as_str(), &runs)?);
    }
    let find = |s: Strategy| results.iter().find(|r| r.strategy == s.as_str()).expect("all strategies evaluated");
    let mut tests = Vec::new();
    for (a, b) in COMPARED_PAIRS {
        match paired_one_tailed_ttest(&find(a).per_request_ap, &find(b).per_request_ap) {
            Ok(test) => tests.push(StrategyTest { a, b, test }),
            Err(e) => log::warn!("{criterion}: no t-test for {a} vs {b}: {e}"),
        }
    }
    Ok(StrategyComparison {
        criterion,
        results,
        tests,
        unrouted_requests,
    })
}

pub fn run_tag(strategy: Strategy, criterion: Criterion) -> String {
    match strategy {
        Strategy::Preferences => "groupprof.preferences".to_string(),
        _ => format!("groupprof.{strategy}.{criterion}"),
    }
}

/// One group of a granularity sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub group_label: String,
    pub size: usize,
    /// `None` when the group has no profile or no evaluable request.
    pub map_score: Option<f64>,
    pub singleton: bool,
}

/// Group-strategy MAP at one age bin width.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub criterion: Criterion,
    pub bin_width: u32,
    pub bin_spec: String,
    pub per_group: Vec<SweepPoint>,
    /// Mean AP over every evaluated request at this width.
    pub overall_map: f64,
    pub n_requests: usize,
}

/// Rebuilds age groups at every bin width, re-estimates the profiles, ranks
/// by group and evaluates.
pub fn granularity_sweep(corpus: &Corpus, bin_widths: &[u32], config: &PipelineConfig) -> Result<Vec<SweepResult>> {
    if let Some(w) = bin_widths.iter().find(|&&w| w == 0) {
        return Err(Error::InvalidArgument(format!("bin width {w} must be positive")));
    }
    let pipeline = Pipeline::new(corpus, config.clone())?;
    bin_widths.par_iter().map(|&w| sweep_width(&pipeline, w)).collect()
}

fn sweep_width(pipeline: &Pipeline<'_>, width: u32) -> Result<SweepResult> {
    let bins = AgeBins::uniform(width)?;
    let groups: Vec<GroupAssignment> = pipeline
        .groups_with_bins(Criterion::Age, &bins)
        .into_iter()
        .filter(|g| !g.is_unknown())
        .collect();
    let profiles = pipeline.estimate_profiles(&groups)?;
    let routed = pipeline.route(&groups, &profiles);
    let tag = format!("groupprof.group.age{width}");
    let runs = pipeline.rank(&routed, Strategy::Group, &tag)?;
    let eval = pipeline.evaluate("group", &runs)?;

    let per_group = groups
        .iter()
        .map(|g| {
            let aps: Vec<f64> = g
                .member_request_ids
                .iter()
                .filter_map(|r| eval.per_request_ap.get(r).copied())
                .collect();
            let map_score = (!aps.is_empty() && profiles.contains_key(&g.group_label))
                .then(|| compensated_sum(aps.iter().copied()) / aps.len() as f64);
            SweepPoint {
                group_label: g.group_label.clone(),
                size: g.size(),
                map_score,
                singleton: g.member_user_ids.len() == 1,
            }
        })
        .collect();
    Ok(SweepResult {
        criterion: Criterion::Age,
        bin_width: width,
        bin_spec: format!("{:?}", bins.edges()),
        per_group,
        overall_map: eval.map_score,
        n_requests: eval.n_requests,
    })
}

/// `width group size map` rows, one per group, then one `all` row per width
/// carrying the overall MAP and the total size.
pub fn sweep_tsv(results: &[SweepResult]) -> String {
    let mut out = String::from("width\tgroup\tsize\tmap\n");
    for r in results {
        for p in &r.per_group {
            let map = p.map_score.map_or_else(|| "NA".to_string(), |m| format!("{m:.6}"));
            out.push_str(&format!("{}\t{}\t{}\t{}\n", r.bin_width, p.group_label, p.size, map));
        }
        let total: usize = r.per_group.iter().map(|p| p.size).sum();
        out.push_str(&format!("{}\tall\t{}\t{:.6}\n", r.bin_width, total, r.overall_map));
    }
    out
}
