//! The `groupprof` command line.
//!
//! Every subcommand writes its artifacts under `--out` through a temporary
//! file and a rename, then a `manifest.json` listing the configuration, the
//! SHA-256 of every input and output, and the crate version. The manifest
//! carries no timestamps and no output location, so identical runs produce
//! identical manifests.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::{load_corpus, AgeBins, Corpus, Criterion, GroupAssignment};
use crate::error::{Error, Result};
use crate::evaluation::{
    compare_with_profiles, granularity_sweep, run_tag, sweep_tsv, EvalResult, Pipeline, PipelineConfig,
    StrategyComparison,
};
use crate::lm::{CollectionScope, TermDistribution, DEFAULT_JM_LAMBDA, RELEVANCE_THRESHOLD};
use crate::profiling::{EmConfig, EmDiagnostics, GroupProfile, MixingWeights};
use crate::suggestion::{parse_run_file, write_run_file, Strategy};
use crate::synth::{generate, SynthSpec};

/// Environment variable capping the worker threads; 0 means all cores.
pub const THREADS_ENV: &str = "GROUPPROF_THREADS";

#[derive(Debug, Parser)]
#[command(name = "groupprof", version, about = "Group profiling for content customization")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Estimate group profiles for one or every criterion.
    Profile(ProfileArgs),
    /// Rank each request's candidates and write run files.
    Rank(RankArgs),
    /// Compare strategies, or score existing run files, and write eval.json.
    Eval(EvalArgs),
    /// Age-granularity sweep of the group strategy; writes sweep.tsv.
    Sweep(SweepArgs),
    /// Generate a synthetic corpus.
    Synth(SynthArgs),
}

#[derive(Debug, Args, Serialize)]
struct InputArgs {
    #[arg(long)]
    users: PathBuf,
    #[arg(long)]
    candidates: PathBuf,
    #[arg(long)]
    requests: PathBuf,
}

#[derive(Debug, Args, Serialize)]
struct ModelArgs {
    /// Foreground weight of Jelinek-Mercer smoothing.
    #[arg(long, default_value_t = DEFAULT_JM_LAMBDA)]
    jm_lambda: f64,
    #[arg(long, default_value_t = EmConfig::default().tol)]
    em_tol: f64,
    #[arg(long, default_value_t = EmConfig::default().max_iters)]
    em_max_iters: usize,
    /// Comma-separated age bin edges, e.g. 20,30,40,50.
    #[arg(long, value_parser = parse_age_bins)]
    #[serde(serialize_with = "serialize_bins")]
    age_bins: Option<AgeBins>,
    /// Texts feeding the collection model: all | preferences.
    #[arg(long, default_value = "all")]
    collection_scope: CollectionScope,
    /// Truncate preference models to this many tokens when ranking.
    #[arg(long)]
    cold_start_tokens: Option<usize>,
}

impl ModelArgs {
    fn pipeline_config(&self) -> PipelineConfig {
        PipelineConfig {
            relevance_threshold: RELEVANCE_THRESHOLD,
            jm_lambda: self.jm_lambda,
            em: EmConfig {
                tol: self.em_tol,
                max_iters: self.em_max_iters,
            },
            collection_scope: self.collection_scope,
            age_bins: self.age_bins.clone(),
            cold_start_tokens: self.cold_start_tokens,
        }
    }
}

#[derive(Debug, Args, Serialize)]
struct ProfileArgs {
    #[command(flatten)]
    input: InputArgs,
    #[command(flatten)]
    model: ModelArgs,
    /// Comma-separated grouping criteria, or `all`.
    #[arg(long, default_value = "all", value_parser = parse_criteria)]
    #[serde(serialize_with = "serialize_criteria")]
    criterion: Criteria,
    #[arg(long)]
    #[serde(skip)]
    out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
struct RankArgs {
    #[command(flatten)]
    input: InputArgs,
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long, default_value = "all", value_parser = parse_criteria)]
    #[serde(serialize_with = "serialize_criteria")]
    criterion: Criteria,
    /// Comma-separated strategies (group, preferences, combined), or `all`.
    #[arg(long, default_value = "all", value_parser = parse_strategies)]
    #[serde(serialize_with = "serialize_strategies")]
    strategy: Strategies,
    /// Directory written by `profile` (its `profiles/` subdirectory or the
    /// output directory itself); profiles are estimated when absent.
    #[arg(long)]
    profiles: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip)]
    out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
struct EvalArgs {
    #[command(flatten)]
    input: InputArgs,
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long, default_value = "all", value_parser = parse_criteria)]
    #[serde(serialize_with = "serialize_criteria")]
    criterion: Criteria,
    #[arg(long)]
    profiles: Option<PathBuf>,
    /// Score these run files instead of running the strategy comparison.
    #[arg(long, num_args = 1..)]
    runs: Vec<PathBuf>,
    #[arg(long)]
    #[serde(skip)]
    out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
struct SweepArgs {
    #[command(flatten)]
    input: InputArgs,
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long, value_delimiter = ',', default_values_t = [5u32, 10, 20, 40])]
    bin_widths: Vec<u32>,
    #[arg(long)]
    #[serde(skip)]
    out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
struct SynthArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// JSON file with generator settings; flags below override it.
    #[arg(long)]
    spec: Option<PathBuf>,
    #[arg(long)]
    vocab_size: Option<usize>,
    #[arg(long)]
    n_groups: Option<usize>,
    #[arg(long)]
    users_per_group: Option<usize>,
    #[arg(long)]
    tokens_per_user: Option<usize>,
    #[arg(long)]
    n_candidates: Option<usize>,
    #[arg(long)]
    group_separation: Option<f64>,
    #[arg(long)]
    #[serde(skip)]
    out: PathBuf,
}

fn parse_age_bins(s: &str) -> std::result::Result<AgeBins, String> {
    let edges = s
        .split(',')
        .map(|e| e.trim().parse::<u32>().map_err(|e| format!("bad bin edge {e:?}")))
        .collect::<std::result::Result<Vec<_>, _>>()?;
    AgeBins::new(edges).map_err(|e| e.to_string())
}

/// One or more criteria.
#[derive(Debug, Clone)]
struct Criteria(Vec<Criterion>);

/// One or more strategies.
#[derive(Debug, Clone)]
struct Strategies(Vec<Strategy>);

fn parse_criteria(s: &str) -> std::result::Result<Criteria, String> {
    if s == "all" {
        return Ok(Criteria(Criterion::ALL.to_vec()));
    }
    let mut out = s
        .split(',')
        .map(|c| c.trim().parse::<Criterion>())
        .collect::<Result<Vec<_>>>()
        .map_err(|e| e.to_string())?;
    out.sort();
    out.dedup();
    Ok(Criteria(out))
}

fn parse_strategies(s: &str) -> std::result::Result<Strategies, String> {
    if s == "all" {
        return Ok(Strategies(Strategy::ALL.to_vec()));
    }
    let mut out = s
        .split(',')
        .map(|c| c.trim().parse::<Strategy>())
        .collect::<Result<Vec<_>>>()
        .map_err(|e| e.to_string())?;
    out.sort();
    out.dedup();
    Ok(Strategies(out))
}

fn serialize_bins<S: serde::Serializer>(bins: &Option<AgeBins>, s: S) -> std::result::Result<S::Ok, S::Error> {
    match bins {
        Some(b) => s.collect_seq(b.edges()),
        None => s.serialize_none(),
    }
}

fn serialize_criteria<S: serde::Serializer>(v: &Criteria, s: S) -> std::result::Result<S::Ok, S::Error> {
    s.collect_seq(v.0.iter().map(|c| c.as_str()))
}

fn serialize_strategies<S: serde::Serializer>(v: &Strategies, s: S) -> std::result::Result<S::Ok, S::Error> {
    s.collect_seq(v.0.iter().map(|c| c.as_str()))
}

/// JSON companion of a persisted profile's TSV distribution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfileSidecar {
    pub criterion: Criterion,
    pub group_label: String,
    /// File name of the distribution next to this sidecar.
    pub distribution: String,
    pub lambdas: BTreeMap<String, MixingWeights>,
    pub diagnostics: EmDiagnostics,
}

#[derive(Debug, Serialize)]
struct Manifest<'a> {
    tool: &'static str,
    version: &'static str,
    command: &'static str,
    config: serde_json::Value,
    inputs: BTreeMap<String, String>,
    outputs: &'a BTreeMap<String, String>,
}

/// Output directory that records the digest of every file it writes.
struct OutputDir {
    root: PathBuf,
    digests: BTreeMap<String, String>,
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let parent = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    let mut tmp = tempfile::NamedTempFile::new_in(parent).map_err(|e| Error::io(parent, e))?;
    tmp.write_all(bytes).map_err(|e| Error::io(path, e))?;
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}

impl OutputDir {
    fn new(root: &Path) -> Self {
        OutputDir {
            root: root.to_path_buf(),
            digests: BTreeMap::new(),
        }
    }

    fn write(&mut self, relative: &str, bytes: &[u8]) -> Result<()> {
        write_atomic(&self.root.join(relative), bytes)?;
        self.digests.insert(relative.to_string(), sha256_hex(bytes));
        Ok(())
    }

    fn write_json<T: Serialize>(&mut self, relative: &str, value: &T) -> Result<()> {
        let mut text = serde_json::to_string_pretty(value)?;
        text.push('\n');
        self.write(relative, text.as_bytes())
    }

    fn finish(self, command: &'static str, config: &impl Serialize, inputs: &[PathBuf]) -> Result<()> {
        let mut input_digests = BTreeMap::new();
        for path in inputs {
            let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
            input_digests.insert(path.display().to_string(), sha256_hex(&bytes));
        }
        let manifest = Manifest {
            tool: "groupprof",
            version: env!("CARGO_PKG_VERSION"),
            command,
            config: serde_json::to_value(config)?,
            inputs: input_digests,
            outputs: &self.digests,
        };
        let mut text = serde_json::to_string_pretty(&manifest)?;
        text.push('\n');
        write_atomic(&self.root.join("manifest.json"), text.as_bytes())
    }
}

impl InputArgs {
    fn load(&self) -> Result<Corpus> {
        load_corpus(&self.users, &self.candidates, &self.requests)
    }

    fn paths(&self) -> Vec<PathBuf> {
        vec![self.users.clone(), self.candidates.clone(), self.requests.clone()]
    }
}

fn profile_dir(criterion: Criterion) -> String {
    format!("profiles/{criterion}")
}

fn write_profiles(
    out: &mut OutputDir,
    criterion: Criterion,
    groups: &[GroupAssignment],
    profiles: &BTreeMap<String, GroupProfile>,
) -> Result<()> {
    let dir = profile_dir(criterion);
    for g in groups {
        let Some(p) = profiles.get(&g.group_label) else { continue };
        let stem = g.file_stem();
        out.write(&format!("{dir}/{stem}.tsv"), p.theta_g.to_tsv().as_bytes())?;
        out.write_json(
            &format!("{dir}/{stem}.json"),
            &ProfileSidecar {
                criterion,
                group_label: p.group_label.clone(),
                distribution: format!("{stem}.tsv"),
                lambdas: p.lambdas.clone(),
                diagnostics: p.diagnostics.clone(),
            },
        )?;
    }
    Ok(())
}

/// Loads the profiles persisted by `profile` for one criterion. `dir` may be
/// the output directory of that run or its `profiles/` subdirectory.
pub fn load_profiles(dir: &Path, criterion: Criterion) -> Result<BTreeMap<String, GroupProfile>> {
    let dir = resolve_profile_dir(dir, criterion);
    let mut profiles = BTreeMap::new();
    for path in profile_files(&dir)?.iter().filter(|p| p.extension().is_some_and(|x| x == "json")) {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let sidecar: ProfileSidecar = serde_json::from_str(&text)
            .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
        if sidecar.criterion != criterion {
            return Err(Error::Format(format!(
                "{}: profile of criterion {} found under {criterion}",
                path.display(),
                sidecar.criterion
            )));
        }
        let tsv_path = dir.join(&sidecar.distribution);
        let tsv = std::fs::read_to_string(&tsv_path).map_err(|e| Error::io(&tsv_path, e))?;
        let theta_g = TermDistribution::from_tsv(&tsv)?;
        profiles.insert(
            sidecar.group_label.clone(),
            GroupProfile {
                group_label: sidecar.group_label,
                theta_g,
                lambdas: sidecar.lambdas,
                diagnostics: sidecar.diagnostics,
            },
        );
    }
    Ok(profiles)
}

fn resolve_profile_dir(dir: &Path, criterion: Criterion) -> PathBuf {
    let nested = dir.join(profile_dir(criterion));
    if nested.is_dir() {
        nested
    } else {
        dir.join(criterion.as_str())
    }
}

/// Sorted `.tsv` and `.json` files of a criterion's profile directory.
fn profile_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut entries: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .map(|e| e.map(|e| e.path()).map_err(|err| Error::io(dir, err)))
        .collect::<Result<_>>()?;
    entries.retain(|p| p.extension().is_some_and(|x| x == "json" || x == "tsv"));
    entries.sort();
    Ok(entries)
}

fn profile_inputs(dir: Option<&Path>, criteria: &Criteria) -> Result<Vec<PathBuf>> {
    let mut files = Vec::new();
    if let Some(dir) = dir {
        for &c in &criteria.0 {
            files.extend(profile_files(&resolve_profile_dir(dir, c))?);
        }
    }
    Ok(files)
}

fn profiles_for(
    pipeline: &Pipeline<'_>,
    criterion: Criterion,
    groups: &[GroupAssignment],
    dir: Option<&Path>,
) -> Result<BTreeMap<String, GroupProfile>> {
    match dir {
        Some(dir) => load_profiles(dir, criterion),
        None => pipeline.estimate_profiles(groups),
    }
}

fn cmd_profile(args: &ProfileArgs) -> Result<()> {
    let corpus = args.input.load()?;
    let pipeline = Pipeline::new(&corpus, args.model.pipeline_config())?;
    let mut out = OutputDir::new(&args.out);
    for &criterion in &args.criterion.0 {
        let groups = pipeline.groups(criterion);
        let profiles = pipeline.estimate_profiles(&groups)?;
        log::info!("{criterion}: {} group(s), {} profiled", groups.len(), profiles.len());
        write_profiles(&mut out, criterion, &groups, &profiles)?;
    }
    out.finish("profile", args, &args.input.paths())
}

fn cmd_rank(args: &RankArgs) -> Result<()> {
    let corpus = args.input.load()?;
    let pipeline = Pipeline::new(&corpus, args.model.pipeline_config())?;
    let mut out = OutputDir::new(&args.out);
    for &criterion in &args.criterion.0 {
        let groups = pipeline.groups(criterion);
        let profiles = profiles_for(&pipeline, criterion, &groups, args.profiles.as_deref())?;
        let routed = pipeline.route(&groups, &profiles);
        for &strategy in &args.strategy.0 {
            // The preference strategy ignores the grouping: write it once.
            if strategy == Strategy::Preferences && criterion != args.criterion.0[0] {
                continue;
            }
            let tag = run_tag(strategy, criterion);
            let runs = pipeline.rank(&routed, strategy, &tag)?;
            out.write(&format!("runs/{tag}.run"), write_run_file(&runs).as_bytes())?;
        }
    }
    let mut inputs = args.input.paths();
    inputs.extend(profile_inputs(args.profiles.as_deref(), &args.criterion)?);
    out.finish("rank", args, &inputs)
}

#[derive(Debug, Serialize)]
struct RunEvaluation {
    run_file: String,
    #[serde(flatten)]
    result: EvalResult,
}

#[derive(Debug, Serialize)]
#[serde(untagged)]
enum EvalReport {
    Comparisons { comparisons: Vec<StrategyComparison> },
    Runs { runs: Vec<RunEvaluation> },
}

fn cmd_eval(args: &EvalArgs) -> Result<()> {
    let corpus = args.input.load()?;
    let pipeline = Pipeline::new(&corpus, args.model.pipeline_config())?;
    let mut out = OutputDir::new(&args.out);
    let mut inputs = args.input.paths();
    inputs.extend(profile_inputs(args.profiles.as_deref(), &args.criterion)?);
    let report = if args.runs.is_empty() {
        let mut comparisons = Vec::new();
        for &criterion in &args.criterion.0 {
            let groups = pipeline.groups(criterion);
            let profiles = profiles_for(&pipeline, criterion, &groups, args.profiles.as_deref())?;
            comparisons.push(compare_with_profiles(&pipeline, criterion, &groups, &profiles)?);
        }
        EvalReport::Comparisons { comparisons }
    } else {
        let mut runs = Vec::new();
        for path in &args.runs {
            let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            let parsed = parse_run_file(&text, Strategy::Group)?;
            let name = path.file_name().map_or_else(String::new, |n| n.to_string_lossy().into_owned());
            let strategy = parsed.first().map_or_else(|| name.clone(), |r| r.tag.clone());
            runs.push(RunEvaluation {
                run_file: name,
                result: pipeline.evaluate(&strategy, &parsed)?,
            });
            inputs.push(path.clone());
        }
        EvalReport::Runs { runs }
    };
    out.write_json("eval.json", &report)?;
    out.finish("eval", args, &inputs)
}

fn cmd_sweep(args: &SweepArgs) -> Result<()> {
    let corpus = args.input.load()?;
    let results = granularity_sweep(&corpus, &args.bin_widths, &args.model.pipeline_config())?;
    let mut out = OutputDir::new(&args.out);
    out.write("sweep.tsv", sweep_tsv(&results).as_bytes())?;
    out.write_json("sweep.json", &results)?;
    out.finish("sweep", args, &args.input.paths())
}

fn cmd_synth(args: &SynthArgs) -> Result<()> {
    let mut spec = match &args.spec {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            serde_json::from_str(&text).map_err(|e| Error::Format(format!("{}: {e}", path.display())))?
        }
        None => SynthSpec::default(),
    };
    spec.seed = args.seed;
    let overrides = [
        (&mut spec.vocab_size, args.vocab_size),
        (&mut spec.n_groups, args.n_groups),
        (&mut spec.users_per_group, args.users_per_group),
        (&mut spec.tokens_per_user, args.tokens_per_user),
        (&mut spec.n_candidates, args.n_candidates),
    ];
    for (field, value) in overrides {
        if let Some(v) = value {
            *field = v;
        }
    }
    if let Some(s) = args.group_separation {
        spec.group_separation = s;
    }
    let (corpus, truth) = generate(&spec)?;
    let (users, candidates, requests) = corpus.to_jsonl()?;
    let mut out = OutputDir::new(&args.out);
    out.write("users.jsonl", users.as_bytes())?;
    out.write("candidates.jsonl", candidates.as_bytes())?;
    out.write("requests.jsonl", requests.as_bytes())?;
    out.write_json("ground_truth.json", &truth)?;
    let inputs: Vec<PathBuf> = args.spec.iter().cloned().collect();
    out.finish("synth", &spec, &inputs)
}

fn thread_count() -> std::result::Result<usize, String> {
    match std::env::var(THREADS_ENV) {
        Ok(v) => v
            .trim()
            .parse::<usize>()
            .map_err(|_| format!("{THREADS_ENV} must be a non-negative integer, got {v:?}")),
        Err(_) => Ok(0),
    }
}

fn dispatch(command: &Command) -> Result<()> {
    match command {
        Command::Profile(a) => cmd_profile(a),
        Command::Rank(a) => cmd_rank(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Sweep(a) => cmd_sweep(a),
        Command::Synth(a) => cmd_synth(a),
    }
}

/// Runs the command line and returns the process exit code: 0 on success,
/// 1 on a usage or validation error, 2 on a runtime failure.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    let threads = match thread_count() {
        Ok(n) => n,
        Err(msg) => {
            eprintln!("error: {msg}");
            return 1;
        }
    };
    let pool = match rayon::ThreadPoolBuilder::new().num_threads(threads).build() {
        Ok(pool) => pool,
        Err(e) => {
            eprintln!("error: cannot start worker threads: {e}");
            return 2;
        }
    };
    match pool.install(|| dispatch(&cli.command)) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_validation() {
                1
            } else {
                2
            }
        }
    }
}
