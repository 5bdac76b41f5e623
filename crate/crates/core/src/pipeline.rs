//! Configuration, stage orchestration and run reports.
//!
//! A run reads one input manifest, applies the configured stages in order and
//! writes, per stage, `<stage>.<i>.records` shards of surviving records,
//! `<stage>-rejected.<i>.records` shards of removed ones and any stage
//! reports. `stats.json` and `retention.txt` summarize the run.

use std::collections::BTreeMap;
use std::error::Error as StdError;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use toml::{Table, Value};

use crate::corpus::{
    provenance_gate, read_input, retention_report, shard_name, write_manifest, write_shards, ByteEstimator, CorpusError,
    Decision, DocumentRecord, ProvenanceRule, StageStats,
};
use crate::decontam::{build_benchmark_index, load_suite, scan_suites, BenchmarkIndex, DecontamParams};
use crate::dedup::{dedup_corpus, url_overlap_filter, UrlBlocklist, DedupParams};
use crate::filters::{annotate_language, bucket_records, compute_signals, rule_filter, BucketThresholds, FallbackDetector, RuleConfig};
use crate::fim::{transform_stream, FimParams};
use crate::mixer::{max_budget, plan_epochs, plan_mix_weighted, pools_from_records, MixParams};
use crate::repo::{build_repo_documents, repo_record, validate_syntax, BracketChecker, RepoParams};

pub const WORKERS_ENV: &str = "CURATE_WORKERS";
pub const STATS_FILE: &str = "stats.json";
pub const RETENTION_FILE: &str = "retention.txt";

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("stage {stage} failed: {source}")]
    Stage {
        stage: String,
        #[source]
        source: Box<dyn StdError + Send + Sync>,
    },
    #[error("refusing to overwrite existing output {0}")]
    OutputExists(PathBuf),
    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Corpus(#[from] CorpusError),
}

impl PipelineError {
    /// 2 for configuration problems, 1 for everything that fails while running.
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Config(_) => 2,
            _ => 1,
        }
    }

    fn stage(stage: Stage, e: impl StdError + Send + Sync + 'static) -> Self {
        PipelineError::Stage {
            stage: stage.as_str().into(),
            source: Box::new(e),
        }
    }
}

fn io_err(context: impl Into<String>) -> impl FnOnce(std::io::Error) -> PipelineError {
    let context = context.into();
    move |source| PipelineError::Io { context, source }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Stage {
    Filter,
    Dedup,
    RepoSort,
    Decontam,
    Fim,
    Mix,
}

impl Stage {
    pub const ALL: [Stage; 6] = [Stage::Filter, Stage::Dedup, Stage::RepoSort, Stage::Decontam, Stage::Fim, Stage::Mix];

    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Filter => "filter",
            Stage::Dedup => "dedup",
            Stage::RepoSort => "repo-sort",
            Stage::Decontam => "decontam",
            Stage::Fim => "fim",
            Stage::Mix => "mix",
        }
    }
}

impl FromStr for Stage {
    type Err = PipelineError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Stage::ALL
            .into_iter()
            .find(|st| st.as_str() == s)
            .ok_or_else(|| PipelineError::Config(format!("unknown stage {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub stages: Vec<Stage>,
    pub input: Option<PathBuf>,
    pub output_dir: Option<PathBuf>,
    /// Default for `dedup.seed`, `fim.seed` and `mix.seed` when those are unset.
    pub seed: Option<u64>,
    pub workers: Option<usize>,
    pub shard_size: usize,
    pub filters: RuleConfig,
    pub buckets: BucketThresholds,
    /// The provenance gate only runs when this section is present.
    pub provenance: Option<ProvenanceRule>,
    pub dedup: DedupParams,
    pub repo: RepoParams,
    pub decontam: DecontamParams,
    pub fim: FimParams,
    pub mix: MixParams,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            stages: Vec::new(),
            input: None,
            output_dir: None,
            seed: None,
            workers: None,
            shard_size: 100_000,
            filters: RuleConfig::default(),
            buckets: BucketThresholds::default(),
            provenance: None,
            dedup: DedupParams::default(),
            repo: RepoParams::default(),
            decontam: DecontamParams::default(),
            fim: FimParams::default(),
            mix: MixParams::default(),
        }
    }
}

const SEEDED_SECTIONS: [&str; 3] = ["dedup", "fim", "mix"];

/// Parses the right-hand side of `key=value`. TOML literals are taken as
/// such; anything else is a bare string.
fn parse_override_value(raw: &str) -> Value {
    let raw = raw.trim();
    match format!("v = {raw}").parse::<Table>() {
        // No key takes a datetime, so `10:10:10` is a ratio, not a time.
        Ok(mut t) => match t.remove("v").expect("parsed key") {
            Value::Datetime(_) => Value::String(raw.to_string()),
            v => v,
        },
        Err(_) => Value::String(raw.to_string()),
    }
}

/// Applies `a.b.c=value` to a table, creating intermediate tables.
pub fn apply_override(table: &mut Table, assignment: &str) -> Result<(), PipelineError> {
    let (key, value) = assignment
        .split_once('=')
        .ok_or_else(|| PipelineError::Config(format!("override {assignment:?} is not key=value")))?;
    let parts: Vec<&str> = key.trim().split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(PipelineError::Config(format!("bad override key {key:?}")));
    }
    let (last, path) = parts.split_last().expect("non-empty");
    let mut cur = table;
    for p in path {
        let entry = cur.entry(p.to_string()).or_insert_with(|| Value::Table(Table::new()));
        cur = entry
            .as_table_mut()
            .ok_or_else(|| PipelineError::Config(format!("override {key:?}: {p} is not a section")))?;
    }
    cur.insert(last.to_string(), parse_override_value(value));
    Ok(())
}

/// Recursively overlays `top` onto `base`; non-table values replace.
fn deep_merge(base: &mut Table, top: Table) {
    for (k, v) in top {
        match (base.get_mut(&k), v) {
            (Some(Value::Table(b)), Value::Table(t)) => deep_merge(b, t),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

impl PipelineConfig {
    /// Parses configuration text, applies `key=value` overrides and fills
    /// unset keys from the defaults.
    pub fn from_toml_str<S: AsRef<str>>(text: &str, overrides: &[S]) -> Result<Self, PipelineError> {
        let mut user: Table = text.parse().map_err(|e: toml::de::Error| PipelineError::Config(e.to_string()))?;
        for o in overrides {
            apply_override(&mut user, o.as_ref())?;
        }
        if let Some(seed) = user.get("seed").cloned() {
            for section in SEEDED_SECTIONS {
                let entry = user.entry(section).or_insert_with(|| Value::Table(Table::new()));
                if let Value::Table(t) = entry {
                    t.entry("seed").or_insert_with(|| seed.clone());
                }
            }
        }
        let mut merged = Table::try_from(PipelineConfig::default()).expect("defaults serialize");
        deep_merge(&mut merged, user);
        merged.try_into().map_err(|e: toml::de::Error| PipelineError::Config(e.to_string()))
    }

    pub fn load<S: AsRef<str>>(path: &Path, overrides: &[S]) -> Result<Self, PipelineError> {
        let text = fs::read_to_string(path)
            .map_err(|e| PipelineError::Config(format!("reading {}: {e}", path.display())))?;
        Self::from_toml_str(&text, overrides)
    }

    /// Checks every section. Stage-independent sections are checked too, so a
    /// typo fails fast whichever stages run.
    pub fn validate(&self) -> Result<(), PipelineError> {
        let cfg = |e: &dyn std::fmt::Display| PipelineError::Config(e.to_string());
        self.filters.validate().map_err(|e| cfg(&e))?;
        self.buckets.validate().map_err(|e| cfg(&e))?;
        self.dedup.validate().map_err(|e| cfg(&e))?;
        UrlBlocklist::parse(&self.dedup.blocked_url_patterns).map_err(|e| cfg(&e))?;
        self.decontam.validate().map_err(|e| cfg(&e))?;
        self.fim.validate().map_err(|e| cfg(&e))?;
        self.mix.validate().map_err(|e| cfg(&e))?;
        if self.shard_size == 0 {
            return Err(PipelineError::Config("shard_size must be >= 1".into()));
        }
        if self.workers == Some(0) {
            return Err(PipelineError::Config("workers must be >= 1".into()));
        }
        if self.stages.contains(&Stage::Decontam) {
            for s in &self.decontam.suites {
                if !Path::new(s).is_dir() {
                    return Err(PipelineError::Config(format!("decontam suite {s} is not a directory")));
                }
            }
        }
        Ok(())
    }

    /// Additional checks for a full run.
    pub fn validate_run(&self) -> Result<(&Path, &Path), PipelineError> {
        if self.stages.is_empty() {
            return Err(PipelineError::Config("stages is empty".into()));
        }
        for (i, s) in self.stages.iter().enumerate() {
            if self.stages[..i].contains(s) {
                return Err(PipelineError::Config(format!("stage {} listed twice", s.as_str())));
            }
        }
        let input = self.input.as_deref().ok_or_else(|| PipelineError::Config("input is not set".into()))?;
        if !input.exists() {
            return Err(PipelineError::Config(format!("input {} does not exist", input.display())));
        }
        let out = self
            .output_dir
            .as_deref()
            .ok_or_else(|| PipelineError::Config("output_dir is not set".into()))?;
        self.validate()?;
        Ok((input, out))
    }

    /// Worker threads: the smaller of `workers` and `CURATE_WORKERS` when
    /// set, else the machine's parallelism.
    pub fn worker_count(&self) -> Result<usize, PipelineError> {
        let env = match std::env::var(WORKERS_ENV) {
            Ok(v) => Some(
                v.trim()
                    .parse::<usize>()
                    .ok()
                    .filter(|&n| n > 0)
                    .ok_or_else(|| PipelineError::Config(format!("{WORKERS_ENV}={v:?} is not a positive integer")))?,
            ),
            Err(_) => None,
        };
        Ok(match (self.workers, env) {
            (Some(a), Some(b)) => a.min(b),
            (Some(a), None) | (None, Some(a)) => a,
            (None, None) => std::thread::available_parallelism().map_or(1, usize::from),
        })
    }

    fn thread_pool(&self) -> Result<rayon::ThreadPool, PipelineError> {
        rayon::ThreadPoolBuilder::new()
            .num_threads(self.worker_count()?)
            .build()
            .map_err(|e| PipelineError::Config(format!("thread pool: {e}")))
    }
}

/// Everything one stage produced.
#[derive(Debug, Clone, Default)]
pub struct StageOutput {
    pub kept: Vec<DocumentRecord>,
    pub rejected: Vec<DocumentRecord>,
    pub stats: StageStats,
    /// Rejected records per reason flag; sums to `rejected.len()`.
    pub rejections: BTreeMap<String, u64>,
    /// Input records folded into another output record rather than removed.
    pub merged: u64,
    /// `(suffix, contents)` report files.
    pub artifacts: Vec<(String, String)>,
}

impl StageOutput {
    fn new(stage: Stage, input: &[DocumentRecord]) -> Self {
        let mut stats = StageStats::new(stage.as_str());
        for r in input {
            stats.observe_in(r);
        }
        Self {
            stats,
            ..Self::default()
        }
    }

    fn reject(&mut self, rec: DocumentRecord, flag: &str) {
        *self.rejections.entry(flag.to_string()).or_default() += 1;
        self.rejected.push(rec);
    }

    fn finish(mut self) -> Self {
        for r in &self.kept {
            self.stats.observe_out(r);
        }
        self
    }
}

type Rejected = Box<(DocumentRecord, String)>;

fn filter_one(mut rec: DocumentRecord, cfg: &PipelineConfig) -> Result<DocumentRecord, Rejected> {
    const STAGE: &str = "filter";
    let reject = |mut rec: DocumentRecord, d: Decision| {
        d.flag(STAGE, &mut rec);
        let Decision::Reject(reason) = d else { unreachable!() };
        Err(Box::new((rec, format!("{STAGE}:{reason}"))))
    };
    if let Some(rule) = &cfg.provenance {
        let d = provenance_gate(&rec, rule);
        if !d.is_keep() {
            return reject(rec, d);
        }
    }
    // Keep upstream language labels; detect only when absent.
    if (rec.language == crate::corpus::UNKNOWN || rec.language_confidence == 0.0)
        && annotate_language(&mut rec, &FallbackDetector).is_err()
    {
        return reject(rec, Decision::Reject("empty".into()));
    }
    let d = rule_filter(&rec, &cfg.filters);
    if !d.is_keep() {
        return reject(rec, d);
    }
    match compute_signals(&rec) {
        Ok(s) => rec.signals = Some(s),
        Err(_) => return reject(rec, Decision::Reject("empty".into())),
    }
    Ok(rec)
}

fn run_filter(records: Vec<DocumentRecord>, cfg: &PipelineConfig) -> Result<StageOutput, PipelineError> {
    let mut out = StageOutput::new(Stage::Filter, &records);
    let results: Vec<_> = records.into_par_iter().map(|r| filter_one(r, cfg)).collect();
    for r in results {
        match r {
            Ok(rec) => out.kept.push(rec),
            Err(rej) => {
                let (rec, flag) = *rej;
                out.reject(rec, &flag);
            }
        }
    }
    bucket_records(&mut out.kept, &cfg.buckets).map_err(|e| PipelineError::stage(Stage::Filter, e))?;
    Ok(out.finish())
}

fn run_dedup(records: Vec<DocumentRecord>, cfg: &PipelineConfig) -> Result<StageOutput, PipelineError> {
    let mut out = StageOutput::new(Stage::Dedup, &records);
    let err = |e| PipelineError::stage(Stage::Dedup, e);
    let (kept, url_rejected) = url_overlap_filter(records, &cfg.dedup.blocked_url_patterns).map_err(err)?;
    for r in url_rejected {
        out.reject(r, "dedup:url");
    }
    let outcome = dedup_corpus(kept, &cfg.dedup).map_err(err)?;
    for r in outcome.removed {
        let flag = if r.flags.contains("dedup:exact") { "dedup:exact" } else { "dedup:near" };
        out.reject(r, flag);
    }
    out.kept = outcome.survivors;
    let mut report = String::new();
    for c in &outcome.clusters {
        report.push_str(&c.report_line());
        report.push('\n');
    }
    out.artifacts.push(("clusters.txt".into(), report));
    Ok(out.finish())
}

fn run_repo_sort(records: Vec<DocumentRecord>, cfg: &PipelineConfig) -> Result<StageOutput, PipelineError> {
    let mut out = StageOutput::new(Stage::RepoSort, &records);
    let mut candidates = Vec::with_capacity(records.len());
    if cfg.repo.syntax_check {
        let checked: Vec<_> = records
            .into_par_iter()
            .map(|mut r| {
                let d = if r.repo_id.is_empty() { Decision::Keep } else { validate_syntax(&r, &BracketChecker) };
                d.flag("repo", &mut r);
                (r, d.is_keep())
            })
            .collect();
        for (r, ok) in checked {
            if ok {
                candidates.push(r);
            } else {
                out.reject(r, "repo:syntax");
            }
        }
    } else {
        candidates = records;
    }
    let files: BTreeMap<(String, String), DocumentRecord> = candidates
        .iter()
        .filter(|r| !r.repo_id.is_empty())
        .map(|r| ((r.repo_id.clone(), r.path.clone()), r.clone()))
        .collect();
    let build = build_repo_documents(candidates, &cfg.repo).map_err(|e| PipelineError::stage(Stage::RepoSort, e))?;
    let mut report = String::new();
    for e in build.broken_edges() {
        report.push_str(&e.report_line());
        report.push('\n');
    }
    for doc in &build.documents {
        let members: Vec<&DocumentRecord> = doc
            .ordered_paths
            .iter()
            .map(|p| &files[&(doc.repo_id.clone(), p.clone())])
            .collect();
        out.merged += members.len() as u64;
        out.kept.push(repo_record(doc, &members, &ByteEstimator));
    }
    out.kept.extend(build.passthrough);
    for r in build.dropped {
        out.reject(r, "repo:single-file");
    }
    out.artifacts.push(("cycles.txt".into(), report));
    Ok(out.finish())
}

fn load_indexes(p: &DecontamParams) -> Result<Vec<BenchmarkIndex>, PipelineError> {
    p.suites
        .iter()
        .map(|dir| {
            let (name, items) = load_suite(Path::new(dir)).map_err(|e| PipelineError::stage(Stage::Decontam, e))?;
            Ok(build_benchmark_index(&name, &items, p))
        })
        .collect()
}

fn run_decontam(records: Vec<DocumentRecord>, cfg: &PipelineConfig) -> Result<StageOutput, PipelineError> {
    let mut out = StageOutput::new(Stage::Decontam, &records);
    let indexes = load_indexes(&cfg.decontam)?;
    let scanned: Vec<_> = records
        .into_par_iter()
        .map(|r| {
            let rep = scan_suites(&r, &indexes, &cfg.decontam);
            (r, rep)
        })
        .collect();
    let mut report = String::new();
    for (mut r, rep) in scanned {
        match rep {
            Some(rep) => {
                report.push_str(&serde_json::to_string(&rep).expect("report serializes"));
                report.push('\n');
                r.flags.insert("decontam:match".into());
                out.reject(r, "decontam:match");
            }
            None => out.kept.push(r),
        }
    }
    out.artifacts.push(("report.records".into(), report));
    Ok(out.finish())
}

fn run_fim(records: Vec<DocumentRecord>, cfg: &PipelineConfig) -> Result<StageOutput, PipelineError> {
    let mut out = StageOutput::new(Stage::Fim, &records);
    let (kept, stats) = transform_stream(records, &cfg.fim, &ByteEstimator);
    out.kept = kept;
    let report = format!(
        "records {}\nselected {}\ntransformed {}\ntoo_short {}\nsentinel_collisions {}\n",
        stats.records, stats.selected, stats.transformed, stats.too_short, stats.collisions
    );
    out.artifacts.push(("report.txt".into(), report));
    Ok(out.finish())
}

fn run_mix(records: Vec<DocumentRecord>, cfg: &PipelineConfig) -> Result<StageOutput, PipelineError> {
    let mut out = StageOutput::new(Stage::Mix, &records);
    let err = |e| PipelineError::stage(Stage::Mix, e);
    let p = &cfg.mix;
    let ratio = p.validate().map_err(err)?;
    let pools = pools_from_records(&records, p.include_instruction);
    let budget = p.budget_tokens.unwrap_or_else(|| max_budget(&pools, &ratio));
    let plan = plan_mix_weighted(&pools, &ratio, budget, p.seed, &p.bucket_weights).map_err(err)?;
    let epochs = plan_epochs(&plan, p.epochs, p.seed).map_err(err)?;

    let first = &epochs.orders[0];
    let rank: std::collections::HashMap<&str, usize> = first.iter().enumerate().map(|(i, id)| (id.as_str(), i)).collect();
    let mut selected: Vec<Option<DocumentRecord>> = vec![None; first.len()];
    for mut r in records {
        match rank.get(r.id.as_str()) {
            Some(&i) if selected[i].is_none() => selected[i] = Some(r),
            _ => {
                let flag = if r.modality == crate::corpus::Modality::Instruction && !p.include_instruction {
                    "mix:instruction"
                } else {
                    "mix:unselected"
                };
                r.flags.insert(flag.into());
                out.reject(r, flag);
            }
        }
    }
    out.kept = selected.into_iter().flatten().collect();

    let mut report = plan.report(&ratio);
    let _ = writeln!(report, "epochs {}", epochs.epochs);
    let _ = writeln!(report, "tokens_per_epoch {}", epochs.tokens_per_epoch);
    let _ = writeln!(report, "total_tokens {}", epochs.total_tokens());
    out.artifacts.push(("report.txt".into(), report));
    for (k, order) in epochs.orders.iter().enumerate() {
        let mut ids = order.join("\n");
        if !ids.is_empty() {
            ids.push('\n');
        }
        out.artifacts.push((format!("epoch-{k}.ids"), ids));
    }
    Ok(out.finish())
}

/// Runs one stage on in-memory records using the current rayon pool.
pub fn run_stage(stage: Stage, records: Vec<DocumentRecord>, cfg: &PipelineConfig) -> Result<StageOutput, PipelineError> {
    match stage {
        Stage::Filter => run_filter(records, cfg),
        Stage::Dedup => run_dedup(records, cfg),
        Stage::RepoSort => run_repo_sort(records, cfg),
        Stage::Decontam => run_decontam(records, cfg),
        Stage::Fim => run_fim(records, cfg),
        Stage::Mix => run_mix(records, cfg),
    }
}

/// One `stats.json` entry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageSummary {
    #[serde(flatten)]
    pub stats: StageStats,
    pub rejections: BTreeMap<String, u64>,
    pub merged: u64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct RunStats {
    pub stages: Vec<StageSummary>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failed: Option<String>,
}

impl RunStats {
    pub fn stage_stats(&self) -> Vec<StageStats> {
        self.stages.iter().map(|s| s.stats.clone()).collect()
    }

    pub fn read(run_dir: &Path) -> Result<Self, PipelineError> {
        let path = run_dir.join(STATS_FILE);
        let text = fs::read_to_string(&path).map_err(io_err(format!("reading {}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| PipelineError::Config(format!("{}: {e}", path.display())))
    }
}

fn pct(x: Option<f64>) -> String {
    x.map_or_else(|| "-".to_string(), |v| format!("{:.2}%", 100.0 * v))
}

/// Table of per-stage and cumulative retention by records and by tokens.
pub fn stats_summary(stats: &[StageStats]) -> Result<String, CorpusError> {
    let report = retention_report(stats)?;
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<10} {:>11} {:>11} {:>9} {:>9} {:>13} {:>13} {:>9} {:>9}",
        "stage", "records_in", "records_out", "rec_ret", "rec_cum", "tokens_in", "tokens_out", "tok_ret", "tok_cum"
    );
    for r in &report.rows {
        let _ = writeln!(
            out,
            "{:<10} {:>11} {:>11} {:>9} {:>9} {:>13} {:>13} {:>9} {:>9}",
            r.stage_name,
            r.records_in,
            r.records_out,
            pct(r.stage_records),
            pct(Some(r.cumulative_records)),
            r.tokens_in,
            r.tokens_out,
            pct(r.stage_tokens),
            pct(r.cumulative_tokens),
        );
    }
    Ok(out)
}

/// Human-readable summary of a run directory, including rejection tallies.
pub fn run_report(run_dir: &Path) -> Result<String, PipelineError> {
    let stats = RunStats::read(run_dir)?;
    let mut out = if stats.stages.is_empty() {
        "no completed stages\n".to_string()
    } else {
        stats_summary(&stats.stage_stats())?
    };
    for s in &stats.stages {
        for (flag, n) in &s.rejections {
            let _ = writeln!(out, "rejected {:<10} {:<24} {n}", s.stats.stage_name, flag);
        }
        if s.merged > 0 {
            let _ = writeln!(out, "merged   {:<10} {:<24} {}", s.stats.stage_name, "", s.merged);
        }
    }
    if let Some(f) = &stats.failed {
        let _ = writeln!(out, "FAILED: {f}");
    }
    Ok(out)
}

fn write_file(path: &Path, contents: &str) -> Result<(), PipelineError> {
    fs::write(path, contents).map_err(io_err(format!("writing {}", path.display())))
}

fn ensure_absent(path: &Path) -> Result<(), PipelineError> {
    if path.exists() {
        Err(PipelineError::OutputExists(path.to_path_buf()))
    } else {
        Ok(())
    }
}

fn rejected_stage_name(stage: Stage) -> String {
    format!("{}-rejected", stage.as_str())
}

fn write_stage_outputs(dir: &Path, stage: Stage, out: &StageOutput, shard_size: usize) -> Result<(), PipelineError> {
    let ctx = || format!("writing {} shards in {}", stage.as_str(), dir.display());
    write_shards(dir, stage.as_str(), &out.kept, shard_size).map_err(io_err(ctx()))?;
    write_shards(dir, &rejected_stage_name(stage), &out.rejected, shard_size).map_err(io_err(ctx()))?;
    for (suffix, contents) in &out.artifacts {
        write_file(&dir.join(format!("{}.{suffix}", stage.as_str())), contents)?;
    }
    Ok(())
}

fn write_run_stats(dir: &Path, stats: &RunStats) -> Result<(), PipelineError> {
    let json = serde_json::to_string_pretty(stats).expect("stats serialize");
    write_file(&dir.join(STATS_FILE), &(json + "\n"))?;
    let table = if stats.stages.is_empty() {
        String::new()
    } else {
        stats_summary(&stats.stage_stats())?
    };
    write_file(&dir.join(RETENTION_FILE), &table)
}

/// What a completed run produced.
#[derive(Debug, Clone)]
pub struct RunSummary {
    pub output_dir: PathBuf,
    pub stats: RunStats,
    pub report: String,
}

/// Runs every configured stage in order. On a stage failure the completed
/// stages' outputs and a partial `stats.json` are left in place.
pub fn run_pipeline(cfg: &PipelineConfig) -> Result<RunSummary, PipelineError> {
    let (input, out_dir) = cfg.validate_run()?;
    let pool = cfg.thread_pool()?;
    fs::create_dir_all(out_dir).map_err(io_err(format!("creating {}", out_dir.display())))?;
    for s in &cfg.stages {
        ensure_absent(&out_dir.join(shard_name(s.as_str(), 0)))?;
    }
    ensure_absent(&out_dir.join(STATS_FILE))?;

    let mut records = read_input(input)?;
    let mut run = RunStats::default();
    for &stage in &cfg.stages {
        let result = pool.install(|| run_stage(stage, std::mem::take(&mut records), cfg));
        let out = match result {
            Ok(out) => out,
            Err(e) => {
                run.failed = Some(e.to_string());
                write_run_stats(out_dir, &run)?;
                return Err(e);
            }
        };
        write_stage_outputs(out_dir, stage, &out, cfg.shard_size)?;
        run.stages.push(StageSummary {
            stats: out.stats,
            rejections: out.rejections,
            merged: out.merged,
        });
        records = out.kept;
    }
    write_run_stats(out_dir, &run)?;
    let report = run_report(out_dir)?;
    Ok(RunSummary {
        output_dir: out_dir.to_path_buf(),
        stats: run,
        report,
    })
}

/// Runs a single stage from one manifest to another. Rejected records go to
/// `<output>.rejected` and reports to `<output>.<suffix>`.
pub fn run_single(stage: Stage, input: &Path, output: &Path, cfg: &PipelineConfig) -> Result<StageOutput, PipelineError> {
    cfg.validate()?;
    if !input.exists() {
        return Err(PipelineError::Config(format!("input {} does not exist", input.display())));
    }
    ensure_absent(output)?;
    let pool = cfg.thread_pool()?;
    let records = read_input(input)?;
    let out = pool.install(|| run_stage(stage, records, cfg))?;
    let sibling = |suffix: &str| {
        let mut name = output.as_os_str().to_owned();
        name.push(format!(".{suffix}"));
        PathBuf::from(name)
    };
    write_manifest(output, &out.kept).map_err(io_err(format!("writing {}", output.display())))?;
    let rejected = sibling("rejected");
    write_manifest(&rejected, &out.rejected).map_err(io_err(format!("writing {}", rejected.display())))?;
    for (suffix, contents) in &out.artifacts {
        write_file(&sibling(suffix), contents)?;
    }
    Ok(out)
}
