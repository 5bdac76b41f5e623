//! Document records, the line-oriented manifest format, provenance gating and
//! per-stage retention accounting.

use std::collections::BTreeSet;
use std::fmt;
use std::fs::{self, File};
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::ops::AddAssign;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("malformed record: {0}")]
    MalformedRecord(String),
    #[error("record content is not valid UTF-8")]
    EncodingError,
    #[error("retention report needs a first stage with records_in > 0")]
    EmptyPipeline,
    #[error("{path}:{line}: {source}")]
    AtLine {
        path: PathBuf,
        line: usize,
        #[source]
        source: Box<CorpusError>,
    },
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    Code,
    Text,
    Math,
    Instruction,
}

impl Modality {
    pub const ALL: [Modality; 4] = [Modality::Code, Modality::Text, Modality::Math, Modality::Instruction];

    pub fn as_str(self) -> &'static str {
        match self {
            Modality::Code => "code",
            Modality::Text => "text",
            Modality::Math => "math",
            Modality::Instruction => "instruction",
        }
    }
}

impl fmt::Display for Modality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum QualityBucket {
    High,
    Medium,
    Low,
}

/// Structural and documentation statistics of one document.
///
/// See [`crate::filters::compute_signals`] for the exact definitions.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct SignalVector {
    pub alnum_ratio: f64,
    pub quoted_fraction: f64,
    pub encoded_data_pct: f64,
    pub duplicate_gram_fraction: f64,
    pub lines_per_function: f64,
    pub whitespace_ratio: f64,
    pub printy_stmt_pct: f64,
    pub char_token_ratio: f64,
    pub comment_code_ratio: f64,
    pub docstring_density: f64,
    pub inline_explanation_freq: f64,
}

impl SignalVector {
    pub const NAMES: [&'static str; 11] = [
        "alnum_ratio",
        "quoted_fraction",
        "encoded_data_pct",
        "duplicate_gram_fraction",
        "lines_per_function",
        "whitespace_ratio",
        "printy_stmt_pct",
        "char_token_ratio",
        "comment_code_ratio",
        "docstring_density",
        "inline_explanation_freq",
    ];

    pub fn get(&self, name: &str) -> Option<f64> {
        Some(match name {
            "alnum_ratio" => self.alnum_ratio,
            "quoted_fraction" => self.quoted_fraction,
            "encoded_data_pct" => self.encoded_data_pct,
            "duplicate_gram_fraction" => self.duplicate_gram_fraction,
            "lines_per_function" => self.lines_per_function,
            "whitespace_ratio" => self.whitespace_ratio,
            "printy_stmt_pct" => self.printy_stmt_pct,
            "char_token_ratio" => self.char_token_ratio,
            "comment_code_ratio" => self.comment_code_ratio,
            "docstring_density" => self.docstring_density,
            "inline_explanation_freq" => self.inline_explanation_freq,
            _ => return None,
        })
    }

    /// Checks the documented range of every field.
    pub fn is_valid(&self) -> bool {
        let unit = [
            self.alnum_ratio,
            self.quoted_fraction,
            self.encoded_data_pct,
            self.duplicate_gram_fraction,
            self.whitespace_ratio,
            self.printy_stmt_pct,
            self.docstring_density,
        ];
        let non_negative = [self.lines_per_function, self.comment_code_ratio, self.inline_explanation_freq];
        unit.iter().all(|v| v.is_finite() && (0.0..=1.0).contains(v))
            && non_negative.iter().all(|v| v.is_finite() && *v >= 0.0)
            && self.char_token_ratio.is_finite()
            && self.char_token_ratio > 0.0
    }
}

/// One source document and everything the stages learned about it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DocumentRecord {
    pub id: String,
    pub source_name: String,
    pub modality: Modality,
    pub path: String,
    pub repo_id: String,
    pub language: String,
    pub language_confidence: f64,
    pub license: String,
    pub origin_url: String,
    pub content: String,
    pub byte_len: u64,
    pub est_tokens: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub signals: Option<SignalVector>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub external_score: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub quality_bucket: Option<QualityBucket>,
    pub flags: BTreeSet<String>,
}

pub const UNKNOWN: &str = "unknown";

/// Counts tokens for budget accounting. The default is [`ByteEstimator`].
pub trait TokenCounter: Send + Sync {
    fn count(&self, content: &str) -> u64;
}

/// `ceil(byte_len / 4)`.
#[derive(Debug, Clone, Copy, Default)]
pub struct ByteEstimator;

impl TokenCounter for ByteEstimator {
    fn count(&self, content: &str) -> u64 {
        (content.len() as u64).div_ceil(4)
    }
}

pub fn estimate_tokens(content: &str) -> u64 {
    ByteEstimator.count(content)
}

impl DocumentRecord {
    /// A record with default metadata; handy for tests and synthetic corpora.
    pub fn new(id: impl Into<String>, modality: Modality, content: impl Into<String>) -> Self {
        let content = content.into();
        Self {
            id: id.into(),
            source_name: String::new(),
            modality,
            path: String::new(),
            repo_id: String::new(),
            language: UNKNOWN.to_string(),
            language_confidence: 0.0,
            license: UNKNOWN.to_string(),
            origin_url: String::new(),
            byte_len: content.len() as u64,
            est_tokens: estimate_tokens(&content),
            content,
            signals: None,
            external_score: None,
            quality_bucket: None,
            flags: BTreeSet::new(),
        }
    }

    pub fn with_path(mut self, path: impl Into<String>) -> Self {
        self.path = path.into();
        self
    }

    pub fn with_repo(mut self, repo_id: impl Into<String>) -> Self {
        self.repo_id = repo_id.into();
        self
    }

    pub fn with_license(mut self, license: impl Into<String>) -> Self {
        self.license = license.into();
        self
    }

    /// Replace the content and refresh `byte_len` and `est_tokens`.
    pub fn set_content(&mut self, content: String, counter: &dyn TokenCounter) {
        self.byte_len = content.len() as u64;
        self.est_tokens = counter.count(&content);
        self.content = content;
    }

    pub fn extension(&self) -> Option<&str> {
        let file = self.path.rsplit('/').next()?;
        let (stem, ext) = file.rsplit_once('.')?;
        if stem.is_empty() || ext.is_empty() {
            None
        } else {
            Some(ext)
        }
    }

    /// Serialize to one manifest line (no trailing newline).
    pub fn to_manifest_line(&self) -> String {
        serde_json::to_string(self).expect("records always serialize")
    }
}

/// The on-disk shape before validation: every field optional.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawRecord {
    id: Option<String>,
    source_name: Option<String>,
    modality: Option<Modality>,
    path: Option<String>,
    repo_id: Option<String>,
    language: Option<String>,
    language_confidence: Option<f64>,
    license: Option<String>,
    origin_url: Option<String>,
    content: Option<String>,
    #[allow(dead_code)]
    byte_len: Option<u64>,
    est_tokens: Option<u64>,
    signals: Option<SignalVector>,
    external_score: Option<f64>,
    quality_bucket: Option<QualityBucket>,
    flags: Option<BTreeSet<String>>,
}

/// Parse and validate one manifest line.
pub fn validate_record(line: &[u8]) -> Result<DocumentRecord, CorpusError> {
    validate_record_with(line, &ByteEstimator)
}

/// Like [`validate_record`] with a custom token counter for absent `est_tokens`.
pub fn validate_record_with(line: &[u8], counter: &dyn TokenCounter) -> Result<DocumentRecord, CorpusError> {
    let text = std::str::from_utf8(line).map_err(|_| CorpusError::EncodingError)?;
    let raw: RawRecord = serde_json::from_str(text).map_err(|e| {
        let msg = e.to_string();
        // Lone surrogate escapes cannot become UTF-8.
        if msg.contains("surrogate") || msg.contains("hex escape") {
            CorpusError::EncodingError
        } else {
            CorpusError::MalformedRecord(msg)
        }
    })?;
    from_raw(raw, counter)
}

fn from_raw(raw: RawRecord, counter: &dyn TokenCounter) -> Result<DocumentRecord, CorpusError> {
    let malformed = |m: &str| CorpusError::MalformedRecord(m.to_string());
    let id = raw.id.ok_or_else(|| malformed("missing id"))?;
    if id.is_empty() {
        return Err(malformed("empty id"));
    }
    let content = raw.content.ok_or_else(|| malformed("missing content"))?;
    let language_confidence = raw.language_confidence.unwrap_or(0.0);
    if !(0.0..=1.0).contains(&language_confidence) {
        return Err(malformed("language_confidence outside [0,1]"));
    }
    if let Some(s) = raw.external_score {
        if !(0.0..=1.0).contains(&s) {
            return Err(malformed("external_score outside [0,1]"));
        }
    }
    if raw.quality_bucket.is_some() && raw.signals.is_none() {
        return Err(malformed("quality_bucket without signals"));
    }
    if let Some(sig) = &raw.signals {
        if !sig.is_valid() {
            return Err(malformed("signals out of range"));
        }
    }
    let est_tokens = raw.est_tokens.unwrap_or_else(|| counter.count(&content));
    let non_empty = |s: Option<String>| s.filter(|s| !s.is_empty()).unwrap_or_else(|| UNKNOWN.to_string());
    Ok(DocumentRecord {
        id,
        source_name: raw.source_name.unwrap_or_default(),
        modality: raw.modality.unwrap_or(Modality::Code),
        path: raw.path.unwrap_or_default(),
        repo_id: raw.repo_id.unwrap_or_default(),
        language: non_empty(raw.language),
        language_confidence,
        license: non_empty(raw.license),
        origin_url: raw.origin_url.unwrap_or_default(),
        byte_len: content.len() as u64,
        est_tokens,
        content,
        signals: raw.signals,
        external_score: raw.external_score,
        quality_bucket: raw.quality_bucket,
        flags: raw.flags.unwrap_or_default(),
    })
}

/// Reads every record of a manifest file, failing on the first bad line.
pub fn read_manifest(path: &Path) -> Result<Vec<DocumentRecord>, CorpusError> {
    let mut reader = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    let mut buf = Vec::new();
    let mut line_no = 0;
    loop {
        buf.clear();
        if reader.read_until(b'\n', &mut buf)? == 0 {
            break;
        }
        line_no += 1;
        while matches!(buf.last(), Some(b'\n' | b'\r')) {
            buf.pop();
        }
        if buf.iter().all(u8::is_ascii_whitespace) {
            continue;
        }
        let rec = validate_record(&buf).map_err(|e| CorpusError::AtLine {
            path: path.to_path_buf(),
            line: line_no,
            source: Box::new(e),
        })?;
        out.push(rec);
    }
    Ok(out)
}

/// Reads a manifest file, or every `*.records` file of a directory in name order.
pub fn read_input(path: &Path) -> Result<Vec<DocumentRecord>, CorpusError> {
    if path.is_dir() {
        let mut files: Vec<PathBuf> = fs::read_dir(path)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|e| e == "records"))
            .collect();
        files.sort();
        let mut out = Vec::new();
        for f in files {
            out.extend(read_manifest(&f)?);
        }
        Ok(out)
    } else {
        read_manifest(path)
    }
}

pub fn write_manifest<'a, I>(path: &Path, records: I) -> io::Result<()>
where
    I: IntoIterator<Item = &'a DocumentRecord>,
{
    let mut w = BufWriter::new(File::create(path)?);
    for rec in records {
        w.write_all(rec.to_manifest_line().as_bytes())?;
        w.write_all(b"\n")?;
    }
    w.flush()
}

pub fn shard_name(stage: &str, index: usize) -> String {
    format!("{stage}.{index}.records")
}

/// Write `records` as `<stage>.<index>.records` shards of at most `per_shard`
/// records each. An empty input still produces shard 0.
pub fn write_shards(dir: &Path, stage: &str, records: &[DocumentRecord], per_shard: usize) -> io::Result<Vec<PathBuf>> {
    let per_shard = per_shard.max(1);
    let mut paths = Vec::new();
    let chunks: Vec<&[DocumentRecord]> = if records.is_empty() {
        vec![&[]]
    } else {
        records.chunks(per_shard).collect()
    };
    for (i, chunk) in chunks.into_iter().enumerate() {
        let p = dir.join(shard_name(stage, i));
        write_manifest(&p, chunk)?;
        paths.push(p);
    }
    Ok(paths)
}

/// Reads back all shards of one stage in index order.
pub fn read_shards(dir: &Path, stage: &str) -> Result<Vec<DocumentRecord>, CorpusError> {
    let mut out = Vec::new();
    for i in 0.. {
        let p = dir.join(shard_name(stage, i));
        if !p.exists() {
            break;
        }
        out.extend(read_manifest(&p)?);
    }
    Ok(out)
}

/// Outcome of a gate. Rejection is a value, not an error.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Decision {
    Keep,
    Reject(String),
}

impl Decision {
    pub fn is_keep(&self) -> bool {
        matches!(self, Decision::Keep)
    }

    /// Records a rejection reason into the record's flags as `<stage>:<reason>`.
    pub fn flag(&self, stage: &str, rec: &mut DocumentRecord) {
        if let Decision::Reject(reason) = self {
            rec.flags.insert(format!("{stage}:{reason}"));
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProvenanceRule {
    pub allowed_licenses: BTreeSet<String>,
    pub blocked_sources: BTreeSet<String>,
    pub require_known_license: bool,
}

impl Default for ProvenanceRule {
    fn default() -> Self {
        Self {
            allowed_licenses: BTreeSet::new(),
            blocked_sources: BTreeSet::new(),
            require_known_license: true,
        }
    }
}

/// License check first, then source blocklist.
pub fn provenance_gate(rec: &DocumentRecord, rule: &ProvenanceRule) -> Decision {
    if rule.require_known_license && !rule.allowed_licenses.contains(&rec.license) {
        return Decision::Reject("license".into());
    }
    if rule.blocked_sources.contains(&rec.source_name) {
        return Decision::Reject("provenance".into());
    }
    Decision::Keep
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageStats {
    pub stage_name: String,
    pub records_in: u64,
    pub records_out: u64,
    pub tokens_in: u64,
    pub tokens_out: u64,
}

impl StageStats {
    pub fn new(stage_name: impl Into<String>) -> Self {
        Self {
            stage_name: stage_name.into(),
            ..Self::default()
        }
    }

    pub fn observe_in(&mut self, rec: &DocumentRecord) {
        self.records_in += 1;
        self.tokens_in += rec.est_tokens;
    }

    pub fn observe_out(&mut self, rec: &DocumentRecord) {
        self.records_out += 1;
        self.tokens_out += rec.est_tokens;
    }

    /// Sum per-worker partials; stage names must agree.
    pub fn merge<I: IntoIterator<Item = StageStats>>(stage_name: &str, parts: I) -> StageStats {
        let mut total = StageStats::new(stage_name);
        for p in parts {
            total += p;
        }
        total
    }
}

impl AddAssign for StageStats {
    fn add_assign(&mut self, rhs: StageStats) {
        debug_assert!(rhs.stage_name.is_empty() || rhs.stage_name == self.stage_name);
        self.records_in += rhs.records_in;
        self.records_out += rhs.records_out;
        self.tokens_in += rhs.tokens_in;
        self.tokens_out += rhs.tokens_out;
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RetentionRow {
    pub stage_name: String,
    pub records_in: u64,
    pub records_out: u64,
    pub tokens_in: u64,
    pub tokens_out: u64,
    /// `records_out / records_in` of this stage, absent when it saw no records.
    pub stage_records: Option<f64>,
    /// `records_out / records_in` of the first stage.
    pub cumulative_records: f64,
    pub stage_tokens: Option<f64>,
    pub cumulative_tokens: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RetentionReport {
    pub rows: Vec<RetentionRow>,
}

impl RetentionReport {
    pub fn final_records(&self) -> f64 {
        self.rows.last().map_or(1.0, |r| r.cumulative_records)
    }
}

fn ratio(num: u64, den: u64) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

/// Per-stage and cumulative retention by records and tokens.
///
/// Cumulative retention is measured against the first stage's input, so it
/// equals the product of per-stage ratios whenever each stage consumes the
/// previous stage's output.
pub fn retention_report(stats: &[StageStats]) -> Result<RetentionReport, CorpusError> {
    let first = stats.first().ok_or(CorpusError::EmptyPipeline)?;
    if first.records_in == 0 {
        return Err(CorpusError::EmptyPipeline);
    }
    let base_records = first.records_in;
    let base_tokens = first.tokens_in;
    let rows = stats
        .iter()
        .map(|s| RetentionRow {
            stage_name: s.stage_name.clone(),
            records_in: s.records_in,
            records_out: s.records_out,
            tokens_in: s.tokens_in,
            tokens_out: s.tokens_out,
            stage_records: ratio(s.records_out, s.records_in),
            cumulative_records: s.records_out as f64 / base_records as f64,
            stage_tokens: ratio(s.tokens_out, s.tokens_in),
            cumulative_tokens: ratio(s.tokens_out, base_tokens),
        })
        .collect();
    Ok(RetentionReport { rows })
}
