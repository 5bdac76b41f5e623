//! Language identification, rule-based rejection, quality signals and
//! High/Medium/Low bucketing.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Decision, DocumentRecord, QualityBucket, SignalVector, UNKNOWN};

#[derive(Debug, Error, PartialEq)]
pub enum FilterError {
    #[error("document {0} has empty content")]
    EmptyDocument(String),
    #[error("bucketing needs at least one record")]
    EmptyCorpus,
    #[error("invalid filter configuration: {0}")]
    ConfigError(String),
}

/// Comment syntax and extensions of a supported language.
#[derive(Debug)]
pub struct LanguageSpec {
    pub name: &'static str,
    pub extensions: &'static [&'static str],
    pub line_comments: &'static [&'static str],
    pub block_comment: Option<(&'static str, &'static str)>,
    /// Triple-quoted docstrings count as documentation lines.
    pub docstrings: bool,
}

pub static LANGUAGES: [LanguageSpec; 6] = [
    LanguageSpec {
        name: "python",
        extensions: &["py", "pyi"],
        line_comments: &["#"],
        block_comment: None,
        docstrings: true,
    },
    LanguageSpec {
        name: "java",
        extensions: &["java"],
        line_comments: &["//"],
        block_comment: Some(("/*", "*/")),
        docstrings: false,
    },
    LanguageSpec {
        name: "csharp",
        extensions: &["cs"],
        line_comments: &["//"],
        block_comment: Some(("/*", "*/")),
        docstrings: false,
    },
    LanguageSpec {
        name: "cpp",
        extensions: &["cpp", "cc", "cxx", "hpp", "hh", "hxx"],
        line_comments: &["//"],
        block_comment: Some(("/*", "*/")),
        docstrings: false,
    },
    LanguageSpec {
        name: "c",
        extensions: &["c", "h"],
        line_comments: &["//"],
        block_comment: Some(("/*", "*/")),
        docstrings: false,
    },
    LanguageSpec {
        name: "javascript",
        extensions: &["js", "mjs", "cjs", "jsx"],
        line_comments: &["//"],
        block_comment: Some(("/*", "*/")),
        docstrings: false,
    },
];

/// Used for anything outside the six table languages.
pub static FALLBACK_SPEC: LanguageSpec = LanguageSpec {
    name: UNKNOWN,
    extensions: &[],
    line_comments: &["#", "//"],
    block_comment: Some(("/*", "*/")),
    docstrings: false,
};

pub fn language_by_name(name: &str) -> Option<&'static LanguageSpec> {
    LANGUAGES.iter().find(|l| l.name == name)
}

pub fn language_by_extension(ext: &str) -> Option<&'static LanguageSpec> {
    let ext = ext.to_ascii_lowercase();
    LANGUAGES.iter().find(|l| l.extensions.contains(&ext.as_str()))
}

/// The language spec used for comment and function syntax of a record:
/// its detected language if known, else its extension, else the fallback.
pub fn spec_for(rec: &DocumentRecord) -> &'static LanguageSpec {
    language_by_name(&rec.language)
        .or_else(|| rec.extension().and_then(language_by_extension))
        .unwrap_or(&FALLBACK_SPEC)
}

fn re(pattern: &str) -> Regex {
    Regex::new(pattern).expect("static pattern")
}

/// Line-level evidence that a snippet is written in a given language.
static EVIDENCE: LazyLock<Vec<(&'static str, Regex)>> = LazyLock::new(|| {
    vec![
        (
            "python",
            re(r"^\s*(?:(?:async\s+)?def\s+\w+\s*\(.*\)\s*(?:->.*)?:\s*$|class\s+\w+(?:\(.*\))?:\s*$|import\s+[\w.]+(?:\s+as\s+\w+)?\s*$|from\s+\.*[\w.]*\s+import\s|elif\s.*:\s*$|except(?:\s.*)?:\s*$|if\s+__name__\s*==)"),
        ),
        (
            "java",
            re(r"(?:^\s*package\s+[\w.]+;|^\s*import\s+(?:static\s+)?[\w.]+(?:\.\*)?;|\bpublic\s+(?:final\s+)?(?:abstract\s+)?class\s|System\.(?:out|err)\.print|\bpublic\s+static\s+void\s+main\s*\(\s*String)"),
        ),
        (
            "csharp",
            re(r"(?:^\s*using\s+[\w.]+;|^\s*namespace\s+[\w.]+\s*[{;]?\s*$|Console\.Write|\{\s*get;|\bpublic\s+(?:static\s+)?(?:async\s+)?(?:Task|void|string|int|bool)\s+[A-Z]\w*\s*\()"),
        ),
        (
            "cpp",
            re(r"(?:^\s*#\s*include\s*<(?:iostream|vector|string|map|memory|algorithm|unordered_map)>|std::|\bcout\s*<<|\btemplate\s*<|^\s*namespace\s+\w+\s*\{|\bclass\s+\w+\s*(?::\s*public\s+\w+)?\s*\{)"),
        ),
        (
            "c",
            re(r"(?:^\s*#\s*include\s*<(?:stdio|stdlib|string|unistd|stdint)\.h>|\bprintf\s*\(|\bmalloc\s*\(|\bint\s+main\s*\(\s*(?:void|int)|\bstruct\s+\w+\s*\{)"),
        ),
        (
            "javascript",
            re(r#"(?:\bconst\s+\w+\s*=|\blet\s+\w+\s*=|\bfunction\s*\w*\s*\(|=>\s*\{|\brequire\(['"]|console\.log\(|^\s*export\s+(?:default|const|function)|^\s*import\s.*\sfrom\s+['"])"#),
        ),
    ]
});

/// Pluggable language identification.
pub trait LanguageDetector: Send + Sync {
    fn detect(&self, rec: &DocumentRecord) -> Result<(String, f64), FilterError>;
}

/// Built-in detector: extension mapping, per-language keyword evidence and
/// printable-ASCII ratio.
#[derive(Debug, Clone, Copy, Default)]
pub struct FallbackDetector;

/// Natural-language documents below this confidence are labelled unknown.
const NATURAL_LANGUAGE_FLOOR: f64 = 0.5;

fn printable_ascii_ratio(content: &str) -> f64 {
    let mut total = 0usize;
    let mut printable = 0usize;
    for c in content.chars() {
        total += 1;
        if matches!(c, ' '..='~' | '\t' | '\n' | '\r') {
            printable += 1;
        }
    }
    if total == 0 {
        0.0
    } else {
        printable as f64 / total as f64
    }
}

/// Fraction of non-whitespace characters that sit in tokens of at most 20
/// characters. Prose scores high; packed garbage and blobs score low.
fn short_token_ratio(content: &str) -> f64 {
    let mut total = 0usize;
    let mut short = 0usize;
    for tok in content.split_whitespace() {
        let n = tok.chars().count();
        total += n;
        if n <= 20 {
            short += n;
        }
    }
    if total == 0 {
        0.0
    } else {
        short as f64 / total as f64
    }
}

/// Lines matching each language's evidence patterns, in table order.
fn evidence_counts(content: &str) -> Vec<(&'static str, usize)> {
    let mut counts: Vec<(&'static str, usize)> = EVIDENCE.iter().map(|(n, _)| (*n, 0)).collect();
    for line in content.lines() {
        for (i, (_, pat)) in EVIDENCE.iter().enumerate() {
            if pat.is_match(line) {
                counts[i].1 += 1;
            }
        }
    }
    counts
}

impl LanguageDetector for FallbackDetector {
    fn detect(&self, rec: &DocumentRecord) -> Result<(String, f64), FilterError> {
        if rec.content.is_empty() {
            return Err(FilterError::EmptyDocument(rec.id.clone()));
        }
        let ascii = printable_ascii_ratio(&rec.content);
        let evidence = evidence_counts(&rec.content);
        let total: usize = evidence.iter().map(|(_, c)| c).sum();
        let share_of = |name: &str| -> f64 {
            if total == 0 {
                1.0
            } else {
                evidence.iter().find(|(n, _)| *n == name).map_or(0, |(_, c)| *c) as f64 / total as f64
            }
        };

        if let Some(spec) = rec.extension().and_then(language_by_extension) {
            let conf = ascii * (0.9 + 0.1 * share_of(spec.name));
            return Ok((spec.name.to_string(), conf.clamp(0.0, 1.0)));
        }

        let non_blank = rec.content.lines().filter(|l| !l.trim().is_empty()).count().max(1);
        if total >= 2 && total * 20 >= non_blank {
            // Ties resolve to table order.
            let (best, best_count) = evidence
                .iter()
                .fold(("", 0usize), |acc, &(n, c)| if c > acc.1 { (n, c) } else { acc });
            let share = best_count as f64 / total as f64;
            let conf = ascii * (0.45 + 0.5 * share);
            return Ok((best.to_string(), conf.clamp(0.0, 1.0)));
        }

        let conf = (ascii * short_token_ratio(&rec.content)).clamp(0.0, 1.0);
        let label = if conf >= NATURAL_LANGUAGE_FLOOR { "english" } else { UNKNOWN };
        Ok((label.to_string(), conf))
    }
}

/// Detect with the built-in detector.
pub fn identify_language(rec: &DocumentRecord) -> Result<(String, f64), FilterError> {
    FallbackDetector.detect(rec)
}

/// Runs `detector` and stores the result on the record.
pub fn annotate_language(rec: &mut DocumentRecord, detector: &dyn LanguageDetector) -> Result<(), FilterError> {
    let (lang, conf) = detector.detect(rec)?;
    rec.language = lang;
    rec.language_confidence = conf;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RuleConfig {
    pub max_bytes: u64,
    pub allowed_extensions: BTreeSet<String>,
    pub min_language_confidence: f64,
    pub binary_nonprintable_threshold: f64,
}

impl Default for RuleConfig {
    fn default() -> Self {
        let exts = [
            "py", "pyi", "java", "cs", "cpp", "cc", "cxx", "hpp", "hh", "hxx", "c", "h", "js", "mjs", "cjs", "jsx",
            "md", "txt", "rst", "tex",
        ];
        Self {
            max_bytes: 1 << 20,
            allowed_extensions: exts.iter().map(|s| s.to_string()).collect(),
            min_language_confidence: 0.65,
            binary_nonprintable_threshold: 0.30,
        }
    }
}

impl RuleConfig {
    pub fn validate(&self) -> Result<(), FilterError> {
        if self.max_bytes == 0 {
            return Err(FilterError::ConfigError("filters.max_bytes must be > 0".into()));
        }
        for (k, v) in [
            ("filters.min_language_confidence", self.min_language_confidence),
            ("filters.binary_nonprintable_threshold", self.binary_nonprintable_threshold),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(FilterError::ConfigError(format!("{k} must be in [0,1]")));
            }
        }
        Ok(())
    }
}

fn nonprintable_fraction(content: &str) -> f64 {
    let mut total = 0usize;
    let mut bad = 0usize;
    for c in content.chars() {
        total += 1;
        if (c.is_control() && !matches!(c, '\t' | '\n' | '\r')) || c == '\u{FFFD}' {
            bad += 1;
        }
    }
    if total == 0 {
        0.0
    } else {
        bad as f64 / total as f64
    }
}

/// Size, extension, binary-content and language-confidence gates, in that
/// order. Records without a path skip the extension gate.
pub fn rule_filter(rec: &DocumentRecord, cfg: &RuleConfig) -> Decision {
    if rec.byte_len > cfg.max_bytes {
        return Decision::Reject("size".into());
    }
    if !rec.path.is_empty() {
        let allowed = rec
            .extension()
            .is_some_and(|e| cfg.allowed_extensions.contains(&e.to_ascii_lowercase()));
        if !allowed {
            return Decision::Reject("extension".into());
        }
    }
    if nonprintable_fraction(&rec.content) > cfg.binary_nonprintable_threshold {
        return Decision::Reject("binary".into());
    }
    if rec.language_confidence < cfg.min_language_confidence {
        return Decision::Reject("language".into());
    }
    Decision::Keep
}

static FUNCTION_DEFS: LazyLock<HashMap<&'static str, Regex>> = LazyLock::new(|| {
    HashMap::from([
        ("python", re(r"^\s*(?:async\s+)?def\s+\w+\s*\(")),
        (
            "javascript",
            re(r"(?:\bfunction\b\s*\*?\s*\w*\s*\(|^\s*(?:export\s+)?(?:const|let|var)\s+\w+\s*=\s*(?:async\s*)?(?:\([^)]*\)|\w+)\s*=>)"),
        ),
        (
            "java",
            re(r"^\s*(?:(?:public|private|protected|static|final|abstract|synchronized|native)\s+)+[\w<>\[\],.?]+\s+\w+\s*\([^;]*$"),
        ),
        (
            "csharp",
            re(r"^\s*(?:(?:public|private|protected|internal|static|virtual|override|abstract|async|sealed|extern|unsafe|partial|new)\s+)+[\w<>\[\],.?]+\s+\w+\s*\([^;]*$"),
        ),
        ("c", re(r"^[A-Za-z_][\w \t\*]*[ \t\*]\**[A-Za-z_]\w*\s*\([^;]*$")),
        ("cpp", re(r"^[A-Za-z_][\w \t\*&:<>,~]*[ \t\*&]+[\w:~]+\s*\([^;]*$")),
        (UNKNOWN, re(r"(?:^\s*(?:def|fn|func|function|sub|proc)\s+\w+|\bfunction\s*\()")),
    ])
});

const NOT_FUNCTIONS: [&str; 9] = ["if", "for", "while", "switch", "return", "else", "do", "typedef", "catch"];

fn is_function_def(spec: &LanguageSpec, line: &str) -> bool {
    let pat = FUNCTION_DEFS.get(spec.name).unwrap_or_else(|| &FUNCTION_DEFS[UNKNOWN]);
    if !pat.is_match(line) {
        return false;
    }
    let first = line.split(|c: char| !c.is_alphanumeric() && c != '_').find(|w| !w.is_empty());
    !first.is_some_and(|w| NOT_FUNCTIONS.contains(&w))
}

static PRINTY: LazyLock<Regex> = LazyLock::new(|| {
    re(r#"(?:(?i)\b(?:todo|fixme)\b)|\bprint(?:f|ln)?\s*\(|\bprint\s+["']|\bconsole\.(?:log|debug|info|warn|error)\s*\(|System\.(?:out|err)\.print|Console\.Write(?:Line)?\s*\(|\bputs\s*\(|\bcout\s*<<|\bfprintf\s*\("#)
});

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum LineKind {
    Blank,
    Comment,
    Code { trailing_comment: bool },
}

/// Index of the first comment marker outside a quoted span, if any.
fn comment_start(line: &str, markers: &[&str]) -> Option<usize> {
    let bytes = line.as_bytes();
    let mut quote: Option<u8> = None;
    let mut i = 0;
    while i < bytes.len() {
        let b = bytes[i];
        match quote {
            Some(q) => {
                if b == b'\\' {
                    i += 1;
                } else if b == q {
                    quote = None;
                }
            }
            None => {
                if b == b'"' || b == b'\'' {
                    // Only treat as a string if it closes on this line.
                    if closing_quote(&bytes[i + 1..], b).is_some() {
                        quote = Some(b);
                    }
                } else if markers.iter().any(|m| bytes[i..].starts_with(m.as_bytes())) {
                    return Some(i);
                }
            }
        }
        i += 1;
    }
    None
}

fn closing_quote(rest: &[u8], q: u8) -> Option<usize> {
    let mut i = 0;
    while i < rest.len() {
        if rest[i] == b'\\' {
            i += 2;
            continue;
        }
        if rest[i] == q {
            return Some(i);
        }
        i += 1;
    }
    None
}

fn classify_lines<'a>(spec: &LanguageSpec, content: &'a str) -> Vec<(&'a str, LineKind)> {
    let mut markers: Vec<&str> = spec.line_comments.to_vec();
    if let Some((open, _)) = spec.block_comment {
        markers.push(open);
    }
    let mut out = Vec::new();
    let mut in_block: Option<&str> = None;
    for line in content.lines() {
        let t = line.trim();
        if let Some(close) = in_block {
            if t.contains(close) {
                in_block = None;
            }
            out.push((line, if t.is_empty() { LineKind::Blank } else { LineKind::Comment }));
            continue;
        }
        if t.is_empty() {
            out.push((line, LineKind::Blank));
            continue;
        }
        if spec.docstrings {
            if let Some(delim) = ["\"\"\"", "'''"].into_iter().find(|d| {
                t.starts_with(d) || (t.len() > 1 && matches!(t.as_bytes()[0], b'r' | b'b' | b'u') && t[1..].starts_with(d))
            }) {
                if t.matches(delim).count() % 2 == 1 {
                    in_block = Some(delim);
                }
                out.push((line, LineKind::Comment));
                continue;
            }
        }
        if spec.line_comments.iter().any(|m| t.starts_with(m)) {
            out.push((line, LineKind::Comment));
            continue;
        }
        if let Some((open, close)) = spec.block_comment {
            if let Some(rest) = t.strip_prefix(open) {
                if !rest.contains(close) {
                    in_block = Some(close);
                }
                out.push((line, LineKind::Comment));
                continue;
            }
        }
        let trailing = comment_start(line, &markers);
        if let (Some(i), Some((open, close))) = (trailing, spec.block_comment) {
            if line[i..].starts_with(open) && !line[i + open.len()..].contains(close) {
                in_block = Some(close);
            }
        }
        out.push((line, LineKind::Code { trailing_comment: trailing.is_some() }));
    }
    out
}

/// Characters strictly inside same-line balanced quote pairs.
fn quoted_chars(content: &str) -> usize {
    let mut count = 0;
    for line in content.lines() {
        let bytes = line.as_bytes();
        let mut i = 0;
        while i < bytes.len() {
            let b = bytes[i];
            if b == b'"' || b == b'\'' {
                if let Some(off) = closing_quote(&bytes[i + 1..], b) {
                    let inner = &line[i + 1..i + 1 + off];
                    count += inner.chars().count();
                    i += off + 2;
                    continue;
                }
            }
            i += 1;
        }
    }
    count
}

const ENCODED_RUN: usize = 64;

fn is_base64_char(c: char) -> bool {
    c.is_ascii_alphanumeric() || matches!(c, '+' | '/' | '=')
}

/// Characters inside runs of at least 64 base64-alphabet characters.
fn encoded_chars(content: &str) -> usize {
    let mut count = 0;
    let mut run = 0;
    for c in content.chars() {
        if is_base64_char(c) {
            run += 1;
        } else {
            if run >= ENCODED_RUN {
                count += run;
            }
            run = 0;
        }
    }
    if run >= ENCODED_RUN {
        count += run;
    }
    count
}

/// Repeated occurrences of word 5-grams over all word 5-grams.
fn duplicate_gram_fraction(content: &str) -> f64 {
    let words: Vec<&str> = content.split_whitespace().collect();
    if words.len() < 5 {
        return 0.0;
    }
    let total = words.len() - 4;
    let unique: std::collections::HashSet<&[&str]> = words.windows(5).collect();
    (total - unique.len()) as f64 / total as f64
}

fn is_documented(spec: &LanguageSpec, lines: &[(&str, LineKind)], def_idx: usize) -> bool {
    if spec.docstrings {
        let next = lines[def_idx + 1..].iter().find(|(_, k)| *k != LineKind::Blank);
        return next.is_some_and(|(l, k)| {
            let t = l.trim_start();
            *k == LineKind::Comment && (t.contains("\"\"\"") || t.contains("'''"))
        });
    }
    // Skip annotations / attributes between the comment and the definition.
    let prev = lines[..def_idx].iter().rev().find(|(l, k)| {
        let t = l.trim_start();
        *k != LineKind::Blank && !t.starts_with('@') && !(t.starts_with('[') && t.ends_with(']'))
    });
    prev.is_some_and(|(_, k)| *k == LineKind::Comment)
}

/// Structural and documentation statistics; see the field list of
/// [`SignalVector`]. All character counts are in Unicode scalar values.
///
/// - `alnum_ratio`, `whitespace_ratio`: matching chars / total chars
/// - `quoted_fraction`: chars inside same-line balanced `'`/`"` pairs / total
/// - `encoded_data_pct`: chars in runs of >= 64 base64-alphabet chars / total
/// - `duplicate_gram_fraction`: repeated word 5-gram occurrences / all 5-grams
/// - `lines_per_function`: non-blank lines / max(1, function definitions)
/// - `printy_stmt_pct`: lines with a print-like call or TODO/FIXME / non-blank lines
/// - `char_token_ratio`: byte_len / est_tokens
/// - `comment_code_ratio`: full-line comment lines / max(1, code lines)
/// - `docstring_density`: documented definitions / max(1, definitions)
/// - `inline_explanation_freq`: code lines with a trailing comment per 100 non-blank lines
pub fn compute_signals(rec: &DocumentRecord) -> Result<SignalVector, FilterError> {
    let content = &rec.content;
    if content.is_empty() {
        return Err(FilterError::EmptyDocument(rec.id.clone()));
    }
    let spec = spec_for(rec);

    let mut total = 0usize;
    let mut alnum = 0usize;
    let mut space = 0usize;
    for c in content.chars() {
        total += 1;
        if c.is_alphanumeric() {
            alnum += 1;
        } else if c.is_whitespace() {
            space += 1;
        }
    }
    let total_f = total as f64;

    let lines = classify_lines(spec, content);
    let non_blank = lines.iter().filter(|(_, k)| *k != LineKind::Blank).count();
    let comment_lines = lines.iter().filter(|(_, k)| *k == LineKind::Comment).count();
    let code_lines = lines.iter().filter(|(_, k)| matches!(k, LineKind::Code { .. })).count();
    let trailing = lines
        .iter()
        .filter(|(_, k)| matches!(k, LineKind::Code { trailing_comment: true }))
        .count();
    let printy = lines
        .iter()
        .filter(|(l, k)| *k != LineKind::Blank && PRINTY.is_match(l))
        .count();

    let defs: Vec<usize> = lines
        .iter()
        .enumerate()
        .filter(|(_, (l, k))| matches!(k, LineKind::Code { .. }) && is_function_def(spec, l))
        .map(|(i, _)| i)
        .collect();
    let documented = defs.iter().filter(|&&i| is_documented(spec, &lines, i)).count();

    let per_line = |n: usize| if non_blank == 0 { 0.0 } else { n as f64 / non_blank as f64 };

    Ok(SignalVector {
        alnum_ratio: alnum as f64 / total_f,
        quoted_fraction: (quoted_chars(content) as f64 / total_f).min(1.0),
        encoded_data_pct: encoded_chars(content) as f64 / total_f,
        duplicate_gram_fraction: duplicate_gram_fraction(content),
        lines_per_function: non_blank as f64 / defs.len().max(1) as f64,
        whitespace_ratio: space as f64 / total_f,
        printy_stmt_pct: per_line(printy),
        char_token_ratio: rec.byte_len as f64 / rec.est_tokens.max(1) as f64,
        comment_code_ratio: comment_lines as f64 / code_lines.max(1) as f64,
        docstring_density: documented as f64 / defs.len().max(1) as f64,
        inline_explanation_freq: 100.0 * per_line(trailing),
    })
}

/// Name under which `external_score` participates in bucket weights.
pub const EXTERNAL_SCORE: &str = "external_score";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BucketThresholds {
    pub high_percentile: f64,
    pub low_percentile: f64,
    pub weights: BTreeMap<String, f64>,
    /// Bucket each detected language separately instead of globally.
    pub per_language: bool,
}

impl Default for BucketThresholds {
    fn default() -> Self {
        let weights = [
            ("alnum_ratio", 1.0),
            ("quoted_fraction", -1.0),
            ("encoded_data_pct", -1.0),
            ("duplicate_gram_fraction", -1.0),
            ("lines_per_function", -1.0),
            ("whitespace_ratio", -1.0),
            ("printy_stmt_pct", -1.0),
            ("char_token_ratio", 1.0),
            ("comment_code_ratio", 1.0),
            ("docstring_density", 1.0),
            ("inline_explanation_freq", 1.0),
        ];
        Self {
            high_percentile: 0.80,
            low_percentile: 0.20,
            weights: weights.iter().map(|(k, v)| (k.to_string(), *v)).collect(),
            per_language: false,
        }
    }
}

impl BucketThresholds {
    pub fn validate(&self) -> Result<(), FilterError> {
        let (lo, hi) = (self.low_percentile, self.high_percentile);
        if !(0.0 < lo && lo < hi && hi < 1.0) {
            return Err(FilterError::ConfigError(
                "need 0 < buckets.low_percentile < buckets.high_percentile < 1".into(),
            ));
        }
        if self.weights.is_empty() {
            return Err(FilterError::ConfigError("buckets.weights is empty".into()));
        }
        for (name, w) in &self.weights {
            if name != EXTERNAL_SCORE && !SignalVector::NAMES.contains(&name.as_str()) {
                return Err(FilterError::ConfigError(format!("unknown signal buckets.weights.{name}")));
            }
            if !w.is_finite() {
                return Err(FilterError::ConfigError(format!("buckets.weights.{name} is not finite")));
            }
        }
        Ok(())
    }
}

/// Weighted sum of min-max normalized signals, bounds taken over `items`.
/// A signal that is constant over the corpus contributes nothing. A missing
/// external score counts as the corpus minimum.
pub fn composite_scores(items: &[(SignalVector, Option<f64>)], weights: &BTreeMap<String, f64>) -> Vec<f64> {
    let mut scores = vec![0.0; items.len()];
    for (name, &w) in weights {
        let values: Vec<Option<f64>> = items
            .iter()
            .map(|(s, ext)| if name == EXTERNAL_SCORE { *ext } else { s.get(name) })
            .collect();
        let present = values.iter().flatten();
        let lo = present.clone().fold(f64::INFINITY, |a, &b| a.min(b));
        let hi = present.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        if hi <= lo {
            continue;
        }
        for (score, v) in scores.iter_mut().zip(&values) {
            let v = v.unwrap_or(lo);
            *score += w * (v - lo) / (hi - lo);
        }
    }
    scores
}

/// Nearest-rank quantile buckets over composite scores.
///
/// With scores sorted ascending as `s[0..n]`, a record is High when its score
/// is strictly greater than `s[ceil(high*n) - 1]` and Low when strictly less
/// than `s[floor(low*n)]`. For distinct scores that gives
/// `n - ceil(high*n)` High and `floor(low*n)` Low records; ties at a
/// threshold and all-identical corpora fall into Medium.
pub fn buckets_from_scores(scores: &[f64], th: &BucketThresholds) -> Vec<QualityBucket> {
    let n = scores.len();
    if n == 0 {
        return Vec::new();
    }
    let mut sorted = scores.to_vec();
    sorted.sort_by(f64::total_cmp);
    const EPS: f64 = 1e-9;
    let hi_idx = ((th.high_percentile * n as f64 - EPS).ceil() as usize).clamp(1, n) - 1;
    let lo_idx = ((th.low_percentile * n as f64 + EPS).floor() as usize).min(n - 1);
    let (hi_cut, lo_cut) = (sorted[hi_idx], sorted[lo_idx]);
    scores
        .iter()
        .map(|&s| {
            if s > hi_cut {
                QualityBucket::High
            } else if s < lo_cut {
                QualityBucket::Low
            } else {
                QualityBucket::Medium
            }
        })
        .collect()
}

pub fn bucket_quality(signals: &[SignalVector], th: &BucketThresholds) -> Result<Vec<QualityBucket>, FilterError> {
    let items: Vec<_> = signals.iter().map(|s| (*s, None)).collect();
    bucket_quality_scored(&items, th)
}

/// Buckets with optional externally supplied scores alongside the signals.
pub fn bucket_quality_scored(
    items: &[(SignalVector, Option<f64>)],
    th: &BucketThresholds,
) -> Result<Vec<QualityBucket>, FilterError> {
    if items.is_empty() {
        return Err(FilterError::EmptyCorpus);
    }
    th.validate()?;
    let scores = composite_scores(items, &th.weights);
    Ok(buckets_from_scores(&scores, th))
}

/// Assigns `quality_bucket` to every record carrying signals, globally or per
/// language depending on `th.per_language`.
pub fn bucket_records(records: &mut [DocumentRecord], th: &BucketThresholds) -> Result<(), FilterError> {
    let mut groups: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, r) in records.iter().enumerate() {
        if r.signals.is_some() {
            let key = if th.per_language { r.language.as_str() } else { "" };
            groups.entry(key).or_default().push(i);
        }
    }
    let assignments: Vec<(usize, QualityBucket)> = groups
        .into_values()
        .map(|idx| {
            let items: Vec<_> = idx
                .iter()
                .map(|&i| (records[i].signals.expect("grouped on signals"), records[i].external_score))
                .collect();
            bucket_quality_scored(&items, th).map(|b| idx.into_iter().zip(b).collect::<Vec<_>>())
        })
        .collect::<Result<Vec<_>, _>>()?
        .into_iter()
        .flatten()
        .collect();
    for (i, b) in assignments {
        records[i].quality_bucket = Some(b);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Modality;

    fn code(path: &str, content: &str) -> DocumentRecord {
        DocumentRecord::new("t", Modality::Code, content).with_path(path)
    }

    const PY: &str = "import os\n\ndef main():\n    \"\"\"Entry point.\"\"\"\n    print(os.getcwd())\n\nif __name__ == \"__main__\":\n    main()\n";

    #[test]
    fn python_extension_dominates() {
        let (lang, conf) = identify_language(&code("a.py", PY)).unwrap();
        assert_eq!(lang, "python");
        assert!(conf >= 0.9, "{conf}");
    }

    #[test]
    fn random_bytes_are_unknown() {
        let mut state = 12345u64;
        let noise: String = (0..2000)
            .map(|_| {
                state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                char::from((state >> 56) as u8)
            })
            .collect();
        let (lang, conf) = identify_language(&DocumentRecord::new("n", Modality::Text, noise)).unwrap();
        assert_eq!(lang, "unknown");
        assert!(conf < RuleConfig::default().min_language_confidence, "{conf}");
    }

    #[test]
    fn mixed_language_file_scores_lower() {
        let js = "const fs = require('fs');\nfunction read(p) {\n  console.log(p);\n}\nlet x = 1;\n";
        let (_, single) = identify_language(&code("a.py", PY)).unwrap();
        let (lang, mixed) = identify_language(&code("a.py", &format!("{PY}{js}"))).unwrap();
        assert_eq!(lang, "python");
        assert!(mixed < single, "{mixed} !< {single}");
    }

    #[test]
    fn code_without_extension_uses_evidence() {
        let (lang, conf) = identify_language(&DocumentRecord::new("x", Modality::Code, PY)).unwrap();
        assert_eq!(lang, "python");
        assert!(conf > 0.65);
    }

    #[test]
    fn english_prose_is_detected() {
        let text = "The quick brown fox jumps over the lazy dog. It was a bright cold day in April.";
        let (lang, conf) = identify_language(&DocumentRecord::new("x", Modality::Text, text)).unwrap();
        assert_eq!(lang, "english");
        assert!(conf > 0.9);
    }

    #[test]
    fn empty_document_errors() {
        let rec = DocumentRecord::new("e", Modality::Text, "");
        assert_eq!(identify_language(&rec), Err(FilterError::EmptyDocument("e".into())));
        assert_eq!(compute_signals(&rec), Err(FilterError::EmptyDocument("e".into())));
    }

    fn confident(mut r: DocumentRecord, conf: f64) -> DocumentRecord {
        r.language_confidence = conf;
        r
    }

    #[test]
    fn rule_filter_examples() {
        let cfg = RuleConfig::default();
        let big = confident(code("big.py", &"x".repeat(2 << 20)), 0.95);
        assert_eq!(rule_filter(&big, &cfg), Decision::Reject("size".into()));

        let exe = confident(code("tool.exe", "MZ"), 0.95);
        assert_eq!(rule_filter(&exe, &cfg), Decision::Reject("extension".into()));

        let ok = confident(code("a.py", PY), 0.95);
        assert_eq!(rule_filter(&ok, &cfg), Decision::Keep);

        let shaky = confident(code("a.py", PY), 0.4);
        assert_eq!(rule_filter(&shaky, &cfg), Decision::Reject("language".into()));

        let bin = confident(code("a.py", "\u{0}\u{1}\u{2}ab"), 0.95);
        assert_eq!(rule_filter(&bin, &cfg), Decision::Reject("binary".into()));

        let text = confident(DocumentRecord::new("t", Modality::Text, "plain words"), 0.9);
        assert_eq!(rule_filter(&text, &cfg), Decision::Keep);
    }

    #[test]
    fn rule_config_validation() {
        assert!(RuleConfig::default().validate().is_ok());
        let bad = RuleConfig { max_bytes: 0, ..RuleConfig::default() };
        assert!(bad.validate().is_err());
        let bad = RuleConfig { min_language_confidence: 1.5, ..RuleConfig::default() };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn alnum_ratio_example() {
        let s = compute_signals(&DocumentRecord::new("a", Modality::Text, "abc 123!")).unwrap();
        assert_eq!(s.alnum_ratio, 0.75);
        assert_eq!(s.whitespace_ratio, 0.125);
    }

    #[test]
    fn comment_code_ratio_example() {
        let mut src = String::from("# one\n# two\n");
        for i in 0..8 {
            src.push_str(&format!("x{i} = {i}\n"));
        }
        let s = compute_signals(&code("a.py", &src)).unwrap();
        assert_eq!(s.comment_code_ratio, 0.25);
    }

    #[test]
    fn base64_run_is_fully_encoded() {
        let run: String = "QUJDRA==".repeat(16);
        assert_eq!(run.len(), 128);
        let s = compute_signals(&DocumentRecord::new("b", Modality::Text, run)).unwrap();
        assert_eq!(s.encoded_data_pct, 1.0);
        let short = compute_signals(&DocumentRecord::new("b", Modality::Text, "QUJD".repeat(15))).unwrap();
        assert_eq!(short.encoded_data_pct, 0.0);
    }

    #[test]
    fn quoted_fraction_counts_inner_chars() {
        // 'abc' and "de": 5 inner chars of 13.
        let s = compute_signals(&DocumentRecord::new("q", Modality::Text, "x='abc'+\"de\"")).unwrap();
        assert!((s.quoted_fraction - 5.0 / 12.0).abs() < 1e-12);
    }

    #[test]
    fn duplicate_grams() {
        assert_eq!(duplicate_gram_fraction("a b c d e a b c d e"), 1.0 / 6.0);
        assert_eq!(duplicate_gram_fraction("a b c"), 0.0);
        assert_eq!(duplicate_gram_fraction("a a a a a a"), 0.5);
    }

    #[test]
    fn python_function_and_docstring_signals() {
        let src = "def a():\n    \"\"\"Doc.\"\"\"\n    return 1  # one\n\ndef b():\n    print('b')  # TODO tidy\n";
        let s = compute_signals(&code("m.py", src)).unwrap();
        // 5 non-blank lines over 2 definitions.
        assert_eq!(s.lines_per_function, 2.5);
        assert_eq!(s.docstring_density, 0.5);
        assert_eq!(s.printy_stmt_pct, 1.0 / 5.0);
        assert_eq!(s.inline_explanation_freq, 40.0);
    }

    #[test]
    fn c_family_documentation() {
        let src = "/**\n * Adds.\n */\nint add(int a, int b) {\n    return a + b; // sum\n}\n\nint sub(int a, int b) {\n    printf(\"%d\", a);\n    return a - b;\n}\n";
        let mut rec = code("m.c", src);
        rec.language = "c".into();
        let s = compute_signals(&rec).unwrap();
        assert_eq!(s.docstring_density, 0.5);
        assert_eq!(s.comment_code_ratio, 3.0 / 7.0);
        assert!(s.is_valid());
    }

    #[test]
    fn url_in_string_is_not_a_trailing_comment() {
        let src = "const u = \"http://example.com\";\n";
        let s = compute_signals(&code("a.js", src)).unwrap();
        assert_eq!(s.inline_explanation_freq, 0.0);
    }

    fn with_alnum(v: f64) -> SignalVector {
        SignalVector {
            alnum_ratio: v,
            char_token_ratio: 4.0,
            ..SignalVector::default()
        }
    }

    #[test]
    fn ten_strict_scores_give_two_six_two() {
        let sigs: Vec<_> = (0..10).map(|i| with_alnum(i as f64 / 10.0)).collect();
        let b = bucket_quality(&sigs, &BucketThresholds::default()).unwrap();
        let count = |q| b.iter().filter(|&&x| x == q).count();
        assert_eq!(count(QualityBucket::High), 2);
        assert_eq!(count(QualityBucket::Low), 2);
        assert_eq!(count(QualityBucket::Medium), 6);
        assert_eq!(b[0], QualityBucket::Low);
        assert_eq!(b[9], QualityBucket::High);
    }

    #[test]
    fn degenerate_corpora_are_medium() {
        let th = BucketThresholds::default();
        assert_eq!(bucket_quality(&[with_alnum(0.3)], &th).unwrap(), vec![QualityBucket::Medium]);
        let same = vec![with_alnum(0.3); 7];
        assert!(bucket_quality(&same, &th)
            .unwrap()
            .iter()
            .all(|&b| b == QualityBucket::Medium));
        assert_eq!(bucket_quality(&[], &th), Err(FilterError::EmptyCorpus));
    }

    #[test]
    fn threshold_validation() {
        let bad = BucketThresholds { low_percentile: 0.9, ..BucketThresholds::default() };
        assert!(bad.validate().is_err());
        let mut bad = BucketThresholds::default();
        bad.weights.insert("nonsense".into(), 1.0);
        assert!(bad.validate().is_err());
    }

    #[test]
    fn external_score_can_drive_buckets() {
        let th = BucketThresholds {
            weights: BTreeMap::from([(EXTERNAL_SCORE.to_string(), 1.0)]),
            ..BucketThresholds::default()
        };
        let items: Vec<_> = (0..10).map(|i| (SignalVector::default(), Some(i as f64 / 10.0))).collect();
        let b = bucket_quality_scored(&items, &th).unwrap();
        assert_eq!(b[9], QualityBucket::High);
        assert_eq!(b[0], QualityBucket::Low);
    }

    #[test]
    fn per_language_bucketing_groups() {
        let th = BucketThresholds { per_language: true, ..BucketThresholds::default() };
        let mut recs: Vec<DocumentRecord> = (0..20)
            .map(|i| {
                let mut r = DocumentRecord::new(format!("r{i}"), Modality::Code, "x");
                r.language = if i < 10 { "python".into() } else { "c".into() };
                r.signals = Some(with_alnum((i % 10) as f64));
                r
            })
            .collect();
        bucket_records(&mut recs, &th).unwrap();
        let highs: Vec<_> = recs
            .iter()
            .filter(|r| r.quality_bucket == Some(QualityBucket::High))
            .map(|r| r.id.as_str())
            .collect();
        assert_eq!(highs, ["r8", "r9", "r18", "r19"]);
    }
}
