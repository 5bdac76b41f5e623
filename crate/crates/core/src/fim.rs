//! Fill-in-the-middle rewriting.
//!
//! A document is cut at two character offsets `i <= j` into prefix, middle
//! and suffix, then laid out with sentinel strings so the middle comes last:
//!
//! - PSM: `<prefix-sentinel> prefix <suffix-sentinel> suffix <middle-sentinel> middle`
//! - SPM: `<prefix-sentinel> <suffix-sentinel> suffix <middle-sentinel> prefix middle`
//!
//! Selection and cut points depend only on `(seed, record id)`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{DocumentRecord, TokenCounter};
use crate::hashing::{derive_seed, unit_f64};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum FimError {
    #[error("document has {len} characters, fewer than the minimum {min}")]
    NotTransformable { len: usize, min: usize },
    #[error("content contains the sentinel {0:?}")]
    SentinelCollision(String),
    #[error("input is not a well-formed FIM rewrite")]
    MalformedFim,
    #[error("invalid FIM configuration: {0}")]
    ConfigError(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum FimMode {
    Psm,
    Spm,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Sentinels {
    pub prefix: String,
    pub suffix: String,
    pub middle: String,
}

impl Default for Sentinels {
    fn default() -> Self {
        Self {
            prefix: "<fim_prefix>".into(),
            suffix: "<fim_suffix>".into(),
            middle: "<fim_middle>".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FimParams {
    pub rate: f64,
    pub sentinels: Sentinels,
    pub mode: FimMode,
    pub seed: u64,
    pub min_chars: usize,
    /// Cut only at line starts instead of arbitrary characters.
    pub line_mode: bool,
}

impl Default for FimParams {
    fn default() -> Self {
        Self {
            rate: 0.25,
            sentinels: Sentinels::default(),
            mode: FimMode::Psm,
            seed: 42,
            min_chars: 3,
            line_mode: false,
        }
    }
}

impl FimParams {
    pub fn validate(&self) -> Result<(), FimError> {
        if !(0.0..=1.0).contains(&self.rate) {
            return Err(FimError::ConfigError("fim.rate must be in [0,1]".into()));
        }
        let s = &self.sentinels;
        let all = [&s.prefix, &s.suffix, &s.middle];
        if all.iter().any(|x| x.is_empty()) {
            return Err(FimError::ConfigError("fim.sentinels must be non-empty".into()));
        }
        // Distinct and none inside another, so the first occurrence parses.
        for (a, x) in all.iter().enumerate() {
            for (b, y) in all.iter().enumerate() {
                if a != b && x.contains(y.as_str()) {
                    return Err(FimError::ConfigError(format!("sentinel {x:?} contains {y:?}")));
                }
            }
        }
        Ok(())
    }

    fn total_sentinel_len(&self) -> usize {
        self.sentinels.prefix.len() + self.sentinels.suffix.len() + self.sentinels.middle.len()
    }
}

/// Cut points in characters: `prefix = [0, start)`, `middle = [start, end)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CutPoints {
    pub start: usize,
    pub end: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FimExample {
    pub id: String,
    pub cut: CutPoints,
    pub rewritten: String,
}

fn cut_rng(seed: u64, id: &str) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(seed, "fim-cut", id))
}

/// Two uniform draws over `0..=len`, sorted. Deterministic in `(seed, id)`.
pub fn split_document(content: &str, id: &str, seed: u64, min_chars: usize) -> Result<CutPoints, FimError> {
    let len = content.chars().count();
    if len < min_chars.max(1) {
        return Err(FimError::NotTransformable { len, min: min_chars });
    }
    let mut rng = cut_rng(seed, id);
    let a = rng.random_range(0..=len);
    let b = rng.random_range(0..=len);
    Ok(CutPoints {
        start: a.min(b),
        end: a.max(b),
    })
}

/// Like [`split_document`] but both cuts land on line starts (or the end).
pub fn split_document_lines(content: &str, id: &str, seed: u64, min_chars: usize) -> Result<CutPoints, FimError> {
    let len = content.chars().count();
    if len < min_chars.max(1) {
        return Err(FimError::NotTransformable { len, min: min_chars });
    }
    let mut offsets = vec![0];
    for (ci, c) in content.chars().enumerate() {
        if c == '\n' && ci + 1 < len {
            offsets.push(ci + 1);
        }
    }
    offsets.push(len);
    let mut rng = cut_rng(seed, id);
    let a = offsets[rng.random_range(0..offsets.len())];
    let b = offsets[rng.random_range(0..offsets.len())];
    Ok(CutPoints {
        start: a.min(b),
        end: a.max(b),
    })
}

fn byte_offset(content: &str, chars: usize) -> usize {
    content.char_indices().nth(chars).map_or(content.len(), |(b, _)| b)
}

fn check_collision(content: &str, p: &FimParams) -> Result<(), FimError> {
    let s = &p.sentinels;
    for sent in [&s.prefix, &s.suffix, &s.middle] {
        if content.contains(sent.as_str()) {
            return Err(FimError::SentinelCollision(sent.clone()));
        }
    }
    Ok(())
}

pub fn apply_fim(content: &str, cut: CutPoints, p: &FimParams) -> Result<String, FimError> {
    check_collision(content, p)?;
    let len = content.chars().count();
    if cut.start > cut.end || cut.end > len {
        return Err(FimError::ConfigError(format!(
            "cut points ({}, {}) invalid for length {len}",
            cut.start, cut.end
        )));
    }
    let i = byte_offset(content, cut.start);
    let j = byte_offset(content, cut.end);
    let (prefix, middle, suffix) = (&content[..i], &content[i..j], &content[j..]);
    let s = &p.sentinels;
    let mut out = String::with_capacity(content.len() + p.total_sentinel_len());
    match p.mode {
        FimMode::Psm => {
            for part in [&s.prefix, prefix, &s.suffix, suffix, &s.middle, middle] {
                out.push_str(part);
            }
        }
        FimMode::Spm => {
            for part in [&s.prefix, &s.suffix, suffix, &s.middle, prefix, middle] {
                out.push_str(part);
            }
        }
    }
    // Custom sentinels can overlap content across a cut and parse ambiguously.
    if invert_fim(&out, p).as_deref() != Ok(content) {
        return Err(FimError::SentinelCollision(s.prefix.clone()));
    }
    Ok(out)
}

/// Reassembles the source document from a rewrite produced with `p`.
pub fn invert_fim(rewritten: &str, p: &FimParams) -> Result<String, FimError> {
    let s = &p.sentinels;
    let rest = rewritten.strip_prefix(s.prefix.as_str()).ok_or(FimError::MalformedFim)?;
    let out = match p.mode {
        FimMode::Psm => {
            let (prefix, rest) = rest.split_once(s.suffix.as_str()).ok_or(FimError::MalformedFim)?;
            let (suffix, middle) = rest.split_once(s.middle.as_str()).ok_or(FimError::MalformedFim)?;
            [prefix, middle, suffix].concat()
        }
        FimMode::Spm => {
            let rest = rest.strip_prefix(s.suffix.as_str()).ok_or(FimError::MalformedFim)?;
            let (suffix, prefix_middle) = rest.split_once(s.middle.as_str()).ok_or(FimError::MalformedFim)?;
            [prefix_middle, suffix].concat()
        }
    };
    check_collision(&out, p).map_err(|_| FimError::MalformedFim)?;
    Ok(out)
}

/// Seeded Bernoulli(rate) selection for one record id.
pub fn is_selected(id: &str, p: &FimParams) -> bool {
    unit_f64(derive_seed(p.seed, "fim-coin", id)) < p.rate
}

/// The FIM example for a record, if it is selected.
pub fn fim_example(rec: &DocumentRecord, p: &FimParams) -> Result<Option<FimExample>, FimError> {
    if !is_selected(&rec.id, p) {
        return Ok(None);
    }
    let cut = if p.line_mode {
        split_document_lines(&rec.content, &rec.id, p.seed, p.min_chars)?
    } else {
        split_document(&rec.content, &rec.id, p.seed, p.min_chars)?
    };
    let rewritten = apply_fim(&rec.content, cut, p)?;
    Ok(Some(FimExample {
        id: rec.id.clone(),
        cut,
        rewritten,
    }))
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct FimStats {
    pub records: usize,
    pub selected: usize,
    pub transformed: usize,
    pub too_short: usize,
    pub collisions: usize,
}

/// Rewrites the selected records in place. Selected records that are too
/// short pass through flagged `fim:too-short`; those containing a sentinel
/// pass through flagged `fim:sentinel-collision`.
pub fn transform_stream(
    records: Vec<DocumentRecord>,
    p: &FimParams,
    counter: &dyn TokenCounter,
) -> (Vec<DocumentRecord>, FimStats) {
    let mut stats = FimStats::default();
    let out = records
        .into_iter()
        .map(|mut rec| {
            stats.records += 1;
            match fim_example(&rec, p) {
                Ok(None) => {}
                Ok(Some(ex)) => {
                    stats.selected += 1;
                    stats.transformed += 1;
                    rec.set_content(ex.rewritten, counter);
                    rec.flags.insert(match p.mode {
                        FimMode::Psm => "fim:psm".into(),
                        FimMode::Spm => "fim:spm".into(),
                    });
                }
                Err(FimError::NotTransformable { .. }) => {
                    stats.selected += 1;
                    stats.too_short += 1;
                    rec.flags.insert("fim:too-short".into());
                }
                Err(_) => {
                    stats.selected += 1;
                    stats.collisions += 1;
                    rec.flags.insert("fim:sentinel-collision".into());
                }
            }
            rec
        })
        .collect();
    (out, stats)
}
