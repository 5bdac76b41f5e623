//! Word n-gram contamination detection against benchmark suites.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fs;
use std::io;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::DocumentRecord;
use crate::hashing::hash_str;

#[derive(Debug, Error)]
pub enum DecontamError {
    #[error("metric {0} is undefined for this labeled set")]
    UndefinedMetric(&'static str),
    #[error("invalid decontamination configuration: {0}")]
    ConfigError(String),
    #[error("reading suite {path}: {source}")]
    Suite {
        path: String,
        #[source]
        source: io::Error,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DecontamParams {
    pub ngram_n: usize,
    pub fuzzy_jaccard: f64,
    pub min_hits: usize,
    /// Directories of benchmark items, one item per file.
    pub suites: Vec<String>,
}

impl Default for DecontamParams {
    fn default() -> Self {
        Self {
            ngram_n: 8,
            fuzzy_jaccard: 0.6,
            min_hits: 1,
            suites: Vec::new(),
        }
    }
}

impl DecontamParams {
    pub fn validate(&self) -> Result<(), DecontamError> {
        if self.ngram_n < 3 {
            return Err(DecontamError::ConfigError("decontam.ngram_n must be >= 3".into()));
        }
        if !(self.fuzzy_jaccard > 0.0 && self.fuzzy_jaccard <= 1.0) {
            return Err(DecontamError::ConfigError("decontam.fuzzy_jaccard must be in (0,1]".into()));
        }
        if self.min_hits == 0 {
            return Err(DecontamError::ConfigError("decontam.min_hits must be >= 1".into()));
        }
        Ok(())
    }
}

/// Lowercased whitespace tokens that contain at least one alphanumeric char.
pub fn normalize_tokens(text: &str) -> Vec<String> {
    text.split_whitespace()
        .filter(|t| t.chars().any(char::is_alphanumeric))
        .map(str::to_lowercase)
        .collect()
}

pub fn normalize(text: &str) -> String {
    normalize_tokens(text).join(" ")
}

/// Hashed word n-grams. Texts shorter than `n` words give one whole-text gram;
/// texts with no words give none.
pub fn ngram_set(text: &str, n: usize) -> HashSet<u64> {
    let toks = normalize_tokens(text);
    if toks.is_empty() {
        return HashSet::new();
    }
    let n = n.min(toks.len());
    toks.windows(n).map(|w| hash_str(&w.join(" "))).collect()
}

#[derive(Debug, Clone)]
pub struct BenchmarkIndex {
    pub suite_name: String,
    /// gram -> indices of the items containing it.
    pub ngrams: HashMap<u64, Vec<usize>>,
    pub items: Vec<(String, HashSet<u64>)>,
    pub ngram_n: usize,
}

impl BenchmarkIndex {
    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn contains(&self, gram: u64) -> bool {
        self.ngrams.contains_key(&gram)
    }
}

/// Index `(item_id, text)` pairs of one suite.
pub fn build_benchmark_index<S: AsRef<str>>(suite_name: &str, items: &[(S, S)], p: &DecontamParams) -> BenchmarkIndex {
    let mut ngrams: HashMap<u64, Vec<usize>> = HashMap::new();
    let mut out_items = Vec::with_capacity(items.len());
    for (id, text) in items {
        let grams = ngram_set(text.as_ref(), p.ngram_n);
        if grams.is_empty() {
            continue;
        }
        let idx = out_items.len();
        for g in &grams {
            ngrams.entry(*g).or_default().push(idx);
        }
        out_items.push((id.as_ref().to_string(), grams));
    }
    BenchmarkIndex {
        suite_name: suite_name.to_string(),
        ngrams,
        items: out_items,
        ngram_n: p.ngram_n,
    }
}

/// Loads a suite directory: each regular file is one item, id = file name.
pub fn load_suite(dir: &Path) -> Result<(String, Vec<(String, String)>), DecontamError> {
    let err = |source| DecontamError::Suite {
        path: dir.display().to_string(),
        source,
    };
    let mut files: Vec<_> = fs::read_dir(dir)
        .map_err(err)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file())
        .collect();
    files.sort();
    let mut items = Vec::new();
    for f in files {
        let text = fs::read_to_string(&f).map_err(err)?;
        let id = f.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
        items.push((id, text));
    }
    let name = dir
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| dir.display().to_string());
    Ok((name, items))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContaminationReport {
    pub id: String,
    pub suite: String,
    pub matched_items: Vec<String>,
    pub hit_count: usize,
    pub fuzzy_score: f64,
}

/// Exact path: at least `min_hits` distinct document grams appear in the
/// index. Fuzzy path: the document's gram set has Jaccard at least
/// `fuzzy_jaccard` with some single item.
pub fn scan_document(rec: &DocumentRecord, idx: &BenchmarkIndex, p: &DecontamParams) -> Option<ContaminationReport> {
    let grams = ngram_set(&rec.content, idx.ngram_n);
    let mut hit_count = 0;
    let mut shared: BTreeMap<usize, usize> = BTreeMap::new();
    for g in &grams {
        if let Some(items) = idx.ngrams.get(g) {
            hit_count += 1;
            for &i in items {
                *shared.entry(i).or_default() += 1;
            }
        }
    }
    if hit_count == 0 {
        return None;
    }
    let fuzzy_score = shared
        .iter()
        .map(|(&i, &inter)| {
            let item = idx.items[i].1.len();
            inter as f64 / (grams.len() + item - inter) as f64
        })
        .fold(0.0, f64::max);
    if hit_count < p.min_hits && fuzzy_score < p.fuzzy_jaccard {
        return None;
    }
    let matched: BTreeSet<&str> = shared.keys().map(|&i| idx.items[i].0.as_str()).collect();
    Some(ContaminationReport {
        id: rec.id.clone(),
        suite: idx.suite_name.clone(),
        matched_items: matched.into_iter().map(String::from).collect(),
        hit_count,
        fuzzy_score,
    })
}

/// First suite that flags the record, in the given order.
pub fn scan_suites(rec: &DocumentRecord, suites: &[BenchmarkIndex], p: &DecontamParams) -> Option<ContaminationReport> {
    suites.iter().find_map(|idx| scan_document(rec, idx, p))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DetectorMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub true_positives: usize,
    pub false_positives: usize,
    pub false_negatives: usize,
    pub true_negatives: usize,
}

/// Precision, recall and F1 from confusion counts. Precision is 0 when
/// nothing was flagged.
pub fn metrics(tp: usize, fp: usize, fn_: usize, tn: usize) -> Result<DetectorMetrics, DecontamError> {
    if tp + fn_ == 0 {
        return Err(DecontamError::UndefinedMetric("recall"));
    }
    let precision = if tp + fp == 0 { 0.0 } else { tp as f64 / (tp + fp) as f64 };
    let recall = tp as f64 / (tp + fn_) as f64;
    let f1 = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    Ok(DetectorMetrics {
        precision,
        recall,
        f1,
        true_positives: tp,
        false_positives: fp,
        false_negatives: fn_,
        true_negatives: tn,
    })
}

/// Scores `scan_document` against `(record, is_contaminated)` labels.
pub fn evaluate_detector(
    labeled: &[(DocumentRecord, bool)],
    idx: &BenchmarkIndex,
    p: &DecontamParams,
) -> Result<DetectorMetrics, DecontamError> {
    let (mut tp, mut fp, mut fn_, mut tn) = (0, 0, 0, 0);
    for (rec, truth) in labeled {
        match (scan_document(rec, idx, p).is_some(), *truth) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
            (false, false) => tn += 1,
        }
    }
    metrics(tp, fp, fn_, tn)
}

/// Evaluates every candidate parameter set and returns them with their
/// metrics, best first: full recall before partial, then precision, then F1.
pub fn sweep_params<S: AsRef<str>>(
    labeled: &[(DocumentRecord, bool)],
    items: &[(S, S)],
    candidates: &[DecontamParams],
) -> Result<Vec<(DecontamParams, DetectorMetrics)>, DecontamError> {
    let mut out = Vec::new();
    for p in candidates {
        p.validate()?;
        let idx = build_benchmark_index("sweep", items, p);
        out.push((p.clone(), evaluate_detector(labeled, &idx, p)?));
    }
    out.sort_by(|(_, a), (_, b)| {
        (b.recall >= 1.0)
            .cmp(&(a.recall >= 1.0))
            .then(b.precision.total_cmp(&a.precision))
            .then(b.f1.total_cmp(&a.f1))
    });
    Ok(out)
}
