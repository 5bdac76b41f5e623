//! Exact and MinHash-LSH fuzzy deduplication, plus URL-based overlap removal.
//!
//! Documents are normalized (lowercase, whitespace collapsed), split into
//! whitespace tokens and shingled into windows of `shingle_k` tokens. Each
//! shingle is hashed once; permutation `i` is the bijection
//! `x -> fmix64(a_i * x + b_i)` with odd `a_i`, where `(a_i, b_i)` come from a
//! SplitMix64 stream seeded with `seed`. Signatures are banded into
//! `bands` slices of `rows` values; any identical band makes a candidate pair,
//! and candidates whose estimated Jaccard clears the threshold are merged with
//! union-find.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use url::Url;

use crate::corpus::DocumentRecord;
use crate::hashing::{fmix64, hash_str, SplitMix64};

#[derive(Debug, Error, PartialEq)]
pub enum DedupError {
    #[error("document is empty after normalization")]
    EmptyDocument,
    #[error("cannot sign an empty shingle set")]
    EmptyShingleSet,
    #[error("signature lengths differ: {0} vs {1}")]
    SignatureMismatch(usize, usize),
    #[error("invalid dedup configuration: {0}")]
    ConfigError(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DedupParams {
    pub shingle_k: usize,
    pub num_perms: usize,
    pub bands: usize,
    pub rows: usize,
    pub jaccard_threshold: f64,
    pub seed: u64,
    pub blocked_url_patterns: Vec<String>,
}

impl Default for DedupParams {
    fn default() -> Self {
        Self {
            shingle_k: 5,
            num_perms: 110,
            bands: 10,
            rows: 11,
            jaccard_threshold: 0.75,
            seed: 42,
            blocked_url_patterns: Vec::new(),
        }
    }
}

impl DedupParams {
    pub fn with_seed(seed: u64) -> Self {
        Self { seed, ..Self::default() }
    }

    pub fn validate(&self) -> Result<(), DedupError> {
        if self.shingle_k == 0 {
            return Err(DedupError::ConfigError("dedup.shingle_k must be >= 1".into()));
        }
        if self.bands == 0 || self.rows == 0 || self.bands * self.rows != self.num_perms {
            return Err(DedupError::ConfigError(format!(
                "dedup.bands ({}) x dedup.rows ({}) must equal dedup.num_perms ({})",
                self.bands, self.rows, self.num_perms
            )));
        }
        if !(self.jaccard_threshold > 0.0 && self.jaccard_threshold <= 1.0) {
            return Err(DedupError::ConfigError("dedup.jaccard_threshold must be in (0,1]".into()));
        }
        Ok(())
    }

    /// Analytic probability that a pair at Jaccard `s` shares at least one band.
    pub fn candidate_probability(&self, s: f64) -> f64 {
        1.0 - (1.0 - s.powi(self.rows as i32)).powi(self.bands as i32)
    }
}

/// Lowercased whitespace tokens.
fn tokens(content: &str) -> Vec<String> {
    content.split_whitespace().map(str::to_lowercase).collect()
}

fn windows<'a>(toks: &'a [String], k: usize) -> impl Iterator<Item = String> + 'a {
    let k_eff = k.min(toks.len());
    toks.windows(k_eff).map(|w| w.join(" "))
}

/// All windows of `k` consecutive normalized tokens. Documents with fewer
/// than `k` tokens yield their whole normalized text as a single shingle.
pub fn shingle(content: &str, k: usize) -> Result<HashSet<String>, DedupError> {
    let toks = tokens(content);
    if toks.is_empty() {
        return Err(DedupError::EmptyDocument);
    }
    Ok(windows(&toks, k.max(1)).collect())
}

/// Exact Jaccard of two sets.
pub fn jaccard<T: Eq + std::hash::Hash>(a: &HashSet<T>, b: &HashSet<T>) -> f64 {
    if a.is_empty() && b.is_empty() {
        return 1.0;
    }
    let inter = a.intersection(b).count();
    inter as f64 / (a.len() + b.len() - inter) as f64
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct MinHashSignature {
    pub values: Vec<u64>,
}

/// The family of `num_perms` hash permutations derived from a seed.
#[derive(Debug, Clone)]
pub struct MinHasher {
    coeffs: Vec<(u64, u64)>,
}

impl MinHasher {
    pub fn new(num_perms: usize, seed: u64) -> Self {
        let mut sm = SplitMix64::new(seed);
        let coeffs = (0..num_perms).map(|_| (sm.next_u64() | 1, sm.next_u64())).collect();
        Self { coeffs }
    }

    pub fn from_params(p: &DedupParams) -> Self {
        Self::new(p.num_perms, p.seed)
    }

    pub fn sign_hashes<I: IntoIterator<Item = u64>>(&self, hashes: I) -> Option<MinHashSignature> {
        let mut mins = vec![u64::MAX; self.coeffs.len()];
        let mut any = false;
        for x in hashes {
            any = true;
            for (m, &(a, b)) in mins.iter_mut().zip(&self.coeffs) {
                let v = fmix64(a.wrapping_mul(x).wrapping_add(b));
                if v < *m {
                    *m = v;
                }
            }
        }
        any.then_some(MinHashSignature { values: mins })
    }

    pub fn sign(&self, shingles: &HashSet<String>) -> Result<MinHashSignature, DedupError> {
        self.sign_hashes(shingles.iter().map(|s| hash_str(s)))
            .ok_or(DedupError::EmptyShingleSet)
    }

    /// Shingle and sign a document. Equivalent to `sign(&shingle(content, k)?)`.
    pub fn sign_text(&self, content: &str, k: usize) -> Result<MinHashSignature, DedupError> {
        let toks = tokens(content);
        if toks.is_empty() {
            return Err(DedupError::EmptyDocument);
        }
        let mut seen = HashSet::new();
        let hashes: Vec<u64> = windows(&toks, k.max(1))
            .map(|s| hash_str(&s))
            .filter(|h| seen.insert(*h))
            .collect();
        self.sign_hashes(hashes).ok_or(DedupError::EmptyShingleSet)
    }
}

pub fn minhash_signature(sh: &HashSet<String>, p: &DedupParams) -> Result<MinHashSignature, DedupError> {
    MinHasher::from_params(p).sign(sh)
}

/// Fraction of coordinates on which the two signatures agree.
pub fn estimate_jaccard(a: &MinHashSignature, b: &MinHashSignature) -> Result<f64, DedupError> {
    if a.values.len() != b.values.len() {
        return Err(DedupError::SignatureMismatch(a.values.len(), b.values.len()));
    }
    if a.values.is_empty() {
        return Ok(1.0);
    }
    let same = a.values.iter().zip(&b.values).filter(|(x, y)| x == y).count();
    Ok(same as f64 / a.values.len() as f64)
}

/// Index pairs `(i, j)`, `i < j`, that share at least one identical band.
pub fn lsh_candidates(signatures: &[MinHashSignature], p: &DedupParams) -> BTreeSet<(usize, usize)> {
    let per_band: Vec<Vec<(usize, usize)>> = (0..p.bands)
        .into_par_iter()
        .map(|band| {
            let lo = band * p.rows;
            let hi = lo + p.rows;
            let mut buckets: HashMap<&[u64], Vec<usize>> = HashMap::new();
            for (i, sig) in signatures.iter().enumerate() {
                if let Some(slice) = sig.values.get(lo..hi) {
                    buckets.entry(slice).or_default().push(i);
                }
            }
            let mut pairs = Vec::new();
            for members in buckets.values() {
                for (x, &i) in members.iter().enumerate() {
                    for &j in &members[x + 1..] {
                        pairs.push((i, j));
                    }
                }
            }
            pairs
        })
        .collect();
    per_band.into_iter().flatten().collect()
}

/// Disjoint sets with path halving and union by size.
#[derive(Debug, Clone)]
pub struct UnionFind {
    parent: Vec<usize>,
    size: Vec<usize>,
}

impl UnionFind {
    pub fn new(n: usize) -> Self {
        Self {
            parent: (0..n).collect(),
            size: vec![1; n],
        }
    }

    pub fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    /// Returns true when the two sets were distinct.
    pub fn union(&mut self, a: usize, b: usize) -> bool {
        let (mut ra, mut rb) = (self.find(a), self.find(b));
        if ra == rb {
            return false;
        }
        if self.size[ra] < self.size[rb] {
            std::mem::swap(&mut ra, &mut rb);
        }
        self.parent[rb] = ra;
        self.size[ra] += self.size[rb];
        true
    }

    /// Members of every set, grouped by root, each sorted ascending.
    pub fn groups(&mut self) -> Vec<Vec<usize>> {
        let mut by_root: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for i in 0..self.parent.len() {
            let r = self.find(i);
            by_root.entry(r).or_default().push(i);
        }
        by_root.into_values().collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DupCluster {
    pub representative: String,
    pub members: BTreeSet<String>,
}

impl DupCluster {
    /// `representative member_count member...`
    pub fn report_line(&self) -> String {
        let mut line = format!("{} {}", self.representative, self.members.len());
        for m in &self.members {
            line.push(' ');
            line.push_str(m);
        }
        line
    }
}

/// Optional second opinion on candidate pairs the MinHash estimate rejected,
/// e.g. an embedding model. Pairs scoring at least `threshold()` are merged.
pub trait PairScorer: Send + Sync {
    fn score(&self, a: &DocumentRecord, b: &DocumentRecord) -> f64;
    fn threshold(&self) -> f64;
}

#[derive(Debug, Clone)]
pub struct DedupOutcome {
    pub survivors: Vec<DocumentRecord>,
    /// Removed records, flagged `dedup:exact` or `dedup:near`.
    pub removed: Vec<DocumentRecord>,
    /// One entry per group of two or more records, ordered by representative.
    pub clusters: Vec<DupCluster>,
    /// Accepted near-duplicate edges, as record indices into the input.
    pub accepted_pairs: Vec<(usize, usize)>,
}

pub fn dedup_corpus(records: Vec<DocumentRecord>, p: &DedupParams) -> Result<DedupOutcome, DedupError> {
    dedup_corpus_with(records, p, None)
}

/// Exact pass by content, then MinHash-LSH over the exact survivors. Each
/// connected group keeps its lexicographically smallest id. Survivors keep
/// input order. Records with no tokens only take part in the exact pass.
pub fn dedup_corpus_with(
    records: Vec<DocumentRecord>,
    p: &DedupParams,
    scorer: Option<&dyn PairScorer>,
) -> Result<DedupOutcome, DedupError> {
    p.validate()?;
    let n = records.len();
    let mut uf = UnionFind::new(n);

    // Exact pass: every record joins the smallest-id record with its content.
    let mut by_content: HashMap<&str, usize> = HashMap::new();
    let mut exact_rep = vec![usize::MAX; n];
    for (i, r) in records.iter().enumerate() {
        let e = by_content.entry(r.content.as_str()).or_insert(i);
        if records[i].id < records[*e].id {
            *e = i;
        }
    }
    for (i, r) in records.iter().enumerate() {
        exact_rep[i] = by_content[r.content.as_str()];
        uf.union(i, exact_rep[i]);
    }
    let uniques: Vec<usize> = (0..n).filter(|&i| exact_rep[i] == i).collect();

    let hasher = MinHasher::from_params(p);
    let signed: Vec<(usize, MinHashSignature)> = uniques
        .par_iter()
        .filter_map(|&i| hasher.sign_text(&records[i].content, p.shingle_k).ok().map(|s| (i, s)))
        .collect();
    let sigs: Vec<MinHashSignature> = signed.iter().map(|(_, s)| s.clone()).collect();

    let mut accepted = Vec::new();
    for (a, b) in lsh_candidates(&sigs, p) {
        let est = estimate_jaccard(&sigs[a], &sigs[b])?;
        let (ia, ib) = (signed[a].0, signed[b].0);
        let ok = est >= p.jaccard_threshold
            || scorer.is_some_and(|s| s.score(&records[ia], &records[ib]) >= s.threshold());
        if ok {
            uf.union(ia, ib);
            accepted.push((ia, ib));
        }
    }

    let mut keep = vec![true; n];
    let mut reason: Vec<Option<&'static str>> = vec![None; n];
    let mut clusters = Vec::new();
    for group in uf.groups() {
        if group.len() < 2 {
            continue;
        }
        let rep = *group.iter().min_by(|&&a, &&b| records[a].id.cmp(&records[b].id)).expect("non-empty");
        for &m in &group {
            if m != rep {
                keep[m] = false;
                reason[m] = Some(if exact_rep[m] != m { "dedup:exact" } else { "dedup:near" });
            }
        }
        clusters.push(DupCluster {
            representative: records[rep].id.clone(),
            members: group.iter().map(|&m| records[m].id.clone()).collect(),
        });
    }
    clusters.sort_by(|a, b| a.representative.cmp(&b.representative));

    let mut survivors = Vec::new();
    let mut removed = Vec::new();
    for (i, mut r) in records.into_iter().enumerate() {
        if keep[i] {
            survivors.push(r);
        } else {
            r.flags.insert(reason[i].expect("removed records have a reason").to_string());
            removed.push(r);
        }
    }
    Ok(DedupOutcome {
        survivors,
        removed,
        clusters,
        accepted_pairs: accepted,
    })
}

#[derive(Debug, Clone, PartialEq)]
enum UrlPattern {
    /// Matches the host and any of its subdomains.
    Host(String),
    /// Matches URLs that start with this normalized prefix.
    Prefix(String),
}

/// Blocked hosts (`example.com`, `*.example.com`) or URL prefixes
/// (`https://example.com/math/`).
#[derive(Debug, Clone, PartialEq)]
pub struct UrlBlocklist {
    patterns: Vec<UrlPattern>,
}

impl UrlBlocklist {
    pub fn parse<S: AsRef<str>>(patterns: &[S]) -> Result<Self, DedupError> {
        let patterns = patterns
            .iter()
            .map(|p| parse_pattern(p.as_ref()))
            .collect::<Result<_, _>>()?;
        Ok(Self { patterns })
    }

    pub fn matches(&self, origin_url: &str) -> bool {
        if origin_url.is_empty() {
            return false;
        }
        let Ok(url) = Url::parse(origin_url) else {
            return false;
        };
        let host = url.host_str().unwrap_or("").trim_end_matches('.');
        self.patterns.iter().any(|p| match p {
            UrlPattern::Host(h) => host == h || host.strip_suffix(h.as_str()).is_some_and(|rest| rest.ends_with('.')),
            UrlPattern::Prefix(prefix) => url.as_str().starts_with(prefix.as_str()),
        })
    }
}

fn parse_pattern(raw: &str) -> Result<UrlPattern, DedupError> {
    let bad = || DedupError::ConfigError(format!("malformed URL pattern {raw:?}"));
    let p = raw.trim();
    if p.is_empty() {
        return Err(bad());
    }
    if p.contains("://") {
        let url = Url::parse(p).map_err(|_| bad())?;
        if url.host_str().is_none() {
            return Err(bad());
        }
        return Ok(UrlPattern::Prefix(url.as_str().to_string()));
    }
    let host = p.strip_prefix("*.").unwrap_or(p).to_ascii_lowercase();
    let label_ok = |l: &str| {
        !l.is_empty() && !l.starts_with('-') && !l.ends_with('-') && l.chars().all(|c| c.is_ascii_alphanumeric() || c == '-')
    };
    if host.split('.').all(label_ok) {
        Ok(UrlPattern::Host(host))
    } else {
        Err(bad())
    }
}

/// Splits records into (kept, rejected); rejected ones are flagged `dedup:url`.
pub fn url_overlap_filter<S: AsRef<str>>(
    records: Vec<DocumentRecord>,
    blocked_url_patterns: &[S],
) -> Result<(Vec<DocumentRecord>, Vec<DocumentRecord>), DedupError> {
    let list = UrlBlocklist::parse(blocked_url_patterns)?;
    let (mut kept, mut rejected) = (Vec::new(), Vec::new());
    for mut r in records {
        if list.matches(&r.origin_url) {
            r.flags.insert("dedup:url".into());
            rejected.push(r);
        } else {
            kept.push(r);
        }
    }
    Ok((kept, rejected))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Modality;

    fn set(items: &[&str]) -> HashSet<String> {
        items.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn shingle_examples() {
        assert_eq!(shingle("a b c d e f", 5).unwrap(), set(&["a b c d e", "b c d e f"]));
        assert_eq!(shingle("a b", 5).unwrap(), set(&["a b"]));
        assert_eq!(shingle("  A\tB \n C  ", 2).unwrap(), set(&["a b", "b c"]));
        assert_eq!(shingle(" \n\t", 5), Err(DedupError::EmptyDocument));
    }

    #[test]
    fn one_token_difference_jaccard_is_one_third() {
        let a = shingle("a b c d e f", 5).unwrap();
        let b = shingle("a b c d e g", 5).unwrap();
        // Brute force: one shared window out of three distinct ones.
        let shared = a.iter().filter(|s| b.contains(*s)).count();
        let union: HashSet<_> = a.union(&b).collect();
        assert_eq!((shared, union.len()), (1, 3));
        assert!((jaccard(&a, &b) - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn params_validation() {
        assert!(DedupParams::default().validate().is_ok());
        let bad = DedupParams { bands: 9, ..DedupParams::default() };
        assert!(matches!(bad.validate(), Err(DedupError::ConfigError(_))));
        let bad = DedupParams { shingle_k: 0, ..DedupParams::default() };
        assert!(bad.validate().is_err());
        let bad = DedupParams { jaccard_threshold: 0.0, ..DedupParams::default() };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn signature_basics() {
        let p = DedupParams::default();
        let a = shingle("the quick brown fox jumps over the lazy dog", 5).unwrap();
        let s1 = minhash_signature(&a, &p).unwrap();
        let s2 = minhash_signature(&a.clone(), &p).unwrap();
        assert_eq!(s1.values.len(), 110);
        assert_eq!(s1, s2);
        assert_eq!(estimate_jaccard(&s1, &s2).unwrap(), 1.0);
        assert_eq!(minhash_signature(&HashSet::new(), &p), Err(DedupError::EmptyShingleSet));
        let text = MinHasher::from_params(&p)
            .sign_text("The quick  brown fox jumps over the LAZY dog", 5)
            .unwrap();
        assert_eq!(text, s1);
    }

    #[test]
    fn disjoint_sets_rarely_agree() {
        let p = DedupParams::default();
        let a: HashSet<String> = (0..200).map(|i| format!("a{i}")).collect();
        let b: HashSet<String> = (0..200).map(|i| format!("b{i}")).collect();
        let est = estimate_jaccard(&minhash_signature(&a, &p).unwrap(), &minhash_signature(&b, &p).unwrap()).unwrap();
        assert!(est < 0.03, "{est}");
    }

    #[test]
    fn estimate_examples() {
        let a = MinHashSignature { values: vec![1, 2, 3] };
        let b = MinHashSignature { values: vec![4, 5, 6] };
        assert_eq!(estimate_jaccard(&a, &b).unwrap(), 0.0);
        let c = MinHashSignature { values: vec![1, 2] };
        assert_eq!(estimate_jaccard(&a, &c), Err(DedupError::SignatureMismatch(3, 2)));
    }

    #[test]
    fn candidate_probabilities() {
        let p = DedupParams::default();
        assert!((p.candidate_probability(0.9) - 0.9772).abs() < 1e-3);
        assert!((p.candidate_probability(0.75) - 0.3505).abs() < 1e-3);
        let mid = (0.1f64).powf(1.0 / 11.0);
        assert!((mid - 0.811).abs() < 1e-3);
    }

    #[test]
    fn identical_signatures_are_candidates() {
        let p = DedupParams::default();
        let s = MinHasher::from_params(&p).sign_text("one two three four five six", 5).unwrap();
        let c = lsh_candidates(&[s.clone(), s.clone(), s], &p);
        assert_eq!(c, BTreeSet::from([(0, 1), (0, 2), (1, 2)]));
    }

    #[test]
    fn union_find_groups() {
        let mut uf = UnionFind::new(5);
        assert!(uf.union(0, 3));
        assert!(uf.union(3, 4));
        assert!(!uf.union(0, 4));
        assert_eq!(uf.groups(), vec![vec![0, 3, 4], vec![1], vec![2]]);
    }

    fn doc(id: &str, content: &str) -> DocumentRecord {
        DocumentRecord::new(id, Modality::Math, content)
    }

    #[test]
    fn byte_identical_records_leave_one_survivor() {
        let out = dedup_corpus(vec![doc("b", "same text here"), doc("a", "same text here")], &DedupParams::default())
            .unwrap();
        assert_eq!(out.survivors.len(), 1);
        assert_eq!(out.survivors[0].id, "a");
        assert!(out.removed[0].flags.contains("dedup:exact"));
        assert_eq!(out.clusters[0].report_line(), "a 2 a b");
    }

    #[test]
    fn near_duplicates_cluster_with_smallest_id() {
        let base: Vec<String> = (0..200).map(|i| format!("w{i}")).collect();
        let mut edited = base.clone();
        edited[100] = "changed".into();
        let out = dedup_corpus(
            vec![doc("z", &base.join(" ")), doc("m", &edited.join(" ")), doc("q", "unrelated words entirely here")],
            &DedupParams::default(),
        )
        .unwrap();
        let ids: Vec<_> = out.survivors.iter().map(|r| r.id.as_str()).collect();
        assert_eq!(ids, ["m", "q"]);
        assert!(out.removed[0].flags.contains("dedup:near"));
        assert_eq!(out.clusters.len(), 1);
        assert_eq!(out.clusters[0].representative, "m");
    }

    struct AlwaysSimilar;
    impl PairScorer for AlwaysSimilar {
        fn score(&self, _: &DocumentRecord, _: &DocumentRecord) -> f64 {
            1.0
        }
        fn threshold(&self) -> f64 {
            0.5
        }
    }

    #[test]
    fn pair_scorer_can_accept_rejected_candidates() {
        // Strict threshold rejects everything except identical signatures.
        let p = DedupParams { jaccard_threshold: 1.0, ..DedupParams::default() };
        let base: Vec<String> = (0..200).map(|i| format!("w{i}")).collect();
        let mut edited = base.clone();
        edited[100] = "changed".into();
        let recs = vec![doc("a", &base.join(" ")), doc("b", &edited.join(" "))];
        let plain = dedup_corpus(recs.clone(), &p).unwrap();
        let scored = dedup_corpus_with(recs, &p, Some(&AlwaysSimilar)).unwrap();
        assert!(scored.survivors.len() <= plain.survivors.len());
        assert_eq!(scored.survivors.len(), 1);
    }

    fn with_url(id: &str, url: &str) -> DocumentRecord {
        let mut r = doc(id, "text");
        r.origin_url = url.into();
        r
    }

    #[test]
    fn url_filter_examples() {
        let recs = vec![
            with_url("a", "https://math.example.org/page"),
            with_url("b", ""),
            with_url("c", "https://other.net/x"),
            with_url("d", "https://sub.mathsite.com/q?id=1"),
            with_url("e", "https://notmathsite.com/"),
            with_url("f", "https://blog.net/math/1"),
        ];
        let patterns = ["math.example.org", "mathsite.com", "https://blog.net/math/"];
        let (kept, rejected) = url_overlap_filter(recs, &patterns).unwrap();
        let k: Vec<_> = kept.iter().map(|r| r.id.as_str()).collect();
        let r: Vec<_> = rejected.iter().map(|r| r.id.as_str()).collect();
        assert_eq!(k, ["b", "c", "e"]);
        assert_eq!(r, ["a", "d", "f"]);
        assert!(rejected.iter().all(|r| r.flags.contains("dedup:url")));
    }

    #[test]
    fn malformed_patterns_are_config_errors() {
        for bad in ["", "exa mple.com", "http://", "-bad.com", "a..b"] {
            assert!(
                matches!(UrlBlocklist::parse(&[bad]), Err(DedupError::ConfigError(_))),
                "{bad:?} should be rejected"
            );
        }
        assert!(UrlBlocklist::parse(&["*.example.com"]).unwrap().matches("http://a.example.com/"));
    }

    #[test]
    fn three_percent_blocked_tokens_retain_ninety_seven() {
        // 97 clean documents and 3 from a blocked host, equal token counts.
        let recs: Vec<_> = (0..100)
            .map(|i| {
                let host = if i < 3 { "mathdump.net" } else { "web.org" };
                let mut r = doc(&format!("d{i}"), &"word ".repeat(40));
                r.origin_url = format!("https://{host}/{i}");
                r
            })
            .collect();
        let total: u64 = recs.iter().map(|r| r.est_tokens).sum();
        let (kept, _) = url_overlap_filter(recs, &["mathdump.net"]).unwrap();
        let kept_tokens: u64 = kept.iter().map(|r| r.est_tokens).sum();
        assert!((kept_tokens as f64 / total as f64 - 0.97).abs() < 1e-12);
    }
}
