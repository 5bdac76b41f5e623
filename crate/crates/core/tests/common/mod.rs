#![allow(dead_code)]

use std::collections::{BTreeSet, HashSet};

use curate_core::corpus::{DocumentRecord, Modality};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// A random lowercase word; distinct calls collide with negligible probability.
pub fn word(rng: &mut ChaCha8Rng) -> String {
    (0..8).map(|_| rng.random_range(b'a'..=b'z') as char).collect()
}

pub fn words(rng: &mut ChaCha8Rng, n: usize) -> Vec<String> {
    (0..n).map(|_| word(rng)).collect()
}

/// Exact shingle-set Jaccard by brute force, independent of the crate's shingler.
pub fn brute_jaccard(a: &str, b: &str, k: usize) -> f64 {
    let sh = |s: &str| -> HashSet<Vec<String>> {
        let t: Vec<String> = s.split_whitespace().map(|w| w.to_lowercase()).collect();
        if t.len() < k {
            return HashSet::from([t]);
        }
        (0..=t.len() - k).map(|i| t[i..i + k].to_vec()).collect()
    };
    let (x, y) = (sh(a), sh(b));
    let inter = x.iter().filter(|s| y.contains(*s)).count();
    let union = x.len() + y.len() - inter;
    if union == 0 {
        1.0
    } else {
        inter as f64 / union as f64
    }
}

/// Two string sets with `shared` common and `only` private elements each.
pub fn set_pair(rng: &mut ChaCha8Rng, shared: usize, only_a: usize, only_b: usize) -> (HashSet<String>, HashSet<String>) {
    let common = words(rng, shared);
    let mut a: HashSet<String> = common.iter().cloned().collect();
    let mut b = a.clone();
    a.extend(words(rng, only_a));
    b.extend(words(rng, only_b));
    (a, b)
}

/// A near-copy of `base` with `subs` scattered single-word substitutions.
pub fn mutate(rng: &mut ChaCha8Rng, base: &[String], subs: usize) -> Vec<String> {
    let mut out = base.to_vec();
    let mut positions: Vec<usize> = (0..base.len()).collect();
    positions.shuffle(rng);
    for &p in positions.iter().take(subs) {
        out[p] = word(rng);
    }
    out
}

pub struct DedupCorpus {
    pub records: Vec<DocumentRecord>,
    /// Id pairs at exact shingle Jaccard >= 0.9.
    pub planted: Vec<(String, String)>,
    /// Id pairs at exact shingle Jaccard <= 0.3.
    pub decoys: Vec<(String, String)>,
}

/// `pairs` planted near-duplicate pairs and `pairs` low-overlap decoy pairs,
/// each verified against the brute-force Jaccard oracle.
pub fn dedup_corpus(seed: u64, pairs: usize, len: usize) -> DedupCorpus {
    let mut r = rng(seed);
    let mut records = Vec::new();
    let mut planted = Vec::new();
    let mut decoys = Vec::new();
    for i in 0..pairs {
        let base = words(&mut r, len);
        let copy = mutate(&mut r, &base, 1);
        let (a, b) = (base.join(" "), copy.join(" "));
        assert!(brute_jaccard(&a, &b, 5) >= 0.9);
        let (ia, ib) = (format!("p{i:04}a"), format!("p{i:04}b"));
        records.push(DocumentRecord::new(&ia, Modality::Text, a));
        records.push(DocumentRecord::new(&ib, Modality::Text, b));
        planted.push((ia, ib));
    }
    for i in 0..pairs {
        let base = words(&mut r, len);
        let keep = len * 2 / 5;
        let mut other = base[..keep].to_vec();
        other.extend(words(&mut r, len - keep));
        let (a, b) = (base.join(" "), other.join(" "));
        assert!(brute_jaccard(&a, &b, 5) <= 0.3);
        let (ia, ib) = (format!("d{i:04}a"), format!("d{i:04}b"));
        records.push(DocumentRecord::new(&ia, Modality::Text, a));
        records.push(DocumentRecord::new(&ib, Modality::Text, b));
        decoys.push((ia, ib));
    }
    records.shuffle(&mut r);
    DedupCorpus {
        records,
        planted,
        decoys,
    }
}

pub struct GeneratedRepo {
    pub repo_id: String,
    pub files: Vec<DocumentRecord>,
    /// Ground-truth `(importer, imported)` path pairs.
    pub edges: BTreeSet<(String, String)>,
}

/// A repository of Python modules whose imports form a random DAG. Module
/// names are shuffled so dependency order disagrees with path order.
pub fn dag_repo(rng: &mut ChaCha8Rng, repo_id: &str, files: usize) -> GeneratedRepo {
    let mut names: Vec<String> = (0..files).map(|i| format!("mod_{i:02}_{}", word(rng))).collect();
    names.shuffle(rng);
    let mut edges = BTreeSet::new();
    let mut out = Vec::new();
    for i in 0..files {
        let mut body = String::new();
        for j in 0..i {
            if rng.random_bool(0.3) {
                body.push_str(&format!("import {}\n", names[j]));
                edges.insert((format!("pkg/{}.py", names[i]), format!("pkg/{}.py", names[j])));
            }
        }
        body.push_str(&format!("\ndef f_{i}(x):\n    return x + {i}\n"));
        let path = format!("pkg/{}.py", names[i]);
        let rec = DocumentRecord::new(format!("{repo_id}/{path}"), Modality::Code, body)
            .with_path(path)
            .with_repo(repo_id)
            .with_license("mit");
        out.push(rec);
    }
    GeneratedRepo {
        repo_id: repo_id.to_string(),
        files: out,
        edges,
    }
}

/// Natural-looking text over a small vocabulary.
pub fn prose(rng: &mut ChaCha8Rng, n: usize) -> String {
    const VOCAB: &[&str] = &[
        "the", "model", "data", "code", "function", "returns", "value", "and", "of", "a", "to", "in", "is", "for",
        "training", "with", "loss", "we", "this", "that", "on", "sum", "list", "input", "output", "each", "number",
        "string", "file", "test", "case", "error", "type", "class", "method", "result", "given", "first", "second",
    ];
    (0..n).map(|_| VOCAB[rng.random_range(0..VOCAB.len())]).collect::<Vec<_>>().join(" ")
}

/// A mixed corpus exercising every stage, roughly `target_bytes` of content.
pub fn toy_corpus(seed: u64, target_bytes: usize) -> Vec<DocumentRecord> {
    let mut r = rng(seed);
    let mut out = Vec::new();
    let mut bytes = 0;
    let mut i = 0usize;
    while bytes < target_bytes {
        let kind = r.random_range(0..10);
        let rec = match kind {
            0..=5 => {
                let repo = format!("repo{:04}", i / 4);
                let mut body = String::new();
                let funcs = r.random_range(2..12);
                for f in 0..funcs {
                    body.push_str(&format!(
                        "def fn_{i}_{f}(x, y):\n    \"\"\"{}\"\"\"\n    total = x * {f} + y  # {}\n    return total\n\n",
                        prose(&mut r, 8),
                        prose(&mut r, 4)
                    ));
                }
                DocumentRecord::new(format!("code{i:07}"), Modality::Code, body)
                    .with_path(format!("src/m{i}.py"))
                    .with_repo(repo)
                    .with_license("mit")
            }
            6..=7 => {
                let n = r.random_range(50..400);
                DocumentRecord::new(format!("text{i:07}"), Modality::Text, prose(&mut r, n)).with_license("cc-by")
            }
            8 => DocumentRecord::new(
                format!("math{i:07}"),
                Modality::Math,
                format!("Let x = {}. Then {} and the sum is {}.", i, prose(&mut r, 60), i * 3),
            )
            .with_license("cc-by"),
            _ => {
                // Near-duplicate of an earlier record.
                match out.get(r.random_range(0..out.len().max(1))) {
                    Some(prev) => {
                        let prev: &DocumentRecord = prev;
                        let mut d = prev.clone();
                        d.id = format!("dup{i:07}");
                        d.repo_id = String::new();
                        d.path = String::new();
                        d.set_content(format!("{} extra", prev.content), &curate_core::corpus::ByteEstimator);
                        d
                    }
                    None => DocumentRecord::new(format!("text{i:07}"), Modality::Text, prose(&mut r, 100)),
                }
            }
        };
        bytes += rec.content.len();
        out.push(rec);
        i += 1;
    }
    out
}
