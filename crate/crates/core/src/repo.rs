//! Per-repository import graphs, dependency-first file ordering and
//! concatenation into project-level documents.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::sync::LazyLock;

use rayon::prelude::*;
use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Decision, DocumentRecord, Modality, TokenCounter};
use crate::filters::{spec_for, LanguageSpec};

#[derive(Debug, Error, PartialEq)]
pub enum RepoError {
    #[error("repository {repo_id} lists {path} more than once")]
    DuplicatePath { repo_id: String, path: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct RepoGraph {
    pub repo_id: String,
    pub nodes: BTreeSet<String>,
    /// `(importer, imported)`: the imported file must come first.
    pub edges: BTreeSet<(String, String)>,
}

impl RepoGraph {
    /// Builds a graph, dropping self-edges and edges with unknown endpoints.
    pub fn new<I, E>(repo_id: impl Into<String>, nodes: I, edges: E) -> Self
    where
        I: IntoIterator<Item = String>,
        E: IntoIterator<Item = (String, String)>,
    {
        let nodes: BTreeSet<String> = nodes.into_iter().collect();
        let edges = edges
            .into_iter()
            .filter(|(a, b)| a != b && nodes.contains(a) && nodes.contains(b))
            .collect();
        Self {
            repo_id: repo_id.into(),
            nodes,
            edges,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BrokenEdge {
    pub repo_id: String,
    pub importer: String,
    pub imported: String,
}

impl BrokenEdge {
    /// `repo_id importer imported`
    pub fn report_line(&self) -> String {
        format!("{} {} {}", self.repo_id, self.importer, self.imported)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TopoOrder {
    pub order: Vec<String>,
    pub broken: Vec<BrokenEdge>,
}

/// Kahn's algorithm taking the lexicographically smallest ready path first.
///
/// When no node is ready the remaining graph has a cycle. Among remaining
/// edges that lie on a cycle and point "backwards" against path order
/// (imported path sorts after its importer), the one with the greatest
/// importer (then greatest imported) is deleted and reported. Every cycle has
/// at least one such edge, so this always makes progress.
pub fn topo_order(g: &RepoGraph) -> TopoOrder {
    let mut deps: BTreeMap<&str, BTreeSet<&str>> = g.nodes.iter().map(|n| (n.as_str(), BTreeSet::new())).collect();
    let mut dependents: BTreeMap<&str, BTreeSet<&str>> = deps.clone();
    for (imp, dep) in &g.edges {
        deps.get_mut(imp.as_str()).expect("edge endpoints are nodes").insert(dep);
        dependents.get_mut(dep.as_str()).expect("edge endpoints are nodes").insert(imp);
    }

    let mut ready: BTreeSet<&str> = deps.iter().filter(|(_, d)| d.is_empty()).map(|(n, _)| *n).collect();
    let mut order = Vec::with_capacity(g.nodes.len());
    let mut broken = Vec::new();
    let mut remaining: BTreeSet<&str> = deps.keys().copied().collect();

    while !remaining.is_empty() {
        if let Some(n) = ready.pop_first() {
            remaining.remove(n);
            order.push(n.to_string());
            for &d in &dependents[n] {
                let set = deps.get_mut(d).expect("node");
                set.remove(n);
                if set.is_empty() && remaining.contains(d) {
                    ready.insert(d);
                }
            }
            continue;
        }
        let (imp, dep) = pick_back_edge(&deps).expect("stalled graph has a cycle");
        deps.get_mut(imp).expect("node").remove(dep);
        dependents.get_mut(dep).expect("node").remove(imp);
        broken.push(BrokenEdge {
            repo_id: g.repo_id.clone(),
            importer: imp.to_string(),
            imported: dep.to_string(),
        });
        if deps[imp].is_empty() {
            ready.insert(imp);
        }
    }
    TopoOrder { order, broken }
}

/// Greatest back edge lying on a cycle of the remaining dependency graph.
fn pick_back_edge<'a>(deps: &BTreeMap<&'a str, BTreeSet<&'a str>>) -> Option<(&'a str, &'a str)> {
    let mut back: Vec<(&str, &str)> = deps
        .iter()
        .flat_map(|(&imp, ds)| ds.iter().filter(move |&&d| d > imp).map(move |&d| (imp, d)))
        .collect();
    back.sort_unstable_by(|a, b| b.cmp(a));
    back.into_iter().find(|&(imp, dep)| reaches(deps, dep, imp))
}

/// Whether `to` is reachable from `from` along dependency edges.
fn reaches(deps: &BTreeMap<&str, BTreeSet<&str>>, from: &str, to: &str) -> bool {
    let mut seen = BTreeSet::from([from]);
    let mut queue = VecDeque::from([from]);
    while let Some(n) = queue.pop_front() {
        if n == to {
            return true;
        }
        for &d in deps.get(n).into_iter().flatten() {
            if seen.insert(d) {
                queue.push_back(d);
            }
        }
    }
    false
}

static PY_IMPORT: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"^\s*import\s+([\w.]+(?:\s+as\s+\w+)?(?:\s*,\s*[\w.]+(?:\s+as\s+\w+)?)*)").unwrap());
static PY_FROM: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"^\s*from\s+(\.*)([\w.]*)\s+import\s+\(?([\w\s,*]+)").unwrap());
static JS_SPEC: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r#"(?:^\s*(?:import|export)\b[^'"]*?\bfrom\s*['"]([^'"]+)['"]|^\s*import\s*['"]([^'"]+)['"]|\brequire\s*\(\s*['"]([^'"]+)['"]\s*\)|\bimport\s*\(\s*['"]([^'"]+)['"]\s*\))"#).unwrap()
});
const JS_EXTS: [&str; 6] = ["", ".js", ".mjs", ".cjs", ".jsx", ".ts"];
static C_INCLUDE: LazyLock<Regex> = LazyLock::new(|| Regex::new(r#"^\s*#\s*include\s*([<"])([^>"]+)[>"]"#).unwrap());
static JAVA_IMPORT: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"^\s*import\s+(?:static\s+)?([\w.]+?)(\.\*)?\s*;").unwrap());
static CS_USING: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"^\s*using\s+(?:static\s+)?(?:\w+\s*=\s*)?([\w.]+)\s*;").unwrap());

/// Resolves `.` and `..` components. Returns None when `..` escapes the root.
pub fn normalize_path(path: &str) -> Option<String> {
    let mut parts: Vec<&str> = Vec::new();
    for seg in path.split('/') {
        match seg {
            "" | "." => {}
            ".." => {
                parts.pop()?;
            }
            s => parts.push(s),
        }
    }
    Some(parts.join("/"))
}

fn dir_of(path: &str) -> &str {
    path.rsplit_once('/').map_or("", |(d, _)| d)
}

fn join(dir: &str, rel: &str) -> Option<String> {
    if dir.is_empty() {
        normalize_path(rel)
    } else {
        normalize_path(&format!("{dir}/{rel}"))
    }
}

/// Sibling paths that end with `/suffix` or equal it. Ambiguous matches are
/// dropped unless one sits in the importer's own directory.
fn suffix_match(siblings: &BTreeSet<String>, suffix: &str, importer: &str) -> Option<String> {
    let hits: Vec<&String> = siblings
        .iter()
        .filter(|s| *s == suffix || s.ends_with(&format!("/{suffix}")))
        .collect();
    match hits.as_slice() {
        [one] => Some((*one).clone()),
        [] => None,
        many => {
            let local = join(dir_of(importer), suffix)?;
            many.iter().find(|s| ***s == local).map(|s| (*s).clone())
        }
    }
}

fn first_existing(siblings: &BTreeSet<String>, candidates: impl IntoIterator<Item = String>) -> Option<String> {
    candidates.into_iter().find(|c| siblings.contains(c))
}

fn python_imports(path: &str, content: &str, siblings: &BTreeSet<String>, out: &mut BTreeSet<String>) {
    let here = dir_of(path);
    let module_files = |base: &str| vec![format!("{base}.py"), format!("{base}/__init__.py")];
    let resolve_abs = |module: &str| -> Option<String> {
        let rel = module.replace('.', "/");
        let local = join(here, &rel).map(|p| module_files(&p)).unwrap_or_default();
        first_existing(siblings, local.into_iter().chain(module_files(&rel)))
    };
    for line in content.lines() {
        if let Some(c) = PY_IMPORT.captures(line) {
            for part in c[1].split(',') {
                let module = part.split_whitespace().next().unwrap_or("");
                if let Some(hit) = resolve_abs(module) {
                    out.insert(hit);
                }
            }
        } else if let Some(c) = PY_FROM.captures(line) {
            let dots = c[1].len();
            let module = &c[2];
            let names: Vec<&str> = c[3].split(',').map(str::trim).filter(|n| !n.is_empty() && *n != "*").collect();
            let names: Vec<&str> = names.iter().filter_map(|n| n.split_whitespace().next()).collect();
            let rel = module.replace('.', "/");
            let pkg = if dots > 0 {
                let mut base = here.to_string();
                for _ in 1..dots {
                    base = dir_of(&base).to_string();
                }
                if rel.is_empty() {
                    Some(base)
                } else {
                    join(&base, &rel)
                }
            } else {
                None
            };
            match pkg {
                Some(pkg) => {
                    if !rel.is_empty() {
                        if let Some(hit) = first_existing(siblings, module_files(&pkg)) {
                            out.insert(hit);
                        }
                    }
                    for n in &names {
                        if let Some(hit) = join(&pkg, n).and_then(|p| first_existing(siblings, module_files(&p))) {
                            out.insert(hit);
                        }
                    }
                }
                None => {
                    if let Some(hit) = resolve_abs(module) {
                        out.insert(hit);
                    }
                    // Imported names may themselves be submodules.
                    for n in &names {
                        if let Some(hit) = resolve_abs(&format!("{module}.{n}")) {
                            out.insert(hit);
                        }
                    }
                }
            }
        }
    }
}

fn javascript_imports(path: &str, content: &str, siblings: &BTreeSet<String>, out: &mut BTreeSet<String>) {
    let here = dir_of(path);
    for line in content.lines() {
        for c in JS_SPEC.captures_iter(line) {
            let spec = (1..=4).find_map(|i| c.get(i)).map(|m| m.as_str()).unwrap_or("");
            let base = if spec.starts_with("./") || spec.starts_with("../") {
                join(here, spec)
            } else {
                normalize_path(spec)
            };
            let Some(base) = base else { continue };
            let candidates = JS_EXTS
                .iter()
                .map(|e| format!("{base}{e}"))
                .chain(["index.js", "index.mjs"].iter().map(|i| join(&base, i).unwrap_or_default()));
            if let Some(hit) = first_existing(siblings, candidates) {
                out.insert(hit);
            }
        }
    }
}

fn c_includes(path: &str, content: &str, siblings: &BTreeSet<String>, out: &mut BTreeSet<String>) {
    let here = dir_of(path);
    for line in content.lines() {
        if let Some(c) = C_INCLUDE.captures(line) {
            let target = &c[2];
            let local = join(here, target).filter(|p| siblings.contains(p));
            let hit = local
                .or_else(|| normalize_path(target).filter(|p| siblings.contains(p)))
                .or_else(|| suffix_match(siblings, target, path));
            if let Some(hit) = hit {
                out.insert(hit);
            }
        }
    }
}

fn java_imports(path: &str, content: &str, siblings: &BTreeSet<String>, out: &mut BTreeSet<String>) {
    for line in content.lines() {
        if let Some(c) = JAVA_IMPORT.captures(line) {
            let rel = c[1].replace('.', "/");
            if c.get(2).is_some() {
                let dir_suffix = format!("{rel}/");
                for s in siblings.iter().filter(|s| s.ends_with(".java")) {
                    let d = format!("{}/", dir_of(s));
                    if d == dir_suffix || d.ends_with(&format!("/{dir_suffix}")) {
                        out.insert(s.clone());
                    }
                }
            } else if let Some(hit) = suffix_match(siblings, &format!("{rel}.java"), path) {
                out.insert(hit);
            } else if let Some((outer, _)) = rel.rsplit_once('/') {
                // Static member import or nested class: try the enclosing type.
                if let Some(hit) = suffix_match(siblings, &format!("{outer}.java"), path) {
                    out.insert(hit);
                }
            }
        }
    }
}

fn csharp_usings(content: &str, siblings: &BTreeSet<String>, out: &mut BTreeSet<String>) {
    for line in content.lines() {
        if let Some(c) = CS_USING.captures(line) {
            let rel = c[1].replace('.', "/");
            for s in siblings.iter().filter(|s| s.ends_with(".cs")) {
                let d = dir_of(s);
                let file_match = s.strip_suffix(".cs").is_some_and(|stem| stem == rel || stem.ends_with(&format!("/{rel}")));
                let dir_match = d == rel || d.ends_with(&format!("/{rel}"));
                if file_match || dir_match {
                    out.insert(s.clone());
                }
            }
        }
    }
}

/// Sibling files referenced by import/include statements of `file`.
/// References that match no sibling are ignored.
pub fn extract_imports(file: &DocumentRecord, siblings: &BTreeSet<String>) -> BTreeSet<String> {
    let mut out = BTreeSet::new();
    let (path, content) = (file.path.as_str(), file.content.as_str());
    match spec_for(file).name {
        "python" => python_imports(path, content, siblings, &mut out),
        "javascript" => javascript_imports(path, content, siblings, &mut out),
        "c" | "cpp" => c_includes(path, content, siblings, &mut out),
        "java" => java_imports(path, content, siblings, &mut out),
        "csharp" => csharp_usings(content, siblings, &mut out),
        _ => {
            python_imports(path, content, siblings, &mut out);
            javascript_imports(path, content, siblings, &mut out);
            c_includes(path, content, siblings, &mut out);
        }
    }
    out.remove(path);
    out
}

/// The repository graph implied by the files' import statements.
pub fn build_graph(repo_id: &str, files: &[&DocumentRecord]) -> RepoGraph {
    let nodes: BTreeSet<String> = files.iter().map(|f| f.path.clone()).collect();
    let edges: Vec<(String, String)> = files
        .iter()
        .flat_map(|f| extract_imports(f, &nodes).into_iter().map(|dep| (f.path.clone(), dep)))
        .collect();
    RepoGraph::new(repo_id, nodes, edges)
}

fn comment_leader(spec: &LanguageSpec) -> &'static str {
    if spec.line_comments.contains(&"//") {
        "//"
    } else {
        spec.line_comments.first().copied().unwrap_or("//")
    }
}

/// The separator line preceding a file inside a repository document.
pub fn separator_line(file: &DocumentRecord) -> String {
    format!("{} FILE: {}", comment_leader(spec_for(file)), file.path)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RepoDocument {
    pub repo_id: String,
    pub ordered_paths: Vec<String>,
    /// Each file as `<separator>\n<content>\n`, in order.
    pub content: String,
    pub broken_edges: Vec<BrokenEdge>,
}

impl RepoDocument {
    /// Recovers `(path, content)` pairs from the concatenation.
    pub fn split(&self) -> Option<Vec<(String, String)>> {
        let mut out = Vec::new();
        let mut rest = self.content.as_str();
        for (k, path) in self.ordered_paths.iter().enumerate() {
            let header_end = rest.find('\n')?;
            if !rest[..header_end].ends_with(&format!(" FILE: {path}")) {
                return None;
            }
            rest = &rest[header_end + 1..];
            let end = match self.ordered_paths.get(k + 1) {
                Some(next) => {
                    let marker = format!(" FILE: {next}\n");
                    let mut search = 0;
                    loop {
                        let at = search + rest[search..].find(&marker)?;
                        let line_start = rest[..at].rfind('\n').map_or(0, |i| i + 1);
                        if line_start > 0 && !rest[line_start..at].contains(' ') {
                            break line_start - 1;
                        }
                        search = at + 1;
                    }
                }
                None => rest.len().checked_sub(1)?,
            };
            out.push((path.clone(), rest[..end].to_string()));
            rest = &rest[end + 1..];
        }
        Some(out)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RepoParams {
    pub min_files: usize,
    /// Run the built-in bracket/indent check before grouping.
    pub syntax_check: bool,
}

impl Default for RepoParams {
    fn default() -> Self {
        Self {
            min_files: 2,
            syntax_check: false,
        }
    }
}

#[derive(Debug, Clone)]
pub struct RepoBuild {
    pub documents: Vec<RepoDocument>,
    /// Files of repositories below `min_files`, flagged `repo:single-file`.
    pub dropped: Vec<DocumentRecord>,
    /// Records without a repo_id, untouched.
    pub passthrough: Vec<DocumentRecord>,
}

impl RepoBuild {
    pub fn broken_edges(&self) -> impl Iterator<Item = &BrokenEdge> {
        self.documents.iter().flat_map(|d| d.broken_edges.iter())
    }
}

pub fn build_repo_documents(records: Vec<DocumentRecord>, params: &RepoParams) -> Result<RepoBuild, RepoError> {
    let mut repos: BTreeMap<String, Vec<DocumentRecord>> = BTreeMap::new();
    let mut passthrough = Vec::new();
    for r in records {
        if r.repo_id.is_empty() {
            passthrough.push(r);
        } else {
            repos.entry(r.repo_id.clone()).or_default().push(r);
        }
    }
    for (repo_id, files) in &repos {
        let mut seen = BTreeSet::new();
        for f in files {
            if !seen.insert(f.path.as_str()) {
                return Err(RepoError::DuplicatePath {
                    repo_id: repo_id.clone(),
                    path: f.path.clone(),
                });
            }
        }
    }

    let min_files = params.min_files.max(1);
    let mut dropped = Vec::new();
    let mut kept = Vec::new();
    for (repo_id, files) in repos {
        if files.len() < min_files {
            for mut f in files {
                f.flags.insert("repo:single-file".into());
                dropped.push(f);
            }
        } else {
            kept.push((repo_id, files));
        }
    }

    let documents = kept
        .par_iter()
        .map(|(repo_id, files)| {
            let refs: Vec<&DocumentRecord> = files.iter().collect();
            let graph = build_graph(repo_id, &refs);
            let topo = topo_order(&graph);
            let by_path: BTreeMap<&str, &DocumentRecord> = files.iter().map(|f| (f.path.as_str(), f)).collect();
            let mut content = String::new();
            for p in &topo.order {
                let f = by_path[p.as_str()];
                content.push_str(&separator_line(f));
                content.push('\n');
                content.push_str(&f.content);
                content.push('\n');
            }
            RepoDocument {
                repo_id: repo_id.clone(),
                ordered_paths: topo.order,
                content,
                broken_edges: topo.broken,
            }
        })
        .collect();
    Ok(RepoBuild {
        documents,
        dropped,
        passthrough,
    })
}

/// Turns a repository document back into a record for the next stage.
/// Metadata comes from the repository's files: the most common language,
/// the shared license (or an `AND` of the distinct ones) and the first file's
/// source.
pub fn repo_record(doc: &RepoDocument, files: &[&DocumentRecord], counter: &dyn TokenCounter) -> DocumentRecord {
    let mut langs: BTreeMap<&str, usize> = BTreeMap::new();
    for f in files {
        *langs.entry(f.language.as_str()).or_default() += 1;
    }
    let language = langs
        .iter()
        .fold(("unknown", 0), |acc, (l, c)| if *c > acc.1 { (*l, *c) } else { acc })
        .0;
    let licenses: BTreeSet<&str> = files.iter().map(|f| f.license.as_str()).collect();
    let confidence = files.iter().map(|f| f.language_confidence).fold(f64::INFINITY, f64::min);
    let mut rec = DocumentRecord::new(format!("repo:{}", doc.repo_id), Modality::Code, String::new());
    rec.repo_id = doc.repo_id.clone();
    rec.language = language.to_string();
    rec.language_confidence = if confidence.is_finite() { confidence } else { 0.0 };
    rec.license = licenses.into_iter().collect::<Vec<_>>().join(" AND ");
    rec.source_name = files.first().map(|f| f.source_name.clone()).unwrap_or_default();
    rec.set_content(doc.content.clone(), counter);
    rec
}

/// Pluggable syntax validation for code files.
pub trait SyntaxCheck: Send + Sync {
    fn check(&self, rec: &DocumentRecord) -> Result<(), String>;
}

/// Balanced `()[]{}` outside strings and comments; for Python, no line
/// indented with a mix of tabs and spaces.
#[derive(Debug, Clone, Copy, Default)]
pub struct BracketChecker;

impl SyntaxCheck for BracketChecker {
    fn check(&self, rec: &DocumentRecord) -> Result<(), String> {
        let spec = spec_for(rec);
        if spec.docstrings {
            for (i, line) in rec.content.lines().enumerate() {
                let indent: String = line.chars().take_while(|c| *c == ' ' || *c == '\t').collect();
                if indent.contains(' ') && indent.contains('\t') {
                    return Err(format!("mixed indentation on line {}", i + 1));
                }
            }
        }
        let mut stack: Vec<char> = Vec::new();
        let mut in_block: Option<&str> = None;
        for (i, line) in rec.content.lines().enumerate() {
            let bytes = line.as_bytes();
            let mut j = 0;
            let mut quote: Option<u8> = None;
            while j < bytes.len() {
                let rest = &line[j..];
                if let Some(close) = in_block {
                    if rest.starts_with(close) {
                        in_block = None;
                        j += close.len();
                    } else {
                        j += 1;
                    }
                    continue;
                }
                let b = bytes[j];
                if let Some(q) = quote {
                    if b == b'\\' {
                        j += 1;
                    } else if b == q {
                        quote = None;
                    }
                    j += 1;
                    continue;
                }
                if spec.line_comments.iter().any(|m| rest.starts_with(m)) {
                    break;
                }
                if let Some((open, close)) = spec.block_comment {
                    if rest.starts_with(open) {
                        in_block = Some(close);
                        j += open.len();
                        continue;
                    }
                }
                match b {
                    b'"' | b'\'' | b'`' => quote = Some(b),
                    b'(' | b'[' | b'{' => stack.push(b as char),
                    b')' | b']' | b'}' => {
                        let want = match b {
                            b')' => '(',
                            b']' => '[',
                            _ => '{',
                        };
                        if stack.pop() != Some(want) {
                            return Err(format!("unbalanced {:?} on line {}", b as char, i + 1));
                        }
                    }
                    _ => {}
                }
                j += 1;
            }
        }
        match stack.last() {
            Some(c) => Err(format!("unclosed {c:?}")),
            None => Ok(()),
        }
    }
}

/// Rejects with reason `syntax` when the checker fails.
pub fn validate_syntax(rec: &DocumentRecord, checker: &dyn SyntaxCheck) -> Decision {
    match checker.check(rec) {
        Ok(()) => Decision::Keep,
        Err(_) => Decision::Reject("syntax".into()),
    }
}
