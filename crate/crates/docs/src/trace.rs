//! Machine-readable map from model concepts to the code and tests that
//! implement them. Shared by the build script and the library.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::Deserialize;

/// Concepts that must each appear exactly once in the trace file.
pub const REQUIRED: [&str; 13] = [
    "linear-face-model",
    "au-inventory",
    "emotion-au-map",
    "au-decoding",
    "au-contrastive-loss",
    "exp-loss",
    "emo-loss",
    "cls-loss",
    "pose-loss",
    "total-loss",
    "mapping-loss",
    "chained-window-inference",
    "intensity-matrix",
];

pub const MIN_ENTRIES: usize = 12;

#[derive(Clone, Debug, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TraceEntry {
    pub id: String,
    pub concept: String,
    pub module: String,
    /// `path#symbol`, relative to the workspace root.
    pub operation: String,
    /// `path#test_fn`, relative to the workspace root.
    pub tests: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TraceFile {
    #[serde(rename = "entry")]
    pub entries: Vec<TraceEntry>,
}

impl TraceFile {
    pub fn parse(text: &str) -> Result<Self, String> {
        toml::from_str(text).map_err(|e| format!("trace file: {e}"))
    }

    /// Every source file the entries point into.
    pub fn referenced_files(&self) -> Vec<String> {
        let mut files: Vec<String> = self
            .entries
            .iter()
            .flat_map(|e| std::iter::once(&e.operation).chain(&e.tests))
            .filter_map(|r| r.split_once('#').map(|(p, _)| p.to_string()))
            .collect();
        files.sort();
        files.dedup();
        files
    }
}

fn declares(source: &str, name: &str) -> bool {
    ["fn ", "const ", "struct ", "enum ", "static "]
        .iter()
        .any(|kw| {
            let needle = format!("{kw}{name}");
            source.match_indices(&needle).any(|(i, _)| {
                let next = source[i + needle.len()..].chars().next();
                matches!(next, Some('(' | '<' | ':' | ' ' | '{' | ';'))
            })
        })
}

/// Checks completeness and resolves every reference against files under
/// `root`. Returns all problems at once.
pub fn validate(trace: &TraceFile, root: &Path) -> Result<(), Vec<String>> {
    let mut problems = Vec::new();
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for e in &trace.entries {
        *counts.entry(e.id.as_str()).or_default() += 1;
    }
    for id in REQUIRED {
        match counts.get(id).copied().unwrap_or(0) {
            0 => problems.push(format!("missing concept {id}")),
            1 => {}
            n => problems.push(format!("concept {id} appears {n} times")),
        }
    }
    for (id, n) in &counts {
        if *n > 1 && !REQUIRED.contains(id) {
            problems.push(format!("concept {id} appears {n} times"));
        }
    }
    if trace.entries.len() < MIN_ENTRIES {
        problems.push(format!(
            "{} entries, need at least {MIN_ENTRIES}",
            trace.entries.len()
        ));
    }
    let mut cache: BTreeMap<String, Option<String>> = BTreeMap::new();
    let mut resolve = |id: &str, reference: &str, problems: &mut Vec<String>| {
        let Some((path, name)) = reference.split_once('#') else {
            problems.push(format!("{id}: {reference:?} is not path#symbol"));
            return;
        };
        let source = cache
            .entry(path.to_string())
            .or_insert_with(|| std::fs::read_to_string(root.join(path)).ok());
        match source {
            None => problems.push(format!("{id}: cannot read {path}")),
            Some(s) if !declares(s, name) => {
                problems.push(format!("{id}: {name} not found in {path}"))
            }
            Some(_) => {}
        }
    };
    for e in &trace.entries {
        if e.concept.trim().is_empty() || e.module.trim().is_empty() {
            problems.push(format!("{}: empty concept or module", e.id));
        }
        resolve(&e.id, &e.operation, &mut problems);
        if e.tests.is_empty() {
            problems.push(format!("{}: no tests", e.id));
        }
        for t in &e.tests {
            resolve(&e.id, t, &mut problems);
        }
    }
    if problems.is_empty() {
        Ok(())
    } else {
        Err(problems)
    }
}

fn code_ref(reference: &str) -> String {
    match reference.split_once('#') {
        Some((path, name)) => format!("`{name}` ({path})"),
        None => format!("`{reference}`"),
    }
}

/// The trace table as Markdown.
pub fn render_markdown(trace: &TraceFile) -> String {
    let mut s = String::from(
        "# Concept trace\n\n\
         Generated from `crates/docs/trace.toml`; do not edit by hand.\n\
         Regenerate with `EMOC_BLESS=1 cargo test -p emoc-docs --lib`.\n\n\
         | Concept | What it is | Module | Operation | Tests |\n\
         |---|---|---|---|---|\n",
    );
    for e in &trace.entries {
        let tests: Vec<String> = e.tests.iter().map(|t| code_ref(t)).collect();
        let _ = writeln!(
            s,
            "| `{}` | {} | `{}` | {} | {} |",
            e.id,
            e.concept.trim(),
            e.module,
            code_ref(&e.operation),
            tests.join("<br>")
        );
    }
    s
}
