//! Concept trace tooling. The trace file lives at `crates/docs/trace.toml`,
//! the rendered table at `crates/docs/TRACE.md`.

pub mod trace;

use std::path::PathBuf;

pub fn workspace_root() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../..")
}

pub fn trace_path() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("trace.toml")
}

pub fn rendered_path() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("TRACE.md")
}

pub fn load_trace() -> Result<trace::TraceFile, String> {
    let path = trace_path();
    let text = std::fs::read_to_string(&path).map_err(|e| format!("{}: {e}", path.display()))?;
    trace::TraceFile::parse(&text)
}

// These live here rather than under tests/ so they run before the
// acceptance target, whose known failure stops `cargo test`.
#[cfg(test)]
mod tests {
    use super::trace::{render_markdown, validate, REQUIRED};
    use super::{load_trace, rendered_path, workspace_root};

    #[test]
    fn trace_is_complete_and_resolves() {
        let t = load_trace().unwrap();
        validate(&t, &workspace_root()).unwrap();
        assert!(t.entries.len() >= 12);
        for id in REQUIRED {
            assert_eq!(t.entries.iter().filter(|e| e.id == id).count(), 1, "{id}");
        }
    }

    #[test]
    fn removing_any_required_entry_fails() {
        let full = load_trace().unwrap();
        for id in REQUIRED {
            let mut t = full.clone();
            t.entries.retain(|e| e.id != id);
            let problems = validate(&t, &workspace_root()).unwrap_err();
            assert!(
                problems.iter().any(|p| p.contains(id)),
                "{id}: {problems:?}"
            );
        }
    }

    #[test]
    fn duplicates_and_dangling_references_fail() {
        let full = load_trace().unwrap();
        let mut dup = full.clone();
        dup.entries.push(full.entries[0].clone());
        assert!(validate(&dup, &workspace_root()).is_err());

        let mut renamed = full.clone();
        renamed.entries[0].tests[0].push_str("_renamed");
        let problems = validate(&renamed, &workspace_root()).unwrap_err();
        assert!(problems[0].contains("not found"), "{problems:?}");

        let mut moved = full.clone();
        moved.entries[1].operation = "crates/core/src/nowhere.rs#AU_IDS".into();
        assert!(validate(&moved, &workspace_root()).unwrap_err()[0].contains("cannot read"));
    }

    #[test]
    fn rendered_table_is_current() {
        let text = render_markdown(&load_trace().unwrap());
        let path = rendered_path();
        if std::env::var_os("EMOC_BLESS").is_some() {
            std::fs::write(&path, &text).unwrap();
        }
        let on_disk =
            std::fs::read_to_string(&path).expect("TRACE.md; regenerate with EMOC_BLESS=1");
        assert!(
            on_disk == text,
            "{} is stale; regenerate with EMOC_BLESS=1",
            path.display()
        );
    }
}
