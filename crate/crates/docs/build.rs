//! Refuses to build when the concept trace is incomplete or stale.

#[path = "src/trace.rs"]
#[allow(dead_code)]
mod trace;

use std::path::PathBuf;

fn main() {
    let manifest =
        PathBuf::from(std::env::var("CARGO_MANIFEST_DIR").expect("cargo sets CARGO_MANIFEST_DIR"));
    let root = manifest.join("../..");
    let path = manifest.join("trace.toml");
    println!("cargo:rerun-if-changed={}", path.display());
    let text = std::fs::read_to_string(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
    let file = trace::TraceFile::parse(&text).unwrap_or_else(|e| panic!("{e}"));
    for f in file.referenced_files() {
        println!("cargo:rerun-if-changed={}", root.join(f).display());
    }
    if let Err(problems) = trace::validate(&file, &root) {
        panic!("concept trace is incomplete:\n  {}", problems.join("\n  "));
    }
}
