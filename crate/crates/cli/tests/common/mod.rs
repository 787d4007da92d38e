//! Helpers shared by the CLI test targets.
#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

/// Small enough to train in seconds while still holding every non-Calm
/// emotion and at least 200 held-out frames for the probe.
pub const TINY_CONFIG: &str = r#"preset = "smoke"

[synth]
n_speakers = 4
n_utterances = 10
frames_per_utterance = 30

[train]
batch_utterances = 4
holdout_per_speaker = 2

[schedule]
joint_steps = 4

[mapping]
hidden = [8]
steps = 4
batch = 32
"#;

pub fn emoc(args: &[&str]) -> Output {
    emoc_env(args, &[])
}

pub fn emoc_env(args: &[&str], env: &[(&str, &str)]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_emoc"));
    cmd.args(args).env_remove("EMOC_THREADS");
    for (k, v) in env {
        cmd.env(k, v);
    }
    cmd.output().expect("emoc runs")
}

pub fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

pub fn describe(out: &Output) -> String {
    format!(
        "exit {:?}\nstdout:\n{}\nstderr:\n{}",
        out.status.code(),
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    )
}

pub fn ok(args: &[&str]) -> Output {
    let out = emoc(args);
    assert_eq!(code(&out), 0, "emoc {args:?}\n{}", describe(&out));
    out
}

pub fn s(p: &Path) -> &str {
    p.to_str().expect("utf-8 path")
}

/// Writes the config, synthesizes a corpus and trains on it.
pub struct TinyRun {
    pub config: PathBuf,
    pub corpus: PathBuf,
    pub run: PathBuf,
}

impl TinyRun {
    pub fn new(root: &Path, config: &str) -> Self {
        let cfg = root.join("tiny.toml");
        std::fs::write(&cfg, config).unwrap();
        let corpus = root.join("corpus");
        let run = root.join("run");
        ok(&["synth", "--config", s(&cfg), "--out", s(&corpus)]);
        ok(&[
            "train",
            "--config",
            s(&cfg),
            "--corpus",
            s(&corpus),
            "--out",
            s(&run),
        ]);
        Self {
            config: cfg,
            corpus,
            run,
        }
    }

    pub fn source(&self) -> PathBuf {
        self.corpus.join("spk000_utt000").join("source.csv")
    }
}

/// One second of a 16 kHz tone, written as PCM16.
pub fn one_second_wav(dir: &Path) -> PathBuf {
    let path = dir.join("tone.wav");
    let samples: Vec<f64> = (0..16_000)
        .map(|i| 0.3 * (2.0 * std::f64::consts::PI * 220.0 * i as f64 / 16_000.0).sin())
        .collect();
    emoc_core::dsp::write_wav_pcm16(&path, &samples).unwrap();
    path
}

pub fn count_rows(csv: &Path) -> usize {
    std::fs::read_to_string(csv).unwrap().lines().count() - 1
}
