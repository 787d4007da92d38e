//! End-to-end behavior of the `emoc` binary on a tiny configuration.

mod common;

use common::*;
use emoc_cli::config::RunConfig;
use emoc_core::synthdata::NUM_KEYPOINTS;

#[test]
fn help_and_version_succeed() {
    assert_eq!(code(&emoc(&["--help"])), 0);
    assert_eq!(code(&emoc(&["--version"])), 0);
}

#[test]
fn usage_errors_exit_one() {
    assert_eq!(code(&emoc(&[])), 1);
    assert_eq!(code(&emoc(&["launch"])), 1);
    assert_eq!(code(&emoc(&["synth"])), 1);
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("c");
    assert_eq!(
        code(&emoc(&["synth", "--preset", "huge", "--out", s(&out)])),
        1
    );
    let bad = emoc_env(&["synth", "--out", s(&out)], &[("EMOC_THREADS", "0")]);
    assert_eq!(code(&bad), 1, "{}", describe(&bad));
}

#[test]
fn bad_config_files() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("c");
    let cfg = dir.path().join("bad.toml");
    std::fs::write(&cfg, "[synth]\nn_speakers = 0\n").unwrap();
    assert_eq!(
        code(&emoc(&["synth", "--config", s(&cfg), "--out", s(&out)])),
        1
    );
    // A misspelled key must not be silently ignored.
    std::fs::write(&cfg, "[train]\nlearning_rate = 1\n").unwrap();
    assert_eq!(
        code(&emoc(&["synth", "--config", s(&cfg), "--out", s(&out)])),
        1
    );
    std::fs::write(&cfg, "[train.weights]\nalpah = 1\n").unwrap();
    assert_eq!(
        code(&emoc(&["synth", "--config", s(&cfg), "--out", s(&out)])),
        1
    );
    let missing = dir.path().join("missing.toml");
    assert_eq!(
        code(&emoc(&["synth", "--config", s(&missing), "--out", s(&out)])),
        2
    );
}

#[test]
fn unwritable_output_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("plain");
    std::fs::write(&file, "x").unwrap();
    let cfg = dir.path().join("tiny.toml");
    std::fs::write(&cfg, TINY_CONFIG).unwrap();
    let out = emoc(&[
        "synth",
        "--config",
        s(&cfg),
        "--out",
        s(&file.join("corpus")),
    ]);
    assert_eq!(code(&out), 2, "{}", describe(&out));
    let missing = dir.path().join("no_corpus");
    let out = emoc(&[
        "train",
        "--config",
        s(&cfg),
        "--corpus",
        s(&missing),
        "--out",
        s(&dir.path().join("r")),
    ]);
    assert_eq!(code(&out), 2, "{}", describe(&out));
}

#[test]
fn written_config_round_trips_through_the_hash() {
    let dir = tempfile::tempdir().unwrap();
    let t = TinyRun::new(dir.path(), TINY_CONFIG);
    let direct = RunConfig::load(&t.config, "smoke").unwrap();
    let written = RunConfig::load(&t.run.join("config.toml"), "full").unwrap();
    assert_eq!(direct, written);
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(t.run.join("manifest.json")).unwrap())
            .unwrap();
    assert_eq!(manifest["config_hash"], direct.hash());
    assert_eq!(manifest["seeds"]["train"], 0);
    assert_eq!(manifest["command"], "train");
    for f in [
        "model.emoc",
        "mapping.emoc",
        "training_log.csv",
        "mapping_log.csv",
    ] {
        assert!(t.run.join(f).is_file(), "{f}");
    }
    assert_eq!(count_rows(&t.run.join("training_log.csv")), 4);
}

#[test]
fn training_a_mismatched_corpus_is_refused() {
    let dir = tempfile::tempdir().unwrap();
    let t = TinyRun::new(dir.path(), TINY_CONFIG);
    let other = dir.path().join("other.toml");
    std::fs::write(
        &other,
        TINY_CONFIG.replace("n_utterances = 10", "n_utterances = 9"),
    )
    .unwrap();
    let out = emoc(&[
        "train",
        "--config",
        s(&other),
        "--corpus",
        s(&t.corpus),
        "--out",
        s(&dir.path().join("r2")),
    ]);
    assert_eq!(code(&out), 2, "{}", describe(&out));
}

#[test]
fn tampered_run_config_is_detected() {
    let dir = tempfile::tempdir().unwrap();
    let t = TinyRun::new(dir.path(), TINY_CONFIG);
    let cfg = t.run.join("config.toml");
    let text = std::fs::read_to_string(&cfg).unwrap();
    std::fs::write(&cfg, text.replace("seed = 0", "seed = 1")).unwrap();
    let out = emoc(&[
        "infer",
        "--run",
        s(&t.run),
        "--wav",
        s(&one_second_wav(dir.path())),
        "--source",
        s(&t.source()),
        "--emotion",
        "anger",
        "--intensity",
        "0.5",
        "--out",
        s(&dir.path().join("inf")),
    ]);
    assert_eq!(code(&out), 2, "{}", describe(&out));
}

#[test]
fn inference_outputs_and_intensity_mapping() {
    let dir = tempfile::tempdir().unwrap();
    let t = TinyRun::new(dir.path(), TINY_CONFIG);
    let wav = one_second_wav(dir.path());
    let source = t.source();
    let infer = |name: &str, extra: &[&str]| {
        let out = dir.path().join(name);
        let mut args = vec![
            "infer",
            "--run",
            s(&t.run),
            "--wav",
            s(&wav),
            "--source",
            s(&source),
            "--emotion",
            "happiness",
            "--out",
        ];
        args.push(s(&out));
        args.extend_from_slice(extra);
        let res = emoc(&args);
        (out, res)
    };

    let (a, res) = infer("p0", &["--intensity", "0"]);
    assert_eq!(code(&res), 0, "{}", describe(&res));
    assert_eq!(count_rows(&a.join("coeffs.csv")), 25);
    assert_eq!(count_rows(&a.join("keypoints.csv")), 25 * NUM_KEYPOINTS);
    let frames = std::fs::read_dir(a.join("frames")).unwrap().count();
    assert_eq!(frames, 25);
    assert!(a.join("frames/frame_00024.pgm").is_file());

    let (b, res) = infer("l1w20", &["--label", "1", "--window", "20"]);
    assert_eq!(code(&res), 0, "{}", describe(&res));
    assert_eq!(
        std::fs::read(a.join("coeffs.csv")).unwrap(),
        std::fs::read(b.join("coeffs.csv")).unwrap()
    );
    assert_eq!(
        std::fs::read(a.join("keypoints.csv")).unwrap(),
        std::fs::read(b.join("keypoints.csv")).unwrap()
    );

    let (c, _) = infer("p1", &["--intensity", "1"]);
    let (d, _) = infer("l3w2", &["--label", "3", "--window", "2"]);
    assert_eq!(
        std::fs::read(c.join("coeffs.csv")).unwrap(),
        std::fs::read(d.join("coeffs.csv")).unwrap()
    );

    for bad in [["--intensity", "1.5"], ["--intensity", "-0.1"]] {
        let (_, res) = infer("bad", &bad);
        assert_eq!(code(&res), 1, "{}", describe(&res));
    }
    let (_, res) = infer("badlabel", &["--label", "4", "--window", "5"]);
    assert_eq!(code(&res), 1, "{}", describe(&res));
    let (_, res) = infer(
        "both",
        &["--intensity", "0.2", "--label", "1", "--window", "5"],
    );
    assert_eq!(code(&res), 1, "{}", describe(&res));
}

#[test]
fn inference_from_feature_csv() {
    let dir = tempfile::tempdir().unwrap();
    let t = TinyRun::new(dir.path(), TINY_CONFIG);
    let feats = t.corpus.join("spk001_utt003/features.csv");
    let out = dir.path().join("inf");
    ok(&[
        "infer",
        "--run",
        s(&t.run),
        "--features",
        s(&feats),
        "--source",
        s(&t.source()),
        "--emotion",
        "fear",
        "--label",
        "2",
        "--window",
        "5",
        "--out",
        s(&out),
    ]);
    assert_eq!(count_rows(&out.join("coeffs.csv")), 30);
    let res = emoc(&[
        "infer",
        "--run",
        s(&t.run),
        "--features",
        s(&feats),
        "--source",
        s(&t.source()),
        "--emotion",
        "bored",
        "--label",
        "2",
        "--window",
        "5",
        "--out",
        s(&out),
    ]);
    assert_eq!(code(&res), 1);
}

#[test]
fn sweep_is_thread_independent_and_refuses_calm() {
    let dir = tempfile::tempdir().unwrap();
    let t = TinyRun::new(dir.path(), TINY_CONFIG);
    let (one, three) = (dir.path().join("s1.csv"), dir.path().join("s3.csv"));
    let args = |out: &std::path::Path| {
        vec![
            "sweep".to_string(),
            "--run".into(),
            s(&t.run).into(),
            "--corpus".into(),
            s(&t.corpus).into(),
            "--out".into(),
            s(out).into(),
        ]
    };
    let a1 = args(&one);
    let a3 = args(&three);
    let r1 = emoc_env(
        &a1.iter().map(String::as_str).collect::<Vec<_>>(),
        &[("EMOC_THREADS", "1")],
    );
    let r3 = emoc_env(
        &a3.iter().map(String::as_str).collect::<Vec<_>>(),
        &[("EMOC_THREADS", "3")],
    );
    assert_eq!(code(&r1), 0, "{}", describe(&r1));
    assert_eq!(code(&r3), 0, "{}", describe(&r3));
    let text = std::fs::read_to_string(&one).unwrap();
    assert_eq!(text, std::fs::read_to_string(&three).unwrap());
    // Seven emotions, each a header plus three label rows.
    assert_eq!(text.lines().count(), 7 * 4);

    let calm = emoc(&[
        "sweep",
        "--run",
        s(&t.run),
        "--corpus",
        s(&t.corpus),
        "--emotion",
        "calm",
        "--out",
        s(&dir.path().join("calm.csv")),
    ]);
    assert_eq!(code(&calm), 1, "{}", describe(&calm));
}

#[test]
fn undertrained_model_fails_eval_with_exit_four() {
    let dir = tempfile::tempdir().unwrap();
    let t = TinyRun::new(dir.path(), TINY_CONFIG);
    let report = dir.path().join("metrics.json");
    let out = emoc(&[
        "eval",
        "--run",
        s(&t.run),
        "--corpus",
        s(&t.corpus),
        "--out",
        s(&report),
    ]);
    assert_eq!(code(&out), 4, "{}", describe(&out));
    let json: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap();
    assert!(json["metrics"]
        .as_array()
        .unwrap()
        .iter()
        .any(|m| m["pass"] == false));
    assert!(String::from_utf8_lossy(&out.stdout).contains("FAIL"));
}

#[test]
fn export_mesh_writes_an_obj() {
    let dir = tempfile::tempdir().unwrap();
    let t = TinyRun::new(dir.path(), TINY_CONFIG);
    let coeffs = t.corpus.join("spk000_utt001/coeffs.csv");
    let obj = dir.path().join("face.obj");
    ok(&[
        "export-mesh",
        "--coeffs",
        s(&coeffs),
        "--frame",
        "3",
        "--out",
        s(&obj),
    ]);
    let text = std::fs::read_to_string(&obj).unwrap();
    let n_v = text.lines().filter(|l| l.starts_with("v ")).count();
    let basis = emoc_core::facemodel::BlendshapeBasis::synthetic(0);
    assert_eq!(n_v, basis.num_vertices());
    assert_eq!(
        text.lines().filter(|l| l.starts_with("f ")).count(),
        basis.faces.len()
    );
    let out = emoc(&[
        "export-mesh",
        "--coeffs",
        s(&coeffs),
        "--frame",
        "999",
        "--out",
        s(&obj),
    ]);
    assert_eq!(code(&out), 2);
}

#[test]
fn training_is_bit_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let t = TinyRun::new(dir.path(), TINY_CONFIG);
    let again = dir.path().join("run2");
    ok(&[
        "train",
        "--config",
        s(&t.config),
        "--corpus",
        s(&t.corpus),
        "--out",
        s(&again),
    ]);
    for f in [
        "model.emoc",
        "mapping.emoc",
        "training_log.csv",
        "mapping_log.csv",
        "manifest.json",
    ] {
        assert_eq!(
            std::fs::read(t.run.join(f)).unwrap(),
            std::fs::read(again.join(f)).unwrap(),
            "{f}"
        );
    }
}
