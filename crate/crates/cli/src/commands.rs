use std::fs;
use std::path::Path;

use emoc_autodiff::checkpoint;
use emoc_core::csvio;
use emoc_core::dsp::{load_wav, mfcc, MfccConfig};
use emoc_core::evalharness::{evaluate_held_out, sweep_utterance, IntensityOracle, Thresholds};
use emoc_core::facemodel::{pose_transform, to_obj, BlendshapeBasis, Emotion, FRAME_SIZE};
use emoc_core::finegrain::{grid_sweep, infer_sequence, IntensityGrid, IntensityMatrix};
use emoc_core::mappingnet::{
    rasterize_keypoints, train_mappingnet, write_frames, write_mapping_log, MappingDataset,
    MappingNet,
};
use emoc_core::model::EmoSpeaker;
use emoc_core::synthdata::{generate_corpus, load_corpus, save_corpus, Corpus, FEATURE_DIM};
use emoc_core::training::{split_corpus, train_joint, write_training_log};

use crate::config::RunConfig;
use crate::error::{CliError, CliResult};
use crate::manifest::RunManifest;
use crate::{ConfigArgs, InferArgs};

pub const CONFIG_FILE: &str = "config.toml";
pub const MODEL_FILE: &str = "model.emoc";
pub const MAPPING_FILE: &str = "mapping.emoc";
pub const TRAINING_LOG: &str = "training_log.csv";
pub const MAPPING_LOG: &str = "mapping_log.csv";

fn data_err(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Data(format!("{}: {e}", path.display()))
}

fn create_dir(dir: &Path) -> CliResult<()> {
    fs::create_dir_all(dir).map_err(|e| data_err(dir, e))
}

fn write_text(path: &Path, text: &str) -> CliResult<()> {
    fs::write(path, text).map_err(|e| data_err(path, e))
}

pub fn load_config(args: &ConfigArgs) -> CliResult<RunConfig> {
    match &args.config {
        Some(path) => RunConfig::load(path, &args.preset),
        None => RunConfig::preset(&args.preset),
    }
}

pub fn synth(args: &ConfigArgs, out: &Path, threads: usize) -> CliResult<()> {
    let cfg = load_config(args)?;
    let corpus = generate_corpus(&cfg.synth)?;
    create_dir(out)?;
    save_corpus(&corpus, out)?;
    write_text(&out.join(CONFIG_FILE), &cfg.to_toml())?;
    println!(
        "wrote {} utterances to {}",
        corpus.utterances.len(),
        out.display()
    );
    // The corpus owns manifest.json; the run manifest sits beside it.
    let m = RunManifest::new(
        "synth",
        &cfg,
        threads,
        vec![CONFIG_FILE.into(), "manifest.json".into()],
    );
    let text = serde_json::to_string_pretty(&m).expect("manifest serializes") + "\n";
    write_text(&out.join("run_manifest.json"), &text)
}

pub fn train(args: &ConfigArgs, corpus_dir: &Path, out: &Path, threads: usize) -> CliResult<()> {
    let cfg = load_config(args)?;
    let corpus = load_corpus(corpus_dir)?;
    if corpus.spec != cfg.synth {
        return Err(CliError::Data(format!(
            "{} was generated with a different [synth] section",
            corpus_dir.display()
        )));
    }
    create_dir(out)?;
    write_text(&out.join(CONFIG_FILE), &cfg.to_toml())?;
    let (train_idx, _) = split_corpus(&corpus, cfg.train.holdout_per_speaker)?;
    let steps = cfg.schedule.joint_steps(&cfg.train, train_idx.len());

    let mut model = EmoSpeaker::new(&cfg.model, cfg.train.seed)?;
    let mut log = Vec::with_capacity(steps);
    let result = train_joint(
        &mut model,
        &corpus,
        &train_idx,
        &cfg.train,
        steps,
        |step, _, b| {
            if step % 500 == 0 || step + 1 == steps {
                println!("joint step {step}/{steps}: total {:.6}", b.total);
            }
            log.push(*b);
            Ok(())
        },
    );
    // A rejected step leaves the parameters untouched, so `model` is the
    // last good state either way.
    checkpoint::save_module(&out.join(MODEL_FILE), &model)?;
    write_training_log(&out.join(TRAINING_LOG), &log)?;
    result?;

    let data = MappingDataset::from_corpus(&corpus, &train_idx)?;
    let mut net = MappingNet::new(&cfg.mapping.hidden, cfg.mapping.seed);
    let mut mlog = Vec::with_capacity(cfg.mapping.steps);
    let result = train_mappingnet(&mut net, &data, &cfg.mapping, |step, l| {
        if step % 500 == 0 || step + 1 == cfg.mapping.steps {
            println!("mapping step {step}/{}: l_m {l:.6}", cfg.mapping.steps);
        }
        mlog.push(l);
        Ok(())
    });
    checkpoint::save_module(&out.join(MAPPING_FILE), &net)?;
    write_mapping_log(&out.join(MAPPING_LOG), &mlog)?;
    result?;

    let outputs = [
        CONFIG_FILE,
        MODEL_FILE,
        TRAINING_LOG,
        MAPPING_FILE,
        MAPPING_LOG,
    ]
    .map(String::from)
    .to_vec();
    RunManifest::new("train", &cfg, threads, outputs).write(out)
}

/// A trained run directory, checked against its manifest.
pub struct LoadedRun {
    pub config: RunConfig,
    pub model: EmoSpeaker,
    pub mapping: MappingNet,
}

pub fn load_run(dir: &Path) -> CliResult<LoadedRun> {
    let manifest = RunManifest::read(dir)?;
    let path = dir.join(CONFIG_FILE);
    let text = fs::read_to_string(&path).map_err(|e| data_err(&path, e))?;
    let config = RunConfig::parse(&text, "full").map_err(|e| data_err(&path, e))?;
    if config.hash() != manifest.config_hash {
        return Err(CliError::Data(format!(
            "{}: config hash {} does not match the manifest's {}",
            dir.display(),
            config.hash(),
            manifest.config_hash
        )));
    }
    let mut model = EmoSpeaker::new(&config.model, config.train.seed)?;
    checkpoint::load_into(&mut model, &checkpoint::read(&dir.join(MODEL_FILE))?)?;
    let mut mapping = MappingNet::new(&config.mapping.hidden, config.mapping.seed);
    checkpoint::load_into(&mut mapping, &checkpoint::read(&dir.join(MAPPING_FILE))?)?;
    Ok(LoadedRun {
        config,
        model,
        mapping,
    })
}

fn parse_emotion(name: &str) -> CliResult<Emotion> {
    Ok(name.parse::<Emotion>()?)
}

pub fn infer(args: &InferArgs, threads: usize) -> CliResult<()> {
    let emotion = parse_emotion(&args.emotion)?;
    let grid = IntensityGrid::default();
    let (label, fl) = match (args.intensity, args.label, args.window) {
        (Some(p), _, _) => grid.select_cell(p)?,
        (None, Some(l), Some(w)) => (l, w),
        _ => {
            return Err(CliError::Usage(
                "give --intensity or both --label and --window".into(),
            ))
        }
    };
    let run = load_run(&args.run)?;
    let features = match (&args.wav, &args.features) {
        (Some(wav), _) => mfcc(&load_wav(wav)?, &MfccConfig::default())?.frames,
        (None, Some(path)) => csvio::read_frames(path)?.1,
        (None, None) => return Err(CliError::Usage("give --wav or --features".into())),
    };
    if features.cols() != FEATURE_DIM {
        return Err(CliError::Data(format!(
            "{} feature columns, expected {FEATURE_DIM}",
            features.cols()
        )));
    }
    let source = csvio::read_coeffs(&args.source)?
        .into_iter()
        .next()
        .ok_or_else(|| data_err(&args.source, "no coefficient rows"))?;
    let trace = infer_sequence(&run.model, &features, &source, emotion, label, fl)?;
    let keypoints = run.mapping.map_rows(&trace.coeffs)?;

    create_dir(&args.out)?;
    csvio::write_coeffs(&args.out.join("coeffs.csv"), &trace.stream()?)?;
    csvio::write_points3(&args.out.join("keypoints.csv"), &keypoints)?;
    let frames = rasterize_keypoints(&keypoints, FRAME_SIZE)?;
    write_frames(&args.out.join("frames"), &frames)?;
    println!(
        "{} frames for {} at label {label}, window {fl}",
        trace.coeffs.rows(),
        emotion.name()
    );
    let outputs = vec!["coeffs.csv".into(), "keypoints.csv".into(), "frames".into()];
    RunManifest::new("infer", &run.config, threads, outputs).write(&args.out)
}

fn held_out(run: &LoadedRun, corpus: &Corpus) -> CliResult<Vec<usize>> {
    Ok(split_corpus(corpus, run.config.train.holdout_per_speaker)?.1)
}

pub fn sweep(
    run_dir: &Path,
    corpus_dir: &Path,
    emotion: Option<&str>,
    out: &Path,
    threads: usize,
) -> CliResult<()> {
    let run = load_run(run_dir)?;
    let corpus = load_corpus(corpus_dir)?;
    let held = held_out(&run, &corpus)?;
    let oracle = IntensityOracle::new(&corpus.model);
    let emotions: Vec<Emotion> = match emotion {
        Some(name) => {
            let e = parse_emotion(name)?;
            oracle.direction(e)?;
            vec![e]
        }
        None => Emotion::ALL
            .into_iter()
            .filter(|&e| e != Emotion::Calm)
            .collect(),
    };
    let grid = IntensityGrid::default();
    let one = |e: Emotion| -> CliResult<IntensityMatrix> {
        let u = &corpus.utterances[sweep_utterance(&corpus, &held, e)?];
        Ok(grid_sweep(
            &run.model,
            &u.features,
            &u.source,
            e,
            &grid,
            &oracle,
        )?)
    };
    // Emotions are independent; results are gathered in input order, so
    // the output does not depend on the thread count.
    let chunk = emotions.len().div_ceil(threads.max(1)).max(1);
    let matrices: Vec<IntensityMatrix> = std::thread::scope(|s| {
        let handles: Vec<_> = emotions
            .chunks(chunk)
            .map(|part| s.spawn(|| part.iter().map(|&e| one(e)).collect::<Vec<_>>()))
            .collect();
        handles
            .into_iter()
            .flat_map(|h| h.join().expect("sweep worker panicked"))
            .collect::<CliResult<Vec<_>>>()
    })?;
    let text: String = matrices.iter().map(IntensityMatrix::to_csv).collect();
    write_text(out, &text)?;
    print!("{text}");
    Ok(())
}

pub fn eval(
    run_dir: &Path,
    corpus_dir: &Path,
    thresholds: Option<&Path>,
    out: &Path,
) -> CliResult<()> {
    let run = load_run(run_dir)?;
    let corpus = load_corpus(corpus_dir)?;
    let held = held_out(&run, &corpus)?;
    let thr = match thresholds {
        Some(p) => Thresholds::load(p)?,
        None => Thresholds::frozen(),
    };
    let report = evaluate_held_out(
        &run.model,
        &corpus,
        &held,
        run.config.train.idtex_window,
        &thr,
        run.config.train.seed,
    )?;
    write_text(out, &report.to_json())?;
    for m in &report.metrics {
        println!(
            "{} {:<34} {:.6} ({})",
            if m.pass { "PASS" } else { "FAIL" },
            m.name,
            m.value,
            m.threshold
        );
    }
    if report.all_pass() {
        Ok(())
    } else {
        let failed: Vec<&str> = report
            .metrics
            .iter()
            .filter(|m| !m.pass)
            .map(|m| m.name.as_str())
            .collect();
        Err(CliError::Acceptance(format!(
            "failed: {}",
            failed.join(", ")
        )))
    }
}

pub fn export_mesh(coeffs: &Path, frame: usize, basis_seed: u64, out: &Path) -> CliResult<()> {
    let stream = csvio::read_coeffs(coeffs)?;
    let c = stream
        .get(frame)
        .ok_or_else(|| data_err(coeffs, format!("no frame {frame} (have {})", stream.len())))?;
    let basis = BlendshapeBasis::synthetic(basis_seed);
    let shape = basis.eval_shape(c)?;
    let posed = pose_transform(&shape, c.angle, c.trans)?;
    write_text(out, &to_obj(&posed, &basis.faces))
}
