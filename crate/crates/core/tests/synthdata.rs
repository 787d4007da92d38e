//! Synthetic corpus: determinism, ground-truth consistency and persistence.

use emoc_core::facemodel::{emotion_au_template, Emotion, NUM_EMOTIONS};
use emoc_core::synthdata::{
    corpus_stats, generate_corpus, load_corpus, ramp, save_corpus, Corpus, SynthSpec, KEYPOINT_DIM,
    NUM_LABELS, RAMP_DECAY,
};
use emoc_core::CoreError;
use proptest::prelude::*;

fn small(seed: u64) -> SynthSpec {
    SynthSpec {
        seed,
        n_speakers: 3,
        n_utterances: 8,
        frames_per_utterance: 30,
        ..SynthSpec::default()
    }
}

fn assert_same(a: &Corpus, b: &Corpus) {
    assert_eq!(a.utterances.len(), b.utterances.len());
    for (u, v) in a.utterances.iter().zip(&b.utterances) {
        assert_eq!(u, v);
    }
}

#[test]
fn same_seed_same_corpus() {
    assert_same(
        &generate_corpus(&small(4)).unwrap(),
        &generate_corpus(&small(4)).unwrap(),
    );
    let a = generate_corpus(&small(4)).unwrap();
    let b = generate_corpus(&small(5)).unwrap();
    assert_ne!(a.utterances[0].features, b.utterances[0].features);
}

#[test]
fn au_readout_inverts_the_generator() {
    let c = generate_corpus(&small(0)).unwrap();
    for u in &c.utterances {
        for t in [0, 5, 29] {
            let au = c.model.au_readout(u.coeffs.row(t));
            for (a, b) in au.iter().zip(u.au.row(t)) {
                assert!((a - b).abs() < 1e-9, "{} t {t}: {a} vs {b}", u.dir_name());
            }
        }
    }
}

#[test]
fn keypoints_are_the_fixed_linear_map_of_coefficients() {
    let c = generate_corpus(&small(1)).unwrap();
    let u = &c.utterances[3];
    assert_eq!(u.keypoints.cols(), KEYPOINT_DIM);
    for t in 0..u.num_frames() {
        assert_eq!(c.model.keypoints(u.coeffs.row(t)), u.keypoints.row(t));
    }
}

#[test]
fn emotion_builds_up_along_the_template() {
    let c = generate_corpus(&small(2)).unwrap();
    let u = c
        .utterances
        .iter()
        .find(|u| u.emotion != Emotion::Calm && u.label == 3)
        .expect("a label-3 utterance");
    let t = emotion_au_template(u.emotion);
    // Lip AUs overlap some templates and oscillate, so compare window means.
    let proj = |r: std::ops::Range<usize>| {
        let n = r.len() as f64;
        r.map(|i| {
            u.au.row(i)
                .iter()
                .zip(&t.0)
                .map(|(a, w)| a * w)
                .sum::<f64>()
        })
        .sum::<f64>()
            / n
    };
    let early = proj(0..3);
    let late = proj(20..30);
    assert!(late > early, "{early} -> {late}");
}

#[test]
fn ramp_closed_form() {
    assert_eq!(ramp(-1), 0.0);
    assert!((ramp(0) - (1.0 - RAMP_DECAY)).abs() < 1e-15);
    for t in 0..50 {
        assert!(ramp(t + 1) > ramp(t));
        assert!(ramp(t) < 1.0);
    }
}

#[test]
fn default_corpus_covers_every_cell() {
    let c = generate_corpus(&SynthSpec::default()).unwrap();
    let s = corpus_stats(&c).unwrap();
    assert_eq!(s.n_frames, 20 * 10 * 100);
    assert_eq!(s.emotion_counts.len(), NUM_EMOTIONS);
    assert_eq!(s.label_counts.iter().sum::<usize>(), 200);
    assert!(s.label_counts.iter().all(|&n| n > 0));
    assert!(s.median_adjacent_delta > 0.0);
    assert!(s.coeff_abs_max.is_finite());
    assert_eq!(s.label_counts.len(), NUM_LABELS);
}

#[test]
fn saved_corpus_loads_back_and_saves_identically() {
    let c = generate_corpus(&small(6)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    save_corpus(&c, &a).unwrap();
    let back = load_corpus(&a).unwrap();
    assert_eq!(back.spec, c.spec);
    assert_same(&back, &c);
    save_corpus(&back, &b).unwrap();
    let mut files: Vec<_> = walk(&a);
    files.sort();
    assert!(!files.is_empty());
    for rel in files {
        assert_eq!(
            std::fs::read(a.join(&rel)).unwrap(),
            std::fs::read(b.join(&rel)).unwrap(),
            "{rel:?}"
        );
    }
}

fn walk(root: &std::path::Path) -> Vec<std::path::PathBuf> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push(p.strip_prefix(root).unwrap().to_path_buf());
            }
        }
    }
    out
}

#[test]
fn invalid_specs_are_rejected() {
    let bad = [
        SynthSpec {
            n_speakers: 0,
            ..SynthSpec::default()
        },
        SynthSpec {
            frames_per_utterance: 0,
            ..SynthSpec::default()
        },
        SynthSpec {
            emotion_weights: vec![[0.5; NUM_LABELS]; NUM_EMOTIONS],
            ..SynthSpec::default()
        },
        SynthSpec {
            emotion_gain: f64::NAN,
            ..SynthSpec::default()
        },
    ];
    for spec in bad {
        assert!(matches!(
            generate_corpus(&spec),
            Err(CoreError::InvalidSpec(_))
        ));
    }
    assert!(load_corpus(std::path::Path::new("/nonexistent/corpus")).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn generated_values_are_finite(seed in any::<u64>()) {
        let c = generate_corpus(&SynthSpec {
            seed,
            n_speakers: 2,
            n_utterances: 2,
            frames_per_utterance: 10,
            ..SynthSpec::default()
        })
        .unwrap();
        for u in &c.utterances {
            prop_assert!(u.features.is_finite() && u.coeffs.is_finite() && u.au.is_finite());
            prop_assert!(u.source.validate().is_ok());
        }
    }
}
