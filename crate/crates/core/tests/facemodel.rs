//! Linear face model: shape synthesis, pose, projection and the AU tables.

use std::path::PathBuf;

use emoc_core::facemodel::basis::{FIT_COEFF_BOUND, JAW_OPEN_COLUMN};
use emoc_core::facemodel::{
    emotion_au_template, landmarks_csv, pose_transform, BlendshapeBasis, Coeff3dmm, Emotion,
    LandmarkRegion, AU_IDS, COEFF_DIM, EXP_DIM, FRAME_SIZE, ID_DIM, NUM_LANDMARKS,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn golden(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("tests/golden")
        .join(name)
}

fn random_coeff(rng: &mut ChaCha8Rng, bound: f64) -> Coeff3dmm {
    let v: Vec<f64> = (0..COEFF_DIM)
        .map(|_| rng.random_range(-bound..bound))
        .collect();
    Coeff3dmm::from_slice(&v).unwrap()
}

fn dist(a: [f64; 3], b: [f64; 3]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}

#[test]
fn zero_coefficients_give_the_mean_shape_exactly() {
    let b = BlendshapeBasis::synthetic(0);
    let shape = b.eval_shape(&Coeff3dmm::zeros()).unwrap();
    let flat: Vec<f64> = shape.iter().flatten().copied().collect();
    assert_eq!(flat, b.mean_shape.data());
}

#[test]
fn shape_is_linear_in_id_and_exp() {
    let b = BlendshapeBasis::synthetic(1);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mean = b.eval_shape(&Coeff3dmm::zeros()).unwrap();
    for _ in 0..10 {
        let c1 = random_coeff(&mut rng, 1.0);
        let c2 = random_coeff(&mut rng, 1.0);
        let mut sum = Coeff3dmm::zeros();
        for i in 0..ID_DIM {
            sum.id[i] = c1.id[i] + c2.id[i];
        }
        for i in 0..EXP_DIM {
            sum.exp[i] = c1.exp[i] + c2.exp[i];
        }
        let (s1, s2, s12) = (
            b.eval_shape(&c1).unwrap(),
            b.eval_shape(&c2).unwrap(),
            b.eval_shape(&sum).unwrap(),
        );
        for v in 0..b.num_vertices() {
            for a in 0..3 {
                let lhs = s12[v][a] - mean[v][a];
                let rhs = (s1[v][a] - mean[v][a]) + (s2[v][a] - mean[v][a]);
                assert!((lhs - rhs).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn pose_is_rigid() {
    let b = BlendshapeBasis::synthetic(0);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let shape = b.eval_shape(&random_coeff(&mut rng, 1.0)).unwrap();
    for _ in 0..10 {
        let angle = [
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
        ];
        let trans = [
            rng.random_range(-2.0..2.0),
            rng.random_range(-2.0..2.0),
            rng.random_range(-2.0..2.0),
        ];
        let posed = pose_transform(&shape, angle, trans).unwrap();
        for i in (0..shape.len()).step_by(7) {
            for j in (0..shape.len()).step_by(11) {
                assert!((dist(shape[i], shape[j]) - dist(posed[i], posed[j])).abs() < 1e-9);
            }
        }
    }
    assert!(pose_transform(&shape, [f64::NAN, 0.0, 0.0], [0.0; 3]).is_err());
}

#[test]
fn translation_shifts_every_landmark_equally() {
    let b = BlendshapeBasis::synthetic(0);
    let fit = b.frame_fit();
    let base = b.project_landmarks(&Coeff3dmm::zeros()).unwrap();
    let mut c = Coeff3dmm::zeros();
    c.trans = [0.5, -0.25, 3.0];
    let moved = b.project_landmarks(&c).unwrap();
    for (p, q) in base.iter().zip(&moved) {
        // Orthographic: depth translation is invisible; image y points down.
        assert!((q[0] - p[0] - 0.5 * fit.scale).abs() < 1e-9);
        assert!((q[1] - p[1] - 0.25 * fit.scale).abs() < 1e-9);
    }
}

#[test]
fn jaw_open_moves_only_jaw_and_mouth_landmarks() {
    let b = BlendshapeBasis::synthetic(0);
    let base = b.project_landmarks(&Coeff3dmm::zeros()).unwrap();
    let mut c = Coeff3dmm::zeros();
    c.exp[JAW_OPEN_COLUMN] = 1.0;
    let moved = b.project_landmarks(&c).unwrap();
    let mut moved_mouth = false;
    for ((p, q), region) in base.iter().zip(&moved).zip(&b.landmark_regions) {
        let d = (q[0] - p[0]).hypot(q[1] - p[1]);
        match region {
            LandmarkRegion::Jaw | LandmarkRegion::Mouth => moved_mouth |= d > 1e-3,
            _ => assert!(d < 1e-12, "{region:?} landmark moved by {d}"),
        }
    }
    assert!(moved_mouth);
}

#[test]
fn mean_face_landmarks_match_golden() {
    let b = BlendshapeBasis::synthetic(0);
    let lm = b.project_landmarks(&Coeff3dmm::zeros()).unwrap();
    assert_eq!(lm.len(), NUM_LANDMARKS);
    let text = landmarks_csv(&[lm]);
    let path = golden("mean_face_landmarks.csv");
    if std::env::var_os("EMOC_BLESS").is_some() {
        std::fs::create_dir_all(path.parent().unwrap()).unwrap();
        std::fs::write(&path, &text).unwrap();
    }
    let want = std::fs::read_to_string(&path).expect("golden file; regenerate with EMOC_BLESS=1");
    let parse = |s: &str| -> Vec<Vec<f64>> {
        s.lines()
            .skip(1)
            .map(|l| l.split(',').map(|v| v.parse().unwrap()).collect())
            .collect()
    };
    let (got, want) = (parse(&text), parse(&want));
    assert_eq!(got.len(), want.len());
    for (g, w) in got.iter().zip(&want) {
        for (a, b) in g.iter().zip(w) {
            assert!((a - b).abs() < 1e-9, "{g:?} vs {w:?}");
        }
    }
}

#[test]
fn basis_survives_a_checkpoint_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("basis.emoc");
    let b = BlendshapeBasis::synthetic(3);
    b.save(&path).unwrap();
    assert_eq!(BlendshapeBasis::load(&path).unwrap(), b);
}

#[test]
fn coefficient_vector_round_trips() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let c = random_coeff(&mut rng, 2.0);
    assert_eq!(Coeff3dmm::from_slice(&c.to_vec()).unwrap(), c);
    assert!(Coeff3dmm::from_slice(&[0.0; COEFF_DIM - 1]).is_err());
    let mut bad = c.to_vec();
    bad[100] = f64::NAN;
    assert!(Coeff3dmm::from_slice(&bad)
        .and_then(|c| c.validate())
        .is_err());
}

#[test]
fn action_unit_tables_are_frozen() {
    assert_eq!(
        AU_IDS,
        [1, 2, 4, 5, 6, 7, 9, 10, 12, 14, 15, 17, 20, 23, 25, 26, 45]
    );
    let table: [(&str, &[u8]); 8] = [
        ("anger", &[4, 5, 7, 23]),
        ("contempt", &[12, 14]),
        ("disappointment", &[1, 15]),
        ("fear", &[1, 2, 5, 25]),
        ("sadness", &[1, 4, 15]),
        ("calm", &[]),
        ("surprise", &[1, 2, 5, 26]),
        ("happiness", &[6, 12, 25]),
    ];
    for (name, aus) in table {
        let e: Emotion = name.parse().unwrap();
        assert_eq!(e.action_units(), aus);
        let t = emotion_au_template(e);
        assert!(t.is_valid());
        assert_eq!(t.active(), aus.to_vec());
        assert_eq!(t.norm(), (aus.len() as f64).sqrt());
    }
    assert!("bored".parse::<Emotion>().is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn bounded_coefficients_stay_inside_the_frame(seed in any::<u64>()) {
        let b = BlendshapeBasis::synthetic(0);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let c = random_coeff(&mut rng, FIT_COEFF_BOUND);
        for p in b.project_landmarks(&c).unwrap() {
            prop_assert!(p[0] > 0.0 && p[0] < FRAME_SIZE as f64);
            prop_assert!(p[1] > 0.0 && p[1] < FRAME_SIZE as f64);
        }
    }
}
