//! Coefficient-to-keypoint mapping: forward pass, loss, training and frames.

use std::path::PathBuf;

use emoc_autodiff::Tensor;
use emoc_core::facemodel::{BlendshapeBasis, Coeff3dmm, COEFF_DIM, FRAME_SIZE};
use emoc_core::mappingnet::{
    frame_file_name, keypoint_pixels, mapping_loss, rasterize_keypoints, rasterize_points,
    train_mappingnet, write_frames, write_mapping_log, LatentKeypoints, MappingConfig,
    MappingDataset, MappingNet, KEYPOINT_BOUND,
};
use emoc_core::synthdata::{generate_corpus, SynthSpec, KEYPOINT_DIM, NUM_KEYPOINTS};
use emoc_core::training::split_corpus;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn golden(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("tests/golden")
        .join(name)
}

fn random(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor {
    Tensor::matrix(
        rows,
        cols,
        (0..rows * cols)
            .map(|_| rng.random_range(-1.0..1.0))
            .collect(),
    )
}

#[test]
fn zero_weights_output_the_bias() {
    let mut net = MappingNet::new(&[16], 3);
    net.net.zero_weights();
    let last = net.net.layers.last_mut().unwrap();
    last.bias = Tensor::vector((0..KEYPOINT_DIM).map(|i| i as f64 * 0.1 - 2.0).collect());
    let want = last.bias.data().to_vec();
    let out = net
        .map_rows(&random(&mut ChaCha8Rng::seed_from_u64(0), 5, COEFF_DIM))
        .unwrap();
    for r in 0..5 {
        assert_eq!(out.row(r), want.as_slice());
    }
}

#[test]
fn linear_forward_matches_direct_evaluation() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut net = MappingNet::linear(2);
    net.net.layers[0].bias = random(&mut rng, 1, KEYPOINT_DIM)
        .reshape(&[KEYPOINT_DIM])
        .unwrap();
    let x = random(&mut rng, 4, COEFF_DIM);
    let out = net.map_rows(&x).unwrap();
    let (w, b) = (&net.net.layers[0].weight, &net.net.layers[0].bias);
    for r in 0..4 {
        for j in 0..KEYPOINT_DIM {
            let want: f64 = b.data()[j]
                + (0..COEFF_DIM)
                    .map(|i| x.row(r)[i] * w.data()[i * KEYPOINT_DIM + j])
                    .sum::<f64>();
            assert!((out.row(r)[j] - want).abs() < 1e-12);
        }
    }
    let single = net
        .map_coeffs(&Coeff3dmm::from_slice(x.row(2)).unwrap())
        .unwrap();
    assert_eq!(single.0, out.row(2));
    assert!(net.map_rows(&Tensor::zeros(&[2, COEFF_DIM - 1])).is_err());
}

#[test]
fn loss_closed_forms() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let net = MappingNet::new(&[8], 0);
    let x = random(&mut rng, 6, COEFF_DIM);
    let y = net.map_rows(&x).unwrap();
    assert_eq!(mapping_loss(&net, &x, &y).unwrap(), 0.0);
    // A unit offset on one coordinate of every row.
    let mut one = y.clone();
    for r in 0..6 {
        one.data_mut()[r * KEYPOINT_DIM + 4] += 1.0;
    }
    assert!((mapping_loss(&net, &x, &one).unwrap() - 1.0).abs() < 1e-12);
    // Translating every keypoint by the same 3-vector v costs sqrt(15) |v|.
    let v = [0.3, -0.4, 1.2];
    let mut moved = y.clone();
    for (i, val) in moved.data_mut().iter_mut().enumerate() {
        *val += v[i % 3];
    }
    let norm = v[0] * v[0] + v[1] * v[1] + v[2] * v[2];
    let want = (NUM_KEYPOINTS as f64).sqrt() * norm.sqrt();
    assert!((mapping_loss(&net, &x, &moved).unwrap() - want).abs() < 1e-12);
}

fn corpus_data() -> MappingDataset {
    let corpus = generate_corpus(&SynthSpec::default()).unwrap();
    let (train, _) = split_corpus(&corpus, 2).unwrap();
    MappingDataset::from_corpus(&corpus, &train).unwrap()
}

fn linear_cfg() -> MappingConfig {
    MappingConfig {
        hidden: Vec::new(),
        ..MappingConfig::default()
    }
}

fn final_loss(data: &MappingDataset, cfg: &MappingConfig) -> f64 {
    let mut net = MappingNet::new(&cfg.hidden, cfg.seed);
    train_mappingnet(&mut net, data, cfg, |_, _| Ok(())).unwrap();
    mapping_loss(&net, &data.coeffs, &data.keypoints).unwrap()
}

#[test]
fn realizable_targets_are_learned_and_shuffled_ones_are_not() {
    let data = corpus_data();
    let cfg = linear_cfg();
    assert!(cfg.steps <= 2000);
    let fit = final_loss(&data, &cfg);
    assert!(fit < 1e-3, "realizable loss {fit}");
    let control = final_loss(&data.shuffled(1), &cfg);
    assert!(control >= 10.0 * 1e-3, "shuffled loss {control}");
    assert!(control >= 10.0 * fit);
}

#[test]
fn training_is_deterministic() {
    let data = corpus_data();
    let cfg = MappingConfig {
        steps: 30,
        ..MappingConfig::default()
    };
    let run = || {
        let mut net = MappingNet::new(&cfg.hidden, cfg.seed);
        let log = train_mappingnet(&mut net, &data, &cfg, |_, _| Ok(())).unwrap();
        (
            log.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            net.net.checksum(),
        )
    };
    assert_eq!(run(), run());
}

#[test]
fn training_log_is_written() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("mapping_log.csv");
    write_mapping_log(&path, &[2.0, 1.5]).unwrap();
    assert_eq!(
        std::fs::read_to_string(path).unwrap(),
        "step,l_m\n0,2\n1,1.5\n"
    );
}

#[test]
fn mean_face_frame_matches_golden() {
    let b = BlendshapeBasis::synthetic(0);
    let frame = rasterize_points(
        &b.project_landmarks(&Coeff3dmm::zeros()).unwrap(),
        FRAME_SIZE,
    );
    let bytes = frame.to_pgm();
    let path = golden("mean_face.pgm");
    if std::env::var_os("EMOC_BLESS").is_some() {
        std::fs::create_dir_all(path.parent().unwrap()).unwrap();
        std::fs::write(&path, &bytes).unwrap();
    }
    let want = std::fs::read(&path).expect("golden file; regenerate with EMOC_BLESS=1");
    assert!(
        bytes == want,
        "mean-face frame differs from {}",
        path.display()
    );
}

#[test]
fn keypoint_frames_are_written_in_order() {
    let dir = tempfile::tempdir().unwrap();
    let rows = Tensor::zeros(&[3, KEYPOINT_DIM]);
    let frames = rasterize_keypoints(&rows, 64).unwrap();
    let paths = write_frames(&dir.path().join("frames"), &frames).unwrap();
    assert_eq!(paths.len(), 3);
    assert!(paths[2].ends_with(frame_file_name(2)));
    assert_eq!(frame_file_name(12), "frame_00012.pgm");
    let bytes = std::fs::read(&paths[0]).unwrap();
    assert!(bytes.starts_with(b"P5\n64 64\n255\n"));
    assert_eq!(bytes.len(), b"P5\n64 64\n255\n".len() + 64 * 64);
    // All keypoints at the origin land on the center pixel.
    assert_eq!(frames[0].get(32, 32), 0);
    assert_eq!(frames[0].get(0, 0), 255);
}

#[test]
fn keypoint_bounds() {
    let inside = LatentKeypoints(vec![KEYPOINT_BOUND; KEYPOINT_DIM]);
    assert!(inside.validate().is_ok());
    assert!(inside.within_bound(KEYPOINT_BOUND));
    let mut outside = inside.clone();
    outside.0[7] = KEYPOINT_BOUND + 0.1;
    assert!(!outside.within_bound(KEYPOINT_BOUND));
    assert!(LatentKeypoints(vec![0.0; KEYPOINT_DIM - 1])
        .validate()
        .is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn in_bound_keypoints_land_on_the_canvas(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let kp = LatentKeypoints(
            (0..KEYPOINT_DIM).map(|_| rng.random_range(-KEYPOINT_BOUND..=KEYPOINT_BOUND)).collect(),
        );
        for p in keypoint_pixels(&kp, FRAME_SIZE) {
            prop_assert!(p[0] >= 0.0 && p[0] <= (FRAME_SIZE - 1) as f64);
            prop_assert!(p[1] >= 0.0 && p[1] <= (FRAME_SIZE - 1) as f64);
        }
    }

    #[test]
    fn rasterized_frames_are_binary(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pts: Vec<[f64; 2]> = (0..10).map(|_| [rng.random_range(-5.0..70.0), rng.random_range(-5.0..70.0)]).collect();
        let f = rasterize_points(&pts, 64);
        prop_assert!(f.pixels.iter().all(|&p| p == 0 || p == 255));
        prop_assert!(f.pixels.iter().filter(|&&p| p == 0).count() <= 9 * pts.len());
    }
}
