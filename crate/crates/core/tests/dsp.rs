//! Audio front end against an independent DFT, frame arithmetic and WAV I/O.

use std::f64::consts::PI;

use emoc_core::dsp::{
    filterbank_energies, hann, load_wav, mel_centers, mel_filterbank, mfcc, write_wav_pcm16,
    MfccConfig, WavClip, SAMPLE_RATE,
};
use emoc_core::CoreError;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn tone(hz: f64, n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| 0.5 * (2.0 * PI * hz * i as f64 / f64::from(SAMPLE_RATE)).sin())
        .collect()
}

/// O(N^2) power spectrum of one Hann-windowed frame.
fn naive_power(frame: &[f64]) -> Vec<f64> {
    let n = frame.len();
    let w = hann(n);
    (0..n / 2 + 1)
        .map(|k| {
            let (mut re, mut im) = (0.0, 0.0);
            for (i, x) in frame.iter().enumerate() {
                let ph = -2.0 * PI * (k * i) as f64 / n as f64;
                re += x * w[i] * ph.cos();
                im += x * w[i] * ph.sin();
            }
            re * re + im * im
        })
        .collect()
}

fn argmax(v: &[f64]) -> usize {
    v.iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .map(|(i, _)| i)
        .unwrap()
}

#[test]
fn one_kilohertz_tone_matches_the_dft_oracle() {
    let cfg = MfccConfig::default();
    let samples = tone(1000.0, 16_000);
    let energies = filterbank_energies(&WavClip::new(samples.clone()).unwrap(), &cfg).unwrap();
    let bank = mel_filterbank(&cfg);
    let bin_hz = f64::from(SAMPLE_RATE) / cfg.win as f64;
    for t in [0, 7, 20] {
        let start = t * cfg.hop;
        let power = naive_power(&samples[start..start + cfg.win]);
        assert!((argmax(&power) as f64 * bin_hz - 1000.0).abs() <= bin_hz);
        let oracle: Vec<f64> = bank
            .iter()
            .map(|f| f.iter().zip(&power).map(|(w, p)| w * p).sum())
            .collect();
        let got = energies.row(t);
        for (g, o) in got.iter().zip(&oracle) {
            assert!(
                (g - o).abs() <= 1e-9 * o.abs().max(1.0),
                "frame {t}: {g} vs {o}"
            );
        }
        let peak = argmax(got);
        assert_eq!(peak, argmax(&oracle));
        let centers = mel_centers(&cfg);
        let nearest = argmax(
            &centers
                .iter()
                .map(|c| -(c - 1000.0).abs())
                .collect::<Vec<_>>(),
        );
        assert!(
            peak.abs_diff(nearest) <= 1,
            "peak filter {peak}, nearest center {nearest}"
        );
    }
}

#[test]
fn random_clip_lengths_give_floor_frame_counts() {
    let cfg = MfccConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..50 {
        let n = rng.random_range(cfg.win..40_000);
        let clip = WavClip::new((0..n).map(|_| rng.random_range(-0.5..0.5)).collect()).unwrap();
        let seq = mfcc(&clip, &cfg).unwrap();
        assert_eq!(seq.num_frames(), n / cfg.hop, "{n} samples");
        assert_eq!(seq.frames.cols(), cfg.feature_dim());
        assert!(seq.frames.is_finite());
    }
}

#[test]
fn one_second_gives_twenty_five_frames() {
    let seq = mfcc(
        &WavClip::new(tone(220.0, 16_000)).unwrap(),
        &MfccConfig::default(),
    )
    .unwrap();
    assert_eq!(seq.num_frames(), 25);
    assert_eq!(seq.frame_rate, 25.0);
}

#[test]
fn context_columns_repeat_earlier_frames() {
    let cfg = MfccConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let clip = WavClip::new((0..8000).map(|_| rng.random_range(-0.5..0.5)).collect()).unwrap();
    let f = mfcc(&clip, &cfg).unwrap().frames;
    let k = cfg.n_mfcc;
    assert!(f.row(0)[k..].iter().all(|&v| v == 0.0));
    for t in 2..f.rows() {
        assert_eq!(&f.row(t)[k..2 * k], &f.row(t - 1)[..k]);
        assert_eq!(&f.row(t)[2 * k..], &f.row(t - 2)[..k]);
    }
}

#[test]
fn silence_hits_the_log_floor() {
    let cfg = MfccConfig::default();
    let f = mfcc(&WavClip::new(vec![0.0; 4000]).unwrap(), &cfg)
        .unwrap()
        .frames;
    let c0 = cfg.floor.ln() * (cfg.n_mels as f64).sqrt();
    assert!((f.row(3)[0] - c0).abs() < 1e-9);
    assert!(f.row(3)[1..cfg.n_mfcc].iter().all(|v| v.abs() < 1e-9));
}

#[test]
fn pcm16_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("a.wav");
    let samples = tone(440.0, 3000);
    write_wav_pcm16(&path, &samples).unwrap();
    let clip = load_wav(&path).unwrap();
    assert_eq!(clip.sample_rate, SAMPLE_RATE);
    assert_eq!(clip.samples.len(), samples.len());
    for (a, b) in clip.samples.iter().zip(&samples) {
        assert!((a - b).abs() < 1.0 / 16_000.0);
    }
}

fn write_with(path: &std::path::Path, channels: u16, rate: u32) {
    let spec = hound::WavSpec {
        channels,
        sample_rate: rate,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut w = hound::WavWriter::create(path, spec).unwrap();
    for _ in 0..2048 {
        w.write_sample(0i16).unwrap();
    }
    w.finalize().unwrap();
}

#[test]
fn unsupported_wavs_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let stereo = dir.path().join("stereo.wav");
    write_with(&stereo, 2, SAMPLE_RATE);
    assert!(matches!(
        load_wav(&stereo),
        Err(CoreError::UnsupportedChannels(2))
    ));
    let slow = dir.path().join("slow.wav");
    write_with(&slow, 1, 8000);
    assert!(matches!(
        load_wav(&slow),
        Err(CoreError::UnsupportedRate(8000))
    ));
    let junk = dir.path().join("junk.wav");
    std::fs::write(&junk, b"RIFF not really").unwrap();
    assert!(load_wav(&junk).is_err());
    assert!(load_wav(&dir.path().join("missing.wav")).is_err());
    assert!(WavClip::new(vec![0.0, f64::NAN]).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn energies_are_nonnegative(seed in any::<u64>(), n in 1024usize..6000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let clip = WavClip::new((0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
        let e = filterbank_energies(&clip, &MfccConfig::default()).unwrap();
        prop_assert!(e.data().iter().all(|&v| v >= 0.0));
    }
}
