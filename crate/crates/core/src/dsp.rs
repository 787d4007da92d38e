//! WAV ingestion and per-video-frame MFCC features.

use std::fmt::Write as _;
use std::io::Read;
use std::path::Path;

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use emoc_autodiff::Tensor;

use crate::error::{CoreError, Result};

pub const SAMPLE_RATE: u32 = 16_000;
/// Coefficient frames per second; one MFCC row per frame.
pub const FRAME_RATE: f64 = 25.0;

#[derive(Clone, Debug, PartialEq)]
pub struct WavClip {
    pub sample_rate: u32,
    pub samples: Vec<f64>,
}

impl WavClip {
    pub fn new(samples: Vec<f64>) -> Result<Self> {
        if !samples.iter().all(|s| s.is_finite()) {
            return Err(CoreError::MalformedWav("non-finite sample".into()));
        }
        Ok(Self {
            sample_rate: SAMPLE_RATE,
            samples,
        })
    }
}

pub fn load_wav(path: &Path) -> Result<WavClip> {
    let file = std::fs::File::open(path).map_err(|e| CoreError::io(path, e))?;
    read_wav(std::io::BufReader::new(file))
}

/// Accepts 16 kHz mono PCM16 (scaled by 1/32768) or IEEE float32.
pub fn read_wav<R: Read>(reader: R) -> Result<WavClip> {
    let wav = hound::WavReader::new(reader).map_err(|e| match e {
        hound::Error::Unsupported => CoreError::UnsupportedCodec {
            format_tag: 0,
            bits: 0,
        },
        other => CoreError::MalformedWav(other.to_string()),
    })?;
    let spec = wav.spec();
    match (spec.sample_format, spec.bits_per_sample) {
        (hound::SampleFormat::Int, 16) | (hound::SampleFormat::Float, 32) => {}
        (fmt, bits) => {
            return Err(CoreError::UnsupportedCodec {
                format_tag: if fmt == hound::SampleFormat::Float {
                    3
                } else {
                    1
                },
                bits,
            })
        }
    }
    if spec.channels != 1 {
        return Err(CoreError::UnsupportedChannels(spec.channels));
    }
    if spec.sample_rate != SAMPLE_RATE {
        return Err(CoreError::UnsupportedRate(spec.sample_rate));
    }
    let samples: Vec<f64> = match spec.sample_format {
        hound::SampleFormat::Int => wav
            .into_samples::<i16>()
            .map(|s| s.map(|v| f64::from(v) / 32768.0))
            .collect::<std::result::Result<_, _>>(),
        hound::SampleFormat::Float => wav
            .into_samples::<f32>()
            .map(|s| s.map(f64::from))
            .collect::<std::result::Result<_, _>>(),
    }
    .map_err(|e| CoreError::MalformedWav(e.to_string()))?;
    WavClip::new(samples)
}

/// Writes a 16 kHz mono PCM16 file, clamping to [-1, 1].
pub fn write_wav_pcm16(path: &Path, samples: &[f64]) -> Result<()> {
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: SAMPLE_RATE,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let io_err = |e: hound::Error| match e {
        hound::Error::IoError(io) => CoreError::io(path, io),
        other => CoreError::MalformedWav(other.to_string()),
    };
    let mut w = hound::WavWriter::create(path, spec).map_err(io_err)?;
    for &s in samples {
        let v = (s.clamp(-1.0, 1.0) * 32767.0).round() as i16;
        w.write_sample(v).map_err(io_err)?;
    }
    w.finalize().map_err(io_err)
}

#[derive(Clone, Debug, PartialEq)]
pub struct MfccConfig {
    pub win: usize,
    pub hop: usize,
    pub n_mels: usize,
    pub n_mfcc: usize,
    pub floor: f64,
    pub f_min: f64,
    pub f_max: f64,
    /// Preceding frames stacked after the current one.
    pub context: usize,
}

impl Default for MfccConfig {
    fn default() -> Self {
        Self {
            win: 1024,
            hop: 640,
            n_mels: 26,
            n_mfcc: 13,
            floor: 1e-10,
            f_min: 0.0,
            f_max: 8000.0,
            context: 2,
        }
    }
}

impl MfccConfig {
    pub fn feature_dim(&self) -> usize {
        self.n_mfcc * (self.context + 1)
    }

    pub fn num_frames(&self, num_samples: usize) -> usize {
        num_samples / self.hop
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MfccSequence {
    /// `[T, D]`
    pub frames: Tensor,
    pub frame_rate: f64,
}

impl MfccSequence {
    pub fn num_frames(&self) -> usize {
        self.frames.rows()
    }

    /// 17 significant digits per value, one frame per row.
    pub fn to_csv(&self) -> String {
        let mut s = String::new();
        for r in 0..self.frames.rows() {
            let row: Vec<String> = self
                .frames
                .row(r)
                .iter()
                .map(|v| format!("{v:.16e}"))
                .collect();
            let _ = writeln!(s, "{}", row.join(","));
        }
        s
    }
}

pub fn hz_to_mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

pub fn mel_to_hz(m: f64) -> f64 {
    700.0 * (10f64.powf(m / 2595.0) - 1.0)
}

/// Center frequencies (Hz) of the triangular filters.
pub fn mel_centers(cfg: &MfccConfig) -> Vec<f64> {
    mel_edges(cfg)[1..=cfg.n_mels].to_vec()
}

fn mel_edges(cfg: &MfccConfig) -> Vec<f64> {
    let lo = hz_to_mel(cfg.f_min);
    let hi = hz_to_mel(cfg.f_max);
    (0..cfg.n_mels + 2)
        .map(|i| mel_to_hz(lo + (hi - lo) * i as f64 / (cfg.n_mels + 1) as f64))
        .collect()
}

/// `[n_mels][win / 2 + 1]` triangular weights with unit peaks.
pub fn mel_filterbank(cfg: &MfccConfig) -> Vec<Vec<f64>> {
    let edges = mel_edges(cfg);
    let n_bins = cfg.win / 2 + 1;
    let bin_hz = f64::from(SAMPLE_RATE) / cfg.win as f64;
    (0..cfg.n_mels)
        .map(|m| {
            let (lo, c, hi) = (edges[m], edges[m + 1], edges[m + 2]);
            (0..n_bins)
                .map(|k| {
                    let f = k as f64 * bin_hz;
                    if f <= lo || f >= hi {
                        0.0
                    } else if f <= c {
                        (f - lo) / (c - lo)
                    } else {
                        (hi - f) / (hi - c)
                    }
                })
                .collect()
        })
        .collect()
}

pub fn hann(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / n as f64).cos())
        .collect()
}

fn check_clip(clip: &WavClip, cfg: &MfccConfig) -> Result<()> {
    if clip.sample_rate != SAMPLE_RATE {
        return Err(CoreError::UnsupportedRate(clip.sample_rate));
    }
    if clip.samples.len() < cfg.win {
        return Err(CoreError::ClipTooShort {
            samples: clip.samples.len(),
            window: cfg.win,
        });
    }
    Ok(())
}

/// Mel filterbank energies `[T, n_mels]` before the log. Frame `t` covers
/// samples `[t hop, t hop + win)`, zero-padded past the end of the clip.
pub fn filterbank_energies(clip: &WavClip, cfg: &MfccConfig) -> Result<Tensor> {
    check_clip(clip, cfg)?;
    let t_count = cfg.num_frames(clip.samples.len());
    let window = hann(cfg.win);
    let bank = mel_filterbank(cfg);
    let fft = FftPlanner::<f64>::new().plan_fft_forward(cfg.win);
    let mut buf = vec![Complex::new(0.0, 0.0); cfg.win];
    let mut out = Vec::with_capacity(t_count * cfg.n_mels);
    for t in 0..t_count {
        let start = t * cfg.hop;
        for (i, b) in buf.iter_mut().enumerate() {
            let s = clip.samples.get(start + i).copied().unwrap_or(0.0);
            *b = Complex::new(s * window[i], 0.0);
        }
        fft.process(&mut buf);
        let power: Vec<f64> = buf[..cfg.win / 2 + 1]
            .iter()
            .map(|c| c.norm_sqr())
            .collect();
        for filt in &bank {
            out.push(filt.iter().zip(&power).map(|(w, p)| w * p).sum());
        }
    }
    Ok(Tensor::matrix(t_count, cfg.n_mels, out))
}

/// Orthonormal DCT-II of `x`, first `keep` coefficients.
pub fn dct2(x: &[f64], keep: usize) -> Vec<f64> {
    let n = x.len() as f64;
    (0..keep)
        .map(|k| {
            let s: f64 = x
                .iter()
                .enumerate()
                .map(|(m, v)| v * (std::f64::consts::PI * k as f64 * (m as f64 + 0.5) / n).cos())
                .sum();
            let scale = if k == 0 {
                (1.0 / n).sqrt()
            } else {
                (2.0 / n).sqrt()
            };
            s * scale
        })
        .collect()
}

/// Each output row is the frame's own coefficients followed by those of the
/// `context` preceding frames (zeros before the first frame).
pub fn mfcc(clip: &WavClip, cfg: &MfccConfig) -> Result<MfccSequence> {
    let energies = filterbank_energies(clip, cfg)?;
    let t_count = energies.rows();
    let ceps: Vec<Vec<f64>> = (0..t_count)
        .map(|t| {
            let logs: Vec<f64> = energies
                .row(t)
                .iter()
                .map(|e| e.max(cfg.floor).ln())
                .collect();
            dct2(&logs, cfg.n_mfcc)
        })
        .collect();
    let d = cfg.feature_dim();
    let mut data = Vec::with_capacity(t_count * d);
    for t in 0..t_count {
        for back in 0..=cfg.context {
            match t.checked_sub(back) {
                Some(src) => data.extend_from_slice(&ceps[src]),
                None => data.extend(std::iter::repeat_n(0.0, cfg.n_mfcc)),
            }
        }
    }
    Ok(MfccSequence {
        frames: Tensor::matrix(t_count, d, data),
        frame_rate: f64::from(SAMPLE_RATE) / cfg.hop as f64,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mel_scale_round_trips() {
        for f in [0.0, 440.0, 1000.0, 8000.0] {
            assert!((mel_to_hz(hz_to_mel(f)) - f).abs() < 1e-9);
        }
    }

    #[test]
    fn frame_count_is_floor() {
        let cfg = MfccConfig::default();
        assert_eq!(cfg.num_frames(16_000), 25);
        assert_eq!(cfg.num_frames(1279), 1);
        assert_eq!(cfg.num_frames(1280), 2);
    }

    #[test]
    fn short_clip_rejected() {
        let clip = WavClip::new(vec![0.0; 1000]).unwrap();
        assert!(matches!(
            mfcc(&clip, &MfccConfig::default()),
            Err(CoreError::ClipTooShort {
                samples: 1000,
                window: 1024
            })
        ));
    }
}
