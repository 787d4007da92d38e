//! Synthetic audiovisual corpus with a known factorization.
//!
//! Per utterance a band-limited content trajectory `c(t)` drives the lip AUs
//! and, through them, the expression coefficients. The emotion category and
//! intensity label drive the remaining AUs, an offset in the id/tex
//! coefficients and a pose bias. The emotion part builds up over the
//! utterance as `1 - RAMP_DECAY^(t + 1)`, so every frame is a partial step
//! from the neutral source toward the full expression. The audio-like
//! features hear both the content and the emotion.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use emoc_autodiff::{mix_seed, Tensor};

use crate::csvio;
use crate::error::{CoreError, Result};
use crate::facemodel::{
    au_index, emotion_au_template, AuVector, Coeff3dmm, Emotion, AU_IDS, COEFF_DIM, EXP_DIM,
    EXP_RANGE, IDTEX_DIM, NUM_AUS, NUM_EMOTIONS, POSE_DIM,
};

pub const FEATURE_DIM: usize = 39;
pub const NUM_KEYPOINTS: usize = 15;
pub const KEYPOINT_DIM: usize = NUM_KEYPOINTS * 3;
pub const NUM_LABELS: usize = 3;
/// AUs read out of the content trajectory.
pub const LIP_AUS: [u8; 3] = [20, 25, 26];
/// Expression dimensions that carry the lip signal.
pub const LIP_EXP_DIMS: std::ops::Range<usize> = 0..12;
pub const LIP_REST: f64 = 0.5;
pub const LIP_GAIN: f64 = 0.4;
pub const LABEL_GAIN: f64 = 0.4;
pub const RAMP_DECAY: f64 = 0.9;
pub const NOISE_SIGMA: f64 = 0.01;
/// Highest content frequency, in Hz.
pub const CONTENT_MAX_HZ: f64 = 2.2;
const CONTENT_MIN_HZ: f64 = 1.8;
const CONTENT_PARTIALS: usize = 4;
const FPS: f64 = 25.0;
const POSE_DRIFT: f64 = 0.05;
const POSE_DRIFT_MAX_HZ: f64 = 0.5;
const POSE_BIAS: f64 = 0.1;
const KEYPOINT_SCALE: f64 = 0.05;
const WORLD_SEED: u64 = 0x454d_4f43;
const GENERATOR_VERSION: u32 = 1;

/// Emotion part of the expression at frame `t`; `t = -1` is the neutral source.
pub fn ramp(t: i64) -> f64 {
    1.0 - RAMP_DECAY.powi((t + 1) as i32)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthSpec {
    pub seed: u64,
    pub n_speakers: usize,
    /// Utterances per speaker.
    pub n_utterances: usize,
    pub frames_per_utterance: usize,
    /// `[emotion][label - 1]` probabilities, emotions in table order.
    pub emotion_weights: Vec<[f64; NUM_LABELS]>,
    pub content_dim: usize,
    pub content_gain: f64,
    pub emotion_gain: f64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            seed: 0,
            n_speakers: 20,
            n_utterances: 10,
            frames_per_utterance: 100,
            emotion_weights: vec![[1.0 / 24.0; NUM_LABELS]; NUM_EMOTIONS],
            content_dim: 8,
            content_gain: 1.0,
            emotion_gain: 1.5,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(CoreError::InvalidSpec(m.to_string()));
        if self.n_speakers == 0 || self.n_utterances == 0 || self.frames_per_utterance == 0 {
            return bad("speaker, utterance and frame counts must be at least 1");
        }
        if self.content_dim == 0 {
            return bad("content dimension must be at least 1");
        }
        if self.emotion_weights.len() != NUM_EMOTIONS {
            return bad("emotion weights need one row per emotion");
        }
        let w = self.emotion_weights.iter().flatten();
        if w.clone().any(|v| !v.is_finite() || *v < 0.0) {
            return bad("emotion weights must be finite and nonnegative");
        }
        if (w.sum::<f64>() - 1.0).abs() > 1e-9 {
            return bad("emotion weights must sum to 1");
        }
        if !(self.content_gain.is_finite() && self.emotion_gain.is_finite()) {
            return bad("gains must be finite");
        }
        Ok(())
    }
}

/// Fixed linear maps shared by every corpus.
#[derive(Clone, Debug)]
pub struct GeneratorModel {
    pub content_dim: usize,
    /// `[FEATURE_DIM, content_dim]`
    pub audio_content: Tensor,
    /// `[FEATURE_DIM, NUM_EMOTIONS]`
    pub audio_emotion: Tensor,
    /// `[3, content_dim]`, rows with unit L1 norm.
    pub lip_readout: Tensor,
    /// `[EXP_DIM, 3]`, orthonormal columns supported on [`LIP_EXP_DIMS`].
    pub lip_to_exp: Tensor,
    /// `[IDTEX_DIM, NUM_AUS]`, orthonormal columns.
    pub au_to_idtex: Tensor,
    /// `[NUM_EMOTIONS, POSE_DIM]`, unit rows except Calm.
    pub pose_bias: Tensor,
    /// `[KEYPOINT_DIM, COEFF_DIM]`
    pub keypoint_map: Tensor,
}

fn gaussian_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Vec<f64> {
    (0..rows * cols)
        .map(|_| StandardNormal.sample(rng))
        .collect()
}

/// Gram-Schmidt on the columns of a row-major `[rows, cols]` matrix.
fn orthonormalize_columns(m: &mut [f64], rows: usize, cols: usize) {
    for j in 0..cols {
        for k in 0..j {
            let d: f64 = (0..rows).map(|i| m[i * cols + j] * m[i * cols + k]).sum();
            for i in 0..rows {
                m[i * cols + j] -= d * m[i * cols + k];
            }
        }
        let n = (0..rows)
            .map(|i| m[i * cols + j].powi(2))
            .sum::<f64>()
            .sqrt();
        for i in 0..rows {
            m[i * cols + j] /= n;
        }
    }
}

fn scale_columns(m: &mut [f64], rows: usize, cols: usize, target: f64) {
    for j in 0..cols {
        let n = (0..rows)
            .map(|i| m[i * cols + j].powi(2))
            .sum::<f64>()
            .sqrt();
        for i in 0..rows {
            m[i * cols + j] *= target / n;
        }
    }
}

fn matvec(m: &Tensor, x: &[f64]) -> Vec<f64> {
    m.data()
        .chunks(m.cols())
        .map(|row| row.iter().zip(x).map(|(a, b)| a * b).sum())
        .collect()
}

/// `m^T x`
fn matvec_t(m: &Tensor, x: &[f64]) -> Vec<f64> {
    let c = m.cols();
    let mut out = vec![0.0; c];
    for (row, xv) in m.data().chunks(c).zip(x) {
        for (o, a) in out.iter_mut().zip(row) {
            *o += a * xv;
        }
    }
    out
}

impl GeneratorModel {
    pub fn new(spec: &SynthSpec) -> Self {
        let cd = spec.content_dim;
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(WORLD_SEED, &[cd as u64]));

        let mut a = gaussian_matrix(&mut rng, FEATURE_DIM, cd);
        scale_columns(&mut a, FEATURE_DIM, cd, spec.content_gain);
        let mut b = gaussian_matrix(&mut rng, FEATURE_DIM, NUM_EMOTIONS);
        scale_columns(&mut b, FEATURE_DIM, NUM_EMOTIONS, spec.emotion_gain);

        let mut lip = gaussian_matrix(&mut rng, 3, cd);
        for row in lip.chunks_mut(cd) {
            let l1: f64 = row.iter().map(|v| v.abs()).sum();
            row.iter_mut().for_each(|v| *v /= l1);
        }

        let lip_rows = LIP_EXP_DIMS.len();
        let mut h_small = gaussian_matrix(&mut rng, lip_rows, 3);
        orthonormalize_columns(&mut h_small, lip_rows, 3);
        let mut h = vec![0.0; EXP_DIM * 3];
        for (i, r) in LIP_EXP_DIMS.enumerate() {
            h[r * 3..r * 3 + 3].copy_from_slice(&h_small[i * 3..i * 3 + 3]);
        }

        let mut g = gaussian_matrix(&mut rng, IDTEX_DIM, NUM_AUS);
        orthonormalize_columns(&mut g, IDTEX_DIM, NUM_AUS);

        let mut pose = vec![0.0; NUM_EMOTIONS * POSE_DIM];
        for e in Emotion::ALL {
            let mut v: Vec<f64> = (0..POSE_DIM)
                .map(|_| StandardNormal.sample(&mut rng))
                .collect();
            if e == Emotion::Calm {
                continue;
            }
            let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            v.iter_mut().for_each(|x| *x /= n);
            pose[e.index() * POSE_DIM..(e.index() + 1) * POSE_DIM].copy_from_slice(&v);
        }

        let k: Vec<f64> = gaussian_matrix(&mut rng, KEYPOINT_DIM, COEFF_DIM)
            .into_iter()
            .map(|v| v * KEYPOINT_SCALE)
            .collect();

        Self {
            content_dim: cd,
            audio_content: Tensor::matrix(FEATURE_DIM, cd, a),
            audio_emotion: Tensor::matrix(FEATURE_DIM, NUM_EMOTIONS, b),
            lip_readout: Tensor::matrix(3, cd, lip),
            lip_to_exp: Tensor::matrix(EXP_DIM, 3, h),
            au_to_idtex: Tensor::matrix(IDTEX_DIM, NUM_AUS, g),
            pose_bias: Tensor::matrix(NUM_EMOTIONS, POSE_DIM, pose),
            keypoint_map: Tensor::matrix(KEYPOINT_DIM, COEFF_DIM, k),
        }
    }

    /// Linear coefficient-to-AU map: emotion AUs from id/tex plus lip AUs
    /// from the expression. Exact inverse of the generator on its range.
    pub fn au_readout(&self, coeff: &[f64]) -> [f64; NUM_AUS] {
        let mut au: [f64; NUM_AUS] = matvec_t(&self.au_to_idtex, &coeff[..IDTEX_DIM])
            .try_into()
            .expect("17 AUs");
        let lips = matvec_t(&self.lip_to_exp, &coeff[EXP_RANGE]);
        for (k, &u) in LIP_AUS.iter().enumerate() {
            au[au_index(u).expect("lip AU")] += lips[k];
        }
        au
    }

    pub fn keypoints(&self, coeff: &[f64]) -> Vec<f64> {
        matvec(&self.keypoint_map, coeff)
    }

    /// Emotion embedding heard in the audio.
    pub fn emotion_embedding(e: Emotion, label: u8) -> [f64; NUM_EMOTIONS] {
        let mut v = [0.0; NUM_EMOTIONS];
        v[e.index()] = LABEL_GAIN * f64::from(label);
        v
    }

    /// Emotion AUs at full build-up.
    pub fn emotion_aus(e: Emotion, label: u8) -> [f64; NUM_AUS] {
        let t = emotion_au_template(e);
        t.0.map(|v| v * LABEL_GAIN * f64::from(label))
    }

    pub fn lip_aus(&self, content: &[f64]) -> [f64; 3] {
        let r = matvec(&self.lip_readout, content);
        [
            LIP_REST + LIP_GAIN * r[0],
            LIP_REST + LIP_GAIN * r[1],
            LIP_REST + LIP_GAIN * r[2],
        ]
    }

    pub fn exp_from_lips(&self, lips: &[f64; 3]) -> Vec<f64> {
        matvec(&self.lip_to_exp, lips)
    }

    /// Neutral face of a speaker: no emotion, lips at rest, zero pose.
    pub fn neutral_source(&self, speaker_base: &[f64]) -> Coeff3dmm {
        let mut c = Coeff3dmm::zeros();
        c.set_idtex(speaker_base);
        c.exp = self.exp_from_lips(&[LIP_REST; 3]);
        c
    }
}

/// Identity/albedo base of a speaker, orthogonal to the emotion subspace.
pub fn speaker_base(model: &GeneratorModel, seed: u64, speaker: usize) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, &[speaker as u64, u64::MAX]));
    let mut v: Vec<f64> = (0..IDTEX_DIM)
        .map(|_| rng.random_range(-1.0..1.0))
        .collect();
    let proj = matvec_t(&model.au_to_idtex, &v);
    let back = matvec(&model.au_to_idtex, &proj);
    v.iter_mut().zip(back).for_each(|(a, b)| *a -= b);
    v
}

/// Sum of sinusoids with unit total amplitude, one per dimension.
#[derive(Clone, Debug, PartialEq)]
pub struct SmoothTrajectory {
    /// `(amplitude, angular frequency per frame, phase)` per dimension.
    partials: Vec<Vec<(f64, f64, f64)>>,
}

impl SmoothTrajectory {
    pub fn sample(rng: &mut ChaCha8Rng, dims: usize, min_hz: f64, max_hz: f64) -> Self {
        let partials = (0..dims)
            .map(|_| {
                let mut p: Vec<(f64, f64, f64)> = (0..CONTENT_PARTIALS)
                    .map(|_| {
                        let a: f64 = rng.random_range(0.2..1.0);
                        let hz = rng.random_range(min_hz..max_hz);
                        let phase = rng.random_range(0.0..std::f64::consts::TAU);
                        (a, std::f64::consts::TAU * hz / FPS, phase)
                    })
                    .collect();
                let total: f64 = p.iter().map(|x| x.0).sum();
                p.iter_mut().for_each(|x| x.0 /= total);
                p
            })
            .collect();
        Self { partials }
    }

    /// One unit sinusoid per dimension at a single frequency drawn from the
    /// band, phases evenly spaced from a random offset. Lip motion then has
    /// a steady rate and amplitude, which keeps the spread of frame-to-frame
    /// deltas narrow.
    pub fn syllabic(rng: &mut ChaCha8Rng, dims: usize, min_hz: f64, max_hz: f64) -> Self {
        let w = std::f64::consts::TAU * rng.random_range(min_hz..=max_hz) / FPS;
        let offset = rng.random_range(0.0..std::f64::consts::TAU);
        let partials = (0..dims)
            .map(|d| {
                vec![(
                    1.0,
                    w,
                    offset + std::f64::consts::TAU * d as f64 / dims as f64,
                )]
            })
            .collect();
        Self { partials }
    }

    pub fn at(&self, t: usize) -> Vec<f64> {
        self.partials
            .iter()
            .map(|p| {
                p.iter()
                    .map(|(a, w, ph)| a * (w * t as f64 + ph).sin())
                    .sum()
            })
            .collect()
    }
}

/// Everything needed to render one utterance.
#[derive(Clone, Debug)]
pub struct UtteranceRecipe {
    pub speaker: usize,
    pub index: usize,
    pub emotion: Emotion,
    pub label: u8,
    pub content: SmoothTrajectory,
    pub pose_drift: SmoothTrajectory,
    pub noise_seed: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Utterance {
    pub speaker: usize,
    pub index: usize,
    pub emotion: Emotion,
    pub label: u8,
    /// Neutral coefficients of the speaker, the inference source.
    pub source: Coeff3dmm,
    /// `[T, 39]`
    pub features: Tensor,
    /// `[T, 17]`
    pub au: Tensor,
    /// `[T, 230]`
    pub coeffs: Tensor,
    /// `[T, 45]`
    pub keypoints: Tensor,
}

/// One frame of ground truth.
#[derive(Clone, Debug, PartialEq)]
pub struct GroundTruthFrame {
    pub mel_feature: Vec<f64>,
    pub au: AuVector,
    pub coeff: Coeff3dmm,
    pub keypoints: Vec<f64>,
    pub emotion: Emotion,
    pub label: u8,
}

impl Utterance {
    pub fn num_frames(&self) -> usize {
        self.features.rows()
    }

    pub fn frame(&self, t: usize) -> GroundTruthFrame {
        GroundTruthFrame {
            mel_feature: self.features.row(t).to_vec(),
            au: AuVector(self.au.row(t).try_into().expect("17 AUs")),
            coeff: Coeff3dmm::from_slice(self.coeffs.row(t)).expect("230 coefficients"),
            keypoints: self.keypoints.row(t).to_vec(),
            emotion: self.emotion,
            label: self.label,
        }
    }

    /// Ground-truth coefficients at `t`, or the neutral source for `t < 0`.
    pub fn coeff_or_source(&self, t: i64) -> Vec<f64> {
        if t < 0 {
            self.source.to_vec()
        } else {
            self.coeffs.row(t as usize).to_vec()
        }
    }

    pub fn dir_name(&self) -> String {
        format!("spk{:03}_utt{:03}", self.speaker, self.index)
    }
}

pub fn render_utterance(
    model: &GeneratorModel,
    base: &[f64],
    recipe: &UtteranceRecipe,
    frames: usize,
) -> Utterance {
    let mut noise_rng = ChaCha8Rng::seed_from_u64(recipe.noise_seed);
    let noise = Normal::new(0.0, NOISE_SIGMA).expect("valid sigma");
    let em_aus = GeneratorModel::emotion_aus(recipe.emotion, recipe.label);
    let embed = GeneratorModel::emotion_embedding(recipe.emotion, recipe.label);
    let heard_emotion = matvec(&model.audio_emotion, &embed);
    let bias = model.pose_bias.row(recipe.emotion.index());
    let label = f64::from(recipe.label);

    let mut feats = Vec::with_capacity(frames * FEATURE_DIM);
    let mut aus = Vec::with_capacity(frames * NUM_AUS);
    let mut coeffs = Vec::with_capacity(frames * COEFF_DIM);
    let mut kps = Vec::with_capacity(frames * KEYPOINT_DIM);
    for t in 0..frames {
        let c = recipe.content.at(t);
        let r = ramp(t as i64);

        let heard_content = matvec(&model.audio_content, &c);
        for k in 0..FEATURE_DIM {
            feats.push(heard_content[k] + heard_emotion[k] + noise.sample(&mut noise_rng));
        }

        let lips = model.lip_aus(&c);
        let emo_now: Vec<f64> = em_aus.iter().map(|v| v * r).collect();
        let mut au = emo_now.clone();
        for (k, &u) in LIP_AUS.iter().enumerate() {
            au[au_index(u).expect("lip AU")] += lips[k];
        }
        aus.extend_from_slice(&au);

        let offset = matvec(&model.au_to_idtex, &emo_now);
        let mut coeff: Vec<f64> = base.iter().zip(&offset).map(|(b, o)| b + o).collect();
        coeff.extend(model.exp_from_lips(&lips));
        let drift = recipe.pose_drift.at(t);
        for k in 0..POSE_DIM {
            coeff.push(POSE_DRIFT * drift[k] + r * POSE_BIAS * label * bias[k]);
        }
        kps.extend(model.keypoints(&coeff));
        coeffs.extend(coeff);
    }
    Utterance {
        speaker: recipe.speaker,
        index: recipe.index,
        emotion: recipe.emotion,
        label: recipe.label,
        source: model.neutral_source(base),
        features: Tensor::matrix(frames, FEATURE_DIM, feats),
        au: Tensor::matrix(frames, NUM_AUS, aus),
        coeffs: Tensor::matrix(frames, COEFF_DIM, coeffs),
        keypoints: Tensor::matrix(frames, KEYPOINT_DIM, kps),
    }
}

/// Derives the recipe of `(speaker, index)` from the corpus seed.
pub fn utterance_recipe(spec: &SynthSpec, speaker: usize, index: usize) -> UtteranceRecipe {
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(spec.seed, &[speaker as u64, index as u64]));
    let u: f64 = rng.random_range(0.0..1.0);
    let mut acc = 0.0;
    let mut cell = (Emotion::ALL[NUM_EMOTIONS - 1], NUM_LABELS as u8);
    'pick: for (e, row) in Emotion::ALL.iter().zip(&spec.emotion_weights) {
        for (l, w) in row.iter().enumerate() {
            acc += w;
            if u < acc && *w > 0.0 {
                cell = (*e, l as u8 + 1);
                break 'pick;
            }
        }
    }
    let content =
        SmoothTrajectory::syllabic(&mut rng, spec.content_dim, CONTENT_MIN_HZ, CONTENT_MAX_HZ);
    let pose_drift = SmoothTrajectory::sample(&mut rng, POSE_DIM, 0.05, POSE_DRIFT_MAX_HZ);
    UtteranceRecipe {
        speaker,
        index,
        emotion: cell.0,
        label: cell.1,
        content,
        pose_drift,
        noise_seed: rng.random(),
    }
}

#[derive(Clone, Debug)]
pub struct Corpus {
    pub spec: SynthSpec,
    pub model: GeneratorModel,
    /// Speaker-major order.
    pub utterances: Vec<Utterance>,
}

pub fn generate_corpus(spec: &SynthSpec) -> Result<Corpus> {
    spec.validate()?;
    let model = GeneratorModel::new(spec);
    let mut utterances = Vec::with_capacity(spec.n_speakers * spec.n_utterances);
    for s in 0..spec.n_speakers {
        let base = speaker_base(&model, spec.seed, s);
        for u in 0..spec.n_utterances {
            let recipe = utterance_recipe(spec, s, u);
            utterances.push(render_utterance(
                &model,
                &base,
                &recipe,
                spec.frames_per_utterance,
            ));
        }
    }
    Ok(Corpus {
        spec: spec.clone(),
        model,
        utterances,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub n_frames: usize,
    /// Mean AU vector per emotion present in the corpus.
    pub emotion_au_means: BTreeMap<Emotion, Vec<f64>>,
    /// Mean AU vector per `(emotion, label)` cell present in the corpus.
    pub cell_au_means: BTreeMap<String, Vec<f64>>,
    pub coeff_min: Vec<f64>,
    pub coeff_max: Vec<f64>,
    pub coeff_abs_max: f64,
    /// Utterance counts for labels 1, 2, 3.
    pub label_counts: [usize; NUM_LABELS],
    pub emotion_counts: BTreeMap<Emotion, usize>,
    /// Median over adjacent frame pairs of the largest absolute coefficient change.
    pub median_adjacent_delta: f64,
}

pub fn cell_key(e: Emotion, label: u8) -> String {
    format!("{}_{label}", e.name())
}

pub fn corpus_stats(corpus: &Corpus) -> Result<CorpusStats> {
    if corpus.utterances.is_empty() {
        return Err(CoreError::InvalidInput("empty corpus".into()));
    }
    let mut sums: BTreeMap<Emotion, (Vec<f64>, usize)> = BTreeMap::new();
    let mut cells: BTreeMap<String, (Vec<f64>, usize)> = BTreeMap::new();
    let mut cmin = vec![f64::INFINITY; COEFF_DIM];
    let mut cmax = vec![f64::NEG_INFINITY; COEFF_DIM];
    let mut label_counts = [0; NUM_LABELS];
    let mut emotion_counts = BTreeMap::new();
    let mut deltas = Vec::new();
    let mut n_frames = 0;
    for u in &corpus.utterances {
        label_counts[usize::from(u.label) - 1] += 1;
        *emotion_counts.entry(u.emotion).or_insert(0) += 1;
        let e = sums
            .entry(u.emotion)
            .or_insert_with(|| (vec![0.0; NUM_AUS], 0));
        let c = cells
            .entry(cell_key(u.emotion, u.label))
            .or_insert_with(|| (vec![0.0; NUM_AUS], 0));
        for t in 0..u.num_frames() {
            for (k, v) in u.au.row(t).iter().enumerate() {
                e.0[k] += v;
                c.0[k] += v;
            }
            for (k, v) in u.coeffs.row(t).iter().enumerate() {
                cmin[k] = cmin[k].min(*v);
                cmax[k] = cmax[k].max(*v);
            }
            if t > 0 {
                let d = u
                    .coeffs
                    .row(t)
                    .iter()
                    .zip(u.coeffs.row(t - 1))
                    .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
                deltas.push(d);
            }
        }
        e.1 += u.num_frames();
        c.1 += u.num_frames();
        n_frames += u.num_frames();
    }
    let mean = |(s, n): (Vec<f64>, usize)| s.into_iter().map(|v| v / n as f64).collect::<Vec<_>>();
    deltas.sort_by(f64::total_cmp);
    let median_adjacent_delta = match deltas.len() {
        0 => 0.0,
        n if n % 2 == 1 => deltas[n / 2],
        n => 0.5 * (deltas[n / 2 - 1] + deltas[n / 2]),
    };
    let coeff_abs_max = cmin.iter().chain(&cmax).fold(0.0f64, |m, v| m.max(v.abs()));
    Ok(CorpusStats {
        n_frames,
        emotion_au_means: sums.into_iter().map(|(k, v)| (k, mean(v))).collect(),
        cell_au_means: cells.into_iter().map(|(k, v)| (k, mean(v))).collect(),
        coeff_min: cmin,
        coeff_max: cmax,
        coeff_abs_max,
        label_counts,
        emotion_counts,
        median_adjacent_delta,
    })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct UtteranceMeta {
    speaker: usize,
    index: usize,
    emotion: Emotion,
    label: u8,
    seed: u64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct CorpusManifest {
    generator_version: u32,
    spec: SynthSpec,
    utterances: Vec<String>,
}

fn columns(prefix: &str, n: usize) -> Vec<String> {
    (0..n).map(|i| format!("{prefix}{i}")).collect()
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(value).expect("serializable");
    fs::write(path, text + "\n").map_err(|e| CoreError::io(path, e))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| CoreError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| CoreError::parse(path, e.to_string()))
}

/// One directory per utterance plus a root `manifest.json`.
pub fn save_corpus(corpus: &Corpus, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| CoreError::io(dir, e))?;
    let au_cols: Vec<String> = AU_IDS.iter().map(|a| format!("AU{a}")).collect();
    let mut names = Vec::new();
    for u in &corpus.utterances {
        let ud: PathBuf = dir.join(u.dir_name());
        fs::create_dir_all(&ud).map_err(|e| CoreError::io(&ud, e))?;
        csvio::write_frames(
            &ud.join("features.csv"),
            &columns("f", FEATURE_DIM),
            &u.features,
        )?;
        csvio::write_frames(&ud.join("au.csv"), &au_cols, &u.au)?;
        let coeff_cols = crate::facemodel::Coeff3dmm::csv_header()[1..].to_vec();
        csvio::write_frames(&ud.join("coeffs.csv"), &coeff_cols, &u.coeffs)?;
        csvio::write_points3(&ud.join("keypoints.csv"), &u.keypoints)?;
        csvio::write_coeffs(&ud.join("source.csv"), std::slice::from_ref(&u.source))?;
        write_json(
            &ud.join("meta.json"),
            &UtteranceMeta {
                speaker: u.speaker,
                index: u.index,
                emotion: u.emotion,
                label: u.label,
                seed: corpus.spec.seed,
            },
        )?;
        names.push(u.dir_name());
    }
    write_json(
        &dir.join("manifest.json"),
        &CorpusManifest {
            generator_version: GENERATOR_VERSION,
            spec: corpus.spec.clone(),
            utterances: names,
        },
    )
}

pub fn load_corpus(dir: &Path) -> Result<Corpus> {
    let manifest: CorpusManifest = read_json(&dir.join("manifest.json"))?;
    if manifest.generator_version != GENERATOR_VERSION {
        return Err(CoreError::parse(
            dir.join("manifest.json"),
            format!("generator version {}", manifest.generator_version),
        ));
    }
    manifest.spec.validate()?;
    let mut utterances = Vec::with_capacity(manifest.utterances.len());
    for name in &manifest.utterances {
        let ud = dir.join(name);
        let meta: UtteranceMeta = read_json(&ud.join("meta.json"))?;
        let (_, features) = csvio::read_frames(&ud.join("features.csv"))?;
        let (_, au) = csvio::read_frames(&ud.join("au.csv"))?;
        let (_, coeffs) = csvio::read_frames(&ud.join("coeffs.csv"))?;
        let keypoints = csvio::read_points3(&ud.join("keypoints.csv"))?;
        let source = csvio::read_coeffs(&ud.join("source.csv"))?
            .into_iter()
            .next()
            .ok_or_else(|| CoreError::parse(ud.join("source.csv"), "no rows"))?;
        let dims = [
            (features.cols(), FEATURE_DIM, "features"),
            (au.cols(), NUM_AUS, "au"),
            (coeffs.cols(), COEFF_DIM, "coeffs"),
            (keypoints.cols(), KEYPOINT_DIM, "keypoints"),
        ];
        for (got, want, what) in dims {
            if got != want {
                return Err(CoreError::parse(
                    &ud,
                    format!("{what} has {got} columns, expected {want}"),
                ));
            }
        }
        let t = features.rows();
        if au.rows() != t || coeffs.rows() != t || keypoints.rows() != t {
            return Err(CoreError::parse(&ud, "frame counts disagree across files"));
        }
        utterances.push(Utterance {
            speaker: meta.speaker,
            index: meta.index,
            emotion: meta.emotion,
            label: meta.label,
            source,
            features,
            au,
            coeffs,
            keypoints,
        });
    }
    Ok(Corpus {
        model: GeneratorModel::new(&manifest.spec),
        spec: manifest.spec,
        utterances,
    })
}
