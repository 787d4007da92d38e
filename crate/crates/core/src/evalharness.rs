//! Quantitative checks: emotion-leakage probe, lip fidelity, the AU
//! projection intensity oracle, window-boundary continuity and the frozen
//! pass/fail thresholds.

use std::path::Path;

use emoc_autodiff::{mix_seed, Tensor};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::facemodel::{
    emotion_au_template, CoeffGroup, Emotion, COEFF_DIM, EXP_RANGE, NUM_AUS, NUM_EMOTIONS,
};
use crate::finegrain::{grid_sweep, infer_sequence, IntensityGrid, WindowPlan};
use crate::model::EmoSpeaker;
use crate::synthdata::{corpus_stats, Corpus, GeneratorModel, LIP_EXP_DIMS};

pub const PROBE_STEPS: usize = 200;
pub const PROBE_LR: f64 = 0.1;
pub const PROBE_TRAIN_FRACTION: f64 = 0.7;
pub const PROBE_MIN_SAMPLES: usize = 200;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeReport {
    pub accuracy: f64,
    pub chance: f64,
    pub n_samples: usize,
    pub n_train: usize,
    pub n_test: usize,
}

/// Per-class shuffle with `seed`, first `round(0.7 n_c)` of each class to
/// the train split.
pub fn stratified_split(labels: &[usize], seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, &[0x0070_726f_6265]));
    let n_classes = labels.iter().max().map_or(0, |m| m + 1);
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for c in 0..n_classes {
        let mut idx: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == c).collect();
        idx.shuffle(&mut rng);
        let cut = (idx.len() as f64 * PROBE_TRAIN_FRACTION).round() as usize;
        train.extend_from_slice(&idx[..cut]);
        test.extend_from_slice(&idx[cut..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    (train, test)
}

/// Multinomial logistic regression fitted by full-batch gradient descent
/// from zero weights; returns `[D + 1, C]` with the bias in the last row.
pub fn fit_softmax_probe(
    x: &Tensor,
    labels: &[usize],
    rows: &[usize],
    n_classes: usize,
    steps: usize,
    lr: f64,
) -> Tensor {
    let d = x.cols();
    let mut w = vec![0.0; (d + 1) * n_classes];
    let n = rows.len() as f64;
    let mut grad = vec![0.0; w.len()];
    let mut p = vec![0.0; n_classes];
    for _ in 0..steps {
        grad.iter_mut().for_each(|g| *g = 0.0);
        for &r in rows {
            let xr = x.row(r);
            softmax_row(&w, xr, n_classes, &mut p);
            p[labels[r]] -= 1.0;
            for (j, xv) in xr.iter().chain(std::iter::once(&1.0)).enumerate() {
                let gj = &mut grad[j * n_classes..(j + 1) * n_classes];
                for (g, pc) in gj.iter_mut().zip(&p) {
                    *g += xv * pc;
                }
            }
        }
        for (wv, g) in w.iter_mut().zip(&grad) {
            *wv -= lr * g / n;
        }
    }
    Tensor::matrix(d + 1, n_classes, w)
}

fn softmax_row(w: &[f64], x: &[f64], n_classes: usize, out: &mut [f64]) {
    let d = x.len();
    out.copy_from_slice(&w[d * n_classes..(d + 1) * n_classes]);
    for (j, xv) in x.iter().enumerate() {
        for (o, wv) in out.iter_mut().zip(&w[j * n_classes..(j + 1) * n_classes]) {
            *o += xv * wv;
        }
    }
    let m = out.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut s = 0.0;
    for o in out.iter_mut() {
        *o = (*o - m).exp();
        s += *o;
    }
    out.iter_mut().for_each(|o| *o /= s);
}

/// Held-out accuracy of a linear probe predicting emotion from `vectors`.
pub fn probe_emotion_leakage(
    vectors: &Tensor,
    emotions: &[Emotion],
    seed: u64,
) -> Result<ProbeReport> {
    if vectors.rank() != 2 || vectors.rows() != emotions.len() {
        return Err(CoreError::Dimension(format!(
            "{:?} vectors for {} labels",
            vectors.shape(),
            emotions.len()
        )));
    }
    if emotions.len() < PROBE_MIN_SAMPLES {
        return Err(CoreError::InvalidInput(format!(
            "probe needs at least {PROBE_MIN_SAMPLES} samples, got {}",
            emotions.len()
        )));
    }
    if emotions.iter().all(|&e| e == emotions[0]) {
        return Err(CoreError::InvalidInput(
            "probe input has a single class".into(),
        ));
    }
    let labels: Vec<usize> = emotions.iter().map(|e| e.index()).collect();
    let (train, test) = stratified_split(&labels, seed);
    let w = fit_softmax_probe(
        vectors,
        &labels,
        &train,
        NUM_EMOTIONS,
        PROBE_STEPS,
        PROBE_LR,
    );
    let mut p = vec![0.0; NUM_EMOTIONS];
    let correct = test
        .iter()
        .filter(|&&r| {
            softmax_row(w.data(), vectors.row(r), NUM_EMOTIONS, &mut p);
            argmax(&p) == labels[r]
        })
        .count();
    Ok(ProbeReport {
        accuracy: correct as f64 / test.len().max(1) as f64,
        chance: 1.0 / NUM_EMOTIONS as f64,
        n_samples: emotions.len(),
        n_train: train.len(),
        n_test: test.len(),
    })
}

fn argmax(v: &[f64]) -> usize {
    v.iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |(bi, bv), (i, &x)| {
            if x > bv {
                (i, x)
            } else {
                (bi, bv)
            }
        })
        .0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LipReport {
    /// `(exp dimension, R²)` for every scored coefficient.
    pub per_coeff: Vec<(usize, f64)>,
    /// Exp dimensions skipped for zero target variance.
    pub skipped: Vec<usize>,
    pub mean_r2: f64,
}

/// Coefficient-wise `1 - SSE / SST` over the lip-carrying expression
/// dimensions. Inputs are `[T, 64]` expression or `[T, 230]` full streams.
pub fn lip_fidelity(pred: &Tensor, target: &Tensor) -> Result<LipReport> {
    if pred.shape() != target.shape() || pred.rank() != 2 {
        return Err(CoreError::Dimension(format!(
            "prediction {:?} vs target {:?}",
            pred.shape(),
            target.shape()
        )));
    }
    let offset = match pred.cols() {
        COEFF_DIM => EXP_RANGE.start,
        c if c == EXP_RANGE.len() => 0,
        c => {
            return Err(CoreError::Dimension(format!(
                "{c} columns is neither exp nor full coefficients"
            )))
        }
    };
    let n = pred.rows() as f64;
    let mut per_coeff = Vec::new();
    let mut skipped = Vec::new();
    for d in LIP_EXP_DIMS {
        let col = offset + d;
        let mean = (0..pred.rows()).map(|r| target.row(r)[col]).sum::<f64>() / n;
        let (mut sse, mut sst) = (0.0, 0.0);
        for r in 0..pred.rows() {
            let y = target.row(r)[col];
            sse += (pred.row(r)[col] - y).powi(2);
            sst += (y - mean).powi(2);
        }
        if sst == 0.0 {
            skipped.push(d);
        } else {
            per_coeff.push((d, 1.0 - sse / sst));
        }
    }
    if per_coeff.is_empty() {
        return Err(CoreError::InvalidInput(
            "every lip coefficient has zero variance".into(),
        ));
    }
    let mean_r2 = per_coeff.iter().map(|(_, r)| r).sum::<f64>() / per_coeff.len() as f64;
    Ok(LipReport {
        per_coeff,
        skipped,
        mean_r2,
    })
}

/// Projection of the generator's coefficient-to-AU readout onto the unit
/// AU template of an emotion.
#[derive(Clone, Debug)]
pub struct IntensityOracle {
    readout: GeneratorModel,
    directions: Vec<Option<[f64; NUM_AUS]>>,
}

impl IntensityOracle {
    pub fn new(model: &GeneratorModel) -> Self {
        let directions = Emotion::ALL
            .iter()
            .map(|&e| {
                let t = emotion_au_template(e);
                let n = t.norm();
                (n > 0.0).then(|| t.0.map(|v| v / n))
            })
            .collect();
        Self {
            readout: model.clone(),
            directions,
        }
    }

    pub fn direction(&self, e: Emotion) -> Result<[f64; NUM_AUS]> {
        self.directions[e.index()].ok_or(CoreError::CalmHasNoDirection)
    }

    /// Mean over frames of the projected AU readout of a `[T, 230]` stream.
    pub fn score(&self, coeffs: &Tensor, e: Emotion) -> Result<f64> {
        let dir = self.direction(e)?;
        if coeffs.rank() != 2 || coeffs.cols() != COEFF_DIM || coeffs.rows() == 0 {
            return Err(CoreError::Dimension(format!(
                "coefficient stream {:?}, expected [T, {COEFF_DIM}]",
                coeffs.shape()
            )));
        }
        let total: f64 = (0..coeffs.rows())
            .map(|r| {
                let au = self.readout.au_readout(coeffs.row(r));
                au.iter().zip(&dir).map(|(a, d)| a * d).sum::<f64>()
            })
            .sum();
        Ok(total / coeffs.rows() as f64)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundaryReport {
    /// `(group name, largest absolute jump)` across all boundaries.
    pub per_group: Vec<(String, f64)>,
    /// Largest absolute jump of any coefficient.
    pub max_jump: f64,
    pub n_boundaries: usize,
}

/// Jumps between the last frame of each window and the first of the next.
pub fn boundary_continuity(coeffs: &Tensor, plan: &WindowPlan) -> Result<BoundaryReport> {
    if coeffs.rank() != 2 || coeffs.cols() != COEFF_DIM {
        return Err(CoreError::Dimension(format!(
            "coefficient stream {:?}",
            coeffs.shape()
        )));
    }
    if plan.windows.last().is_some_and(|w| w.1 > coeffs.rows()) {
        return Err(CoreError::Dimension(
            "window plan exceeds the stream".into(),
        ));
    }
    let boundaries: Vec<usize> = plan.windows.iter().skip(1).map(|w| w.0).collect();
    if boundaries.is_empty() {
        return Ok(BoundaryReport {
            per_group: Vec::new(),
            max_jump: 0.0,
            n_boundaries: 0,
        });
    }
    let per_group: Vec<(String, f64)> = CoeffGroup::ALL
        .iter()
        .map(|g| {
            let m = boundaries.iter().fold(0.0f64, |m, &b| {
                g.range().fold(m, |m, k| {
                    m.max((coeffs.row(b)[k] - coeffs.row(b - 1)[k]).abs())
                })
            });
            (g.name().to_string(), m)
        })
        .collect();
    let max_jump = per_group.iter().fold(0.0f64, |m, (_, v)| m.max(*v));
    Ok(BoundaryReport {
        per_group,
        max_jump,
        n_boundaries: boundaries.len(),
    })
}

/// Pass/fail thresholds, frozen after pilot runs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Thresholds {
    pub version: u32,
    /// Upper bound on probe accuracy over content vectors.
    pub probe_content_max: f64,
    /// Lower bound on probe accuracy over content vectors without the contrastive loss.
    pub probe_ablation_min: f64,
    /// Lower bound on probe accuracy over low-level features.
    pub probe_low_min: f64,
    /// Non-decreasing steps required per label row of the intensity matrix.
    pub row_min_steps: usize,
    /// Allowed boundary jump as a multiple of the corpus median adjacent delta.
    pub boundary_factor: f64,
    /// Lower bound on held-out lip mean R².
    pub lip_r2_min: f64,
}

pub const THRESHOLDS_TOML: &str = include_str!("../thresholds.toml");

impl Thresholds {
    pub fn frozen() -> Self {
        Self::parse(THRESHOLDS_TOML).expect("bundled thresholds parse")
    }

    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| CoreError::parse("thresholds.toml", e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CoreError::io(path, e))?;
        toml::from_str(&text).map_err(|e| CoreError::parse(path, e.to_string()))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricEntry {
    pub name: String,
    pub value: f64,
    /// `"<= 0.3"`, `">= 0.45"` and the like.
    pub threshold: String,
    pub pass: bool,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub thresholds_version: u32,
    pub metrics: Vec<MetricEntry>,
    /// Intensity matrices as CSV text, one per scored emotion.
    pub sweeps: Vec<crate::finegrain::IntensityMatrix>,
}

impl MetricsReport {
    pub fn at_most(&mut self, name: &str, value: f64, max: f64) {
        self.push(name, value, format!("<= {max}"), value <= max);
    }

    pub fn at_least(&mut self, name: &str, value: f64, min: f64) {
        self.push(name, value, format!(">= {min}"), value >= min);
    }

    pub fn push(&mut self, name: &str, value: f64, threshold: String, pass: bool) {
        self.metrics.push(MetricEntry {
            name: name.to_string(),
            value,
            threshold,
            pass: pass && value.is_finite(),
        });
    }

    pub fn all_pass(&self) -> bool {
        !self.metrics.is_empty() && self.metrics.iter().all(|m| m.pass)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("serializable") + "\n"
    }
}

/// Stacks row blocks of equal width.
pub fn stack_rows(blocks: &[&Tensor]) -> Result<Tensor> {
    let cols = blocks.first().map_or(0, |b| b.cols());
    if blocks.is_empty() || blocks.iter().any(|b| b.rank() != 2 || b.cols() != cols) {
        return Err(CoreError::Dimension(
            "cannot stack empty or ragged row blocks".into(),
        ));
    }
    let data: Vec<f64> = blocks
        .iter()
        .flat_map(|b| b.data().iter().copied())
        .collect();
    Ok(Tensor::matrix(data.len() / cols, cols, data))
}

/// Utterance used to sweep `e`: the first held-out one, else the first of
/// the whole corpus.
pub fn sweep_utterance(corpus: &Corpus, held: &[usize], e: Emotion) -> Result<usize> {
    held.iter()
        .copied()
        .find(|&i| corpus.utterances[i].emotion == e)
        .or_else(|| corpus.utterances.iter().position(|u| u.emotion == e))
        .ok_or_else(|| CoreError::InvalidInput(format!("corpus has no {} utterance", e.name())))
}

/// Every frozen check on the held-out utterances of a trained model.
///
/// Chained inference runs at each utterance's own label with window
/// `fl`, which should match the training id/tex window.
pub fn evaluate_held_out(
    model: &EmoSpeaker,
    corpus: &Corpus,
    held: &[usize],
    fl: usize,
    thresholds: &Thresholds,
    seed: u64,
) -> Result<MetricsReport> {
    if held.is_empty() {
        return Err(CoreError::InvalidInput("no held-out utterances".into()));
    }
    let mut report = MetricsReport {
        thresholds_version: thresholds.version,
        ..MetricsReport::default()
    };
    let utts: Vec<_> = held.iter().map(|&i| &corpus.utterances[i]).collect();
    let x = stack_rows(&utts.iter().map(|u| &u.features).collect::<Vec<_>>())?;
    let emotions: Vec<Emotion> = utts
        .iter()
        .flat_map(|u| std::iter::repeat_n(u.emotion, u.num_frames()))
        .collect();
    let content = probe_emotion_leakage(&model.content(&x)?, &emotions, seed)?;
    report.at_most(
        "probe_content_accuracy",
        content.accuracy,
        thresholds.probe_content_max,
    );
    let low = probe_emotion_leakage(&model.encoders.encode_levels(&x)?.low, &emotions, seed)?;
    report.at_least("probe_low_accuracy", low.accuracy, thresholds.probe_low_min);

    let mut preds = Vec::with_capacity(utts.len());
    let mut max_jump: f64 = 0.0;
    for u in &utts {
        let trace = infer_sequence(model, &u.features, &u.source, u.emotion, u.label, fl)?;
        max_jump = max_jump.max(boundary_continuity(&trace.coeffs, &trace.plan)?.max_jump);
        preds.push(trace.coeffs);
    }
    let pred = stack_rows(&preds.iter().collect::<Vec<_>>())?;
    let target = stack_rows(&utts.iter().map(|u| &u.coeffs).collect::<Vec<_>>())?;
    report.at_least(
        "lip_mean_r2",
        lip_fidelity(&pred, &target)?.mean_r2,
        thresholds.lip_r2_min,
    );
    let limit = thresholds.boundary_factor * corpus_stats(corpus)?.median_adjacent_delta;
    report.at_most("boundary_max_jump", max_jump, limit);

    let oracle = IntensityOracle::new(&corpus.model);
    let grid = IntensityGrid::default();
    for e in Emotion::ALL.into_iter().filter(|&e| e != Emotion::Calm) {
        let u = &corpus.utterances[sweep_utterance(corpus, held, e)?];
        let m = grid_sweep(model, &u.features, &u.source, e, &grid, &oracle)?;
        let row_min = m
            .row_non_decreasing()
            .iter()
            .map(|r| r.0)
            .min()
            .unwrap_or(0);
        report.at_least(
            &format!("row_steps_{}", e.name()),
            row_min as f64,
            thresholds.row_min_steps as f64,
        );
        let columns = m.columns_increasing();
        report.at_least(
            &format!("columns_increasing_{}", e.name()),
            columns as f64,
            m.window_lengths.len() as f64,
        );
        report.sweeps.push(m);
    }
    Ok(report)
}
