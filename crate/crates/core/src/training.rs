//! Joint training of decoupler and predictor heads on the synthetic corpus.

use std::path::Path;

use emoc_autodiff::{adam_step, mix_seed, AdamConfig, AdamState, Graph, NodeId, Tensor};
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::decoupler::contrastive_loss_nodes;
use crate::error::{CoreError, Result};
use crate::facemodel::{
    Emotion, COEFF_DIM, EXP_DIM, EXP_RANGE, IDTEX_DIM, NUM_AUS, NUM_EMOTIONS, POSE_DIM,
};
use crate::model::EmoSpeaker;
use crate::predictor::{
    cls_loss_nodes, norm_loss_nodes, total_loss, EmotionSpec, LossBreakdown, LossWeights, SPEC_DIM,
};
use crate::synthdata::{Corpus, FEATURE_DIM};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    /// Final learning rate as a fraction of `lr` under cosine decay; 1 keeps it constant.
    pub final_lr_fraction: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        let a = AdamConfig::default();
        Self {
            lr: a.lr,
            beta1: a.beta1,
            beta2: a.beta2,
            eps: a.eps,
            weight_decay: a.weight_decay,
            final_lr_fraction: 1.0,
        }
    }
}

impl OptimizerConfig {
    /// Learning rate at `step` of `total`.
    pub fn lr_at(&self, step: usize, total: usize) -> f64 {
        if self.final_lr_fraction == 1.0 || total <= 1 {
            return self.lr;
        }
        let progress = step as f64 / (total - 1) as f64;
        let f = self.final_lr_fraction;
        self.lr * (f + (1.0 - f) * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos()))
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps,
            weight_decay: self.weight_decay,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub seed: u64,
    pub epochs: usize,
    /// Utterances per batch; also the contrastive group size `K`.
    pub batch_utterances: usize,
    pub idtex_window: usize,
    pub pose_window: usize,
    pub tau: f64,
    pub weights: LossWeights,
    pub optimizer: OptimizerConfig,
    /// Trailing utterances of every speaker kept out of training.
    pub holdout_per_speaker: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            epochs: 500,
            batch_utterances: 10,
            idtex_window: 5,
            pose_window: 20,
            tau: 0.1,
            weights: LossWeights::default(),
            optimizer: OptimizerConfig::default(),
            holdout_per_speaker: 2,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_utterances < 2 {
            return Err(CoreError::InvalidSpec(
                "batch_utterances must be at least 2".into(),
            ));
        }
        if self.idtex_window == 0 || self.pose_window == 0 {
            return Err(CoreError::InvalidSpec(
                "training windows must be at least 1 frame".into(),
            ));
        }
        if !self.pose_window.is_multiple_of(self.idtex_window) {
            return Err(CoreError::InvalidSpec(format!(
                "pose window {} is not a multiple of the id/tex window {}",
                self.pose_window, self.idtex_window
            )));
        }
        if self.tau.is_nan() || self.tau <= 0.0 {
            return Err(CoreError::InvalidTemperature(self.tau));
        }
        let w = &self.weights;
        if [w.alpha, w.beta, w.gamma, w.delta, w.epsilon]
            .iter()
            .any(|v| !(v.is_finite() && *v >= 0.0))
        {
            return Err(CoreError::InvalidSpec(
                "loss weights must be finite and nonnegative".into(),
            ));
        }
        if self.optimizer.lr.is_nan() || self.optimizer.lr <= 0.0 {
            return Err(CoreError::InvalidSpec(
                "learning rate must be positive".into(),
            ));
        }
        if !(self.optimizer.final_lr_fraction > 0.0 && self.optimizer.final_lr_fraction <= 1.0) {
            return Err(CoreError::InvalidSpec(
                "final_lr_fraction must be in (0, 1]".into(),
            ));
        }
        Ok(())
    }

    /// One epoch visits every training utterance once in expectation.
    pub fn steps_per_epoch(&self, n_train: usize) -> usize {
        n_train.div_ceil(self.batch_utterances).max(1)
    }
}

/// Indices of training and held-out utterances.
pub fn split_corpus(
    corpus: &Corpus,
    holdout_per_speaker: usize,
) -> Result<(Vec<usize>, Vec<usize>)> {
    let n_utt = corpus.spec.n_utterances;
    if holdout_per_speaker >= n_utt {
        return Err(CoreError::InvalidSpec(format!(
            "holding out {holdout_per_speaker} of {n_utt} utterances per speaker leaves nothing to train on"
        )));
    }
    let (train, held): (Vec<usize>, Vec<usize>) = (0..corpus.utterances.len())
        .partition(|&i| corpus.utterances[i].index < n_utt - holdout_per_speaker);
    Ok((train, held))
}

/// `K` utterance segments of one pose window, stored position-major: row
/// `p * K + u` is frame `p` of segment `u`, so rows `p * K .. (p + 1) * K`
/// form one contrastive group of frames from distinct utterances.
#[derive(Clone, Debug, PartialEq)]
pub struct JointBatch {
    pub k: usize,
    pub window: usize,
    pub features: Tensor,
    pub au: Tensor,
    pub target: Tensor,
    pub exp_ref: Tensor,
    pub idtex_ref: Tensor,
    pub pose_ref: Tensor,
    pub spec: Tensor,
    pub emotions: Vec<Emotion>,
    /// `(utterance index, first frame)` per segment.
    pub segments: Vec<(usize, usize)>,
}

impl JointBatch {
    pub fn rows(&self) -> usize {
        self.k * self.window
    }
}

/// Builds a batch from explicit segments. Id/tex and expression references
/// are the ground truth one frame before each id/tex sub-window (the
/// neutral source before frame 0); the pose reference is the ground truth
/// one frame before the segment.
pub fn build_joint_batch(
    corpus: &Corpus,
    segments: &[(usize, usize)],
    cfg: &TrainConfig,
) -> Result<JointBatch> {
    let k = segments.len();
    let w = cfg.pose_window;
    let n = k * w;
    let mut features = Vec::with_capacity(n * FEATURE_DIM);
    let mut au = Vec::with_capacity(n * NUM_AUS);
    let mut target = Vec::with_capacity(n * COEFF_DIM);
    let mut exp_ref = Vec::with_capacity(n * EXP_DIM);
    let mut idtex_ref = Vec::with_capacity(n * IDTEX_DIM);
    let mut pose_ref = Vec::with_capacity(n * POSE_DIM);
    let mut spec = Vec::with_capacity(n * SPEC_DIM);
    let mut emotions = Vec::with_capacity(n);
    for &(u, t0) in segments {
        let utt = corpus
            .utterances
            .get(u)
            .ok_or_else(|| CoreError::InvalidInput(format!("utterance {u} out of range")))?;
        if t0 + w > utt.num_frames() {
            return Err(CoreError::InvalidInput(format!(
                "segment [{t0}, {}) exceeds {} frames",
                t0 + w,
                utt.num_frames()
            )));
        }
    }
    for p in 0..w {
        for &(u, t0) in segments {
            let utt = &corpus.utterances[u];
            let t = t0 + p;
            features.extend_from_slice(utt.features.row(t));
            au.extend_from_slice(utt.au.row(t));
            target.extend_from_slice(utt.coeffs.row(t));
            let sub_start = t0 + (p / cfg.idtex_window) * cfg.idtex_window;
            let r = utt.coeff_or_source(sub_start as i64 - 1);
            idtex_ref.extend_from_slice(&r[..IDTEX_DIM]);
            exp_ref.extend_from_slice(&r[EXP_RANGE]);
            let r = utt.coeff_or_source(t0 as i64 - 1);
            pose_ref.extend_from_slice(&r[COEFF_DIM - POSE_DIM..]);
            spec.extend(EmotionSpec::new(utt.emotion, utt.label, cfg.idtex_window)?.encoding());
            emotions.push(utt.emotion);
        }
    }
    Ok(JointBatch {
        k,
        window: w,
        features: Tensor::matrix(n, FEATURE_DIM, features),
        au: Tensor::matrix(n, NUM_AUS, au),
        target: Tensor::matrix(n, COEFF_DIM, target),
        exp_ref: Tensor::matrix(n, EXP_DIM, exp_ref),
        idtex_ref: Tensor::matrix(n, IDTEX_DIM, idtex_ref),
        pose_ref: Tensor::matrix(n, POSE_DIM, pose_ref),
        spec: Tensor::matrix(n, SPEC_DIM, spec),
        emotions,
        segments: segments.to_vec(),
    })
}

/// Draws `K` distinct training utterances and a window start in each,
/// deterministically from `(cfg.seed, step)`.
pub fn sample_joint_batch(
    corpus: &Corpus,
    train: &[usize],
    cfg: &TrainConfig,
    step: u64,
) -> Result<JointBatch> {
    let k = cfg.batch_utterances;
    if train.len() < k {
        return Err(CoreError::InvalidSpec(format!(
            "{} training utterances for batches of {k}",
            train.len()
        )));
    }
    let frames = corpus.spec.frames_per_utterance;
    if frames < cfg.pose_window {
        return Err(CoreError::InvalidSpec(format!(
            "utterances of {frames} frames are shorter than the pose window {}",
            cfg.pose_window
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(cfg.seed, &[0x0062_6174_6368, step]));
    let segments: Vec<(usize, usize)> = sample(&mut rng, train.len(), k)
        .into_iter()
        .map(|i| (train[i], rng.random_range(0..=frames - cfg.pose_window)))
        .collect();
    build_joint_batch(corpus, &segments, cfg)
}

/// Loss nodes of one joint forward pass.
pub struct JointLossNodes {
    pub contras: NodeId,
    pub exp: NodeId,
    pub emo: NodeId,
    pub cls: NodeId,
    pub pose: NodeId,
    pub total: NodeId,
}

pub fn joint_loss_nodes(
    g: &mut Graph,
    bound: &crate::model::BoundEmoSpeaker,
    batch: &JointBatch,
    cfg: &TrainConfig,
) -> Result<JointLossNodes> {
    let x = g.leaf(batch.features.clone());
    let levels = bound.encoders.forward(g, x)?;
    let decoded = [
        bound.decoder.forward(g, levels.low)?,
        bound.decoder.forward(g, levels.mid)?,
        bound.decoder.forward(g, levels.high)?,
    ];
    let mut group_losses = Vec::with_capacity(batch.window);
    for p in 0..batch.window {
        let (lo, hi) = (p * batch.k, (p + 1) * batch.k);
        let mut parts = [decoded[0]; 3];
        for (slot, &d) in parts.iter_mut().zip(&decoded) {
            *slot = g.slice_rows(d, lo, hi)?;
        }
        let au = Tensor::matrix(
            batch.k,
            NUM_AUS,
            batch.au.data()[lo * NUM_AUS..hi * NUM_AUS].to_vec(),
        );
        group_losses.push(contrastive_loss_nodes(g, &au, parts, cfg.tau)?);
    }
    let mut contras = group_losses[0];
    for &l in &group_losses[1..] {
        contras = g.add(contras, l)?;
    }
    let contras = g.scale(contras, 1.0 / batch.window as f64);

    let content = levels.high;
    let target = g.leaf(batch.target.clone());
    let exp_ref = g.leaf(batch.exp_ref.clone());
    let idtex_ref = g.leaf(batch.idtex_ref.clone());
    let pose_ref = g.leaf(batch.pose_ref.clone());
    let spec = g.leaf(batch.spec.clone());

    let exp_pred = bound.heads.exp(g, content, exp_ref)?;
    let exp_tgt = g.slice_cols(target, EXP_RANGE.start, EXP_RANGE.end)?;
    let exp = norm_loss_nodes(g, exp_pred, exp_tgt)?;

    let idtex_pred = bound.heads.idtex(g, content, idtex_ref, spec)?;
    let idtex_tgt = g.slice_cols(target, 0, IDTEX_DIM)?;
    let emo = norm_loss_nodes(g, idtex_pred, idtex_tgt)?;

    let logits = bound.heads.cls.forward(g, idtex_pred)?;
    let one_hot: Vec<f64> = batch.emotions.iter().flat_map(|e| e.one_hot()).collect();
    let one_hot = g.leaf(Tensor::matrix(batch.rows(), NUM_EMOTIONS, one_hot));
    let cls = cls_loss_nodes(g, logits, one_hot)?;

    let pose_pred = bound.heads.pose(g, content, pose_ref, spec)?;
    let pose_tgt = g.slice_cols(target, COEFF_DIM - POSE_DIM, COEFF_DIM)?;
    let pose = norm_loss_nodes(g, pose_pred, pose_tgt)?;

    let w = &cfg.weights;
    let mut total = g.scale(contras, w.alpha);
    for (node, weight) in [
        (exp, w.beta),
        (emo, w.gamma),
        (cls, w.delta),
        (pose, w.epsilon),
    ] {
        let term = g.scale(node, weight);
        total = g.add(total, term)?;
    }
    Ok(JointLossNodes {
        contras,
        exp,
        emo,
        cls,
        pose,
        total,
    })
}

/// Loss breakdown and gradients in [`emoc_autodiff::Module::visit`] order.
pub fn joint_loss_and_grads(
    model: &EmoSpeaker,
    batch: &JointBatch,
    cfg: &TrainConfig,
) -> Result<(LossBreakdown, Vec<Tensor>)> {
    let mut g = Graph::new();
    let bound = model.bind(&mut g);
    let nodes = joint_loss_nodes(&mut g, &bound, batch, cfg)?;
    let v = |id: NodeId| g.value(id).item();
    let (contras, exp, emo, cls, pose) = (
        v(nodes.contras),
        v(nodes.exp),
        v(nodes.emo),
        v(nodes.cls),
        v(nodes.pose),
    );
    let breakdown = LossBreakdown {
        contras,
        exp,
        emo,
        cls,
        pose,
        total: total_loss(&cfg.weights, contras, exp, emo, cls, pose)?,
    };
    let grads = g.backward(nodes.total)?;
    let out = bound
        .param_ids()
        .into_iter()
        .map(|id| grads.get_or_zeros(id, g.value(id)))
        .collect();
    Ok((breakdown, out))
}

/// One ADAM step on the total loss. Returns the pre-step breakdown.
pub fn train_joint_step(
    model: &mut EmoSpeaker,
    batch: &JointBatch,
    cfg: &TrainConfig,
    state: &mut AdamState,
    lr: f64,
) -> Result<LossBreakdown> {
    let (breakdown, grads) = joint_loss_and_grads(model, batch, cfg)?;
    adam_step(model, &grads, state, &cfg.optimizer.adam().with_lr(lr))?;
    Ok(breakdown)
}

/// Runs `steps` joint steps; `on_step` sees every step's breakdown and may
/// abort training by returning an error.
pub fn train_joint<F>(
    model: &mut EmoSpeaker,
    corpus: &Corpus,
    train: &[usize],
    cfg: &TrainConfig,
    steps: usize,
    mut on_step: F,
) -> Result<Vec<LossBreakdown>>
where
    F: FnMut(usize, &EmoSpeaker, &LossBreakdown) -> Result<()>,
{
    cfg.validate()?;
    let mut state = AdamState::new();
    let mut log = Vec::with_capacity(steps);
    for step in 0..steps {
        let batch = sample_joint_batch(corpus, train, cfg, step as u64)?;
        let b = train_joint_step(
            model,
            &batch,
            cfg,
            &mut state,
            cfg.optimizer.lr_at(step, steps),
        )?;
        on_step(step, model, &b)?;
        log.push(b);
    }
    Ok(log)
}

pub const TRAINING_LOG_HEADER: [&str; 7] = [
    "step",
    "l_contras",
    "l_exp",
    "l_emo",
    "l_cls",
    "l_pose",
    "l_total",
];

pub fn write_training_log(path: &Path, log: &[LossBreakdown]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| CoreError::parse(path, e.to_string()))?;
    let err = |e: csv::Error| CoreError::parse(path, e.to_string());
    w.write_record(TRAINING_LOG_HEADER).map_err(err)?;
    for (i, b) in log.iter().enumerate() {
        w.write_record([
            i.to_string(),
            b.contras.to_string(),
            b.exp.to_string(),
            b.emo.to_string(),
            b.cls.to_string(),
            b.pose.to_string(),
            b.total.to_string(),
        ])
        .map_err(err)?;
    }
    w.flush().map_err(|e| CoreError::io(path, e))
}

/// Mean of each consecutive block of `n` values (a trailing partial block
/// is dropped).
pub fn block_means(values: &[f64], n: usize) -> Vec<f64> {
    values
        .chunks_exact(n)
        .map(|c| c.iter().sum::<f64>() / n as f64)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelConfig;
    use crate::synthdata::{generate_corpus, SynthSpec};

    fn tiny() -> Corpus {
        generate_corpus(&SynthSpec {
            n_speakers: 2,
            n_utterances: 6,
            frames_per_utterance: 30,
            ..SynthSpec::default()
        })
        .unwrap()
    }

    #[test]
    fn batch_rows_are_position_major_with_chained_refs() {
        let c = tiny();
        let cfg = TrainConfig::default();
        let b = build_joint_batch(&c, &[(0, 0), (3, 7)], &cfg).unwrap();
        assert_eq!(b.rows(), 40);
        // row p * K + u
        assert_eq!(b.features.row(2 * 2 + 1), c.utterances[3].features.row(9));
        assert_eq!(
            b.idtex_ref.row(0),
            &c.utterances[0].source.to_vec()[..IDTEX_DIM]
        );
        // frame 7 + 6 sits in the second id/tex window, starting at 12
        assert_eq!(
            b.idtex_ref.row(6 * 2 + 1),
            &c.utterances[3].coeffs.row(11)[..IDTEX_DIM]
        );
        assert_eq!(
            b.pose_ref.row(19 * 2 + 1),
            &c.utterances[3].coeffs.row(6)[COEFF_DIM - POSE_DIM..]
        );
    }

    #[test]
    fn joint_step_is_deterministic() {
        let c = tiny();
        let cfg = TrainConfig {
            batch_utterances: 3,
            ..TrainConfig::default()
        };
        let (train, _) = split_corpus(&c, 1).unwrap();
        let run = || {
            let mut m = EmoSpeaker::new(&ModelConfig::default(), 5).unwrap();
            train_joint(&mut m, &c, &train, &cfg, 3, |_, _, _| Ok(())).unwrap()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn windows_must_nest() {
        let cfg = TrainConfig {
            pose_window: 12,
            ..TrainConfig::default()
        };
        assert!(cfg.validate().is_err());
    }
}
