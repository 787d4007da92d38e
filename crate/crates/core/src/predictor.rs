//! Coefficient heads (expression, id/tex, pose), the emotion classifier and
//! their losses.

use emoc_autodiff::params::param_name;
use emoc_autodiff::{mix_seed, BoundMlp, Graph, Mlp, Module, NodeId, Tensor};
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::facemodel::{Emotion, EXP_DIM, IDTEX_DIM, ID_DIM, NUM_EMOTIONS, POSE_DIM};
use crate::synthdata::NUM_LABELS;

/// Emotion category, intensity label and inference window length.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EmotionSpec {
    pub emotion: Emotion,
    pub label: u8,
    pub fl: usize,
}

impl EmotionSpec {
    pub fn new(emotion: Emotion, label: u8, fl: usize) -> Result<Self> {
        if !(1..=NUM_LABELS as u8).contains(&label) {
            return Err(CoreError::InvalidCell(format!(
                "intensity label {label} not in 1..=3"
            )));
        }
        if fl == 0 {
            return Err(CoreError::InvalidCell(
                "window length must be at least 1".into(),
            ));
        }
        Ok(Self { emotion, label, fl })
    }

    /// Emotion one-hot followed by label one-hot, 11 values.
    pub fn encoding(&self) -> Vec<f64> {
        let mut v = self.emotion.one_hot().to_vec();
        let mut p = [0.0; NUM_LABELS];
        p[usize::from(self.label) - 1] = 1.0;
        v.extend_from_slice(&p);
        v
    }
}

pub const SPEC_DIM: usize = NUM_EMOTIONS + NUM_LABELS;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossWeights {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub delta: f64,
    pub epsilon: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            alpha: 5.0,
            beta: 5.0,
            gamma: 3.0,
            delta: 1.0,
            epsilon: 1.0,
        }
    }
}

/// Per-component losses of one step.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub contras: f64,
    pub exp: f64,
    pub emo: f64,
    pub cls: f64,
    pub pose: f64,
    pub total: f64,
}

/// `alpha l_contras + beta l_exp + gamma l_emo + delta l_cls + epsilon l_pose`.
pub fn total_loss(
    w: &LossWeights,
    contras: f64,
    exp: f64,
    emo: f64,
    cls: f64,
    pose: f64,
) -> Result<f64> {
    for (v, name) in [
        (contras, "l_contras"),
        (exp, "l_exp"),
        (emo, "l_emo"),
        (cls, "l_cls"),
        (pose, "l_pose"),
    ] {
        if !v.is_finite() {
            return Err(CoreError::NonFiniteLoss(name));
        }
    }
    Ok(w.alpha * contras + w.beta * exp + w.gamma * emo + w.delta * cls + w.epsilon * pose)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HeadDims {
    pub content: usize,
    pub exp_hidden: Vec<usize>,
    pub emo_hidden: Vec<usize>,
    pub pose_hidden: Vec<usize>,
    pub cls_hidden: Vec<usize>,
}

impl Default for HeadDims {
    fn default() -> Self {
        Self {
            content: 64,
            exp_hidden: vec![64],
            emo_hidden: vec![128],
            pose_hidden: vec![64],
            cls_hidden: vec![32],
        }
    }
}

fn widths(input: usize, hidden: &[usize], output: usize) -> Vec<usize> {
    let mut d = vec![input];
    d.extend_from_slice(hidden);
    d.push(output);
    d
}

#[derive(Clone, Debug, PartialEq)]
pub struct PredictorHeads {
    /// content + exp_ref -> exp
    pub exp_net: Mlp,
    /// content + id_ref + tex_ref + e + p -> [id, tex]
    pub emo_net: Mlp,
    /// content + angle_ref + trans_ref + e + p -> [angle, trans]
    pub pose_net: Mlp,
    /// [id, tex] -> emotion logits
    pub cls: Mlp,
}

pub struct BoundHeads {
    pub exp_net: BoundMlp,
    pub emo_net: BoundMlp,
    pub pose_net: BoundMlp,
    pub cls: BoundMlp,
}

impl PredictorHeads {
    pub fn new(dims: &HeadDims, seed: u64) -> Self {
        let c = dims.content;
        Self {
            exp_net: Mlp::tanh_net(
                &widths(c + EXP_DIM, &dims.exp_hidden, EXP_DIM),
                mix_seed(seed, &[10]),
            ),
            emo_net: Mlp::tanh_net(
                &widths(c + IDTEX_DIM + SPEC_DIM, &dims.emo_hidden, IDTEX_DIM),
                mix_seed(seed, &[11]),
            ),
            pose_net: Mlp::tanh_net(
                &widths(c + POSE_DIM + SPEC_DIM, &dims.pose_hidden, POSE_DIM),
                mix_seed(seed, &[12]),
            ),
            cls: Mlp::tanh_net(
                &widths(IDTEX_DIM, &dims.cls_hidden, NUM_EMOTIONS),
                mix_seed(seed, &[13]),
            ),
        }
    }

    pub fn bind(&self, g: &mut Graph) -> BoundHeads {
        BoundHeads {
            exp_net: self.exp_net.bind(g),
            emo_net: self.emo_net.bind(g),
            pose_net: self.pose_net.bind(g),
            cls: self.cls.bind(g),
        }
    }

    /// `content` `[N, 64]`, `exp_ref` `[N, 64]` -> `[N, 64]`.
    pub fn predict_exp(&self, content: &Tensor, exp_ref: &Tensor) -> Result<Tensor> {
        let mut g = Graph::new();
        let h = self.bind(&mut g);
        let (c, r) = (g.leaf(content.clone()), g.leaf(exp_ref.clone()));
        let y = h.exp(&mut g, c, r)?;
        Ok(g.value(y).clone())
    }

    /// `idtex_ref` `[N, 160]`, `spec` `[N, 11]` -> `[N, 160]` (id then tex).
    pub fn predict_idtex(
        &self,
        content: &Tensor,
        idtex_ref: &Tensor,
        spec: &Tensor,
    ) -> Result<Tensor> {
        let mut g = Graph::new();
        let h = self.bind(&mut g);
        let (c, r, s) = (
            g.leaf(content.clone()),
            g.leaf(idtex_ref.clone()),
            g.leaf(spec.clone()),
        );
        let y = h.idtex(&mut g, c, r, s)?;
        Ok(g.value(y).clone())
    }

    /// `pose_ref` `[N, 6]` (angle then trans) -> `[N, 6]`.
    pub fn predict_pose(
        &self,
        content: &Tensor,
        pose_ref: &Tensor,
        spec: &Tensor,
    ) -> Result<Tensor> {
        let mut g = Graph::new();
        let h = self.bind(&mut g);
        let (c, r, s) = (
            g.leaf(content.clone()),
            g.leaf(pose_ref.clone()),
            g.leaf(spec.clone()),
        );
        let y = h.pose(&mut g, c, r, s)?;
        Ok(g.value(y).clone())
    }

    pub fn classify(&self, idtex: &Tensor) -> Result<Tensor> {
        Ok(self.cls.eval(idtex)?)
    }
}

impl BoundHeads {
    pub fn exp(&self, g: &mut Graph, content: NodeId, exp_ref: NodeId) -> Result<NodeId> {
        let x = g.concat(&[content, exp_ref])?;
        Ok(self.exp_net.forward(g, x)?)
    }

    pub fn idtex(
        &self,
        g: &mut Graph,
        content: NodeId,
        idtex_ref: NodeId,
        spec: NodeId,
    ) -> Result<NodeId> {
        let x = g.concat(&[content, idtex_ref, spec])?;
        Ok(self.emo_net.forward(g, x)?)
    }

    pub fn pose(
        &self,
        g: &mut Graph,
        content: NodeId,
        pose_ref: NodeId,
        spec: NodeId,
    ) -> Result<NodeId> {
        let x = g.concat(&[content, pose_ref, spec])?;
        Ok(self.pose_net.forward(g, x)?)
    }

    pub fn param_ids(&self) -> Vec<NodeId> {
        [&self.exp_net, &self.emo_net, &self.pose_net, &self.cls]
            .iter()
            .flat_map(|m| m.param_ids())
            .collect()
    }
}

impl Module for PredictorHeads {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(String, &Tensor)) {
        self.exp_net.visit(&param_name(prefix, "exp_net"), f);
        self.emo_net.visit(&param_name(prefix, "emo_net"), f);
        self.pose_net.visit(&param_name(prefix, "pose_net"), f);
        self.cls.visit(&param_name(prefix, "cls"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor)) {
        self.exp_net.visit_mut(&param_name(prefix, "exp_net"), f);
        self.emo_net.visit_mut(&param_name(prefix, "emo_net"), f);
        self.pose_net.visit_mut(&param_name(prefix, "pose_net"), f);
        self.cls.visit_mut(&param_name(prefix, "cls"), f);
    }
}

/// Batch mean of the unsquared Euclidean norm of `pred - target` per row.
/// The norm's subgradient at zero is taken as zero.
pub fn norm_loss_nodes(g: &mut Graph, pred: NodeId, target: NodeId) -> Result<NodeId> {
    let d = g.sub(pred, target)?;
    let n = g.row_norm(d);
    Ok(g.mean(n))
}

/// Softmax cross-entropy against one-hot rows, averaged over the batch.
pub fn cls_loss_nodes(g: &mut Graph, logits: NodeId, one_hot: NodeId) -> Result<NodeId> {
    let lse = g.log_sum_exp_rows(logits);
    let picked = g.row_dot(logits, one_hot)?;
    let per = g.sub(lse, picked)?;
    Ok(g.mean(per))
}

fn norm_loss(pred: &Tensor, target: &Tensor) -> Result<f64> {
    if pred.shape() != target.shape() {
        return Err(CoreError::Dimension(format!(
            "prediction {:?} vs target {:?}",
            pred.shape(),
            target.shape()
        )));
    }
    let mut g = Graph::new();
    let (p, t) = (g.leaf(pred.clone()), g.leaf(target.clone()));
    let l = norm_loss_nodes(&mut g, p, t)?;
    Ok(g.value(l).item())
}

pub fn loss_exp(pred: &Tensor, target: &Tensor) -> Result<f64> {
    norm_loss(pred, target)
}

pub fn loss_emo(pred: &Tensor, target: &Tensor) -> Result<f64> {
    norm_loss(pred, target)
}

pub fn loss_pose(pred: &Tensor, target: &Tensor) -> Result<f64> {
    norm_loss(pred, target)
}

/// Classifier loss of predicted `[id, tex]` rows against emotions.
pub fn loss_cls(cls: &Mlp, pred_idtex: &Tensor, emotions: &[Emotion]) -> Result<f64> {
    let logits = cls.eval(pred_idtex)?;
    loss_cls_from_logits(&logits, emotions)
}

pub fn loss_cls_from_logits(logits: &Tensor, emotions: &[Emotion]) -> Result<f64> {
    if logits.rows() != emotions.len() || logits.cols() != NUM_EMOTIONS {
        return Err(CoreError::Dimension(format!(
            "logits {:?} for {} labels",
            logits.shape(),
            emotions.len()
        )));
    }
    let oh: Vec<f64> = emotions.iter().flat_map(|e| e.one_hot()).collect();
    let mut g = Graph::new();
    let l = g.leaf(logits.clone());
    let t = g.leaf(Tensor::matrix(emotions.len(), NUM_EMOTIONS, oh));
    let loss = cls_loss_nodes(&mut g, l, t)?;
    Ok(g.value(loss).item())
}

/// Splits `[N, 160]` into id and tex halves.
pub fn split_idtex(row: &[f64]) -> (&[f64], &[f64]) {
    row.split_at(ID_DIM)
}
