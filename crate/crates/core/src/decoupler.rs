//! Multi-level audio encoders, the shared AU decoder and the AU-anchored
//! contrastive loss.

use emoc_autodiff::params::param_name;
use emoc_autodiff::{
    adam_step, mix_seed, Activation, AdamConfig, AdamState, BoundMlp, Graph, Mlp, Module, NodeId,
    Tensor,
};
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::facemodel::NUM_AUS;

/// Level features of one batch of frames, `[N, width]` each.
#[derive(Clone, Debug, PartialEq)]
pub struct Levels {
    pub low: Tensor,
    pub mid: Tensor,
    /// The content vector.
    pub high: Tensor,
}

#[derive(Clone, Copy, Debug)]
pub struct LevelNodes {
    pub low: NodeId,
    pub mid: NodeId,
    pub high: NodeId,
}

impl LevelNodes {
    pub fn all(&self) -> [NodeId; 3] {
        [self.low, self.mid, self.high]
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EncoderDims {
    pub input: usize,
    pub low: usize,
    pub mid: usize,
    pub high: usize,
    /// Hidden widths inside each level encoder.
    pub hidden: Vec<usize>,
    pub decoder_hidden: Vec<usize>,
}

impl Default for EncoderDims {
    fn default() -> Self {
        Self {
            input: 39,
            low: 64,
            mid: 64,
            high: 64,
            hidden: Vec::new(),
            decoder_hidden: Vec::new(),
        }
    }
}

fn widths(input: usize, hidden: &[usize], output: usize) -> Vec<usize> {
    let mut d = vec![input];
    d.extend_from_slice(hidden);
    d.push(output);
    d
}

/// `low = E_low(a)`, `mid = E_mid(low)`, `high = E_high(mid)`; tanh throughout.
#[derive(Clone, Debug, PartialEq)]
pub struct EncoderStack {
    pub low: Mlp,
    pub mid: Mlp,
    pub high: Mlp,
}

pub struct BoundEncoders {
    low: BoundMlp,
    mid: BoundMlp,
    high: BoundMlp,
}

impl EncoderStack {
    pub fn new(dims: &EncoderDims, seed: u64) -> Self {
        let net = |i: usize, o: usize, k: u64| {
            Mlp::new(
                &widths(i, &dims.hidden, o),
                Activation::Tanh,
                Activation::Tanh,
                mix_seed(seed, &[k]),
            )
        };
        Self {
            low: net(dims.input, dims.low, 0),
            mid: net(dims.low, dims.mid, 1),
            high: net(dims.mid, dims.high, 2),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.low.input_dim()
    }

    pub fn content_dim(&self) -> usize {
        self.high.output_dim()
    }

    pub fn bind(&self, g: &mut Graph) -> BoundEncoders {
        BoundEncoders {
            low: self.low.bind(g),
            mid: self.mid.bind(g),
            high: self.high.bind(g),
        }
    }

    /// Encodes every row of `frames` (`[N, 39]`).
    pub fn encode_levels(&self, frames: &Tensor) -> Result<Levels> {
        let mut g = Graph::new();
        let b = self.bind(&mut g);
        let x = g.leaf(frames.clone());
        let n = b.forward(&mut g, x)?;
        Ok(Levels {
            low: g.value(n.low).clone(),
            mid: g.value(n.mid).clone(),
            high: g.value(n.high).clone(),
        })
    }

    pub fn content(&self, frames: &Tensor) -> Result<Tensor> {
        Ok(self.encode_levels(frames)?.high)
    }
}

impl BoundEncoders {
    pub fn forward(&self, g: &mut Graph, x: NodeId) -> Result<LevelNodes> {
        let low = self.low.forward(g, x)?;
        let mid = self.mid.forward(g, low)?;
        let high = self.high.forward(g, mid)?;
        Ok(LevelNodes { low, mid, high })
    }

    pub fn param_ids(&self) -> Vec<NodeId> {
        [&self.low, &self.mid, &self.high]
            .iter()
            .flat_map(|m| m.param_ids())
            .collect()
    }
}

impl Module for EncoderStack {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(String, &Tensor)) {
        self.low.visit(&param_name(prefix, "enc_low"), f);
        self.mid.visit(&param_name(prefix, "enc_mid"), f);
        self.high.visit(&param_name(prefix, "enc_high"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor)) {
        self.low.visit_mut(&param_name(prefix, "enc_low"), f);
        self.mid.visit_mut(&param_name(prefix, "enc_mid"), f);
        self.high.visit_mut(&param_name(prefix, "enc_high"), f);
    }
}

/// One decoder shared by all three levels; outputs are unclamped.
#[derive(Clone, Debug, PartialEq)]
pub struct AuDecoder {
    pub net: Mlp,
}

impl AuDecoder {
    pub fn new(width: usize, hidden: &[usize], seed: u64) -> Self {
        Self {
            net: Mlp::tanh_net(&widths(width, hidden, NUM_AUS), mix_seed(seed, &[3])),
        }
    }

    pub fn decode_au(&self, feat: &Tensor) -> Result<Tensor> {
        Ok(self.net.eval(feat)?)
    }
}

impl Module for AuDecoder {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(String, &Tensor)) {
        self.net.visit(&param_name(prefix, "au_dec"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor)) {
        self.net.visit_mut(&param_name(prefix, "au_dec"), f);
    }
}

/// `K` frames with their ground-truth AUs.
#[derive(Clone, Debug, PartialEq)]
pub struct ContrastiveBatch {
    /// `[K, 39]`
    pub features: Tensor,
    /// `[K, 17]`
    pub au: Tensor,
    pub tau: f64,
}

impl ContrastiveBatch {
    pub fn validate(&self) -> Result<()> {
        if self.tau.is_nan() || self.tau <= 0.0 {
            return Err(CoreError::InvalidTemperature(self.tau));
        }
        if self.features.rows() != self.au.rows() || self.au.cols() != NUM_AUS {
            return Err(CoreError::Dimension(format!(
                "{} feature rows vs AU matrix {:?}",
                self.features.rows(),
                self.au.shape()
            )));
        }
        Ok(())
    }
}

fn check_rows_nonzero(t: &Tensor, what: &str) -> Result<()> {
    for r in 0..t.rows() {
        if t.row(r).iter().all(|&v| v == 0.0) {
            return Err(CoreError::ZeroNorm(format!("{what} of sample {r}")));
        }
    }
    Ok(())
}

fn unit_rows(t: &Tensor) -> Tensor {
    let c = t.cols();
    let mut out = t.clone();
    for row in out.data_mut().chunks_mut(c) {
        let n = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        row.iter_mut().for_each(|v| *v /= n);
    }
    out
}

/// Contrastive loss on a tape, from ground-truth AUs (`[K, 17]`) and the
/// decoded AU features of each level (`[K, 17]` nodes).
///
/// For anchor `j` the positive is its own low-level decoding; the
/// denominator runs over all `K` samples at all three levels, positive
/// included. Similarity is cosine. Returns the mean over anchors.
pub fn contrastive_loss_nodes(
    g: &mut Graph,
    au: &Tensor,
    decoded: [NodeId; 3],
    tau: f64,
) -> Result<NodeId> {
    if tau.is_nan() || tau <= 0.0 {
        return Err(CoreError::InvalidTemperature(tau));
    }
    check_rows_nonzero(au, "ground-truth AU vector")?;
    for (node, level) in decoded.iter().zip(["low", "mid", "high"]) {
        check_rows_nonzero(g.value(*node), &format!("decoded {level}-level AU feature"))?;
    }
    let anchors = g.leaf(unit_rows(au));
    let mut sims = Vec::with_capacity(3);
    let mut positive = None;
    for (l, &d) in decoded.iter().enumerate() {
        let dn = g.row_normalize(d);
        if l == 0 {
            positive = Some(g.row_dot(anchors, dn)?);
        }
        sims.push(g.matmul_nt(anchors, dn)?);
    }
    let all = g.concat(&sims)?;
    let logits = g.scale(all, 1.0 / tau);
    let lse = g.log_sum_exp_rows(logits);
    let pos = g.scale(positive.expect("low level present"), 1.0 / tau);
    let per_anchor = g.sub(lse, pos)?;
    Ok(g.mean(per_anchor))
}

/// Value-only convenience over [`contrastive_loss_nodes`].
pub fn contrastive_loss_from_features(au: &Tensor, decoded: [&Tensor; 3], tau: f64) -> Result<f64> {
    let mut g = Graph::new();
    let ids = decoded.map(|d| g.leaf(d.clone()));
    let loss = contrastive_loss_nodes(&mut g, au, ids, tau)?;
    Ok(g.value(loss).item())
}

/// Builds encoders and decoder on `g` and returns the contrastive loss node.
pub fn contrastive_loss_graph(
    g: &mut Graph,
    enc: &BoundEncoders,
    dec: &BoundMlp,
    batch: &ContrastiveBatch,
) -> Result<NodeId> {
    batch.validate()?;
    let x = g.leaf(batch.features.clone());
    let levels = enc.forward(g, x)?;
    let mut decoded = Vec::with_capacity(3);
    for l in levels.all() {
        decoded.push(dec.forward(g, l)?);
    }
    contrastive_loss_nodes(
        g,
        &batch.au,
        [decoded[0], decoded[1], decoded[2]],
        batch.tau,
    )
}

pub fn contrastive_loss(
    batch: &ContrastiveBatch,
    stack: &EncoderStack,
    dec: &AuDecoder,
) -> Result<f64> {
    let mut g = Graph::new();
    let enc = stack.bind(&mut g);
    let d = dec.net.bind(&mut g);
    let loss = contrastive_loss_graph(&mut g, &enc, &d, batch)?;
    Ok(g.value(loss).item())
}

/// Encoders plus decoder, the parameter set of decoupler pre-training.
#[derive(Clone, Debug, PartialEq)]
pub struct Decoupler {
    pub encoders: EncoderStack,
    pub decoder: AuDecoder,
}

impl Decoupler {
    pub fn new(dims: &EncoderDims, seed: u64) -> Self {
        Self {
            encoders: EncoderStack::new(dims, seed),
            decoder: AuDecoder::new(dims.high, &dims.decoder_hidden, seed),
        }
    }

    /// Loss and gradients in [`Module::visit`] order.
    pub fn loss_and_grads(&self, batch: &ContrastiveBatch) -> Result<(f64, Vec<Tensor>)> {
        let mut g = Graph::new();
        let enc = self.encoders.bind(&mut g);
        let dec = self.decoder.net.bind(&mut g);
        let loss = contrastive_loss_graph(&mut g, &enc, &dec, batch)?;
        let grads = g.backward(loss)?;
        let ids: Vec<NodeId> = enc.param_ids().into_iter().chain(dec.param_ids()).collect();
        let out = ids
            .iter()
            .map(|&id| grads.get_or_zeros(id, g.value(id)))
            .collect();
        Ok((g.value(loss).item(), out))
    }
}

impl Module for Decoupler {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(String, &Tensor)) {
        self.encoders.visit(prefix, f);
        self.decoder.visit(prefix, f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor)) {
        self.encoders.visit_mut(prefix, f);
        self.decoder.visit_mut(prefix, f);
    }
}

/// One ADAM step on the contrastive loss alone. Returns the pre-step loss.
pub fn train_decoupler_step(
    model: &mut Decoupler,
    batch: &ContrastiveBatch,
    state: &mut AdamState,
    cfg: &AdamConfig,
) -> Result<f64> {
    batch.validate()?;
    let (loss, grads) = model.loss_and_grads(batch)?;
    if !loss.is_finite() {
        return Err(CoreError::NonFiniteLoss("l_contras"));
    }
    adam_step(model, &grads, state, cfg)?;
    Ok(loss)
}
