//! The jointly trained network: decoupler encoders, AU decoder and heads.

use emoc_autodiff::{mix_seed, Graph, Module, NodeId, Tensor};
use serde::{Deserialize, Serialize};

use crate::decoupler::{AuDecoder, BoundEncoders, EncoderDims, EncoderStack};
use crate::error::{CoreError, Result};
use crate::predictor::{BoundHeads, HeadDims, PredictorHeads};

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub encoder: EncoderDims,
    pub heads: HeadDims,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.heads.content != self.encoder.high {
            return Err(CoreError::InvalidSpec(format!(
                "head content width {} differs from encoder output {}",
                self.heads.content, self.encoder.high
            )));
        }
        let e = &self.encoder;
        if e.low != e.mid || e.mid != e.high {
            return Err(CoreError::InvalidSpec(format!(
                "the shared AU decoder needs equal level widths, got {}/{}/{}",
                e.low, e.mid, e.high
            )));
        }
        let widths = [
            self.encoder.input,
            self.encoder.low,
            self.encoder.mid,
            self.encoder.high,
        ];
        let hidden = self
            .encoder
            .hidden
            .iter()
            .chain(&self.encoder.decoder_hidden)
            .chain(&self.heads.exp_hidden)
            .chain(&self.heads.emo_hidden)
            .chain(&self.heads.pose_hidden)
            .chain(&self.heads.cls_hidden);
        if widths.iter().chain(hidden).any(|&w| w == 0) {
            return Err(CoreError::InvalidSpec(
                "layer widths must be positive".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EmoSpeaker {
    pub encoders: EncoderStack,
    pub decoder: AuDecoder,
    pub heads: PredictorHeads,
}

pub struct BoundEmoSpeaker {
    pub encoders: BoundEncoders,
    pub decoder: emoc_autodiff::BoundMlp,
    pub heads: BoundHeads,
}

impl BoundEmoSpeaker {
    /// Parameter node ids in [`Module::visit`] order.
    pub fn param_ids(&self) -> Vec<NodeId> {
        let mut ids = self.encoders.param_ids();
        ids.extend(self.decoder.param_ids());
        ids.extend(self.heads.param_ids());
        ids
    }
}

impl EmoSpeaker {
    pub fn new(cfg: &ModelConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let enc_seed = mix_seed(seed, &[1]);
        Ok(Self {
            encoders: EncoderStack::new(&cfg.encoder, enc_seed),
            decoder: AuDecoder::new(cfg.encoder.high, &cfg.encoder.decoder_hidden, enc_seed),
            heads: PredictorHeads::new(&cfg.heads, mix_seed(seed, &[2])),
        })
    }

    pub fn bind(&self, g: &mut Graph) -> BoundEmoSpeaker {
        BoundEmoSpeaker {
            encoders: self.encoders.bind(g),
            decoder: self.decoder.net.bind(g),
            heads: self.heads.bind(g),
        }
    }

    /// Content vectors `[T, 64]` of feature rows `[T, 39]`.
    pub fn content(&self, features: &Tensor) -> Result<Tensor> {
        self.encoders.content(features)
    }
}

impl Module for EmoSpeaker {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(String, &Tensor)) {
        self.encoders.visit(prefix, f);
        self.decoder.visit(prefix, f);
        self.heads.visit(prefix, f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor)) {
        self.encoders.visit_mut(prefix, f);
        self.decoder.visit_mut(prefix, f);
        self.heads.visit_mut(prefix, f);
    }
}
