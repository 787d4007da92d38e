//! Finite-difference verification of every trainable module on the losses
//! it is actually trained with, at reduced widths.

use emoc_autodiff::{finite_diff_check, GradCheckReport, Module, Tensor};

use crate::decoupler::EncoderDims;
use crate::error::Result;
use crate::mappingnet::{mapping_loss, mapping_loss_and_grads, MappingDataset, MappingNet};
use crate::model::{EmoSpeaker, ModelConfig};
use crate::predictor::{HeadDims, LossWeights};
use crate::synthdata::{generate_corpus, SynthSpec};
use crate::training::{joint_loss_and_grads, sample_joint_batch, TrainConfig};

pub const GRAD_STEP: f64 = 1e-5;
pub const GRAD_TOL: f64 = 1e-4;

/// Parameter-name prefixes of each trainable module of [`EmoSpeaker`] and
/// the loss terms (contras, exp, emo, cls, pose) that reach it.
pub const MODULES: [(&str, &[&str], [bool; 5]); 6] = [
    (
        "encoders",
        &["enc_low.", "enc_mid.", "enc_high."],
        [true; 5],
    ),
    (
        "au_decoder",
        &["au_dec."],
        [true, false, false, false, false],
    ),
    ("exp_net", &["exp_net."], [false, true, false, false, false]),
    ("emo_net", &["emo_net."], [false, false, true, true, false]),
    (
        "pose_net",
        &["pose_net."],
        [false, false, false, false, true],
    ),
    ("classifier", &["cls."], [false, false, false, true, false]),
];

/// Default weights with the terms not in `active` set to zero.
fn masked_weights(active: [bool; 5]) -> LossWeights {
    let w = LossWeights::default();
    let keep = |on: bool, v: f64| if on { v } else { 0.0 };
    LossWeights {
        alpha: keep(active[0], w.alpha),
        beta: keep(active[1], w.beta),
        gamma: keep(active[2], w.gamma),
        delta: keep(active[3], w.delta),
        epsilon: keep(active[4], w.epsilon),
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModuleGradReport {
    pub module: &'static str,
    pub seed: u64,
    pub report: GradCheckReport,
}

/// Same layer structure as the default model with narrow hidden widths.
pub fn narrow_model_config() -> ModelConfig {
    ModelConfig {
        encoder: EncoderDims {
            low: 6,
            mid: 6,
            high: 6,
            hidden: vec![4],
            decoder_hidden: vec![5],
            ..EncoderDims::default()
        },
        heads: HeadDims {
            content: 6,
            exp_hidden: vec![4],
            emo_hidden: vec![3],
            pose_hidden: vec![4],
            cls_hidden: vec![4],
        },
    }
}

/// Exposes only the parameters whose names start with one of `prefixes`.
struct Part {
    model: EmoSpeaker,
    prefixes: &'static [&'static str],
}

impl Part {
    fn owns(&self, name: &str) -> bool {
        self.prefixes.iter().any(|p| name.starts_with(p))
    }
}

impl Module for Part {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(String, &Tensor)) {
        self.model.visit(prefix, &mut |n, t| {
            if self.owns(&n) {
                f(n, t)
            }
        });
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor)) {
        let prefixes = self.prefixes;
        self.model.visit_mut(prefix, &mut |n, t| {
            if prefixes.iter().any(|p| n.starts_with(p)) {
                f(n, t)
            }
        });
    }
}

/// Checks each module of a narrow [`EmoSpeaker`] on a small synthetic
/// batch. Each module is differentiated through the weighted sum of the
/// loss terms that reach it, which keeps the scalar small enough for
/// central differences to resolve its gradients.
pub fn check_joint_gradients(seed: u64) -> Result<Vec<ModuleGradReport>> {
    let corpus = generate_corpus(&SynthSpec {
        seed,
        n_speakers: 2,
        n_utterances: 3,
        frames_per_utterance: 12,
        ..SynthSpec::default()
    })?;
    let cfg = TrainConfig {
        seed,
        batch_utterances: 3,
        idtex_window: 2,
        pose_window: 4,
        ..TrainConfig::default()
    };
    let train: Vec<usize> = (0..corpus.utterances.len()).collect();
    let batch = sample_joint_batch(&corpus, &train, &cfg, seed)?;
    let model = EmoSpeaker::new(&narrow_model_config(), seed)?;
    let names: Vec<String> = model.named_params().into_iter().map(|(n, _)| n).collect();

    let mut out = Vec::with_capacity(MODULES.len());
    for (module, prefixes, active) in MODULES {
        let cfg = TrainConfig {
            weights: masked_weights(active),
            ..cfg.clone()
        };
        let (_, grads) = joint_loss_and_grads(&model, &batch, &cfg)?;
        let mut part = Part {
            model: model.clone(),
            prefixes,
        };
        let analytic: Vec<Tensor> = names
            .iter()
            .zip(&grads)
            .filter(|(n, _)| part.owns(n))
            .map(|(_, g)| g.clone())
            .collect();
        let report = finite_diff_check(
            &mut part,
            &analytic,
            |p| {
                let (b, _) = joint_loss_and_grads(&p.model, &batch, &cfg).map_err(harness)?;
                Ok(b.total)
            },
            GRAD_STEP,
            GRAD_TOL,
        )?;
        out.push(ModuleGradReport {
            module,
            seed,
            report,
        });
    }
    Ok(out)
}

/// Checks a one-hidden-layer [`MappingNet`] on corpus frames.
pub fn check_mapping_gradients(seed: u64) -> Result<ModuleGradReport> {
    let corpus = generate_corpus(&SynthSpec {
        seed,
        n_speakers: 2,
        n_utterances: 1,
        frames_per_utterance: 3,
        ..SynthSpec::default()
    })?;
    let data = MappingDataset::from_corpus(&corpus, &[0, 1])?;
    let mut net = MappingNet::new(&[3], seed);
    let (_, analytic) = mapping_loss_and_grads(&net, &data.coeffs, &data.keypoints)?;
    let report = finite_diff_check(
        &mut net,
        &analytic,
        |n| mapping_loss(n, &data.coeffs, &data.keypoints).map_err(harness),
        GRAD_STEP,
        GRAD_TOL,
    )?;
    Ok(ModuleGradReport {
        module: "mapping_net",
        seed,
        report,
    })
}

fn harness(e: crate::error::CoreError) -> emoc_autodiff::AutodiffError {
    emoc_autodiff::AutodiffError::Harness(e.to_string())
}
