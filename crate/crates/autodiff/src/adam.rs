use crate::error::{AutodiffError, Result};
use crate::params::Module;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Decoupled: parameters shrink by `lr * weight_decay` before the moment update.
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-5,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.001,
        }
    }
}

impl AdamConfig {
    pub fn with_lr(self, lr: f64) -> Self {
        Self { lr, ..self }
    }
}

/// First and second moment buffers, aligned with [`Module::visit`] order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct AdamState {
    pub step: u64,
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
}

impl AdamState {
    pub fn new() -> Self {
        Self::default()
    }
}

/// One bias-corrected ADAM update with decoupled weight decay.
///
/// All gradients are validated before any parameter is touched, so a
/// rejected step leaves both `module` and `state` unchanged.
pub fn adam_step(
    module: &mut dyn Module,
    grads: &[Tensor],
    state: &mut AdamState,
    cfg: &AdamConfig,
) -> Result<()> {
    let mut names = Vec::new();
    let mut shapes = Vec::new();
    module.visit("", &mut |n, t| {
        names.push(n);
        shapes.push(t.shape().to_vec());
    });
    if grads.len() != shapes.len() {
        return Err(AutodiffError::StateMismatch(format!(
            "{} gradients for {} parameters",
            grads.len(),
            shapes.len()
        )));
    }
    for (i, (g, s)) in grads.iter().zip(&shapes).enumerate() {
        if g.shape() != s.as_slice() {
            return Err(AutodiffError::StateMismatch(format!(
                "gradient {i} ({}) has shape {:?}, parameter {:?}",
                names[i],
                g.shape(),
                s
            )));
        }
        if !g.is_finite() {
            return Err(AutodiffError::NonFiniteGradient {
                index: i,
                name: names[i].clone(),
            });
        }
    }
    if state.m.is_empty() {
        state.m = shapes.iter().map(|s| Tensor::zeros(s)).collect();
        state.v = shapes.iter().map(|s| Tensor::zeros(s)).collect();
    } else if state.m.len() != shapes.len()
        || state
            .m
            .iter()
            .zip(&shapes)
            .any(|(m, s)| m.shape() != s.as_slice())
    {
        return Err(AutodiffError::StateMismatch(
            "moment buffers do not match parameter shapes".into(),
        ));
    }

    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - cfg.beta1.powi(t);
    let bc2 = 1.0 - cfg.beta2.powi(t);
    let decay = 1.0 - cfg.lr * cfg.weight_decay;

    let mut idx = 0;
    module.visit_mut("", &mut |_, p| {
        let g = grads[idx].data();
        let m = state.m[idx].data_mut();
        for (mj, gj) in m.iter_mut().zip(g) {
            *mj = cfg.beta1 * *mj + (1.0 - cfg.beta1) * gj;
        }
        let v = state.v[idx].data_mut();
        for (vj, gj) in v.iter_mut().zip(g) {
            *vj = cfg.beta2 * *vj + (1.0 - cfg.beta2) * gj * gj;
        }
        let (m, v) = (state.m[idx].data(), state.v[idx].data());
        for (j, pj) in p.data_mut().iter_mut().enumerate() {
            let mhat = m[j] / bc1;
            let vhat = v[j] / bc2;
            *pj = *pj * decay - cfg.lr * mhat / (vhat.sqrt() + cfg.eps);
        }
        idx += 1;
    });
    Ok(())
}
