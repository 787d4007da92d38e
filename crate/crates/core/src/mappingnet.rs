//! Coefficient-to-keypoint mapping and the frame rasterizer that stands in
//! for a photoreal renderer.

use std::path::{Path, PathBuf};

use emoc_autodiff::params::param_name;
use emoc_autodiff::{adam_step, mix_seed, AdamState, Graph, Mlp, Module, Tensor};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::facemodel::{Coeff3dmm, COEFF_DIM};
use crate::synthdata::{Corpus, KEYPOINT_DIM, NUM_KEYPOINTS};
use crate::training::OptimizerConfig;

/// Soft bound on mapped keypoint coordinates.
pub const KEYPOINT_BOUND: f64 = 2.0;

/// `K` keypoints in the canonical cube, flattened as `x0, y0, z0, x1, ...`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatentKeypoints(pub Vec<f64>);

impl LatentKeypoints {
    pub fn validate(&self) -> Result<()> {
        if self.0.len() != KEYPOINT_DIM {
            return Err(CoreError::Dimension(format!(
                "{} keypoint values, expected {KEYPOINT_DIM}",
                self.0.len()
            )));
        }
        if self.0.iter().any(|v| !v.is_finite()) {
            return Err(CoreError::InvalidInput("non-finite keypoint".into()));
        }
        Ok(())
    }

    pub fn points(&self) -> Vec<[f64; 3]> {
        self.0.chunks(3).map(|p| [p[0], p[1], p[2]]).collect()
    }

    pub fn within_bound(&self, bound: f64) -> bool {
        self.0.iter().all(|v| v.abs() <= bound)
    }
}

/// Keypoint regressor on single coefficient frames.
#[derive(Clone, Debug, PartialEq)]
pub struct MappingNet {
    pub net: Mlp,
}

impl MappingNet {
    /// Tanh hidden layers of the given widths; no hidden layer gives a
    /// purely linear map.
    pub fn new(hidden: &[usize], seed: u64) -> Self {
        let mut dims = vec![COEFF_DIM];
        dims.extend_from_slice(hidden);
        dims.push(KEYPOINT_DIM);
        Self {
            net: Mlp::tanh_net(&dims, mix_seed(seed, &[3])),
        }
    }

    pub fn linear(seed: u64) -> Self {
        Self::new(&[], seed)
    }

    /// `[T, 230]` coefficient rows to `[T, 45]` keypoint rows.
    pub fn map_rows(&self, coeffs: &Tensor) -> Result<Tensor> {
        check_rows(coeffs, COEFF_DIM, "coefficient")?;
        Ok(self.net.eval(coeffs)?)
    }

    pub fn map_coeffs(&self, c: &Coeff3dmm) -> Result<LatentKeypoints> {
        c.validate()?;
        let out = self.map_rows(&Tensor::matrix(1, COEFF_DIM, c.to_vec()))?;
        Ok(LatentKeypoints(out.row(0).to_vec()))
    }
}

impl Module for MappingNet {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(String, &Tensor)) {
        self.net.visit(&param_name(prefix, "mapping"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor)) {
        self.net.visit_mut(&param_name(prefix, "mapping"), f);
    }
}

fn check_rows(t: &Tensor, cols: usize, what: &str) -> Result<()> {
    if t.rank() != 2 || t.cols() != cols {
        return Err(CoreError::Dimension(format!(
            "{what} matrix {:?}, expected [T, {cols}]",
            t.shape()
        )));
    }
    Ok(())
}

/// Batch-mean unsquared Euclidean distance between mapped and target keypoints.
pub fn mapping_loss(net: &MappingNet, coeffs: &Tensor, targets: &Tensor) -> Result<f64> {
    Ok(mapping_loss_and_grads(net, coeffs, targets)?.0)
}

/// Loss and parameter gradients in [`Module::visit`] order.
pub fn mapping_loss_and_grads(
    net: &MappingNet,
    coeffs: &Tensor,
    targets: &Tensor,
) -> Result<(f64, Vec<Tensor>)> {
    check_rows(coeffs, COEFF_DIM, "coefficient")?;
    check_rows(targets, KEYPOINT_DIM, "keypoint")?;
    if coeffs.rows() != targets.rows() || coeffs.rows() == 0 {
        return Err(CoreError::Dimension(format!(
            "{} coefficient rows against {} keypoint rows",
            coeffs.rows(),
            targets.rows()
        )));
    }
    let mut g = Graph::new();
    let bound = net.net.bind(&mut g);
    let x = g.leaf(coeffs.clone());
    let y = g.leaf(targets.clone());
    let pred = bound.forward(&mut g, x)?;
    let diff = g.sub(pred, y)?;
    let norms = g.row_norm(diff);
    let loss = g.mean(norms);
    let value = g.value(loss).item();
    if !value.is_finite() {
        return Err(CoreError::NonFiniteLoss("mapping"));
    }
    let grads = g.backward(loss)?;
    let out = bound
        .param_ids()
        .into_iter()
        .map(|id| grads.get_or_zeros(id, g.value(id)))
        .collect();
    Ok((value, out))
}

/// Paired coefficient and keypoint frames.
#[derive(Clone, Debug, PartialEq)]
pub struct MappingDataset {
    /// `[N, 230]`
    pub coeffs: Tensor,
    /// `[N, 45]`
    pub keypoints: Tensor,
}

impl MappingDataset {
    pub fn new(coeffs: Tensor, keypoints: Tensor) -> Result<Self> {
        check_rows(&coeffs, COEFF_DIM, "coefficient")?;
        check_rows(&keypoints, KEYPOINT_DIM, "keypoint")?;
        if coeffs.rows() != keypoints.rows() || coeffs.rows() == 0 {
            return Err(CoreError::Dimension(
                "mapping dataset needs matched, non-empty rows".into(),
            ));
        }
        Ok(Self { coeffs, keypoints })
    }

    /// Every frame of the listed utterances.
    pub fn from_corpus(corpus: &Corpus, utterances: &[usize]) -> Result<Self> {
        let mut c = Vec::new();
        let mut k = Vec::new();
        for &i in utterances {
            let u = corpus
                .utterances
                .get(i)
                .ok_or_else(|| CoreError::InvalidInput(format!("no utterance {i}")))?;
            c.extend_from_slice(u.coeffs.data());
            k.extend_from_slice(u.keypoints.data());
        }
        let n = c.len() / COEFF_DIM;
        Self::new(
            Tensor::matrix(n, COEFF_DIM, c),
            Tensor::matrix(n, KEYPOINT_DIM, k),
        )
    }

    pub fn len(&self) -> usize {
        self.coeffs.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Same frames with targets permuted, breaking every pairing.
    pub fn shuffled(&self, seed: u64) -> Self {
        let mut order: Vec<usize> = (0..self.len()).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(mix_seed(
            seed,
            &[0x5368_7566],
        )));
        let k = order
            .iter()
            .flat_map(|&r| self.keypoints.row(r).iter().copied())
            .collect();
        Self {
            coeffs: self.coeffs.clone(),
            keypoints: Tensor::matrix(self.len(), KEYPOINT_DIM, k),
        }
    }

    fn gather(&self, rows: &[usize]) -> (Tensor, Tensor) {
        let pick = |t: &Tensor| {
            let data = rows
                .iter()
                .flat_map(|&r| t.row(r).iter().copied())
                .collect();
            Tensor::matrix(rows.len(), t.cols(), data)
        };
        (pick(&self.coeffs), pick(&self.keypoints))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MappingConfig {
    pub seed: u64,
    pub hidden: Vec<usize>,
    pub steps: usize,
    pub batch: usize,
    pub optimizer: OptimizerConfig,
}

impl Default for MappingConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            hidden: vec![128],
            steps: 2000,
            batch: 256,
            optimizer: OptimizerConfig {
                lr: 1e-3,
                weight_decay: 0.0,
                final_lr_fraction: 0.01,
                ..OptimizerConfig::default()
            },
        }
    }
}

impl MappingConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch == 0 || self.hidden.contains(&0) {
            return Err(CoreError::InvalidSpec(
                "mapping batch and widths must be positive".into(),
            ));
        }
        if self.optimizer.lr.is_nan() || self.optimizer.lr <= 0.0 {
            return Err(CoreError::InvalidSpec(
                "mapping learning rate must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Minibatch ADAM on the mapping loss with its own optimizer state.
/// Returns the per-step pre-update loss.
pub fn train_mappingnet<F>(
    net: &mut MappingNet,
    data: &MappingDataset,
    cfg: &MappingConfig,
    mut on_step: F,
) -> Result<Vec<f64>>
where
    F: FnMut(usize, f64) -> Result<()>,
{
    cfg.validate()?;
    let mut state = AdamState::new();
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(cfg.seed, &[0x006d_6170]));
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut cursor = order.len();
    let batch = cfg.batch.min(data.len());
    let mut log = Vec::with_capacity(cfg.steps);
    for step in 0..cfg.steps {
        if cursor + batch > order.len() {
            order.shuffle(&mut rng);
            cursor = 0;
        }
        let (x, y) = data.gather(&order[cursor..cursor + batch]);
        cursor += batch;
        let (loss, grads) = mapping_loss_and_grads(net, &x, &y)?;
        let lr = cfg.optimizer.lr_at(step, cfg.steps);
        adam_step(net, &grads, &mut state, &cfg.optimizer.adam().with_lr(lr))?;
        on_step(step, loss)?;
        log.push(loss);
    }
    Ok(log)
}

pub fn write_mapping_log(path: &Path, log: &[f64]) -> Result<()> {
    let err = |e: csv::Error| CoreError::parse(path, e.to_string());
    let mut w = csv::Writer::from_path(path).map_err(err)?;
    w.write_record(["step", "l_m"]).map_err(err)?;
    for (i, l) in log.iter().enumerate() {
        w.write_record([i.to_string(), l.to_string()])
            .map_err(err)?;
    }
    w.flush().map_err(|e| CoreError::io(path, e))
}

/// Grayscale canvas, row-major, 0 black and 255 white.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GrayFrame {
    pub size: usize,
    pub pixels: Vec<u8>,
}

impl GrayFrame {
    pub fn blank(size: usize) -> Self {
        Self {
            size,
            pixels: vec![255; size * size],
        }
    }

    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.pixels[y * self.size + x]
    }

    /// Binary PGM (P5) bytes.
    pub fn to_pgm(&self) -> Vec<u8> {
        let mut out = format!("P5\n{} {}\n255\n", self.size, self.size).into_bytes();
        out.extend_from_slice(&self.pixels);
        out
    }
}

/// Splats each pixel-space point as a black 3×3 dot; dots are clipped at
/// the canvas edge.
pub fn rasterize_points(points: &[[f64; 2]], size: usize) -> GrayFrame {
    let mut f = GrayFrame::blank(size);
    for p in points {
        if !p[0].is_finite() || !p[1].is_finite() {
            continue;
        }
        let (cx, cy) = (p[0].round() as i64, p[1].round() as i64);
        for y in cy - 1..=cy + 1 {
            for x in cx - 1..=cx + 1 {
                if (0..size as i64).contains(&x) && (0..size as i64).contains(&y) {
                    f.pixels[y as usize * size + x as usize] = 0;
                }
            }
        }
    }
    f
}

/// Canonical-cube keypoints to pixels: `x, y` in `[-KEYPOINT_BOUND, KEYPOINT_BOUND]`
/// span the canvas, `y` pointing up, `z` dropped.
pub fn keypoint_pixels(kp: &LatentKeypoints, size: usize) -> Vec<[f64; 2]> {
    let half = size as f64 / 2.0;
    let scale = (half - 1.0) / KEYPOINT_BOUND;
    kp.points()
        .iter()
        .map(|p| [half + scale * p[0], half - scale * p[1]])
        .collect()
}

pub fn frame_file_name(index: usize) -> String {
    format!("frame_{index:05}.pgm")
}

/// One PGM per frame under `dir`, named by zero-padded frame index.
pub fn write_frames(dir: &Path, frames: &[GrayFrame]) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir).map_err(|e| CoreError::io(dir, e))?;
    frames
        .iter()
        .enumerate()
        .map(|(i, f)| {
            let path = dir.join(frame_file_name(i));
            std::fs::write(&path, f.to_pgm()).map_err(|e| CoreError::io(&path, e))?;
            Ok(path)
        })
        .collect()
}

/// Rasterizes a keypoint trajectory `[T, 45]`.
pub fn rasterize_keypoints(rows: &Tensor, size: usize) -> Result<Vec<GrayFrame>> {
    check_rows(rows, NUM_KEYPOINTS * 3, "keypoint")?;
    Ok((0..rows.rows())
        .map(|r| {
            rasterize_points(
                &keypoint_pixels(&LatentKeypoints(rows.row(r).to_vec()), size),
                size,
            )
        })
        .collect())
}
