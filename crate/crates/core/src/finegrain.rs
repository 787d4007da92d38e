//! Intensity control: the (label, window length) grid, window planning and
//! chained per-window inference.

use std::fmt::Write as _;

use emoc_autodiff::Tensor;
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::evalharness::IntensityOracle;
use crate::facemodel::{Coeff3dmm, Emotion, COEFF_DIM, EXP_RANGE, IDTEX_DIM, POSE_DIM};
use crate::model::EmoSpeaker;
use crate::predictor::EmotionSpec;
use crate::synthdata::FEATURE_DIM;

pub const LABELS: [u8; 3] = [1, 2, 3];
pub const WINDOW_LENGTHS: [usize; 5] = [20, 15, 10, 5, 2];

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct IntensityGrid {
    pub labels: Vec<u8>,
    pub window_lengths: Vec<usize>,
    /// `(label, FL)` cells, weakest first.
    pub ordering: Vec<(u8, usize)>,
}

impl Default for IntensityGrid {
    fn default() -> Self {
        let ordering = LABELS
            .iter()
            .flat_map(|&l| WINDOW_LENGTHS.iter().map(move |&fl| (l, fl)))
            .collect();
        Self {
            labels: LABELS.to_vec(),
            window_lengths: WINDOW_LENGTHS.to_vec(),
            ordering,
        }
    }
}

impl IntensityGrid {
    pub fn validate(&self) -> Result<()> {
        let mut cells = self.ordering.clone();
        cells.sort_unstable();
        let mut full: Vec<(u8, usize)> = self
            .labels
            .iter()
            .flat_map(|&l| self.window_lengths.iter().map(move |&fl| (l, fl)))
            .collect();
        full.sort_unstable();
        if cells != full || full.is_empty() {
            return Err(CoreError::InvalidCell(
                "ordering is not a permutation of the grid".into(),
            ));
        }
        if self.window_lengths.contains(&0) || self.labels.iter().any(|l| !(1..=3).contains(l)) {
            return Err(CoreError::InvalidCell(
                "labels must be 1..=3 and windows at least 1".into(),
            ));
        }
        Ok(())
    }

    /// Cell at ordering index `round(P * (n - 1))`.
    pub fn select_cell(&self, p: f64) -> Result<(u8, usize)> {
        if !(0.0..=1.0).contains(&p) {
            return Err(CoreError::InvalidIntensity(p));
        }
        let idx = (p * (self.ordering.len() - 1) as f64).round() as usize;
        Ok(self.ordering[idx])
    }
}

/// `[start, end)` frame ranges tiling `[0, T)`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct WindowPlan {
    pub windows: Vec<(usize, usize)>,
}

pub fn plan_windows(t: usize, fl: usize) -> Result<WindowPlan> {
    if t == 0 {
        return Err(CoreError::EmptyAudio);
    }
    if fl == 0 {
        return Err(CoreError::InvalidCell(
            "window length must be at least 1".into(),
        ));
    }
    Ok(WindowPlan {
        windows: (0..t).step_by(fl).map(|s| (s, (s + fl).min(t))).collect(),
    })
}

/// Output of [`infer_sequence`].
#[derive(Clone, Debug, PartialEq)]
pub struct InferenceTrace {
    /// `[T, 230]`
    pub coeffs: Tensor,
    pub plan: WindowPlan,
    /// Reference used by each window, in plan order.
    pub references: Vec<Vec<f64>>,
}

impl InferenceTrace {
    pub fn stream(&self) -> Result<Vec<Coeff3dmm>> {
        (0..self.coeffs.rows())
            .map(|r| Coeff3dmm::from_slice(self.coeffs.row(r)))
            .collect()
    }
}

fn repeat_row(row: &[f64], n: usize) -> Tensor {
    Tensor::matrix(
        n,
        row.len(),
        row.iter().copied().cycle().take(n * row.len()).collect(),
    )
}

/// Chained inference: every frame of a window is predicted from the
/// window's reference, and the next window's reference is the last frame
/// just emitted.
pub fn infer_sequence(
    model: &EmoSpeaker,
    features: &Tensor,
    source: &Coeff3dmm,
    emotion: Emotion,
    label: u8,
    fl: usize,
) -> Result<InferenceTrace> {
    if features.rank() != 2 || features.cols() != FEATURE_DIM {
        return Err(CoreError::Dimension(format!(
            "feature matrix {:?}, expected [T, {FEATURE_DIM}]",
            features.shape()
        )));
    }
    source.validate()?;
    let t = features.rows();
    let plan = plan_windows(t, fl)?;
    let spec_row = EmotionSpec::new(emotion, label, fl)?.encoding();
    let content = model.content(features)?;
    let mut reference = source.to_vec();
    let mut out = Vec::with_capacity(t * COEFF_DIM);
    let mut references = Vec::with_capacity(plan.windows.len());
    for &(s, e) in &plan.windows {
        let n = e - s;
        let c = Tensor::matrix(
            n,
            content.cols(),
            content.data()[s * content.cols()..e * content.cols()].to_vec(),
        );
        let spec = repeat_row(&spec_row, n);
        let exp = model
            .heads
            .predict_exp(&c, &repeat_row(&reference[EXP_RANGE], n))?;
        let idtex =
            model
                .heads
                .predict_idtex(&c, &repeat_row(&reference[..IDTEX_DIM], n), &spec)?;
        let pose = model.heads.predict_pose(
            &c,
            &repeat_row(&reference[COEFF_DIM - POSE_DIM..], n),
            &spec,
        )?;
        for r in 0..n {
            out.extend_from_slice(idtex.row(r));
            out.extend_from_slice(exp.row(r));
            out.extend_from_slice(pose.row(r));
        }
        references.push(reference);
        reference = out[out.len() - COEFF_DIM..].to_vec();
    }
    let coeffs = Tensor::matrix(t, COEFF_DIM, out);
    if !coeffs.is_finite() {
        return Err(CoreError::NonFiniteLoss("inference output"));
    }
    Ok(InferenceTrace {
        coeffs,
        plan,
        references,
    })
}

/// Oracle scores for every grid cell: `scores[label_idx][fl_idx]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IntensityMatrix {
    pub emotion: Emotion,
    pub labels: Vec<u8>,
    pub window_lengths: Vec<usize>,
    pub scores: Vec<Vec<f64>>,
}

impl IntensityMatrix {
    pub fn score(&self, label: u8, fl: usize) -> Option<f64> {
        let i = self.labels.iter().position(|&l| l == label)?;
        let j = self.window_lengths.iter().position(|&w| w == fl)?;
        Some(self.scores[i][j])
    }

    /// Rows are labels, columns window lengths.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("label");
        for fl in &self.window_lengths {
            let _ = write!(s, ",FL_{fl}");
        }
        s.push('\n');
        for (l, row) in self.labels.iter().zip(&self.scores) {
            let _ = write!(s, "{}_{l}", self.emotion.name());
            for v in row {
                let _ = write!(s, ",{v}");
            }
            s.push('\n');
        }
        s
    }

    /// Count of non-decreasing steps along each label row, as FL shrinks.
    pub fn row_non_decreasing(&self) -> Vec<(usize, usize)> {
        self.scores
            .iter()
            .map(|row| {
                let steps = row.windows(2).filter(|w| w[1] >= w[0]).count();
                (steps, row.len().saturating_sub(1))
            })
            .collect()
    }

    /// Window lengths at which the score strictly increases with every label step.
    pub fn columns_increasing(&self) -> usize {
        (0..self.window_lengths.len())
            .filter(|&j| self.scores.windows(2).all(|w| w[1][j] > w[0][j]))
            .count()
    }
}

pub fn grid_sweep(
    model: &EmoSpeaker,
    features: &Tensor,
    source: &Coeff3dmm,
    emotion: Emotion,
    grid: &IntensityGrid,
    oracle: &IntensityOracle,
) -> Result<IntensityMatrix> {
    grid.validate()?;
    let mut scores = Vec::with_capacity(grid.labels.len());
    for &label in &grid.labels {
        let mut row = Vec::with_capacity(grid.window_lengths.len());
        for &fl in &grid.window_lengths {
            let trace = infer_sequence(model, features, source, emotion, label, fl)?;
            row.push(oracle.score(&trace.coeffs, emotion)?);
        }
        scores.push(row);
    }
    Ok(IntensityMatrix {
        emotion,
        labels: grid.labels.clone(),
        window_lengths: grid.window_lengths.clone(),
        scores,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_grid_endpoints() {
        let g = IntensityGrid::default();
        g.validate().unwrap();
        assert_eq!(g.select_cell(0.0).unwrap(), (1, 20));
        assert_eq!(g.select_cell(1.0).unwrap(), (3, 2));
        assert_eq!(g.select_cell(0.5).unwrap(), (2, 10));
        assert!(g.select_cell(1.01).is_err());
        assert!(g.select_cell(f64::NAN).is_err());
    }

    #[test]
    fn plans_match_hand_examples() {
        assert_eq!(
            plan_windows(12, 5).unwrap().windows,
            vec![(0, 5), (5, 10), (10, 12)]
        );
        assert_eq!(plan_windows(5, 20).unwrap().windows, vec![(0, 5)]);
        let p = plan_windows(40, 2).unwrap();
        assert_eq!(p.windows.len(), 20);
        assert!(p.windows.iter().all(|(s, e)| e - s == 2));
        assert!(plan_windows(0, 3).is_err());
    }
}
