//! Action-unit inventory and the emotion-to-AU table.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};

/// AU numbers in vector order.
pub const AU_IDS: [u8; 17] = [1, 2, 4, 5, 6, 7, 9, 10, 12, 14, 15, 17, 20, 23, 25, 26, 45];
pub const NUM_AUS: usize = AU_IDS.len();

pub const AU_NAMES: [&str; NUM_AUS] = [
    "Inner Brow Raiser",
    "Outer Brow Raiser",
    "Brow Lowerer",
    "Upper Lid Raiser",
    "Cheek Raiser",
    "Lid Tightener",
    "Nose Wrinkler",
    "Upper Lip Raiser",
    "Lip Corner Puller",
    "Dimpler",
    "Lip Corner Depressor",
    "Chin Raiser",
    "Lip Stretcher",
    "Lip Tightener",
    "Lips Part",
    "Jaw Drop",
    "Blink",
];

/// Position of an AU number inside an [`AuVector`].
pub fn au_index(au: u8) -> Option<usize> {
    AU_IDS.iter().position(|&a| a == au)
}

/// Nonnegative intensities, one per entry of [`AU_IDS`].
#[derive(Clone, Debug, PartialEq)]
pub struct AuVector(pub [f64; NUM_AUS]);

impl AuVector {
    pub fn zeros() -> Self {
        Self([0.0; NUM_AUS])
    }

    pub fn get(&self, au: u8) -> f64 {
        au_index(au).map(|i| self.0[i]).unwrap_or(0.0)
    }

    pub fn active(&self) -> Vec<u8> {
        AU_IDS
            .iter()
            .zip(&self.0)
            .filter(|(_, &v)| v != 0.0)
            .map(|(&a, _)| a)
            .collect()
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn is_valid(&self) -> bool {
        self.0.iter().all(|v| v.is_finite() && *v >= 0.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Emotion {
    Anger,
    Contempt,
    Disappointment,
    Fear,
    Sadness,
    Calm,
    Surprise,
    Happiness,
}

pub const NUM_EMOTIONS: usize = 8;

impl Emotion {
    pub const ALL: [Emotion; NUM_EMOTIONS] = [
        Emotion::Anger,
        Emotion::Contempt,
        Emotion::Disappointment,
        Emotion::Fear,
        Emotion::Sadness,
        Emotion::Calm,
        Emotion::Surprise,
        Emotion::Happiness,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            Emotion::Anger => "anger",
            Emotion::Contempt => "contempt",
            Emotion::Disappointment => "disappointment",
            Emotion::Fear => "fear",
            Emotion::Sadness => "sadness",
            Emotion::Calm => "calm",
            Emotion::Surprise => "surprise",
            Emotion::Happiness => "happiness",
        }
    }

    /// AU numbers that characterize this emotion. Calm has none.
    pub fn action_units(self) -> &'static [u8] {
        match self {
            Emotion::Anger => &[4, 5, 7, 23],
            Emotion::Contempt => &[12, 14],
            Emotion::Disappointment => &[1, 15],
            Emotion::Fear => &[1, 2, 5, 25],
            Emotion::Sadness => &[1, 4, 15],
            Emotion::Calm => &[],
            Emotion::Surprise => &[1, 2, 5, 26],
            Emotion::Happiness => &[6, 12, 25],
        }
    }

    pub fn one_hot(self) -> [f64; NUM_EMOTIONS] {
        let mut v = [0.0; NUM_EMOTIONS];
        v[self.index()] = 1.0;
        v
    }
}

impl fmt::Display for Emotion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Emotion {
    type Err = CoreError;

    fn from_str(s: &str) -> Result<Self> {
        let lower = s.trim().to_ascii_lowercase();
        let e = match lower.as_str() {
            "anger" | "angry" => Emotion::Anger,
            "contempt" => Emotion::Contempt,
            "disappointment" | "disappointed" => Emotion::Disappointment,
            "fear" | "fearful" => Emotion::Fear,
            "sadness" | "sad" => Emotion::Sadness,
            "calm" | "neutral" => Emotion::Calm,
            "surprise" | "surprised" => Emotion::Surprise,
            "happiness" | "happy" => Emotion::Happiness,
            _ => return Err(CoreError::UnknownEmotion(s.to_string())),
        };
        Ok(e)
    }
}

/// Unit activation on each AU the emotion lists, zero elsewhere.
pub fn emotion_au_template(e: Emotion) -> AuVector {
    let mut v = AuVector::zeros();
    for &au in e.action_units() {
        v.0[au_index(au).expect("table AUs are in the inventory")] = 1.0;
    }
    v
}

/// Parses a category name and returns its template.
pub fn emotion_au_template_by_name(name: &str) -> Result<AuVector> {
    Ok(emotion_au_template(name.parse()?))
}
