use crate::error::{CoreError, Result};

pub const ID_DIM: usize = 80;
pub const TEX_DIM: usize = 80;
pub const EXP_DIM: usize = 64;
pub const ANGLE_DIM: usize = 3;
pub const TRANS_DIM: usize = 3;
pub const IDTEX_DIM: usize = ID_DIM + TEX_DIM;
pub const POSE_DIM: usize = ANGLE_DIM + TRANS_DIM;
pub const COEFF_DIM: usize = ID_DIM + TEX_DIM + EXP_DIM + ANGLE_DIM + TRANS_DIM;

/// Column ranges of each group inside the flat 230-vector.
pub const ID_RANGE: std::ops::Range<usize> = 0..ID_DIM;
pub const TEX_RANGE: std::ops::Range<usize> = ID_DIM..IDTEX_DIM;
pub const EXP_RANGE: std::ops::Range<usize> = IDTEX_DIM..IDTEX_DIM + EXP_DIM;
pub const ANGLE_RANGE: std::ops::Range<usize> =
    IDTEX_DIM + EXP_DIM..IDTEX_DIM + EXP_DIM + ANGLE_DIM;
pub const TRANS_RANGE: std::ops::Range<usize> = IDTEX_DIM + EXP_DIM + ANGLE_DIM..COEFF_DIM;

/// One frame of face-model parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct Coeff3dmm {
    pub id: Vec<f64>,
    pub tex: Vec<f64>,
    pub exp: Vec<f64>,
    /// Radians, applied as `Rz(angle[2]) Ry(angle[1]) Rx(angle[0])`.
    pub angle: [f64; 3],
    pub trans: [f64; 3],
}

impl Default for Coeff3dmm {
    fn default() -> Self {
        Self::zeros()
    }
}

impl Coeff3dmm {
    pub fn zeros() -> Self {
        Self {
            id: vec![0.0; ID_DIM],
            tex: vec![0.0; TEX_DIM],
            exp: vec![0.0; EXP_DIM],
            angle: [0.0; 3],
            trans: [0.0; 3],
        }
    }

    /// Concatenation in id, tex, exp, angle, trans order.
    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(COEFF_DIM);
        v.extend_from_slice(&self.id);
        v.extend_from_slice(&self.tex);
        v.extend_from_slice(&self.exp);
        v.extend_from_slice(&self.angle);
        v.extend_from_slice(&self.trans);
        v
    }

    pub fn from_slice(v: &[f64]) -> Result<Self> {
        if v.len() != COEFF_DIM {
            return Err(CoreError::Dimension(format!(
                "coefficient vector has {} entries, expected {COEFF_DIM}",
                v.len()
            )));
        }
        Ok(Self {
            id: v[ID_RANGE].to_vec(),
            tex: v[TEX_RANGE].to_vec(),
            exp: v[EXP_RANGE].to_vec(),
            angle: v[ANGLE_RANGE].try_into().expect("3 entries"),
            trans: v[TRANS_RANGE].try_into().expect("3 entries"),
        })
    }

    pub fn idtex(&self) -> Vec<f64> {
        let mut v = self.id.clone();
        v.extend_from_slice(&self.tex);
        v
    }

    pub fn pose(&self) -> [f64; POSE_DIM] {
        [
            self.angle[0],
            self.angle[1],
            self.angle[2],
            self.trans[0],
            self.trans[1],
            self.trans[2],
        ]
    }

    pub fn set_idtex(&mut self, v: &[f64]) {
        self.id.copy_from_slice(&v[..ID_DIM]);
        self.tex.copy_from_slice(&v[ID_DIM..IDTEX_DIM]);
    }

    pub fn set_pose(&mut self, v: &[f64]) {
        self.angle.copy_from_slice(&v[..3]);
        self.trans.copy_from_slice(&v[3..6]);
    }

    pub fn validate(&self) -> Result<()> {
        if self.id.len() != ID_DIM || self.tex.len() != TEX_DIM || self.exp.len() != EXP_DIM {
            return Err(CoreError::Dimension(format!(
                "coefficient groups are {}/{}/{}, expected {ID_DIM}/{TEX_DIM}/{EXP_DIM}",
                self.id.len(),
                self.tex.len(),
                self.exp.len()
            )));
        }
        if !self.to_vec().iter().all(|v| v.is_finite()) {
            return Err(CoreError::InvalidInput("non-finite coefficient".into()));
        }
        Ok(())
    }

    /// CSV header: `frame,id0..id79,tex0..tex79,exp0..exp63,angle0..2,trans0..2`.
    pub fn csv_header() -> Vec<String> {
        let mut h = vec!["frame".to_string()];
        h.extend((0..ID_DIM).map(|i| format!("id{i}")));
        h.extend((0..TEX_DIM).map(|i| format!("tex{i}")));
        h.extend((0..EXP_DIM).map(|i| format!("exp{i}")));
        h.extend((0..ANGLE_DIM).map(|i| format!("angle{i}")));
        h.extend((0..TRANS_DIM).map(|i| format!("trans{i}")));
        h
    }
}

/// Named coefficient groups, used for per-group reports.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CoeffGroup {
    Id,
    Tex,
    Exp,
    Angle,
    Trans,
}

impl CoeffGroup {
    pub const ALL: [CoeffGroup; 5] = [
        CoeffGroup::Id,
        CoeffGroup::Tex,
        CoeffGroup::Exp,
        CoeffGroup::Angle,
        CoeffGroup::Trans,
    ];

    pub fn range(self) -> std::ops::Range<usize> {
        match self {
            CoeffGroup::Id => ID_RANGE,
            CoeffGroup::Tex => TEX_RANGE,
            CoeffGroup::Exp => EXP_RANGE,
            CoeffGroup::Angle => ANGLE_RANGE,
            CoeffGroup::Trans => TRANS_RANGE,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            CoeffGroup::Id => "id",
            CoeffGroup::Tex => "tex",
            CoeffGroup::Exp => "exp",
            CoeffGroup::Angle => "angle",
            CoeffGroup::Trans => "trans",
        }
    }
}
