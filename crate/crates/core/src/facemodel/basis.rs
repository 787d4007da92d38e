//! Linear face model, rigid pose and orthographic landmark projection.

use std::fmt::Write as _;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use emoc_autodiff::{checkpoint, mix_seed, Tensor};

use super::coeff::{Coeff3dmm, EXP_DIM, ID_DIM, TEX_DIM};
use crate::error::{CoreError, Result};

pub const NUM_LANDMARKS: usize = 68;
pub const FRAME_SIZE: usize = 512;
/// Coefficient magnitude the frame fit is guaranteed to contain.
pub const FIT_COEFF_BOUND: f64 = 3.0;

const GRID_X: usize = 33;
const GRID_Y: usize = 43;
const FACE_HALF_WIDTH: f64 = 10.0;
const FACE_ASPECT: f64 = 1.3;
/// Normalized height below which only jaw and lip landmarks live.
pub const JAW_LIP_LINE: f64 = -0.35;
/// Expression columns `0..LIP_EXP_COLUMNS` are supported below the jaw/lip line.
pub const LIP_EXP_COLUMNS: usize = 12;
/// Expression column that opens the jaw.
pub const JAW_OPEN_COLUMN: usize = 0;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LandmarkRegion {
    Jaw,
    Brow,
    Nose,
    Eye,
    Mouth,
}

/// Mean shape plus identity, expression and albedo bases.
#[derive(Clone, Debug, PartialEq)]
pub struct BlendshapeBasis {
    /// `[V, 3]`
    pub mean_shape: Tensor,
    /// `[V * 3, 80]`, row `3 v + axis`.
    pub u_id: Tensor,
    /// `[V * 3, 64]`
    pub u_exp: Tensor,
    /// `[V, 80]` gray albedo basis.
    pub u_tex: Tensor,
    /// `[V]`
    pub mean_tex: Tensor,
    pub landmark_indices: Vec<usize>,
    pub landmark_regions: Vec<LandmarkRegion>,
    pub faces: Vec<[usize; 3]>,
}

/// Affine map from mesh `(x, y)` to pixel coordinates.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FrameFit {
    pub scale: f64,
    pub center: f64,
}

impl FrameFit {
    pub fn to_pixel(&self, x: f64, y: f64) -> [f64; 2] {
        [self.center + self.scale * x, self.center - self.scale * y]
    }
}

fn bump(dx: f64, dy: f64, radius: f64) -> f64 {
    let d2 = (dx * dx + dy * dy) / (radius * radius);
    if d2 >= 1.0 {
        0.0
    } else {
        (1.0 - d2) * (1.0 - d2)
    }
}

fn unit3(rng: &mut ChaCha8Rng) -> [f64; 3] {
    loop {
        let v: [f64; 3] = [
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
        ];
        let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
        if n > 0.2 && n <= 1.0 {
            return [v[0] / n, v[1] / n, v[2] / n];
        }
    }
}

fn normalize_column(col: &mut [f64]) {
    let n = col.iter().map(|v| v * v).sum::<f64>().sqrt();
    assert!(n > 0.0, "basis column has empty support");
    col.iter_mut().for_each(|v| *v /= n);
}

/// 68 reference positions in normalized face coordinates, grouped by region.
fn landmark_layout() -> Vec<([f64; 2], LandmarkRegion)> {
    use std::f64::consts::PI;
    let mut pts = Vec::with_capacity(NUM_LANDMARKS);
    for i in 0..17 {
        let th = PI + 0.15 + (PI - 0.3) * i as f64 / 16.0;
        pts.push(([0.88 * th.cos(), 1.15 * th.sin()], LandmarkRegion::Jaw));
    }
    for side in [-1.0, 1.0] {
        for i in 0..5 {
            let x = side * (0.15 + 0.13 * i as f64);
            pts.push((
                [x, 0.55 + 0.05 * (1.0 - (i as f64 - 2.0).abs() / 2.0)],
                LandmarkRegion::Brow,
            ));
        }
    }
    for i in 0..4 {
        pts.push(([0.0, 0.35 - 0.13 * i as f64], LandmarkRegion::Nose));
    }
    for i in 0..5 {
        pts.push(([-0.2 + 0.1 * i as f64, -0.22], LandmarkRegion::Nose));
    }
    for cx in [-0.4, 0.4] {
        for i in 0..6 {
            let th = 2.0 * PI * i as f64 / 6.0;
            pts.push((
                [cx + 0.16 * th.cos(), 0.3 + 0.07 * th.sin()],
                LandmarkRegion::Eye,
            ));
        }
    }
    for i in 0..12 {
        let th = 2.0 * PI * i as f64 / 12.0;
        pts.push((
            [0.36 * th.cos(), -0.62 + 0.16 * th.sin()],
            LandmarkRegion::Mouth,
        ));
    }
    for i in 0..8 {
        let th = 2.0 * PI * i as f64 / 8.0;
        pts.push((
            [0.2 * th.cos(), -0.62 + 0.06 * th.sin()],
            LandmarkRegion::Mouth,
        ));
    }
    debug_assert_eq!(pts.len(), NUM_LANDMARKS);
    pts
}

impl BlendshapeBasis {
    pub fn num_vertices(&self) -> usize {
        self.mean_shape.shape()[0]
    }

    /// Deterministic synthetic face: a bulged grid with compactly supported
    /// basis columns. Columns `0..LIP_EXP_COLUMNS` of the expression basis
    /// only move vertices below [`JAW_LIP_LINE`].
    pub fn synthetic(seed: u64) -> Self {
        let v_count = GRID_X * GRID_Y;
        // normalized coordinates: x in [-1, 1], y in [-ASPECT, ASPECT]
        let mut norm_xy = Vec::with_capacity(v_count);
        let mut mean = Vec::with_capacity(v_count * 3);
        for iy in 0..GRID_Y {
            for ix in 0..GRID_X {
                let x = -1.0 + 2.0 * ix as f64 / (GRID_X - 1) as f64;
                let y = FACE_ASPECT * (-1.0 + 2.0 * iy as f64 / (GRID_Y - 1) as f64);
                let z = 0.6 * (1.0 - x * x - (y / FACE_ASPECT).powi(2)).max(0.0).sqrt();
                norm_xy.push([x, y]);
                mean.extend_from_slice(&[
                    x * FACE_HALF_WIDTH,
                    y * FACE_HALF_WIDTH,
                    z * FACE_HALF_WIDTH,
                ]);
            }
        }

        let mut faces = Vec::new();
        for iy in 0..GRID_Y - 1 {
            for ix in 0..GRID_X - 1 {
                let a = iy * GRID_X + ix;
                let b = a + 1;
                let c = a + GRID_X;
                let d = c + 1;
                faces.push([a, b, d]);
                faces.push([a, d, c]);
            }
        }

        let geometric = |rng: &mut ChaCha8Rng, center: [f64; 2], radius: f64| -> Vec<f64> {
            let dir = unit3(rng);
            let mut col = vec![0.0; v_count * 3];
            for (v, p) in norm_xy.iter().enumerate() {
                let w = bump(p[0] - center[0], p[1] - center[1], radius);
                for a in 0..3 {
                    col[3 * v + a] = w * dir[a];
                }
            }
            normalize_column(&mut col);
            col
        };

        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, &[1]));
        let mut id_cols = Vec::with_capacity(ID_DIM);
        for _ in 0..ID_DIM {
            let c = [rng.random_range(-0.9..0.9), rng.random_range(-1.1..1.1)];
            let r = rng.random_range(0.5..0.9);
            id_cols.push(geometric(&mut rng, c, r));
        }

        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, &[2]));
        let mut exp_cols = Vec::with_capacity(EXP_DIM);
        // jaw opening: straight down, growing with distance below the line
        let mut jaw = vec![0.0; v_count * 3];
        for (v, p) in norm_xy.iter().enumerate() {
            if p[1] < JAW_LIP_LINE {
                let w = (JAW_LIP_LINE - p[1]) / (FACE_ASPECT + JAW_LIP_LINE);
                jaw[3 * v + 1] = -w * w;
            }
        }
        normalize_column(&mut jaw);
        exp_cols.push(jaw);
        for _ in 1..LIP_EXP_COLUMNS {
            let c: [f64; 2] = [rng.random_range(-0.35..0.35), rng.random_range(-0.85..-0.6)];
            // support must end below the jaw/lip line
            let r = rng
                .random_range(0.12f64..0.2)
                .min(c[1].abs() - JAW_LIP_LINE.abs());
            exp_cols.push(geometric(&mut rng, c, r));
        }
        for _ in LIP_EXP_COLUMNS..EXP_DIM {
            let c = [rng.random_range(-0.8..0.8), rng.random_range(-1.0..1.0)];
            let r = rng.random_range(0.3..0.5);
            exp_cols.push(geometric(&mut rng, c, r));
        }

        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, &[3]));
        let mut tex_cols = Vec::with_capacity(TEX_DIM);
        for _ in 0..TEX_DIM {
            let c = [rng.random_range(-0.9..0.9), rng.random_range(-1.1..1.1)];
            let r = rng.random_range(0.3..0.6);
            let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
            let mut col: Vec<f64> = norm_xy
                .iter()
                .map(|p| sign * bump(p[0] - c[0], p[1] - c[1], r))
                .collect();
            normalize_column(&mut col);
            tex_cols.push(col);
        }
        let mean_tex: Vec<f64> = norm_xy
            .iter()
            .map(|p| 0.6 - 0.1 * p[1] / FACE_ASPECT)
            .collect();

        // snap the layout to distinct grid vertices
        let mut taken = vec![false; v_count];
        let mut picks: Vec<(usize, LandmarkRegion)> = Vec::with_capacity(NUM_LANDMARKS);
        for (p, region) in landmark_layout() {
            let mut order: Vec<usize> = (0..v_count).collect();
            let d = |v: usize| {
                let q = norm_xy[v];
                (q[0] - p[0]).powi(2) + (q[1] - p[1]).powi(2)
            };
            order.sort_by(|&a, &b| d(a).total_cmp(&d(b)).then(a.cmp(&b)));
            let v = *order.iter().find(|&&v| !taken[v]).expect("enough vertices");
            taken[v] = true;
            picks.push((v, region));
        }
        picks.sort_by_key(|&(v, _)| v);

        Self {
            mean_shape: Tensor::matrix(v_count, 3, mean),
            u_id: columns_to_matrix(&id_cols),
            u_exp: columns_to_matrix(&exp_cols),
            u_tex: columns_to_matrix(&tex_cols),
            mean_tex: Tensor::vector(mean_tex),
            landmark_indices: picks.iter().map(|p| p.0).collect(),
            landmark_regions: picks.iter().map(|p| p.1).collect(),
            faces,
        }
    }

    fn check_coeff(&self, c: &Coeff3dmm) -> Result<()> {
        if c.id.len() != self.u_id.cols()
            || c.exp.len() != self.u_exp.cols()
            || c.tex.len() != self.u_tex.cols()
        {
            return Err(CoreError::Dimension(format!(
                "coefficients {}/{}/{} vs basis {}/{}/{}",
                c.id.len(),
                c.tex.len(),
                c.exp.len(),
                self.u_id.cols(),
                self.u_tex.cols(),
                self.u_exp.cols()
            )));
        }
        Ok(())
    }

    /// `S = mean + U_id id + U_exp exp`, as `V` vertices.
    pub fn eval_shape(&self, c: &Coeff3dmm) -> Result<Vec<[f64; 3]>> {
        self.check_coeff(c)?;
        let disp_id = matvec(&self.u_id, &c.id);
        let disp_exp = matvec(&self.u_exp, &c.exp);
        let m = self.mean_shape.data();
        Ok((0..self.num_vertices())
            .map(|v| {
                let mut p = [0.0; 3];
                for (a, pa) in p.iter_mut().enumerate() {
                    let k = 3 * v + a;
                    *pa = m[k] + (disp_id[k] + disp_exp[k]);
                }
                p
            })
            .collect())
    }

    /// Per-vertex gray albedo `mean_tex + U_tex tex`.
    pub fn eval_texture(&self, c: &Coeff3dmm) -> Result<Vec<f64>> {
        self.check_coeff(c)?;
        let d = matvec(&self.u_tex, &c.tex);
        Ok(self
            .mean_tex
            .data()
            .iter()
            .zip(d)
            .map(|(m, x)| m + x)
            .collect())
    }

    /// Conservative fit: any coefficients with entries in `[-3, 3]` land
    /// strictly inside the frame.
    pub fn frame_fit(&self) -> FrameFit {
        let v = self.num_vertices();
        let m = self.mean_shape.data();
        let mut centroid = [0.0; 3];
        for i in 0..v {
            for a in 0..3 {
                centroid[a] += m[3 * i + a] / v as f64;
            }
        }
        let norm3 = |p: [f64; 3]| (p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt();
        let mut spread: f64 = 0.0;
        let mut max_disp: f64 = 0.0;
        for i in 0..v {
            spread = spread.max(norm3([
                m[3 * i] - centroid[0],
                m[3 * i + 1] - centroid[1],
                m[3 * i + 2] - centroid[2],
            ]));
            let mut d = 0.0;
            for basis in [&self.u_id, &self.u_exp] {
                let cols = basis.cols();
                for k in 0..cols {
                    let e = |a: usize| basis.data()[(3 * i + a) * cols + k];
                    d += norm3([e(0), e(1), e(2)]);
                }
            }
            max_disp = max_disp.max(FIT_COEFF_BOUND * d);
        }
        let trans = FIT_COEFF_BOUND * 2f64.sqrt();
        let radius = spread + 3.0 * max_disp + norm3(centroid) + trans;
        FrameFit {
            scale: (FRAME_SIZE as f64 / 2.0 - 1.0) / radius,
            center: FRAME_SIZE as f64 / 2.0,
        }
    }

    /// Shape, pose, orthographic projection, landmark selection and frame fit.
    pub fn project_landmarks(&self, c: &Coeff3dmm) -> Result<Vec<[f64; 2]>> {
        self.project_landmarks_with(c, &self.frame_fit())
    }

    pub fn project_landmarks_with(&self, c: &Coeff3dmm, fit: &FrameFit) -> Result<Vec<[f64; 2]>> {
        let shape = self.eval_shape(c)?;
        let posed = pose_transform(&shape, c.angle, c.trans)?;
        Ok(self
            .landmark_indices
            .iter()
            .map(|&i| fit.to_pixel(posed[i][0], posed[i][1]))
            .collect())
    }

    pub fn to_records(&self) -> Vec<(String, Tensor)> {
        let idx = |v: &[usize]| Tensor::vector(v.iter().map(|&i| i as f64).collect());
        let regions: Vec<f64> = self
            .landmark_regions
            .iter()
            .map(|r| match r {
                LandmarkRegion::Jaw => 0.0,
                LandmarkRegion::Brow => 1.0,
                LandmarkRegion::Nose => 2.0,
                LandmarkRegion::Eye => 3.0,
                LandmarkRegion::Mouth => 4.0,
            })
            .collect();
        let faces: Vec<f64> = self.faces.iter().flatten().map(|&i| i as f64).collect();
        vec![
            ("mean_shape".into(), self.mean_shape.clone()),
            ("u_id".into(), self.u_id.clone()),
            ("u_exp".into(), self.u_exp.clone()),
            ("u_tex".into(), self.u_tex.clone()),
            ("mean_tex".into(), self.mean_tex.clone()),
            ("landmark_indices".into(), idx(&self.landmark_indices)),
            ("landmark_regions".into(), Tensor::vector(regions)),
            ("faces".into(), Tensor::matrix(self.faces.len(), 3, faces)),
        ]
    }

    pub fn from_records(records: &[(String, Tensor)]) -> Result<Self> {
        let get = |name: &str| {
            records
                .iter()
                .find(|(n, _)| n == name)
                .map(|(_, t)| t.clone())
                .ok_or_else(|| CoreError::InvalidInput(format!("basis file lacks {name}")))
        };
        let as_idx = |t: Tensor| t.data().iter().map(|&v| v as usize).collect::<Vec<_>>();
        let regions = get("landmark_regions")?
            .data()
            .iter()
            .map(|&r| match r as u8 {
                0 => Ok(LandmarkRegion::Jaw),
                1 => Ok(LandmarkRegion::Brow),
                2 => Ok(LandmarkRegion::Nose),
                3 => Ok(LandmarkRegion::Eye),
                4 => Ok(LandmarkRegion::Mouth),
                _ => Err(CoreError::InvalidInput(format!("bad landmark region {r}"))),
            })
            .collect::<Result<Vec<_>>>()?;
        let faces = as_idx(get("faces")?)
            .chunks(3)
            .map(|f| [f[0], f[1], f[2]])
            .collect();
        let basis = Self {
            mean_shape: get("mean_shape")?,
            u_id: get("u_id")?,
            u_exp: get("u_exp")?,
            u_tex: get("u_tex")?,
            mean_tex: get("mean_tex")?,
            landmark_indices: as_idx(get("landmark_indices")?),
            landmark_regions: regions,
            faces,
        };
        basis.validate()?;
        Ok(basis)
    }

    pub fn validate(&self) -> Result<()> {
        let v = self.num_vertices();
        let ok = self.mean_shape.cols() == 3
            && self.u_id.shape() == [v * 3, ID_DIM]
            && self.u_exp.shape() == [v * 3, EXP_DIM]
            && self.u_tex.shape() == [v, TEX_DIM]
            && self.mean_tex.len() == v
            && self.landmark_indices.len() == NUM_LANDMARKS
            && self.landmark_regions.len() == NUM_LANDMARKS;
        if !ok {
            return Err(CoreError::Dimension(
                "basis tensors have inconsistent shapes".into(),
            ));
        }
        if !self.landmark_indices.windows(2).all(|w| w[0] < w[1])
            || self.landmark_indices.last().is_some_and(|&i| i >= v)
        {
            return Err(CoreError::InvalidInput(
                "landmark indices must be strictly increasing and below the vertex count".into(),
            ));
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        Ok(checkpoint::write(path, &self.to_records())?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_records(&checkpoint::read(path)?)
    }
}

fn columns_to_matrix(cols: &[Vec<f64>]) -> Tensor {
    let rows = cols[0].len();
    let k = cols.len();
    let mut data = vec![0.0; rows * k];
    for (j, col) in cols.iter().enumerate() {
        for (i, &v) in col.iter().enumerate() {
            data[i * k + j] = v;
        }
    }
    Tensor::matrix(rows, k, data)
}

fn matvec(m: &Tensor, x: &[f64]) -> Vec<f64> {
    let k = m.cols();
    m.data()
        .chunks(k)
        .map(|row| row.iter().zip(x).map(|(a, b)| a * b).sum())
        .collect()
}

/// `Rz(angle[2]) Ry(angle[1]) Rx(angle[0])`.
pub fn rotation_matrix(angle: [f64; 3]) -> [[f64; 3]; 3] {
    let (sx, cx) = angle[0].sin_cos();
    let (sy, cy) = angle[1].sin_cos();
    let (sz, cz) = angle[2].sin_cos();
    [
        [cz * cy, cz * sy * sx - sz * cx, cz * sy * cx + sz * sx],
        [sz * cy, sz * sy * sx + cz * cx, sz * sy * cx - cz * sx],
        [-sy, cy * sx, cy * cx],
    ]
}

/// Rotates about the vertex centroid, then translates.
pub fn pose_transform(
    vertices: &[[f64; 3]],
    angle: [f64; 3],
    trans: [f64; 3],
) -> Result<Vec<[f64; 3]>> {
    if !angle.iter().chain(&trans).all(|v| v.is_finite())
        || !vertices.iter().flatten().all(|v| v.is_finite())
    {
        return Err(CoreError::InvalidInput("non-finite pose input".into()));
    }
    let n = vertices.len().max(1) as f64;
    let mut c = [0.0; 3];
    for v in vertices {
        for a in 0..3 {
            c[a] += v[a] / n;
        }
    }
    let r = rotation_matrix(angle);
    Ok(vertices
        .iter()
        .map(|v| {
            let d = [v[0] - c[0], v[1] - c[1], v[2] - c[2]];
            let mut out = [0.0; 3];
            for i in 0..3 {
                out[i] = r[i][0] * d[0] + r[i][1] * d[1] + r[i][2] * d[2] + c[i] + trans[i];
            }
            out
        })
        .collect())
}

/// ASCII OBJ with 1-based face indices.
pub fn to_obj(vertices: &[[f64; 3]], faces: &[[usize; 3]]) -> String {
    let mut s = String::new();
    for v in vertices {
        let _ = writeln!(s, "v {} {} {}", v[0], v[1], v[2]);
    }
    for f in faces {
        let _ = writeln!(s, "f {} {} {}", f[0] + 1, f[1] + 1, f[2] + 1);
    }
    s
}

/// Rows of `frame,landmark_id,x,y`.
pub fn landmarks_csv(frames: &[Vec<[f64; 2]>]) -> String {
    let mut s = String::from("frame,landmark_id,x,y\n");
    for (f, pts) in frames.iter().enumerate() {
        for (i, p) in pts.iter().enumerate() {
            let _ = writeln!(s, "{f},{i},{},{}", p[0], p[1]);
        }
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn basis_invariants() {
        let b = BlendshapeBasis::synthetic(0);
        b.validate().unwrap();
        for m in [&b.u_id, &b.u_exp, &b.u_tex] {
            let k = m.cols();
            for j in 0..k {
                let n: f64 = (0..m.rows()).map(|i| m.data()[i * k + j].powi(2)).sum();
                assert!((n - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn lip_columns_stay_below_the_line() {
        let b = BlendshapeBasis::synthetic(0);
        let v = b.num_vertices();
        for j in 0..LIP_EXP_COLUMNS {
            for i in 0..v {
                let y = b.mean_shape.data()[3 * i + 1] / FACE_HALF_WIDTH;
                if y >= JAW_LIP_LINE {
                    for a in 0..3 {
                        assert_eq!(
                            b.u_exp.data()[(3 * i + a) * EXP_DIM + j],
                            0.0,
                            "col {j} vertex {i}"
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn rotation_is_orthonormal() {
        let r = rotation_matrix([0.3, -1.1, 2.0]);
        for i in 0..3 {
            for j in 0..3 {
                let d: f64 = (0..3).map(|k| r[i][k] * r[j][k]).sum();
                assert!((d - if i == j { 1.0 } else { 0.0 }).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn obj_uses_one_based_faces() {
        let s = to_obj(
            &[[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]],
            &[[0, 1, 2]],
        );
        assert!(s.ends_with("f 1 2 3\n"));
        assert_eq!(s.lines().count(), 4);
    }
}
