//! Control-point grids, mesh motions and the mesh distortion energy.

use std::ops::{Add, AddAssign, Index, IndexMut, Mul, Sub, SubAssign};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Homography, ImageSize, Vec2};

/// A `rows × cols` lattice of control points spanning an image.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct GridSpec {
    pub rows: usize,
    pub cols: usize,
    pub size: ImageSize,
}

impl GridSpec {
    pub fn new(rows: usize, cols: usize, size: ImageSize) -> Result<Self> {
        let spec = Self { rows, cols, size };
        spec.validate()?;
        Ok(spec)
    }

    /// The (6+1) x (8+1) lattice.
    pub fn default_for(size: ImageSize) -> Self {
        Self {
            rows: 7,
            cols: 9,
            size,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.rows < 3 || self.cols < 3 {
            return Err(Error::InvalidConfig(format!(
                "grid needs at least 3x3 control points, got {}x{}",
                self.rows, self.cols
            )));
        }
        if self.size.width == 0 || self.size.height == 0 {
            return Err(Error::InvalidConfig("grid image size is empty".into()));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Cell size `(dx, dy)` in pixels.
    pub fn spacing(&self) -> Vec2 {
        Vec2::new(
            self.size.width as f64 / (self.cols - 1) as f64,
            self.size.height as f64 / (self.rows - 1) as f64,
        )
    }

    #[inline]
    pub fn index(&self, row: usize, col: usize) -> usize {
        row * self.cols + col
    }

    pub fn quads(&self) -> usize {
        (self.rows - 1) * (self.cols - 1)
    }

    /// Vertex indices of quad `(r, c)`: TL, TR, BL, BR.
    pub fn quad_vertices(&self, r: usize, c: usize) -> [usize; 4] {
        [
            self.index(r, c),
            self.index(r, c + 1),
            self.index(r + 1, c),
            self.index(r + 1, c + 1),
        ]
    }

    /// Nearest control vertex to a pixel position, clamped to the grid.
    pub fn nearest_vertex(&self, p: Vec2) -> usize {
        let s = self.spacing();
        let col = (p.x / s.x).round().clamp(0.0, (self.cols - 1) as f64) as usize;
        let row = (p.y / s.y).round().clamp(0.0, (self.rows - 1) as f64) as usize;
        self.index(row, col)
    }
}

/// A 2D vector per control point, row-major.
///
/// Used both for motions (displacements from the rigid lattice) and for
/// meshes (absolute vertex positions); `Mesh = rigid + ControlMotions`.
#[derive(Debug, Clone, PartialEq)]
pub struct GridField {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<Vec2>,
}

pub type ControlMotions = GridField;
pub type Mesh = GridField;

impl GridField {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![Vec2::zeros(); rows * cols],
        }
    }

    pub fn zeros_like(spec: &GridSpec) -> Self {
        Self::zeros(spec.rows, spec.cols)
    }

    pub fn filled(spec: &GridSpec, v: Vec2) -> Self {
        Self {
            rows: spec.rows,
            cols: spec.cols,
            data: vec![v; spec.len()],
        }
    }

    pub fn from_vec(spec: &GridSpec, data: Vec<Vec2>) -> Result<Self> {
        if data.len() != spec.len() {
            return Err(Error::ShapeMismatch {
                expected: format!("{}x{}", spec.rows, spec.cols),
                found: format!("{} points", data.len()),
            });
        }
        Ok(Self {
            rows: spec.rows,
            cols: spec.cols,
            data,
        })
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn matches(&self, spec: &GridSpec) -> bool {
        self.rows == spec.rows && self.cols == spec.cols
    }

    pub fn check_shape(&self, spec: &GridSpec) -> Result<()> {
        if self.matches(spec) && self.data.len() == spec.len() {
            Ok(())
        } else {
            Err(Error::ShapeMismatch {
                expected: format!("{}x{}", spec.rows, spec.cols),
                found: format!("{}x{}", self.rows, self.cols),
            })
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.x.is_finite() && v.y.is_finite())
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().map(|v| v.abs().max()).fold(0.0, f64::max)
    }

    pub fn max_norm(&self) -> f64 {
        self.data.iter().map(|v| v.norm()).fold(0.0, f64::max)
    }

    pub fn get(&self, row: usize, col: usize) -> Vec2 {
        self.data[row * self.cols + col]
    }
}

impl Index<usize> for GridField {
    type Output = Vec2;
    fn index(&self, i: usize) -> &Vec2 {
        &self.data[i]
    }
}

impl IndexMut<usize> for GridField {
    fn index_mut(&mut self, i: usize) -> &mut Vec2 {
        &mut self.data[i]
    }
}

impl Add<&GridField> for &GridField {
    type Output = GridField;
    fn add(self, rhs: &GridField) -> GridField {
        debug_assert_eq!(self.data.len(), rhs.data.len());
        GridField {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&rhs.data).map(|(a, b)| a + b).collect(),
        }
    }
}

impl Sub<&GridField> for &GridField {
    type Output = GridField;
    fn sub(self, rhs: &GridField) -> GridField {
        debug_assert_eq!(self.data.len(), rhs.data.len());
        GridField {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&rhs.data).map(|(a, b)| a - b).collect(),
        }
    }
}

impl Mul<f64> for &GridField {
    type Output = GridField;
    fn mul(self, k: f64) -> GridField {
        GridField {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|a| a * k).collect(),
        }
    }
}

impl AddAssign<&GridField> for GridField {
    fn add_assign(&mut self, rhs: &GridField) {
        for (a, b) in self.data.iter_mut().zip(&rhs.data) {
            *a += b;
        }
    }
}

impl SubAssign<&GridField> for GridField {
    fn sub_assign(&mut self, rhs: &GridField) {
        for (a, b) in self.data.iter_mut().zip(&rhs.data) {
            *a -= b;
        }
    }
}

/// Vertices uniformly spaced over `[0, width] × [0, height]`.
pub fn rigid_mesh(spec: &GridSpec) -> Mesh {
    let (w, h) = (spec.size.width as f64, spec.size.height as f64);
    let mut data = Vec::with_capacity(spec.len());
    for r in 0..spec.rows {
        // last row/column land exactly on the image border
        let y = if r + 1 == spec.rows {
            h
        } else {
            h * r as f64 / (spec.rows - 1) as f64
        };
        for c in 0..spec.cols {
            let x = if c + 1 == spec.cols {
                w
            } else {
                w * c as f64 / (spec.cols - 1) as f64
            };
            data.push(Vec2::new(x, y));
        }
    }
    GridField {
        rows: spec.rows,
        cols: spec.cols,
        data,
    }
}

/// Per-vertex motions `h(v) - v` of a (forward) homography.
pub fn h4pt_to_control_motions(h: &Homography, spec: &GridSpec) -> Result<ControlMotions> {
    let rigid = rigid_mesh(spec);
    let data = rigid
        .data
        .iter()
        .map(|v| h.apply(*v).map(|p| p - v))
        .collect::<Result<Vec<_>>>()?;
    Ok(GridField {
        rows: spec.rows,
        cols: spec.cols,
        data,
    })
}

/// Relative weights of the two parts of the distortion energy.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DistortionWeights {
    /// Inter-grid collinearity: squared second differences along rows and columns.
    pub collinearity: f64,
    /// Intra-grid similarity: per-quad residual of the best-fit similarity.
    pub similarity: f64,
}

impl Default for DistortionWeights {
    fn default() -> Self {
        Self {
            collinearity: 1.0,
            similarity: 1.0,
        }
    }
}

/// Distortion energy of a mesh given as motions from the rigid lattice.
///
/// Vanishes for any global similarity transform of the rigid lattice.
pub fn distortion_energy(m: &ControlMotions, spec: &GridSpec, w: DistortionWeights) -> f64 {
    distortion_impl(m, spec, w, None)
}

/// Energy and its gradient with respect to the motions.
pub fn distortion_energy_grad(
    m: &ControlMotions,
    spec: &GridSpec,
    w: DistortionWeights,
) -> (f64, GridField) {
    let mut g = GridField::zeros_like(spec);
    let e = distortion_impl(m, spec, w, Some(&mut g.data));
    (e, g)
}

/// Adds `scale · ∇E(m)` into `grad` and returns `E(m)`.
pub(crate) fn distortion_accumulate(
    m: &[Vec2],
    spec: &GridSpec,
    w: DistortionWeights,
    scale: f64,
    grad: &mut [Vec2],
) -> f64 {
    let field = GridField {
        rows: spec.rows,
        cols: spec.cols,
        data: m.to_vec(),
    };
    let mut g = vec![Vec2::zeros(); spec.len()];
    let e = distortion_impl(&field, spec, w, Some(&mut g));
    for (out, gi) in grad.iter_mut().zip(g) {
        *out += gi * scale;
    }
    e
}

fn distortion_impl(
    m: &GridField,
    spec: &GridSpec,
    w: DistortionWeights,
    mut grad: Option<&mut [Vec2]>,
) -> f64 {
    let (rows, cols) = (spec.rows, spec.cols);
    let idx = |r: usize, c: usize| r * cols + c;
    let mut energy = 0.0;

    // Second differences of the rigid lattice vanish, so those of the deformed
    // mesh equal those of the motions.
    if w.collinearity != 0.0 {
        let mut second = |a: usize, b: usize, c: usize, grad: &mut Option<&mut [Vec2]>| {
            let d = m.data[a] + m.data[c] - m.data[b] * 2.0;
            energy += w.collinearity * d.norm_squared();
            if let Some(g) = grad.as_deref_mut() {
                let gd = d * (2.0 * w.collinearity);
                g[a] += gd;
                g[c] += gd;
                g[b] -= gd * 2.0;
            }
        };
        for r in 0..rows {
            for c in 1..cols - 1 {
                second(idx(r, c - 1), idx(r, c), idx(r, c + 1), &mut grad);
            }
        }
        for c in 0..cols {
            for r in 1..rows - 1 {
                second(idx(r - 1, c), idx(r, c), idx(r + 1, c), &mut grad);
            }
        }
    }

    if w.similarity != 0.0 {
        let rigid = rigid_mesh(spec);
        for r in 0..rows - 1 {
            for c in 0..cols - 1 {
                let ids = spec.quad_vertices(r, c);
                let src = ids.map(|i| rigid.data[i]);
                let dst = ids.map(|i| rigid.data[i] + m.data[i]);
                let sc = (src[0] + src[1] + src[2] + src[3]) / 4.0;
                let dc = (dst[0] + dst[1] + dst[2] + dst[3]) / 4.0;
                let rs = src.map(|p| p - sc);
                let ds = dst.map(|p| p - dc);
                let rr: f64 = rs.iter().map(|p| p.norm_squared()).sum();
                let mut dot = 0.0;
                let mut cross = 0.0;
                let mut dd = 0.0;
                for k in 0..4 {
                    dot += rs[k].dot(&ds[k]);
                    cross += rs[k].x * ds[k].y - rs[k].y * ds[k].x;
                    dd += ds[k].norm_squared();
                }
                let e = dd - (dot * dot + cross * cross) / rr;
                energy += w.similarity * e.max(0.0);
                if let Some(g) = grad.as_deref_mut() {
                    // centering is absorbed: these per-corner terms already sum to zero
                    for k in 0..4 {
                        let perp = Vec2::new(-rs[k].y, rs[k].x);
                        let gk = (ds[k] - (rs[k] * dot + perp * cross) / rr) * 2.0;
                        g[ids[k]] += gk * w.similarity;
                    }
                }
            }
        }
    }
    energy
}
