//! Triangle rasterization of deformed meshes onto regular sample lattices.
//!
//! Every grid quad is split along its TL-BR diagonal into two triangles. A
//! sample covered by a triangle maps back to the source frame through the
//! triangle's affine map.

use nalgebra::Matrix2;

use crate::error::{Error, Result};
use crate::geometry::Vec2;
use crate::mesh::GridSpec;

/// Sample `(i, j)` sits at `(x0 + i * stride, y0 + j * stride)` in mesh coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Lattice {
    pub x0: f64,
    pub y0: f64,
    pub stride: f64,
    pub width: usize,
    pub height: usize,
}

impl Lattice {
    pub fn len(&self) -> usize {
        self.width * self.height
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn point(&self, i: usize, j: usize) -> Vec2 {
        Vec2::new(
            self.x0 + i as f64 * self.stride,
            self.y0 + j as f64 * self.stride,
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hit {
    pub tri: u32,
    pub lambda: [f64; 3],
}

/// Vertex indices of every triangle, two per quad in quad order.
pub fn triangles(spec: &GridSpec) -> Vec<[usize; 3]> {
    let mut out = Vec::with_capacity(2 * spec.quads());
    for r in 0..spec.rows - 1 {
        for c in 0..spec.cols - 1 {
            let [tl, tr, bl, br] = spec.quad_vertices(r, c);
            out.push([tl, tr, br]);
            out.push([tl, br, bl]);
        }
    }
    out
}

#[inline]
fn cross(a: Vec2, b: Vec2) -> f64 {
    a.x * b.y - a.y * b.x
}

/// Twice the signed area of triangle `t`; positive for the rigid orientation.
#[inline]
pub fn signed_area(verts: &[Vec2], t: &[usize; 3]) -> f64 {
    cross(verts[t[1]] - verts[t[0]], verts[t[2]] - verts[t[0]])
}

/// `FoldedMesh` for the first quad with a non-positive triangle.
pub fn check_folds(verts: &[Vec2], spec: &GridSpec) -> Result<()> {
    for (k, t) in triangles(spec).iter().enumerate() {
        let area = signed_area(verts, t);
        if !(area > 0.0) {
            return Err(Error::FoldedMesh { quad: k / 2 });
        }
    }
    Ok(())
}

/// Covering triangle and barycentric coordinates of every lattice sample.
///
/// Triangles with non-positive area are skipped; on shared edges the first
/// triangle in quad order wins.
pub fn rasterize(verts: &[Vec2], spec: &GridSpec, lat: &Lattice) -> Vec<Option<Hit>> {
    let mut out = vec![None; lat.len()];
    for (k, t) in triangles(spec).iter().enumerate() {
        let (a, b, c) = (verts[t[0]], verts[t[1]], verts[t[2]]);
        let det = cross(b - a, c - a);
        if !(det > 0.0) {
            continue;
        }
        let lo = a.inf(&b).inf(&c);
        let hi = a.sup(&b).sup(&c);
        let i0 = ((lo.x - lat.x0) / lat.stride).ceil().max(0.0);
        let j0 = ((lo.y - lat.y0) / lat.stride).ceil().max(0.0);
        let i1 = ((hi.x - lat.x0) / lat.stride).floor().min(lat.width as f64 - 1.0);
        let j1 = ((hi.y - lat.y0) / lat.stride).floor().min(lat.height as f64 - 1.0);
        if i1 < i0 || j1 < j0 {
            continue;
        }
        let eps = 1e-9;
        let inv = 1.0 / det;
        for j in j0 as usize..=j1 as usize {
            for i in i0 as usize..=i1 as usize {
                let slot = &mut out[j * lat.width + i];
                if slot.is_some() {
                    continue;
                }
                let p = lat.point(i, j);
                let l1 = cross(p - a, c - a) * inv;
                let l2 = cross(b - a, p - a) * inv;
                let l0 = 1.0 - l1 - l2;
                if l0 >= -eps && l1 >= -eps && l2 >= -eps {
                    *slot = Some(Hit {
                        tri: k as u32,
                        lambda: [l0, l1, l2],
                    });
                }
            }
        }
    }
    out
}

/// Affine map `A` with `src = A (p - deformed[0]) + rigid[0]` for one triangle.
pub fn back_affine(deformed: [Vec2; 3], rigid: [Vec2; 3]) -> Matrix2<f64> {
    let d = Matrix2::from_columns(&[deformed[1] - deformed[0], deformed[2] - deformed[0]]);
    let r = Matrix2::from_columns(&[rigid[1] - rigid[0], rigid[2] - rigid[0]]);
    r * d.try_inverse().unwrap_or_else(Matrix2::zeros)
}
