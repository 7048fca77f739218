//! Dense loss terms evaluated on a lattice over the two views' overlap.

use nalgebra::Matrix2;
use rayon::prelude::*;

use crate::geometry::Vec2;
use crate::image::Image;
use crate::mesh::GridSpec;
use crate::raster::{back_affine, rasterize, Hit, Lattice};

/// Shared geometry of a window: rigid vertices and triangle list.
pub(crate) struct Geometry {
    pub spec: GridSpec,
    pub rigid: Vec<Vec2>,
    pub tris: Vec<[usize; 3]>,
    inv_spacing: Vec2,
}

/// A sample covered by one view's mesh, mapped back into that view's frame.
#[derive(Clone, Copy)]
pub(crate) struct Mapped {
    pub src: Vec2,
    pub tri: usize,
    pub lambda: [f64; 3],
}

impl Geometry {
    #[inline]
    fn map(&self, hit: Hit) -> Mapped {
        let t = self.tris[hit.tri as usize];
        let l = hit.lambda;
        let src = self.rigid[t[0]] * l[0] + self.rigid[t[1]] * l[1] + self.rigid[t[2]] * l[2];
        Mapped {
            src,
            tri: hit.tri as usize,
            lambda: hit.lambda,
        }
    }

    fn affines(&self, verts: &[Vec2]) -> Vec<Matrix2<f64>> {
        self.tris
            .iter()
            .map(|t| {
                back_affine(
                    [verts[t[0]], verts[t[1]], verts[t[2]]],
                    [self.rigid[t[0]], self.rigid[t[1]], self.rigid[t[2]]],
                )
            })
            .collect()
    }

    /// Lattice samples covered by both meshes. Sample positions are multiples
    /// of `stride`, so they do not move when the meshes do.
    pub fn overlap(&self, a: &[Vec2], b: &[Vec2], stride: f64) -> Vec<(Mapped, Mapped)> {
        let bbox = |m: &[Vec2]| {
            m.iter().fold(
                (Vec2::repeat(f64::INFINITY), Vec2::repeat(f64::NEG_INFINITY)),
                |(lo, hi), v| (lo.inf(v), hi.sup(v)),
            )
        };
        let (la, ha) = bbox(a);
        let (lb, hb) = bbox(b);
        let lo = la.sup(&lb);
        let hi = ha.inf(&hb);
        if !(lo.x <= hi.x && lo.y <= hi.y) {
            return Vec::new();
        }
        let x0 = (lo.x / stride).ceil() * stride;
        let y0 = (lo.y / stride).ceil() * stride;
        if x0 > hi.x || y0 > hi.y {
            return Vec::new();
        }
        let lat = Lattice {
            x0,
            y0,
            stride,
            width: ((hi.x - x0) / stride).floor() as usize + 1,
            height: ((hi.y - y0) / stride).floor() as usize + 1,
        };
        let ha = rasterize(a, &self.spec, &lat);
        let hb = rasterize(b, &self.spec, &lat);
        let mut out = Vec::with_capacity(ha.len());
        for (x, y) in ha.iter().zip(&hb) {
            if let (Some(x), Some(y)) = (x, y) {
                out.push((self.map(*x), self.map(*y)));
            }
        }
        out
    }

    pub fn new(spec: GridSpec, rigid: Vec<Vec2>, tris: Vec<[usize; 3]>) -> Self {
        let sp = spec.spacing();
        Self {
            spec,
            rigid,
            tris,
            inv_spacing: Vec2::new(1.0 / sp.x, 1.0 / sp.y),
        }
    }

    /// Bilinear cell of a source-frame point for per-vertex fields.
    #[inline]
    fn cell(&self, p: Vec2) -> Cell {
        let (cols, rows) = (self.spec.cols, self.spec.rows);
        let u = p.x * self.inv_spacing.x;
        let v = p.y * self.inv_spacing.y;
        let (umax, vmax) = ((cols - 1) as f64, (rows - 1) as f64);
        let uc = u.clamp(0.0, umax);
        let vc = v.clamp(0.0, vmax);
        // truncation is floor for the clamped, non-negative coordinates
        let c0 = (uc as usize).min(cols - 2);
        let r0 = (vc as usize).min(rows - 2);
        Cell {
            i00: r0 * cols + c0,
            cols,
            fu: uc - c0 as f64,
            fv: vc - r0 as f64,
            inside_u: (0.0..=umax).contains(&u),
            inside_v: (0.0..=vmax).contains(&v),
        }
    }
}

/// Bilinear interpolation cell; the field is constant outside the grid.
struct Cell {
    i00: usize,
    cols: usize,
    fu: f64,
    fv: f64,
    inside_u: bool,
    inside_v: bool,
}

impl Cell {
    #[inline]
    fn weights(&self) -> [(usize, f64); 4] {
        let (i, c, fu, fv) = (self.i00, self.cols, self.fu, self.fv);
        [
            (i, (1.0 - fu) * (1.0 - fv)),
            (i + 1, fu * (1.0 - fv)),
            (i + c, (1.0 - fu) * fv),
            (i + c + 1, fu * fv),
        ]
    }

    #[inline]
    fn value(&self, f: &[Vec2]) -> Vec2 {
        let (i, c, fu, fv) = (self.i00, self.cols, self.fu, self.fv);
        (f[i] * (1.0 - fu) + f[i + 1] * fu) * (1.0 - fv) + (f[i + c] * (1.0 - fu) + f[i + c + 1] * fu) * fv
    }

    /// `Jᵀ g` for the field's spatial Jacobian `J = [∂F/∂x, ∂F/∂y]`.
    #[inline]
    fn jt_mul(&self, f: &[Vec2], inv_spacing: Vec2, g: Vec2) -> Vec2 {
        let (i, c, fu, fv) = (self.i00, self.cols, self.fu, self.fv);
        let dx = if self.inside_u {
            ((f[i + 1] - f[i]) * (1.0 - fv) + (f[i + c + 1] - f[i + c]) * fv) * inv_spacing.x
        } else {
            Vec2::zeros()
        };
        let dy = if self.inside_v {
            ((f[i + c] - f[i]) * (1.0 - fu) + (f[i + c + 1] - f[i + 1]) * fu) * inv_spacing.y
        } else {
            Vec2::zeros()
        };
        Vec2::new(dx.dot(&g), dy.dot(&g))
    }
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Gradients of a dense term with respect to each view's increments.
pub(crate) struct DenseGrad {
    pub reference: Vec<Vec2>,
    pub target: Vec<Vec2>,
}

impl DenseGrad {
    fn zeros(n: usize) -> Self {
        Self {
            reference: vec![Vec2::zeros(); n],
            target: vec![Vec2::zeros(); n],
        }
    }

    fn scale(&mut self, s: f64) {
        for g in self.reference.iter_mut().chain(self.target.iter_mut()) {
            *g *= s;
        }
    }
}

/// Adds the increment gradient of moving `src` along `g_src` through the mesh
/// triangle: a mesh vertex moves opposite to its increment, and the source
/// point moves by `-λ_k A` per unit vertex motion.
fn push_mesh(out: &mut [Vec2], geo: &Geometry, aff: &[Matrix2<f64>], m: &Mapped, g_src: Vec2) {
    let t = geo.tris[m.tri];
    let back = aff[m.tri].transpose() * g_src;
    for k in 0..3 {
        out[t[k]] += back * m.lambda[k];
    }
}

/// Samples per parallel work item. Partial sums are combined in chunk order,
/// so results do not depend on the thread count.
const CHUNK: usize = 2048;

/// Sums `per_sample` over the overlap samples and averages the value and the
/// gradient. Returns `None` when the overlap is empty.
fn dense_mean<F>(
    geo: &Geometry,
    m_ref: &[Vec2],
    m_tgt: &[Vec2],
    stride: f64,
    want_grad: bool,
    per_sample: F,
) -> Option<(f64, Option<DenseGrad>)>
where
    F: Fn(&Mapped, &Mapped, Option<(&mut DenseGrad, &[Matrix2<f64>], &[Matrix2<f64>])>) -> f64 + Sync,
{
    let samples = geo.overlap(m_ref, m_tgt, stride);
    if samples.is_empty() {
        return None;
    }
    let (ar, at) = if want_grad {
        (geo.affines(m_ref), geo.affines(m_tgt))
    } else {
        (Vec::new(), Vec::new())
    };
    let p = m_ref.len();
    let parts: Vec<(f64, Option<DenseGrad>)> = samples
        .par_chunks(CHUNK)
        .map(|chunk| {
            let mut grad = want_grad.then(|| DenseGrad::zeros(p));
            let mut total = 0.0;
            for (a, b) in chunk {
                total += per_sample(a, b, grad.as_mut().map(|g| (g, &ar[..], &at[..])));
            }
            (total, grad)
        })
        .collect();
    let mut total = 0.0;
    let mut grad = want_grad.then(|| DenseGrad::zeros(p));
    for (v, g) in parts {
        total += v;
        if let (Some(acc), Some(g)) = (grad.as_mut(), g) {
            for (x, y) in acc.reference.iter_mut().zip(&g.reference) {
                *x += y;
            }
            for (x, y) in acc.target.iter_mut().zip(&g.target) {
                *x += y;
            }
        }
    }
    let n = samples.len() as f64;
    if let Some(g) = grad.as_mut() {
        g.scale(1.0 / n);
    }
    Some((total / n, grad))
}

/// Mean L1 difference of the two dense trajectory fields over the overlap.
/// Returns `None` when the overlap is empty.
pub(crate) fn trajectory_term(
    geo: &Geometry,
    s_ref: &[Vec2],
    s_tgt: &[Vec2],
    m_ref: &[Vec2],
    m_tgt: &[Vec2],
    stride: f64,
    want_grad: bool,
) -> Option<(f64, Option<DenseGrad>)> {
    dense_mean(geo, m_ref, m_tgt, stride, want_grad, |a, b, grad| {
        let (ca, cb) = (geo.cell(a.src), geo.cell(b.src));
        let d = ca.value(s_ref) - cb.value(s_tgt);
        if let Some((g, ar, at)) = grad {
            let sg = Vec2::new(sign(d.x), sign(d.y));
            for (i, w) in ca.weights() {
                g.reference[i] += sg * w;
            }
            for (i, w) in cb.weights() {
                g.target[i] -= sg * w;
            }
            push_mesh(&mut g.reference, geo, ar, a, ca.jt_mul(s_ref, geo.inv_spacing, sg));
            push_mesh(&mut g.target, geo, at, b, -cb.jt_mul(s_tgt, geo.inv_spacing, sg));
        }
        d.x.abs() + d.y.abs()
    })
}

/// Mean absolute photometric difference of the two warped images over the overlap.
pub(crate) fn align_term(
    geo: &Geometry,
    img_ref: &Image,
    img_tgt: &Image,
    m_ref: &[Vec2],
    m_tgt: &[Vec2],
    stride: f64,
    want_grad: bool,
) -> Option<(f64, Option<DenseGrad>)> {
    dense_mean(geo, m_ref, m_tgt, stride, want_grad, |a, b, grad| match grad {
        None => (img_ref.sample_grad(a.src.x, a.src.y, 0).0 - img_tgt.sample_grad(b.src.x, b.src.y, 0).0).abs(),
        Some((g, ar, at)) => {
            let (va, gxa, gya) = img_ref.sample_grad(a.src.x, a.src.y, 0);
            let (vb, gxb, gyb) = img_tgt.sample_grad(b.src.x, b.src.y, 0);
            let d = va - vb;
            let s = sign(d);
            push_mesh(&mut g.reference, geo, ar, a, Vec2::new(gxa, gya) * s);
            push_mesh(&mut g.target, geo, at, b, Vec2::new(gxb, gyb) * -s);
            d.abs()
        }
    })
}
