//! Mesh warping onto a shared canvas, overlap masks and average blending.

use rayon::prelude::*;

use crate::error::Result;
use crate::geometry::Vec2;
use crate::image::Image;
use crate::mesh::{rigid_mesh, GridSpec, Mesh};
use crate::raster::{check_folds, rasterize, triangles, Lattice};

/// Output canvas: `offset` is added to mesh coordinates to get canvas pixels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Canvas {
    pub offset: Vec2,
    pub width: usize,
    pub height: usize,
}

impl Canvas {
    fn lattice(&self) -> Lattice {
        Lattice {
            x0: -self.offset.x,
            y0: -self.offset.y,
            stride: 1.0,
            width: self.width,
            height: self.height,
        }
    }
}

/// Bounding box of all vertices, ceiling-rounded, with `offset = -min`.
pub fn canvas_extent(meshes: &[&Mesh]) -> Canvas {
    let mut lo = Vec2::repeat(f64::INFINITY);
    let mut hi = Vec2::repeat(f64::NEG_INFINITY);
    for m in meshes {
        for v in &m.data {
            lo = lo.inf(v);
            hi = hi.sup(v);
        }
    }
    if !lo.x.is_finite() {
        return Canvas {
            offset: Vec2::zeros(),
            width: 0,
            height: 0,
        };
    }
    Canvas {
        offset: -lo,
        width: (hi.x - lo.x).ceil() as usize,
        height: (hi.y - lo.y).ceil() as usize,
    }
}

/// A canvas-sized image with its coverage mask.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskedImage {
    pub pixels: Image,
    pub mask: Vec<f32>,
}

fn snap(v: f64) -> f64 {
    let r = v.round();
    if (v - r).abs() < 1e-9 {
        r
    } else {
        v
    }
}

/// Backward-maps every canvas pixel through its covering triangle.
pub fn warp_frame(image: &Image, mesh: &Mesh, canvas: &Canvas) -> Result<MaskedImage> {
    let spec = GridSpec::new(mesh.rows, mesh.cols, image.size())?;
    mesh.check_shape(&spec)?;
    check_folds(&mesh.data, &spec)?;
    let lat = canvas.lattice();
    let hits = rasterize(&mesh.data, &spec, &lat);
    let rigid = rigid_mesh(&spec);
    let tris = triangles(&spec);
    let ch = image.channels();
    let w = canvas.width;
    let mut pixels = Image::new(w, canvas.height, ch);
    let mut mask = vec![0.0f32; w * canvas.height];
    if w == 0 {
        return Ok(MaskedImage { pixels, mask });
    }
    pixels
        .data_mut()
        .par_chunks_mut(w * ch)
        .zip(mask.par_chunks_mut(w))
        .enumerate()
        .for_each(|(j, (row, mrow))| {
            for i in 0..w {
                let Some(hit) = hits[j * w + i] else { continue };
                let t = tris[hit.tri as usize];
                let src: Vec2 = (0..3).map(|k| rigid.data[t[k]] * hit.lambda[k]).sum();
                let (sx, sy) = (snap(src.x), snap(src.y));
                for c in 0..ch {
                    row[i * ch + c] = image.sample(sx, sy, c);
                }
                mrow[i] = 1.0;
            }
        });
    Ok(MaskedImage { pixels, mask })
}

/// Average blend; returns the stitched image and the overlap mask `a.mask * b.mask`.
pub fn overlap_and_blend(a: &MaskedImage, b: &MaskedImage) -> (Image, Vec<f32>) {
    let ch = a.pixels.channels();
    let (w, h) = (a.pixels.width(), a.pixels.height());
    let mut out = Image::new(w, h, ch);
    let overlap: Vec<f32> = a.mask.iter().zip(&b.mask).map(|(x, y)| x * y).collect();
    let (pa, pb) = (a.pixels.data(), b.pixels.data());
    for (i, px) in out.data_mut().chunks_exact_mut(ch).enumerate() {
        let (ma, mb) = (a.mask[i], b.mask[i]);
        let total = ma + mb;
        if total <= 0.0 {
            continue;
        }
        for c in 0..ch {
            let k = i * ch + c;
            px[c] = (pa[k] * ma + pb[k] * mb) / total;
        }
    }
    (out, overlap)
}
