//! Overlap PSNR/SSIM, trajectory stability and mesh distortion scores.

use serde::{Deserialize, Serialize};

use crate::image::Image;
use crate::mesh::{distortion_energy, rigid_mesh, DistortionWeights, GridField, GridSpec, Mesh};

pub const PSNR_CAP: f64 = 100.0;

const SSIM_RADIUS: usize = 5;
const SSIM_SIGMA: f64 = 1.5;
const C1: f64 = (0.01 * 255.0) * (0.01 * 255.0);
const C2: f64 = (0.03 * 255.0) * (0.03 * 255.0);

/// PSNR over all channels of the pixels where `mask >= 0.5`; `None` if empty.
pub fn psnr(a: &Image, b: &Image, mask: &[f32]) -> Option<f64> {
    let ch = a.channels();
    let mut se = 0.0;
    let mut n = 0usize;
    for (i, m) in mask.iter().enumerate() {
        if *m < 0.5 {
            continue;
        }
        for c in 0..ch {
            let d = (a.data()[i * ch + c] - b.data()[i * ch + c]) as f64;
            se += d * d;
        }
        n += ch;
    }
    if n == 0 {
        return None;
    }
    let mse = se / n as f64;
    if mse == 0.0 {
        return Some(PSNR_CAP);
    }
    Some((10.0 * (255.0 * 255.0 / mse).log10()).min(PSNR_CAP))
}

fn gaussian() -> Vec<f64> {
    let k: Vec<f64> = (0..=2 * SSIM_RADIUS)
        .map(|i| {
            let d = i as f64 - SSIM_RADIUS as f64;
            (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp()
        })
        .collect();
    let s: f64 = k.iter().sum();
    k.into_iter().map(|v| v / s).collect()
}

/// Separable "valid" Gaussian filtering; output is `(w - 10) × (h - 10)`.
fn blur_valid(v: &[f64], w: usize, h: usize, k: &[f64]) -> Vec<f64> {
    let n = k.len();
    let (ow, oh) = (w + 1 - n, h + 1 - n);
    let mut tmp = vec![0.0; ow * h];
    for y in 0..h {
        for x in 0..ow {
            let row = &v[y * w + x..y * w + x + n];
            tmp[y * ow + x] = row.iter().zip(k).map(|(a, b)| a * b).sum();
        }
    }
    let mut out = vec![0.0; ow * oh];
    for y in 0..oh {
        for x in 0..ow {
            let mut s = 0.0;
            for (j, kj) in k.iter().enumerate() {
                s += tmp[(y + j) * ow + x] * kj;
            }
            out[y * ow + x] = s;
        }
    }
    out
}

/// Mean luma SSIM over 11×11 Gaussian windows lying fully inside the mask.
pub fn ssim(a: &Image, b: &Image, mask: &[f32]) -> Option<f64> {
    let (w, h) = (a.width(), a.height());
    let side = 2 * SSIM_RADIUS + 1;
    if w < side || h < side {
        return None;
    }
    let la = a.luma();
    let lb = b.luma();
    let fa: Vec<f64> = la.data().iter().map(|v| *v as f64).collect();
    let fb: Vec<f64> = lb.data().iter().map(|v| *v as f64).collect();
    let k = gaussian();
    let prod = |x: &[f64], y: &[f64]| -> Vec<f64> { x.iter().zip(y).map(|(p, q)| p * q).collect() };
    let ma = blur_valid(&fa, w, h, &k);
    let mb = blur_valid(&fb, w, h, &k);
    let aa = blur_valid(&prod(&fa, &fa), w, h, &k);
    let bb = blur_valid(&prod(&fb, &fb), w, h, &k);
    let ab = blur_valid(&prod(&fa, &fb), w, h, &k);

    // integral image of the binary mask
    let stride = w + 1;
    let mut integ = vec![0u32; stride * (h + 1)];
    for y in 0..h {
        let mut run = 0;
        for x in 0..w {
            run += (mask[y * w + x] >= 0.5) as u32;
            integ[(y + 1) * stride + x + 1] = integ[y * stride + x + 1] + run;
        }
    }
    let full = (side * side) as u32;
    let ow = w + 1 - side;
    let mut total = 0.0;
    let mut count = 0usize;
    for y in 0..h + 1 - side {
        for x in 0..ow {
            let inside = integ[(y + side) * stride + x + side] + integ[y * stride + x]
                - integ[y * stride + x + side]
                - integ[(y + side) * stride + x];
            if inside != full {
                continue;
            }
            let i = y * ow + x;
            let (mx, my) = (ma[i], mb[i]);
            let sxx = aa[i] - mx * mx;
            let syy = bb[i] - my * my;
            let sxy = ab[i] - mx * my;
            let num = (2.0 * mx * my + C1) * (2.0 * sxy + C2);
            let den = (mx * mx + my * my + C1) * (sxx + syy + C2);
            total += num / den;
            count += 1;
        }
    }
    (count > 0).then(|| total / count as f64)
}

/// `(psnr, ssim)` over the overlap; `None` for an empty overlap.
pub fn alignment_scores(a: &Image, b: &Image, overlap: &[f32]) -> Option<(f64, Option<f64>)> {
    let p = psnr(a, b, overlap)?;
    Some((p, ssim(a, b, overlap)))
}

/// Centred smoothness loss `Σ_i α_i Σ_k ‖S(c+i) + S(c−i) − 2 S(c)‖` at centre `c`.
pub fn smoothness_at(series: &[GridField], c: usize, alpha: &[f64]) -> f64 {
    let mut total = 0.0;
    for (i, a) in alpha.iter().enumerate() {
        let d = i + 1;
        let (l, m, r) = (&series[c - d], &series[c], &series[c + d]);
        for k in 0..m.data.len() {
            total += a * (l.data[k] + r.data[k] - m.data[k] * 2.0).norm();
        }
    }
    total
}

/// Mean windowed smoothness loss of an emitted position series.
///
/// Windows have `2 * alpha.len() + 1` frames; a series shorter than one window
/// scores 0.
pub fn stability_score(series: &[GridField], alpha: &[f64]) -> f64 {
    let h = alpha.len();
    if series.len() < 2 * h + 1 {
        return 0.0;
    }
    let centres = h..series.len() - h;
    let n = centres.len() as f64;
    centres.map(|c| smoothness_at(series, c, alpha)).sum::<f64>() / n
}

/// Maximum distortion energy over a sequence of absolute meshes.
pub fn distortion_score(meshes: &[Mesh], spec: &GridSpec, w: DistortionWeights) -> f64 {
    let rig = rigid_mesh(spec);
    meshes
        .iter()
        .map(|m| distortion_energy(&(m - &rig), spec, w))
        .fold(0.0, f64::max)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameReport {
    pub t: usize,
    pub psnr: Option<f64>,
    pub ssim: Option<f64>,
    pub overlap_pixels: usize,
    /// Distortion energy of the target mesh.
    pub distortion: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VideoReport {
    pub video: String,
    pub frames: Vec<FrameReport>,
    pub psnr_mean: f64,
    pub ssim_mean: f64,
    pub psnr_min: f64,
    /// Stability of the emitted target trajectory.
    pub stability: f64,
    /// Stability of the unsmoothed target trajectory.
    pub stability_raw: f64,
    /// Maximum per-frame distortion of the emitted target meshes.
    pub distortion: f64,
    /// Frames whose overlap was empty and were left out of the means.
    pub omitted: Vec<usize>,
}

impl VideoReport {
    pub fn new(
        video: String,
        frames: Vec<FrameReport>,
        stability: f64,
        stability_raw: f64,
    ) -> Self {
        let mean = |xs: Vec<f64>| {
            if xs.is_empty() {
                0.0
            } else {
                xs.iter().sum::<f64>() / xs.len() as f64
            }
        };
        let psnrs: Vec<f64> = frames.iter().filter_map(|f| f.psnr).collect();
        let psnr_min = psnrs.iter().copied().fold(f64::INFINITY, f64::min);
        Self {
            psnr_mean: mean(psnrs),
            ssim_mean: mean(frames.iter().filter_map(|f| f.ssim).collect()),
            psnr_min: if psnr_min.is_finite() { psnr_min } else { 0.0 },
            distortion: frames.iter().map(|f| f.distortion).fold(0.0, f64::max),
            omitted: frames.iter().filter(|f| f.psnr.is_none()).map(|f| f.t).collect(),
            video,
            frames,
            stability,
            stability_raw,
        }
    }
}
