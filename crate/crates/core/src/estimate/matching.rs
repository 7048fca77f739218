//! Grid-based ZNCC block matching over an image pyramid.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::{Homography, Vec2};
use crate::image::{Frame, Image};

use super::{Correspondence, EstimatorConfig};

/// Minimum number of matched cells for a usable correspondence set.
pub const MIN_MATCHED_CELLS: usize = 8;

const MIN_PATCH_VARIANCE: f64 = 1e-3;
const MAX_COARSE_RADIUS: usize = 24;
const REFINE_RADIUS: i64 = 2;

/// Gray pyramid with per-level integral images of values and squares.
pub struct Pyramid {
    levels: Vec<Level>,
}

struct Level {
    img: Image,
    sum: Vec<f64>,
    sq: Vec<f64>,
}

impl Level {
    fn new(img: Image) -> Self {
        let (w, h) = (img.width(), img.height());
        let stride = w + 1;
        let mut sum = vec![0.0; stride * (h + 1)];
        let mut sq = vec![0.0; stride * (h + 1)];
        for y in 0..h {
            let mut rs = 0.0;
            let mut rq = 0.0;
            for x in 0..w {
                let v = img.at(x, y, 0) as f64;
                rs += v;
                rq += v * v;
                sum[(y + 1) * stride + x + 1] = sum[y * stride + x + 1] + rs;
                sq[(y + 1) * stride + x + 1] = sq[y * stride + x + 1] + rq;
            }
        }
        Self { img, sum, sq }
    }

    fn width(&self) -> usize {
        self.img.width()
    }

    fn height(&self) -> usize {
        self.img.height()
    }

    /// Sum and sum of squares over the square patch of half-size `r` at `(cx, cy)`.
    #[inline]
    fn moments(&self, cx: usize, cy: usize, r: usize) -> (f64, f64) {
        let stride = self.width() + 1;
        let (x0, y0, x1, y1) = (cx - r, cy - r, cx + r + 1, cy + r + 1);
        let rect = |t: &[f64]| t[y1 * stride + x1] - t[y0 * stride + x1] - t[y1 * stride + x0] + t[y0 * stride + x0];
        (rect(&self.sum), rect(&self.sq))
    }

    #[inline]
    fn fits(&self, cx: i64, cy: i64, r: usize) -> bool {
        let r = r as i64;
        cx - r >= 0 && cy - r >= 0 && cx + r < self.width() as i64 && cy + r < self.height() as i64
    }
}

impl Pyramid {
    pub fn new(frame: &Image, levels: usize) -> Self {
        let mut imgs = vec![frame.luma()];
        for _ in 0..levels {
            let last = imgs.last().unwrap();
            if last.width() < 32 || last.height() < 32 {
                break;
            }
            imgs.push(last.downsample2());
        }
        Self {
            levels: imgs.into_iter().map(Level::new).collect(),
        }
    }

    pub fn depth(&self) -> usize {
        self.levels.len()
    }
}

/// Zero-mean template of a patch with its centered energy.
struct Template {
    values: Vec<f64>,
    energy: f64,
}

fn template(level: &Level, cx: usize, cy: usize, r: usize) -> Option<Template> {
    let n = ((2 * r + 1) * (2 * r + 1)) as f64;
    let (s, q) = level.moments(cx, cy, r);
    let mean = s / n;
    let energy = q - s * s / n;
    if energy / n <= MIN_PATCH_VARIANCE {
        return None;
    }
    let mut values = Vec::with_capacity(n as usize);
    for y in cy - r..=cy + r {
        for x in cx - r..=cx + r {
            values.push(level.img.at(x, y, 0) as f64 - mean);
        }
    }
    Some(Template { values, energy })
}

/// ZNCC of template `t` against the patch of `level` centred at `(cx, cy)`.
#[inline]
fn zncc(t: &Template, level: &Level, cx: usize, cy: usize, r: usize) -> f64 {
    let side = 2 * r + 1;
    let n = (side * side) as f64;
    let (s, q) = level.moments(cx, cy, r);
    let energy = q - s * s / n;
    if energy / n <= MIN_PATCH_VARIANCE {
        return -1.0;
    }
    let mut num = 0.0;
    let w = level.width();
    let data = level.img.data();
    for (row, chunk) in t.values.chunks_exact(side).enumerate() {
        let base = (cy - r + row) * w + cx - r;
        let line = &data[base..base + side];
        for (a, b) in chunk.iter().zip(line) {
            num += a * *b as f64;
        }
    }
    num / (t.energy * energy).sqrt()
}

/// Chooses the highest-variance patch centre in each grid cell of `a`.
fn cell_centres(a: &Pyramid, cfg: &EstimatorConfig, coarse: usize) -> Vec<Option<(usize, usize)>> {
    let base = &a.levels[0];
    let (w, h) = (base.width(), base.height());
    let r = cfg.patch / 2;
    let margin = (r + 1) << coarse;
    let n = cfg.match_grid;
    let step = cfg.candidate_step.max(1);
    let mut out = Vec::with_capacity(n * n);
    for gy in 0..n {
        for gx in 0..n {
            let (x0, x1) = (gx * w / n, (gx + 1) * w / n);
            let (y0, y1) = (gy * h / n, (gy + 1) * h / n);
            let mut best: Option<((usize, usize), f64)> = None;
            let mut y = y0.max(margin);
            while y < y1.min(h.saturating_sub(margin)) {
                let mut x = x0.max(margin);
                while x < x1.min(w.saturating_sub(margin)) {
                    let (s, q) = base.moments(x, y, r);
                    let nn = ((2 * r + 1) * (2 * r + 1)) as f64;
                    let var = (q - s * s / nn) / nn;
                    if best.map_or(true, |(_, v)| var > v) {
                        best = Some(((x, y), var));
                    }
                    x += step;
                }
                y += step;
            }
            out.push(best.filter(|(_, v)| *v > MIN_PATCH_VARIANCE).map(|(p, _)| p));
        }
    }
    out
}

/// Exhaustive integer search around `guess` at one level. Ties go to the
/// smallest displacement from `origin`, then lexicographic `(dx, dy)`.
fn search(
    t: &Template,
    level: &Level,
    guess: (i64, i64),
    origin: (i64, i64),
    radius: i64,
    r: usize,
) -> Option<((i64, i64), f64)> {
    let mut best: Option<((i64, i64), f64)> = None;
    for dy in -radius..=radius {
        for dx in -radius..=radius {
            let (cx, cy) = (guess.0 + dx, guess.1 + dy);
            if !level.fits(cx, cy, r) {
                continue;
            }
            let s = zncc(t, level, cx as usize, cy as usize, r);
            let better = match best {
                None => true,
                Some(((bx, by), bs)) => {
                    if s != bs {
                        s > bs
                    } else {
                        let d = (cx - origin.0, cy - origin.1);
                        let bd = (bx - origin.0, by - origin.1);
                        let (m, bm) = (d.0 * d.0 + d.1 * d.1, bd.0 * bd.0 + bd.1 * bd.1);
                        m < bm || (m == bm && d < bd)
                    }
                }
            };
            if better {
                best = Some(((cx, cy), s));
            }
        }
    }
    best
}

/// Parabolic peak offset from three samples, in (-0.5, 0.5).
fn parabola(l: f64, c: f64, r: f64) -> f64 {
    let den = l - 2.0 * c + r;
    if den >= 0.0 {
        return 0.0;
    }
    (0.5 * (l - r) / den).clamp(-0.5, 0.5)
}

/// Matches grid patches of `a` into `b`.
///
/// `prior` maps a point of `a` to its predicted location in `b`; without it
/// the search is centred on the same coordinates. `radius` is in full
/// resolution pixels.
pub fn match_pyramids(
    a: &Pyramid,
    b: &Pyramid,
    cfg: &EstimatorConfig,
    prior: Option<&Homography>,
    radius: usize,
) -> Vec<Correspondence> {
    let deepest = (a.depth().min(b.depth()) - 1).min(cfg.pyramid_levels);
    // stop descending once the search window is small enough
    let coarse = (0..=deepest)
        .find(|l| radius.div_ceil(1 << l) <= MAX_COARSE_RADIUS)
        .unwrap_or(deepest);
    let r = cfg.patch / 2;
    let centres = cell_centres(a, cfg, coarse);
    centres
        .par_iter()
        .filter_map(|c| {
            let (px, py) = (*c)?;
            let p = Vec2::new(px as f64, py as f64);
            let predicted = match prior {
                Some(h) => h.apply(p).ok()?,
                None => p,
            };
            let mut guess = (
                (predicted.x / (1 << coarse) as f64).round() as i64,
                (predicted.y / (1 << coarse) as f64).round() as i64,
            );
            let mut best = None;
            for level in (0..=coarse).rev() {
                let la = &a.levels[level];
                let lb = &b.levels[level];
                let (ax, ay) = (px >> level, py >> level);
                if !la.fits(ax as i64, ay as i64, r) {
                    return None;
                }
                let t = template(la, ax, ay, r)?;
                let rad = if level == coarse {
                    (radius as f64 / (1 << level) as f64).ceil() as i64
                } else {
                    REFINE_RADIUS
                };
                let origin = (ax as i64, ay as i64);
                let found = search(&t, lb, guess, origin, rad, r)?;
                if level > 0 {
                    guess = (found.0 .0 * 2, found.0 .1 * 2);
                } else {
                    best = Some((found, t));
                }
            }
            let (((qx, qy), score), t) = best?;
            if score < cfg.zncc_min {
                return None;
            }
            let mut q = Vec2::new(qx as f64, qy as f64);
            // a perfect correlation is already exact; the parabola would bias it
            if cfg.subpixel && score < 1.0 - 1e-9 {
                let lb = &b.levels[0];
                let at = |x: i64, y: i64| {
                    if lb.fits(x, y, r) {
                        Some(zncc(&t, lb, x as usize, y as usize, r))
                    } else {
                        None
                    }
                };
                if let (Some(l), Some(rr)) = (at(qx - 1, qy), at(qx + 1, qy)) {
                    q.x += parabola(l, score, rr);
                }
                if let (Some(u), Some(d)) = (at(qx, qy - 1), at(qx, qy + 1)) {
                    q.y += parabola(u, score, d);
                }
            }
            Some(Correspondence { p, q, score })
        })
        .collect()
}

/// One correspondence per textured grid cell of `a`, matched into `b`.
pub fn match_grid(a: &Frame, b: &Frame, cfg: &EstimatorConfig) -> Result<Vec<Correspondence>> {
    if a.size() != b.size() {
        return Err(Error::SizeMismatch {
            path: Default::default(),
            expected: (a.size().width, a.size().height),
            found: (b.size().width, b.size().height),
        });
    }
    let pa = Pyramid::new(&a.image, cfg.pyramid_levels);
    let pb = Pyramid::new(&b.image, cfg.pyramid_levels);
    let corrs = match_pyramids(&pa, &pb, cfg, None, cfg.search_radius);
    if corrs.len() < MIN_MATCHED_CELLS {
        return Err(Error::InsufficientTexture {
            found: corrs.len(),
            required: MIN_MATCHED_CELLS,
        });
    }
    Ok(corrs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::image::View;
    use crate::synth::texture;

    fn cfg_exhaustive() -> EstimatorConfig {
        EstimatorConfig {
            pyramid_levels: 0,
            subpixel: false,
            search_radius: 8,
            ..EstimatorConfig::default()
        }
    }

    fn frame(img: Image, view: View) -> Frame {
        Frame::new(img, 1, view).unwrap()
    }

    #[test]
    fn static_pair_matches_in_place() {
        let img = texture(160, 120, 4);
        let a = frame(img.clone(), View::Reference);
        let b = frame(img, View::Target);
        let corrs = match_grid(&a, &b, &cfg_exhaustive()).unwrap();
        assert!(corrs.len() >= MIN_MATCHED_CELLS);
        for c in &corrs {
            assert_eq!(c.q - c.p, Vec2::zeros());
            assert!((c.score - 1.0).abs() < 1e-9);
        }
    }

    /// Brute-force ZNCC over the full window for one patch, computed without
    /// integral images.
    fn brute_force_best(a: &Image, b: &Image, p: (usize, usize), r: usize, rad: i64) -> (i64, i64) {
        let patch = |img: &Image, cx: i64, cy: i64| -> Vec<f64> {
            let mut v = Vec::new();
            for y in cy - r as i64..=cy + r as i64 {
                for x in cx - r as i64..=cx + r as i64 {
                    v.push(img.at(x as usize, y as usize, 0) as f64);
                }
            }
            v
        };
        let score = |u: &[f64], v: &[f64]| {
            let n = u.len() as f64;
            let (mu, mv) = (u.iter().sum::<f64>() / n, v.iter().sum::<f64>() / n);
            let num: f64 = u.iter().zip(v).map(|(a, b)| (a - mu) * (b - mv)).sum();
            let du: f64 = u.iter().map(|a| (a - mu).powi(2)).sum();
            let dv: f64 = v.iter().map(|b| (b - mv).powi(2)).sum();
            num / (du * dv).sqrt()
        };
        let ta = patch(a, p.0 as i64, p.1 as i64);
        let mut best = ((0, 0), f64::MIN);
        for dy in -rad..=rad {
            for dx in -rad..=rad {
                let (cx, cy) = (p.0 as i64 + dx, p.1 as i64 + dy);
                let r = r as i64;
                if cx - r < 0 || cy - r < 0 || cx + r >= b.width() as i64 || cy + r >= b.height() as i64 {
                    continue;
                }
                let s = score(&ta, &patch(b, cx, cy));
                if s > best.1 + 1e-12 {
                    best = ((dx, dy), s);
                }
            }
        }
        best.0
    }

    #[test]
    fn shifted_pair_matches_brute_force() {
        let base = texture(200, 150, 9);
        let shifted = Image::from_fn(195, 150, 1, |x, y, _| base.at(x, y, 0));
        let a_img = Image::from_fn(195, 150, 1, |x, y, _| base.at((x + 5).min(199), y, 0));
        // a(x) = base(x + 5) and b(x) = base(x), so content in b sits 5 px to the right
        let a = frame(a_img.clone(), View::Reference);
        let b = frame(shifted.clone(), View::Target);
        let cfg = cfg_exhaustive();
        let corrs = match_grid(&a, &b, &cfg).unwrap();
        let r = cfg.patch / 2;
        let mut interior = 0;
        for c in &corrs {
            let p = (c.p.x as usize, c.p.y as usize);
            let bf = brute_force_best(&a_img, &shifted, p, r, cfg.search_radius as i64);
            assert_eq!((c.q - c.p), Vec2::new(bf.0 as f64, bf.1 as f64));
            if c.p.x > 20.0 && c.p.x < 170.0 {
                assert_eq!(c.q - c.p, Vec2::new(5.0, 0.0));
                interior += 1;
            }
        }
        assert!(interior >= 8);
    }

    #[test]
    fn uniform_frames_have_no_texture() {
        let a = frame(Image::filled(128, 128, 1, 128.0), View::Reference);
        let b = frame(Image::filled(128, 128, 1, 128.0), View::Target);
        assert!(matches!(
            match_grid(&a, &b, &EstimatorConfig::default()),
            Err(Error::InsufficientTexture { found: 0, .. })
        ));
    }

    #[test]
    fn pyramid_search_recovers_large_shift() {
        let base = texture(400, 200, 2);
        let a_img = Image::from_fn(320, 200, 1, |x, y, _| base.at(x + 60, y, 0));
        let b_img = Image::from_fn(320, 200, 1, |x, y, _| base.at(x, y, 0));
        let cfg = EstimatorConfig {
            pyramid_levels: 3,
            search_radius: 80,
            ..EstimatorConfig::default()
        };
        let corrs = match_grid(
            &frame(a_img, View::Reference),
            &frame(b_img, View::Target),
            &cfg,
        )
        .unwrap();
        let good = corrs
            .iter()
            .filter(|c| (c.q - c.p - Vec2::new(60.0, 0.0)).norm() < 0.5)
            .count();
        assert!(good >= 8, "{good} of {}", corrs.len());
    }
}
