//! Procedural two-view shaky video generator with ground truth.

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Homography, Homography4pt, ImageSize, Vec2};
use crate::image::Image;
use crate::mesh::GridSpec;

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Infinite procedural scene: multi-octave value noise mixed with a soft checker.
#[derive(Debug, Clone, Copy)]
pub struct Scene {
    seed: u64,
}

impl Scene {
    const OCTAVES: [(f64, f64); 4] = [(64.0, 1.0), (32.0, 0.5), (16.0, 0.3), (8.0, 0.2)];
    const CHECKER: f64 = 40.0;

    pub fn new(seed: u64) -> Self {
        Self { seed }
    }

    fn lattice(&self, ix: i64, iy: i64, layer: u64) -> f64 {
        let h = splitmix(
            self.seed
                ^ splitmix(ix as u64 ^ splitmix(iy as u64 ^ splitmix(layer.wrapping_add(17)))),
        );
        (h >> 11) as f64 / (1u64 << 53) as f64
    }

    fn noise(&self, x: f64, y: f64, layer: u64) -> f64 {
        let (fx, fy) = (x.floor(), y.floor());
        let (tx, ty) = (x - fx, y - fy);
        let (sx, sy) = (tx * tx * (3.0 - 2.0 * tx), ty * ty * (3.0 - 2.0 * ty));
        let (ix, iy) = (fx as i64, fy as i64);
        let a = self.lattice(ix, iy, layer);
        let b = self.lattice(ix + 1, iy, layer);
        let c = self.lattice(ix, iy + 1, layer);
        let d = self.lattice(ix + 1, iy + 1, layer);
        (a * (1.0 - sx) + b * sx) * (1.0 - sy) + (c * (1.0 - sx) + d * sx) * sy
    }

    fn layered(&self, x: f64, y: f64, channel: u64) -> f64 {
        let mut v = 0.0;
        let mut total = 0.0;
        for (k, (period, amp)) in Self::OCTAVES.iter().enumerate() {
            v += amp * self.noise(x / period, y / period, channel * 8 + k as u64);
            total += amp;
        }
        v / total
    }

    /// Gray value in [20, 235].
    pub fn gray(&self, x: f64, y: f64) -> f64 {
        let p = std::f64::consts::PI / Self::CHECKER;
        let checker = 0.5 + 0.5 * (3.0 * (p * x).sin() * (p * y).sin()).tanh();
        20.0 + 215.0 * (0.7 * self.layered(x, y, 0) + 0.3 * checker)
    }

    /// Colour value; each channel is the gray value with a small tint.
    pub fn rgb(&self, x: f64, y: f64) -> [f64; 3] {
        let g = self.gray(x, y);
        let tint = 30.0 * (self.layered(x * 0.5, y * 0.5, 1) - 0.5);
        [
            (g + tint).clamp(0.0, 255.0),
            g,
            (g - tint).clamp(0.0, 255.0),
        ]
    }
}

/// A `width × height` single-channel rendering of the scene at the origin.
pub fn texture(width: usize, height: usize, seed: u64) -> Image {
    let scene = Scene::new(seed);
    Image::from_fn(width, height, 1, |x, y, _| scene.gray(x as f64, y as f64) as f32)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticSpec {
    pub width: u32,
    pub height: u32,
    pub frames: usize,
    /// Per-frame random corner perturbation shared by both cameras, px.
    pub jitter: f64,
    /// Additional independent per-view corner perturbation, px.
    pub view_jitter: f64,
    /// Amplitude of the smooth base path in x and y, px.
    pub pan: [f64; 2],
    /// Period of the base path in frames.
    pub pan_period: f64,
    /// Scene offset of the target camera relative to the reference camera, px.
    pub baseline: [f64; 2],
    /// Corner perturbation of the fixed inter-view projective component, px.
    pub view_skew: f64,
    pub channels: usize,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            width: 480,
            height: 360,
            frames: 120,
            jitter: 6.0,
            view_jitter: 0.0,
            pan: [24.0, 12.0],
            pan_period: 96.0,
            baseline: [120.0, 6.0],
            view_skew: 4.0,
            channels: 3,
            seed: 7,
        }
    }
}

impl SyntheticSpec {
    pub fn size(&self) -> ImageSize {
        ImageSize::new(self.width, self.height)
    }

    pub fn validate(&self) -> Result<()> {
        if self.width < 64 || self.height < 64 {
            return Err(Error::InvalidConfig("synthetic frames must be at least 64x64".into()));
        }
        if self.frames == 0 {
            return Err(Error::InvalidConfig("synthetic sequence needs at least one frame".into()));
        }
        if !(self.channels == 1 || self.channels == 3) {
            return Err(Error::InvalidConfig("channels must be 1 or 3".into()));
        }
        let cell = GridSpec::default_for(self.size()).spacing();
        let limit = cell.x.min(cell.y) / 2.0;
        for (name, v) in [("jitter", self.jitter), ("view_jitter", self.view_jitter)] {
            if !(v >= 0.0 && v < limit) {
                return Err(Error::InvalidConfig(format!(
                    "{name} must lie in [0, {limit}) (half a grid cell)"
                )));
            }
        }
        if !(self.view_skew >= 0.0 && self.pan_period > 0.0) {
            return Err(Error::InvalidConfig("view_skew and pan_period must be non-negative".into()));
        }
        Ok(())
    }
}

/// Ground-truth transforms of one frame; each maps frame pixels to the scene.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FrameTruth {
    pub t: usize,
    /// Corner displacements of the reference camera, TL, TR, BL, BR.
    pub reference: [[f64; 2]; 4],
    pub target: [[f64; 2]; 4],
    /// Corner displacements of the reference-to-target homography.
    pub inter_view: [[f64; 2]; 4],
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GroundTruth {
    pub spec: SyntheticSpec,
    pub frames: Vec<FrameTruth>,
}

/// An in-memory synthetic sequence; frames are rendered on demand.
#[derive(Debug, Clone)]
pub struct SyntheticSequence {
    spec: SyntheticSpec,
    scene: Scene,
    cameras: Vec<(Homography, Homography)>,
}

fn random_4pt(rng: &mut ChaCha8Rng, amp: f64, size: ImageSize) -> Result<Homography> {
    if amp == 0.0 {
        return Ok(Homography::identity(size));
    }
    let mut d = [Vec2::zeros(); 4];
    for v in &mut d {
        *v = Vec2::new(rng.gen_range(-amp..=amp), rng.gen_range(-amp..=amp));
    }
    Homography4pt {
        displacements: d,
        size,
    }
    .to_matrix()
}

fn corners_of(h: &Homography) -> Result<[[f64; 2]; 4]> {
    let d = h.to_h4pt()?.displacements;
    Ok(d.map(|v| [v.x, v.y]))
}

impl SyntheticSequence {
    pub fn new(spec: SyntheticSpec) -> Result<Self> {
        spec.validate()?;
        let size = spec.size();
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        let skew = random_4pt(&mut rng, spec.view_skew, size)?;
        let offset = Homography::translation(spec.baseline[0], spec.baseline[1], size).compose(&skew)?;
        let mut cameras = Vec::with_capacity(spec.frames);
        for t in 1..=spec.frames {
            let phase = 2.0 * std::f64::consts::PI * t as f64 / spec.pan_period;
            let base = Homography::translation(
                spec.pan[0] * phase.sin(),
                spec.pan[1] * (0.5 * phase).sin(),
                size,
            );
            let shake = random_4pt(&mut rng, spec.jitter, size)?;
            let jr = random_4pt(&mut rng, spec.view_jitter, size)?;
            let jt = random_4pt(&mut rng, spec.view_jitter, size)?;
            let g_ref = base.compose(&shake)?.compose(&jr)?;
            let g_tgt = base.compose(&offset)?.compose(&shake)?.compose(&jt)?;
            cameras.push((g_ref, g_tgt));
        }
        Ok(Self {
            scene: Scene::new(spec.seed ^ 0xa5a5),
            spec,
            cameras,
        })
    }

    pub fn spec(&self) -> &SyntheticSpec {
        &self.spec
    }

    pub fn len(&self) -> usize {
        self.cameras.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cameras.is_empty()
    }

    /// Frame-to-scene cameras `(reference, target)` of frame `t` (1-based).
    pub fn cameras(&self, t: usize) -> &(Homography, Homography) {
        &self.cameras[t - 1]
    }

    /// Reference-to-target homography of frame `t`.
    pub fn inter_view(&self, t: usize) -> Result<Homography> {
        let (r, g) = self.cameras(t);
        g.invert()?.compose(r)
    }

    fn render(&self, cam: &Homography) -> Image {
        let (w, h, ch) = (
            self.spec.width as usize,
            self.spec.height as usize,
            self.spec.channels,
        );
        let rows: Vec<Vec<f32>> = (0..h)
            .into_par_iter()
            .map(|y| {
                let mut row = Vec::with_capacity(w * ch);
                for x in 0..w {
                    let p = cam
                        .apply(Vec2::new(x as f64, y as f64))
                        .unwrap_or_else(|_| Vec2::zeros());
                    if ch == 1 {
                        row.push(self.scene.gray(p.x, p.y) as f32);
                    } else {
                        row.extend(self.scene.rgb(p.x, p.y).map(|v| v as f32));
                    }
                }
                row
            })
            .collect();
        Image::from_raw(w, h, ch, rows.concat()).expect("buffer matches dimensions")
    }

    /// Rendered `(reference, target)` images of frame `t` (1-based).
    pub fn frame(&self, t: usize) -> (Image, Image) {
        let (r, g) = self.cameras(t);
        (self.render(r), self.render(g))
    }

    pub fn ground_truth(&self) -> Result<GroundTruth> {
        let mut frames = Vec::with_capacity(self.len());
        for t in 1..=self.len() {
            let (r, g) = self.cameras(t);
            frames.push(FrameTruth {
                t,
                reference: corners_of(r)?,
                target: corners_of(g)?,
                inter_view: corners_of(&self.inter_view(t)?)?,
            });
        }
        Ok(GroundTruth {
            spec: self.spec.clone(),
            frames,
        })
    }
}

/// Writes `ref/`, `tgt/` PNG sequences and `ground_truth.json` under `out`.
pub fn synth_generate(spec: &SyntheticSpec, out: &Path) -> Result<GroundTruth> {
    let seq = SyntheticSequence::new(spec.clone())?;
    let (rd, td) = (out.join("ref"), out.join("tgt"));
    fs::create_dir_all(&rd)?;
    fs::create_dir_all(&td)?;
    for t in 1..=seq.len() {
        let (r, g) = seq.frame(t);
        let name = crate::frame_name(t);
        r.save_png(&rd.join(&name))?;
        g.save_png(&td.join(&name))?;
    }
    let truth = seq.ground_truth()?;
    fs::write(out.join("ground_truth.json"), serde_json::to_vec_pretty(&truth)?)?;
    Ok(truth)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(jitter: f64) -> SyntheticSpec {
        SyntheticSpec {
            width: 160,
            height: 120,
            frames: 4,
            jitter,
            pan: [0.0, 0.0],
            ..SyntheticSpec::default()
        }
    }

    #[test]
    fn texture_is_deterministic_and_textured() {
        let a = texture(64, 64, 3);
        assert_eq!(a, texture(64, 64, 3));
        assert_ne!(a, texture(64, 64, 4));
        let mean = a.data().iter().sum::<f32>() / a.data().len() as f32;
        let var = a.data().iter().map(|v| (v - mean).powi(2)).sum::<f32>() / a.data().len() as f32;
        assert!(var > 100.0, "{var}");
    }

    #[test]
    fn zero_jitter_is_static() {
        let seq = SyntheticSequence::new(small(0.0)).unwrap();
        let (a, _) = seq.frame(1);
        let (b, _) = seq.frame(3);
        assert_eq!(a, b);
    }

    #[test]
    fn identity_inter_view_gives_identical_streams() {
        let spec = SyntheticSpec {
            baseline: [0.0, 0.0],
            view_skew: 0.0,
            ..small(3.0)
        };
        let seq = SyntheticSequence::new(spec).unwrap();
        let (a, b) = seq.frame(2);
        assert_eq!(a, b);
    }

    #[test]
    fn jitter_moves_frames() {
        let seq = SyntheticSequence::new(small(5.0)).unwrap();
        assert_ne!(seq.frame(1).0, seq.frame(2).0);
        let h = seq.inter_view(1).unwrap();
        let p = h.apply(Vec2::new(80.0, 60.0)).unwrap();
        assert!((p.x - 80.0 + 120.0).abs() < 10.0, "{p:?}");
    }

    #[test]
    fn jitter_is_bounded_by_half_a_cell() {
        let spec = SyntheticSpec {
            jitter: 30.0,
            ..SyntheticSpec::default()
        };
        assert!(spec.validate().is_err());
        assert!(SyntheticSpec::default().validate().is_ok());
    }

    #[test]
    fn generate_writes_dataset() {
        let dir = tempfile::tempdir().unwrap();
        let truth = synth_generate(&small(2.0), dir.path()).unwrap();
        assert_eq!(truth.frames.len(), 4);
        assert!(dir.path().join("ref/000004.png").exists());
        assert!(dir.path().join("tgt/000001.png").exists());
        let json = std::fs::read_to_string(dir.path().join("ground_truth.json")).unwrap();
        let back: GroundTruth = serde_json::from_str(&json).unwrap();
        assert_eq!(back.spec, small(2.0));
    }
}
