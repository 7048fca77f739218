//! Classical spatial and temporal warp estimation.
//!
//! Both estimators fit a global homography to grid ZNCC matches and add a
//! local per-vertex residual, producing control motions on the mesh lattice.

pub mod cache;
pub mod matching;
pub mod ransac;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{decompose_bidirectional, Homography, PlaneFraction, Vec2};
use crate::image::Frame;
use crate::mesh::{h4pt_to_control_motions, ControlMotions, GridField, GridSpec};

pub use matching::{match_grid, Pyramid};
pub use ransac::ransac_homography;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Correspondence {
    pub p: Vec2,
    pub q: Vec2,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EstimatorConfig {
    /// Matching cells per axis.
    pub match_grid: usize,
    /// Odd patch side in pixels.
    pub patch: usize,
    /// Search radius at full resolution when no prior is available.
    pub search_radius: usize,
    /// Search radius around the previous frame's model.
    pub guided_radius: usize,
    pub zncc_min: f64,
    pub ransac_iters: usize,
    pub ransac_inlier_px: f64,
    pub min_inliers: usize,
    pub beta: PlaneFraction,
    pub pyramid_levels: usize,
    /// Step between candidate patch centres when picking a cell's patch.
    pub candidate_step: usize,
    pub subpixel: bool,
    pub seed: u64,
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        Self {
            match_grid: 10,
            patch: 15,
            search_radius: 200,
            guided_radius: 24,
            zncc_min: 0.8,
            ransac_iters: 500,
            ransac_inlier_px: 2.0,
            min_inliers: 12,
            beta: PlaneFraction::MID,
            pyramid_levels: 3,
            candidate_step: 4,
            subpixel: true,
            seed: 0x5eed,
        }
    }
}

impl EstimatorConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        if self.match_grid == 0 || self.search_radius == 0 || self.guided_radius == 0 {
            return bad("estimator grid and radii must be positive");
        }
        if self.patch < 3 || self.patch % 2 == 0 {
            return bad("patch size must be odd and at least 3");
        }
        if !(self.zncc_min > 0.0 && self.zncc_min < 1.0) {
            return bad("zncc_min must lie in (0, 1)");
        }
        if self.ransac_iters == 0 || self.min_inliers < 4 || self.ransac_inlier_px <= 0.0 {
            return bad("RANSAC settings must be positive with min_inliers >= 4");
        }
        if self.candidate_step == 0 {
            return bad("candidate_step must be positive");
        }
        Ok(())
    }
}

/// Result of the spatial estimator for one frame pair.
#[derive(Debug, Clone)]
pub struct SpatialEstimate {
    /// Reference-to-target homography.
    pub homography: Homography,
    pub m_ref: ControlMotions,
    pub m_tgt: ControlMotions,
    pub inliers: usize,
}

#[derive(Debug, Clone)]
pub struct TemporalEstimate {
    /// Current-to-previous homography.
    pub homography: Homography,
    pub motions: ControlMotions,
    pub inliers: usize,
}

/// Per-vertex median of located residual samples, holes filled by
/// inverse-distance weighting, each component clamped to half a cell.
pub fn residual_field(samples: &[(Vec2, Vec2)], spec: &GridSpec) -> ControlMotions {
    let n = spec.len();
    let mut buckets: Vec<Vec<Vec2>> = vec![Vec::new(); n];
    for (at, r) in samples {
        buckets[spec.nearest_vertex(*at)].push(*r);
    }
    let median = |mut v: Vec<f64>| -> f64 {
        v.sort_by(f64::total_cmp);
        let m = v.len();
        if m % 2 == 1 {
            v[m / 2]
        } else {
            0.5 * (v[m / 2 - 1] + v[m / 2])
        }
    };
    let half = spec.spacing() / 2.0;
    let filled: Vec<Option<Vec2>> = buckets
        .into_iter()
        .map(|b| {
            (!b.is_empty()).then(|| {
                Vec2::new(
                    median(b.iter().map(|v| v.x).collect()).clamp(-half.x, half.x),
                    median(b.iter().map(|v| v.y).collect()).clamp(-half.y, half.y),
                )
            })
        })
        .collect();
    let mut out = GridField::zeros_like(spec);
    if filled.iter().all(Option::is_none) {
        return out;
    }
    let rigid = crate::mesh::rigid_mesh(spec);
    for i in 0..n {
        let v = match filled[i] {
            Some(v) => v,
            None => {
                let mut acc = Vec2::zeros();
                let mut wsum = 0.0;
                for (j, f) in filled.iter().enumerate() {
                    if let Some(fv) = f {
                        let w = 1.0 / (rigid[i] - rigid[j]).norm_squared();
                        acc += fv * w;
                        wsum += w;
                    }
                }
                acc / wsum
            }
        };
        out[i] = v;
    }
    out
}

/// Spatial warp of a synchronized pair onto the virtual plane.
///
/// `prior` is the previous frame's reference-to-target homography; it narrows
/// the search.
pub fn estimate_spatial_guided(
    reference: &Pyramid,
    target: &Pyramid,
    spec: &GridSpec,
    cfg: &EstimatorConfig,
    prior: Option<&Homography>,
) -> Result<SpatialEstimate> {
    let radius = if prior.is_some() {
        cfg.guided_radius
    } else {
        cfg.search_radius
    };
    let corrs = matching::match_pyramids(reference, target, cfg, prior, radius);
    if corrs.len() < matching::MIN_MATCHED_CELLS {
        return Err(Error::InsufficientTexture {
            found: corrs.len(),
            required: matching::MIN_MATCHED_CELLS,
        });
    }
    let (h, mask) = ransac_homography(&corrs, cfg, spec.size)?;
    let (h_ref, h_tgt) = decompose_bidirectional(&h, cfg.beta)?;
    // meshes are forward maps from each source frame onto the virtual plane
    let fwd_ref = h_ref.invert()?;
    let fwd_tgt = h_tgt.invert()?;
    let beta = cfg.beta.get();
    let mut ref_samples = Vec::new();
    let mut tgt_samples = Vec::new();
    for (c, _) in corrs.iter().zip(&mask).filter(|(_, m)| **m) {
        let r = fwd_ref.apply(c.p)? - fwd_tgt.apply(c.q)?;
        ref_samples.push((c.p, -r * (1.0 - beta)));
        tgt_samples.push((c.q, r * beta));
    }
    let mut m_ref = h4pt_to_control_motions(&fwd_ref, spec)?;
    let mut m_tgt = h4pt_to_control_motions(&fwd_tgt, spec)?;
    m_ref += &residual_field(&ref_samples, spec);
    m_tgt += &residual_field(&tgt_samples, spec);
    Ok(SpatialEstimate {
        homography: h,
        m_ref,
        m_tgt,
        inliers: mask.iter().filter(|m| **m).count(),
    })
}

/// Spatial motions `(m_ref, m_tgt)` for one frame pair.
pub fn estimate_spatial(
    reference: &Frame,
    target: &Frame,
    spec: &GridSpec,
    cfg: &EstimatorConfig,
) -> Result<(ControlMotions, ControlMotions)> {
    check_pair(reference, target)?;
    let a = Pyramid::new(&reference.image, cfg.pyramid_levels);
    let b = Pyramid::new(&target.image, cfg.pyramid_levels);
    let est = estimate_spatial_guided(&a, &b, spec, cfg, None)?;
    Ok((est.m_ref, est.m_tgt))
}

/// Unidirectional temporal warp aligning `current` with `previous`.
pub fn estimate_temporal_guided(
    previous: &Pyramid,
    current: &Pyramid,
    spec: &GridSpec,
    cfg: &EstimatorConfig,
) -> Result<TemporalEstimate> {
    let corrs = matching::match_pyramids(current, previous, cfg, None, cfg.guided_radius);
    if corrs.len() < matching::MIN_MATCHED_CELLS {
        return Err(Error::InsufficientTexture {
            found: corrs.len(),
            required: matching::MIN_MATCHED_CELLS,
        });
    }
    let (h, mask) = ransac_homography(&corrs, cfg, spec.size)?;
    let mut samples = Vec::new();
    for (c, _) in corrs.iter().zip(&mask).filter(|(_, m)| **m) {
        samples.push((c.p, c.q - h.apply(c.p)?));
    }
    let mut motions = h4pt_to_control_motions(&h, spec)?;
    motions += &residual_field(&samples, spec);
    Ok(TemporalEstimate {
        homography: h,
        motions,
        inliers: mask.iter().filter(|m| **m).count(),
    })
}

/// Temporal motions `m^T(t)` of one view; the first frame has all-zero motions.
pub fn estimate_temporal(
    previous: Option<&Frame>,
    current: &Frame,
    spec: &GridSpec,
    cfg: &EstimatorConfig,
) -> Result<ControlMotions> {
    let Some(previous) = previous else {
        return Ok(GridField::zeros_like(spec));
    };
    check_pair(previous, current)?;
    let a = Pyramid::new(&previous.image, cfg.pyramid_levels);
    let b = Pyramid::new(&current.image, cfg.pyramid_levels);
    Ok(estimate_temporal_guided(&a, &b, spec, cfg)?.motions)
}

fn check_pair(a: &Frame, b: &Frame) -> Result<()> {
    if a.size() != b.size() {
        return Err(Error::SizeMismatch {
            path: Default::default(),
            expected: (a.size().width, a.size().height),
            found: (b.size().width, b.size().height),
        });
    }
    Ok(())
}
