//! Camera and stitching trajectories of control points, and sliding windows.

use crate::error::{Error, Result};
use crate::image::Image;
use crate::mesh::{rigid_mesh, ControlMotions, GridField, GridSpec, Mesh};
use crate::tps::tps_fit;

/// Cumulative positions `S(t) = Σ_{τ≤t} s(τ)`; the first motion is expected to be zero.
pub fn chain_stitching(motions: &[ControlMotions]) -> Vec<GridField> {
    let mut out: Vec<GridField> = Vec::with_capacity(motions.len());
    for m in motions {
        let next = match out.last() {
            Some(prev) => prev + m,
            None => m.clone(),
        };
        out.push(next);
    }
    out
}

/// Camera trajectory `C(t) = Σ_{τ≤t} m^T(τ)` of chained temporal motions.
pub fn camera_trajectory(temporal: &[ControlMotions]) -> Vec<GridField> {
    chain_stitching(temporal)
}

/// Relative stitching motion: where the previous warp would put the content
/// tracked by `mesh_t`, minus where the current spatial mesh puts it.
///
/// `mesh_t` is the rigid mesh plus the temporal motions of frame `t`, and the
/// spatial meshes are absolute vertex positions of frames `t - 1` and `t`.
pub fn stitching_motion(
    mesh_t: &Mesh,
    mesh_s_prev: &Mesh,
    mesh_s_cur: &Mesh,
    spec: &GridSpec,
) -> Result<ControlMotions> {
    for m in [mesh_t, mesh_s_prev, mesh_s_cur] {
        m.check_shape(spec)?;
    }
    let rig = rigid_mesh(spec);
    if mesh_s_prev == &rig {
        // the fitted transform is the identity
        return Ok(mesh_t - mesh_s_cur);
    }
    let tps = tps_fit(&rig.data, &mesh_s_prev.data)?;
    let data = mesh_t
        .data
        .iter()
        .zip(&mesh_s_cur.data)
        .map(|(p, cur)| tps.eval(*p) - cur)
        .collect();
    GridField::from_vec(spec, data)
}

/// Raw per-frame inputs of the smoother, in absolute coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameRecord {
    pub t: usize,
    pub s_ref: GridField,
    pub s_tgt: GridField,
    pub mesh_ref: Mesh,
    pub mesh_tgt: Mesh,
}

/// Smoothed positions of one window, absolute, for frames `xi - N + 1 ..= xi`.
#[derive(Debug, Clone, PartialEq)]
pub struct Committed {
    pub xi: usize,
    pub s_ref: Vec<GridField>,
    pub s_tgt: Vec<GridField>,
}

/// Box-filtered luma of the window's last frame pair.
#[derive(Debug, Clone)]
pub struct AlignFrames {
    pub reference: Image,
    pub target: Image,
}

impl AlignFrames {
    pub fn new(reference: &Image, target: &Image) -> Self {
        Self {
            reference: reference.luma().box3(),
            target: target.luma().box3(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrajectoryWindow {
    pub xi: usize,
    pub n: usize,
    pub spec: GridSpec,
    /// Absolute positions of the first frame; window trajectories are relative to it.
    pub base_ref: GridField,
    pub base_tgt: GridField,
    pub s_ref: Vec<GridField>,
    pub s_tgt: Vec<GridField>,
    pub mesh_ref: Vec<Mesh>,
    pub mesh_tgt: Vec<Mesh>,
    /// Previous window's smoothed positions for relative times `1 ..= N - 1`, re-based.
    pub history: Option<(Vec<GridField>, Vec<GridField>)>,
    pub align: Option<AlignFrames>,
}

pub fn check_window_len(n: usize) -> Result<()> {
    if n < 3 || n % 2 == 0 {
        return Err(Error::InvalidConfig(format!(
            "window length must be odd and at least 3, got {n}"
        )));
    }
    Ok(())
}

/// Window of frames `xi - n + 1 ..= xi` taken from `records`.
pub fn build_window(
    xi: usize,
    n: usize,
    spec: &GridSpec,
    records: &[FrameRecord],
    committed: Option<&Committed>,
    align: Option<AlignFrames>,
) -> Result<TrajectoryWindow> {
    check_window_len(n)?;
    if xi < n {
        return Err(Error::MissingHistory {
            needed: n,
            available: xi,
        });
    }
    let first = xi + 1 - n;
    let frames: Vec<&FrameRecord> = (first..=xi)
        .map(|t| records.iter().find(|r| r.t == t))
        .collect::<Option<_>>()
        .ok_or(Error::MissingHistory {
            needed: n,
            available: records.iter().filter(|r| (first..=xi).contains(&r.t)).count(),
        })?;
    for f in &frames {
        for g in [&f.s_ref, &f.s_tgt, &f.mesh_ref, &f.mesh_tgt] {
            g.check_shape(spec)?;
        }
    }
    let base_ref = frames[0].s_ref.clone();
    let base_tgt = frames[0].s_tgt.clone();
    let history = committed.filter(|c| c.xi + 1 == xi).map(|c| {
        (
            c.s_ref[1..].iter().map(|s| s - &base_ref).collect(),
            c.s_tgt[1..].iter().map(|s| s - &base_tgt).collect(),
        )
    });
    Ok(TrajectoryWindow {
        xi,
        n,
        spec: *spec,
        s_ref: frames.iter().map(|f| &f.s_ref - &base_ref).collect(),
        s_tgt: frames.iter().map(|f| &f.s_tgt - &base_tgt).collect(),
        mesh_ref: frames.iter().map(|f| f.mesh_ref.clone()).collect(),
        mesh_tgt: frames.iter().map(|f| f.mesh_tgt.clone()).collect(),
        base_ref,
        base_tgt,
        history,
        align,
    })
}
