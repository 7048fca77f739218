//! Per-window trajectory smoothing by direct minimization of the hybrid
//! objective over the smoothing increments `Δ`.
//!
//! Smooth paths are `Ŝ = S + Δ` and smooth spatial meshes are `M̂ = M − Δ`.

mod dense;
pub mod optimizer;

use log::warn;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Vec2;
use crate::mesh::{distortion_accumulate, rigid_mesh, DistortionWeights, GridField, GridSpec, Mesh};
use crate::raster::triangles;
use crate::trajectory::{build_window, check_window_len, Committed, FrameRecord, TrajectoryWindow};

use dense::Geometry;
pub use optimizer::{minimize, Minimum, OptimizerConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SmoothingWeights {
    pub data: f64,
    pub smooth: f64,
    pub shape: f64,
    pub online: f64,
    pub trajectory: f64,
    pub align: f64,
    /// Weights of the centred second differences at distances 1, 2, ...
    pub alpha: Vec<f64>,
}

impl Default for SmoothingWeights {
    fn default() -> Self {
        Self {
            data: 1.0,
            smooth: 50.0,
            shape: 10.0,
            online: 0.1,
            trajectory: 10.0,
            align: 1000.0,
            alpha: vec![0.9, 0.3, 0.1],
        }
    }
}

impl SmoothingWeights {
    pub fn zero() -> Self {
        Self {
            data: 0.0,
            smooth: 0.0,
            shape: 0.0,
            online: 0.0,
            trajectory: 0.0,
            align: 0.0,
            alpha: vec![0.9, 0.3, 0.1],
        }
    }
}

/// How per-control-point 2-vectors are accumulated in the data, smoothness
/// and inter-window terms.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NormKind {
    /// Sum of Euclidean norms.
    Euclidean,
    /// Sum of squared Euclidean norms.
    Squared,
}

impl NormKind {
    #[inline]
    fn eval(self, v: Vec2) -> (f64, Vec2) {
        match self {
            NormKind::Euclidean => {
                let n = v.norm();
                (n, if n > 0.0 { v / n } else { Vec2::zeros() })
            }
            NormKind::Squared => (v.norm_squared(), v * 2.0),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SmoothingConfig {
    pub weights: SmoothingWeights,
    pub norm: NormKind,
    pub distortion: DistortionWeights,
    /// Lattice spacing of the dense trajectory comparison, px (4 = quarter resolution).
    pub dense_stride: f64,
    /// Lattice spacing of the photometric alignment term, px.
    pub align_stride: f64,
}

impl Default for SmoothingConfig {
    fn default() -> Self {
        Self {
            weights: SmoothingWeights::default(),
            norm: NormKind::Euclidean,
            distortion: DistortionWeights::default(),
            dense_stride: 4.0,
            align_stride: 2.0,
        }
    }
}

impl SmoothingConfig {
    pub fn validate(&self, window: usize) -> Result<()> {
        check_window_len(window)?;
        let w = &self.weights;
        let all = [w.data, w.smooth, w.shape, w.online, w.trajectory, w.align];
        if all.iter().chain(&w.alpha).any(|v| !(*v >= 0.0) || !v.is_finite()) {
            return Err(Error::InvalidConfig("smoothing weights must be non-negative".into()));
        }
        if w.alpha.is_empty() || 2 * w.alpha.len() + 1 > window {
            return Err(Error::InvalidConfig(format!(
                "alpha needs between 1 and {} entries for a window of {window}",
                (window - 1) / 2
            )));
        }
        if !(self.dense_stride >= 1.0 && self.align_stride >= 1.0) {
            return Err(Error::InvalidConfig("lattice strides must be at least 1 px".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Online,
    Offline,
}

/// Unweighted term values and the weighted total.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossTerms {
    pub data: f64,
    pub smooth: f64,
    pub shape: f64,
    pub trajectory: f64,
    pub online: f64,
    pub align: f64,
    pub total: f64,
    /// Some dense term had an empty overlap and contributed 0.
    pub empty_overlap: bool,
}

/// Increments `Δ_ref`, `Δ_tgt` for every frame of a window.
#[derive(Debug, Clone, PartialEq)]
pub struct SmoothingIncrement {
    pub d_ref: Vec<GridField>,
    pub d_tgt: Vec<GridField>,
}

impl SmoothingIncrement {
    pub fn zeros(n: usize, spec: &GridSpec) -> Self {
        Self {
            d_ref: vec![GridField::zeros_like(spec); n],
            d_tgt: vec![GridField::zeros_like(spec); n],
        }
    }

    pub fn len(&self) -> usize {
        self.d_ref.len()
    }

    pub fn is_empty(&self) -> bool {
        self.d_ref.is_empty()
    }

    /// Flat layout consumed by [`Objective`].
    pub fn flatten(&self) -> Vec<Vec2> {
        self.d_ref
            .iter()
            .chain(&self.d_tgt)
            .flat_map(|f| f.data.iter().copied())
            .collect()
    }

    pub fn unflatten(x: &[Vec2], n: usize, spec: &GridSpec) -> Self {
        let p = spec.len();
        let field = |i: usize| GridField {
            rows: spec.rows,
            cols: spec.cols,
            data: x[i * p..(i + 1) * p].to_vec(),
        };
        Self {
            d_ref: (0..n).map(field).collect(),
            d_tgt: (n..2 * n).map(field).collect(),
        }
    }

    /// Warm start for the next window: drop the oldest frame and repeat the newest.
    pub fn shifted(&self) -> Self {
        let shift = |v: &[GridField]| {
            let mut out: Vec<GridField> = v[1..].to_vec();
            out.push(v[v.len() - 1].clone());
            out
        };
        Self {
            d_ref: shift(&self.d_ref),
            d_tgt: shift(&self.d_tgt),
        }
    }
}

/// Smooth paths and meshes of a window, in window-relative path coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct SmoothedWindow {
    pub s_ref: Vec<GridField>,
    pub s_tgt: Vec<GridField>,
    pub mesh_ref: Vec<Mesh>,
    pub mesh_tgt: Vec<Mesh>,
}

pub fn apply_increment(window: &TrajectoryWindow, delta: &SmoothingIncrement) -> SmoothedWindow {
    let add = |a: &[GridField], d: &[GridField]| a.iter().zip(d).map(|(x, y)| x + y).collect();
    let sub = |a: &[GridField], d: &[GridField]| a.iter().zip(d).map(|(x, y)| x - y).collect();
    SmoothedWindow {
        s_ref: add(&window.s_ref, &delta.d_ref),
        s_tgt: add(&window.s_tgt, &delta.d_tgt),
        mesh_ref: sub(&window.mesh_ref, &delta.d_ref),
        mesh_tgt: sub(&window.mesh_tgt, &delta.d_tgt),
    }
}

/// The objective of one window in flattened increment coordinates: index
/// `(v * n + t) * P + k` for view `v`, frame `t` and control point `k`.
pub struct Objective<'a> {
    window: &'a TrajectoryWindow,
    cfg: &'a SmoothingConfig,
    mode: Mode,
    geo: Geometry,
    neg_rigid: Vec<Vec2>,
}

impl<'a> Objective<'a> {
    pub fn new(window: &'a TrajectoryWindow, cfg: &'a SmoothingConfig, mode: Mode) -> Self {
        let spec = window.spec;
        let rigid = rigid_mesh(&spec).data;
        Self {
            window,
            cfg,
            mode,
            neg_rigid: rigid.iter().map(|v| -v).collect(),
            geo: Geometry::new(spec, rigid, triangles(&spec)),
        }
    }

    pub fn dim(&self) -> usize {
        2 * self.window.n * self.window.spec.len()
    }

    fn weights(&self) -> (f64, f64) {
        match self.mode {
            Mode::Online => (self.cfg.weights.online, self.cfg.weights.align),
            Mode::Offline => (0.0, 0.0),
        }
    }

    fn paths(&self, x: &[Vec2], v: usize, t: usize) -> Vec<Vec2> {
        let p = self.window.spec.len();
        let raw = if v == 0 { &self.window.s_ref } else { &self.window.s_tgt };
        let d = &x[(v * self.window.n + t) * p..][..p];
        raw[t].data.iter().zip(d).map(|(s, d)| s + d).collect()
    }

    fn meshes(&self, x: &[Vec2], v: usize, t: usize) -> Vec<Vec2> {
        let p = self.window.spec.len();
        let raw = if v == 0 { &self.window.mesh_ref } else { &self.window.mesh_tgt };
        let d = &x[(v * self.window.n + t) * p..][..p];
        raw[t].data.iter().zip(d).map(|(m, d)| m - d).collect()
    }

    /// Term breakdown at `x`; the weighted gradient is added into `grad`.
    pub fn evaluate(&self, x: &[Vec2], mut grad: Option<&mut [Vec2]>) -> LossTerms {
        let w = &self.cfg.weights;
        let (w_online, w_align) = self.weights();
        let n = self.window.n;
        let spec = &self.window.spec;
        let p = spec.len();
        let norm = self.cfg.norm;
        let mut terms = LossTerms::default();

        let paths: Vec<Vec<Vec2>> = (0..2 * n).map(|i| self.paths(x, i / n, i % n)).collect();
        let path = |v: usize, t: usize| &paths[v * n + t];
        let at = |v: usize, t: usize, k: usize| (v * n + t) * p + k;

        // data: increments are the difference between smooth and raw paths
        for (i, d) in x.iter().enumerate() {
            let (val, g) = norm.eval(*d);
            terms.data += val;
            if let Some(gr) = grad.as_deref_mut() {
                gr[i] += g * w.data;
            }
        }

        // smoothness: every centre with full support
        let h = w.alpha.len();
        for v in 0..2 {
            for c in h..n - h {
                for (i, a) in w.alpha.iter().enumerate() {
                    let d = i + 1;
                    for k in 0..p {
                        let r = path(v, c + d)[k] + path(v, c - d)[k] - path(v, c)[k] * 2.0;
                        let (val, g) = norm.eval(r);
                        terms.smooth += a * val;
                        if let Some(gr) = grad.as_deref_mut() {
                            let g = g * (a * w.smooth);
                            gr[at(v, c + d, k)] += g;
                            gr[at(v, c - d, k)] += g;
                            gr[at(v, c, k)] -= g * 2.0;
                        }
                    }
                }
            }
        }

        // shape: distortion of the smooth meshes
        if w.shape != 0.0 || grad.is_none() {
            for v in 0..2 {
                for t in 0..n {
                    let m: Vec<Vec2> = self
                        .meshes(x, v, t)
                        .iter()
                        .zip(&self.neg_rigid)
                        .map(|(a, b)| a + b)
                        .collect();
                    let scale = -w.shape / n as f64;
                    let mut scratch;
                    let g: &mut [Vec2] = match grad.as_deref_mut() {
                        Some(gr) => &mut gr[at(v, t, 0)..at(v, t, 0) + p],
                        None => {
                            scratch = vec![Vec2::zeros(); p];
                            &mut scratch
                        }
                    };
                    terms.shape += distortion_accumulate(&m, spec, self.cfg.distortion, scale, g) / n as f64;
                }
            }
        }

        // inter-window collaboration against the committed history
        if let Some((hr, ht)) = self.window.history.as_ref().filter(|_| w_online != 0.0 || grad.is_none()) {
            let scale = 1.0 / (n - 1) as f64;
            for (v, hist) in [hr, ht].into_iter().enumerate() {
                for (t, hf) in hist.iter().enumerate().take(n - 1) {
                    for k in 0..p {
                        let (val, g) = norm.eval(path(v, t)[k] - hf.data[k]);
                        terms.online += val * scale;
                        if let Some(gr) = grad.as_deref_mut() {
                            gr[at(v, t, k)] += g * (w_online * scale);
                        }
                    }
                }
            }
        }

        // dense trajectory consistency, frame-parallel
        let want = grad.is_some();
        if w.trajectory != 0.0 || !want {
            let per_t: Vec<_> = (0..n)
                .into_par_iter()
                .map(|t| {
                    dense::trajectory_term(
                        &self.geo,
                        path(0, t),
                        path(1, t),
                        &self.meshes(x, 0, t),
                        &self.meshes(x, 1, t),
                        self.cfg.dense_stride,
                        want,
                    )
                })
                .collect();
            for (t, r) in per_t.into_iter().enumerate() {
                match r {
                    None => terms.empty_overlap = true,
                    Some((val, g)) => {
                        terms.trajectory += val / n as f64;
                        if let (Some(gr), Some(g)) = (grad.as_deref_mut(), g) {
                            let s = w.trajectory / n as f64;
                            for k in 0..p {
                                gr[at(0, t, k)] += g.reference[k] * s;
                                gr[at(1, t, k)] += g.target[k] * s;
                            }
                        }
                    }
                }
            }
        }

        // photometric alignment of the last frame
        if let Some(al) = self.window.align.as_ref().filter(|_| w_align != 0.0 || !want) {
            let t = n - 1;
            match dense::align_term(
                &self.geo,
                &al.reference,
                &al.target,
                &self.meshes(x, 0, t),
                &self.meshes(x, 1, t),
                self.cfg.align_stride,
                want,
            ) {
                None => terms.empty_overlap = true,
                Some((val, g)) => {
                    terms.align = val;
                    if let (Some(gr), Some(g)) = (grad.as_deref_mut(), g) {
                        for k in 0..p {
                            gr[at(0, t, k)] += g.reference[k] * w_align;
                            gr[at(1, t, k)] += g.target[k] * w_align;
                        }
                    }
                }
            }
        }

        terms.total = w.data * terms.data
            + w.smooth * terms.smooth
            + w.shape * terms.shape
            + w_online * terms.online
            + w.trajectory * terms.trajectory
            + w_align * terms.align;
        terms
    }

    /// Total loss and its gradient, as consumed by the optimizer.
    pub fn value_and_grad(&self, x: &[Vec2], grad: &mut [Vec2]) -> f64 {
        grad.iter_mut().for_each(|g| *g = Vec2::zeros());
        self.evaluate(x, Some(grad)).total
    }
}

pub fn loss_total(
    delta: &SmoothingIncrement,
    window: &TrajectoryWindow,
    cfg: &SmoothingConfig,
    mode: Mode,
) -> LossTerms {
    Objective::new(window, cfg, mode).evaluate(&delta.flatten(), None)
}

pub fn loss_gradient(
    delta: &SmoothingIncrement,
    window: &TrajectoryWindow,
    cfg: &SmoothingConfig,
    mode: Mode,
) -> SmoothingIncrement {
    let obj = Objective::new(window, cfg, mode);
    let mut g = vec![Vec2::zeros(); obj.dim()];
    obj.value_and_grad(&delta.flatten(), &mut g);
    SmoothingIncrement::unflatten(&g, window.n, &window.spec)
}

#[derive(Debug, Clone)]
pub struct WindowSolution {
    pub delta: SmoothingIncrement,
    pub terms: LossTerms,
    pub evaluations: usize,
}

/// Minimizes the window objective starting from `init` (zeros if absent).
pub fn smooth_window(
    window: &TrajectoryWindow,
    cfg: &SmoothingConfig,
    opt: &OptimizerConfig,
    mode: Mode,
    init: Option<&SmoothingIncrement>,
    max_evals: usize,
) -> WindowSolution {
    let obj = Objective::new(window, cfg, mode);
    let x0 = match init {
        Some(d) if d.len() == window.n => d.flatten(),
        _ => vec![Vec2::zeros(); obj.dim()],
    };
    let best = minimize(x0, max_evals, opt.initial_step, opt.tolerance, |x, g| {
        obj.value_and_grad(x, g)
    });
    let terms = obj.evaluate(&best.x, None);
    if terms.empty_overlap {
        warn!("window {}: empty overlap in a dense smoothing term", window.xi);
    }
    WindowSolution {
        delta: SmoothingIncrement::unflatten(&best.x, window.n, &window.spec),
        terms,
        evaluations: best.evaluations,
    }
}

#[derive(Debug, Clone)]
pub struct OfflineResult {
    /// Smooth absolute paths per frame.
    pub s_ref: Vec<GridField>,
    pub s_tgt: Vec<GridField>,
    pub mesh_ref: Vec<Mesh>,
    pub mesh_tgt: Vec<Mesh>,
    pub terms: LossTerms,
    pub evaluations: usize,
}

/// One optimization over the whole sequence, padded to an odd length by
/// repeating the last frame.
pub fn smooth_offline(
    records: &[FrameRecord],
    spec: &GridSpec,
    cfg: &SmoothingConfig,
    opt: &OptimizerConfig,
) -> Result<OfflineResult> {
    let t = records.len();
    if t == 0 {
        return Err(Error::MissingHistory {
            needed: 1,
            available: 0,
        });
    }
    let mut padded: Vec<FrameRecord> = records.to_vec();
    while padded.len() < 2 * cfg.weights.alpha.len() + 1 || padded.len() % 2 == 0 {
        let mut last = padded[padded.len() - 1].clone();
        last.t += 1;
        padded.push(last);
    }
    for (i, r) in padded.iter_mut().enumerate() {
        r.t = i + 1;
    }
    let n = padded.len();
    cfg.validate(n)?;
    let window = build_window(n, n, spec, &padded, None, None)?;
    let sol = smooth_window(&window, cfg, opt, Mode::Offline, None, opt.offline_max_iters);
    let sm = apply_increment(&window, &sol.delta);
    let abs = |s: Vec<GridField>, base: &GridField| -> Vec<GridField> {
        s.into_iter().take(t).map(|x| &x + base).collect()
    };
    Ok(OfflineResult {
        s_ref: abs(sm.s_ref, &window.base_ref),
        s_tgt: abs(sm.s_tgt, &window.base_tgt),
        mesh_ref: sm.mesh_ref.into_iter().take(t).collect(),
        mesh_tgt: sm.mesh_tgt.into_iter().take(t).collect(),
        terms: sol.terms,
        evaluations: sol.evaluations,
    })
}

/// Output of one online step: what gets rendered and emitted for frame `xi`.
#[derive(Debug, Clone)]
pub struct OnlineStep {
    pub mesh_ref: Mesh,
    pub mesh_tgt: Mesh,
    /// Emitted smooth positions of the last frame, absolute.
    pub s_ref: GridField,
    pub s_tgt: GridField,
    pub terms: LossTerms,
    pub evaluations: usize,
}

/// Sliding-window driver: warm starts and commits each window's smooth paths
/// for the next window's collaboration term.
#[derive(Debug, Clone)]
pub struct OnlineSmoother {
    cfg: SmoothingConfig,
    opt: OptimizerConfig,
    n: usize,
    prev: Option<SmoothingIncrement>,
    committed: Option<Committed>,
}

impl OnlineSmoother {
    pub fn new(cfg: SmoothingConfig, opt: OptimizerConfig, n: usize) -> Result<Self> {
        cfg.validate(n)?;
        opt.validate()?;
        Ok(Self {
            cfg,
            opt,
            n,
            prev: None,
            committed: None,
        })
    }

    pub fn window_len(&self) -> usize {
        self.n
    }

    pub fn committed(&self) -> Option<&Committed> {
        self.committed.as_ref()
    }

    pub fn step(&mut self, window: &TrajectoryWindow) -> Result<OnlineStep> {
        if window.n != self.n {
            return Err(Error::InvalidConfig(format!(
                "window has {} frames, smoother expects {}",
                window.n, self.n
            )));
        }
        let init = self
            .prev
            .as_ref()
            .filter(|_| self.opt.warm_start)
            .map(SmoothingIncrement::shifted);
        let sol = smooth_window(
            window,
            &self.cfg,
            &self.opt,
            Mode::Online,
            init.as_ref(),
            self.opt.max_iters,
        );
        let sm = apply_increment(window, &sol.delta);
        let last = self.n - 1;
        let committed = Committed {
            xi: window.xi,
            s_ref: sm.s_ref.iter().map(|s| s + &window.base_ref).collect(),
            s_tgt: sm.s_tgt.iter().map(|s| s + &window.base_tgt).collect(),
        };
        let step = OnlineStep {
            mesh_ref: sm.mesh_ref[last].clone(),
            mesh_tgt: sm.mesh_tgt[last].clone(),
            s_ref: committed.s_ref[last].clone(),
            s_tgt: committed.s_tgt[last].clone(),
            terms: sol.terms,
            evaluations: sol.evaluations,
        };
        self.committed = Some(committed);
        self.prev = Some(sol.delta);
        Ok(step)
    }
}

#[cfg(test)]
mod tests;
