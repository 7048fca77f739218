//! End-to-end drivers: estimation, trajectories, smoothing, rendering and metrics.

use std::collections::VecDeque;
use std::path::Path;
use std::time::{Duration, Instant};

use log::{info, warn};
use serde::{Deserialize, Serialize};

use crate::config::PipelineConfig;
use crate::error::{Error, Result};
use crate::estimate::cache::{MeshCache, MeshRecord};
use crate::estimate::matching::Pyramid;
use crate::estimate::{estimate_spatial_guided, estimate_temporal_guided, EstimatorConfig};
use crate::geometry::{Homography, PlaneFraction, Vec2};
use crate::image::Image;
use crate::ingest::FramePairs;
use crate::mesh::{distortion_energy, rigid_mesh, DistortionWeights, GridField, GridSpec, Mesh};
use crate::metrics::{alignment_scores, stability_score, FrameReport, VideoReport};
use crate::render::{canvas_extent, overlap_and_blend, warp_frame, Canvas};
use crate::smoothing::{smooth_offline, LossTerms, Mode, OnlineSmoother};
use crate::trajectory::{build_window, stitching_motion, AlignFrames, FrameRecord};

/// Accumulated wall time per pipeline stage.
#[derive(Debug, Clone, Copy, Default)]
pub struct Timings {
    pub estimation: Duration,
    pub trajectory: Duration,
    pub smoothing: Duration,
    pub warping: Duration,
    pub blending: Duration,
    pub metrics: Duration,
    pub frames: usize,
}

impl Timings {
    pub fn total(&self) -> Duration {
        self.estimation + self.trajectory + self.smoothing + self.warping + self.blending + self.metrics
    }

    /// Mean milliseconds per frame for each stage.
    pub fn table(&self) -> String {
        let n = self.frames.max(1) as f64;
        let ms = |d: Duration| d.as_secs_f64() * 1e3 / n;
        let rows = [
            ("motion estimation", self.estimation),
            ("trajectory", self.trajectory),
            ("smoothing", self.smoothing),
            ("warping", self.warping),
            ("blending", self.blending),
            ("metrics", self.metrics),
            ("total", self.total()),
        ];
        let mut out = format!("{:<18} {:>10}\n", "stage", "ms/frame");
        for (name, d) in rows {
            out.push_str(&format!("{name:<18} {:>10.2}\n", ms(d)));
        }
        out
    }
}

fn timed<T>(slot: &mut Duration, f: impl FnOnce() -> T) -> T {
    let start = Instant::now();
    let out = f();
    *slot += start.elapsed();
    out
}

/// Frame-by-frame motion estimation with guided search and fallback to the
/// previous frame's motions on failure.
pub struct MotionEstimator {
    spec: GridSpec,
    cfg: EstimatorConfig,
    previous: Option<(Pyramid, Pyramid)>,
    prior: Option<Homography>,
    last: Option<MeshRecord>,
    t: usize,
    fallbacks: usize,
}

impl MotionEstimator {
    pub fn new(spec: GridSpec, cfg: EstimatorConfig) -> Self {
        Self {
            spec,
            cfg,
            previous: None,
            prior: None,
            last: None,
            t: 0,
            fallbacks: 0,
        }
    }

    /// Frames whose motions were copied from the previous frame.
    pub fn fallbacks(&self) -> usize {
        self.fallbacks
    }

    /// Motions of the next frame pair. Fails only when the first frame's
    /// spatial estimate fails, since there is nothing to fall back to.
    pub fn next(&mut self, reference: &Image, target: &Image) -> Result<MeshRecord> {
        self.t += 1;
        let t = self.t;
        let levels = self.cfg.pyramid_levels;
        let (pa, pb) = rayon::join(|| Pyramid::new(reference, levels), || Pyramid::new(target, levels));
        let (spec, cfg, prior) = (&self.spec, &self.cfg, self.prior.as_ref());
        let zeros = || GridField::zeros_like(spec);
        let (spatial, (tr, tt)) = rayon::join(
            || {
                estimate_spatial_guided(&pa, &pb, spec, cfg, prior).or_else(|e| match prior {
                    Some(_) => estimate_spatial_guided(&pa, &pb, spec, cfg, None),
                    None => Err(e),
                })
            },
            || match &self.previous {
                None => (Ok(zeros()), Ok(zeros())),
                Some((qa, qb)) => rayon::join(
                    || estimate_temporal_guided(qa, &pa, spec, cfg).map(|e| e.motions),
                    || estimate_temporal_guided(qb, &pb, spec, cfg).map(|e| e.motions),
                ),
            },
        );
        let mut fell_back = false;
        let (m_ref, m_tgt) = match (spatial, &self.last) {
            (Ok(s), _) => {
                self.prior = Some(s.homography);
                (s.m_ref, s.m_tgt)
            }
            (Err(e), Some(last)) => {
                warn!("frame {t}: spatial estimation failed ({e}); reusing previous motions");
                fell_back = true;
                (last.m_spatial_ref.clone(), last.m_spatial_tgt.clone())
            }
            (Err(e), None) => return Err(e.at_frame(t)),
        };
        let mut temporal = |r: Result<GridField>, view: &str, last: Option<&GridField>| match r {
            Ok(m) => m,
            Err(e) => {
                warn!("frame {t}: {view} temporal estimation failed ({e}); reusing previous motions");
                fell_back = true;
                last.cloned().unwrap_or_else(zeros)
            }
        };
        let m_temporal_ref = temporal(tr, "reference", self.last.as_ref().map(|l| &l.m_temporal_ref));
        let m_temporal_tgt = temporal(tt, "target", self.last.as_ref().map(|l| &l.m_temporal_tgt));
        if fell_back {
            self.fallbacks += 1;
        }
        let rec = MeshRecord {
            t,
            m_spatial_ref: m_ref,
            m_spatial_tgt: m_tgt,
            m_temporal_ref,
            m_temporal_tgt,
        };
        self.previous = Some((pa, pb));
        self.last = Some(rec.clone());
        Ok(rec)
    }
}

/// One emitted output frame.
#[derive(Debug, Clone)]
pub struct StitchedFrame {
    pub t: usize,
    pub image: Image,
    pub overlap: Vec<f32>,
    pub mesh_ref: Mesh,
    pub mesh_tgt: Mesh,
    /// Emitted and raw absolute stitching-trajectory positions.
    pub s_ref: GridField,
    pub s_tgt: GridField,
    pub raw_s_ref: GridField,
    pub raw_s_tgt: GridField,
    /// False for pass-through startup frames.
    pub smoothed: bool,
    pub terms: Option<LossTerms>,
    /// Objective evaluations spent by the smoother on this frame.
    pub evaluations: usize,
    pub report: FrameReport,
}

/// Raw trajectory bookkeeping shared by the online and offline drivers.
struct TrajectoryBuilder {
    spec: GridSpec,
    rigid: Mesh,
    prev: Option<(Mesh, Mesh)>,
    s_ref: GridField,
    s_tgt: GridField,
}

impl TrajectoryBuilder {
    fn new(spec: GridSpec) -> Self {
        Self {
            rigid: rigid_mesh(&spec),
            prev: None,
            s_ref: GridField::zeros_like(&spec),
            s_tgt: GridField::zeros_like(&spec),
            spec,
        }
    }

    fn push(&mut self, m: &MeshRecord) -> Result<FrameRecord> {
        for f in [&m.m_spatial_ref, &m.m_spatial_tgt, &m.m_temporal_ref, &m.m_temporal_tgt] {
            f.check_shape(&self.spec)?;
        }
        let mesh_ref = &self.rigid + &m.m_spatial_ref;
        let mesh_tgt = &self.rigid + &m.m_spatial_tgt;
        if let Some((pr, pt)) = &self.prev {
            let tr = &self.rigid + &m.m_temporal_ref;
            let tt = &self.rigid + &m.m_temporal_tgt;
            self.s_ref += &stitching_motion(&tr, pr, &mesh_ref, &self.spec)?;
            self.s_tgt += &stitching_motion(&tt, pt, &mesh_tgt, &self.spec)?;
        }
        self.prev = Some((mesh_ref.clone(), mesh_tgt.clone()));
        Ok(FrameRecord {
            t: m.t,
            s_ref: self.s_ref.clone(),
            s_tgt: self.s_tgt.clone(),
            mesh_ref,
            mesh_tgt,
        })
    }
}

struct Renderer {
    spec: GridSpec,
    rigid: Mesh,
    distortion: DistortionWeights,
}

impl Renderer {
    fn new(spec: GridSpec, distortion: DistortionWeights) -> Self {
        Self {
            rigid: rigid_mesh(&spec),
            spec,
            distortion,
        }
    }

    fn distortion(&self, mesh: &Mesh) -> f64 {
        distortion_energy(&(mesh - &self.rigid), &self.spec, self.distortion)
    }

    /// Warps, blends and scores one frame pair. Returns the blend, the overlap
    /// mask and the frame report.
    #[allow(clippy::too_many_arguments)]
    fn render(
        &self,
        t: usize,
        a: &Image,
        b: &Image,
        mesh_ref: &Mesh,
        mesh_tgt: &Mesh,
        canvas: &Canvas,
        times: &mut Timings,
    ) -> Result<(Image, Vec<f32>, FrameReport)> {
        let (wa, wb) = timed(&mut times.warping, || {
            rayon::join(|| warp_frame(a, mesh_ref, canvas), || warp_frame(b, mesh_tgt, canvas))
        });
        let (wa, wb) = (wa.map_err(|e| e.at_frame(t))?, wb.map_err(|e| e.at_frame(t))?);
        let (image, overlap) = timed(&mut times.blending, || overlap_and_blend(&wa, &wb));
        let report = timed(&mut times.metrics, || {
            let scores = alignment_scores(&wa.pixels, &wb.pixels, &overlap);
            FrameReport {
                t,
                psnr: scores.map(|s| s.0),
                ssim: scores.and_then(|s| s.1),
                overlap_pixels: overlap.iter().filter(|m| **m >= 0.5).count(),
                distortion: self.distortion(mesh_tgt),
            }
        });
        Ok((image, overlap, report))
    }
}

/// Streaming online stitcher: consumes one frame pair and emits one stitched
/// frame. The first `N - 1` frames pass through with their raw spatial meshes.
pub struct OnlineStitcher {
    cfg: PipelineConfig,
    spec: GridSpec,
    estimator: MotionEstimator,
    builder: TrajectoryBuilder,
    smoother: OnlineSmoother,
    renderer: Renderer,
    records: VecDeque<FrameRecord>,
    canvas: Option<Canvas>,
    times: Timings,
    t: usize,
}

impl OnlineStitcher {
    pub fn new(cfg: PipelineConfig) -> Result<Self> {
        cfg.validate()?;
        let spec = cfg.grid_spec();
        Ok(Self {
            estimator: MotionEstimator::new(spec, cfg.estimator()),
            builder: TrajectoryBuilder::new(spec),
            smoother: OnlineSmoother::new(cfg.smoothing.clone(), cfg.optimizer.clone(), cfg.window)?,
            renderer: Renderer::new(spec, cfg.smoothing.distortion),
            records: VecDeque::with_capacity(cfg.window),
            canvas: None,
            times: Timings::default(),
            t: 0,
            spec,
            cfg,
        })
    }

    pub fn spec(&self) -> &GridSpec {
        &self.spec
    }

    pub fn timings(&self) -> &Timings {
        &self.times
    }

    pub fn estimation_fallbacks(&self) -> usize {
        self.estimator.fallbacks()
    }

    /// The fixed output canvas, known once the first frame has been pushed.
    pub fn canvas(&self) -> Option<Canvas> {
        self.canvas
    }

    fn check_size(&self, img: &Image) -> Result<()> {
        if img.size() != self.spec.size {
            return Err(Error::SizeMismatch {
                path: Default::default(),
                expected: (self.spec.size.width, self.spec.size.height),
                found: (img.width() as u32, img.height() as u32),
            });
        }
        Ok(())
    }

    /// Estimates the pair's motions and stitches it.
    pub fn push(&mut self, reference: &Image, target: &Image) -> Result<StitchedFrame> {
        self.check_size(reference)?;
        self.check_size(target)?;
        let start = Instant::now();
        let motions = self.estimator.next(reference, target)?;
        self.times.estimation += start.elapsed();
        self.push_motions(&motions, reference, target)
    }

    /// Stitches a pair whose motions were estimated elsewhere.
    pub fn push_motions(&mut self, motions: &MeshRecord, reference: &Image, target: &Image) -> Result<StitchedFrame> {
        self.check_size(reference)?;
        self.check_size(target)?;
        self.t += 1;
        let t = self.t;
        if motions.t != t {
            return Err(Error::SchemaMismatch(format!("expected motions of frame {t}, got {}", motions.t)));
        }
        let n = self.cfg.window;
        let rec = timed(&mut self.times.trajectory, || self.builder.push(motions)).map_err(|e| e.at_frame(t))?;
        self.records.push_back(rec.clone());
        if self.records.len() > n {
            self.records.pop_front();
        }
        let canvas = *self.canvas.get_or_insert_with(|| {
            let mut c = canvas_extent(&[&rec.mesh_ref, &rec.mesh_tgt]);
            let m = self.cfg.canvas_margin;
            c.offset += Vec2::new(m, m);
            c.width += (2.0 * m).ceil() as usize;
            c.height += (2.0 * m).ceil() as usize;
            c
        });

        let (mut mesh_ref, mut mesh_tgt) = (rec.mesh_ref.clone(), rec.mesh_tgt.clone());
        let (mut s_ref, mut s_tgt) = (rec.s_ref.clone(), rec.s_tgt.clone());
        let mut terms = None;
        let mut evaluations = 0;
        let mut smoothed = false;
        if t >= n {
            let recs: Vec<FrameRecord> = self.records.iter().cloned().collect();
            let align = AlignFrames::new(reference, target);
            let step = timed(&mut self.times.smoothing, || {
                build_window(t, n, &self.spec, &recs, self.smoother.committed(), Some(align))
                    .and_then(|w| self.smoother.step(&w))
            })
            .map_err(|e| e.at_frame(t))?;
            mesh_ref = step.mesh_ref;
            mesh_tgt = step.mesh_tgt;
            s_ref = step.s_ref;
            s_tgt = step.s_tgt;
            terms = Some(step.terms);
            evaluations = step.evaluations;
            smoothed = true;
        }
        let rendered = self.renderer.render(t, reference, target, &mesh_ref, &mesh_tgt, &canvas, &mut self.times);
        let (image, overlap, report) = match rendered {
            Err(e) if smoothed && matches!(e.root(), Error::FoldedMesh { .. }) => {
                warn!("frame {t}: smoothed mesh folds ({e}); rendering the raw meshes");
                mesh_ref = rec.mesh_ref.clone();
                mesh_tgt = rec.mesh_tgt.clone();
                self.renderer
                    .render(t, reference, target, &mesh_ref, &mesh_tgt, &canvas, &mut self.times)?
            }
            other => other?,
        };
        self.times.frames += 1;
        Ok(StitchedFrame {
            t,
            image,
            overlap,
            mesh_ref,
            mesh_tgt,
            s_ref,
            s_tgt,
            raw_s_ref: rec.s_ref,
            raw_s_tgt: rec.s_tgt,
            smoothed,
            terms,
            evaluations,
            report,
        })
    }
}

/// Run summary written as `report.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub mode: Mode,
    pub window: usize,
    /// Frames emitted with raw meshes before the first full window.
    pub startup_frames: usize,
    /// Frames whose motions fell back to the previous frame's.
    pub estimation_fallbacks: usize,
    pub video: VideoReport,
}

/// Per-run accumulator of emitted frames for the report.
#[derive(Default)]
struct ReportBuilder {
    frames: Vec<FrameReport>,
    emitted: Vec<GridField>,
    raw: Vec<GridField>,
    startup: usize,
}

impl ReportBuilder {
    /// Scores follow the target view only.
    fn push(&mut self, f: &StitchedFrame) {
        self.frames.push(f.report.clone());
        self.emitted.push(f.s_tgt.clone());
        self.raw.push(f.raw_s_tgt.clone());
        if !f.smoothed {
            self.startup += 1;
        }
    }

    fn finish(self, name: &str, cfg: &PipelineConfig, fallbacks: usize) -> RunReport {
        let alpha = &cfg.smoothing.weights.alpha;
        RunReport {
            mode: cfg.mode,
            window: cfg.window,
            startup_frames: self.startup,
            estimation_fallbacks: fallbacks,
            video: VideoReport::new(
                name.to_string(),
                self.frames,
                stability_score(&self.emitted, alpha),
                stability_score(&self.raw, alpha),
            ),
        }
    }
}

/// Where stitched frames go.
pub trait FrameSink {
    fn emit(&mut self, frame: &StitchedFrame) -> Result<()>;
}

/// Discards frames; used by `eval`.
pub struct NullSink;

impl FrameSink for NullSink {
    fn emit(&mut self, _: &StitchedFrame) -> Result<()> {
        Ok(())
    }
}

/// Writes `NNNNNN.png` files into a directory.
pub struct DirSink<'a>(pub &'a Path);

impl FrameSink for DirSink<'_> {
    fn emit(&mut self, f: &StitchedFrame) -> Result<()> {
        f.image.save_png(&self.0.join(crate::frame_name(f.t)))
    }
}

/// Collects frames in memory.
#[derive(Default)]
pub struct VecSink(pub Vec<StitchedFrame>);

impl FrameSink for VecSink {
    fn emit(&mut self, f: &StitchedFrame) -> Result<()> {
        self.0.push(f.clone());
        Ok(())
    }
}

/// Source of per-frame motions: estimated on the fly or read from a cache.
pub enum Motions<'a> {
    Estimate,
    Cached(&'a MeshCache),
}

/// Result of a full run.
pub struct RunOutput {
    pub report: RunReport,
    pub timings: Timings,
}

fn cached(cache: &MeshCache, t: usize, spec: &GridSpec, beta: f64) -> Result<MeshRecord> {
    if cache.spec != *spec {
        return Err(Error::ShapeMismatch {
            expected: format!("{}x{} grid on {:?}", spec.rows, spec.cols, spec.size),
            found: format!("{}x{} grid on {:?}", cache.spec.rows, cache.spec.cols, cache.spec.size),
        });
    }
    if cache.beta != PlaneFraction::new(beta)? {
        warn!("mesh cache was estimated with beta {}, configuration says {beta}", cache.beta.get());
    }
    cache
        .frames
        .get(t - 1)
        .cloned()
        .ok_or(Error::SchemaMismatch(format!("mesh cache has no frame {t}")))
}

/// Runs the configured mode over a frame sequence.
pub fn run(
    cfg: &PipelineConfig,
    pairs: &FramePairs,
    motions: Motions<'_>,
    sink: &mut dyn FrameSink,
    name: &str,
) -> Result<RunOutput> {
    cfg.validate()?;
    if pairs.size() != cfg.size() {
        return Err(Error::InvalidConfig(format!(
            "frames are {:?} but the working size is {:?}",
            pairs.size(),
            cfg.size()
        )));
    }
    if let Motions::Cached(c) = motions {
        if c.frames.len() != pairs.len() {
            return Err(Error::CountMismatch {
                reference: pairs.len(),
                target: c.frames.len(),
            });
        }
    }
    let out = match cfg.mode {
        Mode::Online => run_online(cfg, pairs, motions, sink, name),
        Mode::Offline => run_offline(cfg, pairs, motions, sink, name),
    }?;
    info!("stage timings ({} frames):\n{}", out.timings.frames, out.timings.table());
    Ok(out)
}

type Item = Result<(Image, Image, MeshRecord)>;

/// Decodes and estimates ahead of the consumer on a bounded queue of depth `N`.
/// Returns the estimation time and the number of fallback frames.
fn produce(
    cfg: &PipelineConfig,
    pairs: &FramePairs,
    motions: &Motions<'_>,
    tx: crossbeam_channel::Sender<Item>,
) -> (Duration, usize) {
    let spec = cfg.grid_spec();
    let mut estimator = MotionEstimator::new(spec, cfg.estimator());
    let mut elapsed = Duration::ZERO;
    for i in 0..pairs.len() {
        let t = i + 1;
        let item = pairs.get(i).map_err(|e| e.at_frame(t)).and_then(|(a, b)| {
            let m = match motions {
                Motions::Estimate => timed(&mut elapsed, || estimator.next(&a, &b))?,
                Motions::Cached(c) => cached(c, t, &spec, cfg.beta)?,
            };
            Ok((a, b, m))
        });
        let stop = item.is_err();
        if tx.send(item).is_err() || stop {
            break;
        }
    }
    (elapsed, estimator.fallbacks())
}

fn run_online(
    cfg: &PipelineConfig,
    pairs: &FramePairs,
    motions: Motions<'_>,
    sink: &mut dyn FrameSink,
    name: &str,
) -> Result<RunOutput> {
    let mut stitcher = OnlineStitcher::new(cfg.clone())?;
    let mut report = ReportBuilder::default();
    let (tx, rx) = crossbeam_channel::bounded::<Item>(cfg.window);
    let (est_time, fallbacks) = std::thread::scope(|scope| -> Result<(Duration, usize)> {
        let producer = scope.spawn(|| produce(cfg, pairs, &motions, tx));
        let consumed = (|| -> Result<()> {
            for item in rx.iter() {
                let (a, b, m) = item?;
                let f = stitcher.push_motions(&m, &a, &b)?;
                sink.emit(&f).map_err(|e| e.at_frame(f.t))?;
                report.push(&f);
            }
            Ok(())
        })();
        // unblock the producer before joining it
        drop(rx);
        let stats = producer.join().expect("producer thread panicked");
        consumed.map(|_| stats)
    })?;
    let mut timings = *stitcher.timings();
    timings.estimation += est_time;
    Ok(RunOutput {
        report: report.finish(name, cfg, fallbacks),
        timings,
    })
}

fn run_offline(
    cfg: &PipelineConfig,
    pairs: &FramePairs,
    motions: Motions<'_>,
    sink: &mut dyn FrameSink,
    name: &str,
) -> Result<RunOutput> {
    let spec = cfg.grid_spec();
    let mut times = Timings::default();
    let mut estimator = MotionEstimator::new(spec, cfg.estimator());
    let mut builder = TrajectoryBuilder::new(spec);
    let mut records = Vec::with_capacity(pairs.len());
    for i in 0..pairs.len() {
        let t = i + 1;
        let m = match &motions {
            Motions::Estimate => {
                let (a, b) = pairs.get(i).map_err(|e| e.at_frame(t))?;
                timed(&mut times.estimation, || estimator.next(&a, &b))?
            }
            Motions::Cached(c) => cached(c, t, &spec, cfg.beta)?,
        };
        records.push(timed(&mut times.trajectory, || builder.push(&m)).map_err(|e| e.at_frame(t))?);
    }
    let smooth = timed(&mut times.smoothing, || {
        smooth_offline(&records, &spec, &cfg.smoothing, &cfg.optimizer)
    })?;
    let all: Vec<&Mesh> = smooth.mesh_ref.iter().chain(&smooth.mesh_tgt).collect();
    let canvas = canvas_extent(&all);
    let renderer = Renderer::new(spec, cfg.smoothing.distortion);
    let mut report = ReportBuilder::default();
    for (i, rec) in records.iter().enumerate() {
        let t = i + 1;
        let (a, b) = pairs.get(i).map_err(|e| e.at_frame(t))?;
        let (mut mr, mut mt) = (&smooth.mesh_ref[i], &smooth.mesh_tgt[i]);
        let (image, overlap, rep) = match renderer.render(t, &a, &b, mr, mt, &canvas, &mut times) {
            Err(e) if matches!(e.root(), Error::FoldedMesh { .. }) => {
                warn!("frame {t}: smoothed mesh folds ({e}); rendering the raw meshes");
                mr = &rec.mesh_ref;
                mt = &rec.mesh_tgt;
                renderer.render(t, &a, &b, mr, mt, &canvas, &mut times)?
            }
            other => other?,
        };
        times.frames += 1;
        let f = StitchedFrame {
            t,
            image,
            overlap,
            mesh_ref: mr.clone(),
            mesh_tgt: mt.clone(),
            s_ref: smooth.s_ref[i].clone(),
            s_tgt: smooth.s_tgt[i].clone(),
            raw_s_ref: rec.s_ref.clone(),
            raw_s_tgt: rec.s_tgt.clone(),
            smoothed: true,
            terms: None,
            evaluations: 0,
            report: rep,
        };
        sink.emit(&f).map_err(|e| e.at_frame(t))?;
        report.push(&f);
    }
    Ok(RunOutput {
        report: report.finish(name, cfg, estimator.fallbacks()),
        timings: times,
    })
}

/// Estimates motions for every frame pair.
pub fn estimate_all(cfg: &PipelineConfig, pairs: &FramePairs) -> Result<MeshCache> {
    cfg.validate()?;
    let spec = cfg.grid_spec();
    let mut estimator = MotionEstimator::new(spec, cfg.estimator());
    let mut frames = Vec::with_capacity(pairs.len());
    for (i, pair) in pairs.iter().enumerate() {
        let (a, b) = pair.map_err(|e| e.at_frame(i + 1))?;
        frames.push(estimator.next(&a, &b)?);
    }
    Ok(MeshCache {
        spec,
        beta: PlaneFraction::new(cfg.beta)?,
        frames,
    })
}

/// Sizes the global worker pool from the configured thread budget and returns
/// the number of workers. Only the first call in a process takes effect.
pub fn configure_threads(cfg: &PipelineConfig) -> Result<usize> {
    let threads = cfg.thread_budget()?;
    if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(threads).build_global() {
        log::debug!("worker pool already configured: {e}");
    }
    Ok(rayon::current_num_threads())
}
