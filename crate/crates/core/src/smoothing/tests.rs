use super::*;
use crate::geometry::ImageSize;
use crate::mesh::distortion_energy;
use crate::synth::texture;
use crate::trajectory::AlignFrames;
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn spec() -> GridSpec {
    GridSpec::new(3, 4, ImageSize::new(120, 90)).unwrap()
}

fn jitter(rng: &mut ChaCha8Rng, s: &GridSpec, amp: f64) -> GridField {
    let data = (0..s.len())
        .map(|_| Vec2::new(rng.gen_range(-amp..amp), rng.gen_range(-amp..amp)))
        .collect();
    GridField::from_vec(s, data).unwrap()
}

/// Records for frames `1..=len` with shaky paths and overlapping meshes: the
/// target mesh is the rigid mesh shifted left by `shift` px.
fn records(s: &GridSpec, len: usize, seed: u64, shift: f64) -> Vec<FrameRecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rig = rigid_mesh(s);
    let mut sr = GridField::zeros_like(s);
    let mut st = GridField::zeros_like(s);
    (1..=len)
        .map(|t| {
            sr += &jitter(&mut rng, s, 2.0);
            st += &jitter(&mut rng, s, 2.0);
            let off = GridField::filled(s, Vec2::new(-shift, 0.0));
            FrameRecord {
                t,
                s_ref: sr.clone(),
                s_tgt: st.clone(),
                mesh_ref: &rig + &jitter(&mut rng, s, 1.0),
                mesh_tgt: &(&rig + &off) + &jitter(&mut rng, s, 1.0),
            }
        })
        .collect()
}

fn window(n: usize, seed: u64) -> TrajectoryWindow {
    let s = spec();
    build_window(n, n, &s, &records(&s, n, seed, 40.0), None, None).unwrap()
}

fn only(f: impl FnOnce(&mut SmoothingWeights)) -> SmoothingConfig {
    let mut weights = SmoothingWeights::zero();
    f(&mut weights);
    SmoothingConfig {
        weights,
        ..SmoothingConfig::default()
    }
}

fn random_delta(w: &TrajectoryWindow, seed: u64, amp: f64) -> SmoothingIncrement {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    SmoothingIncrement {
        d_ref: (0..w.n).map(|_| jitter(&mut rng, &w.spec, amp)).collect(),
        d_tgt: (0..w.n).map(|_| jitter(&mut rng, &w.spec, amp)).collect(),
    }
}

#[test]
fn defaults_validate() {
    SmoothingConfig::default().validate(7).unwrap();
    assert!(SmoothingConfig::default().validate(5).is_err());
    assert!(SmoothingConfig::default().validate(6).is_err());
    let mut c = SmoothingConfig::default();
    c.weights.smooth = -1.0;
    assert!(c.validate(7).is_err());
}

#[test]
fn data_term_of_uniform_unit_increment() {
    let w = window(7, 1);
    let mut d = SmoothingIncrement::zeros(7, &w.spec);
    for f in d.d_ref.iter_mut().chain(d.d_tgt.iter_mut()) {
        *f = GridField::filled(&w.spec, Vec2::new(1.0, 0.0));
    }
    let t = loss_total(&d, &w, &only(|x| x.data = 1.0), Mode::Offline);
    assert!((t.data - (2 * 7 * w.spec.len()) as f64).abs() < 1e-12);
    assert!((t.total - t.data).abs() < 1e-12);
}

#[test]
fn data_term_is_homogeneous() {
    let w = window(7, 2);
    let d = random_delta(&w, 3, 3.0);
    let mut d2 = d.clone();
    for f in d2.d_ref.iter_mut().chain(d2.d_tgt.iter_mut()) {
        *f = &*f * 2.5;
    }
    let cfg = only(|x| x.data = 1.0);
    let a = loss_total(&d, &w, &cfg, Mode::Offline).data;
    let b = loss_total(&d2, &w, &cfg, Mode::Offline).data;
    assert!((b - 2.5 * a).abs() < 1e-9 * b);
}

#[test]
fn smoothness_of_a_sinusoid() {
    let s = spec();
    let n = 7;
    let (amp, om) = (3.0, 0.7);
    let path = |t: usize| amp * (om * t as f64).sin();
    let recs: Vec<FrameRecord> = (1..=n)
        .map(|t| FrameRecord {
            t,
            s_ref: GridField::filled(&s, Vec2::new(path(t), 0.0)),
            s_tgt: GridField::filled(&s, Vec2::new(0.0, path(t))),
            mesh_ref: rigid_mesh(&s),
            mesh_tgt: rigid_mesh(&s),
        })
        .collect();
    let w = build_window(n, n, &s, &recs, None, None).unwrap();
    let cfg = only(|x| x.smooth = 1.0);
    let t = loss_total(&SmoothingIncrement::zeros(n, &s), &w, &cfg, Mode::Offline);
    // centred second difference of A sin(ωt) at distance d is 2A sin(ωc)(cos(ωd) - 1)
    let c = 3 + 1;
    let expected: f64 = cfg
        .weights
        .alpha
        .iter()
        .enumerate()
        .map(|(i, a)| {
            let d = (i + 1) as f64;
            a * (2.0 * amp * (om * c as f64).sin() * ((om * d).cos() - 1.0)).abs()
        })
        .sum::<f64>()
        * 2.0
        * s.len() as f64;
    assert!((t.smooth - expected).abs() < 1e-9, "{} vs {expected}", t.smooth);
}

#[test]
fn shape_term_is_mean_distortion_of_smooth_meshes() {
    let w = window(7, 4);
    let d = random_delta(&w, 5, 2.0);
    let cfg = only(|x| x.shape = 1.0);
    let t = loss_total(&d, &w, &cfg, Mode::Offline);
    let rig = rigid_mesh(&w.spec);
    let mut expected = 0.0;
    for k in 0..7 {
        for (m, dd) in [(&w.mesh_ref[k], &d.d_ref[k]), (&w.mesh_tgt[k], &d.d_tgt[k])] {
            let motion = &(m - dd) - &rig;
            expected += distortion_energy(&motion, &w.spec, cfg.distortion) / 7.0;
        }
    }
    assert!((t.shape - expected).abs() < 1e-9 * expected.max(1.0));
}

#[test]
fn online_term_of_uniform_offset() {
    let s = spec();
    let recs = records(&s, 8, 6, 40.0);
    let w0 = build_window(7, 7, &s, &recs, None, None).unwrap();
    let off = Vec2::new(0.6, -0.8);
    let committed = Committed {
        xi: 7,
        s_ref: (0..7).map(|t| &(&w0.s_ref[t] + &w0.base_ref) + &GridField::filled(&s, off)).collect(),
        s_tgt: (0..7).map(|t| &(&w0.s_tgt[t] + &w0.base_tgt) + &GridField::filled(&s, off)).collect(),
    };
    let w = build_window(8, 7, &s, &recs, Some(&committed), None).unwrap();
    assert!(w.history.is_some());
    let t = loss_total(&SmoothingIncrement::zeros(7, &s), &w, &only(|x| x.online = 1.0), Mode::Online);
    assert!((t.online - 2.0 * s.len() as f64).abs() < 1e-9, "{}", t.online);
    let t = loss_total(&SmoothingIncrement::zeros(7, &s), &w, &only(|x| x.online = 1.0), Mode::Offline);
    assert_eq!(t.total, 0.0);
}

fn bilinear(f: &GridField, s: &GridSpec, p: Vec2) -> Vec2 {
    let sp = s.spacing();
    let u = (p.x / sp.x).clamp(0.0, (s.cols - 1) as f64);
    let v = (p.y / sp.y).clamp(0.0, (s.rows - 1) as f64);
    let c = (u.floor() as usize).min(s.cols - 2);
    let r = (v.floor() as usize).min(s.rows - 2);
    let (a, b) = (u - c as f64, v - r as f64);
    f.get(r, c) * ((1.0 - a) * (1.0 - b))
        + f.get(r, c + 1) * (a * (1.0 - b))
        + f.get(r + 1, c) * ((1.0 - a) * b)
        + f.get(r + 1, c + 1) * (a * b)
}

#[test]
fn trajectory_term_matches_brute_force_on_translated_meshes() {
    let s = spec();
    let n = 3;
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let shift = 40.0;
    let rig = rigid_mesh(&s);
    let recs: Vec<FrameRecord> = (1..=n)
        .map(|t| FrameRecord {
            t,
            s_ref: if t == 1 { GridField::zeros_like(&s) } else { jitter(&mut rng, &s, 4.0) },
            s_tgt: if t == 1 { GridField::zeros_like(&s) } else { jitter(&mut rng, &s, 4.0) },
            mesh_ref: rig.clone(),
            mesh_tgt: &rig + &GridField::filled(&s, Vec2::new(shift, 0.0)),
        })
        .collect();
    let w = build_window(n, n, &s, &recs, None, None).unwrap();
    let t = loss_total(&SmoothingIncrement::zeros(n, &s), &w, &only(|x| x.trajectory = 1.0), Mode::Offline);
    // canvas point q is source q in the reference view and q - shift in the target
    let mut expected = 0.0;
    for k in 0..n {
        let (mut sum, mut count) = (0.0, 0);
        let mut y = 0.0;
        while y <= 90.0 {
            let mut x = 40.0;
            while x <= 120.0 {
                let q = Vec2::new(x, y);
                let d = bilinear(&w.s_ref[k], &s, q) - bilinear(&w.s_tgt[k], &s, q - Vec2::new(shift, 0.0));
                sum += d.x.abs() + d.y.abs();
                count += 1;
                x += 4.0;
            }
            y += 4.0;
        }
        expected += sum / count as f64 / n as f64;
    }
    assert!((t.trajectory - expected).abs() < 1e-9, "{} vs {expected}", t.trajectory);
    assert!(!t.empty_overlap);
}

#[test]
fn disjoint_meshes_report_empty_overlap() {
    let s = spec();
    let w = build_window(3, 3, &s, &records(&s, 3, 9, 500.0), None, None).unwrap();
    let t = loss_total(&SmoothingIncrement::zeros(3, &s), &w, &only(|x| x.trajectory = 1.0), Mode::Offline);
    assert!(t.empty_overlap);
    assert_eq!(t.trajectory, 0.0);
}

fn fd_check(w: &TrajectoryWindow, cfg: &SmoothingConfig, mode: Mode, d: &SmoothingIncrement, rel: f64) {
    let obj = Objective::new(w, cfg, mode);
    let x = d.flatten();
    let mut g = vec![Vec2::zeros(); x.len()];
    obj.value_and_grad(&x, &mut g);
    let eps = 1e-6;
    let mut num = vec![Vec2::zeros(); x.len()];
    for i in 0..x.len() {
        for c in 0..2 {
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[i][c] += eps;
            xm[i][c] -= eps;
            num[i][c] = (obj.evaluate(&xp, None).total - obj.evaluate(&xm, None).total) / (2.0 * eps);
        }
    }
    let diff: f64 = g.iter().zip(&num).map(|(a, b)| (a - b).norm_squared()).sum::<f64>().sqrt();
    let scale: f64 = num.iter().map(|v| v.norm_squared()).sum::<f64>().sqrt();
    assert!(scale > 0.0);
    assert!(diff <= rel * scale, "gradient error {diff} vs norm {scale}");
}

#[test]
fn smooth_terms_match_finite_differences() {
    let w = window(7, 10);
    let d = random_delta(&w, 11, 1.5);
    for norm in [NormKind::Euclidean, NormKind::Squared] {
        for set in [
            (|x: &mut SmoothingWeights| x.data = 1.0) as fn(&mut SmoothingWeights),
            |x| x.smooth = 1.0,
            |x| x.shape = 1.0,
        ] {
            let mut cfg = only(set);
            cfg.norm = norm;
            fd_check(&w, &cfg, Mode::Offline, &d, 1e-6);
        }
    }
}

#[test]
fn online_term_matches_finite_differences() {
    let s = spec();
    let recs = records(&s, 8, 12, 40.0);
    let w0 = build_window(7, 7, &s, &recs, None, None).unwrap();
    let committed = Committed {
        xi: 7,
        s_ref: w0.s_ref.iter().map(|x| x + &w0.base_ref).collect(),
        s_tgt: w0.s_tgt.iter().map(|x| x + &w0.base_tgt).collect(),
    };
    let w = build_window(8, 7, &s, &recs, Some(&committed), None).unwrap();
    fd_check(&w, &only(|x| x.online = 1.0), Mode::Online, &random_delta(&w, 13, 1.0), 1e-6);
}

#[test]
fn dense_terms_match_finite_differences() {
    let w = window(3, 14);
    let d = random_delta(&w, 15, 1.0);
    fd_check(&w, &only(|x| x.trajectory = 1.0), Mode::Offline, &d, 1e-3);

    let s = spec();
    let img = texture(120, 90, 3);
    let mut w = build_window(3, 3, &s, &records(&s, 3, 16, 40.0), None, None).unwrap();
    w.align = Some(AlignFrames::new(&img, &img));
    fd_check(&w, &only(|x| x.align = 1.0), Mode::Online, &random_delta(&w, 17, 1.0), 2e-2);
}

#[test]
fn quadratic_window_reaches_the_closed_form_minimum() {
    let s = GridSpec::new(3, 3, ImageSize::new(64, 64)).unwrap();
    let n = 7;
    let mut rng = ChaCha8Rng::seed_from_u64(18);
    let recs: Vec<FrameRecord> = (1..=n)
        .map(|t| FrameRecord {
            t,
            s_ref: jitter(&mut rng, &s, 5.0),
            s_tgt: jitter(&mut rng, &s, 5.0),
            mesh_ref: rigid_mesh(&s),
            mesh_tgt: rigid_mesh(&s),
        })
        .collect();
    let w = build_window(n, n, &s, &recs, None, None).unwrap();
    let mut cfg = only(|x| {
        x.data = 1.0;
        x.smooth = 4.0;
    });
    cfg.norm = NormKind::Squared;
    let opt = OptimizerConfig {
        tolerance: 0.0,
        ..OptimizerConfig::default()
    };
    let sol = smooth_window(&w, &cfg, &opt, Mode::Offline, None, 20000);

    // Every coordinate is an independent quadratic: (I + w DᵀAD) Δ = -w DᵀAD S.
    let mut q = DMatrix::<f64>::identity(n, n);
    let c = 3;
    for (i, a) in cfg.weights.alpha.iter().enumerate() {
        let mut row = DMatrix::<f64>::zeros(1, n);
        row[(0, c + i + 1)] = 1.0;
        row[(0, c - i - 1)] = 1.0;
        row[(0, c)] = -2.0;
        q += row.transpose() * &row * (cfg.weights.smooth * a);
    }
    let lu = q.clone().lu();
    for (paths, delta) in [(&w.s_ref, &sol.delta.d_ref), (&w.s_tgt, &sol.delta.d_tgt)] {
        for k in 0..s.len() {
            for comp in 0..2 {
                let sv = DMatrix::from_fn(n, 1, |t, _| paths[t].data[k][comp]);
                let rhs = -((&q - DMatrix::<f64>::identity(n, n)) * sv);
                let exact = lu.solve(&rhs).unwrap();
                for t in 0..n {
                    let got = delta[t].data[k][comp];
                    assert!((got - exact[(t, 0)]).abs() < 1e-6, "{got} vs {}", exact[(t, 0)]);
                }
            }
        }
    }
}

#[test]
fn data_only_keeps_raw_paths() {
    let w = window(7, 19);
    let sol = smooth_window(&w, &only(|x| x.data = 1.0), &OptimizerConfig::default(), Mode::Offline, None, 60);
    assert!(sol.delta.d_ref.iter().chain(&sol.delta.d_tgt).all(|f| f.max_abs() == 0.0));
    assert_eq!(sol.evaluations, 1);
}

#[test]
fn smoothing_lowers_the_smoothness_loss_and_preserves_duality() {
    let w = window(7, 20);
    let cfg = SmoothingConfig::default();
    let zero = SmoothingIncrement::zeros(7, &w.spec);
    let before = loss_total(&zero, &w, &cfg, Mode::Offline);
    let sol = smooth_window(&w, &cfg, &OptimizerConfig::default(), Mode::Offline, None, 200);
    assert!(sol.terms.total < before.total);
    assert!(sol.terms.smooth < before.smooth);
    let sm = apply_increment(&w, &sol.delta);
    for t in 0..7 {
        let lhs = &sm.s_ref[t] + &sm.mesh_ref[t];
        let rhs = &w.s_ref[t] + &w.mesh_ref[t];
        assert!((&lhs - &rhs).max_abs() < 1e-9);
    }
}

#[test]
fn shifted_warm_start_repeats_the_last_frame() {
    let w = window(7, 21);
    let d = random_delta(&w, 22, 1.0);
    let sh = d.shifted();
    assert_eq!(sh.len(), 7);
    assert_eq!(sh.d_ref[0], d.d_ref[1]);
    assert_eq!(sh.d_ref[6], d.d_ref[6]);
    assert_eq!(sh.d_tgt[5], d.d_tgt[6]);
}

#[test]
fn online_smoother_commits_absolute_paths() {
    let s = spec();
    let recs = records(&s, 10, 23, 40.0);
    let mut sm = OnlineSmoother::new(SmoothingConfig::default(), OptimizerConfig::default(), 7).unwrap();
    let mut emitted = Vec::new();
    for xi in 7..=10 {
        let w = build_window(xi, 7, &s, &recs, sm.committed(), None).unwrap();
        assert_eq!(w.history.is_some(), xi > 7);
        let step = sm.step(&w).unwrap();
        let c = sm.committed().unwrap();
        assert_eq!(c.xi, xi);
        assert_eq!(step.s_ref, c.s_ref[6]);
        // duality in absolute coordinates for the emitted frame
        let raw = &recs[xi - 1];
        let lhs = &step.s_ref + &step.mesh_ref;
        let rhs = &raw.s_ref + &raw.mesh_ref;
        assert!((&lhs - &rhs).max_abs() < 1e-9);
        emitted.push(step);
    }
    assert_eq!(emitted.len(), 4);
    let w = build_window(9, 7, &s, &recs, None, None).unwrap();
    assert!(sm.step(&build_window(9, 5, &s, &recs, None, None).unwrap()).is_err());
    assert!(w.history.is_none());
}

#[test]
fn offline_pads_short_sequences() {
    let s = spec();
    for len in [1, 2, 4, 9] {
        let recs = records(&s, len, 24, 40.0);
        let r = smooth_offline(&recs, &s, &SmoothingConfig::default(), &OptimizerConfig::default()).unwrap();
        assert_eq!(r.s_ref.len(), len);
        assert_eq!(r.mesh_tgt.len(), len);
        for t in 0..len {
            let lhs = &r.s_tgt[t] + &r.mesh_tgt[t];
            let rhs = &recs[t].s_tgt + &recs[t].mesh_tgt;
            assert!((&lhs - &rhs).max_abs() < 1e-9);
        }
    }
    assert!(smooth_offline(&[], &s, &SmoothingConfig::default(), &OptimizerConfig::default()).is_err());
}
