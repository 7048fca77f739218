use nalgebra::{Matrix3, SMatrix, SVector};
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::geometry::{Homography, ImageSize, Vec2};

use super::{Correspondence, EstimatorConfig};

const CONFIDENCE: f64 = 0.999;

/// Similarity normalization: centroid to origin, mean distance sqrt(2).
fn normalizer(pts: &[Vec2]) -> Matrix3<f64> {
    let n = pts.len() as f64;
    let c = pts.iter().sum::<Vec2>() / n;
    let mean = pts.iter().map(|p| (p - c).norm()).sum::<f64>() / n;
    let s = if mean > 0.0 {
        std::f64::consts::SQRT_2 / mean
    } else {
        1.0
    };
    Matrix3::new(s, 0.0, -s * c.x, 0.0, s, -s * c.y, 0.0, 0.0, 1.0)
}

/// Normalized DLT fit of `H` with `H src ≈ dst`, least squares for n > 4.
pub fn fit_dlt(src: &[Vec2], dst: &[Vec2], size: ImageSize) -> Result<Homography> {
    if src.len() < 4 || src.len() != dst.len() {
        return Err(Error::DegenerateCorrespondences(format!(
            "need at least 4 matches, got {}",
            src.len()
        )));
    }
    let ts = normalizer(src);
    let td = normalizer(dst);
    let mut ata = SMatrix::<f64, 9, 9>::zeros();
    for (p, q) in src.iter().zip(dst) {
        let a = ts * nalgebra::Vector3::new(p.x, p.y, 1.0);
        let b = td * nalgebra::Vector3::new(q.x, q.y, 1.0);
        let r1 = SVector::<f64, 9>::from_row_slice(&[
            0.0, 0.0, 0.0, -a.x, -a.y, -1.0, b.y * a.x, b.y * a.y, b.y,
        ]);
        let r2 = SVector::<f64, 9>::from_row_slice(&[
            a.x, a.y, 1.0, 0.0, 0.0, 0.0, -b.x * a.x, -b.x * a.y, -b.x,
        ]);
        ata += r1 * r1.transpose() + r2 * r2.transpose();
    }
    let eig = ata.symmetric_eigen();
    let mut order: Vec<usize> = (0..9).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]));
    let (lo, next) = (eig.eigenvalues[order[0]], eig.eigenvalues[order[1]]);
    // a second (near-)null direction means the solution is not unique
    if next <= 1e-12 * eig.eigenvalues[order[8]].max(1e-300) || lo > next {
        return Err(Error::DegenerateCorrespondences(
            "correspondences do not determine a unique homography".into(),
        ));
    }
    let h = eig.eigenvectors.column(order[0]);
    let hn = Matrix3::new(h[0], h[1], h[2], h[3], h[4], h[5], h[6], h[7], h[8]);
    let td_inv = td.try_inverse().ok_or(Error::SingularMatrix)?;
    Homography::from_matrix(td_inv * hn * ts, size)
        .map_err(|_| Error::DegenerateCorrespondences("fitted homography is singular".into()))
}

fn reprojection(h: &Homography, c: &Correspondence) -> f64 {
    h.apply(c.p).map_or(f64::INFINITY, |q| (q - c.q).norm())
}

fn collinear_sample(pts: &[Vec2]) -> bool {
    for i in 0..pts.len() {
        for j in i + 1..pts.len() {
            for k in j + 1..pts.len() {
                let a = pts[j] - pts[i];
                let b = pts[k] - pts[i];
                if (a.x * b.y - a.y * b.x).abs() <= 1e-6 * a.norm() * b.norm() + 1e-9 {
                    return true;
                }
            }
        }
    }
    false
}

/// Robust homography with `H p ≈ q`; returns the model and its inlier mask.
pub fn ransac_homography(
    corrs: &[Correspondence],
    cfg: &EstimatorConfig,
    size: ImageSize,
) -> Result<(Homography, Vec<bool>)> {
    let n = corrs.len();
    if n < 4 {
        return Err(Error::DegenerateCorrespondences(format!(
            "need at least 4 matches, got {n}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let thr = cfg.ransac_inlier_px;
    let mut best: Option<(usize, f64, Homography)> = None;
    let mut max_iters = cfg.ransac_iters;
    let mut it = 0;
    while it < max_iters {
        it += 1;
        let idx = sample(&mut rng, n, 4);
        let src: Vec<Vec2> = idx.iter().map(|i| corrs[i].p).collect();
        let dst: Vec<Vec2> = idx.iter().map(|i| corrs[i].q).collect();
        if collinear_sample(&src) || collinear_sample(&dst) {
            continue;
        }
        let Ok(h) = fit_dlt(&src, &dst, size) else {
            continue;
        };
        let mut count = 0;
        let mut err = 0.0;
        for c in corrs {
            let e = reprojection(&h, c);
            if e <= thr {
                count += 1;
                err += e;
            }
        }
        let better = match &best {
            None => count >= 4,
            Some((bc, be, _)) => count > *bc || (count == *bc && err < *be),
        };
        if better {
            best = Some((count, err, h));
            let ratio = count as f64 / n as f64;
            let p_fail = 1.0 - ratio.powi(4);
            if p_fail <= 1e-12 {
                max_iters = it;
            } else {
                let need = ((1.0 - CONFIDENCE).ln() / p_fail.ln()).ceil();
                if need.is_finite() && (need as usize) < max_iters {
                    max_iters = (need as usize).max(it);
                }
            }
        }
    }
    let Some((count, _, mut h)) = best else {
        return Err(Error::NoConsensus {
            inliers: 0,
            required: cfg.min_inliers,
        });
    };
    if count < cfg.min_inliers {
        return Err(Error::NoConsensus {
            inliers: count,
            required: cfg.min_inliers,
        });
    }
    let mut mask: Vec<bool> = corrs.iter().map(|c| reprojection(&h, c) <= thr).collect();
    for _ in 0..2 {
        let src: Vec<Vec2> = corrs.iter().zip(&mask).filter(|(_, m)| **m).map(|(c, _)| c.p).collect();
        let dst: Vec<Vec2> = corrs.iter().zip(&mask).filter(|(_, m)| **m).map(|(c, _)| c.q).collect();
        match fit_dlt(&src, &dst, size) {
            Ok(refined) => {
                let new_mask: Vec<bool> = corrs.iter().map(|c| reprojection(&refined, c) <= thr).collect();
                if new_mask.iter().filter(|m| **m).count() < cfg.min_inliers {
                    break;
                }
                h = refined;
                let changed = new_mask != mask;
                mask = new_mask;
                if !changed {
                    break;
                }
            }
            Err(_) => break,
        }
    }
    Ok((h, mask))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Homography4pt;
    use rand::Rng;

    const SIZE: ImageSize = ImageSize::new(480, 360);

    fn known_h() -> Homography {
        Homography4pt {
            displacements: [
                Vec2::new(12.0, -5.0),
                Vec2::new(-7.0, 9.0),
                Vec2::new(4.0, 14.0),
                Vec2::new(-10.0, -3.0),
            ],
            size: SIZE,
        }
        .to_matrix()
        .unwrap()
    }

    fn corner_error(a: &Homography, b: &Homography) -> f64 {
        a.to_h4pt().unwrap().max_abs_difference(&b.to_h4pt().unwrap())
    }

    fn synth(n: usize, outlier_frac: f64, seed: u64) -> (Vec<Correspondence>, Vec<bool>) {
        let h = known_h();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut corrs = Vec::new();
        let mut truth = Vec::new();
        for i in 0..n {
            let p = Vec2::new(rng.gen_range(0.0..480.0), rng.gen_range(0.0..360.0));
            let outlier = (i as f64) < outlier_frac * n as f64;
            let q = if outlier {
                Vec2::new(rng.gen_range(0.0..480.0), rng.gen_range(0.0..360.0))
            } else {
                h.apply(p).unwrap()
            };
            corrs.push(Correspondence { p, q, score: 1.0 });
            truth.push(!outlier);
        }
        (corrs, truth)
    }

    #[test]
    fn exact_matches_recover_model() {
        let (corrs, _) = synth(50, 0.0, 1);
        let (h, mask) = ransac_homography(&corrs, &EstimatorConfig::default(), SIZE).unwrap();
        assert!(corner_error(&h, &known_h()) <= 0.5);
        assert!(mask.iter().all(|m| *m));
    }

    #[test]
    fn outliers_are_flagged() {
        let (corrs, truth) = synth(50, 0.3, 2);
        let (h, mask) = ransac_homography(&corrs, &EstimatorConfig::default(), SIZE).unwrap();
        assert!(corner_error(&h, &known_h()) <= 0.5);
        for ((m, t), c) in mask.iter().zip(&truth).zip(&corrs) {
            if *t {
                assert!(*m);
            } else if *m {
                // a random point may land on the model by chance
                assert!((h.apply(c.p).unwrap() - c.q).norm() <= 2.0);
            }
        }
    }

    #[test]
    fn collinear_matches_are_rejected() {
        let corrs: Vec<Correspondence> = (0..4)
            .map(|i| {
                let p = Vec2::new(10.0 * i as f64, 5.0 * i as f64);
                Correspondence { p, q: p, score: 1.0 }
            })
            .collect();
        let r = ransac_homography(&corrs, &EstimatorConfig::default(), SIZE);
        assert!(matches!(
            r,
            Err(Error::NoConsensus { .. }) | Err(Error::DegenerateCorrespondences(_))
        ));
    }

    #[test]
    fn deterministic_given_seed() {
        let (corrs, _) = synth(40, 0.4, 3);
        let cfg = EstimatorConfig::default();
        let a = ransac_homography(&corrs, &cfg, SIZE).unwrap();
        let b = ransac_homography(&corrs, &cfg, SIZE).unwrap();
        assert_eq!(a.0, b.0);
        assert_eq!(a.1, b.1);
    }
}
