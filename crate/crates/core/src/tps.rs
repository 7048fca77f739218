//! Thin-plate spline interpolation in the plane.
//!
//! The spline is fitted in a normalized frame (sites centered and scaled to
//! unit spread). The interpolant is the same function as the one fitted in
//! pixel units: rescaling the kernel only adds a multiple of `r²`, which the
//! side conditions turn into an affine term.

use nalgebra::{DMatrix, Matrix3, Vector3};

use crate::error::{Error, Result};
use crate::geometry::Vec2;

/// Thin-plate kernel `r² log r²`, with `U(0) = 0`. Takes the squared distance.
#[inline]
pub fn kernel(r2: f64) -> f64 {
    if r2 <= 0.0 {
        0.0
    } else {
        r2 * r2.ln()
    }
}

#[derive(Debug, Clone)]
pub struct TpsCoefficients {
    /// Affine part in the normalized frame: `f(p) = A [1, x', y'] + Σ w U(|p' - s'|²)`.
    affine: [Vector3<f64>; 2],
    weights: Vec<Vec2>,
    sites: Vec<Vec2>,
    center: Vec2,
    scale: f64,
}

impl TpsCoefficients {
    pub fn sites(&self) -> &[Vec2] {
        &self.sites
    }

    /// Kernel weights, in the units of the normalized frame.
    pub fn weights(&self) -> &[Vec2] {
        &self.weights
    }

    /// Affine part in pixel units as `(A, b)` with `f_affine(p) = A p + b`.
    pub fn affine_px(&self) -> (nalgebra::Matrix2<f64>, Vec2) {
        let s = 1.0 / self.scale;
        let [ax, ay] = &self.affine;
        let a = nalgebra::Matrix2::new(ax[1] * s, ax[2] * s, ay[1] * s, ay[2] * s);
        let b = Vec2::new(ax[0], ay[0]) - a * self.center;
        (a, b)
    }

    /// Residuals of the side conditions `Σ w` and `Σ w sᵀ`, in the normalized frame.
    pub fn side_condition_residual(&self) -> f64 {
        let mut sum = Vec2::zeros();
        let mut moment = nalgebra::Matrix2::<f64>::zeros();
        for (w, s) in self.weights.iter().zip(&self.sites) {
            let sn = (s - self.center) / self.scale;
            sum += w;
            moment += w * sn.transpose();
        }
        sum.abs().max().max(moment.abs().max())
    }

    pub fn eval(&self, p: Vec2) -> Vec2 {
        let pn = (p - self.center) / self.scale;
        let [ax, ay] = &self.affine;
        let mut out = Vec2::new(
            ax[0] + ax[1] * pn.x + ax[2] * pn.y,
            ay[0] + ay[1] * pn.x + ay[2] * pn.y,
        );
        let inv = 1.0 / self.scale;
        for (w, s) in self.weights.iter().zip(&self.sites) {
            let d = (p - s) * inv;
            out += w * kernel(d.norm_squared());
        }
        out
    }

    pub fn eval_many(&self, queries: &[Vec2]) -> Vec<Vec2> {
        queries.iter().map(|&q| self.eval(q)).collect()
    }
}

/// Fits the interpolating spline taking each site to its target.
pub fn tps_fit(sites: &[Vec2], targets: &[Vec2]) -> Result<TpsCoefficients> {
    let k = sites.len();
    if k < 3 || targets.len() != k {
        return Err(Error::SingularSystem);
    }
    let center = sites.iter().sum::<Vec2>() / k as f64;
    let scale = sites
        .iter()
        .map(|s| (s - center).norm())
        .fold(0.0, f64::max);
    if !(scale > 0.0 && scale.is_finite()) {
        return Err(Error::SingularSystem);
    }
    let norm: Vec<Vec2> = sites.iter().map(|s| (s - center) / scale).collect();

    // collinear sites leave the affine block rank-deficient
    let mut ptp = Matrix3::<f64>::zeros();
    for s in &norm {
        let row = Vector3::new(1.0, s.x, s.y);
        ptp += row * row.transpose();
    }
    let eig = ptp.symmetric_eigenvalues();
    let (lo, hi) = (eig.min(), eig.max());
    if lo <= 1e-12 * hi {
        return Err(Error::SingularSystem);
    }

    let n = k + 3;
    let mut a = DMatrix::<f64>::zeros(n, n);
    let mut rhs = DMatrix::<f64>::zeros(n, 2);
    for i in 0..k {
        for j in (i + 1)..k {
            let u = kernel((norm[i] - norm[j]).norm_squared());
            a[(i, j)] = u;
            a[(j, i)] = u;
        }
        a[(i, k)] = 1.0;
        a[(i, k + 1)] = norm[i].x;
        a[(i, k + 2)] = norm[i].y;
        a[(k, i)] = 1.0;
        a[(k + 1, i)] = norm[i].x;
        a[(k + 2, i)] = norm[i].y;
        rhs[(i, 0)] = targets[i].x;
        rhs[(i, 1)] = targets[i].y;
    }
    let sol = a.lu().solve(&rhs).ok_or(Error::SingularSystem)?;
    if !sol.iter().all(|v| v.is_finite()) {
        return Err(Error::SingularSystem);
    }
    let weights = (0..k).map(|i| Vec2::new(sol[(i, 0)], sol[(i, 1)])).collect();
    let affine = [
        Vector3::new(sol[(k, 0)], sol[(k + 1, 0)], sol[(k + 2, 0)]),
        Vector3::new(sol[(k, 1)], sol[(k + 1, 1)], sol[(k + 2, 1)]),
    ];
    Ok(TpsCoefficients {
        affine,
        weights,
        sites: sites.to_vec(),
        center,
        scale,
    })
}
