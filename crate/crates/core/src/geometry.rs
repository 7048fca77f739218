//! Planar homographies in matrix and four-corner form, and the split of one
//! homography into two halves that meet on a virtual intermediate plane.
//!
//! Homographies here act on points. The inter-view homography `H` maps a
//! reference-frame point to the target-frame point that shows the same scene
//! content, so sampling the target image at `H(x)` aligns it with the
//! reference. Splitting `H` yields `H_ref` and `H_tgt`, both mapping the
//! virtual plane into their source frames, with `H · H_ref = H_tgt`.

use nalgebra::{Matrix3, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Vec2 = Vector2<f64>;

const SINGULAR_DET: f64 = 1e-12;
const INFINITY_DEPTH: f64 = 1e-9;
const COLLINEAR_PX: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ImageSize {
    pub width: u32,
    pub height: u32,
}

impl ImageSize {
    pub const fn new(width: u32, height: u32) -> Self {
        Self { width, height }
    }

    /// Corners in top-left, top-right, bottom-left, bottom-right order.
    pub fn corners(&self) -> [Vec2; 4] {
        let (w, h) = (self.width as f64, self.height as f64);
        [
            Vec2::new(0.0, 0.0),
            Vec2::new(w, 0.0),
            Vec2::new(0.0, h),
            Vec2::new(w, h),
        ]
    }
}

/// A 3x3 homography kept in canonical form: unit Frobenius norm, `h33 >= 0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Homography {
    m: Matrix3<f64>,
    size: ImageSize,
}

/// Four-corner parameterization: displacement of each image corner.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Homography4pt {
    pub displacements: [Vec2; 4],
    pub size: ImageSize,
}

/// Position of the virtual plane between the two views: 0 keeps the target
/// view fixed, 1 keeps the reference view fixed, 0.5 is the mid-plane.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct PlaneFraction(f64);

impl PlaneFraction {
    pub const MID: PlaneFraction = PlaneFraction(0.5);

    pub fn new(beta: f64) -> Result<Self> {
        if (0.0..=1.0).contains(&beta) {
            Ok(Self(beta))
        } else {
            Err(Error::InvalidConfig(format!(
                "plane fraction must lie in [0, 1], got {beta}"
            )))
        }
    }

    pub fn get(self) -> f64 {
        self.0
    }
}

impl Default for PlaneFraction {
    fn default() -> Self {
        Self::MID
    }
}

impl TryFrom<f64> for PlaneFraction {
    type Error = Error;
    fn try_from(v: f64) -> Result<Self> {
        Self::new(v)
    }
}

impl From<PlaneFraction> for f64 {
    fn from(p: PlaneFraction) -> f64 {
        p.0
    }
}

fn canonicalize(m: &Matrix3<f64>) -> Matrix3<f64> {
    let norm = m.norm();
    let mut c = m / norm;
    let sign_ref = if c[(2, 2)] != 0.0 {
        c[(2, 2)]
    } else {
        // h33 == 0: fall back to the last nonzero entry in row-major order
        c.transpose().iter().rev().copied().find(|v| *v != 0.0).unwrap_or(1.0)
    };
    if sign_ref < 0.0 {
        c = -c;
    }
    c
}

impl Homography {
    /// Builds a canonical homography. Fails with `SingularMatrix` when the
    /// normalized determinant vanishes or the matrix is not finite.
    pub fn from_matrix(m: Matrix3<f64>, size: ImageSize) -> Result<Self> {
        if !m.iter().all(|v| v.is_finite()) || m.norm() == 0.0 {
            return Err(Error::SingularMatrix);
        }
        let c = canonicalize(&m);
        if c.determinant().abs() <= SINGULAR_DET {
            return Err(Error::SingularMatrix);
        }
        Ok(Self { m: c, size })
    }

    pub fn identity(size: ImageSize) -> Self {
        Self::from_matrix(Matrix3::identity(), size).expect("identity is regular")
    }

    pub fn translation(tx: f64, ty: f64, size: ImageSize) -> Self {
        let m = Matrix3::new(1.0, 0.0, tx, 0.0, 1.0, ty, 0.0, 0.0, 1.0);
        Self::from_matrix(m, size).expect("translation is regular")
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.m
    }

    pub fn size(&self) -> ImageSize {
        self.size
    }

    /// `self ∘ rhs`: applying the result equals applying `rhs` then `self`.
    pub fn compose(&self, rhs: &Homography) -> Result<Homography> {
        Homography::from_matrix(self.m * rhs.m, self.size)
    }

    pub fn invert(&self) -> Result<Homography> {
        let inv = self.m.try_inverse().ok_or(Error::SingularMatrix)?;
        Homography::from_matrix(inv, self.size)
    }

    pub fn apply(&self, p: Vec2) -> Result<Vec2> {
        let v = self.m * Vector3::new(p.x, p.y, 1.0);
        if v.z.abs() <= INFINITY_DEPTH {
            return Err(Error::CornerAtInfinity);
        }
        Ok(Vec2::new(v.x / v.z, v.y / v.z))
    }

    /// Frobenius distance between canonical forms.
    pub fn distance(&self, other: &Homography) -> f64 {
        (self.m - other.m).norm()
    }

    pub fn to_h4pt(&self) -> Result<Homography4pt> {
        let corners = self.size.corners();
        let mut displacements = [Vec2::zeros(); 4];
        for (d, c) in displacements.iter_mut().zip(corners) {
            *d = self.apply(c)? - c;
        }
        Ok(Homography4pt {
            displacements,
            size: self.size,
        })
    }
}

fn collinear(a: Vec2, b: Vec2, c: Vec2) -> bool {
    let ab = b - a;
    let len = ab.norm();
    if len <= COLLINEAR_PX {
        return true;
    }
    let ac = c - a;
    (ab.x * ac.y - ab.y * ac.x).abs() / len <= COLLINEAR_PX
}

impl Homography4pt {
    pub fn zero(size: ImageSize) -> Self {
        Self {
            displacements: [Vec2::zeros(); 4],
            size,
        }
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            displacements: self.displacements.map(|d| d * factor),
            size: self.size,
        }
    }

    /// Displaced corner positions, TL, TR, BL, BR.
    pub fn targets(&self) -> [Vec2; 4] {
        let c = self.size.corners();
        [
            c[0] + self.displacements[0],
            c[1] + self.displacements[1],
            c[2] + self.displacements[2],
            c[3] + self.displacements[3],
        ]
    }

    pub fn in_general_position(&self) -> bool {
        let t = self.targets();
        let triples = [(0, 1, 2), (0, 1, 3), (0, 2, 3), (1, 2, 3)];
        triples
            .iter()
            .all(|&(i, j, k)| !collinear(t[i], t[j], t[k]))
    }

    /// Solves for the unique homography moving each corner by its displacement.
    ///
    /// Uses the closed-form unit-square-to-quad map composed with the
    /// rectangle-to-unit-square scaling, which is better conditioned than the
    /// raw 8x8 system at pixel scale.
    pub fn to_matrix(&self) -> Result<Homography> {
        if !self.in_general_position() {
            return Err(Error::DegenerateCorrespondences(
                "three displaced corners are collinear".into(),
            ));
        }
        let [tl, tr, bl, br] = self.targets();
        // unit square corners (0,0),(1,0),(1,1),(0,1) -> tl, tr, br, bl
        let (x0, y0, x1, y1, x2, y2, x3, y3) = (tl.x, tl.y, tr.x, tr.y, br.x, br.y, bl.x, bl.y);
        let sx = x0 - x1 + x2 - x3;
        let sy = y0 - y1 + y2 - y3;
        let dx1 = x1 - x2;
        let dx2 = x3 - x2;
        let dy1 = y1 - y2;
        let dy2 = y3 - y2;
        let det = dx1 * dy2 - dx2 * dy1;
        if det.abs() <= f64::EPSILON * (dx1.abs() + dx2.abs()) * (dy1.abs() + dy2.abs()) {
            return Err(Error::DegenerateCorrespondences(
                "corner system is rank-deficient".into(),
            ));
        }
        let g = (sx * dy2 - dx2 * sy) / det;
        let h = (dx1 * sy - sx * dy1) / det;
        let square_to_quad = Matrix3::new(
            x1 - x0 + g * x1,
            x3 - x0 + h * x3,
            x0,
            y1 - y0 + g * y1,
            y3 - y0 + h * y3,
            y0,
            g,
            h,
            1.0,
        );
        let (w, hh) = (self.size.width as f64, self.size.height as f64);
        let rect_to_square = Matrix3::new(1.0 / w, 0.0, 0.0, 0.0, 1.0 / hh, 0.0, 0.0, 0.0, 1.0);
        Homography::from_matrix(square_to_quad * rect_to_square, self.size).map_err(|_| {
            Error::DegenerateCorrespondences("corner system is rank-deficient".into())
        })
    }

    pub fn max_abs_difference(&self, other: &Homography4pt) -> f64 {
        self.displacements
            .iter()
            .zip(&other.displacements)
            .map(|(a, b)| (a - b).abs().max())
            .fold(0.0, f64::max)
    }
}

/// Splits `h` (reference -> target) at the plane selected by `frac`.
///
/// Returns `(h_ref, h_tgt)`, each mapping the virtual plane into its source
/// frame. The four-corner form of `h_tgt` is `frac` times that of `h`, and
/// `h ∘ h_ref = h_tgt`.
pub fn decompose_bidirectional(
    h: &Homography,
    frac: PlaneFraction,
) -> Result<(Homography, Homography)> {
    let q = h.to_h4pt()?;
    let h_tgt = q.scaled(frac.get()).to_matrix()?;
    let h_ref = h.invert()?.compose(&h_tgt)?;
    Ok((h_ref, h_tgt))
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{SMatrix, SVector};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    const SIZE: ImageSize = ImageSize::new(480, 360);

    fn random_h4pt(rng: &mut ChaCha8Rng, size: ImageSize) -> Homography4pt {
        let (w, h) = (size.width as f64 * 0.25, size.height as f64 * 0.25);
        let mut d = [Vec2::zeros(); 4];
        for v in &mut d {
            *v = Vec2::new(rng.gen_range(-w..w), rng.gen_range(-h..h));
        }
        Homography4pt {
            displacements: d,
            size,
        }
    }

    /// Oracle: the raw 8x8 DLT system with h33 = 1.
    fn dlt_8x8(src: [Vec2; 4], dst: [Vec2; 4]) -> Matrix3<f64> {
        let mut a = SMatrix::<f64, 8, 8>::zeros();
        let mut b = SVector::<f64, 8>::zeros();
        for i in 0..4 {
            let (x, y) = (src[i].x, src[i].y);
            let (u, v) = (dst[i].x, dst[i].y);
            a.set_row(
                2 * i,
                &nalgebra::RowSVector::<f64, 8>::from_row_slice(&[
                    x, y, 1.0, 0.0, 0.0, 0.0, -u * x, -u * y,
                ]),
            );
            a.set_row(
                2 * i + 1,
                &nalgebra::RowSVector::<f64, 8>::from_row_slice(&[
                    0.0, 0.0, 0.0, x, y, 1.0, -v * x, -v * y,
                ]),
            );
            b[2 * i] = u;
            b[2 * i + 1] = v;
        }
        let s = a.lu().solve(&b).unwrap();
        Matrix3::new(s[0], s[1], s[2], s[3], s[4], s[5], s[6], s[7], 1.0)
    }

    #[test]
    fn zero_displacements_give_identity() {
        let h = Homography4pt::zero(SIZE).to_matrix().unwrap();
        assert!(h.distance(&Homography::identity(SIZE)) < 1e-12);
    }

    #[test]
    fn uniform_displacement_is_translation() {
        let q = Homography4pt {
            displacements: [Vec2::new(8.0, 4.0); 4],
            size: SIZE,
        };
        let h = q.to_matrix().unwrap();
        assert!(h.distance(&Homography::translation(8.0, 4.0, SIZE)) < 1e-12);
    }

    #[test]
    fn matches_dlt_oracle_on_fixed_example() {
        let q = Homography4pt {
            displacements: [
                Vec2::new(3.0, 1.0),
                Vec2::new(-2.0, 4.0),
                Vec2::new(0.0, -5.0),
                Vec2::new(6.0, 2.0),
            ],
            size: SIZE,
        };
        let h = q.to_matrix().unwrap();
        let oracle = Homography::from_matrix(dlt_8x8(SIZE.corners(), q.targets()), SIZE).unwrap();
        assert!(h.distance(&oracle) < 1e-9);
        for (c, t) in SIZE.corners().iter().zip(q.targets()) {
            assert!((h.apply(*c).unwrap() - t).norm() < 1e-9);
            assert!((oracle.apply(*c).unwrap() - t).norm() < 1e-9);
        }
    }

    #[test]
    fn collinear_corners_are_rejected() {
        // push TR onto the line through TL and BR
        let q = Homography4pt {
            displacements: [
                Vec2::zeros(),
                Vec2::new(0.0, 360.0),
                Vec2::zeros(),
                Vec2::zeros(),
            ],
            size: ImageSize::new(360, 360),
        };
        assert!(matches!(
            q.to_matrix(),
            Err(Error::DegenerateCorrespondences(_))
        ));
    }

    #[test]
    fn identity_and_translation_to_h4pt() {
        let z = Homography::identity(SIZE).to_h4pt().unwrap();
        assert!(z.max_abs_difference(&Homography4pt::zero(SIZE)) < 1e-12);
        let t = Homography::translation(8.0, 4.0, SIZE).to_h4pt().unwrap();
        for d in t.displacements {
            assert!((d - Vec2::new(8.0, 4.0)).norm() < 1e-12);
        }
    }

    #[test]
    fn corner_at_infinity_is_reported() {
        // third row sends the BR corner (480, 360) to z = 0
        let m = Matrix3::new(1.0, 0.0, 0.0, 0.0, 1.0, 0.0, -1.0 / 480.0, 0.0, 1.0);
        let h = Homography::from_matrix(m, SIZE).unwrap();
        assert!(matches!(h.to_h4pt(), Err(Error::CornerAtInfinity)));
    }

    #[test]
    fn round_trip_random() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..2000 {
            let q = random_h4pt(&mut rng, SIZE);
            let h = q.to_matrix().unwrap();
            let back = h.to_h4pt().unwrap();
            assert!(back.max_abs_difference(&q) < 1e-9);
            let h2 = back.to_matrix().unwrap();
            assert!(h.distance(&h2) < 1e-9);
        }
    }

    #[test]
    fn algebra_basics() {
        let i = Homography::identity(SIZE);
        assert!(i.invert().unwrap().distance(&i) < 1e-15);
        let c = Homography::translation(3.0, 0.0, SIZE)
            .compose(&Homography::translation(0.0, 5.0, SIZE))
            .unwrap();
        assert!(c.distance(&Homography::translation(3.0, 5.0, SIZE)) < 1e-12);
        let singular = Matrix3::new(1.0, 2.0, 3.0, 2.0, 4.0, 6.0, 0.0, 0.0, 1.0);
        assert!(matches!(
            Homography::from_matrix(singular, SIZE),
            Err(Error::SingularMatrix)
        ));
    }

    #[test]
    fn canonicalization_is_idempotent() {
        let m = Matrix3::new(2.0, 0.1, 5.0, -0.3, 1.5, 2.0, 0.001, 0.0, -3.0);
        let h = Homography::from_matrix(m, SIZE).unwrap();
        let again = Homography::from_matrix(*h.matrix(), SIZE).unwrap();
        assert_eq!(h, again);
        assert!(h.matrix()[(2, 2)] >= 0.0);
        assert!((h.matrix().norm() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn decompose_translation() {
        let h = Homography::translation(8.0, 4.0, SIZE);
        let (r, t) = decompose_bidirectional(&h, PlaneFraction::MID).unwrap();
        assert!(t.distance(&Homography::translation(4.0, 2.0, SIZE)) < 1e-12);
        assert!(r.distance(&Homography::translation(-4.0, -2.0, SIZE)) < 1e-12);
        let (r, t) = decompose_bidirectional(&Homography::identity(SIZE), PlaneFraction::MID).unwrap();
        assert!(r.distance(&Homography::identity(SIZE)) < 1e-15);
        assert!(t.distance(&Homography::identity(SIZE)) < 1e-15);
    }

    #[test]
    fn decompose_extreme_fractions() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let h = random_h4pt(&mut rng, SIZE).to_matrix().unwrap();
        let (r, t) = decompose_bidirectional(&h, PlaneFraction::new(1.0).unwrap()).unwrap();
        assert!(r.distance(&Homography::identity(SIZE)) < 1e-9);
        assert!(t.distance(&h) < 1e-9);
        let (r, t) = decompose_bidirectional(&h, PlaneFraction::new(0.0).unwrap()).unwrap();
        assert!(t.distance(&Homography::identity(SIZE)) < 1e-9);
        assert!(r.distance(&h.invert().unwrap()) < 1e-9);
    }

    #[test]
    fn plane_fraction_bounds() {
        assert!(PlaneFraction::new(-0.1).is_err());
        assert!(PlaneFraction::new(1.1).is_err());
        assert!(PlaneFraction::new(0.75).is_ok());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn h4pt_strategy() -> impl Strategy<Value = Homography4pt> {
            proptest::array::uniform8(-0.25f64..0.25).prop_map(|v| Homography4pt {
                displacements: [
                    Vec2::new(v[0] * 480.0, v[1] * 360.0),
                    Vec2::new(v[2] * 480.0, v[3] * 360.0),
                    Vec2::new(v[4] * 480.0, v[5] * 360.0),
                    Vec2::new(v[6] * 480.0, v[7] * 360.0),
                ],
                size: SIZE,
            })
        }

        proptest! {
            #[test]
            fn compose_with_inverse_is_identity(q in h4pt_strategy()) {
                let a = q.to_matrix().unwrap();
                let id = a.compose(&a.invert().unwrap()).unwrap();
                prop_assert!(id.distance(&Homography::identity(SIZE)) < 1e-9);
            }

            #[test]
            fn compose_applies_in_order(q1 in h4pt_strategy(), q2 in h4pt_strategy(), x in 0.0f64..480.0, y in 0.0f64..360.0) {
                let a = q1.to_matrix().unwrap();
                let b = q2.to_matrix().unwrap();
                let p = Vec2::new(x, y);
                if let (Ok(bp), Ok(ab)) = (b.apply(p), a.compose(&b)) {
                    if let (Ok(lhs), Ok(rhs)) = (ab.apply(p), a.apply(bp)) {
                        prop_assert!((lhs - rhs).norm() <= 1e-6 * (1.0 + rhs.norm()));
                    }
                }
            }

            #[test]
            fn decomposition_is_consistent(q in h4pt_strategy(), beta in 0.0f64..=1.0) {
                let h = q.to_matrix().unwrap();
                let frac = PlaneFraction::new(beta).unwrap();
                if let Ok((r, t)) = decompose_bidirectional(&h, frac) {
                    prop_assert!(h.compose(&r).unwrap().distance(&t) < 1e-9);
                    let tq = t.to_h4pt().unwrap();
                    prop_assert!(tq.max_abs_difference(&q.scaled(beta)) < 1e-9);
                }
            }
        }
    }
}
