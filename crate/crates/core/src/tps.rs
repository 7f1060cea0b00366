//! Shape-registration data augmentation.
//!
//! Each training mask is approximated by a least-squares ellipse whose four
//! axis endpoints serve as landmarks. A thin-plate spline through the
//! landmark pairs warps a moving image into the frame of a fixed image;
//! every warped pair is also mirrored left to right.

use std::f64::consts::PI;

use nalgebra::{Matrix2, Matrix3, SMatrix, Vector3};

use crate::error::{Error, Result};
use crate::raster::{BinaryMask, GrayImage, Raster};

pub type Point = (f64, f64);

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ellipse {
    pub center: Point,
    pub semi_major: f64,
    pub semi_minor: f64,
    /// Major-axis direction in `[0, pi)`, measured from the x axis.
    pub angle: f64,
}

/// Ellipse axis endpoints in the order `+major, -major, +minor, -minor`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LandmarkQuad(pub [Point; 4]);

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledImage {
    pub image: GrayImage,
    pub mask: BinaryMask,
}

impl LabeledImage {
    pub fn new(image: GrayImage, mask: BinaryMask) -> Result<Self> {
        if image.width != mask.width || image.height != mask.height {
            return Err(Error::shape(format!(
                "image {}x{} and mask {}x{} differ",
                image.width, image.height, mask.width, mask.height
            )));
        }
        Ok(LabeledImage { image, mask })
    }

    pub fn flip_horizontal(&self) -> LabeledImage {
        LabeledImage {
            image: self.image.flip_horizontal(),
            mask: self.mask.flip_horizontal(),
        }
    }
}

/// Axis ratios closer to one than this are treated as circles with angle 0.
const CIRCLE_RATIO_TOL: f64 = 1e-3;

/// Direct least-squares ellipse fit (constraint `4AC - B^2 = 1`), solved in
/// the reduced 3x3 form on centred and scaled coordinates.
pub fn fit_ellipse(points: &[Point]) -> Result<Ellipse> {
    if points.len() < 6 {
        return Err(Error::Fit(format!("need at least 6 points, got {}", points.len())));
    }
    let n = points.len() as f64;
    let (mx, my) = points
        .iter()
        .fold((0.0, 0.0), |(sx, sy), &(x, y)| (sx + x / n, sy + y / n));
    let scale = (points
        .iter()
        .map(|&(x, y)| (x - mx).powi(2) + (y - my).powi(2))
        .sum::<f64>()
        / n)
        .sqrt();
    if !(scale > 0.0) {
        return Err(Error::Fit("points coincide".into()));
    }

    let mut s1 = Matrix3::zeros();
    let mut s2 = Matrix3::zeros();
    let mut s3 = Matrix3::zeros();
    for &(px, py) in points {
        let (x, y) = ((px - mx) / scale, (py - my) / scale);
        let quad = Vector3::new(x * x, x * y, y * y);
        let lin = Vector3::new(x, y, 1.0);
        s1 += quad * quad.transpose();
        s2 += quad * lin.transpose();
        s3 += lin * lin.transpose();
    }
    let s3_inv = s3
        .try_inverse()
        .ok_or_else(|| Error::Fit("scatter matrix is singular".into()))?;
    let t = -s3_inv * s2.transpose();
    let m = s1 + s2 * t;
    // Premultiply by the inverse of the constraint matrix.
    let reduced = Matrix3::from_rows(&[
        (m.row(2) / 2.0).into_owned(),
        (-m.row(1)).into_owned(),
        (m.row(0) / 2.0).into_owned(),
    ]);

    let mut best: Option<(f64, Vector3<f64>)> = None;
    for lambda in real_eigenvalues3(&reduced) {
        let Some(v) = null_vector3(&(reduced - Matrix3::identity() * lambda)) else {
            continue;
        };
        let cond = 4.0 * v[0] * v[2] - v[1] * v[1];
        if cond > 0.0 && best.map_or(true, |(c, _)| cond > c) {
            best = Some((cond, v));
        }
    }
    let (_, quad) = best.ok_or_else(|| Error::Fit("no elliptical solution".into()))?;
    let lin = t * quad;
    let e = conic_to_ellipse([quad[0], quad[1], quad[2], lin[0], lin[1], lin[2]])?;
    Ok(Ellipse {
        center: (e.center.0 * scale + mx, e.center.1 * scale + my),
        semi_major: e.semi_major * scale,
        semi_minor: e.semi_minor * scale,
        angle: e.angle,
    })
}

/// Fit to the midpoints of the pixel edges separating foreground from
/// background, which straddle the true outline instead of sitting half a
/// pixel inside it.
pub fn fit_ellipse_to_mask(mask: &BinaryMask) -> Result<Ellipse> {
    fit_ellipse(&mask_edge_points(mask))
}

pub fn mask_edge_points(mask: &BinaryMask) -> Vec<Point> {
    let (w, h) = (mask.width as i64, mask.height as i64);
    let inside = |x: i64, y: i64| x >= 0 && y >= 0 && x < w && y < h && mask.get(x as usize, y as usize);
    let mut pts = Vec::new();
    for y in 0..h {
        for x in 0..w {
            if !inside(x, y) {
                continue;
            }
            for (dx, dy) in [(1, 0), (-1, 0), (0, 1), (0, -1)] {
                if !inside(x + dx, y + dy) {
                    pts.push((x as f64 + 0.5 * dx as f64, y as f64 + 0.5 * dy as f64));
                }
            }
        }
    }
    pts
}

fn conic_to_ellipse(c: [f64; 6]) -> Result<Ellipse> {
    let [a, b, cc, d, e, f] = c;
    let centre_sys = Matrix2::new(2.0 * a, b, b, 2.0 * cc);
    let centre = centre_sys
        .try_inverse()
        .ok_or_else(|| Error::Fit("degenerate conic".into()))?
        * nalgebra::Vector2::new(-d, -e);
    let (x0, y0) = (centre[0], centre[1]);
    let f0 = f + 0.5 * (d * x0 + e * y0);

    // Eigen-decomposition of [[a, b/2], [b/2, c]].
    let mean = 0.5 * (a + cc);
    let half_diff = 0.5 * (a - cc);
    let radius = (half_diff * half_diff + 0.25 * b * b).sqrt();
    let (mu_small, mu_large) = (mean - radius, mean + radius);
    if !(mu_small * f0 < 0.0 && mu_large * f0 < 0.0) {
        return Err(Error::Fit("conic is not a real ellipse".into()));
    }
    let semi_major = (-f0 / mu_small).sqrt();
    let semi_minor = (-f0 / mu_large).sqrt();
    let angle = if semi_major - semi_minor <= CIRCLE_RATIO_TOL * semi_major {
        0.0
    } else {
        // Major axis follows the eigenvector of the smaller eigenvalue.
        let theta = 0.5 * f64::atan2(-b, cc - a);
        theta.rem_euclid(PI)
    };
    if !(semi_minor > 0.0 && semi_major.is_finite()) {
        return Err(Error::Fit("non-finite ellipse axes".into()));
    }
    Ok(Ellipse {
        center: (x0, y0),
        semi_major,
        semi_minor,
        angle: if angle >= PI { 0.0 } else { angle },
    })
}

fn real_eigenvalues3(m: &Matrix3<f64>) -> Vec<f64> {
    m.complex_eigenvalues()
        .iter()
        .filter(|z| z.im.abs() <= 1e-9 * (1.0 + z.re.abs()))
        .map(|z| z.re)
        .collect()
}

/// Unit null vector of a rank-2 3x3 matrix from the largest cross product
/// of its rows.
fn null_vector3(m: &Matrix3<f64>) -> Option<Vector3<f64>> {
    let rows = [m.row(0).transpose(), m.row(1).transpose(), m.row(2).transpose()];
    let v = [
        rows[0].cross(&rows[1]),
        rows[0].cross(&rows[2]),
        rows[1].cross(&rows[2]),
    ]
    .into_iter()
    .max_by(|a, b| a.norm_squared().total_cmp(&b.norm_squared()))?;
    let norm = v.norm();
    (norm > 0.0).then(|| v / norm)
}

pub fn ellipse_vertices(e: &Ellipse) -> LandmarkQuad {
    let (cx, cy) = e.center;
    let (c, s) = (e.angle.cos(), e.angle.sin());
    let (a, b) = (e.semi_major, e.semi_minor);
    LandmarkQuad([
        (cx + a * c, cy + a * s),
        (cx - a * c, cy - a * s),
        (cx - b * s, cy + b * c),
        (cx + b * s, cy - b * c),
    ])
}

/// Reorder `moving` so each of its vertices corresponds to the same-role
/// vertex of `fixed`, flipping either axis when that lowers the total squared
/// landmark displacement.
pub fn match_landmarks(fixed: &LandmarkQuad, moving: &LandmarkQuad) -> LandmarkQuad {
    let d2 = |p: Point, q: Point| (p.0 - q.0).powi(2) + (p.1 - q.1).powi(2);
    let mut out = moving.0;
    for (i, j) in [(0, 1), (2, 3)] {
        let keep = d2(fixed.0[i], moving.0[i]) + d2(fixed.0[j], moving.0[j]);
        let swap = d2(fixed.0[i], moving.0[j]) + d2(fixed.0[j], moving.0[i]);
        if swap < keep {
            out[i] = moving.0[j];
            out[j] = moving.0[i];
        }
    }
    LandmarkQuad(out)
}

// ---------------------------------------------------------------------------
// Thin-plate spline

#[derive(Debug, Clone, PartialEq)]
pub struct TpsWarp {
    pub source_landmarks: LandmarkQuad,
    /// Radial-basis weights, one row per landmark, columns `(x, y)`.
    pub kernel_weights: [[f64; 2]; 4],
    /// Affine coefficients for `[1, x, y]`, columns `(x, y)`.
    pub affine: [[f64; 2]; 3],
}

/// `r^2 ln r`, zero at the origin.
#[inline]
pub fn tps_kernel(r: f64) -> f64 {
    if r <= 0.0 {
        0.0
    } else {
        r * r * r.ln()
    }
}

/// Solve the bordered spline system mapping `source` landmarks onto
/// `target` landmarks.
pub fn solve_tps(source: &LandmarkQuad, target: &LandmarkQuad) -> Result<TpsWarp> {
    let s = &source.0;
    let extent = s
        .iter()
        .flat_map(|p| s.iter().map(move |q| (p.0 - q.0).abs().max((p.1 - q.1).abs())))
        .fold(0.0, f64::max);
    let area = (1..4)
        .flat_map(|i| (1..4).map(move |j| (i, j)))
        .map(|(i, j)| {
            ((s[i].0 - s[0].0) * (s[j].1 - s[0].1) - (s[i].1 - s[0].1) * (s[j].0 - s[0].0)).abs()
        })
        .fold(0.0, f64::max);
    if !(area > 1e-9 * extent * extent) {
        return Err(Error::Solve("source landmarks are collinear".into()));
    }

    let mut sys = SMatrix::<f64, 7, 7>::zeros();
    let mut rhs = SMatrix::<f64, 7, 2>::zeros();
    for i in 0..4 {
        for j in 0..4 {
            sys[(i, j)] = tps_kernel(dist(s[i], s[j]));
        }
        let hom = [1.0, s[i].0, s[i].1];
        for k in 0..3 {
            sys[(i, 4 + k)] = hom[k];
            sys[(4 + k, i)] = hom[k];
        }
        rhs[(i, 0)] = target.0[i].0;
        rhs[(i, 1)] = target.0[i].1;
    }
    let lu = sys.lu();
    let mut sol = lu
        .solve(&rhs)
        .ok_or_else(|| Error::Solve("spline system is singular".into()))?;
    // One step of iterative refinement.
    let resid = rhs - sys * sol;
    if let Some(corr) = lu.solve(&resid) {
        sol += corr;
    }
    if sol.iter().any(|v| !v.is_finite()) {
        return Err(Error::Solve("non-finite spline coefficients".into()));
    }
    let mut kernel_weights = [[0.0; 2]; 4];
    let mut affine = [[0.0; 2]; 3];
    for c in 0..2 {
        for i in 0..4 {
            kernel_weights[i][c] = sol[(i, c)];
        }
        for k in 0..3 {
            affine[k][c] = sol[(4 + k, c)];
        }
    }
    Ok(TpsWarp {
        source_landmarks: *source,
        kernel_weights,
        affine,
    })
}

#[inline]
fn dist(p: Point, q: Point) -> f64 {
    ((p.0 - q.0).powi(2) + (p.1 - q.1).powi(2)).sqrt()
}

impl TpsWarp {
    pub fn map(&self, p: Point) -> Point {
        let a = &self.affine;
        let mut x = a[0][0] + a[1][0] * p.0 + a[2][0] * p.1;
        let mut y = a[0][1] + a[1][1] * p.0 + a[2][1] * p.1;
        for (s, w) in self.source_landmarks.0.iter().zip(&self.kernel_weights) {
            let u = tps_kernel(dist(p, *s));
            x += w[0] * u;
            y += w[1] * u;
        }
        (x, y)
    }

    /// Column sums of `kernel_weights` against `[1, x, y]` at the source
    /// landmarks; all zero for a valid spline.
    pub fn side_conditions(&self) -> [[f64; 2]; 3] {
        let mut out = [[0.0; 2]; 3];
        for (s, w) in self.source_landmarks.0.iter().zip(&self.kernel_weights) {
            for c in 0..2 {
                out[0][c] += w[c];
                out[1][c] += w[c] * s.0;
                out[2][c] += w[c] * s.1;
            }
        }
        out
    }
}

/// Backward warp: each output pixel centre is mapped into the moving frame
/// and sampled with nearest neighbour. Samples outside the moving image are
/// zero / background.
pub fn apply_tps(warp: &TpsWarp, moving: &LabeledImage, out_w: usize, out_h: usize) -> LabeledImage {
    let (mw, mh) = (moving.image.width as i64, moving.image.height as i64);
    let mut image = GrayImage::filled(out_w, out_h, 0.0);
    let mut mask = BinaryMask::empty(out_w, out_h);
    for y in 0..out_h {
        for x in 0..out_w {
            let (sx, sy) = warp.map((x as f64, y as f64));
            let (ix, iy) = (sx.round(), sy.round());
            if !(ix >= 0.0 && iy >= 0.0 && ix < mw as f64 && iy < mh as f64) {
                continue;
            }
            let (ix, iy) = (ix as usize, iy as usize);
            image.data[y * out_w + x] = moving.image.get(ix, iy);
            mask.data[y * out_w + x] = moving.mask.get(ix, iy);
        }
    }
    LabeledImage { image, mask }
}

/// Warp for taking `moving` into the frame of `fixed`, both given by their
/// landmark quads.
pub fn registration_warp(fixed: &LandmarkQuad, moving: &LandmarkQuad) -> Result<TpsWarp> {
    solve_tps(fixed, &match_landmarks(fixed, moving))
}

/// `2n(n-1) + n` items: the originals, then for every ordered pair
/// `(moving, fixed)` the warped pair followed by its mirror image.
pub fn augment_dataset(train: &[LabeledImage]) -> Result<Vec<LabeledImage>> {
    let quads = train
        .iter()
        .enumerate()
        .map(|(i, item)| {
            fit_ellipse_to_mask(&item.mask)
                .map(|e| ellipse_vertices(&e))
                .map_err(|e| Error::Fit(format!("item {i}: {e}")))
        })
        .collect::<Result<Vec<_>>>()?;
    let n = train.len();
    let mut out = Vec::with_capacity(2 * n * n.saturating_sub(1) + n);
    out.extend(train.iter().cloned());
    for m in 0..n {
        for f in 0..n {
            if m == f {
                continue;
            }
            let warp = registration_warp(&quads[f], &quads[m])
                .map_err(|e| Error::Solve(format!("pair ({m}, {f}): {e}")))?;
            let fixed = &train[f].image;
            let warped = apply_tps(&warp, &train[m], fixed.width, fixed.height);
            let flipped = warped.flip_horizontal();
            out.push(warped);
            out.push(flipped);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: Point, b: Point, tol: f64) -> bool {
        (a.0 - b.0).abs() <= tol && (a.1 - b.1).abs() <= tol
    }

    fn samples(e: &Ellipse, n: usize) -> Vec<Point> {
        let (c, s) = (e.angle.cos(), e.angle.sin());
        (0..n)
            .map(|k| {
                let t = 2.0 * PI * k as f64 / n as f64;
                let (u, v) = (e.semi_major * t.cos(), e.semi_minor * t.sin());
                (e.center.0 + u * c - v * s, e.center.1 + u * s + v * c)
            })
            .collect()
    }

    #[test]
    fn fit_recovers_circle() {
        let truth = Ellipse {
            center: (10.0, 10.0),
            semi_major: 5.0,
            semi_minor: 5.0,
            angle: 0.0,
        };
        let e = fit_ellipse(&samples(&truth, 64)).unwrap();
        assert!(close(e.center, (10.0, 10.0), 1e-6));
        assert!((e.semi_major - 5.0).abs() < 1e-6 && (e.semi_minor - 5.0).abs() < 1e-6);
        assert_eq!(e.angle, 0.0);
    }

    #[test]
    fn fit_recovers_axis_aligned_and_rotated() {
        let truth = Ellipse {
            center: (3.0, -2.0),
            semi_major: 8.0,
            semi_minor: 4.0,
            angle: 0.0,
        };
        let e = fit_ellipse(&samples(&truth, 40)).unwrap();
        assert!((e.semi_major - 8.0).abs() < 1e-6 && (e.semi_minor - 4.0).abs() < 1e-6);
        assert!(e.angle.abs() < 1e-6 || (PI - e.angle).abs() < 1e-6);

        let rot = Ellipse { angle: 2.0, ..truth };
        let e = fit_ellipse(&samples(&rot, 40)).unwrap();
        assert!((e.angle - 2.0).abs() < 1e-6);
        assert!(close(e.center, rot.center, 1e-6));
    }

    #[test]
    fn fit_needs_six_points() {
        let pts: Vec<Point> = (0..5).map(|k| (k as f64, (k * k) as f64)).collect();
        assert!(matches!(fit_ellipse(&pts), Err(Error::Fit(_))));
    }

    #[test]
    fn fit_rejects_collinear() {
        let pts: Vec<Point> = (0..10).map(|k| (k as f64, 2.0 * k as f64)).collect();
        assert!(fit_ellipse(&pts).is_err());
    }

    #[test]
    fn vertex_examples() {
        let c = Ellipse {
            center: (0.0, 0.0),
            semi_major: 5.0,
            semi_minor: 5.0,
            angle: 0.0,
        };
        assert_eq!(ellipse_vertices(&c).0, [(5.0, 0.0), (-5.0, 0.0), (0.0, 5.0), (0.0, -5.0)]);
        let e = Ellipse {
            center: (10.0, 10.0),
            semi_major: 8.0,
            semi_minor: 4.0,
            angle: 0.0,
        };
        assert_eq!(ellipse_vertices(&e).0, [(18.0, 10.0), (2.0, 10.0), (10.0, 14.0), (10.0, 6.0)]);
        let r = Ellipse {
            center: (0.0, 0.0),
            angle: PI / 2.0,
            ..e
        };
        let got = ellipse_vertices(&r).0;
        let want = [(0.0, 8.0), (0.0, -8.0), (-4.0, 0.0), (4.0, 0.0)];
        for (g, w) in got.iter().zip(&want) {
            assert!(close(*g, *w, 1e-12), "{g:?} vs {w:?}");
        }
    }

    fn quad() -> LandmarkQuad {
        LandmarkQuad([(18.0, 10.0), (2.0, 10.0), (10.0, 14.0), (10.0, 6.0)])
    }

    #[test]
    fn tps_identity_and_translation() {
        let q = quad();
        let id = solve_tps(&q, &q).unwrap();
        for p in [(0.0, 0.0), (3.5, 7.25), (40.0, -3.0)] {
            assert!(close(id.map(p), p, 1e-9));
        }
        let shifted = LandmarkQuad(q.0.map(|(x, y)| (x + 5.0, y)));
        let tr = solve_tps(&q, &shifted).unwrap();
        for p in [(0.0, 0.0), (3.5, 7.25), (40.0, -3.0)] {
            assert!(close(tr.map(p), (p.0 + 5.0, p.1), 1e-9));
        }
    }

    #[test]
    fn tps_interpolates_and_meets_side_conditions() {
        let src = quad();
        let dst = LandmarkQuad([(20.0, 11.0), (1.0, 9.0), (9.0, 16.0), (11.0, 5.0)]);
        let w = solve_tps(&src, &dst).unwrap();
        for (s, t) in src.0.iter().zip(&dst.0) {
            assert!(close(w.map(*s), *t, 1e-9));
        }
        for row in w.side_conditions() {
            assert!(row[0].abs() <= 1e-9 && row[1].abs() <= 1e-9);
        }
    }

    #[test]
    fn tps_rejects_collinear_landmarks() {
        let line = LandmarkQuad([(0.0, 0.0), (1.0, 1.0), (2.0, 2.0), (3.0, 3.0)]);
        assert!(matches!(solve_tps(&line, &line), Err(Error::Solve(_))));
    }

    fn labeled(w: usize, h: usize) -> LabeledImage {
        let image = GrayImage::new(w, h, (0..w * h).map(|i| (i % 251) as f64).collect()).unwrap();
        let mask = BinaryMask::new(w, h, (0..w * h).map(|i| i % 3 == 0).collect()).unwrap();
        LabeledImage::new(image, mask).unwrap()
    }

    #[test]
    fn identity_warp_copies() {
        let item = labeled(12, 9);
        let w = solve_tps(&quad(), &quad()).unwrap();
        assert_eq!(apply_tps(&w, &item, 12, 9), item);
    }

    #[test]
    fn translation_warp_shifts_backward() {
        let item = labeled(20, 20);
        let q = quad();
        let w = solve_tps(&q, &LandmarkQuad(q.0.map(|(x, y)| (x + 5.0, y)))).unwrap();
        let out = apply_tps(&w, &item, 20, 20);
        for y in 0..20 {
            for x in 0..20 {
                if x + 5 < 20 {
                    assert_eq!(out.mask.get(x, y), item.mask.get(x + 5, y));
                    assert_eq!(out.image.get(x, y), item.image.get(x + 5, y));
                } else {
                    assert!(!out.mask.get(x, y));
                    assert_eq!(out.image.get(x, y), 0.0);
                }
            }
        }
    }

    #[test]
    fn far_warp_is_background() {
        let item = labeled(10, 10);
        let q = quad();
        let w = solve_tps(&q, &LandmarkQuad(q.0.map(|(x, y)| (x + 1000.0, y)))).unwrap();
        let out = apply_tps(&w, &item, 10, 10);
        assert!(out.mask.is_empty());
        assert!(out.image.data.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn match_prefers_small_displacement() {
        let fixed = quad();
        let mut swapped = fixed.0;
        swapped.swap(0, 1);
        let m = match_landmarks(&fixed, &LandmarkQuad(swapped));
        assert_eq!(m, fixed);
    }
}
