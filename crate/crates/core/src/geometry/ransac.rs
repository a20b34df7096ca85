//! Normalized DLT homography estimation with a seeded RANSAC wrapper and a
//! Levenberg-Marquardt polish of the symmetric transfer error.

use nalgebra::{DMatrix, DVector, Matrix3, SymmetricEigen};
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Homography, Point2};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RansacConfig {
    /// Inlier threshold on the forward reprojection error, in pixels.
    pub threshold: f64,
    pub max_iterations: usize,
    pub confidence: f64,
    pub seed: u64,
}

impl Default for RansacConfig {
    fn default() -> Self {
        Self {
            threshold: 3.0,
            max_iterations: 2000,
            confidence: 0.995,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct HomographyFit {
    pub homography: Homography,
    pub inliers: Vec<bool>,
}

impl HomographyFit {
    pub fn inlier_count(&self) -> usize {
        self.inliers.iter().filter(|&&b| b).count()
    }
}

/// Hartley conditioning: centroid to the origin, mean distance sqrt(2).
fn conditioning(pts: &[Point2]) -> Matrix3<f64> {
    let n = pts.len() as f64;
    let cx = pts.iter().map(|p| p.x).sum::<f64>() / n;
    let cy = pts.iter().map(|p| p.y).sum::<f64>() / n;
    let mean = pts
        .iter()
        .map(|p| ((p.x - cx).powi(2) + (p.y - cy).powi(2)).sqrt())
        .sum::<f64>()
        / n;
    let s = if mean > 1e-12 {
        std::f64::consts::SQRT_2 / mean
    } else {
        1.0
    };
    Matrix3::new(s, 0.0, -s * cx, 0.0, s, -s * cy, 0.0, 0.0, 1.0)
}

fn transform(t: &Matrix3<f64>, p: Point2) -> Point2 {
    Point2::new(t[(0, 0)] * p.x + t[(0, 2)], t[(1, 1)] * p.y + t[(1, 2)])
}

/// True when the points lie (numerically) on a single line.
fn collinear(pts: &[Point2]) -> bool {
    if pts.len() < 3 {
        return true;
    }
    let n = pts.len() as f64;
    let cx = pts.iter().map(|p| p.x).sum::<f64>() / n;
    let cy = pts.iter().map(|p| p.y).sum::<f64>() / n;
    let (mut sxx, mut sxy, mut syy) = (0.0, 0.0, 0.0);
    for p in pts {
        let (dx, dy) = (p.x - cx, p.y - cy);
        sxx += dx * dx;
        sxy += dx * dy;
        syy += dy * dy;
    }
    let tr = sxx + syy;
    if tr <= 1e-18 {
        return true;
    }
    let det = sxx * syy - sxy * sxy;
    // smallest/largest eigenvalue ratio of the scatter matrix
    det / (tr * tr) < 1e-10
}

fn triple_collinear(a: Point2, b: Point2, c: Point2) -> bool {
    let cross = (b.x - a.x) * (c.y - a.y) - (b.y - a.y) * (c.x - a.x);
    let scale = (b - a).norm_squared().max((c - a).norm_squared());
    cross.abs() <= 1e-8 * scale
}

fn sample_degenerate(pts: &[Point2; 4]) -> bool {
    (0..4).any(|skip| {
        let t: Vec<Point2> = (0..4).filter(|&i| i != skip).map(|i| pts[i]).collect();
        triple_collinear(t[0], t[1], t[2])
    })
}

/// Direct linear transform on conditioned coordinates. Uses every pair given.
pub fn fit_homography_dlt(src: &[Point2], dst: &[Point2]) -> Result<Homography> {
    if src.len() != dst.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} source points, {} destination points",
            src.len(),
            dst.len()
        )));
    }
    if src.len() < 4 {
        return Err(Error::InsufficientPoints {
            needed: 4,
            got: src.len(),
        });
    }
    if collinear(src) || collinear(dst) {
        return Err(Error::DegenerateConfiguration("collinear points"));
    }
    let t_src = conditioning(src);
    let t_dst = conditioning(dst);
    let mut ata = nalgebra::SMatrix::<f64, 9, 9>::zeros();
    for (&s, &d) in src.iter().zip(dst) {
        let s = transform(&t_src, s);
        let d = transform(&t_dst, d);
        let r1 = [0.0, 0.0, 0.0, -s.x, -s.y, -1.0, d.y * s.x, d.y * s.y, d.y];
        let r2 = [s.x, s.y, 1.0, 0.0, 0.0, 0.0, -d.x * s.x, -d.x * s.y, -d.x];
        for r in [r1, r2] {
            for i in 0..9 {
                if r[i] == 0.0 {
                    continue;
                }
                for j in 0..9 {
                    ata[(i, j)] += r[i] * r[j];
                }
            }
        }
    }
    let eig = SymmetricEigen::new(ata);
    let (min_idx, _) = eig
        .eigenvalues
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.abs().total_cmp(&b.1.abs()))
        .expect("nine eigenvalues");
    let h = eig.eigenvectors.column(min_idx);
    let hn = Matrix3::new(h[0], h[1], h[2], h[3], h[4], h[5], h[6], h[7], h[8]);
    let t_dst_inv = t_dst
        .try_inverse()
        .ok_or(Error::DegenerateConfiguration("conditioning not invertible"))?;
    Homography::from_matrix(t_dst_inv * hn * t_src)
}

fn forward_error_sq(h: &Homography, s: Point2, d: Point2) -> f64 {
    match h.apply(s) {
        Ok(p) => (p - d).norm_squared(),
        Err(_) => f64::INFINITY,
    }
}

fn required_iterations(inlier_ratio: f64, confidence: f64, cap: usize) -> usize {
    let w4 = inlier_ratio.powi(4);
    if w4 >= 1.0 - 1e-12 {
        return 1;
    }
    if w4 <= 1e-12 {
        return cap;
    }
    let n = (1.0 - confidence).ln() / (1.0 - w4).ln();
    if n.is_finite() {
        (n.ceil() as usize).clamp(1, cap)
    } else {
        cap
    }
}

fn inlier_mask(h: &Homography, src: &[Point2], dst: &[Point2], thr_sq: f64) -> (Vec<bool>, f64) {
    let mut cost = 0.0;
    let mask = src
        .iter()
        .zip(dst)
        .map(|(&s, &d)| {
            let e = forward_error_sq(h, s, d);
            let inlier = e <= thr_sq;
            cost += e.min(thr_sq);
            inlier
        })
        .collect();
    (mask, cost)
}

fn select(pts: &[Point2], mask: &[bool]) -> Vec<Point2> {
    pts.iter().zip(mask).filter(|(_, &m)| m).map(|(&p, _)| p).collect()
}

/// Symmetric transfer error: forward residual in the destination image plus
/// backward residual in the source image.
fn symmetric_residuals(h: &Homography, src: &[Point2], dst: &[Point2]) -> Option<DVector<f64>> {
    let inv = h.inverse().ok()?;
    let mut r = DVector::zeros(4 * src.len());
    for (i, (&s, &d)) in src.iter().zip(dst).enumerate() {
        let f = h.apply(s).ok()?;
        let b = inv.apply(d).ok()?;
        r[4 * i] = f.x - d.x;
        r[4 * i + 1] = f.y - d.y;
        r[4 * i + 2] = b.x - s.x;
        r[4 * i + 3] = b.y - s.y;
    }
    Some(r)
}

/// Levenberg-Marquardt over the eight free entries of the conditioned
/// homography. Only steps that lower the symmetric cost are accepted.
fn polish(h: &Homography, src: &[Point2], dst: &[Point2]) -> Homography {
    let t_src = conditioning(src);
    let t_dst = conditioning(dst);
    let (Some(t_src_inv), Some(t_dst_inv)) = (t_src.try_inverse(), t_dst.try_inverse()) else {
        return *h;
    };
    let to_pixels = |p: &DVector<f64>| -> Option<Homography> {
        let hn = Matrix3::new(p[0], p[1], p[2], p[3], p[4], p[5], p[6], p[7], 1.0);
        Homography::from_matrix(t_dst_inv * hn * t_src).ok()
    };
    let hn = t_dst * h.matrix() * t_src_inv;
    if hn[(2, 2)].abs() < 1e-8 {
        return *h;
    }
    let hn = hn / hn[(2, 2)];
    let mut params = DVector::zeros(8);
    for r in 0..3 {
        for c in 0..3 {
            if r * 3 + c < 8 {
                params[r * 3 + c] = hn[(r, c)];
            }
        }
    }
    let Some(mut best) = to_pixels(&params) else {
        return *h;
    };
    let Some(mut res) = symmetric_residuals(&best, src, dst) else {
        return *h;
    };
    let mut cost = res.norm_squared();
    let mut mu = 1e-3;
    for _ in 0..20 {
        let mut jac = DMatrix::zeros(res.len(), 8);
        for k in 0..8 {
            let step = 1e-7 * params[k].abs().max(1.0);
            let mut p = params.clone();
            p[k] += step;
            let Some(hk) = to_pixels(&p) else { return best };
            let Some(rk) = symmetric_residuals(&hk, src, dst) else {
                return best;
            };
            jac.set_column(k, &((rk - &res) / step));
        }
        let jtj = jac.transpose() * &jac;
        let jtr = jac.transpose() * &res;
        let mut improved = false;
        for _ in 0..8 {
            let mut a = jtj.clone();
            for k in 0..8 {
                a[(k, k)] += mu * jtj[(k, k)].max(1e-12);
            }
            let Some(delta) = a.cholesky().map(|c| c.solve(&(-&jtr))) else {
                mu *= 10.0;
                continue;
            };
            let cand = &params + &delta;
            if let Some(hc) = to_pixels(&cand) {
                if let Some(rc) = symmetric_residuals(&hc, src, dst) {
                    let c = rc.norm_squared();
                    if c < cost {
                        params = cand;
                        best = hc;
                        res = rc;
                        let rel = (cost - c) / cost.max(1e-300);
                        cost = c;
                        mu = (mu * 0.3).max(1e-12);
                        improved = rel > 1e-12;
                        break;
                    }
                }
            }
            mu *= 10.0;
        }
        if !improved {
            break;
        }
    }
    best
}

/// Robustly fits `dst ≈ H(src)`.
pub fn fit_homography(pairs: &[(Point2, Point2)], cfg: &RansacConfig) -> Result<HomographyFit> {
    let n = pairs.len();
    if n < 4 {
        return Err(Error::InsufficientPoints { needed: 4, got: n });
    }
    let src: Vec<Point2> = pairs.iter().map(|p| p.0).collect();
    let dst: Vec<Point2> = pairs.iter().map(|p| p.1).collect();
    if collinear(&src) || collinear(&dst) {
        return Err(Error::DegenerateConfiguration("collinear points"));
    }
    let thr_sq = cfg.threshold * cfg.threshold;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    let mut best: Option<(Homography, Vec<bool>, usize, f64)> = None;
    let mut needed = cfg.max_iterations.max(1);
    let mut iter = 0;
    while iter < needed {
        iter += 1;
        let idx = sample(&mut rng, n, 4);
        let s4 = [src[idx.index(0)], src[idx.index(1)], src[idx.index(2)], src[idx.index(3)]];
        let d4 = [dst[idx.index(0)], dst[idx.index(1)], dst[idx.index(2)], dst[idx.index(3)]];
        if sample_degenerate(&s4) || sample_degenerate(&d4) {
            continue;
        }
        let Ok(h) = fit_homography_dlt(&s4, &d4) else {
            continue;
        };
        let (mask, cost) = inlier_mask(&h, &src, &dst, thr_sq);
        let count = mask.iter().filter(|&&b| b).count();
        let better = match &best {
            None => true,
            Some((_, _, c, bc)) => count > *c || (count == *c && cost < *bc),
        };
        if better {
            needed = needed.min(required_iterations(
                count as f64 / n as f64,
                cfg.confidence,
                cfg.max_iterations.max(1),
            ));
            best = Some((h, mask, count, cost));
        }
    }
    let (mut h, mut mask, mut count, _) = best.ok_or(Error::NoConsensus { inliers: 0 })?;
    if count < 4 {
        return Err(Error::NoConsensus { inliers: count });
    }

    // local optimization: refit on the consensus set until it stops growing
    for _ in 0..5 {
        let (s, d) = (select(&src, &mask), select(&dst, &mask));
        let Ok(refit) = fit_homography_dlt(&s, &d) else {
            break;
        };
        let (m2, _) = inlier_mask(&refit, &src, &dst, thr_sq);
        let c2 = m2.iter().filter(|&&b| b).count();
        if c2 < count {
            break;
        }
        let grew = c2 > count;
        h = refit;
        mask = m2;
        count = c2;
        if !grew {
            break;
        }
    }

    let (s, d) = (select(&src, &mask), select(&dst, &mask));
    if collinear(&s) || collinear(&d) {
        return Err(Error::DegenerateConfiguration("collinear inlier set"));
    }
    let polished = polish(&h, &s, &d);
    let (final_mask, _) = inlier_mask(&polished, &src, &dst, thr_sq);
    let final_count = final_mask.iter().filter(|&&b| b).count();
    if final_count >= count {
        h = polished;
        mask = final_mask;
    }
    let count = mask.iter().filter(|&&b| b).count();
    if count < 4 {
        return Err(Error::NoConsensus { inliers: count });
    }
    Ok(HomographyFit {
        homography: h,
        inliers: mask,
    })
}
