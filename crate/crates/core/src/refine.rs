//! Vertex motion refinement.
//!
//! The refined field minimizes a robust keypoint-consistency term, a
//! bilinear reconstruction term and a shape-preserving term:
//!
//! ```text
//! J(n) = λm Σk Σ(j∈Ωk) huber(nk − mj)·Oj + λv Σj |mj − Bili(n)(pj)|²·Oj + λs Lsp(n)
//! ```
//!
//! The Huber term is majorized by a weighted quadratic at each step, so every
//! step is one banded linear solve and the objective never increases.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frontend::{FlowField, KeypointSet};
use crate::geometry::{GridMesh, Point2, Vec2};
use crate::plane::{GridMotionField, MotionStage, PlaneSegmentation};

pub const OCCLUSION_ALPHA1: f64 = 0.01;
pub const OCCLUSION_ALPHA2: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RefinementConfig {
    pub lambda_m: f64,
    pub lambda_v: f64,
    pub lambda_s: f64,
    pub huber_delta: f64,
    pub max_iterations: usize,
    pub tolerance: f64,
    /// Neighbourhood radius for the keypoint-consistency term, in pixels.
    pub radius: f64,
}

impl Default for RefinementConfig {
    fn default() -> Self {
        Self {
            lambda_m: 10.0,
            lambda_v: 40.0,
            lambda_s: 40.0,
            huber_delta: 1.0,
            max_iterations: 50,
            tolerance: 1e-6,
            radius: 200.0,
        }
    }
}

impl RefinementConfig {
    /// Two-weight form `λ1·L1 + λ2·(Lv + Lsp)`, keeping the bilinear and
    /// shape terms at 1:1.
    pub fn from_split(lambda1: f64, lambda2: f64) -> Self {
        Self {
            lambda_m: lambda1,
            lambda_v: lambda2,
            lambda_s: lambda2,
            ..Self::default()
        }
    }

    fn validate(&self) -> Result<()> {
        let weights = [self.lambda_m, self.lambda_v, self.lambda_s];
        if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::Config(format!("refinement weights must be non-negative, got {weights:?}")));
        }
        if !(self.huber_delta > 0.0) || !(self.radius > 0.0) {
            return Err(Error::Config("huber delta and radius must be positive".into()));
        }
        Ok(())
    }
}

/// Per-keypoint reliability flags; `true` keeps the keypoint in the objective.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OcclusionMask {
    pub frame: usize,
    pub reliable: Vec<bool>,
}

impl OcclusionMask {
    pub fn all(frame: usize, len: usize) -> Self {
        Self {
            frame,
            reliable: vec![true; len],
        }
    }

    pub fn reliable_count(&self) -> usize {
        self.reliable.iter().filter(|&&r| r).count()
    }
}

/// `p + m − H(p)` for every keypoint under its own cluster's homography.
pub fn residual_motions(kps: &KeypointSet, seg: &PlaneSegmentation) -> Result<Vec<Vec2>> {
    if seg.homographies.len() != seg.cluster_count || seg.labels.len() != kps.len() {
        return Err(Error::ShapeMismatch(format!(
            "segmentation has {} homographies and {} labels for {} keypoints",
            seg.homographies.len(),
            seg.labels.len(),
            kps.len()
        )));
    }
    kps.points
        .iter()
        .zip(&seg.labels)
        .map(|(kp, &l)| Ok(kp.position + kp.motion - seg.homographies[l as usize].apply(kp.position)?))
        .collect()
}

/// Dense flow implied by the vertex motions through bilinear interpolation.
pub fn reconstruct_flow(motion: &GridMotionField, mesh: &GridMesh, width: usize, height: usize) -> Result<FlowField> {
    if !motion.matches(mesh) {
        return Err(Error::ShapeMismatch("motion field does not match mesh".into()));
    }
    let mut flow = FlowField::zeros(motion.frame, width, height);
    for y in 0..height {
        for x in 0..width {
            let m = mesh.interpolate(&motion.motions, Point2::new(x as f64, y as f64));
            flow.set(x, y, m);
        }
    }
    Ok(flow)
}

/// Forward consistency test at each keypoint:
/// `|OF − W|² < α1(|OF|² − |W|²) + α2`, with `W(p) = ÔF(p + OF(p))`.
pub fn occlusion_mask(flow: &FlowField, reconstructed: &FlowField, kps: &KeypointSet) -> Result<OcclusionMask> {
    if flow.width != reconstructed.width || flow.height != reconstructed.height {
        return Err(Error::DimensionMismatch(format!(
            "flow {}x{} vs reconstruction {}x{}",
            flow.width, flow.height, reconstructed.width, reconstructed.height
        )));
    }
    let reliable = kps
        .positions()
        .map(|p| {
            let of = flow.sample(p);
            let warped = reconstructed.sample(p + of);
            occlusion_test(of, warped)
        })
        .collect();
    Ok(OcclusionMask {
        frame: kps.frame,
        reliable,
    })
}

pub fn occlusion_test(of: Vec2, warped: Vec2) -> bool {
    (of - warped).norm_squared() < OCCLUSION_ALPHA1 * (of.norm_squared() - warped.norm_squared()) + OCCLUSION_ALPHA2
}

// Rotation taking the rest edge v2→v1 onto v2→v3 for TL, TR, BR ordering.
fn rot(v: Vec2) -> Vec2 {
    Vec2::new(v.dy, -v.dx)
}

// The rest mesh is uniform, so its own residual vanishes and only the
// motions of v1, v2, v3 contribute.
fn shape_residual(mesh: &GridMesh, n: [Vec2; 3]) -> Vec2 {
    let s = mesh.cell_height() / mesh.cell_width();
    let [n1, n2, n3] = n;
    (n3 - n2) - rot(n1 - n2) * s
}

/// Sum over cells of `|v̂3 − (v̂2 + R(v̂1 − v̂2))|²` on the displaced mesh.
/// The rotation is scaled by the cell aspect so the rest mesh scores zero.
pub fn shape_loss(motion: &GridMotionField, mesh: &GridMesh) -> f64 {
    shape_loss_of(mesh, &motion.motions)
}

pub(crate) fn shape_loss_of(mesh: &GridMesh, motions: &[Vec2]) -> f64 {
    (0..mesh.cell_count())
        .map(|cell| {
            let [a, b, c, _] = mesh.cell_vertices(cell);
            shape_residual(mesh, [motions[a], motions[b], motions[c]]).norm_squared()
        })
        .sum()
}

fn huber(r: f64, delta: f64) -> f64 {
    if r.abs() <= delta {
        0.5 * r * r / delta
    } else {
        r.abs() - 0.5 * delta
    }
}

fn huber_slope(r: f64, delta: f64) -> f64 {
    if r.abs() <= delta {
        r / delta
    } else {
        r.signum()
    }
}

struct ActivePoint {
    motion: Vec2,
    vertices: [usize; 4],
    weights: [f64; 4],
}

/// Reliable keypoints resolved against the mesh, plus each vertex's
/// neighbourhood. Masked keypoints never enter.
struct Problem<'a> {
    mesh: &'a GridMesh,
    cfg: RefinementConfig,
    points: Vec<ActivePoint>,
    neighbours: Vec<Vec<usize>>,
}

impl<'a> Problem<'a> {
    fn new(kps: &KeypointSet, mask: &OcclusionMask, mesh: &'a GridMesh, cfg: &RefinementConfig) -> Result<Self> {
        cfg.validate()?;
        if mask.reliable.len() != kps.len() {
            return Err(Error::ShapeMismatch(format!(
                "mask of {} for {} keypoints",
                mask.reliable.len(),
                kps.len()
            )));
        }
        let mut points = Vec::new();
        let mut positions = Vec::new();
        for (kp, &ok) in kps.points.iter().zip(&mask.reliable) {
            if !ok {
                continue;
            }
            if !kp.position.is_finite() || !kp.motion.is_finite() {
                return Err(Error::NonFiniteObjective);
            }
            let cw = mesh.weights_clamped(kp.position);
            points.push(ActivePoint {
                motion: kp.motion,
                vertices: cw.vertices,
                weights: cw.weights,
            });
            positions.push(kp.position);
        }
        let r2 = cfg.radius * cfg.radius;
        let neighbours = mesh
            .vertices()
            .iter()
            .map(|&v| {
                positions
                    .iter()
                    .enumerate()
                    .filter(|(_, &p)| (p - v).norm_squared() <= r2)
                    .map(|(j, _)| j)
                    .collect()
            })
            .collect();
        Ok(Self {
            mesh,
            cfg: *cfg,
            points,
            neighbours,
        })
    }

    fn reconstruct(&self, pt: &ActivePoint, n: &[Vec2]) -> Vec2 {
        let mut acc = Vec2::ZERO;
        for (&v, &w) in pt.vertices.iter().zip(&pt.weights) {
            acc += n[v] * w;
        }
        acc
    }

    fn objective(&self, n: &[Vec2]) -> f64 {
        let c = &self.cfg;
        let mut consistency = 0.0;
        for (k, nb) in self.neighbours.iter().enumerate() {
            for &j in nb {
                let r = n[k] - self.points[j].motion;
                consistency += huber(r.dx, c.huber_delta) + huber(r.dy, c.huber_delta);
            }
        }
        let bilinear: f64 = self
            .points
            .iter()
            .map(|pt| (pt.motion - self.reconstruct(pt, n)).norm_squared())
            .sum();
        c.lambda_m * consistency + c.lambda_v * bilinear + c.lambda_s * shape_loss_of(self.mesh, n)
    }

    fn gradient(&self, n: &[Vec2]) -> Vec<Vec2> {
        let c = &self.cfg;
        let mut g = vec![Vec2::ZERO; n.len()];
        for (k, nb) in self.neighbours.iter().enumerate() {
            for &j in nb {
                let r = n[k] - self.points[j].motion;
                g[k] += Vec2::new(huber_slope(r.dx, c.huber_delta), huber_slope(r.dy, c.huber_delta)) * c.lambda_m;
            }
        }
        for pt in &self.points {
            let r = pt.motion - self.reconstruct(pt, n);
            for (&v, &w) in pt.vertices.iter().zip(&pt.weights) {
                g[v] -= r * (2.0 * c.lambda_v * w);
            }
        }
        let s = self.mesh.cell_height() / self.mesh.cell_width();
        for cell in 0..self.mesh.cell_count() {
            let [a, b, cc, _] = self.mesh.cell_vertices(cell);
            let e = shape_residual(self.mesh, [n[a], n[b], n[cc]]);
            // e = v3 − v2 − s·R(v1 − v2), R(x, y) = (y, −x); Rᵀ(x, y) = (−y, x)
            let rt = Vec2::new(-e.dy, e.dx) * s;
            let k = 2.0 * c.lambda_s;
            g[cc] += e * k;
            g[b] -= e * k;
            g[a] -= rt * k;
            g[b] += rt * k;
        }
        g
    }

    /// Minimizes the quadratic majorizer at `n0` plus `μ|n − n0|²`.
    fn mm_step(&self, n0: &[Vec2], prox: f64) -> Result<Vec<Vec2>> {
        let c = &self.cfg;
        let nv = n0.len();
        let vcols = self.mesh.vertex_cols();
        let mut a = banded::Banded::new(2 * nv, 2 * vcols + 3);
        let mut b = vec![0.0; 2 * nv];
        let idx = |v: usize, d: usize| 2 * v + d;

        for (k, nb) in self.neighbours.iter().enumerate() {
            for &j in nb {
                let m = self.points[j].motion;
                for d in 0..2 {
                    let r0 = n0[k].component(d) - m.component(d);
                    let w = c.lambda_m / r0.abs().max(c.huber_delta);
                    a.add(idx(k, d), idx(k, d), w);
                    b[idx(k, d)] += w * m.component(d);
                }
            }
        }
        for pt in &self.points {
            for d in 0..2 {
                for (&vi, &wi) in pt.vertices.iter().zip(&pt.weights) {
                    b[idx(vi, d)] += 2.0 * c.lambda_v * wi * pt.motion.component(d);
                    for (&vj, &wj) in pt.vertices.iter().zip(&pt.weights) {
                        if idx(vi, d) >= idx(vj, d) {
                            a.add(idx(vi, d), idx(vj, d), 2.0 * c.lambda_v * wi * wj);
                        }
                    }
                }
            }
        }
        let s = self.mesh.cell_height() / self.mesh.cell_width();
        for cell in 0..self.mesh.cell_count() {
            let [v1, v2, v3, _] = self.mesh.cell_vertices(cell);
            // e_x = n3x − n2x − s(n1y − n2y), e_y = n3y − n2y + s(n1x − n2x)
            let rows: [[(usize, f64); 4]; 2] = [
                [(idx(v3, 0), 1.0), (idx(v2, 0), -1.0), (idx(v1, 1), -s), (idx(v2, 1), s)],
                [(idx(v3, 1), 1.0), (idx(v2, 1), -1.0), (idx(v1, 0), s), (idx(v2, 0), -s)],
            ];
            for coeffs in rows {
                for &(i, ci) in &coeffs {
                    for &(j, cj) in &coeffs {
                        if i >= j {
                            a.add(i, j, 2.0 * c.lambda_s * ci * cj);
                        }
                    }
                }
            }
        }
        for v in 0..nv {
            for d in 0..2 {
                a.add(idx(v, d), idx(v, d), 2.0 * prox);
                b[idx(v, d)] += 2.0 * prox * n0[v].component(d);
            }
        }
        let x = a.solve(b).ok_or(Error::NonFiniteObjective)?;
        Ok((0..nv).map(|v| Vec2::new(x[idx(v, 0)], x[idx(v, 1)])).collect())
    }
}

mod banded {
    /// Symmetric positive definite matrix stored as its lower band.
    pub struct Banded {
        n: usize,
        bw: usize,
        data: Vec<f64>,
    }

    impl Banded {
        pub fn new(n: usize, bw: usize) -> Self {
            Self {
                n,
                bw,
                data: vec![0.0; n * (bw + 1)],
            }
        }

        fn at(&self, i: usize, j: usize) -> usize {
            debug_assert!(i >= j && i - j <= self.bw);
            i * (self.bw + 1) + (i - j)
        }

        pub fn add(&mut self, i: usize, j: usize, v: f64) {
            let (i, j) = if i >= j { (i, j) } else { (j, i) };
            let k = self.at(i, j);
            self.data[k] += v;
        }

        /// Cholesky factorization and solve; `None` if not positive definite.
        pub fn solve(mut self, mut b: Vec<f64>) -> Option<Vec<f64>> {
            let (n, bw) = (self.n, self.bw);
            for i in 0..n {
                let lo = i.saturating_sub(bw);
                for j in lo..=i {
                    let mut sum = self.data[self.at(i, j)];
                    for k in lo.max(j.saturating_sub(bw))..j {
                        sum -= self.data[self.at(i, k)] * self.data[self.at(j, k)];
                    }
                    if i == j {
                        if !(sum > 0.0) {
                            return None;
                        }
                        let k = self.at(i, i);
                        self.data[k] = sum.sqrt();
                    } else {
                        let k = self.at(i, j);
                        self.data[k] = sum / self.data[self.at(j, j)];
                    }
                }
            }
            for i in 0..n {
                let mut sum = b[i];
                for k in i.saturating_sub(bw)..i {
                    sum -= self.data[self.at(i, k)] * b[k];
                }
                b[i] = sum / self.data[self.at(i, i)];
            }
            for i in (0..n).rev() {
                let mut sum = b[i];
                for k in i + 1..(i + bw + 1).min(n) {
                    sum -= self.data[self.at(k, i)] * b[k];
                }
                b[i] = sum / self.data[self.at(i, i)];
            }
            b.iter().all(|v| v.is_finite()).then_some(b)
        }
    }
}

fn check_field(motion: &GridMotionField, mesh: &GridMesh) -> Result<()> {
    if !motion.matches(mesh) {
        return Err(Error::ShapeMismatch(format!(
            "motion field {}x{} vs mesh vertices {}x{}",
            motion.vertex_rows,
            motion.vertex_cols,
            mesh.vertex_rows(),
            mesh.vertex_cols()
        )));
    }
    Ok(())
}

pub fn mr_objective(
    motion: &GridMotionField,
    kps: &KeypointSet,
    mask: &OcclusionMask,
    mesh: &GridMesh,
    cfg: &RefinementConfig,
) -> Result<f64> {
    check_field(motion, mesh)?;
    Ok(Problem::new(kps, mask, mesh, cfg)?.objective(&motion.motions))
}

/// Analytic gradient of [`mr_objective`] with respect to each vertex motion.
pub fn mr_gradient(
    motion: &GridMotionField,
    kps: &KeypointSet,
    mask: &OcclusionMask,
    mesh: &GridMesh,
    cfg: &RefinementConfig,
) -> Result<Vec<Vec2>> {
    check_field(motion, mesh)?;
    Ok(Problem::new(kps, mask, mesh, cfg)?.gradient(&motion.motions))
}

fn inf_norm(g: &[Vec2]) -> f64 {
    g.iter().fold(0.0, |acc, v| acc.max(v.dx.abs()).max(v.dy.abs()))
}

/// Refines the initialized motion. Steps are accepted only when they do not
/// increase the objective; iteration stops once the gradient is below the
/// tolerance, a step stalls, or the iteration budget runs out.
pub fn refine(
    initial: &GridMotionField,
    kps: &KeypointSet,
    mask: &OcclusionMask,
    mesh: &GridMesh,
    cfg: &RefinementConfig,
) -> Result<GridMotionField> {
    check_field(initial, mesh)?;
    let problem = Problem::new(kps, mask, mesh, cfg)?;
    let mut n = initial.motions.clone();
    let mut value = problem.objective(&n);
    if !value.is_finite() {
        return Err(Error::NonFiniteObjective);
    }
    let prox = 1e-6 * (cfg.lambda_m + cfg.lambda_v + cfg.lambda_s).max(1.0);
    for _ in 0..cfg.max_iterations {
        if inf_norm(&problem.gradient(&n)) < cfg.tolerance {
            break;
        }
        let candidate = problem.mm_step(&n, prox)?;
        let next = problem.objective(&candidate);
        if !next.is_finite() {
            return Err(Error::NonFiniteObjective);
        }
        if next > value {
            break;
        }
        let stalled = value - next <= 1e-12 * value.abs().max(1.0);
        n = candidate;
        value = next;
        if stalled {
            break;
        }
    }
    Ok(GridMotionField {
        frame: initial.frame,
        vertex_rows: initial.vertex_rows,
        vertex_cols: initial.vertex_cols,
        motions: n,
        stage: MotionStage::Refined,
    })
}
