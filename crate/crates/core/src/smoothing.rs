//! Grid trajectories and the iterative kernel smoother.
//!
//! Each step computes, per vertex and dimension,
//!
//! ```text
//! T̂ᵗ(i) = (T(i) + λ(i) Σj w(i,j) T̂ᵗ⁻¹(j)) / (1 + λ(i) Σj w(i,j))
//! ```
//!
//! over the neighbours `j` within three frames of `i`.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frontend::KeypointSet;
use crate::geometry::{fit_homography_dlt, interpolate_corners, GridMesh, Homography, Vec2};
use crate::plane::GridMotionField;
use crate::refine::shape_loss_of;

pub const KERNEL_RADIUS: usize = 3;
/// Neighbour slots per dimension: offsets −3, −2, −1, +1, +2, +3.
pub const KERNEL_SLOTS: usize = 2 * KERNEL_RADIUS;
const KERNEL_MAGIC: &[u8; 4] = b"DUTK";

fn slot_offset(slot: usize) -> isize {
    let s = slot as isize - KERNEL_RADIUS as isize;
    if s >= 0 {
        s + 1
    } else {
        s
    }
}

/// Cumulative vertex positions `T[i][k]`, frame-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryField {
    pub frames: usize,
    pub vertex_rows: usize,
    pub vertex_cols: usize,
    pub points: Vec<Vec2>,
}

impl TrajectoryField {
    pub fn zeros(frames: usize, vertex_rows: usize, vertex_cols: usize) -> Self {
        Self {
            frames,
            vertex_rows,
            vertex_cols,
            points: vec![Vec2::ZERO; frames * vertex_rows * vertex_cols],
        }
    }

    pub fn vertex_count(&self) -> usize {
        self.vertex_rows * self.vertex_cols
    }

    pub fn at(&self, frame: usize, vertex: usize) -> Vec2 {
        self.points[frame * self.vertex_count() + vertex]
    }

    pub fn set(&mut self, frame: usize, vertex: usize, v: Vec2) {
        let n = self.vertex_count();
        self.points[frame * n + vertex] = v;
    }

    pub fn frame(&self, frame: usize) -> &[Vec2] {
        let n = self.vertex_count();
        &self.points[frame * n..(frame + 1) * n]
    }

    /// The path of one vertex across all frames.
    pub fn vertex_path(&self, vertex: usize) -> Vec<Vec2> {
        (0..self.frames).map(|i| self.at(i, vertex)).collect()
    }

    pub fn same_shape(&self, other: &Self) -> bool {
        self.frames == other.frames && self.vertex_rows == other.vertex_rows && self.vertex_cols == other.vertex_cols
    }

    pub fn matches(&self, mesh: &GridMesh) -> bool {
        self.vertex_rows == mesh.vertex_rows() && self.vertex_cols == mesh.vertex_cols()
    }

    /// Per-frame, per-vertex difference `self − other`.
    pub fn displacement_from(&self, other: &Self) -> Result<Vec<Vec<Vec2>>> {
        if !self.same_shape(other) {
            return Err(Error::ShapeMismatch("trajectory shapes differ".into()));
        }
        Ok((0..self.frames)
            .map(|i| self.frame(i).iter().zip(other.frame(i)).map(|(&a, &b)| a - b).collect())
            .collect())
    }
}

/// Prefix sums of the per-pair motions with the first frame anchored at zero.
pub fn accumulate(motions: &[GridMotionField]) -> Result<TrajectoryField> {
    let Some(first) = motions.first() else {
        return Err(Error::TooShort { needed: 1, got: 0 });
    };
    let (rows, cols) = (first.vertex_rows, first.vertex_cols);
    let n = rows * cols;
    let mut traj = TrajectoryField::zeros(motions.len() + 1, rows, cols);
    for (i, m) in motions.iter().enumerate() {
        if m.vertex_rows != rows || m.vertex_cols != cols || m.motions.len() != n {
            return Err(Error::ShapeMismatch(format!(
                "motion field {i} is {}x{}, expected {rows}x{cols}",
                m.vertex_rows, m.vertex_cols
            )));
        }
        for k in 0..n {
            let prev = traj.at(i, k);
            traj.set(i + 1, k, prev + m.motions[k]);
        }
    }
    Ok(traj)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KernelMode {
    Uniform,
    Bilateral,
    External,
}

impl std::str::FromStr for KernelMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "uniform" => Ok(Self::Uniform),
            "bilateral" => Ok(Self::Bilateral),
            "external" => Ok(Self::External),
            other => Err(Error::Config(format!("unknown kernel mode `{other}`"))),
        }
    }
}

impl std::fmt::Display for KernelMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Uniform => "uniform",
            Self::Bilateral => "bilateral",
            Self::External => "external",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SmoothingConfig {
    pub iterations: usize,
    pub lambda: f64,
    pub lambda_s: f64,
    pub lambda_c: f64,
    pub mode: KernelMode,
    pub sigma_t: f64,
    pub sigma_m: f64,
    pub kernel_file: Option<PathBuf>,
}

impl Default for SmoothingConfig {
    fn default() -> Self {
        Self {
            iterations: 15,
            lambda: 15.0,
            lambda_s: 40.0,
            lambda_c: 20.0,
            mode: KernelMode::Bilateral,
            sigma_t: 1.5,
            sigma_m: 20.0,
            kernel_file: None,
        }
    }
}

/// Per-frame, per-vertex balance `λ` and twelve neighbour weights.
#[derive(Debug, Clone, PartialEq)]
pub struct SmoothingKernel {
    pub frames: usize,
    pub vertex_count: usize,
    pub lambda: Vec<f64>,
    /// `[x weights for offsets −3..+3 without 0, then y weights]` per (i, k).
    pub weights: Vec<[f64; 2 * KERNEL_SLOTS]>,
}

impl SmoothingKernel {
    pub fn uniform(frames: usize, vertex_count: usize, lambda: f64) -> Self {
        let mut kernel = Self {
            frames,
            vertex_count,
            lambda: vec![lambda; frames * vertex_count],
            weights: vec![[1.0; 2 * KERNEL_SLOTS]; frames * vertex_count],
        };
        kernel.clip_boundaries();
        kernel
    }

    pub fn weight(&self, frame: usize, vertex: usize, dim: usize, offset: isize) -> f64 {
        let slot = if offset < 0 {
            (offset + KERNEL_RADIUS as isize) as usize
        } else {
            (offset + KERNEL_RADIUS as isize - 1) as usize
        };
        self.weights[frame * self.vertex_count + vertex][dim * KERNEL_SLOTS + slot]
    }

    fn clip_boundaries(&mut self) {
        for i in 0..self.frames {
            for k in 0..self.vertex_count {
                let w = &mut self.weights[i * self.vertex_count + k];
                for slot in 0..KERNEL_SLOTS {
                    let j = i as isize + slot_offset(slot);
                    if j < 0 || j >= self.frames as isize {
                        w[slot] = 0.0;
                        w[KERNEL_SLOTS + slot] = 0.0;
                    }
                }
            }
        }
    }

    fn validate(&self) -> Result<()> {
        let n = self.frames * self.vertex_count;
        if self.lambda.len() != n || self.weights.len() != n {
            return Err(Error::BadKernelFile(format!("expected {n} entries")));
        }
        let ok = self.lambda.iter().all(|l| l.is_finite() && *l >= 0.0)
            && self.weights.iter().flatten().all(|w| w.is_finite() && *w >= 0.0);
        if !ok {
            return Err(Error::BadKernelFile("weights must be finite and non-negative".into()));
        }
        Ok(())
    }
}

fn bilateral_kernel(traj: &TrajectoryField, cfg: &SmoothingConfig) -> Result<SmoothingKernel> {
    if !(cfg.sigma_t > 0.0 && cfg.sigma_m > 0.0) {
        return Err(Error::Config("bilateral sigmas must be positive".into()));
    }
    let (e, n) = (traj.frames, traj.vertex_count());
    let mut kernel = SmoothingKernel::uniform(e, n, cfg.lambda);
    for i in 0..e {
        let lo = i.saturating_sub(KERNEL_RADIUS);
        let hi = (i + KERNEL_RADIUS).min(e - 1);
        for k in 0..n {
            let mean_velocity = if hi > lo {
                (traj.at(hi, k) - traj.at(lo, k)) * (1.0 / (hi - lo) as f64)
            } else {
                Vec2::ZERO
            };
            let w = &mut kernel.weights[i * n + k];
            for slot in 0..KERNEL_SLOTS {
                let off = slot_offset(slot);
                let j = i as isize + off;
                if j < 0 || j >= e as isize {
                    continue;
                }
                let temporal = (-(off * off) as f64 / (2.0 * cfg.sigma_t * cfg.sigma_t)).exp();
                let diff = traj.at(i, k) - traj.at(j as usize, k);
                for d in 0..2 {
                    let r = diff.component(d) - mean_velocity.component(d) * (-off) as f64;
                    w[d * KERNEL_SLOTS + slot] = temporal * (-r * r / (2.0 * cfg.sigma_m * cfg.sigma_m)).exp();
                }
            }
        }
    }
    Ok(kernel)
}

pub fn predict_kernel(traj: &TrajectoryField, cfg: &SmoothingConfig) -> Result<SmoothingKernel> {
    match cfg.mode {
        KernelMode::Uniform => Ok(SmoothingKernel::uniform(traj.frames, traj.vertex_count(), cfg.lambda)),
        KernelMode::Bilateral => bilateral_kernel(traj, cfg),
        KernelMode::External => {
            let path = cfg
                .kernel_file
                .as_deref()
                .ok_or_else(|| Error::BadKernelFile("external mode needs a kernel file".into()))?;
            let kernel = read_kernel(path)?;
            if kernel.frames != traj.frames || kernel.vertex_count != traj.vertex_count() {
                return Err(Error::BadKernelFile(format!(
                    "kernel covers {} frames x {} vertices, trajectory has {} x {}",
                    kernel.frames,
                    kernel.vertex_count,
                    traj.frames,
                    traj.vertex_count()
                )));
            }
            Ok(kernel)
        }
    }
}

/// One Jacobi step. The update is written as `T + λΣw(T̂ⱼ − T)/(1 + λΣw)`,
/// which is the same quantity but leaves constant paths bit-exact.
pub fn smooth_step(traj: &TrajectoryField, current: &TrajectoryField, kernel: &SmoothingKernel) -> Result<TrajectoryField> {
    if !traj.same_shape(current) || kernel.frames != traj.frames || kernel.vertex_count != traj.vertex_count() {
        return Err(Error::ShapeMismatch("trajectory, iterate and kernel shapes differ".into()));
    }
    let (e, n) = (traj.frames, traj.vertex_count());
    let mut out = traj.clone();
    for i in 0..e {
        for k in 0..n {
            let lambda = kernel.lambda[i * n + k];
            let w = &kernel.weights[i * n + k];
            let t = traj.at(i, k);
            let mut next = t;
            for d in 0..2 {
                let (mut pull, mut total) = (0.0, 0.0);
                for slot in 0..KERNEL_SLOTS {
                    let wij = w[d * KERNEL_SLOTS + slot];
                    if wij == 0.0 {
                        continue;
                    }
                    let j = (i as isize + slot_offset(slot)) as usize;
                    pull += wij * (current.at(j, k).component(d) - t.component(d));
                    total += wij;
                }
                *next.component_mut(d) += lambda * pull / (1.0 + lambda * total);
            }
            out.set(i, k, next);
        }
    }
    Ok(out)
}

pub fn smooth_with(traj: &TrajectoryField, kernel: &SmoothingKernel, iterations: usize) -> Result<TrajectoryField> {
    kernel.validate()?;
    let mut current = traj.clone();
    for _ in 0..iterations {
        current = smooth_step(traj, &current, kernel)?;
    }
    Ok(current)
}

/// Predicts a kernel for `traj` and runs `cfg.iterations` steps from `T̂⁰ = T`.
pub fn smooth(traj: &TrajectoryField, cfg: &SmoothingConfig) -> Result<TrajectoryField> {
    if cfg.iterations == 0 {
        return Err(Error::Config("smoothing needs at least one iteration".into()));
    }
    let kernel = predict_kernel(traj, cfg)?;
    smooth_with(traj, &kernel, cfg.iterations)
}

/// Homography of one cell from its four corner correspondences `v → v + B`.
fn cell_homography(mesh: &GridMesh, disp: &[Vec2], cell: usize) -> Result<Homography> {
    let corners = mesh.cell_vertices(cell);
    let b0 = disp[corners[0]];
    if corners.iter().all(|&v| disp[v] == b0) {
        return Ok(Homography::translation(b0.dx, b0.dy));
    }
    let src: Vec<_> = corners.iter().map(|&v| mesh.vertices()[v]).collect();
    let dst: Vec<_> = corners.iter().map(|&v| mesh.vertices()[v] + disp[v]).collect();
    fit_homography_dlt(&src, &dst)
}

/// Terms of the smoothing diagnostic objective.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TsObjective {
    pub distance: f64,
    pub smoothness: f64,
    pub shape: f64,
    pub content: f64,
    pub total: f64,
}

/// `Lts + λs·Lsp + λc·Lcp` for a smoothed trajectory. `keypoints` holds one
/// set per frame pair, matched to frames by their index.
pub fn ts_objective(
    traj: &TrajectoryField,
    smoothed: &TrajectoryField,
    keypoints: &[KeypointSet],
    mesh: &GridMesh,
    kernel: &SmoothingKernel,
    cfg: &SmoothingConfig,
) -> Result<TsObjective> {
    if !traj.same_shape(smoothed) || !traj.matches(mesh) {
        return Err(Error::ShapeMismatch("trajectories do not match each other or the mesh".into()));
    }
    if kernel.frames != traj.frames || kernel.vertex_count != traj.vertex_count() {
        return Err(Error::ShapeMismatch("kernel does not match trajectory".into()));
    }
    let (e, n) = (traj.frames, traj.vertex_count());
    let mut distance = 0.0;
    let mut smoothness = 0.0;
    for i in 0..e {
        for k in 0..n {
            distance += (smoothed.at(i, k) - traj.at(i, k)).norm_squared();
            let lambda = kernel.lambda[i * n + k];
            for d in 0..2 {
                for slot in 0..KERNEL_SLOTS {
                    let w = kernel.weights[i * n + k][d * KERNEL_SLOTS + slot];
                    if w == 0.0 {
                        continue;
                    }
                    let j = (i as isize + slot_offset(slot)) as usize;
                    let diff = smoothed.at(i, k).component(d) - smoothed.at(j, k).component(d);
                    smoothness += lambda * w * diff * diff;
                }
            }
        }
    }
    let disp = smoothed.displacement_from(traj)?;
    let shape: f64 = disp.iter().map(|b| shape_loss_of(mesh, b)).sum();
    let mut content = 0.0;
    for kps in keypoints {
        let Some(b) = disp.get(kps.frame) else {
            return Err(Error::ShapeMismatch(format!("keypoints for frame {} beyond trajectory", kps.frame)));
        };
        let mut cache: Vec<Option<Homography>> = vec![None; mesh.cell_count()];
        for p in kps.positions() {
            let cw = mesh.weights_clamped(p);
            let h = match cache[cw.cell] {
                Some(h) => h,
                None => *cache[cw.cell].insert(cell_homography(mesh, b, cw.cell)?),
            };
            let bili = p + interpolate_corners(&cw, b);
            content += (bili - h.apply(p)?).norm_squared();
        }
    }
    let total = distance + smoothness + cfg.lambda_s * shape + cfg.lambda_c * content;
    Ok(TsObjective {
        distance,
        smoothness,
        shape,
        content,
        total,
    })
}

pub fn encode_kernel(kernel: &SmoothingKernel, vertex_rows: usize, vertex_cols: usize) -> Result<Vec<u8>> {
    if vertex_rows * vertex_cols != kernel.vertex_count {
        return Err(Error::ShapeMismatch(format!(
            "{vertex_rows}x{vertex_cols} grid for {} vertices",
            kernel.vertex_count
        )));
    }
    let mut out = Vec::with_capacity(16 + kernel.lambda.len() * 4 * (1 + 2 * KERNEL_SLOTS));
    out.extend_from_slice(KERNEL_MAGIC);
    for v in [kernel.frames, vertex_rows, vertex_cols] {
        out.extend_from_slice(&(v as u32).to_le_bytes());
    }
    for (l, w) in kernel.lambda.iter().zip(&kernel.weights) {
        out.extend_from_slice(&(*l as f32).to_le_bytes());
        for x in w {
            out.extend_from_slice(&(*x as f32).to_le_bytes());
        }
    }
    Ok(out)
}

pub fn decode_kernel(bytes: &[u8]) -> Result<SmoothingKernel> {
    let bad = |m: &str| Error::BadKernelFile(m.to_string());
    if bytes.len() < 16 || &bytes[..4] != KERNEL_MAGIC {
        return Err(bad("missing DUTK header"));
    }
    let word = |i: usize| u32::from_le_bytes(bytes[4 + 4 * i..8 + 4 * i].try_into().expect("4 bytes")) as usize;
    let (frames, rows, cols) = (word(0), word(1), word(2));
    let entries = frames
        .checked_mul(rows)
        .and_then(|x| x.checked_mul(cols))
        .ok_or_else(|| bad("dimensions overflow"))?;
    let record = 4 * (1 + 2 * KERNEL_SLOTS);
    if entries.checked_mul(record).map(|b| b + 16) != Some(bytes.len()) {
        return Err(bad("payload length does not match header"));
    }
    let mut lambda = Vec::with_capacity(entries);
    let mut weights = Vec::with_capacity(entries);
    for rec in bytes[16..].chunks_exact(record) {
        let mut vals = rec.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64);
        lambda.push(vals.next().expect("lambda"));
        let mut w = [0.0; 2 * KERNEL_SLOTS];
        for (dst, src) in w.iter_mut().zip(vals) {
            *dst = src;
        }
        weights.push(w);
    }
    let kernel = SmoothingKernel {
        frames,
        vertex_count: rows * cols,
        lambda,
        weights,
    };
    kernel.validate()?;
    Ok(kernel)
}

pub fn write_kernel(path: &Path, kernel: &SmoothingKernel, vertex_rows: usize, vertex_cols: usize) -> Result<()> {
    fs::write(path, encode_kernel(kernel, vertex_rows, vertex_cols)?).map_err(|e| Error::io(path, e))
}

pub fn read_kernel(path: &Path) -> Result<SmoothingKernel> {
    decode_kernel(&fs::read(path).map_err(|e| Error::io(path, e))?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn scalar_traj(values: &[f64]) -> TrajectoryField {
        TrajectoryField {
            frames: values.len(),
            vertex_rows: 1,
            vertex_cols: 1,
            points: values.iter().map(|&v| Vec2::new(v, -v)).collect(),
        }
    }

    fn random_traj(seed: u64, frames: usize) -> TrajectoryField {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut t = TrajectoryField::zeros(frames, 3, 3);
        for p in &mut t.points {
            *p = Vec2::new(rng.random_range(-20.0..20.0), rng.random_range(-20.0..20.0));
        }
        t
    }

    #[test]
    fn accumulate_prefix_sums() {
        let mesh = GridMesh::new(10.0, 10.0, 2, 2).unwrap();
        let motions: Vec<_> = (0..4).map(|i| GridMotionField::uniform(i, &mesh, Vec2::new(1.0, 0.0))).collect();
        let t = accumulate(&motions).unwrap();
        assert_eq!(t.frames, 5);
        for i in 0..5 {
            assert_eq!(t.at(i, 4), Vec2::new(i as f64, 0.0));
        }
        let zero: Vec<_> = (0..3).map(|i| GridMotionField::uniform(i, &mesh, Vec2::ZERO)).collect();
        assert!(accumulate(&zero).unwrap().points.iter().all(|&p| p == Vec2::ZERO));
    }

    #[test]
    fn accumulate_rejects_mixed_shapes() {
        let a = GridMesh::new(10.0, 10.0, 2, 2).unwrap();
        let b = GridMesh::new(10.0, 10.0, 3, 2).unwrap();
        let motions = [GridMotionField::uniform(0, &a, Vec2::ZERO), GridMotionField::uniform(1, &b, Vec2::ZERO)];
        assert!(matches!(accumulate(&motions), Err(Error::ShapeMismatch(_))));
    }

    #[test]
    fn uniform_kernel_interior_and_boundary() {
        let k = SmoothingKernel::uniform(10, 1, 15.0);
        for off in [-3, -2, -1, 1, 2, 3] {
            assert_eq!(k.weight(5, 0, 0, off), 1.0);
        }
        for off in [-3, -2, -1] {
            assert_eq!(k.weight(0, 0, 1, off), 0.0);
        }
        assert_eq!(k.weight(0, 0, 1, 1), 1.0);
    }

    #[test]
    fn bilateral_on_linear_path_is_temporal_gaussian() {
        let t = scalar_traj(&(0..12).map(|i| 2.5 * i as f64 + 1.0).collect::<Vec<_>>());
        let cfg = SmoothingConfig::default();
        let k = predict_kernel(&t, &cfg).unwrap();
        let expected = (-1.0 / (2.0 * cfg.sigma_t * cfg.sigma_t)).exp();
        for d in 0..2 {
            assert!((k.weight(6, 0, d, 1) - expected).abs() < 1e-12);
            assert!((k.weight(6, 0, d, -1) - expected).abs() < 1e-12);
        }
        assert_eq!(k.weight(0, 0, 0, -1), 0.0);
    }

    #[test]
    fn step_matches_hand_value() {
        let t = scalar_traj(&[0.0, 10.0, 0.0]);
        let mut k = SmoothingKernel::uniform(3, 1, 1.0);
        // restrict the window to ±1
        for w in &mut k.weights {
            for d in 0..2 {
                w[d * KERNEL_SLOTS] = 0.0;
                w[d * KERNEL_SLOTS + 1] = 0.0;
                w[d * KERNEL_SLOTS + 4] = 0.0;
                w[d * KERNEL_SLOTS + 5] = 0.0;
            }
        }
        let out = smooth_step(&t, &t, &k).unwrap();
        assert!((out.at(1, 0).dx - 10.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn one_iteration_is_one_step() {
        let t = random_traj(1, 12);
        let cfg = SmoothingConfig {
            iterations: 1,
            ..SmoothingConfig::default()
        };
        let k = predict_kernel(&t, &cfg).unwrap();
        assert_eq!(smooth(&t, &cfg).unwrap(), smooth_step(&t, &t, &k).unwrap());
    }

    #[test]
    fn constant_path_is_exact_fixed_point() {
        let mut t = TrajectoryField::zeros(20, 2, 2);
        t.points.iter_mut().for_each(|p| *p = Vec2::new(3.7, -11.3));
        for mode in [KernelMode::Uniform, KernelMode::Bilateral] {
            let cfg = SmoothingConfig {
                mode,
                ..SmoothingConfig::default()
            };
            assert_eq!(smooth(&t, &cfg).unwrap(), t);
        }
    }

    #[test]
    fn linear_path_fixed_in_interior() {
        let t = scalar_traj(&(0..30).map(|i| 0.7 * i as f64 - 4.0).collect::<Vec<_>>());
        let k = SmoothingKernel::uniform(30, 1, 15.0);
        let out = smooth_step(&t, &t, &k).unwrap();
        for i in 3..27 {
            assert!((out.at(i, 0) - t.at(i, 0)).norm() < 1e-9);
        }
    }

    #[test]
    fn jacobi_converges_to_dense_solve() {
        let t = random_traj(2, 30);
        let lambda = 1.0;
        let k = SmoothingKernel::uniform(30, t.vertex_count(), lambda);
        let out = smooth_with(&t, &k, 500).unwrap();
        // (I + λL) x = T over unordered neighbour pairs
        let e = t.frames;
        let mut a = nalgebra::DMatrix::<f64>::identity(e, e);
        for i in 0..e {
            for j in 0..e {
                if i != j && i.abs_diff(j) <= KERNEL_RADIUS {
                    a[(i, i)] += lambda;
                    a[(i, j)] -= lambda;
                }
            }
        }
        let lu = a.lu();
        for v in 0..t.vertex_count() {
            for d in 0..2 {
                let rhs = nalgebra::DVector::from_iterator(e, (0..e).map(|i| t.at(i, v).component(d)));
                let x = lu.solve(&rhs).unwrap();
                for i in 0..e {
                    assert!((x[i] - out.at(i, v).component(d)).abs() < 1e-9);
                }
            }
        }
    }

    fn second_difference_energy(t: &TrajectoryField) -> f64 {
        let mut s = 0.0;
        for k in 0..t.vertex_count() {
            for i in 1..t.frames - 1 {
                s += (t.at(i + 1, k) - t.at(i, k) * 2.0 + t.at(i - 1, k)).norm_squared();
            }
        }
        s
    }

    #[test]
    fn smoothing_reduces_second_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut t = TrajectoryField::zeros(60, 2, 2);
        for i in 0..60 {
            for k in 0..4 {
                let jitter = Vec2::new(rng.random_range(-8.0..8.0), rng.random_range(-8.0..8.0));
                t.set(i, k, Vec2::new(1.5 * i as f64, -0.5 * i as f64) + jitter);
            }
        }
        let cfg = SmoothingConfig {
            mode: KernelMode::Uniform,
            ..SmoothingConfig::default()
        };
        let out = smooth(&t, &cfg).unwrap();
        assert!(second_difference_energy(&out) <= second_difference_energy(&t));
    }

    #[test]
    fn ts_objective_terms() {
        let mesh = GridMesh::new(40.0, 40.0, 2, 2).unwrap();
        let mut t = random_traj(3, 8);
        t.points.iter_mut().for_each(|p| *p = Vec2::new(p.dx.round(), p.dy.round()));
        let kps = vec![KeypointSet::from_motions(2, [(crate::geometry::Point2::new(13.0, 27.0), Vec2::ZERO)])];
        let cfg = SmoothingConfig::default();
        let k = SmoothingKernel::uniform(8, 9, cfg.lambda);
        let same = ts_objective(&t, &t, &kps, &mesh, &k, &cfg).unwrap();
        assert_eq!((same.distance, same.shape, same.content), (0.0, 0.0, 0.0));

        let mut shifted = t.clone();
        shifted.points.iter_mut().for_each(|p| *p += Vec2::new(4.0, -3.0));
        let o = ts_objective(&t, &shifted, &kps, &mesh, &k, &cfg).unwrap();
        assert_eq!((o.shape, o.content), (0.0, 0.0));
        assert!((o.distance - 8.0 * 9.0 * 25.0).abs() < 1e-9);

        let flat = TrajectoryField::zeros(8, 3, 3);
        let o = ts_objective(&t, &flat, &[], &mesh, &k, &cfg).unwrap();
        assert_eq!(o.smoothness, 0.0);
        let expected: f64 = t.points.iter().map(|p| p.norm_squared()).sum();
        assert!((o.distance - expected).abs() < 1e-9);
    }

    #[test]
    fn external_kernel_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("k.dutk");
        let t = random_traj(4, 10);
        let k = predict_kernel(&t, &SmoothingConfig::default()).unwrap();
        write_kernel(&path, &k, 3, 3).unwrap();
        let cfg = SmoothingConfig {
            mode: KernelMode::External,
            kernel_file: Some(path),
            ..SmoothingConfig::default()
        };
        let back = predict_kernel(&t, &cfg).unwrap();
        for (a, b) in k.weights.iter().flatten().zip(back.weights.iter().flatten()) {
            assert_eq!(*a as f32 as f64, *b);
        }
        let short = random_traj(4, 9);
        assert!(matches!(predict_kernel(&short, &cfg), Err(Error::BadKernelFile(_))));
    }

    #[test]
    fn kernel_file_rejections() {
        assert!(matches!(decode_kernel(b"DUTX\0\0\0\0\0\0\0\0\0\0\0\0"), Err(Error::BadKernelFile(_))));
        let k = SmoothingKernel::uniform(2, 1, 1.0);
        let mut bytes = encode_kernel(&k, 1, 1).unwrap();
        bytes.pop();
        assert!(matches!(decode_kernel(&bytes), Err(Error::BadKernelFile(_))));
        let mut neg = k.clone();
        neg.lambda[0] = -1.0;
        assert!(matches!(decode_kernel(&encode_kernel(&neg, 1, 1).unwrap()), Err(Error::BadKernelFile(_))));
    }

    proptest! {
        #[test]
        fn shift_equivariance(seed in 0u64..1000, cx in -100.0f64..100.0, cy in -100.0f64..100.0) {
            let t = random_traj(seed, 16);
            let c = Vec2::new(cx, cy);
            let mut shifted = t.clone();
            shifted.points.iter_mut().for_each(|p| *p += c);
            let cfg = SmoothingConfig { mode: KernelMode::Uniform, ..SmoothingConfig::default() };
            let a = smooth(&t, &cfg).unwrap();
            let b = smooth(&shifted, &cfg).unwrap();
            for (x, y) in a.points.iter().zip(&b.points) {
                prop_assert!((*y - *x - c).norm() < 1e-9);
            }
        }

        #[test]
        fn accumulate_matches_running_sum(seed in 0u64..1000, pairs in 1usize..12) {
            let mesh = GridMesh::new(30.0, 30.0, 2, 2).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let motions: Vec<_> = (0..pairs).map(|i| {
                let mut f = GridMotionField::uniform(i, &mesh, Vec2::ZERO);
                f.motions.iter_mut().for_each(|m| *m = Vec2::new(rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0)));
                f
            }).collect();
            let t = accumulate(&motions).unwrap();
            for k in 0..9 {
                let mut run = Vec2::ZERO;
                prop_assert_eq!(t.at(0, k), Vec2::ZERO);
                for (i, m) in motions.iter().enumerate() {
                    run += m.motions[k];
                    prop_assert_eq!(t.at(i + 1, k), run);
                }
            }
        }
    }
}
