//! wasm-bindgen bindings for the browser demo in `www/`.
//!
//! Arrays cross the boundary flat: points and vectors as `[x0, y0, x1, y1, ...]`,
//! images as row-major 8-bit grayscale.

use meshstab::frontend::{Frame, KeypointSet};
use meshstab::pipeline::{procedural_texture, PipelineConfig, SyntheticSpec};
use meshstab::plane::{assign_grids, cluster_motions};
use meshstab::smoothing::{smooth, KernelMode, SmoothingConfig, TrajectoryField};
use meshstab::warp::{common_crop, reproject, DisplacementField};
use meshstab::{GridMesh, Point2, Vec2};
use wasm_bindgen::prelude::*;

fn js(e: meshstab::Error) -> JsError {
    JsError::new(&e.to_string())
}

fn pairs(flat: &[f64]) -> Result<Vec<Vec2>, JsError> {
    if flat.len() % 2 != 0 {
        return Err(JsError::new("expected an even number of coordinates"));
    }
    Ok(flat.chunks_exact(2).map(|c| Vec2::new(c[0], c[1])).collect())
}

fn flatten(v: impl IntoIterator<Item = Vec2>) -> Vec<f64> {
    v.into_iter().flat_map(|p| [p.dx, p.dy]).collect()
}

/// Procedural grayscale texture, the same one the synthetic sequences use.
#[wasm_bindgen]
pub fn texture(width: usize, height: usize, seed: u64) -> Vec<u8> {
    let mut px = Vec::with_capacity(width * height);
    for y in 0..height {
        for x in 0..width {
            px.push(procedural_texture(x as f64, y as f64, seed).round() as u8);
        }
    }
    px
}

/// Sinusoidal camera path plus seeded Gaussian jitter.
#[wasm_bindgen]
pub fn shaky_path(frames: usize, amplitude: f64, period: f64, jitter: f64, seed: u64) -> Result<Vec<f64>, JsError> {
    let spec = SyntheticSpec {
        frames,
        amplitude: (amplitude, 0.75 * amplitude),
        period: (period, 0.8 * period),
        jitter,
        seed,
        ..SyntheticSpec::default()
    };
    spec.validate().map_err(js)?;
    let jitter = spec.jitter_samples();
    Ok(flatten((0..frames).map(|i| spec.smooth_path(i) + jitter[i])))
}

/// Smooths a single-vertex trajectory.
#[wasm_bindgen]
pub fn smooth_path(path: &[f64], iterations: usize, lambda: f64, sigma_m: f64, bilateral: bool) -> Result<Vec<f64>, JsError> {
    let points = pairs(path)?;
    let mut traj = TrajectoryField::zeros(points.len(), 1, 1);
    for (i, &p) in points.iter().enumerate() {
        traj.set(i, 0, p);
    }
    let cfg = SmoothingConfig {
        iterations,
        lambda,
        sigma_m,
        mode: if bilateral { KernelMode::Bilateral } else { KernelMode::Uniform },
        ..SmoothingConfig::default()
    };
    let out = smooth(&traj, &cfg).map_err(js)?;
    Ok(flatten(out.points))
}

#[wasm_bindgen]
pub struct Warped {
    pixels: Vec<u8>,
    valid: Vec<u8>,
    crop: Vec<usize>,
}

#[wasm_bindgen]
impl Warped {
    #[wasm_bindgen(getter)]
    pub fn pixels(&self) -> Vec<u8> {
        self.pixels.clone()
    }

    /// 1 where the output pixel has a source inside the input frame.
    #[wasm_bindgen(getter)]
    pub fn valid(&self) -> Vec<u8> {
        self.valid.clone()
    }

    /// `[x0, y0, x1, y1]` of the largest centred valid crop, or empty.
    #[wasm_bindgen(getter)]
    pub fn crop(&self) -> Vec<usize> {
        self.crop.clone()
    }
}

/// Backward-warps `gray` by per-vertex displacements on a `rows x cols` mesh.
#[wasm_bindgen]
pub fn warp(gray: Vec<u8>, width: usize, height: usize, rows: usize, cols: usize, displacement: &[f64]) -> Result<Warped, JsError> {
    let frame = Frame::from_gray(0, width, height, gray).map_err(js)?;
    let mesh = GridMesh::new(width as f64, height as f64, rows, cols).map_err(js)?;
    let values = pairs(displacement)?;
    if values.len() != mesh.vertex_count() {
        return Err(JsError::new(&format!(
            "{} displacements for {} vertices",
            values.len(),
            mesh.vertex_count()
        )));
    }
    let disp = DisplacementField {
        frame: 0,
        vertex_rows: mesh.vertex_rows(),
        vertex_cols: mesh.vertex_cols(),
        values,
    };
    let (out, mask) = reproject(&frame, &disp, &mesh).map_err(js)?;
    let crop = common_crop(std::slice::from_ref(&mask))
        .map(|r| vec![r.x0, r.y0, r.x1, r.y1])
        .unwrap_or_default();
    Ok(Warped {
        pixels: out.gray,
        valid: mask.valid.iter().map(|&v| u8::from(v)).collect(),
        crop,
    })
}

/// Splits keypoint motions into planes and labels every mesh vertex.
/// Returns one label (0 or 1) per vertex in row-major order.
#[wasm_bindgen]
pub fn segment(
    positions: &[f64],
    motions: &[f64],
    width: f64,
    height: f64,
    rows: usize,
    cols: usize,
    seed: u64,
) -> Result<Vec<u8>, JsError> {
    let pos = pairs(positions)?;
    let mot = pairs(motions)?;
    if pos.len() != mot.len() {
        return Err(JsError::new("positions and motions differ in length"));
    }
    let kps = KeypointSet::from_motions(0, pos.iter().zip(&mot).map(|(p, &m)| (Point2::new(p.dx, p.dy), m)));
    let cfg = PipelineConfig {
        seed,
        ..PipelineConfig::default()
    };
    let mesh = GridMesh::new(width, height, rows, cols).map_err(js)?;
    let seg = cluster_motions(&kps, &cfg.cluster(0)).map_err(js)?;
    let seg = assign_grids(&seg, &kps, &mesh, cfg.radius).map_err(js)?;
    Ok(seg.vertex_labels)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_path_stays_put() {
        let path: Vec<f64> = (0..20).flat_map(|_| [3.0, -1.0]).collect();
        assert_eq!(smooth_path(&path, 15, 15.0, 20.0, true).unwrap(), path);
    }

    #[test]
    fn smoothing_damps_jitter() {
        let raw = shaky_path(120, 0.0, 100.0, 6.0, 3).unwrap();
        let out = smooth_path(&raw, 15, 15.0, 20.0, false).unwrap();
        let energy = |v: &[f64]| -> f64 { v.windows(4).step_by(2).map(|w| (w[2] - w[0]).powi(2)).sum() };
        assert!(energy(&out) < 0.5 * energy(&raw));
    }

    #[test]
    fn zero_warp_keeps_the_image() {
        let img = texture(40, 30, 1);
        let out = warp(img.clone(), 40, 30, 2, 2, &[0.0; 18]).unwrap();
        assert_eq!(out.pixels(), img);
        assert_eq!(out.crop(), vec![0, 0, 40, 30]);
        assert!(out.valid().iter().all(|&v| v == 1));
    }

    #[test]
    fn halves_get_different_labels() {
        let (mut pos, mut mot) = (Vec::new(), Vec::new());
        for i in 0..400 {
            let (x, y) = ((i % 20) as f64 * 16.0 + 2.0, (i / 20) as f64 * 12.0 + 2.0);
            pos.extend([x, y]);
            mot.extend([if x < 160.0 { 4.0 } else { -4.0 }, 0.0]);
        }
        let labels = segment(&pos, &mot, 320.0, 240.0, 4, 4, 0).unwrap();
        assert_ne!(labels[10], labels[14]);
        assert_eq!(labels[0], labels[10]);
    }
}
