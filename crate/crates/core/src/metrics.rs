//! Stabilization quality metrics and the flow-noise harness.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rustfft::{num_complex::Complex, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frontend::{compute_flow_with, detect_keypoints, DetectorConfig, FlowField, Frame, KeypointSet, LucasKanadeConfig};
use crate::geometry::{fit_homography, GridMesh, Homography, RansacConfig};
use crate::plane::GridMotionField;
use crate::smoothing::TrajectoryField;

/// Lowest and highest frequency bins counted as "low". Bin 0 (DC) is the
/// first frequency, so this is the 2nd through 6th.
pub const STABILITY_BAND: (usize, usize) = (1, 5);
pub const MIN_STABILITY_FRAMES: usize = 8;

/// Fraction of the increments' non-DC spectral energy in bins 1..=5,
/// averaged over vertices and both dimensions. Motionless paths score 1.
pub fn stability_score(traj: &TrajectoryField) -> Result<f64> {
    if traj.frames < MIN_STABILITY_FRAMES {
        return Err(Error::TooShort {
            needed: MIN_STABILITY_FRAMES,
            got: traj.frames,
        });
    }
    let n = traj.frames - 1;
    let fft = FftPlanner::<f64>::new().plan_fft_forward(n);
    let half = n / 2;
    let (lo, hi) = (STABILITY_BAND.0, STABILITY_BAND.1.min(half));
    let mut buf = vec![Complex::new(0.0, 0.0); n];
    let mut sum = 0.0;
    let mut count = 0usize;
    for k in 0..traj.vertex_count() {
        for d in 0..2 {
            for (i, b) in buf.iter_mut().enumerate() {
                *b = Complex::new((traj.at(i + 1, k) - traj.at(i, k)).component(d), 0.0);
            }
            let energy: f64 = buf.iter().map(|c| c.re * c.re).sum::<f64>() * n as f64;
            fft.process(&mut buf);
            let power = |b: usize| buf[b].norm_sqr();
            let total: f64 = (1..=half).map(power).sum();
            let ratio = if total <= 1e-20 * energy || total == 0.0 {
                1.0
            } else {
                (lo..=hi).map(power).sum::<f64>() / total
            };
            sum += ratio.clamp(0.0, 1.0);
            count += 1;
        }
    }
    Ok(sum / count as f64)
}

/// Frobenius norm of `H − I` for a normalized homography.
pub fn homography_distance(h: &Homography) -> f64 {
    h.distance_to_identity()
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsConfig {
    pub detector: DetectorConfig,
    pub flow: LucasKanadeConfig,
    pub ransac: RansacConfig,
}

impl Default for MetricsConfig {
    fn default() -> Self {
        Self {
            detector: DetectorConfig::default(),
            flow: LucasKanadeConfig::default(),
            ransac: RansacConfig::default(),
        }
    }
}

/// Input→output homography of each frame, fitted to corners of the input
/// frame and their flow into the output frame.
pub fn fit_frame_homographies(before: &[Frame], after: &[Frame], cfg: &MetricsConfig) -> Result<Vec<Homography>> {
    if before.len() != after.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} input frames vs {} output frames",
            before.len(),
            after.len()
        )));
    }
    let fit_one = |i: usize| -> Result<Homography> {
        let (a, b) = (&before[i], &after[i]);
        let kps = detect_keypoints(a, &cfg.detector).map_err(|e| match e {
            Error::TooFewFeatures { found, .. } => Error::InsufficientPoints { needed: 4, got: found },
            other => other,
        })?;
        let flow = compute_flow_with(a, b, &cfg.flow)?;
        let pairs: Vec<_> = kps.positions().map(|p| (p, p + flow.sample(p))).collect();
        let ransac = RansacConfig {
            seed: cfg.ransac.seed.wrapping_add(i as u64),
            ..cfg.ransac
        };
        Ok(fit_homography(&pairs, &ransac)?.homography)
    };
    crate::par_map(before.len(), |i| fit_one(i).map_err(|e| e.at_frame(i)))
}

fn singular_values(h: &Homography) -> (f64, f64) {
    let svd = h.linear_part().svd(false, false);
    let (a, b) = (svd.singular_values[0], svd.singular_values[1]);
    (a.min(b), a.max(b))
}

/// Ratio of the smaller to the larger singular value of the linear part.
pub fn frame_distortion(h: &Homography) -> f64 {
    let (lo, hi) = singular_values(h);
    if hi > 0.0 {
        (lo / hi).clamp(0.0, 1.0)
    } else {
        0.0
    }
}

/// Area scale `sqrt|det A|`, folded into `[0, 1]` so zooming in and out by
/// the same factor score alike. The flag is set for mirrored transforms.
pub fn frame_cropping(h: &Homography) -> (f64, bool) {
    let det = h.linear_part().determinant();
    let s = det.abs().sqrt();
    let folded = if s > 0.0 { s.min(1.0 / s) } else { 0.0 };
    (folded.clamp(0.0, 1.0), det < 0.0)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SeriesScore {
    pub score: f64,
    pub per_frame: Vec<f64>,
    /// Set when any frame's transform has a negative determinant.
    pub mirrored: bool,
}

/// Worst-case (minimum) distortion over frames.
pub fn distortion_from(homographies: &[Homography]) -> SeriesScore {
    let per_frame: Vec<f64> = homographies.iter().map(frame_distortion).collect();
    SeriesScore {
        score: per_frame.iter().copied().fold(1.0, f64::min),
        per_frame,
        mirrored: false,
    }
}

/// Mean cropping over frames.
pub fn cropping_from(homographies: &[Homography]) -> SeriesScore {
    let pairs: Vec<(f64, bool)> = homographies.iter().map(frame_cropping).collect();
    let per_frame: Vec<f64> = pairs.iter().map(|p| p.0).collect();
    let score = if per_frame.is_empty() {
        1.0
    } else {
        per_frame.iter().sum::<f64>() / per_frame.len() as f64
    };
    SeriesScore {
        score,
        per_frame,
        mirrored: pairs.iter().any(|p| p.1),
    }
}

pub fn distortion_score(before: &[Frame], after: &[Frame], cfg: &MetricsConfig) -> Result<SeriesScore> {
    Ok(distortion_from(&fit_frame_homographies(before, after, cfg)?))
}

pub fn cropping_score(before: &[Frame], after: &[Frame], cfg: &MetricsConfig) -> Result<SeriesScore> {
    Ok(cropping_from(&fit_frame_homographies(before, after, cfg)?))
}

/// Distance from identity of the homography that best explains what the
/// mesh motion leaves unexplained: `p → p + m − Bili(n)(p)`.
pub fn residual_distance(kps: &KeypointSet, motion: &GridMotionField, mesh: &GridMesh, ransac: &RansacConfig) -> Result<f64> {
    let pairs: Vec<_> = kps
        .points
        .iter()
        .map(|kp| {
            let n = mesh.interpolate(&motion.motions, kp.position);
            (kp.position, kp.position + kp.motion - n)
        })
        .collect();
    Ok(homography_distance(&fit_homography(&pairs, ransac)?.homography))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NoiseKind {
    Gaussian,
    SaltPepper,
    Blank,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub kind: NoiseKind,
    /// Share of flow pixels corrupted, in `(0, 1]`.
    pub fraction: f64,
    /// Gaussian standard deviation as a fraction of the largest flow magnitude.
    pub sigma: f64,
    pub seed: u64,
}

impl NoiseSpec {
    pub fn gaussian(sigma: f64, seed: u64) -> Self {
        Self {
            kind: NoiseKind::Gaussian,
            fraction: 0.1,
            sigma,
            seed,
        }
    }

    pub fn salt_pepper(seed: u64) -> Self {
        Self {
            kind: NoiseKind::SaltPepper,
            ..Self::gaussian(0.0, seed)
        }
    }

    pub fn blank(seed: u64) -> Self {
        Self {
            kind: NoiseKind::Blank,
            ..Self::gaussian(0.0, seed)
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.fraction > 0.0 && self.fraction <= 1.0) {
            return Err(Error::Config(format!("noise fraction must be in (0, 1], got {}", self.fraction)));
        }
        if !(self.sigma >= 0.0) {
            return Err(Error::Config(format!("noise sigma must be non-negative, got {}", self.sigma)));
        }
        Ok(())
    }
}

/// Random rectangles covering exactly `round(fraction·w·h)` pixels; the last
/// rectangle is trimmed in row-major order.
pub fn noise_region(width: usize, height: usize, fraction: f64, rng: &mut ChaCha8Rng) -> Vec<bool> {
    let target = ((fraction * (width * height) as f64).round() as usize).min(width * height);
    let mut mask = vec![false; width * height];
    let mut covered = 0;
    let (min_w, max_w) = ((width / 20).max(1), (width / 5).max(1));
    let (min_h, max_h) = ((height / 20).max(1), (height / 5).max(1));
    let mut attempts = 0;
    while covered < target && attempts < 10_000 {
        attempts += 1;
        let rw = rng.random_range(min_w..=max_w);
        let rh = rng.random_range(min_h..=max_h);
        let x0 = rng.random_range(0..=width - rw);
        let y0 = rng.random_range(0..=height - rh);
        'rect: for y in y0..y0 + rh {
            for x in x0..x0 + rw {
                if covered == target {
                    break 'rect;
                }
                let m = &mut mask[y * width + x];
                if !*m {
                    *m = true;
                    covered += 1;
                }
            }
        }
    }
    for m in mask.iter_mut() {
        if covered == target {
            break;
        }
        if !*m {
            *m = true;
            covered += 1;
        }
    }
    mask
}

/// Corrupts a seeded selection of flow regions; returns the flow and the mask
/// of touched pixels.
pub fn inject_noise_with_region(flow: &FlowField, spec: &NoiseSpec) -> Result<(FlowField, Vec<bool>)> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let region = noise_region(flow.width, flow.height, spec.fraction, &mut rng);
    let peak = flow.max_magnitude();
    let normal = Normal::new(0.0, spec.sigma * peak).map_err(|e| Error::Config(e.to_string()))?;
    let mut out = flow.clone();
    for (v, _) in out.raw_mut().iter_mut().zip(&region).filter(|(_, &r)| r) {
        for c in v.iter_mut() {
            *c = match spec.kind {
                NoiseKind::Gaussian => (*c as f64 + normal.sample(&mut rng)) as f32,
                NoiseKind::SaltPepper => {
                    if rng.random_bool(0.5) {
                        peak as f32
                    } else {
                        -peak as f32
                    }
                }
                NoiseKind::Blank => 0.0,
            };
        }
    }
    Ok((out, region))
}

pub fn inject_noise(flow: &FlowField, spec: &NoiseSpec) -> Result<FlowField> {
    Ok(inject_noise_with_region(flow, spec)?.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameMetrics {
    pub frame: usize,
    pub distortion: f64,
    pub cropping: f64,
    /// Residual homography distance of the pair starting at this frame.
    pub distance: Option<f64>,
}

/// Serialized as `{stability, distortion, cropping, distance_mean, per_frame}`.
/// Stability is `null` for sequences too short to analyse.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StabilizationReport {
    pub stability: Option<f64>,
    pub distortion: f64,
    pub cropping: f64,
    pub distance_mean: f64,
    pub per_frame: Vec<FrameMetrics>,
}

impl StabilizationReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        serde_json::from_str(s).map_err(|e| Error::Config(format!("bad report: {e}")))
    }
}
