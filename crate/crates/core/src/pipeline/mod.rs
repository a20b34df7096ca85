//! End-to-end orchestration: motion estimation per frame pair, trajectory
//! smoothing, rendering, and evaluation.

mod config;
#[cfg(feature = "image-io")]
mod io;
mod keyvalue;
mod sweep;
mod synth;

use std::borrow::Cow;
use std::fmt::Write as _;

pub use config::PipelineConfig;
#[cfg(feature = "image-io")]
pub use io::{read_frames, write_frames};
#[cfg(feature = "image-io")]
pub use sweep::run_sweep;
pub use sweep::{parse_sweep_values, sweep_csv, sweep_sequence, SweepKind, SweepRow, SweepValue, SWEEP_HEADER};
pub use synth::{generate_synthetic, procedural_texture, trajectory_rmse, SyntheticSequence, SyntheticSpec};

use crate::error::{Error, Result};
use crate::frontend::{detect_keypoints, sample_motions, Frame, FlowField, FlowProvider, KeypointSet, PyramidalLucasKanade};
use crate::geometry::GridMesh;
use crate::metrics::{
    cropping_from, distortion_from, fit_frame_homographies, residual_distance, stability_score, FrameMetrics,
    StabilizationReport, MIN_STABILITY_FRAMES,
};
use crate::plane::{assign_grids, cluster_motions, fit_plane_homographies, init_vertex_motion, GridMotionField, PlaneSegmentation};
use crate::refine::{occlusion_mask, reconstruct_flow, refine, OcclusionMask};
use crate::smoothing::{accumulate, predict_kernel, smooth_with, ts_objective, TrajectoryField, TsObjective};
use crate::warp::{common_crop, crop_and_resize, displacements, reproject, CropRect};

/// Everything estimated for the pair `(frame, frame + 1)`.
#[derive(Debug, Clone)]
pub struct PairMotion {
    pub frame: usize,
    pub keypoints: KeypointSet,
    pub segmentation: PlaneSegmentation,
    pub mask: OcclusionMask,
    pub initial: GridMotionField,
    pub refined: GridMotionField,
    /// Residual homography distance left after refinement.
    pub distance: f64,
}

#[derive(Debug, Clone)]
pub struct Stabilized {
    pub frames: Vec<Frame>,
    pub original: TrajectoryField,
    pub smoothed: TrajectoryField,
    pub crop: CropRect,
    pub ts_objective: TsObjective,
}

#[derive(Debug, Clone)]
pub struct PipelineOutput {
    pub frames: Vec<Frame>,
    pub original: TrajectoryField,
    pub smoothed: TrajectoryField,
    pub crop: CropRect,
    pub report: StabilizationReport,
    pub ts_objective: TsObjective,
    pub pairs: Vec<PairMotion>,
}

fn check_frames(frames: &[Frame]) -> Result<()> {
    if frames.len() < 2 {
        return Err(Error::TooShort {
            needed: 2,
            got: frames.len(),
        });
    }
    for (i, f) in frames.iter().enumerate() {
        if !f.same_size(&frames[0]) {
            return Err(Error::DimensionMismatch(format!(
                "frame is {}x{}, first frame is {}x{}",
                f.width, f.height, frames[0].width, frames[0].height
            ))
            .at_frame(i));
        }
    }
    Ok(())
}

/// Frames renumbered by position, cloned only when needed.
fn indexed(frames: &[Frame]) -> Cow<'_, [Frame]> {
    if frames.iter().enumerate().all(|(i, f)| f.index == i) {
        Cow::Borrowed(frames)
    } else {
        Cow::Owned(
            frames
                .iter()
                .enumerate()
                .map(|(i, f)| Frame { index: i, ..f.clone() })
                .collect(),
        )
    }
}

pub fn build_mesh(frame: &Frame, cfg: &PipelineConfig) -> Result<GridMesh> {
    GridMesh::new(frame.width as f64, frame.height as f64, cfg.grid_rows, cfg.grid_cols)
}

fn estimate_pair(a: &Frame, b: &Frame, i: usize, mesh: &GridMesh, cfg: &PipelineConfig, provider: &dyn FlowProvider) -> Result<PairMotion> {
    let mut flow = provider.flow(a, b)?;
    flow.frame = i;
    let mut kps = detect_keypoints(a, &cfg.detector())?;
    kps.frame = i;
    let kps = sample_motions(&kps, &flow)?;
    let seg = cluster_motions(&kps, &cfg.cluster(i))?;
    let seg = assign_grids(&seg, &kps, mesh, cfg.radius)?;
    let seg = fit_plane_homographies(&seg, &kps, &cfg.plane_ransac(i))?;
    let initial = init_vertex_motion(&seg, mesh)?;
    let reconstructed = reconstruct_flow(&initial, mesh, a.width, a.height)?;
    let mask = occlusion_mask(&flow, &reconstructed, &kps)?;
    let refined = refine(&initial, &kps, &mask, mesh, &cfg.refinement())?;
    let distance = residual_distance(&kps, &refined, mesh, &cfg.residual_ransac(i))?;
    Ok(PairMotion {
        frame: i,
        keypoints: kps,
        segmentation: seg,
        mask,
        initial,
        refined,
        distance,
    })
}

/// Runs the per-pair stages concurrently; errors carry the pair's first
/// frame index.
pub fn estimate_motion(frames: &[Frame], cfg: &PipelineConfig, provider: &dyn FlowProvider) -> Result<Vec<PairMotion>> {
    cfg.validate()?;
    check_frames(frames)?;
    let frames = indexed(frames);
    let mesh = build_mesh(&frames[0], cfg)?;
    crate::par_map(frames.len() - 1, |i| {
        estimate_pair(&frames[i], &frames[i + 1], i, &mesh, cfg, provider).map_err(|e| e.at_frame(i))
    })
}

/// Accumulates, smooths, renders and crops.
pub fn stabilize(frames: &[Frame], pairs: &[PairMotion], cfg: &PipelineConfig) -> Result<Stabilized> {
    check_frames(frames)?;
    if pairs.len() + 1 != frames.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} frame pairs for {} frames",
            pairs.len(),
            frames.len()
        )));
    }
    let mesh = build_mesh(&frames[0], cfg)?;
    let motions: Vec<GridMotionField> = pairs.iter().map(|p| p.refined.clone()).collect();
    let original = accumulate(&motions)?;
    let scfg = cfg.smoothing();
    if scfg.iterations == 0 {
        return Err(Error::Config("smoothing needs at least one iteration".into()));
    }
    let kernel = predict_kernel(&original, &scfg)?;
    let smoothed = smooth_with(&original, &kernel, scfg.iterations)?;
    let keypoints: Vec<KeypointSet> = pairs.iter().map(|p| p.keypoints.clone()).collect();
    let objective = ts_objective(&original, &smoothed, &keypoints, &mesh, &kernel, &scfg)?;
    let disp = displacements(&original, &smoothed)?;
    let rendered = crate::par_map(frames.len(), |i| reproject(&frames[i], &disp[i], &mesh).map_err(|e| e.at_frame(i)))?;
    let masks: Vec<_> = rendered.iter().map(|r| r.1.clone()).collect();
    let crop = common_crop(&masks)?;
    let out = crate::par_map(frames.len(), |i| crop_and_resize(&rendered[i].0, &crop).map_err(|e| e.at_frame(i)))?;
    Ok(Stabilized {
        frames: out,
        original,
        smoothed,
        crop,
        ts_objective: objective,
    })
}

fn stability_of(traj: &TrajectoryField) -> Result<Option<f64>> {
    if traj.frames < MIN_STABILITY_FRAMES {
        return Ok(None);
    }
    stability_score(traj).map(Some)
}

fn build_report(
    input: &[Frame],
    output: &[Frame],
    stability: Option<f64>,
    distances: &[f64],
    cfg: &PipelineConfig,
) -> Result<StabilizationReport> {
    let hs = fit_frame_homographies(input, output, &cfg.metrics())?;
    let distortion = distortion_from(&hs);
    let cropping = cropping_from(&hs);
    let per_frame = (0..input.len())
        .map(|i| FrameMetrics {
            frame: i,
            distortion: distortion.per_frame[i],
            cropping: cropping.per_frame[i],
            distance: distances.get(i).copied(),
        })
        .collect();
    let distance_mean = if distances.is_empty() {
        0.0
    } else {
        distances.iter().sum::<f64>() / distances.len() as f64
    };
    Ok(StabilizationReport {
        stability,
        distortion: distortion.score,
        cropping: cropping.score,
        distance_mean,
        per_frame,
    })
}

/// Scores a finished stabilization. Stability is measured on the smoothed
/// trajectory; distortion and cropping on the input→output transforms.
pub fn evaluate(input: &[Frame], stabilized: &Stabilized, pairs: &[PairMotion], cfg: &PipelineConfig) -> Result<StabilizationReport> {
    let distances: Vec<f64> = pairs.iter().map(|p| p.distance).collect();
    build_report(input, &stabilized.frames, stability_of(&stabilized.smoothed)?, &distances, cfg)
}

pub fn run_pipeline_with(frames: &[Frame], cfg: &PipelineConfig, provider: &dyn FlowProvider) -> Result<PipelineOutput> {
    let frames = indexed(frames);
    let pairs = estimate_motion(&frames, cfg, provider)?;
    let stabilized = stabilize(&frames, &pairs, cfg)?;
    let report = evaluate(&frames, &stabilized, &pairs, cfg)?;
    Ok(PipelineOutput {
        frames: stabilized.frames,
        original: stabilized.original,
        smoothed: stabilized.smoothed,
        crop: stabilized.crop,
        report,
        ts_objective: stabilized.ts_objective,
        pairs,
    })
}

/// Stabilizes with the built-in flow estimator.
pub fn run_pipeline(frames: &[Frame], cfg: &PipelineConfig) -> Result<PipelineOutput> {
    run_pipeline_with(frames, cfg, &PyramidalLucasKanade { config: cfg.flow() })
}

/// Compares an already stabilized sequence against its input. Stability and
/// residual distance come from re-estimating motion on `after`.
pub fn measure(before: &[Frame], after: &[Frame], cfg: &PipelineConfig) -> Result<StabilizationReport> {
    check_frames(before)?;
    check_frames(after)?;
    let after = indexed(after);
    let pairs = estimate_motion(&after, cfg, &PyramidalLucasKanade { config: cfg.flow() })?;
    let motions: Vec<GridMotionField> = pairs.iter().map(|p| p.refined.clone()).collect();
    let traj = accumulate(&motions)?;
    let distances: Vec<f64> = pairs.iter().map(|p| p.distance).collect();
    build_report(&indexed(before), &after, stability_of(&traj)?, &distances, cfg)
}

pub const TRAJECTORY_HEADER: &str = "frame,row,col,tx,ty,sx,sy";

/// One line per frame and vertex with original and smoothed positions.
pub fn trajectory_csv(original: &TrajectoryField, smoothed: &TrajectoryField) -> Result<String> {
    if !original.same_shape(smoothed) {
        return Err(Error::ShapeMismatch("trajectory shapes differ".into()));
    }
    let mut s = String::from(TRAJECTORY_HEADER);
    s.push('\n');
    for i in 0..original.frames {
        for r in 0..original.vertex_rows {
            for c in 0..original.vertex_cols {
                let k = r * original.vertex_cols + c;
                let (t, u) = (original.at(i, k), smoothed.at(i, k));
                let _ = writeln!(s, "{i},{r},{c},{},{},{},{}", t.dx, t.dy, u.dx, u.dy);
            }
        }
    }
    Ok(s)
}

/// Flow served from memory, indexed by the first frame of each pair.
#[derive(Debug, Clone)]
pub struct CachedFlows {
    pub flows: Vec<FlowField>,
}

impl CachedFlows {
    pub fn compute(frames: &[Frame], provider: &dyn FlowProvider) -> Result<Self> {
        check_frames(frames)?;
        let frames = indexed(frames);
        let flows = crate::par_map(frames.len() - 1, |i| {
            provider.flow(&frames[i], &frames[i + 1]).map_err(|e| e.at_frame(i))
        })?;
        Ok(Self { flows })
    }
}

impl FlowProvider for CachedFlows {
    fn flow(&self, a: &Frame, _b: &Frame) -> Result<FlowField> {
        self.flows
            .get(a.index)
            .cloned()
            .ok_or_else(|| Error::ShapeMismatch(format!("no cached flow for frame {}", a.index)))
    }
}
