//! Synthetic shaky sequences with exact ground-truth trajectories.
//!
//! Frame `i` shows the base texture translated by
//! `u(i) = s(i) + j(i) + i·v(plane)`, where `s` is a sinusoidal camera path,
//! `j` is Gaussian jitter and `v` an optional per-plane drift. Jitter is
//! drawn from `ChaCha8Rng::seed_from_u64(seed)` as `N(0, σ)` in the order
//! `x(0), y(0), x(1), y(1), ...`.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::keyvalue::{self, pair, unknown, value};
use crate::error::{Error, Result};
use crate::frontend::Frame;
use crate::geometry::{GridMesh, Vec2};
use crate::smoothing::TrajectoryField;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    /// PNG base image; `None` uses the built-in procedural texture.
    pub base: Option<PathBuf>,
    pub width: usize,
    pub height: usize,
    pub frames: usize,
    pub amplitude: (f64, f64),
    /// Periods of the smooth path, in frames.
    pub period: (f64, f64),
    pub jitter: f64,
    /// Number of planes, 1 or 2. The second plane is the right half.
    pub planes: usize,
    pub left_velocity: (f64, f64),
    pub right_velocity: (f64, f64),
    pub grid_rows: usize,
    pub grid_cols: usize,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            base: None,
            width: 640,
            height: 480,
            frames: 100,
            amplitude: (20.0, 15.0),
            period: (300.0, 250.0),
            jitter: 8.0,
            planes: 1,
            left_velocity: (0.0, 0.0),
            right_velocity: (0.0, 0.0),
            grid_rows: 16,
            grid_cols: 16,
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.frames < 8 {
            return Err(Error::Config(format!("need at least 8 frames, got {}", self.frames)));
        }
        if !(self.jitter >= 0.0 && self.jitter.is_finite()) {
            return Err(Error::Config(format!("jitter must be non-negative, got {}", self.jitter)));
        }
        if self.width < 16 || self.height < 16 {
            return Err(Error::Config("frames must be at least 16x16".into()));
        }
        if !(1..=2).contains(&self.planes) {
            return Err(Error::Config(format!("planes must be 1 or 2, got {}", self.planes)));
        }
        if !(self.period.0 > 0.0 && self.period.1 > 0.0) {
            return Err(Error::Config("periods must be positive".into()));
        }
        Ok(())
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut s = Self::default();
        for e in keyvalue::parse(text)? {
            match e.key.as_str() {
                "base" => s.base = (e.value != "procedural").then(|| PathBuf::from(&e.value)),
                "width" => s.width = value(&e)?,
                "height" => s.height = value(&e)?,
                "frames" => s.frames = value(&e)?,
                "amplitude" => s.amplitude = pair(&e)?,
                "period" => s.period = pair(&e)?,
                "jitter" => s.jitter = value(&e)?,
                "planes" => s.planes = value(&e)?,
                "left_velocity" => s.left_velocity = pair(&e)?,
                "right_velocity" => s.right_velocity = pair(&e)?,
                "grid_rows" => s.grid_rows = value(&e)?,
                "grid_cols" => s.grid_cols = value(&e)?,
                "seed" => s.seed = value(&e)?,
                _ => return Err(unknown(&e)),
            }
        }
        s.validate()?;
        Ok(s)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn smooth_path(&self, i: usize) -> Vec2 {
        let t = i as f64;
        Vec2::new(
            self.amplitude.0 * (2.0 * PI * t / self.period.0).sin(),
            self.amplitude.1 * (2.0 * PI * t / self.period.1).sin(),
        )
    }

    fn drift(&self, plane: usize, i: usize) -> Vec2 {
        let v = if plane == 0 { self.left_velocity } else { self.right_velocity };
        Vec2::new(v.0, v.1) * i as f64
    }

    fn plane_of(&self, x: f64) -> usize {
        usize::from(self.planes == 2 && x >= self.width as f64 / 2.0)
    }

    /// The seeded jitter sequence.
    pub fn jitter_samples(&self) -> Vec<Vec2> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let normal = Normal::new(0.0, self.jitter).expect("validated sigma");
        (0..self.frames)
            .map(|_| {
                let x = normal.sample(&mut rng);
                let y = normal.sample(&mut rng);
                Vec2::new(x, y)
            })
            .collect()
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticSequence {
    pub frames: Vec<Frame>,
    /// Ground truth of what a perfect smoother recovers: `s(i) + i·v − u(0)`.
    pub smooth: TrajectoryField,
    /// Ground truth of the shaky path: `u(i) − u(0)`.
    pub unstable: TrajectoryField,
}

fn hash(ix: i64, iy: i64, octave: u64) -> f64 {
    let mut z = (ix as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)
        ^ (iy as u64).wrapping_mul(0xC2B2_AE3D_27D4_EB4F)
        ^ octave.wrapping_mul(0x1656_67B1_9E37_79F9);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^= z >> 31;
    (z >> 11) as f64 / (1u64 << 53) as f64
}

fn value_noise(x: f64, y: f64, cell: f64, octave: u64) -> f64 {
    let (gx, gy) = (x / cell, y / cell);
    let (fx0, fy0) = (gx.floor(), gy.floor());
    let ease = |t: f64| t * t * (3.0 - 2.0 * t);
    let (sx, sy) = (ease(gx - fx0), ease(gy - fy0));
    let (ix, iy) = (fx0 as i64, fy0 as i64);
    let top = hash(ix, iy, octave) + sx * (hash(ix + 1, iy, octave) - hash(ix, iy, octave));
    let bot = hash(ix, iy + 1, octave) + sx * (hash(ix + 1, iy + 1, octave) - hash(ix, iy + 1, octave));
    top + sy * (bot - top)
}

/// Unbounded multi-octave value-noise texture in `[18, 238]`.
pub fn procedural_texture(x: f64, y: f64, seed: u64) -> f64 {
    const OCTAVES: [(f64, f64); 4] = [(40.0, 1.0), (17.0, 0.7), (7.0, 0.45), (3.0, 0.2)];
    let o = seed.wrapping_mul(4);
    let v: f64 = OCTAVES
        .iter()
        .enumerate()
        .map(|(k, &(cell, amp))| amp * value_noise(x, y, cell, o.wrapping_add(k as u64)))
        .sum();
    18.0 + 220.0 * v / 2.35
}

enum Base {
    Procedural(u64),
    #[cfg_attr(not(feature = "image-io"), allow(dead_code))]
    Image { width: usize, height: usize, gray: Vec<f64> },
}

impl Base {
    fn sample(&self, x: f64, y: f64) -> f64 {
        match self {
            Base::Procedural(seed) => procedural_texture(x, y, *seed),
            Base::Image { width, height, gray } => {
                let (w, h) = (*width, *height);
                let x = x.clamp(0.0, (w - 1) as f64);
                let y = y.clamp(0.0, (h - 1) as f64);
                let (x0, y0) = (x.floor() as usize, y.floor() as usize);
                let (x1, y1) = ((x0 + 1).min(w - 1), (y0 + 1).min(h - 1));
                let (fx, fy) = (x - x0 as f64, y - y0 as f64);
                let at = |xx: usize, yy: usize| gray[yy * w + xx];
                let top = at(x0, y0) + fx * (at(x1, y0) - at(x0, y0));
                let bot = at(x0, y1) + fx * (at(x1, y1) - at(x0, y1));
                top + fy * (bot - top)
            }
        }
    }
}

#[cfg(feature = "image-io")]
fn load_base(path: &Path) -> Result<Base> {
    let img = image::open(path).map_err(|e| Error::BadBaseImage {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })?;
    let luma = img.to_luma8();
    Ok(Base::Image {
        width: luma.width() as usize,
        height: luma.height() as usize,
        gray: luma.as_raw().iter().map(|&v| v as f64).collect(),
    })
}

#[cfg(not(feature = "image-io"))]
fn load_base(path: &Path) -> Result<Base> {
    Err(Error::BadBaseImage {
        path: path.to_path_buf(),
        reason: "built without image support".into(),
    })
}

/// Renders the sequence and its ground-truth trajectories.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<SyntheticSequence> {
    spec.validate()?;
    let (base, origin) = match &spec.base {
        None => (Base::Procedural(spec.seed.wrapping_add(1)), Vec2::ZERO),
        Some(p) => {
            let base = load_base(p)?;
            let Base::Image { width, height, .. } = &base else { unreachable!() };
            // frame window centred on the base image
            let origin = Vec2::new(
                (*width as f64 - spec.width as f64) / 2.0,
                (*height as f64 - spec.height as f64) / 2.0,
            );
            (base, origin)
        }
    };
    let jitter = spec.jitter_samples();
    let offset = |plane: usize, i: usize| spec.smooth_path(i) + jitter[i] + spec.drift(plane, i);
    let (w, h) = (spec.width, spec.height);
    let frames = crate::par_map(spec.frames, |i| {
        let shifts = [offset(0, i), offset(1, i)];
        let mut gray = Vec::with_capacity(w * h);
        for y in 0..h {
            for x in 0..w {
                let u = shifts[spec.plane_of(x as f64)];
                let v = base.sample(x as f64 - u.dx + origin.dx, y as f64 - u.dy + origin.dy);
                gray.push(v.round().clamp(0.0, 255.0) as u8);
            }
        }
        Frame::from_gray(i, w, h, gray)
    })?;

    let mesh = GridMesh::new(w as f64, h as f64, spec.grid_rows, spec.grid_cols)?;
    let rows = mesh.vertex_rows();
    let cols = mesh.vertex_cols();
    let mut smooth = TrajectoryField::zeros(spec.frames, rows, cols);
    let mut unstable = TrajectoryField::zeros(spec.frames, rows, cols);
    for (k, v) in mesh.vertices().iter().enumerate() {
        let plane = spec.plane_of(v.x);
        let start = offset(plane, 0);
        for i in 0..spec.frames {
            smooth.set(i, k, spec.smooth_path(i) + spec.drift(plane, i) - start);
            unstable.set(i, k, offset(plane, i) - start);
        }
    }
    Ok(SyntheticSequence {
        frames,
        smooth,
        unstable,
    })
}

/// Root-mean-square distance between two trajectories over all frames and
/// vertices.
pub fn trajectory_rmse(a: &TrajectoryField, b: &TrajectoryField) -> Result<f64> {
    if !a.same_shape(b) {
        return Err(Error::ShapeMismatch("trajectory shapes differ".into()));
    }
    let sum: f64 = a.points.iter().zip(&b.points).map(|(p, q)| (*p - *q).norm_squared()).sum();
    Ok((sum / a.points.len() as f64).sqrt())
}
