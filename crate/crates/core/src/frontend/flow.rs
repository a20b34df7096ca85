//! Dense coarse-to-fine Lucas-Kanade flow.
//!
//! The structure tensor of the first frame is box-filtered once per level, so
//! every Gauss-Newton iteration costs a warp plus two box sums per pixel
//! regardless of window size.

use serde::{Deserialize, Serialize};

use super::image::{GrayImage, Integral};
use super::Frame;
use crate::error::{Error, Result};
use crate::geometry::{Point2, Vec2};

/// Dense motion from frame `frame` to frame `frame + 1`: content at `p` in the
/// first frame is found at `p + flow(p)` in the second.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowField {
    pub frame: usize,
    pub width: usize,
    pub height: usize,
    data: Vec<[f32; 2]>,
}

impl FlowField {
    pub fn zeros(frame: usize, width: usize, height: usize) -> Self {
        Self {
            frame,
            width,
            height,
            data: vec![[0.0; 2]; width * height],
        }
    }

    pub fn from_raw(frame: usize, width: usize, height: usize, data: Vec<[f32; 2]>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::DimensionMismatch(format!(
                "{} flow vectors for a {width}x{height} field",
                data.len()
            )));
        }
        if data.iter().any(|v| !v[0].is_finite() || !v[1].is_finite()) {
            return Err(Error::BadFlowFile("non-finite flow vector".into()));
        }
        Ok(Self {
            frame,
            width,
            height,
            data,
        })
    }

    pub fn raw(&self) -> &[[f32; 2]] {
        &self.data
    }

    pub fn raw_mut(&mut self) -> &mut [[f32; 2]] {
        &mut self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> Vec2 {
        let v = self.data[y * self.width + x];
        Vec2::new(v[0] as f64, v[1] as f64)
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: Vec2) {
        self.data[y * self.width + x] = [v.dx as f32, v.dy as f32];
    }

    /// Bilinear sample, clamped to the field. Exact at integer coordinates.
    pub fn sample(&self, p: Point2) -> Vec2 {
        let x = p.x.clamp(0.0, (self.width - 1) as f64);
        let y = p.y.clamp(0.0, (self.height - 1) as f64);
        let x0 = x.floor() as usize;
        let y0 = y.floor() as usize;
        let x1 = (x0 + 1).min(self.width - 1);
        let y1 = (y0 + 1).min(self.height - 1);
        let (fx, fy) = (x - x0 as f64, y - y0 as f64);
        let lerp = |a: Vec2, b: Vec2, t: f64| Vec2::new(a.dx + t * (b.dx - a.dx), a.dy + t * (b.dy - a.dy));
        let top = lerp(self.get(x0, y0), self.get(x1, y0), fx);
        let bot = lerp(self.get(x0, y1), self.get(x1, y1), fx);
        lerp(top, bot, fy)
    }

    pub fn max_magnitude(&self) -> f64 {
        self.data
            .iter()
            .map(|v| ((v[0] as f64).powi(2) + (v[1] as f64).powi(2)).sqrt())
            .fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LucasKanadeConfig {
    pub levels: usize,
    /// Half-size of the integration window (10 gives 21×21).
    pub window_radius: usize,
    pub iterations: usize,
    /// Minimum mean per-pixel eigenvalue of the structure tensor; pixels
    /// below it keep the flow propagated from the coarser level.
    pub min_eigen: f64,
    /// Stop iterating a level once no pixel moves more than this.
    pub epsilon: f64,
}

impl Default for LucasKanadeConfig {
    fn default() -> Self {
        Self {
            levels: 4,
            window_radius: 10,
            iterations: 10,
            min_eigen: 0.05,
            epsilon: 1e-3,
        }
    }
}

/// Anything that can produce the flow between two frames.
pub trait FlowProvider: Send + Sync {
    fn flow(&self, a: &Frame, b: &Frame) -> Result<FlowField>;
}

#[derive(Debug, Clone, Copy, Default)]
pub struct PyramidalLucasKanade {
    pub config: LucasKanadeConfig,
}

impl FlowProvider for PyramidalLucasKanade {
    fn flow(&self, a: &Frame, b: &Frame) -> Result<FlowField> {
        compute_flow_with(a, b, &self.config)
    }
}

pub fn compute_flow(a: &Frame, b: &Frame) -> Result<FlowField> {
    compute_flow_with(a, b, &LucasKanadeConfig::default())
}

struct Level {
    a: GrayImage,
    b: GrayImage,
}

/// Per-pixel inverse structure tensor for one level; `None` marks low texture.
fn inverse_tensors(a: &GrayImage, gx: &GrayImage, gy: &GrayImage, cfg: &LucasKanadeConfig) -> Vec<Option<[f64; 3]>> {
    let (w, h) = (a.width, a.height);
    let n = w * h;
    let r = cfg.window_radius;
    let xx = Integral::new(w, h, (0..n).map(|i| (gx.data[i] * gx.data[i]) as f64));
    let xy = Integral::new(w, h, (0..n).map(|i| (gx.data[i] * gy.data[i]) as f64));
    let yy = Integral::new(w, h, (0..n).map(|i| (gy.data[i] * gy.data[i]) as f64));
    let mut out = Vec::with_capacity(n);
    for y in 0..h {
        let rows = (y + r + 1).min(h) - y.saturating_sub(r);
        for x in 0..w {
            let cols = (x + r + 1).min(w) - x.saturating_sub(r);
            let area = (rows * cols) as f64;
            let (sa, sb, sc) = (xx.box_sum(x, y, r), xy.box_sum(x, y, r), yy.box_sum(x, y, r));
            let half_tr = 0.5 * (sa + sc);
            let disc = (0.25 * (sa - sc) * (sa - sc) + sb * sb).sqrt();
            let min_eig = half_tr - disc;
            let det = sa * sc - sb * sb;
            if min_eig / area < cfg.min_eigen || det <= 0.0 {
                out.push(None);
            } else {
                out.push(Some([sc / det, -sb / det, sa / det]));
            }
        }
    }
    out
}

fn upsample(flow: &[[f32; 2]], w: usize, h: usize, nw: usize, nh: usize) -> Vec<[f32; 2]> {
    let mut out = vec![[0.0f32; 2]; nw * nh];
    for y in 0..nh {
        let sy = (y as f32 * 0.5).min((h - 1) as f32);
        let y0 = sy.floor() as usize;
        let y1 = (y0 + 1).min(h - 1);
        let fy = sy - y0 as f32;
        for x in 0..nw {
            let sx = (x as f32 * 0.5).min((w - 1) as f32);
            let x0 = sx.floor() as usize;
            let x1 = (x0 + 1).min(w - 1);
            let fx = sx - x0 as f32;
            for c in 0..2 {
                let top = flow[y0 * w + x0][c] + fx * (flow[y0 * w + x1][c] - flow[y0 * w + x0][c]);
                let bot = flow[y1 * w + x0][c] + fx * (flow[y1 * w + x1][c] - flow[y1 * w + x0][c]);
                out[y * nw + x][c] = 2.0 * (top + fy * (bot - top));
            }
        }
    }
    out
}

pub fn compute_flow_with(a: &Frame, b: &Frame, cfg: &LucasKanadeConfig) -> Result<FlowField> {
    if !a.same_size(b) {
        return Err(Error::DimensionMismatch(format!(
            "frames {}x{} and {}x{}",
            a.width, a.height, b.width, b.height
        )));
    }
    let mut levels = vec![Level {
        a: GrayImage::from_u8(a.width, a.height, &a.gray),
        b: GrayImage::from_u8(b.width, b.height, &b.gray),
    }];
    while levels.len() < cfg.levels.max(1) {
        let last = levels.last().expect("non-empty");
        if last.a.width < 16 || last.a.height < 16 {
            break;
        }
        let next = Level {
            a: last.a.pyr_down(),
            b: last.b.pyr_down(),
        };
        levels.push(next);
    }

    let r = cfg.window_radius;
    let mut flow: Vec<[f32; 2]> = Vec::new();
    let (mut fw, mut fh) = (0, 0);
    for level in levels.iter().rev() {
        let (w, h) = (level.a.width, level.a.height);
        flow = if flow.is_empty() {
            vec![[0.0; 2]; w * h]
        } else {
            upsample(&flow, fw, fh, w, h)
        };
        (fw, fh) = (w, h);
        let (gx, gy) = level.a.gradients();
        let inv = inverse_tensors(&level.a, &gx, &gy, cfg);
        let n = w * h;
        let mut ex = vec![0.0f64; n];
        let mut ey = vec![0.0f64; n];
        for _ in 0..cfg.iterations {
            // Each neighbour's residual is linearized back to the centre pixel's
            // flow: b(q + f_p) ~ b(q + f_q) + g_q . (f_p - f_q).
            for y in 0..h {
                for x in 0..w {
                    let i = y * w + x;
                    let f = flow[i];
                    let warped = level.b.sample_clamped(x as f32 + f[0], y as f32 + f[1]);
                    let it = (warped - level.a.data[i]) as f64;
                    let (gxi, gyi) = (gx.data[i] as f64, gy.data[i] as f64);
                    let dot = gxi * f[0] as f64 + gyi * f[1] as f64;
                    ex[i] = gxi * (it - dot);
                    ey[i] = gyi * (it - dot);
                }
            }
            let sx = Integral::new(w, h, ex.iter().copied());
            let sy = Integral::new(w, h, ey.iter().copied());
            let mut max_step = 0.0f64;
            for y in 0..h {
                for x in 0..w {
                    let i = y * w + x;
                    let Some([ia, ib, ic]) = inv[i] else { continue };
                    let (bx, by) = (sx.box_sum(x, y, r), sy.box_sum(x, y, r));
                    let u = -(ia * bx + ib * by);
                    let v = -(ib * bx + ic * by);
                    max_step = max_step.max((u - flow[i][0] as f64).abs()).max((v - flow[i][1] as f64).abs());
                    flow[i] = [u as f32, v as f32];
                }
            }
            if max_step < cfg.epsilon {
                break;
            }
        }
    }
    FlowField::from_raw(a.index, a.width, a.height, flow)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Smooth deterministic texture with plenty of gradient in both axes.
    pub(crate) fn texture(x: f64, y: f64) -> f64 {
        let v = 0.5 * (0.11 * x + 0.07 * y).sin()
            + 0.35 * (0.23 * x - 0.19 * y + 1.3).sin()
            + 0.25 * (0.05 * x * 0.9 + 0.31 * y).cos()
            + 0.2 * ((0.017 * x * y).sin() + (0.41 * x).cos() * (0.37 * y).sin());
        128.0 + 70.0 * v
    }

    fn render(index: usize, w: usize, h: usize, shift: (f64, f64)) -> Frame {
        let gray = (0..w * h)
            .map(|i| texture((i % w) as f64 - shift.0, (i / w) as f64 - shift.1).round().clamp(0.0, 255.0) as u8)
            .collect();
        Frame::from_gray(index, w, h, gray).unwrap()
    }

    #[test]
    fn identical_frames_give_zero_flow() {
        let a = render(0, 160, 120, (0.0, 0.0));
        let flow = compute_flow(&a, &a).unwrap();
        assert!(flow.max_magnitude() < 0.1);
    }

    #[test]
    fn integer_shift_is_recovered() {
        let a = render(0, 200, 160, (0.0, 0.0));
        let b = render(1, 200, 160, (7.0, -3.0));
        let flow = compute_flow(&a, &b).unwrap();
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        for y in 30..130 {
            for x in 30..170 {
                let v = flow.get(x, y);
                xs.push(v.dx);
                ys.push(v.dy);
            }
        }
        xs.sort_by(f64::total_cmp);
        ys.sort_by(f64::total_cmp);
        let (mx, my) = (xs[xs.len() / 2], ys[ys.len() / 2]);
        assert!((mx - 7.0).abs() < 0.5 && (my + 3.0).abs() < 0.5, "median flow ({mx}, {my})");
    }

    #[test]
    fn mismatched_sizes() {
        let a = render(0, 40, 30, (0.0, 0.0));
        let b = render(1, 41, 30, (0.0, 0.0));
        assert!(matches!(compute_flow(&a, &b), Err(Error::DimensionMismatch(_))));
    }
}
