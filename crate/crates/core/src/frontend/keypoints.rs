//! Shi-Tomasi (minimum eigenvalue) corners with 3×3 non-maximum suppression
//! and greedy minimum-spacing selection.

use serde::{Deserialize, Serialize};

use super::flow::FlowField;
use super::image::GrayImage;
use super::Frame;
use crate::error::{Error, Result};
use crate::geometry::{Point2, Vec2};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectorConfig {
    pub max_count: usize,
    pub min_spacing: f64,
    /// Candidates below `quality * max_response` are discarded.
    pub quality: f64,
    /// Half-size of the structure-tensor window.
    pub window_radius: usize,
    /// Corners closer than this to the frame edge are dropped.
    pub border: usize,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        Self {
            max_count: 512,
            min_spacing: 8.0,
            quality: 0.01,
            window_radius: 2,
            border: 4,
        }
    }
}

/// Absolute floor on the mean per-pixel minimum eigenvalue.
const RESPONSE_FLOOR: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Keypoint {
    pub position: Point2,
    pub response: f64,
    pub motion: Vec2,
    /// `true` when the occlusion test rejected this point.
    pub occluded: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KeypointSet {
    pub frame: usize,
    pub points: Vec<Keypoint>,
    pub motions_set: bool,
}

impl KeypointSet {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn positions(&self) -> impl Iterator<Item = Point2> + '_ {
        self.points.iter().map(|k| k.position)
    }

    pub fn motions(&self) -> impl Iterator<Item = Vec2> + '_ {
        self.points.iter().map(|k| k.motion)
    }

    /// Builds a set directly from positions and motions (tests, synthetic
    /// scenes, externally tracked points).
    pub fn from_motions(frame: usize, pairs: impl IntoIterator<Item = (Point2, Vec2)>) -> Self {
        Self {
            frame,
            points: pairs
                .into_iter()
                .map(|(position, motion)| Keypoint {
                    position,
                    response: 1.0,
                    motion,
                    occluded: false,
                })
                .collect(),
            motions_set: true,
        }
    }
}

/// Separable binomial smoothing of half-size `radius` (clamped borders).
fn binomial_blur(values: &[f64], w: usize, h: usize, radius: usize) -> Vec<f64> {
    let n = 2 * radius;
    let mut kernel = vec![1.0f64];
    for _ in 0..n {
        let mut next = vec![0.0; kernel.len() + 1];
        for (i, k) in kernel.iter().enumerate() {
            next[i] += k;
            next[i + 1] += k;
        }
        kernel = next;
    }
    let total: f64 = kernel.iter().sum();
    kernel.iter_mut().for_each(|k| *k /= total);
    let r = radius as isize;
    let mut tmp = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (k, kw) in kernel.iter().enumerate() {
                let xi = (x as isize + k as isize - r).clamp(0, w as isize - 1) as usize;
                acc += kw * values[y * w + xi];
            }
            tmp[y * w + x] = acc;
        }
    }
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (k, kw) in kernel.iter().enumerate() {
                let yi = (y as isize + k as isize - r).clamp(0, h as isize - 1) as usize;
                acc += kw * tmp[yi * w + x];
            }
            out[y * w + x] = acc;
        }
    }
    out
}

fn min_eigen_response(img: &GrayImage, radius: usize) -> Vec<f64> {
    let (gx, gy) = img.gradients();
    let (w, h) = (img.width, img.height);
    let n = w * h;
    let prod = |f: &dyn Fn(usize) -> f64| binomial_blur(&(0..n).map(f).collect::<Vec<_>>(), w, h, radius);
    let xx = prod(&|i| (gx.data[i] * gx.data[i]) as f64);
    let xy = prod(&|i| (gx.data[i] * gy.data[i]) as f64);
    let yy = prod(&|i| (gy.data[i] * gy.data[i]) as f64);
    (0..n)
        .map(|i| {
            let (a, b, c) = (xx[i], xy[i], yy[i]);
            let half_tr = 0.5 * (a + c);
            let disc = (0.25 * (a - c) * (a - c) + b * b).sqrt();
            (half_tr - disc).max(0.0)
        })
        .collect()
}

/// Vertex offset of the parabola through three samples, clamped to ±0.5.
fn parabola_peak(left: f64, centre: f64, right: f64) -> f64 {
    let denom = left - 2.0 * centre + right;
    if denom.abs() < 1e-12 {
        return 0.0;
    }
    (0.5 * (left - right) / denom).clamp(-0.5, 0.5)
}

pub fn detect_keypoints(frame: &Frame, cfg: &DetectorConfig) -> Result<KeypointSet> {
    if cfg.max_count < 4 {
        return Err(Error::Config(format!(
            "max keypoint count must be at least 4, got {}",
            cfg.max_count
        )));
    }
    let (w, h) = (frame.width, frame.height);
    let img = GrayImage::from_u8(w, h, &frame.gray);
    let resp = min_eigen_response(&img, cfg.window_radius);
    let max_resp = resp.iter().copied().fold(0.0, f64::max);
    let floor = (cfg.quality * max_resp).max(RESPONSE_FLOOR);

    let border = cfg.border.max(1);
    let mut candidates = Vec::new();
    if w > 2 * border && h > 2 * border {
        for y in border..h - border {
            for x in border..w - border {
                let r = resp[y * w + x];
                if r < floor {
                    continue;
                }
                // strict against neighbours earlier in raster order so
                // plateaus keep exactly one representative
                let mut is_max = true;
                'nb: for dy in -1isize..=1 {
                    for dx in -1isize..=1 {
                        if dx == 0 && dy == 0 {
                            continue;
                        }
                        let q = resp[(y as isize + dy) as usize * w + (x as isize + dx) as usize];
                        let earlier = dy < 0 || (dy == 0 && dx < 0);
                        if q > r || (earlier && q == r) {
                            is_max = false;
                            break 'nb;
                        }
                    }
                }
                if is_max {
                    candidates.push((r, x, y));
                }
            }
        }
    }
    candidates.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.2.cmp(&b.2)).then(a.1.cmp(&b.1)));

    let spacing = cfg.min_spacing.max(0.0);
    let bucket = spacing.max(1.0);
    let bw = (w as f64 / bucket).ceil() as usize + 1;
    let bh = (h as f64 / bucket).ceil() as usize + 1;
    let mut buckets: Vec<Vec<Point2>> = vec![Vec::new(); bw * bh];
    let mut points = Vec::new();
    for (r, x, y) in candidates {
        if points.len() >= cfg.max_count {
            break;
        }
        let ox = parabola_peak(resp[y * w + x - 1], r, resp[y * w + x + 1]);
        let oy = parabola_peak(resp[(y - 1) * w + x], r, resp[(y + 1) * w + x]);
        let p = Point2::new(x as f64 + ox, y as f64 + oy);
        let (bx, by) = ((p.x / bucket) as usize, (p.y / bucket) as usize);
        let mut crowded = false;
        'search: for cy in by.saturating_sub(1)..=(by + 1).min(bh - 1) {
            for cx in bx.saturating_sub(1)..=(bx + 1).min(bw - 1) {
                if buckets[cy * bw + cx].iter().any(|q| q.distance(p) < spacing) {
                    crowded = true;
                    break 'search;
                }
            }
        }
        if crowded {
            continue;
        }
        buckets[by * bw + bx].push(p);
        points.push(Keypoint {
            position: p,
            response: r,
            motion: Vec2::ZERO,
            occluded: false,
        });
    }
    if points.len() < 4 {
        return Err(Error::TooFewFeatures {
            found: points.len(),
            needed: 4,
        });
    }
    Ok(KeypointSet {
        frame: frame.index,
        points,
        motions_set: false,
    })
}

/// Sets each keypoint's motion to the bilinearly interpolated flow at its
/// position.
pub fn sample_motions(kps: &KeypointSet, flow: &FlowField) -> Result<KeypointSet> {
    if kps.frame != flow.frame {
        return Err(Error::IndexMismatch {
            keypoints: kps.frame,
            flow: flow.frame,
        });
    }
    let mut out = kps.clone();
    for kp in &mut out.points {
        kp.motion = flow.sample(kp.position);
    }
    out.motions_set = true;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn checkerboard(w: usize, h: usize, square: usize) -> Frame {
        let gray = (0..w * h)
            .map(|i| {
                let (x, y) = (i % w, i / w);
                if ((x / square) + (y / square)) % 2 == 0 {
                    40
                } else {
                    210
                }
            })
            .collect();
        Frame::from_gray(0, w, h, gray).unwrap()
    }

    #[test]
    fn constant_frame_has_no_features() {
        let f = Frame::from_gray(0, 64, 48, vec![128; 64 * 48]).unwrap();
        assert!(matches!(
            detect_keypoints(&f, &DetectorConfig::default()),
            Err(Error::TooFewFeatures { .. })
        ));
    }

    #[test]
    fn checkerboard_corners_land_on_intersections() {
        let square = 40;
        let f = checkerboard(640, 480, square);
        let kps = detect_keypoints(&f, &DetectorConfig::default()).unwrap();
        // interior intersections, at the boundary between pixel 40k-1 and 40k
        let mut expected = Vec::new();
        for iy in 1..480 / square {
            for ix in 1..640 / square {
                expected.push(Point2::new((ix * square) as f64 - 0.5, (iy * square) as f64 - 0.5));
            }
        }
        for kp in &kps.points {
            let d = expected
                .iter()
                .map(|e| e.distance(kp.position))
                .fold(f64::INFINITY, f64::min);
            assert!(d <= 1.0, "keypoint {:?} is {d}px from an intersection", kp.position);
        }
        for e in &expected {
            assert!(kps.points.iter().any(|k| k.position.distance(*e) <= 1.0));
        }
        assert!(kps.len() <= 512);
    }

    #[test]
    fn detection_is_deterministic_and_spaced() {
        let f = checkerboard(200, 160, 13);
        let cfg = DetectorConfig {
            min_spacing: 10.0,
            ..DetectorConfig::default()
        };
        let a = detect_keypoints(&f, &cfg).unwrap();
        let b = detect_keypoints(&f, &cfg).unwrap();
        assert_eq!(a, b);
        for (i, p) in a.points.iter().enumerate() {
            for q in &a.points[i + 1..] {
                assert!(p.position.distance(q.position) >= 10.0);
            }
        }
        assert!(a.points.windows(2).all(|w| w[0].response >= w[1].response));
    }

    fn flow_from(frame: usize, w: usize, h: usize, f: impl Fn(usize, usize) -> Vec2) -> FlowField {
        let mut flow = FlowField::zeros(frame, w, h);
        for y in 0..h {
            for x in 0..w {
                flow.set(x, y, f(x, y));
            }
        }
        flow
    }

    #[test]
    fn sampling_uniform_and_midpoint() {
        let uniform = flow_from(3, 10, 10, |_, _| Vec2::new(2.0, 2.0));
        let kps = KeypointSet {
            frame: 3,
            points: vec![
                Keypoint {
                    position: Point2::new(4.3, 5.7),
                    response: 1.0,
                    motion: Vec2::ZERO,
                    occluded: false,
                },
                Keypoint {
                    position: Point2::new(6.0, 2.0),
                    response: 1.0,
                    motion: Vec2::ZERO,
                    occluded: false,
                },
            ],
            motions_set: false,
        };
        let s = sample_motions(&kps, &uniform).unwrap();
        assert!(s.points.iter().all(|k| k.motion == Vec2::new(2.0, 2.0)));

        let ramp = flow_from(3, 10, 10, |x, y| Vec2::new(if x >= 5 { 4.0 } else { 0.0 }, (x * 10 + y) as f64));
        let s = sample_motions(&kps, &ramp).unwrap();
        assert_eq!(s.points[1].motion, Vec2::new(4.0, 62.0));
        let mid = KeypointSet::from_motions(3, [(Point2::new(4.5, 3.0), Vec2::ZERO)]);
        let s = sample_motions(&mid, &ramp).unwrap();
        assert!((s.points[0].motion.dx - 2.0).abs() < 1e-12);
    }

    #[test]
    fn index_mismatch() {
        let flow = FlowField::zeros(1, 4, 4);
        let kps = KeypointSet::from_motions(2, [(Point2::new(1.0, 1.0), Vec2::ZERO)]);
        assert!(matches!(
            sample_motions(&kps, &flow),
            Err(Error::IndexMismatch { keypoints: 2, flow: 1 })
        ));
    }
}
