//! Backward mesh warping and the common valid-region crop.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frontend::{Frame, Integral};
use crate::geometry::{interpolate_corners, GridMesh, Point2, Vec2};
use crate::smoothing::TrajectoryField;

/// Stabilizing displacement `B = T̂ − T` of every vertex for one frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DisplacementField {
    pub frame: usize,
    pub vertex_rows: usize,
    pub vertex_cols: usize,
    pub values: Vec<Vec2>,
}

impl DisplacementField {
    pub fn uniform(frame: usize, mesh: &GridMesh, d: Vec2) -> Self {
        Self {
            frame,
            vertex_rows: mesh.vertex_rows(),
            vertex_cols: mesh.vertex_cols(),
            values: vec![d; mesh.vertex_count()],
        }
    }
}

pub fn displacements(original: &TrajectoryField, smoothed: &TrajectoryField) -> Result<Vec<DisplacementField>> {
    Ok(smoothed
        .displacement_from(original)?
        .into_iter()
        .enumerate()
        .map(|(frame, values)| DisplacementField {
            frame,
            vertex_rows: original.vertex_rows,
            vertex_cols: original.vertex_cols,
            values,
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ValidityMask {
    pub width: usize,
    pub height: usize,
    pub valid: Vec<bool>,
}

impl ValidityMask {
    pub fn full(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            valid: vec![true; width * height],
        }
    }

    pub fn valid_count(&self) -> usize {
        self.valid.iter().filter(|&&v| v).count()
    }
}

fn bilinear(data: &[u8], w: usize, h: usize, channels: usize, c: usize, x: f64, y: f64) -> u8 {
    let x0 = x.floor() as usize;
    let y0 = y.floor() as usize;
    let x1 = (x0 + 1).min(w - 1);
    let y1 = (y0 + 1).min(h - 1);
    let fx = x - x0 as f64;
    let fy = y - y0 as f64;
    let at = |xx: usize, yy: usize| data[(yy * w + xx) * channels + c] as f64;
    let top = at(x0, y0) + fx * (at(x1, y0) - at(x0, y0));
    let bot = at(x0, y1) + fx * (at(x1, y1) - at(x0, y1));
    (top + fy * (bot - top)).round().clamp(0.0, 255.0) as u8
}

/// Sub-pixel slack at the frame border that absorbs rounding in displacements.
const BORDER_SLACK: f64 = 1e-6;

/// Renders `output(q) = input(q − Bili(B)(q))`. Samples that fall outside
/// the input are left black and marked invalid.
pub fn reproject(frame: &Frame, disp: &DisplacementField, mesh: &GridMesh) -> Result<(Frame, ValidityMask)> {
    if disp.vertex_rows != mesh.vertex_rows() || disp.vertex_cols != mesh.vertex_cols() {
        return Err(Error::ShapeMismatch("displacement field does not match mesh".into()));
    }
    if disp.values.iter().any(|v| !v.is_finite()) {
        return Err(Error::ShapeMismatch("displacement field has non-finite values".into()));
    }
    let (w, h) = (frame.width, frame.height);
    let mut gray = vec![0u8; w * h];
    let mut rgb = frame.rgb.as_ref().map(|_| vec![0u8; 3 * w * h]);
    let mut valid = vec![false; w * h];
    let (maxx, maxy) = ((w - 1) as f64, (h - 1) as f64);
    for y in 0..h {
        for x in 0..w {
            let q = Point2::new(x as f64, y as f64);
            let d = interpolate_corners(&mesh.weights_clamped(q), &disp.values);
            let (sx, sy) = (q.x - d.dx, q.y - d.dy);
            if !(-BORDER_SLACK..=maxx + BORDER_SLACK).contains(&sx) || !(-BORDER_SLACK..=maxy + BORDER_SLACK).contains(&sy) {
                continue;
            }
            let (sx, sy) = (sx.clamp(0.0, maxx), sy.clamp(0.0, maxy));
            let i = y * w + x;
            valid[i] = true;
            gray[i] = bilinear(&frame.gray, w, h, 1, 0, sx, sy);
            if let (Some(out), Some(src)) = (rgb.as_mut(), frame.rgb.as_ref()) {
                for c in 0..3 {
                    out[3 * i + c] = bilinear(src, w, h, 3, c, sx, sy);
                }
            }
        }
    }
    let out = Frame {
        index: frame.index,
        width: w,
        height: h,
        gray,
        rgb,
    };
    Ok((
        out,
        ValidityMask {
            width: w,
            height: h,
            valid,
        },
    ))
}

/// Half-open pixel rectangle `[x0, x1) × [y0, y1)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CropRect {
    pub x0: usize,
    pub y0: usize,
    pub x1: usize,
    pub y1: usize,
}

impl CropRect {
    pub fn full(width: usize, height: usize) -> Self {
        Self {
            x0: 0,
            y0: 0,
            x1: width,
            y1: height,
        }
    }

    pub fn width(&self) -> usize {
        self.x1 - self.x0
    }

    pub fn height(&self) -> usize {
        self.y1 - self.y0
    }

    pub fn area_ratio(&self, width: usize, height: usize) -> f64 {
        (self.width() * self.height()) as f64 / (width * height) as f64
    }

    pub fn is_full(&self, width: usize, height: usize) -> bool {
        *self == Self::full(width, height)
    }

    fn centered(width: usize, height: usize, crop_w: usize) -> Self {
        let crop_h = ((crop_w as f64 * height as f64 / width as f64).round() as usize).clamp(1, height);
        let x0 = (width - crop_w) / 2;
        let y0 = (height - crop_h) / 2;
        Self {
            x0,
            y0,
            x1: x0 + crop_w,
            y1: y0 + crop_h,
        }
    }
}

/// Minimum crop area accepted, as a fraction of the frame.
pub const MIN_CROP_AREA: f64 = 0.1;

/// Largest centred rectangle with the frame's aspect that is valid in every
/// mask. Centred rectangles are nested as the width grows, so validity is
/// monotone and a binary search over the width finds the largest one.
pub fn common_crop(masks: &[ValidityMask]) -> Result<CropRect> {
    let Some(first) = masks.first() else {
        return Err(Error::TooShort { needed: 1, got: 0 });
    };
    let (w, h) = (first.width, first.height);
    let mut invalid = vec![0.0f64; w * h];
    for m in masks {
        if m.width != w || m.height != h || m.valid.len() != w * h {
            return Err(Error::DimensionMismatch(format!("mask {}x{} vs {w}x{h}", m.width, m.height)));
        }
        for (acc, &v) in invalid.iter_mut().zip(&m.valid) {
            if !v {
                *acc = 1.0;
            }
        }
    }
    let table = Integral::new(w, h, invalid.into_iter());
    let clean = |cw: usize| {
        let r = CropRect::centered(w, h, cw);
        table.rect_sum(r.x0, r.y0, r.x1, r.y1) == 0.0
    };
    if clean(w) {
        return Ok(CropRect::full(w, h));
    }
    let (mut lo, mut hi) = (0usize, w);
    while hi - lo > 1 {
        let mid = (lo + hi) / 2;
        if clean(mid) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    if lo == 0 {
        return Err(Error::MinimalCrop);
    }
    let rect = CropRect::centered(w, h, lo);
    if rect.area_ratio(w, h) < MIN_CROP_AREA {
        return Err(Error::MinimalCrop);
    }
    Ok(rect)
}

/// Crops `rect` and scales it back to the full frame size with bilinear
/// sampling. A full-frame rectangle returns the frame unchanged.
pub fn crop_and_resize(frame: &Frame, rect: &CropRect) -> Result<Frame> {
    let (w, h) = (frame.width, frame.height);
    if rect.x0 >= rect.x1 || rect.y0 >= rect.y1 || rect.x1 > w || rect.y1 > h {
        return Err(Error::InvalidDimensions(format!("crop {rect:?} outside {w}x{h}")));
    }
    if rect.is_full(w, h) {
        return Ok(frame.clone());
    }
    let sx = rect.width() as f64 / w as f64;
    let sy = rect.height() as f64 / h as f64;
    let (lx, hx) = (rect.x0 as f64, (rect.x1 - 1) as f64);
    let (ly, hy) = (rect.y0 as f64, (rect.y1 - 1) as f64);
    let mut gray = vec![0u8; w * h];
    let mut rgb = frame.rgb.as_ref().map(|_| vec![0u8; 3 * w * h]);
    for y in 0..h {
        let src_y = (ly + (y as f64 + 0.5) * sy - 0.5).clamp(ly, hy);
        for x in 0..w {
            let src_x = (lx + (x as f64 + 0.5) * sx - 0.5).clamp(lx, hx);
            let i = y * w + x;
            gray[i] = bilinear(&frame.gray, w, h, 1, 0, src_x, src_y);
            if let (Some(out), Some(src)) = (rgb.as_mut(), frame.rgb.as_ref()) {
                for c in 0..3 {
                    out[3 * i + c] = bilinear(src, w, h, 3, c, src_x, src_y);
                }
            }
        }
    }
    Ok(Frame {
        index: frame.index,
        width: w,
        height: h,
        gray,
        rgb,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn pattern(w: usize, h: usize) -> Frame {
        let gray = (0..w * h).map(|i| ((i * 37 + (i / w) * 11) % 251) as u8).collect();
        Frame::from_gray(0, w, h, gray).unwrap()
    }

    #[test]
    fn zero_displacement_is_identity() {
        let f = pattern(37, 23);
        let mesh = GridMesh::new(37.0, 23.0, 4, 3).unwrap();
        let (out, mask) = reproject(&f, &DisplacementField::uniform(0, &mesh, Vec2::ZERO), &mesh).unwrap();
        assert_eq!(out, f);
        assert_eq!(mask.valid_count(), 37 * 23);
    }

    #[test]
    fn rgb_channels_follow_the_warp() {
        let rgb: Vec<u8> = (0..12 * 9 * 3).map(|i| (i * 7 % 256) as u8).collect();
        let f = Frame::from_rgb(0, 12, 9, rgb).unwrap();
        let mesh = GridMesh::new(12.0, 9.0, 2, 2).unwrap();
        let (out, _) = reproject(&f, &DisplacementField::uniform(0, &mesh, Vec2::ZERO), &mesh).unwrap();
        assert_eq!(out, f);
    }

    #[test]
    fn everything_out_of_bounds() {
        let f = pattern(20, 10);
        let mesh = GridMesh::new(20.0, 10.0, 2, 2).unwrap();
        let (_, mask) = reproject(&f, &DisplacementField::uniform(0, &mesh, Vec2::new(50.0, 0.0)), &mesh).unwrap();
        assert_eq!(mask.valid_count(), 0);
    }

    proptest! {
        #[test]
        fn integer_shift_matches_direct_shift(dx in -6i32..=6, dy in -6i32..=6) {
            let (w, h) = (31usize, 19usize);
            let f = pattern(w, h);
            let mesh = GridMesh::new(w as f64, h as f64, 3, 2).unwrap();
            let (out, mask) = reproject(&f, &DisplacementField::uniform(0, &mesh, Vec2::new(dx as f64, dy as f64)), &mesh).unwrap();
            for y in 0..h as i32 {
                for x in 0..w as i32 {
                    let (sx, sy) = (x - dx, y - dy);
                    let inside = sx >= 0 && sy >= 0 && sx < w as i32 && sy < h as i32;
                    let i = y as usize * w + x as usize;
                    prop_assert_eq!(mask.valid[i], inside);
                    if inside {
                        prop_assert_eq!(out.gray[i], f.gray[sy as usize * w + sx as usize]);
                    }
                }
            }
        }
    }

    #[test]
    fn all_valid_gives_full_frame() {
        let masks = vec![ValidityMask::full(64, 48); 3];
        assert_eq!(common_crop(&masks).unwrap(), CropRect::full(64, 48));
    }

    #[test]
    fn left_strip_shrinks_symmetrically() {
        let (w, h) = (200, 100);
        let mut m = ValidityMask::full(w, h);
        for y in 0..h {
            for x in 0..10 {
                m.valid[y * w + x] = false;
            }
        }
        let rect = common_crop(&[m.clone(), m]).unwrap();
        assert!(rect.x0 >= 10);
        assert_eq!(rect.width(), w - 20);
    }

    #[test]
    fn disjoint_validity_is_minimal_crop() {
        let (w, h) = (40, 30);
        let mut a = ValidityMask::full(w, h);
        let mut b = ValidityMask::full(w, h);
        for i in 0..w * h {
            let left = i % w < w / 2;
            a.valid[i] = left;
            b.valid[i] = !left;
        }
        assert!(matches!(common_crop(&[a, b]), Err(Error::MinimalCrop)));
    }

    #[test]
    fn crop_grows_with_displacement() {
        let f = pattern(60, 40);
        let mesh = GridMesh::new(60.0, 40.0, 3, 2).unwrap();
        let mut last = f64::INFINITY;
        for d in [0.0, 1.5, 3.0, 6.0, 9.0] {
            let (_, m) = reproject(&f, &DisplacementField::uniform(0, &mesh, Vec2::new(d, -d / 2.0)), &mesh).unwrap();
            let ratio = common_crop(&[m]).unwrap().area_ratio(60, 40);
            assert!(ratio <= last);
            last = ratio;
        }
    }

    #[test]
    fn crop_and_resize_keeps_size() {
        let f = pattern(40, 30);
        assert_eq!(crop_and_resize(&f, &CropRect::full(40, 30)).unwrap(), f);
        let rect = CropRect { x0: 4, y0: 3, x1: 36, y1: 27 };
        let out = crop_and_resize(&f, &rect).unwrap();
        assert_eq!((out.width, out.height), (40, 30));
        let bad = CropRect { x0: 4, y0: 3, x1: 46, y1: 27 };
        assert!(crop_and_resize(&f, &bad).is_err());
    }
}
