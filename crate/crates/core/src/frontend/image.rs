/// Single-channel float image used inside the estimators.
#[derive(Debug, Clone, PartialEq)]
pub struct GrayImage {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f32>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            data: vec![0.0; width * height],
        }
    }

    pub fn from_u8(width: usize, height: usize, px: &[u8]) -> Self {
        Self {
            width,
            height,
            data: px.iter().map(|&v| v as f32).collect(),
        }
    }

    #[inline]
    pub fn at(&self, x: usize, y: usize) -> f32 {
        self.data[y * self.width + x]
    }

    /// Bilinear sample with coordinates clamped to the image.
    #[inline]
    pub fn sample_clamped(&self, x: f32, y: f32) -> f32 {
        let x = x.clamp(0.0, (self.width - 1) as f32);
        let y = y.clamp(0.0, (self.height - 1) as f32);
        let x0 = x.floor() as usize;
        let y0 = y.floor() as usize;
        let x1 = (x0 + 1).min(self.width - 1);
        let y1 = (y0 + 1).min(self.height - 1);
        let fx = x - x0 as f32;
        let fy = y - y0 as f32;
        let top = self.at(x0, y0) + fx * (self.at(x1, y0) - self.at(x0, y0));
        let bot = self.at(x0, y1) + fx * (self.at(x1, y1) - self.at(x0, y1));
        top + fy * (bot - top)
    }

    /// Central-difference gradients (one-sided at the border).
    pub fn gradients(&self) -> (GrayImage, GrayImage) {
        let (w, h) = (self.width, self.height);
        let mut gx = GrayImage::new(w, h);
        let mut gy = GrayImage::new(w, h);
        for y in 0..h {
            for x in 0..w {
                let xl = x.saturating_sub(1);
                let xr = (x + 1).min(w - 1);
                let yu = y.saturating_sub(1);
                let yd = (y + 1).min(h - 1);
                let dx = (xr - xl).max(1) as f32;
                let dy = (yd - yu).max(1) as f32;
                gx.data[y * w + x] = (self.at(xr, y) - self.at(xl, y)) / dx;
                gy.data[y * w + x] = (self.at(x, yd) - self.at(x, yu)) / dy;
            }
        }
        (gx, gy)
    }

    /// 5-tap binomial blur followed by 2× decimation.
    pub fn pyr_down(&self) -> GrayImage {
        const K: [f32; 5] = [1.0 / 16.0, 4.0 / 16.0, 6.0 / 16.0, 4.0 / 16.0, 1.0 / 16.0];
        let (w, h) = (self.width, self.height);
        let mut tmp = GrayImage::new(w, h);
        for y in 0..h {
            for x in 0..w {
                let mut acc = 0.0;
                for (k, &kw) in K.iter().enumerate() {
                    let xi = (x as isize + k as isize - 2).clamp(0, w as isize - 1) as usize;
                    acc += kw * self.at(xi, y);
                }
                tmp.data[y * w + x] = acc;
            }
        }
        let (nw, nh) = (w.div_ceil(2), h.div_ceil(2));
        let mut out = GrayImage::new(nw, nh);
        for y in 0..nh {
            for x in 0..nw {
                let mut acc = 0.0;
                for (k, &kw) in K.iter().enumerate() {
                    let yi = (2 * y as isize + k as isize - 2).clamp(0, h as isize - 1) as usize;
                    acc += kw * tmp.at(2 * x, yi);
                }
                out.data[y * nw + x] = acc;
            }
        }
        out
    }
}

/// Summed-area table with clipped box queries.
pub(crate) struct Integral {
    width: usize,
    height: usize,
    sums: Vec<f64>,
}

impl Integral {
    pub fn new(width: usize, height: usize, values: impl Iterator<Item = f64>) -> Self {
        let stride = width + 1;
        let mut sums = vec![0.0; stride * (height + 1)];
        let mut it = values;
        for y in 0..height {
            let mut row = 0.0;
            for x in 0..width {
                row += it.next().unwrap_or(0.0);
                sums[(y + 1) * stride + x + 1] = sums[y * stride + x + 1] + row;
            }
        }
        Self {
            width,
            height,
            sums,
        }
    }

    /// Sum over the window of half-size `r` centred at `(x, y)`, clipped.
    #[inline]
    pub fn box_sum(&self, x: usize, y: usize, r: usize) -> f64 {
        let x0 = x.saturating_sub(r);
        let y0 = y.saturating_sub(r);
        let x1 = (x + r + 1).min(self.width);
        let y1 = (y + r + 1).min(self.height);
        self.rect_sum(x0, y0, x1, y1)
    }

    /// Sum over the half-open rectangle `[x0, x1) × [y0, y1)`.
    #[inline]
    pub fn rect_sum(&self, x0: usize, y0: usize, x1: usize, y1: usize) -> f64 {
        let s = self.width + 1;
        self.sums[y1 * s + x1] - self.sums[y0 * s + x1] - self.sums[y1 * s + x0] + self.sums[y0 * s + x0]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn integral_box_matches_brute_force() {
        let (w, h) = (13, 9);
        let vals: Vec<f64> = (0..w * h).map(|i| ((i * 7919) % 31) as f64 - 15.0).collect();
        let ii = Integral::new(w, h, vals.iter().copied());
        for y in 0..h {
            for x in 0..w {
                let mut brute = 0.0;
                for yy in y.saturating_sub(2)..(y + 3).min(h) {
                    for xx in x.saturating_sub(2)..(x + 3).min(w) {
                        brute += vals[yy * w + xx];
                    }
                }
                assert_eq!(ii.box_sum(x, y, 2), brute);
            }
        }
    }

    #[test]
    fn pyr_down_of_constant_is_constant() {
        let img = GrayImage::from_u8(9, 7, &[100; 63]);
        let d = img.pyr_down();
        assert_eq!((d.width, d.height), (5, 4));
        assert!(d.data.iter().all(|&v| (v - 100.0).abs() < 1e-4));
    }
}
