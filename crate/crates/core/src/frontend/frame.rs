use crate::error::{Error, Result};

/// One video frame. The grayscale buffer drives estimation; the optional
/// interleaved RGB buffer is only carried along for rendering.
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub index: usize,
    pub width: usize,
    pub height: usize,
    pub gray: Vec<u8>,
    pub rgb: Option<Vec<u8>>,
}

impl Frame {
    pub fn from_gray(index: usize, width: usize, height: usize, gray: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 || gray.len() != width * height {
            return Err(Error::InvalidDimensions(format!(
                "{width}x{height} frame with {} gray samples",
                gray.len()
            )));
        }
        Ok(Self {
            index,
            width,
            height,
            gray,
            rgb: None,
        })
    }

    pub fn from_rgb(index: usize, width: usize, height: usize, rgb: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 || rgb.len() != 3 * width * height {
            return Err(Error::InvalidDimensions(format!(
                "{width}x{height} frame with {} rgb samples",
                rgb.len()
            )));
        }
        let gray = rgb
            .chunks_exact(3)
            .map(|p| {
                let y = 0.299 * p[0] as f64 + 0.587 * p[1] as f64 + 0.114 * p[2] as f64;
                y.round().clamp(0.0, 255.0) as u8
            })
            .collect();
        Ok(Self {
            index,
            width,
            height,
            gray,
            rgb: Some(rgb),
        })
    }

    pub fn same_size(&self, other: &Frame) -> bool {
        self.width == other.width && self.height == other.height
    }

    pub fn gray_at(&self, x: usize, y: usize) -> u8 {
        self.gray[y * self.width + x]
    }
}
