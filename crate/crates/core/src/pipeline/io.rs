//! Frame directories: `000000.png`, `000001.png`, ... numbered from zero.

use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::frontend::Frame;

pub fn frame_path(dir: &Path, index: usize) -> PathBuf {
    dir.join(format!("{index:06}.png"))
}

fn frame_number(name: &str) -> Option<usize> {
    let stem = name.strip_suffix(".png")?;
    (stem.len() == 6 && stem.bytes().all(|b| b.is_ascii_digit())).then(|| stem.parse().ok())?
}

fn decode(path: &Path, index: usize) -> Result<Frame> {
    let img = image::open(path).map_err(|e| Error::Image {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    if img.color().has_color() {
        Frame::from_rgb(index, w, h, img.into_rgb8().into_raw())
    } else {
        Frame::from_gray(index, w, h, img.into_luma8().into_raw())
    }
}

/// Reads every numbered frame. Numbering must be contiguous from zero and
/// all frames must share one size; failures name the offending frame.
pub fn read_frames(dir: &Path) -> Result<Vec<Frame>> {
    let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut numbers = Vec::new();
    for entry in entries {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        if let Some(n) = entry.file_name().to_str().and_then(frame_number) {
            numbers.push(n);
        }
    }
    numbers.sort_unstable();
    if let Some((i, _)) = numbers.iter().enumerate().find(|&(i, &n)| i != n) {
        return Err(Error::Io {
            path: frame_path(dir, i),
            source: std::io::Error::new(std::io::ErrorKind::NotFound, "frame numbering has a gap"),
        }
        .at_frame(i));
    }
    let frames = crate::par_map(numbers.len(), |i| decode(&frame_path(dir, i), i).map_err(|e| e.at_frame(i)))?;
    if let Some(first) = frames.first() {
        if let Some(bad) = frames.iter().find(|f| !f.same_size(first)) {
            return Err(Error::DimensionMismatch(format!(
                "frame is {}x{}, first frame is {}x{}",
                bad.width, bad.height, first.width, first.height
            ))
            .at_frame(bad.index));
        }
    }
    Ok(frames)
}

/// Writes frames by position, as RGB when colour is present and 8-bit gray
/// otherwise.
pub fn write_frames(dir: &Path, frames: &[Frame]) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for (i, f) in frames.iter().enumerate() {
        let path = frame_path(dir, i);
        let (w, h) = (f.width as u32, f.height as u32);
        let saved = match &f.rgb {
            Some(rgb) => image::RgbImage::from_raw(w, h, rgb.clone()).map(|img| img.save(&path)),
            None => image::GrayImage::from_raw(w, h, f.gray.clone()).map(|img| img.save(&path)),
        };
        let reason = match saved {
            Some(Ok(())) => continue,
            Some(Err(e)) => e.to_string(),
            None => "pixel buffer does not match frame size".into(),
        };
        return Err(Error::Image { path, reason }.at_frame(i));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn frame(i: usize, w: usize, h: usize) -> Frame {
        Frame::from_gray(i, w, h, (0..w * h).map(|p| ((p * 7 + i) % 256) as u8).collect()).unwrap()
    }

    #[test]
    fn round_trip_gray_and_rgb() {
        let dir = tempfile::tempdir().unwrap();
        let gray: Vec<Frame> = (0..3).map(|i| frame(i, 9, 5)).collect();
        write_frames(dir.path(), &gray).unwrap();
        assert_eq!(read_frames(dir.path()).unwrap(), gray);

        let dir = tempfile::tempdir().unwrap();
        let rgb = vec![Frame::from_rgb(0, 2, 1, vec![255, 0, 0, 0, 0, 255]).unwrap()];
        write_frames(dir.path(), &rgb).unwrap();
        assert_eq!(read_frames(dir.path()).unwrap(), rgb);
    }

    #[test]
    fn ignores_other_files_and_reports_gaps() {
        let dir = tempfile::tempdir().unwrap();
        write_frames(dir.path(), &[frame(0, 4, 4), frame(1, 4, 4)]).unwrap();
        std::fs::write(dir.path().join("notes.txt"), "x").unwrap();
        assert_eq!(read_frames(dir.path()).unwrap().len(), 2);
        std::fs::rename(frame_path(dir.path(), 1), frame_path(dir.path(), 2)).unwrap();
        match read_frames(dir.path()) {
            Err(Error::Frame { index, .. }) => assert_eq!(index, 1),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn corrupt_frame_names_its_index() {
        let dir = tempfile::tempdir().unwrap();
        write_frames(dir.path(), &[frame(0, 4, 4), frame(1, 4, 4), frame(2, 4, 4)]).unwrap();
        std::fs::write(frame_path(dir.path(), 1), b"not a png").unwrap();
        match read_frames(dir.path()) {
            Err(Error::Frame { index, source }) => {
                assert_eq!(index, 1);
                assert!(matches!(*source, Error::Image { .. }));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn size_mismatch_names_its_index() {
        let dir = tempfile::tempdir().unwrap();
        write_frames(dir.path(), &[frame(0, 4, 4), frame(1, 4, 4), frame(2, 5, 4)]).unwrap();
        match read_frames(dir.path()) {
            Err(Error::Frame { index, .. }) => assert_eq!(index, 2),
            other => panic!("unexpected {other:?}"),
        }
    }
}
