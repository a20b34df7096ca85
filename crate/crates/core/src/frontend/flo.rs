//! `FLO2` flow files: magic, u32 width, u32 height, then row-major
//! `(f32 dx, f32 dy)` pairs, all little-endian.

use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};

use super::flow::{FlowField, FlowProvider};
use super::Frame;
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"FLO2";

pub fn encode_flo(flow: &FlowField) -> Vec<u8> {
    let mut out = Vec::with_capacity(12 + 8 * flow.raw().len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(flow.width as u32).to_le_bytes());
    out.extend_from_slice(&(flow.height as u32).to_le_bytes());
    for v in flow.raw() {
        out.extend_from_slice(&v[0].to_le_bytes());
        out.extend_from_slice(&v[1].to_le_bytes());
    }
    out
}

pub fn decode_flo(frame: usize, bytes: &[u8]) -> Result<FlowField> {
    let mut r = bytes;
    let mut head = [0u8; 12];
    r.read_exact(&mut head)
        .map_err(|_| Error::BadFlowFile("truncated header".into()))?;
    if &head[..4] != MAGIC {
        return Err(Error::BadFlowFile("bad magic".into()));
    }
    let w = u32::from_le_bytes(head[4..8].try_into().expect("4 bytes")) as usize;
    let h = u32::from_le_bytes(head[8..12].try_into().expect("4 bytes")) as usize;
    if r.len() != 8 * w * h {
        return Err(Error::BadFlowFile(format!(
            "expected {} payload bytes for {w}x{h}, found {}",
            8 * w * h,
            r.len()
        )));
    }
    let data = r
        .chunks_exact(8)
        .map(|c| {
            [
                f32::from_le_bytes(c[..4].try_into().expect("4 bytes")),
                f32::from_le_bytes(c[4..].try_into().expect("4 bytes")),
            ]
        })
        .collect();
    FlowField::from_raw(frame, w, h, data).map_err(|e| match e {
        Error::BadFlowFile(m) => Error::BadFlowFile(m),
        other => Error::BadFlowFile(other.to_string()),
    })
}

pub fn write_flo(path: &Path, flow: &FlowField) -> Result<()> {
    fs::write(path, encode_flo(flow)).map_err(|e| Error::io(path, e))
}

pub fn read_flo(path: &Path, frame: usize) -> Result<FlowField> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_flo(frame, &bytes)
}

/// Loads externally computed flow: `<dir>/<index:06>.flo` holds the flow from
/// frame `index` to `index + 1`.
#[derive(Debug, Clone)]
pub struct FloDirectory {
    pub dir: PathBuf,
}

impl FloDirectory {
    pub fn path_for(&self, index: usize) -> PathBuf {
        self.dir.join(format!("{index:06}.flo"))
    }
}

impl FlowProvider for FloDirectory {
    fn flow(&self, a: &Frame, b: &Frame) -> Result<FlowField> {
        let flow = read_flo(&self.path_for(a.index), a.index)?;
        if flow.width != a.width || flow.height != a.height || !a.same_size(b) {
            return Err(Error::DimensionMismatch(format!(
                "flow file is {}x{}, frames are {}x{}",
                flow.width, flow.height, a.width, a.height
            )));
        }
        Ok(flow)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn layout_is_little_endian() {
        let flow = FlowField::from_raw(0, 1, 1, vec![[1.0, -2.0]]).unwrap();
        let bytes = encode_flo(&flow);
        assert_eq!(&bytes[..4], b"FLO2");
        assert_eq!(&bytes[4..12], &[1, 0, 0, 0, 1, 0, 0, 0]);
        assert_eq!(&bytes[12..16], &1.0f32.to_le_bytes());
        assert_eq!(&bytes[16..20], &(-2.0f32).to_le_bytes());
    }

    #[test]
    fn rejects_truncated_and_bad_magic() {
        assert!(decode_flo(0, b"FLO").is_err());
        assert!(decode_flo(0, b"FLO3\x01\0\0\0\x01\0\0\0\0\0\0\0\0\0\0\0").is_err());
        assert!(decode_flo(0, b"FLO2\x01\0\0\0\x01\0\0\0\0\0\0\0").is_err());
    }

    proptest! {
        #[test]
        fn bit_exact_round_trip(w in 1usize..8, h in 1usize..8, seed in any::<u64>()) {
            let data: Vec<[f32; 2]> = (0..w * h)
                .map(|i| {
                    let s = seed.wrapping_mul(6364136223846793005).wrapping_add(i as u64);
                    [((s >> 11) as f32 / 1e12) - 3.0, -(((s >> 23) % 1000) as f32) * 0.013]
                })
                .collect();
            let flow = FlowField::from_raw(4, w, h, data).unwrap();
            let bytes = encode_flo(&flow);
            let back = decode_flo(4, &bytes).unwrap();
            prop_assert_eq!(&back, &flow);
            prop_assert_eq!(encode_flo(&back), bytes);
        }
    }
}
