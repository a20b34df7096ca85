//! Classical front end: per-frame corners and dense inter-frame flow.

mod flo;
mod flow;
mod frame;
mod image;
mod keypoints;

pub use flo::{decode_flo, encode_flo, read_flo, write_flo, FloDirectory};
pub use flow::{compute_flow, compute_flow_with, FlowField, FlowProvider, LucasKanadeConfig, PyramidalLucasKanade};
pub use frame::Frame;
pub use image::GrayImage;
pub(crate) use image::Integral;
pub use keypoints::{detect_keypoints, sample_motions, DetectorConfig, Keypoint, KeypointSet};
