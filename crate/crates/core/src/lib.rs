//! Grid-trajectory video stabilization.
//!
//! Frames are tracked with a classical front end (Shi-Tomasi corners and
//! dense pyramidal Lucas-Kanade flow). Keypoint motions are split into at
//! most two motion planes, each fitted with a homography that seeds the
//! motion of every mesh vertex. Vertex motions are then refined by a robust
//! least-squares solve, accumulated into per-vertex trajectories, smoothed by
//! a Jacobi-style iteration driven by per-vertex kernels, and rendered by
//! backward mesh warping followed by a common crop.

pub mod error;
pub mod frontend;
pub mod geometry;
pub mod metrics;
pub mod pipeline;
pub mod plane;
pub mod refine;
pub mod smoothing;
pub mod warp;

pub use error::{Error, Result};
pub use geometry::{GridMesh, Homography, Point2, Vec2};

/// Maps `f` over `0..n` and collects in index order, stopping at the first
/// error by index. Runs on the rayon pool when the `parallel` feature is on.
pub(crate) fn par_map<T, F>(n: usize, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(usize) -> Result<T> + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        let all: Vec<Result<T>> = (0..n).into_par_iter().map(f).collect();
        all.into_iter().collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        (0..n).map(f).collect()
    }
}
