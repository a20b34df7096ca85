//! Multi-homography motion initialization.
//!
//! Keypoint motions are split into two clusters with k-means; a cluster that
//! is too small is folded back into the larger one. Each mesh vertex takes the
//! majority cluster of the keypoints around it, and its initial motion is the
//! displacement its plane's homography gives it.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frontend::KeypointSet;
use crate::geometry::{fit_homography, GridMesh, Homography, RansacConfig, Vec2};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MotionStage {
    Initialized,
    Refined,
}

/// One motion vector per mesh vertex for a single frame pair.
#[derive(Debug, Clone, PartialEq)]
pub struct GridMotionField {
    pub frame: usize,
    pub vertex_rows: usize,
    pub vertex_cols: usize,
    pub motions: Vec<Vec2>,
    pub stage: MotionStage,
}

impl GridMotionField {
    pub fn uniform(frame: usize, mesh: &GridMesh, motion: Vec2) -> Self {
        Self {
            frame,
            vertex_rows: mesh.vertex_rows(),
            vertex_cols: mesh.vertex_cols(),
            motions: vec![motion; mesh.vertex_count()],
            stage: MotionStage::Initialized,
        }
    }

    pub fn matches(&self, mesh: &GridMesh) -> bool {
        self.vertex_rows == mesh.vertex_rows()
            && self.vertex_cols == mesh.vertex_cols()
            && self.motions.len() == mesh.vertex_count()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClusterConfig {
    /// Nominal keypoint budget `L`; the merge threshold is 20% of it.
    pub keypoint_budget: usize,
    pub restarts: usize,
    pub max_iterations: usize,
    pub seed: u64,
}

impl Default for ClusterConfig {
    fn default() -> Self {
        Self {
            keypoint_budget: 512,
            restarts: 10,
            max_iterations: 100,
            seed: 0,
        }
    }
}

/// Smallest cluster size that survives the merge: 20% of the budget
/// (102 for the default budget of 512).
pub fn merge_threshold(keypoint_budget: usize) -> usize {
    keypoint_budget / 5
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlaneSegmentation {
    pub frame: usize,
    /// Cluster of each keypoint; 0 is always the larger ("master") cluster.
    pub labels: Vec<u8>,
    pub cluster_count: usize,
    /// Plane of each mesh vertex, empty until [`assign_grids`] runs.
    pub vertex_labels: Vec<u8>,
    /// One homography per cluster, empty until [`fit_plane_homographies`] runs.
    pub homographies: Vec<Homography>,
    /// RANSAC inlier flag per keypoint against its own cluster's homography.
    pub inliers: Vec<bool>,
}

impl PlaneSegmentation {
    pub fn cluster_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.cluster_count];
        for &l in &self.labels {
            sizes[l as usize] += 1;
        }
        sizes
    }
}

const MIN_CLUSTER_POINTS: usize = 8;

fn sq_dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)
}

struct KMeansRun {
    labels: Vec<u8>,
    inertia: f64,
}

fn kmeans2(points: &[[f64; 2]], rng: &mut ChaCha8Rng, max_iterations: usize) -> KMeansRun {
    let n = points.len();
    let first = points[rng.random_range(0..n)];
    let d2: Vec<f64> = points.iter().map(|&p| sq_dist(p, first)).collect();
    let total: f64 = d2.iter().sum();
    let second = if total > 0.0 {
        let mut target = rng.random::<f64>() * total;
        let mut pick = n - 1;
        for (i, &d) in d2.iter().enumerate() {
            if target < d {
                pick = i;
                break;
            }
            target -= d;
        }
        points[pick]
    } else {
        first
    };
    let mut centers = [first, second];
    let mut labels = vec![u8::MAX; n];
    for _ in 0..max_iterations.max(1) {
        let mut changed = false;
        for (l, &p) in labels.iter_mut().zip(points) {
            // ties go to cluster 0
            let nl = u8::from(sq_dist(p, centers[1]) < sq_dist(p, centers[0]));
            if *l != nl {
                *l = nl;
                changed = true;
            }
        }
        if !changed {
            break;
        }
        let mut sums = [[0.0f64; 2]; 2];
        let mut counts = [0usize; 2];
        for (&l, &p) in labels.iter().zip(points) {
            sums[l as usize][0] += p[0];
            sums[l as usize][1] += p[1];
            counts[l as usize] += 1;
        }
        for c in 0..2 {
            if counts[c] > 0 {
                centers[c] = [sums[c][0] / counts[c] as f64, sums[c][1] / counts[c] as f64];
            }
        }
    }
    let inertia = labels
        .iter()
        .zip(points)
        .map(|(&l, &p)| sq_dist(p, centers[l as usize]))
        .sum();
    KMeansRun { labels, inertia }
}

/// Two-way k-means on keypoint motions with k-means++ seeding and restarts,
/// followed by the small-cluster merge.
pub fn cluster_motions(kps: &KeypointSet, cfg: &ClusterConfig) -> Result<PlaneSegmentation> {
    if !kps.motions_set || kps.len() < MIN_CLUSTER_POINTS {
        return Err(Error::TooFewPoints {
            needed: MIN_CLUSTER_POINTS,
            got: if kps.motions_set { kps.len() } else { 0 },
        });
    }
    let points: Vec<[f64; 2]> = kps.motions().map(|m| [m.dx, m.dy]).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut best: Option<KMeansRun> = None;
    for _ in 0..cfg.restarts.max(1) {
        let run = kmeans2(&points, &mut rng, cfg.max_iterations);
        if best.as_ref().is_none_or(|b| run.inertia < b.inertia) {
            best = Some(run);
        }
    }
    let mut labels = best.expect("at least one restart").labels;
    let ones = labels.iter().filter(|&&l| l == 1).count();
    let zeros = labels.len() - ones;
    let cluster_count = if ones.min(zeros) < merge_threshold(cfg.keypoint_budget).max(1) {
        labels.iter_mut().for_each(|l| *l = 0);
        1
    } else {
        if ones > zeros {
            labels.iter_mut().for_each(|l| *l = 1 - *l);
        }
        2
    };
    Ok(PlaneSegmentation {
        frame: kps.frame,
        labels,
        cluster_count,
        vertex_labels: Vec::new(),
        homographies: Vec::new(),
        inliers: Vec::new(),
    })
}

/// Labels every vertex with the majority cluster among keypoints within
/// `radius`; ties and empty neighbourhoods go to cluster 0.
pub fn assign_grids(seg: &PlaneSegmentation, kps: &KeypointSet, mesh: &GridMesh, radius: f64) -> Result<PlaneSegmentation> {
    if seg.labels.len() != kps.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} labels for {} keypoints",
            seg.labels.len(),
            kps.len()
        )));
    }
    if !(radius > 0.0) {
        return Err(Error::Config(format!("radius must be positive, got {radius}")));
    }
    let mut out = seg.clone();
    out.vertex_labels = if seg.cluster_count < 2 {
        vec![0; mesh.vertex_count()]
    } else {
        let r2 = radius * radius;
        mesh.vertices()
            .iter()
            .map(|&v| {
                let mut votes = [0usize; 2];
                for (kp, &l) in kps.points.iter().zip(&seg.labels) {
                    if (kp.position - v).norm_squared() <= r2 {
                        votes[l as usize] += 1;
                    }
                }
                u8::from(votes[1] > votes[0])
            })
            .collect()
    };
    Ok(out)
}

/// Fits one homography per cluster from `(p, p + m)` pairs.
pub fn fit_plane_homographies(seg: &PlaneSegmentation, kps: &KeypointSet, ransac: &RansacConfig) -> Result<PlaneSegmentation> {
    let mut out = seg.clone();
    out.homographies.clear();
    out.inliers = vec![false; kps.len()];
    for c in 0..seg.cluster_count {
        let members: Vec<usize> = (0..kps.len()).filter(|&j| seg.labels[j] as usize == c).collect();
        let pairs: Vec<_> = members
            .iter()
            .map(|&j| {
                let kp = &kps.points[j];
                (kp.position, kp.position + kp.motion)
            })
            .collect();
        let cfg = RansacConfig {
            seed: ransac.seed.wrapping_add(c as u64),
            ..*ransac
        };
        let fit = fit_homography(&pairs, &cfg)?;
        for (&j, &inl) in members.iter().zip(&fit.inliers) {
            out.inliers[j] = inl;
        }
        out.homographies.push(fit.homography);
    }
    Ok(out)
}

/// Vertex motion from the vertex's plane homography: `H(v) - v`.
pub fn init_vertex_motion(seg: &PlaneSegmentation, mesh: &GridMesh) -> Result<GridMotionField> {
    if seg.homographies.len() != seg.cluster_count {
        return Err(Error::InsufficientPoints { needed: 4, got: 0 });
    }
    if seg.vertex_labels.len() != mesh.vertex_count() {
        return Err(Error::ShapeMismatch(format!(
            "{} vertex labels for {} vertices",
            seg.vertex_labels.len(),
            mesh.vertex_count()
        )));
    }
    let motions = mesh
        .vertices()
        .iter()
        .zip(&seg.vertex_labels)
        .map(|(&v, &l)| Ok(seg.homographies[l as usize].apply(v)? - v))
        .collect::<Result<Vec<_>>>()?;
    Ok(GridMotionField {
        frame: seg.frame,
        vertex_rows: mesh.vertex_rows(),
        vertex_cols: mesh.vertex_cols(),
        motions,
        stage: MotionStage::Initialized,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Point2;

    fn scatter(n: usize, seed: u64, x: (f64, f64), y: (f64, f64)) -> Vec<Point2> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| Point2::new(rng.random_range(x.0..x.1), rng.random_range(y.0..y.1)))
            .collect()
    }

    fn two_plane_scene() -> KeypointSet {
        let left = scatter(256, 1, (5.0, 315.0), (5.0, 475.0));
        let right = scatter(256, 2, (325.0, 635.0), (5.0, 475.0));
        KeypointSet::from_motions(
            0,
            left.into_iter()
                .map(|p| (p, Vec2::new(5.0, 0.0)))
                .chain(right.into_iter().map(|p| (p, Vec2::new(-5.0, 0.0)))),
        )
    }

    #[test]
    fn separable_motions_split_by_sign() {
        let kps = two_plane_scene();
        let seg = cluster_motions(&kps, &ClusterConfig::default()).unwrap();
        assert_eq!(seg.cluster_count, 2);
        let left_label = seg.labels[0];
        for (kp, &l) in kps.points.iter().zip(&seg.labels) {
            assert_eq!(l == left_label, kp.motion.dx > 0.0);
        }
    }

    #[test]
    fn small_cluster_is_merged() {
        let pts = scatter(512, 5, (0.0, 640.0), (0.0, 480.0));
        let kps = KeypointSet::from_motions(
            0,
            pts.iter()
                .enumerate()
                .map(|(i, &p)| (p, if i < 450 { Vec2::new(1.0, 0.0) } else { Vec2::new(9.0, 9.0) })),
        );
        let seg = cluster_motions(&kps, &ClusterConfig::default()).unwrap();
        assert_eq!(seg.cluster_count, 1);
        assert!(seg.labels.iter().all(|&l| l == 0));
    }

    #[test]
    fn identical_motions_form_one_cluster() {
        let pts = scatter(40, 9, (0.0, 100.0), (0.0, 100.0));
        let kps = KeypointSet::from_motions(0, pts.into_iter().map(|p| (p, Vec2::new(2.0, -1.0))));
        let seg = cluster_motions(&kps, &ClusterConfig::default()).unwrap();
        assert_eq!(seg.cluster_count, 1);
    }

    #[test]
    fn too_few_points() {
        let kps = KeypointSet::from_motions(0, (0..5).map(|i| (Point2::new(i as f64, 0.0), Vec2::ZERO)));
        assert!(matches!(
            cluster_motions(&kps, &ClusterConfig::default()),
            Err(Error::TooFewPoints { .. })
        ));
    }

    #[test]
    fn merge_threshold_matches_budget() {
        assert_eq!(merge_threshold(512), 102);
    }

    #[test]
    fn merge_boundary_at_budget_fifth() {
        let pts = scatter(512, 6, (0.0, 640.0), (0.0, 480.0));
        for (minor, expected) in [(101, 1), (102, 2)] {
            let kps = KeypointSet::from_motions(
                0,
                pts.iter()
                    .enumerate()
                    .map(|(i, &p)| (p, if i < minor { Vec2::new(20.0, 0.0) } else { Vec2::ZERO })),
            );
            let seg = cluster_motions(&kps, &ClusterConfig::default()).unwrap();
            assert_eq!(seg.cluster_count, expected, "minor cluster of {minor}");
        }
    }

    #[test]
    fn vertex_labels_follow_regions() {
        let kps = two_plane_scene();
        let mesh = GridMesh::new(640.0, 480.0, 16, 16).unwrap();
        let seg = cluster_motions(&kps, &ClusterConfig::default()).unwrap();
        let seg = assign_grids(&seg, &kps, &mesh, 200.0).unwrap();
        let left_label = seg.labels[0];
        // deep inside each half
        assert_eq!(seg.vertex_labels[mesh.vertex_index(8, 2)], left_label);
        assert_eq!(seg.vertex_labels[mesh.vertex_index(8, 14)], 1 - left_label);
    }

    #[test]
    fn empty_neighbourhood_falls_back_to_master() {
        let mut pts = scatter(150, 3, (0.0, 60.0), (0.0, 60.0));
        pts.extend(scatter(120, 4, (0.0, 60.0), (0.0, 60.0)));
        let kps = KeypointSet::from_motions(
            0,
            pts.into_iter()
                .enumerate()
                .map(|(i, p)| (p, if i < 150 { Vec2::new(0.0, 0.0) } else { Vec2::new(20.0, 0.0) })),
        );
        let seg = cluster_motions(&kps, &ClusterConfig::default()).unwrap();
        assert_eq!(seg.cluster_count, 2);
        assert_eq!(seg.cluster_sizes(), vec![150, 120]);
        let mesh = GridMesh::new(1000.0, 1000.0, 4, 4).unwrap();
        let seg = assign_grids(&seg, &kps, &mesh, 50.0).unwrap();
        assert_eq!(seg.vertex_labels[mesh.vertex_index(4, 4)], 0);
    }

    #[test]
    fn translation_plane_initializes_every_vertex() {
        let pts = scatter(200, 8, (1.0, 639.0), (1.0, 479.0));
        let kps = KeypointSet::from_motions(0, pts.into_iter().map(|p| (p, Vec2::new(5.0, 0.0))));
        let mesh = GridMesh::new(640.0, 480.0, 16, 16).unwrap();
        let seg = cluster_motions(&kps, &ClusterConfig::default()).unwrap();
        let seg = assign_grids(&seg, &kps, &mesh, 200.0).unwrap();
        let seg = fit_plane_homographies(&seg, &kps, &RansacConfig::default()).unwrap();
        let field = init_vertex_motion(&seg, &mesh).unwrap();
        for m in &field.motions {
            assert!((m.dx - 5.0).abs() < 1e-6 && m.dy.abs() < 1e-6);
        }
    }

    #[test]
    fn tiny_cluster_cannot_be_fitted() {
        let seg = PlaneSegmentation {
            frame: 0,
            labels: vec![0, 0, 0],
            cluster_count: 1,
            vertex_labels: Vec::new(),
            homographies: Vec::new(),
            inliers: Vec::new(),
        };
        let kps = KeypointSet::from_motions(
            0,
            [(0.0, 0.0), (10.0, 0.0), (0.0, 10.0)].map(|(x, y)| (Point2::new(x, y), Vec2::new(1.0, 1.0))),
        );
        assert!(matches!(
            fit_plane_homographies(&seg, &kps, &RansacConfig::default()),
            Err(Error::InsufficientPoints { .. })
        ));
    }
}
