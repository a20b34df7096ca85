use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::keyvalue::{self, unknown, value};
use crate::error::{Error, Result};
use crate::frontend::{DetectorConfig, LucasKanadeConfig};
use crate::geometry::RansacConfig;
use crate::metrics::MetricsConfig;
use crate::plane::ClusterConfig;
use crate::refine::RefinementConfig;
use crate::smoothing::{KernelMode, SmoothingConfig};

/// Every tunable of a run. Config files use these field names as keys.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub grid_rows: usize,
    pub grid_cols: usize,
    pub keypoints: usize,
    pub radius: f64,
    pub min_spacing: f64,
    pub mr_lambda_m: f64,
    pub mr_lambda_v: f64,
    pub mr_lambda_s: f64,
    pub mr_huber_delta: f64,
    pub mr_max_iterations: usize,
    pub mr_tolerance: f64,
    pub ts_iterations: usize,
    pub ts_lambda: f64,
    pub ts_lambda_s: f64,
    pub ts_lambda_c: f64,
    pub ts_kernel: KernelMode,
    pub ts_sigma_t: f64,
    pub ts_sigma_m: f64,
    pub ts_kernel_file: Option<PathBuf>,
    pub ransac_threshold: f64,
    pub ransac_max_iterations: usize,
    pub ransac_confidence: f64,
    pub flow_levels: usize,
    pub flow_window: usize,
    pub seed: u64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        let mr = RefinementConfig::default();
        let ts = SmoothingConfig::default();
        let ransac = RansacConfig::default();
        let lk = LucasKanadeConfig::default();
        Self {
            grid_rows: 16,
            grid_cols: 16,
            keypoints: 512,
            radius: mr.radius,
            min_spacing: DetectorConfig::default().min_spacing,
            mr_lambda_m: mr.lambda_m,
            mr_lambda_v: mr.lambda_v,
            mr_lambda_s: mr.lambda_s,
            mr_huber_delta: mr.huber_delta,
            mr_max_iterations: mr.max_iterations,
            mr_tolerance: mr.tolerance,
            ts_iterations: ts.iterations,
            ts_lambda: ts.lambda,
            ts_lambda_s: ts.lambda_s,
            ts_lambda_c: ts.lambda_c,
            ts_kernel: ts.mode,
            ts_sigma_t: ts.sigma_t,
            ts_sigma_m: ts.sigma_m,
            ts_kernel_file: None,
            ransac_threshold: ransac.threshold,
            ransac_max_iterations: ransac.max_iterations,
            ransac_confidence: ransac.confidence,
            flow_levels: lk.levels,
            flow_window: lk.window_radius,
            seed: 0,
        }
    }
}

// Fixed offsets deriving per-stage seeds from the configured seed.
const SEED_CLUSTER: u64 = 0x1000;
const SEED_PLANE_RANSAC: u64 = 0x2000;
const SEED_RESIDUAL: u64 = 0x3000;
const SEED_METRICS: u64 = 0x4000;
pub(crate) const SEED_NOISE: u64 = 0x5000;

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("grid_rows", self.grid_rows),
            ("grid_cols", self.grid_cols),
            ("keypoints", self.keypoints),
            ("ts_iterations", self.ts_iterations),
            ("ransac_max_iterations", self.ransac_max_iterations),
            ("flow_levels", self.flow_levels),
            ("flow_window", self.flow_window),
        ];
        for (name, v) in counts {
            if v == 0 {
                return Err(Error::Config(format!("`{name}` must be positive")));
            }
        }
        let reals = [
            ("radius", self.radius),
            ("min_spacing", self.min_spacing),
            ("mr_lambda_m", self.mr_lambda_m),
            ("mr_lambda_v", self.mr_lambda_v),
            ("mr_lambda_s", self.mr_lambda_s),
            ("mr_huber_delta", self.mr_huber_delta),
            ("mr_tolerance", self.mr_tolerance),
            ("ts_lambda", self.ts_lambda),
            ("ts_lambda_s", self.ts_lambda_s),
            ("ts_lambda_c", self.ts_lambda_c),
            ("ts_sigma_t", self.ts_sigma_t),
            ("ts_sigma_m", self.ts_sigma_m),
            ("ransac_threshold", self.ransac_threshold),
        ];
        for (name, v) in reals {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::Config(format!("`{name}` must be a non-negative number, got {v}")));
            }
        }
        if !(self.ransac_confidence > 0.0 && self.ransac_confidence < 1.0) {
            return Err(Error::Config("`ransac_confidence` must lie in (0, 1)".into()));
        }
        if self.ts_kernel == KernelMode::External && self.ts_kernel_file.is_none() {
            return Err(Error::Config("`ts_kernel = external` needs `ts_kernel_file`".into()));
        }
        Ok(())
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut c = Self::default();
        for e in keyvalue::parse(text)? {
            match e.key.as_str() {
                "grid_rows" => c.grid_rows = value(&e)?,
                "grid_cols" => c.grid_cols = value(&e)?,
                "keypoints" => c.keypoints = value(&e)?,
                "radius" => c.radius = value(&e)?,
                "min_spacing" => c.min_spacing = value(&e)?,
                "mr_lambda_m" => c.mr_lambda_m = value(&e)?,
                "mr_lambda_v" => c.mr_lambda_v = value(&e)?,
                "mr_lambda_s" => c.mr_lambda_s = value(&e)?,
                "mr_huber_delta" => c.mr_huber_delta = value(&e)?,
                "mr_max_iterations" => c.mr_max_iterations = value(&e)?,
                "mr_tolerance" => c.mr_tolerance = value(&e)?,
                "ts_iterations" => c.ts_iterations = value(&e)?,
                "ts_lambda" => c.ts_lambda = value(&e)?,
                "ts_lambda_s" => c.ts_lambda_s = value(&e)?,
                "ts_lambda_c" => c.ts_lambda_c = value(&e)?,
                "ts_kernel" => c.ts_kernel = e.value.parse()?,
                "ts_sigma_t" => c.ts_sigma_t = value(&e)?,
                "ts_sigma_m" => c.ts_sigma_m = value(&e)?,
                "ts_kernel_file" => c.ts_kernel_file = Some(PathBuf::from(&e.value)),
                "ransac_threshold" => c.ransac_threshold = value(&e)?,
                "ransac_max_iterations" => c.ransac_max_iterations = value(&e)?,
                "ransac_confidence" => c.ransac_confidence = value(&e)?,
                "flow_levels" => c.flow_levels = value(&e)?,
                "flow_window" => c.flow_window = value(&e)?,
                "seed" => c.seed = value(&e)?,
                _ => return Err(unknown(&e)),
            }
        }
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let mut put = |k: &str, v: &dyn std::fmt::Display| {
            let _ = writeln!(s, "{k} = {v}");
        };
        put("grid_rows", &self.grid_rows);
        put("grid_cols", &self.grid_cols);
        put("keypoints", &self.keypoints);
        put("radius", &self.radius);
        put("min_spacing", &self.min_spacing);
        put("mr_lambda_m", &self.mr_lambda_m);
        put("mr_lambda_v", &self.mr_lambda_v);
        put("mr_lambda_s", &self.mr_lambda_s);
        put("mr_huber_delta", &self.mr_huber_delta);
        put("mr_max_iterations", &self.mr_max_iterations);
        put("mr_tolerance", &self.mr_tolerance);
        put("ts_iterations", &self.ts_iterations);
        put("ts_lambda", &self.ts_lambda);
        put("ts_lambda_s", &self.ts_lambda_s);
        put("ts_lambda_c", &self.ts_lambda_c);
        put("ts_kernel", &self.ts_kernel);
        put("ts_sigma_t", &self.ts_sigma_t);
        put("ts_sigma_m", &self.ts_sigma_m);
        if let Some(p) = &self.ts_kernel_file {
            put("ts_kernel_file", &p.display());
        }
        put("ransac_threshold", &self.ransac_threshold);
        put("ransac_max_iterations", &self.ransac_max_iterations);
        put("ransac_confidence", &self.ransac_confidence);
        put("flow_levels", &self.flow_levels);
        put("flow_window", &self.flow_window);
        put("seed", &self.seed);
        s
    }

    pub fn detector(&self) -> DetectorConfig {
        DetectorConfig {
            max_count: self.keypoints,
            min_spacing: self.min_spacing,
            ..DetectorConfig::default()
        }
    }

    pub fn flow(&self) -> LucasKanadeConfig {
        LucasKanadeConfig {
            levels: self.flow_levels,
            window_radius: self.flow_window,
            ..LucasKanadeConfig::default()
        }
    }

    fn ransac_with_seed(&self, seed: u64) -> RansacConfig {
        RansacConfig {
            threshold: self.ransac_threshold,
            max_iterations: self.ransac_max_iterations,
            confidence: self.ransac_confidence,
            seed,
        }
    }

    pub fn cluster(&self, pair: usize) -> ClusterConfig {
        ClusterConfig {
            keypoint_budget: self.keypoints,
            seed: self.seed.wrapping_add(SEED_CLUSTER).wrapping_add(pair as u64),
            ..ClusterConfig::default()
        }
    }

    pub fn plane_ransac(&self, pair: usize) -> RansacConfig {
        self.ransac_with_seed(self.seed.wrapping_add(SEED_PLANE_RANSAC).wrapping_add(2 * pair as u64))
    }

    pub fn residual_ransac(&self, pair: usize) -> RansacConfig {
        self.ransac_with_seed(self.seed.wrapping_add(SEED_RESIDUAL).wrapping_add(pair as u64))
    }

    pub fn refinement(&self) -> RefinementConfig {
        RefinementConfig {
            lambda_m: self.mr_lambda_m,
            lambda_v: self.mr_lambda_v,
            lambda_s: self.mr_lambda_s,
            huber_delta: self.mr_huber_delta,
            max_iterations: self.mr_max_iterations,
            tolerance: self.mr_tolerance,
            radius: self.radius,
        }
    }

    pub fn smoothing(&self) -> SmoothingConfig {
        SmoothingConfig {
            iterations: self.ts_iterations,
            lambda: self.ts_lambda,
            lambda_s: self.ts_lambda_s,
            lambda_c: self.ts_lambda_c,
            mode: self.ts_kernel,
            sigma_t: self.ts_sigma_t,
            sigma_m: self.ts_sigma_m,
            kernel_file: self.ts_kernel_file.clone(),
        }
    }

    pub fn metrics(&self) -> MetricsConfig {
        MetricsConfig {
            detector: self.detector(),
            flow: self.flow(),
            ransac: self.ransac_with_seed(self.seed.wrapping_add(SEED_METRICS)),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_through_text() {
        let c = PipelineConfig::default();
        assert_eq!(PipelineConfig::parse(&c.to_text()).unwrap(), c);
        assert_eq!(PipelineConfig::parse("").unwrap(), c);
    }

    #[test]
    fn overrides_and_errors() {
        let c = PipelineConfig::parse("grid_rows = 8\nts_kernel = uniform\nseed = 42\n").unwrap();
        assert_eq!((c.grid_rows, c.ts_kernel, c.seed), (8, KernelMode::Uniform, 42));
        assert!(PipelineConfig::parse("grid_rowz = 8\n").is_err());
        assert!(PipelineConfig::parse("grid_rows = eight\n").is_err());
        assert!(PipelineConfig::parse("grid_rows = 0\n").is_err());
        assert!(PipelineConfig::parse("mr_lambda_m = -1\n").is_err());
        assert!(PipelineConfig::parse("ts_kernel = external\n").is_err());
    }

    #[test]
    fn module_configs_carry_defaults() {
        let c = PipelineConfig::default();
        assert_eq!(c.refinement(), RefinementConfig::default());
        assert_eq!(c.smoothing(), SmoothingConfig::default());
        assert_eq!(c.cluster(0).keypoint_budget, 512);
    }
}
