//! Parameter sweeps over a corpus of sequences, one CSV row per
//! (sequence, setting).

use std::fmt::{self, Write as _};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::config::{PipelineConfig, SEED_NOISE};
use super::{estimate_motion, evaluate, stabilize, CachedFlows};
use crate::error::{Error, Result};
use crate::frontend::{Frame, FlowField, FlowProvider, PyramidalLucasKanade};
use crate::metrics::{inject_noise, NoiseSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepKind {
    Iterations,
    MrWeights,
    TsWeights,
    Noise,
}

impl FromStr for SweepKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "iterations" => Ok(Self::Iterations),
            "mr_weights" => Ok(Self::MrWeights),
            "ts_weights" => Ok(Self::TsWeights),
            "noise" => Ok(Self::Noise),
            _ => Err(Error::Config(format!(
                "unknown sweep kind `{s}` (iterations, mr_weights, ts_weights, noise)"
            ))),
        }
    }
}

impl fmt::Display for SweepKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Iterations => "iterations",
            Self::MrWeights => "mr_weights",
            Self::TsWeights => "ts_weights",
            Self::Noise => "noise",
        })
    }
}

/// One setting of a sweep together with the text it was parsed from.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepValue {
    pub label: String,
    pub setting: Setting,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Setting {
    Iterations(usize),
    /// `λ1:λ2` with `λm = λ1` and `λv = λs = λ2`.
    MrWeights(f64, f64),
    /// `λ1:λ2` with `λ = λ1`, `λs = 2·λ2` and `λc = λ2`.
    TsWeights(f64, f64),
    /// `None` is the clean baseline.
    Noise(Option<NoiseSpec>),
}

fn weights(s: &str) -> Result<(f64, f64)> {
    let bad = || Error::Config(format!("expected `a:b` weights, got `{s}`"));
    let (a, b) = s.split_once(':').ok_or_else(bad)?;
    let a: f64 = a.trim().parse().map_err(|_| bad())?;
    let b: f64 = b.trim().parse().map_err(|_| bad())?;
    if !(a >= 0.0 && b >= 0.0 && a.is_finite() && b.is_finite()) {
        return Err(bad());
    }
    Ok((a, b))
}

fn noise(s: &str) -> Result<Option<NoiseSpec>> {
    match s {
        "none" => Ok(None),
        "sp" => Ok(Some(NoiseSpec::salt_pepper(0))),
        "blank" => Ok(Some(NoiseSpec::blank(0))),
        _ => {
            let pct: u32 = s
                .strip_prefix('g')
                .and_then(|p| p.parse().ok())
                .filter(|p| (1..=100).contains(p))
                .ok_or_else(|| Error::Config(format!("unknown noise `{s}` (none, g5, g10, g15, g20, sp, blank)")))?;
            Ok(Some(NoiseSpec::gaussian(pct as f64 / 100.0, 0)))
        }
    }
}

/// Parses a comma-separated list of settings for `kind`.
pub fn parse_sweep_values(kind: SweepKind, list: &str) -> Result<Vec<SweepValue>> {
    list.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| {
            let setting = match kind {
                SweepKind::Iterations => Setting::Iterations(
                    s.parse()
                        .ok()
                        .filter(|&n| n > 0)
                        .ok_or_else(|| Error::Config(format!("bad iteration count `{s}`")))?,
                ),
                SweepKind::MrWeights => {
                    let (a, b) = weights(s)?;
                    Setting::MrWeights(a, b)
                }
                SweepKind::TsWeights => {
                    let (a, b) = weights(s)?;
                    Setting::TsWeights(a, b)
                }
                SweepKind::Noise => Setting::Noise(noise(s)?),
            };
            Ok(SweepValue {
                label: s.to_string(),
                setting,
            })
        })
        .collect()
}

fn apply(cfg: &PipelineConfig, setting: &Setting) -> PipelineConfig {
    let mut c = cfg.clone();
    match *setting {
        Setting::Iterations(n) => c.ts_iterations = n,
        Setting::MrWeights(a, b) => {
            c.mr_lambda_m = a;
            c.mr_lambda_v = b;
            c.mr_lambda_s = b;
        }
        Setting::TsWeights(a, b) => {
            c.ts_lambda = a;
            c.ts_lambda_s = 2.0 * b;
            c.ts_lambda_c = b;
        }
        Setting::Noise(_) => {}
    }
    c
}

/// Cached flow with seeded noise injected per pair.
struct NoisyFlows<'a> {
    clean: &'a CachedFlows,
    noise: Option<NoiseSpec>,
    seed: u64,
}

impl FlowProvider for NoisyFlows<'_> {
    fn flow(&self, a: &Frame, b: &Frame) -> Result<FlowField> {
        let flow = self.clean.flow(a, b)?;
        match &self.noise {
            None => Ok(flow),
            Some(spec) => inject_noise(
                &flow,
                &NoiseSpec {
                    seed: self.seed.wrapping_add(SEED_NOISE).wrapping_add(a.index as u64),
                    ..spec.clone()
                },
            ),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub sequence: String,
    pub kind: SweepKind,
    pub value: String,
    pub stability: Option<f64>,
    pub distortion: f64,
    pub cropping: f64,
    pub distance_mean: f64,
    /// Total of the smoothing objective at the result.
    pub ts_objective: f64,
}

pub const SWEEP_HEADER: &str = "sequence,kind,value,stability,distortion,cropping,distance_mean,ts_objective";

/// Runs every setting on one sequence. Work that a setting cannot change
/// (motion for smoothing sweeps, flow for the others) is done once.
pub fn sweep_sequence(
    name: &str,
    frames: &[Frame],
    kind: SweepKind,
    values: &[SweepValue],
    cfg: &PipelineConfig,
) -> Result<Vec<SweepRow>> {
    let lk = PyramidalLucasKanade { config: cfg.flow() };
    let shared_pairs = match kind {
        SweepKind::Iterations | SweepKind::TsWeights => Some(estimate_motion(frames, cfg, &lk)?),
        _ => None,
    };
    let flows = match kind {
        SweepKind::MrWeights | SweepKind::Noise => Some(CachedFlows::compute(frames, &lk)?),
        _ => None,
    };
    let mut rows = Vec::with_capacity(values.len());
    for v in values {
        let c = apply(cfg, &v.setting);
        let owned;
        let pairs = match (&shared_pairs, &flows) {
            (Some(p), _) => p,
            (None, Some(clean)) => {
                let provider = NoisyFlows {
                    clean,
                    noise: match &v.setting {
                        Setting::Noise(n) => n.clone(),
                        _ => None,
                    },
                    seed: c.seed,
                };
                owned = estimate_motion(frames, &c, &provider)?;
                &owned
            }
            (None, None) => unreachable!("every kind shares motion or flow"),
        };
        let stabilized = stabilize(frames, pairs, &c)?;
        let report = evaluate(frames, &stabilized, pairs, &c)?;
        rows.push(SweepRow {
            sequence: name.to_string(),
            kind,
            value: v.label.clone(),
            stability: report.stability,
            distortion: report.distortion,
            cropping: report.cropping,
            distance_mean: report.distance_mean,
            ts_objective: stabilized.ts_objective.total,
        });
    }
    Ok(rows)
}

/// Sweeps every subdirectory of `corpus` (sorted by name) as one sequence.
#[cfg(feature = "image-io")]
pub fn run_sweep(corpus: &std::path::Path, kind: SweepKind, values: &[SweepValue], cfg: &PipelineConfig) -> Result<Vec<SweepRow>> {
    let entries = std::fs::read_dir(corpus).map_err(|e| Error::io(corpus, e))?;
    let mut dirs = Vec::new();
    for entry in entries {
        let entry = entry.map_err(|e| Error::io(corpus, e))?;
        if entry.path().is_dir() {
            dirs.push(entry.path());
        }
    }
    dirs.sort();
    let mut rows = Vec::new();
    for dir in dirs {
        let name = dir.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
        let frames = super::read_frames(&dir)?;
        rows.extend(sweep_sequence(&name, &frames, kind, values, cfg)?);
    }
    Ok(rows)
}

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut s = String::from(SWEEP_HEADER);
    s.push('\n');
    for r in rows {
        let stability = r.stability.map(|v| v.to_string()).unwrap_or_default();
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{}",
            r.sequence, r.kind, r.value, stability, r.distortion, r.cropping, r.distance_mean, r.ts_objective
        );
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::NoiseKind;

    #[test]
    fn value_lists() {
        let v = parse_sweep_values(SweepKind::Iterations, "5, 10,15").unwrap();
        assert_eq!(v.iter().map(|x| x.label.as_str()).collect::<Vec<_>>(), ["5", "10", "15"]);
        assert!(parse_sweep_values(SweepKind::Iterations, "0").is_err());
        let v = parse_sweep_values(SweepKind::MrWeights, "10:40").unwrap();
        assert_eq!(v[0].setting, Setting::MrWeights(10.0, 40.0));
        assert!(parse_sweep_values(SweepKind::TsWeights, "15").is_err());
        let v = parse_sweep_values(SweepKind::Noise, "none,g5,g20,sp,blank").unwrap();
        assert_eq!(v[0].setting, Setting::Noise(None));
        let Setting::Noise(Some(g)) = &v[1].setting else { panic!() };
        assert_eq!((g.kind, g.sigma, g.fraction), (NoiseKind::Gaussian, 0.05, 0.1));
        assert!(parse_sweep_values(SweepKind::Noise, "pink").is_err());
        assert!("nope".parse::<SweepKind>().is_err());
    }

    #[test]
    fn weights_map_onto_config() {
        let c = apply(&PipelineConfig::default(), &Setting::TsWeights(7.0, 3.0));
        assert_eq!((c.ts_lambda, c.ts_lambda_s, c.ts_lambda_c), (7.0, 6.0, 3.0));
        let c = apply(&PipelineConfig::default(), &Setting::MrWeights(1.0, 2.0));
        assert_eq!((c.mr_lambda_m, c.mr_lambda_v, c.mr_lambda_s), (1.0, 2.0, 2.0));
    }

    #[test]
    fn empty_table_has_header_only() {
        assert_eq!(sweep_csv(&[]), format!("{SWEEP_HEADER}\n"));
    }

    #[cfg(feature = "image-io")]
    #[test]
    fn empty_corpus() {
        let dir = tempfile::tempdir().unwrap();
        let v = parse_sweep_values(SweepKind::Iterations, "5").unwrap();
        assert!(run_sweep(dir.path(), SweepKind::Iterations, &v, &PipelineConfig::default())
            .unwrap()
            .is_empty());
    }
}
