//! Experiment configuration: a single TOML file with one section per
//! concern. Parse errors carry the offending line/key from the TOML
//! reader; semantic violations name the section and field.

use std::path::Path;

use serde::Deserialize;

use oulab_core::field::GridSpec;
use oulab_core::geometry::{parse_set_text, BoxRegion, SetRepr, ThickSet};
use oulab_core::inverse::{AdmissibleClass, StabilityParams, SweepConfig};
use oulab_core::linops::DriftMatrix;

use crate::CliError;

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub grid: Option<GridSection>,
    pub drift: Option<DriftSection>,
    pub time: Option<TimeSection>,
    pub initial: Option<InitialSection>,
    pub observation: Option<ObservationSection>,
    pub admissible: Option<AdmissibleSection>,
    pub stability: Option<StabilitySection>,
    pub reconstruct: Option<ReconstructSection>,
    pub sweep: Option<SweepSection>,
    #[serde(default)]
    pub run: RunSection,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSection {
    pub dimension: usize,
    pub half_width: f64,
    pub points_per_axis: usize,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DriftSection {
    /// Row-major rows of the drift matrix B.
    pub rows: Vec<Vec<f64>>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimeSection {
    pub theta: f64,
    /// Number of intervals k; trajectories sample k+1 nodes.
    pub samples: usize,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialSection {
    /// "gaussian", "mixture", or "file".
    pub kind: String,
    pub center: Option<Vec<f64>>,
    pub sigma: Option<f64>,
    /// For "mixture": rows [amplitude, center..., sigma].
    pub bumps: Option<Vec<Vec<f64>>>,
    /// For "file": an OUGS1 state path (relative to the config file).
    pub file: Option<String>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObservationSection {
    /// "full", "boxes", "periodic", or "file".
    pub kind: String,
    pub gamma: f64,
    pub cube_sides: Vec<f64>,
    /// For "boxes"/"periodic": rows [x1min, x1max, x2min, x2max, …].
    pub boxes: Option<Vec<Vec<f64>>>,
    pub periods: Option<Vec<f64>>,
    /// For "file": textual set description path.
    pub file: Option<String>,
    /// Verification window rows [min, max] per axis.
    pub window: Option<Vec<Vec<f64>>>,
    pub resolution: Option<usize>,
    /// Ball-containment parameters.
    pub delta: Option<f64>,
    pub radius: Option<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdmissibleSection {
    /// "graph" or "sobolev".
    pub kind: String,
    pub radius: f64,
    pub epsilon: Option<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StabilitySection {
    pub c: f64,
    pub c1: f64,
    pub k: f64,
    pub p: f64,
    pub s: f64,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReconstructSection {
    pub alpha: f64,
    pub iters: usize,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSection {
    pub noise_levels: Vec<f64>,
    pub reps: usize,
    pub alpha: f64,
    pub iters: usize,
}

#[derive(Debug, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    pub seed: Option<u64>,
    /// Ensemble size for observability runs.
    pub ensemble_count: Option<usize>,
    /// Recorded cap for observability ratios.
    pub cap: Option<f64>,
    /// Regularity exponents for smoothing-style diagnostics.
    pub epsilon: Option<f64>,
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }

    pub fn grid_spec(&self) -> Result<GridSpec, CliError> {
        let g = self
            .grid
            .as_ref()
            .ok_or_else(|| CliError::Config("missing [grid] section".into()))?;
        GridSpec::new(g.dimension, g.half_width, g.points_per_axis)
            .map_err(|e| CliError::Config(format!("[grid]: {e}")))
    }

    pub fn drift_matrix(&self) -> Result<DriftMatrix, CliError> {
        let d = self
            .drift
            .as_ref()
            .ok_or_else(|| CliError::Config("missing [drift] section".into()))?;
        let rows: Vec<&[f64]> = d.rows.iter().map(|r| r.as_slice()).collect();
        DriftMatrix::from_rows(&rows).map_err(|e| CliError::Config(format!("[drift].rows: {e}")))
    }

    pub fn time(&self) -> Result<(f64, usize), CliError> {
        let t = self
            .time
            .as_ref()
            .ok_or_else(|| CliError::Config("missing [time] section".into()))?;
        if !(t.theta > 0.0) || !t.theta.is_finite() {
            return Err(CliError::Config("[time].theta must be positive".into()));
        }
        if t.samples == 0 {
            return Err(CliError::Config("[time].samples must be >= 1".into()));
        }
        Ok((t.theta, t.samples))
    }

    pub fn initial_state(
        &self,
        spec: &GridSpec,
        base_dir: &Path,
    ) -> Result<oulab_core::field::GridState, CliError> {
        use oulab_core::field::GridState;
        let init = self
            .initial
            .as_ref()
            .ok_or_else(|| CliError::Config("missing [initial] section".into()))?;
        match init.kind.as_str() {
            "gaussian" => {
                let center = init
                    .center
                    .clone()
                    .ok_or_else(|| CliError::Config("[initial].center required".into()))?;
                let sigma = init
                    .sigma
                    .ok_or_else(|| CliError::Config("[initial].sigma required".into()))?;
                GridState::gaussian(spec.clone(), &center, sigma)
                    .map_err(|e| CliError::Config(format!("[initial]: {e}")))
            }
            "mixture" => {
                let bumps = init
                    .bumps
                    .clone()
                    .ok_or_else(|| CliError::Config("[initial].bumps required".into()))?;
                let n = spec.dim();
                let mut parsed = Vec::new();
                for (i, row) in bumps.iter().enumerate() {
                    if row.len() != n + 2 {
                        return Err(CliError::Config(format!(
                            "[initial].bumps[{i}] expects {} values (amp, center…, sigma)",
                            n + 2
                        )));
                    }
                    let amp = row[0];
                    let center = row[1..=n].to_vec();
                    let sigma = row[n + 1];
                    if !(sigma > 0.0) {
                        return Err(CliError::Config(format!(
                            "[initial].bumps[{i}]: sigma must be positive"
                        )));
                    }
                    parsed.push((amp, center, sigma));
                }
                GridState::from_fn(spec.clone(), |x| {
                    parsed
                        .iter()
                        .map(|(a, c, s)| {
                            let r2: f64 = x
                                .iter()
                                .zip(c.iter())
                                .map(|(xi, ci)| (xi - ci) * (xi - ci))
                                .sum();
                            a * (-r2 / (4.0 * s)).exp()
                        })
                        .sum()
                })
                .map_err(|e| CliError::Config(format!("[initial]: {e}")))
            }
            "file" => {
                let file = init
                    .file
                    .as_ref()
                    .ok_or_else(|| CliError::Config("[initial].file required".into()))?;
                let state = oulab_core::field::load_ougs(base_dir.join(file))
                    .map_err(|e| CliError::Config(format!("[initial].file: {e}")))?;
                if state.spec() != spec {
                    return Err(CliError::Config(
                        "[initial].file: state grid does not match [grid]".into(),
                    ));
                }
                Ok(state)
            }
            other => Err(CliError::Config(format!(
                "[initial].kind: unknown kind {other:?} (gaussian|mixture|file)"
            ))),
        }
    }

    pub fn thick_set(&self, n: usize, base_dir: &Path) -> Result<ThickSet, CliError> {
        let o = self
            .observation
            .as_ref()
            .ok_or_else(|| CliError::Config("missing [observation] section".into()))?;
        let repr = match o.kind.as_str() {
            "full" => SetRepr::Full,
            "boxes" => SetRepr::Boxes(parse_box_rows(o.boxes.as_deref().unwrap_or(&[]), n)?),
            "periodic" => {
                let periods = o.periods.clone().ok_or_else(|| {
                    CliError::Config("[observation].periods required for periodic sets".into())
                })?;
                SetRepr::Periodic {
                    periods,
                    base: parse_box_rows(o.boxes.as_deref().unwrap_or(&[]), n)?,
                }
            }
            "file" => {
                let file = o.file.as_ref().ok_or_else(|| {
                    CliError::Config("[observation].file required for kind = \"file\"".into())
                })?;
                let text = std::fs::read_to_string(base_dir.join(file)).map_err(|e| {
                    CliError::Config(format!("[observation].file {}: {e}", file))
                })?;
                parse_set_text(&text, n)
                    .map_err(|e| CliError::Config(format!("[observation].file: {e}")))?
            }
            other => {
                return Err(CliError::Config(format!(
                    "[observation].kind: unknown kind {other:?} (full|boxes|periodic|file)"
                )))
            }
        };
        ThickSet::new(n, repr, o.gamma, o.cube_sides.clone())
            .map_err(|e| CliError::Config(format!("[observation]: {e}")))
    }

    pub fn observation_window(&self, n: usize) -> Result<BoxRegion, CliError> {
        let o = self
            .observation
            .as_ref()
            .ok_or_else(|| CliError::Config("missing [observation] section".into()))?;
        let rows = o
            .window
            .as_ref()
            .ok_or_else(|| CliError::Config("[observation].window required".into()))?;
        if rows.len() != n || rows.iter().any(|r| r.len() != 2) {
            return Err(CliError::Config(format!(
                "[observation].window expects {n} rows of [min, max]"
            )));
        }
        let min: Vec<f64> = rows.iter().map(|r| r[0]).collect();
        let max: Vec<f64> = rows.iter().map(|r| r[1]).collect();
        BoxRegion::new(min, max).map_err(|e| CliError::Config(format!("[observation].window: {e}")))
    }

    pub fn admissible(&self) -> Result<AdmissibleClass, CliError> {
        let a = self
            .admissible
            .as_ref()
            .ok_or_else(|| CliError::Config("missing [admissible] section".into()))?;
        let class = match a.kind.as_str() {
            "graph" => AdmissibleClass::GraphNormBall { r: a.radius },
            "sobolev" => AdmissibleClass::SobolevBall {
                r: a.radius,
                epsilon: a.epsilon.ok_or_else(|| {
                    CliError::Config("[admissible].epsilon required for sobolev balls".into())
                })?,
            },
            other => {
                return Err(CliError::Config(format!(
                    "[admissible].kind: unknown kind {other:?} (graph|sobolev)"
                )))
            }
        };
        class
            .validate()
            .map_err(|e| CliError::Config(format!("[admissible]: {e}")))?;
        Ok(class)
    }

    pub fn stability_params(&self) -> Result<StabilityParams, CliError> {
        let s = self
            .stability
            .as_ref()
            .ok_or_else(|| CliError::Config("missing [stability] section".into()))?;
        Ok(StabilityParams {
            c: s.c,
            c1: s.c1,
            k: s.k,
            p: s.p,
            s: s.s,
        })
    }

    pub fn sweep_config(&self, seed: u64) -> Result<SweepConfig, CliError> {
        let s = self
            .sweep
            .as_ref()
            .ok_or_else(|| CliError::Config("missing [sweep] section".into()))?;
        if s.noise_levels.is_empty() {
            return Err(CliError::Config(
                "[sweep].noise_levels must be nonempty".into(),
            ));
        }
        if s.noise_levels.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(CliError::Config(
                "[sweep].noise_levels must be finite and >= 0".into(),
            ));
        }
        if s.reps == 0 {
            return Err(CliError::Config("[sweep].reps must be >= 1".into()));
        }
        if !(s.alpha > 0.0) {
            return Err(CliError::Config("[sweep].alpha must be positive".into()));
        }
        if s.iters == 0 {
            return Err(CliError::Config("[sweep].iters must be >= 1".into()));
        }
        Ok(SweepConfig {
            noise_levels: s.noise_levels.clone(),
            reps: s.reps,
            alpha: s.alpha,
            iters: s.iters,
            seed,
        })
    }

    pub fn reconstruct_params(&self) -> Result<(f64, usize), CliError> {
        let r = self
            .reconstruct
            .as_ref()
            .ok_or_else(|| CliError::Config("missing [reconstruct] section".into()))?;
        if !(r.alpha > 0.0) {
            return Err(CliError::Config(
                "[reconstruct].alpha must be positive".into(),
            ));
        }
        if r.iters == 0 {
            return Err(CliError::Config("[reconstruct].iters must be >= 1".into()));
        }
        Ok((r.alpha, r.iters))
    }

    pub fn seed(&self, override_seed: Option<u64>) -> u64 {
        override_seed.or(self.run.seed).unwrap_or(0)
    }
}

fn parse_box_rows(rows: &[Vec<f64>], n: usize) -> Result<Vec<BoxRegion>, CliError> {
    rows.iter()
        .enumerate()
        .map(|(i, row)| {
            if row.len() != 2 * n {
                return Err(CliError::Config(format!(
                    "[observation].boxes[{i}] expects {} bounds",
                    2 * n
                )));
            }
            let min: Vec<f64> = (0..n).map(|a| row[2 * a]).collect();
            let max: Vec<f64> = (0..n).map(|a| row[2 * a + 1]).collect();
            BoxRegion::new(min, max)
                .map_err(|e| CliError::Config(format!("[observation].boxes[{i}]: {e}")))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_a_minimal_config() {
        let text = r#"
[grid]
dimension = 1
half_width = 8.0
points_per_axis = 64

[drift]
rows = [[0.0]]

[time]
theta = 0.5
samples = 4

[initial]
kind = "gaussian"
center = [0.0]
sigma = 1.0
"#;
        let cfg: ExperimentConfig = toml::from_str(text).unwrap();
        let spec = cfg.grid_spec().unwrap();
        assert_eq!(spec.points_per_axis(), 64);
        let b = cfg.drift_matrix().unwrap();
        assert!(b.is_zero());
        assert_eq!(cfg.time().unwrap(), (0.5, 4));
        assert!(cfg
            .initial_state(&spec, Path::new("."))
            .unwrap()
            .l2_norm()
            > 0.0);
    }

    #[test]
    fn unknown_keys_are_rejected_with_location() {
        let text = "[grid]\ndimension = 1\nhalf_width = 8.0\npoints_per_axis = 64\nbogus = 1\n";
        let err = toml::from_str::<ExperimentConfig>(text).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("bogus"), "message should name the key: {msg}");
    }

    #[test]
    fn semantic_errors_name_the_field() {
        let text = r#"
[grid]
dimension = 1
half_width = 8.0
points_per_axis = 63

[drift]
rows = [[0.0]]
"#;
        let cfg: ExperimentConfig = toml::from_str(text).unwrap();
        let err = cfg.grid_spec().unwrap_err();
        assert!(format!("{err}").contains("[grid]"));
    }

    #[test]
    fn observation_kinds_parse() {
        let text = r#"
[observation]
kind = "periodic"
gamma = 0.5
cube_sides = [1.0]
periods = [1.0]
boxes = [[0.0, 0.5]]
window = [[0.0, 2.0]]
resolution = 64
"#;
        let cfg: ExperimentConfig = toml::from_str(text).unwrap();
        let set = cfg.thick_set(1, Path::new(".")).unwrap();
        assert_eq!(set.gamma(), 0.5);
        let w = cfg.observation_window(1).unwrap();
        assert_eq!(w.min[0], 0.0);
    }
}
