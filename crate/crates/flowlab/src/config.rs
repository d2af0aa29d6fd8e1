//! Experiment configuration: TOML with dotted keys, e.g.
//!
//! ```toml
//! seed = 7
//! drift.kind = "counterexample"
//! drift.alpha = 0.5
//! blowup.deltas = [0.04, 0.02, 0.01]
//! ```
//!
//! Every field has a default, so an empty file is a valid config.

use std::path::Path;

use flowlab_core::estimators::{build_counterexample_datum, default_support_radius};
use flowlab_core::regime::{counterexample_drift, counterexample_h_drift, DriftField};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{HarnessError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    Classify,
    SimulateFlow,
    Resolvent,
    RegularitySweep,
    BlowupDemo,
    MomentStudy,
    OracleCheck,
}

impl ExperimentKind {
    pub fn name(self) -> &'static str {
        match self {
            Self::Classify => "classify",
            Self::SimulateFlow => "simulate-flow",
            Self::Resolvent => "resolvent",
            Self::RegularitySweep => "regularity-sweep",
            Self::BlowupDemo => "blowup-demo",
            Self::MomentStudy => "moment-study",
            Self::OracleCheck => "oracle-check",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DriftChoice {
    Zero,
    Constant,
    Linear,
    #[serde(alias = "smooth_bump")]
    Bump,
    #[serde(alias = "counterexample_f")]
    Counterexample,
    #[serde(alias = "counterexample_h")]
    CounterexampleH,
}

impl std::str::FromStr for DriftChoice {
    type Err = HarnessError;
    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "zero" => Self::Zero,
            "constant" => Self::Constant,
            "linear" => Self::Linear,
            "bump" | "smooth_bump" => Self::Bump,
            "counterexample" | "counterexample_f" => Self::Counterexample,
            "counterexample-h" | "counterexample_h" => Self::CounterexampleH,
            _ => return Err(HarnessError::config("drift.kind", format!("unknown drift `{s}`"))),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DriftConfig {
    /// Unset: the experiment's own default drift.
    pub kind: Option<DriftChoice>,
    pub dim: usize,
    pub alpha: f64,
    pub eps: f64,
    /// Singular time `t1` of the counterexample, or the horizon for the
    /// `h` profile and smooth drifts.
    pub t1: f64,
    /// Constant vector or row-major linear matrix.
    pub values: Vec<f64>,
    pub amplitude: Vec<f64>,
    pub center: Vec<f64>,
    pub width: f64,
}

impl Default for DriftConfig {
    fn default() -> Self {
        Self {
            kind: None,
            dim: 2,
            alpha: 0.5,
            eps: 0.05,
            t1: 1.0,
            values: Vec::new(),
            amplitude: vec![0.5, -0.3],
            center: vec![0.2, -0.1],
            width: 0.7,
        }
    }
}

impl DriftConfig {
    pub fn build(&self, fallback: DriftChoice) -> Result<DriftField> {
        let kind = self.kind.unwrap_or(fallback);
        let core = |e| crate::error::from_core("drift", e);
        if !(self.t1 > 0.0) {
            return Err(HarnessError::config("drift.t1", "must be positive"));
        }
        Ok(match kind {
            DriftChoice::Zero => DriftField::zero(self.dim).with_horizon(self.t1),
            DriftChoice::Constant => {
                let v = if self.values.is_empty() { vec![0.0; self.dim] } else { self.values.clone() };
                if v.len() != self.dim {
                    return Err(HarnessError::config("drift.values", "constant drift needs `dim` values"));
                }
                DriftField::constant(v).with_horizon(self.t1)
            }
            DriftChoice::Linear => DriftField::linear(self.dim, self.values.clone()).map_err(core)?.with_horizon(self.t1),
            DriftChoice::Bump => {
                if self.amplitude.len() != self.dim || self.center.len() != self.dim {
                    return Err(HarnessError::config("drift.amplitude", "bump needs `dim` amplitudes and centre coordinates"));
                }
                DriftField::smooth_bump(self.amplitude.clone(), self.center.clone(), self.width, self.alpha.min(0.999))
                    .map_err(core)?
                    .with_horizon(self.t1)
            }
            DriftChoice::Counterexample => counterexample_drift(self.alpha, self.eps, self.t1).map_err(core)?,
            DriftChoice::CounterexampleH => counterexample_h_drift(self.alpha, self.eps, self.t1).map_err(core)?,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridConfig {
    pub n_steps: usize,
    /// Grading exponent toward the drift's singular time (1 = uniform).
    pub grading: f64,
    /// Alternative spelling of the top-level `seed`; wins when both are set.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self { n_steps: 1024, grading: 2.0, seed: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FlowConfig {
    pub x0: Vec<f64>,
    /// End time; unset means the drift horizon.
    pub t: Option<f64>,
}

impl Default for FlowConfig {
    fn default() -> Self {
        Self { x0: vec![0.3, 0.0], t: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClassifyConfig {
    pub q_min: f64,
    pub q_max: f64,
    pub alpha_min: f64,
    pub alpha_max: f64,
    pub resolution: usize,
    pub dim: usize,
}

impl Default for ClassifyConfig {
    fn default() -> Self {
        Self { q_min: 1.0, q_max: f64::INFINITY, alpha_min: 0.05, alpha_max: 0.95, resolution: 41, dim: 2 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SourceProfile {
    Constant,
    Sine,
    HolderBump,
}

impl std::str::FromStr for SourceProfile {
    type Err = HarnessError;
    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "constant" => Self::Constant,
            "sine" => Self::Sine,
            "holder-bump" => Self::HolderBump,
            _ => return Err(HarnessError::config("resolvent.f_profile", format!("unknown profile `{s}`"))),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ResolventConfig {
    pub lambda: f64,
    pub grid_h: f64,
    /// Mesh half-width: the cube `[-box, box]^dim`.
    #[serde(rename = "box")]
    pub box_half: f64,
    pub dim: usize,
    pub horizon: f64,
    /// Time-slice spacing; unset means `grid_h`.
    pub dt: Option<f64>,
    pub f_profile: SourceProfile,
    pub wavenumber: f64,
    /// Spatial Hölder exponent of the bump profile.
    pub alpha: f64,
    /// The bump profile's time factor is `t^{-time_exponent}`.
    pub time_exponent: f64,
}

impl Default for ResolventConfig {
    fn default() -> Self {
        Self {
            lambda: 2.0,
            grid_h: 0.01,
            box_half: 1.0,
            dim: 1,
            horizon: 1.0,
            dt: None,
            f_profile: SourceProfile::Constant,
            wavenumber: 1.0,
            alpha: 0.9,
            time_exponent: 0.25,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub alphas: Vec<f64>,
    pub eps: f64,
    /// Probe exponents are `q_critical · (1 ∓ margin)`.  Above critical the
    /// refinement growth is about `16^margin`, so margins under 0.15 are not
    /// flagged as divergent.
    pub margin: f64,
    pub n_t: usize,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self { alphas: vec![0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8], eps: 0.05, margin: 0.25, n_t: 64 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BlowupConfig {
    pub p: f64,
    pub deltas: Vec<f64>,
    /// Datum support radius `R`; unset means twice the box-inclusion bound.
    pub support_radius: Option<f64>,
    /// Integration box half-width; unset means `R`.
    pub box_half: Option<f64>,
    pub n_paths: usize,
    pub n_steps: usize,
    pub grading: f64,
    pub points: usize,
    pub cells_per_unit: usize,
    /// Lower-bound check: `xs` log-spaced in `[x_min, x_max]`.
    pub x_min: f64,
    pub x_max: f64,
    pub n_x: usize,
    pub lower_bound_radius: f64,
}

impl Default for BlowupConfig {
    fn default() -> Self {
        Self {
            p: 2.0,
            deltas: vec![0.04, 0.02, 0.01],
            support_radius: None,
            box_half: None,
            n_paths: 200,
            n_steps: 512,
            grading: 2.0,
            points: 8,
            cells_per_unit: 4,
            x_min: 1e-3,
            x_max: 1e-1,
            n_x: 7,
            lower_bound_radius: 10.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MomentConfig {
    pub r: f64,
    pub radius: f64,
    /// Base lattice and time sampling; level `L` uses `(m-1)·2^L + 1`
    /// points per axis, `e·2^L` evaluation times and `L` bridge refinements.
    pub points_per_axis: usize,
    pub eval_times: usize,
    pub base_steps: usize,
    pub levels: Vec<usize>,
    pub n_paths: usize,
}

impl Default for MomentConfig {
    fn default() -> Self {
        Self { r: 2.0, radius: 2.0, points_per_axis: 5, eval_times: 4, base_steps: 64, levels: vec![0, 1, 2], n_paths: 200 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OracleConfig {
    /// `[x, s, t1, R, alpha]` tuples.
    pub tuples: Vec<[f64; 5]>,
    pub n: usize,
}

impl Default for OracleConfig {
    fn default() -> Self {
        Self {
            tuples: vec![
                [0.3, 0.5, 1.0, 10.0, 0.5],
                [0.1, 0.2, 1.0, 10.0, 0.5],
                [0.5, 0.9, 1.0, 10.0, 0.7],
                [-0.2, 0.5, 1.0, 3.0, 0.6],
                [0.05, 0.7, 2.0, 10.0, 0.9],
            ],
            n: 1_000_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: Option<ExperimentKind>,
    pub seed: u64,
    pub out_dir: String,
    /// Worker threads; 0 means one per core.  Never affects results.
    pub workers: usize,
    pub drift: DriftConfig,
    #[serde(rename = "paths")]
    pub grid: GridConfig,
    pub flow: FlowConfig,
    pub classify: ClassifyConfig,
    pub resolvent: ResolventConfig,
    pub sweep: SweepConfig,
    pub blowup: BlowupConfig,
    pub moment: MomentConfig,
    pub oracle: OracleConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            experiment: None,
            seed: 0,
            out_dir: "flowlab-out".into(),
            workers: 0,
            drift: DriftConfig::default(),
            grid: GridConfig::default(),
            flow: FlowConfig::default(),
            classify: ClassifyConfig::default(),
            resolvent: ResolventConfig::default(),
            sweep: SweepConfig::default(),
            blowup: BlowupConfig::default(),
            moment: MomentConfig::default(),
            oracle: OracleConfig::default(),
        }
    }
}

fn positive(field: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(HarnessError::config(field, "must be a positive finite number"))
    }
}

fn at_least(field: &str, v: usize, min: usize) -> Result<()> {
    if v >= min {
        Ok(())
    } else {
        Err(HarnessError::config(field, format!("must be at least {min}")))
    }
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut c: Self = toml::from_str(text).map_err(|e| HarnessError::config(e.span().map_or("config".into(), |s| format!("config[{}..{}]", s.start, s.end)), e.message().to_string()))?;
        if let Some(seed) = c.grid.seed.take() {
            c.seed = seed;
        }
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| HarnessError::config("--config", format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// SHA-256 of the serialized config without `seed`, `out_dir` and
    /// `workers`, none of which change what is computed for a given seed.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.seed = 0;
        c.out_dir = String::new();
        c.workers = 0;
        let digest = Sha256::digest(c.to_toml().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn kind(&self) -> Result<ExperimentKind> {
        self.experiment.ok_or_else(|| HarnessError::config("experiment", "no experiment selected"))
    }

    /// Default drift of each experiment when `drift.kind` is unset.
    pub fn default_drift(kind: ExperimentKind) -> DriftChoice {
        match kind {
            ExperimentKind::MomentStudy => DriftChoice::Bump,
            _ => DriftChoice::Counterexample,
        }
    }

    /// Checks the parameters the selected experiment reads.
    pub fn validate(&self) -> Result<()> {
        let kind = self.kind()?;
        match kind {
            ExperimentKind::Classify => {
                let c = &self.classify;
                if !(c.q_min >= 1.0) || !(c.q_max >= c.q_min) {
                    return Err(HarnessError::config("classify.q_min", "need 1 ≤ q_min ≤ q_max"));
                }
                if !(c.alpha_min > 0.0 && c.alpha_max < 1.0 && c.alpha_min <= c.alpha_max) {
                    return Err(HarnessError::config("classify.alpha_min", "need 0 < alpha_min ≤ alpha_max < 1"));
                }
                at_least("classify.resolution", c.resolution, 2)?;
                at_least("classify.dim", c.dim, 1)?;
            }
            ExperimentKind::SimulateFlow => {
                let d = self.drift.build(Self::default_drift(kind))?;
                if self.flow.x0.len() != d.dim() {
                    return Err(HarnessError::config("flow.x0", format!("needs {} coordinates", d.dim())));
                }
                if let Some(t) = self.flow.t {
                    positive("flow.t", t)?;
                }
                at_least("paths.n_steps", self.grid.n_steps, 1)?;
                positive("paths.grading", self.grid.grading)?;
            }
            ExperimentKind::Resolvent => {
                let r = &self.resolvent;
                positive("resolvent.lambda", r.lambda)?;
                positive("resolvent.grid_h", r.grid_h)?;
                positive("resolvent.box", r.box_half)?;
                positive("resolvent.horizon", r.horizon)?;
                if let Some(dt) = r.dt {
                    positive("resolvent.dt", dt)?;
                }
                if !(1..=3).contains(&r.dim) {
                    return Err(HarnessError::config("resolvent.dim", "must be 1, 2 or 3"));
                }
                if r.box_half / r.grid_h < 2.0 {
                    return Err(HarnessError::config("resolvent.grid_h", "mesh needs at least 5 nodes per axis"));
                }
                if !(r.alpha > 0.0 && r.alpha < 1.0) {
                    return Err(HarnessError::config("resolvent.alpha", "must lie in (0, 1)"));
                }
                if !(r.time_exponent >= 0.0 && r.time_exponent < 1.0) {
                    return Err(HarnessError::config("resolvent.time_exponent", "must lie in [0, 1)"));
                }
            }
            ExperimentKind::RegularitySweep => {
                let s = &self.sweep;
                if s.alphas.is_empty() || s.alphas.iter().any(|a| !(*a > 0.0 && *a < 1.0)) {
                    return Err(HarnessError::config("sweep.alphas", "need values in (0, 1)"));
                }
                if s.alphas.iter().any(|a| !(s.eps > 0.0 && s.eps < 0.5 * (1.0 - a))) {
                    return Err(HarnessError::config("sweep.eps", "need 0 < eps < (1 - alpha)/2 for every alpha"));
                }
                if !(s.margin > 0.0 && s.margin < 0.5) {
                    return Err(HarnessError::config("sweep.margin", "must lie in (0, 0.5)"));
                }
                at_least("sweep.n_t", s.n_t, 4)?;
            }
            ExperimentKind::BlowupDemo => {
                let b = &self.blowup;
                let drift = self.drift.build(Self::default_drift(kind))?;
                if drift.profile().is_none() {
                    return Err(HarnessError::config("drift.kind", "blowup-demo needs the counterexample drift"));
                }
                let r = self.support_radius()?;
                build_counterexample_datum(b.p, self.drift.eps, r).map_err(|e| crate::error::from_core("blowup", e))?;
                if b.deltas.is_empty() || b.deltas.iter().any(|d| !(*d > 0.0 && *d < r / 8.0)) {
                    return Err(HarnessError::config("blowup.deltas", "each cutoff must lie in (0, R/8)"));
                }
                if let Some(h) = b.box_half {
                    positive("blowup.box_half", h)?;
                }
                at_least("blowup.n_paths", b.n_paths, 2)?;
                at_least("blowup.n_steps", b.n_steps, 2)?;
                at_least("blowup.points", b.points, 1)?;
                at_least("blowup.cells_per_unit", b.cells_per_unit, 1)?;
                at_least("blowup.n_x", b.n_x, 1)?;
                positive("blowup.grading", b.grading)?;
                positive("blowup.lower_bound_radius", b.lower_bound_radius)?;
                if !(b.x_min > 0.0 && b.x_min <= b.x_max && b.x_max < b.lower_bound_radius / 8.0) {
                    return Err(HarnessError::config("blowup.x_min", "need 0 < x_min ≤ x_max < lower_bound_radius/8"));
                }
            }
            ExperimentKind::MomentStudy => {
                let m = &self.moment;
                self.drift.build(Self::default_drift(kind))?;
                if !(m.r >= 1.0) {
                    return Err(HarnessError::config("moment.r", "must be at least 1"));
                }
                positive("moment.radius", m.radius)?;
                at_least("moment.points_per_axis", m.points_per_axis, 2)?;
                at_least("moment.eval_times", m.eval_times, 1)?;
                at_least("moment.base_steps", m.base_steps, 1)?;
                at_least("moment.n_paths", m.n_paths, 2)?;
                if m.levels.is_empty() || m.levels.iter().any(|l| *l > 8) {
                    return Err(HarnessError::config("moment.levels", "need 1+ levels, each at most 8"));
                }
            }
            ExperimentKind::OracleCheck => {
                let o = &self.oracle;
                at_least("oracle.n", o.n, 2)?;
                if o.tuples.is_empty() {
                    return Err(HarnessError::config("oracle.tuples", "need at least one tuple"));
                }
                for t in &o.tuples {
                    let [_, s, t1, r, a] = *t;
                    if !(s > 0.0 && s < t1) || !(r > 0.0) || !(a > 0.0 && a < 1.0) {
                        return Err(HarnessError::config("oracle.tuples", "each tuple needs 0 < s < t1, R > 0, 0 < alpha < 1"));
                    }
                }
            }
        }
        Ok(())
    }

    pub fn support_radius(&self) -> Result<f64> {
        match self.blowup.support_radius {
            Some(r) => Ok(r),
            None => default_support_radius(self.drift.alpha, self.drift.eps, self.drift.t1)
                .map_err(|e| crate::error::from_core("drift", e)),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_is_default() {
        assert_eq!(ExperimentConfig::parse("").unwrap(), ExperimentConfig::default());
    }

    #[test]
    fn dotted_keys_and_round_trip() {
        let c = ExperimentConfig::parse(
            "experiment = \"blowup-demo\"\nseed = 9\ndrift.kind = \"counterexample\"\ndrift.alpha = 0.4\nblowup.deltas = [0.08, 0.04]\nresolvent.box = 2.5\n",
        )
        .unwrap();
        assert_eq!(c.seed, 9);
        assert_eq!(c.drift.alpha, 0.4);
        assert_eq!(c.blowup.deltas, vec![0.08, 0.04]);
        assert_eq!(c.resolvent.box_half, 2.5);
        let p = ExperimentConfig::parse("seed = 1\npaths.seed = 4\npaths.n_steps = 64\n").unwrap();
        assert_eq!((p.seed, p.grid.n_steps), (4, 64));
        for (name, kind) in [("smooth_bump", DriftChoice::Bump), ("counterexample_f", DriftChoice::Counterexample), ("counterexample_h", DriftChoice::CounterexampleH)] {
            let a = ExperimentConfig::parse(&format!("drift.kind = \"{name}\"\n")).unwrap();
            assert_eq!(a.drift.kind, Some(kind));
            assert_eq!(name.parse::<DriftChoice>().unwrap(), kind);
        }
        let back = ExperimentConfig::parse(&c.to_toml()).unwrap();
        assert_eq!(back, c);
        let d = ExperimentConfig::default();
        assert_eq!(ExperimentConfig::parse(&d.to_toml()).unwrap(), d);
    }

    #[test]
    fn unknown_keys_rejected() {
        let e = ExperimentConfig::parse("drift.alpah = 0.3").unwrap_err();
        assert_eq!(e.exit_code(), 2);
    }

    #[test]
    fn validation_names_the_field() {
        let mut c = ExperimentConfig { experiment: Some(ExperimentKind::BlowupDemo), ..Default::default() };
        c.blowup.deltas = vec![10.0];
        match c.validate().unwrap_err() {
            HarnessError::Config { field, .. } => assert_eq!(field, "blowup.deltas"),
            e => panic!("{e}"),
        }
        c.blowup.deltas = vec![0.01];
        c.validate().unwrap();
        c.drift.eps = 0.5;
        assert_eq!(c.validate().unwrap_err().exit_code(), 2);
    }

    #[test]
    fn hash_ignores_seed_and_paths() {
        let a = ExperimentConfig::default();
        let mut b = a.clone();
        b.seed = 5;
        b.out_dir = "elsewhere".into();
        b.workers = 3;
        assert_eq!(a.hash(), b.hash());
        b.drift.alpha = 0.3;
        assert_ne!(a.hash(), b.hash());
        assert_eq!(a.hash().len(), 64);
    }
}
