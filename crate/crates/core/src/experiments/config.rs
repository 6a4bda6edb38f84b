//! Experiment configuration: a TOML document describing one scenario run, optionally
//! swept along one key.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::elliptic::SolverSettings;
use crate::error::{Error, Result};
use crate::grid::{lp_norm, Field, Grid};
use crate::nonlinearities::{
    smooth_bump, validate_regime, BetaSpec, FluxSpec, PiecewiseLinear, Regime, SourceProfile, SourceSpec,
};
use crate::operators::ModelParams;
use crate::time_stepper::{evolution_exponent, SchemeConfig, TruncationRadius};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scenario {
    Evolve,
    Extinction,
    Blowup,
    Stabilization,
    Contraction,
    Comparison,
    Convergence,
    Accretivity,
}

impl Scenario {
    pub const ALL: [Scenario; 8] = [
        Scenario::Evolve,
        Scenario::Extinction,
        Scenario::Blowup,
        Scenario::Stabilization,
        Scenario::Contraction,
        Scenario::Comparison,
        Scenario::Convergence,
        Scenario::Accretivity,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Scenario::Evolve => "evolve",
            Scenario::Extinction => "extinction",
            Scenario::Blowup => "blowup",
            Scenario::Stabilization => "stabilization",
            Scenario::Contraction => "contraction",
            Scenario::Comparison => "comparison",
            Scenario::Convergence => "convergence",
            Scenario::Accretivity => "accretivity",
        }
    }

    pub fn from_name(name: &str) -> Option<Scenario> {
        Scenario::ALL.into_iter().find(|s| s.name() == name)
    }

    fn regime(self) -> Option<Regime> {
        match self {
            Scenario::Extinction => Some(Regime::Extinction),
            Scenario::Blowup => Some(Regime::BlowUp),
            Scenario::Stabilization => Some(Regime::Stabilization),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DomainConfig {
    pub a: f64,
    pub b: f64,
    /// Interior nodes.
    pub n: usize,
}

impl Default for DomainConfig {
    fn default() -> Self {
        DomainConfig { a: 0.0, b: 1.0, n: 64 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub p: f64,
    pub q: f64,
    pub s: f64,
    pub mu: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            p: 3.0,
            q: 2.0,
            s: 0.5,
            mu: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum BetaConfig {
    Power { m: f64 },
    Table { t: Vec<f64>, v: Vec<f64> },
}

impl Default for BetaConfig {
    fn default() -> Self {
        BetaConfig::Power { m: 1.0 }
    }
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum FluxConfig {
    #[default]
    Zero,
    Linear {
        coefficient: f64,
    },
    /// `coefficient |u|^(gamma + 1)`.
    Power {
        gamma: f64,
        #[serde(default = "one")]
        coefficient: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        truncate: Option<f64>,
    },
    Table {
        x: Vec<f64>,
        y: Vec<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        truncate: Option<f64>,
    },
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SourceConfig {
    #[default]
    Zero,
    /// `|u|^(r-1) u`.
    Power {
        r: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        truncate: Option<f64>,
    },
    Constant {
        value: f64,
    },
    Bump {
        amplitude: f64,
        center: f64,
        width: f64,
    },
    Nodes {
        values: Vec<f64>,
    },
    TimeLinear {
        offset: f64,
        slope: f64,
    },
    /// Lipschitz `g(u)` through the points `(x, y)`.
    Table {
        x: Vec<f64>,
        y: Vec<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        truncate: Option<f64>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitialData {
    /// Smooth bump; with `norm` set it is rescaled so that `||u0||_{1+1/m} = norm`.
    Bump {
        amplitude: f64,
        center: f64,
        width: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        norm: Option<f64>,
    },
    Constant {
        value: f64,
    },
    /// One value per interior node.
    Nodes {
        values: Vec<f64>,
    },
}

impl Default for InitialData {
    fn default() -> Self {
        InitialData::Bump {
            amplitude: 1.0,
            center: 0.5,
            width: 0.3,
            norm: None,
        }
    }
}

/// `radius = "auto" | "none" | <number>`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum RadiusConfig {
    Named(RadiusName),
    Fixed(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RadiusName {
    Auto,
    None,
}

impl Default for RadiusConfig {
    fn default() -> Self {
        RadiusConfig::Named(RadiusName::Auto)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SchemeSection {
    pub horizon: f64,
    pub steps: usize,
    pub radius: RadiusConfig,
    pub quad_points: usize,
    pub adaptive: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub blowup_threshold: Option<f64>,
    pub extinction_threshold: f64,
    pub stop_at_extinction: bool,
    pub growth_factor: f64,
    pub max_halvings: usize,
    pub implicit_source: bool,
    /// Every `save_stride`-th level goes to `trajectory.csv` (the last one always does).
    pub save_stride: usize,
}

impl Default for SchemeSection {
    fn default() -> Self {
        let base = SchemeConfig::new(1.0, 1000);
        SchemeSection {
            horizon: base.horizon,
            steps: base.steps,
            radius: RadiusConfig::default(),
            quad_points: base.quad_points,
            adaptive: base.adaptive,
            blowup_threshold: base.blowup_threshold,
            extinction_threshold: base.extinction_threshold,
            stop_at_extinction: base.stop_at_extinction,
            growth_factor: base.growth_factor,
            max_halvings: base.max_halvings,
            implicit_source: base.implicit_source,
            save_stride: 1,
        }
    }
}

/// Scenario-specific knobs of the declared checks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChecksConfig {
    /// Additive tolerance of the exact discrete inequalities.
    pub tolerance: f64,
    /// Bound on the step residual of the evolve scenario.
    pub residual_tolerance: f64,
    /// Exponent `k` of the extinction functional.
    pub k: f64,
    /// Random data pairs for contraction and comparison.
    pub pairs: usize,
    /// Amplitude of the random data.
    pub data_amplitude: f64,
    /// Convection defects are accepted up to `c_h h`.
    pub c_h: f64,
    /// Step counts of the convergence study.
    pub refinements: Vec<usize>,
    /// Largest accepted ratio of consecutive Cauchy differences.
    pub ratio_limit: f64,
    /// Random pairs of the accretivity sampler.
    pub trials: usize,
    /// Multiples of the initial amplitude whose blow-up times are compared.
    pub amplitudes: Vec<f64>,
    /// Double the blow-up data until `E(u0) < 0`.
    pub scale_to_negative_energy: bool,
    /// Largest accepted ratio of the trajectory's stationary residual to the solver's.
    pub residual_ratio: f64,
    /// Largest accepted L1 distance to the stationary solution.
    pub stationary_distance: f64,
}

impl Default for ChecksConfig {
    fn default() -> Self {
        ChecksConfig {
            tolerance: 1e-8,
            residual_tolerance: 1e-6,
            k: 1.0,
            pairs: 10,
            data_amplitude: 1.0,
            c_h: 1.0,
            refinements: vec![250, 500, 1000, 2000],
            ratio_limit: 0.8,
            trials: 1000,
            amplitudes: vec![1.0, 2.0, 4.0],
            scale_to_negative_energy: true,
            residual_ratio: 10.0,
            stationary_distance: 1e-3,
        }
    }
}

/// One swept key, e.g. `key = "beta.m"`, `values = [1.25, 1.5, 2.0]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepAxis {
    pub key: String,
    pub values: Vec<toml::Value>,
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub scenario: Scenario,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub domain: DomainConfig,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub beta: BetaConfig,
    #[serde(default)]
    pub flux: FluxConfig,
    #[serde(default)]
    pub source: SourceConfig,
    #[serde(default)]
    pub scheme: SchemeSection,
    #[serde(default)]
    pub solver: SolverSettings,
    #[serde(default)]
    pub initial: InitialData,
    #[serde(default)]
    pub checks: ChecksConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepAxis>,
}

/// Parses and validates a config document. Syntax errors carry the line and column
/// reported by the TOML reader; validation errors carry the line of the offending key.
pub fn parse_config(text: &str) -> Result<ExperimentConfig> {
    let config: ExperimentConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
    let issues = config.issues();
    if issues.is_empty() {
        Ok(config)
    } else {
        Err(Error::InvalidConfig(
            issues
                .into_iter()
                .map(|(key, msg)| match locate(text, &key) {
                    Some(line) => format!("line {line}: {key}: {msg}"),
                    None => format!("{key}: {msg}"),
                })
                .collect(),
        ))
    }
}

pub fn read_config(path: &std::path::Path) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_config(&text)
}

/// 1-based line of `section.key = ...` (or of `[section]` when `key` is a bare section).
fn locate(text: &str, dotted: &str) -> Option<usize> {
    let (section, key) = match dotted.rsplit_once('.') {
        Some((s, k)) => (s, k),
        None => ("", dotted),
    };
    let mut current = String::new();
    let mut header_line = None;
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
            current = name.trim().to_string();
            if current == dotted {
                header_line = Some(i + 1);
            }
            continue;
        }
        if current == section {
            if let Some((lhs, _)) = line.split_once('=') {
                if lhs.trim() == key {
                    return Some(i + 1);
                }
            }
        }
    }
    header_line
}

fn source_spec(cfg: &SourceConfig, grid: &Grid) -> Result<SourceSpec> {
    let truncated = |spec: SourceSpec, radius: Option<f64>| match radius {
        Some(r) => spec.truncate(r),
        None => Ok(spec),
    };
    match cfg {
        SourceConfig::Zero => Ok(SourceSpec::Zero),
        SourceConfig::Power { r, truncate } => truncated(SourceSpec::power(*r)?, *truncate),
        SourceConfig::Constant { value } => Ok(SourceSpec::ConstantInU(SourceProfile::Uniform(*value))),
        SourceConfig::Bump {
            amplitude,
            center,
            width,
        } => Ok(SourceSpec::ConstantInU(SourceProfile::Bump {
            amplitude: *amplitude,
            center: *center,
            width: *width,
        })),
        SourceConfig::Nodes { values } => {
            if values.len() != grid.len() {
                return Err(Error::InvalidParameter(format!(
                    "{} nodal values for {} nodes",
                    values.len(),
                    grid.len()
                )));
            }
            Ok(SourceSpec::ConstantInU(SourceProfile::Nodal {
                a: grid.a(),
                b: grid.b(),
                values: values.clone(),
            }))
        }
        SourceConfig::TimeLinear { offset, slope } => Ok(SourceSpec::TimeLinear {
            offset: *offset,
            slope: *slope,
        }),
        SourceConfig::Table { x, y, truncate } => truncated(
            SourceSpec::LipschitzTable(PiecewiseLinear::new(x.clone(), y.clone())?),
            *truncate,
        ),
    }
}

fn flux_spec(cfg: &FluxConfig) -> Result<FluxSpec> {
    let truncated = |spec: FluxSpec, radius: Option<f64>| match radius {
        Some(r) => spec.truncate(r),
        None => Ok(spec),
    };
    match cfg {
        FluxConfig::Zero => Ok(FluxSpec::Zero),
        FluxConfig::Linear { coefficient } => {
            if !coefficient.is_finite() {
                return Err(Error::InvalidParameter("flux coefficient must be finite".into()));
            }
            Ok(FluxSpec::Linear {
                coefficient: *coefficient,
            })
        }
        FluxConfig::Power {
            gamma,
            coefficient,
            truncate,
        } => truncated(FluxSpec::power(*gamma, *coefficient)?, *truncate),
        FluxConfig::Table { x, y, truncate } => truncated(FluxSpec::table(x.clone(), y.clone())?, *truncate),
    }
}

impl ExperimentConfig {
    pub fn grid(&self) -> Result<Grid> {
        Grid::new(self.domain.a, self.domain.b, self.domain.n)
    }

    pub fn model_params(&self) -> Result<ModelParams> {
        let grid = self.grid()?;
        let beta = match &self.beta {
            BetaConfig::Power { m } => BetaSpec::power(*m)?,
            BetaConfig::Table { t, v } => BetaSpec::table(t.clone(), v.clone())?,
        };
        ModelParams::new(
            self.model.p,
            self.model.q,
            self.model.s,
            self.model.mu,
            beta,
            flux_spec(&self.flux)?,
            source_spec(&self.source, &grid)?,
            grid,
        )
    }

    pub fn scheme_config(&self) -> SchemeConfig {
        let s = &self.scheme;
        let mut scheme = SchemeConfig::new(s.horizon, s.steps);
        scheme.radius = match s.radius {
            RadiusConfig::Named(RadiusName::Auto) => TruncationRadius::Auto,
            RadiusConfig::Named(RadiusName::None) => TruncationRadius::None,
            RadiusConfig::Fixed(r) => TruncationRadius::Fixed(r),
        };
        scheme.quad_points = s.quad_points;
        scheme.adaptive = s.adaptive || self.scenario == Scenario::Blowup;
        scheme.blowup_threshold = s.blowup_threshold;
        scheme.extinction_threshold = s.extinction_threshold;
        scheme.stop_at_extinction = s.stop_at_extinction;
        scheme.growth_factor = s.growth_factor;
        scheme.max_halvings = s.max_halvings;
        scheme.implicit_source = s.implicit_source;
        scheme.solver = self.solver.clone();
        scheme
    }

    /// Initial datum on the configured grid.
    pub fn initial_field(&self, params: &ModelParams) -> Result<Field> {
        let grid = params.grid;
        match &self.initial {
            InitialData::Bump {
                amplitude,
                center,
                width,
                norm,
            } => {
                let u = Field::from_fn(grid, |x| smooth_bump(x, *amplitude, *center, *width));
                match norm {
                    None => Ok(u),
                    Some(target) => {
                        let current = lp_norm(&u, evolution_exponent(&params.beta))?;
                        if !(current > 0.0) {
                            return Err(Error::InvalidParameter("cannot normalize a zero bump".into()));
                        }
                        Ok(u.scale(target / current))
                    }
                }
            }
            InitialData::Constant { value } => Ok(Field::from_fn(grid, |_| *value)),
            InitialData::Nodes { values } => Field::new(grid, values.clone()),
        }
    }

    /// Hypotheses of the scenario's regime that the parameters violate. These are
    /// reported but do not reject the config.
    pub fn regime_warnings(&self) -> Vec<String> {
        match (self.scenario.regime(), self.model_params()) {
            (Some(regime), Ok(params)) => validate_regime(&params, regime),
            _ => Vec::new(),
        }
    }

    /// Every rule the config breaks, as `(dotted key, message)`.
    fn issues(&self) -> Vec<(String, String)> {
        let mut out: Vec<(String, String)> = Vec::new();
        let mut push = |key: &str, msg: String| out.push((key.to_string(), msg));
        match self.model_params() {
            Ok(params) => {
                if let Err(e) = self.initial_field(&params) {
                    push("initial", e.to_string());
                }
            }
            Err(e) => push("model", e.to_string()),
        }
        if let Err(e) = self.scheme_config().validate() {
            push("scheme", e.to_string());
        }
        if self.scheme.save_stride == 0 {
            push("scheme.save_stride", "must be positive".into());
        }
        let power_source = matches!(self.source, SourceConfig::Power { .. });
        match self.scenario {
            Scenario::Blowup | Scenario::Extinction if !power_source => push(
                "source.kind",
                format!("scenario {} requires source.kind = \"power\"", self.scenario.name()),
            ),
            Scenario::Blowup | Scenario::Extinction if !matches!(self.beta, BetaConfig::Power { .. }) => push(
                "beta.kind",
                format!("scenario {} requires beta.kind = \"power\"", self.scenario.name()),
            ),
            Scenario::Stabilization
                if matches!(
                    self.source,
                    SourceConfig::Power { .. } | SourceConfig::Table { .. } | SourceConfig::TimeLinear { .. }
                ) =>
            {
                push(
                    "source.kind",
                    "scenario stabilization requires a source independent of u and t".into(),
                )
            }
            _ => {}
        }
        let c = &self.checks;
        if !(c.tolerance >= 0.0) || !(c.residual_tolerance > 0.0) {
            push("checks.tolerance", "tolerances must be nonnegative".into());
        }
        match self.scenario {
            Scenario::Contraction | Scenario::Comparison if c.pairs == 0 => {
                push("checks.pairs", "must be positive".into())
            }
            Scenario::Convergence => {
                let r = &c.refinements;
                if r.len() < 3 || r.windows(2).any(|w| w[1] <= w[0]) || r[0] == 0 {
                    push(
                        "checks.refinements",
                        "needs at least three increasing positive step counts".into(),
                    );
                }
            }
            Scenario::Accretivity if c.trials == 0 => push("checks.trials", "must be positive".into()),
            Scenario::Blowup if c.amplitudes.len() < 2 || c.amplitudes.iter().any(|a| !(*a > 0.0)) => push(
                "checks.amplitudes",
                "needs at least two positive multiples".into(),
            ),
            _ => {}
        }
        if let Some(sweep) = &self.sweep {
            if sweep.values.is_empty() {
                push("sweep.values", "must not be empty".into());
            }
            if sweep.key.starts_with("sweep") {
                push("sweep.key", "cannot sweep the sweep itself".into());
            }
        }
        out
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// Sets one dotted key, e.g. `beta.m = 2` or `scheme.radius = "none"`, and revalidates.
    pub fn with_override(&self, key: &str, value: toml::Value) -> Result<ExperimentConfig> {
        let mut doc = toml::Value::try_from(self).map_err(|e| Error::Config(e.to_string()))?;
        let mut node = &mut doc;
        let parts: Vec<&str> = key.split('.').collect();
        for (i, part) in parts.iter().enumerate() {
            let table = node
                .as_table_mut()
                .ok_or_else(|| Error::Config(format!("override {key}: {} is not a table", parts[..i].join("."))))?;
            if i + 1 == parts.len() {
                table.insert(part.to_string(), value.clone());
                break;
            }
            node = table
                .entry(part.to_string())
                .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        }
        let text = toml::to_string(&doc).map_err(|e| Error::Config(e.to_string()))?;
        parse_config(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("override {key}: {msg}")),
            other => other,
        })
    }

    /// Applies `key=value`; the value is read as a TOML value, or as a string if it is not one.
    pub fn with_override_str(&self, assignment: &str) -> Result<ExperimentConfig> {
        let (key, raw) = assignment
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("override {assignment:?} is not key=value")))?;
        let raw = raw.trim();
        let value = toml::from_str::<toml::Table>(&format!("v = {raw}"))
            .ok()
            .and_then(|mut t| t.remove("v"))
            .unwrap_or_else(|| toml::Value::String(raw.to_string()));
        self.with_override(key.trim(), value)
    }

    /// One config per sweep value, each writing to `output_dir/<key>=<value>`; a config
    /// without a sweep expands to itself.
    pub fn expand_sweep(&self) -> Result<Vec<ExperimentConfig>> {
        let Some(sweep) = &self.sweep else {
            return Ok(vec![self.clone()]);
        };
        let mut base = self.clone();
        base.sweep = None;
        sweep
            .values
            .iter()
            .map(|v| {
                let mut cfg = base.with_override(&sweep.key, v.clone())?;
                cfg.output_dir = self.output_dir.join(sweep_label(&sweep.key, v));
                Ok(cfg)
            })
            .collect()
    }
}

/// Directory name of one sweep point.
pub fn sweep_label(key: &str, value: &toml::Value) -> String {
    let v = match value {
        toml::Value::String(s) => s.clone(),
        other => other.to_string(),
    };
    let clean: String = v
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '.' || c == '-' { c } else { '_' })
        .collect();
    format!("{key}={clean}")
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = "scenario = \"evolve\"\n";

    #[test]
    fn minimal_config_gets_defaults() {
        let cfg = parse_config(MINIMAL).unwrap();
        assert_eq!(cfg.domain, DomainConfig::default());
        assert_eq!(cfg.beta, BetaConfig::Power { m: 1.0 });
        assert_eq!(cfg.scheme.steps, 1000);
        assert_eq!(cfg.seed, 0);
        let params = cfg.model_params().unwrap();
        assert_eq!(params.grid.len(), 64);
        assert_eq!(cfg.scheme_config(), SchemeConfig::new(1.0, 1000));
    }

    #[test]
    fn blowup_needs_power_source() {
        let text = "scenario = \"blowup\"\n\n[source]\nkind = \"zero\"\n";
        match parse_config(text) {
            Err(Error::InvalidConfig(list)) => {
                assert_eq!(list.len(), 1);
                assert!(list[0].starts_with("line 4: source.kind"), "{}", list[0]);
            }
            other => panic!("expected a validation error, got {other:?}"),
        }
    }

    #[test]
    fn unknown_keys_are_rejected_with_position() {
        let text = "scenario = \"evolve\"\n[model]\np = 3.0\nqq = 2.0\n";
        let err = parse_config(text).unwrap_err().to_string();
        assert!(err.contains("qq") && err.contains("line 4"), "{err}");
        assert!(parse_config("scenario = \"evolve\"\n[beta]\nkind = \"power\"\nm = 1\nk = 2\n").is_err());
        assert!(parse_config("scenario = \"nope\"\n").is_err());
    }

    #[test]
    fn sweep_expands_into_one_config_per_value() {
        let text = "scenario = \"evolve\"\noutput_dir = \"runs\"\n\n[beta]\nkind = \"power\"\nm = 1.0\n\n\
                    [sweep]\nkey = \"beta.m\"\nvalues = [1.25, 1.5, 2.0]\n";
        let cfg = parse_config(text).unwrap();
        let all = cfg.expand_sweep().unwrap();
        assert_eq!(all.len(), 3);
        let ms: Vec<f64> = all
            .iter()
            .map(|c| match c.beta {
                BetaConfig::Power { m } => m,
                _ => f64::NAN,
            })
            .collect();
        assert_eq!(ms, vec![1.25, 1.5, 2.0]);
        assert_eq!(all[0].output_dir, PathBuf::from("runs/beta.m=1.25"));
        assert!(all.iter().all(|c| c.sweep.is_none()));
    }

    #[test]
    fn echo_round_trips() {
        let text = "scenario = \"extinction\"\nseed = 7\n\n[model]\np = 2.5\nq = 1.5\n\n\
                    [beta]\nkind = \"power\"\nm = 1.25\n\n[source]\nkind = \"power\"\nr = 0.6\n\n\
                    [flux]\nkind = \"power\"\ngamma = 1.0\ntruncate = 5.0\n\n\
                    [scheme]\nhorizon = 5.0\nsteps = 2000\nradius = \"none\"\nblowup_threshold = 1e9\n\n\
                    [initial]\nkind = \"bump\"\namplitude = 1.0\ncenter = 0.5\nwidth = 0.3\nnorm = 0.1\n\n\
                    [sweep]\nkey = \"scheme.radius\"\nvalues = [\"auto\", 3.0]\n";
        let cfg = parse_config(text).unwrap();
        let echo = cfg.to_toml().unwrap();
        assert_eq!(parse_config(&echo).unwrap(), cfg);
        let fixed = cfg.with_override_str("scheme.radius=2.5").unwrap();
        assert_eq!(fixed.scheme.radius, RadiusConfig::Fixed(2.5));
        assert_eq!(parse_config(&fixed.to_toml().unwrap()).unwrap(), fixed);
    }

    #[test]
    fn overrides() {
        let cfg = parse_config(MINIMAL).unwrap();
        let c2 = cfg.with_override_str("domain.n = 16").unwrap();
        assert_eq!(c2.domain.n, 16);
        let c3 = c2.with_override_str("scenario=stabilization").unwrap();
        assert_eq!(c3.scenario, Scenario::Stabilization);
        assert!(cfg.with_override_str("domain.nn=3").is_err());
        assert!(cfg.with_override_str("model.p=1.0").is_err());
        assert!(cfg.with_override_str("no_equals_sign").is_err());
    }

    #[test]
    fn initial_data_library() {
        let mut cfg = parse_config(MINIMAL).unwrap();
        cfg.domain.n = 4;
        let params = cfg.model_params().unwrap();
        cfg.initial = InitialData::Constant { value: 0.5 };
        assert_eq!(cfg.initial_field(&params).unwrap().values(), &[0.5; 4]);
        cfg.initial = InitialData::Nodes {
            values: vec![1.0, 2.0, 3.0],
        };
        assert!(cfg.initial_field(&params).is_err());
        cfg.initial = InitialData::Bump {
            amplitude: 3.0,
            center: 0.5,
            width: 0.4,
            norm: Some(0.1),
        };
        let u = cfg.initial_field(&params).unwrap();
        assert!((lp_norm(&u, 2.0).unwrap() - 0.1).abs() < 1e-14);
    }

    #[test]
    fn regime_violations_are_warnings() {
        let text = "scenario = \"extinction\"\n[model]\nmu = 0.0\n[source]\nkind = \"power\"\nr = 0.6\n";
        let cfg = parse_config(text).unwrap();
        assert!(cfg.regime_warnings().iter().any(|w| w.contains("mu > 0")));
    }
}
