//! Scenario configuration: a versioned JSON document, parsed strictly.

use serde::{Deserialize, Serialize};
use wavecap_core::geometry::{BoundaryCondition, Factor};
use wavecap_core::transposition::Side;

pub const SCHEMA: &str = "wavecap/1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    pub schema: String,
    pub domain: DomainConfig,
    /// Number of retained modes `K`.
    pub modes: usize,
    pub grid: GridConfig,
    pub source: SourceConfig,
    pub sensors: Vec<PatchConfig>,
    pub alphabet: AlphabetConfig,
    #[serde(default)]
    pub noise: NoiseConfig,
    /// Energy budget `rT` on `Σ α_k e_k`; absent means unconstrained.
    #[serde(default)]
    pub budget: Option<f64>,
    #[serde(default)]
    pub estimator: EstimatorConfig,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub optimizer: OptimizerConfig,
    #[serde(default)]
    pub sweep: Option<SweepConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DomainConfig {
    pub lengths: Vec<f64>,
    pub wave_speed: f64,
    pub boundary: BoundaryCondition,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub horizon: f64,
    pub steps: usize,
}

/// Exactly one source model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum SourceConfig {
    Distributed(Vec<PatchConfig>),
    Boundary(Vec<BoundaryPatchConfig>),
}

impl SourceConfig {
    pub fn inputs(&self) -> usize {
        match self {
            SourceConfig::Distributed(p) => p.len(),
            SourceConfig::Boundary(p) => p.len(),
        }
    }
}

fn unit() -> f64 {
    1.0
}

fn constant_profile() -> Vec<Factor> {
    vec![Factor::Constant]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PatchConfig {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    #[serde(default = "constant_profile")]
    pub profile: Vec<Factor>,
    #[serde(default = "unit")]
    pub amplitude: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundaryPatchConfig {
    pub axis: usize,
    pub side: Side,
    /// Tangential bounds (the remaining axes in order); empty in 1-D.
    #[serde(default)]
    pub lo: Vec<f64>,
    #[serde(default)]
    pub hi: Vec<f64>,
    #[serde(default = "constant_profile")]
    pub profile: Vec<Factor>,
    #[serde(default = "unit")]
    pub amplitude: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum AlphabetConfig {
    /// `symbols[k][i][j]`: input `i` on step `j` of symbol `k`.
    Explicit { symbols: Vec<Vec<Vec<f64>>> },
    /// `±amplitude` held on every input.
    Antipodal { amplitude: f64 },
    /// `amplitude √2 cos(2π p t / T)` on every input, `p = 1..=count`.
    OrthogonalTones { count: usize, amplitude: f64 },
    /// Independent `N(0, amplitude²)` samples.
    Random { count: usize, amplitude: f64, seed: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseConfig {
    /// Gain `σ` of unit-variance source noise on every mode; zero leaves
    /// only the receiver noise.
    #[serde(default)]
    pub source_gain: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum EstimatorMethod {
    Quadrature,
    #[serde(rename = "mc")]
    #[value(name = "mc")]
    MonteCarlo,
    Duncan,
}

fn default_samples() -> usize {
    100_000
}

fn default_paths() -> usize {
    10_000
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EstimatorConfig {
    pub method: EstimatorMethod,
    #[serde(default = "default_samples")]
    pub samples: usize,
    #[serde(default = "default_paths")]
    pub paths: usize,
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        Self {
            method: EstimatorMethod::Quadrature,
            samples: default_samples(),
            paths: default_paths(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AlgorithmChoice {
    Gradient,
    BlahutArimoto,
}

fn default_algorithm() -> AlgorithmChoice {
    AlgorithmChoice::Gradient
}

fn default_initial_step() -> f64 {
    0.5
}

fn default_min_step() -> f64 {
    1e-8
}

fn default_max_iter() -> usize {
    10_000
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerConfig {
    #[serde(default = "default_algorithm")]
    pub algorithm: AlgorithmChoice,
    #[serde(default = "default_initial_step")]
    pub initial_step: f64,
    #[serde(default = "default_min_step")]
    pub min_step: f64,
    #[serde(default = "default_max_iter")]
    pub max_iter: usize,
    #[serde(default)]
    pub tol: Option<f64>,
    /// Also run the other algorithm and report its capacity.
    #[serde(default = "yes")]
    pub cross_check: bool,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            algorithm: default_algorithm(),
            initial_step: default_initial_step(),
            min_step: default_min_step(),
            max_iter: default_max_iter(),
            tol: None,
            cross_check: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepParameter {
    Budget,
    NoiseGain,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub parameter: SweepParameter,
    /// Ascending.
    pub values: Vec<f64>,
}

/// A configuration error tied to the key it concerns.
#[derive(Debug, Clone, PartialEq)]
pub struct Invalid {
    pub key: &'static str,
    pub message: String,
}

fn invalid(key: &'static str, message: impl Into<String>) -> Invalid {
    Invalid {
        key,
        message: message.into(),
    }
}

fn positive(key: &'static str, v: f64) -> Result<(), Invalid> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(invalid(key, format!("must be a positive finite number, got {v}")))
    }
}

fn check_box(key: &'static str, lo: &[f64], hi: &[f64], dims: usize) -> Result<(), Invalid> {
    if lo.len() != dims || hi.len() != dims {
        return Err(invalid(key, format!("bounds must have {dims} entries")));
    }
    if lo.iter().chain(hi).any(|v| !v.is_finite()) || lo.iter().zip(hi).any(|(a, b)| a > b) {
        return Err(invalid(key, format!("bounds {lo:?}..{hi:?} are not an ordered box")));
    }
    Ok(())
}

impl Config {
    /// Checks that need no numerical work. Geometric containment and
    /// feasibility are checked when the scenario is assembled.
    pub fn validate(&self) -> Result<(), Invalid> {
        if self.schema != SCHEMA {
            return Err(invalid(
                "schema",
                format!("unsupported schema {:?}; expected {SCHEMA:?}", self.schema),
            ));
        }
        let dims = self.domain.lengths.len();
        if !(1..=3).contains(&dims) {
            return Err(invalid("lengths", "domain must have 1 to 3 dimensions"));
        }
        for l in &self.domain.lengths {
            positive("lengths", *l)?;
        }
        positive("wave_speed", self.domain.wave_speed)?;
        if self.modes == 0 {
            return Err(invalid("modes", "at least one mode is required"));
        }
        positive("horizon", self.grid.horizon)?;
        if self.grid.steps == 0 {
            return Err(invalid("steps", "at least one time step is required"));
        }
        match &self.source {
            SourceConfig::Distributed(patches) => {
                if patches.is_empty() {
                    return Err(invalid("source", "at least one input patch is required"));
                }
                for p in patches {
                    check_box("source", &p.lo, &p.hi, dims)?;
                }
            }
            SourceConfig::Boundary(patches) => {
                if patches.is_empty() {
                    return Err(invalid("source", "at least one boundary patch is required"));
                }
                if self.domain.boundary != BoundaryCondition::Dirichlet {
                    return Err(invalid("boundary", "boundary sources require a dirichlet domain"));
                }
                for p in patches {
                    if p.axis >= dims {
                        return Err(invalid("axis", format!("face axis {} outside a {dims}-d domain", p.axis)));
                    }
                    check_box("source", &p.lo, &p.hi, dims - 1)?;
                }
            }
        }
        if self.sensors.is_empty() {
            return Err(invalid("sensors", "at least one sensor patch is required"));
        }
        for p in &self.sensors {
            check_box("sensors", &p.lo, &p.hi, dims)?;
        }
        match &self.alphabet {
            AlphabetConfig::Explicit { symbols } => {
                if symbols.is_empty() {
                    return Err(invalid("symbols", "alphabet must not be empty"));
                }
                for s in symbols {
                    if s.len() != self.source.inputs() || s.iter().any(|row| row.len() != self.grid.steps) {
                        return Err(invalid(
                            "symbols",
                            format!(
                                "every symbol must be {} inputs by {} steps",
                                self.source.inputs(),
                                self.grid.steps
                            ),
                        ));
                    }
                }
            }
            AlphabetConfig::Antipodal { amplitude } => positive("amplitude", *amplitude)?,
            AlphabetConfig::OrthogonalTones { count, amplitude } | AlphabetConfig::Random { count, amplitude, .. } => {
                positive("amplitude", *amplitude)?;
                if *count == 0 {
                    return Err(invalid("count", "alphabet must not be empty"));
                }
            }
        }
        if !(self.noise.source_gain.is_finite() && self.noise.source_gain >= 0.0) {
            return Err(invalid("source_gain", "must be finite and nonnegative"));
        }
        if let Some(b) = self.budget {
            positive("budget", b)?;
        }
        if self.estimator.samples == 0 {
            return Err(invalid("samples", "must be positive"));
        }
        if self.estimator.paths == 0 {
            return Err(invalid("paths", "must be positive"));
        }
        positive("initial_step", self.optimizer.initial_step)?;
        positive("min_step", self.optimizer.min_step)?;
        if let Some(t) = self.optimizer.tol {
            positive("tol", t)?;
        }
        if let Some(s) = &self.sweep {
            if s.values.is_empty() {
                return Err(invalid("values", "sweep needs at least one value"));
            }
            if s.values.windows(2).any(|w| w[0] >= w[1]) {
                return Err(invalid("values", "sweep values must be strictly ascending"));
            }
            for v in &s.values {
                match s.parameter {
                    SweepParameter::Budget => positive("values", *v)?,
                    SweepParameter::NoiseGain if !(v.is_finite() && *v >= 0.0) => {
                        return Err(invalid("values", "noise gains must be finite and nonnegative"))
                    }
                    SweepParameter::NoiseGain => {}
                }
            }
        }
        Ok(())
    }
}

/// 1-based line of the first occurrence of `"key"` in the source text.
pub fn locate_key(text: &str, key: &str) -> Option<usize> {
    let needle = format!("\"{key}\"");
    text.lines().position(|l| l.contains(&needle)).map(|i| i + 1)
}

/// Parses and validates; the error message names a line of the file.
pub fn parse(text: &str) -> Result<Config, String> {
    let config: Config =
        serde_json::from_str(text).map_err(|e| format!("line {}, column {}: {e}", e.line(), e.column()))?;
    config.validate().map_err(|e| match locate_key(text, e.key) {
        Some(line) => format!("line {line}: `{}`: {}", e.key, e.message),
        None => format!("`{}`: {}", e.key, e.message),
    })?;
    Ok(config)
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"{
  "schema": "wavecap/1",
  "domain": { "lengths": [1.0], "wave_speed": 1.0, "boundary": "dirichlet" },
  "modes": 4,
  "grid": { "horizon": 1.0, "steps": 8 },
  "source": { "distributed": [ { "lo": [0.1], "hi": [0.3] } ] },
  "sensors": [ { "lo": [0.6], "hi": [0.9] } ],
  "alphabet": { "antipodal": { "amplitude": 1.0 } }
}"#;

    #[test]
    fn minimal_config_parses_with_defaults() {
        let c = parse(MINIMAL).unwrap();
        assert_eq!(c.estimator.method, EstimatorMethod::Quadrature);
        assert_eq!(c.optimizer.max_iter, 10_000);
        assert!(c.budget.is_none());
    }

    #[test]
    fn unknown_key_is_rejected_with_line() {
        let text = MINIMAL.replace("\"modes\": 4,", "\"modes\": 4,\n  \"mode\": 3,");
        let err = parse(&text).unwrap_err();
        assert!(err.starts_with("line 5"), "{err}");
        assert!(err.contains("unknown field"), "{err}");
    }

    #[test]
    fn negative_horizon_names_its_line() {
        let text = MINIMAL.replace("\"horizon\": 1.0", "\"horizon\": -1.0");
        let err = parse(&text).unwrap_err();
        assert!(err.starts_with("line 5: `horizon`"), "{err}");
    }

    #[test]
    fn two_source_models_are_rejected() {
        let text = MINIMAL.replace(
            r#""source": { "distributed": [ { "lo": [0.1], "hi": [0.3] } ] },"#,
            r#""source": { "distributed": [], "boundary": [] },"#,
        );
        assert!(parse(&text).is_err());
    }

    #[test]
    fn wrong_schema_is_rejected() {
        let text = MINIMAL.replace("wavecap/1", "wavecap/0");
        assert!(parse(&text).unwrap_err().contains("schema"));
    }
}
