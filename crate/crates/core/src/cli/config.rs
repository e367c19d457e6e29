//! Experiment configuration: a JSON document, or the same fields given as
//! command-line flags.

use std::path::PathBuf;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{OracleError, Result};
use crate::losses::SelectionRule;
use crate::model::{DataVector, ParamVector};
use crate::numeric::derive_seed;
use crate::oracles::global::MIN_CALIBRATION_DRAWS;
use crate::oracles::Problem;
use crate::posterior::NullSet;
use crate::simple_rule::SimpleCalibrationLaw;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    Posterior,
    GlobalTest,
    FdrOracle,
    SignOracle,
    SelectEstimate,
    Risk,
    Bound,
    Gap,
}

impl Command {
    pub fn label(&self) -> &'static str {
        match self {
            Command::Posterior => "posterior",
            Command::GlobalTest => "global-test",
            Command::FdrOracle => "fdr-oracle",
            Command::SignOracle => "sign-oracle",
            Command::SelectEstimate => "select-estimate",
            Command::Risk => "risk",
            Command::Bound => "bound",
            Command::Gap => "gap",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum ProblemName {
    Global,
    Fdr,
    Sign,
    Estimate,
}

/// `theta` as explicit values or a generator expression:
/// `sparse(n,k,mu)`, `two_group(n,k,a,b)` or `linear(n,lo,hi)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ThetaSpec {
    Values(Vec<f64>),
    Expr(String),
}

impl std::str::FromStr for ThetaSpec {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        let s = s.trim();
        if s.contains('(') {
            return Ok(ThetaSpec::Expr(s.to_string()));
        }
        parse_list(s).map(ThetaSpec::Values)
    }
}

pub fn parse_list(s: &str) -> std::result::Result<Vec<f64>, String> {
    s.split(',')
        .map(|t| t.trim().parse::<f64>().map_err(|_| format!("'{t}' is not a number")))
        .collect()
}

fn generator_args(expr: &str) -> Result<(&str, Vec<f64>)> {
    let bad = || OracleError::InvalidParameter(format!("cannot parse theta generator '{expr}'"));
    let (name, rest) = expr.split_once('(').ok_or_else(bad)?;
    let inner = rest.strip_suffix(')').ok_or_else(bad)?;
    let args = parse_list(inner).map_err(OracleError::InvalidParameter)?;
    Ok((name.trim(), args))
}

fn as_count(x: f64, what: &str) -> Result<usize> {
    if x >= 0.0 && x.fract() == 0.0 && x <= u32::MAX as f64 {
        Ok(x as usize)
    } else {
        Err(OracleError::InvalidParameter(format!("{what} must be a non-negative integer, got {x}")))
    }
}

impl ThetaSpec {
    /// Concrete values; generators place their groups by a shuffle keyed on `seed`.
    pub fn expand(&self, seed: u64) -> Result<Vec<f64>> {
        let expr = match self {
            ThetaSpec::Values(v) => return Ok(v.clone()),
            ThetaSpec::Expr(e) if !e.contains('(') => {
                return parse_list(e).map_err(OracleError::InvalidParameter);
            }
            ThetaSpec::Expr(e) => e,
        };
        let (name, args) = generator_args(expr)?;
        let arity = |k: usize| {
            if args.len() == k {
                Ok(())
            } else {
                Err(OracleError::InvalidParameter(format!("{name} takes {k} arguments, got {}", args.len())))
            }
        };
        let mut values = match name {
            "sparse" | "two_group" => {
                arity(if name == "sparse" { 3 } else { 4 })?;
                let n = as_count(args[0], "n")?;
                let k = as_count(args[1], "k")?;
                if k > n {
                    return Err(OracleError::InvalidParameter(format!("k = {k} exceeds n = {n}")));
                }
                let (a, b) = if name == "sparse" { (args[2], 0.0) } else { (args[2], args[3]) };
                let mut v = vec![a; k];
                v.resize(n, b);
                v
            }
            "linear" => {
                arity(3)?;
                let n = as_count(args[0], "n")?;
                let (lo, hi) = (args[1], args[2]);
                match n {
                    0 => Vec::new(),
                    1 => vec![lo],
                    _ => (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect(),
                }
            }
            _ => return Err(OracleError::InvalidParameter(format!("unknown theta generator '{name}'"))),
        };
        if name != "linear" {
            values.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(seed, "theta")));
        }
        Ok(values)
    }
}

/// `exact` or `sampled:M`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(try_from = "String", into = "String")]
pub enum EnsembleSpec {
    #[default]
    Exact,
    Sampled(usize),
}

impl std::str::FromStr for EnsembleSpec {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        if s == "exact" {
            return Ok(EnsembleSpec::Exact);
        }
        s.strip_prefix("sampled:")
            .and_then(|m| m.parse().ok())
            .filter(|&m: &usize| m >= 1)
            .map(EnsembleSpec::Sampled)
            .ok_or_else(|| format!("unknown ensemble '{s}' (expected exact or sampled:M with M >= 1)"))
    }
}

impl TryFrom<String> for EnsembleSpec {
    type Error = String;

    fn try_from(s: String) -> std::result::Result<Self, Self::Error> {
        s.parse()
    }
}

impl From<EnsembleSpec> for String {
    fn from(e: EnsembleSpec) -> Self {
        match e {
            EnsembleSpec::Exact => "exact".into(),
            EnsembleSpec::Sampled(m) => format!("sampled:{m}"),
        }
    }
}

fn default_schema() -> u32 {
    SCHEMA_VERSION
}
fn default_sigma() -> f64 {
    1.0
}
fn default_alpha() -> f64 {
    0.1
}
fn default_selection() -> SelectionRule {
    SelectionRule::All
}
fn default_draws() -> usize {
    10_000
}
fn default_calibration_draws() -> usize {
    100_000
}
fn default_m() -> usize {
    10
}
fn default_replicates() -> usize {
    10
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "default_schema")]
    pub schema: u32,
    pub command: Command,
    pub theta: ThetaSpec,
    #[serde(default = "default_sigma")]
    pub sigma: f64,
    pub problem: ProblemName,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default = "default_selection")]
    pub selection: SelectionRule,
    #[serde(default)]
    pub ensemble: EnsembleSpec,
    #[serde(default = "default_draws")]
    pub draws: usize,
    #[serde(default = "default_calibration_draws")]
    pub calibration_draws: usize,
    #[serde(default)]
    pub seed: u64,
    /// Observed data for the per-observation commands.
    #[serde(default)]
    pub z: Option<Vec<f64>>,
    #[serde(default)]
    pub null_set: NullSet,
    /// Subset size for `bound`.
    #[serde(default = "default_m")]
    pub m: usize,
    #[serde(default = "default_replicates")]
    pub replicates: usize,
    #[serde(default)]
    pub simple_calibration: SimpleCalibrationLaw,
    #[serde(default)]
    pub output: Option<PathBuf>,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| OracleError::InvalidParameter(format!("invalid config: {e}")))
    }

    pub fn problem(&self) -> Problem {
        match self.problem {
            ProblemName::Global => Problem::Global,
            ProblemName::Fdr => Problem::Fdr,
            ProblemName::Sign => Problem::Sign,
            ProblemName::Estimate => Problem::Estimate(self.selection),
        }
    }

    /// Hex SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let canonical = serde_json::to_string(self).expect("config serializes");
        hex::encode(Sha256::digest(canonical.as_bytes()))
    }

    /// Check every field and expand `theta`.
    pub fn validate(&self) -> Result<ValidatedConfig> {
        let invalid = |m: String| Err(OracleError::InvalidParameter(m));
        if self.schema != SCHEMA_VERSION {
            return invalid(format!("unsupported schema {} (expected {SCHEMA_VERSION})", self.schema));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return invalid(format!("alpha must lie in (0, 1), got {}", self.alpha));
        }
        if self.draws < 2 {
            return invalid(format!("draws must be >= 2, got {}", self.draws));
        }
        let calibrated = matches!(self.command, Command::GlobalTest | Command::FdrOracle | Command::SignOracle)
            || (matches!(self.command, Command::Risk | Command::Bound | Command::Gap)
                && !matches!(self.problem, ProblemName::Estimate));
        if calibrated && self.calibration_draws < MIN_CALIBRATION_DRAWS {
            return invalid(format!(
                "calibration_draws must be >= {MIN_CALIBRATION_DRAWS}, got {}",
                self.calibration_draws
            ));
        }
        if self.m == 0 || self.replicates == 0 {
            return invalid("m and replicates must be >= 1".into());
        }
        let theta = ParamVector::new(self.theta.expand(self.seed)?, self.sigma)?;
        let z = match &self.z {
            Some(v) => {
                let z = DataVector::new(v.clone())?;
                if z.len() != theta.len() {
                    return Err(OracleError::Dimension { expected: theta.len(), found: z.len() });
                }
                Some(z.values().to_vec())
            }
            None => None,
        };
        if matches!(self.command, Command::Posterior | Command::SelectEstimate) && z.is_none() {
            return invalid(format!("{} needs observed data z", self.command.label()));
        }
        Ok(ValidatedConfig { config: self.clone(), theta, z, hash: self.hash() })
    }
}

/// A checked configuration with `theta` expanded.
#[derive(Debug, Clone)]
pub struct ValidatedConfig {
    pub config: ExperimentConfig,
    pub theta: ParamVector,
    pub z: Option<Vec<f64>>,
    pub hash: String,
}

#[cfg(test)]
mod tests {
    use super::*;

    fn base() -> ExperimentConfig {
        ExperimentConfig::from_json(r#"{"command":"risk","theta":[0,0,2,2],"problem":"fdr"}"#).unwrap()
    }

    #[test]
    fn defaults_fill_in() {
        let c = base();
        assert_eq!((c.schema, c.sigma, c.alpha, c.draws), (1, 1.0, 0.1, 10_000));
        assert_eq!(c.ensemble, EnsembleSpec::Exact);
        assert!(c.validate().is_ok());
    }

    #[test]
    fn round_trip_keeps_hash() {
        let c = base();
        let back = ExperimentConfig::from_json(&serde_json::to_string(&c).unwrap()).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.hash(), c.hash());
    }

    #[test]
    fn generators() {
        let s: ThetaSpec = "sparse(6,2,3)".parse().unwrap();
        let v = s.expand(1).unwrap();
        assert_eq!(v.len(), 6);
        assert_eq!(v.iter().filter(|&&x| x == 3.0).count(), 2);
        assert_eq!(s.expand(1).unwrap(), v);
        let t: ThetaSpec = "two_group(4,1,-1,2)".parse().unwrap();
        let mut w = t.expand(0).unwrap();
        w.sort_by(f64::total_cmp);
        assert_eq!(w, vec![-1.0, 2.0, 2.0, 2.0]);
        let l: ThetaSpec = "linear(3,0,1)".parse().unwrap();
        assert_eq!(l.expand(0).unwrap(), vec![0.0, 0.5, 1.0]);
        assert!("nope(1)".parse::<ThetaSpec>().unwrap().expand(0).is_err());
        assert!("sparse(2,3,1)".parse::<ThetaSpec>().unwrap().expand(0).is_err());
        assert_eq!("1, 2".parse::<ThetaSpec>().unwrap(), ThetaSpec::Values(vec![1.0, 2.0]));
        assert_eq!(ThetaSpec::Expr("0,2.5".into()).expand(0).unwrap(), vec![0.0, 2.5]);
    }

    #[test]
    fn validation_errors() {
        let mut c = base();
        c.schema = 2;
        assert!(c.validate().is_err());
        let mut c = base();
        c.alpha = 1.5;
        assert!(c.validate().is_err());
        let mut c = base();
        c.calibration_draws = 10;
        assert!(c.validate().is_err());
        let mut c = base();
        c.z = Some(vec![1.0]);
        assert!(matches!(c.validate(), Err(OracleError::Dimension { .. })));
        let mut c = base();
        c.command = Command::Posterior;
        assert!(c.validate().is_err());
        assert!(ExperimentConfig::from_json(r#"{"command":"risk","theta":[1],"problem":"fdr","bogus":1}"#).is_err());
    }

    #[test]
    fn ensemble_strings() {
        assert_eq!("sampled:50".parse::<EnsembleSpec>().unwrap(), EnsembleSpec::Sampled(50));
        assert!("sampled:0".parse::<EnsembleSpec>().is_err());
        assert_eq!(String::from(EnsembleSpec::Sampled(3)), "sampled:3");
    }
}
