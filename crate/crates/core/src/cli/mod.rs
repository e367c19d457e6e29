//! Command-line front end. Each subcommand maps onto one library operation;
//! `run` executes a saved JSON configuration.

pub mod config;
pub mod output;

use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use serde_json::{json, Value};

use crate::error::{OracleError, Result};
use crate::losses::{SelectionRule, Selector};
use crate::model::ParamVector;
use crate::numeric::derive_seed;
use crate::oracles::{log_lr, selective_estimate, CalibrationConfig, OracleRule};
use crate::permutation::{sample_ensemble, DEFAULT_EXACT_CAP};
use crate::posterior::{NullSet, OrbitSupport, PosteriorModel};
use crate::risk::{
    baseline_rules, compare_paired, exact_oracle_risk, mc_upper_approx, report, simulate, subset_lower_bound,
    BoundConfig, BoundDirection, OracleSpec, RiskReport,
};
use crate::rule::DecisionRule;
use crate::simple_rule::{gap_estimate, GapConfig, SimpleCalibrationLaw};

pub use config::{Command, EnsembleSpec, ExperimentConfig, ProblemName, ThetaSpec, ValidatedConfig};

pub const EXIT_CONFIG: u8 = 2;
pub const EXIT_CAPACITY: u8 = 3;
pub const EXIT_INFEASIBLE: u8 = 4;

#[derive(Debug, Parser)]
#[command(name = "pi-oracle", version, about = "Oracle permutation-invariant decision rules for the Gaussian sequence model")]
pub struct Cli {
    #[command(subcommand)]
    pub command: CliCommand,
}

#[derive(Debug, Subcommand)]
pub enum CliCommand {
    /// Posterior marginals of the permutation mixture given z.
    Posterior(ExperimentArgs),
    /// Calibrate the likelihood-ratio global test (and apply it to z if given).
    GlobalTest(ExperimentArgs),
    /// Calibrate the FDR oracle (and apply it to z if given).
    FdrOracle(ExperimentArgs),
    /// Calibrate the directional-FDR sign oracle (and apply it to z if given).
    SignOracle(ExperimentArgs),
    /// Posterior-mean estimates of the coordinates selected from z.
    SelectEstimate(ExperimentArgs),
    /// Monte Carlo risk of the oracle and the competitor rules.
    Risk(ExperimentArgs),
    /// Subset lower bound, exact risk and upper approximation.
    Bound(ExperimentArgs),
    /// Risk gap between the simple rule and the exact oracle.
    Gap(ExperimentArgs),
    /// Execute a JSON configuration file.
    Run(RunArgs),
}

#[derive(Debug, Clone, Args)]
pub struct OutputArgs {
    /// JSON-lines results file (stdout when omitted).
    #[arg(long)]
    pub output: Option<PathBuf>,
    /// Also write the records as CSV.
    #[arg(long)]
    pub csv: Option<PathBuf>,
    /// Exit with status 4 when a constraint cannot be met.
    #[arg(long)]
    pub strict: bool,
}

#[derive(Debug, Clone, Args)]
pub struct ExperimentArgs {
    /// Comma-separated values or a generator: sparse(n,k,mu), two_group(n,k,a,b), linear(n,lo,hi).
    #[arg(long, allow_hyphen_values = true)]
    pub theta: ThetaSpec,
    #[arg(long, default_value_t = 1.0)]
    pub sigma: f64,
    #[arg(long, value_enum)]
    pub problem: Option<ProblemName>,
    #[arg(long, default_value_t = 0.1)]
    pub alpha: f64,
    /// all, argmax or topk:K.
    #[arg(long, default_value = "all")]
    pub selection: SelectionRule,
    /// exact or sampled:M.
    #[arg(long, default_value = "exact")]
    pub ensemble: EnsembleSpec,
    #[arg(long, default_value_t = 10_000)]
    pub draws: usize,
    #[arg(long, default_value_t = 100_000)]
    pub calibration_draws: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Observed data, comma-separated.
    #[arg(long, allow_hyphen_values = true, value_parser = parse_z)]
    pub z: Option<::std::vec::Vec<f64>>,
    /// Interval null `lo,hi` instead of the point null.
    #[arg(long, allow_hyphen_values = true, value_parser = parse_interval)]
    pub null_interval: Option<NullSet>,
    /// Subset size for `bound`.
    #[arg(long, default_value_t = 10)]
    pub m: usize,
    #[arg(long, default_value_t = 10)]
    pub replicates: usize,
    /// Joint law used to calibrate the simple rule in `gap`.
    #[arg(long, value_enum, default_value = "permutation-mixture")]
    pub simple_calibration: SimpleCalibrationArg,
    #[command(flatten)]
    pub out: OutputArgs,
}

#[derive(Debug, Clone, Copy, clap::ValueEnum)]
pub enum SimpleCalibrationArg {
    Iid,
    PermutationMixture,
}

#[derive(Debug, Clone, Args)]
pub struct RunArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[command(flatten)]
    pub out: OutputArgs,
}

fn parse_z(s: &str) -> std::result::Result<Vec<f64>, String> {
    config::parse_list(s)
}

fn parse_interval(s: &str) -> std::result::Result<NullSet, String> {
    match config::parse_list(s)?.as_slice() {
        [lo, hi] => NullSet::interval(*lo, *hi).map_err(|e| e.to_string()),
        _ => Err("expected lo,hi".into()),
    }
}

impl ExperimentArgs {
    fn into_config(self, command: Command) -> ExperimentConfig {
        let problem = self.problem.unwrap_or(match command {
            Command::GlobalTest => ProblemName::Global,
            Command::FdrOracle => ProblemName::Fdr,
            Command::SignOracle => ProblemName::Sign,
            _ => ProblemName::Estimate,
        });
        ExperimentConfig {
            schema: config::SCHEMA_VERSION,
            command,
            theta: self.theta,
            sigma: self.sigma,
            problem,
            alpha: self.alpha,
            selection: self.selection,
            ensemble: self.ensemble,
            draws: self.draws,
            calibration_draws: self.calibration_draws,
            seed: self.seed,
            z: self.z,
            null_set: self.null_interval.unwrap_or_default(),
            m: self.m,
            replicates: self.replicates,
            simple_calibration: match self.simple_calibration {
                SimpleCalibrationArg::Iid => SimpleCalibrationLaw::Iid,
                SimpleCalibrationArg::PermutationMixture => SimpleCalibrationLaw::PermutationMixture,
            },
            output: self.out.output,
        }
    }
}

/// Records produced by one run.
#[derive(Debug, Clone, Default)]
pub struct RunOutcome {
    pub records: Vec<Value>,
    /// Notes about constraints that could not be met.
    pub warnings: Vec<String>,
}

fn support_for(cfg: &ValidatedConfig) -> Result<Arc<OrbitSupport>> {
    let c = &cfg.config;
    Ok(Arc::new(match c.ensemble {
        EnsembleSpec::Exact => OrbitSupport::exact(&cfg.theta, c.null_set)?,
        EnsembleSpec::Sampled(m) => {
            let e = sample_ensemble(cfg.theta.len(), m, derive_seed(c.seed, "ensemble"))?;
            OrbitSupport::from_ensemble(&cfg.theta, &e, c.null_set)?
        }
    }))
}

fn calibration(cfg: &ValidatedConfig) -> CalibrationConfig {
    CalibrationConfig::new(cfg.config.calibration_draws, derive_seed(cfg.config.seed, "calibration"))
}

fn oracle_spec(cfg: &ValidatedConfig) -> OracleSpec {
    OracleSpec {
        problem: cfg.config.problem(),
        alpha: cfg.config.alpha,
        null_set: cfg.config.null_set,
        calibration: calibration(cfg),
    }
}

fn risk_record(cfg: &ValidatedConfig, report: &RiskReport) -> serde_json::Map<String, Value> {
    let mut rec = output::envelope(cfg, "risk");
    output::merge(&mut rec, serde_json::to_value(report).expect("report serializes"));
    rec
}

fn note_infeasible(rule: &OracleRule, out: &mut RunOutcome) {
    if rule.is_infeasible() {
        out.warnings.push(format!("{}: constraint cannot be met on the lambda bracket; the rule makes no calls", rule.name()));
    }
}

/// Execute a validated configuration.
pub fn execute(cfg: &ValidatedConfig) -> Result<RunOutcome> {
    let c = &cfg.config;
    let theta: &ParamVector = &cfg.theta;
    let mut out = RunOutcome::default();
    let push = |rec: serde_json::Map<String, Value>, out: &mut RunOutcome| out.records.push(Value::Object(rec));

    match c.command {
        Command::Posterior => {
            let support = support_for(cfg)?;
            let z = cfg.z.as_deref().expect("validated");
            let mut rec = output::envelope(cfg, "posterior");
            rec.insert("ensemble_mode".into(), serde_json::to_value(support.mode()).unwrap());
            output::merge(&mut rec, serde_json::to_value(support.summarize(z)).unwrap());
            let l = log_lr(support.as_ref(), z);
            output::merge(&mut rec, json!({ "z": z, "log_lr": l, "lr": l.exp(), "support_size": support.support_size() }));
            push(rec, &mut out);
        }
        Command::GlobalTest | Command::FdrOracle | Command::SignOracle => {
            let support = support_for(cfg)?;
            let cal = calibration(cfg);
            let rule = OracleRule::build(c.problem(), support.clone(), support.as_ref(), c.alpha, &cal)?;
            note_infeasible(&rule, &mut out);
            let mut rec = output::envelope(cfg, "calibration");
            rec.insert("rule".into(), Value::from(rule.name()));
            rec.insert("ensemble_mode".into(), serde_json::to_value(support.mode()).unwrap());
            rec.insert("calibration".into(), rule.diagnostics());
            if let OracleRule::Global(g) = &rule {
                rec.insert("threshold".into(), Value::from(g.threshold()));
            }
            if let Some(z) = cfg.z.as_deref() {
                rec.insert("z".into(), json!(z));
                rec.insert("decision".into(), serde_json::to_value(rule.decide(z)).unwrap());
                if let OracleRule::Global(g) = &rule {
                    rec.insert("lr".into(), Value::from(log_lr(g.model(), z).exp()));
                }
            }
            push(rec, &mut out);
        }
        Command::SelectEstimate => {
            let support = support_for(cfg)?;
            let z = cfg.z.as_deref().expect("validated");
            let summary = support.summarize(z);
            let selection = c.selection.select(z);
            let mut rec = output::envelope(cfg, "estimate");
            rec.insert("ensemble_mode".into(), serde_json::to_value(support.mode()).unwrap());
            output::merge(
                &mut rec,
                json!({
                    "z": z,
                    "selection": c.selection,
                    "selected": selection.mask,
                    "selection_degenerate": selection.degenerate,
                    "estimate": selective_estimate(&summary, &c.selection, z),
                    "post_var": summary.post_var,
                }),
            );
            push(rec, &mut out);
        }
        Command::Risk => {
            let support = support_for(cfg)?;
            let spec = oracle_spec(cfg);
            let oracle = spec.build(support.clone())?;
            note_infeasible(&oracle, &mut out);
            let loss = spec.loss();
            let oracle_outcomes = simulate(theta, &oracle, &loss, c.draws, c.seed)?;
            let oracle_report = report(&oracle.name(), &loss, &oracle_outcomes, c.seed, BoundDirection::Point)
                .with_ensemble(support.mode());
            let mut rec = risk_record(cfg, &oracle_report);
            rec.insert("calibration".into(), oracle.diagnostics());
            push(rec, &mut out);
            for rule in baseline_rules(c.problem(), theta.len(), c.alpha, theta.sigma())? {
                let cmp = compare_paired(theta, rule.as_ref(), &oracle, &loss, c.draws, c.seed)?;
                let mut rec = risk_record(cfg, &cmp.first);
                rec.insert("paired_difference_vs_oracle".into(), Value::from(cmp.difference));
                rec.insert("paired_difference_std_error".into(), Value::from(cmp.difference_std_error));
                push(rec, &mut out);
            }
        }
        Command::Bound => {
            let spec = oracle_spec(cfg);
            let bc = BoundConfig { m: c.m, draws: c.draws, seed: c.seed, replicates: c.replicates };
            let lower = subset_lower_bound(theta, &spec, &bc)?;
            push(risk_record(cfg, &lower), &mut out);
            if theta.len() <= DEFAULT_EXACT_CAP {
                let exact = exact_oracle_risk(theta, &spec, c.draws, c.seed)?;
                push(risk_record(cfg, &exact), &mut out);
            }
            let upper = mc_upper_approx(theta, &spec, &bc)?;
            push(risk_record(cfg, &upper), &mut out);
        }
        Command::Gap => {
            let gc = GapConfig {
                alpha: c.alpha,
                null_set: c.null_set,
                draws: c.draws,
                seed: c.seed,
                calibration: calibration(cfg),
                law: c.simple_calibration,
            };
            let g = gap_estimate(theta, c.problem(), &gc)?;
            push(risk_record(cfg, &g.risk_simple), &mut out);
            push(risk_record(cfg, &g.risk_pi), &mut out);
            let mut rec = output::envelope(cfg, "gap");
            output::merge(
                &mut rec,
                json!({
                    "rule": "simple_minus_oracle",
                    "estimate": g.gap,
                    "std_error": g.gap_std_error,
                    "draws": c.draws,
                    "risk_simple": g.risk_simple.estimate,
                    "risk_simple_std_error": g.risk_simple.std_error,
                    "risk_pi": g.risk_pi.estimate,
                    "risk_pi_std_error": g.risk_pi.std_error,
                    "calibration_law": g.calibration_law,
                }),
            );
            push(rec, &mut out);
        }
    }
    Ok(out)
}

fn exit_code_for(e: &OracleError) -> u8 {
    match e {
        OracleError::Capacity { .. } => EXIT_CAPACITY,
        _ => EXIT_CONFIG,
    }
}

fn configure_threads() {
    if let Some(n) = std::env::var("PI_ORACLE_THREADS").ok().and_then(|v| v.parse::<usize>().ok()).filter(|&n| n > 0)
    {
        // fails only if a pool already exists, which is harmless
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
}

fn run_config(config: ExperimentConfig, out: &OutputArgs) -> Result<(RunOutcome, ValidatedConfig)> {
    let validated = config.validate()?;
    let outcome = execute(&validated)?;
    let jsonl = output::to_jsonl(&outcome.records);
    let table = output::summary_table(&outcome.records);
    match &validated.config.output {
        Some(path) => {
            output::write_text(path, &jsonl)?;
            print!("{table}");
        }
        None => {
            print!("{jsonl}");
            eprint!("{table}");
        }
    }
    if let Some(path) = &out.csv {
        output::write_csv(&outcome.records, path)?;
    }
    Ok((outcome, validated))
}

/// Parse arguments, run, and map the outcome to a process exit status.
pub fn main_with_args<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_CONFIG } else { 0 });
        }
    };
    configure_threads();
    let (config, out) = match cli.command {
        CliCommand::Run(r) => {
            let text = match std::fs::read_to_string(&r.config) {
                Ok(t) => t,
                Err(e) => {
                    eprintln!("error: cannot read {}: {e}", r.config.display());
                    return ExitCode::from(EXIT_CONFIG);
                }
            };
            match ExperimentConfig::from_json(&text) {
                Ok(mut c) => {
                    if r.out.output.is_some() {
                        c.output = r.out.output.clone();
                    }
                    (c, r.out)
                }
                Err(e) => {
                    eprintln!("error: {e}");
                    return ExitCode::from(EXIT_CONFIG);
                }
            }
        }
        CliCommand::Posterior(a) => with_command(a, Command::Posterior),
        CliCommand::GlobalTest(a) => with_command(a, Command::GlobalTest),
        CliCommand::FdrOracle(a) => with_command(a, Command::FdrOracle),
        CliCommand::SignOracle(a) => with_command(a, Command::SignOracle),
        CliCommand::SelectEstimate(a) => with_command(a, Command::SelectEstimate),
        CliCommand::Risk(a) => with_command(a, Command::Risk),
        CliCommand::Bound(a) => with_command(a, Command::Bound),
        CliCommand::Gap(a) => with_command(a, Command::Gap),
    };
    match run_config(config, &out) {
        Ok((outcome, _)) => {
            for w in &outcome.warnings {
                eprintln!("warning: {w}");
            }
            if out.strict && !outcome.warnings.is_empty() {
                ExitCode::from(EXIT_INFEASIBLE)
            } else {
                ExitCode::SUCCESS
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code_for(&e))
        }
    }
}

fn with_command(args: ExperimentArgs, command: Command) -> (ExperimentConfig, OutputArgs) {
    let out = args.out.clone();
    (args.into_config(command), out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    fn config(json: &str) -> ValidatedConfig {
        ExperimentConfig::from_json(json).unwrap().validate().unwrap()
    }

    #[test]
    fn flags_parse_lists() {
        Cli::command().debug_assert();
        let cli = Cli::try_parse_from([
            "pi-oracle", "posterior", "--theta", "0,1", "--z", "-0.5,2", "--null-interval", "-0.5,0.5",
        ])
        .unwrap();
        let CliCommand::Posterior(a) = cli.command else { panic!("wrong subcommand") };
        assert_eq!(a.z, Some(vec![-0.5, 2.0]));
        assert_eq!(a.null_interval, Some(NullSet::Interval { lo: -0.5, hi: 0.5 }));
    }

    #[test]
    fn posterior_record_values() {
        let cfg = config(r#"{"command":"posterior","theta":[0,2],"problem":"estimate","z":[0,2]}"#);
        let out = execute(&cfg).unwrap();
        let r = &out.records[0];
        assert!((r["post_mean"][1].as_f64().unwrap() - 1.964028).abs() < 1e-6);
        assert!((r["lr"].as_f64().unwrap() - 0.265802).abs() < 1e-6);
        assert_eq!(r["config_hash"], Value::from(cfg.hash.clone()));
    }

    #[test]
    fn gap_record_has_both_risks() {
        let cfg = config(r#"{"command":"gap","theta":[0,0,2,2],"problem":"estimate","draws":500,"seed":7}"#);
        let out = execute(&cfg).unwrap();
        assert_eq!(out.records.len(), 3);
        let g = &out.records[2];
        assert_eq!(g["record"], "gap");
        assert!(g["std_error"].as_f64().unwrap() > 0.0);
    }

    #[test]
    fn capacity_maps_to_exit_three() {
        let cfg = config(r#"{"command":"risk","theta":"sparse(12,2,3)","problem":"estimate","draws":10}"#);
        let e = execute(&cfg).unwrap_err();
        assert_eq!(exit_code_for(&e), EXIT_CAPACITY);
    }

    #[test]
    fn risk_lists_competitors() {
        let cfg = config(
            r#"{"command":"risk","theta":[0,0,3,3],"problem":"fdr","draws":300,"calibration_draws":1000,"seed":1}"#,
        );
        let out = execute(&cfg).unwrap();
        let rules: Vec<&str> = out.records.iter().map(|r| r["rule"].as_str().unwrap()).collect();
        assert_eq!(rules, vec!["oracle_fdr", "bh"]);
        assert!(out.records[1]["paired_difference_vs_oracle"].is_number());
    }
}
