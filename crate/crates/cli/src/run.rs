//! Subcommand drivers. Each one parses and validates the whole scenario
//! before touching the output directory, so a rejected config leaves no
//! artifacts behind.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use log::{info, warn};
use nalgebra::{DMatrix, SymmetricEigen};
use serde::Serialize;
use sha2::{Digest, Sha256};
use wavecap_core::capacity::{
    optimize_blahut_arimoto, optimize_capacity_gradient, support, verify_optimality, Algorithm, CapacityResult,
    Estimator, Objective, OptimalityReport, OptimizerOptions,
};
use wavecap_core::channel::{evolve_modes, simulate_output, ModalState};
use wavecap_core::kernel::{reduce_points, ReducedKernel};
use wavecap_core::mutual_info::{mi_duncan, mi_monte_carlo, mi_quadrature, mi_upper_bound, DuncanOptions, MiMethod};
use wavecap_core::rng::{fill_standard_normal, stream_rng};
use wavecap_core::weights::SourceWeights;
use wavecap_core::Error as CoreError;

use crate::config::{self, AlgorithmChoice, Config, EstimatorMethod, SweepParameter};
use crate::output::{float, to_json, Csv};
use crate::scenario::{self, Scenario};

pub const REPORT_SCHEMA: &str = "wavecap-report/1";

#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl RunError {
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Config(_) => 2,
            RunError::Numerical(_) | RunError::Io(_) => 1,
        }
    }
}

impl From<serde_json::Error> for RunError {
    fn from(e: serde_json::Error) -> Self {
        RunError::Io(e.into())
    }
}

/// Options shared by every subcommand, already resolved from flags.
#[derive(Debug, Clone)]
pub struct RunOptions {
    pub config: PathBuf,
    pub out: PathBuf,
    pub seed: Option<u64>,
    pub estimator: Option<EstimatorMethod>,
    pub bits: bool,
}

/// Outcome of a run whose artifacts were written.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Outcome {
    Success,
    /// Artifacts were written but a convergence or optimality check failed.
    Flagged(String),
}

pub const SEED_ENV: &str = "WAVECAP_SEED";

/// Flag, then config, then `WAVECAP_SEED`, then zero.
pub fn resolve_seed(flag: Option<u64>, config: Option<u64>) -> Result<u64, RunError> {
    if let Some(s) = flag.or(config) {
        return Ok(s);
    }
    match std::env::var(SEED_ENV) {
        Ok(v) => v
            .trim()
            .parse()
            .map_err(|_| RunError::Config(format!("{SEED_ENV}={v:?} is not an unsigned 64-bit integer"))),
        Err(_) => Ok(0),
    }
}

struct Loaded {
    text: String,
    config: Config,
    seed: u64,
    hash: String,
    method: EstimatorMethod,
}

fn load(opts: &RunOptions) -> Result<Loaded, RunError> {
    let text = fs::read_to_string(&opts.config)
        .map_err(|e| RunError::Config(format!("cannot read {}: {e}", opts.config.display())))?;
    let config = config::parse(&text).map_err(|e| RunError::Config(format!("{}: {e}", opts.config.display())))?;
    let seed = resolve_seed(opts.seed, config.seed)?;
    let canonical = serde_json::to_vec(&config)?;
    let hash = Sha256::digest(&canonical).iter().map(|b| format!("{b:02x}")).collect();
    let method = opts.estimator.unwrap_or(config.estimator.method);
    Ok(Loaded {
        text,
        config,
        seed,
        hash,
        method,
    })
}

/// Maps an assembly error onto the config key it most likely concerns.
fn config_error(loaded: &Loaded, path: &Path, e: CoreError) -> RunError {
    let key = match &e {
        CoreError::Numerical(msg) => return RunError::Numerical(msg.clone()),
        CoreError::Infeasible(_) => "budget",
        CoreError::ModelMismatch(_) => "boundary",
        CoreError::Geometry(msg) if msg.contains("sensor") => "sensors",
        CoreError::Geometry(_) => "source",
        CoreError::Unsupported(_) => "lengths",
        _ => "alphabet",
    };
    match config::locate_key(&loaded.text, key) {
        Some(line) => RunError::Config(format!("{}: line {line}: `{key}`: {e}", path.display())),
        None => RunError::Config(format!("{}: {e}", path.display())),
    }
}

fn numerical(e: CoreError) -> RunError {
    RunError::Numerical(e.to_string())
}

fn build(loaded: &Loaded, opts: &RunOptions, budget: Option<f64>, gain: Option<f64>) -> Result<Scenario, RunError> {
    scenario::build(&loaded.config, budget, gain).map_err(|e| config_error(loaded, &opts.config, e))
}

fn write(out: &Path, name: &str, bytes: &[u8]) -> Result<(), RunError> {
    fs::create_dir_all(out)?;
    fs::write(out.join(name), bytes)?;
    Ok(())
}

#[derive(Serialize)]
struct Tool {
    name: &'static str,
    version: &'static str,
}

const TOOL: Tool = Tool {
    name: "wavecap",
    version: env!("CARGO_PKG_VERSION"),
};

fn objective_estimator(method: EstimatorMethod, reduced: &ReducedKernel, config: &Config, seed: u64) -> Estimator {
    let mc = Estimator::MonteCarlo {
        samples: config.estimator.samples,
        seed,
    };
    match method {
        EstimatorMethod::MonteCarlo => mc,
        EstimatorMethod::Quadrature | EstimatorMethod::Duncan if reduced.dim() <= 2 => Estimator::Quadrature,
        EstimatorMethod::Quadrature | EstimatorMethod::Duncan => {
            warn!(
                "reduced dimension {} exceeds 2; optimizing with Monte Carlo ({} samples)",
                reduced.dim(),
                config.estimator.samples
            );
            mc
        }
    }
}

fn objective(loaded: &Loaded, scenario: &Scenario) -> Result<Objective, RunError> {
    let reduced = reduce_points(&scenario.kernel.whitened_means().map_err(numerical)?).map_err(numerical)?;
    let estimator = objective_estimator(loaded.method, &reduced, &loaded.config, loaded.seed);
    Objective::new(reduced, estimator).map_err(numerical)
}

fn optimizer_options(config: &Config) -> OptimizerOptions {
    OptimizerOptions {
        initial_step: config.optimizer.initial_step,
        min_step: config.optimizer.min_step,
        max_iter: config.optimizer.max_iter,
        tol: config.optimizer.tol,
    }
}

fn optimize(
    choice: AlgorithmChoice,
    objective: &Objective,
    scenario: &Scenario,
    opts: &OptimizerOptions,
) -> Result<CapacityResult, RunError> {
    match choice {
        AlgorithmChoice::Gradient => optimize_capacity_gradient(objective, &scenario.feasible, opts, None),
        AlgorithmChoice::BlahutArimoto => optimize_blahut_arimoto(objective, &scenario.feasible, opts, None),
    }
    .map_err(numerical)
}

#[derive(Serialize)]
struct EstimatorReport {
    requested: EstimatorMethod,
    optimized_with: Estimator,
    reduced_dimension: usize,
}

#[derive(Serialize)]
struct Baseline {
    algorithm: Algorithm,
    capacity: f64,
    weights: SourceWeights,
    kkt_gap: f64,
    converged: bool,
    /// Baseline capacity minus the reported capacity.
    difference: f64,
}

#[derive(Serialize)]
struct CrossCheck {
    method: MiMethod,
    value: f64,
    stderr: f64,
    count: usize,
}

#[derive(Serialize)]
struct SourceNoiseReport {
    min_eigenvalue: f64,
    trace: f64,
    max_asymmetry: f64,
    floored: bool,
}

#[derive(Serialize)]
struct CapacityReport {
    schema: &'static str,
    tool: Tool,
    scenario_hash: String,
    seed: u64,
    units: &'static str,
    estimator: EstimatorReport,
    /// Trace omitted here; it is written to `trace.csv`.
    result: CapacityResult,
    support: Vec<usize>,
    verification: OptimalityReport,
    baseline: Option<Baseline>,
    cross_check: Vec<CrossCheck>,
    upper_bound: f64,
    source_noise: Option<SourceNoiseReport>,
}

#[derive(Serialize, Default)]
struct Timing {
    build_seconds: f64,
    optimize_seconds: f64,
    cross_check_seconds: f64,
    total_seconds: f64,
}

fn cross_checks(
    loaded: &Loaded,
    scenario: &Scenario,
    objective: &Objective,
    w: &SourceWeights,
) -> Result<Vec<CrossCheck>, RunError> {
    let mut rows = Vec::new();
    let reduced = objective.reduced();
    if reduced.dim() <= 2 {
        let q = mi_quadrature(reduced, w).map_err(numerical)?;
        rows.push(CrossCheck {
            method: q.method,
            value: q.value,
            stderr: q.stderr,
            count: q.count,
        });
    }
    let mc = mi_monte_carlo(&scenario.kernel, w, loaded.config.estimator.samples, loaded.seed).map_err(numerical)?;
    rows.push(CrossCheck {
        method: mc.method,
        value: mc.value,
        stderr: mc.stderr,
        count: mc.count,
    });
    if scenario.source_noise.is_none() {
        let d = mi_duncan(
            &scenario.kernel,
            w,
            DuncanOptions::new(loaded.config.estimator.paths, loaded.seed),
        )
        .map_err(numerical)?;
        rows.push(CrossCheck {
            method: d.method,
            value: d.value,
            stderr: d.stderr,
            count: d.count,
        });
    }
    Ok(rows)
}

fn trace_csv(result: &CapacityResult) -> Csv {
    let mut csv = Csv::new(&["iter", "J", "kkt_gap", "step"]);
    for r in &result.trace {
        csv.row(&[r.iter.to_string(), float(r.value), float(r.kkt_gap), float(r.step)]);
    }
    csv
}

fn display(nats: f64, bits: bool) -> String {
    if bits {
        format!("{:.6} bits", nats / std::f64::consts::LN_2)
    } else {
        format!("{nats:.6} nats")
    }
}

pub fn capacity(opts: &RunOptions) -> Result<Outcome, RunError> {
    let start = Instant::now();
    let loaded = load(opts)?;
    let scenario = build(&loaded, opts, None, None)?;
    let objective = objective(&loaded, &scenario)?;
    let build_seconds = start.elapsed().as_secs_f64();

    let opt = optimizer_options(&loaded.config);
    let t = Instant::now();
    let mut result = optimize(loaded.config.optimizer.algorithm, &objective, &scenario, &opt)?;
    // the second optimizer is a quadrature-mode check; under Monte Carlo
    // the estimator cross-check table covers agreement instead
    let stochastic = matches!(objective.estimator(), Estimator::MonteCarlo { .. });
    if stochastic && loaded.config.optimizer.cross_check {
        info!("skipping the second optimizer under the Monte Carlo objective");
    }
    let baseline = if loaded.config.optimizer.cross_check && !stochastic {
        let other = match loaded.config.optimizer.algorithm {
            AlgorithmChoice::Gradient => AlgorithmChoice::BlahutArimoto,
            AlgorithmChoice::BlahutArimoto => AlgorithmChoice::Gradient,
        };
        let b = optimize(other, &objective, &scenario, &opt)?;
        Some(Baseline {
            difference: b.capacity - result.capacity,
            algorithm: b.algorithm,
            capacity: b.capacity,
            weights: b.weights,
            kkt_gap: b.kkt_gap,
            converged: b.converged,
        })
    } else {
        None
    };
    let optimize_seconds = t.elapsed().as_secs_f64();

    let t = Instant::now();
    let verification = verify_optimality(&objective, &result.weights, &scenario.feasible, None).map_err(numerical)?;
    let cross_check = cross_checks(&loaded, &scenario, &objective, &result.weights)?;
    let upper_bound = mi_upper_bound(&scenario.alphabet, &result.weights, &scenario.channel).map_err(numerical)?;
    let cross_check_seconds = t.elapsed().as_secs_f64();

    let trace = trace_csv(&result);
    result.trace.clear();
    let converged = result.converged;
    let capacity = result.capacity;
    let report = CapacityReport {
        schema: REPORT_SCHEMA,
        tool: TOOL,
        scenario_hash: loaded.hash.clone(),
        seed: loaded.seed,
        units: "nats",
        estimator: EstimatorReport {
            requested: loaded.method,
            optimized_with: objective.estimator(),
            reduced_dimension: objective.reduced().dim(),
        },
        support: support(&result.weights),
        result,
        verification,
        baseline,
        cross_check,
        upper_bound,
        source_noise: scenario.source_noise.as_ref().map(|q| SourceNoiseReport {
            min_eigenvalue: q.min_eigenvalue,
            trace: q.trace,
            max_asymmetry: q.max_asymmetry,
            floored: q.floored,
        }),
    };
    write(&opts.out, "result.json", &to_json(&report)?)?;
    write(&opts.out, "trace.csv", &trace.into_bytes())?;
    let timing = Timing {
        build_seconds,
        optimize_seconds,
        cross_check_seconds,
        total_seconds: start.elapsed().as_secs_f64(),
    };
    write(&opts.out, "timing.json", &to_json(&timing)?)?;

    println!("capacity: {}", display(capacity, opts.bits));
    println!("weights: {:?}", report.result.weights.as_slice());
    if converged {
        Ok(Outcome::Success)
    } else {
        Ok(Outcome::Flagged(format!(
            "optimizer did not converge (KKT gap {:e})",
            report.result.kkt_gap
        )))
    }
}

/// Where `verify` takes the weights under test from.
#[derive(Debug, Clone)]
pub enum WeightsSource {
    Explicit(Vec<f64>),
    /// A `result.json` written by `capacity`.
    Report(PathBuf),
}

#[derive(Serialize)]
struct VerifyReport {
    schema: &'static str,
    tool: Tool,
    scenario_hash: String,
    seed: u64,
    weights: SourceWeights,
    report: OptimalityReport,
}

fn read_weights(source: &WeightsSource) -> Result<Vec<f64>, RunError> {
    match source {
        WeightsSource::Explicit(w) => Ok(w.clone()),
        WeightsSource::Report(path) => {
            let text = fs::read_to_string(path)
                .map_err(|e| RunError::Config(format!("cannot read {}: {e}", path.display())))?;
            let value: serde_json::Value = serde_json::from_str(&text)
                .map_err(|e| RunError::Config(format!("{}: line {}: {e}", path.display(), e.line())))?;
            serde_json::from_value(value["result"]["weights"].clone())
                .map_err(|e| RunError::Config(format!("{}: no result.weights array: {e}", path.display())))
        }
    }
}

pub fn verify(opts: &RunOptions, weights: &WeightsSource) -> Result<Outcome, RunError> {
    let loaded = load(opts)?;
    let raw = read_weights(weights)?;
    let scenario = build(&loaded, opts, None, None)?;
    if raw.len() != scenario.alphabet.len() {
        return Err(RunError::Config(format!(
            "{} weights given for {} symbols",
            raw.len(),
            scenario.alphabet.len()
        )));
    }
    let w = SourceWeights::new(raw).map_err(|e| RunError::Config(e.to_string()))?;
    let objective = objective(&loaded, &scenario)?;
    let report = verify_optimality(&objective, &w, &scenario.feasible, None).map_err(|e| match e {
        CoreError::Infeasible(msg) => RunError::Config(msg),
        e => numerical(e),
    })?;
    let pass = report.pass;
    let violation = report.max_violation;
    let doc = VerifyReport {
        schema: REPORT_SCHEMA,
        tool: TOOL,
        scenario_hash: loaded.hash.clone(),
        seed: loaded.seed,
        weights: w,
        report,
    };
    write(&opts.out, "verify.json", &to_json(&doc)?)?;
    println!(
        "{}: max violation {}",
        if pass { "PASS" } else { "FAIL" },
        display(violation, opts.bits)
    );
    if pass {
        Ok(Outcome::Success)
    } else {
        Ok(Outcome::Flagged(format!("optimality violated by {violation:e} nats")))
    }
}

pub fn sweep(opts: &RunOptions) -> Result<Outcome, RunError> {
    let start = Instant::now();
    let loaded = load(opts)?;
    let sweep = loaded.config.sweep.clone().ok_or_else(|| {
        RunError::Config(format!("{}: the sweep subcommand needs a `sweep` section", opts.config.display()))
    })?;
    // assemble every point first so a bad value is rejected before output
    let scenarios: Vec<Scenario> = sweep
        .values
        .iter()
        .map(|v| match sweep.parameter {
            SweepParameter::Budget => build(&loaded, opts, Some(*v), None),
            SweepParameter::NoiseGain => build(&loaded, opts, None, Some(*v)),
        })
        .collect::<Result<_, _>>()?;
    let opt = optimizer_options(&loaded.config);
    let mut csv = Csv::new(&["param", "C", "stderr", "iters", "monotone"]);
    let mut previous: Option<CapacityResult> = None;
    let mut unconverged = 0;
    for (v, scenario) in sweep.values.iter().zip(&scenarios) {
        let objective = objective(&loaded, scenario)?;
        let r = optimize(loaded.config.optimizer.algorithm, &objective, scenario, &opt)?;
        // capacity can only grow with the budget and shrink with source noise
        let monotone = previous.as_ref().is_none_or(|p| {
            let slack = opt.tol.unwrap_or(1e-6).max(3.0 * (p.stderr + r.stderr));
            match sweep.parameter {
                SweepParameter::Budget => r.capacity >= p.capacity - slack,
                SweepParameter::NoiseGain => r.capacity <= p.capacity + slack,
            }
        });
        if !r.converged {
            unconverged += 1;
        }
        csv.row(&[
            float(*v),
            float(r.capacity),
            float(r.stderr),
            r.iterations.to_string(),
            monotone.to_string(),
        ]);
        println!("{} -> {}", float(*v), display(r.capacity, opts.bits));
        previous = Some(r);
    }
    write(&opts.out, "sweep.csv", &csv.into_bytes())?;
    let timing = Timing {
        total_seconds: start.elapsed().as_secs_f64(),
        ..Timing::default()
    };
    write(&opts.out, "timing.json", &to_json(&timing)?)?;
    if unconverged > 0 {
        Ok(Outcome::Flagged(format!("{unconverged} sweep points did not converge")))
    } else {
        Ok(Outcome::Success)
    }
}

/// Zero-mean Gaussian sample with covariance `cov` through its symmetric
/// square root (the source-noise covariance may be singular).
fn correlated_sample(cov: &DMatrix<f64>, seed: u64, stream: u64) -> Vec<f64> {
    let eig = SymmetricEigen::new(cov.clone());
    let root = &eig.eigenvectors * DMatrix::from_diagonal(&eig.eigenvalues.map(|v| v.max(0.0).sqrt()));
    let mut z = vec![0.0; cov.nrows()];
    fill_standard_normal(&mut stream_rng(seed, stream), &mut z);
    (root * nalgebra::DVector::from_vec(z)).iter().copied().collect()
}

pub fn simulate(opts: &RunOptions) -> Result<Outcome, RunError> {
    let loaded = load(opts)?;
    let scenario = build(&loaded, opts, None, None)?;
    let grid = scenario.grid;
    let dt = grid.dt();
    let m = scenario.channel.sensors();
    let mut output = Csv::new(&["symbol", "step", "t", "sensor", "drift", "increment"]);
    let mut field = Csv::new(&["symbol", "step", "t", "mode", "amplitude", "velocity"]);
    // one noise realization shared by all symbols
    let source = scenario
        .source_noise
        .as_ref()
        .map(|q| correlated_sample(&q.increments, loaded.seed, 1));
    for (k, x) in scenario.alphabet.symbols().iter().enumerate() {
        let drift = scenario.channel.apply(x).map_err(numerical)?;
        let mut dy = simulate_output(&scenario.channel, x, loaded.seed).map_err(numerical)?;
        if let Some(s) = &source {
            for (v, e) in dy.iter_mut().zip(s) {
                *v += e;
            }
        }
        for j in 0..grid.steps() {
            for s in 0..m {
                output.row(&[
                    k.to_string(),
                    (j + 1).to_string(),
                    float(grid.node(j + 1)),
                    s.to_string(),
                    float(drift[(s, j)]),
                    float(dy[(s, j)]),
                ]);
            }
        }
        let forcing = &scenario.input_coupling * x;
        let states = evolve_modes(&scenario.modes, &ModalState::zeros(scenario.modes.len()), &forcing, &grid)
            .map_err(numerical)?;
        for (j, state) in states.iter().enumerate() {
            for (mode, (a, v)) in state.amplitude.iter().zip(&state.velocity).enumerate() {
                field.row(&[
                    k.to_string(),
                    j.to_string(),
                    float(grid.node(j)),
                    mode.to_string(),
                    float(*a),
                    float(*v),
                ]);
            }
        }
    }
    write(&opts.out, "output.csv", &output.into_bytes())?;
    write(&opts.out, "field.csv", &field.into_bytes())?;
    println!(
        "simulated {} symbols over {} steps (dt {})",
        scenario.alphabet.len(),
        grid.steps(),
        float(dt)
    );
    Ok(Outcome::Success)
}
