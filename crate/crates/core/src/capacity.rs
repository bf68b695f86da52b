//! Capacity-achieving source weights under a power budget.
//!
//! The objective is `J(α)` over `{α ≥ 0, Σα = 1, Σ α_k e_k ≤ budget}`. Its
//! gradient along the simplex is the vector of marginal informations
//! `L_α(x_k)` (the true partial derivatives are `L_α(x_k) - 1`, and the
//! constant drops out along every direction with `Σ d_k = 0`). Optimality
//! holds iff `max_β Σ_k (β_k - α_k) L_α(x_k) ≤ 0` over the feasible set,
//! which is linear in `β` and therefore checked on the polytope's vertices.

use log::{debug, warn};
use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::kernel::{reduce_points, ChannelKernel, ReducedKernel};
use crate::mutual_info::{calibrate_order, marginal_information_monte_carlo, marginals_with_order};
pub use crate::weights::SourceWeights;

const FEASIBILITY_TOL: f64 = 1e-10;
const SUPPORT_TOL: f64 = 1e-8;

/// Simplex intersected with an optional linear power constraint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeasibleSet {
    energies: Vec<f64>,
    budget: Option<f64>,
}

impl FeasibleSet {
    pub fn new(energies: Vec<f64>, budget: Option<f64>) -> Result<Self> {
        if energies.is_empty() {
            return Err(Error::InvalidArgument("feasible set needs at least one symbol".into()));
        }
        if energies.iter().any(|e| !(e.is_finite() && *e >= 0.0)) {
            return Err(Error::InvalidArgument("symbol energies must be finite and >= 0".into()));
        }
        if let Some(b) = budget {
            if !b.is_finite() || b < 0.0 {
                return Err(Error::InvalidArgument(format!("power budget must be >= 0, got {b}")));
            }
            let min = energies.iter().copied().fold(f64::INFINITY, f64::min);
            if min > b * (1.0 + 1e-12) {
                return Err(Error::Infeasible(format!(
                    "every symbol exceeds the power budget (min energy {min}, budget {b})"
                )));
            }
        }
        Ok(Self { energies, budget })
    }

    pub fn unconstrained(symbols: usize) -> Self {
        Self {
            energies: vec![0.0; symbols],
            budget: None,
        }
    }

    pub fn energies(&self) -> &[f64] {
        &self.energies
    }

    pub fn budget(&self) -> Option<f64> {
        self.budget
    }

    pub fn len(&self) -> usize {
        self.energies.len()
    }

    pub fn is_empty(&self) -> bool {
        self.energies.is_empty()
    }

    pub fn power(&self, w: &[f64]) -> f64 {
        w.iter().zip(&self.energies).map(|(a, e)| a * e).sum()
    }

    pub fn contains(&self, w: &[f64], tol: f64) -> bool {
        w.len() == self.len()
            && w.iter().all(|a| *a >= -tol)
            && (w.iter().sum::<f64>() - 1.0).abs() <= tol
            && self.budget.is_none_or(|b| self.power(w) <= b + tol * b.max(1.0))
    }

    /// Vertices of the feasible polytope: admissible unit vectors and the
    /// points where an edge between a cheap and an expensive symbol meets
    /// the budget.
    pub fn vertices(&self) -> Vec<Vec<f64>> {
        let n = self.len();
        let unit = |k: usize| {
            let mut v = vec![0.0; n];
            v[k] = 1.0;
            v
        };
        let Some(b) = self.budget else {
            return (0..n).map(unit).collect();
        };
        let e = &self.energies;
        let mut out: Vec<Vec<f64>> = (0..n).filter(|k| e[*k] <= b).map(unit).collect();
        for i in 0..n {
            for j in 0..n {
                if e[i] < b && e[j] > b {
                    let theta = (e[j] - b) / (e[j] - e[i]);
                    let mut v = vec![0.0; n];
                    v[i] = theta;
                    v[j] = 1.0 - theta;
                    out.push(v);
                }
            }
        }
        out
    }

    /// `max_β ⟨β - α, gradient⟩` over the vertices, with the maximizing vertex.
    pub fn linear_gap(&self, gradient: &[f64], w: &[f64]) -> (f64, Vec<f64>) {
        let at: f64 = gradient.iter().zip(w).map(|(g, a)| g * a).sum();
        self.vertices()
            .into_iter()
            .map(|v| (v.iter().zip(gradient).map(|(a, g)| a * g).sum::<f64>() - at, v))
            .fold((f64::NEG_INFINITY, Vec::new()), |best, cand| if cand.0 > best.0 { cand } else { best })
    }
}

/// Euclidean projection onto the probability simplex.
fn project_simplex(v: &[f64]) -> Vec<f64> {
    let mut u = v.to_vec();
    u.sort_by(|a, b| b.total_cmp(a));
    let mut cumsum = 0.0;
    let mut theta = 0.0;
    for (i, ui) in u.iter().enumerate() {
        cumsum += ui;
        let t = (cumsum - 1.0) / (i + 1) as f64;
        if ui - t > 0.0 {
            theta = t;
        }
    }
    v.iter().map(|x| (x - theta).max(0.0)).collect()
}

/// Euclidean projection onto the feasible set: a simplex projection of
/// `raw - λ e`, with the power multiplier `λ ≥ 0` found by bisection.
pub fn project_feasible(raw: &[f64], feasible: &FeasibleSet) -> Result<SourceWeights> {
    check_dim("projection input", feasible.len(), raw.len())?;
    if raw.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("projection input must be finite".into()));
    }
    let free = project_simplex(raw);
    let Some(budget) = feasible.budget else {
        return Ok(SourceWeights::from_raw_unchecked(free));
    };
    if feasible.power(&free) <= budget {
        return Ok(SourceWeights::from_raw_unchecked(free));
    }
    let e = feasible.energies();
    let at = |lambda: f64| {
        let shifted: Vec<f64> = raw.iter().zip(e).map(|(r, ek)| r - lambda * ek).collect();
        project_simplex(&shifted)
    };
    let mut hi = 1.0;
    while feasible.power(&at(hi)) > budget {
        hi *= 2.0;
        if hi > 1e300 {
            return Err(Error::Infeasible("power constraint cannot be met".into()));
        }
    }
    let mut lo = 0.0;
    for _ in 0..400 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if feasible.power(&at(mid)) > budget {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let projected = at(hi);
    let slack = budget - feasible.power(&projected);
    if slack > FEASIBILITY_TOL * budget.max(1.0) {
        warn!("projection leaves power slack {slack:.3e} with an active multiplier");
    }
    Ok(SourceWeights::from_raw_unchecked(projected))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "method")]
pub enum Estimator {
    Quadrature,
    /// Common random numbers: the same draws at every evaluation.
    MonteCarlo { samples: usize, seed: u64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub value: f64,
    pub stderr: f64,
    pub marginals: Vec<f64>,
    pub marginal_stderr: Vec<f64>,
}

/// `J` and `L_α` on a fixed kernel with a fixed estimator.
#[derive(Debug, Clone)]
pub struct Objective {
    reduced: ReducedKernel,
    points: Vec<DVector<f64>>,
    estimator: Estimator,
    order: usize,
}

impl Objective {
    pub fn new(reduced: ReducedKernel, estimator: Estimator) -> Result<Self> {
        let order = match estimator {
            Estimator::Quadrature => calibrate_order(&reduced)?,
            Estimator::MonteCarlo { samples, .. } => {
                if samples == 0 {
                    return Err(Error::InvalidArgument("Monte Carlo needs at least one sample".into()));
                }
                0
            }
        };
        let points = reduced.points().iter().map(|p| DVector::from_column_slice(p)).collect();
        Ok(Self {
            reduced,
            points,
            estimator,
            order,
        })
    }

    pub fn from_kernel(kernel: &ChannelKernel, estimator: Estimator) -> Result<Self> {
        Self::new(reduce_points(&kernel.whitened_means()?)?, estimator)
    }

    pub fn reduced(&self) -> &ReducedKernel {
        &self.reduced
    }

    pub fn estimator(&self) -> Estimator {
        self.estimator
    }

    pub fn symbols(&self) -> usize {
        self.reduced.symbols()
    }

    pub fn evaluate(&self, w: &SourceWeights) -> Result<Evaluation> {
        let (marginals, marginal_stderr) = match self.estimator {
            Estimator::Quadrature => (
                marginals_with_order(&self.reduced, w, self.order)?,
                vec![0.0; self.symbols()],
            ),
            Estimator::MonteCarlo { samples, seed } => {
                marginal_information_monte_carlo(&self.points, w, samples, seed)?
            }
        };
        let a = w.as_slice();
        Ok(Evaluation {
            value: a.iter().zip(&marginals).map(|(x, l)| x * l).sum(),
            stderr: a
                .iter()
                .zip(&marginal_stderr)
                .map(|(x, s)| x * x * s * s)
                .sum::<f64>()
                .sqrt(),
            marginals,
            marginal_stderr,
        })
    }

    pub fn value(&self, w: &SourceWeights) -> Result<f64> {
        Ok(self.evaluate(w)?.value)
    }
}

/// `L_α(x_k)` for every symbol.
pub fn marginal_information(objective: &Objective, w: &SourceWeights) -> Result<Vec<f64>> {
    Ok(objective.evaluate(w)?.marginals)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimizerOptions {
    pub initial_step: f64,
    pub min_step: f64,
    pub max_iter: usize,
    /// KKT-gap tolerance; defaults to `1e-6` for quadrature and to three
    /// standard errors for Monte Carlo.
    pub tol: Option<f64>,
}

impl Default for OptimizerOptions {
    fn default() -> Self {
        Self {
            initial_step: 0.5,
            min_step: 1e-8,
            max_iter: 10_000,
            tol: None,
        }
    }
}

impl OptimizerOptions {
    fn tolerance(&self, eval: &Evaluation) -> f64 {
        self.tol.unwrap_or(if eval.stderr > 0.0 { 3.0 * eval.stderr } else { 1e-6 }).max(0.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iter: usize,
    pub value: f64,
    pub kkt_gap: f64,
    /// Accepted step size (gradient) or power multiplier (Blahut-Arimoto).
    pub step: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    ProjectedGradient,
    BlahutArimoto,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CapacityResult {
    pub weights: SourceWeights,
    /// nats
    pub capacity: f64,
    pub stderr: f64,
    pub marginals: Vec<f64>,
    pub kkt_gap: f64,
    pub iterations: usize,
    pub converged: bool,
    pub algorithm: Algorithm,
    pub estimator: Estimator,
    /// False when two symbols share a mean: the capacity is unique but the
    /// weights split between duplicates are not.
    pub unique_weights: bool,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub trace: Vec<IterationRecord>,
}

fn default_start(feasible: &FeasibleSet) -> Result<SourceWeights> {
    project_feasible(&vec![1.0 / feasible.len() as f64; feasible.len()], feasible)
}

/// Projected gradient ascent `α ← P(α + ε L_α)` with backtracking on `ε`.
pub fn optimize_capacity_gradient(
    objective: &Objective,
    feasible: &FeasibleSet,
    opts: &OptimizerOptions,
    start: Option<&SourceWeights>,
) -> Result<CapacityResult> {
    check_dim("feasible set symbols", objective.symbols(), feasible.len())?;
    let mut w = match start {
        Some(s) => project_feasible(s.as_slice(), feasible)?,
        None => default_start(feasible)?,
    };
    let mut eval = objective.evaluate(&w)?;
    let mut trace = Vec::new();
    let mut converged = false;
    let mut iterations = 0;
    let mut last_step = 0.0;
    loop {
        let tol = opts.tolerance(&eval);
        let (gap, _) = feasible.linear_gap(&eval.marginals, w.as_slice());
        let gap = gap.max(0.0);
        trace.push(IterationRecord {
            iter: iterations,
            value: eval.value,
            kkt_gap: gap,
            step: last_step,
        });
        if gap <= tol {
            converged = true;
            break;
        }
        if iterations >= opts.max_iter {
            break;
        }
        let slack = if eval.stderr > 0.0 { 3.0 * eval.stderr } else { 1e-12 };
        let mut step = opts.initial_step;
        let mut accepted = None;
        while step >= opts.min_step {
            let raw: Vec<f64> = w.as_slice().iter().zip(&eval.marginals).map(|(a, l)| a + step * l).collect();
            let cand = project_feasible(&raw, feasible)?;
            let cand_eval = objective.evaluate(&cand)?;
            if cand_eval.value >= eval.value - slack {
                accepted = Some((cand, cand_eval));
                break;
            }
            step *= 0.5;
        }
        iterations += 1;
        match accepted {
            Some((cand, cand_eval)) => {
                w = cand;
                eval = cand_eval;
                last_step = step;
            }
            None => {
                warn!("step size fell below {:e} without ascent", opts.min_step);
                break;
            }
        }
    }
    let kkt_gap = trace.last().map(|r| r.kkt_gap).unwrap_or(f64::INFINITY);
    if !converged {
        warn!("gradient optimizer stopped after {iterations} iterations with KKT gap {kkt_gap:.3e}");
    }
    Ok(CapacityResult {
        weights: w,
        capacity: eval.value,
        stderr: eval.stderr,
        marginals: eval.marginals,
        kkt_gap,
        iterations,
        converged,
        algorithm: Algorithm::ProjectedGradient,
        estimator: objective.estimator(),
        unique_weights: objective.reduced().distinct(),
        trace,
    })
}

struct TiltedRun {
    weights: SourceWeights,
    eval: Evaluation,
    iterations: usize,
}

/// Blahut-Arimoto for `max J(α) - s Σ α_k e_k` over the simplex.
fn blahut_arimoto_tilted(
    objective: &Objective,
    energies: &[f64],
    tilt: f64,
    start: SourceWeights,
    tol: f64,
    max_iter: usize,
) -> Result<TiltedRun> {
    let mut w = start;
    let mut eval = objective.evaluate(&w)?;
    let mut iterations = 0;
    while iterations < max_iter {
        let penalized: Vec<f64> = eval.marginals.iter().zip(energies).map(|(l, e)| l - tilt * e).collect();
        let mean: f64 = penalized.iter().zip(w.as_slice()).map(|(p, a)| p * a).sum();
        let max = penalized.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if max - mean <= tol {
            break;
        }
        let mut next: Vec<f64> = w.as_slice().iter().zip(&penalized).map(|(a, p)| a * (p - max).exp()).collect();
        let total: f64 = next.iter().sum();
        next.iter_mut().for_each(|v| *v /= total);
        w = SourceWeights::from_raw_unchecked(next);
        eval = objective.evaluate(&w)?;
        iterations += 1;
    }
    debug!("Blahut-Arimoto at tilt {tilt:.6e}: {iterations} iterations, value {:.9e}", eval.value);
    Ok(TiltedRun {
        weights: w,
        eval,
        iterations,
    })
}

/// Blahut-Arimoto cross-check: multiplicative updates
/// `α_k ∝ α_k exp(L_α(x_k) - s e_k)` with the power multiplier `s` set by
/// outer bisection. Starts from uniform weights unless a start without
/// zero entries is supplied.
pub fn optimize_blahut_arimoto(
    objective: &Objective,
    feasible: &FeasibleSet,
    opts: &OptimizerOptions,
    start: Option<&SourceWeights>,
) -> Result<CapacityResult> {
    check_dim("feasible set symbols", objective.symbols(), feasible.len())?;
    let n = feasible.len();
    let start = match start {
        Some(s) if s.as_slice().iter().all(|a| *a > 0.0) => s.clone(),
        Some(_) => {
            warn!("Blahut-Arimoto start has zero weights, which are absorbing; using uniform weights");
            SourceWeights::uniform(n)
        }
        None => SourceWeights::uniform(n),
    };
    let probe = objective.evaluate(&start)?;
    let tol = opts.tolerance(&probe);
    let inner_tol = 0.1 * tol;
    let energies = feasible.energies();
    let mut total_iters = 0;

    let mut run = blahut_arimoto_tilted(objective, energies, 0.0, start.clone(), inner_tol, opts.max_iter)?;
    total_iters += run.iterations;
    let mut trace = vec![IterationRecord {
        iter: 0,
        value: run.eval.value,
        kkt_gap: feasible.linear_gap(&run.eval.marginals, run.weights.as_slice()).0.max(0.0),
        step: 0.0,
    }];

    if let Some(budget) = feasible.budget() {
        if feasible.power(run.weights.as_slice()) > budget {
            // the multiplier is measured in nats per unit of energy spread
            let (emin, emax) = energies
                .iter()
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), e| (a.min(*e), b.max(*e)));
            let unit = 1.0 / (emax - emin);
            // near-vertex weights take many multiplicative steps to leave,
            // so warm starts are pulled halfway back to the start
            let warm = |r: &TiltedRun| r.weights.mix(&start, 0.5);
            let excess = |r: &TiltedRun| feasible.power(r.weights.as_slice()) - budget;
            let mut lo = 0.0;
            let mut f_lo = excess(&run);
            let mut hi = unit;
            let mut hi_run = loop {
                let r = blahut_arimoto_tilted(objective, energies, hi, start.clone(), inner_tol, opts.max_iter)?;
                total_iters += r.iterations;
                if excess(&r) <= 0.0 || hi > 1e6 * unit {
                    break r;
                }
                lo = hi;
                f_lo = excess(&r);
                hi *= 2.0;
            };
            let mut f_hi = excess(&hi_run);
            // Illinois regula falsi on the power excess, which decreases in the multiplier
            let mut last_side = 0i8;
            for outer in 1..=200 {
                // stop once the feasible side is optimal or the bracket is negligible
                let gap = feasible.linear_gap(&hi_run.eval.marginals, hi_run.weights.as_slice()).0;
                if gap <= tol || hi - lo <= 1e-12 * hi {
                    break;
                }
                let secant = hi - f_hi * (hi - lo) / (f_hi - f_lo);
                let mid = if secant > lo && secant < hi { secant } else { 0.5 * (lo + hi) };
                let r = blahut_arimoto_tilted(objective, energies, mid, warm(&hi_run), inner_tol, opts.max_iter)?;
                total_iters += r.iterations;
                trace.push(IterationRecord {
                    iter: outer,
                    value: r.eval.value,
                    kkt_gap: feasible.linear_gap(&r.eval.marginals, r.weights.as_slice()).0.max(0.0),
                    step: mid,
                });
                let f = excess(&r);
                if f > 0.0 {
                    lo = mid;
                    f_lo = f;
                    if last_side == 1 {
                        f_hi *= 0.5;
                    }
                    last_side = 1;
                } else {
                    hi = mid;
                    f_hi = f;
                    hi_run = r;
                    if last_side == -1 {
                        f_lo *= 0.5;
                    }
                    last_side = -1;
                }
            }
            run = hi_run;
            if !feasible.contains(run.weights.as_slice(), FEASIBILITY_TOL) {
                let w = project_feasible(run.weights.as_slice(), feasible)?;
                run.eval = objective.evaluate(&w)?;
                run.weights = w;
            }
        }
    }

    let (gap, _) = feasible.linear_gap(&run.eval.marginals, run.weights.as_slice());
    let gap = gap.max(0.0);
    trace.push(IterationRecord {
        iter: trace.len(),
        value: run.eval.value,
        kkt_gap: gap,
        step: 0.0,
    });
    let converged = gap <= tol;
    if !converged {
        warn!("Blahut-Arimoto stopped with KKT gap {gap:.3e} (tolerance {tol:.3e})");
    }
    Ok(CapacityResult {
        weights: run.weights,
        capacity: run.eval.value,
        stderr: run.eval.stderr,
        marginals: run.eval.marginals,
        kkt_gap: gap,
        iterations: total_iters,
        converged,
        algorithm: Algorithm::BlahutArimoto,
        estimator: objective.estimator(),
        unique_weights: objective.reduced().distinct(),
        trace,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimalityReport {
    /// `max_β Σ_k (β_k - α_k) L_α(x_k)` over feasible vertices `β`.
    pub max_violation: f64,
    pub worst_vertex: Vec<f64>,
    pub tolerance: f64,
    pub pass: bool,
    pub marginals: Vec<f64>,
    pub value: f64,
    pub stderr: f64,
}

/// Checks the first-order optimality inequality at `w`; `tol = None` uses
/// `1e-5` for quadrature and three standard errors for Monte Carlo.
pub fn verify_optimality(
    objective: &Objective,
    w: &SourceWeights,
    feasible: &FeasibleSet,
    tol: Option<f64>,
) -> Result<OptimalityReport> {
    check_dim("feasible set symbols", objective.symbols(), feasible.len())?;
    if !feasible.contains(w.as_slice(), FEASIBILITY_TOL) {
        return Err(Error::Infeasible("weights under test are not feasible".into()));
    }
    let eval = objective.evaluate(w)?;
    let tolerance = tol.unwrap_or(if eval.stderr > 0.0 { 3.0 * eval.stderr } else { 1e-5 });
    let (max_violation, worst_vertex) = feasible.linear_gap(&eval.marginals, w.as_slice());
    Ok(OptimalityReport {
        max_violation,
        worst_vertex,
        tolerance,
        pass: max_violation <= tolerance,
        marginals: eval.marginals,
        value: eval.value,
        stderr: eval.stderr,
    })
}

/// Symbols carrying weight above the support threshold.
pub fn support(w: &SourceWeights) -> Vec<usize> {
    w.as_slice()
        .iter()
        .enumerate()
        .filter(|(_, a)| **a > SUPPORT_TOL)
        .map(|(k, _)| k)
        .collect()
}
