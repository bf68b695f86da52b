//! Mutual information `J(α)` of a finite-support source through a Gaussian
//! channel kernel, in nats, by three independent routes:
//!
//! * tensor Gauss-Hermite quadrature on the reduced kernel (≤ 2 dims),
//! * Monte Carlo over the Gaussian mixture in whitened coordinates,
//! * the Duncan filtering identity `I = ½ E ∫ |F|² - |F̂|² dt` with an exact
//!   recursive Bayes posterior over symbols.
//!
//! All three agree on the marginal informations
//! `L_α(x_k) = KL(q_k ‖ Σ_j α_j q_j)` and `J(α) = Σ_k α_k L_α(x_k)`.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::channel::ChannelOperator;
use crate::error::{check_dim, Error, Result};
use crate::kernel::{ChannelKernel, NoiseCovariance, ReducedKernel, SignalAlphabet};
use crate::quadrature::standard_normal_rule;
use crate::rng::{fill_standard_normal, stream_rng, StreamRng};
use crate::weights::SourceWeights;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MiMethod {
    Quadrature,
    MonteCarlo,
    Duncan,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MiEstimate {
    /// nats
    pub value: f64,
    /// zero for quadrature
    pub stderr: f64,
    pub method: MiMethod,
    /// quadrature order per axis, samples, or paths
    pub count: usize,
    pub seed: Option<u64>,
}

const MAX_ORDER_1D: usize = 768;
const MAX_ORDER_2D: usize = 768;
const START_ORDER: usize = 24;
const ORDER_TOL: f64 = 1e-9;
const MC_BLOCK: usize = 1024;

fn check_weights(w: &SourceWeights, symbols: usize) -> Result<()> {
    check_dim("source weights", symbols, w.len())
}

/// `-log Σ_j exp(s_j)` over finite entries.
fn neg_log_sum_exp(s: &[f64]) -> f64 {
    let max = s.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let total: f64 = s.iter().map(|v| (v - max).exp()).sum();
    -(max + total.ln())
}

/// Per-symbol offsets `d_j = p_j - p_k`, `½|d_j|²` and `log α_j` restricted
/// to symbols with positive weight.
struct Offsets {
    diffs: Vec<Vec<f64>>,
    half_sq: Vec<f64>,
    log_w: Vec<f64>,
}

fn offsets(points: &[Vec<f64>], weights: &[f64], k: usize) -> Offsets {
    let mut o = Offsets {
        diffs: Vec::new(),
        half_sq: Vec::new(),
        log_w: Vec::new(),
    };
    for (j, p) in points.iter().enumerate() {
        if weights[j] <= 0.0 {
            continue;
        }
        let d: Vec<f64> = p.iter().zip(&points[k]).map(|(a, b)| a - b).collect();
        o.half_sq.push(0.5 * d.iter().map(|v| v * v).sum::<f64>());
        o.diffs.push(d);
        o.log_w.push(weights[j].ln());
    }
    o
}

/// `L_α(x_k)` for every symbol with a fixed Gauss-Hermite order per axis.
pub fn marginals_with_order(reduced: &ReducedKernel, w: &SourceWeights, order: usize) -> Result<Vec<f64>> {
    check_weights(w, reduced.symbols())?;
    let dim = reduced.dim();
    if dim > 2 {
        return Err(Error::Unsupported(format!(
            "quadrature handles reduced dimension <= 2, got {dim}; use the Monte Carlo estimator"
        )));
    }
    let weights = w.as_slice();
    let rule = standard_normal_rule(order);
    let mut scratch = Vec::with_capacity(reduced.symbols());
    let values = (0..reduced.symbols())
        .map(|k| {
            let o = offsets(reduced.points(), weights, k);
            let mut eval = |z: &[f64]| {
                scratch.clear();
                for ((d, h), lw) in o.diffs.iter().zip(&o.half_sq).zip(&o.log_w) {
                    let dot: f64 = d.iter().zip(z).map(|(a, b)| a * b).sum();
                    scratch.push(lw + dot - h);
                }
                neg_log_sum_exp(&scratch)
            };
            match dim {
                0 => eval(&[]),
                1 => rule.iter().map(|&(z, wz)| wz * eval(&[z])).sum(),
                _ => rule
                    .iter()
                    .map(|&(z1, w1)| w1 * rule.iter().map(|&(z2, w2)| w2 * eval(&[z1, z2])).sum::<f64>())
                    .sum(),
            }
        })
        .collect();
    Ok(values)
}

/// Smallest doubling of the Gauss-Hermite order (from 24) at which every
/// marginal information moves by less than `1e-9`, at the given weights.
pub fn converged_order(reduced: &ReducedKernel, w: &SourceWeights) -> Result<usize> {
    let cap = match reduced.dim() {
        0 => return Ok(START_ORDER),
        1 => MAX_ORDER_1D,
        _ => MAX_ORDER_2D,
    };
    let mut order = START_ORDER;
    let mut prev = marginals_with_order(reduced, w, order)?;
    while order * 2 <= cap {
        order *= 2;
        let next = marginals_with_order(reduced, w, order)?;
        let change = prev.iter().zip(&next).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        if change < ORDER_TOL {
            return Ok(order);
        }
        prev = next;
    }
    Err(Error::Numerical(format!(
        "Gauss-Hermite quadrature did not converge by order {order}"
    )))
}

/// Quadrature order valid across the simplex: the largest order needed at
/// the uniform weights and at weights skewed toward each symbol.
pub fn calibrate_order(reduced: &ReducedKernel) -> Result<usize> {
    let n = reduced.symbols();
    let mut order = converged_order(reduced, &SourceWeights::uniform(n))?;
    if n > 1 {
        for k in 0..n {
            let skewed: Vec<f64> = (0..n)
                .map(|j| if j == k { 0.9 } else { 0.1 / (n - 1) as f64 })
                .collect();
            order = order.max(converged_order(reduced, &SourceWeights::new(skewed)?)?);
        }
    }
    Ok(order)
}

/// `L_α(x_k)` by quadrature with the order chosen by doubling.
pub fn marginal_information_quadrature(reduced: &ReducedKernel, w: &SourceWeights) -> Result<Vec<f64>> {
    let order = converged_order(reduced, w)?;
    marginals_with_order(reduced, w, order)
}

/// `J(α)` by tensor Gauss-Hermite quadrature on the reduced kernel.
pub fn mi_quadrature(reduced: &ReducedKernel, w: &SourceWeights) -> Result<MiEstimate> {
    let order = converged_order(reduced, w)?;
    let l = marginals_with_order(reduced, w, order)?;
    Ok(MiEstimate {
        value: w.as_slice().iter().zip(&l).map(|(a, v)| a * v).sum(),
        stderr: 0.0,
        method: MiMethod::Quadrature,
        count: order,
        seed: None,
    })
}

fn sample_symbol(rng: &mut StreamRng, cdf: &[f64]) -> usize {
    let u: f64 = rng.random();
    cdf.iter().position(|c| u < *c).unwrap_or(cdf.len() - 1)
}

fn cumulative(weights: &[f64]) -> Vec<f64> {
    let mut acc = 0.0;
    let mut cdf: Vec<f64> = weights
        .iter()
        .map(|w| {
            acc += w;
            acc
        })
        .collect();
    // land exactly on 1 at the last positive weight
    if let Some(last) = weights.iter().rposition(|w| *w > 0.0) {
        for c in cdf.iter_mut().skip(last) {
            *c = 1.0;
        }
    }
    cdf
}

/// Log-likelihood ratio `log q_k(y) - log Σ_j α_j q_j(y)` at `y = p_k + z`.
fn log_ratio(points: &[DVector<f64>], log_w: &[Option<f64>], k: usize, z: &[f64], scratch: &mut Vec<f64>) -> f64 {
    scratch.clear();
    for (j, p) in points.iter().enumerate() {
        if let Some(lw) = log_w[j] {
            // -½|z + p_k - p_j|² + ½|z|²
            let mut dot = 0.0;
            let mut sq = 0.0;
            for ((pj, pk), zi) in p.iter().zip(points[k].iter()).zip(z) {
                let d = pj - pk;
                dot += d * zi;
                sq += d * d;
            }
            scratch.push(lw + dot - 0.5 * sq);
        }
    }
    neg_log_sum_exp(scratch)
}

fn mean_and_stderr(sum: f64, sum_sq: f64, n: usize) -> (f64, f64) {
    let nf = n as f64;
    let mean = sum / nf;
    if n < 2 {
        return (mean, 0.0);
    }
    let var = ((sum_sq - nf * mean * mean) / (nf - 1.0)).max(0.0);
    (mean, (var / nf).sqrt())
}

/// Block-parallel reduction in block order, so results depend on the seed
/// only, never on the number of worker threads.
fn blocked_sums<F>(total: usize, f: F) -> (f64, f64)
where
    F: Fn(usize, std::ops::Range<usize>) -> (f64, f64) + Sync,
{
    let blocks = total.div_ceil(MC_BLOCK);
    let partial: Vec<(f64, f64)> = (0..blocks)
        .into_par_iter()
        .map(|b| f(b, b * MC_BLOCK..((b + 1) * MC_BLOCK).min(total)))
        .collect();
    partial.iter().fold((0.0, 0.0), |acc, p| (acc.0 + p.0, acc.1 + p.1))
}

/// Monte Carlo `J(α)` for the mixture of `N(p_k, I)`.
pub fn mi_monte_carlo_points(
    points: &[DVector<f64>],
    w: &SourceWeights,
    samples: usize,
    seed: u64,
) -> Result<MiEstimate> {
    check_weights(w, points.len())?;
    if samples == 0 {
        return Err(Error::InvalidArgument("Monte Carlo needs at least one sample".into()));
    }
    let dim = points[0].len();
    let cdf = cumulative(w.as_slice());
    let log_w: Vec<Option<f64>> = w.as_slice().iter().map(|a| (*a > 0.0).then(|| a.ln())).collect();
    let (sum, sum_sq) = blocked_sums(samples, |block, range| {
        let mut rng = stream_rng(seed, block as u64);
        let mut z = vec![0.0; dim];
        let mut scratch = Vec::with_capacity(points.len());
        let (mut s, mut s2) = (0.0, 0.0);
        for _ in range {
            let k = sample_symbol(&mut rng, &cdf);
            fill_standard_normal(&mut rng, &mut z);
            let v = log_ratio(points, &log_w, k, &z, &mut scratch);
            s += v;
            s2 += v * v;
        }
        (s, s2)
    });
    let (value, stderr) = mean_and_stderr(sum, sum_sq, samples);
    Ok(MiEstimate {
        value,
        stderr,
        method: MiMethod::MonteCarlo,
        count: samples,
        seed: Some(seed),
    })
}

/// Monte Carlo `J(α)` on the full (unreduced) kernel in whitened coordinates.
pub fn mi_monte_carlo(kernel: &ChannelKernel, w: &SourceWeights, samples: usize, seed: u64) -> Result<MiEstimate> {
    mi_monte_carlo_points(&kernel.whitened_means()?, w, samples, seed)
}

/// Monte Carlo `L_α(x_k)` with `samples` draws per symbol; the same
/// standard-normal draws are reused for every symbol and every `α`.
pub fn marginal_information_monte_carlo(
    points: &[DVector<f64>],
    w: &SourceWeights,
    samples: usize,
    seed: u64,
) -> Result<(Vec<f64>, Vec<f64>)> {
    check_weights(w, points.len())?;
    if samples == 0 {
        return Err(Error::InvalidArgument("Monte Carlo needs at least one sample".into()));
    }
    let dim = points[0].len();
    let log_w: Vec<Option<f64>> = w.as_slice().iter().map(|a| (*a > 0.0).then(|| a.ln())).collect();
    let mut values = Vec::with_capacity(points.len());
    let mut errors = Vec::with_capacity(points.len());
    for k in 0..points.len() {
        let (sum, sum_sq) = blocked_sums(samples, |block, range| {
            let mut rng = stream_rng(seed, block as u64);
            let mut z = vec![0.0; dim];
            let mut scratch = Vec::with_capacity(points.len());
            let (mut s, mut s2) = (0.0, 0.0);
            for _ in range {
                fill_standard_normal(&mut rng, &mut z);
                let v = log_ratio(points, &log_w, k, &z, &mut scratch);
                s += v;
                s2 += v * v;
            }
            (s, s2)
        });
        let (mean, se) = mean_and_stderr(sum, sum_sq, samples);
        values.push(mean);
        errors.push(se);
    }
    Ok((values, errors))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DuncanOptions {
    pub paths: usize,
    pub seed: u64,
    /// Filter updates per grid step. The drift is constant on each step, so
    /// refining only shrinks the time-discretization bias of the filter.
    pub substeps: usize,
}

impl DuncanOptions {
    pub fn new(paths: usize, seed: u64) -> Self {
        Self {
            paths,
            seed,
            substeps: 16,
        }
    }
}

/// `J(α) = ½ E Σ_j (|F_j(x)|² - |F̂_j|²) Δt` with `F̂` the causal posterior
/// mean of the drift. Receiver-noise-only kernels.
pub fn mi_duncan(kernel: &ChannelKernel, w: &SourceWeights, opts: DuncanOptions) -> Result<MiEstimate> {
    check_weights(w, kernel.symbols())?;
    if !matches!(kernel.noise(), NoiseCovariance::Receiver) {
        return Err(Error::Unsupported(
            "the Duncan estimator requires receiver-noise-only kernels; use quadrature or Monte Carlo".into(),
        ));
    }
    if opts.paths == 0 || opts.substeps == 0 {
        return Err(Error::InvalidArgument("Duncan estimator needs paths >= 1 and substeps >= 1".into()));
    }
    let m = kernel.sensors();
    let steps = kernel.grid().steps();
    let h = kernel.grid().dt() / opts.substeps as f64;
    let sqrt_h = h.sqrt();
    let weights = w.as_slice();
    let active: Vec<usize> = (0..weights.len()).filter(|j| weights[*j] > 0.0).collect();
    let drift = kernel.drift_means();
    let sq: Vec<Vec<f64>> = active
        .iter()
        .map(|&j| (0..steps).map(|s| drift[j].rows(s * m, m).norm_squared()).collect())
        .collect();
    let cdf = cumulative(weights);

    let per_path = |path: usize| {
        let mut rng = stream_rng(opts.seed, path as u64);
        let k = sample_symbol(&mut rng, &cdf);
        let mut log_post: Vec<f64> = active.iter().map(|j| weights[*j].ln()).collect();
        let mut post = vec![0.0; active.len()];
        let mut noise = vec![0.0; m];
        let mut dy = vec![0.0; m];
        let mut fhat = vec![0.0; m];
        let mut acc = 0.0;
        for s in 0..steps {
            let fk = drift[k].rows(s * m, m);
            let fk_sq = fk.norm_squared();
            for _ in 0..opts.substeps {
                let max = log_post.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let mut total = 0.0;
                for (p, l) in post.iter_mut().zip(&log_post) {
                    *p = (l - max).exp();
                    total += *p;
                }
                fhat.iter_mut().for_each(|v| *v = 0.0);
                for (i, &j) in active.iter().enumerate() {
                    let pi = post[i] / total;
                    for (r, f) in fhat.iter_mut().enumerate() {
                        *f += pi * drift[j][s * m + r];
                    }
                }
                acc += 0.5 * (fk_sq - fhat.iter().map(|v| v * v).sum::<f64>()) * h;
                fill_standard_normal(&mut rng, &mut noise);
                for r in 0..m {
                    dy[r] = fk[r] * h + sqrt_h * noise[r];
                }
                for (i, &j) in active.iter().enumerate() {
                    let inner: f64 = (0..m).map(|r| drift[j][s * m + r] * dy[r]).sum();
                    log_post[i] += inner - 0.5 * sq[i][s] * h;
                }
            }
        }
        acc
    };
    let values: Vec<f64> = (0..opts.paths).into_par_iter().map(per_path).collect();
    let (sum, sum_sq) = values.iter().fold((0.0, 0.0), |a, v| (a.0 + v, a.1 + v * v));
    let (value, stderr) = mean_and_stderr(sum, sum_sq, opts.paths);
    Ok(MiEstimate {
        value,
        stderr,
        method: MiMethod::Duncan,
        count: opts.paths,
        seed: Some(opts.seed),
    })
}

/// Largest singular value by power iteration on the smaller Gram matrix,
/// stopped when the eigenvalue estimate moves by less than `1e-12` relative.
pub fn operator_norm(a: &DMatrix<f64>) -> f64 {
    if a.is_empty() || a.amax() == 0.0 {
        return 0.0;
    }
    let gram = if a.nrows() <= a.ncols() {
        a * a.transpose()
    } else {
        a.transpose() * a
    };
    let n = gram.nrows();
    // deterministic start with components along every axis
    let mut v = DVector::from_fn(n, |i, _| 1.0 + (i as f64 * 0.618_033_988_75).fract());
    v /= v.norm();
    let mut lambda = 0.0;
    for _ in 0..10_000 {
        let next = &gram * &v;
        let norm = next.norm();
        if norm == 0.0 {
            return 0.0;
        }
        let change = (norm - lambda).abs();
        lambda = norm;
        v = next / norm;
        if change <= 1e-12 * lambda {
            break;
        }
    }
    lambda.sqrt()
}

/// Pointwise-in-time gain `K` with `|F_t(x)|² ≤ K² ‖x‖²_{L₂(0,t)}`:
/// the largest row-block norm of the channel matrix divided by `√Δt`.
pub fn pointwise_gain(channel: &ChannelOperator) -> f64 {
    let m = channel.sensors();
    let dt = channel.grid().dt();
    (0..channel.grid().steps())
        .map(|j| {
            let cols = (j + 1) * channel.inputs();
            operator_norm(&channel.matrix().view((j * m, 0), (m, cols)).into_owned())
        })
        .fold(0.0, f64::max)
        / dt.sqrt()
}

/// `J(α) ≤ (K² T / 2) Σ_k α_k e_k`.
pub fn mi_upper_bound(alphabet: &SignalAlphabet, w: &SourceWeights, channel: &ChannelOperator) -> Result<f64> {
    check_weights(w, alphabet.len())?;
    let gain = pointwise_gain(channel);
    let second_moment: f64 = w.as_slice().iter().zip(alphabet.energies()).map(|(a, e)| a * e).sum();
    Ok(0.5 * gain * gain * channel.grid().horizon() * second_moment)
}
