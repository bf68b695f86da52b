//! Conditional Gaussian laws of the output increments given each input
//! symbol, with optional source-noise covariance, plus the whitened
//! span reduction used by the mutual-information estimators.

use log::warn;
use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::channel::ChannelOperator;
use crate::error::{check_dim, Error, Result};
use crate::grid::TimeGrid;
use crate::modes::ModeSet;
use crate::quadrature;

/// Finite set of input signals, each an n×N sample matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct SignalAlphabet {
    symbols: Vec<DMatrix<f64>>,
    grid: TimeGrid,
}

impl SignalAlphabet {
    pub fn new(symbols: Vec<DMatrix<f64>>, grid: TimeGrid) -> Result<Self> {
        let first = symbols
            .first()
            .ok_or_else(|| Error::InvalidArgument("alphabet needs at least one symbol".into()))?;
        let shape = first.shape();
        check_dim("symbol time samples", grid.steps(), shape.1)?;
        for (k, s) in symbols.iter().enumerate() {
            check_dim("symbol input channels", shape.0, s.nrows())?;
            check_dim("symbol time samples", shape.1, s.ncols())?;
            if s.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidArgument(format!("symbol {k} has non-finite samples")));
            }
            if symbols[..k].iter().any(|other| other == s) {
                return Err(Error::InvalidArgument(format!("symbol {k} duplicates an earlier symbol")));
            }
        }
        Ok(Self { symbols, grid })
    }

    pub fn symbols(&self) -> &[DMatrix<f64>] {
        &self.symbols
    }

    pub fn len(&self) -> usize {
        self.symbols.len()
    }

    pub fn is_empty(&self) -> bool {
        self.symbols.is_empty()
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    /// `e_k = Σ x_k² Δt`.
    pub fn energies(&self) -> Vec<f64> {
        let dt = self.grid.dt();
        self.symbols.iter().map(|s| s.norm_squared() * dt).collect()
    }
}

/// Stacked drift means `m_k = M vec(x_k)`.
pub fn kernel_means(channel: &ChannelOperator, alphabet: &SignalAlphabet) -> Result<Vec<DVector<f64>>> {
    alphabet.symbols().iter().map(|x| channel.apply_stacked(x)).collect()
}

/// Increment covariance of the receiver Wiener noise, `Δt I_{mN}`.
pub fn noise_covariance_q1(grid: &TimeGrid, sensors: usize) -> DMatrix<f64> {
    DMatrix::identity(sensors * grid.steps(), sensors * grid.steps()) * grid.dt()
}

/// Maps an increment covariance (m-blocks, step-major) to the covariance of
/// the cumulative sums at `t_1..t_N`.
pub fn cumulative_covariance(increments: &DMatrix<f64>, sensors: usize) -> DMatrix<f64> {
    let n = increments.nrows();
    let s = DMatrix::from_fn(n, n, |r, c| {
        if c % sensors == r % sensors && c / sensors <= r / sensors {
            1.0
        } else {
            0.0
        }
    });
    &s * increments * s.transpose()
}

/// Source noise `σ_k dW⁰_k` driving each mode, with `Q⁰ = diag(variances)`.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSpec {
    pub gains: Vec<f64>,
    pub variances: Vec<f64>,
}

impl NoiseSpec {
    pub fn uniform(modes: usize, gain: f64) -> Self {
        Self {
            gains: vec![gain; modes],
            variances: vec![1.0; modes],
        }
    }

    fn validate(&self, modes: usize) -> Result<()> {
        check_dim("noise gains", modes, self.gains.len())?;
        check_dim("noise variances", modes, self.variances.len())?;
        if self.gains.iter().any(|g| !g.is_finite()) {
            return Err(Error::InvalidArgument("noise gains must be finite".into()));
        }
        if self.variances.iter().any(|q| !(q.is_finite() && *q >= 0.0)) {
            return Err(Error::InvalidArgument("noise variances must be finite and >= 0".into()));
        }
        Ok(())
    }

    pub fn is_silent(&self) -> bool {
        self.gains.iter().zip(&self.variances).all(|(g, q)| *g == 0.0 || *q == 0.0)
    }
}

/// Source-noise contribution to the output covariance.
#[derive(Debug, Clone, PartialEq)]
pub struct SourceNoiseCovariance {
    /// `K₂(t_a, t_b)` for `a, b = 1..N` (after flooring), mN×mN.
    pub cumulative: DMatrix<f64>,
    /// Covariance of the increments over each step, mN×mN.
    pub increments: DMatrix<f64>,
    /// Smallest eigenvalue of the symmetrized `K₂` before flooring.
    pub min_eigenvalue: f64,
    pub trace: f64,
    pub max_asymmetry: f64,
    pub floored: bool,
}

/// `∫_0^{u} ... `: `(1 - cos ωu)/ω²`, the integrated modal impulse response.
fn integrated_response(omega: f64, u: f64) -> f64 {
    if omega == 0.0 {
        0.5 * u * u
    } else {
        let half = (0.5 * omega * u).sin();
        2.0 * half * half / (omega * omega)
    }
}

/// `K₂(t,τ) = ∫_0^{t∧τ} R(t,r) Q⁰ R(τ,r)ᵀ dr` with
/// `R(t,r) = ∫_r^t G S(θ-r) σ dθ`, assembled on the grid by composite
/// Gauss-Legendre in `r`.
pub fn source_noise_covariance_q2(
    modes: &ModeSet,
    noise: &NoiseSpec,
    g: &DMatrix<f64>,
    grid: &TimeGrid,
) -> Result<SourceNoiseCovariance> {
    noise.validate(modes.len())?;
    check_dim("sensor coupling columns", modes.len(), g.ncols())?;
    let m = g.nrows();
    let n = grid.steps();
    let dim = m * n;
    let dt = grid.dt();
    let mut cumulative = DMatrix::zeros(dim, dim);

    for (k, omega) in modes.omegas().into_iter().enumerate() {
        let weight = noise.gains[k] * noise.gains[k] * noise.variances[k];
        if weight == 0.0 {
            continue;
        }
        let panels = ((2.0 * omega * dt) / std::f64::consts::PI).ceil().max(1.0) as usize;
        // scalar[a][b] = ∫_0^{t_{a+1}} h(u) h(u + t_{b+1} - t_{a+1}) du, b >= a
        let mut scalar = DMatrix::zeros(n, n);
        for lag in 0..n {
            let shift = lag as f64 * dt;
            let mut acc = 0.0;
            for a in 0..n - lag {
                let lo = a as f64 * dt;
                acc += quadrature::gauss_legendre(
                    &|u| integrated_response(omega, u) * integrated_response(omega, u + shift),
                    lo,
                    lo + dt,
                    panels,
                );
                scalar[(a, a + lag)] = acc;
                scalar[(a + lag, a)] = acc;
            }
        }
        let gk = g.column(k);
        for a in 0..n {
            for b in 0..n {
                let v = weight * scalar[(a, b)];
                for s in 0..m {
                    for s2 in 0..m {
                        cumulative[(a * m + s, b * m + s2)] += v * gk[s] * gk[s2];
                    }
                }
            }
        }
    }

    let max_asymmetry = (&cumulative - cumulative.transpose()).amax();
    let symmetric = (&cumulative + cumulative.transpose()) * 0.5;
    let trace = symmetric.trace();
    let eig = SymmetricEigen::new(symmetric.clone());
    let min_eigenvalue = eig.eigenvalues.min();
    let floored = min_eigenvalue < 0.0;
    if min_eigenvalue < -1e-10 * trace.abs() {
        warn!("source-noise covariance has eigenvalue {min_eigenvalue:.3e} (trace {trace:.3e}); flooring at zero");
    }
    let cumulative = if floored {
        let clipped = eig.eigenvalues.map(|v| v.max(0.0));
        let rebuilt = &eig.eigenvectors * DMatrix::from_diagonal(&clipped) * eig.eigenvectors.transpose();
        (&rebuilt + rebuilt.transpose()) * 0.5
    } else {
        symmetric
    };

    let diff = DMatrix::from_fn(dim, dim, |r, c| {
        if r == c {
            1.0
        } else if c % m == r % m && c + m == r {
            -1.0
        } else {
            0.0
        }
    });
    let increments = &diff * &cumulative * diff.transpose();
    let increments = (&increments + increments.transpose()) * 0.5;

    Ok(SourceNoiseCovariance {
        cumulative,
        increments,
        min_eigenvalue,
        trace,
        max_asymmetry,
        floored,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub enum NoiseCovariance {
    /// Receiver noise only: `Δt I`.
    Receiver,
    /// `Δt I + Q₂` with the given source-noise increment covariance.
    WithSource(DMatrix<f64>),
}

/// `q(x_k, ·) = N(m_k Δt, Σ)` over the stacked output increments.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelKernel {
    drift: Vec<DVector<f64>>,
    sensors: usize,
    grid: TimeGrid,
    noise: NoiseCovariance,
}

impl ChannelKernel {
    pub fn new(channel: &ChannelOperator, alphabet: &SignalAlphabet) -> Result<Self> {
        Ok(Self {
            drift: kernel_means(channel, alphabet)?,
            sensors: channel.sensors(),
            grid: *channel.grid(),
            noise: NoiseCovariance::Receiver,
        })
    }

    pub fn with_source_noise(
        channel: &ChannelOperator,
        alphabet: &SignalAlphabet,
        q2: &SourceNoiseCovariance,
    ) -> Result<Self> {
        let dim = channel.sensors() * channel.grid().steps();
        check_dim("source-noise covariance", dim, q2.increments.nrows())?;
        Ok(Self {
            noise: NoiseCovariance::WithSource(q2.increments.clone()),
            ..Self::new(channel, alphabet)?
        })
    }

    /// Kernel from explicit drift means (stacked, m-blocks per step).
    pub fn from_drift(drift: Vec<DVector<f64>>, sensors: usize, grid: TimeGrid) -> Result<Self> {
        if drift.is_empty() {
            return Err(Error::InvalidArgument("kernel needs at least one symbol".into()));
        }
        for d in &drift {
            check_dim("drift mean length", sensors * grid.steps(), d.len())?;
        }
        Ok(Self {
            drift,
            sensors,
            grid,
            noise: NoiseCovariance::Receiver,
        })
    }

    pub fn drift_means(&self) -> &[DVector<f64>] {
        &self.drift
    }

    pub fn symbols(&self) -> usize {
        self.drift.len()
    }

    pub fn sensors(&self) -> usize {
        self.sensors
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn noise(&self) -> &NoiseCovariance {
        &self.noise
    }

    pub fn dim(&self) -> usize {
        self.sensors * self.grid.steps()
    }

    /// Increment means `m_k Δt`.
    pub fn observation_means(&self) -> Vec<DVector<f64>> {
        let dt = self.grid.dt();
        self.drift.iter().map(|d| d * dt).collect()
    }

    pub fn covariance(&self) -> DMatrix<f64> {
        let q1 = noise_covariance_q1(&self.grid, self.sensors);
        match &self.noise {
            NoiseCovariance::Receiver => q1,
            NoiseCovariance::WithSource(q2) => q1 + q2,
        }
    }

    /// Means mapped through the inverse Cholesky factor of the covariance,
    /// so the noise becomes `N(0, I)`.
    pub fn whitened_means(&self) -> Result<Vec<DVector<f64>>> {
        let means = self.observation_means();
        match &self.noise {
            NoiseCovariance::Receiver => {
                let scale = 1.0 / self.grid.dt().sqrt();
                Ok(means.into_iter().map(|m| m * scale).collect())
            }
            NoiseCovariance::WithSource(_) => {
                let cov = self.covariance();
                let chol = match cov.clone().cholesky() {
                    Some(c) => c,
                    None => {
                        let eps = 1e-12 * cov.trace();
                        warn!("kernel covariance is not positive definite; regularizing by {eps:.3e} I");
                        let n = cov.nrows();
                        (cov + DMatrix::identity(n, n) * eps).cholesky().ok_or_else(|| {
                            Error::Numerical("kernel covariance is not positive semidefinite".into())
                        })?
                    }
                };
                let l = chol.l();
                means
                    .iter()
                    .map(|m| {
                        l.solve_lower_triangular(m)
                            .ok_or_else(|| Error::Numerical("singular covariance factor".into()))
                    })
                    .collect()
            }
        }
    }
}

/// Whitened means projected onto an orthonormal basis of their affine span:
/// a mixture of `N(point_k, I)` in at most `symbols - 1` dimensions.
#[derive(Debug, Clone, PartialEq)]
pub struct ReducedKernel {
    points: Vec<Vec<f64>>,
    dim: usize,
}

impl ReducedKernel {
    pub fn from_points(points: Vec<Vec<f64>>) -> Result<Self> {
        let dim = points
            .first()
            .map(|p| p.len())
            .ok_or_else(|| Error::InvalidArgument("reduced kernel needs at least one point".into()))?;
        for p in &points {
            check_dim("reduced point dimension", dim, p.len())?;
        }
        Ok(Self { points, dim })
    }

    pub fn points(&self) -> &[Vec<f64>] {
        &self.points
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn symbols(&self) -> usize {
        self.points.len()
    }

    pub fn distance(&self, a: usize, b: usize) -> f64 {
        self.points[a]
            .iter()
            .zip(&self.points[b])
            .map(|(x, y)| (x - y) * (x - y))
            .sum::<f64>()
            .sqrt()
    }

    /// Whether every pair of symbols is distinguishable.
    pub fn distinct(&self) -> bool {
        (0..self.symbols()).all(|a| (a + 1..self.symbols()).all(|b| self.distance(a, b) > 1e-9))
    }
}

pub fn whiten_and_reduce(kernel: &ChannelKernel) -> Result<ReducedKernel> {
    reduce_points(&kernel.whitened_means()?)
}

/// Span reduction of points already in whitened coordinates.
pub fn reduce_points(whitened: &[DVector<f64>]) -> Result<ReducedKernel> {
    let count = whitened.len();
    if count == 0 {
        return Err(Error::InvalidArgument("no means to reduce".into()));
    }
    let origin = &whitened[0];
    if count == 1 {
        return ReducedKernel::from_points(vec![vec![]]);
    }
    let full = origin.len();
    let diffs = DMatrix::from_fn(full, count - 1, |r, c| whitened[c + 1][r] - origin[r]);
    let scale = diffs.amax();
    if scale == 0.0 {
        return ReducedKernel::from_points(vec![vec![]; count]);
    }
    let svd = diffs.clone().svd(true, false);
    let u = svd.u.as_ref().ok_or_else(|| Error::Numerical("SVD failed".into()))?;
    let smax = svd.singular_values.max();
    let keep: Vec<usize> = (0..svd.singular_values.len())
        .filter(|i| svd.singular_values[*i] > 1e-13 * smax)
        .collect();
    let basis = DMatrix::from_fn(full, keep.len(), |r, c| u[(r, keep[c])]);
    let coords = basis.transpose() * diffs;
    let mut points = vec![vec![0.0; keep.len()]];
    for c in 0..count - 1 {
        points.push(coords.column(c).iter().copied().collect());
    }
    ReducedKernel::from_points(points)
}

/// `Σ_j ⟨F_j(x), Δy_j⟩ - ½ Σ_j |F_j(x)|² Δt`.
pub fn girsanov_log_rnd(channel: &ChannelOperator, x: &DMatrix<f64>, increments: &DMatrix<f64>) -> Result<f64> {
    let drift = channel.apply(x)?;
    check_dim("output sensors", drift.nrows(), increments.nrows())?;
    check_dim("output steps", drift.ncols(), increments.ncols())?;
    let dt = channel.grid().dt();
    Ok(drift.dot(increments) - 0.5 * drift.norm_squared() * dt)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::assemble_channel_matrix;
    use crate::geometry::{BoundaryCondition, Domain};
    use crate::modes::build_modes;
    use std::f64::consts::PI;

    fn single_mode() -> (ModeSet, DMatrix<f64>) {
        let modes = build_modes(&Domain::new(vec![1.0], 1.0 / PI).unwrap(), BoundaryCondition::Dirichlet, 1).unwrap();
        (modes, DMatrix::from_element(1, 1, 1.0))
    }

    #[test]
    fn alphabet_validation_and_energy() {
        let grid = TimeGrid::new(2.0, 4).unwrap();
        let x = DMatrix::from_element(1, 4, 1.5);
        assert!(SignalAlphabet::new(vec![], grid).is_err());
        assert!(SignalAlphabet::new(vec![x.clone(), x.clone()], grid).is_err());
        assert!(SignalAlphabet::new(vec![DMatrix::zeros(1, 3)], grid).is_err());
        let a = SignalAlphabet::new(vec![x.clone(), -x], grid).unwrap();
        assert_eq!(a.energies(), vec![4.5, 4.5]);
    }

    #[test]
    fn means_are_linear_in_the_symbol() {
        let (modes, one) = single_mode();
        let grid = TimeGrid::new(2.0 * PI, 32).unwrap();
        let ch = assemble_channel_matrix(&modes, &one, &one, &grid).unwrap();
        let x = DMatrix::from_element(1, 32, 1.0);
        let a = SignalAlphabet::new(vec![DMatrix::zeros(1, 32), x.clone(), -x], grid).unwrap();
        let m = kernel_means(&ch, &a).unwrap();
        assert!(m[0].iter().all(|v| *v == 0.0));
        assert_eq!(m[1], -&m[2]);
        for (j, v) in m[1].iter().enumerate() {
            assert!((v - (1.0 - grid.node(j + 1).cos())).abs() < 1e-12);
        }
    }

    #[test]
    fn q1_forms() {
        let grid = TimeGrid::new(3.0, 1).unwrap();
        assert_eq!(noise_covariance_q1(&grid, 2), DMatrix::identity(2, 2) * 3.0);
        let grid = TimeGrid::new(2.0, 5).unwrap();
        let q = noise_covariance_q1(&grid, 2);
        let half = noise_covariance_q1(&grid.refined(2), 2);
        assert!((half[(0, 0)] * 2.0 - q[(0, 0)]).abs() < 1e-15);
        let cum = cumulative_covariance(&q, 2);
        for r in 0..10 {
            for c in 0..10 {
                let expect = if r % 2 == c % 2 { grid.node(r / 2 + 1).min(grid.node(c / 2 + 1)) } else { 0.0 };
                assert!((cum[(r, c)] - expect).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn silent_source_noise_is_zero() {
        let (modes, one) = single_mode();
        let grid = TimeGrid::new(2.0, 6).unwrap();
        let q2 = source_noise_covariance_q2(&modes, &NoiseSpec::uniform(1, 0.0), &one, &grid).unwrap();
        assert!(q2.cumulative.iter().all(|v| *v == 0.0));
        assert!(q2.increments.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn q2_matches_closed_form_single_mode() {
        // ω = 1: ∫_0^t (1 - cos u)(1 - cos(u + d)) du in closed form
        let (modes, one) = single_mode();
        let grid = TimeGrid::new(3.0, 6).unwrap();
        let q2 = source_noise_covariance_q2(&modes, &NoiseSpec::uniform(1, 1.0), &one, &grid).unwrap();
        let closed = |t: f64, d: f64| {
            t - t.sin() - ((t + d).sin() - d.sin()) + 0.5 * t * d.cos() + 0.25 * ((2.0 * t + d).sin() - d.sin())
        };
        for a in 0..6 {
            for b in a..6 {
                let (t, tau) = (grid.node(a + 1), grid.node(b + 1));
                let expect = closed(t, tau - t);
                assert!((q2.cumulative[(a, b)] - expect).abs() < 1e-10 * expect.abs().max(1e-3), "({a},{b})");
                assert_eq!(q2.cumulative[(a, b)], q2.cumulative[(b, a)]);
            }
        }
        assert!(q2.min_eigenvalue >= -1e-10 * q2.trace);
    }

    #[test]
    fn adding_zero_q2_reproduces_receiver_kernel() {
        let (modes, one) = single_mode();
        let grid = TimeGrid::new(2.0, 8).unwrap();
        let ch = assemble_channel_matrix(&modes, &one, &one, &grid).unwrap();
        let x = DMatrix::from_element(1, 8, 1.0);
        let a = SignalAlphabet::new(vec![x.clone(), -x], grid).unwrap();
        let q2 = source_noise_covariance_q2(&modes, &NoiseSpec::uniform(1, 0.0), &one, &grid).unwrap();
        let plain = ChannelKernel::new(&ch, &a).unwrap();
        let noisy = ChannelKernel::with_source_noise(&ch, &a, &q2).unwrap();
        assert_eq!(plain.covariance(), noisy.covariance());
        let (wp, wn) = (plain.whitened_means().unwrap(), noisy.whitened_means().unwrap());
        for (p, n) in wp.iter().zip(&wn) {
            assert!((p - n).amax() < 1e-12);
        }
    }

    #[test]
    fn reduction_dimensions() {
        let grid = TimeGrid::new(1.0, 4).unwrap();
        let d = |v: [f64; 4]| DVector::from_column_slice(&v);
        let two = ChannelKernel::from_drift(vec![d([1.0, 2.0, 0.0, 1.0]), d([-1.0, 0.0, 3.0, 1.0])], 1, grid).unwrap();
        assert_eq!(whiten_and_reduce(&two).unwrap().dim(), 1);
        let same = ChannelKernel::from_drift(vec![d([1.0; 4]), d([1.0; 4]), d([1.0; 4])], 1, grid).unwrap();
        let r = whiten_and_reduce(&same).unwrap();
        assert_eq!(r.dim(), 0);
        assert!(!r.distinct());
    }

    #[test]
    fn girsanov_zero_input() {
        let (modes, one) = single_mode();
        let grid = TimeGrid::new(1.0, 8).unwrap();
        let ch = assemble_channel_matrix(&modes, &one, &one, &grid).unwrap();
        let dy = DMatrix::from_element(1, 8, 0.3);
        assert_eq!(girsanov_log_rnd(&ch, &DMatrix::zeros(1, 8), &dy).unwrap(), 0.0);
        assert!(girsanov_log_rnd(&ch, &DMatrix::zeros(1, 8), &DMatrix::zeros(2, 8)).is_err());
    }
}
