//! Boundary-driven channels on Dirichlet boxes by transposition.
//!
//! For boundary data `u` the field coefficient against a test source `f`
//! is `(E, f) = -c² ∫_I ∫_∂Ω (∂ψ/∂ν) u dσ dt`, where `ψ` solves the wave
//! equation with source `f` backwards from `ψ(T) = ψ̇(T) = 0`. With
//! `f = ψ_k(ξ) τ(t)` this reduces to the modal boundary coupling
//! `b_k = -c² ∫ (∂ψ_k/∂ν) φ dσ` paired with a scalar adjoint trajectory.

use log::warn;
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::geometry::{BoundaryCondition, Domain, Profile, Region};
use crate::grid::TimeGrid;
use crate::modes::ModeSet;
use crate::oscillator::{OscillatorState, Propagator};
use crate::quadrature;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Lower,
    Upper,
}

/// Face `{ξ_axis = 0}` (lower) or `{ξ_axis = L_axis}` (upper).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Face {
    pub axis: usize,
    pub side: Side,
}

impl Face {
    fn outward_sign(&self) -> f64 {
        match self.side {
            Side::Lower => -1.0,
            Side::Upper => 1.0,
        }
    }

    fn coordinate(&self, domain: &Domain) -> f64 {
        match self.side {
            Side::Lower => 0.0,
            Side::Upper => domain.lengths()[self.axis],
        }
    }
}

/// Boundary source profile `amplitude * φ` supported on a box within a face.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundaryPatch {
    pub face: Face,
    /// Full-dimensional support; the normal axis is pinned to the face.
    pub region: Region,
    pub profile: Profile,
    pub amplitude: f64,
}

impl BoundaryPatch {
    /// `tangential_lo/hi` list the bounds of the remaining axes in order.
    pub fn new(
        domain: &Domain,
        face: Face,
        tangential_lo: &[f64],
        tangential_hi: &[f64],
        profile: Profile,
        amplitude: f64,
    ) -> Result<Self> {
        let dims = domain.dims();
        if face.axis >= dims {
            return Err(Error::Geometry(format!("face axis {} outside a {dims}-d domain", face.axis)));
        }
        check_dim("boundary patch lower bounds", dims - 1, tangential_lo.len())?;
        check_dim("boundary patch upper bounds", dims - 1, tangential_hi.len())?;
        let at = face.coordinate(domain);
        let mut lo = Vec::with_capacity(dims);
        let mut hi = Vec::with_capacity(dims);
        let mut t = 0;
        for axis in 0..dims {
            if axis == face.axis {
                lo.push(at);
                hi.push(at);
            } else {
                lo.push(tangential_lo[t]);
                hi.push(tangential_hi[t]);
                t += 1;
            }
        }
        let region = Region::new(lo, hi)?;
        if !domain.contains(&region) {
            return Err(Error::Geometry(format!(
                "boundary patch {:?}..{:?} leaves its face",
                region.lo, region.hi
            )));
        }
        Ok(Self {
            face,
            region,
            profile,
            amplitude,
        })
    }

    /// Whole face with a constant unit profile.
    pub fn whole_face(domain: &Domain, face: Face) -> Result<Self> {
        let (lo, hi): (Vec<f64>, Vec<f64>) = (0..domain.dims())
            .filter(|a| *a != face.axis)
            .map(|a| (0.0, domain.lengths()[a]))
            .unzip();
        Self::new(domain, face, &lo, &hi, Profile::constant(), 1.0)
    }
}

/// Modal forcing induced by unit boundary data on each patch:
/// `B[k,i] = -c² ∫_∂Ω (∂ψ_k/∂ν) φ_i dσ`.
pub fn boundary_couplings(modes: &ModeSet, patches: &[BoundaryPatch]) -> Result<DMatrix<f64>> {
    if modes.boundary_condition() != BoundaryCondition::Dirichlet {
        return Err(Error::ModelMismatch(
            "boundary sources require Dirichlet modes (normal derivatives of Neumann modes vanish)".into(),
        ));
    }
    let domain = modes.domain();
    let c2 = domain.wave_speed().powi(2);
    for p in patches {
        check_dim("boundary patch dimensions", domain.dims(), p.region.dims())?;
    }
    Ok(DMatrix::from_fn(modes.len(), patches.len(), |k, i| {
        let p = &patches[i];
        let axis = p.face.axis;
        let at = p.face.coordinate(domain);
        let normal = p.face.outward_sign()
            * modes.factor_derivative(k, axis, at)
            * p.profile.factor(axis).eval(at, at, at);
        let tangential: f64 = (0..domain.dims())
            .filter(|a| *a != axis)
            .map(|a| modes.factor_integral(k, a, p.profile.factor(a), p.region.lo[a], p.region.hi[a]))
            .product();
        -c2 * p.amplitude * normal * tangential
    }))
}

/// Backward wave problem `ψ̈ + ω²ψ = f` with `ψ(T) = ψ̇(T) = 0` and
/// homogeneous Dirichlet data, source given per mode and step (K×N).
#[derive(Debug, Clone, PartialEq)]
pub struct AdjointProblem {
    pub source: DMatrix<f64>,
}

/// Modal adjoint trajectory at the nodes `t_0..t_N` (K×(N+1)).
#[derive(Debug, Clone, PartialEq)]
pub struct AdjointSolution {
    pub position: DMatrix<f64>,
    pub velocity: DMatrix<f64>,
}

impl AdjointSolution {
    /// `∫ over step j` of mode `k`, by 16-point Gauss-Legendre on the
    /// in-step closed form.
    fn step_integral(&self, k: usize, j: usize, omega: f64, source: f64, dt: f64) -> f64 {
        let start = OscillatorState::new(self.position[(k, j)], self.velocity[(k, j)]);
        let prop = Propagator::new(omega, dt);
        quadrature::gauss_legendre(&|s| prop.advance(start, source, s).position, 0.0, dt, 1)
    }
}

pub fn adjoint_solve(problem: &AdjointProblem, modes: &ModeSet, grid: &TimeGrid) -> Result<AdjointSolution> {
    check_dim("adjoint source modes", modes.len(), problem.source.nrows())?;
    check_dim("adjoint source steps", grid.steps(), problem.source.ncols())?;
    let n = grid.steps();
    let mut position = DMatrix::zeros(modes.len(), n + 1);
    let mut velocity = DMatrix::zeros(modes.len(), n + 1);
    for (k, omega) in modes.omegas().into_iter().enumerate() {
        // march in reversed time s = T - t from rest
        let prop = Propagator::new(omega, grid.dt());
        let mut s = OscillatorState::default();
        for j in (0..n).rev() {
            s = prop.step(s, problem.source[(k, j)]);
            position[(k, j)] = s.position;
            velocity[(k, j)] = -s.velocity;
        }
    }
    Ok(AdjointSolution { position, velocity })
}

/// Test source `ψ_mode(ξ) τ(t)` with `τ` piecewise constant on the grid.
#[derive(Debug, Clone, PartialEq)]
pub struct BasisFunction {
    pub mode: usize,
    pub time: Vec<f64>,
}

/// Orthonormal piecewise-constant cosines on `[0, T]`:
/// `τ_p = w_p cos(pπ(j + ½)/N)` on step `j`, `p < count`.
pub fn cosine_time_basis(grid: &TimeGrid, count: usize) -> Vec<Vec<f64>> {
    let n = grid.steps();
    let t = grid.horizon();
    (0..count.min(n))
        .map(|p| {
            let w = if p == 0 { (1.0 / t).sqrt() } else { (2.0 / t).sqrt() };
            (0..n)
                .map(|j| w * (std::f64::consts::PI * p as f64 * (j as f64 + 0.5) / n as f64).cos())
                .collect()
        })
        .collect()
}

/// Tensor basis of every mode with the first `count` time cosines.
pub fn modal_cosine_basis(modes: &ModeSet, grid: &TimeGrid, count: usize) -> Vec<BasisFunction> {
    let times = cosine_time_basis(grid, count);
    (0..modes.len())
        .flat_map(|mode| {
            times.iter().map(move |time| BasisFunction {
                mode,
                time: time.clone(),
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct TransposedSolution {
    /// `ℓ(ψ_i) = (E, f_i)`.
    pub pairings: Vec<f64>,
    /// Expansion coefficients of `E` in the basis (equal to the pairings
    /// for an orthonormal basis).
    pub coefficients: Vec<f64>,
    pub orthonormal: bool,
}

/// Field coefficients for boundary data `u` (one row of step samples per
/// patch). Initial data are zero.
pub fn transposed_solution(
    modes: &ModeSet,
    patches: &[BoundaryPatch],
    u: &DMatrix<f64>,
    basis: &[BasisFunction],
    grid: &TimeGrid,
) -> Result<TransposedSolution> {
    check_dim("boundary data rows", patches.len(), u.nrows())?;
    check_dim("boundary data steps", grid.steps(), u.ncols())?;
    let coupling = boundary_couplings(modes, patches)?;
    // boundary pairing per mode and step: -c² ∫ ∂ψ_k/∂ν u(t_j) dσ
    let pairing = &coupling * u;
    let omegas = modes.omegas();
    let dt = grid.dt();
    let mut pairings = Vec::with_capacity(basis.len());
    for f in basis {
        if f.mode >= modes.len() {
            return Err(Error::InvalidArgument(format!("basis refers to mode {}", f.mode)));
        }
        check_dim("basis time samples", grid.steps(), f.time.len())?;
        let mut source = DMatrix::zeros(modes.len(), grid.steps());
        for (j, v) in f.time.iter().enumerate() {
            source[(f.mode, j)] = *v;
        }
        let adj = adjoint_solve(&AdjointProblem { source }, modes, grid)?;
        let k = f.mode;
        let value: f64 = (0..grid.steps())
            .map(|j| pairing[(k, j)] * adj.step_integral(k, j, omegas[k], f.time[j], dt))
            .sum();
        pairings.push(value);
    }

    let gram = DMatrix::from_fn(basis.len(), basis.len(), |a, b| {
        if basis[a].mode != basis[b].mode {
            0.0
        } else {
            basis[a].time.iter().zip(&basis[b].time).map(|(x, y)| x * y).sum::<f64>() * dt
        }
    });
    let deviation = (&gram - DMatrix::identity(basis.len(), basis.len())).amax();
    if deviation <= 1e-10 {
        return Ok(TransposedSolution {
            coefficients: pairings.clone(),
            pairings,
            orthonormal: true,
        });
    }
    warn!("basis is not orthonormal (Gram deviation {deviation:.3e}); solving the Gram system");
    let rhs = nalgebra::DVector::from_vec(pairings.clone());
    let solved = gram
        .cholesky()
        .ok_or_else(|| Error::Numerical("basis functions are linearly dependent".into()))?
        .solve(&rhs);
    Ok(TransposedSolution {
        pairings,
        coefficients: solved.iter().copied().collect(),
        orthonormal: false,
    })
}

/// Modal field samples (K×N, piecewise constant) `Σ_i c_i f_i`.
pub fn reconstruct_field(
    coefficients: &[f64],
    basis: &[BasisFunction],
    modes: usize,
    grid: &TimeGrid,
) -> Result<DMatrix<f64>> {
    check_dim("coefficient count", basis.len(), coefficients.len())?;
    let mut field = DMatrix::zeros(modes, grid.steps());
    for (c, f) in coefficients.iter().zip(basis) {
        for (j, v) in f.time.iter().enumerate() {
            field[(f.mode, j)] += c * v;
        }
    }
    Ok(field)
}
