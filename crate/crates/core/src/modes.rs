//! Separable eigenpairs of `-Δ` on a box.

use std::cmp::Ordering;
use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{BoundaryCondition, Domain, Factor, Region};
use crate::quadrature;

const QUAD_REL_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mode {
    /// Per-axis index; starts at 1 for Dirichlet and 0 for Neumann.
    pub index: Vec<usize>,
    /// Eigenvalue of `-Δ`, 1/m².
    pub eigenvalue: f64,
    /// `c * sqrt(eigenvalue)`, rad/s.
    pub omega: f64,
}

/// The `count` lowest modes, ordered by eigenvalue and then lexicographically
/// by multi-index.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeSet {
    domain: Domain,
    bc: BoundaryCondition,
    modes: Vec<Mode>,
}

pub fn build_modes(domain: &Domain, bc: BoundaryCondition, count: usize) -> Result<ModeSet> {
    if count == 0 {
        return Err(Error::InvalidArgument("mode count must be at least 1".into()));
    }
    let dims = domain.dims();
    if !(1..=3).contains(&dims) {
        return Err(Error::Unsupported(format!("{dims}-dimensional domains")));
    }
    let first = match bc {
        BoundaryCondition::Dirichlet => 1,
        BoundaryCondition::Neumann => 0,
    };
    let axis_eig = |axis: usize, k: usize| {
        let w = k as f64 * PI / domain.lengths()[axis];
        w * w
    };
    let base: f64 = (0..dims).map(|a| axis_eig(a, first)).sum();
    // Varying one axis alone already yields `count` modes below this level.
    let ceiling = (0..dims)
        .map(|a| base - axis_eig(a, first) + axis_eig(a, first + count - 1))
        .fold(f64::INFINITY, f64::min);
    let ceiling = ceiling * (1.0 + 1e-12);

    let mut candidates = Vec::new();
    let mut index = vec![first; dims];
    enumerate(dims, 0, 0.0, first, ceiling, &axis_eig, &mut index, &mut candidates);

    candidates.sort_by(|a: &(f64, Vec<usize>), b| {
        let scale = a.0.abs().max(b.0.abs()).max(1e-300);
        if (a.0 - b.0).abs() <= 1e-12 * scale {
            a.1.cmp(&b.1)
        } else {
            a.0.partial_cmp(&b.0).unwrap_or(Ordering::Equal)
        }
    });
    candidates.truncate(count);
    if candidates.len() < count {
        return Err(Error::Numerical("mode enumeration produced too few candidates".into()));
    }
    let c = domain.wave_speed();
    let modes = candidates
        .into_iter()
        .map(|(eigenvalue, index)| Mode {
            index,
            eigenvalue,
            omega: c * eigenvalue.sqrt(),
        })
        .collect();
    Ok(ModeSet {
        domain: domain.clone(),
        bc,
        modes,
    })
}

#[allow(clippy::too_many_arguments)]
fn enumerate(
    dims: usize,
    axis: usize,
    partial: f64,
    first: usize,
    ceiling: f64,
    axis_eig: &dyn Fn(usize, usize) -> f64,
    index: &mut Vec<usize>,
    out: &mut Vec<(f64, Vec<usize>)>,
) {
    if axis == dims {
        out.push((partial, index.clone()));
        return;
    }
    // remaining axes contribute at least their lowest eigenvalue
    let rest: f64 = (axis + 1..dims).map(|a| axis_eig(a, first)).sum();
    let mut k = first;
    loop {
        let value = partial + axis_eig(axis, k);
        if value + rest > ceiling {
            break;
        }
        index[axis] = k;
        enumerate(dims, axis + 1, value, first, ceiling, axis_eig, index, out);
        k += 1;
    }
}

impl ModeSet {
    pub fn len(&self) -> usize {
        self.modes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.modes.is_empty()
    }

    pub fn modes(&self) -> &[Mode] {
        &self.modes
    }

    pub fn domain(&self) -> &Domain {
        &self.domain
    }

    pub fn boundary_condition(&self) -> BoundaryCondition {
        self.bc
    }

    pub fn omegas(&self) -> Vec<f64> {
        self.modes.iter().map(|m| m.omega).collect()
    }

    fn axis_wavenumber(&self, mode: usize, axis: usize) -> f64 {
        self.modes[mode].index[axis] as f64 * PI / self.domain.lengths()[axis]
    }

    fn axis_norm(&self, mode: usize, axis: usize) -> f64 {
        let l = self.domain.lengths()[axis];
        match (self.bc, self.modes[mode].index[axis]) {
            (BoundaryCondition::Neumann, 0) => (1.0 / l).sqrt(),
            _ => (2.0 / l).sqrt(),
        }
    }

    /// One-dimensional factor of eigenfunction `mode` along `axis`.
    pub fn factor(&self, mode: usize, axis: usize, x: f64) -> f64 {
        let kappa = self.axis_wavenumber(mode, axis);
        let norm = self.axis_norm(mode, axis);
        match self.bc {
            BoundaryCondition::Dirichlet => norm * (kappa * x).sin(),
            BoundaryCondition::Neumann => norm * (kappa * x).cos(),
        }
    }

    /// Derivative of [`ModeSet::factor`] in `x`.
    pub fn factor_derivative(&self, mode: usize, axis: usize, x: f64) -> f64 {
        let kappa = self.axis_wavenumber(mode, axis);
        let norm = self.axis_norm(mode, axis);
        match self.bc {
            BoundaryCondition::Dirichlet => norm * kappa * (kappa * x).cos(),
            BoundaryCondition::Neumann => -norm * kappa * (kappa * x).sin(),
        }
    }

    /// L₂-normalized eigenfunction `ψ_mode(x)`.
    pub fn eval(&self, mode: usize, x: &[f64]) -> f64 {
        (0..self.domain.dims())
            .map(|axis| self.factor(mode, axis, x[axis]))
            .product()
    }

    /// `∫_a^b factor(mode, axis, x) * profile(x) dx`; a degenerate interval
    /// evaluates the product at `a` instead.
    pub fn factor_integral(&self, mode: usize, axis: usize, profile: Factor, a: f64, b: f64) -> f64 {
        if a == b {
            return self.factor(mode, axis, a) * profile.eval(a, a, b);
        }
        let kappa = self.axis_wavenumber(mode, axis);
        let norm = self.axis_norm(mode, axis);
        if let Factor::Constant = profile {
            return match self.bc {
                _ if kappa == 0.0 => norm * (b - a),
                BoundaryCondition::Dirichlet => norm * ((kappa * a).cos() - (kappa * b).cos()) / kappa,
                BoundaryCondition::Neumann => norm * ((kappa * b).sin() - (kappa * a).sin()) / kappa,
            };
        }
        let profile_k = match profile {
            Factor::Sine { wavenumber } | Factor::Cosine { wavenumber } => wavenumber.abs(),
            _ => 0.0,
        };
        let panels = (((kappa + profile_k) * (b - a)) / PI).ceil() as usize + 1;
        quadrature::integrate(
            |x| self.factor(mode, axis, x) * profile.eval(x, a, b),
            a,
            b,
            QUAD_REL_TOL,
            panels,
        )
    }

    /// `∫_region ψ_mode(x) Π_axis profile_axis(x) dx` with degenerate axes
    /// evaluated pointwise.
    pub fn region_integral(&self, mode: usize, region: &Region, profile: &crate::geometry::Profile) -> f64 {
        (0..self.domain.dims())
            .map(|axis| {
                self.factor_integral(mode, axis, profile.factor(axis), region.lo[axis], region.hi[axis])
            })
            .product()
    }
}
