//! Modal representation of the waveguide and the discretized causal
//! input-to-drift operator.
//!
//! Mode `k` obeys `ä_k + ω_k² a_k = Σ_i B[k,i] x_i(t)` and sensor `j` reads
//! `Σ_k G[j,k] a_k(t)`. Inputs are piecewise constant on the time grid, so
//! the stacked map from input samples to drift samples at `t_1..t_N` is
//! exact and block lower triangular.

use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution, StandardNormal};

use crate::error::{check_dim, Error, Result};
use crate::geometry::PatchFunction;
use crate::grid::TimeGrid;
use crate::modes::ModeSet;
use crate::oscillator::{OscillatorState, Propagator};
use crate::rng::stream_rng;

/// Input couplings `B` (K×n) and sensor couplings `G` (m×K):
/// `B[k,i] = ∫ φ_i ψ_k`, `G[j,k] = ∫_{β_j} α_j ψ_k`.
pub fn distributed_couplings(
    modes: &ModeSet,
    inputs: &[PatchFunction],
    sensors: &[PatchFunction],
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let domain = modes.domain();
    for (what, patches) in [("input", inputs), ("sensor", sensors)] {
        for (i, p) in patches.iter().enumerate() {
            if !domain.contains(&p.region) {
                return Err(Error::Geometry(format!(
                    "{what} patch {i} ({:?}..{:?}) is not inside the domain {:?}",
                    p.region.lo,
                    p.region.hi,
                    domain.lengths()
                )));
            }
        }
    }
    let project = |p: &PatchFunction, k: usize| p.amplitude * modes.region_integral(k, &p.region, &p.profile);
    let b = DMatrix::from_fn(modes.len(), inputs.len(), |k, i| project(&inputs[i], k));
    let g = DMatrix::from_fn(sensors.len(), modes.len(), |j, k| project(&sensors[j], k));
    Ok((b, g))
}

/// `h[d][k]`: amplitude of mode `k` at `t_{d+1}` after unit forcing on the
/// first step only, from rest.
pub fn pulse_responses(modes: &ModeSet, grid: &TimeGrid) -> Vec<Vec<f64>> {
    let n = grid.steps();
    let mut out = vec![vec![0.0; modes.len()]; n];
    for (k, omega) in modes.omegas().into_iter().enumerate() {
        let prop = Propagator::new(omega, grid.dt());
        let mut s = prop.step(OscillatorState::default(), 1.0);
        out[0][k] = s.position;
        for row in out.iter_mut().skip(1) {
            s = prop.step(s, 0.0);
            row[k] = s.position;
        }
    }
    out
}

/// Stacked causal map from input samples (n×N, step-major) to drift samples
/// (m×N). Row block `j` holds the readout at `t_{j+1}`; column block `l` the
/// input on `[t_l, t_{l+1})`.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelOperator {
    matrix: DMatrix<f64>,
    inputs: usize,
    sensors: usize,
    grid: TimeGrid,
}

pub fn assemble_channel_matrix(
    modes: &ModeSet,
    b: &DMatrix<f64>,
    g: &DMatrix<f64>,
    grid: &TimeGrid,
) -> Result<ChannelOperator> {
    check_dim("input coupling rows", modes.len(), b.nrows())?;
    check_dim("sensor coupling columns", modes.len(), g.ncols())?;
    let (n, m, steps) = (b.ncols(), g.nrows(), grid.steps());
    let pulses = pulse_responses(modes, grid);
    // time invariance: block (j, l) depends on j - l only
    let blocks: Vec<DMatrix<f64>> = pulses
        .iter()
        .map(|h| {
            let mut gh = g.clone();
            for (k, hk) in h.iter().enumerate() {
                gh.column_mut(k).scale_mut(*hk);
            }
            gh * b
        })
        .collect();
    let mut matrix = DMatrix::zeros(m * steps, n * steps);
    for j in 0..steps {
        for l in 0..=j {
            matrix.view_mut((j * m, l * n), (m, n)).copy_from(&blocks[j - l]);
        }
    }
    Ok(ChannelOperator {
        matrix,
        inputs: n,
        sensors: m,
        grid: *grid,
    })
}

impl ChannelOperator {
    pub fn from_matrix(matrix: DMatrix<f64>, inputs: usize, sensors: usize, grid: TimeGrid) -> Result<Self> {
        check_dim("channel matrix rows", sensors * grid.steps(), matrix.nrows())?;
        check_dim("channel matrix columns", inputs * grid.steps(), matrix.ncols())?;
        Ok(Self {
            matrix,
            inputs,
            sensors,
            grid,
        })
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn inputs(&self) -> usize {
        self.inputs
    }

    pub fn sensors(&self) -> usize {
        self.sensors
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    /// Block mapping input step `l` to the readout at `t_{j+1}`.
    pub fn block(&self, j: usize, l: usize) -> DMatrix<f64> {
        self.matrix
            .view((j * self.sensors, l * self.inputs), (self.sensors, self.inputs))
            .into_owned()
    }

    pub fn check_input(&self, x: &DMatrix<f64>) -> Result<()> {
        check_dim("input channels", self.inputs, x.nrows())?;
        check_dim("input time samples", self.grid.steps(), x.ncols())
    }

    /// Drift samples `F_{t_{j+1}}(x)` as an m×N matrix.
    pub fn apply(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        self.check_input(x)?;
        let stacked = DVector::from_column_slice(x.as_slice());
        let y = &self.matrix * stacked;
        Ok(DMatrix::from_column_slice(self.sensors, self.grid.steps(), y.as_slice()))
    }

    /// Stacked drift vector `M vec(x)`.
    pub fn apply_stacked(&self, x: &DMatrix<f64>) -> Result<DVector<f64>> {
        self.check_input(x)?;
        Ok(&self.matrix * DVector::from_column_slice(x.as_slice()))
    }
}

/// Output increments `Δy_j = F_j(x) Δt + √Δt g_j`, m×N.
pub fn simulate_output(channel: &ChannelOperator, x: &DMatrix<f64>, seed: u64) -> Result<DMatrix<f64>> {
    let drift = channel.apply(x)?;
    let dt = channel.grid.dt();
    let sd = dt.sqrt();
    let mut rng = stream_rng(seed, 0);
    // column-major walk: step by step, sensor by sensor
    let mut out = drift * dt;
    for v in out.iter_mut() {
        let g: f64 = StandardNormal.sample(&mut rng);
        *v += sd * g;
    }
    Ok(out)
}

/// Modal amplitudes and velocities.
#[derive(Debug, Clone, PartialEq)]
pub struct ModalState {
    pub amplitude: Vec<f64>,
    pub velocity: Vec<f64>,
}

impl ModalState {
    pub fn zeros(k: usize) -> Self {
        Self {
            amplitude: vec![0.0; k],
            velocity: vec![0.0; k],
        }
    }
}

/// Energy norm `Σ_k ω_k² a_k² + ȧ_k²`.
pub fn energy(state: &ModalState, modes: &ModeSet) -> Result<f64> {
    check_dim("modal state amplitudes", modes.len(), state.amplitude.len())?;
    check_dim("modal state velocities", modes.len(), state.velocity.len())?;
    Ok(modes
        .omegas()
        .iter()
        .zip(state.amplitude.iter().zip(&state.velocity))
        .map(|(w, (a, v))| w * w * a * a + v * v)
        .sum())
}

/// Modal states at every node under modal forcing (K×N, piecewise constant).
pub fn evolve_modes(
    modes: &ModeSet,
    initial: &ModalState,
    forcing: &DMatrix<f64>,
    grid: &TimeGrid,
) -> Result<Vec<ModalState>> {
    check_dim("modal forcing rows", modes.len(), forcing.nrows())?;
    check_dim("modal forcing steps", grid.steps(), forcing.ncols())?;
    check_dim("initial modal state", modes.len(), initial.amplitude.len())?;
    let props: Vec<Propagator> = modes.omegas().iter().map(|w| Propagator::new(*w, grid.dt())).collect();
    let mut states = Vec::with_capacity(grid.steps() + 1);
    states.push(initial.clone());
    for j in 0..grid.steps() {
        let prev = &states[j];
        let mut next = ModalState::zeros(modes.len());
        for (k, prop) in props.iter().enumerate() {
            let s = prop.step(OscillatorState::new(prev.amplitude[k], prev.velocity[k]), forcing[(k, j)]);
            next.amplitude[k] = s.position;
            next.velocity[k] = s.velocity;
        }
        states.push(next);
    }
    Ok(states)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{BoundaryCondition, Domain, Factor, Profile, Region};
    use crate::modes::build_modes;
    use std::f64::consts::PI;

    fn unit_dirichlet(k: usize) -> ModeSet {
        build_modes(&Domain::new(vec![1.0], 1.0).unwrap(), BoundaryCondition::Dirichlet, k).unwrap()
    }

    #[test]
    fn eigenfunction_profile_selects_its_mode() {
        let modes = unit_dirichlet(5);
        let phi = PatchFunction::new(
            Region::new(vec![0.0], vec![1.0]).unwrap(),
            Profile::separable(vec![Factor::Sine { wavenumber: PI }]),
            2f64.sqrt(),
        );
        let (b, _) = distributed_couplings(&modes, &[phi], &[]).unwrap();
        assert!((b[(0, 0)] - 1.0).abs() < 1e-12);
        for k in 1..5 {
            assert!(b[(k, 0)].abs() < 1e-12);
        }
    }

    #[test]
    fn constant_profile_closed_form() {
        let modes = unit_dirichlet(6);
        let phi = PatchFunction::constant(Region::new(vec![0.0], vec![1.0]).unwrap());
        let (b, _) = distributed_couplings(&modes, &[phi], &[]).unwrap();
        for k in 1..=6 {
            let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
            let expect = 2f64.sqrt() * (1.0 - sign) / (k as f64 * PI);
            assert!((b[(k - 1, 0)] - expect).abs() < 1e-14);
        }
    }

    #[test]
    fn patch_outside_domain_is_rejected() {
        let modes = unit_dirichlet(2);
        let phi = PatchFunction::constant(Region::new(vec![0.5], vec![1.5]).unwrap());
        assert!(matches!(
            distributed_couplings(&modes, &[phi], &[]),
            Err(Error::Geometry(_))
        ));
    }

    fn single_mode_channel(omega: f64, grid: TimeGrid) -> ChannelOperator {
        let pulses: Vec<f64> = {
            let prop = Propagator::new(omega, grid.dt());
            let mut s = prop.step(OscillatorState::default(), 1.0);
            let mut v = vec![s.position];
            for _ in 1..grid.steps() {
                s = prop.step(s, 0.0);
                v.push(s.position);
            }
            v
        };
        let n = grid.steps();
        let m = DMatrix::from_fn(n, n, |j, l| if l <= j { pulses[j - l] } else { 0.0 });
        ChannelOperator::from_matrix(m, 1, 1, grid).unwrap()
    }

    #[test]
    fn single_mode_drift_is_one_minus_cos() {
        // unit-length box whose first Dirichlet mode has ω = 1: c = 1/π
        let domain = Domain::new(vec![1.0], 1.0 / PI).unwrap();
        let modes = build_modes(&domain, BoundaryCondition::Dirichlet, 1).unwrap();
        assert!((modes.modes()[0].omega - 1.0).abs() < 1e-15);
        let grid = TimeGrid::new(2.0 * PI, 50).unwrap();
        let one = DMatrix::from_element(1, 1, 1.0);
        let ch = assemble_channel_matrix(&modes, &one, &one, &grid).unwrap();
        let drift = ch.apply(&DMatrix::from_element(1, 50, 1.0)).unwrap();
        for j in 0..50 {
            let t = grid.node(j + 1);
            assert!((drift[(0, j)] - (1.0 - t.cos())).abs() < 1e-12);
        }
        assert_eq!(ch.matrix(), single_mode_channel(1.0, grid).matrix());
    }

    #[test]
    fn zero_coupling_gives_zero_operator() {
        let modes = unit_dirichlet(4);
        let grid = TimeGrid::new(1.0, 8).unwrap();
        let b = DMatrix::zeros(4, 2);
        let g = DMatrix::from_element(3, 4, 1.0);
        let ch = assemble_channel_matrix(&modes, &b, &g, &grid).unwrap();
        assert!(ch.matrix().iter().all(|v| *v == 0.0));
        assert_eq!(ch.matrix().shape(), (24, 16));
    }

    #[test]
    fn disjoint_subchannels_are_block_diagonal() {
        let modes = unit_dirichlet(2);
        let grid = TimeGrid::new(1.0, 6).unwrap();
        let b = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 2.0]);
        let g = DMatrix::from_row_slice(2, 2, &[0.5, 0.0, 0.0, 3.0]);
        let ch = assemble_channel_matrix(&modes, &b, &g, &grid).unwrap();
        for j in 0..6 {
            for l in 0..6 {
                let blk = ch.block(j, l);
                assert_eq!(blk[(0, 1)], 0.0);
                assert_eq!(blk[(1, 0)], 0.0);
            }
        }
    }

    #[test]
    fn strictly_future_blocks_vanish() {
        let modes = unit_dirichlet(3);
        let grid = TimeGrid::new(1.0, 5).unwrap();
        let b = DMatrix::from_element(3, 2, 1.0);
        let g = DMatrix::from_element(2, 3, 1.0);
        let ch = assemble_channel_matrix(&modes, &b, &g, &grid).unwrap();
        for j in 0..5 {
            for l in j + 1..5 {
                assert!(ch.block(j, l).iter().all(|v| *v == 0.0));
            }
            assert!(ch.block(j, j).iter().any(|v| *v != 0.0));
        }
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let modes = unit_dirichlet(3);
        let grid = TimeGrid::new(1.0, 5).unwrap();
        let b = DMatrix::zeros(2, 1);
        let g = DMatrix::zeros(1, 3);
        assert!(matches!(
            assemble_channel_matrix(&modes, &b, &g, &grid),
            Err(Error::DimensionMismatch { .. })
        ));
        let ok = assemble_channel_matrix(&modes, &DMatrix::zeros(3, 1), &g, &grid).unwrap();
        assert!(ok.apply(&DMatrix::zeros(1, 4)).is_err());
        assert!(simulate_output(&ok, &DMatrix::zeros(2, 5), 1).is_err());
    }

    #[test]
    fn energy_definition() {
        let modes = build_modes(&Domain::new(vec![1.0], 1.0 / PI).unwrap(), BoundaryCondition::Dirichlet, 1).unwrap();
        let s = ModalState {
            amplitude: vec![1.0],
            velocity: vec![0.0],
        };
        assert!((energy(&s, &modes).unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(energy(&ModalState::zeros(1), &modes).unwrap(), 0.0);
        assert!(energy(&ModalState::zeros(2), &modes).is_err());
    }

    #[test]
    fn simulation_is_deterministic() {
        let modes = unit_dirichlet(3);
        let grid = TimeGrid::new(1.0, 16).unwrap();
        let ch = assemble_channel_matrix(&modes, &DMatrix::from_element(3, 1, 1.0), &DMatrix::from_element(2, 3, 1.0), &grid)
            .unwrap();
        let x = DMatrix::from_element(1, 16, 0.5);
        let a = simulate_output(&ch, &x, 11).unwrap();
        let b = simulate_output(&ch, &x, 11).unwrap();
        assert_eq!(a, b);
        let c = simulate_output(&ch, &x, 12).unwrap();
        assert_ne!(a, c);
    }
}
