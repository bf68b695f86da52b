//! Exact propagation of `ä + ω² a = f` for forcing held constant on each
//! step. Every modal amplitude in the crate goes through this module.

use crate::error::{check_dim, Error, Result};
use crate::grid::TimeGrid;

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct OscillatorState {
    pub position: f64,
    pub velocity: f64,
}

impl OscillatorState {
    pub fn new(position: f64, velocity: f64) -> Self {
        Self { position, velocity }
    }
}

/// Step coefficients for a fixed `ω` and step length `h`.
#[derive(Debug, Clone, Copy)]
pub struct Propagator {
    omega: f64,
    h: f64,
    cos: f64,
    /// sin(ωh)/ω, `h` at ω = 0
    sin_over: f64,
    /// (1 - cos ωh)/ω², `h²/2` at ω = 0
    versine_over: f64,
}

impl Propagator {
    pub fn new(omega: f64, h: f64) -> Self {
        let (cos, sin_over, versine_over) = coefficients(omega, h);
        Self {
            omega,
            h,
            cos,
            sin_over,
            versine_over,
        }
    }

    pub fn step(&self, s: OscillatorState, forcing: f64) -> OscillatorState {
        let w2 = self.omega * self.omega;
        OscillatorState {
            position: s.position * self.cos + s.velocity * self.sin_over + forcing * self.versine_over,
            velocity: -s.position * w2 * self.sin_over + s.velocity * self.cos + forcing * self.sin_over,
        }
    }

    /// State a time `offset` (in `[0, h]`) after `s` under constant forcing.
    pub fn advance(&self, s: OscillatorState, forcing: f64, offset: f64) -> OscillatorState {
        Propagator::new(self.omega, offset).step(s, forcing)
    }

    /// `∫_0^h a(τ) dτ` over one step starting from `s`.
    pub fn step_integral(&self, s: OscillatorState, forcing: f64) -> f64 {
        let (w, h) = (self.omega, self.h);
        let x = w * h;
        // (h - sin(ωh)/ω)/ω²
        let cubic = if x.abs() < 1e-2 {
            let h3 = h * h * h;
            let x2 = x * x;
            h3 * (1.0 / 6.0 - x2 / 120.0 + x2 * x2 / 5040.0 - x2 * x2 * x2 / 362_880.0)
        } else {
            (h - self.sin_over) / (w * w)
        };
        s.position * self.sin_over + s.velocity * self.versine_over + forcing * cubic
    }
}

fn coefficients(omega: f64, h: f64) -> (f64, f64, f64) {
    if omega == 0.0 {
        return (1.0, h, 0.5 * h * h);
    }
    let x = omega * h;
    let half = (0.5 * x).sin();
    (x.cos(), x.sin() / omega, 2.0 * half * half / (omega * omega))
}

/// Positions and velocities at the grid nodes `t_0, ..., t_N`.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub position: Vec<f64>,
    pub velocity: Vec<f64>,
}

impl Trajectory {
    pub fn state(&self, j: usize) -> OscillatorState {
        OscillatorState::new(self.position[j], self.velocity[j])
    }
}

/// Response from rest to `forcing` (one value per step).
pub fn oscillator_response(omega: f64, forcing: &[f64], grid: &TimeGrid) -> Result<Trajectory> {
    oscillator_response_from(omega, OscillatorState::default(), forcing, grid)
}

pub fn oscillator_response_from(
    omega: f64,
    initial: OscillatorState,
    forcing: &[f64],
    grid: &TimeGrid,
) -> Result<Trajectory> {
    check_dim("oscillator forcing samples", grid.steps(), forcing.len())?;
    if !(omega.is_finite() && omega >= 0.0) {
        return Err(Error::InvalidArgument(format!("frequency must be >= 0, got {omega}")));
    }
    let prop = Propagator::new(omega, grid.dt());
    let mut position = Vec::with_capacity(forcing.len() + 1);
    let mut velocity = Vec::with_capacity(forcing.len() + 1);
    let mut s = initial;
    position.push(s.position);
    velocity.push(s.velocity);
    for &f in forcing {
        s = prop.step(s, f);
        position.push(s.position);
        velocity.push(s.velocity);
    }
    Ok(Trajectory { position, velocity })
}
