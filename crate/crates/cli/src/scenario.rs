//! Assembly of a validated configuration into channel, alphabet and kernel.

use nalgebra::DMatrix;
use wavecap_core::capacity::FeasibleSet;
use wavecap_core::channel::{assemble_channel_matrix, distributed_couplings, ChannelOperator};
use wavecap_core::geometry::{Domain, PatchFunction, Profile, Region};
use wavecap_core::grid::TimeGrid;
use wavecap_core::kernel::{source_noise_covariance_q2, ChannelKernel, NoiseSpec, SignalAlphabet, SourceNoiseCovariance};
use wavecap_core::modes::{build_modes, ModeSet};
use wavecap_core::rng::{fill_standard_normal, stream_rng};
use wavecap_core::transposition::{boundary_couplings, BoundaryPatch, Face};
use wavecap_core::Result;

use crate::config::{AlphabetConfig, Config, PatchConfig, SourceConfig};

pub struct Scenario {
    pub modes: ModeSet,
    pub grid: TimeGrid,
    /// K×n modal input couplings.
    pub input_coupling: DMatrix<f64>,
    /// m×K sensor couplings.
    pub sensor_coupling: DMatrix<f64>,
    pub channel: ChannelOperator,
    pub alphabet: SignalAlphabet,
    pub source_noise: Option<SourceNoiseCovariance>,
    pub kernel: ChannelKernel,
    pub feasible: FeasibleSet,
}

fn patch(p: &PatchConfig) -> Result<PatchFunction> {
    Ok(PatchFunction::new(
        Region::new(p.lo.clone(), p.hi.clone())?,
        Profile::separable(p.profile.clone()),
        p.amplitude,
    ))
}

pub fn build_alphabet(config: &AlphabetConfig, inputs: usize, grid: &TimeGrid) -> Result<SignalAlphabet> {
    let n = grid.steps();
    let symbols = match config {
        AlphabetConfig::Explicit { symbols } => symbols
            .iter()
            .map(|s| DMatrix::from_fn(inputs, n, |i, j| s[i][j]))
            .collect(),
        AlphabetConfig::Antipodal { amplitude } => vec![
            DMatrix::from_element(inputs, n, *amplitude),
            DMatrix::from_element(inputs, n, -*amplitude),
        ],
        AlphabetConfig::OrthogonalTones { count, amplitude } => (1..=*count)
            .map(|p| {
                DMatrix::from_fn(inputs, n, |_, j| {
                    let t = (j as f64 + 0.5) / n as f64;
                    amplitude * std::f64::consts::SQRT_2 * (2.0 * std::f64::consts::PI * p as f64 * t).cos()
                })
            })
            .collect(),
        AlphabetConfig::Random { count, amplitude, seed } => (0..*count)
            .map(|k| {
                let mut rng = stream_rng(*seed, k as u64);
                let mut v = vec![0.0; inputs * n];
                fill_standard_normal(&mut rng, &mut v);
                DMatrix::from_vec(inputs, n, v) * *amplitude
            })
            .collect(),
    };
    SignalAlphabet::new(symbols, *grid)
}

/// Builds the scenario, with optional overrides for the budget and the
/// source-noise gain (used by sweeps).
pub fn build(config: &Config, budget: Option<f64>, noise_gain: Option<f64>) -> Result<Scenario> {
    let domain = Domain::new(config.domain.lengths.clone(), config.domain.wave_speed)?;
    let modes = build_modes(&domain, config.domain.boundary, config.modes)?;
    let grid = TimeGrid::new(config.grid.horizon, config.grid.steps)?;
    let sensors: Vec<PatchFunction> = config.sensors.iter().map(patch).collect::<Result<_>>()?;
    let (input_coupling, sensor_coupling) = match &config.source {
        SourceConfig::Distributed(inputs) => {
            let inputs: Vec<PatchFunction> = inputs.iter().map(patch).collect::<Result<_>>()?;
            distributed_couplings(&modes, &inputs, &sensors)?
        }
        SourceConfig::Boundary(patches) => {
            let (_, g) = distributed_couplings(&modes, &[], &sensors)?;
            let patches: Vec<BoundaryPatch> = patches
                .iter()
                .map(|p| {
                    BoundaryPatch::new(
                        &domain,
                        Face {
                            axis: p.axis,
                            side: p.side,
                        },
                        &p.lo,
                        &p.hi,
                        Profile::separable(p.profile.clone()),
                        p.amplitude,
                    )
                })
                .collect::<Result<_>>()?;
            (boundary_couplings(&modes, &patches)?, g)
        }
    };
    let channel = assemble_channel_matrix(&modes, &input_coupling, &sensor_coupling, &grid)?;
    let alphabet = build_alphabet(&config.alphabet, config.source.inputs(), &grid)?;
    let gain = noise_gain.unwrap_or(config.noise.source_gain);
    let (kernel, source_noise) = if gain > 0.0 {
        let q2 = source_noise_covariance_q2(&modes, &NoiseSpec::uniform(modes.len(), gain), &sensor_coupling, &grid)?;
        (ChannelKernel::with_source_noise(&channel, &alphabet, &q2)?, Some(q2))
    } else {
        (ChannelKernel::new(&channel, &alphabet)?, None)
    };
    let feasible = FeasibleSet::new(alphabet.energies(), budget.or(config.budget))?;
    Ok(Scenario {
        modes,
        grid,
        input_coupling,
        sensor_coupling,
        channel,
        alphabet,
        source_noise,
        kernel,
        feasible,
    })
}
