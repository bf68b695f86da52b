use nalgebra::DMatrix;
use proptest::prelude::*;
use wavecap_core::channel::{
    assemble_channel_matrix, distributed_couplings, energy, evolve_modes, simulate_output, ChannelOperator, ModalState,
};
use wavecap_core::geometry::{BoundaryCondition, Domain, PatchFunction, Profile, Region};
use wavecap_core::grid::TimeGrid;
use wavecap_core::kernel::girsanov_log_rnd;
use wavecap_core::modes::build_modes;

fn box_patch(lo: &[f64], hi: &[f64], profile: Profile) -> PatchFunction {
    PatchFunction::new(Region::new(lo.to_vec(), hi.to_vec()).unwrap(), profile, 1.0)
}

fn plate_channel(modes: usize, grid: TimeGrid, profile: Profile) -> ChannelOperator {
    let domain = Domain::new(vec![1.0, 0.6], 1.0).unwrap();
    let modes = build_modes(&domain, BoundaryCondition::Neumann, modes).unwrap();
    let inputs = [
        box_patch(&[0.1, 0.1], &[0.3, 0.3], profile.clone()),
        box_patch(&[0.5, 0.2], &[0.7, 0.5], profile.clone()),
    ];
    let sensors = [box_patch(&[0.6, 0.0], &[0.9, 0.2], profile.clone()), box_patch(&[0.2, 0.4], &[0.4, 0.6], profile)];
    let (b, g) = distributed_couplings(&modes, &inputs, &sensors).unwrap();
    assemble_channel_matrix(&modes, &b, &g, &grid).unwrap()
}

fn small_channel() -> ChannelOperator {
    plate_channel(10, TimeGrid::new(1.5, 12).unwrap(), Profile::constant())
}

fn input_strategy(len: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-5.0..5.0f64, len)
}

proptest! {
    #[test]
    fn causality(x in input_strategy(24), cut in 0usize..12) {
        let channel = small_channel();
        let x = DMatrix::from_vec(2, 12, x);
        let mut truncated = x.clone();
        for j in cut + 1..12 {
            truncated.column_mut(j).fill(0.0);
        }
        let full = channel.apply(&x).unwrap();
        let cut_drift = channel.apply(&truncated).unwrap();
        for j in 0..=cut {
            for s in 0..2 {
                prop_assert_eq!(full[(s, j)], cut_drift[(s, j)]);
            }
        }
    }

    #[test]
    fn linearity(x in input_strategy(24), y in input_strategy(24), a in -3.0..3.0f64, b in -3.0..3.0f64) {
        let channel = small_channel();
        let x = DMatrix::from_vec(2, 12, x);
        let y = DMatrix::from_vec(2, 12, y);
        let combined = channel.apply(&(&x * a + &y * b)).unwrap();
        let separate = channel.apply(&x).unwrap() * a + channel.apply(&y).unwrap() * b;
        let scale = 1.0 + separate.amax();
        prop_assert!((combined - separate).amax() <= 1e-12 * scale);
    }
}

#[test]
fn upper_blocks_vanish() {
    let channel = small_channel();
    for j in 0..12 {
        for l in j + 1..12 {
            assert_eq!(channel.block(j, l).amax(), 0.0);
        }
    }
}

#[test]
fn neumann_energy_is_conserved_with_a_constant_mode() {
    let domain = Domain::new(vec![1.0, 0.6], 1.0).unwrap();
    let modes = build_modes(&domain, BoundaryCondition::Neumann, 20).unwrap();
    let grid = TimeGrid::new(30.0, 10_000).unwrap();
    let initial = ModalState {
        amplitude: (0..20).map(|k| (k as f64 * 0.7).sin()).collect(),
        velocity: (0..20).map(|k| if k == 0 { 0.0 } else { (k as f64 * 1.3).cos() }).collect(),
    };
    let states = evolve_modes(&modes, &initial, &DMatrix::zeros(20, grid.steps()), &grid).unwrap();
    let e0 = energy(&initial, &modes).unwrap();
    for s in &states {
        assert!((energy(s, &modes).unwrap() - e0).abs() <= 1e-10 * e0);
    }
}

#[test]
fn mode_truncation_tail_shrinks() {
    let grid = TimeGrid::new(1.0, 32).unwrap();
    let x = DMatrix::from_fn(2, 32, |i, j| ((i + 1) as f64 * 0.3 * j as f64).sin());
    // smooth patches so the modal coefficients decay
    let drift = |k: usize| plate_channel(k, grid, Profile::bump(3)).apply(&x).unwrap();
    let (d8, d16, d32, d64) = (drift(8), drift(16), drift(32), drift(64));
    let tail = [(&d16 - &d8).norm(), (&d32 - &d16).norm(), (&d64 - &d32).norm()];
    assert!(tail[0] > tail[1] && tail[1] > tail[2], "{tail:?}");
}

#[test]
fn receiver_noise_has_covariance_dt_identity() {
    let grid = TimeGrid::new(1.0, 4).unwrap();
    let channel = ChannelOperator::from_matrix(DMatrix::zeros(4, 4), 1, 1, grid).unwrap();
    let x = DMatrix::zeros(1, 4);
    let paths = 100_000;
    let mut second = DMatrix::<f64>::zeros(4, 4);
    for seed in 0..paths {
        let dy = simulate_output(&channel, &x, seed).unwrap();
        let v = dy.row(0).transpose();
        second += &v * v.transpose();
    }
    second /= paths as f64;
    let dt = grid.dt();
    // standard error of a variance estimate is dt √(2/n), of a covariance dt/√n
    for a in 0..4 {
        for b in 0..4 {
            let target = if a == b { dt } else { 0.0 };
            let se = if a == b { dt * (2.0 / paths as f64).sqrt() } else { dt / (paths as f64).sqrt() };
            assert!((second[(a, b)] - target).abs() <= 4.0 * se, "({a},{b}) {}", second[(a, b)]);
        }
    }
}

fn girsanov_setup() -> (ChannelOperator, DMatrix<f64>, f64) {
    let channel = plate_channel(6, TimeGrid::new(1.0, 8).unwrap(), Profile::constant());
    let x = DMatrix::from_fn(2, 8, |i, j| if i == 0 { 750.0 } else { (j as f64).cos() * 500.0 });
    let drift = channel.apply(&x).unwrap();
    let half_energy = 0.5 * drift.norm_squared() * channel.grid().dt();
    // large enough to detect a wrong sign, small enough for a tame ratio
    assert!((0.05..2.0).contains(&half_energy), "{half_energy}");
    (channel, x, half_energy)
}

fn mean_and_se(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

#[test]
fn girsanov_expectations() {
    let (channel, x, half_energy) = girsanov_setup();
    let zero = DMatrix::zeros(2, 8);
    let under_signal: Vec<f64> = (0..20_000)
        .map(|s| girsanov_log_rnd(&channel, &x, &simulate_output(&channel, &x, s).unwrap()).unwrap())
        .collect();
    let under_null: Vec<f64> = (0..20_000)
        .map(|s| girsanov_log_rnd(&channel, &x, &simulate_output(&channel, &zero, 1_000_000 + s).unwrap()).unwrap())
        .collect();
    let (m1, se1) = mean_and_se(&under_signal);
    let (m0, se0) = mean_and_se(&under_null);
    assert!((m1 - half_energy).abs() <= 3.0 * se1, "{m1} vs {half_energy} ± {se1}");
    assert!((m0 + half_energy).abs() <= 3.0 * se0, "{m0} vs {} ± {se0}", -half_energy);
}

#[test]
fn likelihood_ratio_is_a_martingale() {
    let (channel, x, _) = girsanov_setup();
    let zero = DMatrix::zeros(2, 8);
    let ratios: Vec<f64> = (0..100_000)
        .map(|s| {
            girsanov_log_rnd(&channel, &x, &simulate_output(&channel, &zero, s).unwrap())
                .unwrap()
                .exp()
        })
        .collect();
    let (mean, se) = mean_and_se(&ratios);
    assert!((mean - 1.0).abs() <= 3.0 * se, "{mean} ± {se}");
}
