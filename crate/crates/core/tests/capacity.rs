use std::f64::consts::{E, PI};

use proptest::prelude::*;
use wavecap_core::capacity::{
    optimize_blahut_arimoto, optimize_capacity_gradient, project_feasible, support, verify_optimality, Estimator,
    FeasibleSet, Objective, OptimizerOptions,
};
use wavecap_core::kernel::ReducedKernel;
use wavecap_core::weights::SourceWeights;

fn objective(points: &[&[f64]]) -> Objective {
    let reduced = ReducedKernel::from_points(points.iter().map(|p| p.to_vec()).collect()).unwrap();
    Objective::new(reduced, Estimator::Quadrature).unwrap()
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Feasible points of the 2-simplex on a lattice of spacing `1/n`.
fn simplex_lattice(feasible: &FeasibleSet, n: usize) -> Vec<[f64; 3]> {
    let mut out = Vec::new();
    for i in 0..=n {
        for j in 0..=n - i {
            let p = [i as f64 / n as f64, j as f64 / n as f64, (n - i - j) as f64 / n as f64];
            if feasible.contains(&p, 1e-12) {
                out.push(p);
            }
        }
    }
    out
}

/// Binary mixture information `h(½N(-d/2,1) + ½N(d/2,1)) - h(N(0,1))` by the trapezoid rule.
fn antipodal_oracle(d: f64) -> f64 {
    let (lo, hi, n) = (-d / 2.0 - 12.0, d / 2.0 + 12.0, 200_000);
    let h = (hi - lo) / n as f64;
    let mut acc = 0.0;
    for i in 0..=n {
        let y = lo + i as f64 * h;
        let phi = |m: f64| (-(y - m) * (y - m) / 2.0).exp() / (2.0 * PI).sqrt();
        let p = 0.5 * phi(-d / 2.0) + 0.5 * phi(d / 2.0);
        let t = if p > 0.0 { -p * p.ln() } else { 0.0 };
        acc += if i == 0 || i == n { 0.5 * t } else { t };
    }
    acc * h - 0.5 * (2.0 * PI * E).ln()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn projection_is_idempotent_and_feasible(
        raw in prop::collection::vec(-2.0..2.0f64, 3),
        e in prop::collection::vec(0.0..4.0f64, 3),
        frac in 0.1..1.0f64,
    ) {
        let lo = e.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = e.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let fs = FeasibleSet::new(e, Some(lo + frac * (hi - lo) + 1e-3)).unwrap();
        let p = project_feasible(&raw, &fs).unwrap();
        prop_assert!(fs.contains(p.as_slice(), 1e-10));
        let again = project_feasible(p.as_slice(), &fs).unwrap();
        prop_assert!(dist(p.as_slice(), again.as_slice()) <= 1e-12);
    }

    #[test]
    fn projection_beats_every_lattice_point(
        raw in prop::collection::vec(-1.5..1.5f64, 3),
        e in prop::collection::vec(0.0..4.0f64, 3),
        frac in 0.2..1.0f64,
    ) {
        let lo = e.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = e.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let fs = FeasibleSet::new(e, Some(lo + frac * (hi - lo) + 1e-3)).unwrap();
        let p = project_feasible(&raw, &fs).unwrap();
        let p = p.as_slice();
        let to_p = dist(&raw, p);
        for g in simplex_lattice(&fs, 60) {
            // closest point, and a contraction towards every feasible point
            prop_assert!(to_p <= dist(&raw, &g) + 1e-10);
            prop_assert!(dist(p, &g) <= dist(&raw, &g) + 1e-10);
        }
    }
}

#[test]
fn antipodal_pair_matches_the_oracle() {
    let obj = objective(&[&[-1.2], &[1.2]]);
    let fs = FeasibleSet::unconstrained(2);
    let r = optimize_capacity_gradient(&obj, &fs, &OptimizerOptions::default(), None).unwrap();
    assert!(r.converged);
    assert!((r.weights.as_slice()[0] - 0.5).abs() <= 1e-6);
    assert!((r.capacity - antipodal_oracle(2.4)).abs() <= 1e-6, "{} vs {}", r.capacity, antipodal_oracle(2.4));
}

#[test]
fn budgeted_results_are_feasible() {
    let obj = objective(&[&[0.0, 0.0], &[2.0, 0.5], &[-0.5, 2.5], &[1.5, 1.5]]);
    let fs = FeasibleSet::new(vec![0.0, 4.25, 6.5, 4.5], Some(2.0)).unwrap();
    for r in [
        optimize_capacity_gradient(&obj, &fs, &OptimizerOptions::default(), None).unwrap(),
        optimize_blahut_arimoto(&obj, &fs, &OptimizerOptions::default(), None).unwrap(),
    ] {
        assert!(r.converged, "{:?}", r.algorithm);
        assert!(fs.contains(r.weights.as_slice(), 1e-10));
        assert!(fs.power(r.weights.as_slice()) <= 2.0 + 1e-10);
    }
}

#[test]
fn duplicated_symbol_leaves_capacity_unchanged() {
    let fs2 = FeasibleSet::unconstrained(2);
    let fs3 = FeasibleSet::unconstrained(3);
    let opts = OptimizerOptions::default();
    let pair = optimize_capacity_gradient(&objective(&[&[0.0], &[1.7]]), &fs2, &opts, None).unwrap();
    let triple = optimize_capacity_gradient(&objective(&[&[0.0], &[1.7], &[1.7]]), &fs3, &opts, None).unwrap();
    assert!((pair.capacity - triple.capacity).abs() <= 1e-6);
    let w = triple.weights.as_slice();
    assert!((w[1] + w[2] - pair.weights.as_slice()[1]).abs() <= 1e-4);
    assert!(pair.unique_weights);
    assert!(!triple.unique_weights);
}

#[test]
fn optimum_does_not_depend_on_the_start() {
    let obj = objective(&[&[0.0, 0.0], &[1.8, 0.2], &[0.3, 1.6]]);
    let fs = FeasibleSet::unconstrained(3);
    let opts = OptimizerOptions::default();
    let starts = [[0.8, 0.1, 0.1], [0.1, 0.1, 0.8], [0.2, 0.7, 0.1]];
    let results: Vec<_> = starts
        .iter()
        .map(|s| {
            let s = SourceWeights::new(s.to_vec()).unwrap();
            optimize_capacity_gradient(&obj, &fs, &opts, Some(&s)).unwrap()
        })
        .collect();
    for r in &results[1..] {
        let l1: f64 = r.weights.as_slice().iter().zip(results[0].weights.as_slice()).map(|(a, b)| (a - b).abs()).sum();
        assert!(l1 <= 1e-4, "{l1}");
    }
}

#[test]
fn kkt_structure_without_budget() {
    // the middle point is dominated and should carry no weight
    let obj = objective(&[&[-1.5], &[0.0], &[1.5]]);
    let fs = FeasibleSet::unconstrained(3);
    let r = optimize_capacity_gradient(&obj, &fs, &OptimizerOptions::default(), None).unwrap();
    let on = support(&r.weights);
    let level = r.marginals[on[0]];
    for k in 0..3 {
        if on.contains(&k) {
            assert!((r.marginals[k] - level).abs() <= 1e-5, "{:?}", r.marginals);
        } else {
            assert!(r.marginals[k] <= level + 1e-5, "{:?}", r.marginals);
        }
    }
    assert!((level - r.capacity).abs() <= 1e-5);
}

#[test]
fn kkt_structure_with_active_budget() {
    let obj = objective(&[&[0.0], &[1.0], &[3.0]]);
    let energies = vec![0.0, 1.0, 9.0];
    let fs = FeasibleSet::new(energies.clone(), Some(1.5)).unwrap();
    let r = optimize_capacity_gradient(&obj, &fs, &OptimizerOptions { tol: Some(1e-9), ..Default::default() }, None)
        .unwrap();
    assert!((fs.power(r.weights.as_slice()) - 1.5).abs() <= 1e-8, "budget should bind");
    let on = support(&r.weights);
    assert!(on.len() >= 2);
    // the multiplier is fixed by two support points
    let (a, b) = (on[0], on[1]);
    let lambda = (r.marginals[b] - r.marginals[a]) / (energies[b] - energies[a]);
    assert!(lambda >= -1e-6);
    let level = r.marginals[a] - lambda * energies[a];
    for (k, e) in energies.iter().enumerate() {
        let shifted = r.marginals[k] - lambda * e;
        if on.contains(&k) {
            assert!((shifted - level).abs() <= 1e-5);
        } else {
            assert!(shifted <= level + 1e-5);
        }
    }
}

#[test]
fn gradient_trace_ascends() {
    let obj = objective(&[&[0.0, 0.0], &[2.0, 0.5], &[-0.5, 2.5], &[0.4, 0.3]]);
    let fs = FeasibleSet::unconstrained(4);
    let start = SourceWeights::new(vec![0.7, 0.1, 0.1, 0.1]).unwrap();
    let r = optimize_capacity_gradient(&obj, &fs, &OptimizerOptions::default(), Some(&start)).unwrap();
    assert!(r.trace.len() > 2);
    for pair in r.trace.windows(2) {
        assert!(pair[1].value >= pair[0].value - 1e-12, "{} then {}", pair[0].value, pair[1].value);
    }
}

#[test]
fn algorithms_agree_and_verify() {
    let obj = objective(&[&[0.0, 0.0], &[1.2, 0.9], &[-0.8, 1.4], &[0.9, -1.1]]);
    let fs = FeasibleSet::new(vec![0.0, 2.25, 2.6, 2.02], Some(1.2)).unwrap();
    let opts = OptimizerOptions::default();
    let g = optimize_capacity_gradient(&obj, &fs, &opts, None).unwrap();
    let ba = optimize_blahut_arimoto(&obj, &fs, &opts, None).unwrap();
    assert!((g.capacity - ba.capacity).abs() <= 1e-4);
    for r in [&g, &ba] {
        let report = verify_optimality(&obj, &r.weights, &fs, None).unwrap();
        assert!(report.pass, "{:?}: {}", r.algorithm, report.max_violation);
    }
}

#[test]
fn monte_carlo_optimum_verifies_at_three_standard_errors() {
    let points: Vec<Vec<f64>> = vec![vec![0.0, 0.0, 0.0], vec![1.5, 0.2, 0.1], vec![0.1, 1.4, 0.6]];
    let mc = Objective::new(
        ReducedKernel::from_points(points.clone()).unwrap(),
        Estimator::MonteCarlo { samples: 100_000, seed: 5 },
    )
    .unwrap();
    let fs = FeasibleSet::unconstrained(3);
    let r = optimize_capacity_gradient(&mc, &fs, &OptimizerOptions::default(), None).unwrap();
    assert!(r.converged);
    assert!(r.stderr > 0.0);
    let report = verify_optimality(&mc, &r.weights, &fs, None).unwrap();
    assert!(report.pass, "{} > {}", report.max_violation, report.tolerance);

    // a fresh stream should see the same value up to its own noise
    let fresh = Objective::new(
        ReducedKernel::from_points(points).unwrap(),
        Estimator::MonteCarlo { samples: 100_000, seed: 77 },
    )
    .unwrap();
    let e = fresh.evaluate(&r.weights).unwrap();
    assert!((e.value - r.capacity).abs() <= 3.0 * (e.stderr * e.stderr + r.stderr * r.stderr).sqrt());
}

#[test]
fn capacity_is_bounded_by_log_alphabet_size() {
    let obj = objective(&[&[0.0, 0.0], &[9.0, 0.0], &[0.0, 9.0], &[9.0, 9.0]]);
    let r = optimize_capacity_gradient(&obj, &FeasibleSet::unconstrained(4), &OptimizerOptions::default(), None).unwrap();
    assert!(r.capacity <= 4f64.ln() + 1e-9);
    assert!(r.capacity >= 4f64.ln() - 0.05, "well separated symbols should approach log 4");
}
