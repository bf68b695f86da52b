//! Shared quadrature rules: composite Gauss-Legendre on intervals and
//! Gauss-Hermite rules for standard-normal expectations.

use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

use gauss_quad::hermite::GaussHermite;
use gauss_quad::legendre::GaussLegendre;

const PANEL_ORDER: usize = 16;
const MAX_PANELS: usize = 1 << 14;

fn legendre_panel() -> &'static [(f64, f64)] {
    static RULE: OnceLock<Vec<(f64, f64)>> = OnceLock::new();
    RULE.get_or_init(|| {
        let rule = GaussLegendre::new(PANEL_ORDER).expect("order >= 2");
        rule.into_iter().collect()
    })
}

/// Composite 16-point Gauss-Legendre with `panels` equal panels.
pub fn gauss_legendre<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, panels: usize) -> f64 {
    let rule = legendre_panel();
    let h = (b - a) / panels as f64;
    let mut total = 0.0;
    for p in 0..panels {
        let lo = a + p as f64 * h;
        let mid = lo + 0.5 * h;
        let mut acc = 0.0;
        for &(x, w) in rule {
            acc += w * f(mid + 0.5 * h * x);
        }
        total += 0.5 * h * acc;
    }
    total
}

/// Integral of `f` over `[a, b]`, doubling the panel count until two
/// successive composite rules agree to `rel_tol` relative to `∫|f|`.
///
/// `min_panels` seeds the refinement; pass at least one panel per
/// oscillation of the integrand.
pub fn integrate<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, rel_tol: f64, min_panels: usize) -> f64 {
    if a == b {
        return 0.0;
    }
    let mut panels = min_panels.max(1);
    let mut prev = gauss_legendre(&f, a, b, panels);
    loop {
        panels *= 2;
        let next = gauss_legendre(&f, a, b, panels);
        let scale = gauss_legendre(&|x: f64| f(x).abs(), a, b, panels);
        if (next - prev).abs() <= rel_tol * scale || scale == 0.0 || panels >= MAX_PANELS {
            return next;
        }
        prev = next;
    }
}

/// Gauss-Hermite nodes and weights rescaled for `E[f(Z)]`, `Z ~ N(0, 1)`:
/// `E[f(Z)] ≈ Σ w_i f(z_i)` with `Σ w_i = 1`.
pub fn standard_normal_rule(order: usize) -> Arc<Vec<(f64, f64)>> {
    type Cache = Mutex<HashMap<usize, Arc<Vec<(f64, f64)>>>>;
    static CACHE: OnceLock<Cache> = OnceLock::new();
    let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
    let mut guard = cache.lock().expect("quadrature cache poisoned");
    guard
        .entry(order)
        .or_insert_with(|| {
            let rule = GaussHermite::new(order.max(2)).expect("order >= 2");
            let norm = std::f64::consts::PI.sqrt();
            Arc::new(
                rule.into_iter()
                    .map(|(x, w)| (std::f64::consts::SQRT_2 * x, w / norm))
                    .collect(),
            )
        })
        .clone()
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn legendre_integrates_trig() {
        let v = integrate(|x: f64| x.sin(), 0.0, PI, 1e-13, 1);
        assert!((v - 2.0).abs() < 1e-13);
        let v = integrate(|x: f64| (40.0 * x).cos().powi(2), 0.0, 1.0, 1e-12, 8);
        let exact = 0.5 + (80.0f64).sin() / 160.0;
        assert!((v - exact).abs() < 1e-12);
    }

    #[test]
    fn hermite_moments() {
        for order in [8, 40, 200] {
            let rule = standard_normal_rule(order);
            let m0: f64 = rule.iter().map(|(_, w)| w).sum();
            let m2: f64 = rule.iter().map(|(z, w)| w * z * z).sum();
            let m4: f64 = rule.iter().map(|(z, w)| w * z.powi(4)).sum();
            assert!((m0 - 1.0).abs() < 1e-12, "order {order}: {m0}");
            assert!((m2 - 1.0).abs() < 1e-11);
            assert!((m4 - 3.0).abs() < 1e-10);
        }
    }
}
