//! Numerical integration: adaptive Gauss–Kronrod on (possibly infinite)
//! intervals and Gauss–Hermite rules.

use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_18,
    0.140_653_259_715_525_92,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_83,
];
const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

#[derive(Debug, Clone, Copy)]
pub struct Quadrature {
    pub value: f64,
    pub error: f64,
}

fn gk15<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64) -> (f64, f64) {
    let center = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    let fc = f(center);
    let mut kronrod = fc * WGK[7];
    let mut gauss = fc * WG[3];
    for j in 0..7 {
        let dx = half * XGK[j];
        let sum = f(center - dx) + f(center + dx);
        kronrod += WGK[j] * sum;
        if j % 2 == 1 {
            gauss += WG[j / 2] * sum;
        }
    }
    (kronrod * half, ((kronrod - gauss) * half).abs())
}

/// Globally adaptive G7/K15 integration of `f` over `[a, b]`; either bound may
/// be infinite. Stops when the estimated error is below
/// `max(abs_tol, rel_tol·|I|)` or after 5000 subdivisions.
pub fn integrate<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, abs_tol: f64, rel_tol: f64) -> Quadrature {
    if a == b {
        return Quadrature { value: 0.0, error: 0.0 };
    }
    if a > b {
        let q = integrate(f, b, a, abs_tol, rel_tol);
        return Quadrature { value: -q.value, error: q.error };
    }
    match (a.is_finite(), b.is_finite()) {
        (true, true) => adaptive(&f, a, b, abs_tol, rel_tol),
        (true, false) => {
            let g = |t: f64| {
                let s = 1.0 - t;
                let v = f(a + t / s);
                if v == 0.0 { 0.0 } else { v / (s * s) }
            };
            adaptive(&g, 0.0, 1.0, abs_tol, rel_tol)
        }
        (false, true) => {
            let g = |t: f64| {
                let v = f(b - (1.0 - t) / t);
                if v == 0.0 { 0.0 } else { v / (t * t) }
            };
            adaptive(&g, 0.0, 1.0, abs_tol, rel_tol)
        }
        (false, false) => {
            let g = |t: f64| {
                let s = 1.0 - t * t;
                let v = f(t / s);
                if v == 0.0 { 0.0 } else { v * (1.0 + t * t) / (s * s) }
            };
            adaptive(&g, -1.0, 1.0, abs_tol, rel_tol)
        }
    }
}

/// Integrate over `[a, b]` split at the given interior breakpoints, which is
/// where step-function integrands jump.
pub fn integrate_pieces<F: Fn(f64) -> f64>(
    f: F,
    a: f64,
    b: f64,
    breaks: &[f64],
    abs_tol: f64,
    rel_tol: f64,
) -> Quadrature {
    let mut points = vec![a];
    let mut inner: Vec<f64> = breaks.iter().copied().filter(|p| *p > a && *p < b).collect();
    inner.sort_by(|x, y| x.partial_cmp(y).unwrap());
    inner.dedup();
    points.extend(inner);
    points.push(b);
    let mut total = Quadrature { value: 0.0, error: 0.0 };
    for w in points.windows(2) {
        let q = integrate(&f, w[0], w[1], abs_tol, rel_tol);
        total.value += q.value;
        total.error += q.error;
    }
    total
}

/// Non-adaptive sum of 15-point Kronrod rules over consecutive panels.
pub fn integrate_panels<F: Fn(f64) -> f64>(f: F, edges: &[f64]) -> f64 {
    edges.windows(2).map(|w| gk15(&f, w[0], w[1]).0).sum()
}

fn adaptive<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, abs_tol: f64, rel_tol: f64) -> Quadrature {
    const MAX_SEGMENTS: usize = 5000;
    let (v, e) = gk15(f, a, b);
    let mut segments = vec![(a, b, v, e)];
    let mut value = v;
    let mut error = e;
    while error > abs_tol.max(rel_tol * value.abs()) && segments.len() < MAX_SEGMENTS {
        let (idx, _) = segments
            .iter()
            .enumerate()
            .max_by(|x, y| x.1 .3.partial_cmp(&y.1 .3).unwrap())
            .expect("nonempty");
        let (lo, hi, v0, e0) = segments.swap_remove(idx);
        let mid = 0.5 * (lo + hi);
        if !(mid > lo && mid < hi) {
            // Interval exhausted at machine precision.
            segments.push((lo, hi, v0, 0.0));
            error -= e0;
            continue;
        }
        let (v1, e1) = gk15(f, lo, mid);
        let (v2, e2) = gk15(f, mid, hi);
        value += v1 + v2 - v0;
        error += e1 + e2 - e0;
        segments.push((lo, mid, v1, e1));
        segments.push((mid, hi, v2, e2));
    }
    // Re-sum to shed drift from the incremental updates.
    let value = segments.iter().map(|s| s.2).sum();
    let error = segments.iter().map(|s| s.3).sum();
    Quadrature { value, error }
}

/// Gauss–Hermite rule for ∫ e^{-t²} g(t) dt.
#[derive(Debug, Clone)]
pub struct GaussHermite {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
    /// ln of each weight divided by √π, so Σ exp(log_weights) = 1.
    pub log_weights: Vec<f64>,
}

impl GaussHermite {
    pub fn new(order: usize) -> Self {
        assert!(order >= 1, "Gauss-Hermite order must be positive");
        let n = order;
        let mut x = vec![0.0; n];
        let mut w = vec![0.0; n];
        let pim4 = std::f64::consts::PI.powf(-0.25);
        let m = n.div_ceil(2);
        let mut z = 0.0f64;
        for i in 0..m {
            z = match i {
                0 => (2.0 * n as f64 + 1.0).sqrt() - 1.85575 * (2.0 * n as f64 + 1.0).powf(-1.0 / 6.0),
                1 => z - 1.14 * (n as f64).powf(0.426) / z,
                2 => 1.86 * z - 0.86 * x[0],
                3 => 1.91 * z - 0.91 * x[1],
                _ => 2.0 * z - x[i - 2],
            };
            let mut pp = 0.0;
            for _ in 0..100 {
                let mut p1 = pim4;
                let mut p2 = 0.0;
                for j in 0..n {
                    let p3 = p2;
                    p2 = p1;
                    let jf = j as f64;
                    p1 = z * (2.0 / (jf + 1.0)).sqrt() * p2 - (jf / (jf + 1.0)).sqrt() * p3;
                }
                pp = (2.0 * n as f64).sqrt() * p2;
                let z1 = z;
                z = z1 - p1 / pp;
                if (z - z1).abs() <= 1e-15 * z.abs().max(1.0) {
                    break;
                }
            }
            x[i] = z;
            x[n - 1 - i] = -z;
            w[i] = 2.0 / (pp * pp);
            w[n - 1 - i] = w[i];
        }
        let ln_sqrt_pi = 0.5 * std::f64::consts::PI.ln();
        let log_weights = w.iter().map(|v| v.ln() - ln_sqrt_pi).collect();
        GaussHermite { nodes: x, weights: w, log_weights }
    }

    /// Shared rule for `order`, built once per process.
    pub fn cached(order: usize) -> Arc<GaussHermite> {
        static CACHE: OnceLock<Mutex<HashMap<usize, Arc<GaussHermite>>>> = OnceLock::new();
        let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
        let mut guard = cache.lock().expect("quadrature cache poisoned");
        guard
            .entry(order)
            .or_insert_with(|| Arc::new(GaussHermite::new(order)))
            .clone()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gk_polynomials_and_gaussians() {
        let q = integrate(|x| x * x, 0.0, 3.0, 1e-13, 1e-13);
        assert!((q.value - 9.0).abs() < 1e-12);
        let q = integrate(|x| (-0.5 * x * x).exp(), f64::NEG_INFINITY, f64::INFINITY, 1e-13, 1e-13);
        assert!((q.value - (2.0 * std::f64::consts::PI).sqrt()).abs() < 1e-11);
        let q = integrate(|x| (-x).exp(), 0.0, f64::INFINITY, 1e-13, 1e-13);
        assert!((q.value - 1.0).abs() < 1e-12);
        let q = integrate(|x| x.exp(), f64::NEG_INFINITY, 0.0, 1e-13, 1e-13);
        assert!((q.value - 1.0).abs() < 1e-12);
    }

    #[test]
    fn pieces_handle_jumps() {
        let step = |x: f64| if x < 0.3 { 1.0 } else { 0.25 };
        let q = integrate_pieces(step, 0.0, 1.0, &[0.3], 1e-13, 1e-13);
        assert!((q.value - (0.3 + 0.7 * 0.25)).abs() < 1e-13);
    }

    #[test]
    fn hermite_moments() {
        let sqrt_pi = std::f64::consts::PI.sqrt();
        for order in [5usize, 21, 41, 60] {
            let gh = GaussHermite::new(order);
            let m0: f64 = gh.weights.iter().sum();
            let m2: f64 = gh.weights.iter().zip(&gh.nodes).map(|(w, x)| w * x * x).sum();
            let m4: f64 = gh.weights.iter().zip(&gh.nodes).map(|(w, x)| w * x.powi(4)).sum();
            assert!((m0 - sqrt_pi).abs() < 1e-12, "order {order}");
            assert!((m2 - sqrt_pi / 2.0).abs() < 1e-12);
            assert!((m4 - 0.75 * sqrt_pi).abs() < 1e-11);
            let lw: f64 = gh.log_weights.iter().map(|v| v.exp()).sum();
            assert!((lw - 1.0).abs() < 1e-12);
        }
    }
}
