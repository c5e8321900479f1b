//! Posterior density curves for plotting, by Gaussian kernel smoothing.

use serde::Serialize;

use selmeta::mcmc::PosteriorDraws;

const GRID_POINTS: usize = 200;

#[derive(Debug, Serialize)]
pub struct Curve {
    pub parameter: String,
    pub x: Vec<f64>,
    pub density: Vec<f64>,
    pub bandwidth: f64,
}

/// Silverman's rule of thumb.
fn bandwidth(v: &[f64]) -> f64 {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let sd = (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    let mut sorted = v.to_vec();
    sorted.sort_by(f64::total_cmp);
    let iqr = sorted[(3 * sorted.len()) / 4] - sorted[sorted.len() / 4];
    let spread = if iqr > 0.0 { sd.min(iqr / 1.34) } else { sd };
    0.9 * spread * n.powf(-0.2)
}

pub fn kde(parameter: &str, v: &[f64]) -> Option<Curve> {
    if v.len() < 2 {
        return None;
    }
    let h = bandwidth(v);
    if !(h > 0.0) {
        return None;
    }
    let lo = v.iter().copied().fold(f64::INFINITY, f64::min) - 3.0 * h;
    let hi = v.iter().copied().fold(f64::NEG_INFINITY, f64::max) + 3.0 * h;
    let norm = 1.0 / (v.len() as f64 * h * (2.0 * std::f64::consts::PI).sqrt());
    let x: Vec<f64> = (0..GRID_POINTS).map(|i| lo + (hi - lo) * i as f64 / (GRID_POINTS - 1) as f64).collect();
    let density = x
        .iter()
        .map(|g| norm * v.iter().map(|s| (-0.5 * ((g - s) / h).powi(2)).exp()).sum::<f64>())
        .collect();
    Some(Curve { parameter: parameter.to_string(), x, density, bandwidth: h })
}

/// Curves for every hyperparameter; per-study latent effects are skipped.
pub fn posterior_curves(draws: &PosteriorDraws) -> Vec<Curve> {
    draws
        .param_names
        .iter()
        .enumerate()
        .filter(|(_, name)| !name.starts_with("theta["))
        .filter_map(|(p, name)| kde(name, &draws.pooled(p)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn curve_integrates_to_one() {
        let v: Vec<f64> = (0..500).map(|i| ((i * 7919) % 500) as f64 / 100.0).collect();
        let c = kde("a", &v).unwrap();
        let dx = c.x[1] - c.x[0];
        let area: f64 = c.density.iter().sum::<f64>() * dx;
        assert!((area - 1.0).abs() < 0.02, "{area}");
        assert!(kde("b", &[1.0; 10]).is_none());
    }
}
