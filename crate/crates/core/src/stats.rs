//! Small regression helpers for the scaling experiments.

use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LineFit {
    pub slope: f64,
    pub intercept: f64,
}

impl LineFit {
    pub fn predict(&self, x: f64) -> f64 {
        self.intercept + self.slope * x
    }
}

/// Ordinary least squares `y = intercept + slope * x`. `None` with fewer than
/// two distinct `x`.
pub fn linear_fit(xs: &[f64], ys: &[f64]) -> Option<LineFit> {
    if xs.len() != ys.len() || xs.len() < 2 {
        return None;
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    if sxx == 0.0 {
        return None;
    }
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    Some(LineFit {
        slope,
        intercept: my - slope * mx,
    })
}

/// Fit of `ln y` on `ln x`; the slope is the scaling exponent.
pub fn log_log_fit(xs: &[f64], ys: &[f64]) -> Option<LineFit> {
    if xs.iter().chain(ys).any(|&v| !(v > 0.0)) {
        return None;
    }
    let lx: Vec<f64> = xs.iter().map(|x| x.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|y| y.ln()).collect();
    linear_fit(&lx, &ly)
}

/// Constant `c` in `y ~ c * model` and the worst relative deviation of any
/// point from it. `c` is the mean of `y / model`.
pub fn constant_fit(ys: &[f64], model: &[f64]) -> (f64, f64) {
    let ratios: Vec<f64> = ys.iter().zip(model).map(|(y, m)| y / m).collect();
    let c = ratios.iter().sum::<f64>() / ratios.len() as f64;
    let worst = ratios
        .iter()
        .fold(0.0f64, |w, r| w.max((r / c - 1.0).abs()));
    (c, worst)
}

/// `x` where two log-log power laws meet, if their slopes differ.
pub fn crossover(a: &LineFit, b: &LineFit) -> Option<f64> {
    let ds = a.slope - b.slope;
    if ds == 0.0 {
        return None;
    }
    Some(((b.intercept - a.intercept) / ds).exp())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn recovers_power_law() {
        let xs: Vec<f64> = (8..14).map(|e| (1u64 << e) as f64).collect();
        let ys: Vec<f64> = xs.iter().map(|x| 3.0 * x.powf(1.5)).collect();
        let f = log_log_fit(&xs, &ys).unwrap();
        assert!((f.slope - 1.5).abs() < 1e-12);
        assert!((f.intercept - 3f64.ln()).abs() < 1e-10);
    }

    #[test]
    fn degenerate_inputs() {
        assert!(linear_fit(&[1.0], &[2.0]).is_none());
        assert!(linear_fit(&[1.0, 1.0], &[2.0, 3.0]).is_none());
        assert!(log_log_fit(&[1.0, 2.0], &[0.0, 1.0]).is_none());
    }

    #[test]
    fn constant_and_crossover() {
        let (c, worst) = constant_fit(&[2.0, 4.2, 5.7], &[1.0, 2.0, 3.0]);
        assert!((c - 2.0).abs() < 1e-12);
        assert!((worst - 0.05).abs() < 1e-12);
        let a = LineFit {
            slope: 2.0,
            intercept: 0.0,
        };
        let b = LineFit {
            slope: 1.0,
            intercept: 10f64.ln(),
        };
        assert!((crossover(&a, &b).unwrap() - 10.0).abs() < 1e-9);
    }
}
