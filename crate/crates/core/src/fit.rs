//! Log-log least-squares fits.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// `y ≈ prefactor · x^slope`, fitted on `(ln x, ln y)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScalingFit {
    pub slope: f64,
    pub intercept: f64,
    pub prefactor: f64,
    pub r_squared: f64,
    /// Largest absolute residual in log space.
    pub max_log_residual: f64,
    pub n: usize,
    pub xs: Vec<f64>,
    pub ys: Vec<f64>,
}

impl ScalingFit {
    pub fn predict(&self, x: f64) -> f64 {
        self.prefactor * x.powf(self.slope)
    }
}

/// Fits the pairs with positive finite coordinates; needs two distinct `x`.
pub fn fit_loglog(xs: &[f64], ys: &[f64]) -> Result<ScalingFit> {
    if xs.len() != ys.len() {
        return Err(Error::InvalidArgument("fit inputs differ in length".into()));
    }
    let pairs: Vec<(f64, f64)> = xs
        .iter()
        .zip(ys)
        .filter(|(x, y)| x.is_finite() && y.is_finite() && **x > 0.0 && **y > 0.0)
        .map(|(x, y)| (*x, *y))
        .collect();
    let n = pairs.len();
    let lx: Vec<f64> = pairs.iter().map(|p| p.0.ln()).collect();
    let ly: Vec<f64> = pairs.iter().map(|p| p.1.ln()).collect();
    if n < 2 {
        return Err(Error::InvalidArgument(format!("log-log fit needs at least 2 positive pairs, got {n}")));
    }
    let mx = lx.iter().sum::<f64>() / n as f64;
    let my = ly.iter().sum::<f64>() / n as f64;
    let sxx: f64 = lx.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let syy: f64 = ly.iter().map(|y| (y - my).powi(2)).sum();
    if !(sxx > 0.0) {
        return Err(Error::InvalidArgument("log-log fit needs two distinct x values".into()));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let resid: Vec<f64> = lx.iter().zip(&ly).map(|(x, y)| y - (intercept + slope * x)).collect();
    let sse: f64 = resid.iter().map(|r| r * r).sum();
    let r_squared = if syy > 0.0 { 1.0 - sse / syy } else { 1.0 };
    Ok(ScalingFit {
        slope,
        intercept,
        prefactor: intercept.exp(),
        r_squared,
        max_log_residual: resid.iter().fold(0.0, |a, r| a.max(r.abs())),
        n,
        xs: pairs.iter().map(|p| p.0).collect(),
        ys: pairs.iter().map(|p| p.1).collect(),
    })
}

/// `n` points geometrically spaced from `lo` to `hi` inclusive.
pub fn geomspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![lo],
        _ => (0..n).map(|i| lo * (hi / lo).powf(i as f64 / (n - 1) as f64)).collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_power_law() {
        let xs = geomspace(1e-3, 1e-1, 7);
        let ys: Vec<f64> = xs.iter().map(|x| 3.0 * x * x).collect();
        let f = fit_loglog(&xs, &ys).unwrap();
        assert!((f.slope - 2.0).abs() < 1e-12);
        assert!((f.prefactor - 3.0).abs() < 1e-10);
        assert!(f.r_squared > 1.0 - 1e-12);
        assert!((f.predict(0.5) - 0.75).abs() < 1e-10);
    }

    #[test]
    fn drops_nonpositive_pairs() {
        let f = fit_loglog(&[0.0, 1.0, 2.0, 4.0], &[1.0, 1.0, 2.0, 4.0]).unwrap();
        assert_eq!(f.n, 3);
        assert!((f.slope - 1.0).abs() < 1e-12);
        assert!(fit_loglog(&[1.0, 1.0], &[1.0, 2.0]).is_err());
        assert!(fit_loglog(&[1.0], &[1.0]).is_err());
    }

    #[test]
    fn geomspace_endpoints() {
        let g = geomspace(0.2, 0.025, 4);
        assert_eq!(g.len(), 4);
        assert!((g[0] - 0.2).abs() < 1e-15 && (g[3] - 0.025).abs() < 1e-15);
        assert!((g[1] - 0.1).abs() < 1e-15);
    }
}
