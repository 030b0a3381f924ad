//! Gaussian AR processes with closed-form conditionals, plus reference
//! statistics for checking learned innovations.

use chrono::{NaiveDate, TimeDelta};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use statrs::distribution::{Continuous, ContinuousCDF, Normal as StdNormal};

use crate::error::{Error, Result};
use crate::series::SeriesFrame;

pub const DEFAULT_BURN_IN: usize = 1000;

/// `x_t = φ_1 x_{t-1} + … + φ_p x_{t-p} + σ ε_t`, `ε_t ~ N(0, 1)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArProcess {
    pub coeffs: Vec<f64>,
    pub sigma: f64,
}

impl ArProcess {
    pub fn new(coeffs: Vec<f64>, sigma: f64) -> Result<ArProcess> {
        let p = ArProcess { coeffs, sigma };
        p.validate()?;
        Ok(p)
    }

    pub fn ar1(phi: f64, sigma: f64) -> Result<ArProcess> {
        ArProcess::new(vec![phi], sigma)
    }

    pub fn order(&self) -> usize {
        self.coeffs.len()
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma.is_finite() && self.sigma > 0.0) {
            return Err(Error::InvalidArgument(format!("noise std must be positive, got {}", self.sigma)));
        }
        if !self.is_stationary() {
            return Err(Error::InvalidArgument(format!("AR coefficients {:?} are not stationary", self.coeffs)));
        }
        Ok(())
    }

    /// Step-down recursion: stationary iff every partial autocorrelation is
    /// strictly inside (-1, 1), which is equivalent to the companion matrix
    /// having spectral radius below one.
    pub fn is_stationary(&self) -> bool {
        let mut a = self.coeffs.clone();
        if a.iter().any(|c| !c.is_finite()) {
            return false;
        }
        while let Some(&k) = a.last() {
            if k.abs() >= 1.0 {
                return false;
            }
            let n = a.len() - 1;
            let den = 1.0 - k * k;
            a = (0..n).map(|j| (a[j] + k * a[n - 1 - j]) / den).collect();
        }
        true
    }

    /// MA(∞) weights ψ_0..ψ_{len-1}.
    fn psi(&self, len: usize) -> Vec<f64> {
        let mut psi = vec![0.0; len];
        if len > 0 {
            psi[0] = 1.0;
        }
        for j in 1..len {
            psi[j] = self.coeffs.iter().enumerate().filter(|(i, _)| *i < j).map(|(i, c)| c * psi[j - 1 - i]).sum();
        }
        psi
    }

    /// Stationary variance, by summing the MA(∞) weights until they vanish.
    pub fn stationary_variance(&self) -> f64 {
        let psi = self.psi(100_000);
        self.sigma * self.sigma * psi.iter().map(|p| p * p).sum::<f64>()
    }
}

/// Sample path of length `n` after discarding `burn_in` steps from a zero
/// start. Hourly timestamps from 2000-01-01.
pub fn gen_ar(process: &ArProcess, n: usize, seed: u64, burn_in: usize) -> Result<SeriesFrame> {
    process.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, process.sigma).expect("validated sigma");
    let p = process.order();
    let mut x = vec![0.0; burn_in + n + p];
    for t in p..x.len() {
        let ar: f64 = process.coeffs.iter().enumerate().map(|(i, c)| c * x[t - 1 - i]).sum();
        x[t] = ar + noise.sample(&mut rng);
    }
    let start = NaiveDate::from_ymd_opt(2000, 1, 1).unwrap().and_hms_opt(0, 0, 0).unwrap();
    SeriesFrame::univariate(start, TimeDelta::hours(1), "x", x.split_off(burn_in + p))
}

/// Exact `T`-step conditional mean and variance given the newest `p`
/// values of `history` (oldest first).
pub fn ar_conditional(process: &ArProcess, history: &[f64], horizon: usize) -> Result<(f64, f64)> {
    process.validate()?;
    let p = process.order();
    if history.len() < p {
        return Err(Error::InsufficientData { needed: p, available: history.len() });
    }
    if horizon == 0 {
        return Err(Error::InvalidArgument("horizon must be at least 1".into()));
    }
    // companion state, newest first; iterate the mean recursion T times
    let mut state: Vec<f64> = history.iter().rev().take(p).copied().collect();
    for _ in 0..horizon {
        let next: f64 = process.coeffs.iter().zip(&state).map(|(c, x)| c * x).sum();
        if p > 0 {
            state.rotate_right(1);
            state[0] = next;
        }
    }
    let mean = if p > 0 { state[0] } else { 0.0 };
    let var = process.sigma * process.sigma * process.psi(horizon).iter().map(|w| w * w).sum::<f64>();
    Ok((mean, var))
}

/// CRPS of `N(mean, std²)` at outcome `y`.
pub fn gaussian_crps(mean: f64, std: f64, y: f64) -> Result<f64> {
    if !(std.is_finite() && std > 0.0) {
        return Err(Error::InvalidArgument(format!("std must be positive, got {std}")));
    }
    let n = StdNormal::standard();
    let z = (y - mean) / std;
    Ok(std * (z * (2.0 * n.cdf(z) - 1.0) + 2.0 * n.pdf(z) - 1.0 / std::f64::consts::PI.sqrt()))
}

/// `x̃_t = x_{t-T}`: forecasts for positions `T..N` of `series`.
pub fn persistence_forecast(series: &[f64], horizon: usize) -> Vec<f64> {
    if series.len() <= horizon {
        return Vec::new();
    }
    series[..series.len() - horizon].to_vec()
}

/// Kolmogorov–Smirnov distance between the pooled samples and `U[0, 1]`.
pub fn uniformity_ks(samples: &[f64]) -> Result<f64> {
    if samples.len() < 100 {
        return Err(Error::InsufficientData { needed: 100, available: samples.len() });
    }
    if let Some(v) = samples.iter().find(|v| !(0.0..=1.0).contains(*v)) {
        return Err(Error::InvalidArgument(format!("sample {v} outside [0, 1]")));
    }
    let mut s = samples.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len() as f64;
    let mut d: f64 = 0.0;
    for (i, &x) in s.iter().enumerate() {
        d = d.max((i + 1) as f64 / n - x).max(x - i as f64 / n);
    }
    Ok(d)
}

/// Sample autocorrelation at lags `1..=max_lag`.
pub fn independence_autocorr(seq: &[f64], max_lag: usize) -> Result<Vec<f64>> {
    if max_lag == 0 || seq.len() < 10 * max_lag {
        return Err(Error::InsufficientData { needed: 10 * max_lag.max(1), available: seq.len() });
    }
    let n = seq.len();
    let mean = seq.iter().sum::<f64>() / n as f64;
    let c0: f64 = seq.iter().map(|v| (v - mean).powi(2)).sum();
    if c0 <= f64::EPSILON * n as f64 * mean.abs().max(1.0).powi(2) {
        return Err(Error::Degenerate("constant sequence has no autocorrelation".into()));
    }
    Ok((1..=max_lag)
        .map(|k| (0..n - k).map(|t| (seq[t] - mean) * (seq[t + k] - mean)).sum::<f64>() / c0)
        .collect())
}
