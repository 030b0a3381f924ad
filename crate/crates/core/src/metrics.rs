//! Point and probabilistic forecast scores, coverage, sign accuracy, the
//! 3σ evaluation filter, and long-range-dependence diagnostics.
//!
//! Unless noted otherwise, `truth[i]` and `forecasts[i]` refer to the same
//! target time.

use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};
use crate::forecast::quantile_sorted;

fn check_aligned(truth: &[f64], forecasts: &[f64]) -> Result<()> {
    if truth.len() != forecasts.len() {
        return Err(Error::shape(format!("{} forecasts", truth.len()), forecasts.len()));
    }
    if truth.is_empty() {
        return Err(Error::InsufficientData { needed: 1, available: 0 });
    }
    Ok(())
}

fn ratio(num: f64, den: f64, what: &str) -> Result<f64> {
    if den == 0.0 {
        return Err(Error::Degenerate(format!("{what}: zero denominator")));
    }
    Ok(num / den)
}

/// `Σ(x - x̃)² / Σx²`.
pub fn nmse(truth: &[f64], forecasts: &[f64]) -> Result<f64> {
    check_aligned(truth, forecasts)?;
    let num: f64 = truth.iter().zip(forecasts).map(|(x, f)| (x - f).powi(2)).sum();
    ratio(num, truth.iter().map(|x| x * x).sum(), "NMSE")
}

/// `Σ|x - x̃| / Σ|x|`.
pub fn nmae(truth: &[f64], forecasts: &[f64]) -> Result<f64> {
    check_aligned(truth, forecasts)?;
    let num: f64 = truth.iter().zip(forecasts).map(|(x, f)| (x - f).abs()).sum();
    ratio(num, truth.iter().map(|x| x.abs()).sum(), "NMAE")
}

/// Absolute error relative to a naive forecaster: `Σ|x - x̃| / Σ|x - naive|`.
pub fn mase_against(truth: &[f64], forecasts: &[f64], naive: &[f64]) -> Result<f64> {
    check_aligned(truth, forecasts)?;
    check_aligned(truth, naive)?;
    let num: f64 = truth.iter().zip(forecasts).map(|(x, f)| (x - f).abs()).sum();
    let den: f64 = truth.iter().zip(naive).map(|(x, f)| (x - f).abs()).sum();
    ratio(num, den, "MASE (constant truth)")
}

/// MASE over the whole series: `forecasts[i]` targets `series[i + T]` and the
/// persistence forecast for that point is `series[i]`.
pub fn mase(series: &[f64], forecasts: &[f64], horizon: usize) -> Result<f64> {
    if series.len() <= horizon {
        return Err(Error::InsufficientData { needed: horizon + 1, available: series.len() });
    }
    mase_against(&series[horizon..], forecasts, &series[..series.len() - horizon])
}

/// Mean of `|x - x̃| / ((|x| + |x̃|) / 2)`; points where both are zero are
/// skipped and counted.
pub fn smape(truth: &[f64], forecasts: &[f64]) -> Result<(f64, usize)> {
    check_aligned(truth, forecasts)?;
    let mut sum = 0.0;
    let mut used = 0usize;
    for (x, f) in truth.iter().zip(forecasts) {
        let den = (x.abs() + f.abs()) / 2.0;
        if den == 0.0 {
            continue;
        }
        sum += (x - f).abs() / den;
        used += 1;
    }
    let skipped = truth.len() - used;
    if used == 0 {
        return Err(Error::Degenerate("sMAPE: every point has |x| + |x̃| = 0".into()));
    }
    Ok((sum / used as f64, skipped))
}

/// `∫ (F̂(x) - 1{y ≤ x})² dx` for the empirical CDF of `samples`, via
/// `(2/K²) Σᵢ (x₍ᵢ₎ - y)(K·1{y < x₍ᵢ₎} - i + ½)` over the order statistics.
pub fn crps_empirical(samples: &[f64], y: f64) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::InsufficientData { needed: 1, available: 0 });
    }
    let mut s = samples.to_vec();
    s.sort_by(f64::total_cmp);
    Ok(crps_sorted(&s, y))
}

pub fn crps_sorted(s: &[f64], y: f64) -> f64 {
    let k = s.len() as f64;
    let mut acc = 0.0;
    for (i, &x) in s.iter().enumerate() {
        let above = if y < x { k } else { 0.0 };
        acc += (x - y) * (above - (i + 1) as f64 + 0.5);
    }
    2.0 * acc / (k * k)
}

/// Fraction of `truth` inside `[lower, upper]` and its deviation from `beta`.
pub fn coverage(truth: &[f64], lower: &[f64], upper: &[f64], beta: f64) -> Result<(f64, f64)> {
    check_aligned(truth, lower)?;
    check_aligned(truth, upper)?;
    let hit = truth.iter().zip(lower.iter().zip(upper)).filter(|(x, (l, u))| *l <= *x && *x <= *u).count();
    let cp = hit as f64 / truth.len() as f64;
    Ok((cp, cp - beta))
}

/// Mean interval width over the width of the unconditional `beta` interval
/// of the test data.
pub fn ncw(lower: &[f64], upper: &[f64], test_truth: &[f64], beta: f64) -> Result<f64> {
    check_aligned(lower, upper)?;
    if test_truth.is_empty() {
        return Err(Error::InsufficientData { needed: 1, available: 0 });
    }
    let mut s = test_truth.to_vec();
    s.sort_by(f64::total_cmp);
    let den = quantile_sorted(&s, 0.5 + beta / 2.0) - quantile_sorted(&s, 0.5 - beta / 2.0);
    if den <= 0.0 {
        return Err(Error::Degenerate("NCW: unconditional interval has zero width".into()));
    }
    let width = lower.iter().zip(upper).map(|(l, u)| u - l).sum::<f64>() / lower.len() as f64;
    Ok(width / den)
}

fn sign(v: f64) -> f64 {
    if v < 0.0 {
        -1.0
    } else {
        1.0
    }
}

/// Fraction of points where the median forecast has the wrong sign
/// (zero counts as positive).
pub fn per(truth: &[f64], medians: &[f64]) -> Result<f64> {
    check_aligned(truth, medians)?;
    let wrong = truth.iter().zip(medians).filter(|(x, m)| sign(**x) != sign(**m)).count();
    Ok(wrong as f64 / truth.len() as f64)
}

/// `true` where `|x - mean| ≤ 3σ`; a constant series keeps everything.
pub fn outlier_mask(truth: &[f64]) -> Result<Vec<bool>> {
    if truth.len() < 2 {
        return Err(Error::InsufficientData { needed: 2, available: truth.len() });
    }
    let n = truth.len() as f64;
    let mean = truth.iter().sum::<f64>() / n;
    let sd = (truth.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n).sqrt();
    Ok(truth.iter().map(|x| (x - mean).abs() <= 3.0 * sd).collect())
}

fn slope(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    sxy / sxx
}

fn check_diag_input(series: &[f64]) -> Result<()> {
    if series.len() < 256 {
        return Err(Error::InsufficientData { needed: 256, available: series.len() });
    }
    if series.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("diagnostic input".into()));
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScalingEstimate {
    pub exponent: f64,
    /// `(scale, statistic)` pairs used in the log-log fit.
    pub table: Vec<(usize, f64)>,
}

/// Anis–Lloyd expected R/S of `n` IID Gaussian values (with the
/// Peters `(n - ½)/n` factor).
fn expected_rs(n: usize) -> f64 {
    let nf = n as f64;
    let lead = (ln_gamma((nf - 1.0) / 2.0) - ln_gamma(nf / 2.0)).exp() / std::f64::consts::PI.sqrt();
    let tail: f64 = (1..n).map(|i| ((nf - i as f64) / i as f64).sqrt()).sum();
    (nf - 0.5) / nf * lead * tail
}

/// Rescaled-range Hurst exponent over dyadic block sizes `16..=N/4`.
///
/// The log-log slope is taken against the Anis–Lloyd small-sample
/// expectation, so IID noise gives ≈ 0.5 rather than the upward-biased raw
/// R/S slope.
pub fn hurst_rs(series: &[f64]) -> Result<ScalingEstimate> {
    check_diag_input(series)?;
    let n = series.len();
    let mut table = Vec::new();
    let mut size = 16;
    while size <= n / 4 {
        let mut acc = 0.0;
        let mut used = 0usize;
        for block in series.chunks_exact(size) {
            let mean = block.iter().sum::<f64>() / size as f64;
            let (mut z, mut lo, mut hi, mut ss) = (0.0f64, f64::INFINITY, f64::NEG_INFINITY, 0.0);
            for v in block {
                z += v - mean;
                lo = lo.min(z);
                hi = hi.max(z);
                ss += (v - mean).powi(2);
            }
            let sd = (ss / size as f64).sqrt();
            if sd > 0.0 && hi > lo {
                acc += (hi - lo) / sd;
                used += 1;
            }
        }
        if used > 0 {
            table.push((size, acc / used as f64));
        }
        size *= 2;
    }
    if table.len() < 2 {
        return Err(Error::Degenerate("zero range: series is constant".into()));
    }
    let xs: Vec<f64> = table.iter().map(|(s, _)| (*s as f64).ln()).collect();
    let ys: Vec<f64> = table.iter().map(|(s, rs)| (rs / expected_rs(*s)).ln()).collect();
    Ok(ScalingEstimate { exponent: 0.5 + slope(&xs, &ys), table })
}

/// Least-squares polynomial residual sum of squares of `y` on `0..len`.
fn detrended_ss(y: &[f64], order: usize) -> f64 {
    let n = y.len();
    let p = order + 1;
    // abscissa scaled to [-1, 1] keeps the normal equations well conditioned
    let x: Vec<f64> = (0..n).map(|i| 2.0 * i as f64 / (n - 1) as f64 - 1.0).collect();
    let mut a = vec![vec![0.0; p + 1]; p];
    for (xi, yi) in x.iter().zip(y) {
        let pw: Vec<f64> = (0..p).map(|k| xi.powi(k as i32)).collect();
        for r in 0..p {
            for c in 0..p {
                a[r][c] += pw[r] * pw[c];
            }
            a[r][p] += pw[r] * yi;
        }
    }
    for col in 0..p {
        let piv = (col..p).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs())).unwrap();
        a.swap(col, piv);
        for r in 0..p {
            if r != col {
                let f = a[r][col] / a[col][col];
                for c in col..=p {
                    a[r][c] -= f * a[col][c];
                }
            }
        }
    }
    let coef: Vec<f64> = (0..p).map(|k| a[k][p] / a[k][k]).collect();
    x.iter()
        .zip(y)
        .map(|(xi, yi)| {
            let fit: f64 = coef.iter().enumerate().map(|(k, c)| c * xi.powi(k as i32)).sum();
            (yi - fit).powi(2)
        })
        .sum()
}

/// Detrended fluctuation analysis of the given polynomial order over
/// log-spaced window sizes `16..=N/4`.
pub fn dfa(series: &[f64], order: usize) -> Result<ScalingEstimate> {
    check_diag_input(series)?;
    if order == 0 {
        return Err(Error::InvalidArgument("DFA order must be at least 1".into()));
    }
    let n = series.len();
    let mean = series.iter().sum::<f64>() / n as f64;
    if series.iter().all(|v| *v == series[0]) {
        return Err(Error::Degenerate("zero fluctuation: series is constant".into()));
    }
    let mut profile = Vec::with_capacity(n);
    let mut acc = 0.0;
    for v in series {
        acc += v - mean;
        profile.push(acc);
    }
    let (lo, hi) = ((16usize.max(order + 3)) as f64, (n / 4) as f64);
    let steps = 16;
    let mut sizes: Vec<usize> = (0..steps).map(|i| (lo * (hi / lo).powf(i as f64 / (steps - 1) as f64)).round() as usize).collect();
    sizes.dedup();
    let mut table = Vec::new();
    for s in sizes {
        let windows = n / s;
        // forward and backward tilings so the tail is not discarded
        let mut ss = 0.0;
        for w in 0..windows {
            ss += detrended_ss(&profile[w * s..(w + 1) * s], order);
            ss += detrended_ss(&profile[n - (w + 1) * s..n - w * s], order);
        }
        let f = (ss / (2 * windows * s) as f64).sqrt();
        table.push((s, f));
    }
    let xs: Vec<f64> = table.iter().map(|(s, _)| (*s as f64).ln()).collect();
    let ys: Vec<f64> = table.iter().map(|(_, f)| f.ln()).collect();
    Ok(ScalingEstimate { exponent: slope(&xs, &ys), table })
}

/// One evaluated origin.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalPoint {
    pub truth: f64,
    /// Latest observation at the forecast origin.
    pub naive: f64,
    pub mmse: f64,
    pub mmae: f64,
    /// Sorted ensemble, when available (needed for CRPS and arbitrary β).
    pub samples: Option<Vec<f64>>,
    /// `(β, lower, upper)` intervals known without the ensemble.
    pub intervals: Vec<(f64, f64, f64)>,
}

impl EvalPoint {
    fn interval(&self, beta: f64) -> Option<(f64, f64)> {
        if let Some(s) = &self.samples {
            return Some((quantile_sorted(s, 0.5 - beta / 2.0), quantile_sorted(s, 0.5 + beta / 2.0)));
        }
        self.intervals.iter().find(|(b, _, _)| (b - beta).abs() < 1e-9).map(|&(_, l, u)| (l, u))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalOptions {
    pub horizon: usize,
    pub betas: Vec<f64>,
    pub filter_3sigma: bool,
    pub per: bool,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions { horizon: 1, betas: vec![0.9, 0.5, 0.1], filter_3sigma: false, per: false }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IntervalScore {
    pub beta: f64,
    pub cp: f64,
    pub cpe: f64,
    pub ncw: f64,
}

/// Learned-innovation checks, attached when a checkpoint is supplied.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InnovationReport {
    pub ks: f64,
    pub autocorr: Vec<f64>,
    pub count: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub nmse: f64,
    pub nmae: f64,
    pub mase: f64,
    pub smape: f64,
    pub crps: Option<f64>,
    pub intervals: Vec<IntervalScore>,
    pub per: Option<f64>,
    pub evaluated: usize,
    pub excluded: usize,
    pub smape_skipped: usize,
    pub horizon: usize,
    pub innovation: Option<InnovationReport>,
    /// Extra provenance (file digests and the like).
    pub digests: Vec<(String, String)>,
}

pub fn evaluate(points: &[EvalPoint], opts: &EvalOptions) -> Result<MetricsReport> {
    if points.is_empty() {
        return Err(Error::InsufficientData { needed: 1, available: 0 });
    }
    let all_truth: Vec<f64> = points.iter().map(|p| p.truth).collect();
    let keep = if opts.filter_3sigma { outlier_mask(&all_truth)? } else { vec![true; points.len()] };
    let pts: Vec<&EvalPoint> = points.iter().zip(&keep).filter(|(_, k)| **k).map(|(p, _)| p).collect();
    let excluded = points.len() - pts.len();
    let truth: Vec<f64> = pts.iter().map(|p| p.truth).collect();
    let mean: Vec<f64> = pts.iter().map(|p| p.mmse).collect();
    let median: Vec<f64> = pts.iter().map(|p| p.mmae).collect();
    let naive: Vec<f64> = pts.iter().map(|p| p.naive).collect();
    let (smape_v, smape_skipped) = smape(&truth, &median)?;

    let crps = if pts.iter().all(|p| p.samples.is_some()) {
        let total: f64 = pts.iter().map(|p| crps_sorted(p.samples.as_ref().unwrap(), p.truth)).sum();
        Some(total / pts.len() as f64)
    } else {
        None
    };
    let mut intervals = Vec::new();
    for &beta in &opts.betas {
        if !(beta > 0.0 && beta < 1.0) {
            return Err(Error::InvalidArgument(format!("interval level {beta} outside (0, 1)")));
        }
        let Some(bounds) = pts.iter().map(|p| p.interval(beta)).collect::<Option<Vec<_>>>() else {
            log::warn!("no {beta} interval available without the ensemble; skipped");
            continue;
        };
        let lower: Vec<f64> = bounds.iter().map(|b| b.0).collect();
        let upper: Vec<f64> = bounds.iter().map(|b| b.1).collect();
        let (cp, cpe) = coverage(&truth, &lower, &upper, beta)?;
        intervals.push(IntervalScore { beta, cp, cpe, ncw: ncw(&lower, &upper, &truth, beta)? });
    }
    Ok(MetricsReport {
        nmse: nmse(&truth, &mean)?,
        nmae: nmae(&truth, &median)?,
        mase: mase_against(&truth, &median, &naive)?,
        smape: smape_v,
        crps,
        intervals,
        per: if opts.per { Some(per(&truth, &median)?) } else { None },
        evaluated: pts.len(),
        excluded,
        smape_skipped,
        horizon: opts.horizon,
        innovation: None,
        digests: Vec::new(),
    })
}

fn level_key(beta: f64) -> String {
    format!("{}", (beta * 100.0).round() as i64)
}

impl MetricsReport {
    /// Flat document: one key per metric, run details under `meta`.
    pub fn to_json(&self) -> Value {
        let mut m = Map::new();
        m.insert("nmse".into(), json!(self.nmse));
        m.insert("nmae".into(), json!(self.nmae));
        m.insert("mase".into(), json!(self.mase));
        m.insert("smape".into(), json!(self.smape));
        m.insert("crps".into(), json!(self.crps));
        for s in &self.intervals {
            let k = level_key(s.beta);
            m.insert(format!("cp{k}"), json!(s.cp));
            m.insert(format!("cpe{k}"), json!(s.cpe));
            m.insert(format!("ncw{k}"), json!(s.ncw));
        }
        if let Some(p) = self.per {
            m.insert("per".into(), json!(p));
        }
        if let Some(inn) = &self.innovation {
            m.insert("innovation_ks".into(), json!(inn.ks));
            m.insert("innovation_autocorr".into(), json!(inn.autocorr));
        }
        let digests: Map<String, Value> = self.digests.iter().map(|(k, v)| (k.clone(), json!(v))).collect();
        m.insert(
            "meta".into(),
            json!({
                "horizon": self.horizon,
                "betas": self.intervals.iter().map(|s| s.beta).collect::<Vec<_>>(),
                "evaluated": self.evaluated,
                "excluded": self.excluded,
                "smape_skipped": self.smape_skipped,
                "innovation_count": self.innovation.as_ref().map(|i| i.count),
                "digests": digests,
            }),
        );
        Value::Object(m)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    #[test]
    fn nmse_nmae_examples() {
        assert_eq!(nmse(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert_eq!(nmse(&[3.0, -1.0], &[0.0, 0.0]).unwrap(), 1.0);
        assert_eq!(nmse(&[2.0, -2.0], &[1.0, -1.0]).unwrap(), 0.25);
        assert_eq!(nmae(&[2.0, -2.0], &[1.0, -1.0]).unwrap(), 0.5);
        assert_eq!(nmae(&[4.0, -4.0], &[2.0, -2.0]).unwrap(), 0.5);
        assert!(nmse(&[0.0, 0.0], &[1.0, 1.0]).is_err());
        assert!(nmse(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn mase_examples() {
        let x = [1.0, 2.0, 4.0];
        assert_eq!(mase(&x, &[1.0, 2.0], 1).unwrap(), 1.0);
        assert_eq!(mase(&x, &[2.0, 4.0], 1).unwrap(), 0.0);
        // |2 - 2| + |4 - 3| over |2 - 1| + |4 - 2|
        assert_abs_diff_eq!(mase(&x, &[2.0, 3.0], 1).unwrap(), 1.0 / 3.0, epsilon = 1e-15);
        assert!(mase(&[5.0; 4], &[1.0; 3], 1).is_err());
    }

    #[test]
    fn smape_examples() {
        assert_eq!(smape(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), (0.0, 0));
        assert_eq!(smape(&[1.0], &[3.0]).unwrap(), (1.0, 0));
        assert_eq!(smape(&[1.0], &[-1.0]).unwrap(), (2.0, 0));
        assert_eq!(smape(&[0.0, 1.0], &[0.0, 3.0]).unwrap(), (1.0, 1));
    }

    #[test]
    fn crps_examples() {
        assert_abs_diff_eq!(crps_empirical(&[0.0, 1.0], 0.0).unwrap(), 0.25, epsilon = 1e-15);
        assert_abs_diff_eq!(crps_empirical(&[1.0, 0.0], 0.5).unwrap(), 0.25, epsilon = 1e-15);
        assert_eq!(crps_empirical(&[2.5; 7], 2.5).unwrap(), 0.0);
        assert_eq!(crps_empirical(&[1.5], -2.0).unwrap(), 3.5);
        assert!(crps_empirical(&[], 0.0).is_err());
    }

    #[test]
    fn crps_is_energy_score() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let k = rng.random_range(1..30);
            let s: Vec<f64> = (0..k).map(|_| rng.random_range(-3.0..3.0)).collect();
            let y = rng.random_range(-4.0..4.0);
            let a: f64 = s.iter().map(|x| (x - y).abs()).sum::<f64>() / k as f64;
            let b: f64 = s.iter().flat_map(|x| s.iter().map(move |z| (x - z).abs())).sum::<f64>() / (k * k) as f64;
            assert_abs_diff_eq!(crps_empirical(&s, y).unwrap(), a - 0.5 * b, epsilon = 1e-12);
        }
    }

    #[test]
    fn coverage_examples() {
        let truth: Vec<f64> = (0..10).map(f64::from).collect();
        assert_eq!(coverage(&truth, &[-1e9; 10], &[1e9; 10], 0.9).unwrap(), (1.0, 1.0 - 0.9));
        assert_eq!(coverage(&truth, &[1e8; 10], &[1e9; 10], 0.9).unwrap(), (0.0, -0.9));
        let (cp, cpe) = coverage(&truth, &[0.0; 10], &[8.0; 10], 0.9).unwrap();
        assert_eq!(cp, 0.9);
        assert_abs_diff_eq!(cpe, 0.0, epsilon = 1e-15);
    }

    #[test]
    fn ncw_examples() {
        let truth: Vec<f64> = (1..=100).map(f64::from).collect();
        // unconditional 90% interval of 1..=100 is [5, 95]
        assert_abs_diff_eq!(ncw(&[5.0; 4], &[95.0; 4], &truth, 0.9).unwrap(), 1.0, epsilon = 1e-15);
        assert_eq!(ncw(&[3.0; 4], &[3.0; 4], &truth, 0.9).unwrap(), 0.0);
        assert_abs_diff_eq!(ncw(&[0.0; 4], &[45.0; 4], &truth, 0.9).unwrap(), 0.5, epsilon = 1e-15);
        assert!(ncw(&[0.0], &[1.0], &[2.0; 10], 0.5).is_err());
    }

    #[test]
    fn per_examples() {
        assert_eq!(per(&[2.0, -3.0], &[1.0, -1.0]).unwrap(), 0.0);
        assert_eq!(per(&[-2.0, -3.0], &[1.0, -1.0]).unwrap(), 0.5);
        assert_eq!(per(&[0.0, -1.0], &[0.0, -1.0]).unwrap(), 0.0);
        assert_eq!(per(&[0.0], &[-0.5]).unwrap(), 1.0);
    }

    #[test]
    fn outlier_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut x: Vec<f64> = (0..200).map(|_| rng.sample::<f64, _>(StandardNormal).clamp(-2.5, 2.5)).collect();
        x[17] = 5.0;
        let mask = outlier_mask(&x).unwrap();
        assert!(!mask[17]);
        assert_eq!(mask.iter().filter(|k| !**k).count(), 1);
        assert!(outlier_mask(&[3.0; 10]).unwrap().iter().all(|k| *k));
    }

    #[test]
    fn diagnostics_reject_degenerate() {
        assert!(hurst_rs(&[1.0; 512]).is_err());
        assert!(dfa(&[1.0; 512], 1).is_err());
        assert!(hurst_rs(&[1.0; 100]).is_err());
    }

    #[test]
    fn expected_rs_small_case() {
        // n = 2: |z1 - z2| / 2 over sd |z1 - z2| / 2 is always 1
        let v = expected_rs(2);
        assert_abs_diff_eq!(v, 0.75 * (ln_gamma(0.5) - ln_gamma(1.0)).exp() / std::f64::consts::PI.sqrt(), epsilon = 1e-12);
    }

    #[test]
    fn evaluate_perfect_and_filtered() {
        let pts: Vec<EvalPoint> = (0..50)
            .map(|i| {
                let y = (i as f64 * 0.9).sin() + 2.0;
                EvalPoint { truth: y, naive: y - 0.3, mmse: y, mmae: y, samples: Some(vec![y]), intervals: vec![] }
            })
            .collect();
        let r = evaluate(&pts, &EvalOptions::default()).unwrap();
        assert_eq!((r.nmse, r.nmae, r.mase, r.smape, r.crps), (0.0, 0.0, 0.0, 0.0, Some(0.0)));
        assert!(r.intervals.iter().all(|s| s.cp == 1.0));
        assert_eq!(r.intervals.len(), 3);

        let mut spiky = pts.clone();
        spiky[10].truth = 1e3;
        let r = evaluate(&spiky, &EvalOptions { filter_3sigma: true, ..EvalOptions::default() }).unwrap();
        assert_eq!((r.excluded, r.evaluated), (1, 49));
        let v = r.to_json();
        assert_eq!(v["meta"]["excluded"], 1);
        assert!(v.get("cpe90").is_some() && v.get("ncw10").is_some());
    }
}
