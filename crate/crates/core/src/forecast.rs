//! Generative probabilistic forecasting: encode the observed history into
//! innovations, append fresh uniform pseudo-innovations, decode.

use std::io::Write;
use std::rc::Rc;

use chrono::NaiveDateTime;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autograd::{Graph, Tensor};
use crate::checkpoint::WiaeCheckpoint;
use crate::error::{Error, Result};
use crate::net::{encode_sequence, forward, Role};
use crate::series::SeriesFrame;

pub const DEFAULT_SAMPLES: usize = 1000;
pub const TIME_FORMAT: &str = "%Y-%m-%dT%H:%M:%S";

/// `K` draws of `X_{t+T}` (denormalized), row-major `[K, d]`.
#[derive(Clone, Debug, PartialEq)]
pub struct ForecastEnsemble {
    pub origin: NaiveDateTime,
    pub horizon: usize,
    pub channels: Vec<String>,
    pub seed: u64,
    samples: Vec<f64>,
    /// Intermediate steps `t+1..=t+T` per sample, `[K, T, d]`, in path mode.
    paths: Option<Vec<f64>>,
}

impl ForecastEnsemble {
    pub fn new(origin: NaiveDateTime, horizon: usize, channels: Vec<String>, seed: u64, samples: Vec<f64>) -> Result<Self> {
        let d = channels.len();
        if d == 0 || samples.is_empty() || samples.len() % d != 0 {
            return Err(Error::InvalidArgument(format!(
                "ensemble needs at least one sample of {d} channels, got {} values",
                samples.len()
            )));
        }
        if let Some(i) = samples.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("ensemble sample {} channel {}", i / d, i % d)));
        }
        Ok(ForecastEnsemble { origin, horizon, channels, seed, samples, paths: None })
    }

    /// Univariate ensemble, mostly for tests and metric plumbing.
    pub fn from_values(values: Vec<f64>) -> Result<Self> {
        ForecastEnsemble::new(NaiveDateTime::default(), 1, vec!["x".into()], 0, values)
    }

    pub fn k(&self) -> usize {
        self.samples.len() / self.dim()
    }

    pub fn dim(&self) -> usize {
        self.channels.len()
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn sample(&self, k: usize) -> &[f64] {
        let d = self.dim();
        &self.samples[k * d..(k + 1) * d]
    }

    pub fn channel(&self, c: usize) -> Vec<f64> {
        self.samples.iter().skip(c).step_by(self.dim()).copied().collect()
    }

    pub fn sorted_channel(&self, c: usize) -> Vec<f64> {
        let mut v = self.channel(c);
        v.sort_by(f64::total_cmp);
        v
    }

    pub fn paths(&self) -> Option<&[f64]> {
        self.paths.as_deref()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct IntervalForecast {
    pub beta: f64,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct SampleOptions {
    pub horizon: usize,
    pub samples: usize,
    pub seed: u64,
    /// Also keep every intermediate step `t+1..=t+T`.
    pub path: bool,
}

impl SampleOptions {
    pub fn new(horizon: usize, seed: u64) -> Self {
        SampleOptions { horizon, samples: DEFAULT_SAMPLES, seed, path: false }
    }
}

/// Stream for one origin: the seed picks the key, the origin time picks the
/// stream, so any `(seed, origin, sample)` triple is reproducible alone.
fn origin_rng(seed: u64, origin: NaiveDateTime) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(origin.and_utc().timestamp() as u64);
    rng
}

/// Uniform on the open interval (0, 1) with 24-bit resolution.
fn open_uniform(word: u32) -> f32 {
    ((word >> 8) as f32 + 0.5) * (1.0 / 16_777_216.0)
}

fn check_options(ckpt: &WiaeCheckpoint, opts: &SampleOptions) -> Result<()> {
    if opts.samples == 0 {
        return Err(Error::InvalidArgument("K must be at least 1".into()));
    }
    if opts.horizon == 0 || opts.horizon > ckpt.config.horizon {
        return Err(Error::InvalidArgument(format!(
            "horizon {} outside 1..={} the model was trained for",
            opts.horizon, ckpt.config.horizon
        )));
    }
    Ok(())
}

/// Draw `K` samples of `X_{t+T}` given `history` ending at origin `t`.
///
/// Histories shorter than `2m - 2` steps are left-padded with the training
/// mean so the `m - 1` newest innovations are defined.
pub fn gpf_sample(ckpt: &WiaeCheckpoint, history: &SeriesFrame, horizon: usize, k: usize, seed: u64) -> Result<ForecastEnsemble> {
    gpf_sample_with(ckpt, history, &SampleOptions { horizon, samples: k, seed, path: false })
}

pub fn gpf_sample_with(ckpt: &WiaeCheckpoint, history: &SeriesFrame, opts: &SampleOptions) -> Result<ForecastEnsemble> {
    let cfg = &ckpt.config;
    check_options(ckpt, opts)?;
    if history.dim() != cfg.d {
        return Err(Error::shape(format!("{} channels", cfg.d), history.dim()));
    }
    if history.len() < cfg.m {
        return Err(Error::InsufficientData { needed: cfg.m, available: history.len() });
    }
    let n = history.len();
    let lo = n.saturating_sub(2 * cfg.m - 2);
    let pad = (2 * cfg.m - 2).saturating_sub(n);
    let v = encode_normalized(ckpt, history, lo, n, pad)?;
    sample_from_innovations(ckpt, &v, v.rows() - 1, history.timestamp(n - 1), history.channels(), opts)
}

/// Ensembles at many origins of one series, encoding the series once.
/// `origins` index rows of `series`; each must have `m` rows of history.
pub fn forecast_origins(ckpt: &WiaeCheckpoint, series: &SeriesFrame, origins: &[usize], opts: &SampleOptions) -> Result<Vec<ForecastEnsemble>> {
    let cfg = &ckpt.config;
    check_options(ckpt, opts)?;
    if series.dim() != cfg.d {
        return Err(Error::shape(format!("{} channels", cfg.d), series.dim()));
    }
    let Some(&last) = origins.iter().max() else { return Ok(Vec::new()) };
    if last >= series.len() {
        return Err(Error::InvalidArgument(format!("origin {last} beyond series of length {}", series.len())));
    }
    if let Some(&first) = origins.iter().min().filter(|&&o| o + 1 < cfg.m) {
        return Err(Error::InsufficientData { needed: cfg.m, available: first + 1 });
    }
    let first = *origins.iter().min().unwrap();
    let lo = first.saturating_sub(2 * cfg.m - 3);
    let pad = (2 * cfg.m - 3).saturating_sub(first);
    let v = encode_normalized(ckpt, series, lo, last + 1, pad)?;
    origins
        .iter()
        .map(|&t| sample_from_innovations(ckpt, &v, t + pad - lo + 1 - cfg.m, series.timestamp(t), series.channels(), opts))
        .collect()
}

/// Normalize rows `lo..hi`, left-pad with `pad` zero rows (the training
/// mean) and encode. Row `r` of the result belongs to padded input row
/// `r + m - 1`.
fn encode_normalized(ckpt: &WiaeCheckpoint, series: &SeriesFrame, lo: usize, hi: usize, pad: usize) -> Result<Tensor> {
    let d = ckpt.config.d;
    let mut z = vec![0.0f32; pad * d];
    for t in lo..hi {
        for c in 0..d {
            z.push(ckpt.norm.normalize_value(c, series.value(t, c)) as f32);
        }
    }
    encode_sequence(&ckpt.config, &ckpt.params.encoder, &z)
}

/// Decode `K` windows `(V_{t-m+2..=t}, Ṽ_1..Ṽ_T)` where `V_t` is row `row`.
fn sample_from_innovations(
    ckpt: &WiaeCheckpoint,
    v: &Tensor,
    row: usize,
    origin: NaiveDateTime,
    channels: &[String],
    opts: &SampleOptions,
) -> Result<ForecastEnsemble> {
    let cfg = &ckpt.config;
    let (m, l, d) = (cfg.m, cfg.latent_dim, cfg.d);
    let horizon = opts.horizon;
    let len = m - 1 + horizon;
    let k = opts.samples;
    debug_assert!(row + 2 >= m);
    let hist = &v.data()[(row + 2 - m) * l..(row + 1) * l];

    let mut rng = origin_rng(opts.seed, origin);
    let per_sample = (horizon * l) as u128;
    let mut window = Vec::with_capacity(k * len * l);
    for s in 0..k {
        rng.set_word_pos(s as u128 * per_sample);
        window.extend_from_slice(hist);
        window.extend((0..horizon * l).map(|_| open_uniform(rng.next_u32())));
    }

    let mut g = Graph::new();
    let p = ckpt.params.decoder.bind(&mut g, false);
    let x = g.constant(Tensor::new(k * len, l, window));
    let out = forward(cfg, Role::Decoder, &mut g, &p, x, k, len);
    let idx: Vec<u32> = (0..k).flat_map(|s| (len - horizon..len).map(move |j| (s * len + j) as u32)).collect();
    let out = g.gather(out, Rc::new(idx));
    let out = g.value(out);

    let denorm = |i: usize, val: f32| ckpt.norm.denormalize_value(i % d, val as f64);
    let path: Vec<f64> = out.data().iter().enumerate().map(|(i, &val)| denorm(i, val)).collect();
    let step = horizon * d;
    let samples: Vec<f64> = (0..k).flat_map(|s| path[s * step + step - d..(s + 1) * step].to_vec()).collect();
    let mut ens = ForecastEnsemble::new(origin, horizon, channels.to_vec(), opts.seed, samples)?;
    if opts.path {
        ens.paths = Some(path);
    }
    Ok(ens)
}

/// Mean of each channel.
pub fn point_mmse(ens: &ForecastEnsemble) -> Vec<f64> {
    (0..ens.dim()).map(|c| {
        let v = ens.channel(c);
        v.iter().sum::<f64>() / v.len() as f64
    })
    .collect()
}

/// Median of each channel.
pub fn point_mmae(ens: &ForecastEnsemble) -> Vec<f64> {
    (0..ens.dim()).map(|c| median_sorted(&ens.sorted_channel(c))).collect()
}

pub fn median_sorted(s: &[f64]) -> f64 {
    let k = s.len();
    if k % 2 == 1 {
        s[k / 2]
    } else {
        0.5 * (s[k / 2 - 1] + s[k / 2])
    }
}

/// Order-statistic quantile of ascending `s`: the `qK`-th value when `qK` is
/// an integer, otherwise the average of the `⌊qK⌋`-th and the next (1-based).
pub fn quantile_sorted(s: &[f64], q: f64) -> f64 {
    let k = s.len();
    let qk = q * k as f64;
    let r = qk.round();
    let at = |i: f64| s[(i as usize).clamp(1, k) - 1];
    if (qk - r).abs() <= 1e-9 * qk.max(1.0) {
        at(r)
    } else {
        let f = qk.floor();
        0.5 * (at(f) + at(f + 1.0))
    }
}

pub fn quantile(ens: &ForecastEnsemble, q: f64) -> Result<Vec<f64>> {
    if !(q > 0.0 && q < 1.0) {
        return Err(Error::InvalidArgument(format!("quantile level {q} outside (0, 1)")));
    }
    Ok((0..ens.dim()).map(|c| quantile_sorted(&ens.sorted_channel(c), q)).collect())
}

/// Interval between the `0.5 - β/2` and `0.5 + β/2` quantiles.
pub fn interval(ens: &ForecastEnsemble, beta: f64) -> Result<IntervalForecast> {
    if !(beta > 0.0 && beta < 1.0) {
        return Err(Error::InvalidArgument(format!("interval level {beta} outside (0, 1)")));
    }
    Ok(IntervalForecast { beta, lower: quantile(ens, 0.5 - beta / 2.0)?, upper: quantile(ens, 0.5 + beta / 2.0)? })
}

/// Shortest text that parses back to the same `f64`.
pub(crate) fn fmt_f64(v: f64) -> String {
    format!("{v}")
}

/// Header `origin_time,horizon_steps,sample_id,<channel>...`, one row per sample.
pub fn write_ensemble_csv(out: &mut impl Write, ensembles: &[ForecastEnsemble]) -> Result<()> {
    let io = |e| Error::io("<ensemble csv>", e);
    let Some(first) = ensembles.first() else { return Ok(()) };
    write!(out, "origin_time,horizon_steps,sample_id").map_err(io)?;
    for c in &first.channels {
        write!(out, ",{c}").map_err(io)?;
    }
    writeln!(out).map_err(io)?;
    for ens in ensembles {
        let ts = ens.origin.format(TIME_FORMAT).to_string();
        for s in 0..ens.k() {
            let mut line = format!("{ts},{},{s}", ens.horizon);
            for v in ens.sample(s) {
                line.push(',');
                line.push_str(&fmt_f64(*v));
            }
            writeln!(out, "{line}").map_err(io)?;
        }
    }
    Ok(())
}

pub const SUMMARY_HEADER: &str = "origin_time,channel,mmse,mmae,q05,q25,q50,q75,q95,lo90,hi90";

/// One row per origin and channel with point, quantile and 90% interval forecasts.
pub fn write_summary_csv(out: &mut impl Write, ensembles: &[ForecastEnsemble]) -> Result<()> {
    let io = |e| Error::io("<summary csv>", e);
    writeln!(out, "{SUMMARY_HEADER}").map_err(io)?;
    for ens in ensembles {
        let ts = ens.origin.format(TIME_FORMAT).to_string();
        let mmse = point_mmse(ens);
        for (c, name) in ens.channels.iter().enumerate() {
            let s = ens.sorted_channel(c);
            let vals = [
                mmse[c],
                median_sorted(&s),
                quantile_sorted(&s, 0.05),
                quantile_sorted(&s, 0.25),
                quantile_sorted(&s, 0.5),
                quantile_sorted(&s, 0.75),
                quantile_sorted(&s, 0.95),
                quantile_sorted(&s, 0.05),
                quantile_sorted(&s, 0.95),
            ];
            let cells: Vec<String> = vals.iter().map(|v| fmt_f64(*v)).collect();
            writeln!(out, "{ts},{name},{}", cells.join(",")).map_err(io)?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::{NetConfig, ParamSet, WiaeParams};
    use crate::series::NormStats;
    use crate::train::TrainMeta;
    use chrono::{NaiveDate, TimeDelta};
    use proptest::prelude::*;

    fn ens(v: &[f64]) -> ForecastEnsemble {
        ForecastEnsemble::from_values(v.to_vec()).unwrap()
    }

    #[test]
    fn point_forecasts() {
        assert_eq!(point_mmse(&ens(&[1.0, 2.0, 3.0])), vec![2.0]);
        assert_eq!(point_mmse(&ens(&[-1.0, 1.0])), vec![0.0]);
        assert_eq!(point_mmse(&ens(&[4.5; 7])), vec![4.5]);
        assert_eq!(point_mmae(&ens(&[9.0, 1.0, 5.0])), vec![5.0]);
        assert_eq!(point_mmae(&ens(&[3.0, 1.0])), vec![2.0]);
        assert_eq!(point_mmae(&ens(&[-2.0; 4])), vec![-2.0]);
        assert!(ForecastEnsemble::from_values(vec![]).is_err());
        assert!(ForecastEnsemble::from_values(vec![f64::NAN]).is_err());
    }

    #[test]
    fn quantile_examples() {
        let e = ens(&[4.0, 2.0, 3.0, 1.0]);
        assert_eq!(quantile(&e, 0.5).unwrap(), vec![2.0]);
        assert_eq!(quantile(&e, 0.3).unwrap(), vec![1.5]);
        assert!(quantile(&e, 0.0).is_err());
        assert!(quantile(&e, 1.0).is_err());
    }

    #[test]
    fn interval_examples() {
        let e = ens(&(1..=100).map(f64::from).collect::<Vec<_>>());
        let i = interval(&e, 0.9).unwrap();
        assert_eq!((i.lower[0], i.upper[0]), (5.0, 95.0));
        let small = ens(&[1.0, 2.0, 3.0]);
        // the averaging rule keeps the upper bound at the midpoint of the top
        // two order statistics until qK reaches K exactly
        let i = interval(&small, 0.999).unwrap();
        assert_eq!((i.lower[0], i.upper[0]), (1.0, 2.5));
        let i = interval(&ens(&[7.0; 5]), 0.5).unwrap();
        assert_eq!((i.lower[0], i.upper[0]), (7.0, 7.0));
        assert!(interval(&small, 1.0).is_err());
    }

    proptest! {
        #[test]
        fn affine_equivariance(v in prop::collection::vec(-1e3f64..1e3, 1..40), a in 0.1f64..10.0, b in -50.0f64..50.0) {
            let e = ens(&v);
            let scaled = ens(&v.iter().map(|x| a * x + b).collect::<Vec<_>>());
            let tol = 1e-9 * (1.0 + b.abs() + a * 1e3);
            prop_assert!((point_mmse(&scaled)[0] - (a * point_mmse(&e)[0] + b)).abs() < tol);
            prop_assert!((point_mmae(&scaled)[0] - (a * point_mmae(&e)[0] + b)).abs() < tol);
        }

        #[test]
        fn permutation_invariance(v in prop::collection::vec(-10.0f64..10.0, 2..30), rot in 0usize..30) {
            let mut w = v.clone();
            let r = rot % w.len();
            w.rotate_left(r);
            w.reverse();
            let (a, b) = (ens(&v), ens(&w));
            prop_assert_eq!(point_mmae(&a), point_mmae(&b));
            prop_assert_eq!(quantile(&a, 0.37).unwrap(), quantile(&b, 0.37).unwrap());
        }
    }

    /// Decoder whose output is the logit of its newest latent coordinate.
    fn passthrough(m: usize) -> WiaeCheckpoint {
        let cfg = NetConfig { hidden: 2, ..NetConfig::new(m, 1, 1) };
        let mut params = WiaeParams::zeros(&cfg);
        let mut enc = ParamSet::zeros(&cfg, Role::Encoder);
        // encoder skip: newest input only
        let i = enc.names.iter().position(|n| n.ends_with("skip.w")).unwrap();
        enc.tensors[i].data_mut()[0] = 1.0;
        params.encoder = enc;
        let i = params.decoder.names.iter().position(|n| n.ends_with("skip.w")).unwrap();
        params.decoder.tensors[i].data_mut()[0] = 1.0;
        WiaeCheckpoint { config: cfg, params, norm: NormStats::identity(1), meta: TrainMeta::default() }
    }

    fn history(n: usize) -> SeriesFrame {
        let start = NaiveDate::from_ymd_opt(2020, 1, 1).unwrap().and_hms_opt(0, 0, 0).unwrap();
        SeriesFrame::univariate(start, TimeDelta::minutes(5), "x", (0..n).map(|i| (i as f64 * 0.7).sin()).collect()).unwrap()
    }

    #[test]
    fn passthrough_mean_is_half() {
        let ck = passthrough(4);
        let e = gpf_sample(&ck, &history(10), 1, 100_000, 3).unwrap();
        let mean = point_mmse(&e)[0];
        // the decoder output is logit(u); recover u before averaging
        let u = e.samples().iter().map(|x| crate::autograd::sigmoid(*x as f32) as f64).sum::<f64>() / e.k() as f64;
        assert!((u - 0.5).abs() < 0.005, "{u}");
        assert!(mean.abs() < 0.05, "{mean}");
    }

    #[test]
    fn sampling_is_reproducible_per_sample() {
        let ck = passthrough(4);
        let h = history(12);
        let a = gpf_sample(&ck, &h, 1, 50, 9).unwrap();
        let b = gpf_sample(&ck, &h, 1, 50, 9).unwrap();
        assert_eq!(a, b);
        let small = gpf_sample(&ck, &h, 1, 20, 9).unwrap();
        assert_eq!(small.samples(), &a.samples()[..20]);
        let other = gpf_sample(&ck, &h, 1, 50, 10).unwrap();
        assert_ne!(a.samples(), other.samples());
        let mut buf_a = Vec::new();
        let mut buf_b = Vec::new();
        write_ensemble_csv(&mut buf_a, &[a]).unwrap();
        write_ensemble_csv(&mut buf_b, &[b]).unwrap();
        assert_eq!(buf_a, buf_b);
    }

    #[test]
    fn batch_origins_match_single_histories() {
        let cfg = NetConfig { hidden: 3, ..NetConfig::new(5, 1, 2) };
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let ck = WiaeCheckpoint {
            params: WiaeParams::init(&cfg, &mut rng),
            config: cfg,
            norm: NormStats { mean: vec![0.3], scale: vec![2.0] },
            meta: TrainMeta::default(),
        };
        let s = history(40);
        let opts = SampleOptions { horizon: 2, samples: 7, seed: 1, path: true };
        let many = forecast_origins(&ck, &s, &[4, 9, 20, 39], &opts).unwrap();
        for (e, &t) in many.iter().zip(&[4usize, 9, 20, 39]) {
            let single = gpf_sample_with(&ck, &s.slice(0..t + 1).unwrap(), &opts).unwrap();
            assert_eq!(e.origin, single.origin);
            for (a, b) in e.samples().iter().zip(single.samples()) {
                assert!((a - b).abs() < 1e-4, "origin {t}: {a} vs {b}");
            }
            let p = e.paths().unwrap();
            assert_eq!(p.len(), 7 * 2);
            assert_eq!(p[3], e.samples()[1]);
        }
    }

    #[test]
    fn rejects_bad_requests() {
        let ck = passthrough(4);
        assert!(gpf_sample(&ck, &history(3), 1, 10, 0).is_err());
        assert!(gpf_sample(&ck, &history(10), 2, 10, 0).is_err());
        assert!(gpf_sample(&ck, &history(10), 1, 0, 0).is_err());
    }

    #[test]
    fn summary_layout() {
        let mut e = ens(&(1..=20).map(f64::from).collect::<Vec<_>>());
        e.origin = NaiveDate::from_ymd_opt(2021, 3, 4).unwrap().and_hms_opt(5, 6, 0).unwrap();
        let mut buf = Vec::new();
        write_summary_csv(&mut buf, &[e]).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], SUMMARY_HEADER);
        assert_eq!(lines[1], "2021-03-04T05:06:00,x,10.5,10.5,1,5,10,15,19,1,19");
    }
}
