//! `wiae` command line: train, forecast, evaluate, synth, diagnose.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use chrono::NaiveDateTime;
use clap::{Args, Parser, Subcommand};
use serde_json::json;
use sha2::{Digest, Sha256};

use crate::checkpoint::WiaeCheckpoint;
use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::forecast::{forecast_origins, median_sorted, write_ensemble_csv, write_summary_csv, SampleOptions};
use crate::ingest::{align, fill_gaps, format_time, load_csv, parse_iso, write_csv_file, CsvSchema};
use crate::metrics::{dfa, evaluate, hurst_rs, EvalOptions, EvalPoint, InnovationReport};
use crate::net::encode_sequence;
use crate::oracle::{gen_ar, independence_autocorr, uniformity_ks, ArProcess, DEFAULT_BURN_IN};
use crate::series::SeriesFrame;
use crate::train::train_with_log;

#[derive(Debug, Parser)]
#[command(name = "wiae", version, about = "Generative probabilistic forecasting with weak innovation autoencoders")]
pub struct Cli {
    /// More log output (repeat for debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit a model; writes model.wiae and train_log.ndjson to the output directory.
    Train(TrainArgs),
    /// Sample forecast ensembles; writes ensemble.csv and summary.csv.
    Forecast(ForecastArgs),
    /// Score forecasts against observed data; prints a JSON report.
    Evaluate(EvaluateArgs),
    /// Generate a Gaussian AR series as canonical CSV.
    Synth(SynthArgs),
    /// Hurst (R/S) and DFA exponents of a series as JSON.
    Diagnose(DiagnoseArgs),
}

#[derive(Debug, Args)]
pub struct ConfigArgs {
    /// TOML run configuration.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Override a configuration key, e.g. `--set epochs=20`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub cfg: ConfigArgs,
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ForecastArgs {
    #[command(flatten)]
    pub cfg: ConfigArgs,
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Steps ahead; defaults to the trained horizon.
    #[arg(long)]
    pub horizon: Option<usize>,
    /// Ensemble size K.
    #[arg(long)]
    pub samples: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// First forecast origin (inclusive, ISO timestamp).
    #[arg(long)]
    pub from: Option<String>,
    /// Last forecast origin (inclusive, ISO timestamp).
    #[arg(long)]
    pub to: Option<String>,
    /// Keep intermediate steps in the ensemble file.
    #[arg(long)]
    pub path: bool,
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[command(flatten)]
    pub cfg: ConfigArgs,
    /// Ensemble or summary CSV written by `forecast`.
    #[arg(long)]
    pub forecast: PathBuf,
    /// Observed series (canonical CSV unless `--schema` says otherwise).
    #[arg(long)]
    pub truth: PathBuf,
    #[arg(long)]
    pub schema: Option<String>,
    #[arg(long)]
    pub channel: Option<String>,
    #[arg(long)]
    pub filter_3sigma: bool,
    /// Also report the sign error rate of the median forecast.
    #[arg(long)]
    pub per: bool,
    /// Comma-separated interval levels.
    #[arg(long, value_delimiter = ',')]
    pub betas: Option<Vec<f64>>,
    /// Add innovation uniformity/independence checks from this model.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Span for the innovation checks: the evaluated targets or the model's
    /// training rows (the truth file must then be the training file).
    #[arg(long, value_enum, default_value_t = InnovationSpan::Test)]
    pub innovations: InnovationSpan,
    /// Write the report here instead of stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum InnovationSpan {
    Test,
    Train,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// AR coefficients, comma separated.
    #[arg(long, value_delimiter = ',', default_value = "0.8")]
    pub phi: Vec<f64>,
    #[arg(long, default_value_t = 1.0)]
    pub sigma: f64,
    #[arg(long, default_value_t = 22_000)]
    pub n: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = DEFAULT_BURN_IN)]
    pub burn_in: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct DiagnoseArgs {
    pub data: PathBuf,
    #[arg(long, default_value = "canonical")]
    pub schema: String,
    #[arg(long)]
    pub channel: Option<String>,
    #[arg(long, default_value_t = 1)]
    pub dfa_order: usize,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Exit status for an error: 2 for configuration/usage problems and missing
/// inputs, 1 for everything else.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) | Error::InvalidArgument(_) => 2,
        Error::Io { source, .. } if source.kind() == std::io::ErrorKind::NotFound => 2,
        _ => 1,
    }
}

fn error_kind(e: &Error) -> &'static str {
    match e {
        Error::InvalidArgument(_) => "invalid_argument",
        Error::Shape { .. } => "shape",
        Error::NonFinite(_) => "non_finite",
        Error::InsufficientData { .. } => "insufficient_data",
        Error::Config(_) => "config",
        Error::Checkpoint(_) => "checkpoint",
        Error::Diverged { .. } => "diverged",
        Error::Parse { .. } => "parse",
        Error::Data(_) => "data",
        Error::Degenerate(_) => "degenerate",
        Error::Io { .. } => "io",
        Error::Json(_) => "json",
    }
}

/// One JSON line for stderr.
pub fn error_line(e: &Error) -> String {
    json!({ "error": error_kind(e), "message": e.to_string() }).to_string()
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train(a) => cmd_train(a),
        Command::Forecast(a) => cmd_forecast(a),
        Command::Evaluate(a) => cmd_evaluate(a),
        Command::Synth(a) => cmd_synth(a),
        Command::Diagnose(a) => cmd_diagnose(a),
    }
}

fn load_config(args: &ConfigArgs) -> Result<RunConfig> {
    let mut cfg = match &args.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    cfg.apply_overrides(&args.set)?;
    Ok(cfg)
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path).map_err(|e| Error::io(path, e))?))
}

fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

/// Load, gap-fill, align and select channels as the configuration says.
pub fn load_series(cfg: &RunConfig, data: &Path) -> Result<SeriesFrame> {
    let mut frames = vec![fill_gaps(&load_csv(data, &cfg.schema()?)?, cfg.max_gap)?];
    for (i, p) in cfg.extra_data.iter().enumerate() {
        let schema = match cfg.extra_schemas.get(i) {
            Some(s) => CsvSchema::preset(s)?,
            None => cfg.schema()?,
        };
        frames.push(fill_gaps(&load_csv(p, &schema)?, cfg.max_gap)?);
    }
    let step = frames[0].step();
    let frame = if frames.len() == 1 { frames.pop().unwrap() } else { align(&frames, step, cfg.aggregation)? };
    if cfg.channels.is_empty() {
        Ok(frame)
    } else {
        frame.select(&cfg.channels)
    }
}

fn data_path(cli: &Option<PathBuf>, cfg: &RunConfig) -> Result<PathBuf> {
    cli.clone().or_else(|| cfg.data.clone()).ok_or_else(|| Error::Config("no data file given (--data or `data`)".into()))
}

pub fn cmd_train(a: TrainArgs) -> Result<()> {
    let mut cfg = load_config(&a.cfg)?;
    if let Some(d) = a.out_dir {
        cfg.out_dir = d;
    }
    cfg.validate()?;
    let data = data_path(&a.data, &cfg)?;
    let series = load_series(&cfg, &data)?;
    let (train_range, _) = cfg.split(series.step(), series.len())?;
    let train = series.slice(train_range.clone())?;
    let net = cfg.net_config(series.dim());
    net.validate().map_err(|e| Error::Config(e.to_string()))?;
    ensure_dir(&cfg.out_dir)?;
    let log_path = cfg.out_dir.join("train_log.ndjson");
    let mut log = create(&log_path)?;
    let mut out = train_with_log(&train, &net, &cfg.train_config(), Some(&mut log))?;
    log.flush().map_err(|e| Error::io(&log_path, e))?;
    out.checkpoint.meta.train_range = Some([train_range.start, train_range.end]);
    out.checkpoint.save_file(&cfg.out_dir.join("model.wiae"))?;
    if let Some(mut best) = out.best {
        best.meta.train_range = Some([train_range.start, train_range.end]);
        best.save_file(&cfg.out_dir.join("best_model.wiae"))?;
    }
    log::info!("wrote {}", cfg.out_dir.join("model.wiae").display());
    Ok(())
}

fn parse_time_arg(s: &str) -> Result<NaiveDateTime> {
    parse_iso(s).map_err(Error::InvalidArgument)
}

pub fn cmd_forecast(a: ForecastArgs) -> Result<()> {
    let mut cfg = load_config(&a.cfg)?;
    if let Some(d) = a.out_dir {
        cfg.out_dir = d;
    }
    let ckpt = WiaeCheckpoint::load_file(&a.checkpoint)?;
    let horizon = a.horizon.unwrap_or(ckpt.config.horizon);
    let samples = a.samples.unwrap_or(cfg.samples);
    let seed = a.seed.unwrap_or(cfg.forecast_seed);
    if horizon == 0 || horizon > ckpt.config.horizon {
        return Err(Error::InvalidArgument(format!(
            "horizon {horizon} exceeds the trained horizon {}",
            ckpt.config.horizon
        )));
    }
    let data = data_path(&a.data, &cfg)?;
    let series = load_series(&cfg, &data)?;
    let m = ckpt.config.m;

    let origins: Vec<usize> = if a.from.is_some() || a.to.is_some() {
        let lo = a.from.as_deref().map(parse_time_arg).transpose()?;
        let hi = a.to.as_deref().map(parse_time_arg).transpose()?;
        (m - 1..series.len())
            .filter(|&t| {
                let ts = series.timestamp(t);
                lo.is_none_or(|l| ts >= l) && hi.is_none_or(|h| ts <= h)
            })
            .collect()
    } else if cfg.test_span.is_some() || cfg.test_steps.is_some() {
        // every origin whose target falls in the test range
        let (_, test) = cfg.split(series.step(), series.len())?;
        (test.start.saturating_sub(horizon).max(m - 1)..test.end - horizon).collect()
    } else {
        vec![series.len() - 1]
    };
    if origins.is_empty() {
        return Err(Error::InvalidArgument("no forecast origins in the requested range".into()));
    }
    let opts = SampleOptions { horizon, samples, seed, path: a.path };
    let ens = forecast_origins(&ckpt, &series, &origins, &opts)?;
    ensure_dir(&cfg.out_dir)?;
    let p = cfg.out_dir.join("ensemble.csv");
    let mut w = create(&p)?;
    write_ensemble_csv(&mut w, &ens)?;
    w.flush().map_err(|e| Error::io(&p, e))?;
    let p = cfg.out_dir.join("summary.csv");
    let mut w = create(&p)?;
    write_summary_csv(&mut w, &ens)?;
    w.flush().map_err(|e| Error::io(&p, e))?;
    log::info!("{} origins x {samples} samples written to {}", ens.len(), cfg.out_dir.display());
    Ok(())
}

/// Per-origin forecast information read back from a CSV.
#[derive(Default)]
struct OriginForecast {
    horizon: usize,
    samples: Vec<f64>,
    summary: Option<(f64, f64, Vec<(f64, f64, f64)>)>,
}

fn read_forecast_csv(path: &Path, channel: Option<&str>) -> Result<(String, BTreeMap<NaiveDateTime, OriginForecast>)> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut rdr = csv::Reader::from_reader(file);
    let headers = rdr.headers().map_err(|e| Error::Parse { path: path.display().to_string(), line: 1, msg: e.to_string() })?.clone();
    let bad = |line: u64, msg: String| Error::Parse { path: path.display().to_string(), line: line as usize, msg };
    let mut out: BTreeMap<NaiveDateTime, OriginForecast> = BTreeMap::new();
    let h: Vec<&str> = headers.iter().collect();
    if h.len() > 3 && h[..3] == ["origin_time", "horizon_steps", "sample_id"] {
        let names = &h[3..];
        let ch = channel.unwrap_or(names[0]);
        let col = 3 + names.iter().position(|n| *n == ch).ok_or_else(|| Error::InvalidArgument(format!("no channel {ch:?} in {}", path.display())))?;
        for rec in rdr.records() {
            let rec = rec.map_err(|e| bad(e.position().map_or(0, |p| p.line()), e.to_string()))?;
            let line = rec.position().map_or(0, |p| p.line());
            let ts = parse_iso(&rec[0]).map_err(|m| bad(line, m))?;
            let horizon: usize = rec[1].parse().map_err(|_| bad(line, format!("bad horizon {:?}", &rec[1])))?;
            let v: f64 = rec[col].parse().map_err(|_| bad(line, format!("bad value {:?}", &rec[col])))?;
            let e = out.entry(ts).or_default();
            e.horizon = horizon;
            e.samples.push(v);
        }
        Ok((ch.to_string(), out))
    } else if h == crate::forecast::SUMMARY_HEADER.split(',').collect::<Vec<_>>() {
        let mut chosen: Option<String> = channel.map(str::to_string);
        for rec in rdr.records() {
            let rec = rec.map_err(|e| bad(e.position().map_or(0, |p| p.line()), e.to_string()))?;
            let line = rec.position().map_or(0, |p| p.line());
            let ch = chosen.get_or_insert_with(|| rec[1].to_string());
            if rec[1] != **ch {
                continue;
            }
            let ts = parse_iso(&rec[0]).map_err(|m| bad(line, m))?;
            let f: Vec<f64> = (2..11).map(|i| rec[i].parse::<f64>().map_err(|_| bad(line, format!("bad value {:?}", &rec[i])))).collect::<Result<_>>()?;
            let intervals = vec![(0.9, f[7], f[8]), (0.5, f[3], f[5])];
            out.entry(ts).or_default().summary = Some((f[0], f[1], intervals));
        }
        Ok((chosen.unwrap_or_default(), out))
    } else {
        Err(bad(1, "header is neither an ensemble nor a summary forecast".into()))
    }
}

fn sha256_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect())
}

/// KS distance and lag 1..=10 autocorrelations of learned innovations at
/// rows `lo..hi` of `series`.
pub fn innovation_report(ckpt: &WiaeCheckpoint, series: &SeriesFrame, lo: usize, hi: usize) -> Result<InnovationReport> {
    let m = ckpt.config.m;
    let start = lo.saturating_sub(m - 1);
    let mut z = Vec::with_capacity((hi - start) * series.dim());
    for t in start..hi {
        for c in 0..series.dim() {
            z.push(ckpt.norm.normalize_value(c, series.value(t, c)) as f32);
        }
    }
    let v = encode_sequence(&ckpt.config, &ckpt.params.encoder, &z)?;
    let l = ckpt.config.latent_dim;
    let rows = v.data();
    let pooled: Vec<f64> = rows.iter().map(|&x| x as f64).collect();
    let ks = uniformity_ks(&pooled)?;
    let mut autocorr = vec![0.0f64; 10];
    for c in 0..l {
        let seq: Vec<f64> = rows.iter().skip(c).step_by(l).map(|&x| x as f64).collect();
        for (k, r) in independence_autocorr(&seq, 10)?.into_iter().enumerate() {
            if r.abs() > autocorr[k].abs() {
                autocorr[k] = r;
            }
        }
    }
    Ok(InnovationReport { ks, autocorr, count: pooled.len() })
}

pub fn cmd_evaluate(a: EvaluateArgs) -> Result<()> {
    let mut cfg = load_config(&a.cfg)?;
    if let Some(s) = &a.schema {
        cfg.schema = s.clone();
    }
    if let Some(b) = &a.betas {
        cfg.betas = b.clone();
    }
    cfg.channels.clear();
    let truth = load_series(&cfg, &a.truth)?;
    let (channel, forecasts) = read_forecast_csv(&a.forecast, a.channel.as_deref())?;
    let c = truth
        .channels()
        .iter()
        .position(|n| *n == channel)
        .ok_or_else(|| Error::InvalidArgument(format!("truth has no channel {channel:?}")))?;
    if forecasts.is_empty() {
        return Err(Error::Data(format!("{}: no forecasts", a.forecast.display())));
    }
    let mut points = Vec::with_capacity(forecasts.len());
    let mut horizon = 0;
    let mut span = (usize::MAX, 0usize);
    for (ts, f) in &forecasts {
        let t = truth
            .index_of(*ts)
            .ok_or_else(|| Error::Data(format!("forecast origin {} is not on the truth grid", format_time(*ts))))?;
        let h = if f.summary.is_some() { cfg.horizon } else { f.horizon };
        horizon = h;
        if t + h >= truth.len() {
            return Err(Error::Data(format!("truth ends before the target of origin {}", format_time(*ts))));
        }
        span = (span.0.min(t + 1), span.1.max(t + h + 1));
        let y = truth.value(t + h, c);
        let naive = truth.value(t, c);
        let point = match &f.summary {
            Some((mmse, mmae, intervals)) => EvalPoint { truth: y, naive, mmse: *mmse, mmae: *mmae, samples: None, intervals: intervals.clone() },
            None => {
                let mut s = f.samples.clone();
                s.sort_by(f64::total_cmp);
                let mean = s.iter().sum::<f64>() / s.len() as f64;
                EvalPoint { truth: y, naive, mmse: mean, mmae: median_sorted(&s), samples: Some(s), intervals: Vec::new() }
            }
        };
        points.push(point);
    }
    let opts = EvalOptions { horizon, betas: cfg.betas.clone(), filter_3sigma: a.filter_3sigma || cfg.filter_3sigma, per: a.per || cfg.per };
    let mut report = evaluate(&points, &opts)?;
    report.digests.push(("forecast_sha256".into(), sha256_file(&a.forecast)?));
    report.digests.push(("truth_sha256".into(), sha256_file(&a.truth)?));
    if let Some(p) = &a.checkpoint {
        let ckpt = WiaeCheckpoint::load_file(p)?;
        let sel = truth.select(&ckpt_channels(&ckpt, &truth, &channel)?)?;
        let (lo, hi) = match a.innovations {
            InnovationSpan::Test => span,
            InnovationSpan::Train => {
                let [lo, hi] = ckpt.meta.train_range.ok_or_else(|| Error::Checkpoint("model records no training range".into()))?;
                if hi > sel.len() {
                    return Err(Error::Data(format!("truth has {} rows, the training range ends at {hi}", sel.len())));
                }
                (lo + ckpt.config.m - 1, hi)
            }
        };
        report.innovation = Some(innovation_report(&ckpt, &sel, lo, hi)?);
        report.digests.push(("checkpoint_sha256".into(), sha256_file(p)?));
    }
    let text = serde_json::to_string_pretty(&report.to_json())?;
    match &a.out {
        Some(p) => std::fs::write(p, text + "\n").map_err(|e| Error::io(p, e))?,
        None => println!("{text}"),
    }
    Ok(())
}

/// Channels the checkpoint was trained on, taken from the truth file.
fn ckpt_channels(ckpt: &WiaeCheckpoint, truth: &SeriesFrame, channel: &str) -> Result<Vec<String>> {
    if ckpt.config.d == truth.dim() {
        Ok(truth.channels().to_vec())
    } else if ckpt.config.d == 1 {
        Ok(vec![channel.to_string()])
    } else {
        Err(Error::InvalidArgument(format!("checkpoint expects {} channels, truth has {}", ckpt.config.d, truth.dim())))
    }
}

pub fn cmd_synth(a: SynthArgs) -> Result<()> {
    let p = ArProcess::new(a.phi, a.sigma)?;
    let s = gen_ar(&p, a.n, a.seed, a.burn_in)?;
    write_csv_file(&a.out, &s)
}

pub fn cmd_diagnose(a: DiagnoseArgs) -> Result<()> {
    let cfg = RunConfig { schema: a.schema.clone(), ..RunConfig::default() };
    let s = load_series(&cfg, &a.data)?;
    let c = match &a.channel {
        Some(n) => s.channels().iter().position(|x| x == n).ok_or_else(|| Error::InvalidArgument(format!("no channel {n:?}")))?,
        None => 0,
    };
    let x = s.channel(c);
    let h = hurst_rs(&x)?;
    let d = dfa(&x, a.dfa_order)?;
    let report = json!({
        "channel": s.channels()[c],
        "n": x.len(),
        "hurst": h.exponent,
        "dfa": d.exponent,
        "dfa_order": a.dfa_order,
        "hurst_table": h.table.iter().map(|(n, rs)| json!({"block": n, "rs": rs})).collect::<Vec<_>>(),
        "dfa_table": d.table.iter().map(|(n, f)| json!({"window": n, "fluctuation": f})).collect::<Vec<_>>(),
    });
    let text = serde_json::to_string_pretty(&report)?;
    match &a.out {
        Some(p) => std::fs::write(p, text + "\n").map_err(|e| Error::io(p, e))?,
        None => println!("{text}"),
    }
    Ok(())
}

/// Entry point used by the binary; returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).try_init();
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("{}", error_line(&e));
            exit_code(&e)
        }
    }
}
