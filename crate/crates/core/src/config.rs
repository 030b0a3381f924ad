//! Flat TOML run configuration shared by the CLI subcommands.

use std::path::{Path, PathBuf};
use std::time::Duration;

use chrono::TimeDelta;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forecast::DEFAULT_SAMPLES;
use crate::ingest::{Aggregation, CsvSchema};
use crate::net::{default_dilations, NetConfig};
use crate::train::TrainConfig;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    // data
    pub data: Option<PathBuf>,
    /// Additional files aligned onto the first one's grid.
    pub extra_data: Vec<PathBuf>,
    pub schema: String,
    pub extra_schemas: Vec<String>,
    pub aggregation: Option<Aggregation>,
    /// Channels to model, in order; empty keeps all.
    pub channels: Vec<String>,
    pub max_gap: usize,

    // split: spans are durations ("20000h", "30days"); steps count rows
    pub train_span: Option<String>,
    pub test_span: Option<String>,
    pub train_steps: Option<usize>,
    pub test_steps: Option<usize>,

    // network
    pub m: usize,
    pub horizon: usize,
    pub hidden: usize,
    pub critic_hidden: Option<usize>,
    pub latent_dim: Option<usize>,
    pub dilations: Option<Vec<usize>>,

    // training
    pub lambda: f64,
    pub critic_steps: usize,
    pub gp_weight: f64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub lr_final_factor: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub steps_per_epoch: Option<usize>,
    pub seed: u64,
    pub validation: bool,

    // forecasting
    pub samples: usize,
    pub forecast_seed: u64,

    // evaluation
    pub betas: Vec<f64>,
    pub filter_3sigma: bool,
    pub per: bool,

    pub out_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        let t = TrainConfig::default();
        RunConfig {
            data: None,
            extra_data: Vec::new(),
            schema: "canonical".into(),
            extra_schemas: Vec::new(),
            aggregation: None,
            channels: Vec::new(),
            max_gap: 0,
            train_span: None,
            test_span: None,
            train_steps: None,
            test_steps: None,
            m: 16,
            horizon: 1,
            hidden: 16,
            critic_hidden: None,
            latent_dim: None,
            dilations: None,
            lambda: t.lambda,
            critic_steps: t.critic_steps,
            gp_weight: t.gp_weight,
            lr: t.lr,
            beta1: t.beta1,
            beta2: t.beta2,
            eps: t.eps,
            lr_final_factor: t.lr_final_factor,
            batch_size: t.batch_size,
            epochs: t.epochs,
            steps_per_epoch: t.steps_per_epoch,
            seed: t.seed,
            validation: t.validation,
            samples: DEFAULT_SAMPLES,
            forecast_seed: 0,
            betas: vec![0.9, 0.5, 0.1],
            filter_3sigma: false,
            per: false,
            out_dir: PathBuf::from("."),
        }
    }
}

/// `"20000h"`, `"30days"`, `"15s"` as a chrono duration.
pub fn parse_span(s: &str) -> Result<TimeDelta> {
    let d: Duration = humantime::parse_duration(s).map_err(|e| Error::Config(format!("span {s:?}: {e}")))?;
    TimeDelta::from_std(d).map_err(|e| Error::Config(format!("span {s:?}: {e}")))
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<RunConfig> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string().replace('\n', " ")))?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        RunConfig::from_toml(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    /// Apply `key=value` overrides, with the value in TOML syntax (bare
    /// words are taken as strings).
    pub fn apply_overrides(&mut self, sets: &[String]) -> Result<()> {
        if sets.is_empty() {
            return Ok(());
        }
        let mut table = toml::Table::try_from(&*self).map_err(|e| Error::Config(e.to_string()))?;
        for s in sets {
            let (k, v) = s.split_once('=').ok_or_else(|| Error::Config(format!("override {s:?} is not key=value")))?;
            let k = k.trim();
            let v = v.trim();
            let value: toml::Value = toml::from_str::<toml::Table>(&format!("v = {v}"))
                .ok()
                .and_then(|mut t| t.remove("v"))
                .unwrap_or_else(|| toml::Value::String(v.to_string()));
            table.insert(k.to_string(), value);
        }
        *self = table.try_into().map_err(|e: toml::de::Error| Error::Config(e.to_string().replace('\n', " ")))?;
        Ok(())
    }

    pub fn net_config(&self, d: usize) -> NetConfig {
        NetConfig {
            m: self.m,
            d,
            latent_dim: self.latent_dim.unwrap_or(d),
            horizon: self.horizon,
            hidden: self.hidden,
            critic_hidden: self.critic_hidden,
            dilations: self.dilations.clone().unwrap_or_else(|| default_dilations(self.m)),
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            lambda: self.lambda,
            critic_steps: self.critic_steps,
            gp_weight: self.gp_weight,
            lr: self.lr,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps,
            lr_final_factor: self.lr_final_factor,
            batch_size: self.batch_size,
            epochs: self.epochs,
            steps_per_epoch: self.steps_per_epoch,
            seed: self.seed,
            validation: self.validation,
        }
    }

    pub fn schema(&self) -> Result<CsvSchema> {
        CsvSchema::preset(&self.schema)
    }

    /// Everything that can be checked without touching data.
    pub fn validate(&self) -> Result<()> {
        let d = self.channels.len().max(1);
        let net = self.net_config(d);
        net.validate().map_err(|e| Error::Config(e.to_string()))?;
        self.train_config().validate()?;
        self.schema()?;
        for s in &self.extra_schemas {
            CsvSchema::preset(s)?;
        }
        if !self.extra_schemas.is_empty() && self.extra_schemas.len() != self.extra_data.len() {
            return Err(Error::Config("extra_schemas must match extra_data one to one".into()));
        }
        if self.samples == 0 {
            return Err(Error::Config("samples must be at least 1".into()));
        }
        if let Some(b) = self.betas.iter().find(|b| !(**b > 0.0 && **b < 1.0)) {
            return Err(Error::Config(format!("interval level {b} outside (0, 1)")));
        }
        if self.train_span.is_some() && self.train_steps.is_some() {
            return Err(Error::Config("give train_span or train_steps, not both".into()));
        }
        if self.test_span.is_some() && self.test_steps.is_some() {
            return Err(Error::Config("give test_span or test_steps, not both".into()));
        }
        for s in [&self.train_span, &self.test_span].into_iter().flatten() {
            parse_span(s)?;
        }
        Ok(())
    }

    /// Training and test row ranges for a series with the given step and length.
    pub fn split(&self, step: TimeDelta, len: usize) -> Result<(std::ops::Range<usize>, std::ops::Range<usize>)> {
        let rows = |span: &Option<String>, steps: Option<usize>| -> Result<Option<usize>> {
            if let Some(s) = span {
                let d = parse_span(s)?;
                let ms = step.num_milliseconds();
                if d.num_milliseconds() % ms != 0 {
                    return Err(Error::Config(format!("span {s} is not a multiple of the {step} step")));
                }
                return Ok(Some((d.num_milliseconds() / ms) as usize));
            }
            Ok(steps)
        };
        let train = rows(&self.train_span, self.train_steps)?;
        let test = rows(&self.test_span, self.test_steps)?;
        let (tr, te) = match (train, test) {
            (Some(a), Some(b)) => (a, b),
            (Some(a), None) => (a, len.saturating_sub(a)),
            (None, Some(b)) => (len.saturating_sub(b), b),
            (None, None) => (len, 0),
        };
        if tr == 0 || tr + te > len {
            return Err(Error::InsufficientData { needed: tr.max(1) + te, available: len });
        }
        Ok((0..tr, tr..tr + te))
    }
}
