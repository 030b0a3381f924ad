//! Adversarial training of the weak innovation autoencoder.
//!
//! Each iteration runs `critic_steps` updates of both Wasserstein critics
//! followed by one update of the encoder/decoder pair against
//!
//! ```text
//! E[Dγ(U)] - E[Dγ(V̂)] + λ (E[Dω(X_{t-n+2..t+T})] - E[Dω(X_{t-n+2..t}, X̂_{t+1..t+T})])
//! ```
//!
//! Critics are kept approximately 1-Lipschitz with a gradient penalty on
//! random interpolates between their two inputs.

use std::io::Write;
use std::rc::Rc;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::{sequence_index, Graph, Tensor, Var, ZERO_ROW};
use crate::checkpoint::WiaeCheckpoint;
use crate::error::{Error, Result};
use crate::net::{forward, NetConfig, ParamSet, Role, WiaeParams};
use crate::series::{normalize, NormStats, SeriesFrame};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    /// Weight of the reconstruction Wasserstein term.
    pub lambda: f64,
    /// Critic updates per autoencoder update.
    pub critic_steps: usize,
    pub gp_weight: f64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Learning-rate multiplier reached at the last step (linear decay).
    pub lr_final_factor: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Autoencoder updates per epoch; defaults to one pass over the origins.
    pub steps_per_epoch: Option<usize>,
    pub seed: u64,
    /// Hold out the last 10% of origins and keep the best checkpoint by
    /// validation loss in addition to the final one.
    pub validation: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lambda: 1.0,
            critic_steps: 5,
            gp_weight: 10.0,
            lr: 1e-4,
            beta1: 0.5,
            beta2: 0.9,
            eps: 1e-8,
            lr_final_factor: 1.0,
            batch_size: 64,
            epochs: 10,
            steps_per_epoch: None,
            seed: 0,
            validation: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let pos = [
            ("lr", self.lr),
            ("beta2", self.beta2),
            ("eps", self.eps),
            ("gp_weight", self.gp_weight),
            ("lr_final_factor", self.lr_final_factor),
        ];
        for (name, v) in pos {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.lambda.is_finite() && self.lambda >= 0.0) {
            return Err(Error::Config(format!("lambda must be non-negative, got {}", self.lambda)));
        }
        if !(0.0..1.0).contains(&self.beta1) || self.beta2 >= 1.0 {
            return Err(Error::Config("Adam betas must lie in [0, 1)".into()));
        }
        if self.critic_steps == 0 || self.batch_size == 0 || self.epochs == 0 || self.steps_per_epoch == Some(0) {
            return Err(Error::Config("critic_steps, batch_size, epochs and steps_per_epoch must be positive".into()));
        }
        Ok(())
    }
}

/// Loss components averaged over one epoch.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub epoch: usize,
    /// Estimate of `W(U, V̂)` from the innovation critic.
    pub innovation_w: f64,
    /// Estimate of `W(X, (X, X̂))` from the reconstruction critic.
    pub reconstruction_w: f64,
    /// Autoencoder objective `innovation_w + λ · reconstruction_w`.
    pub total: f64,
    pub innovation_critic_loss: f64,
    pub reconstruction_critic_loss: f64,
    pub validation_total: Option<f64>,
}

impl LossRecord {
    pub fn is_finite(&self) -> bool {
        [
            self.innovation_w,
            self.reconstruction_w,
            self.total,
            self.innovation_critic_loss,
            self.reconstruction_critic_loss,
        ]
        .iter()
        .all(|v| v.is_finite())
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainMeta {
    pub seed: u64,
    pub epochs: usize,
    pub train_config: Option<TrainConfig>,
    /// Index range of the series the model was fitted on.
    pub train_range: Option<[usize; 2]>,
    pub final_loss: Option<LossRecord>,
    /// Set when this checkpoint is the best-validation snapshot.
    pub best_epoch: Option<usize>,
}

/// IID `U[0, 1]` reference draws shaped `[batch * n, latent_dim]`.
pub fn draw_reference_uniform<R: Rng>(batch: usize, n: usize, latent_dim: usize, rng: &mut R) -> Tensor {
    let data = (0..batch * n * latent_dim).map(|_| rng.random::<f32>()).collect();
    Tensor::new(batch * n, latent_dim, data)
}

/// The Wasserstein terms of one batch.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossComponents {
    pub innovation: f64,
    pub reconstruction: f64,
    pub total: f64,
}

/// Loss terms given precomputed critic inputs.
///
/// `innovations` and `reference` are `[batch * n, latent_dim]`; `real` and
/// `mixed` are `[batch * (n - 1 + T), d]`.
pub fn loss_components(
    cfg: &NetConfig,
    params: &WiaeParams,
    innovations: &Tensor,
    reference: &Tensor,
    real: &Tensor,
    mixed: &Tensor,
    lambda: f64,
) -> Result<LossComponents> {
    let n = cfg.n();
    let len = cfg.reconstruction_len();
    if innovations.shape() != reference.shape() || innovations.cols() != cfg.latent_dim || innovations.rows() % n != 0 {
        return Err(Error::shape(format!("matching [batch * {n}, {}]", cfg.latent_dim), format!("{:?}", innovations.shape())));
    }
    if real.shape() != mixed.shape() || real.cols() != cfg.d || real.rows() % len != 0 {
        return Err(Error::shape(format!("matching [batch * {len}, {}]", cfg.d), format!("{:?}", real.shape())));
    }
    let mut g = Graph::new();
    let pg = params.innovation_critic.bind(&mut g, false);
    let pw = params.reconstruction_critic.bind(&mut g, false);
    let bv = innovations.rows() / n;
    let bx = real.rows() / len;
    let u = g.constant(reference.clone());
    let v = g.constant(innovations.clone());
    let xr = g.constant(real.clone());
    let xm = g.constant(mixed.clone());
    let w_inn = wasserstein(cfg, Role::InnovationCritic, &mut g, &pg, u, v, bv, n);
    let w_rec = wasserstein(cfg, Role::ReconstructionCritic, &mut g, &pw, xr, xm, bx, len);
    let innovation = g.value(w_inn).item() as f64;
    let reconstruction = g.value(w_rec).item() as f64;
    Ok(LossComponents { innovation, reconstruction, total: innovation + lambda * reconstruction })
}

/// `mean D(real) - mean D(fake)` as a graph node.
#[allow(clippy::too_many_arguments)]
fn wasserstein(cfg: &NetConfig, role: Role, g: &mut Graph, p: &[Var], real: Var, fake: Var, batch: usize, len: usize) -> Var {
    let dr = forward(cfg, role, g, p, real, batch, len);
    let df = forward(cfg, role, g, p, fake, batch, len);
    let mr = g.mean(dr);
    let mf = g.mean(df);
    g.sub(mr, mf)
}

/// Gradient penalty `mean_i (‖∇ₓ D(x̂ᵢ)‖₂ - 1)²` over interpolates
/// `x̂ᵢ = εᵢ realᵢ + (1 - εᵢ) fakeᵢ`, one `εᵢ ~ U[0, 1]` per sequence.
///
/// `real` and `fake` are stacked `[batch * seq_len, cols]`. The returned node
/// can be differentiated with respect to whatever parameters `critic` uses.
pub fn gradient_penalty<R: Rng>(
    g: &mut Graph,
    critic: impl Fn(&mut Graph, Var) -> Var,
    real: &Tensor,
    fake: &Tensor,
    seq_len: usize,
    rng: &mut R,
) -> Var {
    assert_eq!(real.shape(), fake.shape(), "gradient penalty batches differ in shape");
    let batch = real.rows() / seq_len;
    let cols = real.cols();
    let eps: Vec<f32> = (0..batch).map(|_| rng.random::<f32>()).collect();
    let mut data = Vec::with_capacity(real.data().len());
    for (i, (a, b)) in real.data().iter().zip(fake.data()).enumerate() {
        let e = eps[i / (seq_len * cols)];
        data.push(e * a + (1.0 - e) * b);
    }
    let x = g.param(Tensor::new(real.rows(), cols, data));
    let scores = critic(g, x);
    let total = g.sum(scores);
    let gx = g.grad(total, &[x])[0];
    let sq = g.mul(gx, gx);
    let per_seq = g.scatter_add(sq, Rc::new(sequence_index(batch, seq_len)), batch);
    let per_seq = g.sum_cols(per_seq);
    let stab = g.affine(per_seq, 1.0, 1e-12);
    let norm = g.sqrt(stab);
    let dev = g.affine(norm, 1.0, -1.0);
    let dev2 = g.mul(dev, dev);
    g.mean(dev2)
}

/// Value-only convenience wrapper around [`gradient_penalty`].
pub fn gradient_penalty_value<R: Rng>(
    critic: impl Fn(&mut Graph, Var) -> Var,
    real: &Tensor,
    fake: &Tensor,
    seq_len: usize,
    rng: &mut R,
) -> f64 {
    let mut g = Graph::new();
    let p = gradient_penalty(&mut g, critic, real, fake, seq_len, rng);
    g.value(p).item() as f64
}

struct Adam {
    m: Vec<Vec<f32>>,
    v: Vec<Vec<f32>>,
    t: i32,
}

impl Adam {
    fn new(set: &ParamSet) -> Adam {
        Adam {
            m: set.tensors.iter().map(|t| vec![0.0; t.data().len()]).collect(),
            v: set.tensors.iter().map(|t| vec![0.0; t.data().len()]).collect(),
            t: 0,
        }
    }

    fn step(&mut self, set: &mut ParamSet, grads: &[&Tensor], lr: f64, cfg: &TrainConfig) {
        self.t += 1;
        let (b1, b2) = (cfg.beta1 as f32, cfg.beta2 as f32);
        let c1 = 1.0 - b1.powi(self.t);
        let c2 = 1.0 - b2.powi(self.t);
        let step = lr as f32 * c2.sqrt() / c1;
        let eps = cfg.eps as f32;
        for (k, (p, g)) in set.tensors.iter_mut().zip(grads).enumerate() {
            let (m, v) = (&mut self.m[k], &mut self.v[k]);
            for (i, (w, &gi)) in p.data_mut().iter_mut().zip(g.data()).enumerate() {
                m[i] = b1 * m[i] + (1.0 - b1) * gi;
                v[i] = b2 * v[i] + (1.0 - b2) * gi * gi;
                *w -= step * m[i] / (v[i].sqrt() + eps);
            }
        }
    }
}

/// Normalized training data and the origins a batch can be drawn from.
struct Corpus {
    values: Vec<f32>,
    d: usize,
    /// Rows per chunk: `2m + T - 1`.
    chunk: usize,
    /// Offset of the origin inside a chunk: `2m - 2`.
    lead: usize,
}

impl Corpus {
    fn origins(&self, range: std::ops::Range<usize>) -> Vec<usize> {
        let n = self.values.len() / self.d;
        let lo = range.start.max(self.lead);
        let hi = range.end.min(n + self.lead + 1 - self.chunk);
        (lo..hi).collect()
    }

    fn chunks(&self, origins: &[usize]) -> Tensor {
        let mut data = Vec::with_capacity(origins.len() * self.chunk * self.d);
        for &t in origins {
            let s = t - self.lead;
            data.extend_from_slice(&self.values[s * self.d..(s + self.chunk) * self.d]);
        }
        Tensor::new(origins.len() * self.chunk, self.d, data)
    }
}

/// Graph nodes for one batch run through encoder and decoder.
struct Pass {
    innovations: Var,
    real: Var,
    mixed: Var,
}

/// Encode chunks `X_{t-2m+2..=t+T}` and assemble critic inputs:
/// `V̂_{t-m+1..=t}`, the real segment `X_{t-m+2..=t+T}`, and the mixed
/// segment `(X_{t-m+2..=t}, X̂_{t+1..=t+T})`.
fn autoencode(cfg: &NetConfig, g: &mut Graph, enc: &[Var], dec: &[Var], chunks: Var, batch: usize) -> Pass {
    let m = cfg.m;
    let lx = 2 * m + cfg.horizon - 1;
    let ls = cfg.reconstruction_len();
    let v = forward(cfg, Role::Encoder, g, enc, chunks, batch, lx);

    let mut inn = Vec::with_capacity(batch * m);
    let mut dec_in = Vec::with_capacity(batch * ls);
    let mut prefix = Vec::with_capacity(batch * ls);
    let mut tail = Vec::with_capacity(batch * ls);
    let mut real = Vec::with_capacity(batch * ls);
    for b in 0..batch {
        for j in 0..m {
            inn.push((b * lx + m - 1 + j) as u32);
        }
        for j in 0..ls {
            let row = (b * lx + m + j) as u32;
            dec_in.push(row);
            real.push(row);
            if j + 1 < m {
                prefix.push(row);
                tail.push(ZERO_ROW);
            } else {
                prefix.push(ZERO_ROW);
                tail.push((b * ls + j) as u32);
            }
        }
    }
    let innovations = g.gather(v, Rc::new(inn));
    let latent = g.gather(v, Rc::new(dec_in));
    let xhat = forward(cfg, Role::Decoder, g, dec, latent, batch, ls);
    let head = g.gather(chunks, Rc::new(prefix));
    let tail = g.gather(xhat, Rc::new(tail));
    let mixed = g.add(head, tail);
    let real = g.gather(chunks, Rc::new(real));
    Pass { innovations, real, mixed }
}

/// Loss terms for one batch of raw chunks `[batch * (2m + T - 1), d]`.
pub fn wiae_batch_loss(cfg: &NetConfig, params: &WiaeParams, chunks: &Tensor, reference: &Tensor, lambda: f64) -> Result<LossComponents> {
    let lx = 2 * cfg.m + cfg.horizon - 1;
    if chunks.cols() != cfg.d || chunks.rows() % lx != 0 {
        return Err(Error::shape(format!("[batch * {lx}, {}]", cfg.d), format!("{:?}", chunks.shape())));
    }
    let batch = chunks.rows() / lx;
    let mut g = Graph::new();
    let enc = params.encoder.bind(&mut g, false);
    let dec = params.decoder.bind(&mut g, false);
    let x = g.constant(chunks.clone());
    let pass = autoencode(cfg, &mut g, &enc, &dec, x, batch);
    let inn = g.value(pass.innovations).clone();
    let real = g.value(pass.real).clone();
    let mixed = g.value(pass.mixed).clone();
    loss_components(cfg, params, &inn, reference, &real, &mixed, lambda)
}

pub struct TrainOutcome {
    pub checkpoint: WiaeCheckpoint,
    /// Best-validation snapshot when `validation` is enabled.
    pub best: Option<WiaeCheckpoint>,
    pub history: Vec<LossRecord>,
}

pub struct Trainer {
    net: NetConfig,
    cfg: TrainConfig,
    params: WiaeParams,
    opt_enc: Adam,
    opt_dec: Adam,
    opt_inn: Adam,
    opt_rec: Adam,
    rng: ChaCha8Rng,
}

#[derive(Default)]
struct Accum {
    inn_w: f64,
    rec_w: f64,
    total: f64,
    inn_loss: f64,
    rec_loss: f64,
    critic_n: usize,
    ae_n: usize,
}

impl Trainer {
    pub fn new(net: NetConfig, cfg: TrainConfig) -> Result<Trainer> {
        net.validate()?;
        cfg.validate()?;
        let mut init_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let params = WiaeParams::init(&net, &mut init_rng);
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(1);
        Ok(Trainer {
            opt_enc: Adam::new(&params.encoder),
            opt_dec: Adam::new(&params.decoder),
            opt_inn: Adam::new(&params.innovation_critic),
            opt_rec: Adam::new(&params.reconstruction_critic),
            net,
            cfg,
            params,
            rng,
        })
    }

    pub fn params(&self) -> &WiaeParams {
        &self.params
    }

    fn sample(&mut self, pool: &[usize]) -> Vec<usize> {
        (0..self.cfg.batch_size).map(|_| pool[self.rng.random_range(0..pool.len())]).collect()
    }

    fn critic_step(&mut self, corpus: &Corpus, pool: &[usize], lr: f64, acc: &mut Accum) {
        let cfg = self.net.clone();
        let batch = self.cfg.batch_size;
        let origins = self.sample(pool);
        let chunks = corpus.chunks(&origins);
        let reference = draw_reference_uniform(batch, cfg.n(), cfg.latent_dim, &mut self.rng);

        let (inn, real, mixed) = {
            let mut g = Graph::new();
            let enc = self.params.encoder.bind(&mut g, false);
            let dec = self.params.decoder.bind(&mut g, false);
            let x = g.constant(chunks);
            let pass = autoencode(&cfg, &mut g, &enc, &dec, x, batch);
            (g.value(pass.innovations).clone(), g.value(pass.real).clone(), g.value(pass.mixed).clone())
        };

        let mut g = Graph::new();
        let pg = self.params.innovation_critic.bind(&mut g, true);
        let pw = self.params.reconstruction_critic.bind(&mut g, true);
        let n = cfg.n();
        let ls = cfg.reconstruction_len();
        let u = g.constant(reference.clone());
        let v = g.constant(inn.clone());
        let w_inn = wasserstein(&cfg, Role::InnovationCritic, &mut g, &pg, u, v, batch, n);
        let xr = g.constant(real.clone());
        let xm = g.constant(mixed.clone());
        let w_rec = wasserstein(&cfg, Role::ReconstructionCritic, &mut g, &pw, xr, xm, batch, ls);

        let gp_inn = {
            let pg = pg.clone();
            let c = cfg.clone();
            gradient_penalty(&mut g, move |g, x| forward(&c, Role::InnovationCritic, g, &pg, x, batch, n), &reference, &inn, n, &mut self.rng)
        };
        let gp_rec = {
            let pw = pw.clone();
            let c = cfg.clone();
            gradient_penalty(&mut g, move |g, x| forward(&c, Role::ReconstructionCritic, g, &pw, x, batch, ls), &real, &mixed, ls, &mut self.rng)
        };
        let gw = self.cfg.gp_weight as f32;
        let gp_inn_w = g.scale(gp_inn, gw);
        let loss_inn = g.sub(gp_inn_w, w_inn);
        let gp_rec_w = g.scale(gp_rec, gw);
        let loss_rec = g.sub(gp_rec_w, w_rec);
        let loss = g.add(loss_inn, loss_rec);

        let wrt: Vec<Var> = pg.iter().chain(pw.iter()).copied().collect();
        let grads = g.grad(loss, &wrt);
        let (gi, gr) = grads.split_at(pg.len());
        let gi: Vec<&Tensor> = gi.iter().map(|&v| g.value(v)).collect();
        let gr: Vec<&Tensor> = gr.iter().map(|&v| g.value(v)).collect();
        self.opt_inn.step(&mut self.params.innovation_critic, &gi, lr, &self.cfg);
        self.opt_rec.step(&mut self.params.reconstruction_critic, &gr, lr, &self.cfg);

        acc.inn_loss += g.value(loss_inn).item() as f64;
        acc.rec_loss += g.value(loss_rec).item() as f64;
        acc.critic_n += 1;
    }

    fn autoencoder_step(&mut self, corpus: &Corpus, pool: &[usize], lr: f64, acc: &mut Accum) {
        let cfg = self.net.clone();
        let batch = self.cfg.batch_size;
        let origins = self.sample(pool);
        let chunks = corpus.chunks(&origins);
        let reference = draw_reference_uniform(batch, cfg.n(), cfg.latent_dim, &mut self.rng);

        let mut g = Graph::new();
        let enc = self.params.encoder.bind(&mut g, true);
        let dec = self.params.decoder.bind(&mut g, true);
        let pg = self.params.innovation_critic.bind(&mut g, false);
        let pw = self.params.reconstruction_critic.bind(&mut g, false);
        let x = g.constant(chunks);
        let pass = autoencode(&cfg, &mut g, &enc, &dec, x, batch);
        let u = g.constant(reference);
        let w_inn = wasserstein(&cfg, Role::InnovationCritic, &mut g, &pg, u, pass.innovations, batch, cfg.n());
        let w_rec = wasserstein(&cfg, Role::ReconstructionCritic, &mut g, &pw, pass.real, pass.mixed, batch, cfg.reconstruction_len());
        let scaled = g.scale(w_rec, self.cfg.lambda as f32);
        let total = g.add(w_inn, scaled);

        let wrt: Vec<Var> = enc.iter().chain(dec.iter()).copied().collect();
        let grads = g.grad(total, &wrt);
        let (ge, gd) = grads.split_at(enc.len());
        let ge: Vec<&Tensor> = ge.iter().map(|&v| g.value(v)).collect();
        let gd: Vec<&Tensor> = gd.iter().map(|&v| g.value(v)).collect();
        self.opt_enc.step(&mut self.params.encoder, &ge, lr, &self.cfg);
        self.opt_dec.step(&mut self.params.decoder, &gd, lr, &self.cfg);

        acc.inn_w += g.value(w_inn).item() as f64;
        acc.rec_w += g.value(w_rec).item() as f64;
        acc.total += g.value(total).item() as f64;
        acc.ae_n += 1;
    }

    fn validation_loss(&self, corpus: &Corpus, pool: &[usize]) -> Result<f64> {
        // fixed draws so epochs are comparable
        let mut rng = ChaCha8Rng::seed_from_u64(self.cfg.seed);
        rng.set_stream(2);
        let batch = self.cfg.batch_size.min(pool.len());
        let mut sum = 0.0;
        let rounds = 4;
        for r in 0..rounds {
            let origins: Vec<usize> = (0..batch).map(|i| pool[(i * pool.len() / batch + r) % pool.len()]).collect();
            let chunks = corpus.chunks(&origins);
            let reference = draw_reference_uniform(batch, self.net.n(), self.net.latent_dim, &mut rng);
            sum += wiae_batch_loss(&self.net, &self.params, &chunks, &reference, self.cfg.lambda)?.total;
        }
        Ok(sum / rounds as f64)
    }
}

/// Minimum series length accepted by [`train`].
pub fn min_train_len(net: &NetConfig, cfg: &TrainConfig) -> usize {
    (net.m + net.horizon + cfg.batch_size).max(2 * net.m + net.horizon - 1)
}

/// Fit a WIAE on `series` (all rows are used for training).
pub fn train(series: &SeriesFrame, net: &NetConfig, cfg: &TrainConfig) -> Result<TrainOutcome> {
    train_with_log(series, net, cfg, None)
}

/// As [`train`], additionally writing one JSON record per epoch to `log`.
pub fn train_with_log(series: &SeriesFrame, net: &NetConfig, cfg: &TrainConfig, mut log: Option<&mut dyn Write>) -> Result<TrainOutcome> {
    let mut net = net.clone();
    if net.d != series.dim() {
        return Err(Error::Config(format!("network expects {} channels, series has {}", net.d, series.dim())));
    }
    if net.latent_dim == 0 {
        net.latent_dim = net.d;
    }
    let mut trainer = Trainer::new(net.clone(), cfg.clone())?;
    let n = series.len();
    let need = min_train_len(&net, cfg);
    if n < need {
        return Err(Error::InsufficientData { needed: need, available: n });
    }
    let norm = NormStats::fit(series, 0..n)?;
    let z = normalize(series, &norm)?;
    let corpus = Corpus {
        values: z.values().iter().map(|&v| v as f32).collect(),
        d: net.d,
        chunk: 2 * net.m + net.horizon - 1,
        lead: 2 * net.m - 2,
    };
    let all = corpus.origins(0..n);
    let (pool, holdout) = if cfg.validation {
        let cut = n - n / 10;
        (corpus.origins(0..cut), corpus.origins(cut..n))
    } else {
        (all, Vec::new())
    };
    if pool.is_empty() || (cfg.validation && holdout.is_empty()) {
        return Err(Error::InsufficientData { needed: need, available: n });
    }

    let steps = cfg.steps_per_epoch.unwrap_or_else(|| pool.len().div_ceil(cfg.batch_size));
    let total_steps = (steps * cfg.epochs) as f64;
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(f64, usize, WiaeParams)> = None;
    let clock = Instant::now();
    let mut step_no = 0usize;
    for epoch in 0..cfg.epochs {
        let mut acc = Accum::default();
        for _ in 0..steps {
            let frac = step_no as f64 / total_steps;
            let lr = cfg.lr * (1.0 - frac * (1.0 - cfg.lr_final_factor));
            for _ in 0..cfg.critic_steps {
                trainer.critic_step(&corpus, &pool, lr, &mut acc);
            }
            trainer.autoencoder_step(&corpus, &pool, lr, &mut acc);
            step_no += 1;
        }
        let mut rec = LossRecord {
            epoch,
            innovation_w: acc.inn_w / acc.ae_n as f64,
            reconstruction_w: acc.rec_w / acc.ae_n as f64,
            total: acc.total / acc.ae_n as f64,
            innovation_critic_loss: acc.inn_loss / acc.critic_n as f64,
            reconstruction_critic_loss: acc.rec_loss / acc.critic_n as f64,
            validation_total: None,
        };
        if !rec.is_finite() || !trainer.params.is_finite() {
            return Err(Error::Diverged { epoch, detail: format!("{rec:?}") });
        }
        if cfg.validation {
            let v = trainer.validation_loss(&corpus, &holdout)?;
            rec.validation_total = Some(v);
            if best.as_ref().is_none_or(|(b, _, _)| v < *b) {
                best = Some((v, epoch, trainer.params.clone()));
            }
        }
        if let Some(w) = log.as_deref_mut() {
            let mut line = serde_json::to_value(&rec)?;
            line["wall_seconds"] = serde_json::json!(clock.elapsed().as_secs_f64());
            writeln!(w, "{line}").map_err(|e| Error::io("<training log>", e))?;
        }
        log::info!(
            "epoch {epoch}: W_inn {:.4} W_rec {:.4} total {:.4}",
            rec.innovation_w,
            rec.reconstruction_w,
            rec.total
        );
        history.push(rec);
    }

    let meta = TrainMeta {
        seed: cfg.seed,
        epochs: cfg.epochs,
        train_config: Some(cfg.clone()),
        train_range: Some([0, n]),
        final_loss: history.last().cloned(),
        best_epoch: None,
    };
    let best = best.map(|(_, epoch, params)| WiaeCheckpoint {
        config: net.clone(),
        params,
        norm: norm.clone(),
        meta: TrainMeta { best_epoch: Some(epoch), ..meta.clone() },
    });
    Ok(TrainOutcome { checkpoint: WiaeCheckpoint { config: net, params: trainer.params, norm, meta }, best, history })
}
