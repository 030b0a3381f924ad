//! The four networks of the weak innovation autoencoder: encoder, decoder,
//! innovation critic and reconstruction critic.
//!
//! All four share one backbone: a stack of kernel-2 dilated causal
//! convolutions whose dilations sum to `m - 1`, so every output position sees
//! exactly the `m` most recent inputs. The encoder and decoder add a 1x1
//! output projection plus a length-`m` linear causal filter in parallel with
//! the stack. The critics average the stack's features over time and apply a
//! linear head.

use std::rc::Rc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::{causal_shift_index, sequence_index, Graph, Tensor, Var};
use crate::error::{Error, Result};

const CRITIC_SLOPE: f32 = 0.2;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetConfig {
    /// Receptive field of every network, in steps.
    pub m: usize,
    /// Observed channels.
    pub d: usize,
    /// Innovation dimension.
    pub latent_dim: usize,
    /// Forecast horizon `T` the reconstruction critic is trained for.
    pub horizon: usize,
    pub hidden: usize,
    /// Critic width when it should differ from `hidden`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub critic_hidden: Option<usize>,
    /// Dilations of the convolution stack; `1 + sum` must equal `m`.
    pub dilations: Vec<usize>,
}

impl NetConfig {
    /// Defaults: `latent_dim = d`, hidden width 32, doubling dilations.
    pub fn new(m: usize, d: usize, horizon: usize) -> NetConfig {
        NetConfig { m, d, latent_dim: d, horizon, hidden: 32, critic_hidden: None, dilations: default_dilations(m) }
    }

    /// Critic segment length; always equal to `m`.
    pub fn n(&self) -> usize {
        self.m
    }

    /// Convolution layers plus the output layer.
    pub fn depth(&self) -> usize {
        self.dilations.len() + 1
    }

    pub fn receptive_field(&self) -> usize {
        1 + self.dilations.iter().sum::<usize>()
    }

    /// Length of the reconstruction critic's input segment, `n - 1 + T`.
    pub fn reconstruction_len(&self) -> usize {
        self.n() - 1 + self.horizon
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.m < 2 {
            return bad(format!("m must be at least 2, got {}", self.m));
        }
        if self.horizon < 1 {
            return bad("horizon must be at least 1".into());
        }
        if self.m < self.horizon + 1 {
            return bad(format!("m = {} must be at least horizon + 1 = {}", self.m, self.horizon + 1));
        }
        if self.d == 0 || self.latent_dim == 0 || self.hidden == 0 || self.critic_hidden == Some(0) {
            return bad("d, latent_dim and hidden must be positive".into());
        }
        if self.dilations.is_empty() || self.dilations.contains(&0) {
            return bad("dilations must be a non-empty list of positive integers".into());
        }
        if self.receptive_field() != self.m {
            return bad(format!(
                "dilations {:?} give a receptive field of {}, expected m = {}",
                self.dilations,
                self.receptive_field(),
                self.m
            ));
        }
        Ok(())
    }
}

/// Doubling dilations `1, 2, 4, ...` with a final partial step so that the
/// receptive field is exactly `m`.
pub fn default_dilations(m: usize) -> Vec<usize> {
    let mut out = Vec::new();
    let mut field = 1;
    let mut next = 1;
    while field + next <= m {
        out.push(next);
        field += next;
        next *= 2;
    }
    if field < m {
        out.push(m - field);
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Role {
    Encoder,
    Decoder,
    InnovationCritic,
    ReconstructionCritic,
}

impl Role {
    pub fn prefix(self) -> &'static str {
        match self {
            Role::Encoder => "encoder",
            Role::Decoder => "decoder",
            Role::InnovationCritic => "innovation_critic",
            Role::ReconstructionCritic => "reconstruction_critic",
        }
    }

    fn is_critic(self) -> bool {
        matches!(self, Role::InnovationCritic | Role::ReconstructionCritic)
    }
}

#[derive(Clone, Debug)]
struct Layout {
    role: Role,
    inputs: usize,
    outputs: usize,
    hidden: usize,
    dilations: Vec<usize>,
    m: usize,
}

impl Layout {
    fn new(cfg: &NetConfig, role: Role) -> Layout {
        let (inputs, outputs) = match role {
            Role::Encoder => (cfg.d, cfg.latent_dim),
            Role::Decoder => (cfg.latent_dim, cfg.d),
            Role::InnovationCritic => (cfg.latent_dim, 1),
            Role::ReconstructionCritic => (cfg.d, 1),
        };
        let hidden = if role.is_critic() { cfg.critic_hidden.unwrap_or(cfg.hidden) } else { cfg.hidden };
        Layout { role, inputs, outputs, hidden, dilations: cfg.dilations.clone(), m: cfg.m }
    }

    /// `(name, rows, cols, fan_in)` for every tensor, in storage order.
    fn shapes(&self) -> Vec<(String, usize, usize, usize)> {
        let p = self.role.prefix();
        let mut out = Vec::new();
        let mut cin = self.inputs;
        for i in 0..self.dilations.len() {
            for tap in 0..2 {
                out.push((format!("{p}.conv{i}.w{tap}"), cin, self.hidden, 2 * cin));
            }
            out.push((format!("{p}.conv{i}.b"), 1, self.hidden, 2 * cin));
            cin = self.hidden;
        }
        out.push((format!("{p}.out.w"), self.hidden, self.outputs, self.hidden));
        out.push((format!("{p}.out.b"), 1, self.outputs, self.hidden));
        if !self.role.is_critic() {
            out.push((format!("{p}.skip.w"), self.m * self.inputs, self.outputs, self.m * self.inputs));
        }
        out
    }
}

/// Named weight tensors of one network.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamSet {
    pub names: Vec<String>,
    pub tensors: Vec<Tensor>,
}

impl ParamSet {
    pub fn zeros(cfg: &NetConfig, role: Role) -> ParamSet {
        let shapes = Layout::new(cfg, role).shapes();
        ParamSet {
            names: shapes.iter().map(|s| s.0.clone()).collect(),
            tensors: shapes.iter().map(|s| Tensor::zeros(s.1, s.2)).collect(),
        }
    }

    /// Uniform `(-1/sqrt(fan_in), 1/sqrt(fan_in))` initialization.
    pub fn init<R: Rng>(cfg: &NetConfig, role: Role, rng: &mut R) -> ParamSet {
        let shapes = Layout::new(cfg, role).shapes();
        let tensors = shapes
            .iter()
            .map(|(_, r, c, fan)| {
                let a = 1.0 / (*fan as f32).sqrt();
                Tensor::new(*r, *c, (0..r * c).map(|_| rng.random_range(-a..a)).collect())
            })
            .collect();
        ParamSet { names: shapes.into_iter().map(|s| s.0).collect(), tensors }
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn count(&self) -> usize {
        self.tensors.iter().map(|t| t.data().len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors.iter().all(|t| t.data().iter().all(|v| v.is_finite()))
    }

    /// Load into a graph, either as trainable leaves or as constants.
    pub fn bind(&self, g: &mut Graph, trainable: bool) -> Vec<Var> {
        self.tensors
            .iter()
            .map(|t| if trainable { g.param(t.clone()) } else { g.constant(t.clone()) })
            .collect()
    }

    pub(crate) fn check_shapes(&self, cfg: &NetConfig, role: Role) -> Result<()> {
        let want = Layout::new(cfg, role).shapes();
        if want.len() != self.tensors.len() {
            return Err(Error::shape(format!("{} tensors for {}", want.len(), role.prefix()), self.tensors.len()));
        }
        for ((name, r, c, _), (have_name, t)) in want.iter().zip(self.names.iter().zip(&self.tensors)) {
            if name != have_name || (*r, *c) != t.shape() {
                return Err(Error::shape(format!("{name} [{r}, {c}]"), format!("{have_name} {:?}", t.shape())));
            }
        }
        Ok(())
    }
}

/// The four parameter sets (encoder, decoder, innovation critic,
/// reconstruction critic).
#[derive(Clone, Debug, PartialEq)]
pub struct WiaeParams {
    pub encoder: ParamSet,
    pub decoder: ParamSet,
    pub innovation_critic: ParamSet,
    pub reconstruction_critic: ParamSet,
}

impl WiaeParams {
    pub fn init<R: Rng>(cfg: &NetConfig, rng: &mut R) -> WiaeParams {
        WiaeParams {
            encoder: ParamSet::init(cfg, Role::Encoder, rng),
            decoder: ParamSet::init(cfg, Role::Decoder, rng),
            innovation_critic: ParamSet::init(cfg, Role::InnovationCritic, rng),
            reconstruction_critic: ParamSet::init(cfg, Role::ReconstructionCritic, rng),
        }
    }

    pub fn zeros(cfg: &NetConfig) -> WiaeParams {
        WiaeParams {
            encoder: ParamSet::zeros(cfg, Role::Encoder),
            decoder: ParamSet::zeros(cfg, Role::Decoder),
            innovation_critic: ParamSet::zeros(cfg, Role::InnovationCritic),
            reconstruction_critic: ParamSet::zeros(cfg, Role::ReconstructionCritic),
        }
    }

    pub fn sets(&self) -> [(Role, &ParamSet); 4] {
        [
            (Role::Encoder, &self.encoder),
            (Role::Decoder, &self.decoder),
            (Role::InnovationCritic, &self.innovation_critic),
            (Role::ReconstructionCritic, &self.reconstruction_critic),
        ]
    }

    pub fn check_shapes(&self, cfg: &NetConfig) -> Result<()> {
        for (role, set) in self.sets() {
            set.check_shapes(cfg, role)?;
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.sets().iter().all(|(_, s)| s.is_finite())
    }
}

/// Apply one network to a stacked batch of sequences `x: [batch * len, inputs]`.
///
/// Encoder and decoder return per-position outputs `[batch * len, outputs]`;
/// positions with fewer than `m` predecessors see zero padding. Critics
/// return one score per sequence, `[batch, 1]`.
pub fn forward(cfg: &NetConfig, role: Role, g: &mut Graph, params: &[Var], x: Var, batch: usize, len: usize) -> Var {
    let layout = Layout::new(cfg, role);
    let mut p = params.iter().copied();
    let mut next = || p.next().expect("parameter list too short");

    let input = if role == Role::Decoder { g.logit(x) } else { x };
    let mut h = input;
    for &dil in &layout.dilations {
        let w0 = next();
        let w1 = next();
        let b = next();
        let shifted = g.gather(h, Rc::new(causal_shift_index(batch, len, dil)));
        let a = g.matmul(h, w0);
        let c = g.matmul(shifted, w1);
        let s = g.add(a, c);
        let s = g.add_row(s, b);
        h = if role.is_critic() { g.leaky_relu(s, CRITIC_SLOPE) } else { g.tanh(s) };
    }
    let ow = next();
    let ob = next();
    if role.is_critic() {
        // average only positions whose receptive field lies inside the segment
        let full = len + 1 - layout.m.min(len);
        let idx: Vec<u32> = (0..batch).flat_map(|b| (len - full..len).map(move |j| (b * len + j) as u32)).collect();
        let tail = g.gather(h, Rc::new(idx));
        let pooled = g.scatter_add(tail, Rc::new(sequence_index(batch, full)), batch);
        let pooled = g.scale(pooled, 1.0 / full as f32);
        let score = g.matmul(pooled, ow);
        return g.add_row(score, ob);
    }
    let proj = g.matmul(h, ow);
    let mut out = g.add_row(proj, ob);
    let skip = next();
    let cin = layout.inputs;
    for lag in 0..layout.m {
        let rows: Vec<u32> = (lag * cin..(lag + 1) * cin).map(|r| r as u32).collect();
        let w = g.gather(skip, Rc::new(rows));
        let xs = if lag == 0 { input } else { g.gather(input, Rc::new(causal_shift_index(batch, len, lag))) };
        let term = g.matmul(xs, w);
        out = g.add(out, term);
    }
    if role == Role::Encoder {
        g.sigmoid(out)
    } else {
        out
    }
}

fn check_len(what: &str, have: usize, rows: usize, cols: usize) -> Result<()> {
    if have != rows * cols {
        return Err(Error::shape(format!("{what} of [{rows}, {cols}]"), format!("{have} values")));
    }
    Ok(())
}

fn to_tensor(values: &[f64], rows: usize, cols: usize) -> Tensor {
    Tensor::new(rows, cols, values.iter().map(|&v| v as f32).collect())
}

/// `V_t = G(X_{t-m+1..=t})` for a single `[m, d]` window, row-major.
pub fn encode(cfg: &NetConfig, params: &ParamSet, window: &[f64]) -> Result<Vec<f64>> {
    check_len("window", window.len(), cfg.m, cfg.d)?;
    if let Some(i) = window.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!("window position {}", i / cfg.d)));
    }
    let mut g = Graph::new();
    let p = params.bind(&mut g, false);
    let x = g.constant(to_tensor(window, cfg.m, cfg.d));
    let v = forward(cfg, Role::Encoder, &mut g, &p, x, 1, cfg.m);
    Ok(g.value(v).row(cfg.m - 1).iter().map(|&x| x as f64).collect())
}

/// `X_t = H(V_{t-m+1..=t})` for a single `[m, latent_dim]` window.
pub fn decode(cfg: &NetConfig, params: &ParamSet, latent: &[f64]) -> Result<Vec<f64>> {
    check_len("latent window", latent.len(), cfg.m, cfg.latent_dim)?;
    if let Some(i) = latent.iter().position(|v| !(0.0..=1.0).contains(v)) {
        return Err(Error::InvalidArgument(format!(
            "latent value {} at position {} lies outside [0, 1]",
            latent[i],
            i / cfg.latent_dim
        )));
    }
    let mut g = Graph::new();
    let p = params.bind(&mut g, false);
    let v = g.constant(to_tensor(latent, cfg.m, cfg.latent_dim));
    let x = forward(cfg, Role::Decoder, &mut g, &p, v, 1, cfg.m);
    Ok(g.value(x).row(cfg.m - 1).iter().map(|&x| x as f64).collect())
}

/// Innovation critic score of an `[n, latent_dim]` segment.
pub fn criticize_innovation(cfg: &NetConfig, params: &ParamSet, segment: &[f64]) -> Result<f64> {
    check_len("innovation segment", segment.len(), cfg.n(), cfg.latent_dim)?;
    critic_score(cfg, Role::InnovationCritic, params, segment, cfg.n(), cfg.latent_dim)
}

/// Reconstruction critic score of an `[n - 1 + T, d]` segment.
pub fn criticize_reconstruction(cfg: &NetConfig, params: &ParamSet, segment: &[f64]) -> Result<f64> {
    let len = cfg.reconstruction_len();
    check_len("reconstruction segment", segment.len(), len, cfg.d)?;
    critic_score(cfg, Role::ReconstructionCritic, params, segment, len, cfg.d)
}

fn critic_score(cfg: &NetConfig, role: Role, params: &ParamSet, seg: &[f64], len: usize, cols: usize) -> Result<f64> {
    let mut g = Graph::new();
    let p = params.bind(&mut g, false);
    let x = g.constant(to_tensor(seg, len, cols));
    let s = forward(cfg, role, &mut g, &p, x, 1, len);
    Ok(g.value(s).item() as f64)
}

/// Encoder outputs for every position of a normalized `[len, d]` sequence.
/// Row `i` of the result is `V_{i + m - 1}`.
pub fn encode_sequence(cfg: &NetConfig, params: &ParamSet, values: &[f32]) -> Result<Tensor> {
    if values.len() % cfg.d != 0 {
        return Err(Error::shape(format!("multiple of {} values", cfg.d), values.len()));
    }
    let len = values.len() / cfg.d;
    if len < cfg.m {
        return Err(Error::InsufficientData { needed: cfg.m, available: len });
    }
    let mut g = Graph::new();
    let p = params.bind(&mut g, false);
    let x = g.constant(Tensor::new(len, cfg.d, values.to_vec()));
    let v = forward(cfg, Role::Encoder, &mut g, &p, x, 1, len);
    let idx: Vec<u32> = (cfg.m - 1..len).map(|i| i as u32).collect();
    let out = g.gather(v, Rc::new(idx));
    Ok(g.value(out).clone())
}

/// Decoder outputs for a batch of `[m, latent_dim]` windows stacked as
/// `[batch * m, latent_dim]`; returns `[batch, d]`.
pub fn decode_windows(cfg: &NetConfig, params: &ParamSet, windows: Tensor) -> Result<Tensor> {
    if windows.cols() != cfg.latent_dim || windows.rows() % cfg.m != 0 {
        return Err(Error::shape(format!("[batch * {}, {}]", cfg.m, cfg.latent_dim), format!("{:?}", windows.shape())));
    }
    let batch = windows.rows() / cfg.m;
    let mut g = Graph::new();
    let p = params.bind(&mut g, false);
    let v = g.constant(windows);
    let x = forward(cfg, Role::Decoder, &mut g, &p, v, batch, cfg.m);
    let idx: Vec<u32> = (0..batch).map(|b| (b * cfg.m + cfg.m - 1) as u32).collect();
    let out = g.gather(x, Rc::new(idx));
    Ok(g.value(out).clone())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn cfg(m: usize, d: usize) -> NetConfig {
        let mut c = NetConfig::new(m, d, 1);
        c.hidden = 6;
        c
    }

    #[test]
    fn dilation_schedule_matches_receptive_field() {
        assert_eq!(default_dilations(16), vec![1, 2, 4, 8]);
        assert_eq!(default_dilations(12), vec![1, 2, 4, 4]);
        assert_eq!(default_dilations(2), vec![1]);
        for m in 2..70 {
            let c = NetConfig::new(m, 1, 1);
            assert_eq!(c.receptive_field(), m);
            assert_eq!(c.depth(), (m as f64).log2().ceil() as usize + 1, "m = {m}");
        }
    }

    #[test]
    fn config_rules() {
        let mut c = NetConfig::new(4, 1, 4);
        assert!(c.validate().is_err());
        c.horizon = 3;
        assert!(c.validate().is_ok());
        c.dilations = vec![1, 1];
        assert!(c.validate().is_err());
    }

    #[test]
    fn zero_weights() {
        let c = cfg(8, 3);
        let p = WiaeParams::zeros(&c);
        let w: Vec<f64> = (0..24).map(|i| i as f64 * 0.1).collect();
        assert_eq!(encode(&c, &p.encoder, &w).unwrap(), vec![0.5; 3]);
        let lat = vec![0.3; 24];
        assert_eq!(decode(&c, &p.decoder, &lat).unwrap(), vec![0.0; 3]);
        assert_eq!(criticize_innovation(&c, &p.innovation_critic, &lat).unwrap(), 0.0);
        let seg = vec![1.5; c.reconstruction_len() * 3];
        assert_eq!(criticize_reconstruction(&c, &p.reconstruction_critic, &seg).unwrap(), 0.0);
    }

    #[test]
    fn encoder_range_and_shape() {
        let c = cfg(8, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let p = WiaeParams::init(&c, &mut rng);
        let w: Vec<f64> = (0..24).map(|_| rng.random_range(-3.0..3.0)).collect();
        let v = encode(&c, &p.encoder, &w).unwrap();
        assert_eq!(v.len(), 3);
        assert!(v.iter().all(|&x| x > 0.0 && x < 1.0));
    }

    #[test]
    fn shape_and_value_errors() {
        let c = cfg(8, 2);
        let p = WiaeParams::zeros(&c);
        assert!(matches!(encode(&c, &p.encoder, &[0.0; 10]), Err(Error::Shape { .. })));
        let mut w = vec![0.0; 16];
        w[3] = f64::INFINITY;
        assert!(matches!(encode(&c, &p.encoder, &w), Err(Error::NonFinite(_))));
        let mut lat = vec![0.5; 16];
        lat[0] = 1.2;
        assert!(matches!(decode(&c, &p.decoder, &lat), Err(Error::InvalidArgument(_))));
        assert!(criticize_innovation(&c, &p.innovation_critic, &[0.5; 3]).is_err());
        assert!(criticize_reconstruction(&c, &p.reconstruction_critic, &[0.5; 3]).is_err());
    }

    #[test]
    fn decoder_sensitive_to_newest_latent() {
        let c = cfg(6, 1);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let p = WiaeParams::init(&c, &mut rng);
        let lat: Vec<f64> = (0..6).map(|i| 0.1 + 0.13 * i as f64).collect();
        let a = decode(&c, &p.decoder, &lat).unwrap();
        assert_eq!(a, decode(&c, &p.decoder, &lat).unwrap());
        let mut moved = lat.clone();
        moved[5] = 0.9;
        assert_ne!(a, decode(&c, &p.decoder, &moved).unwrap());
    }

    #[test]
    fn critics_are_deterministic_and_finite() {
        let c = cfg(5, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let p = WiaeParams::init(&c, &mut rng);
        let seg: Vec<f64> = (0..10).map(|_| rng.random::<f64>()).collect();
        let a = criticize_innovation(&c, &p.innovation_critic, &seg).unwrap();
        assert_eq!(a, criticize_innovation(&c, &p.innovation_critic, &seg).unwrap());
        assert!(a.is_finite());
        let seg: Vec<f64> = (0..c.reconstruction_len() * 2).map(|_| rng.random_range(-4.0..4.0)).collect();
        let b = criticize_reconstruction(&c, &p.reconstruction_critic, &seg).unwrap();
        assert_eq!(b, criticize_reconstruction(&c, &p.reconstruction_critic, &seg).unwrap());
        assert!(b.is_finite());
    }

    #[test]
    fn sequence_encoding_matches_windowed_encoding() {
        let c = cfg(7, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let p = WiaeParams::init(&c, &mut rng);
        let xs: Vec<f64> = (0..40).map(|_| rng.random_range(-2.0..2.0)).collect();
        let xs32: Vec<f32> = xs.iter().map(|&v| v as f32).collect();
        let seq = encode_sequence(&c, &p.encoder, &xs32).unwrap();
        assert_eq!(seq.rows(), 20 - 7 + 1);
        for t in 6..20 {
            let w: Vec<f64> = xs32[(t + 1 - 7) * 2..(t + 1) * 2].iter().map(|&v| v as f64).collect();
            let v = encode(&c, &p.encoder, &w).unwrap();
            for k in 0..2 {
                assert!((v[k] - seq.get(t + 1 - 7, k) as f64).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn receptive_field_audit() {
        let c = cfg(9, 1);
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let p = WiaeParams::init(&c, &mut rng);
        let base: Vec<f32> = (0..30).map(|_| rng.random_range(-1.0..1.0)).collect();
        let t = 25;
        let at = |xs: &[f32]| encode_sequence(&c, &p.encoder, xs).unwrap().get(t - 8, 0);
        let v0 = at(&base);
        for lag in 0..=t {
            let mut x = base.clone();
            x[t - lag] += 0.75;
            let changed = at(&x) != v0;
            assert_eq!(changed, lag < c.m, "lag {lag}");
        }
    }
}
