//! The spiking actor: population encoder → CLIF backbone → output populations
//! with intra-layer connections → LI decoders → clamped action. Also the
//! dense tanh baseline actor (DAN).

use serde::{Deserialize, Serialize};

use crate::coding::{
    argmax_abs, pop_det_raster, stimulate, CodingError, DecoderConfig, DecoderStat, EncoderMode,
    EncoderParams,
};
use crate::math::gemm::matmul_a_bt;
use crate::math::{Activation, Linear, Mlp, ParamBlocks, RealArray, RngStream};
use crate::neurons::{step_clif, step_li, NeuronLayerState, SpikingConfig, SurrogateConfig};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum ActorError {
    #[error("state has {got} entries, expected {expected}")]
    StateDim { expected: usize, got: usize },
    #[error("invalid actor configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Coding(#[from] CodingError),
    #[error("trace does not match these parameters: {0}")]
    TraceMismatch(String),
}

/// Observation/action dimensions and action bounds of a task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvSpec {
    pub n: usize,
    pub m: usize,
    pub low: Vec<f64>,
    pub high: Vec<f64>,
}

impl EnvSpec {
    pub fn symmetric(n: usize, m: usize, bound: f64) -> Self {
        Self {
            n,
            m,
            low: vec![-bound; m],
            high: vec![bound; m],
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.n == 0 || self.m == 0 {
            return Err("n and m must be positive".into());
        }
        if self.low.len() != self.m || self.high.len() != self.m {
            return Err(format!("bounds must have {} entries", self.m));
        }
        if let Some(i) = (0..self.m).find(|&i| !(self.low[i] < self.high[i])) {
            return Err(format!("action_low[{i}] must be below action_high[{i}]"));
        }
        Ok(())
    }

    /// Elementwise clamp of a flat `[B×M]` action buffer.
    pub fn clamp(&self, a: &mut [f64]) {
        for row in a.chunks_exact_mut(self.m) {
            for (j, x) in row.iter_mut().enumerate() {
                *x = x.clamp(self.low[j], self.high[j]);
            }
        }
    }
}

/// Which parts of the intra-layer connection are active.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IntraMask {
    #[serde(rename = "self")]
    pub self_: bool,
    pub lateral: bool,
    pub bias: bool,
}

impl Default for IntraMask {
    fn default() -> Self {
        Self::FULL
    }
}

impl IntraMask {
    pub const FULL: Self = Self {
        self_: true,
        lateral: true,
        bias: true,
    };
    pub const NONE: Self = Self {
        self_: false,
        lateral: false,
        bias: false,
    };
    pub const SELF: Self = Self {
        self_: true,
        lateral: false,
        bias: false,
    };
    pub const LATERAL: Self = Self {
        self_: false,
        lateral: true,
        bias: false,
    };
    pub const BIAS: Self = Self {
        self_: false,
        lateral: false,
        bias: true,
    };

    /// Whether weight entry `(i, j)` survives the mask.
    pub fn keeps(&self, i: usize, j: usize) -> bool {
        if i == j {
            self.self_
        } else {
            self.lateral
        }
    }

    /// Masked copy of an intra connection.
    pub fn apply(&self, conn: &Linear) -> Linear {
        let p = conn.fan_out();
        let mut out = conn.clone();
        for i in 0..p {
            for j in 0..p {
                if !self.keeps(i, j) {
                    out.weight.set(i, j, 0.0);
                }
            }
        }
        if !self.bias {
            out.bias.fill(0.0);
        }
        out
    }
}

/// `I = mask(W)·s + mask(b)` for one output population.
pub fn intra_current(spikes: &[f64], conn: &Linear, mask: IntraMask) -> Vec<f64> {
    let p = conn.fan_out();
    (0..p)
        .map(|i| {
            let mut acc = 0.0;
            for (j, s) in spikes.iter().enumerate() {
                if mask.keeps(i, j) {
                    acc += conn.weight.get(i, j) * s;
                }
            }
            if mask.bias {
                acc + conn.bias.data()[i]
            } else {
                acc
            }
        })
        .collect()
}

/// Architecture and neuron hyperparameters of the spiking actor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ActorConfig {
    pub t_len: usize,
    pub p_in: usize,
    pub p_out: usize,
    pub hidden: Vec<usize>,
    pub encoder: EncoderMode,
    pub enc_v_th: f64,
    pub decoder: DecoderConfig,
    pub neuron: SpikingConfig,
    pub surrogate: SurrogateConfig,
    /// Build with intra-layer connections at all.
    pub intra: bool,
    pub intra_mask: IntraMask,
    /// Clamp decoded voltages to the action bounds.
    pub clamp: bool,
}

impl Default for ActorConfig {
    fn default() -> Self {
        Self {
            t_len: 5,
            p_in: 10,
            p_out: 10,
            hidden: vec![256, 256],
            encoder: EncoderMode::PopDet,
            enc_v_th: 1.0,
            decoder: DecoderConfig::default(),
            neuron: SpikingConfig::clif(),
            surrogate: SurrogateConfig::default(),
            intra: true,
            intra_mask: IntraMask::FULL,
            clamp: true,
        }
    }
}

impl ActorConfig {
    pub fn validate(&self) -> Result<(), ActorError> {
        let bad = |m: String| Err(ActorError::Config(m));
        if self.t_len == 0 || self.p_in == 0 || self.p_out == 0 {
            return bad("t_len, p_in and p_out must be positive".into());
        }
        if self.hidden.is_empty() || self.hidden.contains(&0) {
            return bad("need at least one hidden layer, all widths positive".into());
        }
        if self.neuron.alpha_c.is_none() {
            return bad("backbone neurons need a current decay (alpha_c)".into());
        }
        self.neuron.validate().map_err(ActorError::Config)?;
        if !(self.surrogate.w > 0.0) {
            return bad("surrogate window must be positive".into());
        }
        if !(self.enc_v_th > 0.0) {
            return bad("encoder threshold must be positive".into());
        }
        let a = self.decoder.alpha_v_li;
        if !(a > 0.0 && a <= 1.0) {
            return bad(format!("decoder alpha_v_li must lie in (0, 1], got {a}"));
        }
        Ok(())
    }
}

/// All trainable parameters of the spiking actor plus the hyperparameters
/// needed to run it.
#[derive(Debug, Clone, PartialEq)]
pub struct ActorParams {
    pub spec: EnvSpec,
    pub cfg: ActorConfig,
    pub encoder: EncoderParams,
    /// `backbone[l].weight` is `[out, in]`; the last layer has `M·P_out` outputs.
    pub backbone: Vec<Linear>,
    /// One `P_out×P_out` connection per output population; empty when built
    /// without intra connections.
    pub intra: Vec<Linear>,
    /// Row `m` holds population `m`'s decoder weights; bias `[M]`.
    pub decoder: Linear,
}

impl ActorParams {
    pub fn new(spec: EnvSpec, cfg: ActorConfig, rng: &mut RngStream) -> Result<Self, ActorError> {
        spec.validate().map_err(ActorError::Config)?;
        cfg.validate()?;
        let mut encoder = EncoderParams::new(spec.n, cfg.p_in, cfg.encoder);
        encoder.enc_v_th = cfg.enc_v_th;
        let mut dims = vec![encoder.output_width()];
        dims.extend(&cfg.hidden);
        dims.push(spec.m * cfg.p_out);
        let backbone = dims.windows(2).map(|w| Linear::init(w[0], w[1], rng)).collect();
        let intra = if cfg.intra {
            (0..spec.m).map(|_| Linear::init(cfg.p_out, cfg.p_out, rng)).collect()
        } else {
            Vec::new()
        };
        let decoder = Linear::init(cfg.p_out, spec.m, rng);
        Ok(Self {
            spec,
            cfg,
            encoder,
            backbone,
            intra,
            decoder,
        })
    }

    /// Same architecture with every weight and bias zero (encoder left at its
    /// default receptive fields).
    pub fn zeroed(spec: EnvSpec, cfg: ActorConfig) -> Result<Self, ActorError> {
        let mut p = Self::new(spec, cfg, &mut RngStream::new(0, crate::math::StreamId::Init))?;
        for l in p.backbone.iter_mut().chain(p.intra.iter_mut()) {
            l.weight.fill(0.0);
            l.bias.fill(0.0);
        }
        p.decoder.weight.fill(0.0);
        p.decoder.bias.fill(0.0);
        Ok(p)
    }

    pub fn output_width(&self) -> usize {
        self.spec.m * self.cfg.p_out
    }

    /// Checks block shapes against the hyperparameters.
    pub fn check_shapes(&self) -> Result<(), ActorError> {
        let template = Self::zeroed(self.spec.clone(), self.cfg.clone())?;
        let mine = self.all_blocks();
        let want = template.all_blocks();
        if mine.len() != want.len() {
            return Err(ActorError::Config(format!(
                "{} parameter blocks, architecture needs {}",
                mine.len(),
                want.len()
            )));
        }
        for ((name, a), (_, b)) in mine.iter().zip(&want) {
            if a.shape() != b.shape() {
                return Err(ActorError::Config(format!(
                    "block {name} has shape {:?}, expected {:?}",
                    a.shape(),
                    b.shape()
                )));
            }
        }
        Ok(())
    }

    /// Every array including the encoder fields, regardless of encoder mode.
    pub(crate) fn all_blocks(&self) -> Vec<(String, &RealArray)> {
        let mut v = vec![
            ("encoder.mu".to_string(), &self.encoder.mu),
            ("encoder.sigma".to_string(), &self.encoder.sigma),
        ];
        v.extend(network_blocks(&self.backbone, &self.intra, &self.decoder));
        v
    }

    pub(crate) fn all_blocks_mut(&mut self) -> Vec<&mut RealArray> {
        let mut v = vec![&mut self.encoder.mu, &mut self.encoder.sigma];
        v.extend(network_blocks_mut(&mut self.backbone, &mut self.intra, &mut self.decoder));
        v
    }

    fn trains_encoder(&self) -> bool {
        self.cfg.encoder != EncoderMode::Layer
    }

    /// Deterministic action for one state.
    pub fn forward(&self, s: &[f64]) -> Result<Vec<f64>, ActorError> {
        Ok(self.forward_batch(s, 1)?.actions)
    }

    /// Runs `batch` states (flat `[B×N]`) and records everything the
    /// backward pass needs.
    pub fn forward_batch(&self, states: &[f64], batch: usize) -> Result<ForwardTrace, ActorError> {
        let n = self.spec.n;
        if states.len() != batch * n {
            return Err(ActorError::StateDim {
                expected: batch * n,
                got: states.len(),
            });
        }
        self.encoder.validate()?;
        let t_len = self.cfg.t_len;
        let (stimulation, input) = self.encode_batch(states, batch)?;

        let masked: Vec<Linear> = self.intra.iter().map(|c| self.cfg.intra_mask.apply(c)).collect();
        let last = self.backbone.len() - 1;
        let mut layers: Vec<LayerTrace> = Vec::with_capacity(self.backbone.len());
        let mut intra_trace = vec![0.0; t_len * batch * self.output_width()];
        for (l, layer) in self.backbone.iter().enumerate() {
            let x: &[f64] = if l == 0 { &input } else { &layers[l - 1].spikes };
            let with_intra = l == last && !masked.is_empty();
            let lt = self.run_layer(layer, x, batch, with_intra.then_some((&masked[..], &mut intra_trace[..])));
            layers.push(lt);
        }

        let (li_input, li_v, decoded) = self.decode_batch(&layers[last].spikes, batch);
        let mut actions = decoded.clone();
        if self.cfg.clamp {
            self.spec.clamp(&mut actions);
        }
        Ok(ForwardTrace {
            batch,
            t_len,
            states: states.to_vec(),
            stimulation,
            input,
            layers,
            intra: intra_trace,
            li_input,
            li_v,
            decoded,
            actions,
        })
    }

    /// Input raster stacked over time, `[T·B × D]`.
    fn encode_batch(&self, states: &[f64], batch: usize) -> Result<(Option<Vec<f64>>, Vec<f64>), ActorError> {
        let t_len = self.cfg.t_len;
        let n = self.spec.n;
        if self.cfg.encoder == EncoderMode::Layer {
            return Ok((None, states.repeat(t_len)));
        }
        let mut a_e = Vec::with_capacity(batch * self.encoder.output_width());
        for s in states.chunks_exact(n) {
            a_e.extend(stimulate(s, &self.encoder)?);
        }
        let input = match self.cfg.encoder {
            EncoderMode::PopDet => pop_det_raster(&a_e, self.encoder.enc_v_th, t_len).concat(),
            _ => a_e.repeat(t_len),
        };
        Ok((Some(a_e), input))
    }

    /// One backbone layer over all `T` steps. The last layer also receives the
    /// intra current from its own previous-step spikes.
    fn run_layer(
        &self,
        layer: &Linear,
        x: &[f64],
        batch: usize,
        intra: Option<(&[Linear], &mut [f64])>,
    ) -> LayerTrace {
        let t_len = self.cfg.t_len;
        let (fi, fo) = (layer.fan_in(), layer.fan_out());
        let rows = t_len * batch;
        let mut drive = vec![0.0; rows * fo];
        for row in drive.chunks_exact_mut(fo) {
            row.copy_from_slice(layer.bias.data());
        }
        matmul_a_bt(x, layer.weight.data(), rows, fi, fo, 1.0, &mut drive);

        let width = batch * fo;
        let mut state = NeuronLayerState::new(width, &self.cfg.neuron);
        let mut current = Vec::with_capacity(rows * fo);
        let mut h = Vec::with_capacity(rows * fo);
        let mut spikes = Vec::with_capacity(rows * fo);
        let mut intra = intra;
        for t in 0..t_len {
            let span = t * width..(t + 1) * width;
            if let Some((_, trace)) = intra.as_mut() {
                if t > 0 {
                    for (d, i) in drive[span.clone()].iter_mut().zip(&trace[span.clone()]) {
                        *d += i;
                    }
                }
            }
            let step = step_clif(&mut state, &drive[span], &self.cfg.neuron);
            current.extend_from_slice(state.c.as_deref().unwrap());
            if let Some((conns, trace)) = intra.as_mut() {
                if t + 1 < t_len {
                    let next = &mut trace[(t + 1) * width..(t + 2) * width];
                    populations_current(&step.spikes, conns, batch, self.cfg.p_out, next);
                }
            }
            h.extend(step.h);
            spikes.extend(step.spikes);
        }
        LayerTrace {
            drive,
            current,
            h,
            spikes,
        }
    }

    /// LI decoding of the last-layer raster. Returns `(X, V, decoded)` with
    /// `X, V` as `[T·B × M]` and `decoded` as `[B × M]`.
    fn decode_batch(&self, raster: &[f64], batch: usize) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let (m, p, t_len) = (self.spec.m, self.cfg.p_out, self.cfg.t_len);
        let dec = &self.cfg.decoder;
        let mut x = vec![0.0; t_len * batch * m];
        for (xr, sr) in x.chunks_exact_mut(m).zip(raster.chunks_exact(m * p)) {
            for (j, xj) in xr.iter_mut().enumerate() {
                let w = self.decoder.weight.row(j);
                *xj = self.decoder.bias.data()[j]
                    + sr[j * p..(j + 1) * p].iter().zip(w).map(|(s, w)| s * w).sum::<f64>();
            }
        }
        let mut v = Vec::with_capacity(x.len());
        let mut decoded = vec![0.0; batch * m];
        if dec.stat == DecoderStat::Fr {
            // Rate readout bypasses the LI neuron: mean over steps of X_t.
            for xt in x.chunks_exact(batch * m) {
                for (o, xi) in decoded.iter_mut().zip(xt) {
                    *o += xi;
                }
            }
            decoded.iter_mut().for_each(|o| *o /= t_len as f64);
            return (x, v, decoded);
        }
        let mut li = NeuronLayerState::non_spiking(batch * m, dec.v_reset_li);
        for xt in x.chunks_exact(batch * m) {
            v.extend(step_li(&mut li, xt, dec.alpha_v_li, dec.v_reset_li));
        }
        let width = batch * m;
        for (k, o) in decoded.iter_mut().enumerate() {
            let tr: Vec<f64> = (0..t_len).map(|t| v[t * width + k]).collect();
            *o = match dec.stat {
                DecoderStat::Last => tr[t_len - 1],
                DecoderStat::MaxAbs => tr[argmax_abs(&tr)],
                DecoderStat::Mean => tr.iter().sum::<f64>() / t_len as f64,
                DecoderStat::Fr => unreachable!(),
            };
        }
        (x, v, decoded)
    }
}

/// Intra currents for all populations of a batch of last-layer spike rows.
fn populations_current(spikes: &[f64], conns: &[Linear], batch: usize, p: usize, out: &mut [f64]) {
    let m = conns.len();
    for b in 0..batch {
        for (j, conn) in conns.iter().enumerate() {
            let off = b * m * p + j * p;
            let s = &spikes[off..off + p];
            for i in 0..p {
                let w = conn.weight.row(i);
                out[off + i] = conn.bias.data()[i] + w.iter().zip(s).map(|(w, s)| w * s).sum::<f64>();
            }
        }
    }
}

pub(crate) fn network_blocks<'a>(
    backbone: &'a [Linear],
    intra: &'a [Linear],
    decoder: &'a Linear,
) -> Vec<(String, &'a RealArray)> {
    let mut v = Vec::new();
    for (l, layer) in backbone.iter().enumerate() {
        v.push((format!("backbone.{l}.weight"), &layer.weight));
        v.push((format!("backbone.{l}.bias"), &layer.bias));
    }
    for (m, conn) in intra.iter().enumerate() {
        v.push((format!("intra.{m}.weight"), &conn.weight));
        v.push((format!("intra.{m}.bias"), &conn.bias));
    }
    v.push(("decoder.weight".to_string(), &decoder.weight));
    v.push(("decoder.bias".to_string(), &decoder.bias));
    v
}

pub(crate) fn network_blocks_mut<'a>(
    backbone: &'a mut [Linear],
    intra: &'a mut [Linear],
    decoder: &'a mut Linear,
) -> Vec<&'a mut RealArray> {
    backbone
        .iter_mut()
        .chain(intra.iter_mut())
        .chain(std::iter::once(decoder))
        .flat_map(|l| [&mut l.weight, &mut l.bias])
        .collect()
}

impl ParamBlocks for ActorParams {
    fn blocks(&self) -> Vec<(String, &RealArray)> {
        let mut v = self.all_blocks();
        if !self.trains_encoder() {
            v.drain(..2);
        }
        v
    }

    fn blocks_mut(&mut self) -> Vec<&mut RealArray> {
        let trains = self.trains_encoder();
        let mut v = self.all_blocks_mut();
        if !trains {
            v.drain(..2);
        }
        v
    }
}

/// Per-layer record over all time steps; each buffer is `[T·B × width]`,
/// time-major.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerTrace {
    /// Synaptic drive including any intra current.
    pub drive: Vec<f64>,
    pub current: Vec<f64>,
    /// Pre-reset voltage.
    pub h: Vec<f64>,
    pub spikes: Vec<f64>,
}

/// Everything recorded during one batched forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardTrace {
    pub batch: usize,
    pub t_len: usize,
    pub states: Vec<f64>,
    /// Gaussian stimulation `[B × N·P_in]`; absent for the raw-state encoder.
    pub stimulation: Option<Vec<f64>>,
    /// Input raster `[T·B × D]`.
    pub input: Vec<f64>,
    pub layers: Vec<LayerTrace>,
    /// Intra current entering the last layer, `[T·B × M·P_out]`; zero at the first step.
    pub intra: Vec<f64>,
    /// LI input `[T·B × M]`.
    pub li_input: Vec<f64>,
    /// LI voltage `[T·B × M]`; empty for the rate decoder.
    pub li_v: Vec<f64>,
    /// Decoded output before clamping, `[B × M]`.
    pub decoded: Vec<f64>,
    pub actions: Vec<f64>,
}

impl ForwardTrace {
    /// Row `t` of a time-major buffer with `width` entries per batch row.
    pub fn step<'a>(&self, buf: &'a [f64], t: usize, width: usize) -> &'a [f64] {
        let w = self.batch * width;
        &buf[t * w..(t + 1) * w]
    }

    pub fn output_spikes(&self) -> &[f64] {
        &self.layers.last().expect("at least one layer").spikes
    }
}

/// Dense baseline actor: `N → 256 → 256 → M`, ReLU hidden, tanh output
/// rescaled to the action bounds.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseActor {
    pub spec: EnvSpec,
    pub net: Mlp,
}

impl DenseActor {
    pub const HIDDEN: [usize; 2] = [256, 256];

    pub fn new(spec: EnvSpec, hidden: &[usize], rng: &mut RngStream) -> Result<Self, ActorError> {
        spec.validate().map_err(ActorError::Config)?;
        let mut dims = vec![spec.n];
        dims.extend(hidden);
        dims.push(spec.m);
        Ok(Self {
            net: Mlp::new(&dims, Activation::Relu, Activation::Tanh, rng),
            spec,
        })
    }

    pub fn hidden(&self) -> Vec<usize> {
        self.net.layers[..self.net.layers.len() - 1]
            .iter()
            .map(Linear::fan_out)
            .collect()
    }

    /// `mid + half·tanh(·)` per action dimension.
    pub fn scale(&self, squashed: &mut [f64]) {
        for row in squashed.chunks_exact_mut(self.spec.m) {
            for (j, x) in row.iter_mut().enumerate() {
                let (lo, hi) = (self.spec.low[j], self.spec.high[j]);
                *x = 0.5 * (hi + lo) + 0.5 * (hi - lo) * *x;
            }
        }
    }

    pub fn forward_batch(&self, states: &[f64], batch: usize) -> Result<Vec<f64>, ActorError> {
        if states.len() != batch * self.spec.n {
            return Err(ActorError::StateDim {
                expected: batch * self.spec.n,
                got: states.len(),
            });
        }
        let mut a = self.net.forward_batch(states, batch);
        self.scale(&mut a);
        Ok(a)
    }

    pub fn forward(&self, s: &[f64]) -> Result<Vec<f64>, ActorError> {
        self.forward_batch(s, 1)
    }
}

impl ParamBlocks for DenseActor {
    fn blocks(&self) -> Vec<(String, &RealArray)> {
        self.net.blocks()
    }

    fn blocks_mut(&mut self) -> Vec<&mut RealArray> {
        self.net.blocks_mut()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::StreamId;
    use proptest::prelude::*;

    fn tiny_cfg() -> ActorConfig {
        ActorConfig {
            t_len: 3,
            p_in: 3,
            p_out: 2,
            hidden: vec![4],
            ..Default::default()
        }
    }

    #[test]
    fn dead_network_outputs_zero() {
        let p = ActorParams::zeroed(EnvSpec::symmetric(3, 2, 2.0), tiny_cfg()).unwrap();
        let tr = p.forward_batch(&[0.3, -1.0, 2.0], 1).unwrap();
        assert_eq!(tr.actions, vec![0.0, 0.0]);
        assert!(tr.layers.iter().all(|l| l.spikes.iter().all(|s| *s == 0.0)));
        assert!(tr.li_v.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn rejects_wrong_state_dim() {
        let p = ActorParams::zeroed(EnvSpec::symmetric(3, 2, 2.0), tiny_cfg()).unwrap();
        assert_eq!(p.forward(&[0.0; 2]), Err(ActorError::StateDim { expected: 3, got: 2 }));
    }

    #[test]
    fn ant_shapes() {
        let mut rng = RngStream::new(1, StreamId::Init);
        let p = ActorParams::new(EnvSpec::symmetric(111, 8, 1.0), ActorConfig::default(), &mut rng).unwrap();
        let tr = p.forward_batch(&vec![0.1; 111], 1).unwrap();
        assert_eq!(tr.input.len(), 1110 * 5);
        assert_eq!(tr.actions.len(), 8);
        assert_eq!(p.backbone[0].weight.shape(), &[256, 1110]);
        assert_eq!(p.backbone[2].weight.shape(), &[80, 256]);
        assert_eq!(p.intra.len(), 8);
        assert_eq!(p.intra[0].weight.shape(), &[10, 10]);
    }

    /// Hand replay of the forward recursion on a one-neuron-per-layer network.
    #[test]
    fn single_neuron_toy_matches_hand_replay() {
        let cfg = ActorConfig {
            t_len: 2,
            p_in: 1,
            p_out: 1,
            hidden: vec![1],
            ..Default::default()
        };
        let mut p = ActorParams::zeroed(EnvSpec::symmetric(1, 1, 10.0), cfg).unwrap();
        p.encoder.mu = RealArray::matrix(1, 1, vec![0.0]);
        p.encoder.sigma = RealArray::matrix(1, 1, vec![1.0]);
        p.backbone[0] = Linear { weight: RealArray::matrix(1, 1, vec![0.8]), bias: RealArray::vector(vec![0.1]) };
        p.backbone[1] = Linear { weight: RealArray::matrix(1, 1, vec![0.7]), bias: RealArray::vector(vec![-0.05]) };
        p.intra[0] = Linear { weight: RealArray::matrix(1, 1, vec![0.3]), bias: RealArray::vector(vec![0.02]) };
        p.decoder = Linear { weight: RealArray::matrix(1, 1, vec![1.5]), bias: RealArray::vector(vec![0.25]) };
        // s = 0 → a_e = 1 → encoder fires at both steps.
        // Layer 1, t1: c = 0.9, h = 0.9 → spike, v = 0. t2: c = 0.45 + 0.9 = 1.35, h = 1.35 → spike.
        // Layer 2, t1: c = 0.65, h = 0.65 → spike; I_2 = 0.3 + 0.02 = 0.32.
        //          t2: drive = 0.65 + 0.32 = 0.97, c = 0.325 + 0.97 = 1.295, h = 1.295 → spike.
        // LI (α = 1): V1 = 1.5 + 0.25 = 1.75, V2 = 3.5.
        let tr = p.forward_batch(&[0.0], 1).unwrap();
        assert_eq!(tr.input, vec![1.0, 1.0]);
        let d1 = 0.1 + 0.8;
        assert_eq!(tr.layers[0].h, vec![d1, 0.5 * d1 + d1]);
        let d2 = -0.05 + 0.7;
        let i2 = 0.02 + 0.3;
        assert_eq!(tr.layers[1].h, vec![d2, 0.5 * d2 + (d2 + i2)]);
        assert_eq!(tr.layers[1].spikes, vec![1.0, 1.0]);
        assert_eq!(tr.li_v, vec![1.75, 3.5]);
        assert_eq!(tr.actions, vec![3.5]);
    }

    #[test]
    fn intra_examples() {
        let conn = Linear { weight: RealArray::identity(3), bias: RealArray::zeros(&[3]) };
        assert_eq!(intra_current(&[1.0, 0.0, 1.0], &conn, IntraMask::FULL), vec![1.0, 0.0, 1.0]);
        let conn = Linear {
            weight: RealArray::matrix(2, 2, vec![0.4, -0.3, 0.2, 0.9]),
            bias: RealArray::vector(vec![0.05, -0.07]),
        };
        assert_eq!(intra_current(&[1.0, 1.0], &conn, IntraMask::BIAS), vec![0.05, -0.07]);
        assert_eq!(intra_current(&[0.0, 0.0], &conn, IntraMask::BIAS), vec![0.05, -0.07]);
    }

    #[test]
    fn first_step_has_no_intra_current() {
        let mut rng = RngStream::new(4, StreamId::Init);
        let p = ActorParams::new(EnvSpec::symmetric(3, 2, 2.0), tiny_cfg(), &mut rng).unwrap();
        let tr = p.forward_batch(&[0.1, 0.2, 0.3, -0.5, 0.0, 0.5], 2).unwrap();
        assert!(tr.step(&tr.intra, 0, 4).iter().all(|x| *x == 0.0));
        assert!(tr.step(&tr.intra, 1, 4).iter().any(|x| *x != 0.0));
    }

    #[test]
    fn batch_rows_match_single_calls() {
        let mut rng = RngStream::new(9, StreamId::Init);
        let p = ActorParams::new(EnvSpec::symmetric(3, 2, 2.0), tiny_cfg(), &mut rng).unwrap();
        let states = [0.1, 0.2, 0.3, -0.5, 0.0, 0.5, 1.4, -2.2, 0.7];
        let batched = p.forward_batch(&states, 3).unwrap().actions;
        for b in 0..3 {
            assert_eq!(p.forward(&states[b * 3..b * 3 + 3]).unwrap(), batched[b * 2..b * 2 + 2]);
        }
    }

    #[test]
    fn dan_zero_weights_and_hidden_widths() {
        let mut rng = RngStream::new(2, StreamId::Init);
        let mut d = DenseActor::new(EnvSpec::symmetric(11, 3, 1.0), &DenseActor::HIDDEN, &mut rng).unwrap();
        assert_eq!(d.hidden(), vec![256, 256]);
        for b in d.blocks_mut() {
            b.fill(0.0);
        }
        assert_eq!(d.forward(&[0.5; 11]).unwrap(), vec![0.0; 3]);
    }

    proptest! {
        #[test]
        fn actions_within_bounds(s in prop::collection::vec(-20.0f64..20.0, 3), seed in 0u64..50) {
            let mut rng = RngStream::new(seed, StreamId::Init);
            let spec = EnvSpec { n: 3, m: 2, low: vec![-0.5, 0.0], high: vec![0.5, 2.0] };
            let p = ActorParams::new(spec.clone(), tiny_cfg(), &mut rng).unwrap();
            let a = p.forward(&s).unwrap();
            prop_assert_eq!(&a, &p.forward(&s).unwrap());
            for j in 0..2 {
                prop_assert!(a[j] >= spec.low[j] && a[j] <= spec.high[j]);
            }
            let d = DenseActor::new(spec.clone(), &[8, 8], &mut rng).unwrap();
            let a = d.forward(&s).unwrap();
            for j in 0..2 {
                prop_assert!(a[j] >= spec.low[j] && a[j] <= spec.high[j]);
            }
        }
    }
}
