//! Reverse-mode gradients of the spiking actor.
//!
//! [`backward`] is the production path: batched BPTT over a [`ForwardTrace`],
//! layer by layer, with the rectangular surrogate for `dS/dH`, the reset
//! treated as detached (`dV_t/dH_t = 1 − S_t`), and the encoder spikes passing
//! gradient straight to their stimulation strength.
//!
//! [`GraphTape`] is an independent check: it re-runs one sample as a list of
//! scalar primitives and sweeps them in reverse.

use crate::actor::{network_blocks, network_blocks_mut, ActorError, ActorParams, ForwardTrace, IntraMask};
use crate::coding::{accumulate_stimulation_grads, argmax_abs, stimulate, DecoderStat, EncoderMode};
use crate::math::gemm::{matmul, matmul_at_b};
use crate::math::{Linear, ParamBlocks, RealArray};
use crate::neurons::{surrogate_grad, ResetMode};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum GradError {
    #[error("no parameter block named {0}")]
    UnknownBlock(String),
    #[error("finite-difference step must be positive")]
    BadStep,
}

/// Gradient of a scalar loss with respect to every [`ActorParams`] array.
#[derive(Debug, Clone, PartialEq)]
pub struct ActorGrads {
    pub mu: RealArray,
    pub sigma: RealArray,
    pub backbone: Vec<Linear>,
    pub intra: Vec<Linear>,
    pub decoder: Linear,
    trains_encoder: bool,
}

impl ActorGrads {
    pub fn zeros_like(p: &ActorParams) -> Self {
        let z = |l: &Linear| Linear::zeros(l.fan_in(), l.fan_out());
        Self {
            mu: RealArray::zeros(p.encoder.mu.shape()),
            sigma: RealArray::zeros(p.encoder.sigma.shape()),
            backbone: p.backbone.iter().map(z).collect(),
            intra: p.intra.iter().map(z).collect(),
            decoder: z(&p.decoder),
            trains_encoder: p.cfg.encoder != EncoderMode::Layer,
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.blocks().iter().map(|(_, b)| b.max_abs()).fold(0.0, f64::max)
    }

    pub fn add_assign(&mut self, other: &ActorGrads) {
        for (a, (_, b)) in self.blocks_mut().into_iter().zip(other.blocks()) {
            a.add_assign(b);
        }
    }
}

impl ParamBlocks for ActorGrads {
    fn blocks(&self) -> Vec<(String, &RealArray)> {
        let mut v = Vec::new();
        if self.trains_encoder {
            v.push(("encoder.mu".to_string(), &self.mu));
            v.push(("encoder.sigma".to_string(), &self.sigma));
        }
        v.extend(network_blocks(&self.backbone, &self.intra, &self.decoder));
        v
    }

    fn blocks_mut(&mut self) -> Vec<&mut RealArray> {
        let mut v = Vec::new();
        if self.trains_encoder {
            v.push(&mut self.mu);
            v.push(&mut self.sigma);
        }
        v.extend(network_blocks_mut(&mut self.backbone, &mut self.intra, &mut self.decoder));
        v
    }
}

/// Knobs for the backward pass. `surrogate_scale` other than 1 deliberately
/// corrupts the spike derivative; it exists for negative-control checks.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BackwardOptions {
    pub surrogate_scale: f64,
}

impl Default for BackwardOptions {
    fn default() -> Self {
        Self { surrogate_scale: 1.0 }
    }
}

/// Gradients of `Σ_b dl_da[b]·a[b]` summed over the batch recorded in `trace`.
pub fn backward(params: &ActorParams, trace: &ForwardTrace, dl_da: &[f64]) -> Result<ActorGrads, ActorError> {
    backward_with(params, trace, dl_da, BackwardOptions::default())
}

fn check_trace(params: &ActorParams, trace: &ForwardTrace, dl_da: &[f64]) -> Result<(), ActorError> {
    let mismatch = |m: String| Err(ActorError::TraceMismatch(m));
    let batch = trace.batch;
    if trace.t_len != params.cfg.t_len {
        return mismatch(format!("trace has T = {}, params T = {}", trace.t_len, params.cfg.t_len));
    }
    if trace.layers.len() != params.backbone.len() {
        return mismatch(format!("trace has {} layers, params {}", trace.layers.len(), params.backbone.len()));
    }
    for (l, (lt, layer)) in trace.layers.iter().zip(&params.backbone).enumerate() {
        if lt.spikes.len() != trace.t_len * batch * layer.fan_out() {
            return mismatch(format!("layer {l} width differs"));
        }
    }
    if dl_da.len() != batch * params.spec.m || trace.decoded.len() != dl_da.len() {
        return mismatch(format!("dl_da has {} entries, expected {}", dl_da.len(), batch * params.spec.m));
    }
    Ok(())
}

pub fn backward_with(
    params: &ActorParams,
    trace: &ForwardTrace,
    dl_da: &[f64],
    opts: BackwardOptions,
) -> Result<ActorGrads, ActorError> {
    check_trace(params, trace, dl_da)?;
    let cfg = &params.cfg;
    let (batch, t_len, m, p) = (trace.batch, trace.t_len, params.spec.m, cfg.p_out);
    let mut grads = ActorGrads::zeros_like(params);

    // Clamp: gradient 1 inside the bounds, 0 where it saturated.
    let mut g_o = dl_da.to_vec();
    if cfg.clamp {
        for (k, g) in g_o.iter_mut().enumerate() {
            let j = k % m;
            let o = trace.decoded[k];
            if o < params.spec.low[j] || o > params.spec.high[j] {
                *g = 0.0;
            }
        }
    }

    // Decoder statistic and LI recursion → gradient on each X_t.
    let wm = batch * m;
    let mut g_x = vec![0.0; t_len * wm];
    let dec = &cfg.decoder;
    if dec.stat == DecoderStat::Fr {
        for t in 0..t_len {
            for k in 0..wm {
                g_x[t * wm + k] = g_o[k] / t_len as f64;
            }
        }
    } else {
        let pick: Vec<usize> = (0..wm)
            .map(|k| match dec.stat {
                DecoderStat::MaxAbs => {
                    let tr: Vec<f64> = (0..t_len).map(|t| trace.li_v[t * wm + k]).collect();
                    argmax_abs(&tr)
                }
                _ => t_len - 1,
            })
            .collect();
        let mut carry = vec![0.0; wm];
        for t in (0..t_len).rev() {
            for k in 0..wm {
                let dstat = match dec.stat {
                    DecoderStat::Mean => 1.0 / t_len as f64,
                    _ if pick[k] == t => 1.0,
                    _ => 0.0,
                };
                let gv = dstat * g_o[k] + dec.alpha_v_li * carry[k];
                carry[k] = gv;
                g_x[t * wm + k] = gv;
            }
        }
    }

    // Decoder weights and gradient on the output spikes.
    let out_w = m * p;
    let raster = trace.output_spikes();
    let mut g_s = vec![0.0; t_len * batch * out_w];
    for (r, gx) in g_x.chunks_exact(m).enumerate() {
        for (j, g) in gx.iter().enumerate() {
            if *g == 0.0 {
                continue;
            }
            grads.decoder.bias.data_mut()[j] += g;
            let off = r * out_w + j * p;
            let w = params.decoder.weight.row(j);
            let gw = grads.decoder.weight.row_mut(j);
            for k in 0..p {
                gw[k] += g * raster[off + k];
                g_s[off + k] += g * w[k];
            }
        }
    }

    // Backbone, last layer first; each layer runs its own reverse time loop.
    let last = params.backbone.len() - 1;
    let neuron = &cfg.neuron;
    let alpha_c = neuron.alpha_c.expect("validated");
    let masked: Vec<Linear> = params.intra.iter().map(|c| cfg.intra_mask.apply(c)).collect();
    let needs_input_grad = cfg.encoder != EncoderMode::Layer;
    for l in (0..=last).rev() {
        let layer = &params.backbone[l];
        let lt = &trace.layers[l];
        let (fi, fo) = (layer.fan_in(), layer.fan_out());
        let width = batch * fo;
        let rows = t_len * batch;
        let mut g_d = vec![0.0; rows * fo];
        let mut carry_v = vec![0.0; width];
        let mut carry_c = vec![0.0; width];
        for t in (0..t_len).rev() {
            for i in 0..width {
                let idx = t * width + i;
                let s = lt.spikes[idx];
                let sg = opts.surrogate_scale * surrogate_grad(lt.h[idx], neuron.v_th, &cfg.surrogate);
                let gate = match neuron.reset {
                    ResetMode::Hard => 1.0 - s,
                    ResetMode::Soft => 1.0,
                };
                let gh = g_s[idx] * sg + carry_v[i] * gate;
                let gc = gh + alpha_c * carry_c[i];
                carry_c[i] = gc;
                carry_v[i] = neuron.alpha_v * gh;
                g_d[idx] = gc;
            }
            if l == last && t > 0 && !masked.is_empty() {
                intra_backward(
                    &masked,
                    &mut grads.intra,
                    &g_d[t * width..(t + 1) * width],
                    &lt.spikes[(t - 1) * width..t * width],
                    &mut g_s[(t - 1) * width..t * width],
                    batch,
                    p,
                    cfg.intra_mask,
                );
            }
        }
        let x: &[f64] = if l == 0 { &trace.input } else { &trace.layers[l - 1].spikes };
        matmul_at_b(&g_d, x, rows, fo, fi, 0.0, grads.backbone[l].weight.data_mut());
        let gb = grads.backbone[l].bias.data_mut();
        for row in g_d.chunks_exact(fo) {
            for (b, g) in gb.iter_mut().zip(row) {
                *b += g;
            }
        }
        if l > 0 || needs_input_grad {
            let mut g_in = vec![0.0; rows * fi];
            matmul(&g_d, layer.weight.data(), rows, fo, fi, 0.0, &mut g_in);
            g_s = g_in;
        }
    }

    if needs_input_grad {
        // Pass-through: every step's input gradient lands on its stimulation strength.
        let d = params.encoder.output_width();
        let a_e = trace.stimulation.as_ref().expect("population encoders record stimulation");
        let mut g_a = vec![0.0; batch * d];
        for gt in g_s.chunks_exact(batch * d) {
            for (a, g) in g_a.iter_mut().zip(gt) {
                *a += g;
            }
        }
        let n = params.spec.n;
        for b in 0..batch {
            accumulate_stimulation_grads(
                &trace.states[b * n..(b + 1) * n],
                &params.encoder,
                &a_e[b * d..(b + 1) * d],
                &g_a[b * d..(b + 1) * d],
                &mut grads.mu,
                &mut grads.sigma,
            );
        }
    }
    Ok(grads)
}

/// Reverse of `I_t = mask(W)·S_{t-1} + mask(b)` for all populations.
#[allow(clippy::too_many_arguments)]
fn intra_backward(
    masked: &[Linear],
    g_intra: &mut [Linear],
    g_i: &[f64],
    s_prev: &[f64],
    g_s_prev: &mut [f64],
    batch: usize,
    p: usize,
    mask: IntraMask,
) {
    let m = masked.len();
    for b in 0..batch {
        for (j, conn) in masked.iter().enumerate() {
            let off = b * m * p + j * p;
            for i in 0..p {
                let g = g_i[off + i];
                if g == 0.0 {
                    continue;
                }
                if mask.bias {
                    g_intra[j].bias.data_mut()[i] += g;
                }
                let w = conn.weight.row(i);
                let gw = g_intra[j].weight.row_mut(i);
                for q in 0..p {
                    // Masked entries are zero in `w`; their gradient must stay zero too.
                    if mask.keeps(i, q) {
                        gw[q] += g * s_prev[off + q];
                    }
                    g_s_prev[off + q] += g * w[q];
                }
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Scalar tape oracle
// ---------------------------------------------------------------------------

/// One scalar primitive. Node indices always point backwards.
#[derive(Debug, Clone, PartialEq)]
pub enum Op {
    /// Entry `index` of parameter block `block` (block order of
    /// `encoder.mu, encoder.sigma, backbone…, intra…, decoder`).
    Param { block: usize, index: usize },
    Const,
    /// `Σ coef·x + offset`.
    Lin { terms: Vec<(usize, f64)>, offset: f64 },
    /// `Σ w·s + bias`.
    Dot { pairs: Vec<(usize, usize)>, bias: Option<usize> },
    Mul(usize, usize),
    Div(usize, usize),
    Exp(usize),
    /// `α(v − v_reset) + v_reset + x`.
    Charge { v: usize, x: usize, alpha: f64, v_reset: f64 },
    /// `Θ(h − v_th)` with the rectangular surrogate of half-width `window`.
    Heaviside { h: usize, v_th: f64, window: f64 },
    /// Post-spike voltage; differentiable in `h` only.
    ResetGate { h: usize, s: usize, mode: ResetMode, v_reset: f64, v_th: f64 },
    /// Encoder voltage `t·a − v_th·Σ s`; carries no gradient.
    EncoderVoltage { a: usize, t: usize, spikes: Vec<usize>, v_th: f64 },
    /// Encoder spike `Θ(h − v_th)` whose gradient passes to `a` with factor 1.
    PassSpike { a: usize, h: usize, v_th: f64 },
    Clamp { x: usize, lo: f64, hi: f64 },
    /// Entry of maximal absolute value (earliest on ties).
    SelectMaxAbs(Vec<usize>),
    Mean(Vec<usize>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Node {
    pub op: Op,
    pub value: f64,
}

/// Recorded scalar graph of one forward pass for one state.
#[derive(Debug, Clone, PartialEq)]
pub struct GraphTape {
    pub nodes: Vec<Node>,
    pub outputs: Vec<usize>,
    block_shapes: Vec<Vec<usize>>,
    trains_encoder: bool,
    template: ActorGrads,
}

impl GraphTape {
    fn push(&mut self, op: Op) -> usize {
        let value = self.eval(&op);
        self.nodes.push(Node { op, value });
        self.nodes.len() - 1
    }

    fn val(&self, k: usize) -> f64 {
        self.nodes[k].value
    }

    fn eval(&self, op: &Op) -> f64 {
        match op {
            Op::Param { .. } | Op::Const => unreachable!("leaves carry their own value"),
            Op::Lin { terms, offset } => terms.iter().map(|(x, c)| c * self.val(*x)).sum::<f64>() + offset,
            Op::Dot { pairs, bias } => {
                pairs.iter().map(|(w, s)| self.val(*w) * self.val(*s)).sum::<f64>()
                    + bias.map_or(0.0, |b| self.val(b))
            }
            Op::Mul(a, b) => self.val(*a) * self.val(*b),
            Op::Div(a, b) => self.val(*a) / self.val(*b),
            Op::Exp(a) => self.val(*a).exp(),
            Op::Charge { v, x, alpha, v_reset } => alpha * (self.val(*v) - v_reset) + v_reset + self.val(*x),
            Op::Heaviside { h, v_th, .. } => step(self.val(*h), *v_th),
            Op::ResetGate { h, s, mode, v_reset, v_th } => {
                let (h, s) = (self.val(*h), self.val(*s));
                match mode {
                    ResetMode::Hard => h * (1.0 - s) + v_reset * s,
                    ResetMode::Soft => h - v_th * s,
                }
            }
            Op::EncoderVoltage { a, t, spikes, v_th } => {
                let k: f64 = spikes.iter().map(|s| self.val(*s)).sum();
                *t as f64 * self.val(*a) - k * v_th
            }
            Op::PassSpike { h, v_th, .. } => step(self.val(*h), *v_th),
            Op::Clamp { x, lo, hi } => self.val(*x).clamp(*lo, *hi),
            Op::SelectMaxAbs(xs) => {
                let v: Vec<f64> = xs.iter().map(|x| self.val(*x)).collect();
                v[argmax_abs(&v)]
            }
            Op::Mean(xs) => xs.iter().map(|x| self.val(*x)).sum::<f64>() / xs.len() as f64,
        }
    }

    /// Local derivatives `(input node, ∂node/∂input)`.
    pub fn edges(&self, k: usize) -> Vec<(usize, f64)> {
        let node = &self.nodes[k];
        match &node.op {
            Op::Param { .. } | Op::Const | Op::EncoderVoltage { .. } => vec![],
            Op::Lin { terms, .. } => terms.clone(),
            Op::Dot { pairs, bias } => {
                let mut e: Vec<(usize, f64)> = pairs
                    .iter()
                    .flat_map(|(w, s)| [(*w, self.val(*s)), (*s, self.val(*w))])
                    .collect();
                if let Some(b) = bias {
                    e.push((*b, 1.0));
                }
                e
            }
            Op::Mul(a, b) => vec![(*a, self.val(*b)), (*b, self.val(*a))],
            Op::Div(a, b) => {
                let d = self.val(*b);
                vec![(*a, 1.0 / d), (*b, -self.val(*a) / (d * d))]
            }
            Op::Exp(a) => vec![(*a, node.value)],
            Op::Charge { v, x, alpha, .. } => vec![(*v, *alpha), (*x, 1.0)],
            Op::Heaviside { h, v_th, window } => {
                vec![(*h, surrogate_grad(self.val(*h), *v_th, &crate::neurons::SurrogateConfig { w: *window }))]
            }
            Op::ResetGate { h, s, mode, .. } => match mode {
                ResetMode::Hard => vec![(*h, 1.0 - self.val(*s))],
                ResetMode::Soft => vec![(*h, 1.0)],
            },
            Op::PassSpike { a, .. } => vec![(*a, 1.0)],
            Op::Clamp { x, lo, hi } => {
                let v = self.val(*x);
                vec![(*x, if v >= *lo && v <= *hi { 1.0 } else { 0.0 })]
            }
            Op::SelectMaxAbs(xs) => {
                let v: Vec<f64> = xs.iter().map(|x| self.val(*x)).collect();
                vec![(xs[argmax_abs(&v)], 1.0)]
            }
            Op::Mean(xs) => xs.iter().map(|x| (*x, 1.0 / xs.len() as f64)).collect(),
        }
    }

    pub fn output_values(&self) -> Vec<f64> {
        self.outputs.iter().map(|k| self.val(*k)).collect()
    }

    /// Recomputes every non-leaf node from the recorded leaves and returns the
    /// outputs.
    pub fn replay(&self) -> Vec<f64> {
        let mut copy = self.clone();
        for k in 0..copy.nodes.len() {
            if !matches!(copy.nodes[k].op, Op::Param { .. } | Op::Const) {
                let op = copy.nodes[k].op.clone();
                copy.nodes[k].value = copy.eval(&op);
            }
        }
        copy.output_values()
    }
}

fn step(h: f64, v_th: f64) -> f64 {
    if h >= v_th {
        1.0
    } else {
        0.0
    }
}

/// Records the scalar graph of `params` acting on state `s`.
pub fn record_tape(params: &ActorParams, s: &[f64]) -> Result<GraphTape, ActorError> {
    if s.len() != params.spec.n {
        return Err(ActorError::StateDim {
            expected: params.spec.n,
            got: s.len(),
        });
    }
    params.encoder.validate()?;
    let cfg = &params.cfg;
    let blocks = params.all_blocks();
    let mut tape = GraphTape {
        nodes: Vec::new(),
        outputs: Vec::new(),
        block_shapes: blocks.iter().map(|(_, b)| b.shape().to_vec()).collect(),
        trains_encoder: cfg.encoder != EncoderMode::Layer,
        template: ActorGrads::zeros_like(params),
    };
    let mut leaf = Vec::with_capacity(blocks.len());
    for (bi, (_, b)) in blocks.iter().enumerate() {
        let ids: Vec<usize> = b
            .data()
            .iter()
            .enumerate()
            .map(|(index, v)| {
                tape.nodes.push(Node {
                    op: Op::Param { block: bi, index },
                    value: *v,
                });
                tape.nodes.len() - 1
            })
            .collect();
        leaf.push(ids);
    }
    let constant = |tape: &mut GraphTape, value: f64| {
        tape.nodes.push(Node { op: Op::Const, value });
        tape.nodes.len() - 1
    };
    let (t_len, p_in, p) = (cfg.t_len, cfg.p_in, cfg.p_out);

    // Encoder: one input node per (step, input neuron).
    let mut input: Vec<Vec<usize>> = vec![Vec::new(); t_len];
    match cfg.encoder {
        EncoderMode::Layer => {
            for (t, row) in input.iter_mut().enumerate() {
                let _ = t;
                for si in s {
                    row.push(constant(&mut tape, *si));
                }
            }
        }
        mode => {
            for (i, si) in s.iter().enumerate() {
                for j in 0..p_in {
                    let k = i * p_in + j;
                    let d = tape.push(Op::Lin {
                        terms: vec![(leaf[0][k], -1.0)],
                        offset: *si,
                    });
                    let z = tape.push(Op::Div(d, leaf[1][k]));
                    let hz = tape.push(Op::Lin {
                        terms: vec![(z, -0.5)],
                        offset: 0.0,
                    });
                    let e = tape.push(Op::Mul(hz, z));
                    let a = tape.push(Op::Exp(e));
                    if mode == EncoderMode::Pop {
                        input.iter_mut().for_each(|row| row.push(a));
                    } else {
                        let v_th = params.encoder.enc_v_th;
                        let mut spikes = Vec::new();
                        for row in input.iter_mut().enumerate() {
                            let (t, row) = row;
                            let h = tape.push(Op::EncoderVoltage {
                                a,
                                t: t + 1,
                                spikes: spikes.clone(),
                                v_th,
                            });
                            let sp = tape.push(Op::PassSpike { a, h, v_th });
                            spikes.push(sp);
                            row.push(sp);
                        }
                    }
                }
            }
        }
    }

    // Backbone.
    let neuron = &cfg.neuron;
    let alpha_c = neuron.alpha_c.expect("validated");
    let nl = params.backbone.len();
    let intra_base = 2 + 2 * nl;
    let dec_base = intra_base + 2 * params.intra.len();
    let mask = cfg.intra_mask;
    let mut prev_c: Vec<Vec<Option<usize>>> = params.backbone.iter().map(|l| vec![None; l.fan_out()]).collect();
    let mut prev_v = prev_c.clone();
    let mut pending_intra: Vec<Option<usize>> = vec![None; params.output_width()];
    let mut li_v: Vec<Vec<usize>> = vec![Vec::new(); params.spec.m];
    let mut li_x: Vec<Vec<usize>> = vec![Vec::new(); params.spec.m];
    let mut prev_li: Vec<Option<usize>> = vec![None; params.spec.m];
    let v_reset_const = constant(&mut tape, neuron.v_reset);
    let li_reset_const = constant(&mut tape, cfg.decoder.v_reset_li);
    for t in 0..t_len {
        let mut x = input[t].clone();
        for (l, layer) in params.backbone.iter().enumerate() {
            let (fi, fo) = (layer.fan_in(), layer.fan_out());
            let mut spikes = Vec::with_capacity(fo);
            for o in 0..fo {
                let pairs = (0..fi).map(|i| (leaf[2 + 2 * l][o * fi + i], x[i])).collect();
                let mut drive = tape.push(Op::Dot {
                    pairs,
                    bias: Some(leaf[3 + 2 * l][o]),
                });
                if l == nl - 1 {
                    if let Some(i_node) = pending_intra[o] {
                        drive = tape.push(Op::Lin {
                            terms: vec![(drive, 1.0), (i_node, 1.0)],
                            offset: 0.0,
                        });
                    }
                }
                let c = match prev_c[l][o] {
                    Some(c0) => tape.push(Op::Lin {
                        terms: vec![(c0, alpha_c), (drive, 1.0)],
                        offset: 0.0,
                    }),
                    None => drive,
                };
                let v0 = prev_v[l][o].unwrap_or(v_reset_const);
                let h = tape.push(Op::Charge {
                    v: v0,
                    x: c,
                    alpha: neuron.alpha_v,
                    v_reset: neuron.v_reset,
                });
                let sp = tape.push(Op::Heaviside {
                    h,
                    v_th: neuron.v_th,
                    window: cfg.surrogate.w,
                });
                let v = tape.push(Op::ResetGate {
                    h,
                    s: sp,
                    mode: neuron.reset,
                    v_reset: neuron.v_reset,
                    v_th: neuron.v_th,
                });
                prev_c[l][o] = Some(c);
                prev_v[l][o] = Some(v);
                spikes.push(sp);
            }
            x = spikes;
        }
        // x now holds the output-layer spikes.
        if !params.intra.is_empty() && t + 1 < t_len {
            for j in 0..params.spec.m {
                for i in 0..p {
                    let pairs = (0..p)
                        .filter(|q| mask.keeps(i, *q))
                        .map(|q| (leaf[intra_base + 2 * j][i * p + q], x[j * p + q]))
                        .collect();
                    let bias = mask.bias.then(|| leaf[intra_base + 2 * j + 1][i]);
                    pending_intra[j * p + i] = Some(tape.push(Op::Dot { pairs, bias }));
                }
            }
        }
        for j in 0..params.spec.m {
            let pairs = (0..p).map(|k| (leaf[dec_base][j * p + k], x[j * p + k])).collect();
            let xn = tape.push(Op::Dot {
                pairs,
                bias: Some(leaf[dec_base + 1][j]),
            });
            li_x[j].push(xn);
            if cfg.decoder.stat != DecoderStat::Fr {
                let v0 = prev_li[j].unwrap_or(li_reset_const);
                let v = tape.push(Op::Charge {
                    v: v0,
                    x: xn,
                    alpha: cfg.decoder.alpha_v_li,
                    v_reset: cfg.decoder.v_reset_li,
                });
                prev_li[j] = Some(v);
                li_v[j].push(v);
            }
        }
    }
    for j in 0..params.spec.m {
        let o = match cfg.decoder.stat {
            DecoderStat::Last => *li_v[j].last().unwrap(),
            DecoderStat::MaxAbs => tape.push(Op::SelectMaxAbs(li_v[j].clone())),
            DecoderStat::Mean => tape.push(Op::Mean(li_v[j].clone())),
            DecoderStat::Fr => tape.push(Op::Mean(li_x[j].clone())),
        };
        let a = if cfg.clamp {
            tape.push(Op::Clamp {
                x: o,
                lo: params.spec.low[j],
                hi: params.spec.high[j],
            })
        } else {
            o
        };
        tape.outputs.push(a);
    }
    Ok(tape)
}

/// Mechanical reverse sweep over the tape.
pub fn oracle_backward(tape: &GraphTape, dl_da: &[f64]) -> ActorGrads {
    assert_eq!(dl_da.len(), tape.outputs.len(), "one upstream gradient per action");
    let mut adj = vec![0.0; tape.nodes.len()];
    for (o, g) in tape.outputs.iter().zip(dl_da) {
        adj[*o] += g;
    }
    let mut flat: Vec<Vec<f64>> = tape.block_shapes.iter().map(|s| vec![0.0; s.iter().product()]).collect();
    for k in (0..tape.nodes.len()).rev() {
        let g = adj[k];
        if g == 0.0 {
            continue;
        }
        if let Op::Param { block, index } = tape.nodes[k].op {
            flat[block][index] += g;
            continue;
        }
        for (src, d) in tape.edges(k) {
            adj[src] += g * d;
        }
    }
    let mut grads = tape.template.clone();
    grads.trains_encoder = true;
    for (dst, src) in grads.blocks_mut().into_iter().zip(flat) {
        dst.data_mut().copy_from_slice(&src);
    }
    grads.trains_encoder = tape.trains_encoder;
    if !tape.trains_encoder {
        grads.mu.fill(0.0);
        grads.sigma.fill(0.0);
    }
    grads
}

/// Tape-based gradients summed over a batch of states.
pub fn oracle_backward_batch(params: &ActorParams, states: &[f64], dl_da: &[f64]) -> Result<ActorGrads, ActorError> {
    let (n, m) = (params.spec.n, params.spec.m);
    let mut total = ActorGrads::zeros_like(params);
    for (s, g) in states.chunks_exact(n).zip(dl_da.chunks_exact(m)) {
        let tape = record_tape(params, s)?;
        total.add_assign(&oracle_backward(&tape, g));
    }
    Ok(total)
}

/// Central differences of `loss` over every entry of the named block.
pub fn finite_diff<P, F>(loss: F, params: &P, block: &str, eps: f64) -> Result<RealArray, GradError>
where
    P: ParamBlocks + Clone,
    F: Fn(&P) -> f64,
{
    if !(eps > 0.0) {
        return Err(GradError::BadStep);
    }
    let bi = params
        .blocks()
        .iter()
        .position(|(name, _)| name == block)
        .ok_or_else(|| GradError::UnknownBlock(block.to_string()))?;
    let shape = params.blocks()[bi].1.shape().to_vec();
    let len = params.blocks()[bi].1.len();
    let mut out = RealArray::zeros(&shape);
    let mut work = params.clone();
    for k in 0..len {
        let orig = work.blocks()[bi].1.data()[k];
        work.blocks_mut()[bi].data_mut()[k] = orig + eps;
        let up = loss(&work);
        work.blocks_mut()[bi].data_mut()[k] = orig - eps;
        let dn = loss(&work);
        work.blocks_mut()[bi].data_mut()[k] = orig;
        out.data_mut()[k] = (up - dn) / (2.0 * eps);
    }
    Ok(out)
}

/// Relative error with a magnitude floor of 1e-3, so entries that are both
/// near zero are compared absolutely.
pub fn rel_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-3)
}

/// Largest [`rel_error`] over all matching blocks.
pub fn max_rel_error<A: ParamBlocks, B: ParamBlocks>(a: &A, b: &B) -> f64 {
    let mut worst = 0.0f64;
    for ((_, x), (_, y)) in a.blocks().iter().zip(b.blocks()) {
        for (u, v) in x.data().iter().zip(y.data()) {
            worst = worst.max(rel_error(*u, *v));
        }
    }
    worst
}

/// True when no pre-reset voltage sits inside the surrogate window and no
/// output saturated the clamp, i.e. the forward map is locally smooth.
pub fn is_smooth_pass(params: &ActorParams, trace: &ForwardTrace) -> bool {
    let cfg = &params.cfg;
    let in_window = trace
        .layers
        .iter()
        .flat_map(|l| &l.h)
        .any(|h| (h - cfg.neuron.v_th).abs() < cfg.surrogate.w);
    let saturated = cfg.clamp
        && trace.decoded.iter().enumerate().any(|(k, o)| {
            let j = k % params.spec.m;
            *o < params.spec.low[j] || *o > params.spec.high[j]
        });
    !in_window && !saturated
}

/// Stimulation strengths for one state, exposed for gradient checks on the
/// encoder path alone.
pub fn stimulation(params: &ActorParams, s: &[f64]) -> Result<Vec<f64>, ActorError> {
    Ok(stimulate(s, &params.encoder)?)
}
