//! Firing-rate recording, synaptic/floating-point operation counts, energy
//! estimates and run summaries (best-evaluation statistics and APR).

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::actor::{ActorError, ActorParams, DenseActor};
use crate::coding::EncoderMode;
use crate::envs::{Env, EnvError};

/// Energy per synaptic operation, femtojoules.
pub const SOP_FJ: u64 = 77;
/// Energy per floating-point operation, femtojoules (12.5 pJ).
pub const FLOP_FJ: u64 = 12_500;

pub const GROUP_FC: &str = "GroupFC";
pub const INTRA_FC: &str = "IntraFC";

#[derive(Debug, thiserror::Error)]
pub enum EnergyError {
    #[error("no firing rate recorded for spiking layer {0}")]
    MissingRate(String),
    #[error("firing rate {fr} for layer {layer} is outside [0, 1]")]
    BadRate { layer: String, fr: f64 },
    #[error("baseline score for task {0} is zero")]
    ZeroBaseline(String),
    #[error("no tasks to average")]
    NoTasks,
    #[error("unknown task preset {0:?}")]
    UnknownTask(String),
    #[error("malformed firing-rate table: {0}")]
    Parse(String),
    #[error(transparent)]
    Actor(#[from] ActorError),
    #[error("environment failure while recording rates: {0}")]
    Env(#[from] EnvError),
}

/// Name of the `k`-th (0-based) backbone layer.
pub fn fc_name(k: usize) -> String {
    format!("FC{}", k + 1)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerRate {
    pub layer: String,
    pub fr: f64,
}

/// Input-side firing rate of every synaptic layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FiringReport {
    pub t_len: usize,
    pub episode_len: usize,
    pub layers: Vec<LayerRate>,
}

impl FiringReport {
    pub fn from_rates(t_len: usize, rates: &[(&str, f64)]) -> Self {
        Self {
            t_len,
            episode_len: 0,
            layers: rates
                .iter()
                .map(|(l, fr)| LayerRate {
                    layer: l.to_string(),
                    fr: *fr,
                })
                .collect(),
        }
    }

    pub fn rate(&self, layer: &str) -> Option<f64> {
        self.layers.iter().find(|r| r.layer == layer).map(|r| r.fr)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("layer,fr\n");
        for r in &self.layers {
            let _ = writeln!(out, "{},{}", r.layer, r.fr);
        }
        out
    }

    /// Reads a `layer,fr` table; `t_len` is supplied by the caller.
    pub fn from_csv(text: &str, t_len: usize) -> Result<Self, EnergyError> {
        let mut layers = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || (i == 0 && line.starts_with("layer")) {
                continue;
            }
            let (name, fr) = line
                .split_once(',')
                .ok_or_else(|| EnergyError::Parse(format!("line {}: expected `layer,fr`", i + 1)))?;
            let fr: f64 = fr
                .trim()
                .parse()
                .map_err(|e| EnergyError::Parse(format!("line {}: {e}", i + 1)))?;
            layers.push(LayerRate {
                layer: name.trim().to_string(),
                fr,
            });
        }
        Ok(Self {
            t_len,
            episode_len: 0,
            layers,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NetKind {
    /// Spiking actor whose decoder reads neuron voltages (plus optional intra connections).
    IlcSan,
    /// Spiking actor whose decoder reads real-valued firing rates.
    PopSan,
    Dense,
}

/// Layer dimensions needed for operation counting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Arch {
    pub kind: NetKind,
    pub n: usize,
    pub m: usize,
    pub p_in: usize,
    pub p_out: usize,
    pub hidden: Vec<usize>,
    pub intra: bool,
    /// Whether the first layer receives spikes (deterministic population encoder).
    pub spiking_input: bool,
}

impl Arch {
    pub fn ilc_san(n: usize, m: usize) -> Self {
        Self {
            kind: NetKind::IlcSan,
            n,
            m,
            p_in: 10,
            p_out: 10,
            hidden: vec![256, 256],
            intra: true,
            spiking_input: true,
        }
    }

    pub fn popsan(n: usize, m: usize) -> Self {
        Self {
            kind: NetKind::PopSan,
            intra: false,
            ..Self::ilc_san(n, m)
        }
    }

    pub fn dense(n: usize, m: usize) -> Self {
        Self {
            kind: NetKind::Dense,
            p_in: 1,
            p_out: 1,
            intra: false,
            spiking_input: false,
            ..Self::ilc_san(n, m)
        }
    }

    pub fn of_actor(p: &ActorParams) -> Self {
        Self {
            kind: NetKind::IlcSan,
            n: p.spec.n,
            m: p.spec.m,
            p_in: p.cfg.p_in,
            p_out: p.cfg.p_out,
            hidden: p.cfg.hidden.clone(),
            intra: p.cfg.intra,
            spiking_input: p.cfg.encoder == EncoderMode::PopDet,
        }
    }

    pub fn of_dense(d: &DenseActor) -> Self {
        Self {
            hidden: d.hidden(),
            ..Self::dense(d.spec.n, d.spec.m)
        }
    }

    fn backbone_dims(&self) -> Vec<usize> {
        let mut dims = vec![self.n * self.p_in];
        dims.extend(&self.hidden);
        dims.push(self.m * self.p_out);
        dims
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum OpKind {
    #[serde(rename = "SOP")]
    Sop,
    #[serde(rename = "FLOP")]
    Flop,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerOps {
    pub layer: String,
    pub kind: OpKind,
    /// `Dim_in·Dim_out` (summed over groups for the grouped layers).
    pub synapses: u64,
    pub count: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OpReport {
    pub layers: Vec<LayerOps>,
    pub total_sop: u64,
    pub total_flop: u64,
}

impl OpReport {
    fn from_layers(layers: Vec<LayerOps>) -> Self {
        let total = |k: OpKind| layers.iter().filter(|l| l.kind == k).map(|l| l.count).sum();
        Self {
            total_sop: total(OpKind::Sop),
            total_flop: total(OpKind::Flop),
            layers,
        }
    }

    pub fn count(&self, layer: &str) -> Option<u64> {
        self.layers.iter().find(|l| l.layer == layer).map(|l| l.count)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("layer,kind,synapses,count\n");
        for l in &self.layers {
            let kind = match l.kind {
                OpKind::Sop => "SOP",
                OpKind::Flop => "FLOP",
            };
            let _ = writeln!(out, "{},{kind},{},{}", l.layer, l.synapses, l.count);
        }
        let _ = writeln!(out, "total,SOP,,{}", self.total_sop);
        let _ = writeln!(out, "total,FLOP,,{}", self.total_flop);
        out
    }
}

fn scaled(t_len: usize, fr: f64, synapses: u64) -> u64 {
    (t_len as f64 * fr * synapses as f64).round() as u64
}

/// Operation counts per inference: spike-driven layers cost
/// `round(T·fr·Dim_in·Dim_out)` SOPs, dense layers `Dim_in·Dim_out` FLOPs.
pub fn count_ops(arch: &Arch, fr: &FiringReport, t_len: usize) -> Result<OpReport, EnergyError> {
    let rate = |layer: &str| -> Result<f64, EnergyError> {
        let fr = fr.rate(layer).ok_or_else(|| EnergyError::MissingRate(layer.to_string()))?;
        if !(0.0..=1.0).contains(&fr) {
            return Err(EnergyError::BadRate {
                layer: layer.to_string(),
                fr,
            });
        }
        Ok(fr)
    };
    let mut layers = Vec::new();
    if arch.kind == NetKind::Dense {
        let mut dims = vec![arch.n];
        dims.extend(&arch.hidden);
        dims.push(arch.m);
        for (k, w) in dims.windows(2).enumerate() {
            let synapses = (w[0] * w[1]) as u64;
            layers.push(LayerOps {
                layer: fc_name(k),
                kind: OpKind::Flop,
                synapses,
                count: synapses,
            });
        }
        return Ok(OpReport::from_layers(layers));
    }

    for (k, w) in arch.backbone_dims().windows(2).enumerate() {
        let name = fc_name(k);
        let synapses = (w[0] * w[1]) as u64;
        let (kind, count) = if k == 0 && !arch.spiking_input {
            // Real-valued input at every time-step.
            (OpKind::Flop, t_len as u64 * synapses)
        } else {
            (OpKind::Sop, scaled(t_len, rate(&name)?, synapses))
        };
        layers.push(LayerOps {
            layer: name,
            kind,
            synapses,
            count,
        });
    }
    let group = (arch.m * arch.p_out) as u64;
    let kind = match arch.kind {
        NetKind::PopSan => OpKind::Flop,
        _ => OpKind::Sop,
    };
    layers.push(LayerOps {
        layer: GROUP_FC.into(),
        kind,
        synapses: group,
        count: scaled(t_len, rate(GROUP_FC)?, group),
    });
    if arch.intra {
        let synapses = group * arch.p_out as u64;
        layers.push(LayerOps {
            layer: INTRA_FC.into(),
            kind: OpKind::Sop,
            synapses,
            count: scaled(t_len, rate(INTRA_FC)?, synapses),
        });
    }
    Ok(OpReport::from_layers(layers))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerEnergy {
    pub layer: String,
    pub femtojoules: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnergyReport {
    pub sop_fj: u64,
    pub flop_fj: u64,
    pub total_sop: u64,
    pub total_flop: u64,
    pub layers: Vec<LayerEnergy>,
    /// Exact total in femtojoules.
    pub femtojoules: u64,
    pub nanojoules: f64,
}

impl EnergyReport {
    /// Nanojoules to one decimal, as tabulated.
    pub fn display_nj(&self) -> String {
        format!("{:.1}", self.nanojoules)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("layer,femtojoules\n");
        for l in &self.layers {
            let _ = writeln!(out, "{},{}", l.layer, l.femtojoules);
        }
        let _ = writeln!(out, "total,{}", self.femtojoules);
        let _ = writeln!(out, "total_nJ,{}", self.display_nj());
        out
    }
}

pub fn estimate_energy(ops: &OpReport) -> EnergyReport {
    let per = |l: &LayerOps| {
        l.count
            * match l.kind {
                OpKind::Sop => SOP_FJ,
                OpKind::Flop => FLOP_FJ,
            }
    };
    let layers: Vec<LayerEnergy> = ops
        .layers
        .iter()
        .map(|l| LayerEnergy {
            layer: l.layer.clone(),
            femtojoules: per(l),
        })
        .collect();
    let femtojoules = SOP_FJ * ops.total_sop + FLOP_FJ * ops.total_flop;
    EnergyReport {
        sop_fj: SOP_FJ,
        flop_fj: FLOP_FJ,
        total_sop: ops.total_sop,
        total_flop: ops.total_flop,
        layers,
        femtojoules,
        nanojoules: femtojoules as f64 / 1e6,
    }
}

/// Runs one deterministic episode and measures input-side firing rates.
///
/// The intra-layer rate only counts output spikes at steps `1..T−1`, the
/// ones that feed a later step.
pub fn record_firing_rates(actor: &ActorParams, env: &mut dyn Env, seed: u64) -> Result<FiringReport, EnergyError> {
    let t_len = actor.cfg.t_len;
    let layers_n = actor.backbone.len();
    // (spike sum, counted width·steps per env step)
    let mut sums = vec![0.0; layers_n + 2];
    let mut denom = vec![0usize; layers_n + 2];
    let spiking_input = actor.cfg.encoder == EncoderMode::PopDet;
    let out_w = actor.output_width();

    let cap = env.episode_cap();
    let mut s = env.reset(seed)?;
    let mut steps = 0usize;
    while steps < cap {
        let tr = actor.forward_batch(&s, 1)?;
        for l in 0..layers_n {
            let (buf, width) = if l == 0 {
                (&tr.input, actor.backbone[0].fan_in())
            } else {
                (&tr.layers[l - 1].spikes, actor.backbone[l].fan_in())
            };
            sums[l] += buf.iter().sum::<f64>();
            denom[l] += width * t_len;
        }
        let out = tr.output_spikes();
        sums[layers_n] += out.iter().sum::<f64>();
        denom[layers_n] += out_w * t_len;
        sums[layers_n + 1] += out[..out_w * t_len.saturating_sub(1)].iter().sum::<f64>();
        denom[layers_n + 1] += out_w * t_len.saturating_sub(1);

        let st = env.step(&tr.actions)?;
        steps += 1;
        s = st.obs;
        if st.done {
            break;
        }
    }

    let fr = |k: usize| if denom[k] == 0 { 0.0 } else { sums[k] / denom[k] as f64 };
    let mut layers = Vec::new();
    for l in 0..layers_n {
        if l == 0 && !spiking_input {
            continue;
        }
        layers.push(LayerRate {
            layer: fc_name(l),
            fr: fr(l),
        });
    }
    layers.push(LayerRate {
        layer: GROUP_FC.into(),
        fr: fr(layers_n),
    });
    if actor.cfg.intra {
        layers.push(LayerRate {
            layer: INTRA_FC.into(),
            fr: fr(layers_n + 1),
        });
    }
    Ok(FiringReport {
        t_len,
        episode_len: steps,
        layers,
    })
}

/// Observation and action sizes of a benchmark task.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct TaskPreset {
    pub name: &'static str,
    pub n: usize,
    pub m: usize,
}

pub const TASK_PRESETS: [TaskPreset; 8] = [
    TaskPreset { name: "Ant", n: 111, m: 8 },
    TaskPreset { name: "HalfCheetah", n: 17, m: 6 },
    TaskPreset { name: "Hopper", n: 11, m: 3 },
    TaskPreset { name: "Walker2d", n: 17, m: 6 },
    TaskPreset { name: "Humanoid", n: 376, m: 17 },
    TaskPreset { name: "HumanoidStandup", n: 376, m: 17 },
    TaskPreset { name: "InvertedDoublePendulum", n: 11, m: 1 },
    TaskPreset { name: "BipedalWalker", n: 24, m: 4 },
];

/// Case-insensitive preset lookup; a `-v3`-style suffix is ignored.
pub fn task_preset(name: &str) -> Result<TaskPreset, EnergyError> {
    let base = name.split('-').next().unwrap_or(name);
    TASK_PRESETS
        .iter()
        .find(|p| p.name.eq_ignore_ascii_case(base))
        .copied()
        .ok_or_else(|| EnergyError::UnknownTask(name.to_string()))
}

/// Average performance ratio in percent: mean over tasks of `score / baseline`.
pub fn apr(results: &[(String, f64, f64)]) -> Result<f64, EnergyError> {
    if results.is_empty() {
        return Err(EnergyError::NoTasks);
    }
    let mut sum = 0.0;
    for (task, an, dan) in results {
        if *dan == 0.0 {
            return Err(EnergyError::ZeroBaseline(task.clone()));
        }
        sum += an / dan;
    }
    Ok(100.0 * sum / results.len() as f64)
}

/// Mean and population standard deviation.
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// `mean±std` rounded to integers.
pub fn format_cell(mean: f64, std: f64) -> String {
    format!("{mean:.0}±{std:.0}")
}
