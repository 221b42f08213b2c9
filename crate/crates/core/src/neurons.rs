//! Discrete-time neuron dynamics.
//!
//! Spiking layers follow charge → fire → reset:
//!
//! ```text
//! H_t = α_V (V_{t-1} − V_reset) + V_reset + X_t
//! S_t = Θ(H_t − V_th)            Θ(x) = 1 for x ≥ 0
//! V_t = H_t (1 − S_t) + V_reset S_t      (hard reset)
//! V_t = H_t − V_th S_t                   (soft reset)
//! ```
//!
//! `α_V = 1` gives the IF neuron. The current-based variant (CLIF) first
//! integrates its synaptic drive into a decaying current `C_t = α_C C_{t-1} + drive`
//! and uses `X_t = C_t`. Non-spiking neurons (LI, or Integrate when `α_V = 1`)
//! run the charge equation only and never fire or reset.
//!
//! Spikes are stored as `f64` zeros and ones so they feed matrix products directly.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ResetMode {
    Hard,
    Soft,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SpikingConfig {
    pub v_th: f64,
    pub v_reset: f64,
    pub alpha_v: f64,
    pub reset: ResetMode,
    /// Current decay; present only for current-based neurons.
    pub alpha_c: Option<f64>,
}

impl Default for SpikingConfig {
    fn default() -> Self {
        Self::clif()
    }
}

impl SpikingConfig {
    /// CLIF defaults: `V_reset = 0`, `V_th = 0.5`, `α_C = 0.5`, `α_V = 0.75`, hard reset.
    pub fn clif() -> Self {
        Self {
            v_th: 0.5,
            v_reset: 0.0,
            alpha_v: 0.75,
            reset: ResetMode::Hard,
            alpha_c: Some(0.5),
        }
    }

    /// Soft-reset IF neuron used by the deterministic population encoder.
    pub fn soft_if(v_th: f64) -> Self {
        Self {
            v_th,
            v_reset: 0.0,
            alpha_v: 1.0,
            reset: ResetMode::Soft,
            alpha_c: None,
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        let unit = |x: f64| x > 0.0 && x <= 1.0;
        if !unit(self.alpha_v) {
            return Err(format!("alpha_v must lie in (0, 1], got {}", self.alpha_v));
        }
        if let Some(c) = self.alpha_c {
            if !unit(c) {
                return Err(format!("alpha_c must lie in (0, 1], got {c}"));
            }
        }
        if self.reset == ResetMode::Hard && self.v_th <= self.v_reset {
            return Err(format!(
                "hard reset needs v_th > v_reset, got {} <= {}",
                self.v_th, self.v_reset
            ));
        }
        Ok(())
    }
}

/// Rectangular surrogate window for `dS/dH`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SurrogateConfig {
    pub w: f64,
}

impl Default for SurrogateConfig {
    fn default() -> Self {
        Self { w: 0.5 }
    }
}

/// Voltage, optional current and last spikes of one neuron population.
///
/// The arrays are flat, so one state can also hold a whole batch of layers
/// laid out row by row.
#[derive(Debug, Clone, PartialEq)]
pub struct NeuronLayerState {
    pub v: Vec<f64>,
    pub c: Option<Vec<f64>>,
    pub last_spikes: Vec<f64>,
}

impl NeuronLayerState {
    /// Fresh state: `V_0 = V_reset`, `C_0 = 0`, `S_0 = 0`.
    pub fn new(n: usize, cfg: &SpikingConfig) -> Self {
        Self {
            v: vec![cfg.v_reset; n],
            c: cfg.alpha_c.map(|_| vec![0.0; n]),
            last_spikes: vec![0.0; n],
        }
    }

    /// Fresh non-spiking state at `v_reset`.
    pub fn non_spiking(n: usize, v_reset: f64) -> Self {
        Self {
            v: vec![v_reset; n],
            c: None,
            last_spikes: vec![0.0; n],
        }
    }

    pub fn len(&self) -> usize {
        self.v.len()
    }

    pub fn is_empty(&self) -> bool {
        self.v.is_empty()
    }
}

/// `h = α_V (v − v_reset) + v_reset + x`.
pub fn charge(state: &NeuronLayerState, x: &[f64], cfg: &SpikingConfig) -> Vec<f64> {
    assert_eq!(state.v.len(), x.len(), "charge: shape mismatch");
    state
        .v
        .iter()
        .zip(x)
        .map(|(v, xi)| cfg.alpha_v * (v - cfg.v_reset) + cfg.v_reset + xi)
        .collect()
}

/// Heaviside with `Θ(0) = 1`.
pub fn fire(h: &[f64], v_th: f64) -> Vec<f64> {
    h.iter().map(|&x| if x >= v_th { 1.0 } else { 0.0 }).collect()
}

pub fn reset(h: &[f64], s: &[f64], cfg: &SpikingConfig) -> Vec<f64> {
    assert_eq!(h.len(), s.len(), "reset: shape mismatch");
    match cfg.reset {
        ResetMode::Hard => h
            .iter()
            .zip(s)
            .map(|(h, s)| h * (1.0 - s) + cfg.v_reset * s)
            .collect(),
        ResetMode::Soft => h.iter().zip(s).map(|(h, s)| h - cfg.v_th * s).collect(),
    }
}

/// One generic spiking step (no current stage). Returns `(spikes, h)`.
pub fn step_spiking(state: &mut NeuronLayerState, x: &[f64], cfg: &SpikingConfig) -> (Vec<f64>, Vec<f64>) {
    let h = charge(state, x, cfg);
    let s = fire(&h, cfg.v_th);
    state.v = reset(&h, &s, cfg);
    state.last_spikes.clone_from(&s);
    (s, h)
}

/// Result of one CLIF step, kept for recording.
#[derive(Debug, Clone, PartialEq)]
pub struct ClifStep {
    pub spikes: Vec<f64>,
    pub h: Vec<f64>,
}

/// Current-based LIF step: `c' = α_C c + drive`, then charge with `x = c'`,
/// fire, and hard (or configured) reset.
pub fn step_clif(state: &mut NeuronLayerState, drive: &[f64], cfg: &SpikingConfig) -> ClifStep {
    let alpha_c = cfg.alpha_c.expect("step_clif requires alpha_c");
    let c = state.c.get_or_insert_with(|| vec![0.0; drive.len()]);
    assert_eq!(c.len(), drive.len(), "step_clif: shape mismatch");
    for (ci, d) in c.iter_mut().zip(drive) {
        *ci = alpha_c * *ci + d;
    }
    let n = drive.len();
    let mut h = Vec::with_capacity(n);
    let mut spikes = Vec::with_capacity(n);
    let (av, vr, vth) = (cfg.alpha_v, cfg.v_reset, cfg.v_th);
    for i in 0..n {
        let hi = av * (state.v[i] - vr) + vr + c[i];
        let si = if hi >= vth { 1.0 } else { 0.0 };
        state.v[i] = match cfg.reset {
            ResetMode::Hard => hi * (1.0 - si) + vr * si,
            ResetMode::Soft => hi - vth * si,
        };
        h.push(hi);
        spikes.push(si);
    }
    state.last_spikes.clone_from(&spikes);
    ClifStep { spikes, h }
}

/// Leaky integrate (non-spiking) step; returns the new voltage.
pub fn step_li(state: &mut NeuronLayerState, x: &[f64], alpha_v: f64, v_reset: f64) -> Vec<f64> {
    assert_eq!(state.v.len(), x.len(), "step_li: shape mismatch");
    for (v, xi) in state.v.iter_mut().zip(x) {
        *v = alpha_v * (*v - v_reset) + v_reset + xi;
    }
    state.v.clone()
}

/// Rectangular surrogate derivative: 1 inside the open window `|h − v_th| < w`.
pub fn surrogate_grad(h: f64, v_th: f64, sur: &SurrogateConfig) -> f64 {
    if (h - v_th).abs() < sur.w {
        1.0
    } else {
        0.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn lif(alpha_v: f64) -> SpikingConfig {
        SpikingConfig {
            v_th: 0.5,
            v_reset: 0.0,
            alpha_v,
            reset: ResetMode::Hard,
            alpha_c: None,
        }
    }

    fn state_with(v: f64) -> NeuronLayerState {
        NeuronLayerState {
            v: vec![v],
            c: None,
            last_spikes: vec![0.0],
        }
    }

    #[test]
    fn charge_examples() {
        assert_eq!(charge(&state_with(0.0), &[0.0], &lif(0.75)), vec![0.0]);
        assert_eq!(charge(&state_with(0.3), &[0.3], &lif(1.0)), vec![0.6]);
        assert_eq!(charge(&state_with(1.0), &[0.0], &lif(0.75)), vec![0.75]);
    }

    #[test]
    fn fire_examples() {
        assert_eq!(fire(&[0.5], 0.5), vec![1.0]);
        assert_eq!(fire(&[0.5 - 1e-9], 0.5), vec![0.0]);
        assert_eq!(fire(&[0.6, 0.3], 0.5), vec![1.0, 0.0]);
    }

    #[test]
    fn reset_examples() {
        assert_eq!(reset(&[0.6], &[1.0], &lif(1.0)), vec![0.0]);
        let soft = SpikingConfig {
            v_th: 1.0,
            ..SpikingConfig::soft_if(1.0)
        };
        let v = reset(&[1.2], &[1.0], &soft);
        assert!((v[0] - 0.2).abs() < 1e-15);
        assert_eq!(reset(&[0.37], &[0.0], &soft), vec![0.37]);
        assert_eq!(reset(&[0.37], &[0.0], &lif(1.0)), vec![0.37]);
    }

    #[test]
    fn clif_trace() {
        let cfg = SpikingConfig::clif();
        let mut st = NeuronLayerState::new(1, &cfg);
        let mut spikes = Vec::new();
        let mut currents = Vec::new();
        for d in [1.0, 0.0, 0.0] {
            let out = step_clif(&mut st, &[d], &cfg);
            spikes.push(out.spikes[0]);
            currents.push(st.c.as_ref().unwrap()[0]);
        }
        assert_eq!(spikes, vec![1.0, 1.0, 0.0]);
        assert_eq!(currents, vec![1.0, 0.5, 0.25]);
        assert_eq!(st.v, vec![0.25]);
    }

    #[test]
    fn clif_subthreshold_step() {
        let cfg = SpikingConfig::clif();
        let mut st = NeuronLayerState::new(1, &cfg);
        let out = step_clif(&mut st, &[0.4], &cfg);
        assert_eq!(out.spikes, vec![0.0]);
        assert_eq!(st.v, vec![0.4]);
        assert_eq!(st.c.as_ref().unwrap(), &vec![0.4]);
    }

    #[test]
    fn clif_quiescent() {
        let cfg = SpikingConfig::clif();
        let mut st = NeuronLayerState::new(3, &cfg);
        for _ in 0..20 {
            let out = step_clif(&mut st, &[0.0; 3], &cfg);
            assert!(out.spikes.iter().all(|s| *s == 0.0));
        }
        assert_eq!(st.v, vec![0.0; 3]);
    }

    #[test]
    fn li_traces() {
        let mut st = NeuronLayerState::non_spiking(1, 0.0);
        let trace: Vec<f64> = [0.2, 0.3, -0.1]
            .iter()
            .map(|x| step_li(&mut st, &[*x], 1.0, 0.0)[0])
            .collect();
        assert_eq!(trace, vec![0.2, 0.5, 0.4]);

        let mut st = NeuronLayerState::non_spiking(1, 0.0);
        let trace: Vec<f64> = [1.0, 1.0].iter().map(|x| step_li(&mut st, &[*x], 0.5, 0.0)[0]).collect();
        assert_eq!(trace, vec![1.0, 1.5]);

        let mut st = NeuronLayerState::non_spiking(2, -0.2);
        for _ in 0..10 {
            step_li(&mut st, &[0.0, 0.0], 0.6, -0.2);
        }
        assert_eq!(st.v, vec![-0.2, -0.2]);
    }

    #[test]
    fn surrogate_examples() {
        let sur = SurrogateConfig { w: 0.5 };
        assert_eq!(surrogate_grad(0.5, 0.5, &sur), 1.0);
        assert_eq!(surrogate_grad(1.0, 0.5, &sur), 0.0);
        assert_eq!(surrogate_grad(1.2, 0.5, &sur), 0.0);
        assert_eq!(surrogate_grad(0.1, 0.5, &sur), 1.0);
    }

    #[test]
    fn config_validation() {
        assert!(SpikingConfig::clif().validate().is_ok());
        let mut bad = SpikingConfig::clif();
        bad.alpha_v = 0.0;
        assert!(bad.validate().is_err());
        let mut bad = SpikingConfig::clif();
        bad.v_th = -1.0;
        assert!(bad.validate().is_err());
    }

    proptest! {
        #[test]
        fn clif_spikes_binary_and_hard_reset_holds(
            drives in prop::collection::vec(prop::collection::vec(-2.0f64..2.0, 4), 1..12)
        ) {
            let cfg = SpikingConfig::clif();
            let mut st = NeuronLayerState::new(4, &cfg);
            for d in drives {
                let out = step_clif(&mut st, &d, &cfg);
                for i in 0..4 {
                    let s = out.spikes[i];
                    prop_assert!(s == 0.0 || s == 1.0);
                    if s == 1.0 {
                        prop_assert_eq!(st.v[i], cfg.v_reset);
                    } else {
                        prop_assert_eq!(st.v[i], out.h[i]);
                        prop_assert!(out.h[i] < cfg.v_th);
                    }
                }
            }
        }

        #[test]
        fn if_spike_count_monotone_in_input(a in 0.0f64..2.0, b in 0.0f64..2.0, t in 1usize..30) {
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            let cfg = SpikingConfig { v_th: 1.0, v_reset: 0.0, alpha_v: 1.0, reset: ResetMode::Hard, alpha_c: None };
            let count = |x: f64| {
                let mut st = NeuronLayerState::new(1, &cfg);
                (0..t).map(|_| step_spiking(&mut st, &[x], &cfg).0[0]).sum::<f64>()
            };
            prop_assert!(count(lo) <= count(hi));
        }

        #[test]
        fn clif_zero_drive_decays_geometrically(c0 in -1.0f64..1.0, steps in 1usize..20) {
            let cfg = SpikingConfig { v_th: 10.0, v_reset: 0.0, alpha_v: 0.5, reset: ResetMode::Hard, alpha_c: Some(0.5) };
            let mut st = NeuronLayerState::new(1, &cfg);
            st.c = Some(vec![c0]);
            for t in 1..=steps {
                step_clif(&mut st, &[0.0], &cfg);
                prop_assert_eq!(st.c.as_ref().unwrap()[0], 0.5f64.powi(t as i32) * c0);
            }
        }

        #[test]
        fn li_never_spikes(xs in prop::collection::vec(-5.0f64..5.0, 1..20), alpha in 0.1f64..1.0) {
            let mut st = NeuronLayerState::non_spiking(1, 0.0);
            let mut v = 0.0;
            for x in xs {
                let out = step_li(&mut st, &[x], alpha, 0.0);
                v = alpha * v + x;
                prop_assert_eq!(out[0], v);
                prop_assert_eq!(st.last_spikes[0], 0.0);
            }
        }
    }
}
