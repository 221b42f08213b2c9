//! Population encoders (state → input spike trains) and decoders
//! (output spikes → continuous action).

use serde::{Deserialize, Serialize};

use crate::math::RealArray;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum CodingError {
    #[error("encoder sigma must be positive, found {value} at ({dim}, {neuron})")]
    NonPositiveSigma { dim: usize, neuron: usize, value: f64 },
    #[error("state has {got} dimensions, encoder expects {expected}")]
    StateDim { expected: usize, got: usize },
    #[error("empty voltage trace")]
    EmptyTrace,
    #[error("decoder statistic {0:?} does not read a voltage trace")]
    NotVoltageStat(DecoderStat),
    #[error("encoder mode {0:?} has no stimulation stage")]
    NoStimulation(EncoderMode),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EncoderMode {
    /// Gaussian receptive fields driving soft-reset IF neurons (binary spikes).
    PopDet,
    /// Gaussian stimulation strengths fed directly at every step.
    Pop,
    /// Raw state fed directly at every step.
    Layer,
}

/// Gaussian receptive-field population encoder.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderParams {
    /// `[N, P_in]` receptive-field centres.
    pub mu: RealArray,
    /// `[N, P_in]` receptive-field widths, strictly positive.
    pub sigma: RealArray,
    pub p_in: usize,
    pub enc_v_th: f64,
    pub mode: EncoderMode,
}

impl EncoderParams {
    /// Means evenly spaced over `[−3, 3]` per state dimension, widths equal to
    /// the spacing (1 when `p_in = 1`, with the single mean at 0).
    pub fn new(n: usize, p_in: usize, mode: EncoderMode) -> Self {
        assert!(n >= 1 && p_in >= 1, "encoder needs n, p_in >= 1");
        let (means, width): (Vec<f64>, f64) = if p_in == 1 {
            (vec![0.0], 1.0)
        } else {
            let step = 6.0 / (p_in - 1) as f64;
            ((0..p_in).map(|j| -3.0 + step * j as f64).collect(), step)
        };
        let mu = (0..n).flat_map(|_| means.iter().copied()).collect();
        Self {
            mu: RealArray::matrix(n, p_in, mu),
            sigma: RealArray::matrix(n, p_in, vec![width; n * p_in]),
            p_in,
            enc_v_th: 1.0,
            mode,
        }
    }

    pub fn state_dim(&self) -> usize {
        self.mu.rows()
    }

    /// Width of the input raster row fed to the first backbone layer.
    pub fn output_width(&self) -> usize {
        match self.mode {
            EncoderMode::Layer => self.state_dim(),
            _ => self.state_dim() * self.p_in,
        }
    }

    pub fn validate(&self) -> Result<(), CodingError> {
        if self.mode == EncoderMode::Layer {
            return Ok(());
        }
        for (k, s) in self.sigma.data().iter().enumerate() {
            if !(*s > 0.0) {
                return Err(CodingError::NonPositiveSigma {
                    dim: k / self.p_in,
                    neuron: k % self.p_in,
                    value: *s,
                });
            }
        }
        Ok(())
    }
}

/// Gaussian stimulation strengths `a_e[i,j] = exp(−½((s_i − μ_ij)/σ_ij)²)`,
/// flattened row-major as `[N·P_in]`.
pub fn stimulate(s: &[f64], enc: &EncoderParams) -> Result<Vec<f64>, CodingError> {
    if enc.mode == EncoderMode::Layer {
        return Err(CodingError::NoStimulation(enc.mode));
    }
    if s.len() != enc.state_dim() {
        return Err(CodingError::StateDim {
            expected: enc.state_dim(),
            got: s.len(),
        });
    }
    enc.validate()?;
    let p = enc.p_in;
    let mut out = Vec::with_capacity(s.len() * p);
    for (i, si) in s.iter().enumerate() {
        for j in 0..p {
            let z = (si - enc.mu.get(i, j)) / enc.sigma.get(i, j);
            out.push((-0.5 * z * z).exp());
        }
    }
    Ok(out)
}

/// Binary raster of soft-reset IF neurons under constant drive, one row per
/// time step. Elementwise over `drive`, so any flat batch layout works.
///
/// With constant drive the pre-reset voltage at step `t` is `t·a − k·v_th`
/// (`k` = spikes so far); evaluating that directly avoids the rounding drift
/// of repeated add/subtract (0.6 summed five times falls just short of 1).
pub fn pop_det_raster(drive: &[f64], enc_v_th: f64, t_len: usize) -> Vec<Vec<f64>> {
    let mut count = vec![0.0; drive.len()];
    (1..=t_len)
        .map(|t| {
            count
                .iter_mut()
                .zip(drive)
                .map(|(k, a)| {
                    let h = t as f64 * a - *k * enc_v_th;
                    let s = if h >= enc_v_th { 1.0 } else { 0.0 };
                    *k += s;
                    s
                })
                .collect()
        })
        .collect()
}

/// Encoder output: `[D, T]` array, one column per time step.
#[derive(Debug, Clone, PartialEq)]
pub struct SpikeTrain {
    pub spikes: RealArray,
    pub t_len: usize,
}

impl SpikeTrain {
    fn from_rows(rows: Vec<Vec<f64>>) -> Self {
        let t_len = rows.len();
        let d = rows.first().map_or(0, Vec::len);
        let mut data = vec![0.0; d * t_len];
        for (t, row) in rows.iter().enumerate() {
            for (k, x) in row.iter().enumerate() {
                data[k * t_len + t] = *x;
            }
        }
        Self {
            spikes: RealArray::matrix(d, t_len, data),
            t_len,
        }
    }

    /// Input row at step `t` (0-based).
    pub fn step(&self, t: usize) -> Vec<f64> {
        (0..self.spikes.rows()).map(|k| self.spikes.get(k, t)).collect()
    }

    pub fn width(&self) -> usize {
        self.spikes.rows()
    }
}

/// Encodes one state into a `T`-step input train.
pub fn encode(s: &[f64], enc: &EncoderParams, t_len: usize) -> Result<SpikeTrain, CodingError> {
    assert!(t_len >= 1, "encode needs t_len >= 1");
    let rows = match enc.mode {
        EncoderMode::PopDet => pop_det_raster(&stimulate(s, enc)?, enc.enc_v_th, t_len),
        EncoderMode::Pop => vec![stimulate(s, enc)?; t_len],
        EncoderMode::Layer => {
            if s.len() != enc.state_dim() {
                return Err(CodingError::StateDim {
                    expected: enc.state_dim(),
                    got: s.len(),
                });
            }
            vec![s.to_vec(); t_len]
        }
    };
    Ok(SpikeTrain::from_rows(rows))
}

/// Pass-through gradient: `dS_t/dA_E = 1` at every step, summed over time.
pub fn encoder_grad_passthrough(upstream: &[Vec<f64>]) -> Vec<f64> {
    let width = upstream.first().map_or(0, Vec::len);
    let mut g = vec![0.0; width];
    for row in upstream {
        for (gi, u) in g.iter_mut().zip(row) {
            *gi += u;
        }
    }
    g
}

/// Chains `d loss / d a_e` through the Gaussian stimulation into `(dμ, dσ)`.
pub fn stimulation_backward(
    s: &[f64],
    enc: &EncoderParams,
    a_e: &[f64],
    grad_a: &[f64],
) -> (RealArray, RealArray) {
    let (n, p) = (enc.state_dim(), enc.p_in);
    let mut g_mu = RealArray::zeros(&[n, p]);
    let mut g_sigma = RealArray::zeros(&[n, p]);
    accumulate_stimulation_grads(s, enc, a_e, grad_a, &mut g_mu, &mut g_sigma);
    (g_mu, g_sigma)
}

pub(crate) fn accumulate_stimulation_grads(
    s: &[f64],
    enc: &EncoderParams,
    a_e: &[f64],
    grad_a: &[f64],
    g_mu: &mut RealArray,
    g_sigma: &mut RealArray,
) {
    let p = enc.p_in;
    for (i, si) in s.iter().enumerate() {
        for j in 0..p {
            let k = i * p + j;
            let g = grad_a[k];
            if g == 0.0 {
                continue;
            }
            let sigma = enc.sigma.get(i, j);
            let diff = si - enc.mu.get(i, j);
            let a = a_e[k];
            g_mu.data_mut()[k] += g * a * diff / (sigma * sigma);
            g_sigma.data_mut()[k] += g * a * diff * diff / (sigma * sigma * sigma);
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecoderStat {
    Last,
    MaxAbs,
    Mean,
    /// Firing-rate readout; bypasses the LI neuron.
    Fr,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DecoderConfig {
    pub stat: DecoderStat,
    pub alpha_v_li: f64,
    pub v_reset_li: f64,
}

impl Default for DecoderConfig {
    fn default() -> Self {
        Self {
            stat: DecoderStat::Last,
            alpha_v_li: 1.0,
            v_reset_li: 0.0,
        }
    }
}

/// Index of the earliest entry with maximal absolute value.
pub fn argmax_abs(v: &[f64]) -> usize {
    let mut best = 0;
    for (t, x) in v.iter().enumerate().skip(1) {
        if x.abs() > v[best].abs() {
            best = t;
        }
    }
    best
}

/// Reads a statistic off an LI voltage trace `V_1..V_T`.
pub fn decode_voltage(v_trace: &[f64], cfg: &DecoderConfig) -> Result<f64, CodingError> {
    if v_trace.is_empty() {
        return Err(CodingError::EmptyTrace);
    }
    match cfg.stat {
        DecoderStat::Last => Ok(*v_trace.last().unwrap()),
        DecoderStat::MaxAbs => Ok(v_trace[argmax_abs(v_trace)]),
        DecoderStat::Mean => Ok(v_trace.iter().sum::<f64>() / v_trace.len() as f64),
        DecoderStat::Fr => Err(CodingError::NotVoltageStat(cfg.stat)),
    }
}

/// `d stat / d V_t` for each step of the trace.
pub fn decode_voltage_grad(v_trace: &[f64], stat: DecoderStat) -> Vec<f64> {
    let t_len = v_trace.len();
    let mut g = vec![0.0; t_len];
    match stat {
        DecoderStat::Last => g[t_len - 1] = 1.0,
        DecoderStat::MaxAbs => g[argmax_abs(v_trace)] = 1.0,
        DecoderStat::Mean => g.iter_mut().for_each(|x| *x = 1.0 / t_len as f64),
        DecoderStat::Fr => {}
    }
    g
}

/// Firing-rate readout `Σ_k w_k · (count_k / T) + b` over a `[P_out, T]` raster.
pub fn decode_fr(raster: &RealArray, w_d: &[f64], b_d: f64) -> f64 {
    let t_len = raster.cols() as f64;
    (0..raster.rows())
        .map(|k| w_d[k] * raster.row(k).iter().sum::<f64>() / t_len)
        .sum::<f64>()
        + b_d
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn single(mu: f64, sigma: f64) -> EncoderParams {
        EncoderParams {
            mu: RealArray::matrix(1, 1, vec![mu]),
            sigma: RealArray::matrix(1, 1, vec![sigma]),
            p_in: 1,
            enc_v_th: 1.0,
            mode: EncoderMode::PopDet,
        }
    }

    #[test]
    fn stimulate_examples() {
        assert_eq!(stimulate(&[0.3], &single(0.3, 0.7)).unwrap(), vec![1.0]);
        let a = stimulate(&[1.2], &single(0.5, 0.7)).unwrap()[0];
        assert!((a - (-0.5f64).exp()).abs() < 1e-12);
        assert!((a - 0.60653).abs() < 1e-5);
        let a = stimulate(&[1.9], &single(0.5, 0.7)).unwrap()[0];
        assert!((a - 0.13534).abs() < 1e-5);
    }

    #[test]
    fn stimulate_rejects_bad_sigma() {
        assert!(matches!(
            stimulate(&[0.0], &single(0.0, 0.0)),
            Err(CodingError::NonPositiveSigma { .. })
        ));
        assert!(matches!(
            stimulate(&[0.0], &single(0.0, -1.0)),
            Err(CodingError::NonPositiveSigma { .. })
        ));
    }

    #[test]
    fn default_layout() {
        let enc = EncoderParams::new(2, 10, EncoderMode::PopDet);
        assert_eq!(enc.mu.row(0)[0], -3.0);
        assert!((enc.mu.row(1)[9] - 3.0).abs() < 1e-12);
        assert!((enc.sigma.get(0, 0) - 6.0 / 9.0).abs() < 1e-15);
        assert_eq!(enc.output_width(), 20);
    }

    #[test]
    fn pop_det_examples() {
        assert_eq!(pop_det_raster(&[0.6], 1.0, 5).concat(), vec![0.0, 1.0, 0.0, 1.0, 1.0]);
        assert_eq!(pop_det_raster(&[0.0], 1.0, 5).concat(), vec![0.0; 5]);
        assert_eq!(pop_det_raster(&[1.0], 1.0, 5).concat(), vec![1.0; 5]);
    }

    #[test]
    fn encode_modes() {
        let mut enc = single(0.0, 1.0);
        let s = [0.0];
        assert_eq!(encode(&s, &enc, 3).unwrap().step(1), vec![1.0]);
        enc.mode = EncoderMode::Pop;
        let st = encode(&[1.0], &enc, 4).unwrap();
        assert_eq!(st.spikes.shape(), &[1, 4]);
        assert!((st.step(3)[0] - (-0.5f64).exp()).abs() < 1e-15);
        enc.mode = EncoderMode::Layer;
        assert_eq!(encode(&[0.25], &enc, 2).unwrap().step(0), vec![0.25]);
    }

    #[test]
    fn passthrough_sums_over_time() {
        assert_eq!(encoder_grad_passthrough(&vec![vec![0.0; 3]; 5]), vec![0.0; 3]);
        assert_eq!(encoder_grad_passthrough(&vec![vec![1.0; 3]; 5]), vec![5.0; 3]);
        let enc = EncoderParams::new(2, 3, EncoderMode::PopDet);
        let s = [0.4, -1.1];
        let a = stimulate(&s, &enc).unwrap();
        let (gm, gs) = stimulation_backward(&s, &enc, &a, &[0.0; 6]);
        assert_eq!(gm.max_abs(), 0.0);
        assert_eq!(gs.max_abs(), 0.0);
    }

    #[test]
    fn stimulation_grads_match_finite_differences() {
        let enc = EncoderParams::new(2, 4, EncoderMode::PopDet);
        let s = [0.37, -1.4];
        let a = stimulate(&s, &enc).unwrap();
        let weights: Vec<f64> = (0..8).map(|k| 0.5 + k as f64 * 0.25).collect();
        let (gm, gs) = stimulation_backward(&s, &enc, &a, &weights);
        let f = |e: &EncoderParams| -> f64 {
            stimulate(&s, e).unwrap().iter().zip(&weights).map(|(x, w)| x * w).sum()
        };
        let eps = 1e-6;
        for k in 0..8 {
            let mut e = enc.clone();
            e.mu.data_mut()[k] += eps;
            let up = f(&e);
            e.mu.data_mut()[k] -= 2.0 * eps;
            let fd = (up - f(&e)) / (2.0 * eps);
            assert!((fd - gm.data()[k]).abs() < 1e-6);
            let mut e = enc.clone();
            e.sigma.data_mut()[k] += eps;
            let up = f(&e);
            e.sigma.data_mut()[k] -= 2.0 * eps;
            let fd = (up - f(&e)) / (2.0 * eps);
            assert!((fd - gs.data()[k]).abs() < 1e-6);
        }
    }

    #[test]
    fn decode_voltage_examples() {
        let cfg = |stat| DecoderConfig {
            stat,
            ..Default::default()
        };
        let tr = [0.2, 0.5, 0.4];
        assert_eq!(decode_voltage(&tr, &cfg(DecoderStat::Last)).unwrap(), 0.4);
        assert_eq!(decode_voltage(&tr, &cfg(DecoderStat::MaxAbs)).unwrap(), 0.5);
        assert!((decode_voltage(&tr, &cfg(DecoderStat::Mean)).unwrap() - 0.36667).abs() < 1e-5);
        for stat in [DecoderStat::Last, DecoderStat::MaxAbs, DecoderStat::Mean] {
            assert_eq!(decode_voltage(&[0.0; 4], &cfg(stat)).unwrap(), 0.0);
        }
        assert_eq!(decode_voltage(&[-0.9, 0.8], &cfg(DecoderStat::MaxAbs)).unwrap(), -0.9);
        assert_eq!(decode_voltage(&[0.5, -0.5], &cfg(DecoderStat::MaxAbs)).unwrap(), 0.5);
        assert_eq!(decode_voltage(&[], &cfg(DecoderStat::Last)), Err(CodingError::EmptyTrace));
    }

    #[test]
    fn decode_fr_examples() {
        let raster = RealArray::matrix(2, 4, vec![1.0, 0.0, 1.0, 0.0, 1.0, 1.0, 0.0, 1.0]);
        assert!((decode_fr(&raster, &[1.0, 1.0], 0.0) - 1.25).abs() < 1e-15);
        assert_eq!(decode_fr(&RealArray::zeros(&[2, 4]), &[0.3, -0.7], 0.125), 0.125);
        let ones = RealArray::matrix(2, 3, vec![1.0; 6]);
        assert!((decode_fr(&ones, &[0.3, -0.7], 0.1) - (0.3 - 0.7 + 0.1)).abs() < 1e-15);
    }

    proptest! {
        #[test]
        fn stimulation_in_unit_interval(s in -10.0f64..10.0, mu in -3.0f64..3.0, sigma in 0.05f64..3.0) {
            let a = stimulate(&[s], &single(mu, sigma)).unwrap()[0];
            prop_assert!(a > 0.0 || (s - mu).abs() / sigma > 30.0);
            prop_assert!(a <= 1.0);
            if s != mu {
                prop_assert!(a < 1.0);
            }
        }

        #[test]
        fn pop_det_count_is_floor_or_ceil(a in 0.0f64..=1.0, t in 1usize..40) {
            let count: f64 = pop_det_raster(&[a], 1.0, t).concat().iter().sum();
            let ideal = t as f64 * a;
            prop_assert!(count == ideal.floor() || count == ideal.ceil()
                || (count - ideal).abs() < 1e-9 * t as f64 + 1.0);
            prop_assert!(count >= ideal.floor() - 1.0 && count <= ideal.ceil());
        }

        #[test]
        fn li_accumulator_last_equals_sum(xs in prop::collection::vec(-3.0f64..3.0, 1..12)) {
            let mut v = 0.0;
            let trace: Vec<f64> = xs.iter().map(|x| { v += x; v }).collect();
            let last = decode_voltage(&trace, &DecoderConfig::default()).unwrap();
            let sum: f64 = xs.iter().sum();
            prop_assert!((last - sum).abs() < 1e-12);
        }

        #[test]
        fn constant_trace_stats_agree(c in -5.0f64..5.0, t in 1usize..10) {
            let tr = vec![c; t];
            let cfg = |stat| DecoderConfig { stat, ..Default::default() };
            let last = decode_voltage(&tr, &cfg(DecoderStat::Last)).unwrap();
            let max = decode_voltage(&tr, &cfg(DecoderStat::MaxAbs)).unwrap();
            let mean = decode_voltage(&tr, &cfg(DecoderStat::Mean)).unwrap();
            prop_assert_eq!(last, max);
            prop_assert!((mean - last).abs() < 1e-12);
        }

        #[test]
        fn decode_fr_permutation_invariant(bits in prop::collection::vec(prop::bool::ANY, 12), rot in 0usize..4) {
            let data: Vec<f64> = bits.iter().map(|b| if *b { 1.0 } else { 0.0 }).collect();
            let raster = RealArray::matrix(3, 4, data.clone());
            let mut rotated = vec![0.0; 12];
            for k in 0..3 {
                for t in 0..4 {
                    rotated[k * 4 + (t + rot) % 4] = data[k * 4 + t];
                }
            }
            let w = [0.3, -1.1, 0.7];
            let a = decode_fr(&raster, &w, 0.2);
            let b = decode_fr(&RealArray::matrix(3, 4, rotated), &w, 0.2);
            prop_assert!((a - b).abs() < 1e-12);
        }
    }
}
