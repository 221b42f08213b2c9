//! Randomized gradient-check suites: hand-written backward against the
//! recorded-graph oracle, and analytic gradients against central differences.

use crate::actor::{ActorConfig, ActorError, ActorParams, EnvSpec, IntraMask};
use crate::coding::{stimulate, stimulation_backward, DecoderStat, EncoderMode, EncoderParams};
use crate::grad::{backward_with, finite_diff, is_smooth_pass, max_rel_error, oracle_backward_batch, rel_error, BackwardOptions};
use crate::math::{Mlp, ParamBlocks, RealArray, RngStream, StreamId};
use crate::td3::{critic_input, CriticParams};

pub const ORACLE_TOL: f64 = 1e-6;
pub const FD_TOL: f64 = 1e-4;
pub const FD_EPS: f64 = 1e-4;

/// Size limits for randomly drawn networks.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Profile {
    pub max_n: usize,
    pub max_m: usize,
    pub max_p: usize,
    pub max_t: usize,
    pub max_hidden: usize,
    pub max_layers: usize,
}

impl Profile {
    /// `N ≤ 3`, `P_in = P_out ≤ 4`, `T ≤ 4`.
    pub const TINY: Profile = Profile {
        max_n: 3,
        max_m: 2,
        max_p: 4,
        max_t: 4,
        max_hidden: 6,
        max_layers: 2,
    };

    pub const SMALL: Profile = Profile {
        max_n: 6,
        max_m: 3,
        max_p: 8,
        max_t: 5,
        max_hidden: 24,
        max_layers: 2,
    };

    pub fn by_name(name: &str) -> Option<Profile> {
        match name {
            "tiny" => Some(Self::TINY),
            "small" => Some(Self::SMALL),
            _ => None,
        }
    }
}

fn pick<T: Copy>(rng: &mut RngStream, items: &[T]) -> T {
    items[rng.below(items.len())]
}

fn upto(rng: &mut RngStream, max: usize) -> usize {
    1 + rng.below(max)
}

/// Random configuration within `profile`, covering every encoder, decoder
/// statistic and intra variant.
pub fn random_config(profile: &Profile, rng: &mut RngStream) -> ActorConfig {
    let p = upto(rng, profile.max_p);
    let layers = upto(rng, profile.max_layers);
    let mut cfg = ActorConfig {
        t_len: upto(rng, profile.max_t),
        p_in: p,
        p_out: p,
        hidden: (0..layers).map(|_| 1 + upto(rng, profile.max_hidden - 1)).collect(),
        encoder: pick(rng, &[EncoderMode::PopDet, EncoderMode::Pop, EncoderMode::Layer]),
        intra: rng.uniform() < 0.8,
        intra_mask: pick(
            rng,
            &[IntraMask::FULL, IntraMask::SELF, IntraMask::LATERAL, IntraMask::BIAS, IntraMask::NONE],
        ),
        ..Default::default()
    };
    cfg.decoder.stat = pick(
        rng,
        &[DecoderStat::Last, DecoderStat::MaxAbs, DecoderStat::Mean, DecoderStat::Fr],
    );
    cfg.decoder.alpha_v_li = pick(rng, &[1.0, 0.8, 0.5]);
    cfg
}

/// Random network with weights scaled up so that neurons actually fire.
pub fn random_actor(spec: EnvSpec, cfg: ActorConfig, rng: &mut RngStream) -> Result<ActorParams, ActorError> {
    let mut init = RngStream::new(rng.next_u64(), StreamId::Init);
    let mut p = ActorParams::new(spec, cfg, &mut init)?;
    let gain = rng.uniform_range(1.5, 4.0);
    for l in p.backbone.iter_mut().chain(p.intra.iter_mut()) {
        l.weight.scale(gain);
        l.bias.scale(gain);
    }
    for x in p.encoder.mu.data_mut() {
        *x += rng.uniform_range(-0.3, 0.3);
    }
    for x in p.encoder.sigma.data_mut() {
        *x *= rng.uniform_range(0.7, 1.5);
    }
    Ok(p)
}

fn random_vec(rng: &mut RngStream, len: usize, r: f64) -> Vec<f64> {
    (0..len).map(|_| rng.uniform_range(-r, r)).collect()
}

/// One backward-vs-oracle comparison; returns the largest relative error.
pub fn oracle_trial(profile: &Profile, rng: &mut RngStream, opts: BackwardOptions) -> Result<f64, ActorError> {
    let (n, m) = (upto(rng, profile.max_n), upto(rng, profile.max_m));
    let spec = EnvSpec::symmetric(n, m, rng.uniform_range(0.5, 3.0));
    let cfg = random_config(profile, rng);
    let p = random_actor(spec, cfg, rng)?;
    let batch = upto(rng, 3);
    let states = random_vec(rng, batch * n, 3.5);
    let up: Vec<f64> = (0..batch * m).map(|_| rng.normal()).collect();
    let trace = p.forward_batch(&states, batch)?;
    let fast = backward_with(&p, &trace, &up, opts)?;
    let slow = oracle_backward_batch(&p, &states, &up)?;
    Ok(max_rel_error(&fast, &slow))
}

fn worst_block<P, F>(loss: F, params: &P, analytic: &[(String, &RealArray)], skip: &[&str]) -> f64
where
    P: ParamBlocks + Clone,
    F: Fn(&P) -> f64,
{
    let mut worst = 0.0f64;
    for (name, g) in analytic {
        if skip.contains(&name.as_str()) {
            continue;
        }
        let fd = finite_diff(&loss, params, name, FD_EPS).expect("block exists");
        for (a, b) in g.data().iter().zip(fd.data()) {
            worst = worst.max(rel_error(*a, *b));
        }
    }
    worst
}

/// Smallest |pre-activation| over the hidden layers of `net`.
fn relu_margin(net: &Mlp, x: &[f64], batch: usize) -> f64 {
    let mut h = x.to_vec();
    let mut margin = f64::INFINITY;
    for layer in &net.layers[..net.layers.len() - 1] {
        h = layer.forward_batch(&h, batch);
        margin = h.iter().fold(margin, |m, z| m.min(z.abs()));
        h.iter_mut().for_each(|z| *z = z.max(0.0));
    }
    margin
}

/// Twin critic MSE loss against random targets.
pub fn critic_fd_trial(rng: &mut RngStream) -> f64 {
    let (n, m) = (upto(rng, 4), upto(rng, 3));
    let spec = EnvSpec::symmetric(n, m, 1.0);
    let hidden = [2 + rng.below(6), 2 + rng.below(6)];
    let critic = CriticParams::new(&spec, &hidden, &mut RngStream::new(rng.next_u64(), StreamId::Init));
    let batch = upto(rng, 8);
    // Redraw inputs that sit on a ReLU kink, where central differences are meaningless.
    let sa = loop {
        let sa = critic_input(&random_vec(rng, batch * n, 2.0), &random_vec(rng, batch * m, 1.0), batch, n, m);
        if relu_margin(&critic.q1, &sa, batch).min(relu_margin(&critic.q2, &sa, batch)) > 1e-3 {
            break sa;
        }
    };
    let y = random_vec(rng, batch, 3.0);
    let (_, g) = critic.loss_and_grads(&sa, &y);
    worst_block(|c: &CriticParams| c.loss_and_grads(&sa, &y).0, &critic, &g.blocks(), &[])
}

#[derive(Clone)]
struct Receptive(EncoderParams);

impl ParamBlocks for Receptive {
    fn blocks(&self) -> Vec<(String, &RealArray)> {
        vec![("mu".into(), &self.0.mu), ("sigma".into(), &self.0.sigma)]
    }

    fn blocks_mut(&mut self) -> Vec<&mut RealArray> {
        vec![&mut self.0.mu, &mut self.0.sigma]
    }
}

/// Weighted sum of Gaussian stimulation strengths, differentiated in `μ, σ`.
pub fn stimulation_fd_trial(rng: &mut RngStream) -> f64 {
    let (n, p) = (upto(rng, 3), upto(rng, 6));
    let mut enc = EncoderParams::new(n, p, EncoderMode::PopDet);
    for x in enc.mu.data_mut() {
        *x += rng.uniform_range(-0.5, 0.5);
    }
    for x in enc.sigma.data_mut() {
        *x *= rng.uniform_range(0.5, 2.0);
    }
    let s = random_vec(rng, n, 3.0);
    let w: Vec<f64> = (0..n * p).map(|_| rng.normal()).collect();
    let a = stimulate(&s, &enc).expect("valid encoder");
    let (g_mu, g_sigma) = stimulation_backward(&s, &enc, &a, &w);
    let loss = |r: &Receptive| stimulate(&s, &r.0).expect("valid").iter().zip(&w).map(|(x, y)| x * y).sum::<f64>();
    let analytic = vec![("mu".to_string(), &g_mu), ("sigma".to_string(), &g_sigma)];
    worst_block(loss, &Receptive(enc), &analytic, &[])
}

fn action_loss(p: &ActorParams, states: &[f64], batch: usize, up: &[f64]) -> f64 {
    let a = p.forward_batch(states, batch).expect("valid states").actions;
    a.iter().zip(up).map(|(x, y)| x * y).sum()
}

/// Decoder weights and bias sit downstream of every spike, so perturbing them
/// leaves the raster frozen; bounds are wide so the clamp never saturates.
pub fn decoder_fd_trial(profile: &Profile, rng: &mut RngStream) -> Result<f64, ActorError> {
    let (n, m) = (upto(rng, profile.max_n), upto(rng, profile.max_m));
    let spec = EnvSpec::symmetric(n, m, 1e6);
    let cfg = random_config(profile, rng);
    let p = random_actor(spec, cfg, rng)?;
    let batch = upto(rng, 3);
    let states = random_vec(rng, batch * n, 3.5);
    let up: Vec<f64> = (0..batch * m).map(|_| rng.normal()).collect();
    let trace = p.forward_batch(&states, batch)?;
    let g = backward_with(&p, &trace, &up, BackwardOptions::default())?;
    let blocks: Vec<(String, &RealArray)> =
        g.blocks().into_iter().filter(|(name, _)| name.starts_with("decoder.")).collect();
    Ok(worst_block(|q: &ActorParams| action_loss(q, &states, batch, &up), &p, &blocks, &[]))
}

/// Full-network check; `None` when the pass is not smooth (some pre-reset
/// voltage inside the surrogate window, or a saturated clamp).
///
/// The deterministic encoder's raster is piecewise constant in `μ, σ` and its
/// gradient is a pass-through estimate, so those blocks are skipped for it.
pub fn full_fd_trial(profile: &Profile, rng: &mut RngStream) -> Result<Option<f64>, ActorError> {
    let (n, m) = (upto(rng, profile.max_n), upto(rng, profile.max_m));
    let spec = EnvSpec::symmetric(n, m, rng.uniform_range(1.0, 20.0));
    let mut cfg = random_config(profile, rng);
    cfg.surrogate.w = rng.uniform_range(0.02, 0.2);
    let p = random_actor(spec, cfg, rng)?;
    let batch = upto(rng, 2);
    let states = random_vec(rng, batch * n, 3.5);
    let up: Vec<f64> = (0..batch * m).map(|_| rng.normal()).collect();
    let trace = p.forward_batch(&states, batch)?;
    if !is_smooth_pass(&p, &trace) {
        return Ok(None);
    }
    let g = backward_with(&p, &trace, &up, BackwardOptions::default())?;
    let skip: &[&str] = if p.cfg.encoder == EncoderMode::PopDet {
        &["encoder.mu", "encoder.sigma"]
    } else {
        &[]
    };
    Ok(Some(worst_block(
        |q: &ActorParams| action_loss(q, &states, batch, &up),
        &p,
        &g.blocks(),
        skip,
    )))
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub trials: usize,
    pub oracle_max: f64,
    pub critic_fd_max: f64,
    pub stimulation_fd_max: f64,
    pub decoder_fd_max: f64,
    pub full_fd_max: f64,
    /// Trials whose pass was smooth enough for the full-network check.
    pub full_fd_passes: usize,
}

impl GradCheckReport {
    pub fn oracle_ok(&self) -> bool {
        self.oracle_max < ORACLE_TOL
    }

    pub fn fd_ok(&self) -> bool {
        [self.critic_fd_max, self.stimulation_fd_max, self.decoder_fd_max, self.full_fd_max]
            .iter()
            .all(|e| *e < FD_TOL)
    }

    pub fn passed(&self) -> bool {
        self.oracle_ok() && self.fd_ok()
    }
}

/// Runs `trials` rounds of every check. Full-network trials are retried (up
/// to ten draws each) until a smooth pass is found.
pub fn run_suite(profile: &Profile, trials: usize, seed: u64, opts: BackwardOptions) -> Result<GradCheckReport, ActorError> {
    let mut rng = RngStream::new(seed, StreamId::Custom(0x6C4B));
    let mut r = GradCheckReport {
        trials,
        oracle_max: 0.0,
        critic_fd_max: 0.0,
        stimulation_fd_max: 0.0,
        decoder_fd_max: 0.0,
        full_fd_max: 0.0,
        full_fd_passes: 0,
    };
    for _ in 0..trials {
        r.oracle_max = r.oracle_max.max(oracle_trial(profile, &mut rng, opts)?);
        r.critic_fd_max = r.critic_fd_max.max(critic_fd_trial(&mut rng));
        r.stimulation_fd_max = r.stimulation_fd_max.max(stimulation_fd_trial(&mut rng));
        r.decoder_fd_max = r.decoder_fd_max.max(decoder_fd_trial(profile, &mut rng)?);
        for _ in 0..10 {
            if let Some(e) = full_fd_trial(profile, &mut rng)? {
                r.full_fd_max = r.full_fd_max.max(e);
                r.full_fd_passes += 1;
                break;
            }
        }
    }
    Ok(r)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_suite_passes() {
        let r = run_suite(&Profile::TINY, 15, 1, BackwardOptions::default()).unwrap();
        assert!(r.passed(), "{r:?}");
        assert!(r.full_fd_passes > 0);
    }

    #[test]
    fn corrupted_surrogate_is_caught() {
        let r = run_suite(&Profile::TINY, 15, 1, BackwardOptions { surrogate_scale: 1.5 }).unwrap();
        assert!(!r.oracle_ok(), "{r:?}");
    }

    #[test]
    fn zero_trials_is_vacuous() {
        let r = run_suite(&Profile::TINY, 0, 1, BackwardOptions::default()).unwrap();
        assert!(r.passed());
        assert_eq!(r.full_fd_passes, 0);
    }
}
