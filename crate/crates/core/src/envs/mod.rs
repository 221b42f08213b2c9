//! Built-in continuous-control tasks and a line-delimited JSON protocol for
//! attaching environments that live in another process.

mod protocol;

pub use protocol::{serve, serve_tcp, Request, Response, RemoteEnv};

use std::f64::consts::PI;

use crate::actor::EnvSpec;
use crate::math::{RngStream, StreamId};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum EnvError {
    #[error("step called after the episode ended; reset first")]
    StepAfterDone,
    #[error("step called before reset")]
    NotReset,
    #[error("action has {got} entries, environment expects {expected}")]
    ActionDim { expected: usize, got: usize },
    #[error("unknown environment {0:?} (known: pendulum, reacher)")]
    Unknown(String),
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error("remote environment reported: {0}")]
    Remote(String),
    #[error("timed out waiting for the remote environment")]
    Timeout,
    #[error("i/o error talking to the environment: {0}")]
    Io(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Step {
    pub obs: Vec<f64>,
    pub reward: f64,
    pub done: bool,
}

/// Reset/step contract shared by built-in and remote environments.
pub trait Env {
    fn spec(&self) -> EnvSpec;
    /// Deterministic initial state for `seed`.
    fn reset(&mut self, seed: u64) -> Result<Vec<f64>, EnvError>;
    fn step(&mut self, action: &[f64]) -> Result<Step, EnvError>;
    /// Step count after which an episode ends by time limit.
    fn episode_cap(&self) -> usize;
}

impl<E: Env + ?Sized> Env for Box<E> {
    fn spec(&self) -> EnvSpec {
        (**self).spec()
    }
    fn reset(&mut self, seed: u64) -> Result<Vec<f64>, EnvError> {
        (**self).reset(seed)
    }
    fn step(&mut self, action: &[f64]) -> Result<Step, EnvError> {
        (**self).step(action)
    }
    fn episode_cap(&self) -> usize {
        (**self).episode_cap()
    }
}

pub fn make_env(name: &str) -> Result<Box<dyn Env + Send>, EnvError> {
    match name {
        "pendulum" => Ok(Box::new(Pendulum::new())),
        "reacher" => Ok(Box::new(Reacher::new())),
        other => Err(EnvError::Unknown(other.to_string())),
    }
}

fn check_action(spec: &EnvSpec, a: &[f64]) -> Result<Vec<f64>, EnvError> {
    if a.len() != spec.m {
        return Err(EnvError::ActionDim {
            expected: spec.m,
            got: a.len(),
        });
    }
    let mut a = a.to_vec();
    spec.clamp(&mut a);
    Ok(a)
}

/// Angle wrapped to `(−π, π]`.
pub fn wrap_angle(x: f64) -> f64 {
    PI - (PI - x).rem_euclid(2.0 * PI)
}

/// Inverted pendulum swing-up: `θ = 0` is upright, torque in `[−2, 2]`.
#[derive(Debug, Clone)]
pub struct Pendulum {
    pub theta: f64,
    pub theta_dot: f64,
    pub steps: usize,
    started: bool,
}

impl Pendulum {
    pub const G: f64 = 10.0;
    pub const MASS: f64 = 1.0;
    pub const LENGTH: f64 = 1.0;
    pub const DT: f64 = 0.05;
    pub const MAX_SPEED: f64 = 8.0;
    pub const MAX_TORQUE: f64 = 2.0;
    pub const CAP: usize = 200;

    pub fn new() -> Self {
        Self {
            theta: 0.0,
            theta_dot: 0.0,
            steps: 0,
            started: false,
        }
    }

    /// Places the pendulum at an explicit state (fresh episode).
    pub fn set_state(&mut self, theta: f64, theta_dot: f64) {
        self.theta = theta;
        self.theta_dot = theta_dot;
        self.steps = 0;
        self.started = true;
    }

    pub fn obs(&self) -> Vec<f64> {
        vec![self.theta.cos(), self.theta.sin(), self.theta_dot]
    }

    /// One transition from `(θ, θ̇)` under torque `u`: returns `(θ', θ̇', r)`.
    /// The reward uses the pre-step angle and the post-step velocity.
    pub fn transition(theta: f64, theta_dot: f64, u: f64) -> (f64, f64, f64) {
        let (g, m, l, dt) = (Self::G, Self::MASS, Self::LENGTH, Self::DT);
        let acc = 3.0 * g / (2.0 * l) * theta.sin() + 3.0 * u / (m * l * l);
        let new_dot = (theta_dot + acc * dt).clamp(-Self::MAX_SPEED, Self::MAX_SPEED);
        let new_theta = theta + new_dot * dt;
        let w = wrap_angle(theta);
        let reward = -(w * w + 0.1 * new_dot * new_dot + 0.001 * u * u);
        (new_theta, new_dot, reward)
    }

    /// `½θ̇² + (3g/2l)·cos θ`, conserved by the continuous unforced dynamics.
    pub fn energy(theta: f64, theta_dot: f64) -> f64 {
        0.5 * theta_dot * theta_dot + 1.5 * Self::G / Self::LENGTH * theta.cos()
    }
}

impl Default for Pendulum {
    fn default() -> Self {
        Self::new()
    }
}

impl Env for Pendulum {
    fn spec(&self) -> EnvSpec {
        EnvSpec::symmetric(3, 1, Self::MAX_TORQUE)
    }

    fn reset(&mut self, seed: u64) -> Result<Vec<f64>, EnvError> {
        let mut rng = RngStream::new(seed, StreamId::Env);
        let theta = rng.uniform_range(-PI, PI);
        let theta_dot = rng.uniform_range(-1.0, 1.0);
        self.set_state(theta, theta_dot);
        Ok(self.obs())
    }

    fn step(&mut self, action: &[f64]) -> Result<Step, EnvError> {
        if !self.started {
            return Err(EnvError::NotReset);
        }
        if self.steps >= Self::CAP {
            return Err(EnvError::StepAfterDone);
        }
        let a = check_action(&self.spec(), action)?;
        let (theta, theta_dot, reward) = Self::transition(self.theta, self.theta_dot, a[0]);
        self.theta = theta;
        self.theta_dot = theta_dot;
        self.steps += 1;
        Ok(Step {
            obs: self.obs(),
            reward,
            done: self.steps >= Self::CAP,
        })
    }

    fn episode_cap(&self) -> usize {
        Self::CAP
    }
}

/// Planar point mass (double integrator) steered toward a random target.
/// Observation: `[target − position, velocity]`.
#[derive(Debug, Clone)]
pub struct Reacher {
    pub pos: [f64; 2],
    pub vel: [f64; 2],
    pub target: [f64; 2],
    pub steps: usize,
    done: bool,
    started: bool,
}

impl Reacher {
    pub const DT: f64 = 0.1;
    /// Half-width of the square workspace in which start and target are drawn.
    pub const WORKSPACE: f64 = 1.0;
    pub const TOLERANCE: f64 = 0.05;
    pub const CAP: usize = 200;

    pub fn new() -> Self {
        Self {
            pos: [0.0; 2],
            vel: [0.0; 2],
            target: [0.0; 2],
            steps: 0,
            done: false,
            started: false,
        }
    }

    pub fn distance(&self) -> f64 {
        (self.target[0] - self.pos[0]).hypot(self.target[1] - self.pos[1])
    }

    fn obs(&self) -> Vec<f64> {
        vec![
            self.target[0] - self.pos[0],
            self.target[1] - self.pos[1],
            self.vel[0],
            self.vel[1],
        ]
    }
}

impl Default for Reacher {
    fn default() -> Self {
        Self::new()
    }
}

impl Env for Reacher {
    fn spec(&self) -> EnvSpec {
        EnvSpec::symmetric(4, 2, 1.0)
    }

    fn reset(&mut self, seed: u64) -> Result<Vec<f64>, EnvError> {
        let mut rng = RngStream::new(seed, StreamId::Env);
        let w = Self::WORKSPACE;
        self.pos = [rng.uniform_range(-w, w), rng.uniform_range(-w, w)];
        self.target = [rng.uniform_range(-w, w), rng.uniform_range(-w, w)];
        self.vel = [0.0; 2];
        self.steps = 0;
        self.done = false;
        self.started = true;
        Ok(self.obs())
    }

    fn step(&mut self, action: &[f64]) -> Result<Step, EnvError> {
        if !self.started {
            return Err(EnvError::NotReset);
        }
        if self.done {
            return Err(EnvError::StepAfterDone);
        }
        let a = check_action(&self.spec(), action)?;
        for k in 0..2 {
            self.vel[k] += a[k] * Self::DT;
            self.pos[k] += self.vel[k] * Self::DT;
        }
        self.steps += 1;
        let dist = self.distance();
        let reward = -dist - 0.01 * (a[0] * a[0] + a[1] * a[1]);
        self.done = self.steps >= Self::CAP || dist < Self::TOLERANCE;
        Ok(Step {
            obs: self.obs(),
            reward,
            done: self.done,
        })
    }

    fn episode_cap(&self) -> usize {
        Self::CAP
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn pendulum_fixed_points() {
        let (th, thd, r) = Pendulum::transition(0.0, 0.0, 0.0);
        assert_eq!((th, thd, r), (0.0, 0.0, 0.0));
        let (th, thd, r) = Pendulum::transition(PI, 0.0, 0.0);
        assert!((th - PI).abs() < 1e-12 && thd.abs() < 1e-12);
        assert!((r + PI * PI).abs() < 1e-12);
        assert!((r + 9.8696).abs() < 1e-4);
        let (th, thd, r) = Pendulum::transition(0.0, 1.0, 0.0);
        assert_eq!(thd, 1.0);
        assert_eq!(th, 0.05);
        assert!((r + 0.1).abs() < 1e-15);
    }

    #[test]
    fn pendulum_reset_deterministic_and_obs_on_circle() {
        let mut a = Pendulum::new();
        let mut b = Pendulum::new();
        assert_eq!(a.reset(5).unwrap(), b.reset(5).unwrap());
        let o = a.reset(6).unwrap();
        assert!((o[0] * o[0] + o[1] * o[1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn pendulum_ends_exactly_at_cap() {
        let mut p = Pendulum::new();
        p.reset(1).unwrap();
        for k in 1..=Pendulum::CAP {
            let st = p.step(&[0.3]).unwrap();
            assert_eq!(st.done, k == Pendulum::CAP);
        }
        assert_eq!(p.step(&[0.0]), Err(EnvError::StepAfterDone));
        assert_eq!(
            Pendulum::new().step(&[0.0]),
            Err(EnvError::NotReset)
        );
        let mut p = Pendulum::new();
        p.reset(1).unwrap();
        assert_eq!(p.step(&[0.0, 1.0]), Err(EnvError::ActionDim { expected: 1, got: 2 }));
    }

    #[test]
    fn wrap_range() {
        assert_eq!(wrap_angle(PI), PI);
        assert!((wrap_angle(-PI) - PI).abs() < 1e-15);
        assert!((wrap_angle(3.0 * PI / 2.0) + PI / 2.0).abs() < 1e-12);
    }

    #[test]
    fn reacher_reset_and_done() {
        let mut r = Reacher::new();
        let o = r.reset(3).unwrap();
        assert_eq!(o.len(), 4);
        assert!(r.target.iter().all(|x| x.abs() <= Reacher::WORKSPACE));
        let mut n = 0;
        loop {
            n += 1;
            if r.step(&[0.0, 0.0]).unwrap().done {
                break;
            }
        }
        assert!(n == Reacher::CAP || r.distance() < Reacher::TOLERANCE);
        r.target = r.pos;
        r.done = false;
        r.steps = 0;
        assert!(r.step(&[0.0, 0.0]).unwrap().done);
    }

    proptest! {
        #[test]
        fn pendulum_is_bit_deterministic(seed in 0u64..1000, actions in prop::collection::vec(-3.0f64..3.0, 1..40)) {
            let run = || {
                let mut p = Pendulum::new();
                let mut out = vec![p.reset(seed).unwrap()];
                for a in &actions {
                    let st = p.step(&[*a]).unwrap();
                    out.push(st.obs);
                    out.push(vec![st.reward]);
                }
                out
            };
            prop_assert_eq!(run(), run());
        }

        #[test]
        fn pendulum_energy_drift_bounded(theta in -PI..PI, theta_dot in -4.0f64..4.0) {
            let (th, thd, _) = Pendulum::transition(theta, theta_dot, 0.0);
            prop_assume!(thd.abs() < Pendulum::MAX_SPEED);
            let drift = (Pendulum::energy(th, thd) - Pendulum::energy(theta, theta_dot)).abs();
            prop_assert!(drift < 0.5, "drift {}", drift);
        }

        #[test]
        fn reacher_is_bit_deterministic(seed in 0u64..1000, actions in prop::collection::vec(-1.5f64..1.5, 2..40)) {
            let run = || {
                let mut r = Reacher::new();
                let mut out = vec![r.reset(seed).unwrap()];
                for a in actions.chunks_exact(2) {
                    match r.step(a) {
                        Ok(st) => out.push(st.obs),
                        Err(_) => break,
                    }
                }
                out
            };
            prop_assert_eq!(run(), run());
        }
    }
}
