//! Run configuration file.
//!
//! ```toml
//! [run]
//! env = "pendulum"        # built-in name, "tcp:HOST:PORT" or "spawn:PROGRAM ARG..."
//! network = "ilc_san"     # or "dense"
//! seeds = [0, 1, 2]
//! out = "runs/pendulum"
//!
//! [actor]                 # spiking actor hyperparameters
//! t_len = 5
//! hidden = [256, 256]
//! decoder = { stat = "last", alpha_v_li = 1.0 }
//!
//! [dense]
//! hidden = [256, 256]
//!
//! [td3]
//! total_steps = 30000
//! warmup_steps = 1000
//! ```
//!
//! Every section and key is optional; unknown keys are rejected.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use snn_actor::actor::{ActorConfig, DenseActor};
use snn_actor::envs::{make_env, Env, EnvError, RemoteEnv};
use snn_actor::td3::Td3Config;

use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
#[value(rename_all = "snake_case")]
pub enum Network {
    IlcSan,
    Dense,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunSection {
    pub env: String,
    pub network: Network,
    pub seeds: Vec<u64>,
    pub out: PathBuf,
    /// Zero wall-clock columns so reruns give identical logs.
    pub strict: bool,
    /// Episode step cap for external environments.
    pub episode_cap: Option<usize>,
    /// Read timeout for TCP environments, seconds.
    pub env_timeout_secs: f64,
}

impl Default for RunSection {
    fn default() -> Self {
        Self {
            env: "pendulum".into(),
            network: Network::IlcSan,
            seeds: vec![0],
            out: PathBuf::from("runs"),
            strict: false,
            episode_cap: None,
            env_timeout_secs: 30.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DenseSection {
    pub hidden: Vec<usize>,
}

impl Default for DenseSection {
    fn default() -> Self {
        Self {
            hidden: DenseActor::HIDDEN.to_vec(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub run: RunSection,
    pub actor: ActorConfig,
    pub dense: DenseSection,
    pub td3: Td3Config,
}

pub const SNAPSHOT_FILE: &str = "config.toml";

impl RunConfig {
    pub fn parse(text: &str, origin: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Config(format!("{origin}: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read config file {}: {e}", path.display())))?;
        Self::parse(&text, &path.display().to_string())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |m: String| Err(CliError::Config(m));
        self.actor.validate().map_err(|e| CliError::Config(format!("[actor] {e}")))?;
        self.td3.validate().map_err(|e| CliError::Config(format!("[td3] {e}")))?;
        if self.dense.hidden.is_empty() || self.dense.hidden.contains(&0) {
            return bad("[dense] hidden needs at least one positive width".into());
        }
        if self.run.seeds.is_empty() {
            return bad("[run] seeds must list at least one seed".into());
        }
        if !(self.run.env_timeout_secs > 0.0) {
            return bad("[run] env_timeout_secs must be positive".into());
        }
        EnvSource::parse(&self.run.env)?;
        Ok(())
    }

    pub fn env_source(&self) -> Result<EnvSource, CliError> {
        EnvSource::parse(&self.run.env)
    }

    /// Opens a fresh connection to (or instance of) the configured environment.
    pub fn open_env(&self) -> Result<Box<dyn Env + Send>, CliError> {
        let env_err = |e: EnvError| CliError::Env(format!("{}: {e}", self.run.env));
        let cap = |r: RemoteEnv| match self.run.episode_cap {
            Some(c) => r.with_cap(c),
            None => r,
        };
        match self.env_source()? {
            EnvSource::Builtin(name) => make_env(&name).map_err(env_err),
            EnvSource::Tcp(addr) => {
                let timeout = Duration::from_secs_f64(self.run.env_timeout_secs);
                Ok(Box::new(cap(RemoteEnv::connect(addr.as_str(), timeout).map_err(env_err)?)))
            }
            EnvSource::Spawn(program, args) => Ok(Box::new(cap(RemoteEnv::spawn(&program, &args).map_err(env_err)?))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum EnvSource {
    Builtin(String),
    Tcp(String),
    Spawn(String, Vec<String>),
}

impl EnvSource {
    pub fn parse(s: &str) -> Result<Self, CliError> {
        if let Some(addr) = s.strip_prefix("tcp:") {
            if addr.is_empty() {
                return Err(CliError::Config("tcp environment needs HOST:PORT".into()));
            }
            return Ok(EnvSource::Tcp(addr.to_string()));
        }
        if let Some(cmd) = s.strip_prefix("spawn:") {
            let mut parts = cmd.split_whitespace().map(str::to_string);
            let program = parts
                .next()
                .ok_or_else(|| CliError::Config("spawn environment needs a program".into()))?;
            return Ok(EnvSource::Spawn(program, parts.collect()));
        }
        match s {
            "pendulum" | "reacher" => Ok(EnvSource::Builtin(s.to_string())),
            other => Err(CliError::Config(format!(
                "unknown environment {other:?}; use pendulum, reacher, tcp:HOST:PORT or spawn:PROGRAM"
            ))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use snn_actor::coding::DecoderStat;

    #[test]
    fn partial_sections_fill_defaults() {
        let cfg = RunConfig::parse(
            "[run]\nseeds = [1, 2]\n[actor]\nt_len = 3\ndecoder = { stat = \"max_abs\" }\n[td3]\nbatch = 32\n",
            "inline",
        )
        .unwrap();
        assert_eq!(cfg.run.seeds, vec![1, 2]);
        assert_eq!(cfg.actor.t_len, 3);
        assert_eq!(cfg.actor.p_in, 10);
        assert_eq!(cfg.actor.decoder.stat, DecoderStat::MaxAbs);
        assert_eq!(cfg.td3.batch, 32);
        assert_eq!(cfg.td3.gamma, 0.99);
        cfg.validate().unwrap();
    }

    #[test]
    fn unknown_key_reports_line() {
        let err = RunConfig::parse("[run]\nseeds = [1]\n\n[td3]\nbatchsize = 5\n", "cfg.toml").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("line 5"), "{msg}");
        assert!(msg.contains("batchsize"), "{msg}");
    }

    #[test]
    fn snapshot_round_trips() {
        let mut cfg = RunConfig::default();
        cfg.run.episode_cap = Some(500);
        cfg.td3.stop_at_return = Some(-150.0);
        assert_eq!(RunConfig::parse(&cfg.to_toml(), "snapshot").unwrap(), cfg);
    }

    #[test]
    fn env_sources() {
        assert_eq!(EnvSource::parse("tcp:127.0.0.1:9").unwrap(), EnvSource::Tcp("127.0.0.1:9".into()));
        assert_eq!(
            EnvSource::parse("spawn:python3 env.py --fast").unwrap(),
            EnvSource::Spawn("python3".into(), vec!["env.py".into(), "--fast".into()])
        );
        assert!(EnvSource::parse("mujoco").is_err());
    }
}
