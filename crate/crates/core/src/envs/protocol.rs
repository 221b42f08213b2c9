//! Newline-delimited JSON environment protocol.
//!
//! ```text
//! {"cmd":"spec"}                 → {"n":3,"m":1,"low":[-2.0],"high":[2.0]}
//! {"cmd":"reset","seed":7}       → {"obs":[...]}
//! {"cmd":"step","action":[0.5]}  → {"obs":[...],"reward":-1.2,"done":false}
//! {"cmd":"close"}                → {"ok":true}
//! anything invalid               → {"error":"..."}   (connection stays open)
//! ```

use std::io::{BufRead, BufReader, ErrorKind, Read, Write};
use std::net::{TcpListener, TcpStream, ToSocketAddrs};
use std::process::{Child, Command, Stdio};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{Env, EnvError, Step};
use crate::actor::EnvSpec;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "cmd", rename_all = "lowercase", deny_unknown_fields)]
pub enum Request {
    Spec,
    Reset { seed: u64 },
    Step { action: Vec<f64> },
    Close,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Response {
    Error { error: String },
    Spec { n: usize, m: usize, low: Vec<f64>, high: Vec<f64> },
    Step { obs: Vec<f64>, reward: f64, done: bool },
    Obs { obs: Vec<f64> },
    Ok { ok: bool },
}

fn handle(env: &mut dyn Env, line: &str) -> (Response, bool) {
    let req: Request = match serde_json::from_str(line) {
        Ok(r) => r,
        Err(e) => {
            return (
                Response::Error {
                    error: format!("malformed request: {e}"),
                },
                false,
            )
        }
    };
    let err = |e: EnvError| Response::Error { error: e.to_string() };
    let resp = match req {
        Request::Spec => {
            let s = env.spec();
            Response::Spec {
                n: s.n,
                m: s.m,
                low: s.low,
                high: s.high,
            }
        }
        Request::Reset { seed } => env.reset(seed).map(|obs| Response::Obs { obs }).unwrap_or_else(err),
        Request::Step { action } => env
            .step(&action)
            .map(|st| Response::Step {
                obs: st.obs,
                reward: st.reward,
                done: st.done,
            })
            .unwrap_or_else(err),
        Request::Close => return (Response::Ok { ok: true }, true),
    };
    (resp, false)
}

/// Answers requests from `input` until `close` or end of stream.
pub fn serve<R: BufRead, W: Write>(env: &mut dyn Env, input: R, mut output: W) -> std::io::Result<()> {
    for line in input.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let (resp, close) = handle(env, &line);
        serde_json::to_writer(&mut output, &resp)?;
        output.write_all(b"\n")?;
        output.flush()?;
        if close {
            break;
        }
    }
    Ok(())
}

/// Accepts connections and serves each on its own thread with a fresh
/// environment from `make`, until `max_connections` have been accepted.
pub fn serve_tcp<F>(make: F, listener: TcpListener, max_connections: Option<usize>) -> std::io::Result<()>
where
    F: Fn() -> Box<dyn Env + Send> + Send + Sync + 'static,
{
    let make = std::sync::Arc::new(make);
    let mut workers = Vec::new();
    for stream in listener.incoming() {
        let stream = stream?;
        stream.set_nodelay(true)?;
        let reader = BufReader::new(stream.try_clone()?);
        let make = make.clone();
        workers.push(std::thread::spawn(move || {
            let mut env = make();
            serve(env.as_mut(), reader, stream)
        }));
        if max_connections.is_some_and(|m| workers.len() >= m) {
            break;
        }
    }
    for w in workers {
        w.join().map_err(|_| std::io::Error::other("connection worker panicked"))??;
    }
    Ok(())
}

/// Client side of the protocol; behaves like a local [`Env`].
pub struct RemoteEnv {
    reader: BufReader<Box<dyn Read + Send>>,
    writer: Box<dyn Write + Send>,
    spec: EnvSpec,
    cap: usize,
    child: Option<Child>,
}

impl RemoteEnv {
    /// Default time-limit cap for external gym-style tasks.
    pub const DEFAULT_CAP: usize = 1000;

    /// Performs the spec handshake over an arbitrary byte-stream pair.
    pub fn from_streams(reader: Box<dyn Read + Send>, writer: Box<dyn Write + Send>) -> Result<Self, EnvError> {
        let mut env = Self {
            reader: BufReader::new(reader),
            writer,
            spec: EnvSpec::symmetric(1, 1, 1.0),
            cap: Self::DEFAULT_CAP,
            child: None,
        };
        match env.call(&Request::Spec)? {
            Response::Spec { n, m, low, high } => {
                let spec = EnvSpec { n, m, low, high };
                spec.validate().map_err(EnvError::Protocol)?;
                env.spec = spec;
            }
            other => return Err(EnvError::Protocol(format!("expected spec, got {other:?}"))),
        }
        Ok(env)
    }

    pub fn connect(addr: impl ToSocketAddrs, timeout: Duration) -> Result<Self, EnvError> {
        let stream = TcpStream::connect(addr).map_err(io_err)?;
        stream.set_read_timeout(Some(timeout)).map_err(io_err)?;
        stream.set_nodelay(true).map_err(io_err)?;
        let reader = stream.try_clone().map_err(io_err)?;
        Self::from_streams(Box::new(reader), Box::new(stream))
    }

    /// Launches `program` and talks to it over its standard input/output.
    pub fn spawn(program: &str, args: &[String]) -> Result<Self, EnvError> {
        let mut child = Command::new(program)
            .args(args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .spawn()
            .map_err(io_err)?;
        let stdin = child.stdin.take().expect("piped stdin");
        let stdout = child.stdout.take().expect("piped stdout");
        let mut env = Self::from_streams(Box::new(stdout), Box::new(stdin))?;
        env.child = Some(child);
        Ok(env)
    }

    pub fn with_cap(mut self, cap: usize) -> Self {
        self.cap = cap;
        self
    }

    pub fn call(&mut self, req: &Request) -> Result<Response, EnvError> {
        let mut line = serde_json::to_string(req).map_err(|e| EnvError::Protocol(e.to_string()))?;
        line.push('\n');
        self.writer.write_all(line.as_bytes()).map_err(io_err)?;
        self.writer.flush().map_err(io_err)?;
        let mut reply = String::new();
        let n = self.reader.read_line(&mut reply).map_err(io_err)?;
        if n == 0 {
            return Err(EnvError::Io("connection closed by the environment".into()));
        }
        let resp: Response =
            serde_json::from_str(&reply).map_err(|e| EnvError::Protocol(format!("bad response {reply:?}: {e}")))?;
        if let Response::Error { error } = resp {
            return Err(EnvError::Remote(error));
        }
        Ok(resp)
    }

    pub fn close(&mut self) -> Result<(), EnvError> {
        self.call(&Request::Close)?;
        if let Some(mut child) = self.child.take() {
            child.wait().map_err(io_err)?;
        }
        Ok(())
    }

    fn check_obs(&self, obs: &[f64]) -> Result<(), EnvError> {
        if obs.len() != self.spec.n {
            return Err(EnvError::Protocol(format!(
                "observation has {} entries, spec says {}",
                obs.len(),
                self.spec.n
            )));
        }
        Ok(())
    }
}

impl Drop for RemoteEnv {
    fn drop(&mut self) {
        if let Some(mut child) = self.child.take() {
            let _ = child.kill();
            let _ = child.wait();
        }
    }
}

fn io_err(e: std::io::Error) -> EnvError {
    match e.kind() {
        ErrorKind::WouldBlock | ErrorKind::TimedOut => EnvError::Timeout,
        _ => EnvError::Io(e.to_string()),
    }
}

impl Env for RemoteEnv {
    fn spec(&self) -> EnvSpec {
        self.spec.clone()
    }

    fn reset(&mut self, seed: u64) -> Result<Vec<f64>, EnvError> {
        match self.call(&Request::Reset { seed })? {
            Response::Obs { obs } => {
                self.check_obs(&obs)?;
                Ok(obs)
            }
            other => Err(EnvError::Protocol(format!("expected obs, got {other:?}"))),
        }
    }

    fn step(&mut self, action: &[f64]) -> Result<Step, EnvError> {
        if action.len() != self.spec.m {
            return Err(EnvError::ActionDim {
                expected: self.spec.m,
                got: action.len(),
            });
        }
        match self.call(&Request::Step {
            action: action.to_vec(),
        })? {
            Response::Step { obs, reward, done } => {
                self.check_obs(&obs)?;
                Ok(Step { obs, reward, done })
            }
            other => Err(EnvError::Protocol(format!("expected step result, got {other:?}"))),
        }
    }

    fn episode_cap(&self) -> usize {
        self.cap
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::Pendulum;
    use std::thread;

    fn loopback() -> (RemoteEnv, thread::JoinHandle<()>) {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap();
        let server = thread::spawn(move || {
            serve_tcp(|| Box::new(Pendulum::new()), listener, Some(1)).unwrap();
        });
        let remote = RemoteEnv::connect(addr, Duration::from_secs(5)).unwrap();
        (remote, server)
    }

    #[test]
    fn handshake_reports_spec() {
        let (mut remote, server) = loopback();
        assert_eq!(remote.spec(), EnvSpec::symmetric(3, 1, 2.0));
        remote.close().unwrap();
        server.join().unwrap();
    }

    #[test]
    fn errors_keep_connection_usable() {
        let (mut remote, server) = loopback();
        remote.reset(3).unwrap();
        let bad = remote.call(&Request::Step { action: vec![0.1, 0.2] });
        assert!(matches!(bad, Err(EnvError::Remote(_))));
        assert!(remote.step(&[0.1]).is_ok());
        remote.writer.write_all(b"{not json}\n").unwrap();
        let mut reply = String::new();
        remote.reader.read_line(&mut reply).unwrap();
        assert!(reply.contains("error"));
        assert!(remote.step(&[0.1]).is_ok());
        remote.close().unwrap();
        server.join().unwrap();
    }

    #[test]
    fn remote_matches_local_trajectory() {
        let (mut remote, server) = loopback();
        let mut local = Pendulum::new();
        for seed in [1u64, 2, 99] {
            assert_eq!(remote.reset(seed).unwrap(), local.reset(seed).unwrap());
            for k in 0..200 {
                let a = [((k as f64) * 0.37).sin() * 2.5];
                assert_eq!(remote.step(&a).unwrap(), local.step(&a).unwrap());
            }
        }
        remote.close().unwrap();
        server.join().unwrap();
    }

    #[test]
    fn request_wire_format() {
        assert_eq!(serde_json::to_string(&Request::Spec).unwrap(), r#"{"cmd":"spec"}"#);
        let r: Request = serde_json::from_str(r#"{"cmd":"step","action":[0.5]}"#).unwrap();
        assert_eq!(r, Request::Step { action: vec![0.5] });
        assert_eq!(
            serde_json::to_string(&Response::Ok { ok: true }).unwrap(),
            r#"{"ok":true}"#
        );
    }
}
