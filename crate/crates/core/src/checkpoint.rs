//! Self-describing JSON checkpoints for spiking and dense actors.
//!
//! Layout: `format_version`, `kind`, a `hyper` block with everything needed
//! to rebuild the architecture, and a list of named arrays with explicit
//! shapes. Array entries are written with 17 significant digits.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize, Serializer};
use serde_json::value::RawValue;

use crate::actor::{ActorConfig, ActorParams, DenseActor, EnvSpec};
use crate::math::{ParamBlocks, RealArray, RngStream, StreamId};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum CheckpointError {
    #[error("checkpoint i/o on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("checkpoint format version {found}, this build reads version {expected}")]
    Version { found: u32, expected: u32 },
    #[error("array {name} has shape {found:?}, architecture expects {expected:?}")]
    Shape {
        name: String,
        found: Vec<usize>,
        expected: Vec<usize>,
    },
    #[error("corrupt checkpoint: {0}")]
    Corrupt(String),
}

/// Either kind of actor a checkpoint can hold.
#[derive(Debug, Clone, PartialEq)]
pub enum Checkpoint {
    Spiking(ActorParams),
    Dense(DenseActor),
}

impl Checkpoint {
    pub fn spec(&self) -> &EnvSpec {
        match self {
            Checkpoint::Spiking(p) => &p.spec,
            Checkpoint::Dense(d) => &d.spec,
        }
    }

    pub fn act(&self, s: &[f64]) -> Result<Vec<f64>, crate::actor::ActorError> {
        match self {
            Checkpoint::Spiking(p) => p.forward(s),
            Checkpoint::Dense(d) => d.forward(s),
        }
    }
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum Hyper {
    Spiking { spec: EnvSpec, actor: ActorConfig },
    Dense { spec: EnvSpec, hidden: Vec<usize> },
}

struct Sci<'a>(&'a [f64]);

impl Serialize for Sci<'_> {
    fn serialize<S: Serializer>(&self, ser: S) -> Result<S::Ok, S::Error> {
        use serde::ser::{Error, SerializeSeq};
        let mut seq = ser.serialize_seq(Some(self.0.len()))?;
        for x in self.0 {
            let raw = RawValue::from_string(format!("{x:.16e}")).map_err(S::Error::custom)?;
            seq.serialize_element(&raw)?;
        }
        seq.end()
    }
}

#[derive(Serialize)]
struct ArrayOut<'a> {
    name: &'a str,
    shape: &'a [usize],
    data: Sci<'a>,
}

#[derive(Serialize)]
struct FileOut<'a> {
    format_version: u32,
    hyper: &'a Hyper,
    arrays: Vec<ArrayOut<'a>>,
}

#[derive(Deserialize)]
struct ArrayIn {
    name: String,
    shape: Vec<usize>,
    data: Vec<f64>,
}

#[derive(Deserialize)]
struct FileIn {
    hyper: Hyper,
    arrays: Vec<ArrayIn>,
}

#[derive(Deserialize)]
struct VersionOnly {
    format_version: u32,
}

fn named_arrays(ck: &Checkpoint) -> Vec<(String, &RealArray)> {
    match ck {
        Checkpoint::Spiking(p) => p.all_blocks(),
        Checkpoint::Dense(d) => d.blocks(),
    }
}

pub fn to_json(ck: &Checkpoint) -> String {
    let hyper = match ck {
        Checkpoint::Spiking(p) => Hyper::Spiking {
            spec: p.spec.clone(),
            actor: p.cfg.clone(),
        },
        Checkpoint::Dense(d) => Hyper::Dense {
            spec: d.spec.clone(),
            hidden: d.hidden(),
        },
    };
    let blocks = named_arrays(ck);
    let file = FileOut {
        format_version: FORMAT_VERSION,
        hyper: &hyper,
        arrays: blocks
            .iter()
            .map(|(name, a)| ArrayOut {
                name,
                shape: a.shape(),
                data: Sci(a.data()),
            })
            .collect(),
    };
    serde_json::to_string_pretty(&file).expect("checkpoint serialization cannot fail")
}

pub fn from_json(text: &str) -> Result<Checkpoint, CheckpointError> {
    let corrupt = |e: serde_json::Error| CheckpointError::Corrupt(e.to_string());
    let version: VersionOnly = serde_json::from_str(text).map_err(corrupt)?;
    if version.format_version != FORMAT_VERSION {
        return Err(CheckpointError::Version {
            found: version.format_version,
            expected: FORMAT_VERSION,
        });
    }
    let file: FileIn = serde_json::from_str(text).map_err(corrupt)?;
    let bad_hyper = |e: crate::actor::ActorError| CheckpointError::Corrupt(format!("hyperparameters: {e}"));
    let mut ck = match file.hyper {
        Hyper::Spiking { spec, actor } => Checkpoint::Spiking(ActorParams::zeroed(spec, actor).map_err(bad_hyper)?),
        Hyper::Dense { spec, hidden } => {
            let mut rng = RngStream::new(0, StreamId::Init);
            Checkpoint::Dense(DenseActor::new(spec, &hidden, &mut rng).map_err(bad_hyper)?)
        }
    };
    let expected: Vec<(String, Vec<usize>)> = named_arrays(&ck)
        .into_iter()
        .map(|(n, a)| (n, a.shape().to_vec()))
        .collect();
    if file.arrays.len() != expected.len() {
        return Err(CheckpointError::Corrupt(format!(
            "{} arrays stored, architecture has {}",
            file.arrays.len(),
            expected.len()
        )));
    }
    let slots = match &mut ck {
        Checkpoint::Spiking(p) => p.all_blocks_mut(),
        Checkpoint::Dense(d) => d.blocks_mut(),
    };
    for ((slot, (name, shape)), stored) in slots.into_iter().zip(&expected).zip(file.arrays) {
        if stored.name != *name {
            return Err(CheckpointError::Corrupt(format!(
                "expected array {name}, found {}",
                stored.name
            )));
        }
        let len: usize = stored.shape.iter().product();
        if stored.data.len() != len {
            return Err(CheckpointError::Corrupt(format!(
                "array {name} declares {len} entries but holds {}",
                stored.data.len()
            )));
        }
        if stored.shape != *shape {
            return Err(CheckpointError::Shape {
                name: name.clone(),
                found: stored.shape,
                expected: shape.clone(),
            });
        }
        *slot = RealArray::from_vec(shape, stored.data)
            .map_err(|e| CheckpointError::Corrupt(format!("array {name}: {e}")))?;
    }
    if let Checkpoint::Spiking(p) = &ck {
        p.encoder
            .validate()
            .map_err(|e| CheckpointError::Corrupt(e.to_string()))?;
    }
    Ok(ck)
}

pub fn save_checkpoint(ck: &Checkpoint, path: &Path) -> Result<(), CheckpointError> {
    fs::write(path, to_json(ck)).map_err(|source| CheckpointError::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint, CheckpointError> {
    let text = fs::read_to_string(path).map_err(|source| CheckpointError::Io {
        path: path.display().to_string(),
        source,
    })?;
    from_json(&text)
}
