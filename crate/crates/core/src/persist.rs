//! Versioned JSON envelopes for trained models and fitted encoders.
//!
//! ```json
//! {
//!   "format_version": 1,
//!   "kind": "forest",
//!   "created_at": "1970-01-01T00:00:00Z",
//!   "training_fingerprint": "<sha256 hex>",
//!   "payload": { ... }
//! }
//! ```
//!
//! Output is canonical: keys follow struct field order (no payload holds a
//! hash map) and floats use the shortest decimal that parses back to the
//! same bits, so two saves of one model with the same metadata are
//! byte-identical. Containers nested deeper than five levels, such as tree
//! nodes, are written on a single line.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::features::FittedEncoder;
use crate::model::TrainedModel;

pub const FORMAT_VERSION: u64 = 1;
pub const FILE_EXTENSION: &str = ".model.json";

#[derive(Debug, Error)]
pub enum PersistError {
    #[error("unknown envelope version {0}")]
    UnknownVersion(u64),
    #[error("corrupt payload: {0}")]
    CorruptPayload(String),
    #[error("model holds a non-finite value")]
    NonFinite,
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnvelopeKind {
    Linear,
    Forest,
    Gbdt,
    Svr,
    Encoder,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Artifact {
    Model(TrainedModel),
    Encoder(FittedEncoder),
}

impl Artifact {
    pub fn kind(&self) -> EnvelopeKind {
        match self {
            Artifact::Model(TrainedModel::Linear(_)) => EnvelopeKind::Linear,
            Artifact::Model(TrainedModel::Forest(_)) => EnvelopeKind::Forest,
            Artifact::Model(TrainedModel::Gbdt(_)) => EnvelopeKind::Gbdt,
            Artifact::Model(TrainedModel::Svr(_)) => EnvelopeKind::Svr,
            Artifact::Encoder(_) => EnvelopeKind::Encoder,
        }
    }

    pub fn into_model(self) -> Option<TrainedModel> {
        match self {
            Artifact::Model(m) => Some(m),
            Artifact::Encoder(_) => None,
        }
    }

    pub fn into_encoder(self) -> Option<FittedEncoder> {
        match self {
            Artifact::Encoder(e) => Some(e),
            Artifact::Model(_) => None,
        }
    }
}

impl From<TrainedModel> for Artifact {
    fn from(m: TrainedModel) -> Self {
        Artifact::Model(m)
    }
}

impl From<FittedEncoder> for Artifact {
    fn from(e: FittedEncoder) -> Self {
        Artifact::Encoder(e)
    }
}

/// Envelope fields other than the payload.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EnvelopeMeta {
    pub created_at: String,
    pub training_fingerprint: String,
}

impl Default for EnvelopeMeta {
    fn default() -> Self {
        Self { created_at: "1970-01-01T00:00:00Z".into(), training_fingerprint: String::new() }
    }
}

/// SHA-256 over the run config, a digest of the training data and the seed.
pub fn training_fingerprint(config: &[u8], data_digest: &[u8], seed: u64) -> String {
    let mut h = Sha256::new();
    for part in [config, data_digest] {
        h.update((part.len() as u64).to_le_bytes());
        h.update(part);
    }
    h.update(seed.to_le_bytes());
    hex(&h.finalize())
}

/// SHA-256 hex digest of a byte string.
pub fn digest_hex(bytes: &[u8]) -> String {
    hex(&Sha256::digest(bytes))
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Borrowed view of an envelope, serialized in field order. No field is a
/// hash map, so the bytes are a pure function of the artifact and `meta`.
#[derive(Serialize)]
struct EnvelopeRef<'a, T: Serialize> {
    format_version: u64,
    kind: EnvelopeKind,
    created_at: &'a str,
    training_fingerprint: &'a str,
    payload: &'a T,
}

/// Nesting depth beyond which containers are written on one line. Keeps
/// one tree node per line instead of one number per line.
const PRETTY_DEPTH: usize = 5;

struct ShallowPretty {
    pretty: serde_json::ser::PrettyFormatter<'static>,
    compact: serde_json::ser::CompactFormatter,
    depth: usize,
}

macro_rules! by_depth {
    ($self:ident, $d:expr, $m:ident($($a:expr),*)) => {
        if $d <= PRETTY_DEPTH { $self.pretty.$m($($a),*) } else { $self.compact.$m($($a),*) }
    };
}

impl serde_json::ser::Formatter for ShallowPretty {
    fn begin_array<W: ?Sized + Write>(&mut self, w: &mut W) -> std::io::Result<()> {
        self.depth += 1;
        by_depth!(self, self.depth, begin_array(w))
    }
    fn end_array<W: ?Sized + Write>(&mut self, w: &mut W) -> std::io::Result<()> {
        let r = by_depth!(self, self.depth, end_array(w));
        self.depth -= 1;
        r
    }
    fn begin_array_value<W: ?Sized + Write>(&mut self, w: &mut W, first: bool) -> std::io::Result<()> {
        by_depth!(self, self.depth, begin_array_value(w, first))
    }
    fn end_array_value<W: ?Sized + Write>(&mut self, w: &mut W) -> std::io::Result<()> {
        by_depth!(self, self.depth, end_array_value(w))
    }
    fn begin_object<W: ?Sized + Write>(&mut self, w: &mut W) -> std::io::Result<()> {
        self.depth += 1;
        by_depth!(self, self.depth, begin_object(w))
    }
    fn end_object<W: ?Sized + Write>(&mut self, w: &mut W) -> std::io::Result<()> {
        let r = by_depth!(self, self.depth, end_object(w));
        self.depth -= 1;
        r
    }
    fn begin_object_key<W: ?Sized + Write>(&mut self, w: &mut W, first: bool) -> std::io::Result<()> {
        by_depth!(self, self.depth, begin_object_key(w, first))
    }
    fn begin_object_value<W: ?Sized + Write>(&mut self, w: &mut W) -> std::io::Result<()> {
        by_depth!(self, self.depth, begin_object_value(w))
    }
    fn end_object_value<W: ?Sized + Write>(&mut self, w: &mut W) -> std::io::Result<()> {
        by_depth!(self, self.depth, end_object_value(w))
    }
}

fn encode<T>(payload: &T, kind: EnvelopeKind, meta: &EnvelopeMeta) -> Result<Vec<u8>, PersistError>
where
    T: Serialize + for<'de> Deserialize<'de> + PartialEq,
{
    let env = EnvelopeRef {
        format_version: FORMAT_VERSION,
        kind,
        created_at: &meta.created_at,
        training_fingerprint: &meta.training_fingerprint,
        payload,
    };
    let fmt = ShallowPretty {
        pretty: serde_json::ser::PrettyFormatter::new(),
        compact: serde_json::ser::CompactFormatter,
        depth: 0,
    };
    let mut bytes = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(&mut bytes, fmt);
    env.serialize(&mut ser).map_err(|e| PersistError::CorruptPayload(e.to_string()))?;
    bytes.push(b'\n');
    // serde_json writes NaN and infinities as `null`, so a model holding
    // one does not read back as itself.
    #[derive(Deserialize)]
    struct PayloadOnly<T> {
        payload: T,
    }
    match serde_json::from_slice::<PayloadOnly<T>>(&bytes) {
        Ok(back) if back.payload == *payload => Ok(bytes),
        _ => Err(PersistError::NonFinite),
    }
}

pub fn save_model<W: Write>(artifact: &Artifact, meta: &EnvelopeMeta, mut sink: W) -> Result<(), PersistError> {
    let kind = artifact.kind();
    let bytes = match artifact {
        Artifact::Model(TrainedModel::Linear(m)) => encode(m, kind, meta)?,
        Artifact::Model(TrainedModel::Forest(m)) => encode(m, kind, meta)?,
        Artifact::Model(TrainedModel::Gbdt(m)) => encode(m, kind, meta)?,
        Artifact::Model(TrainedModel::Svr(m)) => encode(m, kind, meta)?,
        Artifact::Encoder(e) => encode(e, kind, meta)?,
    };
    sink.write_all(&bytes)?;
    sink.flush()?;
    Ok(())
}

pub fn load_model<R: Read>(mut source: R) -> Result<(EnvelopeMeta, Artifact), PersistError> {
    #[derive(Deserialize)]
    struct Version {
        format_version: Option<u64>,
    }
    #[derive(Deserialize)]
    struct Header {
        kind: EnvelopeKind,
        created_at: String,
        training_fingerprint: String,
    }
    #[derive(Deserialize)]
    struct PayloadOnly<T> {
        payload: T,
    }
    fn payload<T: for<'de> Deserialize<'de>>(bytes: &[u8], kind: EnvelopeKind) -> Result<T, PersistError> {
        serde_json::from_slice::<PayloadOnly<T>>(bytes)
            .map(|p| p.payload)
            .map_err(|e| PersistError::CorruptPayload(format!("{kind:?} payload: {e}")))
    }

    let mut bytes = Vec::new();
    source.read_to_end(&mut bytes)?;
    let corrupt = |e: serde_json::Error| PersistError::CorruptPayload(e.to_string());
    let version = serde_json::from_slice::<Version>(&bytes)
        .map_err(corrupt)?
        .format_version
        .ok_or_else(|| PersistError::CorruptPayload("missing format_version".into()))?;
    if version != FORMAT_VERSION {
        return Err(PersistError::UnknownVersion(version));
    }
    let head: Header = serde_json::from_slice(&bytes).map_err(corrupt)?;
    let artifact = match head.kind {
        EnvelopeKind::Linear => Artifact::Model(TrainedModel::Linear(payload(&bytes, head.kind)?)),
        EnvelopeKind::Forest => Artifact::Model(TrainedModel::Forest(payload(&bytes, head.kind)?)),
        EnvelopeKind::Gbdt => Artifact::Model(TrainedModel::Gbdt(payload(&bytes, head.kind)?)),
        EnvelopeKind::Svr => Artifact::Model(TrainedModel::Svr(payload(&bytes, head.kind)?)),
        EnvelopeKind::Encoder => Artifact::Encoder(payload(&bytes, head.kind)?),
    };
    Ok((EnvelopeMeta { created_at: head.created_at, training_fingerprint: head.training_fingerprint }, artifact))
}
