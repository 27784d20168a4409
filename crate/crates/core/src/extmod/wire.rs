//! Framed RPC wire format spoken between the core and tool modules.
//!
//! ```text
//! +----------------------+-----------------------------+
//! | length (4 bytes, BE) | JSON object (length bytes)  |
//! +----------------------+-----------------------------+
//! ```
//!
//! Requests are `{id, op, function, args, blobs}`; responses are
//! `{id, ok, result, error, state, functions, protocol_version, module,
//! blobs, written}`. Fields always appear in that order and absent values
//! are `null`, so identical structures produce identical bytes.

use std::collections::BTreeMap;
use std::io::{self, Read, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::interpreter::{ArgValue, Param};
use crate::variables::WireBlob;

pub const PROTOCOL_VERSION: u32 = 1;
/// Frames above this size are rejected before allocation.
pub const MAX_FRAME: usize = 32 * 1024 * 1024;

#[derive(Debug, Error)]
pub enum WireError {
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
    #[error("connection closed by peer")]
    Closed,
    #[error("frame of {0} bytes exceeds the {MAX_FRAME}-byte limit")]
    TooLarge(usize),
    #[error("undecodable frame: {0}")]
    Decode(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Op {
    Describe,
    Invoke,
    State,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WireArg {
    Text(String),
    Number(f64),
    Ref(String),
    Parts(Vec<WireArg>),
}

impl From<&ArgValue> for WireArg {
    fn from(v: &ArgValue) -> Self {
        match v {
            ArgValue::Text(s) | ArgValue::Name(s) => WireArg::Text(s.clone()),
            ArgValue::Number(n) => WireArg::Number(*n),
            ArgValue::Ref(r) => WireArg::Ref(r.clone()),
            ArgValue::Parts(p) => WireArg::Parts(p.iter().map(WireArg::from).collect()),
        }
    }
}

impl WireArg {
    /// Flattens the argument to text, resolving references against `blobs`.
    pub fn to_text(&self, blobs: &[WireBlob]) -> Result<String, String> {
        Ok(match self {
            WireArg::Text(s) => s.clone(),
            WireArg::Number(n) => format_number(*n),
            WireArg::Ref(name) => {
                let blob = blobs
                    .iter()
                    .find(|b| b.name == *name)
                    .ok_or_else(|| format!("reference '{name}' has no attached value"))?;
                let c = crate::variables::import_by_value(blob).map_err(|e| e.to_string())?;
                c.to_text_lossy()
            }
            WireArg::Parts(parts) => {
                let mut out = String::new();
                for p in parts {
                    out.push_str(&p.to_text(blobs)?);
                }
                out
            }
        })
    }
}

pub fn format_number(n: f64) -> String {
    if n.fract() == 0.0 && n.abs() < 1e15 {
        format!("{}", n as i64)
    } else {
        format!("{n}")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Request {
    pub id: u64,
    pub op: Op,
    pub function: Option<String>,
    pub args: BTreeMap<String, WireArg>,
    pub blobs: Vec<WireBlob>,
}

impl Request {
    pub fn describe(id: u64) -> Self {
        Request {
            id,
            op: Op::Describe,
            function: None,
            args: BTreeMap::new(),
            blobs: Vec::new(),
        }
    }

    pub fn state(id: u64) -> Self {
        Request {
            op: Op::State,
            ..Request::describe(id)
        }
    }
}

/// A function advertised by a module.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FunctionDoc {
    pub name: String,
    #[serde(default)]
    pub params: Vec<Param>,
    #[serde(default)]
    pub documentation: String,
    #[serde(default)]
    pub visible_in_states: Option<Vec<String>>,
}

impl FunctionDoc {
    pub fn visible_in(&self, state: Option<&str>) -> bool {
        match (&self.visible_in_states, state) {
            (None, _) => true,
            (Some(states), Some(s)) => states.iter().any(|x| x == s),
            (Some(_), None) => false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Response {
    pub id: u64,
    pub ok: bool,
    pub result: Option<String>,
    pub error: Option<String>,
    pub state: Option<String>,
    pub functions: Option<Vec<FunctionDoc>>,
    pub protocol_version: Option<u32>,
    pub module: Option<String>,
    #[serde(default)]
    pub blobs: Vec<WireBlob>,
    #[serde(default)]
    pub written: Vec<String>,
}

impl Response {
    pub fn ok(id: u64, result: impl Into<String>) -> Self {
        Response {
            id,
            ok: true,
            result: Some(result.into()),
            error: None,
            state: None,
            functions: None,
            protocol_version: None,
            module: None,
            blobs: Vec::new(),
            written: Vec::new(),
        }
    }

    pub fn err(id: u64, error: impl Into<String>) -> Self {
        Response {
            ok: false,
            result: None,
            error: Some(error.into()),
            ..Response::ok(id, "")
        }
    }
}

pub fn encode<T: Serialize>(msg: &T) -> Vec<u8> {
    let payload = serde_json::to_vec(msg).expect("wire types serialize infallibly");
    let mut frame = Vec::with_capacity(4 + payload.len());
    frame.extend_from_slice(&(payload.len() as u32).to_be_bytes());
    frame.extend_from_slice(&payload);
    frame
}

pub fn write_frame<W: Write, T: Serialize>(w: &mut W, msg: &T) -> Result<(), WireError> {
    w.write_all(&encode(msg))?;
    w.flush()?;
    Ok(())
}

/// Reads one frame's payload.
pub fn read_frame<R: Read>(r: &mut R) -> Result<Vec<u8>, WireError> {
    let mut len = [0u8; 4];
    match r.read_exact(&mut len) {
        Ok(()) => {}
        Err(e) if e.kind() == io::ErrorKind::UnexpectedEof => return Err(WireError::Closed),
        Err(e) => return Err(e.into()),
    }
    let n = u32::from_be_bytes(len) as usize;
    if n > MAX_FRAME {
        return Err(WireError::TooLarge(n));
    }
    let mut buf = vec![0u8; n];
    match r.read_exact(&mut buf) {
        Ok(()) => Ok(buf),
        Err(e) if e.kind() == io::ErrorKind::UnexpectedEof => Err(WireError::Closed),
        Err(e) => Err(e.into()),
    }
}

pub fn decode<T: for<'de> Deserialize<'de>>(payload: &[u8]) -> Result<T, WireError> {
    serde_json::from_slice(payload).map_err(|e| WireError::Decode(e.to_string()))
}

pub fn read_message<R: Read, T: for<'de> Deserialize<'de>>(r: &mut R) -> Result<T, WireError> {
    decode(&read_frame(r)?)
}
