//! Framed binary protocol spoken on the gateway's TCP channels.
//!
//! Every message is one frame:
//!
//! ```text
//! length    u32 little-endian, counts the type byte plus the payload
//! type      u8
//! payload   length - 1 bytes
//! ```
//!
//! Message types:
//!
//! ```text
//! 0x01 STATE        world state snapshot           gateway -> planner
//! 0x02 COMMAND      proposed command               planner -> gateway
//! 0x03 VERDICT      decision for the last command  gateway -> planner
//! 0x04 RULE_UPDATE  raw rule bundle bytes          admin   -> gateway
//! 0x05 UPDATE_ACK   accepted, carries new version  gateway -> admin
//! 0x06 UPDATE_NACK  refusal with reason text       gateway -> either
//! ```
//!
//! Payload encodings reuse the little-endian conventions of the artifact
//! formats. Values are tagged: 0 bool (one byte), 1 int (i64), 2 enum
//! (u16-length UTF-8). States are a u16 field count followed by name/value
//! pairs; commands are a kind name followed by the same pair encoding.
//! Decoders validate against the active schema, so a frame that names
//! unknown fields or out-of-domain values is refused at the boundary.

use std::io::{self, Read, Write};

use thiserror::Error;

use crate::bundle::BundleError;
use crate::bytes::{read_str16, write_str16, Reader};
use crate::engine::{Command, Decision, Verdict, WorldState};
use crate::schema::{Schema, Value};

pub const MSG_STATE: u8 = 0x01;
pub const MSG_COMMAND: u8 = 0x02;
pub const MSG_VERDICT: u8 = 0x03;
pub const MSG_RULE_UPDATE: u8 = 0x04;
pub const MSG_UPDATE_ACK: u8 = 0x05;
pub const MSG_UPDATE_NACK: u8 = 0x06;

/// Ceiling on a frame's payload; rule bundles are the largest legitimate
/// cargo and stay far below this.
pub const MAX_FRAME_PAYLOAD: u32 = 64 * 1024 * 1024;

#[derive(Debug, Error)]
pub enum WireError {
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error("frame of {len} bytes exceeds the {max} byte limit")]
    FrameTooLarge { len: u32, max: u32 },
    #[error("zero-length frame")]
    EmptyFrame,
    #[error("unknown message type 0x{0:02x}")]
    UnknownMessageType(u8),
    #[error("payload structure: {0}")]
    Payload(#[from] BundleError),
    #[error("payload rejected: {0}")]
    Malformed(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Frame {
    pub msg_type: u8,
    pub payload: Vec<u8>,
}

impl Frame {
    pub fn new(msg_type: u8, payload: Vec<u8>) -> Self {
        Frame { msg_type, payload }
    }
}

pub fn write_frame(w: &mut impl Write, frame: &Frame) -> io::Result<()> {
    let len = frame.payload.len() as u32 + 1;
    w.write_all(&len.to_le_bytes())?;
    w.write_all(&[frame.msg_type])?;
    w.write_all(&frame.payload)?;
    w.flush()
}

pub fn read_frame(r: &mut impl Read) -> Result<Frame, WireError> {
    let mut len_bytes = [0u8; 4];
    r.read_exact(&mut len_bytes)?;
    let len = u32::from_le_bytes(len_bytes);
    if len == 0 {
        return Err(WireError::EmptyFrame);
    }
    if len - 1 > MAX_FRAME_PAYLOAD {
        return Err(WireError::FrameTooLarge {
            len,
            max: MAX_FRAME_PAYLOAD,
        });
    }
    let mut msg_type = [0u8; 1];
    r.read_exact(&mut msg_type)?;
    let msg_type = msg_type[0];
    if !(MSG_STATE..=MSG_UPDATE_NACK).contains(&msg_type) {
        // Drain the payload so the stream stays framed, then report.
        let mut sink = vec![0u8; len as usize - 1];
        r.read_exact(&mut sink)?;
        return Err(WireError::UnknownMessageType(msg_type));
    }
    let mut payload = vec![0u8; len as usize - 1];
    r.read_exact(&mut payload)?;
    Ok(Frame { msg_type, payload })
}

// ---------------------------------------------------------------------------
// value and field-map codecs

const TAG_BOOL: u8 = 0;
const TAG_INT: u8 = 1;
const TAG_ENUM: u8 = 2;

fn write_value(out: &mut Vec<u8>, value: &Value) {
    match value {
        Value::Bool(b) => {
            out.push(TAG_BOOL);
            out.push(*b as u8);
        }
        Value::Int(i) => {
            out.push(TAG_INT);
            out.extend_from_slice(&i.to_le_bytes());
        }
        Value::Enum(name) => {
            out.push(TAG_ENUM);
            write_str16(out, name);
        }
    }
}

fn read_value(r: &mut Reader<'_>) -> Result<Value, WireError> {
    match r.u8()? {
        TAG_BOOL => match r.u8()? {
            0 => Ok(Value::Bool(false)),
            1 => Ok(Value::Bool(true)),
            other => Err(WireError::Malformed(format!("bool byte {other}"))),
        },
        TAG_INT => Ok(Value::Int(r.i64()?)),
        TAG_ENUM => Ok(Value::Enum(read_str16(r)?)),
        other => Err(WireError::Malformed(format!("unknown value tag {other}"))),
    }
}

fn write_fields<'a, I>(out: &mut Vec<u8>, fields: I, count: usize)
where
    I: Iterator<Item = (&'a String, &'a Value)>,
{
    out.extend_from_slice(&(count as u16).to_le_bytes());
    for (name, value) in fields {
        write_str16(out, name);
        write_value(out, value);
    }
}

fn read_fields(r: &mut Reader<'_>) -> Result<std::collections::BTreeMap<String, Value>, WireError> {
    let count = r.u16()?;
    let mut fields = std::collections::BTreeMap::new();
    for _ in 0..count {
        let name = read_str16(r)?;
        let value = read_value(r)?;
        if fields.insert(name.clone(), value).is_some() {
            return Err(WireError::Malformed(format!("duplicate field `{name}`")));
        }
    }
    Ok(fields)
}

// ---------------------------------------------------------------------------
// message payloads

pub fn encode_state(state: &WorldState) -> Vec<u8> {
    let mut out = Vec::new();
    write_fields(&mut out, state.fields().iter(), state.fields().len());
    out
}

pub fn decode_state(bytes: &[u8], schema: &Schema) -> Result<WorldState, WireError> {
    let mut r = Reader::new(bytes);
    let fields = read_fields(&mut r)?;
    r.finish()?;
    WorldState::new(schema, fields).map_err(|e| WireError::Malformed(e.to_string()))
}

pub fn encode_command(command: &Command) -> Vec<u8> {
    let mut out = Vec::new();
    write_str16(&mut out, command.kind());
    write_fields(&mut out, command.args().iter(), command.args().len());
    out
}

pub fn decode_command(bytes: &[u8], schema: &Schema) -> Result<Command, WireError> {
    let mut r = Reader::new(bytes);
    let kind = read_str16(&mut r)?;
    let args = read_fields(&mut r)?;
    r.finish()?;
    Command::new(schema, &kind, args).map_err(|e| WireError::Malformed(e.to_string()))
}

/// The slice of a verdict that crosses the wire: the decision, the command
/// that was (or would be) executed, and any feedback text. The evaluation
/// trace stays gateway-side.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WireVerdict {
    pub decision: Decision,
    pub output: Command,
    pub feedback: Option<String>,
}

impl From<&Verdict> for WireVerdict {
    fn from(v: &Verdict) -> Self {
        WireVerdict {
            decision: v.decision,
            output: v.output.clone(),
            feedback: v.feedback.clone(),
        }
    }
}

pub fn encode_verdict(verdict: &WireVerdict) -> Vec<u8> {
    let mut out = Vec::new();
    out.push(match verdict.decision {
        Decision::Passed => 0,
        Decision::Rectified => 1,
        Decision::Denied => 2,
    });
    out.extend_from_slice(&encode_command(&verdict.output));
    match &verdict.feedback {
        None => out.push(0),
        Some(text) => {
            out.push(1);
            write_str16(&mut out, text);
        }
    }
    out
}

pub fn decode_verdict(bytes: &[u8], schema: &Schema) -> Result<WireVerdict, WireError> {
    let mut r = Reader::new(bytes);
    let decision = match r.u8()? {
        0 => Decision::Passed,
        1 => Decision::Rectified,
        2 => Decision::Denied,
        other => return Err(WireError::Malformed(format!("decision byte {other}"))),
    };
    let kind = read_str16(&mut r)?;
    let args = read_fields(&mut r)?;
    let output =
        Command::new(schema, &kind, args).map_err(|e| WireError::Malformed(e.to_string()))?;
    let feedback = match r.u8()? {
        0 => None,
        1 => Some(read_str16(&mut r)?),
        other => return Err(WireError::Malformed(format!("feedback byte {other}"))),
    };
    r.finish()?;
    Ok(WireVerdict {
        decision,
        output,
        feedback,
    })
}

pub fn encode_update_ack(version: u64) -> Vec<u8> {
    version.to_le_bytes().to_vec()
}

pub fn decode_update_ack(bytes: &[u8]) -> Result<u64, WireError> {
    let mut r = Reader::new(bytes);
    let version = r.u64()?;
    r.finish()?;
    Ok(version)
}

pub fn encode_update_nack(reason: &str) -> Vec<u8> {
    let mut out = Vec::new();
    write_str16(&mut out, reason);
    out
}

pub fn decode_update_nack(bytes: &[u8]) -> Result<String, WireError> {
    let mut r = Reader::new(bytes);
    let reason = read_str16(&mut r)?;
    r.finish()?;
    Ok(reason)
}
