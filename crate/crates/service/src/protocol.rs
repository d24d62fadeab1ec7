//! Newline-delimited JSON wire messages.

use serde::{Deserialize, Serialize};

use gesture_core::kinematics::forward_kinematics;
use gesture_core::skeleton::{Pose, Skeleton};
use gesture_core::Result;

pub const PROTOCOL_VERSION: u32 = 1;
pub const DEFAULT_FPS_OUT: f64 = 120.0;

/// Emotion as a lexicon term or an explicit VAD triple.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Emotion {
    Term(String),
    Vad([f64; 3]),
}

impl Emotion {
    /// Form accepted by [`gesture_core::text::parse_emotion`].
    pub fn spec(&self) -> String {
        match self {
            Emotion::Term(t) => t.clone(),
            Emotion::Vad([v, a, d]) => format!("{v},{a},{d}"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GenerationRequest {
    pub id: String,
    pub sentence: String,
    #[serde(default = "default_task")]
    pub task: String,
    #[serde(default = "default_emotion")]
    pub emotion: Emotion,
    #[serde(default = "default_gender")]
    pub gender: String,
    #[serde(default = "default_handedness")]
    pub handedness: String,
    #[serde(default = "default_fps")]
    pub fps_out: f64,
}

fn default_task() -> String {
    "narration".into()
}

fn default_emotion() -> Emotion {
    Emotion::Vad([0.5, 0.5, 0.5])
}

fn default_gender() -> String {
    "female".into()
}

fn default_handedness() -> String {
    "right".into()
}

fn default_fps() -> f64 {
    DEFAULT_FPS_OUT
}

/// Client-to-server messages.
#[derive(Clone, Debug, PartialEq, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum Incoming {
    Request {
        v: u32,
        #[serde(flatten)]
        request: GenerationRequest,
    },
    Skeleton {
        v: u32,
        #[serde(default)]
        id: Option<String>,
    },
}

impl Incoming {
    pub fn version(&self) -> u32 {
        match self {
            Incoming::Request { v, .. } | Incoming::Skeleton { v, .. } => *v,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrameMessage {
    pub v: u32,
    #[serde(rename = "type")]
    pub kind: String,
    pub id: String,
    pub t: usize,
    pub quats: Vec<[f64; 4]>,
    pub pos: Vec<[f64; 3]>,
    pub done: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryMessage {
    pub v: u32,
    #[serde(rename = "type")]
    pub kind: String,
    pub id: String,
    pub frames: usize,
    pub fps: f64,
    pub mean_latency_ms: f64,
    pub p95_latency_ms: f64,
    pub stopped_at_eos: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErrorMessage {
    pub v: u32,
    #[serde(rename = "type")]
    pub kind: String,
    pub id: Option<String>,
    pub message: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SkeletonMessage {
    pub v: u32,
    #[serde(rename = "type")]
    pub kind: String,
    pub id: Option<String>,
    pub names: Vec<String>,
    /// Parent index per joint, −1 for the root.
    pub parents: Vec<i64>,
    pub rest: Vec<[f64; 3]>,
}

/// Round to 9 significant digits.
pub fn sig9(x: f64) -> f64 {
    format!("{x:.8e}").parse().expect("formatted float parses")
}

pub fn frame_message(id: &str, t: usize, pose: &Pose, skeleton: &Skeleton, done: bool) -> Result<FrameMessage> {
    let pos = forward_kinematics(pose, skeleton)?;
    Ok(FrameMessage {
        v: PROTOCOL_VERSION,
        kind: "frame".into(),
        id: id.to_string(),
        t,
        quats: pose.rotations().iter().map(|q| q.to_array().map(sig9)).collect(),
        pos: pos.into_iter().map(|p| p.map(sig9)).collect(),
        done,
    })
}

/// Millisecond mean and 95th percentile (nearest rank) of `latencies_ms`.
pub fn latency_stats(latencies_ms: &[f64]) -> (f64, f64) {
    if latencies_ms.is_empty() {
        return (0.0, 0.0);
    }
    let mean = latencies_ms.iter().sum::<f64>() / latencies_ms.len() as f64;
    let mut sorted = latencies_ms.to_vec();
    sorted.sort_by(f64::total_cmp);
    let rank = ((0.95 * sorted.len() as f64).ceil() as usize).clamp(1, sorted.len());
    (mean, sorted[rank - 1])
}

pub fn summary_message(id: &str, latencies_ms: &[f64], fps: f64, stopped_at_eos: bool) -> SummaryMessage {
    let (mean, p95) = latency_stats(latencies_ms);
    SummaryMessage {
        v: PROTOCOL_VERSION,
        kind: "summary".into(),
        id: id.to_string(),
        frames: latencies_ms.len(),
        fps,
        mean_latency_ms: mean,
        p95_latency_ms: p95,
        stopped_at_eos,
    }
}

pub fn error_message(id: Option<&str>, message: impl Into<String>) -> ErrorMessage {
    ErrorMessage {
        v: PROTOCOL_VERSION,
        kind: "error".into(),
        id: id.map(str::to_string),
        message: message.into(),
    }
}

pub fn skeleton_message(id: Option<&str>, skeleton: &Skeleton) -> Result<SkeletonMessage> {
    let rest = forward_kinematics(skeleton.sos(), skeleton)?;
    Ok(SkeletonMessage {
        v: PROTOCOL_VERSION,
        kind: "skeleton".into(),
        id: id.map(str::to_string),
        names: skeleton.names().iter().map(|n| n.to_string()).collect(),
        parents: skeleton.parents().iter().map(|p| p.map_or(-1, |i| i as i64)).collect(),
        rest: rest.into_iter().map(|p| p.map(sig9)).collect(),
    })
}

/// One NDJSON line, newline included.
pub fn to_line<T: Serialize>(msg: &T) -> String {
    let mut s = serde_json::to_string(msg).expect("message serializes");
    s.push('\n');
    s
}

/// Parse a client line; errors carry the request id when one is readable.
pub fn parse_incoming(line: &str) -> std::result::Result<Incoming, (Option<String>, String)> {
    let value: serde_json::Value = serde_json::from_str(line).map_err(|e| (None, format!("malformed message: {e}")))?;
    let id = value.get("id").and_then(|v| v.as_str()).map(str::to_string);
    let msg: Incoming = serde_json::from_value(value).map_err(|e| (id.clone(), format!("invalid message: {e}")))?;
    if msg.version() != PROTOCOL_VERSION {
        return Err((id, format!("unsupported protocol version {}", msg.version())));
    }
    Ok(msg)
}
