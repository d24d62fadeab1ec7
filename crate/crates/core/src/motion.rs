//! Gesture sequences and the canonical text format.
//!
//! ```text
//! gesture-seq v1
//! skeleton <hash>
//! joints <J>
//! fps <fps>
//! frames <n>
//! task narration|conversation
//! emotion <v> <a> <d> [term]
//! gender female|male
//! handedness left|right
//! sentence <text, with \n and \\ escaped>
//! data
//! <4J reals per frame line, w x y z per joint>
//! ```
//!
//! Reals are written in shortest round-trip form, so reading back a written
//! file reproduces every value exactly.

use std::fmt::Write as _;
use std::path::Path;
use std::sync::Arc;

use crate::affect::VadPoint;
use crate::error::{Error, Result};
use crate::quat::Quaternion;
use crate::skeleton::{Pose, Skeleton};
use crate::text::AgentAttributes;

#[derive(Clone, Debug, PartialEq)]
pub struct GestureSequence {
    pub skeleton: Arc<Skeleton>,
    pub fps: f64,
    pub frames: Vec<Pose>,
    pub attributes: AgentAttributes,
    pub sentence: String,
}

impl GestureSequence {
    pub fn new(
        skeleton: Arc<Skeleton>,
        fps: f64,
        frames: Vec<Pose>,
        attributes: AgentAttributes,
        sentence: String,
    ) -> Result<Self> {
        if !(fps > 0.0 && fps.is_finite()) {
            return Err(Error::Config(format!("fps must be positive, got {fps}")));
        }
        if let Some(f) = frames.iter().find(|f| f.len() != skeleton.len()) {
            return Err(Error::LengthMismatch(f.len(), skeleton.len()));
        }
        Ok(Self {
            skeleton,
            fps,
            frames,
            attributes,
            sentence,
        })
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn joints(&self) -> usize {
        self.skeleton.len()
    }

    /// Extend with EoS poses up to `len` frames; longer sequences are cut.
    pub fn padded(&self, len: usize) -> Self {
        let mut out = self.clone();
        out.frames.truncate(len);
        out.frames.resize(len, self.skeleton.eos().clone());
        out
    }

    pub fn to_canonical_string(&self) -> String {
        let a = &self.attributes;
        let e = a.emotion;
        let mut out = String::from("gesture-seq v1\n");
        let _ = writeln!(out, "skeleton {}", self.skeleton.hash());
        let _ = writeln!(out, "joints {}", self.skeleton.len());
        let _ = writeln!(out, "fps {}", self.fps);
        let _ = writeln!(out, "frames {}", self.frames.len());
        let _ = writeln!(out, "task {}", a.task.as_str());
        let _ = write!(out, "emotion {} {} {}", e.valence, e.arousal, e.dominance);
        if let Some(term) = &a.emotion_term {
            let _ = write!(out, " {term}");
        }
        out.push('\n');
        let _ = writeln!(out, "gender {}", a.gender.as_str());
        let _ = writeln!(out, "handedness {}", a.handedness.as_str());
        let _ = writeln!(out, "sentence {}", escape(&self.sentence));
        out.push_str("data\n");
        for f in &self.frames {
            let mut first = true;
            for v in f.flatten() {
                if !first {
                    out.push(' ');
                }
                first = false;
                let _ = write!(out, "{v}");
            }
            out.push('\n');
        }
        out
    }

    /// Parse the canonical format; the header's skeleton hash must match
    /// `skeleton`.
    pub fn parse_canonical(text: &str, skeleton: Arc<Skeleton>, what: &str) -> Result<Self> {
        let end = text.lines().count();
        let mut lines = text.lines().enumerate().map(|(n, l)| (n + 1, l));
        let mut next = |key: &str| -> Result<(usize, String)> {
            let (n, line) = lines
                .next()
                .ok_or_else(|| Error::parse(what, end, format!("missing `{key}` line")))?;
            let rest = if key == "gesture-seq" || key == "data" {
                (line == key_line(key)).then(String::new)
            } else {
                line.strip_prefix(key)
                    .and_then(|r| r.strip_prefix(' '))
                    .map(str::to_string)
            };
            rest.map(|r| (n, r))
                .ok_or_else(|| Error::parse(what, n, format!("expected `{}`", key_line(key))))
        };
        next("gesture-seq")?;
        let (n, hash) = next("skeleton")?;
        if hash != skeleton.hash() {
            return Err(Error::parse(
                what,
                n,
                format!("skeleton hash {hash} does not match loaded skeleton {}", skeleton.hash()),
            ));
        }
        let (n, joints) = next("joints")?;
        let joints: usize = num(&joints, what, n)?;
        if joints != skeleton.len() {
            return Err(Error::parse(what, n, format!("{joints} joints, skeleton has {}", skeleton.len())));
        }
        let (n, fps) = next("fps")?;
        let fps: f64 = num(&fps, what, n)?;
        let (n, count) = next("frames")?;
        let count: usize = num(&count, what, n)?;
        let (n, task) = next("task")?;
        let task = task.parse().map_err(|e: Error| Error::parse(what, n, e.to_string()))?;
        let (n, emotion) = next("emotion")?;
        let fields: Vec<&str> = emotion.split(' ').collect();
        if !(3..=4).contains(&fields.len()) {
            return Err(Error::parse(what, n, "emotion needs v a d [term]"));
        }
        let emotion = VadPoint::new(num(fields[0], what, n)?, num(fields[1], what, n)?, num(fields[2], what, n)?)
            .map_err(|e| Error::parse(what, n, e.to_string()))?;
        let term = fields.get(3).map(|s| s.to_string());
        let (n, gender) = next("gender")?;
        let gender = gender.parse().map_err(|e: Error| Error::parse(what, n, e.to_string()))?;
        let (n, hand) = next("handedness")?;
        let handedness = hand.parse().map_err(|e: Error| Error::parse(what, n, e.to_string()))?;
        let (n, sentence) = next("sentence")?;
        let sentence = unescape(&sentence).ok_or_else(|| Error::parse(what, n, "bad escape in sentence"))?;
        let (mut last, _) = next("data")?;

        let mut frames = Vec::with_capacity(count);
        for (n, line) in lines {
            last = n;
            if line.is_empty() {
                continue;
            }
            let vals: Vec<f64> = line
                .split(' ')
                .map(|v| num(v, what, n))
                .collect::<Result<_>>()?;
            if vals.len() != 4 * joints {
                return Err(Error::parse(what, n, format!("expected {} values, got {}", 4 * joints, vals.len())));
            }
            let rots = vals.chunks_exact(4).map(|c| Quaternion::new(c[0], c[1], c[2], c[3])).collect();
            frames.push(Pose::new(rots).map_err(|e| Error::parse(what, n, e.to_string()))?);
        }
        if frames.len() != count {
            return Err(Error::parse(
                what,
                last,
                format!("header declares {count} frames, found {}", frames.len()),
            ));
        }
        let attributes = AgentAttributes {
            task,
            emotion,
            emotion_term: term,
            gender,
            handedness,
        };
        Self::new(skeleton, fps, frames, attributes, sentence).map_err(|e| Error::parse(what, 4, e.to_string()))
    }
}

fn key_line(key: &str) -> &str {
    match key {
        "gesture-seq" => "gesture-seq v1",
        other => other,
    }
}

fn num<T: std::str::FromStr>(s: &str, what: &str, line: usize) -> Result<T> {
    s.trim()
        .parse()
        .map_err(|_| Error::parse(what, line, format!("bad number {s:?}")))
}

fn escape(s: &str) -> String {
    s.replace('\\', "\\\\").replace('\n', "\\n").replace('\r', "\\r")
}

fn unescape(s: &str) -> Option<String> {
    let mut out = String::with_capacity(s.len());
    let mut chars = s.chars();
    while let Some(c) = chars.next() {
        if c == '\\' {
            match chars.next()? {
                '\\' => out.push('\\'),
                'n' => out.push('\n'),
                'r' => out.push('\r'),
                _ => return None,
            }
        } else {
            out.push(c);
        }
    }
    Some(out)
}

pub fn write_canonical(seq: &GestureSequence, path: &Path) -> Result<()> {
    std::fs::write(path, seq.to_canonical_string()).map_err(|e| Error::io(path, e))
}

pub fn read_canonical(path: &Path, skeleton: Arc<Skeleton>) -> Result<GestureSequence> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    GestureSequence::parse_canonical(&text, skeleton, &path.display().to_string())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::text::{Gender, Handedness, Task};

    fn sample() -> GestureSequence {
        let s = Arc::new(Skeleton::canonical());
        let mut f2 = s.sos().rotations().to_vec();
        f2[3] = Quaternion::from_axis_angle([0.3, -1.0, 0.2], 0.123456789);
        let attrs = AgentAttributes {
            task: Task::Conversation,
            emotion: VadPoint::new(0.969, 0.867, 0.717).unwrap(),
            emotion_term: Some("joyous".into()),
            gender: Gender::Male,
            handedness: Handedness::Left,
        };
        GestureSequence::new(
            s.clone(),
            120.0,
            vec![s.sos().clone(), Pose::new(f2).unwrap()],
            attrs,
            "Well, hello\\there\nfriend".into(),
        )
        .unwrap()
    }

    #[test]
    fn canonical_round_trip_is_exact() {
        let seq = sample();
        let text = seq.to_canonical_string();
        let back = GestureSequence::parse_canonical(&text, seq.skeleton.clone(), "mem").unwrap();
        assert_eq!(back, seq);
        assert_eq!(back.to_canonical_string(), text);
    }

    #[test]
    fn frame_count_mismatch_is_reported() {
        let seq = sample();
        let text = seq.to_canonical_string().replace("frames 2", "frames 3");
        let err = GestureSequence::parse_canonical(&text, seq.skeleton.clone(), "g").unwrap_err();
        assert!(err.to_string().contains("declares 3 frames"), "{err}");
    }

    #[test]
    fn skeleton_hash_is_checked() {
        let seq = sample();
        let other = Arc::new(Skeleton::canonical().scaled(2.0));
        let err = GestureSequence::parse_canonical(&seq.to_canonical_string(), other, "g").unwrap_err();
        assert!(err.to_string().starts_with("g:2"), "{err}");
    }

    #[test]
    fn padding_uses_eos_exactly() {
        let seq = sample().padded(5);
        assert_eq!(seq.len(), 5);
        for f in &seq.frames[2..] {
            assert_eq!(f, seq.skeleton.eos());
        }
        assert_eq!(sample().padded(1).len(), 1);
    }
}
