//! BVH import and export.
//!
//! Export writes the skeleton's own joint names and offsets, a 6-channel root
//! (positions always zero) and `Xrotation Yrotation Zrotation` elsewhere, in
//! degrees. Import accepts any rotation channel order; position channels are
//! read and ignored since the root is pinned to the origin.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::motion::GestureSequence;
use crate::quat::{euler_to_quat, quat_to_euler, EulerTriple, Quaternion};
use crate::skeleton::{Pose, Skeleton};
use crate::text::AgentAttributes;

pub fn bvh_string(seq: &GestureSequence) -> String {
    let skel = &seq.skeleton;
    let mut out = String::from("HIERARCHY\n");
    write_joint(skel, 0, 0, &mut out);
    out.push_str("MOTION\n");
    let _ = writeln!(out, "Frames: {}", seq.frames.len());
    let _ = writeln!(out, "Frame Time: {}", 1.0 / seq.fps);
    for f in &seq.frames {
        out.push_str("0 0 0");
        for q in f.rotations() {
            let e = quat_to_euler(*q);
            let _ = write!(out, " {} {} {}", e.x.to_degrees(), e.y.to_degrees(), e.z.to_degrees());
        }
        out.push('\n');
    }
    out
}

fn write_joint(skel: &Skeleton, j: usize, depth: usize, out: &mut String) {
    let pad = "  ".repeat(depth);
    let joint = &skel.joints()[j];
    let o = joint.offset;
    if j == 0 {
        let _ = writeln!(out, "{pad}ROOT {}", joint.name);
    } else {
        let _ = writeln!(out, "{pad}JOINT {}", joint.name);
    }
    let _ = writeln!(out, "{pad}{{");
    let _ = writeln!(out, "{pad}  OFFSET {} {} {}", o[0], o[1], o[2]);
    if j == 0 {
        let _ = writeln!(
            out,
            "{pad}  CHANNELS 6 Xposition Yposition Zposition Xrotation Yrotation Zrotation"
        );
    } else {
        let _ = writeln!(out, "{pad}  CHANNELS 3 Xrotation Yrotation Zrotation");
    }
    let children: Vec<usize> = skel.children(j).collect();
    if children.is_empty() {
        let _ = writeln!(out, "{pad}  End Site");
        let _ = writeln!(out, "{pad}  {{");
        let _ = writeln!(out, "{pad}    OFFSET 0 0 0");
        let _ = writeln!(out, "{pad}  }}");
    }
    for c in children {
        write_joint(skel, c, depth + 1, out);
    }
    let _ = writeln!(out, "{pad}}}");
}

pub fn export_bvh(seq: &GestureSequence, path: &Path) -> Result<()> {
    std::fs::write(path, bvh_string(seq)).map_err(|e| Error::io(path, e))
}

#[derive(Clone, Copy, Debug, PartialEq)]
enum Channel {
    Position,
    Rotation(usize),
}

struct BvhJoint {
    name: String,
    line: usize,
    channels: Vec<Channel>,
}

struct Tokens<'a> {
    items: Vec<(usize, &'a str)>,
    pos: usize,
    what: &'a str,
}

impl<'a> Tokens<'a> {
    fn new(text: &'a str, what: &'a str) -> Self {
        let items = text
            .lines()
            .enumerate()
            .flat_map(|(n, l)| l.split_whitespace().map(move |t| (n + 1, t)))
            .collect();
        Self { items, pos: 0, what }
    }

    fn line(&self) -> usize {
        self.items
            .get(self.pos)
            .or(self.items.last())
            .map_or(1, |(n, _)| *n)
    }

    fn peek(&self) -> Option<&'a str> {
        self.items.get(self.pos).map(|(_, t)| *t)
    }

    fn next(&mut self, expect: &str) -> Result<&'a str> {
        let t = self
            .peek()
            .ok_or_else(|| Error::parse(self.what, self.line(), format!("unexpected end of file, expected {expect}")))?;
        self.pos += 1;
        Ok(t)
    }

    fn keyword(&mut self, kw: &str) -> Result<()> {
        let line = self.line();
        let t = self.next(kw)?;
        if t == kw {
            Ok(())
        } else {
            Err(Error::parse(self.what, line, format!("expected {kw}, found {t:?}")))
        }
    }

    fn number<T: std::str::FromStr>(&mut self, expect: &str) -> Result<T> {
        let line = self.line();
        let t = self.next(expect)?;
        t.parse()
            .map_err(|_| Error::parse(self.what, line, format!("expected {expect}, found {t:?}")))
    }

    fn error(&self, msg: impl Into<String>) -> Error {
        Error::parse(self.what, self.line(), msg)
    }
}

fn parse_joint(tok: &mut Tokens, joints: &mut Vec<BvhJoint>) -> Result<()> {
    let line = tok.line();
    let name = tok.next("joint name")?.to_string();
    tok.keyword("{")?;
    tok.keyword("OFFSET")?;
    for _ in 0..3 {
        tok.number::<f64>("offset value")?;
    }
    tok.keyword("CHANNELS")?;
    let n: usize = tok.number("channel count")?;
    let mut channels = Vec::with_capacity(n);
    for _ in 0..n {
        let line = tok.line();
        let c = tok.next("channel name")?;
        channels.push(match c {
            "Xposition" | "Yposition" | "Zposition" => Channel::Position,
            "Xrotation" => Channel::Rotation(0),
            "Yrotation" => Channel::Rotation(1),
            "Zrotation" => Channel::Rotation(2),
            other => return Err(Error::parse(tok.what, line, format!("unknown channel {other:?}"))),
        });
    }
    joints.push(BvhJoint { name, line, channels });
    loop {
        match tok.peek() {
            Some("JOINT") => {
                tok.pos += 1;
                parse_joint(tok, joints)?;
            }
            Some("End") => {
                tok.pos += 1;
                tok.keyword("Site")?;
                tok.keyword("{")?;
                tok.keyword("OFFSET")?;
                for _ in 0..3 {
                    tok.number::<f64>("offset value")?;
                }
                tok.keyword("}")?;
            }
            Some("}") => {
                tok.pos += 1;
                return Ok(());
            }
            Some(other) => return Err(tok.error(format!("unexpected {other:?} in joint {:?}", joints.last().map(|j| &j.name)))),
            None => return Err(tok.error("unexpected end of file inside hierarchy")),
        }
    }
}

/// Parse BVH text onto `skeleton`. `joint_map` renames BVH joints to skeleton
/// joints; names absent from the map are used as-is. Every skeleton joint must
/// be present.
pub fn parse_bvh(
    text: &str,
    skeleton: Arc<Skeleton>,
    joint_map: &HashMap<String, String>,
    what: &str,
) -> Result<GestureSequence> {
    let mut tok = Tokens::new(text, what);
    tok.keyword("HIERARCHY")?;
    tok.keyword("ROOT")?;
    let mut joints = Vec::new();
    parse_joint(&mut tok, &mut joints)?;
    let hierarchy_end = tok.line();

    let mut target = Vec::with_capacity(joints.len());
    let mut seen = vec![false; skeleton.len()];
    for j in &joints {
        let name = joint_map.get(&j.name).unwrap_or(&j.name);
        let idx = skeleton
            .index_of(name)
            .map_err(|_| Error::parse(what, j.line, format!("unknown joint {:?}", j.name)))?;
        seen[idx] = true;
        target.push(idx);
    }
    if let Some(missing) = seen.iter().position(|s| !s) {
        return Err(Error::parse(
            what,
            hierarchy_end,
            format!("joint {:?} missing from hierarchy", skeleton.joints()[missing].name),
        ));
    }

    if tok.peek() != Some("MOTION") {
        return Err(tok.error("missing MOTION section"));
    }
    tok.pos += 1;
    tok.keyword("Frames:")?;
    let frames: usize = tok.number("frame count")?;
    tok.keyword("Frame")?;
    tok.keyword("Time:")?;
    let frame_time: f64 = tok.number("frame time")?;
    if !(frame_time > 0.0 && frame_time.is_finite()) {
        return Err(tok.error(format!("frame time must be positive, got {frame_time}")));
    }
    let mut fps = 1.0 / frame_time;
    if (fps - fps.round()).abs() < 1e-3 {
        fps = fps.round();
    }

    let per_frame: usize = joints.iter().map(|j| j.channels.len()).sum();
    let data_line = tok.line();
    let rest: Vec<(usize, &str)> = tok.items[tok.pos..].to_vec();
    if rest.len() != frames * per_frame {
        let last = rest.last().map_or(data_line, |(n, _)| *n);
        return Err(Error::parse(
            what,
            last,
            format!(
                "header declares {frames} frames of {per_frame} values, found {} values",
                rest.len()
            ),
        ));
    }
    let mut poses = Vec::with_capacity(frames);
    for chunk in rest.chunks(per_frame.max(1)).take(frames) {
        let mut rots = vec![Quaternion::IDENTITY; skeleton.len()];
        let mut k = 0;
        for (j, bj) in joints.iter().enumerate() {
            let mut q = Quaternion::IDENTITY;
            for c in &bj.channels {
                let (line, t) = chunk[k];
                k += 1;
                let v: f64 = t
                    .parse()
                    .map_err(|_| Error::parse(what, line, format!("bad number {t:?}")))?;
                if !v.is_finite() {
                    return Err(Error::parse(what, line, "non-finite channel value"));
                }
                if let Channel::Rotation(axis) = c {
                    let mut a = [0.0; 3];
                    a[*axis] = 1.0;
                    q = q.mul(Quaternion::from_axis_angle(a, v.to_radians()));
                }
            }
            rots[target[j]] = q;
        }
        poses.push(Pose::new(rots)?);
    }
    GestureSequence::new(skeleton, fps, poses, AgentAttributes::default(), String::new())
}

pub fn import_bvh(path: &Path, skeleton: Arc<Skeleton>, joint_map: &HashMap<String, String>) -> Result<GestureSequence> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_bvh(&text, skeleton, joint_map, &path.display().to_string())
}

/// Rotation reconstructed from export's X-Y-Z degree triple. Exposed for
/// checking round-trip error.
pub fn euler_degrees_to_quat(x: f64, y: f64, z: f64) -> Result<Quaternion> {
    euler_to_quat(EulerTriple::new(x.to_radians(), y.to_radians(), z.to_radians()))
}
