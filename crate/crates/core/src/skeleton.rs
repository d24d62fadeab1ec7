//! Directed pose graph with bone offsets and the start/end rest poses.
//!
//! Skeleton file format (whitespace-separated, `#` starts a comment):
//!
//! ```text
//! skeleton v1
//! joint <name> <parent|-> <ox> <oy> <oz>      one line per joint, parents first
//! sos <joint> <w> <x> <y> <z>                 optional, identity when absent
//! eos <joint> <w> <x> <y> <z>                 optional, identity when absent
//! ```
//!
//! Coordinates are meters, y up, z forward, +x on the agent's left side.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::quat::Quaternion;

/// Number of joints in the canonical skeleton.
pub const CANONICAL_JOINTS: usize = 23;

#[derive(Clone, Debug, PartialEq)]
pub struct Joint {
    pub name: String,
    pub parent: Option<usize>,
    pub offset: [f64; 3],
}

/// Joint rotations relative to each joint's parent, one per joint.
#[derive(Clone, Debug, PartialEq)]
pub struct Pose(Vec<Quaternion>);

impl Pose {
    /// Unit norm within this tolerance is required of every rotation.
    pub const UNIT_TOL: f64 = 1e-6;

    pub fn new(rotations: Vec<Quaternion>) -> Result<Self> {
        for q in &rotations {
            if !q.is_finite() {
                return Err(Error::NonFinite("pose rotation"));
            }
            if (q.norm() - 1.0).abs() > Self::UNIT_TOL {
                return Err(Error::Skeleton(format!("non-unit rotation {q:?}")));
            }
        }
        Ok(Self(rotations))
    }

    pub fn identity(joints: usize) -> Self {
        Self(vec![Quaternion::IDENTITY; joints])
    }

    pub fn rotations(&self) -> &[Quaternion] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Flattened `[w, x, y, z]` per joint.
    pub fn flatten(&self) -> Vec<f64> {
        self.0.iter().flat_map(|q| q.to_array()).collect()
    }

    /// Per-joint angular distance to `other`, maximum over joints.
    pub fn max_geodesic(&self, other: &Pose) -> f64 {
        self.0
            .iter()
            .zip(&other.0)
            .fold(0.0, |m, (a, b)| m.max(a.geodesic_distance(*b)))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Skeleton {
    joints: Vec<Joint>,
    sos: Pose,
    eos: Pose,
    index: HashMap<String, usize>,
}

impl Skeleton {
    /// Validates a topologically ordered tree with a single root at index 0.
    pub fn new(joints: Vec<Joint>, sos: Pose, eos: Pose) -> Result<Self> {
        if joints.is_empty() {
            return Err(Error::Skeleton("no joints".into()));
        }
        let mut index = HashMap::with_capacity(joints.len());
        for (i, j) in joints.iter().enumerate() {
            match (i, j.parent) {
                (0, None) => {}
                (0, Some(_)) => return Err(Error::Skeleton("first joint must be the root".into())),
                (_, None) => {
                    return Err(Error::Skeleton(format!("second root {:?}", j.name)));
                }
                (_, Some(p)) if p >= i => {
                    return Err(Error::Skeleton(format!(
                        "joint {:?} listed before its parent",
                        j.name
                    )));
                }
                _ => {}
            }
            if !j.offset.iter().all(|v| v.is_finite()) {
                return Err(Error::NonFinite("joint offset"));
            }
            if index.insert(j.name.clone(), i).is_some() {
                return Err(Error::Skeleton(format!("duplicate joint {:?}", j.name)));
            }
        }
        if sos.len() != joints.len() || eos.len() != joints.len() {
            return Err(Error::Skeleton("rest pose length differs from joint count".into()));
        }
        Ok(Self {
            joints,
            sos,
            eos,
            index,
        })
    }

    pub fn joints(&self) -> &[Joint] {
        &self.joints
    }

    pub fn len(&self) -> usize {
        self.joints.len()
    }

    pub fn is_empty(&self) -> bool {
        self.joints.is_empty()
    }

    pub fn parents(&self) -> Vec<Option<usize>> {
        self.joints.iter().map(|j| j.parent).collect()
    }

    pub fn offsets(&self) -> Vec<[f64; 3]> {
        self.joints.iter().map(|j| j.offset).collect()
    }

    pub fn names(&self) -> Vec<&str> {
        self.joints.iter().map(|j| j.name.as_str()).collect()
    }

    pub fn index_of(&self, name: &str) -> Result<usize> {
        self.index
            .get(name)
            .copied()
            .ok_or_else(|| Error::UnknownJoint(name.to_string()))
    }

    pub fn sos(&self) -> &Pose {
        &self.sos
    }

    pub fn eos(&self) -> &Pose {
        &self.eos
    }

    pub fn children(&self, j: usize) -> impl Iterator<Item = usize> + '_ {
        self.joints
            .iter()
            .enumerate()
            .filter(move |(_, c)| c.parent == Some(j))
            .map(|(i, _)| i)
    }

    pub fn is_leaf(&self, j: usize) -> bool {
        self.children(j).next().is_none()
    }

    /// Same tree with every offset multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> Self {
        let mut s = self.clone();
        for j in &mut s.joints {
            j.offset = j.offset.map(|v| v * factor);
        }
        s
    }

    /// Short stable digest of the serialized definition.
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.to_text().as_bytes());
        digest[..8].iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn to_text(&self) -> String {
        let mut out = String::from("skeleton v1\n");
        for j in &self.joints {
            let parent = j.parent.map_or("-", |p| self.joints[p].name.as_str());
            let _ = writeln!(
                out,
                "joint {} {} {} {} {}",
                j.name, parent, j.offset[0], j.offset[1], j.offset[2]
            );
        }
        for (tag, pose) in [("sos", &self.sos), ("eos", &self.eos)] {
            for (j, q) in self.joints.iter().zip(pose.rotations()) {
                if *q != Quaternion::IDENTITY {
                    let _ = writeln!(out, "{tag} {} {} {} {} {}", j.name, q.w, q.x, q.y, q.z);
                }
            }
        }
        out
    }

    pub fn parse(text: &str, what: &str) -> Result<Self> {
        let mut joints: Vec<Joint> = Vec::new();
        let mut names: HashMap<String, usize> = HashMap::new();
        let mut rest: Vec<(usize, &str, &str, Quaternion)> = Vec::new();
        let mut saw_header = false;
        for (n, raw) in text.lines().enumerate() {
            let line_no = n + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split_whitespace().collect();
            if !saw_header {
                if fields != ["skeleton", "v1"] {
                    return Err(Error::parse(what, line_no, "expected header `skeleton v1`"));
                }
                saw_header = true;
                continue;
            }
            let nums = |s: &[&str]| -> Result<Vec<f64>> {
                s.iter()
                    .map(|v| {
                        v.parse::<f64>()
                            .map_err(|_| Error::parse(what, line_no, format!("bad number {v:?}")))
                    })
                    .collect()
            };
            match fields[0] {
                "joint" => {
                    if fields.len() != 6 {
                        return Err(Error::parse(what, line_no, "joint needs name, parent, 3 offsets"));
                    }
                    let parent = match fields[2] {
                        "-" => None,
                        p => Some(*names.get(p).ok_or_else(|| {
                            Error::parse(what, line_no, format!("unknown parent {p:?}"))
                        })?),
                    };
                    let o = nums(&fields[3..6])?;
                    if names.insert(fields[1].to_string(), joints.len()).is_some() {
                        return Err(Error::parse(what, line_no, format!("duplicate joint {:?}", fields[1])));
                    }
                    joints.push(Joint {
                        name: fields[1].to_string(),
                        parent,
                        offset: [o[0], o[1], o[2]],
                    });
                }
                tag @ ("sos" | "eos") => {
                    if fields.len() != 6 {
                        return Err(Error::parse(what, line_no, "rest pose line needs joint and 4 reals"));
                    }
                    let v = nums(&fields[2..6])?;
                    rest.push((line_no, tag, fields[1], Quaternion::new(v[0], v[1], v[2], v[3])));
                }
                other => {
                    return Err(Error::parse(what, line_no, format!("unknown record {other:?}")));
                }
            }
        }
        if !saw_header {
            return Err(Error::parse(what, 1, "empty skeleton file"));
        }
        let mut sos = vec![Quaternion::IDENTITY; joints.len()];
        let mut eos = sos.clone();
        for (line_no, tag, name, q) in rest {
            let j = *names
                .get(name)
                .ok_or_else(|| Error::parse(what, line_no, format!("unknown joint {name:?}")))?;
            if (q.norm() - 1.0).abs() > Pose::UNIT_TOL {
                return Err(Error::parse(what, line_no, "rest rotation is not unit-norm"));
            }
            if tag == "sos" {
                sos[j] = q;
            } else {
                eos[j] = q;
            }
        }
        Skeleton::new(joints, Pose::new(sos)?, Pose::new(eos)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, &path.display().to_string())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    /// The built-in 23-joint seated agent.
    pub fn canonical() -> Self {
        let spec: [(&str, Option<&str>, [f64; 3]); CANONICAL_JOINTS] = [
            ("root", None, [0.0, 0.0, 0.0]),
            ("spine1", Some("root"), [0.0, 0.10, 0.0]),
            ("spine2", Some("spine1"), [0.0, 0.12, 0.0]),
            ("spine3", Some("spine2"), [0.0, 0.12, 0.0]),
            ("neck", Some("spine3"), [0.0, 0.14, 0.0]),
            ("head", Some("neck"), [0.0, 0.10, 0.02]),
            ("head_end", Some("head"), [0.0, 0.16, 0.0]),
            ("lclavicle", Some("spine3"), [0.03, 0.10, 0.0]),
            ("lshoulder", Some("lclavicle"), [0.15, 0.0, 0.0]),
            ("lelbow", Some("lshoulder"), [0.0, -0.28, 0.0]),
            ("lwrist", Some("lelbow"), [0.0, -0.25, 0.0]),
            ("rclavicle", Some("spine3"), [-0.03, 0.10, 0.0]),
            ("rshoulder", Some("rclavicle"), [-0.15, 0.0, 0.0]),
            ("relbow", Some("rshoulder"), [0.0, -0.28, 0.0]),
            ("rwrist", Some("relbow"), [0.0, -0.25, 0.0]),
            ("lhip", Some("root"), [0.09, -0.05, 0.0]),
            ("lknee", Some("lhip"), [0.0, -0.42, 0.0]),
            ("lankle", Some("lknee"), [0.0, -0.40, 0.0]),
            ("ltoe", Some("lankle"), [0.0, -0.05, 0.13]),
            ("rhip", Some("root"), [-0.09, -0.05, 0.0]),
            ("rknee", Some("rhip"), [0.0, -0.42, 0.0]),
            ("rankle", Some("rknee"), [0.0, -0.40, 0.0]),
            ("rtoe", Some("rankle"), [0.0, -0.05, 0.13]),
        ];
        let names: Vec<&str> = spec.iter().map(|s| s.0).collect();
        let joints: Vec<Joint> = spec
            .iter()
            .map(|(name, parent, offset)| Joint {
                name: name.to_string(),
                parent: parent.map(|p| names.iter().position(|n| *n == p).expect("parent listed")),
                offset: *offset,
            })
            .collect();

        let deg = |d: f64| d.to_radians();
        let x_axis = [1.0, 0.0, 0.0];
        let z_axis = [0.0, 0.0, 1.0];
        let idx = |n: &str| names.iter().position(|m| *m == n).expect("known joint");

        // Seated, thighs forward, shins down, forearms resting on the thighs.
        let mut sos = vec![Quaternion::IDENTITY; CANONICAL_JOINTS];
        for side in ["l", "r"] {
            sos[idx(&format!("{side}hip"))] = Quaternion::from_axis_angle(x_axis, deg(-90.0));
            sos[idx(&format!("{side}knee"))] = Quaternion::from_axis_angle(x_axis, deg(90.0));
            sos[idx(&format!("{side}shoulder"))] = Quaternion::from_axis_angle(x_axis, deg(-20.0));
            sos[idx(&format!("{side}elbow"))] = Quaternion::from_axis_angle(x_axis, deg(-70.0));
        }
        // End pose: same rest with small wrist and toe perturbations.
        let mut eos = sos.clone();
        eos[idx("lwrist")] = sos[idx("lwrist")].mul(Quaternion::from_axis_angle(z_axis, deg(2.0)));
        eos[idx("rwrist")] = sos[idx("rwrist")].mul(Quaternion::from_axis_angle(z_axis, deg(-2.0)));
        eos[idx("ltoe")] = sos[idx("ltoe")].mul(Quaternion::from_axis_angle(x_axis, deg(2.0)));
        eos[idx("rtoe")] = sos[idx("rtoe")].mul(Quaternion::from_axis_angle(x_axis, deg(-2.0)));

        Skeleton::new(
            joints,
            Pose::new(sos).expect("unit"),
            Pose::new(eos).expect("unit"),
        )
        .expect("canonical skeleton is valid")
    }

    /// A chain `root → j1 → … ` of `n` joints with the given offsets, identity
    /// rest poses. Handy for small experiments.
    pub fn chain(offsets: &[[f64; 3]]) -> Result<Self> {
        let joints: Vec<Joint> = offsets
            .iter()
            .enumerate()
            .map(|(i, o)| Joint {
                name: if i == 0 { "root".into() } else { format!("j{i}") },
                parent: i.checked_sub(1),
                offset: *o,
            })
            .collect();
        let n = joints.len();
        Skeleton::new(joints, Pose::identity(n), Pose::identity(n))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn canonical_has_23_joints_and_expected_leaves() {
        let s = Skeleton::canonical();
        assert_eq!(s.len(), CANONICAL_JOINTS);
        let mut leaves: Vec<&str> = (0..s.len())
            .filter(|&j| s.is_leaf(j))
            .map(|j| s.joints()[j].name.as_str())
            .collect();
        leaves.sort();
        assert_eq!(leaves, ["head_end", "ltoe", "lwrist", "rtoe", "rwrist"]);
        assert_ne!(s.sos(), s.eos());
    }

    #[test]
    fn text_round_trip() {
        let s = Skeleton::canonical();
        let back = Skeleton::parse(&s.to_text(), "mem").unwrap();
        assert_eq!(back, s);
        assert_eq!(back.hash(), s.hash());
    }

    #[test]
    fn rejects_bad_trees() {
        let bad_parent = "skeleton v1\njoint root - 0 0 0\njoint a b 0 1 0\n";
        let err = Skeleton::parse(bad_parent, "t").unwrap_err().to_string();
        assert!(err.contains("t:3"), "{err}");
        let two_roots = "skeleton v1\njoint root - 0 0 0\njoint a - 0 1 0\n";
        assert!(Skeleton::parse(two_roots, "t").is_err());
        let dup = "skeleton v1\njoint root - 0 0 0\njoint root root 0 1 0\n";
        assert!(Skeleton::parse(dup, "t").is_err());
        assert!(Skeleton::parse("joint root - 0 0 0\n", "t").is_err());
    }
}
