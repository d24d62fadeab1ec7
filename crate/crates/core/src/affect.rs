//! Scale-free affective body features and the emotion lexicon.
//!
//! Features are defined by an [`AffectTable`], a small data file naming the
//! joints each angle, distance ratio or area ratio is built from:
//!
//! ```text
//! affect-table v1
//! angle    <label> <a> <vertex> <c>             angle at vertex, [0, π]
//! axis     <label> <from> <to> <ax> <ay> <az>   angle between to−from and a fixed axis
//! distance <label> <a> <b> <c> <d>              |a−b| / |c−d|
//! area     <label> <a> <b> <c> <d> <e> <f>      area(a,b,c) / area(d,e,f)
//! ```

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::diff::Real;
use crate::error::{Error, Result};
use crate::skeleton::Skeleton;

/// Denominators are clamped to at least this before dividing.
pub const MIN_DENOMINATOR: f64 = 1e-6;
/// Ratios are capped at this value.
pub const MAX_RATIO: f64 = 1e3;

#[derive(Clone, Debug, PartialEq)]
pub enum FeatureKind {
    Angle([String; 3]),
    Axis([String; 2], [f64; 3]),
    Distance([String; 4]),
    Area([String; 6]),
}

#[derive(Clone, Debug, PartialEq)]
pub struct FeatureDef {
    pub label: String,
    pub kind: FeatureKind,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AffectTable {
    pub features: Vec<FeatureDef>,
}

const CANONICAL_TABLE: &str = "\
affect-table v1
angle A1 head neck root
angle A2 lshoulder lelbow lwrist
angle A3 rshoulder relbow rwrist
angle A4 neck lshoulder lelbow
angle A5 neck rshoulder relbow
axis A6 root neck 0 1 0
angle A7 lshoulder neck rshoulder
distance D1/D4 lwrist root lshoulder rshoulder
distance D2/D4 rwrist root lshoulder rshoulder
distance D8/D5 rwrist head root neck
distance D7/D5 lwrist head root neck
distance D3/D6 lwrist rwrist lshoulder rshoulder
area R1/R2 lwrist neck rwrist lshoulder root rshoulder
area R3/R4 lelbow root relbow lshoulder root rshoulder
area R5/R6 lwrist head rwrist lshoulder root rshoulder
";

impl AffectTable {
    /// The 15-feature table for the canonical skeleton: 7 angles, 5 distance
    /// ratios, 3 area ratios.
    pub fn canonical() -> Self {
        Self::parse(CANONICAL_TABLE, "builtin").expect("builtin table parses")
    }

    /// Angles between every bone and the three coordinate axes. Used for
    /// skeletons the canonical table cannot be resolved on.
    pub fn bone_axes(skeleton: &Skeleton) -> Self {
        let mut features = Vec::new();
        for j in skeleton.joints().iter().skip(1) {
            let parent = &skeleton.joints()[j.parent.expect("non-root")].name;
            for (k, axis) in ["x", "y", "z"].iter().enumerate() {
                let mut a = [0.0; 3];
                a[k] = 1.0;
                features.push(FeatureDef {
                    label: format!("{}_{axis}", j.name),
                    kind: FeatureKind::Axis([parent.clone(), j.name.clone()], a),
                });
            }
        }
        Self { features }
    }

    /// The canonical table when every joint it names exists, bone axes
    /// otherwise.
    pub fn for_skeleton(skeleton: &Skeleton) -> Self {
        let canonical = Self::canonical();
        if canonical.resolve(skeleton).is_ok() {
            canonical
        } else {
            Self::bone_axes(skeleton)
        }
    }

    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    pub fn labels(&self) -> Vec<&str> {
        self.features.iter().map(|f| f.label.as_str()).collect()
    }

    pub fn parse(text: &str, what: &str) -> Result<Self> {
        let mut features = Vec::new();
        let mut saw_header = false;
        for (n, raw) in text.lines().enumerate() {
            let line_no = n + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let f: Vec<&str> = line.split_whitespace().collect();
            if !saw_header {
                if f != ["affect-table", "v1"] {
                    return Err(Error::parse(what, line_no, "expected header `affect-table v1`"));
                }
                saw_header = true;
                continue;
            }
            let need = |k: usize| -> Result<()> {
                if f.len() == k {
                    Ok(())
                } else {
                    Err(Error::parse(what, line_no, format!("{} expects {} fields", f[0], k - 1)))
                }
            };
            let names = |r: std::ops::Range<usize>| -> Vec<String> { f[r].iter().map(|s| s.to_string()).collect() };
            let kind = match f[0] {
                "angle" => {
                    need(5)?;
                    FeatureKind::Angle(names(2..5).try_into().expect("3"))
                }
                "axis" => {
                    need(7)?;
                    let mut axis = [0.0; 3];
                    for (k, v) in f[4..7].iter().enumerate() {
                        axis[k] = v
                            .parse()
                            .map_err(|_| Error::parse(what, line_no, format!("bad number {v:?}")))?;
                    }
                    let norm = axis.iter().map(|v| v * v).sum::<f64>().sqrt();
                    if !(norm > 0.0 && norm.is_finite()) {
                        return Err(Error::parse(what, line_no, "axis must be a nonzero vector"));
                    }
                    FeatureKind::Axis(names(2..4).try_into().expect("2"), axis.map(|v| v / norm))
                }
                "distance" => {
                    need(6)?;
                    FeatureKind::Distance(names(2..6).try_into().expect("4"))
                }
                "area" => {
                    need(8)?;
                    FeatureKind::Area(names(2..8).try_into().expect("6"))
                }
                other => {
                    return Err(Error::parse(what, line_no, format!("unknown feature kind {other:?}")));
                }
            };
            features.push(FeatureDef {
                label: f[1].to_string(),
                kind,
            });
        }
        if !saw_header {
            return Err(Error::parse(what, 1, "empty affect table"));
        }
        Ok(Self { features })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, &path.display().to_string())
    }

    pub fn to_text(&self) -> String {
        let mut out = String::from("affect-table v1\n");
        for f in &self.features {
            let _ = match &f.kind {
                FeatureKind::Angle(j) => writeln!(out, "angle {} {}", f.label, j.join(" ")),
                FeatureKind::Axis(j, a) => {
                    writeln!(out, "axis {} {} {} {} {}", f.label, j.join(" "), a[0], a[1], a[2])
                }
                FeatureKind::Distance(j) => writeln!(out, "distance {} {}", f.label, j.join(" ")),
                FeatureKind::Area(j) => writeln!(out, "area {} {}", f.label, j.join(" ")),
            };
        }
        out
    }

    /// Bind joint names to indices of `skeleton`.
    pub fn resolve(&self, skeleton: &Skeleton) -> Result<ResolvedTable> {
        let idx = |names: &[String]| -> Result<Vec<usize>> {
            names.iter().map(|n| skeleton.index_of(n)).collect()
        };
        let mut items = Vec::with_capacity(self.features.len());
        for f in &self.features {
            items.push(match &f.kind {
                FeatureKind::Angle(j) => Resolved::Angle(idx(j)?.try_into().expect("3")),
                FeatureKind::Axis(j, a) => Resolved::Axis(idx(j)?.try_into().expect("2"), *a),
                FeatureKind::Distance(j) => Resolved::Distance(idx(j)?.try_into().expect("4")),
                FeatureKind::Area(j) => Resolved::Area(idx(j)?.try_into().expect("6")),
            });
        }
        Ok(ResolvedTable { items })
    }
}

#[derive(Clone, Debug, PartialEq)]
enum Resolved {
    Angle([usize; 3]),
    Axis([usize; 2], [f64; 3]),
    Distance([usize; 4]),
    Area([usize; 6]),
}

/// An [`AffectTable`] bound to joint indices.
#[derive(Clone, Debug, PartialEq)]
pub struct ResolvedTable {
    items: Vec<Resolved>,
}

impl ResolvedTable {
    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }
}

/// Feature values for one frame.
#[derive(Clone, Debug, PartialEq)]
pub struct AffectiveVector {
    pub values: Vec<f64>,
    /// Some denominator was clamped or a ratio capped.
    pub degenerate: bool,
}

pub fn extract_affective(positions: &[[f64; 3]], table: &ResolvedTable) -> AffectiveVector {
    let (values, degenerate) = features(positions, table);
    AffectiveVector { values, degenerate }
}

/// Squared Euclidean distance between two feature vectors.
pub fn affective_distance(a: &AffectiveVector, b: &AffectiveVector) -> f64 {
    a.values
        .iter()
        .zip(&b.values)
        .map(|(x, y)| (x - y) * (x - y))
        .sum()
}

fn sub<T: Real>(a: [T; 3], b: [T; 3]) -> [T; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn dot<T: Real>(a: [T; 3], b: [T; 3]) -> T {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn cross<T: Real>(a: [T; 3], b: [T; 3]) -> [T; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

fn norm<T: Real>(a: [T; 3]) -> T {
    dot(a, a).sqrt()
}

fn angle_between<T: Real>(u: [T; 3], v: [T; 3]) -> T {
    norm(cross(u, v)).atan2(dot(u, v))
}

fn ratio<T: Real>(num: T, den: T, degenerate: &mut bool) -> T {
    let den = if den.value() < MIN_DENOMINATOR {
        *degenerate = true;
        den.lift(MIN_DENOMINATOR)
    } else {
        den
    };
    let r = num / den;
    if r.value() > MAX_RATIO {
        *degenerate = true;
        r.lift(MAX_RATIO)
    } else {
        r
    }
}

pub(crate) fn features<T: Real>(p: &[[T; 3]], table: &ResolvedTable) -> (Vec<T>, bool) {
    let mut degenerate = false;
    let mut out = Vec::with_capacity(table.items.len());
    for item in &table.items {
        let v = match item {
            Resolved::Angle([a, b, c]) => angle_between(sub(p[*a], p[*b]), sub(p[*c], p[*b])),
            Resolved::Axis([from, to], axis) => {
                let u = sub(p[*to], p[*from]);
                let k = u[0].lift(0.0);
                let ax = [k + axis[0], k + axis[1], k + axis[2]];
                angle_between(u, ax)
            }
            Resolved::Distance([a, b, c, d]) => {
                ratio(norm(sub(p[*a], p[*b])), norm(sub(p[*c], p[*d])), &mut degenerate)
            }
            Resolved::Area([a, b, c, d, e, f]) => {
                let num = norm(cross(sub(p[*b], p[*a]), sub(p[*c], p[*a]))) * 0.5;
                let den = norm(cross(sub(p[*e], p[*d]), sub(p[*f], p[*d]))) * 0.5;
                ratio(num, den, &mut degenerate)
            }
        };
        out.push(v);
    }
    (out, degenerate)
}

/// Point in the normalized valence-arousal-dominance cube.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct VadPoint {
    pub valence: f64,
    pub arousal: f64,
    pub dominance: f64,
}

impl VadPoint {
    pub fn new(valence: f64, arousal: f64, dominance: f64) -> Result<Self> {
        for (name, v) in [("valence", valence), ("arousal", arousal), ("dominance", dominance)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Attribute(format!("{name} {v} outside [0, 1]")));
            }
        }
        Ok(Self {
            valence,
            arousal,
            dominance,
        })
    }

    pub fn to_array(self) -> [f64; 3] {
        [self.valence, self.arousal, self.dominance]
    }
}

/// Lowercase emotion term → VAD coordinates.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct EmotionLexicon {
    entries: HashMap<String, VadPoint>,
}

/// The emotion categories annotated in the motion corpus.
pub const DATASET_EMOTIONS: [&str; 11] = [
    "afraid",
    "amused",
    "angry",
    "ashamed",
    "disgusted",
    "joyous",
    "neutral",
    "proud",
    "relieved",
    "sad",
    "surprised",
];

const BUILTIN_LEXICON: &str = include_str!("../assets/lexicon.tsv");

impl EmotionLexicon {
    pub fn builtin() -> Self {
        Self::parse(BUILTIN_LEXICON, "builtin lexicon").expect("builtin lexicon parses")
    }

    /// Tab- or space-separated `term v a d` lines; `#` starts a comment.
    pub fn parse(text: &str, what: &str) -> Result<Self> {
        let mut entries = HashMap::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let f: Vec<&str> = line.split_whitespace().collect();
            if f.len() != 4 {
                return Err(Error::parse(what, n + 1, "expected `term valence arousal dominance`"));
            }
            let mut v = [0.0; 3];
            for k in 0..3 {
                v[k] = f[k + 1]
                    .parse()
                    .map_err(|_| Error::parse(what, n + 1, format!("bad number {:?}", f[k + 1])))?;
            }
            let point = VadPoint::new(v[0], v[1], v[2]).map_err(|e| Error::parse(what, n + 1, e.to_string()))?;
            entries.insert(f[0].to_lowercase(), point);
        }
        Ok(Self { entries })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, &path.display().to_string())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn contains(&self, term: &str) -> bool {
        self.entries.contains_key(&term.to_lowercase())
    }

    pub fn terms(&self) -> Vec<&str> {
        let mut t: Vec<&str> = self.entries.keys().map(String::as_str).collect();
        t.sort_unstable();
        t
    }

    /// Up to three known terms closest to `term` by edit distance.
    pub fn nearest(&self, term: &str) -> Vec<String> {
        let term = term.to_lowercase();
        let mut scored: Vec<(usize, &str)> = self
            .entries
            .keys()
            .map(|k| (edit_distance(&term, k), k.as_str()))
            .collect();
        scored.sort_unstable();
        scored.into_iter().take(3).map(|(_, k)| k.to_string()).collect()
    }
}

pub fn vad_lookup(term: &str, lex: &EmotionLexicon) -> Result<VadPoint> {
    lex.entries
        .get(&term.trim().to_lowercase())
        .copied()
        .ok_or_else(|| Error::UnknownEmotion {
            term: term.to_string(),
            nearest: lex.nearest(term),
        })
}

fn edit_distance(a: &str, b: &str) -> usize {
    let b: Vec<char> = b.chars().collect();
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    for (i, ca) in a.chars().enumerate() {
        let mut cur = vec![i + 1; b.len() + 1];
        for (j, cb) in b.iter().enumerate() {
            let cost = usize::from(ca != *cb);
            cur[j + 1] = (prev[j] + cost).min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        prev = cur;
    }
    prev[b.len()]
}
