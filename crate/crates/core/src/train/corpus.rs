//! Corpus manifests and the procedural fixture corpus.
//!
//! A manifest is a tab-separated file with one record per sequence:
//! `file  task  emotion  gender  handedness  sentence`, where `emotion` is a
//! lexicon term or `v,a,d`. Files are canonical gesture files relative to the
//! manifest's directory.

use std::f64::consts::PI;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::affect::{vad_lookup, EmotionLexicon, DATASET_EMOTIONS};
use crate::error::{Error, Result};
use crate::motion::{read_canonical, write_canonical, GestureSequence};
use crate::quat::Quaternion;
use crate::skeleton::{Pose, Skeleton};
use crate::text::{AgentAttributes, Gender, Handedness, Task};

pub const MANIFEST: &str = "manifest.tsv";
pub const FIXTURE_FPS: f64 = 30.0;

const SENTENCES: [&str; 12] = [
    "I want to tell you about my day",
    "The old lighthouse stood alone by the sea",
    "Nobody expected the letter to arrive so soon",
    "We walked home together under the bright stars",
    "She opened the door and everything had changed",
    "Do you remember the first time we met",
    "The storm broke just after midnight",
    "He laughed and pointed at the tiny boat",
    "Let me explain what happened at the station",
    "They built a garden on the roof last spring",
    "This is the best news I have heard all year",
    "Please listen carefully to the whole story",
];

/// Attributes of fixture item `i`: emotion cycles through the eleven
/// dataset terms, task/gender/handedness through the eight binary
/// combinations, so 88 consecutive items cover the whole grid.
pub fn fixture_attributes(i: usize, lex: &EmotionLexicon) -> Result<AgentAttributes> {
    let term = DATASET_EMOTIONS[i % DATASET_EMOTIONS.len()];
    Ok(AgentAttributes {
        task: if i % 2 == 0 { Task::Narration } else { Task::Conversation },
        emotion: vad_lookup(term, lex)?,
        emotion_term: Some(term.to_string()),
        gender: if (i / 2) % 2 == 0 { Gender::Female } else { Gender::Male },
        handedness: if (i / 4) % 2 == 0 { Handedness::Right } else { Handedness::Left },
    })
}

fn about(axis: usize, angle: f64) -> Quaternion {
    let mut a = [0.0; 3];
    a[axis] = 1.0;
    Quaternion::from_axis_angle(a, angle)
}

fn nlerp(a: Quaternion, b: Quaternion, s: f64) -> Quaternion {
    let b = if a.dot(b) < 0.0 { b.neg() } else { b };
    let q = Quaternion::new(
        a.w + (b.w - a.w) * s,
        a.x + (b.x - a.x) * s,
        a.y + (b.y - a.y) * s,
        a.z + (b.z - a.z) * s,
    );
    let n = q.norm();
    Quaternion::new(q.w / n, q.x / n, q.y / n, q.z / n)
}

/// One procedurally animated sequence. Upper-body joints swing on smooth
/// sinusoids under a `sin²` envelope; amplitude and speed grow with arousal,
/// arm spread with dominance, head pitch with valence. The dominant hand
/// moves twice as far as the other, narration is livelier than conversation.
/// The first frame is the SoS pose and the last exactly the EoS pose.
pub fn synthesize_sequence(
    skeleton: Arc<Skeleton>,
    attrs: AgentAttributes,
    sentence: &str,
    frames: usize,
    phase: f64,
) -> Result<GestureSequence> {
    if frames < 2 {
        return Err(Error::Corpus("fixture sequences need at least two frames".into()));
    }
    let idx = |n: &str| skeleton.index_of(n);
    let (l_sh, r_sh) = (idx("lshoulder")?, idx("rshoulder")?);
    let (l_el, r_el) = (idx("lelbow")?, idx("relbow")?);
    let (l_wr, r_wr) = (idx("lwrist")?, idx("rwrist")?);
    let (neck, head, spine) = (idx("neck")?, idx("head")?, idx("spine2")?);

    let e = attrs.emotion;
    let style = if attrs.task == Task::Narration { 1.3 } else { 0.8 };
    let amp = (0.25 + 0.55 * e.arousal) * style;
    let cycles = 1.0 + 2.0 * e.arousal;
    let spread = 0.1 + 0.5 * e.dominance;
    let sway = if attrs.gender == Gender::Male { 1.0 } else { 0.8 };
    let (left, right) = match attrs.handedness {
        Handedness::Left => (1.0, 0.5),
        Handedness::Right => (0.5, 1.0),
    };

    let sos = skeleton.sos().rotations();
    let eos = skeleton.eos().rotations();
    let mut poses = Vec::with_capacity(frames);
    for t in 0..frames {
        if t == 0 {
            poses.push(skeleton.sos().clone());
            continue;
        }
        if t == frames - 1 {
            poses.push(skeleton.eos().clone());
            continue;
        }
        let s = t as f64 / (frames - 1) as f64;
        let env = (PI * s).sin().powi(2);
        let ph = 2.0 * PI * cycles * s + phase;
        let mut rots: Vec<Quaternion> = sos.iter().zip(eos).map(|(a, b)| nlerp(*a, *b, s)).collect();
        let mut apply = |j: usize, q: Quaternion| rots[j] = rots[j].mul(q);
        for (sh, el, wr, hand, side) in [(l_sh, l_el, l_wr, left, 1.0), (r_sh, r_el, r_wr, right, -1.0)] {
            let raise = -amp * hand * env * (0.6 + 0.4 * ph.sin());
            apply(sh, about(0, raise).mul(about(2, side * spread * hand * env)));
            apply(el, about(0, -(0.3 + 0.5 * amp) * hand * env * (0.5 + 0.5 * (ph + 1.0).sin())));
            apply(wr, about(2, 0.3 * amp * env * (2.0 * ph).sin()));
        }
        apply(neck, about(0, 0.1 * amp * env * (0.5 * ph).sin()));
        apply(head, about(0, -(e.valence - 0.5) * 0.3 * env));
        apply(spine, about(1, 0.1 * amp * sway * env * ph.sin()));
        poses.push(Pose::new(rots)?);
    }
    GestureSequence::new(skeleton, FIXTURE_FPS, poses, attrs, sentence.to_string())
}

/// `n` fixture sequences of 32–48 frames at 30 fps.
pub fn synthesize_fixture_corpus(
    n: usize,
    seed: u64,
    skeleton: Arc<Skeleton>,
    lex: &EmotionLexicon,
) -> Result<Vec<GestureSequence>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let attrs = fixture_attributes(i, lex)?;
            let frames = 32 + 4 * (i % 5);
            let phase = rng.gen_range(0.0..2.0 * PI);
            synthesize_sequence(skeleton.clone(), attrs, SENTENCES[i % SENTENCES.len()], frames, phase)
        })
        .collect()
}

fn escape_field(s: &str) -> String {
    s.replace('\\', "\\\\").replace('\t', "\\t").replace('\n', "\\n")
}

fn unescape_field(s: &str) -> Option<String> {
    let mut out = String::with_capacity(s.len());
    let mut chars = s.chars();
    while let Some(c) = chars.next() {
        if c == '\\' {
            match chars.next()? {
                '\\' => out.push('\\'),
                't' => out.push('\t'),
                'n' => out.push('\n'),
                _ => return None,
            }
        } else {
            out.push(c);
        }
    }
    Some(out)
}

fn emotion_field(a: &AgentAttributes) -> String {
    match &a.emotion_term {
        Some(t) => t.clone(),
        None => format!("{},{},{}", a.emotion.valence, a.emotion.arousal, a.emotion.dominance),
    }
}

/// Write each sequence as `seq_NNNN.gesture` plus a manifest; returns the
/// manifest path.
pub fn write_corpus(dir: &Path, seqs: &[GestureSequence]) -> Result<PathBuf> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut manifest = String::new();
    for (i, s) in seqs.iter().enumerate() {
        let name = format!("seq_{i:04}.gesture");
        write_canonical(s, &dir.join(&name))?;
        let a = &s.attributes;
        let _ = writeln!(
            manifest,
            "{name}\t{}\t{}\t{}\t{}\t{}",
            a.task.as_str(),
            emotion_field(a),
            a.gender.as_str(),
            a.handedness.as_str(),
            escape_field(&s.sentence)
        );
    }
    let path = dir.join(MANIFEST);
    std::fs::write(&path, manifest).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}

/// Load every sequence listed in `manifest`, checking that the listed
/// annotations agree with each file's header.
pub fn read_corpus(manifest: &Path, skeleton: Arc<Skeleton>) -> Result<Vec<GestureSequence>> {
    let text = std::fs::read_to_string(manifest).map_err(|e| Error::io(manifest, e))?;
    let base = manifest.parent().unwrap_or(Path::new("."));
    let what = manifest.display().to_string();
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() != 6 {
            return Err(Error::parse(&what, n + 1, format!("expected 6 tab-separated fields, got {}", f.len())));
        }
        let seq = read_canonical(&base.join(f[0]), skeleton.clone())?;
        let a = &seq.attributes;
        let sentence = unescape_field(f[5]).ok_or_else(|| Error::parse(&what, n + 1, "bad escape in sentence"))?;
        let listed = [f[1], f[2], f[3], f[4]];
        let actual = [a.task.as_str(), &emotion_field(a), a.gender.as_str(), a.handedness.as_str()];
        if listed != actual || sentence != seq.sentence {
            return Err(Error::parse(
                &what,
                n + 1,
                format!("annotations for {} disagree with the file header", f[0]),
            ));
        }
        out.push(seq);
    }
    if out.is_empty() {
        return Err(Error::Corpus(format!("{what} lists no sequences")));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kinematics::forward_kinematics;

    fn wrist_speed(seq: &GestureSequence) -> f64 {
        let w = seq.skeleton.index_of("rwrist").unwrap();
        let p: Vec<[f64; 3]> = seq
            .frames
            .iter()
            .map(|f| forward_kinematics(f, &seq.skeleton).unwrap()[w])
            .collect();
        p.windows(2)
            .map(|s| ((0..3).map(|c| (s[1][c] - s[0][c]).powi(2)).sum::<f64>()).sqrt())
            .sum::<f64>()
            / (p.len() - 1) as f64
    }

    #[test]
    fn fixture_grid_and_framing() {
        let lex = EmotionLexicon::builtin();
        let skel = Arc::new(Skeleton::canonical());
        let seqs = synthesize_fixture_corpus(88, 1, skel.clone(), &lex).unwrap();
        let mut combos = std::collections::HashSet::new();
        for s in &seqs {
            let a = &s.attributes;
            combos.insert((a.emotion_term.clone(), a.task, a.gender, a.handedness));
            assert_eq!(&s.frames[0], skel.sos());
            assert_eq!(s.frames.last().unwrap(), skel.eos());
        }
        assert_eq!(combos.len(), 88);
    }

    #[test]
    fn arousal_speeds_up_the_wrists() {
        let lex = EmotionLexicon::builtin();
        let skel = Arc::new(Skeleton::canonical());
        let mut calm = fixture_attributes(0, &lex).unwrap();
        calm.emotion = vad_lookup("calm", &lex).unwrap();
        let mut excited = calm.clone();
        excited.emotion = vad_lookup("surprised", &lex).unwrap();
        let a = synthesize_sequence(skel.clone(), calm, "x", 40, 0.0).unwrap();
        let b = synthesize_sequence(skel, excited, "x", 40, 0.0).unwrap();
        assert!(wrist_speed(&b) > wrist_speed(&a));
    }

    #[test]
    fn manifest_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let skel = Arc::new(Skeleton::canonical());
        let seqs = synthesize_fixture_corpus(3, 2, skel.clone(), &EmotionLexicon::builtin()).unwrap();
        let m = write_corpus(dir.path(), &seqs).unwrap();
        assert_eq!(read_corpus(&m, skel).unwrap(), seqs);
    }
}
