//! Tokenization, word vectors, sentence matrices and attribute encoding.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use sha2::{Digest, Sha256};

use crate::affect::{vad_lookup, EmotionLexicon, VadPoint};
use crate::error::{Error, Result};

pub const DEFAULT_DIM: usize = 300;
pub const DEFAULT_SENTENCE_LEN: usize = 32;
/// Standard deviation of the hashed out-of-vocabulary vectors.
pub const OOV_SCALE: f64 = 0.1;
pub const ATTRIBUTE_DIM: usize = 9;

/// Lowercase, strip punctuation (keeping apostrophes between letters or
/// digits) and split on whitespace.
pub fn tokenize(text: &str) -> Result<Vec<String>> {
    let mut tokens = Vec::new();
    for word in text.split_whitespace() {
        let chars: Vec<char> = word.chars().flat_map(char::to_lowercase).collect();
        let mut tok = String::new();
        for (i, &c) in chars.iter().enumerate() {
            if c.is_alphanumeric() {
                tok.push(c);
            } else if c == '\'' || c == '’' {
                let before = i > 0 && chars[i - 1].is_alphanumeric();
                let after = chars.get(i + 1).is_some_and(|n| n.is_alphanumeric());
                if before && after {
                    tok.push('\'');
                }
            }
        }
        if !tok.is_empty() {
            tokens.push(tok);
        }
    }
    if tokens.is_empty() {
        return Err(Error::EmptySentence);
    }
    Ok(tokens)
}

#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingStore {
    dim: usize,
    vectors: HashMap<String, Vec<f64>>,
    /// Insertion order, for dumping.
    order: Vec<String>,
    sos: Vec<f64>,
    eos: Vec<f64>,
}

impl EmbeddingStore {
    /// An empty store; every lookup falls back to the hashed vector.
    pub fn empty(dim: usize) -> Result<Self> {
        if dim < 2 {
            return Err(Error::Config(format!("embedding dimension {dim} < 2")));
        }
        let mut sos = vec![0.0; dim];
        let mut eos = vec![0.0; dim];
        sos[0] = 1.0;
        eos[1] = -1.0;
        Ok(Self {
            dim,
            vectors: HashMap::new(),
            order: Vec::new(),
            sos,
            eos,
        })
    }

    /// Parse `token v1 … v_dim` lines.
    pub fn parse(text: &str, dim: usize, what: &str) -> Result<Self> {
        let mut store = Self::empty(dim)?;
        for (n, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let mut fields = line.split_whitespace();
            let token = fields.next().expect("non-empty line").to_string();
            let mut v = Vec::with_capacity(dim);
            for f in fields {
                let x: f64 = f
                    .parse()
                    .map_err(|_| Error::parse(what, n + 1, format!("bad number {f:?}")))?;
                if !x.is_finite() {
                    return Err(Error::parse(what, n + 1, "non-finite value"));
                }
                v.push(x);
            }
            if v.len() != dim {
                return Err(Error::parse(
                    what,
                    n + 1,
                    format!("expected {dim} values for {token:?}, got {}", v.len()),
                ));
            }
            store.insert(token, v)?;
        }
        Ok(store)
    }

    pub fn load(path: &Path, dim: usize) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, dim, &path.display().to_string())
    }

    pub fn insert(&mut self, token: String, v: Vec<f64>) -> Result<()> {
        if v.len() != self.dim {
            return Err(Error::LengthMismatch(v.len(), self.dim));
        }
        if self.vectors.insert(token.clone(), v).is_none() {
            self.order.push(token);
        }
        Ok(())
    }

    /// Inverse of [`EmbeddingStore::parse`]; values are written with
    /// shortest round-trip formatting.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for tok in &self.order {
            out.push_str(tok);
            for x in &self.vectors[tok] {
                let _ = write!(out, " {x}");
            }
            out.push('\n');
        }
        out
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn get(&self, token: &str) -> Option<&[f64]> {
        self.vectors.get(token).map(Vec::as_slice)
    }

    pub fn sos(&self) -> &[f64] {
        &self.sos
    }

    pub fn eos(&self) -> &[f64] {
        &self.eos
    }

    /// Stored vector, or a pseudo-random one seeded by a hash of the token.
    pub fn lookup(&self, token: &str) -> Vec<f64> {
        match self.vectors.get(token) {
            Some(v) => v.clone(),
            None => oov_vector(token, self.dim),
        }
    }
}

fn oov_vector(token: &str, dim: usize) -> Vec<f64> {
    let digest = Sha256::digest(token.as_bytes());
    let mut rng = ChaCha8Rng::from_seed(digest.into());
    (0..dim)
        .map(|_| {
            let z: f64 = StandardNormal.sample(&mut rng);
            z * OOV_SCALE
        })
        .collect()
}

/// `rows × dim` sentence matrix, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct SentenceEmbedding {
    pub rows: usize,
    pub dim: usize,
    pub data: Vec<f64>,
    /// Real rows including the SoS and EoS markers.
    pub true_length: usize,
    pub truncated: bool,
}

impl SentenceEmbedding {
    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.dim..(r + 1) * self.dim]
    }
}

pub fn embed_sentence(tokens: &[String], store: &EmbeddingStore, t_sen: usize) -> Result<SentenceEmbedding> {
    if t_sen < 3 {
        return Err(Error::Config(format!("sentence length {t_sen} leaves no room for tokens")));
    }
    let keep = tokens.len().min(t_sen - 2);
    let mut data = Vec::with_capacity(t_sen * store.dim);
    data.extend_from_slice(store.sos());
    for t in &tokens[..keep] {
        data.extend(store.lookup(t));
    }
    for _ in keep + 1..t_sen {
        data.extend_from_slice(store.eos());
    }
    Ok(SentenceEmbedding {
        rows: t_sen,
        dim: store.dim,
        data,
        true_length: keep + 2,
        truncated: keep < tokens.len(),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Task {
    Narration,
    Conversation,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Gender {
    Female,
    Male,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Handedness {
    Left,
    Right,
}

impl Task {
    pub fn as_str(self) -> &'static str {
        match self {
            Task::Narration => "narration",
            Task::Conversation => "conversation",
        }
    }
}

impl Gender {
    pub fn as_str(self) -> &'static str {
        match self {
            Gender::Female => "female",
            Gender::Male => "male",
        }
    }
}

impl Handedness {
    pub fn as_str(self) -> &'static str {
        match self {
            Handedness::Left => "left",
            Handedness::Right => "right",
        }
    }
}

impl std::str::FromStr for Task {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_lowercase().as_str() {
            "narration" => Ok(Task::Narration),
            "conversation" => Ok(Task::Conversation),
            other => Err(Error::Attribute(format!("task {other:?} (expected narration|conversation)"))),
        }
    }
}

impl std::str::FromStr for Gender {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_lowercase().as_str() {
            "female" => Ok(Gender::Female),
            "male" => Ok(Gender::Male),
            other => Err(Error::Attribute(format!("gender {other:?} (expected female|male)"))),
        }
    }
}

impl std::str::FromStr for Handedness {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_lowercase().as_str() {
            "left" => Ok(Handedness::Left),
            "right" => Ok(Handedness::Right),
            other => Err(Error::Attribute(format!("handedness {other:?} (expected left|right)"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AgentAttributes {
    pub task: Task,
    pub emotion: VadPoint,
    /// Lexicon term the emotion was resolved from, if any.
    pub emotion_term: Option<String>,
    pub gender: Gender,
    pub handedness: Handedness,
}

impl Default for AgentAttributes {
    /// Narration, mid-cube emotion, female, right-handed.
    fn default() -> Self {
        Self::new(
            Task::Narration,
            VadPoint {
                valence: 0.5,
                arousal: 0.5,
                dominance: 0.5,
            },
            Gender::Female,
            Handedness::Right,
        )
    }
}

impl AgentAttributes {
    pub fn new(task: Task, emotion: VadPoint, gender: Gender, handedness: Handedness) -> Self {
        Self {
            task,
            emotion,
            emotion_term: None,
            gender,
            handedness,
        }
    }
}

/// Resolve an emotion given either as a lexicon term or as `v,a,d`.
pub fn parse_emotion(spec: &str, lex: &EmotionLexicon) -> Result<(VadPoint, Option<String>)> {
    let parts: Vec<&str> = spec.split(',').map(str::trim).collect();
    if parts.len() == 3 {
        if let (Ok(v), Ok(a), Ok(d)) = (parts[0].parse(), parts[1].parse(), parts[2].parse()) {
            return Ok((VadPoint::new(v, a, d)?, None));
        }
    }
    let term = spec.trim().to_lowercase();
    Ok((vad_lookup(&term, lex)?, Some(term)))
}

/// `[task(2), valence, arousal, dominance, gender(2), handedness(2)]`.
pub fn encode_attributes(attrs: &AgentAttributes) -> [f64; ATTRIBUTE_DIM] {
    let one_hot = |first: bool| if first { [1.0, 0.0] } else { [0.0, 1.0] };
    let a = one_hot(attrs.task == Task::Narration);
    let g = one_hot(attrs.gender == Gender::Female);
    let h = one_hot(attrs.handedness == Handedness::Left);
    let e = attrs.emotion;
    [a[0], a[1], e.valence, e.arousal, e.dominance, g[0], g[1], h[0], h[1]]
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toks(s: &str) -> Vec<String> {
        tokenize(s).unwrap()
    }

    #[test]
    fn tokenizer_rules() {
        assert_eq!(toks("I am HAPPY."), ["i", "am", "happy"]);
        assert_eq!(toks("don't stop"), ["don't", "stop"]);
        assert_eq!(toks("'quoted' words'"), ["quoted", "words"]);
        assert_eq!(toks("well--then, ok"), ["wellthen", "ok"]);
        assert!(matches!(tokenize("!!!"), Err(Error::EmptySentence)));
        assert!(matches!(tokenize("   "), Err(Error::EmptySentence)));
    }

    #[test]
    fn markers_are_fixed_axis_vectors() {
        let s = EmbeddingStore::empty(300).unwrap();
        assert_eq!(s.sos()[0], 1.0);
        assert_eq!(s.eos()[1], -1.0);
        assert_eq!(s.sos().iter().filter(|v| **v != 0.0).count(), 1);
        assert_ne!(s.sos(), s.eos());
    }

    #[test]
    fn forced_layout_with_padding() {
        let mut s = EmbeddingStore::empty(4).unwrap();
        s.insert("hello".into(), vec![0.1, 0.2, 0.3, 0.4]).unwrap();
        let e = embed_sentence(&toks("hello"), &s, 4).unwrap();
        assert_eq!(e.true_length, 3);
        assert!(!e.truncated);
        assert_eq!(e.row(0), s.sos());
        assert_eq!(e.row(1), &[0.1, 0.2, 0.3, 0.4]);
        assert_eq!(e.row(2), s.eos());
        assert_eq!(e.row(3), s.eos());
    }

    #[test]
    fn truncation_keeps_room_for_markers() {
        let s = EmbeddingStore::empty(8).unwrap();
        let tokens: Vec<String> = (0..50).map(|i| format!("w{i}")).collect();
        let e = embed_sentence(&tokens, &s, 30).unwrap();
        assert!(e.truncated);
        assert_eq!(e.true_length, 30);
        assert_eq!(e.row(28), s.lookup("w27").as_slice());
        assert_eq!(e.row(29), s.eos());
    }

    #[test]
    fn oov_vectors_are_deterministic_and_distinct() {
        let s = EmbeddingStore::empty(300).unwrap();
        let a = s.lookup("zyzzyva");
        assert_eq!(a, EmbeddingStore::empty(300).unwrap().lookup("zyzzyva"));
        assert_ne!(a, s.lookup("zyzzyvas"));
        let var = a.iter().map(|x| x * x).sum::<f64>() / 300.0;
        assert!(var > 0.005 && var < 0.02, "{var}");
    }

    #[test]
    fn embedding_parse_errors_and_dump() {
        let err = EmbeddingStore::parse("a 1 2 3\nb 1 2\n", 3, "emb").unwrap_err();
        assert!(err.to_string().starts_with("emb:2"), "{err}");
        let text = "a 0.1 -2 3e-7\nb 1 2 3\nc 0 0 0.30000000000000004\n";
        let s = EmbeddingStore::parse(text, 3, "emb").unwrap();
        assert_eq!(s.len(), 3);
        assert_eq!(s.get("a").unwrap(), &[0.1, -2.0, 3e-7]);
        let again = EmbeddingStore::parse(&s.to_text(), 3, "dump").unwrap();
        assert_eq!(again, s);
    }

    #[test]
    fn attribute_layout() {
        let e = VadPoint::new(0.0, 0.0, 0.0).unwrap();
        let a = AgentAttributes::new(Task::Narration, e, Gender::Female, Handedness::Left);
        assert_eq!(encode_attributes(&a), [1.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 1.0, 0.0]);
        let b = AgentAttributes { task: Task::Conversation, ..a };
        assert_eq!(encode_attributes(&b), [0.0, 1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 1.0, 0.0]);
    }

    #[test]
    fn emotion_spec_forms() {
        let lex = EmotionLexicon::builtin();
        let (p, term) = parse_emotion("0.2, 0.5,0.9", &lex).unwrap();
        assert_eq!(p.to_array(), [0.2, 0.5, 0.9]);
        assert!(term.is_none());
        let (_, term) = parse_emotion("Joyous", &lex).unwrap();
        assert_eq!(term.as_deref(), Some("joyous"));
        assert!(parse_emotion("blorf", &lex).is_err());
        assert!(parse_emotion("0.2,1.5,0", &lex).is_err());
    }
}
