//! Loaded assets and request execution shared by the CLI and the server.

use std::path::PathBuf;
use std::sync::Arc;

use gesture_core::affect::EmotionLexicon;
use gesture_core::model::Model;
use gesture_core::motion::GestureSequence;
use gesture_core::skeleton::Skeleton;
use gesture_core::text::{
    embed_sentence, encode_attributes, parse_emotion, tokenize, AgentAttributes, EmbeddingStore,
};
use gesture_core::{Error, Result};

use crate::protocol::{frame_message, summary_message, FrameMessage, GenerationRequest, SummaryMessage};

/// Asset locations; `None` selects the built-in default.
#[derive(Clone, Debug, Default)]
pub struct AssetPaths {
    pub checkpoint: PathBuf,
    pub skeleton: Option<PathBuf>,
    pub lexicon: Option<PathBuf>,
    pub embeddings: Option<PathBuf>,
}

/// Immutable model and assets, shared across connections.
pub struct Engine {
    pub model: Model,
    pub skeleton: Arc<Skeleton>,
    pub lexicon: EmotionLexicon,
    pub store: EmbeddingStore,
}

/// Result of one request.
pub struct Outcome {
    pub sequence: GestureSequence,
    pub summary: SummaryMessage,
    /// Wall-clock decode time of each frame.
    pub latencies_ms: Vec<f64>,
    pub degenerate: bool,
}

impl Engine {
    pub fn new(model: Model, skeleton: Arc<Skeleton>, lexicon: EmotionLexicon, store: EmbeddingStore) -> Result<Self> {
        if skeleton.len() != model.config.joints {
            return Err(Error::LengthMismatch(skeleton.len(), model.config.joints));
        }
        if store.dim() != model.config.d_word {
            return Err(Error::Config(format!(
                "embedding dimension {} does not match the model's {}",
                store.dim(),
                model.config.d_word
            )));
        }
        Ok(Self {
            model,
            skeleton,
            lexicon,
            store,
        })
    }

    pub fn load(paths: &AssetPaths) -> Result<Self> {
        let model = Model::load(&paths.checkpoint)?;
        let skeleton = match &paths.skeleton {
            Some(p) => Skeleton::load(p)?,
            None => Skeleton::canonical(),
        };
        let lexicon = match &paths.lexicon {
            Some(p) => EmotionLexicon::load(p)?,
            None => EmotionLexicon::builtin(),
        };
        let store = match &paths.embeddings {
            Some(p) => EmbeddingStore::load(p, model.config.d_word)?,
            None => EmbeddingStore::empty(model.config.d_word)?,
        };
        Self::new(model, Arc::new(skeleton), lexicon, store)
    }

    pub fn attributes(&self, req: &GenerationRequest) -> Result<AgentAttributes> {
        let (emotion, term) = parse_emotion(&req.emotion.spec(), &self.lexicon)?;
        let mut attrs = AgentAttributes::new(
            req.task.parse()?,
            emotion,
            req.gender.parse()?,
            req.handedness.parse()?,
        );
        attrs.emotion_term = term;
        Ok(attrs)
    }

    /// Generate for `req`, handing each frame message to `emit` as soon as it
    /// exists.
    pub fn run<F>(&self, req: &GenerationRequest, emit: F) -> Result<Outcome>
    where
        F: FnMut(FrameMessage) -> Result<()>,
    {
        self.run_limited(req, self.model.config.t_ges, emit)
    }

    /// [`Engine::run`] with at most `max_frames` frames.
    pub fn run_limited<F>(&self, req: &GenerationRequest, max_frames: usize, mut emit: F) -> Result<Outcome>
    where
        F: FnMut(FrameMessage) -> Result<()>,
    {
        if !(req.fps_out.is_finite() && req.fps_out > 0.0) {
            return Err(Error::Attribute(format!("fps_out {} must be positive", req.fps_out)));
        }
        let attrs = self.attributes(req)?;
        let sentence = embed_sentence(&tokenize(&req.sentence)?, &self.store, self.model.config.t_sen)?;
        let encoded = encode_attributes(&attrs);
        let skeleton = &self.skeleton;
        let generated = self.model.generate_with(
            skeleton,
            &sentence,
            &encoded,
            max_frames,
            |t, pose, _, last| emit(frame_message(&req.id, t, pose, skeleton, last)?),
        )?;
        let latencies: Vec<f64> = generated.latencies.iter().map(|d| d.as_secs_f64() * 1e3).collect();
        let summary = summary_message(&req.id, &latencies, req.fps_out, generated.stopped_at_eos);
        let sequence = GestureSequence::new(
            skeleton.clone(),
            req.fps_out,
            generated.frames,
            attrs,
            req.sentence.clone(),
        )?;
        Ok(Outcome {
            sequence,
            summary,
            latencies_ms: latencies,
            degenerate: generated.degenerate,
        })
    }
}
