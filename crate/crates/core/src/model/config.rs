use std::fmt::Write as _;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::skeleton::CANONICAL_JOINTS;
use crate::text::{ATTRIBUTE_DIM, DEFAULT_DIM, DEFAULT_SENTENCE_LEN};

/// Divisor applied to attention scores.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AttentionScale {
    /// Divide by the key dimension `k`.
    K,
    /// Divide by `√k`.
    SqrtK,
}

impl AttentionScale {
    pub fn divisor(self, key_dim: usize) -> f64 {
        match self {
            AttentionScale::K => key_dim as f64,
            AttentionScale::SqrtK => (key_dim as f64).sqrt(),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            AttentionScale::K => "k",
            AttentionScale::SqrtK => "sqrt_k",
        }
    }
}

impl FromStr for AttentionScale {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "k" => Ok(AttentionScale::K),
            "sqrt_k" => Ok(AttentionScale::SqrtK),
            other => Err(Error::Config(format!("attention scale {other:?} (expected k|sqrt_k)"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    /// Encoder and decoder block count.
    pub blocks: usize,
    pub heads: usize,
    pub d_model: usize,
    pub d_word: usize,
    pub t_sen: usize,
    /// Longest gesture, in frames, the model is trained on or will emit.
    pub t_ges: usize,
    /// Decoder attention window and number of SoS seed frames.
    pub window: usize,
    pub joints: usize,
    pub attr_dim: usize,
    pub scale: AttentionScale,
    pub layer_norm: bool,
    /// Regularization factor the model was trained with; informational.
    pub lambda: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            blocks: 2,
            heads: 2,
            d_model: 200,
            d_word: DEFAULT_DIM,
            t_sen: DEFAULT_SENTENCE_LEN,
            t_ges: 600,
            window: 20,
            joints: CANONICAL_JOINTS,
            attr_dim: ATTRIBUTE_DIM,
            scale: AttentionScale::K,
            layer_norm: false,
            lambda: 1e-5,
        }
    }
}

impl ModelConfig {
    pub fn pose_dim(&self) -> usize {
        4 * self.joints
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.heads
    }

    /// Input rows the decoder needs to reproduce one output exactly: every
    /// block widens the receptive field by `window − 1`.
    pub fn history_len(&self) -> usize {
        self.blocks * (self.window - 1) + 1
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("heads", self.heads),
            ("d_model", self.d_model),
            ("d_word", self.d_word),
            ("t_sen", self.t_sen),
            ("t_ges", self.t_ges),
            ("window", self.window),
            ("joints", self.joints),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("{name} must be positive")));
        }
        if self.d_model % self.heads != 0 {
            return Err(Error::Config(format!(
                "d_model {} not divisible by {} heads",
                self.d_model, self.heads
            )));
        }
        if self.window > self.t_ges {
            return Err(Error::Config(format!(
                "window {} exceeds t_ges {}",
                self.window, self.t_ges
            )));
        }
        if self.t_sen < 3 {
            return Err(Error::Config("t_sen must leave room for SoS, a token and EoS".into()));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::Config(format!("lambda {} must be finite and non-negative", self.lambda)));
        }
        Ok(())
    }

    /// `key value` lines.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "blocks {}", self.blocks);
        let _ = writeln!(out, "heads {}", self.heads);
        let _ = writeln!(out, "d_model {}", self.d_model);
        let _ = writeln!(out, "d_word {}", self.d_word);
        let _ = writeln!(out, "t_sen {}", self.t_sen);
        let _ = writeln!(out, "t_ges {}", self.t_ges);
        let _ = writeln!(out, "window {}", self.window);
        let _ = writeln!(out, "joints {}", self.joints);
        let _ = writeln!(out, "attr_dim {}", self.attr_dim);
        let _ = writeln!(out, "scale {}", self.scale.as_str());
        let _ = writeln!(out, "layer_norm {}", self.layer_norm);
        let _ = writeln!(out, "lambda {}", self.lambda);
        out
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once(' ')
                .ok_or_else(|| Error::parse("model config", n + 1, format!("expected `key value`, got {line:?}")))?;
            let bad = |_| Error::parse("model config", n + 1, format!("bad value for {key}: {value:?}"));
            let int = |v: &str| v.parse::<usize>().map_err(bad);
            match key {
                "blocks" => cfg.blocks = int(value)?,
                "heads" => cfg.heads = int(value)?,
                "d_model" => cfg.d_model = int(value)?,
                "d_word" => cfg.d_word = int(value)?,
                "t_sen" => cfg.t_sen = int(value)?,
                "t_ges" => cfg.t_ges = int(value)?,
                "window" => cfg.window = int(value)?,
                "joints" => cfg.joints = int(value)?,
                "attr_dim" => cfg.attr_dim = int(value)?,
                "scale" => cfg.scale = value.parse()?,
                "layer_norm" => {
                    cfg.layer_norm = value
                        .parse()
                        .map_err(|_| Error::parse("model config", n + 1, format!("bad bool {value:?}")))?
                }
                "lambda" => {
                    cfg.lambda = value
                        .parse()
                        .map_err(|_| Error::parse("model config", n + 1, format!("bad number {value:?}")))?
                }
                other => return Err(Error::parse("model config", n + 1, format!("unknown key {other:?}"))),
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }
}
