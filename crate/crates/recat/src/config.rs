//! `key = value` run configuration covering the model, the optimizer and the
//! driver. Unknown keys are rejected; omitted keys keep their defaults.

use std::collections::BTreeMap;
use std::path::Path;
use std::str::FromStr;

use recat_core::model::{EncodeMode, ReCatConfig};
use recat_core::train::TrainConfig;

use crate::error::{IoError, IoResult};

/// Everything a run needs besides its data files.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub model: ReCatConfig,
    pub train: TrainConfig,
    /// Write a checkpoint every this many steps (0: only at the end).
    pub checkpoint_every: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig { model: ReCatConfig::default(), train: TrainConfig::default(), checkpoint_every: 0 }
    }
}

pub fn mode_name(mode: EncodeMode) -> &'static str {
    match mode {
        EncodeMode::Pruned => "pruned",
        EncodeMode::Full => "full",
        EncodeMode::Fast => "fast",
    }
}

pub fn parse_mode(s: &str) -> IoResult<EncodeMode> {
    match s {
        "pruned" => Ok(EncodeMode::Pruned),
        "full" => Ok(EncodeMode::Full),
        "fast" => Ok(EncodeMode::Fast),
        other => Err(IoError::Format(format!("unknown encoding mode {other:?} (pruned, full, fast)"))),
    }
}

fn value<T: FromStr>(key: &str, raw: &str) -> IoResult<T> {
    raw.parse().map_err(|_| IoError::Format(format!("config key {key}: cannot parse {raw:?}")))
}

impl RunConfig {
    /// Parses `key = value` lines; `#` starts a comment.
    pub fn parse(text: &str) -> IoResult<Self> {
        let mut cfg = RunConfig::default();
        let mut seen = BTreeMap::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                return Err(IoError::Format(format!("config line {}: expected `key = value`", lineno + 1)));
            };
            let (k, v) = (k.trim(), v.trim());
            if seen.insert(k.to_string(), lineno).is_some() {
                return Err(IoError::Format(format!("config key {k} given twice")));
            }
            cfg.set(k, v)?;
        }
        Ok(cfg)
    }

    pub fn read(path: &Path) -> IoResult<Self> {
        Self::parse(&crate::error::read_to_string(path)?)
    }

    /// Sets one key from its textual value.
    pub fn set(&mut self, key: &str, raw: &str) -> IoResult<()> {
        let (m, t) = (&mut self.model, &mut self.train);
        match key {
            "vocab" => m.vocab = value(key, raw)?,
            "dim" => m.dim = value(key, raw)?,
            "heads" => m.heads = value(key, raw)?,
            "cio_layers" => m.cio_layers = value(key, raw)?,
            "compose_depth" => m.compose_depth = value(key, raw)?,
            "transformer_depth" => m.transformer_depth = value(key, raw)?,
            "share" => m.share = value(key, raw)?,
            "compat_layers" => m.compat_layers = value(key, raw)?,
            "prune_m" => m.prune_m = value(key, raw)?,
            "mask_rate" => m.mask_rate = value(key, raw)?,
            "mask_id" => m.mask_id = value(key, raw)?,
            "max_len" => m.max_len = value(key, raw)?,
            "tie_embeddings" => m.tie_embeddings = value(key, raw)?,
            "parser_embed_dim" => m.parser_embed_dim = value(key, raw)?,
            "parser_hidden" => m.parser_hidden = value(key, raw)?,
            "parser_layers" => m.parser_layers = value(key, raw)?,
            "parser_head_hidden" => m.parser_head_hidden = value(key, raw)?,
            "lr_model" => t.lr_model = value(key, raw)?,
            "lr_parser" => t.lr_parser = value(key, raw)?,
            "weight_decay" => t.weight_decay = value(key, raw)?,
            "beta1" => t.beta1 = value(key, raw)?,
            "beta2" => t.beta2 = value(key, raw)?,
            "eps" => t.eps = value(key, raw)?,
            "clip_norm" => t.clip_norm = value(key, raw)?,
            "warmup_steps" => t.warmup_steps = value(key, raw)?,
            "decay_steps" => t.decay_steps = value(key, raw)?,
            "epochs" => t.epochs = value(key, raw)?,
            "batch_tokens" => t.batch_tokens = value(key, raw)?,
            "seed" => t.seed = value(key, raw)?,
            "mode" => t.mode = parse_mode(raw)?,
            "checkpoint_every" => self.checkpoint_every = value(key, raw)?,
            other => return Err(IoError::Format(format!("unknown config key {other:?}"))),
        }
        Ok(())
    }

    /// Every key with its value, in a fixed order.
    pub fn entries(&self) -> Vec<(&'static str, String)> {
        let (m, t) = (&self.model, &self.train);
        vec![
            ("vocab", m.vocab.to_string()),
            ("dim", m.dim.to_string()),
            ("heads", m.heads.to_string()),
            ("cio_layers", m.cio_layers.to_string()),
            ("compose_depth", m.compose_depth.to_string()),
            ("transformer_depth", m.transformer_depth.to_string()),
            ("share", m.share.to_string()),
            ("compat_layers", m.compat_layers.to_string()),
            ("prune_m", m.prune_m.to_string()),
            ("mask_rate", m.mask_rate.to_string()),
            ("mask_id", m.mask_id.to_string()),
            ("max_len", m.max_len.to_string()),
            ("tie_embeddings", m.tie_embeddings.to_string()),
            ("parser_embed_dim", m.parser_embed_dim.to_string()),
            ("parser_hidden", m.parser_hidden.to_string()),
            ("parser_layers", m.parser_layers.to_string()),
            ("parser_head_hidden", m.parser_head_hidden.to_string()),
            ("lr_model", t.lr_model.to_string()),
            ("lr_parser", t.lr_parser.to_string()),
            ("weight_decay", t.weight_decay.to_string()),
            ("beta1", t.beta1.to_string()),
            ("beta2", t.beta2.to_string()),
            ("eps", t.eps.to_string()),
            ("clip_norm", t.clip_norm.to_string()),
            ("warmup_steps", t.warmup_steps.to_string()),
            ("decay_steps", t.decay_steps.to_string()),
            ("epochs", t.epochs.to_string()),
            ("batch_tokens", t.batch_tokens.to_string()),
            ("seed", t.seed.to_string()),
            ("mode", mode_name(t.mode).to_string()),
            ("checkpoint_every", self.checkpoint_every.to_string()),
        ]
    }

    /// `parse(to_text())` reproduces `self`.
    pub fn to_text(&self) -> String {
        self.entries().iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    pub fn validate(&self) -> IoResult<()> {
        self.model.validate()?;
        self.train.validate()?;
        Ok(())
    }
}
