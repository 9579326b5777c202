//! Model checkpoints: weights, configuration, vocabulary and lineage.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::config::TransformerConfig;
use super::transformer::Transformer;
use crate::autodiff::container::{self, DType};
use crate::error::{Error, Result};
use crate::vocab::Vocabulary;

/// Which training stage produced a checkpoint.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Init,
    Pretrain,
    Finetune,
    Refine,
}

impl Phase {
    /// Whether a checkpoint of this phase may be derived from one of `parent`.
    pub fn may_follow(self, parent: Phase) -> bool {
        matches!(
            (parent, self),
            (Phase::Init, Phase::Pretrain)
                | (Phase::Init, Phase::Finetune)
                | (Phase::Pretrain, Phase::Finetune)
                | (Phase::Finetune, Phase::Refine)
        )
    }
}

impl std::fmt::Display for Phase {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Phase::Init => "init",
            Phase::Pretrain => "pretrain",
            Phase::Finetune => "finetune",
            Phase::Refine => "refine",
        };
        f.write_str(s)
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct Metadata {
    config: TransformerConfig,
    vocabulary: Vec<String>,
    min_frequency: usize,
    phase: Phase,
    fingerprint: String,
    parent: Option<String>,
}

/// A trained model with everything needed to reuse it.
#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub model: Transformer,
    pub vocab: Vocabulary,
    pub phase: Phase,
    pub fingerprint: String,
    pub parent: Option<String>,
}

/// SHA-256 over the f32 weight bytes, the configuration and the vocabulary.
pub fn fingerprint(model: &Transformer, vocab: &Vocabulary) -> String {
    let (manifest, blob) = container::encode_data(model.params(), DType::F32);
    let mut h = Sha256::new();
    h.update(serde_json::to_vec(model.config()).expect("config serialises"));
    h.update(serde_json::to_vec(&manifest).expect("manifest serialises"));
    h.update(&blob);
    for t in vocab.tokens() {
        h.update(t.as_bytes());
        h.update([0u8]);
    }
    hex::encode(h.finalize())
}

impl Checkpoint {
    /// Round the weights to their stored precision and stamp a fingerprint,
    /// so the in-memory model equals what a reload would produce.
    pub fn seal(mut model: Transformer, vocab: Vocabulary, phase: Phase, parent: Option<&Checkpoint>) -> Result<Self> {
        if let Some(p) = parent {
            if !phase.may_follow(p.phase) {
                return Err(Error::Contract(format!("a {phase} checkpoint cannot follow a {} checkpoint", p.phase)));
            }
        } else if phase != Phase::Init {
            return Err(Error::Contract(format!("a {phase} checkpoint needs a parent")));
        }
        if vocab.len() != model.config().vocab_size {
            return Err(Error::Contract("vocabulary size disagrees with the model".into()));
        }
        model.params_mut().round_to_f32();
        model.params_mut().zero_grad();
        let fingerprint = fingerprint(&model, &vocab);
        Ok(Checkpoint { model, vocab, phase, fingerprint, parent: parent.map(|p| p.fingerprint.clone()) })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir)?;
        }
        let meta = Metadata {
            config: self.model.config().clone(),
            vocabulary: self.vocab.tokens().to_vec(),
            min_frequency: self.vocab.min_frequency,
            phase: self.phase,
            fingerprint: self.fingerprint.clone(),
            parent: self.parent.clone(),
        };
        let w = BufWriter::new(File::create(path)?);
        container::write(w, self.model.params(), DType::F32, serde_json::to_value(meta)?)
    }

    /// Load and verify the stored fingerprint against the content.
    pub fn load(path: &Path) -> Result<Self> {
        let r = BufReader::new(File::open(path)?);
        let (params, header) = container::read(r)?;
        let meta: Metadata = serde_json::from_value(header.metadata)
            .map_err(|e| Error::Format(format!("{}: bad checkpoint metadata: {e}", path.display())))?;
        let vocab = Vocabulary::from_tokens(meta.vocabulary, meta.min_frequency);
        vocab.validate()?;
        let model = Transformer::from_params(meta.config, params)?;
        let found = fingerprint(&model, &vocab);
        if found != meta.fingerprint {
            return Err(Error::Fingerprint { expected: meta.fingerprint, found });
        }
        Ok(Checkpoint { model, vocab, phase: meta.phase, fingerprint: found, parent: meta.parent })
    }

    /// Load, requiring a specific phase.
    pub fn load_phase(path: &Path, phase: Phase) -> Result<Self> {
        let ck = Self::load(path)?;
        if ck.phase != phase {
            return Err(Error::Contract(format!(
                "{} holds a {} checkpoint, expected {phase}",
                path.display(),
                ck.phase
            )));
        }
        Ok(ck)
    }
}
