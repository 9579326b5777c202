//! Run configuration: TOML file, then command-line overrides.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::contrastive::PretrainConfig;
use crate::corpus::Schema;
use crate::error::{Error, Result};
use crate::joint::FinetuneConfig;
use crate::metrics::MetricConfig;
use crate::model::TransformerConfig;
use crate::refine::RefineConfig;
use crate::synth::SynthConfig;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelPreset {
    #[default]
    Tiny,
    Base,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub preset: ModelPreset,
    pub dropout_p: Option<f64>,
    pub d_model: Option<usize>,
    pub ff_dim: Option<usize>,
    pub max_src_len: Option<usize>,
    pub max_tgt_len: Option<usize>,
}

impl ModelSection {
    pub fn build(&self, vocab_size: usize) -> Result<TransformerConfig> {
        let mut c = match self.preset {
            ModelPreset::Tiny => TransformerConfig::tiny(vocab_size),
            ModelPreset::Base => TransformerConfig::base(vocab_size),
        };
        if let Some(p) = self.dropout_p {
            c.dropout_p = p;
        }
        if let Some(d) = self.d_model {
            c.d_model = d;
        }
        if let Some(f) = self.ff_dim {
            c.ff_dim = f;
        }
        if let Some(s) = self.max_src_len {
            c.max_src_len = s;
        }
        if let Some(t) = self.max_tgt_len {
            c.max_tgt_len = t;
        }
        c.validate()?;
        Ok(c)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    /// Line-delimited JSON corpus. Without one, a synthetic corpus is generated.
    pub corpus: Option<PathBuf>,
    pub synth: SynthConfig,
    pub min_frequency: usize,
    pub dedup: bool,
    /// Field renames for the corpus file, e.g. `"code=src,comment=doc"`.
    pub schema: Option<String>,
}

impl DataSection {
    pub fn schema(&self) -> Result<Schema> {
        match &self.schema {
            Some(s) => s.parse().map_err(Error::Config),
            None => Ok(Schema::default()),
        }
    }
}

impl Default for DataSection {
    fn default() -> Self {
        DataSection {
            corpus: None,
            synth: SynthConfig::default(),
            min_frequency: 1,
            dedup: true,
            schema: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PretrainSection {
    pub skip: bool,
    #[serde(flatten)]
    pub params: PretrainConfig,
}

impl Default for PretrainSection {
    fn default() -> Self {
        PretrainSection { skip: false, params: PretrainConfig::default() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RefineSection {
    pub skip: bool,
    #[serde(flatten)]
    pub params: RefineConfig,
}

impl Default for RefineSection {
    fn default() -> Self {
        RefineSection { skip: false, params: RefineConfig::default() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    /// Longest generated comment, framing markers included.
    pub max_len: usize,
    /// Beam width; 1 means greedy.
    pub beam_width: usize,
    /// Also score the training split (before and after refinement).
    pub train_split: bool,
    pub metrics: MetricConfig,
}

impl Default for EvalSection {
    fn default() -> Self {
        EvalSection { max_len: 64, beam_width: 1, train_split: false, metrics: MetricConfig::default() }
    }
}

/// Named ablation settings.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Arm {
    /// All three phases with joint training.
    #[default]
    Full,
    /// Bare queries, plain cross-entropy, no pretraining or refinement.
    OnlyGenerator,
    /// Retriever frozen after pretraining, generator trained with unit weights.
    WithoutCombined,
    WithoutPretrainedSr,
    WithoutSr,
}

impl Arm {
    pub const ALL: [Arm; 5] = [Arm::Full, Arm::OnlyGenerator, Arm::WithoutCombined, Arm::WithoutPretrainedSr, Arm::WithoutSr];

    pub fn name(self) -> &'static str {
        match self {
            Arm::Full => "full",
            Arm::OnlyGenerator => "only-generator",
            Arm::WithoutCombined => "without-combined",
            Arm::WithoutPretrainedSr => "without-pretrained-sr",
            Arm::WithoutSr => "without-sr",
        }
    }

    pub fn parse(s: &str) -> Result<Arm> {
        Arm::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| Error::Contract(format!("unknown ablation arm {s:?}")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: u64,
    pub output_dir: PathBuf,
    pub arm: Arm,
    /// Reuse phase checkpoints already present in the output directory.
    pub resume: bool,
    pub data: DataSection,
    pub model: ModelSection,
    pub pretrain: PretrainSection,
    pub finetune: FinetuneConfig,
    pub refine: RefineSection,
    pub eval: EvalSection,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            seed: 7,
            output_dir: PathBuf::from("runs/default"),
            arm: Arm::Full,
            resume: false,
            data: DataSection::default(),
            model: ModelSection::default(),
            pretrain: PretrainSection::default(),
            finetune: FinetuneConfig::default(),
            refine: RefineSection::default(),
            eval: EvalSection::default(),
        }
    }
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |name: &str, x: f64| {
            if x > 0.0 && x.is_finite() {
                Ok(())
            } else {
                Err(Error::Config(format!("{name} must be positive, got {x}")))
            }
        };
        positive("pretrain.learning_rate", self.pretrain.params.learning_rate)?;
        positive("pretrain.temperature", self.pretrain.params.temperature)?;
        positive("finetune.learning_rate", self.finetune.learning_rate)?;
        positive("refine.learning_rate", self.refine.params.train.learning_rate)?;
        positive("refine.temperature", self.refine.params.candidates.temperature)?;
        self.finetune.validate()?;
        self.refine.params.train.validate()?;
        if self.pretrain.params.batch_size < 2 {
            return Err(Error::Config("pretrain.batch_size must be at least 2".into()));
        }
        if self.refine.params.candidates.count == 0 {
            return Err(Error::Config("refine.candidates.count must be at least 1".into()));
        }
        if self.eval.beam_width == 0 || self.eval.max_len < 2 {
            return Err(Error::Config("eval.beam_width must be positive and eval.max_len at least 2".into()));
        }
        self.data.schema()?;
        if let Some(p) = &self.data.corpus {
            if !p.exists() {
                return Err(Error::Config(format!("corpus {} does not exist", p.display())));
            }
        }
        Ok(())
    }

    /// The configuration after applying the arm's switches.
    pub fn for_arm(&self, arm: Arm) -> PipelineConfig {
        let mut c = self.clone();
        c.arm = arm;
        match arm {
            Arm::Full => {}
            Arm::OnlyGenerator => {
                c.pretrain.skip = true;
                c.refine.skip = true;
                c.finetune.no_retrieval = true;
            }
            Arm::WithoutCombined => {
                c.finetune.weighting = crate::joint::Weighting::Uniform;
                c.refine.params.train.weighting = crate::joint::Weighting::Uniform;
            }
            Arm::WithoutPretrainedSr => {
                c.pretrain.skip = true;
                c.refine.skip = true;
            }
            Arm::WithoutSr => c.refine.skip = true,
        }
        c
    }

    /// Whether the retriever is trained together with the generator.
    pub fn joint_retriever(&self) -> bool {
        self.arm != Arm::WithoutCombined
    }

    /// SHA-256 of the canonical JSON form. Where the run writes and whether
    /// it resumes do not change its results, so they are left out.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.output_dir = PathBuf::new();
        c.resume = false;
        let json = serde_json::to_vec(&c).expect("config serialises");
        hex::encode(Sha256::digest(json))
    }
}
