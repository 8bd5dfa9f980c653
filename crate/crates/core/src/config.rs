//! Experiment configuration: TOML schema, domain validation and hashing.
//!
//! ```toml
//! [data]
//! path = "../data/ETTh1.csv"      # or a [data.synthetic] table
//! exclude_channels = []
//! # split = [8545, 2881, 2881]    # window-count override
//!
//! [model]
//! dataset = "ETTh1"
//! T = 96
//! H = 96
//! instance_norm = true
//! seed = 2024
//! extractors = [{ cover = 10 }, { cover = 20, stride = 10, dilation = 2 }]
//! embedding = { kind = "linear_1", e_f = 32, e_t = 16 }
//! time_method = { use_timeF = true, use_tempEmb = false, use_posEmb = false }
//! memory = { N = 1, use_attention = false, heads = 4, use_glu = true, joint_feature_mix = false, dropout = 0.25 }
//! projection = { R = 1 }
//!
//! [train]
//! delta = 1.0
//! lr0 = 0.001
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::representation::PatchExtractorSpec;

pub const COVER_SIZES: [usize; 7] = [3, 5, 10, 15, 20, 48, 64];
pub const FEATURE_WIDTHS: [usize; 6] = [4, 8, 16, 32, 64, 128];
pub const TIME_WIDTHS: [usize; 2] = [8, 16];
pub const HEADS: [usize; 4] = [4, 8, 16, 32];
pub const MEMORY_DEPTHS: [usize; 8] = [0, 1, 2, 3, 4, 5, 8, 10];
pub const DROPOUTS: [f64; 5] = [0.25, 0.33, 0.5, 0.66, 0.9];
pub const LSTM_DEPTHS: [usize; 4] = [0, 1, 2, 3];
pub const HORIZONS: [usize; 4] = [96, 192, 336, 720];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum EmbeddingKind {
    #[serde(rename = "linear_1")]
    Linear1,
    #[serde(rename = "linear_2")]
    Linear2,
    #[serde(rename = "linear_gelu")]
    LinearGelu,
    #[serde(rename = "linear_gelu_glu")]
    LinearGeluGlu,
    #[serde(rename = "cnn_linear")]
    CnnLinear,
    #[serde(rename = "cnn_gelu_2")]
    CnnGelu2,
    #[serde(rename = "cnn_maxpool_2")]
    CnnMaxpool2,
}

impl EmbeddingKind {
    pub const ALL: [EmbeddingKind; 7] = [
        EmbeddingKind::Linear1,
        EmbeddingKind::Linear2,
        EmbeddingKind::LinearGelu,
        EmbeddingKind::LinearGeluGlu,
        EmbeddingKind::CnnLinear,
        EmbeddingKind::CnnGelu2,
        EmbeddingKind::CnnMaxpool2,
    ];

    pub fn is_cnn(self) -> bool {
        matches!(self, EmbeddingKind::CnnLinear | EmbeddingKind::CnnGelu2 | EmbeddingKind::CnnMaxpool2)
    }

    /// Shortest patch the kind can embed.
    pub fn min_cover(self) -> usize {
        match self {
            EmbeddingKind::CnnMaxpool2 => 9,
            _ => 1,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            EmbeddingKind::Linear1 => "linear_1",
            EmbeddingKind::Linear2 => "linear_2",
            EmbeddingKind::LinearGelu => "linear_gelu",
            EmbeddingKind::LinearGeluGlu => "linear_gelu_glu",
            EmbeddingKind::CnnLinear => "cnn_linear",
            EmbeddingKind::CnnGelu2 => "cnn_gelu_2",
            EmbeddingKind::CnnMaxpool2 => "cnn_maxpool_2",
        }
    }
}

fn default_cnn_channels() -> usize {
    8
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EmbeddingStrategy {
    pub kind: EmbeddingKind,
    pub e_f: usize,
    pub e_t: usize,
    /// Channel count of the hidden convolutions of the CNN kinds.
    #[serde(default = "default_cnn_channels")]
    pub cnn_channels: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimeEmbeddingMethod {
    #[serde(rename = "use_timeF", default)]
    pub use_time_f: bool,
    #[serde(rename = "use_tempEmb", default)]
    pub use_temp_emb: bool,
    #[serde(rename = "use_posEmb", default)]
    pub use_pos_emb: bool,
}

impl TimeEmbeddingMethod {
    pub fn any(self) -> bool {
        self.use_time_f || self.use_temp_emb || self.use_pos_emb
    }

    /// The eight flag combinations, starting with the all-off baseline.
    pub fn all() -> [TimeEmbeddingMethod; 8] {
        std::array::from_fn(|i| TimeEmbeddingMethod {
            use_time_f: i & 1 != 0,
            use_temp_emb: i & 2 != 0,
            use_pos_emb: i & 4 != 0,
        })
    }
}

/// One patch extractor; stride and dilation fall back to the defaults of
/// [`resolve_extractors`](crate::representation::resolve_extractors).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExtractorConfig {
    pub cover: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stride: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dilation: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttentionNormalizer {
    #[default]
    Entmax15,
    Softmax,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MemoryConfig {
    #[serde(rename = "N")]
    pub n: usize,
    pub use_attention: bool,
    pub heads: usize,
    pub use_glu: bool,
    pub joint_feature_mix: bool,
    pub dropout: f64,
    #[serde(default)]
    pub attention_normalizer: AttentionNormalizer,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProjectionConfig {
    #[serde(rename = "R")]
    pub r: usize,
    /// Recurrent state width; defaults to the representation width.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hidden: Option<usize>,
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub dataset: String,
    #[serde(rename = "T")]
    pub t: usize,
    #[serde(rename = "H")]
    pub h: usize,
    pub extractors: Vec<ExtractorConfig>,
    pub embedding: EmbeddingStrategy,
    pub time_method: TimeEmbeddingMethod,
    pub memory: MemoryConfig,
    pub projection: ProjectionConfig,
    #[serde(default = "default_true")]
    pub instance_norm: bool,
    #[serde(default)]
    pub seed: u64,
}

impl ModelConfig {
    /// Width of a time-informed patch embedding.
    pub fn embed_width(&self) -> usize {
        self.embedding.e_f + if self.time_method.any() { self.embedding.e_t } else { 0 }
    }

    pub fn hidden_width(&self) -> usize {
        if self.projection.r == 0 {
            self.embed_width()
        } else {
            self.projection.hidden.unwrap_or_else(|| self.embed_width())
        }
    }

    /// Checks every field against its domain, naming the first offender.
    pub fn validate(&self) -> Result<()> {
        if self.t == 0 {
            return Err(Error::config("model.T", "must be positive"));
        }
        if self.h == 0 {
            return Err(Error::config("model.H", "must be positive"));
        }
        if self.extractors.is_empty() || self.extractors.len() > 5 {
            return Err(Error::config("model.extractors", format!("need 1 to 5 extractors, got {}", self.extractors.len())));
        }
        for (i, e) in self.extractors.iter().enumerate() {
            if !COVER_SIZES.contains(&e.cover) {
                return Err(Error::config(format!("model.extractors[{i}].cover"), format!("{} not in {COVER_SIZES:?}", e.cover)));
            }
            if e.stride == Some(0) {
                return Err(Error::config(format!("model.extractors[{i}].stride"), "must be at least 1"));
            }
            if e.dilation == Some(0) {
                return Err(Error::config(format!("model.extractors[{i}].dilation"), "must be at least 1"));
            }
            if e.cover < self.embedding.kind.min_cover() {
                return Err(Error::config(
                    "model.embedding.kind",
                    format!("{} needs cover >= {}, extractor {i} has {}", self.embedding.kind.name(), self.embedding.kind.min_cover(), e.cover),
                ));
            }
        }
        let emb = &self.embedding;
        if !FEATURE_WIDTHS.contains(&emb.e_f) {
            return Err(Error::config("model.embedding.e_f", format!("{} not in {FEATURE_WIDTHS:?}", emb.e_f)));
        }
        if !TIME_WIDTHS.contains(&emb.e_t) {
            return Err(Error::config("model.embedding.e_t", format!("{} not in {TIME_WIDTHS:?}", emb.e_t)));
        }
        if emb.cnn_channels == 0 {
            return Err(Error::config("model.embedding.cnn_channels", "must be positive"));
        }
        let mem = &self.memory;
        if mem.n > 10 {
            return Err(Error::config("model.memory.N", format!("{} exceeds 10", mem.n)));
        }
        if !HEADS.contains(&mem.heads) {
            return Err(Error::config("model.memory.heads", format!("{} not in {HEADS:?}", mem.heads)));
        }
        if mem.dropout != 0.0 && !DROPOUTS.iter().any(|d| (d - mem.dropout).abs() < 1e-9) {
            return Err(Error::config("model.memory.dropout", format!("{} not 0 or in {DROPOUTS:?}", mem.dropout)));
        }
        if mem.use_attention && mem.n > 0 && self.embed_width() % mem.heads != 0 {
            return Err(Error::config(
                "model.memory.heads",
                format!("{} heads do not divide the embedding width {}", mem.heads, self.embed_width()),
            ));
        }
        if self.projection.r > 4 {
            return Err(Error::config("model.projection.R", format!("{} exceeds 4", self.projection.r)));
        }
        if self.projection.hidden == Some(0) {
            return Err(Error::config("model.projection.hidden", "must be positive"));
        }
        Ok(())
    }

    pub fn resolved_extractors(&self) -> Result<Vec<PatchExtractorSpec>> {
        crate::representation::resolve_extractors(&self.extractors, self.t)
    }

    pub fn hash(&self) -> String {
        hash_json(self)
    }
}

fn hash_json<T: Serialize>(value: &T) -> String {
    let bytes = serde_json::to_vec(value).expect("config serializes");
    hex::encode(Sha256::digest(&bytes))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticConfig {
    pub rows: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_noise")]
    pub noise: f64,
}

fn default_noise() -> f64 {
    0.1
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    /// CSV path; relative paths resolve against the config file.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
    /// Seeded stand-in with the registry schema of `model.dataset`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub synthetic: Option<SyntheticConfig>,
    #[serde(default)]
    pub exclude_channels: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub split: Option<[usize; 3]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub delta: f64,
    pub lr0: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub es_patience: usize,
    pub es_min_rel_improve: f64,
    pub lr_patience: usize,
    pub lr_factor: f64,
    /// Global gradient-norm clip; off when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub grad_clip: Option<f64>,
    /// Caps batches per epoch, for smoke runs.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_batches_per_epoch: Option<usize>,
    /// Caps validation and test windows, for smoke runs.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_eval_windows: Option<usize>,
    pub eval_batch_size: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            delta: 1.0,
            lr0: 1e-3,
            batch_size: 32,
            max_epochs: 100,
            es_patience: 3,
            es_min_rel_improve: 0.01,
            lr_patience: 1,
            lr_factor: 0.5,
            grad_clip: None,
            max_batches_per_epoch: None,
            max_eval_windows: None,
            eval_batch_size: 256,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.delta > 0.0 && self.delta.is_finite()) {
            return Err(Error::config("train.delta", "must be positive"));
        }
        if !(self.lr0 >= 0.0 && self.lr0.is_finite()) {
            return Err(Error::config("train.lr0", "must be non-negative"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("train.batch_size", "must be positive"));
        }
        if self.eval_batch_size == 0 {
            return Err(Error::config("train.eval_batch_size", "must be positive"));
        }
        if self.max_epochs == 0 {
            return Err(Error::config("train.max_epochs", "must be positive"));
        }
        if !(self.lr_factor > 0.0 && self.lr_factor < 1.0) {
            return Err(Error::config("train.lr_factor", "must lie in (0, 1)"));
        }
        if self.es_min_rel_improve < 0.0 {
            return Err(Error::config("train.es_min_rel_improve", "must be non-negative"));
        }
        if matches!(self.grad_clip, Some(c) if !(c > 0.0)) {
            return Err(Error::config("train.grad_clip", "must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub data: DataConfig,
    pub model: ModelConfig,
    #[serde(default)]
    pub train: TrainConfig,
}

impl ExperimentConfig {
    /// Parses and validates a TOML document.
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let de = toml::Deserializer::parse(text).map_err(|e| Error::config("<document>", e.to_string().trim().to_string()))?;
        let cfg: ExperimentConfig = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            Error::config(if path == "." { "<document>".to_string() } else { path }, e.inner().to_string().trim().to_string())
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads a config file; a relative data path is rebased on its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let mut cfg = Self::from_toml_str(&text)?;
        if let (Some(p), Some(dir)) = (cfg.data.path.as_mut(), path.parent()) {
            if p.is_relative() {
                *p = dir.join(&*p);
            }
        }
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes to TOML")
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.train.validate()?;
        match (&self.data.path, &self.data.synthetic) {
            (Some(_), Some(_)) => Err(Error::config("data", "give either `path` or `synthetic`, not both")),
            (None, None) => Err(Error::config("data", "missing `path` or `synthetic`")),
            (None, Some(_)) if crate::data::lookup(&self.model.dataset).is_none() => Err(Error::config(
                "model.dataset",
                format!("unknown dataset `{}`: synthetic stand-ins need a registered schema", self.model.dataset),
            )),
            _ => Ok(()),
        }
    }

    /// Hash of the full experiment record.
    pub fn hash(&self) -> String {
        hash_json(self)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) const SAMPLE: &str = r#"
[data]
synthetic = { rows = 400, seed = 1 }

[model]
dataset = "ETTh1"
T = 96
H = 96
seed = 7
extractors = [{ cover = 10 }, { cover = 20 }]
embedding = { kind = "linear_1", e_f = 16, e_t = 8 }
time_method = { use_timeF = true }
memory = { N = 1, use_attention = true, heads = 4, use_glu = true, joint_feature_mix = false, dropout = 0.25 }
projection = { R = 1 }
"#;

    #[test]
    fn parses_and_defaults() {
        let cfg = ExperimentConfig::from_toml_str(SAMPLE).unwrap();
        assert!(cfg.model.instance_norm);
        assert_eq!(cfg.train, TrainConfig::default());
        assert_eq!(cfg.model.embed_width(), 24);
        assert_eq!(cfg.model.memory.attention_normalizer, AttentionNormalizer::Entmax15);
    }

    #[test]
    fn toml_round_trip_keeps_hash() {
        let cfg = ExperimentConfig::from_toml_str(SAMPLE).unwrap();
        let back = ExperimentConfig::from_toml_str(&cfg.to_toml_string()).unwrap();
        assert_eq!(cfg, back);
        assert_eq!(cfg.hash(), back.hash());
        assert_eq!(cfg.hash().len(), 64);
    }

    #[test]
    fn hash_changes_with_content() {
        let cfg = ExperimentConfig::from_toml_str(SAMPLE).unwrap();
        let mut other = cfg.clone();
        other.model.seed += 1;
        assert_ne!(cfg.model.hash(), other.model.hash());
    }

    fn field_of(text: &str) -> String {
        match ExperimentConfig::from_toml_str(text) {
            Err(Error::Config { field, .. }) => field,
            other => panic!("expected config error, got {other:?}"),
        }
    }

    #[test]
    fn errors_name_the_field() {
        assert_eq!(field_of(&SAMPLE.replace("e_f = 16", "e_f = 12")), "model.embedding.e_f");
        assert_eq!(field_of(&SAMPLE.replace("heads = 4", "heads = 16")), "model.memory.heads");
        assert_eq!(field_of(&SAMPLE.replace("cover = 20", "cover = 21")), "model.extractors[1].cover");
        assert_eq!(field_of(&SAMPLE.replace("R = 1", "R = 5")), "model.projection.R");
        assert_eq!(field_of(&SAMPLE.replace("N = 1", "N = 11")), "model.memory.N");
        assert_eq!(field_of(&SAMPLE.replace("dropout = 0.25", "dropout = 0.3")), "model.memory.dropout");
        assert_eq!(field_of(&SAMPLE.replace("dataset = \"ETTh1\"", "dataset = \"Nope\"")), "model.dataset");
        assert!(field_of(&SAMPLE.replace("seed = 7", "sed = 7")).starts_with("model"));
        assert!(field_of(&SAMPLE.replace("kind = \"linear_1\"", "kind = \"linear_9\"")).contains("embedding.kind"));
    }

    #[test]
    fn maxpool_cover_restriction() {
        let text = SAMPLE.replace("kind = \"linear_1\"", "kind = \"cnn_maxpool_2\"");
        assert!(ExperimentConfig::from_toml_str(&text).is_ok());
        let text = text.replace("cover = 10", "cover = 5");
        match ExperimentConfig::from_toml_str(&text) {
            Err(Error::Config { field, .. }) => assert_eq!(field, "model.embedding.kind"),
            other => panic!("{other:?}"),
        }
    }
}
