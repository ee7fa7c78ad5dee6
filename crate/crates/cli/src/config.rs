//! Pipeline configuration: a named profile, optionally overlaid by a TOML
//! file, optionally overlaid by command-line flags.

use std::path::{Path, PathBuf};

use bst_core::corpus::{SplitSpec, SyntheticSpec, MAX_SENTENCE_LEN};
use bst_core::seq2seq::MtTrainConfig;
use bst_core::style::{ClassifierConfig, TransferConfig};
use bst_core::{Error, Result};
use serde::{Deserialize, Serialize};

use crate::manifest::blob_hash;

/// Directories relative to the run root.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Paths {
    pub data: PathBuf,
    pub checkpoints: PathBuf,
    pub reports: PathBuf,
}

impl Default for Paths {
    fn default() -> Self {
        Self {
            data: "data".into(),
            checkpoints: "checkpoints".into(),
            reports: "reports".into(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitRatios {
    pub class: f64,
    pub train: f64,
    pub dev: f64,
    pub test: f64,
}

/// Held-out sizes of the parallel corpus; the rest trains the translators.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MtSplit {
    pub dev: usize,
    pub test: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LexiconConfig {
    pub k: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalConfig {
    pub stopwords: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub profile: String,
    /// Master seed; every stage seed is derived from it.
    pub seed: u64,
    pub experiment: String,
    pub max_len: usize,
    pub paths: Paths,
    pub synthetic: SyntheticSpec,
    pub splits: SplitRatios,
    pub mt_split: MtSplit,
    pub mt: MtTrainConfig,
    pub lexicon: LexiconConfig,
    pub style_vocab_size: usize,
    pub classifier: ClassifierConfig,
    pub transfer: TransferConfig,
    pub eval: EvalConfig,
}

impl PipelineConfig {
    /// Full-size model and training settings.
    pub fn full() -> Self {
        Self {
            profile: "full".into(),
            seed: 1,
            experiment: "synthetic".into(),
            max_len: MAX_SENTENCE_LEN,
            paths: Paths::default(),
            synthetic: SyntheticSpec::desk(),
            splits: SplitRatios {
                class: 0.4,
                train: 0.4,
                dev: 0.1,
                test: 0.1,
            },
            mt_split: MtSplit { dev: 1000, test: 1000 },
            mt: MtTrainConfig::default(),
            lexicon: LexiconConfig { k: 100 },
            style_vocab_size: 50_000,
            classifier: ClassifierConfig::default(),
            transfer: TransferConfig::default(),
            eval: EvalConfig { stopwords: 50 },
        }
    }

    /// Shrunk dims and step counts that fit one CPU core.
    pub fn desk() -> Self {
        Self {
            profile: "desk".into(),
            mt_split: MtSplit { dev: 250, test: 250 },
            mt: MtTrainConfig::desk(),
            lexicon: LexiconConfig { k: 8 },
            classifier: ClassifierConfig::desk(),
            transfer: TransferConfig::desk(),
            ..Self::full()
        }
    }

    pub fn profile(name: &str) -> Result<Self> {
        match name {
            "full" => Ok(Self::full()),
            "desk" => Ok(Self::desk()),
            other => Err(Error::Config(format!("unknown profile `{other}` (expected `full` or `desk`)"))),
        }
    }

    /// Starts from `profile` (or the file's own `profile` key, or `desk`) and
    /// overlays the file's keys.
    pub fn load(file: Option<&Path>, profile: Option<&str>) -> Result<Self> {
        let overlay = match file {
            Some(path) => {
                let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
                Some(text.parse::<toml::Table>().map_err(|e| Error::Config(format!("{}: {e}", path.display())))?)
            }
            None => None,
        };
        let from_file = overlay.as_ref().and_then(|t| t.get("profile")).and_then(|v| v.as_str());
        let base = Self::profile(profile.or(from_file).unwrap_or("desk"))?;
        let mut tree = toml::Table::try_from(&base).map_err(|e| Error::Config(e.to_string()))?;
        if let Some(overlay) = overlay {
            merge(&mut tree, overlay);
        }
        if let Some(p) = profile {
            tree.insert("profile".into(), toml::Value::String(p.into()));
        }
        let config: Self = toml::Value::Table(tree).try_into().map_err(|e| Error::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        if self.max_len == 0 || self.max_len > MAX_SENTENCE_LEN {
            return Err(Error::Config(format!("max_len must lie in 1..=50, got {}", self.max_len)));
        }
        if self.lexicon.k == 0 {
            return Err(Error::Config("lexicon.k must be positive".into()));
        }
        self.split_spec().validate()?;
        self.synthetic.validate()?;
        self.mt.dims.validate()?;
        self.transfer.validate()
    }

    pub fn split_spec(&self) -> SplitSpec {
        SplitSpec {
            class: self.splits.class,
            train: self.splits.train,
            dev: self.splits.dev,
            test: self.splits.test,
            seed: self.derived_seed(Stage::Splits),
        }
    }

    pub fn derived_seed(&self, stage: Stage) -> u64 {
        self.seed.wrapping_mul(1000).wrapping_add(stage as u64)
    }

    pub fn mt_config(&self) -> MtTrainConfig {
        MtTrainConfig {
            seed: self.derived_seed(Stage::Mt),
            ..self.mt.clone()
        }
    }

    pub fn classifier_config(&self, which: ClassifierRole) -> ClassifierConfig {
        let stage = match which {
            ClassifierRole::Guide => Stage::Guide,
            ClassifierRole::Judge => Stage::Judge,
        };
        ClassifierConfig {
            seed: self.derived_seed(stage),
            ..self.classifier.clone()
        }
    }

    pub fn transfer_config(&self) -> TransferConfig {
        TransferConfig {
            seed: self.derived_seed(Stage::Style),
            max_len: self.max_len,
            ..self.transfer.clone()
        }
    }

    /// Content hash of the canonical JSON form.
    pub fn hash(&self) -> String {
        blob_hash(&serde_json::to_vec(self).expect("config serializes"))
    }

    /// Settings that differ from the full-size defaults, as dotted keys.
    pub fn deviations_from_full(&self) -> Vec<String> {
        let (mine, full) = (toml::Table::try_from(self), toml::Table::try_from(Self::full()));
        let mut out = Vec::new();
        if let (Ok(mine), Ok(full)) = (mine, full) {
            diff("", &mine, &full, &mut out);
        }
        out
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ClassifierRole {
    /// Trained on the style-transfer training split; steers the generators.
    Guide,
    /// Trained on the held-out class split; scores transfer accuracy.
    Judge,
}

impl ClassifierRole {
    pub fn name(self) -> &'static str {
        match self {
            ClassifierRole::Guide => "guide",
            ClassifierRole::Judge => "judge",
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub enum Stage {
    Synthetic = 1,
    Splits = 2,
    Mt = 3,
    Guide = 4,
    Judge = 5,
    Style = 6,
}

fn merge(base: &mut toml::Table, overlay: toml::Table) {
    for (k, v) in overlay {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

fn diff(prefix: &str, a: &toml::Table, b: &toml::Table, out: &mut Vec<String>) {
    for (k, va) in a {
        let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
        match (va, b.get(k)) {
            (toml::Value::Table(ta), Some(toml::Value::Table(tb))) => diff(&key, ta, tb, out),
            (va, Some(vb)) if va == vb => {}
            _ => out.push(key),
        }
    }
}
