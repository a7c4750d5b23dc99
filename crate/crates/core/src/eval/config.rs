use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::activation::ActivationConfig;
use crate::extractor::{ExtractorWeights, DEFAULT_RESOLUTION};
use crate::imagelab::{TransformKind, TransformSpec, MIN_CORPUS_SIZE};
use crate::index::{IndexSpec, IvfPqParams};
use crate::{Error, Result};

/// Which query images are evaluated.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// The original reference images.
    Passive,
    /// The activated reference images.
    Active,
}

impl Mode {
    pub fn name(self) -> &'static str {
        match self {
            Mode::Passive => "passive",
            Mode::Active => "active",
        }
    }
}

/// Sizes of the procedural corpora.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorpusConfig {
    /// Side of the square images, in pixels.
    pub image_size: usize,
    /// Images used to train the index.
    pub train: usize,
    /// Images added to the index.
    pub references: usize,
    /// Positive queries: references `0..positives`.
    pub positives: usize,
    /// Negative queries: held-out images never added to the index.
    pub negatives: usize,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        CorpusConfig {
            image_size: 64,
            train: 10_000,
            references: 10_000,
            positives: 500,
            negatives: 2_000,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExtractorConfig {
    /// Seed of the randomly initialised weights.
    pub seed: u64,
    /// Network input side; images are resized to it.
    pub resolution: usize,
    /// Weight file; overrides `seed` and `resolution` when set.
    pub weights: Option<PathBuf>,
}

impl Default for ExtractorConfig {
    fn default() -> Self {
        ExtractorConfig {
            seed: 1,
            resolution: DEFAULT_RESOLUTION,
            weights: None,
        }
    }
}

impl ExtractorConfig {
    pub fn build(&self) -> Result<ExtractorWeights> {
        match &self.weights {
            Some(path) => ExtractorWeights::load(path),
            None => {
                if self.resolution == 0 {
                    return Err(Error::invalid("extractor resolution must be positive"));
                }
                Ok(ExtractorWeights::init_with_resolution(self.seed, self.resolution))
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RetrievalConfig {
    /// Candidates kept per query for micro-AP.
    pub k: usize,
    /// Cells probed per query.
    pub nprobe: usize,
    /// Points kept per reported precision-recall curve.
    pub pr_points: usize,
}

impl Default for RetrievalConfig {
    fn default() -> Self {
        RetrievalConfig {
            k: 10,
            nprobe: 1,
            pr_points: 100,
        }
    }
}

/// The nine query transformations evaluated by default.
pub fn default_transforms() -> Vec<TransformSpec> {
    use TransformKind::*;
    vec![
        TransformSpec::identity(),
        TransformSpec::new(Contrast, 0.5),
        TransformSpec::new(Brightness, 1.4),
        TransformSpec::new(Hue, 0.05),
        TransformSpec::new(Blur, 2.0),
        TransformSpec::new(Rotate, 5.0),
        TransformSpec::new(CenterCrop, 0.85),
        TransformSpec::new(Resize, 0.5),
        TransformSpec::new(GaussianNoise, 16.0),
    ]
}

/// Everything an experiment run depends on. Every field has a default, so
/// `{}` is a valid configuration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Root seed for corpora, index training and per-query noise.
    pub seed: u64,
    pub corpus: CorpusConfig,
    pub extractor: ExtractorConfig,
    pub index: IndexSpec,
    pub activation: ActivationConfig,
    pub modes: Vec<Mode>,
    pub transforms: Vec<TransformSpec>,
    pub retrieval: RetrievalConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            seed: 0,
            corpus: CorpusConfig::default(),
            extractor: ExtractorConfig::default(),
            index: IndexSpec::IvfPq(IvfPqParams::default()),
            activation: ActivationConfig::default(),
            modes: vec![Mode::Passive, Mode::Active],
            transforms: default_transforms(),
            retrieval: RetrievalConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let config: ExperimentConfig = serde_json::from_str(text).map_err(|e| Error::invalid(format!("config: {e}")))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    pub fn validate(&self) -> Result<()> {
        let c = &self.corpus;
        if c.image_size < MIN_CORPUS_SIZE {
            return Err(Error::invalid(format!(
                "corpus.image_size must be at least {MIN_CORPUS_SIZE}, got {}",
                c.image_size
            )));
        }
        if c.train == 0 || c.references == 0 {
            return Err(Error::invalid("corpus.train and corpus.references must be positive"));
        }
        if c.positives == 0 || c.positives > c.references {
            return Err(Error::invalid(format!(
                "corpus.positives must lie in 1..={}, got {}",
                c.references, c.positives
            )));
        }
        if c.negatives == 0 {
            return Err(Error::invalid("corpus.negatives must be positive"));
        }
        if self.modes.is_empty() {
            return Err(Error::invalid("modes must not be empty"));
        }
        if self.transforms.is_empty() {
            return Err(Error::invalid("transforms must not be empty"));
        }
        for t in &self.transforms {
            t.validate()?;
        }
        if self.retrieval.k == 0 || self.retrieval.nprobe == 0 {
            return Err(Error::invalid("retrieval.k and retrieval.nprobe must be positive"));
        }
        self.activation.validate()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_object_gives_defaults() {
        assert_eq!(ExperimentConfig::from_json("{}").unwrap(), ExperimentConfig::default());
    }

    #[test]
    fn json_round_trip() {
        let c = ExperimentConfig::default();
        assert_eq!(ExperimentConfig::from_json(&c.to_json().unwrap()).unwrap(), c);
    }

    #[test]
    fn rejects_unknown_fields_and_bad_sizes() {
        assert!(ExperimentConfig::from_json(r#"{"sed": 3}"#).is_err());
        assert!(ExperimentConfig::from_json(r#"{"corpus": {"positives": 20, "references": 10}}"#).is_err());
        assert!(ExperimentConfig::from_json(r#"{"modes": []}"#).is_err());
    }
}
