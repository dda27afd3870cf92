//! Run configuration: a JSON file whose keys all have defaults, overridden
//! by command-line flags.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use synthcap_core::lexicon::{Lexicon, HELD_OUT_CLASSES};
use synthcap_core::pipeline::PipelineConfig;
use synthcap_core::rewrite::{RewriteConfig, RewriteLexicons};
use synthcap_core::synth::{PairConstraints, DEFAULT_K};
use synthcap_core::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CliConfig {
    pub seed: u64,
    pub novel_classes: Vec<String>,
    /// Class lexicon JSON; the bundled COCO lexicon when unset.
    pub lexicon: Option<PathBuf>,
    /// Directory with colors.txt, adjectives.txt, nouns.txt and
    /// irregular_plurals.txt; bundled lists when unset.
    pub rewrite_lexicons: Option<PathBuf>,
    /// Synthetic images per novel class.
    pub k: usize,
    /// Replacement candidates per novel class.
    pub m: usize,
    pub pair_constraints: PairConstraints,
    pub rewrite: RewriteConfig,
    pub pipeline: PipelineConfig,
}

impl Default for CliConfig {
    fn default() -> Self {
        CliConfig {
            seed: 0,
            novel_classes: HELD_OUT_CLASSES.iter().map(|s| s.to_string()).collect(),
            lexicon: None,
            rewrite_lexicons: None,
            k: DEFAULT_K,
            m: 3,
            pair_constraints: PairConstraints::default(),
            rewrite: RewriteConfig::default(),
            pipeline: PipelineConfig::default(),
        }
    }
}

impl CliConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let content = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&content).map_err(|e| Error::json(path, &content, &e))
    }

    pub fn load_or_default(path: Option<&Path>) -> Result<Self> {
        path.map_or_else(|| Ok(CliConfig::default()), CliConfig::load)
    }

    pub fn validate(&self) -> Result<()> {
        if self.novel_classes.is_empty() {
            return Err(Error::Config("novel_classes must not be empty".into()));
        }
        if self.m == 0 || self.k < self.m {
            return Err(Error::Config(format!("need k >= m >= 1, got k={}, m={}", self.k, self.m)));
        }
        self.pair_constraints.validate()?;
        self.pipeline.validate()
    }

    pub fn lexicon(&self) -> Result<Lexicon> {
        match &self.lexicon {
            Some(path) => Lexicon::load(path),
            None => Ok(Lexicon::default()),
        }
    }

    pub fn rewrite_lexicons(&self) -> Result<RewriteLexicons> {
        match &self.rewrite_lexicons {
            Some(dir) => RewriteLexicons::load_dir(dir),
            None => Ok(RewriteLexicons::default()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use synthcap_core::pipeline::{STEP1_SCHEDULE, STEP2_SCHEDULE};

    #[test]
    fn defaults_are_the_published_hyperparameters() {
        let c = CliConfig::default();
        assert_eq!((c.k, c.m), (2400, 3));
        let g = c.pair_constraints;
        assert_eq!(
            (g.area_min, g.area_delta_max_pct, g.aspect_min, g.aspect_max, g.aspect_delta_max_pct),
            (1000.0, 200.0, 0.05, 5.0, 30.0)
        );
        assert_eq!((c.rewrite.radius_adj, c.rewrite.radius_noun), (2, 1));
        assert_eq!(c.pipeline.rounds, 4);
        assert_eq!(STEP1_SCHEDULE.batch_size, 100);
        assert_eq!(STEP2_SCHEDULE.batch_size, 100);
        assert_eq!(c.pipeline.schedule.batch_size, 100);
        assert_eq!(c.novel_classes.len(), 8);
        c.validate().unwrap();
    }

    #[test]
    fn partial_file_keeps_other_defaults() {
        let c: CliConfig = serde_json::from_str(r#"{"k": 90, "pipeline": {"rounds": 2, "scorer": {"tag_weight": 0.5}}}"#).unwrap();
        assert_eq!(c.k, 90);
        assert_eq!(c.m, 3);
        assert_eq!(c.pipeline.rounds, 2);
        assert_eq!(c.pipeline.scorer.tag_weight, 0.5);
        assert_eq!(c.pipeline.scorer.order, 3);
        assert_eq!(c.pair_constraints, PairConstraints::default());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(serde_json::from_str::<CliConfig>(r#"{"kk": 1}"#).is_err());
    }
}
