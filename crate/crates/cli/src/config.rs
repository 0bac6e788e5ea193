//! Run configuration, read from a TOML file.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::Context;
use kgnews::classifier::{ClassifierConfig, TrainProtocol};
use kgnews::complex_embedding::TrainConfig;
use kgnews::dataset_pipeline::SyntheticSpec;
use kgnews::entity_linker::NedBackend;
use kgnews::text_encoder::EncoderConfig;
use serde::{Deserialize, Serialize};

use crate::UsageError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub triples: PathBuf,
    pub aliases: PathBuf,
    pub news: PathBuf,
    /// Optional; no file means no bias terms.
    pub bias: Option<PathBuf>,
    pub output_dir: PathBuf,
}

impl Default for Paths {
    fn default() -> Self {
        Self {
            triples: "data/triples.tsv".into(),
            aliases: "data/aliases.tsv".into(),
            news: "data/news.csv".into(),
            bias: None,
            output_dir: "out".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Name written into reports.
    pub dataset: String,
    /// Seed of the stratified train/test split.
    pub split_seed: u64,
    /// Fraction of triples held out for link-prediction metrics.
    pub kg_holdout: f64,
    pub paths: Paths,
    pub kg: TrainConfig,
    pub encoder: EncoderConfig,
    pub classifier: ClassifierConfig,
    pub protocol: TrainProtocol,
    pub ned: NedBackend,
    pub synthetic: Option<SyntheticSpec>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            dataset: "dataset".into(),
            split_seed: 0,
            kg_holdout: 0.1,
            paths: Paths::default(),
            kg: TrainConfig::default(),
            encoder: EncoderConfig::default(),
            classifier: ClassifierConfig::default(),
            protocol: TrainProtocol::default(),
            ned: NedBackend::default(),
            synthetic: None,
        }
    }
}

impl RunConfig {
    /// Parses `path`; relative paths inside are resolved against the file's
    /// directory.
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| UsageError(format!("cannot read config {}: {e}", path.display())))?;
        let mut config: RunConfig =
            toml::from_str(&text).map_err(|e| UsageError(format!("invalid config {}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        config.resolve_paths(base);
        Ok(config)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.paths.triples);
        fix(&mut self.paths.aliases);
        fix(&mut self.paths.news);
        fix(&mut self.paths.output_dir);
        if let Some(b) = self.paths.bias.as_mut() {
            fix(b);
        }
    }

    /// Replaces every seed: KG init, split, synthetic generator, and the
    /// trial seeds (`s, s+1, ...`, keeping their count).
    pub fn override_seed(&mut self, seed: u64) {
        self.kg.seed = seed;
        self.split_seed = seed;
        if let Some(spec) = self.synthetic.as_mut() {
            spec.seed = seed;
        }
        let n = self.protocol.seeds.len().max(1);
        self.protocol.seeds = (0..n as u64).map(|k| seed.wrapping_add(k)).collect();
    }

    /// Fails with a usage error when the config cannot drive any command.
    pub fn validate(&self) -> anyhow::Result<()> {
        let check = |r: kgnews::Result<()>| r.map_err(|e| anyhow::Error::new(UsageError(e.to_string())));
        check(self.kg.validate())?;
        check(self.protocol.validate())?;
        if let Some(spec) = &self.synthetic {
            check(spec.validate())?;
        }
        if !(0.0..1.0).contains(&self.kg_holdout) {
            return Err(UsageError(format!("kg_holdout {} outside [0, 1)", self.kg_holdout)).into());
        }
        if self.encoder.embed_dim == 0 || self.encoder.hidden == 0 || self.classifier.fusion_hidden == 0 {
            return Err(UsageError("encoder and classifier sizes must be positive".into()).into());
        }
        if self.encoder.vocab_cap < 3 {
            return Err(UsageError("vocab_cap must leave room for at least one token".into()).into());
        }
        Ok(())
    }

    pub fn to_toml(&self) -> anyhow::Result<String> {
        toml::to_string(self).context("serializing config")
    }
}

/// Errors out with a usage error naming the first missing input.
pub fn require_inputs(paths: &[&Path]) -> anyhow::Result<()> {
    for p in paths {
        if !p.exists() {
            return Err(UsageError(format!("input file not found: {}", p.display())).into());
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_document_gives_defaults() {
        let c: RunConfig = toml::from_str("").unwrap();
        assert_eq!(c, RunConfig::default());
        assert_eq!(c.protocol.batch_size, 32);
        assert_eq!(c.encoder.hidden, 256);
    }

    #[test]
    fn sections_parse() {
        let c: RunConfig = toml::from_str(
            r#"
            dataset = "toy"
            [paths]
            triples = "t.tsv"
            bias = "bias.txt"
            [kg]
            dim = 8
            [protocol]
            seeds = [5, 6, 7]
            patience = 3
            [ned]
            kind = "remote-lookup"
            timeout_ms = 100
            [synthetic]
            n_items = 10
            "#,
        )
        .unwrap();
        assert_eq!(c.kg.dim, 8);
        assert_eq!(c.protocol.patience, Some(3));
        assert!(matches!(c.ned, NedBackend::RemoteLookup(ref s) if s.timeout_ms == 100));
        assert_eq!(c.synthetic.unwrap().n_items, 10);
        assert_eq!(c.paths.bias, Some(PathBuf::from("bias.txt")));
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(toml::from_str::<RunConfig>("[paths]\ntriple = \"x\"").is_err());
    }

    #[test]
    fn seed_override_touches_every_seed() {
        let mut c = RunConfig {
            synthetic: Some(SyntheticSpec::default()),
            ..RunConfig::default()
        };
        c.override_seed(100);
        assert_eq!(c.kg.seed, 100);
        assert_eq!(c.split_seed, 100);
        assert_eq!(c.synthetic.unwrap().seed, 100);
        assert_eq!(c.protocol.seeds, vec![100, 101, 102]);
    }

    #[test]
    fn relative_paths_follow_the_config_file() {
        let mut c = RunConfig::default();
        c.resolve_paths(Path::new("/exp"));
        assert_eq!(c.paths.triples, PathBuf::from("/exp/data/triples.tsv"));
        assert_eq!(c.paths.output_dir, PathBuf::from("/exp/out"));
    }

    #[test]
    fn round_trips_through_toml() {
        let c = RunConfig {
            synthetic: Some(SyntheticSpec::default()),
            ..RunConfig::default()
        };
        let back: RunConfig = toml::from_str(&c.to_toml().unwrap()).unwrap();
        assert_eq!(back, c);
    }
}
