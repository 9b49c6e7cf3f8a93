use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{FrapError, Result};
use crate::objective::ObjectiveConfig;
use crate::pipeline::LoopConfig;
use crate::prompt::{parse_annotated, PromptSpec, DEFAULT_TOKENS};
use crate::template::{default_vocabulary, expand_template, TemplateId, Vocabulary};

/// Environment variable that replaces the configured seed list.
pub const SEED_ENV: &str = "FRAP_SEED";

/// Where the prompts of an experiment come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DatasetSource {
    /// Template expansion over a vocabulary file, or the bundled one.
    Template {
        template: TemplateId,
        #[serde(default)]
        vocab: Option<PathBuf>,
        #[serde(default)]
        seed: u64,
        /// Keep only the first `limit` prompts.
        #[serde(default)]
        limit: Option<usize>,
    },
    /// One annotated markup prompt per non-empty line.
    Annotated { path: PathBuf },
    /// One prompt-spec JSON object per non-empty line.
    Specs { path: PathBuf },
    /// Markup prompts given inline.
    Inline { prompts: Vec<String> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub dataset: DatasetSource,
    pub seeds: Vec<u64>,
    #[serde(default, rename = "loop")]
    pub loop_config: LoopConfig,
    #[serde(default)]
    pub objective: ObjectiveConfig,
    #[serde(default = "default_output")]
    pub output_dir: PathBuf,
    #[serde(default = "default_workers")]
    pub workers: usize,
    #[serde(default)]
    pub denoiser_seed: u64,
    #[serde(default)]
    pub encoder_seed: u64,
}

fn default_output() -> PathBuf {
    PathBuf::from("frap-out")
}

fn default_workers() -> usize {
    1
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| FrapError::io(path, e))
}

impl ExperimentConfig {
    pub fn new(dataset: DatasetSource, seeds: Vec<u64>) -> Self {
        Self {
            dataset,
            seeds,
            loop_config: LoopConfig::default(),
            objective: ObjectiveConfig::default(),
            output_dir: default_output(),
            workers: default_workers(),
            denoiser_seed: 0,
            encoder_seed: 0,
        }
    }

    /// Reads a JSON config. Relative dataset paths resolve against the
    /// config file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let mut cfg: Self = serde_json::from_str(&read(path)?)?;
        let base = path.parent().unwrap_or(Path::new(""));
        let rebase = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        match &mut cfg.dataset {
            DatasetSource::Template { vocab: Some(v), .. } => rebase(v),
            DatasetSource::Annotated { path } | DatasetSource::Specs { path } => rebase(path),
            _ => {}
        }
        Ok(cfg)
    }

    /// Applies the seed override from the environment, if set.
    pub fn apply_env(&mut self) -> Result<()> {
        if let Ok(raw) = std::env::var(SEED_ENV) {
            let seed = raw
                .trim()
                .parse()
                .map_err(|_| FrapError::config(format!("{SEED_ENV}=`{raw}` is not an unsigned integer")))?;
            self.seeds = vec![seed];
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(FrapError::config("experiment needs at least one seed"));
        }
        if self.workers == 0 {
            return Err(FrapError::config("worker count must be at least 1"));
        }
        self.loop_config.validate()?;
        self.objective.validate()
    }

    /// Resolves the dataset into prompt specs.
    pub fn prompts(&self) -> Result<Vec<PromptSpec>> {
        let prompts = match &self.dataset {
            DatasetSource::Template {
                template,
                vocab,
                seed,
                limit,
            } => {
                let vocab: Vocabulary = match vocab {
                    Some(path) => serde_json::from_str(&read(path)?)?,
                    None => default_vocabulary(),
                };
                let mut out = expand_template(*template, &vocab, *seed)?;
                if let Some(n) = limit {
                    out.truncate(*n);
                }
                out
            }
            DatasetSource::Annotated { path } => read(path)?
                .lines()
                .filter(|l| !l.trim().is_empty())
                .map(|l| parse_annotated(l, DEFAULT_TOKENS))
                .collect::<Result<_>>()?,
            DatasetSource::Specs { path } => read(path)?
                .lines()
                .filter(|l| !l.trim().is_empty())
                .map(|l| serde_json::from_str(l).map_err(FrapError::from))
                .collect::<Result<_>>()?,
            DatasetSource::Inline { prompts } => prompts
                .iter()
                .map(|m| parse_annotated(m, DEFAULT_TOKENS))
                .collect::<Result<_>>()?,
        };
        if prompts.is_empty() {
            return Err(FrapError::config("dataset has no prompts"));
        }
        Ok(prompts)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn json_with_defaults() {
        let cfg: ExperimentConfig = serde_json::from_str(
            r#"{"dataset": {"kind": "template", "template": "animal-animal", "limit": 2}, "seeds": [1, 2]}"#,
        )
        .unwrap();
        assert_eq!(cfg.workers, 1);
        assert_eq!(cfg.loop_config, LoopConfig::default());
        assert_eq!(cfg.prompts().unwrap().len(), 2);
        cfg.validate().unwrap();
    }

    #[test]
    fn empty_seed_list_is_rejected() {
        let cfg = ExperimentConfig::new(
            DatasetSource::Inline {
                prompts: vec!["a [o1:cat]".into()],
            },
            vec![],
        );
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn relative_paths_follow_the_config() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("p.txt"), "a [o1:cat]\n\na [m1:red] [o1:hat]\n").unwrap();
        let path = dir.path().join("exp.json");
        fs::write(
            &path,
            r#"{"dataset": {"kind": "annotated", "path": "p.txt"}, "seeds": [0]}"#,
        )
        .unwrap();
        let cfg = ExperimentConfig::load(&path).unwrap();
        assert_eq!(cfg.prompts().unwrap().len(), 2);
    }
}
