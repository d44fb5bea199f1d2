//! One TOML file drives a whole run: grammar settings, network size,
//! training schedule, seed, and input paths.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grammar::{GrammarConfig, RuleFamily, CONDITIONAL_FAMILIES};
use crate::quad::{Polarity, POLARITIES};
use crate::scorer::ScorerConfig;
use crate::trainer::TrainConfig;

/// Run settings. Every field has a default, so an empty file is a valid
/// config, and unknown keys are rejected. Relative paths resolve against
/// the config file's directory at load time, and referenced input files
/// must exist by then.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Optional file pinning the category inventory, one name per line.
    /// Without it the inventory is derived from the corpus being read.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub categories_file: Option<PathBuf>,
    /// Canonical corpus to read.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub corpus: Option<PathBuf>,
    /// Enabled conditional rule families by name. All four by default.
    pub rule_families: Vec<String>,
    /// Polarity words the ACOS numeric codes 0, 1, 2 denote, for dumps
    /// that deviate from the public release convention.
    pub acos_polarity_codes: [String; 3],
    /// Parameter initialization seed. Shuffling is seeded separately by
    /// the trainer section.
    pub seed: u64,
    pub scorer: ScorerConfig,
    pub trainer: TrainConfig,
}

impl Default for RunConfig {
    fn default() -> RunConfig {
        RunConfig {
            categories_file: None,
            corpus: None,
            rule_families: CONDITIONAL_FAMILIES
                .iter()
                .map(|f| f.as_str().to_string())
                .collect(),
            acos_polarity_codes: POLARITIES.map(|p| p.as_str().to_string()),
            seed: 0,
            scorer: ScorerConfig::default(),
            trainer: TrainConfig::default(),
        }
    }
}

fn resolve(base: &Path, p: PathBuf) -> PathBuf {
    if p.is_absolute() {
        p
    } else {
        base.join(p)
    }
}

impl RunConfig {
    /// Parse config text. Family names, polarity words, and the embedded
    /// sections are validated here; path existence is `load`'s business.
    pub fn from_toml(text: &str) -> Result<RunConfig> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.families()?;
        cfg.acos_codes()?;
        Ok(cfg)
    }

    /// Read a config file, resolve its relative paths, and require the
    /// referenced input files to exist.
    pub fn load(path: &Path) -> Result<RunConfig> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let mut cfg = RunConfig::from_toml(&text)?;
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        cfg.categories_file = cfg.categories_file.map(|p| resolve(base, p));
        cfg.corpus = cfg.corpus.map(|p| resolve(base, p));
        for p in [&cfg.categories_file, &cfg.corpus].into_iter().flatten() {
            if !p.exists() {
                return Err(Error::Config(format!("{}: no such file", p.display())));
            }
        }
        Ok(cfg)
    }

    pub fn families(&self) -> Result<BTreeSet<RuleFamily>> {
        let mut out = BTreeSet::new();
        for name in &self.rule_families {
            let family = RuleFamily::parse(name)
                .ok_or_else(|| Error::Config(format!("unknown rule family {name:?}")))?;
            out.insert(family);
        }
        Ok(out)
    }

    pub fn grammar_config(&self, categories: Vec<String>) -> Result<GrammarConfig> {
        Ok(GrammarConfig {
            categories,
            families: self.families()?,
        })
    }

    /// The ACOS code mapping as polarities, code order preserved.
    pub fn acos_codes(&self) -> Result<[Polarity; 3]> {
        let mut out = [Polarity::Neutral; 3];
        for (i, word) in self.acos_polarity_codes.iter().enumerate() {
            out[i] = Polarity::parse(word)
                .ok_or_else(|| Error::Config(format!("unknown polarity {word:?}")))?;
        }
        Ok(out)
    }
}

#[cfg(test)]
mod test {
    use super::*;
    use std::io::Write as _;

    #[test]
    fn empty_text_gives_defaults() {
        let cfg = RunConfig::from_toml("").unwrap();
        assert_eq!(cfg, RunConfig::default());
        assert_eq!(cfg.families().unwrap().len(), 4);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        for text in ["whatever = 1", "[scorer]\nwidth = 3", "[trainer]\nlr = 0.5"] {
            let err = RunConfig::from_toml(text).unwrap_err();
            assert!(err.to_string().contains("unknown field"), "{text:?}: {err}");
        }
    }

    #[test]
    fn partial_sections_merge_with_defaults() {
        let cfg =
            RunConfig::from_toml("seed = 9\n[scorer]\ndim = 16\n[trainer]\nepochs = 3\n").unwrap();
        assert_eq!(cfg.seed, 9);
        assert_eq!(cfg.scorer.dim, 16);
        assert_eq!(cfg.scorer.hidden, ScorerConfig::default().hidden);
        assert_eq!(cfg.trainer.epochs, 3);
        assert_eq!(
            cfg.trainer.learning_rate,
            TrainConfig::default().learning_rate
        );
    }

    #[test]
    fn bad_family_names_fail_at_parse() {
        let err = RunConfig::from_toml("rule_families = [\"bogus\"]").unwrap_err();
        assert!(err.to_string().contains("unknown rule family"), "{err}");
    }

    #[test]
    fn polarity_codes_can_be_remapped_but_not_misspelled() {
        let cfg =
            RunConfig::from_toml("acos_polarity_codes = [\"positive\", \"neutral\", \"negative\"]")
                .unwrap();
        assert_eq!(
            cfg.acos_codes().unwrap(),
            [Polarity::Positive, Polarity::Neutral, Polarity::Negative]
        );
        assert_eq!(RunConfig::default().acos_codes().unwrap(), POLARITIES);

        let err =
            RunConfig::from_toml("acos_polarity_codes = [\"pos\", \"neu\", \"neg\"]").unwrap_err();
        assert!(err.to_string().contains("unknown polarity"), "{err}");
    }

    #[test]
    fn load_resolves_and_checks_paths() {
        let dir = tempfile::tempdir().unwrap();
        let cfg_path = dir.path().join("run.toml");
        let mut f = fs::File::create(&cfg_path).unwrap();
        writeln!(f, "categories_file = \"cats.txt\"").unwrap();
        drop(f);

        let err = RunConfig::load(&cfg_path).unwrap_err();
        assert!(err.to_string().contains("no such file"), "{err}");

        fs::write(dir.path().join("cats.txt"), "A#A\n").unwrap();
        let cfg = RunConfig::load(&cfg_path).unwrap();
        assert_eq!(
            cfg.categories_file.as_deref(),
            Some(dir.path().join("cats.txt").as_path())
        );
    }

    #[test]
    fn toml_round_trips() {
        let cfg = RunConfig {
            categories_file: Some(PathBuf::from("/tmp/cats.txt")),
            corpus: Some(PathBuf::from("corpus.txt")),
            rule_families: vec!["one_to_many".into()],
            seed: 5,
            ..RunConfig::default()
        };
        let text = toml::to_string(&cfg).unwrap();
        assert_eq!(RunConfig::from_toml(&text).unwrap(), cfg);

        let text = toml::to_string(&RunConfig::default()).unwrap();
        assert_eq!(RunConfig::from_toml(&text).unwrap(), RunConfig::default());
    }
}
