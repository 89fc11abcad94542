use std::path::Path;

use serde::{Deserialize, Serialize};
use vendorlink::eval::{ExperimentConfig, SyntheticSpec};
use vendorlink::HashEmbedConfig;

use crate::{CliResult, Failure};

/// Contents of a `--config` TOML file. Every table is optional.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FileConfig {
    pub experiment: ExperimentConfig,
    pub synth: SyntheticSpec,
    pub embed: HashEmbedConfig,
}

impl FileConfig {
    pub fn load(path: Option<&Path>, seed: Option<u64>) -> CliResult<FileConfig> {
        let mut cfg = match path {
            None => FileConfig::default(),
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| Failure::Data(format!("{}: {e}", p.display())))?;
                toml::from_str(&text).map_err(|e| Failure::Data(format!("{}: {e}", p.display())))?
            }
        };
        if let Some(s) = seed {
            cfg.apply_seed(s);
        }
        Ok(cfg)
    }

    /// One seed drives splits, fusion init, training, generation and hashing.
    pub fn apply_seed(&mut self, seed: u64) {
        self.experiment.seed = seed;
        self.experiment.train.seed = seed;
        self.synth.seed = seed;
        self.embed.seed = seed;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_is_default() {
        let cfg: FileConfig = toml::from_str("").unwrap();
        assert_eq!(cfg, FileConfig::default());
    }

    #[test]
    fn partial_tables_fill_defaults() {
        let cfg: FileConfig = toml::from_str(
            "[experiment]\nobjective = \"ce_supcon\"\n[experiment.train]\nmax_epochs = 3\n[synth]\nvendors = 12\n",
        )
        .unwrap();
        assert_eq!(cfg.experiment.train.max_epochs, 3);
        assert_eq!(cfg.experiment.train.lr, 1e-3);
        assert_eq!(cfg.synth.vendors, 12);
        assert_eq!(cfg.embed, HashEmbedConfig::default());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(toml::from_str::<FileConfig>("[experiment]\nbogus = 1\n").is_err());
        assert!(toml::from_str::<FileConfig>("[nope]\n").is_err());
    }

    #[test]
    fn seed_reaches_every_component() {
        let mut cfg = FileConfig::default();
        cfg.apply_seed(7);
        assert_eq!(
            (cfg.experiment.seed, cfg.experiment.train.seed, cfg.synth.seed, cfg.embed.seed),
            (7, 7, 7, 7)
        );
    }
}
