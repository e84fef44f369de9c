use std::path::{Path, PathBuf};

use aegis_core::queue::{IntervalBounds, DEFAULT_MAX_GAP, DEFAULT_MIN_GAP};
use aegis_core::suggest::{Strategy, SuggestConfig, DEFAULT_EPSILON_P, DEFAULT_MAX_CANDIDATES};
use aegis_core::taxonomy::LinkParams;
use aegis_core::Error;
use serde::Deserialize;

use crate::args::{Format, Global, StrategyArg};
use crate::CliError;

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    pub seed: Option<u64>,
    pub repo: Option<PathBuf>,
    pub profile: Option<PathBuf>,
    pub format: Option<Format>,
    #[serde(default)]
    pub queue: QueueSection,
    #[serde(default)]
    pub suggest: SuggestSection,
    #[serde(default)]
    pub link: LinkSection,
    #[serde(default)]
    pub serve: ServeSection,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QueueSection {
    pub min_gap: Option<u64>,
    pub max_gap: Option<u64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SuggestSection {
    pub max_candidates: Option<usize>,
    pub epsilon_p: Option<f64>,
    pub strategy: Option<StrategyArg>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinkSection {
    pub delta_link: Option<f64>,
    pub min_support: Option<u64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ServeSection {
    pub addr: Option<String>,
    pub static_dir: Option<PathBuf>,
}

impl From<StrategyArg> for Strategy {
    fn from(s: StrategyArg) -> Self {
        match s {
            StrategyArg::Dependent => Strategy::Dependent,
            StrategyArg::IndependentBaseline => Strategy::IndependentBaseline,
        }
    }
}

/// Flags merged over the config file; flags win.
#[derive(Debug)]
pub struct Settings {
    seed: Option<u64>,
    pub repo: Option<PathBuf>,
    pub profile: Option<PathBuf>,
    pub format: Option<Format>,
    pub file: ConfigFile,
}

impl Settings {
    pub fn resolve(global: &Global) -> Result<Self, CliError> {
        let file = match &global.config {
            Some(path) => {
                let text = read(path)?;
                toml::from_str(&text)
                    .map_err(|e| CliError::Usage(format!("config {}: {e}", path.display())))?
            }
            None => ConfigFile::default(),
        };
        Ok(Settings {
            seed: global.seed.or(file.seed),
            repo: global.repo.clone().or_else(|| file.repo.clone()),
            profile: global.profile.clone().or_else(|| file.profile.clone()),
            format: global.format.or(file.format),
            file,
        })
    }

    pub fn seed(&self) -> u64 {
        self.seed.unwrap_or(0)
    }

    /// The seed only when one was given by flag, `AEGIS_SEED` or config.
    pub fn explicit_seed(&self) -> Option<u64> {
        self.seed
    }

    pub fn format_or(&self, default: Format) -> Format {
        self.format.unwrap_or(default)
    }

    pub fn repo_path(&self) -> Result<&Path, CliError> {
        self.repo
            .as_deref()
            .ok_or_else(|| CliError::Usage("--repo is required for this command".into()))
    }

    pub fn profile_path(&self) -> Result<&Path, CliError> {
        self.profile
            .as_deref()
            .ok_or_else(|| CliError::Usage("--profile is required for this command".into()))
    }

    pub fn bounds(&self) -> Result<IntervalBounds, CliError> {
        Ok(IntervalBounds::new(
            self.file.queue.min_gap.unwrap_or(DEFAULT_MIN_GAP),
            self.file.queue.max_gap.unwrap_or(DEFAULT_MAX_GAP),
        )?)
    }

    pub fn suggest_config(&self, strategy: Option<StrategyArg>, max_candidates: Option<usize>) -> SuggestConfig {
        let s = &self.file.suggest;
        SuggestConfig {
            max_candidates: max_candidates.or(s.max_candidates).unwrap_or(DEFAULT_MAX_CANDIDATES),
            epsilon_p: s.epsilon_p.unwrap_or(DEFAULT_EPSILON_P),
            strategy: strategy.or(s.strategy).map(Strategy::from).unwrap_or_default(),
        }
    }

    pub fn link(&self) -> LinkParams {
        let d = LinkParams::default();
        LinkParams {
            delta_link: self.file.link.delta_link.unwrap_or(d.delta_link),
            min_support: self.file.link.min_support.unwrap_or(d.min_support),
        }
    }
}

pub fn read(path: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(path)
        .map_err(|e| CliError::Domain(Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display())))))
}
