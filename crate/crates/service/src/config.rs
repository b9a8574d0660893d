//! Service configuration file and the runtime built from it.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use roleplay_core::arena::{BattleLedger, EloConfig};
use roleplay_core::filter::{filter_registry, FilterConfig};
use roleplay_core::gateway::{Backend, BackendSpec, FaultInjector, FaultRates, Gateway};
use roleplay_core::memory::{AuxTemplates, MemorySettings, MemoryToggles, SummaryToggles};
use roleplay_core::pipeline::{PipelineSettings, TurnPipeline};
use roleplay_core::prompt::TaskCatalog;
use roleplay_core::selfchat::BattleQuota;
use roleplay_core::stats::{Normalizer, PluginNormalizer, StatsError, SurfaceLower};
use roleplay_core::store::{Clock, ConversationStore, SystemClock};
use serde::{Deserialize, Serialize};

fn default_listen() -> String {
    "127.0.0.1:8080".to_string()
}

fn default_corpus() -> PathBuf {
    PathBuf::from("corpus")
}

fn default_ledger() -> PathBuf {
    PathBuf::from("ledger.jsonl")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArenaSettings {
    pub min_battles: usize,
    pub max_battles: usize,
    pub seed: u64,
}

impl Default for ArenaSettings {
    fn default() -> Self {
        Self {
            min_battles: 5,
            max_battles: 14,
            seed: 0,
        }
    }
}

impl ArenaSettings {
    pub fn quota(&self) -> BattleQuota {
        BattleQuota {
            min: self.min_battles,
            max: self.max_battles,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormalizerMode {
    #[default]
    Surface,
    Plugin,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StatsSettings {
    pub normalizer: NormalizerMode,
    /// Program and arguments of the lemmatizer plugin.
    pub plugin_command: Vec<String>,
}

/// Injected fault rates applied to every backend; off when absent.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FaultSettings {
    pub empty: f64,
    pub too_long: f64,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ServiceConfig {
    #[serde(default = "default_listen")]
    pub listen: String,
    /// Conversation files; created when missing.
    #[serde(default = "default_corpus")]
    pub corpus_dir: PathBuf,
    #[serde(default = "default_ledger")]
    pub ledger: PathBuf,
    /// Overrides for task and auxiliary templates.
    #[serde(default)]
    pub templates_dir: Option<PathBuf>,
    #[serde(default)]
    pub filter_config: Option<PathBuf>,
    pub backends: BTreeMap<String, BackendSpec>,
    #[serde(default)]
    pub pipeline: PipelineSettings,
    #[serde(default)]
    pub memory: MemoryToggles,
    #[serde(default)]
    pub summary: SummaryToggles,
    #[serde(default)]
    pub elo: EloConfig,
    #[serde(default)]
    pub arena: ArenaSettings,
    #[serde(default)]
    pub stats: StatsSettings,
    #[serde(default)]
    pub faults: Option<FaultSettings>,
    /// Directory relative paths resolve against; the config file's directory.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

#[derive(Debug, thiserror::Error)]
#[error("{0}")]
pub struct ConfigError(pub String);

impl ServiceConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let src = std::fs::read_to_string(path)
            .map_err(|e| ConfigError(format!("{}: {e}", path.display())))?;
        let mut cfg: ServiceConfig =
            toml::from_str(&src).map_err(|e| ConfigError(format!("{}: {e}", path.display())))?;
        cfg.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(cfg)
    }

    /// Minimal config over the given backends, rooted at `base_dir`.
    pub fn with_backends(base_dir: &Path, backends: BTreeMap<String, BackendSpec>) -> Self {
        Self {
            listen: default_listen(),
            corpus_dir: default_corpus(),
            ledger: default_ledger(),
            templates_dir: None,
            filter_config: None,
            backends,
            pipeline: PipelineSettings::default(),
            memory: MemoryToggles::default(),
            summary: SummaryToggles::default(),
            elo: EloConfig::default(),
            arena: ArenaSettings::default(),
            stats: StatsSettings::default(),
            faults: None,
            base_dir: base_dir.to_path_buf(),
        }
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.backends.is_empty() {
            return Err(ConfigError("no backend configured".into()));
        }
        for (what, p) in [
            ("templates_dir", &self.templates_dir),
            ("filter_config", &self.filter_config),
        ] {
            if let Some(p) = p {
                let p = self.resolve(p);
                if !p.exists() {
                    return Err(ConfigError(format!(
                        "{what}: {} does not exist",
                        p.display()
                    )));
                }
            }
        }
        if self.arena.min_battles > self.arena.max_battles {
            return Err(ConfigError(
                "arena.min_battles exceeds arena.max_battles".into(),
            ));
        }
        if self.stats.normalizer == NormalizerMode::Plugin && self.stats.plugin_command.is_empty() {
            return Err(ConfigError(
                "stats.plugin_command is required for the plugin normalizer".into(),
            ));
        }
        Ok(())
    }

    pub fn memory_settings(&self) -> MemorySettings {
        MemorySettings {
            memory: self.memory,
            summary: self.summary,
        }
    }

    pub fn build_gateway(&self) -> Result<Gateway, ConfigError> {
        let mut gateway = Gateway::new();
        for (i, (id, spec)) in self.backends.iter().enumerate() {
            let mut backend: Arc<dyn Backend> = spec
                .build(id, &self.base_dir)
                .map_err(|e| ConfigError(format!("backend `{id}`: {e}")))?;
            if let Some(f) = self.faults {
                let rates = FaultRates {
                    empty: f.empty,
                    too_long: f.too_long,
                };
                backend = Arc::new(FaultInjector::new(backend, rates, f.seed + i as u64));
            }
            gateway.register(id.clone(), backend);
        }
        Ok(gateway)
    }

    pub fn build_pipeline(&self) -> Result<TurnPipeline, ConfigError> {
        self.validate()?;
        let (catalog, aux) = match &self.templates_dir {
            Some(dir) => {
                let dir = self.resolve(dir);
                (
                    TaskCatalog::with_overrides(&dir).map_err(|e| ConfigError(e.to_string()))?,
                    AuxTemplates::with_overrides(&dir.join("aux"))
                        .map_err(|e| ConfigError(e.to_string()))?,
                )
            }
            None => (TaskCatalog::builtin(), AuxTemplates::builtin()),
        };
        let (filter_cfg, detector) = match &self.filter_config {
            Some(p) => {
                let p = self.resolve(p);
                let cfg = FilterConfig::load(&p).map_err(|e| ConfigError(e.to_string()))?;
                let base = p.parent().map(Path::to_path_buf).unwrap_or_default();
                let det = cfg
                    .detector(&base)
                    .map_err(|e| ConfigError(e.to_string()))?;
                (cfg, det)
            }
            None => {
                let cfg = FilterConfig::default();
                let det = cfg
                    .detector(&self.base_dir)
                    .map_err(|e| ConfigError(e.to_string()))?;
                (cfg, det)
            }
        };
        let filters =
            filter_registry(&filter_cfg, detector).map_err(|e| ConfigError(e.to_string()))?;
        Ok(TurnPipeline {
            catalog: Arc::new(catalog),
            gateway: Arc::new(self.build_gateway()?),
            filters,
            aux,
            memory: self.memory_settings(),
            settings: self.pipeline,
        })
    }

    pub fn normalizer(&self) -> Result<Box<dyn Normalizer>, StatsError> {
        match self.stats.normalizer {
            NormalizerMode::Surface => Ok(Box::new(SurfaceLower)),
            NormalizerMode::Plugin => {
                let (prog, args) = self.stats.plugin_command.split_first().ok_or_else(|| {
                    StatsError::UnknownNormalizer("plugin without command".into())
                })?;
                Ok(Box::new(PluginNormalizer::spawn(prog, args)?))
            }
        }
    }
}

/// Everything the HTTP service and the CLI commands share.
#[derive(Debug)]
pub struct Runtime {
    pub config: ServiceConfig,
    pub pipeline: Arc<TurnPipeline>,
    pub store: Arc<ConversationStore>,
    pub ledger: Arc<BattleLedger>,
    pub clock: Arc<dyn Clock>,
}

impl Runtime {
    /// Opens the corpus and ledger on disk.
    pub fn open(config: ServiceConfig) -> Result<Self, ConfigError> {
        Self::open_with_clock(config, Arc::new(SystemClock))
    }

    pub fn open_with_clock(
        config: ServiceConfig,
        clock: Arc<dyn Clock>,
    ) -> Result<Self, ConfigError> {
        let pipeline = config.build_pipeline()?;
        let corpus = config.resolve(&config.corpus_dir);
        let store = ConversationStore::open(&corpus, Arc::clone(&clock))
            .map_err(|e| ConfigError(format!("corpus: {e}")))?;
        let ledger = BattleLedger::open(&config.resolve(&config.ledger))
            .map_err(|e| ConfigError(format!("ledger: {e}")))?;
        Ok(Self {
            config,
            pipeline: Arc::new(pipeline),
            store: Arc::new(store),
            ledger: Arc::new(ledger),
            clock,
        })
    }

    /// Corpus and ledger held in memory only.
    pub fn in_memory(config: ServiceConfig, clock: Arc<dyn Clock>) -> Result<Self, ConfigError> {
        let pipeline = config.build_pipeline()?;
        Ok(Self {
            config,
            pipeline: Arc::new(pipeline),
            store: Arc::new(ConversationStore::in_memory(Arc::clone(&clock))),
            ledger: Arc::new(BattleLedger::in_memory()),
            clock,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_documented_schema() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("mock.txt"), "Bonjour !\n").unwrap();
        let path = dir.path().join("service.toml");
        std::fs::write(
            &path,
            r#"
listen = "0.0.0.0:9000"
corpus_dir = "data"

[backends.vicuna]
kind = "mock"
script = "mock.txt"

[pipeline]
token_budget = 1000

[memory]
cadence = 3

[arena]
min_battles = 2
max_battles = 3
seed = 4
"#,
        )
        .unwrap();
        let cfg = ServiceConfig::load(&path).unwrap();
        assert_eq!(cfg.listen, "0.0.0.0:9000");
        assert_eq!(cfg.pipeline.token_budget, 1000);
        assert_eq!(cfg.memory.cadence, 3);
        assert_eq!(cfg.arena.quota(), BattleQuota { min: 2, max: 3 });
        let rt = Runtime::open(cfg).unwrap();
        assert!(dir.path().join("data").is_dir());
        assert!(rt.pipeline.gateway.contains("vicuna"));
    }

    #[test]
    fn rejects_bad_configs() {
        let dir = tempfile::tempdir().unwrap();
        let empty = ServiceConfig::with_backends(dir.path(), BTreeMap::new());
        assert!(empty.validate().is_err());
        let mut missing = ServiceConfig::with_backends(
            dir.path(),
            [(
                "m".to_string(),
                BackendSpec::Mock {
                    script: "nope.txt".into(),
                    cycle: true,
                },
            )]
            .into(),
        );
        assert!(missing.build_pipeline().is_err());
        missing.filter_config = Some("absent.toml".into());
        assert!(missing.validate().unwrap_err().0.contains("filter_config"));
        let path = dir.path().join("bad.toml");
        std::fs::write(&path, "listen = 3\n").unwrap();
        assert!(ServiceConfig::load(&path).is_err());
    }
}
