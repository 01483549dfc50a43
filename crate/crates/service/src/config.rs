use std::path::PathBuf;

use tabsight_core::agent::Checkpoint;
use tabsight_core::EngineConfig;

use crate::session::Recommender;

pub const PORT_VAR: &str = "TABSIGHT_PORT";
pub const DATA_DIR_VAR: &str = "TABSIGHT_DATA_DIR";

#[derive(Clone, Debug, PartialEq)]
pub struct ServiceConfig {
    pub host: String,
    pub port: u16,
    pub data_dir: PathBuf,
    /// Trained agent; the greedy baseline recommends when absent.
    pub checkpoint: Option<PathBuf>,
    pub engine: EngineConfig,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        ServiceConfig {
            host: "127.0.0.1".into(),
            port: 8080,
            data_dir: PathBuf::from("tabsight-data"),
            checkpoint: None,
            engine: EngineConfig::default(),
        }
    }
}

impl ServiceConfig {
    /// Applies `TABSIGHT_PORT` and `TABSIGHT_DATA_DIR` through `lookup`.
    pub fn with_overrides(mut self, lookup: impl Fn(&str) -> Option<String>) -> Result<Self, String> {
        if let Some(port) = lookup(PORT_VAR) {
            self.port = port.trim().parse().map_err(|_| format!("{PORT_VAR}={port:?} is not a port number"))?;
        }
        if let Some(dir) = lookup(DATA_DIR_VAR) {
            self.data_dir = PathBuf::from(dir);
        }
        Ok(self)
    }

    pub fn with_env_overrides(self) -> Result<Self, String> {
        self.with_overrides(|k| std::env::var(k).ok())
    }

    pub fn recommender(&self) -> Result<Recommender, String> {
        let Some(path) = &self.checkpoint else { return Ok(Recommender::Greedy) };
        let ckpt = Checkpoint::load(path).map_err(|e| format!("{}: {e}", path.display()))?;
        let agent = ckpt.agent().map_err(|e| format!("{}: {e}", path.display()))?;
        let name = format!("checkpoint:{:016x}", agent.params.fingerprint());
        Ok(Recommender::Agent { agent: Box::new(agent), name })
    }
}
