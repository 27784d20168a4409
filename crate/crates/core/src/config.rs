//! Run configuration: command-line flags over environment over config file.
//!
//! ```toml
//! root = "coordinator"
//! backend = "http"              # or "scripted:scenarios/demo.toml"
//! session = "work.iact"
//! modules = ["127.0.0.1:7801"]
//! scripter_workspace = "ws"
//! module_env = ["GITHUB_TOKEN"] # names only; values come from the environment
//! max_depth = 8
//! max_children = 16
//! hippocampus = true
//!
//! [[agent]]
//! type = "coordinator"
//! system_prompt = "..."
//! ```
//!
//! Credentials are read from the environment only.

use std::path::{Path, PathBuf};

use serde::Deserialize;

use crate::runtime::{RuntimeConfig, DEFAULT_MAX_CHILDREN, DEFAULT_MAX_DEPTH};
use crate::types::AgentSpec;

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub root: Option<String>,
    pub backend: Option<String>,
    pub session: Option<PathBuf>,
    #[serde(default)]
    pub modules: Vec<String>,
    pub scripter_workspace: Option<PathBuf>,
    pub docbrowser_corpus: Option<PathBuf>,
    #[serde(default)]
    pub module_env: Vec<String>,
    pub max_depth: Option<usize>,
    pub max_children: Option<usize>,
    pub hippocampus: Option<bool>,
    pub control_bind: Option<String>,
    #[serde(default, rename = "agent")]
    pub agents: Vec<AgentSpec>,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<FileConfig, String> {
        let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        let cfg: FileConfig = toml::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))?;
        for a in &cfg.agents {
            a.check().map_err(|e| format!("{}: {e}", path.display()))?;
        }
        Ok(cfg)
    }
}

/// Values given on the command line or through the environment.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub root: Option<String>,
    pub backend: Option<String>,
    pub session: Option<PathBuf>,
    pub modules: Vec<String>,
    pub scripter_workspace: Option<PathBuf>,
    pub docbrowser_corpus: Option<PathBuf>,
    pub module_env: Vec<String>,
    pub max_depth: Option<usize>,
    pub max_children: Option<usize>,
    pub hippocampus: Option<bool>,
    pub control_bind: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum BackendChoice {
    Scripted(PathBuf),
    Http,
}

impl BackendChoice {
    pub fn parse(s: &str) -> Result<BackendChoice, String> {
        match s.trim() {
            "http" => Ok(BackendChoice::Http),
            other => match other.strip_prefix("scripted:") {
                Some(p) if !p.is_empty() => Ok(BackendChoice::Scripted(PathBuf::from(p))),
                _ => Err(format!(
                    "unknown backend '{other}': use 'http' or 'scripted:<scenario.toml>'"
                )),
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub root: Option<String>,
    pub backend: BackendChoice,
    pub session: Option<PathBuf>,
    pub modules: Vec<String>,
    pub scripter_workspace: Option<PathBuf>,
    pub docbrowser_corpus: Option<PathBuf>,
    /// Names of environment variables passed to module processes.
    pub module_env: Vec<String>,
    pub max_depth: usize,
    pub max_children: usize,
    pub hippocampus: bool,
    pub control_bind: Option<String>,
    pub agents: Vec<AgentSpec>,
}

impl RunConfig {
    pub fn resolve(flags: Overrides, file: FileConfig) -> Result<RunConfig, String> {
        let backend = flags
            .backend
            .or(file.backend)
            .ok_or("no backend selected: pass --backend http or --backend scripted:<file>")?;
        let cfg = RunConfig {
            root: flags.root.or(file.root),
            backend: BackendChoice::parse(&backend)?,
            session: flags.session.or(file.session),
            modules: if flags.modules.is_empty() {
                file.modules
            } else {
                flags.modules
            },
            scripter_workspace: flags.scripter_workspace.or(file.scripter_workspace),
            docbrowser_corpus: flags.docbrowser_corpus.or(file.docbrowser_corpus),
            module_env: if flags.module_env.is_empty() {
                file.module_env
            } else {
                flags.module_env
            },
            max_depth: flags.max_depth.or(file.max_depth).unwrap_or(DEFAULT_MAX_DEPTH),
            max_children: flags.max_children.or(file.max_children).unwrap_or(DEFAULT_MAX_CHILDREN),
            hippocampus: flags.hippocampus.or(file.hippocampus).unwrap_or(false),
            control_bind: flags.control_bind.or(file.control_bind),
            agents: file.agents,
        };
        if cfg.max_depth == 0 || cfg.max_children == 0 {
            return Err("max_depth and max_children must be positive".into());
        }
        Ok(cfg)
    }

    /// Runtime settings, with module credentials looked up in `env`.
    pub fn runtime_config(&self, env: impl Fn(&str) -> Option<String>) -> RuntimeConfig {
        RuntimeConfig {
            max_depth: self.max_depth,
            max_children: self.max_children,
            hippocampus: self.hippocampus,
            module_env: self
                .module_env
                .iter()
                .filter_map(|k| env(k).map(|v| (k.clone(), v)))
                .collect(),
            ..RuntimeConfig::default()
        }
    }
}
