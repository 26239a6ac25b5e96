use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::heavyweight::HeavyConfig;
use crate::router::Layer;
use crate::tools::ToolConfig;

use super::drivers::Method;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    #[default]
    Scripted,
    Live,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BackendConfig {
    pub kind: BackendKind,
    /// Script directory for the scripted backend.
    pub scripts: Option<PathBuf>,
    /// Model label written to results; for live runs also the served model.
    pub model: String,
    /// Live endpoint; falls back to the environment when unset.
    pub base_url: Option<String>,
}

impl Default for BackendConfig {
    fn default() -> Self {
        Self {
            kind: BackendKind::Scripted,
            scripts: None,
            model: "scripted".into(),
            base_url: None,
        }
    }
}

/// How Reflexion learns whether an episode succeeded.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum FeedbackMode {
    /// Scorer verdict against the gold answer; format validity when the gold
    /// carries no correctness signal.
    #[default]
    Gold,
    /// Only whether an answer was produced in the expected format.
    Format,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Knobs {
    pub self_refine_rounds: u32,
    pub reflexion_episodes: u32,
    pub reflexion_feedback: FeedbackMode,
    pub checklist_interval: u32,
    pub react_max_steps: u32,
    pub temperature: f64,
    pub top_p: f64,
    pub max_tokens: u32,
}

impl Default for Knobs {
    fn default() -> Self {
        Self {
            self_refine_rounds: 3,
            reflexion_episodes: 3,
            reflexion_feedback: FeedbackMode::Gold,
            checklist_interval: 3,
            react_max_steps: 10,
            temperature: 0.6,
            top_p: 0.95,
            max_tokens: crate::gateway::DEFAULT_MAX_TOKENS,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub problems: PathBuf,
    pub out: PathBuf,
    pub methods: Vec<Method>,
    pub seeds: Vec<u64>,
    /// Keep only problems whose domain label is listed; empty keeps all.
    pub domains: Vec<String>,
    /// Overrides the registry layer of the routed methods.
    pub layer: Option<Layer>,
    pub workers: usize,
    pub prompts_dir: Option<PathBuf>,
    /// Stop after writing this many new rows.
    pub max_new_rows: Option<usize>,
    pub backend: BackendConfig,
    pub knobs: Knobs,
    pub tools: ToolConfig,
    pub heavyweight: HeavyConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            problems: PathBuf::from("problems.jsonl"),
            out: PathBuf::from("results"),
            methods: vec![Method::Full],
            seeds: vec![0],
            domains: Vec::new(),
            layer: None,
            workers: 4,
            prompts_dir: None,
            max_new_rows: None,
            backend: BackendConfig::default(),
            knobs: Knobs::default(),
            tools: ToolConfig::default(),
            heavyweight: HeavyConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, toml::de::Error> {
        toml::from_str(text)
    }

    /// Loads a config file; relative paths inside it resolve against the
    /// file's directory.
    pub fn load(path: &Path) -> Result<Self, Box<dyn std::error::Error + Send + Sync>> {
        let mut cfg = Self::from_toml(&std::fs::read_to_string(path)?)?;
        let base = path.parent().unwrap_or(Path::new("."));
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut cfg.problems);
        fix(&mut cfg.out);
        if let Some(p) = cfg.prompts_dir.as_mut() {
            fix(p);
        }
        if let Some(p) = cfg.backend.scripts.as_mut() {
            fix(p);
        }
        Ok(cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toml_defaults_and_overrides() {
        let cfg = RunConfig::from_toml(
            r#"
            methods = ["direct", "self_refine", "full"]
            seeds = [0, 1, 2]
            layer = "core"
            [backend]
            scripts = "scripts"
            [knobs]
            react_max_steps = 4
            "#,
        )
        .unwrap();
        assert_eq!(cfg.methods, vec![Method::Direct, Method::SelfRefine, Method::Full]);
        assert_eq!(cfg.layer, Some(Layer::NoDomainTools));
        assert_eq!(cfg.knobs.react_max_steps, 4);
        assert_eq!(cfg.knobs.self_refine_rounds, 3);
        assert_eq!(cfg.knobs.reflexion_episodes, 3);
        assert_eq!(cfg.knobs.checklist_interval, 3);
        assert_eq!((cfg.knobs.temperature, cfg.knobs.top_p), (0.6, 0.95));
        assert_eq!(cfg.heavyweight.t_max, 20);
        assert!(RunConfig::from_toml("methods = [\"nope\"]").is_err());
    }
}
