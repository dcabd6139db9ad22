//! Run configuration: a JSON file of flat dotted keys overlaid on the
//! training defaults, then command-line flags overlaid on that.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use sqledit::training::TrainConfig;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Paths {
    pub train: Option<PathBuf>,
    pub dev: Option<PathBuf>,
    pub tables: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub command: String,
    pub paths: Paths,
    pub out: Option<PathBuf>,
    pub jobs: usize,
    pub verbosity: u8,
    pub train: TrainConfig,
}

impl RunConfig {
    pub fn new(command: &str) -> Self {
        RunConfig {
            command: command.to_string(),
            paths: Paths::default(),
            out: None,
            jobs: 0,
            verbosity: 0,
            train: TrainConfig::default(),
        }
    }

    /// Applies `key = value` pairs such as `train.model.hidden_size = 16`.
    pub fn overlay(&mut self, pairs: &Map<String, Value>) -> anyhow::Result<()> {
        let mut tree = serde_json::to_value(&*self)?;
        for (key, value) in pairs {
            if key == "command" {
                bail!("config key `command` cannot be set");
            }
            let mut node = &mut tree;
            for part in key.split('.') {
                node = match node {
                    Value::Object(m) if m.contains_key(part) => m.get_mut(part).unwrap(),
                    _ => bail!("unknown config key `{key}`"),
                };
            }
            *node = value.clone();
        }
        *self = serde_json::from_value(tree).context("config values do not fit their keys")?;
        // The two dimensions must agree; whichever one was given wins.
        if pairs.contains_key("train.provider.dimension") {
            self.train.model.embedding_dim = self.train.provider.dimension;
        } else if pairs.contains_key("train.model.embedding_dim") {
            self.train.provider.dimension = self.train.model.embedding_dim;
        }
        Ok(())
    }

    pub fn load_file(&mut self, path: &Path) -> anyhow::Result<()> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        let value: Value = serde_json::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?;
        let Value::Object(pairs) = value else {
            bail!("config {} must be a JSON object of dotted keys", path.display());
        };
        if let Some((k, _)) = pairs.iter().find(|(_, v)| v.is_object()) {
            bail!("config key `{k}` is nested; use flat dotted keys");
        }
        self.overlay(&pairs)
    }

    /// Every leaf as a flat dotted key.
    pub fn flatten(&self) -> Map<String, Value> {
        fn walk(prefix: &str, v: &Value, out: &mut Map<String, Value>) {
            match v {
                Value::Object(m) => {
                    for (k, child) in m {
                        let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                        walk(&key, child, out);
                    }
                }
                leaf => {
                    out.insert(prefix.to_string(), leaf.clone());
                }
            }
        }
        let mut out = Map::new();
        walk("", &serde_json::to_value(self).expect("config serializes"), &mut out);
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn dotted_overlay_and_flatten_roundtrip() {
        let mut c = RunConfig::new("train");
        let pairs = json!({"train.model.hidden_size": 8, "train.provider.dimension": 10, "paths.train": "a.json"});
        c.overlay(pairs.as_object().unwrap()).unwrap();
        assert_eq!(c.train.model.hidden_size, 8);
        assert_eq!(c.train.model.embedding_dim, 10);
        assert_eq!(c.paths.train, Some(PathBuf::from("a.json")));
        let mut flat = c.flatten();
        assert_eq!(flat["train.model.hidden_size"], json!(8));
        let mut d = RunConfig::new("train");
        flat.remove("command");
        d.overlay(&flat).unwrap();
        assert_eq!(c, d);
    }

    #[test]
    fn unknown_and_mistyped_keys_are_rejected() {
        let mut c = RunConfig::new("train");
        assert!(c.overlay(json!({"train.nope": 1}).as_object().unwrap()).is_err());
        assert!(c.overlay(json!({"train.batch_size": "x"}).as_object().unwrap()).is_err());
        assert!(c.overlay(json!({"command": "eval"}).as_object().unwrap()).is_err());
    }
}
