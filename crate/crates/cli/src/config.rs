//! Flat JSON run configuration.
//!
//! Keys mirror the field names of `ModelConfig`, its `ablation` switches,
//! `TrainConfig` and `ExperimentConfig`, all at the top level:
//!
//! ```json
//! {"hidden_size": 64, "learning_rate": 0.001, "no_somatic": true, "folds": 3}
//! ```

use std::path::Path;

use bdrisk_core::trainer::ExperimentConfig;
use serde_json::{Map, Value};

use crate::CliError;

fn section_keys(v: &Value) -> Vec<String> {
    v.as_object().map(|m| m.keys().cloned().collect()).unwrap_or_default()
}

/// Routes flat keys into the nested `ExperimentConfig` layout.
pub fn apply_flat(base: &ExperimentConfig, flat: &Map<String, Value>) -> Result<ExperimentConfig, CliError> {
    let mut tree = serde_json::to_value(base).expect("config serializes");
    let model_keys = section_keys(&tree["model"]);
    let ablation_keys = section_keys(&tree["model"]["ablation"]);
    let train_keys = section_keys(&tree["train"]);
    let top_keys: Vec<String> = section_keys(&tree)
        .into_iter()
        .filter(|k| k != "model" && k != "train")
        .collect();
    for (key, value) in flat {
        let slot = if ablation_keys.contains(key) {
            &mut tree["model"]["ablation"][key]
        } else if model_keys.contains(key) && key != "ablation" {
            &mut tree["model"][key]
        } else if train_keys.contains(key) {
            &mut tree["train"][key]
        } else if top_keys.contains(key) {
            &mut tree[key]
        } else {
            return Err(CliError::Data(format!("unknown config key {key:?}")));
        };
        *slot = value.clone();
    }
    serde_json::from_value(tree).map_err(|e| CliError::Data(format!("config: {e}")))
}

pub fn load_flat(path: &Path) -> Result<Map<String, Value>, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    match serde_json::from_str::<Value>(&text) {
        Ok(Value::Object(m)) => Ok(m),
        Ok(_) => Err(CliError::Data(format!("{}: config must be a JSON object", path.display()))),
        Err(e) => Err(CliError::Data(format!("{}: {e}", path.display()))),
    }
}

/// Every flat key with its current value.
pub fn flatten(cfg: &ExperimentConfig) -> Map<String, Value> {
    let tree = serde_json::to_value(cfg).expect("config serializes");
    let mut out = Map::new();
    for (k, v) in tree.as_object().expect("object") {
        match k.as_str() {
            "model" | "train" => {
                for (mk, mv) in v.as_object().expect("object") {
                    if mk == "ablation" {
                        out.extend(mv.as_object().expect("object").clone());
                    } else {
                        out.insert(mk.clone(), mv.clone());
                    }
                }
            }
            _ => {
                out.insert(k.clone(), v.clone());
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn keys_route_to_sections() {
        let flat = json!({"hidden_size": 7, "learning_rate": 0.5, "no_somatic": true, "folds": 3})
            .as_object()
            .unwrap()
            .clone();
        let cfg = apply_flat(&ExperimentConfig::default(), &flat).unwrap();
        assert_eq!(cfg.model.hidden_size, 7);
        assert_eq!(cfg.train.learning_rate, 0.5);
        assert!(cfg.model.ablation.no_somatic);
        assert_eq!(cfg.folds, 3);
        assert_eq!(apply_flat(&ExperimentConfig::default(), &flatten(&cfg)).unwrap(), cfg);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let flat = json!({"hiden_size": 7}).as_object().unwrap().clone();
        assert!(apply_flat(&ExperimentConfig::default(), &flat).is_err());
        let flat = json!({"hidden_size": "big"}).as_object().unwrap().clone();
        assert!(apply_flat(&ExperimentConfig::default(), &flat).is_err());
    }
}
