//! Effective training configuration: preset, then `--set` flags, then the
//! config file, each layer overriding the one before.

use std::path::Path;

use clap::ValueEnum;
use salgail::env::EnvConfig;
use salgail::gail::GailHyper;
use salgail::Error;
use serde::{Deserialize, Serialize};
use serde_json::Value;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    #[default]
    Desk,
    Paper,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub hyper: GailHyper,
    pub env: EnvConfig,
}

impl TrainConfig {
    pub fn preset(p: Preset) -> Self {
        match p {
            Preset::Desk => TrainConfig {
                hyper: GailHyper::desk(),
                env: EnvConfig::desk(),
            },
            Preset::Paper => TrainConfig {
                hyper: GailHyper::paper(),
                env: EnvConfig::default(),
            },
        }
    }

    /// Applies `key=value` overrides, then the JSON file. Keys name
    /// hyperparameter fields directly (`cycles=100`) or environment fields
    /// with an `env.` prefix (`env.horizon=50`). Values are parsed as JSON
    /// when possible and as strings otherwise.
    pub fn resolve(preset: Preset, sets: &[String], file: Option<&Path>) -> Result<Self, Error> {
        let mut tree = serde_json::to_value(TrainConfig::preset(preset))?;
        for s in sets {
            let (key, raw) = s
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("override {s:?} is not key=value")))?;
            let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
            let (section, field) = match key.strip_prefix("env.") {
                Some(f) => ("env", f),
                None => ("hyper", key),
            };
            set_field(&mut tree, section, field, value)?;
        }
        if let Some(path) = file {
            let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            let overlay: Value = serde_json::from_str(&text)
                .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
            let Value::Object(obj) = overlay else {
                return Err(Error::Config(format!("{}: expected a JSON object", path.display())));
            };
            for (k, v) in obj {
                if k == "env" {
                    let Value::Object(env) = v else {
                        return Err(Error::Config("\"env\" must be an object".into()));
                    };
                    for (f, val) in env {
                        set_field(&mut tree, "env", &f, val)?;
                    }
                } else {
                    set_field(&mut tree, "hyper", &k, v)?;
                }
            }
        }
        let cfg: TrainConfig = serde_json::from_value(tree).map_err(|e| Error::Config(e.to_string()))?;
        cfg.hyper.validate()?;
        cfg.env.validate().map_err(|e| Error::Config(e.to_string()))?;
        Ok(cfg)
    }
}

fn set_field(tree: &mut Value, section: &str, field: &str, value: Value) -> Result<(), Error> {
    let obj = tree[section]
        .as_object_mut()
        .expect("config sections are objects");
    if !obj.contains_key(field) {
        return Err(Error::Config(format!("unknown {section} field {field:?}")));
    }
    obj.insert(field.to_string(), value);
    Ok(())
}

/// The hyperparameter table as printed at the top of a training run.
pub fn run_header(cfg: &TrainConfig, preset: Preset) -> String {
    let h = &cfg.hyper;
    let rows: Vec<(&str, String)> = vec![
        ("Maximum number of training cycles H", h.cycles.to_string()),
        ("The number of episodes I", h.episodes.to_string()),
        ("The step size of one episode B", h.episode_len.to_string()),
        ("Mini-batch size", h.minibatch.to_string()),
        ("Discount factor gamma", h.gamma.to_string()),
        ("Generator initial learning rate", format!("{:e}", h.gen_lr)),
        ("Generator LeakyReLU negative slope", h.policy_slope.to_string()),
        ("Discriminator/selector initial learning rate", format!("{:e}", h.disc_lr)),
        ("Discriminator/selector batch size", h.d_batch.to_string()),
        ("Discriminator/selector LeakyReLU negative slope", h.disc_slope.to_string()),
        ("BatchNorm numerical stability value", format!("{:e}", h.bn_eps)),
        ("BatchNorm momentum", h.bn_momentum.to_string()),
        ("Weight decay", format!("{:e}", h.weight_decay)),
        ("Reward trade-off lambda1", h.lambda1.to_string()),
        ("Causal entropy coefficient lambda2", h.lambda2.to_string()),
        ("Streams N", h.streams.to_string()),
        ("Observation size", format!("{}x{}", cfg.env.viewport.out_w, cfg.env.viewport.out_h)),
        ("HM step magnitude (deg)", cfg.env.step_mag_deg.to_string()),
    ];
    let width = rows.iter().map(|(k, _)| k.len()).max().unwrap_or(0);
    let mut out = format!("preset: {}\n", serde_json::to_value(preset).expect("preset serializes").as_str().unwrap_or("?"));
    for (k, v) in rows {
        out.push_str(&format!("  {k:<width$}  {v}\n"));
    }
    out
}
