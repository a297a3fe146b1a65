//! Training configuration.
//!
//! The config file is flat `key = value` text (TOML syntax, no tables).
//! Unknown keys are rejected; missing keys take the defaults below.
//!
//! | key                    | default | meaning                                        |
//! |------------------------|---------|------------------------------------------------|
//! | `kernel_size`          | 3       | block side for every hop                       |
//! | `max_channels_per_hop` | 10      | cap on output channels per hop                 |
//! | `th_discard`           | 0.002   | energy below which a channel is dropped        |
//! | `th_forward`           | 0.01    | energy at or above which a channel is expanded |
//! | `energy_target`        | 0.9     | spatial PCA cumulative energy target           |
//! | `pca_cap_hop1..3`      | 45/25/5 | spatial PCA component caps                     |
//! | `n_trees`              | 100     | maximum boosting rounds                        |
//! | `learning_rate`        | 0.3     | boosting shrinkage                             |
//! | `lambda`               | 1.0     | L2 penalty on leaf weights                     |
//! | `min_child_weight`     | 1.0     | minimum hessian sum per child                  |
//! | `channel_max_depth`    | 1       | depth of channel classifier trees              |
//! | `final_max_depth`      | 6       | depth of ensemble classifier trees             |
//! | `frame_context`        | 3       | frames stacked on each side of a frame         |

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::cwsaab::CascadeConfig;
use crate::distill::DistillConfig;
use crate::error::{Error, Result};
use crate::gboost::BoostParams;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub kernel_size: usize,
    pub max_channels_per_hop: usize,
    pub th_discard: f64,
    pub th_forward: f64,
    pub energy_target: f64,
    pub pca_cap_hop1: usize,
    pub pca_cap_hop2: usize,
    pub pca_cap_hop3: usize,
    pub n_trees: usize,
    pub learning_rate: f64,
    pub lambda: f64,
    pub min_child_weight: f64,
    pub channel_max_depth: usize,
    pub final_max_depth: usize,
    pub frame_context: usize,
}

impl Default for Config {
    fn default() -> Self {
        let cascade = CascadeConfig::default();
        let distill = DistillConfig::default();
        let boost = BoostParams::default();
        Self {
            kernel_size: cascade.kernel_size,
            max_channels_per_hop: cascade.max_channels_per_hop,
            th_discard: cascade.th_discard,
            th_forward: cascade.th_forward,
            energy_target: distill.energy_target,
            pca_cap_hop1: distill.pca_caps[0],
            pca_cap_hop2: distill.pca_caps[1],
            pca_cap_hop3: distill.pca_caps[2],
            n_trees: boost.n_trees,
            learning_rate: boost.learning_rate,
            lambda: boost.lambda,
            min_child_weight: boost.min_child_weight,
            channel_max_depth: 1,
            final_max_depth: 6,
            frame_context: 3,
        }
    }
}

impl Config {
    pub fn from_text(text: &str) -> Result<Self> {
        let cfg: Config = toml::from_str(text).map_err(|e| Error::Config(e.message().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_text(&self) -> String {
        toml::to_string(self).expect("flat config always serializes")
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::io(format!("reading config {}", path.display()), e))?;
        Self::from_text(&text)
    }

    /// Applies one `key=value` override.
    pub fn set(&mut self, assignment: &str) -> Result<()> {
        let (key, value) = assignment
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("expected key=value, got `{assignment}`")))?;
        let mut table = toml::Table::try_from(&*self).expect("config is a flat table");
        let parsed: toml::Value = value
            .trim()
            .parse::<i64>()
            .map(toml::Value::Integer)
            .or_else(|_| value.trim().parse::<f64>().map(toml::Value::Float))
            .map_err(|_| Error::Config(format!("`{value}` is not a number")))?;
        let key = key.trim();
        let parsed = match (table.get(key), parsed) {
            (None, _) => return Err(Error::Config(format!("unknown key `{key}`"))),
            (Some(toml::Value::Float(_)), toml::Value::Integer(i)) => toml::Value::Float(i as f64),
            (_, v) => v,
        };
        table.insert(key.to_string(), parsed);
        let cfg: Config = table
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(e.message().to_string()))?;
        cfg.validate()?;
        *self = cfg;
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.kernel_size < 2 {
            return bad("kernel_size must be at least 2");
        }
        if self.max_channels_per_hop == 0 {
            return bad("max_channels_per_hop must be positive");
        }
        if !(0.0..=1.0).contains(&self.th_discard) || !(0.0..=1.0).contains(&self.th_forward) {
            return bad("energy thresholds must lie in [0, 1]");
        }
        if self.th_forward < self.th_discard {
            return bad("th_forward must be >= th_discard");
        }
        if !(self.energy_target > 0.0 && self.energy_target <= 1.0) {
            return bad("energy_target must lie in (0, 1]");
        }
        if self.pca_cap_hop1 == 0 || self.pca_cap_hop2 == 0 || self.pca_cap_hop3 == 0 {
            return bad("PCA caps must be positive");
        }
        if !(self.learning_rate > 0.0) || !(self.lambda >= 0.0) || !(self.min_child_weight >= 0.0) {
            return bad("learning_rate must be positive, lambda and min_child_weight non-negative");
        }
        if self.channel_max_depth > 16 || self.final_max_depth > 16 {
            return bad("tree depth above 16 is not supported");
        }
        Ok(())
    }

    pub fn cascade(&self) -> CascadeConfig {
        CascadeConfig {
            kernel_size: self.kernel_size,
            max_channels_per_hop: self.max_channels_per_hop,
            th_discard: self.th_discard,
            th_forward: self.th_forward,
        }
    }

    pub fn distill(&self) -> DistillConfig {
        DistillConfig {
            energy_target: self.energy_target,
            pca_caps: [self.pca_cap_hop1, self.pca_cap_hop2, self.pca_cap_hop3],
        }
    }

    fn boost(&self, max_depth: usize) -> BoostParams {
        BoostParams {
            max_depth,
            n_trees: self.n_trees,
            learning_rate: self.learning_rate,
            lambda: self.lambda,
            min_child_weight: self.min_child_weight,
        }
    }

    pub fn channel_boost(&self) -> BoostParams {
        self.boost(self.channel_max_depth)
    }

    pub fn final_boost(&self) -> BoostParams {
        self.boost(self.final_max_depth)
    }
}
