//! TOML configuration files and the two built-in presets.
//!
//! Every config section deserializes with defaults for missing keys and
//! rejects unknown keys, so a typo fails loudly instead of being ignored.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cluster::{ClusterParams, HeuristicConfig, ShellParams, VelocityGateState};
use crate::detector::{BlockConfig, NetworkConfig, TrainConfig};
use crate::pillars::GridConfig;
use crate::synth::SceneSpec;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("{0}")]
    Invalid(String),
}

pub fn parse_toml<T: DeserializeOwned>(text: &str, path: &Path) -> Result<T, ConfigError> {
    toml::from_str(text).map_err(|e| ConfigError::Parse {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

pub fn load_toml<T: DeserializeOwned>(path: &Path) -> Result<T, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_toml(&text, path)
}

fn merge(base: &mut toml::Value, over: toml::Value) {
    match (base, over) {
        (toml::Value::Table(b), toml::Value::Table(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

/// Parses `text` as a partial override of `base`: keys present in the file
/// replace the base values, tables merge recursively, unknown keys fail.
pub fn parse_over<T: Serialize + DeserializeOwned>(base: &T, text: &str, path: &Path) -> Result<T, ConfigError> {
    let parse_err = |message: String| ConfigError::Parse {
        path: path.to_path_buf(),
        message,
    };
    let mut value = toml::Value::try_from(base).map_err(|e| parse_err(e.to_string()))?;
    let over: toml::Table = toml::from_str(text).map_err(|e| parse_err(e.to_string()))?;
    merge(&mut value, toml::Value::Table(over));
    value.try_into().map_err(|e: toml::de::Error| parse_err(e.to_string()))
}

pub fn load_over<T: Serialize + DeserializeOwned>(base: &T, path: &Path) -> Result<T, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_over(base, &text, path)
}

/// Everything the clustering localizer needs besides the cloud and range.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClusterConfig {
    /// Half-thickness of the range shell, meters.
    pub shell_margin: f64,
    pub clustering: ClusterParams,
    pub heuristics: HeuristicConfig,
    /// Velocity gate threshold, meters per second.
    pub max_speed: f64,
}

impl Default for ClusterConfig {
    fn default() -> Self {
        Preset::Desk.cluster()
    }
}

impl ClusterConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |e: crate::cluster::ClusterConfigError| ConfigError::Invalid(e.to_string());
        ShellParams::new(1.0, self.shell_margin).map_err(invalid)?;
        self.clustering.validate().map_err(invalid)?;
        self.heuristics.validate().map_err(invalid)?;
        if !(self.max_speed > 0.0) {
            return Err(ConfigError::Invalid(format!(
                "max_speed must be positive, got {}",
                self.max_speed
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    /// Full-size tunnel grid and network.
    Tunnel,
    /// Reduced grid and network that train on one core.
    Desk,
}

impl FromStr for Preset {
    type Err = ConfigError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "tunnel" => Ok(Preset::Tunnel),
            "desk" => Ok(Preset::Desk),
            other => Err(ConfigError::Invalid(format!(
                "unknown preset {other:?} (expected tunnel or desk)"
            ))),
        }
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Preset::Tunnel => "tunnel",
            Preset::Desk => "desk",
        })
    }
}

impl Preset {
    pub fn grid(self) -> GridConfig {
        match self {
            Preset::Tunnel => GridConfig::tunnel(),
            Preset::Desk => GridConfig::desk(),
        }
    }

    pub fn network(self) -> NetworkConfig {
        match self {
            Preset::Desk => NetworkConfig::desk(),
            // 438 rows only halve once, so later stages keep the resolution
            Preset::Tunnel => NetworkConfig {
                pfn_channels: 64,
                backbone_blocks: vec![
                    BlockConfig {
                        layers: 4,
                        channels: 64,
                        stride: 2,
                    },
                    BlockConfig {
                        layers: 6,
                        channels: 128,
                        stride: 1,
                    },
                    BlockConfig {
                        layers: 6,
                        channels: 256,
                        stride: 1,
                    },
                ],
                upsample_channels: vec![128, 128, 128],
                ..NetworkConfig::desk()
            },
        }
    }

    pub fn train(self) -> TrainConfig {
        TrainConfig::default()
    }

    pub fn cluster(self) -> ClusterConfig {
        ClusterConfig {
            shell_margin: ShellParams::DEFAULT_MARGIN,
            clustering: ClusterParams::default(),
            heuristics: HeuristicConfig {
                altimeter_height: 1.0,
                height_tolerance: 0.6,
                min_volume: 0.02,
                max_aspect_diff: 0.35,
            },
            max_speed: VelocityGateState::DEFAULT_MAX_SPEED,
        }
    }

    pub fn scene(self) -> SceneSpec {
        SceneSpec::desk()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pillars::pseudo_image_dims;

    #[test]
    fn presets_are_valid() {
        for p in [Preset::Tunnel, Preset::Desk] {
            let g = p.grid().params().unwrap();
            let n = p.network();
            n.validate().unwrap();
            assert_eq!(n.output_stride(), g.ds_factor);
            assert_eq!(g.y_n % n.total_stride(), 0);
            assert_eq!(g.x_n % n.total_stride(), 0);
            p.train().validate().unwrap();
            p.cluster().validate().unwrap();
            assert_eq!(p.to_string().parse::<Preset>().unwrap(), p);
        }
        assert_eq!(pseudo_image_dims(&Preset::Tunnel.grid()).unwrap(), (438, 496));
        assert!("field".parse::<Preset>().is_err());
    }

    #[test]
    fn partial_files_fill_defaults_and_reject_typos() {
        let path = Path::new("cluster.toml");
        let c: ClusterConfig = parse_toml("max_speed = 2.0\n[clustering]\nlink_radius = 0.4\n", path).unwrap();
        assert_eq!(c.max_speed, 2.0);
        assert_eq!(c.clustering.link_radius, 0.4);
        assert_eq!(c.clustering.min_points, ClusterParams::default().min_points);
        assert_eq!(c.heuristics, Preset::Desk.cluster().heuristics);
        let err = parse_toml::<ClusterConfig>("max_sped = 2.0", path).unwrap_err();
        assert!(err.to_string().contains("cluster.toml"));
        let g: GridConfig = toml::from_str(&toml::to_string(&GridConfig::desk()).unwrap()).unwrap();
        assert_eq!(g, GridConfig::desk());
    }

    #[test]
    fn overrides_merge_onto_the_preset() {
        let path = Path::new("net.toml");
        let base = Preset::Tunnel.network();
        let n = parse_over(&base, "score_threshold = 0.4\n[anchor]\nz_center = 0.5\n", path).unwrap();
        assert_eq!(n.pfn_channels, 64);
        assert_eq!((n.score_threshold, n.anchor.z_center, n.anchor.length), (0.4, 0.5, 0.5));
        assert!(parse_over(&base, "[anchor]\nzcenter = 0.5\n", path).is_err());
        let c = parse_over(&Preset::Desk.cluster(), "[heuristics]\nmin_volume = 0.5\n", path).unwrap();
        assert_eq!((c.heuristics.min_volume, c.heuristics.height_tolerance), (0.5, 0.6));
        let g = parse_over(&GridConfig::tunnel(), "", path).unwrap();
        assert_eq!(g, GridConfig::tunnel());
    }
}
