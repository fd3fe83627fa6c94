//! World constants: table extent, robot bases, object dimensions and the
//! time model. Loaded from a flat `key = value` file (`world.cfg`).

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub const WORLD_CFG_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read world config: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed world config: {0}")]
    Parse(String),
    #[error("unsupported world config version {found} (expected {expected})")]
    Version { found: u32, expected: u32 },
    #[error("invalid world config: {0}")]
    Invalid(String),
}

/// Every dimension is in meters, every angle in radians, every time in seconds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct World {
    pub version: u32,
    pub table_x_min: f64,
    pub table_x_max: f64,
    pub table_y_min: f64,
    pub table_y_max: f64,
    pub base0_x: f64,
    pub base0_y: f64,
    pub base1_x: f64,
    pub base1_y: f64,
    pub ur5_reach: f64,
    pub ur10_reach: f64,
    pub cube_side: f64,
    pub pad_radius: f64,
    pub pad_height: f64,
    pub tool_long_arm: f64,
    pub tool_short_arm: f64,
    pub tool_height: f64,
    pub ee_speed: f64,
    pub grasp_time: f64,
    pub release_time: f64,
    pub snap_radius: f64,
    pub align_tolerance: f64,
    pub align_angle_tolerance: f64,
    pub tool_standoff: f64,
    pub max_push: f64,
    pub inside_margin: f64,
    pub placement_margin: f64,
    pub shared_slot_spacing: f64,
    pub shared_keepout: f64,
    pub t_max: f64,
    pub pixels_per_meter: f64,
}

impl Default for World {
    fn default() -> Self {
        World {
            version: WORLD_CFG_VERSION,
            table_x_min: -1.25,
            table_x_max: 1.25,
            table_y_min: -0.70,
            table_y_max: 0.70,
            base0_x: -0.75,
            base0_y: 0.0,
            base1_x: 0.75,
            base1_y: 0.0,
            ur5_reach: 0.85,
            ur10_reach: 1.30,
            cube_side: 0.05,
            pad_radius: 0.06,
            pad_height: 0.005,
            tool_long_arm: 0.40,
            tool_short_arm: 0.10,
            tool_height: 0.02,
            ee_speed: 0.25,
            grasp_time: 2.0,
            release_time: 2.0,
            snap_radius: 0.03,
            align_tolerance: 0.10,
            align_angle_tolerance: 0.15,
            tool_standoff: 0.07,
            max_push: 0.60,
            inside_margin: 0.05,
            placement_margin: 0.05,
            shared_slot_spacing: 0.15,
            shared_keepout: 0.10,
            t_max: 100.0,
            pixels_per_meter: 160.0,
        }
    }
}

impl World {
    pub fn from_cfg_str(text: &str) -> Result<World, ConfigError> {
        let world: World = toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        if world.version != WORLD_CFG_VERSION {
            return Err(ConfigError::Version {
                found: world.version,
                expected: WORLD_CFG_VERSION,
            });
        }
        world.check()?;
        Ok(world)
    }

    pub fn load(path: &Path) -> Result<World, ConfigError> {
        World::from_cfg_str(&std::fs::read_to_string(path)?)
    }

    /// Canonical `world.cfg` text. Parsing it yields an identical `World`.
    pub fn to_cfg_string(&self) -> String {
        toml::to_string(self).expect("flat numeric struct always serializes")
    }

    /// Hex SHA-256 of the canonical config text.
    pub fn config_hash(&self) -> String {
        let digest = Sha256::digest(self.to_cfg_string().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    fn check(&self) -> Result<(), ConfigError> {
        let positive = [
            ("ur5_reach", self.ur5_reach),
            ("ur10_reach", self.ur10_reach),
            ("cube_side", self.cube_side),
            ("pad_radius", self.pad_radius),
            ("ee_speed", self.ee_speed),
            ("snap_radius", self.snap_radius),
            ("pixels_per_meter", self.pixels_per_meter),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(ConfigError::Invalid(format!("{name} must be positive")));
            }
        }
        if self.table_x_min >= self.table_x_max || self.table_y_min >= self.table_y_max {
            return Err(ConfigError::Invalid("empty table rectangle".into()));
        }
        if self.tool_long_arm < 0.0 || self.t_max < 0.0 {
            return Err(ConfigError::Invalid("negative tool length or budget".into()));
        }
        Ok(())
    }

    pub fn on_table(&self, x: f64, y: f64) -> bool {
        x >= self.table_x_min && x <= self.table_x_max && y >= self.table_y_min && y <= self.table_y_max
    }

    /// Raster width and height in pixels.
    pub fn raster_size(&self) -> (usize, usize) {
        let w = ((self.table_x_max - self.table_x_min) * self.pixels_per_meter).round() as usize;
        let h = ((self.table_y_max - self.table_y_min) * self.pixels_per_meter).round() as usize;
        (w, h)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cfg_text_round_trips() {
        let w = World::default();
        let text = w.to_cfg_string();
        assert!(text.contains("ur5_reach = 0.85"));
        assert_eq!(World::from_cfg_str(&text).unwrap(), w);
    }

    #[test]
    fn rejects_wrong_version_and_unknown_keys() {
        let text = World::default().to_cfg_string().replace("version = 1", "version = 7");
        assert!(matches!(World::from_cfg_str(&text), Err(ConfigError::Version { found: 7, .. })));
        let text = format!("{}\nbogus = 1\n", World::default().to_cfg_string());
        assert!(matches!(World::from_cfg_str(&text), Err(ConfigError::Parse(_))));
    }

    #[test]
    fn default_raster_is_400_by_224() {
        assert_eq!(World::default().raster_size(), (400, 224));
    }

    #[test]
    fn hash_is_stable_and_sensitive() {
        let a = World::default();
        let mut b = a.clone();
        assert_eq!(a.config_hash(), b.config_hash());
        b.ee_speed = 0.3;
        assert_ne!(a.config_hash(), b.config_hash());
    }
}
