//! Seeded train/test dataset generation for one scene.

use serde::{Deserialize, Serialize};

use crate::channel::{sample_dataset, ChannelParams};
use crate::dataset::Dataset;
use crate::world::{build_scene, generate_trajectory, Kinematics, LaserConfig, SceneConfig};
use crate::Result;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    pub scene: SceneConfig,
    pub kinematics: Kinematics,
    pub channel: ChannelParams,
    /// `None` produces datasets without laser scans.
    pub laser: Option<LaserConfig>,
    pub c_bar: usize,
    pub train_steps: usize,
    pub test_steps: usize,
    pub train_seed: u64,
    pub test_seed: u64,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig {
            scene: SceneConfig::default(),
            kinematics: Kinematics::default(),
            channel: ChannelParams::default(),
            laser: Some(LaserConfig::default()),
            c_bar: 49,
            train_steps: 5000,
            test_steps: 2000,
            train_seed: 42,
            test_seed: 7,
        }
    }
}

/// One dataset over a fresh trajectory drawn with `seed`.
pub fn simulate(cfg: &ScenarioConfig, n_steps: usize, seed: u64) -> Result<Dataset> {
    cfg.channel.validate()?;
    let scene = build_scene(&cfg.scene)?;
    let traj = generate_trajectory(&scene, n_steps, seed, &cfg.kinematics)?;
    sample_dataset(
        &scene,
        &traj,
        &cfg.channel,
        cfg.c_bar,
        cfg.laser.as_ref(),
        seed,
    )
}

/// Train and test datasets from their own seeds.
pub fn simulate_split(cfg: &ScenarioConfig) -> Result<(Dataset, Dataset)> {
    Ok((
        simulate(cfg, cfg.train_steps, cfg.train_seed)?,
        simulate(cfg, cfg.test_steps, cfg.test_seed)?,
    ))
}
