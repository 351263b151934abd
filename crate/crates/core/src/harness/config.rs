//! Versioned TOML run configuration.
//!
//! Every section is optional; missing keys take their defaults. A minimal
//! file is just `version = 1`.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::insertion_env::{Actuation, EnvConfig};
use crate::policy::{OffPolicyConfig, OnPolicyConfig};
use crate::scene::{is_excluded, needle_spec, thread_material, MAX_NOISE_BOUND, MOUNT_ANGLES};
use crate::tactile::SensorSpec;
use crate::tail_finding::{TipTrainConfig, DEFAULT_TAIL_TARGET};

pub const CONFIG_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub version: u32,
    pub seed: u64,
    pub sensor: SensorSpec,
    pub world: WorldSection,
    pub actuation: Actuation,
    pub tip: TipSection,
    pub train: TrainSection,
    pub campaign: CampaignSection,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            version: CONFIG_VERSION,
            seed: 0,
            sensor: SensorSpec::default(),
            world: WorldSection::default(),
            actuation: Actuation::default(),
            tip: TipSection::default(),
            train: TrainSection::default(),
            campaign: CampaignSection::default(),
        }
    }
}

/// Scene used by single-world commands and by training.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WorldSection {
    pub needle: usize,
    pub thread: usize,
    pub angle: f64,
    pub noise_bound: f64,
    pub stiffness_scale: f64,
}

impl Default for WorldSection {
    fn default() -> Self {
        Self { needle: 2, thread: 2, angle: 60.0, noise_bound: MAX_NOISE_BOUND, stiffness_scale: 1.0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TipSection {
    pub samples: usize,
    /// Thread whose material the tip dataset uses.
    pub thread: usize,
    pub tail_target: f64,
    pub training: TipTrainConfig,
}

impl Default for TipSection {
    fn default() -> Self {
        Self { samples: 500, thread: 2, tail_target: DEFAULT_TAIL_TARGET, training: TipTrainConfig::default() }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Algorithm {
    Offpolicy,
    Onpolicy,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub algorithm: Algorithm,
    pub offpolicy: OffPolicyConfig,
    pub onpolicy: OnPolicyConfig,
}

impl Default for TrainSection {
    fn default() -> Self {
        Self { algorithm: Algorithm::Offpolicy, offpolicy: OffPolicyConfig::default(), onpolicy: OnPolicyConfig::default() }
    }
}

/// Which controller a campaign evaluates.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ControllerSpec {
    /// Visual-servoing baseline.
    Vs,
    /// Trained policy checkpoint.
    Policy(PathBuf),
}

/// How an episode reaches the gel.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CampaignMode {
    /// Tip dropped over the gel at a random in-plane error.
    Insertion,
    /// Trace, tip estimate and planned approach before insertion.
    Pipeline,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CampaignSection {
    pub needles: Vec<usize>,
    pub threads: Vec<usize>,
    pub angles: Vec<f64>,
    pub episodes: usize,
    pub controller: ControllerSpec,
    pub mode: CampaignMode,
    /// Needed in pipeline mode.
    pub tip_model: Option<PathBuf>,
    /// Directory for per-step eyelet images, if any.
    pub image_dir: Option<PathBuf>,
}

impl Default for CampaignSection {
    fn default() -> Self {
        Self {
            needles: vec![1, 2, 3],
            threads: vec![1, 2, 3, 4],
            angles: vec![60.0],
            episodes: 20,
            controller: ControllerSpec::Vs,
            mode: CampaignMode::Insertion,
            tip_model: None,
            image_dir: None,
        }
    }
}

impl Config {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::parse(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn parse(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        if self.version != CONFIG_VERSION {
            return Err(Error::Config(format!("config version {} (expected {CONFIG_VERSION})", self.version)));
        }
        self.env_config().validate()?;
        needle_spec(self.world.needle, self.world.angle)?;
        thread_material(self.world.thread)?;
        thread_material(self.tip.thread)?;
        let c = &self.campaign;
        for &n in &c.needles {
            needle_spec(n, 60.0)?;
        }
        for &t in &c.threads {
            thread_material(t)?;
        }
        for &a in &c.angles {
            if !MOUNT_ANGLES.contains(&a) {
                return Err(Error::Config(format!("angle {a} not one of {MOUNT_ANGLES:?}")));
            }
        }
        if c.mode == CampaignMode::Pipeline && c.tip_model.is_none() {
            return Err(Error::Config("pipeline campaigns need a tip_model".into()));
        }
        Ok(())
    }

    /// Insertion environment for the configured world.
    pub fn env_config(&self) -> EnvConfig {
        EnvConfig {
            needle: self.world.needle,
            thread: self.world.thread,
            angle: self.world.angle,
            noise_bound: self.world.noise_bound,
            sensor: self.sensor,
            stiffness_scale: self.world.stiffness_scale,
            actuation: self.actuation,
        }
    }

    /// Cells of the campaign grid, sorted, with exclusions flagged.
    pub fn cells(&self) -> Vec<(usize, usize, f64, bool)> {
        let c = &self.campaign;
        let mut needles = c.needles.clone();
        let mut threads = c.threads.clone();
        let mut angles = c.angles.clone();
        needles.sort_unstable();
        needles.dedup();
        threads.sort_unstable();
        threads.dedup();
        angles.sort_by(f64::total_cmp);
        angles.dedup();
        let mut out = Vec::new();
        for &n in &needles {
            for &t in &threads {
                for &a in &angles {
                    out.push((n, t, a, is_excluded(n, t)));
                }
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_file_takes_defaults() {
        let c = Config::parse("version = 1").unwrap();
        assert_eq!(c, Config::default());
    }

    #[test]
    fn round_trips_through_toml() {
        let mut c = Config::default();
        c.campaign.controller = ControllerSpec::Policy("p.json".into());
        c.train.algorithm = Algorithm::Onpolicy;
        c.sensor = c.sensor.with_resolution(200, 150);
        assert_eq!(Config::parse(&c.to_toml().unwrap()).unwrap(), c);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(matches!(Config::parse("version = 2"), Err(Error::Config(_))));
        assert!(matches!(Config::parse("version = 1\nbogus = 3"), Err(Error::Config(_))));
        assert!(Config::parse("version = 1\n[campaign]\nangles = [30.0]").is_err());
        assert!(Config::parse("version = 1\n[world]\nneedle = 4").is_err());
        assert!(Config::parse("version = 1\n[world]\nnoise_bound = 0.05").is_err());
        assert!(Config::parse("version = 1\n[campaign]\nmode = \"pipeline\"").is_err());
    }

    #[test]
    fn partial_sections_and_controller_forms() {
        let c = Config::parse(
            "version = 1\nseed = 9\n[sensor]\nwidth_px = 200\nheight_px = 150\n[campaign]\nneedles = [3, 2, 2]\nthreads = [4]\ncontroller = { policy = \"x.json\" }",
        )
        .unwrap();
        assert_eq!(c.sensor.width_px, 200);
        assert_eq!(c.sensor.fov_u, SensorSpec::default().fov_u);
        assert!(Config::parse("version = 1\n[sensor]\nwidth_px = 200").is_err());
        assert_eq!(c.campaign.controller, ControllerSpec::Policy("x.json".into()));
        assert_eq!(c.cells(), vec![(2, 4, 60.0, true), (3, 4, 60.0, false)]);
    }
}
