//! Run configuration, read from a TOML file. Every field is optional and
//! falls back to the defaults listed in `docs/config.toml`.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::demo::{DemoConfig, DemoEngine};
use crate::detector::SweepConfig;
use crate::error::{Error, Result};
use crate::estimators::{fit_pose_model, label_sma_force, HotColdSplit, SwitchingModel};
use crate::generate::{generate_nocontact, ContactPlan, NocontactPlan};
use crate::plant::PlantParams;
use crate::safety::BabblerGains;

/// Degrees of the two branches of the switching pose model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PoseFitConfig {
    pub m_cold: usize,
    pub m_hot: usize,
    pub split: HotColdSplit,
}

impl Default for PoseFitConfig {
    fn default() -> Self {
        PoseFitConfig { m_cold: 2, m_hot: 2, split: HotColdSplit::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub plant: PlantParams,
    pub babbler: BabblerGains,
    pub nocontact: NocontactPlan,
    pub contact: ContactPlan,
    pub pose: PoseFitConfig,
    pub sweep: SweepConfig,
    pub demo: DemoConfig,
}

impl Config {
    pub fn load(path: &Path) -> Result<Self> {
        let text = crate::io::read_text(path)?;
        Config::parse(&text, path)
    }

    pub fn parse(text: &str, origin: &Path) -> Result<Self> {
        let cfg: Config = toml::from_str(text).map_err(|e| {
            let line = e.span().map_or(1, |s| text[..s.start.min(text.len())].matches('\n').count() + 1);
            Error::Parse { path: origin.to_path_buf(), line: line as u64, message: e.message().to_string() }
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config always serializes")
    }

    pub fn validate(&self) -> Result<()> {
        self.plant.validate()?;
        self.demo.validate()?;
        Ok(())
    }

    /// Generate the no-contact dataset and fit the switching pose model to it.
    pub fn fit_pose(&self) -> Result<SwitchingModel> {
        let frames = generate_nocontact(&self.nocontact, &self.plant, self.babbler)?;
        let labeled = label_sma_force(&frames, &self.plant.limb);
        fit_pose_model(&labeled.rows, self.pose.m_cold, self.pose.m_hot, self.pose.split, self.plant.limb)
    }

    pub fn demo_engine(&self, pose: SwitchingModel) -> Result<DemoEngine> {
        DemoEngine::new(self.demo, self.plant, self.babbler, pose)
    }
}
