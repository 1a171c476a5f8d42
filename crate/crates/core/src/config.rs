//! Run configuration shared by every CLI command. Loaded from TOML, then
//! overridden by flags, then validated before anything touches the disk.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::dataset::DatasetSpec;
use crate::error::{Error, Result};
use crate::field::FieldConfig;
use crate::optim::{AdamConfig, FitConfig, FitSchedule};
use crate::render::RenderSettings;
use crate::vico::VicoExperiment;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub output: PathBuf,
    /// Worker threads; 0 uses every core.
    pub threads: usize,
    /// Recorded for provenance. Reductions always run in a fixed order, so
    /// results do not depend on the thread count either way.
    pub deterministic: bool,
    /// Seed of the initial field parameters.
    pub field_seed: u64,
    pub dataset: DatasetSpec,
    pub field: FieldConfig,
    pub schedule: FitSchedule,
    pub fit: FitConfig,
    /// Settings for `render` and `probe`; `scene_radius` follows `field`.
    pub render: RenderSettings,
    pub vico: VicoExperiment,
}

impl Default for RunConfig {
    fn default() -> Self {
        let scene_radius = 0.3;
        let render = RenderSettings {
            n_samples: 24,
            scene_radius,
            min_transmittance: 1e-3,
            ..RenderSettings::default()
        };
        Self {
            output: PathBuf::from("out"),
            threads: 0,
            deterministic: true,
            field_seed: 1,
            dataset: DatasetSpec::default(),
            field: FieldConfig {
                resolution: 32,
                channels: 8,
                hidden: 32,
                scene_radius,
                ..FieldConfig::default()
            },
            schedule: "33/33/34:2000,10/10/80:8000".parse().expect("default schedule"),
            fit: FitConfig {
                rays_per_step: 512,
                adam: AdamConfig {
                    lr: 1e-2,
                    ..AdamConfig::default()
                },
                render: render.clone(),
                ..FitConfig::default()
            },
            render: RenderSettings {
                stratified: false,
                ..render
            },
            vico: VicoExperiment::default(),
        }
    }
}

impl RunConfig {
    /// Parses a possibly partial file; keys it leaves out keep the run
    /// defaults, including keys inside sections it does mention.
    pub fn from_toml(text: &str) -> Result<Self> {
        let err = |e: &dyn std::fmt::Display| Error::Format {
            what: "config",
            detail: e.to_string(),
        };
        let file: toml::Table = toml::from_str(text).map_err(|e| err(&e))?;
        let mut base = toml::Table::try_from(Self::default()).map_err(|e| err(&e))?;
        merge(&mut base, file);
        toml::Value::Table(base).try_into().map_err(|e| err(&e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Format {
            what: "config",
            detail: e.to_string(),
        })
    }

    /// Copies the field's scene radius into both render settings.
    pub fn sync_radius(&mut self) {
        self.fit.render.scene_radius = self.field.scene_radius;
        self.render.scene_radius = self.field.scene_radius;
    }

    pub fn validate(&self) -> Result<()> {
        if self.output.as_os_str().is_empty() {
            return Err(Error::invalid("output directory must be set"));
        }
        self.dataset.validate()?;
        self.field.validate()?;
        self.schedule.validate()?;
        self.fit.validate()?;
        self.render.validate()?;
        if self.fit.render.scene_radius != self.field.scene_radius || self.render.scene_radius != self.field.scene_radius {
            return Err(Error::invalid("render scene radius differs from the field's"));
        }
        let v = &self.vico;
        v.train.validate()?;
        if v.held_out < 2 || v.config.steps == 0 || v.config.batch < 2 || !(v.config.lr > 0.0) {
            return Err(Error::invalid("vico needs held_out >= 2, steps > 0, batch >= 2 and a positive lr"));
        }
        if v.train.resolution % crate::vico::INPUT_SIDE != 0 {
            return Err(Error::invalid(format!("vico resolution must be a multiple of {}", crate::vico::INPUT_SIDE)));
        }
        Ok(())
    }
}

fn merge(base: &mut toml::Table, over: toml::Table) {
    for (k, v) in over {
        match (base.get_mut(&k), v) {
            // A sampler's variant decides its keys, so it is replaced whole.
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) if k != "sampler" => merge(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}
