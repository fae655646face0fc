use std::path::Path;

use serde::Deserialize;

use crate::error::{Error, Result};
use crate::geometry::template::{humanoid, icosphere};
use crate::geometry::TemplateMesh;
use crate::training::TrainConfig;

/// Run configuration file. A preset supplies every training value; the
/// optional `[train]` table overrides individual keys.
///
/// ```toml
/// preset = "desk"
/// template = "humanoid"
///
/// [train]
/// iterations = 300
/// lambda_rgb = 50.0
/// ```
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub preset: String,
    pub template: TemplateChoice,
    pub train: TrainConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum TemplateChoice {
    Humanoid,
    Sphere,
}

impl TemplateChoice {
    pub fn build(self) -> TemplateMesh {
        match self {
            TemplateChoice::Humanoid => humanoid(),
            TemplateChoice::Sphere => icosphere(3, 0.5),
        }
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawRunConfig {
    preset: String,
    #[serde(default = "default_template")]
    template: TemplateChoice,
    #[serde(default)]
    train: toml::Table,
}

fn default_template() -> TemplateChoice {
    TemplateChoice::Humanoid
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let raw: RawRunConfig = toml::from_str(text).map_err(|e| Error::Config(e.message().to_string()))?;
        let base = TrainConfig::preset(&raw.preset)?;
        let mut table = toml::Table::try_from(&base).map_err(|e| Error::Config(e.to_string()))?;
        for (k, v) in raw.train {
            if !table.contains_key(&k) {
                return Err(Error::Config(format!("unknown key `train.{k}`")));
            }
            table.insert(k.clone(), v);
            toml::Value::Table(table.clone())
                .try_into::<TrainConfig>()
                .map_err(|e| Error::Config(format!("`train.{k}`: {}", e.message())))?;
        }
        let train: TrainConfig = toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(e.message().to_string()))?;
        train.validate()?;
        Ok(Self { preset: raw.preset, template: raw.template, train })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(Error::at_path(path))?;
        Self::parse(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn msg(r: Result<RunConfig>) -> String {
        match r {
            Err(Error::Config(m)) => m,
            other => panic!("expected a config error, got {other:?}"),
        }
    }

    #[test]
    fn preset_with_overrides() {
        let c = RunConfig::parse("preset = \"desk\"\n[train]\niterations = 7\nlambda_rgb = 5.0\n").unwrap();
        assert_eq!(c.train.iterations, 7);
        assert_eq!(c.train.lambda_rgb, 5.0);
        assert_eq!(c.train.feature_dim, TrainConfig::desk().feature_dim);
        assert_eq!(c.template, TemplateChoice::Humanoid);
        let p = RunConfig::parse("preset = \"paper\"\ntemplate = \"sphere\"\n").unwrap();
        assert_eq!(p.train, TrainConfig::default());
        assert_eq!(p.template, TemplateChoice::Sphere);
    }

    #[test]
    fn errors_name_the_key() {
        assert!(msg(RunConfig::parse("[train]\niterations = 3\n")).contains("preset"));
        assert!(msg(RunConfig::parse("preset = \"desk\"\n[train]\nlambda_rbg = 1.0\n")).contains("lambda_rbg"));
        assert!(msg(RunConfig::parse("preset = \"desk\"\nseed = 1\n")).contains("seed"));
        assert!(msg(RunConfig::parse("preset = \"desk\"\n[train]\nlr = -1.0\n")).contains("lr"));
        assert!(msg(RunConfig::parse("preset = \"desk\"\n[train]\niterations = \"many\"\n")).contains("iterations"));
        assert!(msg(RunConfig::parse("preset = \"huge\"\n")).contains("huge"));
    }
}
