use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use pso_shield::metadata::{ClassScores, SensitivityGroupTable};
use pso_shield::pipeline::PipelineSettings;
use pso_shield::postcorrect::PostCorrectionConfig;
use pso_shield::Error;
use serde::Deserialize;

/// Overrides the key-service state path from the config file.
pub const KEY_SERVICE_ENV: &str = "PSO_SHIELD_KEY_SERVICE";

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    #[serde(default)]
    groups: RawGroups,
    roles: BTreeMap<String, u16>,
    #[serde(default)]
    class_scores: Option<BTreeMap<String, f64>>,
    #[serde(default)]
    score_aliases: Option<BTreeMap<String, String>>,
    #[serde(default)]
    postcorrect: PostCorrectionConfig,
    #[serde(default)]
    hooks: Hooks,
    #[serde(default)]
    paths: RawPaths,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawGroups {
    alpha: f64,
    beta: f64,
    thresholds: Vec<f64>,
}

impl Default for RawGroups {
    fn default() -> Self {
        let t = SensitivityGroupTable::default();
        Self {
            alpha: t.alpha().to_f64(),
            beta: t.beta().to_f64(),
            thresholds: t.thresholds().iter().map(|d| d.to_f64()).collect(),
        }
    }
}

/// External commands, each an argv list.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Hooks {
    pub classifier: Option<Vec<String>>,
    pub ocr: Option<Vec<String>>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawPaths {
    key_service: PathBuf,
    key_store: PathBuf,
    repository: PathBuf,
}

impl Default for RawPaths {
    fn default() -> Self {
        Self {
            key_service: "keyservice/state.s2sk".into(),
            key_store: "repository/keys.s2sk".into(),
            repository: "repository".into(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Paths {
    pub key_service: PathBuf,
    pub key_store: PathBuf,
    pub repository: PathBuf,
}

impl Paths {
    /// Registered users, kept beside the key-service state.
    pub fn roster(&self) -> PathBuf {
        self.key_service.with_file_name("roster.json")
    }
}

#[derive(Debug, Clone)]
pub struct SystemConfig {
    pub roles: BTreeMap<String, u16>,
    pub pipeline: PipelineSettings,
    pub hooks: Hooks,
    pub paths: Paths,
}

impl SystemConfig {
    pub fn group_count(&self) -> u16 {
        self.pipeline.table.group_count()
    }

    /// Reads TOML, or JSON when the file ends in `.json`. Relative paths
    /// resolve against the config file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        let raw: RawConfig = if path.extension().is_some_and(|e| e == "json") {
            serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?
        } else {
            toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?
        };
        let base = path.parent().unwrap_or(Path::new("."));
        Self::from_raw(raw, base)
    }

    fn from_raw(raw: RawConfig, base: &Path) -> Result<Self> {
        let table = SensitivityGroupTable::new(raw.groups.alpha, raw.groups.beta, &raw.groups.thresholds)?;
        let l = table.group_count();
        if raw.roles.is_empty() {
            return Err(Error::Config("no roles configured".into()).into());
        }
        for (role, &g) in &raw.roles {
            if g < 1 || g > l {
                return Err(Error::Validation(format!("role {role:?} maps to group {g}, outside 1..={l}")).into());
            }
        }
        let defaults = PipelineSettings::default();
        let scores = match raw.class_scores {
            Some(m) => ClassScores::new(m)?,
            None => defaults.scores,
        };
        let pipeline = PipelineSettings {
            table,
            scores,
            score_aliases: raw.score_aliases.unwrap_or(defaults.score_aliases),
            postcorrect: raw.postcorrect,
        };
        pipeline.validate()?;
        for (name, hook) in [("classifier", &raw.hooks.classifier), ("ocr", &raw.hooks.ocr)] {
            if hook.as_ref().is_some_and(|argv| argv.is_empty()) {
                bail!(Error::Config(format!("hooks.{name} must name a program")));
            }
        }
        let resolve = |p: PathBuf| if p.is_absolute() { p } else { base.join(p) };
        let key_service = match std::env::var_os(KEY_SERVICE_ENV) {
            Some(v) if !v.is_empty() => PathBuf::from(v),
            _ => resolve(raw.paths.key_service),
        };
        Ok(Self {
            roles: raw.roles,
            pipeline,
            hooks: raw.hooks,
            paths: Paths {
                key_service,
                key_store: resolve(raw.paths.key_store),
                repository: resolve(raw.paths.repository),
            },
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> Result<SystemConfig> {
        SystemConfig::from_raw(toml::from_str(text)?, Path::new("/base"))
    }

    #[test]
    fn minimal_config_uses_defaults() {
        let c = parse("[roles]\na1 = 4\n").unwrap();
        assert_eq!(c.group_count(), 4);
        assert_eq!(c.paths.repository, Path::new("/base/repository"));
        assert_eq!(c.paths.roster(), Path::new("/base/keyservice/roster.json"));
    }

    #[test]
    fn role_outside_groups_is_validation_error() {
        let err = parse("[roles]\na1 = 5\n").unwrap_err();
        assert!(err.downcast_ref::<Error>().unwrap().is_validation());
    }

    #[test]
    fn custom_table_and_scores() {
        let c = parse(
            "[groups]\nalpha = 0.1\nbeta = 1.0\nthresholds = [0.5, 1.0]\n[roles]\nx = 2\n[class_scores]\nface = 0.7\nlocation = 0.4\n",
        )
        .unwrap();
        assert_eq!(c.group_count(), 2);
        assert!(c.pipeline.scores.get("face").is_some());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(parse("[roles]\na = 1\n[extra]\nx = 1\n").is_err());
    }
}
