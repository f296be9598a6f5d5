//! Flag/config-file resolution and the per-stage run manifest.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

pub const MANIFEST_HEADER: &str = "# hallunav-run-manifest v1";

/// Values for one subcommand: flag, else config-file entry, else default.
/// Every resolved value is recorded for the manifest.
pub struct Resolver {
    section: toml::Table,
    pub resolved: toml::Table,
}

impl Resolver {
    pub fn load(path: Option<&Path>, subcommand: &str) -> Result<Self> {
        let mut section = toml::Table::new();
        if let Some(p) = path {
            let text = std::fs::read_to_string(p).with_context(|| format!("cannot read config file {}", p.display()))?;
            let mut root: toml::Table = toml::from_str(&text).with_context(|| format!("invalid config file {}", p.display()))?;
            if let Some(v) = root.remove(subcommand) {
                match v {
                    toml::Value::Table(t) => section = t,
                    _ => bail!("{}: [{subcommand}] must be a table", p.display()),
                }
            }
        }
        Ok(Self { section, resolved: toml::Table::new() })
    }

    pub fn get<T>(&mut self, key: &str, flag: Option<T>, default: T) -> Result<T>
    where
        T: DeserializeOwned + Serialize,
    {
        let v = match flag {
            Some(v) => v,
            None => match self.section.get(key) {
                Some(raw) => raw
                    .clone()
                    .try_into()
                    .with_context(|| format!("config key `{key}` has the wrong type"))?,
                None => default,
            },
        };
        // unset optional values have no TOML form and are left out
        if let Ok(value) = toml::Value::try_from(&v) {
            self.resolved.insert(key.to_string(), value);
        }
        Ok(v)
    }

    pub fn path(&mut self, key: &str, flag: Option<PathBuf>, default: PathBuf) -> Result<PathBuf> {
        let s: String = self.get(key, flag.map(|p| p.display().to_string()), default.display().to_string())?;
        Ok(PathBuf::from(s))
    }

    pub fn flag(&mut self, key: &str, set: bool, default: bool) -> Result<bool> {
        self.get(key, set.then_some(true), default)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileDigest {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Audit {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub subcommand: String,
    pub tool_version: String,
    pub seeds: BTreeMap<String, u64>,
    pub config: toml::Table,
    pub inputs: Vec<FileDigest>,
    pub outputs: Vec<FileDigest>,
    pub audits: Vec<Audit>,
}

fn digest(path: &Path) -> Result<FileDigest> {
    Ok(FileDigest {
        path: path.display().to_string(),
        sha256: hallunav::io::file_digest(path).with_context(|| format!("cannot hash {}", path.display()))?,
    })
}

impl RunManifest {
    pub fn new(subcommand: &str, config: toml::Table) -> Self {
        Self {
            subcommand: subcommand.to_string(),
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            seeds: BTreeMap::new(),
            config,
            inputs: Vec::new(),
            outputs: Vec::new(),
            audits: Vec::new(),
        }
    }

    pub fn input(&mut self, path: &Path) -> Result<()> {
        self.inputs.push(digest(path)?);
        Ok(())
    }

    pub fn output(&mut self, path: &Path) -> Result<()> {
        self.outputs.push(digest(path)?);
        Ok(())
    }

    pub fn audit(&mut self, name: &str, passed: bool, detail: impl Into<String>) {
        self.audits.push(Audit { name: name.into(), passed, detail: detail.into() });
    }

    pub fn passed(&self) -> bool {
        self.audits.iter().all(|a| a.passed)
    }

    pub fn to_text(&self) -> Result<String> {
        Ok(format!("{MANIFEST_HEADER}\n{}", toml::to_string(self)?))
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let Some(body) = text.strip_prefix(MANIFEST_HEADER) else {
            bail!("missing header `{MANIFEST_HEADER}`");
        };
        Ok(toml::from_str(body)?)
    }

    /// Written next to the stage's primary artifact as `<artifact>.run.toml`.
    pub fn write_beside(&self, primary: &Path) -> Result<PathBuf> {
        let mut s = primary.as_os_str().to_owned();
        s.push(".run.toml");
        let path = PathBuf::from(s);
        let text = self.to_text()?;
        if Self::from_text(&text)?.to_text()? != text {
            bail!("run manifest for {} does not round-trip", primary.display());
        }
        std::fs::write(&path, text).with_context(|| format!("cannot write {}", path.display()))?;
        Ok(path)
    }
}
