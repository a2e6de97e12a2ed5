//! The configuration file and how it merges with flags and the environment.
//!
//! ```toml
//! data_root = "data"        # relative input paths resolve here
//! output_root = "out"       # relative output paths resolve here
//! setting = "standard"
//! registry = "registry.toml"
//! prompts = "prompts"       # directory of prompt overrides
//! seed = 7
//! jobs = 4
//!
//! [backend]
//! kind = "http"
//! endpoint = "http://localhost:8000/v1"
//! model = "my-model"
//! timeout_ms = 60000
//! max_retries = 3
//! ```
//!
//! The backend credential is read from `PROSPECT_API_KEY` only.

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Deserialize;

use crate::agent::backend::BackendConfig;
use crate::dataset::Setting;
use crate::signature::SignatureRegistry;

pub const API_KEY_VAR: &str = "PROSPECT_API_KEY";
pub const DEFAULT_CONFIG: &str = "prospect.toml";
pub const DEFAULT_SEED: u64 = 7;

#[derive(Clone, Debug, Default, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FileConfig {
    pub data_root: Option<PathBuf>,
    pub output_root: Option<PathBuf>,
    pub setting: Option<Setting>,
    pub registry: Option<PathBuf>,
    pub prompts: Option<PathBuf>,
    pub seed: Option<u64>,
    pub jobs: Option<usize>,
    pub backend: BackendConfig,
}

impl FileConfig {
    pub fn parse(text: &str, origin: &Path) -> Result<Self> {
        toml::from_str(text).map_err(|e| super::usage(format!("config {}: {}", origin.display(), e.to_string().trim_end())))
    }

    /// Reads `explicit` if given, else `prospect.toml` in the working
    /// directory when present, else the defaults.
    pub fn discover(explicit: Option<&Path>) -> Result<Self> {
        let path = match explicit {
            Some(p) => p.to_path_buf(),
            None if Path::new(DEFAULT_CONFIG).is_file() => PathBuf::from(DEFAULT_CONFIG),
            None => return Ok(FileConfig::default()),
        };
        let text = std::fs::read_to_string(&path).map_err(|e| super::usage(format!("config {}: {e}", path.display())))?;
        FileConfig::parse(&text, &path)
    }
}

/// Settings shared by every subcommand after merging all sources.
#[derive(Clone, Debug)]
pub struct AppConfig {
    pub data_root: PathBuf,
    pub output_root: PathBuf,
    pub setting: Setting,
    pub registry: Option<PathBuf>,
    pub prompts: Option<PathBuf>,
    pub seed: u64,
    pub jobs: usize,
    pub backend: BackendConfig,
}

/// Values given on the command line or through `PROSPECT_*` variables.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub data_root: Option<PathBuf>,
    pub output_root: Option<PathBuf>,
    pub registry: Option<PathBuf>,
    pub seed: Option<u64>,
    pub jobs: Option<usize>,
}

impl AppConfig {
    pub fn resolve(file: FileConfig, over: Overrides, api_key: Option<String>) -> Result<Self> {
        let jobs = over.jobs.or(file.jobs).unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
        if jobs == 0 {
            return Err(super::usage("jobs: must be at least 1"));
        }
        let mut backend = file.backend;
        backend.api_key = api_key.filter(|k| !k.is_empty());
        Ok(AppConfig {
            data_root: over.data_root.or(file.data_root).unwrap_or_default(),
            output_root: over.output_root.or(file.output_root).unwrap_or_default(),
            setting: file.setting.unwrap_or(Setting::Standard),
            registry: over.registry.or(file.registry),
            prompts: file.prompts,
            seed: over.seed.or(file.seed).unwrap_or(DEFAULT_SEED),
            jobs,
            backend,
        })
    }

    pub fn input(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.data_root.join(p)
        }
    }

    pub fn output(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.output_root.join(p)
        }
    }

    pub fn registry(&self) -> Result<SignatureRegistry> {
        match &self.registry {
            Some(p) => {
                let p = self.input(p);
                SignatureRegistry::load(&p).with_context(|| format!("loading registry {}", p.display()))
            }
            None => Ok(SignatureRegistry::default()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agent::backend::BackendKind;

    #[test]
    fn file_values_fill_gaps_and_overrides_win() {
        let file =
            FileConfig::parse("seed = 3\njobs = 2\nsetting = \"hard\"\n[backend]\nkind = \"mock\"\nmodel = \"m\"\n", Path::new("c.toml"))
                .unwrap();
        let cfg = AppConfig::resolve(file.clone(), Overrides::default(), None).unwrap();
        assert_eq!((cfg.seed, cfg.jobs, cfg.setting), (3, 2, Setting::Hard));
        assert_eq!((cfg.backend.kind, cfg.backend.model.as_str(), cfg.backend.timeout_ms), (BackendKind::Mock, "m", 60_000));
        let cfg = AppConfig::resolve(file, Overrides { seed: Some(9), ..Default::default() }, Some("k".into())).unwrap();
        assert_eq!(cfg.seed, 9);
        assert_eq!(cfg.backend.api_key.as_deref(), Some("k"));
        let cfg = AppConfig::resolve(FileConfig::default(), Overrides::default(), Some(String::new())).unwrap();
        assert_eq!(cfg.seed, DEFAULT_SEED);
        assert_eq!(cfg.backend.api_key, None);
    }

    #[test]
    fn errors_name_the_offending_field() {
        let e = FileConfig::parse("[backend]\ntimeout_ms = \"soon\"\n", Path::new("c.toml")).unwrap_err().to_string();
        assert!(e.contains("timeout_ms"), "{e}");
        let e = FileConfig::parse("colour = 1\n", Path::new("c.toml")).unwrap_err().to_string();
        assert!(e.contains("colour"), "{e}");
        let e = FileConfig::parse("[backend]\napi_key = \"secret\"\n", Path::new("c.toml")).unwrap_err().to_string();
        assert!(e.contains("api_key"), "{e}");
        assert!(AppConfig::resolve(FileConfig { jobs: Some(0), ..Default::default() }, Overrides::default(), None).is_err());
    }

    #[test]
    fn relative_paths_use_their_roots() {
        let cfg = AppConfig::resolve(
            FileConfig::default(),
            Overrides { data_root: Some("d".into()), output_root: Some("o".into()), ..Default::default() },
            None,
        )
        .unwrap();
        assert_eq!(cfg.input(Path::new("m.json")), Path::new("d/m.json"));
        assert_eq!(cfg.output(Path::new("r")), Path::new("o/r"));
        assert_eq!(cfg.input(Path::new("/abs")), Path::new("/abs"));
    }
}
