//! Dataset names to files and parsing schemas.
//!
//! Built-in names look in the data directory (`data_dir` in the config file,
//! else `EDGECTX_DATA_DIR`, else `./data`):
//!
//! | name                 | files tried                                        |
//! |----------------------|----------------------------------------------------|
//! | `iris`               | `iris.csv`                                         |
//! | `seeds`              | `seeds_dataset.txt`, `seeds.csv`, `seeds.txt`      |
//! | `heart`              | `processed.cleveland.data`, `heart.csv`, `cleveland.csv` |
//! | `synth-still-motion` | generated, nothing read                            |
//!
//! A config file can override any of these or add new names:
//!
//! ```toml
//! data_dir = "/srv/datasets"
//!
//! [datasets.heart]
//! path = "uci/processed.cleveland.data"
//! schema = "heart"              # iris | seeds | heart | heart-binary | generic
//!
//! [datasets.synth-still-motion]
//! samples = 5000
//! seed = 3
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use edgectx_core::data::{self, CsvSchema, Dataset, Delimiter, HeartLabels, LoadReport};
use serde::Deserialize;

use crate::CliError;

pub const DATA_DIR_ENV: &str = "EDGECTX_DATA_DIR";

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(untagged)]
pub enum SchemaRef {
    Preset(String),
    Custom(CsvSchema),
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetEntry {
    #[serde(default)]
    pub path: Option<PathBuf>,
    #[serde(default)]
    pub schema: Option<SchemaRef>,
    /// Synthetic generator size.
    #[serde(default)]
    pub samples: Option<usize>,
    #[serde(default)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RegistryFile {
    #[serde(default)]
    data_dir: Option<PathBuf>,
    #[serde(default)]
    datasets: BTreeMap<String, DatasetEntry>,
}

#[derive(Debug, Clone)]
pub struct Registry {
    pub data_dir: PathBuf,
    entries: BTreeMap<String, DatasetEntry>,
}

/// A loaded dataset and where it came from.
#[derive(Debug, Clone)]
pub struct LoadedDataset {
    pub name: String,
    pub source: String,
    pub data: Dataset,
    pub report: LoadReport,
}

pub const SYNTH_DEFAULT_SAMPLES: usize = 2_000;
pub const SYNTH_DEFAULT_SEED: u64 = 1;

impl Registry {
    pub fn with_data_dir(data_dir: impl Into<PathBuf>) -> Self {
        Self {
            data_dir: data_dir.into(),
            entries: BTreeMap::new(),
        }
    }

    /// Reads the optional config file; relative paths in it are resolved
    /// against the file's directory.
    pub fn load(config: Option<&Path>) -> Result<Self, CliError> {
        let env_dir = std::env::var_os(DATA_DIR_ENV).map(PathBuf::from);
        let Some(path) = config else {
            return Ok(Self::with_data_dir(env_dir.unwrap_or_else(|| PathBuf::from("data"))));
        };
        let text = fs::read_to_string(path).map_err(|e| CliError::Usage(format!("config {}: {e}", path.display())))?;
        let file: RegistryFile = toml::from_str(&text).map_err(|e| CliError::Usage(format!("config {}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        let data_dir = match file.data_dir {
            Some(d) if d.is_relative() => base.join(d),
            Some(d) => d,
            None => env_dir.unwrap_or_else(|| PathBuf::from("data")),
        };
        let entries = file
            .datasets
            .into_iter()
            .map(|(k, mut e)| {
                if let Some(p) = &e.path {
                    if p.is_relative() {
                        e.path = Some(base.join(p));
                    }
                }
                (k, e)
            })
            .collect();
        Ok(Self { data_dir, entries })
    }

    pub fn load_dataset(&self, name: &str) -> Result<LoadedDataset, CliError> {
        let entry = self.entries.get(name);
        if name == "synth-still-motion" && entry.is_none_or(|e| e.path.is_none()) {
            let n = entry.and_then(|e| e.samples).unwrap_or(SYNTH_DEFAULT_SAMPLES);
            let seed = entry.and_then(|e| e.seed).unwrap_or(SYNTH_DEFAULT_SEED);
            let data = data::synth_still_motion(n, seed)?;
            return Ok(LoadedDataset {
                name: name.into(),
                source: format!("synthetic(n={n},seed={seed})"),
                report: LoadReport {
                    rows_read: n,
                    dropped_missing: 0,
                },
                data,
            });
        }
        let (path, schema_ref) = match entry {
            Some(e) => {
                let path = match &e.path {
                    Some(p) => p.clone(),
                    None => self.default_path(name)?,
                };
                (path, e.schema.clone().or_else(|| builtin_schema(name)))
            }
            None if is_builtin(name) => (self.default_path(name)?, builtin_schema(name)),
            None => {
                let p = PathBuf::from(name);
                if !p.is_file() {
                    return Err(CliError::Usage(format!(
                        "unknown dataset `{name}`: not a registry name (iris, seeds, heart, synth-still-motion) or a readable file"
                    )));
                }
                (p, None)
            }
        };
        let schema = resolve_schema(schema_ref, &path)?;
        let (data, report) = data::load_csv_with_report(&path, &schema)?;
        if report.dropped_missing > 0 {
            log::info!("{}: dropped {} rows with missing values", path.display(), report.dropped_missing);
        }
        Ok(LoadedDataset {
            name: name.into(),
            source: path.display().to_string(),
            data,
            report,
        })
    }

    /// First existing default file for a built-in dataset.
    pub fn default_path(&self, name: &str) -> Result<PathBuf, CliError> {
        let candidates: &[&str] = match name {
            "iris" => &["iris.csv"],
            "seeds" => &["seeds_dataset.txt", "seeds.csv", "seeds.txt"],
            "heart" | "heart-binary" => &["processed.cleveland.data", "heart.csv", "cleveland.csv"],
            _ => return Err(CliError::Usage(format!("dataset `{name}` has no path"))),
        };
        candidates
            .iter()
            .map(|c| self.data_dir.join(c))
            .find(|p| p.is_file())
            .ok_or_else(|| {
                CliError::Runtime(edgectx_core::Error::InvalidConfig(format!(
                    "dataset `{name}` not found: place one of {:?} in {} or set a path in the config file",
                    candidates,
                    self.data_dir.display()
                )))
            })
    }
}

fn is_builtin(name: &str) -> bool {
    matches!(name, "iris" | "seeds" | "heart" | "heart-binary")
}

fn builtin_schema(name: &str) -> Option<SchemaRef> {
    is_builtin(name).then(|| SchemaRef::Preset(name.to_string()))
}

fn first_line(path: &Path) -> String {
    fs::read_to_string(path)
        .ok()
        .and_then(|t| t.lines().find(|l| !l.trim().is_empty()).map(str::to_string))
        .unwrap_or_default()
}

fn resolve_schema(r: Option<SchemaRef>, path: &Path) -> Result<CsvSchema, CliError> {
    let line = first_line(path);
    let comma = line.contains(',');
    let mut schema = match r {
        Some(SchemaRef::Custom(s)) => return Ok(s),
        Some(SchemaRef::Preset(p)) => match p.as_str() {
            "iris" => CsvSchema::iris(),
            "seeds" => CsvSchema::seeds(),
            "heart" => CsvSchema::cleveland(HeartLabels::FiveClass),
            "heart-binary" => CsvSchema::cleveland(HeartLabels::Binary),
            "generic" => CsvSchema::default(),
            other => return Err(CliError::Usage(format!("unknown schema preset `{other}`"))),
        },
        None => CsvSchema::default(),
    };
    if comma && schema.delimiter == Delimiter::Whitespace {
        schema.delimiter = Delimiter::Comma;
    }
    if schema == CsvSchema::default() {
        // Header if any field of the first row is not a number.
        let fields: Vec<&str> = if comma { line.split(',').collect() } else { line.split_whitespace().collect() };
        schema.has_header = fields.iter().take(fields.len().saturating_sub(1)).any(|f| f.trim().parse::<f64>().is_err());
        if !comma {
            schema.delimiter = Delimiter::Whitespace;
        }
    }
    Ok(schema)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn synthetic_needs_no_files() {
        let r = Registry::with_data_dir("/nonexistent");
        let d = r.load_dataset("synth-still-motion").unwrap();
        assert_eq!(d.data.len(), SYNTH_DEFAULT_SAMPLES);
    }

    #[test]
    fn missing_builtin_is_runtime_error() {
        let r = Registry::with_data_dir("/nonexistent");
        assert!(matches!(r.load_dataset("seeds"), Err(CliError::Runtime(_))));
        assert!(matches!(r.load_dataset("no-such-thing"), Err(CliError::Usage(_))));
    }

    #[test]
    fn config_overrides_and_generic_files() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("toy.csv"), "a,b,label\n1,2,x\n3,4,y\n5,6,x\n").unwrap();
        fs::write(dir.path().join("raw.txt"), "1 2 0\n3 4 1\n").unwrap();
        let cfg = dir.path().join("edgectx.toml");
        fs::write(
            &cfg,
            "[datasets.toy]\npath = \"toy.csv\"\n[datasets.synth-still-motion]\nsamples = 40\nseed = 9\n",
        )
        .unwrap();
        let r = Registry::load(Some(&cfg)).unwrap();
        let toy = r.load_dataset("toy").unwrap();
        assert_eq!((toy.data.len(), toy.data.class_count()), (3, 2));
        assert_eq!(r.load_dataset("synth-still-motion").unwrap().data.len(), 40);
        let raw = r.load_dataset(dir.path().join("raw.txt").to_str().unwrap()).unwrap();
        assert_eq!(raw.data.len(), 2);
    }
}
