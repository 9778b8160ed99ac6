//! On-disk formats: schema files, model artifacts and the run configuration.

use std::fmt;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use mace_core::pipeline::PipelineConfig;
use mace_core::tabular::{Column, EncoderState, Schema};
use mace_core::{BoostedStumps, Classifier, LogisticModel};

pub const ARTIFACT_VERSION: u32 = 1;

#[derive(Debug)]
pub enum CliError {
    Mace(mace_core::MaceError),
    Io(std::io::Error),
    Format(String),
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Mace(e) => write!(f, "{e}"),
            CliError::Io(e) => write!(f, "{e}"),
            CliError::Format(m) => write!(f, "{m}"),
        }
    }
}

impl From<mace_core::MaceError> for CliError {
    fn from(e: mace_core::MaceError) -> Self {
        CliError::Mace(e)
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e)
    }
}

pub type Result<T> = std::result::Result<T, CliError>;

/// Schema file: the column declarations plus the name of the label column.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SchemaFile {
    pub label: String,
    pub columns: Vec<Column>,
}

impl SchemaFile {
    pub fn load(path: &Path) -> Result<(Schema, String)> {
        let text = fs::read_to_string(path)?;
        let file: SchemaFile = serde_json::from_str(&text)
            .map_err(|e| CliError::Format(format!("{}: {e}", path.display())))?;
        let schema = Schema::new(file.columns)?;
        Ok((schema, file.label))
    }

    pub fn save(schema: &Schema, label: &str, path: &Path) -> Result<()> {
        let file = SchemaFile { label: label.to_string(), columns: schema.columns().to_vec() };
        fs::write(path, serde_json::to_string_pretty(&file).unwrap())?;
        Ok(())
    }
}

/// Output of `prepare`: fitted encoders plus a few dataset statistics.
#[derive(Debug, Serialize, Deserialize)]
pub struct PreparedFile {
    pub version: u32,
    pub row_count: usize,
    pub class_count: usize,
    pub k_bins: usize,
    pub zero_median_columns: Vec<String>,
    pub encoders: EncoderState,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModelArtifact {
    Logistic(LogisticModel),
    Stumps(BoostedStumps),
}

impl ModelArtifact {
    pub fn classifier(&self) -> &dyn Classifier {
        match self {
            ModelArtifact::Logistic(m) => m,
            ModelArtifact::Stumps(m) => m,
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ModelFile {
    pub version: u32,
    pub train_accuracy: f64,
    pub model: ModelArtifact,
}

impl ModelFile {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        let file: ModelFile = serde_json::from_str(&text)
            .map_err(|e| CliError::Format(format!("{}: {e}", path.display())))?;
        if file.version != ARTIFACT_VERSION {
            return Err(CliError::Format(format!(
                "unsupported model artifact version {} (expected {ARTIFACT_VERSION})",
                file.version
            )));
        }
        Ok(file)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, serde_json::to_string_pretty(self).unwrap())?;
        Ok(())
    }
}

/// TOML run configuration for `explain` and `evaluate`. Every field is
/// optional; command-line flags override file values.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default)]
pub struct RunConfigFile {
    pub data: Option<String>,
    pub schema: Option<String>,
    pub model: Option<String>,
    pub target_class: Option<usize>,
    pub k_bins: Option<usize>,
    #[serde(flatten)]
    pub pipeline: PipelineConfig,
}

impl RunConfigFile {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        toml::from_str(&text).map_err(|e| CliError::Format(format!("{}: {e}", path.display())))
    }
}
