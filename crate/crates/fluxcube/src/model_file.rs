//! JSON model files. Floats are written in their shortest round-trip form
//! and parsed with correct rounding, so a reloaded model reproduces every
//! parameter bit for bit.

use std::fs;
use std::path::Path;

use fluxcube_core::FluxCubeModel;
use serde::{Deserialize, Serialize};

pub const FORMAT: &str = "fluxcube-model";
pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum ModelFileError {
    #[error("cannot access {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("{path} is not a model file: {message}")]
    Parse { path: String, message: String },
    #[error("{path} has schema version {found}; this build reads version {SCHEMA_VERSION}")]
    Version { path: String, found: u32 },
    #[error("{path} is inconsistent: {source}")]
    Invalid { path: String, source: fluxcube_core::Error },
}

#[derive(Serialize)]
struct FileRef<'a> {
    format: &'static str,
    schema_version: u32,
    model: &'a FluxCubeModel,
}

#[derive(Deserialize)]
struct Header {
    format: String,
    schema_version: u32,
}

#[derive(Deserialize)]
struct FileOwned {
    model: FluxCubeModel,
}

pub fn to_json(model: &FluxCubeModel) -> String {
    let file = FileRef {
        format: FORMAT,
        schema_version: SCHEMA_VERSION,
        model,
    };
    serde_json::to_string_pretty(&file).expect("model serialization cannot fail")
}

/// Parses a model document; `origin` names it in error messages.
pub fn from_json(text: &str, origin: &str) -> Result<FluxCubeModel, ModelFileError> {
    let parse = |e: serde_json::Error| ModelFileError::Parse {
        path: origin.to_string(),
        message: e.to_string(),
    };
    let header: Header = serde_json::from_str(text).map_err(parse)?;
    if header.format != FORMAT {
        return Err(ModelFileError::Parse {
            path: origin.to_string(),
            message: format!("format is {:?}, expected {FORMAT:?}", header.format),
        });
    }
    if header.schema_version != SCHEMA_VERSION {
        return Err(ModelFileError::Version {
            path: origin.to_string(),
            found: header.schema_version,
        });
    }
    let file: FileOwned = serde_json::from_str(text).map_err(parse)?;
    file.model.validate().map_err(|source| ModelFileError::Invalid {
        path: origin.to_string(),
        source,
    })?;
    Ok(file.model)
}

pub fn save(model: &FluxCubeModel, path: &Path) -> Result<(), ModelFileError> {
    fs::write(path, to_json(model)).map_err(|source| ModelFileError::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn load(path: &Path) -> Result<FluxCubeModel, ModelFileError> {
    let origin = path.display().to_string();
    let text = fs::read_to_string(path).map_err(|source| ModelFileError::Io {
        path: origin.clone(),
        source,
    })?;
    from_json(&text, &origin)
}
