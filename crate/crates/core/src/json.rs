//! JSON loading with field-path error reporting.

use std::path::Path;

use serde::de::DeserializeOwned;

use crate::{Error, Result};

/// Parse a JSON document, reporting the offending field path on failure.
pub fn from_str<T: DeserializeOwned>(text: &str, origin: &Path) -> Result<T> {
    let mut de = serde_json::Deserializer::from_str(text);
    let value = serde_path_to_error::deserialize(&mut de).map_err(|err| {
        let field = err.path().to_string();
        Error::Parse {
            path: origin.to_path_buf(),
            field,
            message: err.into_inner().to_string(),
        }
    })?;
    de.end().map_err(|err| Error::Parse {
        path: origin.to_path_buf(),
        field: ".".into(),
        message: err.to_string(),
    })?;
    Ok(value)
}

pub fn from_file<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    from_str(&text, path)
}
