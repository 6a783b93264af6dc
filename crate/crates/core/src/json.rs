//! Shared helpers for the versioned JSON documents.

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{Error, Result};

pub(crate) const SCHEMA_VERSION: i64 = 1;

/// Parses a document, checking its top-level `"schema"` field before the body.
pub(crate) fn parse_versioned<D: DeserializeOwned>(text: &str) -> Result<D> {
    let value: serde_json::Value = serde_json::from_str(text).map_err(Error::from_json)?;
    match value.get("schema") {
        Some(serde_json::Value::Number(n)) => match n.as_i64() {
            Some(SCHEMA_VERSION) => {}
            Some(other) => return Err(Error::SchemaVersion(other)),
            None => return Err(Error::SchemaVersion(-1)),
        },
        Some(_) => {
            return Err(Error::Parse {
                line: 1,
                column: 1,
                message: "\"schema\" must be an integer".into(),
            })
        }
        None => {
            return Err(Error::Parse {
                line: 1,
                column: 1,
                message: "missing field `schema`".into(),
            })
        }
    }
    // Re-parse from text so positions in body errors refer to the file.
    serde_json::from_str(text).map_err(Error::from_json)
}

pub(crate) fn to_pretty<D: Serialize>(doc: &D) -> String {
    let mut s = serde_json::to_string_pretty(doc).expect("documents serialize infallibly");
    s.push('\n');
    s
}
