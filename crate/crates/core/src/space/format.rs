//! Versioned JSON documents for spaces and configurations.
//!
//! ```json
//! {
//!   "schema": "aabo-space/1",
//!   "limits": {"max_width": 1333.0, "max_height": 1333.0},
//!   "base_scale": 32.0,
//!   "levels": [
//!     {"level": 0, "stride": 4, "anchor_count": [1, 9],
//!      "scale_range": [3.0, 16.0], "ratio_range": [0.2, 6.0]}
//!   ]
//! }
//! ```
//!
//! ```json
//! {
//!   "schema": "aabo-config/1",
//!   "levels": [[{"scale": 5.2, "ratio": 6.0}, {"scale": 6.1, "ratio": 0.3}]]
//! }
//! ```
//!
//! Documents are written pretty-printed with a trailing newline; writing a
//! parsed document reproduces the input bytes.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{AnchorConfiguration, GlobalLimits, LevelSpace, ScaleRatio, SearchSpace};
use crate::error::{Error, Result};

pub const SPACE_SCHEMA: &str = "aabo-space/1";
pub const CONFIG_SCHEMA: &str = "aabo-config/1";

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SpaceDoc {
    schema: String,
    limits: GlobalLimits,
    base_scale: f64,
    levels: Vec<LevelSpace>,
}

#[derive(Serialize)]
pub(crate) struct ConfigDocRef<'a> {
    schema: &'a str,
    levels: &'a [Vec<ScaleRatio>],
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ConfigDoc {
    schema: String,
    levels: Vec<Vec<ScaleRatio>>,
}

fn check_schema(found: &str, expected: &str) -> Result<()> {
    if found != expected {
        return Err(Error::InvalidInput(format!("expected schema {expected:?}, found {found:?}")));
    }
    Ok(())
}

fn pretty<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("plain data serializes");
    s.push('\n');
    s
}

impl SearchSpace {
    pub fn to_json(&self) -> String {
        pretty(&SpaceDoc {
            schema: SPACE_SCHEMA.into(),
            limits: self.limits,
            base_scale: self.base_scale,
            levels: self.levels.clone(),
        })
    }

    /// Parses and validates an `aabo-space/1` document.
    pub fn from_json(text: &str) -> Result<Self> {
        let doc: SpaceDoc = serde_json::from_str(text)?;
        check_schema(&doc.schema, SPACE_SCHEMA)?;
        SearchSpace::new(doc.limits, doc.base_scale, doc.levels)
    }
}

impl AnchorConfiguration {
    pub fn to_json(&self) -> String {
        pretty(&self.doc())
    }

    /// Borrowed `aabo-config/1` document, for embedding in other records.
    pub(crate) fn doc(&self) -> ConfigDocRef<'_> {
        ConfigDocRef { schema: CONFIG_SCHEMA, levels: &self.levels }
    }

    /// The `aabo-config/1` document as a JSON value.
    pub fn to_value(&self) -> serde_json::Value {
        serde_json::to_value(self.doc())
            .expect("plain data serializes")
    }

    /// Parses an `aabo-config/1` document. Values must be positive; use
    /// [`AnchorConfiguration::validate`] to check it against a space.
    pub fn from_json(text: &str) -> Result<Self> {
        Self::from_value(serde_json::from_str(text)?)
    }

    /// Hex SHA-256 of the canonical compact document. Anchor order within a
    /// level does not matter.
    pub fn fingerprint(&self) -> String {
        let canonical = self.canonical();
        let text = serde_json::to_string(&canonical.doc()).expect("plain data serializes");
        hex::encode(Sha256::digest(text.as_bytes()))
    }

    /// First 64 bits of [`fingerprint`](Self::fingerprint), for seeding.
    pub fn fingerprint_u64(&self) -> u64 {
        u64::from_str_radix(&self.fingerprint()[..16], 16).expect("hex digest")
    }

    pub fn from_value(value: serde_json::Value) -> Result<Self> {
        let doc: ConfigDoc = serde_json::from_value(value)?;
        check_schema(&doc.schema, CONFIG_SCHEMA)?;
        let levels = doc.levels;
        for pair in levels.iter().flatten() {
            ScaleRatio::new(pair.scale, pair.ratio)?;
        }
        Ok(AnchorConfiguration::new(levels))
    }
}
