use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{FingerprintPair, TemplateKind};
use crate::lm::checkpoint::write_private;
use crate::{Error, Result};

pub const KEY_FILE_SCHEMA_VERSION: u32 = 1;
pub const PRIVATE_MARKER: &str = "PRIVATE";

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct KeyEntry {
    pub key_secret: String,
    pub instruction: String,
}

/// The owner's secret keys. Only `decryption` may be disclosed.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct KeyFile {
    pub schema_version: u32,
    pub visibility: String,
    pub decryption: String,
    pub decryption_visibility: String,
    pub template: TemplateKind,
    pub provenance: String,
    pub keys: Vec<KeyEntry>,
}

impl KeyFile {
    pub fn new(pairs: &[FingerprintPair], provenance: String) -> Result<Self> {
        let first = pairs.first().ok_or_else(|| Error::InvalidConfig("no fingerprint keys".into()))?;
        Ok(Self {
            schema_version: KEY_FILE_SCHEMA_VERSION,
            visibility: PRIVATE_MARKER.into(),
            decryption: first.decryption.clone(),
            decryption_visibility: "public".into(),
            template: first.template,
            provenance,
            keys: pairs
                .iter()
                .map(|p| KeyEntry { key_secret: p.key_secret.clone(), instruction: p.instruction.clone() })
                .collect(),
        })
    }

    pub fn pairs(&self) -> Vec<FingerprintPair> {
        self.keys
            .iter()
            .map(|k| FingerprintPair {
                key_secret: k.key_secret.clone(),
                instruction: k.instruction.clone(),
                decryption: self.decryption.clone(),
                template: self.template,
            })
            .collect()
    }

    /// Written with owner-only permissions.
    pub fn save(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string_pretty(self)?;
        write_private(path, json.as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file: KeyFile = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        if file.schema_version != KEY_FILE_SCHEMA_VERSION {
            return Err(Error::Format(format!("unsupported key file version {}", file.schema_version)));
        }
        if file.keys.is_empty() {
            return Err(Error::Format("key file lists no keys".into()));
        }
        Ok(file)
    }
}
