//! Byte-level tokenizer: ids 0..=255 are raw bytes, 256 is BOS.

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub const BOS: u32 = 256;

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TokenSequence {
    pub ids: Vec<u32>,
}

impl TokenSequence {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

/// Prepends BOS and maps each byte to its own id.
pub fn tokenize(text: &[u8], max_seq_len: usize) -> Result<TokenSequence> {
    let len = text.len() + 1;
    if len > max_seq_len {
        return Err(Error::OverlongInput { len, max: max_seq_len });
    }
    let mut ids = Vec::with_capacity(len);
    ids.push(BOS);
    ids.extend(text.iter().map(|&b| b as u32));
    Ok(TokenSequence { ids })
}

/// Drops special tokens and returns the raw bytes.
pub fn detokenize(tokens: &TokenSequence) -> Vec<u8> {
    tokens.ids.iter().filter(|&&id| id < 256).map(|&id| id as u8).collect()
}
