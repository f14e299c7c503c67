//! Unified output vocabulary.
//!
//! One global id space is partitioned, in order, into special, visual
//! (codebook), positional (coordinate bins) and text (BPE) ranges.

use std::fmt;
use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const PAD: u32 = 0;
pub const BOS: u32 = 1;
pub const EOS: u32 = 2;

/// Upper bound on the unified vocabulary unless a caller supplies its own.
pub const DEFAULT_MAX_VOCAB: usize = 1 << 20;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TokenKind {
    Special,
    Visual,
    Positional,
    Text,
}

impl TokenKind {
    pub const ALL: [TokenKind; 4] = [
        TokenKind::Special,
        TokenKind::Visual,
        TokenKind::Positional,
        TokenKind::Text,
    ];
}

impl fmt::Display for TokenKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            TokenKind::Special => "special",
            TokenKind::Visual => "visual",
            TokenKind::Positional => "positional",
            TokenKind::Text => "text",
        };
        f.write_str(s)
    }
}

/// The four token-set sizes. This is what gets persisted.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VocabCounts {
    pub n_special: usize,
    pub n_visual: usize,
    pub n_positional: usize,
    pub n_text: usize,
}

impl Default for VocabCounts {
    fn default() -> Self {
        VocabCounts { n_special: 3, n_visual: 128, n_positional: 100, n_text: 512 }
    }
}

impl fmt::Display for VocabCounts {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "({}, {}, {}, {})",
            self.n_special, self.n_visual, self.n_positional, self.n_text
        )
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct VocabLayout {
    counts: VocabCounts,
}

impl VocabLayout {
    pub fn new(counts: VocabCounts) -> Result<Self> {
        Self::with_max(counts, DEFAULT_MAX_VOCAB)
    }

    pub fn with_max(counts: VocabCounts, max_total: usize) -> Result<Self> {
        if counts.n_special < 3 {
            return Err(Error::config(format!(
                "n_special must be at least 3 (PAD, BOS, EOS), got {}",
                counts.n_special
            )));
        }
        if counts.n_visual == 0 || counts.n_positional == 0 {
            return Err(Error::config(format!(
                "visual and positional token sets must be non-empty, got {counts}"
            )));
        }
        let total = counts
            .n_special
            .checked_add(counts.n_visual)
            .and_then(|t| t.checked_add(counts.n_positional))
            .and_then(|t| t.checked_add(counts.n_text))
            .ok_or_else(|| Error::config("vocabulary size overflows"))?;
        if total > max_total || total > u32::MAX as usize {
            return Err(Error::config(format!(
                "vocabulary total {total} exceeds maximum {max_total}"
            )));
        }
        Ok(VocabLayout { counts })
    }

    pub fn counts(&self) -> VocabCounts {
        self.counts
    }

    pub fn total(&self) -> usize {
        self.counts.n_special + self.counts.n_visual + self.counts.n_positional + self.counts.n_text
    }

    pub fn count(&self, kind: TokenKind) -> usize {
        match kind {
            TokenKind::Special => self.counts.n_special,
            TokenKind::Visual => self.counts.n_visual,
            TokenKind::Positional => self.counts.n_positional,
            TokenKind::Text => self.counts.n_text,
        }
    }

    pub fn offset(&self, kind: TokenKind) -> usize {
        let c = &self.counts;
        match kind {
            TokenKind::Special => 0,
            TokenKind::Visual => c.n_special,
            TokenKind::Positional => c.n_special + c.n_visual,
            TokenKind::Text => c.n_special + c.n_visual + c.n_positional,
        }
    }

    /// Global id range of `kind`.
    pub fn range(&self, kind: TokenKind) -> Range<u32> {
        let start = self.offset(kind);
        start as u32..(start + self.count(kind)) as u32
    }

    pub fn token_kind(&self, id: u32) -> Result<TokenKind> {
        self.to_local(id).map(|(k, _)| k)
    }

    pub fn to_global(&self, kind: TokenKind, local: u32) -> Result<u32> {
        let count = self.count(kind);
        if local as usize >= count {
            return Err(Error::invalid(format!(
                "local id {local} out of range for {kind} tokens (count {count})"
            )));
        }
        Ok(self.offset(kind) as u32 + local)
    }

    pub fn to_local(&self, id: u32) -> Result<(TokenKind, u32)> {
        for kind in TokenKind::ALL {
            let r = self.range(kind);
            if r.contains(&id) {
                return Ok((kind, id - r.start));
            }
        }
        Err(Error::invalid(format!("token id {id} outside vocabulary of {}", self.total())))
    }
}

impl Default for VocabLayout {
    fn default() -> Self {
        VocabLayout::new(VocabCounts::default()).expect("default layout is valid")
    }
}
