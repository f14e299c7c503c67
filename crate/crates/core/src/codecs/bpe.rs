//! Byte-level BPE.
//!
//! The base alphabet is the 256 byte values, so every string encodes. Text
//! is first split into chunks that start at a space (`"a red box"` becomes
//! `["a", " red", " box"]`); merges never cross chunk boundaries.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const BYTE_ALPHABET: usize = 256;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BpeModel {
    merges: Vec<(u32, u32)>,
    #[serde(skip)]
    pieces: Vec<Vec<u8>>,
}

fn chunks(s: &str) -> Vec<&[u8]> {
    let b = s.as_bytes();
    let mut out = Vec::new();
    let mut start = 0;
    for i in 1..b.len() {
        if b[i] == b' ' && b[i - 1] != b' ' {
            out.push(&b[start..i]);
            start = i;
        }
    }
    if start < b.len() {
        out.push(&b[start..]);
    }
    out
}

fn apply_merge(seq: &mut Vec<u32>, pair: (u32, u32), id: u32) {
    let mut w = 0;
    let mut r = 0;
    while r < seq.len() {
        if r + 1 < seq.len() && seq[r] == pair.0 && seq[r + 1] == pair.1 {
            seq[w] = id;
            r += 2;
        } else {
            seq[w] = seq[r];
            r += 1;
        }
        w += 1;
    }
    seq.truncate(w);
}

impl BpeModel {
    /// Greedy BPE training: repeatedly merge the most frequent adjacent pair,
    /// ties broken by the smaller pair compared byte-wise, until `vocab_size`
    /// tokens exist or no pair occurs twice.
    pub fn train<S: AsRef<str>>(corpus: &[S], vocab_size: usize) -> Result<Self> {
        if vocab_size < BYTE_ALPHABET {
            return Err(Error::config(format!(
                "BPE vocab size must be at least {BYTE_ALPHABET}, got {vocab_size}"
            )));
        }
        let mut freq: HashMap<&[u8], u64> = HashMap::new();
        for s in corpus {
            for c in chunks(s.as_ref()) {
                *freq.entry(c).or_default() += 1;
            }
        }
        let mut words: Vec<(Vec<u32>, u64)> =
            freq.into_iter().map(|(c, n)| (c.iter().map(|&b| b as u32).collect(), n)).collect();
        words.sort();

        let mut model = BpeModel { merges: Vec::new(), pieces: Vec::new() };
        model.rebuild_pieces();
        while BYTE_ALPHABET + model.merges.len() < vocab_size {
            let mut counts: HashMap<(u32, u32), u64> = HashMap::new();
            for (w, n) in &words {
                for p in w.windows(2) {
                    *counts.entry((p[0], p[1])).or_default() += n;
                }
            }
            let best = counts
                .into_iter()
                .filter(|&(_, n)| n >= 2)
                .max_by(|(pa, na), (pb, nb)| {
                    na.cmp(nb).then_with(|| {
                        let ka = (&model.pieces[pa.0 as usize], &model.pieces[pa.1 as usize]);
                        let kb = (&model.pieces[pb.0 as usize], &model.pieces[pb.1 as usize]);
                        kb.cmp(&ka)
                    })
                });
            let Some((pair, _)) = best else { break };
            let id = (BYTE_ALPHABET + model.merges.len()) as u32;
            for (w, _) in &mut words {
                apply_merge(w, pair, id);
            }
            model.merges.push(pair);
            let mut piece = model.pieces[pair.0 as usize].clone();
            piece.extend_from_slice(&model.pieces[pair.1 as usize]);
            model.pieces.push(piece);
        }
        Ok(model)
    }

    pub fn from_merges(merges: Vec<(u32, u32)>) -> Result<Self> {
        for (i, &(a, b)) in merges.iter().enumerate() {
            let limit = (BYTE_ALPHABET + i) as u32;
            if a >= limit || b >= limit {
                return Err(Error::invalid(format!("merge {i} references a later token")));
            }
        }
        let mut m = BpeModel { merges, pieces: Vec::new() };
        m.rebuild_pieces();
        Ok(m)
    }

    /// Restores the derived byte table; needed after deserializing.
    pub fn rebuild_pieces(&mut self) {
        self.pieces = (0..BYTE_ALPHABET).map(|b| vec![b as u8]).collect();
        for &(a, b) in &self.merges {
            let mut p = self.pieces[a as usize].clone();
            p.extend_from_slice(&self.pieces[b as usize]);
            self.pieces.push(p);
        }
    }

    pub fn merges(&self) -> &[(u32, u32)] {
        &self.merges
    }

    pub fn vocab_size(&self) -> usize {
        BYTE_ALPHABET + self.merges.len()
    }

    pub fn piece(&self, id: u32) -> Option<&[u8]> {
        self.pieces.get(id as usize).map(Vec::as_slice)
    }

    pub fn encode(&self, s: &str) -> Vec<u32> {
        let mut out = Vec::new();
        for c in chunks(s) {
            let mut seq: Vec<u32> = c.iter().map(|&b| b as u32).collect();
            for (i, &pair) in self.merges.iter().enumerate() {
                if seq.len() < 2 {
                    break;
                }
                apply_merge(&mut seq, pair, (BYTE_ALPHABET + i) as u32);
            }
            out.extend(seq);
        }
        out
    }

    pub fn decode_bytes(&self, ids: &[u32]) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        for &id in ids {
            let p = self
                .piece(id)
                .ok_or_else(|| Error::invalid(format!("text id {id} outside BPE vocab of {}", self.vocab_size())))?;
            out.extend_from_slice(p);
        }
        Ok(out)
    }

    /// Decodes to a string; invalid UTF-8 (possible for arbitrary id
    /// sequences) is replaced rather than rejected.
    pub fn decode(&self, ids: &[u32]) -> Result<String> {
        Ok(String::from_utf8_lossy(&self.decode_bytes(ids)?).into_owned())
    }
}
