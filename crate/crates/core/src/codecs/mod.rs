//! Token codecs: turning task ground truth into token sequences and back.

pub mod bbox;
pub mod bpe;
pub mod image;
pub mod palette;
pub mod vq;

pub use bbox::{box_decode, box_encode, BBox};
pub use bpe::BpeModel;
pub use image::{ColorImage, GrayImage, Mask};
pub use palette::{decode_labels, encode_labels, LabelMap, Palette};
pub use vq::{fit_patch_codebook, vq_decode, vq_encode, FitReport, PatchCodebook, TokenGrid};

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::vocab::{VocabCounts, VocabLayout};

/// Everything needed to turn ground truth into tokens and back.
#[derive(Clone, Debug, PartialEq)]
pub struct Codecs {
    pub layout: VocabLayout,
    pub palette: Palette,
    pub codebook: PatchCodebook,
    pub bpe: BpeModel,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CodecsFile {
    vocab: VocabCounts,
    classes: usize,
    patch_size: usize,
    codebook: Vec<f32>,
    merges: Vec<(u32, u32)>,
}

impl Codecs {
    pub fn new(layout: VocabLayout, palette: Palette, codebook: PatchCodebook, bpe: BpeModel) -> Result<Self> {
        if codebook.len() != layout.counts().n_visual {
            return Err(Error::config(format!(
                "codebook has {} entries but the layout has {} visual tokens",
                codebook.len(),
                layout.counts().n_visual
            )));
        }
        if bpe.vocab_size() > layout.counts().n_text {
            return Err(Error::config(format!(
                "BPE vocab of {} does not fit {} text tokens",
                bpe.vocab_size(),
                layout.counts().n_text
            )));
        }
        Ok(Codecs { layout, palette, codebook, bpe })
    }

    pub fn bins(&self) -> usize {
        self.layout.counts().n_positional
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let f = CodecsFile {
            vocab: self.layout.counts(),
            classes: self.palette.class_count(),
            patch_size: self.codebook.patch_size(),
            codebook: self.codebook.entries().to_vec(),
            merges: self.bpe.merges().to_vec(),
        };
        std::fs::write(path, serde_json::to_vec(&f)?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path)
            .map_err(|e| Error::Prerequisite(format!("cannot read codecs {}: {e} (run fit-codecs first)", path.display())))?;
        let f: CodecsFile = serde_json::from_slice(&bytes)?;
        Codecs::new(
            VocabLayout::new(f.vocab)?,
            Palette::for_classes(f.classes)?,
            PatchCodebook::from_entries(f.patch_size, f.codebook)?,
            BpeModel::from_merges(f.merges)?,
        )
    }
}
