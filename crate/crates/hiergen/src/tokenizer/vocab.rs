//! Text vocabulary and the combined token id space.
//!
//! The combined space puts the `K` image tokens first, then the text
//! section: special tokens followed by content words. Sampling masks are
//! expressed as id ranges over this layout (image ids for generation,
//! the text section for caption scoring).

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Special tokens, in their fixed id order at the start of the text section.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Special {
    /// Begin-of-image separator (text-to-image layout).
    Boi = 0,
    /// Begin-of-English separator (captioning layout).
    Boe = 1,
    /// Begin-of-Chinese-stand-in separator (captioning layout).
    Boc = 2,
    /// Masked-cell placeholder for super-resolution inputs.
    Mask = 3,
    /// Start-of-sequence anchor so a leading mask region has a predecessor.
    Bos = 4,
    Pad = 5,
}

const N_SPECIALS: usize = 6;
const SPECIAL_NAMES: [&str; N_SPECIALS] = ["[BOI]", "[BOE]", "[BOC]", "[MASK]", "[BOS]", "[PAD]"];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TextVocab {
    words: Vec<String>,
    #[serde(skip)]
    lookup: HashMap<String, u32>,
}

impl TextVocab {
    /// Build from content words; duplicates and names colliding with the
    /// special tokens are rejected.
    pub fn new<I: IntoIterator<Item = String>>(content: I) -> Result<TextVocab> {
        let mut words: Vec<String> = SPECIAL_NAMES.iter().map(|s| s.to_string()).collect();
        for w in content {
            if words.contains(&w) {
                return Err(Error::InvalidArgument(format!("duplicate vocab word {w:?}")));
            }
            words.push(w);
        }
        let lookup = words.iter().enumerate().map(|(i, w)| (w.clone(), i as u32)).collect();
        Ok(TextVocab { words, lookup })
    }

    pub fn rebuild_lookup(&mut self) {
        self.lookup =
            self.words.iter().enumerate().map(|(i, w)| (w.clone(), i as u32)).collect();
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn special(&self, s: Special) -> u32 {
        s as u32
    }

    pub fn word_id(&self, w: &str) -> Option<u32> {
        self.lookup.get(w).copied()
    }

    pub fn word(&self, id: u32) -> Option<&str> {
        self.words.get(id as usize).map(|s| s.as_str())
    }

    /// Whitespace tokenization against the vocabulary.
    pub fn encode(&self, text: &str) -> Result<Vec<u32>> {
        text.split_whitespace()
            .map(|w| {
                self.word_id(w)
                    .ok_or_else(|| Error::InvalidArgument(format!("word {w:?} not in vocabulary")))
            })
            .collect()
    }

    pub fn decode(&self, ids: &[u32]) -> Result<String> {
        let words: Result<Vec<&str>> = ids
            .iter()
            .map(|&id| {
                self.word(id)
                    .ok_or_else(|| Error::InvalidArgument(format!("text id {id} out of range")))
            })
            .collect();
        Ok(words?.join(" "))
    }
}

/// Image codebook ids `[0, K)` followed by the text section.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CombinedVocab {
    pub image_vocab: usize,
    pub text: TextVocab,
}

impl CombinedVocab {
    pub fn new(image_vocab: usize, text: TextVocab) -> Self {
        CombinedVocab { image_vocab, text }
    }

    pub fn total(&self) -> usize {
        self.image_vocab + self.text.len()
    }

    pub fn is_image(&self, id: u32) -> bool {
        (id as usize) < self.image_vocab
    }

    pub fn special(&self, s: Special) -> u32 {
        self.image_vocab as u32 + s as u32
    }

    pub fn global_text(&self, text_id: u32) -> u32 {
        self.image_vocab as u32 + text_id
    }

    /// Global id range of the text section (specials + words).
    pub fn text_range(&self) -> std::ops::Range<usize> {
        self.image_vocab..self.total()
    }

    /// Global id range of the image tokens.
    pub fn image_range(&self) -> std::ops::Range<usize> {
        0..self.image_vocab
    }

    pub fn encode_text(&self, text: &str) -> Result<Vec<u32>> {
        Ok(self.text.encode(text)?.into_iter().map(|id| self.global_text(id)).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vocab() -> CombinedVocab {
        let text =
            TextVocab::new(["red", "circle", "above", "blue", "square"].map(String::from))
                .unwrap();
        CombinedVocab::new(512, text)
    }

    #[test]
    fn special_ids_are_distinct_and_below_content() {
        let v = vocab();
        let ids = [
            v.special(Special::Boi),
            v.special(Special::Boe),
            v.special(Special::Boc),
            v.special(Special::Mask),
            v.special(Special::Bos),
            v.special(Special::Pad),
        ];
        for (i, a) in ids.iter().enumerate() {
            for b in &ids[i + 1..] {
                assert_ne!(a, b);
            }
            assert!(!v.is_image(*a));
        }
        let red = v.encode_text("red").unwrap()[0];
        assert!(ids.iter().all(|&s| s != red));
    }

    #[test]
    fn encode_decode_roundtrip() {
        let v = vocab();
        let ids = v.text.encode("red circle above blue square").unwrap();
        assert_eq!(v.text.decode(&ids).unwrap(), "red circle above blue square");
    }

    #[test]
    fn unknown_word_errors() {
        assert!(vocab().encode_text("green").is_err());
    }

    #[test]
    fn duplicate_word_rejected() {
        assert!(TextVocab::new(["red", "red"].map(String::from)).is_err());
    }

    #[test]
    fn text_range_covers_section() {
        let v = vocab();
        assert_eq!(v.text_range(), 512..512 + 6 + 5);
        assert_eq!(v.image_range(), 0..512);
    }
}
