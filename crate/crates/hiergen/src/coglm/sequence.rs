//! Token sequence layout for the two training strategies.
//!
//! Strategy `TextToImage` lays out `[text.. , [BOI], image..]` and is the
//! plain generation task. Strategy `MaskAndCaption` lays out
//! `[[BOS], image.., [BOE]|[BOC], text..]` and combines patch infilling
//! with captioning; the leading `[BOS]` guarantees that a mask region
//! touching the first image cell still has a movable predecessor.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tokenizer::vocab::{CombinedVocab, Special};
use crate::tokenizer::TokenGrid;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Role {
    Text,
    Separator,
    Image,
    Bos,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Language {
    English,
    Chinese,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LayoutStrategy {
    TextToImage,
    MaskAndCaption,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenSequence {
    pub tokens: Vec<u32>,
    pub roles: Vec<Role>,
    /// Image grid shape (rows, cols); the image span has rows*cols cells.
    pub grid: (usize, usize),
    pub language: Language,
    pub strategy: LayoutStrategy,
    image_start: usize,
}

impl TokenSequence {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// 0-based index of the first image cell.
    pub fn image_start(&self) -> usize {
        self.image_start
    }

    /// Image span as a 1-based inclusive interval.
    pub fn image_span(&self) -> (usize, usize) {
        let n = self.grid.0 * self.grid.1;
        (self.image_start + 1, self.image_start + n)
    }

    /// 0-based position of the separator token.
    pub fn separator_pos(&self) -> usize {
        self.roles.iter().position(|r| *r == Role::Separator).expect("layout has a separator")
    }

    /// Grid coordinates of an image cell, given its 0-based sequence position.
    pub fn image_coords(&self, pos: usize) -> (usize, usize) {
        debug_assert_eq!(self.roles[pos], Role::Image);
        let off = pos - self.image_start;
        (off / self.grid.1, off % self.grid.1)
    }

    /// 0-based sequence position of grid cell (r, c).
    pub fn image_pos(&self, r: usize, c: usize) -> usize {
        self.image_start + r * self.grid.1 + c
    }

    /// Copy the image span back out as a grid.
    pub fn image_grid(&self) -> TokenGrid {
        let (h, w) = self.grid;
        TokenGrid {
            height: h,
            width: w,
            ids: self.tokens[self.image_start..self.image_start + h * w].to_vec(),
        }
    }

    /// Per-position index within the text stream (text, separator and BOS
    /// tokens in sequence order), used for 1D position embeddings.
    /// Image positions get `None`.
    pub fn text_stream_index(&self) -> Vec<Option<usize>> {
        let mut next = 0usize;
        self.roles
            .iter()
            .map(|r| match r {
                Role::Image => None,
                _ => {
                    let i = next;
                    next += 1;
                    Some(i)
                }
            })
            .collect()
    }

    /// Layout structure check: exactly one separator, contiguous image
    /// span of grid size, roles consistent with the strategy.
    pub fn validate(&self) -> Result<()> {
        let seps = self.roles.iter().filter(|r| **r == Role::Separator).count();
        if seps != 1 {
            return Err(Error::InvalidArgument(format!("expected 1 separator, found {seps}")));
        }
        let n = self.grid.0 * self.grid.1;
        let image_positions: Vec<usize> = self
            .roles
            .iter()
            .enumerate()
            .filter_map(|(i, r)| (*r == Role::Image).then_some(i))
            .collect();
        if image_positions.len() != n
            || image_positions.windows(2).any(|w| w[1] != w[0] + 1)
            || image_positions.first() != Some(&self.image_start)
        {
            return Err(Error::InvalidArgument("image span is not contiguous".into()));
        }
        Ok(())
    }
}

/// Lay out a training/inference sequence. `text_ids` are global ids of
/// content words; `image` supplies the image span (may hold `[MASK]` ids
/// for cells that are not known yet).
pub fn layout_sequence(
    text_ids: &[u32],
    image: &TokenGrid,
    strategy: LayoutStrategy,
    language: Language,
    vocab: &CombinedVocab,
    text_budget: usize,
) -> Result<TokenSequence> {
    if text_ids.len() > text_budget {
        return Err(Error::InvalidArgument(format!(
            "text of {} tokens exceeds budget {text_budget}",
            text_ids.len()
        )));
    }
    if image.is_empty() {
        return Err(Error::InvalidArgument("empty image grid".into()));
    }
    let n = image.len();
    let mut tokens = Vec::with_capacity(text_ids.len() + n + 2);
    let mut roles = Vec::with_capacity(tokens.capacity());
    let image_start;
    match strategy {
        LayoutStrategy::TextToImage => {
            tokens.extend_from_slice(text_ids);
            roles.extend(std::iter::repeat(Role::Text).take(text_ids.len()));
            tokens.push(vocab.special(Special::Boi));
            roles.push(Role::Separator);
            image_start = tokens.len();
            tokens.extend_from_slice(&image.ids);
            roles.extend(std::iter::repeat(Role::Image).take(n));
        }
        LayoutStrategy::MaskAndCaption => {
            tokens.push(vocab.special(Special::Bos));
            roles.push(Role::Bos);
            image_start = tokens.len();
            tokens.extend_from_slice(&image.ids);
            roles.extend(std::iter::repeat(Role::Image).take(n));
            let sep = match language {
                Language::English => Special::Boe,
                Language::Chinese => Special::Boc,
            };
            tokens.push(vocab.special(sep));
            roles.push(Role::Separator);
            tokens.extend_from_slice(text_ids);
            roles.extend(std::iter::repeat(Role::Text).take(text_ids.len()));
        }
    }
    let seq = TokenSequence {
        tokens,
        roles,
        grid: (image.height, image.width),
        language,
        strategy,
        image_start,
    };
    debug_assert!(seq.validate().is_ok());
    Ok(seq)
}
