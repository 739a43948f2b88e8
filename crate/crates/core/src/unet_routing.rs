//! UNET blending: route each cross-attention block of the denoiser to one of
//! two prompt embeddings.
//!
//! The seven blocks are traversed as `E0, E1, E2, B, D0, D1, D2` (three
//! encoder stages, the bottleneck, three decoder stages). A [`BlockSplit`]
//! assigns a prefix of that order to the first prompt and the remainder to
//! the second, written `"n-m"` with `n + m = 7`.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::embedding_blend::PromptEmbedding;
use crate::error::{Error, Result};
use crate::schedule::PromptSelector;

pub const BLOCK_COUNT: usize = 7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum BlockId {
    E0,
    E1,
    E2,
    B,
    D0,
    D1,
    D2,
}

impl BlockId {
    /// All blocks in traversal order.
    pub const ALL: [BlockId; BLOCK_COUNT] = [
        BlockId::E0,
        BlockId::E1,
        BlockId::E2,
        BlockId::B,
        BlockId::D0,
        BlockId::D1,
        BlockId::D2,
    ];

    pub fn position(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            BlockId::E0 => "E0",
            BlockId::E1 => "E1",
            BlockId::E2 => "E2",
            BlockId::B => "B",
            BlockId::D0 => "D0",
            BlockId::D1 => "D1",
            BlockId::D2 => "D2",
        }
    }
}

impl fmt::Display for BlockId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Prefix assignment of blocks to P1; the rest go to P2.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct BlockSplit {
    n_first: u8,
}

/// The default split: encoder and bottleneck on P1, decoder on P2 (`"4-3"`).
pub const DEFAULT_SPLIT: BlockSplit = BlockSplit { n_first: 4 };

pub fn make_block_split(n_first: usize) -> Result<BlockSplit> {
    if n_first > BLOCK_COUNT {
        return Err(Error::OutOfRange {
            name: "n_first",
            value: n_first as f64,
            range: "[0, 7]",
        });
    }
    Ok(BlockSplit { n_first: n_first as u8 })
}

/// `n_first = round(ratio * 7)`; the 0.5 tie resolves to 4 so the bottleneck
/// stays with the first prompt.
pub fn split_from_ratio(ratio_p1: f64) -> Result<BlockSplit> {
    if !(0.0..=1.0).contains(&ratio_p1) {
        return Err(Error::OutOfRange {
            name: "ratio",
            value: ratio_p1,
            range: "[0, 1]",
        });
    }
    let scaled = ratio_p1 * BLOCK_COUNT as f64;
    let n_first = if scaled == 3.5 { 4 } else { scaled.round() as usize };
    make_block_split(n_first)
}

impl BlockSplit {
    pub fn n_first(self) -> usize {
        self.n_first as usize
    }

    pub fn n_second(self) -> usize {
        BLOCK_COUNT - self.n_first()
    }

    pub fn selector_for(self, block: BlockId) -> PromptSelector {
        if block.position() < self.n_first() {
            PromptSelector::P1
        } else {
            PromptSelector::P2
        }
    }

    /// Full block to selector map in traversal order.
    pub fn mapping(self) -> [(BlockId, PromptSelector); BLOCK_COUNT] {
        BlockId::ALL.map(|b| (b, self.selector_for(b)))
    }

    /// Label in `"n-m"` form, e.g. `"4-3"`.
    pub fn label(self) -> String {
        format!("{}-{}", self.n_first(), self.n_second())
    }

    /// Every split from `0-7` to `7-0`.
    pub fn all() -> impl Iterator<Item = BlockSplit> {
        (0..=BLOCK_COUNT).map(|n| BlockSplit { n_first: n as u8 })
    }
}

impl Default for BlockSplit {
    fn default() -> Self {
        DEFAULT_SPLIT
    }
}

impl fmt::Display for BlockSplit {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.label())
    }
}

impl FromStr for BlockSplit {
    type Err = Error;

    /// Accepts `"n-m"` (with `n + m = 7`) or a bare `n`.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let parse = |part: &str| {
            part.trim()
                .parse::<usize>()
                .map_err(|_| Error::Parse(format!("invalid block split {s:?}")))
        };
        match s.split_once('-') {
            Some((first, second)) => {
                let (n, m) = (parse(first)?, parse(second)?);
                if n + m != BLOCK_COUNT {
                    return Err(Error::Parse(format!("block split {s:?} must cover exactly 7 blocks")));
                }
                make_block_split(n)
            }
            None => make_block_split(parse(s)?),
        }
    }
}

impl Serialize for BlockSplit {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.label())
    }
}

impl<'de> Deserialize<'de> for BlockSplit {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// The embedding a block consumes under `split`.
pub fn embedding_for_block<'a>(
    split: BlockSplit,
    block: BlockId,
    e1: &'a PromptEmbedding,
    e2: &'a PromptEmbedding,
) -> &'a PromptEmbedding {
    match split.selector_for(block) {
        PromptSelector::P1 => e1,
        PromptSelector::P2 => e2,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use PromptSelector::{P1, P2};

    fn selectors(split: BlockSplit) -> Vec<PromptSelector> {
        split.mapping().iter().map(|(_, s)| *s).collect()
    }

    #[test]
    fn default_split_routes_encoder_and_bottleneck_to_first_prompt() {
        let split = make_block_split(4).unwrap();
        assert_eq!(split, DEFAULT_SPLIT);
        assert_eq!(selectors(split), vec![P1, P1, P1, P1, P2, P2, P2]);
        assert_eq!(split.label(), "4-3");
    }

    #[test]
    fn degenerate_and_column_splits() {
        assert_eq!(selectors(make_block_split(7).unwrap()), vec![P1; 7]);
        assert_eq!(selectors(make_block_split(0).unwrap()), vec![P2; 7]);
        let one = make_block_split(1).unwrap();
        assert_eq!(one.label(), "1-6");
        assert_eq!(selectors(one), vec![P1, P2, P2, P2, P2, P2, P2]);
        assert!(make_block_split(8).is_err());
    }

    #[test]
    fn embedding_lookup() {
        let e1 = PromptEmbedding::new(1, 1, vec![1.0], "a").unwrap();
        let e2 = PromptEmbedding::new(1, 1, vec![2.0], "b").unwrap();
        let split = make_block_split(4).unwrap();
        assert!(std::ptr::eq(embedding_for_block(split, BlockId::B, &e1, &e2), &e1));
        assert!(std::ptr::eq(embedding_for_block(split, BlockId::D0, &e1, &e2), &e2));
        let none = make_block_split(0).unwrap();
        assert!(std::ptr::eq(embedding_for_block(none, BlockId::E0, &e1, &e2), &e2));
    }

    #[test]
    fn ratio_mapping() {
        assert_eq!(split_from_ratio(0.5).unwrap().n_first(), 4);
        assert_eq!(split_from_ratio(0.25).unwrap().n_first(), 2);
        assert_eq!(split_from_ratio(1.0).unwrap().n_first(), 7);
        assert_eq!(split_from_ratio(0.0).unwrap().n_first(), 0);
        assert!(split_from_ratio(1.01).is_err());
    }

    #[test]
    fn enumeration_is_prefix_monotone_and_distinct() {
        let all: Vec<_> = BlockSplit::all().map(selectors).collect();
        assert_eq!(all.len(), 8);
        for (n, sel) in all.iter().enumerate() {
            assert_eq!(sel.iter().filter(|&&s| s == P1).count(), n);
            assert!(sel.windows(2).all(|w| !(w[0] == P2 && w[1] == P1)));
        }
        for i in 0..all.len() {
            for j in i + 1..all.len() {
                assert_ne!(all[i], all[j]);
            }
        }
    }

    #[test]
    fn label_parsing() {
        assert_eq!("4-3".parse::<BlockSplit>().unwrap().n_first(), 4);
        assert_eq!("6".parse::<BlockSplit>().unwrap().n_first(), 6);
        assert!("4-4".parse::<BlockSplit>().is_err());
        assert!("x-3".parse::<BlockSplit>().is_err());
        let json = serde_json::to_string(&DEFAULT_SPLIT).unwrap();
        assert_eq!(json, "\"4-3\"");
        assert_eq!(serde_json::from_str::<BlockSplit>(&json).unwrap(), DEFAULT_SPLIT);
    }
}
