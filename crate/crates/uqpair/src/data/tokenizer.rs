//! Tokenization of text pairs into one joint marker-delimited sequence.
//!
//! The layout is always `[CLS, x1.., SEP, SEP, x2.., SEP]`. Segment ranges
//! index the text tokens only, never the markers. The bundled tokenizer is
//! a lowercase whitespace/punctuation splitter with a hashed vocabulary;
//! anything implementing [`Tokenizer`] can replace it without touching the
//! layout logic.

use std::ops::Range;

use crate::error::Error;
use crate::Result;

pub const PAD_ID: u32 = 0;
pub const CLS_ID: u32 = 1;
pub const SEP_ID: u32 = 2;
/// First id available to real tokens.
pub const RESERVED_IDS: u32 = 3;

/// Minimum sequence length that still fits one token per segment plus the
/// four markers.
pub const MIN_SEQ_LEN: usize = 6;

/// Maps raw text to token ids. Ids below [`RESERVED_IDS`] are never produced.
pub trait Tokenizer {
    fn encode(&self, text: &str) -> Vec<u32>;
    fn vocab_size(&self) -> usize;
}

/// Lowercase word splitter hashing each word into `vocab_size - 3` buckets
/// with a fixed FNV-1a seed, so ids are stable across runs and platforms.
#[derive(Debug, Clone)]
pub struct HashedTokenizer {
    vocab_size: usize,
}

impl HashedTokenizer {
    pub fn new(vocab_size: usize) -> Result<Self> {
        if vocab_size <= RESERVED_IDS as usize {
            return Err(Error::invalid(format!(
                "vocab_size must exceed the {RESERVED_IDS} reserved ids, got {vocab_size}"
            )));
        }
        Ok(HashedTokenizer { vocab_size })
    }

    fn bucket(&self, word: &str) -> u32 {
        let buckets = (self.vocab_size - RESERVED_IDS as usize) as u64;
        RESERVED_IDS + (fnv1a(word.as_bytes()) % buckets) as u32
    }
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

impl Tokenizer for HashedTokenizer {
    fn encode(&self, text: &str) -> Vec<u32> {
        text.to_lowercase()
            .split(|c: char| !c.is_alphanumeric())
            .filter(|w| !w.is_empty())
            .map(|w| self.bucket(w))
            .collect()
    }

    fn vocab_size(&self) -> usize {
        self.vocab_size
    }
}

/// One joint token sequence with the positions of each text's tokens.
#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct TokenizedPair {
    pub ids: Vec<u32>,
    /// Positions of the first text's tokens, markers excluded.
    pub seg_a: Range<usize>,
    /// Positions of the second text's tokens, markers excluded.
    pub seg_b: Range<usize>,
}

impl TokenizedPair {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Check the marker layout and segment ranges.
    pub fn validate(&self) -> Result<()> {
        let l = self.ids.len();
        let (a, b) = (&self.seg_a, &self.seg_b);
        let len_a = a.end.saturating_sub(a.start);
        let len_b = b.end.saturating_sub(b.start);
        if len_a == 0 || len_b == 0 {
            return Err(Error::invalid("empty segment"));
        }
        if l != len_a + len_b + 4 {
            return Err(Error::invalid(format!(
                "length {l} does not match segments {len_a}+{len_b} plus 4 markers"
            )));
        }
        let want_layout = a.start == 1
            && b.start == a.end + 2
            && b.end + 1 == l
            && self.ids[0] == CLS_ID
            && self.ids[a.end] == SEP_ID
            && self.ids[a.end + 1] == SEP_ID
            && self.ids[l - 1] == SEP_ID;
        if !want_layout {
            return Err(Error::invalid("marker layout violated"));
        }
        if self.ids[a.clone()].iter().chain(&self.ids[b.clone()]).any(|&t| t < RESERVED_IDS) {
            return Err(Error::invalid("marker id inside a text segment"));
        }
        Ok(())
    }
}

fn assemble(tokens_a: &[u32], tokens_b: &[u32]) -> TokenizedPair {
    let mut ids = Vec::with_capacity(tokens_a.len() + tokens_b.len() + 4);
    ids.push(CLS_ID);
    ids.extend_from_slice(tokens_a);
    ids.push(SEP_ID);
    ids.push(SEP_ID);
    ids.extend_from_slice(tokens_b);
    ids.push(SEP_ID);
    let seg_a = 1..1 + tokens_a.len();
    let seg_b = seg_a.end + 2..seg_a.end + 2 + tokens_b.len();
    TokenizedPair { ids, seg_a, seg_b }
}

/// Build the joint sequence for two texts, truncating to `max_len` by
/// shortening the longer segment (ties shorten the second text). Markers
/// are never dropped and both segments keep at least one token.
pub fn tokenize_pair(
    text_a: &str,
    text_b: &str,
    tokenizer: &dyn Tokenizer,
    max_len: usize,
) -> Result<TokenizedPair> {
    let tokens_a = tokenizer.encode(text_a);
    let tokens_b = tokenizer.encode(text_b);
    if tokens_a.is_empty() || tokens_b.is_empty() {
        return Err(Error::invalid(format!(
            "text produced no tokens: {:?}",
            if tokens_a.is_empty() { text_a } else { text_b }
        )));
    }
    let pair = assemble(&tokens_a, &tokens_b);
    let (pair, _) = truncate_tokenized(&pair, max_len)?;
    Ok(pair)
}

/// Shrink an over-long sequence to `max_len`, returning whether anything
/// was cut. The longer segment loses tokens from its end first; a tie cuts
/// the second text.
pub fn truncate_tokenized(pair: &TokenizedPair, max_len: usize) -> Result<(TokenizedPair, bool)> {
    if max_len < MIN_SEQ_LEN {
        return Err(Error::invalid(format!(
            "max_len {max_len} cannot fit two one-token segments plus markers"
        )));
    }
    if pair.len() <= max_len {
        return Ok((pair.clone(), false));
    }
    let mut len_a = pair.seg_a.len();
    let mut len_b = pair.seg_b.len();
    while len_a + len_b + 4 > max_len {
        if len_b >= len_a {
            len_b -= 1;
        } else {
            len_a -= 1;
        }
    }
    if len_a == 0 || len_b == 0 {
        return Err(Error::invalid("segment emptied by truncation"));
    }
    let a = &pair.ids[pair.seg_a.start..pair.seg_a.start + len_a];
    let b = &pair.ids[pair.seg_b.start..pair.seg_b.start + len_b];
    Ok((assemble(a, b), true))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tok() -> HashedTokenizer {
        HashedTokenizer::new(64).unwrap()
    }

    #[test]
    fn layout_counts_match_segment_math() {
        let t = tok();
        let pair = tokenize_pair("warm sun", "cold rain tonight", &t, 32).unwrap();
        assert_eq!(pair.len(), 9);
        assert_eq!(pair.seg_a, 1..3);
        assert_eq!(pair.seg_b, 5..8);
        assert_eq!(pair.ids[0], CLS_ID);
        assert_eq!(pair.ids[3], SEP_ID);
        assert_eq!(pair.ids[4], SEP_ID);
        assert_eq!(pair.ids[8], SEP_ID);
        pair.validate().unwrap();
    }

    #[test]
    fn identical_texts_share_segment_ids() {
        let t = tok();
        let pair = tokenize_pair("a b c", "a b c", &t, 32).unwrap();
        let a: Vec<u32> = pair.ids[pair.seg_a.clone()].to_vec();
        let b: Vec<u32> = pair.ids[pair.seg_b.clone()].to_vec();
        assert_eq!(a, b);
    }

    #[test]
    fn hashing_is_stable_and_case_insensitive() {
        let t = tok();
        assert_eq!(t.encode("Hello"), t.encode("hello"));
        assert_eq!(t.encode("one two"), t.encode("one,two!"));
        for id in t.encode("alpha beta gamma") {
            assert!(id >= RESERVED_IDS && (id as usize) < t.vocab_size());
        }
        assert!(t.encode(" .,;! ").is_empty());
    }

    #[test]
    fn truncation_cuts_longer_segment_and_keeps_markers() {
        let t = tok();
        let long_b = vec!["word"; 50].join(" ");
        let pair = tokenize_pair("one two three", &long_b, &t, 16).unwrap();
        assert_eq!(pair.len(), 16);
        assert_eq!(pair.seg_a.len(), 3);
        assert_eq!(pair.seg_b.len(), 9);
        pair.validate().unwrap();

        // tie case: equal lengths cut the second text
        let text = vec!["w"; 20].join(" ");
        let pair = tokenize_pair(&text, &text, &t, 20).unwrap();
        assert_eq!(pair.seg_a.len(), 8);
        assert_eq!(pair.seg_b.len(), 8);
        pair.validate().unwrap();
    }

    #[test]
    fn truncation_rejects_impossible_budgets() {
        let t = tok();
        assert!(tokenize_pair("a", "b", &t, 5).is_err());
        assert!(tokenize_pair("a", "b", &t, 6).is_ok());
        assert!(tokenize_pair("", "b", &t, 32).is_err());
        assert!(tokenize_pair("a", "...", &t, 32).is_err());
    }

    mod properties {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn layout_holds_for_random_texts(
                a in "[a-z]{1,8}( [a-z]{1,8}){0,30}",
                b in "[a-z]{1,8}( [a-z]{1,8}){0,30}",
                max_len in 6usize..64,
            ) {
                let t = HashedTokenizer::new(128).unwrap();
                let pair = tokenize_pair(&a, &b, &t, max_len).unwrap();
                prop_assert!(pair.len() <= max_len);
                prop_assert!(pair.validate().is_ok());
            }

            #[test]
            fn truncation_is_idempotent(
                a in "[a-z]{1,6}( [a-z]{1,6}){0,40}",
                b in "[a-z]{1,6}( [a-z]{1,6}){0,40}",
            ) {
                let t = HashedTokenizer::new(128).unwrap();
                let pair = tokenize_pair(&a, &b, &t, 24).unwrap();
                let (again, cut) = truncate_tokenized(&pair, 24).unwrap();
                prop_assert!(!cut);
                prop_assert_eq!(again, pair);
            }
        }
    }
}
