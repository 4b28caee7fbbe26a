//! Byte-level tokenizer with reserved special tokens.
//!
//! IDs 0..8 are special; bytes map to `8 + b`. The think/answer markers are
//! single tokens so template structure survives sampling at any model skill
//! level. Digits and letters are covered by the byte range.

use crate::error::{Error, Result};

pub const PAD: u32 = 0;
pub const BOS: u32 = 1;
pub const EOS: u32 = 2;
pub const IMG: u32 = 3;
pub const THINK_OPEN: u32 = 4;
pub const THINK_CLOSE: u32 = 5;
pub const ANS_OPEN: u32 = 6;
pub const ANS_CLOSE: u32 = 7;
pub const SPECIAL_TOKEN_COUNT: usize = 8;
pub const BYTE_OFFSET: u32 = 8;
/// Smallest vocab that can encode arbitrary byte text.
pub const TEXT_VOCAB_MIN: usize = BYTE_OFFSET as usize + 256;

const MARKERS: [(&str, u32); 4] = [
    ("<think>", THINK_OPEN),
    ("</think>", THINK_CLOSE),
    ("<answer>", ANS_OPEN),
    ("</answer>", ANS_CLOSE),
];

/// Encodes text to token ids. Marker strings become single special tokens;
/// everything else is byte-level.
pub fn encode(text: &str) -> Vec<u32> {
    let bytes = text.as_bytes();
    let mut ids = Vec::with_capacity(bytes.len());
    let mut i = 0;
    'outer: while i < bytes.len() {
        for (marker, id) in MARKERS {
            let m = marker.as_bytes();
            if bytes[i..].starts_with(m) {
                ids.push(id);
                i += m.len();
                continue 'outer;
            }
        }
        ids.push(BYTE_OFFSET + bytes[i] as u32);
        i += 1;
    }
    ids
}

/// Decodes ids back to text. Structural tokens (PAD/BOS/EOS/IMG) and ids
/// outside the byte range produce nothing.
pub fn decode(ids: &[u32]) -> String {
    let mut bytes = Vec::with_capacity(ids.len());
    for &id in ids {
        match id {
            THINK_OPEN => bytes.extend_from_slice(b"<think>"),
            THINK_CLOSE => bytes.extend_from_slice(b"</think>"),
            ANS_OPEN => bytes.extend_from_slice(b"<answer>"),
            ANS_CLOSE => bytes.extend_from_slice(b"</answer>"),
            id if id >= BYTE_OFFSET && id < BYTE_OFFSET + 256 => {
                bytes.push((id - BYTE_OFFSET) as u8)
            }
            _ => {}
        }
    }
    String::from_utf8_lossy(&bytes).into_owned()
}

/// A token sequence with an optional contiguous image-token region. The
/// region holds IMG placeholders that the forward pass replaces with
/// projected visual tokens.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenSequence {
    pub ids: Vec<u32>,
    /// (start, len) of the IMG placeholder run, if any.
    pub img_region: Option<(usize, usize)>,
}

impl TokenSequence {
    /// BOS + text tokens, no image.
    pub fn text_only(text: &str) -> TokenSequence {
        let mut ids = vec![BOS];
        ids.extend(encode(text));
        TokenSequence {
            ids,
            img_region: None,
        }
    }

    /// BOS + `img_tokens` IMG placeholders + text tokens.
    pub fn with_image(text: &str, img_tokens: usize) -> TokenSequence {
        let mut ids = vec![BOS];
        ids.extend(std::iter::repeat(IMG).take(img_tokens));
        ids.extend(encode(text));
        TokenSequence {
            ids,
            img_region: Some((1, img_tokens)),
        }
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Appends response text plus EOS; returns the span of appended tokens.
    pub fn push_response(&mut self, text: &str) -> (usize, usize) {
        let start = self.ids.len();
        self.ids.extend(encode(text));
        self.ids.push(EOS);
        (start, self.ids.len() - start)
    }

    /// Checks: ids in range, length bound, exactly the declared IMG region.
    pub fn validate(&self, vocab_size: usize, max_seq_len: usize) -> Result<()> {
        if self.ids.len() > max_seq_len {
            return Err(Error::SequenceTooLong {
                got: self.ids.len(),
                max: max_seq_len,
            });
        }
        for &id in &self.ids {
            if id as usize >= vocab_size {
                return Err(Error::Argument(format!(
                    "token id {id} out of vocab {vocab_size}"
                )));
            }
        }
        let img_positions: Vec<usize> = self
            .ids
            .iter()
            .enumerate()
            .filter(|(_, &id)| id == IMG)
            .map(|(i, _)| i)
            .collect();
        match self.img_region {
            None => {
                if !img_positions.is_empty() {
                    return Err(Error::Argument(
                        "IMG tokens present without a declared region".into(),
                    ));
                }
            }
            Some((start, len)) => {
                let expected: Vec<usize> = (start..start + len).collect();
                if img_positions != expected {
                    return Err(Error::Argument(
                        "IMG tokens must form exactly one contiguous region".into(),
                    ));
                }
            }
        }
        Ok(())
    }
}
