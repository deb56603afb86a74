//! Shared tokenizer used by every text-consuming stage.
//!
//! Entity matching, distant-supervision labeling, node words, and the BM25
//! index all have to agree on token boundaries, so the rule lives in one
//! place: a token is a maximal run of alphanumeric characters, lowercased.

/// A token plus its byte span in the original string.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Token {
    /// Lowercased token text.
    pub text: String,
    /// Byte offset of the first character in the source string.
    pub start: usize,
    /// Byte offset one past the last character.
    pub end: usize,
}

/// Tokenize keeping byte spans into the source string.
pub fn tokenize_with_spans(input: &str) -> Vec<Token> {
    let mut tokens = Vec::new();
    let mut current = String::new();
    let mut start = 0usize;

    for (idx, ch) in input.char_indices() {
        if ch.is_alphanumeric() {
            if current.is_empty() {
                start = idx;
            }
            current.extend(ch.to_lowercase());
        } else if !current.is_empty() {
            tokens.push(Token {
                text: std::mem::take(&mut current),
                start,
                end: idx,
            });
        }
    }
    if !current.is_empty() {
        tokens.push(Token {
            text: current,
            start,
            end: input.len(),
        });
    }
    tokens
}

/// Lowercased tokens without span information.
pub fn tokenize(input: &str) -> Vec<String> {
    tokenize_with_spans(input).into_iter().map(|t| t.text).collect()
}

/// Normalize a surface form to its canonical lookup key: tokens joined by
/// single spaces. `"Lower   Back"` and `"lower back"` share one key.
pub fn normalize_surface(input: &str) -> String {
    tokenize(input).join(" ")
}

/// Seeded FNV-1a over the seed bytes then the payload. Stable across
/// platforms and Rust versions, unlike the std hasher; split assignment
/// and OOV embeddings depend on that.
pub fn stable_hash(seed: u64, bytes: &[u8]) -> u64 {
    let mut hash = 0xcbf29ce484222325u64;
    for chunk in seed.to_le_bytes().iter().chain(bytes) {
        hash ^= u64::from(*chunk);
        hash = hash.wrapping_mul(0x100000001b3);
    }
    // FNV alone mixes the high bits poorly on short keys; finalize so the
    // whole 64-bit range is usable for bucketing.
    hash ^= hash >> 33;
    hash = hash.wrapping_mul(0xff51afd7ed558ccd);
    hash ^= hash >> 33;
    hash = hash.wrapping_mul(0xc4ceb9fe1a85ec53);
    hash ^ (hash >> 33)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tokenize_strips_punctuation_and_lowercases() {
        assert_eq!(tokenize("Pain in right knee."), vec!["pain", "in", "right", "knee"]);
        assert_eq!(tokenize("Covid-19"), vec!["covid", "19"]);
        assert_eq!(tokenize(""), Vec::<String>::new());
        assert_eq!(tokenize("  ...  "), Vec::<String>::new());
    }

    #[test]
    fn spans_index_into_source() {
        let toks = tokenize_with_spans("Acute knee pain");
        assert_eq!(toks.len(), 3);
        assert_eq!(&"Acute knee pain"[toks[0].start..toks[0].end], "Acute");
        assert_eq!(&"Acute knee pain"[toks[2].start..toks[2].end], "pain");
    }

    #[test]
    fn normalize_surface_collapses_whitespace() {
        assert_eq!(normalize_surface("Lower   Back"), "lower back");
        assert_eq!(normalize_surface("lower back"), "lower back");
    }
}
