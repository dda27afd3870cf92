//! Caption tokenization.
//!
//! Captions are lowercased, ASCII punctuation is deleted and the remainder is
//! split on whitespace. Detokenization joins with single spaces, so
//! `tokenize(detokenize(t)) == t` for any token list produced here.

/// Lowercases, strips ASCII punctuation and splits on whitespace.
pub fn tokenize(caption: &str) -> Vec<String> {
    let cleaned: String = caption
        .chars()
        .filter(|c| !c.is_ascii_punctuation())
        .flat_map(char::to_lowercase)
        .collect();
    cleaned.split_whitespace().map(str::to_owned).collect()
}

pub fn detokenize<S: AsRef<str>>(tokens: &[S]) -> String {
    let mut out = String::new();
    for (i, tok) in tokens.iter().enumerate() {
        if i > 0 {
            out.push(' ');
        }
        out.push_str(tok.as_ref());
    }
    out
}

/// Position of the first occurrence of `needle` as a contiguous run in `haystack`.
pub fn find_subsequence<S: AsRef<str>, T: AsRef<str>>(
    haystack: &[S],
    needle: &[T],
    from: usize,
) -> Option<usize> {
    if needle.is_empty() || haystack.len() < needle.len() {
        return None;
    }
    (from..=haystack.len() - needle.len()).find(|&start| {
        needle
            .iter()
            .zip(&haystack[start..])
            .all(|(n, h)| n.as_ref() == h.as_ref())
    })
}
