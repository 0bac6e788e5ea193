//! The one text normalization shared by the linker, the bias filter and the
//! encoder.

fn is_punct(c: char) -> bool {
    c.is_ascii_punctuation()
        || ('\u{2010}'..='\u{2027}').contains(&c)
        || matches!(c, '«' | '»' | '¡' | '¿' | '\u{3001}' | '\u{3002}')
}

/// Lowercases one raw token and strips surrounding punctuation. May return an
/// empty string.
pub fn normalize_token(raw: &str) -> String {
    raw.trim_matches(is_punct).to_lowercase()
}

/// Lowercase, split on Unicode whitespace, strip leading/trailing punctuation
/// from each token and drop the empty ones.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split_whitespace()
        .map(normalize_token)
        .filter(|t| !t.is_empty())
        .collect()
}

/// Normalized phrase form used as a lookup key: tokens joined by one space.
pub fn normalize_phrase(text: &str) -> String {
    tokenize(text).join(" ")
}
