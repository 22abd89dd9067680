use super::Sentence;

/// Lowercases, splits on whitespace, strips leading/trailing
/// non-alphanumerics (inner punctuation like apostrophes survives),
/// and drops anything left empty.
pub fn tokenize(line: &str) -> Vec<String> {
    line.to_lowercase()
        .split_whitespace()
        .map(|w| w.trim_matches(|c: char| !c.is_alphanumeric()))
        .filter(|w| !w.is_empty())
        .map(str::to_string)
        .collect()
}

/// Splits lyrics into per-line sentences. Blank lines and lines with no
/// tokens are dropped.
pub fn segment_sentences(lyrics: &str) -> Vec<Sentence> {
    lyrics
        .lines()
        .map(tokenize)
        .filter(|tokens| !tokens.is_empty())
        .map(|tokens| Sentence { tokens })
        .collect()
}
