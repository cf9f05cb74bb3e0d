/// Lowercased tokens, none empty.
pub type TokenList = Vec<String>;

/// Lowercases, splits on whitespace and trims non-alphanumeric characters
/// from both ends of each token. Inner hyphens and slashes survive
/// (`"3/4"`, `"ultrasound-guided"`).
pub fn tokenize(text: &str) -> TokenList {
    text.split_whitespace()
        .map(|raw| raw.trim_matches(|c: char| !c.is_alphanumeric()).to_lowercase())
        .filter(|t| !t.is_empty())
        .collect()
}
