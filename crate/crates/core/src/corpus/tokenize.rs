use std::collections::HashSet;

const STOPWORDS_V1: &str = include_str!("../../data/stopwords_en_v1.txt");

/// Token filtering rules applied after lowercasing.
#[derive(Debug, Clone)]
pub struct PreprocessConfig {
    pub stopwords: HashSet<String>,
    pub min_length: usize,
}

impl PreprocessConfig {
    /// The bundled English stopword list (version 1).
    pub fn default_stopwords() -> HashSet<String> {
        STOPWORDS_V1
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with('#'))
            .map(str::to_owned)
            .collect()
    }
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        Self {
            stopwords: Self::default_stopwords(),
            min_length: 3,
        }
    }
}

/// Lowercases, splits on every non-alphanumeric character, and drops
/// stopwords, tokens containing digits and tokens shorter than
/// `rules.min_length` characters.
pub fn tokenize_and_clean(raw_text: &str, rules: &PreprocessConfig) -> Vec<String> {
    raw_text
        .to_lowercase()
        .split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .filter(|t| t.chars().count() >= rules.min_length)
        .filter(|t| !t.chars().any(char::is_numeric))
        .filter(|t| !rules.stopwords.contains(*t))
        .map(str::to_owned)
        .collect()
}
