use std::collections::HashSet;
use std::sync::OnceLock;

const ENGLISH_STOPWORDS: &str = include_str!("stopwords.txt");

/// Text-to-term conversion: lowercase, split on non-alphanumerics, drop
/// numbers, single characters and stopwords.
#[derive(Debug, Clone)]
pub struct Tokenizer {
    stopwords: HashSet<String>,
}

impl Tokenizer {
    pub fn new(stopwords: impl IntoIterator<Item = impl Into<String>>) -> Self {
        Tokenizer {
            stopwords: stopwords.into_iter().map(Into::into).collect(),
        }
    }

    /// The frozen English stopword list shipped with the crate.
    pub fn english() -> &'static Tokenizer {
        static TOKENIZER: OnceLock<Tokenizer> = OnceLock::new();
        TOKENIZER.get_or_init(|| Tokenizer::new(ENGLISH_STOPWORDS.lines().map(str::trim).filter(|w| !w.is_empty())))
    }

    pub fn stopword_count(&self) -> usize {
        self.stopwords.len()
    }

    pub fn tokenize(&self, text: &str) -> Vec<String> {
        text.split(|c: char| !c.is_alphanumeric())
            .filter(|raw| !raw.is_empty())
            .map(str::to_lowercase)
            .filter(|tok| tok.chars().nth(1).is_some())
            .filter(|tok| !tok.chars().all(char::is_numeric))
            .filter(|tok| !self.stopwords.contains(tok))
            .collect()
    }
}

/// Tokenizes with the default English stopword list.
pub fn tokenize(text: &str) -> Vec<String> {
    Tokenizer::english().tokenize(text)
}
