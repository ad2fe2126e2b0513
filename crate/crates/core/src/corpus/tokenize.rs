use unicode_normalization::char::is_combining_mark;
use unicode_normalization::UnicodeNormalization;

/// Word-level tokenizer applied to both sides of a parallel corpus.
///
/// Text is NFC-normalized, optionally lowercased, and split on whitespace
/// with every punctuation or symbol character emitted as its own token.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TokenizerSettings {
    pub lowercase: bool,
    pub split_punctuation: bool,
}

impl Default for TokenizerSettings {
    fn default() -> Self {
        Self {
            lowercase: true,
            split_punctuation: true,
        }
    }
}

fn is_word_char(c: char) -> bool {
    c.is_alphanumeric() || is_combining_mark(c)
}

impl TokenizerSettings {
    pub fn tokenize(&self, text: &str) -> Vec<String> {
        let normalized: String = text.nfc().collect();
        let cased = if self.lowercase {
            normalized.to_lowercase().nfc().collect()
        } else {
            normalized
        };

        let mut tokens = Vec::new();
        let mut current = String::new();
        for c in cased.chars() {
            if c.is_whitespace() {
                if !current.is_empty() {
                    tokens.push(std::mem::take(&mut current));
                }
            } else if self.split_punctuation && !is_word_char(c) {
                if !current.is_empty() {
                    tokens.push(std::mem::take(&mut current));
                }
                tokens.push(c.to_string());
            } else {
                current.push(c);
            }
        }
        if !current.is_empty() {
            tokens.push(current);
        }
        tokens
    }
}

/// Tokenizes with the default settings.
pub fn tokenize(text: &str) -> Vec<String> {
    TokenizerSettings::default().tokenize(text)
}
