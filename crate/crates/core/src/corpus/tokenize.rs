use crate::error::{Error, Result};

/// Lowercases, splits on whitespace and separates every ASCII punctuation
/// character into its own token.
pub fn tokenize(text: &str) -> Result<Vec<String>> {
    let mut tokens = Vec::new();
    for word in text.split_whitespace() {
        let mut current = String::new();
        for ch in word.chars() {
            if ch.is_ascii_punctuation() {
                if !current.is_empty() {
                    tokens.push(std::mem::take(&mut current));
                }
                tokens.push(ch.to_string());
            } else {
                current.extend(ch.to_lowercase());
            }
        }
        if !current.is_empty() {
            tokens.push(current);
        }
    }
    if tokens.is_empty() {
        return Err(Error::EmptySentence);
    }
    Ok(tokens)
}

pub fn detokenize(tokens: &[String]) -> String {
    tokens.join(" ")
}
