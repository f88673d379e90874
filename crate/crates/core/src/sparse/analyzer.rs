use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stemmer {
    None,
    Porter,
}

/// Text to index terms: split on non-alphanumerics, lowercase, drop stopwords, stem.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Analyzer {
    pub lowercase: bool,
    pub stemmer: Stemmer,
    pub stopwords: Option<BTreeSet<String>>,
}

impl Default for Analyzer {
    fn default() -> Self {
        Self {
            lowercase: true,
            stemmer: Stemmer::Porter,
            stopwords: None,
        }
    }
}

impl Analyzer {
    /// Loads a whitespace-separated stopword file.
    pub fn with_stopword_file(mut self, path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let words = text
            .split_whitespace()
            .map(|w| if self.lowercase { w.to_lowercase() } else { w.to_string() })
            .collect();
        self.stopwords = Some(words);
        Ok(self)
    }

    pub fn analyze(&self, text: &str) -> Vec<String> {
        text.split(|c: char| !c.is_alphanumeric())
            .filter(|t| !t.is_empty())
            .filter_map(|t| {
                let token = if self.lowercase { t.to_lowercase() } else { t.to_string() };
                if self.stopwords.as_ref().is_some_and(|s| s.contains(&token)) {
                    return None;
                }
                Some(match self.stemmer {
                    // The Porter rules are defined over lowercase ASCII letters.
                    Stemmer::Porter if token.bytes().all(|b| b.is_ascii_lowercase()) => super::porter::stem(&token),
                    _ => token,
                })
            })
            .collect()
    }
}

pub fn analyze(text: &str, analyzer: &Analyzer) -> Vec<String> {
    analyzer.analyze(text)
}
