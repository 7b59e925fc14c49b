use std::collections::HashMap;
use std::path::Path;

use super::RecognizerError;

/// Number of symbols in the production alphabet; the CTC blank is class 79.
pub const IAM_CHARSET_SIZE: usize = 79;

const IAM_CHARS: &str = " !\"#&'()*+,-./0123456789:;?ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz";

/// Ordered alphabet; class `i` is `chars[i]` and the blank is `chars.len()`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CharSet {
    chars: Vec<char>,
    index: HashMap<char, usize>,
}

impl CharSet {
    pub fn new(chars: Vec<char>) -> Result<Self, RecognizerError> {
        if chars.is_empty() {
            return Err(RecognizerError::Charset("alphabet is empty".into()));
        }
        let mut index = HashMap::with_capacity(chars.len());
        for (i, &c) in chars.iter().enumerate() {
            if index.insert(c, i).is_some() {
                return Err(RecognizerError::Charset(format!("duplicate character {c:?}")));
            }
        }
        Ok(CharSet { chars, index })
    }

    /// The 79-symbol alphabet of the IAM word corpus.
    pub fn iam() -> Self {
        let set = Self::new(IAM_CHARS.chars().collect()).expect("builtin alphabet is valid");
        debug_assert_eq!(set.len(), IAM_CHARSET_SIZE);
        set
    }

    /// Parses a charset file: one character per line, exactly 79 lines. A
    /// line holding a single space defines the space character.
    pub fn parse(text: &str) -> Result<Self, RecognizerError> {
        let mut chars = Vec::new();
        for (i, line) in text.split('\n').enumerate() {
            let line = line.strip_suffix('\r').unwrap_or(line);
            let mut it = line.chars();
            match (it.next(), it.next()) {
                (Some(c), None) => chars.push(c),
                (None, _) if i == text.split('\n').count() - 1 => {}
                _ => {
                    return Err(RecognizerError::Charset(format!(
                        "line {} must hold exactly one character, got {line:?}",
                        i + 1
                    )))
                }
            }
        }
        if chars.len() != IAM_CHARSET_SIZE {
            return Err(RecognizerError::Charset(format!(
                "charset file must list {IAM_CHARSET_SIZE} characters, found {}",
                chars.len()
            )));
        }
        Self::new(chars)
    }

    pub fn load(path: &Path) -> Result<Self, RecognizerError> {
        let text = std::fs::read_to_string(path).map_err(|e| RecognizerError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        Self::parse(&text)
    }

    pub fn to_file_string(&self) -> String {
        self.chars.iter().map(|c| format!("{c}\n")).collect()
    }

    pub fn len(&self) -> usize {
        self.chars.len()
    }

    pub fn is_empty(&self) -> bool {
        self.chars.is_empty()
    }

    pub fn blank(&self) -> usize {
        self.chars.len()
    }

    /// Characters plus blank.
    pub fn classes(&self) -> usize {
        self.chars.len() + 1
    }

    pub fn chars(&self) -> &[char] {
        &self.chars
    }

    pub fn encode(&self, text: &str) -> Result<Vec<usize>, RecognizerError> {
        text.chars()
            .map(|c| {
                self.index
                    .get(&c)
                    .copied()
                    .ok_or_else(|| RecognizerError::InvalidLabel(format!("character {c:?} not in charset")))
            })
            .collect()
    }

    /// Maps class indices to text; the blank and out-of-range indices are skipped.
    pub fn decode(&self, labels: &[usize]) -> String {
        labels.iter().filter_map(|&i| self.chars.get(i)).collect()
    }
}
