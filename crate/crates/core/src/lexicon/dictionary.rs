use std::collections::{BTreeSet, HashMap, HashSet};
use std::path::Path;

use super::{levenshtein, LexiconError};

/// Word → frequency vocabulary used for spell correction.
///
/// When `case_sensitive` is false, words are stored and looked up lowercased
/// and the input's capitalisation is put back on the returned correction.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Dictionary {
    entries: HashMap<String, u64>,
    alphabet: BTreeSet<char>,
    case_sensitive: bool,
}

impl Dictionary {
    pub fn new(case_sensitive: bool) -> Self {
        Dictionary {
            case_sensitive,
            ..Default::default()
        }
    }

    /// Parses `word count` lines. Blank lines are ignored.
    pub fn parse(text: &str, case_sensitive: bool) -> Result<Self, LexiconError> {
        let mut dict = Dictionary::new(case_sensitive);
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let mut parts = line.split_whitespace();
            let word = parts.next().unwrap_or_default();
            let count = match parts.next() {
                Some(c) => c.parse::<u64>().map_err(|_| LexiconError::Parse {
                    line: i + 1,
                    reason: format!("bad count {c:?}"),
                })?,
                None => {
                    return Err(LexiconError::Parse {
                        line: i + 1,
                        reason: "expected `word count`".into(),
                    })
                }
            };
            if count == 0 {
                return Err(LexiconError::Parse {
                    line: i + 1,
                    reason: "frequency must be at least 1".into(),
                });
            }
            dict.add_word(word, count)?;
        }
        Ok(dict)
    }

    pub fn load(path: &Path, case_sensitive: bool) -> Result<Self, LexiconError> {
        let text = std::fs::read_to_string(path).map_err(|e| LexiconError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        Self::parse(&text, case_sensitive)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn case_sensitive(&self) -> bool {
        self.case_sensitive
    }

    fn fold(&self, word: &str) -> String {
        if self.case_sensitive {
            word.to_string()
        } else {
            word.to_lowercase()
        }
    }

    pub fn frequency(&self, word: &str) -> Option<u64> {
        self.entries.get(&self.fold(word)).copied()
    }

    pub fn contains(&self, word: &str) -> bool {
        self.entries.contains_key(&self.fold(word))
    }

    /// Inserts `word` or raises its frequency by `frequency` (at least 1).
    pub fn add_word(&mut self, word: &str, frequency: u64) -> Result<&mut Self, LexiconError> {
        if word.is_empty() {
            return Err(LexiconError::EmptyWord);
        }
        let key = self.fold(word);
        self.alphabet.extend(key.chars());
        *self.entries.entry(key).or_insert(0) += frequency.max(1);
        Ok(self)
    }

    fn edits1(&self, word: &[char]) -> HashSet<String> {
        let mut out = HashSet::new();
        let n = word.len();
        for i in 0..n {
            let mut w = word.to_vec();
            w.remove(i);
            out.insert(w.into_iter().collect());
        }
        for i in 0..n.saturating_sub(1) {
            let mut w = word.to_vec();
            w.swap(i, i + 1);
            out.insert(w.into_iter().collect());
        }
        for i in 0..n {
            for &c in &self.alphabet {
                let mut w = word.to_vec();
                w[i] = c;
                out.insert(w.into_iter().collect());
            }
        }
        for i in 0..=n {
            for &c in &self.alphabet {
                let mut w = word.to_vec();
                w.insert(i, c);
                out.insert(w.into_iter().collect());
            }
        }
        out
    }

    fn best<'a>(&self, candidates: impl Iterator<Item = &'a String>) -> Option<String> {
        candidates
            .filter_map(|c| self.entries.get(c).map(|&f| (c, f)))
            .max_by(|(a, fa), (b, fb)| fa.cmp(fb).then_with(|| b.cmp(a)))
            .map(|(c, _)| c.clone())
    }

    /// Returns `word` if known, otherwise the most frequent dictionary word one
    /// edit away, then (only if none) up to two edits away. Ties go to the
    /// lexicographically smallest word. Unknown words without candidates and
    /// tokens without letters come back unchanged.
    pub fn correct(&self, word: &str) -> String {
        if self.entries.is_empty() || !word.chars().any(char::is_alphabetic) {
            return word.to_string();
        }
        let folded = self.fold(word);
        if self.entries.contains_key(&folded) {
            return word.to_string();
        }
        let chars: Vec<char> = folded.chars().collect();
        let e1 = self.edits1(&chars);
        let found = self.best(e1.iter()).or_else(|| {
            // Every word within two unit edits is reachable by two generated
            // edits, so scanning the vocabulary yields the same candidate set.
            let len = chars.len();
            let near: Vec<&String> = self
                .entries
                .keys()
                .filter(|w| w.chars().count().abs_diff(len) <= 2)
                .filter(|w| levenshtein(&folded, w) <= 2)
                .collect();
            self.best(near.into_iter())
        });
        match found {
            Some(c) if self.case_sensitive => c,
            Some(c) => restore_case(word, &c),
            None => word.to_string(),
        }
    }
}

/// All-caps inputs (two or more letters) stay all-caps; otherwise the first
/// letter's case is copied.
fn restore_case(original: &str, corrected: &str) -> String {
    let letters: Vec<char> = original.chars().filter(|c| c.is_alphabetic()).collect();
    if letters.len() >= 2 && letters.iter().all(|c| c.is_uppercase()) {
        return corrected.to_uppercase();
    }
    match original.chars().next() {
        Some(first) if first.is_uppercase() => {
            let mut it = corrected.chars();
            match it.next() {
                Some(c) => c.to_uppercase().chain(it).collect(),
                None => String::new(),
            }
        }
        _ => corrected.to_string(),
    }
}
