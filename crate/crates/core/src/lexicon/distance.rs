use super::LexiconError;

/// Unit-cost edit distance over Unicode scalar values.
pub fn levenshtein(a: &str, b: &str) -> usize {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    if a.is_empty() {
        return b.len();
    }
    if b.is_empty() {
        return a.len();
    }
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0; b.len() + 1];
    for (i, &ca) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, &cb) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(ca != cb);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EvalPair {
    pub ground_truth: String,
    pub recognized: String,
}

impl EvalPair {
    pub fn new(ground_truth: impl Into<String>, recognized: impl Into<String>) -> Self {
        EvalPair {
            ground_truth: ground_truth.into(),
            recognized: recognized.into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CerReport {
    pub value: f64,
    pub edits: usize,
    pub chars: usize,
    pub pairs: usize,
    /// Pairs whose ground truth is empty; they add edits but no characters.
    pub empty_ground_truths: usize,
}

impl std::fmt::Display for CerReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        writeln!(f, "metric: cer")?;
        writeln!(f, "value: {:.4}", self.value)?;
        write!(f, "pairs: {}", self.pairs)
    }
}

/// Character error rate: total edit distance over total ground-truth length.
pub fn cer(pairs: &[EvalPair]) -> Result<f64, LexiconError> {
    cer_report(pairs).map(|r| r.value)
}

pub fn cer_report(pairs: &[EvalPair]) -> Result<CerReport, LexiconError> {
    let mut edits = 0;
    let mut chars = 0;
    let mut empty = 0;
    for p in pairs {
        edits += levenshtein(&p.ground_truth, &p.recognized);
        let n = p.ground_truth.chars().count();
        if n == 0 {
            empty += 1;
        }
        chars += n;
    }
    if chars == 0 {
        return Err(LexiconError::EmptyCorpus);
    }
    Ok(CerReport {
        value: edits as f64 / chars as f64,
        edits,
        chars,
        pairs: pairs.len(),
        empty_ground_truths: empty,
    })
}
