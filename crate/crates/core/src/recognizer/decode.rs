//! CTC decoding: best-path and prefix beam search.

use std::collections::BTreeMap;

use super::ctc::log_softmax;
use super::{Scalar, Tensor};

/// Per-frame argmax (ties go to the lower class), repeats collapsed, blanks dropped.
pub fn greedy_decode<T: Scalar>(logits: &Tensor<T>, blank: usize) -> Vec<usize> {
    let k = logits.dims()[1];
    let mut out = Vec::new();
    let mut prev = None;
    for row in logits.data().chunks_exact(k) {
        let mut best = 0;
        for (c, v) in row.iter().enumerate() {
            if *v > row[best] {
                best = c;
            }
        }
        if Some(best) != prev && best != blank {
            out.push(best);
        }
        prev = Some(best);
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct BeamResult {
    pub labels: Vec<usize>,
    /// Natural-log probability of `labels` accumulated by the search.
    pub log_prob: f64,
}

fn lse(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let m = a.max(b);
    m + ((a - m).exp() + (b - m).exp()).ln()
}

/// Prefix beam search keeping `beam_width` prefixes (at least one). Each
/// prefix tracks the log-probability of paths ending in blank and in its
/// last symbol; equal prefixes reached by different paths are merged.
/// Ties in total probability favour the lexicographically smaller prefix.
pub fn beam_decode<T: Scalar>(logits: &Tensor<T>, blank: usize, beam_width: usize) -> BeamResult {
    let (t_len, k) = (logits.dims()[0], logits.dims()[1]);
    let width = beam_width.max(1);
    let lp = log_softmax(logits);
    let ninf = f64::NEG_INFINITY;

    let mut beams: Vec<(Vec<usize>, f64, f64)> = vec![(Vec::new(), 0.0, ninf)];
    for t in 0..t_len {
        let row = &lp[t * k..(t + 1) * k];
        let mut next: BTreeMap<Vec<usize>, (f64, f64)> = BTreeMap::new();
        for (prefix, pb, pnb) in &beams {
            let total = lse(*pb, *pnb);
            let e = next.entry(prefix.clone()).or_insert((ninf, ninf));
            e.0 = lse(e.0, total + row[blank]);
            let last = prefix.last().copied();
            for (c, &lpc) in row.iter().enumerate() {
                if c == blank {
                    continue;
                }
                if Some(c) == last {
                    // repeat without a blank collapses onto the same prefix
                    let e = next.entry(prefix.clone()).or_insert((ninf, ninf));
                    e.1 = lse(e.1, pnb + lpc);
                    let mut ext = prefix.clone();
                    ext.push(c);
                    let e = next.entry(ext).or_insert((ninf, ninf));
                    e.1 = lse(e.1, pb + lpc);
                } else {
                    let mut ext = prefix.clone();
                    ext.push(c);
                    let e = next.entry(ext).or_insert((ninf, ninf));
                    e.1 = lse(e.1, total + lpc);
                }
            }
        }
        let mut ranked: Vec<(Vec<usize>, f64, f64)> = next.into_iter().map(|(p, (b, nb))| (p, b, nb)).collect();
        ranked.sort_by(|a, b| {
            lse(b.1, b.2)
                .partial_cmp(&lse(a.1, a.2))
                .unwrap_or(std::cmp::Ordering::Equal)
                .then_with(|| a.0.cmp(&b.0))
        });
        ranked.truncate(width);
        beams = ranked;
    }
    let (labels, pb, pnb) = beams.swap_remove(0);
    BeamResult {
        labels,
        log_prob: lse(pb, pnb),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn probs(rows: &[&[f64]]) -> Tensor<f64> {
        let k = rows[0].len();
        Tensor::from_vec(&[rows.len(), k], rows.iter().flat_map(|r| r.iter().map(|p| p.ln())).collect()).unwrap()
    }

    #[test]
    fn greedy_collapse_and_blanks() {
        // classes {a=0, blank=1}
        let mut rows: Vec<&[f64]> = vec![&[0.9, 0.1], &[0.9, 0.1], &[0.1, 0.9], &[0.9, 0.1]];
        rows.extend(std::iter::repeat_n(&[0.1, 0.9][..], 28));
        assert_eq!(greedy_decode(&probs(&rows), 1), vec![0, 0]);
        let blanks: Vec<&[f64]> = vec![&[0.1, 0.9]; 32];
        assert!(greedy_decode(&probs(&blanks), 1).is_empty());
    }

    #[test]
    fn greedy_ties_pick_lower_class() {
        let logits = Tensor::from_vec(&[1, 3], vec![0.0f64, 1.0, 1.0]).unwrap();
        assert_eq!(greedy_decode(&logits, 2), vec![1]);
    }

    #[test]
    fn beam_beats_greedy_on_ambiguous_pair() {
        let logits = probs(&[&[0.4, 0.6], &[0.4, 0.6]]);
        assert!(greedy_decode(&logits, 1).is_empty());
        let r = beam_decode(&logits, 1, 4);
        assert_eq!(r.labels, vec![0]);
        assert!((r.log_prob - 0.64f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn dominant_path_matches_greedy() {
        let logits = probs(&[&[0.995, 0.003, 0.002], &[0.002, 0.003, 0.995], &[0.003, 0.995, 0.002]]);
        assert_eq!(beam_decode(&logits, 2, 5).labels, greedy_decode(&logits, 2));
    }
}
