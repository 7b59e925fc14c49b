//! CTC loss with exact gradients, computed in log space.

use super::{RecognizerError, Scalar, Tensor};

pub struct CtcOutput<T> {
    /// `−ln p(label | logits)`.
    pub loss: f64,
    /// Gradient of `loss` with respect to the raw logits.
    pub grad: Tensor<T>,
}

fn lse2(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let m = a.max(b);
    m + ((a - m).exp() + (b - m).exp()).ln()
}

/// Minimum number of frames a label needs: one per symbol plus a blank
/// between each pair of equal neighbours.
pub fn ctc_required_steps(label: &[usize]) -> usize {
    label.len() + label.windows(2).filter(|w| w[0] == w[1]).count()
}

/// Row-wise log-softmax in f64.
pub(crate) fn log_softmax<T: Scalar>(logits: &Tensor<T>) -> Vec<f64> {
    let k = logits.dims()[1];
    let mut out = Vec::with_capacity(logits.len());
    for row in logits.data().chunks_exact(k) {
        let m = row.iter().map(|v| v.to_f64()).fold(f64::NEG_INFINITY, f64::max);
        let z = m + row.iter().map(|v| (v.to_f64() - m).exp()).sum::<f64>().ln();
        out.extend(row.iter().map(|v| v.to_f64() - z));
    }
    out
}

/// CTC loss of `label` under `[T, K]` logits with the given blank class.
/// The empty label is valid and scores the all-blank path.
pub fn ctc_loss<T: Scalar>(logits: &Tensor<T>, label: &[usize], blank: usize) -> Result<CtcOutput<T>, RecognizerError> {
    if logits.dims().len() != 2 {
        return Err(RecognizerError::ShapeMismatch(format!(
            "ctc logits must be [T, K], got {:?}",
            logits.dims()
        )));
    }
    let (t_len, k) = (logits.dims()[0], logits.dims()[1]);
    if blank >= k {
        return Err(RecognizerError::InvalidLabel(format!("blank {blank} outside {k} classes")));
    }
    if let Some(&bad) = label.iter().find(|&&c| c >= k || c == blank) {
        return Err(RecognizerError::InvalidLabel(format!(
            "class {bad} is the blank or outside {k} classes"
        )));
    }
    let required = ctc_required_steps(label);
    if required > t_len {
        return Err(RecognizerError::InfeasibleLabel {
            label_len: label.len(),
            required,
            timesteps: t_len,
        });
    }

    let lp = log_softmax(logits);
    let s_len = 2 * label.len() + 1;
    let ext: Vec<usize> = (0..s_len).map(|s| if s % 2 == 0 { blank } else { label[s / 2] }).collect();
    let skip = |s: usize| s >= 2 && ext[s] != blank && ext[s] != ext[s - 2];
    let ninf = f64::NEG_INFINITY;

    // alpha[t][s]: paths ending in state s at t, emission at t included.
    let mut alpha = vec![ninf; t_len * s_len];
    alpha[0] = lp[ext[0]];
    if s_len > 1 {
        alpha[1] = lp[ext[1]];
    }
    for t in 1..t_len {
        for s in 0..s_len {
            let prev = &alpha[(t - 1) * s_len..t * s_len];
            let mut v = prev[s];
            if s >= 1 {
                v = lse2(v, prev[s - 1]);
            }
            if skip(s) {
                v = lse2(v, prev[s - 2]);
            }
            alpha[t * s_len + s] = v + lp[t * k + ext[s]];
        }
    }
    // beta[t][s]: completions from state s at t, emission at t excluded.
    let mut beta = vec![ninf; t_len * s_len];
    beta[(t_len - 1) * s_len + s_len - 1] = 0.0;
    if s_len > 1 {
        beta[(t_len - 1) * s_len + s_len - 2] = 0.0;
    }
    for t in (0..t_len - 1).rev() {
        for s in 0..s_len {
            let next = |s2: usize| beta[(t + 1) * s_len + s2] + lp[(t + 1) * k + ext[s2]];
            let mut v = next(s);
            if s + 1 < s_len {
                v = lse2(v, next(s + 1));
            }
            if s + 2 < s_len && skip(s + 2) {
                v = lse2(v, next(s + 2));
            }
            beta[t * s_len + s] = v;
        }
    }
    let last = &alpha[(t_len - 1) * s_len..];
    let log_p = if s_len > 1 {
        lse2(last[s_len - 1], last[s_len - 2])
    } else {
        last[0]
    };

    let mut grad = vec![T::ZERO; t_len * k];
    let mut occ = vec![ninf; k];
    for t in 0..t_len {
        occ.fill(ninf);
        for s in 0..s_len {
            let v = alpha[t * s_len + s] + beta[t * s_len + s];
            occ[ext[s]] = lse2(occ[ext[s]], v);
        }
        for c in 0..k {
            let p = lp[t * k + c].exp();
            let gamma = (occ[c] - log_p).exp();
            grad[t * k + c] = T::from_f64(p - gamma);
        }
    }
    Ok(CtcOutput {
        loss: -log_p,
        grad: Tensor::from_vec(&[t_len, k], grad)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(rows: usize, k: usize, v: Vec<f64>) -> Tensor<f64> {
        Tensor::from_vec(&[rows, k], v).unwrap()
    }

    #[test]
    fn single_frame_uniform() {
        let out = ctc_loss(&t(1, 2, vec![0.0, 0.0]), &[0], 1).unwrap();
        assert!((out.loss - 0.5f64.ln().abs()).abs() < 1e-12);
    }

    #[test]
    fn two_frames_three_paths() {
        // paths a·, ·a, aa each have probability 1/4
        let out = ctc_loss(&t(2, 2, vec![0.0; 4]), &[0], 1).unwrap();
        assert!((out.loss - 0.287682072451781).abs() < 1e-12);
    }

    #[test]
    fn empty_label_is_all_blank() {
        let out = ctc_loss(&t(3, 2, vec![0.0; 6]), &[], 1).unwrap();
        assert!((out.loss - 3.0 * 2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn infeasible_and_invalid_labels() {
        let logits = t(2, 3, vec![0.0; 6]);
        assert!(matches!(
            ctc_loss(&logits, &[0, 0], 2),
            Err(RecognizerError::InfeasibleLabel { required: 3, .. })
        ));
        assert!(ctc_loss(&logits, &[0, 1], 2).is_ok());
        assert!(matches!(ctc_loss(&logits, &[2], 2), Err(RecognizerError::InvalidLabel(_))));
        assert!(matches!(ctc_loss(&logits, &[5], 2), Err(RecognizerError::InvalidLabel(_))));
    }

    #[test]
    fn gradient_rows_sum_to_zero() {
        let logits = t(4, 3, (0..12).map(|i| (i as f64 * 0.37).sin()).collect());
        let out = ctc_loss(&logits, &[0, 1], 2).unwrap();
        for row in out.grad.data().chunks(3) {
            assert!(row.iter().sum::<f64>().abs() < 1e-12);
        }
    }

    #[test]
    fn huge_logits_stay_finite() {
        let logits = t(3, 3, vec![500.0, -500.0, 0.0, -500.0, 500.0, 0.0, 0.0, 0.0, 500.0]);
        let out = ctc_loss(&logits, &[1, 0], 2).unwrap();
        assert!(out.loss.is_finite());
        assert!(out.grad.all_finite());
    }
}
