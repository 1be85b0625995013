use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// Max-subtracted softmax.
pub fn softmax(logits: &[f64]) -> Result<Vec<f64>> {
    if logits.is_empty() {
        return Err(Error::shape("softmax of an empty vector"));
    }
    if logits.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("softmax input contains non-finite entries".into()));
    }
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|v| (v - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    Ok(exps.into_iter().map(|e| e / total).collect())
}

pub(crate) fn log_sum_exp(logits: &[f64]) -> f64 {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + logits.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Mean negative log-probability of the true class over a batch of probability rows.
pub fn cross_entropy(probs: &Matrix, labels: &[usize]) -> Result<f64> {
    if probs.rows() != labels.len() {
        return Err(Error::shape(format!(
            "{} probability rows but {} labels",
            probs.rows(),
            labels.len()
        )));
    }
    if labels.is_empty() {
        return Err(Error::shape("cross-entropy of an empty batch"));
    }
    let mut total = 0.0;
    for (row, &y) in probs.iter_rows().zip(labels) {
        let p = *row.get(y).ok_or_else(|| {
            Error::Index(format!("label {y} outside {} classes", row.len()))
        })?;
        total -= p.ln();
    }
    // -ln(1) is -0.0; normalize the sign
    Ok((total / labels.len() as f64).max(0.0))
}

/// Cross-entropy computed directly from logits via log-sum-exp.
pub fn cross_entropy_logits(logits: &Matrix, labels: &[usize]) -> Result<f64> {
    if logits.rows() != labels.len() {
        return Err(Error::shape("logit rows and labels differ in count"));
    }
    if labels.is_empty() {
        return Err(Error::shape("cross-entropy of an empty batch"));
    }
    let mut total = 0.0;
    for (row, &y) in logits.iter_rows().zip(labels) {
        if y >= row.len() {
            return Err(Error::Index(format!("label {y} outside {} classes", row.len())));
        }
        total += log_sum_exp(row) - row[y];
    }
    Ok((total / labels.len() as f64).max(0.0))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn softmax_of_zeros_is_uniform() {
        assert_eq!(softmax(&[0.0, 0.0]).unwrap(), vec![0.5, 0.5]);
    }

    #[test]
    fn softmax_is_shift_invariant() {
        for c in [-700.0, -3.5, 0.0, 12.0, 800.0] {
            let p = softmax(&[c; 4]).unwrap();
            for v in p {
                assert!((v - 0.25).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn softmax_of_log_counts() {
        let p = softmax(&[1f64.ln(), 2f64.ln(), 3f64.ln()]).unwrap();
        // direct exponentiation: e^{ln k} = k, normalized by 6
        let direct: Vec<f64> = [1f64, 2.0, 3.0].iter().map(|k| k.ln().exp() / 6.0).collect();
        for (a, b) in p.iter().zip(&direct) {
            assert!((a - b).abs() < 1e-15);
        }
        assert!((p[0] - 1.0 / 6.0).abs() < 1e-15);
        assert!((p[2] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn softmax_rejects_non_finite() {
        assert!(matches!(softmax(&[0.0, f64::NAN]), Err(Error::Numeric(_))));
        assert!(matches!(softmax(&[f64::INFINITY]), Err(Error::Numeric(_))));
    }

    #[test]
    fn cross_entropy_one_hot_is_zero() {
        let p = Matrix::from_rows(&[[0.0, 1.0, 0.0]]).unwrap();
        assert_eq!(cross_entropy(&p, &[1]).unwrap(), 0.0);
    }

    #[test]
    fn cross_entropy_uniform_is_ln_k() {
        let p = Matrix::from_rows(&[[0.2; 5], [0.2; 5]]).unwrap();
        let l = cross_entropy(&p, &[0, 4]).unwrap();
        assert!((l - 5f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn cross_entropy_two_row_batch() {
        let p = Matrix::from_rows(&[[0.9, 0.1], [0.2, 0.8]]).unwrap();
        let expected = -(0.9f64.ln() + 0.8f64.ln()) / 2.0;
        assert!((cross_entropy(&p, &[0, 1]).unwrap() - expected).abs() < 1e-15);
    }

    #[test]
    fn cross_entropy_label_out_of_range() {
        let p = Matrix::from_rows(&[[0.5, 0.5]]).unwrap();
        assert!(matches!(cross_entropy(&p, &[2]), Err(Error::Index(_))));
        assert!(matches!(
            cross_entropy_logits(&p, &[7]),
            Err(Error::Index(_))
        ));
    }

    #[test]
    fn logits_route_agrees_with_probability_route() {
        let logits = Matrix::from_rows(&[[0.3, -1.2, 2.0], [4.0, 0.0, -0.5]]).unwrap();
        let probs: Vec<Vec<f64>> = logits.iter_rows().map(|r| softmax(r).unwrap()).collect();
        let probs = Matrix::from_rows(&probs).unwrap();
        let a = cross_entropy(&probs, &[2, 1]).unwrap();
        let b = cross_entropy_logits(&logits, &[2, 1]).unwrap();
        assert!((a - b).abs() < 1e-12);
    }
}
