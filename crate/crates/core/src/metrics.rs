//! Classification metrics.

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum MetricsError {
    #[error("{truth} true labels but {pred} predictions")]
    LengthMismatch { truth: usize, pred: usize },
    #[error("label {label} out of range for {num_classes} classes")]
    LabelOutOfRange { label: usize, num_classes: usize },
}

/// `(num_classes x num_classes)` counts, rows indexed by the true class.
pub fn confusion_matrix(
    y_true: &[usize],
    y_pred: &[usize],
    num_classes: usize,
) -> Result<Vec<Vec<usize>>, MetricsError> {
    if y_true.len() != y_pred.len() {
        return Err(MetricsError::LengthMismatch { truth: y_true.len(), pred: y_pred.len() });
    }
    let mut m = vec![vec![0usize; num_classes]; num_classes];
    for (&t, &p) in y_true.iter().zip(y_pred) {
        if let Some(&label) = [t, p].iter().find(|&&l| l >= num_classes) {
            return Err(MetricsError::LabelOutOfRange { label, num_classes });
        }
        m[t][p] += 1;
    }
    Ok(m)
}

/// Support-weighted mean of per-class F1 scores. Classes absent from
/// `y_true` carry no weight; a class with zero precision and recall scores 0.
/// An empty input scores 0.
pub fn weighted_f1(y_true: &[usize], y_pred: &[usize], num_classes: usize) -> Result<f64, MetricsError> {
    let m = confusion_matrix(y_true, y_pred, num_classes)?;
    let total = y_true.len();
    if total == 0 {
        return Ok(0.0);
    }
    let mut score = 0.0;
    for c in 0..num_classes {
        let support: usize = m[c].iter().sum();
        if support == 0 {
            continue;
        }
        let tp = m[c][c] as f64;
        let predicted: usize = m.iter().map(|row| row[c]).sum();
        let precision = if predicted == 0 { 0.0 } else { tp / predicted as f64 };
        let recall = tp / support as f64;
        let f1 = if precision + recall == 0.0 { 0.0 } else { 2.0 * precision * recall / (precision + recall) };
        score += support as f64 / total as f64 * f1;
    }
    Ok(score)
}

/// Weighted F1 of always predicting the most frequent true class (ties to
/// the lowest index).
pub fn majority_class_f1(y_true: &[usize], num_classes: usize) -> Result<f64, MetricsError> {
    let mut counts = vec![0usize; num_classes];
    for &t in y_true {
        if t >= num_classes {
            return Err(MetricsError::LabelOutOfRange { label: t, num_classes });
        }
        counts[t] += 1;
    }
    let majority = (0..num_classes).rev().max_by_key(|&c| counts[c]).unwrap_or(0);
    weighted_f1(y_true, &vec![majority; y_true.len()], num_classes)
}

pub fn accuracy(y_true: &[usize], y_pred: &[usize]) -> f64 {
    if y_true.is_empty() {
        return 0.0;
    }
    y_true.iter().zip(y_pred).filter(|(a, b)| a == b).count() as f64 / y_true.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect() {
        assert_eq!(weighted_f1(&[0, 1, 2, 1], &[0, 1, 2, 1], 3).unwrap(), 1.0);
    }

    #[test]
    fn hand_computed() {
        let f = weighted_f1(&[0, 0, 1], &[0, 1, 1], 2).unwrap();
        assert!((f - 2.0 / 3.0).abs() < 1e-15);
        let f = weighted_f1(&[0, 0, 1, 1], &[0, 0, 0, 0], 2).unwrap();
        assert!((f - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn zero_support_class_ignored() {
        let f = weighted_f1(&[0, 0], &[0, 0], 5).unwrap();
        assert_eq!(f, 1.0);
    }

    #[test]
    fn errors() {
        assert!(matches!(weighted_f1(&[0], &[0, 1], 2), Err(MetricsError::LengthMismatch { .. })));
        assert!(matches!(weighted_f1(&[2], &[0], 2), Err(MetricsError::LabelOutOfRange { label: 2, .. })));
    }

    #[test]
    fn majority_baseline() {
        let f = majority_class_f1(&[1, 1, 1, 0], 2).unwrap();
        // class 1: precision 3/4, recall 1 -> F1 6/7, weight 3/4
        assert!((f - 0.75 * 6.0 / 7.0).abs() < 1e-15);
    }
}
