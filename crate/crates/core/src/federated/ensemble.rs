use serde::{Deserialize, Serialize};

use super::FederatedError;
use crate::nn::{argmax_rows, softmax, Model};
use crate::tensor::Tensor;

/// Lower clamp on probabilities before taking logarithms.
pub const PROB_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum EnsembleScheme {
    /// Argmax of the weighted mean of member softmax outputs.
    WeightedSoftmax { weights: Vec<f64> },
    /// Modal member argmax; ties go to the lowest class index.
    MajorityVote,
    /// Product of member posteriors divided by `prior^(K-1)`.
    NaiveBayes { priors: Vec<f64> },
}

impl EnsembleScheme {
    pub fn name(&self) -> &'static str {
        match self {
            EnsembleScheme::WeightedSoftmax { .. } => "weighted_softmax",
            EnsembleScheme::MajorityVote => "majority_vote",
            EnsembleScheme::NaiveBayes { .. } => "naive_bayes",
        }
    }

    pub fn uniform_softmax(k: usize) -> Self {
        EnsembleScheme::WeightedSoftmax { weights: vec![1.0 / k as f64; k] }
    }
}

fn argmax(row: &[f64]) -> usize {
    argmax_rows(&Tensor::new(vec![1, row.len()], row.to_vec()).expect("row"))[0]
}

/// Combined class predictions of `models` on `batch`.
pub fn ensemble_predict(
    models: &[&Model],
    scheme: &EnsembleScheme,
    batch: &Tensor,
) -> Result<Vec<usize>, FederatedError> {
    let classes: Vec<usize> = models.iter().map(|m| m.spec.num_classes).collect();
    let Some(&k) = classes.first() else {
        return Err(FederatedError::InvalidConfig("empty ensemble".into()));
    };
    if classes.iter().any(|&c| c != k) {
        return Err(FederatedError::ClassCountMismatch(classes));
    }
    let logits = models.iter().map(|m| m.forward(batch)).collect::<Result<Vec<_>, _>>()?;
    let n = batch.shape()[0];
    let mut out = Vec::with_capacity(n);
    match scheme {
        EnsembleScheme::WeightedSoftmax { weights } => {
            if weights.len() != models.len() || weights.iter().any(|w| !(*w >= 0.0)) {
                return Err(FederatedError::InvalidConfig(format!("need {} nonnegative weights", models.len())));
            }
            if (weights.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
                return Err(FederatedError::InvalidConfig("weights must sum to 1".into()));
            }
            let probs: Vec<Tensor> = logits.iter().map(softmax).collect();
            for i in 0..n {
                let mut acc = vec![0.0; k];
                for (p, w) in probs.iter().zip(weights) {
                    for (a, v) in acc.iter_mut().zip(&p.data()[i * k..(i + 1) * k]) {
                        *a += w * v;
                    }
                }
                out.push(argmax(&acc));
            }
        }
        EnsembleScheme::MajorityVote => {
            let votes: Vec<Vec<usize>> = logits.iter().map(argmax_rows).collect();
            for i in 0..n {
                let mut counts = vec![0.0; k];
                for v in &votes {
                    counts[v[i]] += 1.0;
                }
                out.push(argmax(&counts));
            }
        }
        EnsembleScheme::NaiveBayes { priors } => {
            if priors.len() != k {
                return Err(FederatedError::ClassCountMismatch(vec![k, priors.len()]));
            }
            let penalty = (models.len() - 1) as f64;
            let probs: Vec<Tensor> = logits.iter().map(softmax).collect();
            for i in 0..n {
                let mut score: Vec<f64> = priors.iter().map(|p| -penalty * p.clamp(PROB_FLOOR, 1.0).ln()).collect();
                for p in &probs {
                    for (s, v) in score.iter_mut().zip(&p.data()[i * k..(i + 1) * k]) {
                        *s += v.clamp(PROB_FLOOR, 1.0).ln();
                    }
                }
                out.push(argmax(&score));
            }
        }
    }
    Ok(out)
}
