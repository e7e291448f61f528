//! Class-weighted cross-entropy over softmax outputs.

use crate::{NnError, Result};

/// Added inside the logarithm so a zero probability yields a finite loss.
pub const LOG_EPSILON: f64 = 1e-12;

fn validate(probabilities: &[f64], target: usize) -> Result<()> {
    if target >= probabilities.len() {
        return Err(NnError::InvalidDistribution(format!(
            "target {target} outside {} classes",
            probabilities.len()
        )));
    }
    if probabilities.iter().any(|p| !p.is_finite() || *p < 0.0) {
        return Err(NnError::InvalidDistribution(
            "negative or non-finite probability".into(),
        ));
    }
    let sum: f64 = probabilities.iter().sum();
    if (sum - 1.0).abs() > 1e-6 {
        return Err(NnError::InvalidDistribution(format!("sums to {sum}")));
    }
    Ok(())
}

/// `-weight · ln(p[target] + ε)`
pub fn weighted_cross_entropy(probabilities: &[f64], target: usize, weight: f64) -> Result<f64> {
    validate(probabilities, target)?;
    Ok(-weight * (probabilities[target] + LOG_EPSILON).ln())
}

/// Exact gradient of [`weighted_cross_entropy`] with respect to the logits
/// that produced `probabilities` through softmax.
pub fn cross_entropy_logit_grad(
    probabilities: &[f64],
    target: usize,
    weight: f64,
) -> Result<Vec<f64>> {
    validate(probabilities, target)?;
    let pt = probabilities[target];
    let scale = -weight * pt / (pt + LOG_EPSILON);
    Ok(probabilities
        .iter()
        .enumerate()
        .map(|(j, &pj)| {
            let delta = if j == target { 1.0 } else { 0.0 };
            scale * (delta - pj)
        })
        .collect())
}

/// Gradient of `p[class]` with respect to the logits.
pub fn probability_logit_grad(probabilities: &[f64], class: usize) -> Vec<f64> {
    let pc = probabilities[class];
    probabilities
        .iter()
        .enumerate()
        .map(|(j, &pj)| pc * (if j == class { 1.0 } else { 0.0 } - pj))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::activation::softmax;

    #[test]
    fn certain_prediction_has_zero_loss() {
        let l = weighted_cross_entropy(&[0.0, 1.0], 1, 1.0).unwrap();
        assert!(l.abs() < 1e-11);
    }

    #[test]
    fn uniform_case() {
        let p = vec![1.0 / 27.0; 27];
        let l = weighted_cross_entropy(&p, 3, 1.0).unwrap();
        assert!((l - 27f64.ln()).abs() < 1e-9);
        assert!((l - 3.2958).abs() < 1e-4);
    }

    #[test]
    fn weight_scales_linearly() {
        let p = [0.2, 0.5, 0.3];
        let base = weighted_cross_entropy(&p, 0, 1.0).unwrap();
        let w = 3677.0 / 20.0;
        let scaled = weighted_cross_entropy(&p, 0, w).unwrap();
        assert!((scaled - w * base).abs() < 1e-12 * scaled.abs());
    }

    #[test]
    fn invalid_distribution() {
        assert!(weighted_cross_entropy(&[0.5, 0.6], 0, 1.0).is_err());
        assert!(weighted_cross_entropy(&[0.5, 0.5], 2, 1.0).is_err());
        assert!(weighted_cross_entropy(&[-0.5, 1.5], 0, 1.0).is_err());
    }

    #[test]
    fn logit_gradient_matches_finite_differences() {
        let z = [0.3, -1.2, 2.0, 0.1];
        let h = 1e-6;
        let g = cross_entropy_logit_grad(&softmax(&z).unwrap(), 2, 1.7).unwrap();
        for j in 0..z.len() {
            let mut zp = z;
            let mut zm = z;
            zp[j] += h;
            zm[j] -= h;
            let lp = weighted_cross_entropy(&softmax(&zp).unwrap(), 2, 1.7).unwrap();
            let lm = weighted_cross_entropy(&softmax(&zm).unwrap(), 2, 1.7).unwrap();
            let fd = (lp - lm) / (2.0 * h);
            assert!((fd - g[j]).abs() < 1e-8, "{j}: {fd} vs {}", g[j]);
        }
    }
}
