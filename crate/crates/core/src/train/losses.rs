//! Scalar reference forms of the training losses. The trainer builds the
//! same quantities on the tape; these are used for logging and testing.

use crate::error::{Error, Result};
use crate::nn::PROB_EPS;

fn clamp_prob(p: f64) -> f64 {
    p.clamp(PROB_EPS, 1.0 - PROB_EPS)
}

/// Squared L2 distance summed over all steps and both coordinates.
pub fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Mean over steps of the per-step Euclidean distance; `a`, `b` are
/// flattened `(x, y)` pairs.
pub fn mean_step_l2(a: &[f64], b: &[f64]) -> f64 {
    let steps = a.len() / 2;
    (0..steps)
        .map(|t| (a[2 * t] - b[2 * t]).hypot(a[2 * t + 1] - b[2 * t + 1]))
        .sum::<f64>()
        / steps.max(1) as f64
}

/// Per-generator `(1/l) Σ_i exp(−‖Ŷ_i − Y‖² / 2σ)`. `samples[g]` holds
/// the `l` flattened samples of generator `g`.
pub fn pm_likelihood(y: &[f64], samples: &[Vec<Vec<f64>>], sigma: f64) -> Result<Vec<f64>> {
    Ok(pm_log_likelihood(y, samples, sigma)?
        .into_iter()
        .map(f64::exp)
        .collect())
}

/// Natural log of [`pm_likelihood`], computed without underflow.
pub fn pm_log_likelihood(y: &[f64], samples: &[Vec<Vec<f64>>], sigma: f64) -> Result<Vec<f64>> {
    if !(sigma > 0.0) {
        return Err(Error::invalid(format!(
            "sigma must be positive, got {sigma}"
        )));
    }
    samples
        .iter()
        .map(|per_gen| {
            if per_gen.is_empty() {
                return Err(Error::invalid("each generator needs at least one sample"));
            }
            let logs: Vec<f64> = per_gen
                .iter()
                .map(|s| {
                    if s.len() != y.len() || s.iter().any(|v| !v.is_finite()) {
                        return Err(Error::NonFinite("generator sample".into()));
                    }
                    Ok(-squared_distance(s, y) / (2.0 * sigma))
                })
                .collect::<Result<_>>()?;
            let max = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let sum: f64 = logs.iter().map(|v| (v - max).exp()).sum();
            Ok(max + (sum / per_gen.len() as f64).ln())
        })
        .collect()
}

/// Bayes posterior under a uniform prior. All-zero likelihoods fall back to
/// the uniform posterior.
pub fn pm_posterior(likelihoods: &[f64]) -> Result<Vec<f64>> {
    if likelihoods.is_empty() || likelihoods.iter().any(|&l| !(l >= 0.0) || !l.is_finite()) {
        return Err(Error::invalid(
            "likelihoods must be finite and non-negative",
        ));
    }
    let total: f64 = likelihoods.iter().sum();
    if total == 0.0 {
        log::warn!("all generator likelihoods are zero; using a uniform posterior");
        return Ok(vec![1.0 / likelihoods.len() as f64; likelihoods.len()]);
    }
    Ok(likelihoods.iter().map(|l| l / total).collect())
}

/// Posterior from log-likelihoods (a softmax), used in training because the
/// likelihoods themselves underflow for distant samples.
pub fn pm_posterior_from_log(log_likelihoods: &[f64]) -> Result<Vec<f64>> {
    crate::nn::softmax(log_likelihoods)
}

/// Cross entropy `−Σ p_g ln π_g` with `π` clamped away from zero.
pub fn pm_loss(posterior: &[f64], pi: &[f64]) -> Result<f64> {
    if posterior.len() != pi.len() {
        return Err(Error::shape("pm_loss", &[posterior.len()], &[pi.len()]));
    }
    Ok(posterior
        .iter()
        .zip(pi)
        .filter(|(p, _)| **p > 0.0)
        .map(|(p, q)| -p * q.max(PROB_EPS).ln())
        .sum())
}

/// Minimum over candidates of the mean per-step L2 distance, with the
/// index of the minimising candidate (first on ties) and its generator.
pub fn best_of_many_loss(
    y: &[f64],
    predictions: &[&[f64]],
    generators: &[usize],
) -> Result<(f64, usize, usize)> {
    if predictions.is_empty() || predictions.len() != generators.len() {
        return Err(Error::invalid(
            "best-of-many needs one generator id per prediction",
        ));
    }
    let mut best = (f64::INFINITY, 0);
    for (j, p) in predictions.iter().enumerate() {
        if p.len() != y.len() {
            return Err(Error::shape("best_of_many_loss", &[p.len()], &[y.len()]));
        }
        let d = mean_step_l2(p, y);
        if d < best.0 {
            best = (d, j);
        }
    }
    Ok((best.0, best.1, generators[best.1]))
}

/// `−mean ln D(real) − mean ln(1 − D(fake))`.
pub fn discriminator_loss(real: &[f64], fake: &[f64]) -> f64 {
    let r: f64 = real.iter().map(|&d| -clamp_prob(d).ln()).sum::<f64>() / real.len().max(1) as f64;
    let f: f64 = fake
        .iter()
        .map(|&d| -(1.0 - clamp_prob(d)).ln())
        .sum::<f64>()
        / fake.len().max(1) as f64;
    r + f
}

/// Mean cross entropy of class distributions against integer labels.
pub fn classifier_step_loss(probs: &[Vec<f64>], labels: &[usize]) -> Result<f64> {
    if probs.len() != labels.len() {
        return Err(Error::shape(
            "classifier_step_loss",
            &[probs.len()],
            &[labels.len()],
        ));
    }
    let mut total = 0.0;
    for (p, &l) in probs.iter().zip(labels) {
        let pl = p
            .get(l)
            .ok_or_else(|| Error::invalid(format!("label {l} out of range")))?;
        total -= clamp_prob(*pl).ln();
    }
    Ok(total / probs.len().max(1) as f64)
}

/// Non-saturating adversarial term plus weighted classification and
/// best-of-many terms.
pub fn generator_step_loss(
    fake: &[f64],
    class_probs: &[Vec<f64>],
    labels: &[usize],
    bom: f64,
    lambda_cl: f64,
    lambda_traj: f64,
) -> Result<f64> {
    let adv = fake.iter().map(|&d| -clamp_prob(d).ln()).sum::<f64>() / fake.len().max(1) as f64;
    let cl = if lambda_cl == 0.0 {
        0.0
    } else {
        classifier_step_loss(class_probs, labels)?
    };
    Ok(adv + lambda_cl * cl + lambda_traj * bom)
}

#[cfg(test)]
mod tests {
    use super::*;

    const LN2: f64 = std::f64::consts::LN_2;

    #[test]
    fn likelihood_examples() {
        let y = vec![0.0; 24];
        let exact = vec![vec![y.clone()]];
        assert_eq!(pm_likelihood(&y, &exact, 1.0).unwrap(), vec![1.0]);
        let mut off = y.clone();
        off[0] = 1.0;
        off[1] = 1.0;
        let l = pm_likelihood(&y, &[vec![off]], 1.0).unwrap()[0];
        assert!((l - (-1.0f64).exp()).abs() < 1e-15);
        let mut prev = f64::INFINITY;
        for k in 0..10 {
            let mut s = y.clone();
            s[5] = k as f64 * 0.3;
            let l = pm_likelihood(&y, &[vec![s]], 1.0).unwrap()[0];
            assert!(l < prev || k == 0);
            prev = l;
        }
        let mut bad = y.clone();
        bad[3] = f64::NAN;
        assert!(pm_likelihood(&y, &[vec![bad]], 1.0).is_err());
    }

    #[test]
    fn posterior_examples() {
        assert_eq!(pm_posterior(&[0.3, 0.3]).unwrap(), vec![0.5, 0.5]);
        let p = pm_posterior(&[1.0, (-1.0f64).exp()]).unwrap();
        let e = (-1.0f64).exp();
        assert!((p[0] - 1.0 / (1.0 + e)).abs() < 1e-15 && (p[1] - e / (1.0 + e)).abs() < 1e-15);
        assert!((p[0] - 0.7311).abs() < 1e-4 && (p[1] - 0.2689).abs() < 1e-4);
        let scaled = pm_posterior(&[7.0, 7.0 * e]).unwrap();
        assert!((scaled[0] - p[0]).abs() < 1e-15);
        assert_eq!(pm_posterior(&[0.0, 0.0, 0.0, 0.0]).unwrap(), vec![0.25; 4]);
        let from_log = pm_posterior_from_log(&[0.0, -1.0]).unwrap();
        assert!((from_log[0] - p[0]).abs() < 1e-15);
    }

    #[test]
    fn pm_loss_examples() {
        assert_eq!(pm_loss(&[1.0, 0.0], &[1.0, 0.0]).unwrap(), 0.0);
        assert!((pm_loss(&[0.5, 0.5], &[0.5, 0.5]).unwrap() - LN2).abs() < 1e-15);
        // Gibbs: over a grid of π, the minimum sits at π = p.
        let p = [0.3, 0.7];
        let best = (1..100)
            .map(|k| k as f64 / 100.0)
            .min_by(|a, b| {
                pm_loss(&p, &[*a, 1.0 - a])
                    .unwrap()
                    .total_cmp(&pm_loss(&p, &[*b, 1.0 - b]).unwrap())
            })
            .unwrap();
        assert!((best - 0.3).abs() < 1e-12);
    }

    #[test]
    fn best_of_many_examples() {
        let y = vec![0.0; 4];
        assert_eq!(best_of_many_loss(&y, &[&y], &[3]).unwrap(), (0.0, 0, 3));
        let a = [2.0, 0.0, 2.0, 0.0];
        let b = [0.5, 0.0, 0.5, 0.0];
        let c = [1.0, 0.0, 1.0, 0.0];
        let (loss, j, g) = best_of_many_loss(&y, &[&a, &b, &c], &[0, 4, 1]).unwrap();
        assert_eq!((loss, j, g), (0.5, 1, 4));
        let worse = [9.0, 0.0, 9.0, 0.0];
        let (more, _, _) = best_of_many_loss(&y, &[&a, &b, &c, &worse], &[0, 4, 1, 2]).unwrap();
        assert!(more <= loss);
    }

    #[test]
    fn adversarial_examples() {
        assert!((discriminator_loss(&[0.5], &[0.5]) - 2.0 * LN2).abs() < 1e-15);
        assert!(discriminator_loss(&[1.0], &[0.0]) < 1e-10);
        assert!(discriminator_loss(&[0.0, 0.3], &[1.0, 0.9]) >= 0.0);
        let g = generator_step_loss(&[0.5], &[vec![0.5, 0.5]], &[1], 0.0, 1.0, 1.0).unwrap();
        assert!((g - 2.0 * LN2).abs() < 1e-15);
        let plain = generator_step_loss(&[0.3], &[vec![0.5, 0.5]], &[1], 7.0, 0.0, 0.0).unwrap();
        assert!((plain + 0.3f64.ln()).abs() < 1e-15);
        let perfect = generator_step_loss(&[0.5], &[vec![0.0, 1.0]], &[1], 0.0, 1.0, 0.0).unwrap();
        assert!((perfect - LN2).abs() < 1e-10);
    }

    #[test]
    fn classifier_examples() {
        let u = vec![vec![0.25; 4]; 3];
        assert!((classifier_step_loss(&u, &[0, 1, 3]).unwrap() - 4f64.ln()).abs() < 1e-15);
        let perfect = vec![vec![0.0, 1.0], vec![1.0, 0.0]];
        assert!(classifier_step_loss(&perfect, &[1, 0]).unwrap() < 1e-10);
        let p = vec![vec![0.2, 0.8], vec![0.6, 0.4], vec![0.9, 0.1]];
        let a = classifier_step_loss(&p, &[0, 1, 0]).unwrap();
        let rev: Vec<_> = p.iter().rev().cloned().collect();
        let b = classifier_step_loss(&rev, &[0, 1, 0]).unwrap();
        assert!((a - b).abs() < 1e-15);
    }
}
