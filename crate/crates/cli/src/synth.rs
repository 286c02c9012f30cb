//! Synthetic data `f = K u* ⊙ η` for the three noise models.

use bregest::model::FidelityKind;
use bregest::rng::StreamSeed;
use rand::Rng;
use rand_distr::{Distribution, Exp1, Poisson, StandardNormal};

use crate::config::ModelConfig;
use crate::error::CliError;

/// Draws data from the model's synthetic recipe.
///
/// Gaussian noise adds `σ·N(0, 1)` and Laplace noise adds `b·(X − Y)` with
/// `X, Y ~ Exp(1)`. Poisson data are `Poisson((K u*)_i)` counts.
pub fn synthesize_data(model: &ModelConfig, seed: StreamSeed) -> Result<Vec<f64>, CliError> {
    let recipe = model
        .synthetic
        .as_ref()
        .ok_or_else(|| CliError::Invalid(vec!["model.synthetic is missing".into()]))?;
    let op = model.operator.build().map_err(CliError::Invalid)?;
    let clean = op.apply(&recipe.ground_truth)?;
    let level = recipe.noise_level;
    let mut rng = seed.rng();
    match recipe.noise.unwrap_or(model.fidelity) {
        FidelityKind::Gaussian => Ok(clean
            .iter()
            .map(|x| x + level * rng.sample::<f64, _>(StandardNormal))
            .collect()),
        FidelityKind::Laplace => Ok(clean
            .iter()
            .map(|x| {
                let a: f64 = rng.sample(Exp1);
                let b: f64 = rng.sample(Exp1);
                x + level * (a - b)
            })
            .collect()),
        FidelityKind::Poisson => clean
            .iter()
            .enumerate()
            .map(|(i, &rate)| {
                if rate < 0.0 {
                    Err(CliError::Invalid(vec![format!(
                        "Poisson rate (K u*)_{i} = {rate} is negative"
                    )]))
                } else if rate == 0.0 {
                    Ok(0.0)
                } else {
                    let dist = Poisson::new(rate).map_err(|e| {
                        CliError::Invalid(vec![format!("Poisson rate (K u*)_{i}: {e}")])
                    })?;
                    Ok(dist.sample(&mut rng))
                }
            })
            .collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::{OperatorConfig, OperatorKind, PriorConfig, PriorName, SyntheticRecipe};

    fn model(kind: FidelityKind, truth: Vec<f64>, level: f64) -> ModelConfig {
        ModelConfig {
            operator: OperatorConfig {
                kind: OperatorKind::Identity,
                dim: Some(truth.len()),
                kernel: None,
                matrix: None,
            },
            fidelity: kind,
            data: None,
            synthetic: Some(SyntheticRecipe {
                ground_truth: truth,
                noise: None,
                noise_level: level,
            }),
            prior: PriorConfig {
                kind: PriorName::Tikhonov,
                delta: None,
            },
            alpha: 1.0,
            poisson_floor: None,
        }
    }

    #[test]
    fn zero_noise_reproduces_the_clean_image() {
        let m = model(FidelityKind::Gaussian, vec![1.5, -2.0, 0.25], 0.0);
        let f = synthesize_data(&m, StreamSeed::new(1, 0)).unwrap();
        assert_eq!(f, vec![1.5, -2.0, 0.25]);
    }

    #[test]
    fn poisson_counts() {
        let m = model(FidelityKind::Poisson, vec![0.0, 3.0, 0.0], 0.0);
        let f = synthesize_data(&m, StreamSeed::new(2, 0)).unwrap();
        assert_eq!((f[0], f[2]), (0.0, 0.0));
        assert!(f[1] >= 0.0 && f[1].fract() == 0.0);
        let bad = model(FidelityKind::Poisson, vec![1.0, -0.5], 0.0);
        assert!(matches!(
            synthesize_data(&bad, StreamSeed::new(2, 0)),
            Err(CliError::Invalid(_))
        ));
    }

    #[test]
    fn deterministic_given_seed() {
        let m = model(FidelityKind::Laplace, vec![1.0; 8], 0.7);
        let a = synthesize_data(&m, StreamSeed::new(9, 3)).unwrap();
        assert_eq!(a, synthesize_data(&m, StreamSeed::new(9, 3)).unwrap());
        assert_ne!(a, synthesize_data(&m, StreamSeed::new(9, 4)).unwrap());
    }

    #[test]
    fn noise_has_zero_mean() {
        const N: usize = 100_000;
        for (kind, level, var) in [
            (FidelityKind::Gaussian, 0.5, 0.25),
            // Laplace(0, b) has variance 2b²
            (FidelityKind::Laplace, 0.5, 0.5),
        ] {
            let m = model(kind, vec![0.0; N], level);
            let f = synthesize_data(&m, StreamSeed::new(4, 0)).unwrap();
            let mean = f.iter().sum::<f64>() / N as f64;
            let stderr = (var / N as f64).sqrt();
            assert!(mean.abs() <= 3.0 * stderr, "{kind:?}: {mean}");
            let emp_var = f.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (N - 1) as f64;
            assert!((emp_var - var).abs() < 0.05 * var, "{kind:?}: {emp_var}");
        }
    }
}
