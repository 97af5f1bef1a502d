use rand::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QuantMode {
    /// Additive uniform noise on [-0.5, 0.5).
    Train,
    /// Rounding of the mean-removed value, ties away from zero.
    Infer,
}

pub fn round_half_away(v: f32) -> f32 {
    v.round()
}

/// Quantizes `values` around `mean` (same length, or a single shared mean).
pub fn quantize(values: &[f32], mean: &[f32], mode: QuantMode, rng: &mut impl Rng) -> Vec<f32> {
    assert!(mean.len() == values.len() || mean.len() == 1);
    let mu = |i: usize| if mean.len() == 1 { mean[0] } else { mean[i] };
    match mode {
        QuantMode::Infer => values
            .iter()
            .enumerate()
            .map(|(i, &v)| round_half_away(v - mu(i)) + mu(i))
            .collect(),
        QuantMode::Train => values
            .iter()
            .map(|&v| v + rng.random_range(-0.5f32..0.5))
            .collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn rounding_examples() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        let q = quantize(&[1.4], &[0.2], QuantMode::Infer, &mut rng);
        assert!((q[0] - 1.2).abs() < 1e-6);
        assert_eq!(quantize(&[-0.5], &[0.0], QuantMode::Infer, &mut rng), vec![-1.0]);
        assert_eq!(quantize(&[0.5, 2.5], &[0.0], QuantMode::Infer, &mut rng), vec![1.0, 3.0]);
    }

    // Monte Carlo oracle: the noise is zero-mean with variance 1/12.
    #[test]
    fn training_noise_is_centered() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(42);
        let values = vec![0.25f32; 1_000_000];
        let q = quantize(&values, &[0.0], QuantMode::Train, &mut rng);
        let n = q.len() as f64;
        let mean: f64 = q.iter().zip(&values).map(|(a, b)| (a - b) as f64).sum::<f64>() / n;
        let var: f64 = q.iter().zip(&values).map(|(a, b)| ((a - b) as f64).powi(2)).sum::<f64>() / n;
        assert!(mean.abs() < 0.002, "mean {mean}");
        assert!((var - 1.0 / 12.0).abs() < 1e-3);
        assert!(q.iter().zip(&values).all(|(a, b)| (a - b) >= -0.5 && (a - b) < 0.5));
    }
}
