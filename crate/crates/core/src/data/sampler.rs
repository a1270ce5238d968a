use rand::distributions::{Distribution, WeightedIndex};
use rand::Rng;

use super::clip::Label;
use crate::error::{Error, Result};

/// Per-entry weights `1 / count(class of entry)`, so each class present
/// carries total weight 1. A single-class split gets uniform weights `1/n`.
pub fn class_balanced_weights(labels: &[Label]) -> Result<Vec<f64>> {
    if labels.is_empty() {
        return Err(Error::InvalidArgument("weighted sampler over an empty split".into()));
    }
    let fakes = labels.iter().filter(|l| **l == Label::Fake).count();
    let reals = labels.len() - fakes;
    if fakes == 0 || reals == 0 {
        log::warn!("split contains a single class ({} entries); using uniform sampling weights", labels.len());
        return Ok(vec![1.0 / labels.len() as f64; labels.len()]);
    }
    Ok(labels
        .iter()
        .map(|l| match l {
            Label::Real => 1.0 / reals as f64,
            Label::Fake => 1.0 / fakes as f64,
        })
        .collect())
}

/// Draws entry indices with replacement in proportion to the weights.
pub struct WeightedSampler {
    dist: WeightedIndex<f64>,
}

impl WeightedSampler {
    pub fn new(weights: &[f64]) -> Result<Self> {
        let dist = WeightedIndex::new(weights).map_err(|e| Error::InvalidArgument(format!("sampler weights: {e}")))?;
        Ok(Self { dist })
    }

    pub fn draw<R: Rng>(&self, rng: &mut R) -> usize {
        self.dist.sample(rng)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn imbalanced_and_balanced() {
        use Label::*;
        let w = class_balanced_weights(&[Real, Real, Real, Fake]).unwrap();
        assert_eq!(w, vec![1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0, 1.0]);
        let w = class_balanced_weights(&[Real, Fake, Real, Fake]).unwrap();
        assert_eq!(w, vec![0.5; 4]);
        assert!((w.iter().sum::<f64>() - 2.0).abs() < 1e-12);
    }

    #[test]
    fn single_class_is_uniform() {
        let w = class_balanced_weights(&[Label::Real; 5]).unwrap();
        assert_eq!(w, vec![0.2; 5]);
    }

    #[test]
    fn empirical_ratio_is_balanced() {
        use Label::*;
        let labels = [Real, Real, Real, Fake];
        let sampler = WeightedSampler::new(&class_balanced_weights(&labels).unwrap()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 100_000;
        let fakes = (0..n).filter(|_| labels[sampler.draw(&mut rng)] == Fake).count();
        let frac = fakes as f64 / n as f64;
        assert!((frac - 0.5).abs() < 0.02, "fake fraction {frac}");
    }
}
