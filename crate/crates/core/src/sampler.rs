//! Age-balanced resampling. Every image carries a weight inversely
//! proportional to the population of its age bin, so each non-empty bin is
//! drawn equally often. Draws are two-stage (bin, then member uniformly) and
//! with replacement.
//!
//! The generator is ChaCha8 seeded through `seed_from_u64`, which is
//! specified independently of platform and word size.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::{AgeLabel, Sample};
use crate::error::{Error, Result};

/// Lower edges of bins 2..=12; bin 1 is `[0, 4)` and bin 12 is `[50, ∞)`.
pub const DEFAULT_BOUNDARIES: [u32; 11] = [4, 8, 12, 16, 20, 24, 28, 32, 36, 42, 50];

#[derive(Clone, Debug, PartialEq)]
pub struct AgeBins {
    boundaries: Vec<u32>,
    members: Vec<Vec<usize>>,
    /// Normalized per-image weight factor of each bin.
    probs: Vec<f64>,
    /// Running sum of `n_i * probs[i]`, renormalized: the bin draw law.
    cumulative: Vec<f64>,
}

impl AgeBins {
    /// Bins the given ages; member lists hold positions into `ages`.
    pub fn from_ages(ages: &[AgeLabel], boundaries: &[u32]) -> Result<Self> {
        if ages.is_empty() {
            return Err(Error::Empty("cannot bin an empty sample list".into()));
        }
        if boundaries.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config(format!(
                "bin boundaries must be strictly increasing: {boundaries:?}"
            )));
        }
        let mut members = vec![Vec::new(); boundaries.len() + 1];
        for (i, a) in ages.iter().enumerate() {
            members[bin_of(a.years(), boundaries)].push(i);
        }
        let inverse: Vec<f64> = members
            .iter()
            .map(|m| if m.is_empty() { 0.0 } else { 1.0 / m.len() as f64 })
            .collect();
        let total: f64 = inverse.iter().sum();
        let probs: Vec<f64> = inverse.iter().map(|w| w / total).collect();
        let mass: Vec<f64> = members.iter().zip(&probs).map(|(m, p)| m.len() as f64 * p).collect();
        let mass_total: f64 = mass.iter().sum();
        let mut acc = 0.0;
        let cumulative = mass
            .iter()
            .map(|p| {
                acc += p / mass_total;
                acc
            })
            .collect();
        Ok(Self {
            boundaries: boundaries.to_vec(),
            members,
            probs,
            cumulative,
        })
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn boundaries(&self) -> &[u32] {
        &self.boundaries
    }

    pub fn counts(&self) -> Vec<usize> {
        self.members.iter().map(Vec::len).collect()
    }

    /// `P(i) = (1/n_i) / Σ_j (1/n_j)` over non-empty bins, zero for empty ones.
    pub fn probabilities(&self) -> &[f64] {
        &self.probs
    }

    /// Probability that a draw lands in each bin: uniform over non-empty bins.
    pub fn draw_frequencies(&self) -> Vec<f64> {
        let mut prev = 0.0;
        self.cumulative
            .iter()
            .map(|&c| {
                let f = c - prev;
                prev = c;
                f
            })
            .collect()
    }

    pub fn members(&self, bin: usize) -> &[usize] {
        &self.members[bin]
    }

    pub fn bin_of(&self, age: u32) -> usize {
        bin_of(age, &self.boundaries)
    }

    fn draw_bin<R: Rng>(&self, rng: &mut R) -> usize {
        let u: f64 = rng.random();
        let i = self.cumulative.partition_point(|&c| c <= u);
        // guard against u landing in rounding slack past the last non-empty bin
        let i = i.min(self.cumulative.len() - 1);
        if self.members[i].is_empty() {
            self.members
                .iter()
                .rposition(|m| !m.is_empty())
                .expect("at least one non-empty bin")
        } else {
            i
        }
    }

    /// Draws `batch_size` positions: bin by draw frequency, member uniformly.
    pub fn draw<R: Rng>(&self, batch_size: usize, rng: &mut R) -> Vec<usize> {
        (0..batch_size)
            .map(|_| {
                let bin = self.draw_bin(rng);
                let m = &self.members[bin];
                m[rng.random_range(0..m.len())]
            })
            .collect()
    }
}

fn bin_of(age: u32, boundaries: &[u32]) -> usize {
    boundaries.partition_point(|&b| b <= age)
}

/// Bins samples with the default boundaries.
pub fn build_bins(samples: &[&Sample]) -> Result<AgeBins> {
    let ages: Vec<AgeLabel> = samples.iter().map(|s| s.age).collect();
    AgeBins::from_ages(&ages, &DEFAULT_BOUNDARIES)
}

/// Owns the bins and the random stream for one training run.
#[derive(Clone, Debug)]
pub struct AgeBalancedSampler {
    bins: AgeBins,
    rng: ChaCha8Rng,
}

impl AgeBalancedSampler {
    pub fn new(bins: AgeBins, seed: u64) -> Self {
        Self {
            bins,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn bins(&self) -> &AgeBins {
        &self.bins
    }

    pub fn next_batch(&mut self, batch_size: usize) -> Vec<usize> {
        self.bins.draw(batch_size, &mut self.rng)
    }
}

/// Draws one minibatch and returns sample ids.
pub fn sample_minibatch(samples: &[&Sample], bins: &AgeBins, batch_size: usize, seed: u64) -> Vec<String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    bins.draw(batch_size, &mut rng)
        .into_iter()
        .map(|i| samples[i].id.clone())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ages(list: &[u32]) -> Vec<AgeLabel> {
        list.iter().map(|&a| AgeLabel::new(a).unwrap()).collect()
    }

    #[test]
    fn bin_edges() {
        let b = &DEFAULT_BOUNDARIES;
        assert_eq!(bin_of(0, b), 0);
        assert_eq!(bin_of(3, b), 0);
        assert_eq!(bin_of(4, b), 1);
        assert_eq!(bin_of(41, b), 9);
        assert_eq!(bin_of(42, b), 10);
        assert_eq!(bin_of(49, b), 10);
        assert_eq!(bin_of(50, b), 11);
        assert_eq!(bin_of(101, b), 11);
    }

    #[test]
    fn equal_counts_uniform() {
        let list: Vec<u32> = [0, 4, 8, 12, 16, 20, 24, 28, 32, 36, 42, 50]
            .iter()
            .flat_map(|&a| [a, a + 1])
            .collect();
        let bins = AgeBins::from_ages(&ages(&list), &DEFAULT_BOUNDARIES).unwrap();
        for &p in bins.probabilities() {
            assert!((p - 1.0 / 12.0).abs() < 1e-15);
        }
    }

    #[test]
    fn two_bins_inverse_frequency() {
        let mut list = vec![1u32; 10];
        list.extend(std::iter::repeat_n(60, 1000));
        let bins = AgeBins::from_ages(&ages(&list), &DEFAULT_BOUNDARIES).unwrap();
        let p = bins.probabilities();
        assert!((p[0] - 100.0 / 101.0).abs() < 1e-12);
        assert!((p[11] - 1.0 / 101.0).abs() < 1e-12);
        assert!(p[1..11].iter().all(|&x| x == 0.0));
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn draws_spread_evenly_over_bins() {
        let mut list = vec![1u32; 10];
        list.extend(std::iter::repeat_n(60, 1000));
        let bins = AgeBins::from_ages(&ages(&list), &DEFAULT_BOUNDARIES).unwrap();
        let f = bins.draw_frequencies();
        assert!((f[0] - 0.5).abs() < 1e-12 && (f[11] - 0.5).abs() < 1e-12);
        let draws = AgeBalancedSampler::new(bins, 3).next_batch(100_000);
        let minors = draws.iter().filter(|&&i| i < 10).count() as f64 / 1e5;
        assert!((minors - 0.5).abs() < 0.01);
    }

    #[test]
    fn empty_input_rejected() {
        assert!(AgeBins::from_ages(&[], &DEFAULT_BOUNDARIES).is_err());
    }

    #[test]
    fn single_bin_draws_only_from_it() {
        let bins = AgeBins::from_ages(&ages(&[30, 31, 29, 30]), &DEFAULT_BOUNDARIES).unwrap();
        let mut s = AgeBalancedSampler::new(bins, 1);
        for i in s.next_batch(500) {
            assert!(i < 4);
        }
    }

    #[test]
    fn same_seed_same_batch() {
        let bins = AgeBins::from_ages(&ages(&[1, 5, 9, 30, 31, 70]), &DEFAULT_BOUNDARIES).unwrap();
        let a = AgeBalancedSampler::new(bins.clone(), 42).next_batch(64);
        let b = AgeBalancedSampler::new(bins.clone(), 42).next_batch(64);
        let c = AgeBalancedSampler::new(bins, 43).next_batch(64);
        assert_eq!(a, b);
        assert_ne!(a, c);
    }
}
