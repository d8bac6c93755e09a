//! Synthetic embeddings with a known age signal, for desk-scale runs.
//!
//! Each sample's embedding is `M φ(a) + ε`: `φ` is a fixed set of Gaussian
//! bumps over age, `M` a seeded random matrix and `ε` isotropic Gaussian
//! noise.

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Normal;
use serde::{Deserialize, Serialize};

use crate::data::{AgeLabel, EmbeddingStore, Manifest, Sample, Split, AGE_CLASSES};
use crate::error::{Error, Result};

const EXPRESSIONS: [&str; 8] = ["neutral", "happy", "surprised", "angry", "sad", "tired", "calm", "bored"];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthSpec {
    pub samples: usize,
    pub dim: usize,
    /// Standard deviation of the additive noise.
    pub noise: f64,
    pub seed: u64,
    /// Number of Gaussian bumps in the age encoding.
    pub bumps: usize,
    /// Bump width in years.
    pub width: f64,
    /// Relative frequency of each age 0..=101; `None` uses a skewed default.
    pub age_weights: Option<Vec<f64>>,
    /// Train, val and test fractions.
    pub splits: [f64; 3],
    pub sources: Vec<String>,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            samples: 1000,
            dim: 32,
            noise: 0.5,
            seed: 0,
            bumps: 16,
            width: 6.0,
            age_weights: None,
            splits: [0.6, 0.2, 0.2],
            sources: vec!["synth".into()],
        }
    }
}

/// Few children, a peak in the late twenties and a long thin tail.
pub fn skewed_age_weights() -> Vec<f64> {
    (0..AGE_CLASSES)
        .map(|a| {
            let x = ((a as f64 + 1.0).ln() - 28f64.ln()) / 0.5;
            (-0.5 * x * x).exp() + 0.03
        })
        .collect()
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 || self.bumps == 0 {
            return Err(Error::Config("dim and bumps must be positive".into()));
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) || self.width.is_nan() || self.width <= 0.0 {
            return Err(Error::Config("noise must be >= 0 and width > 0".into()));
        }
        if self.splits.iter().any(|&f| f.is_nan() || f < 0.0) || self.splits.iter().sum::<f64>() <= 0.0 {
            return Err(Error::Config(format!("bad split fractions {:?}", self.splits)));
        }
        if self.sources.is_empty() {
            return Err(Error::Config("at least one source is required".into()));
        }
        if let Some(w) = &self.age_weights {
            if w.len() != AGE_CLASSES {
                return Err(Error::Config(format!("{} age weights, expected {AGE_CLASSES}", w.len())));
            }
        }
        Ok(())
    }

    /// The age encoding `φ(a)`.
    pub fn encode_age(&self, age: u32) -> Vec<f64> {
        let step = if self.bumps > 1 {
            (AGE_CLASSES - 1) as f64 / (self.bumps - 1) as f64
        } else {
            0.0
        };
        (0..self.bumps)
            .map(|j| {
                let x = (age as f64 - j as f64 * step) / self.width;
                (-0.5 * x * x).exp()
            })
            .collect()
    }
}

/// Generates the manifest and matching embedding store. The manifest does
/// not name an embedding file; callers attach one when writing.
pub fn generate(spec: &SynthSpec) -> Result<(Manifest, EmbeddingStore)> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let std_normal = Normal::new(0.0, 1.0).expect("unit normal");
    let mixing: Vec<f64> = (0..spec.dim * spec.bumps).map(|_| std_normal.sample(&mut rng)).collect();
    let weights = spec.age_weights.clone().unwrap_or_else(skewed_age_weights);
    let ages = WeightedIndex::new(&weights).map_err(|e| Error::Config(format!("age weights: {e}")))?;
    let splits = WeightedIndex::new(spec.splits).map_err(|e| Error::Config(format!("split fractions: {e}")))?;

    let mut samples = Vec::with_capacity(spec.samples);
    let mut data = Vec::with_capacity(spec.samples * spec.dim);
    for i in 0..spec.samples {
        let age = ages.sample(&mut rng) as u32;
        let phi = spec.encode_age(age);
        for r in 0..spec.dim {
            let signal: f64 = mixing[r * spec.bumps..(r + 1) * spec.bumps]
                .iter()
                .zip(&phi)
                .map(|(m, p)| m * p)
                .sum();
            let eps = if spec.noise > 0.0 { spec.noise * std_normal.sample(&mut rng) } else { 0.0 };
            data.push((signal + eps) as f32);
        }
        let split = Split::ALL[splits.sample(&mut rng)];
        let source = &spec.sources[rng.random_range(0..spec.sources.len())];
        let mut s = Sample::new(format!("s{i:06}"), i, AgeLabel::new(age)?, source.clone(), split);
        random_metadata(&mut s, &mut rng, &std_normal);
        samples.push(s);
    }
    Ok((Manifest::new(samples)?, EmbeddingStore::new(spec.dim, data)?))
}

fn random_metadata<R: Rng>(s: &mut Sample, rng: &mut R, n: &Normal<f64>) {
    let m = &mut s.meta;
    m.pitch = Some(10.0 * n.sample(rng));
    m.yaw = Some(25.0 * n.sample(rng));
    m.roll = Some(3.0 * n.sample(rng));
    m.brightness = Some(rng.random_range(30.0..230.0));
    m.contrast = Some(rng.random_range(5.0..80.0));
    m.saturation = Some(rng.random_range(0.0..1.0));
    m.sharpness = Some(rng.random_range(0.0..2000.0));
    let (a, v): (f64, f64) = (rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
    m.arousal = Some(a);
    m.valence = Some(v);
    m.expression = Some(EXPRESSIONS[rng.random_range(0..EXPRESSIONS.len())].to_string());
}
