//! Deterministic training loop and split evaluation.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{AgeLabel, EmbeddingStore, Manifest, Sample, Split};
use crate::error::{Error, Result};
use crate::losses::{batch_loss, resolve_heads, total_loss, HeadLoss, HeadLossConfig, LossConfig};
use crate::net::{self, gather_rows, init_params, NetworkConfig, NetworkParams};
use crate::optim::{Optimizer, OptimizerConfig};
use crate::sampler::{AgeBalancedSampler, AgeBins, DEFAULT_BOUNDARIES};
use crate::Scalar;

const EVAL_CHUNK: usize = 1024;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionMetric {
    #[default]
    ValMae,
    ValTotalLoss,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default)]
    pub optimizer: OptimizerConfig,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub resampling: bool,
    #[serde(default)]
    pub heads: Vec<HeadLossConfig>,
    /// Age task first, then one weight per head.
    #[serde(default)]
    pub head_weights: Vec<f64>,
    #[serde(default)]
    pub selection_metric: SelectionMetric,
    #[serde(default = "default_boundaries")]
    pub bin_boundaries: Vec<u32>,
}

fn default_batch() -> usize {
    64
}
fn default_epochs() -> usize {
    30
}
fn default_boundaries() -> Vec<u32> {
    DEFAULT_BOUNDARIES.to_vec()
}

impl TrainConfig {
    /// Defaults with unit task weights over `heads`.
    pub fn new(seed: u64, heads: Vec<HeadLossConfig>) -> Self {
        let loss = LossConfig::unit(heads);
        Self {
            batch_size: default_batch(),
            epochs: default_epochs(),
            optimizer: OptimizerConfig::default(),
            seed,
            resampling: false,
            heads: loss.heads,
            head_weights: loss.head_weights,
            selection_metric: SelectionMetric::default(),
            bin_boundaries: default_boundaries(),
        }
    }

    pub fn loss_config(&self) -> LossConfig {
        LossConfig {
            heads: self.heads.clone(),
            head_weights: self.head_weights.clone(),
        }
    }

    pub fn validate(&self, net: &NetworkConfig) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        self.optimizer.validate()?;
        self.loss_config().validate(net)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    /// Mean mini-batch loss over the epoch.
    pub train_loss: f64,
    /// Mean per-sample weighted loss on the validation split.
    pub val_loss: f64,
    pub val_mae: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub initial_val_loss: f64,
    pub initial_val_mae: f64,
    pub epochs: Vec<EpochStats>,
    /// 1-based index into `epochs` of the selected parameters.
    pub best_epoch: usize,
    pub selection_metric: SelectionMetric,
    pub heads: Vec<HeadLoss>,
    /// Where the selected parameters were written, if anywhere.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub checkpoint: Option<String>,
}

impl TrainReport {
    pub fn best(&self) -> &EpochStats {
        &self.epochs[self.best_epoch - 1]
    }
}

/// Per-sample weighted loss averaged over `samples`, and the MAE.
pub fn split_loss_and_mae<T: Scalar>(
    params: &NetworkParams<T>,
    config: &NetworkConfig,
    heads: &[HeadLoss],
    weights: &[f64],
    samples: &[&Sample],
    store: &EmbeddingStore,
) -> Result<(f64, f64)> {
    if samples.is_empty() {
        return Err(Error::Empty("split has no samples".into()));
    }
    let mut loss = 0.0;
    let mut abs_err = 0.0;
    for chunk in samples.chunks(EVAL_CHUNK) {
        let z = gather_rows::<T>(store, chunk.iter().map(|s| s.embedding_index));
        let trace = net::forward_batch(params, config, z.view())?;
        for (i, s) in chunk.iter().enumerate() {
            loss += total_loss(&trace, i, s.age, heads, weights)?.loss.as_f64();
            abs_err += (trace.expected_age[i].as_f64() - s.age.years() as f64).abs();
        }
    }
    let n = samples.len() as f64;
    Ok((loss / n, abs_err / n))
}

/// Trains the head stack on the train split, selecting the epoch that
/// minimizes the configured validation metric.
pub fn train<T: Scalar>(
    manifest: &Manifest,
    store: &EmbeddingStore,
    net_config: &NetworkConfig,
    config: &TrainConfig,
) -> Result<(NetworkParams<T>, TrainReport)> {
    net_config.validate()?;
    config.validate(net_config)?;
    if store.dim() != net_config.d {
        return Err(Error::DimensionMismatch {
            expected: net_config.d,
            found: store.dim(),
        });
    }
    manifest.validate_against(store)?;
    let train_set = manifest.split_view(Split::Train);
    let val_set = manifest.split_view(Split::Val);
    if train_set.is_empty() || val_set.is_empty() {
        return Err(Error::Empty(format!(
            "training needs train and val samples ({} train, {} val)",
            train_set.len(),
            val_set.len()
        )));
    }

    let train_ages: Vec<AgeLabel> = train_set.iter().map(|s| s.age).collect();
    let heads = resolve_heads(&config.heads, &train_ages)?;
    let weights = &config.head_weights;

    let mut params = init_params::<T>(net_config, config.seed)?;
    let mut optimizer = Optimizer::new(config.optimizer, &params)?;
    let stream_seed = config.seed.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut sampler = if config.resampling {
        let bins = AgeBins::from_ages(&train_ages, &config.bin_boundaries)?;
        Some(AgeBalancedSampler::new(bins, stream_seed))
    } else {
        None
    };
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(stream_seed);
    let mut order: Vec<usize> = (0..train_set.len()).collect();

    let (initial_val_loss, initial_val_mae) =
        split_loss_and_mae(&params, net_config, &heads, weights, &val_set, store)?;

    let n_batches = train_set.len().div_ceil(config.batch_size);
    let mut epochs = Vec::with_capacity(config.epochs);
    let mut best: Option<(f64, usize, NetworkParams<T>)> = None;

    for epoch in 1..=config.epochs {
        if sampler.is_none() {
            order.shuffle(&mut shuffle_rng);
        }
        let mut epoch_loss = 0.0;
        for batch in 0..n_batches {
            let rows: Vec<usize> = match sampler.as_mut() {
                Some(s) => s.next_batch(config.batch_size),
                None => {
                    let start = batch * config.batch_size;
                    let end = (start + config.batch_size).min(order.len());
                    order[start..end].to_vec()
                }
            };
            let z = gather_rows::<T>(store, rows.iter().map(|&i| train_set[i].embedding_index));
            let ages: Vec<AgeLabel> = rows.iter().map(|&i| train_ages[i]).collect();
            let trace = net::forward_batch(&params, net_config, z.view())?;
            let (loss, logit_grads) = batch_loss(&trace, &ages, &heads, weights)?;
            let loss = loss.as_f64();
            if !loss.is_finite() {
                return Err(Error::Diverged { epoch, batch, loss });
            }
            let grads = net::backward_from_trace(&params, net_config, z.view(), &trace, &logit_grads)?;
            optimizer.step(&mut params, &grads);
            epoch_loss += loss;
        }
        if !params.is_finite() {
            return Err(Error::Diverged {
                epoch,
                batch: n_batches - 1,
                loss: f64::NAN,
            });
        }
        let (val_loss, val_mae) =
            split_loss_and_mae(&params, net_config, &heads, weights, &val_set, store)?;
        epochs.push(EpochStats {
            epoch,
            train_loss: epoch_loss / n_batches as f64,
            val_loss,
            val_mae,
        });
        let score = match config.selection_metric {
            SelectionMetric::ValMae => val_mae,
            SelectionMetric::ValTotalLoss => val_loss,
        };
        if best.as_ref().is_none_or(|(b, _, _)| score < *b) {
            best = Some((score, epoch, params.clone()));
        }
    }

    let (_, best_epoch, best_params) = best.expect("at least one epoch");
    Ok((
        best_params,
        TrainReport {
            initial_val_loss,
            initial_val_mae,
            epochs,
            best_epoch,
            selection_metric: config.selection_metric,
            heads,
            checkpoint: None,
        },
    ))
}

/// One row of model output for a sample.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredictionRow {
    pub id: String,
    pub age: u32,
    pub age_estimate: f64,
    /// `(threshold, underage score)` in network threshold order.
    pub scores: Vec<(u32, f64)>,
}

impl PredictionRow {
    pub fn score(&self, threshold: u32) -> Option<f64> {
        self.scores
            .iter()
            .find(|(t, _)| *t == threshold)
            .map(|&(_, s)| s)
    }
}

/// Order-preserving predictions over `samples`.
pub fn evaluate_split<T: Scalar>(
    params: &NetworkParams<T>,
    config: &NetworkConfig,
    samples: &[&Sample],
    store: &EmbeddingStore,
) -> Result<Vec<PredictionRow>> {
    let mut out = Vec::with_capacity(samples.len());
    for chunk in samples.chunks(EVAL_CHUNK) {
        let z = gather_rows::<T>(store, chunk.iter().map(|s| s.embedding_index));
        let preds = net::predict_batch(params, config, z.view())?;
        out.extend(chunk.iter().zip(preds).map(|(s, p)| PredictionRow {
            id: s.id.clone(),
            age: s.age.years(),
            age_estimate: p.age_estimate,
            scores: p.underage_scores,
        }));
    }
    Ok(out)
}
