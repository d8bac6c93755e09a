//! Age cross-entropy, the alpha-reweighted focal loss, age-gap masking, and
//! the multi-task sum that feeds [`crate::net::backward_from_trace`].
//!
//! Binary heads output the probability of being *over* their threshold. The
//! focal loss is defined on the underage probability `p̂ = 1 - p_over =
//! σ(-u)`, with `y = 1` for underage, so its logit gradient is negated when
//! routed back to the head logit `u`.

use ndarray::{Array1, ArrayView1};
use num_rational::Ratio;
use serde::{Deserialize, Serialize};

use crate::data::AgeLabel;
use crate::error::{Error, Result};
use crate::net::{sigmoid, ForwardTrace, LogitGrads, NetworkConfig, DEFAULT_THRESHOLDS};
use crate::Scalar;

/// Which ages around a threshold are excluded from that head's loss.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "lowercase")]
pub enum GapRule {
    #[default]
    None,
    Fixed { years: u32 },
    /// Excludes `[T/f, T*f)` after truncating both offsets toward zero.
    Relative { numer: u32, denom: u32 },
}


impl GapRule {
    /// The default relative rule, `f = 6/5`.
    pub const SIX_FIFTHS: GapRule = GapRule::Relative { numer: 6, denom: 5 };

    pub fn relative(numer: u32, denom: u32) -> Result<Self> {
        let rule = GapRule::Relative { numer, denom };
        rule.validate()?;
        Ok(rule)
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            GapRule::Relative { numer, denom } if denom == 0 || numer <= denom => Err(
                Error::Config(format!("relative gap factor {numer}/{denom} must exceed 1")),
            ),
            _ => Ok(()),
        }
    }
}

/// Offsets `(below, above)` of the masked interval `[T - below, T + above)`.
pub fn gap_bounds(threshold: u32, rule: GapRule) -> (u32, u32) {
    match rule {
        GapRule::None => (0, 0),
        GapRule::Fixed { years } => (years, years),
        GapRule::Relative { numer, denom } => {
            let t = Ratio::from_integer(threshold as u64);
            let f = Ratio::new(numer as u64, denom as u64);
            let below = (t - t / f).trunc().to_integer();
            let above = (t * f - t).trunc().to_integer();
            (below as u32, above as u32)
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BinaryLabel {
    Underage,
    Adult,
    Masked,
}

impl BinaryLabel {
    /// `Some(true)` for underage, `Some(false)` for adult, `None` when masked.
    pub fn target(self) -> Option<bool> {
        match self {
            BinaryLabel::Underage => Some(true),
            BinaryLabel::Adult => Some(false),
            BinaryLabel::Masked => None,
        }
    }
}

pub fn binary_label(age: AgeLabel, threshold: u32, rule: GapRule) -> BinaryLabel {
    let (below, above) = gap_bounds(threshold, rule);
    let a = age.years() as i64;
    let t = threshold as i64;
    if a >= t + above as i64 {
        BinaryLabel::Adult
    } else if a < t - below as i64 {
        BinaryLabel::Underage
    } else {
        BinaryLabel::Masked
    }
}

/// Class weights derived from label counts.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AlphaWeights {
    pub minority: f64,
    pub majority: f64,
    pub underage_is_minority: bool,
}

impl AlphaWeights {
    pub const UNIT: AlphaWeights = AlphaWeights {
        minority: 1.0,
        majority: 1.0,
        underage_is_minority: true,
    };

    /// Weight `α_y` for a label (`true` = underage).
    pub fn for_label(&self, underage: bool) -> f64 {
        if underage == self.underage_is_minority {
            self.minority
        } else {
            self.majority
        }
    }
}

/// `α = sqrt(N_majority / N_minority)` for the minority class and its
/// reciprocal for the majority class.
pub fn alpha_weights(n_underage: usize, n_adult: usize) -> Result<AlphaWeights> {
    if n_underage == 0 || n_adult == 0 {
        return Err(Error::Undefined(format!(
            "alpha needs both classes, got {n_underage} underage / {n_adult} adult"
        )));
    }
    let underage_is_minority = n_underage <= n_adult;
    let (minor, major) = if underage_is_minority {
        (n_underage, n_adult)
    } else {
        (n_adult, n_underage)
    };
    let ratio = major as f64 / minor as f64;
    Ok(AlphaWeights {
        minority: ratio.sqrt(),
        majority: ratio.recip().sqrt(),
        underage_is_minority,
    })
}

/// How the negative-class term of the focal loss is weighted.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FocalForm {
    /// Negative term weighted by `1 - α_y`. With `α_y = 1` the adult term
    /// vanishes entirely.
    AsWritten,
    /// Both terms weighted by `α_y`; `α = 1, γ = 0` is plain binary
    /// cross-entropy for either class.
    #[default]
    ClassWeighted,
}

fn focal_terms<T: Scalar>(p_hat: T, y: bool, weight: T, gamma: T) -> (T, T) {
    let floor = T::prob_floor();
    let p = p_hat.max(floor).min(T::one() - floor);
    let q = T::one() - p;
    if y {
        let loss = -weight * q.powf(gamma) * p.ln();
        let grad = weight * q.powf(gamma) * (gamma * p * p.ln() - q);
        (loss, grad)
    } else {
        let loss = -weight * p.powf(gamma) * q.ln();
        let grad = weight * p.powf(gamma) * (p - gamma * q * q.ln());
        (loss, grad)
    }
}

/// Focal loss exactly as written:
/// `L = -α(1-p̂)^γ y log p̂ - (1-α) p̂^γ (1-y) log(1-p̂)`.
///
/// Returns the loss and its derivative w.r.t. the logit of `p̂`.
pub fn focal_loss<T: Scalar>(p_hat: T, y: bool, alpha_y: T, gamma: T) -> (T, T) {
    focal_loss_with(FocalForm::AsWritten, p_hat, y, alpha_y, gamma)
}

pub fn focal_loss_with<T: Scalar>(form: FocalForm, p_hat: T, y: bool, alpha_y: T, gamma: T) -> (T, T) {
    let weight = match (form, y) {
        (_, true) | (FocalForm::ClassWeighted, false) => alpha_y,
        (FocalForm::AsWritten, false) => T::one() - alpha_y,
    };
    focal_terms(p_hat, y, weight, gamma)
}

/// `-ln p_age[a]` with the probability floored at `e^-30`, and its gradient
/// w.r.t. the age logits, `p_age - onehot(a)`.
pub fn age_ce_loss<T: Scalar>(p_age: ArrayView1<T>, age: AgeLabel) -> (T, Array1<T>) {
    let floor = T::lit(-30.0).exp();
    let loss = -p_age[age.index()].max(floor).ln();
    let mut grad = p_age.to_owned();
    grad[age.index()] -= T::one();
    (loss, grad)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AlphaMode {
    #[default]
    Off,
    Imbalance,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HeadLossConfig {
    pub threshold: u32,
    #[serde(default)]
    pub alpha_mode: AlphaMode,
    #[serde(default)]
    pub gamma: f64,
    #[serde(default)]
    pub gap: GapRule,
    #[serde(default)]
    pub form: FocalForm,
}

impl HeadLossConfig {
    pub fn bce(threshold: u32) -> Self {
        Self {
            threshold,
            alpha_mode: AlphaMode::Off,
            gamma: 0.0,
            gap: GapRule::None,
            form: FocalForm::ClassWeighted,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(1..=101).contains(&self.threshold) {
            return Err(Error::Config(format!(
                "head threshold {} outside 1..=101",
                self.threshold
            )));
        }
        if !(self.gamma >= 0.0 && self.gamma.is_finite()) {
            return Err(Error::Config(format!("gamma = {} must be >= 0", self.gamma)));
        }
        self.gap.validate()
    }
}

/// Per-head losses plus task weights, age task first.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub heads: Vec<HeadLossConfig>,
    /// `1 + heads.len()` weights; the first is the age task.
    pub head_weights: Vec<f64>,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self::unit(DEFAULT_THRESHOLDS.iter().map(|&t| HeadLossConfig::bce(t)).collect())
    }
}

impl LossConfig {
    pub fn unit(heads: Vec<HeadLossConfig>) -> Self {
        let head_weights = vec![1.0; heads.len() + 1];
        Self { heads, head_weights }
    }

    pub fn validate(&self, net: &NetworkConfig) -> Result<()> {
        if self.head_weights.len() != self.heads.len() + 1 {
            return Err(Error::Config(format!(
                "{} head weights for {} heads (need age weight first)",
                self.head_weights.len(),
                self.heads.len()
            )));
        }
        let thresholds: Vec<u32> = self.heads.iter().map(|h| h.threshold).collect();
        if thresholds != net.thresholds {
            return Err(Error::Config(format!(
                "loss heads {thresholds:?} do not match network thresholds {:?}",
                net.thresholds
            )));
        }
        for h in &self.heads {
            h.validate()?;
        }
        Ok(())
    }
}

/// A head config with its class weights fixed from training labels.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HeadLoss {
    pub config: HeadLossConfig,
    pub alpha: AlphaWeights,
}

impl HeadLoss {
    pub fn unweighted(config: HeadLossConfig) -> Self {
        Self {
            config,
            alpha: AlphaWeights::UNIT,
        }
    }

    /// Resolves alpha from the labels of `ages` after gap masking.
    pub fn resolve(config: HeadLossConfig, ages: impl IntoIterator<Item = AgeLabel>) -> Result<Self> {
        let alpha = match config.alpha_mode {
            AlphaMode::Off => AlphaWeights::UNIT,
            AlphaMode::Imbalance => {
                let (mut under, mut adult) = (0, 0);
                for a in ages {
                    match binary_label(a, config.threshold, config.gap) {
                        BinaryLabel::Underage => under += 1,
                        BinaryLabel::Adult => adult += 1,
                        BinaryLabel::Masked => {}
                    }
                }
                alpha_weights(under, adult)?
            }
        };
        Ok(Self { config, alpha })
    }

    pub fn label(&self, age: AgeLabel) -> BinaryLabel {
        binary_label(age, self.config.threshold, self.config.gap)
    }

    /// Loss of one head given its over-threshold logit, with the gradient
    /// w.r.t. that logit. `None` for masked samples.
    pub fn eval<T: Scalar>(&self, over_logit: T, age: AgeLabel) -> Option<(T, T)> {
        let y = self.label(age).target()?;
        let p_hat = sigmoid(-over_logit);
        let (loss, d_underage_logit) = focal_loss_with(
            self.config.form,
            p_hat,
            y,
            T::lit(self.alpha.for_label(y)),
            T::lit(self.config.gamma),
        );
        Some((loss, -d_underage_logit))
    }
}

pub fn resolve_heads(configs: &[HeadLossConfig], train_ages: &[AgeLabel]) -> Result<Vec<HeadLoss>> {
    configs
        .iter()
        .map(|c| HeadLoss::resolve(c.clone(), train_ages.iter().copied()))
        .collect()
}

/// Loss of a single sample and its logit gradients.
#[derive(Clone, Debug, PartialEq)]
pub struct SampleLoss<T> {
    pub loss: T,
    pub age_loss: T,
    /// `None` where the sample is masked for that head.
    pub head_losses: Vec<Option<T>>,
    pub age_grad: Array1<T>,
    pub head_grad: Array1<T>,
}

fn check_weights(heads: &[HeadLoss], weights: &[f64], trace_heads: usize) -> Result<()> {
    if weights.len() != heads.len() + 1 {
        return Err(Error::Config(format!(
            "{} weights for {} heads",
            weights.len(),
            heads.len()
        )));
    }
    if trace_heads != heads.len() {
        return Err(Error::Shape(format!(
            "trace has {trace_heads} heads, loss config has {}",
            heads.len()
        )));
    }
    Ok(())
}

/// Weighted multi-task loss of row `row` of `trace`.
pub fn total_loss<T: Scalar>(
    trace: &ForwardTrace<T>,
    row: usize,
    age: AgeLabel,
    heads: &[HeadLoss],
    weights: &[f64],
) -> Result<SampleLoss<T>> {
    check_weights(heads, weights, trace.head_logits.ncols())?;
    let (ce, mut age_grad) = age_ce_loss(trace.age_probs.row(row), age);
    let w_age = T::lit(weights[0]);
    age_grad.mapv_inplace(|g| g * w_age);
    let mut loss = w_age * ce;
    let mut head_grad = Array1::zeros(heads.len());
    let mut head_losses = Vec::with_capacity(heads.len());
    for (k, head) in heads.iter().enumerate() {
        match head.eval(trace.head_logits[[row, k]], age) {
            Some((l, g)) => {
                let w = T::lit(weights[k + 1]);
                loss += w * l;
                head_grad[k] = w * g;
                head_losses.push(Some(l));
            }
            None => head_losses.push(None),
        }
    }
    Ok(SampleLoss {
        loss,
        age_loss: ce,
        head_losses,
        age_grad,
        head_grad,
    })
}

/// Mini-batch loss: the age term is averaged over the batch, each binary
/// term over that head's non-masked samples.
pub fn batch_loss<T: Scalar>(
    trace: &ForwardTrace<T>,
    ages: &[AgeLabel],
    heads: &[HeadLoss],
    weights: &[f64],
) -> Result<(T, LogitGrads<T>)> {
    let n = trace.rows();
    if ages.len() != n {
        return Err(Error::Shape(format!("{} labels for {n} rows", ages.len())));
    }
    check_weights(heads, weights, trace.head_logits.ncols())?;
    let mut grads = LogitGrads {
        age: ndarray::Array2::zeros(trace.age_probs.dim()),
        heads: ndarray::Array2::zeros(trace.head_logits.dim()),
    };
    if n == 0 {
        return Ok((T::zero(), grads));
    }

    let age_scale = T::lit(weights[0] / n as f64);
    let mut age_sum = T::zero();
    for (i, &a) in ages.iter().enumerate() {
        let (ce, g) = age_ce_loss(trace.age_probs.row(i), a);
        age_sum += ce;
        grads.age.row_mut(i).assign(&(g * age_scale));
    }
    let mut loss = age_sum * age_scale;

    for (k, head) in heads.iter().enumerate() {
        let evaluated: Vec<(usize, T, T)> = ages
            .iter()
            .enumerate()
            .filter_map(|(i, &a)| head.eval(trace.head_logits[[i, k]], a).map(|(l, g)| (i, l, g)))
            .collect();
        if evaluated.is_empty() {
            continue;
        }
        let scale = T::lit(weights[k + 1] / evaluated.len() as f64);
        let mut sum = T::zero();
        for (i, l, g) in evaluated {
            sum += l;
            grads.heads[[i, k]] = g * scale;
        }
        loss += sum * scale;
    }
    Ok((loss, grads))
}
