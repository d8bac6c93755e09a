//! The trainable head stack: MLP trunk, age-classification head decoded as
//! an expected value, and one sigmoid head per age threshold.
//!
//! All operations work on a batch of row vectors (`n x d`). A single
//! embedding is a batch of one.

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, ArrayViewD, ArrayViewMutD, Axis, Zip};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::AGE_CLASSES;
use crate::error::{Error, Result};
use crate::Scalar;

/// Default age thresholds in years.
pub const DEFAULT_THRESHOLDS: [u32; 4] = [12, 15, 18, 21];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    /// One `d x d` matrix applied twice.
    Ws,
    /// Two matrices with intermediate width `m`.
    Ind,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetworkConfig {
    pub d: usize,
    pub variant: Variant,
    /// Intermediate width of the independent trunk; ignored for `Ws`.
    #[serde(default = "default_width")]
    pub m: usize,
    #[serde(default = "default_classes")]
    pub c: usize,
    #[serde(default = "default_thresholds")]
    pub thresholds: Vec<u32>,
}

fn default_width() -> usize {
    512
}

fn default_classes() -> usize {
    AGE_CLASSES
}

fn default_thresholds() -> Vec<u32> {
    DEFAULT_THRESHOLDS.to_vec()
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self {
            d: 512,
            variant: Variant::Ind,
            m: 512,
            c: AGE_CLASSES,
            thresholds: default_thresholds(),
        }
    }
}

impl NetworkConfig {
    pub fn ws(d: usize, c: usize, thresholds: Vec<u32>) -> Self {
        Self {
            d,
            variant: Variant::Ws,
            m: d,
            c,
            thresholds,
        }
    }

    pub fn ind(d: usize, m: usize, c: usize, thresholds: Vec<u32>) -> Self {
        Self {
            d,
            variant: Variant::Ind,
            m,
            c,
            thresholds,
        }
    }

    /// Width of the hidden layer `h`.
    pub fn hidden(&self) -> usize {
        match self.variant {
            Variant::Ws => self.d,
            Variant::Ind => self.m,
        }
    }

    pub fn heads(&self) -> usize {
        self.thresholds.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.d == 0 {
            return Err(Error::Config("d must be positive".into()));
        }
        if self.variant == Variant::Ind && self.m == 0 {
            return Err(Error::Config("m must be positive".into()));
        }
        if self.c < 2 {
            return Err(Error::Config(format!("c = {} must be at least 2", self.c)));
        }
        for w in self.thresholds.windows(2) {
            if w[0] >= w[1] {
                return Err(Error::Config(format!(
                    "thresholds must be strictly increasing: {:?}",
                    self.thresholds
                )));
            }
        }
        if let Some(&t) = self
            .thresholds
            .iter()
            .find(|&&t| t == 0 || t as usize >= self.c)
        {
            return Err(Error::Config(format!(
                "threshold {t} outside (0, {})",
                self.c
            )));
        }
        Ok(())
    }
}

/// Trainable parameter count.
pub fn parameter_count(config: &NetworkConfig) -> usize {
    let (d, c, k) = (config.d, config.c, config.heads());
    let trunk = match config.variant {
        Variant::Ws => d * d + 2 * d,
        Variant::Ind => config.m * d + config.m + d * config.m + d,
    };
    trunk + (c * d + c) + k * (d + 1)
}

#[derive(Clone, Debug, PartialEq)]
pub enum Trunk<T> {
    Shared {
        w: Array2<T>,
        b1: Array1<T>,
        b2: Array1<T>,
    },
    Independent {
        w1: Array2<T>,
        b1: Array1<T>,
        w2: Array2<T>,
        b2: Array1<T>,
    },
}

/// All trainable tensors. Weight matrices are `(out, in)`.
#[derive(Clone, Debug, PartialEq)]
pub struct NetworkParams<T> {
    pub trunk: Trunk<T>,
    /// `c x d`
    pub age_w: Array2<T>,
    pub age_b: Array1<T>,
    /// Row `k` is the weight vector of the head for `thresholds[k]`.
    pub head_w: Array2<T>,
    pub head_b: Array1<T>,
}

/// Gradients share the parameter layout.
pub type ParamGrads<T> = NetworkParams<T>;

impl<T: Scalar> NetworkParams<T> {
    pub fn zeros(config: &NetworkConfig) -> Self {
        let (d, h, c, k) = (config.d, config.hidden(), config.c, config.heads());
        let trunk = match config.variant {
            Variant::Ws => Trunk::Shared {
                w: Array2::zeros((d, d)),
                b1: Array1::zeros(d),
                b2: Array1::zeros(d),
            },
            Variant::Ind => Trunk::Independent {
                w1: Array2::zeros((h, d)),
                b1: Array1::zeros(h),
                w2: Array2::zeros((d, h)),
                b2: Array1::zeros(d),
            },
        };
        Self {
            trunk,
            age_w: Array2::zeros((c, d)),
            age_b: Array1::zeros(c),
            head_w: Array2::zeros((k, d)),
            head_b: Array1::zeros(k),
        }
    }

    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        z.fill(T::zero());
        z
    }

    pub fn fill(&mut self, v: T) {
        for (_, mut t) in self.tensors_mut() {
            t.fill(v);
        }
    }

    /// Named views in a fixed order; this order is the checkpoint order.
    pub fn tensors(&self) -> Vec<(&'static str, ArrayViewD<'_, T>)> {
        let mut out = Vec::with_capacity(8);
        match &self.trunk {
            Trunk::Shared { w, b1, b2 } => {
                out.push(("mlp.w", w.view().into_dyn()));
                out.push(("mlp.b1", b1.view().into_dyn()));
                out.push(("mlp.b2", b2.view().into_dyn()));
            }
            Trunk::Independent { w1, b1, w2, b2 } => {
                out.push(("mlp.w1", w1.view().into_dyn()));
                out.push(("mlp.b1", b1.view().into_dyn()));
                out.push(("mlp.w2", w2.view().into_dyn()));
                out.push(("mlp.b2", b2.view().into_dyn()));
            }
        }
        out.push(("age.w", self.age_w.view().into_dyn()));
        out.push(("age.b", self.age_b.view().into_dyn()));
        out.push(("heads.w", self.head_w.view().into_dyn()));
        out.push(("heads.b", self.head_b.view().into_dyn()));
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<(&'static str, ArrayViewMutD<'_, T>)> {
        let mut out = Vec::with_capacity(8);
        match &mut self.trunk {
            Trunk::Shared { w, b1, b2 } => {
                out.push(("mlp.w", w.view_mut().into_dyn()));
                out.push(("mlp.b1", b1.view_mut().into_dyn()));
                out.push(("mlp.b2", b2.view_mut().into_dyn()));
            }
            Trunk::Independent { w1, b1, w2, b2 } => {
                out.push(("mlp.w1", w1.view_mut().into_dyn()));
                out.push(("mlp.b1", b1.view_mut().into_dyn()));
                out.push(("mlp.w2", w2.view_mut().into_dyn()));
                out.push(("mlp.b2", b2.view_mut().into_dyn()));
            }
        }
        out.push(("age.w", self.age_w.view_mut().into_dyn()));
        out.push(("age.b", self.age_b.view_mut().into_dyn()));
        out.push(("heads.w", self.head_w.view_mut().into_dyn()));
        out.push(("heads.b", self.head_b.view_mut().into_dyn()));
        out
    }

    pub fn len(&self) -> usize {
        self.tensors().iter().map(|(_, t)| t.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn is_finite(&self) -> bool {
        self.tensors()
            .iter()
            .all(|(_, t)| t.iter().all(|v| v.is_finite()))
    }

    /// Checks every tensor shape against `config`.
    pub fn check_shapes(&self, config: &NetworkConfig) -> Result<()> {
        let reference = Self::zeros(config);
        let ours = self.tensors();
        let theirs = reference.tensors();
        if ours.len() != theirs.len() {
            return Err(Error::Shape(format!(
                "variant mismatch: {} tensors vs {} expected",
                ours.len(),
                theirs.len()
            )));
        }
        for ((name, a), (rname, b)) in ours.iter().zip(&theirs) {
            if name != rname || a.shape() != b.shape() {
                return Err(Error::Shape(format!(
                    "{name} has shape {:?}, expected {rname} {:?}",
                    a.shape(),
                    b.shape()
                )));
            }
        }
        Ok(())
    }

    /// Element-wise `self += scale * other`.
    pub fn add_scaled(&mut self, other: &Self, scale: T) {
        for ((_, mut a), (_, b)) in self.tensors_mut().into_iter().zip(other.tensors()) {
            a.scaled_add(scale, &b);
        }
    }

    pub fn cast<U: Scalar>(&self) -> NetworkParams<U> {
        fn m<T: Scalar, U: Scalar>(a: &Array2<T>) -> Array2<U> {
            a.mapv(|v| U::lit(v.as_f64()))
        }
        fn v<T: Scalar, U: Scalar>(a: &Array1<T>) -> Array1<U> {
            a.mapv(|x| U::lit(x.as_f64()))
        }
        let trunk = match &self.trunk {
            Trunk::Shared { w, b1, b2 } => Trunk::Shared {
                w: m(w),
                b1: v(b1),
                b2: v(b2),
            },
            Trunk::Independent { w1, b1, w2, b2 } => Trunk::Independent {
                w1: m(w1),
                b1: v(b1),
                w2: m(w2),
                b2: v(b2),
            },
        };
        NetworkParams {
            trunk,
            age_w: m(&self.age_w),
            age_b: v(&self.age_b),
            head_w: m(&self.head_w),
            head_b: v(&self.head_b),
        }
    }
}

/// Glorot-uniform weights, zero biases. Draws are made in `f64` and cast,
/// so `f32` and `f64` nets from the same seed agree up to rounding.
pub fn init_params<T: Scalar>(config: &NetworkConfig, seed: u64) -> Result<NetworkParams<T>> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = NetworkParams::<T>::zeros(config);
    let mut glorot = |w: &mut Array2<T>, fan_in: usize, fan_out: usize| {
        let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
        for v in w.iter_mut() {
            *v = T::lit(rng.random_range(-bound..=bound));
        }
    };
    let (d, h) = (config.d, config.hidden());
    match &mut params.trunk {
        Trunk::Shared { w, .. } => glorot(w, d, d),
        Trunk::Independent { w1, w2, .. } => {
            glorot(w1, d, h);
            glorot(w2, h, d);
        }
    }
    glorot(&mut params.age_w, d, config.c);
    // each binary head is its own d -> 1 map
    glorot(&mut params.head_w, d, 1);
    Ok(params)
}

/// Intermediate values of one forward pass over `n` rows.
#[derive(Clone, Debug, PartialEq)]
pub struct ForwardTrace<T> {
    pub hidden_pre: Array2<T>,
    pub hidden: Array2<T>,
    pub out_pre: Array2<T>,
    /// Shared representation fed to every head.
    pub out: Array2<T>,
    pub age_logits: Array2<T>,
    pub age_probs: Array2<T>,
    pub expected_age: Array1<T>,
    pub head_logits: Array2<T>,
    /// Probability of being at or over each threshold.
    pub head_probs: Array2<T>,
}

impl<T: Scalar> ForwardTrace<T> {
    pub fn rows(&self) -> usize {
        self.expected_age.len()
    }
}

pub fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

fn relu<T: Scalar>(x: T) -> T {
    if x > T::zero() {
        x
    } else {
        T::zero()
    }
}

/// Row-wise softmax with max subtraction.
pub fn softmax_rows<T: Scalar>(logits: &ArrayView2<T>) -> Array2<T> {
    let mut out = logits.to_owned();
    for mut row in out.rows_mut() {
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        row.mapv_inplace(|v| (v - max).exp());
        let sum: T = row.iter().copied().sum();
        row.mapv_inplace(|v| v / sum);
    }
    out
}

/// `x W^T + b` for row-major `x`.
fn affine<T: Scalar>(x: &ArrayView2<T>, w: &Array2<T>, b: &Array1<T>) -> Array2<T> {
    let mut y = x.dot(&w.t());
    y += b;
    y
}

fn check_input<T: Scalar>(config: &NetworkConfig, z: &ArrayView2<T>) -> Result<()> {
    if z.ncols() != config.d {
        return Err(Error::DimensionMismatch {
            expected: config.d,
            found: z.ncols(),
        });
    }
    if let Some(v) = z.iter().find(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!("input contains {v}")));
    }
    Ok(())
}

pub fn forward_batch<T: Scalar>(
    params: &NetworkParams<T>,
    config: &NetworkConfig,
    z: ArrayView2<T>,
) -> Result<ForwardTrace<T>> {
    check_input(config, &z)?;
    let (layer1, b1, layer2, b2) = match &params.trunk {
        Trunk::Shared { w, b1, b2 } => (w, b1, w, b2),
        Trunk::Independent { w1, b1, w2, b2 } => (w1, b1, w2, b2),
    };
    let hidden_pre = affine(&z, layer1, b1);
    let hidden = hidden_pre.mapv(relu);
    let out_pre = affine(&hidden.view(), layer2, b2);
    let out = out_pre.mapv(relu);
    let age_logits = affine(&out.view(), &params.age_w, &params.age_b);
    let age_probs = softmax_rows(&age_logits.view());
    let ages = Array1::from_iter((0..config.c).map(|a| T::lit(a as f64)));
    let expected_age = age_probs.dot(&ages);
    let head_logits = affine(&out.view(), &params.head_w, &params.head_b);
    let head_probs = head_logits.mapv(sigmoid);
    Ok(ForwardTrace {
        hidden_pre,
        hidden,
        out_pre,
        out,
        age_logits,
        age_probs,
        expected_age,
        head_logits,
        head_probs,
    })
}

pub fn forward<T: Scalar>(
    params: &NetworkParams<T>,
    config: &NetworkConfig,
    z: ArrayView1<T>,
) -> Result<ForwardTrace<T>> {
    let n = z.len();
    let row = z
        .into_shape_with_order((1, n))
        .map_err(|e| Error::Shape(e.to_string()))?;
    forward_batch(params, config, row)
}

/// Gradients of the loss w.r.t. the head logits of a batch.
#[derive(Clone, Debug, PartialEq)]
pub struct LogitGrads<T> {
    /// `n x c`
    pub age: Array2<T>,
    /// `n x K`
    pub heads: Array2<T>,
}

impl<T: Scalar> LogitGrads<T> {
    pub fn zeros(n: usize, config: &NetworkConfig) -> Self {
        Self {
            age: Array2::zeros((n, config.c)),
            heads: Array2::zeros((n, config.heads())),
        }
    }
}

fn relu_mask<T: Scalar>(grad: &mut Array2<T>, pre: &Array2<T>) {
    Zip::from(grad).and(pre).for_each(|g, &p| {
        if p <= T::zero() {
            *g = T::zero();
        }
    });
}

/// Back-propagates logit gradients through an existing trace.
pub fn backward_from_trace<T: Scalar>(
    params: &NetworkParams<T>,
    config: &NetworkConfig,
    z: ArrayView2<T>,
    trace: &ForwardTrace<T>,
    grads: &LogitGrads<T>,
) -> Result<ParamGrads<T>> {
    let n = z.nrows();
    if grads.age.dim() != (n, config.c) || grads.heads.dim() != (n, config.heads()) {
        return Err(Error::Shape(format!(
            "logit gradients {:?}/{:?} for batch of {n}, c = {}, {} heads",
            grads.age.dim(),
            grads.heads.dim(),
            config.c,
            config.heads()
        )));
    }
    if trace.rows() != n {
        return Err(Error::Shape(format!(
            "trace has {} rows, input has {n}",
            trace.rows()
        )));
    }

    let age_w = grads.age.t().dot(&trace.out);
    let age_b = grads.age.sum_axis(Axis(0));
    let head_w = grads.heads.t().dot(&trace.out);
    let head_b = grads.heads.sum_axis(Axis(0));

    let mut d_out = grads.age.dot(&params.age_w) + grads.heads.dot(&params.head_w);
    relu_mask(&mut d_out, &trace.out_pre);

    let (layer2, _) = match &params.trunk {
        Trunk::Shared { w, b2, .. } => (w, b2),
        Trunk::Independent { w2, b2, .. } => (w2, b2),
    };
    let w2_grad = d_out.t().dot(&trace.hidden);
    let b2_grad = d_out.sum_axis(Axis(0));
    let mut d_hidden = d_out.dot(layer2);
    relu_mask(&mut d_hidden, &trace.hidden_pre);
    let w1_grad = d_hidden.t().dot(&z);
    let b1_grad = d_hidden.sum_axis(Axis(0));

    let trunk = match &params.trunk {
        Trunk::Shared { .. } => Trunk::Shared {
            // both uses of the tied matrix
            w: w1_grad + &w2_grad,
            b1: b1_grad,
            b2: b2_grad,
        },
        Trunk::Independent { .. } => Trunk::Independent {
            w1: w1_grad,
            b1: b1_grad,
            w2: w2_grad,
            b2: b2_grad,
        },
    };
    Ok(NetworkParams {
        trunk,
        age_w,
        age_b,
        head_w,
        head_b,
    })
}

pub fn backward_batch<T: Scalar>(
    params: &NetworkParams<T>,
    config: &NetworkConfig,
    z: ArrayView2<T>,
    grads: &LogitGrads<T>,
) -> Result<ParamGrads<T>> {
    let trace = forward_batch(params, config, z)?;
    backward_from_trace(params, config, z, &trace, grads)
}

/// Single-sample backward; `age_grad` has length `c`, `head_grad` length K.
pub fn backward<T: Scalar>(
    params: &NetworkParams<T>,
    config: &NetworkConfig,
    z: ArrayView1<T>,
    age_grad: ArrayView1<T>,
    head_grad: ArrayView1<T>,
) -> Result<ParamGrads<T>> {
    let shape = |v: ArrayView1<T>| {
        let n = v.len();
        v.to_owned()
            .into_shape_with_order((1, n))
            .map_err(|e| Error::Shape(e.to_string()))
    };
    let grads = LogitGrads {
        age: shape(age_grad)?,
        heads: shape(head_grad)?,
    };
    let row = z.to_owned().into_shape_with_order((1, z.len())).map_err(|e| Error::Shape(e.to_string()))?;
    backward_batch(params, config, row.view(), &grads)
}

/// Age estimate and underage score per threshold for one row.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub age_estimate: f64,
    /// `(threshold, 1 - p_over)` in threshold order.
    pub underage_scores: Vec<(u32, f64)>,
}

pub fn predict_batch<T: Scalar>(
    params: &NetworkParams<T>,
    config: &NetworkConfig,
    z: ArrayView2<T>,
) -> Result<Vec<Prediction>> {
    let trace = forward_batch(params, config, z)?;
    Ok((0..trace.rows())
        .map(|i| Prediction {
            age_estimate: trace.expected_age[i].as_f64(),
            underage_scores: config
                .thresholds
                .iter()
                .zip(trace.head_probs.row(i))
                .map(|(&t, &p)| (t, 1.0 - p.as_f64()))
                .collect(),
        })
        .collect())
}

pub fn predict<T: Scalar>(
    params: &NetworkParams<T>,
    config: &NetworkConfig,
    z: ArrayView1<T>,
) -> Result<Prediction> {
    let n = z.len();
    let row = z
        .into_shape_with_order((1, n))
        .map_err(|e| Error::Shape(e.to_string()))?;
    Ok(predict_batch(params, config, row)?.remove(0))
}

/// Copies rows of `store` into an `n x d` matrix of `T`.
pub fn gather_rows<T: Scalar>(store: &crate::EmbeddingStore, rows: impl IntoIterator<Item = usize>) -> Array2<T> {
    let rows: Vec<usize> = rows.into_iter().collect();
    let d = store.dim();
    let mut out = Array2::zeros((rows.len(), d));
    for (i, &r) in rows.iter().enumerate() {
        let mut dst = out.slice_mut(s![i, ..]);
        for (o, &v) in dst.iter_mut().zip(store.row(r)) {
            *o = T::lit(v as f64);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn zero_params_give_symmetric_outputs() {
        let cfg = NetworkConfig::ws(8, 102, default_thresholds());
        let p = NetworkParams::<f64>::zeros(&cfg);
        let z = Array1::from_iter((0..8).map(|i| i as f64 - 3.0));
        let t = forward(&p, &cfg, z.view()).unwrap();
        assert!((t.expected_age[0] - 50.5).abs() < 1e-12);
        for &p in t.head_probs.iter() {
            assert_eq!(p, 0.5);
        }
        let pred = predict(&p, &cfg, z.view()).unwrap();
        assert!((pred.age_estimate - 50.5).abs() < 1e-12);
        assert!(pred.underage_scores.iter().all(|&(_, s)| s == 0.5));
    }

    #[test]
    fn huge_bias_picks_that_age() {
        let cfg = NetworkConfig::ind(4, 3, 102, vec![18]);
        let mut p = NetworkParams::<f64>::zeros(&cfg);
        p.age_b[37] = 1000.0;
        let t = forward(&p, &cfg, array![1.0, 2.0, 3.0, 4.0].view()).unwrap();
        assert!((t.expected_age[0] - 37.0).abs() < 1e-12);
    }

    #[test]
    fn expected_age_matches_straight_line_evaluation() {
        let cfg = NetworkConfig::ind(4, 3, 5, vec![2]);
        let p = init_params::<f64>(&cfg, 11).unwrap();
        let z = array![0.3, -0.7, 1.1, 0.2];
        let t = forward(&p, &cfg, z.view()).unwrap();

        // independent re-evaluation with plain loops
        let Trunk::Independent { w1, b1, w2, b2 } = &p.trunk else { unreachable!() };
        let mut h = [0.0; 3];
        for i in 0..3 {
            let mut acc = b1[i];
            for j in 0..4 {
                acc += w1[[i, j]] * z[j];
            }
            h[i] = acc.max(0.0);
        }
        let mut o = [0.0; 4];
        for i in 0..4 {
            let mut acc = b2[i];
            for j in 0..3 {
                acc += w2[[i, j]] * h[j];
            }
            o[i] = acc.max(0.0);
        }
        let mut logits = [0.0; 5];
        for a in 0..5 {
            logits[a] = p.age_b[a] + (0..4).map(|j| p.age_w[[a, j]] * o[j]).sum::<f64>();
        }
        let denom: f64 = logits.iter().map(|l| l.exp()).sum();
        let expected: f64 = (0..5).map(|a| a as f64 * logits[a].exp() / denom).sum();
        assert!((t.expected_age[0] - expected).abs() < 1e-12);
    }

    #[test]
    fn increasing_head_bias_increases_over_probability() {
        let cfg = NetworkConfig::ws(4, 10, vec![5]);
        let mut p = init_params::<f64>(&cfg, 3).unwrap();
        let z = array![0.5, 0.1, -0.4, 0.9];
        let mut last = 0.0;
        for b in [-3.0, -1.0, 0.0, 0.5, 2.0] {
            p.head_b[0] = b;
            let t = forward(&p, &cfg, z.view()).unwrap();
            assert!(t.head_probs[[0, 0]] > last);
            last = t.head_probs[[0, 0]];
        }
    }

    #[test]
    fn init_is_deterministic_and_seed_sensitive() {
        let cfg = NetworkConfig::ind(16, 8, 102, default_thresholds());
        let a = init_params::<f64>(&cfg, 5).unwrap();
        let b = init_params::<f64>(&cfg, 5).unwrap();
        assert_eq!(a, b);
        let c = init_params::<f64>(&cfg, 6).unwrap();
        assert_ne!(a, c);
        let Trunk::Independent { w1, w2, b1, .. } = &a.trunk else { unreachable!() };
        assert_eq!(w1.dim(), (8, 16));
        assert_eq!(w2.dim(), (16, 8));
        assert!(b1.iter().all(|&v| v == 0.0));
        let bound = (6.0f64 / 24.0).sqrt();
        assert!(w1.iter().all(|v| v.abs() <= bound));
    }

    #[test]
    fn parameter_counts() {
        let ws = NetworkConfig::ws(512, 102, default_thresholds());
        assert_eq!(parameter_count(&ws), 317_546);
        assert_eq!(parameter_count(&NetworkConfig::ws(1, 2, vec![1])), 9);
        let p = NetworkParams::<f32>::zeros(&ws);
        assert_eq!(p.len(), parameter_count(&ws));
        let ind = NetworkConfig::ind(16, 8, 102, default_thresholds());
        assert_eq!(init_params::<f32>(&ind, 0).unwrap().len(), parameter_count(&ind));
    }

    #[test]
    fn invalid_configs_rejected() {
        assert!(NetworkConfig::ws(4, 1, vec![]).validate().is_err());
        assert!(NetworkConfig::ws(4, 10, vec![5, 5]).validate().is_err());
        assert!(NetworkConfig::ws(4, 10, vec![10]).validate().is_err());
        assert!(NetworkConfig::ws(4, 10, vec![0]).validate().is_err());
        assert!(NetworkConfig::ws(4, 10, vec![]).validate().is_ok());
    }

    #[test]
    fn non_finite_input_rejected() {
        let cfg = NetworkConfig::ws(2, 3, vec![1]);
        let p = NetworkParams::<f64>::zeros(&cfg);
        assert!(matches!(
            forward(&p, &cfg, array![1.0, f64::NAN].view()),
            Err(Error::NonFinite(_))
        ));
        assert!(matches!(
            forward(&p, &cfg, array![1.0].view()),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn zero_logit_grads_give_zero_param_grads() {
        let cfg = NetworkConfig::ind(4, 3, 6, vec![2, 4]);
        let p = init_params::<f64>(&cfg, 1).unwrap();
        let g = backward(
            &p,
            &cfg,
            array![0.1, 0.2, 0.3, 0.4].view(),
            Array1::zeros(6).view(),
            Array1::zeros(2).view(),
        )
        .unwrap();
        assert!(g.tensors().iter().all(|(_, t)| t.iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn ws_equals_ind_with_tied_weights() {
        let ws_cfg = NetworkConfig::ws(6, 7, vec![3]);
        let ws = init_params::<f64>(&ws_cfg, 9).unwrap();
        let ind_cfg = NetworkConfig::ind(6, 6, 7, vec![3]);
        let Trunk::Shared { w, b1, b2 } = &ws.trunk else { unreachable!() };
        let mut ind = ws.clone();
        ind.trunk = Trunk::Independent {
            w1: w.clone(),
            b1: b1.clone(),
            w2: w.clone(),
            b2: b2.clone(),
        };
        let z = array![0.4, -0.2, 0.9, 0.0, 1.3, -0.8];
        let a = forward(&ws, &ws_cfg, z.view()).unwrap();
        let b = forward(&ind, &ind_cfg, z.view()).unwrap();
        assert!((a.expected_age[0] - b.expected_age[0]).abs() <= 1e-12);
        for (x, y) in a.head_probs.iter().zip(b.head_probs.iter()) {
            assert!((x - y).abs() <= 1e-12);
        }
    }

    #[test]
    fn batch_prediction_matches_single_rows() {
        let cfg = NetworkConfig::ind(5, 4, 12, vec![3, 6]);
        let p = init_params::<f64>(&cfg, 2).unwrap();
        let z = Array2::from_shape_fn((7, 5), |(i, j)| ((i * 5 + j) as f64 * 0.37).sin());
        let batch = predict_batch(&p, &cfg, z.view()).unwrap();
        assert_eq!(batch.len(), 7);
        for (i, row) in z.rows().into_iter().enumerate() {
            let single = predict(&p, &cfg, row).unwrap();
            assert!((single.age_estimate - batch[i].age_estimate).abs() < 1e-12);
            for (a, b) in single.underage_scores.iter().zip(&batch[i].underage_scores) {
                assert_eq!(a.0, b.0);
                assert!((a.1 - b.1).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn cast_round_trips_through_f32() {
        let cfg = NetworkConfig::ws(3, 4, vec![2]);
        let p = init_params::<f32>(&cfg, 8).unwrap();
        let back: NetworkParams<f32> = p.cast::<f64>().cast();
        assert_eq!(p, back);
    }
}
