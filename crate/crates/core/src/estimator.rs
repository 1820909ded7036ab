//! Server-side class-composition estimates and imbalance scoring.
//!
//! A client's uploaded model is probed with the balanced auxiliary set. Per
//! class `i`, the squared norm `g_i` of the output-row gradient is mapped to
//! an estimated share
//!
//! ```text
//! R_i = exp(beta / g_i) / sum_j exp(beta / g_j)
//! ```
//!
//! so a smaller auxiliary gradient means a larger share. Imbalance is the KL
//! divergence of `R` from the uniform distribution and the client's reward is
//! its reciprocal, floored at `epsilon`.

use rand::Rng;

use crate::data::{class_counts, LabeledSample};
use crate::error::{Error, Result};
use crate::fed::ClientUpdate;
use crate::nn::{self, ModelWeights, TrainConfig};
use crate::rng;

/// Squared gradient norms below this are clamped and the estimate flagged.
pub const GRAD_SQ_FLOOR: f64 = 1e-12;

/// Tolerance for the simplex check in [`CompositionVector::new`].
pub const SIMPLEX_TOL: f64 = 1e-9;

/// A probability vector over the `C` classes.
#[derive(Debug, Clone, PartialEq)]
pub struct CompositionVector(Vec<f64>);

impl CompositionVector {
    pub fn new(ratios: Vec<f64>) -> Result<Self> {
        if ratios.is_empty() {
            return Err(Error::InvalidArgument("empty composition vector".into()));
        }
        if ratios.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::InvalidArgument(format!(
                "composition entries must be finite and non-negative: {ratios:?}"
            )));
        }
        let sum: f64 = ratios.iter().sum();
        if (sum - 1.0).abs() > SIMPLEX_TOL {
            return Err(Error::InvalidArgument(format!(
                "composition sums to {sum}, not 1"
            )));
        }
        Ok(Self(ratios))
    }

    /// Normalizes a non-negative vector with a positive sum.
    pub fn normalized(values: &[f64]) -> Result<Self> {
        let sum: f64 = values.iter().sum();
        if !(sum > 0.0 && sum.is_finite()) || values.iter().any(|&v| v < 0.0) {
            return Err(Error::InvalidArgument(format!(
                "cannot normalize {values:?}"
            )));
        }
        Ok(Self(values.iter().map(|v| v / sum).collect()))
    }

    pub(crate) fn from_unchecked(ratios: Vec<f64>) -> Self {
        Self(ratios)
    }

    pub fn uniform(num_classes: usize) -> Self {
        Self(vec![1.0 / num_classes as f64; num_classes])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

/// How the per-class gradient norms are taken from the auxiliary set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum GradientProbe {
    /// Row `i` of the gradient of the loss over the class-`i` auxiliary
    /// samples only. See [`nn::class_conditional_grad_sq_norms`].
    #[default]
    ClassConditional,
    /// Row `i` of the gradient of the loss over the whole auxiliary set.
    /// See [`nn::per_class_grad_sq_norms`].
    Pooled,
}

impl GradientProbe {
    pub fn norms(self, model: &ModelWeights, aux: &[LabeledSample]) -> Result<Vec<f64>> {
        match self {
            GradientProbe::ClassConditional => nn::class_conditional_grad_sq_norms(model, aux),
            GradientProbe::Pooled => nn::per_class_grad_sq_norms(model, aux),
        }
    }
}

impl std::str::FromStr for GradientProbe {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "class_conditional" => Ok(GradientProbe::ClassConditional),
            "pooled" => Ok(GradientProbe::Pooled),
            other => Err(Error::Config(format!(
                "unknown probe {other:?} (expected class_conditional or pooled)"
            ))),
        }
    }
}

impl std::fmt::Display for GradientProbe {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            GradientProbe::ClassConditional => "class_conditional",
            GradientProbe::Pooled => "pooled",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EstimatorConfig {
    /// Temperature of the composition softmax.
    pub beta: f64,
    /// KL floor used in the reward, capping rewards at `1 / epsilon`.
    pub epsilon: f64,
    pub aux_per_class: usize,
    pub probe: GradientProbe,
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        Self {
            beta: 1.0,
            epsilon: 1e-2,
            aux_per_class: 10,
            probe: GradientProbe::default(),
        }
    }
}

impl EstimatorConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.beta > 0.0 && self.beta.is_finite()) {
            return Err(Error::Config(format!(
                "beta must be positive, got {}",
                self.beta
            )));
        }
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(Error::Config(format!(
                "epsilon must be positive, got {}",
                self.epsilon
            )));
        }
        if self.aux_per_class == 0 {
            return Err(Error::Config("aux_per_class must be positive".into()));
        }
        Ok(())
    }

    /// Maps a raw reward into `(0, 1]`.
    pub fn scale_reward(&self, raw: f64) -> f64 {
        raw * self.epsilon
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompositionEstimate {
    pub composition: CompositionVector,
    /// At least one squared norm was below [`GRAD_SQ_FLOOR`] and got clamped.
    pub saturated: bool,
}

/// Softmax of `beta / g_i` over the classes, computed with the largest
/// exponent shifted to zero.
pub fn composition_estimate(grad_sq_norms: &[f64], beta: f64) -> Result<CompositionEstimate> {
    if grad_sq_norms.is_empty() {
        return Err(Error::InvalidArgument("no gradient norms".into()));
    }
    if grad_sq_norms.iter().any(|g| g.is_nan() || *g < 0.0) || beta.is_nan() || beta < 0.0 {
        return Err(Error::InvalidArgument(format!(
            "gradient norms and beta must be non-negative: beta={beta}, norms={grad_sq_norms:?}"
        )));
    }
    let saturated = grad_sq_norms.iter().any(|&g| g < GRAD_SQ_FLOOR);
    let exponents: Vec<f64> = grad_sq_norms
        .iter()
        .map(|&g| beta / g.max(GRAD_SQ_FLOOR))
        .collect();
    let max = exponents.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let weights: Vec<f64> = exponents.iter().map(|e| (e - max).exp()).collect();
    let total: f64 = weights.iter().sum();
    Ok(CompositionEstimate {
        composition: CompositionVector(weights.into_iter().map(|w| w / total).collect()),
        saturated,
    })
}

/// `sum_i R_i ln(R_i * C)` with `0 ln 0 = 0`.
pub fn kl_to_uniform(r: &CompositionVector) -> f64 {
    kl_to_uniform_slice(r.as_slice())
}

pub(crate) fn kl_to_uniform_slice(r: &[f64]) -> f64 {
    let c = r.len() as f64;
    let kl: f64 = r
        .iter()
        .filter(|&&p| p > 0.0)
        .map(|&p| p * (p * c).ln())
        .sum();
    // rounding can leave a tiny negative for near-uniform inputs
    kl.clamp(0.0, c.ln())
}

/// `1 / max(KL(R || uniform), epsilon)`.
pub fn client_reward(r: &CompositionVector, epsilon: f64) -> f64 {
    reward_from_kl(kl_to_uniform(r), epsilon)
}

pub fn reward_from_kl(kl: f64, epsilon: f64) -> f64 {
    1.0 / kl.max(epsilon)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClientEstimate {
    pub client_id: usize,
    pub composition: CompositionVector,
    pub kl: f64,
    /// Unscaled reward.
    pub reward: f64,
    pub saturated: bool,
}

/// Rebuilds the client model `W^g + delta` and estimates its class
/// composition from the auxiliary-set gradients.
pub fn estimate_client(
    update: &ClientUpdate,
    global_weights: &ModelWeights,
    aux: &[LabeledSample],
    cfg: &EstimatorConfig,
) -> Result<ClientEstimate> {
    let client_model = global_weights.add_scaled(&update.delta, 1.0)?;
    let norms = cfg.probe.norms(&client_model, aux)?;
    let est = composition_estimate(&norms, cfg.beta)?;
    let kl = kl_to_uniform(&est.composition);
    Ok(ClientEstimate {
        client_id: update.client_id,
        composition: est.composition,
        kl,
        reward: reward_from_kl(kl, cfg.epsilon),
        saturated: est.saturated,
    })
}

/// Running exponentially weighted mean of composition observations. The
/// numerator and denominator are decayed by `rho` on every new observation.
#[derive(Debug, Clone, PartialEq)]
pub struct Ewma {
    numerator: Vec<f64>,
    denominator: f64,
}

impl Ewma {
    pub fn new(num_classes: usize) -> Self {
        Self {
            numerator: vec![0.0; num_classes],
            denominator: 0.0,
        }
    }

    pub fn push(&mut self, observation: &CompositionVector, rho: f64) -> Result<()> {
        if observation.len() != self.numerator.len() {
            return Err(Error::Shape(format!(
                "observation has {} classes, expected {}",
                observation.len(),
                self.numerator.len()
            )));
        }
        for (n, r) in self.numerator.iter_mut().zip(observation.as_slice()) {
            *n = rho * *n + r;
        }
        self.denominator = rho * self.denominator + 1.0;
        Ok(())
    }

    pub fn numerator(&self) -> &[f64] {
        &self.numerator
    }

    pub fn denominator(&self) -> f64 {
        self.denominator
    }

    /// Current mean, or `None` before the first observation.
    pub fn mean(&self) -> Option<CompositionVector> {
        (self.denominator > 0.0).then(|| {
            CompositionVector(
                self.numerator
                    .iter()
                    .map(|n| n / self.denominator)
                    .collect(),
            )
        })
    }
}

/// Closed-form weighted mean `sum_t rho^(T-t) R(t) / sum_t rho^(T-t)`.
pub fn ewma_composition(history: &[CompositionVector], rho: f64) -> Result<CompositionVector> {
    let last = history
        .last()
        .ok_or_else(|| Error::InvalidArgument("empty composition history".into()))?;
    if !(rho > 0.0 && rho <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "rho must lie in (0, 1], got {rho}"
        )));
    }
    let big_t = history.len();
    let mut num = vec![0.0; last.len()];
    let mut den = 0.0;
    for (t, r) in history.iter().enumerate() {
        if r.len() != num.len() {
            return Err(Error::Shape("composition lengths differ".into()));
        }
        let w = rho.powi((big_t - 1 - t) as i32);
        num.iter_mut()
            .zip(r.as_slice())
            .for_each(|(n, v)| *n += w * v);
        den += w;
    }
    Ok(CompositionVector(
        num.into_iter().map(|n| n / den).collect(),
    ))
}

/// Measured versus predicted per-class gradient ratios on a training set.
#[derive(Debug, Clone, PartialEq)]
pub struct Theorem1Report {
    pub class_counts: Vec<usize>,
    /// Squared output-row gradient norms on the training set, averaged over
    /// the measurement points.
    pub mean_sq_norms: Vec<f64>,
    /// `measured[i][j] = mean_sq_norms[i] / mean_sq_norms[j]`; `None` when
    /// either class is absent or the ratio is undefined.
    pub measured: Vec<Vec<Option<f64>>>,
    /// `target[i][j] = n_i^2 / n_j^2` for classes present on both sides.
    pub target: Vec<Vec<Option<f64>>>,
}

impl Theorem1Report {
    /// `(ln measured, ln target)` for the pair `(i, j)`.
    pub fn log_ratios(&self, i: usize, j: usize) -> Option<(f64, f64)> {
        Some((self.measured[i][j]?.ln(), self.target[i][j]?.ln()))
    }
}

/// Trains a copy of `model` on `train_set` for `epochs` epochs of mini-batch
/// SGD, measuring the per-class squared output-row gradient norms on the
/// whole training set before every epoch, and compares their average ratios
/// with the squared class-count ratios.
pub fn theorem1_ratio_check(
    model: &ModelWeights,
    train_set: &[LabeledSample],
    cfg: &TrainConfig,
    epochs: usize,
    seed: u64,
) -> Result<Theorem1Report> {
    let c = model.num_classes();
    let counts = class_counts(train_set, c);
    if counts.iter().filter(|&&n| n > 0).count() < 2 {
        return Err(Error::InvalidArgument(
            "ratio check needs at least two classes with samples".into(),
        ));
    }
    if epochs == 0 {
        return Err(Error::InvalidArgument(
            "ratio check needs at least one epoch".into(),
        ));
    }
    let mut rng = rng::rng_from(seed, &[0x7e01]);
    let mut current = model.clone();
    let mut sums = vec![0.0; c];
    for epoch in 0..epochs {
        let norms = nn::per_class_grad_sq_norms(&current, train_set)?;
        sums.iter_mut().zip(&norms).for_each(|(s, n)| *s += n);
        let lr = cfg.lr_at(epoch as u64);
        for _ in 0..cfg.batches_per_epoch {
            let grads = if cfg.full_batch {
                nn::mean_gradient(&current, train_set)?
            } else {
                nn::mean_gradient(
                    &current,
                    (0..cfg.batch_size).map(|_| &train_set[rng.gen_range(0..train_set.len())]),
                )?
            };
            current = nn::sgd_step(&current, &grads, lr)?;
        }
    }
    let mean_sq_norms: Vec<f64> = sums.iter().map(|s| s / epochs as f64).collect();
    let pair = |f: &dyn Fn(usize, usize) -> f64| -> Vec<Vec<Option<f64>>> {
        (0..c)
            .map(|i| {
                (0..c)
                    .map(|j| {
                        if counts[i] == 0 || counts[j] == 0 {
                            return None;
                        }
                        let v = f(i, j);
                        (v.is_finite() && v > 0.0).then_some(v)
                    })
                    .collect()
            })
            .collect()
    };
    let measured = pair(&|i, j| mean_sq_norms[i] / mean_sq_norms[j]);
    let target = pair(&|i, j| (counts[i] as f64 / counts[j] as f64).powi(2));
    Ok(Theorem1Report {
        class_counts: counts,
        mean_sq_norms,
        measured,
        target,
    })
}

fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && values[order[end]] == values[order[start]] {
            end += 1;
        }
        let rank = (start + end - 1) as f64 / 2.0 + 1.0;
        for &i in &order[start..end] {
            ranks[i] = rank;
        }
        start = end;
    }
    ranks
}

/// Spearman rank correlation with average ranks for ties. `None` when the
/// lengths differ, fewer than two points are given, or either side is
/// constant.
pub fn spearman(a: &[f64], b: &[f64]) -> Option<f64> {
    if a.len() != b.len() || a.len() < 2 {
        return None;
    }
    let (ra, rb) = (average_ranks(a), average_ranks(b));
    let n = a.len() as f64;
    let (ma, mb) = (ra.iter().sum::<f64>() / n, rb.iter().sum::<f64>() / n);
    let (mut cov, mut va, mut vb) = (0.0, 0.0, 0.0);
    for (x, y) in ra.iter().zip(&rb) {
        cov += (x - ma) * (y - mb);
        va += (x - ma).powi(2);
        vb += (y - mb).powi(2);
    }
    (va > 0.0 && vb > 0.0).then(|| cov / (va * vb).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn comp(v: &[f64]) -> CompositionVector {
        CompositionVector::new(v.to_vec()).unwrap()
    }

    #[test]
    fn equal_norms_or_zero_beta_give_uniform() {
        let r = composition_estimate(&[0.3; 5], 1.0).unwrap().composition;
        assert!(r.as_slice().iter().all(|v| (v - 0.2).abs() < 1e-15));
        let r = composition_estimate(&[0.1, 4.0, 9.0], 0.0)
            .unwrap()
            .composition;
        assert!(r.as_slice().iter().all(|v| (v - 1.0 / 3.0).abs() < 1e-15));
    }

    #[test]
    fn two_class_estimate_value() {
        let r = composition_estimate(&[1.0, 2.0], 1.0).unwrap();
        let (a, b) = (1f64.exp(), 0.5f64.exp());
        assert!((r.composition.as_slice()[0] - a / (a + b)).abs() < 1e-12);
        assert!((r.composition.as_slice()[0] - 0.6225).abs() < 1e-4);
        assert!(!r.saturated);
    }

    #[test]
    fn tiny_norm_is_clamped_and_flagged() {
        let r = composition_estimate(&[0.0, 1.0, 2.0], 1.0).unwrap();
        assert!(r.saturated);
        assert_eq!(r.composition.as_slice()[0], 1.0);
        assert!(r.composition.as_slice().iter().all(|v| v.is_finite()));
    }

    #[test]
    fn negative_norm_is_rejected() {
        assert!(composition_estimate(&[-1.0, 1.0], 1.0).is_err());
        assert!(composition_estimate(&[], 1.0).is_err());
    }

    #[test]
    fn kl_values() {
        assert_eq!(kl_to_uniform(&CompositionVector::uniform(7)), 0.0);
        let mut one_hot = vec![0.0; 10];
        one_hot[3] = 1.0;
        assert!((kl_to_uniform(&comp(&one_hot)) - 10f64.ln()).abs() < 1e-12);
        let kl = kl_to_uniform(&comp(&[0.5, 0.25, 0.25]));
        let expected = 0.5 * 1.5f64.ln() + 0.5 * 0.75f64.ln();
        assert!((kl - expected).abs() < 1e-12);
        assert!((kl - 0.05889).abs() < 1e-5);
    }

    #[test]
    #[allow(clippy::approx_constant)]
    fn reward_values() {
        assert!((client_reward(&CompositionVector::uniform(10), 1e-2) - 100.0).abs() < 1e-9);
        let mut one_hot = vec![0.0; 10];
        one_hot[0] = 1.0;
        let r = client_reward(&comp(&one_hot), 1e-2);
        assert!((r - 1.0 / 10f64.ln()).abs() < 1e-12);
        assert!((r - 0.43429).abs() < 1e-5);
        assert!(reward_from_kl(0.2, 1e-2) > reward_from_kl(0.3, 1e-2));
    }

    #[test]
    fn ewma_cases() {
        let r1 = comp(&[0.2, 0.8]);
        let r2 = comp(&[0.8, 0.2]);
        assert_eq!(
            ewma_composition(std::slice::from_ref(&r1), 0.9).unwrap(),
            r1
        );
        let mean = ewma_composition(&[r1.clone(), r2.clone()], 1.0).unwrap();
        assert!((mean.as_slice()[0] - 0.5).abs() < 1e-15);
        let m = ewma_composition(&[r1.clone(), r2.clone()], 0.5).unwrap();
        assert!((m.as_slice()[0] - 0.6).abs() < 1e-12);
        assert!(ewma_composition(&[], 0.5).is_err());
        assert!(ewma_composition(&[r1], 0.0).is_err());
    }

    #[test]
    fn incremental_ewma_matches_closed_form() {
        let history: Vec<_> = (0..30)
            .map(|t| {
                let a = (t as f64 * 0.37).sin().abs();
                CompositionVector::normalized(&[a, 1.0 - a * 0.5, 0.1]).unwrap()
            })
            .collect();
        let mut ewma = Ewma::new(3);
        assert!(ewma.mean().is_none());
        for (t, r) in history.iter().enumerate() {
            ewma.push(r, 0.9).unwrap();
            let closed = ewma_composition(&history[..=t], 0.9).unwrap();
            for (a, b) in ewma
                .mean()
                .unwrap()
                .as_slice()
                .iter()
                .zip(closed.as_slice())
            {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn spearman_cases() {
        assert_eq!(spearman(&[1.0, 2.0, 3.0], &[10.0, 20.0, 30.0]), Some(1.0));
        assert_eq!(spearman(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]), Some(-1.0));
        assert_eq!(spearman(&[1.0, 1.0], &[1.0, 2.0]), None);
        // ties share the average rank
        let r = spearman(&[0.0, 0.0, 1.0], &[0.1, 0.2, 0.9]).unwrap();
        assert!((r - 0.866_025_403_784_438_6).abs() < 1e-12);
    }

    #[test]
    fn theorem1_check_needs_two_classes() {
        let model = ModelWeights::glorot_uniform(&[2, 4, 3], 0).unwrap();
        let data = vec![LabeledSample {
            features: vec![1.0, 0.0],
            label: 1,
        }];
        assert!(theorem1_ratio_check(&model, &data, &TrainConfig::default(), 2, 0).is_err());
    }

    #[test]
    fn theorem1_check_equal_counts_two_outputs() {
        // two output neurons: the row gradients are exact negatives
        let model = ModelWeights::glorot_uniform(&[2, 6, 2], 1).unwrap();
        let data: Vec<_> = (0..40)
            .map(|i| LabeledSample {
                features: vec![if i % 2 == 0 { 1.0 } else { -1.0 }, (i as f64 * 0.1).cos()],
                label: i % 2,
            })
            .collect();
        let report = theorem1_ratio_check(&model, &data, &TrainConfig::default(), 3, 0).unwrap();
        assert!((report.measured[0][1].unwrap() - 1.0).abs() < 1e-9);
        assert_eq!(report.target[0][1], Some(1.0));
    }

    const PROBES: [GradientProbe; 2] = [GradientProbe::ClassConditional, GradientProbe::Pooled];

    fn symmetric_model() -> ModelWeights {
        let mut m = ModelWeights::zeros(&[2, 3, 4]).unwrap();
        m.weights_mut()[0]
            .as_mut_slice()
            .copy_from_slice(&[0.5, -0.2, 0.1, 0.3, 0.7, 0.4]);
        for i in 0..4 {
            for (j, v) in [0.2, -0.1, 0.6].iter().enumerate() {
                m.weights_mut()[1].set(i, j, *v);
            }
        }
        m
    }

    #[test]
    fn zero_delta_on_symmetric_model_gives_uniform() {
        let global = symmetric_model();
        let aux: Vec<_> = (0..8)
            .map(|i| LabeledSample {
                features: vec![1.0, 0.5],
                label: i % 4,
            })
            .collect();
        let update = ClientUpdate {
            client_id: 3,
            delta: crate::nn::GradientSet::zeros_like(&global),
            num_samples: 10,
        };
        for probe in PROBES {
            let cfg = EstimatorConfig {
                probe,
                ..Default::default()
            };
            let est = estimate_client(&update, &global, &aux, &cfg).unwrap();
            assert_eq!(est.client_id, 3);
            for v in est.composition.as_slice() {
                assert!((v - 0.25).abs() < 1e-9);
            }
            assert!(est.kl < 1e-9);
        }
    }

    #[test]
    fn single_class_client_peaks_on_its_class() {
        let data = crate::data::generate_dataset(60, 4, 6, 1.0, 3).unwrap();
        let aux = crate::data::auxiliary_set(&data, 4, 10, 4).unwrap();
        let own: Vec<_> = data.iter().filter(|s| s.label == 1).cloned().collect();
        let client = crate::data::ClientDataset::new(0, 4, own).unwrap();
        let global = ModelWeights::glorot_uniform(&[6, 16, 4], 5).unwrap();
        let train = TrainConfig {
            epochs: 20,
            ..Default::default()
        };
        let update = crate::fed::local_train(&global, &client, &train, 0, 9).unwrap();
        let cfg = EstimatorConfig::default();
        let est = estimate_client(&update, &global, &aux, &cfg).unwrap();
        assert_eq!(nn::argmax(est.composition.as_slice()), 1);
        assert_eq!(est, estimate_client(&update, &global, &aux, &cfg).unwrap());
    }

    #[test]
    fn probe_names_round_trip() {
        for probe in PROBES {
            assert_eq!(probe.to_string().parse::<GradientProbe>().unwrap(), probe);
        }
        assert!("mean".parse::<GradientProbe>().is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn norms() -> impl Strategy<Value = Vec<f64>> {
            proptest::collection::vec(1e-3f64..10.0, 2..10)
        }

        proptest! {
            #[test]
            fn estimate_on_simplex(g in norms(), beta in 1e-3f64..10.0) {
                let r = composition_estimate(&g, beta).unwrap().composition;
                let sum: f64 = r.as_slice().iter().sum();
                prop_assert!((sum - 1.0).abs() < 1e-9);
                prop_assert!(r.as_slice().iter().all(|&v| v >= 0.0));
            }

            #[test]
            fn estimate_is_permutation_equivariant(g in norms(), beta in 1e-2f64..5.0, rot in 0usize..10) {
                let k = rot % g.len();
                let mut rotated = g.clone();
                rotated.rotate_left(k);
                let a = composition_estimate(&g, beta).unwrap().composition.into_inner();
                let mut b = composition_estimate(&rotated, beta).unwrap().composition.into_inner();
                b.rotate_right(k);
                for (x, y) in a.iter().zip(&b) {
                    prop_assert!((x - y).abs() < 1e-15);
                }
            }

            #[test]
            fn smaller_norm_means_larger_share(g in proptest::collection::vec(0.5f64..2.0, 2..6), beta in 0.1f64..2.0) {
                let r = composition_estimate(&g, beta).unwrap().composition;
                for i in 0..g.len() {
                    for j in 0..g.len() {
                        if g[i] < g[j] {
                            prop_assert!(r.as_slice()[i] > r.as_slice()[j]);
                        }
                    }
                }
            }

            #[test]
            fn kl_bounded(raw in proptest::collection::vec(0.0f64..1.0, 2..12)) {
                prop_assume!(raw.iter().sum::<f64>() > 1e-6);
                let r = CompositionVector::normalized(&raw).unwrap();
                let kl = kl_to_uniform(&r);
                prop_assert!(kl >= 0.0 && kl <= (raw.len() as f64).ln() + 1e-12);
            }

            #[test]
            fn ewma_stays_on_simplex(raw in proptest::collection::vec(proptest::collection::vec(0.01f64..1.0, 4), 1..20), rho in 0.01f64..1.0) {
                let history: Vec<_> = raw.iter().map(|v| CompositionVector::normalized(v).unwrap()).collect();
                let m = ewma_composition(&history, rho).unwrap();
                prop_assert!((m.as_slice().iter().sum::<f64>() - 1.0).abs() < 1e-12);
            }
        }
    }
}
