//! Dense feed-forward classifier trained from scratch.
//!
//! Hidden layers use ReLU, the output layer is a softmax over `C` classes and
//! training minimizes mean cross-entropy with plain SGD. Weight matrices are
//! row-major with shape `(out_dim, in_dim)`, so row `i` of the final matrix
//! holds the weights feeding output neuron `i`, i.e. class `i`.

use rand::Rng;

use crate::data::LabeledSample;
use crate::error::{Error, Result};
use crate::rng;

/// Probabilities are floored here before taking the log in the loss.
pub const PROB_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    values: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            values: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, values: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::Shape(format!(
                "matrix {rows}x{cols} has a zero dimension"
            )));
        }
        if values.len() != rows * cols {
            return Err(Error::Shape(format!(
                "matrix {rows}x{cols} needs {} values, got {}",
                rows * cols,
                values.len()
            )));
        }
        Ok(Self { rows, cols, values })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.cols..(i + 1) * self.cols]
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.cols + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.values[i * self.cols + j] = v;
    }

    fn same_shape(&self, other: &Matrix) -> bool {
        self.rows == other.rows && self.cols == other.cols
    }

    /// `out = self * x + bias`
    fn affine_into(&self, x: &[f64], bias: &[f64], out: &mut [f64]) {
        for (i, o) in out.iter_mut().enumerate() {
            let row = self.row(i);
            *o = bias[i] + row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>();
        }
    }
}

/// Parameters of the network: one weight matrix and bias vector per layer
/// transition.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelWeights {
    layer_sizes: Vec<usize>,
    weights: Vec<Matrix>,
    biases: Vec<Vec<f64>>,
}

/// Gradient (or weight difference) with the same layout as [`ModelWeights`].
#[derive(Debug, Clone, PartialEq)]
pub struct GradientSet {
    pub weights: Vec<Matrix>,
    pub biases: Vec<Vec<f64>>,
}

fn check_layer_sizes(layer_sizes: &[usize]) -> Result<()> {
    if layer_sizes.len() < 2 {
        return Err(Error::Shape(
            "a network needs at least an input and an output layer".into(),
        ));
    }
    if layer_sizes.contains(&0) {
        return Err(Error::Shape(format!("zero-width layer in {layer_sizes:?}")));
    }
    Ok(())
}

impl ModelWeights {
    pub fn zeros(layer_sizes: &[usize]) -> Result<Self> {
        check_layer_sizes(layer_sizes)?;
        let weights = layer_sizes
            .windows(2)
            .map(|w| Matrix::zeros(w[1], w[0]))
            .collect();
        let biases = layer_sizes[1..].iter().map(|&n| vec![0.0; n]).collect();
        Ok(Self {
            layer_sizes: layer_sizes.to_vec(),
            weights,
            biases,
        })
    }

    /// Glorot-uniform weights in `±sqrt(6 / (fan_in + fan_out))`, zero biases.
    pub fn glorot_uniform(layer_sizes: &[usize], seed: u64) -> Result<Self> {
        let mut model = Self::zeros(layer_sizes)?;
        let mut rng = rng::rng_from(seed, &[0x1417]);
        for m in &mut model.weights {
            let limit = (6.0 / (m.rows + m.cols) as f64).sqrt();
            for v in m.as_mut_slice() {
                *v = rng.gen_range(-limit..limit);
            }
        }
        Ok(model)
    }

    pub fn from_parts(
        layer_sizes: Vec<usize>,
        weights: Vec<Matrix>,
        biases: Vec<Vec<f64>>,
    ) -> Result<Self> {
        check_layer_sizes(&layer_sizes)?;
        let transitions = layer_sizes.len() - 1;
        if weights.len() != transitions || biases.len() != transitions {
            return Err(Error::Shape(format!(
                "expected {transitions} weight matrices and bias vectors, got {} and {}",
                weights.len(),
                biases.len()
            )));
        }
        for (l, (w, b)) in weights.iter().zip(&biases).enumerate() {
            let (fan_in, fan_out) = (layer_sizes[l], layer_sizes[l + 1]);
            if w.rows != fan_out || w.cols != fan_in || b.len() != fan_out {
                return Err(Error::Shape(format!(
                    "layer {l}: expected {fan_out}x{fan_in} weights and {fan_out} biases, got {}x{} and {}",
                    w.rows,
                    w.cols,
                    b.len()
                )));
            }
        }
        Ok(Self {
            layer_sizes,
            weights,
            biases,
        })
    }

    pub fn layer_sizes(&self) -> &[usize] {
        &self.layer_sizes
    }

    pub fn input_dim(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn num_classes(&self) -> usize {
        *self.layer_sizes.last().unwrap()
    }

    pub fn weights(&self) -> &[Matrix] {
        &self.weights
    }

    pub fn biases(&self) -> &[Vec<f64>] {
        &self.biases
    }

    pub fn weights_mut(&mut self) -> &mut [Matrix] {
        &mut self.weights
    }

    pub fn biases_mut(&mut self) -> &mut [Vec<f64>] {
        &mut self.biases
    }

    /// Hidden-to-output weights; row `i` feeds the output neuron of class `i`.
    pub fn output_layer(&self) -> &Matrix {
        self.weights.last().unwrap()
    }

    pub fn num_params(&self) -> usize {
        self.weights.iter().map(|m| m.values.len()).sum::<usize>()
            + self.biases.iter().map(Vec::len).sum::<usize>()
    }

    /// All parameters in a fixed order: each layer's weights then its biases.
    pub fn params(&self) -> impl Iterator<Item = f64> + '_ {
        self.weights
            .iter()
            .zip(&self.biases)
            .flat_map(|(w, b)| w.values.iter().chain(b.iter()).copied())
    }

    fn params_mut(&mut self) -> impl Iterator<Item = &mut f64> + '_ {
        self.weights
            .iter_mut()
            .zip(self.biases.iter_mut())
            .flat_map(|(w, b)| w.values.iter_mut().chain(b.iter_mut()))
    }

    fn check_compatible(&self, g: &GradientSet) -> Result<()> {
        let ok = g.weights.len() == self.weights.len()
            && g.biases.len() == self.biases.len()
            && self
                .weights
                .iter()
                .zip(&g.weights)
                .all(|(a, b)| a.same_shape(b))
            && self
                .biases
                .iter()
                .zip(&g.biases)
                .all(|(a, b)| a.len() == b.len());
        if ok {
            Ok(())
        } else {
            Err(Error::Shape(
                "gradient layout does not match the model".into(),
            ))
        }
    }

    /// Returns `self + scale * delta`.
    pub fn add_scaled(&self, delta: &GradientSet, scale: f64) -> Result<ModelWeights> {
        self.check_compatible(delta)?;
        let mut out = self.clone();
        for (p, d) in out.params_mut().zip(delta.values()) {
            *p += scale * d;
        }
        Ok(out)
    }

    /// Weight difference `self - base`.
    pub fn difference(&self, base: &ModelWeights) -> Result<GradientSet> {
        if self.layer_sizes != base.layer_sizes {
            return Err(Error::Shape(format!(
                "cannot subtract models with layers {:?} and {:?}",
                self.layer_sizes, base.layer_sizes
            )));
        }
        let mut out = GradientSet::zeros_like(self);
        for ((o, a), b) in out.values_mut().zip(self.params()).zip(base.params()) {
            *o = a - b;
        }
        Ok(out)
    }
}

impl GradientSet {
    pub fn zeros_like(model: &ModelWeights) -> Self {
        Self {
            weights: model
                .weights
                .iter()
                .map(|m| Matrix::zeros(m.rows, m.cols))
                .collect(),
            biases: model.biases.iter().map(|b| vec![0.0; b.len()]).collect(),
        }
    }

    pub fn values(&self) -> impl Iterator<Item = f64> + '_ {
        self.weights
            .iter()
            .zip(&self.biases)
            .flat_map(|(w, b)| w.values.iter().chain(b.iter()).copied())
    }

    pub fn values_mut(&mut self) -> impl Iterator<Item = &mut f64> + '_ {
        self.weights
            .iter_mut()
            .zip(self.biases.iter_mut())
            .flat_map(|(w, b)| w.values.iter_mut().chain(b.iter_mut()))
    }

    pub fn same_layout(&self, other: &GradientSet) -> bool {
        self.weights.len() == other.weights.len()
            && self.biases.len() == other.biases.len()
            && self
                .weights
                .iter()
                .zip(&other.weights)
                .all(|(a, b)| a.same_shape(b))
            && self
                .biases
                .iter()
                .zip(&other.biases)
                .all(|(a, b)| a.len() == b.len())
    }

    /// `self += scale * other`
    pub fn add_scaled(&mut self, other: &GradientSet, scale: f64) -> Result<()> {
        if !self.same_layout(other) {
            return Err(Error::Shape("gradient layouts differ".into()));
        }
        for (a, b) in self.values_mut().zip(other.values()) {
            *a += scale * b;
        }
        Ok(())
    }

    pub fn scale(&mut self, factor: f64) {
        for v in self.values_mut() {
            *v *= factor;
        }
    }

    pub fn squared_norm(&self) -> f64 {
        self.values().map(|v| v * v).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    /// Multiplicative learning-rate decay applied once per communication round.
    pub lr_decay: f64,
    pub epochs: usize,
    pub batches_per_epoch: usize,
    pub batch_size: usize,
    /// Use the whole shard as every batch instead of sampling mini-batches.
    pub full_batch: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.1,
            lr_decay: 0.996,
            epochs: 5,
            batches_per_epoch: 10,
            batch_size: 10,
            full_batch: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!(
                "learning rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return Err(Error::Config(format!(
                "learning-rate decay must lie in (0, 1], got {}",
                self.lr_decay
            )));
        }
        if self.epochs == 0 || self.batches_per_epoch == 0 || self.batch_size == 0 {
            return Err(Error::Config(
                "epochs, batches per epoch and batch size must be positive".into(),
            ));
        }
        Ok(())
    }

    /// Learning rate used during communication round `round`.
    pub fn lr_at(&self, round: u64) -> f64 {
        self.learning_rate * self.lr_decay.powf(round as f64)
    }
}

/// Per-layer buffers for one forward/backward pass.
struct Scratch {
    /// `activations[0]` is the input; the last entry holds the softmax output.
    activations: Vec<Vec<f64>>,
    deltas: Vec<Vec<f64>>,
}

impl Scratch {
    fn new(model: &ModelWeights) -> Self {
        Self {
            activations: model.layer_sizes.iter().map(|&n| vec![0.0; n]).collect(),
            deltas: model.layer_sizes[1..]
                .iter()
                .map(|&n| vec![0.0; n])
                .collect(),
        }
    }

    fn probs(&self) -> &[f64] {
        self.activations.last().unwrap()
    }

    fn penultimate(&self) -> &[f64] {
        &self.activations[self.activations.len() - 2]
    }

    fn forward(&mut self, model: &ModelWeights, input: &[f64]) -> Result<()> {
        if input.len() != model.input_dim() {
            return Err(Error::Shape(format!(
                "input has {} features, model expects {}",
                input.len(),
                model.input_dim()
            )));
        }
        self.activations[0].copy_from_slice(input);
        let last = model.weights.len() - 1;
        for l in 0..=last {
            let (prev, next) = self.activations.split_at_mut(l + 1);
            let out = &mut next[0];
            model.weights[l].affine_into(&prev[l], &model.biases[l], out);
            if l < last {
                out.iter_mut().for_each(|v| *v = v.max(0.0));
            } else {
                softmax_in_place(out);
            }
        }
        Ok(())
    }
}

fn softmax_in_place(logits: &mut [f64]) {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in logits.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    logits.iter_mut().for_each(|v| *v /= sum);
}

/// Class probabilities for one input.
pub fn forward(model: &ModelWeights, input: &[f64]) -> Result<Vec<f64>> {
    let mut scratch = Scratch::new(model);
    scratch.forward(model, input)?;
    Ok(scratch.probs().to_vec())
}

/// `-ln p[label]`, with `p[label]` floored at [`PROB_FLOOR`].
pub fn cross_entropy_loss(probs: &[f64], label: usize) -> Result<f64> {
    let p = probs.get(label).ok_or_else(|| {
        Error::InvalidArgument(format!(
            "label {label} out of range for {} classes",
            probs.len()
        ))
    })?;
    Ok(-p.max(PROB_FLOOR).ln())
}

/// Mean cross-entropy of the model over `samples`.
pub fn batch_loss(model: &ModelWeights, samples: &[LabeledSample]) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::InvalidArgument("empty batch".into()));
    }
    let mut scratch = Scratch::new(model);
    let mut total = 0.0;
    for s in samples {
        scratch.forward(model, &s.features)?;
        total += cross_entropy_loss(scratch.probs(), s.label)?;
    }
    Ok(total / samples.len() as f64)
}

fn check_label(model: &ModelWeights, label: usize) -> Result<()> {
    if label >= model.num_classes() {
        return Err(Error::InvalidArgument(format!(
            "label {label} out of range for {} classes",
            model.num_classes()
        )));
    }
    Ok(())
}

/// Gradient of the mean cross-entropy over the given samples.
pub(crate) fn mean_gradient<'a, I>(model: &ModelWeights, batch: I) -> Result<GradientSet>
where
    I: IntoIterator<Item = &'a LabeledSample>,
{
    let mut grads = GradientSet::zeros_like(model);
    let mut scratch = Scratch::new(model);
    let last = model.weights.len() - 1;
    let mut count = 0usize;
    for sample in batch {
        check_label(model, sample.label)?;
        scratch.forward(model, &sample.features)?;
        count += 1;

        // Softmax + cross-entropy: dL/dz = p - onehot(y).
        let Scratch {
            activations,
            deltas,
        } = &mut scratch;
        deltas[last].copy_from_slice(activations.last().unwrap());
        deltas[last][sample.label] -= 1.0;

        for l in (0..=last).rev() {
            let input = &scratch.activations[l];
            let delta = &scratch.deltas[l];
            let gw = &mut grads.weights[l];
            for (i, &d) in delta.iter().enumerate() {
                if d == 0.0 {
                    continue;
                }
                let row = &mut gw.values[i * gw.cols..(i + 1) * gw.cols];
                row.iter_mut().zip(input).for_each(|(g, a)| *g += d * a);
            }
            grads.biases[l]
                .iter_mut()
                .zip(delta)
                .for_each(|(g, d)| *g += d);

            if l > 0 {
                let w = &model.weights[l];
                let (lower, upper) = scratch.deltas.split_at_mut(l);
                let prev = &mut lower[l - 1];
                let delta = &upper[0];
                let act = &scratch.activations[l];
                for (j, p) in prev.iter_mut().enumerate() {
                    *p = if act[j] > 0.0 {
                        delta.iter().enumerate().map(|(i, d)| d * w.get(i, j)).sum()
                    } else {
                        0.0
                    };
                }
            }
        }
    }
    if count == 0 {
        return Err(Error::InvalidArgument("empty batch".into()));
    }
    grads.scale(1.0 / count as f64);
    Ok(grads)
}

/// Exact gradient of the mean batch cross-entropy.
pub fn backward(model: &ModelWeights, batch: &[LabeledSample]) -> Result<GradientSet> {
    mean_gradient(model, batch)
}

/// One SGD step: every parameter `p` becomes `p - lr * g`.
pub fn sgd_step(model: &ModelWeights, grads: &GradientSet, lr: f64) -> Result<ModelWeights> {
    model.add_scaled(grads, -lr)
}

/// Gradient of the mean loss over `samples` restricted to the output-layer
/// weights (biases excluded).
pub(crate) fn output_layer_gradient<'a, I>(model: &ModelWeights, samples: I) -> Result<Matrix>
where
    I: IntoIterator<Item = &'a LabeledSample>,
{
    let out = model.output_layer();
    let mut grad = Matrix::zeros(out.rows, out.cols);
    let mut scratch = Scratch::new(model);
    let mut count = 0usize;
    for sample in samples {
        check_label(model, sample.label)?;
        scratch.forward(model, &sample.features)?;
        count += 1;
        let hidden = scratch.penultimate();
        for (i, &p) in scratch.probs().iter().enumerate() {
            let d = if i == sample.label { p - 1.0 } else { p };
            let row = &mut grad.values[i * grad.cols..(i + 1) * grad.cols];
            row.iter_mut().zip(hidden).for_each(|(g, h)| *g += d * h);
        }
    }
    if count == 0 {
        return Err(Error::InvalidArgument("empty dataset".into()));
    }
    let inv = 1.0 / count as f64;
    grad.values.iter_mut().for_each(|v| *v *= inv);
    Ok(grad)
}

/// Squared norm of each row of the output-layer weight gradient of the mean
/// loss over `dataset`. Entry `i` belongs to the output neuron of class `i`.
pub fn per_class_grad_sq_norms(
    model: &ModelWeights,
    dataset: &[LabeledSample],
) -> Result<Vec<f64>> {
    let grad = output_layer_gradient(model, dataset)?;
    Ok(row_sq_norms(&grad))
}

/// Like [`per_class_grad_sq_norms`], but entry `i` uses only the samples
/// labelled `i`: the squared norm of the gradient with respect to `w_i` of
/// the mean loss over that class. Every class must be present.
pub fn class_conditional_grad_sq_norms(
    model: &ModelWeights,
    dataset: &[LabeledSample],
) -> Result<Vec<f64>> {
    let c = model.num_classes();
    let mut by_class: Vec<Vec<&LabeledSample>> = vec![Vec::new(); c];
    for s in dataset {
        check_label(model, s.label)?;
        by_class[s.label].push(s);
    }
    by_class
        .iter()
        .enumerate()
        .map(|(i, samples)| {
            if samples.is_empty() {
                return Err(Error::InvalidArgument(format!("no samples of class {i}")));
            }
            let grad = output_layer_gradient(model, samples.iter().copied())?;
            Ok(grad.row(i).iter().map(|v| v * v).sum())
        })
        .collect()
}

pub(crate) fn row_sq_norms(m: &Matrix) -> Vec<f64> {
    (0..m.rows)
        .map(|i| m.row(i).iter().map(|v| v * v).sum())
        .collect()
}

/// Index of the largest probability, ties resolved toward the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Accuracy and mean loss over `samples` in one pass.
pub(crate) fn accuracy_and_loss(
    model: &ModelWeights,
    samples: &[LabeledSample],
) -> Result<(f64, f64)> {
    if samples.is_empty() {
        return Err(Error::InvalidArgument("empty evaluation set".into()));
    }
    let mut scratch = Scratch::new(model);
    let (mut correct, mut loss) = (0usize, 0.0);
    for s in samples {
        check_label(model, s.label)?;
        scratch.forward(model, &s.features)?;
        if argmax(scratch.probs()) == s.label {
            correct += 1;
        }
        loss += cross_entropy_loss(scratch.probs(), s.label)?;
    }
    let n = samples.len() as f64;
    Ok((correct as f64 / n, loss / n))
}
