//! Fully connected ReLU networks, backpropagation and ADAM training.
//!
//! The engine is deliberately small: a fixed multilayer-perceptron topology,
//! exact reverse-mode gradients, and a training loop with a random holdout,
//! best-epoch selection and a restart protocol for non-finite losses. The
//! loss is pluggable through [`Loss`], and output transforms are applied by
//! the loss (see the `radial` module), not by the network.

use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{invalid, Error, Result};
use crate::linalg::Matrix;
use crate::random::{rng_from_seed, standard_normal};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
}

/// How the raw network outputs are mapped to model quantities.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OutputTransform {
    Identity,
    /// One output, `u = exp(raw)`.
    Threshold,
    /// Two outputs, `ν = exp(raw₁)` and `ξ = -0.5 + 0.6·logistic(raw₂)`.
    GpParams,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MlpArchitecture {
    pub input_dim: usize,
    pub hidden: Vec<usize>,
    pub output_dim: usize,
    pub activation: Activation,
    pub output_transform: OutputTransform,
}

impl MlpArchitecture {
    pub fn new(input_dim: usize, hidden: Vec<usize>, output_dim: usize) -> Result<Self> {
        if hidden.is_empty() {
            return Err(invalid("a network needs at least one hidden layer"));
        }
        if input_dim == 0 || output_dim == 0 || hidden.contains(&0) {
            return Err(invalid("layer widths must be at least one"));
        }
        Ok(Self { input_dim, hidden, output_dim, activation: Activation::Relu, output_transform: OutputTransform::Identity })
    }

    pub fn with_transform(mut self, transform: OutputTransform) -> Self {
        self.output_transform = transform;
        self
    }

    /// `(outputs, inputs)` for each affine layer, input side first.
    pub fn layer_shapes(&self) -> Vec<(usize, usize)> {
        let mut widths = Vec::with_capacity(self.hidden.len() + 2);
        widths.push(self.input_dim);
        widths.extend_from_slice(&self.hidden);
        widths.push(self.output_dim);
        widths.windows(2).map(|w| (w[1], w[0])).collect()
    }

    pub fn param_count(&self) -> usize {
        self.layer_shapes().iter().map(|(o, i)| o * (i + 1)).sum()
    }
}

/// Weights and biases of every layer, packed into one flat buffer.
///
/// Layer `l` stores its `out × in` weight matrix row-major, followed by its
/// `out` biases.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpParams {
    shapes: Vec<(usize, usize)>,
    offsets: Vec<usize>,
    values: Vec<f64>,
}

impl MlpParams {
    pub fn zeros(arch: &MlpArchitecture) -> Self {
        Self::from_shapes(arch.layer_shapes(), None).expect("shapes from a valid architecture")
    }

    /// He initialisation: weights `N(0, 2 / fan_in)`, zero biases.
    pub fn he_init<R: Rng + ?Sized>(arch: &MlpArchitecture, rng: &mut R) -> Self {
        let mut p = Self::zeros(arch);
        for l in 0..p.layer_count() {
            let fan_in = p.shapes[l].1 as f64;
            let scale = libm::sqrt(2.0 / fan_in);
            for w in p.weights_mut(l) {
                *w = scale * standard_normal(rng);
            }
        }
        p
    }

    /// Rebuilds parameters from layer shapes and the flat value buffer.
    pub fn from_shapes(shapes: Vec<(usize, usize)>, values: Option<Vec<f64>>) -> Result<Self> {
        if shapes.is_empty() || shapes.windows(2).any(|w| w[1].1 != w[0].0) {
            return Err(invalid("inconsistent layer shapes"));
        }
        let mut offsets = Vec::with_capacity(shapes.len() + 1);
        let mut total = 0;
        for &(o, i) in &shapes {
            offsets.push(total);
            total += o * (i + 1);
        }
        offsets.push(total);
        let values = match values {
            Some(v) if v.len() != total => return Err(Error::DimensionMismatch { expected: total, found: v.len() }),
            Some(v) => v,
            None => vec![0.0; total],
        };
        Ok(Self { shapes, offsets, values })
    }

    pub fn shapes(&self) -> &[(usize, usize)] {
        &self.shapes
    }

    pub fn layer_count(&self) -> usize {
        self.shapes.len()
    }

    pub fn input_dim(&self) -> usize {
        self.shapes[0].1
    }

    pub fn output_dim(&self) -> usize {
        self.shapes[self.shapes.len() - 1].0
    }

    pub fn weights(&self, l: usize) -> &[f64] {
        let (o, i) = self.shapes[l];
        &self.values[self.offsets[l]..self.offsets[l] + o * i]
    }

    pub fn weights_mut(&mut self, l: usize) -> &mut [f64] {
        let (o, i) = self.shapes[l];
        &mut self.values[self.offsets[l]..self.offsets[l] + o * i]
    }

    pub fn bias(&self, l: usize) -> &[f64] {
        let (o, i) = self.shapes[l];
        &self.values[self.offsets[l] + o * i..self.offsets[l + 1]]
    }

    pub fn bias_mut(&mut self, l: usize) -> &mut [f64] {
        let (o, i) = self.shapes[l];
        &mut self.values[self.offsets[l] + o * i..self.offsets[l + 1]]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}

/// Scratch buffers for a forward/backward pass.
#[derive(Debug, Clone)]
pub struct Workspace {
    /// Post-activation values per layer; index 0 is the input.
    activations: Vec<Vec<f64>>,
    delta: Vec<f64>,
    delta_prev: Vec<f64>,
}

impl Workspace {
    pub fn new(params: &MlpParams) -> Self {
        let mut activations = vec![vec![0.0; params.input_dim()]];
        activations.extend(params.shapes.iter().map(|&(o, _)| vec![0.0; o]));
        let widest = params.shapes.iter().map(|&(o, i)| o.max(i)).max().unwrap_or(0);
        Self { activations, delta: Vec::with_capacity(widest), delta_prev: Vec::with_capacity(widest) }
    }

    /// Raw outputs of the last forward pass.
    pub fn output(&self) -> &[f64] {
        self.activations.last().expect("at least one layer")
    }
}

/// Forward pass storing intermediate activations; returns the raw outputs.
pub fn forward_cached<'w>(params: &MlpParams, input: &[f64], ws: &'w mut Workspace) -> &'w [f64] {
    debug_assert_eq!(input.len(), params.input_dim());
    ws.activations[0].copy_from_slice(input);
    let last = params.layer_count() - 1;
    for l in 0..params.layer_count() {
        let (o, i) = params.shapes[l];
        let w = params.weights(l);
        let b = params.bias(l);
        let (before, after) = ws.activations.split_at_mut(l + 1);
        let x = &before[l];
        let y = &mut after[0];
        for r in 0..o {
            let row = &w[r * i..(r + 1) * i];
            let mut s = b[r];
            for (wv, xv) in row.iter().zip(x.iter()) {
                s += wv * xv;
            }
            y[r] = if l < last { s.max(0.0) } else { s };
        }
    }
    ws.output()
}

/// Raw (untransformed) network output for one input vector.
pub fn forward(params: &MlpParams, input: &[f64]) -> Result<Vec<f64>> {
    if input.len() != params.input_dim() {
        return Err(Error::DimensionMismatch { expected: params.input_dim(), found: input.len() });
    }
    if input.iter().any(|v| v.is_nan()) {
        return Err(Error::NonFiniteInput);
    }
    let mut ws = Workspace::new(params);
    Ok(forward_cached(params, input, &mut ws).to_vec())
}

/// Adds `∂loss/∂params` to `grad` given `∂loss/∂output` for the input whose
/// forward pass is cached in `ws`.
pub fn backward_accumulate(params: &MlpParams, ws: &mut Workspace, d_output: &[f64], grad: &mut MlpParams) {
    let Workspace { activations, delta, delta_prev } = ws;
    delta.clear();
    delta.extend_from_slice(d_output);
    for l in (0..params.layer_count()).rev() {
        let (o, i) = params.shapes[l];
        let x = &activations[l];
        {
            let gw = grad.weights_mut(l);
            for r in 0..o {
                let dr = delta[r];
                if dr == 0.0 {
                    continue;
                }
                for (g, xv) in gw[r * i..(r + 1) * i].iter_mut().zip(x.iter()) {
                    *g += dr * xv;
                }
            }
        }
        for (g, dr) in grad.bias_mut(l).iter_mut().zip(delta.iter()) {
            *g += dr;
        }
        if l == 0 {
            break;
        }
        // back through the affine map, then the ReLU of layer l-1
        let w = params.weights(l);
        delta_prev.clear();
        delta_prev.resize(i, 0.0);
        for r in 0..o {
            let dr = delta[r];
            if dr == 0.0 {
                continue;
            }
            for (dp, wv) in delta_prev.iter_mut().zip(&w[r * i..(r + 1) * i]) {
                *dp += dr * wv;
            }
        }
        for (dp, a) in delta_prev.iter_mut().zip(x.iter()) {
            if *a <= 0.0 {
                *dp = 0.0;
            }
        }
        core::mem::swap(delta, delta_prev);
    }
}

/// Gradient of a loss with respect to every weight and bias, given the
/// cotangent `∂loss/∂output` at `input`.
pub fn backward(params: &MlpParams, input: &[f64], d_output: &[f64]) -> Result<MlpParams> {
    if d_output.len() != params.output_dim() {
        return Err(Error::DimensionMismatch { expected: params.output_dim(), found: d_output.len() });
    }
    if d_output.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFiniteInput);
    }
    let mut ws = Workspace::new(params);
    forward_cached(params, input, &mut ws);
    let mut grad = MlpParams::from_shapes(params.shapes.clone(), None)?;
    backward_accumulate(params, &mut ws, d_output, &mut grad);
    Ok(grad)
}

/// A step was refused because the gradient contained a non-finite value.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NonFiniteGradient;

/// ADAM optimiser state.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl Adam {
    pub fn new(len: usize) -> Self {
        Self { beta1: 0.9, beta2: 0.999, epsilon: 1e-8, m: vec![0.0; len], v: vec![0.0; len], t: 0 }
    }

    /// Number of steps taken.
    pub fn steps(&self) -> u64 {
        self.t
    }

    /// One bias-corrected ADAM update. Leaves everything untouched and
    /// reports [`NonFiniteGradient`] if any gradient entry is NaN or infinite.
    pub fn step(&mut self, params: &mut [f64], grads: &[f64], learning_rate: f64) -> Result<(), NonFiniteGradient> {
        debug_assert_eq!(params.len(), self.m.len());
        if grads.iter().any(|g| !g.is_finite()) {
            return Err(NonFiniteGradient);
        }
        self.t += 1;
        let c1 = 1.0 - libm::pow(self.beta1, self.t as f64);
        let c2 = 1.0 - libm::pow(self.beta2, self.t as f64);
        for ((p, g), (m, v)) in params.iter_mut().zip(grads).zip(self.m.iter_mut().zip(self.v.iter_mut())) {
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            let m_hat = *m / c1;
            let v_hat = *v / c2;
            *p -= learning_rate * m_hat / (libm::sqrt(v_hat) + self.epsilon);
        }
        Ok(())
    }
}

/// A per-example loss on raw network outputs.
pub trait Loss {
    /// Loss of example `index` given the raw network `output`; writes
    /// `∂loss/∂output` into `grad` (same length as `output`).
    fn eval(&self, index: usize, output: &[f64], grad: &mut [f64]) -> f64;
}

impl<F> Loss for F
where
    F: Fn(usize, &[f64], &mut [f64]) -> f64,
{
    fn eval(&self, index: usize, output: &[f64], grad: &mut [f64]) -> f64 {
        self(index, output, grad)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Fraction of examples held out to monitor convergence.
    pub validation_fraction: f64,
    /// Epochs without a validation improvement before stopping.
    pub patience: usize,
    /// Learning-rate multiplier applied at every restart.
    pub restart_shrink: f64,
    pub max_restarts: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { learning_rate: 1e-3, batch_size: 256, max_epochs: 1000, validation_fraction: 0.2, patience: 50, restart_shrink: 0.5, max_restarts: 20, seed: 0 }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.validation_fraction > 0.0 && self.validation_fraction < 1.0) {
            return Err(invalid("validation_fraction must lie in (0, 1)"));
        }
        if !(self.restart_shrink > 0.0 && self.restart_shrink < 1.0) {
            return Err(invalid("restart_shrink must lie in (0, 1)"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(invalid("learning_rate must be positive"));
        }
        if self.batch_size == 0 {
            return Err(invalid("batch_size must be at least one"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    /// Epoch 0 is the initialisation.
    pub epoch: usize,
    /// Mean training loss over the epoch's batches.
    pub train_loss: f64,
    pub validation_loss: f64,
    pub learning_rate: f64,
}

/// A non-finite batch loss rolled training back to the state before the
/// previous update.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RestartEvent {
    pub epoch: usize,
    pub batch: usize,
    pub learning_rate_before: f64,
    pub learning_rate_after: f64,
    /// ADAM step count after the rollback.
    pub restored_step: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    /// Parameters of the best validation epoch.
    pub params: MlpParams,
    pub history: Vec<EpochRecord>,
    pub restarts: Vec<RestartEvent>,
    pub best_epoch: usize,
    pub best_validation_loss: f64,
    pub train_indices: Vec<usize>,
    pub validation_indices: Vec<usize>,
    /// Set when the restart budget ran out before training finished.
    pub degraded: bool,
}

impl TrainOutcome {
    pub fn initial_validation_loss(&self) -> f64 {
        self.history[0].validation_loss
    }
}

/// Mean loss of `params` over `indices`; `+∞` if any example is non-finite.
pub fn mean_loss<L: Loss + ?Sized>(params: &MlpParams, inputs: &Matrix, loss: &L, indices: &[usize]) -> f64 {
    let mut ws = Workspace::new(params);
    let mut grad = vec![0.0; params.output_dim()];
    let mut total = 0.0;
    for &i in indices {
        let out = forward_cached(params, inputs.row(i), &mut ws);
        let v = loss.eval(i, out, &mut grad);
        if !v.is_finite() {
            return f64::INFINITY;
        }
        total += v;
    }
    total / indices.len() as f64
}

/// Mean loss and mean parameter gradient over a batch.
fn batch_gradient<L: Loss + ?Sized>(
    params: &MlpParams,
    inputs: &Matrix,
    loss: &L,
    batch: &[usize],
    ws: &mut Workspace,
    grad: &mut MlpParams,
    d_out: &mut [f64],
) -> f64 {
    grad.as_mut_slice().iter_mut().for_each(|g| *g = 0.0);
    let mut total = 0.0;
    for &i in batch {
        forward_cached(params, inputs.row(i), ws);
        d_out.iter_mut().for_each(|g| *g = 0.0);
        let v = loss.eval(i, ws.output(), d_out);
        if !v.is_finite() {
            return f64::INFINITY;
        }
        total += v;
        backward_accumulate(params, ws, d_out, grad);
    }
    let scale = 1.0 / batch.len() as f64;
    grad.as_mut_slice().iter_mut().for_each(|g| *g *= scale);
    total * scale
}

/// Trains `init` on the examples in `inputs` (one per row) by minibatch ADAM.
///
/// Examples are shuffled and split into training and validation sets; the
/// parameters from the epoch with the lowest validation loss are returned
/// (the initialisation counts as epoch 0). When a batch loss or gradient is
/// non-finite, the parameters and optimiser state are rolled back to the
/// state before the previous update, the learning rate is multiplied by
/// `restart_shrink`, and the batch is retried. If the rolled-back state is
/// itself non-finite on that batch, the batch is skipped.
pub fn train<L: Loss + ?Sized>(inputs: &Matrix, loss: &L, init: MlpParams, config: &TrainConfig) -> Result<TrainOutcome> {
    config.validate()?;
    let n = inputs.nrows();
    if n < 2 {
        return Err(invalid("training needs at least two examples"));
    }
    if inputs.ncols() != init.input_dim() {
        return Err(Error::DimensionMismatch { expected: init.input_dim(), found: inputs.ncols() });
    }

    let mut rng = rng_from_seed(config.seed);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    let n_val = (libm::round(n as f64 * config.validation_fraction) as usize).clamp(1, n - 1);
    let validation_indices = order[..n_val].to_vec();
    let mut train_indices = order[n_val..].to_vec();

    let initial_train = mean_loss(&init, inputs, loss, &train_indices);
    let initial_val = mean_loss(&init, inputs, loss, &validation_indices);
    if !initial_train.is_finite() || !initial_val.is_finite() {
        return Err(Error::InfiniteInitialLoss);
    }

    let mut params = init;
    let mut adam = Adam::new(params.as_slice().len());
    let mut lr = config.learning_rate;
    let mut best_params = params.clone();
    let mut best_val = initial_val;
    let mut best_epoch = 0;
    let mut history = vec![EpochRecord { epoch: 0, train_loss: initial_train, validation_loss: initial_val, learning_rate: lr }];
    let mut restarts = Vec::new();
    let mut degraded = false;
    let mut stale = 0;

    let mut ws = Workspace::new(&params);
    let mut grad = MlpParams::from_shapes(params.shapes.clone(), None)?;
    let mut d_out = vec![0.0; params.output_dim()];
    // state before the most recent update
    let mut snapshot: Option<(MlpParams, Adam)> = None;
    let mut just_restored = false;

    'epochs: for epoch in 1..=config.max_epochs {
        train_indices.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        let mut batches_used = 0usize;
        for (b, batch) in train_indices.chunks(config.batch_size).enumerate() {
            loop {
                let l = batch_gradient(&params, inputs, loss, batch, &mut ws, &mut grad, &mut d_out);
                if l.is_finite() && grad.is_finite() {
                    snapshot = Some((params.clone(), adam.clone()));
                    adam.step(params.as_mut_slice(), grad.as_slice(), lr).expect("gradient checked finite");
                    epoch_loss += l;
                    batches_used += 1;
                    just_restored = false;
                    break;
                }
                if just_restored {
                    // the rolled-back parameters fail on this batch too
                    just_restored = false;
                    break;
                }
                if restarts.len() >= config.max_restarts {
                    degraded = true;
                    break 'epochs;
                }
                let before = lr;
                lr *= config.restart_shrink;
                if let Some((p, a)) = &snapshot {
                    params.clone_from(p);
                    adam.clone_from(a);
                }
                restarts.push(RestartEvent { epoch, batch: b, learning_rate_before: before, learning_rate_after: lr, restored_step: adam.steps() });
                just_restored = true;
            }
        }

        let val = mean_loss(&params, inputs, loss, &validation_indices);
        history.push(EpochRecord {
            epoch,
            train_loss: if batches_used > 0 { epoch_loss / batches_used as f64 } else { f64::NAN },
            validation_loss: val,
            learning_rate: lr,
        });
        if val < best_val {
            best_val = val;
            best_params.clone_from(&params);
            best_epoch = epoch;
            stale = 0;
        } else {
            stale += 1;
            if stale >= config.patience {
                break;
            }
        }
    }

    Ok(TrainOutcome { params: best_params, history, restarts, best_epoch, best_validation_loss: best_val, train_indices, validation_indices, degraded })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::random::rng_from_seed;
    use core::cell::{Cell, RefCell};
    use proptest::prelude::*;
    use rand::Rng;

    fn arch(shape: &[usize]) -> MlpArchitecture {
        MlpArchitecture::new(shape[0], shape[1..shape.len() - 1].to_vec(), shape[shape.len() - 1]).unwrap()
    }

    /// Straightforward matrix arithmetic, independent of the packed layout.
    fn reference_forward(layers: &[(Matrix, Vec<f64>)], x: &[f64]) -> Vec<f64> {
        let mut h = x.to_vec();
        for (l, (w, b)) in layers.iter().enumerate() {
            let mut z = w.mul_vec(&h);
            for (zi, bi) in z.iter_mut().zip(b) {
                *zi += bi;
            }
            if l + 1 < layers.len() {
                z.iter_mut().for_each(|v| *v = if *v > 0.0 { *v } else { 0.0 });
            }
            h = z;
        }
        h
    }

    fn unpack(p: &MlpParams) -> Vec<(Matrix, Vec<f64>)> {
        (0..p.layer_count())
            .map(|l| {
                let (o, i) = p.shapes()[l];
                (Matrix::from_vec(o, i, p.weights(l).to_vec()).unwrap(), p.bias(l).to_vec())
            })
            .collect()
    }

    fn random_params(a: &MlpArchitecture, rng: &mut impl Rng) -> MlpParams {
        let mut p = MlpParams::he_init(a, rng);
        for b in p.as_mut_slice() {
            if *b == 0.0 {
                *b = 0.1 * standard_normal(rng);
            }
        }
        p
    }

    #[test]
    fn zero_network_outputs_zero() {
        let a = arch(&[3, 4, 2]);
        assert_eq!(forward(&MlpParams::zeros(&a), &[1.0, 2.0, 3.0]).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn hand_computed_single_neuron() {
        let a = arch(&[1, 1, 1]);
        let p = MlpParams::from_shapes(a.layer_shapes(), Some(vec![1.0, -1.0, 3.0, 0.0])).unwrap();
        assert_eq!(forward(&p, &[2.0]).unwrap(), vec![3.0]);
        // below the kink the ReLU cuts everything
        assert_eq!(forward(&p, &[0.5]).unwrap(), vec![0.0]);
    }

    #[test]
    fn forward_rejects_nan_and_wrong_length() {
        let a = arch(&[2, 3, 1]);
        let p = MlpParams::zeros(&a);
        assert_eq!(forward(&p, &[f64::NAN, 0.0]), Err(Error::NonFiniteInput));
        assert!(forward(&p, &[0.0]).is_err());
    }

    #[test]
    fn forward_matches_reference() {
        let mut rng = rng_from_seed(1);
        let a = arch(&[5, 16, 16, 16, 2]);
        for _ in 0..50 {
            let p = random_params(&a, &mut rng);
            let x: Vec<f64> = (0..5).map(|_| standard_normal(&mut rng)).collect();
            let ours = forward(&p, &x).unwrap();
            let theirs = reference_forward(&unpack(&p), &x);
            for (u, v) in ours.iter().zip(&theirs) {
                assert!((u - v).abs() < 1e-12);
            }
        }
    }

    fn finite_difference_check(a: &MlpArchitecture, rng: &mut impl Rng) {
        let p = random_params(a, rng);
        let x: Vec<f64> = (0..a.input_dim).map(|_| standard_normal(rng)).collect();
        let cot: Vec<f64> = (0..a.output_dim).map(|_| standard_normal(rng)).collect();
        let g = backward(&p, &x, &cot).unwrap();
        let objective = |q: &MlpParams| -> f64 {
            let out = reference_forward(&unpack(q), &x);
            out.iter().zip(&cot).map(|(o, c)| o * c).sum()
        };
        let h = 1e-5;
        let mut q = p.clone();
        for k in 0..p.as_slice().len() {
            let orig = q.as_slice()[k];
            q.as_mut_slice()[k] = orig + h;
            let up = objective(&q);
            q.as_mut_slice()[k] = orig - h;
            let down = objective(&q);
            q.as_mut_slice()[k] = orig;
            let fd = (up - down) / (2.0 * h);
            let an = g.as_slice()[k];
            let scale = fd.abs().max(an.abs()).max(1e-3);
            assert!((fd - an).abs() / scale < 1e-4, "param {k}: fd {fd} analytic {an}");
        }
    }

    #[test]
    fn backprop_matches_finite_differences() {
        let mut rng = rng_from_seed(2);
        let a = arch(&[5, 16, 16, 16, 2]);
        for _ in 0..100 {
            finite_difference_check(&a, &mut rng);
        }
        finite_difference_check(&arch(&[2, 3, 1]), &mut rng);
    }

    #[test]
    fn zero_cotangent_and_zero_head_give_zero_hidden_gradients() {
        let mut rng = rng_from_seed(3);
        let a = arch(&[4, 8, 8, 2]);
        let p = random_params(&a, &mut rng);
        let g = backward(&p, &[0.1, 0.2, 0.3, 0.4], &[0.0, 0.0]).unwrap();
        assert!(g.as_slice().iter().all(|&v| v == 0.0));

        let mut p = p;
        p.weights_mut(2).iter_mut().for_each(|w| *w = 0.0);
        let g = backward(&p, &[0.1, 0.2, 0.3, 0.4], &[1.0, -2.0]).unwrap();
        for l in 0..2 {
            assert!(g.weights(l).iter().chain(g.bias(l)).all(|&v| v == 0.0));
        }
        assert!(g.bias(2).iter().all(|&v| v != 0.0));
    }

    #[test]
    fn adam_zero_gradient_is_a_no_op() {
        let mut adam = Adam::new(3);
        let mut p = [1.0, -2.0, 3.0];
        for _ in 0..10 {
            adam.step(&mut p, &[0.0; 3], 0.1).unwrap();
        }
        assert_eq!(p, [1.0, -2.0, 3.0]);
    }

    #[test]
    fn adam_constant_gradient_steps_by_learning_rate() {
        let mut adam = Adam::new(2);
        let mut p = [0.0, 0.0];
        let lr = 1e-3;
        let mut prev = p;
        for t in 0..2000 {
            adam.step(&mut p, &[3.0, -0.5], lr).unwrap();
            if t > 1000 {
                assert!((prev[0] - p[0] - lr).abs() < 1e-9);
                assert!((p[1] - prev[1] - lr).abs() < 1e-8);
            }
            prev = p;
        }
    }

    #[test]
    fn adam_minimises_a_quadratic() {
        let mut adam = Adam::new(1);
        let mut p = [5.0];
        for _ in 0..5000 {
            let g = 2.0 * (p[0] - 1.5);
            adam.step(&mut p, &[g], 0.01).unwrap();
        }
        assert!((p[0] - 1.5).abs() < 1e-3);
    }

    #[test]
    fn adam_refuses_non_finite_gradients() {
        let mut adam = Adam::new(2);
        let mut p = [1.0, 1.0];
        assert_eq!(adam.step(&mut p, &[f64::NAN, 0.0], 0.1), Err(NonFiniteGradient));
        assert_eq!(p, [1.0, 1.0]);
        assert_eq!(adam.steps(), 0);
    }

    fn linear_problem(n: usize, seed: u64) -> (Matrix, Vec<f64>) {
        let mut rng = rng_from_seed(seed);
        let mut x = Matrix::zeros(n, 3);
        let mut y = Vec::with_capacity(n);
        for i in 0..n {
            let row = x.row_mut(i);
            for v in row.iter_mut() {
                *v = standard_normal(&mut rng);
            }
            y.push(1.5 * row[0] - 2.0 * row[1] + 0.5 * row[2] + 0.25);
        }
        (x, y)
    }

    #[test]
    fn zero_loss_keeps_initialisation() {
        let (x, _) = linear_problem(50, 1);
        let a = arch(&[3, 4, 1]);
        let init = MlpParams::he_init(&a, &mut rng_from_seed(5));
        let zero = |_: usize, _: &[f64], g: &mut [f64]| {
            g[0] = 0.0;
            0.0
        };
        let cfg = TrainConfig { max_epochs: 20, ..TrainConfig::default() };
        let out = train(&x, &zero, init.clone(), &cfg).unwrap();
        assert_eq!(out.params, init);
    }

    #[test]
    fn learns_noiseless_linear_map() {
        let (x, y) = linear_problem(2000, 2);
        let a = arch(&[3, 16, 16, 1]);
        let init = MlpParams::he_init(&a, &mut rng_from_seed(6));
        let mse = |i: usize, out: &[f64], g: &mut [f64]| {
            let r = out[0] - y[i];
            g[0] = 2.0 * r;
            r * r
        };
        let cfg = TrainConfig { learning_rate: 3e-3, batch_size: 64, max_epochs: 400, ..TrainConfig::default() };
        let out = train(&x, &mse, init, &cfg).unwrap();
        assert!(out.best_validation_loss < 1e-3, "{}", out.best_validation_loss);
        assert!(out.best_validation_loss <= out.initial_validation_loss());
        // the reported loss is the recomputed loss of the returned parameters
        let recomputed = mean_loss(&out.params, &x, &mse, &out.validation_indices);
        assert_eq!(recomputed, out.best_validation_loss);
        let min = out.history.iter().map(|h| h.validation_loss).fold(f64::INFINITY, f64::min);
        assert_eq!(min, out.best_validation_loss);
        assert_eq!(out.validation_indices.len(), 400);
    }

    #[test]
    fn training_is_deterministic() {
        let (x, y) = linear_problem(300, 3);
        let a = arch(&[3, 8, 1]);
        let mse = |i: usize, out: &[f64], g: &mut [f64]| {
            let r = out[0] - y[i];
            g[0] = 2.0 * r;
            r * r
        };
        let cfg = TrainConfig { max_epochs: 30, batch_size: 32, seed: 9, ..TrainConfig::default() };
        let run = || train(&x, &mse, MlpParams::he_init(&a, &mut rng_from_seed(1)), &cfg).unwrap();
        let (r1, r2) = (run(), run());
        assert_eq!(r1, r2);
        for (a, b) in r1.history.iter().zip(&r2.history) {
            assert_eq!(a.validation_loss.to_bits(), b.validation_loss.to_bits());
        }
    }

    #[test]
    fn infinite_initial_loss_is_rejected() {
        let (x, _) = linear_problem(20, 4);
        let a = arch(&[3, 2, 1]);
        let bad = |i: usize, _: &[f64], _: &mut [f64]| if i == 7 { f64::INFINITY } else { 0.0 };
        assert_eq!(train(&x, &bad, MlpParams::zeros(&a), &TrainConfig::default()), Err(Error::InfiniteInitialLoss));
    }

    #[test]
    fn restart_rolls_back_one_update_and_halves_learning_rate() {
        // One full-size batch per epoch, so the retried batch covers exactly
        // the examples of the previous one.
        let n = 10;
        let (x, y) = linear_problem(n, 5);
        let a = arch(&[3, 4, 1]);
        let calls = Cell::new(0usize);
        let seen: RefCell<Vec<(usize, usize, f64)>> = RefCell::new(Vec::new());
        // initial check: n calls; each epoch: 8 training + 2 validation calls
        let poisoned = n + 2 * 10;
        let loss = |i: usize, out: &[f64], g: &mut [f64]| {
            let c = calls.get();
            calls.set(c + 1);
            seen.borrow_mut().push((c, i, out[0]));
            let r = out[0] - y[i];
            g[0] = 2.0 * r;
            if c == poisoned {
                f64::INFINITY
            } else {
                r * r
            }
        };
        let cfg = TrainConfig { batch_size: 1000, max_epochs: 5, learning_rate: 0.05, ..TrainConfig::default() };
        let out = train(&x, &loss, MlpParams::he_init(&a, &mut rng_from_seed(2)), &cfg).unwrap();
        assert_eq!(out.restarts.len(), 1);
        let ev = out.restarts[0];
        assert_eq!(ev.epoch, 3);
        assert_eq!(ev.learning_rate_after, ev.learning_rate_before * 0.5);
        assert_eq!(ev.learning_rate_before, 0.05);
        assert_eq!(ev.restored_step, 1);
        assert!(!out.degraded);

        // epoch 2's batch evaluation (at the pre-update state of that step)
        // must be reproduced exactly by the retry
        let seen = seen.into_inner();
        let epoch2: Vec<(usize, f64)> = seen[n + 10..n + 18].iter().map(|&(_, i, o)| (i, o)).collect();
        let retry_start = seen.iter().position(|&(c, _, _)| c == poisoned).unwrap() + 1;
        let mut retry: Vec<(usize, f64)> = seen[retry_start..retry_start + 8].iter().map(|&(_, i, o)| (i, o)).collect();
        let mut epoch2 = epoch2;
        epoch2.sort_by_key(|p| p.0);
        retry.sort_by_key(|p| p.0);
        for ((i1, o1), (i2, o2)) in epoch2.iter().zip(&retry) {
            assert_eq!(i1, i2);
            assert_eq!(o1.to_bits(), o2.to_bits());
        }
        assert_eq!(out.history.last().unwrap().learning_rate, 0.025);
    }

    #[test]
    fn exhausted_restarts_flag_degraded_fit() {
        let (x, _) = linear_problem(30, 6);
        let a = arch(&[3, 4, 1]);
        let calls = Cell::new(0usize);
        // finite for the initial check, then always infinite
        let loss = |_: usize, _: &[f64], g: &mut [f64]| {
            calls.set(calls.get() + 1);
            g[0] = 1.0;
            if calls.get() > 30 {
                f64::INFINITY
            } else {
                1.0
            }
        };
        let cfg = TrainConfig { max_restarts: 3, batch_size: 4, ..TrainConfig::default() };
        let init = MlpParams::he_init(&a, &mut rng_from_seed(3));
        let out = train(&x, &loss, init.clone(), &cfg).unwrap();
        assert!(out.degraded);
        assert_eq!(out.restarts.len(), 3);
        assert_eq!(out.params, init);
    }

    #[test]
    fn config_validation() {
        let (x, _) = linear_problem(10, 7);
        let p = MlpParams::zeros(&arch(&[3, 2, 1]));
        let zero = |_: usize, _: &[f64], _: &mut [f64]| 0.0;
        for cfg in [
            TrainConfig { validation_fraction: 1.0, ..TrainConfig::default() },
            TrainConfig { restart_shrink: 1.0, ..TrainConfig::default() },
            TrainConfig { batch_size: 0, ..TrainConfig::default() },
        ] {
            assert!(train(&x, &zero, p.clone(), &cfg).is_err());
        }
        let one = Matrix::zeros(1, 3);
        assert!(train(&one, &zero, p, &TrainConfig::default()).is_err());
    }

    #[test]
    fn architecture_rules() {
        assert!(MlpArchitecture::new(3, vec![], 1).is_err());
        assert!(MlpArchitecture::new(3, vec![4, 0], 1).is_err());
        let a = arch(&[5, 16, 16, 16, 2]);
        assert_eq!(a.layer_shapes(), vec![(16, 5), (16, 16), (16, 16), (2, 16)]);
        assert_eq!(a.param_count(), 16 * 6 + 2 * 16 * 17 + 2 * 17);
        assert!(MlpParams::from_shapes(vec![(2, 3), (1, 3)], None).is_err());
    }

    proptest! {
        #[test]
        fn gradients_are_finite_for_finite_inputs(seed in any::<u64>()) {
            let mut rng = rng_from_seed(seed);
            let a = arch(&[3, 5, 2]);
            let p = random_params(&a, &mut rng);
            let g = backward(&p, &[0.3, -1.0, 2.0], &[1.0, 0.5]).unwrap();
            prop_assert!(g.is_finite());
        }
    }
}
