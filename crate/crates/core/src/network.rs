//! Dense feedforward networks with multiplicative noise on layer inputs,
//! backpropagation through a fixed noise realization, and minibatch SGD.

use serde::{Deserialize, Serialize};

use crate::data::{batches, Dataset};
use crate::error::{Error, Result};
use crate::metrics::{accuracy, class_indices, correlation_norm, silhouette, zero_fraction, MetricsRecord, DEFAULT_ZERO_TOL};
use crate::noise::{NoiseSample, NoiseSpec, PreparedNoise};
use crate::numerics::{Matrix, Rng};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Identity,
    /// Identity on the logits; the softmax lives in the cross-entropy loss.
    SoftmaxHead,
}

impl Activation {
    fn apply(self, z: &Matrix) -> Matrix {
        match self {
            Activation::Relu => z.map(|v| v.max(0.0)),
            Activation::Identity | Activation::SoftmaxHead => z.clone(),
        }
    }

    /// Multiplies `grad` in place by `σ'(z)`.
    fn backprop(self, z: &Matrix, grad: &mut Matrix) {
        if self == Activation::Relu {
            for (g, &v) in grad.as_mut_slice().iter_mut().zip(z.as_slice()) {
                if v <= 0.0 {
                    *g = 0.0;
                }
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub in_dim: usize,
    pub out_dim: usize,
    pub activation: Activation,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Loss {
    /// `(1/n) Σ_i ‖o_i − t_i‖²`.
    Squared,
    /// `(1/n) Σ_i −Σ_k t_ik log softmax(o_i)_k`.
    CrossEntropy,
}

impl Loss {
    pub fn value(self, output: &Matrix, target: &Matrix) -> Result<f64> {
        check_same(output, target, "loss")?;
        let n = output.rows() as f64;
        Ok(match self {
            Loss::Squared => output.zip_with(target, "loss", |o, t| (o - t) * (o - t))?.sum() / n,
            Loss::CrossEntropy => {
                let mut total = 0.0;
                for (o, t) in output.row_iter().zip(target.row_iter()) {
                    let lse = log_sum_exp(o);
                    total -= o.iter().zip(t).map(|(oi, ti)| ti * (oi - lse)).sum::<f64>();
                }
                total / n
            }
        })
    }

    /// `∂ loss / ∂ output`.
    pub fn gradient(self, output: &Matrix, target: &Matrix) -> Result<Matrix> {
        check_same(output, target, "loss gradient")?;
        let n = output.rows() as f64;
        Ok(match self {
            Loss::Squared => output.zip_with(target, "loss gradient", |o, t| 2.0 * (o - t) / n)?,
            Loss::CrossEntropy => {
                let mut g = Matrix::zeros(output.rows(), output.cols());
                for i in 0..output.rows() {
                    let o = output.row(i);
                    let lse = log_sum_exp(o);
                    let t = target.row(i);
                    for (k, gk) in g.row_mut(i).iter_mut().enumerate() {
                        *gk = ((o[k] - lse).exp() - t[k]) / n;
                    }
                }
                g
            }
        })
    }
}

fn log_sum_exp(v: &[f64]) -> f64 {
    let m = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

fn check_same(a: &Matrix, b: &Matrix, op: &'static str) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::dims(op, format!("{:?} vs {:?}", a.shape(), b.shape())));
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DenseLayer {
    pub spec: LayerSpec,
    /// `out_dim × in_dim`.
    pub weights: Matrix,
    pub bias: Vec<f64>,
}

/// Feedforward network; serializes to the JSON model dump.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Network {
    pub layers: Vec<DenseLayer>,
    pub loss: Loss,
}

/// Per-layer quantities recorded by [`Network::forward_train`].
#[derive(Clone, Debug)]
pub struct ForwardTrace {
    /// Clean input to each layer, `y^(l−1)`.
    pub inputs: Vec<Matrix>,
    /// Noise applied to each layer input (`None` means `r = 1`).
    pub noise: Vec<Option<NoiseSample>>,
    /// `ỹ^(l−1) = r ⊙ y^(l−1)`.
    pub noisy_inputs: Vec<Matrix>,
    /// `z^(l)`.
    pub pre_activations: Vec<Matrix>,
    pub output: Matrix,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    pub weights: Vec<Matrix>,
    pub biases: Vec<Vec<f64>>,
}

impl Gradients {
    pub fn zeros_like(net: &Network) -> Self {
        Self {
            weights: net.layers.iter().map(|l| Matrix::zeros(l.weights.rows(), l.weights.cols())).collect(),
            biases: net.layers.iter().map(|l| vec![0.0; l.bias.len()]).collect(),
        }
    }

    pub fn scale(&self, s: f64) -> Self {
        Self {
            weights: self.weights.iter().map(|w| w.scale(s)).collect(),
            biases: self.biases.iter().map(|b| b.iter().map(|v| v * s).collect()).collect(),
        }
    }

    pub fn max_abs(&self) -> f64 {
        let w = self.weights.iter().map(Matrix::max_abs).fold(0.0, f64::max);
        self.biases.iter().flatten().fold(w, |m, v| m.max(v.abs()))
    }
}

impl Network {
    /// Gaussian init with standard deviation `√(2/in)` for ReLU layers and
    /// `√(1/in)` otherwise; zero biases.
    pub fn new(specs: &[LayerSpec], loss: Loss, rng: &mut Rng) -> Result<Self> {
        validate_specs(specs)?;
        let layers = specs
            .iter()
            .map(|&spec| {
                let gain = if spec.activation == Activation::Relu { 2.0 } else { 1.0 };
                let sd = (gain / spec.in_dim as f64).sqrt();
                let weights = Matrix::from_fn(spec.out_dim, spec.in_dim, |_, _| sd * rng.standard_normal());
                DenseLayer {
                    spec,
                    weights,
                    bias: vec![0.0; spec.out_dim],
                }
            })
            .collect();
        Ok(Self { layers, loss })
    }

    /// ReLU hidden layers of the given widths followed by a `head` layer.
    pub fn mlp(dims: &[usize], head: Activation, loss: Loss, rng: &mut Rng) -> Result<Self> {
        if dims.len() < 2 {
            return Err(Error::InvalidConfig("an MLP needs at least input and output widths".into()));
        }
        let h = dims.len() - 1;
        let specs: Vec<LayerSpec> = (0..h)
            .map(|l| LayerSpec {
                in_dim: dims[l],
                out_dim: dims[l + 1],
                activation: if l + 1 == h { head } else { Activation::Relu },
            })
            .collect();
        Self::new(&specs, loss, rng)
    }

    /// Checks chaining, shapes and finiteness (e.g. after deserializing).
    pub fn validate(&self) -> Result<()> {
        let specs: Vec<LayerSpec> = self.layers.iter().map(|l| l.spec).collect();
        validate_specs(&specs)?;
        for (l, layer) in self.layers.iter().enumerate() {
            if layer.weights.shape() != (layer.spec.out_dim, layer.spec.in_dim) || layer.bias.len() != layer.spec.out_dim {
                return Err(Error::dims("network", format!("layer {l} parameters do not match its spec")));
            }
            if !layer.weights.is_finite() || !layer.bias.iter().all(|b| b.is_finite()) {
                return Err(Error::Contract(format!("layer {l} has non-finite parameters")));
            }
        }
        Ok(())
    }

    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].spec.in_dim
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].spec.out_dim
    }

    /// Width of each layer input, `d^(0), …, d^(H−1)`.
    pub fn input_dims(&self) -> Vec<usize> {
        self.layers.iter().map(|l| l.spec.in_dim).collect()
    }

    pub fn num_parameters(&self) -> usize {
        self.layers.iter().map(|l| l.weights.as_slice().len() + l.bias.len()).sum()
    }

    fn pre_activation(layer: &DenseLayer, input: &Matrix) -> Result<Matrix> {
        let mut z = input.matmul_nt(&layer.weights)?;
        z.add_row_vector_assign(&layer.bias);
        Ok(z)
    }

    fn check_input(&self, x: &Matrix) -> Result<()> {
        if x.cols() != self.input_dim() {
            return Err(Error::dims(
                "forward",
                format!("input has {} features, network expects {}", x.cols(), self.input_dim()),
            ));
        }
        Ok(())
    }

    /// Noise-free forward pass.
    pub fn forward_eval(&self, x: &Matrix) -> Result<Matrix> {
        self.check_input(x)?;
        let mut y = x.clone();
        for layer in &self.layers {
            y = layer.spec.activation.apply(&Self::pre_activation(layer, &y)?);
        }
        Ok(y)
    }

    /// Post-activations of every layer except the output layer.
    pub fn hidden_activations(&self, x: &Matrix) -> Result<Vec<Matrix>> {
        self.check_input(x)?;
        let mut out = Vec::with_capacity(self.layers.len().saturating_sub(1));
        let mut y = x.clone();
        for (l, layer) in self.layers.iter().enumerate() {
            y = layer.spec.activation.apply(&Self::pre_activation(layer, &y)?);
            if l + 1 < self.layers.len() {
                out.push(y.clone());
            }
        }
        Ok(out)
    }

    /// Forward pass drawing fresh noise for every layer input the spec covers.
    /// Adaptive noise sees the current minibatch activations of that layer.
    pub fn forward_train(&self, x: &Matrix, noise: &PreparedNoise, rng: &mut Rng) -> Result<ForwardTrace> {
        self.forward_with(x, |l, y| noise.sample(l, y, rng))
    }

    /// Forward pass replaying a given noise realization (`None` entries are `r = 1`).
    pub fn forward_fixed_noise(&self, x: &Matrix, noise: &[Option<NoiseSample>]) -> Result<ForwardTrace> {
        if noise.len() != self.layers.len() {
            return Err(Error::dims(
                "forward_fixed_noise",
                format!("{} noise entries for {} layers", noise.len(), self.layers.len()),
            ));
        }
        self.forward_with(x, |l, _| Ok(noise[l].clone()))
    }

    fn forward_with(
        &self,
        x: &Matrix,
        mut draw: impl FnMut(usize, &Matrix) -> Result<Option<NoiseSample>>,
    ) -> Result<ForwardTrace> {
        self.check_input(x)?;
        let h = self.layers.len();
        let mut trace = ForwardTrace {
            inputs: Vec::with_capacity(h),
            noise: Vec::with_capacity(h),
            noisy_inputs: Vec::with_capacity(h),
            pre_activations: Vec::with_capacity(h),
            output: Matrix::zeros(0, 0),
        };
        let mut y = x.clone();
        for (l, layer) in self.layers.iter().enumerate() {
            let sample = draw(l, &y)?;
            let noisy = match &sample {
                Some(s) => y.hadamard(&s.r)?,
                None => y.clone(),
            };
            let z = Self::pre_activation(layer, &noisy)?;
            let next = layer.spec.activation.apply(&z);
            trace.inputs.push(y);
            trace.noise.push(sample);
            trace.noisy_inputs.push(noisy);
            trace.pre_activations.push(z);
            y = next;
        }
        trace.output = y;
        Ok(trace)
    }

    /// Gradients of the sampled loss with the trace's noise held fixed.
    pub fn backward(&self, trace: &ForwardTrace, y: &Matrix) -> Result<Gradients> {
        let d_out = self.loss.gradient(&trace.output, y)?;
        self.backward_from_output(trace, d_out)
    }

    /// Backpropagates a given `∂ loss / ∂ output`.
    pub fn backward_from_output(&self, trace: &ForwardTrace, d_output: Matrix) -> Result<Gradients> {
        let h = self.layers.len();
        if trace.pre_activations.len() != h {
            return Err(Error::dims("backward", "trace does not match the network depth"));
        }
        check_same(&d_output, &trace.output, "backward")?;
        let mut weights = vec![Matrix::zeros(0, 0); h];
        let mut biases = vec![Vec::new(); h];
        let mut delta = d_output;
        for l in (0..h).rev() {
            let layer = &self.layers[l];
            layer.spec.activation.backprop(&trace.pre_activations[l], &mut delta);
            weights[l] = delta.matmul_tn(&trace.noisy_inputs[l])?;
            biases[l] = delta.col_sums();
            if l > 0 {
                let mut d_input = delta.matmul(&layer.weights)?;
                if let Some(s) = &trace.noise[l] {
                    d_input = d_input.hadamard(&s.r)?;
                }
                delta = d_input;
            }
        }
        Ok(Gradients { weights, biases })
    }

    /// `θ ← θ − lr · grad`.
    pub fn sgd_step(&mut self, grads: &Gradients, lr: f64) -> Result<()> {
        if !(lr > 0.0 && lr.is_finite()) {
            return Err(Error::InvalidConfig(format!("learning rate must be > 0, got {lr}")));
        }
        if grads.weights.len() != self.layers.len() || grads.biases.len() != self.layers.len() {
            return Err(Error::dims("sgd_step", "gradient depth does not match the network"));
        }
        for ((layer, gw), gb) in self.layers.iter_mut().zip(&grads.weights).zip(&grads.biases) {
            layer.weights.add_scaled_assign(-lr, gw)?;
            if gb.len() != layer.bias.len() {
                return Err(Error::dims("sgd_step", "bias gradient length"));
            }
            for (b, g) in layer.bias.iter_mut().zip(gb) {
                *b -= lr * g;
            }
        }
        Ok(())
    }

    /// Clean loss and accuracy on a dataset.
    pub fn evaluate(&self, data: &Dataset) -> Result<(f64, f64)> {
        let out = self.forward_eval(&data.x)?;
        Ok((self.loss.value(&out, &data.y)?, accuracy(&out, &data.y)?))
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let net: Network = serde_json::from_str(text)?;
        net.validate()?;
        Ok(net)
    }
}

fn validate_specs(specs: &[LayerSpec]) -> Result<()> {
    if specs.is_empty() {
        return Err(Error::InvalidConfig("network needs at least one layer".into()));
    }
    for (l, s) in specs.iter().enumerate() {
        if s.in_dim == 0 || s.out_dim == 0 {
            return Err(Error::InvalidConfig(format!("layer {l} has a zero dimension")));
        }
        if l > 0 && specs[l - 1].out_dim != s.in_dim {
            return Err(Error::dims(
                "network",
                format!("layer {} outputs {} but layer {l} expects {}", l - 1, specs[l - 1].out_dim, s.in_dim),
            ));
        }
    }
    Ok(())
}

/// Optimization and evaluation schedule.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// Emit a record every this many SGD steps (`0`: only at start and end).
    pub eval_every: usize,
    /// Test rows used for correlation and sparsity metrics.
    #[serde(default = "default_eval_samples")]
    pub eval_samples: usize,
    /// Training rows used for the clean training loss.
    #[serde(default = "default_eval_samples")]
    pub train_eval_samples: usize,
    /// Test rows used for the final silhouette (`0` disables it).
    #[serde(default = "default_eval_samples")]
    pub silhouette_samples: usize,
    /// Stop after this many SGD steps even if epochs remain.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_iterations: Option<usize>,
}

fn default_eval_samples() -> usize {
    1000
}

impl TrainConfig {
    pub fn new(epochs: usize, batch_size: usize, lr: f64) -> Self {
        Self {
            epochs,
            batch_size,
            lr,
            eval_every: 0,
            eval_samples: default_eval_samples(),
            train_eval_samples: default_eval_samples(),
            silhouette_samples: default_eval_samples(),
            max_iterations: None,
        }
    }

    pub fn validate(&self, n_train: usize) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::InvalidConfig(format!("learning rate must be > 0, got {}", self.lr)));
        }
        if self.batch_size < 2 || self.batch_size > n_train {
            return Err(Error::InvalidConfig(format!(
                "batch size must lie in [2, {n_train}], got {}",
                self.batch_size
            )));
        }
        Ok(())
    }
}

/// Evaluation record for the current parameters.
pub fn evaluate_record(
    net: &Network,
    train: &Dataset,
    test: &Dataset,
    config: &TrainConfig,
    iteration: usize,
    with_silhouette: bool,
) -> Result<MetricsRecord> {
    let (train_loss, _) = net.evaluate(&train.head(config.train_eval_samples))?;
    let (test_loss, test_accuracy) = net.evaluate(test)?;
    let probe = test.head(config.eval_samples.max(2));
    let hidden = net.hidden_activations(&probe.x)?;
    let mut corr_norm = Vec::with_capacity(hidden.len());
    let mut zeros = Vec::with_capacity(hidden.len());
    for act in &hidden {
        corr_norm.push(correlation_norm(act)?);
        zeros.push(zero_fraction(act, DEFAULT_ZERO_TOL));
    }
    let silhouette = if with_silhouette && config.silhouette_samples > 0 && !hidden.is_empty() {
        let sample = test.head(config.silhouette_samples);
        let last = net.hidden_activations(&sample.x)?.pop().expect("non-empty hidden stack");
        silhouette(&last, &class_indices(&sample.y)).ok()
    } else {
        None
    };
    Ok(MetricsRecord {
        iteration,
        train_loss,
        test_loss,
        test_accuracy,
        corr_norm,
        zero_fraction: zeros,
        silhouette,
    })
}

/// Minibatch SGD on the noisy objective. Records are passed to `sink` at
/// iteration 0, every `eval_every` steps and after the last step; the last
/// record also carries the silhouette. Returns the number of SGD steps.
pub fn train(
    net: &mut Network,
    train_set: &Dataset,
    test_set: &Dataset,
    noise: &NoiseSpec,
    config: &TrainConfig,
    rng: &mut Rng,
    sink: &mut dyn FnMut(&MetricsRecord),
) -> Result<usize> {
    config.validate(train_set.len())?;
    net.validate()?;
    if train_set.n_features() != net.input_dim() || train_set.n_outputs() != net.output_dim() {
        return Err(Error::dims("train", "dataset does not match the network shape"));
    }
    let prepared = noise.prepare(&net.input_dims())?;
    let mut batch_rng = rng.fork(1);
    let mut noise_rng = rng.fork(2);

    sink(&evaluate_record(net, train_set, test_set, config, 0, config.epochs == 0)?);
    let per_epoch = train_set.len() / config.batch_size
        + usize::from(train_set.len() % config.batch_size >= 2);
    let total = config
        .max_iterations
        .map_or(per_epoch * config.epochs, |m| m.min(per_epoch * config.epochs));
    let mut iteration = 0;
    'epochs: for _ in 0..config.epochs {
        for batch in batches(train_set, config.batch_size, &mut batch_rng)? {
            if iteration == total {
                break 'epochs;
            }
            let trace = net.forward_train(&batch.x, &prepared, &mut noise_rng)?;
            let loss = net.loss.value(&trace.output, &batch.y)?;
            if !loss.is_finite() {
                return Err(Error::Divergence { iteration, loss });
            }
            let grads = net.backward(&trace, &batch.y)?;
            net.sgd_step(&grads, config.lr)?;
            iteration += 1;
            if config.eval_every > 0 && iteration % config.eval_every == 0 && iteration != total {
                let record = evaluate_record(net, train_set, test_set, config, iteration, false)?;
                check_record(&record)?;
                sink(&record);
            }
        }
    }
    if iteration > 0 {
        let record = evaluate_record(net, train_set, test_set, config, iteration, true)?;
        check_record(&record)?;
        sink(&record);
    }
    Ok(iteration)
}

fn check_record(r: &MetricsRecord) -> Result<()> {
    if !r.train_loss.is_finite() {
        return Err(Error::Divergence {
            iteration: r.iteration,
            loss: r.train_loss,
        });
    }
    Ok(())
}
