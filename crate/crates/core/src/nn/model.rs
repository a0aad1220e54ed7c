use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::conv::conv_out_len;
use super::{
    softmax, ActivationKind, ActivationLayer, BatchNorm, Conv1d, Dense, Layer, Matrix, MaxPool1d,
    Mode, Param, SeqBatch, Tensor,
};
use crate::{Error, Result};

/// The three architectures of the study.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ModelKind {
    /// Ten dense layers, batch norm after the first nine, sigmoid head.
    Big,
    /// Bias-free projection, batch norm, two more dense layers, sigmoid head.
    Small,
    /// Three conv/pool blocks, then two dense layers producing two logits.
    Cnn,
}

impl ModelKind {
    pub const ALL: [ModelKind; 3] = [ModelKind::Big, ModelKind::Small, ModelKind::Cnn];

    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Big => "big",
            ModelKind::Small => "small",
            ModelKind::Cnn => "cnn",
        }
    }

    /// Learning rate each architecture was tuned with.
    pub fn default_learning_rate(self) -> f64 {
        match self {
            ModelKind::Big => 0.01,
            ModelKind::Small => 0.00001,
            ModelKind::Cnn => 0.001,
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "big" => Ok(ModelKind::Big),
            "small" => Ok(ModelKind::Small),
            "cnn" => Ok(ModelKind::Cnn),
            _ => Err(Error::invalid(format!("unknown model kind {s:?} (big, small, cnn)"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelOptions {
    /// Hidden activation of the dense models.
    pub hidden_activation: ActivationKind,
    /// Width of the small model's bias-free projection.
    pub small_hidden: usize,
    /// Width of the CNN's first dense layer.
    pub cnn_hidden: usize,
    pub cnn_leaky_slope: f64,
    pub bn_epsilon: f64,
    pub bn_momentum: f64,
}

impl Default for ModelOptions {
    fn default() -> Self {
        Self {
            hidden_activation: ActivationKind::Relu,
            small_hidden: 64,
            cnn_hidden: 64,
            cnn_leaky_slope: 0.01,
            bn_epsilon: 1e-5,
            bn_momentum: 0.1,
        }
    }
}

/// Shape of one example as it flows between layers.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Shape {
    Flat(usize),
    Seq { channels: usize, len: usize },
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Shape::Flat(n) => write!(f, "(None, {n})"),
            Shape::Seq { channels, len } => write!(f, "(None, {channels}, {len})"),
        }
    }
}

/// Architecture of one layer, independent of its weights.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum LayerSpec {
    Dense {
        input: usize,
        output: usize,
        bias: bool,
    },
    BatchNorm {
        features: usize,
        epsilon: f64,
        momentum: f64,
    },
    Conv1d {
        in_channels: usize,
        out_channels: usize,
        kernel_size: usize,
        stride: usize,
        padding: usize,
    },
    MaxPool1d {
        kernel_size: usize,
        stride: usize,
    },
    Activation(ActivationKind),
    Flatten,
}

impl LayerSpec {
    pub fn output_shape(&self, input: Shape) -> Result<Shape> {
        let mismatch = || Error::dim(format!("{self:?} cannot follow a layer producing {input}"));
        match (*self, input) {
            (LayerSpec::Dense { input: i, output, .. }, Shape::Flat(n)) if n == i => Ok(Shape::Flat(output)),
            (LayerSpec::BatchNorm { features, .. }, Shape::Flat(n)) if n == features => Ok(input),
            (
                LayerSpec::Conv1d {
                    in_channels,
                    out_channels,
                    kernel_size,
                    stride,
                    padding,
                },
                Shape::Seq { channels, len },
            ) if channels == in_channels => conv_out_len(len, kernel_size, stride, padding)
                .map(|len| Shape::Seq {
                    channels: out_channels,
                    len,
                })
                .ok_or_else(mismatch),
            (LayerSpec::MaxPool1d { kernel_size, stride }, Shape::Seq { channels, len }) => {
                conv_out_len(len, kernel_size, stride, 0)
                    .map(|len| Shape::Seq { channels, len })
                    .ok_or_else(mismatch)
            }
            (LayerSpec::Activation(_), s) => Ok(s),
            (LayerSpec::Flatten, Shape::Seq { channels, len }) => Ok(Shape::Flat(channels * len)),
            _ => Err(mismatch()),
        }
    }

    /// `(trainable, non_trainable)` parameter counts.
    pub fn param_counts(&self) -> (usize, usize) {
        match *self {
            LayerSpec::Dense { input, output, bias } => (input * output + if bias { output } else { 0 }, 0),
            LayerSpec::BatchNorm { features, .. } => (2 * features, 2 * features),
            LayerSpec::Conv1d {
                in_channels,
                out_channels,
                kernel_size,
                ..
            } => (out_channels * in_channels * kernel_size + out_channels, 0),
            _ => (0, 0),
        }
    }

    fn type_name(&self) -> &'static str {
        match self {
            LayerSpec::Dense { .. } => "Dense",
            LayerSpec::BatchNorm { .. } => "BatchNormalization",
            LayerSpec::Conv1d { .. } => "Conv1D",
            LayerSpec::MaxPool1d { .. } => "MaxPooling1D",
            LayerSpec::Activation(_) => "Activation",
            LayerSpec::Flatten => "Flatten",
        }
    }

    fn base_name(&self) -> &'static str {
        match self {
            LayerSpec::Dense { .. } => "dense",
            LayerSpec::BatchNorm { .. } => "batch_normalization",
            LayerSpec::Conv1d { .. } => "conv1d",
            LayerSpec::MaxPool1d { .. } => "max_pooling1d",
            LayerSpec::Activation(k) => k.name(),
            LayerSpec::Flatten => "flatten",
        }
    }

    fn instantiate(&self, rng: &mut ChaCha8Rng) -> Result<Layer> {
        Ok(match *self {
            LayerSpec::Dense { input, output, bias } => Layer::Dense(Dense::new(input, output, bias, rng)),
            LayerSpec::BatchNorm {
                features,
                epsilon,
                momentum,
            } => Layer::BatchNorm(BatchNorm::new(features, epsilon, momentum)?),
            LayerSpec::Conv1d {
                in_channels,
                out_channels,
                kernel_size,
                stride,
                padding,
            } => Layer::Conv1d(Conv1d::new(in_channels, out_channels, kernel_size, stride, padding, rng)?),
            LayerSpec::MaxPool1d { kernel_size, stride } => Layer::MaxPool1d(MaxPool1d::new(kernel_size, stride)?),
            LayerSpec::Activation(k) => Layer::Activation(ActivationLayer::new(k)?),
            LayerSpec::Flatten => Layer::Flatten { cached: None },
        })
    }
}

/// How the final layer's output is read.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Head {
    /// One unit holding the probability of class 1; trained with binary cross-entropy.
    Probability,
    /// Two logits; trained with softmax cross-entropy.
    Logits,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ParamCount {
    pub total: usize,
    pub trainable: usize,
    pub non_trainable: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SummaryRow {
    pub name: String,
    pub type_name: &'static str,
    pub output: Shape,
    pub params: usize,
}

/// A validated layer stack.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub kind: Option<ModelKind>,
    pub input_dim: usize,
    pub layers: Vec<LayerSpec>,
    head: Head,
}

impl ModelSpec {
    /// Checks that the layers compose and end in one or two outputs.
    pub fn new(kind: Option<ModelKind>, input_dim: usize, layers: Vec<LayerSpec>) -> Result<Self> {
        if input_dim == 0 {
            return Err(Error::invalid("input dimension must be at least 1"));
        }
        let mut spec = Self {
            kind,
            input_dim,
            layers,
            head: Head::Probability,
        };
        let shapes = spec.shapes()?;
        spec.head = match shapes.last().copied().unwrap_or(spec.input_shape()) {
            Shape::Flat(1) => Head::Probability,
            Shape::Flat(2) => Head::Logits,
            other => {
                return Err(Error::dim(format!(
                    "model must end in 1 or 2 outputs, got {other}"
                )))
            }
        };
        Ok(spec)
    }

    pub fn head(&self) -> Head {
        self.head
    }

    pub fn input_shape(&self) -> Shape {
        match self.layers.first() {
            Some(LayerSpec::Conv1d { .. }) => Shape::Seq {
                channels: 1,
                len: self.input_dim,
            },
            _ => Shape::Flat(self.input_dim),
        }
    }

    /// Output shape after each layer.
    pub fn shapes(&self) -> Result<Vec<Shape>> {
        let mut shape = self.input_shape();
        self.layers
            .iter()
            .map(|l| {
                shape = l.output_shape(shape)?;
                Ok(shape)
            })
            .collect()
    }

    pub fn summary_rows(&self) -> Vec<SummaryRow> {
        let shapes = self.shapes().expect("validated at construction");
        let mut seen = std::collections::HashMap::<&str, usize>::new();
        self.layers
            .iter()
            .zip(shapes)
            .map(|(l, output)| {
                let base = l.base_name();
                let n = seen.entry(base).or_insert(0);
                let name = if *n == 0 { base.to_string() } else { format!("{base}_{n}") };
                *n += 1;
                let (t, nt) = l.param_counts();
                SummaryRow {
                    name,
                    type_name: l.type_name(),
                    output,
                    params: t + nt,
                }
            })
            .collect()
    }

    /// Text table with layer name, output shape and parameter count.
    pub fn summary(&self) -> String {
        let rows = self.summary_rows();
        let labels: Vec<String> = rows.iter().map(|r| format!("{} ({})", r.name, r.type_name)).collect();
        let shapes: Vec<String> = rows.iter().map(|r| r.output.to_string()).collect();
        let w0 = labels.iter().map(String::len).max().unwrap_or(0).max("Layer (type)".len());
        let w1 = shapes.iter().map(String::len).max().unwrap_or(0).max("Output Shape".len());
        let mut out = format!("{:<w0$}  {:<w1$}  {:>10}\n", "Layer (type)", "Output Shape", "Param #");
        out.push_str(&"=".repeat(w0 + w1 + 14));
        out.push('\n');
        for ((label, shape), row) in labels.iter().zip(&shapes).zip(&rows) {
            out.push_str(&format!("{label:<w0$}  {shape:<w1$}  {:>10}\n", row.params));
        }
        out.push_str(&"=".repeat(w0 + w1 + 14));
        let c = count_parameters(self);
        out.push_str(&format!(
            "\nTotal parameters : {}\nTrainable parameters : {}\nNon-trainable parameters : {}\n",
            c.total, c.trainable, c.non_trainable
        ));
        out
    }
}

pub fn count_parameters(spec: &ModelSpec) -> ParamCount {
    let (trainable, non_trainable) = spec
        .layers
        .iter()
        .map(LayerSpec::param_counts)
        .fold((0, 0), |(a, b), (t, n)| (a + t, b + n));
    ParamCount {
        total: trainable + non_trainable,
        trainable,
        non_trainable,
    }
}

/// Layer stack for one of the three architectures.
pub fn build_model(kind: ModelKind, input_dim: usize, options: &ModelOptions) -> Result<ModelSpec> {
    if input_dim == 0 {
        return Err(Error::invalid("input dimension must be at least 1"));
    }
    let act = LayerSpec::Activation(options.hidden_activation.validate()?);
    let bn = |features| LayerSpec::BatchNorm {
        features,
        epsilon: options.bn_epsilon,
        momentum: options.bn_momentum,
    };
    let dense = |input, output, bias| LayerSpec::Dense { input, output, bias };
    let mut layers = Vec::new();
    match kind {
        ModelKind::Big => {
            let widths = [input_dim, 2500, 1000, 500, 200, 100, 50, 25, 15, 10, 1];
            for pair in widths.windows(2) {
                layers.push(dense(pair[0], pair[1], true));
                if pair[1] != 1 {
                    layers.push(bn(pair[1]));
                    layers.push(act.clone());
                }
            }
            layers.push(LayerSpec::Activation(ActivationKind::Sigmoid));
        }
        ModelKind::Small => {
            let h = options.small_hidden;
            layers.extend([
                dense(input_dim, h, false),
                act.clone(),
                bn(h),
                dense(h, 10, true),
                act,
                dense(10, 1, true),
                LayerSpec::Activation(ActivationKind::Sigmoid),
            ]);
        }
        ModelKind::Cnn => {
            let mut channels = 1;
            let mut len = input_dim;
            for out_channels in [16, 64, 128] {
                layers.push(LayerSpec::Conv1d {
                    in_channels: channels,
                    out_channels,
                    kernel_size: 3,
                    stride: 1,
                    padding: 1,
                });
                layers.push(LayerSpec::MaxPool1d {
                    kernel_size: 2,
                    stride: 2,
                });
                channels = out_channels;
                len = conv_out_len(len, 2, 2, 0)
                    .ok_or_else(|| Error::invalid(format!("input of {input_dim} samples is too short for the CNN")))?;
            }
            layers.extend([
                LayerSpec::Flatten,
                dense(channels * len, options.cnn_hidden, true),
                LayerSpec::Activation(ActivationKind::LeakyRelu(options.cnn_leaky_slope).validate()?),
                dense(options.cnn_hidden, 2, true),
            ]);
        }
    }
    ModelSpec::new(Some(kind), input_dim, layers)
}

/// A layer stack with weights.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Model {
    spec: ModelSpec,
    layers: Vec<Layer>,
}

impl Model {
    /// Instantiates `spec` with seeded Glorot-uniform weights.
    pub fn new(spec: ModelSpec, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layers = spec
            .layers
            .iter()
            .map(|l| l.instantiate(&mut rng))
            .collect::<Result<_>>()?;
        Ok(Self { spec, layers })
    }

    /// Wraps hand-built layers and derives the `ModelSpec` from them.
    pub fn from_layers(input_dim: usize, layers: Vec<Layer>) -> Result<Self> {
        let specs = layers.iter().map(layer_spec).collect();
        let spec = ModelSpec::new(None, input_dim, specs)?;
        Ok(Self { spec, layers })
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn head(&self) -> Head {
        self.spec.head
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    fn to_input(&self, x: &Matrix) -> Result<Tensor> {
        if x.cols() != self.spec.input_dim {
            return Err(Error::dim(format!(
                "model expects {} features, got {}",
                self.spec.input_dim,
                x.cols()
            )));
        }
        Ok(match self.spec.input_shape() {
            Shape::Seq { .. } => SeqBatch::from_parts(x.rows(), 1, x.cols(), x.data().to_vec()).into(),
            Shape::Flat(_) => x.clone().into(),
        })
    }

    /// Forward pass that caches what backward needs.
    pub fn forward(&mut self, x: &Matrix, mode: Mode) -> Result<Matrix> {
        let mut t = self.to_input(x)?;
        for layer in &mut self.layers {
            t = layer.forward(&t, mode)?;
        }
        t.into_flat("model output")
    }

    /// Inference-mode forward through shared references.
    pub fn predict(&self, x: &Matrix) -> Result<Matrix> {
        let mut t = self.to_input(x)?;
        for layer in &self.layers {
            t = layer.infer(&t)?;
        }
        t.into_flat("model output")
    }

    /// Backpropagates `dL/d(output)`, filling every parameter gradient,
    /// and returns `dL/d(input)` with the input's shape.
    pub fn backward(&mut self, grad_output: &Matrix) -> Result<Matrix> {
        let mut g: Tensor = grad_output.clone().into();
        for layer in self.layers.iter_mut().rev() {
            g = layer.backward(&g)?;
        }
        Ok(match g {
            Tensor::Flat(m) => m,
            Tensor::Seq(s) => Matrix::from_parts(s.batch(), s.channels() * s.len(), s.into_data()),
        })
    }

    /// Probability of class 1 for each row.
    pub fn scores(&self, x: &Matrix) -> Result<Vec<f64>> {
        let out = self.predict(x)?;
        Ok(match self.spec.head {
            Head::Probability => out.column(0),
            Head::Logits => softmax(&out).column(1),
        })
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        self.layers.iter_mut().flat_map(Layer::params_mut).collect()
    }

    pub fn params(&self) -> Vec<&Param> {
        self.layers.iter().flat_map(Layer::params).collect()
    }

    pub fn param_count(&self) -> ParamCount {
        count_parameters(&self.spec)
    }

    /// Copy of every parameter and running statistic.
    pub fn state(&self) -> Vec<Vec<f64>> {
        self.layers
            .iter()
            .flat_map(|l| {
                l.params()
                    .into_iter()
                    .map(|p| p.value.clone())
                    .chain(l.buffers().into_iter().cloned())
                    .collect::<Vec<_>>()
            })
            .collect()
    }

    pub fn load_state(&mut self, state: &[Vec<f64>]) -> Result<()> {
        let mut it = state.iter();
        for layer in &mut self.layers {
            for slot in layer.state_slots_mut() {
                let v = it.next().ok_or_else(|| Error::State("snapshot has too few tensors".into()))?;
                if v.len() != slot.len() {
                    return Err(Error::State("snapshot tensor has the wrong length".into()));
                }
                slot.copy_from_slice(v);
            }
        }
        if it.next().is_some() {
            return Err(Error::State("snapshot has too many tensors".into()));
        }
        Ok(())
    }

    pub fn clear_caches(&mut self) {
        self.layers.iter_mut().for_each(Layer::clear_cache);
    }
}

fn layer_spec(layer: &Layer) -> LayerSpec {
    match layer {
        Layer::Dense(d) => LayerSpec::Dense {
            input: d.in_features(),
            output: d.out_features(),
            bias: d.bias.is_some(),
        },
        Layer::BatchNorm(b) => LayerSpec::BatchNorm {
            features: b.features(),
            epsilon: b.epsilon(),
            momentum: b.momentum(),
        },
        Layer::Conv1d(c) => {
            let (k, s, p) = c.geometry();
            LayerSpec::Conv1d {
                in_channels: c.in_channels(),
                out_channels: c.out_channels(),
                kernel_size: k,
                stride: s,
                padding: p,
            }
        }
        Layer::MaxPool1d(m) => {
            let (k, s) = m.geometry();
            LayerSpec::MaxPool1d { kernel_size: k, stride: s }
        }
        Layer::Activation(a) => LayerSpec::Activation(a.kind),
        Layer::Flatten { .. } => LayerSpec::Flatten,
    }
}
