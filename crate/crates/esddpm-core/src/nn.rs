//! Noise-prediction network and its training machinery.
//!
//! A small dense network maps `(x, t, class)` to a predicted noise vector
//! of the same dimension as `x`. The step index enters through fixed
//! sinusoidal features, the optional class label through a learned
//! embedding table. Gradients come from handwritten reverse-mode
//! backpropagation and are exact up to floating-point roundoff, which the
//! tests pin against central finite differences.
//!
//! All forward and backward passes are deterministic: same parameters and
//! inputs give bitwise-identical outputs.

use alloc::vec;
use alloc::vec::Vec;
// Supplies the float transcendentals in no_std builds; the inherent
// methods shadow it when std is enabled.
#[allow(unused_imports)]
use num_traits::Float;
use rand::Rng;
use thiserror::Error;

/// Network construction, evaluation, and update failures.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum NnError {
    /// Sinusoidal features come in sin/cos pairs.
    #[error("time-embedding dimension {dim} must be even and nonzero")]
    OddTimeDim { dim: usize },
    /// A structural size (width, dimension, horizon) was zero.
    #[error("invalid network configuration: {0}")]
    BadConfig(&'static str),
    /// Input vector length does not match the network's data dimension.
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimMismatch { expected: usize, got: usize },
    /// A class label was given to an unconditional network.
    #[error("class label given to an unconditional network")]
    UnexpectedClass,
    /// A conditional network needs a class label.
    #[error("conditional network called without a class label")]
    MissingClass,
    /// Label outside the embedding table.
    #[error("class {class} outside 0..{count}")]
    ClassOutOfRange { class: usize, count: usize },
    /// Gradient or optimizer state shapes do not match the network.
    #[error("parameter shape mismatch in {0}")]
    ShapeMismatch(&'static str),
    /// A gradient entry was NaN or infinite.
    #[error("non-finite gradient")]
    NonFiniteGradient,
}

/// Smooth elementwise nonlinearity used between dense layers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Activation {
    #[default]
    Tanh,
    Silu,
}

impl Activation {
    fn value(self, x: f64) -> f64 {
        match self {
            Activation::Tanh => x.tanh(),
            Activation::Silu => x / (1.0 + (-x).exp()),
        }
    }

    /// Derivative as a function of the preactivation.
    fn slope(self, x: f64) -> f64 {
        match self {
            Activation::Tanh => {
                let y = x.tanh();
                1.0 - y * y
            }
            Activation::Silu => {
                let s = 1.0 / (1.0 + (-x).exp());
                s * (1.0 + x * (1.0 - s))
            }
        }
    }
}

/// One dense layer, weights stored row-major as `out_dim` rows of `in_dim`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    weights: Vec<f64>,
    biases: Vec<f64>,
    in_dim: usize,
    out_dim: usize,
}

impl Dense {
    fn uniform(in_dim: usize, out_dim: usize, rng: &mut impl Rng) -> Self {
        let bound = 1.0 / (in_dim as f64).sqrt();
        let weights = (0..in_dim * out_dim)
            .map(|_| (rng.random::<f64>() * 2.0 - 1.0) * bound)
            .collect();
        let biases = (0..out_dim)
            .map(|_| (rng.random::<f64>() * 2.0 - 1.0) * bound)
            .collect();
        Dense {
            weights,
            biases,
            in_dim,
            out_dim,
        }
    }

    fn zeroed(in_dim: usize, out_dim: usize) -> Self {
        Dense {
            weights: vec![0.0; in_dim * out_dim],
            biases: vec![0.0; out_dim],
            in_dim,
            out_dim,
        }
    }

    /// Rebuilds a layer from raw parts, validating lengths.
    pub fn from_parts(
        in_dim: usize,
        out_dim: usize,
        weights: Vec<f64>,
        biases: Vec<f64>,
    ) -> Result<Self, NnError> {
        if in_dim == 0 || out_dim == 0 {
            return Err(NnError::BadConfig("zero layer width"));
        }
        if weights.len() != in_dim * out_dim || biases.len() != out_dim {
            return Err(NnError::ShapeMismatch("dense layer"));
        }
        Ok(Dense {
            weights,
            biases,
            in_dim,
            out_dim,
        })
    }

    pub fn in_dim(&self) -> usize {
        self.in_dim
    }

    pub fn out_dim(&self) -> usize {
        self.out_dim
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn biases(&self) -> &[f64] {
        &self.biases
    }

    fn apply(&self, input: &[f64], out: &mut Vec<f64>) {
        out.clear();
        for o in 0..self.out_dim {
            let row = &self.weights[o * self.in_dim..(o + 1) * self.in_dim];
            let mut acc = self.biases[o];
            for (w, a) in row.iter().zip(input) {
                acc += w * a;
            }
            out.push(acc);
        }
    }
}

/// Plain multilayer perceptron: dense layers with the activation between
/// them and a linear final layer.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    layers: Vec<Dense>,
    activation: Activation,
}

/// Intermediate values of one forward pass, consumed by `backward`.
#[derive(Debug, Clone)]
pub struct MlpCache {
    /// `activations[l]` is the input to layer l; the last entry is the output.
    activations: Vec<Vec<f64>>,
    /// Preactivations of the hidden layers (the final layer has none).
    pres: Vec<Vec<f64>>,
}

/// Per-layer parameter gradients with the same shapes as the `Mlp`.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpGrads {
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<Vec<f64>>,
}

impl MlpGrads {
    /// Appends the gradients in `Mlp::flat_params` order.
    pub fn flatten_into(&self, out: &mut Vec<f64>) {
        for (w, b) in self.weights.iter().zip(&self.biases) {
            out.extend_from_slice(w);
            out.extend_from_slice(b);
        }
    }
}

impl Mlp {
    /// Builds layers of the given widths. `widths` includes input and
    /// output, so it needs at least two entries. When `zero_final` is set
    /// the last layer starts at exactly zero and the network's initial
    /// output is the zero vector.
    pub fn new(
        widths: &[usize],
        activation: Activation,
        zero_final: bool,
        rng: &mut impl Rng,
    ) -> Result<Self, NnError> {
        if widths.len() < 2 {
            return Err(NnError::BadConfig("need input and output widths"));
        }
        if widths.iter().any(|&w| w == 0) {
            return Err(NnError::BadConfig("zero layer width"));
        }
        let mut layers = Vec::with_capacity(widths.len() - 1);
        for i in 0..widths.len() - 1 {
            let last = i == widths.len() - 2;
            layers.push(if last && zero_final {
                Dense::zeroed(widths[i], widths[i + 1])
            } else {
                Dense::uniform(widths[i], widths[i + 1], rng)
            });
        }
        Ok(Mlp { layers, activation })
    }

    /// Rebuilds from deserialized layers, checking that they chain.
    pub fn from_layers(layers: Vec<Dense>, activation: Activation) -> Result<Self, NnError> {
        if layers.is_empty() {
            return Err(NnError::BadConfig("no layers"));
        }
        for pair in layers.windows(2) {
            if pair[0].out_dim != pair[1].in_dim {
                return Err(NnError::ShapeMismatch("layer chain"));
            }
        }
        Ok(Mlp { layers, activation })
    }

    pub fn layers(&self) -> &[Dense] {
        &self.layers
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn in_dim(&self) -> usize {
        self.layers[0].in_dim
    }

    pub fn out_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].out_dim
    }

    pub fn forward(&self, input: &[f64]) -> Vec<f64> {
        let (out, _) = self.forward_cached(input);
        out
    }

    pub fn forward_cached(&self, input: &[f64]) -> (Vec<f64>, MlpCache) {
        debug_assert_eq!(input.len(), self.in_dim());
        let mut activations = Vec::with_capacity(self.layers.len() + 1);
        let mut pres = Vec::with_capacity(self.layers.len() - 1);
        activations.push(input.to_vec());
        let mut buf = Vec::new();
        for (l, layer) in self.layers.iter().enumerate() {
            layer.apply(activations.last().unwrap(), &mut buf);
            let last = l == self.layers.len() - 1;
            if last {
                activations.push(buf.clone());
            } else {
                pres.push(buf.clone());
                activations.push(buf.iter().map(|&p| self.activation.value(p)).collect());
            }
        }
        let out = activations.last().unwrap().clone();
        (out, MlpCache { activations, pres })
    }

    /// Reverse pass for the scalar `dot(upstream, output)`. Returns the
    /// parameter gradients and the gradient with respect to the input.
    pub fn backward(&self, cache: &MlpCache, upstream: &[f64]) -> (MlpGrads, Vec<f64>) {
        debug_assert_eq!(upstream.len(), self.out_dim());
        let n = self.layers.len();
        let mut gw: Vec<Vec<f64>> = self
            .layers
            .iter()
            .map(|l| vec![0.0; l.weights.len()])
            .collect();
        let mut gb: Vec<Vec<f64>> = self.layers.iter().map(|l| vec![0.0; l.out_dim]).collect();
        let mut g = upstream.to_vec();
        for l in (0..n).rev() {
            let layer = &self.layers[l];
            // Hidden outputs pass through the activation; fold its slope in.
            if l < n - 1 {
                for (gi, &p) in g.iter_mut().zip(&cache.pres[l]) {
                    *gi *= self.activation.slope(p);
                }
            }
            let a = &cache.activations[l];
            for o in 0..layer.out_dim {
                let go = g[o];
                gb[l][o] = go;
                let row = &mut gw[l][o * layer.in_dim..(o + 1) * layer.in_dim];
                for (slot, &ai) in row.iter_mut().zip(a) {
                    *slot = go * ai;
                }
            }
            let mut prev = vec![0.0; layer.in_dim];
            for o in 0..layer.out_dim {
                let go = g[o];
                let row = &layer.weights[o * layer.in_dim..(o + 1) * layer.in_dim];
                for (slot, &w) in prev.iter_mut().zip(row) {
                    *slot += go * w;
                }
            }
            g = prev;
        }
        (
            MlpGrads {
                weights: gw,
                biases: gb,
            },
            g,
        )
    }

    pub fn param_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights.len() + l.biases.len())
            .sum()
    }

    /// All parameters in a fixed order: per layer, weights then biases.
    pub fn flat_params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for l in &self.layers {
            out.extend_from_slice(&l.weights);
            out.extend_from_slice(&l.biases);
        }
        out
    }

    /// Restores parameters written by `flat_params`.
    pub fn set_flat_params(&mut self, flat: &[f64]) -> Result<(), NnError> {
        if flat.len() != self.param_count() {
            return Err(NnError::ShapeMismatch("flat parameters"));
        }
        let mut pos = 0;
        for l in &mut self.layers {
            let nw = l.weights.len();
            l.weights.copy_from_slice(&flat[pos..pos + nw]);
            pos += nw;
            let nb = l.biases.len();
            l.biases.copy_from_slice(&flat[pos..pos + nb]);
            pos += nb;
        }
        Ok(())
    }
}

/// Sinusoidal step features: interleaved `sin(w_k t), cos(w_k t)` pairs at
/// `dim / 2` geometrically spaced frequencies, from the base frequency 1
/// down to roughly one cycle over the horizon. Distinct integer steps map
/// to distinct feature vectors because the base-frequency pair never wraps
/// on integers.
pub fn embed_time(t: usize, dim: usize, horizon: usize) -> Result<Vec<f64>, NnError> {
    if dim == 0 || dim % 2 != 0 {
        return Err(NnError::OddTimeDim { dim });
    }
    if horizon == 0 {
        return Err(NnError::BadConfig("zero horizon"));
    }
    let half = dim / 2;
    let scale = (horizon.max(2)) as f64;
    let tf = t as f64;
    let mut out = Vec::with_capacity(dim);
    for k in 0..half {
        let freq = if half == 1 {
            1.0
        } else {
            scale.powf(-(k as f64) / (half - 1) as f64)
        };
        let (s, c) = (freq * tf).sin_cos();
        out.push(s);
        out.push(c);
    }
    Ok(out)
}

/// Learned per-class embedding table.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassEmbedding {
    pub(crate) table: Vec<f64>,
    count: usize,
    dim: usize,
}

impl ClassEmbedding {
    pub fn new(count: usize, dim: usize, rng: &mut impl Rng) -> Result<Self, NnError> {
        if count == 0 || dim == 0 {
            return Err(NnError::BadConfig("empty class embedding"));
        }
        let bound = 1.0 / (dim as f64).sqrt();
        let table = (0..count * dim)
            .map(|_| (rng.random::<f64>() * 2.0 - 1.0) * bound)
            .collect();
        Ok(ClassEmbedding { table, count, dim })
    }

    pub fn from_parts(count: usize, dim: usize, table: Vec<f64>) -> Result<Self, NnError> {
        if count == 0 || dim == 0 || table.len() != count * dim {
            return Err(NnError::ShapeMismatch("class embedding"));
        }
        Ok(ClassEmbedding { table, count, dim })
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn table(&self) -> &[f64] {
        &self.table
    }

    pub fn row(&self, class: usize) -> Result<&[f64], NnError> {
        if class >= self.count {
            return Err(NnError::ClassOutOfRange {
                class,
                count: self.count,
            });
        }
        Ok(&self.table[class * self.dim..(class + 1) * self.dim])
    }
}

/// Architecture of a noise-prediction network.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkConfig {
    pub data_dim: usize,
    /// Hidden layer widths, input and output excluded.
    pub hidden: Vec<usize>,
    pub time_dim: usize,
    /// Horizon used to scale the lowest embedding frequency.
    pub time_scale: usize,
    /// `Some(count)` makes the network conditional on a class label.
    pub class_count: Option<usize>,
    pub class_emb_dim: usize,
    pub activation: Activation,
}

impl NetworkConfig {
    pub fn new(data_dim: usize, time_scale: usize) -> Self {
        NetworkConfig {
            data_dim,
            hidden: vec![128, 128],
            time_dim: 32,
            time_scale,
            class_count: None,
            class_emb_dim: 16,
            activation: Activation::Tanh,
        }
    }

    pub fn with_hidden(mut self, hidden: Vec<usize>) -> Self {
        self.hidden = hidden;
        self
    }

    pub fn with_classes(mut self, count: usize) -> Self {
        self.class_count = Some(count);
        self
    }
}

/// Dense noise predictor over `(x, step features, class embedding)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    mlp: Mlp,
    data_dim: usize,
    time_dim: usize,
    time_scale: usize,
    classes: Option<ClassEmbedding>,
}

/// Forward-pass state needed to run the reverse pass without recomputing.
#[derive(Debug, Clone)]
pub struct NetCache {
    mlp: MlpCache,
    class: Option<usize>,
}

/// Gradients for every trainable tensor of a `Network`.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientBuffer {
    pub mlp: MlpGrads,
    /// Gradient of the whole embedding table (zero outside the used row).
    pub class_table: Option<Vec<f64>>,
}

impl GradientBuffer {
    pub fn zeros_like(net: &Network) -> Self {
        GradientBuffer {
            mlp: MlpGrads {
                weights: net
                    .mlp
                    .layers
                    .iter()
                    .map(|l| vec![0.0; l.weights.len()])
                    .collect(),
                biases: net.mlp.layers.iter().map(|l| vec![0.0; l.out_dim]).collect(),
            },
            class_table: net.classes.as_ref().map(|c| vec![0.0; c.table.len()]),
        }
    }

    /// Adds `scale * other` into self. Shapes must match.
    pub fn accumulate(&mut self, other: &GradientBuffer, scale: f64) -> Result<(), NnError> {
        if self.mlp.weights.len() != other.mlp.weights.len()
            || self.class_table.is_some() != other.class_table.is_some()
        {
            return Err(NnError::ShapeMismatch("gradient buffers"));
        }
        for (a, b) in self.mlp.weights.iter_mut().zip(&other.mlp.weights) {
            if a.len() != b.len() {
                return Err(NnError::ShapeMismatch("gradient buffers"));
            }
            for (x, y) in a.iter_mut().zip(b) {
                *x += scale * y;
            }
        }
        for (a, b) in self.mlp.biases.iter_mut().zip(&other.mlp.biases) {
            if a.len() != b.len() {
                return Err(NnError::ShapeMismatch("gradient buffers"));
            }
            for (x, y) in a.iter_mut().zip(b) {
                *x += scale * y;
            }
        }
        if let (Some(a), Some(b)) = (&mut self.class_table, &other.class_table) {
            if a.len() != b.len() {
                return Err(NnError::ShapeMismatch("gradient buffers"));
            }
            for (x, y) in a.iter_mut().zip(b) {
                *x += scale * y;
            }
        }
        Ok(())
    }

    /// Same fixed order as `Network::flat_params`.
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::new();
        self.mlp.flatten_into(&mut out);
        if let Some(t) = &self.class_table {
            out.extend_from_slice(t);
        }
        out
    }
}

impl Network {
    pub fn new(config: &NetworkConfig, rng: &mut impl Rng) -> Result<Self, NnError> {
        if config.data_dim == 0 {
            return Err(NnError::BadConfig("zero data dimension"));
        }
        if config.time_dim == 0 || config.time_dim % 2 != 0 {
            return Err(NnError::OddTimeDim {
                dim: config.time_dim,
            });
        }
        if config.time_scale == 0 {
            return Err(NnError::BadConfig("zero horizon"));
        }
        let classes = match config.class_count {
            Some(count) => Some(ClassEmbedding::new(count, config.class_emb_dim, rng)?),
            None => None,
        };
        let emb = classes.as_ref().map_or(0, |c| c.dim);
        let mut widths = Vec::with_capacity(config.hidden.len() + 2);
        widths.push(config.data_dim + config.time_dim + emb);
        widths.extend_from_slice(&config.hidden);
        widths.push(config.data_dim);
        let mlp = Mlp::new(&widths, config.activation, true, rng)?;
        Ok(Network {
            mlp,
            data_dim: config.data_dim,
            time_dim: config.time_dim,
            time_scale: config.time_scale,
            classes,
        })
    }

    /// Rebuilds a network from deserialized parts.
    pub fn from_parts(
        mlp: Mlp,
        data_dim: usize,
        time_dim: usize,
        time_scale: usize,
        classes: Option<ClassEmbedding>,
    ) -> Result<Self, NnError> {
        let emb = classes.as_ref().map_or(0, |c| c.dim);
        if mlp.in_dim() != data_dim + time_dim + emb || mlp.out_dim() != data_dim {
            return Err(NnError::ShapeMismatch("network head"));
        }
        if time_dim == 0 || time_dim % 2 != 0 {
            return Err(NnError::OddTimeDim { dim: time_dim });
        }
        if time_scale == 0 || data_dim == 0 {
            return Err(NnError::BadConfig("zero dimension"));
        }
        Ok(Network {
            mlp,
            data_dim,
            time_dim,
            time_scale,
            classes,
        })
    }

    pub fn data_dim(&self) -> usize {
        self.data_dim
    }

    pub fn time_dim(&self) -> usize {
        self.time_dim
    }

    pub fn time_scale(&self) -> usize {
        self.time_scale
    }

    pub fn mlp(&self) -> &Mlp {
        &self.mlp
    }

    pub fn classes(&self) -> Option<&ClassEmbedding> {
        self.classes.as_ref()
    }

    pub fn is_conditional(&self) -> bool {
        self.classes.is_some()
    }

    fn assemble_input(
        &self,
        x: &[f64],
        t: usize,
        class: Option<usize>,
    ) -> Result<Vec<f64>, NnError> {
        if x.len() != self.data_dim {
            return Err(NnError::DimMismatch {
                expected: self.data_dim,
                got: x.len(),
            });
        }
        let mut input = Vec::with_capacity(self.mlp.in_dim());
        input.extend_from_slice(x);
        input.extend(embed_time(t, self.time_dim, self.time_scale)?);
        match (&self.classes, class) {
            (None, None) => {}
            (None, Some(_)) => return Err(NnError::UnexpectedClass),
            (Some(_), None) => return Err(NnError::MissingClass),
            (Some(emb), Some(c)) => input.extend_from_slice(emb.row(c)?),
        }
        Ok(input)
    }

    /// Predicted noise for `x` at step `t`, optionally class-conditioned.
    pub fn predict_eps(
        &self,
        x: &[f64],
        t: usize,
        class: Option<usize>,
    ) -> Result<Vec<f64>, NnError> {
        let input = self.assemble_input(x, t, class)?;
        Ok(self.mlp.forward(&input))
    }

    /// Forward pass keeping the cache for a following `backprop_cached`.
    pub fn forward_cached(
        &self,
        x: &[f64],
        t: usize,
        class: Option<usize>,
    ) -> Result<(Vec<f64>, NetCache), NnError> {
        let input = self.assemble_input(x, t, class)?;
        let (out, mlp) = self.mlp.forward_cached(&input);
        Ok((out, NetCache { mlp, class }))
    }

    /// Gradient of `dot(upstream, predict_eps(x, t, class))` with respect
    /// to every trainable parameter.
    pub fn backprop(
        &self,
        x: &[f64],
        t: usize,
        class: Option<usize>,
        upstream: &[f64],
    ) -> Result<GradientBuffer, NnError> {
        let (_, cache) = self.forward_cached(x, t, class)?;
        self.backprop_cached(&cache, upstream)
    }

    /// Reverse pass over a stored forward cache.
    pub fn backprop_cached(
        &self,
        cache: &NetCache,
        upstream: &[f64],
    ) -> Result<GradientBuffer, NnError> {
        if upstream.len() != self.data_dim {
            return Err(NnError::DimMismatch {
                expected: self.data_dim,
                got: upstream.len(),
            });
        }
        let (mlp_grads, input_grad) = self.mlp.backward(&cache.mlp, upstream);
        let class_table = match (&self.classes, cache.class) {
            (Some(emb), Some(c)) => {
                let mut table = vec![0.0; emb.table.len()];
                let start = self.data_dim + self.time_dim;
                table[c * emb.dim..(c + 1) * emb.dim]
                    .copy_from_slice(&input_grad[start..start + emb.dim]);
                Some(table)
            }
            (Some(_), None) => return Err(NnError::MissingClass),
            _ => None,
        };
        Ok(GradientBuffer {
            mlp: mlp_grads,
            class_table,
        })
    }

    pub fn param_count(&self) -> usize {
        self.mlp.param_count() + self.classes.as_ref().map_or(0, |c| c.table.len())
    }

    /// All parameters in a fixed order: MLP layers, then the class table.
    pub fn flat_params(&self) -> Vec<f64> {
        let mut out = self.mlp.flat_params();
        if let Some(c) = &self.classes {
            out.extend_from_slice(&c.table);
        }
        out
    }

    pub fn set_flat_params(&mut self, flat: &[f64]) -> Result<(), NnError> {
        if flat.len() != self.param_count() {
            return Err(NnError::ShapeMismatch("flat parameters"));
        }
        let split = self.mlp.param_count();
        self.mlp.set_flat_params(&flat[..split])?;
        if let Some(c) = &mut self.classes {
            c.table.copy_from_slice(&flat[split..]);
        }
        Ok(())
    }
}

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

/// First and second moment accumulators for `adam_step`, shaped like the
/// network they update.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    m: Vec<f64>,
    v: Vec<f64>,
    step: u64,
}

impl AdamState {
    pub fn new(net: &Network) -> Self {
        AdamState::with_len(net.param_count())
    }

    /// Fresh moments for a flat parameter vector of length `n`.
    pub fn with_len(n: usize) -> Self {
        AdamState {
            m: vec![0.0; n],
            v: vec![0.0; n],
            step: 0,
        }
    }

    /// Moment buffers in flat parameter order, for persistence.
    pub fn parts(&self) -> (&[f64], &[f64], u64) {
        (&self.m, &self.v, self.step)
    }

    pub fn from_parts(m: Vec<f64>, v: Vec<f64>, step: u64) -> Result<Self, NnError> {
        if m.len() != v.len() {
            return Err(NnError::ShapeMismatch("adam moments"));
        }
        Ok(AdamState { m, v, step })
    }

    /// One bias-corrected Adam update of `params` against `grads`.
    /// Rejects non-finite gradients without touching the moments.
    pub fn update(
        &mut self,
        params: &mut [f64],
        grads: &[f64],
        lr: f64,
    ) -> Result<(), NnError> {
        if grads.len() != params.len() || self.m.len() != grads.len() {
            return Err(NnError::ShapeMismatch("adam update"));
        }
        if grads.iter().any(|x| !x.is_finite()) {
            return Err(NnError::NonFiniteGradient);
        }
        self.step += 1;
        let bc1 = 1.0 - ADAM_BETA1.powi(self.step as i32);
        let bc2 = 1.0 - ADAM_BETA2.powi(self.step as i32);
        for i in 0..grads.len() {
            let g = grads[i];
            self.m[i] = ADAM_BETA1 * self.m[i] + (1.0 - ADAM_BETA1) * g;
            self.v[i] = ADAM_BETA2 * self.v[i] + (1.0 - ADAM_BETA2) * g * g;
            let mh = self.m[i] / bc1;
            let vh = self.v[i] / bc2;
            params[i] -= lr * mh / (vh.sqrt() + ADAM_EPS);
        }
        Ok(())
    }
}

/// One bias-corrected Adam update of every network parameter.
pub fn adam_step(
    net: &mut Network,
    grads: &GradientBuffer,
    state: &mut AdamState,
    lr: f64,
) -> Result<(), NnError> {
    let g = grads.flatten();
    if g.len() != net.param_count() {
        return Err(NnError::ShapeMismatch("adam update"));
    }
    let mut p = net.flat_params();
    state.update(&mut p, &g, lr)?;
    net.set_flat_params(&p)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::reference;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn time_embedding_basics() {
        assert_eq!(embed_time(0, 4, 100).unwrap(), vec![0.0, 1.0, 0.0, 1.0]);
        let e = embed_time(400, 2, 400).unwrap();
        assert_eq!(e, vec![(400.0f64).sin(), (400.0f64).cos()]);
        assert!(matches!(
            embed_time(3, 5, 100),
            Err(NnError::OddTimeDim { dim: 5 })
        ));
        assert!(matches!(embed_time(3, 0, 100), Err(NnError::OddTimeDim { .. })));
    }

    #[test]
    fn time_embedding_injective_over_horizon() {
        let mut seen = std::collections::HashSet::new();
        for t in 0..=10_000usize {
            let e = embed_time(t, 2, 10_000).unwrap();
            let bits: Vec<u64> = e.iter().map(|v| v.to_bits()).collect();
            assert!(seen.insert(bits), "duplicate embedding at t = {t}");
        }
    }

    #[test]
    fn zero_final_layer_means_zero_output() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let cfg = NetworkConfig::new(3, 100);
        let net = Network::new(&cfg, &mut rng).unwrap();
        let out = net.predict_eps(&[0.5, -1.0, 2.0], 42, None).unwrap();
        assert_eq!(out, vec![0.0, 0.0, 0.0]);
    }

    #[test]
    fn forward_is_deterministic() {
        let mut a = ChaCha8Rng::seed_from_u64(3);
        let mut b = ChaCha8Rng::seed_from_u64(3);
        let cfg = NetworkConfig::new(2, 50).with_hidden(vec![17, 9]);
        let mut na = Network::new(&cfg, &mut a).unwrap();
        let nb = Network::new(&cfg, &mut b).unwrap();
        assert_eq!(na.flat_params(), nb.flat_params());
        // Perturb away from the zero head so outputs are nontrivial.
        let p: Vec<f64> = na.flat_params().iter().map(|v| v + 0.01).collect();
        na.set_flat_params(&p).unwrap();
        let x = [0.3, -0.7];
        let o1 = na.predict_eps(&x, 5, None).unwrap();
        let o2 = na.predict_eps(&x, 5, None).unwrap();
        assert_eq!(o1, o2);
    }

    #[test]
    fn class_label_discipline() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let plain = Network::new(&NetworkConfig::new(2, 10), &mut rng).unwrap();
        assert!(matches!(
            plain.predict_eps(&[0.0, 0.0], 1, Some(0)),
            Err(NnError::UnexpectedClass)
        ));
        let cond = Network::new(&NetworkConfig::new(2, 10).with_classes(4), &mut rng).unwrap();
        assert!(matches!(
            cond.predict_eps(&[0.0, 0.0], 1, None),
            Err(NnError::MissingClass)
        ));
        assert!(matches!(
            cond.predict_eps(&[0.0, 0.0], 1, Some(4)),
            Err(NnError::ClassOutOfRange { class: 4, count: 4 })
        ));
        assert!(cond.predict_eps(&[0.0, 0.0], 1, Some(3)).is_ok());
    }

    fn randomize(net: &mut Network, rng: &mut impl Rng) {
        // The zero head hides gradient errors in earlier layers; shift all
        // parameters before checking.
        let p: Vec<f64> = net
            .flat_params()
            .iter()
            .map(|v| v + 0.3 * (rng.random::<f64>() - 0.5))
            .collect();
        net.set_flat_params(&p).unwrap();
    }

    #[test]
    fn backprop_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for (hidden, act, classes) in [
            (vec![16], Activation::Tanh, None),
            (vec![12, 8], Activation::Tanh, Some(3)),
            (vec![10, 10], Activation::Silu, None),
            (vec![8], Activation::Silu, Some(2)),
        ] {
            let mut cfg = NetworkConfig::new(3, 50).with_hidden(hidden);
            cfg.time_dim = 8;
            cfg.class_emb_dim = 5;
            cfg.class_count = classes;
            cfg.activation = act;
            let mut net = Network::new(&cfg, &mut rng).unwrap();
            randomize(&mut net, &mut rng);
            let x: Vec<f64> = (0..3).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect();
            let upstream: Vec<f64> = (0..3).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect();
            let class = classes.map(|_| 1);
            let got = net.backprop(&x, 7, class, &upstream).unwrap().flatten();
            let want = reference::central_diff_grads(&mut net, &x, 7, class, &upstream, 1e-5);
            let worst = got
                .iter()
                .zip(&want)
                .map(|(a, b)| (a - b).abs() / a.abs().max(b.abs()).max(1e-6))
                .fold(0.0, f64::max);
            assert!(worst < 1e-4, "gradient mismatch: {worst:e}");
        }
    }

    #[test]
    fn adam_rejects_bad_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut net = Network::new(&NetworkConfig::new(2, 10), &mut rng).unwrap();
        let mut state = AdamState::new(&net);
        let mut g = GradientBuffer::zeros_like(&net);
        g.mlp.biases[0][0] = f64::NAN;
        assert!(matches!(
            adam_step(&mut net, &g, &mut state, 1e-3),
            Err(NnError::NonFiniteGradient)
        ));
        assert_eq!(state.step, 0);
    }

    #[test]
    fn adam_descends_a_quadratic() {
        // Minimize dot(upstream, eps(x)) + frozen terms: a few Adam steps on
        // a fixed batch must reduce the scalar objective.
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut net = Network::new(
            &NetworkConfig::new(2, 20).with_hidden(vec![16]),
            &mut rng,
        )
        .unwrap();
        randomize(&mut net, &mut rng);
        let mut state = AdamState::new(&net);
        let x = [0.4, -0.2];
        let upstream = [1.0, -0.5];
        let objective = |n: &Network| {
            let o = n.predict_eps(&x, 3, None).unwrap();
            o[0] * upstream[0] + o[1] * upstream[1]
        };
        let before = objective(&net);
        for _ in 0..50 {
            let g = net.backprop(&x, 3, None, &upstream).unwrap();
            adam_step(&mut net, &g, &mut state, 1e-2).unwrap();
        }
        assert!(objective(&net) < before - 0.1);
        assert_eq!(state.step, 50);
    }
}
