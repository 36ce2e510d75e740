//! Small ε-prediction networks with exact reverse-mode gradients.
//!
//! Every layer is an affine map shared across `M` positions (`M = 1` for
//! dense layers, the number of output positions for a 1-D convolution),
//! followed by an elementwise activation. Parameters of a layer are stored
//! column-major over the bias-augmented weight matrix, so that the flattened
//! parameter gradient of a layer is exactly `Σ_m a_m ⊗ b_m` with the
//! activation vector `a_m` as the slow index.

mod train;

pub use train::{train, train_from_scratch, OptimizerKind, SamplerMode, TrainConfig, TrainOutcome};

use serde::{Deserialize, Serialize};

use crate::diffusion::{draw_sample, q_sample, NoiseSchedule};
use crate::error::{Error, Result};
use crate::rng::RngStream;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Identity,
    /// `x · sigmoid(x)`
    Silu,
}

impl Activation {
    #[inline]
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Identity => z,
            Activation::Silu => z / (1.0 + (-z).exp()),
        }
    }

    #[inline]
    fn derivative(self, z: f64) -> f64 {
        match self {
            Activation::Identity => 1.0,
            Activation::Silu => {
                let s = 1.0 / (1.0 + (-z).exp());
                s * (1.0 + z * (1.0 - s))
            }
        }
    }
}

fn default_true() -> bool {
    true
}

/// Architecture description of one layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum LayerSpec {
    Dense {
        in_dim: usize,
        out_dim: usize,
        activation: Activation,
        #[serde(default = "default_true")]
        bias: bool,
    },
    /// Valid (unpadded) stride-1 convolution over a position-major signal
    /// laid out as `[position][channel]`.
    Conv1d {
        in_len: usize,
        in_channels: usize,
        out_channels: usize,
        kernel_width: usize,
        activation: Activation,
        #[serde(default = "default_true")]
        bias: bool,
    },
}

impl LayerSpec {
    pub fn activation(&self) -> Activation {
        match self {
            LayerSpec::Dense { activation, .. } | LayerSpec::Conv1d { activation, .. } => *activation,
        }
    }

    pub fn has_bias(&self) -> bool {
        match self {
            LayerSpec::Dense { bias, .. } | LayerSpec::Conv1d { bias, .. } => *bias,
        }
    }

    pub fn input_len(&self) -> usize {
        match self {
            LayerSpec::Dense { in_dim, .. } => *in_dim,
            LayerSpec::Conv1d { in_len, in_channels, .. } => in_len * in_channels,
        }
    }

    pub fn output_len(&self) -> usize {
        self.positions() * self.out_channels()
    }

    /// Weight-sharing size `M`.
    pub fn positions(&self) -> usize {
        match self {
            LayerSpec::Dense { .. } => 1,
            LayerSpec::Conv1d { in_len, kernel_width, .. } => in_len + 1 - kernel_width,
        }
    }

    /// Length of one input patch, without the bias coordinate.
    pub fn patch_len(&self) -> usize {
        match self {
            LayerSpec::Dense { in_dim, .. } => *in_dim,
            LayerSpec::Conv1d { in_channels, kernel_width, .. } => in_channels * kernel_width,
        }
    }

    fn patch_stride(&self) -> usize {
        match self {
            LayerSpec::Dense { in_dim, .. } => *in_dim,
            LayerSpec::Conv1d { in_channels, .. } => *in_channels,
        }
    }

    pub fn out_channels(&self) -> usize {
        match self {
            LayerSpec::Dense { out_dim, .. } => *out_dim,
            LayerSpec::Conv1d { out_channels, .. } => *out_channels,
        }
    }

    /// Length of an activation vector `a_m`, including the bias coordinate.
    pub fn a_dim(&self) -> usize {
        self.patch_len() + usize::from(self.has_bias())
    }

    pub fn param_len(&self) -> usize {
        self.a_dim() * self.out_channels()
    }

    fn check(&self, index: usize) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(format!("layer {index}: {msg}")));
        match self {
            LayerSpec::Dense { in_dim, out_dim, .. } => {
                if *in_dim == 0 || *out_dim == 0 {
                    return bad(format!("dense dimensions must be positive (got {in_dim}→{out_dim})"));
                }
            }
            LayerSpec::Conv1d { in_len, in_channels, out_channels, kernel_width, .. } => {
                if *in_len == 0 || *in_channels == 0 || *out_channels == 0 || *kernel_width == 0 {
                    return bad("conv1d dimensions must be positive".into());
                }
                if kernel_width > in_len {
                    return bad(format!("kernel width {kernel_width} exceeds input length {in_len}"));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArchConfig {
    pub data_dim: usize,
    pub time_embed_dim: usize,
    pub layers: Vec<LayerSpec>,
}

impl ArchConfig {
    /// Dense network `data_dim + time_embed_dim → hidden… → data_dim`, with the
    /// given activation on hidden layers and identity on the output.
    pub fn mlp(data_dim: usize, time_embed_dim: usize, hidden: &[usize], activation: Activation) -> Self {
        let mut layers = Vec::new();
        let mut prev = data_dim + time_embed_dim;
        for &h in hidden {
            layers.push(LayerSpec::Dense { in_dim: prev, out_dim: h, activation, bias: true });
            prev = h;
        }
        layers.push(LayerSpec::Dense {
            in_dim: prev,
            out_dim: data_dim,
            activation: Activation::Identity,
            bias: true,
        });
        Self { data_dim, time_embed_dim, layers }
    }

    pub fn input_len(&self) -> usize {
        self.data_dim + self.time_embed_dim
    }

    pub fn validate(&self) -> Result<()> {
        if self.data_dim == 0 {
            return Err(Error::Config("data_dim must be positive".into()));
        }
        if !self.time_embed_dim.is_multiple_of(2) {
            return Err(Error::Config("time_embed_dim must be even".into()));
        }
        if self.layers.is_empty() {
            return Err(Error::Config("network needs at least one layer".into()));
        }
        let mut prev = self.input_len();
        for (i, layer) in self.layers.iter().enumerate() {
            layer.check(i)?;
            if layer.input_len() != prev {
                return Err(Error::Config(format!(
                    "layer {i}: expects input length {} but previous stage produces {prev}",
                    layer.input_len()
                )));
            }
            prev = layer.output_len();
        }
        if prev != self.data_dim {
            return Err(Error::Config(format!(
                "layer {}: output length {prev} does not match data_dim {}",
                self.layers.len() - 1,
                self.data_dim
            )));
        }
        Ok(())
    }
}

/// Sinusoidal embedding of the timestep index.
pub fn time_embedding(t: usize, dim: usize) -> Vec<f64> {
    let half = dim / 2;
    let mut out = vec![0.0; dim];
    for k in 0..half {
        let freq = (-(10_000f64.ln()) * k as f64 / half as f64).exp();
        let arg = t as f64 * freq;
        out[k] = arg.sin();
        out[half + k] = arg.cos();
    }
    out
}

/// Anything that predicts the noise at a given timestep.
pub trait Denoiser: Sync {
    fn data_dim(&self) -> usize;
    fn predict(&self, x_t: &[f64], t: usize) -> Vec<f64>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpsilonNet {
    pub arch: ArchConfig,
    /// Start of each layer's block in `params`.
    pub offsets: Vec<usize>,
    pub params: Vec<f64>,
}

/// Per-layer activations `a_m` and output gradients `b_m`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LayerRecord {
    pub a: Vec<Vec<f64>>,
    pub b: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct LayerTrace {
    pub layers: Vec<LayerRecord>,
}

impl LayerTrace {
    /// Reassemble the flat parameter gradient as `Σ_m a_m ⊗ b_m` per layer.
    pub fn reassemble(&self, net: &EpsilonNet) -> Vec<f64> {
        let mut out = vec![0.0; net.param_count()];
        for (l, rec) in self.layers.iter().enumerate() {
            let d_out = net.arch.layers[l].out_channels();
            let block = &mut out[net.offsets[l]..net.offsets[l] + net.arch.layers[l].param_len()];
            for (a, b) in rec.a.iter().zip(&rec.b) {
                for (i, ai) in a.iter().enumerate() {
                    for (o, bo) in b.iter().enumerate() {
                        block[i * d_out + o] += ai * bo;
                    }
                }
            }
        }
        out
    }
}

/// Intermediate values of a forward pass needed by the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardPass {
    pub output: Vec<f64>,
    /// Bias-augmented activation patches per layer and position.
    patches: Vec<Vec<Vec<f64>>>,
    /// Pre-activations per layer, position-major.
    pre: Vec<Vec<f64>>,
}

impl ForwardPass {
    /// Bias-augmented input patches `a_m`, per layer and position.
    pub fn patches(&self) -> &[Vec<Vec<f64>>] {
        &self.patches
    }

    pub fn trace(&self) -> LayerTrace {
        LayerTrace {
            layers: self.patches.iter().map(|a| LayerRecord { a: a.clone(), b: Vec::new() }).collect(),
        }
    }
}

pub struct Backward {
    pub grad: Vec<f64>,
    /// `b_m` vectors per layer and position.
    pub b: Vec<Vec<Vec<f64>>>,
}

impl EpsilonNet {
    pub fn build(arch: &ArchConfig, seed: u64) -> Result<Self> {
        arch.validate()?;
        let mut offsets = Vec::with_capacity(arch.layers.len());
        let mut total = 0;
        for layer in &arch.layers {
            offsets.push(total);
            total += layer.param_len();
        }
        let mut params = vec![0.0; total];
        let init = RngStream::new(seed).child("init");
        for (l, layer) in arch.layers.iter().enumerate() {
            let bound = 1.0 / (layer.patch_len() as f64).sqrt();
            let mut rng = init.index(l as u64).rng();
            for p in &mut params[offsets[l]..offsets[l] + layer.param_len()] {
                *p = rng.uniform(-bound, bound);
            }
        }
        Ok(Self { arch: arch.clone(), offsets, params })
    }

    /// Network with the given parameter vector; checks shape and finiteness.
    pub fn with_params(arch: &ArchConfig, params: Vec<f64>) -> Result<Self> {
        let mut net = Self::build(arch, 0)?;
        if params.len() != net.params.len() {
            return Err(Error::Shape(format!(
                "parameter vector has length {} but architecture needs {}",
                params.len(),
                net.params.len()
            )));
        }
        if params.iter().any(|p| !p.is_finite()) {
            return Err(Error::NumericInput("network parameters".into()));
        }
        net.params = params;
        Ok(net)
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    pub fn data_dim(&self) -> usize {
        self.arch.data_dim
    }

    pub fn layer_range(&self, l: usize) -> std::ops::Range<usize> {
        self.offsets[l]..self.offsets[l] + self.arch.layers[l].param_len()
    }

    /// Lengths of the per-layer parameter blocks, in order.
    pub fn layer_sizes(&self) -> Vec<usize> {
        self.arch.layers.iter().map(LayerSpec::param_len).collect()
    }

    /// SHA-256 over the architecture and the exact parameter bits, as hex.
    pub fn fingerprint(&self) -> String {
        use sha2::{Digest, Sha256};
        let mut h = Sha256::new();
        h.update(serde_json::to_vec(&self.arch).expect("architecture serialises"));
        for p in &self.params {
            h.update(p.to_le_bytes());
        }
        crate::hex(&h.finalize())
    }

    pub fn forward_pass(&self, x_t: &[f64], t: usize) -> Result<ForwardPass> {
        if x_t.len() != self.arch.data_dim {
            return Err(Error::Shape(format!(
                "input has length {} but data_dim is {}",
                x_t.len(),
                self.arch.data_dim
            )));
        }
        if x_t.iter().any(|v| !v.is_finite()) {
            return Err(Error::NumericInput("network input".into()));
        }
        let mut input: Vec<f64> = x_t.to_vec();
        input.extend(time_embedding(t, self.arch.time_embed_dim));

        let mut patches = Vec::with_capacity(self.arch.layers.len());
        let mut pre = Vec::with_capacity(self.arch.layers.len());
        for (l, layer) in self.arch.layers.iter().enumerate() {
            let w = &self.params[self.layer_range(l)];
            let d_out = layer.out_channels();
            let plen = layer.patch_len();
            let stride = layer.patch_stride();
            let act = layer.activation();
            let positions = layer.positions();
            let mut layer_patches = Vec::with_capacity(positions);
            let mut z = vec![0.0; positions * d_out];
            let mut out = vec![0.0; positions * d_out];
            for p in 0..positions {
                let mut a = input[p * stride..p * stride + plen].to_vec();
                if layer.has_bias() {
                    a.push(1.0);
                }
                let zp = &mut z[p * d_out..(p + 1) * d_out];
                for (i, ai) in a.iter().enumerate() {
                    if *ai == 0.0 {
                        continue;
                    }
                    let col = &w[i * d_out..(i + 1) * d_out];
                    for (zo, wo) in zp.iter_mut().zip(col) {
                        *zo += wo * ai;
                    }
                }
                for (o, zo) in zp.iter().enumerate() {
                    out[p * d_out + o] = act.apply(*zo);
                }
                layer_patches.push(a);
            }
            patches.push(layer_patches);
            pre.push(z);
            input = out;
        }
        Ok(ForwardPass { output: input, patches, pre })
    }

    /// Predicted noise and the activation trace.
    pub fn forward(&self, x_t: &[f64], t: usize) -> Result<(Vec<f64>, LayerTrace)> {
        let fp = self.forward_pass(x_t, t)?;
        let trace = fp.trace();
        Ok((fp.output, trace))
    }

    /// Reverse pass for an arbitrary cotangent on the network output.
    pub fn backward(&self, fp: &ForwardPass, out_grad: &[f64]) -> Backward {
        let n_layers = self.arch.layers.len();
        let mut grad = vec![0.0; self.param_count()];
        let mut b_all = vec![Vec::new(); n_layers];
        let mut g = out_grad.to_vec();
        for l in (0..n_layers).rev() {
            let layer = &self.arch.layers[l];
            let range = self.layer_range(l);
            let w = &self.params[range.clone()];
            let gw = &mut grad[range];
            let d_out = layer.out_channels();
            let plen = layer.patch_len();
            let stride = layer.patch_stride();
            let act = layer.activation();
            let positions = layer.positions();
            let mut g_in = if l > 0 { vec![0.0; layer.input_len()] } else { Vec::new() };
            let mut b_layer = Vec::with_capacity(positions);
            for p in 0..positions {
                let b: Vec<f64> = (0..d_out)
                    .map(|o| g[p * d_out + o] * act.derivative(fp.pre[l][p * d_out + o]))
                    .collect();
                let a = &fp.patches[l][p];
                for (i, ai) in a.iter().enumerate() {
                    let col = &mut gw[i * d_out..(i + 1) * d_out];
                    for (c, bo) in col.iter_mut().zip(&b) {
                        *c += ai * bo;
                    }
                }
                if l > 0 {
                    let gin = &mut g_in[p * stride..p * stride + plen];
                    for (i, gi) in gin.iter_mut().enumerate() {
                        let col = &w[i * d_out..(i + 1) * d_out];
                        *gi += col.iter().zip(&b).map(|(wo, bo)| wo * bo).sum::<f64>();
                    }
                }
                b_layer.push(b);
            }
            b_all[l] = b_layer;
            g = g_in;
        }
        Backward { grad, b: b_all }
    }

    /// Gradient of `‖target − ε_θ(x_t, t)‖²` and the full trace.
    pub fn grad_sq_loss(&self, x_t: &[f64], t: usize, target: &[f64]) -> Result<(Vec<f64>, LayerTrace)> {
        let fp = self.forward_pass(x_t, t)?;
        let out_grad = sq_loss_cotangent(&fp.output, target);
        let bw = self.backward(&fp, &out_grad);
        let trace = LayerTrace {
            layers: fp
                .patches
                .into_iter()
                .zip(bw.b)
                .map(|(a, b)| LayerRecord { a, b })
                .collect(),
        };
        Ok((bw.grad, trace))
    }

    /// Jacobian of the network output with respect to the parameters, one row
    /// per output coordinate.
    pub fn jacobian(&self, x_t: &[f64], t: usize) -> Result<Vec<Vec<f64>>> {
        let fp = self.forward_pass(x_t, t)?;
        let d = self.data_dim();
        Ok((0..d)
            .map(|r| {
                let mut e = vec![0.0; d];
                e[r] = 1.0;
                self.backward(&fp, &e).grad
            })
            .collect())
    }
}

impl Denoiser for EpsilonNet {
    fn data_dim(&self) -> usize {
        self.arch.data_dim
    }

    fn predict(&self, x_t: &[f64], t: usize) -> Vec<f64> {
        match self.forward_pass(x_t, t) {
            Ok(fp) => fp.output,
            Err(_) => vec![f64::NAN; self.arch.data_dim],
        }
    }
}

/// Cotangent of `‖target − y‖²` with respect to `y`.
pub fn sq_loss_cotangent(output: &[f64], target: &[f64]) -> Vec<f64> {
    output.iter().zip(target).map(|(y, e)| 2.0 * (y - e)).collect()
}

/// Gradient of the diffusion loss for one sampled `(t, ε)` drawn from `stream`.
pub fn sample_train_gradient(net: &EpsilonNet, schedule: &NoiseSchedule, x0: &[f64], stream: &RngStream) -> Result<Vec<f64>> {
    let s = draw_sample(schedule, x0.len(), stream);
    let x_t = q_sample(schedule, x0, s.t, &s.eps);
    Ok(net.grad_sq_loss(&x_t, s.t, &s.eps)?.0)
}

/// Monte Carlo gradient of the per-example diffusion loss with `samples`
/// draws; draw `s` comes from `stream.index(s)` for `s = 1..=samples`.
pub fn per_example_train_gradient(
    net: &EpsilonNet,
    schedule: &NoiseSchedule,
    x0: &[f64],
    samples: usize,
    stream: &RngStream,
) -> Result<Vec<f64>> {
    if samples == 0 {
        return Err(Error::Config("sample count must be at least 1".into()));
    }
    let mut acc = vec![0.0; net.param_count()];
    for s in 1..=samples {
        let g = sample_train_gradient(net, schedule, x0, &stream.index(s as u64))?;
        for (a, gi) in acc.iter_mut().zip(&g) {
            *a += gi;
        }
    }
    let inv = samples as f64;
    acc.iter_mut().for_each(|a| *a /= inv);
    Ok(acc)
}
