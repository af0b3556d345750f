//! Pixel-wise encoder: five dense layers (1×1 convolutions) mapping a
//! centered spectrum to bounded component parameters.
//!
//! Layers 1–4 are `dense → batch norm → LeakyReLU`. Layer 5 feeds the heads
//! directly:
//!
//! ```text
//! μ = C · sigmoid(z)
//! σ = σ_floor + (C − σ_floor) · sigmoid(z)
//! α = C · tanh(z)
//! s = C · tanh(z)
//! ```
//!
//! With [`Head::ScalesOnly`] the last layer emits only the `k` scales; shapes
//! then come from a shared bank (see `trainer::FixedComponentBank`).

mod checkpoint;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use checkpoint::{build_manifest, load_checkpoint, save_checkpoint, BankSnapshot, CheckpointManifest, TensorEntry, MANIFEST_FILE};

use crate::error::{Error, Result};
use crate::linalg::{column_sums, matmul_nn, matmul_nt, matmul_tn, Real};
use crate::renderer::PARAMS_PER_COMPONENT;
use crate::special::sigmoid;

pub const DEFAULT_HIDDEN: [usize; 4] = [512, 1024, 512, 256];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Head {
    /// `4k` outputs: μ, σ, α, s per component.
    Full,
    /// `k` outputs: s per component.
    ScalesOnly,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub bands: usize,
    pub k: usize,
    pub hidden: [usize; 4],
    pub head: Head,
    pub leaky_slope: f64,
    pub sigma_floor: f64,
    pub bn_eps: f64,
    pub bn_momentum: f64,
}

impl EncoderConfig {
    pub fn new(bands: usize, k: usize) -> Self {
        EncoderConfig {
            bands,
            k,
            hidden: DEFAULT_HIDDEN,
            head: Head::Full,
            leaky_slope: 0.01,
            sigma_floor: 0.01 * bands as f64,
            bn_eps: 1e-5,
            bn_momentum: 0.1,
        }
    }

    pub fn with_hidden(mut self, hidden: [usize; 4]) -> Self {
        self.hidden = hidden;
        self
    }

    pub fn with_head(mut self, head: Head) -> Self {
        self.head = head;
        self
    }

    pub fn out_width(&self) -> usize {
        match self.head {
            Head::Full => PARAMS_PER_COMPONENT * self.k,
            Head::ScalesOnly => self.k,
        }
    }

    /// `[(in, out)]` for the five dense layers.
    pub fn layer_dims(&self) -> [(usize, usize); 5] {
        let h = self.hidden;
        [
            (self.bands, h[0]),
            (h[0], h[1]),
            (h[1], h[2]),
            (h[2], h[3]),
            (h[3], self.out_width()),
        ]
    }

    pub fn validate(&self) -> Result<()> {
        if self.bands == 0 || self.k == 0 || self.hidden.contains(&0) {
            return Err(Error::InvalidParameter(format!(
                "encoder dims must be positive: bands {}, k {}, hidden {:?}",
                self.bands, self.k, self.hidden
            )));
        }
        let c = self.bands as f64;
        if !(self.sigma_floor > 0.0 && self.sigma_floor < c) {
            return Err(Error::InvalidParameter(format!(
                "sigma_floor {} outside (0, {c})",
                self.sigma_floor
            )));
        }
        if !(self.bn_eps > 0.0 && self.bn_momentum > 0.0 && self.bn_momentum <= 1.0) {
            return Err(Error::InvalidParameter("batch-norm eps/momentum".into()));
        }
        Ok(())
    }

    /// Trainable parameters: dense weights and biases plus BN scale and shift.
    pub fn parameter_count(&self) -> usize {
        let dense: usize = self.layer_dims().iter().map(|&(i, o)| i * o + o).sum();
        let bn: usize = 2 * self.hidden.iter().sum::<usize>();
        dense + bn
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dense<T> {
    pub inputs: usize,
    pub outputs: usize,
    /// Row-major `outputs × inputs`.
    pub weight: Vec<T>,
    pub bias: Vec<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchNorm<T> {
    pub gamma: Vec<T>,
    pub beta: Vec<T>,
    pub running_mean: Vec<T>,
    pub running_var: Vec<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Encoder<T> {
    config: EncoderConfig,
    pub dense: Vec<Dense<T>>,
    pub norms: Vec<BatchNorm<T>>,
}

/// Intermediates of a train-mode forward pass.
#[derive(Debug, Clone)]
pub struct Tape<T> {
    batch: usize,
    /// Input to each dense layer (`inputs[0]` is the spectra batch).
    inputs: Vec<Vec<T>>,
    /// Normalized pre-affine activations of layers 1–4.
    xhat: Vec<Vec<T>>,
    inv_std: Vec<Vec<f64>>,
    /// Post-affine, pre-LeakyReLU activations of layers 1–4.
    affine: Vec<Vec<T>>,
}

/// Encoder output for a batch of `batch` pixels.
#[derive(Debug, Clone)]
pub struct LatentBatch<T> {
    pub batch: usize,
    pub width: usize,
    /// Last-layer pre-activations, row-major `batch × width`.
    pub raw: Vec<T>,
    /// Head-activated parameters, same layout.
    pub activated: Vec<T>,
    tape: Option<Tape<T>>,
}

impl<T: Real> LatentBatch<T> {
    pub fn row(&self, i: usize) -> &[T] {
        &self.activated[i * self.width..(i + 1) * self.width]
    }

    pub fn has_tape(&self) -> bool {
        self.tape.is_some()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseGrad<T> {
    pub weight: Vec<T>,
    pub bias: Vec<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NormGrad<T> {
    pub gamma: Vec<T>,
    pub beta: Vec<T>,
}

/// Loss gradients for every trainable tensor of an [`Encoder`].
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderGradients<T> {
    pub dense: Vec<DenseGrad<T>>,
    pub norms: Vec<NormGrad<T>>,
}

impl<T: Real> EncoderGradients<T> {
    /// Trainable tensors in [`Encoder::trainable_mut`] order.
    pub fn tensors(&self) -> Vec<&[T]> {
        let mut out: Vec<&[T]> = Vec::with_capacity(18);
        for (l, d) in self.dense.iter().enumerate() {
            out.push(&d.weight);
            out.push(&d.bias);
            if let Some(n) = self.norms.get(l) {
                out.push(&n.gamma);
                out.push(&n.beta);
            }
        }
        out
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.iter().all(|v| v.is_finite()))
    }
}

/// A trainable tensor view: name, data, and whether weight decay applies.
pub struct TensorMut<'a, T> {
    pub name: String,
    pub data: &'a mut [T],
    pub decay: bool,
}

#[inline]
fn leaky<T: Real>(x: T, slope: T) -> T {
    if x > T::zero() {
        x
    } else {
        x * slope
    }
}

impl<T: Real> Encoder<T> {
    /// Weights uniform in `±sqrt(6 / fan_in)`, biases zero, BN at identity.
    pub fn init(config: EncoderConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let dense = config
            .layer_dims()
            .iter()
            .map(|&(inputs, outputs)| {
                let bound = (6.0 / inputs as f64).sqrt();
                Dense {
                    inputs,
                    outputs,
                    weight: (0..inputs * outputs)
                        .map(|_| T::of(rng.gen_range(-bound..bound)))
                        .collect(),
                    bias: vec![T::zero(); outputs],
                }
            })
            .collect();
        let norms = config
            .hidden
            .iter()
            .map(|&w| BatchNorm {
                gamma: vec![T::one(); w],
                beta: vec![T::zero(); w],
                running_mean: vec![T::zero(); w],
                running_var: vec![T::one(); w],
            })
            .collect();
        Ok(Encoder {
            config,
            dense,
            norms,
        })
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.config
    }

    pub fn parameter_count(&self) -> usize {
        self.trainable().iter().map(|(_, t)| t.len()).sum()
    }

    pub fn trainable(&self) -> Vec<(String, &[T])> {
        let mut out: Vec<(String, &[T])> = Vec::with_capacity(18);
        for (l, d) in self.dense.iter().enumerate() {
            out.push((format!("dense{l}.weight"), &d.weight));
            out.push((format!("dense{l}.bias"), &d.bias));
            if let Some(n) = self.norms.get(l) {
                out.push((format!("bn{l}.gamma"), &n.gamma));
                out.push((format!("bn{l}.beta"), &n.beta));
            }
        }
        out
    }

    /// Trainable tensors; decay applies to dense weights only.
    pub fn trainable_mut(&mut self) -> Vec<TensorMut<'_, T>> {
        let mut out = Vec::with_capacity(18);
        let mut norms = self.norms.iter_mut();
        for (l, d) in self.dense.iter_mut().enumerate() {
            out.push(TensorMut {
                name: format!("dense{l}.weight"),
                data: &mut d.weight,
                decay: true,
            });
            out.push(TensorMut {
                name: format!("dense{l}.bias"),
                data: &mut d.bias,
                decay: false,
            });
            if let Some(n) = norms.next() {
                out.push(TensorMut {
                    name: format!("bn{l}.gamma"),
                    data: &mut n.gamma,
                    decay: false,
                });
                out.push(TensorMut {
                    name: format!("bn{l}.beta"),
                    data: &mut n.beta,
                    decay: false,
                });
            }
        }
        out
    }

    /// Every stored tensor (trainable plus running statistics).
    pub fn all_tensors(&self) -> Vec<(String, &[T])> {
        let mut out = self.trainable();
        for (l, n) in self.norms.iter().enumerate() {
            out.push((format!("bn{l}.running_mean"), &n.running_mean));
            out.push((format!("bn{l}.running_var"), &n.running_var));
        }
        out
    }

    pub fn all_tensors_mut(&mut self) -> Vec<(String, &mut Vec<T>)> {
        let mut out: Vec<(String, &mut Vec<T>)> = Vec::with_capacity(26);
        let mut stats = Vec::with_capacity(8);
        let mut norms = self.norms.iter_mut();
        for (l, d) in self.dense.iter_mut().enumerate() {
            out.push((format!("dense{l}.weight"), &mut d.weight));
            out.push((format!("dense{l}.bias"), &mut d.bias));
            if let Some(n) = norms.next() {
                out.push((format!("bn{l}.gamma"), &mut n.gamma));
                out.push((format!("bn{l}.beta"), &mut n.beta));
                stats.push((format!("bn{l}.running_mean"), &mut n.running_mean));
                stats.push((format!("bn{l}.running_var"), &mut n.running_var));
            }
        }
        out.extend(stats);
        out
    }

    fn apply_heads(&self, raw: &[T]) -> Vec<T> {
        let c = self.config.bands as f64;
        let floor = self.config.sigma_floor;
        let width = self.config.out_width();
        raw.iter()
            .enumerate()
            .map(|(i, &z)| {
                let z = z.as_f64();
                let v = match self.config.head {
                    Head::ScalesOnly => c * z.tanh(),
                    Head::Full => match (i % width) % PARAMS_PER_COMPONENT {
                        0 => c * sigmoid(z),
                        1 => floor + (c - floor) * sigmoid(z),
                        _ => c * z.tanh(),
                    },
                };
                T::of(v)
            })
            .collect()
    }

    /// `d activated / d raw` elementwise.
    fn head_derivative(&self, raw: &[T]) -> Vec<f64> {
        let c = self.config.bands as f64;
        let floor = self.config.sigma_floor;
        let width = self.config.out_width();
        raw.iter()
            .enumerate()
            .map(|(i, &z)| {
                let z = z.as_f64();
                let tanh_d = |z: f64| {
                    let t = z.tanh();
                    c * (1.0 - t * t)
                };
                match self.config.head {
                    Head::ScalesOnly => tanh_d(z),
                    Head::Full => match (i % width) % PARAMS_PER_COMPONENT {
                        0 => {
                            let s = sigmoid(z);
                            c * s * (1.0 - s)
                        }
                        1 => {
                            let s = sigmoid(z);
                            (c - floor) * s * (1.0 - s)
                        }
                        _ => tanh_d(z),
                    },
                }
            })
            .collect()
    }

    /// Runs the encoder on a row-major `batch × bands` matrix of centered
    /// spectra. Train mode uses batch statistics, updates running statistics
    /// and records a tape for [`Encoder::backward`]; eval mode is pure.
    pub fn forward(&mut self, input: &[T], mode: Mode) -> Result<LatentBatch<T>> {
        let bands = self.config.bands;
        if !input.len().is_multiple_of(bands) {
            return Err(Error::Shape(format!(
                "input of length {} is not a multiple of {bands} bands",
                input.len()
            )));
        }
        let batch = input.len() / bands;
        if batch == 0 {
            return Err(Error::Empty("encoder batch"));
        }
        match mode {
            Mode::Eval => Ok(self.forward_eval(input, batch)),
            Mode::Train => {
                if batch < 2 {
                    return Err(Error::InvalidParameter(
                        "train-mode forward needs at least 2 pixels for batch statistics".into(),
                    ));
                }
                Ok(self.forward_train(input, batch))
            }
        }
    }

    /// Eval-mode forward that does not need `&mut self`.
    pub fn infer(&self, input: &[T]) -> Result<LatentBatch<T>> {
        let bands = self.config.bands;
        if input.is_empty() || !input.len().is_multiple_of(bands) {
            return Err(Error::Shape(format!(
                "input of length {} is not a positive multiple of {bands} bands",
                input.len()
            )));
        }
        Ok(self.forward_eval(input, input.len() / bands))
    }

    fn forward_eval(&self, input: &[T], batch: usize) -> LatentBatch<T> {
        let slope = T::of(self.config.leaky_slope);
        let eps = self.config.bn_eps;
        let mut h = input.to_vec();
        for (layer, norm) in self.dense.iter().zip(&self.norms) {
            let mut z = vec![T::zero(); batch * layer.outputs];
            matmul_nt(batch, layer.inputs, layer.outputs, &h, &layer.weight, &mut z);
            let scale: Vec<T> = (0..layer.outputs)
                .map(|j| T::of(norm.gamma[j].as_f64() / (norm.running_var[j].as_f64() + eps).sqrt()))
                .collect();
            for row in z.chunks_exact_mut(layer.outputs) {
                for j in 0..layer.outputs {
                    let x = row[j] + layer.bias[j] - norm.running_mean[j];
                    row[j] = leaky(x * scale[j] + norm.beta[j], slope);
                }
            }
            h = z;
        }
        let last = &self.dense[4];
        let mut raw = vec![T::zero(); batch * last.outputs];
        matmul_nt(batch, last.inputs, last.outputs, &h, &last.weight, &mut raw);
        for row in raw.chunks_exact_mut(last.outputs) {
            row.iter_mut().zip(&last.bias).for_each(|(r, &b)| *r += b);
        }
        let activated = self.apply_heads(&raw);
        LatentBatch {
            batch,
            width: last.outputs,
            raw,
            activated,
            tape: None,
        }
    }

    fn forward_train(&mut self, input: &[T], batch: usize) -> LatentBatch<T> {
        let slope = T::of(self.config.leaky_slope);
        let eps = self.config.bn_eps;
        let momentum = self.config.bn_momentum;
        let n = batch as f64;
        let mut tape = Tape {
            batch,
            inputs: Vec::with_capacity(5),
            xhat: Vec::with_capacity(4),
            inv_std: Vec::with_capacity(4),
            affine: Vec::with_capacity(4),
        };
        let mut h = input.to_vec();
        for (layer, norm) in self.dense.iter().zip(self.norms.iter_mut()) {
            let width = layer.outputs;
            let mut z = vec![T::zero(); batch * width];
            matmul_nt(batch, layer.inputs, width, &h, &layer.weight, &mut z);
            for row in z.chunks_exact_mut(width) {
                row.iter_mut().zip(&layer.bias).for_each(|(r, &b)| *r += b);
            }
            let mean: Vec<f64> = column_sums(batch, width, &z).into_iter().map(|s| s / n).collect();
            let mut var = vec![0.0f64; width];
            for row in z.chunks_exact(width) {
                for j in 0..width {
                    let d = row[j].as_f64() - mean[j];
                    var[j] += d * d;
                }
            }
            var.iter_mut().for_each(|v| *v /= n);
            let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();

            let mut xhat = vec![T::zero(); batch * width];
            let mut affine = vec![T::zero(); batch * width];
            let mut out = vec![T::zero(); batch * width];
            for r in 0..batch {
                for j in 0..width {
                    let i = r * width + j;
                    let x = T::of((z[i].as_f64() - mean[j]) * inv_std[j]);
                    let y = norm.gamma[j] * x + norm.beta[j];
                    xhat[i] = x;
                    affine[i] = y;
                    out[i] = leaky(y, slope);
                }
            }
            // Running variance uses the unbiased batch estimate.
            let unbias = n / (n - 1.0);
            for j in 0..width {
                let rm = norm.running_mean[j].as_f64();
                let rv = norm.running_var[j].as_f64();
                norm.running_mean[j] = T::of((1.0 - momentum) * rm + momentum * mean[j]);
                norm.running_var[j] = T::of((1.0 - momentum) * rv + momentum * var[j] * unbias);
            }
            tape.inputs.push(std::mem::replace(&mut h, out));
            tape.xhat.push(xhat);
            tape.inv_std.push(inv_std);
            tape.affine.push(affine);
        }
        let last = &self.dense[4];
        let mut raw = vec![T::zero(); batch * last.outputs];
        matmul_nt(batch, last.inputs, last.outputs, &h, &last.weight, &mut raw);
        for row in raw.chunks_exact_mut(last.outputs) {
            row.iter_mut().zip(&last.bias).for_each(|(r, &b)| *r += b);
        }
        tape.inputs.push(h);
        let activated = self.apply_heads(&raw);
        LatentBatch {
            batch,
            width: last.outputs,
            raw,
            activated,
            tape: Some(tape),
        }
    }

    /// Backpropagates `upstream` (`∂L/∂activated`, `batch × out_width`)
    /// through heads, dense layers and batch norm.
    pub fn backward(&self, latent: &LatentBatch<T>, upstream: &[T]) -> Result<EncoderGradients<T>> {
        let tape = latent.tape.as_ref().ok_or(Error::NoCachedForward)?;
        let batch = tape.batch;
        let out_w = self.config.out_width();
        if upstream.len() != batch * out_w {
            return Err(Error::Shape(format!(
                "upstream gradient of length {} for a {batch}×{out_w} latent",
                upstream.len()
            )));
        }
        let slope = T::of(self.config.leaky_slope);
        let head_d = self.head_derivative(&latent.raw);
        let mut dz: Vec<T> = upstream
            .iter()
            .zip(&head_d)
            .map(|(&u, &d)| T::of(u.as_f64() * d))
            .collect();

        let mut dense_grads: Vec<Option<DenseGrad<T>>> = vec![None; 5];
        let mut norm_grads: Vec<Option<NormGrad<T>>> = vec![None; 4];

        for l in (0..5).rev() {
            let layer = &self.dense[l];
            let (fan_in, width) = (layer.inputs, layer.outputs);
            if l < 4 {
                // dz currently holds ∂L/∂(layer output after LeakyReLU).
                let gamma = &self.norms[l].gamma;
                let xhat = &tape.xhat[l];
                let affine = &tape.affine[l];
                let inv_std = &tape.inv_std[l];
                let mut dy = dz;
                for (g, &y) in dy.iter_mut().zip(affine) {
                    if y <= T::zero() {
                        *g *= slope;
                    }
                }
                let dbeta = column_sums(batch, width, &dy);
                let mut dgamma = vec![0.0f64; width];
                for (row_dy, row_x) in dy.chunks_exact(width).zip(xhat.chunks_exact(width)) {
                    for j in 0..width {
                        dgamma[j] += row_dy[j].as_f64() * row_x[j].as_f64();
                    }
                }
                // ∂L/∂x̂ = dy·γ; Σ dx̂ = γ·Σdy, Σ dx̂·x̂ = γ·dgamma.
                let n = batch as f64;
                let mut dpre = vec![T::zero(); batch * width];
                for r in 0..batch {
                    for j in 0..width {
                        let i = r * width + j;
                        let g = gamma[j].as_f64();
                        let dxhat = dy[i].as_f64() * g;
                        let v = inv_std[j] / n
                            * (n * dxhat - g * dbeta[j] - xhat[i].as_f64() * g * dgamma[j]);
                        dpre[i] = T::of(v);
                    }
                }
                norm_grads[l] = Some(NormGrad {
                    gamma: dgamma.into_iter().map(T::of).collect(),
                    beta: dbeta.into_iter().map(T::of).collect(),
                });
                dz = dpre;
            }
            let h = &tape.inputs[l];
            let mut dw = vec![T::zero(); width * fan_in];
            matmul_tn(width, batch, fan_in, &dz, h, &mut dw);
            let db: Vec<T> = column_sums(batch, width, &dz).into_iter().map(T::of).collect();
            let next = if l > 0 {
                let mut dh = vec![T::zero(); batch * fan_in];
                matmul_nn(batch, width, fan_in, &dz, &layer.weight, &mut dh);
                Some(dh)
            } else {
                None
            };
            dense_grads[l] = Some(DenseGrad { weight: dw, bias: db });
            if let Some(dh) = next {
                dz = dh;
            } else {
                break;
            }
        }
        Ok(EncoderGradients {
            dense: dense_grads.into_iter().map(|g| g.expect("filled")).collect(),
            norms: norm_grads.into_iter().map(|g| g.expect("filled")).collect(),
        })
    }

    /// Copies parameters into another precision.
    pub fn cast<U: Real>(&self) -> Encoder<U> {
        let conv = |v: &[T]| v.iter().map(|x| U::of(x.as_f64())).collect::<Vec<U>>();
        Encoder {
            config: self.config.clone(),
            dense: self
                .dense
                .iter()
                .map(|d| Dense {
                    inputs: d.inputs,
                    outputs: d.outputs,
                    weight: conv(&d.weight),
                    bias: conv(&d.bias),
                })
                .collect(),
            norms: self
                .norms
                .iter()
                .map(|n| BatchNorm {
                    gamma: conv(&n.gamma),
                    beta: conv(&n.beta),
                    running_mean: conv(&n.running_mean),
                    running_var: conv(&n.running_var),
                })
                .collect(),
        }
    }
}
