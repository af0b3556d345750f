//! Self-supervised training: Huber reconstruction loss through the renderer,
//! AdamW updates, validation-based early stopping.

mod adamw;
mod fixed;
mod loss;

use std::fs;
use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use adamw::{adamw_step, AdamState, AdamWConfig, ParamSlot};
pub use fixed::{BankGradients, FixedComponentBank};
pub use loss::{huber_loss, huber_term};

use crate::data_io::{center, BandMeans, SpectralCube};
use crate::encoder::{EncoderConfig, EncoderGradients, Mode, DEFAULT_HIDDEN};
use crate::error::{Error, Result};
use crate::linalg::Real;
use crate::model::{SpectralModel, Variant};
use crate::renderer::{index_coords, render, render_with_gradient, PARAMS_PER_COMPONENT};

/// Losses above this are treated as divergence.
pub const DIVERGENCE_LIMIT: f64 = 1e6;
const SPLIT_SALT: u64 = 0x5eed_0f5b_11a7;
const EVAL_CHUNK: usize = 4096;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub max_epochs: usize,
    pub patience: usize,
    pub batch_size: usize,
    pub huber_delta: f64,
    pub weight_decay: f64,
    pub betas: (f64, f64),
    pub adam_eps: f64,
    pub validation_fraction: f64,
    pub seed: u64,
    pub variant: Variant,
    /// Hidden widths of encoder layers 1–4.
    pub hidden: [usize; 4],
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-4,
            max_epochs: 50,
            patience: 5,
            batch_size: 1024,
            huber_delta: 1.0,
            weight_decay: 0.01,
            betas: (0.9, 0.999),
            adam_eps: 1e-8,
            validation_fraction: 0.1,
            seed: 0,
            variant: Variant::Full,
            hidden: DEFAULT_HIDDEN,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("learning_rate", self.learning_rate),
            ("huber_delta", self.huber_delta),
            ("adam_eps", self.adam_eps),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        if self.max_epochs == 0 {
            return Err(Error::Config("max_epochs must be at least 1".into()));
        }
        if self.batch_size < 2 {
            return Err(Error::Config("batch_size must be at least 2".into()));
        }
        if !(self.weight_decay >= 0.0) {
            return Err(Error::Config("weight_decay must be non-negative".into()));
        }
        let (b1, b2) = self.betas;
        if !((0.0..1.0).contains(&b1) && (0.0..1.0).contains(&b2)) {
            return Err(Error::Config(format!("betas {:?} outside [0, 1)", self.betas)));
        }
        if !(self.validation_fraction > 0.0 && self.validation_fraction < 1.0) {
            return Err(Error::Config(format!(
                "validation_fraction {} outside (0, 1)",
                self.validation_fraction
            )));
        }
        if self.hidden.contains(&0) {
            return Err(Error::Config("hidden widths must be positive".into()));
        }
        Ok(())
    }

    pub fn adamw(&self) -> AdamWConfig {
        AdamWConfig {
            learning_rate: self.learning_rate,
            beta1: self.betas.0,
            beta2: self.betas.1,
            eps: self.adam_eps,
            weight_decay: self.weight_decay,
        }
    }

    pub fn encoder_config(&self, bands: usize, k: usize) -> EncoderConfig {
        EncoderConfig::new(bands, k).with_hidden(self.hidden)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelGradients<T> {
    pub encoder: EncoderGradients<T>,
    pub bank: Option<BankGradients<T>>,
}

/// One train-mode forward/backward over a row-major `batch × bands` matrix
/// of centered spectra. Returns the mean per-pixel Huber loss and the
/// gradients of that mean.
pub fn reconstruction_step<T: Real>(
    model: &mut SpectralModel<T>,
    batch: &[T],
    band_coords: &[f64],
    delta: f64,
) -> Result<(f64, ModelGradients<T>)> {
    let latent = model.forward(batch, Mode::Train)?;
    let n = latent.batch;
    let bands = band_coords.len();
    let k = model.k();
    let model_ref = &*model;
    let per_pixel: Vec<(f64, Vec<f64>)> = (0..n)
        .into_par_iter()
        .map(|i| -> Result<(f64, Vec<f64>)> {
            let params = model_ref.params_for_row(&latent, i)?;
            let (spectrum, grad) = render_with_gradient(&params, band_coords)?;
            let target: Vec<f64> = batch[i * bands..(i + 1) * bands].iter().map(|v| v.as_f64()).collect();
            let (loss, d_spectrum) = huber_loss(&spectrum.values, &target, delta)?;
            Ok((loss, grad.pullback(&d_spectrum)))
        })
        .collect::<Result<_>>()?;

    let inv_n = 1.0 / n as f64;
    let loss = per_pixel.iter().map(|(l, _)| l).sum::<f64>() * inv_n;
    let out_w = model.config().out_width();
    let mut upstream = vec![T::zero(); n * out_w];
    let mut bank_acc = vec![(0.0, 0.0, 0.0); k];
    for (i, (_, dtheta)) in per_pixel.iter().enumerate() {
        let row = &mut upstream[i * out_w..(i + 1) * out_w];
        match model.variant() {
            Variant::Full => {
                for (u, &d) in row.iter_mut().zip(dtheta) {
                    *u = T::of(d * inv_n);
                }
            }
            Variant::Fixed => {
                for j in 0..k {
                    let g = &dtheta[j * PARAMS_PER_COMPONENT..(j + 1) * PARAMS_PER_COMPONENT];
                    row[j] = T::of(g[3] * inv_n);
                    bank_acc[j].0 += g[0] * inv_n;
                    bank_acc[j].1 += g[1] * inv_n;
                    bank_acc[j].2 += g[2] * inv_n;
                }
            }
        }
    }
    let encoder = model.encoder.backward(&latent, &upstream)?;
    let bank = model
        .bank
        .as_ref()
        .map(|b| b.gradients(model.encoder.config(), &bank_acc));
    Ok((loss, ModelGradients { encoder, bank }))
}

/// Eval-mode mean per-pixel Huber reconstruction loss.
pub fn reconstruction_loss<T: Real>(
    model: &SpectralModel<T>,
    data: &[T],
    band_coords: &[f64],
    delta: f64,
) -> Result<f64> {
    let bands = band_coords.len();
    let pixels = data.len() / bands;
    if pixels == 0 {
        return Err(Error::Empty("evaluation pixels"));
    }
    let mut total = 0.0;
    for chunk in data.chunks(EVAL_CHUNK * bands) {
        let params = model.infer_params(chunk)?;
        let losses: Vec<f64> = params
            .par_iter()
            .enumerate()
            .map(|(i, p)| -> Result<f64> {
                let s = render(p, band_coords)?;
                let target: Vec<f64> = chunk[i * bands..(i + 1) * bands].iter().map(|v| v.as_f64()).collect();
                Ok(huber_loss(&s.values, &target, delta)?.0)
            })
            .collect::<Result<_>>()?;
        total += losses.iter().sum::<f64>();
    }
    Ok(total / pixels as f64)
}

/// Applies one AdamW step to every trainable tensor of `model`.
pub fn apply_gradients<T: Real>(
    model: &mut SpectralModel<T>,
    grads: &ModelGradients<T>,
    state: &mut AdamState,
    cfg: &AdamWConfig,
) -> Result<()> {
    let enc_grads = grads.encoder.tensors();
    let mut slots: Vec<ParamSlot<'_, T>> = model
        .encoder
        .trainable_mut()
        .into_iter()
        .zip(enc_grads)
        .map(|(t, g)| ParamSlot {
            data: t.data,
            grad: g,
            decay: t.decay,
        })
        .collect();
    match (&mut model.bank, &grads.bank) {
        (Some(bank), Some(g)) => {
            slots.push(ParamSlot {
                data: &mut bank.mu,
                grad: &g.mu,
                decay: false,
            });
            slots.push(ParamSlot {
                data: &mut bank.sigma,
                grad: &g.sigma,
                decay: false,
            });
            slots.push(ParamSlot {
                data: &mut bank.alpha,
                grad: &g.alpha,
                decay: false,
            });
        }
        (None, None) => {}
        _ => return Err(Error::Shape("bank gradients do not match model variant".into())),
    }
    adamw_step(&mut slots, state, cfg)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub records: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub stopped_early: bool,
}

impl TrainLog {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("epoch,train_loss,val_loss,seconds\n");
        for r in &self.records {
            s.push_str(&format!("{},{},{},{:.3}\n", r.epoch, r.train_loss, r.val_loss, r.seconds));
        }
        s
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }
}

/// Mutable optimisation state carried across epochs.
#[derive(Debug, Clone)]
pub struct TrainState {
    pub optimizer: AdamState,
    pub epoch: usize,
    pub best_val_loss: f64,
    pub epochs_since_improvement: usize,
    pub rng: ChaCha8Rng,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Lowest-validation-loss model (ties go to the earlier epoch).
    pub model: SpectralModel<f32>,
    pub log: TrainLog,
    pub train_pixels: Vec<usize>,
    pub val_pixels: Vec<usize>,
}

/// Deterministic train/validation split of `pixels`.
pub fn validation_split(pixels: &[usize], fraction: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    let mut order = pixels.to_vec();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed ^ SPLIT_SALT));
    let n_val = ((fraction * order.len() as f64).round() as usize).max(1);
    if order.len() < n_val + 2 {
        return Err(Error::InvalidParameter(format!(
            "{} pixels cannot hold a validation split of {n_val} plus a 2-pixel training batch",
            order.len()
        )));
    }
    let train = order.split_off(n_val);
    Ok((train, order))
}

/// Training driver. `pixels` restricts training to a subset (e.g. the
/// benchmark's training part); `resume` continues from a saved model.
pub struct Trainer<'a> {
    config: TrainConfig,
    k: usize,
    pixels: Option<&'a [usize]>,
    resume: Option<(SpectralModel<f32>, usize)>,
}

impl<'a> Trainer<'a> {
    pub fn new(config: TrainConfig, k: usize) -> Self {
        Trainer {
            config,
            k,
            pixels: None,
            resume: None,
        }
    }

    pub fn pixels(mut self, pixels: &'a [usize]) -> Self {
        self.pixels = Some(pixels);
        self
    }

    pub fn resume(mut self, model: SpectralModel<f32>, epoch: usize) -> Self {
        self.resume = Some((model, epoch));
        self
    }

    pub fn run(self, cube: &SpectralCube, means: &BandMeans) -> Result<TrainOutcome> {
        let cfg = &self.config;
        cfg.validate()?;
        if self.k == 0 {
            return Err(Error::Config("k must be at least 1".into()));
        }
        let bands = cube.bands();
        let centered = center(cube, means)?;
        let coords = index_coords(bands);
        let all: Vec<usize> = match self.pixels {
            Some(p) => {
                if let Some(&bad) = p.iter().find(|&&p| p >= cube.pixels()) {
                    return Err(Error::InvalidParameter(format!("training pixel {bad} out of range")));
                }
                p.to_vec()
            }
            None => (0..cube.pixels()).collect(),
        };
        let (train_px, val_px) = validation_split(&all, cfg.validation_fraction, cfg.seed)?;
        let val_data = centered.gather(&val_px);

        let (mut model, start_epoch) = match self.resume {
            Some((m, epoch)) => {
                if m.bands() != bands || m.k() != self.k || m.variant() != cfg.variant {
                    return Err(Error::Config(format!(
                        "resumed model (bands {}, k {}, {}) does not match run (bands {bands}, k {}, {})",
                        m.bands(),
                        m.k(),
                        m.variant(),
                        self.k,
                        cfg.variant
                    )));
                }
                (m, epoch)
            }
            None => (
                SpectralModel::<f32>::init(cfg.encoder_config(bands, self.k), cfg.variant, cfg.seed)?,
                0,
            ),
        };

        let mut state = TrainState {
            optimizer: AdamState::new(),
            epoch: start_epoch,
            best_val_loss: f64::INFINITY,
            epochs_since_improvement: 0,
            rng: ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(start_epoch as u64)),
        };
        let adam = cfg.adamw();
        let mut best = model.clone();
        let mut best_epoch = start_epoch;
        let mut records = Vec::new();
        let mut stopped_early = false;
        let mut order = train_px.clone();

        while state.epoch < cfg.max_epochs {
            state.epoch += 1;
            let epoch = state.epoch;
            let started = Instant::now();
            order.shuffle(&mut state.rng);
            let (mut sum, mut count) = (0.0, 0usize);
            for chunk in order.chunks(cfg.batch_size) {
                if chunk.len() < 2 {
                    continue;
                }
                let batch = centered.gather(chunk);
                let (loss, grads) = reconstruction_step(&mut model, &batch, &coords, cfg.huber_delta)?;
                if !loss.is_finite() || loss > DIVERGENCE_LIMIT {
                    return Err(Error::Divergence { epoch, loss });
                }
                apply_gradients(&mut model, &grads, &mut state.optimizer, &adam).map_err(|e| match e {
                    Error::NonFinite(_) => Error::Divergence { epoch, loss },
                    other => other,
                })?;
                sum += loss * chunk.len() as f64;
                count += chunk.len();
            }
            let train_loss = sum / count.max(1) as f64;
            let val_loss = reconstruction_loss(&model, &val_data, &coords, cfg.huber_delta)?;
            if !val_loss.is_finite() || val_loss > DIVERGENCE_LIMIT {
                return Err(Error::Divergence { epoch, loss: val_loss });
            }
            records.push(EpochRecord {
                epoch,
                train_loss,
                val_loss,
                seconds: started.elapsed().as_secs_f64(),
            });
            if val_loss < state.best_val_loss {
                state.best_val_loss = val_loss;
                state.epochs_since_improvement = 0;
                best = model.clone();
                best_epoch = epoch;
            } else {
                state.epochs_since_improvement += 1;
                if state.epochs_since_improvement >= cfg.patience {
                    stopped_early = true;
                    break;
                }
            }
        }

        Ok(TrainOutcome {
            model: best,
            log: TrainLog {
                records,
                best_epoch,
                best_val_loss: state.best_val_loss,
                stopped_early,
            },
            train_pixels: train_px,
            val_pixels: val_px,
        })
    }
}

/// Trains the full model on every pixel of `cube`.
pub fn train_autoencoder(cube: &SpectralCube, means: &BandMeans, config: &TrainConfig, k: usize) -> Result<TrainOutcome> {
    Trainer::new(config.clone(), k).run(cube, means)
}

/// Same loop with the shared-shape bank: μ, σ, α are global trainables and
/// the encoder emits only the `k` scales.
pub fn train_fixed_variant(cube: &SpectralCube, means: &BandMeans, config: &TrainConfig, k: usize) -> Result<TrainOutcome> {
    let config = TrainConfig {
        variant: Variant::Fixed,
        ..config.clone()
    };
    Trainer::new(config, k).run(cube, means)
}
