//! Encoder plus head wiring: turns encoder outputs into per-pixel
//! [`ComponentParams`], for both the full model and the fixed-bank variant.

use serde::{Deserialize, Serialize};

use crate::encoder::{Encoder, EncoderConfig, Head, LatentBatch, Mode};
use crate::error::{Error, Result};
use crate::linalg::Real;
use crate::renderer::{Component, ComponentParams, PARAMS_PER_COMPONENT};
use crate::trainer::FixedComponentBank;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    /// Every component parameter depends on the pixel.
    #[default]
    Full,
    /// μ, σ, α are shared trainable constants; only scales depend on the pixel.
    Fixed,
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Variant::Full => "full",
            Variant::Fixed => "fixed",
        })
    }
}

impl std::str::FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(Variant::Full),
            "fixed" => Ok(Variant::Fixed),
            other => Err(Error::Config(format!("unknown variant {other:?} (full|fixed)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpectralModel<T> {
    pub encoder: Encoder<T>,
    pub bank: Option<FixedComponentBank<T>>,
}

impl<T: Real> SpectralModel<T> {
    /// `config.head` is overridden to match the variant.
    pub fn init(config: EncoderConfig, variant: Variant, seed: u64) -> Result<Self> {
        match variant {
            Variant::Full => Ok(SpectralModel {
                encoder: Encoder::init(config.with_head(Head::Full), seed)?,
                bank: None,
            }),
            Variant::Fixed => {
                let encoder = Encoder::init(config.with_head(Head::ScalesOnly), seed)?;
                let bank = FixedComponentBank::init(encoder.config());
                Ok(SpectralModel {
                    encoder,
                    bank: Some(bank),
                })
            }
        }
    }

    pub fn variant(&self) -> Variant {
        if self.bank.is_some() {
            Variant::Fixed
        } else {
            Variant::Full
        }
    }

    pub fn config(&self) -> &EncoderConfig {
        self.encoder.config()
    }

    pub fn k(&self) -> usize {
        self.encoder.config().k
    }

    pub fn bands(&self) -> usize {
        self.encoder.config().bands
    }

    pub fn parameter_count(&self) -> usize {
        self.encoder.parameter_count() + self.bank.as_ref().map_or(0, |b| 3 * b.k())
    }

    /// Component parameters of row `i` of an encoder output.
    pub fn params_for_row(&self, latent: &LatentBatch<T>, i: usize) -> Result<ComponentParams> {
        let row = latent.row(i);
        match &self.bank {
            None => {
                let flat: Vec<f64> = row.iter().map(|v| v.as_f64()).collect();
                ComponentParams::from_flat(&flat)
            }
            Some(bank) => {
                let shapes = bank.activated(self.encoder.config());
                ComponentParams::new(
                    shapes
                        .iter()
                        .zip(row)
                        .map(|(&(mu, sigma, alpha), s)| Component::new(mu, sigma, alpha, s.as_f64()))
                        .collect(),
                )
            }
        }
    }

    /// Eval-mode component parameters for a `n × bands` batch of centered
    /// spectra.
    pub fn infer_params(&self, input: &[T]) -> Result<Vec<ComponentParams>> {
        let latent = self.encoder.infer(input)?;
        (0..latent.batch).map(|i| self.params_for_row(&latent, i)).collect()
    }

    /// Latent features (`4k` per row, `[μ, σ, α, s]` per component).
    pub fn infer_features(&self, input: &[T]) -> Result<Vec<Vec<f64>>> {
        Ok(self
            .infer_params(input)?
            .into_iter()
            .map(|p| p.to_flat())
            .collect())
    }

    pub fn forward(&mut self, input: &[T], mode: Mode) -> Result<LatentBatch<T>> {
        self.encoder.forward(input, mode)
    }

    pub fn feature_width(&self) -> usize {
        PARAMS_PER_COMPONENT * self.k()
    }

    pub fn cast<U: Real>(&self) -> SpectralModel<U> {
        SpectralModel {
            encoder: self.encoder.cast(),
            bank: self.bank.as_ref().map(|b| b.cast()),
        }
    }
}
