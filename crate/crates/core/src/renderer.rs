//! Parameter-free decoder.
//!
//! A pixel's spectrum is modelled as a signed mixture of `k` skew-normal
//! basis functions sampled at the band coordinates:
//!
//! ```text
//! f(λ | μ, σ, α) = 2 · N(λ | μ, σ) · Φ(α (λ − μ))
//! S(λ)           = Σᵢ sᵢ · f(λ | μᵢ, σᵢ, αᵢ)
//! ```
//!
//! Note the skew argument is `α (λ − μ)`, not the `α (λ − μ) / σ` of the
//! textbook parameterisation. The density still integrates to one because
//! `α (λ − μ)` is odd about `μ`.
//!
//! Gradients are closed form. With `d = λ − μ`, `g = N(λ | μ, σ)`,
//! `P = Φ(α d)` and `p = φ(α d)`:
//!
//! ```text
//! ∂f/∂μ = 2 g (d/σ² · P − α p)
//! ∂f/∂σ = 2 g (d²/σ³ − 1/σ) P
//! ∂f/∂α = 2 g p d
//! ∂S/∂sᵢ = f(λ | μᵢ, σᵢ, αᵢ)
//! ```

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::special::{normal_cdf, normal_pdf};

/// Number of scalars per component: μ, σ, α, s.
pub const PARAMS_PER_COMPONENT: usize = 4;

/// One spectral component. `mu` and `sigma` are in band-index units, `alpha`
/// is dimensionless and `scale` is in reflectance units (signed).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Component {
    pub mu: f64,
    pub sigma: f64,
    pub alpha: f64,
    pub scale: f64,
}

impl Component {
    pub fn new(mu: f64, sigma: f64, alpha: f64, scale: f64) -> Self {
        Component {
            mu,
            sigma,
            alpha,
            scale,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let all = [self.mu, self.sigma, self.alpha, self.scale];
        if all.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("component {self:?}")));
        }
        if self.sigma <= 0.0 {
            return Err(Error::InvalidParameter(format!(
                "sigma must be positive, got {}",
                self.sigma
            )));
        }
        Ok(())
    }
}

/// The per-pixel latent: `k` components, laid out as `[μ, σ, α, s]` per
/// component when flattened.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComponentParams {
    components: Vec<Component>,
}

impl ComponentParams {
    pub fn new(components: Vec<Component>) -> Result<Self> {
        if components.is_empty() {
            return Err(Error::Empty("component list"));
        }
        for c in &components {
            c.validate()?;
        }
        Ok(ComponentParams { components })
    }

    /// Builds from a flat `[μ₁, σ₁, α₁, s₁, μ₂, ...]` slice of length `4k`.
    pub fn from_flat(flat: &[f64]) -> Result<Self> {
        if flat.is_empty() || !flat.len().is_multiple_of(PARAMS_PER_COMPONENT) {
            return Err(Error::Shape(format!(
                "flat parameter vector of length {} is not a positive multiple of 4",
                flat.len()
            )));
        }
        Self::new(
            flat.chunks_exact(PARAMS_PER_COMPONENT)
                .map(|c| Component::new(c[0], c[1], c[2], c[3]))
                .collect(),
        )
    }

    pub fn to_flat(&self) -> Vec<f64> {
        self.components
            .iter()
            .flat_map(|c| [c.mu, c.sigma, c.alpha, c.scale])
            .collect()
    }

    pub fn k(&self) -> usize {
        self.components.len()
    }

    pub fn components(&self) -> &[Component] {
        &self.components
    }

    /// Same shapes, different scales. Used for linearity checks and the
    /// fixed-bank variant.
    pub fn with_scales(&self, scales: &[f64]) -> Result<Self> {
        if scales.len() != self.k() {
            return Err(Error::Shape(format!(
                "{} scales for {} components",
                scales.len(),
                self.k()
            )));
        }
        Self::new(
            self.components
                .iter()
                .zip(scales)
                .map(|(c, &s)| Component { scale: s, ..*c })
                .collect(),
        )
    }
}

/// A differentiable basis family. Only the skew normal ships; other families
/// plug in here.
pub trait BasisFunction {
    /// Density at `lambda`. `component.scale` is ignored.
    fn value(&self, lambda: f64, component: &Component) -> f64;

    /// Density plus its partials with respect to `(mu, sigma, alpha)`.
    fn value_and_partials(&self, lambda: f64, component: &Component) -> (f64, [f64; 3]);
}

#[derive(Debug, Clone, Copy, Default)]
pub struct SkewNormal;

impl BasisFunction for SkewNormal {
    #[inline]
    fn value(&self, lambda: f64, c: &Component) -> f64 {
        let d = lambda - c.mu;
        let inv_sigma = 1.0 / c.sigma;
        let g = normal_pdf(d * inv_sigma) * inv_sigma;
        2.0 * g * normal_cdf(c.alpha * d)
    }

    #[inline]
    fn value_and_partials(&self, lambda: f64, c: &Component) -> (f64, [f64; 3]) {
        let d = lambda - c.mu;
        let inv_sigma = 1.0 / c.sigma;
        let g = normal_pdf(d * inv_sigma) * inv_sigma;
        let ad = c.alpha * d;
        let cdf = normal_cdf(ad);
        let pdf = normal_pdf(ad);
        let two_g = 2.0 * g;
        let f = two_g * cdf;
        let d_mu = two_g * (d * inv_sigma * inv_sigma * cdf - c.alpha * pdf);
        let d_sigma = f * (d * d * inv_sigma * inv_sigma - 1.0) * inv_sigma;
        let d_alpha = two_g * pdf * d;
        (f, [d_mu, d_sigma, d_alpha])
    }
}

/// `2 · N(λ | μ, σ) · Φ(α (λ − μ))`.
pub fn skew_normal_pdf(lambda: f64, mu: f64, sigma: f64, alpha: f64) -> Result<f64> {
    let c = Component::new(mu, sigma, alpha, 1.0);
    c.validate()?;
    if !lambda.is_finite() {
        return Err(Error::NonFinite(format!("band coordinate {lambda}")));
    }
    Ok(SkewNormal.value(lambda, &c))
}

#[derive(Debug, Clone, PartialEq)]
pub struct RenderedSpectrum {
    pub values: Vec<f64>,
}

/// Row-major `C × 4k`: entry `(c, 4i + j)` is `∂S(λ_c)/∂θ_{i,j}` with
/// `j` indexing `[μ, σ, α, s]`.
#[derive(Debug, Clone, PartialEq)]
pub struct RenderGradient {
    bands: usize,
    width: usize,
    data: Vec<f64>,
}

impl RenderGradient {
    pub fn bands(&self) -> usize {
        self.bands
    }

    /// `4k`.
    pub fn width(&self) -> usize {
        self.width
    }

    pub fn get(&self, band: usize, component: usize, param: usize) -> f64 {
        self.data[band * self.width + component * PARAMS_PER_COMPONENT + param]
    }

    pub fn row(&self, band: usize) -> &[f64] {
        &self.data[band * self.width..(band + 1) * self.width]
    }

    /// Vector-Jacobian product: given `∂L/∂S` per band, returns `∂L/∂θ`
    /// (length `4k`).
    pub fn pullback(&self, upstream: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.width];
        for (row, &u) in self.data.chunks_exact(self.width).zip(upstream) {
            for (o, &r) in out.iter_mut().zip(row) {
                *o += u * r;
            }
        }
        out
    }
}

fn check_coords(band_coords: &[f64]) -> Result<()> {
    if band_coords.is_empty() {
        return Err(Error::Empty("band coordinates"));
    }
    if let Some(bad) = band_coords.iter().find(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!("band coordinate {bad}")));
    }
    Ok(())
}

/// Renderer over an arbitrary basis family.
#[derive(Debug, Clone, Copy, Default)]
pub struct Renderer<B = SkewNormal> {
    basis: B,
}

impl<B: BasisFunction> Renderer<B> {
    pub fn with_basis(basis: B) -> Self {
        Renderer { basis }
    }

    pub fn render(&self, params: &ComponentParams, band_coords: &[f64]) -> Result<RenderedSpectrum> {
        check_coords(band_coords)?;
        let values = band_coords
            .iter()
            .map(|&l| {
                params
                    .components()
                    .iter()
                    .map(|c| c.scale * self.basis.value(l, c))
                    .sum()
            })
            .collect();
        Ok(RenderedSpectrum { values })
    }

    pub fn render_with_gradient(
        &self,
        params: &ComponentParams,
        band_coords: &[f64],
    ) -> Result<(RenderedSpectrum, RenderGradient)> {
        check_coords(band_coords)?;
        let width = params.k() * PARAMS_PER_COMPONENT;
        let mut data = vec![0.0; band_coords.len() * width];
        let mut values = Vec::with_capacity(band_coords.len());
        for (&l, row) in band_coords.iter().zip(data.chunks_exact_mut(width)) {
            let mut total = 0.0;
            for (c, g) in params
                .components()
                .iter()
                .zip(row.chunks_exact_mut(PARAMS_PER_COMPONENT))
            {
                let (f, [dmu, dsigma, dalpha]) = self.basis.value_and_partials(l, c);
                total += c.scale * f;
                g[0] = c.scale * dmu;
                g[1] = c.scale * dsigma;
                g[2] = c.scale * dalpha;
                g[3] = f;
            }
            values.push(total);
        }
        Ok((
            RenderedSpectrum { values },
            RenderGradient {
                bands: band_coords.len(),
                width,
                data,
            },
        ))
    }

    pub fn render_components(
        &self,
        params: &ComponentParams,
        band_coords: &[f64],
    ) -> Result<Vec<RenderedSpectrum>> {
        check_coords(band_coords)?;
        Ok(params
            .components()
            .iter()
            .map(|c| RenderedSpectrum {
                values: band_coords
                    .iter()
                    .map(|&l| c.scale * self.basis.value(l, c))
                    .collect(),
            })
            .collect())
    }
}

pub fn render(params: &ComponentParams, band_coords: &[f64]) -> Result<RenderedSpectrum> {
    Renderer::<SkewNormal>::default().render(params, band_coords)
}

pub fn render_with_gradient(
    params: &ComponentParams,
    band_coords: &[f64],
) -> Result<(RenderedSpectrum, RenderGradient)> {
    Renderer::<SkewNormal>::default().render_with_gradient(params, band_coords)
}

pub fn render_components(
    params: &ComponentParams,
    band_coords: &[f64],
) -> Result<Vec<RenderedSpectrum>> {
    Renderer::<SkewNormal>::default().render_components(params, band_coords)
}

/// Band coordinates `0, 1, ..., bands - 1`.
pub fn index_coords(bands: usize) -> Vec<f64> {
    (0..bands).map(|c| c as f64).collect()
}
