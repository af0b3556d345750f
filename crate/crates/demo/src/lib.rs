//! Browser bindings: render a mixture from slider values, draw a synthetic
//! pixel, and fit a mixture to it by gradient descent on the Huber loss.
//!
//! Parameter arrays are flat `[μ, σ, α, s]` per component, in band-index
//! units, matching the core crate's latent layout.

use skewmix::data_io::generate_synthetic;
use skewmix::renderer::{index_coords, render, render_components, render_with_gradient, ComponentParams};
use skewmix::trainer::{adamw_step, huber_loss, AdamState, AdamWConfig, ParamSlot};
use wasm_bindgen::prelude::*;

fn js_err(e: skewmix::Error) -> JsError {
    JsError::new(&e.to_string())
}

pub fn mixture(bands: usize, params: &[f64]) -> skewmix::Result<Vec<f64>> {
    Ok(render(&ComponentParams::from_flat(params)?, &index_coords(bands))?.values)
}

/// Component curves concatenated: `k × bands`.
pub fn components(bands: usize, params: &[f64]) -> skewmix::Result<Vec<f64>> {
    let curves = render_components(&ComponentParams::from_flat(params)?, &index_coords(bands))?;
    Ok(curves.into_iter().flat_map(|c| c.values).collect())
}

/// Spectrum followed by the `4k` true parameters.
pub fn sample(seed: u64, bands: usize, k: usize, noise: f64) -> skewmix::Result<Vec<f64>> {
    let (cube, truth) = generate_synthetic(seed, 1, bands, k, noise)?;
    let mut out: Vec<f64> = cube.spectrum(0).iter().map(|&v| v as f64).collect();
    out.extend(truth.params[0].to_flat());
    Ok(out)
}

/// Plain Adam on the mixture parameters, with μ kept in the band range,
/// σ in [1%, 50%] of the band count and |α| ≤ 8. The loss surface has
/// symmetric local minima, so three starts with α = −1, 0, 1 are tried
/// from evenly spread narrow components. Returns the best parameters
/// followed by their loss.
pub fn fit(target: &[f64], k: usize, steps: usize, learning_rate: f64) -> skewmix::Result<Vec<f64>> {
    let mut best: Option<Vec<f64>> = None;
    for alpha in [0.0, -1.0, 1.0] {
        let out = fit_from(target, k, steps, learning_rate, alpha)?;
        if best.as_ref().is_none_or(|b| out[4 * k] < b[4 * k]) {
            best = Some(out);
        }
    }
    Ok(best.expect("three starts"))
}

fn fit_from(target: &[f64], k: usize, steps: usize, learning_rate: f64, alpha: f64) -> skewmix::Result<Vec<f64>> {
    let bands = target.len();
    let c = bands as f64;
    let coords = index_coords(bands);
    let mut theta: Vec<f64> = (0..k)
        .flat_map(|i| [c * (i as f64 + 0.5) / k as f64, 0.1 * c, alpha, 0.1])
        .collect();
    let cfg = AdamWConfig {
        learning_rate,
        weight_decay: 0.0,
        ..Default::default()
    };
    let mut state = AdamState::new();
    for _ in 0..steps {
        let params = ComponentParams::from_flat(&theta)?;
        let (pred, jac) = render_with_gradient(&params, &coords)?;
        let (_, upstream) = huber_loss(&pred.values, target, 1.0)?;
        let grad = jac.pullback(&upstream);
        let mut slots = [ParamSlot {
            data: &mut theta,
            grad: &grad,
            decay: false,
        }];
        adamw_step(&mut slots, &mut state, &cfg)?;
        for p in theta.chunks_exact_mut(4) {
            p[0] = p[0].clamp(0.0, c);
            p[1] = p[1].clamp(0.01 * c, 0.5 * c);
            p[2] = p[2].clamp(-8.0, 8.0);
        }
    }
    let pred = render(&ComponentParams::from_flat(&theta)?, &coords)?;
    theta.push(huber_loss(&pred.values, target, 1.0)?.0);
    Ok(theta)
}

#[wasm_bindgen(js_name = renderMixture)]
pub fn render_mixture_js(bands: usize, params: &[f64]) -> Result<Vec<f64>, JsError> {
    mixture(bands, params).map_err(js_err)
}

#[wasm_bindgen(js_name = renderComponents)]
pub fn render_components_js(bands: usize, params: &[f64]) -> Result<Vec<f64>, JsError> {
    components(bands, params).map_err(js_err)
}

#[wasm_bindgen(js_name = samplePixel)]
pub fn sample_pixel_js(seed: u32, bands: usize, k: usize, noise: f64) -> Result<Vec<f64>, JsError> {
    sample(seed as u64, bands, k, noise).map_err(js_err)
}

#[wasm_bindgen(js_name = fitPixel)]
pub fn fit_pixel_js(target: &[f64], k: usize, steps: usize, learning_rate: f64) -> Result<Vec<f64>, JsError> {
    fit(target, k, steps, learning_rate).map_err(js_err)
}

#[wasm_bindgen(js_name = huberLoss)]
pub fn huber_loss_js(pred: &[f64], target: &[f64]) -> Result<f64, JsError> {
    huber_loss(pred, target, 1.0).map(|(l, _)| l).map_err(js_err)
}
