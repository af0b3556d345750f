//! Synthetic cubes with known generating components.
//!
//! Parameters are drawn uniformly from, with `C` the band count:
//!
//! | parameter | range              |
//! |-----------|--------------------|
//! | μ         | `[0.1 C, 0.9 C]`   |
//! | σ         | `[0.02 C, 0.2 C]`  |
//! | α         | `[-4, 4]`          |
//! | s         | `[-1, 1]`          |
//!
//! Each spectrum is the rendered mixture plus i.i.d. Gaussian noise.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::labels::{ClassLabels, PatchMembership, PatchTargets};
use super::SpectralCube;
use crate::error::{Error, Result};
use crate::renderer::{index_coords, render, Component, ComponentParams};

pub const MIN_BANDS: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ParamRanges {
    pub mu: (f64, f64),
    pub sigma: (f64, f64),
    pub alpha: (f64, f64),
    pub scale: (f64, f64),
}

impl ParamRanges {
    pub fn for_bands(bands: usize) -> Self {
        let c = bands as f64;
        ParamRanges {
            mu: (0.1 * c, 0.9 * c),
            sigma: (0.02 * c, 0.2 * c),
            alpha: (-4.0, 4.0),
            scale: (-1.0, 1.0),
        }
    }

    fn sample(&self, rng: &mut impl Rng) -> Component {
        Component::new(
            rng.gen_range(self.mu.0..=self.mu.1),
            rng.gen_range(self.sigma.0..=self.sigma.1),
            rng.gen_range(self.alpha.0..=self.alpha.1),
            rng.gen_range(self.scale.0..=self.scale.1),
        )
    }

    fn clamp(&self, c: Component) -> Component {
        Component::new(
            c.mu.clamp(self.mu.0, self.mu.1),
            c.sigma.clamp(self.sigma.0, self.sigma.1),
            c.alpha.clamp(self.alpha.0, self.alpha.1),
            c.scale.clamp(self.scale.0, self.scale.1),
        )
    }
}

/// Ground truth behind a synthetic cube, one entry per pixel in raster order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticTruth {
    pub params: Vec<ComponentParams>,
    pub noise_sd: f64,
}

fn check_counts(pixels: usize, bands: usize, k: usize, noise_sd: f64) -> Result<()> {
    if k == 0 {
        return Err(Error::InvalidParameter("k must be at least 1".into()));
    }
    if bands < MIN_BANDS {
        return Err(Error::InvalidParameter(format!(
            "synthetic cubes need at least {MIN_BANDS} bands, got {bands}"
        )));
    }
    if pixels == 0 {
        return Err(Error::InvalidParameter("pixel count must be positive".into()));
    }
    if !(noise_sd >= 0.0 && noise_sd.is_finite()) {
        return Err(Error::InvalidParameter(format!("noise_sd {noise_sd}")));
    }
    Ok(())
}

fn render_pixels(
    params: &[ComponentParams],
    bands: usize,
    noise_sd: f64,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<f32>> {
    let coords = index_coords(bands);
    let mut spectra = Vec::with_capacity(params.len() * bands);
    for p in params {
        let s = render(p, &coords)?;
        for v in s.values {
            let noise = if noise_sd > 0.0 {
                noise_sd * Distribution::<f64>::sample(&StandardNormal, rng)
            } else {
                0.0
            };
            spectra.push((v + noise) as f32);
        }
    }
    Ok(spectra)
}

/// A `pixels × 1` cube whose pixels are independent random mixtures of `k`
/// components. Deterministic in `seed`.
pub fn generate_synthetic(
    seed: u64,
    pixels: usize,
    bands: usize,
    k: usize,
    noise_sd: f64,
) -> Result<(SpectralCube, SyntheticTruth)> {
    check_counts(pixels, bands, k, noise_sd)?;
    let ranges = ParamRanges::for_bands(bands);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let params = (0..pixels)
        .map(|_| ComponentParams::new((0..k).map(|_| ranges.sample(&mut rng)).collect()))
        .collect::<Result<Vec<_>>>()?;
    let spectra = render_pixels(&params, bands, noise_sd, &mut rng)?;
    let cube = SpectralCube::from_spectra(pixels, 1, bands, &spectra)?;
    Ok((cube, SyntheticTruth { params, noise_sd }))
}

/// Cube whose pixels all share `shapes` (μ, σ, α) but have independent
/// random scales. The control case for the fixed-bank variant.
pub fn generate_shared_shapes(
    seed: u64,
    pixels: usize,
    bands: usize,
    k: usize,
    noise_sd: f64,
) -> Result<(SpectralCube, SyntheticTruth)> {
    check_counts(pixels, bands, k, noise_sd)?;
    let ranges = ParamRanges::for_bands(bands);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shapes = ComponentParams::new((0..k).map(|_| ranges.sample(&mut rng)).collect())?;
    let params = (0..pixels)
        .map(|_| {
            let scales: Vec<f64> = (0..k)
                .map(|_| rng.gen_range(ranges.scale.0..=ranges.scale.1))
                .collect();
            shapes.with_scales(&scales)
        })
        .collect::<Result<Vec<_>>>()?;
    let spectra = render_pixels(&params, bands, noise_sd, &mut rng)?;
    let cube = SpectralCube::from_spectra(pixels, 1, bands, &spectra)?;
    Ok((cube, SyntheticTruth { params, noise_sd }))
}

/// Perturbs each parameter of a class prototype. `jitter` is a fraction of
/// the parameter's range used as the Gaussian standard deviation.
fn jittered(proto: &ComponentParams, ranges: &ParamRanges, jitter: f64, rng: &mut ChaCha8Rng) -> Result<ComponentParams> {
    let mut draw = |range: (f64, f64)| -> f64 {
        let z: f64 = StandardNormal.sample(rng);
        jitter * (range.1 - range.0) * z
    };
    ComponentParams::new(
        proto
            .components()
            .iter()
            .map(|c| {
                ranges.clamp(Component::new(
                    c.mu + draw(ranges.mu),
                    c.sigma + draw(ranges.sigma),
                    c.alpha + draw(ranges.alpha),
                    c.scale + draw(ranges.scale),
                ))
            })
            .collect(),
    )
}

/// Labelled synthetic image for classification experiments.
#[derive(Debug, Clone)]
pub struct SyntheticClassification {
    pub cube: SpectralCube,
    pub labels: ClassLabels,
    pub truth: SyntheticTruth,
}

/// `pixels_per_class × classes` image: column `c` holds class `c`. Each class
/// has a random prototype mixture; its pixels jitter every prototype
/// parameter by `jitter` of that parameter's range.
pub fn generate_classification(
    seed: u64,
    classes: usize,
    pixels_per_class: usize,
    bands: usize,
    k: usize,
    jitter: f64,
    noise_sd: f64,
) -> Result<SyntheticClassification> {
    check_counts(classes * pixels_per_class, bands, k, noise_sd)?;
    if classes == 0 {
        return Err(Error::InvalidParameter("need at least one class".into()));
    }
    let ranges = ParamRanges::for_bands(bands);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let protos = (0..classes)
        .map(|_| ComponentParams::new((0..k).map(|_| ranges.sample(&mut rng)).collect()))
        .collect::<Result<Vec<_>>>()?;
    let (height, width) = (pixels_per_class, classes);
    let mut params = Vec::with_capacity(height * width);
    let mut classes_vec = Vec::with_capacity(height * width);
    for _row in 0..height {
        for (c, proto) in protos.iter().enumerate() {
            params.push(jittered(proto, &ranges, jitter, &mut rng)?);
            classes_vec.push(c as i32);
        }
    }
    let spectra = render_pixels(&params, bands, noise_sd, &mut rng)?;
    let cube = SpectralCube::from_spectra(height, width, bands, &spectra)?;
    Ok(SyntheticClassification {
        cube,
        labels: ClassLabels {
            height,
            width,
            classes: classes_vec,
        },
        truth: SyntheticTruth { params, noise_sd },
    })
}

/// Patch-structured synthetic image for regression experiments.
#[derive(Debug, Clone)]
pub struct SyntheticRegression {
    pub cube: SpectralCube,
    pub patches: PatchMembership,
    pub targets: PatchTargets,
    pub truth: SyntheticTruth,
}

/// `pixels_per_patch × patches` image: column `j` is patch `p{j}`. Each patch
/// has a prototype mixture; its two targets are smooth functions of the
/// prototype (`t_peak` = first component's scaled location, `t_width` =
/// second component's relative width, or the first's when `k = 1`).
pub fn generate_regression(
    seed: u64,
    patches: usize,
    pixels_per_patch: usize,
    bands: usize,
    k: usize,
    jitter: f64,
    noise_sd: f64,
) -> Result<SyntheticRegression> {
    check_counts(patches * pixels_per_patch, bands, k, noise_sd)?;
    let ranges = ParamRanges::for_bands(bands);
    let c = bands as f64;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let protos = (0..patches)
        .map(|_| ComponentParams::new((0..k).map(|_| ranges.sample(&mut rng)).collect()))
        .collect::<Result<Vec<_>>>()?;
    let (height, width) = (pixels_per_patch, patches);
    let mut params = vec![None; height * width];
    for row in 0..height {
        for (j, proto) in protos.iter().enumerate() {
            params[row * width + j] = Some(jittered(proto, &ranges, jitter, &mut rng)?);
        }
    }
    let params: Vec<ComponentParams> = params.into_iter().map(Option::unwrap).collect();
    let spectra = render_pixels(&params, bands, noise_sd, &mut rng)?;
    let cube = SpectralCube::from_spectra(height, width, bands, &spectra)?;

    let membership = PatchMembership::new(
        (0..width)
            .map(|j| (format!("p{j}"), (0..height).map(|r| r * width + j).collect()))
            .collect(),
    )?;
    let rows: BTreeMap<String, Vec<f64>> = protos
        .iter()
        .enumerate()
        .map(|(j, p)| {
            let first = p.components()[0];
            let second = p.components()[1.min(k - 1)];
            (
                format!("p{j}"),
                vec![first.scale * first.mu / c, second.sigma / c],
            )
        })
        .collect();
    Ok(SyntheticRegression {
        cube,
        patches: membership,
        targets: PatchTargets {
            names: vec!["t_peak".into(), "t_width".into()],
            rows,
        },
        truth: SyntheticTruth { params, noise_sd },
    })
}

/// Splits `n` items into train/test by a seeded shuffle; `train_fraction` of
/// them (rounded, at least one each side when `n >= 2`) go to train.
pub fn random_partition(n: usize, train_fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    use rand::seq::SliceRandom;
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut n_train = (train_fraction * n as f64).round() as usize;
    if n >= 2 {
        n_train = n_train.clamp(1, n - 1);
    }
    let test = idx.split_off(n_train.min(n));
    let mut train = idx;
    train.sort_unstable();
    let mut test = test;
    test.sort_unstable();
    (train, test)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn noiseless_matches_renderer_exactly() {
        let (cube, truth) = generate_synthetic(7, 50, 24, 3, 0.0).unwrap();
        let coords = index_coords(24);
        for p in 0..50 {
            let s = render(&truth.params[p], &coords).unwrap();
            for c in 0..24 {
                assert_eq!(cube.get(p, c), s.values[c] as f32);
            }
        }
    }

    #[test]
    fn deterministic_in_seed() {
        let a = generate_synthetic(3, 20, 16, 2, 0.05).unwrap();
        let b = generate_synthetic(3, 20, 16, 2, 0.05).unwrap();
        assert_eq!(a.0, b.0);
        assert_eq!(a.1, b.1);
        let c = generate_synthetic(4, 20, 16, 2, 0.05).unwrap();
        assert_ne!(a.0, c.0);
    }

    #[test]
    fn params_within_documented_ranges() {
        let (_, truth) = generate_synthetic(1, 200, 40, 4, 0.0).unwrap();
        let r = ParamRanges::for_bands(40);
        for p in &truth.params {
            for c in p.components() {
                assert!(c.mu >= r.mu.0 && c.mu <= r.mu.1);
                assert!(c.sigma >= r.sigma.0 && c.sigma <= r.sigma.1);
                assert!(c.alpha.abs() <= 4.0 && c.scale.abs() <= 1.0);
            }
        }
    }

    #[test]
    fn noise_has_requested_sd() {
        let (cube, truth) = generate_synthetic(12, 1000, 32, 3, 0.01).unwrap();
        let coords = index_coords(32);
        let mut sum = 0.0;
        let mut sq = 0.0;
        let mut n = 0.0;
        for p in 0..1000 {
            let s = render(&truth.params[p], &coords).unwrap();
            for c in 0..32 {
                let r = f64::from(cube.get(p, c)) - s.values[c];
                sum += r;
                sq += r * r;
                n += 1.0;
            }
        }
        let mean = sum / n;
        let sd = (sq / n - mean * mean).sqrt();
        assert!((sd - 0.01).abs() < 0.001, "sd {sd}");
    }

    #[test]
    fn invalid_counts() {
        assert!(generate_synthetic(0, 10, 7, 2, 0.0).is_err());
        assert!(generate_synthetic(0, 10, 8, 0, 0.0).is_err());
        assert!(generate_synthetic(0, 0, 8, 1, 0.0).is_err());
        assert!(generate_synthetic(0, 10, 8, 1, -1.0).is_err());
    }

    #[test]
    fn shared_shapes_share_everything_but_scale() {
        let (_, truth) = generate_shared_shapes(2, 10, 16, 3, 0.0).unwrap();
        let first = truth.params[0].components();
        for p in &truth.params {
            for (a, b) in p.components().iter().zip(first) {
                assert_eq!((a.mu, a.sigma, a.alpha), (b.mu, b.sigma, b.alpha));
            }
        }
    }

    #[test]
    fn classification_layout() {
        let d = generate_classification(5, 3, 4, 16, 2, 0.02, 0.0).unwrap();
        assert_eq!((d.cube.height(), d.cube.width()), (4, 3));
        assert_eq!(d.labels.get(d.cube.pixel_index(2, 1).unwrap()), Some(1));
        assert_eq!(d.labels.n_classes(), 3);
    }

    #[test]
    fn regression_layout() {
        let d = generate_regression(5, 6, 3, 16, 2, 0.02, 0.0).unwrap();
        assert_eq!(d.patches.patches.len(), 6);
        assert_eq!(d.targets.rows.len(), 6);
        assert_eq!(d.patches.patches[1].1, vec![1, 7, 13]);
    }

    #[test]
    fn partition_is_disjoint_and_complete() {
        let (tr, te) = random_partition(10, 0.3, 1);
        assert_eq!(tr.len(), 3);
        let mut all: Vec<usize> = tr.iter().chain(&te).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..10).collect::<Vec<_>>());
    }
}
