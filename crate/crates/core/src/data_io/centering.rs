use serde::{Deserialize, Serialize};

use super::SpectralCube;
use crate::error::{Error, Result};

/// Per-band training-set averages used for zero-centering.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BandMeans {
    pub means: Vec<f64>,
}

impl BandMeans {
    pub fn zeros(bands: usize) -> Self {
        BandMeans {
            means: vec![0.0; bands],
        }
    }

    pub fn len(&self) -> usize {
        self.means.len()
    }

    pub fn is_empty(&self) -> bool {
        self.means.is_empty()
    }
}

/// Mean of each band over the pixels selected by `train_mask`.
pub fn compute_band_means(cube: &SpectralCube, train_mask: &[bool]) -> Result<BandMeans> {
    if train_mask.len() != cube.pixels() {
        return Err(Error::Shape(format!(
            "mask of length {} for {} pixels",
            train_mask.len(),
            cube.pixels()
        )));
    }
    let selected = train_mask.iter().filter(|&&m| m).count();
    if selected == 0 {
        return Err(Error::Empty("training mask selects no pixels"));
    }
    let means = (0..cube.bands())
        .map(|c| {
            let sum: f64 = train_mask
                .iter()
                .enumerate()
                .filter(|(_, &m)| m)
                .map(|(p, _)| f64::from(cube.get(p, c)))
                .sum();
            sum / selected as f64
        })
        .collect();
    Ok(BandMeans { means })
}

/// `out[p, c] = in[p, c] - means[c]`.
pub fn center(cube: &SpectralCube, means: &BandMeans) -> Result<SpectralCube> {
    check_len(cube, means)?;
    Ok(cube.map_values(|band, v| (f64::from(v) - means.means[band]) as f32))
}

/// Inverse of [`center`].
pub fn uncenter(cube: &SpectralCube, means: &BandMeans) -> Result<SpectralCube> {
    check_len(cube, means)?;
    Ok(cube.map_values(|band, v| (f64::from(v) + means.means[band]) as f32))
}

fn check_len(cube: &SpectralCube, means: &BandMeans) -> Result<()> {
    if means.len() != cube.bands() {
        return Err(Error::Shape(format!(
            "{} band means for a {}-band cube",
            means.len(),
            cube.bands()
        )));
    }
    Ok(())
}
