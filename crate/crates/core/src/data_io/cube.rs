use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// An `H × W × C` reflectance cube stored band-sequential: all of band 0 in
/// raster order, then band 1, and so on.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralCube {
    height: usize,
    width: usize,
    bands: usize,
    values: Vec<f32>,
    band_coords: Vec<f64>,
}

impl SpectralCube {
    pub fn new(
        height: usize,
        width: usize,
        bands: usize,
        values: Vec<f32>,
        band_coords: Vec<f64>,
    ) -> Result<Self> {
        if height == 0 || width == 0 || bands == 0 {
            return Err(Error::InvalidParameter(format!(
                "cube dimensions must be positive, got {height}x{width}x{bands}"
            )));
        }
        let expected = height * width * bands;
        if values.len() != expected {
            return Err(Error::Shape(format!(
                "{} values for a {height}x{width}x{bands} cube",
                values.len()
            )));
        }
        if band_coords.len() != bands {
            return Err(Error::Shape(format!(
                "{} band coordinates for {bands} bands",
                band_coords.len()
            )));
        }
        check_increasing(&band_coords)?;
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("cube value at flat index {i}")));
        }
        Ok(SpectralCube {
            height,
            width,
            bands,
            values,
            band_coords,
        })
    }

    /// Builds a cube from pixel-major spectra (`pixels × bands`, row-major).
    pub fn from_spectra(height: usize, width: usize, bands: usize, spectra: &[f32]) -> Result<Self> {
        let pixels = height * width;
        if spectra.len() != pixels * bands {
            return Err(Error::Shape(format!(
                "{} spectrum values for {pixels} pixels of {bands} bands",
                spectra.len()
            )));
        }
        let mut values = vec![0.0f32; spectra.len()];
        for p in 0..pixels {
            for c in 0..bands {
                values[c * pixels + p] = spectra[p * bands + c];
            }
        }
        let coords = (0..bands).map(|c| c as f64).collect();
        Self::new(height, width, bands, values, coords)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn bands(&self) -> usize {
        self.bands
    }

    pub fn pixels(&self) -> usize {
        self.height * self.width
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn band_coords(&self) -> &[f64] {
        &self.band_coords
    }

    #[inline]
    pub fn get(&self, pixel: usize, band: usize) -> f32 {
        self.values[band * self.pixels() + pixel]
    }

    pub fn pixel_index(&self, row: usize, col: usize) -> Result<usize> {
        if row >= self.height || col >= self.width {
            return Err(Error::OutOfBounds {
                row,
                col,
                height: self.height,
                width: self.width,
            });
        }
        Ok(row * self.width + col)
    }

    pub fn pixel_coords(&self, pixel: usize) -> (usize, usize) {
        (pixel / self.width, pixel % self.width)
    }

    pub fn spectrum(&self, pixel: usize) -> Vec<f32> {
        (0..self.bands).map(|c| self.get(pixel, c)).collect()
    }

    /// Gathers the listed pixels into a row-major `n × bands` matrix.
    pub fn gather(&self, pixels: &[usize]) -> Vec<f32> {
        let mut out = Vec::with_capacity(pixels.len() * self.bands);
        for &p in pixels {
            out.extend((0..self.bands).map(|c| self.get(p, c)));
        }
        out
    }

    pub(crate) fn map_values(&self, mut f: impl FnMut(usize, f32) -> f32) -> SpectralCube {
        let pixels = self.pixels();
        let values = self
            .values
            .iter()
            .enumerate()
            .map(|(i, &v)| f(i / pixels, v))
            .collect();
        SpectralCube {
            values,
            ..self.clone_shape()
        }
    }

    fn clone_shape(&self) -> SpectralCube {
        SpectralCube {
            height: self.height,
            width: self.width,
            bands: self.bands,
            values: Vec::new(),
            band_coords: self.band_coords.clone(),
        }
    }
}

fn check_increasing(coords: &[f64]) -> Result<()> {
    if coords.iter().any(|c| !c.is_finite()) {
        return Err(Error::NonFinite("band coordinate".into()));
    }
    if coords.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::Format("band_coords must be strictly increasing".into()));
    }
    Ok(())
}

/// JSON header accompanying a `.f32` payload.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct CubeHeader {
    pub height: usize,
    pub width: usize,
    pub bands: usize,
    #[serde(default = "default_dtype")]
    pub dtype: String,
    #[serde(default = "default_interleave")]
    pub interleave: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub band_coords: Option<Vec<f64>>,
}

fn default_dtype() -> String {
    "f32le".into()
}

fn default_interleave() -> String {
    "bsq".into()
}

/// `foo.json` → `foo.f32`.
pub fn payload_path(header_path: &Path) -> PathBuf {
    header_path.with_extension("f32")
}

pub fn load_cube(header_path: impl AsRef<Path>) -> Result<SpectralCube> {
    let header_path = header_path.as_ref();
    let text = fs::read_to_string(header_path).map_err(|e| Error::io(header_path, e))?;
    let header: CubeHeader = serde_json::from_str(&text)?;
    if header.dtype != "f32le" {
        return Err(Error::Format(format!("unsupported dtype {:?}", header.dtype)));
    }
    if header.interleave != "bsq" {
        return Err(Error::Format(format!(
            "unsupported interleave {:?}",
            header.interleave
        )));
    }
    let payload = payload_path(header_path);
    let bytes = fs::read(&payload).map_err(|e| Error::io(&payload, e))?;
    let expected = header.height * header.width * header.bands * 4;
    if bytes.len() != expected {
        return Err(Error::SizeMismatch {
            expected,
            actual: bytes.len(),
        });
    }
    let values = bytes
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
        .collect();
    let coords = header
        .band_coords
        .unwrap_or_else(|| (0..header.bands).map(|c| c as f64).collect());
    SpectralCube::new(header.height, header.width, header.bands, values, coords)
}

pub fn cube_header(cube: &SpectralCube) -> CubeHeader {
    CubeHeader {
        height: cube.height,
        width: cube.width,
        bands: cube.bands,
        dtype: default_dtype(),
        interleave: default_interleave(),
        band_coords: Some(cube.band_coords.clone()),
    }
}

pub fn encode_payload(cube: &SpectralCube) -> Vec<u8> {
    cube.values.iter().flat_map(|v| v.to_le_bytes()).collect()
}

pub fn write_cube(cube: &SpectralCube, header_path: impl AsRef<Path>) -> Result<()> {
    let header_path = header_path.as_ref();
    let header = serde_json::to_string_pretty(&cube_header(cube))?;
    fs::write(header_path, header).map_err(|e| Error::io(header_path, e))?;
    let payload = payload_path(header_path);
    fs::write(&payload, encode_payload(cube)).map_err(|e| Error::io(&payload, e))
}
