//! Downstream prediction from frozen latents: extraction, per-patch
//! averaging, latent CSV, and random forests.

mod forest;

use std::collections::HashMap;
use std::path::Path;

pub use forest::{fit_forest, gini, ForestModel, ForestParams, Node, Targets, Task, Tree};

use crate::data_io::{center, BandMeans, PatchMembership, SpectralCube};
use crate::error::{Error, Result};
use crate::model::SpectralModel;

const EXTRACT_CHUNK: usize = 4096;

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum RowId {
    Pixel { row: usize, col: usize },
    Patch(String),
}

/// Row-major `len × width` feature table with one provenance id per row.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    pub width: usize,
    pub ids: Vec<RowId>,
    data: Vec<f64>,
}

impl FeatureMatrix {
    pub fn new(width: usize, ids: Vec<RowId>, data: Vec<f64>) -> Result<Self> {
        if width == 0 {
            return Err(Error::Shape("feature width must be positive".into()));
        }
        if data.len() != ids.len() * width {
            return Err(Error::SizeMismatch {
                expected: ids.len() * width,
                actual: data.len(),
            });
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("feature row {} column {}", i / width, i % width)));
        }
        Ok(FeatureMatrix { width, ids, data })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.width..(i + 1) * self.width]
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.width + j]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// Rows at `indices`, in that order.
    pub fn select(&self, indices: &[usize]) -> FeatureMatrix {
        FeatureMatrix {
            width: self.width,
            ids: indices.iter().map(|&i| self.ids[i].clone()).collect(),
            data: indices.iter().flat_map(|&i| self.row(i).iter().copied()).collect(),
        }
    }
}

/// Eval-mode latents for `pixels` (`(row, col)` pairs), rows in request
/// order.
pub fn extract_latents(
    model: &SpectralModel<f32>,
    cube: &SpectralCube,
    means: &BandMeans,
    pixels: &[(usize, usize)],
) -> Result<FeatureMatrix> {
    if model.bands() != cube.bands() {
        return Err(Error::Shape(format!(
            "model expects {} bands, cube has {}",
            model.bands(),
            cube.bands()
        )));
    }
    let index: Vec<usize> = pixels
        .iter()
        .map(|&(r, c)| cube.pixel_index(r, c))
        .collect::<Result<_>>()?;
    let centered = center(cube, means)?;
    let width = model.feature_width();
    let mut data = Vec::with_capacity(index.len() * width);
    for chunk in index.chunks(EXTRACT_CHUNK) {
        for f in model.infer_features(&centered.gather(chunk))? {
            data.extend(f);
        }
    }
    let ids = pixels.iter().map(|&(row, col)| RowId::Pixel { row, col }).collect();
    FeatureMatrix::new(width, ids, data)
}

/// Every pixel in raster order.
pub fn all_pixels(height: usize, width: usize) -> Vec<(usize, usize)> {
    (0..height).flat_map(|r| (0..width).map(move |c| (r, c))).collect()
}

/// One row per patch (membership order), the mean of its member pixel rows.
/// `cube_width` converts membership pixel indices to `(row, col)`.
pub fn average_per_patch(
    features: &FeatureMatrix,
    membership: &PatchMembership,
    cube_width: usize,
) -> Result<FeatureMatrix> {
    let lookup: HashMap<&RowId, usize> = features.ids.iter().enumerate().map(|(i, id)| (id, i)).collect();
    let mut covered = 0;
    let mut data = Vec::with_capacity(membership.patches.len() * features.width);
    let mut ids = Vec::with_capacity(membership.patches.len());
    for (patch, pixels) in &membership.patches {
        if pixels.is_empty() {
            return Err(Error::Empty("patch"));
        }
        let mut sum = vec![0.0f64; features.width];
        for &p in pixels {
            let id = RowId::Pixel {
                row: p / cube_width,
                col: p % cube_width,
            };
            let i = *lookup.get(&id).ok_or_else(|| {
                Error::InvalidParameter(format!("patch {patch} pixel {p} has no feature row"))
            })?;
            sum.iter_mut().zip(features.row(i)).for_each(|(s, v)| *s += v);
            covered += 1;
        }
        let n = pixels.len() as f64;
        data.extend(sum.into_iter().map(|s| s / n));
        ids.push(RowId::Patch(patch.clone()));
    }
    if covered != features.len() {
        return Err(Error::InvalidParameter(format!(
            "{} feature rows but patches cover {covered}",
            features.len()
        )));
    }
    FeatureMatrix::new(features.width, ids, data)
}

/// Writes `row,col,f_0..` (pixel rows) or `patch_id,f_0..` (patch rows).
pub fn write_latents_csv(features: &FeatureMatrix, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let patches = matches!(features.ids.first(), Some(RowId::Patch(_)));
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::io(path, e.into()))?;
    let mut header: Vec<String> = if patches {
        vec!["patch_id".into()]
    } else {
        vec!["row".into(), "col".into()]
    };
    header.extend((0..features.width).map(|j| format!("f_{j}")));
    w.write_record(&header)?;
    for i in 0..features.len() {
        let mut rec: Vec<String> = match &features.ids[i] {
            RowId::Pixel { row, col } if !patches => vec![row.to_string(), col.to_string()],
            RowId::Patch(id) if patches => vec![id.clone()],
            _ => return Err(Error::Format("mixed pixel and patch rows".into())),
        };
        rec.extend(features.row(i).iter().map(|v| v.to_string()));
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn load_latents_csv(path: impl AsRef<Path>) -> Result<FeatureMatrix> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(file);
    let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    let lead = match header.first().map(String::as_str) {
        Some("patch_id") => 1,
        Some("row") if header.get(1).map(String::as_str) == Some("col") => 2,
        _ => return Err(Error::Format("latent CSV must start with patch_id or row,col".into())),
    };
    let width = header.len() - lead;
    for (j, h) in header[lead..].iter().enumerate() {
        if *h != format!("f_{j}") {
            return Err(Error::Format(format!("unexpected latent column {h}")));
        }
    }
    let mut ids = Vec::new();
    let mut data = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let num = |s: &str| -> Result<f64> { s.parse().map_err(|_| Error::Format(format!("bad number {s}"))) };
        let idx = |s: &str| -> Result<usize> { s.parse().map_err(|_| Error::Format(format!("bad index {s}"))) };
        ids.push(if lead == 1 {
            RowId::Patch(rec[0].to_string())
        } else {
            RowId::Pixel {
                row: idx(&rec[0])?,
                col: idx(&rec[1])?,
            }
        });
        for j in 0..width {
            data.push(num(rec.get(lead + j).ok_or_else(|| Error::Format("short latent row".into()))?)?);
        }
    }
    FeatureMatrix::new(width, ids, data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::EncoderConfig;
    use crate::model::Variant;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn small_model(bands: usize) -> SpectralModel<f32> {
        let cfg = EncoderConfig::new(bands, 2).with_hidden([8, 8, 8, 8]);
        SpectralModel::init(cfg, Variant::Full, 3).unwrap()
    }

    fn cube_2x2() -> SpectralCube {
        let spectra: Vec<f32> = (0..2 * 2 * 8).map(|i| (i as f32 * 0.37).sin()).collect();
        SpectralCube::from_spectra(2, 2, 8, &spectra).unwrap()
    }

    #[test]
    fn extraction_order_and_purity() {
        let cube = cube_2x2();
        let model = small_model(8);
        let means = BandMeans::zeros(8);
        let all = extract_latents(&model, &cube, &means, &all_pixels(2, 2)).unwrap();
        assert_eq!(all.len(), 4);
        assert_eq!(all.width, 8);
        assert_eq!(all.ids[2], RowId::Pixel { row: 1, col: 0 });
        let twice = extract_latents(&model, &cube, &means, &[(1, 1), (1, 1)]).unwrap();
        assert_eq!(twice.row(0), twice.row(1));
        assert_eq!(twice.row(0), all.row(3));
        assert!(matches!(
            extract_latents(&model, &cube, &means, &[(2, 0)]),
            Err(Error::OutOfBounds { .. })
        ));
        assert!(extract_latents(&small_model(7), &cube, &means, &[(0, 0)]).is_err());
    }

    fn pixel_matrix(width: usize, data: Vec<f64>, cube_width: usize) -> FeatureMatrix {
        let n = data.len() / width;
        let ids = (0..n)
            .map(|p| RowId::Pixel {
                row: p / cube_width,
                col: p % cube_width,
            })
            .collect();
        FeatureMatrix::new(width, ids, data).unwrap()
    }

    #[test]
    fn patch_means() {
        let f = pixel_matrix(2, vec![1.0, 2.0, 1.0, 2.0, 5.0, -1.0], 3);
        let m = PatchMembership::new(vec![("a".into(), vec![0, 1]), ("b".into(), vec![2])]).unwrap();
        let avg = average_per_patch(&f, &m, 3).unwrap();
        assert_eq!(avg.ids, vec![RowId::Patch("a".into()), RowId::Patch("b".into())]);
        assert_eq!(avg.row(0), &[1.0, 2.0]);
        assert_eq!(avg.row(1), &[5.0, -1.0]);

        let partial = PatchMembership::new(vec![("a".into(), vec![0, 1])]).unwrap();
        assert!(average_per_patch(&f, &partial, 3).is_err());
    }

    #[test]
    fn patch_mean_matches_reference() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let data: Vec<f64> = (0..10 * 4).map(|_| rng.gen_range(-3.0..3.0)).collect();
        let f = pixel_matrix(4, data.clone(), 5);
        let m = PatchMembership::new(vec![("p".into(), (0..10).collect())]).unwrap();
        let avg = average_per_patch(&f, &m, 5).unwrap();
        for j in 0..4 {
            // Compensated summation as the reference.
            let (mut s, mut c) = (0.0f64, 0.0f64);
            for i in 0..10 {
                let y = data[i * 4 + j] - c;
                let t = s + y;
                c = (t - s) - y;
                s = t;
            }
            assert!((avg.get(0, j) - s / 10.0).abs() < 1e-6);
        }
    }

    #[test]
    fn latent_csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let f = pixel_matrix(3, vec![0.1, -2.5e-7, 3.0, 1.0 / 3.0, 4.0, 5.5], 1);
        let p = dir.path().join("latents.csv");
        write_latents_csv(&f, &p).unwrap();
        assert_eq!(load_latents_csv(&p).unwrap(), f);
        let text = std::fs::read_to_string(&p).unwrap();
        assert!(text.starts_with("row,col,f_0,f_1,f_2\n"));

        let patches = FeatureMatrix::new(1, vec![RowId::Patch("x".into())], vec![0.25]).unwrap();
        write_latents_csv(&patches, &p).unwrap();
        assert_eq!(load_latents_csv(&p).unwrap(), patches);
    }

    #[test]
    fn rejects_non_finite_features() {
        assert!(FeatureMatrix::new(1, vec![RowId::Patch("x".into())], vec![f64::NAN]).is_err());
        assert!(FeatureMatrix::new(2, vec![RowId::Patch("x".into())], vec![1.0]).is_err());
    }
}
