//! Repeated-seed experiment harness: classification evaluation, small-data
//! sweeps, regression evaluation, and their manifests.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data_io::ClassLabels;
use crate::error::{Error, Result};
use crate::metrics::{classification_report, regression_report, ClassificationReport, RegressionReport};
use crate::predictor::{fit_forest, FeatureMatrix, ForestParams, RowId, Targets};

/// Mean and half-width of the 95% normal-approximation interval,
/// `1.96 · sd / √n` with the sample standard deviation. The half-width is
/// `None` for a single run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub mean: f64,
    pub half_width: Option<f64>,
    pub n: usize,
}

pub fn ci95(values: &[f64]) -> Result<Interval> {
    if values.is_empty() {
        return Err(Error::Empty("runs"));
    }
    let n = values.len();
    let mean = values.iter().sum::<f64>() / n as f64;
    let half_width = (n > 1).then(|| {
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        1.96 * var.sqrt() / (n as f64).sqrt()
    });
    Ok(Interval { mean, half_width, n })
}

/// Hex SHA-256 of the JSON encoding of `config`.
pub fn config_hash<T: Serialize>(config: &T) -> Result<String> {
    let bytes = serde_json::to_vec(config)?;
    Ok(Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fraction: Option<f64>,
    pub config_hash: String,
    pub metrics: BTreeMap<String, f64>,
    #[serde(default)]
    pub artifacts: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fraction: Option<f64>,
    pub metric: String,
    pub mean: f64,
    /// `None` when only one run completed.
    pub half_width: Option<f64>,
    pub runs: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentManifest {
    pub command: String,
    pub runs: Vec<RunRecord>,
    pub aggregate: Vec<AggregateRow>,
}

impl ExperimentManifest {
    /// Builds the manifest, aggregating every metric per fraction (in order
    /// of first appearance).
    pub fn new(command: &str, runs: Vec<RunRecord>) -> Result<Self> {
        let mut keys: Vec<(Option<u64>, String)> = Vec::new();
        for r in &runs {
            for m in r.metrics.keys() {
                let key = (r.fraction.map(f64::to_bits), m.clone());
                if !keys.contains(&key) {
                    keys.push(key);
                }
            }
        }
        let aggregate = keys
            .into_iter()
            .map(|(frac, metric)| {
                let values: Vec<f64> = runs
                    .iter()
                    .filter(|r| r.fraction.map(f64::to_bits) == frac)
                    .filter_map(|r| r.metrics.get(&metric).copied())
                    .collect();
                let iv = ci95(&values)?;
                Ok(AggregateRow {
                    fraction: frac.map(f64::from_bits),
                    metric,
                    mean: iv.mean,
                    half_width: iv.half_width,
                    runs: iv.n,
                })
            })
            .collect::<Result<_>>()?;
        Ok(ExperimentManifest {
            command: command.into(),
            runs,
            aggregate,
        })
    }

    pub fn mean(&self, metric: &str, fraction: Option<f64>) -> Option<f64> {
        self.aggregate
            .iter()
            .find(|a| a.metric == metric && a.fraction == fraction)
            .map(|a| a.mean)
    }

    pub fn table(&self) -> String {
        let mut s = String::from("fraction\tmetric\tmean\t±95%\truns\n");
        for a in &self.aggregate {
            let frac = a.fraction.map_or("-".into(), |f| f.to_string());
            let hw = a.half_width.map_or("n/a".into(), |h| format!("{h:.4}"));
            s.push_str(&format!("{frac}\t{}\t{:.4}\t{hw}\t{}\n", a.metric, a.mean, a.runs));
        }
        s
    }
}

/// Seed for one `(seed, fraction)` cell of a sweep.
pub fn fraction_seed(seed: u64, fraction: f64) -> u64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(fraction.to_bits().to_le_bytes());
    let d = h.finalize();
    u64::from_le_bytes(d[..8].try_into().expect("8 bytes"))
}

/// Class-stratified subsample of `rows` (indices into `classes`). Each
/// present class keeps `max(1, round(fraction · n_c))` rows; fraction 1
/// returns `rows` unchanged.
pub fn stratified_subsample(rows: &[usize], classes: &[usize], fraction: f64, seed: u64) -> Result<Vec<usize>> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::Config(format!("fraction {fraction} outside (0, 1]")));
    }
    if fraction == 1.0 {
        return Ok(rows.to_vec());
    }
    let mut by_class: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for &r in rows {
        by_class.entry(classes[r]).or_default().push(r);
    }
    let budget = (fraction * rows.len() as f64).round() as usize;
    if budget < by_class.len() {
        return Err(Error::Config(format!(
            "fraction {fraction} keeps {budget} of {} rows, fewer than one per class ({} classes)",
            rows.len(),
            by_class.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(fraction_seed(seed, fraction));
    let mut out = Vec::with_capacity(budget);
    for members in by_class.values_mut() {
        let take = ((fraction * members.len() as f64).round() as usize).max(1);
        members.shuffle(&mut rng);
        out.extend_from_slice(&members[..take]);
    }
    out.sort_unstable();
    Ok(out)
}

/// Labeled feature rows with train/test membership.
#[derive(Debug, Clone)]
pub struct LabeledFeatures {
    pub features: FeatureMatrix,
    pub classes: Vec<usize>,
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

impl LabeledFeatures {
    /// Matches pixel rows of `features` against labels and a pixel split;
    /// unlabeled pixels are dropped.
    pub fn from_split(features: &FeatureMatrix, labels: &ClassLabels, train: &[usize], test: &[usize]) -> Result<Self> {
        let mut keep = Vec::new();
        let mut classes = Vec::new();
        let mut role = Vec::new();
        let train_set: std::collections::HashSet<usize> = train.iter().copied().collect();
        let test_set: std::collections::HashSet<usize> = test.iter().copied().collect();
        if let Some(p) = train_set.intersection(&test_set).next() {
            return Err(Error::Leak(format!("pixel {p} is in both train and test splits")));
        }
        for (i, id) in features.ids.iter().enumerate() {
            let RowId::Pixel { row, col } = id else {
                return Err(Error::Format("classification needs pixel rows".into()));
            };
            if *row >= labels.height || *col >= labels.width {
                return Err(Error::Shape(format!("pixel ({row}, {col}) outside the label map")));
            }
            let p = row * labels.width + col;
            let Some(c) = labels.get(p) else { continue };
            let r = if train_set.contains(&p) {
                0
            } else if test_set.contains(&p) {
                1
            } else {
                continue;
            };
            keep.push(i);
            classes.push(c);
            role.push(r);
        }
        let features = features.select(&keep);
        let train = (0..keep.len()).filter(|&i| role[i] == 0).collect::<Vec<_>>();
        let test = (0..keep.len()).filter(|&i| role[i] == 1).collect::<Vec<_>>();
        if train.is_empty() || test.is_empty() {
            return Err(Error::Empty("labeled train or test pixels"));
        }
        Ok(LabeledFeatures {
            features,
            classes,
            train,
            test,
        })
    }

    fn fit_and_score(&self, rows: &[usize], params: &ForestParams, seed: u64) -> Result<ClassificationReport> {
        let x = self.features.select(rows);
        let y: Vec<usize> = rows.iter().map(|&r| self.classes[r]).collect();
        let forest = fit_forest(&x, &Targets::Classes(y), params, seed)?;
        let pred = forest.predict_classes(&self.features.select(&self.test))?;
        let actual: Vec<usize> = self.test.iter().map(|&r| self.classes[r]).collect();
        classification_report(&pred, &actual)
    }
}

fn class_metrics(report: &ClassificationReport) -> BTreeMap<String, f64> {
    BTreeMap::from([
        ("oa".to_string(), report.overall_accuracy),
        ("aa".to_string(), report.average_accuracy),
    ])
}

/// One forest per seed on the full train split.
pub fn evaluate_classification(
    data: &LabeledFeatures,
    params: &ForestParams,
    seeds: &[u64],
    config_hash: &str,
) -> Result<(ExperimentManifest, Vec<ClassificationReport>)> {
    if seeds.is_empty() {
        return Err(Error::Config("at least one seed is required".into()));
    }
    let mut runs = Vec::new();
    let mut reports = Vec::new();
    for &seed in seeds {
        let report = data.fit_and_score(&data.train, params, seed)?;
        runs.push(RunRecord {
            seed,
            fraction: None,
            config_hash: config_hash.into(),
            metrics: class_metrics(&report),
            artifacts: Vec::new(),
        });
        reports.push(report);
    }
    Ok((ExperimentManifest::new("eval-cls", runs)?, reports))
}

/// For each fraction and seed: stratified subsample of the train split,
/// forest fit, evaluation on the fixed test split.
pub fn small_data_sweep(
    data: &LabeledFeatures,
    params: &ForestParams,
    seeds: &[u64],
    fractions: &[f64],
    config_hash: &str,
) -> Result<ExperimentManifest> {
    if seeds.is_empty() || fractions.is_empty() {
        return Err(Error::Config("sweep needs seeds and fractions".into()));
    }
    let mut runs = Vec::new();
    for &fraction in fractions {
        for &seed in seeds {
            let rows = stratified_subsample(&data.train, &data.classes, fraction, seed)?;
            let report = data.fit_and_score(&rows, params, seed)?;
            let mut metrics = class_metrics(&report);
            metrics.insert("train_rows".into(), rows.len() as f64);
            runs.push(RunRecord {
                seed,
                fraction: Some(fraction),
                config_hash: config_hash.into(),
                metrics,
                artifacts: Vec::new(),
            });
        }
    }
    ExperimentManifest::new("sweep-small-data", runs)
}

/// Patch-level regression data: one feature row per patch.
#[derive(Debug, Clone)]
pub struct PatchRegression {
    pub features: FeatureMatrix,
    pub names: Vec<String>,
    /// `targets[v][row]`.
    pub targets: Vec<Vec<f64>>,
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

impl PatchRegression {
    pub fn new(
        features: FeatureMatrix,
        targets: &crate::data_io::PatchTargets,
        train: &[String],
        test: &[String],
    ) -> Result<Self> {
        let ids: Vec<String> = features
            .ids
            .iter()
            .map(|id| match id {
                RowId::Patch(p) => Ok(p.clone()),
                RowId::Pixel { .. } => Err(Error::Format("regression needs patch rows".into())),
            })
            .collect::<Result<_>>()?;
        let index: BTreeMap<&str, usize> = ids.iter().enumerate().map(|(i, p)| (p.as_str(), i)).collect();
        for p in targets.rows.keys() {
            if !index.contains_key(p.as_str()) {
                return Err(Error::InvalidParameter(format!("targets name unknown patch {p}")));
            }
        }
        let lookup = |names: &[String]| -> Result<Vec<usize>> {
            names
                .iter()
                .map(|p| {
                    index
                        .get(p.as_str())
                        .copied()
                        .ok_or_else(|| Error::InvalidParameter(format!("split names unknown patch {p}")))
                })
                .collect()
        };
        let train = lookup(train)?;
        let test = lookup(test)?;
        if let Some(p) = train.iter().find(|p| test.contains(p)) {
            return Err(Error::Leak(format!("patch {} is in both train and test splits", ids[*p])));
        }
        let mut values = vec![vec![f64::NAN; ids.len()]; targets.names.len()];
        for (p, row) in &targets.rows {
            let i = index[p.as_str()];
            for (v, &y) in row.iter().enumerate() {
                values[v][i] = y;
            }
        }
        for &i in train.iter().chain(&test) {
            if values.iter().any(|v| !v[i].is_finite()) {
                return Err(Error::InvalidParameter(format!("patch {} has no targets", ids[i])));
            }
        }
        if train.is_empty() || test.is_empty() {
            return Err(Error::Empty("train or test patches"));
        }
        Ok(PatchRegression {
            features,
            names: targets.names.clone(),
            targets: values,
            train,
            test,
        })
    }

    /// One forest per variable; scored against the training-mean baseline.
    pub fn evaluate(&self, params: &ForestParams, seed: u64) -> Result<RegressionReport> {
        let xtr = self.features.select(&self.train);
        let xte = self.features.select(&self.test);
        let mut predicted = Vec::new();
        let mut actual = Vec::new();
        let mut means = Vec::new();
        for y in &self.targets {
            let ytr: Vec<f64> = self.train.iter().map(|&i| y[i]).collect();
            means.push(ytr.iter().sum::<f64>() / ytr.len() as f64);
            let f = fit_forest(&xtr, &Targets::Values(ytr), params, seed)?;
            predicted.push(f.predict_values(&xte)?);
            actual.push(self.test.iter().map(|&i| y[i]).collect());
        }
        regression_report(&self.names, &predicted, &actual, &means)
    }
}

pub fn evaluate_regression(
    data: &PatchRegression,
    params: &ForestParams,
    seeds: &[u64],
    config_hash: &str,
) -> Result<(ExperimentManifest, Vec<RegressionReport>)> {
    if seeds.is_empty() {
        return Err(Error::Config("at least one seed is required".into()));
    }
    let mut runs = Vec::new();
    let mut reports = Vec::new();
    for &seed in seeds {
        let r = data.evaluate(params, seed)?;
        let mut metrics = BTreeMap::from([("score".to_string(), r.score)]);
        for (name, m) in r.variables.iter().zip(&r.mse) {
            metrics.insert(format!("mse_{name}"), *m);
        }
        runs.push(RunRecord {
            seed,
            fraction: None,
            config_hash: config_hash.into(),
            metrics,
            artifacts: Vec::new(),
        });
        reports.push(r);
    }
    Ok((ExperimentManifest::new("eval-reg", runs)?, reports))
}
