//! Overall/average accuracy, MSE and the Hyperview aggregate score.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassificationReport {
    /// `confusion[actual][predicted]`.
    pub confusion: Vec<Vec<usize>>,
    pub overall_accuracy: f64,
    /// Mean recall over classes with test support.
    pub average_accuracy: f64,
    /// `None` for classes absent from the evaluated labels.
    pub recalls: Vec<Option<f64>>,
    pub support: Vec<usize>,
}

impl ClassificationReport {
    pub fn n_classes(&self) -> usize {
        self.confusion.len()
    }

    /// Plain-text confusion matrix with recall per row.
    pub fn table(&self) -> String {
        let n = self.n_classes();
        let mut s = String::from("actual\\pred");
        for j in 0..n {
            s.push_str(&format!("\t{j}"));
        }
        s.push_str("\trecall\n");
        for (i, row) in self.confusion.iter().enumerate() {
            s.push_str(&i.to_string());
            for v in row {
                s.push_str(&format!("\t{v}"));
            }
            match self.recalls[i] {
                Some(r) => s.push_str(&format!("\t{r:.4}\n")),
                None => s.push_str("\t-\n"),
            }
        }
        s.push_str(&format!(
            "OA {:.4}  AA {:.4}\n",
            self.overall_accuracy, self.average_accuracy
        ));
        s
    }
}

/// Confusion matrix, OA and AA. Class ids index the matrix directly, so its
/// size is one more than the largest id seen.
pub fn classification_report(predicted: &[usize], actual: &[usize]) -> Result<ClassificationReport> {
    if predicted.len() != actual.len() {
        return Err(Error::Shape(format!(
            "{} predictions for {} labels",
            predicted.len(),
            actual.len()
        )));
    }
    if actual.is_empty() {
        return Err(Error::Empty("labels"));
    }
    let n = predicted.iter().chain(actual).max().map_or(0, |m| m + 1);
    let mut confusion = vec![vec![0usize; n]; n];
    for (&p, &a) in predicted.iter().zip(actual) {
        confusion[a][p] += 1;
    }
    let support: Vec<usize> = confusion.iter().map(|r| r.iter().sum()).collect();
    let recalls: Vec<Option<f64>> = (0..n)
        .map(|c| (support[c] > 0).then(|| confusion[c][c] as f64 / support[c] as f64))
        .collect();
    let present: Vec<f64> = recalls.iter().flatten().copied().collect();
    let correct: usize = (0..n).map(|c| confusion[c][c]).sum();
    Ok(ClassificationReport {
        overall_accuracy: correct as f64 / actual.len() as f64,
        average_accuracy: present.iter().sum::<f64>() / present.len() as f64,
        recalls,
        support,
        confusion,
    })
}

pub fn mse(predicted: &[f64], actual: &[f64]) -> Result<f64> {
    if predicted.len() != actual.len() {
        return Err(Error::Shape(format!(
            "{} predictions for {} targets",
            predicted.len(),
            actual.len()
        )));
    }
    if actual.is_empty() {
        return Err(Error::Empty("targets"));
    }
    Ok(predicted
        .iter()
        .zip(actual)
        .map(|(p, a)| (p - a) * (p - a))
        .sum::<f64>()
        / actual.len() as f64)
}

/// `(1/n) Σ mse_i / base_i`.
pub fn hyperview_score(mse: &[f64], mse_base: &[f64]) -> Result<f64> {
    if mse.len() != mse_base.len() {
        return Err(Error::Shape(format!(
            "{} errors for {} baselines",
            mse.len(),
            mse_base.len()
        )));
    }
    if mse.is_empty() {
        return Err(Error::Empty("score variables"));
    }
    if let Some(b) = mse_base.iter().find(|&&b| !(b > 0.0)) {
        return Err(Error::InvalidParameter(format!("baseline MSE must be positive, got {b}")));
    }
    Ok(mse.iter().zip(mse_base).map(|(m, b)| m / b).sum::<f64>() / mse.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionReport {
    pub variables: Vec<String>,
    pub mse: Vec<f64>,
    pub baseline_mse: Vec<f64>,
    /// How the baselines were obtained, e.g. "training-set mean predictor".
    pub baseline: String,
    pub score: f64,
}

/// Per-variable MSE against the baseline of predicting each variable's
/// training mean. `predicted[i]`, `actual[i]` are the test values of
/// variable `i`; `train_means[i]` its training-set mean.
pub fn regression_report(
    variables: &[String],
    predicted: &[Vec<f64>],
    actual: &[Vec<f64>],
    train_means: &[f64],
) -> Result<RegressionReport> {
    let n = variables.len();
    if predicted.len() != n || actual.len() != n || train_means.len() != n {
        return Err(Error::Shape("per-variable inputs disagree in length".into()));
    }
    let mut errs = Vec::with_capacity(n);
    let mut base = Vec::with_capacity(n);
    for i in 0..n {
        errs.push(mse(&predicted[i], &actual[i])?);
        base.push(mse(&vec![train_means[i]; actual[i].len()], &actual[i])?);
    }
    Ok(RegressionReport {
        variables: variables.to_vec(),
        score: hyperview_score(&errs, &base)?,
        mse: errs,
        baseline_mse: base,
        baseline: "training-set mean predictor".into(),
    })
}
