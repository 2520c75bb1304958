use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::numeric::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ColumnKind {
    Continuous,
    OneHot,
}

/// Which rows count as the protected group (`a = 1`).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GroupSelector {
    /// A single sensitive bit.
    Column(usize),
    /// Rows where every sensitive bit is set.
    Conjunction,
}

impl Default for GroupSelector {
    fn default() -> Self {
        GroupSelector::Conjunction
    }
}

/// Features, sensitive bits, observed labels and (optionally) ideal labels.
#[derive(Debug, Clone, PartialEq)]
pub struct TabularDataset {
    features: Matrix,
    column_names: Vec<String>,
    column_kinds: Vec<ColumnKind>,
    /// Row-major `n x k` bits.
    sensitive: Vec<u8>,
    sensitive_names: Vec<String>,
    observed_labels: Vec<u8>,
    ideal_labels: Option<Vec<u8>>,
}

fn check_bits(what: &str, v: &[u8]) -> Result<()> {
    if let Some(i) = v.iter().position(|&b| b > 1) {
        return Err(Error::Config(format!("{what} entry {i} is not a bit")));
    }
    Ok(())
}

impl TabularDataset {
    pub fn new(
        features: Matrix,
        column_names: Vec<String>,
        column_kinds: Vec<ColumnKind>,
        sensitive: Vec<u8>,
        sensitive_names: Vec<String>,
        observed_labels: Vec<u8>,
        ideal_labels: Option<Vec<u8>>,
    ) -> Result<Self> {
        let n = features.rows();
        let k = sensitive_names.len();
        if k == 0 {
            return Err(Error::Config("at least one sensitive attribute is required".into()));
        }
        check_dim("column names", features.cols(), column_names.len())?;
        check_dim("column kinds", features.cols(), column_kinds.len())?;
        check_dim("sensitive bits", n * k, sensitive.len())?;
        check_dim("observed labels", n, observed_labels.len())?;
        check_bits("sensitive", &sensitive)?;
        check_bits("observed label", &observed_labels)?;
        if let Some(ideal) = &ideal_labels {
            check_dim("ideal labels", n, ideal.len())?;
            check_bits("ideal label", ideal)?;
        }
        Ok(Self {
            features,
            column_names,
            column_kinds,
            sensitive,
            sensitive_names,
            observed_labels,
            ideal_labels,
        })
    }

    pub fn len(&self) -> usize {
        self.features.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn n_features(&self) -> usize {
        self.features.cols()
    }

    pub fn n_sensitive(&self) -> usize {
        self.sensitive_names.len()
    }

    pub fn features(&self) -> &Matrix {
        &self.features
    }

    pub fn column_names(&self) -> &[String] {
        &self.column_names
    }

    pub fn column_kinds(&self) -> &[ColumnKind] {
        &self.column_kinds
    }

    pub fn sensitive_names(&self) -> &[String] {
        &self.sensitive_names
    }

    /// The `k` sensitive bits of row `i`.
    pub fn sensitive_row(&self, i: usize) -> &[u8] {
        let k = self.n_sensitive();
        &self.sensitive[i * k..(i + 1) * k]
    }

    pub fn sensitive_bits(&self) -> &[u8] {
        &self.sensitive
    }

    pub fn observed_labels(&self) -> &[u8] {
        &self.observed_labels
    }

    pub fn ideal_labels(&self) -> Option<&[u8]> {
        self.ideal_labels.as_deref()
    }

    /// Protected-group membership per row.
    pub fn protected(&self, selector: GroupSelector) -> Result<Vec<u8>> {
        match selector {
            GroupSelector::Column(j) if j >= self.n_sensitive() => Err(Error::Config(format!(
                "sensitive column {j} out of range (k = {})",
                self.n_sensitive()
            ))),
            GroupSelector::Column(j) => Ok((0..self.len()).map(|i| self.sensitive_row(i)[j]).collect()),
            GroupSelector::Conjunction => Ok((0..self.len())
                .map(|i| self.sensitive_row(i).iter().all(|&b| b == 1) as u8)
                .collect()),
        }
    }

    /// Copy with observed labels replaced; everything else untouched.
    pub fn with_observed_labels(&self, labels: Vec<u8>) -> Result<Self> {
        check_dim("observed labels", self.len(), labels.len())?;
        check_bits("observed label", &labels)?;
        Ok(Self {
            observed_labels: labels,
            ..self.clone()
        })
    }

    pub fn with_features(&self, features: Matrix) -> Result<Self> {
        check_dim("feature rows", self.len(), features.rows())?;
        check_dim("feature cols", self.n_features(), features.cols())?;
        Ok(Self {
            features,
            ..self.clone()
        })
    }

    /// Treats the current observed labels as ideal labels (clean data).
    pub fn with_observed_as_ideal(mut self) -> Self {
        self.ideal_labels = Some(self.observed_labels.clone());
        self
    }

    pub fn select_rows(&self, indices: &[usize]) -> Self {
        let k = self.n_sensitive();
        let mut sensitive = Vec::with_capacity(indices.len() * k);
        for &i in indices {
            sensitive.extend_from_slice(self.sensitive_row(i));
        }
        Self {
            features: self.features.select_rows(indices),
            column_names: self.column_names.clone(),
            column_kinds: self.column_kinds.clone(),
            sensitive,
            sensitive_names: self.sensitive_names.clone(),
            observed_labels: indices.iter().map(|&i| self.observed_labels[i]).collect(),
            ideal_labels: self
                .ideal_labels
                .as_ref()
                .map(|v| indices.iter().map(|&i| v[i]).collect()),
        }
    }

    /// Labels as `0.0 / 1.0`.
    pub fn observed_f64(&self) -> Vec<f64> {
        self.observed_labels.iter().map(|&b| b as f64).collect()
    }
}
