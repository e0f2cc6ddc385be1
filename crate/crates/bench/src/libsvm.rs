//! Parsing and writing of the LIBSVM sparse dataset format.
//!
//! Each line is `label index:value index:value ...` with 1-based feature
//! indices; `#` starts a comment. Labels are kept as written; feature
//! vectors are materialized densely.

use smo_core::model::VecF;
use smo_core::{Result, SolverError};

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    /// Dense feature rows, all of length `n_features`.
    pub features: Vec<Vec<f64>>,
    pub labels: Vec<f64>,
    pub n_features: usize,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn feature_row(&self, i: usize) -> VecF {
        VecF::from_vec(self.features[i].clone())
    }

    /// Map labels to strictly {-1, +1}: the smaller distinct label value
    /// becomes -1 and the larger +1.
    pub fn binarize_labels(&mut self) -> Result<()> {
        let mut distinct: Vec<f64> = Vec::new();
        for &u in &self.labels {
            if !distinct.iter().any(|&t| t == u) {
                distinct.push(u);
            }
        }
        if distinct.len() != 2 {
            return Err(SolverError::InvalidInput(format!(
                "expected exactly 2 label values, found {}",
                distinct.len()
            )));
        }
        distinct.sort_by(|p, q| p.partial_cmp(q).unwrap());
        let (lo, hi) = (distinct[0], distinct[1]);
        for u in &mut self.labels {
            *u = if *u == lo { -1.0 } else { 1.0 };
        }
        let _ = hi;
        Ok(())
    }
}

/// Parse LIBSVM-format text. Feature count is the maximum index seen
/// unless `n_features` pins it (indices beyond the pin are an error).
pub fn parse(text: &str, n_features: Option<usize>) -> Result<Dataset> {
    let mut sparse: Vec<(f64, Vec<(usize, f64)>)> = Vec::new();
    let mut max_index = 0usize;
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let mut parts = line.split_whitespace();
        let label_tok = parts.next().unwrap();
        let label: f64 = label_tok.parse().map_err(|_| {
            SolverError::InvalidInput(format!(
                "line {}: bad label '{label_tok}'",
                lineno + 1
            ))
        })?;
        let mut row: Vec<(usize, f64)> = Vec::new();
        for tok in parts {
            let (is, vs) = tok.split_once(':').ok_or_else(|| {
                SolverError::InvalidInput(format!(
                    "line {}: expected index:value, got '{tok}'",
                    lineno + 1
                ))
            })?;
            let idx: usize = is.parse().map_err(|_| {
                SolverError::InvalidInput(format!("line {}: bad index '{is}'", lineno + 1))
            })?;
            if idx == 0 {
                return Err(SolverError::InvalidInput(format!(
                    "line {}: indices are 1-based",
                    lineno + 1
                )));
            }
            let val: f64 = vs.parse().map_err(|_| {
                SolverError::InvalidInput(format!("line {}: bad value '{vs}'", lineno + 1))
            })?;
            if let Some(cap) = n_features {
                if idx > cap {
                    return Err(SolverError::InvalidInput(format!(
                        "line {}: index {idx} exceeds declared dimension {cap}",
                        lineno + 1
                    )));
                }
            }
            if let Some(&(prev, _)) = row.iter().find(|&&(p, _)| p == idx) {
                return Err(SolverError::InvalidInput(format!(
                    "line {}: duplicate index {prev}",
                    lineno + 1
                )));
            }
            max_index = max_index.max(idx);
            row.push((idx, val));
        }
        sparse.push((label, row));
    }
    let q = n_features.unwrap_or(max_index);
    let mut features = Vec::with_capacity(sparse.len());
    let mut labels = Vec::with_capacity(sparse.len());
    for (label, row) in sparse {
        let mut dense = vec![0.0; q];
        for (idx, val) in row {
            dense[idx - 1] = val;
        }
        features.push(dense);
        labels.push(label);
    }
    Ok(Dataset {
        features,
        labels,
        n_features: q,
    })
}

/// Serialize in the same format (zeros omitted).
pub fn write(data: &Dataset) -> String {
    let mut out = String::new();
    for i in 0..data.len() {
        out.push_str(&format!("{}", data.labels[i]));
        for (j, &v) in data.features[i].iter().enumerate() {
            if v != 0.0 {
                out.push_str(&format!(" {}:{}", j + 1, v));
            }
        }
        out.push('\n');
    }
    out
}
