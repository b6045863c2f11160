//! Return panels, centering, and the covariance factor `L` with `Σ = L Lᵀ`.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{gaussian_matrix, seeded_rng};

/// Asset × period matrix of simple returns.
#[derive(Clone, Debug, PartialEq)]
pub struct ReturnPanel {
    asset_ids: Vec<String>,
    returns: DMatrix<f64>,
}

impl ReturnPanel {
    pub fn new(asset_ids: Vec<String>, returns: DMatrix<f64>) -> Result<Self> {
        if asset_ids.len() != returns.nrows() {
            return Err(Error::dim(format!(
                "{} asset ids for {} return rows",
                asset_ids.len(),
                returns.nrows()
            )));
        }
        if returns.nrows() < 2 || returns.ncols() < 2 {
            return Err(Error::dim(format!(
                "panel must have at least 2 assets and 2 periods, got {}x{}",
                returns.nrows(),
                returns.ncols()
            )));
        }
        if let Some((idx, _)) = returns.iter().enumerate().find(|(_, v)| !v.is_finite()) {
            let (row, col) = (idx % returns.nrows(), idx / returns.nrows());
            return Err(Error::numeric(format!(
                "non-finite return for asset {row}, period {col}"
            )));
        }
        Ok(Self { asset_ids, returns })
    }

    /// Panel with generated ids `a0, a1, ...`.
    pub fn from_matrix(returns: DMatrix<f64>) -> Result<Self> {
        let ids = (0..returns.nrows()).map(|i| format!("a{i}")).collect();
        Self::new(ids, returns)
    }

    pub fn asset_ids(&self) -> &[String] {
        &self.asset_ids
    }

    pub fn returns(&self) -> &DMatrix<f64> {
        &self.returns
    }

    pub fn n_assets(&self) -> usize {
        self.returns.nrows()
    }

    pub fn n_periods(&self) -> usize {
        self.returns.ncols()
    }

    /// Raw per-asset means over all periods.
    pub fn mean_returns(&self) -> DVector<f64> {
        self.returns.column_mean()
    }

    /// Splits the periods into `[0, at)` and `[at, T)`.
    pub fn split_at(&self, at: usize) -> Result<(ReturnPanel, ReturnPanel)> {
        if at < 2 || at >= self.n_periods() {
            return Err(Error::dim(format!(
                "split index {at} invalid for {} periods",
                self.n_periods()
            )));
        }
        let t = self.n_periods();
        let train = self.returns.columns(0, at).into_owned();
        let test = self.returns.columns(at, t - at).into_owned();
        let train = ReturnPanel {
            asset_ids: self.asset_ids.clone(),
            returns: train,
        };
        // The held-out segment may be a single period; callers that need
        // statistics check its length themselves.
        let test = ReturnPanel {
            asset_ids: self.asset_ids.clone(),
            returns: test,
        };
        Ok((train, test))
    }

    /// Writes the panel in the layout accepted by [`load_panel`].
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        self.write_csv_to(file, path)
    }

    /// Same layout to any writer; `label` names the sink in errors.
    pub fn write_csv_to<W: std::io::Write>(&self, sink: W, label: &Path) -> Result<()> {
        let mut w = csv::Writer::from_writer(sink);
        let mut header = vec!["asset_id".to_string()];
        header.extend((1..=self.n_periods()).map(|t| format!("t{t}")));
        w.write_record(&header)
            .map_err(|e| csv_to_error(e, label))?;
        for (i, id) in self.asset_ids.iter().enumerate() {
            let mut rec = vec![id.clone()];
            rec.extend(self.returns.row(i).iter().map(|v| format!("{v:e}")));
            w.write_record(&rec).map_err(|e| csv_to_error(e, label))?;
        }
        w.flush().map_err(|source| Error::Io {
            path: label.to_path_buf(),
            source,
        })
    }
}

fn csv_to_error(e: csv::Error, path: &Path) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(source) => Error::Io {
            path: path.to_path_buf(),
            source,
        },
        other => Error::Format(format!("{}: {:?}", path.display(), other)),
    }
}

/// CSV layout descriptor: header row (contents ignored), asset id in the
/// first column, one return per remaining column.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CsvFormat {
    pub delimiter: u8,
    pub has_header: bool,
}

impl Default for CsvFormat {
    fn default() -> Self {
        Self {
            delimiter: b',',
            has_header: true,
        }
    }
}

/// Loads a balanced return panel. Empty cells are read as `0.0`; anything
/// else that does not parse as a float is an error.
pub fn load_panel(path: &Path, format: CsvFormat) -> Result<ReturnPanel> {
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(format.delimiter)
        .has_headers(format.has_header)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| csv_to_error(e, path))?;

    let first_line = if format.has_header { 2 } else { 1 };
    let mut ids = Vec::new();
    let mut data: Vec<Vec<f64>> = Vec::new();
    let mut width: Option<usize> = None;
    for (k, record) in reader.records().enumerate() {
        let record = record.map_err(|e| csv_to_error(e, path))?;
        let line = first_line + k;
        if record.len() < 2 {
            return Err(Error::Format(format!(
                "line {line}: expected an asset id followed by returns"
            )));
        }
        match width {
            None => width = Some(record.len()),
            Some(w) if w != record.len() => {
                return Err(Error::Format(format!(
                    "ragged rows: line {line} has {} fields, expected {w}",
                    record.len()
                )))
            }
            _ => {}
        }
        ids.push(record[0].to_string());
        let mut row = Vec::with_capacity(record.len() - 1);
        for (j, cell) in record.iter().enumerate().skip(1) {
            if cell.is_empty() {
                row.push(0.0);
                continue;
            }
            let v: f64 = cell.parse().map_err(|_| Error::Parse {
                row: line,
                column: j + 1,
                message: format!("'{cell}' is not a number"),
            })?;
            if !v.is_finite() {
                return Err(Error::Parse {
                    row: line,
                    column: j + 1,
                    message: format!("'{cell}' is not finite"),
                });
            }
            row.push(v);
        }
        data.push(row);
    }

    let n = data.len();
    let t = width.map_or(0, |w| w - 1);
    if n < 2 || t < 2 {
        return Err(Error::dim(format!(
            "panel must have at least 2 assets and 2 periods, got {n}x{t}"
        )));
    }
    let returns = DMatrix::from_fn(n, t, |i, j| data[i][j]);
    ReturnPanel::new(ids, returns)
}

/// Centered, scaled return matrix `L = (R − r̄ 1ᵀ)/√(T−1)`.
#[derive(Clone, Debug, PartialEq)]
pub struct CovarianceFactor {
    pub factor: DMatrix<f64>,
    pub mean: DVector<f64>,
}

impl CovarianceFactor {
    /// Works on any `n ≥ 1`, `T ≥ 2` matrix; [`center_and_factor`] is the
    /// panel entry point.
    pub fn from_returns(returns: &DMatrix<f64>) -> Result<Self> {
        let t = returns.ncols();
        if t < 2 {
            return Err(Error::dim(format!(
                "need at least 2 periods to center, got {t}"
            )));
        }
        let mean = returns.column_mean();
        let scale = 1.0 / ((t - 1) as f64).sqrt();
        let mut factor = returns.clone();
        for mut col in factor.column_iter_mut() {
            col -= &mean;
            col *= scale;
        }
        Ok(Self { factor, mean })
    }

    pub fn n_assets(&self) -> usize {
        self.factor.nrows()
    }

    pub fn n_columns(&self) -> usize {
        self.factor.ncols()
    }

    /// Dense `L Lᵀ`. Only for test-scale problems and metrics.
    pub fn covariance(&self) -> DMatrix<f64> {
        &self.factor * self.factor.transpose()
    }
}

pub fn center_and_factor(panel: &ReturnPanel) -> Result<CovarianceFactor> {
    CovarianceFactor::from_returns(panel.returns())
}

/// Controlled-spectrum synthetic panel description.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticSpec {
    pub n: usize,
    pub t: usize,
    pub singular_decay: f64,
    pub leading_scale: f64,
    pub noise_floor: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            n: 600,
            t: 2400,
            singular_decay: 0.9,
            leading_scale: 1.0,
            noise_floor: 0.022,
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n < 2 || self.t < 2 {
            return Err(Error::dim(format!(
                "synthetic panel needs n, T >= 2, got {}x{}",
                self.n, self.t
            )));
        }
        if !(self.singular_decay > 0.0 && self.singular_decay < 1.0) {
            return Err(Error::arg(format!(
                "singular_decay must lie in (0, 1), got {}",
                self.singular_decay
            )));
        }
        if !(self.leading_scale > 0.0 && self.leading_scale.is_finite()) {
            return Err(Error::arg("leading_scale must be positive"));
        }
        if !(self.noise_floor >= 0.0 && self.noise_floor.is_finite()) {
            return Err(Error::arg("noise_floor must be nonnegative"));
        }
        Ok(())
    }

    /// Singular values the generated factor has by construction.
    pub fn target_singular_values(&self) -> Vec<f64> {
        let k = self.n.min(self.t - 1);
        (0..k)
            .map(|i| {
                (self.leading_scale * self.singular_decay.powi(i as i32)).max(self.noise_floor)
            })
            .collect()
    }
}

/// Generates `R = U diag(σ) Vᵀ √(T−1)` with orthonormal `U` (n×k) and `V`
/// (T×k, orthogonal to the all-ones vector), `k = min(n, T−1)`. The rows of
/// `R` have zero mean, so the centered factor of the result is exactly
/// `U diag(σ) Vᵀ` up to roundoff.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<ReturnPanel> {
    spec.validate()?;
    let (n, t) = (spec.n, spec.t);
    let sigma = spec.target_singular_values();
    let k = sigma.len();
    let mut rng = seeded_rng(spec.seed);

    let u = gaussian_matrix(&mut rng, n, k).qr().q();
    let mut g = gaussian_matrix(&mut rng, t, k);
    for mut col in g.column_iter_mut() {
        let m = col.mean();
        col.add_scalar_mut(-m);
    }
    let v = g.qr().q();

    let scale = ((t - 1) as f64).sqrt();
    let mut us = u;
    for (j, s) in sigma.iter().enumerate() {
        us.column_mut(j).scale_mut(s * scale);
    }
    let returns = us * v.transpose();
    ReturnPanel::from_matrix(returns)
}
