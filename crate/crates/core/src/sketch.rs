//! Random sketching matrices `Φ ∈ R^{T×s}` and the sketched factor `L̃ = LΦ`.
//!
//! Neither construction materializes `Φ` on the application path. The
//! Gaussian sketch regenerates its rows from a seeded stream block by block,
//! and every output entry accumulates over `t = 0..T` in increasing order,
//! so the result does not depend on the block size or on the number of
//! worker threads.

use std::path::Path;

use nalgebra::DMatrix;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{mix64, seeded_rng, sym_eigen_desc};

/// Default constant in the sketch-size rule, calibrated by Monte Carlo.
pub const DEFAULT_SIZE_CONSTANT: f64 = 4.0;

/// Default memory cap (in `f64` entries) for one block of Gaussian rows.
pub const DEFAULT_BLOCK_CAP: usize = 1 << 22;

/// Largest `T·s` for which [`SketchOperator::materialize`] is allowed.
pub const MATERIALIZE_LIMIT: usize = 1_000_000;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SketchKind {
    GaussianJl,
    Countsketch,
}

impl SketchKind {
    pub fn label(self) -> &'static str {
        match self {
            SketchKind::GaussianJl => "gaussian_jl",
            SketchKind::Countsketch => "countsketch",
        }
    }
}

impl std::str::FromStr for SketchKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "gaussian_jl" | "jl" | "gaussian" => Ok(SketchKind::GaussianJl),
            "countsketch" | "cs" | "count_sketch" => Ok(SketchKind::Countsketch),
            other => Err(Error::arg(format!("unknown sketch kind '{other}'"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SketchConfig {
    pub kind: SketchKind,
    /// Target sketch dimension `s`.
    pub size: usize,
    pub seed: u64,
}

impl SketchConfig {
    pub fn new(kind: SketchKind, size: usize, seed: u64) -> Self {
        Self { kind, size, seed }
    }

    pub fn validate(&self, periods: usize) -> Result<()> {
        check_size(self.size, periods)
    }

    pub fn operator(&self, periods: usize) -> Result<SketchOperator> {
        self.validate(periods)?;
        Ok(match self.kind {
            SketchKind::GaussianJl => {
                SketchOperator::Gaussian(GaussianSketch::new(periods, self.size, self.seed)?)
            }
            SketchKind::Countsketch => {
                SketchOperator::Count(CountSketch::new(periods, self.size, self.seed)?)
            }
        })
    }
}

fn check_size(s: usize, periods: usize) -> Result<()> {
    if s == 0 || s > periods {
        return Err(Error::dim(format!(
            "sketch size {s} outside [1, {periods}]"
        )));
    }
    Ok(())
}

/// `L̃ = LΦ` together with the configuration that produced it.
#[derive(Clone, Debug, PartialEq)]
pub struct SketchedFactor {
    pub factor: DMatrix<f64>,
    pub config: SketchConfig,
}

/// Dense Gaussian JL sketch, `Φ_ij ~ N(0, 1/s)`, regenerated on demand.
#[derive(Clone, Debug, PartialEq)]
pub struct GaussianSketch {
    periods: usize,
    size: usize,
    seed: u64,
    block_cap: usize,
}

impl GaussianSketch {
    pub fn new(periods: usize, size: usize, seed: u64) -> Result<Self> {
        check_size(size, periods)?;
        Ok(Self {
            periods,
            size,
            seed,
            block_cap: DEFAULT_BLOCK_CAP,
        })
    }

    /// Caps the number of `Φ` entries held in memory at once.
    pub fn with_block_cap(mut self, cap: usize) -> Self {
        self.block_cap = cap.max(self.size);
        self
    }

    fn rows_per_block(&self) -> usize {
        (self.block_cap / self.size).clamp(1, self.periods)
    }

    /// Next `rows` rows of `Φ` in row-major order.
    fn next_rows(&self, rng: &mut ChaCha8Rng, rows: usize) -> Vec<f64> {
        let scale = 1.0 / (self.size as f64).sqrt();
        (0..rows * self.size)
            .map(|_| {
                let z: f64 = StandardNormal.sample(rng);
                z * scale
            })
            .collect()
    }

    pub fn apply(&self, l: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if l.ncols() != self.periods {
            return Err(Error::dim(format!(
                "factor has {} columns, sketch expects {}",
                l.ncols(),
                self.periods
            )));
        }
        let n = l.nrows();
        let s = self.size;
        let mut out = DMatrix::<f64>::zeros(n, s);
        let mut rng = seeded_rng(self.seed);
        let block = self.rows_per_block();
        let mut t0 = 0;
        while t0 < self.periods {
            let rows = block.min(self.periods - t0);
            let phi = self.next_rows(&mut rng, rows);
            // Columns of the output are independent; within a column the
            // accumulation runs over t in increasing order.
            out.as_mut_slice()
                .par_chunks_mut(n.max(1))
                .enumerate()
                .for_each(|(j, col)| {
                    for dt in 0..rows {
                        let w = phi[dt * s + j];
                        let src = l.column(t0 + dt);
                        for (o, x) in col.iter_mut().zip(src.iter()) {
                            *o += w * x;
                        }
                    }
                });
            t0 += rows;
        }
        Ok(out)
    }

    pub fn materialize(&self) -> DMatrix<f64> {
        let mut rng = seeded_rng(self.seed);
        let phi = self.next_rows(&mut rng, self.periods);
        DMatrix::from_row_slice(self.periods, self.size, &phi)
    }
}

/// Sparse embedding with one `±1` per row of `Φ`, stored as bucket/sign
/// arrays.
#[derive(Clone, Debug, PartialEq)]
pub struct CountSketch {
    size: usize,
    buckets: Vec<usize>,
    signs: Vec<f64>,
}

impl CountSketch {
    /// Bucket of row `t` is `mix64(seed ⊕ mix64(t)) mod s`; signs come from
    /// a separate ChaCha stream keyed on the same seed.
    pub fn new(periods: usize, size: usize, seed: u64) -> Result<Self> {
        check_size(size, periods)?;
        let key = mix64(seed);
        let buckets = (0..periods as u64)
            .map(|t| (mix64(key ^ mix64(t)) % size as u64) as usize)
            .collect();
        let mut sign_rng = seeded_rng(seed ^ 0x5bd1_e995_0000_0001);
        let signs = (0..periods)
            .map(|_| if sign_rng.random::<bool>() { 1.0 } else { -1.0 })
            .collect();
        Ok(Self {
            size,
            buckets,
            signs,
        })
    }

    /// Explicit hash and signs (0-based buckets).
    pub fn from_parts(size: usize, buckets: Vec<usize>, signs: Vec<f64>) -> Result<Self> {
        if buckets.len() != signs.len() {
            return Err(Error::dim("bucket and sign arrays differ in length"));
        }
        check_size(size, buckets.len())?;
        if buckets.iter().any(|&b| b >= size) {
            return Err(Error::arg("bucket index out of range"));
        }
        if signs.iter().any(|&v| v != 1.0 && v != -1.0) {
            return Err(Error::arg("signs must be ±1"));
        }
        Ok(Self {
            size,
            buckets,
            signs,
        })
    }

    /// `Φ = I_T`, useful to check that sketched models reduce to the
    /// baseline.
    pub fn identity(periods: usize) -> Self {
        Self {
            size: periods,
            buckets: (0..periods).collect(),
            signs: vec![1.0; periods],
        }
    }

    pub fn buckets(&self) -> &[usize] {
        &self.buckets
    }

    pub fn signs(&self) -> &[f64] {
        &self.signs
    }

    pub fn apply(&self, l: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        self.apply_counted(l).map(|(m, _)| m)
    }

    /// Applies the sketch and returns the number of multiply-adds performed,
    /// which equals `nnz(L)`.
    pub fn apply_counted(&self, l: &DMatrix<f64>) -> Result<(DMatrix<f64>, usize)> {
        if l.ncols() != self.buckets.len() {
            return Err(Error::dim(format!(
                "factor has {} columns, sketch expects {}",
                l.ncols(),
                self.buckets.len()
            )));
        }
        let n = l.nrows();
        let mut out = DMatrix::<f64>::zeros(n, self.size);
        let mut ops = 0usize;
        for (t, (&b, &sign)) in self.buckets.iter().zip(&self.signs).enumerate() {
            let src = l.column(t);
            let mut dst = out.column_mut(b);
            for i in 0..n {
                let v = src[i];
                if v != 0.0 {
                    dst[i] += sign * v;
                    ops += 1;
                }
            }
        }
        Ok((out, ops))
    }

    pub fn materialize(&self) -> DMatrix<f64> {
        let mut phi = DMatrix::zeros(self.buckets.len(), self.size);
        for (t, (&b, &sign)) in self.buckets.iter().zip(&self.signs).enumerate() {
            phi[(t, b)] = sign;
        }
        phi
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum SketchOperator {
    Gaussian(GaussianSketch),
    Count(CountSketch),
}

impl SketchOperator {
    pub fn size(&self) -> usize {
        match self {
            SketchOperator::Gaussian(g) => g.size,
            SketchOperator::Count(c) => c.size,
        }
    }

    pub fn periods(&self) -> usize {
        match self {
            SketchOperator::Gaussian(g) => g.periods,
            SketchOperator::Count(c) => c.buckets.len(),
        }
    }

    pub fn apply(&self, l: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        match self {
            SketchOperator::Gaussian(g) => g.apply(l),
            SketchOperator::Count(c) => c.apply(l),
        }
    }

    /// Dense `Φ` for debugging; refused above [`MATERIALIZE_LIMIT`] entries.
    pub fn materialize(&self) -> Result<DMatrix<f64>> {
        let entries = self.periods() * self.size();
        if entries > MATERIALIZE_LIMIT {
            return Err(Error::arg(format!(
                "refusing to materialize a {}x{} sketch",
                self.periods(),
                self.size()
            )));
        }
        Ok(match self {
            SketchOperator::Gaussian(g) => g.materialize(),
            SketchOperator::Count(c) => c.materialize(),
        })
    }

    /// Writes the dense `Φ` as headerless CSV, one row per period.
    pub fn dump_csv(&self, path: &Path) -> Result<()> {
        let phi = self.materialize()?;
        let mut w = csv::WriterBuilder::new()
            .has_headers(false)
            .from_path(path)
            .map_err(|e| Error::Format(e.to_string()))?;
        for row in phi.row_iter() {
            w.write_record(row.iter().map(|v| format!("{v:e}")))
                .map_err(|e| Error::Format(e.to_string()))?;
        }
        w.flush().map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })
    }
}

pub fn gaussian_jl_sketch(l: &DMatrix<f64>, s: usize, seed: u64) -> Result<SketchedFactor> {
    let op = GaussianSketch::new(l.ncols(), s, seed)?;
    Ok(SketchedFactor {
        factor: op.apply(l)?,
        config: SketchConfig::new(SketchKind::GaussianJl, s, seed),
    })
}

pub fn countsketch_sketch(l: &DMatrix<f64>, s: usize, seed: u64) -> Result<SketchedFactor> {
    let op = CountSketch::new(l.ncols(), s, seed)?;
    Ok(SketchedFactor {
        factor: op.apply(l)?,
        config: SketchConfig::new(SketchKind::Countsketch, s, seed),
    })
}

pub fn sketch(l: &DMatrix<f64>, cfg: &SketchConfig) -> Result<SketchedFactor> {
    match cfg.kind {
        SketchKind::GaussianJl => gaussian_jl_sketch(l, cfg.size, cfg.seed),
        SketchKind::Countsketch => countsketch_sketch(l, cfg.size, cfg.seed),
    }
}

/// `ceil(c (r + ln(1/δ)) / ε²)`; the caller clips to `[1, T]`.
pub fn recommended_sketch_size(
    r_effective: usize,
    epsilon: f64,
    delta: f64,
    c: f64,
) -> Result<usize> {
    if !(epsilon > 0.0 && epsilon < 1.0) {
        return Err(Error::arg(format!(
            "epsilon must lie in (0, 1), got {epsilon}"
        )));
    }
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::arg(format!("delta must lie in (0, 1), got {delta}")));
    }
    if !(c > 0.0 && c.is_finite()) {
        return Err(Error::arg(format!("constant c must be positive, got {c}")));
    }
    let raw = c * (r_effective as f64 + (1.0 / delta).ln()) / (epsilon * epsilon);
    Ok(raw.ceil() as usize)
}

/// Subspace-embedding distortion `‖(ΦᵀW)ᵀ(ΦᵀW) − I‖₂` for an orthonormal
/// basis `W` of `Im(Lᵀ)`, computed from `L` and `L̃ = LΦ` alone.
///
/// With `L L ᵀ = Q Λ Qᵀ` restricted to the rank-`r` part, `WᵀΦ = Λ^{-1/2}
/// Qᵀ L̃`, so no access to `Φ` is needed. This equals the largest relative
/// quadratic-form distortion `|‖L̃ᵀx‖² / ‖Lᵀx‖² − 1|` over `Lᵀx ≠ 0`.
pub fn subspace_distortion(l: &DMatrix<f64>, ltilde: &DMatrix<f64>, rank_tol: f64) -> Result<f64> {
    if l.nrows() != ltilde.nrows() {
        return Err(Error::dim("factor and sketch have different row counts"));
    }
    let (vals, vecs) = sym_eigen_desc(&(l * l.transpose()));
    let top = vals.first().copied().unwrap_or(0.0);
    if top <= 0.0 {
        return Ok(0.0);
    }
    let r = vals.iter().take_while(|&&v| v > rank_tol * top).count();
    let mut m = vecs.columns(0, r).transpose() * ltilde;
    for (i, mut row) in m.row_iter_mut().enumerate() {
        row /= vals[i].sqrt();
    }
    let g = &m * m.transpose() - DMatrix::identity(r, r);
    Ok(crate::linalg::sym_spectral_norm(&g))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::gaussian_matrix;

    #[test]
    fn zero_factor_sketches_to_zero() {
        let l = DMatrix::zeros(3, 8);
        assert!(gaussian_jl_sketch(&l, 4, 1)
            .unwrap()
            .factor
            .iter()
            .all(|v| *v == 0.0));
        assert!(countsketch_sketch(&l, 4, 1)
            .unwrap()
            .factor
            .iter()
            .all(|v| *v == 0.0));
    }

    #[test]
    fn gaussian_shape_and_determinism() {
        let l = gaussian_matrix(&mut seeded_rng(5), 2, 8);
        let a = gaussian_jl_sketch(&l, 4, 1).unwrap();
        let b = gaussian_jl_sketch(&l, 4, 1).unwrap();
        assert_eq!(a.factor.shape(), (2, 4));
        assert_eq!(a.factor, b.factor);
        assert_eq!(a.config.size, 4);
    }

    #[test]
    fn gaussian_apply_matches_dense_product_and_ignores_blocking() {
        let l = gaussian_matrix(&mut seeded_rng(9), 5, 37);
        let op = GaussianSketch::new(37, 6, 3).unwrap();
        let dense = &l * op.materialize();
        let full = op.apply(&l).unwrap();
        assert!((&full - &dense).amax() < 1e-12);
        for cap in [6, 13, 60, 1000] {
            let blocked = op.clone().with_block_cap(cap).apply(&l).unwrap();
            assert_eq!(blocked, full, "block cap {cap}");
        }
    }

    #[test]
    fn gaussian_entries_have_variance_one_over_s() {
        let op = GaussianSketch::new(500, 200, 11).unwrap();
        let phi = op.materialize();
        let var = phi.iter().map(|v| v * v).sum::<f64>() / phi.len() as f64;
        assert!((var * 200.0 - 1.0).abs() < 0.02, "{var}");
    }

    #[test]
    fn countsketch_hand_example() {
        // h = (1, 2, 1, 2) counted from 1, signs (+, -, +, -)
        let cs = CountSketch::from_parts(2, vec![0, 1, 0, 1], vec![1.0, -1.0, 1.0, -1.0]).unwrap();
        let l = DMatrix::from_row_slice(2, 4, &[1.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0]);
        let lt = cs.apply(&l).unwrap();
        assert_eq!(lt, DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]));
    }

    #[test]
    fn countsketch_rows_have_single_unit_entry() {
        let op = SketchConfig::new(SketchKind::Countsketch, 7, 42)
            .operator(50)
            .unwrap();
        let phi = op.materialize().unwrap();
        for row in phi.row_iter() {
            let nz: Vec<f64> = row.iter().copied().filter(|v| *v != 0.0).collect();
            assert_eq!(nz.len(), 1);
            assert_eq!(nz[0].abs(), 1.0);
        }
    }

    #[test]
    fn countsketch_cost_is_nnz() {
        let mut l = gaussian_matrix(&mut seeded_rng(2), 30, 200);
        for (k, v) in l.iter_mut().enumerate() {
            if k % 3 == 0 {
                *v = 0.0;
            }
        }
        let nnz = l.iter().filter(|v| **v != 0.0).count();
        let cs = CountSketch::new(200, 20, 1).unwrap();
        let (_, ops) = cs.apply_counted(&l).unwrap();
        assert_eq!(ops, nnz);
        let (_, ops2) = cs.apply_counted(&DMatrix::zeros(30, 200)).unwrap();
        assert_eq!(ops2, 0);
    }

    #[test]
    fn identity_countsketch_is_identity() {
        let l = gaussian_matrix(&mut seeded_rng(1), 3, 6);
        assert_eq!(CountSketch::identity(6).apply(&l).unwrap(), l);
    }

    #[test]
    fn size_out_of_range_is_dimension_error() {
        let l = DMatrix::zeros(2, 8);
        assert!(matches!(
            gaussian_jl_sketch(&l, 0, 1),
            Err(Error::Dimension(_))
        ));
        assert!(matches!(
            countsketch_sketch(&l, 9, 1),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn recommended_size_examples() {
        let e_inv = (-1.0f64).exp();
        assert_eq!(recommended_sketch_size(1, 0.5, e_inv, 1.0).unwrap(), 8);
        assert_eq!(recommended_sketch_size(10, 0.5, 0.01, 1.0).unwrap(), 59);
        assert!(recommended_sketch_size(1, 0.5, 0.1, 0.0).is_err());
        assert!(recommended_sketch_size(1, 1.0, 0.1, 1.0).is_err());
        assert!(recommended_sketch_size(1, 0.5, 1.0, 1.0).is_err());
    }

    #[test]
    fn distortion_is_zero_for_identity_and_bounds_quadratic_forms() {
        let mut rng = seeded_rng(4);
        let l = gaussian_matrix(&mut rng, 6, 3) * gaussian_matrix(&mut rng, 3, 40);
        let eps = subspace_distortion(&l, &l, 1e-12).unwrap();
        assert!(eps < 1e-10);
        let lt = gaussian_jl_sketch(&l, 20, 3).unwrap().factor;
        let eps = subspace_distortion(&l, &lt, 1e-12).unwrap();
        for _ in 0..200 {
            let x = crate::linalg::gaussian_vector(&mut rng, 6);
            let a = (l.transpose() * &x).norm_squared();
            let b = (lt.transpose() * &x).norm_squared();
            assert!((b - a).abs() <= eps * a * (1.0 + 1e-9) + 1e-12);
        }
    }
}
