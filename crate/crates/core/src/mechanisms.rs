//! Noise mechanisms applied to expected sufficient statistics.
//!
//! Noise is always drawn in block order and then row-major within a block, so
//! a fixed seed reproduces a run regardless of how the caller is organised.

use nalgebra::{DMatrix, SymmetricEigen};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{domain, numeric, Result};

/// Default eigenvalue floor used to repair perturbed scatter matrices.
pub const DEFAULT_PSD_FLOOR: f64 = 1e-6;

/// Absolute tolerance for treating an input matrix as symmetric.
pub const SYMMETRY_TOL: f64 = 1e-12;

/// L2 sensitivity of a released statistic.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SensitivityBound(f64);

impl SensitivityBound {
    pub fn new(value: f64) -> Result<Self> {
        if !(value > 0.0 && value.is_finite()) {
            return domain(format!("sensitivity must be positive and finite, got {value}"));
        }
        Ok(Self(value))
    }

    pub fn value(&self) -> f64 {
        self.0
    }
}

/// One named statistic block stored as a flat row-major vector.
#[derive(Debug, Clone, PartialEq)]
pub struct StatBlock {
    pub name: &'static str,
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
    pub sensitivity: SensitivityBound,
}

impl StatBlock {
    pub fn new(
        name: &'static str,
        shape: Vec<usize>,
        values: Vec<f64>,
        sensitivity: SensitivityBound,
    ) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if values.is_empty() || expected != values.len() {
            return domain(format!(
                "block {name}: shape {shape:?} does not match {} values",
                values.len()
            ));
        }
        Ok(Self { name, shape, values, sensitivity })
    }

    /// Block viewed as a matrix; one-dimensional blocks become column vectors.
    pub fn to_matrix(&self) -> DMatrix<f64> {
        let (rows, cols) = match self.shape.as_slice() {
            [n] => (*n, 1),
            [r, c] => (*r, *c),
            other => (other[0], other[1..].iter().product()),
        };
        DMatrix::from_row_slice(rows, cols, &self.values)
    }
}

/// Ordered statistic blocks of one mini-batch.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockStats {
    pub blocks: Vec<StatBlock>,
}

impl BlockStats {
    pub fn new(blocks: Vec<StatBlock>) -> Result<Self> {
        if blocks.is_empty() {
            return domain("statistics need at least one block");
        }
        Ok(Self { blocks })
    }

    pub fn block(&self, name: &str) -> Option<&StatBlock> {
        self.blocks.iter().find(|b| b.name == name)
    }

    pub fn len(&self) -> usize {
        self.blocks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }
}

fn check_multiplier(multiplier: f64) -> Result<()> {
    if !(multiplier >= 0.0 && multiplier.is_finite()) {
        return domain(format!("noise multiplier must be non-negative, got {multiplier}"));
    }
    Ok(())
}

/// Adds i.i.d. N(0, (z·Δ)²) noise to every coordinate.
pub fn gaussian_perturb<R: Rng + ?Sized>(
    v: &[f64],
    sens: SensitivityBound,
    multiplier: f64,
    rng: &mut R,
) -> Result<Vec<f64>> {
    check_multiplier(multiplier)?;
    let std = multiplier * sens.value();
    Ok(v.iter().map(|x| x + std * rng.sample::<f64, _>(StandardNormal)).collect())
}

/// Elementwise max(v, 0).
pub fn clip_nonnegative(v: &[f64]) -> Vec<f64> {
    v.iter().map(|x| x.max(0.0)).collect()
}

/// Symmetric Gaussian perturbation: the upper triangle (with diagonal) is drawn
/// row by row and mirrored, so the output is exactly symmetric.
pub fn analyze_gauss_perturb<R: Rng + ?Sized>(
    m: &DMatrix<f64>,
    sens: SensitivityBound,
    multiplier: f64,
    rng: &mut R,
) -> Result<DMatrix<f64>> {
    check_multiplier(multiplier)?;
    let mut out = symmetrized(m)?;
    let d = out.nrows();
    let std = multiplier * sens.value();
    for i in 0..d {
        for j in i..d {
            let noise = std * rng.sample::<f64, _>(StandardNormal);
            let upper = out[(i, j)] + noise;
            out[(i, j)] = upper;
            out[(j, i)] = upper;
        }
    }
    Ok(out)
}

fn symmetrized(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if !m.is_square() {
        return domain(format!("expected a square matrix, got {}x{}", m.nrows(), m.ncols()));
    }
    let d = m.nrows();
    let mut out = m.clone();
    for i in 0..d {
        for j in (i + 1)..d {
            let (a, b) = (m[(i, j)], m[(j, i)]);
            if (a - b).abs() > SYMMETRY_TOL {
                return domain(format!("matrix is not symmetric at ({i}, {j}): {a} vs {b}"));
            }
            let mid = 0.5 * (a + b);
            out[(i, j)] = mid;
            out[(j, i)] = mid;
        }
    }
    Ok(out)
}

/// Replaces eigenvalues below `floor` with `floor`.
pub fn project_psd(m: &DMatrix<f64>, floor: f64) -> Result<DMatrix<f64>> {
    if !(floor > 0.0) {
        return domain(format!("eigenvalue floor must be positive, got {floor}"));
    }
    let sym = symmetrized(m)?;
    if sym.iter().any(|x| !x.is_finite()) {
        return numeric("cannot project a matrix with non-finite entries");
    }
    let eig = SymmetricEigen::new(sym);
    let clamped = eig.eigenvalues.map(|l| l.max(floor));
    let v = &eig.eigenvectors;
    let recon = v * DMatrix::from_diagonal(&clamped) * v.transpose();
    let mut out = 0.5 * (&recon + recon.transpose());
    for i in 0..out.nrows() {
        for j in (i + 1)..out.ncols() {
            out[(j, i)] = out[(i, j)];
        }
    }
    Ok(out)
}

/// Scales every block by its own sensitivity, adds noise of std √m·z to the
/// concatenation, and scales back.
pub fn block_scaled_perturb<R: Rng + ?Sized>(
    stats: &BlockStats,
    multiplier: f64,
    rng: &mut R,
) -> Result<BlockStats> {
    check_multiplier(multiplier)?;
    let std = (stats.blocks.len() as f64).sqrt() * multiplier;
    let blocks = stats
        .blocks
        .iter()
        .map(|b| {
            let c = b.sensitivity.value();
            let values = b
                .values
                .iter()
                .map(|x| (x / c + std * rng.sample::<f64, _>(StandardNormal)) * c)
                .collect();
            StatBlock { values, ..b.clone() }
        })
        .collect();
    Ok(BlockStats { blocks })
}
