//! Sigmoid belief network with one binary hidden layer.
//!
//! Both logistic links are Pólya-Gamma augmented, so every parameter block
//! has a Gaussian posterior. Weights W carry a three-parameter beta normal
//! (TPBN) shrinkage prior; biases b and c carry broad isotropic Gaussians.

use nalgebra::{Cholesky, DMatrix, DVector};
use rand_distr::{Distribution, Normal};

use crate::ce_vb::{interpolate_matrix, ReleasePlan, VipsModel};
use crate::error::{domain, numeric, Result, VipsError};
use crate::mechanisms::{project_psd, BlockStats, SensitivityBound, StatBlock, DEFAULT_PSD_FLOOR};
use crate::polya_gamma::mean_from_square;
use crate::rng::{child_rng, Stream};

pub const DEFAULT_SWEEPS: usize = 3;
pub const DEFAULT_PRIOR_VARIANCE: f64 = 10.0;
pub const DEFAULT_THRESHOLD: f64 = 0.5;

const GIG_REL_TOL: f64 = 1e-12;
const GIG_MAX_INTERVALS: usize = 1 << 20;

/// Binary observations, N rows of J pixels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SbnData {
    rows: Vec<Vec<u8>>,
    width: usize,
}

impl SbnData {
    pub fn new(rows: Vec<Vec<u8>>) -> Result<Self> {
        let width = rows.first().map_or(0, Vec::len);
        if width == 0 {
            return domain("binary data needs at least one non-empty row");
        }
        if rows.iter().any(|r| r.len() != width) {
            return domain("rows have inconsistent length");
        }
        if rows.iter().flatten().any(|&v| v > 1) {
            return domain("entries must be 0 or 1");
        }
        Ok(Self { rows, width })
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn rows(&self) -> &[Vec<u8>] {
        &self.rows
    }

    pub fn subset(&self, idx: &[usize]) -> SbnData {
        SbnData { rows: idx.iter().map(|&i| self.rows[i].clone()).collect(), width: self.width }
    }
}

/// Gaussian posterior kept in both natural and moment form.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianBlock {
    pub precision: DMatrix<f64>,
    pub shift: DVector<f64>,
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
}

impl GaussianBlock {
    fn from_moments(mean: DVector<f64>, cov: DMatrix<f64>) -> Result<Self> {
        let chol = Cholesky::new(cov.clone()).ok_or_else(|| VipsError::Numeric("covariance is not positive definite".into()))?;
        let precision = chol.inverse();
        let shift = &precision * &mean;
        Ok(Self { precision, shift, mean, cov })
    }

    /// Interpolates towards the target naturals and refreshes the moments.
    fn update(&mut self, target_precision: DMatrix<f64>, target_shift: DVector<f64>, rho: f64, what: &str) -> Result<()> {
        let precision = interpolate_matrix(&self.precision, &target_precision, rho);
        let shift = &self.shift * (1.0 - rho) + target_shift * rho;
        let chol = Cholesky::new(precision.clone())
            .ok_or_else(|| VipsError::Numeric(format!("precision of {what} is not positive definite")))?;
        let cov = chol.inverse();
        let mean = chol.solve(&shift);
        if mean.iter().chain(cov.iter()).any(|x| !x.is_finite()) {
            return numeric(format!("posterior of {what} is not finite"));
        }
        self.cov = 0.5 * (&cov + cov.transpose());
        self.mean = mean;
        self.precision = precision;
        self.shift = shift;
        Ok(())
    }

    /// E[x xᵀ].
    pub fn second_moment(&self) -> DMatrix<f64> {
        &self.cov + &self.mean * self.mean.transpose()
    }
}

/// Variational expectations of the TPBN hierarchy.
#[derive(Debug, Clone, PartialEq)]
pub struct TpbnState {
    /// ⟨ζ_jk⟩, J×K.
    pub zeta: DMatrix<f64>,
    /// ⟨ζ_jk⁻¹⟩, J×K.
    pub zeta_inv: DMatrix<f64>,
    /// ⟨ξ_jk⟩ of the shrinkage layer, J×K.
    pub shrink: DMatrix<f64>,
    /// ⟨φ_k⟩.
    pub phi: DVector<f64>,
    /// ⟨ω⟩.
    pub omega: f64,
}

impl TpbnState {
    fn initial(j: usize, k: usize) -> Self {
        Self {
            zeta: DMatrix::from_element(j, k, 1.0),
            zeta_inv: DMatrix::from_element(j, k, 1.0),
            shrink: DMatrix::from_element(j, k, 1.0),
            phi: DVector::from_element(k, 1.0),
            omega: 1.0,
        }
    }
}

/// ⟨x⟩ and ⟨x⁻¹⟩ for x ∼ GIG(0, a, b) with density ∝ x⁻¹exp(−(ax + b/x)/2).
///
/// Uses K_ν(c) = ∫₀^∞ exp(−c·cosh u)·cosh(νu) du with c = √(ab), so that
/// E[x] = √(b/a)·K₁/K₀ and E[x⁻¹] = √(a/b)·K₁/K₀.
pub fn gig_moments(a: f64, b: f64) -> Result<(f64, f64)> {
    if !(a > 0.0 && b > 0.0 && a.is_finite() && b.is_finite()) {
        return domain(format!("GIG parameters must be positive and finite, got a={a}, b={b}"));
    }
    let ratio = bessel_k1_over_k0(a.sqrt() * b.sqrt())?;
    Ok(((b / a).sqrt() * ratio, (a / b).sqrt() * ratio))
}

/// K₁(c)/K₀(c) by Simpson quadrature of the integral representation.
pub fn bessel_k1_over_k0(c: f64) -> Result<f64> {
    if !(c > 0.0 && c.is_finite()) {
        return domain(format!("Bessel argument must be positive, got {c}"));
    }
    let upper = (1.0 + 64.0 / c).acosh() + 1.0;
    let integrals = |n: usize| {
        let h = upper / n as f64;
        let (mut k0, mut k1) = (0.0, 0.0);
        for i in 0..=n {
            let u = h * i as f64;
            let w = if i == 0 || i == n { 1.0 } else if i % 2 == 1 { 4.0 } else { 2.0 };
            let ch = u.cosh();
            let base = (-c * (ch - 1.0)).exp();
            k0 += w * base;
            k1 += w * base * ch;
        }
        (k0, k1)
    };
    let mut n = 64;
    let (k0, k1) = integrals(n);
    let mut prev = k1 / k0;
    loop {
        n *= 2;
        if n > GIG_MAX_INTERVALS {
            return numeric(format!("GIG quadrature did not converge at c={c}"));
        }
        let (k0, k1) = integrals(n);
        let cur = k1 / k0;
        if !cur.is_finite() {
            return numeric(format!("GIG quadrature produced {cur} at c={c}"));
        }
        if ((cur - prev) / cur).abs() < GIG_REL_TOL {
            return Ok(cur);
        }
        prev = cur;
    }
}

/// Per-block sensitivities C₁..C₇ for a batch divisor.
pub fn sbn_sensitivities(j: usize, k: usize, divisor: f64) -> Result<[SensitivityBound; 7]> {
    let (j, k) = (j as f64, k as f64);
    let values = [
        k.sqrt() / divisor,
        k.sqrt() / 4.0,
        j.sqrt() / divisor,
        j.sqrt() / (4.0 * divisor),
        (j * k).sqrt() / (4.0 * divisor),
        (j * k).sqrt() / divisor,
        j.sqrt() * k / (4.0 * divisor),
    ];
    let mut out = [SensitivityBound::new(1.0)?; 7];
    for (o, v) in out.iter_mut().zip(values) {
        *o = SensitivityBound::new(v)?;
    }
    Ok(out)
}

/// The seven averaged statistic blocks.
#[derive(Debug, Clone, PartialEq)]
pub struct SbnSuffStats {
    /// mean(⟨z⟩ − ½), length K.
    pub s1: DVector<f64>,
    /// ⟨ξ⁽¹⁾⟩, length K.
    pub s2: DVector<f64>,
    /// mean(y − ½), length J.
    pub s3: DVector<f64>,
    /// mean ⟨ξ⁽⁰⁾⟩, length J.
    pub s4: DVector<f64>,
    /// mean ⟨ξ⁽⁰⁾⟩⟨z⟩ᵀ, J×K.
    pub s5: DMatrix<f64>,
    /// mean ⟨z⟩(y − ½)ᵀ, K×J.
    pub s6: DMatrix<f64>,
    /// mean ⟨ξ⁽⁰⁾_j⟩⟨zzᵀ⟩, one K×K matrix per visible unit.
    pub s7: Vec<DMatrix<f64>>,
}

const BLOCK_NAMES: [&str; 7] = ["s1", "s2", "s3", "s4", "s5", "s6", "s7"];

fn row_major(m: &DMatrix<f64>) -> Vec<f64> {
    m.transpose().as_slice().to_vec()
}

impl SbnSuffStats {
    pub fn zeros(j: usize, k: usize) -> Self {
        Self {
            s1: DVector::zeros(k),
            s2: DVector::zeros(k),
            s3: DVector::zeros(j),
            s4: DVector::zeros(j),
            s5: DMatrix::zeros(j, k),
            s6: DMatrix::zeros(k, j),
            s7: vec![DMatrix::zeros(k, k); j],
        }
    }

    pub fn to_blocks(&self, sens: [SensitivityBound; 7]) -> Result<BlockStats> {
        let (j, k) = (self.s3.len(), self.s1.len());
        let s7: Vec<f64> = self.s7.iter().flat_map(row_major).collect();
        let parts: [(Vec<usize>, Vec<f64>); 7] = [
            (vec![k], self.s1.as_slice().to_vec()),
            (vec![k], self.s2.as_slice().to_vec()),
            (vec![j], self.s3.as_slice().to_vec()),
            (vec![j], self.s4.as_slice().to_vec()),
            (vec![j, k], row_major(&self.s5)),
            (vec![k, j], row_major(&self.s6)),
            (vec![j * k, k], s7),
        ];
        let blocks = parts
            .into_iter()
            .zip(BLOCK_NAMES)
            .zip(sens)
            .map(|(((shape, values), name), c)| StatBlock::new(name, shape, values, c))
            .collect::<Result<Vec<_>>>()?;
        BlockStats::new(blocks)
    }

    pub fn from_blocks(stats: &BlockStats, j: usize, k: usize) -> Result<Self> {
        if stats.len() != 7 {
            return domain(format!("expected seven statistic blocks, got {}", stats.len()));
        }
        let b = |i: usize| &stats.blocks[i].values;
        let expect = [k, k, j, j, j * k, k * j, j * k * k];
        for (i, n) in expect.iter().enumerate() {
            if b(i).len() != *n {
                return domain(format!("block {} has {} values, expected {n}", BLOCK_NAMES[i], b(i).len()));
            }
        }
        Ok(Self {
            s1: DVector::from_column_slice(b(0)),
            s2: DVector::from_column_slice(b(1)),
            s3: DVector::from_column_slice(b(2)),
            s4: DVector::from_column_slice(b(3)),
            s5: DMatrix::from_row_slice(j, k, b(4)),
            s6: DMatrix::from_row_slice(k, j, b(5)),
            s7: b(6).chunks(k * k).map(|c| DMatrix::from_row_slice(k, k, c)).collect(),
        })
    }
}

/// Mean-field ⟨zzᵀ⟩: ⟨z⟩ on the diagonal, products of means elsewhere.
pub fn z_second_moment(z: &DVector<f64>) -> DMatrix<f64> {
    let mut m = z * z.transpose();
    for (i, zi) in z.iter().enumerate() {
        m[(i, i)] = *zi;
    }
    m
}

fn sigmoid(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

/// Local posterior of one observation.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalPosterior {
    /// ⟨z⟩, length K.
    pub z: DVector<f64>,
    /// ⟨ξ⁽⁰⁾⟩, length J.
    pub xi0: DVector<f64>,
}

/// Expectations of the global posterior needed by the local updates.
#[derive(Debug, Clone)]
struct GlobalMoments {
    w_mean: DMatrix<f64>,
    w_second: Vec<DMatrix<f64>>,
    b_mean: DVector<f64>,
    c_mean: DVector<f64>,
    c_sq: DVector<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SbnModel {
    visible: usize,
    hidden: usize,
    w_rows: Vec<GaussianBlock>,
    b: GaussianBlock,
    c: GaussianBlock,
    tpbn: TpbnState,
    pub prior_var_b: f64,
    pub prior_var_c: f64,
    pub sweeps: usize,
    pub psd_floor: f64,
    /// Batch training: s₃ is released once and reused.
    pub batch_mode: bool,
}

impl SbnModel {
    /// Weight means drawn N(0, 0.1²) on the init stream, unit covariances.
    pub fn new(visible: usize, hidden: usize, seed: u64) -> Result<Self> {
        if visible == 0 || hidden == 0 {
            return domain("visible and hidden sizes must be positive");
        }
        let mut rng = child_rng(seed, Stream::Init);
        let normal = Normal::new(0.0, 0.1).expect("valid normal");
        let w_rows = (0..visible)
            .map(|_| {
                let mean = DVector::from_fn(hidden, |_, _| normal.sample(&mut rng));
                GaussianBlock::from_moments(mean, DMatrix::identity(hidden, hidden))
            })
            .collect::<Result<Vec<_>>>()?;
        let b = GaussianBlock::from_moments(DVector::zeros(hidden), DMatrix::identity(hidden, hidden))?;
        let c = GaussianBlock::from_moments(DVector::zeros(visible), DMatrix::identity(visible, visible))?;
        let mut model = Self {
            visible,
            hidden,
            w_rows,
            b,
            c,
            tpbn: TpbnState::initial(visible, hidden),
            prior_var_b: DEFAULT_PRIOR_VARIANCE,
            prior_var_c: DEFAULT_PRIOR_VARIANCE,
            sweeps: DEFAULT_SWEEPS,
            psd_floor: DEFAULT_PSD_FLOOR,
            batch_mode: false,
        };
        model.update_tpbn()?;
        Ok(model)
    }

    /// Replaces the global posterior; covariances must be positive definite.
    pub fn with_posterior(
        mut self,
        w_means: DMatrix<f64>,
        w_covs: Vec<DMatrix<f64>>,
        b: (DVector<f64>, DMatrix<f64>),
        c: (DVector<f64>, DMatrix<f64>),
    ) -> Result<Self> {
        let (j, k) = (self.visible, self.hidden);
        if w_means.shape() != (j, k) || w_covs.len() != j || b.0.len() != k || c.0.len() != j {
            return domain("posterior shapes do not match the network");
        }
        self.w_rows = w_covs
            .into_iter()
            .enumerate()
            .map(|(r, cov)| GaussianBlock::from_moments(w_means.row(r).transpose(), cov))
            .collect::<Result<Vec<_>>>()?;
        self.b = GaussianBlock::from_moments(b.0, b.1)?;
        self.c = GaussianBlock::from_moments(c.0, c.1)?;
        Ok(self)
    }

    pub fn with_tpbn(mut self, tpbn: TpbnState) -> Self {
        self.tpbn = tpbn;
        self
    }

    pub fn visible(&self) -> usize {
        self.visible
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    pub fn w_rows(&self) -> &[GaussianBlock] {
        &self.w_rows
    }

    pub fn b(&self) -> &GaussianBlock {
        &self.b
    }

    pub fn c(&self) -> &GaussianBlock {
        &self.c
    }

    pub fn tpbn(&self) -> &TpbnState {
        &self.tpbn
    }

    /// ⟨W⟩, J×K.
    pub fn w_mean(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.visible, self.hidden);
        for (j, row) in self.w_rows.iter().enumerate() {
            m.set_row(j, &row.mean.transpose());
        }
        m
    }

    /// Every covariance of the global posterior.
    pub fn covariances(&self) -> impl Iterator<Item = &DMatrix<f64>> {
        self.w_rows.iter().map(|r| &r.cov).chain([&self.b.cov, &self.c.cov])
    }

    fn moments(&self) -> GlobalMoments {
        GlobalMoments {
            w_mean: self.w_mean(),
            w_second: self.w_rows.iter().map(GaussianBlock::second_moment).collect(),
            b_mean: self.b.mean.clone(),
            c_mean: self.c.mean.clone(),
            c_sq: DVector::from_fn(self.visible, |j, _| self.c.cov[(j, j)] + self.c.mean[j].powi(2)),
        }
    }

    /// ⟨ξ⁽¹⁾_k⟩ = pg_mean(√⟨b_k²⟩).
    pub fn xi1_means(&self) -> DVector<f64> {
        DVector::from_fn(self.hidden, |k, _| mean_from_square(self.b.cov[(k, k)] + self.b.mean[k].powi(2)))
    }

    /// ⟨ξ⁽⁰⁾_j⟩ = pg_mean(√⟨(w_jᵀz + c_j)²⟩) under mean-field q(z).
    pub fn xi0_means(&self, z: &DVector<f64>) -> DVector<f64> {
        xi0_from(&self.moments(), z)
    }

    /// Coordinate-ascent sweeps over ⟨z_k⟩, k in order, starting from `z`.
    pub fn z_sweeps(&self, y: &[u8], xi0: &DVector<f64>, z: &mut DVector<f64>, sweeps: usize) {
        z_sweeps_from(&self.moments(), y, xi0, z, sweeps);
    }

    /// Local posterior of one observation: z from σ(⟨b⟩), then ξ⁽⁰⁾, z sweeps, ξ⁽⁰⁾.
    pub fn infer_local(&self, y: &[u8]) -> LocalPosterior {
        infer_local_from(&self.moments(), y, self.sweeps)
    }

    /// Batch-averaged statistics of the rows in `batch`.
    pub fn suff_stats(&self, data: &SbnData, batch: &[usize], divisor: f64) -> SbnSuffStats {
        let g = self.moments();
        let mut st = SbnSuffStats::zeros(self.visible, self.hidden);
        st.s2 = self.xi1_means();
        for &n in batch {
            let y = &data.rows[n];
            let local = infer_local_from(&g, y, self.sweeps);
            accumulate_stats(&mut st, y, &local);
        }
        let inv = 1.0 / divisor;
        st.s1 *= inv;
        st.s3 *= inv;
        st.s4 *= inv;
        st.s5 *= inv;
        st.s6 *= inv;
        st.s7.iter_mut().for_each(|m| *m *= inv);
        st
    }

    /// Parameter updates from (perturbed) statistics, followed by the TPBN update.
    pub fn update(&mut self, st: &SbnSuffStats, n_total: usize, rho: f64) -> Result<()> {
        let n = n_total as f64;
        let (j_dim, k_dim) = (self.visible, self.hidden);
        let c_old = self.c.mean.clone();
        for j in 0..j_dim {
            let sym = (&st.s7[j] + st.s7[j].transpose()) * 0.5;
            let scatter = project_psd(&sym, self.psd_floor)?;
            let prior = DMatrix::from_diagonal(&self.tpbn.zeta_inv.row(j).transpose());
            let target_precision = scatter * n + prior;
            let target_shift = (st.s6.column(j) - st.s5.row(j).transpose() * c_old[j]) * n;
            self.w_rows[j].update(target_precision, target_shift, rho, &format!("weight row {j}"))?;
        }

        let xi1 = st.s2.map(|x| x.max(0.0));
        let b_precision = DMatrix::identity(k_dim, k_dim) / self.prior_var_b + DMatrix::from_diagonal(&xi1) * n;
        self.b.update(b_precision, &st.s1 * n, rho, "hidden bias")?;

        let xi0 = st.s4.map(|x| x.max(0.0));
        let w_mean = self.w_mean();
        let cross = DVector::from_fn(j_dim, |j, _| st.s5.row(j).dot(&w_mean.row(j)));
        let c_precision = DMatrix::identity(j_dim, j_dim) / self.prior_var_c + DMatrix::from_diagonal(&xi0) * n;
        self.c.update(c_precision, (&st.s3 - cross) * n, rho, "visible bias")?;

        self.update_tpbn()
    }

    /// One pass over q(ζ), q(ξ), q(φ), q(ω) in that order.
    pub fn update_tpbn(&mut self) -> Result<()> {
        let (j_dim, k_dim) = (self.visible, self.hidden);
        let t = &mut self.tpbn;
        for j in 0..j_dim {
            let row = &self.w_rows[j];
            for k in 0..k_dim {
                let w_sq = row.cov[(k, k)] + row.mean[k].powi(2);
                let (mean, inv) = gig_moments(2.0 * t.shrink[(j, k)], w_sq)?;
                t.zeta[(j, k)] = mean;
                t.zeta_inv[(j, k)] = inv;
            }
        }
        for j in 0..j_dim {
            for k in 0..k_dim {
                t.shrink[(j, k)] = 1.0 / (t.zeta[(j, k)] + t.phi[k]);
            }
        }
        for k in 0..k_dim {
            let rate = t.omega + t.shrink.column(k).sum();
            t.phi[k] = (j_dim as f64 / 2.0 + 0.5) / rate;
        }
        t.omega = (k_dim as f64 / 2.0 + 0.5) / (1.0 + t.phi.sum());
        let all = t.zeta.iter().chain(t.zeta_inv.iter()).chain(t.shrink.iter()).chain(t.phi.iter());
        if all.chain([&t.omega]).any(|x| !(x.is_finite() && *x > 0.0)) {
            return numeric("TPBN expectations left the positive reals");
        }
        Ok(())
    }

    /// Pixel probabilities σ(⟨W⟩⟨z⟩ + ⟨c⟩) after inferring z from `y`.
    pub fn reconstruct(&self, y: &[u8]) -> DVector<f64> {
        let g = self.moments();
        let local = infer_local_from(&g, y, self.sweeps);
        (&g.w_mean * &local.z + &g.c_mean).map(sigmoid)
    }

    /// Mean agreement between thresholded reconstructions and the true pixels.
    pub fn reconstruction_accuracy(&self, data: &SbnData, threshold: f64) -> f64 {
        let mut hits = 0usize;
        for y in &data.rows {
            let p = self.reconstruct(y);
            hits += p.iter().zip(y).filter(|(p, &y)| (**p > threshold) == (y == 1)).count();
        }
        hits as f64 / (data.len() * data.width) as f64
    }
}

fn xi0_from(g: &GlobalMoments, z: &DVector<f64>) -> DVector<f64> {
    let zz = z_second_moment(z);
    DVector::from_fn(g.w_mean.nrows(), |j, _| {
        let quad = g.w_second[j].component_mul(&zz).sum();
        let cross = 2.0 * g.c_mean[j] * g.w_mean.row(j).transpose().dot(z);
        mean_from_square(quad + cross + g.c_sq[j])
    })
}

fn z_sweeps_from(g: &GlobalMoments, y: &[u8], xi0: &DVector<f64>, z: &mut DVector<f64>, sweeps: usize) {
    let (j_dim, k_dim) = g.w_mean.shape();
    for _ in 0..sweeps {
        for k in 0..k_dim {
            let mut d = g.b_mean[k];
            for j in 0..j_dim {
                let ws = &g.w_second[j];
                let mut others = 0.0;
                for l in 0..k_dim {
                    if l != k {
                        others += ws[(l, k)] * z[l];
                    }
                }
                let mu_jk = g.w_mean[(j, k)];
                d += (y[j] as f64 - 0.5) * mu_jk
                    - 0.5 * xi0[j] * (ws[(k, k)] + 2.0 * (others + g.c_mean[j] * mu_jk));
            }
            z[k] = sigmoid(d);
        }
    }
}

fn infer_local_from(g: &GlobalMoments, y: &[u8], sweeps: usize) -> LocalPosterior {
    let mut z = g.b_mean.map(sigmoid);
    let xi0 = xi0_from(g, &z);
    z_sweeps_from(g, y, &xi0, &mut z, sweeps);
    let xi0 = xi0_from(g, &z);
    LocalPosterior { z, xi0 }
}

fn accumulate_stats(st: &mut SbnSuffStats, y: &[u8], local: &LocalPosterior) {
    let yc = DVector::from_iterator(y.len(), y.iter().map(|&v| v as f64 - 0.5));
    let z = &local.z;
    st.s1 += z.map(|v| v - 0.5);
    st.s3 += &yc;
    st.s4 += &local.xi0;
    st.s5 += &local.xi0 * z.transpose();
    st.s6 += z * yc.transpose();
    let zz = z_second_moment(z);
    for (m, xi) in st.s7.iter_mut().zip(local.xi0.iter()) {
        *m += &zz * *xi;
    }
}

impl VipsModel for SbnModel {
    type Data = SbnData;

    fn num_records(data: &SbnData) -> usize {
        data.len()
    }

    fn e_step(&self, data: &SbnData, batch: &[usize], divisor: f64) -> Result<BlockStats> {
        self.suff_stats(data, batch, divisor)
            .to_blocks(sbn_sensitivities(self.visible, self.hidden, divisor)?)
    }

    fn zero_stats(&self, divisor: f64) -> Result<BlockStats> {
        SbnSuffStats::zeros(self.visible, self.hidden).to_blocks(sbn_sensitivities(self.visible, self.hidden, divisor)?)
    }

    fn release_plan(&self) -> ReleasePlan {
        ReleasePlan::Concatenated { frozen: if self.batch_mode { vec![2] } else { vec![] } }
    }

    fn m_step(&mut self, stats: &BlockStats, rho: f64, n_total: usize) -> Result<()> {
        let st = SbnSuffStats::from_blocks(stats, self.visible, self.hidden)?;
        self.update(&st, n_total, rho)
    }
}
