//! Bayesian logistic regression with Pólya-Gamma augmentation.
//!
//! Prior: w ∼ N(0, α⁻¹I), α ∼ Gam(a₀, b₀). Each iteration releases the
//! label-weighted input sum s₁ and the ξ-weighted scatter s₂ separately.

use nalgebra::{Cholesky, DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::ce_vb::{interpolate_matrix, BlockRelease, ReleasePlan, VipsModel};
use crate::error::{domain, numeric, Result};
use crate::mechanisms::{BlockStats, SensitivityBound, StatBlock, DEFAULT_PSD_FLOOR};
use crate::polya_gamma::mean_from_square;

pub const DEFAULT_MC_SAMPLES: usize = 1000;

/// Inputs inside the unit ball with binary labels.
#[derive(Debug, Clone, PartialEq)]
pub struct BlrDataset {
    inputs: Vec<DVector<f64>>,
    labels: Vec<u8>,
}

impl BlrDataset {
    pub fn new(inputs: Vec<DVector<f64>>, labels: Vec<u8>) -> Result<Self> {
        if inputs.len() != labels.len() {
            return domain("inputs and labels differ in length");
        }
        if let Some(d) = inputs.first().map(|x| x.len()) {
            if inputs.iter().any(|x| x.len() != d) {
                return domain("inputs have inconsistent dimension");
            }
        }
        if let Some(x) = inputs.iter().find(|x| x.norm() > 1.0 + 1e-12) {
            return domain(format!("input norm {} exceeds 1", x.norm()));
        }
        if labels.iter().any(|&y| y > 1) {
            return domain("labels must be 0 or 1");
        }
        Ok(Self { inputs, labels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.inputs.first().map_or(0, |x| x.len())
    }

    pub fn inputs(&self) -> &[DVector<f64>] {
        &self.inputs
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn subset(&self, idx: &[usize]) -> BlrDataset {
        BlrDataset {
            inputs: idx.iter().map(|&i| self.inputs[i].clone()).collect(),
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
        }
    }
}

/// Averaged statistics of one batch.
#[derive(Debug, Clone, PartialEq)]
pub struct BlrSuffStats {
    pub s1: DVector<f64>,
    pub s2: DMatrix<f64>,
}

/// s₁ = (1/S)Σ(y−½)x and s₂ = (1/S)Σ⟨ξ⟩xxᵀ with ξ ∼ PG(1, √(xᵀ⟨wwᵀ⟩x)).
pub fn e_step(data: &BlrDataset, batch: &[usize], second_moment: &DMatrix<f64>, divisor: f64) -> BlrSuffStats {
    let d = second_moment.nrows();
    let mut s1 = DVector::zeros(d);
    let mut s2 = DMatrix::zeros(d, d);
    for &i in batch {
        let x = &data.inputs[i];
        let xi = mean_from_square((second_moment * x).dot(x));
        s1.axpy(data.labels[i] as f64 - 0.5, x, 1.0);
        s2.ger(xi, x, x, 1.0);
    }
    s1 /= divisor;
    s2 /= divisor;
    BlrSuffStats { s1, s2 }
}

/// (2/S, 1/(2S)) for s₁ and s₂.
pub fn blr_sensitivities(divisor: f64) -> Result<(SensitivityBound, SensitivityBound)> {
    Ok((SensitivityBound::new(2.0 / divisor)?, SensitivityBound::new(0.5 / divisor)?))
}

/// a_N = a₀ + d/2, b_N = b₀ + ½(μᵀμ + tr Σ).
pub fn update_alpha(mu: &DVector<f64>, sigma: &DMatrix<f64>, a0: f64, b0: f64) -> (f64, f64) {
    (a0 + mu.len() as f64 / 2.0, b0 + 0.5 * (mu.dot(mu) + sigma.trace()))
}

/// Mann-Whitney AUC with ties counted as one half.
pub fn auc(scores: &[f64], labels: &[u8]) -> Result<f64> {
    if scores.len() != labels.len() {
        return domain("scores and labels differ in length");
    }
    let n_pos = labels.iter().filter(|&&y| y == 1).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return domain("AUC needs both classes");
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let avg_rank = 0.5 * ((i + 1) + (j + 1)) as f64;
        rank_sum += avg_rank * order[i..=j].iter().filter(|&&k| labels[k] == 1).count() as f64;
        i = j + 1;
    }
    let p = n_pos as f64;
    Ok((rank_sum - p * (p + 1.0) / 2.0) / (p * n_neg as f64))
}

fn sigmoid(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

/// Gaussian weight posterior and Gamma posterior over the prior precision.
#[derive(Debug, Clone, PartialEq)]
pub struct BlrModel {
    precision: DMatrix<f64>,
    shift: DVector<f64>,
    mu: DVector<f64>,
    sigma: DMatrix<f64>,
    a0: f64,
    b0: f64,
    a_n: f64,
    b_n: f64,
    pub psd_floor: f64,
}

impl BlrModel {
    pub fn new(dim: usize, a0: f64, b0: f64) -> Result<Self> {
        if dim == 0 {
            return domain("dimension must be positive");
        }
        if !(a0 > 0.0 && b0 > 0.0) {
            return domain(format!("a0 and b0 must be positive, got {a0}, {b0}"));
        }
        let alpha = a0 / b0;
        Ok(Self {
            precision: DMatrix::identity(dim, dim) * alpha,
            shift: DVector::zeros(dim),
            mu: DVector::zeros(dim),
            sigma: DMatrix::identity(dim, dim) / alpha,
            a0,
            b0,
            a_n: a0,
            b_n: b0,
            psd_floor: DEFAULT_PSD_FLOOR,
        })
    }

    pub fn dim(&self) -> usize {
        self.mu.len()
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mu
    }

    pub fn covariance(&self) -> &DMatrix<f64> {
        &self.sigma
    }

    pub fn gamma_params(&self) -> (f64, f64) {
        (self.a_n, self.b_n)
    }

    pub fn expected_alpha(&self) -> f64 {
        self.a_n / self.b_n
    }

    /// ⟨wwᵀ⟩ = Σ + μμᵀ.
    pub fn second_moment(&self) -> DMatrix<f64> {
        &self.sigma + &self.mu * self.mu.transpose()
    }

    /// Natural-parameter update from released statistics, then the q(α) update.
    pub fn update(&mut self, s1: &DVector<f64>, s2: &DMatrix<f64>, n_total: usize, rho: f64) -> Result<()> {
        let n = n_total as f64;
        let d = self.dim();
        let target_precision = s2 * n + DMatrix::identity(d, d) * self.expected_alpha();
        let target_shift = s1 * n;
        let precision = interpolate_matrix(&self.precision, &target_precision, rho);
        let shift = &self.shift * (1.0 - rho) + target_shift * rho;
        let chol = Cholesky::new(precision.clone())
            .ok_or_else(|| crate::VipsError::Numeric("weight precision is not positive definite".into()))?;
        let sigma = chol.inverse();
        let mu = chol.solve(&shift);
        if mu.iter().chain(sigma.iter()).any(|x| !x.is_finite()) {
            return numeric("weight posterior is not finite");
        }
        self.precision = precision;
        self.shift = shift;
        self.sigma = 0.5 * (&sigma + sigma.transpose());
        self.mu = mu;
        (self.a_n, self.b_n) = update_alpha(&self.mu, &self.sigma, self.a0, self.b0);
        Ok(())
    }

    /// Monte-Carlo predictive probability of label 1.
    pub fn predict<R: Rng + ?Sized>(&self, x: &DVector<f64>, mc_samples: usize, rng: &mut R) -> Result<f64> {
        Ok(self.predict_many(std::slice::from_ref(x), mc_samples, rng)?[0])
    }

    /// Predictive probabilities sharing one set of weight draws.
    pub fn predict_many<R: Rng + ?Sized>(&self, xs: &[DVector<f64>], mc_samples: usize, rng: &mut R) -> Result<Vec<f64>> {
        if mc_samples == 0 {
            return domain("at least one Monte-Carlo sample is required");
        }
        let d = self.dim();
        let chol = Cholesky::new(self.sigma.clone())
            .or_else(|| Cholesky::new(crate::mechanisms::project_psd(&self.sigma, 1e-12).ok()?))
            .ok_or_else(|| crate::VipsError::Numeric("weight covariance is not positive definite".into()))?;
        let l = chol.l();
        let draws: Vec<DVector<f64>> = (0..mc_samples)
            .map(|_| {
                let eps = DVector::from_fn(d, |_, _| rng.sample::<f64, _>(StandardNormal));
                &self.mu + &l * eps
            })
            .collect();
        Ok(xs
            .iter()
            .map(|x| draws.iter().map(|w| sigmoid(w.dot(x))).sum::<f64>() / mc_samples as f64)
            .collect())
    }
}

impl VipsModel for BlrModel {
    type Data = BlrDataset;

    fn num_records(data: &BlrDataset) -> usize {
        data.len()
    }

    fn e_step(&self, data: &BlrDataset, batch: &[usize], divisor: f64) -> Result<BlockStats> {
        let stats = e_step(data, batch, &self.second_moment(), divisor);
        self.to_blocks(stats, divisor)
    }

    fn zero_stats(&self, divisor: f64) -> Result<BlockStats> {
        let d = self.dim();
        self.to_blocks(BlrSuffStats { s1: DVector::zeros(d), s2: DMatrix::zeros(d, d) }, divisor)
    }

    fn release_plan(&self) -> ReleasePlan {
        ReleasePlan::PerBlock(vec![BlockRelease::Gaussian, BlockRelease::AnalyzeGauss { psd_floor: self.psd_floor }])
    }

    fn m_step(&mut self, stats: &BlockStats, rho: f64, n_total: usize) -> Result<()> {
        let d = self.dim();
        let s1 = DVector::from_column_slice(&stats.blocks[0].values);
        let s2 = DMatrix::from_row_slice(d, d, &stats.blocks[1].values);
        self.update(&s1, &s2, n_total, rho)
    }
}

impl BlrModel {
    fn to_blocks(&self, stats: BlrSuffStats, divisor: f64) -> Result<BlockStats> {
        let d = self.dim();
        let (c1, c2) = blr_sensitivities(divisor)?;
        let s2_rows = stats.s2.transpose().as_slice().to_vec();
        BlockStats::new(vec![
            StatBlock::new("s1", vec![d], stats.s1.as_slice().to_vec(), c1)?,
            StatBlock::new("s2", vec![d, d], s2_rows, c2)?,
        ])
    }
}
