//! Private stochastic variational Bayes loop for conjugate-exponential models.
//!
//! Each iteration draws a mini-batch, asks the model for expected sufficient
//! statistics, perturbs them, records the releases on the privacy ledger and
//! hands the perturbed statistics to the model's M-step.

use std::io::Write;
use std::time::Instant;

use nalgebra::DMatrix;
use rand::seq::index;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::accountant::{MechanismSpec, MomentOrders, PrivacyLedger};
use crate::error::{domain, numeric, Result};
use crate::mechanisms::{
    analyze_gauss_perturb, block_scaled_perturb, clip_nonnegative, gaussian_perturb, project_psd,
    BlockStats, StatBlock,
};
use crate::rng::{child_rng, Stream};

/// Robbins-Monro step sizes ρ_t = (τ₀ + t)^(−κ).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepSchedule {
    tau0: f64,
    kappa: f64,
}

impl StepSchedule {
    pub fn new(tau0: f64, kappa: f64) -> Result<Self> {
        if !(tau0 >= 0.0 && tau0.is_finite()) {
            return domain(format!("tau0 must be non-negative, got {tau0}"));
        }
        if !(0.5..=1.0).contains(&kappa) {
            return domain(format!("kappa must lie in [0.5, 1], got {kappa}"));
        }
        Ok(Self { tau0, kappa })
    }

    /// ρ_t = 1 at every step: plain batch coordinate ascent.
    pub fn batch() -> Self {
        Self { tau0: 0.0, kappa: 0.0 }
    }

    pub fn tau0(&self) -> f64 {
        self.tau0
    }

    pub fn kappa(&self) -> f64 {
        self.kappa
    }
}

impl Default for StepSchedule {
    fn default() -> Self {
        Self { tau0: 1024.0, kappa: 0.7 }
    }
}

pub fn step_size(t: usize, schedule: &StepSchedule) -> f64 {
    (schedule.tau0 + t as f64).powf(-schedule.kappa)
}

/// How mini-batches are drawn.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SamplerMode {
    /// Each record enters independently with probability S/N.
    Poisson,
    /// Exactly S records without replacement.
    #[default]
    Fixed,
}

/// Each index is kept independently with probability `rate`.
pub fn poisson_subsample<R: Rng + ?Sized>(n: usize, rate: f64, rng: &mut R) -> Vec<usize> {
    (0..n).filter(|_| rng.random::<f64>() < rate).collect()
}

/// Exactly `size` distinct indices in ascending order.
pub fn fixed_subsample<R: Rng + ?Sized>(n: usize, size: usize, rng: &mut R) -> Vec<usize> {
    if size >= n {
        return (0..n).collect();
    }
    let mut idx = index::sample(rng, n, size).into_vec();
    idx.sort_unstable();
    idx
}

/// Elementwise (1 − ρ)·prev + ρ·new.
pub fn interpolate_naturals(prev: &[f64], new: &[f64], rho: f64) -> Vec<f64> {
    prev.iter().zip(new).map(|(p, n)| (1.0 - rho) * p + rho * n).collect()
}

pub(crate) fn interpolate_matrix(prev: &DMatrix<f64>, new: &DMatrix<f64>, rho: f64) -> DMatrix<f64> {
    prev * (1.0 - rho) + new * rho
}

/// Noise treatment of a single block.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BlockRelease {
    Gaussian,
    /// Gaussian noise followed by clipping at zero.
    ClippedGaussian,
    /// Symmetric matrix noise followed by eigenvalue flooring.
    AnalyzeGauss { psd_floor: f64 },
}

/// How a model's statistic blocks map onto ledger releases.
#[derive(Debug, Clone, PartialEq)]
pub enum ReleasePlan {
    /// Every block is a separate release.
    PerBlock(Vec<BlockRelease>),
    /// All blocks are scaled by their sensitivities and released together.
    /// Blocks listed in `frozen` are released on their own once, at the first
    /// iteration, and the released value is reused afterwards.
    Concatenated { frozen: Vec<usize> },
}

impl ReleasePlan {
    /// Ledger releases recorded at iteration `iter` (1-based).
    pub fn releases_at(&self, iter: usize) -> u64 {
        match self {
            ReleasePlan::PerBlock(b) => b.len() as u64,
            ReleasePlan::Concatenated { frozen } => {
                1 + if iter == 1 { frozen.len() as u64 } else { 0 }
            }
        }
    }
}

/// A model that can be trained by [`run_vips`].
pub trait VipsModel {
    type Data: ?Sized;

    fn num_records(data: &Self::Data) -> usize;

    /// Expected sufficient statistics of `batch`, averaged with `divisor`
    /// and tagged with their sensitivities.
    fn e_step(&self, data: &Self::Data, batch: &[usize], divisor: f64) -> Result<BlockStats>;

    /// All-zero statistics of the right shape, used when a batch is empty.
    fn zero_stats(&self, divisor: f64) -> Result<BlockStats>;

    fn release_plan(&self) -> ReleasePlan;

    /// Natural-parameter update from (perturbed) statistics; never sees data.
    fn m_step(&mut self, stats: &BlockStats, rho: f64, n_total: usize) -> Result<()>;
}

#[derive(Debug, Clone, PartialEq)]
pub struct VipsConfig {
    pub batch_size: usize,
    pub iterations: usize,
    /// Noise std over sensitivity; 0 disables perturbation.
    pub noise_multiplier: f64,
    pub delta: f64,
    pub seed: u64,
    pub schedule: StepSchedule,
    pub sampler: SamplerMode,
    pub orders: MomentOrders,
    /// Fill `elapsed_ms` with wall-clock time instead of zero.
    pub timing: bool,
}

impl VipsConfig {
    pub fn new(batch_size: usize, iterations: usize, noise_multiplier: f64, seed: u64) -> Self {
        Self {
            batch_size,
            iterations,
            noise_multiplier,
            delta: 1e-4,
            seed,
            schedule: StepSchedule::default(),
            sampler: SamplerMode::Fixed,
            orders: MomentOrders::default(),
            timing: false,
        }
    }

    fn validate(&self, n: usize) -> Result<()> {
        if self.batch_size == 0 || self.batch_size > n {
            return domain(format!("batch size must lie in 1..={n}, got {}", self.batch_size));
        }
        if self.iterations == 0 {
            return domain("at least one iteration is required");
        }
        if !(self.noise_multiplier >= 0.0 && self.noise_multiplier.is_finite()) {
            return domain(format!("noise multiplier must be non-negative, got {}", self.noise_multiplier));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return domain(format!("delta must lie in (0, 1), got {}", self.delta));
        }
        Ok(())
    }
}

/// A scalar reported by the metric hook after each M-step.
#[derive(Debug, Clone, PartialEq)]
pub struct Metric {
    pub name: String,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceRow {
    pub iter: usize,
    pub examples_seen: u64,
    pub epsilon: f64,
    pub metric: String,
    pub value: f64,
    pub elapsed_ms: u64,
}

/// Per-iteration training record.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainTrace {
    pub rows: Vec<TraceRow>,
}

pub const TRACE_HEADER: &str = "iter,examples_seen,epsilon,metric,value,elapsed_ms";

impl TrainTrace {
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "{TRACE_HEADER}")?;
        for r in &self.rows {
            writeln!(
                w,
                "{},{},{},{},{},{}",
                r.iter,
                r.examples_seen,
                r.epsilon,
                r.metric,
                if r.value.is_nan() { String::new() } else { r.value.to_string() },
                r.elapsed_ms
            )?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct VipsOutcome {
    pub trace: TrainTrace,
    /// `None` when training was non-private.
    pub ledger: Option<PrivacyLedger>,
    /// Number of statistic releases made, counted even without noise.
    pub releases: u64,
    pub final_epsilon: f64,
}

/// Runs private (or, with multiplier 0, ordinary) stochastic VB.
pub fn run_vips<M, H>(model: &mut M, data: &M::Data, config: &VipsConfig, mut hook: H) -> Result<VipsOutcome>
where
    M: VipsModel,
    H: FnMut(&M) -> Option<Metric>,
{
    let n = M::num_records(data);
    config.validate(n)?;
    let start = Instant::now();
    let rate = config.batch_size as f64 / n as f64;
    let divisor = config.batch_size as f64;
    let private = config.noise_multiplier > 0.0;
    let spec = if private { Some(MechanismSpec::new(config.noise_multiplier, rate)?) } else { None };
    let mut ledger = spec.map(|_| PrivacyLedger::new(&config.orders));
    let mut sampling_rng = child_rng(config.seed, Stream::Sampling);
    let mut noise_rng = child_rng(config.seed, Stream::Noise);
    let plan = model.release_plan();
    let mut frozen_cache: Vec<Option<StatBlock>> = Vec::new();
    let mut trace = TrainTrace::default();
    let mut releases = 0u64;
    let mut examples_seen = 0u64;
    let mut epsilon = 0.0;

    for iter in 1..=config.iterations {
        let batch = match config.sampler {
            SamplerMode::Fixed => fixed_subsample(n, config.batch_size, &mut sampling_rng),
            SamplerMode::Poisson => poisson_subsample(n, rate, &mut sampling_rng),
        };
        examples_seen += batch.len() as u64;
        let empty = batch.is_empty();
        let stats = if empty { model.zero_stats(divisor)? } else { model.e_step(data, &batch, divisor)? };
        for b in &stats.blocks {
            if b.values.iter().any(|x| !x.is_finite()) {
                return numeric(format!("e-step produced non-finite values in block {}", b.name));
            }
        }

        let released = if private {
            release(&stats, &plan, config.noise_multiplier, &mut frozen_cache, &mut noise_rng)?
        } else {
            stats
        };
        let count = plan.releases_at(iter);
        releases += count;
        if let (Some(ledger), Some(spec)) = (ledger.as_mut(), spec) {
            for _ in 0..count {
                ledger.record(spec)?;
            }
            epsilon = ledger.epsilon(config.delta)?;
        }

        if !empty {
            let rho = step_size(iter, &config.schedule);
            model.m_step(&released, rho, n)?;
        }

        let metric = hook(model).unwrap_or(Metric { name: String::new(), value: f64::NAN });
        trace.rows.push(TraceRow {
            iter,
            examples_seen,
            epsilon,
            metric: metric.name,
            value: metric.value,
            elapsed_ms: if config.timing { start.elapsed().as_millis() as u64 } else { 0 },
        });
    }

    Ok(VipsOutcome { trace, ledger, releases, final_epsilon: epsilon })
}

fn release(
    stats: &BlockStats,
    plan: &ReleasePlan,
    z: f64,
    frozen_cache: &mut Vec<Option<StatBlock>>,
    rng: &mut ChaCha8Rng,
) -> Result<BlockStats> {
    match plan {
        ReleasePlan::PerBlock(kinds) => {
            if kinds.len() != stats.blocks.len() {
                return domain("release plan and statistics disagree on block count");
            }
            let blocks = stats
                .blocks
                .iter()
                .zip(kinds)
                .map(|(b, kind)| release_block(b, *kind, z, rng))
                .collect::<Result<Vec<_>>>()?;
            BlockStats::new(blocks)
        }
        ReleasePlan::Concatenated { frozen } => {
            if frozen_cache.is_empty() {
                frozen_cache.resize(stats.blocks.len(), None);
                for &i in frozen {
                    let b = stats
                        .blocks
                        .get(i)
                        .ok_or_else(|| crate::VipsError::Domain(format!("frozen block {i} out of range")))?;
                    frozen_cache[i] = Some(release_block(b, BlockRelease::Gaussian, z, rng)?);
                }
            }
            let live: Vec<StatBlock> = stats
                .blocks
                .iter()
                .enumerate()
                .filter(|(i, _)| frozen_cache[*i].is_none())
                .map(|(_, b)| b.clone())
                .collect();
            let mut noisy = if live.is_empty() {
                Vec::new()
            } else {
                block_scaled_perturb(&BlockStats::new(live)?, z, rng)?.blocks
            }
            .into_iter();
            let blocks = frozen_cache
                .iter()
                .map(|cached| match cached {
                    Some(b) => b.clone(),
                    None => noisy.next().expect("one noisy block per live block"),
                })
                .collect();
            BlockStats::new(blocks)
        }
    }
}

fn release_block(b: &StatBlock, kind: BlockRelease, z: f64, rng: &mut ChaCha8Rng) -> Result<StatBlock> {
    let values = match kind {
        BlockRelease::Gaussian => gaussian_perturb(&b.values, b.sensitivity, z, rng)?,
        BlockRelease::ClippedGaussian => clip_nonnegative(&gaussian_perturb(&b.values, b.sensitivity, z, rng)?),
        BlockRelease::AnalyzeGauss { psd_floor } => {
            let m = b.to_matrix();
            let noisy = project_psd(&analyze_gauss_perturb(&m, b.sensitivity, z, rng)?, psd_floor)?;
            noisy.transpose().as_slice().to_vec()
        }
    };
    Ok(StatBlock { values, ..b.clone() })
}
